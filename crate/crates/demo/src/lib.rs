//! Browser bindings for three small interactive views: a kernel heatmap,
//! coding-rate bounds on random sphere points, and a step-by-step erasure
//! run on two Gaussian blobs.

use erasekit::coding_rate::{kernelized_rate_distortion, rate_distortion, upper_bound, CodingRateParams};
use erasekit::datagen::gen_two_gaussians;
use erasekit::features::normalize_rows;
use erasekit::harness::eigen_mass;
use erasekit::kernel::{build_kernel, ConceptLabels, Distance, KernelFamily, KernelSpec};
use erasekit::net::{erase, KramConfig, Trainer};
use erasekit::rng::{normal_matrix, seeded};
use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn family(name: &str) -> Result<KernelFamily, JsError> {
    match name {
        "gaussian" => Ok(KernelFamily::Gaussian),
        "laplace" => Ok(KernelFamily::Laplace),
        "cauchy" => Ok(KernelFamily::Cauchy),
        "indicator" => Ok(KernelFamily::Indicator),
        other => Err(JsError::new(&format!("unknown kernel family '{other}'"))),
    }
}

fn spec(name: &str, bandwidth: f64) -> Result<KernelSpec, JsError> {
    let f = family(name)?;
    Ok(if f == KernelFamily::Indicator {
        KernelSpec::indicator()
    } else {
        KernelSpec::new(f, Distance::Absolute, bandwidth)
    })
}

/// Row-major `n x n` kernel over scalar labels. The indicator kernel
/// rounds labels to the nearest non-negative integer class.
#[wasm_bindgen]
pub fn kernel_matrix(labels: &[f64], family: &str, bandwidth: f64) -> Result<Vec<f64>, JsError> {
    let spec = spec(family, bandwidth)?;
    let labels = if spec.family == KernelFamily::Indicator {
        ConceptLabels::Categorical(labels.iter().map(|v| v.round().max(0.0) as usize).collect())
    } else {
        ConceptLabels::Continuous(labels.to_vec())
    };
    let k = build_kernel(&labels, &spec).map_err(js_err)?;
    let m = k.matrix();
    let n = m.nrows();
    Ok((0..n * n).map(|i| m[(i / n, i % n)]).collect())
}

/// `[R(Z), R(Z|K), upper bound]` in bits for `n` random unit vectors in
/// `R^d`, with labels evenly spaced in `[0, 1]`.
#[wasm_bindgen]
pub fn coding_rate_bounds(n: usize, d: usize, epsilon: f64, family: &str, bandwidth: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    if n < 2 || d < 1 {
        return Err(JsError::new("need n >= 2 and d >= 1"));
    }
    let params = CodingRateParams::new(epsilon).map_err(js_err)?;
    let z = normalize_rows(&normal_matrix(n, d, &mut seeded(seed, 0)));
    let spec = spec(family, bandwidth)?;
    let labels = if spec.family == KernelFamily::Indicator {
        ConceptLabels::Categorical((0..n).map(|i| i % 2).collect())
    } else {
        ConceptLabels::Continuous((0..n).map(|i| i as f64 / (n - 1) as f64).collect())
    };
    let k = build_kernel(&labels, &spec).map_err(js_err)?;
    Ok(vec![
        rate_distortion(&z, &params).map_err(js_err)?,
        kernelized_rate_distortion(&z, &k, &params).map_err(js_err)?,
        upper_bound(n, d, &params),
    ])
}

/// Erasure of the vertical coordinate from two Gaussian blobs, advanced one
/// epoch at a time.
#[wasm_bindgen]
pub struct TwoGaussianErasure {
    x: DMatrix<f64>,
    trainer: Trainer,
}

#[wasm_bindgen]
impl TwoGaussianErasure {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, lambda: f64, bandwidth: f64, learning_rate: f64, seed: u64) -> Result<TwoGaussianErasure, JsError> {
        let ds = gen_two_gaussians(n, seed).map_err(js_err)?;
        let cfg = KramConfig {
            lambda,
            learning_rate,
            batch_size: 128.min(n),
            hidden: Some(vec![32, 32]),
            kernel: KernelSpec::new(KernelFamily::Gaussian, Distance::Absolute, bandwidth),
            seed,
            ..KramConfig::default()
        };
        let trainer = Trainer::new(&ds.features, &ds.concept, &cfg).map_err(js_err)?;
        Ok(TwoGaussianErasure { x: ds.features, trainer })
    }

    /// Runs one epoch and returns `[R(Z), R(Z|K)]` averaged over it.
    pub fn step(&mut self) -> Result<Vec<f64>, JsError> {
        self.trainer.run_epoch().map_err(js_err)?;
        let trace = self.trainer.trace();
        let last = &trace.steps[trace.steps.len() - trace.steps_per_epoch..];
        let mean = |f: fn(&erasekit::net::StepRecord) -> f64| last.iter().map(f).sum::<f64>() / last.len() as f64;
        Ok(vec![mean(|s| s.r_z), mean(|s| s.r_zk)])
    }

    pub fn epochs(&self) -> usize {
        self.trainer.epochs_done()
    }

    /// Original points, row-major `[x0, y0, x1, y1, ...]`.
    pub fn original(&self) -> Vec<f64> {
        row_major(&self.x)
    }

    /// Current erased points on the unit circle, row-major.
    pub fn erased(&self) -> Result<Vec<f64>, JsError> {
        let z = erase(self.trainer.network(), &self.x).map_err(js_err)?;
        Ok(z.to_row_major())
    }

    /// Fractions of variance along the principal axes of the erased points.
    pub fn eigen_mass(&self) -> Result<Vec<f64>, JsError> {
        let z = erase(self.trainer.network(), &self.x).map_err(js_err)?;
        eigen_mass(z.matrix()).map_err(js_err)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}
