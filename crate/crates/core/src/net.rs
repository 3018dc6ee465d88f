//! The erasure network and its training loop.
//!
//! `f` is a ReLU MLP followed by a row-wise projection onto the unit sphere.
//! Training minimizes the negated KRaM objective over shuffled minibatches
//! with Adam; each step builds the kernel from that batch's concept labels.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coding_rate::{constraint_sign, rate_distortion, rate_terms, CodingRateParams};
use crate::error::{Error, Result};
use crate::features::{normalize_rows, rows_are_unit, FeatureMatrix, SPHERE_TOLERANCE};
use crate::kernel::{build_kernel, ConceptLabels, KernelSpec};
use crate::mlp::{Activation, Adam, AdamParams, Dense, Mlp, MlpCache, MlpGradients};
use crate::rng::{permutation, seeded, stream};

/// Nonlinear erasure map with unit-sphere output.
#[derive(Debug, Clone, PartialEq)]
pub struct ErasureNetwork {
    mlp: Mlp,
}

/// Intermediate values of one forward pass, consumed by [`ErasureNetwork::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mlp: MlpCache,
    pre_sphere: DMatrix<f64>,
    norms: Vec<f64>,
    output: DMatrix<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }
}

/// Projects each row onto the unit sphere; a zero row maps to `e_1`.
fn sphere_project(h: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut z = h.clone();
    let mut norms = Vec::with_capacity(h.nrows());
    for mut row in z.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        } else {
            row.fill(0.0);
            row[0] = 1.0;
        }
        norms.push(norm);
    }
    (z, norms)
}

impl ErasureNetwork {
    /// `d_in -> hidden... -> d_out` with ReLU between layers.
    pub fn new(d_in: usize, hidden: &[usize], d_out: usize, seed: u64) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(d_in);
        dims.extend_from_slice(hidden);
        dims.push(d_out);
        let mut rng = seeded(seed, stream::NET_INIT);
        Ok(ErasureNetwork {
            mlp: Mlp::new(&dims, &mut rng)?,
        })
    }

    /// Single square linear layer initialized to the identity.
    pub fn identity(d: usize) -> Self {
        ErasureNetwork {
            mlp: Mlp {
                layers: vec![Dense {
                    weights: DMatrix::identity(d, d),
                    bias: DVector::zeros(d),
                    activation: Activation::Identity,
                }],
            },
        }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Shape("consecutive layer dimensions do not chain".into()));
            }
        }
        Ok(ErasureNetwork { mlp: Mlp { layers } })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.mlp.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.mlp.layers
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// `Z = f(X)` with unit-norm rows.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<FeatureMatrix> {
        Ok(self.forward_cached(x)?.output.clone()).and_then(FeatureMatrix::sphere)
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        let (pre_sphere, mlp) = self.mlp.forward_cached(x)?;
        if let Some(v) = pre_sphere.iter().find(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: 0,
                reason: format!("non-finite activation {v}"),
            });
        }
        let (output, norms) = sphere_project(&pre_sphere);
        Ok(ForwardCache {
            mlp,
            pre_sphere,
            norms,
            output,
        })
    }

    /// Parameter gradients for an upstream gradient on `Z`, applying the
    /// sphere Jacobian `(I - z z^T) / |h|` row by row.
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<MlpGradients> {
        if upstream.shape() != cache.output.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, output is {:?}",
                upstream.shape(),
                cache.output.shape()
            )));
        }
        let mut grad_h = DMatrix::zeros(upstream.nrows(), upstream.ncols());
        for i in 0..upstream.nrows() {
            let norm = cache.norms[i];
            if norm == 0.0 {
                continue;
            }
            let z = cache.output.row(i);
            let g = upstream.row(i);
            let dot = z.dot(&g);
            grad_h.set_row(i, &((g - z * dot) / norm));
        }
        debug_assert_eq!(grad_h.shape(), cache.pre_sphere.shape());
        self.mlp.backward(&cache.mlp, &grad_h)
    }

    pub fn parameters_finite(&self) -> bool {
        self.mlp.parameters_finite()
    }

    fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }
}

/// Which objective the trainer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `-R(Z|K) + lambda |R(Z) - b|`.
    #[default]
    Kram,
    /// `-R(Z|K)`: kernel term only.
    KernelOnly,
    /// `-(R(Z|K) - R(Z))`: also shrinks the overall volume.
    Shrink,
}

/// Where the constraint target `b` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetBits {
    /// `R(X_batch)` of the current normalized input batch.
    #[default]
    PerBatch,
    /// `R` of one seeded batch-sized sample of the normalized inputs, computed once.
    GlobalSample,
    /// A fixed number of bits.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KramConfig {
    #[serde(default = "KramConfig::default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub target_bits: TargetBits,
    #[serde(default = "KramConfig::default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "KramConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "KramConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "KramConfig::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub adam: AdamParams,
    /// Hidden widths; `None` means one hidden layer of width `2 d_in`.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    /// Output width; `None` means `d_in`.
    #[serde(default)]
    pub output_dim: Option<usize>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub seed: u64,
}

impl KramConfig {
    fn default_lambda() -> f64 {
        0.5
    }
    fn default_epsilon() -> f64 {
        0.5
    }
    fn default_epochs() -> usize {
        10
    }
    fn default_batch_size() -> usize {
        256
    }
    fn default_learning_rate() -> f64 {
        1e-3
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if let TargetBits::Fixed(b) = self.target_bits {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("fixed target bits must be >= 0, got {b}")));
            }
        }
        if let Some(h) = &self.hidden {
            if h.contains(&0) {
                return Err(Error::Config("hidden layer widths must be positive".into()));
            }
        }
        if self.output_dim == Some(0) {
            return Err(Error::Config("output_dim must be positive".into()));
        }
        Ok(())
    }
}

impl Default for KramConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// One optimizer step, values in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub r_z: f64,
    pub r_zk: f64,
    pub loss: f64,
    pub constraint: f64,
    pub wall_ms: f64,
    /// Target `b` used at this step (not part of the CSV layout).
    pub target_bits: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub steps: Vec<StepRecord>,
    pub steps_per_epoch: usize,
}

pub const TRACE_HEADER: &str = "step,r_z,r_zk,loss,constraint,wall_ms";

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{},{},{}\n", s.step, s.r_z, s.r_zk, s.loss, s.constraint, s.wall_ms));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Records of the last complete epoch.
    pub fn final_epoch(&self) -> &[StepRecord] {
        let k = self.steps_per_epoch.min(self.steps.len());
        &self.steps[self.steps.len() - k..]
    }

    pub fn first(&self) -> Option<&StepRecord> {
        self.steps.first()
    }
}

fn mean_of(records: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    records.iter().map(f).sum::<f64>() / records.len().max(1) as f64
}

impl TrainingTrace {
    pub fn final_epoch_mean_r_z(&self) -> f64 {
        mean_of(self.final_epoch(), |s| s.r_z)
    }

    pub fn final_epoch_mean_r_zk(&self) -> f64 {
        mean_of(self.final_epoch(), |s| s.r_zk)
    }

    pub fn final_epoch_mean_constraint(&self) -> f64 {
        mean_of(self.final_epoch(), |s| s.constraint)
    }

    pub fn final_epoch_mean_target(&self) -> f64 {
        mean_of(self.final_epoch(), |s| s.target_bits)
    }
}

#[cfg(not(target_arch = "wasm32"))]
struct Stopwatch(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch(std::time::Instant::now())
    }
    fn elapsed_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[cfg(target_arch = "wasm32")]
struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch
    }
    fn elapsed_ms(&self) -> f64 {
        0.0
    }
}

/// Stateful trainer; keeps the partial trace when a step fails.
pub struct Trainer {
    inputs: DMatrix<f64>,
    labels: ConceptLabels,
    cfg: KramConfig,
    params: CodingRateParams,
    net: ErasureNetwork,
    adam: Adam,
    trace: TrainingTrace,
    fixed_target: Option<f64>,
    epoch: usize,
    shuffle: crate::rng::SeededRng,
}

impl Trainer {
    /// Validates inputs, normalizes the rows of `x` and initializes the network.
    pub fn new(x: &DMatrix<f64>, labels: &ConceptLabels, cfg: &KramConfig) -> Result<Self> {
        cfg.validate()?;
        labels.validate()?;
        cfg.kernel.validate_for(labels.kind())?;
        let n = x.nrows();
        if labels.len() != n {
            return Err(Error::Shape(format!("{} label rows for {} feature rows", labels.len(), n)));
        }
        if cfg.batch_size > n {
            return Err(Error::Config(format!("batch_size {} exceeds n = {n}", cfg.batch_size)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("input features contain non-finite values".into()));
        }
        let inputs = normalize_rows(x);
        let d = x.ncols();
        let hidden = cfg.hidden.clone().unwrap_or_else(|| vec![2 * d]);
        let net = ErasureNetwork::new(d, &hidden, cfg.output_dim.unwrap_or(d), cfg.seed)?;
        let adam = Adam::new(&net.mlp, cfg.learning_rate, cfg.adam);
        let params = CodingRateParams::new(cfg.epsilon)?;
        let fixed_target = match cfg.target_bits {
            TargetBits::PerBatch => None,
            TargetBits::Fixed(b) => Some(b),
            TargetBits::GlobalSample => {
                let mut rng = seeded(cfg.seed, stream::TARGET_SAMPLE);
                let idx = &permutation(n, &mut rng)[..cfg.batch_size];
                Some(rate_distortion(&inputs.select_rows(idx), &params)?)
            }
        };
        Ok(Trainer {
            inputs,
            labels: labels.clone(),
            cfg: cfg.clone(),
            params,
            net,
            adam,
            trace: TrainingTrace {
                steps: Vec::new(),
                steps_per_epoch: n / cfg.batch_size,
            },
            fixed_target,
            epoch: 0,
            shuffle: seeded(cfg.seed, stream::SHUFFLE),
        })
    }

    pub fn network(&self) -> &ErasureNetwork {
        &self.net
    }

    pub fn trace(&self) -> &TrainingTrace {
        &self.trace
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &KramConfig {
        &self.cfg
    }

    /// One pass over a fresh shuffle; the short remainder batch is dropped.
    pub fn run_epoch(&mut self) -> Result<()> {
        let n = self.inputs.nrows();
        let b = self.cfg.batch_size;
        let order = permutation(n, &mut self.shuffle);
        let mut last_output = None;
        for batch in order.chunks_exact(b) {
            last_output = Some(self.step(batch)?);
        }
        if let Some(z) = last_output {
            if !rows_are_unit(&z, SPHERE_TOLERANCE) {
                return Err(Error::Divergence {
                    step: self.trace.steps.len(),
                    reason: "sphere invariant violated".into(),
                });
            }
        }
        self.epoch += 1;
        Ok(())
    }

    /// Runs the remaining configured epochs.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    fn step(&mut self, batch: &[usize]) -> Result<DMatrix<f64>> {
        let step = self.trace.steps.len();
        let watch = Stopwatch::start();
        let xb = self.inputs.select_rows(batch);
        let kb = build_kernel(&self.labels.select(batch), &self.cfg.kernel)?;
        let cache = self.net.forward_cached(&xb).map_err(|e| match e {
            Error::Divergence { reason, .. } => Error::Divergence { step, reason },
            other => other,
        })?;
        let z = cache.output();
        let terms = rate_terms(z, &kb, &self.params)?;
        let target = match self.fixed_target {
            Some(b) => b,
            None => rate_distortion(&xb, &self.params)?,
        };
        let constraint = (terms.r_z - target).abs();
        let (loss, grad) = match self.cfg.objective {
            Objective::Kram => {
                let s = self.cfg.lambda * constraint_sign(terms.r_z, target);
                (-terms.r_zk + self.cfg.lambda * constraint, -&terms.grad_r_zk + &terms.grad_r_z * s)
            }
            Objective::KernelOnly => (-terms.r_zk, -terms.grad_r_zk.clone()),
            Objective::Shrink => (-terms.r_zk + terms.r_z, &terms.grad_r_z - &terms.grad_r_zk),
        };
        if !loss.is_finite() || !terms.r_z.is_finite() || !terms.r_zk.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("non-finite loss {loss}"),
            });
        }
        let grads = self.net.backward(&cache, &grad)?;
        self.adam.step(self.net.mlp_mut(), &grads);
        if !self.net.parameters_finite() {
            return Err(Error::Divergence {
                step,
                reason: "non-finite parameters after update".into(),
            });
        }
        self.trace.steps.push(StepRecord {
            step,
            r_z: terms.r_z,
            r_zk: terms.r_zk,
            loss,
            constraint,
            wall_ms: watch.elapsed_ms(),
            target_bits: target,
        });
        Ok(cache.output)
    }

    pub fn into_parts(self) -> (ErasureNetwork, TrainingTrace) {
        (self.net, self.trace)
    }
}

/// Trains an erasure network on `(x, labels)` for `cfg.epochs` epochs.
pub fn train(x: &DMatrix<f64>, labels: &ConceptLabels, cfg: &KramConfig) -> Result<(ErasureNetwork, TrainingTrace)> {
    let mut trainer = Trainer::new(x, labels, cfg)?;
    trainer.run()?;
    Ok(trainer.into_parts())
}

/// Applies a trained network to raw features (rows are normalized first).
pub fn erase(net: &ErasureNetwork, x: &DMatrix<f64>) -> Result<FeatureMatrix> {
    net.forward(&normalize_rows(x))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"KRAM";
const CHECKPOINT_VERSION: u32 = 1;

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 1,
        Activation::Identity => 0,
    }
}

/// Serializes the network and a JSON echo of the training config.
///
/// Layout (little-endian): `KRAM`, version u32, layer count u32, per layer
/// (out u64, in u64, activation u8); then every layer's weights row-major as
/// f64, then every layer's biases; then the config as u64 length + UTF-8 JSON.
pub fn checkpoint_bytes(net: &ErasureNetwork, cfg: &KramConfig) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.output_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(l.input_dim() as u64).to_le_bytes());
        out.push(activation_tag(l.activation));
    }
    for l in net.layers() {
        for row in l.weights.row_iter() {
            for v in row.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for l in net.layers() {
        for v in l.bias.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(cfg)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn save_checkpoint(path: &Path, net: &ErasureNetwork, cfg: &KramConfig) -> Result<()> {
    let bytes = checkpoint_bytes(net, cfg)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ErasureNetwork, KramConfig)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|msg| Error::format(path, msg))
}

pub fn parse_checkpoint(bytes: &[u8]) -> std::result::Result<(ErasureNetwork, KramConfig), String> {
    let mut r = crate::io::ByteReader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err("bad magic (expected KRAM)".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = r.u32()? as usize;
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        let out = r.u64()? as usize;
        let inp = r.u64()? as usize;
        let act = match r.u8()? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            t => return Err(format!("unknown activation tag {t}")),
        };
        dims.push((out, inp, act));
    }
    let mut layers = Vec::with_capacity(count);
    for &(out, inp, activation) in &dims {
        let vals = r.f64s(out * inp)?;
        layers.push(Dense {
            weights: DMatrix::from_row_slice(out, inp, &vals),
            bias: DVector::zeros(out),
            activation,
        });
    }
    for layer in layers.iter_mut() {
        let out = layer.output_dim();
        layer.bias = DVector::from_vec(r.f64s(out)?);
    }
    let len = r.u64()? as usize;
    let cfg: KramConfig = serde_json::from_slice(r.take(len)?).map_err(|e| format!("config echo: {e}"))?;
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.remaining()));
    }
    let net = ErasureNetwork::from_layers(layers).map_err(|e| e.to_string())?;
    Ok((net, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_matrix;

    #[test]
    fn outputs_are_unit_norm() {
        let net = ErasureNetwork::new(4, &[8], 3, 1).unwrap();
        let x = normal_matrix(10, 4, &mut seeded(1, 1));
        let z = net.forward(&x).unwrap();
        assert!(z.is_sphere_normalized());
        assert!(rows_are_unit(z.matrix(), 1e-9));
    }

    #[test]
    fn identity_network_is_a_no_op_on_unit_rows() {
        let x = normalize_rows(&normal_matrix(6, 5, &mut seeded(2, 1)));
        let z = ErasureNetwork::identity(5).forward(&x).unwrap();
        assert!((z.matrix() - &x).amax() < 1e-9);
    }

    #[test]
    fn zero_pre_activation_maps_to_first_basis_vector() {
        let z = ErasureNetwork::identity(3).forward(&DMatrix::zeros(1, 3)).unwrap();
        assert_eq!(z.matrix().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_is_replayable() {
        let x = normal_matrix(8, 4, &mut seeded(5, 1));
        let a = ErasureNetwork::new(4, &[6], 4, 9).unwrap().forward(&x).unwrap();
        let b = ErasureNetwork::new(4, &[6], 4, 9).unwrap().forward(&x).unwrap();
        assert_eq!(a.to_row_major(), b.to_row_major());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = ErasureNetwork::new(3, &[4], 2, 0).unwrap();
        let x = normal_matrix(5, 3, &mut seeded(0, 1));
        let cache = net.forward_cached(&x).unwrap();
        let g = net.backward(&cache, &DMatrix::zeros(5, 2)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let a = ErasureNetwork::new(3, &[4], 3, 0).unwrap();
        let b = ErasureNetwork::identity(3);
        let x = normal_matrix(2, 3, &mut seeded(0, 1));
        let cache = b.forward_cached(&x).unwrap();
        assert!(matches!(a.backward(&cache, &DMatrix::zeros(2, 3)), Err(Error::CacheMismatch)));
    }

    #[test]
    fn linear_layer_gradient_has_closed_form() {
        // f(x) = sphere(W x + b); upstream G gives dW = P^T X with P the projected upstream.
        let net = ErasureNetwork::identity(3);
        let x = normal_matrix(4, 3, &mut seeded(3, 1));
        let upstream = normal_matrix(4, 3, &mut seeded(4, 1));
        let cache = net.forward_cached(&x).unwrap();
        let g = net.backward(&cache, &upstream).unwrap();
        let mut projected = DMatrix::zeros(4, 3);
        for i in 0..4 {
            let h = x.row(i);
            let norm = h.norm();
            let z = h / norm;
            let u = upstream.row(i);
            let s = z.dot(&u);
            projected.set_row(i, &((u - z * s) / norm));
        }
        assert!((&g.weights[0] - projected.transpose() * &x).amax() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = KramConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let x = normal_matrix(5, 2, &mut seeded(0, 0));
        let labels = ConceptLabels::Continuous(vec![0.0; 5]);
        let cfg = KramConfig {
            batch_size: 6,
            ..KramConfig::default()
        };
        assert!(Trainer::new(&x, &labels, &cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_truncation() {
        let net = ErasureNetwork::new(3, &[5], 2, 4).unwrap();
        let cfg = KramConfig::default();
        let bytes = checkpoint_bytes(&net, &cfg).unwrap();
        let (back, cfg_back) = parse_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(cfg_back, cfg);
        assert!(parse_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(parse_checkpoint(b"NOPE").is_err());
    }
}
