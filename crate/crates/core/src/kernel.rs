//! Concept-label distances and kernel matrices.
//!
//! A kernel matrix `K` weights the Gram matrix of the representations inside
//! the kernelized coding rate. Entries shrink with the distance between the
//! concept labels of two instances and the diagonal is always exactly one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-instance concept annotation.
#[derive(Debug, Clone, PartialEq)]
pub enum ConceptLabels {
    /// Class ids.
    Categorical(Vec<usize>),
    /// One real per instance.
    Continuous(Vec<f64>),
    /// One real vector per instance (n x m).
    Vector(DMatrix<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    Categorical,
    Continuous,
    Vector,
}

impl ConceptLabels {
    pub fn len(&self) -> usize {
        match self {
            ConceptLabels::Categorical(v) => v.len(),
            ConceptLabels::Continuous(v) => v.len(),
            ConceptLabels::Vector(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> LabelKind {
        match self {
            ConceptLabels::Categorical(_) => LabelKind::Categorical,
            ConceptLabels::Continuous(_) => LabelKind::Continuous,
            ConceptLabels::Vector(_) => LabelKind::Vector,
        }
    }

    /// Checks the payload invariants: finite continuous values, at least one
    /// column and no all-NaN row for vector labels.
    pub fn validate(&self) -> Result<()> {
        match self {
            ConceptLabels::Categorical(_) => Ok(()),
            ConceptLabels::Continuous(v) => match v.iter().position(|a| !a.is_finite()) {
                Some(i) => Err(Error::InvalidLabels(format!(
                    "continuous label {i} is not finite ({})",
                    v[i]
                ))),
                None => Ok(()),
            },
            ConceptLabels::Vector(m) => {
                if m.ncols() == 0 {
                    return Err(Error::InvalidLabels("vector labels need m >= 1".into()));
                }
                for (i, row) in m.row_iter().enumerate() {
                    if row.iter().all(|x| x.is_nan()) {
                        return Err(Error::InvalidLabels(format!("vector label row {i} is all NaN")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Labels of the instances at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> ConceptLabels {
        match self {
            ConceptLabels::Categorical(v) => ConceptLabels::Categorical(idx.iter().map(|&i| v[i]).collect()),
            ConceptLabels::Continuous(v) => ConceptLabels::Continuous(idx.iter().map(|&i| v[i]).collect()),
            ConceptLabels::Vector(m) => ConceptLabels::Vector(m.select_rows(idx)),
        }
    }

    fn has_nan(&self) -> bool {
        match self {
            ConceptLabels::Categorical(_) => false,
            ConceptLabels::Continuous(v) => v.iter().any(|x| x.is_nan()),
            ConceptLabels::Vector(m) => m.iter().any(|x| x.is_nan()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Indicator,
    Gaussian,
    Laplace,
    Cauchy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    Absolute,
    Euclidean,
    Cosine,
}

/// Which Gaussian kernel to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaussianForm {
    /// `exp(-d / sigma^2)` with the unsquared distance.
    #[default]
    Unsquared,
    /// `exp(-d^2 / (2 sigma^2))`.
    SquaredExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default = "KernelSpec::default_distance")]
    pub distance: Distance,
    #[serde(default = "KernelSpec::default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub gaussian_form: GaussianForm,
}

impl KernelSpec {
    fn default_distance() -> Distance {
        Distance::Absolute
    }

    fn default_bandwidth() -> f64 {
        1.0
    }

    pub fn indicator() -> Self {
        KernelSpec {
            family: KernelFamily::Indicator,
            distance: Distance::Absolute,
            bandwidth: 1.0,
            gaussian_form: GaussianForm::Unsquared,
        }
    }

    pub fn new(family: KernelFamily, distance: Distance, bandwidth: f64) -> Self {
        KernelSpec {
            family,
            distance,
            bandwidth,
            gaussian_form: GaussianForm::Unsquared,
        }
    }

    pub fn with_gaussian_form(mut self, form: GaussianForm) -> Self {
        self.gaussian_form = form;
        self
    }

    /// Checks that the spec can be applied to labels of the given kind.
    pub fn validate_for(&self, kind: LabelKind) -> Result<()> {
        if self.family != KernelFamily::Indicator && !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "bandwidth must be positive and finite, got {}",
                self.bandwidth
            )));
        }
        match (self.family, kind) {
            (KernelFamily::Indicator, LabelKind::Categorical) => Ok(()),
            (KernelFamily::Indicator, other) => Err(Error::InvalidKernel(format!(
                "indicator kernel requires categorical labels, got {other:?}"
            ))),
            (_, LabelKind::Categorical) => Err(Error::InvalidKernel(format!(
                "{:?} kernel requires continuous or vector labels",
                self.family
            ))),
            (_, kind) => check_metric(kind, self.distance),
        }
    }

    fn eval(&self, d: f64) -> f64 {
        let s = self.bandwidth;
        match self.family {
            KernelFamily::Indicator => unreachable!("indicator kernel has no distance form"),
            KernelFamily::Gaussian => match self.gaussian_form {
                GaussianForm::Unsquared => (-d / (s * s)).exp(),
                GaussianForm::SquaredExponential => (-(d * d) / (2.0 * s * s)).exp(),
            },
            KernelFamily::Laplace => (-d / s).exp(),
            KernelFamily::Cauchy => 1.0 / (1.0 + d * d / (s * s)),
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::new(KernelFamily::Gaussian, Distance::Absolute, 1.0)
    }
}

fn check_metric(kind: LabelKind, metric: Distance) -> Result<()> {
    match (kind, metric) {
        (LabelKind::Continuous, Distance::Absolute) => Ok(()),
        (LabelKind::Vector, Distance::Euclidean | Distance::Cosine) => Ok(()),
        (kind, metric) => Err(Error::InvalidKernel(format!(
            "distance {metric:?} is not defined for {kind:?} labels"
        ))),
    }
}

/// Symmetric n x n similarity matrix over concept labels with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix(DMatrix<f64>);

impl KernelMatrix {
    /// Wraps a matrix after checking symmetry (1e-12), unit diagonal and entries in [0, 1].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!("kernel matrix must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        let n = m.nrows();
        for i in 0..n {
            if m[(i, i)] != 1.0 {
                return Err(Error::InvalidKernel(format!("diagonal entry {i} is {} (must be 1)", m[(i, i)])));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidKernel(format!("entry ({i},{j}) = {v} outside [0, 1]")));
                }
                if (v - m[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidKernel(format!("not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(KernelMatrix(m))
    }

    /// The all-ones kernel `11^T`.
    pub fn ones(n: usize) -> Self {
        KernelMatrix(DMatrix::from_element(n, n, 1.0))
    }

    pub fn identity(n: usize) -> Self {
        KernelMatrix(DMatrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Pairwise label distances. Categorical labels have no distance.
///
/// Cosine distance is `1 - x.y / (|x||y|)`; a zero vector is at distance 1
/// from any nonzero vector and 0 from another zero vector.
pub fn pairwise_distance(labels: &ConceptLabels, metric: Distance) -> Result<DMatrix<f64>> {
    check_metric(labels.kind(), metric)?;
    if labels.has_nan() {
        return Err(Error::InvalidLabels("NaN in concept labels".into()));
    }
    let n = labels.len();
    let mut out = DMatrix::zeros(n, n);
    match labels {
        ConceptLabels::Continuous(a) => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = (a[i] - a[j]).abs();
                    out[(i, j)] = d;
                    out[(j, i)] = d;
                }
            }
        }
        ConceptLabels::Vector(m) => {
            let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
            let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = match metric {
                        Distance::Euclidean => rows[i]
                            .iter()
                            .zip(&rows[j])
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt(),
                        Distance::Cosine => cosine_distance(&rows[i], &rows[j], norms[i], norms[j]),
                        Distance::Absolute => unreachable!(),
                    };
                    out[(i, j)] = d;
                    out[(j, i)] = d;
                }
            }
        }
        ConceptLabels::Categorical(_) => unreachable!("rejected by check_metric"),
    }
    Ok(out)
}

fn cosine_distance(x: &[f64], y: &[f64], nx: f64, ny: f64) -> f64 {
    match (nx == 0.0, ny == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        (false, false) => {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            // rounding can push the cosine slightly outside [-1, 1]
            (1.0 - dot / (nx * ny)).clamp(0.0, 2.0)
        }
    }
}

/// Builds the kernel matrix for `labels` under `spec`.
pub fn build_kernel(labels: &ConceptLabels, spec: &KernelSpec) -> Result<KernelMatrix> {
    spec.validate_for(labels.kind())?;
    let n = labels.len();
    let m = match labels {
        ConceptLabels::Categorical(a) => DMatrix::from_fn(n, n, |i, j| if a[i] == a[j] { 1.0 } else { 0.0 }),
        _ => {
            let mut k = pairwise_distance(labels, spec.distance)?;
            for j in 0..n {
                for i in 0..n {
                    k[(i, j)] = if i == j { 1.0 } else { spec.eval(k[(i, j)]) };
                }
            }
            k
        }
    };
    Ok(KernelMatrix(m))
}
