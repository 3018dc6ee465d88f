//! Synthetic datasets.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ConceptLabels;
use crate::rng::{normal_matrix, seeded, standard_normal, stream, uniform_matrix};

/// Optional downstream task labels.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskLabels {
    Categorical(Vec<usize>),
    Continuous(Vec<f64>),
}

impl TaskLabels {
    pub fn len(&self) -> usize {
        match self {
            TaskLabels::Categorical(v) => v.len(),
            TaskLabels::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_concept(&self) -> ConceptLabels {
        match self {
            TaskLabels::Categorical(v) => ConceptLabels::Categorical(v.clone()),
            TaskLabels::Continuous(v) => ConceptLabels::Continuous(v.clone()),
        }
    }
}

/// How a dataset came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(generator: &str, seed: Option<u64>) -> Self {
        Provenance {
            generator: generator.to_string(),
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub concept: ConceptLabels,
    pub task: Option<TaskLabels>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, concept: ConceptLabels, task: Option<TaskLabels>, provenance: Provenance) -> Result<Self> {
        let n = features.nrows();
        if concept.len() != n {
            return Err(Error::Shape(format!("{} concept labels for {n} rows", concept.len())));
        }
        if let Some(t) = &task {
            if t.len() != n {
                return Err(Error::Shape(format!("{} task labels for {n} rows", t.len())));
            }
        }
        concept.validate()?;
        Ok(Dataset {
            features,
            concept,
            task,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }
}

/// `a ~ U(0, 1)`, `x ~ N(a 1_d, a I_d)`; the concept is `a`.
pub fn gen_synthetic_continuous(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d < 1 {
        return Err(Error::InvalidArgument(format!("need n >= 2 and d >= 1, got n = {n}, d = {d}")));
    }
    let mut rng = seeded(seed, stream::DATA);
    let mut concept = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let a: f64 = rng.random();
        let sd = a.sqrt();
        for _ in 0..d {
            data.push(a + sd * standard_normal(&mut rng));
        }
        concept.push(a);
    }
    let prov = Provenance::new("synthetic-continuous", Some(seed)).with("n", n).with("d", d);
    Dataset::new(
        DMatrix::from_row_slice(n, d, &data),
        ConceptLabels::Continuous(concept),
        None,
        prov,
    )
}

/// Two unit-covariance Gaussians at (0, 2) and (0, -2), n/2 points each.
/// The concept is the y coordinate and the task label the component id.
pub fn gen_two_gaussians(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("n must be even and >= 2, got {n}")));
    }
    let mut rng = seeded(seed, stream::DATA);
    let mut data = Vec::with_capacity(2 * n);
    let mut component = Vec::with_capacity(n);
    for i in 0..n {
        let c = usize::from(i >= n / 2);
        let cy = if c == 0 { 2.0 } else { -2.0 };
        data.push(standard_normal(&mut rng));
        data.push(cy + standard_normal(&mut rng));
        component.push(c);
    }
    let features = DMatrix::from_row_slice(n, 2, &data);
    let concept = features.column(1).iter().copied().collect();
    let prov = Provenance::new("two-gaussians", Some(seed)).with("n", n);
    Dataset::new(
        features,
        ConceptLabels::Continuous(concept),
        Some(TaskLabels::Categorical(component)),
        prov,
    )
}

/// Uniform `[-1, 1)^d` features with labels from a random two-layer linear net.
pub fn gen_uniform_labeled(n: usize, d: usize, m: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d < 1 {
        return Err(Error::InvalidArgument(format!("need n >= 2 and d >= 1, got n = {n}, d = {d}")));
    }
    let features = uniform_matrix(n, d, &mut seeded(seed, stream::DATA)).map(|v| 2.0 * v - 1.0);
    let labels = gen_label_from_random_net(&features, m, seed)?;
    let prov = Provenance::new("uniform", Some(seed)).with("n", n).with("d", d).with("m", m);
    Dataset::new(features, ConceptLabels::Categorical(labels), None, prov)
}

/// `sign(X W2 W1)` as {0, 1} labels with `W2: d x m`, `W1: m x 1` standard
/// normal; a zero score is class 1.
pub fn gen_label_from_random_net(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m < 1 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let mut rng = seeded(seed, stream::LABEL_WEIGHTS);
    let w2 = normal_matrix(x.ncols(), m, &mut rng);
    let w1 = normal_matrix(m, 1, &mut rng);
    let scores = (x * w2) * w1;
    Ok(scores.iter().map(|&s| usize::from(s >= 0.0)).collect())
}

/// Pairs of standard normals with correlation `rho`, as two n x 1 matrices.
pub fn gen_correlated_gaussians(n: usize, rho: f64, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("correlation must be in [-1, 1], got {rho}")));
    }
    let mut rng = seeded(seed, stream::DATA);
    let mut xs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let s = (1.0 - rho * rho).sqrt();
    for _ in 0..n {
        let a = standard_normal(&mut rng);
        let b = standard_normal(&mut rng);
        xs.push(a);
        zs.push(rho * a + s * b);
    }
    Ok((DMatrix::from_vec(n, 1, xs), DMatrix::from_vec(n, 1, zs)))
}
