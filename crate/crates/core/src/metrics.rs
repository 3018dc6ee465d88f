//! Post-erasure evaluation: probes and group-fairness gaps.
//!
//! A probe is a small supervised model trained on an 80/20 split of `Z` to
//! predict a label. Classification reports test accuracy; regression reports
//! test MSE on min-max normalized targets, per target dimension and averaged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ConceptLabels;
use crate::mlp::{Adam, AdamParams, Mlp};
use crate::rng::{permutation, seeded, stream, SeededRng};

pub const MIN_PROBE_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Linear,
    Mlp,
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeKind::Linear),
            "mlp" => Ok(ProbeKind::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown probe kind '{other}' (linear, mlp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTargetKind {
    CategoricalAccuracy,
    RegressionMse,
}

/// Training settings shared by both probe kinds. Linear regression probes are
/// solved in closed form and ignore the optimizer fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Relative training-loss improvement that counts as progress.
    pub tolerance: f64,
    /// Epochs without progress before stopping.
    pub patience: usize,
    pub test_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 100,
            max_epochs: 200,
            batch_size: 200,
            learning_rate: 1e-3,
            tolerance: 1e-5,
            patience: 10,
            test_fraction: 0.2,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("probe hidden, max_epochs, batch_size and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::Config("probe learning_rate must be > 0 and tolerance >= 0".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("probe test_fraction must be in (0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }
}

/// Test-split predictions of a probe.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeOutput {
    /// Predicted class ids (original label values) and per-class
    /// probabilities, columns ordered like `classes`.
    Classes {
        classes: Vec<usize>,
        predicted: Vec<usize>,
        probabilities: DMatrix<f64>,
    },
    /// Predictions in normalized target units, one column per dimension.
    Values(DMatrix<f64>),
}

impl ProbeOutput {
    /// One real prediction per test point: the probability of the second
    /// class for binary tasks, the class position for larger label sets and
    /// the mean over dimensions for regression.
    pub fn scalar_predictions(&self) -> Vec<f64> {
        match self {
            ProbeOutput::Classes {
                classes,
                predicted,
                probabilities,
            } => {
                if classes.len() == 2 {
                    probabilities.column(1).iter().copied().collect()
                } else {
                    predicted
                        .iter()
                        .map(|c| classes.iter().position(|k| k == c).unwrap_or(0) as f64)
                        .collect()
                }
            }
            ProbeOutput::Values(v) => v.row_iter().map(|r| r.mean()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: ProbeKind,
    pub target: ProbeTargetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub metric: f64,
    pub per_dimension: Vec<f64>,
    pub epochs: usize,
    #[serde(skip)]
    pub test_indices: Vec<usize>,
    #[serde(skip)]
    pub test_output: Option<ProbeOutput>,
}

struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn split(n: usize, test_fraction: f64, rng: &mut SeededRng) -> Split {
    let perm = permutation(n, rng);
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    Split {
        test: perm[..n_test].to_vec(),
        train: perm[n_test..].to_vec(),
    }
}

/// Column-wise z-scoring with statistics from the training rows. Columns with
/// negligible spread are only centered.
fn standardizer(train: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = train.nrows() as f64;
    let mean = DVector::from_iterator(train.ncols(), train.column_iter().map(|c| c.sum() / n));
    let scale = DVector::from_iterator(
        train.ncols(),
        train.column_iter().zip(mean.iter()).map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if sd < 1e-10 {
                1.0
            } else {
                sd
            }
        }),
    );
    (mean, scale)
}

fn apply_standardizer(x: &DMatrix<f64>, (mean, scale): &(DVector<f64>, DVector<f64>)) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.apply(|v| *v = (*v - mean[j]) / scale[j]);
    }
    out
}

/// Min-max scaling of each target column to [0, 1]; constant columns map to 0.
fn min_max_normalize(t: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = t.clone();
    for mut col in out.column_iter_mut() {
        let lo = col.min();
        let hi = col.max();
        let range = hi - lo;
        col.apply(|v| *v = if range > 0.0 { (*v - lo) / range } else { 0.0 });
    }
    out
}

fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row.apply(|v| *v /= s);
    }
    p
}

enum Loss<'a> {
    CrossEntropy(&'a [usize]),
    Squared(&'a DMatrix<f64>),
}

/// Mean loss over the batch rows and its gradient w.r.t. the network output.
fn loss_and_grad(out: &DMatrix<f64>, loss: &Loss, rows: &[usize]) -> (f64, DMatrix<f64>) {
    let b = rows.len() as f64;
    match loss {
        Loss::CrossEntropy(labels) => {
            let mut p = softmax_rows(out);
            let mut total = 0.0;
            for (r, &i) in rows.iter().enumerate() {
                total -= p[(r, labels[i])].max(1e-300).ln();
                p[(r, labels[i])] -= 1.0;
            }
            (total / b, p / b)
        }
        Loss::Squared(t) => {
            let m = t.ncols() as f64;
            let diff = out - t.select_rows(rows);
            (diff.norm_squared() / (b * m), diff * (2.0 / (b * m)))
        }
    }
}

/// Minibatch Adam with per-epoch shuffling and plateau stopping on the
/// training loss. Returns the number of epochs run.
fn fit(mlp: &mut Mlp, x: &DMatrix<f64>, loss: &Loss, cfg: &ProbeConfig, rng: &mut SeededRng) -> Result<usize> {
    let n = x.nrows();
    let mut adam = Adam::new(mlp, cfg.learning_rate, AdamParams::default());
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let order = permutation(n, rng);
        let mut total = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(rows);
            let (out, cache) = mlp.forward_cached(&xb)?;
            let (l, g) = loss_and_grad(&out, loss, rows);
            let grads = mlp.backward(&cache, &g)?;
            adam.step(mlp, &grads);
            total += l * rows.len() as f64;
        }
        let epoch_loss = total / n as f64;
        if !epoch_loss.is_finite() || !mlp.parameters_finite() {
            return Err(Error::Divergence {
                step: epoch,
                reason: "probe loss is not finite".into(),
            });
        }
        if epoch_loss > best * (1.0 - cfg.tolerance) {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
        if stale >= cfg.patience {
            return Ok(epoch);
        }
    }
    Ok(cfg.max_epochs)
}

/// Ridge-stabilized least squares with an intercept column.
fn least_squares(x: &DMatrix<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
    let a = x.clone().insert_column(x.ncols(), 1.0);
    let mut ata = a.transpose() * &a;
    let ridge = 1e-8 * (ata.trace() / ata.nrows() as f64).max(1.0);
    for i in 0..ata.nrows() {
        ata[(i, i)] += ridge;
    }
    let aty = a.transpose() * t;
    match ata.clone().cholesky() {
        Some(c) => c.solve(&aty),
        None => ata.pseudo_inverse(1e-12).map(|p| p * aty).unwrap_or_else(|_| DMatrix::zeros(a.ncols(), t.ncols())),
    }
}

fn predict_linear(w: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(x.ncols(), 1.0) * w
}

/// Trains a probe on a seeded 80/20 split and scores it on the held-out rows.
pub fn train_probe(z: &DMatrix<f64>, targets: &ConceptLabels, kind: ProbeKind, split_seed: u64, cfg: &ProbeConfig) -> Result<ProbeReport> {
    cfg.validate()?;
    let n = z.nrows();
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} rows", targets.len())));
    }
    if n < MIN_PROBE_SAMPLES {
        return Err(Error::InvalidArgument(format!("probes need at least {MIN_PROBE_SAMPLES} samples, got {n}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("probe inputs must be finite".into()));
    }
    targets.validate()?;
    let mut rng = seeded(split_seed, stream::PROBE);

    match targets {
        ConceptLabels::Categorical(labels) => {
            let mut classes = labels.clone();
            classes.sort_unstable();
            classes.dedup();
            let index: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
            let covers = |s: &Split| {
                let mut seen = vec![false; classes.len()];
                s.train.iter().for_each(|&i| seen[index[i]] = true);
                seen.iter().all(|&b| b)
            };
            let mut sp = split(n, cfg.test_fraction, &mut rng);
            if !covers(&sp) {
                sp = split(n, cfg.test_fraction, &mut rng);
                if !covers(&sp) {
                    return Err(Error::InvalidLabels("a class is absent from the probe training split".into()));
                }
            }
            let stats = standardizer(&z.select_rows(&sp.train));
            let xs = apply_standardizer(z, &stats);
            let x_train = xs.select_rows(&sp.train);
            let x_test = xs.select_rows(&sp.test);
            let c = classes.len();
            let (probabilities, epochs) = if c == 1 {
                (DMatrix::from_element(sp.test.len(), 1, 1.0), 0)
            } else {
                let train_labels: Vec<usize> = sp.train.iter().map(|&i| index[i]).collect();
                let dims = match kind {
                    ProbeKind::Linear => vec![z.ncols(), c],
                    ProbeKind::Mlp => vec![z.ncols(), cfg.hidden, c],
                };
                let mut mlp = Mlp::new(&dims, &mut rng)?;
                let epochs = fit(&mut mlp, &x_train, &Loss::CrossEntropy(&train_labels), cfg, &mut rng)?;
                (softmax_rows(&mlp.forward(&x_test)?), epochs)
            };
            let predicted: Vec<usize> = probabilities
                .row_iter()
                .map(|r| classes[r.iter().enumerate().fold(0, |best, (j, &p)| if p > r[best] { j } else { best })])
                .collect();
            let correct = sp.test.iter().zip(&predicted).filter(|&(&i, p)| labels[i] == *p).count();
            let acc = correct as f64 / sp.test.len() as f64;
            Ok(ProbeReport {
                probe: kind,
                target: ProbeTargetKind::CategoricalAccuracy,
                n_train: sp.train.len(),
                n_test: sp.test.len(),
                metric: acc,
                per_dimension: vec![acc],
                epochs,
                test_indices: sp.test,
                test_output: Some(ProbeOutput::Classes {
                    classes,
                    predicted,
                    probabilities,
                }),
            })
        }
        ConceptLabels::Continuous(_) | ConceptLabels::Vector(_) => {
            let raw = match targets {
                ConceptLabels::Continuous(v) => DMatrix::from_column_slice(n, 1, v),
                ConceptLabels::Vector(m) => m.clone(),
                ConceptLabels::Categorical(_) => unreachable!(),
            };
            let t = min_max_normalize(&raw);
            let sp = split(n, cfg.test_fraction, &mut rng);
            let stats = standardizer(&z.select_rows(&sp.train));
            let xs = apply_standardizer(z, &stats);
            let x_train = xs.select_rows(&sp.train);
            let x_test = xs.select_rows(&sp.test);
            let t_train = t.select_rows(&sp.train);
            let (pred, epochs) = match kind {
                ProbeKind::Linear => (predict_linear(&least_squares(&x_train, &t_train), &x_test), 0),
                ProbeKind::Mlp => {
                    let mut mlp = Mlp::new(&[z.ncols(), cfg.hidden, t.ncols()], &mut rng)?;
                    let epochs = fit(&mut mlp, &x_train, &Loss::Squared(&t_train), cfg, &mut rng)?;
                    (mlp.forward(&x_test)?, epochs)
                }
            };
            let t_test = t.select_rows(&sp.test);
            let per_dimension: Vec<f64> = (0..t.ncols())
                .map(|j| (pred.column(j) - t_test.column(j)).norm_squared() / sp.test.len() as f64)
                .collect();
            let metric = per_dimension.iter().sum::<f64>() / per_dimension.len() as f64;
            Ok(ProbeReport {
                probe: kind,
                target: ProbeTargetKind::RegressionMse,
                n_train: sp.train.len(),
                n_test: sp.test.len(),
                metric,
                per_dimension,
                epochs,
                test_indices: sp.test,
                test_output: Some(ProbeOutput::Values(pred)),
            })
        }
    }
}

/// `DP = sum_y |P(yhat = y | a) - P(yhat = y | not a)|` over the classes that
/// occur in the predictions.
pub fn demographic_parity(predictions: &[usize], attribute: &[usize]) -> Result<f64> {
    if predictions.len() != attribute.len() {
        return Err(Error::Shape(format!("{} predictions for {} attribute values", predictions.len(), attribute.len())));
    }
    let mut groups: Vec<usize> = attribute.to_vec();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() != 2 {
        return Err(Error::InvalidLabels(format!("attribute must take exactly two values, found {}", groups.len())));
    }
    let mut classes = predictions.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let size = |g: usize| attribute.iter().filter(|&&a| a == g).count() as f64;
    let (n0, n1) = (size(groups[0]), size(groups[1]));
    Ok(classes
        .iter()
        .map(|&y| {
            let count = |g: usize| predictions.iter().zip(attribute).filter(|&(&p, &a)| p == y && a == g).count() as f64;
            (count(groups[0]) / n0 - count(groups[1]) / n1).abs()
        })
        .sum())
}

/// Generalized demographic parity: the mean over samples of
/// `|m(a_i) - mean(yhat)|`, with `m` the Nadaraya-Watson regression of the
/// predictions on the attribute under Gaussian weights of width `bandwidth`.
pub fn gdp(predictions: &[f64], attribute: &[f64], bandwidth: f64) -> Result<f64> {
    if predictions.len() != attribute.len() {
        return Err(Error::Shape(format!("{} predictions for {} attribute values", predictions.len(), attribute.len())));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = predictions.len();
    if n == 0 {
        return Err(Error::InvalidArgument("gdp needs at least one sample".into()));
    }
    let m_avg = predictions.iter().sum::<f64>() / n as f64;
    let scale = -1.0 / (2.0 * bandwidth * bandwidth);
    let mut acc = 0.0;
    for &a in attribute {
        let (mut num, mut den) = (0.0, 0.0);
        for (&y, &b) in predictions.iter().zip(attribute) {
            let w = ((a - b) * (a - b) * scale).exp();
            num += w * y;
            den += w;
        }
        if den <= 0.0 {
            return Err(Error::InvalidArgument(format!("zero kernel weight at attribute value {a}")));
        }
        acc += (num / den - m_avg).abs();
    }
    Ok(acc / n as f64)
}

/// `gdp` applied to each attribute column.
pub fn gdp_per_dimension(predictions: &[f64], attribute: &DMatrix<f64>, bandwidth: f64) -> Result<Vec<f64>> {
    attribute
        .column_iter()
        .map(|c| gdp(predictions, c.as_slice(), bandwidth))
        .collect()
}

pub const DEFAULT_FAIRNESS_BANDWIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub bandwidth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gdp: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub gdp_per_dimension: Vec<f64>,
}

/// Fairness of a task probe's test predictions with respect to the concept.
/// `attribute` holds the concept values of the test rows. Binary categorical
/// attributes give DP; continuous and vector attributes are min-max
/// normalized and give GDP (the mean over dimensions for vectors). Other
/// categorical attributes give an empty report.
pub fn fairness_report(output: &ProbeOutput, attribute: &ConceptLabels, bandwidth: f64) -> Result<FairnessReport> {
    let mut report = FairnessReport {
        bandwidth,
        dp: None,
        gdp: None,
        gdp_per_dimension: Vec::new(),
    };
    let scores = output.scalar_predictions();
    match attribute {
        ConceptLabels::Categorical(a) => {
            let mut values = a.clone();
            values.sort_unstable();
            values.dedup();
            if values.len() == 2 {
                let predicted: Vec<usize> = match output {
                    ProbeOutput::Classes { predicted, .. } => predicted.clone(),
                    ProbeOutput::Values(_) => return Ok(report),
                };
                report.dp = Some(demographic_parity(&predicted, a)?);
            }
        }
        ConceptLabels::Continuous(a) => {
            let t = min_max_normalize(&DMatrix::from_column_slice(a.len(), 1, a));
            report.gdp = Some(gdp(&scores, t.as_slice(), bandwidth)?);
        }
        ConceptLabels::Vector(m) => {
            let per = gdp_per_dimension(&scores, &min_max_normalize(m), bandwidth)?;
            report.gdp = Some(per.iter().sum::<f64>() / per.len() as f64);
            report.gdp_per_dimension = per;
        }
    }
    Ok(report)
}
