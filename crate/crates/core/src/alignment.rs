//! Information-retention measures between original and erased representations.
//!
//! The main one is the alignment score `A_k`: the mean fraction of each
//! point's k nearest neighbors in `X` that are still among its k nearest
//! neighbors in `Z`. A random map scores `k/n` in expectation, the identity
//! scores 1. The KSG mutual-information estimator and kNN degree-distribution
//! distances are provided for comparison.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::NeighborIndex;

/// Per-point kNN sets of one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSets {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl NeighborSets {
    pub fn compute(points: &DMatrix<f64>, k: usize) -> Result<Self> {
        let index = NeighborIndex::build(points)?;
        Ok(NeighborSets {
            k,
            neighbors: index.all_neighbors(k),
        })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Overlap counts against another family of kNN sets over the same points.
    pub fn overlap(&self, other: &NeighborSets) -> Result<AlignmentReport> {
        if self.n() != other.n() || self.k != other.k {
            return Err(Error::Shape(format!(
                "neighbor sets differ: n {} vs {}, k {} vs {}",
                self.n(),
                other.n(),
                self.k,
                other.k
            )));
        }
        let n = self.n();
        let mut mark = vec![false; n];
        let mut overlaps = Vec::with_capacity(n);
        for (a, b) in self.neighbors.iter().zip(&other.neighbors) {
            a.iter().for_each(|&j| mark[j] = true);
            overlaps.push(b.iter().filter(|&&j| mark[j]).count());
            a.iter().for_each(|&j| mark[j] = false);
        }
        Ok(AlignmentReport::from_overlaps(self.k, overlaps))
    }
}

/// Alignment score with its per-point overlap counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub k: usize,
    pub n: usize,
    pub a_k: f64,
    pub overlaps: Vec<usize>,
}

impl AlignmentReport {
    fn from_overlaps(k: usize, overlaps: Vec<usize>) -> Self {
        let n = overlaps.len();
        let total: usize = overlaps.iter().sum();
        AlignmentReport {
            k,
            n,
            a_k: total as f64 / (n as f64 * k as f64),
            overlaps,
        }
    }

    /// Number of points with overlap `c`, for `c` in `0..=k`.
    pub fn overlap_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.k + 1];
        for &c in &self.overlaps {
            h[c] += 1;
        }
        h
    }
}

#[derive(Serialize, Deserialize)]
struct AlignmentJson {
    k: usize,
    n: usize,
    a_k: f64,
    overlap_histogram: Vec<usize>,
}

impl Serialize for AlignmentReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AlignmentJson {
            k: self.k,
            n: self.n,
            a_k: self.a_k,
            overlap_histogram: self.overlap_histogram(),
        }
        .serialize(s)
    }
}

/// Default neighborhood size `floor(n / 2)`.
pub fn default_k(n: usize) -> usize {
    (n / 2).max(1)
}

fn check_pair(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<usize> {
    if x.nrows() != z.nrows() {
        return Err(Error::Shape(format!("X has {} rows, Z has {}", x.nrows(), z.nrows())));
    }
    Ok(x.nrows())
}

/// `A_k(X, Z) = (1/n) sum_i |knn_X(i) ∩ knn_Z(i)| / k` with exact Euclidean kNN
/// excluding the query point.
pub fn alignment_score(x: &DMatrix<f64>, z: &DMatrix<f64>, k: usize) -> Result<AlignmentReport> {
    let n = check_pair(x, z)?;
    if k < 1 || k + 1 > n {
        return Err(Error::InvalidArgument(format!("k must be in [1, n-1] = [1, {}], got {k}", n.saturating_sub(1))));
    }
    NeighborSets::compute(x, k)?.overlap(&NeighborSets::compute(z, k)?)
}

/// Digamma function for positive arguments, via upward recurrence to x >= 6
/// and the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    assert!(x > 0.0, "digamma is only implemented for positive arguments");
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2k / (2k x^2k) for k = 1..6
    let series = inv2
        * (1.0 / 12.0
            - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    acc + x.ln() - 0.5 * inv - series
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn has_duplicate_rows(rows: &[Vec<f64>]) -> bool {
    let mut sorted: Vec<&Vec<f64>> = rows.iter().collect();
    sorted.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// Adds an index-derived perturbation of relative size 1e-10 when any two
/// rows coincide.
fn jitter_duplicates(rows: &mut [Vec<f64>], salt: u64) {
    if !has_duplicate_rows(rows) {
        return;
    }
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let h = splitmix(salt ^ ((i as u64) << 20) ^ j as u64);
            let u = (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            *v += 1e-10 * u * v.abs().max(1.0);
        }
    }
}

fn max_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// KSG mutual-information estimate in nats,
/// `psi(k) - 1/k - <psi(n_x) + psi(n_z)> + psi(N)`.
///
/// For each point the k nearest neighbors are found in the joint space under
/// the max-norm. Their largest marginal distances `e_x`, `e_z` set the side
/// of the marginal hypercubes, and `n_x`, `n_z` count the other points with
/// marginal max-norm distance at most `e_x`, `e_z`.
pub fn ksg_mi(x: &DMatrix<f64>, z: &DMatrix<f64>, k: usize) -> Result<f64> {
    let n = check_pair(x, z)?;
    if k < 1 || k >= n {
        return Err(Error::InvalidArgument(format!("k must be in [1, n-1], got k = {k}, n = {n}")));
    }
    let mut xs = rows_of(x);
    let mut zs = rows_of(z);
    jitter_duplicates(&mut xs, 0x5eed_0001);
    jitter_duplicates(&mut zs, 0x5eed_0002);

    let mut dx = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut joint: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut acc = 0.0;
    for i in 0..n {
        joint.clear();
        for j in 0..n {
            dx[j] = max_norm(&xs[i], &xs[j]);
            dz[j] = max_norm(&zs[i], &zs[j]);
            if j != i {
                joint.push((dx[j].max(dz[j]), j));
            }
        }
        joint.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (ex, ez) = joint[..k].iter().fold((0.0f64, 0.0f64), |(ex, ez), &(_, j)| (ex.max(dx[j]), ez.max(dz[j])));
        let nx = (0..n).filter(|&j| j != i && dx[j] <= ex).count();
        let nz = (0..n).filter(|&j| j != i && dz[j] <= ez).count();
        acc += digamma(nx as f64) + digamma(nz as f64);
    }
    Ok(digamma(k as f64) - 1.0 / k as f64 - acc / n as f64 + digamma(n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegreeNorm {
    L1,
    L2,
    Kl,
}

impl std::str::FromStr for DegreeNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(DegreeNorm::L1),
            "l2" => Ok(DegreeNorm::L2),
            "kl" => Ok(DegreeNorm::Kl),
            other => Err(Error::InvalidArgument(format!("unknown degree norm '{other}' (l1, l2, kl)"))),
        }
    }
}

/// Normalized in-degree histogram of the directed kNN graph, over degrees `0..n`.
pub fn degree_distribution(neighbors: &NeighborSets) -> Vec<f64> {
    let n = neighbors.n();
    let mut indeg = vec![0usize; n];
    for list in &neighbors.neighbors {
        for &j in list {
            indeg[j] += 1;
        }
    }
    let mut hist = vec![0.0; n];
    for d in indeg {
        hist[d] += 1.0;
    }
    hist.iter_mut().for_each(|h| *h /= n as f64);
    hist
}

const KL_SMOOTHING: f64 = 1e-12;

/// Distance between two degree distributions; KL is `D(p || q)` after adding
/// 1e-12 to every bin and renormalizing.
pub fn distribution_distance(p: &[f64], q: &[f64], norm: DegreeNorm) -> f64 {
    match norm {
        DegreeNorm::L1 => p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum(),
        DegreeNorm::L2 => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        DegreeNorm::Kl => {
            let zp: f64 = p.iter().map(|a| a + KL_SMOOTHING).sum();
            let zq: f64 = q.iter().map(|b| b + KL_SMOOTHING).sum();
            p.iter()
                .zip(q)
                .map(|(a, b)| {
                    let pa = (a + KL_SMOOTHING) / zp;
                    let qb = (b + KL_SMOOTHING) / zq;
                    pa * (pa / qb).ln()
                })
                .sum::<f64>()
                .max(0.0)
        }
    }
}

/// Distance between the kNN in-degree distributions of `X` and `Z`.
pub fn degree_distance(x: &DMatrix<f64>, z: &DMatrix<f64>, k: usize, norm: DegreeNorm) -> Result<f64> {
    let n = check_pair(x, z)?;
    if k < 1 || k >= n {
        return Err(Error::InvalidArgument(format!("k must be in [1, n-1], got {k}")));
    }
    let p = degree_distribution(&NeighborSets::compute(x, k)?);
    let q = degree_distribution(&NeighborSets::compute(z, k)?);
    Ok(distribution_distance(&p, &q, norm))
}
