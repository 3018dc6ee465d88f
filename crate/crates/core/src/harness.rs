//! Experiment orchestration behind the command line tool.
//!
//! Configs are strict JSON: every section rejects unknown keys, so a typo
//! such as `lamda` fails before any compute starts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::alignment::{alignment_score, default_k, NeighborSets};
use crate::datagen::{gen_synthetic_continuous, gen_two_gaussians, gen_uniform_labeled, gen_label_from_random_net, Dataset, Provenance, TaskLabels};
use crate::error::{Error, Result};
use crate::kernel::{ConceptLabels, KernelSpec, LabelKind};
use crate::metrics::{fairness_report, train_probe, FairnessReport, ProbeConfig, ProbeKind, ProbeReport, DEFAULT_FAIRNESS_BANDWIDTH};
use crate::net::{erase, save_checkpoint, ErasureNetwork, KramConfig, Trainer, TrainingTrace};

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs two sequences of equal length >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("pearson correlation is undefined for a constant sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Eigenvalues of the centered sample covariance as fractions of their sum,
/// largest first.
pub fn eigen_mass(z: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("eigen_mass needs n >= 2, got {n}")));
    }
    let mean = z.row_mean();
    let mut centered = z.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.max(0.0)).collect();
    let total: f64 = eig.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("data has zero variance".into()));
    }
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig.into_iter().map(|v| v / total).collect())
}

/// `I - u u^T` for a unit vector `u`.
pub fn nullspace_projector(u: &nalgebra::DVector<f64>) -> DMatrix<f64> {
    DMatrix::identity(u.len(), u.len()) - u * u.transpose()
}

/// Right-singular vectors of `x` as columns, by decreasing singular value.
pub fn dominant_directions(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("SVD input contains non-finite values".into()));
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::InvalidArgument("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let d = x.ncols();
    let mut v = DMatrix::zeros(d, order.len());
    for (c, &r) in order.iter().enumerate() {
        let row = v_t.row(r).transpose();
        v.set_column(c, &(&row / row.norm()));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub iteration: usize,
    pub accuracy: f64,
    pub a_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub records: Vec<SimulationRecord>,
    pub pearson: f64,
}

impl SimulationReport {
    /// Plot data: `iteration,accuracy,a_k`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,accuracy,a_k\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.iteration, r.accuracy, r.a_k);
        }
        s
    }
}

/// Simulated erasure: labels come from a random two-layer linear net, then
/// the dominant right-singular directions of `x` are projected out one at a
/// time. After each projection the MLP probe accuracy on the labels and
/// `A_k(X, Z_i)` are recorded; the report carries their Pearson correlation.
pub fn simulate_erasure(x: &DMatrix<f64>, m: usize, k: usize, seed: u64, probe: &ProbeConfig) -> Result<SimulationReport> {
    let (n, d) = x.shape();
    if k < 1 || k >= n {
        return Err(Error::InvalidArgument(format!("k must satisfy 1 <= k < n = {n}, got {k}")));
    }
    let labels = ConceptLabels::Categorical(gen_label_from_random_net(x, m, seed)?);
    let directions = dominant_directions(x)?;
    let reference = NeighborSets::compute(x, k)?;
    let mut z = x.clone();
    let mut records = Vec::with_capacity(directions.ncols());
    for i in 0..directions.ncols() {
        let p = nullspace_projector(&directions.column(i).into_owned());
        z = &z * p;
        let accuracy = train_probe(&z, &labels, ProbeKind::Mlp, seed, probe)?.metric;
        let a_k = reference.overlap(&NeighborSets::compute(&z, k)?)?.a_k;
        records.push(SimulationRecord {
            iteration: i + 1,
            accuracy,
            a_k,
        });
    }
    let acc: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let ak: Vec<f64> = records.iter().map(|r| r.a_k).collect();
    Ok(SimulationReport {
        n,
        d,
        k,
        pearson: pearson(&acc, &ak)?,
        records,
    })
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Where the data comes from: a file, or one of the built-in generators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// `synthetic-continuous`, `two-gaussians` or `uniform`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Hidden width of the random labeling net for `uniform`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

pub const GENERATORS: [&str; 3] = ["synthetic-continuous", "two-gaussians", "uniform"];

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.generator) {
            (Some(_), Some(_)) => Err(Error::Config("dataset: give either `path` or `generator`, not both".into())),
            (None, None) => Err(Error::Config("dataset: one of `path` or `generator` is required".into())),
            (None, Some(g)) if !GENERATORS.contains(&g.as_str()) => Err(Error::Config(format!(
                "dataset: unknown generator '{g}' (expected one of {})",
                GENERATORS.join(", ")
            ))),
            _ => Ok(()),
        }
    }

    /// Loads or generates the dataset; relative paths resolve against `base`.
    pub fn load(&self, seed: u64, base: &Path) -> Result<Dataset> {
        self.validate()?;
        if let Some(p) = &self.path {
            return crate::io::load(&base.join(p));
        }
        generate(self.generator.as_deref().unwrap_or_default(), self.n, self.d, self.m, seed)
    }
}

/// Runs a named generator with its defaults for missing sizes.
pub fn generate(generator: &str, n: Option<usize>, d: Option<usize>, m: Option<usize>, seed: u64) -> Result<Dataset> {
    match generator {
        "synthetic-continuous" => gen_synthetic_continuous(n.unwrap_or(10_000), d.unwrap_or(100), seed),
        "two-gaussians" => gen_two_gaussians(n.unwrap_or(10_000), seed),
        "uniform" => gen_uniform_labeled(n.unwrap_or(2000), d.unwrap_or(100), m.unwrap_or(100), seed),
        other => Err(Error::Config(format!(
            "unknown generator '{other}' (expected one of {})",
            GENERATORS.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub probes: Vec<ProbeKind>,
    /// `None` means `floor(n / 2)`.
    pub alignment_k: Option<usize>,
    pub fairness_bandwidth: f64,
    /// `None` means the experiment seed.
    pub split_seed: Option<u64>,
    pub probe: ProbeConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            probes: vec![ProbeKind::Mlp],
            alignment_k: None,
            fairness_bandwidth: DEFAULT_FAIRNESS_BANDWIDTH,
            split_seed: None,
            probe: ProbeConfig::default(),
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes.is_empty() {
            return Err(Error::Config("evaluation.probes must name at least one probe".into()));
        }
        if !(self.fairness_bandwidth > 0.0) {
            return Err(Error::Config("evaluation.fairness_bandwidth must be positive".into()));
        }
        if self.alignment_k == Some(0) {
            return Err(Error::Config("evaluation.alignment_k must be positive".into()));
        }
        self.probe.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub m: usize,
    /// `None` means `floor(n / 2)`.
    pub k: Option<usize>,
    pub probe: ProbeConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            m: 100,
            k: None,
            probe: ProbeConfig::default(),
        }
    }
}

/// Top-level experiment config. The top-level `seed` and `kernel` override
/// the ones inside `kram`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub kram: KramConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(ds) = &self.dataset {
            ds.validate()?;
        }
        self.kram_config().validate()?;
        self.evaluation.validate()?;
        if self.simulation.m == 0 {
            return Err(Error::Config("simulation.m must be positive".into()));
        }
        Ok(())
    }

    /// The training config with the top-level seed and kernel applied.
    pub fn kram_config(&self) -> KramConfig {
        let mut k = self.kram.clone();
        k.seed = self.seed;
        if let Some(spec) = &self.kernel {
            k.kernel = spec.clone();
        }
        k
    }

    pub fn dataset(&self, base: &Path) -> Result<Dataset> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::Config("config has no `dataset` section".into()))?
            .load(self.seed, base)
    }
}

/// Names of the files an experiment writes into its output directory.
pub mod files {
    pub const CHECKPOINT: &str = "checkpoint.kram";
    pub const TRACE: &str = "trace.csv";
    pub const ERASED: &str = "erased.krdm";
    pub const EVALUATION: &str = "evaluation.json";
    pub const LOSS_PLOT: &str = "loss_evolution.csv";
    pub const ALIGNMENT_PLOT: &str = "alignment_vs_iteration.csv";
    pub const SIMULATION: &str = "simulation.json";
}

/// Plot data for the loss evolution, without wall-clock times.
pub fn loss_plot_csv(trace: &TrainingTrace) -> String {
    let mut s = String::from("step,epoch,r_z,r_zk,loss,constraint,target_bits\n");
    let per_epoch = trace.steps_per_epoch.max(1);
    for r in &trace.steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step,
            r.step / per_epoch,
            r.r_z,
            r.r_zk,
            r.loss,
            r.constraint,
            r.target_bits
        );
    }
    s
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Result of the training half of a pipeline.
#[derive(Debug, Clone)]
pub struct ErasureRun {
    pub network: ErasureNetwork,
    pub trace: TrainingTrace,
    pub erased: Dataset,
}

/// Trains the eraser on `data` and writes the checkpoint, trace, loss plot
/// data and erased dataset into `out_dir`.
pub fn run_erasure(data: &Dataset, kram: &KramConfig, out_dir: &Path) -> Result<ErasureRun> {
    let mut trainer = Trainer::new(&data.features, &data.concept, kram)?;
    trainer.run()?;
    let (network, trace) = trainer.into_parts();
    let z = erase(&network, &data.features)?.into_inner();
    let mut provenance = Provenance::new("erased", Some(kram.seed)).with("source", data.provenance.generator.clone());
    provenance.params.insert("kram".into(), serde_json::to_value(kram)?);
    let erased = Dataset::new(z, data.concept.clone(), data.task.clone(), provenance)?;

    ensure_dir(out_dir)?;
    save_checkpoint(&out_dir.join(files::CHECKPOINT), &network, kram)?;
    trace.write_csv(&out_dir.join(files::TRACE))?;
    write_file(&out_dir.join(files::LOSS_PLOT), loss_plot_csv(&trace))?;
    crate::io::save(&out_dir.join(files::ERASED), &erased)?;
    Ok(ErasureRun { network, trace, erased })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    /// `concept` or `task`.
    pub label: String,
    /// `before` (original features) or `after` (erased features).
    pub stage: String,
    #[serde(flatten)]
    pub report: ProbeReport,
}

/// Before/after comparison of an erasure. The headline fields use the first
/// configured probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDocument {
    pub n: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub concept: LabelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_concept_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_concept_after: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_concept_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_concept_after: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_metric_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_metric_after: Option<f64>,
    pub a_k: f64,
    pub alignment_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fairness_before: Option<FairnessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fairness_after: Option<FairnessReport>,
    pub eigen_mass_before: Vec<f64>,
    pub eigen_mass_after: Vec<f64>,
    pub probes: Vec<ProbeEntry>,
}

impl EvaluationDocument {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn fairness_for(report: &ProbeReport, concept: &ConceptLabels, bandwidth: f64) -> Result<Option<FairnessReport>> {
    let Some(output) = &report.test_output else {
        return Ok(None);
    };
    let attribute = concept.select(&report.test_indices);
    if let ConceptLabels::Categorical(a) = &attribute {
        let mut v = a.clone();
        v.sort_unstable();
        v.dedup();
        if v.len() != 2 {
            return Ok(None);
        }
    }
    fairness_report(output, &attribute, bandwidth).map(Some)
}

/// Probes, alignment, fairness and eigenvalue spectra for `original` against
/// its erased features `z` (rows in the same order).
pub fn evaluate(original: &Dataset, z: &DMatrix<f64>, cfg: &EvaluationConfig, seed: u64) -> Result<EvaluationDocument> {
    cfg.validate()?;
    let n = original.n();
    if z.nrows() != n {
        return Err(Error::Shape(format!("erased features have {} rows, original {n}", z.nrows())));
    }
    let split_seed = cfg.split_seed.unwrap_or(seed);
    let k = cfg.alignment_k.unwrap_or_else(|| default_k(n));
    let task = original.task.as_ref().map(TaskLabels::as_concept);
    let mut probes = Vec::new();
    let mut headline = [None, None];
    let mut task_headline = [None, None];
    let mut fairness = [None, None];
    for (stage_idx, (stage, feats)) in [("before", &original.features), ("after", z)].into_iter().enumerate() {
        for (p, &kind) in cfg.probes.iter().enumerate() {
            let report = train_probe(feats, &original.concept, kind, split_seed, &cfg.probe)?;
            if p == 0 {
                headline[stage_idx] = Some(report.metric);
            }
            probes.push(ProbeEntry {
                label: "concept".into(),
                stage: stage.into(),
                report,
            });
            if let Some(t) = &task {
                let report = train_probe(feats, t, kind, split_seed, &cfg.probe)?;
                if p == 0 {
                    task_headline[stage_idx] = Some(report.metric);
                    fairness[stage_idx] = fairness_for(&report, &original.concept, cfg.fairness_bandwidth)?;
                }
                probes.push(ProbeEntry {
                    label: "task".into(),
                    stage: stage.into(),
                    report,
                });
            }
        }
    }
    let categorical = original.concept.kind() == LabelKind::Categorical;
    let pick = |want_categorical: bool, i: usize| if categorical == want_categorical { headline[i] } else { None };
    let [fairness_before, fairness_after] = fairness;
    Ok(EvaluationDocument {
        n,
        d_in: original.d(),
        d_out: z.ncols(),
        concept: original.concept.kind(),
        mse_concept_before: pick(false, 0),
        mse_concept_after: pick(false, 1),
        accuracy_concept_before: pick(true, 0),
        accuracy_concept_after: pick(true, 1),
        task_metric_before: task_headline[0],
        task_metric_after: task_headline[1],
        a_k: alignment_score(&original.features, z, k)?.a_k,
        alignment_k: k,
        fairness_before,
        fairness_after,
        eigen_mass_before: eigen_mass(&original.features)?,
        eigen_mass_after: eigen_mass(z)?,
        probes,
    })
}

/// Evaluates and writes `evaluation.json` into `out_dir`.
pub fn run_evaluation(original: &Dataset, z: &DMatrix<f64>, cfg: &EvaluationConfig, seed: u64, out_dir: &Path) -> Result<EvaluationDocument> {
    let doc = evaluate(original, z, cfg, seed)?;
    ensure_dir(out_dir)?;
    write_file(&out_dir.join(files::EVALUATION), doc.to_json()?)?;
    Ok(doc)
}

/// Full erase-then-evaluate run. Relative paths in the config resolve
/// against `base`.
pub fn run_pipeline(cfg: &ExperimentConfig, base: &Path) -> Result<EvaluationDocument> {
    cfg.validate()?;
    let data = cfg.dataset(base)?;
    let out_dir = base.join(&cfg.output_dir);
    let run = run_erasure(&data, &cfg.kram_config(), &out_dir)?;
    run_evaluation(&data, &run.erased.features, &cfg.evaluation, cfg.seed, &out_dir)
}

/// Runs the simulated erasure on `x` and writes its report and plot data.
pub fn run_simulation(x: &DMatrix<f64>, sim: &SimulationConfig, seed: u64, out_dir: &Path) -> Result<SimulationReport> {
    let k = sim.k.unwrap_or_else(|| default_k(x.nrows()));
    let report = simulate_erasure(x, sim.m, k, seed, &sim.probe)?;
    ensure_dir(out_dir)?;
    write_file(&out_dir.join(files::SIMULATION), serde_json::to_string_pretty(&report)? + "\n")?;
    write_file(&out_dir.join(files::ALIGNMENT_PLOT), report.to_csv())?;
    Ok(report)
}
