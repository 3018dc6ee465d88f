use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use erasekit::alignment::{alignment_score, default_k, degree_distance, ksg_mi, DegreeNorm};
use erasekit::harness::{self, files, DatasetConfig, ExperimentConfig};
use erasekit::metrics::ProbeKind;
use erasekit::net::{erase, load_checkpoint};
use erasekit::{io, Error, Result};

#[derive(Parser)]
#[command(name = "erasekit", version, about = "Concept erasure with a kernelized rate-distortion objective")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (strict JSON).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (.krdm or .csv by extension).
    GenData {
        #[command(flatten)]
        common: Common,
        /// synthetic-continuous, two-gaussians or uniform
        #[arg(long)]
        generator: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Train an erasure network and write checkpoint, trace and erased features.
    Erase {
        #[command(flatten)]
        common: Common,
        /// Input dataset; overrides the config dataset section.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare probes, alignment and fairness before and after erasure.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Erased features; defaults to erased.krdm in the output directory.
        #[arg(long)]
        erased: Option<PathBuf>,
        /// Probe kinds to run (repeatable); overrides the config.
        #[arg(long)]
        probe: Vec<ProbeKind>,
    },
    /// Alignment score between two feature files with the same rows.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        erased: PathBuf,
        /// Neighborhood size; defaults to floor(n / 2).
        #[arg(short, long)]
        k: Option<usize>,
        /// Also report the KSG mutual-information estimate with this many neighbors.
        #[arg(long)]
        ksg: Option<usize>,
        /// Also report the kNN degree-distribution distance (l1, l2, kl).
        #[arg(long)]
        degree_norm: Option<DegreeNorm>,
    },
    /// Project out dominant singular directions and correlate probe accuracy with A_k.
    SimulateErasure {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Hidden width of the random labeling net.
        #[arg(long)]
        m: Option<usize>,
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Eigenvalue mass fractions of a feature file, optionally after erasure.
    EigenMass {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Apply this checkpoint before measuring.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
    }
}

fn dataset(cfg: &ExperimentConfig, data: &Option<PathBuf>) -> Result<erasekit::datagen::Dataset> {
    match data {
        Some(p) => io::load(p),
        None => cfg.dataset(Path::new(".")),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            generator,
            n,
            d,
            m,
        } => {
            let cfg = common.config()?;
            let base = cfg.dataset.clone().unwrap_or_default();
            let spec = DatasetConfig {
                path: None,
                generator: generator.or(base.generator),
                n: n.or(base.n),
                d: d.or(base.d),
                m: m.or(base.m),
            };
            let generator = spec
                .generator
                .clone()
                .ok_or_else(|| Error::Config("gen-data needs --generator or a config dataset.generator".into()))?;
            let out = common.out.ok_or_else(|| Error::Config("gen-data needs --out".into()))?;
            let ds = harness::generate(&generator, spec.n, spec.d, spec.m, cfg.seed)?;
            io::save(&out, &ds)?;
            print(&json!({"path": out, "n": ds.n(), "d": ds.d(), "provenance": ds.provenance}))
        }
        Command::Erase { common, data } => {
            let cfg = common.config()?;
            let ds = dataset(&cfg, &data)?;
            let out = common.out_dir(&cfg);
            let run = harness::run_erasure(&ds, &cfg.kram_config(), &out)?;
            let summary = json!({
                "output_dir": out,
                "steps": run.trace.steps.len(),
                "final_epoch_mean_r_z": run.trace.final_epoch_mean_r_z(),
                "final_epoch_mean_r_zk": run.trace.final_epoch_mean_r_zk(),
                "final_epoch_mean_target_bits": run.trace.final_epoch_mean_target(),
            });
            print(&summary)
        }
        Command::Eval {
            common,
            data,
            erased,
            probe,
        } => {
            let mut cfg = common.config()?;
            if !probe.is_empty() {
                cfg.evaluation.probes = probe;
            }
            let ds = dataset(&cfg, &data)?;
            let out = common.out_dir(&cfg);
            let erased = io::load(&erased.unwrap_or_else(|| out.join(files::ERASED)))?;
            let doc = harness::run_evaluation(&ds, &erased.features, &cfg.evaluation, cfg.seed, &out)?;
            print(&json!({
                "evaluation": out.join(files::EVALUATION),
                "mse_concept_before": doc.mse_concept_before,
                "mse_concept_after": doc.mse_concept_after,
                "accuracy_concept_before": doc.accuracy_concept_before,
                "accuracy_concept_after": doc.accuracy_concept_after,
                "a_k": doc.a_k,
            }))
        }
        Command::Align {
            common,
            original,
            erased,
            k,
            ksg,
            degree_norm,
        } => {
            let cfg = common.config()?;
            let x = io::load(&original)?.features;
            let z = io::load(&erased)?.features;
            let k = k.or(cfg.evaluation.alignment_k).unwrap_or_else(|| default_k(x.nrows()));
            let report = alignment_score(&x, &z, k)?;
            let mut doc = serde_json::to_value(&report)?;
            if let Some(kk) = ksg {
                doc["ksg_mi"] = json!(ksg_mi(&x, &z, kk)?);
            }
            if let Some(norm) = degree_norm {
                doc["degree_norm"] = serde_json::to_value(norm)?;
                doc["degree_distance"] = json!(degree_distance(&x, &z, k, norm)?);
            }
            match common.out {
                Some(p) => write_json(&p, &doc)?,
                None => print(&doc)?,
            }
            Ok(())
        }
        Command::SimulateErasure {
            common,
            data,
            n,
            d,
            m,
            k,
        } => {
            let mut cfg = common.config()?;
            if let Some(m) = m {
                cfg.simulation.m = m;
            }
            if k.is_some() {
                cfg.simulation.k = k;
            }
            let x = match (&data, &cfg.dataset) {
                (None, None) => harness::generate("uniform", n.or(Some(2000)), d.or(Some(100)), Some(cfg.simulation.m), cfg.seed)?.features,
                _ => dataset(&cfg, &data)?.features,
            };
            let out = common.out_dir(&cfg);
            let report = harness::run_simulation(&x, &cfg.simulation, cfg.seed, &out)?;
            print(&json!({
                "simulation": out.join(files::SIMULATION),
                "plot": out.join(files::ALIGNMENT_PLOT),
                "pearson": report.pearson,
            }))
        }
        Command::EigenMass { common, data, checkpoint } => {
            let cfg = common.config()?;
            let mut x = dataset(&cfg, &data)?.features;
            if let Some(c) = &checkpoint {
                let (net, _) = load_checkpoint(c)?;
                x = erase(&net, &x)?.into_inner();
            }
            let doc = json!({ "eigen_mass": harness::eigen_mass(&x)? });
            match common.out {
                Some(p) => write_json(&p, &doc)?,
                None => print(&doc)?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
