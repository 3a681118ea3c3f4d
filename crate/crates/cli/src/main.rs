use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use slt_lab::experiments::runner::SGLD_STREAM;
use slt_lab::experiments::{analysis, regenerate_data, run_experiment, ExperimentConfig, ExperimentId, Scale};
use slt_lab::llc::{estimate_at, SgldConfig};
use slt_lab::math::RngStream;
use slt_lab::registry::{LlcRow, Registry, RunStatus, REGISTRY_ENV};
use slt_lab::report::report_experiment;
use slt_lab::transitions::{detect_grokking, detect_loss_transitions, DetectorConfig, DetectorVariant};
use slt_lab::Error;

const DEFAULT_ROOT: &str = "slt-lab-registry";

#[derive(Parser, Debug)]
#[command(name = "slt-lab", version, about = "Train toy models, estimate local learning coefficients and analyze transitions")]
struct Cli {
    /// Registry root directory
    #[arg(long, global = true, env = REGISTRY_ENV)]
    registry_root: Option<PathBuf>,

    /// Print results and errors as JSON
    #[arg(long, global = true)]
    json: bool,

    /// Override the seed (first sweep seed for `run`, SGLD seed for `llc`)
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct SgldOverrides {
    /// SGLD step size
    #[arg(long)]
    epsilon: Option<f64>,
    /// Localization strength
    #[arg(long)]
    gamma: Option<f64>,
    /// SGLD steps per chain
    #[arg(long)]
    sgld_steps: Option<usize>,
    /// Number of chains
    #[arg(long)]
    chains: Option<usize>,
}

impl SgldOverrides {
    fn any(&self) -> bool {
        self.epsilon.is_some() || self.gamma.is_some() || self.sgld_steps.is_some() || self.chains.is_some()
    }

    fn apply(&self, mut cfg: SgldConfig) -> SgldConfig {
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(s) = self.sgld_steps {
            cfg.steps = s;
        }
        if let Some(c) = self.chains {
            cfg.chains = c;
        }
        cfg
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment sweep from a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scale: Option<Scale>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        detector: Option<DetectorVariant>,
        #[command(flatten)]
        sgld: SgldOverrides,
    },
    /// Estimate the LLC at a stored checkpoint and append it to the run's LLC table
    Llc {
        run_id: String,
        #[arg(long)]
        step: usize,
        #[command(flatten)]
        sgld: SgldOverrides,
    },
    /// Re-run grokking or loss-transition detection on a stored run
    Detect {
        run_id: String,
        #[arg(long, default_value_t = DetectorVariant::Smoothing)]
        detector: DetectorVariant,
    },
    /// Write CSV tables and SVG figures for an experiment
    Report {
        experiment: ExperimentId,
        /// Output directory (default: <registry>/reports/<experiment>)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DetectorVariant::Smoothing)]
        detector: DetectorVariant,
    },
    /// List stored runs
    List {
        experiment: Option<ExperimentId>,
    },
}

/// Exit status for a finished command: 0 success, 2 partial failure.
type Outcome = Result<u8, Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let registry = Registry::new(cli.registry_root.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT)));
    let result = match &cli.command {
        Command::Run {
            config,
            scale,
            workers,
            detector,
            sgld,
        } => cmd_run(&cli, &registry, config, *scale, *workers, *detector, sgld),
        Command::Llc { run_id, step, sgld } => cmd_llc(&cli, &registry, run_id, *step, sgld),
        Command::Detect { run_id, detector } => cmd_detect(&cli, &registry, run_id, *detector),
        Command::Report {
            experiment,
            out,
            detector,
        } => {
            let out = out
                .clone()
                .unwrap_or_else(|| registry.root().join("reports").join(experiment.as_str()));
            cmd_report(&cli, &registry, *experiment, &out, *detector)
        }
        Command::List { experiment } => cmd_list(&cli, &registry, *experiment),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if cli.json {
                eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(1)
        }
    }
}

fn print(cli: &Cli, value: serde_json::Value, text: impl FnOnce() -> String) {
    if cli.json {
        println!("{value}");
    } else {
        println!("{}", text());
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidConfig(format!("cannot read {}: {e}", path.display()))
    })?;
    ExperimentConfig::from_json(&text)
}

fn cmd_run(
    cli: &Cli,
    registry: &Registry,
    config: &Path,
    scale: Option<Scale>,
    workers: Option<usize>,
    detector: Option<DetectorVariant>,
    sgld: &SgldOverrides,
) -> Outcome {
    let mut cfg = load_config(config)?;
    if let Some(s) = scale {
        cfg.scale = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(v) = detector {
        cfg.detector.variant = v;
    }
    if let Some(seed) = cli.seed {
        cfg.seeds[0] = seed;
    }
    if sgld.any() {
        cfg.sgld = Some(sgld.apply(cfg.sgld()));
    }
    cfg.validate()?;
    let report = run_experiment(registry, &cfg)?;
    for o in &report.outcomes {
        let status = match o.status {
            RunStatus::Done if o.reused => "reused",
            RunStatus::Done => "done",
            RunStatus::Failed => "failed",
            RunStatus::Running => "running",
        };
        print(
            cli,
            json!({"run_id": o.run_id, "point": o.point.label, "seed": o.seed, "status": status, "error": o.error}),
            || match &o.error {
                Some(e) => format!("{}\t{}\tseed={}\t{status}: {e}", o.run_id, o.point.label, o.seed),
                None => format!("{}\t{}\tseed={}\t{status}", o.run_id, o.point.label, o.seed),
            },
        );
    }
    let failed = report.failed();
    if !cli.json {
        eprintln!(
            "{}: {} runs, {} failed; summary in {}",
            report.experiment_id,
            report.outcomes.len(),
            failed,
            registry.experiment_dir(report.experiment_id).join("summary.json").display()
        );
    }
    Ok(if failed > 0 { 2 } else { 0 })
}

fn cmd_llc(cli: &Cli, registry: &Registry, run_id: &str, step: usize, sgld: &SgldOverrides) -> Outcome {
    let handle = registry.open_run(run_id)?;
    let rc = &handle.record().config;
    let params = registry.load_checkpoint(run_id, step)?;
    let data = regenerate_data(rc)?;
    let cfg = sgld.apply(rc.sgld.clone());
    let seed = cli.seed.unwrap_or(rc.seed);
    let est = estimate_at(
        &rc.spec,
        &params,
        &data.train,
        &cfg,
        &RngStream::new(seed, SGLD_STREAM).child(step as u64),
    )?;
    let row = LlcRow::from_estimate(step, &est);
    handle.append_llc(&[row])?;
    print(
        cli,
        json!({
            "run_id": run_id,
            "step": step,
            "lambda_hat": est.lambda_hat,
            "std_dev": est.std_dev,
            "per_chain": est.per_chain,
            "anchor_loss": est.anchor_loss,
            "n": est.n,
            "beta": est.beta_used,
            "free_energy": row.free_energy,
            "negative": est.negative_flag,
            "diverged_chains": est.diverged_chains,
        }),
        || {
            let mut s = format!(
                "λ̂ = {:.6} ± {:.6}  (n = {}, L(w*) = {:.6e}, F = {:.6})",
                est.lambda_hat, est.std_dev, est.n, est.anchor_loss, row.free_energy
            );
            if est.negative_flag {
                s.push_str("  [negative]");
            }
            if est.diverged_chains > 0 {
                s.push_str(&format!("  [{} chains diverged]", est.diverged_chains));
            }
            s
        },
    );
    Ok(0)
}

fn cmd_detect(cli: &Cli, registry: &Registry, run_id: &str, variant: DetectorVariant) -> Outcome {
    let run = registry.load_run(run_id)?;
    let cfg = DetectorConfig::with_variant(variant);
    if run.record.experiment_id == ExperimentId::Q1E1 {
        let found = detect_grokking(&run.trace.records, &cfg)?;
        print(cli, json!({"run_id": run_id, "grokking": found}), || match found {
            Some(s) => format!("grokked: i = {}, j = {}, r = {}", s.i, s.j, s.r()),
            None => "no grokking detected".into(),
        });
        return Ok(0);
    }
    if run.record.experiment_id != ExperimentId::Q1E2 {
        return Err(Error::NoData(format!(
            "{run_id} is a {} scaling run; detection applies to Q1E1 and Q1E2 runs",
            run.record.experiment_id
        )));
    }
    let found = detect_loss_transitions(&run.trace, &cfg)?;
    let pairs = match analysis::run_transition_pairs(&run, &cfg) {
        Ok(p) => p,
        Err(Error::FewerThanTwoTransitions { .. } | Error::Missing(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    print(
        cli,
        json!({"run_id": run_id, "variant": variant, "segments": found.segments, "flat": found.flat, "pairs": pairs}),
        || {
            let mut s = format!("{} detector: {} transitions", variant, found.segments.len());
            if found.flat {
                s.push_str(" (flat loss curve)");
            }
            for (a, b) in &found.segments {
                s.push_str(&format!("\n  steps {a}..{b}"));
            }
            for p in &pairs {
                s.push_str(&format!("\n  {} -> {}: r = {}, ΔF = {:.6}", p.i, p.j, p.r, p.delta_f));
            }
            s
        },
    );
    Ok(0)
}

fn cmd_report(cli: &Cli, registry: &Registry, exp: ExperimentId, out: &Path, variant: DetectorVariant) -> Outcome {
    let report = report_experiment(registry, exp, &DetectorConfig::with_variant(variant), out)?;
    let files: Vec<String> = report.files.iter().map(|p| p.display().to_string()).collect();
    print(cli, json!({"experiment": exp, "files": files}), || files.join("\n"));
    Ok(0)
}

fn cmd_list(cli: &Cli, registry: &Registry, exp: Option<ExperimentId>) -> Outcome {
    for r in registry.list_runs(exp)? {
        let record = registry.load_record(&r.run_id)?;
        let status = serde_json::to_value(record.status).expect("status serializes");
        print(
            cli,
            json!({
                "run_id": r.run_id,
                "experiment_id": r.experiment_id,
                "status": status,
                "point": record.config.point.label,
                "seed": record.config.seed,
                "config_hash": record.config_hash,
            }),
            || {
                format!(
                    "{}\t{}\t{}\t{}\tseed={}",
                    r.run_id,
                    r.experiment_id,
                    status.as_str().unwrap_or("?"),
                    record.config.point.label,
                    record.config.seed
                )
            },
        );
    }
    Ok(0)
}
