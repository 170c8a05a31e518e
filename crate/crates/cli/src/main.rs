use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qgraph::linalg::{symmetry_residual, unitarity_residual};
use qgraph::rng::stream_rng;
use qgraph::{build_graph, build_system, sample_phases};
use qgraph_cli::artifacts::ArtifactDir;
use qgraph_cli::{init_workers, run_stages, run_suite, ConfigError, ExperimentConfig, Overrides, Stage, Suite, VerifyOptions};
use serde_json::json;

#[derive(Parser)]
#[command(name = "qgraph", version, about = "Chaotic scattering on open quantum graphs")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "QGRAPH_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed for all Monte Carlo sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Phase draws (and oracle draws).
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&Overrides { seed: self.seed, samples: self.samples, out: self.out.clone() });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the graph and the scattering system; write both.
    Generate(Common),
    /// Evaluate one S-matrix at seeded random phases.
    Smatrix {
        #[command(flatten)]
        common: Common,
        /// Wave-number offset added to the phases.
        #[arg(long, default_value_t = 0.0)]
        kappa: f64,
        /// Also write the raw bond matrix and coupling dump.
        #[arg(long)]
        dump: bool,
    },
    /// Monte Carlo correlators, sweep curve and distribution report.
    Correlate(Common),
    /// Ericson-regime predictions for the configured correlators.
    Predict(Common),
    /// Calibrated GOE oracle curve.
    Oracle(Common),
    /// Classical-map gap and trajectory-expansion convergence.
    Diagnose(Common),
    /// Run an invariant battery.
    Verify {
        suite: Suite,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the suite report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All stages, with report and manifest.
    Run(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// `Ok(passed)`, or an error.
fn execute(cli: Cli) -> Result<bool> {
    init_workers(cli.workers)?;
    match cli.command {
        Command::Generate(c) => staged(&c, &[Stage::Graph, Stage::System]),
        Command::Correlate(c) => staged(&c, &[Stage::Graph, Stage::System, Stage::Correlators, Stage::Sweep]),
        Command::Predict(c) => staged(&c, &[Stage::Graph, Stage::System, Stage::Predictions]),
        Command::Oracle(c) => staged(&c, &[Stage::Graph, Stage::System, Stage::Oracle]),
        Command::Run(c) => staged(&c, &Stage::ALL),
        Command::Smatrix { common, kappa, dump } => smatrix(&common, kappa, dump),
        Command::Diagnose(c) => diagnose(&c),
        Command::Verify { suite, samples, seed, out } => {
            let rep = run_suite(suite, VerifyOptions { samples, seed })?;
            print!("{}", rep.to_text());
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_vec_pretty(&rep)?).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(rep.passed)
        }
    }
}

fn staged(c: &Common, stages: &[Stage]) -> Result<bool> {
    let cfg = c.load()?;
    let outcome = run_stages(&cfg, stages)?;
    if let Some(r) = &outcome.results.report {
        print!("{}", r.to_text());
    }
    println!("artifacts in {}", outcome.dir.display());
    Ok(outcome.passed())
}

fn system_of(cfg: &ExperimentConfig) -> Result<(qgraph::GraphSpec, qgraph::ScatteringSystem)> {
    let g = &cfg.graph;
    let graph = build_graph(g.vertices, g.leads, (g.length_min, g.length_max), g.seed).map_err(|e| ConfigError::new("graph", e))?;
    let sys = build_system(&graph, &cfg.vertices).map_err(|e| ConfigError::new("vertices", e))?;
    Ok((graph, sys))
}

fn emit(cfg: &ExperimentConfig, file: &str, value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    if let Some(dir) = &cfg.output_dir {
        ArtifactDir::create(dir)?.write_json(file, value)?;
    }
    Ok(())
}

fn smatrix(c: &Common, kappa: f64, dump: bool) -> Result<bool> {
    let cfg = c.load()?;
    let (graph, sys) = system_of(&cfg)?;
    let phases = sample_phases(&graph, &mut stream_rng(cfg.sampling.seed, 0));
    let s = sys.evaluate_s(&phases, kappa)?;
    let n = s.s.nrows();
    let entries: Vec<Vec<[f64; 2]>> = (0..n).map(|i| (0..n).map(|j| [s.s[(i, j)].re, s.s[(i, j)].im]).collect()).collect();
    let unitarity = unitarity_residual(s.s.as_ref());
    let symmetry = symmetry_residual(s.s.as_ref());
    let value = json!({
        "seed": cfg.sampling.seed,
        "kappa": kappa,
        "phases": phases,
        "s": entries,
        "condition": s.condition,
        "unitarity_residual": unitarity,
        "symmetry_residual": symmetry,
    });
    emit(&cfg, "smatrix_sample.json", &value)?;
    if dump {
        let dir = cfg.output_dir.clone().ok_or_else(|| ConfigError::new("output_dir", "--dump needs an output directory"))?;
        sys.write_dump(&dir.join("dump"))?;
    }
    Ok(unitarity < 1e-9 && symmetry < 1e-12)
}

const MAX_TRAJECTORY_TERMS: usize = 5000;

fn diagnose(c: &Common) -> Result<bool> {
    let cfg = c.load()?;
    let (graph, sys) = system_of(&cfg)?;
    let gap = sys.classical_map_gap()?;
    let phases = sample_phases(&graph, &mut stream_rng(cfg.sampling.seed, 0));
    let radius = sys.propagator_spectral_radius(&phases, 0.0)?;
    let trajectories = if radius < 1.0 - 1e-10 {
        let terms = (((1e-11f64).ln() / radius.ln()).ceil() as usize + 200).min(MAX_TRAJECTORY_TERMS);
        let tr = sys.trajectory_sum(&phases, 0.0, terms)?;
        json!({ "terms": terms, "final_residual": tr.residual })
    } else {
        json!({ "terms": 0, "note": "closed system, the expansion does not converge" })
    };
    let value = json!({
        "classical_gap": gap.gap,
        "leading_moduli": gap.moduli.iter().take(5).collect::<Vec<_>>(),
        "spectral_radius": radius,
        "trajectories": trajectories,
    });
    emit(&cfg, "diagnose.json", &value)?;
    Ok(true)
}
