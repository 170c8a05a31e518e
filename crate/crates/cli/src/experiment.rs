//! Staged experiment runs writing a reproducible artifact directory.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use qgraph::correlator::{sweep_offsets, write_curve_csv, CorrelatorRecord};
use qgraph::linalg::{cis, symmetry_residual, unitarity_residual};
use qgraph::rng::{derive_seed, stream_rng};
use qgraph::system::matrix_to_bytes;
use qgraph::{
    build_graph, build_system, correlation_curve, distribution_report, ericson_pq, ericson_two_point, ericson_width,
    fit_lorentzian, goe_calibrate, goe_correlation_curve, mean_level_density, sample_phases, CalibrationRecord,
    CorrelatorEstimate, CurvePoint, DistributionReport, Ensemble, GoeSweep, GraphSpec, LorentzianFit, SampleSet,
    ScaledPoint, ScatteringSystem, Sweep, VertexFamily, C64,
};
use serde::Serialize;

use crate::artifacts::{sha256_hex, ArtifactDir, Csv};
use crate::config::{Check, ConfigError, ExperimentConfig};
use crate::report::{Metric, Report};

const SMATRIX_SALT: u64 = 0x736d_6174;
const SWEEP_SALT: u64 = 0x7377_6565_70;
const SMATRIX_SAMPLES: usize = 10;
const UNITARITY_LIMIT: f64 = 1e-9;
const SYMMETRY_LIMIT: f64 = 1e-12;
const SWAP_LIMIT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Graph,
    System,
    Smatrix,
    Predictions,
    Correlators,
    Sweep,
    Oracle,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Graph,
        Stage::System,
        Stage::Smatrix,
        Stage::Predictions,
        Stage::Correlators,
        Stage::Sweep,
        Stage::Oracle,
        Stage::Report,
    ];
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemSummary {
    pub num_vertices: usize,
    pub num_bonds: usize,
    pub num_channels: usize,
    pub vertex_family: VertexFamily,
    pub transmissions: Vec<f64>,
    pub rho: Vec<[f64; 2]>,
    pub mean_level_density: f64,
    pub classical_gap: f64,
    pub sigma_b_sha256: String,
    pub coupling_sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmatrixSummary {
    pub samples: usize,
    pub seed: u64,
    pub max_unitarity_residual: f64,
    pub max_symmetry_residual: f64,
    pub max_condition: f64,
    /// Largest deviation from `exp(i phi) sigma_x`, two-channel graphs only.
    pub swap_deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelatorResult {
    pub name: String,
    pub pooled_over: usize,
    #[serde(flatten)]
    pub record: CorrelatorRecord,
    pub n_effective: usize,
    pub warning: Option<String>,
    #[serde(skip)]
    pub estimate: CorrelatorEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub name: String,
    pub factors: String,
    pub value: Option<[f64; 2]>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub fit: LorentzianFit,
    pub expected_half_width: f64,
}

/// Everything computed by a run, in memory.
#[derive(Debug, Default)]
pub struct Results {
    pub system: Option<SystemSummary>,
    pub smatrix: Option<SmatrixSummary>,
    pub predictions: Vec<Prediction>,
    pub curve_predictions: Vec<Option<C64>>,
    pub correlators: Vec<CorrelatorResult>,
    pub curve: Option<Vec<CurvePoint>>,
    pub fit: Option<FitSummary>,
    pub distribution: Option<DistributionReport>,
    pub calibration: Option<CalibrationRecord>,
    pub goe_curve: Option<Vec<ScaledPoint>>,
    pub report: Option<Report>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub name: String,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<&'static str, u64>,
    pub stages: Vec<Stage>,
    pub status: &'static str,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub results: Results,
    pub manifest: Manifest,
}

impl RunOutcome {
    /// True when no stage failed and the report, if any, passed.
    pub fn passed(&self) -> bool {
        self.manifest.failed_stage.is_none() && self.results.report.as_ref().is_none_or(|r| r.passed)
    }
}

struct Runner {
    cfg: ExperimentConfig,
    graph: Option<GraphSpec>,
    sys: Option<ScatteringSystem>,
    sweep_set: Option<SampleSet>,
    results: Results,
}

/// Run the given stages of `cfg`. Stage failures stop the run; the files
/// written so far stay and the manifest marks the run as partial.
pub fn run_stages(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| ConfigError::new("output_dir", "no output directory; set output_dir or pass --out"))?;
    let mut out = ArtifactDir::create(&dir)?;
    out.write_json("config.json", cfg)?;
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();

    let mut ctx = Runner { cfg: cfg.clone(), graph: None, sys: None, sweep_set: None, results: Results::default() };
    let mut failure = None;
    for &stage in &stages {
        log::info!("stage {stage:?}");
        if let Err(e) = ctx.run(stage, &mut out) {
            log::error!("stage {stage:?} failed: {e:#}");
            failure = Some((stage, e));
            break;
        }
    }

    let mut versions = BTreeMap::new();
    versions.insert("qgraph-cli", env!("CARGO_PKG_VERSION"));
    versions.insert("qgraph", qgraph::VERSION);
    let manifest = Manifest {
        name: cfg.name.clone(),
        versions,
        config_sha256: sha256_hex(&serde_json::to_vec(cfg)?),
        config: cfg.clone(),
        seeds: seeds(cfg),
        stages: stages.clone(),
        status: if failure.is_some() { "partial" } else { "complete" },
        failed_stage: failure.as_ref().map(|f| f.0),
        error: failure.as_ref().map(|f| format!("{:#}", f.1)),
        files: out.digests().clone(),
    };
    out.write_json("manifest.json", &manifest)?;
    if let Some((stage, e)) = failure {
        return Err(e.context(format!("stage {stage:?} failed; partial results in {}", dir.display())));
    }
    Ok(RunOutcome { dir, results: ctx.results, manifest })
}

/// All stages.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    run_stages(cfg, &Stage::ALL)
}

fn seeds(cfg: &ExperimentConfig) -> BTreeMap<&'static str, u64> {
    let mut s = BTreeMap::new();
    s.insert("graph", cfg.graph.seed);
    if let VertexFamily::Designed { seed, .. } = cfg.vertices {
        s.insert("vertices", seed);
    }
    s.insert("sampling", cfg.sampling.seed);
    s.insert("smatrix", derive_seed(cfg.sampling.seed, SMATRIX_SALT));
    if cfg.sweep.is_some() {
        s.insert("sweep", derive_seed(cfg.sampling.seed, SWEEP_SALT));
    }
    if let Some(o) = &cfg.oracle {
        s.insert("oracle", o.seed);
        s.insert("calibration", o.calibration.seed);
        if let Some(m) = o.mixing_seed {
            s.insert("oracle_mixing", m);
        }
    }
    s
}

fn c2(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Offset step of the sweep in wave-number units.
fn sweep_step(spacing_x: f64, d: f64) -> f64 {
    spacing_x / (2.0 * PI * d)
}

fn describe(spec: &qgraph::CorrelatorSpec) -> String {
    let mut s = String::new();
    for f in &spec.p {
        s.push_str(&format!("S{}.{}(+{})", f.row, f.col, f.offset));
    }
    for f in &spec.q {
        s.push_str(&format!("S{}.{}*(-{})", f.row, f.col, f.offset));
    }
    s
}

impl Runner {
    fn graph(&self) -> Result<&GraphSpec> {
        self.graph.as_ref().ok_or_else(|| anyhow!("graph stage did not run"))
    }

    fn sys(&self) -> Result<&ScatteringSystem> {
        self.sys.as_ref().ok_or_else(|| anyhow!("system stage did not run"))
    }

    fn run(&mut self, stage: Stage, out: &mut ArtifactDir) -> Result<()> {
        match stage {
            Stage::Graph => self.graph_stage(out),
            Stage::System => self.system_stage(out),
            Stage::Smatrix => self.smatrix_stage(out),
            Stage::Predictions => self.predictions_stage(out),
            Stage::Correlators => self.correlators_stage(out),
            Stage::Sweep => self.sweep_stage(out),
            Stage::Oracle => self.oracle_stage(out),
            Stage::Report => self.report_stage(out),
        }
    }

    fn graph_stage(&mut self, out: &mut ArtifactDir) -> Result<()> {
        let g = &self.cfg.graph;
        let graph = build_graph(g.vertices, g.leads, (g.length_min, g.length_max), g.seed)
            .map_err(|e| ConfigError::new("graph", e))?;
        out.write_json("graph.json", &graph)?;
        self.graph = Some(graph);
        Ok(())
    }

    fn system_stage(&mut self, out: &mut ArtifactDir) -> Result<()> {
        let g = self.graph()?;
        let sys = build_system(g, &self.cfg.vertices).map_err(|e| ConfigError::new("vertices", e))?;
        let gap = sys.classical_map_gap().context("classical map spectrum")?;
        let summary = SystemSummary {
            num_vertices: g.num_vertices(),
            num_bonds: g.num_bonds(),
            num_channels: g.num_channels(),
            vertex_family: self.cfg.vertices.clone(),
            transmissions: sys.transmissions(),
            rho: sys.rho_diag().iter().map(|&z| c2(z)).collect(),
            mean_level_density: mean_level_density(g),
            classical_gap: gap.gap,
            sigma_b_sha256: sha256_hex(&matrix_to_bytes(sys.sigma_b())),
            coupling_sha256: sha256_hex(&matrix_to_bytes(sys.coupling())),
        };
        out.write_json("system.json", &summary)?;
        self.results.system = Some(summary);
        self.sys = Some(sys);
        Ok(())
    }

    fn smatrix_stage(&mut self, out: &mut ArtifactDir) -> Result<()> {
        let sys = self.sys()?;
        let seed = derive_seed(self.cfg.sampling.seed, SMATRIX_SALT);
        let (mut unit, mut sym, mut cond) = (0.0f64, 0.0f64, 0.0f64);
        let mut swap: Option<f64> = None;
        let two_channel_bond = sys.num_channels() == 2 && sys.graph().num_bonds() == 1;
        for i in 0..SMATRIX_SAMPLES {
            let mut rng = stream_rng(seed, i as u64);
            let phases = sample_phases(sys.graph(), &mut rng);
            let s = sys.evaluate_s(&phases, 0.0)?;
            unit = unit.max(unitarity_residual(s.s.as_ref()));
            sym = sym.max(symmetry_residual(s.s.as_ref()));
            cond = cond.max(s.condition);
            if two_channel_bond {
                let e = cis(phases[0]);
                let dev = [s.s[(0, 0)].norm(), s.s[(1, 1)].norm(), (s.s[(0, 1)] - e).norm(), (s.s[(1, 0)] - e).norm()]
                    .into_iter()
                    .fold(0.0, f64::max);
                swap = Some(swap.unwrap_or(0.0).max(dev));
            }
        }
        let summary = SmatrixSummary {
            samples: SMATRIX_SAMPLES,
            seed,
            max_unitarity_residual: unit,
            max_symmetry_residual: sym,
            max_condition: cond,
            swap_deviation: swap,
        };
        out.write_json("smatrix.json", &summary)?;
        self.results.smatrix = Some(summary);
        Ok(())
    }

    fn predictions_stage(&mut self, out: &mut ArtifactDir) -> Result<()> {
        let sys = self.sys()?;
        let t = sys.transmissions();
        let d = mean_level_density(sys.graph());
        let s_means: Vec<C64> = sys.rho_diag().to_vec();
        let lambda = sys.num_channels();
        let mut csv = Csv::new(&["name", "factors", "re", "im"]);
        let mut predictions = Vec::new();
        for entry in &self.cfg.correlators {
            let specs = entry.relabeled(lambda)?;
            let value: qgraph::Result<C64> = specs
                .iter()
                .try_fold(C64::new(0.0, 0.0), |acc, s| Ok(acc + ericson_pq(s, &t, d, &s_means)?))
                .map(|sum| sum / specs.len() as f64);
            let factors = describe(&entry.spec());
            let (value, note) = match value {
                Ok(z) => (Some(c2(z)), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let [re, im] = value.map_or(["nan".to_string(), "nan".to_string()], |v| v.map(|x| x.to_string()));
            csv.row([entry.name.clone(), factors.clone(), re, im]);
            predictions.push(Prediction { name: entry.name.clone(), factors, value, note });
        }
        let mut curve = Vec::new();
        if let Some(sw) = &self.cfg.sweep {
            let pairs = sw.pairs.resolve(lambda);
            let step = sweep_step(sw.spacing_x, d);
            for m in sw.lags() {
                let kappa = m as f64 * step / 2.0;
                let value: qgraph::Result<C64> = pairs
                    .iter()
                    .try_fold(C64::new(0.0, 0.0), |acc, &(a, b)| {
                        Ok(acc + ericson_two_point(&t, d, kappa, kappa, (a, b, a, b))?)
                    })
                    .map(|sum| sum / pairs.len() as f64);
                let value = value.ok();
                let [re, im] = value.map_or(["nan".to_string(), "nan".to_string()], |z| [z.re.to_string(), z.im.to_string()]);
                csv.row([format!("curve-lag-{m}"), format!("pairs(+{kappa})pairs*(-{kappa})"), re, im]);
                curve.push(value);
            }
        }
        out.write("predictions.csv", &csv.into_bytes())?;
        out.write_json("predictions.json", &predictions)?;
        self.results.predictions = predictions;
        self.results.curve_predictions = curve;
        Ok(())
    }

    fn correlators_stage(&mut self, out: &mut ArtifactDir) -> Result<()> {
        if self.cfg.correlators.is_empty() {
            return Ok(());
        }
        let lambda = self.sys()?.num_channels();
        let pooled: Vec<Vec<qgraph::CorrelatorSpec>> =
            self.cfg.correlators.iter().map(|e| e.relabeled(lambda)).collect::<qgraph::Result<_>>()?;
        let all: Vec<qgraph::CorrelatorSpec> = pooled.iter().flatten().cloned().collect();
        let offsets = qgraph::correlator::union_offsets(&all);
        // the sweep draws serve the correlators too when every offset is on
        // the sweep grid
        let on_grid = matches!(self.sweep_offsets()?, Some(grid) if offsets.iter().all(|o| grid.contains(o)));
        let own = if on_grid {
            self.sweep_set()?;
            None
        } else {
            Some(SampleSet::collect(self.sys()?, &offsets, &self.cfg.sampling, Ensemble::Phases)?)
        };
        let set = own.as_ref().or(self.sweep_set.as_ref()).expect("collected above");
        let mut results = Vec::new();
        let mut csv = Csv::new(&["name", "factors", "pooled_over", "mean_re", "mean_im", "stderr", "n", "rejects"]);
        for (entry, specs) in self.cfg.correlators.iter().zip(&pooled) {
            let est = set.estimate_pooled(specs)?;
            if let Some(w) = &est.warning {
                log::warn!("{}: {w}", entry.name);
            }
            let record = est.record(&entry.spec());
            csv.row([
                entry.name.clone(),
                describe(&entry.spec()),
                specs.len().to_string(),
                record.mean_re.to_string(),
                record.mean_im.to_string(),
                record.stderr.to_string(),
                record.n.to_string(),
                record.rejects.to_string(),
            ]);
            results.push(CorrelatorResult {
                name: entry.name.clone(),
                pooled_over: specs.len(),
                record,
                n_effective: est.n_effective,
                warning: est.warning.clone(),
                estimate: est,
            });
        }
        let distribution = match (&self.cfg.distribution, &self.cfg.sweep) {
            (Some(pairs), None) => Some(distribution_report(set, &pairs.resolve(lambda))?),
            _ => None,
        };
        out.write_json("correlators.json", &results)?;
        out.write("correlators.csv", &csv.into_bytes())?;
        self.results.correlators = results;
        if let Some(rep) = distribution {
            self.write_distribution(rep, out)?;
        }
        Ok(())
    }

    fn write_distribution(&mut self, rep: DistributionReport, out: &mut ArtifactDir) -> Result<()> {
        out.write_json("distribution.json", &rep)?;
        let mut bytes = Vec::new();
        rep.histogram.write_csv(&mut bytes)?;
        out.write("histogram.csv", &bytes)?;
        self.results.distribution = Some(rep);
        Ok(())
    }

    fn sweep_offsets(&self) -> Result<Option<Vec<f64>>> {
        let Some(sw) = &self.cfg.sweep else {
            return Ok(None);
        };
        let d = mean_level_density(self.graph()?);
        Ok(Some(sweep_offsets(&Sweep { points: sw.points, spacing: sweep_step(sw.spacing_x, d) })?))
    }

    /// Phase draws at the sweep offsets, collected once.
    fn sweep_set(&mut self) -> Result<&SampleSet> {
        if self.sweep_set.is_none() {
            let offsets = self.sweep_offsets()?.ok_or_else(|| anyhow!("no sweep configured"))?;
            let plan = qgraph::SamplingPlan { seed: derive_seed(self.cfg.sampling.seed, SWEEP_SALT), ..self.cfg.sampling };
            self.sweep_set = Some(SampleSet::collect(self.sys()?, &offsets, &plan, Ensemble::Phases)?);
        }
        Ok(self.sweep_set.as_ref().expect("just filled"))
    }

    fn sweep_stage(&mut self, out: &mut ArtifactDir) -> Result<()> {
        let Some(sw) = self.cfg.sweep.clone() else {
            return Ok(());
        };
        let (d, t, lambda) = {
            let sys = self.sys()?;
            (mean_level_density(sys.graph()), sys.transmissions(), sys.num_channels())
        };
        let pairs = sw.pairs.resolve(lambda);
        let dist_pairs = self.cfg.distribution.clone();
        let set = self.sweep_set()?;
        let curve = correlation_curve(set, &pairs, &sw.lags())?;
        let distribution = match &dist_pairs {
            Some(p) => Some(distribution_report(set, &p.resolve(lambda))?),
            None => None,
        };
        let mut bytes = Vec::new();
        write_curve_csv(&curve, &mut bytes)?;
        out.write("curve.csv", &bytes)?;
        if sw.fit {
            // |C|^2 against kappa + kappa~, error propagated from C
            let s: Vec<f64> = curve.iter().map(|p| 2.0 * p.kappa).collect();
            let y: Vec<f64> = curve.iter().map(|p| p.mean.norm_sqr()).collect();
            let sigma: Vec<f64> = curve.iter().map(|p| (2.0 * p.mean.norm() * p.stderr).max(1e-300)).collect();
            let fit = fit_lorentzian(&s, &y, Some(&sigma))?;
            let expected_half_width = ericson_width(&t, d)?;
            let summary = FitSummary { fit, expected_half_width };
            out.write_json("fit.json", &summary)?;
            self.results.fit = Some(summary);
        }
        self.results.curve = Some(curve);
        if let Some(rep) = distribution {
            self.write_distribution(rep, out)?;
        }
        Ok(())
    }

    fn oracle_stage(&mut self, out: &mut ArtifactDir) -> Result<()> {
        let (Some(or), Some(sw)) = (self.cfg.oracle.clone(), self.cfg.sweep.clone()) else {
            return Ok(());
        };
        let sys = self.sys()?;
        let (mut model, record) = goe_calibrate(&sys.transmissions(), or.dim, &or.calibration, or.mixing_seed)?;
        if or.mixing_seed.is_none() {
            model = model.with_sampler(or.sampler);
        }
        out.write_json("calibration.json", &record)?;
        let goe_sweep = GoeSweep {
            points: or.points,
            spacing_x: sw.spacing_x,
            sweeps_per_draw: or.sweeps_per_draw,
            draws: or.draws,
            seed: or.seed,
            batches: self.cfg.sampling.batches,
        };
        let curve = goe_correlation_curve(&model, &sw.pairs.resolve(sys.num_channels()), &sw.lags(), &goe_sweep)?;
        let mut csv = Csv::new(&["x", "re", "im", "stderr"]);
        for p in &curve {
            csv.row([p.x.to_string(), p.re.to_string(), p.im.to_string(), p.stderr.to_string()]);
        }
        out.write("goe_curve.csv", &csv.into_bytes())?;
        self.results.calibration = Some(record);
        self.results.goe_curve = Some(curve);
        Ok(())
    }

    fn report_stage(&mut self, out: &mut ArtifactDir) -> Result<()> {
        let cfg = &self.cfg;
        let gated = |c: Check| cfg.checks.contains(&c);
        let z = cfg.z_threshold;
        let r = &self.results;
        let mut rep = Report::new();
        if let Some(sm) = &r.smatrix {
            let g = gated(Check::Unitarity);
            let (u, s) = (sm.max_unitarity_residual, sm.max_symmetry_residual);
            rep.push("unitarity", Check::Unitarity, [u, 0.0], [0.0, 0.0], 0.0, Metric::Absolute, UNITARITY_LIMIT, g);
            rep.push("symmetry", Check::Unitarity, [s, 0.0], [0.0, 0.0], 0.0, Metric::Absolute, SYMMETRY_LIMIT, g);
            if let Some(dev) = sm.swap_deviation {
                rep.push("swap", Check::Swap, [dev, 0.0], [0.0, 0.0], 0.0, Metric::Absolute, SWAP_LIMIT, gated(Check::Swap));
            }
        }
        for (c, p) in r.correlators.iter().zip(&r.predictions) {
            if let Some(pred) = p.value {
                let est = &c.estimate;
                rep.push(
                    format!("ericson:{}", c.name),
                    Check::Ericson,
                    c2(est.mean),
                    pred,
                    est.stderr,
                    Metric::ZScore,
                    z,
                    gated(Check::Ericson),
                );
            }
        }
        if let (Some(curve), Some(sw)) = (&r.curve, &cfg.sweep) {
            for ((pt, m), pred) in curve.iter().zip(sw.lags()).zip(&r.curve_predictions) {
                let x = m as f64 * sw.spacing_x;
                if let Some(pred) = pred {
                    rep.push(format!("curve-ericson:x={x}"), Check::Curve, c2(pt.mean), c2(*pred), pt.stderr, Metric::ZScore, z, gated(Check::Curve));
                }
            }
            if let Some(goe) = &r.goe_curve {
                for (pt, o) in curve.iter().zip(goe) {
                    rep.push(
                        format!("goe:x={}", o.x),
                        Check::Goe,
                        c2(pt.mean),
                        [o.re, o.im],
                        pt.stderr.hypot(o.stderr),
                        Metric::ZScore,
                        z,
                        gated(Check::Goe),
                    );
                }
            }
        }
        if let Some(f) = &r.fit {
            rep.push(
                "width",
                Check::Width,
                [f.fit.half_width, 0.0],
                [f.expected_half_width, 0.0],
                f.fit.half_width_stderr,
                Metric::ZScore,
                z,
                gated(Check::Width),
            );
        }
        if let Some(dr) = &r.distribution {
            rep.push("moment-ratio", Check::Gaussian, [dr.ratio.value, 0.0], [2.0, 0.0], dr.ratio.stderr, Metric::ZScore, z, gated(Check::Gaussian));
        }
        out.write_json("report.json", &rep)?;
        out.write("report.txt", rep.to_text().as_bytes())?;
        self.results.report = Some(rep);
        Ok(())
    }
}
