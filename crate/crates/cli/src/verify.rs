//! Invariant batteries behind `qgraph verify`.
//!
//! Each battery measures; [`run_suite`] applies the pass thresholds.

use std::f64::consts::TAU;
use std::fmt;

use anyhow::Result;
use qgraph::correlator::{sweep_offsets, MeanSEstimate};
use qgraph::linalg::{symmetry_residual, unitarity_residual, CMat};
use qgraph::rng::{derive_seed, stream_rng};
use qgraph::{
    build_closed_graph, build_graph, build_system, correlation_curve, distribution_report, ericson_pq, ericson_two_point,
    ericson_width, estimate_mean_s, fit_lorentzian, goe_calibrate, goe_correlation_curve, mean_level_density,
    sample_phases, CalibrationPlan, CalibrationRecord, CorrelatorEstimate, CurvePoint,
    DistributionReport, Ensemble, Error, Factor, GoeSweep, LorentzianFit, SampleSet, SamplingPlan, ScaledPoint,
    Sweep, VertexFamily, C64,
};
use rand::Rng;
use serde::Serialize;

use crate::config::{CorrelatorEntry, Pool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Unitarity,
    MeanS,
    TwoPoint,
    Ericson,
    Gap,
    Trajectories,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Unitarity => "unitarity",
            Suite::MeanS => "mean-s",
            Suite::TwoPoint => "two-point",
            Suite::Ericson => "ericson",
            Suite::Gap => "gap",
            Suite::Trajectories => "trajectories",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------- unitarity

#[derive(Debug, Clone, Copy)]
pub struct UnitarityParams {
    pub systems: usize,
    pub samples_per_system: usize,
    pub max_vertices: usize,
    pub max_leads: usize,
    pub seed: u64,
}

impl Default for UnitarityParams {
    fn default() -> Self {
        Self { systems: 100, samples_per_system: 10, max_vertices: 30, max_leads: 10, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitarityResult {
    pub systems: usize,
    pub evaluations: usize,
    pub kirchhoff_systems: usize,
    pub designed_systems: usize,
    pub max_unitarity: f64,
    pub max_symmetry: f64,
}

/// Random complete graphs, alternating between the two vertex families.
pub fn unitarity_battery(p: &UnitarityParams) -> Result<UnitarityResult> {
    let mut res = UnitarityResult {
        systems: 0,
        evaluations: 0,
        kirchhoff_systems: 0,
        designed_systems: 0,
        max_unitarity: 0.0,
        max_symmetry: 0.0,
    };
    for i in 0..p.systems {
        let mut rng = stream_rng(p.seed, i as u64);
        let v = rng.random_range(2..=p.max_vertices);
        let lambda = rng.random_range(1..=p.max_leads.min(v));
        let g = build_graph(v, lambda, (1.0, 2.0), rng.random())?;
        let family = if i % 2 == 0 {
            res.kirchhoff_systems += 1;
            VertexFamily::Kirchhoff
        } else {
            res.designed_systems += 1;
            VertexFamily::Designed {
                transmissions: (0..lambda).map(|_| rng.random_range(0.0..=1.0)).collect(),
                phi1: rng.random_range(0.0..TAU),
                bond_phases: Default::default(),
                seed: rng.random(),
            }
        };
        let sys = build_system(&g, &family)?;
        let mut done = 0;
        while done < p.samples_per_system {
            let phases = sample_phases(&g, &mut rng);
            let s = match sys.evaluate_s(&phases, 0.0) {
                Ok(s) => s.s,
                Err(Error::Singular { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            res.max_unitarity = res.max_unitarity.max(unitarity_residual(s.as_ref()));
            res.max_symmetry = res.max_symmetry.max(symmetry_residual(s.as_ref()));
            done += 1;
        }
        res.systems += 1;
        res.evaluations += done;
    }
    Ok(res)
}

// ------------------------------------------------------------------- mean S

#[derive(Debug, Clone)]
pub struct MeanSParams {
    pub vertices: usize,
    pub leads: usize,
    pub transmissions: Vec<f64>,
    pub samples: usize,
    pub graph_seed: u64,
    pub vertex_seed: u64,
    pub seed: u64,
}

impl Default for MeanSParams {
    fn default() -> Self {
        Self {
            vertices: 10,
            leads: 3,
            transmissions: vec![0.3, 0.6, 0.9],
            samples: 100_000,
            graph_seed: 1,
            vertex_seed: 2,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeanSResult {
    pub estimate: MeanSEstimate,
    pub rho: Vec<C64>,
    /// Largest `|mean - rho| / stderr` over the diagonal.
    pub max_z_diagonal: f64,
    /// Largest `|mean| / stderr` over the off-diagonal.
    pub max_z_off_diagonal: f64,
}

pub fn mean_s_battery(p: &MeanSParams) -> Result<MeanSResult> {
    let g = build_graph(p.vertices, p.leads, (1.0, 2.0), p.graph_seed)?;
    let sys = build_system(&g, &VertexFamily::designed(p.transmissions.clone(), p.vertex_seed))?;
    let estimate = estimate_mean_s(&sys, &SamplingPlan::new(p.samples, p.seed))?;
    let rho = sys.rho_diag().to_vec();
    let n = p.leads;
    let (mut zd, mut zo) = (0.0f64, 0.0f64);
    for a in 0..n {
        for b in 0..n {
            let target = if a == b { rho[a] } else { C64::new(0.0, 0.0) };
            let z = estimate.entry(a, b).z_score(target);
            if a == b {
                zd = zd.max(z);
            } else {
                zo = zo.max(z);
            }
        }
    }
    Ok(MeanSResult { estimate, rho, max_z_diagonal: zd, max_z_off_diagonal: zo })
}

// ---------------------------------------------------------------- two-point

#[derive(Debug, Clone)]
pub struct TwoPointParams {
    pub vertices: usize,
    pub leads: usize,
    pub transmission: f64,
    pub graph_seed: u64,
    pub vertex_seed: u64,
    /// Offsets per phase draw; each draw costs this many solves.
    pub sweep_points: usize,
    pub graph_draws: usize,
    /// Grid `x = 0, spacing_x, ..., (grid_points - 1) spacing_x`.
    pub grid_points: usize,
    pub spacing_x: f64,
    pub seed: u64,
    pub goe_dim: usize,
    pub goe_calibration: CalibrationPlan,
    pub goe_points: usize,
    pub goe_sweeps_per_draw: usize,
    pub goe_draws: usize,
    pub goe_seed: u64,
}

impl Default for TwoPointParams {
    fn default() -> Self {
        Self {
            vertices: 20,
            leads: 2,
            transmission: 0.5,
            graph_seed: 1,
            vertex_seed: 1,
            sweep_points: 25,
            graph_draws: 800,
            grid_points: 11,
            spacing_x: 1.0,
            seed: 1,
            goe_dim: 400,
            goe_calibration: CalibrationPlan { draws: 5000, energies_per_draw: 4, seed: 2 },
            goe_points: 25,
            goe_sweeps_per_draw: 4,
            goe_draws: 20_000,
            goe_seed: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoPointRow {
    pub x: f64,
    pub graph: CurvePoint,
    pub goe: ScaledPoint,
    pub ericson: [f64; 2],
    /// Combined z-score of graph against GOE.
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoPointResult {
    pub rows: Vec<TwoPointRow>,
    pub graph_transmissions: Vec<f64>,
    pub calibration: CalibrationRecord,
    pub graph_evaluations: usize,
}

/// Graph sweep against the GOE sweep on the same scaled grid, channel pair
/// `(0, 1)`.
pub fn two_point_battery(p: &TwoPointParams) -> Result<TwoPointResult> {
    let g = build_graph(p.vertices, p.leads, (1.0, 2.0), p.graph_seed)?;
    let sys = build_system(&g, &VertexFamily::designed(vec![p.transmission], p.vertex_seed))?;
    let d = mean_level_density(&g);
    let lags: Vec<usize> = (0..p.grid_points).collect();
    let step = p.spacing_x / (TAU * d);
    let offsets = sweep_offsets(&Sweep { points: p.sweep_points, spacing: step })?;
    let set = SampleSet::collect(&sys, &offsets, &SamplingPlan::new(p.graph_draws, p.seed), Ensemble::Phases)?;
    let graph = correlation_curve(&set, &[(0, 1)], &lags)?;

    let t = sys.transmissions();
    let (model, calibration) = goe_calibrate(&t, p.goe_dim, &p.goe_calibration, None)?;
    let sweep = GoeSweep {
        points: p.goe_points,
        spacing_x: p.spacing_x,
        sweeps_per_draw: p.goe_sweeps_per_draw,
        draws: p.goe_draws,
        seed: p.goe_seed,
        batches: qgraph::correlator::DEFAULT_BATCHES,
    };
    let goe = goe_correlation_curve(&model, &[(0, 1)], &lags, &sweep)?;
    let rows = graph
        .into_iter()
        .zip(goe)
        .map(|(gp, op)| {
            let z = qgraph::stats::z_score((gp.mean - op.mean()).norm(), gp.stderr.hypot(op.stderr));
            let e = ericson_two_point(&t, d, gp.kappa, gp.kappa, (0, 1, 0, 1)).unwrap_or(C64::new(f64::NAN, f64::NAN));
            TwoPointRow { x: op.x, graph: gp, goe: op, ericson: [e.re, e.im], z }
        })
        .collect();
    Ok(TwoPointResult { rows, graph_transmissions: t, calibration, graph_evaluations: p.graph_draws * p.sweep_points })
}

// ------------------------------------------------------------------ Ericson

#[derive(Debug, Clone)]
pub struct EricsonParams {
    pub vertices: usize,
    pub leads: usize,
    pub graph_seed: u64,
    pub vertex_seed: u64,
    pub sweep_points: usize,
    pub spacing_x: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for EricsonParams {
    fn default() -> Self {
        Self { vertices: 30, leads: 10, graph_seed: 1, vertex_seed: 1, sweep_points: 12, spacing_x: 2.5, draws: 100, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Compared {
    pub estimate: CorrelatorEstimate,
    pub prediction: [f64; 2],
}

impl Compared {
    pub fn z(&self) -> f64 {
        self.estimate.z_score(C64::new(self.prediction[0], self.prediction[1]))
    }

    /// `|mean - prediction| / |prediction|`.
    pub fn relative_deviation(&self) -> f64 {
        let p = C64::new(self.prediction[0], self.prediction[1]);
        (self.estimate.mean - p).norm() / p.norm()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EricsonResult {
    pub total_transmission: f64,
    pub mean_level_density: f64,
    /// Zero-offset two-point, pooled over `a < b` and all sweep offsets.
    pub off_diagonal: Compared,
    /// Zero-offset `<|S^fl_aa|^2>`, pooled over channels and offsets.
    pub diagonal: Compared,
    pub curve: Vec<CurvePoint>,
    pub fit: LorentzianFit,
    pub expected_half_width: f64,
    pub distribution: DistributionReport,
    /// `<S_ab S_ab conj S_ab>`, pooled over relabelings.
    pub c21: Compared,
    /// `<S_ab S_ab S_ab conj S_ab conj S_ab>`.
    pub c32: Compared,
}

fn curve_as_estimate(p: &CurvePoint, n: usize) -> CorrelatorEstimate {
    CorrelatorEstimate {
        mean: p.mean,
        stderr: p.stderr,
        stderr_re: p.stderr_re,
        stderr_im: p.stderr_im,
        n_samples: n,
        n_effective: n,
        rejected_samples: 0,
        warning: None,
    }
}

fn pooled_compare(
    set: &SampleSet,
    entry: &CorrelatorEntry,
    lambda: usize,
    t: &[f64],
    d: f64,
    s_means: &[C64],
) -> Result<Compared> {
    let specs = entry.relabeled(lambda)?;
    let estimate = set.estimate_pooled(&specs)?;
    let pred = specs.iter().map(|s| ericson_pq(s, t, d, s_means)).sum::<qgraph::Result<C64>>()? / specs.len() as f64;
    Ok(Compared { estimate, prediction: [pred.re, pred.im] })
}

/// Strong-absorption system with unit transmissions: zero-offset two-point
/// functions, Lorentzian width, Gaussian moments and vanishing `P != Q`.
pub fn ericson_battery(p: &EricsonParams) -> Result<EricsonResult> {
    let g = build_graph(p.vertices, p.leads, (1.0, 2.0), p.graph_seed)?;
    let sys = build_system(&g, &VertexFamily::designed(vec![1.0], p.vertex_seed))?;
    let t = sys.transmissions();
    let d = mean_level_density(&g);
    let lambda = p.leads;
    let step = p.spacing_x / (TAU * d);
    let offsets = sweep_offsets(&Sweep { points: p.sweep_points, spacing: step })?;
    let set = SampleSet::collect(&sys, &offsets, &SamplingPlan::new(p.draws, p.seed), Ensemble::Phases)?;

    let off: Vec<(usize, usize)> = (0..lambda).flat_map(|a| (a + 1..lambda).map(move |b| (a, b))).collect();
    let diag: Vec<(usize, usize)> = (0..lambda).map(|a| (a, a)).collect();
    let lags: Vec<usize> = (0..p.sweep_points).collect();
    let curve = correlation_curve(&set, &off, &lags)?;
    let diag0 = correlation_curve(&set, &diag, &[0])?;
    let pred = |a: usize, b: usize| ericson_two_point(&t, d, 0.0, 0.0, (a, b, a, b));
    let off_pred = off.iter().map(|&(a, b)| pred(a, b)).sum::<qgraph::Result<C64>>()? / off.len() as f64;
    let diag_pred = diag.iter().map(|&(a, b)| pred(a, b)).sum::<qgraph::Result<C64>>()? / diag.len() as f64;

    let s: Vec<f64> = curve.iter().map(|c| 2.0 * c.kappa).collect();
    let y: Vec<f64> = curve.iter().map(|c| c.mean.norm_sqr()).collect();
    let sigma: Vec<f64> = curve.iter().map(|c| (2.0 * c.mean.norm() * c.stderr).max(1e-300)).collect();
    let fit = fit_lorentzian(&s, &y, Some(&sigma))?;

    let distribution = distribution_report(&set, &off)?;
    let s_means = sys.rho_diag().to_vec();
    let entry = |name: &str, p: Vec<Factor>, q: Vec<Factor>| CorrelatorEntry {
        name: name.into(),
        p,
        q,
        pool: Some(Pool { fixed: vec![] }),
    };
    let f01 = Factor::new(0, 1, 0.0);
    let c21 = pooled_compare(&set, &entry("c21", vec![f01; 2], vec![f01]), lambda, &t, d, &s_means)?;
    let c32 = pooled_compare(&set, &entry("c32", vec![f01; 3], vec![f01; 2]), lambda, &t, d, &s_means)?;

    Ok(EricsonResult {
        total_transmission: t.iter().sum(),
        mean_level_density: d,
        off_diagonal: Compared { estimate: curve_as_estimate(&curve[0], set.len()), prediction: [off_pred.re, off_pred.im] },
        diagonal: Compared { estimate: curve_as_estimate(&diag0[0], set.len()), prediction: [diag_pred.re, diag_pred.im] },
        expected_half_width: ericson_width(&t, d)?,
        curve,
        fit,
        distribution,
        c21,
        c32,
    })
}

#[derive(Debug, Clone)]
pub struct AsymmetricParams {
    pub vertices: usize,
    pub leads: usize,
    /// Transmission of channel 0; the others are 1.
    pub t0: f64,
    pub graph_seed: u64,
    pub vertex_seed: u64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for AsymmetricParams {
    fn default() -> Self {
        Self { vertices: 30, leads: 10, t0: 0.75, graph_seed: 1, vertex_seed: 1, samples: 300, seed: 1 }
    }
}

/// `<S_00 S_0b conj S_0b>` with channel 0 partly reflecting, pooled over
/// `b != 0`.
pub fn asymmetric_battery(p: &AsymmetricParams) -> Result<Compared> {
    let g = build_graph(p.vertices, p.leads, (1.0, 2.0), p.graph_seed)?;
    let mut t = vec![1.0; p.leads];
    t[0] = p.t0;
    let sys = build_system(&g, &VertexFamily::designed(t, p.vertex_seed))?;
    let set = SampleSet::collect(&sys, &[0.0], &SamplingPlan::new(p.samples, p.seed), Ensemble::Phases)?;
    let entry = CorrelatorEntry {
        name: "c21-diagonal".into(),
        p: vec![Factor::new(0, 0, 0.0), Factor::new(0, 1, 0.0)],
        q: vec![Factor::new(0, 1, 0.0)],
        pool: Some(Pool { fixed: vec![0] }),
    };
    let d = mean_level_density(&g);
    pooled_compare(&set, &entry, p.leads, &sys.transmissions(), d, sys.rho_diag())
}

// ---------------------------------------------------------------------- gap

#[derive(Debug, Clone, Serialize)]
pub struct GapResult {
    /// Largest `| |lambda| - 1 |` over the triangle spectrum.
    pub triangle_modulus_deviation: f64,
    pub triangle_gap: f64,
    pub complete_vertices: usize,
    pub complete_gap: f64,
}

pub fn gap_battery(complete_vertices: usize, seed: u64) -> Result<GapResult> {
    let tri = build_system(&build_closed_graph(3, (1.0, 2.0), seed)?, &VertexFamily::Kirchhoff)?;
    let r = tri.classical_map_gap()?;
    let dev = r.moduli.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    let big = build_system(&build_closed_graph(complete_vertices, (1.0, 2.0), seed)?, &VertexFamily::Kirchhoff)?;
    Ok(GapResult {
        triangle_modulus_deviation: dev,
        triangle_gap: r.gap,
        complete_vertices,
        complete_gap: big.classical_map_gap()?.gap,
    })
}

// ------------------------------------------------------------- trajectories

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryResult {
    pub spectral_radius: f64,
    /// Independent estimate by power iteration on `Sigma D`.
    pub power_radius: f64,
    pub terms: usize,
    /// Geometric-mean decay ratio of the residual between `1e-3` and `1e-10`.
    pub decay_ratio: f64,
    pub final_residual: f64,
}

const POWER_ITERATIONS: usize = 20_000;

pub fn trajectory_battery(vertices: usize, leads: usize, graph_seed: u64, vertex_seed: u64, seed: u64) -> Result<TrajectoryResult> {
    let g = build_graph(vertices, leads, (1.0, 2.0), graph_seed)?;
    let sys = build_system(&g, &VertexFamily::designed(vec![1.0], vertex_seed))?;
    let phases = sample_phases(&g, &mut stream_rng(seed, 0));
    let r = sys.propagator_spectral_radius(&phases, 0.0)?;
    let terms = ((1e-11f64).ln() / r.ln()).ceil() as usize + 200;
    let tr = sys.trajectory_sum(&phases, 0.0, terms)?;
    let from = tr.residuals.iter().position(|&x| x < 1e-3).unwrap_or(0);
    let to = tr.residuals.iter().rposition(|&x| x > 1e-10).unwrap_or(tr.residuals.len() - 1);
    let decay_ratio = if to > from { tr.decay_ratio(from, to) } else { f64::NAN };

    let dvec = sys.propagation(&phases, 0.0);
    let n = sys.num_directed();
    let m = CMat::from_fn(n, n, |i, j| sys.sigma_b()[(i, j)] * dvec[j]);
    let mut x = CMat::from_fn(n, 1, |i, _| C64::new(1.0 + i as f64 * 0.01, 0.3));
    let mut logs = 0.0;
    for it in 0..POWER_ITERATIONS {
        x = &m * &x;
        let nx = x.norm_l2();
        if it >= POWER_ITERATIONS / 2 {
            logs += nx.ln();
        }
        x = CMat::from_fn(n, 1, |i, _| x[(i, 0)] / nx);
    }
    let power_radius = (logs / (POWER_ITERATIONS / 2) as f64).exp();
    Ok(TrajectoryResult { spectral_radius: r, power_radius, terms, decay_ratio, final_residual: tr.residual })
}

// ------------------------------------------------------------------- suites

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub requirement: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<CheckLine>,
    pub passed: bool,
    pub details: serde_json::Value,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self { suite, checks: Vec::new(), passed: true, details: serde_json::Value::Null }
    }

    fn check(&mut self, name: &str, value: f64, requirement: &str, passed: bool) {
        self.passed &= passed;
        self.checks.push(CheckLine { name: name.into(), value, requirement: requirement.into(), passed });
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{} {}/{}: {:.6e} ({})\n",
                if c.passed { "PASS" } else { "FAIL" },
                self.suite,
                c.name,
                c.value,
                c.requirement
            ));
        }
        s.push_str(&format!("{}: {}\n", self.suite, if self.passed { "PASS" } else { "FAIL" }));
        s
    }
}

/// Sample count and seed overrides for a suite.
#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

const Z_LIMIT: f64 = 3.0;

pub fn run_suite(suite: Suite, o: VerifyOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(suite);
    match suite {
        Suite::Unitarity => {
            let mut p = UnitarityParams::default();
            p.systems = o.samples.unwrap_or(p.systems);
            p.seed = o.seed.unwrap_or(p.seed);
            let r = unitarity_battery(&p)?;
            rep.check("max |S^dag S - 1|", r.max_unitarity, "< 1e-9", r.max_unitarity < 1e-9);
            rep.check("max |S - S^T|", r.max_symmetry, "< 1e-12", r.max_symmetry < 1e-12);
            rep.details = serde_json::to_value(&r)?;
        }
        Suite::MeanS => {
            let mut p = MeanSParams::default();
            p.samples = o.samples.unwrap_or(p.samples);
            p.seed = o.seed.unwrap_or(p.seed);
            let r = mean_s_battery(&p)?;
            rep.check("diagonal |z| vs rho", r.max_z_diagonal, "< 4", r.max_z_diagonal < 4.0);
            rep.check("off-diagonal |z| vs 0", r.max_z_off_diagonal, "< 4", r.max_z_off_diagonal < 4.0);
            rep.details = serde_json::to_value(&r.estimate)?;
        }
        Suite::TwoPoint => {
            let mut p = TwoPointParams::default();
            p.graph_draws = o.samples.unwrap_or(p.graph_draws);
            if let Some(s) = o.seed {
                p.seed = s;
                p.goe_seed = derive_seed(s, 1);
                p.goe_calibration.seed = derive_seed(s, 2);
            }
            let r = two_point_battery(&p)?;
            for row in &r.rows {
                rep.check(&format!("graph vs GOE |z| at x={}", row.x), row.z, "< 3", row.z < Z_LIMIT);
            }
            rep.details = serde_json::to_value(&r)?;
        }
        Suite::Ericson => {
            let mut p = EricsonParams::default();
            p.draws = o.samples.unwrap_or(p.draws);
            p.seed = o.seed.unwrap_or(p.seed);
            let r = ericson_battery(&p)?;
            let rel = |c: &Compared| c.relative_deviation();
            rep.check("off-diagonal two-point relative deviation", rel(&r.off_diagonal), "< 0.1", rel(&r.off_diagonal) < 0.1);
            rep.check("diagonal two-point relative deviation", rel(&r.diagonal), "< 0.1", rel(&r.diagonal) < 0.1);
            let w = (r.fit.half_width / r.expected_half_width - 1.0).abs();
            rep.check("Lorentzian half-width relative deviation", w, "< 0.1", w < 0.1);
            rep.check("(2,1) |z| vs prediction", r.c21.z(), "< 3", r.c21.z() < Z_LIMIT);
            rep.check("(3,2) |z| vs prediction", r.c32.z(), "< 3", r.c32.z() < Z_LIMIT);
            let mut a = AsymmetricParams::default();
            a.samples = o.samples.map_or(a.samples, |n| n * 3);
            a.seed = o.seed.unwrap_or(a.seed);
            let c = asymmetric_battery(&a)?;
            rep.check("(2,1) diagonal-selected |z| vs prediction", c.z(), "< 3", c.z() < Z_LIMIT);
            rep.details = serde_json::json!({ "symmetric": r, "asymmetric": c });
        }
        Suite::Gap => {
            let r = gap_battery(20, o.seed.unwrap_or(1))?;
            rep.check("triangle max ||lambda| - 1|", r.triangle_modulus_deviation, "< 1e-12", r.triangle_modulus_deviation < 1e-12);
            rep.check("triangle gap", r.triangle_gap.abs(), "< 1e-12", r.triangle_gap.abs() < 1e-12);
            rep.check("complete V=20 gap", r.complete_gap, "> 0.05", r.complete_gap > 0.05);
            rep.details = serde_json::to_value(&r)?;
        }
        Suite::Trajectories => {
            let r = trajectory_battery(5, 2, 1, 1, o.seed.unwrap_or(1))?;
            let dev = (r.decay_ratio - r.spectral_radius).abs();
            rep.check("|decay ratio - spectral radius|", dev, "< 0.05", dev < 0.05);
            let pdev = (r.power_radius - r.spectral_radius).abs();
            rep.check("|power iteration - spectral radius|", pdev, "< 0.01", pdev < 0.01);
            rep.check("final residual", r.final_residual, "< 1e-8", r.final_residual < 1e-8);
            rep.details = serde_json::to_value(&r)?;
        }
    }
    Ok(rep)
}
