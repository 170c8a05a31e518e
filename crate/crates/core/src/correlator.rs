//! Monte Carlo estimation of S-matrix averages and correlation functions.
//!
//! Averages over the wave number are replaced by averages over independent
//! uniform bond phases. A correlator with `P` plain and `Q` conjugated
//! factors is estimated from
//!
//! ```text
//! prod_p S^fl_{a_p b_p}(phi; +kappa_p) * prod_q conj(S^fl_{a'_q b'_q}(phi; -kappa~_q))
//! ```
//!
//! with `S^fl = S - diag(rho)`. Every sample `i` draws from its own stream
//! `(seed, i)` and per-sample values are reduced in index order, so the
//! output is independent of the number of worker threads.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::GraphSpec;
use crate::linalg::{CMat, C64};
use crate::rng::{stream_rng, StreamRng};
use crate::stats::{z_score, Batches};
use crate::system::ScatteringSystem;

/// Default number of jackknife batches.
pub const DEFAULT_BATCHES: usize = 50;

/// Give up on a sample after this many singular draws in a row.
const MAX_REDRAWS: usize = 1000;

/// Rejection fraction above which an estimate carries a warning.
const REJECT_WARNING_FRACTION: f64 = 0.01;

/// One matrix element `S_{row,col}` evaluated at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub row: usize,
    pub col: usize,
    #[serde(default)]
    pub offset: f64,
}

impl Factor {
    pub fn new(row: usize, col: usize, offset: f64) -> Self {
        Self { row, col, offset }
    }
}

/// `P` plain factors at `+kappa_p`, `Q` conjugated factors at `-kappa~_q`.
/// Channel indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorSpec {
    pub p: Vec<Factor>,
    #[serde(default)]
    pub q: Vec<Factor>,
}

impl CorrelatorSpec {
    pub fn new(p: Vec<Factor>, q: Vec<Factor>) -> Self {
        Self { p, q }
    }

    /// `<S^fl_ab(+kappa) conj S^fl_cd(-kappa_t)>`.
    pub fn two_point(a: usize, b: usize, c: usize, d: usize, kappa: f64, kappa_t: f64) -> Self {
        Self::new(vec![Factor::new(a, b, kappa)], vec![Factor::new(c, d, kappa_t)])
    }

    pub fn validate(&self, num_channels: usize) -> Result<()> {
        if self.p.is_empty() {
            return Err(param("a correlator needs at least one plain factor"));
        }
        if self.p.len() < self.q.len() {
            return Err(param(format!("P = {} must not be smaller than Q = {}", self.p.len(), self.q.len())));
        }
        for f in self.p.iter().chain(&self.q) {
            if f.row >= num_channels || f.col >= num_channels {
                return Err(param(format!("channel ({}, {}) out of range for {num_channels} channels", f.row, f.col)));
            }
            if !f.offset.is_finite() {
                return Err(param("offsets must be finite"));
            }
        }
        Ok(())
    }

    /// Offsets at which S is evaluated: `+kappa_p` and `-kappa~_q`.
    fn evaluation_offsets(&self) -> impl Iterator<Item = f64> + '_ {
        self.p.iter().map(|f| f.offset).chain(self.q.iter().map(|f| -f.offset))
    }
}

/// Sample count, master seed and jackknife batch count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

impl SamplingPlan {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self { n_samples, seed, batches: DEFAULT_BATCHES }
    }

    fn check(&self) -> Result<()> {
        if self.batches < 2 {
            return Err(param("at least two jackknife batches are required"));
        }
        if self.n_samples < self.batches {
            return Err(param(format!(
                "{} samples cannot fill {} jackknife batches",
                self.n_samples, self.batches
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelatorEstimate {
    #[serde(serialize_with = "ser_complex")]
    pub mean: C64,
    /// Combined error `hypot(stderr_re, stderr_im)`.
    pub stderr: f64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub n_samples: usize,
    /// Sample count an uncorrelated estimator would need for the same error.
    pub n_effective: usize,
    pub rejected_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn ser_complex<S: serde::Serializer>(z: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

impl CorrelatorEstimate {
    /// `|mean - target| / stderr`.
    pub fn z_score(&self, target: C64) -> f64 {
        z_score((self.mean - target).norm(), self.stderr)
    }

    /// Flat record for JSON output.
    pub fn record(&self, spec: &CorrelatorSpec) -> CorrelatorRecord {
        CorrelatorRecord {
            spec: spec.clone(),
            mean_re: self.mean.re,
            mean_im: self.mean.im,
            stderr: self.stderr,
            n: self.n_samples,
            rejects: self.rejected_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorRecord {
    pub spec: CorrelatorSpec,
    pub mean_re: f64,
    pub mean_im: f64,
    pub stderr: f64,
    pub n: usize,
    pub rejects: usize,
}

/// B i.i.d. uniform phases in `[0, 2 pi)`.
pub fn sample_phases<R: Rng + ?Sized>(g: &GraphSpec, rng: &mut R) -> Vec<f64> {
    (0..g.num_bonds()).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect()
}

/// Exact phase average `<S> = diag(rho)`.
pub fn mean_s_analytic(sys: &ScatteringSystem) -> CMat {
    let rho = sys.rho_diag();
    CMat::from_fn(rho.len(), rho.len(), |i, j| if i == j { rho[i] } else { C64::new(0.0, 0.0) })
}

/// Fluctuating S-matrices for a set of Monte Carlo samples.
///
/// Sample `i` holds `S^fl` at every entry of `offsets`, all evaluated from
/// one draw of the phases.
#[derive(Debug, Clone)]
pub struct SampleSet {
    offsets: Vec<f64>,
    fluct: Vec<Vec<CMat>>,
    rejected: usize,
    batches: usize,
}

/// Where the random evaluation point comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ensemble {
    /// Independent uniform bond phases.
    Phases,
    /// Zero phases and a wave number uniform in `[k_start, k_start + width)`.
    WaveNumber { k_start: f64, width: f64 },
}

impl Ensemble {
    /// Interval convention for wave-number averages: `100 / L_min`.
    pub fn wave_number(g: &GraphSpec, k_start: f64) -> Self {
        Ensemble::WaveNumber { k_start, width: 100.0 / g.min_length() }
    }

    fn draw(&self, g: &GraphSpec, rng: &mut StreamRng) -> (Vec<f64>, f64) {
        match *self {
            Ensemble::Phases => (sample_phases(g, rng), 0.0),
            Ensemble::WaveNumber { k_start, width } => {
                (vec![0.0; g.num_bonds()], k_start + width * rng.random::<f64>())
            }
        }
    }
}

impl SampleSet {
    /// Evaluate `S^fl` at all `offsets` for `plan.n_samples` independent
    /// draws. Draws hitting an ill-conditioned solve at any offset are
    /// replaced by a fresh draw from the same stream and counted.
    pub fn collect(sys: &ScatteringSystem, offsets: &[f64], plan: &SamplingPlan, ensemble: Ensemble) -> Result<Self> {
        plan.check()?;
        if offsets.is_empty() {
            return Err(param("no evaluation offsets"));
        }
        if sys.num_channels() == 0 {
            return Err(param("a system without leads has no S-matrix"));
        }
        let mean = mean_s_analytic(sys);
        let rejected = AtomicUsize::new(0);
        let fluct = (0..plan.n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(plan.seed, i as u64);
                for _ in 0..MAX_REDRAWS {
                    let (phases, base) = ensemble.draw(sys.graph(), &mut rng);
                    let evaluated: Result<Vec<CMat>> = offsets
                        .iter()
                        .map(|&o| sys.evaluate_s(&phases, base + o).map(|s| &s.s - &mean))
                        .collect();
                    match evaluated {
                        Ok(v) => return Ok(v),
                        Err(Error::Singular { .. }) => {
                            rejected.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(param(format!("sample {i}: {MAX_REDRAWS} consecutive singular draws")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rejected = rejected.into_inner();
        if rejected > 0 {
            log::debug!("{rejected} draws rejected as ill-conditioned");
        }
        Ok(Self { offsets: offsets.to_vec(), fluct, rejected, batches: plan.batches })
    }

    pub fn len(&self) -> usize {
        self.fluct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fluct.is_empty()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// `S^fl` of sample `i` at offset index `o`.
    pub fn fluct(&self, i: usize, o: usize) -> &CMat {
        &self.fluct[i][o]
    }

    fn offset_index(&self, offset: f64) -> Result<usize> {
        self.offsets
            .iter()
            .position(|&o| o == offset)
            .ok_or_else(|| param(format!("offset {offset} was not sampled")))
    }

    /// Per-sample real observables, reduced by batch jackknife.
    pub fn batches<F>(&self, dims: usize, f: F) -> Result<Batches>
    where
        F: Fn(&[CMat]) -> Vec<f64> + Sync,
    {
        let flat: Vec<f64> = self
            .fluct
            .par_iter()
            .map(|s| {
                let v = f(s);
                debug_assert_eq!(v.len(), dims);
                v
            })
            .flatten()
            .collect();
        Batches::from_flat(&flat, dims, self.batches)
    }

    /// Estimates for several correlators sharing these samples.
    pub fn estimate(&self, specs: &[CorrelatorSpec]) -> Result<Vec<CorrelatorEstimate>> {
        let lookups = specs.iter().map(|s| self.lookup(s)).collect::<Result<Vec<_>>>()?;
        let b = self.batches(2 * specs.len(), |s| {
            lookups
                .iter()
                .flat_map(|l| {
                    let z = l.value(s);
                    [z.re, z.im]
                })
                .collect()
        })?;
        let naive = self.naive_variances(&b, |s| lookups.iter().map(|l| l.value(s)).collect());
        Ok((0..specs.len()).map(|k| self.finish(&b, 2 * k, naive[k])).collect())
    }

    /// One estimate for the average of several correlators, e.g. all
    /// channel pairs related by symmetry.
    pub fn estimate_pooled(&self, specs: &[CorrelatorSpec]) -> Result<CorrelatorEstimate> {
        if specs.is_empty() {
            return Err(param("nothing to pool"));
        }
        let lookups = specs.iter().map(|s| self.lookup(s)).collect::<Result<Vec<_>>>()?;
        let pooled = |s: &[CMat]| lookups.iter().map(|l| l.value(s)).sum::<C64>() / lookups.len() as f64;
        let b = self.batches(2, |s| {
            let z = pooled(s);
            vec![z.re, z.im]
        })?;
        let naive = self.naive_variances(&b, |s| vec![pooled(s)]);
        Ok(self.finish(&b, 0, naive[0]))
    }

    fn lookup(&self, spec: &CorrelatorSpec) -> Result<Lookup> {
        let n = self.fluct.first().map_or(0, |s| s[0].nrows());
        spec.validate(n)?;
        let p = spec
            .p
            .iter()
            .map(|f| Ok((self.offset_index(f.offset)?, f.row, f.col)))
            .collect::<Result<Vec<_>>>()?;
        let q = spec
            .q
            .iter()
            .map(|f| Ok((self.offset_index(-f.offset)?, f.row, f.col)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Lookup { p, q })
    }

    /// Per-quantity sample variance (re + im), for the effective sample size.
    fn naive_variances<F>(&self, b: &Batches, values: F) -> Vec<f64>
    where
        F: Fn(&[CMat]) -> Vec<C64> + Sync,
    {
        let means = b.means();
        let n = self.fluct.len();
        let sums = self
            .fluct
            .par_iter()
            .map(|s| {
                values(s)
                    .iter()
                    .enumerate()
                    .map(|(k, z)| (z - C64::new(means[2 * k], means[2 * k + 1])).norm_sqr())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .reduce(|a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect())
            .unwrap_or_default();
        sums.iter().map(|s| s / (n.max(2) - 1) as f64).collect()
    }

    fn finish(&self, b: &Batches, dim: usize, naive_var: f64) -> CorrelatorEstimate {
        let re = b.mean_estimate(dim);
        let im = b.mean_estimate(dim + 1);
        let stderr = re.stderr.hypot(im.stderr);
        let n = self.fluct.len();
        let n_effective = if stderr > 0.0 {
            ((naive_var / (stderr * stderr)).round() as usize).clamp(1, n)
        } else {
            n
        };
        let warning = (self.rejected as f64 > REJECT_WARNING_FRACTION * n as f64).then(|| {
            format!(
                "{} of {} draws rejected as ill-conditioned",
                self.rejected,
                self.rejected + n
            )
        });
        CorrelatorEstimate {
            mean: C64::new(re.value, im.value),
            stderr,
            stderr_re: re.stderr,
            stderr_im: im.stderr,
            n_samples: n,
            n_effective,
            rejected_samples: self.rejected,
            warning,
        }
    }
}

struct Lookup {
    p: Vec<(usize, usize, usize)>,
    q: Vec<(usize, usize, usize)>,
}

impl Lookup {
    fn value(&self, s: &[CMat]) -> C64 {
        let mut z = C64::new(1.0, 0.0);
        for &(o, r, c) in &self.p {
            z *= s[o][(r, c)];
        }
        for &(o, r, c) in &self.q {
            z *= s[o][(r, c)].conj();
        }
        z
    }
}

/// Distinct evaluation offsets of a set of correlators, in first-seen order.
pub fn union_offsets(specs: &[CorrelatorSpec]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for o in specs.iter().flat_map(|s| s.evaluation_offsets()) {
        // -0.0 + 0.0 == +0.0, so both zeros share an entry
        let o = o + 0.0;
        if !out.contains(&o) {
            out.push(o);
        }
    }
    out
}

pub fn estimate_correlator(sys: &ScatteringSystem, spec: &CorrelatorSpec, plan: &SamplingPlan) -> Result<CorrelatorEstimate> {
    Ok(estimate_correlators(sys, std::slice::from_ref(spec), plan)?.remove(0))
}

/// Several correlators from shared phase draws.
pub fn estimate_correlators(
    sys: &ScatteringSystem,
    specs: &[CorrelatorSpec],
    plan: &SamplingPlan,
) -> Result<Vec<CorrelatorEstimate>> {
    for s in specs {
        s.validate(sys.num_channels())?;
    }
    let set = SampleSet::collect(sys, &union_offsets(specs), plan, Ensemble::Phases)?;
    set.estimate(specs)
}

/// Same correlators averaged over the wave number instead of the phases.
pub fn estimate_correlators_k_sweep(
    sys: &ScatteringSystem,
    specs: &[CorrelatorSpec],
    plan: &SamplingPlan,
    k_start: f64,
) -> Result<Vec<CorrelatorEstimate>> {
    for s in specs {
        s.validate(sys.num_channels())?;
    }
    let ensemble = Ensemble::wave_number(sys.graph(), k_start);
    let set = SampleSet::collect(sys, &union_offsets(specs), plan, ensemble)?;
    set.estimate(specs)
}

/// Monte Carlo `<S>` with entrywise errors.
#[derive(Debug, Clone, Serialize)]
pub struct MeanSEstimate {
    /// Row-major Lambda x Lambda entries.
    pub entries: Vec<CorrelatorEstimate>,
    pub num_channels: usize,
}

impl MeanSEstimate {
    pub fn entry(&self, a: usize, b: usize) -> &CorrelatorEstimate {
        &self.entries[a * self.num_channels + b]
    }

    /// Largest `|mean - target| / stderr` over all entries.
    pub fn max_z(&self, target: &CMat) -> f64 {
        let n = self.num_channels;
        (0..n * n)
            .map(|k| self.entries[k].z_score(target[(k / n, k % n)]))
            .fold(0.0, f64::max)
    }
}

/// Plain Monte Carlo average of the full S-matrix (not centred).
pub fn estimate_mean_s(sys: &ScatteringSystem, plan: &SamplingPlan) -> Result<MeanSEstimate> {
    let n = sys.num_channels();
    let set = SampleSet::collect(sys, &[0.0], plan, Ensemble::Phases)?;
    let rho = sys.rho_diag().to_vec();
    let b = set.batches(2 * n * n, |s| {
        let mut v = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                let z = s[0][(i, j)] + if i == j { rho[i] } else { C64::new(0.0, 0.0) };
                v.extend([z.re, z.im]);
            }
        }
        v
    })?;
    let naive = set.naive_variances(&b, |s| {
        (0..n * n)
            .map(|k| s[0][(k / n, k % n)] + if k / n == k % n { rho[k / n] } else { C64::new(0.0, 0.0) })
            .collect()
    });
    let entries = (0..n * n).map(|k| set.finish(&b, 2 * k, naive[k])).collect();
    Ok(MeanSEstimate { entries, num_channels: n })
}

/// Moments of the fluctuating elements over a set of channel pairs.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionReport {
    pub pairs: Vec<(usize, usize)>,
    #[serde(serialize_with = "ser_complex")]
    pub mean: C64,
    pub mean_stderr: f64,
    /// `<|S^fl|^2>`.
    pub second: crate::stats::Estimate,
    /// `<|S^fl|^4>`.
    pub fourth: crate::stats::Estimate,
    /// `<|S^fl|^4> / <|S^fl|^2>^2`; 2 for a complex Gaussian.
    pub ratio: crate::stats::Estimate,
    pub n_samples: usize,
    #[serde(skip)]
    pub histogram: Histogram,
}

/// Histogram of the real and imaginary parts on a shared grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts_re: Vec<u64>,
    pub counts_im: Vec<u64>,
}

impl Histogram {
    fn build(values: &[C64], bins: usize) -> Self {
        let half = values.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
        let half = if half > 0.0 { half * (1.0 + 1e-12) } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|k| -half + 2.0 * half * k as f64 / bins as f64).collect();
        let mut counts_re = vec![0; bins];
        let mut counts_im = vec![0; bins];
        let bin = |x: f64| (((x + half) / (2.0 * half) * bins as f64) as usize).min(bins - 1);
        for z in values {
            counts_re[bin(z.re)] += 1;
            counts_im[bin(z.im)] += 1;
        }
        Self { edges, counts_re, counts_im }
    }

    /// CSV with columns `lo,hi,count_re,count_im`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "lo,hi,count_re,count_im")?;
        for k in 0..self.counts_re.len() {
            writeln!(w, "{},{},{},{}", self.edges[k], self.edges[k + 1], self.counts_re[k], self.counts_im[k])?;
        }
        w.flush()?;
        Ok(())
    }
}

const HISTOGRAM_BINS: usize = 40;

/// Moments of `S^fl_{ab}` pooled over `pairs` and over every sampled
/// offset. Offsets of one draw are correlated; the jackknife runs over draws.
pub fn distribution_report(set: &SampleSet, pairs: &[(usize, usize)]) -> Result<DistributionReport> {
    if pairs.is_empty() {
        return Err(param("no channel pairs"));
    }
    let n = set.fluct[0][0].nrows();
    if pairs.iter().any(|&(a, b)| a >= n || b >= n) {
        return Err(param("channel pair out of range"));
    }
    let k = (pairs.len() * set.offsets.len()) as f64;
    let b = set.batches(4, |s| {
        let (mut re, mut im, mut m2, mut m4) = (0.0, 0.0, 0.0, 0.0);
        for (&(a, c), fl) in pairs.iter().flat_map(|p| s.iter().map(move |fl| (p, fl))) {
            let z = fl[(a, c)];
            let q = z.norm_sqr();
            re += z.re;
            im += z.im;
            m2 += q;
            m4 += q * q;
        }
        vec![re / k, im / k, m2 / k, m4 / k]
    })?;
    let (re, im) = (b.mean_estimate(0), b.mean_estimate(1));
    let second = b.mean_estimate(2);
    let fourth = b.mean_estimate(3);
    let ratio = b.jackknife(|m| if m[2] > 0.0 { m[3] / (m[2] * m[2]) } else { 0.0 });
    let values: Vec<C64> = set
        .fluct
        .iter()
        .flat_map(|s| s.iter().flat_map(move |fl| pairs.iter().map(move |&(a, c)| fl[(a, c)])))
        .collect();
    Ok(DistributionReport {
        pairs: pairs.to_vec(),
        mean: C64::new(re.value, im.value),
        mean_stderr: re.stderr.hypot(im.stderr),
        second,
        fourth,
        ratio,
        n_samples: set.len(),
        histogram: Histogram::build(&values, HISTOGRAM_BINS),
    })
}

/// Evenly spaced offsets for the sweep estimator of a correlation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    /// Offsets per draw.
    pub points: usize,
    /// Spacing between neighbouring offsets.
    pub spacing: f64,
}

/// One point of a two-point correlation curve at `kappa = kappa~`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub kappa: f64,
    #[serde(serialize_with = "ser_complex")]
    pub mean: C64,
    pub stderr: f64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

impl CurvePoint {
    pub fn z_against(&self, other: &CurvePoint) -> f64 {
        z_score((self.mean - other.mean).norm(), self.stderr.hypot(other.stderr))
    }
}

/// Two-point function `<S^fl_ab(+kappa) conj S^fl_ab(-kappa)>` at
/// `kappa = lag * spacing / 2` for each lag, pooled over `pairs`.
///
/// Each draw evaluates S at offsets `j * spacing`, `j < points`; every pair
/// of offsets `lag` apart is one sample of the correlator centred between
/// them. Errors come from the jackknife over draws.
pub fn correlation_curve(
    set: &SampleSet,
    pairs: &[(usize, usize)],
    lags: &[usize],
) -> Result<Vec<CurvePoint>> {
    let j = set.offsets.len();
    if pairs.is_empty() {
        return Err(param("no channel pairs"));
    }
    if j < 2 {
        return Err(param("a sweep needs at least two offsets"));
    }
    if let Some(&m) = lags.iter().find(|&&m| m >= j) {
        return Err(param(format!("lag {m} needs more than {j} sweep points")));
    }
    let spacing = set.offsets[1] - set.offsets[0];
    let b = set.batches(2 * lags.len(), |s| {
        let mut v = Vec::with_capacity(2 * lags.len());
        for &m in lags {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..j - m {
                for &(a, c) in pairs {
                    acc += s[i + m][(a, c)] * s[i][(a, c)].conj();
                }
            }
            acc /= ((j - m) * pairs.len()) as f64;
            v.extend([acc.re, acc.im]);
        }
        v
    })?;
    Ok(lags
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let (re, im) = (b.mean_estimate(2 * k), b.mean_estimate(2 * k + 1));
            CurvePoint {
                kappa: m as f64 * spacing / 2.0,
                mean: C64::new(re.value, im.value),
                stderr: re.stderr.hypot(im.stderr),
                stderr_re: re.stderr,
                stderr_im: im.stderr,
            }
        })
        .collect())
}

/// Sweep offsets `0, spacing, ..., (points - 1) spacing`.
pub fn sweep_offsets(sweep: &Sweep) -> Result<Vec<f64>> {
    if sweep.points < 2 || !(sweep.spacing > 0.0) {
        return Err(param("a sweep needs at least two points and a positive spacing"));
    }
    Ok((0..sweep.points).map(|j| j as f64 * sweep.spacing).collect())
}

/// CSV with columns `kappa,re,im,stderr`.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], w: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "kappa,re,im,stderr")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.kappa, p.mean.re, p.mean.im, p.stderr)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::vertex::{build_system, BondPhases, VertexFamily};

    fn designed(t: Vec<f64>, phi1: f64, seed: u64) -> VertexFamily {
        VertexFamily::Designed { transmissions: t, phi1, bond_phases: BondPhases::Random, seed }
    }

    #[test]
    fn phases_are_reproducible_and_uniform() {
        let g = build_graph(4, 1, (1.0, 2.0), 1).unwrap();
        let a = sample_phases(&g, &mut stream_rng(5, 3));
        assert_eq!(a, sample_phases(&g, &mut stream_rng(5, 3)));
        assert_ne!(a, sample_phases(&g, &mut stream_rng(5, 4)));

        let n = 100_000;
        let mut rng = stream_rng(9, 0);
        let mut acc = C64::new(0.0, 0.0);
        for _ in 0..n {
            acc += crate::linalg::cis(rng.random_range(0.0..std::f64::consts::TAU));
        }
        // each component has variance 1/2
        let sigma = (0.5 / n as f64).sqrt();
        assert!((acc / n as f64).re.abs() < 4.0 * sigma && (acc / n as f64).im.abs() < 4.0 * sigma);

        // two streams are uncorrelated
        let (mut r1, mut r2) = (stream_rng(9, 1), stream_rng(9, 2));
        let mut c = 0.0;
        for _ in 0..n {
            c += (r1.random::<f64>() - 0.5) * (r2.random::<f64>() - 0.5);
        }
        // variance of each product is 1/144
        assert!((c / n as f64).abs() < 4.0 / 12.0 / (n as f64).sqrt());
    }

    #[test]
    fn analytic_mean() {
        let g = build_graph(5, 2, (1.0, 2.0), 1).unwrap();
        let sys = build_system(&g, &VertexFamily::Kirchhoff).unwrap();
        // complete graph, valency 4 + lead = 5
        let m = mean_s_analytic(&sys);
        assert!((m[(0, 0)] - C64::new(-0.6, 0.0)).norm() < 1e-15);
        assert_eq!(m[(0, 1)], C64::new(0.0, 0.0));
        let sys = build_system(&g, &designed(vec![1.0], 0.0, 1)).unwrap();
        assert!(mean_s_analytic(&sys).norm_l2() < 1e-15);
    }

    #[test]
    fn plan_and_spec_validation() {
        let g = build_graph(4, 2, (1.0, 2.0), 1).unwrap();
        let sys = build_system(&g, &VertexFamily::Kirchhoff).unwrap();
        let spec = CorrelatorSpec::two_point(0, 1, 0, 1, 0.0, 0.0);
        assert!(matches!(
            estimate_correlator(&sys, &spec, &SamplingPlan::new(10, 1)),
            Err(Error::Parameter(_))
        ));
        let bad = CorrelatorSpec::new(vec![Factor::new(0, 2, 0.0)], vec![]);
        assert!(bad.validate(2).is_err());
        let pq = CorrelatorSpec::new(vec![Factor::new(0, 1, 0.0)], vec![Factor::new(0, 1, 0.0); 2]);
        assert!(pq.validate(2).is_err());
    }

    #[test]
    fn offsets_are_deduplicated() {
        let specs = vec![
            CorrelatorSpec::two_point(0, 1, 0, 1, 0.0, 0.0),
            CorrelatorSpec::two_point(0, 1, 0, 1, 0.5, -0.5),
            CorrelatorSpec::two_point(0, 1, 0, 1, 0.5, 0.25),
        ];
        assert_eq!(union_offsets(&specs), vec![0.0, 0.5, -0.25]);
    }

    #[test]
    fn centred_and_unconjugated_averages_vanish() {
        let g = build_graph(6, 2, (1.0, 2.0), 2).unwrap();
        let sys = build_system(&g, &designed(vec![0.8, 0.6], 0.0, 3)).unwrap();
        let specs = vec![
            CorrelatorSpec::new(vec![Factor::new(0, 0, 0.0)], vec![]),
            CorrelatorSpec::new(vec![Factor::new(0, 1, 0.0)], vec![]),
            CorrelatorSpec::new(vec![Factor::new(0, 1, 0.0), Factor::new(0, 0, 0.0)], vec![]),
        ];
        let est = estimate_correlators(&sys, &specs, &SamplingPlan::new(4000, 7)).unwrap();
        for e in &est {
            assert!(e.z_score(C64::new(0.0, 0.0)) < 4.0, "{e:?}");
            assert!(e.n_effective <= e.n_samples);
        }
    }

    #[test]
    fn estimates_are_deterministic_across_thread_counts() {
        let g = build_graph(5, 2, (1.0, 2.0), 2).unwrap();
        let sys = build_system(&g, &designed(vec![0.5], 0.0, 3)).unwrap();
        let spec = CorrelatorSpec::two_point(0, 1, 0, 1, 0.1, 0.1);
        let plan = SamplingPlan::new(300, 11);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_correlator(&sys, &spec, &plan).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.mean.re.to_bits(), b.mean.re.to_bits());
        assert_eq!(a.mean.im.to_bits(), b.mean.im.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn decoupled_leads_have_no_fluctuations() {
        let g = build_graph(5, 2, (1.0, 2.0), 2).unwrap();
        let sys = build_system(&g, &designed(vec![0.0], 0.0, 3)).unwrap();
        let set = SampleSet::collect(&sys, &[0.0], &SamplingPlan::new(100, 1), Ensemble::Phases).unwrap();
        let r = distribution_report(&set, &[(0, 1), (0, 0)]).unwrap();
        assert!(r.second.value < 1e-24 && r.fourth.value < 1e-40);
    }

    #[test]
    fn weak_coupling_is_not_gaussian() {
        // Sum T = 0.2: isolated resonances, strongly non-Gaussian elements.
        let g = build_graph(8, 2, (1.0, 2.0), 4).unwrap();
        let sys = build_system(&g, &designed(vec![0.1], 0.0, 5)).unwrap();
        let set = SampleSet::collect(&sys, &[0.0], &SamplingPlan::new(4000, 2), Ensemble::Phases).unwrap();
        let r = distribution_report(&set, &[(0, 1)]).unwrap();
        assert!((r.ratio.value - 2.0).abs() > 5.0 * r.ratio.stderr, "{:?}", r.ratio);
        let mut csv = Vec::new();
        r.histogram.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), HISTOGRAM_BINS + 1);
        let total: u64 = r.histogram.counts_re.iter().sum();
        assert_eq!(total, 4000);
    }

    #[test]
    fn phase_and_wave_number_averages_agree() {
        let g = build_graph(6, 2, (1.0, 2.0), 6).unwrap();
        let sys = build_system(&g, &designed(vec![0.7, 0.9], 0.0, 1)).unwrap();
        let specs = vec![
            CorrelatorSpec::two_point(0, 1, 0, 1, 0.0, 0.0),
            CorrelatorSpec::two_point(0, 0, 0, 0, 0.0, 0.0),
        ];
        let plan = SamplingPlan::new(3000, 3);
        let a = estimate_correlators(&sys, &specs, &plan).unwrap();
        let b = estimate_correlators_k_sweep(&sys, &specs, &plan, 10.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let z = (x.mean - y.mean).norm() / x.stderr.hypot(y.stderr);
            assert!(z < 3.0, "{x:?} {y:?}");
        }
    }

    #[test]
    fn two_point_is_hermitian_in_the_offset() {
        let g = build_graph(6, 2, (1.0, 2.0), 6).unwrap();
        let sys = build_system(&g, &designed(vec![0.7], 0.0, 1)).unwrap();
        let kappa = 0.02;
        let specs = vec![
            CorrelatorSpec::two_point(0, 1, 0, 1, kappa, kappa),
            CorrelatorSpec::two_point(0, 1, 0, 1, -kappa, -kappa),
        ];
        let est = estimate_correlators(&sys, &specs, &SamplingPlan::new(3000, 8)).unwrap();
        let z = (est[0].mean - est[1].mean.conj()).norm() / est[0].stderr.hypot(est[1].stderr);
        assert!(z < 3.0, "{est:?}");
    }

    #[test]
    fn curve_sweep_matches_direct_estimate() {
        let g = build_graph(6, 2, (1.0, 2.0), 6).unwrap();
        let sys = build_system(&g, &designed(vec![0.7], 0.0, 1)).unwrap();
        let sweep = Sweep { points: 6, spacing: 0.01 };
        let set = SampleSet::collect(&sys, &sweep_offsets(&sweep).unwrap(), &SamplingPlan::new(1500, 4), Ensemble::Phases)
            .unwrap();
        let curve = correlation_curve(&set, &[(0, 1)], &[0, 2, 4]).unwrap();
        for p in &curve {
            let direct = estimate_correlator(
                &sys,
                &CorrelatorSpec::two_point(0, 1, 0, 1, p.kappa, p.kappa),
                &SamplingPlan::new(3000, 99),
            )
            .unwrap();
            let z = (p.mean - direct.mean).norm() / p.stderr.hypot(direct.stderr);
            assert!(z < 3.0, "{p:?} {direct:?}");
        }
        let mut csv = Vec::new();
        write_curve_csv(&curve, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("kappa,re,im,stderr\n0,"));
    }

    #[test]
    fn lead_phase_does_not_change_correlators() {
        let g = build_graph(6, 2, (1.0, 2.0), 6).unwrap();
        let specs = vec![
            CorrelatorSpec::two_point(0, 1, 0, 1, 0.0, 0.0),
            CorrelatorSpec::two_point(0, 0, 0, 0, 0.01, 0.01),
        ];
        let plan = SamplingPlan::new(3000, 5);
        let a = estimate_correlators(&build_system(&g, &designed(vec![0.6], 0.0, 2)).unwrap(), &specs, &plan).unwrap();
        let b = estimate_correlators(&build_system(&g, &designed(vec![0.6], 0.7, 2)).unwrap(), &specs, &plan).unwrap();
        for (x, y) in a.iter().zip(&b) {
            // same phase draws, so the errors are strongly correlated; the
            // combined error is conservative
            assert!((x.mean - y.mean).norm() < 3.0 * x.stderr.hypot(y.stderr), "{x:?} {y:?}");
        }
    }

    #[test]
    fn mean_s_matches_rho() {
        let g = build_graph(6, 3, (1.0, 2.0), 3).unwrap();
        let sys = build_system(&g, &designed(vec![0.3, 0.6, 0.9], 0.4, 2)).unwrap();
        let est = estimate_mean_s(&sys, &SamplingPlan::new(4000, 1)).unwrap();
        assert!(est.max_z(&mean_s_analytic(&sys)) < 4.0);
        assert_eq!(est.entries.len(), 9);
    }
}
