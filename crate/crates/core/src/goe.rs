//! Random-matrix resonance model: GOE Hamiltonian coupled to open channels.
//!
//! `H` is `N x N` real symmetric with off-diagonal variance `1/N` and
//! diagonal variance `2/N`, so the semicircle has radius 2 and the mean
//! level spacing at the band centre is `pi / N`. With orthonormal coupling
//! directions `w_c`, strengths `v_c`, `W = [sqrt(v_c) w_c]` and
//! `K(E) = W^T (E - H)^{-1} W`,
//!
//! ```text
//! S(E) = (1 - i pi K) (1 + i pi K)^{-1} = 1 - 2 pi i W^T (E - H + i pi W W^T)^{-1} W.
//! ```
//!
//! Two samplers give the same distribution of `K`. The dense one
//! diagonalises `H`. The banded one uses the orthogonal band reduction of
//! `H` that fixes `w_1 .. w_Lambda = e_1 .. e_Lambda`: Householder steps on
//! rows `j + Lambda ..` leave a symmetric band matrix of half-bandwidth
//! `Lambda` with independent entries, `N(0, 2/N)` on the diagonal,
//! `N(0, 1/N)` inside the band and `chi_{N-j-Lambda} / sqrt(N)` at
//! `(j + Lambda, j)`. Then `K` is the leading block of a banded resolvent,
//! `O(N Lambda^2)` per energy.

use faer::Mat;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlator::DEFAULT_BATCHES;
use crate::error::{param, Error, Result};
use crate::linalg::{random_goe, CMat, C64, I};
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::stats::{z_score, Batches};

/// Energies are drawn from `|E| <= ENERGY_WINDOW` around the band centre,
/// where the level density is flat to 0.2%.
pub const ENERGY_WINDOW: f64 = 0.1;

/// Minimum matrix size per channel.
const MIN_DIM_PER_CHANNEL: usize = 50;

const MIXING_SALT: u64 = 0x6d69_78;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoeSampler {
    #[default]
    Banded,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoeModel {
    pub dim: usize,
    /// Squared norms `v_c` of the coupling columns.
    pub couplings: Vec<f64>,
    #[serde(default)]
    pub sampler: GoeSampler,
    /// Seed of a random orthonormal mixing of the coupling directions
    /// (dense sampler only); basis vectors when absent.
    #[serde(default)]
    pub mixing_seed: Option<u64>,
    /// Measured diagonal `<S_cc>`, used to centre fluctuations.
    #[serde(default)]
    pub s_mean: Vec<[f64; 2]>,
}

/// One draw of `H`, reduced to what `K(E)` needs.
#[derive(Debug, Clone)]
pub enum GoeDraw {
    /// Eigenvalues and eigenvector projections on the coupling directions
    /// (`N x Lambda`).
    Dense { eigenvalues: Vec<f64>, proj: Mat<f64> },
    /// `diag[i] = H_ii`, `band[d - 1][j] = H_{j+d, j}`.
    Banded { diag: Vec<f64>, band: Vec<Vec<f64>> },
}

impl GoeModel {
    pub fn new(dim: usize, couplings: Vec<f64>) -> Result<Self> {
        let m = Self { dim, couplings, sampler: GoeSampler::Banded, mixing_seed: None, s_mean: Vec::new() };
        m.check()?;
        Ok(m)
    }

    pub fn with_sampler(mut self, sampler: GoeSampler) -> Self {
        self.sampler = sampler;
        self
    }

    /// Random coupling directions; switches to the dense sampler.
    pub fn with_mixing(mut self, seed: u64) -> Self {
        self.mixing_seed = Some(seed);
        self.sampler = GoeSampler::Dense;
        self
    }

    fn check(&self) -> Result<()> {
        let l = self.couplings.len();
        if l == 0 {
            return Err(param("no channels"));
        }
        if self.dim < MIN_DIM_PER_CHANNEL * l {
            return Err(param(format!(
                "matrix size {} is below {MIN_DIM_PER_CHANNEL} per channel for {l} channels",
                self.dim
            )));
        }
        if self.couplings.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(param("coupling strengths must be finite and non-negative"));
        }
        if self.mixing_seed.is_some() && self.sampler != GoeSampler::Dense {
            return Err(param("coupling mixing needs the dense sampler"));
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.couplings.len()
    }

    /// Mean level spacing at the band centre.
    pub fn mean_spacing(&self) -> f64 {
        std::f64::consts::PI / self.dim as f64
    }

    /// Energy shift corresponding to the scaled offset `x = 2 pi eps / D`.
    pub fn energy_of_scaled(&self, x: f64) -> f64 {
        x * self.mean_spacing() / (2.0 * std::f64::consts::PI)
    }

    /// Unit coupling directions, `N x Lambda`, orthonormal columns.
    fn directions(&self) -> Mat<f64> {
        let (n, l) = (self.dim, self.num_channels());
        match self.mixing_seed {
            None => Mat::from_fn(n, l, |i, c| if i == c { 1.0 } else { 0.0 }),
            Some(seed) => {
                let mut rng = stream_rng(derive_seed(seed, MIXING_SALT), 0);
                let g = Mat::<f64>::from_fn(n, l, |_, _| rng.sample(StandardNormal));
                g.qr().compute_thin_Q()
            }
        }
    }

    /// Draw `H`.
    pub fn draw(&self, rng: &mut StreamRng) -> Result<GoeDraw> {
        match self.sampler {
            GoeSampler::Dense => self.draw_dense(&self.directions(), rng),
            GoeSampler::Banded => Ok(self.draw_banded(rng)),
        }
    }

    fn draw_dense(&self, dirs: &Mat<f64>, rng: &mut StreamRng) -> Result<GoeDraw> {
        let h = random_goe(self.dim, 1.0 / (self.dim as f64).sqrt(), rng);
        let evd = h
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let eigenvalues = (0..self.dim).map(|k| evd.S()[k]).collect();
        let proj = evd.U().transpose() * dirs;
        Ok(GoeDraw::Dense { eigenvalues, proj })
    }

    fn draw_banded(&self, rng: &mut StreamRng) -> GoeDraw {
        let (n, b) = (self.dim, self.num_channels());
        let scale = 1.0 / (n as f64).sqrt();
        let diag = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale * std::f64::consts::SQRT_2).collect();
        let band = (1..=b)
            .map(|d| {
                (0..n - d)
                    .map(|j| {
                        if d < b {
                            rng.sample::<f64, _>(StandardNormal) * scale
                        } else {
                            let dof = (n - j - b) as f64;
                            if dof > 0.0 {
                                ChiSquared::new(dof).expect("positive degrees of freedom").sample(rng).sqrt() * scale
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        GoeDraw::Banded { diag, band }
    }

    fn centre(&self) -> Vec<C64> {
        (0..self.num_channels())
            .map(|c| self.s_mean.get(c).map_or(C64::new(0.0, 0.0), |m| C64::new(m[0], m[1])))
            .collect()
    }
}

impl GoeDraw {
    /// `K(E)` for unit couplings, row-major `Lambda x Lambda`.
    pub fn k_matrix(&self, energy: f64) -> Result<Vec<f64>> {
        match self {
            GoeDraw::Dense { eigenvalues, proj } => {
                let l = proj.ncols();
                let mut k = vec![0.0; l * l];
                for (n, &lam) in eigenvalues.iter().enumerate() {
                    let inv = 1.0 / (energy - lam);
                    for a in 0..l {
                        let pa = proj[(n, a)] * inv;
                        for b in 0..=a {
                            k[a * l + b] += pa * proj[(n, b)];
                        }
                    }
                }
                for a in 0..l {
                    for b in 0..a {
                        k[b * l + a] = k[a * l + b];
                    }
                }
                Ok(k)
            }
            GoeDraw::Banded { diag, band } => banded_leading_resolvent(diag, band, energy),
        }
    }

    /// `S(E)` for coupling strengths `v`.
    pub fn s_matrix(&self, couplings: &[f64], energy: f64) -> Result<CMat> {
        s_from_k(&self.k_matrix(energy)?, couplings)
    }
}

/// `S = (1 + i pi K')^{-1} (1 - i pi K')` with `K' = sqrt(v) K sqrt(v)`.
fn s_from_k(k: &[f64], couplings: &[f64]) -> Result<CMat> {
    let l = couplings.len();
    let sq: Vec<f64> = couplings.iter().map(|v| v.sqrt()).collect();
    let mut plus = vec![C64::new(0.0, 0.0); l * l];
    let mut minus = vec![C64::new(0.0, 0.0); l * l];
    for a in 0..l {
        for b in 0..l {
            let pk = I * (std::f64::consts::PI * k[a * l + b] * sq[a] * sq[b]);
            let id = if a == b { 1.0 } else { 0.0 };
            plus[a * l + b] = pk + id;
            minus[a * l + b] = -pk + id;
        }
    }
    solve_small(&mut plus, &mut minus, l, l, |z| z.norm()).ok_or(Error::Singular { condition: f64::INFINITY })?;
    Ok(CMat::from_fn(l, l, |a, b| minus[a * l + b]))
}

/// Leading `b x b` block of `(E - B)^{-1}` for the symmetric band matrix
/// `B` of half-bandwidth `b`, by block Schur complements from the bottom.
fn banded_leading_resolvent(diag: &[f64], band: &[Vec<f64>], energy: f64) -> Result<Vec<f64>> {
    let n = diag.len();
    let b = band.len();
    let entry = |i: usize, j: usize| -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        match i - j {
            0 => diag[i],
            d if d <= b => band[d - 1][j],
            _ => 0.0,
        }
    };
    let blocks = n.div_ceil(b);
    let range = |k: usize| (k * b, ((k + 1) * b).min(n));
    let singular = || Error::Singular { condition: f64::INFINITY };
    let mut x = vec![0.0; b * b];
    let mut y = vec![0.0; b * b];
    let mut next = vec![0.0; b * b];
    // X = E - A_last
    let (lo, hi) = range(blocks - 1);
    let mut size = hi - lo;
    for i in 0..size {
        for j in 0..size {
            x[i * size + j] = if i == j { energy } else { 0.0 } - entry(lo + i, lo + j);
        }
    }
    for k in (0..blocks - 1).rev() {
        let (lo, hi) = range(k);
        let nlo = hi;
        let s = hi - lo;
        // X_k = (E - A_k) - B^T X^{-1} B with B the (k+1, k) block of H
        for r in 0..size {
            for j in 0..s {
                y[r * s + j] = entry(nlo + r, lo + j);
            }
        }
        solve_small(&mut x[..size * size], &mut y[..size * s], size, s, |v| v.abs()).ok_or_else(singular)?;
        for i in 0..s {
            for j in 0..s {
                let mut acc = if i == j { energy } else { 0.0 } - entry(lo + i, lo + j);
                for r in 0..size {
                    acc -= entry(nlo + r, lo + i) * y[r * s + j];
                }
                next[i * s + j] = acc;
            }
        }
        std::mem::swap(&mut x, &mut next);
        size = s;
    }
    let mut inv: Vec<f64> = (0..size * size).map(|p| if p / size == p % size { 1.0 } else { 0.0 }).collect();
    solve_small(&mut x[..size * size], &mut inv, size, size, |v| v.abs()).ok_or_else(singular)?;
    Ok(inv)
}

/// Solve `A X = B` in place (`A` is `n x n`, `B` is `n x m`, row-major) by
/// Gaussian elimination with partial pivoting. `A` is destroyed.
fn solve_small<T, F>(a: &mut [T], bm: &mut [T], n: usize, m: usize, mag: F) -> Option<()>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<Output = T> + std::ops::Div<Output = T>,
    F: Fn(&T) -> f64,
{
    for c in 0..n {
        let mut p = c;
        for r in c + 1..n {
            if mag(&a[r * n + c]) > mag(&a[p * n + c]) {
                p = r;
            }
        }
        let pm = mag(&a[p * n + c]);
        if pm == 0.0 || !pm.is_finite() {
            return None;
        }
        if p != c {
            for j in 0..n {
                a.swap(p * n + j, c * n + j);
            }
            for j in 0..m {
                bm.swap(p * m + j, c * m + j);
            }
        }
        let piv = a[c * n + c];
        for r in c + 1..n {
            let f = a[r * n + c] / piv;
            for j in c..n {
                a[r * n + j] = a[r * n + j] - f * a[c * n + j];
            }
            for j in 0..m {
                bm[r * m + j] = bm[r * m + j] - f * bm[c * m + j];
            }
        }
    }
    for c in (0..n).rev() {
        for j in 0..m {
            let mut acc = bm[c * m + j];
            for k in c + 1..n {
                acc = acc - a[c * n + k] * bm[k * m + j];
            }
            bm[c * m + j] = acc / a[c * n + c];
        }
    }
    Some(())
}

/// One `S(E)` sample with the energy offset given in mean level spacings.
pub fn goe_sample_s(model: &GoeModel, rng: &mut StreamRng, offset_spacings: f64) -> Result<CMat> {
    model.check()?;
    let draw = model.draw(rng)?;
    let e = rng.random_range(-ENERGY_WINDOW..ENERGY_WINDOW) + offset_spacings * model.mean_spacing();
    draw.s_matrix(&model.couplings, e)
}

/// Outcome of [`goe_calibrate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub target_t: Vec<f64>,
    pub couplings: Vec<f64>,
    /// Measured `|<S_cc>|^2` at the final strengths.
    pub achieved_reflection: Vec<f64>,
    pub iterations: usize,
    pub draws: usize,
    pub energies_per_draw: usize,
}

/// Sample sizes for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationPlan {
    pub draws: usize,
    pub energies_per_draw: usize,
    pub seed: u64,
}

const CALIBRATION_ITERATIONS: usize = 50;
const CALIBRATION_TOLERANCE: f64 = 0.01;

/// Find coupling strengths such that the Monte Carlo `|<S_cc>|^2` equals
/// `1 - T_c`, by bisection in `log v` on `Re <S_cc>`, which falls
/// monotonically from 1 to -1. All iterations reuse the same draws.
pub fn goe_calibrate(
    target_t: &[f64],
    dim: usize,
    plan: &CalibrationPlan,
    mixing_seed: Option<u64>,
) -> Result<(GoeModel, CalibrationRecord)> {
    if let Some(t) = target_t.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(param(format!("target transmission {t} outside (0, 1]")));
    }
    if plan.draws == 0 || plan.energies_per_draw == 0 {
        return Err(param("calibration needs at least one draw and one energy"));
    }
    let l = target_t.len();
    let mut model = GoeModel::new(dim, vec![1.0; l])?;
    if let Some(seed) = mixing_seed {
        model = model.with_mixing(seed);
    }
    // S depends on the strengths only through sqrt(v) K sqrt(v), so the
    // unit-coupling K of every (draw, energy) is computed once
    let ks: Vec<Vec<f64>> = (0..plan.draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(plan.seed, i as u64);
            let d = model.draw(&mut rng)?;
            let mut out = Vec::with_capacity(plan.energies_per_draw * l * l);
            for _ in 0..plan.energies_per_draw {
                out.extend(d.k_matrix(rng.random_range(-ENERGY_WINDOW..ENERGY_WINDOW))?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let measure = |v: &[f64]| -> Result<Vec<C64>> {
        let sums = ks
            .par_iter()
            .map(|k| {
                let mut acc = vec![C64::new(0.0, 0.0); l];
                for chunk in k.chunks(l * l) {
                    let s = s_from_k(chunk, v)?;
                    for c in 0..l {
                        acc[c] += s[(c, c)];
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = (plan.draws * plan.energies_per_draw) as f64;
        Ok((0..l).map(|c| sums.iter().map(|a| a[c]).sum::<C64>() / n).collect())
    };

    let target: Vec<f64> = target_t.iter().map(|t| (1.0 - t).sqrt()).collect();
    let mut lo = vec![(1e-6f64).ln(); l];
    let mut hi = vec![(1e4f64).ln(); l];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for it in 1..=CALIBRATION_ITERATIONS {
        iterations = it;
        let v: Vec<f64> = (0..l).map(|c| ((lo[c] + hi[c]) / 2.0).exp()).collect();
        let mean = measure(&v)?;
        for c in 0..l {
            if mean[c].re > target[c] {
                lo[c] = (lo[c] + hi[c]) / 2.0;
            } else {
                hi[c] = (lo[c] + hi[c]) / 2.0;
            }
        }
        trace.push(format!(
            "it {it}: v = {:?}, |<S>|^2 = {:?}",
            v,
            mean.iter().map(|m| m.norm_sqr()).collect::<Vec<_>>()
        ));
        if (0..l).all(|c| hi[c] - lo[c] < 1e-7) {
            break;
        }
    }
    let couplings: Vec<f64> = (0..l).map(|c| ((lo[c] + hi[c]) / 2.0).exp()).collect();
    let mean = measure(&couplings)?;
    let achieved: Vec<f64> = mean.iter().map(|m| m.norm_sqr()).collect();
    let worst = achieved
        .iter()
        .zip(target_t)
        .map(|(a, t)| (a - (1.0 - t)).abs())
        .fold(0.0, f64::max);
    if worst > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration { iterations, trace: trace.join("; ") });
    }
    model.couplings = couplings.clone();
    model.s_mean = mean.iter().map(|m| [m.re, m.im]).collect();
    log::info!("calibrated GOE couplings {couplings:?} in {iterations} iterations");
    let record = CalibrationRecord {
        target_t: target_t.to_vec(),
        couplings,
        achieved_reflection: achieved,
        iterations,
        draws: plan.draws,
        energies_per_draw: plan.energies_per_draw,
    };
    Ok((model, record))
}

/// Sweep layout for GOE correlation curves, in scaled offset units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoeSweep {
    /// Energies per sweep.
    pub points: usize,
    /// Step of the scaled offset `x = 2 pi eps / D` between energies.
    pub spacing_x: f64,
    /// Independent sweeps per draw of `H`, each at its own random start.
    pub sweeps_per_draw: usize,
    pub draws: usize,
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

/// Two-point point at scaled offset `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledPoint {
    pub x: f64,
    pub re: f64,
    pub im: f64,
    pub stderr: f64,
}

impl ScaledPoint {
    pub fn mean(&self) -> C64 {
        C64::new(self.re, self.im)
    }

    /// Combined z-score of the difference to another estimate.
    pub fn z_against(&self, other: &ScaledPoint) -> f64 {
        z_score((self.mean() - other.mean()).norm(), self.stderr.hypot(other.stderr))
    }
}

/// `<S^fl_ab(E + eps/2) conj S^fl_ab(E - eps/2)>` at `x = lag * spacing_x`,
/// pooled over `pairs`, jackknife over draws of `H`.
pub fn goe_correlation_curve(
    model: &GoeModel,
    pairs: &[(usize, usize)],
    lags: &[usize],
    sweep: &GoeSweep,
) -> Result<Vec<ScaledPoint>> {
    model.check()?;
    let l = model.num_channels();
    if pairs.is_empty() || pairs.iter().any(|&(a, b)| a >= l || b >= l) {
        return Err(param("channel pairs missing or out of range"));
    }
    let j = sweep.points;
    if j < 2 || lags.iter().any(|&m| m >= j) || !(sweep.spacing_x > 0.0) || sweep.sweeps_per_draw == 0 {
        return Err(param("sweep needs at least two points, positive spacing and lags below the point count"));
    }
    let step = model.energy_of_scaled(sweep.spacing_x);
    let span = step * (j - 1) as f64;
    if span >= 2.0 * ENERGY_WINDOW {
        return Err(param("sweep is wider than the energy window"));
    }
    let dirs = model.directions();
    let centre = model.centre();
    let draw = |rng: &mut StreamRng| match model.sampler {
        GoeSampler::Dense => model.draw_dense(&dirs, rng),
        GoeSampler::Banded => Ok(model.draw_banded(rng)),
    };
    let per_draw = (0..sweep.draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(sweep.seed, i as u64);
            let draw = draw(&mut rng)?;
            let mut acc = vec![C64::new(0.0, 0.0); lags.len()];
            for _ in 0..sweep.sweeps_per_draw {
                let e0 = rng.random_range(-ENERGY_WINDOW..ENERGY_WINDOW - span);
                let fl: Vec<CMat> = (0..j)
                    .map(|k| {
                        let mut s = draw.s_matrix(&model.couplings, e0 + k as f64 * step)?;
                        for c in 0..l {
                            s[(c, c)] -= centre[c];
                        }
                        Ok(s)
                    })
                    .collect::<Result<_>>()?;
                for (slot, &m) in acc.iter_mut().zip(lags) {
                    let mut z = C64::new(0.0, 0.0);
                    for k in 0..j - m {
                        for &(a, b) in pairs {
                            z += fl[k + m][(a, b)] * fl[k][(a, b)].conj();
                        }
                    }
                    *slot += z / ((j - m) * pairs.len()) as f64;
                }
            }
            Ok(acc
                .iter()
                .flat_map(|z| {
                    let z = z / sweep.sweeps_per_draw as f64;
                    [z.re, z.im]
                })
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<f64> = per_draw.into_iter().flatten().collect();
    let b = Batches::from_flat(&flat, 2 * lags.len(), sweep.batches)?;
    Ok(lags
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let (re, im) = (b.mean_estimate(2 * k), b.mean_estimate(2 * k + 1));
            ScaledPoint { x: m as f64 * sweep.spacing_x, re: re.value, im: im.value, stderr: re.stderr.hypot(im.stderr) }
        })
        .collect())
}
