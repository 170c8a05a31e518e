//! Closed-form correlation functions in the regime of many open channels.
//!
//! With `sum T` the total transmission and `d` the mean level density, the
//! two-point function of the fluctuating S-matrix is a Lorentzian in the
//! summed offset `kappa + kappa~` of half-width `sum T / (2 pi d)`. Higher
//! correlators factorise into two-point functions, with an extra factor per
//! unpaired diagonal element when `<S_aa>` does not vanish.

use serde::Serialize;

use crate::correlator::CorrelatorSpec;
use crate::error::{param, Error, Result};
use crate::linalg::{C64, I};

fn check_inputs(t: &[f64], d_mean: f64) -> Result<f64> {
    if t.is_empty() {
        return Err(param("no channels"));
    }
    if let Some(x) = t.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(param(format!("transmission {x} outside [0, 1]")));
    }
    if !(d_mean > 0.0 && d_mean.is_finite()) {
        return Err(param(format!("mean level density {d_mean} must be positive")));
    }
    Ok(t.iter().sum())
}

fn denominator(total_t: f64, d_mean: f64, offset_sum: f64) -> Result<C64> {
    let den = C64::new(total_t, 0.0) - I * (2.0 * std::f64::consts::PI * d_mean * offset_sum);
    if den.norm() == 0.0 {
        return Err(Error::SingularPrediction("total transmission and offsets are both zero".into()));
    }
    Ok(den)
}

/// `<S^fl_ab(kappa) conj S^fl_cd(-kappa_t)>`:
/// `(d_ac d_bd + d_ad d_bc) T_a T_b / (sum T - 2 pi i d (kappa + kappa_t))`.
pub fn ericson_two_point(
    t: &[f64],
    d_mean: f64,
    kappa: f64,
    kappa_t: f64,
    (a, b, c, d): (usize, usize, usize, usize),
) -> Result<C64> {
    let total = check_inputs(t, d_mean)?;
    if [a, b, c, d].iter().any(|&k| k >= t.len()) {
        return Err(param("channel index out of range"));
    }
    let den = denominator(total, d_mean, kappa + kappa_t)?;
    let deltas = f64::from(u8::from(a == c && b == d)) + f64::from(u8::from(a == d && b == c));
    Ok(deltas * t[a] * t[b] / den)
}

/// Half-width of `|two-point|^2` in `kappa + kappa~`.
pub fn ericson_width(t: &[f64], d_mean: f64) -> Result<f64> {
    let total = check_inputs(t, d_mean)?;
    if total <= 0.0 {
        return Err(param("total transmission must be positive"));
    }
    Ok(total / (2.0 * std::f64::consts::PI * d_mean))
}

/// Factor of an unpaired diagonal element `S^fl_aa(kappa_p)`:
/// `-sum_q T_a <S_aa> / (sum T - 2 pi i (kappa_p + kappa~_q) d)`.
pub fn ericson_f_factor(
    t_alpha: f64,
    s_mean_alpha: C64,
    t: &[f64],
    d_mean: f64,
    kappa_p: f64,
    kappa_t_list: &[f64],
) -> Result<C64> {
    let total = check_inputs(t, d_mean)?;
    if s_mean_alpha.norm() > 1.0 + 1e-12 {
        return Err(param(format!("|<S>| = {} exceeds one", s_mean_alpha.norm())));
    }
    kappa_t_list.iter().try_fold(C64::new(0.0, 0.0), |acc, &kt| {
        Ok(acc - t_alpha * s_mean_alpha / denominator(total, d_mean, kappa_p + kt)?)
    })
}

/// General `(P, Q)` correlator: sum over choices of `P - Q` unpaired plain
/// factors (each an [`ericson_f_factor`], zero unless diagonal) times the sum
/// over all pairings of the rest with the conjugated factors.
pub fn ericson_pq(spec: &CorrelatorSpec, t: &[f64], d_mean: f64, s_means: &[C64]) -> Result<C64> {
    check_inputs(t, d_mean)?;
    spec.validate(t.len())?;
    if s_means.len() != t.len() {
        return Err(param("one mean diagonal element per channel required"));
    }
    let (p, q) = (spec.p.len(), spec.q.len());
    let kappa_t: Vec<f64> = spec.q.iter().map(|f| f.offset).collect();

    // unpaired factors and pairings depend only on the index sets, so cache
    let f_factor = |k: usize| -> Result<C64> {
        let f = spec.p[k];
        if f.row != f.col {
            return Ok(C64::new(0.0, 0.0));
        }
        ericson_f_factor(t[f.row], s_means[f.row], t, d_mean, f.offset, &kappa_t)
    };
    let mut pair = vec![C64::new(0.0, 0.0); p * q];
    for (i, fp) in spec.p.iter().enumerate() {
        for (j, fq) in spec.q.iter().enumerate() {
            pair[i * q + j] = ericson_two_point(t, d_mean, fp.offset, fq.offset, (fp.row, fp.col, fq.row, fq.col))?;
        }
    }
    let unpaired: Vec<C64> = (0..p).map(f_factor).collect::<Result<_>>()?;

    let mut total = C64::new(0.0, 0.0);
    for mask in 0u64..(1 << p) {
        if mask.count_ones() as usize != p - q {
            continue;
        }
        let mut prefactor = C64::new(1.0, 0.0);
        for k in 0..p {
            if mask >> k & 1 == 1 {
                prefactor *= unpaired[k];
            }
        }
        if prefactor == C64::new(0.0, 0.0) {
            continue;
        }
        let rest: Vec<usize> = (0..p).filter(|k| mask >> k & 1 == 0).collect();
        total += prefactor * permanent(&rest, q, &pair);
    }
    Ok(total)
}

/// Sum over bijections `rest[i] -> j` of `prod pair[rest[i], j]`.
fn permanent(rest: &[usize], q: usize, pair: &[C64]) -> C64 {
    fn go(i: usize, used: u64, rest: &[usize], q: usize, pair: &[C64]) -> C64 {
        if i == rest.len() {
            return C64::new(1.0, 0.0);
        }
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..q {
            if used >> j & 1 == 0 {
                let w = pair[rest[i] * q + j];
                if w != C64::new(0.0, 0.0) {
                    acc += w * go(i + 1, used | 1 << j, rest, q, pair);
                }
            }
        }
        acc
    }
    go(0, 0, rest, q, pair)
}

/// `y = amplitude / (1 + (x / half_width)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub half_width: f64,
    /// Standard error of the half-width from the fit covariance; zero
    /// without weights.
    pub half_width_stderr: f64,
    pub iterations: usize,
}

/// Least-squares Lorentzian through the origin-centred points `(x, y)`,
/// weighted by `1 / sigma^2` when errors are given.
///
/// Starts from the straight-line fit of `1 / y` against `x^2` and refines
/// with Gauss-Newton.
pub fn fit_lorentzian(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<LorentzianFit> {
    if x.len() != y.len() || sigma.is_some_and(|s| s.len() != x.len()) {
        return Err(param("length mismatch in fit data"));
    }
    if x.len() < 2 {
        return Err(param("a Lorentzian fit needs at least two points"));
    }
    let w: Vec<f64> = match sigma {
        Some(s) => {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(param("fit errors must be positive"));
            }
            s.iter().map(|v| 1.0 / (v * v)).collect()
        }
        None => vec![1.0; x.len()],
    };

    // 1/y = 1/A + x^2 / (A w^2), using points with y > 0
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(_, &v)| v > 0.0).map(|(&u, &v)| (u * u, 1.0 / v)).collect();
    if pts.len() < 2 {
        return Err(param("need at least two positive values to start the fit"));
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(param("fit needs at least two distinct offsets"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(intercept > 0.0 && slope > 0.0) {
        return Err(param("data do not decay like a Lorentzian"));
    }
    let mut amp = 1.0 / intercept;
    let mut hw = (intercept / slope).sqrt();

    let model = |a: f64, h: f64, u: f64| a / (1.0 + (u / h).powi(2));
    let mut iterations = 0;
    let mut jtj = [[0.0; 2]; 2];
    for it in 1..=100 {
        iterations = it;
        jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for k in 0..x.len() {
            let r2 = (x[k] / hw).powi(2);
            let den = 1.0 + r2;
            let da = 1.0 / den;
            let dh = amp * 2.0 * r2 / (hw * den * den);
            let res = y[k] - model(amp, hw, x[k]);
            let g = [da, dh];
            for i in 0..2 {
                jtr[i] += w[k] * g[i] * res;
                for j in 0..2 {
                    jtj[i][j] += w[k] * g[i] * g[j];
                }
            }
        }
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det == 0.0 {
            break;
        }
        let step_a = (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let step_h = (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
        amp += step_a;
        // keep the width positive on wild steps
        hw = if hw + step_h > 0.0 { hw + step_h } else { hw / 2.0 };
        if step_a.abs() <= 1e-15 * amp.abs() && step_h.abs() <= 1e-15 * hw {
            break;
        }
    }
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    let half_width_stderr = if sigma.is_some() && det > 0.0 { (jtj[0][0] / det).sqrt() } else { 0.0 };
    Ok(LorentzianFit { amplitude: amp, half_width: hw.abs(), half_width_stderr, iterations })
}
