//! Small dense linear-algebra helpers on top of `faer`.

use faer::{Mat, MatRef};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMat = Mat<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// Frobenius norm of `A^dagger A - I`.
pub fn unitarity_residual(a: MatRef<'_, C64>) -> f64 {
    let g = a.adjoint() * a;
    let n = g.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let d = if i == j { g[(i, j)] - 1.0 } else { g[(i, j)] };
            acc += d.norm_sqr();
        }
    }
    acc.sqrt()
}

/// Largest `|A_ij - A_ji|`.
pub fn symmetry_residual(a: MatRef<'_, C64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).norm());
        }
    }
    worst
}

/// Replace the lower triangle with the upper one, making `a` exactly symmetric.
pub fn mirror_upper(a: &mut CMat) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            a[(i, j)] = a[(j, i)];
        }
    }
}

/// Haar-distributed rotation in SO(n).
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat<f64> {
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let g = Mat::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.R();
    let mut q = qr.compute_Q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for i in 0..n {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}

/// Real symmetric matrix with GOE statistics: off-diagonal variance `scale^2`,
/// diagonal variance `2 scale^2`.
pub fn random_goe<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Mat<f64> {
    let mut h = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let x: f64 = rng.sample(StandardNormal);
            if i == j {
                h[(i, i)] = x * scale * std::f64::consts::SQRT_2;
            } else {
                h[(i, j)] = x * scale;
                h[(j, i)] = x * scale;
            }
        }
    }
    h
}

/// `exp(i A)` for real symmetric `A`; symmetric and unitary.
pub fn expi_symmetric(a: MatRef<'_, f64>) -> CMat {
    let n = a.nrows();
    let evd = a
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("symmetric eigendecomposition of a finite matrix");
    let q = evd.U();
    let phases: Vec<C64> = (0..n).map(|k| cis(evd.S()[k])).collect();
    let mut out = CMat::from_fn(n, n, |i, j| {
        (0..n).map(|k| phases[k] * (q[(i, k)] * q[(j, k)])).sum()
    });
    mirror_upper(&mut out);
    out
}

/// Complex matrix from a real one.
pub fn complexify(a: MatRef<'_, f64>) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(a[(i, j)], 0.0))
}

/// Eigenvalues of a Hermitian matrix, sorted descending.
pub fn hermitian_eigenvalues_desc(a: MatRef<'_, C64>) -> Vec<f64> {
    let mut ev = a
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .expect("hermitian eigenvalues of a finite matrix");
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn rotation_is_special_orthogonal() {
        let mut rng = stream_rng(1, 0);
        for n in 1..7 {
            let q = random_rotation(n, &mut rng);
            let qc = complexify(q.as_ref());
            assert!(unitarity_residual(qc.as_ref()) < 1e-13);
            assert!((q.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expi_is_symmetric_unitary() {
        let mut rng = stream_rng(2, 0);
        let a = random_goe(9, 1.3, &mut rng);
        let u = expi_symmetric(a.as_ref());
        assert!(unitarity_residual(u.as_ref()) < 1e-12);
        assert_eq!(symmetry_residual(u.as_ref()), 0.0);
    }
}
