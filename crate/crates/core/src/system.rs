//! Directed-bond propagation: assembly of the bond scattering matrix, the
//! exact S-matrix, its trajectory expansion and the classical-map spectrum.
//!
//! Conventions. `a` is the vector of amplitudes on directed bonds just after
//! leaving their tail vertex. Propagation multiplies by
//! `D = diag(exp(i(phi_b + kappa L_b)))`, giving the amplitude arriving at
//! the head. Vertex scattering gives `a = Sigma D a + C_out^T c_in` and the
//! outgoing lead amplitudes are `c_out = diag(rho) c_in + C_in D a`, so
//!
//! ```text
//! S = diag(rho) + C_in D (1 - Sigma D)^{-1} C_out^T
//! ```
//!
//! `C_out` (the `coupling` matrix) holds `tau` on bonds departing a lead
//! vertex, `C_in` on bonds arriving there; `C_in = C_out J` with `J` the
//! reversal of directed bonds.

use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DirectedBond, GraphSpec};
use crate::linalg::{cis, CMat, C64};
use crate::vertex::VertexMatrix;

/// Solves with a 1-norm condition estimate above this are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct ScatteringSystem {
    graph: GraphSpec,
    vertices: Vec<VertexMatrix>,
    sigma_b: CMat,
    coupling: CMat,
    lengths_directed: Vec<f64>,
    rho_diag: Vec<C64>,
    // sparse rows of C_out and C_in
    couple_out: Vec<Vec<(usize, C64)>>,
    couple_in: Vec<Vec<(usize, C64)>>,
}

/// One evaluated S-matrix.
#[derive(Debug, Clone)]
pub struct SMatrixSample {
    pub s: CMat,
    pub phases: Vec<f64>,
    pub offset: f64,
    /// 1-norm condition estimate of `1 - Sigma D`.
    pub condition: f64,
}

pub fn assemble_system(g: &GraphSpec, vs: Vec<VertexMatrix>) -> Result<ScatteringSystem> {
    let v = g.num_vertices();
    if vs.len() != v {
        return Err(Error::Structure(format!("{} vertex matrices for {v} vertices", vs.len())));
    }
    let nb = g.num_bonds();
    let n = 2 * nb;
    let lambda = g.num_channels();
    let mut sigma_b = CMat::zeros(n, n);
    let mut coupling = CMat::zeros(lambda, n);
    let mut couple_out = vec![Vec::new(); lambda];
    let mut couple_in = vec![Vec::new(); lambda];
    let mut rho_diag = vec![C64::new(0.0, 0.0); lambda];

    for (alpha, m) in vs.iter().enumerate() {
        let channel = g.channel_of(alpha);
        if m.has_lead() != channel.is_some() || m.gamma().nrows() != g.valency_total(alpha) {
            return Err(Error::Structure(format!(
                "vertex {alpha}: matrix of size {} (lead: {}) but graph expects {} (lead: {})",
                m.gamma().nrows(),
                m.has_lead(),
                g.valency_total(alpha),
                channel.is_some()
            )));
        }
        let inc = g.incident(alpha);
        let arriving: Vec<usize> = inc.iter().map(|&(b, nbr)| g.departing(b, nbr).index(nb)).collect();
        let departing: Vec<usize> = inc.iter().map(|&(b, _)| g.departing(b, alpha).index(nb)).collect();
        let sigma = m.sigma();
        for (j, &out) in departing.iter().enumerate() {
            for (i, &inn) in arriving.iter().enumerate() {
                sigma_b[(out, inn)] = sigma[(j, i)];
            }
        }
        if let Some(ch) = channel {
            rho_diag[ch] = m.rho().expect("lead vertex");
            for (j, tau) in m.tau().into_iter().enumerate() {
                coupling[(ch, departing[j])] = tau;
                couple_out[ch].push((departing[j], tau));
                couple_in[ch].push((arriving[j], tau));
            }
        }
    }

    Ok(ScatteringSystem {
        lengths_directed: g.directed_lengths(),
        graph: g.clone(),
        vertices: vs,
        sigma_b,
        coupling,
        rho_diag,
        couple_out,
        couple_in,
    })
}

impl ScatteringSystem {
    pub fn graph(&self) -> &GraphSpec {
        &self.graph
    }

    pub fn vertices(&self) -> &[VertexMatrix] {
        &self.vertices
    }

    pub fn sigma_b(&self) -> &CMat {
        &self.sigma_b
    }

    /// `C_out`, Lambda x 2B.
    pub fn coupling(&self) -> &CMat {
        &self.coupling
    }

    /// `C_in = C_out J`, Lambda x 2B.
    pub fn coupling_in(&self) -> CMat {
        let mut c = CMat::zeros(self.num_channels(), self.num_directed());
        for (ch, row) in self.couple_in.iter().enumerate() {
            for &(e, t) in row {
                c[(ch, e)] = t;
            }
        }
        c
    }

    pub fn lengths_directed(&self) -> &[f64] {
        &self.lengths_directed
    }

    pub fn rho_diag(&self) -> &[C64] {
        &self.rho_diag
    }

    pub fn transmissions(&self) -> Vec<f64> {
        self.rho_diag.iter().map(|r| 1.0 - r.norm_sqr()).collect()
    }

    pub fn num_channels(&self) -> usize {
        self.rho_diag.len()
    }

    pub fn num_directed(&self) -> usize {
        self.sigma_b.nrows()
    }

    /// Diagonal of `D` for bond phases `phases` shifted by `offset * L_b`.
    pub fn propagation(&self, phases: &[f64], offset: f64) -> Vec<C64> {
        let nb = self.graph.num_bonds();
        assert_eq!(phases.len(), nb, "need one phase per bond");
        (0..2 * nb)
            .map(|e| cis(phases[e % nb] + offset * self.lengths_directed[e]))
            .collect()
    }

    /// Propagation diagonal at wave number `k`: `exp(i k L_b)`.
    pub fn propagation_at_k(&self, k: f64) -> Vec<C64> {
        self.lengths_directed.iter().map(|&l| cis(k * l)).collect()
    }

    pub fn evaluate_s(&self, phases: &[f64], offset: f64) -> Result<SMatrixSample> {
        let d = self.propagation(phases, offset);
        let (s, condition) = self.evaluate_with(&d)?;
        Ok(SMatrixSample { s, phases: phases.to_vec(), offset, condition })
    }

    /// S-matrix and condition estimate for an explicit propagation diagonal.
    pub fn evaluate_with(&self, d: &[C64]) -> Result<(CMat, f64)> {
        let n = self.num_directed();
        let lambda = self.num_channels();
        if lambda == 0 {
            return Ok((CMat::zeros(0, 0), 1.0));
        }
        let a = CMat::from_fn(n, n, |i, j| {
            let v = -self.sigma_b[(i, j)] * d[j];
            if i == j {
                v + 1.0
            } else {
                v
            }
        });
        let lu = a.partial_piv_lu();
        let mut rhs = CMat::zeros(n, lambda);
        for (ch, row) in self.couple_out.iter().enumerate() {
            for &(e, t) in row {
                rhs[(e, ch)] = t;
            }
        }
        let x = lu.solve(&rhs);
        let condition = norm1(&a) * inverse_norm1_estimate(&lu, n);
        if !condition.is_finite() || condition > CONDITION_LIMIT {
            return Err(Error::Singular { condition });
        }
        let mut s = CMat::zeros(lambda, lambda);
        for (a_ch, row) in self.couple_in.iter().enumerate() {
            for b_ch in 0..lambda {
                let mut acc: C64 = row.iter().map(|&(e, t)| t * d[e] * x[(e, b_ch)]).sum();
                if a_ch == b_ch {
                    acc += self.rho_diag[a_ch];
                }
                s[(a_ch, b_ch)] = acc;
            }
        }
        Ok((s, condition))
    }

    /// Spectral radius of `Sigma D` (from a full eigendecomposition).
    pub fn propagator_spectral_radius(&self, phases: &[f64], offset: f64) -> Result<f64> {
        let d = self.propagation(phases, offset);
        let m = self.sigma_d(&d);
        let ev = m.eigenvalues().map_err(|e| Error::Eigen(format!("{e:?}")))?;
        Ok(ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
    }

    fn sigma_d(&self, d: &[C64]) -> CMat {
        let n = self.num_directed();
        CMat::from_fn(n, n, |i, j| self.sigma_b[(i, j)] * d[j])
    }

    /// Partial sums of `diag(rho) + sum_n C_in D (Sigma D)^n C_out^T`.
    pub fn trajectory_sum(&self, phases: &[f64], offset: f64, n_max: usize) -> Result<TrajectoryExpansion> {
        let spectral_radius = self.propagator_spectral_radius(phases, offset)?;
        if spectral_radius >= 1.0 - 1e-10 {
            return Err(Error::Divergence { spectral_radius });
        }
        let exact = self.evaluate_s(phases, offset)?.s;
        let d = self.propagation(phases, offset);
        let sd = self.sigma_d(&d);
        let n = self.num_directed();
        let lambda = self.num_channels();

        let mut y = CMat::zeros(n, lambda);
        for (ch, row) in self.couple_out.iter().enumerate() {
            for &(e, t) in row {
                y[(e, ch)] = t;
            }
        }
        let mut partial = CMat::from_fn(lambda, lambda, |i, j| if i == j { self.rho_diag[i] } else { C64::new(0.0, 0.0) });
        let mut residuals = Vec::with_capacity(n_max + 1);
        for step in 0..=n_max {
            if step > 0 {
                y = &sd * &y;
            }
            for (a_ch, row) in self.couple_in.iter().enumerate() {
                for b_ch in 0..lambda {
                    let term: C64 = row.iter().map(|&(e, t)| t * d[e] * y[(e, b_ch)]).sum();
                    partial[(a_ch, b_ch)] += term;
                }
            }
            residuals.push((&partial - &exact).norm_l2());
        }
        Ok(TrajectoryExpansion {
            residual: *residuals.last().expect("at least one term"),
            partial,
            residuals,
            spectral_radius,
        })
    }

    /// Spectrum of the classical map `M_ij = |Sigma_ij|^2`.
    pub fn classical_map_gap(&self) -> Result<GapReport> {
        let n = self.num_directed();
        let m = Mat::<f64>::from_fn(n, n, |i, j| self.sigma_b[(i, j)].norm_sqr());
        let mut spectrum = m.eigenvalues().map_err(|e| Error::Eigen(format!("{e:?}")))?;
        spectrum.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        let moduli: Vec<f64> = spectrum.iter().map(|z| z.norm()).collect();
        let gap = match moduli.as_slice() {
            [a, b, ..] => a - b,
            _ => 0.0,
        };
        Ok(GapReport { spectrum, moduli, gap })
    }

    /// Write `Sigma^(B)` and `C_out` as raw row-major interleaved re/im
    /// little-endian binary64, plus a JSON header describing the layout.
    pub fn write_dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sigma_b.bin"), matrix_to_bytes(&self.sigma_b))?;
        std::fs::write(dir.join("coupling.bin"), matrix_to_bytes(&self.coupling))?;
        let header = serde_json::json!({
            "layout": "row-major, interleaved (re, im), little-endian IEEE-754 binary64",
            "sigma_b": { "file": "sigma_b.bin", "rows": self.sigma_b.nrows(), "cols": self.sigma_b.ncols() },
            "coupling": { "file": "coupling.bin", "rows": self.coupling.nrows(), "cols": self.coupling.ncols() },
            "directed_bond_index": "b for (b,+), B+b for (b,-); (b,+) runs from the larger to the smaller vertex",
        });
        let mut f = std::fs::File::create(dir.join("dump.json"))?;
        serde_json::to_writer_pretty(&mut f, &header)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryExpansion {
    pub partial: CMat,
    /// Frobenius distance to the exact S-matrix after the final term.
    pub residual: f64,
    /// Residual after each term `n = 0..=n_max`.
    pub residuals: Vec<f64>,
    pub spectral_radius: f64,
}

impl TrajectoryExpansion {
    /// Geometric decay rate of the residual between terms `from` and `to`.
    pub fn decay_ratio(&self, from: usize, to: usize) -> f64 {
        (self.residuals[to] / self.residuals[from]).powf(1.0 / (to - from) as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    #[serde(skip)]
    pub spectrum: Vec<C64>,
    /// Eigenvalue moduli, descending.
    pub moduli: Vec<f64>,
    pub gap: f64,
}

fn norm1(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager-Higham estimate of `||A^{-1}||_1` from an LU factorization.
fn inverse_norm1_estimate(lu: &faer::linalg::solvers::PartialPivLu<C64>, n: usize) -> f64 {
    let mut x = CMat::from_fn(n, 1, |_, _| C64::new(1.0 / n as f64, 0.0));
    let mut estimate = 0.0;
    for iter in 0..5 {
        let y = lu.solve(&x);
        let norm_y: f64 = (0..n).map(|i| y[(i, 0)].norm()).sum();
        if !norm_y.is_finite() {
            return f64::INFINITY;
        }
        if iter > 0 && norm_y <= estimate {
            break;
        }
        estimate = norm_y;
        let xi = CMat::from_fn(n, 1, |i, _| {
            let v = y[(i, 0)];
            if v.norm() > 0.0 {
                v / v.norm()
            } else {
                C64::new(1.0, 0.0)
            }
        });
        let z = lu.solve_adjoint(&xi);
        let (jmax, zmax) = (0..n)
            .map(|i| (i, z[(i, 0)].norm()))
            .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        let ztx: f64 = (0..n).map(|i| (z[(i, 0)].conj() * x[(i, 0)]).re).sum();
        if iter > 0 && zmax <= ztx {
            break;
        }
        x = CMat::zeros(n, 1);
        x[(jmax, 0)] = C64::new(1.0, 0.0);
    }
    estimate
}

/// Row-major, interleaved re/im, little-endian binary64.
pub fn matrix_to_bytes(m: &CMat) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 * m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            out.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    out
}

pub fn matrix_from_bytes(bytes: &[u8], rows: usize, cols: usize) -> Result<CMat> {
    if bytes.len() != 16 * rows * cols {
        return Err(Error::Structure(format!("{} bytes for a {rows}x{cols} complex matrix", bytes.len())));
    }
    let f = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        C64::new(f(k), f(k + 1))
    }))
}

/// Index helper: the directed bond arriving at `to` along `bond`.
pub fn arriving(g: &GraphSpec, bond: usize, to: usize) -> DirectedBond {
    g.departing(bond, to).reversed()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_closed_graph, build_graph};
    use crate::linalg::{symmetry_residual, unitarity_residual};
    use crate::vertex::{build_kirchhoff_vertex, build_system, BondPhases, VertexFamily};
    use faer::linalg::solvers::Solve;
    use rand::Rng;

    fn designed(t: Vec<f64>, seed: u64) -> VertexFamily {
        VertexFamily::designed(t, seed)
    }

    fn random_phases(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream_rng(seed, 0);
        (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect()
    }

    #[test]
    fn two_vertex_system_is_a_swap() {
        let g = build_graph(2, 2, (1.3, 1.3), 1).unwrap();
        let sys = build_system(&g, &VertexFamily::Kirchhoff).unwrap();
        assert!(sys.sigma_b().norm_l2() == 0.0);
        let (phi, kappa) = (0.4, 0.25);
        let s = sys.evaluate_s(&[phi], kappa).unwrap().s;
        let theta = phi + kappa * 1.3;
        assert!(s[(0, 0)].norm() < 1e-15 && s[(1, 1)].norm() < 1e-15);
        assert!((s[(0, 1)] - cis(theta)).norm() < 1e-14);
        assert!((s[(1, 0)] - cis(theta)).norm() < 1e-14);
        let tr = sys.trajectory_sum(&[phi], kappa, 0).unwrap();
        assert!(tr.residual < 1e-14);
    }

    #[test]
    fn triangle_kirchhoff_structure() {
        let g = build_closed_graph(3, (1.0, 2.0), 4).unwrap();
        let sys = build_system(&g, &VertexFamily::Kirchhoff).unwrap();
        let sb = sys.sigma_b();
        assert_eq!(sb.nrows(), 6);
        // brute force: every arriving bond continues to exactly one departing
        // bond with amplitude 1 (v = 2 Kirchhoff is a perfect transmitter)
        for j in 0..6 {
            let nz: Vec<usize> = (0..6).filter(|&i| sb[(i, j)].norm() > 0.0).collect();
            assert_eq!(nz.len(), 1);
            assert!((sb[(nz[0], j)] - 1.0).norm() < 1e-15);
            let nb = g.num_bonds();
            let (into, out) = (DirectedBond::from_index(j, nb), DirectedBond::from_index(nz[0], nb));
            assert_eq!(g.head(into), g.tail(out));
            assert_ne!(into.bond, out.bond);
        }
    }

    #[test]
    fn sigma_connects_head_to_tail_only() {
        let g = build_graph(6, 2, (1.0, 2.0), 8).unwrap();
        let sys = build_system(&g, &designed(vec![0.7, 0.3], 5)).unwrap();
        let nb = g.num_bonds();
        for i in 0..2 * nb {
            for j in 0..2 * nb {
                let out = DirectedBond::from_index(i, nb);
                let into = DirectedBond::from_index(j, nb);
                if g.head(into) != g.tail(out) {
                    assert_eq!(sys.sigma_b()[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn bond_matrix_deficit_spectrum() {
        // Independent route: singular values of Sigma^(B).
        let g = build_graph(7, 3, (1.0, 2.0), 12).unwrap();
        let t = vec![0.25, 0.5, 1.0];
        let sys = build_system(&g, &designed(t.clone(), 2)).unwrap();
        let svd = sys.sigma_b().svd().unwrap();
        let mut sq: Vec<f64> = (0..sys.num_directed()).map(|k| svd.S()[k].re.powi(2)).collect();
        sq.sort_by(f64::total_cmp);
        let mut expected: Vec<f64> = t.iter().map(|x| 1.0 - x).collect();
        expected.extend(std::iter::repeat(1.0).take(sys.num_directed() - 3));
        expected.sort_by(f64::total_cmp);
        for (a, e) in sq.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn unitary_and_symmetric_samples() {
        for (v, lambda, fam) in [
            (5, 2, VertexFamily::Kirchhoff),
            (9, 4, designed(vec![0.6], 3)),
            (12, 5, designed(vec![1.0, 0.2, 0.5, 0.9, 0.0], 4)),
        ] {
            let g = build_graph(v, lambda, (1.0, 2.0), v as u64).unwrap();
            let sys = build_system(&g, &fam).unwrap();
            for k in 0..5 {
                let s = sys.evaluate_s(&random_phases(g.num_bonds(), k), 0.1 * k as f64).unwrap();
                assert!(unitarity_residual(s.s.as_ref()) < 1e-12);
                assert!(symmetry_residual(s.s.as_ref()) < 1e-12);
            }
        }
    }

    #[test]
    fn resolvent_form_agrees() {
        // C_in (D^{-1} - Sigma)^{-1} C_out^T against the solver path.
        let g = build_graph(6, 3, (1.0, 2.0), 31).unwrap();
        let sys = build_system(&g, &designed(vec![0.8, 0.4, 1.0], 1)).unwrap();
        let phases = random_phases(g.num_bonds(), 9);
        let d = sys.propagation(&phases, 0.2);
        let n = sys.num_directed();
        let w = CMat::from_fn(n, n, |i, j| if i == j { 1.0 / d[i] } else { C64::new(0.0, 0.0) } - sys.sigma_b()[(i, j)]);
        let inv_ct = w.partial_piv_lu().solve(sys.coupling().transpose().to_owned());
        let mut s = sys.coupling_in() * inv_ct;
        for (ch, r) in sys.rho_diag().iter().enumerate() {
            s[(ch, ch)] += r;
        }
        let direct = sys.evaluate_s(&phases, 0.2).unwrap().s;
        assert!((&s - &direct).norm_l2() < 1e-10);
    }

    #[test]
    fn trajectory_sum_converges_geometrically() {
        let g = build_graph(5, 2, (1.0, 2.0), 17).unwrap();
        let sys = build_system(&g, &designed(vec![1.0], 6)).unwrap();
        let phases = random_phases(g.num_bonds(), 2);
        let r = sys.propagator_spectral_radius(&phases, 0.0).unwrap();
        let n_max = ((1e-11f64).ln() / r.ln()).ceil() as usize + 200;
        let tr = sys.trajectory_sum(&phases, 0.0, n_max).unwrap();
        assert!(tr.residual < 1e-8, "{} (radius {r})", tr.residual);
        let from = tr.residuals.iter().position(|&x| x < 1e-3).unwrap();
        let to = tr.residuals.iter().rposition(|&x| x > 1e-10).unwrap();
        let ratio = tr.decay_ratio(from, to);
        assert!((ratio - r).abs() < 0.05, "{ratio} vs {r}");

        // power iteration oracle for the spectral radius
        let d = sys.propagation(&phases, 0.0);
        let n = sys.num_directed();
        let m = CMat::from_fn(n, n, |i, j| sys.sigma_b()[(i, j)] * d[j]);
        let mut x = CMat::from_fn(n, 1, |i, _| C64::new(1.0 + i as f64 * 0.01, 0.3));
        let iters = 20000;
        let mut logs = 0.0;
        for it in 0..iters {
            x = &m * &x;
            let nx = x.norm_l2();
            if it >= iters / 2 {
                logs += nx.ln();
            }
            x = &x * faer::Scale(C64::new(1.0 / nx, 0.0));
        }
        let power_radius = (logs / (iters / 2) as f64).exp();
        assert!((power_radius - r).abs() < 0.01, "{power_radius} {r}");
    }

    #[test]
    fn closed_leads_do_not_converge() {
        let g = build_graph(5, 2, (1.0, 2.0), 2).unwrap();
        let sys = build_system(&g, &designed(vec![0.0], 6)).unwrap();
        let phases = random_phases(g.num_bonds(), 3);
        match sys.trajectory_sum(&phases, 0.0, 50) {
            Err(Error::Divergence { spectral_radius }) => assert!((spectral_radius - 1.0).abs() < 1e-9),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn gap_examples() {
        let tri = build_system(&build_closed_graph(3, (1.0, 2.0), 1).unwrap(), &VertexFamily::Kirchhoff).unwrap();
        let r = tri.classical_map_gap().unwrap();
        assert!(r.moduli.iter().all(|m| (m - 1.0).abs() < 1e-12));
        assert!(r.gap.abs() < 1e-12);

        let g = build_closed_graph(12, (1.0, 2.0), 3).unwrap();
        let sys = build_system(&g, &VertexFamily::Kirchhoff).unwrap();
        let r = sys.classical_map_gap().unwrap();
        assert!((r.moduli[0] - 1.0).abs() < 1e-10);
        assert!(r.gap > 0.05, "{}", r.gap);
    }

    #[test]
    fn gap_ignores_phases_of_sigma() {
        let g = build_graph(6, 2, (1.0, 2.0), 3).unwrap();
        let a = build_system(&g, &designed(vec![0.5], 1)).unwrap();
        let b = build_system(&g, &VertexFamily::Designed { transmissions: vec![0.5], phi1: 1.3, bond_phases: BondPhases::Random, seed: 1 }).unwrap();
        let mut c = a.clone();
        let n = c.num_directed();
        for j in 0..n {
            for i in 0..n {
                c.sigma_b[(i, j)] *= cis(0.37 * (i * 7 + j) as f64);
            }
        }
        let (ra, rc) = (a.classical_map_gap().unwrap(), c.classical_map_gap().unwrap());
        assert!((ra.gap - rc.gap).abs() < 1e-12);
        assert!(b.classical_map_gap().unwrap().gap.is_finite());
    }

    #[test]
    fn structural_mismatch() {
        let g = build_graph(4, 1, (1.0, 2.0), 1).unwrap();
        let mut vs: Vec<_> = (0..4).map(|a| build_kirchhoff_vertex(g.valency_total(a), a == 0).unwrap()).collect();
        vs[2] = build_kirchhoff_vertex(5, false).unwrap();
        assert!(matches!(assemble_system(&g, vs), Err(Error::Structure(_))));
        assert!(assemble_system(&g, vec![]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let g = build_graph(4, 2, (1.0, 2.0), 1).unwrap();
        let sys = build_system(&g, &designed(vec![0.5], 1)).unwrap();
        let dir = std::env::temp_dir().join(format!("qgraph-dump-{}", std::process::id()));
        sys.write_dump(&dir).unwrap();
        let bytes = std::fs::read(dir.join("sigma_b.bin")).unwrap();
        let back = matrix_from_bytes(&bytes, 12, 12).unwrap();
        assert_eq!(back, *sys.sigma_b());
        std::fs::remove_dir_all(dir).ok();
    }
}
