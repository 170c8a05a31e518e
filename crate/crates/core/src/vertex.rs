//! Vertex scattering matrices.
//!
//! Local line ordering at a vertex: the lead first (when present), then the
//! incident bonds in increasing bond index. `Gamma` maps incoming to
//! outgoing amplitudes and must be unitary and symmetric.

use faer::MatRef;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::linalg::{cis, expi_symmetric, hermitian_eigenvalues_desc, mirror_upper, random_goe, random_rotation, symmetry_residual, unitarity_residual, CMat, C64};
use crate::graph::GraphSpec;
use crate::rng::{derive_seed, stream_rng};
use crate::system::{assemble_system, ScatteringSystem};

/// Residual above which [`validate_vertex`] flags a matrix.
pub const VERTEX_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct VertexMatrix {
    has_lead: bool,
    gamma: CMat,
}

impl VertexMatrix {
    /// Wrap an arbitrary matrix without checking it; see [`validate_vertex`].
    pub fn from_raw(gamma: CMat, has_lead: bool) -> Self {
        assert_eq!(gamma.nrows(), gamma.ncols(), "vertex matrix must be square");
        Self { has_lead, gamma }
    }

    pub fn has_lead(&self) -> bool {
        self.has_lead
    }

    pub fn gamma(&self) -> MatRef<'_, C64> {
        self.gamma.as_ref()
    }

    pub fn gamma_mut(&mut self) -> &mut CMat {
        &mut self.gamma
    }

    /// Number of bonds at the vertex.
    pub fn valency(&self) -> usize {
        self.gamma.nrows() - self.bond_offset()
    }

    fn bond_offset(&self) -> usize {
        usize::from(self.has_lead)
    }

    /// Lead backscattering amplitude.
    pub fn rho(&self) -> Option<C64> {
        self.has_lead.then(|| self.gamma[(0, 0)])
    }

    /// Lead-to-bond couplings, empty without a lead.
    pub fn tau(&self) -> Vec<C64> {
        if !self.has_lead {
            return Vec::new();
        }
        (1..self.gamma.ncols()).map(|j| self.gamma[(0, j)]).collect()
    }

    /// Bond-to-bond block.
    pub fn sigma(&self) -> MatRef<'_, C64> {
        let o = self.bond_offset();
        let n = self.valency();
        self.gamma.as_ref().submatrix(o, o, n, n)
    }

    /// `T = 1 - |rho|^2`.
    pub fn transmission(&self) -> Option<f64> {
        self.rho().map(|r| 1.0 - r.norm_sqr())
    }
}

/// Kirchhoff (Neumann) matching: `Gamma_ij = 2/v - delta_ij`.
pub fn build_kirchhoff_vertex(valency_total: usize, has_lead: bool) -> Result<VertexMatrix> {
    if valency_total == 0 {
        return Err(param("vertex needs at least one line"));
    }
    if has_lead && valency_total < 2 {
        return Err(param("a lead vertex needs at least one bond"));
    }
    let v = valency_total as f64;
    let gamma = CMat::from_fn(valency_total, valency_total, |i, j| {
        C64::new(2.0 / v - if i == j { 1.0 } else { 0.0 }, 0.0)
    });
    Ok(VertexMatrix { has_lead, gamma })
}

/// Lead vertex with prescribed transmission `t_coeff`, `rho = +sqrt(1 - T)`.
///
/// `phases` holds `phi_1` followed by the `v - 2` bond phases `phi_mu`. The
/// canonical block form is rotated by `1 (+) R` with `R` a seeded Haar
/// rotation of the bond lines, so the lead couples to a generic bond
/// combination while `rho` and the spectrum of `sigma sigma^dagger` are kept.
pub fn build_canonical_vertex(
    valency_total: usize,
    t_coeff: f64,
    phases: &[f64],
    mixer_seed: u64,
) -> Result<VertexMatrix> {
    if !(0.0..=1.0).contains(&t_coeff) {
        return Err(param(format!("transmission coefficient {t_coeff} outside [0,1]")));
    }
    build_canonical_vertex_with_rho(valency_total, C64::new((1.0 - t_coeff).sqrt(), 0.0), phases, mixer_seed)
}

/// Canonical lead vertex for an arbitrary complex `rho` with `|rho| <= 1`.
pub fn build_canonical_vertex_with_rho(
    valency_total: usize,
    rho: C64,
    phases: &[f64],
    mixer_seed: u64,
) -> Result<VertexMatrix> {
    if valency_total < 2 {
        return Err(param("a lead vertex needs at least one bond"));
    }
    if phases.len() != valency_total - 1 {
        return Err(param(format!(
            "expected {} phases for a vertex with {valency_total} lines, got {}",
            valency_total - 1,
            phases.len()
        )));
    }
    if !(rho.norm() <= 1.0) {
        return Err(param(format!("|rho| = {} exceeds 1", rho.norm())));
    }
    let v = valency_total;
    let t_sqrt = (1.0 - rho.norm_sqr()).max(0.0).sqrt();
    let c = cis(-phases[0]);
    let mut base = CMat::zeros(v, v);
    base[(0, 0)] = rho;
    base[(0, 1)] = c * t_sqrt;
    base[(1, 0)] = c * t_sqrt;
    base[(1, 1)] = -rho.conj() * c * c;
    for (mu, &phi) in phases.iter().enumerate().skip(1) {
        base[(mu + 1, mu + 1)] = cis(phi);
    }

    let mut rng = stream_rng(mixer_seed, 0);
    let rot = random_rotation(v - 1, &mut rng);
    let mut mixer = CMat::zeros(v, v);
    mixer[(0, 0)] = C64::new(1.0, 0.0);
    for j in 0..v - 1 {
        for i in 0..v - 1 {
            mixer[(i + 1, j + 1)] = C64::new(rot[(i, j)], 0.0);
        }
    }
    let mut gamma = &mixer * &base * mixer.transpose();
    mirror_upper(&mut gamma);
    gamma[(0, 0)] = rho;
    Ok(VertexMatrix { has_lead: true, gamma })
}

/// Lead-free vertex `Gamma = exp(iA)` with `A` a seeded GOE matrix.
pub fn build_designed_bulk_vertex(valency: usize, seed: u64) -> Result<VertexMatrix> {
    if valency == 0 {
        return Err(param("vertex needs at least one line"));
    }
    let mut rng = stream_rng(seed, 0);
    let a = random_goe(valency, std::f64::consts::PI, &mut rng);
    Ok(VertexMatrix { has_lead: false, gamma: expi_symmetric(a.as_ref()) })
}

#[derive(Debug, Clone, Serialize)]
pub struct VertexReport {
    pub unitarity_residual: f64,
    pub symmetry_residual: f64,
    /// Eigenvalues of `sigma sigma^dagger`, descending.
    pub sigma_spectrum: Vec<f64>,
    pub transmission: Option<f64>,
    pub flagged: bool,
}

pub fn validate_vertex(m: &VertexMatrix) -> VertexReport {
    let unitarity = unitarity_residual(m.gamma());
    let symmetry = symmetry_residual(m.gamma());
    let sigma = m.sigma();
    let ssd = sigma * sigma.adjoint();
    let spectrum = hermitian_eigenvalues_desc(ssd.as_ref());
    let transmission = m.transmission();

    let spectrum_ok = match transmission {
        None => spectrum.iter().all(|&e| (e - 1.0).abs() < VERTEX_TOLERANCE),
        Some(t) => {
            let (last, rest) = spectrum.split_last().map(|(l, r)| (*l, r)).unwrap_or((1.0 - t, &[]));
            rest.iter().all(|&e| (e - 1.0).abs() < VERTEX_TOLERANCE) && (last - (1.0 - t)).abs() < VERTEX_TOLERANCE
        }
    };
    VertexReport {
        unitarity_residual: unitarity,
        symmetry_residual: symmetry,
        sigma_spectrum: spectrum,
        transmission,
        flagged: unitarity > VERTEX_TOLERANCE || symmetry > VERTEX_TOLERANCE || !spectrum_ok,
    }
}

/// Vertex family choice for a whole graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VertexFamily {
    /// Kirchhoff matching everywhere; lead transmissions follow from valency.
    Kirchhoff,
    /// Canonical lead vertices with prescribed transmissions, seeded bond
    /// phases and mixer, and seeded `exp(iA)` lead-free vertices.
    Designed {
        /// One entry per channel, or a single entry used for every channel.
        transmissions: Vec<f64>,
        #[serde(default)]
        phi1: f64,
        #[serde(default)]
        bond_phases: BondPhases,
        seed: u64,
    },
}

/// Choice of the bond phases `phi_mu` of canonical lead vertices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BondPhases {
    /// Seeded uniform phases per vertex.
    #[default]
    Random,
    /// All zero. The bond block is then `1` up to a rank-one term, so the
    /// lead vertex backscatters almost perfectly on all other bonds.
    Zero,
}

impl VertexFamily {
    /// Designed family with `phi_1 = 0` and random bond phases.
    pub fn designed(transmissions: Vec<f64>, seed: u64) -> Self {
        VertexFamily::Designed { transmissions, phi1: 0.0, bond_phases: BondPhases::Random, seed }
    }
}

const MIXER_SALT: u64 = 0x6d69_7865_72;
const BULK_SALT: u64 = 0x6275_6c6b;
const PHASE_SALT: u64 = 0x7068_6173_65;

/// One vertex matrix per vertex of `g`, in vertex order.
pub fn build_vertices(g: &GraphSpec, family: &VertexFamily) -> Result<Vec<VertexMatrix>> {
    (0..g.num_vertices())
        .map(|alpha| {
            let channel = g.channel_of(alpha);
            match family {
                VertexFamily::Kirchhoff => build_kirchhoff_vertex(g.valency_total(alpha), channel.is_some()),
                VertexFamily::Designed { transmissions, phi1, bond_phases, seed } => match channel {
                    Some(ch) => {
                        let t = match transmissions.as_slice() {
                            [t] => *t,
                            ts if ts.len() == g.num_channels() => ts[ch],
                            ts => {
                                return Err(param(format!(
                                    "{} transmissions for {} channels",
                                    ts.len(),
                                    g.num_channels()
                                )))
                            }
                        };
                        let v = g.valency_total(alpha);
                        let mut rng = stream_rng(derive_seed(*seed, PHASE_SALT + alpha as u64), 0);
                        let mut phases: Vec<f64> = match bond_phases {
                            BondPhases::Random => {
                                (0..v - 1).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect()
                            }
                            BondPhases::Zero => vec![0.0; v - 1],
                        };
                        phases[0] = *phi1;
                        build_canonical_vertex(v, t, &phases, derive_seed(*seed, MIXER_SALT + alpha as u64))
                    }
                    None => build_designed_bulk_vertex(g.valency(alpha), derive_seed(*seed, BULK_SALT + ((alpha as u64) << 20))),
                },
            }
        })
        .collect()
}

/// Graph plus family, assembled.
pub fn build_system(g: &GraphSpec, family: &VertexFamily) -> Result<ScatteringSystem> {
    assemble_system(g, build_vertices(g, family)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: C64, re: f64, im: f64) -> bool {
        (a - C64::new(re, im)).norm() < 1e-14
    }

    #[test]
    fn kirchhoff_small_cases() {
        let g2 = build_kirchhoff_vertex(2, false).unwrap();
        assert!(close(g2.gamma()[(0, 0)], 0.0, 0.0) && close(g2.gamma()[(0, 1)], 1.0, 0.0));

        let g3 = build_kirchhoff_vertex(3, false).unwrap();
        assert!(close(g3.gamma()[(1, 1)], -1.0 / 3.0, 0.0));
        assert!(close(g3.gamma()[(0, 2)], 2.0 / 3.0, 0.0));

        let g4 = build_kirchhoff_vertex(4, true).unwrap();
        assert!(close(g4.rho().unwrap(), -0.5, 0.0));
        assert!((g4.transmission().unwrap() - 0.75).abs() < 1e-15);
        assert!(build_kirchhoff_vertex(0, false).is_err());
    }

    #[test]
    fn kirchhoff_validates_cleanly() {
        for v in 1..12 {
            let r = validate_vertex(&build_kirchhoff_vertex(v, false).unwrap());
            assert!(r.unitarity_residual < 1e-14 && r.symmetry_residual < 1e-14 && !r.flagged);
        }
        for v in 2..12 {
            assert!(!validate_vertex(&build_kirchhoff_vertex(v, true).unwrap()).flagged);
        }
    }

    #[test]
    fn canonical_examples() {
        let m = build_canonical_vertex(2, 1.0, &[0.0], 3).unwrap();
        assert!(close(m.gamma()[(0, 0)], 0.0, 0.0));
        assert!(close(m.gamma()[(0, 1)], 1.0, 0.0));
        assert!(close(m.gamma()[(1, 1)], 0.0, 0.0));

        let closed = build_canonical_vertex(5, 0.0, &[0.0; 4], 3).unwrap();
        let r = validate_vertex(&closed);
        assert!(r.sigma_spectrum.iter().all(|&e| (e - 1.0).abs() < 1e-12));
        assert!(closed.tau().iter().all(|t| t.norm() < 1e-15));

        let m = build_canonical_vertex(7, 0.64, &[0.0; 6], 9).unwrap();
        assert!(close(m.rho().unwrap(), 0.6, 0.0));
        let r = validate_vertex(&m);
        let near_036 = r.sigma_spectrum.iter().filter(|&&e| (e - 0.36).abs() < 1e-12).count();
        assert_eq!(near_036, 1);
        assert!(!r.flagged);

        assert!(build_canonical_vertex(4, 1.5, &[0.0; 3], 1).is_err());
        assert!(build_canonical_vertex(4, 0.5, &[0.0; 2], 1).is_err());
    }

    #[test]
    fn canonical_sigma_spectrum_six_lines() {
        // Independent route: eigenvalues of sigma sigma^dagger from the
        // singular values of sigma.
        let m = build_canonical_vertex(6, 0.5, &[0.0; 5], 21).unwrap();
        let svd = m.sigma().to_owned().svd().unwrap();
        let mut sq: Vec<f64> = (0..5).map(|k| svd.S()[k].re.powi(2)).collect();
        sq.sort_by(|a, b| b.total_cmp(a));
        let expected = [1.0, 1.0, 1.0, 1.0, 0.5];
        for (a, e) in sq.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{sq:?}");
        }
        let r = validate_vertex(&m);
        for (a, e) in r.sigma_spectrum.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupted_matrix_is_flagged() {
        let mut m = build_kirchhoff_vertex(4, true).unwrap();
        m.gamma_mut()[(1, 2)] += C64::new(1e-6, 0.0);
        let r = validate_vertex(&m);
        assert!(r.flagged && r.symmetry_residual > 1e-7);
    }

    #[test]
    fn bulk_vertices_are_unitary_symmetric() {
        for v in 1..10 {
            let m = build_designed_bulk_vertex(v, 100 + v as u64).unwrap();
            let r = validate_vertex(&m);
            assert!(!r.flagged, "{r:?}");
            assert_eq!(r.symmetry_residual, 0.0);
        }
    }

    #[test]
    fn complex_rho_option() {
        let rho = C64::from_polar(0.3, 1.1);
        let m = build_canonical_vertex_with_rho(5, rho, &[0.2, 0.4, -1.0, 2.0], 4).unwrap();
        let r = validate_vertex(&m);
        assert!(!r.flagged, "{r:?}");
        assert!((m.transmission().unwrap() - 0.91).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn canonical_invariants(v in 2usize..12, t in 0.0f64..=1.0, seed in 0u64..1000, phi1 in -3.0f64..3.0) {
            let mut phases = vec![0.0; v - 1];
            phases[0] = phi1;
            let m = build_canonical_vertex(v, t, &phases, seed).unwrap();
            let r = validate_vertex(&m);
            prop_assert!(!r.flagged);
            prop_assert!(r.unitarity_residual < 1e-12);
            prop_assert!((r.transmission.unwrap() - t).abs() < 1e-12);
            // mixing with another seed keeps rho and the spectrum
            let other = validate_vertex(&build_canonical_vertex(v, t, &phases, seed + 1).unwrap());
            for (a, b) in r.sigma_spectrum.iter().zip(&other.sigma_spectrum) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
