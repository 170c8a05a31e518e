//! Graph topology: vertices, bonds, bond lengths, lead placement and the
//! directed-bond index space.
//!
//! Bonds are stored as `(alpha, beta)` with `alpha > beta` in lexicographic
//! order; that order defines the bond index `b`. The directed bond `(b, +)`
//! propagates from `alpha` toward `beta`, `(b, -)` the other way. Linear
//! directed indices are `b` for `+` and `B + b` for `-`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{derive_seed, stream_rng};

/// Largest `L_max / L_min` accepted by [`build_graph`].
pub const DEFAULT_MAX_LENGTH_RATIO: f64 = 2.0;

const LENGTH_SALT: u64 = 0x6c65_6e67_7468;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Plus => Direction::Minus,
            Direction::Minus => Direction::Plus,
        }
    }
}

/// A bond together with a propagation sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirectedBond {
    pub bond: usize,
    pub direction: Direction,
}

impl DirectedBond {
    pub fn new(bond: usize, direction: Direction) -> Self {
        Self { bond, direction }
    }

    /// Linear index in `0..2B`.
    pub fn index(self, num_bonds: usize) -> usize {
        match self.direction {
            Direction::Plus => self.bond,
            Direction::Minus => num_bonds + self.bond,
        }
    }

    pub fn from_index(index: usize, num_bonds: usize) -> Self {
        assert!(index < 2 * num_bonds, "directed bond index {index} out of range");
        if index < num_bonds {
            Self::new(index, Direction::Plus)
        } else {
            Self::new(index - num_bonds, Direction::Minus)
        }
    }

    pub fn reversed(self) -> Self {
        Self::new(self.bond, self.direction.flip())
    }
}

/// Physical definition of an open graph.
///
/// Immutable after construction. Serialized lengths use their IEEE-754 bit
/// patterns so a persisted spec replays bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphWire", into = "GraphWire")]
pub struct GraphSpec {
    num_vertices: usize,
    bonds: Vec<(usize, usize)>,
    lengths: Vec<f64>,
    leads: Vec<usize>,
    rng_seed: u64,
    // (bond, neighbour) pairs per vertex, sorted by bond index
    incidence: Vec<Vec<(usize, usize)>>,
}

impl GraphSpec {
    /// Validating constructor. Bonds may be given in any order and
    /// orientation; they are normalized to `alpha > beta`, sorted, and the
    /// lengths permuted along with them. A graph without leads is allowed
    /// (closed graph, used for spectral diagnostics).
    pub fn new(
        num_vertices: usize,
        bonds: Vec<(usize, usize)>,
        lengths: Vec<f64>,
        leads: Vec<usize>,
        rng_seed: u64,
    ) -> Result<Self> {
        if num_vertices < 2 {
            return Err(param(format!("need at least 2 vertices, got {num_vertices}")));
        }
        if bonds.len() != lengths.len() {
            return Err(Error::Structure(format!(
                "{} bonds but {} lengths",
                bonds.len(),
                lengths.len()
            )));
        }
        let mut paired: Vec<((usize, usize), f64)> = Vec::with_capacity(bonds.len());
        for (&(a, b), &len) in bonds.iter().zip(&lengths) {
            if a == b {
                return Err(param(format!("self-loop at vertex {a}")));
            }
            if a >= num_vertices || b >= num_vertices {
                return Err(param(format!("bond ({a},{b}) references a missing vertex")));
            }
            if !(len.is_finite() && len > 0.0) {
                return Err(param(format!("bond ({a},{b}) has non-positive length {len}")));
            }
            paired.push(((a.max(b), a.min(b)), len));
        }
        paired.sort_by(|x, y| x.0.cmp(&y.0));
        if paired.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(param("duplicate bond"));
        }
        if paired.is_empty() {
            return Err(param("graph has no bonds"));
        }
        let mut sorted_lengths: Vec<f64> = paired.iter().map(|p| p.1).collect();
        sorted_lengths.sort_by(f64::total_cmp);
        if sorted_lengths.windows(2).any(|w| w[0] == w[1]) {
            return Err(param("bond lengths must be pairwise distinct"));
        }

        let mut seen = vec![false; num_vertices];
        for &l in &leads {
            if l >= num_vertices {
                return Err(param(format!("lead on missing vertex {l}")));
            }
            if std::mem::replace(&mut seen[l], true) {
                return Err(param(format!("two leads on vertex {l}")));
            }
        }

        let bonds: Vec<(usize, usize)> = paired.iter().map(|p| p.0).collect();
        let lengths: Vec<f64> = paired.iter().map(|p| p.1).collect();
        let mut incidence = vec![Vec::new(); num_vertices];
        for (b, &(a, c)) in bonds.iter().enumerate() {
            incidence[a].push((b, c));
            incidence[c].push((b, a));
        }
        if let Some(v) = incidence.iter().position(Vec::is_empty) {
            return Err(param(format!("vertex {v} has no bonds")));
        }

        Ok(Self { num_vertices, bonds, lengths, leads, rng_seed, incidence })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn num_directed(&self) -> usize {
        2 * self.bonds.len()
    }

    pub fn num_channels(&self) -> usize {
        self.leads.len()
    }

    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn leads(&self) -> &[usize] {
        &self.leads
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Channel index of the lead on `vertex`, if any.
    pub fn channel_of(&self, vertex: usize) -> Option<usize> {
        self.leads.iter().position(|&l| l == vertex)
    }

    /// `(bond, neighbour)` pairs incident on `vertex`, in bond order.
    pub fn incident(&self, vertex: usize) -> &[(usize, usize)] {
        &self.incidence[vertex]
    }

    /// Number of bonds at `vertex` (the lead is not counted).
    pub fn valency(&self, vertex: usize) -> usize {
        self.incidence[vertex].len()
    }

    /// Total number of lines at `vertex`, lead included.
    pub fn valency_total(&self, vertex: usize) -> usize {
        self.valency(vertex) + usize::from(self.channel_of(vertex).is_some())
    }

    pub fn tail(&self, e: DirectedBond) -> usize {
        let (a, b) = self.bonds[e.bond];
        match e.direction {
            Direction::Plus => a,
            Direction::Minus => b,
        }
    }

    pub fn head(&self, e: DirectedBond) -> usize {
        self.tail(e.reversed())
    }

    /// Directed bond leaving `from` along `bond`.
    pub fn departing(&self, bond: usize, from: usize) -> DirectedBond {
        let (a, _) = self.bonds[bond];
        if a == from {
            DirectedBond::new(bond, Direction::Plus)
        } else {
            DirectedBond::new(bond, Direction::Minus)
        }
    }

    /// Length of every directed bond; `(b,+)` and `(b,-)` share `L_b`.
    pub fn directed_lengths(&self) -> Vec<f64> {
        self.lengths.iter().chain(self.lengths.iter()).copied().collect()
    }

    pub fn min_length(&self) -> f64 {
        self.lengths.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_length(&self) -> f64 {
        self.lengths.iter().copied().fold(0.0, f64::max)
    }

    /// Copy with every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.num_vertices,
            self.bonds.clone(),
            self.lengths.iter().map(|l| l * factor).collect(),
            self.leads.clone(),
            self.rng_seed,
        )
    }
}

/// Complete graph with `lambda` leads on vertices `0..lambda` and lengths
/// drawn uniformly from `length_range`.
pub fn build_graph(v: usize, lambda: usize, length_range: (f64, f64), seed: u64) -> Result<GraphSpec> {
    build_graph_with_ratio(v, lambda, length_range, DEFAULT_MAX_LENGTH_RATIO, seed)
}

pub fn build_graph_with_ratio(
    v: usize,
    lambda: usize,
    length_range: (f64, f64),
    max_ratio: f64,
    seed: u64,
) -> Result<GraphSpec> {
    if lambda == 0 {
        return Err(param("at least one lead is required"));
    }
    complete_graph(v, lambda, length_range, max_ratio, seed)
}

/// Complete graph without leads.
pub fn build_closed_graph(v: usize, length_range: (f64, f64), seed: u64) -> Result<GraphSpec> {
    complete_graph(v, 0, length_range, DEFAULT_MAX_LENGTH_RATIO, seed)
}

fn complete_graph(
    v: usize,
    lambda: usize,
    (min, max): (f64, f64),
    max_ratio: f64,
    seed: u64,
) -> Result<GraphSpec> {
    if v < 2 {
        return Err(param(format!("need at least 2 vertices, got {v}")));
    }
    if lambda > v {
        return Err(param(format!("{lambda} leads on {v} vertices")));
    }
    if !(min > 0.0 && min <= max && max.is_finite()) {
        return Err(param(format!("invalid length range [{min}, {max}]")));
    }
    if max / min > max_ratio {
        return Err(param(format!("L_max/L_min = {} exceeds {max_ratio}", max / min)));
    }
    let bonds: Vec<(usize, usize)> = (1..v).flat_map(|a| (0..a).map(move |b| (a, b))).collect();
    let mut rng = stream_rng(derive_seed(seed, LENGTH_SALT), 0);
    let lengths = bonds
        .iter()
        .map(|_| if min == max { min } else { rng.random_range(min..=max) })
        .collect();
    GraphSpec::new(v, bonds, lengths, (0..lambda).collect(), seed)
}

/// Mean density of wave-number levels, `(1/pi) * sum_b L_b`.
pub fn mean_level_density(g: &GraphSpec) -> f64 {
    g.lengths.iter().sum::<f64>() / PI
}

#[derive(Serialize, Deserialize)]
struct GraphWire {
    num_vertices: usize,
    bonds: Vec<[usize; 2]>,
    /// IEEE-754 binary64 bit patterns, 16 lowercase hex digits each.
    lengths_bits: Vec<String>,
    leads: Vec<usize>,
    rng_seed: u64,
}

impl From<GraphSpec> for GraphWire {
    fn from(g: GraphSpec) -> Self {
        Self {
            num_vertices: g.num_vertices,
            bonds: g.bonds.iter().map(|&(a, b)| [a, b]).collect(),
            lengths_bits: g.lengths.iter().map(|l| format!("{:016x}", l.to_bits())).collect(),
            leads: g.leads,
            rng_seed: g.rng_seed,
        }
    }
}

impl TryFrom<GraphWire> for GraphSpec {
    type Error = Error;

    fn try_from(w: GraphWire) -> Result<Self> {
        let lengths = w
            .lengths_bits
            .iter()
            .map(|s| {
                u64::from_str_radix(s.trim_start_matches("0x"), 16)
                    .map(f64::from_bits)
                    .map_err(|e| param(format!("bad length encoding {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        GraphSpec::new(
            w.num_vertices,
            w.bonds.into_iter().map(|[a, b]| (a, b)).collect(),
            lengths,
            w.leads,
            w.rng_seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smallest_graph() {
        let g = build_graph(2, 2, (1.0, 1.0), 3).unwrap();
        assert_eq!(g.num_bonds(), 1);
        assert_eq!(g.leads(), &[0, 1]);
        assert_eq!(g.valency_total(0), 2);
    }

    #[test]
    fn complete_graph_counts() {
        let g = build_graph(5, 2, (1.0, 2.0), 11).unwrap();
        assert_eq!(g.num_bonds(), 10);
        assert_eq!(g.num_directed(), 20);
        assert!(g.lengths().iter().all(|&l| (1.0..=2.0).contains(&l)));
    }

    #[test]
    fn deterministic_lengths() {
        let a = build_graph(8, 3, (1.0, 2.0), 42).unwrap();
        let b = build_graph(8, 3, (1.0, 2.0), 42).unwrap();
        let c = build_graph(8, 3, (1.0, 2.0), 43).unwrap();
        let bits = |g: &GraphSpec| g.lengths().iter().map(|l| l.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn lengths_pairwise_distinct() {
        let g = build_graph(30, 10, (1.0, 2.0), 5).unwrap();
        let mut l = g.lengths().to_vec();
        l.sort_by(f64::total_cmp);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn parameter_errors() {
        assert!(build_graph(3, 4, (1.0, 2.0), 0).is_err());
        assert!(build_graph(3, 0, (1.0, 2.0), 0).is_err());
        assert!(build_graph(3, 1, (2.0, 1.0), 0).is_err());
        assert!(build_graph(3, 1, (0.0, 1.0), 0).is_err());
        assert!(build_graph(1, 1, (1.0, 2.0), 0).is_err());
        assert!(build_graph(3, 1, (1.0, 3.0), 0).is_err());
        // equal lengths on more than one bond violate incommensurability
        assert!(build_graph(3, 1, (1.0, 1.0), 0).is_err());
        assert!(GraphSpec::new(3, vec![(0, 1), (1, 0)], vec![1.0, 1.5], vec![0], 0).is_err());
        assert!(GraphSpec::new(3, vec![(0, 1), (1, 2)], vec![1.0, 1.5], vec![0, 0], 0).is_err());
    }

    #[test]
    fn level_density_examples() {
        let one = GraphSpec::new(2, vec![(1, 0)], vec![PI], vec![0], 0).unwrap();
        assert!((mean_level_density(&one) - 1.0).abs() < 1e-15);

        // 10 bonds of (nearly) unit length: 10/pi
        let g = build_graph(5, 1, (1.0, 1.0 + 1e-12), 1).unwrap();
        assert!((mean_level_density(&g) - 10.0 / PI).abs() < 1e-10);
        assert!((mean_level_density(&g.scaled(2.0).unwrap()) - 2.0 * mean_level_density(&g)).abs() < 1e-12);
    }

    #[test]
    fn density_invariant_under_relabeling() {
        let g = build_graph(6, 2, (1.0, 2.0), 9).unwrap();
        let mut bonds = g.bonds().to_vec();
        let mut lengths = g.lengths().to_vec();
        bonds.reverse();
        lengths.reverse();
        let swapped: Vec<_> = bonds.iter().map(|&(a, b)| (b, a)).collect();
        let h = GraphSpec::new(6, swapped, lengths, vec![0, 1], 9).unwrap();
        assert_eq!(h, g);
        assert!((mean_level_density(&h) - mean_level_density(&g)).abs() < 1e-12);
    }

    #[test]
    fn head_and_tail_follow_convention() {
        let g = build_graph(4, 1, (1.0, 2.0), 1).unwrap();
        for (b, &(a, c)) in g.bonds().iter().enumerate() {
            assert!(a > c);
            let plus = DirectedBond::new(b, Direction::Plus);
            assert_eq!((g.tail(plus), g.head(plus)), (a, c));
            assert_eq!(g.departing(b, c), plus.reversed());
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let g = build_graph(7, 3, (1.0, 2.0), 77).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains("lengths_bits"));
        let back: GraphSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn directed_index_is_a_bijection(b in 1usize..500, i in 0usize..1000) {
            let i = i % (2 * b);
            let e = DirectedBond::from_index(i, b);
            prop_assert_eq!(e.index(b), i);
            prop_assert_eq!(e.reversed().reversed(), e);
            prop_assert_ne!(e.reversed().index(b), i);
        }
    }
}
