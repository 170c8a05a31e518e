//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use qgraph::{CalibrationPlan, CorrelatorSpec, Factor, GoeSampler, SamplingPlan, VertexFamily};
use serde::{Deserialize, Serialize};

/// Invalid configuration, located by a JSON-style path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { path: path.into(), message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at {}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Everything needed to replay an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub graph: GraphConfig,
    pub vertices: VertexFamily,
    pub sampling: SamplingPlan,
    #[serde(default)]
    pub correlators: Vec<CorrelatorEntry>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Channel pairs for the moment and histogram report.
    #[serde(default)]
    pub distribution: Option<PairSet>,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    /// Comparisons that decide the exit status.
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(default = "default_z_threshold")]
    pub z_threshold: f64,
    /// Where artifacts go; not part of the recorded configuration.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

fn default_z_threshold() -> f64 {
    3.0
}

/// Complete graph with leads on the first `leads` vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub vertices: usize,
    pub leads: usize,
    pub length_min: f64,
    pub length_max: f64,
    pub seed: u64,
}

/// A correlator, optionally averaged over channel relabelings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatorEntry {
    pub name: String,
    pub p: Vec<Factor>,
    #[serde(default)]
    pub q: Vec<Factor>,
    #[serde(default)]
    pub pool: Option<Pool>,
}

/// Average over every injective relabeling of the channels that appear in
/// the correlator, except `fixed` ones, onto channels outside `fixed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pool {
    #[serde(default)]
    pub fixed: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSelection {
    /// All `(a, b)` with `a < b`.
    OffDiagonal,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSet {
    Named(PairSelection),
    List(Vec<[usize; 2]>),
}

impl PairSet {
    pub fn resolve(&self, num_channels: usize) -> Vec<(usize, usize)> {
        match self {
            PairSet::Named(PairSelection::OffDiagonal) => {
                (0..num_channels).flat_map(|a| (a + 1..num_channels).map(move |b| (a, b))).collect()
            }
            PairSet::Named(PairSelection::Diagonal) => (0..num_channels).map(|a| (a, a)).collect(),
            PairSet::List(l) => l.iter().map(|p| (p[0], p[1])).collect(),
        }
    }
}

/// Two-point curve from evenly spaced offsets. Offsets are in the scaled
/// unit `x = 2 pi d (kappa + kappa~)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub points: usize,
    pub spacing_x: f64,
    pub pairs: PairSet,
    /// Defaults to every lag below `points`.
    #[serde(default)]
    pub lags: Option<Vec<usize>>,
    /// Fit a Lorentzian to `|C|^2`.
    #[serde(default)]
    pub fit: bool,
}

impl SweepConfig {
    pub fn lags(&self) -> Vec<usize> {
        self.lags.clone().unwrap_or_else(|| (0..self.points).collect())
    }
}

/// GOE comparison curve on the same scaled grid as the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub dim: usize,
    pub calibration: CalibrationPlan,
    pub points: usize,
    pub sweeps_per_draw: usize,
    pub draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampler: GoeSampler,
    #[serde(default)]
    pub mixing_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Sampled S-matrices are unitary and symmetric.
    Unitarity,
    /// Two-channel, one-bond graph: `S` is the phase-shifted swap matrix.
    Swap,
    /// Correlators agree with the Ericson predictions.
    Ericson,
    /// Sweep curve agrees with the Ericson two-point function.
    Curve,
    /// Fitted correlation width agrees with the Ericson width.
    Width,
    /// Sweep curve agrees with the GOE oracle.
    Goe,
    /// Moment ratio of the distribution report equals 2.
    Gaussian,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    /// Replaces the sampling seed and the oracle seeds.
    pub seed: Option<u64>,
    /// Replaces the graph sample count and the oracle draw counts.
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path.is_empty() { "$".into() } else { path }, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.sampling.seed = seed;
            if let Some(or) = &mut self.oracle {
                or.seed = qgraph::rng::derive_seed(seed, ORACLE_SALT);
                or.calibration.seed = qgraph::rng::derive_seed(seed, CALIBRATION_SALT);
            }
        }
        if let Some(n) = o.samples {
            self.sampling.n_samples = n;
            if let Some(or) = &mut self.oracle {
                or.draws = n;
                or.calibration.draws = n;
            }
        }
        if let Some(out) = &o.out {
            self.output_dir = Some(out.clone());
        }
    }

    /// Checks that need no graph construction. Channel ranges are checked
    /// against `graph.leads`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.graph;
        if g.vertices < 2 {
            return Err(ConfigError::new("graph.vertices", "at least 2 vertices are required"));
        }
        if g.leads == 0 || g.leads > g.vertices {
            return Err(ConfigError::new("graph.leads", format!("must be in 1..={}", g.vertices)));
        }
        if !(g.length_min > 0.0 && g.length_min <= g.length_max && g.length_max.is_finite()) {
            return Err(ConfigError::new("graph.length_min", "need 0 < length_min <= length_max"));
        }
        if let VertexFamily::Designed { transmissions, .. } = &self.vertices {
            if transmissions.len() != 1 && transmissions.len() != g.leads {
                return Err(ConfigError::new("vertices.transmissions", "one entry, or one per lead"));
            }
            if let Some(t) = transmissions.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(ConfigError::new("vertices.transmissions", format!("{t} outside [0, 1]")));
            }
        }
        let s = &self.sampling;
        if s.batches < 2 || s.n_samples < s.batches {
            return Err(ConfigError::new("sampling.n_samples", "need at least two batches and one sample per batch"));
        }
        let lambda = g.leads;
        for (i, c) in self.correlators.iter().enumerate() {
            let path = format!("correlators[{i}]");
            c.spec().validate(lambda).map_err(|e| ConfigError::new(&path, e))?;
            if let Some(pool) = &c.pool {
                if let Some(f) = pool.fixed.iter().find(|&&f| f >= lambda) {
                    return Err(ConfigError::new(format!("{path}.pool.fixed"), format!("channel {f} out of range")));
                }
                c.relabeled(lambda).map_err(|e| ConfigError::new(format!("{path}.pool"), e))?;
            }
        }
        if let Some(d) = &self.distribution {
            check_pairs(d, lambda, "distribution")?;
        }
        if let Some(sw) = &self.sweep {
            if sw.points < 2 || !(sw.spacing_x > 0.0 && sw.spacing_x.is_finite()) {
                return Err(ConfigError::new("sweep", "need at least two points and a positive spacing"));
            }
            if let Some(m) = sw.lags().iter().find(|&&m| m >= sw.points) {
                return Err(ConfigError::new("sweep.lags", format!("lag {m} needs more than {} points", sw.points)));
            }
            check_pairs(&sw.pairs, lambda, "sweep.pairs")?;
        }
        if let Some(or) = &self.oracle {
            let Some(sw) = &self.sweep else {
                return Err(ConfigError::new("oracle", "the oracle curve needs a sweep"));
            };
            if or.points <= sw.lags().into_iter().max().unwrap_or(0) {
                return Err(ConfigError::new("oracle.points", "must exceed the largest sweep lag"));
            }
            if or.draws < s.batches {
                return Err(ConfigError::new("oracle.draws", "fewer draws than jackknife batches"));
            }
        }
        for check in &self.checks {
            let missing = match check {
                Check::Ericson => self.correlators.is_empty().then_some("correlators"),
                Check::Curve | Check::Width => self.sweep.is_none().then_some("sweep"),
                Check::Goe => self.oracle.is_none().then_some("oracle"),
                Check::Gaussian => self.distribution.is_none().then_some("distribution"),
                Check::Swap => (g.vertices != 2 || g.leads != 2 || self.vertices != VertexFamily::Kirchhoff)
                    .then_some("a two-vertex, two-lead Kirchhoff graph"),
                Check::Unitarity => None,
            };
            if let Some(m) = missing {
                return Err(ConfigError::new("checks", format!("{check:?} needs {m}")));
            }
        }
        if !(self.z_threshold > 0.0) {
            return Err(ConfigError::new("z_threshold", "must be positive"));
        }
        Ok(())
    }
}

const ORACLE_SALT: u64 = 0x6f72_6163;
const CALIBRATION_SALT: u64 = 0x6361_6c69;

fn check_pairs(p: &PairSet, lambda: usize, path: &str) -> Result<(), ConfigError> {
    let pairs = p.resolve(lambda);
    if pairs.is_empty() {
        return Err(ConfigError::new(path, "no channel pairs"));
    }
    if let Some((a, b)) = pairs.iter().find(|(a, b)| *a >= lambda || *b >= lambda) {
        return Err(ConfigError::new(path, format!("pair ({a}, {b}) out of range")));
    }
    Ok(())
}

const MAX_RELABELINGS: usize = 10_000;

impl CorrelatorEntry {
    pub fn spec(&self) -> CorrelatorSpec {
        CorrelatorSpec::new(self.p.clone(), self.q.clone())
    }

    /// The specs averaged over: the entry itself, or all its relabelings.
    pub fn relabeled(&self, num_channels: usize) -> qgraph::Result<Vec<CorrelatorSpec>> {
        let spec = self.spec();
        let Some(pool) = &self.pool else {
            return Ok(vec![spec]);
        };
        let mut used: Vec<usize> = spec.p.iter().chain(&spec.q).flat_map(|f| [f.row, f.col]).collect();
        used.sort_unstable();
        used.dedup();
        let free: Vec<usize> = used.iter().copied().filter(|c| !pool.fixed.contains(c)).collect();
        let targets: Vec<usize> = (0..num_channels).filter(|c| !pool.fixed.contains(c)).collect();
        let mut maps = Vec::new();
        let mut current = Vec::with_capacity(free.len());
        injections(&targets, free.len(), &mut current, &mut maps);
        if maps.len() > MAX_RELABELINGS {
            return Err(qgraph::Error::Parameter(format!("{} relabelings exceed {MAX_RELABELINGS}", maps.len())));
        }
        if maps.is_empty() {
            return Err(qgraph::Error::Parameter("no channels left to relabel onto".into()));
        }
        Ok(maps
            .iter()
            .map(|m| {
                let relabel = |c: usize| free.iter().position(|&f| f == c).map_or(c, |k| m[k]);
                let map = |f: &Factor| Factor::new(relabel(f.row), relabel(f.col), f.offset);
                CorrelatorSpec::new(spec.p.iter().map(map).collect(), spec.q.iter().map(map).collect())
            })
            .collect())
    }
}

fn injections(targets: &[usize], k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    if out.len() > MAX_RELABELINGS {
        return;
    }
    for &t in targets {
        if !current.contains(&t) {
            current.push(t);
            injections(targets, k, current, out);
            current.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "graph": { "vertices": 6, "leads": 3, "length_min": 1.0, "length_max": 2.0, "seed": 1 },
        "vertices": { "family": "kirchhoff" },
        "sampling": { "n_samples": 100, "seed": 2 }
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.sampling.batches, 50);
        assert_eq!(c.z_threshold, 3.0);
        assert!(c.correlators.is_empty() && c.sweep.is_none());
    }

    #[test]
    fn schema_errors_carry_the_path() {
        let bad = MINIMAL.replace("\"leads\": 3", "\"leads\": \"three\"");
        let e = ExperimentConfig::parse(&bad).unwrap_err();
        assert_eq!(e.path, "graph.leads");
        let bad = MINIMAL.replace("\"seed\": 2", "\"seed\": 2, \"bogus\": 1");
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().path, "sampling.bogus");
        let bad = MINIMAL.replace("\"leads\": 3", "\"leads\": 9");
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().path, "graph.leads");
    }

    #[test]
    fn correlator_channels_are_checked() {
        let bad = MINIMAL.replace(
            "\"sampling\"",
            r#""correlators": [{ "name": "x", "p": [{ "row": 0, "col": 5 }] }], "sampling""#,
        );
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().path, "correlators[0]");
    }

    #[test]
    fn relabeling_counts() {
        let e = CorrelatorEntry {
            name: "x".into(),
            p: vec![Factor::new(0, 1, 0.0)],
            q: vec![Factor::new(0, 1, 0.0)],
            pool: Some(Pool { fixed: vec![] }),
        };
        assert_eq!(e.relabeled(10).unwrap().len(), 90);
        let e = CorrelatorEntry {
            p: vec![Factor::new(0, 0, 0.0), Factor::new(0, 1, 0.0)],
            pool: Some(Pool { fixed: vec![0] }),
            ..e
        };
        let specs = e.relabeled(10).unwrap();
        assert_eq!(specs.len(), 9);
        assert!(specs.iter().all(|s| s.p[0] == Factor::new(0, 0, 0.0) && s.q[0].row == 0 && s.q[0].col != 0));
    }

    #[test]
    fn pair_sets() {
        assert_eq!(PairSet::Named(PairSelection::OffDiagonal).resolve(3), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(PairSet::Named(PairSelection::Diagonal).resolve(2), vec![(0, 0), (1, 1)]);
        let p: PairSet = serde_json::from_str("[[0, 1]]").unwrap();
        assert_eq!(p.resolve(2), vec![(0, 1)]);
    }

    #[test]
    fn overrides_replace_seeds_and_counts() {
        let mut c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.apply(&Overrides { seed: Some(9), samples: Some(500), out: Some("x".into()) });
        assert_eq!((c.sampling.seed, c.sampling.n_samples), (9, 500));
        assert_eq!(c.output_dir, Some(PathBuf::from("x")));
    }
}
