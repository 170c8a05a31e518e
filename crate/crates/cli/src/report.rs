//! Comparison report: Monte Carlo against predictions and the oracle.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::Check;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `|measured - expected| / stderr`.
    ZScore,
    /// `|measured - expected|`.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: String,
    pub check: Check,
    pub measured: [f64; 2],
    pub expected: [f64; 2],
    pub stderr: f64,
    pub metric: Metric,
    pub score: f64,
    pub limit: f64,
    /// Whether this comparison counts towards the overall verdict.
    pub gated: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub comparisons: Vec<Comparison>,
    pub passed: bool,
}

impl Report {
    pub fn new() -> Self {
        Self { comparisons: Vec::new(), passed: true }
    }

    /// Complex comparison; `stderr` is the combined error of the difference.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        name: impl Into<String>,
        check: Check,
        measured: [f64; 2],
        expected: [f64; 2],
        stderr: f64,
        metric: Metric,
        limit: f64,
        gated: bool,
    ) {
        let dev = (measured[0] - expected[0]).hypot(measured[1] - expected[1]);
        let score = match metric {
            Metric::ZScore => qgraph::stats::z_score(dev, stderr),
            Metric::Absolute => dev,
        };
        let passed = score <= limit;
        self.passed &= passed || !gated;
        self.comparisons.push(Comparison {
            name: name.into(),
            check,
            measured,
            expected,
            stderr,
            metric,
            score,
            limit,
            gated,
            passed,
        });
    }

    /// Worst score among comparisons of one kind.
    pub fn worst(&self, check: Check) -> Option<f64> {
        self.comparisons.iter().filter(|c| c.check == check).map(|c| c.score).reduce(f64::max)
    }

    pub fn find(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.comparisons {
            let status = match (c.gated, c.passed) {
                (true, true) => "PASS",
                (true, false) => "FAIL",
                (false, _) => "info",
            };
            let metric = match c.metric {
                Metric::ZScore => "|z|",
                Metric::Absolute => "|dev|",
            };
            let _ = writeln!(
                s,
                "{status} {}: measured ({:.6e}, {:.6e}) expected ({:.6e}, {:.6e}) stderr {:.3e} {metric} {:.3} limit {}",
                c.name, c.measured[0], c.measured[1], c.expected[0], c.expected[1], c.stderr, c.score, c.limit
            );
        }
        let _ = writeln!(s, "overall: {}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}
