//! Chaotic scattering on open quantum graphs.
//!
//! The crate evaluates the exact S-matrix of a graph with unitary vertex
//! matching conditions, estimates S-matrix correlation functions by Monte
//! Carlo over bond phases, and provides the closed-form Ericson-regime
//! predictions and a GOE resonance-model oracle to compare against.
//!
//! ```no_run
//! use qgraph::{build_graph, build_system, VertexFamily};
//!
//! let g = build_graph(10, 3, (1.0, 2.0), 7).unwrap();
//! let sys = build_system(&g, &VertexFamily::Kirchhoff).unwrap();
//! let s = sys.evaluate_s(&vec![0.3; g.num_bonds()], 0.0).unwrap();
//! println!("{:?}", s.s);
//! ```

pub mod correlator;
pub mod ericson;
pub mod error;
pub mod goe;
pub mod graph;
pub mod linalg;
pub mod rng;
pub mod stats;
pub mod system;
pub mod vertex;

/// Version of this crate, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use correlator::{
    correlation_curve, distribution_report, estimate_correlator, estimate_correlators, estimate_mean_s,
    mean_s_analytic, sample_phases, CorrelatorEstimate, CorrelatorSpec, CurvePoint, DistributionReport, Ensemble,
    Factor, SampleSet, SamplingPlan, Sweep,
};
pub use ericson::{
    ericson_f_factor, ericson_pq, ericson_two_point, ericson_width, fit_lorentzian, LorentzianFit,
};
pub use error::{Error, Result};
pub use goe::{
    goe_calibrate, goe_correlation_curve, goe_sample_s, CalibrationPlan, CalibrationRecord, GoeDraw, GoeModel, GoeSampler, GoeSweep,
    ScaledPoint,
};
pub use graph::{build_closed_graph, build_graph, mean_level_density, DirectedBond, Direction, GraphSpec};
pub use linalg::{CMat, C64};
pub use stats::{Batches, Estimate};
pub use system::{assemble_system, GapReport, SMatrixSample, ScatteringSystem, TrajectoryExpansion};
pub use vertex::{
    build_canonical_vertex, build_designed_bulk_vertex, build_kirchhoff_vertex, build_system, build_vertices,
    validate_vertex, BondPhases, VertexFamily, VertexMatrix, VertexReport,
};
