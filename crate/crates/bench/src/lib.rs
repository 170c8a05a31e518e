//! Benchmark fixtures shared by the criterion targets.

use qgraph::{build_graph, build_system, sample_phases, Result, ScatteringSystem, VertexFamily};

/// Complete graph with `leads` unit-transmission channels and one phase draw.
pub fn ericson_system(vertices: usize, leads: usize) -> Result<(ScatteringSystem, Vec<f64>)> {
    let g = build_graph(vertices, leads, (1.0, 2.0), 1)?;
    let sys = build_system(&g, &VertexFamily::designed(vec![1.0], 1))?;
    let phases = sample_phases(&g, &mut qgraph::rng::stream_rng(1, 0));
    Ok((sys, phases))
}
