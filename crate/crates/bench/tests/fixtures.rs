use qgraph_bench::ericson_system;

#[test]
fn ericson_fixture_is_fully_absorbing() {
    let (sys, phases) = ericson_system(10, 4).unwrap();
    assert_eq!(phases.len(), sys.graph().num_bonds());
    assert!(sys.transmissions().iter().all(|t| (t - 1.0).abs() < 1e-12));
    let s = sys.evaluate_s(&phases, 0.0).unwrap().s;
    assert_eq!((s.nrows(), s.ncols()), (4, 4));
}
