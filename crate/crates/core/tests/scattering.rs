use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use qgraph::linalg::{symmetry_residual, unitarity_residual};
use qgraph::rng::stream_rng;
use qgraph::{
    build_graph, build_system, ericson_pq, ericson_two_point, goe_sample_s, mean_level_density, sample_phases,
    CorrelatorSpec, Factor, GoeModel, VertexFamily, C64,
};

fn family(designed: bool, t: f64, seed: u64) -> VertexFamily {
    if designed {
        VertexFamily::designed(vec![t], seed)
    } else {
        VertexFamily::Kirchhoff
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn s_matrix_is_unitary_and_symmetric(
        v in 2usize..14,
        lead_frac in 0.0f64..1.0,
        designed in any::<bool>(),
        t in 0.05f64..=1.0,
        seed in 0u64..1000,
    ) {
        let leads = 1 + ((v - 1) as f64 * lead_frac) as usize;
        let g = build_graph(v, leads, (1.0, 2.0), seed).unwrap();
        let sys = build_system(&g, &family(designed, t, seed)).unwrap();
        let phases = sample_phases(&g, &mut stream_rng(seed, 0));
        let s = sys.evaluate_s(&phases, 0.3).unwrap().s;
        prop_assert_eq!(s.nrows(), leads);
        prop_assert!(unitarity_residual(s.as_ref()) < 1e-9);
        prop_assert!(symmetry_residual(s.as_ref()) < 1e-12);
    }

    #[test]
    fn offset_is_a_length_weighted_phase_shift(v in 3usize..10, seed in 0u64..1000, kappa in -2.0f64..2.0) {
        let g = build_graph(v, 2, (1.0, 2.0), seed).unwrap();
        let sys = build_system(&g, &VertexFamily::designed(vec![0.7], seed)).unwrap();
        let phases = sample_phases(&g, &mut stream_rng(seed, 1));
        let shifted: Vec<f64> = phases.iter().zip(g.lengths()).map(|(p, l)| p + kappa * l).collect();
        let a = sys.evaluate_s(&phases, kappa).unwrap().s;
        let b = sys.evaluate_s(&shifted, 0.0).unwrap().s;
        prop_assert!((&a - &b).norm_max() < 1e-9);
    }

    #[test]
    fn designed_vertices_hit_the_target_transmission(v in 3usize..10, t in 0.05f64..=1.0, seed in 0u64..1000) {
        let g = build_graph(v, 3, (1.0, 2.0), seed).unwrap();
        let sys = build_system(&g, &VertexFamily::designed(vec![t], seed)).unwrap();
        for &tr in &sys.transmissions() {
            prop_assert!((tr - t).abs() < 1e-12);
        }
    }

    #[test]
    fn goe_samples_are_unitary_and_symmetric(coupling in 0.05f64..2.0, seed in 0u64..1000, offset in -3.0f64..3.0) {
        let model = GoeModel::new(100, vec![coupling, 0.5 * coupling]).unwrap();
        let s = goe_sample_s(&model, &mut stream_rng(seed, 0), offset).unwrap();
        prop_assert!(unitarity_residual(s.as_ref()) < 1e-9);
        prop_assert!(symmetry_residual(s.as_ref()) < 1e-12);
    }
}

#[test]
fn ericson_closed_form_reference_values() {
    let t = vec![1.0; 10];
    let d = 10.0 / std::f64::consts::PI;
    assert_abs_diff_eq!(ericson_two_point(&t, d, 0.0, 0.0, (0, 1, 0, 1)).unwrap().re, 0.1, epsilon = 1e-15);
    assert_abs_diff_eq!(ericson_two_point(&t, d, 0.0, 0.0, (2, 2, 2, 2)).unwrap().re, 0.2, epsilon = 1e-15);
    assert_eq!(ericson_two_point(&t, d, 0.0, 0.0, (0, 1, 2, 3)).unwrap(), C64::new(0.0, 0.0));
    // at half-width offset the denominator is 10 - 10i
    let c = ericson_two_point(&t, d, 0.25, 0.25, (0, 1, 0, 1)).unwrap();
    assert_abs_diff_eq!(c.re, 0.05, epsilon = 1e-15);
    assert_abs_diff_eq!(c.im, 0.05, epsilon = 1e-15);
    let rho = vec![C64::new(0.0, 0.0); 10];
    let f = Factor::new(0, 1, 0.0);
    let spec = CorrelatorSpec::new(vec![f.clone(), f.clone()], vec![f.clone(), f]);
    assert_abs_diff_eq!(ericson_pq(&spec, &t, d, &rho).unwrap().re, 0.02, epsilon = 1e-15);
}

#[test]
fn mean_density_tracks_total_length() {
    let g = build_graph(8, 2, (1.0, 2.0), 3).unwrap();
    let total: f64 = g.lengths().iter().sum();
    assert_abs_diff_eq!(mean_level_density(&g), total / std::f64::consts::PI, epsilon = 1e-12);
}
