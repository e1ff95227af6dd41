use occsel_core::model_space::{Component, ComponentModel, ModelId};
use occsel_core::par::Execution;
use occsel_core::probit::norm_cdf;
use occsel_core::sim::*;
use proptest::prelude::*;

#[test]
fn targets_are_met_and_zero_inflation_holds() {
    for (p, psi) in [(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)] {
        let cfg = ScenarioConfig {
            n_datasets: 3,
            ..ScenarioConfig::new(p, psi, 17)
        };
        for ds in make_scenario(&cfg).unwrap() {
            assert!((ds.achieved_psi - psi).abs() <= TARGET_TOLERANCE, "{}", ds.achieved_psi);
            assert!((ds.achieved_p - p).abs() <= TARGET_TOLERANCE, "{}", ds.achieved_p);
            for i in 0..ds.data.n_sites() {
                if ds.z[i] == 0 {
                    assert!(ds.data.detections(i).iter().all(|&y| y == 0));
                }
            }
            assert_eq!(ds.truth.alpha.len(), 4);
            assert_eq!(ds.truth.lambda.len(), 3);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = ScenarioConfig::new(0.5, 0.8, 99);
    let a = make_dataset(&cfg, 4).unwrap();
    let b = make_dataset(&cfg, 4).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(a.truth, b.truth);
    let c = make_dataset(&cfg, 5).unwrap();
    assert_ne!(a.data, c.data);
}

#[test]
fn half_target_with_full_design_solves_exactly() {
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    // Centered covariates: the mean of Φ at β = 0 is exactly one half.
    let m = DMatrix::from_fn(6, 3, |i, j| if j == 0 { 1.0 } else { [-1.0, 2.0, -1.0, 0.5, -0.5, 0.0][(i + 2 * j) % 6] });
    let (beta, residual) = solve_target(&m, 0.5, 10, &mut rng).unwrap();
    assert!(residual < 1e-10, "{residual}");
    let eta = &m * nalgebra::DVector::from_column_slice(&beta);
    let mean = eta.iter().map(|&e| norm_cdf(e)).sum::<f64>() / 6.0;
    assert!((mean - 0.5).abs() < 1e-10);
}

#[test]
fn default_truth_spans_256_models() {
    let cfg = ScenarioConfig::new(0.5, 0.5, 0);
    let (dy, dz) = cfg.dags().unwrap();
    let models = occsel_core::model_space::enumerate_models(&dy, &dz, Default::default(), 1000).unwrap();
    assert_eq!(models.len(), 256);
    let t = cfg.truth().unwrap();
    assert_eq!(dz.model_labels(t.presence), vec!["1", "x1", "x2", "x5"]);
    assert_eq!(dy.model_labels(t.detection), vec!["1", "q2", "q3"]);
}

#[test]
fn unreachable_target_is_an_error() {
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    // Two sites with opposite covariates and no intercept: the mean is
    // always one half.
    let m = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    let err = solve_target(&m, 0.8, 3, &mut rng).unwrap_err();
    assert!(matches!(err, occsel_core::Error::TargetResidual { .. }));
}

#[test]
fn grid_bookkeeping() {
    let base = ScenarioConfig {
        n_sites: 40,
        n_datasets: 2,
        presence_candidates: 2,
        detection_candidates: 1,
        true_model_z: vec!["x1".into()],
        true_model_y: vec!["q1".into()],
        ..ScenarioConfig::new(0.5, 0.5, 0)
    };
    let grid = nine_cell_grid(&base, 5);
    let settings = SimSettings {
        chain: occsel_core::gibbs::ChainConfig {
            iterations: 300,
            burn_in: 50,
            thin: 5,
            seed: 0,
            n_chains: 1,
        },
        fit: occsel_core::aic::FitOptions {
            restarts: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let res = run_scenario_grid(&grid, &[Method::BayesMpm, Method::AicLowest], &settings, Execution::Parallel).unwrap();
    assert!(res.failures.is_empty(), "{:?}", res.failures);
    // 9 cells × 2 datasets × 2 components per method.
    for m in [Method::BayesMpm, Method::AicLowest] {
        assert_eq!(res.rows.iter().filter(|r| r.method == m).count(), 36);
    }
    assert_eq!(res.cell_summaries().len(), 9 * 2 * 2);
    let seq = run_scenario_grid(&grid, &[Method::BayesMpm, Method::AicLowest], &settings, Execution::Sequential).unwrap();
    let strip = |r: &SimResults| r.rows.iter().map(|x| (x.dataset, x.method, x.selected, x.score)).collect::<Vec<_>>();
    assert_eq!(strip(&res), strip(&seq));
}

fn model(bits_y: u64, bits_z: u64) -> ModelId {
    ModelId::new(ComponentModel(bits_y), ComponentModel(bits_z))
}

proptest! {
    #[test]
    fn scores_in_unit_interval(sel_y in 0u64..8, sel_z in 0u64..32, t_y in 0u64..8, t_z in 0u64..32) {
        for s in evaluate_selection(model(sel_y, sel_z), model(t_y, t_z), 3, 5) {
            prop_assert!((0.0..=1.0).contains(&s.tp_proportion));
            prop_assert!((0.0..=1.0).contains(&s.fp_proportion));
        }
    }

    #[test]
    fn scores_equivariant_under_relabeling(sel in 0u64..32, truth in 0u64..32, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let relabel = |m: u64| ComponentModel::from_nodes((0..5).filter(|&i| m >> i & 1 == 1).map(|i| perm[i]));
        let a = evaluate_selection(model(0, sel), model(0, truth), 3, 5)[1];
        let b = evaluate_selection(ModelId::new(ComponentModel::BASE, relabel(sel)), ModelId::new(ComponentModel::BASE, relabel(truth)), 3, 5)[1];
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.component, Component::Presence);
    }
}
