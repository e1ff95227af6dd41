use nalgebra::DMatrix;
use occsel_core::aic::*;
use occsel_core::data::{DesignPair, FullDesign, SurveyData};
use occsel_core::gibbs::{loglik_from_predictors, observed_data_loglik};
use occsel_core::model_space::{ComponentModel, ModelId};
use occsel_core::par::Execution;
use occsel_core::sim::{make_dataset, ScenarioConfig};
use proptest::prelude::*;

fn sim_cfg(n_sites: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_sites,
        presence_candidates: 2,
        detection_candidates: 1,
        true_model_z: vec!["x1".into(), "x2".into()],
        true_model_y: vec!["q1".into()],
        ..ScenarioConfig::new(0.6, 0.6, seed)
    }
}

#[test]
fn loglik_value_agrees_with_likelihood_module() {
    let cfg = sim_cfg(50, 1);
    let ds = make_dataset(&cfg, 0).unwrap();
    let (dy, dz) = cfg.dags().unwrap();
    let full = FullDesign::build(&ds.data, &dy, &dz, false).unwrap();
    let d = full.model_design(cfg.truth().unwrap());
    let theta = [0.3, -0.2, 0.9, 0.1, -1.4];
    let (ll, _) = loglik_and_gradient(&ds.data, &d, &theta);
    let coeffs = occsel_core::gibbs::CoefficientState {
        alpha: theta[..3].to_vec(),
        lambda: theta[3..].to_vec(),
    };
    assert!((ll - observed_data_loglik(&ds.data, &d, &coeffs).unwrap()).abs() < 1e-10);
}

#[test]
fn consistent_at_large_sample_size() {
    // N = 2000, J = 3: every estimate within 3 asymptotic standard errors.
    let cfg = sim_cfg(2000, 2);
    let ds = make_dataset(&cfg, 0).unwrap();
    let (dy, dz) = cfg.dags().unwrap();
    let full = FullDesign::build(&ds.data, &dy, &dz, false).unwrap();
    let d = full.model_design(cfg.truth().unwrap());
    let fit = ml_fit(&ds.data, &d, &FitOptions::default(), 5, &[]).unwrap();
    assert!(fit.converged, "{fit:?}");
    let theta: Vec<f64> = fit.coefficients.alpha.iter().chain(&fit.coefficients.lambda).copied().collect();
    let truth: Vec<f64> = ds.truth.alpha.iter().chain(&ds.truth.lambda).copied().collect();
    // Observed information by central differences of the analytic gradient.
    let k = theta.len();
    let h = 1e-5;
    let mut info = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut up = theta.clone();
        up[j] += h;
        let mut dn = theta.clone();
        dn[j] -= h;
        let gu = loglik_and_gradient(&ds.data, &d, &up).1;
        let gd = loglik_and_gradient(&ds.data, &d, &dn).1;
        for i in 0..k {
            info[(i, j)] = -(gu[i] - gd[i]) / (2.0 * h);
        }
    }
    let cov = ((&info + info.transpose()) * 0.5).try_inverse().unwrap();
    for i in 0..k {
        let se = cov[(i, i)].sqrt();
        assert!((theta[i] - truth[i]).abs() < 3.0 * se, "{i}: {} vs {} (se {se})", theta[i], truth[i]);
    }
}

#[test]
fn perfect_separation_is_flagged() {
    // Detection is certain when the survey covariate is positive and
    // impossible otherwise.
    let n = 30;
    let q: Vec<f64> = (0..2 * n).map(|k| if k % 2 == 0 { 1.0 + (k % 5) as f64 * 0.1 } else { -1.0 - (k % 3) as f64 * 0.1 }).collect();
    let det: Vec<Vec<u8>> = (0..n).map(|i| vec![1, 0].into_iter().map(|y| if i % 3 == 0 { 0 } else { y }).collect()).collect();
    let data = SurveyData::new((0..n).map(|i| i.to_string()).collect(), det, vec![], vec![("q".into(), q.clone())]).unwrap();
    let mut d = DesignPair::intercepts(&data);
    d.q = DMatrix::from_fn(2 * n, 2, |r, c| if c == 0 { 1.0 } else { q[r] });
    let fit = ml_fit(&data, &d, &FitOptions::default(), 1, &[]).unwrap();
    assert!(!fit.converged && fit.norm_bound, "{fit:?}");
}

#[test]
fn all_detected_boundary_is_flagged() {
    let n = 20;
    let data = SurveyData::new((0..n).map(|i| i.to_string()).collect(), vec![vec![1]; n], vec![], vec![]).unwrap();
    let d = DesignPair::intercepts(&data);
    let fit = ml_fit(&data, &d, &FitOptions::default(), 1, &[]).unwrap();
    assert!(!fit.converged && fit.norm_bound, "{fit:?}");
    assert!(fit.loglik > -1e-3);
}

#[test]
fn fits_are_deterministic_and_nested_loglik_is_monotone() {
    let cfg = sim_cfg(120, 3);
    let ds = make_dataset(&cfg, 0).unwrap();
    let (dy, dz) = cfg.dags().unwrap();
    let full = FullDesign::build(&ds.data, &dy, &dz, true).unwrap();
    let models = aic_model_list(&dy, &dz, false, 100).unwrap();
    assert_eq!(models.len(), 8);
    let table = aic_selection(&ds.data, &full, &models, &FitOptions::default(), 9, Execution::Parallel).unwrap();
    let again = aic_selection(&ds.data, &full, &models, &FitOptions::default(), 9, Execution::Sequential).unwrap();
    assert_eq!(table, again);
    let total: f64 = table.rows.iter().map(|r| r.weight).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(table.rows[0].delta, 0.0);
    for a in &table.rows {
        for b in &table.rows {
            let nested = a.model.detection.is_subset_of(b.model.detection) && a.model.presence.is_subset_of(b.model.presence);
            if nested && a.converged && b.converged {
                assert!(b.loglik >= a.loglik - 1e-4, "{:?} {} vs {:?} {}", a.model, a.loglik, b.model, b.loglik);
            }
        }
    }
    let report = table.weight_report(&dy, &dz, 0.5);
    assert_eq!(report.summary.mpip_z[0].probability, 1.0);
    let w_x1: f64 = table.rows.iter().filter(|r| r.model.presence.contains(0)).map(|r| r.weight).sum();
    assert!((report.summary.mpip_z[1].probability - w_x1).abs() < 1e-12);
}

#[test]
fn heredity_flag_restricts_the_list() {
    let dz = occsel_core::model_space::build_poly_dag(&["a"], 2, false, &[]).unwrap();
    let dy = occsel_core::model_space::PolyDag::linear(&[]).unwrap();
    assert_eq!(aic_model_list(&dy, &dz, false, 100).unwrap().len(), 4);
    assert_eq!(aic_model_list(&dy, &dz, true, 100).unwrap().len(), 3);
}

#[test]
fn failed_fits_are_excluded_from_weights() {
    let ok = |aic: f64| FitResult {
        coefficients: occsel_core::gibbs::CoefficientState::zeros(1, 1),
        loglik: -aic / 2.0 + 2.0,
        aic,
        converged: true,
        n_restarts_used: 1,
        grad_inf_norm: 0.0,
        norm_bound: false,
    };
    let m = |b: u64| ModelId::new(ComponentModel::BASE, ComponentModel(b));
    let table = AicTable::from_fits(vec![
        (m(0), Ok(ok(100.0))),
        (m(1), Err(occsel_core::Error::AllRestartsDiverged(10))),
        (m(2), Ok(ok(102.0))),
    ])
    .unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.failures.len(), 1);
    let e = (-1.0f64).exp();
    assert!((table.rows[0].weight - 1.0 / (1.0 + e)).abs() < 1e-15);
    assert!((table.rows[1].weight - e / (1.0 + e)).abs() < 1e-15);
}

proptest! {
    #[test]
    fn weights_invariant_to_shift(aics in prop::collection::vec(0.0f64..50.0, 1..20), shift in -1e3f64..1e3) {
        let a = akaike_weights(&aics);
        let shifted: Vec<f64> = aics.iter().map(|x| x + shift).collect();
        let b = akaike_weights(&shifted);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_value_differences(seed in 0u64..50) {
        let cfg = sim_cfg(25, seed);
        let ds = make_dataset(&cfg, 0).unwrap();
        let (dy, dz) = cfg.dags().unwrap();
        let full = FullDesign::build(&ds.data, &dy, &dz, true).unwrap();
        let d = full.model_design(cfg.truth().unwrap());
        let theta: Vec<f64> = (0..5).map(|k| ((seed * 7 + k) % 11) as f64 / 5.0 - 1.0).collect();
        let (_, g) = loglik_and_gradient(&ds.data, &d, &theta);
        for k in 0..5 {
            let h = 1e-6;
            let mut up = theta.clone();
            up[k] += h;
            let mut dn = theta.clone();
            dn[k] -= h;
            let fd = (loglik_and_gradient(&ds.data, &d, &up).0 - loglik_and_gradient(&ds.data, &d, &dn).0) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() < 1e-5 * (1.0 + g[k].abs()));
        }
        let eta_z: Vec<f64> = (&d.x * nalgebra::DVector::from_column_slice(&theta[..3])).iter().copied().collect();
        let eta_y: Vec<f64> = (&d.q * nalgebra::DVector::from_column_slice(&theta[3..])).iter().copied().collect();
        prop_assert!((loglik_and_gradient(&ds.data, &d, &theta).0 - loglik_from_predictors(&ds.data, &eta_z, &eta_y)).abs() < 1e-9);
    }
}
