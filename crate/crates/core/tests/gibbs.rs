mod common;

use nalgebra::{DMatrix, DVector};
use occsel_core::chib::{chib_log_marginal, ChibOptions};
use occsel_core::data::{DesignPair, SurveyData};
use occsel_core::gibbs::*;
use occsel_core::probit::norm_cdf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn design_with(x: DMatrix<f64>, q: DMatrix<f64>) -> DesignPair {
    let lz = (0..x.ncols()).map(|i| format!("x{i}")).collect();
    let ly = (0..q.ncols()).map(|i| format!("q{i}")).collect();
    DesignPair {
        x,
        q,
        column_terms_z: lz,
        column_terms_y: ly,
        p_base_z: 1,
        p_base_y: 1,
    }
}

fn random_cols(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) })
}

fn simulate(rng: &mut ChaCha8Rng, x: &DMatrix<f64>, q: &DMatrix<f64>, j: usize, c: &CoefficientState) -> SurveyData {
    let n = x.nrows();
    let ez = x * DVector::from_column_slice(&c.alpha);
    let ey = q * DVector::from_column_slice(&c.lambda);
    let mut det = Vec::with_capacity(n);
    for i in 0..n {
        let z = rng.random::<f64>() < norm_cdf(ez[i]);
        det.push(
            (0..j)
                .map(|k| u8::from(z && rng.random::<f64>() < norm_cdf(ey[i * j + k])))
                .collect(),
        );
    }
    SurveyData::new((0..n).map(|i| i.to_string()).collect(), det, vec![], vec![]).unwrap()
}

#[test]
fn loglik_matches_brute_force_on_two_sites() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_cols(&mut rng, 2, 2);
    let q = random_cols(&mut rng, 4, 2);
    let design = design_with(x.clone(), q.clone());
    let data = SurveyData::new(vec!["a".into(), "b".into()], vec![vec![0, 0], vec![1, 0]], vec![], vec![]).unwrap();
    let c = CoefficientState {
        alpha: vec![0.3, -0.8],
        lambda: vec![-0.2, 1.1],
    };
    let ez = (&x * DVector::from_column_slice(&c.alpha)).as_slice().to_vec();
    let ey = &q * DVector::from_column_slice(&c.lambda);
    let ey = vec![vec![ey[0], ey[1]], vec![ey[2], ey[3]]];
    let brute = common::oracles::brute_force_loglik(&[vec![0, 0], vec![1, 0]], &ez, &ey);
    let ll = observed_data_loglik(&data, &design, &c).unwrap();
    assert!((ll - brute).abs() < 1e-12);
}

#[test]
fn unconstrained_detection_latent_mean() {
    // A site with z = 0 leaves its w unconstrained around q'λ.
    let data = SurveyData::new(vec!["a".into()], vec![vec![0]], vec![], vec![]).unwrap();
    let design = DesignPair::intercepts(&data);
    let c = CoefficientState {
        alpha: vec![0.0],
        lambda: vec![0.7],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let (_, w) = sample_latent_gaussians(&data, &design, &c, &[0], &mut rng).unwrap();
        sum += w[0];
    }
    let mean = sum / n as f64;
    assert!((mean - 0.7).abs() < 4.0 / (n as f64).sqrt());
}

#[test]
fn coefficient_draws_match_conditional_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 40;
    let x = random_cols(&mut rng, n, 3);
    let q = random_cols(&mut rng, n, 2);
    let design = design_with(x.clone(), q);
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();

    // Dense reference: precision X'X + blockdiag(0, S·p/(2n)).
    let x0 = x.columns(0, 1).into_owned();
    let xa = x.columns(1, 2).into_owned();
    let h0 = &x0 * (x0.transpose() * &x0).try_inverse().unwrap() * x0.transpose();
    let s = xa.transpose() * (DMatrix::identity(n, n) - h0) * &xa;
    let mut prec = x.transpose() * &x;
    let c = 2.0 * n as f64 / 3.0;
    let mut block = prec.view_mut((1, 1), (2, 2));
    block += s / c;
    let cov = prec.try_inverse().unwrap();
    let sigma_a = cov.view((1, 1), (2, 2)).into_owned();

    let draws = 100_000;
    let mut sum = DVector::<f64>::zeros(2);
    let mut sq = DMatrix::<f64>::zeros(2, 2);
    for _ in 0..draws {
        let c = sample_coefficients(&v, &w, &design, BasePrior::Flat, &mut rng).unwrap();
        let a = DVector::from_column_slice(&c.alpha[1..]);
        sum += &a;
        sq += &a * a.transpose();
    }
    let mean = sum / draws as f64;
    let emp = sq / draws as f64 - &mean * mean.transpose();
    let rel = (&emp - &sigma_a).norm() / sigma_a.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
}

#[test]
fn posterior_mean_near_truth_with_many_sites() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 2000;
    let j = 3;
    let x = random_cols(&mut rng, n, 2);
    let q = random_cols(&mut rng, n * j, 2);
    let truth = CoefficientState {
        alpha: vec![0.4, 0.8],
        lambda: vec![0.2, -0.6],
    };
    let data = simulate(&mut rng, &x, &q, j, &truth);
    let design = design_with(x, q);
    let cfg = ChainConfig {
        iterations: 1500,
        burn_in: 300,
        thin: 1,
        seed: 4,
        n_chains: 1,
    };
    let chain = &run_single_model_chain(&data, &design, &cfg, BasePrior::Flat).unwrap()[0];
    let k = chain.len() as f64;
    let get = |f: &dyn Fn(&CoefficientState) -> f64| {
        let m = chain.iter().map(|d| f(&d.coeffs)).sum::<f64>() / k;
        let sd = (chain.iter().map(|d| (f(&d.coeffs) - m).powi(2)).sum::<f64>() / k).sqrt();
        (m, sd)
    };
    for idx in 0..2 {
        let (m, sd) = get(&|c| c.alpha[idx]);
        assert!((m - truth.alpha[idx]).abs() < 3.0 * sd, "alpha[{idx}] {m} ± {sd}");
        let (m, sd) = get(&|c| c.lambda[idx]);
        assert!((m - truth.lambda[idx]).abs() < 3.0 * sd, "lambda[{idx}] {m} ± {sd}");
    }
}

#[test]
fn site_relabeling_preserves_coefficient_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 60;
    let j = 2;
    let x = random_cols(&mut rng, n, 2);
    let q = random_cols(&mut rng, n * j, 1);
    let truth = CoefficientState {
        alpha: vec![0.2, 0.7],
        lambda: vec![0.3],
    };
    let data = simulate(&mut rng, &x, &q, j, &truth);
    let perm: Vec<usize> = (0..n).rev().collect();
    let pdata = data.permute_sites(&perm).unwrap();
    let px = x.select_rows(&perm);
    let qrows: Vec<usize> = perm.iter().flat_map(|&i| [i * j, i * j + 1]).collect();
    let pq = q.select_rows(&qrows);
    let cfg = ChainConfig {
        iterations: 20_000,
        burn_in: 1000,
        thin: 1,
        seed: 1,
        n_chains: 1,
    };
    let stats = |d: &SurveyData, x: DMatrix<f64>, q: DMatrix<f64>| {
        let chain = &run_single_model_chain(d, &design_with(x, q), &cfg, BasePrior::Flat).unwrap()[0];
        let v: Vec<f64> = chain.iter().map(|s| s.coeffs.alpha[1]).collect();
        batch_mean_se(&v)
    };
    let (m1, se1) = stats(&data, x, q);
    let (m2, se2) = stats(&pdata, px, pq);
    assert!((m1 - m2).abs() < 3.0 * (se1 * se1 + se2 * se2).sqrt(), "{m1} vs {m2}");
}

fn batch_mean_se(v: &[f64]) -> (f64, f64) {
    let b = (v.len() as f64).sqrt() as usize;
    let size = v.len() / b;
    let means: Vec<f64> = (0..b).map(|k| v[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    (m, var.sqrt() / (b as f64).sqrt())
}

#[test]
fn chib_matches_quadrature_on_toy_problem() {
    // Two sites, one survey each, intercept-only, standard normal priors.
    let data = SurveyData::new(vec!["a".into(), "b".into()], vec![vec![1], vec![0]], vec![], vec![]).unwrap();
    let design = DesignPair::intercepts(&data);
    let prior = BasePrior::Normal { sd: 1.0 };
    let cfg = ChainConfig {
        iterations: 3000,
        burn_in: 500,
        thin: 1,
        seed: 12,
        n_chains: 1,
    };
    let est = chib_log_marginal(&data, &design, &cfg, prior, &ChibOptions::default()).unwrap();
    let phi = |x: f64| norm_cdf(x);
    let dens = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut f = |t: &[f64]| {
        let (a, l) = (t[0], t[1]);
        let lik = phi(a) * phi(l) * (phi(a) * (1.0 - phi(l)) + 1.0 - phi(a));
        lik * dens(a) * dens(l)
    };
    let exact = common::quadrature::integrate_rn(&mut f, 2, &[0.0, 0.0], &[1.0, 1.0], 1e-11).ln();
    assert!(
        (est.log_marginal - exact).abs() < 3.0 * est.mc_se.max(1e-4),
        "chib {} ± {} vs {exact}",
        est.log_marginal,
        est.mc_se
    );
}

#[test]
fn chib_identical_designs_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 80;
    let x = random_cols(&mut rng, n, 2);
    let q = random_cols(&mut rng, n * 2, 1);
    let truth = CoefficientState {
        alpha: vec![0.3, 0.5],
        lambda: vec![0.1],
    };
    let data = simulate(&mut rng, &x, &q, 2, &truth);
    let design = design_with(x, q);
    let cfg = ChainConfig {
        iterations: 3000,
        burn_in: 500,
        thin: 1,
        seed: 1,
        n_chains: 1,
    };
    let opts = ChibOptions::default();
    let a = chib_log_marginal(&data, &design, &cfg, BasePrior::Flat, &opts).unwrap();
    let b = chib_log_marginal(&data, &design, &ChainConfig { seed: 2, ..cfg }, BasePrior::Flat, &opts).unwrap();
    assert!(a.converged && b.converged);
    let se = (a.mc_se.powi(2) + b.mc_se.powi(2)).sqrt();
    assert!((a.log_marginal - b.log_marginal).abs() < 3.0 * se.max(1e-3), "{a:?} {b:?}");
}
