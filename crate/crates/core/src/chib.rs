//! Marginal likelihood of one model from Gibbs output.
//!
//! `ln m(y) = ln p(y | θ*) + ln π(θ*) − ln p̂(θ* | y)` with `θ*` whichever
//! of the pilot mean and the highest pilot draw has the larger unnormalized
//! posterior. Given the latents, `α` and `λ` are independent, so the
//! ordinate is the average over sweeps of `p(α*|v) p(λ*|w)`.

use serde::{Deserialize, Serialize};

use crate::data::{DesignPair, SurveyData};
use crate::error::{Error, Result};
use crate::gibbs::{observed_data_loglik, BasePrior, ChainConfig, CoefficientState, SingleModelSampler};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChibOptions {
    /// Target ratio of the 95% half-width to `|ln ordinate|`.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_min_iterations")]
    pub min_iterations: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_check_every")]
    pub check_every: usize,
}

fn default_rel_tol() -> f64 {
    0.01
}
fn default_min_iterations() -> usize {
    2_000
}
fn default_max_iterations() -> usize {
    1_000_000
}
fn default_check_every() -> usize {
    1_000
}

impl Default for ChibOptions {
    fn default() -> Self {
        ChibOptions {
            rel_tol: default_rel_tol(),
            min_iterations: default_min_iterations(),
            max_iterations: default_max_iterations(),
            check_every: default_check_every(),
        }
    }
}

impl ChibOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("chib rel_tol must be positive".into()));
        }
        if self.min_iterations < 4 || self.min_iterations > self.max_iterations || self.check_every == 0 {
            return Err(Error::Config("chib iteration bounds are inconsistent".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChibEstimate {
    pub log_marginal: f64,
    /// Monte Carlo standard error of `log_marginal` (all of it comes from
    /// the ordinate).
    pub mc_se: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub log_ordinate: f64,
    /// 95% half-width of `log_ordinate`.
    pub ci_halfwidth: f64,
    pub theta_star: CoefficientState,
}

/// Log of the mean of `exp(values)` and its batch-means standard error on
/// the log scale.
pub fn log_mean_exp_with_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n as f64;
    let batches = (n as f64).sqrt().floor().max(2.0) as usize;
    let size = n / batches;
    if size == 0 {
        return (m + mean.ln(), f64::INFINITY);
    }
    let bm: Vec<f64> = (0..batches)
        .map(|b| scaled[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bmean = bm.iter().sum::<f64>() / batches as f64;
    let var = bm.iter().map(|x| (x - bmean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let se = (var / batches as f64).sqrt();
    (m + mean.ln(), se / mean)
}

pub fn chib_log_marginal(
    data: &SurveyData,
    design: &DesignPair,
    config: &ChainConfig,
    base_prior: BasePrior,
    options: &ChibOptions,
) -> Result<ChibEstimate> {
    chib_with_stream(data, design, config, base_prior, options, &[0xC41B])
}

/// As `chib_log_marginal`, with the random stream chosen by `path`.
pub fn chib_with_stream(
    data: &SurveyData,
    design: &DesignPair,
    config: &ChainConfig,
    base_prior: BasePrior,
    options: &ChibOptions,
    path: &[u64],
) -> Result<ChibEstimate> {
    config.validate()?;
    options.validate()?;
    let mut rng = substream(config.seed, path);
    let mut s = SingleModelSampler::new(data, design, base_prior, &mut rng)?;
    for _ in 0..config.burn_in {
        s.step(&mut rng);
    }
    let pilot = config.iterations - config.burn_in;
    let mut star = CoefficientState::zeros(design.p_alpha(), design.p_lambda());
    let mut best: Option<(f64, f64, CoefficientState)> = None;
    for _ in 0..pilot {
        s.step(&mut rng);
        for (a, b) in star.alpha.iter_mut().zip(&s.coeffs.alpha) {
            *a += b;
        }
        for (a, b) in star.lambda.iter_mut().zip(&s.coeffs.lambda) {
            *a += b;
        }
        let ll = observed_data_loglik(data, design, &s.coeffs)?;
        let lp = s.log_prior(&s.coeffs);
        if best.as_ref().map_or(true, |(bl, bp, _)| ll + lp > bl + bp) {
            best = Some((ll, lp, s.coeffs.clone()));
        }
    }
    star.alpha.iter_mut().chain(star.lambda.iter_mut()).for_each(|v| *v /= pilot as f64);

    let mut log_likelihood = observed_data_loglik(data, design, &star)?;
    let mut log_prior = s.log_prior(&star);
    // Skewed posteriors can put the mean in a thin region; fall back to the
    // best pilot draw when it sits higher.
    if let Some((ll, lp, draw)) = best {
        if ll + lp > log_likelihood + log_prior {
            (log_likelihood, log_prior, star) = (ll, lp, draw);
        }
    }

    let mut ords = Vec::with_capacity(options.min_iterations);
    let mut next_check = options.min_iterations;
    let (mut log_ordinate, mut se_log);
    loop {
        s.step(&mut rng);
        ords.push(s.log_conditional_ordinate(&star));
        if ords.len() < next_check {
            continue;
        }
        (log_ordinate, se_log) = log_mean_exp_with_se(&ords);
        let half = 1.96 * se_log;
        let done = half < options.rel_tol * log_ordinate.abs();
        if done || ords.len() >= options.max_iterations {
            if !log_ordinate.is_finite() || !log_likelihood.is_finite() {
                return Err(Error::NonFinite("chib ordinate".into()));
            }
            return Ok(ChibEstimate {
                log_marginal: log_likelihood + log_prior - log_ordinate,
                mc_se: se_log,
                iterations_used: ords.len(),
                converged: done,
                log_likelihood,
                log_prior,
                log_ordinate,
                ci_halfwidth: half,
                theta_star: star,
            });
        }
        next_check = (next_check + options.check_every).min(options.max_iterations);
    }
}
