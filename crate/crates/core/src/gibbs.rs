//! Latent-augmented Gibbs sampling for a single occupancy model.
//!
//! One sweep draws `(α, λ) | v, w`, then `z | α, λ, y` with the latents
//! integrated out, then `v, w | z, α, λ`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ComponentMatrix, DesignPair, SurveyData};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::marginals::{ComponentDesign, IntrinsicGram, JointDesign, LatentProjection};
use crate::model_space::ComponentModel;
use crate::probit::{log_add_exp, log_norm_cdf, sample_nonpositive, sample_normal, sample_positive, LN_2PI};
use crate::rng::{substream, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub n_chains: usize,
}

fn one() -> usize {
    1
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 20_000,
            burn_in: 2_000,
            thin: 10,
            seed: 0,
            n_chains: 1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be positive".into()));
        }
        Ok(())
    }

    /// Number of states kept per chain.
    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in) % self.thin == 0
    }
}

/// Prior on the base-model coefficients. The default flat prior matches the
/// intrinsic-prior construction; the normal option makes the joint
/// posterior proper, which simulation-based checks need.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BasePrior {
    #[default]
    Flat,
    Normal { sd: f64 },
}

impl BasePrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BasePrior::Flat => Ok(()),
            BasePrior::Normal { sd } if sd > 0.0 && sd.is_finite() => Ok(()),
            BasePrior::Normal { sd } => Err(Error::Config(format!("base prior sd must be positive, got {sd}"))),
        }
    }

    fn precision(&self) -> f64 {
        match *self {
            BasePrior::Flat => 0.0,
            BasePrior::Normal { sd } => 1.0 / (sd * sd),
        }
    }

    pub fn log_density(&self, base: &[f64]) -> f64 {
        match *self {
            BasePrior::Flat => 0.0,
            BasePrior::Normal { sd } => base
                .iter()
                .map(|b| -0.5 * LN_2PI - sd.ln() - 0.5 * (b / sd).powi(2))
                .sum(),
        }
    }

    /// Draw base coefficients; only defined for a proper prior.
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Option<Vec<f64>> {
        match *self {
            BasePrior::Flat => None,
            BasePrior::Normal { sd } => Some((0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientState {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl CoefficientState {
    pub fn zeros(p_alpha: usize, p_lambda: usize) -> Self {
        CoefficientState {
            alpha: vec![0.0; p_alpha],
            lambda: vec![0.0; p_lambda],
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.alpha.iter().chain(&self.lambda).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("coefficients".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub z: Vec<u8>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl LatentState {
    /// Sign constraints linking the latents to `z` and the detections.
    pub fn is_consistent(&self, data: &SurveyData) -> bool {
        let y = data.detections_flat();
        (0..data.n_sites()).all(|i| {
            let zi = self.z[i] == 1;
            if data.detected(i) && !zi {
                return false;
            }
            if zi != (self.v[i] > 0.0) {
                return false;
            }
            !zi || data.survey_range(i).all(|j| (y[j] == 1) == (self.w[j] > 0.0))
        })
    }
}

/// Exact Gaussian full conditional of one component's coefficients given its
/// latent vector: precision `X'X + blockdiag(B_0, S / c)` with `c = 2n/p`.
#[derive(Clone, Debug)]
pub struct CoefficientConditional {
    chol: Cholesky,
    base_dim: usize,
}

impl CoefficientConditional {
    pub fn new(gram: &IntrinsicGram, base_prior: BasePrior) -> Result<Self> {
        let p0 = gram.base_dim();
        let p = gram.total_dim();
        let mut prec = gram.gram().clone();
        let b0 = base_prior.precision();
        for i in 0..p0 {
            prec[(i, i)] += b0;
        }
        if p > p0 {
            let s = gram.schur();
            let c = gram.prior_scale();
            for i in 0..p - p0 {
                for j in 0..p - p0 {
                    prec[(p0 + i, p0 + j)] += s[(i, j)] / c;
                }
            }
        }
        let chol = Cholesky::new(&prec).map_err(|j| Error::Numerical(format!("conditional precision singular at {j}")))?;
        Ok(CoefficientConditional { chol, base_dim: p0 })
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn mean(&self, xtv: &[f64]) -> Vec<f64> {
        self.chol.solve(xtv).as_slice().to_vec()
    }

    pub fn covariance(&self) -> nalgebra::DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, xtv: &[f64], rng: &mut R) -> Vec<f64> {
        let mean = self.chol.solve(xtv);
        let e: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let dev = self.chol.backward(&e);
        (mean + dev).as_slice().to_vec()
    }

    pub fn log_density(&self, xtv: &[f64], beta: &[f64]) -> f64 {
        let p = self.dim();
        let mean = self.chol.solve(xtv);
        let l = self.chol.l();
        // |L'(β − μ)|²
        let mut quad = 0.0;
        for j in 0..p {
            let mut s = 0.0;
            for i in j..p {
                s += l[(i, j)] * (beta[i] - mean[i]);
            }
            quad += s * s;
        }
        -0.5 * p as f64 * LN_2PI + 0.5 * self.chol.log_det() - 0.5 * quad
    }
}

/// Factorizations for one component model: its Gram and its coefficient
/// conditional.
#[derive(Clone, Debug)]
pub struct ComponentFit {
    pub gram: IntrinsicGram,
    pub conditional: CoefficientConditional,
}

impl ComponentFit {
    pub fn new(design: &ComponentDesign, model: ComponentModel, base_prior: BasePrior) -> Result<Self> {
        let gram = design.gram_for(model)?;
        let conditional = CoefficientConditional::new(&gram, base_prior)?;
        Ok(ComponentFit { gram, conditional })
    }

    /// Log prior density of a coefficient vector for this model.
    pub fn log_prior(&self, coef: &[f64], base_prior: BasePrior) -> f64 {
        let p0 = self.gram.base_dim();
        base_prior.log_density(&coef[..p0]) + self.gram.log_prior_density(&coef[p0..])
    }

    pub fn draw<R: Rng + ?Sized>(&self, proj: &LatentProjection, rng: &mut R) -> Vec<f64> {
        self.conditional.sample(&proj.select(self.gram.columns()), rng)
    }
}

/// Per-owner memo of component fits keyed by column mask.
#[derive(Debug)]
pub struct FitCache {
    base_prior: BasePrior,
    map: HashMap<u64, Arc<ComponentFit>>,
}

impl FitCache {
    pub fn new(base_prior: BasePrior) -> Self {
        FitCache {
            base_prior,
            map: HashMap::new(),
        }
    }

    pub fn get(&mut self, design: &ComponentDesign, model: ComponentModel) -> Result<Arc<ComponentFit>> {
        if let Some(f) = self.map.get(&model.0) {
            return Ok(f.clone());
        }
        let f = Arc::new(ComponentFit::new(design, model, self.base_prior)?);
        self.map.insert(model.0, f.clone());
        Ok(f)
    }
}

/// Log likelihood of the detections given linear predictors, with `z`
/// summed out.
pub fn loglik_from_predictors(data: &SurveyData, eta_z: &[f64], eta_y: &[f64]) -> f64 {
    let y = data.detections_flat();
    let mut total = 0.0;
    for i in 0..data.n_sites() {
        let log_psi = log_norm_cdf(eta_z[i]);
        if data.detected(i) {
            total += log_psi;
            for j in data.survey_range(i) {
                total += if y[j] == 1 {
                    log_norm_cdf(eta_y[j])
                } else {
                    log_norm_cdf(-eta_y[j])
                };
            }
        } else {
            let missed: f64 = data.survey_range(i).map(|j| log_norm_cdf(-eta_y[j])).sum();
            total += log_add_exp(log_psi + missed, log_norm_cdf(-eta_z[i]));
        }
    }
    total
}

fn predictors(design: &DesignPair, coeffs: &CoefficientState) -> Result<(Vec<f64>, Vec<f64>)> {
    if coeffs.alpha.len() != design.p_alpha() || coeffs.lambda.len() != design.p_lambda() {
        return Err(Error::Dimension(format!(
            "coefficients ({}, {}) for design ({}, {})",
            coeffs.alpha.len(),
            coeffs.lambda.len(),
            design.p_alpha(),
            design.p_lambda()
        )));
    }
    coeffs.check_finite()?;
    let a = nalgebra::DVector::from_column_slice(&coeffs.alpha);
    let l = nalgebra::DVector::from_column_slice(&coeffs.lambda);
    Ok(((&design.x * a).as_slice().to_vec(), (&design.q * l).as_slice().to_vec()))
}

fn check_rows(data: &SurveyData, design: &DesignPair) -> Result<()> {
    if design.x.nrows() != data.n_sites() || design.q.nrows() != data.total_surveys() {
        return Err(Error::Dimension(format!(
            "design rows ({}, {}) for data ({}, {})",
            design.x.nrows(),
            design.q.nrows(),
            data.n_sites(),
            data.total_surveys()
        )));
    }
    Ok(())
}

pub fn observed_data_loglik(data: &SurveyData, design: &DesignPair, coeffs: &CoefficientState) -> Result<f64> {
    check_rows(data, design)?;
    let (ez, ey) = predictors(design, coeffs)?;
    Ok(loglik_from_predictors(data, &ez, &ey))
}

/// Posterior probability `ξ_i` that site `i` is occupied.
pub fn presence_probabilities(data: &SurveyData, eta_z: &[f64], eta_y: &[f64]) -> Vec<f64> {
    (0..data.n_sites())
        .map(|i| {
            if data.detected(i) {
                return 1.0;
            }
            let num = log_norm_cdf(eta_z[i]) + data.survey_range(i).map(|j| log_norm_cdf(-eta_y[j])).sum::<f64>();
            let den = log_add_exp(num, log_norm_cdf(-eta_z[i]));
            (num - den).exp().clamp(0.0, 1.0)
        })
        .collect()
}

pub fn sample_presence_from_predictors<R: Rng + ?Sized>(
    data: &SurveyData,
    eta_z: &[f64],
    eta_y: &[f64],
    rng: &mut R,
) -> Vec<u8> {
    presence_probabilities(data, eta_z, eta_y)
        .into_iter()
        .map(|xi| {
            if xi >= 1.0 {
                1
            } else {
                let u: f64 = rng.sample(Open01);
                u8::from(u < xi)
            }
        })
        .collect()
}

pub fn sample_latents_from_predictors<R: Rng + ?Sized>(
    data: &SurveyData,
    eta_z: &[f64],
    eta_y: &[f64],
    z: &[u8],
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let y = data.detections_flat();
    let mut v = Vec::with_capacity(data.n_sites());
    let mut w = vec![0.0; data.total_surveys()];
    for i in 0..data.n_sites() {
        if z[i] == 1 {
            v.push(sample_positive(eta_z[i], rng));
            for j in data.survey_range(i) {
                w[j] = if y[j] == 1 {
                    sample_positive(eta_y[j], rng)
                } else {
                    sample_nonpositive(eta_y[j], rng)
                };
            }
        } else {
            v.push(sample_nonpositive(eta_z[i], rng));
            for j in data.survey_range(i) {
                w[j] = sample_normal(eta_y[j], rng);
            }
        }
    }
    (v, w)
}

pub fn sample_presence_indicators<R: Rng + ?Sized>(
    data: &SurveyData,
    design: &DesignPair,
    coeffs: &CoefficientState,
    rng: &mut R,
) -> Result<Vec<u8>> {
    check_rows(data, design)?;
    let (ez, ey) = predictors(design, coeffs)?;
    Ok(sample_presence_from_predictors(data, &ez, &ey, rng))
}

pub fn sample_latent_gaussians<R: Rng + ?Sized>(
    data: &SurveyData,
    design: &DesignPair,
    coeffs: &CoefficientState,
    z: &[u8],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_rows(data, design)?;
    if z.len() != data.n_sites() {
        return Err(Error::Dimension("presence vector length".into()));
    }
    if (0..data.n_sites()).any(|i| data.detected(i) && z[i] != 1) {
        return Err(Error::InvalidModel("z = 0 at a site with a detection".into()));
    }
    let (ez, ey) = predictors(design, coeffs)?;
    Ok(sample_latents_from_predictors(data, &ez, &ey, z, rng))
}

/// Treat a fixed design pair as a one-model space.
fn single_model_design(design: &DesignPair) -> JointDesign {
    JointDesign {
        presence: ComponentDesign::new(ComponentMatrix {
            matrix: design.x.clone(),
            base_dim: design.p_base_z,
            labels: design.column_terms_z.clone(),
        }),
        detection: ComponentDesign::new(ComponentMatrix {
            matrix: design.q.clone(),
            base_dim: design.p_base_y,
            labels: design.column_terms_y.clone(),
        }),
    }
}

fn all_columns(n_candidates: usize) -> ComponentModel {
    ComponentModel::from_nodes(0..n_candidates)
}

/// Draw `(α, λ) | v, w` for a fixed design pair.
pub fn sample_coefficients<R: Rng + ?Sized>(
    v: &[f64],
    w: &[f64],
    design: &DesignPair,
    base_prior: BasePrior,
    rng: &mut R,
) -> Result<CoefficientState> {
    if v.len() != design.x.nrows() || w.len() != design.q.nrows() {
        return Err(Error::Dimension("latent lengths".into()));
    }
    let joint = single_model_design(design);
    let fz = ComponentFit::new(&joint.presence, all_columns(joint.presence.component().n_candidates()), base_prior)?;
    let fy = ComponentFit::new(&joint.detection, all_columns(joint.detection.component().n_candidates()), base_prior)?;
    Ok(CoefficientState {
        alpha: fz.draw(&joint.presence.project(v), rng),
        lambda: fy.draw(&joint.detection.project(w), rng),
    })
}

/// Gibbs sampler state for one fixed model.
pub struct SingleModelSampler<'a> {
    data: &'a SurveyData,
    joint: JointDesign,
    fit_z: ComponentFit,
    fit_y: ComponentFit,
    base_prior: BasePrior,
    pub coeffs: CoefficientState,
    pub latent: LatentState,
    eta_z: Vec<f64>,
    eta_y: Vec<f64>,
}

impl<'a> SingleModelSampler<'a> {
    /// Starts from zero coefficients with latents drawn given them.
    pub fn new<R: Rng + ?Sized>(data: &'a SurveyData, design: &DesignPair, base_prior: BasePrior, rng: &mut R) -> Result<Self> {
        check_rows(data, design)?;
        base_prior.validate()?;
        let joint = single_model_design(design);
        let fit_z = ComponentFit::new(&joint.presence, all_columns(joint.presence.component().n_candidates()), base_prior)?;
        let fit_y = ComponentFit::new(&joint.detection, all_columns(joint.detection.component().n_candidates()), base_prior)?;
        let coeffs = CoefficientState::zeros(design.p_alpha(), design.p_lambda());
        let mut s = SingleModelSampler {
            data,
            joint,
            fit_z,
            fit_y,
            base_prior,
            latent: LatentState {
                z: Vec::new(),
                v: Vec::new(),
                w: Vec::new(),
            },
            eta_z: vec![0.0; data.n_sites()],
            eta_y: vec![0.0; data.total_surveys()],
            coeffs,
        };
        s.refresh_latents(rng);
        Ok(s)
    }

    pub fn base_prior(&self) -> BasePrior {
        self.base_prior
    }

    pub fn fits(&self) -> (&ComponentFit, &ComponentFit) {
        (&self.fit_z, &self.fit_y)
    }

    pub fn projections(&self) -> (LatentProjection, LatentProjection) {
        (
            self.joint.presence.project(&self.latent.v),
            self.joint.detection.project(&self.latent.w),
        )
    }

    fn update_predictors(&mut self) {
        self.eta_z = self.joint.presence.predictor(&self.fit_z.gram, &self.coeffs.alpha);
        self.eta_y = self.joint.detection.predictor(&self.fit_y.gram, &self.coeffs.lambda);
    }

    fn refresh_latents<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.update_predictors();
        let z = sample_presence_from_predictors(self.data, &self.eta_z, &self.eta_y, rng);
        let (v, w) = sample_latents_from_predictors(self.data, &self.eta_z, &self.eta_y, &z, rng);
        self.latent = LatentState { z, v, w };
    }

    /// Coefficients given latents.
    pub fn draw_coefficients<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (pv, pw) = self.projections();
        self.coeffs.alpha = self.fit_z.draw(&pv, rng);
        self.coeffs.lambda = self.fit_y.draw(&pw, rng);
    }

    /// Replace the coefficients and redraw the latents given them.
    pub fn set_coefficients<R: Rng + ?Sized>(&mut self, coeffs: CoefficientState, rng: &mut R) {
        self.coeffs = coeffs;
        self.refresh_latents(rng);
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.draw_coefficients(rng);
        self.refresh_latents(rng);
    }

    /// Log prior density of `coeffs` under this model.
    pub fn log_prior(&self, coeffs: &CoefficientState) -> f64 {
        self.fit_z.log_prior(&coeffs.alpha, self.base_prior) + self.fit_y.log_prior(&coeffs.lambda, self.base_prior)
    }

    /// `ln p(α*|v) + ln p(λ*|w)` at the current latents.
    pub fn log_conditional_ordinate(&self, target: &CoefficientState) -> f64 {
        let (pv, pw) = self.projections();
        self.fit_z.conditional.log_density(&pv.select(self.fit_z.gram.columns()), &target.alpha)
            + self.fit_y.conditional.log_density(&pw.select(self.fit_y.gram.columns()), &target.lambda)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDraw {
    pub iteration: usize,
    pub coeffs: CoefficientState,
    pub latent: LatentState,
}

/// Run one chain per `config.n_chains` (substream = chain index) and return
/// the kept states of each.
pub fn run_single_model_chain(
    data: &SurveyData,
    design: &DesignPair,
    config: &ChainConfig,
    base_prior: BasePrior,
) -> Result<Vec<Vec<ChainDraw>>> {
    config.validate()?;
    (0..config.n_chains)
        .map(|c| {
            let mut rng: SimRng = substream(config.seed, &[0x5133, c as u64]);
            let mut s = SingleModelSampler::new(data, design, base_prior, &mut rng)?;
            let mut out = Vec::with_capacity(config.kept());
            for it in 0..config.iterations {
                s.step(&mut rng);
                if config.keeps(it) {
                    out.push(ChainDraw {
                        iteration: it,
                        coeffs: s.coeffs.clone(),
                        latent: s.latent.clone(),
                    });
                }
            }
            Ok(out)
        })
        .collect()
}
