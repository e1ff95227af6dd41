//! Maximum-likelihood fits, AIC and Akaike weights.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DesignPair, FullDesign, SurveyData};
use crate::error::{Error, Result};
use crate::gibbs::CoefficientState;
use crate::model_space::{enumerate_models, Heredity, ModelId, PolyDag};
use crate::optim::{minimize, MinimizeOptions};
use crate::par::Execution;
use crate::posterior::{Estimator, ModelProbability, PosteriorReport};
use crate::probit::{log_add_exp, log_cdf_and_mills};
use crate::rng::substream;

pub const DEFAULT_RESTARTS: usize = 10;
/// Fits whose coefficient vector exceeds this norm are flagged.
pub const NORM_BOUND: f64 = 50.0;

const STREAM_FIT: u64 = 0xA1C;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u64,
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}
fn default_grad_tol() -> f64 {
    1e-6
}
fn default_max_iterations() -> u64 {
    100
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: default_restarts(),
            grad_tol: default_grad_tol(),
            max_iterations: default_max_iterations(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || !(self.grad_tol > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("fit options need restarts ≥ 1, grad_tol > 0, max_iterations ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: CoefficientState,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    /// Restarts that produced a finite optimum.
    pub n_restarts_used: usize,
    pub grad_inf_norm: f64,
    /// The likelihood keeps rising along a ray to infinity, or the best
    /// coefficients exceed [`NORM_BOUND`].
    pub norm_bound: bool,
}

pub fn aic_value(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

/// Log likelihood and its gradient in `(α, λ)` stacked.
pub fn loglik_and_gradient(data: &SurveyData, design: &DesignPair, theta: &[f64]) -> (f64, Vec<f64>) {
    let pa = design.p_alpha();
    let ez = &design.x * DVector::from_column_slice(&theta[..pa]);
    let ey = &design.q * DVector::from_column_slice(&theta[pa..]);
    let y = data.detections_flat();
    let mut dz = DVector::zeros(ez.len());
    let mut dy = DVector::zeros(ey.len());
    let mut total = 0.0;
    for i in 0..data.n_sites() {
        let (log_psi, m_psi) = log_cdf_and_mills(ez[i]);
        if data.detected(i) {
            total += log_psi;
            dz[i] = m_psi;
            for j in data.survey_range(i) {
                let sign = if y[j] == 1 { 1.0 } else { -1.0 };
                let (lc, m) = log_cdf_and_mills(sign * ey[j]);
                total += lc;
                dy[j] = sign * m;
            }
        } else {
            let mut missed = 0.0;
            for j in data.survey_range(i) {
                let (lc, m) = log_cdf_and_mills(-ey[j]);
                missed += lc;
                dy[j] = -m;
            }
            let (log_absent, m_absent) = log_cdf_and_mills(-ez[i]);
            let present = log_psi + missed;
            let li = log_add_exp(present, log_absent);
            total += li;
            let r = (present - li).exp();
            dz[i] = r * m_psi - (1.0 - r) * m_absent;
            for j in data.survey_range(i) {
                dy[j] *= r;
            }
        }
    }
    let ga = design.x.tr_mul(&dz);
    let gl = design.q.tr_mul(&dy);
    (total, ga.iter().chain(gl.iter()).copied().collect())
}

fn unbounded_along_gradient(data: &SurveyData, design: &DesignPair, theta: &[f64], ll: f64, grad: &[f64]) -> bool {
    let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if gn == 0.0 {
        return false;
    }
    let far: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t + NORM_BOUND * g / gn).collect();
    let (ll_far, _) = loglik_and_gradient(data, design, &far);
    ll_far >= ll - 1e-9
}

/// Best of `options.restarts` quasi-Newton runs from standard-normal
/// starting points.
pub fn ml_fit(data: &SurveyData, design: &DesignPair, options: &FitOptions, seed: u64, stream: &[u64]) -> Result<FitResult> {
    options.validate()?;
    let dim = design.p_alpha() + design.p_lambda();
    let neg = |t: &[f64]| {
        let (ll, g) = loglik_and_gradient(data, design, t);
        (-ll, g.into_iter().map(|v| -v).collect::<Vec<_>>())
    };
    let min_opts = MinimizeOptions {
        max_iterations: options.max_iterations,
        grad_tol: options.grad_tol,
        ..Default::default()
    };
    let mut best: Option<crate::optim::Minimum> = None;
    let mut used = 0;
    for r in 0..options.restarts {
        let mut path = vec![STREAM_FIT];
        path.extend_from_slice(stream);
        path.push(r as u64);
        let mut rng = substream(seed, &path);
        let x0: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let Some(m) = minimize(neg, x0, &min_opts) else {
            continue;
        };
        if !m.value.is_finite() {
            continue;
        }
        used += 1;
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.ok_or(Error::AllRestartsDiverged(options.restarts))?;
    let loglik = -best.value;
    let norm = best.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (_, grad) = loglik_and_gradient(data, design, &best.x);
    let norm_bound = norm > NORM_BOUND || unbounded_along_gradient(data, design, &best.x, loglik, &grad);
    let pa = design.p_alpha();
    Ok(FitResult {
        coefficients: CoefficientState {
            alpha: best.x[..pa].to_vec(),
            lambda: best.x[pa..].to_vec(),
        },
        loglik,
        aic: aic_value(loglik, dim),
        converged: !norm_bound && best.grad_inf_norm < options.grad_tol.max(1e-6) * 100.0,
        n_restarts_used: used,
        grad_inf_norm: best.grad_inf_norm,
        norm_bound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AicRow {
    pub model: ModelId,
    pub loglik: f64,
    pub aic: f64,
    pub delta: f64,
    pub weight: f64,
    pub converged: bool,
    pub norm_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AicTable {
    /// Sorted by increasing AIC, ties simpler first.
    pub rows: Vec<AicRow>,
    pub failures: Vec<(ModelId, String)>,
}

impl AicTable {
    /// Tabulate per-model fits; failed fits are set aside.
    pub fn from_fits(fits: Vec<(ModelId, Result<FitResult>)>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for (model, fit) in fits {
            match fit {
                Ok(f) => rows.push(AicRow {
                    model,
                    loglik: f.loglik,
                    aic: f.aic,
                    delta: 0.0,
                    weight: 0.0,
                    converged: f.converged,
                    norm_bound: f.norm_bound,
                }),
                Err(e) => failures.push((model, e.to_string())),
            }
        }
        if rows.is_empty() {
            return Err(Error::Numerical("every model fit failed".into()));
        }
        let aics: Vec<f64> = rows.iter().map(|r| r.aic).collect();
        let weights = akaike_weights(&aics);
        let min = aics.iter().copied().fold(f64::INFINITY, f64::min);
        for (r, w) in rows.iter_mut().zip(weights) {
            r.delta = r.aic - min;
            r.weight = w;
        }
        rows.sort_by(|a, b| a.aic.total_cmp(&b.aic).then_with(|| crate::posterior::simpler_first(a.model, b.model)));
        Ok(AicTable { rows, failures })
    }

    pub fn lowest(&self) -> ModelId {
        self.rows[0].model
    }

    /// Weight-based inclusion summary in the same form as the posterior
    /// reports.
    pub fn weight_report(&self, dag_y: &PolyDag, dag_z: &PolyDag, threshold: f64) -> PosteriorReport {
        let models = self
            .rows
            .iter()
            .map(|r| ModelProbability {
                model: r.model,
                probability: r.weight,
                mc_se: None,
            })
            .collect();
        let mut notes = vec![format!("{} models fitted", self.rows.len())];
        let flagged = self.rows.iter().filter(|r| !r.converged).count();
        if flagged > 0 {
            notes.push(format!("{flagged} fits flagged non-converged"));
        }
        if !self.failures.is_empty() {
            notes.push(format!("{} fits failed and were excluded from the weights", self.failures.len()));
        }
        PosteriorReport::new(Estimator::Aic, models, dag_y, dag_z, threshold, notes)
    }
}

/// `exp(−Δ/2)` normalized over the list.
pub fn akaike_weights(aics: &[f64]) -> Vec<f64> {
    let min = aics.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = aics.iter().map(|a| (-(a - min) / 2.0).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / s).collect()
}

/// Models compared by AIC: every subset of the candidates by default, or
/// only strongly hereditary ones.
pub fn aic_model_list(dag_y: &PolyDag, dag_z: &PolyDag, heredity: bool, cap: u128) -> Result<Vec<ModelId>> {
    let mode = if heredity { Heredity::Strong } else { Heredity::Unrestricted };
    enumerate_models(dag_y, dag_z, mode, cap)
}

/// Fit every model and tabulate AIC and Akaike weights.
pub fn aic_selection(
    data: &SurveyData,
    design: &FullDesign,
    models: &[ModelId],
    options: &FitOptions,
    seed: u64,
    exec: Execution,
) -> Result<AicTable> {
    options.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidModel("empty model list".into()));
    }
    let fits = exec.map(models, |&m| {
        let d = design.model_design(m);
        (m, ml_fit(data, &d, options, seed, &[m.detection.0, m.presence.0]))
    });
    for (m, f) in &fits {
        if let Err(e) = f {
            log::warn!("fit failed for {m:?}: {e}");
        }
    }
    AicTable::from_fits(fits)
}
