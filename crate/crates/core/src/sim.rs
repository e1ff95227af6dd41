//! Simulation study: datasets with solved target means, and TP/FP scoring
//! of Bayesian and AIC selections.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aic::{aic_model_list, aic_selection, FitOptions};
use crate::data::{FullDesign, SurveyData};
use crate::error::{Error, Result};
use crate::gibbs::{BasePrior, ChainConfig, CoefficientState};
use crate::marginals::JointDesign;
use crate::model_space::{Component, ComponentModel, ModelId, ModelPrior, ModelPriorConfig, PolyDag, DEFAULT_ENUMERATION_CAP};
use crate::optim::{minimize, MinimizeOptions};
use crate::par::Execution;
use crate::posterior::DEFAULT_THRESHOLD;
use crate::probit::{norm_cdf, norm_pdf};
use crate::rng::{child_seed, substream};
use crate::search::{default_rpe_model_set, estimate_rpe_fpe, run_rjmcmc, SearchContext, SearchOptions};

/// Largest allowed gap between an achieved and a target mean.
pub const TARGET_TOLERANCE: f64 = 1e-4;
pub const TARGET_LEVELS: [f64; 3] = [0.2, 0.5, 0.8];

const STREAM_DATASET: u64 = 0x51D;
const STREAM_TARGET: u64 = 0x7A6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Target mean detection probability.
    pub p_bar: f64,
    /// Target mean presence probability.
    pub psi_bar: f64,
    #[serde(default = "default_sites")]
    pub n_sites: usize,
    #[serde(default = "default_surveys")]
    pub surveys_per_site: usize,
    #[serde(default = "default_datasets")]
    pub n_datasets: usize,
    #[serde(default = "default_presence_candidates")]
    pub presence_candidates: usize,
    #[serde(default = "default_detection_candidates")]
    pub detection_candidates: usize,
    #[serde(default = "default_true_z")]
    pub true_model_z: Vec<String>,
    #[serde(default = "default_true_y")]
    pub true_model_y: Vec<String>,
    /// Multiplier applied to the solved non-intercept coefficients.
    #[serde(default = "default_scale")]
    pub signal_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sites() -> usize {
    150
}
fn default_surveys() -> usize {
    3
}
fn default_datasets() -> usize {
    15
}
fn default_presence_candidates() -> usize {
    5
}
fn default_detection_candidates() -> usize {
    3
}
fn default_true_z() -> Vec<String> {
    vec!["x1".into(), "x2".into(), "x5".into()]
}
fn default_true_y() -> Vec<String> {
    vec!["q2".into(), "q3".into()]
}
fn default_scale() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn new(p_bar: f64, psi_bar: f64, seed: u64) -> Self {
        ScenarioConfig {
            p_bar,
            psi_bar,
            n_sites: default_sites(),
            surveys_per_site: default_surveys(),
            n_datasets: default_datasets(),
            presence_candidates: default_presence_candidates(),
            detection_candidates: default_detection_candidates(),
            true_model_z: default_true_z(),
            true_model_y: default_true_y(),
            signal_scale: default_scale(),
            seed,
        }
    }

    pub fn presence_names(&self) -> Vec<String> {
        (1..=self.presence_candidates).map(|i| format!("x{i}")).collect()
    }

    pub fn detection_names(&self) -> Vec<String> {
        (1..=self.detection_candidates).map(|i| format!("q{i}")).collect()
    }

    /// Linear model spaces `(detection, presence)`.
    pub fn dags(&self) -> Result<(PolyDag, PolyDag)> {
        let y = self.detection_names();
        let z = self.presence_names();
        let y: Vec<&str> = y.iter().map(String::as_str).collect();
        let z: Vec<&str> = z.iter().map(String::as_str).collect();
        Ok((PolyDag::linear(&y)?, PolyDag::linear(&z)?))
    }

    pub fn truth(&self) -> Result<ModelId> {
        let (dy, dz) = self.dags()?;
        Ok(ModelId::new(dy.model_from_labels(&self.true_model_y)?, dz.model_from_labels(&self.true_model_z)?))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("p_bar", self.p_bar), ("psi_bar", self.psi_bar)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {t}")));
            }
        }
        if self.n_sites < 2 || self.surveys_per_site == 0 || self.n_datasets == 0 {
            return Err(Error::Config("n_sites ≥ 2, surveys_per_site ≥ 1 and n_datasets ≥ 1 are required".into()));
        }
        if self.presence_candidates == 0 && self.detection_candidates == 0 {
            return Err(Error::Config("no candidate covariates".into()));
        }
        if !(self.signal_scale.is_finite() && self.signal_scale > 0.0) {
            return Err(Error::Config("signal_scale must be positive".into()));
        }
        self.truth().map_err(|e| Error::Config(format!("true model: {e}")))?;
        Ok(())
    }
}

/// One generated dataset with the truth behind it.
#[derive(Clone, Debug)]
pub struct SimDataset {
    pub data: SurveyData,
    pub truth: CoefficientState,
    pub z: Vec<u8>,
    pub achieved_psi: f64,
    pub achieved_p: f64,
}

fn mean_prob_objective(m: &DMatrix<f64>, target: f64) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + '_ {
    move |beta: &[f64]| {
        let eta = m * DVector::from_column_slice(beta);
        let n = eta.len() as f64;
        let mean = eta.iter().map(|&e| norm_cdf(e)).sum::<f64>() / n;
        let r = mean - target;
        let dens = DVector::from_iterator(eta.len(), eta.iter().map(|&e| norm_pdf(e)));
        let g = m.tr_mul(&dens) * (2.0 * r / n);
        (r * r, g.as_slice().to_vec())
    }
}

/// Coefficients whose mean `Φ(mβ)` matches `target`, best of `restarts`
/// standard-normal starts.
pub fn solve_target<R: Rng + ?Sized>(m: &DMatrix<f64>, target: f64, restarts: usize, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    let f = mean_prob_objective(m, target);
    let opts = MinimizeOptions {
        grad_tol: 1e-14,
        max_iterations: 200,
        ..Default::default()
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..restarts {
        let x0: Vec<f64> = (0..m.ncols()).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(sol) = minimize(&f, x0, &opts) {
            if best.as_ref().is_none_or(|b| sol.value < b.1) {
                best = Some((sol.x, sol.value));
            }
        }
    }
    let (beta, obj) = best.ok_or(Error::AllRestartsDiverged(restarts))?;
    let residual = obj.sqrt();
    if !(residual <= TARGET_TOLERANCE) {
        return Err(Error::TargetResidual {
            residual,
            tolerance: TARGET_TOLERANCE,
        });
    }
    Ok((beta, residual))
}

fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill so each covariate is drawn as a block.
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_vec(rows, cols, data)
}

fn with_intercept(full: &DMatrix<f64>, model: ComponentModel) -> DMatrix<f64> {
    let cols: Vec<usize> = model.nodes().collect();
    DMatrix::from_fn(full.nrows(), cols.len() + 1, |i, j| if j == 0 { 1.0 } else { full[(i, cols[j - 1])] })
}

/// Generate one dataset; deterministic in `(config.seed, index)`.
pub fn make_dataset(config: &ScenarioConfig, index: usize) -> Result<SimDataset> {
    let truth_model = config.truth()?;
    let n = config.n_sites;
    let j = config.surveys_per_site;
    let mut rng = substream(config.seed, &[STREAM_DATASET, index as u64]);
    let x_full = standard_normal_matrix(n, config.presence_candidates, &mut rng);
    let q_full = standard_normal_matrix(n * j, config.detection_candidates, &mut rng);
    let x = with_intercept(&x_full, truth_model.presence);
    let q = with_intercept(&q_full, truth_model.detection);

    let mut trng = substream(config.seed, &[STREAM_TARGET, index as u64]);
    let (mut alpha, _) = solve_target(&x, config.psi_bar, 10, &mut trng)?;
    let (mut lambda, _) = solve_target(&q, config.p_bar, 10, &mut trng)?;
    for b in alpha.iter_mut().skip(1).chain(lambda.iter_mut().skip(1)) {
        *b *= config.signal_scale;
    }
    let ez = &x * DVector::from_column_slice(&alpha);
    let ey = &q * DVector::from_column_slice(&lambda);
    let achieved_psi = ez.iter().map(|&e| norm_cdf(e)).sum::<f64>() / n as f64;
    let achieved_p = ey.iter().map(|&e| norm_cdf(e)).sum::<f64>() / (n * j) as f64;

    let mut z = Vec::with_capacity(n);
    let mut det = Vec::with_capacity(n);
    for i in 0..n {
        let zi = rng.random::<f64>() < norm_cdf(ez[i]);
        z.push(u8::from(zi));
        det.push(
            (0..j)
                .map(|k| {
                    let u = rng.random::<f64>();
                    u8::from(zi && u < norm_cdf(ey[i * j + k]))
                })
                .collect(),
        );
    }
    let site_cov = config
        .presence_names()
        .into_iter()
        .enumerate()
        .map(|(c, name)| (name, x_full.column(c).iter().copied().collect()))
        .collect();
    let survey_cov = config
        .detection_names()
        .into_iter()
        .enumerate()
        .map(|(c, name)| (name, q_full.column(c).iter().copied().collect()))
        .collect();
    let data = SurveyData::new((1..=n).map(|i| format!("s{i}")).collect(), det, site_cov, survey_cov)?;
    Ok(SimDataset {
        data,
        truth: CoefficientState { alpha, lambda },
        z,
        achieved_psi,
        achieved_p,
    })
}

pub fn make_scenario(config: &ScenarioConfig) -> Result<Vec<SimDataset>> {
    config.validate()?;
    (0..config.n_datasets).map(|d| make_dataset(config, d)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub component: Component,
    pub tp_proportion: f64,
    pub fp_proportion: f64,
    pub tp_count: usize,
    pub fp_count: usize,
    pub n_true: usize,
    pub n_false: usize,
}

fn score_component(component: Component, selected: ComponentModel, truth: ComponentModel, n_candidates: usize) -> SelectionScore {
    let n_true = truth.len();
    let n_false = n_candidates - n_true;
    let tp_count = (selected.0 & truth.0).count_ones() as usize;
    let fp_count = (selected.0 & !truth.0).count_ones() as usize;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    SelectionScore {
        component,
        tp_proportion: ratio(tp_count, n_true),
        fp_proportion: ratio(fp_count, n_false),
        tp_count,
        fp_count,
        n_true,
        n_false,
    }
}

/// `(detection, presence)` scores. Base terms never count.
pub fn evaluate_selection(selected: ModelId, truth: ModelId, n_candidates_y: usize, n_candidates_z: usize) -> [SelectionScore; 2] {
    [
        score_component(Component::Detection, selected.detection, truth.detection, n_candidates_y),
        score_component(Component::Presence, selected.presence, truth.presence, n_candidates_z),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BayesMpm,
    AicLowest,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BayesMpm => "bayes-mpm",
            Method::AicLowest => "aic-lowest",
        }
    }
}

/// Settings shared by every cell of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub prior: ModelPriorConfig,
    #[serde(default)]
    pub base_prior: BasePrior,
    #[serde(default)]
    pub fit: FitOptions,
    /// Restrict AIC to strongly hereditary models.
    #[serde(default)]
    pub aic_heredity: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            chain: ChainConfig::default(),
            prior: ModelPriorConfig::default(),
            base_prior: BasePrior::default(),
            fit: FitOptions::default(),
            aic_heredity: false,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub p_bar: f64,
    pub psi_bar: f64,
    pub dataset: usize,
    pub method: Method,
    pub selected: ModelId,
    pub score: SelectionScore,
    pub runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimFailure {
    pub p_bar: f64,
    pub psi_bar: f64,
    pub dataset: usize,
    pub method: Option<Method>,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResults {
    pub rows: Vec<SimRow>,
    pub failures: Vec<SimFailure>,
}

/// Mean TP and FP of one (cell, method, component).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub p_bar: f64,
    pub psi_bar: f64,
    pub method: Method,
    pub component: Component,
    pub n: usize,
    pub mean_tp: f64,
    pub mean_fp: f64,
}

impl SimResults {
    /// Cell means in row order of first appearance.
    pub fn cell_summaries(&self) -> Vec<CellSummary> {
        let mut out: Vec<CellSummary> = Vec::new();
        for r in &self.rows {
            let idx = out.iter().position(|c| {
                c.p_bar == r.p_bar && c.psi_bar == r.psi_bar && c.method == r.method && c.component == r.score.component
            });
            let c = match idx {
                Some(i) => &mut out[i],
                None => {
                    out.push(CellSummary {
                        p_bar: r.p_bar,
                        psi_bar: r.psi_bar,
                        method: r.method,
                        component: r.score.component,
                        n: 0,
                        mean_tp: 0.0,
                        mean_fp: 0.0,
                    });
                    out.last_mut().unwrap()
                }
            };
            c.n += 1;
            c.mean_tp += r.score.tp_proportion;
            c.mean_fp += r.score.fp_proportion;
        }
        for c in &mut out {
            c.mean_tp /= c.n as f64;
            c.mean_fp /= c.n as f64;
        }
        out
    }

    pub fn cell(&self, p_bar: f64, psi_bar: f64, method: Method, component: Component) -> Option<CellSummary> {
        self.cell_summaries()
            .into_iter()
            .find(|c| c.p_bar == p_bar && c.psi_bar == psi_bar && c.method == method && c.component == component)
    }
}

/// The nine-cell grid over [`TARGET_LEVELS`], each cell seeded from `seed`.
pub fn nine_cell_grid(base: &ScenarioConfig, seed: u64) -> Vec<ScenarioConfig> {
    scenario_grid(base, &TARGET_LEVELS, &TARGET_LEVELS, seed)
}

/// Every `(p̄, ψ̄)` pair, detection level outermost. Cell `(a, b)` gets the
/// seed derived from `seed` and its level indices.
pub fn scenario_grid(base: &ScenarioConfig, p_levels: &[f64], psi_levels: &[f64], seed: u64) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for (a, &p) in p_levels.iter().enumerate() {
        for (b, &psi) in psi_levels.iter().enumerate() {
            out.push(ScenarioConfig {
                p_bar: p,
                psi_bar: psi,
                seed: child_seed(seed, &[a as u64, b as u64]),
                ..base.clone()
            });
        }
    }
    out
}

/// MPM from the renormalized estimator after a search run.
pub fn bayes_mpm(data: &SurveyData, dag_y: &PolyDag, dag_z: &PolyDag, settings: &SimSettings, exec: Execution) -> Result<ModelId> {
    let full = FullDesign::build(data, dag_y, dag_z, true)?;
    let design = JointDesign::new(&full);
    let prior = ModelPrior::new(settings.prior, dag_y, dag_z)?;
    let ctx = SearchContext {
        data,
        dag_y,
        dag_z,
        design: &design,
        prior: &prior,
        base_prior: settings.base_prior,
    };
    let trace = run_rjmcmc(ctx, &settings.chain, &SearchOptions::default(), exec)?;
    let set = default_rpe_model_set(ctx, &trace);
    let (rpe, _) = estimate_rpe_fpe(ctx, &trace, &set, settings.threshold, exec)?;
    Ok(rpe.summary.mpm.closure)
}

pub fn aic_lowest(data: &SurveyData, dag_y: &PolyDag, dag_z: &PolyDag, settings: &SimSettings, seed: u64, exec: Execution) -> Result<ModelId> {
    let full = FullDesign::build(data, dag_y, dag_z, true)?;
    let models = aic_model_list(dag_y, dag_z, settings.aic_heredity, DEFAULT_ENUMERATION_CAP)?;
    Ok(aic_selection(data, &full, &models, &settings.fit, seed, exec)?.lowest())
}

fn run_dataset(
    config: &ScenarioConfig,
    index: usize,
    methods: &[Method],
    settings: &SimSettings,
) -> (Vec<SimRow>, Vec<SimFailure>) {
    let fail = |method, e: Error| SimFailure {
        p_bar: config.p_bar,
        psi_bar: config.psi_bar,
        dataset: index,
        method,
        error: e.to_string(),
    };
    let prep = make_dataset(config, index).and_then(|d| Ok((d, config.dags()?, config.truth()?)));
    let (ds, (dag_y, dag_z), truth) = match prep {
        Ok(v) => v,
        Err(e) => return (Vec::new(), vec![fail(None, e)]),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &method in methods {
        let start = Instant::now();
        let job_seed = child_seed(config.seed, &[index as u64, method as u64]);
        let selected = match method {
            Method::BayesMpm => {
                let s = SimSettings {
                    chain: ChainConfig {
                        seed: job_seed,
                        ..settings.chain
                    },
                    ..settings.clone()
                };
                bayes_mpm(&ds.data, &dag_y, &dag_z, &s, Execution::Sequential)
            }
            Method::AicLowest => aic_lowest(&ds.data, &dag_y, &dag_z, settings, job_seed, Execution::Sequential),
        };
        let runtime_secs = start.elapsed().as_secs_f64();
        match selected {
            Ok(sel) => {
                for score in evaluate_selection(sel, truth, dag_y.n_candidates(), dag_z.n_candidates()) {
                    rows.push(SimRow {
                        p_bar: config.p_bar,
                        psi_bar: config.psi_bar,
                        dataset: index,
                        method,
                        selected: sel,
                        score,
                        runtime_secs,
                    });
                }
            }
            Err(e) => failures.push(fail(Some(method), e)),
        }
    }
    (rows, failures)
}

/// Run every method on every dataset of every cell. Jobs are
/// `(cell, dataset)` pairs; results keep grid order.
pub fn run_scenario_grid(
    configs: &[ScenarioConfig],
    methods: &[Method],
    settings: &SimSettings,
    exec: Execution,
) -> Result<SimResults> {
    settings.chain.validate()?;
    settings.fit.validate()?;
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize)> = configs
        .iter()
        .enumerate()
        .flat_map(|(c, cfg)| (0..cfg.n_datasets).map(move |d| (c, d)))
        .collect();
    let outputs = exec.map(&jobs, |&(c, d)| run_dataset(&configs[c], d, methods, settings));
    let mut results = SimResults::default();
    for (rows, failures) in outputs {
        results.rows.extend(rows);
        results.failures.extend(failures);
    }
    Ok(results)
}
