//! Run configuration, read from a single TOML file.
//!
//! Every field has a default, and the resolved configuration (defaults
//! filled in, paths made absolute) is what gets echoed into the manifest, so
//! a manifest can be fed back in as a configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use occsel_core::aic::FitOptions;
use occsel_core::chib::ChibOptions;
use occsel_core::data::Schema;
use occsel_core::gibbs::{BasePrior, ChainConfig};
use occsel_core::model_space::{ModelPriorConfig, PolyDag, DEFAULT_ENUMERATION_CAP};
use occsel_core::posterior::{Estimator, DEFAULT_THRESHOLD};
use occsel_core::sim::{Method, ScenarioConfig, TARGET_LEVELS};
use serde::{Deserialize, Serialize};

use crate::PipelineError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Select,
    Aic,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Select => "select",
            Command::Aic => "aic",
            Command::Report => "report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model_space: ModelSpaceConfig,
    #[serde(default)]
    pub prior: ModelPriorConfig,
    #[serde(default)]
    pub base_prior: BasePrior,
    #[serde(default)]
    pub chain: ChainConfig,
    /// Estimators computed by `select`. Only epe, rpe and fpe are allowed.
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub chib: ChibOptions,
    #[serde(default)]
    pub aic: AicConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    /// Written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Rpe, Estimator::Fpe]
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_true() -> bool {
    true
}
fn default_degree() -> u32 {
    1
}
fn default_cap() -> u64 {
    DEFAULT_ENUMERATION_CAP as u64
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty configuration parses")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub site_file: PathBuf,
    pub survey_file: PathBuf,
    /// When the schema lists no covariates, presence covariates are read
    /// from the site table and the remaining detection covariates from the
    /// survey table.
    #[serde(default)]
    pub schema: Schema,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpaceConfig {
    #[serde(default)]
    pub detection: ComponentSpace,
    #[serde(default)]
    pub presence: ComponentSpace,
    #[serde(default = "default_cap")]
    pub enumeration_cap: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpace {
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_degree")]
    pub max_degree: u32,
    #[serde(default)]
    pub interactions: bool,
    /// Extra base terms beyond the intercept.
    #[serde(default)]
    pub base: Vec<String>,
    /// Per-covariate exponent caps, e.g. 1 for an indicator.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub degree_caps: BTreeMap<String, u32>,
}

impl Default for ComponentSpace {
    fn default() -> Self {
        ComponentSpace {
            covariates: Vec::new(),
            max_degree: default_degree(),
            interactions: false,
            base: Vec::new(),
            degree_caps: BTreeMap::new(),
        }
    }
}

impl ComponentSpace {
    pub fn dag(&self) -> occsel_core::Result<PolyDag> {
        let names: Vec<&str> = self.covariates.iter().map(String::as_str).collect();
        let base: Vec<&str> = self.base.iter().map(String::as_str).collect();
        let mut caps = vec![self.max_degree; names.len()];
        for (name, cap) in &self.degree_caps {
            let k = self
                .covariates
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| occsel_core::Error::UnknownCovariate(name.clone()))?;
            caps[k] = *cap;
        }
        PolyDag::with_degree_caps(&names, &caps, self.max_degree, self.interactions, &base)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AicConfig {
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_fit_iterations")]
    pub max_iterations: u64,
    /// Restrict the AIC model list to strongly hereditary models.
    #[serde(default)]
    pub heredity: bool,
}

fn default_restarts() -> usize {
    FitOptions::default().restarts
}
fn default_grad_tol() -> f64 {
    FitOptions::default().grad_tol
}
fn default_fit_iterations() -> u64 {
    FitOptions::default().max_iterations
}

impl Default for AicConfig {
    fn default() -> Self {
        AicConfig {
            restarts: default_restarts(),
            grad_tol: default_grad_tol(),
            max_iterations: default_fit_iterations(),
            heredity: false,
        }
    }
}

impl AicConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            grad_tol: self.grad_tol,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub p_levels: Vec<f64>,
    pub psi_levels: Vec<f64>,
    pub methods: Vec<Method>,
    pub n_sites: usize,
    pub surveys_per_site: usize,
    pub n_datasets: usize,
    pub presence_candidates: usize,
    pub detection_candidates: usize,
    pub true_model_z: Vec<String>,
    pub true_model_y: Vec<String>,
    pub signal_scale: f64,
}

fn default_levels() -> Vec<f64> {
    TARGET_LEVELS.to_vec()
}
fn default_methods() -> Vec<Method> {
    vec![Method::BayesMpm, Method::AicLowest]
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let s = ScenarioConfig::new(0.5, 0.5, 0);
        SimulateConfig {
            p_levels: default_levels(),
            psi_levels: default_levels(),
            methods: default_methods(),
            n_sites: s.n_sites,
            surveys_per_site: s.surveys_per_site,
            n_datasets: s.n_datasets,
            presence_candidates: s.presence_candidates,
            detection_candidates: s.detection_candidates,
            true_model_z: s.true_model_z,
            true_model_y: s.true_model_y,
            signal_scale: s.signal_scale,
        }
    }
}

impl SimulateConfig {
    pub fn base_scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_sites: self.n_sites,
            surveys_per_site: self.surveys_per_site,
            n_datasets: self.n_datasets,
            presence_candidates: self.presence_candidates,
            detection_candidates: self.detection_candidates,
            true_model_z: self.true_model_z.clone(),
            true_model_y: self.true_model_y.clone(),
            signal_scale: self.signal_scale,
            ..ScenarioConfig::new(0.5, 0.5, 0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub command: Command,
    pub version: String,
    pub parallel_build: bool,
    pub wall_time_secs: f64,
    pub outcome: String,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(format!("configuration: {e}")))
    }

    /// Read a configuration file. Data paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            d.site_file = resolve(dir, &d.site_file);
            d.survey_file = resolve(dir, &d.survey_file);
        }
        cfg.run = None;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Fill defaults that depend on other fields and check invariants that
    /// serde cannot express.
    pub fn resolve(&mut self, command: Command) -> Result<(), PipelineError> {
        self.command = Some(command);
        self.chain.seed = self.seed;
        let cfg_err = |e: occsel_core::Error| PipelineError::Config(e.to_string());
        self.prior.validate().map_err(cfg_err)?;
        self.base_prior.validate().map_err(cfg_err)?;
        self.chain.validate().map_err(cfg_err)?;
        self.chib.validate().map_err(cfg_err)?;
        self.aic.fit_options().validate().map_err(cfg_err)?;
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(PipelineError::Config(format!("threshold must lie in (0, 1], got {}", self.threshold)));
        }
        if self.estimators.is_empty() || self.estimators.contains(&Estimator::Aic) {
            return Err(PipelineError::Config("estimators must be a non-empty subset of epe, rpe, fpe".into()));
        }
        let mut seen = Vec::new();
        for e in &self.estimators {
            if seen.contains(e) {
                return Err(PipelineError::Config(format!("estimator {e} listed twice")));
            }
            seen.push(*e);
        }
        match command {
            Command::Select | Command::Aic => {
                let space = &self.model_space;
                if space.presence.covariates.is_empty() && space.detection.covariates.is_empty() {
                    return Err(PipelineError::Config("the model space has no candidate covariates".into()));
                }
                let data = self
                    .data
                    .as_mut()
                    .ok_or_else(|| PipelineError::Config("a [data] section is required".into()))?;
                for f in [&data.site_file, &data.survey_file] {
                    if !f.is_file() {
                        return Err(PipelineError::Config(format!("data file {} does not exist", f.display())));
                    }
                }
                let schema = &mut data.schema;
                if schema.site_covariates.is_empty() && schema.survey_covariates.is_empty() {
                    schema.site_covariates = space.presence.covariates.clone();
                    schema.survey_covariates = space
                        .detection
                        .covariates
                        .iter()
                        .filter(|c| !schema.site_covariates.contains(c))
                        .cloned()
                        .collect();
                }
            }
            Command::Simulate => {
                let s = &self.simulate;
                if s.p_levels.is_empty() || s.psi_levels.is_empty() || s.methods.is_empty() {
                    return Err(PipelineError::Config("simulate needs at least one level and one method".into()));
                }
                for &l in s.p_levels.iter().chain(&s.psi_levels) {
                    if !(l > 0.0 && l < 1.0) {
                        return Err(PipelineError::Config(format!("target level {l} outside (0, 1)")));
                    }
                }
                s.base_scenario().validate().map_err(cfg_err)?;
            }
            Command::Report => {}
        }
        Ok(())
    }

    pub fn dags(&self) -> Result<(PolyDag, PolyDag), PipelineError> {
        let cfg_err = |e: occsel_core::Error| PipelineError::Config(e.to_string());
        Ok((
            self.model_space.detection.dag().map_err(cfg_err)?,
            self.model_space.presence.dag().map_err(cfg_err)?,
        ))
    }
}
