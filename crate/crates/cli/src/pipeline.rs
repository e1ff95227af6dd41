//! Command orchestration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use occsel_core::data::{load_survey_data, FullDesign, SurveyData};
use occsel_core::marginals::JointDesign;
use occsel_core::model_space::{enumerate_models, Heredity, ModelPrior, PolyDag};
use occsel_core::par::Execution;
use occsel_core::posterior::{Estimator, PosteriorReport};
use occsel_core::rng::child_seed;
use occsel_core::search::{
    default_rpe_model_set, estimate_epe, estimate_rpe_fpe, run_rjmcmc, SearchContext, SearchOptions,
};
use occsel_core::sim::{run_scenario_grid, scenario_grid, SimSettings};

use crate::config::{Command, RunConfig, RunInfo};
use crate::report::*;
use crate::PipelineError;

const STREAM_AIC: u64 = 0xA1C;

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
        self.files.push(path);
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
        text.push('\n');
        self.write(name, &text)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, PipelineError> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Run `command` with a configuration that has not yet been resolved.
/// Returns the files written. The manifest is written whenever the output
/// directory could be created, also when the command fails part way.
pub fn run_pipeline(mut config: RunConfig, command: Command, exec: Execution) -> Result<Vec<PathBuf>, PipelineError> {
    config.resolve(command)?;
    let mut out = Output::create(&config.output)?;
    if command == Command::Report {
        render_reports(&mut out)?;
        return Ok(out.files);
    }
    let start = Instant::now();
    let result = match command {
        Command::Select => select(&config, &mut out, exec),
        Command::Aic => aic(&config, &mut out, exec),
        Command::Simulate => simulate(&config, &mut out, exec),
        Command::Report => unreachable!(),
    };
    let mut manifest = config.clone();
    manifest.run = Some(RunInfo {
        command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        parallel_build: exec.is_concurrent(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        outcome: match &result {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        },
    });
    out.write(MANIFEST, &manifest.to_toml())?;
    result.map(|()| out.files)
}

fn load(config: &RunConfig) -> Result<(SurveyData, PolyDag, PolyDag, FullDesign), PipelineError> {
    let d = config.data.as_ref().expect("resolved configuration has data");
    let data = load_survey_data(&d.site_file, &d.survey_file, &d.schema)?;
    let (dag_y, dag_z) = config.dags()?;
    let full = FullDesign::build(&data, &dag_y, &dag_z, d.standardize)?;
    Ok((data, dag_y, dag_z, full))
}

fn select(config: &RunConfig, out: &mut Output, exec: Execution) -> Result<(), PipelineError> {
    let (data, dag_y, dag_z, full) = load(config)?;
    let labels = Labels::new(&dag_y, &dag_z);
    let cap = config.model_space.enumeration_cap as u128;
    // Check the cap before any sampling.
    let epe_models = if config.estimators.contains(&Estimator::Epe) {
        Some(enumerate_models(&dag_y, &dag_z, Heredity::Strong, cap).map_err(|e| PipelineError::Config(format!("EPE needs an enumerable space: {e}")))?)
    } else {
        None
    };
    let design = JointDesign::new(&full);
    let prior = ModelPrior::new(config.prior, &dag_y, &dag_z)?;
    let ctx = SearchContext {
        data: &data,
        dag_y: &dag_y,
        dag_z: &dag_z,
        design: &design,
        prior: &prior,
        base_prior: config.base_prior,
    };

    let mut reports: Vec<(Estimator, PosteriorReport)> = Vec::new();
    let mut acceptance = None;
    if config.estimators.iter().any(|e| matches!(e, Estimator::Rpe | Estimator::Fpe)) {
        let trace = run_rjmcmc(ctx, &config.chain, &SearchOptions::default(), exec)?;
        out.write(TRACE_TSV, &trace_tsv(&trace, &labels))?;
        acceptance = Some(Acceptance {
            presence: trace.acceptance_presence.rate(),
            detection: trace.acceptance_detection.rate(),
        });
        let set = default_rpe_model_set(ctx, &trace);
        let (rpe, fpe) = estimate_rpe_fpe(ctx, &trace, &set, config.threshold, exec)?;
        reports.push((Estimator::Rpe, rpe));
        reports.push((Estimator::Fpe, fpe));
    }
    let mut marginals = Vec::new();
    if let Some(models) = epe_models {
        let (epe, estimates) = estimate_epe(ctx, &models, &config.chain, &config.chib, config.threshold, exec)?;
        marginals = models
            .iter()
            .zip(estimates)
            .map(|(&model, estimate)| MarginalRow { model, estimate })
            .collect();
        out.write(CHIB_TSV, &chib_tsv(&marginals, &labels))?;
        reports.push((Estimator::Epe, epe));
    }
    // Report in the configured order.
    let reports = config
        .estimators
        .iter()
        .filter_map(|e| reports.iter().find(|(k, _)| k == e).map(|(_, r)| r.clone()))
        .collect();
    let bundle = SelectionBundle {
        labels,
        n_sites: data.n_sites(),
        total_surveys: data.total_surveys(),
        standardization: full.standardization.clone(),
        reports,
        acceptance,
        marginals,
    };
    out.write_json(SELECTION_JSON, &bundle)?;
    out.write(SELECTION_TXT, &selection_text(&bundle))
}

fn aic(config: &RunConfig, out: &mut Output, exec: Execution) -> Result<(), PipelineError> {
    let (data, dag_y, dag_z, full) = load(config)?;
    let models = occsel_core::aic::aic_model_list(&dag_y, &dag_z, config.aic.heredity, config.model_space.enumeration_cap as u128)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let seed = child_seed(config.seed, &[STREAM_AIC]);
    let table = occsel_core::aic::aic_selection(&data, &full, &models, &config.aic.fit_options(), seed, exec)?;
    let labels = Labels::new(&dag_y, &dag_z);
    out.write(AIC_TSV, &aic_tsv(&table, &labels))?;
    let weights = table.weight_report(&dag_y, &dag_z, config.threshold);
    let bundle = AicBundle {
        labels,
        n_sites: data.n_sites(),
        total_surveys: data.total_surveys(),
        table,
        weights,
    };
    out.write_json(AIC_JSON, &bundle)?;
    out.write(AIC_TXT, &aic_text(&bundle))
}

fn simulate(config: &RunConfig, out: &mut Output, exec: Execution) -> Result<(), PipelineError> {
    let s = &config.simulate;
    let base = s.base_scenario();
    let grid = scenario_grid(&base, &s.p_levels, &s.psi_levels, config.seed);
    let settings = SimSettings {
        chain: config.chain,
        prior: config.prior,
        base_prior: config.base_prior,
        fit: config.aic.fit_options(),
        aic_heredity: config.aic.heredity,
        threshold: config.threshold,
    };
    let results = run_scenario_grid(&grid, &s.methods, &settings, exec)?;
    let (dag_y, dag_z) = base.dags()?;
    let bundle = SimBundle::new(&results, Labels::new(&dag_y, &dag_z));
    out.write(SIM_TSV, &sim_tsv(&bundle))?;
    out.write(SIM_SUMMARY_TSV, &sim_summary_tsv(&bundle))?;
    out.write(SIM_TIMING_TSV, &sim_timing_tsv(&results))?;
    out.write_json(SIM_JSON, &bundle)?;
    out.write(SIM_TXT, &sim_text(&bundle))?;
    if results.rows.is_empty() {
        return Err(PipelineError::Numerical(format!(
            "every simulation job failed; first error: {}",
            results.failures.first().map_or("none recorded", |f| f.error.as_str())
        )));
    }
    Ok(())
}

/// Re-render the text reports from whatever bundles the output directory
/// holds.
fn render_reports(out: &mut Output) -> Result<(), PipelineError> {
    let mut found = false;
    if let Some(b) = read_json::<SelectionBundle>(&out.dir.join(SELECTION_JSON))? {
        out.write(SELECTION_TXT, &selection_text(&b))?;
        found = true;
    }
    if let Some(b) = read_json::<AicBundle>(&out.dir.join(AIC_JSON))? {
        out.write(AIC_TXT, &aic_text(&b))?;
        found = true;
    }
    if let Some(b) = read_json::<SimBundle>(&out.dir.join(SIM_JSON))? {
        out.write(SIM_TXT, &sim_text(&b))?;
        found = true;
    }
    if !found {
        return Err(PipelineError::Config(format!("no result bundles found in {}", out.dir.display())));
    }
    Ok(())
}
