#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use occsel_core::data::SurveyData;
use occsel_core::sim::{make_dataset, ScenarioConfig};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_occsel"))
}

/// Write `data` as a site table and a long-format survey table.
pub fn write_tables(data: &SurveyData, dir: &Path) -> (PathBuf, PathBuf) {
    let mut sites = String::from("site");
    for (name, _) in data.site_covariates() {
        write!(sites, ",{name}").unwrap();
    }
    sites.push('\n');
    for (i, id) in data.site_ids().iter().enumerate() {
        sites.push_str(id);
        for (_, col) in data.site_covariates() {
            write!(sites, ",{}", col[i]).unwrap();
        }
        sites.push('\n');
    }
    let mut surveys = String::from("site,survey,y");
    for (name, _) in data.survey_covariates() {
        write!(surveys, ",{name}").unwrap();
    }
    surveys.push('\n');
    for (i, id) in data.site_ids().iter().enumerate() {
        for (j, k) in data.survey_range(i).enumerate() {
            write!(surveys, "{id},{},{}", j + 1, data.detections_flat()[k]).unwrap();
            for (_, col) in data.survey_covariates() {
                write!(surveys, ",{}", col[k]).unwrap();
            }
            surveys.push('\n');
        }
    }
    let s = dir.join("sites.csv");
    let v = dir.join("surveys.csv");
    std::fs::write(&s, sites).unwrap();
    std::fs::write(&v, surveys).unwrap();
    (s, v)
}

/// A small simulated survey with presence covariates x1, x2 and detection
/// covariate q1.
pub fn small_survey(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let cfg = ScenarioConfig {
        n_sites: 80,
        presence_candidates: 2,
        detection_candidates: 1,
        true_model_z: vec!["x1".into()],
        true_model_y: vec!["q1".into()],
        ..ScenarioConfig::new(0.6, 0.6, seed)
    };
    write_tables(&make_dataset(&cfg, 0).unwrap().data, dir)
}

pub fn select_config(dir: &Path, extra: &str) -> PathBuf {
    let (s, v) = small_survey(dir, 3);
    let text = format!(
        r#"
seed = 11
estimators = ["rpe", "fpe"]

[data]
site_file = "{}"
survey_file = "{}"

[model_space.presence]
covariates = ["x1", "x2"]
max_degree = 2
interactions = true

[model_space.detection]
covariates = ["q1"]

[chain]
iterations = 600
burn_in = 100
thin = 5
n_chains = 2
{extra}
"#,
        s.display(),
        v.display()
    );
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

/// Contents of every file in `dir` except the manifest and timing table.
pub fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .filter(|(n, _)| n != "manifest.toml" && n != "simulation_timing.tsv")
        .collect();
    out.sort();
    out
}

pub fn run_ok(cmd: &mut Command) {
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
