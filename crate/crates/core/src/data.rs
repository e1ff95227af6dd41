//! Survey data, covariate standardization and design matrices.
//!
//! Detections are ragged: site `i` has `J_i ≥ 1` surveys. Detection-level
//! rows are always laid out site-major, surveys in `survey_index` order, so
//! row block `offsets[i]..offsets[i+1]` of `Q` belongs to site `i`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_space::{ModelId, PolyDag, Term};

#[derive(Clone, Debug, PartialEq)]
pub struct SurveyData {
    site_ids: Vec<String>,
    offsets: Vec<usize>,
    detections: Vec<u8>,
    site_covariates: Vec<(String, Vec<f64>)>,
    survey_covariates: Vec<(String, Vec<f64>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresenceState {
    KnownPresent,
    Unknown,
}

impl SurveyData {
    /// Assemble from per-site detection histories and named covariate
    /// columns (site columns of length `N`, survey columns of length `J•`).
    pub fn new(
        site_ids: Vec<String>,
        detections: Vec<Vec<u8>>,
        site_covariates: Vec<(String, Vec<f64>)>,
        survey_covariates: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let n = detections.len();
        if n == 0 {
            return Err(Error::Dimension("no sites".into()));
        }
        if site_ids.len() != n {
            return Err(Error::Dimension(format!("{} site ids for {n} sites", site_ids.len())));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut flat = Vec::new();
        for (i, y) in detections.iter().enumerate() {
            if y.is_empty() {
                return Err(Error::Dimension(format!("site {:?} has no surveys", site_ids[i])));
            }
            if let Some(v) = y.iter().find(|&&v| v > 1) {
                return Err(Error::NonBinaryDetection {
                    site: site_ids[i].clone(),
                    value: v.to_string(),
                });
            }
            flat.extend_from_slice(y);
            offsets.push(flat.len());
        }
        let total = flat.len();
        let mut seen: Vec<&str> = Vec::new();
        for (name, col) in &site_covariates {
            if col.len() != n {
                return Err(Error::Dimension(format!("site covariate {name:?} has {} rows, expected {n}", col.len())));
            }
            if seen.contains(&name.as_str()) {
                return Err(Error::DuplicateCovariate(name.clone()));
            }
            seen.push(name);
        }
        for (name, col) in &survey_covariates {
            if col.len() != total {
                return Err(Error::Dimension(format!(
                    "survey covariate {name:?} has {} rows, expected {total}",
                    col.len()
                )));
            }
            if seen.contains(&name.as_str()) {
                return Err(Error::DuplicateCovariate(name.clone()));
            }
            seen.push(name);
        }
        for (name, col) in site_covariates.iter().chain(&survey_covariates) {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("covariate {name:?}")));
            }
        }
        Ok(SurveyData {
            site_ids,
            offsets,
            detections: flat,
            site_covariates,
            survey_covariates,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_surveys(&self) -> usize {
        self.detections.len()
    }

    pub fn surveys_per_site(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    #[inline]
    pub fn survey_range(&self, site: usize) -> std::ops::Range<usize> {
        self.offsets[site]..self.offsets[site + 1]
    }

    pub fn detections(&self, site: usize) -> &[u8] {
        &self.detections[self.survey_range(site)]
    }

    /// All detections, site-major.
    pub fn detections_flat(&self) -> &[u8] {
        &self.detections
    }

    pub fn detected(&self, site: usize) -> bool {
        self.detections(site).iter().any(|&y| y == 1)
    }

    pub fn presence_observation(&self) -> Vec<PresenceState> {
        (0..self.n_sites())
            .map(|i| {
                if self.detected(i) {
                    PresenceState::KnownPresent
                } else {
                    PresenceState::Unknown
                }
            })
            .collect()
    }

    pub fn site_covariates(&self) -> &[(String, Vec<f64>)] {
        &self.site_covariates
    }

    pub fn survey_covariates(&self) -> &[(String, Vec<f64>)] {
        &self.survey_covariates
    }

    pub fn site_covariate(&self, name: &str) -> Option<&[f64]> {
        self.site_covariates.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }

    pub fn survey_covariate(&self, name: &str) -> Option<&[f64]> {
        self.survey_covariates.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }

    /// Reorder sites by `perm` (new site `k` is old site `perm[k]`).
    pub fn permute_sites(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_sites() {
            return Err(Error::Dimension("permutation length".into()));
        }
        let ids = perm.iter().map(|&i| self.site_ids[i].clone()).collect();
        let det = perm.iter().map(|&i| self.detections(i).to_vec()).collect();
        let site = self
            .site_covariates
            .iter()
            .map(|(n, c)| (n.clone(), perm.iter().map(|&i| c[i]).collect()))
            .collect();
        let survey = self
            .survey_covariates
            .iter()
            .map(|(n, c)| {
                let col = perm.iter().flat_map(|&i| c[self.survey_range(i)].iter().copied()).collect();
                (n.clone(), col)
            })
            .collect();
        SurveyData::new(ids, det, site, survey)
    }
}

/// Column names for the two input tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default = "default_site_id")]
    pub site_id: String,
    #[serde(default = "default_survey_index")]
    pub survey_index: String,
    #[serde(default = "default_detection")]
    pub detection: String,
    #[serde(default)]
    pub site_covariates: Vec<String>,
    #[serde(default)]
    pub survey_covariates: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_site_id() -> String {
    "site".into()
}
fn default_survey_index() -> String {
    "survey".into()
}
fn default_detection() -> String {
    "y".into()
}
fn default_delimiter() -> char {
    ','
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            site_id: default_site_id(),
            survey_index: default_survey_index(),
            detection: default_detection(),
            site_covariates: Vec::new(),
            survey_covariates: Vec::new(),
            delimiter: default_delimiter(),
        }
    }
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path, delimiter: char) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .trim(csv::Trim::All)
            .from_reader(bytes.as_slice());
        let table_err = |e: csv::Error| Error::Table {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let headers: Vec<String> = reader.headers().map_err(table_err)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec.map_err(table_err)?.iter().map(String::from).collect());
        }
        if headers.iter().all(|h| h.is_empty()) || rows.is_empty() {
            return Err(Error::EmptyFile(path.to_path_buf()));
        }
        Ok(Table { headers, rows })
    }

    fn column(&self, path: &Path, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Table {
            path: path.to_path_buf(),
            message: format!("missing column {name:?}"),
        })
    }
}

fn parse_cell(cell: &str, site: &str, column: &str) -> Result<f64> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
        return Err(Error::MissingCovariate {
            site: site.to_string(),
            column: column.to_string(),
        });
    }
    cell.parse::<f64>().map_err(|_| Error::MissingCovariate {
        site: site.to_string(),
        column: column.to_string(),
    })
}

/// Load a site table (one row per site) and a long-format survey table.
pub fn load_survey_data(site_file: &Path, survey_file: &Path, schema: &Schema) -> Result<SurveyData> {
    let sites = Table::read(site_file, schema.delimiter)?;
    let surveys = Table::read(survey_file, schema.delimiter)?;

    let id_col = sites.column(site_file, &schema.site_id)?;
    let site_cov_cols: Vec<usize> = schema
        .site_covariates
        .iter()
        .map(|c| sites.column(site_file, c))
        .collect::<Result<_>>()?;
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut site_ids = Vec::with_capacity(sites.rows.len());
    let mut site_cols = vec![Vec::with_capacity(sites.rows.len()); site_cov_cols.len()];
    for row in &sites.rows {
        let id = row[id_col].clone();
        if index_of.insert(id.clone(), site_ids.len()).is_some() {
            return Err(Error::Table {
                path: site_file.to_path_buf(),
                message: format!("duplicate site id {id:?}"),
            });
        }
        for (k, &c) in site_cov_cols.iter().enumerate() {
            site_cols[k].push(parse_cell(&row[c], &id, &schema.site_covariates[k])?);
        }
        site_ids.push(id);
    }

    let s_id = surveys.column(survey_file, &schema.site_id)?;
    let s_idx = surveys.column(survey_file, &schema.survey_index)?;
    let s_y = surveys.column(survey_file, &schema.detection)?;
    let survey_cov_cols: Vec<usize> = schema
        .survey_covariates
        .iter()
        .map(|c| surveys.column(survey_file, c))
        .collect::<Result<_>>()?;

    // site -> survey_index -> (y, covariates)
    let mut per_site: Vec<BTreeMap<i64, (u8, Vec<f64>)>> = vec![BTreeMap::new(); site_ids.len()];
    for row in &surveys.rows {
        let id = &row[s_id];
        let site = *index_of.get(id).ok_or_else(|| Error::UnknownSite(id.clone()))?;
        let idx: i64 = row[s_idx].parse().map_err(|_| Error::Table {
            path: survey_file.to_path_buf(),
            message: format!("bad survey index {:?} for site {id:?}", row[s_idx]),
        })?;
        let y = match row[s_y].as_str() {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::NonBinaryDetection {
                    site: id.clone(),
                    value: other.to_string(),
                })
            }
        };
        let covs = survey_cov_cols
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_cell(&row[c], id, &schema.survey_covariates[k]))
            .collect::<Result<Vec<_>>>()?;
        if per_site[site].insert(idx, (y, covs)).is_some() {
            return Err(Error::DuplicateSurvey {
                site: id.clone(),
                survey: idx,
            });
        }
    }

    let mut detections = Vec::with_capacity(site_ids.len());
    let mut survey_cols = vec![Vec::new(); survey_cov_cols.len()];
    for (i, visits) in per_site.into_iter().enumerate() {
        if visits.is_empty() {
            return Err(Error::Table {
                path: survey_file.to_path_buf(),
                message: format!("site {:?} has no surveys", site_ids[i]),
            });
        }
        let mut ys = Vec::with_capacity(visits.len());
        for (_, (y, covs)) in visits {
            ys.push(y);
            for (k, v) in covs.into_iter().enumerate() {
                survey_cols[k].push(v);
            }
        }
        detections.push(ys);
    }

    SurveyData::new(
        site_ids,
        detections,
        schema.site_covariates.iter().cloned().zip(site_cols).collect(),
        schema.survey_covariates.iter().cloned().zip(survey_cols).collect(),
    )
}

/// Per-covariate centering and scaling, applied before polynomial expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

fn standardize_column(name: &str, col: &[f64]) -> Result<(f64, f64)> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = if col.len() > 1 {
        col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    if !(var > 1e-14 * (1.0 + mean * mean)) {
        return Err(Error::ZeroVariance(name.to_string()));
    }
    Ok((mean, var.sqrt()))
}

/// One component's full design: base columns then every candidate column.
#[derive(Clone, Debug)]
pub struct ComponentMatrix {
    pub matrix: DMatrix<f64>,
    pub base_dim: usize,
    pub labels: Vec<String>,
}

impl ComponentMatrix {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_candidates(&self) -> usize {
        self.matrix.ncols() - self.base_dim
    }

    /// Column indices (into the full matrix) for a component model.
    pub fn columns(&self, model: crate::model_space::ComponentModel) -> Vec<usize> {
        (0..self.base_dim).chain(model.nodes().map(|i| self.base_dim + i)).collect()
    }

    pub fn select(&self, model: crate::model_space::ComponentModel) -> DMatrix<f64> {
        self.matrix.select_columns(&self.columns(model))
    }
}

fn expand_terms(raw: &[&[f64]], covariates: &[String], terms: &[Term], rows: usize) -> (Vec<f64>, Vec<String>) {
    let mut data = Vec::with_capacity(rows * terms.len());
    let mut labels = Vec::with_capacity(terms.len());
    for t in terms {
        labels.push(t.label(covariates));
        for r in 0..rows {
            let mut v = 1.0;
            for (k, &e) in t.0.iter().enumerate() {
                if e > 0 {
                    v *= raw[k][r].powi(e as i32);
                }
            }
            data.push(v);
        }
    }
    (data, labels)
}

/// Full presence and detection designs for a model space.
#[derive(Clone, Debug)]
pub struct FullDesign {
    pub presence: ComponentMatrix,
    pub detection: ComponentMatrix,
    pub standardization: Option<Standardization>,
}

impl FullDesign {
    /// Presence covariates must be site-level; detection covariates are
    /// looked up among survey covariates first, then broadcast from sites.
    pub fn build(data: &SurveyData, dag_y: &PolyDag, dag_z: &PolyDag, standardize: bool) -> Result<Self> {
        let n = data.n_sites();
        let total = data.total_surveys();
        let mut stats: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        let mut transform = |name: &str, col: &[f64]| -> Result<Vec<f64>> {
            if !standardize {
                return Ok(col.to_vec());
            }
            let (m, s) = match stats.get(name) {
                Some(&ms) => ms,
                None => {
                    let ms = standardize_column(name, col)?;
                    stats.insert(name.to_string(), ms);
                    ms
                }
            };
            Ok(col.iter().map(|v| (v - m) / s).collect())
        };

        let mut z_cols = Vec::new();
        for name in dag_z.covariates() {
            let col = data
                .site_covariate(name)
                .ok_or_else(|| Error::UnknownCovariate(format!("{name} (presence covariates must be site-level)")))?;
            z_cols.push(transform(name, col)?);
        }
        let mut y_cols = Vec::new();
        for name in dag_y.covariates() {
            if let Some(col) = data.survey_covariate(name) {
                y_cols.push(transform(name, col)?);
            } else if let Some(col) = data.site_covariate(name) {
                let site = transform(name, col)?;
                let mut wide = Vec::with_capacity(total);
                for (i, v) in site.iter().enumerate() {
                    wide.extend(std::iter::repeat(*v).take(data.survey_range(i).len()));
                }
                y_cols.push(wide);
            } else {
                return Err(Error::UnknownCovariate(name.clone()));
            }
        }

        let presence = component_matrix(&z_cols, dag_z, n)?;
        let detection = component_matrix(&y_cols, dag_y, total)?;
        let standardization = standardize.then(|| Standardization {
            names: stats.keys().cloned().collect(),
            means: stats.values().map(|v| v.0).collect(),
            sds: stats.values().map(|v| v.1).collect(),
        });
        Ok(FullDesign {
            presence,
            detection,
            standardization,
        })
    }

    pub fn model_design(&self, model: ModelId) -> DesignPair {
        DesignPair {
            x: self.presence.select(model.presence),
            q: self.detection.select(model.detection),
            column_terms_z: self.presence.columns(model.presence).iter().map(|&c| self.presence.labels[c].clone()).collect(),
            column_terms_y: self.detection.columns(model.detection).iter().map(|&c| self.detection.labels[c].clone()).collect(),
            p_base_z: self.presence.base_dim,
            p_base_y: self.detection.base_dim,
        }
    }
}

fn component_matrix(raw: &[Vec<f64>], dag: &PolyDag, rows: usize) -> Result<ComponentMatrix> {
    let refs: Vec<&[f64]> = raw.iter().map(|c| c.as_slice()).collect();
    let mut terms: Vec<Term> = dag.base_terms().to_vec();
    terms.extend_from_slice(dag.candidates());
    let (data, labels) = expand_terms(&refs, dag.covariates(), &terms, rows);
    let matrix = DMatrix::from_vec(rows, terms.len(), data);
    let base_dim = dag.base_terms().len();
    let base = matrix.columns(0, base_dim);
    if (base.transpose() * base).cholesky().is_none() {
        return Err(Error::RankDeficientBase);
    }
    Ok(ComponentMatrix {
        matrix,
        base_dim,
        labels,
    })
}

/// Presence and detection designs `[X_0 X_A]`, `[Q_0 Q_A]` for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignPair {
    pub x: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub column_terms_z: Vec<String>,
    pub column_terms_y: Vec<String>,
    pub p_base_z: usize,
    pub p_base_y: usize,
}

impl DesignPair {
    pub fn p_alpha(&self) -> usize {
        self.x.ncols()
    }

    pub fn p_lambda(&self) -> usize {
        self.q.ncols()
    }

    /// An intercept-only pair for `data`.
    pub fn intercepts(data: &SurveyData) -> Self {
        DesignPair {
            x: DMatrix::from_element(data.n_sites(), 1, 1.0),
            q: DMatrix::from_element(data.total_surveys(), 1, 1.0),
            column_terms_z: vec!["1".into()],
            column_terms_y: vec!["1".into()],
            p_base_z: 1,
            p_base_y: 1,
        }
    }
}

pub fn build_model_design(
    data: &SurveyData,
    dag_z: &PolyDag,
    dag_y: &PolyDag,
    model: ModelId,
    standardize: bool,
) -> Result<DesignPair> {
    if !dag_z.is_valid(model.presence) || !dag_y.is_valid(model.detection) {
        return Err(Error::InvalidModel("node ids outside the DAG".into()));
    }
    Ok(FullDesign::build(data, dag_y, dag_z, standardize)?.model_design(model))
}
