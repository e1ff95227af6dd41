//! Posterior model probabilities and their selection summaries.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model_space::{Component, ComponentModel, ModelId, PolyDag};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Enumeration with per-model marginal likelihoods.
    Epe,
    /// Per-draw posteriors given the latents, renormalized over a model set.
    Rpe,
    /// Visit frequencies of the search chain.
    Fpe,
    /// Akaike weights.
    Aic,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Epe => "EPE",
            Estimator::Rpe => "RPE",
            Estimator::Fpe => "FPE",
            Estimator::Aic => "AIC",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProbability {
    pub model: ModelId,
    pub probability: f64,
    #[serde(default)]
    pub mc_se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermProbability {
    pub term: String,
    pub probability: f64,
}

/// Terms at or above the threshold, and their heredity closure when the
/// raw set is not strongly hereditary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedianModel {
    pub raw: ModelId,
    pub closure: ModelId,
    pub repaired: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub threshold: f64,
    pub mpip_y: Vec<TermProbability>,
    pub mpip_z: Vec<TermProbability>,
    pub mpm: MedianModel,
    pub hpm: ModelId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub estimator: Estimator,
    /// Sorted by decreasing probability, ties as for the HPM.
    pub models: Vec<ModelProbability>,
    pub summary: SelectionSummary,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl PosteriorReport {
    pub fn new(
        estimator: Estimator,
        mut models: Vec<ModelProbability>,
        dag_y: &PolyDag,
        dag_z: &PolyDag,
        threshold: f64,
        diagnostics: Vec<String>,
    ) -> Self {
        models.sort_by(|a, b| rank_order(a.probability, a.model, b.probability, b.model));
        let summary = summarize_selection(&models, dag_y, dag_z, threshold);
        PosteriorReport {
            estimator,
            models,
            summary,
            diagnostics,
        }
    }

    pub fn probability_of(&self, model: ModelId) -> f64 {
        self.models.iter().find(|m| m.model == model).map_or(0.0, |m| m.probability)
    }
}

fn node_list(m: ComponentModel) -> Vec<usize> {
    m.nodes().collect()
}

/// Fewer terms first, then lexicographic on (detection, presence) node lists.
pub fn simpler_first(a: ModelId, b: ModelId) -> Ordering {
    a.n_terms()
        .cmp(&b.n_terms())
        .then_with(|| node_list(a.detection).cmp(&node_list(b.detection)))
        .then_with(|| node_list(a.presence).cmp(&node_list(b.presence)))
}

fn rank_order(pa: f64, a: ModelId, pb: f64, b: ModelId) -> Ordering {
    pb.total_cmp(&pa).then_with(|| simpler_first(a, b))
}

/// Inclusion probability of every candidate node of one component.
pub fn mpips(models: &[ModelProbability], dag: &PolyDag, component: Component) -> Vec<f64> {
    let mut out = vec![0.0; dag.n_candidates()];
    for m in models {
        for node in m.model.component(component).nodes() {
            out[node] += m.probability;
        }
    }
    out.iter().map(|p| p.min(1.0)).collect()
}

fn threshold_set(mpip: &[f64], threshold: f64) -> ComponentModel {
    ComponentModel::from_nodes((0..mpip.len()).filter(|&i| mpip[i] >= threshold))
}

pub fn median_model(dag_y: &PolyDag, dag_z: &PolyDag, mpip_y: &[f64], mpip_z: &[f64], threshold: f64) -> MedianModel {
    let raw = ModelId::new(threshold_set(mpip_y, threshold), threshold_set(mpip_z, threshold));
    let closure = ModelId::new(dag_y.closure(raw.detection), dag_z.closure(raw.presence));
    MedianModel {
        raw,
        closure,
        repaired: closure != raw,
    }
}

pub fn highest_probability_model(models: &[ModelProbability]) -> ModelId {
    models
        .iter()
        .min_by(|a, b| rank_order(a.probability, a.model, b.probability, b.model))
        .map_or(ModelId::BASE, |m| m.model)
}

fn term_table(dag: &PolyDag, mpip: &[f64]) -> Vec<TermProbability> {
    dag.base_label()
        .into_iter()
        .map(|term| TermProbability { term, probability: 1.0 })
        .chain((0..dag.n_candidates()).map(|i| TermProbability {
            term: dag.node_label(i),
            probability: mpip[i],
        }))
        .collect()
}

pub fn summarize_selection(models: &[ModelProbability], dag_y: &PolyDag, dag_z: &PolyDag, threshold: f64) -> SelectionSummary {
    let my = mpips(models, dag_y, Component::Detection);
    let mz = mpips(models, dag_z, Component::Presence);
    SelectionSummary {
        threshold,
        mpm: median_model(dag_y, dag_z, &my, &mz, threshold),
        hpm: highest_probability_model(models),
        mpip_y: term_table(dag_y, &my),
        mpip_z: term_table(dag_z, &mz),
    }
}

/// Total variation distance between two reports over the union of models.
pub fn total_variation(a: &[ModelProbability], b: &[ModelProbability]) -> f64 {
    use std::collections::BTreeMap;
    let mut diff: BTreeMap<ModelId, f64> = BTreeMap::new();
    for m in a {
        *diff.entry(m.model).or_default() += m.probability;
    }
    for m in b {
        *diff.entry(m.model).or_default() -= m.probability;
    }
    0.5 * diff.values().map(|d| d.abs()).sum::<f64>()
}
