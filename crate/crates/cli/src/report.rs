//! Report artifacts: JSON bundles, tab-separated tables and plain-text
//! summaries.
//!
//! Text reports are rendered only from the bundles, so `report` can
//! regenerate them byte for byte from a finished output directory.

use std::fmt::Write as _;

use occsel_core::aic::AicTable;
use occsel_core::chib::ChibEstimate;
use occsel_core::data::Standardization;
use occsel_core::model_space::{Component, ComponentModel, ModelId, PolyDag};
use occsel_core::posterior::{Estimator, PosteriorReport};
use occsel_core::search::{SearchTrace, ACCEPT_DETECTION, ACCEPT_PRESENCE};
use occsel_core::sim::{CellSummary, Method, SimFailure, SimResults};
use serde::{Deserialize, Serialize};

pub const SELECTION_JSON: &str = "posterior.json";
pub const SELECTION_TXT: &str = "selection_report.txt";
pub const AIC_JSON: &str = "aic.json";
pub const AIC_TXT: &str = "aic_report.txt";
pub const AIC_TSV: &str = "aic.tsv";
pub const TRACE_TSV: &str = "trace.tsv";
pub const CHIB_TSV: &str = "chib.tsv";
pub const SIM_JSON: &str = "simulation.json";
pub const SIM_TXT: &str = "simulation_report.txt";
pub const SIM_TSV: &str = "simulation.tsv";
pub const SIM_SUMMARY_TSV: &str = "simulation_summary.tsv";
pub const SIM_TIMING_TSV: &str = "simulation_timing.tsv";
pub const MANIFEST: &str = "manifest.toml";

const TOP_MODELS: usize = 5;

/// Term labels of one component, enough to print any model without the DAG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentLabels {
    pub base: Vec<String>,
    pub candidates: Vec<String>,
}

impl ComponentLabels {
    pub fn from_dag(dag: &PolyDag) -> Self {
        ComponentLabels {
            base: dag.base_label(),
            candidates: (0..dag.n_candidates()).map(|i| dag.node_label(i)).collect(),
        }
    }

    pub fn terms(&self, m: ComponentModel) -> String {
        let all: Vec<&str> = self
            .base
            .iter()
            .map(String::as_str)
            .chain(m.nodes().map(|i| self.candidates[i].as_str()))
            .collect();
        format!("{{{}}}", all.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub detection: ComponentLabels,
    pub presence: ComponentLabels,
}

impl Labels {
    pub fn new(dag_y: &PolyDag, dag_z: &PolyDag) -> Self {
        Labels {
            detection: ComponentLabels::from_dag(dag_y),
            presence: ComponentLabels::from_dag(dag_z),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub model: ModelId,
    pub estimate: ChibEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub presence: f64,
    pub detection: f64,
}

/// Everything `select` reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionBundle {
    pub labels: Labels,
    pub n_sites: usize,
    pub total_surveys: usize,
    pub standardization: Option<Standardization>,
    pub reports: Vec<PosteriorReport>,
    pub acceptance: Option<Acceptance>,
    pub marginals: Vec<MarginalRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AicBundle {
    pub labels: Labels,
    pub n_sites: usize,
    pub total_surveys: usize,
    pub table: AicTable,
    pub weights: PosteriorReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub p_bar: f64,
    pub psi_bar: f64,
    pub dataset: usize,
    pub method: Method,
    pub component: Component,
    pub selected: String,
    pub tp: f64,
    pub fp: f64,
}

/// Simulation results without the run times, which are not reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimBundle {
    pub labels: Labels,
    pub records: Vec<SimRecord>,
    pub summaries: Vec<CellSummary>,
    pub failures: Vec<SimFailure>,
}

impl SimBundle {
    pub fn new(results: &SimResults, labels: Labels) -> Self {
        let records = results
            .rows
            .iter()
            .map(|r| SimRecord {
                p_bar: r.p_bar,
                psi_bar: r.psi_bar,
                dataset: r.dataset,
                method: r.method,
                component: r.score.component,
                selected: match r.score.component {
                    Component::Detection => labels.detection.terms(r.selected.detection),
                    Component::Presence => labels.presence.terms(r.selected.presence),
                },
                tp: r.score.tp_proportion,
                fp: r.score.fp_proportion,
            })
            .collect();
        SimBundle {
            labels,
            records,
            summaries: results.cell_summaries(),
            failures: results.failures.clone(),
        }
    }
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn mpip_block(out: &mut String, reports: &[&PosteriorReport], component: Component, n_base: usize) {
    let title = match component {
        Component::Presence => "presence",
        Component::Detection => "detection",
    };
    writeln!(out, "Marginal posterior inclusion probabilities, {title} component").unwrap();
    let first = reports[0];
    let table = |r: &PosteriorReport| match component {
        Component::Presence => r.summary.mpip_z.clone(),
        Component::Detection => r.summary.mpip_y.clone(),
    };
    let rows = table(first);
    let width = rows.iter().map(|t| t.term.len()).max().unwrap_or(4).max(4);
    let mut header = format!("{:<width$}", "term");
    for r in reports {
        write!(header, "  {:>8}", r.estimator.to_string()).unwrap();
    }
    writeln!(out, "{header}").unwrap();
    let columns: Vec<_> = reports.iter().map(|r| table(r)).collect();
    for (k, row) in rows.iter().enumerate().skip(n_base) {
        let mut line = format!("{:<width$}", row.term);
        for c in &columns {
            write!(line, "  {:>8}", f4(c[k].probability)).unwrap();
        }
        writeln!(out, "{line}").unwrap();
    }
    if rows.len() == n_base {
        writeln!(out, "(no candidate terms)").unwrap();
    }
    writeln!(out).unwrap();
}

fn median_block(out: &mut String, reports: &[&PosteriorReport], labels: &Labels) {
    let threshold = reports[0].summary.threshold;
    writeln!(out, "Median probability models (threshold {threshold})").unwrap();
    writeln!(out, "estimator\tdetection\tpresence").unwrap();
    for r in reports {
        let m = r.summary.mpm;
        writeln!(
            out,
            "{}\t{}\t{}",
            r.estimator,
            labels.detection.terms(m.closure.detection),
            labels.presence.terms(m.closure.presence)
        )
        .unwrap();
        if m.repaired {
            writeln!(
                out,
                "  thresholded set {} / {} completed to satisfy heredity",
                labels.detection.terms(m.raw.detection),
                labels.presence.terms(m.raw.presence)
            )
            .unwrap();
        }
    }
    writeln!(out).unwrap();
}

fn top_block(out: &mut String, r: &PosteriorReport, labels: &Labels) {
    let name = if r.estimator == Estimator::Aic { "AIC weight" } else { "probability" };
    writeln!(out, "Top models, {}", r.estimator).unwrap();
    writeln!(out, "rank\t{name}\tmc_se\tdetection\tpresence").unwrap();
    for (k, m) in r.models.iter().take(TOP_MODELS).enumerate() {
        let se = m.mc_se.map_or("-".to_string(), f4);
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            k + 1,
            f4(m.probability),
            se,
            labels.detection.terms(m.model.detection),
            labels.presence.terms(m.model.presence)
        )
        .unwrap();
    }
    let mass: f64 = r.models.iter().take(TOP_MODELS).map(|m| m.probability).sum();
    writeln!(out, "mass of the top {}: {}", TOP_MODELS.min(r.models.len()), f4(mass)).unwrap();
    writeln!(out).unwrap();
}

fn diagnostics_block(out: &mut String, reports: &[&PosteriorReport]) {
    writeln!(out, "Diagnostics").unwrap();
    for r in reports {
        for d in &r.diagnostics {
            writeln!(out, "{}: {d}", r.estimator).unwrap();
        }
    }
}

fn posterior_text(out: &mut String, reports: &[&PosteriorReport], labels: &Labels) {
    mpip_block(out, reports, Component::Presence, labels.presence.base.len());
    mpip_block(out, reports, Component::Detection, labels.detection.base.len());
    median_block(out, reports, labels);
    for r in reports {
        top_block(out, r, labels);
    }
    diagnostics_block(out, reports);
}

pub fn selection_text(b: &SelectionBundle) -> String {
    let mut out = String::new();
    writeln!(out, "Variable selection: {} sites, {} surveys", b.n_sites, b.total_surveys).unwrap();
    writeln!(out).unwrap();
    let reports: Vec<&PosteriorReport> = b.reports.iter().collect();
    posterior_text(&mut out, &reports, &b.labels);
    if let Some(a) = &b.acceptance {
        writeln!(out, "search acceptance rates: presence {}, detection {}", f4(a.presence), f4(a.detection)).unwrap();
    }
    let flagged = b.marginals.iter().filter(|m| !m.estimate.converged).count();
    if !b.marginals.is_empty() {
        writeln!(out, "marginal likelihoods: {} models, {} flagged non-converged", b.marginals.len(), flagged).unwrap();
    }
    out
}

pub fn aic_text(b: &AicBundle) -> String {
    let mut out = String::new();
    writeln!(out, "AIC selection: {} sites, {} surveys", b.n_sites, b.total_surveys).unwrap();
    writeln!(out).unwrap();
    posterior_text(&mut out, &[&b.weights], &b.labels);
    let best = &b.table.rows[0];
    writeln!(
        out,
        "lowest AIC: {} / {} (AIC {:.4})",
        b.labels.detection.terms(best.model.detection),
        b.labels.presence.terms(best.model.presence),
        best.aic
    )
    .unwrap();
    for (m, e) in &b.table.failures {
        writeln!(out, "failed fit {} / {}: {e}", b.labels.detection.terms(m.detection), b.labels.presence.terms(m.presence)).unwrap();
    }
    out
}

pub fn sim_text(b: &SimBundle) -> String {
    let mut out = String::new();
    writeln!(out, "Mean true and false positive proportions per cell").unwrap();
    writeln!(out, "p_bar\tpsi_bar\tmethod\tcomponent\tn\tmean_tp\tmean_fp").unwrap();
    for s in &b.summaries {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.p_bar,
            s.psi_bar,
            s.method.name(),
            s.component,
            s.n,
            f4(s.mean_tp),
            f4(s.mean_fp)
        )
        .unwrap();
    }
    if !b.failures.is_empty() {
        writeln!(out).unwrap();
        writeln!(out, "Failures").unwrap();
        for f in &b.failures {
            let m = f.method.map_or("generation", Method::name);
            writeln!(out, "{}\t{}\t{}\t{m}\t{}", f.p_bar, f.psi_bar, f.dataset, f.error).unwrap();
        }
    }
    out
}

pub fn trace_tsv(trace: &SearchTrace, labels: &Labels) -> String {
    let mut out = String::from("chain\titeration\tdetection\tpresence\taccepted_detection\taccepted_presence\n");
    for (k, (m, flags)) in trace.visited.iter().zip(&trace.accept_flags).enumerate() {
        let (chain, iter) = trace.position(k);
        writeln!(
            out,
            "{chain}\t{iter}\t{}\t{}\t{}\t{}",
            labels.detection.terms(m.detection),
            labels.presence.terms(m.presence),
            u8::from(flags & ACCEPT_DETECTION != 0),
            u8::from(flags & ACCEPT_PRESENCE != 0)
        )
        .unwrap();
    }
    out
}

pub fn chib_tsv(rows: &[MarginalRow], labels: &Labels) -> String {
    let mut out = String::from("detection\tpresence\tlog_marginal\tmc_se\tlog_ordinate\tci_halfwidth\titerations\tconverged\n");
    for r in rows {
        let e = &r.estimate;
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            labels.detection.terms(r.model.detection),
            labels.presence.terms(r.model.presence),
            e.log_marginal,
            e.mc_se,
            e.log_ordinate,
            e.ci_halfwidth,
            e.iterations_used,
            e.converged
        )
        .unwrap();
    }
    out
}

pub fn aic_tsv(table: &AicTable, labels: &Labels) -> String {
    let mut out = String::from("rank\tdetection\tpresence\tloglik\taic\tdelta\tweight\tconverged\tnorm_bound\n");
    for (k, r) in table.rows.iter().enumerate() {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            k + 1,
            labels.detection.terms(r.model.detection),
            labels.presence.terms(r.model.presence),
            r.loglik,
            r.aic,
            r.delta,
            r.weight,
            r.converged,
            r.norm_bound
        )
        .unwrap();
    }
    out
}

pub fn sim_tsv(b: &SimBundle) -> String {
    let mut out = String::from("p_bar\tpsi_bar\tdataset\tmethod\tcomponent\tselected\ttp\tfp\n");
    for r in &b.records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            r.p_bar,
            r.psi_bar,
            r.dataset,
            r.method.name(),
            r.component,
            r.selected,
            r.tp,
            r.fp
        )
        .unwrap();
    }
    out
}

pub fn sim_summary_tsv(b: &SimBundle) -> String {
    let mut out = String::from("p_bar\tpsi_bar\tmethod\tcomponent\tn\tmean_tp\tmean_fp\n");
    for s in &b.summaries {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            s.p_bar,
            s.psi_bar,
            s.method.name(),
            s.component,
            s.n,
            s.mean_tp,
            s.mean_fp
        )
        .unwrap();
    }
    out
}

/// Per-job run times; the only simulation output that varies between runs.
pub fn sim_timing_tsv(results: &SimResults) -> String {
    let mut out = String::from("p_bar\tpsi_bar\tdataset\tmethod\truntime_secs\n");
    let mut last = None;
    for r in &results.rows {
        let key = (r.p_bar.to_bits(), r.psi_bar.to_bits(), r.dataset, r.method);
        if last == Some(key) {
            continue;
        }
        last = Some(key);
        writeln!(out, "{}\t{}\t{}\t{}\t{:.3}", r.p_bar, r.psi_bar, r.dataset, r.method.name(), r.runtime_secs).unwrap();
    }
    out
}
