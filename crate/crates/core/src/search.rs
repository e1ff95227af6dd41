//! Reversible-jump search over the joint model space and the three
//! posterior estimators built on it.
//!
//! Each sweep moves each component in turn. The proposal over the one-step
//! neighborhood `L(M)` mixes the local posterior given the latents with a
//! uniform draw; acceptance uses the coefficient-collapsed posterior of the
//! component given its latent vector, so the coefficients are then drawn
//! from their exact conditional under the new model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::chib::{chib_with_stream, ChibEstimate, ChibOptions};
use crate::data::SurveyData;
use crate::error::{Error, Result};
use crate::gibbs::{
    sample_latents_from_predictors, sample_presence_from_predictors, BasePrior, ChainConfig, ComponentFit, FitCache,
    LatentState,
};
use crate::marginals::{ComponentDesign, JointDesign, LatentProjection, LatentProjections, ModelSetScorer};
use crate::model_space::{enumerate_models, Component, ComponentModel, Heredity, ModelId, ModelPrior, PolyDag};
use crate::par::Execution;
use crate::posterior::{Estimator, ModelProbability, PosteriorReport};
use crate::probit::softmax;
use crate::rng::substream;

/// Above this many strong-heredity models the RPE set falls back to the
/// visited models and their neighbors.
pub const RPE_ENUMERATION_LIMIT: u128 = 100_000;

const STREAM_SEARCH: u64 = 0x2A1;
const STREAM_EPE: u64 = 0xE9E;

/// Everything a search or estimator needs about one problem.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub data: &'a SurveyData,
    pub dag_y: &'a PolyDag,
    pub dag_z: &'a PolyDag,
    pub design: &'a JointDesign,
    pub prior: &'a ModelPrior,
    pub base_prior: BasePrior,
}

impl SearchContext<'_> {
    fn dag(&self, c: Component) -> &PolyDag {
        match c {
            Component::Detection => self.dag_y,
            Component::Presence => self.dag_z,
        }
    }

    fn component_design(&self, c: Component) -> &ComponentDesign {
        match c {
            Component::Detection => &self.design.detection,
            Component::Presence => &self.design.presence,
        }
    }

    pub fn check_model(&self, m: ModelId) -> Result<()> {
        if !self.dag_y.is_valid(m.detection) || !self.dag_z.is_valid(m.presence) {
            return Err(Error::InvalidModel(format!("{m:?} uses nodes outside the model space")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceCount {
    pub proposed: u64,
    pub accepted: u64,
}

impl AcceptanceCount {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOptions {
    /// Keep full latent vectors for the thinned draws, not only their
    /// projections.
    #[serde(default)]
    pub keep_latent_states: bool,
}

pub const ACCEPT_PRESENCE: u8 = 1;
pub const ACCEPT_DETECTION: u8 = 2;

/// Pooled output of one or more search chains.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchTrace {
    pub n_chains: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Post-burn-in models, chains concatenated.
    pub visited: Vec<ModelId>,
    /// Acceptance bits per entry of `visited`.
    pub accept_flags: Vec<u8>,
    /// Latent projections at the thinned iterations.
    pub latent_draws: Vec<LatentProjections>,
    /// Full latents at the thinned iterations, if requested.
    pub latent_states: Vec<LatentState>,
    pub acceptance_presence: AcceptanceCount,
    pub acceptance_detection: AcceptanceCount,
    pub model_visit_counts: BTreeMap<ModelId, u64>,
}

impl SearchTrace {
    pub fn per_chain(&self) -> usize {
        self.visited.len() / self.n_chains
    }

    /// `(chain, iteration)` of entry `k` of `visited`.
    pub fn position(&self, k: usize) -> (usize, usize) {
        let per = self.per_chain();
        (k / per, self.burn_in + k % per)
    }

    pub fn visited_set(&self) -> Vec<ModelId> {
        self.model_visit_counts.keys().copied().collect()
    }
}

struct ChainOutput {
    visited: Vec<ModelId>,
    flags: Vec<u8>,
    draws: Vec<LatentProjections>,
    states: Vec<LatentState>,
    acc: [AcceptanceCount; 2],
}

/// Mixture proposal: half local posterior, half uniform, over `scores`.
fn proposal_probs(scores: &[f64]) -> Vec<f64> {
    let k = scores.len() as f64;
    match softmax(scores) {
        Some(p) => p.into_iter().map(|pi| 0.5 * pi + 0.5 / k).collect(),
        None => vec![1.0 / k; scores.len()],
    }
}

fn pick<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.sample(Open01);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct ComponentMover<'c> {
    ctx: SearchContext<'c>,
    component: Component,
    cache: FitCache,
}

impl<'c> ComponentMover<'c> {
    fn fit(&mut self, m: ComponentModel) -> Result<Arc<ComponentFit>> {
        self.cache.get(self.ctx.component_design(self.component), m)
    }

    fn score(&mut self, m: ComponentModel, proj: &LatentProjection, memo: &mut HashMap<u64, f64>) -> Result<f64> {
        if let Some(&s) = memo.get(&m.0) {
            return Ok(s);
        }
        let fit = self.fit(m)?;
        let design = self.ctx.component_design(self.component);
        let s = design.log_marginal(&fit.gram, proj)
            + self.ctx.prior.log_component(self.ctx.dag(self.component), m, self.component);
        memo.insert(m.0, s);
        Ok(s)
    }

    /// One reversible-jump move. Returns the new model and whether the
    /// proposal was accepted, or `None` if the neighborhood is empty.
    fn step<R: Rng + ?Sized>(
        &mut self,
        current: ComponentModel,
        proj: &LatentProjection,
        rng: &mut R,
    ) -> Result<Option<(ComponentModel, bool)>> {
        let ctx = self.ctx;
        let dag = ctx.dag(self.component);
        let nb = dag.neighborhood(current);
        if nb.is_empty() {
            return Ok(None);
        }
        let mut memo = HashMap::new();
        let s_nb = nb.iter().map(|&m| self.score(m, proj, &mut memo)).collect::<Result<Vec<_>>>()?;
        let q_fwd = proposal_probs(&s_nb);
        let idx = pick(&q_fwd, rng);
        let cand = nb[idx];
        let nb_back = dag.neighborhood(cand);
        let s_back = nb_back.iter().map(|&m| self.score(m, proj, &mut memo)).collect::<Result<Vec<_>>>()?;
        let q_back = proposal_probs(&s_back);
        let back = nb_back
            .iter()
            .position(|&m| m == current)
            .expect("neighborhoods are symmetric");
        let log_ratio = self.score(cand, proj, &mut memo)? - self.score(current, proj, &mut memo)? + q_back[back].ln()
            - q_fwd[idx].ln();
        let u: f64 = rng.sample(Open01);
        if u.ln() < log_ratio {
            Ok(Some((cand, true)))
        } else {
            Ok(Some((current, false)))
        }
    }
}

fn run_chain(
    ctx: SearchContext<'_>,
    config: &ChainConfig,
    options: &SearchOptions,
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = substream(config.seed, &[STREAM_SEARCH, chain as u64]);
    let mut mz = ComponentMover {
        ctx,
        component: Component::Presence,
        cache: FitCache::new(ctx.base_prior),
    };
    let mut my = ComponentMover {
        ctx,
        component: Component::Detection,
        cache: FitCache::new(ctx.base_prior),
    };
    let data = ctx.data;
    let mut model = ModelId::BASE;

    // Start from zero coefficients under the base model.
    let mut eta_z = vec![0.0; data.n_sites()];
    let mut eta_y = vec![0.0; data.total_surveys()];
    let mut z = sample_presence_from_predictors(data, &eta_z, &eta_y, &mut rng);
    let (mut v, mut w) = sample_latents_from_predictors(data, &eta_z, &eta_y, &z, &mut rng);
    let mut proj = LatentProjections::new(ctx.design, &v, &w);

    let kept = config.iterations - config.burn_in;
    let mut out = ChainOutput {
        visited: Vec::with_capacity(kept),
        flags: Vec::with_capacity(kept),
        draws: Vec::with_capacity(config.kept()),
        states: Vec::new(),
        acc: [AcceptanceCount::default(); 2],
    };
    for it in 0..config.iterations {
        let mut flags = 0u8;
        if let Some((m, acc)) = mz.step(model.presence, &proj.v, &mut rng)? {
            out.acc[0].proposed += 1;
            if acc {
                out.acc[0].accepted += 1;
                flags |= ACCEPT_PRESENCE;
            }
            model.presence = m;
        }
        if let Some((m, acc)) = my.step(model.detection, &proj.w, &mut rng)? {
            out.acc[1].proposed += 1;
            if acc {
                out.acc[1].accepted += 1;
                flags |= ACCEPT_DETECTION;
            }
            model.detection = m;
        }

        let fz = mz.fit(model.presence)?;
        let fy = my.fit(model.detection)?;
        let alpha = fz.draw(&proj.v, &mut rng);
        let lambda = fy.draw(&proj.w, &mut rng);
        eta_z = ctx.design.presence.predictor(&fz.gram, &alpha);
        eta_y = ctx.design.detection.predictor(&fy.gram, &lambda);
        if eta_z.iter().chain(&eta_y).any(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("linear predictor at iteration {it}")));
        }
        z = sample_presence_from_predictors(data, &eta_z, &eta_y, &mut rng);
        (v, w) = sample_latents_from_predictors(data, &eta_z, &eta_y, &z, &mut rng);
        proj = LatentProjections::new(ctx.design, &v, &w);

        if it >= config.burn_in {
            out.visited.push(model);
            out.flags.push(flags);
        }
        if config.keeps(it) {
            out.draws.push(proj.clone());
            if options.keep_latent_states {
                out.states.push(LatentState {
                    z: z.clone(),
                    v: v.clone(),
                    w: w.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Run `config.n_chains` independent search chains from the base model and
/// pool them.
pub fn run_rjmcmc(
    ctx: SearchContext<'_>,
    config: &ChainConfig,
    options: &SearchOptions,
    exec: Execution,
) -> Result<SearchTrace> {
    config.validate()?;
    ctx.base_prior.validate()?;
    if ctx.dag_y.n_candidates() == 0 && ctx.dag_z.n_candidates() == 0 {
        return Err(Error::Config(
            "model space has a single model; there is nothing to search".into(),
        ));
    }
    let outputs = exec.map_indexed(config.n_chains, |c| run_chain(ctx, config, options, c));
    let mut trace = SearchTrace {
        n_chains: config.n_chains,
        burn_in: config.burn_in,
        thin: config.thin,
        visited: Vec::new(),
        accept_flags: Vec::new(),
        latent_draws: Vec::new(),
        latent_states: Vec::new(),
        acceptance_presence: AcceptanceCount::default(),
        acceptance_detection: AcceptanceCount::default(),
        model_visit_counts: BTreeMap::new(),
    };
    for out in outputs {
        let out = out?;
        for m in &out.visited {
            *trace.model_visit_counts.entry(*m).or_default() += 1;
        }
        trace.visited.extend(out.visited);
        trace.accept_flags.extend(out.flags);
        trace.latent_draws.extend(out.draws);
        trace.latent_states.extend(out.states);
        trace.acceptance_presence.proposed += out.acc[0].proposed;
        trace.acceptance_presence.accepted += out.acc[0].accepted;
        trace.acceptance_detection.proposed += out.acc[1].proposed;
        trace.acceptance_detection.accepted += out.acc[1].accepted;
    }
    Ok(trace)
}

/// Full strong-heredity enumeration when small enough, else the visited
/// models plus every single-component neighbor of them.
pub fn default_rpe_model_set(ctx: SearchContext<'_>, trace: &SearchTrace) -> Vec<ModelId> {
    if let Ok(all) = enumerate_models(ctx.dag_y, ctx.dag_z, Heredity::Strong, RPE_ENUMERATION_LIMIT) {
        return all;
    }
    let mut set: BTreeSet<ModelId> = BTreeSet::new();
    for &m in trace.model_visit_counts.keys() {
        set.insert(m);
        for d in ctx.dag_y.neighborhood(m.detection) {
            set.insert(ModelId::new(d, m.presence));
        }
        for p in ctx.dag_z.neighborhood(m.presence) {
            set.insert(ModelId::new(m.detection, p));
        }
    }
    set.into_iter().collect()
}

/// Renormalized (RPE) and frequency (FPE) estimates from a search trace.
pub fn estimate_rpe_fpe(
    ctx: SearchContext<'_>,
    trace: &SearchTrace,
    model_set: &[ModelId],
    threshold: f64,
    exec: Execution,
) -> Result<(PosteriorReport, PosteriorReport)> {
    if trace.latent_draws.is_empty() || trace.visited.is_empty() {
        return Err(Error::Config("empty search trace".into()));
    }
    for &m in model_set {
        ctx.check_model(m)?;
    }
    let scorer = ModelSetScorer::new(ctx.design, model_set.to_vec(), ctx.prior, ctx.dag_y, ctx.dag_z)?;
    let s = trace.latent_draws.len();
    let n_batches = ((s as f64).sqrt().floor() as usize).max(1);
    let size = s.div_ceil(n_batches);
    let n_batches = s.div_ceil(size);
    let sums = exec.map_indexed(n_batches, |b| -> Result<(Vec<f64>, usize)> {
        let mut acc = vec![0.0; model_set.len()];
        let range = b * size..((b + 1) * size).min(s);
        let count = range.len();
        for proj in &trace.latent_draws[range] {
            for (a, p) in acc.iter_mut().zip(scorer.posterior(ctx.design, proj)?) {
                *a += p;
            }
        }
        Ok((acc, count))
    });
    let sums = sums.into_iter().collect::<Result<Vec<_>>>()?;
    let mut total = vec![0.0; model_set.len()];
    for (acc, _) in &sums {
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    let rpe: Vec<f64> = total.iter().map(|t| t / s as f64).collect();
    let se: Vec<Option<f64>> = (0..model_set.len())
        .map(|k| {
            if sums.len() < 2 {
                return None;
            }
            let means: Vec<f64> = sums.iter().map(|(a, c)| a[k] / *c as f64).collect();
            let var = means.iter().map(|m| (m - rpe[k]).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
            Some((var / means.len() as f64).sqrt())
        })
        .collect();
    let rpe_models = model_set
        .iter()
        .zip(rpe.iter().zip(se))
        .map(|(&model, (&probability, mc_se))| ModelProbability {
            model,
            probability,
            mc_se,
        })
        .collect();
    let n_visits = trace.visited.len() as f64;
    let fpe_models = trace
        .model_visit_counts
        .iter()
        .map(|(&model, &c)| ModelProbability {
            model,
            probability: c as f64 / n_visits,
            mc_se: None,
        })
        .collect();
    let mut notes = vec![format!(
        "{} latent draws from {} chain(s); {} models in the renormalization set",
        s,
        trace.n_chains,
        model_set.len()
    )];
    let outside = trace.model_visit_counts.keys().filter(|m| !model_set.contains(m)).count();
    if outside > 0 {
        notes.push(format!("{outside} visited models lie outside the renormalization set"));
    }
    let rpe = PosteriorReport::new(Estimator::Rpe, rpe_models, ctx.dag_y, ctx.dag_z, threshold, notes);
    let fpe = PosteriorReport::new(
        Estimator::Fpe,
        fpe_models,
        ctx.dag_y,
        ctx.dag_z,
        threshold,
        vec![format!(
            "{} post-burn-in visits to {} distinct models",
            trace.visited.len(),
            trace.model_visit_counts.len()
        )],
    );
    Ok((rpe, fpe))
}

/// Enumeration estimate from per-model Chib marginals.
pub fn estimate_epe(
    ctx: SearchContext<'_>,
    models: &[ModelId],
    chain: &ChainConfig,
    chib: &ChibOptions,
    threshold: f64,
    exec: Execution,
) -> Result<(PosteriorReport, Vec<ChibEstimate>)> {
    if models.is_empty() {
        return Err(Error::InvalidModel("empty model list".into()));
    }
    for &m in models {
        ctx.check_model(m)?;
    }
    let estimates = exec.map(models, |&m| {
        let design = ctx.design.model_design(m);
        chib_with_stream(
            ctx.data,
            &design,
            chain,
            ctx.base_prior,
            chib,
            &[STREAM_EPE, m.detection.0, m.presence.0],
        )
    });
    let estimates = estimates.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((epe_report(ctx, models, &estimates, threshold)?, estimates))
}

/// Normalize per-model marginals into an EPE report, with delta-method
/// standard errors and a diagnostic line per non-converged estimate.
pub fn epe_report(ctx: SearchContext<'_>, models: &[ModelId], estimates: &[ChibEstimate], threshold: f64) -> Result<PosteriorReport> {
    if models.len() != estimates.len() {
        return Err(Error::Dimension(format!("{} models, {} estimates", models.len(), estimates.len())));
    }
    let log_post: Vec<f64> = models
        .iter()
        .zip(estimates)
        .map(|(&m, e)| e.log_marginal + ctx.prior.log_prior(m, ctx.dag_y, ctx.dag_z))
        .collect();
    let probs = softmax(&log_post).ok_or(Error::DegenerateScores)?;
    // Delta method: dp_k/dl_j = p_k (δ_kj − p_j).
    let se_terms: Vec<f64> = probs.iter().zip(estimates).map(|(p, e)| (p * e.mc_se).powi(2)).collect();
    let total_se: f64 = se_terms.iter().sum();
    let rows = models
        .iter()
        .enumerate()
        .map(|(k, &model)| {
            let p = probs[k];
            let se_k = estimates[k].mc_se;
            let var = (1.0 - p).powi(2) * se_k * se_k * p * p + p * p * (total_se - se_terms[k]);
            ModelProbability {
                model,
                probability: p,
                mc_se: Some(var.max(0.0).sqrt()),
            }
        })
        .collect();
    let mut notes = Vec::new();
    let bad: Vec<usize> = (0..models.len()).filter(|&k| !estimates[k].converged).collect();
    if bad.is_empty() {
        notes.push(format!("all {} marginal estimates met the stopping rule", models.len()));
    } else {
        notes.push(format!(
            "{} of {} marginal estimates hit the iteration cap without meeting the stopping rule",
            bad.len(),
            models.len()
        ));
        for k in bad {
            notes.push(format!(
                "non-converged: {} (half-width {:.4} vs |log ordinate| {:.4})",
                describe_model(models[k], ctx.dag_y, ctx.dag_z),
                estimates[k].ci_halfwidth,
                estimates[k].log_ordinate.abs()
            ));
        }
    }
    Ok(PosteriorReport::new(Estimator::Epe, rows, ctx.dag_y, ctx.dag_z, threshold, notes))
}

/// `p{…} / psi{…}` listing of a model's terms, base included.
pub fn describe_model(m: ModelId, dag_y: &PolyDag, dag_z: &PolyDag) -> String {
    let terms = |dag: &PolyDag, c: ComponentModel| dag.model_labels(c).join(", ");
    format!("p{{{}}} psi{{{}}}", terms(dag_y, m.detection), terms(dag_z, m.presence))
}
