//! Polynomial-term DAGs and the heredity-constrained model space.
//!
//! Each model component (detection or presence) has its own [`PolyDag`]:
//! nodes are monomials in the raw covariates, and `η'` is a parent of `η`
//! when `η'` is `η` with one positive exponent decremented. A component
//! model is the set of non-base nodes it includes, stored as a bitmask over
//! the DAG's candidate nodes.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest number of candidate (non-base) nodes a single DAG may hold.
pub const MAX_CANDIDATES: usize = 64;

/// Default enumeration cap on the number of joint models.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// A monomial as a multidegree over the DAG's covariates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Term(pub Vec<u32>);

impl Term {
    pub fn intercept(n_covariates: usize) -> Self {
        Term(vec![0; n_covariates])
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_intercept(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn label(&self, covariates: &[String]) -> String {
        if self.is_intercept() {
            return "1".to_string();
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .zip(covariates)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, name)| {
                if e == 1 {
                    name.clone()
                } else {
                    format!("{name}^{e}")
                }
            })
            .collect();
        parts.join("*")
    }

    /// Parse `"1"`, `"x"`, `"x^2"`, `"x*z^2"` against a covariate list.
    pub fn parse(label: &str, covariates: &[String]) -> Result<Self> {
        let mut exps = vec![0u32; covariates.len()];
        let label = label.trim();
        if label == "1" {
            return Ok(Term(exps));
        }
        for factor in label.split('*') {
            let factor = factor.trim();
            let (name, power) = match factor.split_once('^') {
                Some((n, p)) => {
                    let p: u32 = p
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad exponent in term {label:?}")))?;
                    (n.trim(), p)
                }
                None => (factor, 1),
            };
            let k = covariates
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::UnknownCovariate(name.to_string()))?;
            exps[k] += power;
        }
        Ok(Term(exps))
    }
}

/// Heredity restriction applied to component models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heredity {
    Weak,
    #[default]
    Strong,
    Unrestricted,
}

/// Included non-base nodes of one component, as a bitmask over candidate
/// indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentModel(pub u64);

impl ComponentModel {
    pub const BASE: ComponentModel = ComponentModel(0);

    pub fn from_nodes(nodes: impl IntoIterator<Item = usize>) -> Self {
        ComponentModel(nodes.into_iter().fold(0, |m, i| m | (1u64 << i)))
    }

    #[inline]
    pub fn contains(self, node: usize) -> bool {
        self.0 >> node & 1 == 1
    }

    #[inline]
    pub fn with(self, node: usize) -> Self {
        ComponentModel(self.0 | 1 << node)
    }

    #[inline]
    pub fn without(self, node: usize) -> Self {
        ComponentModel(self.0 & !(1 << node))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn nodes(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..64).filter(move |i| bits >> i & 1 == 1)
    }

    pub fn is_subset_of(self, other: ComponentModel) -> bool {
        self.0 & !other.0 == 0
    }
}

/// A joint model: detection nodes `A_y` and presence nodes `A_z`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelId {
    pub detection: ComponentModel,
    pub presence: ComponentModel,
}

impl ModelId {
    pub const BASE: ModelId = ModelId {
        detection: ComponentModel::BASE,
        presence: ComponentModel::BASE,
    };

    pub fn new(detection: ComponentModel, presence: ComponentModel) -> Self {
        ModelId {
            detection,
            presence,
        }
    }

    pub fn n_terms(self) -> usize {
        self.detection.len() + self.presence.len()
    }

    pub fn component(self, component: Component) -> ComponentModel {
        match component {
            Component::Detection => self.detection,
            Component::Presence => self.presence,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Detection,
    Presence,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Detection => "detection",
            Component::Presence => "presence",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyDag {
    covariates: Vec<String>,
    base: Vec<Term>,
    candidates: Vec<Term>,
    /// Candidate-parent bitmask per candidate.
    parents: Vec<u64>,
    children: Vec<u64>,
    /// Whether some parent of the candidate lies in the base.
    base_parent: Vec<bool>,
}

/// Build the DAG of all monomials of total degree `1..=max_degree` over
/// `covariates`, with mixed terms only when `include_interactions` is set.
/// `base` lists extra base terms beyond the intercept, which is always base.
pub fn build_poly_dag(
    covariates: &[&str],
    max_degree: u32,
    include_interactions: bool,
    base: &[&str],
) -> Result<PolyDag> {
    let caps = vec![max_degree; covariates.len()];
    PolyDag::with_degree_caps(covariates, &caps, max_degree, include_interactions, base)
}

impl PolyDag {
    /// Like [`build_poly_dag`] with a per-covariate cap on each exponent
    /// (e.g. 1 for an indicator covariate).
    pub fn with_degree_caps(
        covariates: &[&str],
        caps: &[u32],
        max_degree: u32,
        include_interactions: bool,
        base: &[&str],
    ) -> Result<Self> {
        if max_degree == 0 {
            return Err(Error::Config("max_degree must be at least 1".into()));
        }
        if caps.len() != covariates.len() {
            return Err(Error::Dimension("one degree cap per covariate".into()));
        }
        let names: Vec<String> = covariates.iter().map(|s| s.to_string()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::DuplicateCovariate(n.clone()));
            }
        }
        let d = names.len();
        let mut base_terms = vec![Term::intercept(d)];
        for label in base {
            let t = Term::parse(label, &names)?;
            if !base_terms.contains(&t) {
                base_terms.push(t);
            }
        }

        let mut monomials = Vec::new();
        let mut exps = vec![0u32; d];
        enumerate_monomials(0, max_degree, caps, &mut exps, &mut monomials);
        let mut candidates: Vec<Term> = monomials
            .into_iter()
            .map(Term)
            .filter(|t| !t.is_intercept())
            .filter(|t| include_interactions || t.0.iter().filter(|&&e| e > 0).count() <= 1)
            .filter(|t| !base_terms.contains(t))
            .collect();
        // Degree first; within a degree, earlier covariates first.
        candidates.sort_by(|a, b| a.degree().cmp(&b.degree()).then_with(|| b.0.cmp(&a.0)));
        if candidates.len() > MAX_CANDIDATES {
            return Err(Error::Config(format!(
                "{} candidate terms exceed the limit of {MAX_CANDIDATES}",
                candidates.len()
            )));
        }
        Self::from_parts(names, base_terms, candidates)
    }

    fn from_parts(covariates: Vec<String>, base: Vec<Term>, candidates: Vec<Term>) -> Result<Self> {
        let index: HashMap<&Term, usize> = candidates.iter().enumerate().map(|(i, t)| (t, i)).collect();
        let k = candidates.len();
        let mut parents = vec![0u64; k];
        let mut base_parent = vec![false; k];
        for (i, t) in candidates.iter().enumerate() {
            for c in 0..t.0.len() {
                if t.0[c] == 0 {
                    continue;
                }
                let mut p = t.clone();
                p.0[c] -= 1;
                if p.is_intercept() || base.contains(&p) {
                    base_parent[i] = true;
                } else if let Some(&j) = index.get(&p) {
                    parents[i] |= 1 << j;
                } else {
                    return Err(Error::Config(format!(
                        "term {} has parent {} outside the DAG",
                        t.label(&covariates),
                        p.label(&covariates)
                    )));
                }
            }
        }
        let mut children = vec![0u64; k];
        for (i, &pm) in parents.iter().enumerate() {
            for j in ComponentModel(pm).nodes() {
                children[j] |= 1 << i;
            }
        }
        Ok(PolyDag {
            covariates,
            base,
            candidates,
            parents,
            children,
            base_parent,
        })
    }

    /// A DAG with no polynomial structure: each name is a free linear term.
    pub fn linear(covariates: &[&str]) -> Result<Self> {
        build_poly_dag(covariates, 1, false, &[])
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn base_terms(&self) -> &[Term] {
        &self.base
    }

    pub fn candidates(&self) -> &[Term] {
        &self.candidates
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn full(&self) -> ComponentModel {
        if self.candidates.len() == 64 {
            ComponentModel(u64::MAX)
        } else {
            ComponentModel((1u64 << self.candidates.len()) - 1)
        }
    }

    pub fn parents(&self, node: usize) -> ComponentModel {
        ComponentModel(self.parents[node])
    }

    pub fn children(&self, node: usize) -> ComponentModel {
        ComponentModel(self.children[node])
    }

    pub fn base_label(&self) -> Vec<String> {
        self.base.iter().map(|t| t.label(&self.covariates)).collect()
    }

    pub fn node_label(&self, node: usize) -> String {
        self.candidates[node].label(&self.covariates)
    }

    pub fn node_by_label(&self, label: &str) -> Result<usize> {
        let t = Term::parse(label, &self.covariates)?;
        self.candidates
            .iter()
            .position(|c| *c == t)
            .ok_or_else(|| Error::InvalidModel(format!("{label:?} is not a candidate term")))
    }

    pub fn model_from_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<ComponentModel> {
        let mut m = ComponentModel::BASE;
        for l in labels {
            let l = l.as_ref();
            let t = Term::parse(l, &self.covariates)?;
            if self.base.contains(&t) {
                continue;
            }
            m = m.with(self.node_by_label(l)?);
        }
        Ok(m)
    }

    /// Labels of the model's terms, base first.
    pub fn model_labels(&self, m: ComponentModel) -> Vec<String> {
        let mut out = self.base_label();
        out.extend(m.nodes().map(|i| self.node_label(i)));
        out
    }

    pub fn is_valid(&self, m: ComponentModel) -> bool {
        m.is_subset_of(self.full())
    }

    pub fn is_hereditary(&self, m: ComponentModel, mode: Heredity) -> bool {
        if !self.is_valid(m) {
            return false;
        }
        match mode {
            Heredity::Unrestricted => true,
            Heredity::Strong => m.nodes().all(|i| self.parents[i] & !m.0 == 0),
            Heredity::Weak => {
                // Candidates are stored in topological order.
                let mut reached = 0u64;
                for i in m.nodes() {
                    if self.base_parent[i] || self.parents[i] & reached != 0 {
                        reached |= 1 << i;
                    }
                }
                reached == m.0
            }
        }
    }

    /// Smallest strongly hereditary model containing `m`.
    pub fn closure(&self, m: ComponentModel) -> ComponentModel {
        let mut out = m.0;
        // Parents always precede children in node order.
        for i in (0..self.candidates.len()).rev() {
            if out & (1 << i) != 0 {
                out |= self.parents[i];
            }
        }
        ComponentModel(out)
    }

    /// Nodes whose parents are all in `m` or the base.
    pub fn eligible(&self, m: ComponentModel) -> ComponentModel {
        ComponentModel(
            (0..self.candidates.len())
                .filter(|&i| self.parents[i] & !m.0 == 0)
                .fold(0, |acc, i| acc | 1 << i),
        )
    }

    /// One-step moves that keep strong heredity: add an eligible node, or
    /// drop a node with no included children.
    pub fn neighborhood(&self, m: ComponentModel) -> Vec<ComponentModel> {
        let mut out = Vec::new();
        for i in 0..self.candidates.len() {
            if m.contains(i) {
                if self.children[i] & m.0 == 0 {
                    out.push(m.without(i));
                }
            } else if self.parents[i] & !m.0 == 0 {
                out.push(m.with(i));
            }
        }
        out
    }

    /// All component models under `mode`, in deterministic DFS order.
    pub fn enumerate(&self, mode: Heredity, cap: u128) -> Result<Vec<ComponentModel>> {
        let k = self.candidates.len();
        if mode == Heredity::Unrestricted {
            let count = 1u128 << k;
            if count > cap {
                return Err(Error::CapExceeded { count, cap });
            }
            return Ok((0..count as u64).map(ComponentModel).collect());
        }
        let mut out = Vec::new();
        self.enumerate_rec(0, 0, 0, mode, cap, &mut out)?;
        Ok(out)
    }

    fn enumerate_rec(
        &self,
        node: usize,
        current: u64,
        reached: u64,
        mode: Heredity,
        cap: u128,
        out: &mut Vec<ComponentModel>,
    ) -> Result<()> {
        if node == self.candidates.len() {
            if out.len() as u128 >= cap {
                return Err(Error::CapExceeded {
                    count: cap + 1,
                    cap,
                });
            }
            out.push(ComponentModel(current));
            return Ok(());
        }
        self.enumerate_rec(node + 1, current, reached, mode, cap, out)?;
        let allowed = match mode {
            Heredity::Strong => self.parents[node] & !current == 0,
            Heredity::Weak => self.base_parent[node] || self.parents[node] & reached != 0,
            Heredity::Unrestricted => true,
        };
        if allowed {
            let bit = 1u64 << node;
            self.enumerate_rec(node + 1, current | bit, reached | bit, mode, cap, out)?;
        }
        Ok(())
    }

    /// Number of strong-heredity component models.
    pub fn count_strong(&self, cap: u128) -> Result<u128> {
        Ok(self.enumerate(Heredity::Strong, cap)?.len() as u128)
    }
}

fn enumerate_monomials(pos: usize, remaining: u32, caps: &[u32], exps: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == exps.len() {
        out.push(exps.clone());
        return;
    }
    for e in 0..=remaining.min(caps[pos]) {
        exps[pos] = e;
        enumerate_monomials(pos + 1, remaining - e, caps, exps, out);
    }
    exps[pos] = 0;
}

/// True when both components satisfy `mode`.
pub fn heredity_check(model: ModelId, dag_y: &PolyDag, dag_z: &PolyDag, mode: Heredity) -> bool {
    dag_y.is_hereditary(model.detection, mode) && dag_z.is_hereditary(model.presence, mode)
}

/// The joint model space as the Cartesian product of component spaces,
/// detection-major.
pub fn enumerate_models(dag_y: &PolyDag, dag_z: &PolyDag, mode: Heredity, cap: u128) -> Result<Vec<ModelId>> {
    let ys = dag_y.enumerate(mode, cap)?;
    let zs = dag_z.enumerate(mode, cap)?;
    let count = ys.len() as u128 * zs.len() as u128;
    if count > cap {
        return Err(Error::CapExceeded { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    for &y in &ys {
        for &z in &zs {
            out.push(ModelId::new(y, z));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPriorKind {
    UniformOverSpace,
    ChipmanFixedTheta,
    HupIntegratedTheta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPriorConfig {
    pub kind: ModelPriorKind,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_theta() -> f64 {
    0.5
}

impl Default for ModelPriorConfig {
    fn default() -> Self {
        ModelPriorConfig {
            kind: ModelPriorKind::HupIntegratedTheta,
            theta: 0.5,
        }
    }
}

impl ModelPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0,1), got {}", self.theta)));
        }
        Ok(())
    }
}

/// Model prior with the per-component normalizers resolved.
#[derive(Clone, Debug)]
pub struct ModelPrior {
    config: ModelPriorConfig,
    log_size_y: f64,
    log_size_z: f64,
}

impl ModelPrior {
    pub fn new(config: ModelPriorConfig, dag_y: &PolyDag, dag_z: &PolyDag) -> Result<Self> {
        config.validate()?;
        let (log_size_y, log_size_z) = match config.kind {
            ModelPriorKind::UniformOverSpace => (
                (dag_y.count_strong(u128::MAX)? as f64).ln(),
                (dag_z.count_strong(u128::MAX)? as f64).ln(),
            ),
            _ => (0.0, 0.0),
        };
        Ok(ModelPrior {
            config,
            log_size_y,
            log_size_z,
        })
    }

    pub fn config(&self) -> ModelPriorConfig {
        self.config
    }

    /// Log prior of one component model; `-inf` off the strong-heredity
    /// support.
    pub fn log_component(&self, dag: &PolyDag, m: ComponentModel, component: Component) -> f64 {
        if !dag.is_hereditary(m, Heredity::Strong) {
            return f64::NEG_INFINITY;
        }
        let eligible = dag.eligible(m).len() as f64;
        let k = m.len() as f64;
        match self.config.kind {
            ModelPriorKind::UniformOverSpace => match component {
                Component::Detection => -self.log_size_y,
                Component::Presence => -self.log_size_z,
            },
            ModelPriorKind::ChipmanFixedTheta => {
                let t = self.config.theta;
                k * t.ln() + (eligible - k) * (1.0 - t).ln()
            }
            ModelPriorKind::HupIntegratedTheta => {
                ln_gamma(k + 1.0) + ln_gamma(eligible - k + 1.0) - ln_gamma(eligible + 2.0)
            }
        }
    }

    pub fn log_prior(&self, model: ModelId, dag_y: &PolyDag, dag_z: &PolyDag) -> f64 {
        self.log_component(dag_y, model.detection, Component::Detection)
            + self.log_component(dag_z, model.presence, Component::Presence)
    }
}

/// Joint log prior, the product of the two component priors.
pub fn log_model_prior(model: ModelId, dag_y: &PolyDag, dag_z: &PolyDag, config: ModelPriorConfig) -> Result<f64> {
    Ok(ModelPrior::new(config, dag_y, dag_z)?.log_prior(model, dag_y, dag_z))
}
