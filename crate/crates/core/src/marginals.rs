//! Intrinsic prior covariances and closed-form marginals of the Gaussian
//! latents under the intrinsic prior.
//!
//! For a component with design `X = [X_0 X_A]` (`n` rows, `p` columns, the
//! first `p_0` forming the base), a flat prior on the base block and
//! `α_A ~ N(0, (2n/p) S⁻¹)` with `S` the Schur complement of `X_0'X_0` in
//! `X'X`, the latent `v ~ N(Xα, I)` has marginal
//!
//! ```text
//! log m(v) = -(n-p_0)/2 ln 2π + (p-p_0)/2 ln(p/(2n+p)) - ½ ln|X_0'X_0|
//!            - ½ [v'v - q_0 - 2n/(2n+p) (q - q_0)]
//! ```
//!
//! where `q_0 = v'H_0 v` and `q = v'H v` for the base and full hat matrices.
//! Both quadratics come from one forward solve against the Cholesky factor
//! of `X'X` with base columns first.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::{ComponentMatrix, DesignPair, FullDesign};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model_space::{ComponentModel, ModelId, ModelPrior, PolyDag};
use crate::probit::{softmax, LN_2PI};

/// Factorized Gram matrix of one component model.
#[derive(Clone, Debug)]
pub struct IntrinsicGram {
    columns: Vec<usize>,
    base_dim: usize,
    sample_size: usize,
    gram: DMatrix<f64>,
    chol: Cholesky,
}

impl IntrinsicGram {
    /// `labels` name the columns of `gram` and are only used in errors.
    pub fn new(gram: DMatrix<f64>, base_dim: usize, sample_size: usize, labels: &[String]) -> Result<Self> {
        let p = gram.nrows();
        if gram.ncols() != p || base_dim == 0 || base_dim > p || labels.len() != p {
            return Err(Error::Dimension(format!(
                "gram {}x{}, base {base_dim}, {} labels",
                gram.nrows(),
                gram.ncols(),
                labels.len()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gram matrix".into()));
        }
        let chol = match Cholesky::new(&gram) {
            Ok(c) => c,
            Err(j) if j < base_dim => return Err(Error::RankDeficientBase),
            Err(j) => {
                return Err(Error::Identifiability(format!(
                    "{} is collinear with {{{}}}",
                    labels[j],
                    labels[..j].join(", ")
                )))
            }
        };
        Ok(IntrinsicGram {
            columns: (0..p).collect(),
            base_dim,
            sample_size,
            gram,
            chol,
        })
    }

    pub fn from_design(x: &DMatrix<f64>, base_dim: usize, labels: &[String]) -> Result<Self> {
        IntrinsicGram::new(x.transpose() * x, base_dim, x.nrows(), labels)
    }

    /// Column indices into the full component design.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn total_dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn added_dim(&self) -> usize {
        self.total_dim() - self.base_dim
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// `2n/p`: the training-sample scale of the intrinsic prior.
    pub fn prior_scale(&self) -> f64 {
        2.0 * self.sample_size as f64 / self.total_dim() as f64
    }

    pub fn log_det_base(&self) -> f64 {
        self.chol.log_det_range(0..self.base_dim)
    }

    pub fn log_det_schur(&self) -> f64 {
        self.chol.log_det_range(self.base_dim..self.total_dim())
    }

    /// `S = X_A'X_A − X_A'X_0 (X_0'X_0)⁻¹ X_0'X_A`.
    pub fn schur(&self) -> DMatrix<f64> {
        let (p0, p) = (self.base_dim, self.total_dim());
        let l = self.chol.l().view((p0, p0), (p - p0, p - p0));
        l * l.transpose()
    }

    /// Log marginal from `X'v` (this model's columns) and `v'v`.
    pub fn log_marginal(&self, xtv: &[f64], vv: f64) -> f64 {
        let n = self.sample_size as f64;
        let p = self.total_dim() as f64;
        let p0 = self.base_dim;
        let y = self.chol.forward(xtv);
        let q0: f64 = y.iter().take(p0).map(|v| v * v).sum();
        let qa: f64 = y.iter().skip(p0).map(|v| v * v).sum();
        let shrink = 2.0 * n / (2.0 * n + p);
        let mut out = -0.5 * (n - p0 as f64) * LN_2PI - 0.5 * self.log_det_base();
        if self.added_dim() > 0 {
            out += 0.5 * (p - p0 as f64) * (p / (2.0 * n + p)).ln();
        }
        let quad = (vv - q0 - shrink * qa).max(0.0);
        out - 0.5 * quad
    }

    /// Log density of the intrinsic prior `N(0, (2n/p) S⁻¹)` at the non-base
    /// coefficients.
    pub fn log_prior_density(&self, nonbase: &[f64]) -> f64 {
        let k = self.added_dim();
        assert_eq!(nonbase.len(), k);
        if k == 0 {
            return 0.0;
        }
        let p0 = self.base_dim;
        let c = self.prior_scale();
        let l = self.chol.l();
        // a'Sa = |L_AA' a|²
        let mut quad = 0.0;
        for j in 0..k {
            let mut s = 0.0;
            for i in j..k {
                s += l[(p0 + i, p0 + j)] * nonbase[i];
            }
            quad += s * s;
        }
        -0.5 * k as f64 * (LN_2PI + c.ln()) + 0.5 * self.log_det_schur() - 0.5 * quad / c
    }
}

/// `(2n/p) S⁻¹`; empty for a base-only model.
pub fn intrinsic_prior_covariance(gram: &IntrinsicGram) -> DMatrix<f64> {
    let k = gram.added_dim();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let s = gram.schur();
    let chol = Cholesky::new(&s).expect("schur is positive definite for a factorized gram");
    chol.inverse() * gram.prior_scale()
}

/// Log marginal of `latent` for design `x` (columns `[X_0 X_A]`).
pub fn log_latent_marginal(latent: &[f64], x: &DMatrix<f64>, gram: &IntrinsicGram) -> Result<f64> {
    if latent.len() != x.nrows() || x.nrows() != gram.sample_size() || x.ncols() != gram.total_dim() {
        return Err(Error::Dimension(format!(
            "latent length {}, design {}x{}, gram for n={} p={}",
            latent.len(),
            x.nrows(),
            x.ncols(),
            gram.sample_size(),
            gram.total_dim()
        )));
    }
    let v = DVector::from_column_slice(latent);
    let xtv = x.transpose() * &v;
    Ok(gram.log_marginal(xtv.as_slice(), v.norm_squared()))
}

/// Sufficient statistics of one latent vector against a full component design.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentProjection {
    /// `F'v` over every column of the full design.
    pub ftv: Vec<f64>,
    pub vv: f64,
}

impl LatentProjection {
    pub fn select(&self, columns: &[usize]) -> Vec<f64> {
        columns.iter().map(|&c| self.ftv[c]).collect()
    }
}

/// Full design for one component with its cached Gram matrix.
#[derive(Clone, Debug)]
pub struct ComponentDesign {
    matrix: ComponentMatrix,
    gram: DMatrix<f64>,
}

impl ComponentDesign {
    pub fn new(matrix: ComponentMatrix) -> Self {
        let gram = matrix.matrix.transpose() * &matrix.matrix;
        ComponentDesign { matrix, gram }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix.matrix
    }

    pub fn component(&self) -> &ComponentMatrix {
        &self.matrix
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn base_dim(&self) -> usize {
        self.matrix.base_dim
    }

    pub fn labels(&self) -> &[String] {
        &self.matrix.labels
    }

    pub fn project(&self, latent: &[f64]) -> LatentProjection {
        let f = &self.matrix.matrix;
        let mut ftv = vec![0.0; f.ncols()];
        for (c, out) in ftv.iter_mut().enumerate() {
            *out = f.column(c).iter().zip(latent).map(|(a, b)| a * b).sum();
        }
        LatentProjection {
            ftv,
            vv: latent.iter().map(|v| v * v).sum(),
        }
    }

    pub fn gram_for(&self, model: ComponentModel) -> Result<IntrinsicGram> {
        let cols = self.matrix.columns(model);
        let g = self.gram.select_rows(&cols).select_columns(&cols);
        let labels: Vec<String> = cols.iter().map(|&c| self.matrix.labels[c].clone()).collect();
        let mut out = IntrinsicGram::new(g, self.base_dim(), self.n_rows(), &labels)?;
        out.columns = cols;
        Ok(out)
    }

    pub fn log_marginal(&self, gram: &IntrinsicGram, proj: &LatentProjection) -> f64 {
        gram.log_marginal(&proj.select(gram.columns()), proj.vv)
    }

    /// Linear predictor `X_M β` for a model's columns.
    pub fn predictor(&self, gram: &IntrinsicGram, coef: &[f64]) -> Vec<f64> {
        let f = &self.matrix.matrix;
        let mut out = vec![0.0; f.nrows()];
        for (k, &c) in gram.columns().iter().enumerate() {
            let b = coef[k];
            if b != 0.0 {
                for (o, x) in out.iter_mut().zip(f.column(c).iter()) {
                    *o += b * x;
                }
            }
        }
        out
    }
}

/// Memo of factorized component Grams keyed by column mask.
#[derive(Debug, Default)]
pub struct GramCache {
    map: HashMap<u64, Arc<IntrinsicGram>>,
}

impl GramCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, design: &ComponentDesign, model: ComponentModel) -> Result<Arc<IntrinsicGram>> {
        if let Some(g) = self.map.get(&model.0) {
            return Ok(g.clone());
        }
        let g = Arc::new(design.gram_for(model)?);
        self.map.insert(model.0, g.clone());
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Presence and detection designs for a whole model space.
#[derive(Clone, Debug)]
pub struct JointDesign {
    pub presence: ComponentDesign,
    pub detection: ComponentDesign,
}

impl JointDesign {
    pub fn new(full: &FullDesign) -> Self {
        JointDesign {
            presence: ComponentDesign::new(full.presence.clone()),
            detection: ComponentDesign::new(full.detection.clone()),
        }
    }

    /// The design pair `[X_0 X_A]`, `[Q_0 Q_A]` of one model.
    pub fn model_design(&self, model: ModelId) -> DesignPair {
        let (z, y) = (self.presence.component(), self.detection.component());
        let cz = z.columns(model.presence);
        let cy = y.columns(model.detection);
        DesignPair {
            x: z.matrix.select_columns(&cz),
            q: y.matrix.select_columns(&cy),
            column_terms_z: cz.iter().map(|&c| z.labels[c].clone()).collect(),
            column_terms_y: cy.iter().map(|&c| y.labels[c].clone()).collect(),
            p_base_z: z.base_dim,
            p_base_y: y.base_dim,
        }
    }
}

/// Projections of both latent vectors for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentProjections {
    pub v: LatentProjection,
    pub w: LatentProjection,
}

impl LatentProjections {
    pub fn new(design: &JointDesign, v: &[f64], w: &[f64]) -> Self {
        LatentProjections {
            v: design.presence.project(v),
            w: design.detection.project(w),
        }
    }
}

/// Scores a fixed list of models against latent states. Component Grams
/// and marginals are shared between models with the same column set.
#[derive(Clone, Debug)]
pub struct ModelSetScorer {
    models: Vec<ModelId>,
    presence: Vec<Arc<IntrinsicGram>>,
    detection: Vec<Arc<IntrinsicGram>>,
    presence_idx: Vec<usize>,
    detection_idx: Vec<usize>,
    log_prior: Vec<f64>,
}

impl ModelSetScorer {
    pub fn new(
        design: &JointDesign,
        models: Vec<ModelId>,
        prior: &ModelPrior,
        dag_y: &PolyDag,
        dag_z: &PolyDag,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidModel("empty model list".into()));
        }
        let mut cache_z = GramCache::new();
        let mut cache_y = GramCache::new();
        let mut slot_z: HashMap<u64, usize> = HashMap::new();
        let mut slot_y: HashMap<u64, usize> = HashMap::new();
        let (mut presence, mut detection) = (Vec::new(), Vec::new());
        let (mut presence_idx, mut detection_idx) = (Vec::new(), Vec::new());
        let mut log_prior = Vec::with_capacity(models.len());
        for m in &models {
            let iz = match slot_z.get(&m.presence.0) {
                Some(&i) => i,
                None => {
                    presence.push(cache_z.get(&design.presence, m.presence)?);
                    slot_z.insert(m.presence.0, presence.len() - 1);
                    presence.len() - 1
                }
            };
            let iy = match slot_y.get(&m.detection.0) {
                Some(&i) => i,
                None => {
                    detection.push(cache_y.get(&design.detection, m.detection)?);
                    slot_y.insert(m.detection.0, detection.len() - 1);
                    detection.len() - 1
                }
            };
            presence_idx.push(iz);
            detection_idx.push(iy);
            log_prior.push(prior.log_prior(*m, dag_y, dag_z));
        }
        Ok(ModelSetScorer {
            models,
            presence,
            detection,
            presence_idx,
            detection_idx,
            log_prior,
        })
    }

    pub fn models(&self) -> &[ModelId] {
        &self.models
    }

    pub fn log_priors(&self) -> &[f64] {
        &self.log_prior
    }

    /// Unnormalized log posterior of every model given the latents.
    pub fn log_scores(&self, design: &JointDesign, proj: &LatentProjections) -> Vec<f64> {
        let mz: Vec<f64> = self.presence.iter().map(|g| design.presence.log_marginal(g, &proj.v)).collect();
        let my: Vec<f64> = self.detection.iter().map(|g| design.detection.log_marginal(g, &proj.w)).collect();
        (0..self.models.len())
            .map(|k| mz[self.presence_idx[k]] + my[self.detection_idx[k]] + self.log_prior[k])
            .collect()
    }

    pub fn posterior(&self, design: &JointDesign, proj: &LatentProjections) -> Result<Vec<f64>> {
        softmax(&self.log_scores(design, proj)).ok_or(Error::DegenerateScores)
    }
}

/// Posterior over `models` given one latent state, normalized over the list.
pub fn latent_model_posterior(
    design: &JointDesign,
    v: &[f64],
    w: &[f64],
    models: &[ModelId],
    prior: &ModelPrior,
    dag_y: &PolyDag,
    dag_z: &PolyDag,
) -> Result<Vec<f64>> {
    let scorer = ModelSetScorer::new(design, models.to_vec(), prior, dag_y, dag_z)?;
    scorer.posterior(design, &LatentProjections::new(design, v, w))
}
