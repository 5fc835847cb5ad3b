//! Non-trainable prototype classifier and robust target supervision state:
//! EMA class centroids, cosine soft pseudo-labels, per-class adaptive
//! confidence thresholds, and confident-subset selection.
//!
//! Nothing in this module participates in differentiation; its outputs are
//! constants for the loss terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::tensor::{argmax, ProbVector, Tensor};

/// Cosine guard against zero-norm vectors.
const COS_EPS: f64 = 1e-12;

/// Per-class centroids in latent space with per-class init tracking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    centroids: Tensor,
    initialized: Vec<bool>,
}

impl Prototypes {
    pub fn new(k_s: usize, d_z: usize) -> Self {
        Prototypes {
            centroids: Tensor::zeros(vec![k_s, d_z]),
            initialized: vec![false; k_s],
        }
    }

    pub fn k_s(&self) -> usize {
        self.initialized.len()
    }

    pub fn all_initialized(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.initialized[class]
    }

    /// Centroid row for an initialized class.
    pub fn centroid(&self, class: usize) -> Result<&[f64]> {
        if !self.initialized[class] {
            return Err(Error::Domain(format!(
                "centroid for class {class} read before initialization"
            )));
        }
        Ok(self.centroids.row(class))
    }

    pub fn centroids(&self) -> &Tensor {
        &self.centroids
    }
}

/// Per-class means of source embeddings plus a presence mask for classes
/// present in the batch.
pub fn compute_class_means(
    embeddings: &Tensor,
    labels: &[usize],
    k_s: usize,
) -> Result<(Tensor, Vec<bool>)> {
    if embeddings.rows() != labels.len() {
        return Err(Error::Dim(format!(
            "{} embeddings vs {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k_s) {
        return Err(Error::Domain(format!(
            "label {bad} out of range [0, {k_s})"
        )));
    }
    let d_z = embeddings.cols();
    let mut means = Tensor::zeros(vec![k_s, d_z]);
    let mut counts = vec![0usize; k_s];
    for (row, &label) in embeddings.iter_rows().zip(labels) {
        counts[label] += 1;
        for (acc, v) in means.row_mut(label).iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut mask = vec![false; k_s];
    for (k, &count) in counts.iter().enumerate() {
        if count > 0 {
            mask[k] = true;
            for v in means.row_mut(k) {
                *v /= count as f64;
            }
        }
    }
    Ok((means, mask))
}

/// EMA centroid update: `μ_k ← ω·μ_update + (1−ω)·μ_k` for classes present
/// in the batch. A class's first-ever update sets the centroid directly;
/// absent classes are left untouched.
pub fn ema_update(
    prototypes: &mut Prototypes,
    means: &Tensor,
    mask: &[bool],
    omega: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Config(format!("omega {omega} must be in [0, 1]")));
    }
    if means.shape() != prototypes.centroids.shape() || mask.len() != prototypes.k_s() {
        return Err(Error::Dim(
            "class means do not match prototype shape".into(),
        ));
    }
    for (k, &present) in mask.iter().enumerate() {
        if !present {
            continue;
        }
        if prototypes.initialized[k] {
            let update = means.row(k).to_vec();
            for (c, u) in prototypes.centroids.row_mut(k).iter_mut().zip(update) {
                *c = omega * u + (1.0 - omega) * *c;
            }
        } else {
            let row = means.row(k).to_vec();
            prototypes.centroids.row_mut(k).copy_from_slice(&row);
            prototypes.initialized[k] = true;
        }
    }
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na <= COS_EPS || nb <= COS_EPS {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Soft pseudo-labels from cosine similarity to each centroid followed by a
/// softmax, plus the argmax hard labels (ties to the lowest class index).
pub fn prototype_predict(z: &Tensor, prototypes: &Prototypes) -> Result<(Tensor, Vec<usize>)> {
    if !prototypes.all_initialized() {
        return Err(Error::Domain(
            "prototype prediction requires all class centroids initialized".into(),
        ));
    }
    if z.cols() != prototypes.centroids.cols() {
        return Err(Error::Dim(format!(
            "embedding width {} vs centroid width {}",
            z.cols(),
            prototypes.centroids.cols()
        )));
    }
    let k_s = prototypes.k_s();
    let mut sims = Tensor::zeros(vec![z.rows(), k_s]);
    for i in 0..z.rows() {
        let row = z.row(i);
        for k in 0..k_s {
            sims.row_mut(i)[k] = cosine(row, prototypes.centroids.row(k));
        }
    }
    let probs = softmax(&sims)?;
    let labels = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
    Ok((probs, labels))
}

/// Per-class mean of max-confidence over samples predicted as that class,
/// plus a presence mask.
pub fn mean_confidence(preds: &Tensor) -> Result<(Vec<f64>, Vec<bool>)> {
    if preds.rows() == 0 {
        return Err(Error::Domain("empty prediction batch".into()));
    }
    let k_s = preds.cols();
    let mut sums = vec![0.0; k_s];
    let mut counts = vec![0usize; k_s];
    for row in preds.iter_rows() {
        let k = argmax(row);
        sums[k] += row[k];
        counts[k] += 1;
    }
    let mut mask = vec![false; k_s];
    for k in 0..k_s {
        if counts[k] > 0 {
            mask[k] = true;
            sums[k] /= counts[k] as f64;
        }
    }
    Ok((sums, mask))
}

/// Per-class adaptive thresholds and the confidence statistics behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub tau: Vec<f64>,
    pub p_source: Vec<f64>,
    pub source_mask: Vec<bool>,
    pub p_target: Vec<f64>,
    pub target_mask: Vec<bool>,
    pub zeta: f64,
}

impl ThresholdState {
    /// Start strict: nothing is admitted for a class until its source
    /// confidence has been observed.
    pub fn new(k_s: usize, zeta: f64) -> Self {
        ThresholdState {
            tau: vec![1.0; k_s],
            p_source: vec![0.0; k_s],
            source_mask: vec![false; k_s],
            p_target: vec![0.0; k_s],
            target_mask: vec![false; k_s],
            zeta,
        }
    }

    /// Recompute `τ_k ← min(e^{(p̃_t,k/p̃_s,k)^ζ} − 1, 1) · p̃_s,k`.
    ///
    /// Classes with no target prediction keep the strictest value
    /// `τ_k = p̃_s,k`; classes with no source prediction keep their previous
    /// threshold; a zero source confidence forces `τ_k = 0`.
    pub fn update(
        &mut self,
        p_source: &[f64],
        source_mask: &[bool],
        p_target: &[f64],
        target_mask: &[bool],
    ) -> Result<()> {
        let k_s = self.tau.len();
        if p_source.len() != k_s
            || source_mask.len() != k_s
            || p_target.len() != k_s
            || target_mask.len() != k_s
        {
            return Err(Error::Dim("confidence vectors do not match K_s".into()));
        }
        for k in 0..k_s {
            if !source_mask[k] {
                continue; // reuse previous tau[k]
            }
            let ps = p_source[k];
            self.tau[k] = if ps == 0.0 {
                0.0
            } else if !target_mask[k] {
                ps
            } else {
                let ratio = p_target[k] / ps;
                (ratio.powf(self.zeta).exp() - 1.0).min(1.0) * ps
            };
        }
        self.p_source.copy_from_slice(p_source);
        self.source_mask.copy_from_slice(source_mask);
        self.p_target.copy_from_slice(p_target);
        self.target_mask.copy_from_slice(target_mask);
        Ok(())
    }
}

/// Target samples admitted for supervision, with their soft pseudo-labels.
#[derive(Debug, Clone, Default)]
pub struct ConfidentSubset {
    /// Row indices into the target dataset.
    pub indices: Vec<usize>,
    /// Soft pseudo-label per admitted sample.
    pub soft_labels: Vec<ProbVector>,
    /// Argmax label per admitted sample.
    pub labels: Vec<usize>,
}

impl ConfidentSubset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Admit sample `j` iff `max(p̂_j) ≥ τ_k` with `k = argmax(p̂_j)`.
pub fn select_confident(p_hat: &Tensor, tau: &[f64]) -> Result<ConfidentSubset> {
    if p_hat.cols() != tau.len() {
        return Err(Error::Dim(format!(
            "{} classes in predictions vs {} thresholds",
            p_hat.cols(),
            tau.len()
        )));
    }
    let mut subset = ConfidentSubset::default();
    for (j, row) in p_hat.iter_rows().enumerate() {
        let k = argmax(row);
        if row[k] >= tau[k] {
            subset.indices.push(j);
            subset.soft_labels.push(ProbVector::new(row.to_vec())?);
            subset.labels.push(k);
        }
    }
    Ok(subset)
}
