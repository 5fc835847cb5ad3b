//! Objective terms: classification, complement entropy, inter-class
//! separation (set distances), intra-class compactness, entropy
//! minimization, and their combination.
//!
//! Every term comes in a value-only form and a `_with_grads` form returning
//! the partial derivatives w.r.t. the term's immediate inputs (probability
//! rows or embedding rows). Pseudo-label targets and class assignments are
//! constants under differentiation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax, euclid, validate_prob_rows, ProbVector, Tensor};

/// Floor applied to any quantity before a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Guard below which a sample's complement mass is treated as zero.
const COMP_GUARD: f64 = 1e-8;

/// Scalar weights of the overall objective plus pseudo-labeling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Focal exponent of the complement term.
    pub gamma: f64,
    /// Weight of the complement term in the total.
    pub eta: f64,
    /// Cross-target inter-class weight.
    pub alpha: f64,
    /// Source-to-target inter-class weight.
    pub beta: f64,
    /// Intra-class compactness weight in the total.
    pub delta: f64,
    /// Adaptive-threshold regulator.
    pub zeta: f64,
    /// Centroid EMA rate.
    pub omega: f64,
}

impl Default for LossWeights {
    /// Reference configuration for the 31-class benchmark column.
    fn default() -> Self {
        LossWeights {
            gamma: 0.7,
            eta: 6.0,
            alpha: 0.4,
            beta: 1.0,
            delta: 1.5,
            zeta: 3.0,
            omega: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma {} must be ≥ 0", self.gamma)));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} {v} must be ≥ 0")));
            }
        }
        if self.zeta <= 0.0 || !self.zeta.is_finite() {
            return Err(Error::Config(format!("zeta {} must be > 0", self.zeta)));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!(
                "omega {} must be in [0, 1]",
                self.omega
            )));
        }
        Ok(())
    }
}

/// Per-class embedding sets keyed by label index.
pub type ClassSets = BTreeMap<usize, Tensor>;

/// A batch of predictions paired with targets, rows on the simplex.
#[derive(Debug, Clone)]
pub struct LabeledProbs<'a> {
    pub preds: &'a Tensor,
    pub targets: &'a Tensor,
}

impl<'a> LabeledProbs<'a> {
    pub fn new(preds: &'a Tensor, targets: &'a Tensor) -> Result<Self> {
        if preds.shape() != targets.shape() {
            return Err(Error::Dim(format!(
                "predictions {:?} and targets {:?} differ in shape",
                preds.shape(),
                targets.shape()
            )));
        }
        validate_prob_rows(targets, "targets")?;
        Ok(LabeledProbs { preds, targets })
    }

    fn rows(&self) -> usize {
        self.preds.rows()
    }
}

// ---------------------------------------------------------------------------
// Cross-entropy (classification objective)
// ---------------------------------------------------------------------------

fn ce_row(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&p, &y)| {
            if y == 0.0 {
                0.0
            } else {
                -y * p.max(LOG_CLAMP).ln()
            }
        })
        .sum()
}

/// Mean source cross-entropy plus, when a confident target batch is present,
/// mean target cross-entropy against soft pseudo-labels. Each term is
/// normalized by its own batch size.
pub fn ce_loss(source: &LabeledProbs, confident_target: Option<&LabeledProbs>) -> Result<f64> {
    Ok(ce_loss_with_grads(source, confident_target)?.0)
}

/// As [`ce_loss`], also returning gradients w.r.t. the prediction rows.
pub fn ce_loss_with_grads(
    source: &LabeledProbs,
    confident_target: Option<&LabeledProbs>,
) -> Result<(f64, Tensor, Option<Tensor>)> {
    if source.rows() == 0 {
        return Err(Error::Domain("empty source batch in ce_loss".into()));
    }
    let (src_val, src_grad) = ce_batch(source);
    match confident_target {
        Some(tgt) if tgt.rows() > 0 => {
            let (tgt_val, tgt_grad) = ce_batch(tgt);
            Ok((src_val + tgt_val, src_grad, Some(tgt_grad)))
        }
        _ => Ok((src_val, src_grad, None)),
    }
}

fn ce_batch(batch: &LabeledProbs) -> (f64, Tensor) {
    let n = batch.rows() as f64;
    let mut grad = Tensor::zeros(batch.preds.shape().to_vec());
    let mut total = 0.0;
    for i in 0..batch.rows() {
        let p = batch.preds.row(i);
        let y = batch.targets.row(i);
        total += ce_row(p, y);
        for (g, (&pv, &yv)) in grad.row_mut(i).iter_mut().zip(p.iter().zip(y)) {
            if yv != 0.0 && pv > LOG_CLAMP {
                *g = -yv / pv / n;
            }
        }
    }
    (total / n, grad)
}

// ---------------------------------------------------------------------------
// Complement entropy
// ---------------------------------------------------------------------------

/// Single-sample complement term: `(1−ŷ_g)^γ Σ_{k≠g} (ŷ_k/(1−ŷ_g)) log(ŷ_k/(1−ŷ_g))`,
/// where `g` is the argmax of `target`. Always ≤ 0; 0 when the prediction is
/// one-hot at `g` (within guard).
pub fn comp_sample(pred: &ProbVector, target: &ProbVector, gamma: f64) -> f64 {
    comp_sample_slice(pred.probs(), target.argmax(), gamma)
}

fn comp_sample_slice(p: &[f64], g: usize, gamma: f64) -> f64 {
    let q = 1.0 - p[g];
    if q < COMP_GUARD {
        return 0.0;
    }
    let mut s = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        if k == g {
            continue;
        }
        let r = pk / q;
        if r > 0.0 {
            s += r * r.max(LOG_CLAMP).ln();
        }
    }
    q.powf(gamma) * s
}

/// Gradient of [`comp_sample_slice`] w.r.t. the prediction entries.
fn comp_sample_grad(p: &[f64], g: usize, gamma: f64, scale: f64, grad: &mut [f64]) {
    let q = 1.0 - p[g];
    if q < COMP_GUARD {
        return;
    }
    let mut s = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        if k == g {
            continue;
        }
        let r = pk / q;
        if r > 0.0 {
            s += r * r.max(LOG_CLAMP).ln();
        }
    }
    let qg1 = q.powf(gamma - 1.0);
    // ∂/∂p_g [q^γ S] = q^{γ−1}((1−γ)S + 1) using Σ_k r_k = 1.
    grad[g] += scale * qg1 * ((1.0 - gamma) * s + 1.0);
    for (k, &pk) in p.iter().enumerate() {
        if k == g {
            continue;
        }
        let r = (pk / q).max(LOG_CLAMP);
        grad[k] += scale * qg1 * (r.ln() + 1.0);
    }
}

/// Batch complement objective normalized by the number of complement
/// categories `K_s − 1`. Target ground truth is the argmax of each target row.
pub fn comp_loss(
    source: &LabeledProbs,
    confident_target: Option<&LabeledProbs>,
    gamma: f64,
    k_s: usize,
) -> Result<f64> {
    Ok(comp_loss_with_grads(source, confident_target, gamma, k_s)?.0)
}

/// As [`comp_loss`], also returning gradients w.r.t. the prediction rows.
pub fn comp_loss_with_grads(
    source: &LabeledProbs,
    confident_target: Option<&LabeledProbs>,
    gamma: f64,
    k_s: usize,
) -> Result<(f64, Tensor, Option<Tensor>)> {
    if k_s < 2 {
        return Err(Error::Domain(format!(
            "complement objective needs K_s ≥ 2, got {k_s}"
        )));
    }
    if source.rows() == 0 {
        return Err(Error::Domain("empty source batch in comp_loss".into()));
    }
    let norm = 1.0 / (k_s as f64 - 1.0);
    let (src_val, src_grad) = comp_batch(source, gamma, norm);
    match confident_target {
        Some(tgt) if tgt.rows() > 0 => {
            let (tgt_val, tgt_grad) = comp_batch(tgt, gamma, norm);
            Ok((src_val + tgt_val, src_grad, Some(tgt_grad)))
        }
        _ => Ok((src_val, src_grad, None)),
    }
}

fn comp_batch(batch: &LabeledProbs, gamma: f64, norm: f64) -> (f64, Tensor) {
    let n = batch.rows() as f64;
    let mut grad = Tensor::zeros(batch.preds.shape().to_vec());
    let mut total = 0.0;
    for i in 0..batch.rows() {
        let g = argmax(batch.targets.row(i));
        let p = batch.preds.row(i);
        total += comp_sample_slice(p, g, gamma);
        comp_sample_grad(p, g, gamma, norm / n, grad.row_mut(i));
    }
    (total / n * norm, grad)
}

// ---------------------------------------------------------------------------
// Set distances (inter-class separation primitives)
// ---------------------------------------------------------------------------

fn check_nonempty(t: &Tensor, what: &str) -> Result<()> {
    if t.rows() == 0 {
        return Err(Error::Domain(format!("{what}: empty point set")));
    }
    Ok(())
}

/// L2 distance between the means of two point sets.
pub fn d_e(set_a: &Tensor, set_b: &Tensor) -> Result<f64> {
    check_nonempty(set_a, "d_e")?;
    check_nonempty(set_b, "d_e")?;
    let (ma, mb) = (set_mean(set_a), set_mean(set_b));
    Ok(euclid(&ma, &mb))
}

fn set_mean(t: &Tensor) -> Vec<f64> {
    let (m, d) = (t.rows(), t.cols());
    let mut mean = vec![0.0; d];
    for row in t.iter_rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    mean
}

/// Accumulate `scale · ∂d_e/∂rows` into the gradient tensors.
fn d_e_accum_grads(
    set_a: &Tensor,
    set_b: &Tensor,
    scale: f64,
    grad_a: &mut Tensor,
    grad_b: &mut Tensor,
) -> f64 {
    let (ma, mb) = (set_mean(set_a), set_mean(set_b));
    let dist = euclid(&ma, &mb);
    if dist <= LOG_CLAMP {
        return dist;
    }
    let ca = scale / (dist * set_a.rows() as f64);
    let cb = scale / (dist * set_b.rows() as f64);
    for i in 0..set_a.rows() {
        for (g, (&u, &v)) in grad_a.row_mut(i).iter_mut().zip(ma.iter().zip(&mb)) {
            *g += ca * (u - v);
        }
    }
    for j in 0..set_b.rows() {
        for (g, (&u, &v)) in grad_b.row_mut(j).iter_mut().zip(ma.iter().zip(&mb)) {
            *g -= cb * (u - v);
        }
    }
    dist
}

/// As [`d_e`], also returning gradients w.r.t. both point sets.
pub fn d_e_with_grads(set_a: &Tensor, set_b: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    check_nonempty(set_a, "d_e")?;
    check_nonempty(set_b, "d_e")?;
    let mut grad_a = Tensor::zeros(set_a.shape().to_vec());
    let mut grad_b = Tensor::zeros(set_b.shape().to_vec());
    let v = d_e_accum_grads(set_a, set_b, 1.0, &mut grad_a, &mut grad_b);
    Ok((v, grad_a, grad_b))
}

/// As [`d_h`], also returning gradients w.r.t. both point sets.
pub fn d_h_with_grads(set_a: &Tensor, set_b: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    check_nonempty(set_a, "d_h")?;
    check_nonempty(set_b, "d_h")?;
    let mut grad_a = Tensor::zeros(set_a.shape().to_vec());
    let mut grad_b = Tensor::zeros(set_b.shape().to_vec());
    let v = d_h_accum_grads(set_a, set_b, 1.0, &mut grad_a, &mut grad_b);
    Ok((v, grad_a, grad_b))
}

/// Average Hausdorff distance with an L2 norm: each point's distance to its
/// nearest neighbor in the other set, averaged per side and halved.
pub fn d_h(set_a: &Tensor, set_b: &Tensor) -> Result<f64> {
    check_nonempty(set_a, "d_h")?;
    check_nonempty(set_b, "d_h")?;
    Ok(d_h_directed(set_a, set_b) / (2.0 * set_a.rows() as f64)
        + d_h_directed(set_b, set_a) / (2.0 * set_b.rows() as f64))
}

fn d_h_directed(from: &Tensor, to: &Tensor) -> f64 {
    let mut total = 0.0;
    for row in from.iter_rows() {
        let mut best = f64::INFINITY;
        for other in to.iter_rows() {
            let d = euclid(row, other);
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total
}

/// Accumulate `scale · ∂d_h/∂rows`. Ties pick the first nearest neighbor in
/// stable order; coincident points contribute zero gradient.
fn d_h_accum_grads(
    set_a: &Tensor,
    set_b: &Tensor,
    scale: f64,
    grad_a: &mut Tensor,
    grad_b: &mut Tensor,
) -> f64 {
    d_h_directed_grads(set_a, set_b, scale, grad_a, grad_b)
        + d_h_directed_grads(set_b, set_a, scale, grad_b, grad_a)
}

fn d_h_directed_grads(
    from: &Tensor,
    to: &Tensor,
    scale: f64,
    grad_from: &mut Tensor,
    grad_to: &mut Tensor,
) -> f64 {
    let half = scale / (2.0 * from.rows() as f64);
    let mut side = 0.0;
    for i in 0..from.rows() {
        let row = from.row(i);
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for (j, other) in to.iter_rows().enumerate() {
            let d = euclid(row, other);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        side += best;
        if best > LOG_CLAMP {
            let c = half / best;
            let nearest = to.row(best_j).to_vec();
            for (k, (rv, ov)) in row.iter().zip(&nearest).enumerate() {
                let u = c * (rv - ov);
                grad_from.row_mut(i)[k] += u;
                grad_to.row_mut(best_j)[k] -= u;
            }
        }
    }
    side / (2.0 * from.rows() as f64)
}

// ---------------------------------------------------------------------------
// Inter-class separation
// ---------------------------------------------------------------------------

/// Inter-class separation over the per-class partitions of the confident
/// target set and the source set.
///
/// `target_by_class` is keyed by the confident-target label-index set; every
/// one of those labels must also be a key of `source_by_class` (entries may
/// be empty row-matrices, in which case pairs touching them are skipped).
/// Returns 0 when fewer than two target classes are present.
pub fn inter_loss(
    source_by_class: &ClassSets,
    target_by_class: &ClassSets,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    Ok(inter_loss_with_grads(source_by_class, target_by_class, alpha, beta)?.0)
}

/// As [`inter_loss`], also returning per-class gradient tensors keyed like
/// the inputs.
pub fn inter_loss_with_grads(
    source_by_class: &ClassSets,
    target_by_class: &ClassSets,
    alpha: f64,
    beta: f64,
) -> Result<(f64, ClassSets, ClassSets)> {
    for k in target_by_class.keys() {
        if !source_by_class.contains_key(k) {
            return Err(Error::Domain(format!(
                "target class {k} missing from source partition"
            )));
        }
        check_nonempty(&target_by_class[k], "inter_loss target class")?;
    }
    let mut grad_s: ClassSets = source_by_class
        .iter()
        .map(|(k, t)| (*k, Tensor::zeros(t.shape().to_vec())))
        .collect();
    let mut grad_t: ClassSets = target_by_class
        .iter()
        .map(|(k, t)| (*k, Tensor::zeros(t.shape().to_vec())))
        .collect();

    let k_tau = target_by_class.len();
    if k_tau < 2 {
        return Ok((0.0, grad_s, grad_t));
    }
    let norm = 1.0 / (k_tau as f64 * (k_tau as f64 - 1.0));
    let labels: Vec<usize> = target_by_class.keys().copied().collect();

    let mut within = 0.0;
    let mut cross = 0.0;
    for &k in &labels {
        for &k2 in &labels {
            if k == k2 {
                continue;
            }
            // Target-target pair.
            {
                let (a, b) = (&target_by_class[&k], &target_by_class[&k2]);
                // Split-borrow the two gradient entries via a temporary take.
                let mut ga = grad_t.remove(&k).expect("key present");
                let mut gb = grad_t.remove(&k2).expect("key present");
                within += d_e_accum_grads(a, b, alpha * norm, &mut ga, &mut gb);
                within += d_h_accum_grads(a, b, alpha * norm, &mut ga, &mut gb);
                grad_t.insert(k, ga);
                grad_t.insert(k2, gb);
            }
            // Source-target pair; skip when the source side is empty.
            let src = &source_by_class[&k];
            if src.rows() > 0 {
                let tgt = &target_by_class[&k2];
                let mut ga = grad_s.remove(&k).expect("key present");
                let mut gb = grad_t.remove(&k2).expect("key present");
                cross += d_e_accum_grads(src, tgt, beta * norm, &mut ga, &mut gb);
                cross += d_h_accum_grads(src, tgt, beta * norm, &mut ga, &mut gb);
                grad_s.insert(k, ga);
                grad_t.insert(k2, gb);
            }
        }
    }
    Ok((alpha * norm * within + beta * norm * cross, grad_s, grad_t))
}

// ---------------------------------------------------------------------------
// Intra-class compactness
// ---------------------------------------------------------------------------

/// Intra-class compactness: mean pairwise distance within each merged class
/// set, averaged over all `K_s` classes (absent or singleton classes
/// contribute 0).
pub fn intra_loss(merged_by_class: &ClassSets, k_s: usize) -> Result<f64> {
    Ok(intra_loss_with_grads(merged_by_class, k_s)?.0)
}

/// As [`intra_loss`], also returning per-class gradient tensors.
pub fn intra_loss_with_grads(merged_by_class: &ClassSets, k_s: usize) -> Result<(f64, ClassSets)> {
    if k_s == 0 {
        return Err(Error::Domain("intra_loss needs K_s ≥ 1".into()));
    }
    let mut grads: ClassSets = merged_by_class
        .iter()
        .map(|(k, t)| (*k, Tensor::zeros(t.shape().to_vec())))
        .collect();
    let mut total = 0.0;
    for (k, set) in merged_by_class {
        let n = set.rows();
        if n < 2 {
            continue;
        }
        let norm = 1.0 / (k_s as f64 * (n as f64) * (n as f64 - 1.0));
        let grad = grads.get_mut(k).expect("key present");
        let mut class_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclid(set.row(i), set.row(j));
                class_sum += 2.0 * d; // ordered pairs count (i,j) and (j,i)
                if d > LOG_CLAMP {
                    let c = 2.0 * norm / d;
                    for m in 0..set.cols() {
                        let u = c * (set.row(i)[m] - set.row(j)[m]);
                        grad.row_mut(i)[m] += u;
                        grad.row_mut(j)[m] -= u;
                    }
                }
            }
        }
        total += class_sum * norm;
    }
    Ok((total, grads))
}

// ---------------------------------------------------------------------------
// Entropy minimization
// ---------------------------------------------------------------------------

/// Mean prediction entropy over a batch: `−(1/n) Σ_j Σ_k p_jk log p_jk`.
pub fn ent_loss(target_preds: &Tensor) -> Result<f64> {
    Ok(ent_loss_with_grads(target_preds)?.0)
}

/// As [`ent_loss`], also returning the gradient w.r.t. the prediction rows.
pub fn ent_loss_with_grads(target_preds: &Tensor) -> Result<(f64, Tensor)> {
    if target_preds.rows() == 0 {
        return Err(Error::Domain("empty batch in ent_loss".into()));
    }
    let n = target_preds.rows() as f64;
    let mut grad = Tensor::zeros(target_preds.shape().to_vec());
    let mut total = 0.0;
    for i in 0..target_preds.rows() {
        for (g, &p) in grad.row_mut(i).iter_mut().zip(target_preds.row(i)) {
            if p > 0.0 {
                let lp = p.max(LOG_CLAMP).ln();
                total -= p * lp;
                *g = -(lp + 1.0) / n;
            }
        }
    }
    Ok((total / n, grad))
}

// ---------------------------------------------------------------------------
// Overall objective
// ---------------------------------------------------------------------------

/// Values of the five objective terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub ce: f64,
    pub comp: f64,
    pub inter: f64,
    pub intra: f64,
    pub ent: f64,
}

/// Combine term values: `L_ce + η·L_comp − L_inter + δ·L_intra + L_ent`.
/// The separation term enters negatively — it is maximized.
pub fn total_objective(terms: &TermValues, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("ce", terms.ce),
        ("comp", terms.comp),
        ("inter", terms.inter),
        ("intra", terms.intra),
        ("ent", terms.ent),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteTerm { term: name.into() });
        }
    }
    Ok(terms.ce + weights.eta * terms.comp - terms.inter + weights.delta * terms.intra + terms.ent)
}
