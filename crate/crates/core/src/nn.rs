//! Dense encoder/classifier stack with hand-derived gradients.
//!
//! The encoder is two fully-connected layers with ReLU activations and
//! inverted dropout after each activation; the classifier is a two-layer
//! dense network producing logits. Forward passes in train mode record a
//! cache so the backward pass can replay activations and dropout masks.
//! Quantities produced by pseudo-labeling (prototypes, thresholds, soft
//! labels) are constants with respect to differentiation; gradients flow
//! only through these networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One dense layer, `y = W x + b`, weights row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseLayer {
    /// He-style init: symmetric uniform scaled by fan-in, zero biases.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let values: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        DenseLayer {
            w: Tensor::new(vec![out_dim, in_dim], values).expect("finite init"),
            b: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    /// `x` is `B×in`, result is `B×out`.
    fn forward(&self, x: &Tensor) -> Tensor {
        let (b, out_dim) = (x.rows(), self.out_dim());
        let mut y = Tensor::zeros(vec![b, out_dim]);
        for i in 0..b {
            let xi = x.row(i);
            let yi = y.row_mut(i);
            for (o, yo) in yi.iter_mut().enumerate() {
                let wrow = self.w.row(o);
                let mut acc = self.b.values()[o];
                for (xv, wv) in xi.iter().zip(wrow) {
                    acc += xv * wv;
                }
                *yo = acc;
            }
        }
        y
    }

    /// Gradients of a linear layer given upstream `delta` (`B×out`) and the
    /// layer input (`B×in`); also returns the gradient w.r.t. the input.
    fn backward(&self, delta: &Tensor, input: &Tensor) -> (DenseLayer, Tensor) {
        let (b, out_dim, in_dim) = (input.rows(), self.out_dim(), self.in_dim());
        let mut dw = Tensor::zeros(vec![out_dim, in_dim]);
        let mut db = Tensor::zeros(vec![out_dim]);
        let mut dx = Tensor::zeros(vec![b, in_dim]);
        for s in 0..b {
            let drow = delta.row(s);
            let xrow = input.row(s);
            for (o, &d) in drow.iter().enumerate().take(out_dim) {
                if d == 0.0 {
                    continue;
                }
                db.values_mut()[o] += d;
                let wrow_start = o * in_dim;
                let dwrow = &mut dw.values_mut()[wrow_start..wrow_start + in_dim];
                for (dwv, xv) in dwrow.iter_mut().zip(xrow) {
                    *dwv += d * xv;
                }
                let wrow = self.w.row(o);
                for (dxv, wv) in dx.row_mut(s).iter_mut().zip(wrow) {
                    *dxv += d * wv;
                }
            }
        }
        (DenseLayer { w: dw, b: db }, dx)
    }
}

/// Forward mode: eval is deterministic, train draws dropout masks from the
/// given seed using the inverted-dropout convention.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Encoder parameters: FC → ReLU → dropout → FC, with a linear latent
/// output so cosine similarities between latents can use the full [−1, 1]
/// range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
    pub dropout_p: f64,
}

/// Activation/mask cache from an encoder forward pass.
pub struct EncoderCache {
    x: Tensor,
    a1: Tensor,            // post-ReLU layer 1, pre-dropout
    h1: Tensor,            // post-dropout layer 1 (input to layer 2)
    mask1: Option<Tensor>, // scaled dropout mask, None in eval mode
}

impl EncoderParams {
    pub fn init(d_x: usize, hidden: usize, d_z: usize, dropout_p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {dropout_p} must be in [0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(EncoderParams {
            l1: DenseLayer::init(d_x, hidden, &mut rng),
            l2: DenseLayer::init(hidden, d_z, &mut rng),
            dropout_p,
        })
    }

    pub fn d_x(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn d_z(&self) -> usize {
        self.l2.out_dim()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.d_x() {
            return Err(Error::Dim(format!(
                "encoder input shape {:?}, expected [*, {}]",
                x.shape(),
                self.d_x()
            )));
        }
        if !x.is_finite() {
            return Err(Error::Validity("non-finite encoder input".into()));
        }
        Ok(())
    }

    /// Forward pass returning latents `B×d_z` plus the cache for backward.
    pub fn forward(&self, x: &Tensor, mode: ForwardMode) -> Result<(Tensor, EncoderCache)> {
        self.check_input(x)?;
        let mut mask_rng = match mode {
            ForwardMode::Eval => None,
            ForwardMode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
        };

        let mut a1 = self.l1.forward(x);
        relu_inplace(&mut a1);
        let (h1, mask1) = self.apply_dropout(&a1, mask_rng.as_mut());
        let z = self.l2.forward(&h1);

        let cache = EncoderCache {
            x: x.clone(),
            a1,
            h1,
            mask1,
        };
        Ok((z, cache))
    }

    /// Deterministic eval-mode forward without cache bookkeeping.
    pub fn encode_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut a1 = self.l1.forward(x);
        relu_inplace(&mut a1);
        Ok(self.l2.forward(&a1))
    }

    fn apply_dropout(&self, a: &Tensor, rng: Option<&mut ChaCha8Rng>) -> (Tensor, Option<Tensor>) {
        match rng {
            None => (a.clone(), None),
            Some(rng) => {
                let keep = 1.0 - self.dropout_p;
                let scale = 1.0 / keep;
                let mut mask = Tensor::zeros(a.shape().to_vec());
                for m in mask.values_mut() {
                    *m = if rng.gen::<f64>() < keep { scale } else { 0.0 };
                }
                let mut out = a.clone();
                for (o, m) in out.values_mut().iter_mut().zip(mask.values()) {
                    *o *= *m;
                }
                (out, Some(mask))
            }
        }
    }

    /// Backprop `d_z` (gradient w.r.t. the latent output) to layer gradients.
    pub fn backward(&self, d_z: &Tensor, cache: &EncoderCache) -> EncoderGrads {
        let (l2_grads, dh1) = self.l2.backward(d_z, &cache.h1);

        let mut g1 = dh1;
        if let Some(m) = &cache.mask1 {
            for (g, mv) in g1.values_mut().iter_mut().zip(m.values()) {
                *g *= *mv;
            }
        }
        relu_backward_inplace(&mut g1, &cache.a1);
        let (l1_grads, _dx) = self.l1.backward(&g1, &cache.x);

        EncoderGrads {
            l1: l1_grads,
            l2: l2_grads,
        }
    }
}

/// Classifier parameters: FC+ReLU hidden layer, then FC to `K_s` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
}

pub struct ClassifierCache {
    z: Tensor,
    a1: Tensor, // post-ReLU hidden
}

impl ClassifierParams {
    pub fn init(d_z: usize, hidden: usize, k_s: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClassifierParams {
            l1: DenseLayer::init(d_z, hidden, &mut rng),
            l2: DenseLayer::init(hidden, k_s, &mut rng),
        }
    }

    pub fn d_z(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn k_s(&self) -> usize {
        self.l2.out_dim()
    }

    /// Logits `B×K_s`; no softmax applied here.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, ClassifierCache)> {
        if z.shape().len() != 2 || z.cols() != self.d_z() {
            return Err(Error::Dim(format!(
                "classifier input shape {:?}, expected [*, {}]",
                z.shape(),
                self.d_z()
            )));
        }
        if !z.is_finite() {
            return Err(Error::Validity("non-finite classifier input".into()));
        }
        let mut a1 = self.l1.forward(z);
        relu_inplace(&mut a1);
        let logits = self.l2.forward(&a1);
        Ok((logits, ClassifierCache { z: z.clone(), a1 }))
    }

    /// Backprop logits gradient to layer gradients plus the gradient w.r.t.
    /// the latent input (which continues into the encoder).
    pub fn backward(
        &self,
        d_logits: &Tensor,
        cache: &ClassifierCache,
    ) -> (ClassifierGrads, Tensor) {
        let (l2_grads, da1) = self.l2.backward(d_logits, &cache.a1);
        let mut g1 = da1;
        relu_backward_inplace(&mut g1, &cache.a1);
        let (l1_grads, dz) = self.l1.backward(&g1, &cache.z);
        (
            ClassifierGrads {
                l1: l1_grads,
                l2: l2_grads,
            },
            dz,
        )
    }
}

fn relu_inplace(t: &mut Tensor) {
    for v in t.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient wherever the post-ReLU activation was zero.
fn relu_backward_inplace(grad: &mut Tensor, post_relu: &Tensor) {
    for (g, a) in grad.values_mut().iter_mut().zip(post_relu.values()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Row-wise softmax with max-subtraction for stability.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if !logits.is_finite() {
        return Err(Error::Validity("non-finite logits".into()));
    }
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Backprop through row-wise softmax: given probabilities `p` and upstream
/// gradient `dp`, returns `d_logits` with rows `p ⊙ (dp − ⟨p, dp⟩)`.
pub fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    debug_assert_eq!(probs.shape(), dprobs.shape());
    let mut out = Tensor::zeros(probs.shape().to_vec());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let dp = dprobs.row(i);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (o, (pv, dpv)) in out.row_mut(i).iter_mut().zip(p.iter().zip(dp)) {
            *o = pv * (dpv - dot);
        }
    }
    out
}

/// All trainable parameters of the model `h = C ∘ E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
}

/// Network widths; `d_x` and `k_s` come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub d_x: usize,
    pub enc_hidden: usize,
    pub d_z: usize,
    pub clf_hidden: usize,
    pub k_s: usize,
}

impl NetShape {
    /// Hidden/latent widths from the reference architecture.
    pub fn with_defaults(d_x: usize, k_s: usize) -> Self {
        NetShape {
            d_x,
            enc_hidden: 1024,
            d_z: 512,
            clf_hidden: 512,
            k_s,
        }
    }
}

impl ModelParams {
    pub fn init(shape: NetShape, dropout_p: f64, seed: u64) -> Result<Self> {
        let enc_seed = derive_seed(seed, "encoder-init", &[]);
        let clf_seed = derive_seed(seed, "classifier-init", &[]);
        Ok(ModelParams {
            encoder: EncoderParams::init(
                shape.d_x,
                shape.enc_hidden,
                shape.d_z,
                dropout_p,
                enc_seed,
            )?,
            classifier: ClassifierParams::init(shape.d_z, shape.clf_hidden, shape.k_s, clf_seed),
        })
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            d_x: self.encoder.d_x(),
            enc_hidden: self.encoder.l1.out_dim(),
            d_z: self.encoder.d_z(),
            clf_hidden: self.classifier.l1.out_dim(),
            k_s: self.classifier.k_s(),
        }
    }

    /// Parameter tensors in canonical order (matches [`ModelGrads::tensors`]).
    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.encoder.l1.w,
            &self.encoder.l1.b,
            &self.encoder.l2.w,
            &self.encoder.l2.b,
            &self.classifier.l1.w,
            &self.classifier.l1.b,
            &self.classifier.l2.w,
            &self.classifier.l2.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let ModelParams {
            encoder,
            classifier,
        } = self;
        vec![
            &mut encoder.l1.w,
            &mut encoder.l1.b,
            &mut encoder.l2.w,
            &mut encoder.l2.b,
            &mut classifier.l1.w,
            &mut classifier.l1.b,
            &mut classifier.l2.w,
            &mut classifier.l2.b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters as one flat vector, canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.values());
        }
        out
    }

    /// Write a flat vector (as produced by [`Self::flatten`]) back in place.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dim(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// FNV-1a hash of the exact bit patterns of all parameters.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in self.tensors() {
            for v in t.values() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Gradient tensors mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub enc1: DenseLayer,
    pub enc2: DenseLayer,
    pub clf1: DenseLayer,
    pub clf2: DenseLayer,
}

/// Encoder-only gradients from [`EncoderParams::backward`].
pub struct EncoderGrads {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
}

/// Classifier-only gradients from [`ClassifierParams::backward`].
pub struct ClassifierGrads {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
}

impl ModelGrads {
    pub fn zeros_for(params: &ModelParams) -> Self {
        let zl = |l: &DenseLayer| DenseLayer {
            w: Tensor::zeros(l.w.shape().to_vec()),
            b: Tensor::zeros(l.b.shape().to_vec()),
        };
        ModelGrads {
            enc1: zl(&params.encoder.l1),
            enc2: zl(&params.encoder.l2),
            clf1: zl(&params.classifier.l1),
            clf2: zl(&params.classifier.l2),
        }
    }

    /// Gradient tensors in the same canonical order as [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.enc1.w,
            &self.enc1.b,
            &self.enc2.w,
            &self.enc2.b,
            &self.clf1.w,
            &self.clf1.b,
            &self.clf2.w,
            &self.clf2.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let ModelGrads {
            enc1,
            enc2,
            clf1,
            clf2,
        } = self;
        vec![
            &mut enc1.w,
            &mut enc1.b,
            &mut enc2.w,
            &mut enc2.b,
            &mut clf1.w,
            &mut clf1.b,
            &mut clf2.w,
            &mut clf2.b,
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in self.tensors() {
            out.extend_from_slice(t.values());
        }
        out
    }

    /// `self += c * other`, elementwise over all tensors.
    pub fn add_scaled(&mut self, other: &ModelGrads, c: f64) {
        for (mine, theirs) in self.tensors_mut().into_iter().zip(other.tensors()) {
            mine.add_scaled(theirs, c);
        }
    }

    pub fn accumulate_encoder(&mut self, grads: &EncoderGrads, c: f64) {
        self.enc1.w.add_scaled(&grads.l1.w, c);
        self.enc1.b.add_scaled(&grads.l1.b, c);
        self.enc2.w.add_scaled(&grads.l2.w, c);
        self.enc2.b.add_scaled(&grads.l2.b, c);
    }

    pub fn accumulate_classifier(&mut self, grads: &ClassifierGrads, c: f64) {
        self.clf1.w.add_scaled(&grads.l1.w, c);
        self.clf1.b.add_scaled(&grads.l1.b, c);
        self.clf2.w.add_scaled(&grads.l2.w, c);
        self.clf2.b.add_scaled(&grads.l2.b, c);
    }
}

/// Deterministic seed derivation for independent RNG streams.
pub fn derive_seed(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut mix = |bytes: &[u8]| {
        for &byte in bytes {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    mix(&base.to_le_bytes());
    mix(tag.as_bytes());
    for p in parts {
        mix(&p.to_le_bytes());
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_encoder() -> EncoderParams {
        EncoderParams::init(8, 1024, 512, 0.1, 7).unwrap()
    }

    #[test]
    fn encoder_output_shape_matches_reference_sizes() {
        let enc = toy_encoder();
        let x = Tensor::zeros(vec![4, 8]);
        let (z, _) = enc.forward(&x, ForwardMode::Eval).unwrap();
        assert_eq!(z.shape(), &[4, 512]);
    }

    #[test]
    fn encoder_zero_params_zero_output() {
        let mut enc = EncoderParams::init(3, 5, 2, 0.1, 1).unwrap();
        enc.l1.w.scale(0.0);
        enc.l2.w.scale(0.0);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let (z, _) = enc.forward(&x, ForwardMode::Eval).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let enc = EncoderParams::init(6, 10, 4, 0.1, 3).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -1.0, 0.5, 2.0, -0.2, 0.9]]).unwrap();
        let (z1, _) = enc.forward(&x, ForwardMode::Eval).unwrap();
        let (z2, _) = enc.forward(&x, ForwardMode::Eval).unwrap();
        assert_eq!(z1.values(), z2.values());
    }

    #[test]
    fn train_forward_same_seed_same_masks() {
        let enc = EncoderParams::init(6, 10, 4, 0.3, 3).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, 1.0, 0.5, 2.0, 0.2, 0.9]]).unwrap();
        let mode = ForwardMode::Train { dropout_seed: 42 };
        let (z1, _) = enc.forward(&x, mode).unwrap();
        let (z2, _) = enc.forward(&x, mode).unwrap();
        assert_eq!(z1.values(), z2.values());
        let (z3, _) = enc
            .forward(&x, ForwardMode::Train { dropout_seed: 43 })
            .unwrap();
        assert_ne!(z1.values(), z3.values());
    }

    #[test]
    fn encoder_rejects_bad_input() {
        let enc = EncoderParams::init(6, 10, 4, 0.1, 3).unwrap();
        let narrow = Tensor::zeros(vec![2, 5]);
        assert!(matches!(
            enc.forward(&narrow, ForwardMode::Eval),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn classifier_zero_weights_output_is_bias() {
        let mut clf = ClassifierParams::init(4, 3, 2, 9);
        clf.l1.w.scale(0.0);
        clf.l2.w.scale(0.0);
        clf.l2.b.values_mut().copy_from_slice(&[1.5, -0.5]);
        let z = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4]]).unwrap();
        let (logits, _) = clf.forward(&z).unwrap();
        assert_eq!(logits.row(0), &[1.5, -0.5]);
        assert_eq!(logits.row(1), &[1.5, -0.5]);
    }

    #[test]
    fn classifier_logit_width_is_k_s() {
        let clf = ClassifierParams::init(512, 512, 31, 11);
        let z = Tensor::zeros(vec![3, 512]);
        let (logits, _) = clf.forward(&z).unwrap();
        assert_eq!(logits.shape(), &[3, 31]);
    }

    // Independent hand evaluation of a 2×2 two-layer forward pass:
    //   z = [1, 2], W1 = [[1, 0], [0.5, -1]], b1 = [0, 0.25]
    //   u1 = [1, -1.75] → a1 = [1, 0]
    //   W2 = [[2, 3], [-1, 1]], b2 = [0.5, 0]
    //   logits = [2·1 + 3·0 + 0.5, -1·1 + 1·0] = [2.5, -1]
    #[test]
    fn classifier_single_sample_hand_forward() {
        let clf = ClassifierParams {
            l1: DenseLayer {
                w: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.5, -1.0]).unwrap(),
                b: Tensor::new(vec![2], vec![0.0, 0.25]).unwrap(),
            },
            l2: DenseLayer {
                w: Tensor::new(vec![2, 2], vec![2.0, 3.0, -1.0, 1.0]).unwrap(),
                b: Tensor::new(vec![2], vec![0.5, 0.0]).unwrap(),
            },
        };
        let z = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (logits, _) = clf.forward(&z).unwrap();
        assert!((logits.row(0)[0] - 2.5).abs() < 1e-15);
        assert!((logits.row(0)[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let t = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let p = softmax(&t).unwrap();
        for &v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    // e⁰/(e⁰+3) = 1/4 and 3/(1+3) = 3/4.
    #[test]
    fn softmax_hand_value() {
        let t = Tensor::from_rows(&[vec![0.0, 3.0f64.ln()]]).unwrap();
        let p = softmax(&t).unwrap();
        assert!((p.row(0)[0] - 0.25).abs() < 1e-12);
        assert!((p.row(0)[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let shifted: Vec<f64> = logits.iter().map(|v| v + 13.7).collect();
            let p = softmax(&Tensor::from_rows(&[logits]).unwrap()).unwrap();
            let q = softmax(&Tensor::from_rows(&[shifted]).unwrap()).unwrap();
            let sum: f64 = p.row(0).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (a, b) in p.row(0).iter().zip(q.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    // Averaging train-mode outputs over many mask draws should approach the
    // eval-mode output: the dropout site feeds a linear output layer, so the
    // inverted-dropout expectation passes through exactly.
    #[test]
    fn inverted_dropout_matches_eval_in_expectation() {
        let enc = EncoderParams::init(3, 4, 2, 0.25, 17).unwrap();
        let x = Tensor::from_rows(&[vec![0.5, 1.0, 1.5]]).unwrap();
        let eval_z = enc.encode_eval(&x).unwrap();

        let draws = 20_000;
        let mut sums = [0.0; 2];
        let mut sq_sums = [0.0; 2];
        for s in 0..draws {
            let (z, _) = enc
                .forward(
                    &x,
                    ForwardMode::Train {
                        dropout_seed: s as u64,
                    },
                )
                .unwrap();
            for (k, &v) in z.row(0).iter().enumerate() {
                sums[k] += v;
                sq_sums[k] += v * v;
            }
        }
        for k in 0..2 {
            let mean = sums[k] / draws as f64;
            let var = (sq_sums[k] / draws as f64 - mean * mean).max(0.0);
            let se = (var / draws as f64).sqrt();
            let diff = (mean - eval_z.row(0)[k]).abs();
            assert!(
                diff <= 3.0 * se.max(1e-12),
                "coordinate {k}: |{mean} - {}| = {diff} > 3·{se}",
                eval_z.row(0)[k]
            );
        }
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let shape = NetShape {
            d_x: 5,
            enc_hidden: 7,
            d_z: 4,
            clf_hidden: 6,
            k_s: 3,
        };
        let params = ModelParams::init(shape, 0.1, 21).unwrap();
        let flat = params.flatten();
        let mut other = ModelParams::init(shape, 0.1, 99).unwrap();
        assert_ne!(other.flatten(), flat);
        other.unflatten(&flat).unwrap();
        assert_eq!(other.flatten(), flat);
        assert_eq!(other.content_hash(), params.content_hash());
    }

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(1, "shuffle", &[0]);
        let b = derive_seed(1, "shuffle", &[1]);
        let c = derive_seed(1, "dropout", &[0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, "shuffle", &[0]));
    }
}
