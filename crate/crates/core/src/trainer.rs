//! Training orchestration: per-epoch pseudo-label refresh, minibatch
//! optimization of the combined objective, evaluation, parameter sweeps,
//! and the ablation harness.
//!
//! One run is sequential and fully determined by its config. Sweep and
//! ablation drivers may run their constituent independent runs in parallel;
//! each run owns all of its state and results are merged in input order.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, OptimizerState};
use crate::data::{minibatches, PdaDatasetPair};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, TermValues};
use crate::nn::{derive_seed, softmax, ModelParams, NetShape};
use crate::objective::{evaluate_step, ConfBatch, StepBatches, StepMode, TermMask};
use crate::pseudo_label::{
    compute_class_means, ema_update, mean_confidence, prototype_predict, select_confident,
    ConfidentSubset, Prototypes, ThresholdState,
};
use crate::tensor::{argmax, Tensor};

/// Component switches for the ablation study.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSwitches {
    /// Drop the complement term by forcing `η = 0`.
    pub disable_comp: bool,
    /// Drop separation and compactness by forcing `α = β = δ = 0`.
    pub disable_intra_inter: bool,
    /// Replace the confident subset with all target samples, pseudo-labeled
    /// by the network classifier instead of the prototype classifier.
    pub disable_rpts: bool,
}

/// Full training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: AblationSwitches,
    pub enc_hidden: usize,
    pub d_z: usize,
    pub clf_hidden: usize,
    pub dropout_p: f64,
    /// Baseline arm: source cross-entropy only, no target terms.
    pub source_only: bool,
    /// Epochs during which the confident subset is forced empty.
    pub warmup_epochs: usize,
    /// Optional source-only warm-start phase before adaptation terms engage.
    pub source_pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            ablation: AblationSwitches::default(),
            enc_hidden: 1024,
            d_z: 512,
            clf_hidden: 512,
            dropout_p: 0.1,
            source_only: false,
            warmup_epochs: 1,
            source_pretrain_epochs: 0,
        }
    }
}

impl TrainConfig {
    /// Small network widths for desk-scale synthetic runs.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            enc_hidden: 64,
            d_z: 32,
            clf_hidden: 32,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and ≥ 0",
                self.learning_rate
            )));
        }
        if self.enc_hidden == 0 || self.d_z == 0 || self.clf_hidden == 0 {
            return Err(Error::Config("network widths must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} must be in [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Loss weights with the ablation switches applied.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.ablation.disable_comp {
            w.eta = 0.0;
        }
        if self.ablation.disable_intra_inter {
            w.alpha = 0.0;
            w.beta = 0.0;
            w.delta = 0.0;
        }
        w
    }

    fn net_shape(&self, d_x: usize, k_s: usize) -> NetShape {
        NetShape {
            d_x,
            enc_hidden: self.enc_hidden,
            d_z: self.d_z,
            clf_hidden: self.clf_hidden,
            k_s,
        }
    }
}

/// Per-epoch record: mean loss terms over the epoch's steps, pseudo-label
/// state, accuracy, and wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_comp: f64,
    pub l_inter: f64,
    pub l_intra: f64,
    pub l_ent: f64,
    pub total: f64,
    pub n_tau: usize,
    /// Target accuracy against the hidden evaluation labels, when present.
    pub accuracy: Option<f64>,
    pub tau: Vec<f64>,
    pub wall_ms: u64,
}

/// Final trained model with its pseudo-label state and config snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub prototypes: Prototypes,
    pub config: TrainConfig,
}

/// Snapshot of one epoch's pseudo-label refresh, for post-hoc auditing.
#[derive(Debug, Clone)]
pub struct RefreshAudit {
    pub epoch: usize,
    pub warmup: bool,
    pub tau: Vec<f64>,
    /// Soft pseudo-labels over the full target set.
    pub p_hat: Option<Tensor>,
    /// Indices admitted into the confident subset.
    pub selected: Vec<usize>,
    /// Centroid matrix snapshot after the EMA update.
    pub prototype_centroids: Option<Tensor>,
}

pub struct TrainOutput {
    pub model: TrainedModel,
    pub reports: Vec<EpochReport>,
    pub initial_param_hash: u64,
    /// Populated by [`train_with_audit`] only.
    pub audits: Vec<RefreshAudit>,
}

/// Run the full training procedure.
pub fn train(config: &TrainConfig, data: &PdaDatasetPair) -> Result<TrainOutput> {
    train_impl(config, data, false)
}

/// As [`train`], also recording each epoch's pseudo-label refresh state.
pub fn train_with_audit(config: &TrainConfig, data: &PdaDatasetPair) -> Result<TrainOutput> {
    train_impl(config, data, true)
}

fn train_impl(config: &TrainConfig, data: &PdaDatasetPair, audit: bool) -> Result<TrainOutput> {
    config.validate()?;
    let k_s = data.k_s();
    let shape = config.net_shape(data.d_x(), k_s);
    let mut params = ModelParams::init(shape, config.dropout_p, config.seed)?;
    let initial_param_hash = params.content_hash();
    let mut opt = OptimizerState::new(&params, config.learning_rate);

    let mut prototypes = Prototypes::new(k_s, config.d_z);
    let mut thresholds = ThresholdState::new(k_s, config.weights.zeta);
    let weights = config.effective_weights();
    let warm_until = config.warmup_epochs.max(config.source_pretrain_epochs);

    let mut reports = Vec::with_capacity(config.epochs);
    let mut audits = Vec::new();

    for epoch in 1..=config.epochs {
        let started = Instant::now();

        // (1) Eval-mode full pass: refresh prototypes, soft pseudo-labels,
        // thresholds, and the confident subset.
        let in_warmup = epoch <= warm_until;
        let refresh = if config.source_only {
            Refresh::empty(k_s)
        } else {
            refresh_pseudo_labels(
                config,
                data,
                &params,
                &mut prototypes,
                &mut thresholds,
                in_warmup,
            )
            .map_err(|e| diverged(e, epoch))?
        };
        if audit {
            audits.push(RefreshAudit {
                epoch,
                warmup: in_warmup,
                tau: refresh.tau.clone(),
                p_hat: refresh.p_hat.clone(),
                selected: refresh.subset.indices.clone(),
                prototype_centroids: if prototypes.all_initialized() {
                    Some(prototypes.centroids().clone())
                } else {
                    None
                },
            });
        }

        // Epoch snapshot of the confident subset's tensors.
        let conf_x = data.target_features().select_rows(&refresh.subset.indices);
        let conf_soft = Tensor::from_rows(
            &refresh
                .subset
                .soft_labels
                .iter()
                .map(|p| p.probs().to_vec())
                .collect::<Vec<_>>(),
        )?;
        let conf_labels = refresh.subset.labels.clone();
        let n_tau = refresh.subset.len();

        let mask = if config.source_only || epoch <= config.source_pretrain_epochs {
            TermMask::source_only()
        } else {
            TermMask::all()
        };

        // (2) Minibatch loop over the source partition, with confident and
        // entropy batches cycling alongside.
        let source_batches = minibatches(
            data.n_s(),
            config.batch_size,
            derive_seed(config.seed, "shuffle-source", &[epoch as u64]),
        )?;
        let mut conf_cycler =
            BatchCycler::new(n_tau, config.batch_size, config.seed, "cycle-conf", epoch);
        let mut ent_cycler = BatchCycler::new(
            data.n_t(),
            config.batch_size,
            config.seed,
            "cycle-ent",
            epoch,
        );

        let mut sums = TermValues::default();
        let mut total_sum = 0.0;
        let steps = source_batches.len();

        for (step, src_idx) in source_batches.iter().enumerate() {
            let x_s = data.source_features().select_rows(src_idx);
            let labels_s: Vec<usize> = src_idx.iter().map(|&i| data.source_labels()[i]).collect();
            let mut targets_s = Tensor::zeros(vec![src_idx.len(), k_s]);
            for (row, &l) in labels_s.iter().enumerate() {
                targets_s.row_mut(row)[l] = 1.0;
            }

            let conf_idx = if n_tau > 0 && !config.source_only {
                conf_cycler.next_batch()?
            } else {
                Vec::new()
            };
            let (x_c, soft_c, labels_c);
            let conf_batch = if conf_idx.is_empty() {
                None
            } else {
                x_c = conf_x.select_rows(&conf_idx);
                soft_c = conf_soft.select_rows(&conf_idx);
                labels_c = conf_idx.iter().map(|&i| conf_labels[i]).collect::<Vec<_>>();
                Some(ConfBatch {
                    x: &x_c,
                    soft_labels: &soft_c,
                    labels: &labels_c,
                })
            };

            let ent_idx = if mask.ent {
                ent_cycler.next_batch()?
            } else {
                Vec::new()
            };
            let x_t;
            let ent_x = if ent_idx.is_empty() {
                None
            } else {
                x_t = data.target_features().select_rows(&ent_idx);
                Some(&x_t)
            };

            let mode = StepMode::Train {
                source_seed: derive_seed(config.seed, "dropout", &[epoch as u64, step as u64, 0]),
                conf_seed: derive_seed(config.seed, "dropout", &[epoch as u64, step as u64, 1]),
                ent_seed: derive_seed(config.seed, "dropout", &[epoch as u64, step as u64, 2]),
            };

            let batches = StepBatches {
                source_x: &x_s,
                source_targets: &targets_s,
                source_labels: &labels_s,
                confident: conf_batch,
                ent_x,
            };
            let (out, grads) = evaluate_step(&params, &batches, &weights, &mask, mode, true)
                .map_err(|e| diverged(e, epoch))?;
            if !out.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite total {}", out.total),
                });
            }
            adam_step(&mut params, &grads.expect("grads requested"), &mut opt)?;

            sums.ce += out.terms.ce;
            sums.comp += out.terms.comp;
            sums.inter += out.terms.inter;
            sums.intra += out.terms.intra;
            sums.ent += out.terms.ent;
            total_sum += out.total;
        }

        let accuracy = match data.eval_labels() {
            Some(_) => Some(accuracy_of(&params, data)?),
            None => None,
        };
        let n = steps.max(1) as f64;
        reports.push(EpochReport {
            epoch,
            l_ce: sums.ce / n,
            l_comp: sums.comp / n,
            l_inter: sums.inter / n,
            l_intra: sums.intra / n,
            l_ent: sums.ent / n,
            total: total_sum / n,
            n_tau,
            accuracy,
            tau: refresh.tau,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    Ok(TrainOutput {
        model: TrainedModel {
            params,
            prototypes,
            config: *config,
        },
        reports,
        initial_param_hash,
        audits,
    })
}

/// Output of one epoch's pseudo-label refresh.
struct Refresh {
    subset: ConfidentSubset,
    tau: Vec<f64>,
    p_hat: Option<Tensor>,
}

impl Refresh {
    fn empty(k_s: usize) -> Self {
        Refresh {
            subset: ConfidentSubset::default(),
            tau: vec![1.0; k_s],
            p_hat: None,
        }
    }
}

fn refresh_pseudo_labels(
    config: &TrainConfig,
    data: &PdaDatasetPair,
    params: &ModelParams,
    prototypes: &mut Prototypes,
    thresholds: &mut ThresholdState,
    in_warmup: bool,
) -> Result<Refresh> {
    let z_src = params.encoder.encode_eval(data.source_features())?;
    let z_tgt = params.encoder.encode_eval(data.target_features())?;

    if config.ablation.disable_rpts {
        // Pseudo-labels come from the network classifier itself and every
        // target sample is admitted; the prototype path is never invoked.
        let (logits, _) = params.classifier.forward(&z_tgt)?;
        let p_hat = softmax(&logits)?;
        let k_s = data.k_s();
        let subset = if in_warmup {
            ConfidentSubset::default()
        } else {
            select_confident(&p_hat, &vec![0.0; k_s])?
        };
        return Ok(Refresh {
            subset,
            tau: vec![0.0; k_s],
            p_hat: Some(p_hat),
        });
    }

    let (means, present) = compute_class_means(&z_src, data.source_labels(), data.k_s())?;
    ema_update(prototypes, &means, &present, config.weights.omega)?;

    let (p_hat_t, _) = prototype_predict(&z_tgt, prototypes)?;
    let (p_hat_s, _) = prototype_predict(&z_src, prototypes)?;
    let (p_s, s_mask) = mean_confidence(&p_hat_s)?;
    let (p_t, t_mask) = mean_confidence(&p_hat_t)?;
    thresholds.update(&p_s, &s_mask, &p_t, &t_mask)?;

    let subset = if in_warmup {
        ConfidentSubset::default()
    } else {
        select_confident(&p_hat_t, &thresholds.tau)?
    };
    Ok(Refresh {
        subset,
        tau: thresholds.tau.clone(),
        p_hat: Some(p_hat_t),
    })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFiniteTerm { term } => Error::Diverged {
            epoch,
            reason: format!("non-finite loss term {term}"),
        },
        Error::Validity(msg) => Error::Diverged { epoch, reason: msg },
        other => other,
    }
}

/// Endless stream of seeded minibatches over `0..n`, reshuffled every time
/// the index set is exhausted.
struct BatchCycler {
    n: usize,
    batch_size: usize,
    seed: u64,
    tag: &'static str,
    epoch: usize,
    refill: u64,
    queue: std::collections::VecDeque<Vec<usize>>,
}

impl BatchCycler {
    fn new(n: usize, batch_size: usize, seed: u64, tag: &'static str, epoch: usize) -> Self {
        BatchCycler {
            n,
            batch_size,
            seed,
            tag,
            epoch,
            refill: 0,
            queue: std::collections::VecDeque::new(),
        }
    }

    fn next_batch(&mut self) -> Result<Vec<usize>> {
        if self.n == 0 {
            return Ok(Vec::new());
        }
        if self.queue.is_empty() {
            let batches = minibatches(
                self.n,
                self.batch_size,
                derive_seed(self.seed, self.tag, &[self.epoch as u64, self.refill]),
            )?;
            self.refill += 1;
            self.queue.extend(batches);
        }
        Ok(self.queue.pop_front().expect("refilled"))
    }
}

/// Fraction of target samples whose eval-mode prediction matches the hidden
/// label.
pub fn evaluate(model: &TrainedModel, data: &PdaDatasetPair) -> Result<f64> {
    accuracy_of(&model.params, data)
}

fn accuracy_of(params: &ModelParams, data: &PdaDatasetPair) -> Result<f64> {
    let labels = data
        .eval_labels()
        .ok_or_else(|| Error::Eval("target evaluation labels are missing".into()))?
        .labels();
    let z = params.encoder.encode_eval(data.target_features())?;
    let (logits, _) = params.classifier.forward(&z)?;
    let probs = softmax(&logits)?;
    let correct = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Which loss weight a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    Gamma,
    Eta,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Eta => "eta",
        }
    }
}

/// One independent seeded run per value, all else fixed; returns
/// `(value, final accuracy)` pairs in input order.
pub fn sweep(
    config: &TrainConfig,
    data: &PdaDatasetPair,
    param: SweepParam,
    values: &[f64],
    jobs: usize,
) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::Domain("sweep needs at least one value".into()));
    }
    let runs: Vec<TrainConfig> = values
        .iter()
        .map(|&v| {
            let mut cfg = *config;
            match param {
                SweepParam::Gamma => cfg.weights.gamma = v,
                SweepParam::Eta => cfg.weights.eta = v,
            }
            cfg
        })
        .collect();
    let accuracies = run_many(&runs, data, jobs)?;
    Ok(values.iter().copied().zip(accuracies).collect())
}

/// Accuracy statistics for one ablation arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

/// Comparative ablation report over matched seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<ArmReport>,
}

pub const ABLATION_ARMS: [(&str, AblationSwitches); 4] = [
    (
        "full",
        AblationSwitches {
            disable_comp: false,
            disable_intra_inter: false,
            disable_rpts: false,
        },
    ),
    (
        "no_comp",
        AblationSwitches {
            disable_comp: true,
            disable_intra_inter: false,
            disable_rpts: false,
        },
    ),
    (
        "no_intra_inter",
        AblationSwitches {
            disable_comp: false,
            disable_intra_inter: true,
            disable_rpts: false,
        },
    ),
    (
        "no_rpts",
        AblationSwitches {
            disable_comp: false,
            disable_intra_inter: false,
            disable_rpts: true,
        },
    ),
];

/// Run the four ablation arms over the given seeds with matched per-seed
/// initialization; reports mean and standard deviation per arm.
pub fn ablate(
    config: &TrainConfig,
    data: &PdaDatasetPair,
    seeds: &[u64],
    jobs: usize,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Domain("ablation needs at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(ABLATION_ARMS.len() * seeds.len());
    for (_, switches) in ABLATION_ARMS {
        for &seed in seeds {
            let mut cfg = *config;
            cfg.ablation = switches;
            cfg.seed = seed;
            runs.push(cfg);
        }
    }
    let accuracies = run_many(&runs, data, jobs)?;
    let arms = ABLATION_ARMS
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let accs = accuracies[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let var = if accs.len() > 1 {
                accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (accs.len() - 1) as f64
            } else {
                0.0
            };
            ArmReport {
                name: name.to_string(),
                accuracies: accs,
                mean,
                stddev: var.sqrt(),
            }
        })
        .collect();
    Ok(AblationReport { arms })
}

/// Train+evaluate each config, optionally in parallel; results keep input
/// order either way.
fn run_many(configs: &[TrainConfig], data: &PdaDatasetPair, jobs: usize) -> Result<Vec<f64>> {
    let run = |cfg: &TrainConfig| -> Result<f64> {
        let out = train(cfg, data)?;
        evaluate(&out.model, data)
    };
    if jobs <= 1 {
        configs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| configs.par_iter().map(run).collect())
    }
}
