//! Datasets: synthetic partial-domain-adaptation pairs, the plain-text
//! feature-file format, and seeded minibatching.
//!
//! Target evaluation labels ride alongside the data behind [`EvalLabels`] so
//! optimization code paths never touch them; only evaluation and the
//! per-epoch accuracy report read them.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One source sample: a feature vector and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Ground-truth target labels, quarantined for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalLabels(Vec<usize>);

impl EvalLabels {
    /// Read the hidden labels. Call sites are the accuracy computation and
    /// nothing else.
    pub fn labels(&self) -> &[usize] {
        &self.0
    }
}

/// A labeled source set and an unlabeled target set whose label space is a
/// strict subset of the source's.
#[derive(Debug, Clone, PartialEq)]
pub struct PdaDatasetPair {
    k_s: usize,
    source_x: Tensor,
    source_labels: Vec<usize>,
    target_x: Tensor,
    target_eval: Option<EvalLabels>,
    shared_labels: Option<BTreeSet<usize>>,
}

impl PdaDatasetPair {
    pub fn new(
        k_s: usize,
        source: Vec<LabeledSample>,
        target_features: Vec<Vec<f64>>,
        target_eval_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if k_s < 2 {
            return Err(Error::Config(format!("K_s must be ≥ 2, got {k_s}")));
        }
        if source.is_empty() {
            return Err(Error::Domain("source set is empty".into()));
        }
        if target_features.is_empty() {
            return Err(Error::Domain("target set is empty".into()));
        }
        if let Some(&bad) = source.iter().map(|s| &s.label).find(|&&l| l >= k_s) {
            return Err(Error::Domain(format!(
                "source label {bad} out of range [0, {k_s})"
            )));
        }
        let source_labels: Vec<usize> = source.iter().map(|s| s.label).collect();
        let source_rows: Vec<Vec<f64>> = source.into_iter().map(|s| s.features).collect();
        let source_x = Tensor::from_rows(&source_rows)?;
        let target_x = Tensor::from_rows(&target_features)?;
        if source_x.cols() != target_x.cols() {
            return Err(Error::Dim(format!(
                "source dimension {} vs target dimension {}",
                source_x.cols(),
                target_x.cols()
            )));
        }

        let (target_eval, shared_labels) = match target_eval_labels {
            None => (None, None),
            Some(labels) => {
                if labels.len() != target_x.rows() {
                    return Err(Error::Dim(format!(
                        "{} evaluation labels for {} target samples",
                        labels.len(),
                        target_x.rows()
                    )));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= k_s) {
                    return Err(Error::Domain(format!(
                        "target label {bad} out of range [0, {k_s})"
                    )));
                }
                let shared: BTreeSet<usize> = labels.iter().copied().collect();
                if shared.len() >= k_s {
                    return Err(Error::Domain(
                        "target label set must be a strict subset of the source label space".into(),
                    ));
                }
                (Some(EvalLabels(labels)), Some(shared))
            }
        };

        Ok(PdaDatasetPair {
            k_s,
            source_x,
            source_labels,
            target_x,
            target_eval,
            shared_labels,
        })
    }

    pub fn k_s(&self) -> usize {
        self.k_s
    }

    pub fn d_x(&self) -> usize {
        self.source_x.cols()
    }

    pub fn n_s(&self) -> usize {
        self.source_x.rows()
    }

    pub fn n_t(&self) -> usize {
        self.target_x.rows()
    }

    pub fn source_features(&self) -> &Tensor {
        &self.source_x
    }

    pub fn source_labels(&self) -> &[usize] {
        &self.source_labels
    }

    pub fn target_features(&self) -> &Tensor {
        &self.target_x
    }

    pub fn eval_labels(&self) -> Option<&EvalLabels> {
        self.target_eval.as_ref()
    }

    /// Target label set, known only when evaluation labels are present.
    pub fn shared_labels(&self) -> Option<&BTreeSet<usize>> {
        self.shared_labels.as_ref()
    }
}

/// Parameters of the synthetic Gaussian-cluster PDA task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k_s: usize,
    pub k_t: usize,
    pub d_x: usize,
    /// Samples per class, per domain.
    pub samples_per_class: usize,
    /// Half-width of the uniform box the class centers are drawn from.
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub within_std: f64,
    /// Magnitude of the fixed target translation.
    pub shift_magnitude: f64,
    /// Angle of the fixed rotation applied to target samples, radians.
    pub rotation_angle: f64,
    /// Aim the translation from the shared-class centroid toward the
    /// private-class centroid instead of a seeded random direction, pushing
    /// target clusters into negative-transfer territory.
    pub shift_toward_private: bool,
    pub seed: u64,
}

impl SynthConfig {
    /// The standard desk-scale task: 6 source classes, 3 shared, 16-dim
    /// features, 100 samples per class per domain, and a fixed affine shift
    /// aimed toward the private-class region.
    pub fn standard(seed: u64) -> Self {
        SynthConfig {
            k_s: 6,
            k_t: 3,
            d_x: 16,
            samples_per_class: 100,
            center_scale: 3.5,
            within_std: 0.55,
            shift_magnitude: 4.5,
            rotation_angle: 0.45,
            shift_toward_private: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_t < 1 || self.k_t >= self.k_s {
            return Err(Error::Config(format!(
                "need 1 ≤ K_t < K_s, got K_t={}, K_s={}",
                self.k_t, self.k_s
            )));
        }
        if self.d_x == 0 || self.samples_per_class == 0 {
            return Err(Error::Config(
                "d_x and samples_per_class must be ≥ 1".into(),
            ));
        }
        if self.within_std.is_nan() || self.within_std <= 0.0 {
            return Err(Error::Config(format!(
                "within-class std {} must be > 0",
                self.within_std
            )));
        }
        for (name, v) in [
            ("center_scale", self.center_scale),
            ("shift_magnitude", self.shift_magnitude),
            ("rotation_angle", self.rotation_angle),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Fixed affine target transform: disjoint-plane rotations then a translation.
struct AffineShift {
    planes: Vec<(usize, usize)>,
    angle: f64,
    translation: Vec<f64>,
}

impl AffineShift {
    fn apply(&self, x: &mut [f64]) {
        let (sin, cos) = self.angle.sin_cos();
        for &(i, j) in &self.planes {
            let (a, b) = (x[i], x[j]);
            x[i] = cos * a - sin * b;
            x[j] = sin * a + cos * b;
        }
        for (v, t) in x.iter_mut().zip(&self.translation) {
            *v += t;
        }
    }
}

/// Generate the synthetic task: `K_s` Gaussian source clusters with minimum
/// center separation of four within-class standard deviations; the target is
/// drawn from the first `K_t` classes and pushed through a fixed affine
/// shift. Deterministic given the seed.
pub fn synth_pda_generate(config: &SynthConfig) -> Result<PdaDatasetPair> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = place_centers(config, &mut rng)?;

    // Fixed shift: translation direction, then rotation planes over a seeded
    // coordinate permutation.
    let translation = {
        let dir: Vec<f64> = if config.shift_toward_private {
            // From the shared-class centroid toward the private-class
            // centroid, so the shift creates negative-transfer pressure.
            let mut d = vec![0.0; config.d_x];
            for (k, center) in centers.iter().enumerate() {
                let w = if k < config.k_t {
                    -1.0 / config.k_t as f64
                } else {
                    1.0 / (config.k_s - config.k_t) as f64
                };
                for (acc, c) in d.iter_mut().zip(center) {
                    *acc += w * c;
                }
            }
            d
        } else {
            (0..config.d_x)
                .map(|_| rng.sample(StandardNormal))
                .collect()
        };
        let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        dir.iter()
            .map(|v| v / norm * config.shift_magnitude)
            .collect::<Vec<f64>>()
    };
    let mut coords: Vec<usize> = (0..config.d_x).collect();
    coords.shuffle(&mut rng);
    let planes: Vec<(usize, usize)> = coords.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let shift = AffineShift {
        planes,
        angle: config.rotation_angle,
        translation,
    };

    let mut source = Vec::with_capacity(config.k_s * config.samples_per_class);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..config.samples_per_class {
            source.push(LabeledSample {
                features: gaussian_around(center, config.within_std, &mut rng),
                label: k,
            });
        }
    }

    let mut target_features = Vec::with_capacity(config.k_t * config.samples_per_class);
    let mut target_labels = Vec::with_capacity(config.k_t * config.samples_per_class);
    for (k, center) in centers.iter().enumerate().take(config.k_t) {
        for _ in 0..config.samples_per_class {
            let mut x = gaussian_around(center, config.within_std, &mut rng);
            shift.apply(&mut x);
            target_features.push(x);
            target_labels.push(k);
        }
    }

    PdaDatasetPair::new(config.k_s, source, target_features, Some(target_labels))
}

fn place_centers(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let min_sep = 4.0 * config.within_std;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(config.k_s);
    let mut attempts = 0;
    while centers.len() < config.k_s {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config(format!(
                "could not place {} centers with separation {min_sep} in a box of half-width {}",
                config.k_s, config.center_scale
            )));
        }
        let candidate: Vec<f64> = (0..config.d_x)
            .map(|_| rng.gen_range(-config.center_scale..config.center_scale))
            .collect();
        let ok = centers.iter().all(|c| {
            let d2: f64 = c
                .iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() >= min_sep
        });
        if ok {
            centers.push(candidate);
        }
    }
    Ok(centers)
}

fn gaussian_around(center: &[f64], std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    center
        .iter()
        .map(|&c| c + std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

// ---------------------------------------------------------------------------
// Feature-file format
// ---------------------------------------------------------------------------

/// Parsed contents of a feature file; may hold one or both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedFeatures {
    pub d_x: usize,
    pub k_s: usize,
    pub source: Vec<LabeledSample>,
    pub target_features: Vec<Vec<f64>>,
    pub target_labels: Vec<Option<usize>>,
}

impl LoadedFeatures {
    /// Assemble the PDA pair; requires both domains. Evaluation labels are
    /// attached only when every target row carries one.
    pub fn into_pda_pair(self) -> Result<PdaDatasetPair> {
        if self.source.is_empty() {
            return Err(Error::Domain("feature file has no source rows".into()));
        }
        if self.target_features.is_empty() {
            return Err(Error::Domain("feature file has no target rows".into()));
        }
        let eval = if self.target_labels.iter().all(|l| l.is_some()) {
            Some(self.target_labels.into_iter().map(|l| l.unwrap()).collect())
        } else {
            None
        };
        PdaDatasetPair::new(self.k_s, self.source, self.target_features, eval)
    }
}

/// Serialize a dataset pair in the feature-file format. Floats are written
/// in shortest round-trip decimal form, so a reload recovers them exactly.
pub fn format_feature_file(pair: &PdaDatasetPair) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "pda-features v1 dim={} classes={}",
        pair.d_x(),
        pair.k_s()
    );
    for (row, &label) in pair.source_features().iter_rows().zip(pair.source_labels()) {
        let _ = write!(out, "s,{label}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    let eval = pair.eval_labels().map(|e| e.labels());
    for (j, row) in pair.target_features().iter_rows().enumerate() {
        match eval {
            Some(labels) => {
                let _ = write!(out, "t,{}", labels[j]);
            }
            None => {
                let _ = write!(out, "t,?");
            }
        }
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_feature_file(pair: &PdaDatasetPair, path: &Path) -> Result<()> {
    std::fs::write(path, format_feature_file(pair))?;
    Ok(())
}

/// Parse the feature-file format; errors carry 1-based line numbers.
pub fn parse_feature_file(text: &str) -> Result<LoadedFeatures> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let (d_x, k_s) = parse_header(header)?;

    let mut loaded = LoadedFeatures {
        d_x,
        k_s,
        source: Vec::new(),
        target_features: Vec::new(),
        target_labels: Vec::new(),
    };
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d_x + 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} fields, found {}", d_x + 2, fields.len()),
            });
        }
        let mut features = Vec::with_capacity(d_x);
        for f in &fields[2..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid float '{f}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "non-finite feature value".into(),
                });
            }
            features.push(v);
        }
        let label_field = fields[1].trim();
        match fields[0].trim() {
            "s" => {
                let label = parse_label(label_field, k_s, line_no)?.ok_or(Error::Parse {
                    line: line_no,
                    msg: "source rows must be labeled".into(),
                })?;
                loaded.source.push(LabeledSample { features, label });
            }
            "t" => {
                let label = parse_label(label_field, k_s, line_no)?;
                loaded.target_features.push(features);
                loaded.target_labels.push(label);
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown domain tag '{other}', expected 's' or 't'"),
                });
            }
        }
    }
    Ok(loaded)
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let err = |msg: String| Error::Parse { line: 1, msg };
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "pda-features" || parts[1] != "v1" {
        return Err(err(format!(
            "bad header '{header}', expected 'pda-features v1 dim=<d> classes=<k>'"
        )));
    }
    let field = |s: &str, key: &str| -> Result<usize> {
        s.strip_prefix(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(format!("bad header field '{s}'")))
    };
    let d_x = field(parts[2], "dim=")?;
    let k_s = field(parts[3], "classes=")?;
    if d_x == 0 || k_s < 2 {
        return Err(err(format!("need dim ≥ 1 and classes ≥ 2, got {header}")));
    }
    Ok((d_x, k_s))
}

fn parse_label(field: &str, k_s: usize, line_no: usize) -> Result<Option<usize>> {
    if field == "?" {
        return Ok(None);
    }
    let label: usize = field.parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("invalid label '{field}'"),
    })?;
    if label >= k_s {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("label {label} out of range [0, {k_s})"),
        });
    }
    Ok(Some(label))
}

pub fn load_feature_file(path: &Path) -> Result<LoadedFeatures> {
    let text = std::fs::read_to_string(path)?;
    parse_feature_file(&text)
}

// ---------------------------------------------------------------------------
// Minibatching
// ---------------------------------------------------------------------------

/// Seeded shuffle of `0..n` chunked into batches; the final partial batch is
/// retained, and every index appears exactly once.
pub fn minibatches(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be ≥ 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn synth_respects_pda_condition() {
        let config = SynthConfig::standard(7);
        let pair = synth_pda_generate(&config).unwrap();
        assert_eq!(pair.k_s(), 6);
        assert_eq!(pair.n_s(), 600);
        assert_eq!(pair.n_t(), 300);
        let eval: BTreeSet<usize> = pair
            .eval_labels()
            .unwrap()
            .labels()
            .iter()
            .copied()
            .collect();
        assert_eq!(eval, BTreeSet::from([0, 1, 2]));
        let source: BTreeSet<usize> = pair.source_labels().iter().copied().collect();
        assert_eq!(source, BTreeSet::from([0, 1, 2, 3, 4, 5]));
        assert_eq!(pair.shared_labels().unwrap(), &BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn synth_same_seed_bitwise_identical() {
        let config = SynthConfig::standard(11);
        let a = synth_pda_generate(&config).unwrap();
        let b = synth_pda_generate(&config).unwrap();
        assert_eq!(a, b);
        let c = synth_pda_generate(&SynthConfig::standard(12)).unwrap();
        assert_ne!(a, c);
    }

    fn class_mean(x: &Tensor, labels: &[usize], class: usize) -> Vec<f64> {
        let rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        let mut mean = vec![0.0; x.cols()];
        for &i in &rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / rows.len() as f64;
            }
        }
        mean
    }

    #[test]
    fn zero_shift_keeps_class_conditionals_aligned() {
        let mut config = SynthConfig::standard(13);
        config.shift_magnitude = 0.0;
        config.rotation_angle = 0.0;
        let pair = synth_pda_generate(&config).unwrap();
        let eval = pair.eval_labels().unwrap().labels().to_vec();
        for k in 0..config.k_t {
            let sm = class_mean(pair.source_features(), pair.source_labels(), k);
            let tm = class_mean(pair.target_features(), &eval, k);
            let dist: f64 = sm
                .iter()
                .zip(&tm)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            // Means of 100 draws of σ=1 Gaussians: distance ≈ 0.14·√16 ≈ 0.57.
            assert!(dist < 1.0, "class {k}: {dist}");
        }

        let shifted = synth_pda_generate(&SynthConfig::standard(13)).unwrap();
        let eval = shifted.eval_labels().unwrap().labels().to_vec();
        let sm = class_mean(shifted.source_features(), shifted.source_labels(), 0);
        let tm = class_mean(shifted.target_features(), &eval, 0);
        let dist: f64 = sm
            .iter()
            .zip(&tm)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 2.0, "shifted distance only {dist}");
    }

    #[test]
    fn synth_rejects_bad_config() {
        let mut config = SynthConfig::standard(1);
        config.k_t = 6;
        assert!(matches!(synth_pda_generate(&config), Err(Error::Config(_))));
        let mut config = SynthConfig::standard(1);
        config.within_std = 0.0;
        assert!(matches!(synth_pda_generate(&config), Err(Error::Config(_))));
    }

    #[test]
    fn pair_rejects_full_target_label_space() {
        let source = vec![
            LabeledSample {
                features: vec![0.0],
                label: 0,
            },
            LabeledSample {
                features: vec![1.0],
                label: 1,
            },
        ];
        let target = vec![vec![0.5], vec![0.7]];
        assert!(matches!(
            PdaDatasetPair::new(2, source, target, Some(vec![0, 1])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn feature_file_round_trip() {
        let pair = synth_pda_generate(&SynthConfig {
            k_s: 4,
            k_t: 2,
            d_x: 5,
            samples_per_class: 3,
            center_scale: 2.0,
            within_std: 0.5,
            shift_magnitude: 1.0,
            rotation_angle: 0.3,
            shift_toward_private: false,
            seed: 99,
        })
        .unwrap();
        let text = format_feature_file(&pair);
        let reloaded = parse_feature_file(&text).unwrap().into_pda_pair().unwrap();
        assert_eq!(pair, reloaded);
    }

    #[test]
    fn parse_reports_row_with_wrong_field_count() {
        let text =
            "pda-features v1 dim=4 classes=6\ns,0,1.0,2.0,3.0,4.0\ns,1,1.0,2.0,3.0,4.0,5.0\n";
        match parse_feature_file(text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("fields"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_label_out_of_range_and_bad_tags() {
        let base = "pda-features v1 dim=1 classes=3\n";
        let cases = [
            ("s,3,0.5\n", "label 3"),
            ("x,0,0.5\n", "domain tag"),
            ("s,?,0.5\n", "must be labeled"),
            ("t,0,abc\n", "invalid float"),
        ];
        for (row, needle) in cases {
            let err = parse_feature_file(&format!("{base}{row}")).unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains("line 2"), "{msg}");
            assert!(
                msg.to_lowercase().contains(&needle.to_lowercase()),
                "expected '{needle}' in '{msg}'"
            );
        }
    }

    #[test]
    fn parse_accepts_well_formed_file() {
        let text = "pda-features v1 dim=2 classes=6\ns,5,1.0,2.0\nt,?,0.1,0.2\nt,1,0.3,0.4\n";
        let loaded = parse_feature_file(text).unwrap();
        assert_eq!(loaded.source.len(), 1);
        assert_eq!(loaded.target_features.len(), 2);
        assert_eq!(loaded.target_labels, vec![None, Some(1)]);
        // Mixed labeling: evaluation labels are dropped, pair still loads.
        let pair = loaded.into_pda_pair().unwrap();
        assert!(pair.eval_labels().is_none());
    }

    #[test]
    fn minibatch_sizes_and_partition() {
        let batches = minibatches(10, 4, 5).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn minibatch_seeding() {
        assert_eq!(
            minibatches(20, 6, 3).unwrap(),
            minibatches(20, 6, 3).unwrap()
        );
        assert_ne!(
            minibatches(20, 6, 3).unwrap(),
            minibatches(20, 6, 4).unwrap()
        );
        assert!(minibatches(5, 0, 1).is_err());
    }
}
