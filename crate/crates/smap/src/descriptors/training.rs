use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::loss::{softmax_cross_entropy, weighted_bce};
use crate::nn::{Adam, Tensor};
use crate::prep::{augment, voxelize, AugmentConfig, VoxelizedSegment};
use crate::segmentation::SegmentTrack;

use super::{ArchConfig, DescriptorError, ProviderKind, SegModel};

/// Labelled voxel grids: one class per physical object (tracks linked by
/// ground-truth correspondences collapse into a single class).
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<(VoxelizedSegment, usize)>,
    pub n_classes: usize,
    /// Track ids merged into each class.
    pub class_tracks: Vec<Vec<u64>>,
}

impl TrainingSet {
    /// Builds the set from completed tracks. `same_object_pairs` carries
    /// track-id pairs known to observe one physical segment; linked tracks
    /// share a class. Classes with fewer than `min_samples` samples are
    /// dropped and labels re-densified.
    pub fn from_tracks(
        tracks: &[SegmentTrack],
        same_object_pairs: &[(u64, u64)],
        aug: &AugmentConfig,
        min_samples: usize,
        max_obs_per_track: Option<usize>,
    ) -> Self {
        // Union-find over track ids.
        let ids: Vec<u64> = tracks.iter().map(|t| t.id).collect();
        let index: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for (a, b) in same_object_pairs {
            if let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) {
                let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut class_of_root: HashMap<usize, usize> = HashMap::new();
        let mut class_tracks: Vec<Vec<u64>> = Vec::new();
        let mut samples: Vec<(VoxelizedSegment, usize)> = Vec::new();
        for (i, track) in tracks.iter().enumerate() {
            let root = find(&mut parent, i);
            let class = *class_of_root.entry(root).or_insert_with(|| {
                class_tracks.push(Vec::new());
                class_tracks.len() - 1
            });
            class_tracks[class].push(track.id);
            let selected = select_observations(track, max_obs_per_track);
            for obs_idx in selected {
                let obs = &track.observations[obs_idx];
                let augmented = augment(obs, aug);
                for cloud in &augmented.clouds {
                    samples.push((voxelize(cloud), class));
                }
            }
        }
        // Drop classes that ended up too small; re-densify labels.
        let mut counts = vec![0usize; class_tracks.len()];
        for (_, c) in &samples {
            counts[*c] += 1;
        }
        let mut remap: Vec<Option<usize>> = Vec::with_capacity(counts.len());
        let mut kept_tracks = Vec::new();
        let mut next = 0;
        for (c, &count) in counts.iter().enumerate() {
            if count >= min_samples {
                remap.push(Some(next));
                kept_tracks.push(class_tracks[c].clone());
                next += 1;
            } else {
                remap.push(None);
            }
        }
        let samples: Vec<(VoxelizedSegment, usize)> = samples
            .into_iter()
            .filter_map(|(v, c)| remap[c].map(|nc| (v, nc)))
            .collect();
        Self { samples, n_classes: next, class_tracks: kept_tracks }
    }

    /// Splits off a validation fraction, stratified per class where possible.
    pub fn split(mut self, val_fraction: f64, seed: u64) -> (TrainingSet, TrainingSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<(VoxelizedSegment, usize)>> = vec![Vec::new(); self.n_classes];
        for (v, c) in self.samples.drain(..) {
            by_class[c].push((v, c));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for mut group in by_class {
            group.shuffle(&mut rng);
            let n_val = ((group.len() as f64) * val_fraction).floor() as usize;
            // Keep at least one training sample per class.
            let n_val = n_val.min(group.len().saturating_sub(1));
            for (i, s) in group.into_iter().enumerate() {
                if i < n_val {
                    val.push(s);
                } else {
                    train.push(s);
                }
            }
        }
        (
            TrainingSet {
                samples: train,
                n_classes: self.n_classes,
                class_tracks: self.class_tracks.clone(),
            },
            TrainingSet {
                samples: val,
                n_classes: self.n_classes,
                class_tracks: self.class_tracks,
            },
        )
    }

    fn validate(&self) -> Result<(), DescriptorError> {
        let mut counts = vec![0usize; self.n_classes];
        for (_, c) in &self.samples {
            counts[*c] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                return Err(DescriptorError::EmptyClass(c));
            }
        }
        Ok(())
    }
}

fn select_observations(track: &SegmentTrack, max: Option<usize>) -> Vec<usize> {
    let n = track.observations.len();
    match max {
        Some(m) if n > m && m > 0 => {
            // Even subsample that always includes the last observation.
            let mut idx: Vec<usize> = (0..m)
                .map(|k| k * (n - 1) / (m - 1).max(1))
                .collect();
            idx.dedup();
            idx
        }
        _ => (0..n).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Weight of the reconstruction loss in the combined objective.
    pub alpha: f64,
    /// False-negative weight of the reconstruction loss.
    pub gamma: f64,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 200.0,
            gamma: 0.9,
            epochs: 60,
            batch: 32,
            learning_rate: 1e-4,
            seed: 0,
            arch: ArchConfig::default(),
        }
    }
}

/// Per-epoch training curve entry.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_lc: f64,
    pub val_lc: f64,
    /// Reconstruction losses pre-scaled by alpha (raw for autoencoder runs).
    pub train_lr_scaled: f64,
    pub val_lr_scaled: f64,
    /// Validation classification accuracy (train accuracy when no validation
    /// set was given; 0 for autoencoder runs).
    pub accuracy: f64,
    /// Total combined training loss, for loss bookkeeping checks.
    pub train_total: f64,
}

/// Writes the training curves CSV: epoch, train_Lc, val_Lc, train_Lr_scaled,
/// val_Lr_scaled, accuracy.
pub fn write_curves(path: &Path, stats: &[EpochStats]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_Lc,val_Lc,train_Lr_scaled,val_Lr_scaled,accuracy")?;
    for s in stats {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            s.epoch, s.train_lc, s.val_lc, s.train_lr_scaled, s.val_lr_scaled, s.accuracy
        )?;
    }
    f.flush()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum TrainMode {
    /// Classification + alpha * reconstruction on one descriptor.
    Combined,
    /// Classification head only.
    ClassifierOnly,
    /// Reconstruction loss only.
    AutoencoderOnly,
}

/// Trains the combined-objective descriptor model.
pub fn train_segmap(
    train: &TrainingSet,
    val: Option<&TrainingSet>,
    cfg: &TrainConfig,
) -> Result<(SegModel, Vec<EpochStats>), DescriptorError> {
    train_mode(train, val, cfg, TrainMode::Combined)
}

/// Trains the reconstruction-only baseline with the same architecture.
pub fn train_autoencoder(
    train: &TrainingSet,
    val: Option<&TrainingSet>,
    cfg: &TrainConfig,
) -> Result<(SegModel, Vec<EpochStats>), DescriptorError> {
    train_mode(train, val, cfg, TrainMode::AutoencoderOnly)
}

pub(crate) fn train_mode(
    train: &TrainingSet,
    val: Option<&TrainingSet>,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<(SegModel, Vec<EpochStats>), DescriptorError> {
    train.validate()?;
    if train.n_classes < 2 && mode != TrainMode::AutoencoderOnly {
        return Err(DescriptorError::EmptyClass(1));
    }
    let (provider, classes) = match mode {
        TrainMode::Combined | TrainMode::ClassifierOnly => {
            (ProviderKind::SegMap, Some(train.n_classes))
        }
        TrainMode::AutoencoderOnly => (ProviderKind::Autoencoder, None),
    };
    let mut model = SegModel::new(cfg.arch.clone(), classes, provider, cfg.seed);
    let mut adam: Adam<f32> = Adam::new(cfg.learning_rate as f32);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd5a9_0b8c_1f36_42e7);
    let mut stats = Vec::with_capacity(cfg.epochs);

    let n = train.samples.len();
    let gamma = cfg.gamma as f32;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(epoch as u64 + 1)));
        order.shuffle(&mut shuffle_rng);

        let mut sum_lc = 0.0f64;
        let mut sum_lr = 0.0f64;
        let mut sum_total = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let grids: Vec<&VoxelizedSegment> =
                chunk.iter().map(|&i| &train.samples[i].0).collect();
            let (x, aux) = SegModel::batch_input(&grids);
            let h = model.encoder.forward_train(x.clone(), Some(&aux), &mut dropout_rng)?;
            let mut grad_h = Tensor::zeros(h.shape());
            let bsz = chunk.len() as f64;

            let mut lc = 0.0f64;
            if mode != TrainMode::AutoencoderOnly {
                let classifier = model.classifier.as_mut().expect("classification head");
                let mut one_hot = Tensor::zeros(&[chunk.len(), train.n_classes]);
                for (row, &i) in chunk.iter().enumerate() {
                    one_hot.data_mut()[row * train.n_classes + train.samples[i].1] = 1.0;
                }
                let logits = classifier.forward_train(h.clone(), None, &mut dropout_rng)?;
                let (loss, glogits) = softmax_cross_entropy(&logits, &one_hot)?;
                lc = loss as f64;
                let g = classifier.backward(glogits)?;
                add_into(&mut grad_h, &g);
            }

            let mut lr = 0.0f64;
            if mode != TrainMode::ClassifierOnly {
                let probs = model.decoder.forward_train(h.clone(), None, &mut dropout_rng)?;
                let (loss, mut gprobs) = weighted_bce(&probs, &x, gamma)?;
                lr = loss as f64;
                let weight = match mode {
                    TrainMode::Combined => cfg.alpha as f32,
                    _ => 1.0,
                };
                for v in gprobs.data_mut() {
                    *v *= weight;
                }
                let g = model.decoder.backward(gprobs)?;
                add_into(&mut grad_h, &g);
            }

            model.encoder.backward(grad_h)?;
            let mut params = model.encoder.params();
            if let Some(c) = &mut model.classifier {
                params.extend(c.params());
            }
            params.extend(model.decoder.params());
            adam.step(params);
            model.encoder.zero_grad();
            if let Some(c) = &mut model.classifier {
                c.zero_grad();
            }
            model.decoder.zero_grad();

            sum_lc += lc * bsz;
            sum_lr += lr * bsz;
            let total = match mode {
                TrainMode::Combined => crate::nn::loss::combined(lc, lr, cfg.alpha),
                TrainMode::ClassifierOnly => lc,
                TrainMode::AutoencoderOnly => lr,
            };
            sum_total += total * bsz;
        }
        model.encoder.clear_caches();
        if let Some(c) = &mut model.classifier {
            c.clear_caches();
        }
        model.decoder.clear_caches();

        let lr_weight = if mode == TrainMode::Combined { cfg.alpha } else { 1.0 };
        let (val_lc, val_lr, accuracy) = match val {
            Some(v) if !v.samples.is_empty() => evaluate(&model, v, gamma, cfg.batch, mode)?,
            _ => {
                let (_, _, acc) = evaluate(&model, train, gamma, cfg.batch, mode)?;
                (f64::NAN, f64::NAN, acc)
            }
        };
        stats.push(EpochStats {
            epoch,
            train_lc: sum_lc / n as f64,
            val_lc,
            train_lr_scaled: sum_lr / n as f64 * lr_weight,
            val_lr_scaled: val_lr * lr_weight,
            accuracy,
            train_total: sum_total / n as f64,
        });
    }
    Ok((model, stats))
}

fn add_into(dst: &mut Tensor<f32>, src: &Tensor<f32>) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data().iter()) {
        *d += *s;
    }
}

/// Eval-mode losses and classification accuracy over a set.
fn evaluate(
    model: &SegModel,
    set: &TrainingSet,
    gamma: f32,
    batch: usize,
    mode: TrainMode,
) -> Result<(f64, f64, f64), DescriptorError> {
    let n = set.samples.len();
    if n == 0 {
        return Ok((f64::NAN, f64::NAN, 0.0));
    }
    let mut sum_lc = 0.0;
    let mut sum_lr = 0.0;
    let mut correct = 0usize;
    for chunk in (0..n).collect::<Vec<_>>().chunks(batch) {
        let grids: Vec<&VoxelizedSegment> = chunk.iter().map(|&i| &set.samples[i].0).collect();
        let (x, aux) = SegModel::batch_input(&grids);
        let h = model.encoder.forward_eval(x.clone(), Some(&aux))?;
        if mode != TrainMode::AutoencoderOnly {
            let classifier = model.classifier.as_ref().expect("classification head");
            let logits = classifier.forward_eval(h.clone(), None)?;
            let mut one_hot = Tensor::zeros(&[chunk.len(), set.n_classes]);
            for (row, &i) in chunk.iter().enumerate() {
                one_hot.data_mut()[row * set.n_classes + set.samples[i].1] = 1.0;
            }
            let (lc, _) = softmax_cross_entropy(&logits, &one_hot)?;
            sum_lc += lc as f64 * chunk.len() as f64;
            for (row, &i) in chunk.iter().enumerate() {
                let rowv = &logits.data()[row * set.n_classes..][..set.n_classes];
                let argmax = rowv
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(k, _)| k)
                    .unwrap();
                if argmax == set.samples[i].1 {
                    correct += 1;
                }
            }
        }
        if mode != TrainMode::ClassifierOnly {
            let probs = model.decoder.forward_eval(h, None)?;
            let (lr, _) = weighted_bce(&probs, &x, gamma)?;
            sum_lr += lr as f64 * chunk.len() as f64;
        }
    }
    Ok((sum_lc / n as f64, sum_lr / n as f64, correct as f64 / n as f64))
}

#[cfg(test)]
mod tests;
