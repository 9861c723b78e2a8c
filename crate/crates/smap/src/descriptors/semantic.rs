use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::{Dense, Relu};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{xavier_init, Adam, Layer, Sequential, Tensor};

use super::{Descriptor, DescriptorError, SemanticClass};

/// Small fully connected head classifying descriptors into vehicle,
/// building or other. Trained on top of a frozen descriptor network: the
/// head only ever sees descriptor values, never the extractor weights.
#[derive(Debug, Clone)]
pub struct SemanticHead {
    pub net: Sequential<f32>,
    pub input_dim: usize,
}

impl SemanticHead {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        let mut net = Sequential::new(vec![
            Layer::Dense(Dense::new(input_dim, 32)),
            Layer::Relu(Relu::new()),
            Layer::Dense(Dense::new(32, 3)),
        ]);
        xavier_init(&mut net, seed);
        Self { net, input_dim }
    }

    pub fn classify(&self, d: &Descriptor) -> Result<SemanticClass, DescriptorError> {
        if d.dim() != self.input_dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.input_dim,
                got: d.dim(),
            });
        }
        let x = Tensor::from_vec(&[1, d.dim()], d.values.clone());
        let logits = self.net.forward_eval(x, None)?;
        let arg = logits
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        Ok(SemanticClass::from_tag(arg as u8).unwrap())
    }
}

#[derive(Debug, Clone)]
pub struct SemanticTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of samples used for training; the rest validate.
    pub train_fraction: f64,
}

impl Default for SemanticTrainConfig {
    fn default() -> Self {
        Self { epochs: 80, batch: 32, learning_rate: 1e-3, seed: 0, train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone)]
pub struct SemanticStats {
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Trains the semantic head on labelled descriptors with a 70/30
/// train/validation split. The descriptor network stays untouched.
pub fn train_semantic(
    samples: &[(Descriptor, SemanticClass)],
    cfg: &SemanticTrainConfig,
) -> Result<(SemanticHead, SemanticStats), DescriptorError> {
    let dim = samples
        .first()
        .map(|(d, _)| d.dim())
        .ok_or(DescriptorError::EmptyClass(0))?;
    for (d, _) in samples {
        if d.dim() != dim {
            return Err(DescriptorError::DimensionMismatch { expected: dim, got: d.dim() });
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_train = ((samples.len() as f64) * cfg.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, samples.len());
    let (train_idx, val_idx) = order.split_at(n_train);

    let mut head = SemanticHead::new(dim, cfg.seed ^ 0x5e3a_11c5);
    let mut adam: Adam<f32> = Adam::new(cfg.learning_rate as f32);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train_order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        let mut erng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64 + 1));
        train_order.shuffle(&mut erng);
        for chunk in train_order.chunks(cfg.batch) {
            let mut x = Tensor::zeros(&[chunk.len(), dim]);
            let mut y = Tensor::zeros(&[chunk.len(), 3]);
            for (row, &i) in chunk.iter().enumerate() {
                x.data_mut()[row * dim..][..dim].copy_from_slice(&samples[i].0.values);
                y.data_mut()[row * 3 + samples[i].1.index()] = 1.0;
            }
            let logits = head.net.forward_train(x, None, &mut dropout_rng)?;
            let (_, g) = softmax_cross_entropy(&logits, &y)?;
            head.net.backward(g)?;
            adam.step(head.net.params());
            head.net.zero_grad();
        }
    }
    head.net.clear_caches();

    let accuracy = |idx: &[usize]| -> Result<f64, DescriptorError> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for &i in idx {
            if head.classify(&samples[i].0)? == samples[i].1 {
                correct += 1;
            }
        }
        Ok(correct as f64 / idx.len() as f64)
    };
    let stats = SemanticStats {
        train_accuracy: accuracy(train_idx)?,
        val_accuracy: accuracy(val_idx)?,
    };
    Ok((head, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::ProviderKind;
    use rand::Rng;

    fn labelled_cloud(n_per_class: usize, dim: usize, seed: u64) -> Vec<(Descriptor, SemanticClass)> {
        // Clusters in descriptor space, non-negative like real descriptors.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for class in SemanticClass::ALL {
            let center: Vec<f32> = (0..dim).map(|_| rng.gen_range(0.0..2.0f32)).collect();
            for k in 0..n_per_class {
                let values: Vec<f32> = center
                    .iter()
                    .map(|c| (c + rng.gen_range(-0.15..0.15f32)).max(0.0))
                    .collect();
                out.push((
                    Descriptor {
                        values,
                        provider: ProviderKind::SegMap,
                        scale: [1.0; 3],
                        centroid: crate::Point3::zero(),
                        angle: 0.0,
                        segment_id: k as u64,
                        observation: 0,
                        semantic: None,
                    },
                    class,
                ));
            }
        }
        out
    }

    #[test]
    fn separable_descriptor_clusters_classify_well() {
        let samples = labelled_cloud(40, 16, 3);
        let cfg = SemanticTrainConfig { epochs: 60, ..Default::default() };
        let (_, stats) = train_semantic(&samples, &cfg).unwrap();
        assert!(stats.val_accuracy >= 0.9, "val accuracy {}", stats.val_accuracy);
        assert!(stats.train_accuracy >= 0.9);
    }

    #[test]
    fn zeroed_head_starts_at_ln_three() {
        let samples = labelled_cloud(4, 8, 5);
        let mut head = SemanticHead::new(8, 1);
        for p in head.net.params() {
            for v in p.value.iter_mut() {
                *v = 0.0;
            }
        }
        let mut x = Tensor::zeros(&[samples.len(), 8]);
        let mut y = Tensor::zeros(&[samples.len(), 3]);
        for (row, (d, c)) in samples.iter().enumerate() {
            x.data_mut()[row * 8..][..8].copy_from_slice(&d.values);
            y.data_mut()[row * 3 + c.index()] = 1.0;
        }
        let logits = head.net.forward_eval(x, None).unwrap();
        let (lc, _) = softmax_cross_entropy(&logits, &y).unwrap();
        assert!((lc as f64 - 3.0f64.ln()).abs() < 1e-6, "init loss {lc}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let samples = labelled_cloud(2, 8, 7);
        let head = SemanticHead::new(16, 1);
        assert!(matches!(
            head.classify(&samples[0].0),
            Err(DescriptorError::DimensionMismatch { .. })
        ));
    }
}
