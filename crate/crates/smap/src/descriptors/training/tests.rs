use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::prep::{align, AugmentConfig};
use crate::segmentation::{SegmentObservation, SegmentTrack};
use crate::Point3;

/// Tiny architecture that still exercises every layer kind.
fn micro_arch() -> ArchConfig {
    ArchConfig {
        conv_filters: [2, 3, 3],
        dense_hidden: 16,
        descriptor_dim: 8,
        decoder_channels: 4,
        deconv_filters: [3, 2],
        dropout: 0.5,
    }
}

fn micro_set(classes: usize, per_class: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for c in 0..classes {
        // Each class is one box shape with small per-sample jitter.
        let w = 1.0 + c as f64 * 0.8;
        let d = 0.5 + (c % 3) as f64 * 0.6;
        for s in 0..per_class {
            let pts: Vec<Point3> = (0..300)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-w / 2.0..w / 2.0),
                        rng.gen_range(-d / 2.0..d / 2.0),
                        rng.gen_range(0.0..1.0 + c as f64 * 0.2),
                    )
                })
                .collect();
            let obs = SegmentObservation::from_points((c * per_class + s) as u64, 0, pts, 0.0);
            samples.push((crate::prep::voxelize(&align(&obs)), c));
        }
    }
    TrainingSet { samples, n_classes: classes, class_tracks: vec![] }
}

fn micro_cfg(alpha: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        alpha,
        gamma: 0.9,
        epochs,
        batch: 8,
        learning_rate: 1e-3,
        seed: 17,
        arch: micro_arch(),
    }
}

#[test]
fn alpha_zero_matches_classifier_only_trajectory() {
    let set = micro_set(3, 4, 5);
    let cfg = micro_cfg(0.0, 4);
    let (_, with_decoder) = train_mode(&set, None, &cfg, TrainMode::Combined).unwrap();
    let (_, classifier_only) = train_mode(&set, None, &cfg, TrainMode::ClassifierOnly).unwrap();
    for (a, b) in with_decoder.iter().zip(classifier_only.iter()) {
        assert_eq!(
            a.train_lc.to_bits(),
            b.train_lc.to_bits(),
            "epoch {}: {} vs {}",
            a.epoch,
            a.train_lc,
            b.train_lc
        );
    }
}

#[test]
fn reconstruction_loss_decreases_over_early_epochs() {
    let set = micro_set(2, 4, 7);
    let cfg = micro_cfg(200.0, 10);
    let (_, stats) = train_autoencoder(&set, None, &cfg).unwrap();
    assert!(
        stats[9].train_lr_scaled < stats[0].train_lr_scaled,
        "{} -> {}",
        stats[0].train_lr_scaled,
        stats[9].train_lr_scaled
    );
}

#[test]
fn combined_loss_bookkeeping_holds_each_epoch() {
    let set = micro_set(3, 3, 9);
    let cfg = micro_cfg(200.0, 3);
    let (_, stats) = train_segmap(&set, None, &cfg).unwrap();
    for s in &stats {
        let recombined = s.train_lc + s.train_lr_scaled;
        assert!(
            (s.train_total - recombined).abs() < 1e-9,
            "epoch {}: total {} vs Lc + alpha*Lr {}",
            s.epoch,
            s.train_total,
            recombined
        );
    }
}

#[test]
fn empty_class_is_rejected() {
    let mut set = micro_set(3, 3, 11);
    set.n_classes = 4; // class 3 has no samples
    assert!(matches!(
        train_segmap(&set, None, &micro_cfg(200.0, 1)),
        Err(DescriptorError::EmptyClass(3))
    ));
}

#[test]
fn training_set_builder_merges_linked_tracks_and_drops_small_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mk_track = |id: u64, rng: &mut ChaCha8Rng| {
        let pts: Vec<Point3> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(0.0..1.0),
                )
            })
            .collect();
        SegmentTrack {
            id,
            observations: vec![SegmentObservation::from_points(id, 0, pts, 0.0)],
            complete: true,
        }
    };
    let tracks: Vec<SegmentTrack> = (0..4).map(|i| mk_track(i, &mut rng)).collect();
    let aug = AugmentConfig { rotations: 1, slices: 0, seed: 1 };
    // Tracks 0 and 2 observe the same object; with augmentation each track
    // yields 2 samples, so the merged class has 4 and the rest 2.
    let set = TrainingSet::from_tracks(&tracks, &[(0, 2)], &aug, 3, None);
    assert_eq!(set.n_classes, 1);
    assert_eq!(set.samples.len(), 4);
    assert_eq!(set.class_tracks, vec![vec![0, 2]]);

    // With min_samples 2 all three classes survive.
    let set = TrainingSet::from_tracks(&tracks, &[(0, 2)], &aug, 2, None);
    assert_eq!(set.n_classes, 3);
    assert_eq!(set.samples.len(), 8);
}

#[test]
fn stratified_split_keeps_all_classes_in_train() {
    let set = micro_set(3, 5, 13);
    let (train, val) = set.split(0.4, 99);
    assert_eq!(train.n_classes, 3);
    let mut train_counts = vec![0usize; 3];
    for (_, c) in &train.samples {
        train_counts[*c] += 1;
    }
    assert!(train_counts.iter().all(|&c| c >= 1));
    assert_eq!(train.samples.len() + val.samples.len(), 15);
    assert_eq!(val.samples.len(), 6);
}
