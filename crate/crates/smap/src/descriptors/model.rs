use std::path::Path;

use crate::nn::checkpoint::{self, Checkpoint};
use crate::nn::layers::{BatchNorm, ConcatScale, Conv3, Deconv3, Dense, Dropout, MaxPool3, Relu, Reshape, Sigmoid};
use crate::nn::{xavier_init, Layer, Sequential, Tensor};
use crate::prep::{VoxelizedSegment, GRID_CELLS, GRID_VOLUME};
use crate::{Point3, Real};

use super::{Descriptor, DescriptorError, ProviderKind};

/// Network architecture knobs. The paper-scale defaults follow the published
/// layer diagram; `desk()` is a reduced preset that trains in minutes on a
/// CPU while keeping the same topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// Filters of the three convolution blocks.
    pub conv_filters: [usize; 3],
    /// Width of the first fully connected layer.
    pub dense_hidden: usize,
    /// Descriptor dimensionality (the compressed representation).
    pub descriptor_dim: usize,
    /// Channels after the decoder's fully connected layer (at 4x4x2).
    pub decoder_channels: usize,
    /// Filters of the first two deconvolutions; the third outputs 1 channel.
    pub deconv_filters: [usize; 2],
    /// Dropout ratio on the first fully connected layer.
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv_filters: [32, 64, 64],
            dense_hidden: 512,
            descriptor_dim: 64,
            decoder_channels: 256,
            deconv_filters: [64, 32],
            dropout: 0.5,
        }
    }
}

impl ArchConfig {
    /// Reduced preset for desk-scale CPU training.
    pub fn desk() -> Self {
        Self {
            conv_filters: [8, 16, 16],
            dense_hidden: 128,
            descriptor_dim: 64,
            decoder_channels: 64,
            deconv_filters: [16, 8],
            dropout: 0.5,
        }
    }

    pub fn with_descriptor_dim(mut self, dim: usize) -> Self {
        self.descriptor_dim = dim;
        self
    }

    fn encoder_features(&self) -> usize {
        // Two max pools halve each spatial dimension twice.
        (GRID_CELLS[0] / 4) * (GRID_CELLS[1] / 4) * (GRID_CELLS[2] / 4) * self.conv_filters[2]
    }
}

/// The learned descriptor model: a convolutional encoder producing the
/// descriptor, an optional classification head used only during training,
/// and a deconvolutional decoder for reconstruction.
#[derive(Debug, Clone)]
pub struct SegModel {
    pub arch: ArchConfig,
    pub provider: ProviderKind,
    pub encoder: Sequential<f32>,
    pub classifier: Option<Sequential<f32>>,
    pub decoder: Sequential<f32>,
}

impl SegModel {
    /// Builds and initializes a model. `n_classes` attaches the training-time
    /// classification head; pass `None` for a deployment or
    /// autoencoder-style model.
    pub fn new(arch: ArchConfig, n_classes: Option<usize>, provider: ProviderKind, seed: u64) -> Self {
        let [f0, f1, f2] = arch.conv_filters;
        let feat = arch.encoder_features();
        let mut encoder = Sequential::new(vec![
            Layer::Conv3(Conv3::new(3, 1, f0, 1)),
            Layer::BatchNorm(BatchNorm::new(f0)),
            Layer::Relu(Relu::new()),
            Layer::MaxPool3(MaxPool3::new(2)),
            Layer::Conv3(Conv3::new(3, f0, f1, 1)),
            Layer::BatchNorm(BatchNorm::new(f1)),
            Layer::Relu(Relu::new()),
            Layer::MaxPool3(MaxPool3::new(2)),
            Layer::Conv3(Conv3::new(3, f1, f2, 1)),
            Layer::BatchNorm(BatchNorm::new(f2)),
            Layer::Relu(Relu::new()),
            Layer::ConcatScale(ConcatScale::new(feat, 3)),
            Layer::Dense(Dense::new(feat + 3, arch.dense_hidden)),
            Layer::Relu(Relu::new()),
            Layer::Dropout(Dropout::new(arch.dropout)),
            Layer::Dense(Dense::new(arch.dense_hidden, arch.descriptor_dim)),
            Layer::Relu(Relu::new()),
        ]);
        xavier_init(&mut encoder, seed);

        let classifier = n_classes.map(|n| {
            let mut net = Sequential::new(vec![Layer::Dense(Dense::new(arch.descriptor_dim, n))]);
            xavier_init(&mut net, seed ^ 0x00c1a551f1e57a61);
            net
        });

        let dc = arch.decoder_channels;
        let [d0, d1] = arch.deconv_filters;
        let base = [GRID_CELLS[0] / 8, GRID_CELLS[1] / 8, GRID_CELLS[2] / 8];
        let mut decoder = Sequential::new(vec![
            Layer::Dense(Dense::new(arch.descriptor_dim, base[0] * base[1] * base[2] * dc)),
            Layer::Relu(Relu::new()),
            Layer::Reshape(Reshape::new(&[base[0], base[1], base[2], dc])),
            Layer::Deconv3(Deconv3::new(3, dc, d0)),
            Layer::BatchNorm(BatchNorm::new(d0)),
            Layer::Relu(Relu::new()),
            Layer::Deconv3(Deconv3::new(3, d0, d1)),
            Layer::BatchNorm(BatchNorm::new(d1)),
            Layer::Relu(Relu::new()),
            Layer::Deconv3(Deconv3::new(3, d1, 1)),
            Layer::Sigmoid(Sigmoid::new()),
        ]);
        xavier_init(&mut decoder, seed ^ 0x00dec0de00dec0de);

        Self { arch, provider, encoder, classifier, decoder }
    }

    /// Assembles the batch input tensors for a set of grids.
    pub fn batch_input(grids: &[&VoxelizedSegment]) -> (Tensor<f32>, Tensor<f32>) {
        let b = grids.len();
        let mut x = Tensor::zeros(&[b, GRID_CELLS[0], GRID_CELLS[1], GRID_CELLS[2], 1]);
        let mut aux = Tensor::zeros(&[b, 3]);
        for (i, g) in grids.iter().enumerate() {
            g.fill_dense(&mut x.data_mut()[i * GRID_VOLUME..][..GRID_VOLUME]);
            let s = g.scale_vector();
            for a in 0..3 {
                aux.data_mut()[i * 3 + a] = s[a] as f32;
            }
        }
        (x, aux)
    }

    /// Deterministic eval-mode descriptor extraction; the classification head
    /// is never evaluated.
    pub fn describe(&self, grid: &VoxelizedSegment) -> Result<Descriptor, DescriptorError> {
        Ok(self.describe_batch(&[grid])?.pop().expect("one descriptor"))
    }

    /// Batched descriptor extraction, preserving input order.
    pub fn describe_batch(&self, grids: &[&VoxelizedSegment]) -> Result<Vec<Descriptor>, DescriptorError> {
        if grids.is_empty() {
            return Ok(Vec::new());
        }
        for g in grids {
            if g.occupied.is_empty() {
                return Err(DescriptorError::EmptyGrid);
            }
        }
        let (x, aux) = Self::batch_input(grids);
        let out = self.encoder.forward_eval(x, Some(&aux))?;
        let dim = self.arch.descriptor_dim;
        debug_assert_eq!(out.shape(), [grids.len(), dim]);
        Ok(grids
            .iter()
            .enumerate()
            .map(|(i, g)| Descriptor {
                values: out.data()[i * dim..][..dim].to_vec(),
                provider: self.provider,
                scale: g.sides,
                centroid: g.centroid,
                angle: g.angle,
                segment_id: g.segment_id,
                observation: g.observation,
                semantic: None,
            })
            .collect())
    }

    /// Decodes a descriptor into occupancy probabilities and the thresholded
    /// point cloud: cells above 0.5 become voxel centers, rescaled by the
    /// descriptor's per-axis sides and translated to its centroid.
    pub fn reconstruct(&self, d: &Descriptor) -> Result<(Vec<f32>, Vec<Point3>), DescriptorError> {
        let cloud = self.reconstruct_prob(d)?;
        let points = cloud
            .1
            .iter()
            .map(|p| *p + d.centroid)
            .collect();
        Ok((cloud.0, points))
    }

    /// Like [`Self::reconstruct`] but also undoes the alignment yaw, placing
    /// the cloud in its world orientation.
    pub fn reconstruct_world(&self, d: &Descriptor) -> Result<Vec<Point3>, DescriptorError> {
        let (_, aligned) = self.reconstruct_prob(d)?;
        let (sn, cs) = d.angle.sin_cos();
        Ok(aligned
            .iter()
            .map(|p| Point3::new(cs * p.x - sn * p.y, sn * p.x + cs * p.y, p.z) + d.centroid)
            .collect())
    }

    /// Decoder forward pass: probabilities plus centered (aligned-frame)
    /// voxel-center points.
    fn reconstruct_prob(&self, d: &Descriptor) -> Result<(Vec<f32>, Vec<Point3>), DescriptorError> {
        if d.provider == ProviderKind::Eigen {
            return Err(DescriptorError::UnsupportedProvider(d.provider));
        }
        if d.dim() != self.arch.descriptor_dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.arch.descriptor_dim,
                got: d.dim(),
            });
        }
        let x = Tensor::from_vec(&[1, d.dim()], d.values.clone());
        let probs = self.decoder.forward_eval(x, None)?;
        debug_assert_eq!(probs.len(), GRID_VOLUME);
        let mut points = Vec::new();
        let half = [
            GRID_CELLS[0] as Real / 2.0,
            GRID_CELLS[1] as Real / 2.0,
            GRID_CELLS[2] as Real / 2.0,
        ];
        for (cell, &p) in probs.data().iter().enumerate() {
            if p > 0.5 {
                let (ix, iy, iz) = VoxelizedSegment::unpack(cell as u16);
                points.push(Point3::new(
                    (ix as Real + 0.5 - half[0]) * d.scale[0],
                    (iy as Real + 0.5 - half[1]) * d.scale[1],
                    (iz as Real + 0.5 - half[2]) * d.scale[2],
                ));
            }
        }
        Ok((probs.into_data(), points))
    }

    /// Parameter checksum over every section; frozen-weights assertions
    /// compare this before and after.
    pub fn checksum(&mut self) -> u64 {
        let mut h = self.encoder.param_checksum();
        if let Some(c) = &mut self.classifier {
            h ^= c.param_checksum().rotate_left(17);
        }
        h ^= self.decoder.param_checksum().rotate_left(34);
        h
    }

    pub fn save(&self, path: &Path) -> Result<(), DescriptorError> {
        let n_classes = self
            .classifier
            .as_ref()
            .map(|c| match c.layers.first() {
                Some(Layer::Dense(d)) => d.output as u32,
                _ => 0,
            })
            .unwrap_or(0);
        let meta = vec![
            self.provider.tag() as u32,
            self.arch.descriptor_dim as u32,
            self.arch.conv_filters[0] as u32,
            self.arch.conv_filters[1] as u32,
            self.arch.conv_filters[2] as u32,
            self.arch.dense_hidden as u32,
            self.arch.decoder_channels as u32,
            self.arch.deconv_filters[0] as u32,
            self.arch.deconv_filters[1] as u32,
            (self.arch.dropout * 1000.0).round() as u32,
            n_classes,
        ];
        let mut sections = vec![(SECTION_ENCODER, self.encoder.clone())];
        if let Some(c) = &self.classifier {
            sections.push((SECTION_CLASSIFIER, c.clone()));
        }
        sections.push((SECTION_DECODER, self.decoder.clone()));
        checkpoint::save(path, &Checkpoint { meta, sections })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DescriptorError> {
        let ckpt: Checkpoint<f32> = checkpoint::load(path)?;
        let bad = |msg: &str| crate::nn::NnError::Checkpoint(msg.to_string());
        if ckpt.meta.len() < 11 {
            return Err(bad("missing model metadata").into());
        }
        let provider = ProviderKind::from_tag(ckpt.meta[0] as u8)
            .ok_or_else(|| bad("unknown provider tag"))?;
        let arch = ArchConfig {
            descriptor_dim: ckpt.meta[1] as usize,
            conv_filters: [ckpt.meta[2] as usize, ckpt.meta[3] as usize, ckpt.meta[4] as usize],
            dense_hidden: ckpt.meta[5] as usize,
            decoder_channels: ckpt.meta[6] as usize,
            deconv_filters: [ckpt.meta[7] as usize, ckpt.meta[8] as usize],
            dropout: ckpt.meta[9] as f64 / 1000.0,
        };
        let mut encoder = None;
        let mut classifier = None;
        let mut decoder = None;
        for (tag, net) in ckpt.sections {
            match tag {
                SECTION_ENCODER => encoder = Some(net),
                SECTION_CLASSIFIER => classifier = Some(net),
                SECTION_DECODER => decoder = Some(net),
                _ => return Err(bad("unknown section tag").into()),
            }
        }
        Ok(Self {
            arch,
            provider,
            encoder: encoder.ok_or_else(|| bad("checkpoint has no encoder section"))?,
            classifier,
            decoder: decoder.ok_or_else(|| bad("checkpoint has no decoder section"))?,
        })
    }
}

const SECTION_ENCODER: u32 = 0;
const SECTION_CLASSIFIER: u32 = 1;
const SECTION_DECODER: u32 = 2;
