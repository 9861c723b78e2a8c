//! Parameter checkpoint file.
//!
//! Little-endian layout: magic `SMNN`, version `u32`, layer count `u32`, then
//! per layer a kind tag `u32`, dim count `u32`, dims `u32 * n`, value count
//! `u64` and `f32` values. Sections of a multi-head model are delimited by
//! zero-dim marker pseudo-layers. Round trips are bit-exact for `f32` nets.

use std::io::{Read, Write};
use std::path::Path;

use crate::scalar::Scalar;

use super::layers::{BatchNorm, ConcatScale, Conv3, Deconv3, Dense, Dropout, MaxPool3, Relu, Reshape, Sigmoid};
use super::{Layer, NnError, Sequential};

pub const MAGIC: &[u8; 4] = b"SMNN";
pub const VERSION: u32 = 1;

pub const KIND_CONV3: u32 = 1;
pub const KIND_DECONV3: u32 = 2;
pub const KIND_MAXPOOL3: u32 = 3;
pub const KIND_DENSE: u32 = 4;
pub const KIND_RELU: u32 = 5;
pub const KIND_SIGMOID: u32 = 6;
pub const KIND_BATCHNORM: u32 = 7;
pub const KIND_DROPOUT: u32 = 8;
pub const KIND_CONCAT_SCALE: u32 = 9;
pub const KIND_RESHAPE: u32 = 10;
/// Marker pseudo-layers: the dims carry the section tag.
pub const KIND_SECTION: u32 = 100;
/// Free-form integer metadata record.
pub const KIND_META: u32 = 101;

struct Record {
    kind: u32,
    dims: Vec<u32>,
    values: Vec<f32>,
}

fn layer_record<T: Scalar>(layer: &Layer<T>) -> Record {
    let f32s = |v: &[T]| v.iter().map(|x| x.to_f32().unwrap()).collect::<Vec<f32>>();
    match layer {
        Layer::Conv3(l) => Record {
            kind: KIND_CONV3,
            dims: vec![l.k as u32, l.cin as u32, l.cout as u32, l.pad as u32],
            values: {
                let mut v = f32s(&l.w);
                v.extend(f32s(&l.b));
                v
            },
        },
        Layer::Deconv3(l) => Record {
            kind: KIND_DECONV3,
            dims: vec![l.k as u32, l.cin as u32, l.cout as u32, l.stride as u32, l.pad as u32],
            values: {
                let mut v = f32s(&l.w);
                v.extend(f32s(&l.b));
                v
            },
        },
        Layer::MaxPool3(l) => Record { kind: KIND_MAXPOOL3, dims: vec![l.size as u32], values: vec![] },
        Layer::Dense(l) => Record {
            kind: KIND_DENSE,
            dims: vec![l.input as u32, l.output as u32],
            values: {
                let mut v = f32s(&l.w);
                v.extend(f32s(&l.b));
                v
            },
        },
        Layer::Relu(_) => Record { kind: KIND_RELU, dims: vec![], values: vec![] },
        Layer::Sigmoid(_) => Record { kind: KIND_SIGMOID, dims: vec![], values: vec![] },
        Layer::BatchNorm(l) => Record {
            kind: KIND_BATCHNORM,
            dims: vec![l.channels as u32],
            values: {
                let mut v = vec![l.momentum.to_f32().unwrap(), l.eps.to_f32().unwrap()];
                v.extend(f32s(&l.gamma));
                v.extend(f32s(&l.beta));
                v.extend(f32s(&l.running_mean));
                v.extend(f32s(&l.running_var));
                v
            },
        },
        Layer::Dropout(l) => Record { kind: KIND_DROPOUT, dims: vec![], values: vec![l.ratio as f32] },
        Layer::ConcatScale(l) => Record {
            kind: KIND_CONCAT_SCALE,
            dims: vec![l.features as u32, l.aux as u32],
            values: vec![],
        },
        Layer::Reshape(l) => Record {
            kind: KIND_RESHAPE,
            dims: l.dims.iter().map(|d| *d as u32).collect(),
            values: vec![],
        },
    }
}

fn record_layer<T: Scalar>(rec: Record) -> Result<Layer<T>, NnError> {
    let ts = |v: &[f32]| v.iter().map(|x| T::from_f32(*x).unwrap()).collect::<Vec<T>>();
    let bad = |what: &str| NnError::Checkpoint(format!("inconsistent {what} record"));
    Ok(match rec.kind {
        KIND_CONV3 => {
            let [k, cin, cout, pad] = rec.dims[..] else { return Err(bad("conv3d")) };
            let mut l = Conv3::new(k as usize, cin as usize, cout as usize, pad as usize);
            let wlen = l.w.len();
            if rec.values.len() != wlen + l.b.len() {
                return Err(bad("conv3d"));
            }
            l.w = ts(&rec.values[..wlen]);
            l.b = ts(&rec.values[wlen..]);
            Layer::Conv3(l)
        }
        KIND_DECONV3 => {
            let [k, cin, cout, stride, pad] = rec.dims[..] else { return Err(bad("deconv3d")) };
            let mut l = Deconv3::new(k as usize, cin as usize, cout as usize);
            l.stride = stride as usize;
            l.pad = pad as usize;
            let wlen = l.w.len();
            if rec.values.len() != wlen + l.b.len() {
                return Err(bad("deconv3d"));
            }
            l.w = ts(&rec.values[..wlen]);
            l.b = ts(&rec.values[wlen..]);
            Layer::Deconv3(l)
        }
        KIND_MAXPOOL3 => {
            let [size] = rec.dims[..] else { return Err(bad("maxpool3d")) };
            Layer::MaxPool3(MaxPool3::new(size as usize))
        }
        KIND_DENSE => {
            let [input, output] = rec.dims[..] else { return Err(bad("dense")) };
            let mut l = Dense::new(input as usize, output as usize);
            let wlen = l.w.len();
            if rec.values.len() != wlen + l.b.len() {
                return Err(bad("dense"));
            }
            l.w = ts(&rec.values[..wlen]);
            l.b = ts(&rec.values[wlen..]);
            Layer::Dense(l)
        }
        KIND_RELU => Layer::Relu(Relu::new()),
        KIND_SIGMOID => Layer::Sigmoid(Sigmoid::new()),
        KIND_BATCHNORM => {
            let [channels] = rec.dims[..] else { return Err(bad("batchnorm")) };
            let c = channels as usize;
            if rec.values.len() != 2 + 4 * c {
                return Err(bad("batchnorm"));
            }
            let mut l = BatchNorm::new(c);
            l.momentum = T::from_f32(rec.values[0]).unwrap();
            l.eps = T::from_f32(rec.values[1]).unwrap();
            l.gamma = ts(&rec.values[2..2 + c]);
            l.beta = ts(&rec.values[2 + c..2 + 2 * c]);
            l.running_mean = ts(&rec.values[2 + 2 * c..2 + 3 * c]);
            l.running_var = ts(&rec.values[2 + 3 * c..2 + 4 * c]);
            Layer::BatchNorm(l)
        }
        KIND_DROPOUT => {
            let [ratio] = rec.values[..] else { return Err(bad("dropout")) };
            Layer::Dropout(Dropout::new(ratio as f64))
        }
        KIND_CONCAT_SCALE => {
            let [features, aux] = rec.dims[..] else { return Err(bad("concat-scale")) };
            Layer::ConcatScale(ConcatScale::new(features as usize, aux as usize))
        }
        KIND_RESHAPE => {
            let dims: Vec<usize> = rec.dims.iter().map(|d| *d as usize).collect();
            Layer::Reshape(Reshape::new(&dims))
        }
        k => return Err(NnError::Checkpoint(format!("unknown layer kind tag {k}"))),
    })
}

fn write_record(w: &mut impl Write, rec: &Record) -> std::io::Result<()> {
    w.write_all(&rec.kind.to_le_bytes())?;
    w.write_all(&(rec.dims.len() as u32).to_le_bytes())?;
    for d in &rec.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&(rec.values.len() as u64).to_le_bytes())?;
    for v in &rec.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_record(r: &mut impl Read) -> Result<Record, NnError> {
    let kind = read_u32(r)?;
    let ndims = read_u32(r)? as usize;
    if ndims > 64 {
        return Err(NnError::Checkpoint(format!("implausible dim count {ndims}")));
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(read_u32(r)?);
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let nvalues = u64::from_le_bytes(b8) as usize;
    let mut values = vec![0f32; nvalues];
    let mut b4 = [0u8; 4];
    for v in values.iter_mut() {
        r.read_exact(&mut b4)?;
        *v = f32::from_le_bytes(b4);
    }
    Ok(Record { kind, dims, values })
}

/// A checkpoint: integer metadata plus tagged network sections.
pub struct Checkpoint<T> {
    pub meta: Vec<u32>,
    pub sections: Vec<(u32, Sequential<T>)>,
}

pub fn save<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<(), NnError> {
    let mut records: Vec<Record> = Vec::new();
    records.push(Record {
        kind: KIND_META,
        dims: ckpt.meta.clone(),
        values: vec![],
    });
    for (tag, net) in &ckpt.sections {
        records.push(Record { kind: KIND_SECTION, dims: vec![*tag], values: vec![] });
        for layer in &net.layers {
            records.push(layer_record(layer));
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for rec in &records {
        write_record(&mut w, rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, NnError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut meta = Vec::new();
    let mut sections: Vec<(u32, Sequential<T>)> = Vec::new();
    for i in 0..count {
        let rec = read_record(&mut r)?;
        match rec.kind {
            KIND_META => meta = rec.dims,
            KIND_SECTION => {
                let tag = *rec.dims.first().ok_or_else(|| {
                    NnError::Checkpoint("section marker without tag".into())
                })?;
                sections.push((tag, Sequential::new(Vec::new())));
            }
            _ => {
                let layer = record_layer(rec)?;
                match sections.last_mut() {
                    Some((_, net)) => net.layers.push(layer),
                    None => {
                        return Err(NnError::Checkpoint(format!(
                            "layer record {i} appears before any section marker"
                        )))
                    }
                }
            }
        }
    }
    Ok(Checkpoint { meta, sections })
}
