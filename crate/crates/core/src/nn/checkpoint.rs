//! `ESCW` checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic "ESCW" | version u16 | arch tag u8 | n_classes u32
//! input rank u32 | input dims u32...
//! layer count u32
//! per layer: kind u8 | ndims u32 | dims u32... | payload
//! ```
//!
//! Payloads: conv and dense store f32 weights then f32 biases; batch norm
//! stores f32 gamma, f32 beta, f64 running mean, f64 running variance and a
//! u64 update count; dropout stores its f64 rate; ReLU and max-pool have
//! none (pool geometry lives in the dims).

use std::io::{Read, Write};

use super::{BatchNorm, Conv2d, Dense, Dropout, Layer, MaxPool2d, Network, NnError, Relu, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ESCW";
const VERSION: u16 = 1;

const KIND_CONV: u8 = 1;
const KIND_BN: u8 = 2;
const KIND_RELU: u8 = 3;
const KIND_POOL: u8 = 4;
const KIND_DENSE: u8 = 5;
const KIND_DROPOUT: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub arch_tag: u8,
    pub n_classes: u32,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), NnError> {
    let v = u32::try_from(v).map_err(|_| NnError::MalformedCheckpoint(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_dims<W: Write>(w: &mut W, dims: &[usize]) -> Result<(), NnError> {
    put_u32(w, dims.len())?;
    dims.iter().try_for_each(|&d| put_u32(w, d))
}

fn put_f32s<W: Write, T: Scalar>(w: &mut W, values: &[T]) -> Result<(), NnError> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<(), NnError> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write, T: Scalar>(
    w: &mut W,
    header: CheckpointHeader,
    net: &Network<T>,
) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[header.arch_tag])?;
    w.write_all(&header.n_classes.to_le_bytes())?;
    put_dims(w, net.input_shape())?;
    put_u32(w, net.layers().len())?;
    for layer in net.layers() {
        match layer {
            Layer::Conv2d(c) => {
                w.write_all(&[KIND_CONV])?;
                put_dims(w, c.weight.shape())?;
                put_f32s(w, c.weight.data())?;
                put_f32s(w, c.bias.data())?;
            }
            Layer::BatchNorm(b) => {
                w.write_all(&[KIND_BN])?;
                put_dims(w, &[b.channels])?;
                put_f32s(w, b.gamma.data())?;
                put_f32s(w, b.beta.data())?;
                put_f64s(w, &b.running_mean)?;
                put_f64s(w, &b.running_var)?;
                w.write_all(&b.updates.to_le_bytes())?;
            }
            Layer::Relu(_) => {
                w.write_all(&[KIND_RELU])?;
                put_dims(w, &[])?;
            }
            Layer::MaxPool(p) => {
                w.write_all(&[KIND_POOL])?;
                put_dims(w, &[p.ksize.0, p.ksize.1, p.stride.0, p.stride.1])?;
            }
            Layer::Dense(d) => {
                w.write_all(&[KIND_DENSE])?;
                put_dims(w, d.weight.shape())?;
                put_f32s(w, d.weight.data())?;
                put_f32s(w, d.bias.data())?;
            }
            Layer::Dropout(d) => {
                w.write_all(&[KIND_DROPOUT])?;
                put_dims(w, &[])?;
                put_f64s(w, &[d.rate])?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], NnError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| NnError::MalformedCheckpoint(format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn dims(&mut self) -> Result<Vec<usize>, NnError> {
        let n = self.u32()?;
        if n > 8 {
            return Err(NnError::MalformedCheckpoint(format!("implausible rank {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn f32s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>, NnError> {
        let mut buf = vec![0u8; n * 4];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| NnError::MalformedCheckpoint(format!("truncated: {e}")))?;
        Ok(buf
            .chunks_exact(4)
            .map(|b| T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
}

fn expect_dims(dims: &[usize], rank: usize, what: &str) -> Result<(), NnError> {
    if dims.len() != rank {
        return Err(NnError::MalformedCheckpoint(format!(
            "{what} expects rank {rank}, got {dims:?}"
        )));
    }
    Ok(())
}

pub fn read_checkpoint<R: Read, T: Scalar>(r: R) -> Result<(CheckpointHeader, Network<T>), NnError> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(NnError::MalformedCheckpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.bytes()?);
    if version != VERSION {
        return Err(NnError::MalformedCheckpoint(format!("unsupported version {version}")));
    }
    let arch_tag = r.u8()?;
    let n_classes = u32::from_le_bytes(r.bytes()?);
    let input_shape = r.dims()?;
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8()?;
        let dims = r.dims()?;
        let layer = match kind {
            KIND_CONV => {
                expect_dims(&dims, 4, "conv")?;
                let mut c = Conv2d::new((dims[0], dims[1]), dims[2], dims[3]);
                c.weight = Tensor::from_vec(&dims, r.f32s(dims.iter().product())?)?;
                c.bias = Tensor::from_vec(&[dims[3]], r.f32s(dims[3])?)?;
                Layer::Conv2d(c)
            }
            KIND_BN => {
                expect_dims(&dims, 1, "batchnorm")?;
                let ch = dims[0];
                let mut b = BatchNorm::new(ch);
                b.gamma = Tensor::from_vec(&[ch], r.f32s(ch)?)?;
                b.beta = Tensor::from_vec(&[ch], r.f32s(ch)?)?;
                b.running_mean = r.f64s(ch)?;
                b.running_var = r.f64s(ch)?;
                b.updates = u64::from_le_bytes(r.bytes()?);
                Layer::BatchNorm(b)
            }
            KIND_RELU => Layer::Relu(Relu::new()),
            KIND_POOL => {
                expect_dims(&dims, 4, "maxpool")?;
                Layer::MaxPool(MaxPool2d::new((dims[0], dims[1]), (dims[2], dims[3])))
            }
            KIND_DENSE => {
                expect_dims(&dims, 2, "dense")?;
                let mut d = Dense::new(dims[0], dims[1]);
                d.weight = Tensor::from_vec(&dims, r.f32s(dims[0] * dims[1])?)?;
                d.bias = Tensor::from_vec(&[dims[1]], r.f32s(dims[1])?)?;
                Layer::Dense(d)
            }
            KIND_DROPOUT => {
                let rate = r.f64s(1)?[0];
                if !(0.0..1.0).contains(&rate) {
                    return Err(NnError::MalformedCheckpoint(format!("dropout rate {rate}")));
                }
                Layer::Dropout(Dropout::new(rate))
            }
            other => return Err(NnError::MalformedCheckpoint(format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    let net = Network::from_layers(&input_shape, layers, 0)?;
    Ok((CheckpointHeader { arch_tag, n_classes }, net))
}
