//! Versioned binary checkpoint: model structure, 64-bit weights, optimizer
//! state, and a digest of the training config that produced it.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{BatchNormLayer, Block, ConvBlock, ConvLayer, DenseLayer, Model, ResidualBlock, Sgd};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"EPRC";
const VERSION: u32 = 1;

/// Everything a checkpoint holds.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Sgd>,
    pub config_digest: u64,
}

/// FNV-1a over the canonical config string; stable across runs.
pub fn config_digest(canonical: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in canonical.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    optimizer: Option<&Sgd>,
    config_digest: u64,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u64(&mut buf, config_digest);

    put_str(&mut buf, &model.preset);
    for d in model.input_shape {
        put_u32(&mut buf, d as u32);
    }
    put_u32(&mut buf, model.classes as u32);
    put_u32(&mut buf, model.stage_count as u32);

    put_u32(&mut buf, model.blocks.len() as u32);
    for block in &model.blocks {
        match block {
            Block::Plain(b) => {
                buf.push(0);
                put_u32(&mut buf, b.stage as u32);
                put_conv(&mut buf, &b.conv);
                match &b.bn {
                    Some(bn) => {
                        buf.push(1);
                        put_bn(&mut buf, bn);
                    }
                    None => buf.push(0),
                }
                buf.push(b.relu as u8);
            }
            Block::Residual(b) => {
                buf.push(1);
                put_u32(&mut buf, b.stage as u32);
                put_conv(&mut buf, &b.conv1);
                put_bn(&mut buf, &b.bn1);
                put_conv(&mut buf, &b.conv2);
                put_bn(&mut buf, &b.bn2);
            }
        }
    }
    put_str(&mut buf, model.classifier.name());
    put_tensor(&mut buf, model.classifier.weights());
    put_tensor(&mut buf, model.classifier.bias());

    match optimizer.and_then(|o| o.velocity().map(|v| (o, v))) {
        Some((opt, velocity)) => {
            buf.push(1);
            put_f64(&mut buf, opt.momentum());
            put_f64(&mut buf, opt.weight_decay());
            put_u32(&mut buf, velocity.len() as u32);
            for t in velocity {
                put_tensor(&mut buf, t);
            }
        }
        None => buf.push(0),
    }

    let mut file = fs::File::create(path)
        .map_err(|e| Error::Checkpoint(format!("create {}: {e}", path.display())))?;
    file.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    let mut cur = Reader {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let config_digest = cur.u64()?;

    let preset = cur.str()?;
    let input_shape = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
    let classes = cur.u32()? as usize;
    let stage_count = cur.u32()? as usize;

    let n_blocks = cur.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        match cur.u8()? {
            0 => {
                let stage = cur.u32()? as usize;
                let conv = get_conv(&mut cur)?;
                let bn = match cur.u8()? {
                    1 => Some(get_bn(&mut cur)?),
                    _ => None,
                };
                let relu = cur.u8()? != 0;
                blocks.push(Block::Plain(ConvBlock {
                    conv,
                    bn,
                    relu,
                    stage,
                }));
            }
            1 => {
                let stage = cur.u32()? as usize;
                blocks.push(Block::Residual(ResidualBlock {
                    conv1: get_conv(&mut cur)?,
                    bn1: get_bn(&mut cur)?,
                    conv2: get_conv(&mut cur)?,
                    bn2: get_bn(&mut cur)?,
                    stage,
                }));
            }
            tag => {
                return Err(Error::Checkpoint(format!("unknown block tag {tag}")));
            }
        }
    }
    let fc_name = cur.str()?;
    let fc_w = cur.tensor()?;
    let fc_b = cur.tensor()?;
    let model = Model {
        preset,
        input_shape,
        classes,
        stage_count,
        blocks,
        classifier: DenseLayer::new(fc_name, fc_w, fc_b),
    };
    model.validate()?;

    let optimizer = match cur.u8()? {
        1 => {
            let momentum = cur.f64()?;
            let weight_decay = cur.f64()?;
            let n = cur.u32()? as usize;
            let mut velocity = Vec::with_capacity(n);
            for _ in 0..n {
                velocity.push(cur.tensor()?);
            }
            let mut sgd = Sgd::new(momentum, weight_decay);
            sgd.set_velocity(velocity);
            Some(sgd)
        }
        _ => None,
    };

    Ok(Checkpoint {
        model,
        optimizer,
        config_digest,
    })
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: Scalar) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    put_u32(buf, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(buf, d as u32);
    }
    for &v in t.data() {
        put_f64(buf, v);
    }
}

fn put_conv(buf: &mut Vec<u8>, conv: &ConvLayer) {
    put_str(buf, conv.name());
    put_u32(buf, conv.stride() as u32);
    put_u32(buf, conv.padding() as u32);
    buf.push(conv.prunable() as u8);
    put_tensor(buf, conv.weights());
    match conv.bias() {
        Some(b) => {
            buf.push(1);
            put_tensor(buf, b);
        }
        None => buf.push(0),
    }
}

fn put_bn(buf: &mut Vec<u8>, bn: &BatchNormLayer) {
    put_str(buf, bn.name());
    put_f64(buf, bn.epsilon());
    put_tensor(buf, bn.scale());
    put_tensor(buf, bn.shift());
    put_tensor(buf, bn.running_mean());
    put_tensor(buf, bn.running_var());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("checkpoint truncated".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let s = self.take(8)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<Scalar> {
        let s = self.take(8)?;
        Ok(Scalar::from_le_bytes(s.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let s = self.take(n)?;
        String::from_utf8(s.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf8 in checkpoint".to_string()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Ok(Tensor::from_vec(shape, data))
    }
}

fn get_conv(cur: &mut Reader) -> Result<ConvLayer> {
    let name = cur.str()?;
    let stride = cur.u32()? as usize;
    let padding = cur.u32()? as usize;
    let prunable = cur.u8()? != 0;
    let weights = cur.tensor()?;
    let bias = match cur.u8()? {
        1 => Some(cur.tensor()?),
        _ => None,
    };
    Ok(ConvLayer::new(name, weights, bias, stride, padding, prunable))
}

fn get_bn(cur: &mut Reader) -> Result<BatchNormLayer> {
    let name = cur.str()?;
    let epsilon = cur.f64()?;
    let scale = cur.tensor()?;
    let shift = cur.tensor()?;
    let running_mean = cur.tensor()?;
    let running_var = cur.tensor()?;
    Ok(BatchNormLayer::from_parts(
        name,
        scale,
        shift,
        running_mean,
        running_var,
        epsilon,
    ))
}
