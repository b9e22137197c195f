//! FSCK checkpoint container.
//!
//! Layout (little-endian): magic `FSCK`, `u32` version = 1, `u32` entry
//! count; per entry `u32` name length, UTF-8 name, `u32` ndim, `u32` dims,
//! `f32` payload; then a `u32`-length-prefixed UTF-8 block of `key=value`
//! lines echoing the training configuration and run counters.
//!
//! Entries are the network parameters (`selector.*`, `reconstructor.*`)
//! followed by the Adam moments (`adam.m.*`, then `adam.v.*`).

use std::fs;
use std::path::Path;

use crate::data::Reader;
use crate::error::{Error, Result};
use crate::networks::{init_networks, ReconstructorNetwork, SelectorNetwork};
use crate::objective::{assign_parameters, named_parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{parse_kv_lines, TrainConfig};

pub const FSCK_MAGIC: &[u8; 4] = b"FSCK";
pub const FSCK_VERSION: u32 = 1;
/// Identifies how random streams are derived from the seed.
pub const RNG_SCHEME: &str = "chacha8-labeled-v1";

const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed optimizer steps.
    pub step: u64,
    /// Named parameters, selector first.
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam_m: Vec<Tensor<f32>>,
    pub adam_v: Vec<Tensor<f32>>,
}

/// Name and shape of one stored tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntryHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.adam_m.len() != self.params.len() || self.adam_v.len() != self.params.len() {
            return Err(Error::config("moment count differs from parameter count"));
        }
        let entries = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t))
            .chain(self.params.iter().zip(&self.adam_m).map(|((n, _), m)| (format!("{MOMENT_M}{n}"), m)))
            .chain(self.params.iter().zip(&self.adam_v).map(|((n, _), v)| (format!("{MOMENT_V}{n}"), v)));

        let mut out = Vec::new();
        out.extend_from_slice(FSCK_MAGIC);
        out.extend_from_slice(&FSCK_VERSION.to_le_bytes());
        put_u32(&mut out, self.params.len() * 3)?;
        for (name, t) in entries {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let block = self.config_block();
        put_u32(&mut out, block.len())?;
        out.extend_from_slice(block.as_bytes());
        Ok(out)
    }

    fn config_block(&self) -> String {
        let mut s = self.config.to_kv_text();
        s.push_str(&format!("step={}\n", self.step));
        s.push_str(&format!("rng_scheme={RNG_SCHEME}\n"));
        s
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (entries, block) = read_entries(bytes, true)?;
        let mut config = TrainConfig::default();
        let mut step = None;
        for (k, v) in parse_kv_lines(&block)? {
            match k.as_str() {
                "step" => {
                    step = Some(v.parse::<u64>().map_err(|e| Error::Format {
                        offset: 0,
                        msg: format!("bad step counter {v:?}: {e}"),
                    })?)
                }
                "rng_scheme" if v == RNG_SCHEME => {}
                "rng_scheme" => {
                    return Err(Error::config(format!("unsupported rng scheme {v:?}")));
                }
                _ => config.set(&k, &v)?,
            }
        }
        let step = step.ok_or_else(|| Error::config("checkpoint lacks a step counter"))?;

        if entries.len() % 3 != 0 {
            return Err(Error::config(format!("{} entries is not a multiple of 3", entries.len())));
        }
        let n = entries.len() / 3;
        let mut it = entries
            .into_iter()
            .map(|(name, shape, data)| Ok((name, Tensor::new(shape, data)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let params: Vec<(String, Tensor<f32>)> = it.by_ref().take(n).collect();
        let mut moments = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
            params
                .iter()
                .map(|(pn, pt)| {
                    let (name, t) = it.next().expect("count checked");
                    if name != format!("{prefix}{pn}") || t.shape() != pt.shape() {
                        return Err(Error::config(format!("moment entry {name:?} does not match {pn:?}")));
                    }
                    Ok(t)
                })
                .collect()
        };
        let adam_m = moments(MOMENT_M)?;
        let adam_v = moments(MOMENT_V)?;
        Ok(Checkpoint {
            config,
            step,
            params,
            adam_m,
            adam_v,
        })
    }
}

impl Checkpoint {
    /// Rebuilds both networks at precision `T` from the stored parameters.
    pub fn networks<T: Scalar>(&self) -> Result<(SelectorNetwork<T>, ReconstructorNetwork<T>)> {
        self.config.validate()?;
        let (mut selector, mut reconstructor) = init_networks::<T>(&self.config.network()?, self.config.seed)?;
        let expected = named_parameters(&selector, &reconstructor);
        if expected.len() != self.params.len()
            || expected.iter().zip(&self.params).any(|((a, _), (b, _))| a != b)
        {
            return Err(Error::config("checkpoint parameter names do not match the architecture"));
        }
        let values: Vec<Tensor<T>> = self.params.iter().map(|(_, t)| t.cast()).collect();
        assign_parameters(&mut selector, &mut reconstructor, &values)?;
        Ok((selector, reconstructor))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

type RawEntry = (String, Vec<usize>, Vec<f32>);

fn read_entries(bytes: &[u8], with_payload: bool) -> Result<(Vec<RawEntry>, String)> {
    let mut r = Reader::new(bytes);
    r.header(FSCK_MAGIC, FSCK_VERSION)?;
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = r.string(len, "entry name")?;
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.fail(format!("{name}: element count overflows")))?;
        let payload = if with_payload {
            r.f32s(n, "tensor payload")?
        } else {
            r.bytes(n.checked_mul(4).ok_or_else(|| r.fail("payload overflows"))?, "tensor payload")?;
            Vec::new()
        };
        entries.push((name, shape, payload));
    }
    let len = r.u32("config length")? as usize;
    let block = r.string(len, "config block")?;
    if r.remaining() != 0 {
        return Err(r.fail(format!("{} trailing bytes", r.remaining())));
    }
    Ok((entries, block))
}

/// Entry names and shapes plus the raw config block, without payloads.
pub fn decode_checkpoint_headers(bytes: &[u8]) -> Result<(Vec<EntryHeader>, String)> {
    let (entries, block) = read_entries(bytes, false)?;
    let headers = entries
        .into_iter()
        .map(|(name, shape, _)| EntryHeader { name, shape })
        .collect();
    Ok((headers, block))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ckpt.encode()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}
