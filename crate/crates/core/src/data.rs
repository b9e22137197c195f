//! Feature sets, the FSEL binary container and the planted-redundancy
//! synthetic corpus.
//!
//! FSEL layout (little-endian): magic `FSEL`, `u32` version = 1, `u32`
//! record count; then per record `u32` id length, UTF-8 id bytes, `u32` L,
//! `u32` C, `u32` H, `u32` W (both zero when no grid), and `L·C` `f32`
//! values in row-major order.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::Tensor;

pub const FSEL_MAGIC: &[u8; 4] = b"FSEL";
pub const FSEL_VERSION: u32 = 1;

/// One image's encoder output: `L` tokens of width `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet<T> {
    pub id: String,
    pub features: Tensor<T>,
    /// Spatial layout `(H, W)` with `H·W == L`, when known.
    pub grid: Option<(usize, usize)>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(id: impl Into<String>, features: Tensor<T>, grid: Option<(usize, usize)>) -> Result<Self> {
        let set = FeatureSet {
            id: id.into(),
            features,
            grid,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn tokens(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let data_err = |msg: String| Error::Data {
            record: self.id.clone(),
            msg,
        };
        if self.features.shape().len() != 2 {
            return Err(data_err(format!("expected a 2-D tensor, got {:?}", self.features.shape())));
        }
        if let Some((h, w)) = self.grid {
            if h * w != self.tokens() {
                return Err(data_err(format!(
                    "grid {h}x{w} does not match {} tokens",
                    self.tokens()
                )));
            }
        }
        if let Some(pos) = self.features.data().iter().position(|v| !v.is_finite()) {
            return Err(data_err(format!("non-finite value at element {pos}")));
        }
        Ok(())
    }
}

/// Checks that every record shares one feature width and returns it.
pub fn common_dim<T: Scalar>(sets: &[FeatureSet<T>]) -> Result<usize> {
    let first = sets
        .first()
        .ok_or_else(|| Error::config("no feature sets supplied"))?;
    let dim = first.dim();
    for s in sets {
        if s.dim() != dim {
            return Err(Error::Data {
                record: s.id.clone(),
                msg: format!("feature width {} differs from {}", s.dim(), dim),
            });
        }
    }
    Ok(dim)
}

pub fn encode_feature_sets(sets: &[FeatureSet<f32>]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(FSEL_MAGIC);
    out.extend_from_slice(&FSEL_VERSION.to_le_bytes());
    put_u32(&mut out, sets.len(), "record count")?;
    for s in sets {
        s.validate()?;
        put_u32(&mut out, s.id.len(), "id length")?;
        out.extend_from_slice(s.id.as_bytes());
        put_u32(&mut out, s.tokens(), "L")?;
        put_u32(&mut out, s.dim(), "C")?;
        let (h, w) = s.grid.unwrap_or((0, 0));
        put_u32(&mut out, h, "H")?;
        put_u32(&mut out, w, "W")?;
        for v in s.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Little-endian cursor that reports byte offsets on failure.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset(),
            msg: msg.into(),
        }
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.fail(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| self.fail(format!("{what} length overflows")))?;
        let b = self.bytes(len, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn string(&mut self, n: usize, what: &str) -> Result<String> {
        let at = self.offset();
        let b = self.bytes(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format {
            offset: at,
            msg: format!("{what} is not valid UTF-8"),
        })
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let m = self.bytes(4, "magic")?;
        if m != magic {
            return Err(Error::Format {
                offset: 0,
                msg: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        let at = self.offset();
        let v = self.u32("version")?;
        if v != version {
            return Err(Error::Format {
                offset: at,
                msg: format!("unsupported version {v}, expected {version}"),
            });
        }
        Ok(())
    }
}

/// Header fields of one FSEL record, without its payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordHeader {
    pub id: String,
    pub tokens: usize,
    pub dim: usize,
    pub grid: Option<(usize, usize)>,
    pub offset: u64,
}

fn read_records(bytes: &[u8], with_payload: bool) -> Result<Vec<(RecordHeader, Vec<f32>)>> {
    let mut r = Reader::new(bytes);
    r.header(FSEL_MAGIC, FSEL_VERSION)?;
    let count = r.u32("record count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let offset = r.offset();
        let id_len = r.u32("id length")? as usize;
        let id = r.string(id_len, "record id")?;
        let tokens = r.u32("L")? as usize;
        let dim = r.u32("C")? as usize;
        let (h, w) = (r.u32("H")? as usize, r.u32("W")? as usize);
        let grid = match (h, w) {
            (0, 0) => None,
            _ => Some((h, w)),
        };
        let n = tokens
            .checked_mul(dim)
            .ok_or_else(|| r.fail("L·C overflows"))?;
        let payload = if with_payload {
            r.f32s(n, "feature payload")?
        } else {
            r.bytes(n.checked_mul(4).ok_or_else(|| r.fail("payload overflows"))?, "feature payload")?;
            Vec::new()
        };
        out.push((
            RecordHeader {
                id,
                tokens,
                dim,
                grid,
                offset,
            },
            payload,
        ));
    }
    if r.remaining() != 0 {
        return Err(r.fail(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

/// Parses and validates an FSEL buffer; nothing is returned on any error.
pub fn decode_feature_sets(bytes: &[u8]) -> Result<Vec<FeatureSet<f32>>> {
    read_records(bytes, true)?
        .into_iter()
        .map(|(h, data)| {
            let features = Tensor::new(vec![h.tokens, h.dim], data)?;
            FeatureSet::new(h.id, features, h.grid)
        })
        .collect()
}

/// Record headers only, for inspection.
pub fn decode_feature_headers(bytes: &[u8]) -> Result<Vec<RecordHeader>> {
    Ok(read_records(bytes, false)?.into_iter().map(|(h, _)| h).collect())
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Vec<FeatureSet<f32>>> {
    decode_feature_sets(&fs::read(path)?)
}

pub fn save_feature_file(path: impl AsRef<Path>, sets: &[FeatureSet<f32>]) -> Result<()> {
    fs::write(path, encode_feature_sets(sets)?)?;
    Ok(())
}

/// Synthetic corpus in which a fixed subset of token positions (the basis)
/// linearly determines every other token.
#[derive(Clone, Debug)]
pub struct PlantedCorpus<T> {
    pub sets: Vec<FeatureSet<T>>,
    /// Sorted basis positions shared by every record.
    pub basis_positions: Vec<usize>,
    /// For each token position: `(basis position, weight)` pairs. Basis
    /// positions map to themselves with weight 1.
    pub mixing: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedSpec {
    pub sets: usize,
    pub tokens: usize,
    pub dim: usize,
    pub rank: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 || self.dim == 0 {
            return Err(Error::config("tokens and dim must be at least 1"));
        }
        if self.rank == 0 || self.rank > self.tokens {
            return Err(Error::config(format!(
                "rank must lie in 1..={} (tokens), got {}",
                self.tokens, self.rank
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

fn square_grid(tokens: usize) -> Option<(usize, usize)> {
    let s = (tokens as f64).sqrt().round() as usize;
    (s * s == tokens).then_some((s, s))
}

/// Builds the planted-redundancy corpus.
///
/// The basis positions and the convex mixing weights of every derived
/// position are drawn once per corpus; each record then draws fresh basis
/// tokens from `N(0, 1)` and mixes them, adding `N(0, σ²)` noise to derived
/// tokens. Derived tokens combine two or three basis tokens (one when the
/// rank is 1). Record `i` depends only on `(seed, i)`, so a longer corpus
/// extends a shorter one with the same seed.
pub fn generate_planted_redundancy<T: Scalar>(spec: &PlantedSpec) -> Result<PlantedCorpus<T>> {
    spec.validate()?;
    let (l, c, rank) = (spec.tokens, spec.dim, spec.rank);
    let mut layout = seed::rng(spec.seed, seed::DATA, &[0]);
    let mut basis_positions = index::sample(&mut layout, l, rank).into_vec();
    basis_positions.sort_unstable();

    let mut mixing = Vec::with_capacity(l);
    for pos in 0..l {
        if let Ok(k) = basis_positions.binary_search(&pos) {
            mixing.push(vec![(k, 1.0)]);
            continue;
        }
        let fan_in = if rank == 1 { 1 } else { layout.random_range(2..=rank.min(3)) };
        let chosen = index::sample(&mut layout, rank, fan_in).into_vec();
        let raw: Vec<f64> = (0..fan_in).map(|_| layout.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        mixing.push(chosen.into_iter().zip(raw.iter().map(|w| w / total)).collect());
    }

    let grid = square_grid(l);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config(e.to_string()))?;
    let mut sets = Vec::with_capacity(spec.sets);
    for i in 0..spec.sets {
        let mut rng = seed::rng(spec.seed, seed::DATA, &[1, i as u64]);
        let basis: Vec<Vec<f64>> = (0..rank)
            .map(|_| (0..c).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut data = Vec::with_capacity(l * c);
        for (pos, mix) in mixing.iter().enumerate() {
            let is_basis = basis_positions.binary_search(&pos).is_ok();
            for j in 0..c {
                let mut v: f64 = mix.iter().map(|&(k, w)| w * basis[k][j]).sum();
                if !is_basis && spec.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                data.push(T::of(v));
            }
        }
        let features = Tensor::new(vec![l, c], data)?;
        sets.push(FeatureSet::new(format!("planted-{i:05}"), features, grid)?);
    }
    let mixing = mixing
        .into_iter()
        .map(|m| m.into_iter().map(|(k, w)| (basis_positions[k], w)).collect())
        .collect();
    Ok(PlantedCorpus {
        sets,
        basis_positions,
        mixing,
    })
}
