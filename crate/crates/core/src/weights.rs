//! Named parameter storage, the `MCSRW` binary format, and parameter sources
//! used to assemble typed layer weights.
//!
//! Layout of a weight file (all integers little-endian):
//!
//! ```text
//! "MCSRW"            5 bytes
//! version            u32 (currently 1)
//! tensor count       u32
//! per tensor:
//!   name length      u16, followed by UTF-8 name
//!   ndim             u8, followed by ndim × u32 dims
//!   payload          prod(dims) × f32
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ConvSpec;

pub const WEIGHT_MAGIC: &[u8; 5] = b"MCSRW";
pub const WEIGHT_VERSION: u32 = 1;

/// Amplitude of the seeded uniform initializer.
pub const INIT_SCALE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::input(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { dims, values })
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Ordered map from dotted parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHT_MAGIC);
        buf.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len())
                .map_err(|_| Error::input(format!("tensor name too long: {name}")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(nb);
            let ndim = u8::try_from(t.dims.len())
                .map_err(|_| Error::input(format!("too many dims for {name}")))?;
            buf.push(ndim);
            for &d in &t.dims {
                let d = u32::try_from(d).map_err(|_| Error::input(format!("dim too large in {name}")))?;
                buf.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(5, "magic")?;
        if magic != WEIGHT_MAGIC {
            return Err(Error::Corrupt { offset: 0, reason: "bad magic, expected MCSRW".into() });
        }
        let version_at = r.pos;
        let version = r.u32("version")?;
        if version != WEIGHT_VERSION {
            return Err(Error::Corrupt {
                offset: version_at as u64,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = r.u32("tensor count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_at = r.pos;
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Corrupt { offset: name_at as u64, reason: "name is not UTF-8".into() })?
                .to_string();
            let ndim = r.take(1, "ndim")?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32("dim")? as usize);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Corrupt { offset: r.pos as u64, reason: "dims overflow".into() })?;
            let payload_len = numel
                .checked_mul(4)
                .ok_or_else(|| Error::Corrupt { offset: r.pos as u64, reason: "payload overflow".into() })?;
            let payload = r.take(payload_len, "payload")?;
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if store.tensors.contains_key(&name) {
                return Err(Error::Corrupt { offset: name_at as u64, reason: format!("duplicate tensor {name}") });
            }
            store.tensors.insert(name, Tensor { dims, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt { offset: r.pos as u64, reason: "trailing bytes".into() });
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

// ---------------------------------------------------------------------------
// parameter sources

/// How a parameter is initialized when it is generated rather than loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Layer-norm gain, initialized to one.
    NormGain,
}

/// Supplies parameter values by name while typed layer weights are assembled.
pub trait ParamSource {
    fn take(&mut self, name: &str, dims: &[usize], kind: ParamKind) -> Result<Vec<f64>>;
}

/// 64-bit LCG; each draw returns the high 32 bits of the new state.
#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg { state: seed }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.state = self
            .state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.state >> 32) as u32
    }

    /// Uniform in `[-1, 1)`.
    pub fn next_symmetric(&mut self) -> f64 {
        self.next_u32() as f64 / 2_147_483_648.0 - 1.0
    }
}

/// Seeded uniform initializer in `[-INIT_SCALE, INIT_SCALE)`, rounded to f32 so
/// that a generated model and its saved weight file behave identically.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: Lcg,
    scale: f64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { rng: Lcg::new(seed), scale: INIT_SCALE }
    }

    pub fn with_scale(seed: u64, scale: f64) -> Self {
        RandomSource { rng: Lcg::new(seed), scale }
    }
}

impl ParamSource for RandomSource {
    fn take(&mut self, _name: &str, dims: &[usize], kind: ParamKind) -> Result<Vec<f64>> {
        let n: usize = dims.iter().product();
        Ok(match kind {
            ParamKind::NormGain => vec![1.0; n],
            _ => (0..n)
                .map(|_| (self.rng.next_symmetric() * self.scale) as f32 as f64)
                .collect(),
        })
    }
}

/// All-zero weights and biases, unit norm gains.
#[derive(Debug, Clone, Default)]
pub struct ZeroSource;

impl ParamSource for ZeroSource {
    fn take(&mut self, _name: &str, dims: &[usize], kind: ParamKind) -> Result<Vec<f64>> {
        let n: usize = dims.iter().product();
        Ok(vec![if kind == ParamKind::NormGain { 1.0 } else { 0.0 }; n])
    }
}

/// Wraps another source and records every `(name, dims)` it hands out.
pub struct Recording<S> {
    pub inner: S,
    pub store: WeightStore,
}

impl<S: ParamSource> Recording<S> {
    pub fn new(inner: S) -> Self {
        Recording { inner, store: WeightStore::new() }
    }
}

impl<S: ParamSource> ParamSource for Recording<S> {
    fn take(&mut self, name: &str, dims: &[usize], kind: ParamKind) -> Result<Vec<f64>> {
        let v = self.inner.take(name, dims, kind)?;
        let t = Tensor { dims: dims.to_vec(), values: v.iter().map(|&x| x as f32).collect() };
        if self.store.insert(name, t).is_some() {
            return Err(Error::config(format!("parameter {name} requested twice")));
        }
        Ok(v)
    }
}

/// Reads parameters from a [`WeightStore`], collecting missing names instead of
/// failing on the first one. Call [`StoreSource::finish`] once assembly is done.
pub struct StoreSource<'a> {
    store: &'a WeightStore,
    used: BTreeSet<String>,
    missing: Vec<String>,
}

impl<'a> StoreSource<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        StoreSource { store, used: BTreeSet::new(), missing: Vec::new() }
    }

    /// Fails with every missing name, then with every name never read.
    pub fn finish(self) -> Result<()> {
        if !self.missing.is_empty() {
            return Err(Error::MissingWeights(self.missing));
        }
        let unknown: Vec<String> = self
            .store
            .names()
            .filter(|n| !self.used.contains(*n))
            .map(str::to_string)
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownWeights(unknown));
        }
        Ok(())
    }
}

impl ParamSource for StoreSource<'_> {
    fn take(&mut self, name: &str, dims: &[usize], _kind: ParamKind) -> Result<Vec<f64>> {
        let n: usize = dims.iter().product();
        match self.store.get(name) {
            None => {
                self.missing.push(name.to_string());
                Ok(vec![0.0; n])
            }
            Some(t) => {
                if t.dims != dims {
                    return Err(Error::input(format!(
                        "weight {name} has dims {:?}, expected {dims:?}",
                        t.dims
                    )));
                }
                self.used.insert(name.to_string());
                Ok(t.values.iter().map(|&v| v as f64).collect())
            }
        }
    }
}

/// Reads a 3×3 convolution `{prefix}.weight` (`out × in × 3 × 3`) and `{prefix}.bias`.
pub fn take_conv(
    src: &mut dyn ParamSource,
    prefix: &str,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
) -> Result<ConvSpec> {
    let w = src.take(&format!("{prefix}.weight"), &[out_channels, in_channels, 3, 3], ParamKind::Weight)?;
    let b = src.take(&format!("{prefix}.bias"), &[out_channels], ParamKind::Bias)?;
    ConvSpec::new(in_channels, out_channels, stride, w, b)
}

/// Reads a stride-2 transposed convolution, weight laid out `in × out × 3 × 3`.
pub fn take_conv_transpose(
    src: &mut dyn ParamSource,
    prefix: &str,
    in_channels: usize,
    out_channels: usize,
) -> Result<ConvSpec> {
    let w = src.take(&format!("{prefix}.weight"), &[in_channels, out_channels, 3, 3], ParamKind::Weight)?;
    let b = src.take(&format!("{prefix}.bias"), &[out_channels], ParamKind::Bias)?;
    ConvSpec::new(in_channels, out_channels, 2, w, b)
}
