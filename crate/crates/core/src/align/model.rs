use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::EncodingConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameter tensors of the three single-layer encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    QueryWeight,
    QueryBias,
    KeyWeight,
    KeyBias,
    ValueWeight,
    ValueBias,
}

impl ParamKind {
    /// Serialization order.
    pub const ALL: [ParamKind; 6] = [
        Self::QueryWeight,
        Self::QueryBias,
        Self::KeyWeight,
        Self::KeyBias,
        Self::ValueWeight,
        Self::ValueBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::QueryWeight => "W_q",
            Self::QueryBias => "b_q",
            Self::KeyWeight => "W_k",
            Self::KeyBias => "b_k",
            Self::ValueWeight => "W_v",
            Self::ValueBias => "b_v",
        }
    }

    pub fn is_weight(self) -> bool {
        matches!(self, Self::QueryWeight | Self::KeyWeight | Self::ValueWeight)
    }

    pub fn len(self, channels: usize) -> usize {
        if self.is_weight() {
            channels * channels
        } else {
            channels
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Six parameter tensors in [`ParamKind::ALL`] order. Weights are `C x C`
/// row-major with `y[o] = sum_i W[o][i] x[i] + b[o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub(crate) tensors: [Vec<T>; 6],
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(channels: usize) -> Self {
        Self {
            tensors: ParamKind::ALL.map(|k| vec![T::zero(); k.len(channels)]),
        }
    }

    pub fn get(&self, kind: ParamKind) -> &[T] {
        &self.tensors[kind as usize]
    }

    pub fn get_mut(&mut self, kind: ParamKind) -> &mut [T] {
        &mut self.tensors[kind as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKind, &[T])> {
        ParamKind::ALL
            .into_iter()
            .zip(self.tensors.iter().map(|t| t.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate `index` of the flattened parameter vector.
    pub fn flat_locate(&self, mut index: usize) -> (ParamKind, usize) {
        for kind in ParamKind::ALL {
            let n = self.get(kind).len();
            if index < n {
                return (kind, index);
            }
            index -= n;
        }
        panic!("flat parameter index out of range");
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .clone()
                .map(|t| t.into_iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect()),
        }
    }
}

/// Parameters and configuration of the implicit alignment operator.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignModel<T = f32> {
    channels: usize,
    heads: usize,
    window: usize,
    encoding: EncodingConfig,
    pub params: ParamSet<T>,
    /// Add the decimal-offset encoding to the query input.
    pub pe_decimal: bool,
    /// Add the window-index encoding to the key/value inputs.
    pub pe_window: bool,
}

impl<T: Scalar> AlignModel<T> {
    /// All-zero parameters. `channels` must be divisible by 4 and by `heads`.
    pub fn zeros(channels: usize, heads: usize, window: usize) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "channel count {channels} must be a positive multiple of 4"
            )));
        }
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "channel count {channels} is not divisible by {heads} heads"
            )));
        }
        if window == 0 {
            return Err(Error::InvalidArgument("window size must be >= 1".into()));
        }
        Ok(Self {
            channels,
            heads,
            window,
            encoding: EncodingConfig::new(channels / 4)?,
            params: ParamSet::zeros(channels),
            pe_decimal: true,
            pe_window: true,
        })
    }

    /// Weights uniform in `[-1/sqrt(C), 1/sqrt(C)]`, biases zero.
    pub fn init(channels: usize, heads: usize, window: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(channels, heads, window)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (channels as f64).sqrt();
        for kind in ParamKind::ALL.into_iter().filter(|k| k.is_weight()) {
            for w in model.params.get_mut(kind) {
                *w = T::from_f64_lossy(rng.gen_range(-bound..=bound));
            }
        }
        Ok(model)
    }

    pub fn with_positional_encodings(mut self, decimal: bool, window: bool) -> Self {
        self.pe_decimal = decimal;
        self.pe_window = window;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of window pixels, `w^2`.
    pub fn window_len(&self) -> usize {
        self.window * self.window
    }

    pub fn encoding(&self) -> &EncodingConfig {
        &self.encoding
    }

    pub fn param(&self, kind: ParamKind) -> &[T] {
        self.params.get(kind)
    }

    pub fn param_mut(&mut self, kind: ParamKind) -> &mut [T] {
        self.params.get_mut(kind)
    }

    pub fn is_finite(&self) -> bool {
        self.params.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> AlignModel<U> {
        AlignModel {
            channels: self.channels,
            heads: self.heads,
            window: self.window,
            encoding: self.encoding,
            params: self.params.cast(),
            pe_decimal: self.pe_decimal,
            pe_window: self.pe_window,
        }
    }
}

const MODEL_MAGIC: &[u8; 4] = b"IAV1";

/// `IAV1`, `i32` C, D, w, h, then `W_q, b_q, W_k, b_k, W_v, b_v` as
/// little-endian `f32`. Positional-encoding switches are not stored.
pub fn encode_model<T: Scalar>(model: &AlignModel<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * model.params.len());
    out.extend_from_slice(MODEL_MAGIC);
    for v in [model.channels, model.encoding.bands, model.window, model.heads] {
        out.extend_from_slice(&(v as i32).to_le_bytes());
    }
    for (_, tensor) in model.params.iter() {
        for v in tensor {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<AlignModel<f32>> {
    if bytes.len() < 20 {
        return Err(Error::parse(bytes.len(), "truncated model header"));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(Error::parse(0, "bad model magic (expected IAV1)"));
    }
    let field = |i: usize| -> Result<usize> {
        let at = 4 + 4 * i;
        let v = i32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
        usize::try_from(v).map_err(|_| Error::parse(at, format!("negative header field {v}")))
    };
    let (channels, bands, window, heads) = (field(0)?, field(1)?, field(2)?, field(3)?);
    let mut model = AlignModel::<f32>::zeros(channels, heads, window).map_err(|e| Error::parse(4, e.to_string()))?;
    if bands != model.encoding.bands {
        return Err(Error::parse(
            8,
            format!("band count {bands} does not match C/4 = {}", channels / 4),
        ));
    }
    let expected = 20 + 4 * model.params.len();
    if bytes.len() != expected {
        return Err(Error::parse(
            bytes.len().min(expected),
            format!(
                "model payload is {} bytes, expected {}",
                bytes.len() - 20,
                expected - 20
            ),
        ));
    }
    let mut at = 20;
    for kind in ParamKind::ALL {
        for v in model.params.get_mut(kind) {
            *v = f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
            if !v.is_finite() {
                return Err(Error::parse(at, format!("non-finite value in {kind}")));
            }
            at += 4;
        }
    }
    Ok(model)
}

pub fn write_model<T: Scalar>(model: &AlignModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<AlignModel<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
