//! INT8 post-training quantization: tensor-wise, channel-wise and
//! smoothed (activation-to-weight magnitude migration) schemes.
//!
//! Rounding is round-half-to-even everywhere. Symmetric mode maps
//! `[-max|x|, max|x|]` onto `[-127, 127]` with a zero point of 0; asymmetric
//! mode maps `[min(x, 0), max(x, 0)]` onto `[-128, 127]`.

mod exact_f32;
mod smooth;

use serde::{Deserialize, Serialize};

use crate::tensorio::Tensor;
use crate::{Error, Result};

pub use smooth::{
    apply_smoothing, compute_smoothing_factors, quantize_smoothed, SmoothTarget, SmoothingVector,
    SMOOTHING_EPSILON,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    #[default]
    Symmetric,
    Asymmetric,
}

impl QuantMode {
    fn range(self) -> (i32, i32) {
        match self {
            QuantMode::Symmetric => (-127, 127),
            QuantMode::Asymmetric => (-128, 127),
        }
    }
}

/// Channel direction of a `[rows, cols]` matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// One channel per row (per-output-channel for `[out, in]` weights).
    #[default]
    Row,
    Column,
}

/// Scale and zero point of one affine int8 map: `x ≈ (q - zero_point) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    #[serde(with = "exact_f32")]
    pub scale: f32,
    pub zero_point: i8,
}

impl Affine {
    pub const DEGENERATE: Affine = Affine {
        scale: 1.0,
        zero_point: 0,
    };

    /// Parameters covering `[min, max]` (already finite).
    pub fn fit(min: f32, max: f32, mode: QuantMode) -> Affine {
        match mode {
            QuantMode::Symmetric => {
                let amax = min.abs().max(max.abs());
                if amax == 0.0 {
                    return Affine::DEGENERATE;
                }
                Affine {
                    scale: (amax / 127.0).max(f32::MIN_POSITIVE),
                    zero_point: 0,
                }
            }
            QuantMode::Asymmetric => {
                let (lo, hi) = (min.min(0.0), max.max(0.0));
                if hi == lo {
                    return Affine::DEGENERATE;
                }
                let scale = ((hi as f64 - lo as f64) / 255.0).max(f32::MIN_POSITIVE as f64) as f32;
                let zp = (-128.0 - lo as f64 / scale as f64).round_ties_even();
                Affine {
                    scale,
                    zero_point: zp.clamp(-128.0, 127.0) as i8,
                }
            }
        }
    }

    #[inline]
    pub fn quantize(&self, x: f32, mode: QuantMode) -> i8 {
        let (lo, hi) = mode.range();
        let q = (x / self.scale).round_ties_even() as i32 + self.zero_point as i32;
        q.clamp(lo, hi) as i8
    }

    #[inline]
    pub fn dequantize(&self, q: i8) -> f32 {
        (q as i32 - self.zero_point as i32) as f32 * self.scale
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Validation(format!(
                "{what}: scale must be finite and > 0, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantScheme {
    TensorWise(Affine),
    ChannelWise {
        axis: Axis,
        #[serde(with = "exact_f32::vec")]
        scales: Vec<f32>,
        zero_points: Vec<i8>,
    },
    /// Tensor-wise quantization of a smoothed tensor. Dequantization undoes
    /// the smoothing, so errors are measured in the original space.
    Smoothed {
        target: SmoothTarget,
        smoothing: SmoothingVector,
        inner: Affine,
    },
}

impl QuantScheme {
    pub fn name(&self) -> &'static str {
        match self {
            QuantScheme::TensorWise(_) => "tensor",
            QuantScheme::ChannelWise { .. } => "channel",
            QuantScheme::Smoothed { .. } => "smooth",
        }
    }
}

/// int8 payload with the scheme needed to dequantize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub mode: QuantMode,
    pub scheme: QuantScheme,
    #[serde(skip)]
    pub data: Vec<i8>,
}

impl QuantizedTensor {
    /// Checks every structural invariant; used on anything read from disk.
    pub fn validate(&self) -> Result<()> {
        let numel = crate::tensorio::check_shape(&self.name, &self.shape)?;
        if self.data.len() != numel {
            return Err(Error::Shape(format!(
                "quantized tensor '{}': shape {:?} needs {numel} values, got {}",
                self.name,
                self.shape,
                self.data.len()
            )));
        }
        let what = format!("quantized tensor '{}'", self.name);
        match &self.scheme {
            QuantScheme::TensorWise(a) => a.validate(&what)?,
            QuantScheme::ChannelWise {
                axis,
                scales,
                zero_points,
            } => {
                let (rows, cols) = dims2(&self.name, &self.shape)?;
                let n = match axis {
                    Axis::Row => rows,
                    Axis::Column => cols,
                };
                if scales.len() != n || zero_points.len() != n {
                    return Err(Error::Validation(format!(
                        "{what}: {n} channels but {} scales / {} zero points",
                        scales.len(),
                        zero_points.len()
                    )));
                }
                for (&scale, &zero_point) in scales.iter().zip(zero_points) {
                    Affine { scale, zero_point }.validate(&what)?;
                }
            }
            QuantScheme::Smoothed {
                target,
                smoothing,
                inner,
            } => {
                inner.validate(&what)?;
                smoothing.validate()?;
                let (rows, cols) = dims2(&self.name, &self.shape)?;
                let n = match target {
                    SmoothTarget::Activation => cols,
                    SmoothTarget::Weight => rows,
                };
                if smoothing.len() != n {
                    return Err(Error::Shape(format!(
                        "{what}: smoothing vector has {} entries, expected {n}",
                        smoothing.len()
                    )));
                }
            }
        }
        if self.mode == QuantMode::Symmetric {
            if let Some(i) = self.data.iter().position(|&q| q == -128) {
                return Err(Error::Validation(format!(
                    "{what}: value -128 at index {i} is outside the symmetric range"
                )));
            }
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Payload reinterpreted as unsigned bytes (the codec input).
    pub fn bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&q| q as u8).collect()
    }

    pub fn as_bytes(&self) -> &[u8] {
        // SAFETY: i8 and u8 have identical size and alignment.
        unsafe { std::slice::from_raw_parts(self.data.as_ptr().cast::<u8>(), self.data.len()) }
    }
}

fn dims2(name: &str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!(
            "tensor '{name}': expected a rank-2 matrix, got shape {s:?}"
        ))),
    }
}

fn float_data(t: &Tensor) -> Result<&[f32]> {
    t.as_f32().ok_or_else(|| {
        Error::Unsupported(format!("tensor '{}': quantization needs float32 input", t.name()))
    })
}

fn min_max(values: impl Iterator<Item = f32>) -> (f32, f32) {
    values.fold((0.0f32, 0.0f32), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// One scale (and zero point) for the whole tensor.
pub fn quantize_tensor_wise(t: &Tensor, mode: QuantMode) -> Result<QuantizedTensor> {
    let data = float_data(t)?;
    let (lo, hi) = min_max(data.iter().copied());
    let affine = Affine::fit(lo, hi, mode);
    Ok(QuantizedTensor {
        name: t.name().to_owned(),
        shape: t.shape().to_vec(),
        mode,
        scheme: QuantScheme::TensorWise(affine),
        data: data.iter().map(|&x| affine.quantize(x, mode)).collect(),
    })
}

/// Independent scale per row or column of a rank-2 tensor.
pub fn quantize_channel_wise(t: &Tensor, axis: Axis, mode: QuantMode) -> Result<QuantizedTensor> {
    let (rows, cols, data) = t.matrix_f32()?;
    let params: Vec<Affine> = match axis {
        Axis::Row => (0..rows)
            .map(|r| {
                let (lo, hi) = min_max(data[r * cols..(r + 1) * cols].iter().copied());
                Affine::fit(lo, hi, mode)
            })
            .collect(),
        Axis::Column => {
            let mut lo = vec![0.0f32; cols];
            let mut hi = vec![0.0f32; cols];
            for row in data.chunks_exact(cols) {
                for (j, &x) in row.iter().enumerate() {
                    lo[j] = lo[j].min(x);
                    hi[j] = hi[j].max(x);
                }
            }
            lo.iter().zip(&hi).map(|(&l, &h)| Affine::fit(l, h, mode)).collect()
        }
    };
    let q = data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let ch = match axis {
                Axis::Row => i / cols,
                Axis::Column => i % cols,
            };
            params[ch].quantize(x, mode)
        })
        .collect();
    Ok(QuantizedTensor {
        name: t.name().to_owned(),
        shape: t.shape().to_vec(),
        mode,
        scheme: QuantScheme::ChannelWise {
            axis,
            scales: params.iter().map(|a| a.scale).collect(),
            zero_points: params.iter().map(|a| a.zero_point).collect(),
        },
        data: q,
    })
}

/// `(q - zero_point) * scale`, with smoothing undone for smoothed schemes.
pub fn dequantize(q: &QuantizedTensor) -> Result<Tensor> {
    let values: Vec<f32> = match &q.scheme {
        QuantScheme::TensorWise(a) => q.data.iter().map(|&v| a.dequantize(v)).collect(),
        QuantScheme::ChannelWise {
            axis,
            scales,
            zero_points,
        } => {
            let (_, cols) = dims2(&q.name, &q.shape)?;
            q.data
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ch = match axis {
                        Axis::Row => i / cols,
                        Axis::Column => i % cols,
                    };
                    Affine {
                        scale: scales[ch],
                        zero_point: zero_points[ch],
                    }
                    .dequantize(v)
                })
                .collect()
        }
        QuantScheme::Smoothed {
            target,
            smoothing,
            inner,
        } => {
            let (_, cols) = dims2(&q.name, &q.shape)?;
            let s = smoothing.factors();
            q.data
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let x = inner.dequantize(v);
                    match target {
                        SmoothTarget::Activation => x * s[i % cols],
                        SmoothTarget::Weight => x / s[i / cols],
                    }
                })
                .collect()
        }
    };
    Tensor::from_f32(q.name.clone(), q.shape.clone(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub mse: f64,
    pub max_abs_err: f64,
    pub relative_frobenius_err: f64,
}

/// Reconstruction error of `dequantize(q)` against `orig`.
pub fn quant_error(orig: &Tensor, q: &QuantizedTensor) -> Result<ErrorReport> {
    if orig.shape() != q.shape.as_slice() {
        return Err(Error::Shape(format!(
            "original shape {:?} differs from quantized shape {:?}",
            orig.shape(),
            q.shape
        )));
    }
    let x = float_data(orig)?;
    let deq = dequantize(q)?;
    let d = deq.as_f32().expect("dequantize yields float32");
    Ok(error_between(x, d))
}

pub(crate) fn error_between(x: &[f32], d: &[f32]) -> ErrorReport {
    let (mut se, mut max_abs, mut norm) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(d) {
        let e = b as f64 - a as f64;
        se += e * e;
        max_abs = max_abs.max(e.abs());
        norm += a as f64 * a as f64;
    }
    let relative_frobenius_err = if norm > 0.0 {
        (se / norm).sqrt()
    } else if se == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    ErrorReport {
        mse: se / x.len().max(1) as f64,
        max_abs_err: max_abs,
        relative_frobenius_err,
    }
}
