//! Per-channel smoothing that migrates activation magnitude into weights:
//! `Y = (X diag(s)^-1) (diag(s) W)`, with
//! `s_j = max|X_j|^alpha / max|W_j|^(1 - alpha)`.
//!
//! Layout: `X` is `[tokens, in]`, `W` is `[in, out]`, so channel `j` is column
//! `j` of `X` and row `j` of `W`.

use serde::{Deserialize, Serialize};

use super::{exact_f32, Affine, QuantMode, QuantScheme, QuantizedTensor};
use crate::tensorio::{ChannelStats, Tensor};
use crate::{Error, Result};

/// Substituted for a zero channel maximum before exponentiation.
pub const SMOOTHING_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothTarget {
    /// Columns were divided by `s`.
    Activation,
    /// Rows were multiplied by `s`.
    Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingVector {
    #[serde(with = "exact_f32::vec")]
    s: Vec<f32>,
    #[serde(with = "exact_f32")]
    alpha: f32,
}

impl SmoothingVector {
    pub fn new(s: Vec<f32>, alpha: f32) -> Result<Self> {
        let v = SmoothingVector { s, alpha };
        v.validate()?;
        Ok(v)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if let Some(i) = self.s.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Validation(format!(
                "smoothing factor {i} must be finite and > 0, got {}",
                self.s[i]
            )));
        }
        Ok(())
    }

    pub fn factors(&self) -> &[f32] {
        &self.s
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// `s_j = act_j^alpha / wmax_j^(1 - alpha)` where `wmax_j` is the max |.| of
/// row `j` of `w`. Zero maxima are replaced by [`SMOOTHING_EPSILON`] with a
/// warning.
pub fn compute_smoothing_factors(
    act: &ChannelStats,
    w: &Tensor,
    alpha: f32,
) -> Result<SmoothingVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let (rows, cols, data) = w.matrix_f32()?;
    if act.len() != rows {
        return Err(Error::Shape(format!(
            "{} activation channels but weight '{}' has {rows} input rows",
            act.len(),
            w.name()
        )));
    }
    let alpha64 = alpha as f64;
    let mut s = Vec::with_capacity(rows);
    for (j, &a) in act.as_slice().iter().enumerate() {
        let wmax = data[j * cols..(j + 1) * cols].iter().fold(0.0f32, |m, x| m.max(x.abs()));
        let mut a = a as f64;
        let mut wm = wmax as f64;
        if a == 0.0 {
            log::warn!("channel {j}: zero activation maximum, using epsilon");
            a = SMOOTHING_EPSILON;
        }
        if wm == 0.0 {
            log::warn!("channel {j}: zero weight maximum in '{}', using epsilon", w.name());
            wm = SMOOTHING_EPSILON;
        }
        s.push((a.powf(alpha64) / wm.powf(1.0 - alpha64)) as f32);
    }
    SmoothingVector::new(s, alpha)
}

/// `(X diag(s)^-1, diag(s) W)`.
pub fn apply_smoothing(x: &Tensor, w: &Tensor, s: &SmoothingVector) -> Result<(Tensor, Tensor)> {
    let (xr, xc, xd) = x.matrix_f32()?;
    let (wr, wc, wd) = w.matrix_f32()?;
    if xc != s.len() || wr != s.len() {
        return Err(Error::Shape(format!(
            "smoothing vector of {} entries does not match x {xr}x{xc} and w {wr}x{wc}",
            s.len()
        )));
    }
    let f = s.factors();
    let x_hat: Vec<f32> = xd.iter().enumerate().map(|(i, &v)| v / f[i % xc]).collect();
    let w_hat: Vec<f32> = wd.iter().enumerate().map(|(i, &v)| v * f[i / wc]).collect();
    Ok((
        Tensor::from_f32(x.name(), vec![xr, xc], x_hat)?,
        Tensor::from_f32(w.name(), vec![wr, wc], w_hat)?,
    ))
}

/// Smooth `t` as the given operand, then quantize tensor-wise.
pub fn quantize_smoothed(
    t: &Tensor,
    s: &SmoothingVector,
    target: SmoothTarget,
    mode: QuantMode,
) -> Result<QuantizedTensor> {
    let (rows, cols, data) = t.matrix_f32()?;
    let f = s.factors();
    let expected = match target {
        SmoothTarget::Activation => cols,
        SmoothTarget::Weight => rows,
    };
    if f.len() != expected {
        return Err(Error::Shape(format!(
            "smoothing vector of {} entries does not match {target:?} '{}' of shape {rows}x{cols}",
            f.len(),
            t.name()
        )));
    }
    let smoothed: Vec<f32> = data
        .iter()
        .enumerate()
        .map(|(i, &v)| match target {
            SmoothTarget::Activation => v / f[i % cols],
            SmoothTarget::Weight => v * f[i / cols],
        })
        .collect();
    let (lo, hi) = smoothed.iter().fold((0.0f32, 0.0f32), |(l, h), &x| (l.min(x), h.max(x)));
    let inner = Affine::fit(lo, hi, mode);
    Ok(QuantizedTensor {
        name: t.name().to_owned(),
        shape: t.shape().to_vec(),
        mode,
        scheme: QuantScheme::Smoothed {
            target,
            smoothing: s.clone(),
            inner,
        },
        data: smoothed.iter().map(|&x| inner.quantize(x, mode)).collect(),
    })
}
