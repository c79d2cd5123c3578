//! Smoothing-strength sweep: entropy, `C` and reconstruction error of the
//! smoothed activation and weight against the plain tensor-wise baseline.

use std::io::Write;

use serde::Serialize;

use super::{coded_size, payload_stats, write_csv_rows};
use crate::codecs::Codec;
use crate::quant::{
    compute_smoothing_factors, quant_error, quantize_smoothed, quantize_tensor_wise, QuantMode,
    QuantizedTensor, SmoothTarget,
};
use crate::tensorio::{ChannelStats, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Empty for the unsmoothed baseline.
    pub alpha: Option<f32>,
    /// `activation` or `weight`.
    pub operand: String,
    /// `tensor` (baseline) or `smooth`.
    pub scheme: String,
    pub codec: String,
    pub entropy_bits: f64,
    pub excess_kurtosis: Option<f64>,
    pub ideal_size: u64,
    pub actual_size: u64,
    pub ratio: f64,
    pub mse: f64,
    pub max_abs_err: f64,
    pub relative_frobenius_err: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, alpha: Option<f32>, operand: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.alpha == alpha && r.operand == operand)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv_rows(out, &self.rows)
    }
}

fn measure(
    orig: &Tensor,
    q: &QuantizedTensor,
    alpha: Option<f32>,
    operand: &str,
    codec: Codec,
) -> Result<SweepRow> {
    let stats = payload_stats(q)?;
    let (actual_size, ratio) = coded_size(q, codec)?;
    let err = quant_error(orig, q)?;
    Ok(SweepRow {
        alpha,
        operand: operand.to_owned(),
        scheme: q.scheme.name().to_owned(),
        codec: codec.to_string(),
        entropy_bits: stats.entropy_bits,
        excess_kurtosis: stats.excess_kurtosis,
        ideal_size: stats.ideal_size,
        actual_size,
        ratio,
        mse: err.mse,
        max_abs_err: err.max_abs_err,
        relative_frobenius_err: err.relative_frobenius_err,
    })
}

/// `x` is `[tokens, in]`, `w` is `[in, out]`. Emits the two baseline rows
/// followed by an activation and a weight row per alpha. Errors are measured
/// against the original operands (dequantization undoes the smoothing).
pub fn sweep_alpha(
    x: &Tensor,
    w: &Tensor,
    alphas: &[f32],
    codec: Codec,
    mode: QuantMode,
) -> Result<SweepReport> {
    if alphas.is_empty() {
        return Err(Error::Validation("at least one alpha is required".into()));
    }
    let stats = ChannelStats::from_activations(x)?;
    let mut rows = vec![
        measure(x, &quantize_tensor_wise(x, mode)?, None, "activation", codec)?,
        measure(w, &quantize_tensor_wise(w, mode)?, None, "weight", codec)?,
    ];
    for &alpha in alphas {
        let s = compute_smoothing_factors(&stats, w, alpha)?;
        let qx = quantize_smoothed(x, &s, SmoothTarget::Activation, mode)?;
        let qw = quantize_smoothed(w, &s, SmoothTarget::Weight, mode)?;
        rows.push(measure(x, &qx, Some(alpha), "activation", codec)?);
        rows.push(measure(w, &qw, Some(alpha), "weight", codec)?);
    }
    Ok(SweepReport { rows })
}
