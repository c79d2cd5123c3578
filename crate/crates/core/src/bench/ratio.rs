//! Per-tensor, per-scheme, per-codec compression ratios of a float model.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::{coded_size, payload_stats, write_csv_rows};
use crate::codecs::Codec;
use crate::quant::{quantize_channel_wise, quantize_tensor_wise, Axis, QuantMode, QuantizedTensor};
use crate::tensorio::{DType, Tensor, TensorMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnalyzeScheme {
    Tensor,
    Channel,
}

impl AnalyzeScheme {
    pub fn name(self) -> &'static str {
        match self {
            AnalyzeScheme::Tensor => "tensor",
            AnalyzeScheme::Channel => "channel",
        }
    }
}

impl FromStr for AnalyzeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tensor" | "tensor-wise" => Ok(AnalyzeScheme::Tensor),
            "channel" | "channel-wise" => Ok(AnalyzeScheme::Channel),
            other => Err(Error::Validation(format!(
                "unknown scheme '{other}' (expected tensor or channel)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalyzeOptions {
    pub mode: QuantMode,
    pub axis: Axis,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            mode: QuantMode::Symmetric,
            axis: Axis::Row,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub tensor: String,
    pub layer_group: String,
    pub layer_index: Option<usize>,
    pub scheme: String,
    pub codec: String,
    pub entropy_bits: f64,
    pub excess_kurtosis: Option<f64>,
    pub ideal_size: u64,
    pub original_size: u64,
    pub actual_size: u64,
    pub ratio: f64,
    pub total_ratio_vs_f32: f64,
}

/// A tensor that was skipped or failed; never fatal to the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorNotice {
    pub tensor: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMean {
    pub layer_group: String,
    pub scheme: String,
    pub codec: String,
    pub tensors: usize,
    pub mean_ratio: f64,
    pub mean_entropy_bits: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
    pub skipped: Vec<TensorNotice>,
    pub failures: Vec<TensorNotice>,
}

impl RatioReport {
    /// Mean `C` per (layer group, scheme, codec), sorted by those keys.
    pub fn group_means(&self) -> Vec<GroupMean> {
        let mut acc: BTreeMap<(&str, &str, &str), (usize, f64, f64)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc
                .entry((&r.layer_group, &r.scheme, &r.codec))
                .or_insert((0, 0.0, 0.0));
            e.0 += 1;
            e.1 += r.ratio;
            e.2 += r.entropy_bits;
        }
        acc.into_iter()
            .map(|((g, s, c), (n, sum, h))| GroupMean {
                layer_group: g.to_owned(),
                scheme: s.to_owned(),
                codec: c.to_owned(),
                tensors: n,
                mean_ratio: sum / n as f64,
                mean_entropy_bits: h / n as f64,
            })
            .collect()
    }

    /// Mean `C` over all rows with this scheme and codec name.
    pub fn mean_ratio(&self, scheme: AnalyzeScheme, codec: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.scheme == scheme.name() && r.codec == codec)
            .map(|r| r.ratio)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv_rows(out, &self.rows)
    }
}

/// Split a parameter name into its layer index and the layer-type group,
/// e.g. `transformer.h.11.mlp.c_proj.weight` → `(Some(11), "mlp.c_proj")`.
/// Names without a numeric component map to themselves minus a trailing
/// `.weight`.
pub fn layer_group(name: &str) -> (Option<usize>, String) {
    let parts: Vec<&str> = name.split('.').collect();
    let strip = |p: &[&str]| -> String {
        let p = match p.last() {
            Some(&"weight") if p.len() > 1 => &p[..p.len() - 1],
            _ => p,
        };
        p.join(".")
    };
    match parts.iter().position(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit())) {
        Some(i) if i + 1 < parts.len() => (parts[i].parse().ok(), strip(&parts[i + 1..])),
        _ => (None, strip(&parts)),
    }
}

fn quantize(t: &Tensor, scheme: AnalyzeScheme, opts: &AnalyzeOptions) -> Result<QuantizedTensor> {
    match scheme {
        AnalyzeScheme::Tensor => quantize_tensor_wise(t, opts.mode),
        AnalyzeScheme::Channel => quantize_channel_wise(t, opts.axis, opts.mode),
    }
}

fn analyze_tensor(
    t: &Tensor,
    schemes: &[AnalyzeScheme],
    codecs: &[Codec],
    opts: &AnalyzeOptions,
) -> Result<Vec<RatioRow>> {
    let (layer_index, group) = layer_group(t.name());
    let mut rows = Vec::with_capacity(schemes.len() * codecs.len());
    for &scheme in schemes {
        let q = quantize(t, scheme, opts)?;
        let stats = payload_stats(&q)?;
        for &codec in codecs {
            let (size, ratio) = coded_size(&q, codec)?;
            rows.push(RatioRow {
                tensor: t.name().to_owned(),
                layer_group: group.clone(),
                layer_index,
                scheme: scheme.name().to_owned(),
                codec: codec.to_string(),
                entropy_bits: stats.entropy_bits,
                excess_kurtosis: stats.excess_kurtosis,
                ideal_size: stats.ideal_size,
                original_size: q.numel() as u64,
                actual_size: size,
                ratio,
                total_ratio_vs_f32: 4.0 * ratio,
            });
        }
    }
    Ok(rows)
}

/// Quantize every rank-2 float tensor under each scheme, compress with each
/// codec and record entropy and `C`. Runs per tensor on the current rayon
/// pool; rows come back in model order regardless of scheduling.
pub fn analyze_model(
    m: &TensorMap,
    schemes: &[AnalyzeScheme],
    codecs: &[Codec],
    opts: &AnalyzeOptions,
) -> RatioReport {
    let mut report = RatioReport::default();
    let mut work = Vec::new();
    for t in m.iter() {
        if t.shape().len() != 2 {
            report.skipped.push(TensorNotice {
                tensor: t.name().to_owned(),
                reason: format!("rank {} tensor, only matrices are analyzed", t.shape().len()),
            });
        } else if t.dtype() != DType::F32 {
            report.skipped.push(TensorNotice {
                tensor: t.name().to_owned(),
                reason: format!("{} tensor, only float32 is quantized", t.dtype().as_str()),
            });
        } else {
            work.push(t);
        }
    }
    for n in &report.skipped {
        log::info!("skipping '{}': {}", n.tensor, n.reason);
    }
    let results: Vec<Result<Vec<RatioRow>>> = work
        .par_iter()
        .map(|t| analyze_tensor(t, schemes, codecs, opts))
        .collect();
    for (t, r) in work.iter().zip(results) {
        match r {
            Ok(rows) => report.rows.extend(rows),
            Err(e) => {
                log::warn!("tensor '{}' failed: {e}", t.name());
                report.failures.push(TensorNotice {
                    tensor: t.name().to_owned(),
                    reason: e.to_string(),
                });
            }
        }
    }
    report
}
