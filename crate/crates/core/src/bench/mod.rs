//! Experiment harness: per-layer compression-ratio reports, the smoothing
//! strength sweep, and storage-to-memory load benchmarks.
//!
//! Every report is long-format (one row per measurement) and serializes to
//! CSV or JSON.

mod load;
mod ratio;
mod sweep;

pub use load::{
    bench_load, raw_dump_bytes, write_raw_dump, ColdCache, DecodeMode, LoadComparison, LoadOptions,
    LoadReport, LoadStrategy,
};
pub use ratio::{
    analyze_model, layer_group, AnalyzeOptions, AnalyzeScheme, GroupMean, RatioReport, RatioRow,
    TensorNotice,
};
pub use sweep::{sweep_alpha, SweepReport, SweepRow};

use std::io::Write;

use serde::Serialize;

use crate::codecs::Codec;
use crate::entropy::{entropy_bits, excess_kurtosis_i8, ideal_compressed_size, Histogram};
use crate::quant::QuantizedTensor;
use crate::{Error, Result};

/// Entropy statistics of one quantized payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PayloadStats {
    pub entropy_bits: f64,
    pub excess_kurtosis: Option<f64>,
    pub ideal_size: u64,
}

pub(crate) fn payload_stats(q: &QuantizedTensor) -> Result<PayloadStats> {
    let h = Histogram::from_bytes(q.as_bytes())?;
    Ok(PayloadStats {
        entropy_bits: entropy_bits(&h),
        excess_kurtosis: excess_kurtosis_i8(&q.data).ok(),
        ideal_size: ideal_compressed_size(&h),
    })
}

/// Total blob size (headers included) and `C = original / blob`.
pub(crate) fn coded_size(q: &QuantizedTensor, codec: Codec) -> Result<(u64, f64)> {
    let blob = codec.compress(q.as_bytes())?;
    let size = blob.wire_len() as u64;
    Ok((size, q.numel() as f64 / size as f64))
}

pub(crate) fn write_csv_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::io("csv output", e.into()))?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}
