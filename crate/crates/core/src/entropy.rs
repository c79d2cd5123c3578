//! Order-0 information statistics of byte streams.
//!
//! int8 payloads are histogrammed as unsigned bytes (`x as u8`), so values
//! near zero land in bins 0.. and ..255.

use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: [u64; 256],
    total: u64,
}

impl Histogram {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Validation("cannot histogram an empty byte stream".into()));
        }
        let mut counts = [0u64; 256];
        // Four interleaved tables avoid store-to-load stalls on runs; each
        // segment is small enough that no u32 lane can overflow.
        let mut lanes = [[0u32; 256]; 4];
        for segment in bytes.chunks(1 << 30) {
            let mut quads = segment.chunks_exact(4);
            for c in &mut quads {
                lanes[0][c[0] as usize] += 1;
                lanes[1][c[1] as usize] += 1;
                lanes[2][c[2] as usize] += 1;
                lanes[3][c[3] as usize] += 1;
            }
            for &b in quads.remainder() {
                counts[b as usize] += 1;
            }
            flush(&mut counts, &mut lanes);
        }
        Ok(Histogram {
            counts,
            total: bytes.len() as u64,
        })
    }

    pub fn from_counts(counts: [u64; 256]) -> Result<Self> {
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::Validation("histogram has no samples".into()));
        }
        Ok(Histogram { counts, total })
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct_symbols(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Add the counts of a histogram over a disjoint chunk.
    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        self.total += other.total;
    }
}

fn flush(counts: &mut [u64; 256], lanes: &mut [[u32; 256]; 4]) {
    for lane in lanes.iter_mut() {
        for (c, l) in counts.iter_mut().zip(lane.iter_mut()) {
            *c += *l as u64;
            *l = 0;
        }
    }
}

pub fn histogram(bytes: &[u8]) -> Result<Histogram> {
    Histogram::from_bytes(bytes)
}

/// Shannon entropy in bits per symbol.
pub fn entropy_bits(h: &Histogram) -> f64 {
    let total = h.total as f64;
    let bits: f64 = h
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    bits.max(0.0)
}

/// Lower bound, in whole bytes, for any order-0 coding of the histogrammed data.
pub fn ideal_compressed_size(h: &Histogram) -> u64 {
    let bits = entropy_bits(h) * h.total as f64;
    // Guard against 8.0000000001 * n style rounding crossing an integer.
    let bytes = bits / 8.0;
    let rounded = bytes.round();
    if (bytes - rounded).abs() < 1e-9 * bytes.max(1.0) {
        rounded as u64
    } else {
        bytes.ceil() as u64
    }
}

/// Population excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::Validation(format!(
            "kurtosis needs at least 4 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(m2, m4), &x| {
        let d2 = (x - mean) * (x - mean);
        (m2 + d2, m4 + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 <= 0.0 {
        return Err(Error::Validation("kurtosis is undefined for zero variance".into()));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Excess kurtosis of int8 values (signed, not byte-reinterpreted).
pub fn excess_kurtosis_i8(values: &[i8]) -> Result<f64> {
    // Sufficient statistics over the 256 possible values.
    if values.len() < 4 {
        return Err(Error::Validation(format!(
            "kurtosis needs at least 4 values, got {}",
            values.len()
        )));
    }
    let mut counts = [0u64; 256];
    for &v in values {
        counts[(v as i16 + 128) as usize] += 1;
    }
    let n = values.len() as f64;
    let value = |i: usize| i as f64 - 128.0;
    let mean = counts.iter().enumerate().map(|(i, &c)| c as f64 * value(i)).sum::<f64>() / n;
    let (m2, m4) = counts.iter().enumerate().fold((0.0, 0.0), |(m2, m4), (i, &c)| {
        let d2 = (value(i) - mean).powi(2);
        (m2 + c as f64 * d2, m4 + c as f64 * d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 <= 0.0 {
        return Err(Error::Validation("kurtosis is undefined for zero variance".into()));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub entropy_bits: f64,
    /// `None` when the values have zero variance.
    pub excess_kurtosis: Option<f64>,
    pub ideal_size_bytes: u64,
    pub distinct_symbols: usize,
    pub total: u64,
}

/// Full report for an int8 payload.
pub fn analyze_i8(values: &[i8]) -> Result<EntropyReport> {
    let bytes: Vec<u8> = values.iter().map(|&v| v as u8).collect();
    let h = histogram(&bytes)?;
    Ok(EntropyReport {
        entropy_bits: entropy_bits(&h),
        excess_kurtosis: excess_kurtosis_i8(values).ok(),
        ideal_size_bytes: ideal_compressed_size(&h),
        distinct_symbols: h.distinct_symbols(),
        total: h.total(),
    })
}
