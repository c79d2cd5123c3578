use std::time::Instant;

use serde::Serialize;

use super::Codec;
use crate::{Error, Result};

/// Single-threaded codec throughput, in MB/s (10^6 bytes of original data
/// per second), taken as the median over repetitions.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedReport {
    pub codec: String,
    pub bytes: usize,
    pub repetitions: usize,
    pub compressed_bytes: usize,
    pub comp_mb_s: f64,
    pub decomp_mb_s: f64,
    pub comp_samples_mb_s: Vec<f64>,
    pub decomp_samples_mb_s: Vec<f64>,
}

pub fn bench_codec_speed(codec: Codec, data: &[u8], repetitions: usize) -> Result<SpeedReport> {
    if repetitions == 0 {
        return Err(Error::Validation("repetitions must be at least 1".into()));
    }
    let mb = data.len() as f64 / 1e6;
    let mut comp = Vec::with_capacity(repetitions);
    let mut decomp = Vec::with_capacity(repetitions);
    let mut compressed_bytes = 0;
    for _ in 0..repetitions {
        let t = Instant::now();
        let blob = codec.compress(data)?;
        comp.push(mb / t.elapsed().as_secs_f64());
        compressed_bytes = blob.wire_len();

        let t = Instant::now();
        let out = blob.decompress()?;
        decomp.push(mb / t.elapsed().as_secs_f64());
        if out != data {
            return Err(Error::Integrity(format!("{codec} roundtrip mismatch under benchmark")));
        }
    }
    Ok(SpeedReport {
        codec: codec.to_string(),
        bytes: data.len(),
        repetitions,
        compressed_bytes,
        comp_mb_s: median(&comp),
        decomp_mb_s: median(&decomp),
        comp_samples_mb_s: comp,
        decomp_samples_mb_s: decomp,
    })
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Population standard deviation over mean.
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}
