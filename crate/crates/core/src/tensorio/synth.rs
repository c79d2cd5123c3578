//! Seeded synthetic tensors with a Gaussian body and a few outlier channels.
//!
//! Generation order, fixed so other implementations can replicate it:
//!
//! 1. PRNG: xoshiro256** whose state is filled by SplitMix64 from `seed`.
//! 2. Outlier channels: `k = floor(outlier_fraction * channels)` indices drawn
//!    by a partial Fisher-Yates shuffle of `0..channels`, where step `i` swaps
//!    slot `i` with `i + bounded(channels - i)` and
//!    `bounded(n) = (next_u64() as u128 * n) >> 64`.
//! 3. Body: row-major standard normals from Box-Muller on pairs of uniforms
//!    `u = (next_u64() >> 11) * 2^-53` (`1 - u1` guards `ln 0`), using both
//!    outputs of each pair, times `base_std`.
//! 4. Every element of an outlier channel is multiplied by `outlier_scale`.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use super::{ChannelStats, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierAxis {
    Row,
    Column,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub base_std: f64,
    pub outlier_fraction: f64,
    pub outlier_scale: f64,
    pub outlier_axis: OutlierAxis,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            rows: 256,
            cols: 256,
            base_std: 1.0,
            outlier_fraction: 0.0,
            outlier_scale: 1.0,
            outlier_axis: OutlierAxis::Column,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Validation(format!(
                "synthetic shape {}x{} has a zero dimension",
                self.rows, self.cols
            )));
        }
        if !(self.base_std.is_finite() && self.base_std > 0.0) {
            return Err(Error::Validation(format!("base_std must be > 0, got {}", self.base_std)));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::Validation(format!(
                "outlier_fraction must be in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        if !(self.outlier_scale.is_finite() && self.outlier_scale >= 1.0) {
            return Err(Error::Validation(format!(
                "outlier_scale must be >= 1, got {}",
                self.outlier_scale
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        match self.outlier_axis {
            OutlierAxis::Row => self.rows,
            OutlierAxis::Column => self.cols,
        }
    }

    /// Number of outlier channels. The small bias absorbs products such as
    /// `0.29 * 100 = 28.999999999999996`.
    pub fn outlier_count(&self) -> usize {
        (self.outlier_fraction * self.channels() as f64 + 1e-9).floor() as usize
    }
}

/// The documented generator behind every synthetic tensor.
pub struct SynthRng {
    inner: Xoshiro256StarStar,
    spare: Option<f64>,
}

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        SynthRng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn bounded(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Sorted outlier channel indices plus the generated row-major matrix.
fn generate(spec: &SynthSpec) -> Result<(Vec<usize>, Vec<f32>)> {
    spec.validate()?;
    let mut rng = SynthRng::new(spec.seed);
    let channels = spec.channels();
    let k = spec.outlier_count();
    let mut perm: Vec<usize> = (0..channels).collect();
    for i in 0..k {
        let j = i + rng.bounded((channels - i) as u64) as usize;
        perm.swap(i, j);
    }
    let mut outliers = perm[..k].to_vec();
    outliers.sort_unstable();

    let mut data: Vec<f32> = (0..spec.rows * spec.cols)
        .map(|_| (rng.gaussian() * spec.base_std) as f32)
        .collect();
    let scale = spec.outlier_scale;
    for &ch in &outliers {
        match spec.outlier_axis {
            OutlierAxis::Row => {
                for v in &mut data[ch * spec.cols..(ch + 1) * spec.cols] {
                    *v = (*v as f64 * scale) as f32;
                }
            }
            OutlierAxis::Column => {
                for r in 0..spec.rows {
                    let v = &mut data[r * spec.cols + ch];
                    *v = (*v as f64 * scale) as f32;
                }
            }
        }
    }
    Ok((outliers, data))
}

/// Synthetic weight matrix `[rows, cols]`.
pub fn synth_weights(spec: &SynthSpec) -> Result<Tensor> {
    let (_, data) = generate(spec)?;
    Tensor::from_f32("weight", vec![spec.rows, spec.cols], data)
}

/// Synthetic activation matrix `[tokens = rows, channels = cols]`.
pub fn synth_activations(spec: &SynthSpec) -> Result<Tensor> {
    let (_, data) = generate(spec)?;
    Tensor::from_f32("activation", vec![spec.rows, spec.cols], data)
}

/// Per-channel max |x| of [`synth_activations`].
pub fn synth_activation_stats(spec: &SynthSpec) -> Result<ChannelStats> {
    ChannelStats::from_activations(&synth_activations(spec)?)
}

/// Outlier channel indices chosen for `spec`, sorted ascending.
pub fn outlier_channels(spec: &SynthSpec) -> Result<Vec<usize>> {
    Ok(generate(spec)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col_abs_max(t: &Tensor) -> Vec<f32> {
        let (r, c, d) = t.matrix_f32().unwrap();
        (0..c)
            .map(|j| (0..r).map(|i| d[i * c + j].abs()).fold(0.0, f32::max))
            .collect()
    }

    fn median(v: &[f32]) -> f32 {
        let mut v = v.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        v[v.len() / 2]
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = SynthSpec { seed: 7, outlier_fraction: 0.05, outlier_scale: 20.0, ..Default::default() };
        assert_eq!(synth_weights(&spec).unwrap(), synth_weights(&spec).unwrap());
        assert_eq!(
            synth_activation_stats(&spec).unwrap(),
            synth_activation_stats(&spec).unwrap()
        );
        let other = SynthSpec { seed: 8, ..spec };
        assert_ne!(synth_weights(&spec).unwrap(), synth_weights(&other).unwrap());
    }

    #[test]
    fn no_outliers_means_plain_gaussian() {
        let spec = SynthSpec { rows: 4, cols: 4, ..Default::default() };
        assert!(outlier_channels(&spec).unwrap().is_empty());
        let t = synth_weights(&spec).unwrap();
        assert!(t.as_f32().unwrap().iter().all(|x| x.abs() < 8.0));
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = SynthRng::new(1);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn one_percent_of_100_columns_is_one_column_at_100x() {
        let spec = SynthSpec {
            rows: 256,
            cols: 100,
            outlier_fraction: 0.01,
            outlier_scale: 100.0,
            seed: 3,
            ..Default::default()
        };
        let maxima = col_abs_max(&synth_weights(&spec).unwrap());
        let med = median(&maxima);
        let hot: Vec<usize> = (0..100).filter(|&j| maxima[j] > 10.0 * med).collect();
        assert_eq!(hot, outlier_channels(&spec).unwrap());
        assert_eq!(hot.len(), 1);
        let ratio = maxima[hot[0]] / med;
        assert!((50.0..200.0).contains(&ratio), "column-max ratio {ratio}");
    }

    #[test]
    fn row_axis_scales_rows() {
        let spec = SynthSpec {
            rows: 50,
            cols: 64,
            outlier_fraction: 0.1,
            outlier_scale: 30.0,
            outlier_axis: OutlierAxis::Row,
            seed: 11,
            ..Default::default()
        };
        let rows = outlier_channels(&spec).unwrap();
        assert_eq!(rows.len(), 5);
        let t = synth_weights(&spec).unwrap();
        let d = t.as_f32().unwrap();
        let row_max = |r: usize| d[r * 64..(r + 1) * 64].iter().fold(0.0f32, |m, x| m.max(x.abs()));
        let body = (0..50).filter(|r| !rows.contains(r)).map(row_max).fold(0.0, f32::max);
        for &r in &rows {
            assert!(row_max(r) > 3.0 * body);
        }
    }

    #[test]
    fn activation_stats_shapes() {
        let flat = SynthSpec { rows: 512, cols: 64, seed: 5, ..Default::default() };
        let s = synth_activation_stats(&flat).unwrap();
        assert_eq!(s.len(), 64);
        let (lo, hi) = s
            .as_slice()
            .iter()
            .fold((f32::MAX, 0.0f32), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        assert!(hi / lo < 10.0, "{lo} .. {hi}");

        let spiky = SynthSpec { outlier_fraction: 1.0 / 64.0, outlier_scale: 100.0, ..flat };
        let s = synth_activation_stats(&spiky).unwrap();
        let ch = outlier_channels(&spiky).unwrap()[0];
        let ratio = s.as_slice()[ch] / median(s.as_slice());
        assert!((60.0..160.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn invalid_specs() {
        for bad in [
            SynthSpec { rows: 0, ..Default::default() },
            SynthSpec { outlier_fraction: 1.0, ..Default::default() },
            SynthSpec { outlier_scale: 0.5, ..Default::default() },
            SynthSpec { base_std: 0.0, ..Default::default() },
        ] {
            assert!(matches!(synth_weights(&bad), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn fractional_channel_counts_floor() {
        let spec = SynthSpec { cols: 100, outlier_fraction: 0.29, ..Default::default() };
        assert_eq!(spec.outlier_count(), 29);
        let spec = SynthSpec { cols: 100, outlier_fraction: 0.019, ..Default::default() };
        assert_eq!(spec.outlier_count(), 1);
    }
}
