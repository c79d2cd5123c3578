//! Corpora and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use qmc_core::bench::{
    analyze_model, bench_load, sweep_alpha, write_raw_dump, AnalyzeOptions, AnalyzeScheme,
    ColdCache, DecodeMode, LoadComparison, LoadOptions, LoadStrategy,
};
use qmc_core::codecs::Codec;
use qmc_core::container::pack;
use qmc_core::quant::{
    quant_error, quantize_channel_wise, quantize_tensor_wise, Affine, Axis, QuantMode,
    QuantScheme, QuantizedTensor,
};
use qmc_core::tensorio::{
    synth_activations, synth_weights, OutlierAxis, SynthRng, SynthSpec, Tensor, TensorMap,
};

/// Entropy as `log2 n - (1/n) Σ c log2 c`, summed in symbol order; a
/// different formula from the library's `-Σ p log2 p`.
pub fn entropy_oracle(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let s: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64).log2())
        .sum();
    nf.log2() - s / nf
}

pub fn counts_of(data: &[u8]) -> [u64; 256] {
    let mut c = [0u64; 256];
    for &b in data {
        c[b as usize] += 1;
    }
    c
}

/// Draw `n` bytes from a probability mass function over byte values.
pub fn sample_pmf(pmf: &[f64], n: usize, rng: &mut SynthRng) -> Vec<u8> {
    let total: f64 = pmf.iter().sum();
    let mut cdf = Vec::with_capacity(pmf.len());
    let mut acc = 0.0;
    for p in pmf {
        acc += p / total;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.uniform();
            cdf.iter().position(|&c| u < c).unwrap_or(pmf.len() - 1) as u8
        })
        .collect()
}

fn wrap_pmf(f: impl Fn(f64) -> f64) -> Vec<f64> {
    // Signed value v in [-128, 127] lands at byte index v as u8.
    let mut pmf = vec![0.0; 256];
    for v in -128i32..=127 {
        pmf[(v as i8 as u8) as usize] = f(v as f64);
    }
    pmf
}

/// A named synthetic distribution family.
pub struct Family {
    pub name: String,
    pub data: Vec<u8>,
}

fn quantized_synth(scale: f64, seed: u64, channel: bool, n: usize) -> Vec<u8> {
    let cols = 256;
    let spec = SynthSpec {
        rows: n / cols,
        cols,
        outlier_fraction: 0.01,
        outlier_scale: scale,
        outlier_axis: OutlierAxis::Row,
        seed,
        ..Default::default()
    };
    let t = synth_weights(&spec).unwrap();
    let q = if channel {
        quantize_channel_wise(&t, Axis::Row, QuantMode::Symmetric).unwrap()
    } else {
        quantize_tensor_wise(&t, QuantMode::Symmetric).unwrap()
    };
    q.bytes()
}

/// Fifty histogram families of `n` bytes each, seeded.
pub fn families(n: usize, seed: u64) -> Vec<Family> {
    let mut rng = SynthRng::new(seed);
    let mut out = Vec::new();
    let mut push = |name: String, data: Vec<u8>| out.push(Family { name, data });
    for k in [2usize, 3, 5, 16, 100, 256] {
        let pmf: Vec<f64> = (0..256).map(|i| if i < k { 1.0 } else { 0.0 }).collect();
        push(format!("uniform-{k}"), sample_pmf(&pmf, n, &mut rng));
    }
    for p in [0.05f64, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9] {
        let pmf: Vec<f64> = (0..256).map(|i| p * (1.0 - p).powi(i)).collect();
        push(format!("geometric-{p}"), sample_pmf(&pmf, n, &mut rng));
    }
    for s in [0.5, 0.8, 1.0, 1.2, 1.5, 2.0] {
        let pmf: Vec<f64> = (0..256).map(|i| 1.0 / ((i + 1) as f64).powf(s)).collect();
        push(format!("zipf-{s}"), sample_pmf(&pmf, n, &mut rng));
    }
    for sigma in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
        let pmf = wrap_pmf(|v| (-(v * v) / (2.0 * sigma * sigma)).exp());
        push(format!("gaussian-{sigma}"), sample_pmf(&pmf, n, &mut rng));
    }
    for b in [0.5, 1.0, 3.0, 10.0] {
        let pmf = wrap_pmf(|v| (-v.abs() / b).exp());
        push(format!("laplace-{b}"), sample_pmf(&pmf, n, &mut rng));
    }
    for (i, scale) in [10.0, 50.0, 100.0, 300.0].into_iter().enumerate() {
        push(format!("tensor-wise-{scale}"), quantized_synth(scale, seed + i as u64, false, n));
    }
    for (i, scale) in [10.0, 100.0].into_iter().enumerate() {
        push(format!("channel-wise-{scale}"), quantized_synth(scale, seed + 10 + i as u64, true, n));
    }
    for p in [0.5, 0.9, 0.99, 0.999] {
        let mut pmf = vec![0.0; 256];
        pmf[0x41] = p;
        pmf[0xC3] = 1.0 - p;
        push(format!("two-point-{p}"), sample_pmf(&pmf, n, &mut rng));
    }
    for eps in [0.01, 0.05, 0.2, 0.5] {
        let mut pmf = vec![eps / 256.0; 256];
        pmf[7] += 1.0 - eps;
        push(format!("spike-noise-{eps}"), sample_pmf(&pmf, n, &mut rng));
    }
    for (mu, sigma) in [(30.0, 3.0), (60.0, 10.0)] {
        let pmf = wrap_pmf(|v| (-((v - mu).powi(2)) / (2.0 * sigma * sigma)).exp() + (-((v + mu).powi(2)) / (2.0 * sigma * sigma)).exp());
        push(format!("bimodal-{mu}-{sigma}"), sample_pmf(&pmf, n, &mut rng));
    }
    for j in 0..2 {
        let mut pmf = vec![0.0; 256];
        for _ in 0..32 {
            pmf[rng.bounded(256) as usize] += rng.uniform() + 0.01;
        }
        push(format!("sparse-random-{j}"), sample_pmf(&pmf, n, &mut rng));
    }
    push("constant".into(), vec![0x5A; n]);
    let pmf: Vec<f64> = (0..256).map(|i| 1.0 + 0.3 * ((i as f64) / 40.0).sin()).collect();
    push("near-uniform".into(), sample_pmf(&pmf, n, &mut rng));
    out
}

/// Mix a skewed source with uniform noise: fraction `t` of symbols uniform.
pub fn noise_mix(t: f64, n: usize, seed: u64) -> Vec<u8> {
    let mut pmf = wrap_pmf(|v| (-v.abs() / 2.0).exp());
    let total: f64 = pmf.iter().sum();
    for p in pmf.iter_mut() {
        *p = (1.0 - t) * *p / total + t / 256.0;
    }
    sample_pmf(&pmf, n, &mut SynthRng::new(seed))
}

/// Synthetic model: `n` weight matrices `[256, 256]` with 1% outlier input
/// channels (rows) at `scale`.
pub fn outlier_model(seed: u64, n: usize, scale: f64) -> TensorMap {
    let tensors = (0..n).map(|i| {
        synth_weights(&SynthSpec {
            rows: 256,
            cols: 256,
            outlier_fraction: 0.01,
            outlier_scale: scale,
            outlier_axis: OutlierAxis::Row,
            seed: seed * 1000 + i as u64,
            ..Default::default()
        })
        .unwrap()
        .with_name(format!("h.{i}.mlp.c_fc.weight"))
    });
    tensors.collect::<Result<TensorMap, _>>().unwrap()
}

/// Mean `C` and mean squared error of tensor-wise and channel-wise
/// quantization over one outlier model: `(c_tw, c_cw, mse_tw, mse_cw)`.
pub fn granularity_trial(seed: u64) -> (f64, f64, f64, f64) {
    let m = outlier_model(seed, 4, 100.0);
    let codec = Codec::tans();
    let report = analyze_model(
        &m,
        &[AnalyzeScheme::Tensor, AnalyzeScheme::Channel],
        &[codec],
        &AnalyzeOptions { mode: QuantMode::Symmetric, axis: Axis::Row },
    );
    assert!(report.failures.is_empty() && report.skipped.is_empty());
    let c_tw = report.mean_ratio(AnalyzeScheme::Tensor, codec.name()).unwrap();
    let c_cw = report.mean_ratio(AnalyzeScheme::Channel, codec.name()).unwrap();
    let (mut e_tw, mut e_cw) = (0.0, 0.0);
    for t in m.iter() {
        e_tw += quant_error(t, &quantize_tensor_wise(t, QuantMode::Symmetric).unwrap()).unwrap().mse;
        e_cw += quant_error(t, &quantize_channel_wise(t, Axis::Row, QuantMode::Symmetric).unwrap())
            .unwrap()
            .mse;
    }
    let n = m.len() as f64;
    (c_tw, c_cw, e_tw / n, e_cw / n)
}

/// Activation-side `C` and mean squared error of plain tensor-wise versus
/// alpha = 0.5 smoothing: `(c_plain, c_smooth, mse_plain, mse_smooth)`.
pub fn smoothing_trial(seed: u64) -> (f64, f64, f64, f64) {
    let x = synth_activations(&SynthSpec {
        rows: 512,
        cols: 256,
        outlier_fraction: 0.01,
        outlier_scale: 100.0,
        outlier_axis: OutlierAxis::Column,
        seed,
        ..Default::default()
    })
    .unwrap();
    let w = synth_weights(&SynthSpec {
        rows: 256,
        cols: 128,
        base_std: 0.02,
        seed: seed ^ 0x5eed,
        ..Default::default()
    })
    .unwrap();
    let r = sweep_alpha(&x, &w, &[0.5], Codec::tans(), QuantMode::Symmetric).unwrap();
    let plain = r.row(None, "activation").unwrap();
    let smooth = r.row(Some(0.5), "activation").unwrap();
    (plain.ratio, smooth.ratio, plain.mse, smooth.mse)
}

/// Bytes drawn uniformly from 16 symbols: 4 bits of entropy, so order-0
/// coders reach `C` close to 2.
pub fn four_bit_model(total: usize, tensors: usize, seed: u64) -> Vec<QuantizedTensor> {
    let mut rng = SynthRng::new(seed);
    let per = total / tensors;
    (0..tensors)
        .map(|i| {
            let data: Vec<i8> = (0..per).map(|_| rng.bounded(16) as i8 - 8).collect();
            QuantizedTensor {
                name: format!("t{i}"),
                shape: vec![per / 1024, 1024],
                mode: QuantMode::Symmetric,
                scheme: QuantScheme::TensorWise(Affine { scale: 0.01, zero_point: 0 }),
                data,
            }
        })
        .collect()
}

/// Raw and container load under an emulated `bandwidth` (bytes/s) with
/// overlapped decoding.
pub fn throttled_load(dir: &Path, total: usize, bandwidth: f64, trials: usize) -> LoadComparison {
    let qs = four_bit_model(total, 8, 1);
    let (c, r) = (dir.join("m.qmc"), dir.join("m.raw"));
    pack(&c, &qs, Codec::Huffman, &Default::default()).unwrap();
    write_raw_dump(&r, &qs).unwrap();
    let opts = LoadOptions {
        strategy: LoadStrategy::BufferedRead,
        decode: DecodeMode::Overlapped,
        trials,
        cold_cache: ColdCache::None,
        bandwidth_limit: Some(bandwidth),
    };
    bench_load(&c, &r, &opts).unwrap()
}

/// f64 accumulation of a float32 matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, ad) = a.matrix_f32().unwrap();
    let (_, n, bd) = b.matrix_f32().unwrap();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|l| ad[i * k + l] as f64 * bd[l * n + j] as f64).sum();
        }
    }
    out
}
