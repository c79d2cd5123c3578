use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::*;
use crate::bench::{
    analyze_model, bench_load, sweep_alpha, write_raw_dump, AnalyzeOptions, AnalyzeScheme, ColdCache,
    DecodeMode, LoadOptions, LoadReport, LoadStrategy,
};
use crate::codecs::{bench_codec_speed, coefficient_of_variation, compression_ratio, Blob};
use crate::container::{self, ContainerReader};
use crate::entropy::analyze_i8;
use crate::quant::{
    compute_smoothing_factors, dequantize, quant_error, quantize_channel_wise, quantize_smoothed,
    quantize_tensor_wise, QuantizedTensor, SmoothTarget,
};
use crate::tensorio::{
    load_model, save_model, synth_activations, synth_weights, ChannelStats, DType, SynthSpec, Tensor,
    TensorMap,
};

/// Metadata key prefix under which int8 safetensors files carry schemes.
pub const SCHEME_KEY_PREFIX: &str = "qmc.scheme.";

const LAYER_GROUPS: [&str; 4] = ["attn.c_attn", "attn.c_proj", "mlp.c_fc", "mlp.c_proj"];

pub(super) fn run(cmd: &Command, sink: &Sink) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth(a, sink),
        Command::Quantize(a) => quantize(a, sink),
        Command::Analyze(a) => analyze(a, sink),
        Command::Compress(a) => compress(a, sink),
        Command::Decompress(a) => decompress(a, sink),
        Command::Pack(a) => pack(a, sink),
        Command::Unpack(a) => unpack(a, sink),
        Command::Verify(a) => verify(a, sink),
        Command::BenchSpeed(a) => bench_speed(a, sink),
        Command::BenchLoad(a) => bench_load_cmd(a, sink),
        Command::SweepAlpha(a) => sweep(a, sink),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Serialize)]
struct FileRow {
    input: String,
    output: String,
    tensors: usize,
    bytes: u64,
}

fn synth(a: &SynthArgs, sink: &Sink) -> Result<(), CliError> {
    if a.tensors == 0 {
        return Err(usage("--tensors must be at least 1"));
    }
    let axis = a.outlier_axis.unwrap_or(match a.kind {
        KindArg::Weight => AxisArg::Row,
        KindArg::Activation => AxisArg::Column,
    });
    let base = SynthSpec {
        rows: a.rows,
        cols: a.cols,
        base_std: a.std,
        outlier_fraction: a.outlier_fraction,
        outlier_scale: a.outlier_scale,
        outlier_axis: axis.into(),
        seed: a.seed,
    };
    base.validate().map_err(|e| usage(e.to_string()))?;
    let mut m = TensorMap::new();
    for i in 0..a.tensors {
        let spec = SynthSpec {
            seed: a.seed.wrapping_add(i as u64),
            ..base.clone()
        };
        let name = format!("h.{}.{}.weight", i / LAYER_GROUPS.len(), LAYER_GROUPS[i % LAYER_GROUPS.len()]);
        let t = match a.kind {
            KindArg::Weight => synth_weights(&spec)?,
            KindArg::Activation => synth_activations(&spec)?,
        };
        m.insert(t.with_name(name))?;
    }
    m.metadata.insert(
        "qmc.synth".into(),
        serde_json::to_string(&base).expect("spec serializes"),
    );
    save_model(&m, &a.output)?;
    let row = FileRow {
        input: String::new(),
        output: a.output.display().to_string(),
        tensors: m.len(),
        bytes: file_len(&a.output)?,
    };
    sink.emit(None, std::slice::from_ref(&row), &row)
}

fn file_len(p: &Path) -> Result<u64, CliError> {
    Ok(std::fs::metadata(p).with_path(p)?.len())
}

#[derive(Serialize)]
struct SchemeRecord<'a> {
    mode: QuantMode,
    scheme: &'a crate::quant::QuantScheme,
}

#[derive(serde::Deserialize)]
struct OwnedSchemeRecord {
    mode: QuantMode,
    scheme: crate::quant::QuantScheme,
}

/// Int8 safetensors with schemes in the metadata.
pub(crate) fn quantized_to_map(qs: &[QuantizedTensor]) -> crate::Result<TensorMap> {
    let mut m = TensorMap::new();
    for q in qs {
        let rec = SchemeRecord {
            mode: q.mode,
            scheme: &q.scheme,
        };
        m.metadata.insert(
            format!("{SCHEME_KEY_PREFIX}{}", q.name),
            serde_json::to_string(&rec).expect("scheme serializes"),
        );
        m.insert(Tensor::from_i8(q.name.clone(), q.shape.clone(), q.data.clone())?)?;
    }
    Ok(m)
}

pub(crate) fn map_to_quantized(m: &TensorMap) -> crate::Result<Vec<QuantizedTensor>> {
    m.iter()
        .map(|t| {
            let key = format!("{SCHEME_KEY_PREFIX}{}", t.name());
            let rec = m.metadata.get(&key).ok_or_else(|| {
                Error::Validation(format!("int8 tensor '{}' has no '{key}' metadata", t.name()))
            })?;
            let rec: OwnedSchemeRecord = serde_json::from_str(rec)
                .map_err(|e| Error::Format(format!("metadata '{key}': {e}")))?;
            let q = QuantizedTensor {
                name: t.name().to_owned(),
                shape: t.shape().to_vec(),
                mode: rec.mode,
                scheme: rec.scheme,
                data: t.as_i8().expect("int8 tensor").to_vec(),
            };
            q.validate()?;
            Ok(q)
        })
        .collect()
}

fn activation_stats(acts: &TensorMap, w: &Tensor) -> crate::Result<ChannelStats> {
    let a = acts.get(w.name()).ok_or_else(|| {
        Error::Validation(format!("no activations named '{}' for smoothing", w.name()))
    })?;
    match a.shape().len() {
        1 => ChannelStats::new(a.as_f32().ok_or_else(|| Error::Validation(format!("activation stats '{}' must be float32", a.name())))?.to_vec()),
        _ => ChannelStats::from_activations(a),
    }
}

fn quantize_one(
    t: &Tensor,
    q: &QuantFlags,
    alpha: f32,
    acts: Option<&TensorMap>,
) -> crate::Result<QuantizedTensor> {
    let mode = q.mode.into();
    match q.scheme {
        SchemeArg::Tensor => quantize_tensor_wise(t, mode),
        SchemeArg::Channel => quantize_channel_wise(t, q.axis.into(), mode),
        SchemeArg::Smooth => {
            let acts = acts.expect("checked by caller");
            let s = compute_smoothing_factors(&activation_stats(acts, t)?, t, alpha)?;
            quantize_smoothed(t, &s, SmoothTarget::Weight, mode)
        }
    }
}

/// Float32 matrices only; everything else is skipped with a notice.
fn float_matrices(m: &TensorMap) -> Vec<&Tensor> {
    m.iter()
        .filter(|t| {
            let ok = t.dtype() == DType::F32 && t.shape().len() == 2;
            if !ok {
                log::warn!(
                    "skipping '{}': {} rank-{} tensor is not a float32 matrix",
                    t.name(),
                    t.dtype().as_str(),
                    t.shape().len()
                );
            }
            ok
        })
        .collect()
}

#[derive(Serialize)]
struct QuantRow {
    tensor: String,
    scheme: String,
    entropy_bits: f64,
    excess_kurtosis: Option<f64>,
    mse: f64,
    relative_frobenius_err: f64,
}

fn quantize_all(
    m: &TensorMap,
    q: &QuantFlags,
    alpha: f32,
    acts: Option<&TensorMap>,
) -> Result<(Vec<QuantizedTensor>, Vec<QuantRow>), CliError> {
    use rayon::prelude::*;
    let ts = float_matrices(m);
    let out: Vec<(QuantizedTensor, QuantRow)> = ts
        .par_iter()
        .map(|t| {
            let qt = quantize_one(t, q, alpha, acts)?;
            let e = analyze_i8(&qt.data)?;
            let err = quant_error(t, &qt)?;
            let row = QuantRow {
                tensor: qt.name.clone(),
                scheme: qt.scheme.name().to_owned(),
                entropy_bits: e.entropy_bits,
                excess_kurtosis: e.excess_kurtosis,
                mse: err.mse,
                relative_frobenius_err: err.relative_frobenius_err,
            };
            Ok((qt, row))
        })
        .collect::<crate::Result<_>>()?;
    Ok(out.into_iter().unzip())
}

fn check_smooth_flags(q: &QuantFlags, alpha: f32, acts: &Option<std::path::PathBuf>) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(usage(format!("--alpha must be in [0, 1], got {alpha}")));
    }
    if q.scheme == SchemeArg::Smooth && acts.is_none() {
        return Err(usage("--scheme smooth needs --activations"));
    }
    Ok(())
}

fn quantize(a: &QuantizeArgs, sink: &Sink) -> Result<(), CliError> {
    check_smooth_flags(&a.quant, a.alpha, &a.activations)?;
    let m = load_model(&a.input)?;
    let acts = a.activations.as_ref().map(load_model).transpose()?;
    let (qs, rows) = quantize_all(&m, &a.quant, a.alpha, acts.as_ref())?;
    save_model(&quantized_to_map(&qs)?, &a.output)?;
    if let Some(raw) = &a.raw_out {
        write_raw_dump(raw, &qs)?;
    }
    sink.emit(a.output_report.as_deref(), &rows, &rows)
}

fn analyze(a: &AnalyzeArgs, sink: &Sink) -> Result<(), CliError> {
    let schemes = a
        .schemes
        .iter()
        .map(|s| s.parse::<AnalyzeScheme>())
        .collect::<crate::Result<Vec<_>>>()
        .map_err(|e| usage(e.to_string()))?;
    if schemes.is_empty() || a.codecs.is_empty() {
        return Err(usage("need at least one scheme and one codec"));
    }
    let m = load_model(&a.input)?;
    let opts = AnalyzeOptions {
        mode: a.mode.into(),
        axis: a.axis.into(),
    };
    let report = analyze_model(&m, &schemes, &a.codecs, &opts);
    for f in &report.failures {
        eprintln!("warning: tensor '{}' failed: {}", f.tensor, f.reason);
    }
    let means = report.group_means();
    #[derive(Serialize)]
    struct Out<'a> {
        rows: &'a [crate::bench::RatioRow],
        group_means: &'a [crate::bench::GroupMean],
        skipped: &'a [crate::bench::TensorNotice],
        failures: &'a [crate::bench::TensorNotice],
    }
    let out = Out {
        rows: &report.rows,
        group_means: &means,
        skipped: &report.skipped,
        failures: &report.failures,
    };
    if a.group_means {
        sink.emit(a.output.as_deref(), &means, &out)
    } else {
        sink.emit(a.output.as_deref(), &report.rows, &out)
    }
}

#[derive(Serialize)]
struct BlobRow {
    input: String,
    output: String,
    codec: String,
    original_len: u64,
    compressed_len: u64,
    ratio: f64,
}

fn compress(a: &CompressArgs, sink: &Sink) -> Result<(), CliError> {
    let codec = a.codec.resolve()?;
    let data = std::fs::read(&a.input).with_path(&a.input)?;
    let blob = codec.compress(&data)?;
    let bytes = blob.to_bytes();
    fsutil::write_bytes_atomic(&a.output, &bytes)?;
    let row = BlobRow {
        input: a.input.display().to_string(),
        output: a.output.display().to_string(),
        codec: codec.to_string(),
        original_len: data.len() as u64,
        compressed_len: bytes.len() as u64,
        ratio: compression_ratio(data.len() as u64, &blob).c,
    };
    sink.emit(None, std::slice::from_ref(&row), &row)
}

fn decompress(a: &DecompressArgs, sink: &Sink) -> Result<(), CliError> {
    let bytes = std::fs::read(&a.input).with_path(&a.input)?;
    let blob = Blob::from_bytes(&bytes)?;
    let data = blob.decompress()?;
    fsutil::write_bytes_atomic(&a.output, &data)?;
    let row = BlobRow {
        input: a.input.display().to_string(),
        output: a.output.display().to_string(),
        codec: blob.codec().name().to_owned(),
        original_len: data.len() as u64,
        compressed_len: bytes.len() as u64,
        ratio: data.len() as f64 / bytes.len() as f64,
    };
    sink.emit(None, std::slice::from_ref(&row), &row)
}

#[derive(Serialize)]
struct PackRow {
    tensor: String,
    scheme: String,
    codec: String,
    original_len: u64,
    blob_len: u64,
    ratio: f64,
}

fn pack(a: &PackArgs, sink: &Sink) -> Result<(), CliError> {
    let codec = a.codec.resolve()?;
    if a.quant.scheme == SchemeArg::Smooth {
        return Err(usage("pack quantizes float input tensor-wise or channel-wise; use `quantize --scheme smooth` first"));
    }
    let m = load_model(&a.input)?;
    let qs = if m.iter().all(|t| t.dtype() == DType::I8) {
        map_to_quantized(&m)?
    } else {
        quantize_all(&m, &a.quant, 0.5, None)?.0
    };
    let meta: BTreeMap<String, String> = m
        .metadata
        .iter()
        .filter(|(k, _)| !k.starts_with(SCHEME_KEY_PREFIX))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let manifest = container::pack(&a.output, &qs, codec, &meta)?;
    if let Some(raw) = &a.raw_out {
        write_raw_dump(raw, &qs)?;
    }
    let rows: Vec<PackRow> = manifest
        .tensors
        .iter()
        .map(|e| PackRow {
            tensor: e.name.clone(),
            scheme: e.scheme.name().to_owned(),
            codec: e.codec.name().to_owned(),
            original_len: e.original_len,
            blob_len: e.blob_len,
            ratio: e.original_len as f64 / e.blob_len as f64,
        })
        .collect();
    sink.emit(None, &rows, &rows)
}

fn unpack(a: &UnpackArgs, sink: &Sink) -> Result<(), CliError> {
    let (qs, meta) = if a.tensors.is_empty() {
        let bytes = std::fs::read(&a.input).with_path(&a.input)?;
        let (manifest, qs) = container::unpack_bytes(&bytes)?;
        (qs, manifest.metadata)
    } else {
        let mut r = ContainerReader::open(&a.input)?;
        let qs = a
            .tensors
            .iter()
            .map(|n| r.read_tensor(n))
            .collect::<crate::Result<Vec<_>>>()?;
        (qs, r.manifest().metadata.clone())
    };
    let mut m = if a.dequantize {
        qs.iter().map(dequantize).collect::<crate::Result<Vec<_>>>()?.into_iter().collect::<crate::Result<TensorMap>>()?
    } else {
        quantized_to_map(&qs)?
    };
    m.metadata.extend(meta);
    save_model(&m, &a.output)?;
    let row = FileRow {
        input: a.input.display().to_string(),
        output: a.output.display().to_string(),
        tensors: m.len(),
        bytes: file_len(&a.output)?,
    };
    sink.emit(None, std::slice::from_ref(&row), &row)
}

fn verify(a: &VerifyArgs, sink: &Sink) -> Result<(), CliError> {
    let report = container::verify(&a.input)?;
    for f in &report.failures {
        eprintln!("FAIL {}: {}", f.subject, f.reason);
    }
    #[derive(Serialize)]
    struct Row<'a> {
        subject: &'a str,
        status: &'a str,
        reason: &'a str,
    }
    let rows: Vec<Row> = if report.is_ok() {
        vec![Row {
            subject: "container",
            status: "ok",
            reason: "",
        }]
    } else {
        report
            .failures
            .iter()
            .map(|f| Row {
                subject: &f.subject,
                status: "fail",
                reason: &f.reason,
            })
            .collect()
    };
    sink.emit(None, &rows, &report)?;
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}

#[derive(Serialize)]
struct SpeedRow {
    codec: String,
    bytes: usize,
    compressed_bytes: usize,
    ratio: f64,
    repetitions: usize,
    comp_mb_s: f64,
    decomp_mb_s: f64,
    comp_cov: f64,
    decomp_cov: f64,
}

/// Tensor-wise quantized outlier weights of roughly `size` bytes.
pub(crate) fn synthetic_payload(size: usize, seed: u64) -> crate::Result<Vec<u8>> {
    let cols = 1024.min(size.max(1));
    let rows = size.div_ceil(cols).max(1);
    let t = synth_weights(&SynthSpec {
        rows,
        cols,
        outlier_fraction: 0.01,
        outlier_scale: 100.0,
        outlier_axis: crate::tensorio::OutlierAxis::Row,
        seed,
        ..Default::default()
    })?;
    let mut b = quantize_tensor_wise(&t, QuantMode::Symmetric)?.bytes();
    b.truncate(size);
    Ok(b)
}

fn bench_speed(a: &BenchSpeedArgs, sink: &Sink) -> Result<(), CliError> {
    if a.codecs.is_empty() {
        return Err(usage("need at least one codec"));
    }
    let data = match &a.input {
        Some(p) => std::fs::read(p).with_path(p)?,
        None => {
            if a.size == 0 {
                return Err(usage("--size must be positive"));
            }
            synthetic_payload(a.size, a.seed)?
        }
    };
    let mut rows = Vec::new();
    for &codec in &a.codecs {
        let r = bench_codec_speed(codec, &data, a.repetitions as usize)?;
        rows.push(SpeedRow {
            codec: codec.to_string(),
            bytes: r.bytes,
            compressed_bytes: r.compressed_bytes,
            ratio: r.bytes as f64 / r.compressed_bytes as f64,
            repetitions: r.repetitions,
            comp_mb_s: r.comp_mb_s,
            decomp_mb_s: r.decomp_mb_s,
            comp_cov: coefficient_of_variation(&r.comp_samples_mb_s),
            decomp_cov: coefficient_of_variation(&r.decomp_samples_mb_s),
        });
    }
    sink.emit(a.output.as_deref(), &rows, &rows)
}

fn total_ram_bytes() -> Option<u64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemTotal:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[derive(Serialize)]
struct LoadRow {
    strategy: &'static str,
    decode_mode: DecodeMode,
    compressed: bool,
    trials: usize,
    wall_time_s: f64,
    decode_time_s: f64,
    bytes_from_storage: u64,
    effective_throughput_mb_s: f64,
    cold_cache: String,
    ratio: f64,
    time_reduction: f64,
}

fn load_row(r: &LoadReport, ratio: f64, reduction: f64) -> LoadRow {
    LoadRow {
        strategy: r.strategy.name(),
        decode_mode: r.decode_mode,
        compressed: r.compressed,
        trials: r.trials,
        wall_time_s: r.wall_time_s,
        decode_time_s: r.decode_time_s,
        bytes_from_storage: r.bytes_from_storage,
        effective_throughput_mb_s: r.effective_throughput_mb_s,
        cold_cache: r.cold_cache.clone(),
        ratio,
        time_reduction: if r.compressed { reduction } else { 0.0 },
    }
}

fn bench_load_cmd(a: &BenchLoadArgs, sink: &Sink) -> Result<(), CliError> {
    if let Some(b) = a.bandwidth_mb_s {
        if !(b.is_finite() && b > 0.0) {
            return Err(usage(format!("--bandwidth-mb-s must be positive, got {b}")));
        }
    }
    if a.evict_bytes.is_some() && a.cold_cache != ColdCacheArg::Evict {
        return Err(usage("--evict-bytes only applies to --cold-cache evict"));
    }
    let cold_cache = match a.cold_cache {
        ColdCacheArg::Auto => ColdCache::Auto,
        ColdCacheArg::DropCaches => ColdCache::DropCaches,
        ColdCacheArg::Fadvise => ColdCache::Fadvise,
        ColdCacheArg::None => ColdCache::None,
        ColdCacheArg::Evict => ColdCache::Evict(match a.evict_bytes {
            Some(n) => n,
            None => 2 * total_ram_bytes().ok_or_else(|| usage("cannot read RAM size; pass --evict-bytes"))?,
        }),
    };
    let strategies: &[LoadStrategy] = match a.strategy {
        StrategyArg::Buffered => &[LoadStrategy::BufferedRead],
        StrategyArg::Mmap => &[LoadStrategy::MemoryMapped],
        StrategyArg::Both => &[LoadStrategy::BufferedRead, LoadStrategy::MemoryMapped],
    };
    let decodes: &[DecodeMode] = match a.decode {
        DecodeArg::Sequential => &[DecodeMode::Sequential],
        DecodeArg::Overlapped => &[DecodeMode::Overlapped],
        DecodeArg::Both => &[DecodeMode::Sequential, DecodeMode::Overlapped],
    };
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &strategy in strategies {
        for &decode in decodes {
            let opts = LoadOptions {
                strategy,
                decode,
                trials: a.trials as usize,
                cold_cache,
                bandwidth_limit: a.bandwidth_mb_s.map(|b| b * 1e6),
            };
            let cmp = bench_load(&a.container, &a.raw, &opts)?;
            rows.push(load_row(&cmp.raw, cmp.ratio, cmp.time_reduction));
            rows.push(load_row(&cmp.compressed, cmp.ratio, cmp.time_reduction));
            results.push(cmp);
        }
    }
    sink.emit(a.output.as_deref(), &rows, &results)
}

fn pick<'a>(m: &'a TensorMap, name: Option<&str>, path: &Path) -> Result<&'a Tensor, CliError> {
    match name {
        Some(n) => m
            .get(n)
            .ok_or_else(|| usage(format!("no tensor '{n}' in {}", path.display()))),
        None if m.len() == 1 => Ok(m.iter().next().unwrap()),
        None => Err(usage(format!(
            "{} holds {} tensors; choose one by name",
            path.display(),
            m.len()
        ))),
    }
}

fn sweep(a: &SweepAlphaArgs, sink: &Sink) -> Result<(), CliError> {
    if let Some(bad) = a.alphas.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(usage(format!("alpha {bad} outside [0, 1]")));
    }
    let (x, w) = match (&a.activations, &a.weights) {
        (Some(xp), Some(wp)) => {
            let (xm, wm) = (load_model(xp)?, load_model(wp)?);
            (pick(&xm, a.x_name.as_deref(), xp)?.clone(), pick(&wm, a.w_name.as_deref(), wp)?.clone())
        }
        _ => {
            let x = synth_activations(&SynthSpec {
                rows: a.tokens,
                cols: a.channels,
                outlier_fraction: a.outlier_fraction,
                outlier_scale: a.outlier_scale,
                outlier_axis: crate::tensorio::OutlierAxis::Column,
                seed: a.seed,
                ..Default::default()
            })
            .map_err(|e| usage(e.to_string()))?;
            let w = synth_weights(&SynthSpec {
                rows: a.channels,
                cols: a.out_features,
                base_std: 0.05,
                seed: a.seed.wrapping_add(1),
                ..Default::default()
            })
            .map_err(|e| usage(e.to_string()))?;
            (x, w)
        }
    };
    let report = sweep_alpha(&x, &w, &a.alphas, a.codec, a.mode.into())?;
    sink.emit(a.output.as_deref(), &report.rows, &report)
}
