//! `qmc` command line.
//!
//! Exit codes: 0 success, 1 operational failure (including a failed
//! `verify`), 2 usage error (unknown flag or subcommand, invalid flag value).
//!
//! `--config FILE` takes a JSON object whose keys are long flag names
//! (`{"codec": "tans:11", "trials": 3, "json": true}`); flags given on the
//! command line win. Reports are CSV on stdout unless `--json` or
//! `--output` says otherwise; JSON reports echo the effective arguments.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::codecs::Codec;
use crate::error::IoContext;
use crate::quant::{Axis, QuantMode};
use crate::tensorio::OutlierAxis;
use crate::{fsutil, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qmc", version, about = "Quantize, measure and entropy-code model tensors")]
pub struct Cli {
    /// Worker threads for per-tensor work (timed benchmarks always use one)
    #[arg(long, global = true, env = "QMC_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    /// Emit reports as JSON instead of CSV
    #[arg(long, global = true)]
    json: bool,

    /// JSON file of default flag values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Write seeded synthetic float32 tensors with outlier channels
    Synth(SynthArgs),
    /// Quantize float32 tensors to int8 safetensors
    Quantize(QuantizeArgs),
    /// Per-tensor entropy and compression ratio report
    Analyze(AnalyzeArgs),
    /// Entropy-code an arbitrary file into a blob
    Compress(CompressArgs),
    /// Decode a blob back to the original bytes
    Decompress(DecompressArgs),
    /// Pack quantized tensors into a container
    Pack(PackArgs),
    /// Extract tensors from a container
    Unpack(UnpackArgs),
    /// Check every checksum and byte of a container
    Verify(VerifyArgs),
    /// Single-threaded codec throughput
    BenchSpeed(BenchSpeedArgs),
    /// Load time of a flat int8 dump versus a container
    BenchLoad(BenchLoadArgs),
    /// Entropy, ratio and error across smoothing strengths
    SweepAlpha(SweepAlphaArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Symmetric,
    Asymmetric,
}

impl From<ModeArg> for QuantMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Symmetric => QuantMode::Symmetric,
            ModeArg::Asymmetric => QuantMode::Asymmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum AxisArg {
    Row,
    Column,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Row => Axis::Row,
            AxisArg::Column => Axis::Column,
        }
    }
}

impl From<AxisArg> for OutlierAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Row => OutlierAxis::Row,
            AxisArg::Column => OutlierAxis::Column,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SchemeArg {
    Tensor,
    Channel,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum KindArg {
    Weight,
    Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StrategyArg {
    Buffered,
    Mmap,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DecodeArg {
    Sequential,
    Overlapped,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ColdCacheArg {
    Auto,
    DropCaches,
    Fadvise,
    Evict,
    None,
}

/// Quantization flags shared by several commands.
#[derive(Debug, Args, Serialize)]
struct QuantFlags {
    /// Quantization granularity
    #[arg(long, value_enum, default_value = "tensor")]
    scheme: SchemeArg,
    /// Channel axis for channel-wise quantization
    #[arg(long, value_enum, default_value = "row")]
    axis: AxisArg,
    /// Integer range: symmetric [-127, 127] or asymmetric [-128, 127]
    #[arg(long, value_enum, default_value = "symmetric")]
    mode: ModeArg,
}

#[derive(Debug, Args, Serialize)]
struct CodecFlags {
    /// store, huffman, tans[:table_log] or zstd[:level]
    #[arg(long, default_value = "tans")]
    codec: Codec,
    /// tANS table size exponent (overrides the codec suffix)
    #[arg(long, value_parser = clap::value_parser!(u8).range(5..=12))]
    table_log: Option<u8>,
    /// Zstandard level (overrides the codec suffix)
    #[arg(long, allow_negative_numbers = true)]
    level: Option<i32>,
}

impl CodecFlags {
    fn resolve(&self) -> Result<Codec, CliError> {
        match (self.codec, self.table_log, self.level) {
            (Codec::Tans { .. }, Some(t), None) => Ok(Codec::Tans { table_log: t }),
            (Codec::Zstd { .. }, None, Some(l)) => Ok(Codec::Zstd { level: l }),
            (c, None, None) => Ok(c),
            (c, _, _) => Err(CliError::Usage(format!(
                "--table-log applies to tans and --level to zstd, not to {c}"
            ))),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Output safetensors file
    output: PathBuf,
    #[arg(long, default_value_t = 256)]
    rows: usize,
    #[arg(long, default_value_t = 256)]
    cols: usize,
    /// Number of tensors, named like transformer layers
    #[arg(long, default_value_t = 1)]
    tensors: usize,
    /// Weights are [in, out]; activations are [tokens, channels]
    #[arg(long, value_enum, default_value = "weight")]
    kind: KindArg,
    /// Standard deviation of the Gaussian body
    #[arg(long, default_value_t = 1.0)]
    std: f64,
    #[arg(long, default_value_t = 0.01)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 100.0)]
    outlier_scale: f64,
    /// Outlier channel direction [default: row for weights, column for activations]
    #[arg(long, value_enum)]
    outlier_axis: Option<AxisArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct QuantizeArgs {
    /// Float32 safetensors input
    input: PathBuf,
    /// Int8 safetensors output; schemes are stored in the metadata
    output: PathBuf,
    #[command(flatten)]
    quant: QuantFlags,
    /// Smoothing strength for --scheme smooth
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
    /// Activations for --scheme smooth: one tensor per weight, same name,
    /// either [tokens, in] samples or [in] channel maxima
    #[arg(long, value_name = "FILE")]
    activations: Option<PathBuf>,
    /// Also write the flat int8 dump of the payloads
    #[arg(long, value_name = "FILE")]
    raw_out: Option<PathBuf>,
    /// Report destination (default stdout)
    #[arg(long, short)]
    output_report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct AnalyzeArgs {
    /// Float32 safetensors model
    input: PathBuf,
    /// Comma-separated schemes: tensor, channel
    #[arg(long, value_delimiter = ',', default_value = "tensor,channel")]
    schemes: Vec<String>,
    /// Comma-separated codecs
    #[arg(long, value_delimiter = ',', default_value = "huffman,tans")]
    codecs: Vec<Codec>,
    #[arg(long, value_enum, default_value = "row")]
    axis: AxisArg,
    #[arg(long, value_enum, default_value = "symmetric")]
    mode: ModeArg,
    /// Emit per-layer-group means instead of per-tensor rows
    #[arg(long)]
    group_means: bool,
    /// Report destination (default stdout)
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CompressArgs {
    input: PathBuf,
    output: PathBuf,
    #[command(flatten)]
    codec: CodecFlags,
}

#[derive(Debug, Args, Serialize)]
struct DecompressArgs {
    input: PathBuf,
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PackArgs {
    /// Safetensors input: int8 from `quantize`, or float32 quantized on the fly
    input: PathBuf,
    /// Container output
    output: PathBuf,
    #[command(flatten)]
    codec: CodecFlags,
    #[command(flatten)]
    quant: QuantFlags,
    /// Also write the flat int8 dump (the load benchmark baseline)
    #[arg(long, value_name = "FILE")]
    raw_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct UnpackArgs {
    input: PathBuf,
    /// Safetensors output
    output: PathBuf,
    /// Extract only these tensors (repeatable); reads just their blobs
    #[arg(long = "tensor", value_name = "NAME")]
    tensors: Vec<String>,
    /// Write dequantized float32 instead of int8 plus schemes
    #[arg(long)]
    dequantize: bool,
}

#[derive(Debug, Args, Serialize)]
struct VerifyArgs {
    input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BenchSpeedArgs {
    /// Input bytes; a seeded tensor-wise quantized outlier matrix if absent
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "huffman,tans,zstd")]
    codecs: Vec<Codec>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    repetitions: u32,
    /// Synthetic input size in bytes
    #[arg(long, default_value_t = 16 << 20)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct BenchLoadArgs {
    container: PathBuf,
    /// Flat int8 dump of the same tensors (`pack --raw-out`)
    raw: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "sequential")]
    decode: DecodeArg,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    trials: u32,
    #[arg(long, value_enum, default_value = "auto")]
    cold_cache: ColdCacheArg,
    /// Junk bytes read per trial with --cold-cache evict [default: 2x RAM]
    #[arg(long)]
    evict_bytes: Option<u64>,
    /// Emulated storage bandwidth, 10^6 bytes per second
    #[arg(long)]
    bandwidth_mb_s: Option<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SweepAlphaArgs {
    /// Activation safetensors [tokens, in]; synthetic if absent
    #[arg(long, requires = "weights")]
    activations: Option<PathBuf>,
    /// Weight safetensors [in, out]
    #[arg(long, requires = "activations")]
    weights: Option<PathBuf>,
    /// Tensor name within the activation file (needed if it holds several)
    #[arg(long)]
    x_name: Option<String>,
    /// Tensor name within the weight file
    #[arg(long)]
    w_name: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    alphas: Vec<f32>,
    #[arg(long, default_value = "tans")]
    codec: Codec,
    #[arg(long, value_enum, default_value = "symmetric")]
    mode: ModeArg,
    #[arg(long, default_value_t = 512)]
    tokens: usize,
    #[arg(long, default_value_t = 256)]
    channels: usize,
    #[arg(long, default_value_t = 256)]
    out_features: usize,
    #[arg(long, default_value_t = 0.01)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 100.0)]
    outlier_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Op(Error),
    /// Already reported on stderr.
    Failed,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Op(e)
    }
}

/// Where and how a command prints its report.
struct Sink<'a> {
    json: bool,
    command: &'a Command,
}

impl Sink<'_> {
    fn emit<T: Serialize, R: Serialize>(
        &self,
        dest: Option<&Path>,
        rows: &[R],
        result: &T,
    ) -> Result<(), CliError> {
        let bytes = if self.json {
            let v = serde_json::json!({ "config": self.command, "result": result });
            let mut b = serde_json::to_vec_pretty(&v).expect("report serializes");
            b.push(b'\n');
            b
        } else {
            let mut b = Vec::new();
            crate::bench::write_csv_rows(&mut b, rows)?;
            b
        };
        match dest {
            Some(p) => fsutil::write_bytes_atomic(p, &bytes)?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(&bytes).with_path("<stdout>")?;
                out.flush().with_path("<stdout>")?;
            }
        }
        Ok(())
    }
}

fn config_value_args(key: &str, v: &serde_json::Value) -> Result<Vec<OsString>, String> {
    let flag = format!("--{key}");
    let scalar = |v: &serde_json::Value| -> Result<String, String> {
        match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            _ => Err(format!("config key '{key}': unsupported value {v}")),
        }
    };
    match v {
        serde_json::Value::Bool(true) => Ok(vec![flag.into()]),
        serde_json::Value::Bool(false) | serde_json::Value::Null => Ok(vec![]),
        serde_json::Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            Ok(vec![flag.into(), parts.join(",").into()])
        }
        other => Ok(vec![flag.into(), scalar(other)?.into()]),
    }
}

/// Append flags from `--config` that the command line does not already set.
fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", Path::new(&path).display()))?;
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", Path::new(&path).display()))?;
    let given = |key: &str| {
        argv.iter().any(|a| {
            let s = a.to_string_lossy();
            s == format!("--{key}") || s.starts_with(&format!("--{key}="))
        })
    };
    let split = argv.iter().position(|a| a == "--").unwrap_or(argv.len());
    let mut out: Vec<OsString> = argv[..split].to_vec();
    for (k, v) in &obj {
        let key = k.replace('_', "-");
        if key == "config" || given(&key) {
            continue;
        }
        out.extend(config_value_args(&key, v)?);
    }
    out.extend_from_slice(&argv[split..]);
    Ok(out)
}

/// Parse `argv` (program name first), run the command, return the exit code.
pub fn dispatch<I>(argv: I) -> i32
where
    I: IntoIterator<Item = OsString>,
{
    let argv = match merge_config(argv.into_iter().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n as usize);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_FAILURE;
        }
    };
    let sink = Sink {
        json: cli.json,
        command: &cli.command,
    };
    match pool.install(|| commands::run(&cli.command, &sink)) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Op(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
        Err(CliError::Failed) => EXIT_FAILURE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn config_merge_respects_command_line() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"codec":"huffman","trials":3,"json":true,"codecs":["tans","zstd"],"x":false}"#)
            .unwrap();
        let argv: Vec<OsString> = ["qmc", "pack", "--config", cfg.to_str().unwrap(), "--codec", "store"]
            .iter()
            .map(OsString::from)
            .collect();
        let merged: Vec<String> = merge_config(argv)
            .unwrap()
            .into_iter()
            .map(|s| s.into_string().unwrap())
            .collect();
        let tail = &merged[6..];
        assert_eq!(tail, ["--codecs", "tans,zstd", "--json", "--trials", "3"]);
    }
}
