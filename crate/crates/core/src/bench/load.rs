//! Storage-to-memory load time of a flat int8 dump versus a container whose
//! blobs are decoded as they arrive.
//!
//! Cold reads: before every trial both files are evicted from the page cache.
//! [`ColdCache::Auto`] writes `/proc/sys/vm/drop_caches` when privileged and
//! otherwise falls back to `posix_fadvise(DONTNEED)` on the two files with a
//! warning; [`ColdCache::Evict`] reads a junk file of the given size instead.
//!
//! Timing split: `wall_time_s` is end to end (open, manifest parse, reads,
//! decode). `decode_time_s` sums only blob decoding.
//!
//! A bandwidth cap emulates slow storage: the reader sleeps so cumulative
//! bytes taken from storage never exceed `rate * elapsed`.

use std::fs::File;
use std::hint::black_box;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::codecs::speed::median;
use crate::container::{decode_entry, parse_prefix, ManifestEntry};
use crate::error::IoContext;
use crate::quant::QuantizedTensor;
use crate::{fsutil, Error, Result};

const CHUNK: usize = 1 << 20;
const PAGE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadStrategy {
    BufferedRead,
    MemoryMapped,
}

impl LoadStrategy {
    pub fn name(self) -> &'static str {
        match self {
            LoadStrategy::BufferedRead => "buffered_read",
            LoadStrategy::MemoryMapped => "memory_mapped",
        }
    }
}

/// Whether blob reads and decoding run back to back on one thread or on an
/// I/O thread and a decode thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Sequential,
    Overlapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "bytes")]
pub enum ColdCache {
    Auto,
    DropCaches,
    Fadvise,
    Evict(u64),
    /// Warm cache; trials measure memory bandwidth, not storage.
    None,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub strategy: LoadStrategy,
    pub decode: DecodeMode,
    pub trials: usize,
    pub cold_cache: ColdCache,
    /// Emulated storage bandwidth in bytes per second.
    pub bandwidth_limit: Option<f64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            strategy: LoadStrategy::BufferedRead,
            decode: DecodeMode::Sequential,
            trials: 5,
            cold_cache: ColdCache::Auto,
            bandwidth_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadReport {
    pub strategy: LoadStrategy,
    pub compressed: bool,
    pub decode_mode: DecodeMode,
    pub trials: usize,
    /// Medians over trials.
    pub wall_time_s: f64,
    pub decode_time_s: f64,
    pub bytes_from_storage: u64,
    /// Loaded int8 bytes per wall second, in 10^6 bytes/s.
    pub effective_throughput_mb_s: f64,
    pub wall_samples_s: Vec<f64>,
    pub cold_cache: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadComparison {
    pub raw: LoadReport,
    pub compressed: LoadReport,
    /// Raw bytes over container bytes.
    pub ratio: f64,
    /// `1 - compressed / raw` wall time.
    pub time_reduction: f64,
}

/// Flat int8 dump: payloads concatenated in order, no header.
pub fn raw_dump_bytes(tensors: &[QuantizedTensor]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tensors.iter().map(|t| t.numel()).sum());
    for t in tensors {
        out.extend_from_slice(t.as_bytes());
    }
    out
}

pub fn write_raw_dump(path: impl AsRef<Path>, tensors: &[QuantizedTensor]) -> Result<()> {
    let path = path.as_ref();
    fsutil::write_atomic(path, |w| {
        for t in tensors {
            w.write_all(t.as_bytes()).with_path(path)?;
        }
        Ok(())
    })
}

struct Throttle {
    rate: Option<f64>,
    start: Instant,
    charged: u64,
}

impl Throttle {
    fn new(rate: Option<f64>) -> Self {
        Throttle {
            rate,
            start: Instant::now(),
            charged: 0,
        }
    }

    fn charge(&mut self, n: usize) {
        self.charged += n as u64;
        if let Some(rate) = self.rate {
            let due = self.start + Duration::from_secs_f64(self.charged as f64 / rate);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
    }
}

fn read_exact_throttled(
    r: &mut impl Read,
    buf: &mut [u8],
    throttle: &mut Throttle,
    path: &Path,
) -> Result<()> {
    for chunk in buf.chunks_mut(CHUNK) {
        r.read_exact(chunk).with_path(path)?;
        throttle.charge(chunk.len());
    }
    Ok(())
}

/// Copy a mapped range out chunk by chunk so every page is faulted in.
fn copy_mapped(src: &[u8], throttle: &mut Throttle) -> Vec<u8> {
    let mut out = Vec::with_capacity(src.len());
    for chunk in src.chunks(CHUNK) {
        out.extend_from_slice(chunk);
        throttle.charge(chunk.len());
    }
    out
}

/// Fault in every page of a mapped range without copying it.
fn touch_mapped(src: &[u8], throttle: &mut Throttle) -> u64 {
    let mut acc = 0u64;
    for chunk in src.chunks(CHUNK) {
        for page in chunk.chunks(PAGE) {
            acc = acc.wrapping_add(page[0] as u64);
        }
        throttle.charge(chunk.len());
    }
    acc
}

fn map(path: &Path) -> Result<(File, memmap2::Mmap)> {
    let f = File::open(path).with_path(path)?;
    // SAFETY: the benchmark owns these files for the duration of the map.
    let m = unsafe { memmap2::Mmap::map(&f) }.with_path(path)?;
    Ok((f, m))
}

struct Trial {
    wall: f64,
    decode: f64,
    from_storage: u64,
    loaded: Vec<u8>,
}

fn load_raw(path: &Path, opts: &LoadOptions) -> Result<Trial> {
    let start = Instant::now();
    let mut throttle = Throttle::new(opts.bandwidth_limit);
    let loaded = match opts.strategy {
        LoadStrategy::BufferedRead => {
            let f = File::open(path).with_path(path)?;
            let len = f.metadata().with_path(path)?.len() as usize;
            let mut buf = vec![0u8; len];
            read_exact_throttled(&mut BufReader::with_capacity(CHUNK, f), &mut buf, &mut throttle, path)?;
            buf
        }
        LoadStrategy::MemoryMapped => {
            if std::fs::metadata(path).with_path(path)?.len() == 0 {
                Vec::new()
            } else {
                let (_f, m) = map(path)?;
                copy_mapped(&m, &mut throttle)
            }
        }
    };
    let loaded = black_box(loaded);
    Ok(Trial {
        wall: start.elapsed().as_secs_f64(),
        decode: 0.0,
        from_storage: loaded.len() as u64,
        loaded,
    })
}

/// Read the fixed prefix and manifest through a reader; returns the manifest
/// entries in file order, the blob region offset and the bytes consumed.
fn read_head(
    r: &mut impl Read,
    throttle: &mut Throttle,
    path: &Path,
) -> Result<(Vec<ManifestEntry>, u64, u64)> {
    let mut head = vec![0u8; 16];
    read_exact_throttled(r, &mut head, throttle, path)?;
    let json_len = u64::from_le_bytes(head[8..16].try_into().unwrap());
    let file_len = std::fs::metadata(path).with_path(path)?.len();
    if json_len + 20 > file_len {
        return Err(Error::Integrity("container truncated inside the manifest".into()));
    }
    head.resize(16 + json_len as usize + 4, 0);
    read_exact_throttled(r, &mut head[16..], throttle, path)?;
    let (manifest, data_start) = parse_prefix(&head)?;
    Ok((manifest.tensors, data_start, head.len() as u64))
}

fn decode_timed(e: &ManifestEntry, blob: &[u8], decode: &mut f64, out: &mut Vec<u8>) -> Result<()> {
    let t = Instant::now();
    let q = decode_entry(e, blob)?;
    *decode += t.elapsed().as_secs_f64();
    out.extend_from_slice(q.as_bytes());
    Ok(())
}

fn load_container_buffered(path: &Path, opts: &LoadOptions) -> Result<Trial> {
    let start = Instant::now();
    let mut throttle = Throttle::new(opts.bandwidth_limit);
    let mut r = BufReader::with_capacity(CHUNK, File::open(path).with_path(path)?);
    let (entries, data_start, head_len) = read_head(&mut r, &mut throttle, path)?;
    let blob_bytes: u64 = entries.iter().map(|e| e.blob_len).sum();
    let mut loaded = Vec::with_capacity(entries.iter().map(|e| e.original_len as usize).sum());
    let mut decode = 0.0;
    match opts.decode {
        DecodeMode::Sequential => {
            let mut buf = Vec::new();
            for e in &entries {
                r.seek(SeekFrom::Start(data_start + e.blob_offset)).with_path(path)?;
                buf.resize(e.blob_len as usize, 0);
                read_exact_throttled(&mut r, &mut buf, &mut throttle, path)?;
                decode_timed(e, &buf, &mut decode, &mut loaded)?;
            }
        }
        DecodeMode::Overlapped => {
            let (tx, rx) = mpsc::sync_channel::<Result<Vec<u8>>>(2);
            std::thread::scope(|s| -> Result<()> {
                let entries = &entries;
                s.spawn(move || {
                    for e in entries {
                        let mut buf = vec![0u8; e.blob_len as usize];
                        let res = r
                            .seek(SeekFrom::Start(data_start + e.blob_offset))
                            .with_path(path)
                            .and_then(|_| read_exact_throttled(&mut r, &mut buf, &mut throttle, path))
                            .map(|_| buf);
                        let failed = res.is_err();
                        if tx.send(res).is_err() || failed {
                            return;
                        }
                    }
                });
                for e in entries {
                    let buf = rx
                        .recv()
                        .map_err(|_| Error::Integrity("reader thread stopped early".into()))??;
                    decode_timed(e, &buf, &mut decode, &mut loaded)?;
                }
                Ok(())
            })?;
        }
    }
    Ok(Trial {
        wall: start.elapsed().as_secs_f64(),
        decode,
        from_storage: head_len + blob_bytes,
        loaded: black_box(loaded),
    })
}

fn load_container_mapped(path: &Path, opts: &LoadOptions) -> Result<Trial> {
    let start = Instant::now();
    let mut throttle = Throttle::new(opts.bandwidth_limit);
    let (_f, m) = map(path)?;
    let bytes: &[u8] = &m;
    if bytes.len() < 16 {
        return Err(Error::Integrity("container shorter than its fixed header".into()));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let head_len = (16 + json_len + 4).min(bytes.len() as u64) as usize;
    touch_mapped(&bytes[..head_len], &mut throttle);
    let (manifest, data_start) = parse_prefix(bytes)?;
    let entries = manifest.tensors;
    let range = |e: &ManifestEntry| -> Result<&[u8]> {
        let a = (data_start + e.blob_offset) as usize;
        bytes
            .get(a..a + e.blob_len as usize)
            .ok_or_else(|| Error::Integrity(format!("tensor '{}': blob past end of file", e.name)))
    };
    let mut loaded = Vec::with_capacity(entries.iter().map(|e| e.original_len as usize).sum());
    let mut decode = 0.0;
    match opts.decode {
        DecodeMode::Sequential => {
            for e in &entries {
                let blob = range(e)?;
                black_box(touch_mapped(blob, &mut throttle));
                decode_timed(e, blob, &mut decode, &mut loaded)?;
            }
        }
        DecodeMode::Overlapped => {
            let (tx, rx) = mpsc::sync_channel::<usize>(2);
            std::thread::scope(|s| -> Result<()> {
                let (entries, range) = (&entries, &range);
                s.spawn(move || {
                    for (i, e) in entries.iter().enumerate() {
                        if let Ok(blob) = range(e) {
                            black_box(touch_mapped(blob, &mut throttle));
                        }
                        if tx.send(i).is_err() {
                            return;
                        }
                    }
                });
                for e in entries {
                    rx.recv()
                        .map_err(|_| Error::Integrity("prefetch thread stopped early".into()))?;
                    decode_timed(e, range(e)?, &mut decode, &mut loaded)?;
                }
                Ok(())
            })?;
        }
    }
    let blob_bytes: u64 = entries.iter().map(|e| e.blob_len).sum();
    Ok(Trial {
        wall: start.elapsed().as_secs_f64(),
        decode,
        from_storage: head_len as u64 + blob_bytes,
        loaded: black_box(loaded),
    })
}

#[cfg(target_os = "linux")]
fn fadvise_dontneed(path: &Path) -> Result<()> {
    use std::os::fd::AsRawFd;
    let f = File::open(path).with_path(path)?;
    f.sync_data().with_path(path)?;
    // SAFETY: plain syscall on a valid descriptor.
    let rc = unsafe { libc::posix_fadvise(f.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED) };
    if rc != 0 {
        return Err(Error::io(path, std::io::Error::from_raw_os_error(rc)));
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
fn fadvise_dontneed(_path: &Path) -> Result<()> {
    Err(Error::Capability("posix_fadvise eviction is only wired up on Linux".into()))
}

fn drop_caches() -> std::io::Result<()> {
    // SAFETY: sync(2) has no preconditions.
    #[cfg(unix)]
    unsafe {
        libc::sync()
    };
    std::fs::write("/proc/sys/vm/drop_caches", b"1\n")
}

fn evict_by_reading(bytes: u64, junk: &mut Option<tempfile::NamedTempFile>) -> Result<()> {
    if junk.is_none() {
        let mut f = tempfile::NamedTempFile::new().map_err(|e| Error::io("eviction file", e))?;
        let block = vec![0x5Au8; CHUNK];
        let mut left = bytes;
        while left > 0 {
            let n = left.min(CHUNK as u64) as usize;
            f.write_all(&block[..n]).map_err(|e| Error::io(f.path(), e))?;
            left -= n as u64;
        }
        f.flush().map_err(|e| Error::io(f.path(), e))?;
        *junk = Some(f);
    }
    let path = junk.as_ref().unwrap().path().to_path_buf();
    let mut r = File::open(&path).with_path(&path)?;
    let mut buf = vec![0u8; CHUNK];
    while r.read(&mut buf).with_path(&path)? > 0 {}
    Ok(())
}

struct Evictor {
    method: ColdCache,
    files: Vec<PathBuf>,
    junk: Option<tempfile::NamedTempFile>,
    warned: bool,
}

impl Evictor {
    fn new(method: ColdCache, files: Vec<PathBuf>) -> Self {
        Evictor {
            method,
            files,
            junk: None,
            warned: false,
        }
    }

    /// Evict and return the method actually used.
    fn evict(&mut self) -> Result<&'static str> {
        match self.method {
            ColdCache::None => Ok("none"),
            ColdCache::DropCaches => drop_caches()
                .map(|_| "drop_caches")
                .map_err(|e| Error::io("/proc/sys/vm/drop_caches", e)),
            ColdCache::Fadvise => {
                self.files.iter().try_for_each(|p| fadvise_dontneed(p))?;
                Ok("fadvise")
            }
            ColdCache::Evict(bytes) => {
                evict_by_reading(bytes, &mut self.junk)?;
                Ok("evict")
            }
            ColdCache::Auto => {
                if drop_caches().is_ok() {
                    return Ok("drop_caches");
                }
                if !self.warned {
                    log::warn!("cannot drop the page cache (unprivileged); using posix_fadvise eviction");
                    self.warned = true;
                }
                self.files.iter().try_for_each(|p| fadvise_dontneed(p))?;
                Ok("fadvise")
            }
        }
    }
}

fn summarize(trials: &[Trial], compressed: bool, opts: &LoadOptions, method: &str) -> LoadReport {
    let wall: Vec<f64> = trials.iter().map(|t| t.wall).collect();
    let decode: Vec<f64> = trials.iter().map(|t| t.decode).collect();
    let wall_time_s = median(&wall);
    let loaded = trials[0].loaded.len() as f64;
    LoadReport {
        strategy: opts.strategy,
        compressed,
        decode_mode: opts.decode,
        trials: trials.len(),
        wall_time_s,
        decode_time_s: median(&decode),
        bytes_from_storage: trials[0].from_storage,
        effective_throughput_mb_s: loaded / 1e6 / wall_time_s,
        wall_samples_s: wall,
        cold_cache: method.to_owned(),
    }
}

/// Median load time of the raw dump and of the container, alternating the
/// two per trial so drift affects both alike. The decoded container must
/// reproduce the raw dump byte for byte.
pub fn bench_load(
    container_path: impl AsRef<Path>,
    raw_path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<LoadComparison> {
    let (cpath, rpath) = (container_path.as_ref(), raw_path.as_ref());
    if opts.trials == 0 {
        return Err(Error::Validation("trials must be at least 1".into()));
    }
    if let Some(b) = opts.bandwidth_limit {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Validation(format!("bandwidth limit must be positive, got {b}")));
        }
    }
    let mut evictor = Evictor::new(opts.cold_cache, vec![cpath.to_path_buf(), rpath.to_path_buf()]);
    let mut method = "none";
    let (mut raw, mut comp) = (Vec::new(), Vec::new());
    for _ in 0..opts.trials {
        evictor.evict()?;
        raw.push(load_raw(rpath, opts)?);
        method = evictor.evict()?;
        comp.push(match opts.strategy {
            LoadStrategy::BufferedRead => load_container_buffered(cpath, opts)?,
            LoadStrategy::MemoryMapped => load_container_mapped(cpath, opts)?,
        });
    }
    if raw[0].loaded != comp[0].loaded {
        return Err(Error::Validation(format!(
            "'{}' is not the flat dump of '{}'",
            rpath.display(),
            cpath.display()
        )));
    }
    let raw = summarize(&raw, false, opts, method);
    let compressed = summarize(&comp, true, opts, method);
    let ratio = raw.bytes_from_storage as f64 / std::fs::metadata(cpath).with_path(cpath)?.len() as f64;
    let time_reduction = 1.0 - compressed.wall_time_s / raw.wall_time_s;
    Ok(LoadComparison {
        raw,
        compressed,
        ratio,
        time_reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::Codec;
    use crate::container::pack;
    use crate::quant::{quantize_tensor_wise, QuantMode};
    use crate::tensorio::{synth_weights, SynthSpec};

    fn fixture(dir: &Path, codec: Codec) -> (PathBuf, PathBuf) {
        let qs: Vec<QuantizedTensor> = (0..3)
            .map(|i| {
                let t = synth_weights(&SynthSpec {
                    rows: 256,
                    cols: 256,
                    outlier_fraction: 0.02,
                    outlier_scale: 30.0,
                    seed: i,
                    ..Default::default()
                })
                .unwrap()
                .with_name(format!("t{i}"));
                quantize_tensor_wise(&t, QuantMode::Symmetric).unwrap()
            })
            .collect();
        let (c, r) = (dir.join("m.qmc"), dir.join("m.raw"));
        pack(&c, &qs, codec, &Default::default()).unwrap();
        write_raw_dump(&r, &qs).unwrap();
        (c, r)
    }

    #[test]
    fn all_strategies_agree() {
        let dir = tempfile::tempdir().unwrap();
        let (c, r) = fixture(dir.path(), Codec::Huffman);
        for strategy in [LoadStrategy::BufferedRead, LoadStrategy::MemoryMapped] {
            for decode in [DecodeMode::Sequential, DecodeMode::Overlapped] {
                let opts = LoadOptions {
                    strategy,
                    decode,
                    trials: 2,
                    cold_cache: ColdCache::None,
                    bandwidth_limit: None,
                };
                let cmp = bench_load(&c, &r, &opts).unwrap();
                assert_eq!(cmp.raw.bytes_from_storage, 3 * 65536);
                assert!(cmp.compressed.bytes_from_storage < cmp.raw.bytes_from_storage);
                assert!(cmp.ratio > 1.0);
                assert_eq!(cmp.compressed.wall_samples_s.len(), 2);
            }
        }
    }

    #[test]
    fn mismatched_dump_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (c, r) = fixture(dir.path(), Codec::tans());
        let mut bytes = std::fs::read(&r).unwrap();
        bytes[7] ^= 1;
        std::fs::write(&r, bytes).unwrap();
        let opts = LoadOptions {
            trials: 1,
            cold_cache: ColdCache::Fadvise,
            ..Default::default()
        };
        assert!(matches!(bench_load(&c, &r, &opts), Err(Error::Validation(_))));
    }
}
