//! `QMC1` archive: a checksummed JSON manifest followed by 64-byte aligned
//! blobs, one per quantized tensor.
//!
//! ```text
//! 0      4  magic "QMC1"
//! 4      4  format version (u32 LE, currently 1)
//! 8      8  manifest length M (u64 LE)
//! 16     M  manifest: canonical JSON, keys sorted, no whitespace
//! 16+M   4  CRC-32 of bytes [0, 16+M)
//!        .. zero padding up to the next multiple of 64 (the blob region)
//!        .. blobs at 64-aligned offsets relative to the blob region,
//!           zero padding between them; the file ends at the last blob
//! ```
//!
//! Each manifest entry records the blob's byte range, the CRC-32 of the
//! stored blob bytes (`blob_crc32`) and of the original int8 payload
//! (`crc32`), so every stored byte is covered by some check.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::{Blob, Codec, CodecId};
use crate::error::IoContext;
use crate::quant::{QuantMode, QuantScheme, QuantizedTensor};
use crate::{fsutil, Error, Result};

pub const MAGIC: &[u8; 4] = b"QMC1";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: u64 = 64;
const PREFIX_LEN: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub mode: QuantMode,
    pub scheme: QuantScheme,
    pub codec: CodecId,
    /// Relative to the start of the blob region.
    pub blob_offset: u64,
    pub blob_len: u64,
    pub original_len: u64,
    pub crc32: u32,
    pub blob_crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub codec: CodecId,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.tensors.iter().find(|e| e.name == name)
    }

    fn to_canonical_json(&self) -> Vec<u8> {
        // serde_json's Value map is ordered by key, which gives sorted output.
        let v = serde_json::to_value(self).expect("manifest serializes");
        serde_json::to_vec(&v).expect("manifest serializes")
    }

    /// Offset of the blob region for a manifest of `json_len` bytes.
    fn data_start(json_len: u64) -> u64 {
        (PREFIX_LEN + json_len + 4).next_multiple_of(ALIGN)
    }

    /// End of the last blob, relative to the blob region.
    fn blob_region_len(&self) -> u64 {
        self.tensors.iter().map(|e| e.blob_offset + e.blob_len).max().unwrap_or(0)
    }

    /// Structural checks that do not need the blob bytes.
    fn check_layout(&self) -> Result<()> {
        let mut names = HashSet::new();
        let mut cursor = 0u64;
        for e in &self.tensors {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Format(format!("duplicate tensor '{}' in manifest", e.name)));
            }
            if e.codec != self.codec {
                return Err(Error::Format(format!(
                    "tensor '{}' uses codec {} in a {} container",
                    e.name, e.codec, self.codec
                )));
            }
            if e.blob_offset % ALIGN != 0 || e.blob_offset < cursor || e.blob_len == 0 {
                return Err(Error::Format(format!(
                    "tensor '{}': blob range {}+{} is misaligned or overlaps",
                    e.name, e.blob_offset, e.blob_len
                )));
            }
            cursor = e
                .blob_offset
                .checked_add(e.blob_len)
                .ok_or_else(|| Error::Format(format!("tensor '{}': blob range overflows", e.name)))?;
        }
        Ok(())
    }
}

struct Packed {
    entry: ManifestEntry,
    blob: Vec<u8>,
}

fn pack_one(t: &QuantizedTensor, codec: Codec) -> Result<Packed> {
    t.validate()?;
    let bytes = t.as_bytes();
    let blob = codec.compress(bytes)?.to_bytes();
    Ok(Packed {
        entry: ManifestEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            mode: t.mode,
            scheme: t.scheme.clone(),
            codec: codec.id(),
            blob_offset: 0,
            blob_len: blob.len() as u64,
            original_len: bytes.len() as u64,
            crc32: crc32fast::hash(bytes),
            blob_crc32: crc32fast::hash(&blob),
        },
        blob,
    })
}

/// Serialize a container in memory. Output is deterministic for fixed input.
pub fn pack_bytes(
    tensors: &[QuantizedTensor],
    codec: Codec,
    metadata: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let mut names = HashSet::new();
    for t in tensors {
        if !names.insert(t.name.as_str()) {
            return Err(Error::Validation(format!("duplicate tensor name '{}'", t.name)));
        }
    }
    let packed: Vec<Packed> = tensors
        .par_iter()
        .map(|t| pack_one(t, codec))
        .collect::<Result<_>>()?;

    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(packed.len());
    for p in &packed {
        let mut e = p.entry.clone();
        e.blob_offset = offset;
        offset = (offset + e.blob_len).next_multiple_of(ALIGN);
        entries.push(e);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        codec: codec.id(),
        metadata: metadata.clone(),
        tensors: entries,
    };
    let json = manifest.to_canonical_json();
    let data_start = Manifest::data_start(json.len() as u64);
    let total = data_start + manifest.blob_region_len();

    let mut out = Vec::with_capacity(total as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    for (p, e) in packed.iter().zip(&manifest.tensors) {
        out.resize((data_start + e.blob_offset) as usize, 0);
        out.extend_from_slice(&p.blob);
    }
    out.resize(total as usize, 0);
    Ok(out)
}

/// Write a container file atomically.
pub fn pack(
    path: impl AsRef<Path>,
    tensors: &[QuantizedTensor],
    codec: Codec,
    metadata: &BTreeMap<String, String>,
) -> Result<Manifest> {
    let bytes = pack_bytes(tensors, codec, metadata)?;
    fsutil::write_bytes_atomic(path.as_ref(), &bytes)?;
    Ok(parse_prefix(&bytes)?.0)
}

/// Parse the fixed prefix and manifest; returns the manifest and the blob
/// region offset.
pub(crate) fn parse_prefix(bytes: &[u8]) -> Result<(Manifest, u64)> {
    if bytes.len() < PREFIX_LEN as usize {
        return Err(Error::Integrity("container shorter than its fixed header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("not a QMC1 container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let crc_end = PREFIX_LEN
        .checked_add(json_len)
        .and_then(|n| n.checked_add(4))
        .filter(|&n| n <= bytes.len() as u64)
        .ok_or_else(|| Error::Integrity("container truncated inside the manifest".into()))?
        as usize;
    let body = &bytes[..crc_end - 4];
    let stored = u32::from_le_bytes(bytes[crc_end - 4..crc_end].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("manifest checksum mismatch".into()));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Unsupported(format!(
            "container format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&body[PREFIX_LEN as usize..])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(Error::Format("manifest and header disagree on format version".into()));
    }
    manifest.check_layout()?;
    Ok((manifest, Manifest::data_start(json_len)))
}

pub(crate) fn decode_entry(e: &ManifestEntry, blob_bytes: &[u8]) -> Result<QuantizedTensor> {
    let ctx = |err: Error| match err {
        Error::Integrity(m) => Error::Integrity(format!("tensor '{}': {m}", e.name)),
        Error::Format(m) => Error::Format(format!("tensor '{}': {m}", e.name)),
        other => other,
    };
    if crc32fast::hash(blob_bytes) != e.blob_crc32 {
        return Err(Error::Integrity(format!("tensor '{}': blob CRC mismatch", e.name)));
    }
    let blob = Blob::from_bytes(blob_bytes).map_err(ctx)?;
    if blob.codec() != e.codec || blob.original_len() != e.original_len || blob.checksum() != e.crc32 {
        return Err(Error::Integrity(format!(
            "tensor '{}': blob header disagrees with the manifest",
            e.name
        )));
    }
    let data = blob.decompress().map_err(ctx)?;
    let q = QuantizedTensor {
        name: e.name.clone(),
        shape: e.shape.clone(),
        mode: e.mode,
        scheme: e.scheme.clone(),
        data: data.into_iter().map(|b| b as i8).collect(),
    };
    q.validate()?;
    Ok(q)
}

/// True when every byte outside the prefix, manifest and blobs is zero.
fn padding_is_zero(bytes: &[u8], manifest: &Manifest, data_start: u64) -> bool {
    let len = bytes.len() as u64;
    let json_end = PREFIX_LEN + u64::from_le_bytes(bytes[8..16].try_into().unwrap()) + 4;
    let mut gaps = vec![(json_end, data_start.min(len))];
    let mut cursor = data_start;
    for e in &manifest.tensors {
        let start = data_start + e.blob_offset;
        gaps.push((cursor.min(len), start.min(len)));
        cursor = start + e.blob_len;
    }
    gaps.iter().all(|&(a, b)| bytes[a as usize..b as usize].iter().all(|&x| x == 0))
}

/// Decode every tensor of an in-memory container.
pub fn unpack_bytes(bytes: &[u8]) -> Result<(Manifest, Vec<QuantizedTensor>)> {
    let (manifest, data_start) = parse_prefix(bytes)?;
    let expected = data_start + manifest.blob_region_len();
    if bytes.len() as u64 != expected {
        return Err(Error::Integrity(format!(
            "container is {} bytes, manifest implies {expected}",
            bytes.len()
        )));
    }
    if !padding_is_zero(bytes, &manifest, data_start) {
        return Err(Error::Integrity("nonzero bytes in alignment padding".into()));
    }
    let tensors = manifest
        .tensors
        .par_iter()
        .map(|e| {
            let start = (data_start + e.blob_offset) as usize;
            decode_entry(e, &bytes[start..start + e.blob_len as usize])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, tensors))
}

pub fn unpack(path: impl AsRef<Path>) -> Result<Vec<QuantizedTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).with_path(path)?;
    Ok(unpack_bytes(&bytes)?.1)
}

/// Counts bytes pulled through the wrapped reader.
#[derive(Debug)]
pub struct CountingReader<R> {
    inner: R,
    count: u64,
}

impl<R> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader { inner, count: 0 }
    }

    pub fn bytes_read(&self) -> u64 {
        self.count
    }

    pub fn into_inner(self) -> R {
        self.inner
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count += n as u64;
        Ok(n)
    }
}

impl<R: Seek> Seek for CountingReader<R> {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        self.inner.seek(pos)
    }
}

/// Random access to individual tensors: opening reads the prefix and
/// manifest, each [`read_tensor`](Self::read_tensor) reads one blob.
pub struct ContainerReader<R> {
    reader: CountingReader<R>,
    manifest: Manifest,
    data_start: u64,
}

impl ContainerReader<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).with_path(path)?;
        Self::new(f)
    }
}

fn read_exact_or_integrity<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Integrity(format!("container truncated in {what}")),
        _ => Error::io(what, e),
    })
}

impl<R: Read + Seek> ContainerReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut reader = CountingReader::new(inner);
        let mut prefix = [0u8; PREFIX_LEN as usize];
        read_exact_or_integrity(&mut reader, &mut prefix, "header")?;
        if &prefix[..4] != MAGIC {
            return Err(Error::Format("not a QMC1 container (bad magic)".into()));
        }
        let json_len = u64::from_le_bytes(prefix[8..16].try_into().unwrap());
        // Reject absurd lengths before allocating.
        let file_len = reader.inner.seek(SeekFrom::End(0)).map_err(|e| Error::io("container", e))?;
        reader
            .inner
            .seek(SeekFrom::Start(PREFIX_LEN))
            .map_err(|e| Error::io("container", e))?;
        if json_len + PREFIX_LEN + 4 > file_len {
            return Err(Error::Integrity("container truncated inside the manifest".into()));
        }
        let mut head = prefix.to_vec();
        head.resize((PREFIX_LEN + json_len + 4) as usize, 0);
        read_exact_or_integrity(&mut reader, &mut head[PREFIX_LEN as usize..], "manifest")?;
        let (manifest, data_start) = parse_prefix(&head)?;
        if file_len != data_start + manifest.blob_region_len() {
            return Err(Error::Integrity(format!(
                "container is {file_len} bytes, manifest implies {}",
                data_start + manifest.blob_region_len()
            )));
        }
        Ok(ContainerReader {
            reader,
            manifest,
            data_start,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn bytes_read(&self) -> u64 {
        self.reader.bytes_read()
    }

    /// Raw blob bytes of one entry.
    pub fn read_blob(&mut self, name: &str) -> Result<Vec<u8>> {
        let e = self
            .manifest
            .entry(name)
            .ok_or_else(|| Error::Validation(format!("no tensor named '{name}'")))?;
        let (offset, len) = (self.data_start + e.blob_offset, e.blob_len as usize);
        self.reader
            .seek(SeekFrom::Start(offset))
            .map_err(|err| Error::io(name, err))?;
        let mut buf = vec![0u8; len];
        read_exact_or_integrity(&mut self.reader, &mut buf, name)?;
        Ok(buf)
    }

    pub fn read_tensor(&mut self, name: &str) -> Result<QuantizedTensor> {
        let blob = self.read_blob(name)?;
        let e = self.manifest.entry(name).expect("entry looked up by read_blob");
        decode_entry(e, &blob)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyFailure {
    /// Tensor name, or one of `header`, `manifest`, `layout`, `padding`.
    pub subject: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub tensors_checked: usize,
    pub failures: Vec<VerifyFailure>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, subject: &str, reason: impl ToString) {
        self.failures.push(VerifyFailure {
            subject: subject.to_owned(),
            reason: reason.to_string(),
        });
    }
}

/// Check every byte of a container without building tensors. Problems are
/// report entries; only failing to read the file is an error.
pub fn verify(path: impl AsRef<Path>) -> Result<VerifyReport> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).with_path(path)?;
    Ok(verify_bytes(&bytes))
}

pub fn verify_bytes(bytes: &[u8]) -> VerifyReport {
    let mut report = VerifyReport::default();
    let (manifest, data_start) = match parse_prefix(bytes) {
        Ok(v) => v,
        Err(e) => {
            let subject = match e {
                Error::Format(_) if bytes.get(..4) != Some(MAGIC) => "header",
                _ => "manifest",
            };
            report.fail(subject, e);
            return report;
        }
    };
    let len = bytes.len() as u64;
    let expected = data_start + manifest.blob_region_len();
    if len != expected {
        report.fail("layout", format!("file is {len} bytes, manifest implies {expected}"));
    }

    if !padding_is_zero(bytes, &manifest, data_start) {
        report.fail("padding", "nonzero bytes in alignment padding");
    }

    for e in &manifest.tensors {
        report.tensors_checked += 1;
        let start = data_start + e.blob_offset;
        let end = start + e.blob_len;
        if end > len {
            report.fail(&e.name, "blob extends past the end of the file");
            continue;
        }
        if let Err(err) = decode_entry(e, &bytes[start as usize..end as usize]) {
            report.fail(&e.name, err);
        }
    }
    report
}
