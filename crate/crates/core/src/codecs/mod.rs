//! Lossless byte codecs behind one blob format.
//!
//! Blob wire layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 1    | magic `0xB1`                            |
//! | 1      | 1    | codec id (0 store, 1 huffman, 2 tans, 3 zstd) |
//! | 2      | 8    | original length                         |
//! | 10     | 4    | CRC-32 (IEEE) of the original bytes     |
//! | 14     | 4    | block count                             |
//! | 18     | ...  | blocks: `u32 compressed_len`, then that many bytes |
//!
//! Native codecs cut the input into [`BLOCK_SIZE`] blocks, each carrying its
//! own table. The Zstandard adapter stores a single block.

mod bits;
pub mod huffman;
pub(crate) mod speed;
pub mod tans;
mod zstd_adapter;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use huffman::{CodeTable, MAX_CODE_LEN};
pub use speed::{bench_codec_speed, coefficient_of_variation, SpeedReport};
pub use tans::{normalize_counts, NormalizedCounts, DEFAULT_TABLE_LOG, MAX_TABLE_LOG, MIN_TABLE_LOG};
pub use zstd_adapter::checked_frame;

pub const BLOB_MAGIC: u8 = 0xB1;
pub const BLOB_HEADER_LEN: usize = 18;
pub const BLOCK_SIZE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecId {
    Store,
    Huffman,
    Tans,
    Zstd,
}

impl CodecId {
    pub fn as_u8(self) -> u8 {
        match self {
            CodecId::Store => 0,
            CodecId::Huffman => 1,
            CodecId::Tans => 2,
            CodecId::Zstd => 3,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => CodecId::Store,
            1 => CodecId::Huffman,
            2 => CodecId::Tans,
            3 => CodecId::Zstd,
            _ => return Err(Error::Format(format!("unknown codec id {v}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecId::Store => "store",
            CodecId::Huffman => "huffman",
            CodecId::Tans => "tans",
            CodecId::Zstd => "zstd",
        }
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A configured codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "codec", rename_all = "snake_case")]
pub enum Codec {
    /// Blocks copied verbatim; the ratio-1 baseline.
    Store,
    Huffman,
    Tans { table_log: u8 },
    Zstd { level: i32 },
}

pub const DEFAULT_ZSTD_LEVEL: i32 = 3;

impl Codec {
    pub fn id(&self) -> CodecId {
        match self {
            Codec::Store => CodecId::Store,
            Codec::Huffman => CodecId::Huffman,
            Codec::Tans { .. } => CodecId::Tans,
            Codec::Zstd { .. } => CodecId::Zstd,
        }
    }

    pub fn name(&self) -> &'static str {
        self.id().name()
    }

    pub fn tans() -> Self {
        Codec::Tans {
            table_log: DEFAULT_TABLE_LOG,
        }
    }

    pub fn zstd() -> Self {
        Codec::Zstd {
            level: DEFAULT_ZSTD_LEVEL,
        }
    }

    pub fn compress(&self, data: &[u8]) -> Result<Blob> {
        if data.is_empty() {
            return Err(Error::Validation("cannot compress an empty input".into()));
        }
        let checksum = crc32fast::hash(data);
        let blocks = match *self {
            Codec::Store => data.chunks(BLOCK_SIZE).map(<[u8]>::to_vec).collect(),
            Codec::Huffman => data.chunks(BLOCK_SIZE).map(huffman::encode_block).collect::<Result<_>>()?,
            Codec::Tans { table_log } => {
                tans::check_table_log(table_log)?;
                data.chunks(BLOCK_SIZE)
                    .map(|b| tans::encode_block(b, table_log))
                    .collect::<Result<_>>()?
            }
            Codec::Zstd { level } => vec![zstd_adapter::encode(data, level)?],
        };
        for b in &blocks {
            if b.len() > u32::MAX as usize {
                return Err(Error::Unsupported("block larger than 4 GiB".into()));
            }
        }
        Ok(Blob {
            codec: self.id(),
            original_len: data.len() as u64,
            checksum,
            blocks,
        })
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Codec {
    type Err = Error;

    /// `store`, `huffman`, `tans`, `tans:<table_log>`, `zstd`, `zstd:<level>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: &str| {
            a.parse::<i64>()
                .map_err(|_| Error::Validation(format!("bad codec parameter '{a}' in '{s}'")))
        };
        let codec = match (name, arg) {
            ("store", None) => Codec::Store,
            ("huffman", None) => Codec::Huffman,
            ("tans", None) => Codec::tans(),
            ("tans", Some(a)) => {
                let t = num(a)?;
                let table_log = u8::try_from(t)
                    .map_err(|_| Error::Validation(format!("table_log {t} out of range")))?;
                tans::check_table_log(table_log)?;
                Codec::Tans { table_log }
            }
            ("zstd", None) => Codec::zstd(),
            ("zstd", Some(a)) => Codec::Zstd {
                level: num(a)? as i32,
            },
            _ => return Err(Error::Validation(format!("unknown codec '{s}'"))),
        };
        Ok(codec)
    }
}

/// Compressed bytes plus the metadata needed to verify their decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    codec: CodecId,
    original_len: u64,
    checksum: u32,
    blocks: Vec<Vec<u8>>,
}

impl Blob {
    pub fn codec(&self) -> CodecId {
        self.codec
    }

    pub fn original_len(&self) -> u64 {
        self.original_len
    }

    /// CRC-32 of the original bytes.
    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    pub fn blocks(&self) -> &[Vec<u8>] {
        &self.blocks
    }

    /// Total serialized size, the denominator of every reported ratio.
    pub fn wire_len(&self) -> usize {
        BLOB_HEADER_LEN + self.blocks.iter().map(|b| 4 + b.len()).sum::<usize>()
    }

    /// Bytes spent on framing and per-block code tables.
    pub fn header_overhead(&self) -> Result<usize> {
        let mut n = BLOB_HEADER_LEN + 4 * self.blocks.len();
        for b in &self.blocks {
            n += match self.codec {
                CodecId::Store => 0,
                CodecId::Huffman => huffman::HEADER_LEN,
                CodecId::Tans => tans::header_len(b)?,
                CodecId::Zstd => zstd_adapter::HEADER_LEN,
            };
        }
        Ok(n)
    }

    /// Entropy-coded bytes only: [`wire_len`](Self::wire_len) minus
    /// [`header_overhead`](Self::header_overhead).
    pub fn bitstream_len(&self) -> Result<usize> {
        Ok(self.wire_len() - self.header_overhead()?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(BLOB_MAGIC);
        out.push(self.codec.as_u8());
        out.extend_from_slice(&self.original_len.to_le_bytes());
        out.extend_from_slice(&self.checksum.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.len() as u32).to_le_bytes());
            out.extend_from_slice(b);
        }
    }

    /// Parse a serialized blob; `bytes` must contain exactly one blob.
    pub fn from_bytes(bytes: &[u8]) -> Result<Blob> {
        if bytes.len() < BLOB_HEADER_LEN {
            return Err(Error::Integrity(format!(
                "blob truncated: {} bytes, header needs {BLOB_HEADER_LEN}",
                bytes.len()
            )));
        }
        if bytes[0] != BLOB_MAGIC {
            return Err(Error::Format(format!("bad blob magic 0x{:02x}", bytes[0])));
        }
        let codec = CodecId::from_u8(bytes[1])?;
        let original_len = u64::from_le_bytes(bytes[2..10].try_into().unwrap());
        let checksum = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
        let block_count = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
        if original_len == 0 {
            return Err(Error::Format("blob declares an empty original".into()));
        }
        let expected_blocks = expected_block_count(codec, original_len);
        if block_count as u64 != expected_blocks {
            return Err(Error::Format(format!(
                "{block_count} blocks for {original_len} {codec} bytes, expected {expected_blocks}"
            )));
        }
        let mut rest = &bytes[BLOB_HEADER_LEN..];
        if rest.len() / 4 < block_count {
            return Err(Error::Integrity("blob truncated inside the block table".into()));
        }
        let mut blocks = Vec::with_capacity(block_count);
        for i in 0..block_count {
            if rest.len() < 4 {
                return Err(Error::Integrity(format!("blob truncated before block {i}")));
            }
            let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
            rest = &rest[4..];
            if rest.len() < len {
                return Err(Error::Integrity(format!(
                    "block {i} declares {len} bytes, {} remain",
                    rest.len()
                )));
            }
            blocks.push(rest[..len].to_vec());
            rest = &rest[len..];
        }
        if !rest.is_empty() {
            return Err(Error::Integrity(format!("{} trailing bytes after blob", rest.len())));
        }
        Ok(Blob {
            codec,
            original_len,
            checksum,
            blocks,
        })
    }

    /// Decode and verify length and checksum.
    pub fn decompress(&self) -> Result<Vec<u8>> {
        let total = usize::try_from(self.original_len)
            .map_err(|_| Error::Unsupported("original larger than address space".into()))?;
        let out = match self.codec {
            CodecId::Zstd => {
                let [block] = self.blocks.as_slice() else {
                    return Err(Error::Format("zstd blob must hold exactly one block".into()));
                };
                zstd_adapter::decode(block, total)?
            }
            codec => {
                let mut out = Vec::with_capacity(total);
                for (i, block) in self.blocks.iter().enumerate() {
                    let n = BLOCK_SIZE.min(total - i * BLOCK_SIZE);
                    let before = out.len();
                    match codec {
                        CodecId::Store => {
                            if block.len() != n {
                                return Err(Error::Integrity(format!(
                                    "stored block {i} has {} bytes, expected {n}",
                                    block.len()
                                )));
                            }
                            out.extend_from_slice(block);
                        }
                        CodecId::Huffman => huffman::decode_block(block, n, &mut out)?,
                        CodecId::Tans => tans::decode_block(block, n, &mut out)?,
                        CodecId::Zstd => unreachable!(),
                    }
                    debug_assert_eq!(out.len() - before, n);
                }
                out
            }
        };
        if out.len() as u64 != self.original_len {
            return Err(Error::Integrity(format!(
                "decoded {} bytes, expected {}",
                out.len(),
                self.original_len
            )));
        }
        let crc = crc32fast::hash(&out);
        if crc != self.checksum {
            return Err(Error::Integrity(format!(
                "CRC mismatch: decoded 0x{crc:08x}, expected 0x{:08x}",
                self.checksum
            )));
        }
        Ok(out)
    }
}

fn expected_block_count(codec: CodecId, original_len: u64) -> u64 {
    match codec {
        CodecId::Zstd => 1,
        _ => original_len.div_ceil(BLOCK_SIZE as u64),
    }
}

pub fn compress(codec: Codec, data: &[u8]) -> Result<Blob> {
    codec.compress(data)
}

/// Parse and decode a serialized blob.
pub fn decompress(bytes: &[u8]) -> Result<Vec<u8>> {
    Blob::from_bytes(bytes)?.decompress()
}

/// Entropy-coding ratio `C` and the implied ratio against float32 storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratio {
    pub c: f64,
    pub total_vs_f32: f64,
}

/// `original_len / wire_len(blob)`; `total_vs_f32 = 4 C` for int8 originals.
pub fn compression_ratio(original_len: u64, blob: &Blob) -> Ratio {
    let c = original_len as f64 / blob.wire_len() as f64;
    Ratio {
        c,
        total_vs_f32: 4.0 * c,
    }
}

pub fn zstd_available() -> bool {
    zstd_adapter::AVAILABLE
}
