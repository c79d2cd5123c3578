//! Tabled asymmetric numeral systems (FSE-style) over bytes.
//!
//! Block layout: `table_log` (u8), then 256 LEB128 varints holding the
//! normalized count of each symbol (canonical encodings only), then the
//! bitstream. Symbols are spread over the `2^table_log` state table with the
//! stride `(5/8) size + 3`. The encoder starts in state `L = 2^table_log`,
//! codes the block back to front, and finishes with the final state
//! (`table_log` bits) and a `1` sentinel bit; the decoder reads backwards
//! from the sentinel and must end in the initial state with no bits left.

use super::bits::{BackwardReader, LsbWriter};
use crate::entropy::Histogram;
use crate::{Error, Result};

pub const MIN_TABLE_LOG: u8 = 5;
pub const MAX_TABLE_LOG: u8 = 12;
pub const DEFAULT_TABLE_LOG: u8 = 12;

pub(crate) fn check_table_log(table_log: u8) -> Result<()> {
    if !(MIN_TABLE_LOG..=MAX_TABLE_LOG).contains(&table_log) {
        return Err(Error::Validation(format!(
            "table_log {table_log} outside [{MIN_TABLE_LOG}, {MAX_TABLE_LOG}]"
        )));
    }
    Ok(())
}

fn check_apportion_log(table_log: u8) -> Result<()> {
    if !(1..=MAX_TABLE_LOG).contains(&table_log) {
        return Err(Error::Validation(format!(
            "table_log {table_log} outside [1, {MAX_TABLE_LOG}]"
        )));
    }
    Ok(())
}

/// Symbol counts rescaled to sum to exactly `2^table_log`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedCounts {
    table_log: u8,
    norm: [u32; 256],
}

impl NormalizedCounts {
    /// `table_log` may be as small as 1 here; the codec itself only builds
    /// tables in `[MIN_TABLE_LOG, MAX_TABLE_LOG]`.
    pub fn new(table_log: u8, norm: [u32; 256]) -> Result<Self> {
        check_apportion_log(table_log)?;
        let sum: u64 = norm.iter().map(|&c| c as u64).sum();
        if sum != 1u64 << table_log {
            return Err(Error::Format(format!(
                "normalized counts sum to {sum}, expected {}",
                1u64 << table_log
            )));
        }
        Ok(NormalizedCounts { table_log, norm })
    }

    pub fn table_log(&self) -> u8 {
        self.table_log
    }

    pub fn counts(&self) -> &[u32; 256] {
        &self.norm
    }

    pub fn table_size(&self) -> usize {
        1 << self.table_log
    }
}

/// Largest-remainder apportionment of `h` onto `2^table_log` slots, with
/// every occurring symbol guaranteed at least one slot.
///
/// When that guarantee overshoots the table, slots are taken back one at a
/// time from the symbol whose code length grows least (`c * ln(n / (n-1))`).
pub fn normalize_counts(h: &Histogram, table_log: u8) -> Result<NormalizedCounts> {
    check_apportion_log(table_log)?;
    let size = 1u64 << table_log;
    let distinct = h.distinct_symbols() as u64;
    if distinct > size {
        return Err(Error::Validation(format!(
            "table_log {table_log} too small: {distinct} distinct symbols exceed {size} slots"
        )));
    }
    let total = h.total() as u128;
    let counts = h.counts();
    let mut norm = [0u32; 256];
    let mut rems = Vec::with_capacity(256);
    for s in 0..256 {
        let c = counts[s] as u128;
        if c == 0 {
            continue;
        }
        let exact = c * size as u128;
        let base = (exact / total) as u32;
        norm[s] = base.max(1);
        rems.push((exact % total, s));
    }
    let sum: u64 = norm.iter().map(|&c| c as u64).sum();
    if sum < size {
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, s) in rems.iter().cycle().take((size - sum) as usize) {
            norm[s] += 1;
        }
    } else {
        for _ in 0..(sum - size) {
            let s = (0..256)
                .filter(|&s| norm[s] > 1)
                .min_by(|&a, &b| {
                    let cost = |s: usize| counts[s] as f64 * (norm[s] as f64 / (norm[s] - 1) as f64).ln();
                    cost(a).total_cmp(&cost(b)).then(a.cmp(&b))
                })
                .expect("surplus implies a symbol with more than one slot");
            norm[s] -= 1;
        }
    }
    NormalizedCounts::new(table_log, norm)
}

/// Symbol at each state, from the stride spread.
fn spread(nc: &NormalizedCounts) -> Vec<u8> {
    let size = nc.table_size();
    let mask = size - 1;
    let step = (size >> 1) + (size >> 3) + 3;
    let mut table = vec![0u8; size];
    let mut pos = 0usize;
    for (s, &c) in nc.norm.iter().enumerate() {
        for _ in 0..c {
            table[pos] = s as u8;
            pos = (pos + step) & mask;
        }
    }
    debug_assert_eq!(pos, 0);
    table
}

#[inline]
fn floor_log2(x: u32) -> u32 {
    31 - x.leading_zeros()
}

#[derive(Clone, Copy)]
struct DecodeEntry {
    symbol: u8,
    nb_bits: u8,
    base: u16,
}

fn decode_table(nc: &NormalizedCounts) -> Vec<DecodeEntry> {
    let size = nc.table_size() as u32;
    let log = nc.table_log as u32;
    let mut next = nc.norm;
    spread(nc)
        .into_iter()
        .map(|s| {
            let x = next[s as usize];
            next[s as usize] += 1;
            let nb = log - floor_log2(x);
            DecodeEntry {
                symbol: s,
                nb_bits: nb as u8,
                base: ((x << nb) - size) as u16,
            }
        })
        .collect()
}

struct EncodeTable {
    /// Next state (in `[L, 2L)`) for symbol `s` and reduced state `x`, at
    /// `start[s] + x - norm[s]`.
    states: Vec<u16>,
    start: [u32; 256],
}

fn encode_table(nc: &NormalizedCounts) -> EncodeTable {
    let size = nc.table_size() as u32;
    let mut start = [0u32; 256];
    let mut acc = 0;
    for s in 0..256 {
        start[s] = acc;
        acc += nc.norm[s];
    }
    let mut states = vec![0u16; size as usize];
    let mut next = nc.norm;
    for (u, s) in spread(nc).into_iter().enumerate() {
        let s = s as usize;
        let x = next[s];
        next[s] += 1;
        states[(start[s] + x - nc.norm[s]) as usize] = (u as u32 + size) as u16;
    }
    EncodeTable { states, start }
}

fn write_header(nc: &NormalizedCounts, out: &mut Vec<u8>) {
    out.push(nc.table_log);
    for &c in &nc.norm {
        let mut v = c;
        loop {
            let byte = (v & 0x7f) as u8;
            v >>= 7;
            if v == 0 {
                out.push(byte);
                break;
            }
            out.push(byte | 0x80);
        }
    }
}

/// Parse the table header; returns the counts and the header length.
fn read_header(block: &[u8]) -> Result<(NormalizedCounts, usize)> {
    let table_log = *block
        .first()
        .ok_or_else(|| Error::Integrity("empty tans block".into()))?;
    check_table_log(table_log).map_err(|e| Error::Format(e.to_string()))?;
    let mut norm = [0u32; 256];
    let mut pos = 1;
    for (s, slot) in norm.iter_mut().enumerate() {
        let mut v = 0u32;
        let mut shift = 0;
        loop {
            let b = *block
                .get(pos)
                .ok_or_else(|| Error::Integrity("tans header truncated".into()))?;
            pos += 1;
            v |= ((b & 0x7f) as u32) << shift;
            if b & 0x80 == 0 {
                if b == 0 && shift > 0 {
                    return Err(Error::Format(format!("non-canonical count for symbol {s}")));
                }
                break;
            }
            shift += 7;
            if shift > 14 {
                return Err(Error::Format(format!("count for symbol {s} is too long")));
            }
        }
        *slot = v;
    }
    Ok((NormalizedCounts::new(table_log, norm)?, pos))
}

pub(crate) fn header_len(block: &[u8]) -> Result<usize> {
    Ok(read_header(block)?.1)
}

pub(crate) fn encode_block(data: &[u8], table_log: u8) -> Result<Vec<u8>> {
    check_table_log(table_log)?;
    let h = Histogram::from_bytes(data)?;
    let nc = normalize_counts(&h, table_log)?;
    let enc = encode_table(&nc);
    let log = table_log as u32;
    let size = 1u32 << log;

    let mut out = Vec::with_capacity(data.len() / 2 + 300);
    write_header(&nc, &mut out);
    let mut w = LsbWriter::with_capacity(data.len());
    let mut x = size;
    for &b in data.iter().rev() {
        let s = b as usize;
        let f = nc.norm[s];
        let mut k = floor_log2(x) - floor_log2(f);
        if (x >> k) < f {
            k -= 1;
        }
        w.push(x & ((1 << k) - 1), k);
        x = enc.states[(enc.start[s] + (x >> k) - f) as usize] as u32;
    }
    w.push(x - size, log);
    out.extend_from_slice(&w.finish_with_sentinel());
    Ok(out)
}

pub(crate) fn decode_block(block: &[u8], n: usize, out: &mut Vec<u8>) -> Result<()> {
    let (nc, header) = read_header(block)?;
    let table = decode_table(&nc);
    let mut r = BackwardReader::new(&block[header..])?;
    let mut state = r.read(nc.table_log as u32)? as usize;
    let start = out.len();
    out.reserve(n);
    for _ in 0..n {
        let e = table[state];
        out.push(e.symbol);
        state = e.base as usize + r.read(e.nb_bits as u32)? as usize;
    }
    if state != 0 || r.remaining() != 0 {
        return Err(Error::Integrity(format!(
            "tans stream did not end cleanly (state {state}, {} bits left)",
            r.remaining()
        )));
    }
    let mut seen = [false; 256];
    for &b in &out[start..] {
        seen[b as usize] = true;
    }
    if let Some(s) = (0..256).find(|&s| nc.norm[s] > 0 && !seen[s]) {
        return Err(Error::Integrity(format!("count table lists symbol {s} that never occurs")));
    }
    Ok(())
}
