//! Canonical Huffman coding over bytes, code lengths limited to 15 bits.
//!
//! Block layout: 128-byte table of 4-bit code lengths (byte `i` holds symbol
//! `2i` in its low nibble and `2i + 1` in its high nibble), then the
//! MSB-first bitstream zero-padded to a byte. Codes are assigned canonically
//! in `(length, symbol)` order. Only symbols occurring in the block get a
//! length; a lone symbol gets length 1.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::bits::{MsbReader, MsbWriter};
use crate::{Error, Result};

pub const MAX_CODE_LEN: u8 = 15;
pub const HEADER_LEN: usize = 128;

/// Code lengths and their canonical codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeTable {
    lengths: [u8; 256],
    codes: [u16; 256],
}

impl CodeTable {
    pub fn from_counts(counts: &[u64; 256]) -> Result<Self> {
        Self::from_lengths(code_lengths(counts, MAX_CODE_LEN)?)
    }

    /// Validates a complete prefix code (or a single 1-bit code).
    pub fn from_lengths(lengths: [u8; 256]) -> Result<Self> {
        let used: Vec<usize> = (0..256).filter(|&s| lengths[s] > 0).collect();
        if used.is_empty() {
            return Err(Error::Format("code table has no symbols".into()));
        }
        if let Some(&s) = used.iter().find(|&&s| lengths[s] > MAX_CODE_LEN) {
            return Err(Error::Format(format!("symbol {s} has code length {}", lengths[s])));
        }
        let kraft: u32 = used.iter().map(|&s| 1u32 << (MAX_CODE_LEN - lengths[s])).sum();
        let complete = if used.len() == 1 {
            lengths[used[0]] == 1
        } else {
            kraft == 1 << MAX_CODE_LEN
        };
        if !complete {
            return Err(Error::Format(format!(
                "code lengths violate the Kraft equality (sum {kraft} / {})",
                1u32 << MAX_CODE_LEN
            )));
        }
        let mut order = used;
        order.sort_by_key(|&s| (lengths[s], s));
        let mut codes = [0u16; 256];
        let mut code = 0u32;
        let mut prev = lengths[order[0]];
        for &s in &order {
            code <<= lengths[s] - prev;
            prev = lengths[s];
            codes[s] = code as u16;
            code += 1;
        }
        Ok(CodeTable { lengths, codes })
    }

    pub fn lengths(&self) -> &[u8; 256] {
        &self.lengths
    }

    pub fn code(&self, sym: u8) -> (u16, u8) {
        (self.codes[sym as usize], self.lengths[sym as usize])
    }

    pub fn max_len(&self) -> u8 {
        *self.lengths.iter().max().unwrap()
    }

    /// Σ 2^-len as an exact fraction over 2^15.
    pub fn kraft_numerator(&self) -> u32 {
        self.lengths
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| 1u32 << (MAX_CODE_LEN - l))
            .sum()
    }

    fn write_header(&self, out: &mut Vec<u8>) {
        for pair in self.lengths.chunks_exact(2) {
            out.push(pair[0] | (pair[1] << 4));
        }
    }

    fn read_header(bytes: &[u8]) -> Result<Self> {
        let mut lengths = [0u8; 256];
        for (i, &b) in bytes[..HEADER_LEN].iter().enumerate() {
            lengths[2 * i] = b & 0x0f;
            lengths[2 * i + 1] = b >> 4;
        }
        Self::from_lengths(lengths)
    }
}

/// Optimal prefix-code lengths for `counts`, limited to `max_len` bits.
///
/// Plain Huffman first; package-merge only when the tree is too deep.
pub fn code_lengths(counts: &[u64; 256], max_len: u8) -> Result<[u8; 256]> {
    let syms: Vec<usize> = (0..256).filter(|&s| counts[s] > 0).collect();
    let mut lengths = [0u8; 256];
    match syms.len() {
        0 => return Err(Error::Validation("no symbols to code".into())),
        1 => {
            lengths[syms[0]] = 1;
            return Ok(lengths);
        }
        n if n > 1usize << max_len => {
            return Err(Error::Validation(format!("{n} symbols do not fit in {max_len}-bit codes")))
        }
        _ => {}
    }
    let depths = huffman_depths(&syms.iter().map(|&s| counts[s]).collect::<Vec<_>>());
    if depths.iter().all(|&d| d <= max_len as u32) {
        for (&s, &d) in syms.iter().zip(&depths) {
            lengths[s] = d as u8;
        }
    } else {
        let weights: Vec<u64> = syms.iter().map(|&s| counts[s]).collect();
        for (&s, l) in syms.iter().zip(package_merge(&weights, max_len)) {
            lengths[s] = l;
        }
    }
    Ok(lengths)
}

/// Unrestricted Huffman depths; ties broken by node creation order.
fn huffman_depths(weights: &[u64]) -> Vec<u32> {
    let n = weights.len();
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        weights.iter().enumerate().map(|(i, &w)| Reverse((w, i))).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    // Parents are created after their children, so walk the nodes backwards.
    let mut depth = vec![0u32; 2 * n - 1];
    for i in (0..2 * n - 2).rev() {
        depth[i] = depth[parent[i]] + 1;
    }
    depth.truncate(n);
    depth
}

/// Length-limited optimal code lengths (Larmore-Hirschberg package-merge).
/// `weights` must hold at least two entries and fit in `2^max_len` leaves.
pub fn package_merge(weights: &[u64], max_len: u8) -> Vec<u8> {
    let n = weights.len();
    assert!(n >= 2 && n <= 1 << max_len);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (weights[i], i));

    // An item is a weight plus how many times each leaf occurs inside it.
    #[derive(Clone)]
    struct Item {
        weight: u64,
        leaves: Vec<u16>,
    }
    let leaves: Vec<Item> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let mut v = vec![0u16; n];
            v[rank] = 1;
            Item {
                weight: weights[i],
                leaves: v,
            }
        })
        .collect();

    let mut current = leaves.clone();
    for _ in 1..max_len {
        let packages: Vec<Item> = current
            .chunks_exact(2)
            .map(|p| Item {
                weight: p[0].weight + p[1].weight,
                leaves: p[0].leaves.iter().zip(&p[1].leaves).map(|(a, b)| a + b).collect(),
            })
            .collect();
        // Stable merge, leaves first on equal weight.
        let mut merged = Vec::with_capacity(leaves.len() + packages.len());
        let (mut i, mut j) = (0, 0);
        while i < leaves.len() || j < packages.len() {
            if j >= packages.len() || (i < leaves.len() && leaves[i].weight <= packages[j].weight) {
                merged.push(leaves[i].clone());
                i += 1;
            } else {
                merged.push(packages[j].clone());
                j += 1;
            }
        }
        current = merged;
    }

    let mut by_rank = vec![0u16; n];
    for item in &current[..2 * n - 2] {
        for (acc, c) in by_rank.iter_mut().zip(&item.leaves) {
            *acc += c;
        }
    }
    let mut out = vec![0u8; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = by_rank[rank] as u8;
    }
    out
}

pub(crate) fn encode_block(data: &[u8]) -> Result<Vec<u8>> {
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let table = CodeTable::from_counts(&counts)?;
    let bits: u64 = (0..256).map(|s| counts[s] * table.lengths[s] as u64).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + bits.div_ceil(8) as usize);
    table.write_header(&mut out);
    let packed: Vec<(u32, u32)> = (0..256)
        .map(|s| (table.codes[s] as u32, table.lengths[s] as u32))
        .collect();
    let mut w = MsbWriter::with_capacity(bits.div_ceil(8) as usize + 8);
    for &b in data {
        let (c, l) = packed[b as usize];
        w.push(c, l);
    }
    let (stream, written) = w.finish();
    debug_assert_eq!(written, bits);
    out.extend_from_slice(&stream);
    Ok(out)
}

/// Decode `n` symbols from one block, appending to `out`.
pub(crate) fn decode_block(block: &[u8], n: usize, out: &mut Vec<u8>) -> Result<()> {
    if block.len() < HEADER_LEN {
        return Err(Error::Integrity("huffman block shorter than its code table".into()));
    }
    let table = CodeTable::read_header(block)?;
    let stream = &block[HEADER_LEN..];
    // A valid stream spends at least one bit per symbol.
    if (stream.len() as u64) * 8 < n as u64 {
        return Err(Error::Integrity("huffman bitstream truncated".into()));
    }
    let max_len = table.max_len() as u32;
    // Entry: symbol << 4 | length; length 0 marks an unassigned prefix.
    let mut lut = vec![0u16; 1 << max_len];
    for s in 0..256 {
        let l = table.lengths[s] as u32;
        if l == 0 {
            continue;
        }
        let first = (table.codes[s] as usize) << (max_len - l);
        let last = first + (1usize << (max_len - l));
        lut[first..last].fill(((s as u16) << 4) | l as u16);
    }

    let start = out.len();
    out.reserve(n);
    let mut r = MsbReader::new(stream);
    let mut i = 0;
    while i < n {
        r.refill();
        // 56 buffered bits cover at least three 15-bit codes.
        let batch = (n - i).min(3);
        for _ in 0..batch {
            let e = lut[r.peek(max_len) as usize];
            let l = (e & 0x0f) as u32;
            if l == 0 {
                return Err(Error::Integrity("invalid huffman code in bitstream".into()));
            }
            out.push((e >> 4) as u8);
            r.consume(l);
        }
        i += batch;
    }
    r.finish()?;

    let mut seen = [false; 256];
    for &b in &out[start..] {
        seen[b as usize] = true;
    }
    if let Some(s) = (0..256).find(|&s| table.lengths[s] > 0 && !seen[s]) {
        return Err(Error::Integrity(format!("code table lists symbol {s} that never occurs")));
    }
    Ok(())
}
