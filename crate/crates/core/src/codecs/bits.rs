//! Bit-level writers and readers for the native codecs.
//!
//! Huffman streams are MSB-first; tANS streams are written LSB-first and read
//! backwards from a terminating sentinel bit.

use crate::{Error, Result};

/// MSB-first writer; codes are at most 32 bits.
pub(crate) struct MsbWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl MsbWriter {
    pub fn with_capacity(n: usize) -> Self {
        MsbWriter {
            out: Vec::with_capacity(n),
            acc: 0,
            nbits: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, code: u32, len: u32) {
        debug_assert!(len <= 32);
        self.acc = (self.acc << len) | code as u64;
        self.nbits += len;
        if self.nbits >= 32 {
            self.nbits -= 32;
            let word = (self.acc >> self.nbits) as u32;
            self.out.extend_from_slice(&word.to_be_bytes());
        }
    }

    /// Flush, zero-padding the final byte. Returns the bytes and the bit count.
    pub fn finish(mut self) -> (Vec<u8>, u64) {
        let bits = self.out.len() as u64 * 8 + self.nbits as u64;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.out.push((self.acc >> self.nbits) as u8);
        }
        if self.nbits > 0 {
            self.out.push((self.acc << (8 - self.nbits)) as u8);
        }
        (self.out, bits)
    }
}

/// MSB-first reader that yields zeros past the end; callers check
/// [`consumed_bits`](Self::consumed_bits) afterwards.
pub(crate) struct MsbReader<'a> {
    data: &'a [u8],
    pos: usize,
    buf: u64,
    count: u32,
}

impl<'a> MsbReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut r = MsbReader {
            data,
            pos: 0,
            buf: 0,
            count: 0,
        };
        r.refill();
        r
    }

    /// Ensures at least 56 valid bits in `buf`.
    #[inline]
    pub fn refill(&mut self) {
        if self.count > 56 {
            return;
        }
        if self.pos + 8 <= self.data.len() {
            let v = u64::from_be_bytes(self.data[self.pos..self.pos + 8].try_into().unwrap());
            self.buf |= v >> self.count;
            let n = (63 - self.count) / 8;
            self.pos += n as usize;
            self.count += n * 8;
        } else {
            while self.count <= 56 {
                let b = self.data.get(self.pos).copied().unwrap_or(0);
                self.buf |= (b as u64) << (56 - self.count);
                self.pos += 1;
                self.count += 8;
            }
        }
    }

    #[inline]
    pub fn peek(&self, n: u32) -> u32 {
        (self.buf >> (64 - n)) as u32
    }

    #[inline]
    pub fn consume(&mut self, n: u32) {
        self.buf <<= n;
        self.count -= n;
    }

    pub fn consumed_bits(&self) -> u64 {
        self.pos as u64 * 8 - self.count as u64
    }

    /// Fail unless the stream was consumed exactly, padding bits included.
    pub fn finish(&self) -> Result<()> {
        let consumed = self.consumed_bits();
        let len = self.data.len() as u64;
        if consumed > len * 8 {
            return Err(Error::Integrity("bitstream truncated".into()));
        }
        if consumed.div_ceil(8) != len {
            return Err(Error::Integrity(format!(
                "{} unused bytes after the bitstream",
                len - consumed.div_ceil(8)
            )));
        }
        // `buf` holds zeros from padding and past-the-end reads; any set bit
        // left in it came from the final byte's padding.
        if self.buf != 0 {
            return Err(Error::Integrity("nonzero padding bits".into()));
        }
        Ok(())
    }
}

/// LSB-first writer for tANS; values are at most 24 bits.
pub(crate) struct LsbWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl LsbWriter {
    pub fn with_capacity(n: usize) -> Self {
        LsbWriter {
            out: Vec::with_capacity(n),
            acc: 0,
            nbits: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, value: u32, len: u32) {
        debug_assert!(len <= 24 && (len == 32 || value >> len == 0));
        self.acc |= (value as u64) << self.nbits;
        self.nbits += len;
        if self.nbits >= 32 {
            self.out.extend_from_slice(&(self.acc as u32).to_le_bytes());
            self.acc >>= 32;
            self.nbits -= 32;
        }
    }

    /// Append the sentinel `1` bit and flush.
    pub fn finish_with_sentinel(mut self) -> Vec<u8> {
        self.push(1, 1);
        while self.nbits > 0 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.nbits = self.nbits.saturating_sub(8);
        }
        self.out
    }
}

/// Reads an [`LsbWriter`] stream from its end towards its start.
pub(crate) struct BackwardReader<'a> {
    data: &'a [u8],
    /// Bits still unread: positions `[0, pos)`.
    pos: usize,
}

impl<'a> BackwardReader<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let last = *data
            .last()
            .ok_or_else(|| Error::Integrity("empty bitstream".into()))?;
        if last == 0 {
            return Err(Error::Integrity("bitstream is missing its end marker".into()));
        }
        let top = 7 - last.leading_zeros() as usize;
        Ok(BackwardReader {
            data,
            pos: (data.len() - 1) * 8 + top,
        })
    }

    #[inline]
    pub fn read(&mut self, n: u32) -> Result<u32> {
        let n = n as usize;
        if n > self.pos {
            return Err(Error::Integrity("bitstream truncated".into()));
        }
        self.pos -= n;
        let byte = self.pos / 8;
        let shift = self.pos % 8;
        let word = if byte + 4 <= self.data.len() {
            u32::from_le_bytes(self.data[byte..byte + 4].try_into().unwrap())
        } else {
            let mut w = [0u8; 4];
            let avail = self.data.len() - byte;
            w[..avail].copy_from_slice(&self.data[byte..]);
            u32::from_le_bytes(w)
        };
        Ok((word >> shift) & ((1u32 << n) - 1))
    }

    pub fn remaining(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_roundtrip() {
        let items: Vec<(u32, u32)> = (0..1000u32).map(|i| (i % (1 << (i % 15 + 1)), i % 15 + 1)).collect();
        let mut w = MsbWriter::with_capacity(0);
        for &(c, l) in &items {
            w.push(c, l);
        }
        let (bytes, bits) = w.finish();
        assert_eq!(bits, items.iter().map(|x| x.1 as u64).sum::<u64>());
        let mut r = MsbReader::new(&bytes);
        for &(c, l) in &items {
            r.refill();
            assert_eq!(r.peek(l), c);
            r.consume(l);
        }
        r.finish().unwrap();
    }

    #[test]
    fn backward_roundtrip() {
        let items: Vec<(u32, u32)> = (0..777u32).map(|i| (i % (1 << (i % 12)), i % 12)).collect();
        let mut w = LsbWriter::with_capacity(0);
        for &(v, l) in &items {
            w.push(v, l);
        }
        let bytes = w.finish_with_sentinel();
        let mut r = BackwardReader::new(&bytes).unwrap();
        for &(v, l) in items.iter().rev() {
            assert_eq!(r.read(l).unwrap(), v);
        }
        assert_eq!(r.remaining(), 0);
        assert!(r.read(1).is_err());
    }
}
