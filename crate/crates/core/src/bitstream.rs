//! LSB-first bit reader.
//!
//! Deflate packs data elements starting at the least-significant bit of each
//! byte and blocks may begin at any bit offset, so every position in this
//! crate is a bit offset. The reader keeps up to 64 buffered bits in an
//! accumulator that is refilled eight bytes at a time from a window of the
//! underlying [`SharedSource`].

use bytes::Bytes;

use crate::error::{Error, Result};
use crate::io::SharedSource;

const FILE_WINDOW: usize = 256 << 10;

pub struct BitReader {
    source: SharedSource,
    size: u64,
    buf: Bytes,
    /// Byte offset of `buf[0]` within the source.
    buf_start: u64,
    /// Next byte of `buf` to shift into the accumulator.
    buf_pos: usize,
    acc: u64,
    acc_bits: u32,
}

impl BitReader {
    pub fn new(source: SharedSource) -> Self {
        let size = source.size();
        let mut reader = Self {
            source,
            size,
            buf: Bytes::new(),
            buf_start: 0,
            buf_pos: 0,
            acc: 0,
            acc_bits: 0,
        };
        if reader.source.is_contiguous() && size > 0 {
            // Whole-source window; seeking never refetches.
            if let Ok(all) = reader.source.read_at(0, size as usize) {
                if all.len() as u64 == size {
                    reader.buf = all;
                }
            }
        }
        reader
    }

    pub fn from_bytes(data: impl Into<Bytes>) -> Self {
        Self::new(SharedSource::from_bytes(data))
    }

    pub fn source(&self) -> &SharedSource {
        &self.source
    }

    /// Number of bits consumed so far.
    #[inline]
    pub fn tell(&self) -> u64 {
        (self.buf_start + self.buf_pos as u64) * 8 - self.acc_bits as u64
    }

    pub fn size_bits(&self) -> u64 {
        self.size * 8
    }

    pub fn remaining_bits(&self) -> u64 {
        self.size_bits() - self.tell()
    }

    pub fn is_eof(&self) -> bool {
        self.tell() >= self.size_bits()
    }

    #[inline]
    fn refill(&mut self) {
        if self.buf_pos + 8 <= self.buf.len() {
            let word = u64::from_le_bytes(
                self.buf[self.buf_pos..self.buf_pos + 8]
                    .try_into()
                    .expect("eight bytes"),
            );
            // Bits above `acc_bits` already hold the same upcoming bytes (or
            // zeros), so OR-ing the word in is idempotent for them.
            self.acc |= word << self.acc_bits;
            self.buf_pos += ((63 - self.acc_bits) >> 3) as usize;
            self.acc_bits |= 56;
        } else {
            self.refill_slow();
        }
    }

    #[cold]
    fn refill_slow(&mut self) {
        while self.acc_bits <= 56 {
            if self.buf_pos >= self.buf.len() && !self.next_window() {
                return;
            }
            self.acc |= (self.buf[self.buf_pos] as u64) << self.acc_bits;
            self.buf_pos += 1;
            self.acc_bits += 8;
        }
    }

    fn next_window(&mut self) -> bool {
        let start = self.buf_start + self.buf.len() as u64;
        if start >= self.size {
            return false;
        }
        match self.source.read_at(start, FILE_WINDOW) {
            Ok(buf) if !buf.is_empty() => {
                self.buf = buf;
                self.buf_start = start;
                self.buf_pos = 0;
                true
            }
            // I/O failures surface as truncation at the current position.
            _ => false,
        }
    }

    /// Reads `n <= 32` bits; the first stream bit lands in bit 0 of the result.
    #[inline]
    pub fn read(&mut self, n: u32) -> Result<u32> {
        debug_assert!(n <= 32);
        if self.acc_bits < n {
            self.refill();
            if self.acc_bits < n {
                return Err(Error::Truncated {
                    bit_offset: self.tell(),
                });
            }
        }
        let value = (self.acc & ((1u64 << n) - 1)) as u32;
        self.acc >>= n;
        self.acc_bits -= n;
        Ok(value)
    }

    #[inline]
    pub fn read_bit(&mut self) -> Result<bool> {
        Ok(self.read(1)? != 0)
    }

    /// Returns the next `n <= 32` bits without consuming them, together with
    /// how many of those bits actually exist. Missing high bits are zero.
    #[inline]
    pub fn peek(&mut self, n: u32) -> (u32, u32) {
        debug_assert!(n <= 32);
        if self.acc_bits < n {
            self.refill();
        }
        let available = n.min(self.acc_bits);
        let value = (self.acc & ((1u64 << available) - 1)) as u32;
        (value, available)
    }

    /// Drops `n` bits previously inspected with [`peek`](Self::peek).
    #[inline]
    pub fn consume(&mut self, n: u32) {
        debug_assert!(n <= self.acc_bits);
        self.acc >>= n;
        self.acc_bits -= n;
    }

    pub fn seek_bits(&mut self, offset: u64) -> Result<()> {
        let size_bits = self.size_bits();
        if offset > size_bits {
            return Err(Error::SeekOutOfRange { offset, size_bits });
        }
        let here = self.tell();
        if offset >= here && offset - here <= self.acc_bits as u64 {
            self.consume((offset - here) as u32);
            return Ok(());
        }
        let byte = offset / 8;
        let buf_end = self.buf_start + self.buf.len() as u64;
        if byte >= self.buf_start && byte < buf_end {
            self.buf_pos = (byte - self.buf_start) as usize;
        } else if byte < self.size {
            self.buf = self.source.read_at(byte, FILE_WINDOW)?;
            self.buf_start = byte;
            self.buf_pos = 0;
        } else {
            self.buf = Bytes::new();
            self.buf_start = byte;
            self.buf_pos = 0;
        }
        self.acc = 0;
        self.acc_bits = 0;
        let skip = (offset % 8) as u32;
        if skip > 0 {
            self.read(skip)?;
        }
        Ok(())
    }

    /// Skips to the next byte boundary and returns the skipped bits.
    pub fn align_to_byte(&mut self) -> (u32, u32) {
        let pad = self.acc_bits % 8;
        let value = (self.acc & ((1u64 << pad) - 1)) as u32;
        self.consume(pad);
        (value, pad)
    }

    /// Hands `n` byte-aligned bytes to `sink` in one or more slices and
    /// advances past them.
    pub fn copy_aligned_bytes(&mut self, n: usize, mut sink: impl FnMut(&[u8])) -> Result<()> {
        let here = self.tell();
        debug_assert_eq!(here % 8, 0, "copy requires byte alignment");
        let start = here / 8;
        if start + n as u64 > self.size {
            return Err(Error::Truncated {
                bit_offset: self.size_bits(),
            });
        }
        let mut pos = start;
        let end = start + n as u64;
        while pos < end {
            let buf_end = self.buf_start + self.buf.len() as u64;
            if pos >= self.buf_start && pos < buf_end {
                let from = (pos - self.buf_start) as usize;
                let to = (end.min(buf_end) - self.buf_start) as usize;
                sink(&self.buf[from..to]);
                pos += (to - from) as u64;
            } else {
                let part = self.source.read_at(pos, (end - pos) as usize)?;
                if part.is_empty() {
                    return Err(Error::Truncated { bit_offset: pos * 8 });
                }
                sink(&part);
                pos += part.len() as u64;
            }
        }
        self.seek_bits(end * 8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn read_examples() {
        let mut r = BitReader::from_bytes(vec![0xB2]);
        assert_eq!(r.read(0).unwrap(), 0);
        assert_eq!(r.tell(), 0);
        assert_eq!(r.read(3).unwrap(), 2);
        assert_eq!(r.tell(), 3);

        let mut r = BitReader::from_bytes(vec![0xFF, 0x00]);
        assert_eq!(r.read(12).unwrap(), 0x0FF);
    }

    #[test]
    fn read_past_end_reports_position() {
        let mut r = BitReader::from_bytes(vec![0xAB]);
        r.read(5).unwrap();
        match r.read(4) {
            Err(Error::Truncated { bit_offset }) => assert_eq!(bit_offset, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(r.tell(), 5);
    }

    #[test]
    fn peek_examples() {
        let mut r = BitReader::from_bytes(vec![0xB2]);
        assert_eq!(r.peek(3), (2, 3));
        assert_eq!(r.read(3).unwrap(), 2);

        let mut r = BitReader::from_bytes(vec![0x5A, 0xC3, 0x11]);
        let first = r.peek(14);
        assert_eq!(r.peek(14), first);
        assert_eq!(r.tell(), 0);

        let mut r = BitReader::from_bytes(vec![0x01]);
        assert_eq!(r.peek(14), (1, 8));
    }

    #[test]
    fn seek_examples() {
        let mut r = BitReader::from_bytes(vec![0xAB]);
        r.read(5).unwrap();
        r.seek_bits(0).unwrap();
        assert_eq!(r.read(8).unwrap(), 0xAB);

        let mut r = BitReader::from_bytes(vec![0xB2]);
        r.seek_bits(3).unwrap();
        assert_eq!(r.read(5).unwrap(), 0b10110);

        let mut r = BitReader::from_bytes(vec![1, 2, 3]);
        r.read(7).unwrap();
        let here = r.tell();
        r.seek_bits(here).unwrap();
        assert_eq!(r.tell(), here);
        assert_eq!(r.read(9).unwrap(), (0x03_0201_u32 >> 7) & 0x1FF);

        assert!(matches!(
            r.seek_bits(25),
            Err(Error::SeekOutOfRange { offset: 25, size_bits: 24 })
        ));
        r.seek_bits(24).unwrap();
        assert!(r.is_eof());
    }

    #[test]
    fn spooled_source_crosses_windows() {
        let data: Vec<u8> = (0..(FILE_WINDOW * 2 + 77)).map(|i| (i % 253) as u8).collect();
        let src = SharedSource::spool(&data[..], 1000).unwrap();
        let mut r = BitReader::new(src);
        r.seek_bits(8 * (FILE_WINDOW as u64 - 3)).unwrap();
        let mut got = Vec::new();
        for _ in 0..10 {
            got.push(r.read(8).unwrap() as u8);
        }
        assert_eq!(&got[..], &data[FILE_WINDOW - 3..FILE_WINDOW + 7]);
    }

    #[test]
    fn aligned_copy() {
        let data: Vec<u8> = (0..100u8).collect();
        let mut r = BitReader::from_bytes(data.clone());
        r.read(16).unwrap();
        let mut out = Vec::new();
        r.copy_aligned_bytes(50, |s| out.extend_from_slice(s)).unwrap();
        assert_eq!(&out[..], &data[2..52]);
        assert_eq!(r.read(8).unwrap(), 52);
        assert!(r.copy_aligned_bytes(100, |_| {}).is_err());
    }

    fn bit(data: &[u8], i: usize) -> u32 {
        ((data[i / 8] >> (i % 8)) & 1) as u32
    }

    proptest! {
        #[test]
        fn partitioned_reads_reconstruct_bits(
            data in proptest::collection::vec(any::<u8>(), 1..200),
            widths in proptest::collection::vec(1u32..=32, 1..200),
        ) {
            let total = data.len() * 8;
            let mut r = BitReader::from_bytes(data.clone());
            let mut pos = 0usize;
            for &w in widths.iter().cycle() {
                if pos == total { break; }
                let w = w.min((total - pos) as u32);
                let v = r.read(w).unwrap();
                for k in 0..w as usize {
                    prop_assert_eq!((v >> k) & 1, bit(&data, pos + k));
                }
                pos += w as usize;
                prop_assert_eq!(r.tell(), pos as u64);
            }
            prop_assert!(r.read(1).is_err());
        }

        #[test]
        fn seek_then_read_matches_scratch(
            data in proptest::collection::vec(any::<u8>(), 1..64),
            k in 0usize..512, n in 0u32..=32, pre in 0usize..512,
        ) {
            let total = data.len() * 8;
            let k = k % (total + 1);
            let n = n.min((total - k) as u32);
            let mut scratch = BitReader::from_bytes(data.clone());
            let mut left = k;
            while left > 0 {
                let step = left.min(32) as u32;
                scratch.read(step).unwrap();
                left -= step as usize;
            }
            let expected = scratch.read(n).unwrap();

            let mut r = BitReader::from_bytes(data.clone());
            let pre = (pre % (total + 1)).min(total) as u32;
            r.read(pre.min(32)).unwrap();
            let peeked = r.peek(n);
            prop_assert_eq!(r.tell(), pre.min(32) as u64);
            let _ = peeked;
            r.seek_bits(k as u64).unwrap();
            prop_assert_eq!(r.read(n).unwrap(), expected);
        }
    }
}
