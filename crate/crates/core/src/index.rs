//! Seek points and their on-disk format.
//!
//! A seek point pairs the compressed bit offset of a block header with the
//! decompressed offset of that block's first byte and the 32 KiB of output
//! preceding it, which is everything needed to resume decoding there. The
//! point at compressed offset 0 is the start of the first gzip member.
//!
//! File layout, little-endian:
//!
//! ```text
//! "RGIX"  u16 version (1)  u16 flags
//! u64 point count  u64 total decompressed bytes  u64 total compressed bits
//! per point: u64 bit offset, u64 byte offset, u32 window length, window
//! [flags bit 2] u64 member count, per member: u64 bit offset, u64 byte offset
//! [flags bit 1] u32 CRC32 of everything before it
//! ```
//!
//! Flag bit 0 marks raw windows and is required; bits 1 and 2 are optional.

use std::io::{Read, Write};

use bytes::Bytes;

use crate::error::{Error, IndexFormatError, Result};
use crate::inflate::WINDOW_SIZE;

pub const INDEX_MAGIC: [u8; 4] = *b"RGIX";
pub const INDEX_VERSION: u16 = 1;
pub const FLAG_RAW_WINDOWS: u16 = 1;
pub const FLAG_CHECKSUM: u16 = 2;
pub const FLAG_MEMBERS: u16 = 4;
const KNOWN_FLAGS: u16 = FLAG_RAW_WINDOWS | FLAG_CHECKSUM | FLAG_MEMBERS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeekPoint {
    pub compressed_offset: u64,
    pub decompressed_offset: u64,
    /// The `min(32768, decompressed_offset)` bytes before the point.
    pub window: Bytes,
}

/// End of a gzip member: bit offset right after its footer and the total
/// decompressed size up to there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemberBoundary {
    pub compressed_offset: u64,
    pub decompressed_offset: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GzipIndex {
    points: Vec<SeekPoint>,
    members: Vec<MemberBoundary>,
    totals: Option<(u64, u64)>,
}

impl GzipIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[SeekPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn members(&self) -> &[MemberBoundary] {
        &self.members
    }

    pub fn is_finalized(&self) -> bool {
        self.totals.is_some()
    }

    pub fn total_decompressed(&self) -> Option<u64> {
        self.totals.map(|t| t.1)
    }

    pub fn total_compressed_bits(&self) -> Option<u64> {
        self.totals.map(|t| t.0)
    }

    /// Decompressed offset up to which the index is known to be complete.
    pub fn covered_until(&self) -> u64 {
        match self.totals {
            Some((_, total)) => total,
            None => self.points.last().map_or(0, |p| p.decompressed_offset),
        }
    }

    /// Adds a point, keeping both offsets strictly increasing. Re-inserting
    /// an existing point is a no-op, as is a point that adds no data beyond
    /// its predecessor (an empty block).
    pub fn insert(&mut self, point: SeekPoint) -> Result<()> {
        if point.window.len() as u64 != point.decompressed_offset.min(WINDOW_SIZE as u64) {
            return Err(Error::IndexCorruption(format!(
                "window of {} bytes for a point at decompressed offset {}",
                point.window.len(),
                point.decompressed_offset
            )));
        }
        let at = self
            .points
            .partition_point(|p| p.compressed_offset < point.compressed_offset);
        if let Some(existing) = self.points.get(at) {
            if existing.compressed_offset == point.compressed_offset {
                if existing.decompressed_offset == point.decompressed_offset {
                    return Ok(());
                }
                return Err(Error::IndexCorruption(format!(
                    "bit offset {} maps to both {} and {}",
                    point.compressed_offset, existing.decompressed_offset, point.decompressed_offset
                )));
            }
        }
        if let Some(prev) = at.checked_sub(1).map(|i| &self.points[i]) {
            if prev.decompressed_offset == point.decompressed_offset {
                return Ok(());
            }
            if prev.decompressed_offset > point.decompressed_offset {
                return Err(Error::IndexCorruption(format!(
                    "decompressed offset {} at bit {} precedes {} at bit {}",
                    point.decompressed_offset,
                    point.compressed_offset,
                    prev.decompressed_offset,
                    prev.compressed_offset
                )));
            }
        }
        if let Some(next) = self.points.get(at) {
            if next.decompressed_offset <= point.decompressed_offset {
                return Err(Error::IndexCorruption(format!(
                    "decompressed offset {} at bit {} is not below {} at bit {}",
                    point.decompressed_offset,
                    point.compressed_offset,
                    next.decompressed_offset,
                    next.compressed_offset
                )));
            }
        }
        if let Some((bits, total)) = self.totals {
            if point.compressed_offset > bits || point.decompressed_offset > total {
                return Err(Error::IndexCorruption(format!(
                    "point ({}, {}) lies beyond the end of the stream",
                    point.compressed_offset, point.decompressed_offset
                )));
            }
        }
        self.points.insert(at, point);
        Ok(())
    }

    pub fn add_member_boundary(&mut self, boundary: MemberBoundary) {
        let at = self
            .members
            .partition_point(|m| m.compressed_offset < boundary.compressed_offset);
        if self.members.get(at) != Some(&boundary) {
            self.members.insert(at, boundary);
        }
    }

    /// Records the stream totals and a terminal point at the end of the
    /// stream carrying the final window.
    pub fn finalize(&mut self, total_compressed_bits: u64, total_decompressed: u64, last_window: Bytes) -> Result<()> {
        self.insert(SeekPoint {
            compressed_offset: total_compressed_bits,
            decompressed_offset: total_decompressed,
            window: last_window,
        })?;
        self.totals = Some((total_compressed_bits, total_decompressed));
        Ok(())
    }

    /// Point with the greatest decompressed offset at or before `offset`.
    pub fn locate(&self, offset: u64) -> Result<&SeekPoint> {
        let within = match self.totals {
            Some((_, total)) => offset < total,
            None => offset < self.covered_until(),
        };
        if !within {
            return Err(Error::NotIndexed { offset });
        }
        let at = self.points.partition_point(|p| p.decompressed_offset <= offset);
        Ok(&self.points[at - 1])
    }

    /// Position of the point with exactly this compressed offset.
    pub fn position_of(&self, compressed_offset: u64) -> Option<usize> {
        self.points
            .binary_search_by_key(&compressed_offset, |p| p.compressed_offset)
            .ok()
    }

    /// Serializes the index. Requires [`finalize`](Self::finalize).
    pub fn export(&self, mut sink: impl Write) -> Result<u64> {
        let bytes = self.to_bytes()?;
        sink.write_all(&bytes).map_err(|source| Error::Io { offset: 0, source })?;
        Ok(bytes.len() as u64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (bits, total) = self
            .totals
            .ok_or_else(|| Error::IndexCorruption("cannot export an unfinished index".into()))?;
        let mut flags = FLAG_RAW_WINDOWS | FLAG_CHECKSUM;
        if !self.members.is_empty() {
            flags |= FLAG_MEMBERS;
        }
        let mut out = Vec::with_capacity(32 + self.points.len() * (20 + WINDOW_SIZE));
        out.extend_from_slice(&INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&(self.points.len() as u64).to_le_bytes());
        out.extend_from_slice(&total.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        for p in &self.points {
            out.extend_from_slice(&p.compressed_offset.to_le_bytes());
            out.extend_from_slice(&p.decompressed_offset.to_le_bytes());
            out.extend_from_slice(&(p.window.len() as u32).to_le_bytes());
            out.extend_from_slice(&p.window);
        }
        if !self.members.is_empty() {
            out.extend_from_slice(&(self.members.len() as u64).to_le_bytes());
            for m in &self.members {
                out.extend_from_slice(&m.compressed_offset.to_le_bytes());
                out.extend_from_slice(&m.decompressed_offset.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn import(mut source: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        source
            .read_to_end(&mut bytes)
            .map_err(|source| Error::Io { offset: 0, source })?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != INDEX_MAGIC {
            return Err(IndexFormatError::BadMagic(magic).into());
        }
        let version = r.u16()?;
        if version != INDEX_VERSION {
            return Err(IndexFormatError::UnsupportedVersion(version).into());
        }
        let flags = r.u16()?;
        if flags & !KNOWN_FLAGS != 0 || flags & FLAG_RAW_WINDOWS == 0 {
            return Err(IndexFormatError::UnsupportedFlags(flags).into());
        }
        let body_end = if flags & FLAG_CHECKSUM != 0 {
            if bytes.len() < 4 {
                return Err(IndexFormatError::Truncated.into());
            }
            let end = bytes.len() - 4;
            let stored = u32::from_le_bytes(bytes[end..].try_into().unwrap());
            let computed = crc32fast::hash(&bytes[..end]);
            if stored != computed {
                return Err(IndexFormatError::ChecksumMismatch { stored, computed }.into());
            }
            end
        } else {
            bytes.len()
        };
        r.bytes = &bytes[..body_end];

        let count = r.u64()?;
        let total = r.u64()?;
        let bits = r.u64()?;
        // Each point needs at least 20 bytes; reject absurd counts early.
        if count > (r.remaining() / 20) as u64 {
            return Err(IndexFormatError::Truncated.into());
        }
        let structure = |what| Error::from(IndexFormatError::Structure(what));
        let mut index = GzipIndex::new();
        for i in 0..count {
            let compressed_offset = r.u64()?;
            let decompressed_offset = r.u64()?;
            let window_len = r.u32()? as usize;
            let window = Bytes::copy_from_slice(r.take(window_len)?);
            if i == 0 && (compressed_offset, decompressed_offset) != (0, 0) {
                return Err(structure("first seek point is not at the stream start"));
            }
            if window_len as u64 != decompressed_offset.min(WINDOW_SIZE as u64) {
                return Err(structure("window length does not match the decompressed offset"));
            }
            if compressed_offset > bits || decompressed_offset > total {
                return Err(structure("seek point beyond the stream totals"));
            }
            if let Some(prev) = index.points.last() {
                if compressed_offset <= prev.compressed_offset
                    || decompressed_offset <= prev.decompressed_offset
                {
                    return Err(structure("seek points are not strictly increasing"));
                }
            }
            index.points.push(SeekPoint {
                compressed_offset,
                decompressed_offset,
                window,
            });
        }
        if flags & FLAG_MEMBERS != 0 {
            let members = r.u64()?;
            if members > (r.remaining() / 16) as u64 {
                return Err(IndexFormatError::Truncated.into());
            }
            for _ in 0..members {
                let boundary = MemberBoundary {
                    compressed_offset: r.u64()?,
                    decompressed_offset: r.u64()?,
                };
                if boundary.compressed_offset > bits || boundary.decompressed_offset > total {
                    return Err(structure("member boundary beyond the stream totals"));
                }
                if index
                    .members
                    .last()
                    .is_some_and(|m| m.compressed_offset >= boundary.compressed_offset)
                {
                    return Err(structure("member boundaries are not increasing"));
                }
                index.members.push(boundary);
            }
        }
        if r.remaining() != 0 {
            return Err(IndexFormatError::TrailingBytes.into());
        }
        if count == 0 {
            return Err(structure("index without seek points"));
        }
        index.totals = Some((bits, total));
        Ok(index)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(IndexFormatError::Truncated.into());
        }
        let part = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(part)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(bits: u64, offset: u64) -> SeekPoint {
        let len = offset.min(WINDOW_SIZE as u64) as usize;
        SeekPoint {
            compressed_offset: bits,
            decompressed_offset: offset,
            window: (0..len).map(|i| (i as u64 ^ offset) as u8).collect(),
        }
    }

    const MIB: u64 = 1 << 20;

    fn three_points() -> GzipIndex {
        let mut index = GzipIndex::new();
        index.insert(point(0, 0)).unwrap();
        index.insert(point(8_000_000, 4 * MIB)).unwrap();
        index.insert(point(16_000_003, 8 * MIB)).unwrap();
        index
    }

    #[test]
    fn locate_examples() {
        let index = three_points();
        assert_eq!(index.locate(5 * MIB).unwrap().decompressed_offset, 4 * MIB);
        assert_eq!(index.locate(0).unwrap().decompressed_offset, 0);
        assert_eq!(index.locate(4 * MIB).unwrap().decompressed_offset, 4 * MIB);
        assert!(matches!(index.locate(9 * MIB), Err(Error::NotIndexed { .. })));
    }

    #[test]
    fn insert_rules() {
        let mut index = three_points();
        index.insert(point(8_000_000, 4 * MIB)).unwrap();
        assert_eq!(index.len(), 3);
        assert!(matches!(
            index.insert(point(9_000_000, 3 * MIB)),
            Err(Error::IndexCorruption(_))
        ));
        assert!(matches!(
            index.insert(point(8_000_000, 5 * MIB)),
            Err(Error::IndexCorruption(_))
        ));
        // An empty block right after a point adds nothing.
        index.insert(point(8_000_100, 4 * MIB)).unwrap();
        assert_eq!(index.len(), 3);
    }

    #[test]
    fn round_trip() {
        let mut index = three_points();
        index.add_member_boundary(MemberBoundary {
            compressed_offset: 16_000_000,
            decompressed_offset: 8 * MIB - 10,
        });
        index.finalize(20_000_000, 9 * MIB, Bytes::from(vec![7u8; WINDOW_SIZE])).unwrap();
        let bytes = index.to_bytes().unwrap();
        let back = GzipIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, index);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.len(), 4);
    }

    #[test]
    fn rejects_malformed_files() {
        let mut index = three_points();
        index.finalize(20_000_000, 9 * MIB, Bytes::from(vec![1u8; WINDOW_SIZE])).unwrap();
        let good = index.to_bytes().unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            GzipIndex::from_bytes(&bad),
            Err(Error::IndexFormat(IndexFormatError::BadMagic(_)))
        ));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            GzipIndex::from_bytes(&bad),
            Err(Error::IndexFormat(IndexFormatError::UnsupportedVersion(2)))
        ));
        let mut bad = good.clone();
        bad[1000] ^= 1;
        assert!(matches!(
            GzipIndex::from_bytes(&bad),
            Err(Error::IndexFormat(IndexFormatError::ChecksumMismatch { .. }))
        ));
        assert!(GzipIndex::from_bytes(&good[..good.len() / 2]).is_err());
        assert!(matches!(
            GzipIndex::from_bytes(&good[..6]),
            Err(Error::IndexFormat(IndexFormatError::Truncated))
        ));

        // Without the checksum flag, structural checks still apply.
        let mut unchecked = good[..good.len() - 4].to_vec();
        unchecked[6] = FLAG_RAW_WINDOWS as u8;
        assert_eq!(GzipIndex::from_bytes(&unchecked).unwrap(), index);
        unchecked.push(0);
        assert!(matches!(
            GzipIndex::from_bytes(&unchecked),
            Err(Error::IndexFormat(IndexFormatError::TrailingBytes))
        ));
        let mut swapped = good[..good.len() - 4].to_vec();
        swapped[6] = FLAG_RAW_WINDOWS as u8;
        // Second point's decompressed offset set to zero.
        let second = 32 + 20;
        swapped[second + 8..second + 16].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(
            GzipIndex::from_bytes(&swapped),
            Err(Error::IndexFormat(IndexFormatError::Structure(_)))
        ));
    }

    #[test]
    fn empty_stream_has_single_point() {
        let mut index = GzipIndex::new();
        index.insert(point(0, 0)).unwrap();
        index.finalize(160, 0, Bytes::new()).unwrap();
        assert_eq!(index.len(), 1);
        let back = GzipIndex::from_bytes(&index.to_bytes().unwrap()).unwrap();
        assert_eq!(back, index);
    }

    proptest! {
        #[test]
        fn random_indexes_round_trip(steps in proptest::collection::vec((1u64..1 << 30, 1u64..1 << 22), 0..12)) {
            let mut index = GzipIndex::new();
            index.insert(point(0, 0)).unwrap();
            let (mut bits, mut offset) = (0, 0);
            for (db, dd) in steps {
                bits += db;
                offset += dd;
                index.insert(point(bits, offset)).unwrap();
            }
            index.finalize(bits + 80, offset + 1, Bytes::from(vec![0u8; (offset + 1).min(WINDOW_SIZE as u64) as usize])).unwrap();
            let bytes = index.to_bytes().unwrap();
            prop_assert_eq!(GzipIndex::from_bytes(&bytes).unwrap(), index);
        }
    }
}
