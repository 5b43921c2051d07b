//! Candidate search for Deflate block starts at arbitrary bit offsets.
//!
//! Two finders run over a chunk of compressed bytes: one for Non-Compressed
//! blocks (LEN/NLEN pairs) and one for Dynamic blocks, which filters
//! positions with a 14-bit skip table, then a bit-parallel precode
//! histogram, then a full header decode. Candidates may be false positives;
//! Fixed blocks are never reported.
//!
//! Non-Compressed candidates are reported at the bit offset of their LEN
//! field because the zero padding before it makes the header offset
//! ambiguous.

use std::sync::OnceLock;

use bytes::Bytes;

use crate::bitstream::BitReader;
use crate::error::{DeflateError, Error};
use crate::huffman::{CodeClass, Strictness};
use crate::inflate::read_dynamic_header;

/// Bits inspected by one skip-table lookup.
pub const SKIP_LUT_BITS: u32 = 14;

/// Largest possible Dynamic block header in bits, rounded up: 17 fixed bits,
/// 19 precode triplets and at most 318 code lengths of 7 + 7 bits.
pub const MAX_DYNAMIC_HEADER_BITS: u64 = 17 + 57 + 318 * 14;

/// Bytes a chunk's data should extend past its search range so that headers
/// straddling the range end can be checked.
pub const FINDER_OVERRUN_BYTES: usize = (MAX_DYNAMIC_HEADER_BITS as usize).div_ceil(8) + 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CandidateKind {
    NonCompressed,
    Dynamic,
}

/// Whether the low `known` bits of `bits` (BF, BTYPE, HLIT, in stream order)
/// can still be completed into a header that passes checks 1 to 3.
fn prefix_admits_dynamic(bits: u32, known: u32) -> bool {
    let bit = |i: u32| (bits >> i) & 1;
    if known >= 1 && bit(0) != 0 {
        return false;
    }
    if known >= 2 && bit(1) != 0 {
        return false;
    }
    if known >= 3 && bit(2) != 1 {
        return false;
    }
    // HLIT is 30 or 31 exactly when its upper four bits are all set.
    !(known >= 8 && (bits >> 4) & 0xF == 0xF)
}

/// Checks 1 to 3 evaluated directly on at least 8 header bits.
pub fn passes_header_prefix(bits: u32) -> bool {
    prefix_admits_dynamic(bits, 8)
}

/// Skip table: entry `p` is the smallest shift at which the 14-bit pattern
/// `p` may still hold the start of a Dynamic block header; 0 means the
/// first three checks pass at the current position.
pub fn skip_lut() -> &'static [u8; 1 << SKIP_LUT_BITS] {
    static LUT: OnceLock<Box<[u8; 1 << SKIP_LUT_BITS]>> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = Box::new([0u8; 1 << SKIP_LUT_BITS]);
        for (p, entry) in lut.iter_mut().enumerate() {
            let p = p as u32;
            *entry = (0..=SKIP_LUT_BITS)
                .find(|&s| prefix_admits_dynamic(p >> s, SKIP_LUT_BITS - s))
                .unwrap() as u8;
        }
        lut
    })
}

/// Precode code-length histogram: eight 5-bit counters for lengths 0..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedPrecodeHistogram(pub u64);

impl PackedPrecodeHistogram {
    /// Histogram of the first `hclen` triplets of `bits`, summed four
    /// triplets at a time through a table of packed partial histograms.
    /// Triplets beyond `hclen` are masked to zero and land in the ignored
    /// length-0 counter.
    pub fn from_triplets(hclen: u32, bits: u64) -> Self {
        let lut = triplet_histogram_lut();
        let bits = bits & ((1u64 << (3 * hclen)) - 1);
        let mut packed = 0u64;
        for group in 0..5 {
            packed += lut[((bits >> (12 * group)) & 0xFFF) as usize];
        }
        Self(packed)
    }

    pub fn count(self, length: usize) -> u32 {
        ((self.0 >> (5 * length)) & 0x1F) as u32
    }

    /// Counters for lengths 1..=4, the key of the validity table.
    pub fn low_key(self) -> usize {
        ((self.0 >> 5) & 0xF_FFFF) as usize
    }
}

fn triplet_histogram_lut() -> &'static [u64; 4096] {
    static LUT: OnceLock<Box<[u64; 4096]>> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = Box::new([0u64; 4096]);
        for (i, entry) in lut.iter_mut().enumerate() {
            for t in 0..4 {
                let length = (i >> (3 * t)) & 7;
                *entry += 1 << (5 * length);
            }
        }
        lut
    })
}

/// One bit per combination of counts for lengths 1..=4: set unless those
/// lengths alone already oversubscribe the code.
fn precode_validity_lut() -> &'static [u64] {
    static LUT: OnceLock<Vec<u64>> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = vec![0u64; (1 << 20) / 64];
        for key in 0..1usize << 20 {
            let mut free = 1i32;
            let mut ok = true;
            for l in 0..4 {
                free = 2 * free - ((key >> (5 * l)) & 0x1F) as i32;
                ok &= free >= 0;
            }
            if ok {
                lut[key / 64] |= 1 << (key % 64);
            }
        }
        lut
    })
}

/// Filters a precode given as `hclen` 3-bit length triplets in storage
/// order. Returns the failure class, which equals
/// [`classify`](crate::huffman::classify) of the precode lengths.
pub fn check_precode(hclen: u32, bits: u64) -> Result<(), CodeClass> {
    debug_assert!((4..=19).contains(&hclen));
    let histogram = PackedPrecodeHistogram::from_triplets(hclen, bits);
    let key = histogram.low_key();
    if precode_validity_lut()[key / 64] & (1 << (key % 64)) == 0 {
        return Err(CodeClass::OverSubscribed);
    }
    let mut free = 16
        - (8 * histogram.count(1)
            + 4 * histogram.count(2)
            + 2 * histogram.count(3)
            + histogram.count(4)) as i32;
    for l in 5..=7 {
        free = 2 * free - histogram.count(l) as i32;
        if free < 0 {
            return Err(CodeClass::OverSubscribed);
        }
    }
    match free {
        0 => Ok(()),
        128 => Err(CodeClass::Empty),
        _ => Err(CodeClass::Inefficient),
    }
}

/// First failing check for a Dynamic block header at some position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicCheck {
    FinalBlock,
    CompressionType,
    PrecodeSize,
    Precode(CodeClass),
    PrecodeData,
    Distance(CodeClass),
    Literal(CodeClass),
    /// Too few bits left to decide.
    Truncated,
    Valid,
}

/// Scanner over a span of compressed bytes. Offsets are absolute bit
/// offsets; `data[0]` sits at `base_bit`.
pub struct BlockFinder {
    data: Bytes,
    base_bit: u64,
    reader: BitReader,
    cached_nc: Option<(u64, Option<u64>)>,
    cached_dynamic: Option<(u64, u64, Option<u64>)>,
}

impl BlockFinder {
    pub fn new(data: Bytes, base_bit: u64) -> Self {
        debug_assert_eq!(base_bit % 8, 0);
        let reader = BitReader::from_bytes(data.clone());
        Self {
            data,
            base_bit,
            reader,
            cached_nc: None,
            cached_dynamic: None,
        }
    }

    fn end_bit(&self) -> u64 {
        self.base_bit + self.data.len() as u64 * 8
    }

    /// At least 57 bits starting at relative bit `pos`, zero-filled past the
    /// end of the data.
    #[inline]
    fn load(&self, pos: u64) -> u64 {
        let byte = (pos / 8) as usize;
        let shift = pos % 8;
        if let Some(word) = self.data.get(byte..byte + 8) {
            u64::from_le_bytes(word.try_into().unwrap()) >> shift
        } else {
            let mut word = [0u8; 8];
            if byte < self.data.len() {
                let n = self.data.len() - byte;
                word[..n].copy_from_slice(&self.data[byte..]);
            }
            u64::from_le_bytes(word) >> shift
        }
    }

    /// Next Non-Compressed candidate with LEN offset in `[from, to)`.
    pub fn next_noncompressed(&mut self, from: u64, to: u64) -> Option<u64> {
        let to = to.min(self.end_bit());
        let first = from.max(self.base_bit + 8).saturating_sub(self.base_bit).div_ceil(8) as usize;
        let last = (to.saturating_sub(self.base_bit).div_ceil(8) as usize).min(self.data.len().saturating_sub(3));
        let data = &self.data[..];
        (first..last)
            .find(|&b| {
                let len = u16::from_le_bytes([data[b], data[b + 1]]);
                let nlen = u16::from_le_bytes([data[b + 2], data[b + 3]]);
                len == !nlen && data[b - 1] & 0xE0 == 0
            })
            .map(|b| self.base_bit + b as u64 * 8)
    }

    /// Next Dynamic candidate in `[from, to)` passing all seven checks.
    pub fn next_dynamic(&mut self, from: u64, to: u64) -> Option<u64> {
        let lut = skip_lut();
        let to = to.min(self.end_bit());
        let mut pos = from.max(self.base_bit) - self.base_bit;
        let end = to.saturating_sub(self.base_bit);
        while pos < end {
            let word = self.load(pos);
            let skip = lut[(word & 0x3FFF) as usize];
            if skip != 0 {
                pos += skip as u64;
                continue;
            }
            let hclen = ((word >> 13) & 0xF) as u32 + 4;
            if check_precode(hclen, self.load(pos + 17)).is_ok() && self.full_header_ok(pos) {
                return Some(self.base_bit + pos);
            }
            pos += 1;
        }
        None
    }

    fn full_header_ok(&mut self, relative: u64) -> bool {
        self.reader.seek_bits(relative + 3).is_ok()
            && read_dynamic_header(&mut self.reader, Strictness::Strict).is_ok()
    }

    /// Lower of the two finders' next candidates in `[from, to)`.
    /// Results are cached so that repeated calls with increasing `from`
    /// do not rescan.
    pub fn next_candidate(&mut self, from: u64, to: u64) -> Option<(u64, CandidateKind)> {
        let nc = match self.cached_nc {
            Some((at, hit)) if at <= from && hit.map_or(true, |h| h >= from) => hit,
            _ => {
                let hit = self.next_noncompressed(from, u64::MAX);
                self.cached_nc = Some((from, hit));
                hit
            }
        };
        // A Dynamic candidate only matters before the Non-Compressed one.
        let dynamic_to = nc.map_or(to, |n| n.min(to));
        let dynamic = match self.cached_dynamic {
            Some((at, limit, hit)) if at <= from && limit == dynamic_to && hit.map_or(true, |h| h >= from) => hit,
            _ => {
                let hit = self.next_dynamic(from, dynamic_to);
                self.cached_dynamic = Some((from, dynamic_to, hit));
                hit
            }
        };
        match (nc.filter(|&o| o < to), dynamic) {
            (Some(n), Some(d)) if n < d => Some((n, CandidateKind::NonCompressed)),
            (_, Some(d)) => Some((d, CandidateKind::Dynamic)),
            (Some(n), None) => Some((n, CandidateKind::NonCompressed)),
            (None, None) => None,
        }
    }

    /// Runs the Dynamic block checks at one position in order and reports
    /// the first that fails. Independent of the skip and validity tables.
    pub fn check_dynamic_at(&mut self, offset: u64) -> DynamicCheck {
        let relative = offset - self.base_bit;
        let bits = self.load(relative);
        if bits & 1 != 0 {
            return DynamicCheck::FinalBlock;
        }
        if (bits >> 1) & 3 != 2 {
            return DynamicCheck::CompressionType;
        }
        if self.reader.seek_bits(relative + 3).is_err() {
            return DynamicCheck::Truncated;
        }
        match read_dynamic_header(&mut self.reader, Strictness::Strict) {
            Ok(_) => DynamicCheck::Valid,
            Err(Error::Deflate { kind, .. }) => match kind {
                DeflateError::InvalidHlit { .. } => DynamicCheck::PrecodeSize,
                DeflateError::InvalidPrecode(c) => DynamicCheck::Precode(c),
                DeflateError::InvalidCodeLengthRepeat => DynamicCheck::PrecodeData,
                DeflateError::InvalidHdist { .. } => DynamicCheck::Distance(CodeClass::OverSubscribed),
                DeflateError::InvalidDistanceCode(c) => DynamicCheck::Distance(c),
                DeflateError::MissingEndOfBlock => DynamicCheck::Literal(CodeClass::Inefficient),
                DeflateError::InvalidLiteralCode(c) => DynamicCheck::Literal(c),
                _ => DynamicCheck::Truncated,
            },
            Err(_) => DynamicCheck::Truncated,
        }
    }
}

/// Counts Non-Compressed candidates in a whole buffer.
pub fn count_noncompressed(data: Bytes) -> usize {
    let end = data.len() as u64 * 8;
    let mut finder = BlockFinder::new(data, 0);
    let mut count = 0;
    let mut from = 0;
    while let Some(hit) = finder.next_noncompressed(from, end) {
        count += 1;
        from = hit + 1;
    }
    count
}
