//! Gzip container parsing and Deflate block decoding.
//!
//! Blocks are decoded into a [`DecodeBuffer`], which is generic over the
//! symbol width. With `u8` symbols it is a conventional decoder whose buffer
//! starts with the known window. With `u16` symbols it is the first stage of
//! two-stage decoding: the buffer starts with 32 768 marker symbols standing
//! in for the unknown window, and back-references into that region copy
//! markers instead of bytes. [`replace_markers`] performs the second stage
//! once the window is known.

use bytes::Bytes;

use crate::bitstream::BitReader;
use crate::error::{DeflateError, Error, Result};
use crate::huffman::{
    fixed_distance_decoder, fixed_literal_decoder, CodeClass, HuffmanDecoder, Strictness,
};

/// Maximum back-reference distance and size of a resume window.
pub const WINDOW_SIZE: usize = 32 * 1024;

/// Symbols at or above this value are markers; `symbol - MARKER_BASE` is the
/// window offset they stand for, where offset 32 767 is the byte right
/// before the chunk.
pub const MARKER_BASE: u16 = 0x8000;

const GZIP_MAGIC: [u8; 2] = [0x1F, 0x8B];
const FLAG_HCRC: u8 = 0x02;
const FLAG_EXTRA: u8 = 0x04;
const FLAG_NAME: u8 = 0x08;
const FLAG_COMMENT: u8 = 0x10;
const FLAG_RESERVED: u8 = 0xE0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtraField {
    pub id: [u8; 2],
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GzipHeader {
    pub method: u8,
    pub flags: u8,
    pub mtime: u32,
    pub extra_flags: u8,
    pub os: u8,
    pub extra: Vec<ExtraField>,
    pub name: Option<Vec<u8>>,
    pub comment: Option<Vec<u8>>,
    pub header_crc: Option<u16>,
}

impl GzipHeader {
    /// BGZF `BC` subfield: total member size minus one.
    pub fn bgzf_block_size(&self) -> Option<u16> {
        self.extra
            .iter()
            .find(|f| f.id == *b"BC" && f.data.len() == 2)
            .map(|f| u16::from_le_bytes([f.data[0], f.data[1]]))
    }
}

fn read_byte(reader: &mut BitReader) -> Result<u8> {
    Ok(reader.read(8)? as u8)
}

fn read_u16_le(reader: &mut BitReader) -> Result<u16> {
    Ok(reader.read(16)? as u16)
}

fn read_u32_le(reader: &mut BitReader) -> Result<u32> {
    reader.read(32)
}

fn read_zero_terminated(reader: &mut BitReader) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    loop {
        match read_byte(reader)? {
            0 => return Ok(out),
            b => out.push(b),
        }
    }
}

/// Parses a gzip member header. The reader must be byte-aligned and is left
/// at the first bit of the Deflate stream.
pub fn parse_gzip_header(reader: &mut BitReader) -> Result<GzipHeader> {
    let byte_offset = reader.tell() / 8;
    debug_assert_eq!(reader.tell() % 8, 0);
    let mut magic = [0u8; 2];
    for b in &mut magic {
        *b = read_byte(reader)?;
    }
    if magic != GZIP_MAGIC {
        return Err(Error::NotGzip { byte_offset });
    }
    let method = read_byte(reader)?;
    if method != 8 {
        return Err(Error::UnsupportedMethod {
            method,
            byte_offset,
        });
    }
    let flags = read_byte(reader)?;
    if flags & FLAG_RESERVED != 0 {
        return Err(Error::NotGzip { byte_offset });
    }
    let mut header = GzipHeader {
        method,
        flags,
        mtime: read_u32_le(reader)?,
        extra_flags: read_byte(reader)?,
        os: read_byte(reader)?,
        ..Default::default()
    };
    if flags & FLAG_EXTRA != 0 {
        let mut remaining = read_u16_le(reader)? as usize;
        while remaining >= 4 {
            let id = [read_byte(reader)?, read_byte(reader)?];
            let len = read_u16_le(reader)? as usize;
            remaining -= 4;
            let take = len.min(remaining);
            let mut data = Vec::with_capacity(take);
            for _ in 0..take {
                data.push(read_byte(reader)?);
            }
            remaining -= take;
            header.extra.push(ExtraField { id, data });
        }
        // Malformed subfield layout: skip whatever is left of XLEN.
        for _ in 0..remaining {
            read_byte(reader)?;
        }
    }
    if flags & FLAG_NAME != 0 {
        header.name = Some(read_zero_terminated(reader)?);
    }
    if flags & FLAG_COMMENT != 0 {
        header.comment = Some(read_zero_terminated(reader)?);
    }
    if flags & FLAG_HCRC != 0 {
        header.header_crc = Some(read_u16_le(reader)?);
    }
    Ok(header)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GzipFooter {
    pub crc32: u32,
    /// Decompressed member size modulo 2^32.
    pub isize: u32,
}

/// Skips the padding after the final block and reads the 8-byte footer.
pub fn parse_gzip_footer(reader: &mut BitReader) -> Result<GzipFooter> {
    reader.align_to_byte();
    Ok(GzipFooter {
        crc32: read_u32_le(reader)?,
        isize: read_u32_le(reader)?,
    })
}

/// What follows a gzip footer.
#[derive(Debug)]
pub enum AfterMember {
    Member(GzipHeader),
    /// End of input, possibly after zero padding.
    End,
}

/// Parses the next member header after a footer, tolerating trailing zeros.
pub fn next_member(reader: &mut BitReader) -> Result<AfterMember> {
    if reader.is_eof() {
        return Ok(AfterMember::End);
    }
    let here = reader.tell();
    let (bits, available) = reader.peek(16);
    if available == 16 && bits == u16::from_le_bytes(GZIP_MAGIC) as u32 {
        return parse_gzip_header(reader).map(AfterMember::Member);
    }
    let byte_offset = here / 8;
    let source = reader.source().clone();
    let size = source.size();
    let mut pos = byte_offset;
    while pos < size {
        let part = source.read_at(pos, 1 << 16)?;
        if let Some(i) = part.iter().position(|&b| b != 0) {
            return Err(Error::TrailingGarbage {
                byte_offset: pos + i as u64,
            });
        }
        pos += part.len() as u64;
    }
    reader.seek_bits(size * 8)?;
    Ok(AfterMember::End)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockType {
    NonCompressed,
    Fixed,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub is_final: bool,
    pub block_type: BlockType,
    /// LEN of a Non-Compressed block, zero otherwise.
    pub stored_len: u16,
    /// Value of the padding bits before LEN (Non-Compressed only).
    pub padding: u32,
}

/// Reads BF and BTYPE and, for Non-Compressed blocks, the padding and the
/// LEN/NLEN pair, leaving the reader at the verbatim data.
pub fn read_block_header(reader: &mut BitReader) -> Result<BlockHeader> {
    let offset = reader.tell();
    let bits = reader.read(3)?;
    let is_final = bits & 1 != 0;
    let block_type = match bits >> 1 {
        0 => BlockType::NonCompressed,
        1 => BlockType::Fixed,
        2 => BlockType::Dynamic,
        _ => return Err(Error::deflate(offset, DeflateError::ReservedBlockType)),
    };
    let mut header = BlockHeader {
        is_final,
        block_type,
        stored_len: 0,
        padding: 0,
    };
    if block_type == BlockType::NonCompressed {
        header.padding = reader.align_to_byte().0;
        header.stored_len = read_stored_length(reader)?;
    }
    Ok(header)
}

/// Reads and checks LEN/NLEN at a byte-aligned position.
pub fn read_stored_length(reader: &mut BitReader) -> Result<u16> {
    let offset = reader.tell();
    let len = read_u16_le(reader)?;
    let nlen = read_u16_le(reader)?;
    if len != !nlen {
        return Err(Error::deflate(
            offset,
            DeflateError::LengthMismatch { len, nlen },
        ));
    }
    Ok(len)
}

/// Order in which precode lengths are stored.
pub const PRECODE_ORDER: [usize; 19] = [
    16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15,
];

pub struct DynamicHeader {
    pub hlit: u16,
    pub hdist: u16,
    pub hclen: u8,
    /// Precode lengths indexed by symbol.
    pub precode_lengths: [u8; 19],
    pub literal: HuffmanDecoder,
    pub distance: HuffmanDecoder,
}

impl std::fmt::Debug for DynamicHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynamicHeader")
            .field("hlit", &self.hlit)
            .field("hdist", &self.hdist)
            .field("hclen", &self.hclen)
            .finish()
    }
}

impl DynamicHeader {
    /// Both alphabet codes are complete, i.e. the header would also pass the
    /// block finder.
    pub fn is_strictly_valid(&self) -> bool {
        self.literal.class() == CodeClass::Valid && self.distance.class() == CodeClass::Valid
    }
}

/// Reads the code definitions of a Dynamic block (after BF and BTYPE).
///
/// The precode must always be complete. `strictness` applies to the
/// distance and literal codes; the block finder uses
/// [`Strictness::Strict`], regular decoding [`Strictness::Permissive`].
pub fn read_dynamic_header(reader: &mut BitReader, strictness: Strictness) -> Result<DynamicHeader> {
    let offset = reader.tell();
    let fail = |kind| Error::deflate(offset, kind);
    let raw_hlit = reader.read(5)?;
    if raw_hlit >= 30 {
        return Err(fail(DeflateError::InvalidHlit { raw: raw_hlit as u8 }));
    }
    let hlit = raw_hlit as u16 + 257;
    let hdist = reader.read(5)? as u16 + 1;
    let hclen = reader.read(4)? as u8 + 4;

    let mut precode_lengths = [0u8; 19];
    for &symbol in &PRECODE_ORDER[..hclen as usize] {
        precode_lengths[symbol] = reader.read(3)? as u8;
    }
    let precode = HuffmanDecoder::build(&precode_lengths, Strictness::Strict)
        .map_err(|class| fail(DeflateError::InvalidPrecode(class)))?;

    let total = (hlit + hdist) as usize;
    let mut lengths = [0u8; 286 + 32];
    let mut i = 0;
    while i < total {
        let symbol = precode.decode_symbol(reader)?;
        let (value, count) = match symbol {
            0..=15 => (symbol as u8, 1),
            16 => {
                if i == 0 {
                    return Err(fail(DeflateError::InvalidCodeLengthRepeat));
                }
                (lengths[i - 1], 3 + reader.read(2)? as usize)
            }
            17 => (0, 3 + reader.read(3)? as usize),
            _ => (0, 11 + reader.read(7)? as usize),
        };
        if i + count > total {
            return Err(fail(DeflateError::InvalidCodeLengthRepeat));
        }
        lengths[i..i + count].fill(value);
        i += count;
    }

    if hdist > 30 {
        return Err(fail(DeflateError::InvalidHdist { count: hdist }));
    }
    let literal_lengths = &lengths[..hlit as usize];
    let distance_lengths = &lengths[hlit as usize..total];
    let distance = HuffmanDecoder::build(distance_lengths, strictness)
        .map_err(|class| fail(DeflateError::InvalidDistanceCode(class)))?;
    if literal_lengths[256] == 0 {
        return Err(fail(DeflateError::MissingEndOfBlock));
    }
    let literal = HuffmanDecoder::build(literal_lengths, strictness)
        .map_err(|class| fail(DeflateError::InvalidLiteralCode(class)))?;

    Ok(DynamicHeader {
        hlit,
        hdist,
        hclen,
        precode_lengths,
        literal,
        distance,
    })
}

const LENGTH_BASE: [u16; 29] = [
    3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31, 35, 43, 51, 59, 67, 83, 99, 115, 131,
    163, 195, 227, 258,
];
const LENGTH_EXTRA: [u8; 29] = [
    0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0,
];
const DISTANCE_BASE: [u16; 30] = [
    1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193, 257, 385, 513, 769, 1025, 1537,
    2049, 3073, 4097, 6145, 8193, 12289, 16385, 24577,
];
const DISTANCE_EXTRA: [u8; 30] = [
    0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13,
    13,
];

/// Output symbols plus the history they may reference.
///
/// `symbols[..start]` is the initial window (bytes or markers) and
/// `symbols[floor..]` is what back-references may reach; `floor` moves
/// forward at gzip member boundaries.
#[derive(Clone)]
pub struct DecodeBuffer<S> {
    symbols: Vec<S>,
    start: usize,
    floor: usize,
    // Marker tracking: `symbols[..scanned]` has been inspected and
    // `symbols[clean_from..scanned]` holds no marker.
    scanned: usize,
    clean_from: usize,
}

/// Two-stage output buffer.
pub type MarkerBuffer = DecodeBuffer<u16>;

impl<S: Copy + From<u8>> DecodeBuffer<S> {
    /// Decoded symbols, excluding the initial window.
    pub fn data(&self) -> &[S] {
        &self.symbols[self.start..]
    }

    /// Number of decoded symbols, excluding the initial window.
    pub fn len(&self) -> usize {
        self.symbols.len() - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of symbols back-references may currently reach.
    pub fn history(&self) -> usize {
        self.symbols.len() - self.floor
    }

    /// Last `min(n, history)` symbols.
    pub fn tail(&self, n: usize) -> &[S] {
        let n = n.min(self.history());
        &self.symbols[self.symbols.len() - n..]
    }

    /// Forgets all history, as at the start of a gzip member.
    pub fn reset_history(&mut self) {
        self.floor = self.symbols.len();
    }

    #[inline]
    fn push_literal(&mut self, byte: u8) {
        self.symbols.push(S::from(byte));
    }

    fn extend_literals(&mut self, bytes: &[u8]) {
        self.symbols.extend(bytes.iter().map(|&b| S::from(b)));
    }

    #[inline]
    fn copy_match(&mut self, distance: usize, length: usize) {
        let len = self.symbols.len();
        let from = len - distance;
        if distance >= length {
            self.symbols.extend_from_within(from..from + length);
        } else if distance == 1 {
            let value = self.symbols[len - 1];
            self.symbols.resize(len + length, value);
        } else {
            // Overlapping copy: the source repeats with period `distance`.
            let mut remaining = length;
            while remaining > 0 {
                let n = remaining.min(distance);
                let at = self.symbols.len() - distance;
                self.symbols.extend_from_within(at..at + n);
                remaining -= n;
            }
        }
    }
}

impl DecodeBuffer<u8> {
    /// Single-stage buffer seeded with a fully known window (at most 32 KiB
    /// are kept).
    pub fn with_window(window: &[u8]) -> Self {
        let window = &window[window.len().saturating_sub(WINDOW_SIZE)..];
        let mut symbols = Vec::with_capacity(window.len() + (1 << 20));
        symbols.extend_from_slice(window);
        Self {
            start: window.len(),
            floor: 0,
            scanned: window.len(),
            clean_from: 0,
            symbols,
        }
    }

    /// Decoded bytes without the initial window (zero-copy).
    pub fn into_bytes(self) -> Bytes {
        let start = self.start;
        Bytes::from(self.symbols).slice(start..)
    }
}

impl DecodeBuffer<u16> {
    /// Two-stage buffer whose window consists of the 32 768 distinct markers.
    pub fn with_markers() -> Self {
        let mut symbols = Vec::with_capacity(WINDOW_SIZE + (1 << 20));
        symbols.extend((0..WINDOW_SIZE as u16).map(|i| MARKER_BASE + i));
        Self {
            symbols,
            start: WINDOW_SIZE,
            floor: 0,
            scanned: WINDOW_SIZE,
            clean_from: WINDOW_SIZE,
        }
    }

    fn scan_markers(&mut self) {
        let end = self.symbols.len();
        if let Some(p) = self.symbols[self.scanned..end]
            .iter()
            .rposition(|&s| s >= MARKER_BASE)
        {
            self.clean_from = self.scanned + p + 1;
        }
        self.scanned = end;
    }

    /// Index into [`data`](Self::data) of the last marker symbol.
    pub fn last_marker_index(&mut self) -> Option<usize> {
        self.scan_markers();
        (self.clean_from > self.start).then(|| self.clean_from - 1 - self.start)
    }

    /// Length of the marker-free suffix of the buffer. Once it reaches
    /// [`WINDOW_SIZE`] the rest of the chunk can be decoded single-stage.
    pub fn marker_free_tail(&mut self) -> usize {
        self.scan_markers();
        self.symbols.len() - self.clean_from
    }

    pub fn into_symbols(self) -> Vec<u16> {
        let mut symbols = self.symbols;
        symbols.drain(..self.start);
        symbols
    }
}

enum BlockState {
    Stored { remaining: usize },
    Fixed,
    Dynamic(Box<DynamicHeader>),
}

/// A block whose header has been read and whose data is being decoded.
pub struct Block {
    pub header: BlockHeader,
    /// Bit offset of the BF bit, or of LEN when started from a stored
    /// length field.
    pub offset: u64,
    strictly_valid: bool,
    state: BlockState,
}

impl Block {
    /// Reads a block header (and the code definitions of a Dynamic block).
    pub fn read(reader: &mut BitReader) -> Result<Self> {
        let offset = reader.tell();
        let header = read_block_header(reader)?;
        let (state, strictly_valid) = match header.block_type {
            BlockType::NonCompressed => (
                BlockState::Stored {
                    remaining: header.stored_len as usize,
                },
                !header.is_final && header.padding == 0,
            ),
            BlockType::Fixed => (BlockState::Fixed, false),
            BlockType::Dynamic => {
                let dynamic = read_dynamic_header(reader, Strictness::Permissive)?;
                let strict = !header.is_final && dynamic.is_strictly_valid();
                (BlockState::Dynamic(Box::new(dynamic)), strict)
            }
        };
        Ok(Self {
            header,
            offset,
            strictly_valid,
            state,
        })
    }

    /// Starts a non-final Non-Compressed block at its (byte-aligned) LEN
    /// field, the position the block finder reports.
    pub fn read_stored_at_length(reader: &mut BitReader) -> Result<Self> {
        let offset = reader.tell();
        let len = read_stored_length(reader)?;
        Ok(Self {
            header: BlockHeader {
                is_final: false,
                block_type: BlockType::NonCompressed,
                stored_len: len,
                padding: 0,
            },
            offset,
            strictly_valid: true,
            state: BlockState::Stored {
                remaining: len as usize,
            },
        })
    }

    pub fn is_final(&self) -> bool {
        self.header.is_final
    }

    pub fn block_type(&self) -> BlockType {
        self.header.block_type
    }

    /// Whether the block finder would report this block: a non-final
    /// Dynamic block with complete codes, or a non-final Non-Compressed
    /// block with zero padding.
    pub fn is_findable(&self) -> bool {
        self.strictly_valid
    }

    /// Decodes until the end of the block or until `out.len() >= limit`,
    /// whichever comes first. Returns `true` once the block is finished.
    pub fn decode<S: Copy + From<u8>>(
        &mut self,
        reader: &mut BitReader,
        out: &mut DecodeBuffer<S>,
        limit: usize,
    ) -> Result<bool> {
        match &mut self.state {
            BlockState::Stored { remaining } => {
                let n = (*remaining).min(limit.saturating_sub(out.len()));
                if n > 0 {
                    reader.copy_aligned_bytes(n, |part| out.extend_literals(part))?;
                    *remaining -= n;
                }
                Ok(*remaining == 0)
            }
            BlockState::Fixed => decode_huffman(
                reader,
                fixed_literal_decoder(),
                fixed_distance_decoder(),
                out,
                limit,
            ),
            BlockState::Dynamic(header) => {
                decode_huffman(reader, &header.literal, &header.distance, out, limit)
            }
        }
    }

    /// Remaining verbatim bytes of a Non-Compressed block.
    pub fn stored_remaining(&self) -> Option<usize> {
        match self.state {
            BlockState::Stored { remaining } => Some(remaining),
            _ => None,
        }
    }
}

fn decode_huffman<S: Copy + From<u8>>(
    reader: &mut BitReader,
    literal: &HuffmanDecoder,
    distance: &HuffmanDecoder,
    out: &mut DecodeBuffer<S>,
    limit: usize,
) -> Result<bool> {
    out.symbols.reserve(limit.saturating_sub(out.len()).min(1 << 20));
    while out.len() < limit {
        let symbol = literal.decode_symbol(reader)?;
        if symbol < 256 {
            out.push_literal(symbol as u8);
            continue;
        }
        if symbol == 256 {
            return Ok(true);
        }
        let at = reader.tell();
        let index = (symbol - 257) as usize;
        if index >= LENGTH_BASE.len() {
            return Err(Error::deflate(at, DeflateError::InvalidLengthSymbol(symbol)));
        }
        let length = LENGTH_BASE[index] as usize + reader.read(LENGTH_EXTRA[index] as u32)? as usize;
        let dsym = distance.decode_symbol(reader)? as usize;
        if dsym >= DISTANCE_BASE.len() {
            return Err(Error::deflate(
                at,
                DeflateError::InvalidDistanceSymbol(dsym as u16),
            ));
        }
        let dist = DISTANCE_BASE[dsym] as usize + reader.read(DISTANCE_EXTRA[dsym] as u32)? as usize;
        if dist > out.history() {
            return Err(Error::deflate(
                at,
                DeflateError::DistanceTooFar {
                    distance: dist as u32,
                    available: out.history() as u64,
                },
            ));
        }
        out.copy_match(dist, length);
    }
    Ok(false)
}

/// Decodes one whole block with a known window. Returns the number of bytes
/// produced.
pub fn inflate_block_single_stage(reader: &mut BitReader, out: &mut DecodeBuffer<u8>) -> Result<usize> {
    let before = out.len();
    let mut block = Block::read(reader)?;
    block.decode(reader, out, usize::MAX)?;
    Ok(out.len() - before)
}

/// Decodes one whole block into a marker buffer. Returns the number of
/// symbols produced.
pub fn inflate_block_two_stage(reader: &mut BitReader, out: &mut MarkerBuffer) -> Result<usize> {
    let before = out.len();
    let mut block = Block::read(reader)?;
    block.decode(reader, out, usize::MAX)?;
    Ok(out.len() - before)
}

/// Resolves marker symbols against `window`, the bytes preceding the chunk.
/// A window shorter than 32 KiB is aligned to its end; markers pointing
/// before its start are reported as corrupt.
pub fn replace_markers(symbols: &[u16], window: &[u8]) -> Result<Vec<u8>> {
    let mut out = vec![0u8; symbols.len()];
    replace_markers_into(symbols, window, &mut out)?;
    Ok(out)
}

pub fn replace_markers_into(symbols: &[u16], window: &[u8], out: &mut [u8]) -> Result<()> {
    assert_eq!(symbols.len(), out.len());
    let window = &window[window.len().saturating_sub(WINDOW_SIZE)..];
    let missing = WINDOW_SIZE - window.len();
    for (i, (&s, o)) in symbols.iter().zip(out.iter_mut()).enumerate() {
        if s < 256 {
            *o = s as u8;
        } else if s >= MARKER_BASE && (s - MARKER_BASE) as usize >= missing {
            *o = window[(s - MARKER_BASE) as usize - missing];
        } else {
            return Err(Error::InvalidMarkerSymbol { symbol: s, index: i });
        }
    }
    Ok(())
}
