//! Decoding of one chunk, from a known or a guessed start.

use std::sync::Arc;

use bytes::Bytes;

use super::stats::{MemoryTicket, Stats};
use crate::bitstream::BitReader;
use crate::blockfinder::{BlockFinder, CandidateKind, FINDER_OVERRUN_BYTES};
use crate::error::{Error, Result};
use crate::inflate::{
    next_member, parse_gzip_footer, parse_gzip_header, AfterMember, Block, BlockType,
    DecodeBuffer, GzipFooter, MarkerBuffer, WINDOW_SIZE,
};
use crate::io::SharedSource;

/// How decoding enters the stream at a chunk start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StartKind {
    /// A gzip member header.
    MemberHeader,
    /// A deflate block header (the BFINAL bit).
    BlockHeader,
    /// The byte-aligned LEN field of a Non-Compressed block.
    StoredLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChunkKey {
    /// Bit offset.
    pub offset: u64,
    pub kind: StartKind,
}

impl ChunkKey {
    pub fn member(offset: u64) -> Self {
        Self {
            offset,
            kind: StartKind::MemberHeader,
        }
    }

    pub fn block(offset: u64) -> Self {
        Self {
            offset,
            kind: StartKind::BlockHeader,
        }
    }
}

/// Where a chunk ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopPolicy {
    /// Before the first block at or past the offset that the block finder
    /// would report. The offset is compared against the finder position
    /// (the LEN field for Non-Compressed blocks).
    FinderBlocks(u64),
    /// Before the first gzip member header at or past the offset.
    MemberStart(u64),
    /// Before the first block header at or past the offset.
    Exact(u64),
    /// At the end of the stream.
    None,
}

/// Start of a block inside a chunk, other than the first one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Boundary {
    pub header_offset: u64,
    /// Decompressed offset relative to the chunk start.
    pub decompressed: usize,
}

/// A gzip footer met inside a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemberEnd {
    /// Bit offset just past the footer.
    pub compressed_end: u64,
    /// Decompressed offset of the member end, relative to the chunk start.
    pub decompressed: usize,
    pub footer: GzipFooter,
}

/// Where the next chunk starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkEnd {
    pub key: ChunkKey,
    /// Offset of the header of the first block (or member) not decoded.
    pub header_offset: u64,
}

/// Output of a chunk decode. The data is `markers` followed by `bytes`;
/// markers still need the window preceding the chunk.
#[derive(Debug)]
pub struct DecodedChunk {
    pub key: ChunkKey,
    /// Header offset of the first block, when the chunk started at one.
    pub first_header: Option<u64>,
    /// `None` when the chunk runs to the end of the stream.
    pub end: Option<ChunkEnd>,
    pub end_bit: u64,
    pub markers: Vec<u16>,
    pub bytes: Bytes,
    pub boundaries: Vec<Boundary>,
    pub members: Vec<MemberEnd>,
    pub(crate) _ticket: MemoryTicket,
}

impl DecodedChunk {
    pub fn len(&self) -> usize {
        self.markers.len() + self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Resolves positions `[from, to)` of the window-prefixed chunk data,
    /// where position 0 is the first chunk byte and negative positions
    /// index into `window`.
    pub fn resolve(&self, window: &[u8], from: i64, to: usize) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity((to as i64 - from).max(0) as usize);
        if from < 0 {
            let back = (-from as usize).min(window.len());
            out.extend_from_slice(&window[window.len() - back..]);
        }
        let from = from.max(0) as usize;
        let m = self.markers.len();
        if from < m {
            let upto = to.min(m);
            let start = out.len();
            out.resize(start + upto - from, 0);
            crate::inflate::replace_markers_into(&self.markers[from..upto], window, &mut out[start..])?;
        }
        if to > m {
            out.extend_from_slice(&self.bytes[from.max(m) - m..to - m]);
        }
        Ok(out)
    }

    /// Replaces all markers and returns the final data.
    pub fn materialize(&self, window: &[u8]) -> Result<Bytes> {
        if self.markers.is_empty() {
            return Ok(self.bytes.clone());
        }
        let mut out = vec![0u8; self.len()];
        let m = self.markers.len();
        crate::inflate::replace_markers_into(&self.markers, window, &mut out[..m])?;
        out[m..].copy_from_slice(&self.bytes);
        Ok(Bytes::from(out))
    }
}

/// Output checked for a possible switch to single-stage decoding this
/// often.
const SWITCH_CHECK_INTERVAL: usize = 32 << 10;

enum Output {
    Markers(MarkerBuffer),
    Bytes(DecodeBuffer<u8>),
}

impl Output {
    fn len(&self) -> usize {
        match self {
            Output::Markers(m) => m.len(),
            Output::Bytes(b) => b.len(),
        }
    }
}

/// Switches a marker buffer whose last 32 KiB are marker free to byte
/// output, moving the symbols decoded so far to `markers`.
fn switch_to_bytes(m: MarkerBuffer, markers: &mut Vec<u16>, reset_history: bool) -> DecodeBuffer<u8> {
    let window: Vec<u8> = if reset_history {
        Vec::new()
    } else {
        m.tail(WINDOW_SIZE).iter().map(|&s| s as u8).collect()
    };
    *markers = m.into_symbols();
    DecodeBuffer::with_window(&window)
}

/// Decodes one chunk starting at `key`.
///
/// Without a window (and not at a member start) the output starts as
/// 16-bit symbols with markers for unknown back references, and switches to
/// bytes once the last 32 KiB of output no longer depend on the unknown
/// window.
pub fn decode_chunk(
    source: &SharedSource,
    key: ChunkKey,
    window: Option<&[u8]>,
    stop: StopPolicy,
    cap: usize,
    stats: &Arc<Stats>,
) -> Result<DecodedChunk> {
    let mut reader = BitReader::new(source.clone());
    reader.seek_bits(key.offset)?;
    if key.kind == StartKind::MemberHeader {
        parse_gzip_header(&mut reader)?;
    }
    let mut out = match (window, key.kind) {
        (Some(w), _) => Output::Bytes(DecodeBuffer::with_window(w)),
        (None, StartKind::MemberHeader) => Output::Bytes(DecodeBuffer::with_window(&[])),
        (None, _) => {
            Stats::add(&stats.marker_buffers, 1);
            Output::Markers(MarkerBuffer::with_markers())
        }
    };
    let mut markers = Vec::new();
    let mut boundaries = Vec::new();
    let mut members = Vec::new();
    let mut first_header = None;
    let mut first_block = true;
    let total = |out: &Output, markers: &Vec<u16>| markers.len() + out.len();

    let end = loop {
        let header_offset = reader.tell();
        let mut block = if first_block && key.kind == StartKind::StoredLength {
            Block::read_stored_at_length(&mut reader)?
        } else {
            Block::read(&mut reader)?
        };
        if first_block {
            if key.kind != StartKind::StoredLength {
                first_header = Some(header_offset);
            }
            first_block = false;
        } else {
            let canonical = match block.block_type() {
                BlockType::NonCompressed => reader.tell() - 32,
                _ => header_offset,
            };
            let end = match stop {
                StopPolicy::FinderBlocks(s) if block.is_findable() && canonical >= s => {
                    let kind = match block.block_type() {
                        BlockType::NonCompressed => StartKind::StoredLength,
                        _ => StartKind::BlockHeader,
                    };
                    Some(ChunkKey {
                        offset: canonical,
                        kind,
                    })
                }
                StopPolicy::Exact(s) if header_offset >= s => Some(ChunkKey::block(header_offset)),
                _ => None,
            };
            if let Some(key) = end {
                break Some(ChunkEnd { key, header_offset });
            }
            boundaries.push(Boundary {
                header_offset,
                decompressed: total(&out, &markers),
            });
        }

        loop {
            let finished = match &mut out {
                Output::Bytes(b) => {
                    let limit = (cap + 1).saturating_sub(markers.len());
                    block.decode(&mut reader, b, limit)?
                }
                Output::Markers(m) => {
                    let limit = m.len() + SWITCH_CHECK_INTERVAL;
                    block.decode(&mut reader, m, limit)?
                }
            };
            if total(&out, &markers) > cap {
                return Err(Error::ChunkTooLarge {
                    bit_offset: key.offset,
                    limit: cap as u64,
                });
            }
            if let Output::Markers(m) = &mut out {
                if m.marker_free_tail() >= WINDOW_SIZE {
                    let Output::Markers(m) = std::mem::replace(&mut out, Output::Bytes(DecodeBuffer::with_window(&[]))) else {
                        unreachable!()
                    };
                    out = Output::Bytes(switch_to_bytes(m, &mut markers, false));
                    Stats::add(&stats.mode_switches, 1);
                }
            }
            if finished {
                break;
            }
        }
        if block.block_type() == BlockType::NonCompressed {
            Stats::add(&stats.stored_bytes, block.header.stored_len as u64);
        }

        if block.is_final() {
            let footer = parse_gzip_footer(&mut reader)?;
            members.push(MemberEnd {
                compressed_end: reader.tell(),
                decompressed: total(&out, &markers),
                footer,
            });
            let member_offset = reader.tell();
            if let StopPolicy::MemberStart(s) = stop {
                if member_offset >= s && !reader.is_eof() {
                    let before = reader.tell();
                    if let AfterMember::Member(_) = next_member(&mut reader)? {
                        break Some(ChunkEnd {
                            key: ChunkKey::member(before),
                            header_offset: before,
                        });
                    }
                    break None;
                }
            }
            match next_member(&mut reader)? {
                AfterMember::End => break None,
                AfterMember::Member(_) => match &mut out {
                    Output::Bytes(b) => b.reset_history(),
                    Output::Markers(_) => {
                        let Output::Markers(m) = std::mem::replace(&mut out, Output::Bytes(DecodeBuffer::with_window(&[]))) else {
                            unreachable!()
                        };
                        out = Output::Bytes(switch_to_bytes(m, &mut markers, true));
                        Stats::add(&stats.mode_switches, 1);
                    }
                },
            }
        }
    };

    let end_bit = end.map_or(reader.tell(), |e| e.header_offset);
    let bytes = match out {
        Output::Bytes(b) => b.into_bytes(),
        Output::Markers(m) => {
            markers = m.into_symbols();
            Bytes::new()
        }
    };
    Stats::add(&stats.chunk_decodes, 1);
    let ticket = MemoryTicket::new(stats, (markers.len() * 2 + bytes.len()) as u64);
    Ok(DecodedChunk {
        key,
        first_header,
        end,
        end_bit,
        markers,
        bytes,
        boundaries,
        members,
        _ticket: ticket,
    })
}

/// Parameters of a speculative decode of one grid cell.
#[derive(Debug, Clone)]
pub struct SpeculativeJob {
    pub source: SharedSource,
    /// Cell `[start, end)` in bits.
    pub start: u64,
    pub end: u64,
    pub stop: StopPolicy,
    pub cap: usize,
    /// Extra bogus candidates to try first, for testing false positive
    /// handling.
    pub bogus_candidates: u32,
    /// Member offsets of a BGZF file; candidates are then member starts.
    pub members: Option<Arc<Vec<u64>>>,
}

fn bogus_offsets(job: &SpeculativeJob) -> Vec<u64> {
    let span = job.end - job.start;
    let mut state = job.start ^ 0x9e37_79b9_7f4a_7c15;
    let mut offsets: Vec<u64> = (0..job.bogus_candidates)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            job.start + (state >> 11) % span
        })
        .collect();
    offsets.sort_unstable();
    offsets.dedup();
    offsets
}

/// Tries block finder candidates in the cell until one decodes to the stop
/// condition. Returns `None` when the cell has no usable candidate.
pub fn speculative_decode(job: &SpeculativeJob, stats: &Arc<Stats>) -> Option<DecodedChunk> {
    Stats::add(&stats.speculative_tasks, 1);
    if let Some(members) = &job.members {
        let i = members.partition_point(|&m| m < job.start);
        let &m = members.get(i).filter(|&&m| m < job.end)?;
        return decode_chunk(&job.source, ChunkKey::member(m), None, job.stop, job.cap, stats).ok();
    }

    let first_byte = (job.start / 8).saturating_sub(1);
    let length = (job.end.div_ceil(8) - first_byte) as usize + FINDER_OVERRUN_BYTES;
    let data = job.source.read_at(first_byte, length).ok()?;
    let mut finder = BlockFinder::new(data, first_byte * 8);
    let bogus = bogus_offsets(job);
    let mut bogus_iter = bogus.iter().copied().peekable();
    let mut from = job.start;
    loop {
        let real = finder.next_candidate(from, job.end);
        while bogus_iter.next_if(|&b| b < from).is_some() {}
        let key = match (real, bogus_iter.peek().copied()) {
            (Some((o, _)), Some(b)) if b < o => {
                bogus_iter.next();
                ChunkKey::block(b)
            }
            (None, Some(b)) => {
                bogus_iter.next();
                ChunkKey::block(b)
            }
            (Some((o, CandidateKind::NonCompressed)), _) => ChunkKey {
                offset: o,
                kind: StartKind::StoredLength,
            },
            (Some((o, CandidateKind::Dynamic)), _) => ChunkKey::block(o),
            (None, None) => return None,
        };
        match decode_chunk(&job.source, key, None, job.stop, job.cap, stats) {
            Ok(chunk) => return Some(chunk),
            Err(_) => {
                Stats::add(&stats.false_positives, 1);
                from = key.offset + 1;
            }
        }
    }
}
