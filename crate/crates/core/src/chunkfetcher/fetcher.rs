use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use bytes::Bytes;

use super::decode::{decode_chunk, speculative_decode, ChunkKey, DecodedChunk, SpeculativeJob, StartKind, StopPolicy};
use super::prefetch::PrefetchStrategy;
use super::stats::{MemoryTicket, Stats, StatsSnapshot};
use crate::bitstream::BitReader;
use crate::error::{Error, Result};
use crate::index::{GzipIndex, MemberBoundary, SeekPoint};
use crate::inflate::{parse_gzip_header, WINDOW_SIZE};
use crate::io::SharedSource;
use crate::pool::{Priority, TaskHandle, ThreadPool};

pub const DEFAULT_CHUNK_SIZE: usize = 4 << 20;

#[derive(Debug, Clone)]
pub struct FetcherOptions {
    /// Worker threads.
    pub parallelism: usize,
    /// Compressed bytes per chunk.
    pub chunk_size: usize,
    /// Maximum decompressed distance between seek points. Defaults to the
    /// chunk size.
    pub index_spacing: Option<usize>,
    /// Check the CRC32 of every member.
    pub verify_crc: bool,
    /// Maximum decompressed size of one chunk. Defaults to 256 chunk sizes.
    pub size_cap: Option<usize>,
    /// Bogus block finder candidates injected into each speculative task.
    pub bogus_candidates: u32,
    /// Chunks kept after being accessed.
    pub access_cache_capacity: usize,
}

impl Default for FetcherOptions {
    fn default() -> Self {
        Self {
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            chunk_size: DEFAULT_CHUNK_SIZE,
            index_spacing: None,
            verify_crc: false,
            size_cap: None,
            bogus_candidates: 0,
            access_cache_capacity: 1,
        }
    }
}

/// Final bytes of one chunk and their decompressed position.
#[derive(Debug, Clone)]
pub struct ChunkData {
    pub start: u64,
    pub data: Bytes,
}

impl ChunkData {
    pub fn end(&self) -> u64 {
        self.start + self.data.len() as u64
    }
}

struct FinalChunk {
    start: u64,
    data: Bytes,
    _ticket: MemoryTicket,
}

impl FinalChunk {
    fn contains(&self, offset: u64) -> bool {
        offset >= self.start && offset < self.start + self.data.len() as u64
    }

    fn to_data(&self) -> ChunkData {
        ChunkData {
            start: self.start,
            data: self.data.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum TaskKey {
    /// Speculative decode of a grid cell.
    Grid(u64),
    /// Decode from a seek point, by position and decompressed end.
    Indexed(usize, u64),
}

type TaskResult = Result<Option<DecodedChunk>>;

struct Frontier {
    key: ChunkKey,
    header_offset: u64,
    decompressed: u64,
    window: Bytes,
    member_start: u64,
}

enum Pending {
    Raw { chunk: DecodedChunk, window: Bytes },
    Replacing(TaskHandle<Result<Bytes>>),
    Ready(Bytes),
}

/// A chunk that has been consumed in stream order but not accessed yet.
struct Consumed {
    start: u64,
    len: u64,
    state: Pending,
}

struct PointCandidate {
    decompressed: u64,
    header_offset: u64,
    window: Option<Bytes>,
}

/// Assembles decoded chunks in stream order, propagating windows and
/// building the seek point index on the way, and serves chunks by
/// decompressed offset.
pub struct ChunkFetcher {
    source: SharedSource,
    options: FetcherOptions,
    spacing: u64,
    cap: usize,
    pool: ThreadPool,
    stats: Arc<Stats>,
    index: GzipIndex,
    imported: bool,
    bgzf: Option<Arc<Vec<u64>>>,
    frontier: Option<Frontier>,
    consumed_count: usize,
    crc: crc32fast::Hasher,
    last_point: u64,
    candidate: Option<PointCandidate>,
    access: VecDeque<Arc<FinalChunk>>,
    consumed: VecDeque<Consumed>,
    prefetched: VecDeque<(TaskKey, TaskResult)>,
    in_flight: HashMap<TaskKey, TaskHandle<TaskResult>>,
    grid_strategy: PrefetchStrategy,
    index_strategy: PrefetchStrategy,
}

impl ChunkFetcher {
    pub fn new(source: SharedSource, options: FetcherOptions) -> Result<Self> {
        Self::build(source, options, None)
    }

    /// Uses a previously exported index. Chunks are then decoded directly
    /// from seek points with their windows.
    pub fn with_index(source: SharedSource, options: FetcherOptions, index: GzipIndex) -> Result<Self> {
        Self::build(source, options, Some(index))
    }

    fn build(source: SharedSource, mut options: FetcherOptions, index: Option<GzipIndex>) -> Result<Self> {
        options.parallelism = options.parallelism.max(1);
        options.chunk_size = options.chunk_size.max(1);
        options.access_cache_capacity = options.access_cache_capacity.max(1);
        let spacing = options.index_spacing.unwrap_or(options.chunk_size) as u64;
        let cap = options.size_cap.unwrap_or(256 * options.chunk_size);
        let p = options.parallelism;
        let (index, imported, frontier, bgzf) = match index {
            Some(index) => {
                let bits = index.total_compressed_bits();
                if !index.is_finalized() || bits != Some(source.size_bits()) {
                    return Err(Error::IndexMismatch {
                        bit_offset: bits.unwrap_or(0),
                        source: Box::new(Error::IndexCorruption(format!(
                            "index covers {} compressed bits, input has {}",
                            bits.unwrap_or(0),
                            source.size_bits()
                        ))),
                    });
                }
                (index, true, None, None)
            }
            None => {
                let mut index = GzipIndex::new();
                index.insert(SeekPoint {
                    compressed_offset: 0,
                    decompressed_offset: 0,
                    window: Bytes::new(),
                })?;
                let frontier = Frontier {
                    key: ChunkKey::member(0),
                    header_offset: 0,
                    decompressed: 0,
                    window: Bytes::new(),
                    member_start: 0,
                };
                let bgzf = bgzf_members(&source).map(Arc::new);
                (index, false, Some(frontier), bgzf)
            }
        };
        Ok(Self {
            source,
            spacing,
            cap,
            pool: ThreadPool::new(p),
            stats: Arc::new(Stats::default()),
            index,
            imported,
            bgzf,
            frontier,
            consumed_count: 0,
            crc: crc32fast::Hasher::new(),
            last_point: 0,
            candidate: None,
            access: VecDeque::new(),
            consumed: VecDeque::new(),
            prefetched: VecDeque::new(),
            in_flight: HashMap::new(),
            grid_strategy: PrefetchStrategy::new(2 * p),
            index_strategy: PrefetchStrategy::new(2 * p),
            options,
        })
    }

    pub fn source(&self) -> &SharedSource {
        &self.source
    }

    pub fn options(&self) -> &FetcherOptions {
        &self.options
    }

    /// Decompressed size, once the end of the stream has been reached or
    /// an index was supplied.
    pub fn size(&self) -> Option<u64> {
        self.index.total_decompressed()
    }

    pub fn index(&self) -> &GzipIndex {
        &self.index
    }

    pub fn is_bgzf(&self) -> bool {
        self.bgzf.is_some()
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    /// Decodes the rest of the stream without keeping the data and returns
    /// the finished index.
    pub fn build_full_index(&mut self) -> Result<&GzipIndex> {
        while self.frontier.is_some() {
            self.consume_next()?;
        }
        Ok(&self.index)
    }

    /// Returns the chunk containing decompressed `offset`, or `None` past
    /// the end of the stream.
    pub fn chunk_at(&mut self, offset: u64) -> Result<Option<ChunkData>> {
        self.collect_finished();
        if self.size().is_some_and(|total| offset >= total) {
            return Ok(None);
        }
        if let Some(pos) = self.access.iter().position(|c| c.contains(offset)) {
            let chunk = self.access.remove(pos).unwrap();
            self.access.push_front(Arc::clone(&chunk));
            return Ok(Some(chunk.to_data()));
        }
        if let Some(pos) = self.consumed.iter().position(|c| offset >= c.start && offset < c.start + c.len) {
            self.consume_ready_ahead()?;
            let chunk = self.take_consumed(pos)?;
            return Ok(Some(self.remember(chunk)));
        }
        if let Some(frontier) = &self.frontier {
            if offset >= frontier.decompressed {
                self.consumed.retain(|c| c.start + c.len > offset);
                loop {
                    let (start, len) = self.consume_next()?;
                    if offset < start + len {
                        let pos = self.consumed.len() - 1;
                        self.dispatch_replacement(pos);
                        self.consume_ready_ahead()?;
                        let pos = self.consumed.iter().position(|c| c.start == start && c.len == len).unwrap();
                        let chunk = self.take_consumed(pos)?;
                        return Ok(Some(self.remember(chunk)));
                    }
                    if self.frontier.is_none() {
                        return Ok(None);
                    }
                }
            }
        }
        let i = self.locate_point(offset)?;
        let chunk = self.indexed_chunk(i)?;
        Ok(Some(self.remember(chunk)))
    }

    fn remember(&mut self, chunk: Arc<FinalChunk>) -> ChunkData {
        let data = chunk.to_data();
        self.access.push_front(chunk);
        self.access.truncate(self.options.access_cache_capacity);
        data
    }

    fn cell_bits(&self) -> u64 {
        self.options.chunk_size as u64 * 8
    }

    fn stop_for(&self, cell: u64) -> StopPolicy {
        let next = (cell + 1) * self.cell_bits();
        if self.bgzf.is_some() {
            StopPolicy::MemberStart(next)
        } else {
            StopPolicy::FinderBlocks(next)
        }
    }

    fn budget_left(&self) -> bool {
        self.in_flight.len() + self.prefetched.len() + self.consumed.len() < 2 * self.options.parallelism
    }

    fn collect_finished(&mut self) {
        let done: Vec<TaskKey> = self
            .in_flight
            .iter_mut()
            .filter_map(|(k, h)| h.is_finished().then_some(*k))
            .collect();
        for key in done {
            let handle = self.in_flight.remove(&key).unwrap();
            let result = handle.wait().and_then(|r| r);
            self.push_prefetched(key, result);
        }
    }

    fn push_prefetched(&mut self, key: TaskKey, result: TaskResult) {
        if let (TaskKey::Grid(cell), Some(f)) = (key, &self.frontier) {
            if cell < f.key.offset / self.cell_bits() {
                return;
            }
        }
        self.prefetched.push_back((key, result));
        while self.prefetched.len() > 2 * self.options.parallelism {
            self.prefetched.pop_front();
        }
    }

    fn take_task(&mut self, key: TaskKey) -> Option<TaskResult> {
        if let Some(handle) = self.in_flight.remove(&key) {
            return Some(handle.wait().and_then(|r| r));
        }
        let pos = self.prefetched.iter().position(|(k, _)| *k == key)?;
        self.prefetched.remove(pos).map(|(_, r)| r)
    }

    fn is_known(&self, key: TaskKey) -> bool {
        self.in_flight.contains_key(&key) || self.prefetched.iter().any(|(k, _)| *k == key)
    }

    fn prefetch_grid(&mut self, cell: u64) {
        let base = self.consumed_count;
        for ordinal in self.grid_strategy.plan(base) {
            let c = cell + (ordinal - base) as u64;
            if c * self.cell_bits() >= self.source.size_bits() {
                break;
            }
            let key = TaskKey::Grid(c);
            if self.is_known(key) {
                continue;
            }
            if !self.budget_left() {
                break;
            }
            let job = SpeculativeJob {
                source: self.source.clone(),
                start: c * self.cell_bits(),
                end: (c + 1) * self.cell_bits(),
                stop: self.stop_for(c),
                cap: self.cap,
                bogus_candidates: self.options.bogus_candidates,
                members: self.bgzf.clone(),
            };
            let stats = Arc::clone(&self.stats);
            let handle = self
                .pool
                .submit(Priority::Low, move || Ok(speculative_decode(&job, &stats)));
            self.in_flight.insert(key, handle);
        }
    }

    /// Decodes the chunk at the frontier, then finalizes it. Returns its
    /// decompressed range.
    fn consume_next(&mut self) -> Result<(u64, u64)> {
        self.collect_finished();
        let frontier = self.frontier.take().expect("stream already consumed");
        let cell = frontier.key.offset / self.cell_bits();
        self.prefetched
            .retain(|(k, _)| !matches!(k, TaskKey::Grid(c) if *c < cell));
        self.prefetch_grid(cell);
        let chunk = match self.obtain(&frontier, cell) {
            Ok(chunk) => chunk,
            Err(e) => {
                self.frontier = Some(frontier);
                return Err(e);
            }
        };
        self.consumed_count += 1;
        self.finalize(frontier, chunk)
    }

    fn obtain(&mut self, frontier: &Frontier, cell: u64) -> Result<DecodedChunk> {
        if frontier.key.offset > 0 {
            if let Some(result) = self.take_task(TaskKey::Grid(cell)) {
                if let Some(chunk) = result? {
                    if chunk.key == frontier.key {
                        Stats::add(&self.stats.speculative_hits, 1);
                        return Ok(chunk);
                    }
                }
            }
            Stats::add(&self.stats.speculative_misses, 1);
        }
        Stats::add(&self.stats.exact_decodes, 1);
        let source = self.source.clone();
        let key = frontier.key;
        let window = (key.kind != StartKind::MemberHeader).then(|| frontier.window.clone());
        let stop = self.stop_for(cell);
        let cap = self.cap;
        let stats = Arc::clone(&self.stats);
        self.pool
            .submit(Priority::High, move || {
                decode_chunk(&source, key, window.as_deref(), stop, cap, &stats)
            })
            .wait()?
    }

    fn finalize(&mut self, frontier: Frontier, chunk: DecodedChunk) -> Result<(u64, u64)> {
        let chunk_end = chunk.end;
        let start = frontier.decompressed;
        let len = chunk.len() as u64;
        let end = start + len;

        let window_len = (end.min(WINDOW_SIZE as u64)) as i64;
        let from = len as i64 - window_len;
        let resolved = chunk.markers.len() as i64 - from.max(0);
        if resolved > 0 {
            Stats::add(&self.stats.window_symbols_resolved, resolved as u64);
        }
        let end_window = Bytes::from(chunk.resolve(&frontier.window, from, len as usize)?);

        let mut member_start = frontier.member_start;
        for (i, m) in chunk.members.iter().enumerate() {
            let size = start + m.decompressed as u64 - member_start;
            if size as u32 != m.footer.isize {
                return Err(Error::SizeMismatch {
                    bit_offset: m.compressed_end,
                    expected: m.footer.isize,
                    actual: size as u32,
                });
            }
            member_start = start + m.decompressed as u64;
            let last_in_stream = chunk.end.is_none() && i + 1 == chunk.members.len();
            if !last_in_stream {
                self.index.add_member_boundary(MemberBoundary {
                    compressed_offset: m.compressed_end,
                    decompressed_offset: member_start,
                });
            }
        }

        let first_header = match frontier.key.kind {
            StartKind::MemberHeader => chunk.first_header,
            _ => Some(frontier.header_offset),
        };
        if let Some(header) = first_header {
            self.offer_point(start, header, Some(frontier.window.clone()), start, &chunk, &frontier.window)?;
        }
        for b in &chunk.boundaries {
            self.offer_point(start + b.decompressed as u64, b.header_offset, None, start, &chunk, &frontier.window)?;
        }
        if let Some(c) = &mut self.candidate {
            if c.window.is_none() {
                let rel = (c.decompressed - start) as i64;
                let w = (c.decompressed.min(WINDOW_SIZE as u64)) as i64;
                c.window = Some(Bytes::from(chunk.resolve(&frontier.window, rel - w, rel as usize)?));
            }
        }

        let state = if self.options.verify_crc {
            let data = chunk.materialize(&frontier.window)?;
            Stats::add(&self.stats.markers_replaced, chunk.markers.len() as u64);
            let mut at = 0;
            for m in &chunk.members {
                self.crc.update(&data[at..m.decompressed]);
                at = m.decompressed;
                let actual = std::mem::take(&mut self.crc).finalize();
                if actual != m.footer.crc32 {
                    return Err(Error::CrcMismatch {
                        bit_offset: m.compressed_end,
                        expected: m.footer.crc32,
                        actual,
                    });
                }
            }
            self.crc.update(&data[at..]);
            Pending::Ready(data)
        } else {
            Pending::Raw {
                chunk,
                window: frontier.window,
            }
        };
        self.consumed.push_back(Consumed { start, len, state });
        while self.consumed.len() > self.options.parallelism {
            self.consumed.pop_front();
        }

        match chunk_end {
            Some(e) => {
                self.frontier = Some(Frontier {
                    key: e.key,
                    header_offset: e.header_offset,
                    decompressed: end,
                    window: end_window,
                    member_start,
                });
            }
            None => {
                if end - self.last_point > self.spacing {
                    if let Some(c) = self.candidate.take() {
                        self.insert_candidate(c)?;
                    }
                }
                self.candidate = None;
                self.index.finalize(self.source.size_bits(), end, end_window)?;
                self.in_flight.clear();
                self.prefetched.retain(|(k, _)| matches!(k, TaskKey::Indexed(..)));
            }
        }
        Ok((start, len))
    }

    fn insert_candidate(&mut self, c: PointCandidate) -> Result<()> {
        let window = c.window.expect("candidate window resolved");
        self.index.insert(SeekPoint {
            compressed_offset: c.header_offset,
            decompressed_offset: c.decompressed,
            window,
        })?;
        self.last_point = c.decompressed;
        Ok(())
    }

    /// Greedy seek point selection: a block start becomes a seek point when
    /// the next one would be too far from the previous point.
    fn offer_point(
        &mut self,
        decompressed: u64,
        header_offset: u64,
        window: Option<Bytes>,
        chunk_start: u64,
        chunk: &DecodedChunk,
        prev_window: &[u8],
    ) -> Result<()> {
        if decompressed <= self.last_point {
            return Ok(());
        }
        if decompressed - self.last_point > self.spacing {
            if let Some(mut c) = self.candidate.take() {
                if c.window.is_none() {
                    let rel = (c.decompressed - chunk_start) as i64;
                    let w = c.decompressed.min(WINDOW_SIZE as u64) as i64;
                    c.window = Some(Bytes::from(chunk.resolve(prev_window, rel - w, rel as usize)?));
                }
                self.insert_candidate(c)?;
            }
        }
        self.candidate = Some(PointCandidate {
            decompressed,
            header_offset,
            window,
        });
        Ok(())
    }

    /// Starts marker replacement of a consumed chunk on the pool.
    fn dispatch_replacement(&mut self, pos: usize) {
        let entry = &mut self.consumed[pos];
        if !matches!(entry.state, Pending::Raw { .. }) {
            return;
        }
        let Pending::Raw { chunk, window } = std::mem::replace(&mut entry.state, Pending::Ready(Bytes::new())) else {
            unreachable!()
        };
        Stats::add(&self.stats.markers_replaced, chunk.markers.len() as u64);
        entry.state = if chunk.markers.is_empty() {
            Pending::Ready(chunk.bytes.clone())
        } else {
            Pending::Replacing(self.pool.submit(Priority::High, move || chunk.materialize(&window)))
        };
    }

    fn take_consumed(&mut self, pos: usize) -> Result<Arc<FinalChunk>> {
        self.dispatch_replacement(pos);
        let entry = self.consumed.remove(pos).unwrap();
        let data = match entry.state {
            Pending::Ready(data) => data,
            Pending::Replacing(handle) => handle.wait()??,
            Pending::Raw { .. } => unreachable!(),
        };
        let ticket = MemoryTicket::new(&self.stats, data.len() as u64);
        Ok(Arc::new(FinalChunk {
            start: entry.start,
            data,
            _ticket: ticket,
        }))
    }

    /// Consumes chunks whose speculative results are already available and
    /// starts their marker replacement, so that sequential reads overlap
    /// replacement with consumption.
    fn consume_ready_ahead(&mut self) -> Result<()> {
        self.collect_finished();
        while self.consumed.len() < self.options.parallelism {
            let Some(frontier) = &self.frontier else {
                break;
            };
            let cell = frontier.key.offset / self.cell_bits();
            let ready = self.prefetched.iter().any(|(k, r)| {
                *k == TaskKey::Grid(cell)
                    && matches!(r, Ok(Some(c)) if c.key == frontier.key)
            });
            if !ready {
                break;
            }
            self.consume_next()?;
            let pos = self.consumed.len() - 1;
            self.dispatch_replacement(pos);
        }
        Ok(())
    }

    /// Seek point at or before `offset` within the consumed region.
    fn locate_point(&self, offset: u64) -> Result<usize> {
        let upper = match &self.frontier {
            Some(f) => f.decompressed,
            None => self.size().unwrap_or(0),
        };
        if offset >= upper {
            return Err(Error::NotIndexed { offset });
        }
        let points = self.index.points();
        Ok(points.partition_point(|p| p.decompressed_offset <= offset) - 1)
    }

    /// Compressed stop and decompressed end of the chunk starting at point
    /// `i`.
    fn indexed_range(&self, i: usize) -> Option<(u64, u64)> {
        let points = self.index.points();
        match points.get(i + 1) {
            Some(next) => Some((next.compressed_offset, next.decompressed_offset)),
            None => self.frontier.as_ref().map(|f| (f.header_offset, f.decompressed)),
        }
    }

    fn dispatch_indexed(&mut self, i: usize, priority: Priority) -> Option<TaskKey> {
        let (stop, end) = self.indexed_range(i)?;
        let point = &self.index.points()[i];
        if point.decompressed_offset >= end {
            return None;
        }
        let key = TaskKey::Indexed(i, end);
        if self.is_known(key) {
            return Some(key);
        }
        let source = self.source.clone();
        let chunk_key = if point.compressed_offset == 0 {
            ChunkKey::member(0)
        } else {
            ChunkKey::block(point.compressed_offset)
        };
        let window = point.window.clone();
        let expected = end - point.decompressed_offset;
        let imported = self.imported;
        let cap = self.cap.max(expected as usize);
        let stats = Arc::clone(&self.stats);
        let handle = self.pool.submit(priority, move || {
            Stats::add(&stats.indexed_decodes, 1);
            let result = decode_chunk(&source, chunk_key, Some(&window), StopPolicy::Exact(stop), cap, &stats)
                .and_then(|chunk| {
                    if chunk.len() as u64 == expected {
                        Ok(chunk)
                    } else {
                        Err(Error::IndexCorruption(format!(
                            "seek point at bit {} decodes to {} bytes, index expects {}",
                            chunk_key.offset,
                            chunk.len(),
                            expected
                        )))
                    }
                });
            match result {
                Ok(chunk) => Ok(Some(chunk)),
                Err(e) if imported => Err(Error::IndexMismatch {
                    bit_offset: chunk_key.offset,
                    source: Box::new(e),
                }),
                Err(e) => Err(e),
            }
        });
        self.in_flight.insert(key, handle);
        Some(key)
    }

    fn indexed_chunk(&mut self, i: usize) -> Result<Arc<FinalChunk>> {
        let key = self.dispatch_indexed(i, Priority::High).ok_or(Error::NotIndexed {
            offset: self.index.points()[i].decompressed_offset,
        })?;
        for j in self.index_strategy.plan(i) {
            if j >= self.index.len() || !self.budget_left() {
                break;
            }
            self.dispatch_indexed(j, Priority::Low);
        }
        let chunk = self.take_task(key).expect("task was dispatched")?.expect("indexed tasks produce a chunk");
        debug_assert!(chunk.markers.is_empty());
        let data = chunk.bytes.clone();
        let ticket = MemoryTicket::new(&self.stats, data.len() as u64);
        Ok(Arc::new(FinalChunk {
            start: self.index.points()[i].decompressed_offset,
            data,
            _ticket: ticket,
        }))
    }
}

/// Member offsets (in bits) of a BGZF file, found by following the block
/// sizes in the member headers. `None` if any member lacks one.
fn bgzf_members(source: &SharedSource) -> Option<Vec<u64>> {
    let size = source.size();
    let mut offset = 0u64;
    let mut members = Vec::new();
    while offset < size {
        let head = source.read_at(offset, 512).ok()?;
        if members.is_empty() || head[0] != 0 {
            let mut reader = BitReader::from_bytes(head);
            let header = parse_gzip_header(&mut reader).ok()?;
            members.push(offset * 8);
            offset += header.bgzf_block_size()? as u64 + 1;
        } else {
            // Trailing padding; validated while decoding.
            break;
        }
    }
    (offset <= size && !members.is_empty()).then_some(members)
}
