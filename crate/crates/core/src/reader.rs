//! Seekable view of the decompressed stream.

use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use bytes::Bytes;

use crate::chunkfetcher::{ChunkData, ChunkFetcher, FetcherOptions, StatsSnapshot};
use crate::error::Result;
use crate::index::GzipIndex;
use crate::io::{SharedSource, DEFAULT_SPOOL_SEGMENT};

pub type ReaderOptions = FetcherOptions;

/// Decompressed gzip stream with `Read` and `Seek`.
///
/// Seeking only moves the position; decoding happens on the next read.
/// Cursors made with [`clone_cursor`](Self::clone_cursor) share one fetcher
/// and its caches.
pub struct ParallelGzipReader {
    fetcher: Arc<Mutex<ChunkFetcher>>,
    position: u64,
    current: Option<ChunkData>,
}

impl ParallelGzipReader {
    pub fn open(path: impl AsRef<Path>, options: ReaderOptions) -> Result<Self> {
        Self::from_source(SharedSource::open(path)?, options)
    }

    pub fn from_bytes(data: impl Into<Bytes>, options: ReaderOptions) -> Result<Self> {
        Self::from_source(SharedSource::from_bytes(data), options)
    }

    /// Spools a non-seekable stream into memory first.
    pub fn from_stream(stream: impl Read, options: ReaderOptions) -> Result<Self> {
        Self::from_source(SharedSource::spool(stream, DEFAULT_SPOOL_SEGMENT)?, options)
    }

    pub fn from_source(source: SharedSource, options: ReaderOptions) -> Result<Self> {
        Ok(Self::from_fetcher(ChunkFetcher::new(source, options)?))
    }

    pub fn with_index(source: SharedSource, options: ReaderOptions, index: GzipIndex) -> Result<Self> {
        Ok(Self::from_fetcher(ChunkFetcher::with_index(source, options, index)?))
    }

    fn from_fetcher(fetcher: ChunkFetcher) -> Self {
        Self {
            fetcher: Arc::new(Mutex::new(fetcher)),
            position: 0,
            current: None,
        }
    }

    fn fetcher(&self) -> MutexGuard<'_, ChunkFetcher> {
        self.fetcher.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// A second cursor at position 0 over the same fetcher.
    pub fn clone_cursor(&self) -> Self {
        Self {
            fetcher: Arc::clone(&self.fetcher),
            position: 0,
            current: None,
        }
    }

    pub fn tell(&self) -> u64 {
        self.position
    }

    /// Decompressed size, if already known.
    pub fn size(&self) -> Option<u64> {
        self.fetcher().size()
    }

    pub fn is_bgzf(&self) -> bool {
        self.fetcher().is_bgzf()
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.fetcher().stats()
    }

    /// Decodes the rest of the stream (discarding data) and returns the
    /// complete index.
    pub fn build_full_index(&mut self) -> Result<GzipIndex> {
        let mut fetcher = self.fetcher();
        Ok(fetcher.build_full_index()?.clone())
    }

    pub fn export_index(&mut self, sink: impl Write) -> Result<u64> {
        let mut fetcher = self.fetcher();
        fetcher.build_full_index()?.export(sink)
    }

    /// Replaces the fetcher with one that decodes from the imported index.
    /// The position is kept.
    pub fn import_index(&mut self, source: impl Read) -> Result<()> {
        let index = GzipIndex::import(source)?;
        let (input, options) = {
            let fetcher = self.fetcher();
            (fetcher.source().clone(), fetcher.options().clone())
        };
        self.fetcher = Arc::new(Mutex::new(ChunkFetcher::with_index(input, options, index)?));
        self.current = None;
        Ok(())
    }

    /// Returns the decompressed bytes from the current position to the end
    /// of the containing chunk, at most `max`, and advances past them.
    /// Returns an empty buffer at the end of the stream.
    pub fn read_chunk(&mut self, max: usize) -> Result<Bytes> {
        let chunk = match &self.current {
            Some(c) if self.position >= c.start && self.position < c.end() => c,
            _ => {
                let found = self.fetcher().chunk_at(self.position)?;
                match found {
                    Some(c) => self.current.insert(c),
                    None => return Ok(Bytes::new()),
                }
            }
        };
        let from = (self.position - chunk.start) as usize;
        let to = chunk.data.len().min(from.saturating_add(max));
        let out = chunk.data.slice(from..to);
        self.position += out.len() as u64;
        Ok(out)
    }
}

impl Read for ParallelGzipReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let mut filled = 0;
        while filled < buf.len() {
            let part = self.read_chunk(buf.len() - filled)?;
            if part.is_empty() {
                break;
            }
            buf[filled..filled + part.len()].copy_from_slice(&part);
            filled += part.len();
        }
        Ok(filled)
    }
}

impl Seek for ParallelGzipReader {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let target = match pos {
            SeekFrom::Start(n) => Some(n),
            SeekFrom::Current(d) => self.position.checked_add_signed(d),
            SeekFrom::End(d) => {
                let size = match self.size() {
                    Some(size) => size,
                    None => self.build_full_index()?.total_decompressed().unwrap_or(0),
                };
                size.checked_add_signed(d)
            }
        };
        self.position = target.ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidInput, "seek to a negative position")
        })?;
        Ok(self.position)
    }
}
