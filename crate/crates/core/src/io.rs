//! Positional, thread-safe access to the compressed input.
//!
//! Every decoding task reads the input through its own cursor, so the source
//! only ever answers "give me `n` bytes at offset `o`". Regular files use
//! positional reads, memory buffers hand out zero-copy slices, and
//! non-seekable streams are spooled into fixed-size segments first.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;
use std::sync::Arc;

use bytes::{Bytes, BytesMut};

use crate::error::{Error, Result};

/// Segment size used when spooling non-seekable input.
pub const DEFAULT_SPOOL_SEGMENT: usize = 4 << 20;

enum Backing {
    File(FileBacking),
    Memory(Bytes),
    Spooled { segments: Vec<Bytes>, segment_size: usize, size: u64 },
}

struct FileBacking {
    #[cfg(unix)]
    file: File,
    #[cfg(not(unix))]
    file: std::sync::Mutex<File>,
    size: u64,
}

impl FileBacking {
    #[cfg(unix)]
    fn read_at(&self, buf: &mut [u8], offset: u64) -> io::Result<usize> {
        std::os::unix::fs::FileExt::read_at(&self.file, buf, offset)
    }

    #[cfg(not(unix))]
    fn read_at(&self, buf: &mut [u8], offset: u64) -> io::Result<usize> {
        use std::io::{Seek, SeekFrom};
        let mut file = self.file.lock().unwrap();
        file.seek(SeekFrom::Start(offset))?;
        file.read(buf)
    }
}

/// Immutable byte source shared by all decoding threads.
///
/// Cloning is cheap; all clones refer to the same backing storage.
#[derive(Clone)]
pub struct SharedSource {
    backing: Arc<Backing>,
}

impl std::fmt::Debug for SharedSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &*self.backing {
            Backing::File(_) => "file",
            Backing::Memory(_) => "memory",
            Backing::Spooled { .. } => "spooled",
        };
        f.debug_struct("SharedSource")
            .field("kind", &kind)
            .field("size", &self.size())
            .finish()
    }
}

impl SharedSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let io_err = |source| Error::Io { offset: 0, source };
        let file = File::open(path).map_err(io_err)?;
        let size = file.metadata().map_err(io_err)?.len();
        #[cfg(not(unix))]
        let file = std::sync::Mutex::new(file);
        Ok(Self {
            backing: Arc::new(Backing::File(FileBacking { file, size })),
        })
    }

    pub fn from_bytes(data: impl Into<Bytes>) -> Self {
        Self {
            backing: Arc::new(Backing::Memory(data.into())),
        }
    }

    /// Reads `reader` to its end, storing it in segments of `segment_size`
    /// bytes so that it can be accessed at arbitrary offsets afterwards.
    pub fn spool(mut reader: impl Read, segment_size: usize) -> Result<Self> {
        assert!(segment_size > 0, "segment size must be positive");
        let mut segments = Vec::new();
        let mut size = 0u64;
        loop {
            let mut segment = BytesMut::zeroed(segment_size);
            let mut filled = 0;
            while filled < segment_size {
                match reader.read(&mut segment[filled..]) {
                    Ok(0) => break,
                    Ok(n) => filled += n,
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(source) => {
                        return Err(Error::Io {
                            offset: size + filled as u64,
                            source,
                        })
                    }
                }
            }
            size += filled as u64;
            if filled > 0 {
                segment.truncate(filled);
                segments.push(segment.freeze());
            }
            if filled < segment_size {
                break;
            }
        }
        Ok(Self {
            backing: Arc::new(Backing::Spooled {
                segments,
                segment_size,
                size,
            }),
        })
    }

    /// Total number of bytes in the source.
    pub fn size(&self) -> u64 {
        match &*self.backing {
            Backing::File(f) => f.size,
            Backing::Memory(data) => data.len() as u64,
            Backing::Spooled { size, .. } => *size,
        }
    }

    pub fn size_bits(&self) -> u64 {
        self.size() * 8
    }

    /// Returns `min(length, size - offset)` bytes starting at `offset`.
    ///
    /// An empty result means the offset is at (or past) the end of the data.
    /// Memory-backed sources return slices without copying.
    pub fn read_at(&self, offset: u64, length: usize) -> Result<Bytes> {
        let size = self.size();
        if offset >= size || length == 0 {
            return Ok(Bytes::new());
        }
        let length = length.min((size - offset) as usize);
        match &*self.backing {
            Backing::Memory(data) => {
                let start = offset as usize;
                Ok(data.slice(start..start + length))
            }
            Backing::Spooled {
                segments,
                segment_size,
                ..
            } => {
                let index = (offset / *segment_size as u64) as usize;
                let within = (offset % *segment_size as u64) as usize;
                if within + length <= segments[index].len() {
                    return Ok(segments[index].slice(within..within + length));
                }
                let mut buf = vec![0u8; length];
                self.read_into(offset, &mut buf)?;
                Ok(buf.into())
            }
            Backing::File(_) => {
                let mut buf = vec![0u8; length];
                let n = self.read_into(offset, &mut buf)?;
                buf.truncate(n);
                Ok(buf.into())
            }
        }
    }

    /// Fills as much of `buf` as the source allows, starting at `offset`.
    /// Only returns fewer bytes than requested at the end of the data.
    pub fn read_into(&self, offset: u64, buf: &mut [u8]) -> Result<usize> {
        let size = self.size();
        if offset >= size {
            return Ok(0);
        }
        let wanted = buf.len().min((size - offset) as usize);
        let buf = &mut buf[..wanted];
        match &*self.backing {
            Backing::Memory(data) => {
                let start = offset as usize;
                buf.copy_from_slice(&data[start..start + wanted]);
            }
            Backing::Spooled {
                segments,
                segment_size,
                ..
            } => {
                let mut done = 0;
                while done < wanted {
                    let pos = offset + done as u64;
                    let segment = &segments[(pos / *segment_size as u64) as usize];
                    let within = (pos % *segment_size as u64) as usize;
                    let n = (segment.len() - within).min(wanted - done);
                    buf[done..done + n].copy_from_slice(&segment[within..within + n]);
                    done += n;
                }
            }
            Backing::File(file) => {
                let mut done = 0;
                while done < wanted {
                    let pos = offset + done as u64;
                    match file.read_at(&mut buf[done..], pos) {
                        Ok(0) => break,
                        Ok(n) => done += n,
                        Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                        Err(source) => return Err(Error::Io { offset: pos, source }),
                    }
                }
                return Ok(done);
            }
        }
        Ok(wanted)
    }

    pub fn is_in_memory(&self) -> bool {
        !matches!(&*self.backing, Backing::File(_))
    }

    /// True when `read_at` over the whole source is a zero-copy slice.
    pub fn is_contiguous(&self) -> bool {
        matches!(&*self.backing, Backing::Memory(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn sample(len: usize) -> Vec<u8> {
        (0..len).map(|i| (i * 7 + i / 251) as u8).collect()
    }

    #[test]
    fn memory_read_at() {
        let src = SharedSource::from_bytes(&b"abcdef"[..]);
        assert_eq!(&src.read_at(2, 3).unwrap()[..], b"cde");
        assert!(src.read_at(6, 10).unwrap().is_empty());
        assert_eq!(&src.read_at(4, 10).unwrap()[..], b"ef");
        assert_eq!(src.size(), 6);
    }

    #[test]
    fn sizes() {
        assert_eq!(SharedSource::from_bytes(vec![0u8; 1024]).size(), 1024);
        let file = tempfile_with(&[]);
        assert_eq!(SharedSource::open(file.path()).unwrap().size(), 0);
        let data = sample(3 << 20);
        let spooled = SharedSource::spool(&data[..], 1 << 20).unwrap();
        assert_eq!(spooled.size(), 3_145_728);
    }

    #[test]
    fn spooled_reads_span_segments() {
        let data = sample(10_000);
        let src = SharedSource::spool(&data[..], 1000).unwrap();
        assert_eq!(src.size(), 10_000);
        assert_eq!(&src.read_at(990, 30).unwrap()[..], &data[990..1020]);
        assert_eq!(&src.read_at(9_990, 30).unwrap()[..], &data[9_990..]);
        let mut buf = vec![0u8; 2500];
        assert_eq!(src.read_into(1500, &mut buf).unwrap(), 2500);
        assert_eq!(&buf[..], &data[1500..4000]);
    }

    struct TempFile(std::path::PathBuf);
    impl TempFile {
        fn path(&self) -> &Path {
            &self.0
        }
    }
    impl Drop for TempFile {
        fn drop(&mut self) {
            let _ = std::fs::remove_file(&self.0);
        }
    }

    fn tempfile_with(data: &[u8]) -> TempFile {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let path = std::env::temp_dir().join(format!(
            "gzpar-io-{}-{}",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::File::create(&path).unwrap().write_all(data).unwrap();
        TempFile(path)
    }

    #[test]
    fn concurrent_strided_reads_reassemble_file() {
        const STRIDE: usize = 128 << 10;
        let data = sample(8 * STRIDE * 3 + 1234);
        let file = tempfile_with(&data);
        let src = SharedSource::open(file.path()).unwrap();
        let strides = data.len().div_ceil(STRIDE);
        let mut parts: Vec<(usize, Bytes)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..8)
                .map(|t| {
                    let src = src.clone();
                    scope.spawn(move || {
                        (t..strides)
                            .step_by(8)
                            .map(|i| (i, src.read_at((i * STRIDE) as u64, STRIDE).unwrap()))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap())
                .collect()
        });
        parts.sort_by_key(|(i, _)| *i);
        let joined: Vec<u8> = parts.into_iter().flat_map(|(_, b)| b.to_vec()).collect();
        assert_eq!(joined, data);
    }
}
