use std::io;

use thiserror::Error;

use crate::huffman::CodeClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Format violations found while decoding a Deflate stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DeflateError {
    #[error("reserved block type 3")]
    ReservedBlockType,
    #[error("stored block length {len:#06x} does not match its complement {nlen:#06x}")]
    LengthMismatch { len: u16, nlen: u16 },
    #[error("literal/length code count field holds {raw} (must be below 30)")]
    InvalidHlit { raw: u8 },
    #[error("too many distance codes ({count})")]
    InvalidHdist { count: u16 },
    #[error("precode is {0}")]
    InvalidPrecode(CodeClass),
    #[error("code length repeat reaches past the end of the code length list or has nothing to repeat")]
    InvalidCodeLengthRepeat,
    #[error("distance code is {0}")]
    InvalidDistanceCode(CodeClass),
    #[error("literal/length code is {0}")]
    InvalidLiteralCode(CodeClass),
    #[error("literal/length code has no end-of-block symbol")]
    MissingEndOfBlock,
    #[error("bit pattern does not map to any symbol")]
    InvalidSymbol,
    #[error("invalid length symbol {0}")]
    InvalidLengthSymbol(u16),
    #[error("invalid distance symbol {0}")]
    InvalidDistanceSymbol(u16),
    #[error("back-reference distance {distance} exceeds the {available} bytes of available history")]
    DistanceTooFar { distance: u32, available: u64 },
}

/// Malformed index files.
#[derive(Debug, Error)]
pub enum IndexFormatError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported index flags {0:#06x}")]
    UnsupportedFlags(u16),
    #[error("index file is truncated")]
    Truncated,
    #[error("index checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("inconsistent index structure: {0}")]
    Structure(&'static str),
    #[error("trailing bytes after the last seek point")]
    TrailingBytes,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },
    #[error("unexpected end of input at bit offset {bit_offset}")]
    Truncated { bit_offset: u64 },
    #[error("bit offset {offset} lies beyond the end of the input ({size_bits} bits)")]
    SeekOutOfRange { offset: u64, size_bits: u64 },
    #[error("not a gzip stream at byte offset {byte_offset}")]
    NotGzip { byte_offset: u64 },
    #[error("unsupported gzip compression method {method} at byte offset {byte_offset}")]
    UnsupportedMethod { method: u8, byte_offset: u64 },
    #[error("corrupt deflate data at bit offset {bit_offset}: {kind}")]
    Deflate { bit_offset: u64, kind: DeflateError },
    #[error("gzip size mismatch for member ending at bit offset {bit_offset}: footer says {expected}, decoded {actual} (mod 2^32)")]
    SizeMismatch {
        bit_offset: u64,
        expected: u32,
        actual: u32,
    },
    #[error("gzip CRC32 mismatch for member ending at bit offset {bit_offset}: footer says {expected:#010x}, computed {actual:#010x}")]
    CrcMismatch {
        bit_offset: u64,
        expected: u32,
        actual: u32,
    },
    #[error("unexpected trailing data at byte offset {byte_offset}")]
    TrailingGarbage { byte_offset: u64 },
    #[error("chunk starting at bit offset {bit_offset} decompresses to more than {limit} bytes")]
    ChunkTooLarge { bit_offset: u64, limit: u64 },
    #[error("invalid index file: {0}")]
    IndexFormat(#[from] IndexFormatError),
    #[error("seek point ordering violated: {0}")]
    IndexCorruption(String),
    #[error("index does not match the input: decoding failed at indexed bit offset {bit_offset}: {source}")]
    IndexMismatch {
        bit_offset: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("offset {offset} is beyond the indexed data")]
    NotIndexed { offset: u64 },
    #[error("worker task failed: {0}")]
    TaskFailed(String),
    #[error("corrupted intermediate buffer: symbol {symbol} at index {index}")]
    InvalidMarkerSymbol { symbol: u16, index: usize },
}

impl Error {
    pub(crate) fn deflate(bit_offset: u64, kind: DeflateError) -> Self {
        Error::Deflate { bit_offset, kind }
    }

    /// Compressed bit offset the error refers to, when it has one.
    pub fn bit_offset(&self) -> Option<u64> {
        match self {
            Error::Truncated { bit_offset }
            | Error::Deflate { bit_offset, .. }
            | Error::SizeMismatch { bit_offset, .. }
            | Error::CrcMismatch { bit_offset, .. }
            | Error::ChunkTooLarge { bit_offset, .. }
            | Error::IndexMismatch { bit_offset, .. } => Some(*bit_offset),
            Error::Io { offset, .. } => Some(offset * 8),
            Error::NotGzip { byte_offset }
            | Error::UnsupportedMethod { byte_offset, .. }
            | Error::TrailingGarbage { byte_offset } => Some(byte_offset * 8),
            _ => None,
        }
    }
}

impl From<Error> for io::Error {
    fn from(err: Error) -> Self {
        match err {
            Error::Io { source, .. } => source,
            Error::Truncated { .. } => io::Error::new(io::ErrorKind::UnexpectedEof, err),
            other => io::Error::new(io::ErrorKind::InvalidData, other),
        }
    }
}
