//! Parallel chunk decoding and caching.

mod decode;
mod fetcher;
mod prefetch;
mod stats;

pub use decode::{
    decode_chunk, speculative_decode, Boundary, ChunkEnd, ChunkKey, DecodedChunk, MemberEnd,
    SpeculativeJob, StartKind, StopPolicy,
};
pub use prefetch::PrefetchStrategy;
pub use stats::{MemoryTicket, Stats, StatsSnapshot};
pub use fetcher::{ChunkData, ChunkFetcher, FetcherOptions, DEFAULT_CHUNK_SIZE};
