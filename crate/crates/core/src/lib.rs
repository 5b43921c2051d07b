pub mod bitstream;
pub mod chunkfetcher;
pub mod blockfinder;
pub mod error;
pub mod huffman;
pub mod index;
pub mod inflate;
pub mod io;
pub mod pool;
pub mod reader;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use chunkfetcher::{FetcherOptions, StatsSnapshot};
pub use index::GzipIndex;
pub use reader::{ParallelGzipReader, ReaderOptions};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/deflate.md")]
    mod deflate {}
    #[doc = include_str!("../../../book/src/two-stage.md")]
    mod two_stage {}
    #[doc = include_str!("../../../book/src/block-finder.md")]
    mod block_finder {}
    #[doc = include_str!("../../../book/src/chunks.md")]
    mod chunks {}
    #[doc = include_str!("../../../book/src/index.md")]
    mod index {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
