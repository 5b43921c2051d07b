use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Instrumentation counters shared by the fetcher and its tasks.
#[derive(Debug, Default)]
pub struct Stats {
    pub marker_buffers: AtomicU64,
    pub speculative_tasks: AtomicU64,
    pub speculative_hits: AtomicU64,
    pub speculative_misses: AtomicU64,
    pub exact_decodes: AtomicU64,
    pub indexed_decodes: AtomicU64,
    pub false_positives: AtomicU64,
    pub mode_switches: AtomicU64,
    pub stored_bytes: AtomicU64,
    pub chunk_decodes: AtomicU64,
    pub window_symbols_resolved: AtomicU64,
    pub markers_replaced: AtomicU64,
    pub live_bytes: AtomicU64,
    pub peak_bytes: AtomicU64,
}

/// Point-in-time copy of [`Stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    /// Two-stage buffers allocated.
    pub marker_buffers: u64,
    pub speculative_tasks: u64,
    /// Consumed chunks taken from a speculative result.
    pub speculative_hits: u64,
    /// Consumed chunks that had to be decoded again from a known window.
    pub speculative_misses: u64,
    pub exact_decodes: u64,
    pub indexed_decodes: u64,
    /// Candidates whose trial decode failed.
    pub false_positives: u64,
    /// Switches from two-stage to single-stage decoding inside a chunk.
    pub mode_switches: u64,
    /// Bytes copied from Non-Compressed blocks.
    pub stored_bytes: u64,
    /// Decode attempts that produced a chunk.
    pub chunk_decodes: u64,
    /// Symbols resolved sequentially to propagate windows.
    pub window_symbols_resolved: u64,
    /// Symbols passed through full marker replacement.
    pub markers_replaced: u64,
    /// Decoded chunk bytes currently held.
    pub live_bytes: u64,
    pub peak_bytes: u64,
}

impl Stats {
    pub fn add(counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        StatsSnapshot {
            marker_buffers: get(&self.marker_buffers),
            speculative_tasks: get(&self.speculative_tasks),
            speculative_hits: get(&self.speculative_hits),
            speculative_misses: get(&self.speculative_misses),
            exact_decodes: get(&self.exact_decodes),
            indexed_decodes: get(&self.indexed_decodes),
            false_positives: get(&self.false_positives),
            mode_switches: get(&self.mode_switches),
            stored_bytes: get(&self.stored_bytes),
            chunk_decodes: get(&self.chunk_decodes),
            window_symbols_resolved: get(&self.window_symbols_resolved),
            markers_replaced: get(&self.markers_replaced),
            live_bytes: get(&self.live_bytes),
            peak_bytes: get(&self.peak_bytes),
        }
    }
}

/// Accounts `bytes` of decoded data as live until dropped.
#[derive(Debug)]
pub struct MemoryTicket {
    stats: Arc<Stats>,
    bytes: u64,
}

impl MemoryTicket {
    pub fn new(stats: &Arc<Stats>, bytes: u64) -> Self {
        let live = stats.live_bytes.fetch_add(bytes, Ordering::Relaxed) + bytes;
        stats.peak_bytes.fetch_max(live, Ordering::Relaxed);
        Self {
            stats: Arc::clone(stats),
            bytes,
        }
    }
}

impl Drop for MemoryTicket {
    fn drop(&mut self) {
        self.stats.live_bytes.fetch_sub(self.bytes, Ordering::Relaxed);
    }
}
