// Corpus generators and reference helpers shared by the integration tests.
#![allow(dead_code)]

#[path = "../../src/test_support.rs"]
pub mod support;

use std::io::{Read, Write};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KIB: usize = 1 << 10;
pub const MIB: usize = 1 << 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut out = vec![0u8; len];
    rng(seed).fill_bytes(&mut out);
    out
}

/// Base64 text of random bytes, in 76-column lines.
pub fn base64_text(len: usize, seed: u64) -> Vec<u8> {
    const ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        if out.len() % 77 == 76 {
            out.push(b'\n');
        } else {
            out.push(ALPHABET[r.gen_range(0..64)]);
        }
    }
    out
}

pub fn repetitive_text(len: usize) -> Vec<u8> {
    let line = b"the quick brown fox jumps over the lazy dog; ";
    let mut out = Vec::with_capacity(len);
    let mut i = 0u64;
    while out.len() < len {
        out.extend_from_slice(line);
        out.extend_from_slice(format!("{}\n", i % 97).as_bytes());
        i += 1;
    }
    out.truncate(len);
    out
}

/// Words drawn from a small vocabulary; compresses to roughly 1/3.
pub fn word_text(len: usize, seed: u64) -> Vec<u8> {
    const WORDS: [&str; 24] = [
        "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india",
        "juliet", "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo",
        "sierra", "tango", "uniform", "victor", "whiskey", "xray",
    ];
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(len + 16);
    while out.len() < len {
        out.extend_from_slice(WORDS[r.gen_range(0..WORDS.len())].as_bytes());
        out.push(if r.gen_ratio(1, 12) { b'\n' } else { b' ' });
        if r.gen_ratio(1, 20) {
            out.extend_from_slice(format!("{} ", r.gen::<u32>()).as_bytes());
        }
    }
    out.truncate(len);
    out
}

/// Tar-like archive: 512-byte headers followed by text, binary and
/// zero-padded member contents.
pub fn tarball(len: usize, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(len + 1024);
    let mut n = 0;
    while out.len() < len {
        let size = r.gen_range(1..256 * KIB);
        let mut header = [0u8; 512];
        let name = format!("dir/file-{n:05}.dat");
        header[..name.len()].copy_from_slice(name.as_bytes());
        header[100..107].copy_from_slice(b"0000644");
        let size_field = format!("{size:011o}");
        header[124..135].copy_from_slice(size_field.as_bytes());
        header[257..262].copy_from_slice(b"ustar");
        out.extend_from_slice(&header);
        let body = match n % 3 {
            0 => word_text(size, seed + n as u64),
            1 => random_bytes(size, seed + n as u64),
            _ => repetitive_text(size),
        };
        out.extend_from_slice(&body);
        out.resize(out.len().next_multiple_of(512), 0);
        n += 1;
    }
    out.extend_from_slice(&[0u8; 1024]);
    out
}

pub fn gzip(data: &[u8], level: u32) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::new(level));
    e.write_all(data).unwrap();
    e.finish().unwrap()
}

/// Reference decompression of all members.
pub fn gunzip(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    MultiGzDecoder::new(data).read_to_end(&mut out).unwrap();
    out
}

/// Gzip file made of Fixed blocks only.
pub fn gzip_fixed(data: &[u8]) -> Vec<u8> {
    support::gzip_member(&support::deflate_fixed(data, 4096), data)
}

/// Gzip file with one Dynamic block covering all data.
pub fn gzip_single_dynamic(data: &[u8]) -> Vec<u8> {
    support::gzip_member(&support::deflate_dynamic(data, usize::MAX).0, data)
}

/// Gzip file of Non-Compressed blocks of `block` bytes.
pub fn gzip_stored(data: &[u8], block: usize) -> Vec<u8> {
    support::gzip_member(&support::deflate_stored(data, block), data)
}

pub fn bgzf(data: &[u8]) -> Vec<u8> {
    support::bgzf_file(data, 60 * KIB, |chunk| {
        let mut e = flate2::write::DeflateEncoder::new(Vec::new(), Compression::new(6));
        e.write_all(chunk).unwrap();
        e.finish().unwrap()
    })
}

pub struct CorpusFile {
    pub name: &'static str,
    pub gz: Vec<u8>,
    pub data: Vec<u8>,
}

fn entry(name: &'static str, gz: Vec<u8>) -> CorpusFile {
    let data = gunzip(&gz);
    CorpusFile { name, gz, data }
}

/// The round-trip corpus. `scale` multiplies the sizes of the large inputs.
pub fn corpus(scale: usize) -> Vec<CorpusFile> {
    let mut multi = gzip(&word_text(3 * MIB * scale / 2, 11), 6);
    multi.extend(gzip(b"", 6));
    multi.extend(gzip(&random_bytes(700 * KIB, 12), 1));
    multi.extend(gzip(&repetitive_text(2 * MIB), 9));
    let inner = gzip(&word_text(4 * MIB * scale, 13), 6);
    vec![
        entry("random", gzip(&random_bytes(5 * MIB * scale, 1), 6)),
        entry("base64", gzip(&base64_text(8 * MIB * scale, 2), 6)),
        entry("repetitive", gzip(&repetitive_text(16 * MIB * scale), 6)),
        entry("tarball", gzip(&tarball(8 * MIB * scale, 3), 6)),
        entry("empty", gzip(b"", 6)),
        entry("one-byte", gzip(b"x", 6)),
        entry("multi-member", multi),
        entry("bgzf", bgzf(&word_text(6 * MIB * scale, 4))),
        entry("single-dynamic", gzip_single_dynamic(&word_text(3 * MIB * scale, 5))),
        entry("fixed-only", gzip_fixed(&word_text(300 * KIB, 6))),
        entry("zeros", gzip(&vec![0u8; 24 * MIB], 6)),
        entry("gzip-of-gzip", gzip(&inner, 0)),
        entry("stored-level0", gzip(&word_text(3 * MIB * scale, 7), 0)),
        entry("fast-level1", gzip(&base64_text(4 * MIB * scale, 8), 1)),
    ]
}

/// Gzip file of Non-Compressed blocks of 32 KiB, so block boundaries fall
/// on exact multiples of 32 KiB.
pub fn stored_blocks_file(len: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let data = random_bytes(len, seed);
    (gzip_stored(&data, 32 * KIB), data)
}

pub fn options(parallelism: usize, chunk_size: usize) -> gzpar::FetcherOptions {
    gzpar::FetcherOptions {
        parallelism,
        chunk_size,
        ..Default::default()
    }
}

pub fn read_all(gz: &[u8], options: gzpar::FetcherOptions) -> gzpar::Result<(Vec<u8>, gzpar::StatsSnapshot)> {
    use std::io::Read;
    let mut reader = gzpar::ParallelGzipReader::from_bytes(gz.to_vec(), options)?;
    let mut out = Vec::new();
    reader.read_to_end(&mut out).map_err(unwrap_io)?;
    Ok((out, reader.stats()))
}

/// Recovers the decoder error carried by an `io::Error` from `Read`.
pub fn unwrap_io(e: std::io::Error) -> gzpar::Error {
    match e.get_ref().and_then(|inner| inner.downcast_ref::<gzpar::Error>()) {
        Some(_) => *e.into_inner().unwrap().downcast::<gzpar::Error>().unwrap(),
        None => gzpar::Error::Io { offset: 0, source: e },
    }
}
