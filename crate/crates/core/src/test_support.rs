// Small Deflate/gzip writers for building test inputs with known structure.
// Shared by unit tests and (via `#[path]`) by the integration tests, so it
// only depends on std and crc32fast.
#![allow(dead_code)]

use std::collections::HashMap;

pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl Default for BitWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl BitWriter {
    pub fn new() -> Self {
        Self {
            bytes: Vec::new(),
            acc: 0,
            nbits: 0,
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bytes.len() as u64 * 8 + self.nbits as u64
    }

    /// Appends the low `n` bits of `value`, least-significant first.
    pub fn write(&mut self, value: u32, n: u32) {
        debug_assert!(n <= 32);
        if n == 0 {
            return;
        }
        self.acc |= ((value as u64) & ((1u64 << n) - 1)) << self.nbits;
        self.nbits += n;
        while self.nbits >= 8 {
            self.bytes.push(self.acc as u8);
            self.acc >>= 8;
            self.nbits -= 8;
        }
    }

    /// Appends a Huffman code word, most-significant bit first.
    pub fn write_code(&mut self, code: u32, length: u32) {
        let reversed = code.reverse_bits() >> (32 - length);
        self.write(reversed, length);
    }

    pub fn align(&mut self) {
        if self.nbits > 0 {
            self.write(0, 8 - self.nbits);
        }
    }

    pub fn write_bytes(&mut self, data: &[u8]) {
        assert_eq!(self.nbits, 0);
        self.bytes.extend_from_slice(data);
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.align();
        self.bytes
    }
}

pub fn canonical_codes(lengths: &[u8]) -> Vec<u32> {
    let mut bl_count = [0u32; 16];
    for &l in lengths {
        bl_count[l as usize] += 1;
    }
    bl_count[0] = 0;
    let mut next = [0u32; 16];
    let mut code = 0;
    for bits in 1..16 {
        code = (code + bl_count[bits - 1]) << 1;
        next[bits] = code;
    }
    lengths
        .iter()
        .map(|&l| {
            if l == 0 {
                0
            } else {
                let c = next[l as usize];
                next[l as usize] += 1;
                c
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Literal(u8),
    Match { length: u16, distance: u16 },
}

const LEN_BASE: [u16; 29] = [
    3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31, 35, 43, 51, 59, 67, 83, 99, 115, 131,
    163, 195, 227, 258,
];
const LEN_EXTRA: [u32; 29] = [
    0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0,
];
const DIST_BASE: [u16; 30] = [
    1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193, 257, 385, 513, 769, 1025, 1537,
    2049, 3073, 4097, 6145, 8193, 12289, 16385, 24577,
];
const DIST_EXTRA: [u32; 30] = [
    0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13,
    13,
];

fn length_symbol(length: u16) -> (usize, u32, u32) {
    let i = LEN_BASE.iter().rposition(|&b| b <= length).unwrap();
    let i = if length == 258 { 28 } else { i.min(27) };
    (257 + i, (length - LEN_BASE[i]) as u32, LEN_EXTRA[i])
}

fn distance_symbol(distance: u16) -> (usize, u32, u32) {
    let i = DIST_BASE.iter().rposition(|&b| b <= distance).unwrap();
    (i, (distance - DIST_BASE[i]) as u32, DIST_EXTRA[i])
}

/// Greedy LZ77 with a single-entry hash table. `history` bytes precede
/// `data` and may be referenced but are not emitted.
pub fn lz77(data: &[u8], max_distance: usize) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut last: HashMap<[u8; 3], usize> = HashMap::new();
    let mut i = 0;
    while i < data.len() {
        let mut best = (0usize, 0usize);
        if i + 3 <= data.len() {
            let key = [data[i], data[i + 1], data[i + 2]];
            if let Some(&j) = last.get(&key) {
                let distance = i - j;
                if distance <= max_distance {
                    let mut len = 0;
                    while len < 258 && i + len < data.len() && data[j + len] == data[i + len] {
                        len += 1;
                    }
                    if len >= 3 {
                        best = (len, distance);
                    }
                }
            }
            last.insert(key, i);
        }
        if best.0 >= 3 {
            tokens.push(Token::Match {
                length: best.0 as u16,
                distance: best.1 as u16,
            });
            for k in i + 1..(i + best.0).min(data.len().saturating_sub(2)) {
                last.insert([data[k], data[k + 1], data[k + 2]], k);
            }
            i += best.0;
        } else {
            tokens.push(Token::Literal(data[i]));
            i += 1;
        }
    }
    tokens
}

pub fn fixed_literal_lengths() -> Vec<u8> {
    let mut l = vec![8u8; 288];
    l[144..256].fill(9);
    l[256..280].fill(7);
    l
}

fn write_tokens(
    w: &mut BitWriter,
    tokens: &[Token],
    lit_lengths: &[u8],
    lit_codes: &[u32],
    dist_lengths: &[u8],
    dist_codes: &[u32],
) {
    for t in tokens {
        match *t {
            Token::Literal(b) => w.write_code(lit_codes[b as usize], lit_lengths[b as usize] as u32),
            Token::Match { length, distance } => {
                let (s, extra, nextra) = length_symbol(length);
                w.write_code(lit_codes[s], lit_lengths[s] as u32);
                w.write(extra, nextra);
                let (d, extra, nextra) = distance_symbol(distance);
                w.write_code(dist_codes[d], dist_lengths[d] as u32);
                w.write(extra, nextra);
            }
        }
    }
    w.write_code(lit_codes[256], lit_lengths[256] as u32);
}

pub fn write_fixed_block(w: &mut BitWriter, tokens: &[Token], last: bool) {
    w.write(last as u32, 1);
    w.write(1, 2);
    let lit = fixed_literal_lengths();
    let dist = vec![5u8; 30];
    write_tokens(
        w,
        tokens,
        &lit,
        &canonical_codes(&lit),
        &dist,
        &canonical_codes(&dist),
    );
}

/// Literal/length code with 226 eight-bit and 60 nine-bit words (complete).
pub fn flat_literal_lengths() -> Vec<u8> {
    let mut l = vec![8u8; 286];
    l[226..].fill(9);
    l
}

/// Distance code with two four-bit and 28 five-bit words (complete).
pub fn flat_distance_lengths() -> Vec<u8> {
    let mut l = vec![5u8; 30];
    l[..2].fill(4);
    l
}

const PRECODE_ORDER: [usize; 19] = [16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15];

/// Writes a Dynamic block whose code lengths are given explicitly. Runs of
/// equal lengths are written with repeat codes.
pub fn write_dynamic_block(
    w: &mut BitWriter,
    tokens: &[Token],
    lit_lengths: &[u8],
    dist_lengths: &[u8],
    last: bool,
) {
    // Precode: symbols 16/17/18 and every length value in use.
    let mut used = [false; 19];
    used[16] = true;
    used[17] = true;
    used[18] = true;
    for &l in lit_lengths.iter().chain(dist_lengths) {
        used[l as usize] = true;
    }
    let symbols: Vec<usize> = (0..19).filter(|&s| used[s]).collect();
    let precode_lengths = complete_code_lengths(symbols.len(), 7);
    let mut pre = [0u8; 19];
    for (s, l) in symbols.iter().zip(precode_lengths) {
        pre[*s] = l;
    }
    let pre_codes = canonical_codes(&pre);
    let hclen = PRECODE_ORDER
        .iter()
        .rposition(|&s| pre[s] != 0)
        .unwrap()
        .max(3)
        + 1;

    w.write(last as u32, 1);
    w.write(2, 2);
    w.write((lit_lengths.len() - 257) as u32, 5);
    w.write((dist_lengths.len() - 1) as u32, 5);
    w.write((hclen - 4) as u32, 4);
    for &s in &PRECODE_ORDER[..hclen] {
        w.write(pre[s] as u32, 3);
    }
    let all: Vec<u8> = lit_lengths.iter().chain(dist_lengths).copied().collect();
    let emit = |w: &mut BitWriter, s: usize| w.write_code(pre_codes[s], pre[s] as u32);
    let mut i = 0;
    while i < all.len() {
        let v = all[i];
        let mut run = 1;
        while i + run < all.len() && all[i + run] == v {
            run += 1;
        }
        if v == 0 && run >= 11 {
            let n = run.min(138);
            emit(w, 18);
            w.write((n - 11) as u32, 7);
            i += n;
        } else if v == 0 && run >= 3 {
            let n = run.min(10);
            emit(w, 17);
            w.write((n - 3) as u32, 3);
            i += n;
        } else if i > 0 && all[i - 1] == v && run >= 3 {
            let n = run.min(6);
            emit(w, 16);
            w.write((n - 3) as u32, 2);
            i += n;
        } else {
            emit(w, v as usize);
            i += 1;
        }
    }
    write_tokens(
        w,
        tokens,
        lit_lengths,
        &canonical_codes(lit_lengths),
        dist_lengths,
        &canonical_codes(dist_lengths),
    );
}

/// Lengths of a complete code over `n >= 2` symbols with lengths <= `max`.
pub fn complete_code_lengths(n: usize, max: u8) -> Vec<u8> {
    assert!(n >= 2 && n <= 1 << max);
    let depth = (usize::BITS - (n - 1).leading_zeros()) as u8;
    // `long` words at `depth` and the rest at `depth - 1`.
    let long = 2 * n - (1 << depth);
    let mut v = vec![depth - 1; n - long];
    v.extend(std::iter::repeat(depth).take(long));
    v
}

pub fn write_stored_block(w: &mut BitWriter, data: &[u8], last: bool) {
    assert!(data.len() <= 0xFFFF);
    w.write(last as u32, 1);
    w.write(0, 2);
    w.align();
    let len = data.len() as u16;
    w.write(len as u32, 16);
    w.write(!len as u32, 16);
    w.write_bytes(data);
}

/// Raw Deflate stream of `data` made of Fixed blocks of `block_tokens`
/// tokens each.
pub fn deflate_fixed(data: &[u8], block_tokens: usize) -> Vec<u8> {
    let tokens = lz77(data, 32768);
    let mut w = BitWriter::new();
    if tokens.is_empty() {
        write_fixed_block(&mut w, &[], true);
    }
    let n = tokens.chunks(block_tokens).count();
    for (i, part) in tokens.chunks(block_tokens).enumerate() {
        write_fixed_block(&mut w, part, i + 1 == n);
    }
    w.finish()
}

/// Raw Deflate stream of Dynamic blocks with flat codes, `block_tokens`
/// tokens per block (`usize::MAX` for a single block). Returns the stream
/// and the bit offset of every block.
pub fn deflate_dynamic(data: &[u8], block_tokens: usize) -> (Vec<u8>, Vec<u64>) {
    let tokens = lz77(data, 32768);
    let lit = flat_literal_lengths();
    let dist = flat_distance_lengths();
    let mut w = BitWriter::new();
    let mut offsets = Vec::new();
    if tokens.is_empty() {
        offsets.push(0);
        write_dynamic_block(&mut w, &[], &lit, &dist, true);
    }
    let n = tokens.chunks(block_tokens).count();
    for (i, part) in tokens.chunks(block_tokens).enumerate() {
        offsets.push(w.bit_len());
        write_dynamic_block(&mut w, part, &lit, &dist, i + 1 == n);
    }
    (w.finish(), offsets)
}

/// Raw Deflate stream of stored blocks of at most `block_size` bytes.
pub fn deflate_stored(data: &[u8], block_size: usize) -> Vec<u8> {
    let mut w = BitWriter::new();
    if data.is_empty() {
        write_stored_block(&mut w, &[], true);
    }
    let n = data.chunks(block_size).count();
    for (i, part) in data.chunks(block_size).enumerate() {
        write_stored_block(&mut w, part, i + 1 == n);
    }
    w.finish()
}

pub const MINIMAL_GZIP_HEADER: [u8; 10] = [0x1F, 0x8B, 8, 0, 0, 0, 0, 0, 0, 3];

/// Wraps a raw Deflate stream into a gzip member.
pub fn gzip_member(deflate: &[u8], original: &[u8]) -> Vec<u8> {
    let mut out = MINIMAL_GZIP_HEADER.to_vec();
    out.extend_from_slice(deflate);
    out.extend_from_slice(&crc32fast::hash(original).to_le_bytes());
    out.extend_from_slice(&(original.len() as u32).to_le_bytes());
    out
}

/// BGZF member: gzip header with a `BC` extra subfield holding the total
/// member size minus one.
pub fn bgzf_member(deflate: &[u8], original: &[u8]) -> Vec<u8> {
    let total = 18 + deflate.len() + 8;
    let bsize = (total - 1) as u16;
    let mut out = vec![0x1F, 0x8B, 8, 4, 0, 0, 0, 0, 0, 0xFF, 6, 0, b'B', b'C', 2, 0];
    out.extend_from_slice(&bsize.to_le_bytes());
    out.extend_from_slice(deflate);
    out.extend_from_slice(&crc32fast::hash(original).to_le_bytes());
    out.extend_from_slice(&(original.len() as u32).to_le_bytes());
    out
}

pub fn bgzf_file(data: &[u8], block: usize, deflate: impl Fn(&[u8]) -> Vec<u8>) -> Vec<u8> {
    let mut out = Vec::new();
    for part in data.chunks(block) {
        out.extend(bgzf_member(&deflate(part), part));
    }
    // End-of-file marker member.
    out.extend(bgzf_member(&deflate_fixed(&[], 1), &[]));
    out
}
