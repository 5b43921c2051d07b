//! Canonical Huffman codes as used by Deflate.
//!
//! A code is described only by its per-symbol code lengths. Whether such a
//! list describes a usable prefix code is decided from the histogram of
//! lengths alone: a length-`l` code word occupies `2^-l` of the code space,
//! and the code is complete exactly when the occupied space sums to one.

use std::fmt;
use std::sync::OnceLock;

use crate::bitstream::BitReader;
use crate::error::{DeflateError, Error, Result};

pub const MAX_CODE_LENGTH: usize = 15;

/// Fixed-point scale for Kraft sums: a sum of exactly one equals `KRAFT_ONE`.
pub const KRAFT_ONE: u32 = 1 << MAX_CODE_LENGTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodeClass {
    /// Complete prefix code; every leaf of the code tree is used.
    Valid,
    /// More code words of some length than the tree can hold.
    OverSubscribed,
    /// A prefix code with unused leaves.
    Inefficient,
    /// No symbol has a nonzero length.
    Empty,
}

impl fmt::Display for CodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeClass::Valid => "valid",
            CodeClass::OverSubscribed => "over-subscribed",
            CodeClass::Inefficient => "inefficient",
            CodeClass::Empty => "empty",
        })
    }
}

/// Number of symbols per code length; index 0 counts unused symbols.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CodeLengthHistogram {
    counts: [u16; MAX_CODE_LENGTH + 1],
}

impl CodeLengthHistogram {
    pub fn from_lengths(lengths: &[u8]) -> Self {
        let mut counts = [0u16; MAX_CODE_LENGTH + 1];
        for &l in lengths {
            counts[l as usize] += 1;
        }
        Self { counts }
    }

    pub fn from_counts(counts: [u16; MAX_CODE_LENGTH + 1]) -> Self {
        Self { counts }
    }

    pub fn count(&self, length: usize) -> u16 {
        self.counts[length]
    }

    pub fn counts(&self) -> &[u16; MAX_CODE_LENGTH + 1] {
        &self.counts
    }

    pub fn alphabet_size(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    pub fn coded_symbols(&self) -> usize {
        self.counts[1..].iter().map(|&c| c as usize).sum()
    }

    pub fn max_length(&self) -> usize {
        (1..=MAX_CODE_LENGTH)
            .rev()
            .find(|&l| self.counts[l] > 0)
            .unwrap_or(0)
    }

    /// `sum(count[l] * 2^-l)` scaled by [`KRAFT_ONE`].
    pub fn kraft_sum(&self) -> u32 {
        (1..=MAX_CODE_LENGTH)
            .map(|l| self.counts[l] as u32 * (KRAFT_ONE >> l))
            .sum()
    }

    pub fn classify(&self) -> CodeClass {
        let mut free: i32 = 1;
        for l in 1..=MAX_CODE_LENGTH {
            free = free * 2 - self.counts[l] as i32;
            if free < 0 {
                return CodeClass::OverSubscribed;
            }
        }
        if self.coded_symbols() == 0 {
            CodeClass::Empty
        } else if free == 0 {
            CodeClass::Valid
        } else {
            CodeClass::Inefficient
        }
    }
}

pub fn classify(lengths: &[u8]) -> CodeClass {
    CodeLengthHistogram::from_lengths(lengths).classify()
}

/// Which incomplete codes [`HuffmanDecoder::build`] accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    /// Only complete codes.
    Strict,
    /// Additionally accepts an empty code and a code consisting of a single
    /// length-1 word, both of which real encoders emit for distance codes.
    Permissive,
}

const LENGTH_SHIFT: u32 = 16;

/// Single-level decoding table over the next `max_length` stream bits.
#[derive(Clone)]
pub struct HuffmanDecoder {
    /// `symbol | length << 16`; a zero length marks unused bit patterns.
    table: Box<[u32]>,
    max_length: u32,
    alphabet_size: usize,
    class: CodeClass,
}

impl fmt::Debug for HuffmanDecoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HuffmanDecoder")
            .field("max_length", &self.max_length)
            .field("alphabet_size", &self.alphabet_size)
            .field("class", &self.class)
            .finish()
    }
}

impl HuffmanDecoder {
    /// Builds the canonical code for `lengths`: shorter codes come first and
    /// codes of equal length are assigned in symbol order.
    pub fn build(lengths: &[u8], strictness: Strictness) -> std::result::Result<Self, CodeClass> {
        let histogram = CodeLengthHistogram::from_lengths(lengths);
        let class = histogram.classify();
        let accepted = match class {
            CodeClass::Valid => true,
            CodeClass::OverSubscribed => false,
            CodeClass::Empty => strictness == Strictness::Permissive,
            CodeClass::Inefficient => {
                strictness == Strictness::Permissive
                    && histogram.coded_symbols() == 1
                    && histogram.count(1) == 1
            }
        };
        if !accepted {
            return Err(class);
        }

        let max_length = histogram.max_length().max(1) as u32;
        let mut table = vec![0u32; 1 << max_length].into_boxed_slice();
        let mut next_code = [0u32; MAX_CODE_LENGTH + 2];
        let mut code = 0u32;
        for l in 1..=MAX_CODE_LENGTH {
            code = (code + histogram.count(l - 1) as u32 * (l > 1) as u32) << 1;
            next_code[l] = code;
        }
        for (symbol, &length) in lengths.iter().enumerate() {
            if length == 0 {
                continue;
            }
            let length = length as u32;
            let code = next_code[length as usize];
            next_code[length as usize] += 1;
            // Code words are stored most-significant bit first in the stream.
            let reversed = code.reverse_bits() >> (32 - length);
            let entry = symbol as u32 | length << LENGTH_SHIFT;
            let mut index = reversed as usize;
            while index < table.len() {
                table[index] = entry;
                index += 1 << length;
            }
        }

        Ok(Self {
            table,
            max_length,
            alphabet_size: lengths.len(),
            class,
        })
    }

    pub fn max_length(&self) -> u32 {
        self.max_length
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn class(&self) -> CodeClass {
        self.class
    }

    /// Looks up the symbol for the next `max_length` bits (LSB-first).
    /// Returns `(symbol, length)`; a length of zero means no code matches.
    #[inline]
    pub fn lookup(&self, bits: u32) -> (u16, u32) {
        let entry = self.table[bits as usize];
        (entry as u16, entry >> LENGTH_SHIFT)
    }

    #[inline]
    pub fn decode_symbol(&self, reader: &mut BitReader) -> Result<u16> {
        let (bits, available) = reader.peek(self.max_length);
        let (symbol, length) = self.lookup(bits);
        if length == 0 || length > available {
            if available < self.max_length {
                return Err(Error::Truncated {
                    bit_offset: reader.tell() + available as u64,
                });
            }
            return Err(Error::deflate(reader.tell(), DeflateError::InvalidSymbol));
        }
        reader.consume(length);
        Ok(symbol)
    }
}

/// Code lengths of the fixed literal/length code (288 symbols).
pub fn fixed_literal_lengths() -> [u8; 288] {
    let mut lengths = [0u8; 288];
    lengths[..144].fill(8);
    lengths[144..256].fill(9);
    lengths[256..280].fill(7);
    lengths[280..].fill(8);
    lengths
}

pub fn fixed_literal_decoder() -> &'static HuffmanDecoder {
    static DECODER: OnceLock<HuffmanDecoder> = OnceLock::new();
    DECODER.get_or_init(|| {
        HuffmanDecoder::build(&fixed_literal_lengths(), Strictness::Strict)
            .expect("fixed literal code is complete")
    })
}

pub fn fixed_distance_decoder() -> &'static HuffmanDecoder {
    static DECODER: OnceLock<HuffmanDecoder> = OnceLock::new();
    DECODER.get_or_init(|| {
        HuffmanDecoder::build(&[5u8; 32], Strictness::Strict)
            .expect("fixed distance code is complete")
    })
}
