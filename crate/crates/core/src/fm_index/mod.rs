//! FM-index over the token stream.
//!
//! The index is built over the *reversed* stream followed by a sentinel.
//! Backward search over reversed text appends tokens on the right of the
//! pattern in original reading order, which is the direction the decoder
//! generates in. A match range therefore covers the rows whose BWT symbol
//! is the token that follows the matched n-gram in the corpus.
//!
//! The sentinel is stored as `vocab_size` but sorts before every real token,
//! so row 0 is the sentinel suffix and `c_table[vocab_size] == bwt.len()`.

mod occ;
mod suffix_array;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::corpus::{context_of_offset, TokenizedCorpus, SEPARATOR};
use crate::error::{Error, Result};
use occ::{Occ, RowMarks};

pub const INDEX_MAGIC: &[u8; 8] = b"NGDXFMIX";
pub const INDEX_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    /// Text positions divisible by this are kept in the sampled suffix array.
    pub sample_rate: usize,
    /// Distance between absolute occ checkpoints.
    pub checkpoint_stride: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32,
            checkpoint_stride: 128,
        }
    }
}

/// Half-open range of rows in the sorted rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexRange {
    pub lo: usize,
    pub hi: usize,
}

impl IndexRange {
    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }
}

/// Tokens that can follow a matched n-gram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Successors {
    /// Token successors with their extended ranges, ascending by token id.
    pub tokens: Vec<(u32, IndexRange)>,
    /// At least one occurrence is immediately followed by a separator.
    pub end_of_context: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FmIndex {
    bwt: Vec<u32>,
    c_table: Vec<u64>,
    occ: Occ,
    marks: RowMarks,
    ssa: Vec<u64>,
    sample_rate: usize,
    boundaries: Vec<usize>,
    vocab_size: usize,
    positions_by_len: Vec<u64>,
}

impl FmIndex {
    pub fn build(tc: &TokenizedCorpus, config: IndexConfig) -> Result<Self> {
        if tc.stream.is_empty() {
            return Err(Error::Index("cannot index an empty stream".into()));
        }
        if config.sample_rate == 0 || config.checkpoint_stride == 0 {
            return Err(Error::Config(
                "sample rate and checkpoint stride must be positive".into(),
            ));
        }
        let vocab = tc.vocab_size;
        if let Some(&bad) = tc.stream.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Index(format!("token {bad} outside vocabulary of {vocab}")));
        }
        let n = tc.stream.len();
        // sort keys: sentinel 0, token t -> t + 1
        let mut keyed: Vec<u32> = tc.stream.iter().rev().map(|&t| t + 1).collect();
        keyed.push(0);
        let sa = suffix_array::suffix_array(&keyed);

        let sentinel = vocab as u32;
        let bwt: Vec<u32> = sa
            .iter()
            .map(|&i| if i == 0 { sentinel } else { keyed[i as usize - 1] - 1 })
            .collect();

        let mut counts = vec![0u64; vocab];
        for &t in &tc.stream {
            counts[t as usize] += 1;
        }
        let mut c_table = Vec::with_capacity(vocab + 1);
        let mut acc = 1u64;
        for c in &counts {
            c_table.push(acc);
            acc += c;
        }
        c_table.push(acc);
        debug_assert_eq!(acc as usize, n + 1);

        let occ = Occ::build(&bwt, vocab, config.checkpoint_stride);
        let s = config.sample_rate;
        let marks = RowMarks::from_bits(sa.iter().map(|&p| (p as usize).is_multiple_of(s)), sa.len());
        let ssa = sa
            .iter()
            .filter(|&&p| (p as usize).is_multiple_of(s))
            .map(|&p| p as u64)
            .collect();

        let mut index = Self {
            bwt,
            c_table,
            occ,
            marks,
            ssa,
            sample_rate: s,
            boundaries: tc.boundaries.clone(),
            vocab_size: vocab,
            positions_by_len: Vec::new(),
        };
        index.positions_by_len = index.compute_positions();
        Ok(index)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Length of the BWT, i.e. stream length plus the sentinel.
    pub fn len(&self) -> usize {
        self.bwt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bwt.is_empty()
    }

    pub fn stream_len(&self) -> usize {
        self.bwt.len() - 1
    }

    pub fn num_contexts(&self) -> usize {
        self.boundaries.len()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn bwt(&self) -> &[u32] {
        &self.bwt
    }

    pub fn c_table(&self) -> &[u64] {
        &self.c_table
    }

    pub fn sample_rate(&self) -> usize {
        self.sample_rate
    }

    pub fn checkpoint_stride(&self) -> usize {
        self.occ.stride
    }

    pub fn sentinel(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Occurrences of `token` in `bwt[0..p)`.
    pub fn occ(&self, token: u32, p: usize) -> usize {
        self.occ.occ(&self.bwt, token, p)
    }

    pub fn full_range(&self) -> IndexRange {
        IndexRange {
            lo: 0,
            hi: self.bwt.len(),
        }
    }

    /// Rows preceded in the original stream by a separator or the stream
    /// start. Extending from here only matches n-grams that open a context.
    pub fn context_start_range(&self) -> IndexRange {
        IndexRange {
            lo: 0,
            hi: self.c_table[SEPARATOR as usize + 1] as usize,
        }
    }

    /// LF mapping: the row of the suffix one position earlier in the
    /// indexed (reversed) text.
    pub fn lf(&self, row: usize) -> usize {
        let c = self.bwt[row];
        if c == self.sentinel() {
            0
        } else {
            self.c_table[c as usize] as usize + self.occ(c, row)
        }
    }

    /// One backward-search step: the range of the matched n-gram with
    /// `token` appended on the right.
    pub fn extend_range(&self, range: IndexRange, token: u32) -> Result<IndexRange> {
        if token as usize >= self.vocab_size {
            return Err(Error::Index(format!(
                "token {token} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        if range.lo > range.hi || range.hi > self.bwt.len() {
            return Err(Error::Index(format!("invalid range {range:?}")));
        }
        let base = self.c_table[token as usize] as usize;
        Ok(IndexRange {
            lo: base + self.occ(token, range.lo),
            hi: base + self.occ(token, range.hi),
        })
    }

    /// Match range of `ngram`; empty when it does not occur.
    pub fn find(&self, ngram: &[u32]) -> Result<IndexRange> {
        if ngram.is_empty() {
            return Err(Error::Index("empty n-gram".into()));
        }
        let mut range = self.full_range();
        for &t in ngram {
            range = self.extend_range(range, t)?;
            if range.is_empty() {
                break;
            }
        }
        Ok(range)
    }

    pub fn count(&self, ngram: &[u32]) -> Result<usize> {
        Ok(self.find(ngram)?.len())
    }

    pub fn successors(&self, range: IndexRange) -> Result<Successors> {
        if range.is_empty() || range.hi > self.bwt.len() {
            return Err(Error::Index(format!("successors of empty or invalid range {range:?}")));
        }
        let sentinel = self.sentinel();
        let mut end_of_context = false;
        let candidates: Vec<u32> = if range == self.full_range() {
            end_of_context = true;
            (0..self.vocab_size as u32)
                .filter(|&t| t != SEPARATOR && self.c_table[t as usize + 1] > self.c_table[t as usize])
                .collect()
        } else if range.len() > self.vocab_size {
            end_of_context = self.occ(SEPARATOR, range.hi) > self.occ(SEPARATOR, range.lo);
            (0..self.vocab_size as u32)
                .filter(|&t| t != SEPARATOR && self.occ(t, range.hi) > self.occ(t, range.lo))
                .collect()
        } else {
            let mut seen: Vec<u32> = self.bwt[range.lo..range.hi].to_vec();
            seen.sort_unstable();
            seen.dedup();
            seen.retain(|&t| {
                if t == SEPARATOR {
                    end_of_context = true;
                }
                t != SEPARATOR && t != sentinel
            });
            seen
        };
        let tokens = candidates
            .into_iter()
            .map(|t| self.extend_range(range, t).map(|r| (t, r)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Successors { tokens, end_of_context })
    }

    /// Position in the indexed (reversed + sentinel) text of the suffix at
    /// `row`, by LF-walking to the nearest sample.
    pub fn suffix_position(&self, mut row: usize) -> usize {
        let mut steps = 0;
        while !self.marks.get(row) {
            row = self.lf(row);
            steps += 1;
        }
        self.ssa[self.marks.rank(row)] as usize + steps
    }

    /// Stream offsets where each row's match starts, given the match length.
    pub fn start_offsets(&self, range: IndexRange, matched_len: usize) -> Vec<usize> {
        let n = self.stream_len();
        (range.lo..range.hi)
            .filter_map(|row| {
                let pos = self.suffix_position(row);
                n.checked_sub(pos + matched_len)
            })
            .collect()
    }

    /// Contexts owning the last matched token of each row in `range`.
    pub fn contexts_of_match_ends(&self, range: IndexRange) -> Vec<u32> {
        let n = self.stream_len();
        let mut out = BTreeSet::new();
        for row in range.lo..range.hi {
            let pos = self.suffix_position(row);
            if pos < n {
                if let Ok(c) = context_of_offset(&self.boundaries, n, n - 1 - pos) {
                    out.insert(c);
                }
            }
        }
        out.into_iter().collect()
    }

    /// Contexts containing `ngram`, ascending. With `limit`, rows are
    /// resolved lowest first until `limit` distinct contexts are found.
    pub fn locate_contexts(&self, ngram: &[u32], limit: Option<usize>) -> Result<Vec<u32>> {
        let range = self.find(ngram)?;
        let n = self.stream_len();
        let m = ngram.len();
        let mut found = BTreeSet::new();
        for row in range.lo..range.hi {
            if limit.is_some_and(|l| found.len() >= l) {
                break;
            }
            let pos = self.suffix_position(row);
            let start = n - pos - m;
            found.insert(context_of_offset(&self.boundaries, n, start)?);
        }
        Ok(found.into_iter().collect())
    }

    fn compute_positions(&self) -> Vec<u64> {
        let n = self.stream_len();
        let lengths: Vec<usize> = self
            .boundaries
            .iter()
            .enumerate()
            .map(|(i, &b)| self.boundaries.get(i + 1).copied().unwrap_or(n) - b - 1)
            .collect();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        let mut by_len = vec![0u64; max_len + 2];
        for &l in &lengths {
            by_len[l] += 1;
        }
        // positions(m) = sum over contexts of max(0, len - m + 1)
        let mut out = vec![0u64; max_len + 2];
        let (mut s0, mut s1) = (0u64, 0u64);
        for m in (1..=max_len).rev() {
            s0 += by_len[m];
            s1 += by_len[m] * m as u64;
            out[m] = s1 - (m as u64 - 1) * s0;
        }
        out
    }

    /// Number of in-context windows of length `m`: the normalizer of the
    /// unconditional n-gram probability.
    pub fn ngram_positions(&self, m: usize) -> u64 {
        self.positions_by_len.get(m).copied().unwrap_or(0)
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        self.bwt.len() * 4
            + self.c_table.len() * 8
            + self.occ.checkpoints.len() * 4
            + self.marks.words.len() * 12
            + self.ssa.len() * 8
            + self.boundaries.len() * 8
            + self.positions_by_len.len() * 8
    }

    pub(crate) fn write_to(&self, w: &mut Writer) {
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        w.u32(self.sample_rate as u32);
        w.u32(self.occ.stride as u32);
        w.u32(self.vocab_size as u32);
        w.u32s(&self.bwt);
        w.u64s(&self.c_table);
        w.u32s(&self.occ.checkpoints);
        w.u64s(&self.marks.words);
        w.u64s(&self.ssa);
        let bounds: Vec<u64> = self.boundaries.iter().map(|&b| b as u64).collect();
        w.u64s(&bounds);
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        r.expect_magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let sample_rate = r.u32()? as usize;
        let stride = r.u32()? as usize;
        let vocab_size = r.u32()? as usize;
        let bwt = r.u32s()?;
        let c_table = r.u64s()?;
        let checkpoints = r.u32s()?;
        let marks = RowMarks::from_words(r.u64s()?);
        let ssa = r.u64s()?;
        let boundaries: Vec<usize> = r.u64s()?.into_iter().map(|b| b as usize).collect();
        if sample_rate == 0
            || stride == 0
            || c_table.len() != vocab_size + 1
            || c_table.last().copied() != Some(bwt.len() as u64)
            || checkpoints.len() != (bwt.len() / stride + 1) * vocab_size
            || marks.words.len() != bwt.len().div_ceil(64)
        {
            return Err(Error::Format("inconsistent index sections".into()));
        }
        let mut index = Self {
            bwt,
            c_table,
            occ: Occ {
                stride,
                sigma: vocab_size,
                checkpoints,
            },
            marks,
            ssa,
            sample_rate,
            boundaries,
            vocab_size,
            positions_by_len: Vec::new(),
        };
        index.positions_by_len = index.compute_positions();
        Ok(index)
    }

    /// Versioned binary layout: magic, version, sample rate, checkpoint
    /// stride, vocab size, then bwt, c_table, occ checkpoints, sampled-row
    /// marks, sampled suffix array, boundaries.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_to(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let index = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(index)
    }
}
