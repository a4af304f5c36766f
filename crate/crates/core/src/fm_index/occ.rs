/// Rank structure over the BWT: absolute per-token counts every `stride`
/// positions, with an in-block scan for the remainder.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Occ {
    pub stride: usize,
    pub sigma: usize,
    pub checkpoints: Vec<u32>,
}

impl Occ {
    pub fn build(bwt: &[u32], sigma: usize, stride: usize) -> Self {
        let blocks = bwt.len() / stride + 1;
        let mut checkpoints = vec![0u32; blocks * sigma];
        let mut running = vec![0u32; sigma];
        for (i, &c) in bwt.iter().enumerate() {
            if i % stride == 0 {
                let k = i / stride;
                checkpoints[k * sigma..(k + 1) * sigma].copy_from_slice(&running);
            }
            if (c as usize) < sigma {
                running[c as usize] += 1;
            }
        }
        if bwt.len().is_multiple_of(stride) {
            let k = bwt.len() / stride;
            checkpoints[k * sigma..(k + 1) * sigma].copy_from_slice(&running);
        }
        Self {
            stride,
            sigma,
            checkpoints,
        }
    }

    /// Occurrences of `token` in `bwt[0..p)`.
    #[inline]
    pub fn occ(&self, bwt: &[u32], token: u32, p: usize) -> usize {
        let k = p / self.stride;
        let base = self.checkpoints[k * self.sigma + token as usize] as usize;
        base + bwt[k * self.stride..p].iter().filter(|&&c| c == token).count()
    }
}

/// Bit vector with constant-time rank, marking suffix-array sampled rows.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct RowMarks {
    pub words: Vec<u64>,
    ranks: Vec<u32>,
}

impl RowMarks {
    pub fn from_words(words: Vec<u64>) -> Self {
        let mut ranks = Vec::with_capacity(words.len());
        let mut acc = 0u32;
        for w in &words {
            ranks.push(acc);
            acc += w.count_ones();
        }
        Self { words, ranks }
    }

    pub fn from_bits(bits: impl Iterator<Item = bool>, len: usize) -> Self {
        let mut words = vec![0u64; len.div_ceil(64)];
        for (i, b) in bits.enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self::from_words(words)
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Number of set bits strictly before `i`.
    #[inline]
    pub fn rank(&self, i: usize) -> usize {
        let w = i / 64;
        let mask = (1u64 << (i % 64)) - 1;
        self.ranks[w] as usize + (self.words[w] & mask).count_ones() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn occ_matches_naive_count(bwt in proptest::collection::vec(0u32..7, 0..700), stride in 1usize..70) {
            // symbol 6 plays the sentinel and is not counted
            let occ = Occ::build(&bwt, 6, stride);
            for p in 0..=bwt.len() {
                for t in 0..6u32 {
                    let naive = bwt[..p].iter().filter(|&&c| c == t).count();
                    prop_assert_eq!(occ.occ(&bwt, t, p), naive);
                }
            }
        }

        #[test]
        fn rank_matches_naive(bits in proptest::collection::vec(any::<bool>(), 1..300)) {
            let marks = RowMarks::from_bits(bits.iter().copied(), bits.len());
            for i in 0..bits.len() {
                prop_assert_eq!(marks.get(i), bits[i]);
                prop_assert_eq!(marks.rank(i), bits[..i].iter().filter(|&&b| b).count());
            }
        }
    }
}
