/// Suffix array by prefix doubling.
///
/// `text` must end with a unique symbol that compares smaller than every
/// other symbol, so all suffixes are distinct and the loop terminates.
pub(crate) fn suffix_array(text: &[u32]) -> Vec<u32> {
    let n = text.len();
    let mut sa: Vec<u32> = (0..n as u32).collect();
    if n <= 1 {
        return sa;
    }
    let mut rank: Vec<u32> = text.to_vec();
    let mut next = vec![0u32; n];
    let mut k = 1usize;
    loop {
        let key = |i: usize| -> u64 {
            let second = if i + k < n { rank[i + k] as u64 + 1 } else { 0 };
            ((rank[i] as u64) << 32) | second
        };
        sa.sort_unstable_by_key(|&i| key(i as usize));
        next[sa[0] as usize] = 0;
        for j in 1..n {
            let bump = key(sa[j - 1] as usize) != key(sa[j] as usize);
            next[sa[j] as usize] = next[sa[j - 1] as usize] + bump as u32;
        }
        std::mem::swap(&mut rank, &mut next);
        if rank[sa[n - 1] as usize] as usize == n - 1 {
            break;
        }
        k *= 2;
    }
    sa
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(text: &[u32]) -> Vec<u32> {
        let mut sa: Vec<u32> = (0..text.len() as u32).collect();
        sa.sort_by(|&a, &b| text[a as usize..].cmp(&text[b as usize..]));
        sa
    }

    #[test]
    fn banana() {
        // b a n a n a $ with $ = 0
        let text = [2, 1, 3, 1, 3, 1, 0];
        assert_eq!(suffix_array(&text), vec![6, 5, 3, 1, 0, 4, 2]);
    }

    proptest! {
        #[test]
        fn matches_naive_sort(mut body in proptest::collection::vec(1u32..6, 0..200)) {
            body.push(0);
            prop_assert_eq!(suffix_array(&body), naive(&body));
        }
    }
}
