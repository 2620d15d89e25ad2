use std::collections::BTreeSet;

use serde::Serialize;

use crate::combinatorics::permutations;
use crate::error::{Error, Result};

pub const MAX_PARTITION_SIZE: usize = 6;

/// Set partition of `0..n`; blocks sorted internally and ordered by their
/// smallest element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SetPartition {
    blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for b in &mut blocks {
            if b.is_empty() {
                return Err(Error::InvalidParameter("empty partition block".into()));
            }
            b.sort_unstable();
            for &i in b.iter() {
                if !seen.insert(i) {
                    return Err(Error::InvalidParameter(format!("index {i} appears twice")));
                }
            }
        }
        let n = seen.len();
        if seen.iter().copied().ne(0..n) {
            return Err(Error::InvalidParameter("blocks must cover 0..n".into()));
        }
        blocks.sort();
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Block sizes, largest first.
    pub fn shape(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.blocks.iter().map(Vec::len).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }
}

/// All set partitions of `0..n` via restricted growth strings (lexicographic).
pub fn enumerate_partitions(n: usize) -> Result<Vec<SetPartition>> {
    if n == 0 {
        return Err(Error::InvalidParameter("partition size must be positive".into()));
    }
    if n > MAX_PARTITION_SIZE {
        return Err(Error::Capacity {
            what: "set partition enumeration",
            requested: n,
            maximum: MAX_PARTITION_SIZE,
        });
    }
    let mut out = Vec::new();
    let mut rgs = vec![0usize; n];
    grow(1, 0, &mut rgs, &mut out);
    Ok(out)
}

fn grow(pos: usize, max_label: usize, rgs: &mut Vec<usize>, out: &mut Vec<SetPartition>) {
    let n = rgs.len();
    if pos == n {
        let mut blocks = vec![Vec::new(); max_label + 1];
        for (i, &l) in rgs.iter().enumerate() {
            blocks[l].push(i);
        }
        out.push(SetPartition { blocks });
        return;
    }
    for l in 0..=max_label + 1 {
        rgs[pos] = l;
        grow(pos + 1, max_label.max(l), rgs, out);
    }
}

/// Distinct ways to hand the inputs `0..n` to the blocks of `partition`: for each
/// block, the sorted set of inputs it receives. Generated from all `n!`
/// permutations, canonicalised within blocks, and deduplicated.
pub fn distinct_block_assignments(partition: &SetPartition) -> Vec<Vec<Vec<usize>>> {
    let n = partition.n();
    let mut seen = BTreeSet::new();
    for perm in permutations(n) {
        let assignment: Vec<Vec<usize>> = partition
            .blocks()
            .iter()
            .map(|b| {
                let mut ins: Vec<usize> = b.iter().map(|&i| perm[i]).collect();
                ins.sort_unstable();
                ins
            })
            .collect();
        seen.insert(assignment);
    }
    seen.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::factorial;

    #[test]
    fn bell_numbers() {
        let bell = [1, 2, 5, 15, 52, 203];
        for n in 1..=6 {
            assert_eq!(enumerate_partitions(n).unwrap().len(), bell[n - 1]);
        }
        assert!(matches!(enumerate_partitions(7), Err(Error::Capacity { .. })));
        assert!(enumerate_partitions(0).is_err());
    }

    #[test]
    fn small_cases() {
        let two = enumerate_partitions(2).unwrap();
        assert_eq!(two[0].blocks(), &[vec![0, 1]]);
        assert_eq!(two[1].blocks(), &[vec![0], vec![1]]);
        let shapes: Vec<Vec<usize>> = enumerate_partitions(3).unwrap().iter().map(|p| p.shape()).collect();
        assert_eq!(shapes.iter().filter(|s| **s == vec![3]).count(), 1);
        assert_eq!(shapes.iter().filter(|s| **s == vec![2, 1]).count(), 3);
        assert_eq!(shapes.iter().filter(|s| **s == vec![1, 1, 1]).count(), 1);
    }

    #[test]
    fn partitions_are_valid_and_distinct() {
        for n in 1..=5 {
            let parts = enumerate_partitions(n).unwrap();
            let set: BTreeSet<_> = parts.iter().cloned().collect();
            assert_eq!(set.len(), parts.len());
            for p in &parts {
                assert_eq!(SetPartition::new(p.blocks().to_vec()).unwrap(), *p);
            }
        }
    }

    #[test]
    fn assignment_counts() {
        for n in 1..=5 {
            for part in enumerate_partitions(n).unwrap() {
                let denom: usize = part.blocks().iter().map(|b| factorial(b.len())).product();
                assert_eq!(distinct_block_assignments(&part).len(), factorial(n) / denom);
            }
        }
    }

    #[test]
    fn rejects_bad_blocks() {
        assert!(SetPartition::new(vec![vec![0], vec![0]]).is_err());
        assert!(SetPartition::new(vec![vec![0], vec![2]]).is_err());
        assert!(SetPartition::new(vec![vec![], vec![0]]).is_err());
    }
}
