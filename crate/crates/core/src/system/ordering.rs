use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default capacity for ordering enumeration.
pub const MAX_ORDERING_PHOTONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Op {
    Annihilate,
    Create,
}

/// Interleaving of N annihilation and N creation operators, leftmost = latest
/// time, whose vacuum expectation is not identically zero (a Dyck word).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderingClass {
    pattern: Vec<Op>,
}

/// Reading right to left, the occupation (creations minus annihilations) never
/// drops below zero and returns to zero at the end.
pub fn is_dyck(pattern: &[Op]) -> bool {
    let mut occupation: i64 = 0;
    for op in pattern.iter().rev() {
        match op {
            Op::Create => occupation += 1,
            Op::Annihilate => occupation -= 1,
        }
        if occupation < 0 {
            return false;
        }
    }
    occupation == 0
}

impl OrderingClass {
    pub fn new(pattern: Vec<Op>) -> Result<Self> {
        if pattern.is_empty() || !is_dyck(&pattern) {
            return Err(Error::InvalidParameter(format!(
                "operator pattern {} is not a valid ordering",
                fmt_pattern(&pattern)
            )));
        }
        Ok(Self { pattern })
    }

    pub fn pattern(&self) -> &[Op] {
        &self.pattern
    }

    pub fn n_photons(&self) -> usize {
        self.pattern.len() / 2
    }

    /// Occupation of the local system in each of the `2N - 1` gaps.
    pub fn gap_occupations(&self) -> Vec<usize> {
        let mut occ = vec![0usize; self.pattern.len() - 1];
        let mut level: i64 = 0;
        for g in (1..self.pattern.len()).rev() {
            level += match self.pattern[g] {
                Op::Create => 1,
                Op::Annihilate => -1,
            };
            occ[g - 1] = level as usize;
        }
        occ
    }
}

fn fmt_pattern(p: &[Op]) -> String {
    p.iter()
        .map(|op| match op {
            Op::Annihilate => "a",
            Op::Create => "a+",
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for OrderingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", fmt_pattern(&self.pattern))
    }
}

pub fn enumerate_orderings(n_photons: usize) -> Result<Vec<OrderingClass>> {
    enumerate_orderings_with_capacity(n_photons, MAX_ORDERING_PHOTONS)
}

/// All valid orderings for `n_photons`, lexicographic with `Annihilate < Create`.
pub fn enumerate_orderings_with_capacity(
    n_photons: usize,
    max_photons: usize,
) -> Result<Vec<OrderingClass>> {
    if n_photons == 0 {
        return Err(Error::InvalidParameter("photon number must be positive".into()));
    }
    if n_photons > max_photons {
        return Err(Error::Capacity {
            what: "ordering enumeration",
            requested: n_photons,
            maximum: max_photons,
        });
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(2 * n_photons);
    extend(n_photons, 0, 0, &mut prefix, &mut out);
    Ok(out)
}

// Left to right, a prefix is extendable iff #A >= #C and #A <= N.
fn extend(n: usize, a: usize, c: usize, prefix: &mut Vec<Op>, out: &mut Vec<OrderingClass>) {
    if a == n && c == n {
        out.push(OrderingClass {
            pattern: prefix.clone(),
        });
        return;
    }
    if a < n {
        prefix.push(Op::Annihilate);
        extend(n, a + 1, c, prefix, out);
        prefix.pop();
    }
    if c < a {
        prefix.push(Op::Create);
        extend(n, a, c + 1, prefix, out);
        prefix.pop();
    }
}
