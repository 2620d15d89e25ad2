//! Small enumeration helpers shared by the engine and the assembly.

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    permute(n, &mut current, &mut used, &mut out);
    out
}

fn permute(n: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
    if current.len() == n {
        out.push(current.clone());
        return;
    }
    for i in 0..n {
        if !used[i] {
            used[i] = true;
            current.push(i);
            permute(n, current, used, out);
            current.pop();
            used[i] = false;
        }
    }
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Indices of the set bits of `mask`, ascending.
pub fn mask_indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask >> i & 1 == 1).collect()
}

pub fn indices_mask(indices: &[usize]) -> u32 {
    indices.iter().fold(0, |m, &i| m | 1 << i)
}
