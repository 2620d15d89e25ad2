//! Sparse Hermitian operators and Chebyshev propagation `psi <- exp(-i H t) psi`.

use num_complex::Complex64;
use rayon::prelude::*;

const PARALLEL_DIM: usize = 20_000;

/// Compressed sparse rows.
#[derive(Debug, Clone)]
pub struct SparseHermitian {
    dim: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseHermitian {
    /// Builds from `(row, col, value)` triplets; duplicates are summed. The caller
    /// is responsible for supplying both triangles.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_start = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_start[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..dim {
            row_start[r + 1] += row_start[r];
        }
        Self {
            dim,
            row_start,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, r: usize, x: &[Complex64]) -> Complex64 {
        (self.row_start[r]..self.row_start[r + 1])
            .map(|i| self.vals[i] * x[self.cols[i]])
            .sum()
    }

    /// `y = (H x - shift x) / scale`.
    fn apply_scaled(&self, x: &[Complex64], y: &mut [Complex64], shift: f64, scale: f64) {
        let f = |(r, out): (usize, &mut Complex64)| *out = (self.row(r, x) - shift * x[r]) / scale;
        if self.dim > PARALLEL_DIM {
            y.par_iter_mut().enumerate().for_each(f);
        } else {
            y.iter_mut().enumerate().for_each(f);
        }
    }

    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.apply_scaled(x, y, 0.0, 1.0);
    }

    /// Gershgorin interval containing the spectrum.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..self.dim {
            let mut centre = 0.0;
            let mut radius = 0.0;
            for i in self.row_start[r]..self.row_start[r + 1] {
                if self.cols[i] == r {
                    centre = self.vals[i].re;
                } else {
                    radius += self.vals[i].norm();
                }
            }
            lo = lo.min(centre - radius);
            hi = hi.max(centre + radius);
        }
        (lo, hi)
    }

    /// `max |H - H^dag|` over stored entries.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for i in self.row_start[r]..self.row_start[r + 1] {
                let c = self.cols[i];
                let back = (self.row_start[c]..self.row_start[c + 1])
                    .find(|&j| self.cols[j] == r)
                    .map(|j| self.vals[j])
                    .unwrap_or_default();
                worst = worst.max((self.vals[i] - back.conj()).norm());
            }
        }
        worst
    }
}

pub fn norm(a: &[Complex64]) -> f64 {
    if a.len() > PARALLEL_DIM {
        a.par_iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    } else {
        a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `J_0(x) .. J_{n-1}(x)` for `x >= 0` by Miller's backward recurrence,
/// normalised with `J_0 + 2 sum J_{2k} = 1`.
pub fn bessel_j_sequence(x: f64, n: usize) -> Vec<f64> {
    if x < 1e-300 {
        let mut out = vec![0.0; n];
        if n > 0 {
            out[0] = 1.0;
        }
        return out;
    }
    let mut start = n.max(x.ceil() as usize) + 30 + (4.0 * x.cbrt()) as usize;
    start += start % 2;
    let mut j = vec![0.0; start + 2];
    j[start] = 1e-30;
    for k in (1..=start).rev() {
        j[k - 1] = 2.0 * k as f64 / x * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            j.iter_mut().skip(k - 1).for_each(|v| *v *= 1e-250);
        }
    }
    let norm = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
    j.truncate(n);
    j.iter_mut().for_each(|v| *v /= norm);
    j
}

/// Chebyshev expansion `exp(-i H t) = exp(-i c t) sum_k (2 - delta_k0) (-i)^k J_k(R t) T_k((H - c)/R)`
/// with `[c - R, c + R]` the Gershgorin interval. The series is cut once the
/// Bessel coefficients fall below `tolerance`.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub tolerance: f64,
}

impl Default for Propagator {
    fn default() -> Self {
        Self { tolerance: 1e-16 }
    }
}

impl Propagator {
    pub fn evolve(&self, h: &SparseHermitian, psi: &mut [Complex64], time: f64) {
        let (lo, hi) = h.spectral_bounds();
        let centre = 0.5 * (lo + hi);
        let radius = (0.5 * (hi - lo)).max(1e-12) * 1.01;
        let x = radius * time.abs();
        let terms = (x + 20.0 + 8.0 * x.cbrt()).ceil() as usize;
        let bessel = bessel_j_sequence(x, terms);
        let used = (0..terms)
            .rev()
            .find(|&k| bessel[k].abs() > self.tolerance)
            .map_or(1, |k| k + 1);
        // sign(t) enters through (-i)^k -> (-i sign t)^k
        let unit = Complex64::new(0.0, -time.signum());

        let dim = psi.len();
        let mut prev = psi.to_vec();
        let mut cur = vec![Complex64::new(0.0, 0.0); dim];
        let mut next = vec![Complex64::new(0.0, 0.0); dim];
        let mut acc: Vec<Complex64> = prev.iter().map(|z| z * bessel[0]).collect();
        if used > 1 {
            h.apply_scaled(&prev, &mut cur, centre, radius);
            let c1 = 2.0 * bessel[1] * unit;
            acc.iter_mut().zip(&cur).for_each(|(a, v)| *a += c1 * v);
        }
        let mut coeff = unit;
        for &bk in bessel.iter().take(used).skip(2) {
            h.apply_scaled(&cur, &mut next, centre, radius);
            coeff *= unit;
            let ck = 2.0 * bk * coeff;
            let update = |((n, p), a): ((&mut Complex64, &Complex64), &mut Complex64)| {
                *n = 2.0 * *n - p;
                *a += ck * *n;
            };
            if dim > PARALLEL_DIM {
                next.par_iter_mut().zip(prev.par_iter()).zip(acc.par_iter_mut()).for_each(update);
            } else {
                next.iter_mut().zip(prev.iter()).zip(acc.iter_mut()).for_each(update);
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        let phase = Complex64::from_polar(1.0, -centre * time);
        psi.iter_mut().zip(&acc).for_each(|(p, a)| *p = phase * a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn bessel_values() {
        let j = bessel_j_sequence(1.0, 3);
        assert!((j[0] - 0.765_197_686_557_966_6).abs() < 1e-15);
        assert!((j[1] - 0.440_050_585_744_933_5).abs() < 1e-15);
        let j = bessel_j_sequence(10.0, 6);
        assert!((j[5] + 0.234_061_528_186_793_6).abs() < 1e-14);
        let j = bessel_j_sequence(400.0, 500);
        // J_0(400) from the asymptotic series
        let x = 400.0f64;
        let asym = (2.0 / (std::f64::consts::PI * x)).sqrt()
            * ((x - std::f64::consts::FRAC_PI_4).cos() * (1.0 - 9.0 / (128.0 * x * x))
                + (x - std::f64::consts::FRAC_PI_4).sin() / (8.0 * x));
        assert!((j[0] - asym).abs() < 1e-10, "{} {}", j[0], asym);
    }

    #[test]
    fn ring_propagation_is_unitary_and_reversible() {
        // 40-site ring with a complex hopping and on-site potential
        let n = 40;
        let mut trip = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let t = c(-0.7, 0.2);
            trip.push((i, j, t));
            trip.push((j, i, t.conj()));
            trip.push((i, i, c(0.05 * i as f64, 0.0)));
        }
        let h = SparseHermitian::from_triplets(n, trip);
        assert!(h.hermiticity_error() < 1e-15);
        let mut psi: Vec<Complex64> = (0..n).map(|i| c((-(i as f64 - 20.0).powi(2) / 8.0).exp(), 0.0)).collect();
        let n0 = norm(&psi);
        psi.iter_mut().for_each(|z| *z /= n0);
        let start = psi.clone();
        Propagator::default().evolve(&h, &mut psi, 37.3);
        assert!((norm(&psi) - 1.0).abs() < 1e-13);
        let mut back = psi.clone();
        Propagator::default().evolve(&h, &mut back, -37.3);
        let err: f64 = back.iter().zip(&start).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn free_plane_wave_acquires_band_phase() {
        let n = 64;
        let mut trip = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            trip.push((i, j, c(-1.0, 0.0)));
            trip.push((j, i, c(-1.0, 0.0)));
        }
        let h = SparseHermitian::from_triplets(n, trip);
        let q = 2.0 * std::f64::consts::PI * 5.0 / n as f64;
        let mut psi: Vec<Complex64> = (0..n).map(|x| c(0.0, q * x as f64).exp() / (n as f64).sqrt()).collect();
        let start = psi.clone();
        let t = 13.0;
        Propagator::default().evolve(&h, &mut psi, t);
        let phase = c(0.0, 2.0 * q.cos() * t).exp();
        let err: f64 = psi.iter().zip(&start).map(|(a, b)| (a - b * phase).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn two_level_rabi_oscillation() {
        // H = [[0, w], [w, 0]]: |0> -> cos(w t)|0> - i sin(w t)|1>
        let w = 0.8;
        let h = SparseHermitian::from_triplets(2, vec![(0, 1, c(w, 0.0)), (1, 0, c(w, 0.0))]);
        let mut psi = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let t = 2.3;
        Propagator::default().evolve(&h, &mut psi, t);
        assert!((psi[0] - c((w * t).cos(), 0.0)).norm() < 1e-14);
        assert!((psi[1] - c(0.0, -(w * t).sin())).norm() < 1e-14);
    }
}
