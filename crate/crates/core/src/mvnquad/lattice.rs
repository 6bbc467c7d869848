//! Randomly shifted Kronecker (Richtmyer) lattice with a periodising tent map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generators `frac(sqrt(p))` for the first primes.
fn generators(dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut candidate = 2u64;
    while out.len() < dim {
        if is_prime(candidate) {
            out.push((candidate as f64).sqrt().fract());
        }
        candidate += 1;
    }
    out
}

fn is_prime(n: u64) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

/// Extensible lattice: point `k` of shift `s` is `tent(frac(k * z + shift_s))`.
#[derive(Debug, Clone)]
pub struct ShiftedLattice {
    gens: Vec<f64>,
    shifts: Vec<Vec<f64>>,
}

impl ShiftedLattice {
    pub fn new(dim: usize, n_shifts: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..n_shifts)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
            .collect();
        Self {
            gens: generators(dim),
            shifts,
        }
    }

    pub fn dim(&self) -> usize {
        self.gens.len()
    }

    pub fn n_shifts(&self) -> usize {
        self.shifts.len()
    }

    /// Write point `k` (1-based) of shift `s` into `out`.
    #[inline]
    pub fn point(&self, s: usize, k: usize, out: &mut [f64]) {
        let kf = k as f64;
        for ((o, &z), &sh) in out.iter_mut().zip(&self.gens).zip(&self.shifts[s]) {
            let x = (kf * z + sh).fract();
            *o = (2.0 * x - 1.0).abs();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_generators() {
        let g = generators(3);
        assert!((g[0] - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((g[1] - (3f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((g[2] - (5f64.sqrt() - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn points_in_unit_cube_and_seeded() {
        let a = ShiftedLattice::new(4, 3, 9);
        let b = ShiftedLattice::new(4, 3, 9);
        let mut pa = [0.0; 4];
        let mut pb = [0.0; 4];
        for s in 0..3 {
            for k in 1..200 {
                a.point(s, k, &mut pa);
                b.point(s, k, &mut pb);
                assert_eq!(pa, pb);
                assert!(pa.iter().all(|&u| (0.0..=1.0).contains(&u)));
            }
        }
    }

    #[test]
    fn integrates_smooth_function() {
        // integral of prod(1 + (u - 1/2)) over the unit cube is 1
        let lat = ShiftedLattice::new(3, 1, 1);
        let mut p = [0.0; 3];
        let n = 4096;
        let mut sum = 0.0;
        for k in 1..=n {
            lat.point(0, k, &mut p);
            sum += p.iter().map(|u| 1.0 + (u - 0.5)).product::<f64>();
        }
        assert!((sum / n as f64 - 1.0).abs() < 1e-3);
    }
}
