//! Barycentric interpolation on Chebyshev points of the second kind.

#[derive(Debug, Clone)]
pub struct Chebyshev {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Chebyshev {
    /// `k` points spanning `[lo, hi]`; a degenerate interval gives one node.
    pub fn new(lo: f64, hi: f64, k: usize) -> Self {
        if !(hi > lo) || k < 2 {
            return Self {
                nodes: vec![0.5 * (lo + hi)],
                weights: vec![1.0],
            };
        }
        let m = (k - 1) as f64;
        let nodes = (0..k)
            .map(|j| {
                let x = (std::f64::consts::PI * j as f64 / m).cos();
                0.5 * (lo + hi) + 0.5 * (hi - lo) * x
            })
            .collect();
        let weights = (0..k)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == k - 1 {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Interpolant through `values` (one per node) evaluated at `x`.
    pub fn eval(&self, values: &[f64], x: f64) -> f64 {
        if self.nodes.len() == 1 {
            return values[0];
        }
        let (mut num, mut den) = (0.0, 0.0);
        for ((&xj, &wj), &fj) in self.nodes.iter().zip(&self.weights).zip(values) {
            let d = x - xj;
            if d == 0.0 {
                return fj;
            }
            let c = wj / d;
            num += c * fj;
            den += c;
        }
        num / den
    }
}
