//! Gauss-Legendre rules and small finite-difference helpers.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights on `[-1, 1]`, computed from the Jacobi matrix.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let mut j = DMatrix::zeros(order, order);
        for k in 1..order {
            let kf = k as f64;
            let b = kf / (4.0 * kf * kf - 1.0).sqrt();
            j[(k - 1, k)] = b;
            j[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(j);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|k| {
                let v0 = eig.eigenvectors[(0, k)];
                (eig.eigenvalues[k], 2.0 * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Composite rule on `panels` equal subintervals.
    pub fn composite(&self, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
        let panels = panels.max(1);
        let w = (b - a) / panels as f64;
        (0..panels)
            .map(|k| self.integrate(a + k as f64 * w, a + (k + 1) as f64 * w, &f))
            .sum()
    }
}

/// Sixth-order central first derivative on a uniform grid, `None` within
/// three points of either end.
pub fn central_derivative6(values: &[f64], spacing: f64) -> Vec<Option<f64>> {
    let n = values.len();
    (0..n)
        .map(|i| {
            if i < 3 || i + 3 >= n {
                return None;
            }
            let v = |k: isize| values[(i as isize + k) as usize];
            Some(
                (-v(-3) + 9.0 * v(-2) - 45.0 * v(-1) + 45.0 * v(1) - 9.0 * v(2) + v(3))
                    / (60.0 * spacing),
            )
        })
        .collect()
}
