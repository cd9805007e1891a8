//! Probabilists' Hermite polynomials and Gauss–Hermite quadrature.

use nalgebra::{DMatrix, SymmetricEigen};

/// `He_0(p) .. He_nmax(p)` by the three-term recurrence.
pub fn hermite_values(nmax: usize, p: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(nmax + 1);
    v.push(1.0);
    if nmax >= 1 {
        v.push(p);
    }
    for n in 1..nmax {
        let next = p * v[n] - n as f64 * v[n - 1];
        v.push(next);
    }
    v
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Nodes and weights for `int phi(p) q(p) dp` with `phi` the standard normal
/// density; exact for polynomials of degree below `2 * len`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let jacobi = DMatrix::from_fn(n, n, |i, j| if i + 1 == j || j + 1 == i { (i.max(j) as f64).sqrt() } else { 0.0 });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_k w_k q(p_k)`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Hermite coefficients `c_n = (1/n!) sum_k w_k q(p_k) He_n(p_k)`, n = 0..=nmax.
    pub fn project(&self, values: &[f64], nmax: usize) -> Vec<f64> {
        let mut c = vec![0.0; nmax + 1];
        for (k, &p) in self.nodes.iter().enumerate() {
            let he = hermite_values(nmax, p);
            for n in 0..=nmax {
                c[n] += self.weights[k] * values[k] * he[n];
            }
        }
        for (n, v) in c.iter_mut().enumerate() {
            *v /= factorial(n);
        }
        c
    }

    /// Values of `sum_n c_n He_n` at the nodes.
    pub fn evaluate(&self, coeffs: &[f64]) -> Vec<f64> {
        let nmax = coeffs.len().saturating_sub(1);
        self.nodes
            .iter()
            .map(|&p| hermite_values(nmax, p).iter().zip(coeffs).map(|(h, c)| h * c).sum())
            .collect()
    }
}
