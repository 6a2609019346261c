//! Gauss–Legendre quadrature on `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// Number of nodes used when a caller does not ask for a specific resolution.
pub const DEFAULT_QUAD_NODES: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss–Legendre rule with `n_nodes` points mapped to `[0, 1]`.
    pub fn gauss_legendre(n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return input(format!("quadrature needs at least 2 nodes, got {n_nodes}"));
        }
        let (x, w) = legendre_nodes(n_nodes);
        Ok(Self {
            nodes: x.iter().map(|&xi| 0.5 * (xi + 1.0)).collect(),
            weights: w.iter().map(|&wi| 0.5 * wi).collect(),
        })
    }

    /// Composite rule: an `nodes_per_panel`-point Gauss–Legendre rule on every
    /// panel between consecutive breakpoints. Breakpoints are sorted, clipped to
    /// `[0, 1]` and deduplicated; the endpoints 0 and 1 are always included.
    ///
    /// Integrands that are piecewise polynomial with kinks at the breakpoints
    /// are integrated exactly once the per-panel degree is high enough.
    pub fn composite(breakpoints: &[f64], nodes_per_panel: usize) -> Result<Self> {
        if nodes_per_panel < 2 {
            return input(format!(
                "quadrature needs at least 2 nodes per panel, got {nodes_per_panel}"
            ));
        }
        let mut cuts: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|b| b.is_finite())
            .map(|b| b.clamp(0.0, 1.0))
            .chain([0.0, 1.0])
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

        let (x, w) = legendre_nodes(nodes_per_panel);
        let mut nodes = Vec::with_capacity(x.len() * (cuts.len() - 1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in cuts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            for (&xi, &wi) in x.iter().zip(&w) {
                nodes.push(a + half * (xi + 1.0));
                weights.push(half * wi);
            }
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_legendre(DEFAULT_QUAD_NODES).expect("default node count is valid")
    }
}

pub fn make_quadrature(n_nodes: usize) -> Result<QuadratureRule> {
    QuadratureRule::gauss_legendre(n_nodes)
}

/// Nodes (ascending) and weights of the n-point rule on `[-1, 1]`, by Newton
/// iteration on the three-term Legendre recurrence.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}
