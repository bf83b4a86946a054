//! Gauss–Legendre and periodic trapezoid rules.

use std::f64::consts::PI;

use crate::ad::Real;

/// Nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes mapped to `[a, b]`, with weights scaled accordingly.
    pub fn mapped<T: Real>(&self, a: T, b: T) -> Vec<(T, T)> {
        let half = (b - a) * 0.5;
        let mid = (b + a) * 0.5;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (mid + half * x, half * w))
            .collect()
    }

    pub fn integrate<T: Real>(&self, a: T, b: T, f: impl Fn(T) -> T) -> T {
        let mut s = T::zero();
        for (x, w) in self.mapped(a, b) {
            s += w * f(x);
        }
        s
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Uniform angles `2 pi j / m`, `j = 0..m`.
pub fn periodic_nodes(m: usize) -> impl Iterator<Item = f64> {
    (0..m).map(move |j| 2.0 * PI * j as f64 / m as f64)
}

/// Mean of a `2 pi`-periodic function by the trapezoid rule on `m` nodes.
pub fn periodic_mean<T: Real>(m: usize, f: impl Fn(f64) -> T) -> T {
    let mut s = T::zero();
    for th in periodic_nodes(m) {
        s += f(th);
    }
    s / m as f64
}
