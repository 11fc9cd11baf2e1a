//! Gauss–Legendre rules on `[0, 1]` and their tensor products.

use crate::error::{Error, Result};

/// `n`-point Gauss–Legendre nodes and weights on `[0, 1]`, nodes ascending.
/// Exact for polynomials of degree `2n − 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "a quadrature rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map from [-1, 1] to [0, 1]
        nodes[i] = (1.0 - x) / 2.0;
        nodes[n - 1 - i] = (1.0 + x) / 2.0;
        weights[i] = w / 2.0;
        weights[n - 1 - i] = w / 2.0;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Per-direction point counts of a tensor Gauss rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    rules: Vec<(Vec<f64>, Vec<f64>)>,
}

impl QuadratureRule {
    pub fn new(points_per_dir: &[usize]) -> Result<Self> {
        if points_per_dir.is_empty() || points_per_dir.contains(&0) {
            return Err(Error::Validation(format!(
                "quadrature needs at least one point per direction, got {points_per_dir:?}"
            )));
        }
        Ok(Self {
            rules: points_per_dir.iter().map(|&q| gauss_legendre(q)).collect(),
        })
    }

    /// `p + 1` points per direction.
    pub fn for_degrees(degrees: &[usize]) -> Self {
        Self {
            rules: degrees.iter().map(|&p| gauss_legendre(p + 1)).collect(),
        }
    }

    pub fn points_per_dir(&self) -> Vec<usize> {
        self.rules.iter().map(|r| r.0.len()).collect()
    }

    pub fn dim(&self) -> usize {
        self.rules.len()
    }

    /// Nodes and weights of direction `dir` mapped to `[a, b]`.
    pub fn on_interval(&self, dir: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let (x, w) = &self.rules[dir];
        (
            x.iter().map(|x| a + (b - a) * x).collect(),
            w.iter().map(|w| w * (b - a)).collect(),
        )
    }
}
