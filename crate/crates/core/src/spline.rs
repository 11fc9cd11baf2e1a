//! One-dimensional B-spline machinery, tensor-product spaces and NURBS evaluation.
//!
//! Only open (clamped) knot vectors on `[0, 1]` are supported. Basis evaluation
//! follows the usual half-open span convention, except that `ξ = 1` is assigned
//! to the last non-empty span so the basis covers the closed reference interval.

use crate::error::{Error, Result};

/// Non-decreasing knot sequence with clamped ends.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    values: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(values: Vec<f64>, degree: usize) -> Result<Self> {
        let p = degree;
        if values.len() < 2 * (p + 1) {
            return Err(Error::Validation(format!(
                "knot vector of degree {p} needs at least {} entries, got {}",
                2 * (p + 1),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("knot values must be finite".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("knot values must be non-decreasing".into()));
        }
        let first = values[0];
        let last = values[values.len() - 1];
        if first != 0.0 || last != 1.0 {
            return Err(Error::Validation(format!(
                "knot vector must span [0, 1], got [{first}, {last}]"
            )));
        }
        let n = values.len();
        let clamped = values[..=p].iter().all(|&v| v == first)
            && values[n - p - 1..].iter().all(|&v| v == last)
            && values[p + 1] != first
            && values[n - p - 2] != last;
        if !clamped {
            return Err(Error::Validation(format!(
                "knot vector must repeat its end values exactly {} times",
                p + 1
            )));
        }
        let knots = Self { values, degree };
        if knots.interior_multiplicities().any(|m| m > p + 1) {
            return Err(Error::Validation(format!(
                "interior knot multiplicity exceeds degree + 1 = {}",
                p + 1
            )));
        }
        Ok(knots)
    }

    /// Clamped knot vector with `n_elements` equal spans.
    pub fn uniform(degree: usize, n_elements: usize) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::Domain("need at least one element".into()));
        }
        let interior: Vec<f64> = (1..n_elements)
            .map(|i| i as f64 / n_elements as f64)
            .collect();
        Self::with_interior(degree, &interior)
    }

    /// Clamped knot vector with the given interior knots (repeated entries allowed).
    pub fn with_interior(degree: usize, interior: &[f64]) -> Result<Self> {
        let mut values = vec![0.0; degree + 1];
        values.extend_from_slice(interior);
        values.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(values, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_basis(&self) -> usize {
        self.values.len() - self.degree - 1
    }

    /// Distinct knot values in increasing order (element boundaries).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &v in &self.values {
            if out.last() != Some(&v) {
                out.push(v);
            }
        }
        out
    }

    pub fn n_elements(&self) -> usize {
        self.breakpoints().len() - 1
    }

    pub fn multiplicity(&self, x: f64) -> usize {
        self.values.iter().filter(|&&v| v == x).count()
    }

    fn interior_multiplicities(&self) -> impl Iterator<Item = usize> + '_ {
        let bps = self.breakpoints();
        let inner = bps[1..bps.len() - 1].to_vec();
        inner.into_iter().map(move |x| self.multiplicity(x))
    }

    /// Span index `i` with `ξ_i ≤ ξ < ξ_{i+1}`, right-closed at `ξ = 1`.
    pub fn find_span(&self, xi: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::Domain(format!("parameter {xi} outside [0, 1]")));
        }
        let p = self.degree;
        let n = self.n_basis();
        if xi >= self.values[n] {
            return Ok(n - 1);
        }
        // upper_bound over values[p..=n]
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if xi < self.values[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    /// Same breakpoints, one fewer repeated end knot on each side (degree - 1).
    pub fn trimmed(&self) -> Result<Self> {
        if self.degree == 0 {
            return Err(Error::Domain("cannot lower the degree of a degree-0 space".into()));
        }
        let n = self.values.len();
        Self::new(self.values[1..n - 1].to_vec(), self.degree - 1)
    }
}

/// A univariate spline space `S^p_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpace1D {
    knots: KnotVector,
    regularity: i64,
}

impl SplineSpace1D {
    pub fn new(knots: KnotVector) -> Self {
        let max_mult = knots.interior_multiplicities().max().unwrap_or(0);
        let regularity = knots.degree() as i64 - max_mult as i64;
        Self { knots, regularity }
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.knots.degree
    }

    /// Global continuity `α` derived from the largest interior knot multiplicity.
    pub fn regularity(&self) -> i64 {
        self.regularity
    }

    pub fn n_basis(&self) -> usize {
        self.knots.n_basis()
    }

    /// Values of the `p + 1` basis functions that may be nonzero at `ξ`,
    /// together with the index of the first one.
    pub fn eval_basis(&self, xi: f64) -> Result<(usize, Vec<f64>)> {
        let p = self.degree();
        let u = &self.knots.values;
        let span = self.knots.find_span(xi)?;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = xi - u[span + 1 - j];
            right[j] = u[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((span - p, n))
    }

    /// Derivatives of orders `0..=max_order` of the active basis functions.
    /// Row `k` holds the `k`-th derivatives; rows above the degree are zero.
    pub fn eval_basis_derivatives(
        &self,
        xi: f64,
        max_order: usize,
    ) -> Result<(usize, Vec<Vec<f64>>)> {
        let p = self.degree();
        let u = &self.knots.values;
        let span = self.knots.find_span(xi)?;

        // ndu holds basis values (upper triangle) and knot differences (lower)
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - u[span + 1 - j];
            right[j] = u[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; max_order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let top = max_order.min(p);
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=top {
                let mut d = 0.0;
                let rk = r as i64 - k as i64;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as i64 - 1) <= pk as i64 { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as i64) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=top {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        Ok((span - p, ders))
    }

    /// Uniform h-refinement: every non-empty span is split into `n_subdiv`
    /// equal spans by knot insertion. Degree and existing knots are kept.
    pub fn refine_uniform(&self, n_subdiv: usize) -> Result<Self> {
        if n_subdiv == 0 {
            return Err(Error::Domain("n_subdiv must be at least 1".into()));
        }
        let p = self.degree();
        let bps = self.knots.breakpoints();
        let mut interior = Vec::new();
        for (e, w) in bps.windows(2).enumerate() {
            if e > 0 {
                let m = self.knots.multiplicity(w[0]);
                interior.extend(std::iter::repeat_n(w[0], m));
            }
            for j in 1..n_subdiv {
                interior.push(w[0] + (w[1] - w[0]) * j as f64 / n_subdiv as f64);
            }
        }
        Ok(Self::new(KnotVector::with_interior(p, &interior)?))
    }

    /// Derivative space `S^{p-1}_{α-1}` on the same breakpoints.
    pub fn derivative_space(&self) -> Result<Self> {
        Ok(Self::new(self.knots.trimmed()?))
    }
}

/// Tensor product of univariate spline spaces. Multi-indices are flattened
/// with the first factor running fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSplineSpace {
    factors: Vec<SplineSpace1D>,
}

impl TensorSplineSpace {
    pub fn new(factors: Vec<SplineSpace1D>) -> Result<Self> {
        if factors.is_empty() || factors.len() > 3 {
            return Err(Error::Validation(format!(
                "tensor space dimension must be 1, 2 or 3, got {}",
                factors.len()
            )));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[SplineSpace1D] {
        &self.factors
    }

    pub fn factor(&self, dir: usize) -> &SplineSpace1D {
        &self.factors[dir]
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn n_basis_per_dir(&self) -> Vec<usize> {
        self.factors.iter().map(SplineSpace1D::n_basis).collect()
    }

    pub fn n_basis(&self) -> usize {
        self.factors.iter().map(SplineSpace1D::n_basis).product()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.factors.iter().map(SplineSpace1D::degree).collect()
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        flatten_index(&self.n_basis_per_dir(), multi)
    }

    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        unflatten_index(&self.n_basis_per_dir(), flat)
    }

    pub fn map_factors<F>(&self, f: F) -> Result<Self>
    where
        F: FnMut(&SplineSpace1D) -> Result<SplineSpace1D>,
    {
        Self::new(self.factors.iter().map(f).collect::<Result<Vec<_>>>()?)
    }
}

pub(crate) fn flatten_index(dims: &[usize], multi: &[usize]) -> usize {
    let mut flat = 0;
    let mut stride = 1;
    for (i, &n) in multi.iter().zip(dims) {
        flat += i * stride;
        stride *= n;
    }
    flat
}

pub(crate) fn unflatten_index(dims: &[usize], mut flat: usize) -> Vec<usize> {
    dims.iter()
        .map(|&n| {
            let i = flat % n;
            flat /= n;
            i
        })
        .collect()
}

/// Evaluates a NURBS combination `Σ B_i w_i P_i / Σ B_i w_i` over a tensor space.
///
/// `basis` holds, per direction, the output of [`SplineSpace1D::eval_basis`]
/// at the evaluation point. `control_points` has one `dim`-vector per basis
/// function, flattened first-direction-fastest.
pub fn eval_nurbs(
    space: &TensorSplineSpace,
    basis: &[(usize, Vec<f64>)],
    weights: &[f64],
    control_points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let n = space.n_basis();
    if basis.len() != space.dim() {
        return Err(Error::Validation(format!(
            "expected basis values for {} directions, got {}",
            space.dim(),
            basis.len()
        )));
    }
    if weights.len() != n || control_points.len() != n {
        return Err(Error::Validation(format!(
            "space has {n} basis functions but {} weights and {} control points were given",
            weights.len(),
            control_points.len()
        )));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::Validation(format!("weights must be positive, got {w}")));
    }
    let dim = control_points.first().map_or(0, Vec::len);
    let dims = space.n_basis_per_dir();
    let counts: Vec<usize> = basis.iter().map(|(_, v)| v.len()).collect();
    let n_local: usize = counts.iter().product();
    let mut num = vec![0.0; dim];
    let mut den = 0.0;
    for local in 0..n_local {
        let lm = unflatten_index(&counts, local);
        let mut b = 1.0;
        let mut gm = Vec::with_capacity(lm.len());
        for (k, &l) in lm.iter().enumerate() {
            b *= basis[k].1[l];
            gm.push(basis[k].0 + l);
        }
        let g = flatten_index(&dims, &gm);
        let bw = b * weights[g];
        den += bw;
        for (acc, &x) in num.iter_mut().zip(&control_points[g]) {
            *acc += bw * x;
        }
    }
    Ok(num.into_iter().map(|x| x / den).collect())
}
