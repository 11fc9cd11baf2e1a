//! Truncated derivative stacks ("jets") of scalar and matrix functions of `t`.
//!
//! Entry `k` of a jet holds the `k`-th derivative value at the expansion
//! point, not the Taylor coefficient; division by `k!` happens only in
//! [`ScalarJet::taylor_eval`] and [`MatrixJet::taylor_eval`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row `n` of Pascal's triangle for all `n ≤ order`.
pub fn binomials(order: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
    for n in 0..=order {
        let mut row = vec![1.0; n + 1];
        for k in 1..n {
            row[k] = rows[n - 1][k - 1] + rows[n - 1][k];
        }
        rows.push(row);
    }
    rows
}

fn factorials(order: usize) -> Vec<f64> {
    let mut f = vec![1.0; order + 1];
    for k in 1..=order {
        f[k] = f[k - 1] * k as f64;
    }
    f
}

fn check_orders(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Validation(format!("jet orders differ: {a} and {b}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarJet {
    coeffs: Vec<f64>,
}

impl ScalarJet {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a jet has at least one coefficient");
        Self { coeffs }
    }

    pub fn constant(value: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = value;
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_orders(self.order(), other.order())?;
        Ok(Self::new(
            self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_orders(self.order(), other.order())?;
        Ok(Self::new(
            self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_orders(self.order(), other.order())?;
        let n = self.order();
        let binom = binomials(n);
        let coeffs = (0..=n)
            .map(|k| {
                (0..=k)
                    .map(|j| binom[k][j] * self.coeffs[j] * other.coeffs[k - j])
                    .sum()
            })
            .collect();
        Ok(Self::new(coeffs))
    }

    /// Derivative stack of `1 / x(t)`.
    pub fn recip(&self) -> Result<Self> {
        let x0 = self.coeffs[0];
        if x0 == 0.0 || !x0.is_finite() {
            return Err(Error::Singular {
                op: "jet_recip",
                detail: format!("zeroth coefficient is {x0}"),
            });
        }
        let n = self.order();
        let binom = binomials(n);
        let mut y = vec![0.0; n + 1];
        y[0] = 1.0 / x0;
        for k in 1..=n {
            let s: f64 = (1..=k).map(|j| binom[k][j] * self.coeffs[j] * y[k - j]).sum();
            y[k] = -s / x0;
        }
        Ok(Self::new(y))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * factor).collect())
    }

    /// `Σ_k c_k δᵏ / k!`.
    pub fn taylor_eval(&self, delta: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for (k, c) in self.coeffs.iter().enumerate() {
            if k > 0 {
                term *= delta / k as f64;
            }
            sum += c * term;
        }
        sum
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixJet {
    coeffs: Vec<DMatrix<f64>>,
}

impl MatrixJet {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| Error::Validation("a jet has at least one coefficient".into()))?;
        let shape = first.shape();
        if coeffs.iter().any(|c| c.shape() != shape) {
            return Err(Error::Validation("jet coefficients differ in shape".into()));
        }
        Ok(Self { coeffs })
    }

    /// Jet of `J0 + t·JV` expanded at `t0`.
    pub fn from_affine(j0: &DMatrix<f64>, jv: &DMatrix<f64>, t0: f64, order: usize) -> Self {
        assert_eq!(j0.shape(), jv.shape(), "affine jet parts differ in shape");
        let mut coeffs = vec![DMatrix::zeros(j0.nrows(), j0.ncols()); order + 1];
        coeffs[0] = j0 + jv * t0;
        if order >= 1 {
            coeffs[1] = jv.clone();
        }
        Self { coeffs }
    }

    pub fn constant(m: DMatrix<f64>, order: usize) -> Self {
        let mut coeffs = vec![DMatrix::zeros(m.nrows(), m.ncols()); order + 1];
        coeffs[0] = m;
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn value(&self) -> &DMatrix<f64> {
        &self.coeffs[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs[0].shape()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_orders(self.order(), other.order())?;
        if self.shape() != other.shape() {
            return Err(Error::Validation("jet shapes differ".into()));
        }
        Self::new(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_orders(self.order(), other.order())?;
        if self.shape().1 != other.shape().0 {
            return Err(Error::Validation(format!(
                "cannot multiply jets of shapes {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let n = self.order();
        let binom = binomials(n);
        let mut coeffs = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let mut acc = DMatrix::zeros(self.shape().0, other.shape().1);
            for j in 0..=k {
                acc.gemm(binom[k][j], &self.coeffs[j], &other.coeffs[k - j], 1.0);
            }
            coeffs.push(acc);
        }
        Self::new(coeffs)
    }

    /// Derivative stack of `X(t)⁻¹`.
    pub fn inv(&self) -> Result<Self> {
        let (r, c) = self.shape();
        if r != c {
            return Err(Error::Validation("only square jets can be inverted".into()));
        }
        let x0 = &self.coeffs[0];
        let y0 = checked_inverse(x0).ok_or_else(|| Error::Singular {
            op: "jet_inv",
            detail: format!("zeroth coefficient is singular: {x0}"),
        })?;
        let n = self.order();
        let binom = binomials(n);
        let mut y: Vec<DMatrix<f64>> = Vec::with_capacity(n + 1);
        y.push(y0);
        for k in 1..=n {
            let mut s = DMatrix::zeros(r, r);
            for j in 1..=k {
                if self.coeffs[j].iter().all(|v| *v == 0.0) {
                    continue;
                }
                s.gemm(binom[k][j], &self.coeffs[j], &y[k - j], 1.0);
            }
            y.push(-(&y[0] * s));
        }
        Self::new(y)
    }

    /// Derivative stack of `det X(t)` for `d ≤ 3`, by cofactor expansion.
    pub fn det(&self) -> Result<ScalarJet> {
        let (r, c) = self.shape();
        if r != c || r == 0 || r > 3 {
            return Err(Error::Unsupported(format!(
                "jet determinant needs a square matrix of size 1 to 3, got {r}×{c}"
            )));
        }
        let e = |i: usize, j: usize| ScalarJet::new(self.coeffs.iter().map(|m| m[(i, j)]).collect());
        let minor = |a: (usize, usize), b: (usize, usize), cc: (usize, usize), d: (usize, usize)| {
            e(a.0, a.1).mul(&e(d.0, d.1))?.sub(&e(b.0, b.1).mul(&e(cc.0, cc.1))?)
        };
        match r {
            1 => Ok(e(0, 0)),
            2 => minor((0, 0), (0, 1), (1, 0), (1, 1)),
            _ => {
                let c0 = minor((1, 1), (1, 2), (2, 1), (2, 2))?;
                let c1 = minor((1, 0), (1, 2), (2, 0), (2, 2))?;
                let c2 = minor((1, 0), (1, 1), (2, 0), (2, 1))?;
                e(0, 0)
                    .mul(&c0)?
                    .sub(&e(0, 1).mul(&c1)?)?
                    .add(&e(0, 2).mul(&c2)?)
            }
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(DMatrix::transpose).collect(),
        }
    }

    /// Derivative stack of `s(t)·X(t)`.
    pub fn scale(&self, s: &ScalarJet) -> Result<Self> {
        check_orders(self.order(), s.order())?;
        let n = self.order();
        let binom = binomials(n);
        let (r, c) = self.shape();
        let coeffs = (0..=n)
            .map(|k| {
                let mut acc = DMatrix::zeros(r, c);
                for j in 0..=k {
                    acc += &self.coeffs[k - j] * (binom[k][j] * s.coeffs[j]);
                }
                acc
            })
            .collect();
        Self::new(coeffs)
    }

    /// `Σ_k c_k δᵏ / k!`.
    pub fn taylor_eval(&self, delta: f64) -> DMatrix<f64> {
        let fact = factorials(self.order());
        let mut sum = DMatrix::zeros(self.shape().0, self.shape().1);
        for (k, c) in self.coeffs.iter().enumerate() {
            sum += c * (delta.powi(k as i32) / fact[k]);
        }
        sum
    }
}

/// Inverse of a small matrix, `None` when it is numerically singular
/// (determinant below roundoff relative to the Hadamard bound).
pub(crate) fn checked_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let det = m.determinant();
    let hadamard: f64 = m.column_iter().map(|c| c.norm()).product();
    if hadamard == 0.0 || det.abs() <= 64.0 * f64::EPSILON * hadamard {
        return None;
    }
    m.clone().try_inverse()
}

/// Derivative stack of `A[t] = det(G)·G⁻¹G⁻ᵀ`.
pub fn a_jet(g: &MatrixJet) -> Result<MatrixJet> {
    let inv = g.inv()?;
    let det = g.det()?;
    inv.mul(&inv.transpose())?.scale(&det)
}

/// Derivative stack of `C[t] = det(G)⁻¹·GᵀG`.
pub fn c_jet(g: &MatrixJet) -> Result<MatrixJet> {
    let det = g.det()?;
    let recip = det.recip().map_err(|e| match e {
        Error::Singular { detail, .. } => Error::Singular { op: "c_jet", detail },
        other => other,
    })?;
    g.transpose().mul(g)?.scale(&recip)
}

/// First derivatives of `det G`, `A` and `C` for `G[t] = G0 + t·JV`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstDerivatives {
    pub d_det: f64,
    pub d_a: DMatrix<f64>,
    pub d_c: DMatrix<f64>,
}

struct Pointwise {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    det: f64,
    /// `JV·G⁻¹`
    vg: DMatrix<f64>,
}

fn pointwise(g0: &DMatrix<f64>, jv: &DMatrix<f64>, t: f64) -> Result<Pointwise> {
    let g = g0 + jv * t;
    let g_inv = checked_inverse(&g).ok_or_else(|| Error::Singular {
        op: "closed_form",
        detail: format!("Jacobian is singular at t = {t}"),
    })?;
    let det = g.determinant();
    let vg = jv * &g_inv;
    Ok(Pointwise { g, g_inv, det, vg })
}

pub fn closed_form_first(g0: &DMatrix<f64>, jv: &DMatrix<f64>, t: f64) -> Result<FirstDerivatives> {
    let p = pointwise(g0, jv, t)?;
    let tau = p.vg.trace();
    let a = &p.g_inv * p.g_inv.transpose() * p.det;
    let c = p.g.transpose() * &p.g / p.det;
    let gva = &p.g_inv * jv * &a;
    let d_a = &a * tau - &gva - gva.transpose();
    let vtg = jv.transpose() * &p.g;
    let d_c = -&c * tau + (&vtg + vtg.transpose()) / p.det;
    Ok(FirstDerivatives {
        d_det: tau * p.det,
        d_a,
        d_c,
    })
}

/// `d²C/dt²` from the trace formula.
pub fn closed_form_second_c(g0: &DMatrix<f64>, jv: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let p = pointwise(g0, jv, t)?;
    let tau = p.vg.trace();
    let sigma = (&p.vg * &p.vg).trace();
    let c = p.g.transpose() * &p.g / p.det;
    let sym = jv.transpose() * &p.g + p.g.transpose() * jv;
    let d_c = -&c * tau + &sym / p.det;
    Ok(&c * sigma - d_c * tau - sym * (tau / p.det) + jv.transpose() * jv * (2.0 / p.det))
}

/// `d³C/dt³` from the trace formula, including the triple-product trace.
pub fn closed_form_third_c(g0: &DMatrix<f64>, jv: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let p = pointwise(g0, jv, t)?;
    let s = 1.0 / p.det;
    let vg2 = &p.vg * &p.vg;
    let tau = p.vg.trace();
    let sigma = vg2.trace();
    let rho = (&vg2 * &p.vg).trace();
    let second_recip = s * (tau * tau + sigma);
    let gtg_coeff = -tau * second_recip - 2.0 * s * (tau * sigma + rho);
    Ok(p.g.transpose() * &p.g * gtg_coeff - jv.transpose() * jv * (6.0 * s * tau)
        + jv.transpose() * &p.g * (3.0 * second_recip)
        + p.g.transpose() * jv * (3.0 * second_recip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scaled_identity_jet(d: usize, order: usize) -> MatrixJet {
        let i = DMatrix::identity(d, d);
        MatrixJet::from_affine(&i, &i, 0.0, order)
    }

    fn assert_scalar_multiples(jet: &MatrixJet, expected: &[f64], tol: f64) {
        let d = jet.shape().0;
        for (c, e) in jet.coeffs().iter().zip(expected) {
            assert!((c - DMatrix::identity(d, d) * *e).amax() <= tol, "{c} vs {e}");
        }
    }

    fn random_matrix(d: usize, seed: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |i, j| seed[(i * 3 + j) % seed.len()])
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax() / b.amax().max(1e-300)
    }

    #[test]
    fn affine_jet_layout() {
        let j0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let jv = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, -1.0, 2.0]);
        let jet = MatrixJet::from_affine(&j0, &jv, 0.3, 3);
        assert_eq!(jet.coeffs()[0], &j0 + &jv * 0.3);
        assert_eq!(jet.coeffs()[1], jv);
        assert_eq!(jet.coeffs()[2].amax(), 0.0);
        let constant = MatrixJet::from_affine(&j0, &DMatrix::zeros(2, 2), 0.7, 2);
        assert_eq!(constant, MatrixJet::constant(j0, 2));
    }

    #[test]
    fn inverse_of_scaled_identity() {
        for d in 1..=3 {
            let inv = scaled_identity_jet(d, 3).inv().unwrap();
            assert_scalar_multiples(&inv, &[1.0, -1.0, 2.0, -6.0], 1e-15);
        }
    }

    #[test]
    fn determinant_of_scaled_identity() {
        let det = scaled_identity_jet(2, 3).det().unwrap();
        assert_eq!(det.coeffs(), &[1.0, 2.0, 2.0, 0.0]);
        let det3 = scaled_identity_jet(3, 4).det().unwrap();
        assert_eq!(det3.coeffs(), &[1.0, 3.0, 6.0, 6.0, 0.0]);
    }

    #[test]
    fn product_with_inverse_is_identity() {
        let j0 = random_matrix(3, &[1.3, 0.2, -0.4, 0.1, 0.9, 0.3, -0.2, 0.5, 1.1]);
        let jv = random_matrix(3, &[0.3, -0.1, 0.2, 0.05, 0.25, -0.3, 0.1, 0.0, -0.2]);
        let g = MatrixJet::from_affine(&j0, &jv, 0.4, 6);
        let id = g.mul(&g.inv().unwrap()).unwrap();
        assert!((&id.coeffs()[0] - DMatrix::identity(3, 3)).amax() <= 1e-13);
        for c in &id.coeffs()[1..] {
            assert!(c.amax() <= 1e-13 * 720.0, "{c}");
        }
    }

    #[test]
    fn singular_zeroth_coefficient_is_reported() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let g = MatrixJet::from_affine(&z, &DMatrix::identity(2, 2), 0.0, 2);
        assert!(matches!(g.inv(), Err(Error::Singular { op: "jet_inv", .. })));
        assert!(matches!(
            ScalarJet::new(vec![0.0, 1.0]).recip(),
            Err(Error::Singular { op: "jet_recip", .. })
        ));
        assert!(matches!(c_jet(&g), Err(Error::Singular { op: "c_jet", .. })));
    }

    #[test]
    fn a_and_c_under_uniform_scaling() {
        let a3 = a_jet(&scaled_identity_jet(3, 4)).unwrap();
        assert_scalar_multiples(&a3, &[1.0, 1.0, 0.0, 0.0, 0.0], 1e-14);
        let a2 = a_jet(&scaled_identity_jet(2, 4)).unwrap();
        assert_scalar_multiples(&a2, &[1.0, 0.0, 0.0, 0.0, 0.0], 1e-14);
        let c3 = c_jet(&scaled_identity_jet(3, 3)).unwrap();
        assert_scalar_multiples(&c3, &[1.0, -1.0, 2.0, -6.0], 1e-14);
    }

    #[test]
    fn static_jets_are_constant() {
        let j0 = random_matrix(3, &[1.3, 0.2, -0.4, 0.1, 0.9, 0.3, -0.2, 0.5, 1.1]);
        let g = MatrixJet::constant(j0.clone(), 3);
        let a = a_jet(&g).unwrap();
        let expected = j0.clone().try_inverse().unwrap();
        let expected = &expected * expected.transpose() * j0.determinant();
        assert!(rel_err(&a.coeffs()[0], &expected) < 1e-14);
        for k in 1..=3 {
            assert_eq!(a.coeffs()[k].amax(), 0.0);
            assert_eq!(c_jet(&g).unwrap().coeffs()[k].amax(), 0.0);
        }
        let zero = DMatrix::zeros(3, 3);
        let first = closed_form_first(&j0, &zero, 0.5).unwrap();
        assert_eq!(first.d_det, 0.0);
        assert_eq!(first.d_a.amax(), 0.0);
        assert_eq!(first.d_c.amax(), 0.0);
        assert_eq!(closed_form_second_c(&j0, &zero, 0.5).unwrap().amax(), 0.0);
        assert_eq!(closed_form_third_c(&j0, &zero, 0.5).unwrap().amax(), 0.0);
    }

    #[test]
    fn closed_forms_under_scaling() {
        let i2 = DMatrix::identity(2, 2);
        assert_eq!(closed_form_first(&i2, &i2, 0.0).unwrap().d_det, 2.0);
        let i3 = DMatrix::identity(3, 3);
        assert!((closed_form_second_c(&i3, &i3, 0.0).unwrap() - &i3 * 2.0).amax() < 1e-15);
        assert!((closed_form_third_c(&i3, &i3, 0.0).unwrap() + &i3 * 6.0).amax() < 1e-14);
    }

    #[test]
    fn taylor_evaluation() {
        let s = ScalarJet::new(vec![2.0, 3.0]);
        assert_eq!(s.taylor_eval(0.5), 3.5);
        assert_eq!(s.taylor_eval(0.0), 2.0);
        // e^δ from its derivative stack
        let e = ScalarJet::new(vec![1.0; 15]);
        assert!((e.taylor_eval(0.3) - 0.3f64.exp()).abs() < 1e-15);
        let m = MatrixJet::from_affine(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2), 0.0, 2);
        assert_eq!(m.taylor_eval(0.5), DMatrix::identity(2, 2) * 1.5);
    }

    #[test]
    fn binomial_rows() {
        let b = binomials(5);
        assert_eq!(b[5], vec![1.0, 5.0, 10.0, 10.0, 5.0, 1.0]);
    }

    #[test]
    fn c_jet_coefficients_are_symmetric() {
        let j0 = random_matrix(3, &[1.3, 0.2, -0.4, 0.1, 0.9, 0.3, -0.2, 0.5, 1.1]);
        let jv = random_matrix(3, &[0.3, -0.1, 0.2, 0.05, 0.25, -0.3, 0.1, 0.0, -0.2]);
        let g = MatrixJet::from_affine(&j0, &jv, 0.2, 6);
        for jet in [a_jet(&g).unwrap(), c_jet(&g).unwrap()] {
            for c in jet.coeffs() {
                assert!((c - c.transpose()).amax() <= 1e-14 * c.amax().max(1.0));
            }
        }
    }

    fn direct_a(g: &DMatrix<f64>) -> DMatrix<f64> {
        let inv = g.clone().try_inverse().unwrap();
        &inv * inv.transpose() * g.determinant()
    }

    fn direct_c(g: &DMatrix<f64>) -> DMatrix<f64> {
        g.transpose() * g / g.determinant()
    }

    fn arb_case() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, f64)> {
        (2usize..=3)
            .prop_flat_map(|d| {
                (
                    Just(d),
                    prop::collection::vec(-0.3f64..0.3, d * d),
                    prop::collection::vec(-1.0f64..1.0, d * d),
                    0.0f64..1.0,
                )
            })
            .prop_map(|(d, p, v, t)| {
                let g0 = DMatrix::identity(d, d) + DMatrix::from_row_slice(d, d, &p);
                let mut jv = DMatrix::from_row_slice(d, d, &v);
                let n = jv.norm();
                if n > 0.4 {
                    jv *= 0.4 / n;
                }
                (g0, jv, t)
            })
    }

    proptest! {
        #[test]
        fn closed_forms_match_jets((g0, jv, t) in arb_case()) {
            let g = MatrixJet::from_affine(&g0, &jv, t, 3);
            let a = a_jet(&g).unwrap();
            let c = c_jet(&g).unwrap();
            let det = g.det().unwrap();
            let first = closed_form_first(&g0, &jv, t).unwrap();
            prop_assert!((first.d_det - det.coeffs()[1]).abs() <= 1e-12 * det.coeffs()[1].abs().max(1.0));
            prop_assert!(rel_err(&first.d_a, &a.coeffs()[1]) <= 1e-11);
            prop_assert!(rel_err(&first.d_c, &c.coeffs()[1]) <= 1e-11);
            prop_assert!(rel_err(&closed_form_second_c(&g0, &jv, t).unwrap(), &c.coeffs()[2]) <= 1e-11);
            prop_assert!(rel_err(&closed_form_third_c(&g0, &jv, t).unwrap(), &c.coeffs()[3]) <= 1e-11);
        }

        #[test]
        fn jets_match_finite_differences((g0, jv, t) in arb_case()) {
            let t = t.clamp(0.01, 0.99);
            let g = MatrixJet::from_affine(&g0, &jv, t, 3);
            let a = a_jet(&g).unwrap();
            let c = c_jet(&g).unwrap();
            let at = |s: f64| &g0 + &jv * s;
            for (jet, f) in [(&a, direct_a as fn(&DMatrix<f64>) -> DMatrix<f64>), (&c, direct_c)] {
                let h = 1e-5;
                let d1 = (f(&at(t + h)) - f(&at(t - h))) / (2.0 * h);
                let scale = jet.coeffs()[0].amax();
                prop_assert!((&d1 - &jet.coeffs()[1]).amax() <= 1e-6 * scale);
                // second differences at h = 1e-5 sit at the roundoff floor (≈ eps/h²)
                let h2 = 1e-4;
                let d2 = (f(&at(t + h2)) - f(&at(t)) * 2.0 + f(&at(t - h2))) / (h2 * h2);
                prop_assert!((&d2 - &jet.coeffs()[2]).amax() <= 1e-6 * scale);
                let h3 = 1e-3;
                let d3 = (f(&at(t + 2.0 * h3)) - f(&at(t + h3)) * 2.0 + f(&at(t - h3)) * 2.0
                    - f(&at(t - 2.0 * h3)))
                    / (2.0 * h3 * h3 * h3);
                prop_assert!((&d3 - &jet.coeffs()[3]).amax() <= 1e-4 * scale);
            }
        }

        #[test]
        fn trace_recurrence((g0, jv, t) in arb_case()) {
            // d/dt tr(JV G⁻¹) = −tr((JV G⁻¹)²)
            let g = MatrixJet::from_affine(&g0, &jv, t, 1);
            let inv = g.inv().unwrap();
            let d_tau = (&jv * &inv.coeffs()[1]).trace();
            let vg = &jv * &inv.coeffs()[0];
            let sigma = (&vg * &vg).trace();
            prop_assert!((d_tau + sigma).abs() <= 1e-10);
        }

        #[test]
        fn inverse_and_det_are_consistent((g0, jv, t) in arb_case()) {
            // det(G)·det(G⁻¹) ≡ 1 through order 5
            let g = MatrixJet::from_affine(&g0, &jv, t, 5);
            let prod = g.det().unwrap().mul(&g.inv().unwrap().det().unwrap()).unwrap();
            prop_assert!((prod.coeffs()[0] - 1.0).abs() <= 1e-13);
            for c in &prod.coeffs()[1..] {
                prop_assert!(c.abs() <= 1e-11);
            }
        }
    }
}
