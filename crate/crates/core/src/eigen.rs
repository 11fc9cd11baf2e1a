//! Generalized symmetric eigenproblem `K u = λ M u`.

use faer::{Mat, Side};
use serde::Serialize;

use crate::assembly::AssembledSystem;
use crate::error::{Error, Result};
use crate::sparse::SymCsr;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default residual tolerance of [`solve_gevp`].
pub const DEFAULT_TOL: f64 = 1e-9;

/// Eigenvalues at most this fraction of the largest one count as kernel.
const KERNEL_REL: f64 = 1e-8;

/// Smallest eigenpairs, ascending. Modes are numbered from 1.
#[derive(Debug, Clone, Serialize)]
pub struct EigenSolution {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    /// Normalization vectors `u⋆`, one per mode, with `u⋆ᵀ M u = 1`.
    pub u_star: Vec<Vec<f64>>,
    /// Number of numerically zero eigenvalues of the whole pencil.
    pub null_count: usize,
    /// Eigenvalues skipped before the first returned one.
    pub offset: usize,
    /// Eigenvalue directly after the last returned one, if any.
    pub next: Option<f64>,
    /// Eigenvalue directly before the first returned one, if any.
    pub previous: Option<f64>,
}

impl EigenSolution {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Converts a 1-based mode number to a vector index.
    pub fn index(&self, mode: usize) -> Result<usize> {
        if mode == 0 || mode > self.len() {
            return Err(Error::Domain(format!(
                "mode {mode} outside 1..={} of the computed eigenpairs",
                self.len()
            )));
        }
        Ok(mode - 1)
    }

    pub fn eigenvalue(&self, mode: usize) -> Result<f64> {
        Ok(self.eigenvalues[self.index(mode)?])
    }

    pub fn eigenvector(&self, mode: usize) -> Result<&[f64]> {
        Ok(&self.eigenvectors[self.index(mode)?])
    }
}

/// The `count` smallest eigenpairs of `K⁽⁰⁾, M⁽⁰⁾`.
pub fn solve_gevp(system: &AssembledSystem, count: usize, tol: f64) -> Result<EigenSolution> {
    solve_pencil(&system.k[0], &system.m[0], count, tol, false)
}

/// The `count` smallest eigenpairs above the numerical kernel.
pub fn solve_gevp_beyond_kernel(
    system: &AssembledSystem,
    count: usize,
    tol: f64,
) -> Result<EigenSolution> {
    solve_pencil(&system.k[0], &system.m[0], count, tol, true)
}

/// Dense solve through the Cholesky reduction `L⁻¹ K L⁻ᵀ`.
pub fn solve_pencil(
    k: &SymCsr,
    m: &SymCsr,
    count: usize,
    tol: f64,
    skip_kernel: bool,
) -> Result<EigenSolution> {
    let n = k.n();
    if m.n() != n {
        return Err(Error::Validation(format!(
            "stiffness has {n} rows but mass has {}",
            m.n()
        )));
    }
    if count == 0 || count > n {
        return Err(Error::Domain(format!("eigenpair count {count} outside 1..={n}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let m_dense = m.to_dense();
    let llt = m_dense
        .llt(Side::Lower)
        .map_err(|e| Error::Definiteness(format!("Cholesky factorization of M failed: {e:?}")))?;
    let l = llt.L();

    let mut x = k.to_dense();
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut a = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(a.as_mut());
    let a = Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Solver(format!("symmetric eigensolver failed: {e:?}")))?;
    let s = evd.S();
    let all: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let scale = all.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let null_count = all.iter().filter(|v| v.abs() <= KERNEL_REL * scale).count();
    let offset = if skip_kernel { null_count } else { 0 };
    if offset + count > n {
        return Err(Error::Domain(format!(
            "only {} eigenpairs lie beyond the {null_count}-dimensional kernel",
            n - offset
        )));
    }

    let mut q = evd.U().subcols(offset, count).to_owned();
    l.transpose().solve_upper_triangular_in_place(q.as_mut());

    let k_norm = k.norm_fro();
    let m_norm = m.norm_fro();
    let mut eigenvalues = Vec::with_capacity(count);
    let mut eigenvectors = Vec::with_capacity(count);
    for c in 0..count {
        let lambda = all[offset + c];
        let mut u: Vec<f64> = (0..n).map(|i| q[(i, c)]).collect();
        fix_sign(&mut u);
        let norm = m.bilinear(&u, &u).sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        let ku = k.matvec(&u);
        let mu = m.matvec(&u);
        let res = ku
            .iter()
            .zip(&mu)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let u_norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = tol * (k_norm + lambda.abs() * m_norm) * u_norm;
        if !(res <= bound) {
            return Err(Error::Solver(format!(
                "residual {res:.3e} of mode {} exceeds {bound:.3e}",
                c + 1
            )));
        }
        eigenvalues.push(lambda);
        eigenvectors.push(u);
    }
    log::debug!(
        "solved {n}-dof pencil: {count} pairs from offset {offset}, kernel dimension {null_count}"
    );
    Ok(EigenSolution {
        u_star: eigenvectors.clone(),
        eigenvalues,
        eigenvectors,
        null_count,
        offset,
        next: all.get(offset + count).copied(),
        previous: offset.checked_sub(1).map(|i| all[i]),
    })
}

/// Makes the largest-magnitude entry (first on ties) positive.
fn fix_sign(u: &mut [f64]) {
    let mut best = 0;
    for (i, v) in u.iter().enumerate() {
        if v.abs() > u[best].abs() {
            best = i;
        }
    }
    if u[best] < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
}

/// `f = √λ c₀ / 2π` in Hz.
pub fn frequency(lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("eigenvalue {lambda} is negative")));
    }
    Ok(lambda.sqrt() * SPEED_OF_LIGHT / (2.0 * std::f64::consts::PI))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::quadrature::QuadratureRule;
    use crate::shapes;
    use crate::space::{DiscreteSpace, SpaceKind};

    fn dense(rows: &[Vec<f64>]) -> SymCsr {
        SymCsr::from_dense(rows).unwrap()
    }

    #[test]
    fn diagonal_pencil() {
        let k = dense(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let m = dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = solve_pencil(&k, &m, 2, DEFAULT_TOL, false).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 2.0]);
        assert_eq!(s.eigenvectors[0], vec![1.0, 0.0]);
        assert_eq!(s.next, None);
    }

    #[test]
    fn doubling_mass_halves_eigenvalues() {
        let k = dense(&[vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]]);
        let m = dense(&[vec![4.0, 1.0, 0.0], vec![1.0, 4.0, 1.0], vec![0.0, 1.0, 4.0]]);
        let a = solve_pencil(&k, &m, 3, DEFAULT_TOL, false).unwrap();
        let b = solve_pencil(&k, &m.scale(2.0), 3, DEFAULT_TOL, false).unwrap();
        for i in 0..3 {
            assert!((b.eigenvalues[i] - 0.5 * a.eigenvalues[i]).abs() < 1e-14);
            let j = if i == 1 { 0 } else { 1 };
            let ratio = a.eigenvectors[i][j] / b.eigenvectors[i][j];
            for j in 0..3 {
                assert!((a.eigenvectors[i][j] - ratio * b.eigenvectors[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interval_laplacian_spectrum() {
        let g = shapes::interval(1.0, 1.0).unwrap();
        let space = DiscreteSpace::build(&g, SpaceKind::H1, &[2], 64).unwrap();
        let sys = assemble(&space, &g, 0.0, 0, &QuadratureRule::for_degrees(&[2])).unwrap();
        let s = solve_gevp(&sys, 3, DEFAULT_TOL).unwrap();
        for (i, lambda) in s.eigenvalues.iter().enumerate() {
            let exact = ((i + 1) as f64 * std::f64::consts::PI).powi(2);
            assert!((lambda / exact - 1.0).abs() <= 1e-6, "{lambda} vs {exact}");
        }
        for i in 0..3 {
            let u = &s.eigenvectors[i];
            assert!((sys.m[0].bilinear(u, u) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(sys.m[0].bilinear(u, &s.eigenvectors[j]).abs() < 1e-10);
            }
            let big = u.iter().fold(0.0_f64, |a, v| if v.abs() > a.abs() { *v } else { a });
            assert!(big > 0.0);
        }
        let again = solve_gevp(&sys, 3, DEFAULT_TOL).unwrap();
        assert_eq!(again.eigenvalues, s.eigenvalues);
        assert_eq!(again.eigenvectors, s.eigenvectors);
    }

    #[test]
    fn indefinite_mass_and_bad_count() {
        let k = dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = dense(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert!(matches!(
            solve_pencil(&k, &m, 1, DEFAULT_TOL, false),
            Err(Error::Definiteness(_))
        ));
        assert!(matches!(
            solve_pencil(&k, &k, 3, DEFAULT_TOL, false),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            solve_pencil(&k, &k, 0, DEFAULT_TOL, false),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kernel_is_counted_and_skipped() {
        let k = dense(&[vec![1.0, -1.0, 0.0], vec![-1.0, 1.0, 0.0], vec![0.0, 0.0, 3.0]]);
        let m = dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let s = solve_pencil(&k, &m, 2, DEFAULT_TOL, true).unwrap();
        assert_eq!(s.null_count, 1);
        assert!((s.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - 3.0).abs() < 1e-14);
        assert!(s.previous.unwrap().abs() < 1e-14);
    }

    #[test]
    fn frequencies() {
        assert_eq!(frequency(0.0).unwrap(), 0.0);
        assert!((frequency(1.0).unwrap() / 47_713_451.59 - 1.0).abs() < 1e-10);
        let l = (2.0 * std::f64::consts::PI / SPEED_OF_LIGHT).powi(2);
        assert!((frequency(l).unwrap() - 1.0).abs() < 1e-12);
        assert!(frequency(-1.0).is_err());
    }
}
