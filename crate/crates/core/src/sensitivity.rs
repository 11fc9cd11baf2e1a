//! Derivatives of a simple eigenpair of `K[t] u = λ M[t] u`, normalized by
//! `u⋆ᵀ M[t] u = 1` with a frozen `u⋆`.
//!
//! Order `k` solves the bordered system
//!
//! ```text
//! ⎡ K − λM   −M u ⎤ ⎡ u⁽ᵏ⁾ ⎤   ⎡ −Σ' C(k,j) (K − λM)⁽ʲ⁾ u⁽ᵏ⁻ʲ⁾       ⎤
//! ⎣ u⋆ᵀM      0   ⎦ ⎣ λ⁽ᵏ⁾ ⎦ = ⎣ −Σ_{j<k} C(k,j) u⋆ᵀ M⁽ᵏ⁻ʲ⁾ u⁽ʲ⁾    ⎦
//! ```
//!
//! where `(λM)⁽ʲ⁾ = Σᵢ C(j,i) λ⁽ⁱ⁾ M⁽ʲ⁻ⁱ⁾` and `Σ'` omits the two terms holding
//! the unknowns. The matrix is factorized once for all orders.

use std::cell::Cell;

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::Serialize;

use crate::assembly::AssembledSystem;
use crate::eigen::EigenSolution;
use crate::error::{Error, Result};
use crate::jets::binomials;

/// Default relative gap below which an eigenvalue counts as multiple.
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

const RESIDUAL_TOL: f64 = 1e-8;
const NORMALIZATION_TOL: f64 = 1e-9;

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Bordered-matrix factorizations performed on this thread so far.
pub fn factorization_count() -> usize {
    FACTORIZATIONS.with(Cell::get)
}

/// `λ⁽⁰⁾..λ⁽ⁿ⁾` and `u⁽⁰⁾..u⁽ⁿ⁾` of one mode at `t0`.
#[derive(Debug, Clone, Serialize)]
pub struct EigenpairJet {
    pub mode: usize,
    pub t0: f64,
    pub lambda: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub u_star: Vec<f64>,
}

impl EigenpairJet {
    pub fn order(&self) -> usize {
        self.lambda.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Multiplicity {
    pub simple: bool,
    pub gap: f64,
}

/// Relative spectral gap `min_j |λ_m − λ_j| / max(1, |λ_m|)` of a 1-based mode,
/// including the eigenvalues adjacent to the computed block.
pub fn check_multiplicity(base: &EigenSolution, mode: usize, gap_tol: f64) -> Multiplicity {
    let Ok(idx) = base.index(mode) else {
        return Multiplicity {
            simple: false,
            gap: 0.0,
        };
    };
    let lm = base.eigenvalues[idx];
    let others = base
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != idx)
        .map(|(_, &v)| v)
        .chain(base.next)
        .chain(base.previous);
    let dist = others.map(|v| (lm - v).abs()).fold(f64::INFINITY, f64::min);
    let gap = dist / lm.abs().max(1.0);
    Multiplicity {
        simple: gap > gap_tol,
        gap,
    }
}

/// Derivatives of mode `mode` (1-based) up to `max_order`.
pub fn eigenpair_derivatives(
    system: &AssembledSystem,
    base: &EigenSolution,
    mode: usize,
    max_order: usize,
    gap_tol: f64,
) -> Result<EigenpairJet> {
    let idx = base.index(mode)?;
    if max_order > system.order() {
        return Err(Error::Domain(format!(
            "derivative order {max_order} exceeds the assembled order {}",
            system.order()
        )));
    }
    let n = system.n_dof();
    if base.eigenvectors[idx].len() != n {
        return Err(Error::Validation(format!(
            "eigenvector length {} does not match {n} dofs",
            base.eigenvectors[idx].len()
        )));
    }
    let mult = check_multiplicity(base, mode, gap_tol);
    if !mult.simple {
        return Err(Error::Multiplicity {
            mode,
            gap: mult.gap,
            step: None,
        });
    }

    let lambda0 = base.eigenvalues[idx];
    let u0 = base.eigenvectors[idx].clone();
    let u_star = base.u_star[idx].clone();
    let k = &system.k;
    let m = &system.m;
    let k_norms: Vec<f64> = k.iter().map(|a| a.norm_fro()).collect();
    let m_norms: Vec<f64> = m.iter().map(|a| a.norm_fro()).collect();

    let mut lambda = vec![lambda0];
    let mut vectors = vec![u0.clone()];
    // ku[a][b] = K⁽ᵃ⁾ u⁽ᵇ⁾, mu likewise
    let mut ku: Vec<Vec<Vec<f64>>> = vec![Vec::new(); max_order + 1];
    let mut mu: Vec<Vec<Vec<f64>>> = vec![Vec::new(); max_order + 1];
    let push_products = |ku: &mut Vec<Vec<Vec<f64>>>, mu: &mut Vec<Vec<Vec<f64>>>, u: &[f64], b: usize| {
        for a in 0..=max_order - b {
            ku[a].push(k[a].matvec(u));
            mu[a].push(m[a].matvec(u));
        }
    };
    push_products(&mut ku, &mut mu, &u0, 0);

    if max_order == 0 {
        return Ok(EigenpairJet {
            mode,
            t0: system.t0,
            lambda,
            vectors,
            u_star,
        });
    }

    let mu0 = &mu[0][0];
    let mstar: Vec<f64> = m[0].matvec(&u_star);
    let mut bordered = Mat::<f64>::zeros(n + 1, n + 1);
    for i in 0..n {
        for (j, v) in k[0].row(i) {
            bordered[(i, j)] += v;
        }
        for (j, v) in m[0].row(i) {
            bordered[(i, j)] -= lambda0 * v;
        }
        bordered[(i, n)] = -mu0[i];
        bordered[(n, i)] = mstar[i];
    }
    let lu = bordered.partial_piv_lu();
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
    let u_diag = lu.U();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..=n {
        let v = u_diag[(i, i)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo > (n + 1) as f64 * f64::EPSILON * hi) {
        return Err(Error::NumericalRank(format!(
            "smallest pivot {lo:.3e} against largest {hi:.3e} for mode {mode}"
        )));
    }
    log::debug!("bordered system for mode {mode}: pivot ratio {:.3e}", hi / lo);

    let binom = binomials(max_order);
    for order in 1..=max_order {
        let c = &binom[order];
        // full residual sum of the order-k identity excluding the unknown terms
        let mut rhs = vec![0.0; n + 1];
        let mut scale = 0.0;
        for j in 0..=order {
            let b = order - j;
            if j == 0 {
                continue;
            }
            // K⁽ʲ⁾ u⁽ᵇ⁾
            let kv = &ku[j][b];
            for (r, v) in rhs.iter_mut().zip(kv) {
                *r -= c[j] * v;
            }
            scale += c[j] * k_norms[j] * norm(&vectors[b]);
            // −Σᵢ C(j,i) λ⁽ⁱ⁾ M⁽ʲ⁻ⁱ⁾ u⁽ᵇ⁾
            for i in 0..=j {
                if i == order {
                    continue;
                }
                let coef = c[j] * binom[j][i] * lambda[i];
                let mv = &mu[j - i][b];
                for (r, v) in rhs.iter_mut().zip(mv) {
                    *r += coef * v;
                }
                scale += (coef * m_norms[j - i]).abs() * norm(&vectors[b]);
            }
        }
        let mut norm_rhs = 0.0;
        for j in 0..order {
            norm_rhs -= c[j] * dot(&u_star, &mu[order - j][j]);
        }
        rhs[n] = norm_rhs;

        let mut x = Mat::<f64>::from_fn(n + 1, 1, |i, _| rhs[i]);
        lu.solve_in_place(x.as_mut());
        let u_k: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        let lambda_k = x[(n, 0)];
        lambda.push(lambda_k);
        push_products(&mut ku, &mut mu, &u_k, order);
        vectors.push(u_k);

        verify_order(
            order, &binom, k, &k_norms, &m_norms, &ku, &mu, &lambda, &vectors, &u_star, scale, mode,
        )?;
    }

    Ok(EigenpairJet {
        mode,
        t0: system.t0,
        lambda,
        vectors,
        u_star,
    })
}

#[allow(clippy::too_many_arguments)]
fn verify_order(
    order: usize,
    binom: &[Vec<f64>],
    k: &[crate::sparse::SymCsr],
    k_norms: &[f64],
    m_norms: &[f64],
    ku: &[Vec<Vec<f64>>],
    mu: &[Vec<Vec<f64>>],
    lambda: &[f64],
    vectors: &[Vec<f64>],
    u_star: &[f64],
    rhs_scale: f64,
    mode: usize,
) -> Result<()> {
    let n = k[0].n();
    let c = &binom[order];
    let mut res = vec![0.0; n];
    let mut scale = rhs_scale + k_norms[0] * norm(&vectors[order]);
    for j in 0..=order {
        let b = order - j;
        for (r, v) in res.iter_mut().zip(&ku[j][b]) {
            *r += c[j] * v;
        }
        for i in 0..=j {
            let coef = c[j] * binom[j][i] * lambda[i];
            for (r, v) in res.iter_mut().zip(&mu[j - i][b]) {
                *r -= coef * v;
            }
            scale += (coef * m_norms[j - i]).abs() * norm(&vectors[b]);
        }
    }
    let r = norm(&res);
    if !(r <= RESIDUAL_TOL * scale) {
        return Err(Error::NumericalRank(format!(
            "order-{order} residual {r:.3e} of mode {mode} exceeds {:.3e}",
            RESIDUAL_TOL * scale
        )));
    }
    let mut s = 0.0;
    let mut s_scale = 0.0;
    for j in 0..=order {
        s += c[j] * dot(u_star, &mu[order - j][j]);
        s_scale += c[j] * norm(u_star) * m_norms[order - j] * norm(&vectors[j]);
    }
    if !(s.abs() <= NORMALIZATION_TOL * s_scale) {
        return Err(Error::NumericalRank(format!(
            "order-{order} normalization defect {s:.3e} of mode {mode}"
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Setting;
    use crate::eigen::{solve_pencil, DEFAULT_TOL};
    use crate::space::SpaceKind;
    use crate::sparse::SymCsr;

    fn system(k: Vec<Vec<Vec<f64>>>, m: Vec<Vec<Vec<f64>>>) -> AssembledSystem {
        AssembledSystem {
            kind: SpaceKind::H1,
            t0: 0.0,
            setting: Setting::Reference,
            k: k.iter().map(|r| SymCsr::from_dense(r).unwrap()).collect(),
            m: m.iter().map(|r| SymCsr::from_dense(r).unwrap()).collect(),
        }
    }

    fn zeros(n: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; n]; n]
    }

    #[test]
    fn scalar_linear_pencil() {
        let sys = system(
            vec![vec![vec![2.0]], vec![vec![5.0]], zeros(1), zeros(1)],
            vec![vec![vec![1.0]], zeros(1), zeros(1), zeros(1)],
        );
        let base = solve_pencil(&sys.k[0], &sys.m[0], 1, DEFAULT_TOL, false).unwrap();
        let jet = eigenpair_derivatives(&sys, &base, 1, 3, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(jet.lambda, vec![2.0, 5.0, 0.0, 0.0]);
        for v in &jet.vectors[1..] {
            assert_eq!(v, &vec![0.0]);
        }
    }

    #[test]
    fn decoupled_diagonal_pencil() {
        let sys = system(
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 3.0]],
                vec![vec![1.0, 0.0], vec![0.0, 0.0]],
                zeros(2),
            ],
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], zeros(2), zeros(2)],
        );
        let base = solve_pencil(&sys.k[0], &sys.m[0], 2, DEFAULT_TOL, false).unwrap();
        let before = factorization_count();
        let jet = eigenpair_derivatives(&sys, &base, 1, 2, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(factorization_count() - before, 1);
        assert_eq!(jet.lambda, vec![1.0, 1.0, 0.0]);
        assert_eq!(jet.vectors[1], vec![0.0, 0.0]);
    }

    /// `K[t] = K₀ + tK₁` with a mass derivative; closed-form first order
    /// `λ' = uᵀ(K₁ − λM₁)u` and second order from dense re-solves.
    #[test]
    fn first_order_matches_rayleigh_formula() {
        let k0 = vec![vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]];
        let k1 = vec![vec![0.5, 0.2, 0.0], vec![0.2, -0.3, 0.1], vec![0.0, 0.1, 0.7]];
        let m0 = vec![vec![4.0, 1.0, 0.0], vec![1.0, 4.0, 1.0], vec![0.0, 1.0, 4.0]];
        let m1 = vec![vec![0.3, 0.0, 0.1], vec![0.0, 0.2, 0.0], vec![0.1, 0.0, -0.1]];
        let sys = system(vec![k0.clone(), k1.clone(), zeros(3)], vec![m0.clone(), m1.clone(), zeros(3)]);
        let base = solve_pencil(&sys.k[0], &sys.m[0], 3, DEFAULT_TOL, false).unwrap();
        for mode in 1..=3 {
            let jet = eigenpair_derivatives(&sys, &base, mode, 2, DEFAULT_GAP_TOL).unwrap();
            let u = &base.eigenvectors[mode - 1];
            let l = base.eigenvalues[mode - 1];
            let expect = sys.k[1].bilinear(u, u) - l * sys.m[1].bilinear(u, u);
            assert!((jet.lambda[1] - expect).abs() < 1e-13);

            let at = |t: f64| {
                let comb = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                    a.iter()
                        .zip(b)
                        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + t * y).collect())
                        .collect()
                };
                let s = solve_pencil(
                    &SymCsr::from_dense(&comb(&k0, &k1)).unwrap(),
                    &SymCsr::from_dense(&comb(&m0, &m1)).unwrap(),
                    3,
                    DEFAULT_TOL,
                    false,
                )
                .unwrap();
                s.eigenvalues[mode - 1]
            };
            let h = 1e-3;
            let fd2 = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
            assert!((jet.lambda[2] - fd2).abs() < 1e-5 * fd2.abs().max(1.0), "{} vs {fd2}", jet.lambda[2]);
        }
    }

    #[test]
    fn multiplicity_reporting() {
        let k = SymCsr::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]]).unwrap();
        let m = SymCsr::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let s = solve_pencil(&k, &m, 3, DEFAULT_TOL, false).unwrap();
        let r = check_multiplicity(&s, 2, DEFAULT_GAP_TOL);
        assert_eq!(r.gap, 0.5);
        assert!(r.simple);

        let k = SymCsr::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0 + 1e-12, 0.0], vec![0.0, 0.0, 3.0]])
            .unwrap();
        let s = solve_pencil(&k, &m, 3, DEFAULT_TOL, false).unwrap();
        assert!(!check_multiplicity(&s, 1, 1e-8).simple);
        let sys = system(
            vec![
                vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0 + 1e-12, 0.0], vec![0.0, 0.0, 3.0]],
                zeros(3),
            ],
            vec![vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], zeros(3)],
        );
        let err = eigenpair_derivatives(&sys, &s, 1, 1, 1e-8).unwrap_err();
        assert!(matches!(err, Error::Multiplicity { mode: 1, .. }));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn order_beyond_assembled_stack_is_rejected() {
        let sys = system(vec![vec![vec![2.0]]], vec![vec![vec![1.0]]]);
        let base = solve_pencil(&sys.k[0], &sys.m[0], 1, DEFAULT_TOL, false).unwrap();
        assert!(matches!(
            eigenpair_derivatives(&sys, &base, 1, 1, DEFAULT_GAP_TOL),
            Err(Error::Domain(_))
        ));
    }
}
