//! Taylor prediction, uniform-distribution moments, correlation matching and
//! mode tracking along the morph.

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, assemble_direct, AssembledSystem};
use crate::eigen::{solve_gevp, solve_gevp_beyond_kernel, solve_pencil, EigenSolution, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::geometry::MorphGeometry;
use crate::quadrature::QuadratureRule;
use crate::sensitivity::{check_multiplicity, eigenpair_derivatives, EigenpairJet};
use crate::space::{DiscreteSpace, SpaceKind};
use crate::sparse::SymCsr;

/// How a geometry is discretized: space kind, solution degrees (one entry
/// for all directions or one per direction), uniform refinement and an
/// optional fixed number of quadrature points per direction (`p + 1` otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub kind: SpaceKind,
    pub degrees: Vec<usize>,
    pub refine: usize,
    pub quad: Option<usize>,
}

impl Discretization {
    pub fn new(kind: SpaceKind, degree: usize, refine: usize) -> Self {
        Self {
            kind,
            degrees: vec![degree],
            refine,
            quad: None,
        }
    }

    pub fn build(&self, geom: &MorphGeometry) -> Result<(DiscreteSpace, QuadratureRule)> {
        let space = DiscreteSpace::build(geom, self.kind, &self.degrees, self.refine)?;
        let quad = match self.quad {
            Some(q) => QuadratureRule::new(&vec![q; geom.dim()])?,
            None => QuadratureRule::for_degrees(&space.patches()[0].scalar.degrees()),
        };
        Ok((space, quad))
    }
}

/// Smallest `count` eigenpairs, skipping the gradient kernel for H(curl).
pub fn solve_modes(system: &AssembledSystem, count: usize) -> Result<EigenSolution> {
    match system.kind {
        SpaceKind::H1 => solve_gevp(system, count, DEFAULT_TOL),
        SpaceKind::Hcurl => solve_gevp_beyond_kernel(system, count, DEFAULT_TOL),
    }
}

fn solve_direct(kind: SpaceKind, k: &SymCsr, m: &SymCsr, count: usize) -> Result<EigenSolution> {
    solve_pencil(k, m, count, DEFAULT_TOL, kind == SpaceKind::Hcurl)
}

/// Truncated Taylor expansion `Σ λ⁽ᵏ⁾ (t − t₀)ᵏ / k!`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorModel {
    pub t0: f64,
    pub lambda: Vec<f64>,
    pub vectors: Option<Vec<Vec<f64>>>,
}

impl TaylorModel {
    pub fn new(t0: f64, lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::Validation("a Taylor model needs at least one coefficient".into()));
        }
        Ok(Self {
            t0,
            lambda,
            vectors: None,
        })
    }

    pub fn from_jet(jet: &EigenpairJet) -> Self {
        Self {
            t0: jet.t0,
            lambda: jet.lambda.clone(),
            vectors: Some(jet.vectors.clone()),
        }
    }

    pub fn order(&self) -> usize {
        self.lambda.len() - 1
    }

    /// The model cut at order `n` (no-op beyond the stored order).
    pub fn truncated(&self, n: usize) -> Self {
        let keep = (n + 1).min(self.lambda.len());
        Self {
            t0: self.t0,
            lambda: self.lambda[..keep].to_vec(),
            vectors: self.vectors.as_ref().map(|v| v[..keep].to_vec()),
        }
    }

    fn weights(&self, t: f64) -> Vec<f64> {
        let dt = t - self.t0;
        let mut w = Vec::with_capacity(self.lambda.len());
        let mut c = 1.0;
        for k in 0..self.lambda.len() {
            if k > 0 {
                c *= dt / k as f64;
            }
            w.push(c);
        }
        w
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t == self.t0 {
            return self.lambda[0];
        }
        self.weights(t).iter().zip(&self.lambda).map(|(w, l)| w * l).sum()
    }

    pub fn eval_vector(&self, t: f64) -> Option<Vec<f64>> {
        let vectors = self.vectors.as_ref()?;
        let w = self.weights(t);
        let mut out = vec![0.0; vectors[0].len()];
        for (wk, v) in w.iter().zip(vectors) {
            out.iter_mut().zip(v).for_each(|(o, x)| *o += wk * x);
        }
        Some(out)
    }

    /// Re-expresses the model in `r = a + (b − a) t`.
    pub fn reparametrize(&self, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Domain(format!("interval [{a}, {b}] is empty")));
        }
        let s = b - a;
        let mut f = 1.0;
        let lambda = self
            .lambda
            .iter()
            .enumerate()
            .map(|(k, l)| {
                if k > 0 {
                    f /= s;
                }
                l * f
            })
            .collect();
        Ok(Self {
            t0: a + s * self.t0,
            lambda,
            vectors: None,
        })
    }
}

/// Exact `(1/(b − a)) ∫ₐᵇ` of the Taylor polynomial.
pub fn uniform_expectation(model: &TaylorModel, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::Domain(format!("interval [{a}, {b}] is empty")));
    }
    let (ua, ub) = (a - model.t0, b - model.t0);
    let (mut pa, mut pb) = (ua, ub);
    let mut fact = 1.0;
    let mut sum = 0.0;
    for (k, l) in model.lambda.iter().enumerate() {
        fact *= (k + 1) as f64;
        sum += l * (pb - pa) / fact;
        pa *= ua;
        pb *= ub;
    }
    Ok(sum / (b - a))
}

/// `|u₁ᵀ M u₂| / (‖u₁‖_M ‖u₂‖_M)`.
pub fn correlation(u1: &[f64], u2: &[f64], m: &SymCsr) -> Result<f64> {
    let n11 = m.bilinear(u1, u1);
    let n22 = m.bilinear(u2, u2);
    if !(n11 > 0.0 && n22 > 0.0) {
        return Err(Error::Domain("correlation of a zero vector".into()));
    }
    Ok((m.bilinear(u1, u2).abs() / (n11.sqrt() * n22.sqrt())).min(1.0))
}

/// Greedy one-to-one assignment by descending score; `scores[i][j]` rates
/// prediction `i` against candidate `j`. Returns the candidate and score per row.
pub fn greedy_match(scores: &[Vec<f64>]) -> Vec<Option<(usize, f64)>> {
    let mut pairs: Vec<(usize, usize, f64)> = scores
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &s)| (i, j, s)))
        .collect();
    pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let n_cand = scores.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = vec![None; scores.len()];
    let mut taken = vec![false; n_cand];
    for (i, j, s) in pairs {
        if out[i].is_none() && !taken[j] {
            out[i] = Some((j, s));
            taken[j] = true;
        }
    }
    out
}

/// Tracking controls. Modes are 1-based positions at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOptions {
    pub modes: Vec<usize>,
    pub steps: usize,
    pub order: usize,
    pub threshold: f64,
    pub gap_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackRecord {
    pub step: usize,
    pub t: f64,
    /// Label of the tracked mode (its position at `t = 0`).
    pub mode: usize,
    /// Position of the matched eigenpair in the spectrum at this step.
    pub position: usize,
    pub lambda: f64,
    pub predicted: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingRun {
    pub t: Vec<f64>,
    pub order: usize,
    pub records: Vec<TrackRecord>,
}

/// Follows the given modes over `t = 0, 1/S, …, 1`, predicting each with its
/// order-`n` Taylor model and matching by correlation.
pub fn track(geom: &MorphGeometry, disc: &Discretization, opts: &TrackOptions) -> Result<TrackingRun> {
    if opts.modes.is_empty() || opts.modes.contains(&0) {
        return Err(Error::Domain("modes are numbered from 1 and must not be empty".into()));
    }
    if opts.steps == 0 {
        return Err(Error::Domain("tracking needs at least one step".into()));
    }
    let (space, quad) = disc.build(geom)?;
    let max_mode = *opts.modes.iter().max().unwrap_or(&1);
    let count = (max_mode + 2).min(space.n_dof());
    let t_grid: Vec<f64> = (0..=opts.steps).map(|s| s as f64 / opts.steps as f64).collect();

    let mut system = assemble(&space, geom, 0.0, opts.order, &quad)?;
    let mut sol = solve_modes(&system, count)?;
    let mut positions: Vec<usize> = opts.modes.clone();
    let mut records: Vec<TrackRecord> = positions
        .iter()
        .map(|&p| {
            Ok(TrackRecord {
                step: 0,
                t: 0.0,
                mode: p,
                position: p,
                lambda: sol.eigenvalue(p)?,
                predicted: sol.eigenvalue(p)?,
                correlation: 1.0,
            })
        })
        .collect::<Result<_>>()?;

    for s in 0..opts.steps {
        let t_next = t_grid[s + 1];
        let mut predictions = Vec::with_capacity(positions.len());
        for (&label, &pos) in opts.modes.iter().zip(&positions) {
            let mult = check_multiplicity(&sol, pos, opts.gap_tol);
            if !mult.simple {
                return Err(Error::Multiplicity {
                    mode: label,
                    gap: mult.gap,
                    step: Some(s),
                });
            }
            let jet = eigenpair_derivatives(&system, &sol, pos, opts.order, opts.gap_tol)?;
            let model = TaylorModel::from_jet(&jet);
            let vector = model.eval_vector(t_next).unwrap_or_default();
            predictions.push((model.eval(t_next), vector));
        }

        system = assemble(&space, geom, t_next, opts.order, &quad)?;
        sol = solve_modes(&system, count)?;
        let m = &system.m[0];
        let scores: Vec<Vec<f64>> = predictions
            .iter()
            .map(|(_, u)| {
                sol.eigenvectors
                    .iter()
                    .map(|c| correlation(u, c, m))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let matched = greedy_match(&scores);
        for (i, &label) in opts.modes.iter().enumerate() {
            let best = scores[i].iter().copied().fold(0.0, f64::max);
            match matched[i] {
                Some((j, score)) if score >= opts.threshold => {
                    positions[i] = j + 1;
                    records.push(TrackRecord {
                        step: s + 1,
                        t: t_next,
                        mode: label,
                        position: j + 1,
                        lambda: sol.eigenvalues[j],
                        predicted: predictions[i].0,
                        correlation: score,
                    });
                }
                other => {
                    return Err(Error::NoMatch {
                        mode: label,
                        step: s + 1,
                        best: other.map_or(best, |(_, sc)| sc),
                        threshold: opts.threshold,
                    })
                }
            }
        }
    }
    Ok(TrackingRun {
        t: t_grid,
        order: opts.order,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionError {
    pub order: usize,
    pub delta: f64,
    pub lambda_error: f64,
    pub vector_error: f64,
}

/// Relative errors of the order-`n` predictions (`n ≤ max_order`) against
/// fresh solves at `t₀ + δ`. The fresh eigenvector is scaled to the frozen
/// normalization `u⋆ᵀ M[t₀ + δ] u = 1` of the expansion.
pub fn prediction_error_study(
    geom: &MorphGeometry,
    disc: &Discretization,
    mode: usize,
    t0: f64,
    max_order: usize,
    deltas: &[f64],
    gap_tol: f64,
) -> Result<Vec<PredictionError>> {
    let (space, quad) = disc.build(geom)?;
    let count = (mode + 1).min(space.n_dof());
    let system = assemble(&space, geom, t0, max_order, &quad)?;
    let base = solve_modes(&system, count)?;
    let jet = eigenpair_derivatives(&system, &base, mode, max_order, gap_tol)?;
    let model = TaylorModel::from_jet(&jet);
    let mut out = Vec::new();
    for &delta in deltas {
        let t = t0 + delta;
        let (k, m) = assemble_direct(&space, geom, t, &quad)?;
        let fresh = solve_direct(space.kind(), &k, &m, count)?;
        let lambda = fresh.eigenvalue(mode)?;
        let mut u = fresh.eigenvector(mode)?.to_vec();
        let s = m.bilinear(&jet.u_star, &u);
        if s == 0.0 {
            return Err(Error::Solver(format!(
                "mode {mode} at t = {t} is orthogonal to the normalization vector"
            )));
        }
        u.iter_mut().for_each(|v| *v /= s);
        let u_norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        for n in 0..=max_order {
            let sub = model.truncated(n);
            let mut uh = sub.eval_vector(t).unwrap_or_default();
            if m.bilinear(&uh, &u) < 0.0 {
                uh.iter_mut().for_each(|v| *v = -*v);
            }
            let diff = uh.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            out.push(PredictionError {
                order: n,
                delta,
                lambda_error: (sub.eval(t) - lambda).abs() / lambda.abs(),
                vector_error: diff / u_norm,
            });
        }
    }
    Ok(out)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use num_rational::BigRational;
    use proptest::prelude::*;

    #[test]
    fn taylor_evaluation() {
        let m = TaylorModel::new(0.0, vec![2.0, 3.0]).unwrap();
        assert_eq!(m.eval(0.5), 3.5);
        let m = TaylorModel::new(0.3, vec![1.25, -7.0, 4.0]).unwrap();
        assert_eq!(m.eval(0.3), 1.25);
        let h = 1e-6;
        let slope = (m.eval(0.3 + h) - m.eval(0.3 - h)) / (2.0 * h);
        assert!((slope + 7.0).abs() < 1e-8);
        assert!(TaylorModel::new(0.0, vec![]).is_err());
    }

    #[test]
    fn expectation_examples() {
        let c = TaylorModel::new(0.4, vec![3.0]).unwrap();
        assert_eq!(uniform_expectation(&c, 0.0, 1.0).unwrap(), 3.0);
        let lin = TaylorModel::new(0.0, vec![0.0, 1.0]).unwrap();
        assert!((uniform_expectation(&lin, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(uniform_expectation(&lin, 1.0, 1.0).is_err());
        let r = lin.reparametrize(0.2, 0.8).unwrap();
        // t = (r − 0.2)/0.6 has mean 1/2 over [0.2, 0.8]
        assert!((uniform_expectation(&r, 0.2, 0.8).unwrap() - 0.5).abs() < 1e-15);
    }

    fn rational(x: f64) -> BigRational {
        BigRational::from_float(x).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        /// Exact rational integration of the Taylor polynomial.
        #[test]
        fn expectation_matches_rational_integration(
            coeffs in prop::collection::vec(-4.0f64..4.0, 1..=7),
            t0 in -1.0f64..1.0,
            a in -1.0f64..0.5,
            width in 0.1f64..2.0,
        ) {
            let b = a + width;
            let model = TaylorModel::new(t0, coeffs.clone()).unwrap();
            let got = uniform_expectation(&model, a, b).unwrap();

            let (ra, rb, rt) = (rational(a), rational(b), rational(t0));
            let mut total = BigRational::from_integer(0.into());
            let mut fact = BigRational::from_integer(1.into());
            for (k, c) in coeffs.iter().enumerate() {
                let kk = BigRational::from_integer(((k + 1) as i64).into());
                fact *= kk.clone();
                let pb = num_traits_pow(&(rb.clone() - rt.clone()), k + 1);
                let pa = num_traits_pow(&(ra.clone() - rt.clone()), k + 1);
                total += rational(*c) * (pb - pa) / fact.clone();
            }
            let exact = total / (rb - ra);
            let exact_f = to_f64(&exact);
            prop_assert!((got - exact_f).abs() <= 1e-12 * (1.0 + exact_f.abs()), "{got} vs {exact_f}");
        }

        #[test]
        fn correlation_ignores_scaling(
            u in prop::collection::vec(-1.0f64..1.0, 3),
            v in prop::collection::vec(-1.0f64..1.0, 3),
            s in 0.1f64..10.0,
            flip in any::<bool>(),
        ) {
            prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-3);
            prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-3);
            let m = SymCsr::from_dense(&[
                vec![2.0, 0.5, 0.0],
                vec![0.5, 3.0, 0.1],
                vec![0.0, 0.1, 1.0],
            ]).unwrap();
            let sign = if flip { -s } else { s };
            let scaled: Vec<f64> = v.iter().map(|x| x * sign).collect();
            let c1 = correlation(&u, &v, &m).unwrap();
            let c2 = correlation(&u, &scaled, &m).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&c1));
        }
    }

    fn num_traits_pow(x: &BigRational, e: usize) -> BigRational {
        let mut out = BigRational::from_integer(1.into());
        for _ in 0..e {
            out *= x.clone();
        }
        out
    }

    fn to_f64(x: &BigRational) -> f64 {
        let n: f64 = x.numer().to_string().parse().unwrap();
        let d: f64 = x.denom().to_string().parse().unwrap();
        n / d
    }

    #[test]
    fn correlation_examples() {
        let m = SymCsr::from_dense(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((correlation(&[1.0, 2.0], &[3.0, 6.0], &m).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(correlation(&[1.0, 0.0], &[0.0, 1.0], &m).unwrap(), 0.0);
        assert!(correlation(&[0.0, 0.0], &[0.0, 1.0], &m).is_err());
    }

    #[test]
    fn greedy_matching_recovers_permutation() {
        let scores = vec![
            vec![0.1, 0.05, 0.99],
            vec![0.97, 0.2, 0.0],
            vec![0.3, 0.9, 0.2],
        ];
        let m = greedy_match(&scores);
        assert_eq!(m.iter().map(|x| x.unwrap().0).collect::<Vec<_>>(), vec![2, 0, 1]);
        let contested = vec![vec![0.9, 0.8], vec![0.95, 0.1]];
        let m = greedy_match(&contested);
        assert_eq!(m[1].unwrap().0, 0);
        assert_eq!(m[0].unwrap().0, 1);
    }

    #[test]
    fn tracking_a_static_disk_is_constant() {
        let g = shapes::disk(&shapes::DiskParams::radial(0.5, 0.5)).unwrap();
        let disc = Discretization::new(SpaceKind::H1, 2, 2);
        let run = track(
            &g,
            &disc,
            &TrackOptions {
                modes: vec![1, 6],
                steps: 3,
                order: 2,
                threshold: 0.8,
                gap_tol: 1e-6,
            },
        )
        .unwrap();
        assert_eq!(run.records.len(), 8);
        for r in &run.records {
            let first = run.records.iter().find(|x| x.mode == r.mode).unwrap();
            assert_eq!(r.lambda, first.lambda);
            assert!((r.correlation - 1.0).abs() < 1e-12);
            assert_eq!(r.position, r.mode);
        }
    }

    #[test]
    fn degenerate_pair_is_rejected_during_tracking() {
        let g = shapes::disk(&shapes::DiskParams::radial(0.5, 0.5)).unwrap();
        let disc = Discretization::new(SpaceKind::H1, 2, 2);
        let err = track(
            &g,
            &disc,
            &TrackOptions {
                modes: vec![2],
                steps: 2,
                order: 1,
                threshold: 0.8,
                gap_tol: 1e-6,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Multiplicity { mode: 2, step: Some(0), .. }), "{err}");
    }

    #[test]
    fn prediction_errors_vanish_for_a_static_disk() {
        let g = shapes::disk(&shapes::DiskParams::radial(0.5, 0.5)).unwrap();
        let disc = Discretization::new(SpaceKind::H1, 2, 1);
        let rows = prediction_error_study(&g, &disc, 1, 0.0, 2, &[0.1, 0.01], 1e-6).unwrap();
        assert_eq!(rows.len(), 6);
        for r in rows {
            assert!(r.lambda_error < 1e-13 && r.vector_error < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn slope_fit() {
        let x = [1e-3, 1e-2, 1e-1];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(4)).collect();
        assert!((log_log_slope(&x, &y) - 4.0).abs() < 1e-12);
    }
}
