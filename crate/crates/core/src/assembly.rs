//! Assembly of stiffness and mass matrices and their `t`-derivatives.
//!
//! Every integral is evaluated on the reference cube. Each quadrature point
//! contributes `wᵀ-weighted` quadratic forms `f_aᵀ Sₖ f_b`, where `f` is a
//! basis feature (gradient, value or curl in reference coordinates) and `Sₖ`
//! is the `k`-th derivative of the pulled-back coefficient:
//!
//! | space        | stiffness feature, coefficient | mass feature, coefficient |
//! |--------------|--------------------------------|---------------------------|
//! | H¹           | `∇̂N`, `A`                      | `N`, `det ∂G`             |
//! | H(curl), 3D  | `curl̂ N̂`, `C`                  | `N̂`, `A`                  |
//! | H(curl), 2D  | `curl̂ N̂` (scalar), `1/det ∂G`  | `N̂`, `A`                  |

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::MorphGeometry;
use crate::jets::{a_jet, c_jet, checked_inverse, MatrixJet, ScalarJet};
use crate::quadrature::QuadratureRule;
use crate::space::{DiscreteSpace, SpaceKind};
use crate::sparse::{SparsityPattern, SymCsr};
use crate::spline::unflatten_index;

/// Where the morph is expanded: on the reference cube with `G = F[t]`, or on
/// the initial domain with `G̃ = F[t]∘F₀⁻¹` and the result pulled back by `F₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Reference,
    Initial,
}

/// Stacks `K⁽⁰⁾..K⁽ⁿ⁾` and `M⁽⁰⁾..M⁽ⁿ⁾` of derivatives at `t0`, restricted to the
/// free dofs.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub kind: SpaceKind,
    pub t0: f64,
    pub setting: Setting,
    pub k: Vec<SymCsr>,
    pub m: Vec<SymCsr>,
}

impl AssembledSystem {
    pub fn order(&self) -> usize {
        self.k.len() - 1
    }

    pub fn n_dof(&self) -> usize {
        self.k[0].n()
    }
}

#[derive(Debug, Clone, Copy)]
enum Coefficients {
    Jets { setting: Setting, t0: f64, order: usize },
    Direct { t: f64 },
}

impl Coefficients {
    fn n_stack(&self) -> usize {
        match self {
            Coefficients::Jets { order, .. } => order + 1,
            Coefficients::Direct { .. } => 1,
        }
    }

    fn t(&self) -> f64 {
        match *self {
            Coefficients::Jets { t0, .. } => t0,
            Coefficients::Direct { t } => t,
        }
    }
}

/// Per-point coefficient stacks (stiffness, mass), one matrix per order.
type Stacks = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

fn scalar_stack(s: &ScalarJet) -> Vec<DMatrix<f64>> {
    s.coeffs().iter().map(|&v| DMatrix::from_element(1, 1, v)).collect()
}

fn congruence(jet: &MatrixJet, left: &DMatrix<f64>, factor: f64) -> Vec<DMatrix<f64>> {
    jet.coeffs()
        .iter()
        .map(|c| left * c * left.transpose() * factor)
        .collect()
}

fn located(e: Error, where_: &str) -> Error {
    match e {
        Error::Singular { op, detail } => Error::Singular {
            op,
            detail: format!("{detail} at {where_}"),
        },
        other => other,
    }
}

fn point_coefficients(
    kind: SpaceKind,
    dim: usize,
    j0: &DMatrix<f64>,
    jv: &DMatrix<f64>,
    mode: Coefficients,
    where_: &str,
) -> Result<Stacks> {
    let t = mode.t();
    let det_t = (j0 + jv * t).determinant();
    if det_t < 0.0 {
        return Err(Error::Geometry(format!(
            "Jacobian determinant {det_t:.6e} is negative at t = {t}, {where_}"
        )));
    }
    if det_t == 0.0 || !det_t.is_finite() {
        return Err(Error::Singular {
            op: "assemble",
            detail: format!("Jacobian is singular at t = {t}, {where_}"),
        });
    }
    let hcurl3 = kind == SpaceKind::Hcurl && dim == 3;
    let hcurl2 = kind == SpaceKind::Hcurl && dim == 2;
    match mode {
        Coefficients::Direct { t } => {
            let g = j0 + jv * t;
            let g_inv = checked_inverse(&g).ok_or_else(|| Error::Singular {
                op: "assemble_direct",
                detail: format!("Jacobian is singular at t = {t}, {where_}"),
            })?;
            let det = g.determinant();
            let a = &g_inv * g_inv.transpose() * det;
            Ok(match kind {
                SpaceKind::H1 => (vec![a], vec![DMatrix::from_element(1, 1, det)]),
                _ if hcurl3 => (vec![g.transpose() * &g / det], vec![a]),
                _ => (vec![DMatrix::from_element(1, 1, 1.0 / det)], vec![a]),
            })
        }
        Coefficients::Jets {
            setting: Setting::Reference,
            t0,
            order,
        } => {
            let g = MatrixJet::from_affine(j0, jv, t0, order);
            let a = a_jet(&g).map_err(|e| located(e, where_))?;
            Ok(match kind {
                SpaceKind::H1 => {
                    let det = g.det()?;
                    (a.coeffs().to_vec(), scalar_stack(&det))
                }
                _ if hcurl3 => {
                    let c = c_jet(&g).map_err(|e| located(e, where_))?;
                    (c.coeffs().to_vec(), a.coeffs().to_vec())
                }
                _ => {
                    let r = g.det()?.recip().map_err(|e| located(e, where_))?;
                    (scalar_stack(&r), a.coeffs().to_vec())
                }
            })
        }
        Coefficients::Jets {
            setting: Setting::Initial,
            t0,
            order,
        } => {
            let det0 = j0.determinant();
            if det0 <= 0.0 {
                return Err(Error::Geometry(format!(
                    "initial Jacobian determinant {det0:.6e} is not positive, {where_}"
                )));
            }
            let j0_inv = checked_inverse(j0).ok_or_else(|| Error::Singular {
                op: "assemble",
                detail: format!("initial Jacobian is singular, {where_}"),
            })?;
            let w = jv * &j0_inv;
            let g = MatrixJet::from_affine(&DMatrix::identity(dim, dim), &w, t0, order);
            let a = a_jet(&g).map_err(|e| located(e, where_))?;
            let mass_like = congruence(&a, &j0_inv, det0);
            Ok(match kind {
                SpaceKind::H1 => {
                    let det = g.det()?.scale(det0);
                    (mass_like, scalar_stack(&det))
                }
                _ if hcurl3 => {
                    let c = c_jet(&g).map_err(|e| located(e, where_))?;
                    (congruence(&c, &j0.transpose(), 1.0 / det0), mass_like)
                }
                _ => {
                    debug_assert!(hcurl2);
                    let r = g.det()?.recip().map_err(|e| located(e, where_))?.scale(1.0 / det0);
                    (scalar_stack(&r), mass_like)
                }
            })
        }
    }
}

/// One local basis function on an element.
struct LocalFn {
    component: usize,
    /// Active index per direction, relative to the element's first active index.
    offsets: Vec<usize>,
    free: Option<usize>,
}

struct ElementLayout {
    patch: usize,
    /// `[a, b]` bounds per direction.
    bounds: Vec<(f64, f64)>,
    functions: Vec<LocalFn>,
}

fn element_layouts(space: &DiscreteSpace) -> Result<Vec<ElementLayout>> {
    let d = space.dim();
    let mut out = Vec::new();
    for (pi, ps) in space.patches().iter().enumerate() {
        let bps: Vec<Vec<f64>> = ps
            .scalar
            .factors()
            .iter()
            .map(|f| f.knots().breakpoints())
            .collect();
        let n_el: Vec<usize> = bps.iter().map(|b| b.len() - 1).collect();
        let total: usize = n_el.iter().product();
        for e in 0..total {
            let em = unflatten_index(&n_el, e);
            let bounds: Vec<(f64, f64)> = (0..d).map(|k| (bps[k][em[k]], bps[k][em[k] + 1])).collect();
            let mid: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect();
            let mut functions = Vec::new();
            for (c, comp) in ps.components.iter().enumerate() {
                let dims = comp.n_basis_per_dir();
                let mut firsts = Vec::with_capacity(d);
                let mut counts = Vec::with_capacity(d);
                for k in 0..d {
                    let f = comp.factor(k);
                    let span = f.knots().find_span(mid[k])?;
                    firsts.push(span - f.degree());
                    counts.push(f.degree() + 1);
                }
                let n_loc: usize = counts.iter().product();
                for l in 0..n_loc {
                    let offsets = unflatten_index(&counts, l);
                    let multi: Vec<usize> = offsets.iter().zip(&firsts).map(|(o, f)| o + f).collect();
                    let g = ps.global[c][crate::spline::flatten_index(&dims, &multi)];
                    functions.push(LocalFn {
                        component: c,
                        offsets,
                        free: space.free_index(g),
                    });
                }
            }
            out.push(ElementLayout {
                patch: pi,
                bounds,
                functions,
            });
        }
    }
    Ok(out)
}

fn pattern_for(space: &DiscreteSpace, layouts: &[ElementLayout]) -> Arc<SparsityPattern> {
    let lists: Vec<Vec<usize>> = layouts
        .iter()
        .map(|l| l.functions.iter().filter_map(|f| f.free).collect())
        .collect();
    Arc::new(SparsityPattern::from_elements(
        space.n_dof(),
        lists.iter().map(Vec::as_slice),
    ))
}

fn assemble_impl(
    space: &DiscreteSpace,
    geom: &MorphGeometry,
    quad: &QuadratureRule,
    mode: Coefficients,
) -> Result<(Vec<SymCsr>, Vec<SymCsr>)> {
    let d = space.dim();
    if geom.dim() != d || quad.dim() != d {
        return Err(Error::Validation(format!(
            "dimension mismatch: geometry {}, space {d}, quadrature {}",
            geom.dim(),
            quad.dim()
        )));
    }
    if space.n_dof() == 0 {
        return Err(Error::Solver("the discrete space has no free degrees of freedom".into()));
    }
    let t = mode.t();
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("morph parameter {t} outside [0, 1]")));
    }
    let report = geom.validate_mapping(t, 3)?;
    if !report.valid {
        return Err(Error::Geometry(format!(
            "mapping is invalid at t = {t} (minimum sampled det {:.6e})",
            report.min_det
        )));
    }
    let kind = space.kind();
    let layouts = element_layouts(space)?;
    let pattern = pattern_for(space, &layouts);
    let n_stack = mode.n_stack();
    let mut k_out: Vec<SymCsr> = (0..n_stack).map(|_| SymCsr::zeros(Arc::clone(&pattern))).collect();
    let mut m_out = k_out.clone();

    let stiff_len = match (kind, d) {
        (SpaceKind::H1, _) => d,
        (SpaceKind::Hcurl, 3) => 3,
        _ => 1,
    };
    let mass_len = if kind == SpaceKind::H1 { 1 } else { d };

    for layout in &layouts {
        let ps = &space.patches()[layout.patch];
        let nf = layout.functions.len();
        let per_dir: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
            .map(|k| quad.on_interval(k, layout.bounds[k].0, layout.bounds[k].1))
            .collect();
        let q_counts: Vec<usize> = per_dir.iter().map(|(x, _)| x.len()).collect();
        let n_q: usize = q_counts.iter().product();

        let mut ke = vec![vec![0.0; nf * nf]; n_stack];
        let mut me = vec![vec![0.0; nf * nf]; n_stack];
        let mut fs = vec![0.0; nf * stiff_len];
        let mut fm = vec![0.0; nf * mass_len];
        let mut sf = vec![0.0; nf * stiff_len];
        let mut mf = vec![0.0; nf * mass_len];

        for q in 0..n_q {
            let qm = unflatten_index(&q_counts, q);
            let xhat: Vec<f64> = (0..d).map(|k| per_dir[k].0[qm[k]]).collect();
            let weight: f64 = (0..d).map(|k| per_dir[k].1[qm[k]]).product();

            // per component, per direction: rows 0 and 1 of the active derivatives
            let evals: Vec<Vec<Vec<Vec<f64>>>> = ps
                .components
                .iter()
                .map(|comp| {
                    (0..d)
                        .map(|k| comp.factor(k).eval_basis_derivatives(xhat[k], 1).map(|(_, v)| v))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;

            for (a, f) in layout.functions.iter().enumerate() {
                let ev = &evals[f.component];
                let mut value = 1.0;
                let mut grad = [1.0; 3];
                for k in 0..d {
                    let row0 = ev[k][0][f.offsets[k]];
                    let row1 = ev[k][1][f.offsets[k]];
                    value *= row0;
                    for (j, g) in grad.iter_mut().enumerate().take(d) {
                        *g *= if j == k { row1 } else { row0 };
                    }
                }
                let s = &mut fs[a * stiff_len..(a + 1) * stiff_len];
                let m = &mut fm[a * mass_len..(a + 1) * mass_len];
                match kind {
                    SpaceKind::H1 => {
                        s.copy_from_slice(&grad[..d]);
                        m[0] = value;
                    }
                    SpaceKind::Hcurl => {
                        m.fill(0.0);
                        m[f.component] = value;
                        if d == 2 {
                            s[0] = if f.component == 0 { -grad[1] } else { grad[0] };
                        } else {
                            match f.component {
                                0 => s.copy_from_slice(&[0.0, grad[2], -grad[1]]),
                                1 => s.copy_from_slice(&[-grad[2], 0.0, grad[0]]),
                                _ => s.copy_from_slice(&[grad[1], -grad[0], 0.0]),
                            }
                        }
                    }
                }
            }

            let (j0, jv) = geom.jacobian_pair(layout.patch, &xhat)?;
            let where_ = format!("patch {}, x̂ = {xhat:?}", layout.patch);
            let (stiff, mass) = point_coefficients(kind, d, &j0, &jv, mode, &where_)?;

            for order in 0..n_stack {
                accumulate(&stiff[order], &fs, &mut sf, stiff_len, nf, weight, &mut ke[order]);
                accumulate(&mass[order], &fm, &mut mf, mass_len, nf, weight, &mut me[order]);
            }
        }

        for order in 0..n_stack {
            scatter(&ke[order], layout, &mut k_out[order]);
            scatter(&me[order], layout, &mut m_out[order]);
        }
    }
    Ok((k_out, m_out))
}

/// `elem[a][b] += w · f_aᵀ S f_b` for `a ≤ b`, mirrored.
fn accumulate(
    coef: &DMatrix<f64>,
    features: &[f64],
    scratch: &mut [f64],
    len: usize,
    nf: usize,
    weight: f64,
    elem: &mut [f64],
) {
    if coef.iter().all(|v| *v == 0.0) {
        return;
    }
    for b in 0..nf {
        let fb = &features[b * len..(b + 1) * len];
        for r in 0..len {
            scratch[b * len + r] = (0..len).map(|c| coef[(r, c)] * fb[c]).sum::<f64>() * weight;
        }
    }
    for a in 0..nf {
        let fa = &features[a * len..(a + 1) * len];
        for b in a..nf {
            let sb = &scratch[b * len..(b + 1) * len];
            let v: f64 = fa.iter().zip(sb).map(|(x, y)| x * y).sum();
            elem[a * nf + b] += v;
            if a != b {
                elem[b * nf + a] += v;
            }
        }
    }
}

fn scatter(elem: &[f64], layout: &ElementLayout, out: &mut SymCsr) {
    let nf = layout.functions.len();
    for (a, fa) in layout.functions.iter().enumerate() {
        let Some(i) = fa.free else { continue };
        for (b, fb) in layout.functions.iter().enumerate() {
            let Some(j) = fb.free else { continue };
            let v = elem[a * nf + b];
            if v != 0.0 {
                out.add(i, j, v);
            }
        }
    }
}

/// Derivative stacks up to `order` at `t0`, computed on the reference cube.
pub fn assemble(
    space: &DiscreteSpace,
    geom: &MorphGeometry,
    t0: f64,
    order: usize,
    quad: &QuadratureRule,
) -> Result<AssembledSystem> {
    assemble_in(space, geom, t0, order, quad, Setting::Reference)
}

/// As [`assemble`], choosing where the morph is expanded.
pub fn assemble_in(
    space: &DiscreteSpace,
    geom: &MorphGeometry,
    t0: f64,
    order: usize,
    quad: &QuadratureRule,
    setting: Setting,
) -> Result<AssembledSystem> {
    let (k, m) = assemble_impl(space, geom, quad, Coefficients::Jets { setting, t0, order })?;
    Ok(AssembledSystem {
        kind: space.kind(),
        t0,
        setting,
        k,
        m,
    })
}

/// `K[t]` and `M[t]` evaluated directly from `∂F[t]`, without jets.
pub fn assemble_direct(
    space: &DiscreteSpace,
    geom: &MorphGeometry,
    t: f64,
    quad: &QuadratureRule,
) -> Result<(SymCsr, SymCsr)> {
    let (mut k, mut m) = assemble_impl(space, geom, quad, Coefficients::Direct { t })?;
    Ok((k.remove(0), m.remove(0)))
}
