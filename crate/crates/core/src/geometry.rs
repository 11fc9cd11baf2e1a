//! NURBS patches, multipatch topology and the morph family
//! `F[t]` obtained from the control-net blend `P[t] = (1 - t) P₀ + t P₁`.
//!
//! Weights are shared by both nets, so the rational basis does not depend on
//! `t` and the Jacobian is affine in `t`: `∂F[t] = ∂F₀ + t·JV`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::{flatten_index, unflatten_index, KnotVector, SplineSpace1D, TensorSplineSpace};

/// Tolerance for control points identified across an interface.
pub const COINCIDENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Patch {
    space: TensorSplineSpace,
    weights: Vec<f64>,
    points_start: Vec<Vec<f64>>,
    points_end: Vec<Vec<f64>>,
}

/// Rational basis functions active at one parametric point.
#[derive(Debug, Clone)]
pub struct RationalBasis {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Reference gradients, `dim` entries per active function.
    pub grads: Vec<f64>,
}

impl Patch {
    pub fn new(
        space: TensorSplineSpace,
        weights: Vec<f64>,
        points_start: Vec<Vec<f64>>,
        points_end: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = space.n_basis();
        let d = space.dim();
        if weights.len() != n || points_start.len() != n || points_end.len() != n {
            return Err(Error::Validation(format!(
                "patch space has {n} basis functions but {} weights, {} start points and {} end points were given",
                weights.len(),
                points_start.len(),
                points_end.len()
            )));
        }
        if let Some(w) = weights.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Validation(format!("weights must be positive, got {w}")));
        }
        for p in points_start.iter().chain(&points_end) {
            if p.len() != d {
                return Err(Error::Validation(format!(
                    "control point {p:?} does not have {d} coordinates"
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("control point {p:?} is not finite")));
            }
        }
        Ok(Self {
            space,
            weights,
            points_start,
            points_end,
        })
    }

    pub fn space(&self) -> &TensorSplineSpace {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points_start(&self) -> &[Vec<f64>] {
        &self.points_start
    }

    pub fn points_end(&self) -> &[Vec<f64>] {
        &self.points_end
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Control point `i` of the blended net at parameter `t`.
    pub fn point_at(&self, i: usize, t: f64) -> Vec<f64> {
        self.points_start[i]
            .iter()
            .zip(&self.points_end[i])
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect()
    }

    pub fn rational_basis(&self, xhat: &[f64]) -> Result<RationalBasis> {
        let d = self.dim();
        if xhat.len() != d {
            return Err(Error::Domain(format!(
                "reference point has {} coordinates, expected {d}",
                xhat.len()
            )));
        }
        let per_dir: Vec<(usize, Vec<Vec<f64>>)> = self
            .space
            .factors()
            .iter()
            .zip(xhat)
            .map(|(f, &x)| f.eval_basis_derivatives(x, 1))
            .collect::<Result<_>>()?;
        let counts: Vec<usize> = per_dir.iter().map(|(_, v)| v[0].len()).collect();
        let dims = self.space.n_basis_per_dir();
        let n_local: usize = counts.iter().product();

        let mut indices = Vec::with_capacity(n_local);
        let mut bw = Vec::with_capacity(n_local);
        let mut gbw = Vec::with_capacity(n_local * d);
        let mut w_sum = 0.0;
        let mut w_grad = vec![0.0; d];
        let mut multi = vec![0; d];
        for local in 0..n_local {
            let lm = unflatten_index(&counts, local);
            let mut value = 1.0;
            let mut grad = vec![1.0; d];
            for k in 0..d {
                let (first, ders) = &per_dir[k];
                multi[k] = first + lm[k];
                value *= ders[0][lm[k]];
                for (j, g) in grad.iter_mut().enumerate() {
                    *g *= if j == k { ders[1][lm[k]] } else { ders[0][lm[k]] };
                }
            }
            let g = flatten_index(&dims, &multi);
            let w = self.weights[g];
            indices.push(g);
            bw.push(value * w);
            w_sum += value * w;
            for j in 0..d {
                gbw.push(grad[j] * w);
                w_grad[j] += grad[j] * w;
            }
        }
        let values: Vec<f64> = bw.iter().map(|v| v / w_sum).collect();
        let mut grads = Vec::with_capacity(n_local * d);
        for (a, &v) in values.iter().enumerate() {
            for j in 0..d {
                grads.push((gbw[a * d + j] - v * w_grad[j]) / w_sum);
            }
        }
        Ok(RationalBasis {
            indices,
            values,
            grads,
        })
    }

    /// `(∂F₀, JV)` at `x̂`, with `JV = Σ (P₁ᵢ − P₀ᵢ) ⊗ ∇R̂ᵢ`.
    pub fn jacobian_pair(&self, xhat: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let rb = self.rational_basis(xhat)?;
        let mut j0 = DMatrix::zeros(d, d);
        let mut jv = DMatrix::zeros(d, d);
        for (a, &g) in rb.indices.iter().enumerate() {
            let p0 = &self.points_start[g];
            let p1 = &self.points_end[g];
            for r in 0..d {
                let dp = p1[r] - p0[r];
                for c in 0..d {
                    let gr = rb.grads[a * d + c];
                    j0[(r, c)] += p0[r] * gr;
                    jv[(r, c)] += dp * gr;
                }
            }
        }
        Ok((j0, jv))
    }

    /// Element boundaries of the geometry in each parametric direction.
    pub fn breakpoints(&self) -> Vec<Vec<f64>> {
        self.space
            .factors()
            .iter()
            .map(|f| f.knots().breakpoints())
            .collect()
    }
}

/// A pair of glued patch faces. Face `f` is the side `f % 2` (0 at `ξ = 0`,
/// 1 at `ξ = 1`) of parametric direction `f / 2`.
///
/// `orientation` maps in-face coordinates of face `a` to those of face `b`:
/// bit 2 swaps the two in-face directions, then bit 0 (bit 1) reverses the
/// first (second) in-face direction of face `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interface {
    pub patch_a: usize,
    pub face_a: usize,
    pub patch_b: usize,
    pub face_b: usize,
    pub orientation: u8,
}

fn n_orientations(dim: usize) -> u8 {
    match dim {
        1 => 1,
        2 => 2,
        _ => 8,
    }
}

/// Flat indices of the basis functions on a face, in-face directions in
/// increasing order with the first running fastest, plus the face grid size.
pub fn face_indices(dims: &[usize], face: usize) -> (Vec<usize>, Vec<usize>) {
    let dir = face / 2;
    let layer = if face.is_multiple_of(2) { 0 } else { dims[dir] - 1 };
    let in_face: Vec<usize> = (0..dims.len()).filter(|&k| k != dir).collect();
    let face_dims: Vec<usize> = in_face.iter().map(|&k| dims[k]).collect();
    let n: usize = face_dims.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut multi = vec![0; dims.len()];
    for f in 0..n {
        let fm = unflatten_index(&face_dims, f);
        multi[dir] = layer;
        for (j, &k) in in_face.iter().enumerate() {
            multi[k] = fm[j];
        }
        out.push(flatten_index(dims, &multi));
    }
    (out, face_dims)
}

/// Maps a face coordinate on face `a` to the matching coordinate on face `b`.
fn orient(coord: &[usize], orientation: u8, dims_b: &[usize]) -> Vec<usize> {
    let mut c = coord.to_vec();
    if orientation & 4 != 0 && c.len() == 2 {
        c.swap(0, 1);
    }
    for (j, v) in c.iter_mut().enumerate() {
        if orientation & (1 << j) != 0 {
            *v = dims_b[j] - 1 - *v;
        }
    }
    c
}

/// Pairs `(index on a, index on b)` of basis functions identified by an
/// interface, for tensor grids of sizes `dims_a` and `dims_b`.
pub fn face_correspondence(
    dims_a: &[usize],
    face_a: usize,
    dims_b: &[usize],
    face_b: usize,
    orientation: u8,
) -> Result<Vec<(usize, usize)>> {
    let (ia, fa) = face_indices(dims_a, face_a);
    let (ib, fb) = face_indices(dims_b, face_b);
    let mut fa_oriented = fa.clone();
    if orientation & 4 != 0 && fa_oriented.len() == 2 {
        fa_oriented.swap(0, 1);
    }
    if fa_oriented != fb {
        return Err(Error::Validation(format!(
            "interface faces have incompatible sizes {fa:?} and {fb:?}"
        )));
    }
    Ok(ia
        .iter()
        .enumerate()
        .map(|(f, &a)| {
            let coord = unflatten_index(&fa, f);
            let cb = orient(&coord, orientation, &fb);
            (a, ib[flatten_index(&fb, &cb)])
        })
        .collect())
}

/// Tensor knot vector of a face, ordered like [`face_indices`].
pub(crate) fn face_knots(space: &TensorSplineSpace, face: usize) -> Vec<&KnotVector> {
    (0..space.dim())
        .filter(|&k| k != face / 2)
        .map(|k| space.factor(k).knots())
        .collect()
}

/// Whether the knot vectors on two faces agree under the orientation.
pub(crate) fn faces_conforming(
    a: &TensorSplineSpace,
    face_a: usize,
    b: &TensorSplineSpace,
    face_b: usize,
    orientation: u8,
) -> bool {
    let mut ka = face_knots(a, face_a);
    let kb = face_knots(b, face_b);
    if orientation & 4 != 0 && ka.len() == 2 {
        ka.swap(0, 1);
    }
    ka.len() == kb.len()
        && ka.iter().zip(&kb).enumerate().all(|(j, (x, y))| {
            if x.degree() != y.degree() || x.values().len() != y.values().len() {
                return false;
            }
            if orientation & (1 << j) != 0 {
                x.values()
                    .iter()
                    .zip(y.values().iter().rev())
                    .all(|(u, v)| (u - (1.0 - v)).abs() <= 1e-14)
            } else {
                x.values().iter().zip(y.values()).all(|(u, v)| (u - v).abs() <= 1e-14)
            }
        })
}

fn points_close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= COINCIDENCE_TOL)
}

/// Result of sampling the Jacobian determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidityReport {
    pub min_det: f64,
    pub valid: bool,
}

/// Multipatch NURBS geometry with a start and an end control net.
#[derive(Debug, Clone)]
pub struct MorphGeometry {
    dim: usize,
    patches: Vec<Patch>,
    interfaces: Vec<Interface>,
}

impl MorphGeometry {
    /// Builds a geometry and checks the given interfaces for conformity.
    pub fn new(dim: usize, patches: Vec<Patch>, interfaces: Vec<Interface>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Validation(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if patches.is_empty() {
            return Err(Error::Validation("geometry has no patches".into()));
        }
        for (i, p) in patches.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::Validation(format!(
                    "patch {i} has parametric dimension {}, expected {dim}",
                    p.dim()
                )));
            }
        }
        let geom = Self {
            dim,
            patches,
            interfaces,
        };
        for (k, itf) in geom.interfaces.iter().enumerate() {
            geom.check_interface(itf)
                .map_err(|e| Error::Validation(format!("interface {k}: {e}")))?;
        }
        Ok(geom)
    }

    /// Builds a geometry whose interfaces are found by control-point coincidence.
    pub fn with_detected_interfaces(dim: usize, patches: Vec<Patch>) -> Result<Self> {
        let geom = Self::new(dim, patches, Vec::new())?;
        let interfaces = geom.detect_interfaces();
        Self::new(dim, geom.patches, interfaces)
    }

    fn check_interface(&self, itf: &Interface) -> std::result::Result<(), String> {
        let np = self.patches.len();
        if itf.patch_a >= np || itf.patch_b >= np {
            return Err(format!("patch index out of range (have {np} patches)"));
        }
        if itf.face_a >= 2 * self.dim || itf.face_b >= 2 * self.dim {
            return Err(format!("face index must be below {}", 2 * self.dim));
        }
        if itf.orientation >= n_orientations(self.dim) {
            return Err(format!(
                "orientation {} invalid in dimension {}",
                itf.orientation, self.dim
            ));
        }
        if itf.patch_a == itf.patch_b && itf.face_a == itf.face_b {
            return Err("a face cannot be glued to itself".into());
        }
        let pa = &self.patches[itf.patch_a];
        let pb = &self.patches[itf.patch_b];
        if !faces_conforming(pa.space(), itf.face_a, pb.space(), itf.face_b, itf.orientation) {
            return Err("knot vectors on the two faces do not match".into());
        }
        let pairs = face_correspondence(
            &pa.space().n_basis_per_dir(),
            itf.face_a,
            &pb.space().n_basis_per_dir(),
            itf.face_b,
            itf.orientation,
        )
        .map_err(|e| e.to_string())?;
        for (a, b) in pairs {
            let same = points_close(&pa.points_start[a], &pb.points_start[b])
                && points_close(&pa.points_end[a], &pb.points_end[b])
                && (pa.weights[a] - pb.weights[b]).abs() <= COINCIDENCE_TOL;
            if !same {
                return Err(format!(
                    "control point {a} of patch {} does not coincide with point {b} of patch {}",
                    itf.patch_a, itf.patch_b
                ));
            }
        }
        Ok(())
    }

    /// All face pairs (between distinct patches) whose control points and
    /// weights coincide in both nets.
    pub fn detect_interfaces(&self) -> Vec<Interface> {
        let mut out = Vec::new();
        for a in 0..self.patches.len() {
            for b in a + 1..self.patches.len() {
                for fa in 0..2 * self.dim {
                    for fb in 0..2 * self.dim {
                        for o in 0..n_orientations(self.dim) {
                            let itf = Interface {
                                patch_a: a,
                                face_a: fa,
                                patch_b: b,
                                face_b: fb,
                                orientation: o,
                            };
                            if self.check_interface(&itf).is_ok() {
                                out.push(itf);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn patch(&self, index: usize) -> Result<&Patch> {
        self.patches.get(index).ok_or_else(|| {
            Error::Domain(format!(
                "patch index {index} out of range (have {})",
                self.patches.len()
            ))
        })
    }

    pub fn interfaces(&self) -> &[Interface] {
        &self.interfaces
    }

    /// Whether start and end nets coincide.
    pub fn is_static(&self) -> bool {
        self.patches.iter().all(|p| p.points_start == p.points_end)
    }

    fn check_t(t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("morph parameter {t} outside [0, 1]")));
        }
        Ok(())
    }

    fn check_xhat(&self, xhat: &[f64]) -> Result<()> {
        if xhat.len() != self.dim || xhat.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Domain(format!(
                "reference point {xhat:?} outside the closed unit cube of dimension {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// `F[t](x̂)` for one patch.
    pub fn map_point(&self, patch: usize, t: f64, xhat: &[f64]) -> Result<Vec<f64>> {
        Self::check_t(t)?;
        self.check_xhat(xhat)?;
        let p = self.patch(patch)?;
        let rb = p.rational_basis(xhat)?;
        let mut x = vec![0.0; self.dim];
        for (a, &g) in rb.indices.iter().enumerate() {
            for (xr, pr) in x.iter_mut().zip(p.point_at(g, t)) {
                *xr += rb.values[a] * pr;
            }
        }
        Ok(x)
    }

    /// `∂F[t](x̂)`, entries `∂Fᵢ/∂x̂ⱼ`.
    pub fn jacobian(&self, patch: usize, t: f64, xhat: &[f64]) -> Result<DMatrix<f64>> {
        Self::check_t(t)?;
        self.check_xhat(xhat)?;
        let p = self.patch(patch)?;
        let rb = p.rational_basis(xhat)?;
        let d = self.dim;
        let mut j = DMatrix::zeros(d, d);
        for (a, &g) in rb.indices.iter().enumerate() {
            let pt = p.point_at(g, t);
            for r in 0..d {
                for c in 0..d {
                    j[(r, c)] += pt[r] * rb.grads[a * d + c];
                }
            }
        }
        Ok(j)
    }

    /// `JV` with `∂F[t] = ∂F₀ + t·JV`; independent of `t`.
    pub fn velocity_jacobian(&self, patch: usize, xhat: &[f64]) -> Result<DMatrix<f64>> {
        self.check_xhat(xhat)?;
        Ok(self.patch(patch)?.jacobian_pair(xhat)?.1)
    }

    pub fn jacobian_pair(&self, patch: usize, xhat: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_xhat(xhat)?;
        self.patch(patch)?.jacobian_pair(xhat)
    }

    /// Samples `det ∂F[t]` on a `s^d` grid per geometry element of every patch
    /// (element corners included when `s ≥ 2`, element centres when `s = 1`).
    pub fn validate_mapping(&self, t: f64, samples_per_element: usize) -> Result<ValidityReport> {
        Self::check_t(t)?;
        if samples_per_element == 0 {
            return Err(Error::Domain("samples_per_element must be at least 1".into()));
        }
        let s = samples_per_element;
        let offsets: Vec<f64> = if s == 1 {
            vec![0.5]
        } else {
            (0..s).map(|k| k as f64 / (s - 1) as f64).collect()
        };
        let d = self.dim;
        let mut min_det = f64::INFINITY;
        for patch in &self.patches {
            let bps = patch.breakpoints();
            let n_el: Vec<usize> = bps.iter().map(|b| b.len() - 1).collect();
            let coords: Vec<Vec<f64>> = bps
                .iter()
                .map(|b| {
                    let mut c = Vec::new();
                    for w in b.windows(2) {
                        c.extend(offsets.iter().map(|o| w[0] + o * (w[1] - w[0])));
                    }
                    c
                })
                .collect();
            let counts: Vec<usize> = n_el.iter().map(|n| n * s).collect();
            let total: usize = counts.iter().product();
            for k in 0..total {
                let m = unflatten_index(&counts, k);
                let xhat: Vec<f64> = (0..d).map(|j| coords[j][m[j]].clamp(0.0, 1.0)).collect();
                let (j0, jv) = patch.jacobian_pair(&xhat)?;
                let det = (j0 + jv * t).determinant();
                min_det = min_det.min(det);
            }
        }
        Ok(ValidityReport {
            min_det,
            valid: min_det > 0.0,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        if let Some(patches) = value.get("patches").and_then(|p| p.as_array()) {
            for (i, p) in patches.iter().enumerate() {
                if p.get("weights_end").is_some() {
                    return Err(Error::Parse(format!(
                        "patches[{i}].weights_end: parameter-dependent weights are not supported"
                    )));
                }
            }
        }
        let file: GeometryFile = serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        file.into_geometry()
    }

    pub fn to_json(&self) -> String {
        let file = GeometryFile {
            dimension: self.dim,
            patches: self
                .patches
                .iter()
                .map(|p| PatchFile {
                    degrees: p.space.degrees(),
                    knots: p
                        .space
                        .factors()
                        .iter()
                        .map(|f| f.knots().values().to_vec())
                        .collect(),
                    weights: p.weights.clone(),
                    points_start: p.points_start.clone(),
                    points_end: Some(p.points_end.clone()),
                })
                .collect(),
            interfaces: Some(self.interfaces.clone()),
        };
        serde_json::to_string_pretty(&file).expect("geometry serialization cannot fail")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFile {
    dimension: usize,
    patches: Vec<PatchFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interfaces: Option<Vec<Interface>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchFile {
    degrees: Vec<usize>,
    knots: Vec<Vec<f64>>,
    weights: Vec<f64>,
    points_start: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    points_end: Option<Vec<Vec<f64>>>,
}

impl GeometryFile {
    fn into_geometry(self) -> Result<MorphGeometry> {
        let d = self.dimension;
        let mut patches = Vec::with_capacity(self.patches.len());
        for (i, pf) in self.patches.into_iter().enumerate() {
            let ctx = |field: &str, e: Error| Error::Parse(format!("patches[{i}].{field}: {e}"));
            if pf.degrees.len() != d || pf.knots.len() != d {
                return Err(Error::Parse(format!(
                    "patches[{i}]: expected {d} degrees and {d} knot vectors, got {} and {}",
                    pf.degrees.len(),
                    pf.knots.len()
                )));
            }
            let factors = pf
                .knots
                .into_iter()
                .zip(&pf.degrees)
                .map(|(k, &p)| KnotVector::new(k, p).map(SplineSpace1D::new))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| ctx("knots", e))?;
            let space = TensorSplineSpace::new(factors).map_err(|e| ctx("degrees", e))?;
            let end = pf.points_end.unwrap_or_else(|| pf.points_start.clone());
            let patch = Patch::new(space, pf.weights, pf.points_start, end)
                .map_err(|e| Error::Parse(format!("patches[{i}]: {e}")))?;
            patches.push(patch);
        }
        match self.interfaces {
            Some(itfs) => MorphGeometry::new(d, patches, itfs),
            None => MorphGeometry::with_detected_interfaces(d, patches),
        }
        .map_err(|e| match e {
            Error::Validation(m) => Error::Parse(m),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn identity_2d() -> MorphGeometry {
        shapes::identity(2, 2, 2).unwrap()
    }

    #[test]
    fn identity_net_has_identity_jacobian() {
        let g = identity_2d();
        for xhat in [[0.1, 0.2], [0.5, 0.5], [1.0, 0.0], [0.93, 0.71]] {
            let j = g.jacobian(0, 0.3, &xhat).unwrap();
            assert!((j - DMatrix::identity(2, 2)).amax() < 1e-14);
            let x = g.map_point(0, 0.3, &xhat).unwrap();
            assert!((x[0] - xhat[0]).abs() < 1e-15 && (x[1] - xhat[1]).abs() < 1e-15);
        }
        let report = g.validate_mapping(0.7, 5).unwrap();
        assert!(report.valid);
        assert!((report.min_det - 1.0).abs() < 1e-14);
    }

    #[test]
    fn affine_net_reproduces_linear_map() {
        let b = [[2.0, 0.5, 0.0], [-0.3, 1.5, 0.2], [0.1, 0.0, 0.7]];
        let c = [1.0, -2.0, 0.5];
        let g = shapes::affine_identity_image(3, 2, 2, &b, &c).unwrap();
        for xhat in [[0.1, 0.2, 0.3], [0.9, 0.4, 1.0]] {
            let j = g.jacobian(0, 0.0, &xhat).unwrap();
            let x = g.map_point(0, 0.0, &xhat).unwrap();
            for r in 0..3 {
                let mut xr = c[r];
                for k in 0..3 {
                    assert!((j[(r, k)] - b[r][k]).abs() < 1e-13);
                    xr += b[r][k] * xhat[k];
                }
                assert!((x[r] - xr).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let g = shapes::disk(&shapes::DiskParams {
            radius_start: 0.2,
            radius_end: 0.8,
            core_start: 0.4,
            core_end: 0.3,
        })
        .unwrap();
        for (pi, p) in g.patches().iter().enumerate() {
            let xhat = [0.37, 0.81];
            let rb = p.rational_basis(&xhat).unwrap();
            for (t, net) in [(0.0, p.points_start()), (1.0, p.points_end())] {
                let mut expected = [0.0; 2];
                for (a, &i) in rb.indices.iter().enumerate() {
                    expected[0] += rb.values[a] * net[i][0];
                    expected[1] += rb.values[a] * net[i][1];
                }
                let x = g.map_point(pi, t, &xhat).unwrap();
                assert_eq!(x, expected.to_vec());
            }
        }
    }

    #[test]
    fn scaled_disk_boundary_has_expected_radius() {
        let g = shapes::disk(&shapes::DiskParams::radial(0.2, 0.8)).unwrap();
        let mut checked = 0;
        for pi in 1..5 {
            for k in 0..=20 {
                let xhat = [1.0, k as f64 / 20.0];
                let x = g.map_point(pi, 0.5, &xhat).unwrap();
                let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
                assert!((norm - 0.5).abs() <= 1e-12, "patch {pi}: {norm}");
                checked += 1;
            }
        }
        assert_eq!(checked, 84);
    }

    #[test]
    fn jacobian_matches_finite_difference_on_quarter_annulus() {
        let g = shapes::quarter_annulus(1.0, 2.0).unwrap();
        let xhat = [0.5, 0.5];
        let j = g.jacobian(0, 0.0, &xhat).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let mut xp = xhat;
            let mut xm = xhat;
            xp[c] += h;
            xm[c] -= h;
            let fp = g.map_point(0, 0.0, &xp).unwrap();
            let fm = g.map_point(0, 0.0, &xm).unwrap();
            for r in 0..2 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!((j[(r, c)] - fd).abs() <= 1e-6 * j.amax());
            }
        }
    }

    #[test]
    fn velocity_jacobian_properties() {
        let g = identity_2d();
        assert_eq!(g.velocity_jacobian(0, &[0.3, 0.4]).unwrap().amax(), 0.0);

        let scaled = shapes::quarter_annulus_scaled(1.0, 2.0, 2.0).unwrap();
        let xhat = [0.3, 0.6];
        let jv = scaled.velocity_jacobian(0, &xhat).unwrap();
        let j0 = scaled.jacobian(0, 0.0, &xhat).unwrap();
        let j1 = scaled.jacobian(0, 1.0, &xhat).unwrap();
        assert!((&jv - &j0).amax() < 1e-14);
        assert!((&jv - (j1 - &j0)).amax() < 1e-13);
    }

    #[test]
    fn flipped_point_invalidates_mapping() {
        let base = shapes::identity(2, 2, 2).unwrap();
        let p = &base.patches()[0];
        let mut pts = p.points_start().to_vec();
        // interior Greville point (index (1,1) of a 4×4 net): push it far outside
        let dims = p.space().n_basis_per_dir();
        let i = flatten_index(&dims, &[1, 1]);
        pts[i] = vec![-pts[i][0] - 1.0, -pts[i][1] - 1.0];
        let patch = Patch::new(p.space().clone(), p.weights().to_vec(), pts.clone(), pts).unwrap();
        let g = MorphGeometry::new(2, vec![patch], vec![]).unwrap();
        let report = g.validate_mapping(0.0, 5).unwrap();
        assert!(!report.valid);
        assert!(report.min_det < 0.0);
    }

    #[test]
    fn disk_is_valid_along_the_morph() {
        let g = shapes::disk(&shapes::DiskParams {
            radius_start: 0.2,
            radius_end: 0.8,
            core_start: 0.45,
            core_end: 0.35,
        })
        .unwrap();
        for t in [0.0, 0.5, 1.0] {
            assert!(g.validate_mapping(t, 5).unwrap().valid);
        }
        assert_eq!(g.interfaces().len(), 8);
    }

    #[test]
    fn glued_faces_agree_pointwise() {
        let g = shapes::disk(&shapes::DiskParams {
            radius_start: 0.3,
            radius_end: 0.6,
            core_start: 0.4,
            core_end: 0.5,
        })
        .unwrap();
        let face_point = |face: usize, s: f64| -> [f64; 2] {
            let dir = face / 2;
            let side = (face % 2) as f64;
            if dir == 0 {
                [side, s]
            } else {
                [s, side]
            }
        };
        for itf in g.interfaces() {
            for k in 0..100 {
                let s = k as f64 / 99.0;
                let sb = if itf.orientation & 1 != 0 { 1.0 - s } else { s };
                for t in [0.0, 0.4, 1.0] {
                    let xa = g.map_point(itf.patch_a, t, &face_point(itf.face_a, s)).unwrap();
                    let xb = g.map_point(itf.patch_b, t, &face_point(itf.face_b, sb)).unwrap();
                    assert!(points_close(&xa, &xb), "{itf:?} at s = {s}: {xa:?} vs {xb:?}");
                }
            }
        }
    }

    #[test]
    fn out_of_range_queries_are_rejected() {
        let g = identity_2d();
        assert!(matches!(g.map_point(3, 0.0, &[0.5, 0.5]), Err(Error::Domain(_))));
        assert!(matches!(g.map_point(0, 1.5, &[0.5, 0.5]), Err(Error::Domain(_))));
        assert!(matches!(g.jacobian(0, 0.5, &[0.5, 1.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn json_round_trip_and_diagnostics() {
        let g = shapes::disk(&shapes::DiskParams::radial(0.2, 0.8)).unwrap();
        let text = g.to_json();
        let back = MorphGeometry::from_json(&text).unwrap();
        assert_eq!(back.patches().len(), 5);
        assert_eq!(back.interfaces(), g.interfaces());
        assert_eq!(
            back.map_point(3, 0.25, &[0.2, 0.9]).unwrap(),
            g.map_point(3, 0.25, &[0.2, 0.9]).unwrap()
        );

        let err = MorphGeometry::from_json("{\n  \"dimension\": 2,\n  \"patches\": [ }").unwrap_err();
        assert!(matches!(&err, Error::Parse(m) if m.contains("line 3")), "{err}");

        let rational_morph = r#"{"dimension":1,"patches":[{"degrees":[1],"knots":[[0,0,1,1]],
            "weights":[1,1],"weights_end":[1,2],"points_start":[[0],[1]]}]}"#;
        assert!(matches!(MorphGeometry::from_json(rational_morph), Err(Error::Parse(_))));

        let no_end = r#"{"dimension":1,"patches":[{"degrees":[1],"knots":[[0,0,1,1]],
            "weights":[1,1],"points_start":[[0],[2]]}]}"#;
        let g = MorphGeometry::from_json(no_end).unwrap();
        assert!(g.is_static());
        assert_eq!(g.map_point(0, 0.7, &[0.5]).unwrap(), vec![1.0]);

        let bad_weight = r#"{"dimension":1,"patches":[{"degrees":[1],"knots":[[0,0,1,1]],
            "weights":[1,-1],"points_start":[[0],[2]]}]}"#;
        let err = MorphGeometry::from_json(bad_weight).unwrap_err();
        assert!(matches!(&err, Error::Parse(m) if m.contains("patches[0]")), "{err}");
    }

    #[test]
    fn mismatched_interface_is_rejected() {
        let g = shapes::two_squares().unwrap();
        let mut itf = g.interfaces()[0];
        itf.face_b = (itf.face_b + 2) % 4;
        let err = MorphGeometry::new(2, g.patches().to_vec(), vec![itf]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn face_maps_are_involutions() {
        let dims_a = [3, 4, 5];
        let dims_b = [5, 3, 4];
        // face 0 of a has grid (4, 5); face 2 of b has grid (5, 4)
        for o in [4u8, 5, 6, 7] {
            let ab = face_correspondence(&dims_a, 0, &dims_b, 2, o).unwrap();
            let back_o = match o {
                4 => 4,
                5 => 6,
                6 => 5,
                _ => 7,
            };
            let ba = face_correspondence(&dims_b, 2, &dims_a, 0, back_o).unwrap();
            for (a, b) in ab {
                assert!(ba.contains(&(b, a)), "orientation {o}");
            }
        }
    }
}
