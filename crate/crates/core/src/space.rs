//! Discrete spline spaces on a geometry: scalar H¹ spaces glued across
//! patches, and single-patch curl-conforming vector spaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{face_correspondence, face_indices, faces_conforming, MorphGeometry};
use crate::spline::{flatten_index, unflatten_index, KnotVector, SplineSpace1D, TensorSplineSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    H1,
    Hcurl,
}

impl std::str::FromStr for SpaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h1" => Ok(SpaceKind::H1),
            "hcurl" => Ok(SpaceKind::Hcurl),
            other => Err(Error::Validation(format!(
                "unknown problem kind '{other}' (expected h1 or hcurl)"
            ))),
        }
    }
}

/// Spaces and dof numbering of one patch.
#[derive(Debug, Clone)]
pub struct PatchSpace {
    /// The scalar H¹ space of the patch.
    pub scalar: TensorSplineSpace,
    /// One space for H¹, `d` component spaces for H(curl).
    pub components: Vec<TensorSplineSpace>,
    /// Per component: local flat index → global index before elimination.
    pub global: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct DiscreteSpace {
    kind: SpaceKind,
    dim: usize,
    patches: Vec<PatchSpace>,
    n_total: usize,
    /// Global index before elimination → free dof index.
    free: Vec<Option<usize>>,
    n_dof: usize,
}

/// Solution knot vector on the geometry breakpoints: interior multiplicities
/// are shifted by the degree difference so the geometry continuity is kept.
fn solution_knots(geo: &KnotVector, p: usize) -> Result<KnotVector> {
    let pg = geo.degree() as i64;
    let bps = geo.breakpoints();
    let mut interior = Vec::new();
    for &x in &bps[1..bps.len() - 1] {
        let m = geo.multiplicity(x) as i64 + p as i64 - pg;
        let m = m.clamp(1, p.max(1) as i64) as usize;
        interior.extend(std::iter::repeat_n(x, m));
    }
    KnotVector::with_interior(p, &interior)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so numbering follows first appearance
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

impl DiscreteSpace {
    /// Builds the space for solution degrees `degrees` (one entry per
    /// direction, or a single entry for all) with every geometry element
    /// split into `refine` equal parts per direction.
    pub fn build(geom: &MorphGeometry, kind: SpaceKind, degrees: &[usize], refine: usize) -> Result<Self> {
        let d = geom.dim();
        let degrees: Vec<usize> = match degrees.len() {
            1 => vec![degrees[0]; d],
            n if n == d => degrees.to_vec(),
            n => {
                return Err(Error::Validation(format!(
                    "expected 1 or {d} degrees, got {n}"
                )))
            }
        };
        if refine == 0 {
            return Err(Error::Validation("refinement must be at least 1".into()));
        }
        if kind == SpaceKind::Hcurl {
            if d == 1 {
                return Err(Error::Unsupported("H(curl) needs dimension 2 or 3".into()));
            }
            if geom.patches().len() > 1 {
                return Err(Error::Unsupported(
                    "H(curl) spaces are only available on single-patch geometries".into(),
                ));
            }
        }
        if degrees.contains(&0) {
            return Err(Error::Validation("solution degrees must be at least 1".into()));
        }

        let mut scalars = Vec::with_capacity(geom.patches().len());
        for patch in geom.patches() {
            let factors = patch
                .space()
                .factors()
                .iter()
                .zip(&degrees)
                .map(|(f, &p)| SplineSpace1D::new(solution_knots(f.knots(), p)?).refine_uniform(refine))
                .collect::<Result<Vec<_>>>()?;
            scalars.push(TensorSplineSpace::new(factors)?);
        }

        match kind {
            SpaceKind::H1 => Self::build_h1(geom, scalars),
            SpaceKind::Hcurl => Self::build_hcurl(scalars.pop().expect("one patch")),
        }
    }

    fn build_h1(geom: &MorphGeometry, scalars: Vec<TensorSplineSpace>) -> Result<Self> {
        let d = geom.dim();
        let offsets: Vec<usize> = scalars
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.n_basis();
                Some(o)
            })
            .collect();
        let n_raw: usize = scalars.iter().map(TensorSplineSpace::n_basis).sum();
        let mut uf = UnionFind((0..n_raw).collect());
        let mut glued = vec![vec![false; 2 * d]; scalars.len()];
        for (k, itf) in geom.interfaces().iter().enumerate() {
            let (sa, sb) = (&scalars[itf.patch_a], &scalars[itf.patch_b]);
            if !faces_conforming(sa, itf.face_a, sb, itf.face_b, itf.orientation) {
                return Err(Error::Validation(format!(
                    "interface {k}: solution spaces do not match across the interface"
                )));
            }
            let pairs = face_correspondence(
                &sa.n_basis_per_dir(),
                itf.face_a,
                &sb.n_basis_per_dir(),
                itf.face_b,
                itf.orientation,
            )?;
            for (a, b) in pairs {
                uf.union(offsets[itf.patch_a] + a, offsets[itf.patch_b] + b);
            }
            glued[itf.patch_a][itf.face_a] = true;
            glued[itf.patch_b][itf.face_b] = true;
        }

        let mut root_to_global = vec![usize::MAX; n_raw];
        let mut n_total = 0;
        let mut raw_global = vec![0; n_raw];
        for (i, g) in raw_global.iter_mut().enumerate() {
            let r = uf.find(i);
            if root_to_global[r] == usize::MAX {
                root_to_global[r] = n_total;
                n_total += 1;
            }
            *g = root_to_global[r];
        }

        let mut boundary = vec![false; n_total];
        for (pi, s) in scalars.iter().enumerate() {
            let dims = s.n_basis_per_dir();
            for face in 0..2 * d {
                if glued[pi][face] {
                    continue;
                }
                for i in face_indices(&dims, face).0 {
                    boundary[raw_global[offsets[pi] + i]] = true;
                }
            }
        }

        let patches = scalars
            .into_iter()
            .enumerate()
            .map(|(pi, s)| {
                let global = (0..s.n_basis()).map(|i| raw_global[offsets[pi] + i]).collect();
                PatchSpace {
                    components: vec![s.clone()],
                    scalar: s,
                    global: vec![global],
                }
            })
            .collect();
        Ok(Self::finish(SpaceKind::H1, d, patches, n_total, &boundary))
    }

    fn build_hcurl(scalar: TensorSplineSpace) -> Result<Self> {
        let d = scalar.dim();
        let mut components = Vec::with_capacity(d);
        let mut global = Vec::with_capacity(d);
        let mut boundary = Vec::new();
        let mut offset = 0;
        for c in 0..d {
            let factors: Vec<SplineSpace1D> = scalar
                .factors()
                .iter()
                .enumerate()
                .map(|(k, f)| if k == c { f.derivative_space() } else { Ok(f.clone()) })
                .collect::<Result<_>>()?;
            let comp = TensorSplineSpace::new(factors)?;
            let dims = comp.n_basis_per_dir();
            for i in 0..comp.n_basis() {
                let m = unflatten_index(&dims, i);
                let on_tangential_face =
                    (0..d).any(|k| k != c && (m[k] == 0 || m[k] == dims[k] - 1));
                boundary.push(on_tangential_face);
            }
            global.push((offset..offset + comp.n_basis()).collect());
            offset += comp.n_basis();
            components.push(comp);
        }
        let patch = PatchSpace {
            scalar,
            components,
            global,
        };
        Ok(Self::finish(SpaceKind::Hcurl, d, vec![patch], offset, &boundary))
    }

    fn finish(kind: SpaceKind, dim: usize, patches: Vec<PatchSpace>, n_total: usize, boundary: &[bool]) -> Self {
        let mut free = vec![None; n_total];
        let mut n_dof = 0;
        for (g, f) in free.iter_mut().enumerate() {
            if !boundary[g] {
                *f = Some(n_dof);
                n_dof += 1;
            }
        }
        Self {
            kind,
            dim,
            patches,
            n_total,
            free,
            n_dof,
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patches(&self) -> &[PatchSpace] {
        &self.patches
    }

    /// Number of basis functions before boundary elimination.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Number of free degrees of freedom.
    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    /// Free dof index of a global index, `None` on the boundary.
    pub fn free_index(&self, global: usize) -> Option<usize> {
        self.free[global]
    }

    /// Coefficients, over the free H(curl) dofs, of the reference gradient of
    /// the scalar basis function `local` of the single patch.
    pub fn gradient_coefficients(&self, local: usize) -> Result<Vec<f64>> {
        if self.kind != SpaceKind::Hcurl {
            return Err(Error::Validation("discrete gradients map into H(curl) spaces".into()));
        }
        let patch = &self.patches[0];
        let scalar = &patch.scalar;
        let dims = scalar.n_basis_per_dir();
        if local >= scalar.n_basis() {
            return Err(Error::Domain(format!("scalar basis index {local} out of range")));
        }
        let m = unflatten_index(&dims, local);
        let mut out = vec![0.0; self.n_dof];
        for c in 0..self.dim {
            let f = scalar.factor(c);
            let kv = f.knots().values();
            let p = f.degree();
            let i = m[c];
            let comp_dims = patch.components[c].n_basis_per_dir();
            // d/dξ B_{i,p} = p/(ξ_{i+p}−ξ_i)·D_{i−1} − p/(ξ_{i+p+1}−ξ_{i+1})·D_i
            let mut terms = Vec::new();
            let left = kv[i + p] - kv[i];
            if i >= 1 && left > 0.0 {
                terms.push((i - 1, p as f64 / left));
            }
            let right = kv[i + p + 1] - kv[i + 1];
            if i < comp_dims[c] && right > 0.0 {
                terms.push((i, -(p as f64) / right));
            }
            for (j, coef) in terms {
                let mut cm = m.clone();
                cm[c] = j;
                let g = patch.global[c][flatten_index(&comp_dims, &cm)];
                if let Some(fi) = self.free[g] {
                    out[fi] += coef;
                }
            }
        }
        Ok(out)
    }

    /// Scalar basis functions of the single patch that vanish on the boundary.
    pub fn interior_scalar_indices(&self) -> Vec<usize> {
        let s = &self.patches[0].scalar;
        let dims = s.n_basis_per_dir();
        (0..s.n_basis())
            .filter(|&i| {
                unflatten_index(&dims, i)
                    .iter()
                    .zip(&dims)
                    .all(|(&k, &n)| k > 0 && k + 1 < n)
            })
            .collect()
    }
}
