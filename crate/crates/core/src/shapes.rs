//! Built-in geometries: boxes, annular sectors, a five-patch disk and a
//! perturbed cube.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::geometry::{MorphGeometry, Patch};
use crate::spline::{unflatten_index, KnotVector, SplineSpace1D, TensorSplineSpace};

fn uniform_space(dim: usize, degree: usize, n_elements: usize) -> Result<TensorSplineSpace> {
    let f = SplineSpace1D::new(KnotVector::uniform(degree, n_elements)?);
    TensorSplineSpace::new(vec![f; dim])
}

fn greville(space: &TensorSplineSpace) -> Vec<Vec<f64>> {
    let per_dir: Vec<Vec<f64>> = space
        .factors()
        .iter()
        .map(|f| {
            let kv = f.knots().values();
            let p = f.degree();
            (0..f.n_basis())
                .map(|i| {
                    if p == 0 {
                        (kv[i] + kv[i + 1]) / 2.0
                    } else {
                        kv[i + 1..=i + p].iter().sum::<f64>() / p as f64
                    }
                })
                .collect()
        })
        .collect();
    let dims = space.n_basis_per_dir();
    (0..space.n_basis())
        .map(|g| {
            let m = unflatten_index(&dims, g);
            m.iter().enumerate().map(|(k, &i)| per_dir[k][i]).collect()
        })
        .collect()
}

/// Unit cube `[0, 1]^dim` with the identity control net, no morph.
pub fn identity(dim: usize, degree: usize, n_elements: usize) -> Result<MorphGeometry> {
    let space = uniform_space(dim, degree, n_elements)?;
    let pts = greville(&space);
    let n = pts.len();
    let patch = Patch::new(space, vec![1.0; n], pts.clone(), pts)?;
    MorphGeometry::new(dim, vec![patch], Vec::new())
}

/// Image of the identity net under `x̂ ↦ B x̂ + c`, no morph.
pub fn affine_identity_image(
    dim: usize,
    degree: usize,
    n_elements: usize,
    b: &[[f64; 3]; 3],
    c: &[f64; 3],
) -> Result<MorphGeometry> {
    let space = uniform_space(dim, degree, n_elements)?;
    let pts: Vec<Vec<f64>> = greville(&space)
        .into_iter()
        .map(|x| {
            (0..dim)
                .map(|r| c[r] + (0..dim).map(|k| b[r][k] * x[k]).sum::<f64>())
                .collect()
        })
        .collect();
    let n = pts.len();
    let patch = Patch::new(space, vec![1.0; n], pts.clone(), pts)?;
    MorphGeometry::new(dim, vec![patch], Vec::new())
}

/// Axis-aligned box `∏ [0, Lₖ]` morphing from `lengths_start` to `lengths_end`.
pub fn axis_box(lengths_start: &[f64], lengths_end: &[f64]) -> Result<MorphGeometry> {
    let dim = lengths_start.len();
    if lengths_end.len() != dim {
        return Err(Error::Validation("start and end lengths differ in dimension".into()));
    }
    if lengths_start.iter().chain(lengths_end).any(|&l| !(l > 0.0)) {
        return Err(Error::Validation("box lengths must be positive".into()));
    }
    let space = uniform_space(dim, 1, 1)?;
    let unit = greville(&space);
    let scale = |lengths: &[f64]| -> Vec<Vec<f64>> {
        unit.iter()
            .map(|x| x.iter().zip(lengths).map(|(a, l)| a * l).collect())
            .collect()
    };
    let patch = Patch::new(space, vec![1.0; unit.len()], scale(lengths_start), scale(lengths_end))?;
    MorphGeometry::new(dim, vec![patch], Vec::new())
}

/// Interval `[0, L]` morphing from `length_start` to `length_end`.
pub fn interval(length_start: f64, length_end: f64) -> Result<MorphGeometry> {
    axis_box(&[length_start], &[length_end])
}

fn annulus_patch(r_in: f64, r_out: f64, factor: f64) -> Result<Patch> {
    if !(r_in > 0.0 && r_out > r_in) {
        return Err(Error::Validation("annulus radii must satisfy 0 < r_in < r_out".into()));
    }
    let radial = SplineSpace1D::new(KnotVector::uniform(1, 1)?);
    let angular = SplineSpace1D::new(KnotVector::uniform(2, 1)?);
    let space = TensorSplineSpace::new(vec![radial, angular])?;
    let mut pts = Vec::new();
    let mut weights = Vec::new();
    for j in 0..3 {
        for &r in &[r_in, r_out] {
            let p = match j {
                0 => vec![r, 0.0],
                1 => vec![r, r],
                _ => vec![0.0, r],
            };
            pts.push(p);
            weights.push(if j == 1 { FRAC_1_SQRT_2 } else { 1.0 });
        }
    }
    let end = pts.iter().map(|p| p.iter().map(|x| x * factor).collect()).collect();
    Patch::new(space, weights, pts, end)
}

/// Quarter annulus in the first quadrant, radial direction first.
pub fn quarter_annulus(r_in: f64, r_out: f64) -> Result<MorphGeometry> {
    MorphGeometry::new(2, vec![annulus_patch(r_in, r_out, 1.0)?], Vec::new())
}

/// Quarter annulus whose end net is the start net scaled by `factor`.
pub fn quarter_annulus_scaled(r_in: f64, r_out: f64, factor: f64) -> Result<MorphGeometry> {
    MorphGeometry::new(2, vec![annulus_patch(r_in, r_out, factor)?], Vec::new())
}

/// Two unit squares sharing the edge `x = 1`, degree 1, no morph.
pub fn two_squares() -> Result<MorphGeometry> {
    let mk = |x0: f64| -> Result<Patch> {
        let space = uniform_space(2, 1, 1)?;
        let pts = vec![
            vec![x0, 0.0],
            vec![x0 + 1.0, 0.0],
            vec![x0, 1.0],
            vec![x0 + 1.0, 1.0],
        ];
        Patch::new(space, vec![1.0; 4], pts.clone(), pts)
    };
    MorphGeometry::with_detected_interfaces(2, vec![mk(0.0)?, mk(1.0)?])
}

/// Parameters of the five-patch disk morph. The core is a square of half-width
/// `core · radius`; `core` must lie in `(0, 1/√2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskParams {
    pub radius_start: f64,
    pub radius_end: f64,
    pub core_start: f64,
    pub core_end: f64,
}

impl DiskParams {
    pub const DEFAULT_CORE: f64 = 0.4;

    /// Pure radial scaling from `radius_start` to `radius_end`.
    pub fn radial(radius_start: f64, radius_end: f64) -> Self {
        Self {
            radius_start,
            radius_end,
            core_start: Self::DEFAULT_CORE,
            core_end: Self::DEFAULT_CORE,
        }
    }
}

struct DiskNet {
    core: Vec<Vec<f64>>,
    ring: Vec<Vec<Vec<f64>>>,
}

fn disk_net(radius: f64, core: f64) -> Result<DiskNet> {
    if !(radius > 0.0) || !(core > 0.0 && core < FRAC_1_SQRT_2) {
        return Err(Error::Validation(format!(
            "disk needs radius > 0 and core fraction in (0, 1/√2), got {radius} and {core}"
        )));
    }
    let c = core * radius;
    let xs = [-c, 0.0, c];
    let mut core_pts = Vec::new();
    for &y in &xs {
        for &x in &xs {
            core_pts.push(vec![x, y]);
        }
    }
    let a = radius * FRAC_1_SQRT_2;
    let inner = [[c, -c], [c, 0.0], [c, c]];
    let outer = [[a, -a], [radius * std::f64::consts::SQRT_2, 0.0], [a, a]];
    let mut right = Vec::new();
    for j in 0..3 {
        let (pi, po) = (inner[j], outer[j]);
        right.push(vec![pi[0], pi[1]]);
        right.push(vec![(pi[0] + po[0]) / 2.0, (pi[1] + po[1]) / 2.0]);
        right.push(vec![po[0], po[1]]);
    }
    // quarter turns are applied exactly, without trigonometric roundoff
    let rotate = |p: &Vec<f64>, k: usize| -> Vec<f64> {
        match k {
            0 => vec![p[0], p[1]],
            1 => vec![-p[1], p[0]],
            2 => vec![-p[0], -p[1]],
            _ => vec![p[1], -p[0]],
        }
    };
    let ring = (0..4)
        .map(|k| right.iter().map(|p| rotate(p, k)).collect())
        .collect();
    Ok(DiskNet {
        core: core_pts,
        ring,
    })
}

/// Disk of a square core patch surrounded by four rational annular patches.
/// Every patch has degree 2 in both directions and a single element; in the
/// annular patches the first direction points outward.
pub fn disk(params: &DiskParams) -> Result<MorphGeometry> {
    let start = disk_net(params.radius_start, params.core_start)?;
    let end = disk_net(params.radius_end, params.core_end)?;
    let q = SplineSpace1D::new(KnotVector::uniform(2, 1)?);
    let space = TensorSplineSpace::new(vec![q.clone(), q])?;
    let w = [1.0, FRAC_1_SQRT_2, 1.0];
    let core_w: Vec<f64> = (0..9).map(|g| w[g % 3] * w[g / 3]).collect();
    let ring_w: Vec<f64> = (0..9).map(|g| w[g / 3]).collect();
    let mut patches = vec![Patch::new(space.clone(), core_w, start.core, end.core)?];
    for (s, e) in start.ring.into_iter().zip(end.ring) {
        patches.push(Patch::new(space.clone(), ring_w.clone(), s, e)?);
    }
    MorphGeometry::with_detected_interfaces(2, patches)
}

/// Cube `[0, L]³` (degree 2, one element) whose end net moves the centre
/// control point by `amplitude · L · (1, 0.5, −0.7)` and stretches the cube by
/// `1 + amplitude` in the first direction.
pub fn perturbed_cube(length: f64, amplitude: f64) -> Result<MorphGeometry> {
    if !(length > 0.0) {
        return Err(Error::Validation("cube length must be positive".into()));
    }
    let space = uniform_space(3, 2, 1)?;
    let start: Vec<Vec<f64>> = greville(&space)
        .into_iter()
        .map(|x| x.iter().map(|v| v * length).collect())
        .collect();
    let mut end: Vec<Vec<f64>> = start
        .iter()
        .map(|p| vec![p[0] * (1.0 + amplitude), p[1], p[2]])
        .collect();
    let centre = 13;
    end[centre][0] += amplitude * length;
    end[centre][1] += 0.5 * amplitude * length;
    end[centre][2] -= 0.7 * amplitude * length;
    let n = start.len();
    let patch = Patch::new(space, vec![1.0; n], start, end)?;
    MorphGeometry::new(3, vec![patch], Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_area_matches_circle() {
        // Gauss quadrature of det ∂F over every patch
        let r = 0.7;
        let g = disk(&DiskParams::radial(r, r)).unwrap();
        let (x, w) = crate::quadrature::gauss_legendre(12);
        let mut area = 0.0;
        for pi in 0..5 {
            for (a, wa) in x.iter().zip(&w) {
                for (b, wb) in x.iter().zip(&w) {
                    let j = g.jacobian(pi, 0.0, &[*a, *b]).unwrap();
                    area += wa * wb * j.determinant();
                }
            }
        }
        let exact = std::f64::consts::PI * r * r;
        assert!((area - exact).abs() < 1e-9 * exact, "{area} vs {exact}");
    }

    #[test]
    fn box_and_interval_shapes() {
        let g = interval(1.0, 3.0).unwrap();
        assert_eq!(g.map_point(0, 0.5, &[1.0]).unwrap(), vec![2.0]);
        let b = axis_box(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!(b.is_static());
        assert!(axis_box(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn perturbed_cube_is_valid_and_not_affine() {
        let g = perturbed_cube(std::f64::consts::PI, 0.1).unwrap();
        for t in [0.0, 0.5, 1.0] {
            assert!(g.validate_mapping(t, 4).unwrap().valid);
        }
        let a = g.velocity_jacobian(0, &[0.2, 0.3, 0.4]).unwrap();
        let b = g.velocity_jacobian(0, &[0.7, 0.6, 0.1]).unwrap();
        assert!((a - b).amax() > 1e-3);
    }
}
