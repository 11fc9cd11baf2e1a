//! Reference solutions built from first principles: Bessel series and roots,
//! enumerated box spectra, closed-form pillbox derivatives and central
//! difference stencils. Nothing here depends on the discretization modules.

use crate::error::{Error, Result};

/// `J_n(x)` by its power series; accurate to about `1e−12` for `|x| ≤ 15`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let mut sum = term;
    let q = half * half;
    for m in 1..200 {
        term *= -q / (m as f64 * (m + n) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs().max(1e-300) && m > 2 {
            break;
        }
    }
    sum
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// First positive root of `J₀`, bracketed in `[2, 3]`.
pub fn bessel_j0_first_root() -> f64 {
    bisect(|x| bessel_j(0, x), 2.0, 3.0)
}

/// The `k`-th positive root of `J_n` (`k ≥ 1`), for roots below 15.
pub fn bessel_root(n: u32, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("root index starts at 1".into()));
    }
    let step = 0.02;
    let mut found = 0;
    let mut a = 0.05;
    while a < 15.0 {
        let b = a + step;
        if (bessel_j(n, a) < 0.0) != (bessel_j(n, b) < 0.0) {
            found += 1;
            if found == k {
                return Ok(bisect(|x| bessel_j(n, x), a, b));
            }
        }
        a = b;
    }
    Err(Error::Domain(format!("root {k} of J_{n} lies beyond the series range")))
}

/// Dirichlet Laplacian on a disk of radius `r`: `j²_{n,k}/r²`, ascending,
/// with every `n ≥ 1` value listed twice.
pub fn disk_spectrum(r: f64, count: usize) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius {r} must be positive")));
    }
    let mut values = Vec::new();
    for n in 0..12u32 {
        for k in 1.. {
            match bessel_root(n, k) {
                Ok(j) => {
                    let l = j * j / (r * r);
                    values.push(l);
                    if n > 0 {
                        values.push(l);
                    }
                }
                Err(_) => break,
            }
        }
    }
    values.sort_by(f64::total_cmp);
    let limit = 15.0 * 15.0 / (r * r);
    // beyond the scan range the listing could miss values
    values.retain(|&v| v < 0.8 * limit);
    if values.len() < count {
        return Err(Error::Domain(format!("only {} disk eigenvalues are available", values.len())));
    }
    values.truncate(count);
    Ok(values)
}

/// `λ(r) = x₀₁²/r²` and its first `n` derivatives in `r`.
pub fn pillbox_lambda_derivs(r: f64, n: usize) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius {r} must be positive")));
    }
    let x = bessel_j0_first_root();
    let mut out = Vec::with_capacity(n + 1);
    let mut factorial = 1.0;
    for k in 0..=n {
        factorial *= (k + 1) as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        out.push(x * x * sign * factorial * r.powi(-2 - k as i32));
    }
    Ok(out)
}

/// Exact mean of `x₀₁²/r²` for `r` uniform on `[a, b]`.
pub fn pillbox_expectation(a: f64, b: f64) -> f64 {
    let x = bessel_j0_first_root();
    x * x / (b - a) * (1.0 / a - 1.0 / b)
}

/// Mean over `[a, b]` of the order-`n` Taylor polynomial of `x₀₁²/r²` about `r0`.
pub fn pillbox_taylor_expectation(r0: f64, a: f64, b: f64, n: usize) -> f64 {
    let x = bessel_j0_first_root();
    let mut sum = 0.0;
    for k in 0..=n {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let e = k as i32 + 1;
        sum += sign * r0.powi(-2 - k as i32) * ((b - r0).powi(e) - (a - r0).powi(e));
    }
    x * x * sum / (b - a)
}

/// Dirichlet Laplacian on `[0, L]`: `(kπ/L)²`.
pub fn interval_spectrum(length: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|k| (k as f64 * std::f64::consts::PI / length).powi(2))
        .collect()
}

/// Dirichlet Laplacian on `[0, L]²`: `(π/L)²(m² + n²)`, `m, n ≥ 1`.
pub fn square_spectrum(length: f64, count: usize) -> Vec<f64> {
    let base = (std::f64::consts::PI / length).powi(2);
    let mut v = Vec::new();
    let top = count + 2;
    for m in 1..=top {
        for n in 1..=top {
            v.push((m * m + n * n) as u64);
        }
    }
    v.sort_unstable();
    v.into_iter().take(count).map(|s| base * s as f64).collect()
}

/// Nonzero Maxwell eigenvalues of the perfectly conducting cube `[0, L]³`:
/// `(π/L)²(m² + n² + k²)` with at least two nonzero indices; triples with
/// three nonzero indices carry two polarizations.
pub fn cube_maxwell_spectrum(length: f64, count: usize) -> Vec<f64> {
    let base = (std::f64::consts::PI / length).powi(2);
    let top = count + 2;
    let mut v = Vec::new();
    for m in 0..=top {
        for n in 0..=top {
            for k in 0..=top {
                let nonzero = [m, n, k].iter().filter(|&&i| i > 0).count();
                let s = (m * m + n * n + k * k) as u64;
                match nonzero {
                    2 => v.push(s),
                    3 => {
                        v.push(s);
                        v.push(s);
                    }
                    _ => {}
                }
            }
        }
    }
    v.sort_unstable();
    v.into_iter().take(count).map(|s| base * s as f64).collect()
}

/// Offsets and weights of the second-order central stencil for derivative `k`.
fn stencil(k: usize) -> Result<(&'static [i32], &'static [f64])> {
    Ok(match k {
        1 => (&[-1, 1], &[-0.5, 0.5]),
        2 => (&[-1, 0, 1], &[1.0, -2.0, 1.0]),
        3 => (&[-2, -1, 1, 2], &[-0.5, 1.0, -1.0, 0.5]),
        4 => (&[-2, -1, 0, 1, 2], &[1.0, -4.0, 6.0, -4.0, 1.0]),
        _ => return Err(Error::Domain(format!("no stencil for derivative order {k}"))),
    })
}

/// Central-difference estimate of the `k`-th derivative (`1 ≤ k ≤ 4`) of a
/// vector-valued function.
pub fn finite_difference<F>(mut f: F, t: f64, k: usize, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step {h} must be positive")));
    }
    let (offsets, weights) = stencil(k)?;
    let mut acc: Option<Vec<f64>> = None;
    for (&o, &w) in offsets.iter().zip(weights) {
        let v = f(t + o as f64 * h)?;
        match acc.as_mut() {
            None => acc = Some(v.iter().map(|x| w * x).collect()),
            Some(a) => {
                if a.len() != v.len() {
                    return Err(Error::Validation("function changed its output length".into()));
                }
                a.iter_mut().zip(&v).for_each(|(a, x)| *a += w * x);
            }
        }
    }
    let scale = h.powi(k as i32);
    Ok(acc.unwrap_or_default().into_iter().map(|x| x / scale).collect())
}

/// Scalar form of [`finite_difference`].
pub fn finite_difference_scalar<F>(mut f: F, t: f64, k: usize, h: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    Ok(finite_difference(|s| Ok(vec![f(s)?]), t, k, h)?[0])
}
