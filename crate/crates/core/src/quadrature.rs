//! Quadrature and numerical differentiation helpers.

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton iteration on P_n).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            nodes[0] = 0.0;
            weights[0] = 2.0;
            break;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre rule over `panels` equal panels.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mid = lo + 0.5 * h;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
        total
    }
}

/// Composite Simpson on uniformly spaced samples (odd sample count).
pub fn simpson_uniform(values: &[f64], h: f64) -> Result<f64> {
    let n = values.len();
    if n < 3 || n % 2 == 0 {
        return Err(Error::Quadrature(format!(
            "Simpson rule needs an odd number (>= 3) of samples, got {n}"
        )));
    }
    let mut s = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    Ok(s * h / 3.0)
}

/// Cumulative Simpson integral at every even node; odd nodes are filled by
/// the trapezoid-corrected half-panel rule.
pub fn cumulative_simpson(values: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 3 || n % 2 == 0 {
        return Err(Error::Quadrature(format!(
            "cumulative Simpson needs an odd number (>= 3) of samples, got {n}"
        )));
    }
    let mut out = vec![0.0; n];
    for k in (0..n - 2).step_by(2) {
        let (f0, f1, f2) = (values[k], values[k + 1], values[k + 2]);
        // half panel [x_k, x_{k+1}] from the quadratic through three points
        out[k + 1] = out[k] + h * (5.0 * f0 + 8.0 * f1 - f2) / 12.0;
        out[k + 2] = out[k] + h * (f0 + 4.0 * f1 + f2) / 3.0;
    }
    Ok(out)
}

fn simpson_step(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson with Richardson correction.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson_step(fa, fm, fb, a, b);
    recurse(&mut f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_step(fa, flm, fm, a, m);
    let right = simpson_step(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Simpson exhausted depth on [{a}, {b}] (residual {delta:e})"
        )));
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Central-difference derivative refined by two Richardson levels.
pub fn richardson_derivative<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    let mut d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let d1 = d(h);
    let d2 = d(h / 2.0);
    let d3 = d(h / 4.0);
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// Central second derivative refined by two Richardson levels.
pub fn richardson_second_derivative<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    let f0 = f(x);
    let mut d = |h: f64| (f(x + h) - 2.0 * f0 + f(x - h)) / (h * h);
    let d1 = d(h);
    let d2 = d(h / 2.0);
    let d3 = d(h / 4.0);
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// One-sided (forward) first derivative, second-order stencil with one
/// Richardson level. Used where the function has a kink at `x`.
pub fn forward_derivative<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    let f0 = f(x);
    let mut d = |h: f64| (-3.0 * f0 + 4.0 * f(x + h) - f(x + 2.0 * h)) / (2.0 * h);
    let d1 = d(h);
    let d2 = d(h / 2.0);
    (4.0 * d2 - d1) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..=20 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((num - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn composite_gauss_on_exp() {
        let r = GaussRule::new(10);
        let v = r.integrate(f64::exp, 0.0, 3.0, 4);
        assert!((v - (3f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn simpson_rules() {
        let h = 0.01;
        let vals: Vec<f64> = (0..=200).map(|i| (i as f64 * h).sin()).collect();
        let s = simpson_uniform(&vals, h).unwrap();
        assert!((s - (1.0 - 2f64.cos())).abs() < 1e-9);
        let cum = cumulative_simpson(&vals, h).unwrap();
        for (i, v) in cum.iter().enumerate() {
            let exact = 1.0 - (i as f64 * h).cos();
            assert!((v - exact).abs() < 1e-9, "i={i}");
        }
        assert!(simpson_uniform(&vals[..200], h).is_err());
    }

    #[test]
    fn adaptive_simpson_on_log_singularity() {
        let v = adaptive_simpson(|x| (1.0 + x).ln(), 0.0, 1.0, 1e-12, 40).unwrap();
        assert!((v - (2f64.ln() * 2.0 - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn derivatives() {
        let d = richardson_derivative(f64::sin, 0.3, 0.1);
        assert!((d - 0.3f64.cos()).abs() < 1e-10);
        let d2 = richardson_second_derivative(f64::exp, 0.0, 0.05);
        assert!((d2 - 1.0).abs() < 1e-9);
        let fd = forward_derivative(|x: f64| x.abs() + x * x, 0.0, 1e-3);
        assert!((fd - 1.0).abs() < 1e-9);
    }
}
