//! Moments and large-`t` distribution of the field time operator `T = B/N`
//! for commuting collapse (`H_A = 0`) and for the power-law drive
//! `A(t') = A t'^s`.
//!
//! Each eigencomponent `n` carries the drive `A_n(t') = A_scale a_n t'^s`, so
//! `Z_n = lambda int_0^t A_n^2`, `c1 = int t' A_n^2 / int A_n^2` and
//! `c2 = int t'^2 A_n^2 / int A_n^2`. The vacuum sector (`a_n = 0`) is
//! assigned `T = 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::energy::{CharacteristicFunction, PointMass};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, C64};
use crate::quadrature::{adaptive_simpson, GaussRule};

/// Hard cap on series terms per component.
pub const MAX_SERIES_TERMS: usize = 500;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeOpSpec {
    pub alpha: Vec<C64>,
    pub a: Vec<f64>,
    pub lambda: f64,
    pub t: f64,
    /// Power-law exponent; `None` is the constant drive (`s = 0`).
    pub s: Option<f64>,
    pub a_scale: f64,
}

impl TimeOpSpec {
    pub fn diagonal(alpha: Vec<C64>, a: Vec<f64>, lambda: f64, t: f64) -> Result<Self> {
        let spec = Self {
            alpha,
            a,
            lambda,
            t,
            s: None,
            a_scale: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn power_law(alpha: Vec<C64>, a: Vec<f64>, lambda: f64, t: f64, s: f64, a_scale: f64) -> Result<Self> {
        let spec = Self {
            alpha,
            a,
            lambda,
            t,
            s: Some(s),
            a_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.a.len() || self.a.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "amplitudes vs eigenvalues",
                expected: self.a.len(),
                got: self.alpha.len(),
            });
        }
        let n: f64 = self.alpha.iter().map(|z| z.norm_sqr()).sum();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized { deviation: (n - 1.0).abs() });
        }
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(invalid("t", "horizon must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid("lambda", "collapse rate must be non-negative"));
        }
        if let Some(s) = self.s {
            if !(s >= 0.0) {
                return Err(invalid("s", "power-law exponent must be non-negative"));
            }
        }
        if !self.a_scale.is_finite() {
            return Err(invalid("a_scale", "must be finite"));
        }
        Ok(())
    }

    fn exponent(&self) -> f64 {
        self.s.unwrap_or(0.0)
    }

    fn weights(&self) -> Vec<f64> {
        self.alpha.iter().map(|z| z.norm_sqr()).collect()
    }

    fn components(&self) -> Vec<Component> {
        let s = self.exponent();
        self.weights()
            .into_iter()
            .zip(&self.a)
            .map(|(w, a)| Component::new(w, self.a_scale * a, self.lambda, self.t, s))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Component {
    weight: f64,
    z: f64,
    c1: f64,
    c2: f64,
}

impl Component {
    fn new(weight: f64, amp: f64, lambda: f64, t: f64, s: f64) -> Self {
        let k = 2.0 * s + 1.0;
        Self {
            weight,
            z: lambda * amp * amp * t.powf(k) / k,
            c1: t * k / (k + 1.0),
            c2: t * t * k / (k + 2.0),
        }
    }

    fn vacuum(&self) -> bool {
        self.z == 0.0
    }
}

/// Mean of `T` in the commuting case:
/// `(t/2) [1 - sum_k |alpha_k|^2 exp(-lambda t a_k^2)]`.
pub fn mean_t(spec: &TimeOpSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec
        .components()
        .iter()
        .map(|c| c.weight * c.c1 * (1.0 - (-c.z).exp()))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawMean {
    pub exact: f64,
    pub asymptote: f64,
    pub relative_gap: f64,
}

/// Mean of `T` for a single component driven by `A t'^s`, with the
/// weighted time integrals done by Gauss-Legendre quadrature, and the
/// large-time value `t (2s+1)/(2s+2)`.
pub fn mean_t_power_law(s: f64, lambda: f64, a_scale: f64, t: f64) -> Result<PowerLawMean> {
    if !(s >= 0.0) || !(t > 0.0) || !(lambda >= 0.0) {
        return Err(invalid("s", "need s >= 0, t > 0 and lambda >= 0"));
    }
    let rule = GaussRule::new(32);
    let panels = 16;
    let norm = rule.integrate(|x| x.powf(2.0 * s), 0.0, t, panels);
    let first = rule.integrate(|x| x * x.powf(2.0 * s), 0.0, t, panels);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Quadrature(format!("drive normalization {norm:e}")));
    }
    let z = lambda * a_scale * a_scale * norm;
    let exact = first / norm * (1.0 - (-z).exp());
    let asymptote = t * (2.0 * s + 1.0) / (2.0 * s + 2.0);
    Ok(PowerLawMean {
        exact,
        asymptote,
        relative_gap: (exact - asymptote).abs() / asymptote,
    })
}

/// Switch points for evaluating `f(z) = int_0^z (e^x - 1)/x dx`.
pub const F_SERIES_LIMIT: f64 = 1.0;
pub const F_ASYMPTOTIC_FROM: f64 = 30.0;

fn f_series(z: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for m in 1..200 {
        term *= z / m as f64;
        let add = term / m as f64;
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn f_quadrature(z: f64) -> Result<f64> {
    let g = |x: f64| if x == 0.0 { 1.0 } else { x.exp_m1() / x };
    adaptive_simpson(g, 0.0, z, 1e-13 * z.exp(), 50)
}

/// `e^{-z} (Ei(z) - gamma - ln z)` from the asymptotic expansion of `Ei`,
/// summed up to its smallest term.
fn f_scaled_asymptotic(z: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..(z as usize) {
        let next = term * k as f64 / z;
        if next > term {
            break;
        }
        term = next;
        sum += term;
        if term < 1e-17 {
            break;
        }
    }
    sum / z - (-z).exp() * (EULER_GAMMA + z.ln())
}

/// `f(z) = int_0^z (e^x - 1)/x dx`. Overflows to infinity past `z ~ 700`;
/// use [`f_scaled`] there.
pub fn f_integral(z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(invalid("z", "f is evaluated for z >= 0"));
    }
    if z < F_SERIES_LIMIT {
        Ok(f_series(z))
    } else if z <= F_ASYMPTOTIC_FROM {
        f_quadrature(z)
    } else {
        Ok(f_scaled_asymptotic(z) * z.exp())
    }
}

/// `e^{-z} f(z)`, finite for all `z >= 0`.
pub fn f_scaled(z: f64) -> Result<f64> {
    if z > F_ASYMPTOTIC_FROM {
        Ok(f_scaled_asymptotic(z))
    } else {
        Ok(f_integral(z)? * (-z).exp())
    }
}

/// Second moment of `T`:
/// `sum_n |alpha_n|^2 {c1^2 [1 - e^{-Z}(1 + f(Z))] + c2 e^{-Z} f(Z)}`.
pub fn second_moment_t(spec: &TimeOpSpec) -> Result<f64> {
    spec.validate()?;
    let mut total = 0.0;
    for c in spec.components() {
        if c.vacuum() {
            continue;
        }
        let fs = f_scaled(c.z)?;
        total += c.weight * (c.c1 * c.c1 * (1.0 - (-c.z).exp() - fs) + c.c2 * fs);
    }
    Ok(total)
}

pub fn variance_t(spec: &TimeOpSpec) -> Result<f64> {
    let m = mean_t(spec)?;
    Ok(second_moment_t(spec)? - m * m)
}

/// `Var(T) / <T>^2`.
pub fn fractional_deviation_t(spec: &TimeOpSpec) -> Result<f64> {
    let m = mean_t(spec)?;
    if m == 0.0 {
        return Err(invalid("spec", "mean of T vanishes"));
    }
    Ok(variance_t(spec)? / (m * m))
}

/// Large-time form of the second moment as usually quoted,
/// `[t(2s+1)/(2s+2)]^2 [1 + (2s+2)^2 / ((2s+3) lambda t^{2s+1}) sum |alpha|^2/a^2]`,
/// with `a` including `a_scale`. This keeps `c2 f(Z)` and drops
/// `-c1^2 f(Z)`; see [`second_moment_t_leading`] for the consistent
/// expansion.
pub fn second_moment_t_quoted(spec: &TimeOpSpec) -> Result<f64> {
    spec.validate()?;
    let s = spec.exponent();
    let k = 2.0 * s + 1.0;
    let c1 = spec.t * k / (k + 1.0);
    let mut sum = 0.0;
    for (w, a) in spec.weights().iter().zip(&spec.a) {
        let amp = spec.a_scale * a;
        if amp == 0.0 {
            return Err(invalid("a", "large-time form needs every a_n nonzero"));
        }
        sum += w / (amp * amp);
    }
    Ok(c1 * c1 * (1.0 + (k + 1.0).powi(2) / ((k + 2.0) * spec.lambda * spec.t.powf(k)) * sum))
}

/// Leading large-`Z` expansion of the exact second moment:
/// `c1^2 [1 + 1/((2s+3) lambda t^{2s+1}) sum |alpha|^2/a^2]`.
pub fn second_moment_t_leading(spec: &TimeOpSpec) -> Result<f64> {
    spec.validate()?;
    let s = spec.exponent();
    let k = 2.0 * s + 1.0;
    let c1 = spec.t * k / (k + 1.0);
    let mut sum = 0.0;
    for (w, a) in spec.weights().iter().zip(&spec.a) {
        let amp = spec.a_scale * a;
        if amp == 0.0 {
            return Err(invalid("a", "large-time form needs every a_n nonzero"));
        }
        sum += w / (amp * amp);
    }
    Ok(c1 * c1 * (1.0 + sum / ((k + 2.0) * spec.lambda * spec.t.powf(k))))
}

/// Drive-weighted `int A^2 e^{-i beta t'/m} / int A^2` for `A ~ t'^s`.
struct PhaseAverage {
    s: f64,
    t: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PhaseAverage {
    fn new(s: f64, t: f64) -> Self {
        let (x, w) = crate::quadrature::gauss_legendre(48);
        let panels = 16;
        let h = t / panels as f64;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (xi, wi) in x.iter().zip(&w) {
                let tt = mid + 0.5 * h * xi;
                nodes.push(tt);
                weights.push(0.5 * h * wi * tt.powf(2.0 * s));
            }
        }
        let norm: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= norm);
        Self { s, t, nodes, weights }
    }

    fn at(&self, omega: f64) -> C64 {
        if omega == 0.0 {
            return c(1.0, 0.0);
        }
        if self.s == 0.0 {
            let x = omega * self.t;
            // (1 - e^{-i x}) / (i x)
            return (c(1.0, 0.0) - c(0.0, -x).exp()) / c(0.0, x);
        }
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(tt, w)| c(0.0, -omega * tt).exp() * *w)
            .sum()
    }
}

/// Number of Poisson(`z`) terms `M` with `P(N >= M) < tol`.
fn poisson_terms(z: f64, tol: f64) -> Result<usize> {
    if z == 0.0 {
        return Ok(1);
    }
    let mut m = z.ceil() as usize + 1;
    loop {
        if m > MAX_SERIES_TERMS {
            return Err(Error::SeriesTruncation { terms: MAX_SERIES_TERMS });
        }
        let log_p = -z + m as f64 * z.ln() - ln_gamma(m as f64 + 1.0);
        let bound = log_p.exp() / (1.0 - z / (m as f64 + 1.0));
        if bound < tol {
            return Ok(m);
        }
        m += 1;
    }
}

/// `<e^{-i beta T}>` in the commuting case:
/// `sum_n |alpha_n|^2 e^{-Z_n} [1 + sum_m Z_n^m/m! r_m(beta)^m]` where
/// `r_m` is the drive-weighted average of `e^{-i beta t'/m}`. Each series
/// stops once the Poisson tail is below `series_tol`.
pub fn charfn_t_diag(spec: &TimeOpSpec, beta_grid: &[f64], series_tol: f64) -> Result<CharacteristicFunction> {
    spec.validate()?;
    if !(series_tol > 0.0) {
        return Err(invalid("series_tol", "must be positive"));
    }
    let comps = spec.components();
    let terms: Vec<usize> = comps.iter().map(|c| poisson_terms(c.z, series_tol)).collect::<Result<_>>()?;
    let phase = PhaseAverage::new(spec.exponent(), spec.t);
    let values = beta_grid
        .par_iter()
        .map(|b| {
            comps
                .iter()
                .zip(&terms)
                .map(|(comp, m_max)| {
                    if comp.vacuum() {
                        return c(comp.weight, 0.0);
                    }
                    let mut sum = c((-comp.z).exp(), 0.0);
                    for m in 1..=*m_max {
                        let log_p = -comp.z + m as f64 * comp.z.ln() - ln_gamma(m as f64 + 1.0);
                        sum += phase.at(b / m as f64).powu(m as u32) * log_p.exp();
                    }
                    sum * comp.weight
                })
                .sum()
        })
        .collect();
    Ok(CharacteristicFunction {
        beta_grid: beta_grid.to_vec(),
        values,
    })
}

/// Large-time distribution of `T`: a point mass at the center of time
/// `t (2s+1)/(2s+2)` for each collapsing sector and at 0 for the vacuum
/// sector, merged by location.
pub fn dist_t_large_t_diag(spec: &TimeOpSpec) -> Result<Vec<PointMass>> {
    spec.validate()?;
    let mut masses: Vec<PointMass> = Vec::new();
    for comp in spec.components() {
        let location = if comp.vacuum() { 0.0 } else { comp.c1 };
        match masses.iter_mut().find(|p| p.location == location) {
            Some(p) => p.weight += comp.weight,
            None => masses.push(PointMass {
                location,
                weight: comp.weight,
            }),
        }
    }
    masses.retain(|p| p.weight > 0.0);
    masses.sort_by(|x, y| x.location.total_cmp(&y.location));
    Ok(masses)
}

/// `int_0^t t'^{2s} dt'` weighted center of time, by closed form.
pub fn center_of_time(s: f64, t: f64) -> f64 {
    t * (2.0 * s + 1.0) / (2.0 * s + 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{first_moment, second_moment};
    use proptest::prelude::*;

    fn single(a: f64, lambda: f64, t: f64) -> TimeOpSpec {
        TimeOpSpec::diagonal(vec![c(1.0, 0.0)], vec![a], lambda, t).unwrap()
    }

    fn mixed(t: f64) -> TimeOpSpec {
        TimeOpSpec::diagonal(vec![c(0.6, 0.0), c(0.0, 0.8)], vec![0.7, 1.3], 1.0, t).unwrap()
    }

    #[test]
    fn mean_values() {
        assert!((mean_t(&single(1.0, 1.0, 1.0)).unwrap() - 0.5 * (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!((mean_t(&single(1.0, 1.0, 1.0)).unwrap() - 0.31606).abs() < 1e-5);
        assert_eq!(mean_t(&single(0.0, 1.0, 7.0)).unwrap(), 0.0);
        assert!((mean_t(&single(1.0, 1.0, 200.0)).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(TimeOpSpec::diagonal(vec![c(1.0, 0.0)], vec![1.0], 1.0, 0.0).is_err());
        assert!(TimeOpSpec::diagonal(vec![c(0.5, 0.0)], vec![1.0], 1.0, 1.0).is_err());
        assert!(TimeOpSpec::diagonal(vec![c(1.0, 0.0)], vec![1.0, 2.0], 1.0, 1.0).is_err());
        assert!(TimeOpSpec::power_law(vec![c(1.0, 0.0)], vec![1.0], 1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn power_law_mean() {
        let p = mean_t_power_law(0.0, 0.7, 1.2, 3.0).unwrap();
        assert!((p.exact - mean_t(&single(1.2, 0.7, 3.0)).unwrap()).abs() < 1e-12);
        // lambda A^2 t^3 = 1e3
        let q = mean_t_power_law(1.0, 1.0, 1.0, 10.0).unwrap();
        assert!((q.asymptote - 7.5).abs() < 1e-12);
        assert!(q.relative_gap < 0.01);
        let asym: Vec<f64> = [0.0, 1.0, 3.0, 10.0].iter().map(|s| center_of_time(*s, 1.0)).collect();
        assert!(asym.windows(2).all(|w| w[1] > w[0]) && asym[3] < 1.0);
        // agrees with mean_t on a power-law TimeOpSpec
        let spec = TimeOpSpec::power_law(vec![c(1.0, 0.0)], vec![1.0], 0.3, 2.0, 1.5, 0.8).unwrap();
        let quad = mean_t_power_law(1.5, 0.3, 0.8, 2.0).unwrap().exact;
        assert!((quad - mean_t(&spec).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn f_regimes_agree() {
        for z in [0.999, 1.0, 1.001, 5.0, 20.0, 29.9] {
            let s = f_series(z);
            let q = f_quadrature(z).unwrap();
            assert!((s - q).abs() < 1e-11 * s, "{z}: {s} {q}");
        }
        for z in [30.0, 31.0, 45.0] {
            let s = f_series(z) * (-z).exp();
            assert!((s - f_scaled_asymptotic(z)).abs() < 1e-12 * s, "{z}");
        }
        assert!((f_integral(1e-3).unwrap() - 1.000_250_055_5e-3).abs() < 1e-12);
        // z e^{-z} f(z) -> 1
        assert!((f_scaled(1000.0).unwrap() * 1000.0 - 1.0).abs() < 2e-3);
        assert!(f_scaled(1000.0).unwrap().is_finite());
        assert!(f_integral(-1.0).is_err());
    }

    #[test]
    fn charfn_normalization_and_vacuum() {
        let f = charfn_t_diag(&mixed(2.0), &[0.0, 0.5, -0.5], 1e-14).unwrap();
        assert!((f.values[0] - c(1.0, 0.0)).norm() < 1e-10);
        assert!(f.hermitian_symmetry_deviation() < 1e-12);
        let v = charfn_t_diag(&single(0.0, 1.0, 3.0), &[0.0, 2.0, 9.0], 1e-12).unwrap();
        assert!(v.values.iter().all(|z| *z == c(1.0, 0.0)));
    }

    #[test]
    fn charfn_moments_match() {
        for spec in [mixed(2.0), single(1.0, 1.0, 1.0), TimeOpSpec::power_law(vec![c(1.0, 0.0)], vec![1.0], 0.5, 2.0, 1.0, 1.0).unwrap()] {
            let f = |b: f64| charfn_t_diag(&spec, &[b], 1e-15).unwrap().values[0];
            let m = first_moment(f, 0.02);
            assert!((m - mean_t(&spec).unwrap()).abs() < 1e-6, "{m}");
            let m2 = second_moment(f, 0.02);
            assert!((m2 - second_moment_t(&spec).unwrap()).abs() < 1e-4, "{m2}");
        }
    }

    #[test]
    fn series_truncation_stable() {
        let spec = single(1.0, 1.0, 20.0);
        let grid = [0.1, 0.4, 1.3];
        let a = charfn_t_diag(&spec, &grid, 1e-8).unwrap();
        let b = charfn_t_diag(&spec, &grid, 1e-14).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).norm() < 1e-8);
        }
        assert!(matches!(
            charfn_t_diag(&single(1.0, 1.0, 1000.0), &grid, 1e-10),
            Err(Error::SeriesTruncation { .. })
        ));
    }

    #[test]
    fn large_time_second_moment() {
        let spec = single(1.0, 1.0, 50.0);
        let exact = second_moment_t(&spec).unwrap();
        let leading = second_moment_t_leading(&spec).unwrap();
        assert!((exact / leading - 1.0).abs() < 1e-3);
        let ratio = fractional_deviation_t(&spec).unwrap();
        assert!((ratio * 50.0 * 3.0 - 1.0).abs() < 0.05, "{ratio}");
        let quoted = second_moment_t_quoted(&spec).unwrap();
        assert!((quoted / exact - 1.0).abs() < 0.05);
        assert!(((quoted / 625.0 - 1.0) * 50.0 - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fractional_deviation_slope() {
        for s in [0.0, 1.0] {
            let ts: Vec<f64> = [1.0, 10.0].iter().map(|k| 100f64.powf(1.0 / (2.0 * s + 1.0)) * k).collect();
            let r: Vec<f64> = ts
                .iter()
                .map(|t| fractional_deviation_t(&TimeOpSpec::power_law(vec![c(1.0, 0.0)], vec![1.0], 1.0, *t, s, 1.0).unwrap()).unwrap())
                .collect();
            let slope = (r[1] / r[0]).ln() / 10f64.ln();
            assert!((slope + 2.0 * s + 1.0).abs() < 0.05, "{s}: {slope}");
        }
    }

    #[test]
    fn large_t_distribution() {
        let all = dist_t_large_t_diag(&mixed(40.0)).unwrap();
        assert_eq!(all.len(), 1);
        assert!((all[0].location - 20.0).abs() < 1e-12 && (all[0].weight - 1.0).abs() < 1e-12);
        let spec = TimeOpSpec::diagonal(vec![c(0.6, 0.0), c(0.8, 0.0)], vec![0.0, 1.0], 1.0, 40.0).unwrap();
        let two = dist_t_large_t_diag(&spec).unwrap();
        assert_eq!(two.len(), 2);
        assert!((two[0].weight - 0.36).abs() < 1e-12 && two[0].location == 0.0);
        let mean: f64 = two.iter().map(|p| p.location * p.weight).sum();
        let exact = mean_t(&spec).unwrap();
        assert!((mean - exact).abs() <= 20.0 * 0.64 * (-40f64).exp() + 1e-12);
    }

    proptest! {
        #[test]
        fn mean_monotone_and_bounded(a in 0.0f64..3.0, lambda in 0.0f64..2.0, t in 0.01f64..20.0) {
            let m1 = mean_t(&single(a, lambda, t)).unwrap();
            let m2 = mean_t(&single(a, lambda, t * 1.1)).unwrap();
            prop_assert!(m2 >= m1 - 1e-12);
            prop_assert!(m1 <= t / 2.0 + 1e-12);
        }

        #[test]
        fn variance_nonnegative(a in 0.05f64..3.0, lambda in 0.05f64..2.0, t in 0.05f64..30.0, s in 0.0f64..2.0) {
            let spec = TimeOpSpec::power_law(vec![c(0.6, 0.0), c(0.8, 0.0)], vec![a, 2.0 * a], lambda, t, s, 1.0).unwrap();
            prop_assert!(variance_t(&spec).unwrap() >= -1e-9 * t * t);
        }
    }
}
