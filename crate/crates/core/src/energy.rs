//! Energy characteristic functions, their inversion to densities, and mean
//! energy balance between the system and the noise field.
//!
//! Conventions: `hbar = 1`; a characteristic function is
//! `f(beta) = <exp(-i H beta)>`, so `<H> = i f'(0)` and the density is
//! `p(E) = (1/2 pi) int exp(i E beta) f(beta) d beta`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{MasterEvolutionSpec, MasterSolver};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, eig_hermitian, expm_scaled, CMatrix, DensityMatrix, HermitianOperator, StateVector, C64};
use crate::quadrature::{cumulative_simpson, richardson_derivative, simpson_uniform};
use crate::stats::normal_cdf;

/// Sampled characteristic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicFunction {
    pub beta_grid: Vec<f64>,
    pub values: Vec<C64>,
}

impl CharacteristicFunction {
    pub fn from_fn(beta_grid: &[f64], f: impl Fn(f64) -> C64 + Sync) -> Self {
        Self {
            values: beta_grid.par_iter().map(|b| f(*b)).collect(),
            beta_grid: beta_grid.to_vec(),
        }
    }

    /// Largest `|f(-beta) - f(beta)^*|` over grid pairs symmetric about 0.
    pub fn hermitian_symmetry_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for (i, b) in self.beta_grid.iter().enumerate() {
            if let Some(j) = self.beta_grid.iter().position(|x| (*x + b).abs() <= 1e-12 * b.abs().max(1.0)) {
                dev = dev.max((self.values[j] - self.values[i].conj()).norm());
            }
        }
        dev
    }

    /// `|f(0) - 1|` if 0 is on the grid.
    pub fn origin_deviation(&self) -> Option<f64> {
        self.beta_grid
            .iter()
            .position(|b| *b == 0.0)
            .map(|i| (self.values[i] - c(1.0, 0.0)).norm())
    }
}

/// Uniform grid `[-max, max]` with `2 n + 1` points.
pub fn symmetric_grid(max: f64, n: usize) -> Vec<f64> {
    (0..=2 * n).map(|i| (i as f64 - n as f64) * max / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub location: f64,
    pub weight: f64,
}

/// Density on an energy grid with point masses kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyDistribution {
    pub e_grid: Vec<f64>,
    pub density: Vec<f64>,
    pub point_masses: Vec<PointMass>,
    /// Continuous mass outside the grid.
    pub tail_mass_estimate: f64,
}

/// Values above this floor are clipped to 0; anything lower is an error.
pub const RIPPLE_FLOOR: f64 = -1e-6;

impl EnergyDistribution {
    fn build(e_grid: &[f64], density: Vec<f64>, point_masses: Vec<PointMass>, tail: f64) -> Result<Self> {
        if let Some(bad) = density.iter().find(|d| **d < RIPPLE_FLOOR || !d.is_finite()) {
            return Err(Error::Quadrature(format!("density value {bad:e} below ripple floor")));
        }
        Ok(Self {
            e_grid: e_grid.to_vec(),
            density: density.into_iter().map(|d| d.max(0.0)).collect(),
            point_masses: point_masses.into_iter().filter(|p| p.weight > 0.0).collect(),
            tail_mass_estimate: tail,
        })
    }

    /// Trapezoid integral of the density over the grid.
    pub fn grid_mass(&self) -> f64 {
        self.e_grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(e, d)| 0.5 * (e[1] - e[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn point_mass_total(&self) -> f64 {
        self.point_masses.iter().map(|p| p.weight).sum()
    }

    /// Grid mass plus point masses plus the tail estimate.
    pub fn total_mass(&self) -> f64 {
        self.grid_mass() + self.point_mass_total() + self.tail_mass_estimate
    }
}

fn check_amplitudes(alpha: &[C64], a: &[f64]) -> Result<()> {
    if alpha.len() != a.len() || a.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "amplitudes vs eigenvalues",
            expected: a.len(),
            got: alpha.len(),
        });
    }
    let n: f64 = alpha.iter().map(|z| z.norm_sqr()).sum();
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized { deviation: (n - 1.0).abs() });
    }
    Ok(())
}

fn check_rate(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid("lambda", "collapse rate must be non-negative"));
    }
    Ok(())
}

/// Weighted Lorentzian tail mass outside `[lo, hi]`.
fn lorentz_tail(weights: &[f64], widths: &[f64], center: f64, lo: f64, hi: f64) -> f64 {
    weights
        .iter()
        .zip(widths)
        .filter(|(_, g)| **g > 0.0)
        .map(|(w, g)| w * (1.0 - (((hi - center) / g).atan() - ((lo - center) / g).atan()) / PI))
        .sum()
}

fn grid_bounds(e_grid: &[f64]) -> Result<(f64, f64)> {
    if e_grid.len() < 2 {
        return Err(invalid("e_grid", "need at least two energies"));
    }
    if e_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("e_grid", "energies must be increasing"));
    }
    Ok((e_grid[0], e_grid[e_grid.len() - 1]))
}

/// Total energy: `sum |alpha_n|^2 exp(-(lambda/2) a_n^2 |beta|)`.
pub fn charfn_total_diag(alpha: &[C64], a: &[f64], lambda: f64, beta_grid: &[f64]) -> Result<CharacteristicFunction> {
    check_amplitudes(alpha, a)?;
    check_rate(lambda)?;
    let w: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
    Ok(CharacteristicFunction::from_fn(beta_grid, |b| {
        c(w.iter().zip(a).map(|(w, a)| w * (-0.5 * lambda * a * a * b.abs()).exp()).sum(), 0.0)
    }))
}

/// Cauchy mixture with half-widths `lambda a_n^2 / 2`; `a_n = 0` terms are
/// point masses at 0.
pub fn dist_total_diag(alpha: &[C64], a: &[f64], lambda: f64, e_grid: &[f64]) -> Result<EnergyDistribution> {
    check_amplitudes(alpha, a)?;
    check_rate(lambda)?;
    let (lo, hi) = grid_bounds(e_grid)?;
    let w: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
    let widths: Vec<f64> = a.iter().map(|a| 0.5 * lambda * a * a).collect();
    let density = e_grid
        .iter()
        .map(|e| {
            w.iter()
                .zip(&widths)
                .filter(|(_, g)| **g > 0.0)
                .map(|(w, g)| w * g / (PI * (e * e + g * g)))
                .sum()
        })
        .collect();
    let point = w.iter().zip(&widths).filter(|(_, g)| **g == 0.0).map(|(w, _)| w).sum();
    let tail = lorentz_tail(&w, &widths, 0.0, lo, hi);
    EnergyDistribution::build(e_grid, density, vec![PointMass { location: 0.0, weight: point }], tail)
}

/// Noise-field energy at time `t`: `exp(-lambda a^2 |beta|)` inside
/// `|beta| < t`, frozen at `exp(-lambda a^2 t)` outside.
pub fn charfn_w_diag(alpha: &[C64], a: &[f64], lambda: f64, t: f64, beta_grid: &[f64]) -> Result<CharacteristicFunction> {
    check_amplitudes(alpha, a)?;
    check_rate(lambda)?;
    if !(t >= 0.0) {
        return Err(invalid("t", "time must be non-negative"));
    }
    let w: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
    Ok(CharacteristicFunction::from_fn(beta_grid, |b| {
        let s = w
            .iter()
            .zip(a)
            .map(|(w, a)| {
                let g = lambda * a * a;
                if b.abs() >= t {
                    w * (-g * t).exp()
                } else {
                    w * (-g * b.abs()).exp()
                }
            })
            .sum();
        c(s, 0.0)
    }))
}

/// Continuous part of the noise-field energy density for one component
/// with rate `g = lambda a^2`.
fn w_density_component(e: f64, g: f64, t: f64) -> f64 {
    if g == 0.0 {
        return 0.0;
    }
    let d = e * e + g * g;
    let sinc_t = if e == 0.0 { t } else { (e * t).sin() / e };
    let decay = (-g * t).exp();
    (decay * (-g * g * sinc_t / d - g * (e * t).cos() / d) + g / d) / PI
}

/// Closed-form noise-field energy density at time `t`, with the
/// `exp(-lambda a_n^2 t)` weights at `E = 0` reported as a point mass.
pub fn dist_w_diag(alpha: &[C64], a: &[f64], lambda: f64, t: f64, e_grid: &[f64]) -> Result<EnergyDistribution> {
    check_amplitudes(alpha, a)?;
    check_rate(lambda)?;
    if !(t >= 0.0) {
        return Err(invalid("t", "time must be non-negative"));
    }
    let (lo, hi) = grid_bounds(e_grid)?;
    let w: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
    let rates: Vec<f64> = a.iter().map(|a| lambda * a * a).collect();
    let density = e_grid
        .iter()
        .map(|e| w.iter().zip(&rates).map(|(w, g)| w * w_density_component(*e, *g, t)).sum())
        .collect();
    let point = w.iter().zip(&rates).map(|(w, g)| w * (-g * t).exp()).sum();
    // at large |E| the density is g (1 - exp(-g t) cos(E t)) / (pi E^2); the
    // oscillating part integrates to O(1 / (E^2 t)) beyond the grid
    let tail = lorentz_tail(&w, &rates, 0.0, lo, hi);
    EnergyDistribution::build(e_grid, density, vec![PointMass { location: 0.0, weight: point }], tail)
}

/// Interaction energy with time regulator `dt`: Gaussian mixture with
/// variances `lambda a_n^2 / dt`.
pub fn dist_interaction_diag(alpha: &[C64], a: &[f64], lambda: f64, dt: f64, e_grid: &[f64]) -> Result<EnergyDistribution> {
    check_amplitudes(alpha, a)?;
    check_rate(lambda)?;
    if !(dt > 0.0) {
        return Err(invalid("dt", "the interaction energy needs a positive time regulator"));
    }
    let (lo, hi) = grid_bounds(e_grid)?;
    let w: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
    let sds = interaction_widths(a, lambda, dt);
    let density = e_grid
        .iter()
        .map(|e| {
            w.iter()
                .zip(&sds)
                .filter(|(_, s)| **s > 0.0)
                .map(|(w, s)| w * (-e * e / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()))
                .sum()
        })
        .collect();
    let point = w.iter().zip(&sds).filter(|(_, s)| **s == 0.0).map(|(w, _)| w).sum();
    let tail = w
        .iter()
        .zip(&sds)
        .filter(|(_, s)| **s > 0.0)
        .map(|(w, s)| w * (normal_cdf(lo, 0.0, *s) + 1.0 - normal_cdf(hi, 0.0, *s)))
        .sum();
    EnergyDistribution::build(e_grid, density, vec![PointMass { location: 0.0, weight: point }], tail)
}

/// Standard deviations `sqrt(lambda a_n^2 / dt)` of the interaction energy.
pub fn interaction_widths(a: &[f64], lambda: f64, dt: f64) -> Vec<f64> {
    a.iter().map(|a| (lambda * a * a / dt).sqrt()).collect()
}

/// Lorentzian mixture approximating the noise-field energy at large `t` in
/// the commuting case: half-widths `lambda a_n^2`, centered at `shift`.
pub fn dist_w_large_t_diag(alpha: &[C64], a: &[f64], lambda: f64, shift: f64, e_grid: &[f64]) -> Result<EnergyDistribution> {
    check_amplitudes(alpha, a)?;
    check_rate(lambda)?;
    let (lo, hi) = grid_bounds(e_grid)?;
    let w: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
    let widths: Vec<f64> = a.iter().map(|a| lambda * a * a).collect();
    let density = e_grid
        .iter()
        .map(|e| {
            w.iter()
                .zip(&widths)
                .filter(|(_, g)| **g > 0.0)
                .map(|(w, g)| w * g / (PI * ((e - shift).powi(2) + g * g)))
                .sum()
        })
        .collect();
    let point = w.iter().zip(&widths).filter(|(_, g)| **g == 0.0).map(|(w, _)| w).sum();
    let tail = lorentz_tail(&w, &widths, shift, lo, hi);
    EnergyDistribution::build(e_grid, density, vec![PointMass { location: shift, weight: point }], tail)
}

/// Center of the large-`t` noise-field energy for a free particle of mass
/// `mass` collapsing in position: `-lambda t / 2m`.
pub fn free_particle_field_shift(lambda: f64, mass: f64, t: f64) -> f64 {
    -lambda * t / (2.0 * mass)
}

/// Total energy for general `H_A`: `<phi| exp(-[i H_A + (lambda/2) A^2] beta) |phi>`
/// for `beta >= 0`, and its complex conjugate at `-beta`.
pub fn charfn_total_general(
    phi: &StateVector,
    a: &HermitianOperator,
    h: &HermitianOperator,
    lambda: f64,
    beta_grid: &[f64],
) -> Result<CharacteristicFunction> {
    phi.require_normalized()?;
    check_rate(lambda)?;
    if a.dim() != phi.dim() || h.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            context: "state vs operators",
            expected: phi.dim(),
            got: if a.dim() != phi.dim() { a.dim() } else { h.dim() },
        });
    }
    let a2 = a.matrix() * a.matrix();
    let generator: CMatrix = h.matrix() * c(0.0, 1.0) + a2 * c(0.5 * lambda, 0.0);
    let v = phi.amplitudes();
    let values: Result<Vec<C64>> = beta_grid
        .par_iter()
        .map(|b| {
            let e = expm_scaled(&generator, c(-b.abs(), 0.0))?;
            let z = v.dotc(&(e * v));
            Ok(if *b < 0.0 { z.conj() } else { z })
        })
        .collect();
    Ok(CharacteristicFunction {
        beta_grid: beta_grid.to_vec(),
        values: values?,
    })
}

/// `Tr[exp(-i H_A beta) rho(t)]` with `rho(t)` from the master equation.
pub fn charfn_ha_general(
    phi: &StateVector,
    a: &HermitianOperator,
    h: &HermitianOperator,
    lambda: f64,
    t: f64,
    dt_ode: f64,
    beta_grid: &[f64],
) -> Result<CharacteristicFunction> {
    phi.require_normalized()?;
    let spec = MasterEvolutionSpec::new(a, h, lambda, t, dt_ode)?;
    let rho = MasterSolver::new(&spec)?.solve(&DensityMatrix::pure(phi), usize::MAX)?.final_density();
    let e = eig_hermitian(h)?;
    let rt = e.vectors.adjoint() * rho * &e.vectors;
    let pops: Vec<f64> = (0..rt.nrows()).map(|i| rt[(i, i)].re).collect();
    let energies: Vec<f64> = e.values.iter().copied().collect();
    Ok(CharacteristicFunction::from_fn(beta_grid, |b| {
        pops.iter()
            .zip(&energies)
            .map(|(p, en)| c(0.0, -en * b).exp() * *p)
            .sum()
    }))
}

/// `<H_A>(t)`, `<H_w>(t)` on the master-equation step grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub times: Vec<f64>,
    pub mean_ha: Vec<f64>,
    pub mean_hw: Vec<f64>,
    /// Change of the final `<H_w>` when the step is halved.
    pub halving_change: f64,
}

impl EnergyBalance {
    /// Largest `|<H_A>(t) + <H_w>(t) - <H_A>(0)|`.
    pub fn conservation_error(&self) -> f64 {
        let e0 = self.mean_ha[0];
        self.mean_ha
            .iter()
            .zip(&self.mean_hw)
            .map(|(a, w)| (a + w - e0).abs())
            .fold(0.0, f64::max)
    }
}

/// Quadrature step-halving tolerance for `<H_w>`.
pub const HW_HALVING_TOL: f64 = 1e-8;

fn balance_once(solver: &MasterSolver, rho0: &DensityMatrix) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let sol = solver.solve(rho0, 1)?;
    let h = solver.hamiltonian_eigenbasis();
    let heat = solver.heating_operator();
    let mean_ha: Vec<f64> = (0..sol.len()).map(|i| sol.expectation_eigenbasis(i, h).re).collect();
    let integrand: Vec<f64> = (0..sol.len()).map(|i| sol.expectation_eigenbasis(i, &heat).re).collect();
    let mean_hw = if sol.len() == 1 {
        vec![0.0]
    } else {
        cumulative_simpson(&integrand, sol.step)?
    };
    Ok((sol.times, mean_ha, mean_hw))
}

/// Mean energies of the system and of the noise field:
/// `<H_A>(t) = Tr[rho(t) H_A]` and
/// `<H_w>(t) = (lambda/2) int_0^t Tr[rho [A, [A, H_A]]]`.
pub fn energy_balance(spec: &MasterEvolutionSpec, phi: &StateVector) -> Result<EnergyBalance> {
    phi.require_normalized()?;
    let rho0 = DensityMatrix::pure(phi);
    // an even number of steps keeps the horizon on a Simpson node
    let steps = ((spec.horizon / spec.dt_ode - 1e-9).ceil() as usize).max(1);
    let steps = steps + steps % 2;
    let mut coarse = spec.clone();
    coarse.dt_ode = spec.horizon / steps as f64;
    let mut fine = spec.clone();
    fine.dt_ode = coarse.dt_ode / 2.0;
    let (times, mean_ha, mean_hw) = balance_once(&MasterSolver::new(&coarse)?, &rho0)?;
    let (_, _, fine_hw) = balance_once(&MasterSolver::new(&fine)?, &rho0)?;
    let change = (mean_hw.last().copied().unwrap_or(0.0) - fine_hw.last().copied().unwrap_or(0.0)).abs();
    if !(change <= HW_HALVING_TOL) {
        return Err(Error::Quadrature(format!(
            "field-energy quadrature changed by {change:e} under step halving"
        )));
    }
    Ok(EnergyBalance {
        times,
        mean_ha,
        mean_hw,
        halving_change: change,
    })
}

pub fn mean_ha(spec: &MasterEvolutionSpec, phi: &StateVector) -> Result<f64> {
    Ok(*energy_balance(spec, phi)?.mean_ha.last().expect("non-empty"))
}

pub fn mean_hw(spec: &MasterEvolutionSpec, phi: &StateVector) -> Result<f64> {
    Ok(*energy_balance(spec, phi)?.mean_hw.last().expect("non-empty"))
}

/// `<H> = i f'(0)` by Richardson-extrapolated central differences.
pub fn first_moment(f: impl Fn(f64) -> C64, h: f64) -> f64 {
    -richardson_derivative(|b| f(b).im, 0.0, h)
}

/// `<H^2> = -f''(0)`.
pub fn second_moment(f: impl Fn(f64) -> C64, h: f64) -> f64 {
    -crate::quadrature::richardson_second_derivative(|b| f(b).re, 0.0, h)
}

/// `p(E) = (1/pi) int_0^B Re[exp(i E beta) f(beta)] d beta` for a
/// characteristic function with Hermitian symmetry, by Simpson on `[0, B]`
/// with `2 * half_steps` panels. Kinks of `f` must sit on grid nodes.
pub fn invert_hermitian(f: impl Fn(f64) -> C64 + Sync, beta_max: f64, half_steps: usize, e_grid: &[f64]) -> Result<Vec<f64>> {
    if !(beta_max > 0.0) || half_steps == 0 {
        return Err(invalid("beta_max", "inversion window must be positive"));
    }
    let n = 2 * half_steps;
    let h = beta_max / n as f64;
    let fv: Vec<C64> = (0..=n).into_par_iter().map(|i| f(i as f64 * h)).collect();
    e_grid
        .par_iter()
        .map(|e| {
            let vals: Vec<f64> = fv
                .iter()
                .enumerate()
                .map(|(i, z)| (c(0.0, e * i as f64 * h).exp() * z).re)
                .collect();
            Ok(simpson_uniform(&vals, h)? / PI)
        })
        .collect()
}

/// Forward transform `sum_j p(E_j) exp(-i E_j beta) dE` (trapezoid on the
/// grid) plus point masses.
pub fn forward_charfn(dist: &EnergyDistribution, beta_grid: &[f64]) -> CharacteristicFunction {
    CharacteristicFunction::from_fn(beta_grid, |b| {
        let mut z = C64::default();
        for (e, d) in dist.e_grid.windows(2).zip(dist.density.windows(2)) {
            let de = e[1] - e[0];
            z += (c(0.0, -e[0] * b).exp() * d[0] + c(0.0, -e[1] * b).exp() * d[1]) * (0.5 * de);
        }
        for p in &dist.point_masses {
            z += c(0.0, -p.location * b).exp() * p.weight;
        }
        z
    })
}

/// `int_{-L}^{L} E^2 p(E) dE` for the total-energy Cauchy mixture, by
/// Simpson with `panels` panels (even).
pub fn truncated_second_moment(dist_at: impl Fn(f64) -> f64, cutoff: f64, panels: usize) -> Result<f64> {
    let n = panels + panels % 2;
    let h = 2.0 * cutoff / n as f64;
    let vals: Vec<f64> = (0..=n)
        .map(|i| {
            let e = -cutoff + i as f64 * h;
            e * e * dist_at(e)
        })
        .collect();
    simpson_uniform(&vals, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;

    fn one() -> Vec<C64> {
        vec![c(1.0, 0.0)]
    }

    fn amps(v: &[f64]) -> Vec<C64> {
        v.iter().map(|x| c(*x, 0.0)).collect()
    }

    #[test]
    fn total_charfn_values() {
        let f = charfn_total_diag(&one(), &[1.0], 1.0, &[0.0, 2.0, -2.0]).unwrap();
        assert_eq!(f.values[0], c(1.0, 0.0));
        assert!((f.values[1].re - (-1f64).exp()).abs() < 1e-15);
        assert!((f.values[1].re - 0.36788).abs() < 1e-5);
        assert!(f.hermitian_symmetry_deviation() < 1e-15);
        let z = charfn_total_diag(&amps(&[0.6, 0.8]), &[0.0, 1.0], 1.0, &[5.0]).unwrap();
        assert!((z.values[0].re - (0.36 + 0.64 * (-2.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn total_distribution_values() {
        let d = dist_total_diag(&one(), &[1.0], 1.0, &[0.0, 1.0]).unwrap();
        assert!((d.density[0] - 2.0 / PI).abs() < 1e-15);
        assert!((d.density[0] - 0.63662).abs() < 1e-5);
        let grid = symmetric_grid(50.0, 1000);
        let d = dist_total_diag(&amps(&[0.6, 0.8]), &[0.0, 1.0], 1.0, &grid).unwrap();
        assert_eq!(d.point_masses.len(), 1);
        assert!((d.point_masses[0].weight - 0.36).abs() < 1e-15);
        for i in 0..grid.len() {
            assert!((d.density[i] - d.density[grid.len() - 1 - i]).abs() < 1e-15);
        }
        assert!((d.total_mass() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn total_inversion_matches_cauchy() {
        let alpha = amps(&[0.6, 0.8]);
        let a = [0.5, 1.0];
        let lambda = 2.0;
        let e_grid: Vec<f64> = symmetric_grid(10.0 * lambda, 80);
        let w: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
        let f = |b: f64| c(w.iter().zip(&a).map(|(w, a)| w * (-0.5 * lambda * a * a * b.abs()).exp()).sum(), 0.0);
        let p = invert_hermitian(f, 120.0, 6000, &e_grid).unwrap();
        let exact = dist_total_diag(&alpha, &a, lambda, &e_grid).unwrap();
        for (x, y) in p.iter().zip(&exact.density) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn w_charfn_branches() {
        let alpha = amps(&[0.6, 0.8]);
        let t0 = charfn_w_diag(&alpha, &[0.3, 1.0], 1.0, 0.0, &symmetric_grid(3.0, 30)).unwrap();
        assert!(t0.values.iter().all(|z| *z == c(1.0, 0.0)));
        let t = 2.0;
        let f = charfn_w_diag(&alpha, &[0.3, 1.0], 1.0, t, &[t, t * (1.0 - 1e-15), 5.0, -5.0]).unwrap();
        assert!((f.values[0] - f.values[1]).norm() < 1e-12);
        let frozen = 0.36 * (-0.09f64 * t).exp() + 0.64 * (-t).exp();
        assert!((f.values[2].re - frozen).abs() < 1e-15);
        assert_eq!(f.values[2], f.values[3]);
    }

    #[test]
    fn w_distribution_limits_and_mass() {
        let grid = symmetric_grid(10.0, 200);
        let d0 = dist_w_diag(&one(), &[1.0], 1.0, 0.0, &grid).unwrap();
        assert!(d0.density.iter().all(|v| v.abs() < 1e-15));
        assert!((d0.point_mass_total() - 1.0).abs() < 1e-15);
        // continuous part integrates to 1 - exp(-g t)
        let (g, t) = (0.7, 3.0);
        let half = adaptive_simpson(|e| w_density_component(e, g, t), 0.0, 2000.0, 1e-12, 60).unwrap();
        let tail = 2.0 * (0.5 - (2000.0f64 / g).atan() / PI);
        let total = 2.0 * half + tail + (-g * t).exp();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        // large t: Lorentzian of half-width g
        let big = dist_w_diag(&one(), &[1.0], g, 200.0, &grid).unwrap();
        let lor = dist_w_large_t_diag(&one(), &[1.0], g, 0.0, &grid).unwrap();
        let sup = big.density.iter().zip(&lor.density).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-12);
        assert!(big.total_mass() > 0.99 && big.total_mass() < 1.01);
    }

    #[test]
    fn w_large_t_agreement() {
        let grid = symmetric_grid(20.0, 400);
        let alpha = amps(&[0.6, 0.8]);
        let (lambda, a) = (1.0, [1.0, 2.0]);
        let t = 10.0 / (lambda * a[0] * a[0]);
        let exact = dist_w_diag(&alpha, &a, lambda, t, &grid).unwrap();
        let approx = dist_w_large_t_diag(&alpha, &a, lambda, 0.0, &grid).unwrap();
        let sup = exact.density.iter().zip(&approx.density).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-3, "{sup}");
        let z = dist_w_large_t_diag(&one(), &[0.0], 1.0, 0.0, &grid).unwrap();
        assert_eq!(z.point_mass_total(), 1.0);
        let s = dist_w_large_t_diag(&one(), &[1.0], 1.0, free_particle_field_shift(0.2, 2.0, 5.0), &grid).unwrap();
        let peak = s.e_grid[s.density.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0];
        assert!((peak + 0.25).abs() < 0.05 + 1e-12);
    }

    #[test]
    fn w_inversion_matches_closed_form() {
        let alpha = amps(&[0.6, 0.8]);
        let a = [0.5, 1.0];
        let (lambda, t) = (1.0f64, 3.0f64);
        let w: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
        let point: f64 = w.iter().zip(&a).map(|(w, a)| w * (-lambda * a * a * t).exp()).sum();
        // subtract the frozen constant so the remainder is supported on |beta| < t
        let f = |b: f64| {
            let s: f64 = w
                .iter()
                .zip(&a)
                .map(|(w, a)| w * if b < t { (-lambda * a * a * b).exp() } else { (-lambda * a * a * t).exp() })
                .sum();
            c(s - point, 0.0)
        };
        let e_grid: Vec<f64> = symmetric_grid(8.0, 64).into_iter().filter(|e| e.abs() > 0.1).collect();
        let p = invert_hermitian(f, t, 3000, &e_grid).unwrap();
        let exact = dist_w_diag(&alpha, &a, lambda, t, &e_grid).unwrap();
        for (x, y) in p.iter().zip(&exact.density) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn interaction_width_scaling() {
        let w1 = interaction_widths(&[1.0, 0.5], 2.0, 0.01);
        let w2 = interaction_widths(&[1.0, 0.5], 2.0, 0.005);
        for (x, y) in w1.iter().zip(&w2) {
            assert!((y / x - 2f64.sqrt()).abs() < 1e-12);
        }
        let grid = symmetric_grid(100.0, 2000);
        let d = dist_interaction_diag(&amps(&[0.6, 0.8]), &[0.0, 1.0], 1.0, 0.01, &grid).unwrap();
        assert!((d.point_mass_total() - 0.36).abs() < 1e-15);
        let mean: f64 = d.e_grid.iter().zip(&d.density).map(|(e, p)| e * p).sum::<f64>();
        assert!(mean.abs() < 1e-12);
        assert!((d.total_mass() - 1.0).abs() < 1e-6);
        assert!(dist_interaction_diag(&one(), &[1.0], 1.0, 0.0, &grid).is_err());
    }

    #[test]
    fn round_trip_on_gaussian() {
        let grid = symmetric_grid(60.0, 3000);
        let d = dist_interaction_diag(&amps(&[0.6, 0.8]), &[0.5, 1.0], 1.0, 0.01, &grid).unwrap();
        let f = |b: f64| forward_charfn(&d, &[b]).values[0];
        let e_check: Vec<f64> = symmetric_grid(30.0, 60);
        let p = invert_hermitian(f, 2.0, 400, &e_check).unwrap();
        let exact = dist_interaction_diag(&amps(&[0.6, 0.8]), &[0.5, 1.0], 1.0, 0.01, &e_check).unwrap();
        for (x, y) in p.iter().zip(&exact.density) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn general_total_reduces_to_diagonal() {
        let alpha = amps(&[0.6, 0.8]);
        let phi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let grid = symmetric_grid(4.0, 16);
        let g = charfn_total_general(&phi, &HermitianOperator::diagonal(&[0.5, 1.5]), &HermitianOperator::zeros(2), 1.3, &grid).unwrap();
        let d = charfn_total_diag(&alpha, &[0.5, 1.5], 1.3, &grid).unwrap();
        for (x, y) in g.values.iter().zip(&d.values) {
            assert!((x - y).norm() < 1e-10);
        }
        assert!(g.origin_deviation().unwrap() < 1e-15);
        let u = charfn_total_general(&StateVector::basis(2, 1), &HermitianOperator::pauli_x(), &HermitianOperator::diagonal(&[0.0, 2.0]), 0.0, &grid).unwrap();
        assert!(u.values.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        assert!(u.hermitian_symmetry_deviation() < 1e-12);
    }

    #[test]
    fn ha_charfn_consistency() {
        let a = HermitianOperator::pauli_z();
        let h = HermitianOperator::pauli_x().scaled(0.5);
        let phi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let grid = [0.0, 0.7, 1.9];
        let t0 = charfn_ha_general(&phi, &a, &h, 0.4, 0.0, 0.01, &grid).unwrap();
        let u = crate::linalg::unitary_propagator(&h, 0.7).unwrap();
        let direct = phi.amplitudes().dotc(&(u * phi.amplitudes()));
        assert!((t0.values[1] - direct).norm() < 1e-12);
        let l0 = charfn_ha_general(&phi, &a, &h, 0.0, 3.0, 0.01, &grid).unwrap();
        assert!((l0.values[1] - direct).norm() < 1e-9);
        assert!((l0.values[2] - t0.values[2]).norm() < 1e-9);
        let spec = MasterEvolutionSpec::new(&a, &h, 0.4, 2.0, 0.01).unwrap();
        let mean = mean_ha(&spec, &phi).unwrap();
        let m = first_moment(|b| charfn_ha_general(&phi, &a, &h, 0.4, 2.0, 0.01, &[b]).unwrap().values[0], 0.05);
        assert!((m - mean).abs() < 1e-6, "{m} vs {mean}");
    }

    #[test]
    fn field_energy_vanishes_without_hamiltonian() {
        let spec = MasterEvolutionSpec::new(&HermitianOperator::pauli_z(), &HermitianOperator::zeros(2), 1.0, 3.0, 0.01).unwrap();
        let b = energy_balance(&spec, &StateVector::from_real(&[0.6, 0.8]).unwrap()).unwrap();
        assert!(b.mean_hw.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn conservation_two_level() {
        let spec = MasterEvolutionSpec::new(&HermitianOperator::pauli_z(), &HermitianOperator::pauli_x().scaled(0.5), 0.8, 5.0, 0.01).unwrap();
        let b = energy_balance(&spec, &StateVector::from_real(&[0.6, 0.8]).unwrap()).unwrap();
        assert!(b.conservation_error() < 1e-6, "{}", b.conservation_error());
        // lambda = 0 keeps <H_A> fixed
        let spec0 = MasterEvolutionSpec::new(&HermitianOperator::pauli_z(), &HermitianOperator::pauli_x().scaled(0.5), 0.0, 5.0, 0.01).unwrap();
        let b0 = energy_balance(&spec0, &StateVector::from_real(&[0.6, 0.8]).unwrap()).unwrap();
        assert!(b0.mean_ha.iter().all(|x| (x - b0.mean_ha[0]).abs() < 1e-10));
    }

    #[test]
    fn moments_from_charfns() {
        // symmetric derivative of the |beta| kink gives mean 0
        let f = |b: f64| charfn_total_diag(&one(), &[1.0], 1.0, &[b]).unwrap().values[0];
        assert!(first_moment(f, 1e-3).abs() < 1e-12);
        // smooth case: unitary charfn of an H eigenstate mixture
        let phi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let h = HermitianOperator::diagonal(&[1.0, -2.0]);
        let g = |b: f64| charfn_total_general(&phi, &HermitianOperator::zeros(2), &h, 0.0, &[b]).unwrap().values[0];
        assert!((first_moment(g, 0.01) - (0.36 - 1.28)).abs() < 1e-9);
        assert!((second_moment(g, 0.01) - (0.36 + 0.64 * 4.0)).abs() < 1e-8);
    }

    #[test]
    fn truncated_second_moment_grows_linearly() {
        let alpha = amps(&[0.6, 0.8]);
        let (lambda, a) = (1.0, [1.0, 2.0]);
        let p = |e: f64| dist_total_diag(&alpha, &a, lambda, &[e, e + 1.0]).unwrap().density[0];
        let cuts = [100.0, 200.0, 400.0];
        let m: Vec<f64> = cuts.iter().map(|l| truncated_second_moment(p, *l, 40_000).unwrap()).collect();
        let slope = (m[2] - m[1]) / 200.0;
        let expected = (2.0 / PI) * (0.36 * 0.5 + 0.64 * 2.0);
        assert!((slope / expected - 1.0).abs() < 1e-3, "{slope} vs {expected}");
        assert!(((m[1] - m[0]) / 100.0 / expected - 1.0).abs() < 1e-2);
    }
}
