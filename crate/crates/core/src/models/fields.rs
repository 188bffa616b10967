//! Heavy scalar fields of mass `M`, one per Planck time `tau = 1/M`, whose
//! eigenvalues play the role of the collapse noise.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{c, C64};

/// Normalization of the field and its vacuum wavefunctional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub mass: f64,
    pub lambda: f64,
    /// `C = M sqrt(2 lambda)`
    pub c: f64,
    /// `M / (2 C^2)`, the per-slice Gaussian coefficient of `<phi|0>`
    pub overlap_coefficient: f64,
}

impl FieldMapping {
    /// Coefficient per unit time, `M / (2 C^2) / tau = (4 lambda)^{-1}`.
    pub fn per_time_coefficient(&self) -> f64 {
        self.overlap_coefficient * self.mass
    }

    /// `ln <phi|0> = -(M/2C^2) sum_t int dx phi_t(x)^2` for slices sampled
    /// on a spatial grid of spacing `dx`.
    pub fn log_vacuum_overlap(&self, slices: &[Vec<f64>], dx: f64) -> f64 {
        -self.overlap_coefficient * slices.iter().flatten().map(|p| p * p * dx).sum::<f64>()
    }
}

pub fn field_mapping_constants(mass: f64, lambda: f64) -> Result<FieldMapping> {
    if !(mass > 0.0) || !(lambda > 0.0) || !mass.is_finite() || !lambda.is_finite() {
        return Err(invalid("mass", "field mass and collapse rate must be positive"));
    }
    let c = mass * (2.0 * lambda).sqrt();
    Ok(FieldMapping {
        mass,
        lambda,
        c,
        overlap_coefficient: mass / (2.0 * c * c),
    })
}

/// Deviations of the discretized mode commutators from their ideal values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutatorCheck {
    pub n_times: usize,
    pub n_freqs: usize,
    pub tau: f64,
    /// `max |[b(w_k), b^dag(w_l)] - delta_kl|` on the discrete frequencies
    /// `w_k = 2 pi k / (n_times tau)`, `k < n_freqs`
    pub dft_deviation: f64,
    /// `|int dw [b(w), b^dag(0)] g(w) - g(0)|` with `g(w) = exp(-|w|)`
    pub continuum_deviation: f64,
}

/// Builds `b(w) = (2 pi)^{-1/2} sum_j tau e^{i w t_j} b_j / sqrt(tau)` on
/// `n_times` slices of width `tau` centred on 0, for a single momentum.
/// On the discrete frequencies the map is an isometry; against the
/// continuum delta the error is set by the window `n_times tau`.
pub fn discrete_mode_commutator_check(n_times: usize, n_freqs: usize, tau: f64) -> Result<CommutatorCheck> {
    if n_times < 8 || n_freqs < 8 {
        return Err(invalid("n_times", "grids need at least 8 points"));
    }
    if n_freqs > n_times {
        return Err(invalid("n_freqs", "cannot resolve more frequencies than time slices"));
    }
    if !(tau > 0.0) {
        return Err(invalid("tau", "slice width must be positive"));
    }
    let window = n_times as f64 * tau;
    let times: Vec<f64> = (0..n_times).map(|j| (j as f64 - (n_times as f64 - 1.0) / 2.0) * tau).collect();
    // coefficient of b_j in b(w_k), normalized for the discrete frequency spacing
    let dw = 2.0 * PI / window;
    let u = DMatrix::<C64>::from_fn(n_freqs, n_times, |k, j| {
        c(0.0, dw * k as f64 * times[j]).exp() * (tau / (2.0 * PI)).sqrt() * dw.sqrt()
    });
    let gram = &u * u.adjoint();
    let dft_deviation = (0..n_freqs)
        .flat_map(|i| (0..n_freqs).map(move |j| (i, j)))
        .map(|(i, j)| (gram[(i, j)] - if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }).norm())
        .fold(0.0, f64::max);
    // [b(w), b^dag(0)] = (tau / 2 pi) sum_j e^{i w t_j}; integrating against
    // g leaves the transform 2 / (1 + t_j^2) at each slice
    let smeared: f64 = times.iter().map(|t| tau / (2.0 * PI) * 2.0 / (1.0 + t * t)).sum();
    Ok(CommutatorCheck {
        n_times,
        n_freqs,
        tau,
        dft_deviation,
        continuum_deviation: (smeared - 1.0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_constants() {
        let m = field_mapping_constants(1.0, 1.0).unwrap();
        assert!((m.c - 2f64.sqrt()).abs() < 1e-15);
        for (mass, lambda) in [(1.0, 1.0), (3.5, 0.2), (1e19, 1e-16)] {
            let m = field_mapping_constants(mass, lambda).unwrap();
            assert!((m.per_time_coefficient() * 4.0 * lambda - 1.0).abs() < 1e-14);
            assert!((m.overlap_coefficient * 4.0 * lambda * mass - 1.0).abs() < 1e-14);
        }
        assert!(field_mapping_constants(0.0, 1.0).is_err());
        assert!(field_mapping_constants(1.0, -1.0).is_err());
    }

    #[test]
    fn vacuum_overlap_is_gaussian_product() {
        let m = field_mapping_constants(2.0, 0.3).unwrap();
        let slices: Vec<Vec<f64>> = (0..5).map(|t| (0..7).map(|x| ((t * 7 + x) as f64 * 0.37).sin()).collect()).collect();
        let dx = 0.1;
        let product: f64 = slices
            .iter()
            .flatten()
            .map(|p| (-m.overlap_coefficient * p * p * dx).exp())
            .product();
        assert!((m.log_vacuum_overlap(&slices, dx).exp() - product).abs() < 1e-10);
    }

    #[test]
    fn commutator_refinement() {
        let a = discrete_mode_commutator_check(64, 16, 0.25).unwrap();
        assert!(a.dft_deviation < 1e-12);
        let b = discrete_mode_commutator_check(128, 16, 0.25).unwrap();
        let ratio = a.continuum_deviation / b.continuum_deviation;
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
        // window tail estimate 4 / (pi T)
        let t = 128.0 * 0.25;
        assert!((b.continuum_deviation / (4.0 / (PI * t)) - 1.0).abs() < 0.05);
        assert!(discrete_mode_commutator_check(4, 16, 0.25).is_err());
        assert!(discrete_mode_commutator_check(16, 32, 0.25).is_err());
    }
}
