//! Thermal spin blocks: `N` independent spins with energy `-C sigma`, the
//! block sum `S`, its exact and Gaussian laws, and the map from `S` to the
//! collapse noise.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Error, Result};
use crate::models::PhysicalConstants;
use crate::rng::StreamSeed;

/// `ln(2 cosh x)` without overflow.
pub fn ln_two_cosh(x: f64) -> f64 {
    x.abs() + (-2.0 * x.abs()).exp().ln_1p()
}

/// `ln Tr e^{beta C S} = N ln(2 cosh beta C)`.
pub fn spin_partition(n: u64, beta_c: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "a block needs at least one spin"));
    }
    Ok(n as f64 * ln_two_cosh(beta_c))
}

/// Log partition function by direct binomial sum, for cross-checks.
pub fn spin_partition_by_sum(n: u64, beta_c: f64) -> Result<f64> {
    if n == 0 || n > 30 {
        return Err(invalid("n", "direct sum is limited to 1..=30 spins"));
    }
    let logs: Vec<f64> = (0..=n)
        .map(|k| beta_c * (n as f64 - 2.0 * k as f64) + ln_binomial(n, k))
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln())
}

fn check_block_sum(n: u64, s: i64) -> Result<u64> {
    if n == 0 {
        return Err(invalid("n", "a block needs at least one spin"));
    }
    if s.unsigned_abs() > n || (n as i64 + s) % 2 != 0 {
        return Err(Error::SpinParity { s, n });
    }
    Ok(((n as i64 + s) / 2) as u64)
}

/// `ln P(S = s) = beta C s + ln binom(N, (N+s)/2) - N ln(2 cosh beta C)`.
pub fn spin_block_log_pmf(n: u64, beta_c: f64, s: i64) -> Result<f64> {
    let up = check_block_sum(n, s)?;
    Ok(beta_c * s as f64 + ln_binomial(n, up) - spin_partition(n, beta_c)?)
}

pub fn spin_block_pmf(n: u64, beta_c: f64, s: i64) -> Result<f64> {
    Ok(spin_block_log_pmf(n, beta_c, s)?.exp())
}

/// Weak-coupling Gaussian law: mean `N beta C`, variance `N`, assigned to
/// the support `s = -N, -N+2, ..., N`. The factor 2 is the lattice spacing
/// of `s`.
pub fn spin_block_gaussian_log_pmf(n: u64, beta_c: f64, s: i64) -> Result<f64> {
    check_block_sum(n, s)?;
    let nf = n as f64;
    let d = s as f64 - nf * beta_c;
    Ok((2.0 / (2.0 * PI * nf).sqrt()).ln() - d * d / (2.0 * nf))
}

/// Support of `S` for `N` spins.
pub fn block_support(n: u64) -> Vec<i64> {
    (0..=n).map(|k| 2 * k as i64 - n as i64).collect()
}

/// Exact pmf and CDF on the support.
pub fn spin_block_distribution(n: u64, beta_c: f64) -> Result<(Vec<i64>, Vec<f64>, Vec<f64>)> {
    let support = block_support(n);
    let pmf: Vec<f64> = support.iter().map(|s| spin_block_pmf(n, beta_c, *s)).collect::<Result<_>>()?;
    let mut acc = 0.0;
    let cdf = pmf
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    Ok((support, pmf, cdf))
}

/// Total-variation distance between the exact law and its Gaussian form.
pub fn gaussian_tv_distance(n: u64, beta_c: f64) -> Result<f64> {
    let mut tv = 0.0;
    for s in block_support(n) {
        tv += (spin_block_pmf(n, beta_c, s)? - spin_block_gaussian_log_pmf(n, beta_c, s)?.exp()).abs();
    }
    Ok(0.5 * tv)
}

/// Probability that one spin points up, `e^{x} / (2 cosh x)`.
pub fn up_probability(beta_c: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * beta_c).exp())
}

/// Block sum of `N` independent thermal spins.
pub fn sample_spin_block(n: u64, beta_c: f64, rng: &mut impl Rng) -> Result<i64> {
    let law = Binomial::new(n, up_probability(beta_c)).map_err(|e| invalid("beta_c", &e.to_string()))?;
    let up = law.sample(rng);
    Ok(2 * up as i64 - n as i64)
}

/// `count` independent blocks, block `i` drawn from stream `i`.
pub fn sample_spin_blocks(n: u64, beta_c: f64, count: usize, master_seed: u64) -> Result<Vec<i64>> {
    if n == 0 {
        return Err(invalid("n", "a block needs at least one spin"));
    }
    (0..count)
        .into_par_iter()
        .map(|i| sample_spin_block(n, beta_c, &mut StreamSeed::new(master_seed, i as u64).rng()))
        .collect()
}

/// Spin-block geometry: `N = p (dV / l^3) (dt / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinBlockConfig {
    pub n: u64,
    pub beta_c: f64,
    pub p: f64,
    /// `dV / l^3`
    pub cells: f64,
    /// `dt / tau`
    pub ticks: f64,
}

impl SpinBlockConfig {
    pub fn from_geometry(p: f64, cells: f64, ticks: f64, beta_c: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(invalid("p", "activation probability must lie in (0, 1]"));
        }
        let product = p * cells * ticks;
        let n = product.round();
        if !(n >= 1.0) || (product - n).abs() > 1e-9 * n {
            return Err(invalid("geometry", "p * cells * ticks must be a positive whole spin count"));
        }
        Ok(Self {
            n: n as u64,
            beta_c,
            p,
            cells,
            ticks,
        })
    }

    /// Recomputed spin count equals the stored one.
    pub fn is_consistent(&self) -> bool {
        (self.p * self.cells * self.ticks).round() as u64 == self.n
    }

    pub fn weak_coupling(&self) -> bool {
        self.beta_c.abs() < 1.0
    }
}

/// Noise value and reduced density read off a block sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinNoise {
    /// `w = 2 lambda / ((beta m0 c^2) l a^{1/2}) * s / N`
    pub w: f64,
    /// `s' = s / (N beta G mu a^2)`, whose thermal mean is `rho`
    pub s_prime: f64,
}

pub fn spins_to_noise(s: i64, n: u64, constants: &PhysicalConstants, bath_energy_ev: f64) -> Result<SpinNoise> {
    constants.validate()?;
    if n == 0 {
        return Err(invalid("n", "a block needs at least one spin"));
    }
    if !(bath_energy_ev > 0.0) || !bath_energy_ev.is_finite() {
        return Err(invalid("bath_energy_ev", "bath temperature must be positive"));
    }
    let frac = s as f64 / n as f64;
    let k = 2.0 * constants.lambda
        / (constants.beta_rest_energy(bath_energy_ev) * constants.planck_length * constants.a.sqrt());
    Ok(SpinNoise {
        w: k * frac,
        s_prime: frac / constants.coupling_per_density(bath_energy_ev),
    })
}

/// Activation probability that makes the spin bath reproduce the collapse
/// rate: `p (beta m0 c^2)^2 = 4 lambda tau l / a`, as `log10 p`.
pub fn log10_activation_probability(constants: &PhysicalConstants, bath_energy_ev: f64) -> f64 {
    (4.0 * constants.lambda * constants.planck_time * constants.planck_length / constants.a).log10()
        - 2.0 * constants.beta_rest_energy(bath_energy_ev).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub bath_energy_ev: f64,
    pub log10_beta_c: f64,
    pub log10_p: f64,
    /// thermal-mean `S/N`, equal to `beta G rho mu a^2`
    pub log10_s_over_n: f64,
    /// thermal-mean noise `2 lambda a^{3/2} rho / m0`
    pub log10_w_mean: f64,
    pub weak_coupling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rho: f64,
    pub rows: Vec<AuditRow>,
}

/// Weak coupling is taken to hold below this `beta G rho mu a^2`.
pub const WEAK_COUPLING_LIMIT: f64 = 1e-2;

pub fn audit_parameters(constants: &PhysicalConstants, bath_energies_ev: &[f64], rho: f64) -> Result<AuditReport> {
    constants.validate()?;
    if !(rho > 0.0) {
        return Err(invalid("rho", "mass density must be positive"));
    }
    let rows = bath_energies_ev
        .iter()
        .map(|e| {
            if !(*e > 0.0) || !e.is_finite() {
                return Err(invalid("bath_energy_ev", "bath temperature must be positive"));
            }
            let beta_c = constants.coupling_per_density(*e) * rho;
            let k = 2.0 * constants.lambda
                / (constants.beta_rest_energy(*e) * constants.planck_length * constants.a.sqrt());
            Ok(AuditRow {
                bath_energy_ev: *e,
                log10_beta_c: beta_c.log10(),
                log10_p: log10_activation_probability(constants, *e),
                log10_s_over_n: beta_c.log10(),
                log10_w_mean: (k * beta_c).log10(),
                weak_coupling: beta_c < WEAK_COUPLING_LIMIT,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AuditReport { rho, rows })
}

impl AuditReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bath_energy_ev,rho,log10_beta_c,log10_p,log10_s_over_n,log10_w_mean,weak_coupling\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.bath_energy_ev, self.rho, r.log10_beta_c, r.log10_p, r.log10_s_over_n, r.log10_w_mean, r.weak_coupling
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("rho = {} g/cm^3\n", self.rho);
        let _ = writeln!(out, "{:>12}  {:>14}  {:>10}  {:>12}  {}", "1/beta (eV)", "log10 bGrmua2", "log10 p", "log10 <w>", "weak");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>12.3e}  {:>14.2}  {:>10.2}  {:>12.2}  {}",
                r.bath_energy_ev,
                r.log10_beta_c,
                r.log10_p,
                r.log10_w_mean,
                if r.weak_coupling { "yes" } else { "NO" }
            );
        }
        out
    }
}

/// Smallest block size for which the Gaussian law is used.
pub const MIN_EQUIVALENCE_SPINS: u64 = 100;

/// Spin-bath amplitude of a block sequence against one density eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchAmplitude {
    pub rho: f64,
    /// `-(1/4N) sum_j (s_j - N beta G rho mu a^2)^2`
    pub spin_exponent: f64,
    /// `-(1/4 lambda) sum_j dV dt (w_j - 2 lambda a^{3/2} rho / m0)^2`,
    /// with `dV dt = N l^3 tau / p`
    pub csl_exponent: f64,
    /// `(1/2) sum_j ln P(S = s_j)` from the exact binomial law
    pub exact_log_amplitude: f64,
    /// same with the Gaussian law
    pub gaussian_log_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n: u64,
    pub blocks: usize,
    pub branches: Vec<BranchAmplitude>,
    /// Largest relative gap between the spin and collapse exponents.
    pub mapping_difference: f64,
    /// Largest relative gap between exact and Gaussian log-amplitudes.
    pub gaussian_difference: f64,
    /// Relative gap between the exact spin log-amplitude ratio of the first
    /// two branches and the collapse log-weight ratio.
    pub ratio_difference: Option<f64>,
    pub weak_coupling: bool,
}

impl EquivalenceReport {
    pub fn max_difference(&self) -> f64 {
        self.mapping_difference
            .max(self.gaussian_difference)
            .max(self.ratio_difference.unwrap_or(0.0))
    }
}

fn relative_gap(x: f64, y: f64) -> f64 {
    let scale = x.abs().max(y.abs());
    if scale == 0.0 {
        0.0
    } else {
        (x - y).abs() / scale
    }
}

/// Compares the spin-bath amplitude of `blocks` with the collapse amplitude
/// of the mapped noise, for each density eigenvalue in `rhos`.
pub fn spin_model_to_csl_equivalence(
    blocks: &[i64],
    n: u64,
    rhos: &[f64],
    constants: &PhysicalConstants,
    bath_energy_ev: f64,
) -> Result<EquivalenceReport> {
    if n < MIN_EQUIVALENCE_SPINS {
        return Err(invalid("n", "the Gaussian block law needs at least 100 spins"));
    }
    if blocks.is_empty() || rhos.is_empty() {
        return Err(invalid("blocks", "need at least one block and one density eigenvalue"));
    }
    constants.validate()?;
    let nf = n as f64;
    let per_density = constants.coupling_per_density(bath_energy_ev);
    let p = 10f64.powf(log10_activation_probability(constants, bath_energy_ev));
    let volume = nf * constants.planck_length.powi(3) * constants.planck_time / p;
    let target_scale = 2.0 * constants.lambda * constants.a.powf(1.5) / constants.proton_mass;
    let noise: Vec<f64> = blocks
        .iter()
        .map(|s| spins_to_noise(*s, n, constants, bath_energy_ev).map(|x| x.w))
        .collect::<Result<_>>()?;
    let mut branches = Vec::with_capacity(rhos.len());
    let mut weak = true;
    for rho in rhos {
        let beta_c = per_density * rho;
        weak &= beta_c.abs() < WEAK_COUPLING_LIMIT;
        let mean = nf * beta_c;
        let spin_exponent = -blocks.iter().map(|s| (*s as f64 - mean).powi(2)).sum::<f64>() / (4.0 * nf);
        let target = target_scale * rho;
        let csl_exponent = -volume * noise.iter().map(|w| (w - target).powi(2)).sum::<f64>() / (4.0 * constants.lambda);
        let mut exact = 0.0;
        let mut gauss = 0.0;
        for s in blocks {
            exact += 0.5 * spin_block_log_pmf(n, beta_c, *s)?;
            gauss += 0.5 * spin_block_gaussian_log_pmf(n, beta_c, *s)?;
        }
        branches.push(BranchAmplitude {
            rho: *rho,
            spin_exponent,
            csl_exponent,
            exact_log_amplitude: exact,
            gaussian_log_amplitude: gauss,
        });
    }
    let mapping_difference = branches
        .iter()
        .map(|b| relative_gap(b.spin_exponent, b.csl_exponent))
        .fold(0.0, f64::max);
    let gaussian_difference = branches
        .iter()
        .map(|b| relative_gap(b.exact_log_amplitude, b.gaussian_log_amplitude))
        .fold(0.0, f64::max);
    let ratio_difference = (branches.len() >= 2).then(|| {
        relative_gap(
            branches[0].exact_log_amplitude - branches[1].exact_log_amplitude,
            branches[0].csl_exponent - branches[1].csl_exponent,
        )
    });
    Ok(EquivalenceReport {
        n,
        blocks: blocks.len(),
        branches,
        mapping_difference,
        gaussian_difference,
        ratio_difference,
        weak_coupling: weak,
    })
}
