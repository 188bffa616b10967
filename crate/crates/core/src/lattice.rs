//! One-dimensional lattice surrogate of the mass-density collapse model:
//! a single particle on open-boundary sites, Gaussian-smeared density
//! operators, and the free-particle Hamiltonian.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::dynamics::{CollapseChannels, CslRun, EvolveOptions, NoiseSource, SplitStepper};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, CMatrix, CVector, HermitianOperator, StateVector};
use crate::noise::{NoiseTrajectory, TimeGrid};
use crate::rng::StreamSeed;

/// Uniformly spaced sites.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    positions: Vec<f64>,
    dx: f64,
}

impl Lattice {
    /// `sites` points with spacing `dx`, centered on the origin.
    pub fn uniform(sites: usize, dx: f64) -> Result<Self> {
        if sites == 0 {
            return Err(invalid("sites", "need at least one site"));
        }
        if !(dx > 0.0) {
            return Err(invalid("dx", "spacing must be positive"));
        }
        let mid = 0.5 * (sites as f64 - 1.0);
        Ok(Self {
            positions: (0..sites).map(|k| (k as f64 - mid) * dx).collect(),
            dx,
        })
    }

    /// Explicit site list; must be uniformly spaced and increasing. A single
    /// site gets unit cell volume.
    pub fn from_positions(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("positions", "need at least one site"));
        }
        let dx = if positions.len() > 1 { positions[1] - positions[0] } else { 1.0 };
        if !(dx > 0.0) {
            return Err(invalid("positions", "sites must be increasing"));
        }
        for w in positions.windows(2) {
            if ((w[1] - w[0]) - dx).abs() > 1e-9 * dx {
                return Err(invalid("positions", "sites must be uniformly spaced"));
            }
        }
        Ok(Self { positions, dx })
    }

    pub fn sites(&self) -> usize {
        self.positions.len()
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn left(&self) -> f64 {
        self.positions[0]
    }

    pub fn right(&self) -> f64 {
        self.positions[self.positions.len() - 1]
    }
}

/// Smeared mass-density operators `A(x_k)`, diagonal in position:
/// `A(x)|z> = (m/m0) (pi a^2)^{-1/4} exp(-(x - z)^2 / 2a^2) |z>`.
#[derive(Debug, Clone)]
pub struct SmearedDensityOperator {
    lattice: Lattice,
    a: f64,
    mass_ratio: f64,
    /// `table[(z, k)]`: eigenvalue of `A(x_k)` on particle position `z`.
    table: DMatrix<f64>,
    /// Set when the spacing does not resolve the smearing length.
    pub coarse: bool,
}

pub fn build_smeared_a(lattice: &Lattice, a: f64, mass_ratio: f64) -> Result<SmearedDensityOperator> {
    if !(a > 0.0) {
        return Err(invalid("a", "smearing length must be positive"));
    }
    if !(mass_ratio >= 0.0) || !mass_ratio.is_finite() {
        return Err(invalid("mass_ratio", "must be finite and non-negative"));
    }
    let pref = mass_ratio * (PI * a * a).powf(-0.25);
    let x = lattice.positions();
    let n = x.len();
    let table = DMatrix::from_fn(n, n, |z, k| pref * (-(x[k] - x[z]).powi(2) / (2.0 * a * a)).exp());
    Ok(SmearedDensityOperator {
        lattice: lattice.clone(),
        a,
        mass_ratio,
        table,
        coarse: n > 1 && lattice.dx() >= a,
    })
}

impl SmearedDensityOperator {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn smearing(&self) -> f64 {
        self.a
    }

    pub fn mass_ratio(&self) -> f64 {
        self.mass_ratio
    }

    /// Diagonal of `A(x_k)` over particle positions.
    pub fn diagonal(&self, k: usize) -> Vec<f64> {
        self.table.column(k).iter().copied().collect()
    }

    pub fn operator(&self, k: usize) -> HermitianOperator {
        HermitianOperator::diagonal(&self.diagonal(k))
    }

    /// Largest deviation of `sum_k A(x_k)^2 dx` from `(m/m0)^2` over particle
    /// positions at least six smearing lengths from either edge.
    pub fn normalization_residual(&self) -> Option<f64> {
        let x = self.lattice.positions();
        let (lo, hi) = (self.lattice.left() + 6.0 * self.a, self.lattice.right() - 6.0 * self.a);
        let target = self.mass_ratio * self.mass_ratio;
        (0..x.len())
            .filter(|&z| x[z] >= lo && x[z] <= hi)
            .map(|z| {
                let s: f64 = self.table.row(z).iter().map(|v| v * v).sum::<f64>() * self.lattice.dx();
                (s - target).abs()
            })
            .reduce(f64::max)
    }

    pub fn channels(&self) -> Result<CollapseChannels> {
        CollapseChannels::from_table(self.table.clone(), self.lattice.dx())
    }
}

/// `p^2 / 2m` as the three-point Laplacian with Dirichlet boundaries.
pub fn free_particle_hamiltonian(lattice: &Lattice, mass: f64) -> Result<HermitianOperator> {
    if !(mass > 0.0) {
        return Err(invalid("mass", "must be positive"));
    }
    let n = lattice.sites();
    let k = 1.0 / (2.0 * mass * lattice.dx() * lattice.dx());
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = c(2.0 * k, 0.0);
        if i + 1 < n {
            m[(i, i + 1)] = c(-k, 0.0);
            m[(i + 1, i)] = c(-k, 0.0);
        }
    }
    HermitianOperator::new(m)
}

pub fn position_operator(lattice: &Lattice) -> HermitianOperator {
    HermitianOperator::diagonal(lattice.positions())
}

/// Normalized Gaussian packet whose position density has standard
/// deviation `sigma`, centered at `x0` with wavenumber `k0`.
pub fn gaussian_packet(lattice: &Lattice, x0: f64, sigma: f64, k0: f64) -> Result<StateVector> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "packet width must be positive"));
    }
    let v = CVector::from_iterator(
        lattice.sites(),
        lattice.positions().iter().map(|&x| {
            let amp = (-(x - x0).powi(2) / (4.0 * sigma * sigma)).exp();
            c(amp * (k0 * x).cos(), amp * (k0 * x).sin())
        }),
    );
    StateVector::normalize_from(v)
}

/// Mean and standard deviation of the position density.
pub fn position_moments(state: &StateVector, lattice: &Lattice) -> (f64, f64) {
    let p = state.probabilities();
    let total: f64 = p.iter().sum();
    let mean = p.iter().zip(lattice.positions()).map(|(p, x)| p * x).sum::<f64>() / total;
    let var = p.iter().zip(lattice.positions()).map(|(p, x)| p * (x - mean).powi(2)).sum::<f64>() / total;
    (mean, var.sqrt())
}

/// True if the density's mean +/- `n_sigma` standard deviations lies inside
/// the lattice.
pub fn within_margin(state: &StateVector, lattice: &Lattice, n_sigma: f64) -> bool {
    let (m, s) = position_moments(state, lattice);
    m - n_sigma * s >= lattice.left() && m + n_sigma * s <= lattice.right()
}

/// Edge clearance required of lattice runs, in standard deviations.
pub const EDGE_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct LatticeRun {
    pub run: CslRun,
    /// Some checkpoint or the final state came within five standard
    /// deviations of an edge.
    pub near_boundary: bool,
    pub coarse: bool,
}

fn lattice_stepper(
    smeared: &SmearedDensityOperator,
    h: &HermitianOperator,
    dt: f64,
    lambda: f64,
) -> Result<SplitStepper> {
    SplitStepper::new(smeared.channels()?, h, dt, lambda)
}

fn finish(run: CslRun, smeared: &SmearedDensityOperator) -> LatticeRun {
    let lat = smeared.lattice();
    let near_boundary = !within_margin(&run.state, lat, EDGE_SIGMAS)
        || run.checkpoints.iter().any(|cp| !within_margin(&cp.state, lat, EDGE_SIGMAS));
    LatticeRun {
        run,
        near_boundary,
        coarse: smeared.coarse,
    }
}

/// Evolves a lattice state for a given space-time noise field.
pub fn evolve_lattice_csl(
    phi: &StateVector,
    smeared: &SmearedDensityOperator,
    h: &HermitianOperator,
    field: &NoiseTrajectory,
    lambda: f64,
    checkpoint_every: Option<usize>,
) -> Result<LatticeRun> {
    if field.sites != smeared.lattice().sites() {
        return Err(Error::DimensionMismatch {
            context: "noise field sites vs lattice",
            expected: smeared.lattice().sites(),
            got: field.sites,
        });
    }
    let stepper = lattice_stepper(smeared, h, field.grid.dt(), lambda)?;
    let options = EvolveOptions {
        checkpoint_every,
        record_noise: false,
    };
    let (run, _) = stepper.evolve(phi, NoiseSource::Given(field), field.grid, &options)?;
    Ok(finish(run, smeared))
}

/// Lattice run with the noise field drawn from the physical measure.
pub fn sample_lattice_physical(
    phi: &StateVector,
    smeared: &SmearedDensityOperator,
    h: &HermitianOperator,
    grid: TimeGrid,
    lambda: f64,
    seed: StreamSeed,
    checkpoint_every: Option<usize>,
) -> Result<LatticeRun> {
    phi.require_normalized()?;
    let stepper = lattice_stepper(smeared, h, grid.dt(), lambda)?;
    let options = EvolveOptions {
        checkpoint_every,
        record_noise: false,
    };
    let (run, _) = stepper.evolve(phi, NoiseSource::Physical(seed), grid, &options)?;
    Ok(finish(run, smeared))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_lattice_raw;
    use rayon::prelude::*;

    #[test]
    fn single_site_eigenvalue() {
        let lat = Lattice::from_positions(vec![0.3]).unwrap();
        let s = build_smeared_a(&lat, 0.5, 2.0).unwrap();
        let expected = 2.0 * (PI * 0.25f64).powf(-0.25);
        assert!((s.diagonal(0)[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn profile_is_symmetric_and_normalized() {
        let lat = Lattice::uniform(121, 0.1).unwrap();
        let s = build_smeared_a(&lat, 0.5, 1.0).unwrap();
        assert!(!s.coarse);
        let k0 = 60;
        let d = s.diagonal(k0);
        for j in 1..30 {
            assert!((d[k0 + j] - d[k0 - j]).abs() < 1e-15);
        }
        assert!(s.normalization_residual().unwrap() < 1e-10);
    }

    #[test]
    fn distant_positions_distinguished() {
        let lat = Lattice::uniform(101, 0.1).unwrap();
        let s = build_smeared_a(&lat, 0.3, 1.0).unwrap();
        let d = s.diagonal(30);
        let max = d.iter().cloned().fold(0.0, f64::max);
        assert!((d[30] - d[70]) > 0.9 * max);
    }

    #[test]
    fn coarse_lattice_flagged() {
        let lat = Lattice::uniform(11, 1.0).unwrap();
        assert!(build_smeared_a(&lat, 0.5, 1.0).unwrap().coarse);
        assert!(build_smeared_a(&lat, 0.0, 1.0).is_err());
        assert!(Lattice::from_positions(vec![0.0, 1.0, 3.0]).is_err());
    }

    #[test]
    fn free_spreading_matches_dispersion() {
        let lat = Lattice::uniform(128, 0.25).unwrap();
        let mass = 1.0;
        let sigma0 = 2.0;
        let h = free_particle_hamiltonian(&lat, mass).unwrap();
        let s = build_smeared_a(&lat, 1.0, 1.0).unwrap();
        let phi = gaussian_packet(&lat, 0.0, sigma0, 0.0).unwrap();
        let t = 4.0;
        let grid = TimeGrid::new(0.01, 400).unwrap();
        let field = NoiseTrajectory::from_values(
            grid,
            128,
            lat.dx(),
            vec![0.0; 400 * 128],
            crate::noise::MeasureTag::Raw,
            StreamSeed::new(0, 0),
        )
        .unwrap();
        let r = evolve_lattice_csl(&phi, &s, &h, &field, 1e-300, None).unwrap();
        assert!(!r.near_boundary);
        let (_, sd) = position_moments(&r.run.state, &lat);
        let expected = sigma0 * (1.0 + (t / (2.0 * mass * sigma0 * sigma0)).powi(2)).sqrt();
        assert!((sd / expected - 1.0).abs() < 0.01, "{sd} vs {expected}");
    }

    #[test]
    fn near_boundary_flag() {
        let lat = Lattice::uniform(64, 0.25).unwrap();
        let s = build_smeared_a(&lat, 1.0, 1.0).unwrap();
        let phi = gaussian_packet(&lat, 6.0, 1.0, 0.0).unwrap();
        let grid = TimeGrid::new(0.1, 2).unwrap();
        let field = sample_lattice_raw(grid, 64, lat.dx(), 0.1, StreamSeed::new(1, 1)).unwrap();
        let r = evolve_lattice_csl(&phi, &s, &HermitianOperator::zeros(64), &field, 0.1, None).unwrap();
        assert!(r.near_boundary);
    }

    fn two_packets(lat: &Lattice, w_left: f64) -> StateVector {
        let l = gaussian_packet(lat, -6.0, 0.5, 0.0).unwrap();
        let r = gaussian_packet(lat, 6.0, 0.5, 0.0).unwrap();
        let v = l.amplitudes() * c(w_left.sqrt(), 0.0) + r.amplitudes() * c((1.0 - w_left).sqrt(), 0.0);
        StateVector::normalize_from(v).unwrap()
    }

    #[test]
    fn distant_packets_collapse_with_born_frequencies() {
        let lat = Lattice::uniform(64, 0.5).unwrap();
        let s = build_smeared_a(&lat, 1.0, 1.0).unwrap();
        let phi = two_packets(&lat, 0.3);
        let p_left: f64 = phi.probabilities().iter().zip(lat.positions()).filter(|(_, x)| **x < 0.0).map(|(p, _)| p).sum();
        let lambda = 1.0;
        let grid = TimeGrid::new(0.05, 300).unwrap();
        let h = HermitianOperator::zeros(64);
        let runs = 600;
        let lefts: Vec<f64> = (0..runs as u64)
            .into_par_iter()
            .map(|i| {
                let r = sample_lattice_physical(&phi, &s, &h, grid, lambda, StreamSeed::new(40, i), None).unwrap();
                r.run.state.probabilities().iter().zip(lat.positions()).filter(|(_, x)| **x < 0.0).map(|(p, _)| p).sum()
            })
            .collect();
        for l in &lefts {
            assert!(*l < 1e-6 || *l > 1.0 - 1e-6, "not collapsed: {l}");
        }
        let freq = lefts.iter().filter(|l| **l > 0.5).count() as f64 / runs as f64;
        let sig = (p_left * (1.0 - p_left) / runs as f64).sqrt();
        assert!((freq - p_left).abs() < 3.0 * sig, "{freq} vs {p_left}");
    }

    #[test]
    fn ensemble_density_unchanged_without_kinetic_term() {
        let lat = Lattice::uniform(48, 0.5).unwrap();
        let s = build_smeared_a(&lat, 1.0, 1.0).unwrap();
        let phi = gaussian_packet(&lat, 0.0, 2.0, 0.0).unwrap();
        let p0 = phi.probabilities();
        let grid = TimeGrid::new(0.05, 40).unwrap();
        let h = HermitianOperator::zeros(48);
        let runs = 2000;
        let probs: Vec<Vec<f64>> = (0..runs as u64)
            .into_par_iter()
            .map(|i| {
                sample_lattice_physical(&phi, &s, &h, grid, 0.5, StreamSeed::new(41, i), None)
                    .unwrap()
                    .run
                    .state
                    .probabilities()
            })
            .collect();
        let (m0, _) = position_moments(&phi, &lat);
        let means: Vec<f64> = probs
            .iter()
            .map(|p| p.iter().zip(lat.positions()).map(|(p, x)| p * x).sum::<f64>())
            .collect();
        let avg = means.iter().sum::<f64>() / runs as f64;
        let sd = (means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (runs as f64 - 1.0)).sqrt();
        assert!((avg - m0).abs() < 4.0 * sd / (runs as f64).sqrt() + 1e-12);
        for z in 0..48 {
            let col: Vec<f64> = probs.iter().map(|p| p[z]).collect();
            let mean = col.iter().sum::<f64>() / runs as f64;
            let sdz = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0)).sqrt();
            assert!((mean - p0[z]).abs() <= 5.0 * sdz / (runs as f64).sqrt() + 1e-12, "site {z}");
        }
    }
}
