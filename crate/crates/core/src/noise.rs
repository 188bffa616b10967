//! White-noise trajectories under the raw (vacuum) Gaussian measure and the
//! physical collapse measure, plus importance weights between the two.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CollapseChannels, CslRun, EvolveOptions, NoiseSource, SplitStepper};
use crate::error::{invalid, Error, Result};
use crate::linalg::{HermitianOperator, StateVector};
use crate::rng::StreamSeed;
use crate::stats::batch_mean_stderr;

/// Uniform time discretization `t_j = j dt`, `j = 1..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt", format!("time step must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(invalid("steps", "need at least one step"));
        }
        Ok(Self { dt, steps })
    }

    /// Grid covering `[0, horizon]` with step close to `dt`; the step is
    /// adjusted so that `steps * dt == horizon` up to rounding.
    pub fn covering(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(invalid("horizon", format!("must be positive, got {horizon}")));
        }
        let steps = (horizon / dt).round().max(1.0) as usize;
        Self::new(horizon / steps as f64, steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t_final(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureTag {
    Raw,
    Physical,
}

impl MeasureTag {
    fn code(self) -> u64 {
        match self {
            MeasureTag::Raw => 0,
            MeasureTag::Physical => 1,
        }
    }

    fn from_code(c: u64) -> Result<Self> {
        match c {
            0 => Ok(MeasureTag::Raw),
            1 => Ok(MeasureTag::Physical),
            _ => Err(Error::Format(format!("unknown measure tag {c}"))),
        }
    }
}

/// Sampled noise `w(t_j)` or lattice field `w(x_k, t_j)` (step-major).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrajectory {
    pub grid: TimeGrid,
    /// Number of lattice sites; 1 for the single-operator model.
    pub sites: usize,
    /// Spatial cell volume multiplying each site in space-time integrals.
    pub cell: f64,
    pub measure: MeasureTag,
    pub seed: StreamSeed,
    values: Vec<f64>,
}

impl NoiseTrajectory {
    pub fn from_values(
        grid: TimeGrid,
        sites: usize,
        cell: f64,
        values: Vec<f64>,
        measure: MeasureTag,
        seed: StreamSeed,
    ) -> Result<Self> {
        if sites == 0 || values.len() != grid.steps() * sites {
            return Err(Error::DimensionMismatch {
                context: "noise values vs steps*sites",
                expected: grid.steps() * sites,
                got: values.len(),
            });
        }
        if !(cell > 0.0) {
            return Err(invalid("cell", "cell volume must be positive"));
        }
        Ok(Self {
            grid,
            sites,
            cell,
            measure,
            seed,
            values,
        })
    }

    /// Single-site trajectory from explicit values (raw tag, zero seed).
    pub fn deterministic(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::from_values(grid, 1, 1.0, values, MeasureTag::Raw, StreamSeed::new(0, 0))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Field values for step `j` (one per site).
    pub fn step(&self, j: usize) -> &[f64] {
        &self.values[j * self.sites..(j + 1) * self.sites]
    }

    pub fn lattice_values(&self) -> Option<&[f64]> {
        (self.sites > 1).then_some(self.values.as_slice())
    }

    /// `-(dt cell / 2 lambda) sum w^2`: log of the vacuum Gaussian factor.
    pub fn log_vacuum(&self, lambda: f64) -> f64 {
        let s: f64 = self.values.iter().map(|w| w * w).sum();
        -self.grid.dt() * self.cell / (2.0 * lambda) * s
    }

    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&self.grid.dt().to_le_bytes())?;
        out.write_all(&(self.grid.steps() as u64).to_le_bytes())?;
        out.write_all(&self.seed.master.to_le_bytes())?;
        out.write_all(&self.measure.code().to_le_bytes())?;
        out.write_all(&self.seed.stream.to_le_bytes())?;
        out.write_all(&(self.sites as u64).to_le_bytes())?;
        out.write_all(&self.cell.to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Format("not a noise trajectory file".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut dyn Read| -> Result<[u8; 8]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let dt = f64::from_le_bytes(next(&mut input)?);
        let steps = u64::from_le_bytes(next(&mut input)?) as usize;
        let master = u64::from_le_bytes(next(&mut input)?);
        let measure = MeasureTag::from_code(u64::from_le_bytes(next(&mut input)?))?;
        let stream = u64::from_le_bytes(next(&mut input)?);
        let sites = u64::from_le_bytes(next(&mut input)?) as usize;
        let cell = f64::from_le_bytes(next(&mut input)?);
        let grid = TimeGrid::new(dt, steps)?;
        let mut values = Vec::with_capacity(steps * sites);
        for _ in 0..steps * sites {
            values.push(f64::from_le_bytes(next(&mut input)?));
        }
        Self::from_values(grid, sites, cell, values, measure, StreamSeed::new(master, stream))
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        write!(out, "step,time")?;
        if self.sites == 1 {
            write!(out, ",w")?;
        } else {
            for k in 0..self.sites {
                write!(out, ",w_{k}")?;
            }
        }
        writeln!(out)?;
        for j in 0..self.grid.steps() {
            write!(out, "{},{}", j + 1, (j + 1) as f64 * self.grid.dt())?;
            for w in self.step(j) {
                write!(out, ",{w}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// File layout: 8-byte magic, then little-endian 64-bit words
/// `dt, steps, seed, measure_tag, stream, sites, cell`, then the values
/// step-major as f64.
pub const BINARY_MAGIC: &[u8; 8] = b"CSLNOISE";

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid("lambda", format!("collapse rate must be positive, got {lambda}")));
    }
    Ok(())
}

/// I.i.d. `Normal(0, lambda / dt)` noise.
pub fn sample_raw_white(grid: TimeGrid, lambda: f64, seed: StreamSeed) -> Result<NoiseTrajectory> {
    sample_lattice_raw(grid, 1, 1.0, lambda, seed)
}

/// I.i.d. `Normal(0, lambda / (dt dx))` per space-time cell.
pub fn sample_lattice_raw(
    grid: TimeGrid,
    sites: usize,
    cell: f64,
    lambda: f64,
    seed: StreamSeed,
) -> Result<NoiseTrajectory> {
    check_lambda(lambda)?;
    if sites == 0 {
        return Err(invalid("sites", "need at least one site"));
    }
    if !(cell > 0.0) {
        return Err(invalid("cell", "cell volume must be positive"));
    }
    let sd = raw_sd(lambda, grid.dt(), cell);
    let mut rng = seed.rng();
    let values = (0..grid.steps() * sites)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NoiseTrajectory::from_values(grid, sites, cell, values, MeasureTag::Raw, seed)
}

pub(crate) fn raw_sd(lambda: f64, dt: f64, cell: f64) -> f64 {
    (lambda / (dt * cell)).sqrt()
}

/// `(2 lambda t)^{-1} sum_j w(t_j) dt`, summed over sites with the cell
/// weight for lattice trajectories.
pub fn time_average(traj: &NoiseTrajectory, lambda: f64) -> f64 {
    let s: f64 = traj.values().iter().sum();
    s * traj.grid.dt() * traj.cell / (2.0 * lambda * traj.grid.t_final())
}

/// Importance weight of a raw-measure trajectory relative to the physical
/// measure: the squared norm of the collapse-evolved state divided by the
/// vacuum Gaussian density of the same noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureWeight {
    pub log_weight: f64,
}

impl MeasureWeight {
    pub fn from_logs(log_norm2: f64, log_vacuum: f64) -> Self {
        Self {
            log_weight: log_norm2 - log_vacuum,
        }
    }

    pub fn of_run(run: &CslRun) -> Self {
        Self::from_logs(run.log_norm2, run.log_vacuum)
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Mean importance weight at one checkpoint time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingalePoint {
    pub time: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Raw-measure average of the squared norm (relative to the vacuum density)
/// at every checkpoint; equals 1 in expectation at all times.
pub fn norm_martingale(runs: &[CslRun]) -> Result<Vec<MartingalePoint>> {
    if runs.iter().any(|r| r.trajectory.measure != MeasureTag::Raw) {
        return Err(Error::MixedMeasures);
    }
    let n_cp = runs.first().map_or(0, |r| r.checkpoints.len());
    (0..n_cp)
        .map(|i| {
            let w: Vec<f64> = runs
                .iter()
                .map(|r| r.checkpoints.get(i).map(|cp| cp.weight().weight()))
                .collect::<Option<_>>()
                .ok_or_else(|| invalid("runs", "checkpoint counts differ between runs"))?;
            let (mean, stderr) = batch_mean_stderr(&w)?;
            Ok(MartingalePoint {
                time: runs[0].checkpoints[i].time,
                mean,
                stderr,
            })
        })
        .collect()
}

/// Noise trajectory drawn from the physical measure together with the
/// normalized state it produces.
#[derive(Debug, Clone)]
pub struct PhysicalSample {
    pub trajectory: NoiseTrajectory,
    pub state: StateVector,
    pub run: CslRun,
}

/// Draws a trajectory exactly from the physical measure as a chain of
/// one-step conditionals: each step's noise is the Gaussian mixture
/// `sum_n p_n Normal(2 lambda a_n, lambda/dt)` over the current weights
/// in the eigenbasis of the collapse operator.
pub fn sample_physical_sequential(
    phi: &StateVector,
    a: &HermitianOperator,
    h: &HermitianOperator,
    grid: TimeGrid,
    lambda: f64,
    seed: StreamSeed,
) -> Result<PhysicalSample> {
    phi.require_normalized()?;
    check_lambda(lambda)?;
    let channels = CollapseChannels::from_operator(a)?;
    let stepper = SplitStepper::new(channels, h, grid.dt(), lambda)?;
    let options = EvolveOptions {
        record_noise: true,
        ..EvolveOptions::default()
    };
    let (run, traj) = stepper.evolve(phi, NoiseSource::Physical(seed), grid, &options)?;
    let trajectory = traj.expect("noise recording was requested");
    Ok(PhysicalSample {
        state: run.state.clone(),
        trajectory,
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::HermitianOperator;

    fn sample_variance(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn raw_variance_within_chi_square_band() {
        let grid = TimeGrid::new(0.01, 100_000).unwrap();
        let t = sample_raw_white(grid, 1.0, StreamSeed::new(11, 0)).unwrap();
        let var = sample_variance(t.values());
        // sd of the variance estimator is sigma^2 sqrt(2/(n-1)) ~ 0.447
        assert!((97.0..=103.0).contains(&var), "variance {var}");
    }

    #[test]
    fn raw_is_deterministic_and_scales() {
        let grid = TimeGrid::new(0.01, 64).unwrap();
        let a = sample_raw_white(grid, 1.0, StreamSeed::new(5, 2)).unwrap();
        let b = sample_raw_white(grid, 1.0, StreamSeed::new(5, 2)).unwrap();
        assert_eq!(a, b);
        let c = sample_raw_white(grid, 4.0, StreamSeed::new(5, 2)).unwrap();
        for (x, y) in a.values().iter().zip(c.values()) {
            assert!((2.0 * x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn lattice_single_site_reduces_to_white() {
        let grid = TimeGrid::new(0.05, 50).unwrap();
        let a = sample_raw_white(grid, 0.7, StreamSeed::new(9, 1)).unwrap();
        let b = sample_lattice_raw(grid, 1, 1.0, 0.7, StreamSeed::new(9, 1)).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.lattice_values().is_none());
    }

    #[test]
    fn lattice_variance_scales_with_cell() {
        let grid = TimeGrid::new(0.1, 2000).unwrap();
        let t = sample_lattice_raw(grid, 50, 0.25, 1.0, StreamSeed::new(3, 0)).unwrap();
        let var = sample_variance(t.values());
        let expected = 1.0 / (0.1 * 0.25);
        // n = 1e5 -> relative sd of the estimator ~ 0.0045; 3 sigma band
        assert!((var / expected - 1.0).abs() < 3.0 * (2.0 / 1e5f64).sqrt(), "{var}");
    }

    #[test]
    fn invalid_lambda_rejected() {
        let grid = TimeGrid::new(0.1, 3).unwrap();
        assert!(sample_raw_white(grid, -1.0, StreamSeed::new(0, 0)).is_err());
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(0.1, 0).is_err());
    }

    #[test]
    fn time_average_of_constant_noise() {
        let lambda = 0.8;
        let a0 = 0.35;
        let grid = TimeGrid::new(0.02, 500).unwrap();
        let t = NoiseTrajectory::deterministic(grid, vec![2.0 * lambda * a0; 500]).unwrap();
        assert!((time_average(&t, lambda) - a0).abs() < 1e-12);
    }

    #[test]
    fn raw_time_average_is_centered() {
        // lambda = 1, t = 100: each average has sd 1/sqrt(4 lambda t) = 0.05
        let lambda = 1.0;
        let grid = TimeGrid::new(0.1, 1000).unwrap();
        let avgs: Vec<f64> = (0..1000)
            .map(|i| time_average(&sample_raw_white(grid, lambda, StreamSeed::new(21, i)).unwrap(), lambda))
            .collect();
        let mean = avgs.iter().sum::<f64>() / avgs.len() as f64;
        let se = 0.05 / (avgs.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn physical_from_eigenstate_is_single_gaussian() {
        let lambda = 1.0;
        let a = HermitianOperator::diagonal(&[0.0, 1.0]);
        let h = HermitianOperator::zeros(2);
        let phi = StateVector::basis(2, 1);
        let grid = TimeGrid::new(0.01, 20_000).unwrap();
        let s = sample_physical_sequential(&phi, &a, &h, grid, lambda, StreamSeed::new(1, 0)).unwrap();
        assert_eq!(s.trajectory.measure, MeasureTag::Physical);
        let v = s.trajectory.values();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        // each step Normal(2 lambda, lambda/dt = 100)
        assert!((mean - 2.0).abs() < 4.0 * (100.0 / n).sqrt());
        assert!((sample_variance(v) / 100.0 - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
        let avg = time_average(&s.trajectory, lambda);
        assert!((avg - 1.0).abs() < 4.0 * (1.0 / (2.0 * lambda * grid.t_final())).sqrt());
        assert!((s.state.probabilities()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn physical_rejects_unnormalized_input() {
        let a = HermitianOperator::diagonal(&[0.0, 1.0]);
        let h = HermitianOperator::zeros(2);
        let phi = StateVector::from_real(&[1.0, 1.0]).unwrap();
        let grid = TimeGrid::new(0.01, 10).unwrap();
        assert!(matches!(
            sample_physical_sequential(&phi, &a, &h, grid, 1.0, StreamSeed::new(0, 0)),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn raw_weights_form_a_martingale() {
        use crate::dynamics::{simulate_runs, CollapseChannels, Sampler, SplitStepper};
        let a = HermitianOperator::diagonal(&[0.0, 1.0]);
        let h = HermitianOperator::pauli_x().scaled(0.25);
        let phi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let stepper = SplitStepper::new(CollapseChannels::from_operator(&a).unwrap(), &h, 0.05, 0.1).unwrap();
        let grid = TimeGrid::new(0.05, 100).unwrap();
        let runs = simulate_runs(&stepper, &phi, grid, Sampler::Raw, 17, 20_000, Some(20)).unwrap();
        let pts = norm_martingale(&runs).unwrap();
        assert_eq!(pts.len(), 5);
        for p in pts {
            assert!((p.mean - 1.0).abs() < 4.0 * p.stderr, "{p:?}");
        }
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let grid = TimeGrid::new(0.5, 4).unwrap();
        let t = sample_lattice_raw(grid, 3, 0.5, 2.0, StreamSeed::new(77, 4)).unwrap();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 7 * 8 + 12 * 8);
        let back = NoiseTrajectory::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("step,time,w_0,w_1,w_2\n"));
    }
}
