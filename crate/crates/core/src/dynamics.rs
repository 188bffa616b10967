//! CSL evolution for a given noise trajectory, the pointer-measurement
//! kernel, and collapse ensembles.
//!
//! The engine works with a set of commuting collapse channels that share an
//! eigenbasis: one channel for the single-operator model, one channel per
//! lattice site for the smeared mass-density model. Each step is a Strang
//! split: half unitary, diagonal collapse kernel, half unitary.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, eig_hermitian, unitary_propagator, CMatrix, CVector, HermitianOperator, StateVector, C64};
use crate::noise::{raw_sd, MeasureTag, MeasureWeight, NoiseTrajectory, TimeGrid};
use crate::rng::StreamSeed;
use crate::stats::{ks_test_weighted, normal_cdf, normal_pdf, KsOutcome};

/// Below this log squared norm a run is flagged as deweighted.
pub const DEWEIGHT_LOG_NORM2: f64 = -700.0;

/// Commuting collapse operators in a shared eigenbasis.
#[derive(Debug, Clone)]
pub struct CollapseChannels {
    /// Columns are the common eigenvectors; `None` means the standard basis.
    basis: Option<CMatrix>,
    /// `table[(n, k)]` is the eigenvalue of channel `k` on basis state `n`.
    table: DMatrix<f64>,
    cell: f64,
}

impl CollapseChannels {
    pub fn from_operator(a: &HermitianOperator) -> Result<Self> {
        if a.is_diagonal() {
            let d = a.diagonal_values();
            return Self::from_table(DMatrix::from_column_slice(d.len(), 1, &d), 1.0);
        }
        let e = eig_hermitian(a)?;
        Ok(Self {
            basis: Some(e.vectors),
            table: DMatrix::from_column_slice(e.values.len(), 1, e.values.as_slice()),
            cell: 1.0,
        })
    }

    /// Diagonal channels in the standard basis: `table` is dim x channels.
    pub fn from_table(table: DMatrix<f64>, cell: f64) -> Result<Self> {
        if table.nrows() == 0 || table.ncols() == 0 {
            return Err(invalid("table", "need at least one basis state and one channel"));
        }
        if !(cell > 0.0) {
            return Err(invalid("cell", "cell volume must be positive"));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(invalid("table", "non-finite eigenvalue"));
        }
        Ok(Self {
            basis: None,
            table,
            cell,
        })
    }

    pub fn dim(&self) -> usize {
        self.table.nrows()
    }

    pub fn channels(&self) -> usize {
        self.table.ncols()
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn eigenvalue(&self, n: usize, k: usize) -> f64 {
        self.table[(n, k)]
    }

    pub fn basis(&self) -> Option<&CMatrix> {
        self.basis.as_ref()
    }

    fn to_eigenbasis(&self, v: &CVector) -> CVector {
        match &self.basis {
            Some(b) => b.adjoint() * v,
            None => v.clone(),
        }
    }

    fn from_eigenbasis(&self, v: &CVector) -> CVector {
        match &self.basis {
            Some(b) => b * v,
            None => v.clone(),
        }
    }

    /// `(1/2) sum_k cell (a_{n,k} - a_{m,k})^2` for every pair: the
    /// decoherence exponent per unit `lambda` and time.
    pub fn decoherence_table(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |n, m| {
            0.5 * self.cell
                * (0..self.channels())
                    .map(|k| (self.table[(n, k)] - self.table[(m, k)]).powi(2))
                    .sum::<f64>()
        })
    }
}

/// `exp(-(dt / 4 lambda)(w - 2 lambda A)^2)`.
pub fn pointer_step_kernel(
    a: &HermitianOperator,
    w: f64,
    dt: f64,
    lambda: f64,
) -> Result<HermitianOperator> {
    check_positive("lambda", lambda)?;
    check_positive("dt", dt)?;
    let e = eig_hermitian(a)?;
    let m = e.apply_fn(|x| c((-(dt / (4.0 * lambda)) * (w - 2.0 * lambda * x).powi(2)).exp(), 0.0));
    Ok(HermitianOperator::from_hermitized(m))
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(name, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Where the noise of a run comes from.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSource<'a> {
    Given(&'a NoiseTrajectory),
    /// Vacuum measure drawn on the fly; identical values to
    /// [`crate::noise::sample_lattice_raw`] with the same seed.
    Raw(StreamSeed),
    /// Physical measure via one-step conditional mixtures.
    Physical(StreamSeed),
}

#[derive(Debug, Clone, Default)]
pub struct EvolveOptions {
    /// Record a checkpoint after every this many steps.
    pub checkpoint_every: Option<usize>,
    /// Keep the noise values and return them as a trajectory.
    pub record_noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub time: f64,
    pub state: StateVector,
    pub log_norm2: f64,
    pub log_vacuum: f64,
}

impl Checkpoint {
    pub fn squared_norm(&self) -> f64 {
        self.log_norm2.exp()
    }

    pub fn weight(&self) -> MeasureWeight {
        MeasureWeight::from_logs(self.log_norm2, self.log_vacuum)
    }
}

/// Identifies the noise that produced a run without storing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRef {
    pub grid: TimeGrid,
    pub sites: usize,
    pub cell: f64,
    pub measure: MeasureTag,
    pub seed: StreamSeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CslRun {
    /// Normalized final state; the norm lives in `log_norm2`.
    pub state: StateVector,
    pub log_norm2: f64,
    /// Log of the vacuum Gaussian factor of the noise, `-(1/2 lambda) int w^2`.
    pub log_vacuum: f64,
    /// `sum_j sum_k w_{jk} dt cell`.
    pub noise_integral: f64,
    pub deweighted: bool,
    pub trajectory: TrajectoryRef,
    pub checkpoints: Vec<Checkpoint>,
}

impl CslRun {
    pub fn squared_norm(&self) -> f64 {
        self.log_norm2.exp()
    }

    /// The unnormalized final state `|psi, t>`.
    pub fn final_state(&self) -> CVector {
        self.state.amplitudes() * c((0.5 * self.log_norm2).exp(), 0.0)
    }

    /// The time-average statistic `(2 lambda t)^{-1} int w`.
    pub fn a_statistic(&self, lambda: f64) -> f64 {
        self.noise_integral / (2.0 * lambda * self.trajectory.grid.t_final())
    }

    pub fn weight(&self) -> MeasureWeight {
        MeasureWeight::of_run(self)
    }
}

/// Strang-split stepper for a fixed `(channels, H_A, dt, lambda)`.
#[derive(Debug, Clone)]
pub struct SplitStepper {
    channels: CollapseChannels,
    /// `exp(-i H_A dt/2)` expressed in the channel eigenbasis.
    half: Option<CMatrix>,
    dt: f64,
    lambda: f64,
}

impl SplitStepper {
    pub fn new(channels: CollapseChannels, h: &HermitianOperator, dt: f64, lambda: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        check_positive("dt", dt)?;
        if h.dim() != channels.dim() {
            return Err(Error::DimensionMismatch {
                context: "hamiltonian vs collapse operator",
                expected: channels.dim(),
                got: h.dim(),
            });
        }
        let half = if h.is_zero() {
            None
        } else {
            let u = unitary_propagator(h, 0.5 * dt)?;
            Some(match &channels.basis {
                Some(b) => b.adjoint() * u * b,
                None => u,
            })
        };
        Ok(Self {
            channels,
            half,
            dt,
            lambda,
        })
    }

    pub fn channels(&self) -> &CollapseChannels {
        &self.channels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn evolve(
        &self,
        phi: &StateVector,
        source: NoiseSource<'_>,
        grid: TimeGrid,
        options: &EvolveOptions,
    ) -> Result<(CslRun, Option<NoiseTrajectory>)> {
        let dim = self.channels.dim();
        let nch = self.channels.channels();
        let cell = self.channels.cell;
        if phi.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "state vs collapse operator",
                expected: dim,
                got: phi.dim(),
            });
        }
        if ((grid.dt() - self.dt) / self.dt).abs() > 1e-12 {
            return Err(invalid("grid", format!("grid step {} differs from stepper step {}", grid.dt(), self.dt)));
        }
        let (measure, seed) = match source {
            NoiseSource::Given(t) => {
                if t.grid.steps() != grid.steps() || ((t.grid.dt() - grid.dt()) / grid.dt()).abs() > 1e-12 {
                    return Err(invalid("trajectory", "trajectory grid does not match the requested horizon"));
                }
                if t.sites != nch {
                    return Err(Error::DimensionMismatch {
                        context: "noise sites vs collapse channels",
                        expected: nch,
                        got: t.sites,
                    });
                }
                if ((t.cell - cell) / cell).abs() > 1e-12 {
                    return Err(invalid("trajectory", "noise cell volume differs from the collapse operator's"));
                }
                (t.measure, t.seed)
            }
            NoiseSource::Raw(s) => (MeasureTag::Raw, s),
            NoiseSource::Physical(s) => (MeasureTag::Physical, s),
        };
        let mut rng = match source {
            NoiseSource::Given(_) => None,
            NoiseSource::Raw(s) | NoiseSource::Physical(s) => Some(s.rng()),
        };

        let lambda = self.lambda;
        let dt = self.dt;
        let sd = raw_sd(lambda, dt, cell);
        let kcoef = dt * cell / (4.0 * lambda);

        let mut coeffs: Vec<C64> = self.channels.to_eigenbasis(phi.amplitudes()).iter().copied().collect();
        let n0: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum();
        if !(n0 > 0.0) {
            return Err(invalid("phi", "initial state has zero norm"));
        }
        let mut log_norm2 = n0.ln();
        let s0 = n0.sqrt();
        coeffs.iter_mut().for_each(|z| *z /= s0);

        let mut scratch = vec![C64::new(0.0, 0.0); dim];
        let mut w = vec![0.0; nch];
        let mut exponents = vec![0.0; dim];
        let mut log_vacuum = 0.0;
        let mut noise_integral = 0.0;
        let mut recorded = options.record_noise.then(|| Vec::with_capacity(grid.steps() * nch));
        let mut checkpoints = Vec::new();

        for j in 0..grid.steps() {
            if let Some(u) = &self.half {
                apply_dense(u, &coeffs, &mut scratch);
                std::mem::swap(&mut coeffs, &mut scratch);
            }
            match source {
                NoiseSource::Given(t) => w.copy_from_slice(t.step(j)),
                NoiseSource::Raw(_) => {
                    let r = rng.as_mut().expect("rng present for sampled noise");
                    for wk in w.iter_mut() {
                        *wk = sd * r.sample::<f64, _>(StandardNormal);
                    }
                }
                NoiseSource::Physical(_) => {
                    let r = rng.as_mut().expect("rng present for sampled noise");
                    let total: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum();
                    let u: f64 = r.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = dim - 1;
                    for (n, z) in coeffs.iter().enumerate() {
                        acc += z.norm_sqr();
                        if u < acc {
                            pick = n;
                            break;
                        }
                    }
                    for (k, wk) in w.iter_mut().enumerate() {
                        *wk = 2.0 * lambda * self.channels.table[(pick, k)] + sd * r.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            let mut e_max = f64::NEG_INFINITY;
            for n in 0..dim {
                let mut s = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    let d = wk - 2.0 * lambda * self.channels.table[(n, k)];
                    s += d * d;
                }
                exponents[n] = -kcoef * s;
                if coeffs[n].norm_sqr() > 0.0 && exponents[n] > e_max {
                    e_max = exponents[n];
                }
            }
            let mut norm2 = 0.0;
            for n in 0..dim {
                coeffs[n] *= (exponents[n] - e_max).exp();
                norm2 += coeffs[n].norm_sqr();
            }
            log_norm2 += 2.0 * e_max + norm2.ln();
            let scale = norm2.sqrt();
            coeffs.iter_mut().for_each(|z| *z /= scale);
            if let Some(u) = &self.half {
                apply_dense(u, &coeffs, &mut scratch);
                std::mem::swap(&mut coeffs, &mut scratch);
            }
            let (sw, sw2) = w.iter().fold((0.0, 0.0), |(a, b), x| (a + x, b + x * x));
            noise_integral += sw * dt * cell;
            log_vacuum -= sw2 * dt * cell / (2.0 * lambda);
            if let Some(rec) = recorded.as_mut() {
                rec.extend_from_slice(&w);
            }
            if let Some(every) = options.checkpoint_every {
                if every > 0 && (j + 1) % every == 0 {
                    checkpoints.push(Checkpoint {
                        step: j + 1,
                        time: (j + 1) as f64 * dt,
                        state: self.state_from(&coeffs)?,
                        log_norm2,
                        log_vacuum,
                    });
                }
            }
        }
        if !log_norm2.is_finite() && log_norm2 != f64::NEG_INFINITY {
            return Err(invalid("trajectory", "squared norm became non-finite"));
        }
        let trajectory = TrajectoryRef {
            grid,
            sites: nch,
            cell,
            measure,
            seed,
        };
        let noise = match recorded {
            Some(values) => Some(NoiseTrajectory::from_values(grid, nch, cell, values, measure, seed)?),
            None => None,
        };
        let run = CslRun {
            state: self.state_from(&coeffs)?,
            log_norm2,
            log_vacuum,
            noise_integral,
            deweighted: log_norm2 < DEWEIGHT_LOG_NORM2,
            trajectory,
            checkpoints,
        };
        Ok((run, noise))
    }

    fn state_from(&self, coeffs: &[C64]) -> Result<StateVector> {
        let v = CVector::from_column_slice(coeffs);
        StateVector::normalize_from(self.channels.from_eigenbasis(&v))
    }
}

fn apply_dense(u: &CMatrix, x: &[C64], out: &mut [C64]) {
    let n = x.len();
    out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
    for (j, xj) in x.iter().enumerate() {
        if xj.re == 0.0 && xj.im == 0.0 {
            continue;
        }
        let col = u.column(j);
        for i in 0..n {
            out[i] += col[i] * xj;
        }
    }
}

/// Evolves `phi` under the CSL equation for the given single-channel noise.
pub fn evolve_csl(
    phi: &StateVector,
    a: &HermitianOperator,
    h: &HermitianOperator,
    traj: &NoiseTrajectory,
    lambda: f64,
) -> Result<CslRun> {
    if a.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            context: "state vs collapse operator",
            expected: a.dim(),
            got: phi.dim(),
        });
    }
    let stepper = SplitStepper::new(CollapseChannels::from_operator(a)?, h, traj.grid.dt(), lambda)?;
    Ok(stepper.evolve(phi, NoiseSource::Given(traj), traj.grid, &EvolveOptions::default())?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Physical measure, each run has weight 1.
    Physical,
    /// Vacuum measure, each run carries its importance weight.
    Raw,
}

impl Sampler {
    pub fn tag(self) -> MeasureTag {
        match self {
            Sampler::Physical => MeasureTag::Physical,
            Sampler::Raw => MeasureTag::Raw,
        }
    }
}

/// Runs `count` independent trajectories in parallel; run `i` uses stream
/// `(master_seed, i)`. Output order is the stream order.
pub fn simulate_runs(
    stepper: &SplitStepper,
    phi: &StateVector,
    grid: TimeGrid,
    sampler: Sampler,
    master_seed: u64,
    count: usize,
    checkpoint_every: Option<usize>,
) -> Result<Vec<CslRun>> {
    let options = EvolveOptions {
        checkpoint_every,
        record_noise: false,
    };
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = StreamSeed::new(master_seed, i);
            let source = match sampler {
                Sampler::Physical => NoiseSource::Physical(seed),
                Sampler::Raw => NoiseSource::Raw(seed),
            };
            stepper.evolve(phi, source, grid, &options).map(|(r, _)| r)
        })
        .collect()
}

/// Minimum trajectory count accepted by [`run_collapse_ensemble`].
pub const MIN_ENSEMBLE: usize = 100;

#[derive(Debug, Clone)]
pub struct CollapseEnsembleConfig {
    /// Amplitudes in the eigenbasis of the (diagonal) collapse operator.
    pub alpha: Vec<C64>,
    pub a: Vec<f64>,
    pub hamiltonian: Option<HermitianOperator>,
    pub lambda: f64,
    pub grid: TimeGrid,
    pub trajectories: usize,
    pub sampler: Sampler,
    pub master_seed: u64,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReference {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sd: f64,
}

impl MixtureReference {
    pub fn pdf(&self, x: f64) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * normal_pdf(x, *m, self.sd)).sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * normal_cdf(x, *m, self.sd)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Weighted empirical density per bin.
    pub density: Vec<f64>,
    /// Reference mixture density at the bin centers.
    pub mixture: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: usize,
    pub seed: StreamSeed,
    pub outcome: usize,
    pub tie: bool,
    pub log_norm2: f64,
    pub log_weight: f64,
    pub a_statistic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseStatistics {
    /// Distinct eigenvalues, ascending; outcome `n` means `outcomes[n]`.
    pub outcomes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub ties: usize,
    pub reference: MixtureReference,
    pub histogram: Histogram,
    pub ks: KsOutcome,
    pub effective_samples: f64,
    pub records: Vec<TrajectoryRecord>,
}

impl CollapseStatistics {
    /// Expected outcome probabilities `sum |alpha_n|^2` per distinct eigenvalue.
    pub fn born_probabilities(&self) -> &[f64] {
        &self.reference.weights
    }

    pub fn write_summary_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        writeln!(out, "trajectory,master_seed,stream,outcome,log_norm2,a_statistic")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.id, r.seed.master, r.seed.stream, self.outcomes[r.outcome], r.log_norm2, r.a_statistic
            )?;
        }
        Ok(())
    }
}

/// Index of the nearest outcome; ties go to the smaller `|a|` and are flagged.
pub fn nearest_outcome(outcomes: &[f64], x: f64) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (n, a) in outcomes.iter().enumerate().skip(1) {
        let d_new = (x - a).abs();
        let d_best = (x - outcomes[best]).abs();
        let scale = 1e-12 * (1.0 + x.abs());
        if d_new < d_best - scale {
            best = n;
            tie = false;
        } else if (d_new - d_best).abs() <= scale {
            tie = true;
            if a.abs() < outcomes[best].abs() {
                best = n;
            }
        }
    }
    (best, tie)
}

pub fn run_collapse_ensemble(config: &CollapseEnsembleConfig) -> Result<CollapseStatistics> {
    if config.trajectories < MIN_ENSEMBLE {
        return Err(Error::InsufficientSamples {
            got: config.trajectories,
            required: MIN_ENSEMBLE,
        });
    }
    if config.alpha.len() != config.a.len() {
        return Err(Error::DimensionMismatch {
            context: "amplitudes vs eigenvalues",
            expected: config.a.len(),
            got: config.alpha.len(),
        });
    }
    if config.bins == 0 {
        return Err(invalid("bins", "need at least one histogram bin"));
    }
    let phi = StateVector::normalized(CVector::from_column_slice(&config.alpha))?;
    let a_op = HermitianOperator::diagonal(&config.a);
    let h = config
        .hamiltonian
        .clone()
        .unwrap_or_else(|| HermitianOperator::zeros(config.a.len()));
    let stepper = SplitStepper::new(CollapseChannels::from_operator(&a_op)?, &h, config.grid.dt(), config.lambda)?;
    let runs = simulate_runs(&stepper, &phi, config.grid, config.sampler, config.master_seed, config.trajectories, None)?;

    let mut outcomes = config.a.clone();
    outcomes.sort_by(f64::total_cmp);
    outcomes.dedup();
    let mut born = vec![0.0; outcomes.len()];
    for (al, a) in config.alpha.iter().zip(&config.a) {
        let k = outcomes.iter().position(|x| x == a).expect("eigenvalue present");
        born[k] += al.norm_sqr();
    }
    let t = config.grid.t_final();
    let reference = MixtureReference {
        weights: born,
        means: outcomes.clone(),
        sd: (4.0 * config.lambda * t).powf(-0.5),
    };

    let mut records = Vec::with_capacity(runs.len());
    let mut values = Vec::with_capacity(runs.len());
    let mut weights = Vec::with_capacity(runs.len());
    for (id, run) in runs.iter().enumerate() {
        let a_stat = run.a_statistic(config.lambda);
        let (outcome, tie) = nearest_outcome(&outcomes, a_stat);
        let log_weight = match config.sampler {
            Sampler::Physical => 0.0,
            Sampler::Raw => run.weight().log_weight,
        };
        records.push(TrajectoryRecord {
            id,
            seed: run.trajectory.seed,
            outcome,
            tie,
            log_norm2: run.log_norm2,
            log_weight,
            a_statistic: a_stat,
        });
        values.push(a_stat);
        weights.push(log_weight.exp());
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(invalid("trajectories", "ensemble weights are degenerate"));
    }
    let mut frequencies = vec![0.0; outcomes.len()];
    for (r, w) in records.iter().zip(&weights) {
        frequencies[r.outcome] += w;
    }
    frequencies.iter_mut().for_each(|f| *f /= total);
    let ties = records.iter().filter(|r| r.tie).count();

    let lo = outcomes[0] - 5.0 * reference.sd;
    let hi = outcomes[outcomes.len() - 1] + 5.0 * reference.sd;
    let width = (hi - lo) / config.bins as f64;
    let edges: Vec<f64> = (0..=config.bins).map(|i| lo + i as f64 * width).collect();
    let mut density = vec![0.0; config.bins];
    for (x, w) in values.iter().zip(&weights) {
        let b = ((x - lo) / width).floor();
        if b >= 0.0 && (b as usize) < config.bins {
            density[b as usize] += w / (total * width);
        }
    }
    let histogram = Histogram {
        mixture: edges.windows(2).map(|e| reference.pdf(0.5 * (e[0] + e[1]))).collect(),
        edges,
        density,
    };
    let ks = ks_test_weighted(&values, &weights, |x| reference.cdf(x));
    let effective_samples = total * total / weights.iter().map(|w| w * w).sum::<f64>();
    Ok(CollapseStatistics {
        outcomes,
        frequencies,
        ties,
        reference,
        histogram,
        ks,
        effective_samples,
        records,
    })
}
