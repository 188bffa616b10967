//! Ensemble density matrix: closed form for commuting dynamics, the
//! collapse master equation, and Monte Carlo averages over runs.

use nalgebra::DMatrix;

use crate::dynamics::{CollapseChannels, CslRun};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, CMatrix, DensityMatrix, HermitianOperator, StateVector, C64};
use crate::noise::MeasureTag;
use crate::stats::BATCHES;

/// Step-halving must change the output by less than this.
pub const HALVING_TOL: f64 = 1e-8;
/// Eigenvalue floor accepted for integrator output.
pub const SOLVER_EIG_FLOOR: f64 = -1e-8;

/// `rho_nm = alpha_n alpha_m^* exp(-(lambda t / 2)(a_n - a_m)^2)`.
pub fn density_closed_form(alpha: &[C64], a: &[f64], lambda: f64, t: f64) -> Result<DensityMatrix> {
    if alpha.len() != a.len() {
        return Err(Error::DimensionMismatch {
            context: "amplitudes vs eigenvalues",
            expected: a.len(),
            got: alpha.len(),
        });
    }
    let norm: f64 = alpha.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized {
            deviation: (norm - 1.0).abs(),
        });
    }
    if lambda < 0.0 || t < 0.0 {
        return Err(invalid("lambda/t", "must be non-negative"));
    }
    let n = a.len();
    let m = CMatrix::from_fn(n, n, |i, j| {
        alpha[i] * alpha[j].conj() * (-(lambda * t / 2.0) * (a[i] - a[j]).powi(2)).exp()
    });
    DensityMatrix::new(m)
}

/// Parameters of a master-equation integration.
#[derive(Debug, Clone)]
pub struct MasterEvolutionSpec {
    /// Commuting collapse operators (one for the single-operator model).
    pub collapse: CollapseChannels,
    pub hamiltonian: HermitianOperator,
    pub lambda: f64,
    pub horizon: f64,
    pub dt_ode: f64,
}

impl MasterEvolutionSpec {
    pub fn new(a: &HermitianOperator, h: &HermitianOperator, lambda: f64, horizon: f64, dt_ode: f64) -> Result<Self> {
        Ok(Self {
            collapse: CollapseChannels::from_operator(a)?,
            hamiltonian: h.clone(),
            lambda,
            horizon,
            dt_ode,
        })
    }
}

#[derive(Debug, Clone)]
enum Generator {
    Zero,
    Sparse(Vec<(usize, usize, C64)>),
    Dense(CMatrix),
}

impl Generator {
    fn from_matrix(m: &CMatrix) -> Self {
        let n = m.nrows();
        let entries: Vec<(usize, usize, C64)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = m[(i, j)];
                (v.norm() > 0.0).then_some((i, j, v))
            })
            .collect();
        if entries.is_empty() {
            Generator::Zero
        } else if entries.len() * 4 <= n * n {
            Generator::Sparse(entries)
        } else {
            Generator::Dense(m.clone())
        }
    }

    /// `out = -i [H, rho]`.
    fn commutator(&self, rho: &CMatrix, out: &mut CMatrix) {
        let minus_i = c(0.0, -1.0);
        match self {
            Generator::Zero => out.fill(C64::default()),
            Generator::Dense(h) => {
                let comm = h * rho - rho * h;
                out.copy_from(&(comm * minus_i));
            }
            Generator::Sparse(entries) => {
                out.fill(C64::default());
                let n = rho.nrows();
                for &(i, k, h) in entries {
                    // (H rho)_{i j} += h rho_{k j};  (rho H)_{j k} += rho_{j i} h
                    for j in 0..n {
                        out[(i, j)] += minus_i * h * rho[(k, j)];
                        out[(j, k)] -= minus_i * rho[(j, i)] * h;
                    }
                }
            }
        }
    }
}

/// Master-equation integrator prepared in the collapse eigenbasis, where
/// the dissipator is the elementwise damping `-Gamma o rho` with
/// `Gamma_nm = (lambda/2) sum_k cell (a_nk - a_mk)^2`.
#[derive(Debug, Clone)]
pub struct MasterSolver {
    basis: Option<CMatrix>,
    h_tilde: CMatrix,
    generator: Generator,
    gamma: DMatrix<f64>,
    lambda: f64,
    horizon: f64,
    dt_ode: f64,
}

/// Densities along a master-equation integration, stored in the collapse
/// eigenbasis.
#[derive(Debug, Clone)]
pub struct MasterSolution {
    pub times: Vec<f64>,
    states: Vec<CMatrix>,
    basis: Option<CMatrix>,
    /// Largest entry change of the final density under step halving.
    pub halving_change: f64,
    pub step: f64,
}

impl MasterSolution {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Density at record `i` in the original basis.
    pub fn density(&self, i: usize) -> CMatrix {
        rotate_out(&self.basis, &self.states[i])
    }

    /// `Tr[rho_i M~]` for an operator already in the collapse eigenbasis.
    pub fn expectation_eigenbasis(&self, i: usize, op: &CMatrix) -> C64 {
        crate::linalg::trace_product(&self.states[i], op)
    }

    pub fn final_density(&self) -> CMatrix {
        self.density(self.states.len() - 1)
    }
}

fn rotate_out(basis: &Option<CMatrix>, m: &CMatrix) -> CMatrix {
    match basis {
        Some(v) => v * m * v.adjoint(),
        None => m.clone(),
    }
}

fn rotate_in(basis: &Option<CMatrix>, m: &CMatrix) -> CMatrix {
    match basis {
        Some(v) => v.adjoint() * m * v,
        None => m.clone(),
    }
}

impl MasterSolver {
    pub fn new(spec: &MasterEvolutionSpec) -> Result<Self> {
        if !(spec.lambda >= 0.0) || !spec.lambda.is_finite() {
            return Err(invalid("lambda", "collapse rate must be non-negative"));
        }
        if !(spec.horizon >= 0.0) {
            return Err(invalid("horizon", "must be non-negative"));
        }
        if !(spec.dt_ode > 0.0) {
            return Err(invalid("dt_ode", "must be positive"));
        }
        if spec.hamiltonian.dim() != spec.collapse.dim() {
            return Err(Error::DimensionMismatch {
                context: "hamiltonian vs collapse operator",
                expected: spec.collapse.dim(),
                got: spec.hamiltonian.dim(),
            });
        }
        let basis = spec.collapse.basis().cloned();
        let h_tilde = rotate_in(&basis, spec.hamiltonian.matrix());
        Ok(Self {
            generator: Generator::from_matrix(&h_tilde),
            h_tilde,
            gamma: spec.collapse.decoherence_table() * spec.lambda,
            basis,
            lambda: spec.lambda,
            horizon: spec.horizon,
            dt_ode: spec.dt_ode,
        })
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Expresses an operator in the collapse eigenbasis.
    pub fn to_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        rotate_in(&self.basis, m)
    }

    pub fn hamiltonian_eigenbasis(&self) -> &CMatrix {
        &self.h_tilde
    }

    /// `Gamma o H~`, which equals `(lambda/2) sum_k cell [A_k, [A_k, H]]`
    /// in the collapse eigenbasis.
    pub fn heating_operator(&self) -> CMatrix {
        let n = self.dim();
        CMatrix::from_fn(n, n, |i, j| self.h_tilde[(i, j)] * self.gamma[(i, j)])
    }

    fn rhs(&self, rho: &CMatrix, out: &mut CMatrix) {
        self.generator.commutator(rho, out);
        let n = rho.nrows();
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] -= rho[(i, j)] * self.gamma[(i, j)];
            }
        }
    }

    fn integrate(&self, rho0: &CMatrix, steps: usize, record_every: usize) -> (Vec<f64>, Vec<CMatrix>) {
        let h = if steps == 0 { 0.0 } else { self.horizon / steps as f64 };
        let n = rho0.nrows();
        let mut rho = rho0.clone();
        let mut k1 = CMatrix::zeros(n, n);
        let mut k2 = CMatrix::zeros(n, n);
        let mut k3 = CMatrix::zeros(n, n);
        let mut k4 = CMatrix::zeros(n, n);
        let mut times = vec![0.0];
        let mut states = vec![rho.clone()];
        let half = c(0.5 * h, 0.0);
        let full = c(h, 0.0);
        let sixth = c(h / 6.0, 0.0);
        for s in 0..steps {
            self.rhs(&rho, &mut k1);
            self.rhs(&(&rho + &k1 * half), &mut k2);
            self.rhs(&(&rho + &k2 * half), &mut k3);
            self.rhs(&(&rho + &k3 * full), &mut k4);
            rho += (&k1 + (&k2 + &k3) * c(2.0, 0.0) + &k4) * sixth;
            if (s + 1) % record_every == 0 || s + 1 == steps {
                times.push((s + 1) as f64 * h);
                states.push(rho.clone());
            }
        }
        (times, states)
    }

    /// Integrates from `rho0`, recording every `record_every` steps and at
    /// the horizon. Refuses if halving the step changes the final density
    /// by more than [`HALVING_TOL`].
    pub fn solve(&self, rho0: &DensityMatrix, record_every: usize) -> Result<MasterSolution> {
        if rho0.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "initial density vs collapse operator",
                expected: self.dim(),
                got: rho0.dim(),
            });
        }
        let steps = if self.horizon == 0.0 {
            0
        } else {
            (self.horizon / self.dt_ode - 1e-9).ceil().max(1.0) as usize
        };
        let start = self.to_eigenbasis(rho0.matrix());
        let (times, states) = self.integrate(&start, steps, record_every.max(1));
        let (_, fine) = self.integrate(&start, 2 * steps, usize::MAX);
        let last = states.last().expect("at least the initial state");
        let change = crate::linalg::max_abs_diff(last, fine.last().expect("final state"));
        if !change.is_finite() || change > HALVING_TOL {
            return Err(Error::StepTooLarge {
                change,
                limit: HALVING_TOL,
            });
        }
        Ok(MasterSolution {
            times,
            states,
            basis: self.basis.clone(),
            halving_change: change,
            step: if steps == 0 { 0.0 } else { self.horizon / steps as f64 },
        })
    }
}

/// Integrates `d rho/dt = -i[H, rho] - (lambda/2)[A, [A, rho]]` to the
/// horizon.
pub fn density_master(rho0: &DensityMatrix, spec: &MasterEvolutionSpec) -> Result<DensityMatrix> {
    let sol = MasterSolver::new(spec)?.solve(rho0, usize::MAX)?;
    DensityMatrix::with_floor(sol.final_density(), SOLVER_EIG_FLOOR)
}

/// Monte Carlo ensemble density with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloDensity {
    pub mean: CMatrix,
    /// Standard error per entry (modulus of the complex error).
    pub stderr: DMatrix<f64>,
    pub runs: usize,
}

impl MonteCarloDensity {
    /// `sqrt(sum_ij se_ij^2)`: the standard error scale of a Frobenius distance.
    pub fn aggregate_stderr(&self) -> f64 {
        self.stderr.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Minimum number of runs for a Monte Carlo density.
pub const MIN_RUNS: usize = 100;

/// Weighted average of `|psi><psi|` over final states. Physical runs carry
/// weight 1; raw runs carry their importance weight relative to the vacuum.
pub fn density_monte_carlo(runs: &[CslRun], tag: MeasureTag) -> Result<MonteCarloDensity> {
    check_runs(runs, tag)?;
    let items: Vec<(&StateVector, f64)> = runs.iter().map(|r| (&r.state, weight_log(tag, r.log_norm2, r.log_vacuum))).collect();
    weighted_density(&items)
}

/// As [`density_monte_carlo`] at checkpoint `index` of every run.
pub fn density_monte_carlo_at(runs: &[CslRun], tag: MeasureTag, index: usize) -> Result<MonteCarloDensity> {
    check_runs(runs, tag)?;
    let mut items = Vec::with_capacity(runs.len());
    for r in runs {
        let cp = r
            .checkpoints
            .get(index)
            .ok_or_else(|| invalid("checkpoint", format!("run has no checkpoint {index}")))?;
        items.push((&cp.state, weight_log(tag, cp.log_norm2, cp.log_vacuum)));
    }
    weighted_density(&items)
}

fn weight_log(tag: MeasureTag, log_norm2: f64, log_vacuum: f64) -> f64 {
    match tag {
        MeasureTag::Physical => 0.0,
        MeasureTag::Raw => log_norm2 - log_vacuum,
    }
}

fn check_runs(runs: &[CslRun], tag: MeasureTag) -> Result<()> {
    if runs.len() < MIN_RUNS {
        return Err(Error::InsufficientSamples {
            got: runs.len(),
            required: MIN_RUNS,
        });
    }
    if runs.iter().any(|r| r.trajectory.measure != tag) {
        return Err(Error::MixedMeasures);
    }
    let d = runs[0].state.dim();
    if let Some(bad) = runs.iter().find(|r| r.state.dim() != d) {
        return Err(Error::DimensionMismatch {
            context: "run dimensions",
            expected: d,
            got: bad.state.dim(),
        });
    }
    Ok(())
}

fn weighted_density(items: &[(&StateVector, f64)]) -> Result<MonteCarloDensity> {
    let n = items[0].0.dim();
    let shift = items.iter().map(|(_, lw)| *lw).fold(f64::NEG_INFINITY, f64::max);
    let accumulate = |range: &[(&StateVector, f64)]| -> (CMatrix, f64) {
        let mut m = CMatrix::zeros(n, n);
        let mut wsum = 0.0;
        for (s, lw) in range {
            let w = (lw - shift).exp();
            let v = s.amplitudes();
            for j in 0..n {
                let vj = v[j].conj() * w;
                for i in 0..n {
                    m[(i, j)] += v[i] * vj;
                }
            }
            wsum += w;
        }
        (m, wsum)
    };
    let (total, wsum) = accumulate(items);
    if !(wsum > 0.0) {
        return Err(invalid("runs", "all weights vanish"));
    }
    let mean = total.unscale(wsum);
    let len = items.len();
    let batch: Vec<CMatrix> = (0..BATCHES)
        .map(|b| {
            let (m, w) = accumulate(&items[b * len / BATCHES..(b + 1) * len / BATCHES]);
            if w > 0.0 {
                m.unscale(w)
            } else {
                mean.clone()
            }
        })
        .collect();
    let stderr = DMatrix::from_fn(n, n, |i, j| {
        let var: f64 = batch.iter().map(|m| (m[(i, j)] - mean[(i, j)]).norm_sqr()).sum::<f64>() / (BATCHES - 1) as f64;
        (var / BATCHES as f64).sqrt()
    });
    Ok(MonteCarloDensity {
        mean,
        stderr,
        runs: len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_runs, Sampler, SplitStepper};
    use crate::linalg::{frobenius_distance, hermitian_deviation, max_abs_diff, unitary_propagator};
    use crate::noise::TimeGrid;
    use crate::rng::StreamSeed;

    fn amps(v: &[f64]) -> Vec<C64> {
        v.iter().map(|x| c(*x, 0.0)).collect()
    }

    #[test]
    fn closed_form_limits() {
        let s = 0.5f64.sqrt();
        let rho = density_closed_form(&amps(&[s, s]), &[0.0, 1.0], 1.0, 2.0).unwrap();
        assert!((rho.matrix()[(0, 1)].re - 0.5 * (-1f64).exp()).abs() < 1e-15);
        assert!((rho.matrix()[(0, 1)].re - 0.18394).abs() < 1e-5);
        let rho0 = density_closed_form(&amps(&[s, s]), &[0.0, 1.0], 1.0, 0.0).unwrap();
        assert!((rho0.purity() - 1.0).abs() < 1e-14);
        let inf = density_closed_form(&amps(&[0.6, 0.8]), &[0.0, 1.0], 1.0, 1e4).unwrap();
        assert_eq!(inf.matrix()[(0, 1)].norm(), 0.0);
        assert!((inf.matrix()[(1, 1)].re - 0.64).abs() < 1e-15);
        assert!(density_closed_form(&amps(&[1.0, 1.0]), &[0.0, 1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn master_matches_closed_form() {
        let alpha = [c(0.6, 0.0), c(0.0, 0.8)];
        let a = HermitianOperator::diagonal(&[0.0, 1.0]);
        let phi = StateVector::normalized(nalgebra::DVector::from_column_slice(&alpha)).unwrap();
        let spec = MasterEvolutionSpec::new(&a, &HermitianOperator::zeros(2), 1.3, 3.0, 0.01).unwrap();
        let rho = density_master(&DensityMatrix::pure(&phi), &spec).unwrap();
        let exact = density_closed_form(&alpha, &[0.0, 1.0], 1.3, 3.0).unwrap();
        assert!(frobenius_distance(rho.matrix(), exact.matrix()) < 1e-8);
    }

    #[test]
    fn master_non_diagonal_collapse_operator() {
        // A = sigma_x, H = 0: decoherence in the sigma_x eigenbasis
        let a = HermitianOperator::pauli_x();
        let phi = StateVector::basis(2, 0);
        let spec = MasterEvolutionSpec::new(&a, &HermitianOperator::zeros(2), 0.5, 2.0, 0.01).unwrap();
        let rho = density_master(&DensityMatrix::pure(&phi), &spec).unwrap();
        // eigenvalues +-1, gap 2: coherence factor exp(-(lambda t/2) 4)
        let f = (-(0.5 * 2.0 / 2.0) * 4.0f64).exp();
        let expected_z = f; // <sigma_z> = coherence between |+> and |->
        let z = rho.expectation(HermitianOperator::pauli_z().matrix()).re;
        assert!((z - expected_z).abs() < 1e-9, "{z} vs {expected_z}");
    }

    #[test]
    fn unitary_limit_preserves_purity() {
        let h = HermitianOperator::pauli_x().scaled(0.7);
        let a = HermitianOperator::pauli_z();
        let phi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let spec = MasterEvolutionSpec::new(&a, &h, 0.0, 5.0, 0.01).unwrap();
        let rho = density_master(&DensityMatrix::pure(&phi), &spec).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-10);
        let u = unitary_propagator(&h, 5.0).unwrap();
        let exact = &u * phi.outer() * u.adjoint();
        assert!(max_abs_diff(rho.matrix(), &exact) < 1e-9);
    }

    #[test]
    fn random_three_level_trace_and_positivity() {
        let mut rng = StreamSeed::new(71, 0).rng();
        let a = crate::linalg::random_hermitian(3, &mut rng);
        let h = crate::linalg::random_hermitian(3, &mut rng);
        let phi = StateVector::from_real(&[0.48, 0.6, 0.64]).unwrap();
        let spec = MasterEvolutionSpec::new(&a, &h, 0.8, 10.0, 0.005).unwrap();
        let sol = MasterSolver::new(&spec).unwrap().solve(&DensityMatrix::pure(&phi), 100).unwrap();
        for i in 0..sol.len() {
            let m = sol.density(i);
            assert!((m.trace().re - 1.0).abs() < 1e-10);
            assert!(hermitian_deviation(&m) < 1e-12);
            assert!(DensityMatrix::with_floor(m, SOLVER_EIG_FLOOR).is_ok());
        }
    }

    #[test]
    fn coarse_step_refused() {
        let h = HermitianOperator::pauli_x().scaled(20.0);
        let a = HermitianOperator::pauli_z();
        let spec = MasterEvolutionSpec::new(&a, &h, 1.0, 2.0, 0.1).unwrap();
        let r = density_master(&DensityMatrix::pure(&StateVector::basis(2, 0)), &spec);
        assert!(matches!(r, Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn decoherence_rate_doubles_with_lambda() {
        let alpha = amps(&[0.6, 0.8]);
        let rate = |lambda: f64| {
            let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
            let ys: Vec<f64> = ts
                .iter()
                .map(|t| density_closed_form(&alpha, &[0.0, 1.0], lambda, *t).unwrap().matrix()[(0, 1)].norm().ln())
                .collect();
            -crate::stats::linear_slope(&ts, &ys)
        };
        assert!((rate(2.0) / rate(1.0) - 2.0).abs() < 1e-6 * 2.0);
    }

    #[test]
    fn monte_carlo_preconditions() {
        let a = HermitianOperator::diagonal(&[0.0, 1.0]);
        let phi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let stepper = SplitStepper::new(CollapseChannels::from_operator(&a).unwrap(), &HermitianOperator::zeros(2), 0.1, 1.0).unwrap();
        let grid = TimeGrid::new(0.1, 5).unwrap();
        let runs = simulate_runs(&stepper, &phi, grid, Sampler::Physical, 1, 1, None).unwrap();
        assert!(matches!(density_monte_carlo(&runs, MeasureTag::Physical), Err(Error::InsufficientSamples { .. })));
        let mut runs = simulate_runs(&stepper, &phi, grid, Sampler::Physical, 1, 150, None).unwrap();
        runs.extend(simulate_runs(&stepper, &phi, grid, Sampler::Raw, 2, 10, None).unwrap());
        assert!(matches!(density_monte_carlo(&runs, MeasureTag::Physical), Err(Error::MixedMeasures)));
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let alpha = amps(&[0.6, 0.8]);
        let a = HermitianOperator::diagonal(&[0.0, 1.0]);
        let phi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let lambda = 0.5;
        let stepper = SplitStepper::new(CollapseChannels::from_operator(&a).unwrap(), &HermitianOperator::zeros(2), 0.05, lambda).unwrap();
        let grid = TimeGrid::new(0.05, 40).unwrap();
        let runs = simulate_runs(&stepper, &phi, grid, Sampler::Physical, 3, 10_000, None).unwrap();
        let mc = density_monte_carlo(&runs, MeasureTag::Physical).unwrap();
        let exact = density_closed_form(&alpha, &[0.0, 1.0], lambda, 2.0).unwrap();
        let d = frobenius_distance(&mc.mean, exact.matrix());
        assert!(d < 5.0 * mc.aggregate_stderr(), "{d} vs {}", mc.aggregate_stderr());
    }
}
