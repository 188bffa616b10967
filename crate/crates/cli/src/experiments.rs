use csl_core::density::{density_closed_form, density_master, density_monte_carlo, MasterEvolutionSpec};
use csl_core::dynamics::{run_collapse_ensemble, simulate_runs, Checkpoint, CollapseChannels, CollapseEnsembleConfig, SplitStepper};
use csl_core::energy::{
    dist_total_diag, dist_w_diag, energy_balance, first_moment, invert_hermitian, symmetric_grid, charfn_total_diag,
};
use csl_core::io::{
    distribution_sidecar, write_charfn_csv, write_checkpoint, write_columns, write_density_csv, write_distribution_csv,
    RunMetadata,
};
use csl_core::linalg::{c, frobenius_distance, DensityMatrix};
use csl_core::models::fields::{discrete_mode_commutator_check, field_mapping_constants};
use csl_core::models::spins::{
    audit_parameters, gaussian_tv_distance, sample_spin_blocks, spin_block_distribution, spin_block_gaussian_log_pmf,
    MIN_EQUIVALENCE_SPINS,
};
use csl_core::models::PhysicalConstants;
use csl_core::noise::TimeGrid;
use csl_core::stats::{binomial_sigma, ks_pvalue, ks_statistic_discrete};
use csl_core::timeop::{
    center_of_time, charfn_t_diag, fractional_deviation_t, mean_t, second_moment_t, variance_t, TimeOpSpec,
};
use serde_json::json;

use crate::config::{ExperimentConfig, Kind};
use crate::error::CliError;
use crate::record::{Checks, OutputSet};

pub struct Outcome {
    pub checks: Checks,
    pub summary: serde_json::Value,
}

pub fn run(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Outcome, CliError> {
    let mut checks = Checks::new(cfg.tolerance_scale);
    let summary = match cfg.kind {
        Kind::Collapse => collapse(cfg, out, &mut checks)?,
        Kind::Density => density(cfg, out, &mut checks)?,
        Kind::Energy => energy(cfg, out, &mut checks)?,
        Kind::Timeop => timeop(cfg, out, &mut checks)?,
        Kind::Spins => spins(cfg, out, &mut checks)?,
        Kind::Fields => fields(cfg, out, &mut checks)?,
        Kind::Audit => audit(cfg, out, &mut checks)?,
    };
    Ok(Outcome { checks, summary })
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| CliError::Config(format!("missing section `{name}`")))
}

fn collapse(cfg: &ExperimentConfig, out: &mut OutputSet, checks: &mut Checks) -> Result<serde_json::Value, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let sec = section(&cfg.collapse, "collapse")?;
    let stats = run_collapse_ensemble(&CollapseEnsembleConfig {
        alpha: model.amplitudes(),
        a: model.a.clone(),
        hamiltonian: model.hamiltonian.as_ref().map(|_| model.hamiltonian()),
        lambda: model.lambda,
        grid: TimeGrid::new(grid.dt, grid.steps)?,
        trajectories: grid.trajectories,
        sampler: sec.sampler,
        master_seed: cfg.master_seed,
        bins: sec.bins,
    })?;
    let born = stats.born_probabilities().to_vec();
    for (n, (f, p)) in stats.frequencies.iter().zip(&born).enumerate() {
        let sigma = binomial_sigma(*p, grid.trajectories);
        let z = if sigma > 0.0 { (f - p).abs() / sigma } else { (f - p).abs() * f64::INFINITY };
        checks.at_most(format!("outcome {n} frequency deviation in sigmas"), if z.is_nan() { 0.0 } else { z }, 3.0);
    }
    checks.at_least("KS p-value", stats.ks.p_value, 0.01);
    out.put_with("outcomes", "outcomes.csv", |w| {
        write_columns(&["outcome", "frequency", "born"], &[&stats.outcomes, &stats.frequencies, &born], w)
    })?;
    let centers = stats.histogram.centers();
    out.put_with("histogram", "histogram.csv", |w| {
        write_columns(&["center", "empirical", "mixture"], &[&centers, &stats.histogram.density, &stats.histogram.mixture], w)
    })?;
    let mut traj = String::from("id,stream,outcome,tie,log_norm2,log_weight,a_statistic\n");
    for r in &stats.records {
        traj.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.id, r.seed.stream, r.outcome, r.tie, r.log_norm2, r.log_weight, r.a_statistic
        ));
    }
    out.put("trajectories", "trajectories.csv", traj.as_bytes())?;
    Ok(json!({
        "outcomes": stats.outcomes,
        "frequencies": stats.frequencies,
        "born": born,
        "ties": stats.ties,
        "effective_samples": stats.effective_samples,
        "ks": stats.ks,
        "reference": stats.reference,
    }))
}

fn density(cfg: &ExperimentConfig, out: &mut OutputSet, checks: &mut Checks) -> Result<serde_json::Value, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let sec = section(&cfg.density, "density")?;
    let phi = model.state()?;
    let a = model.collapse_operator();
    let h = model.hamiltonian();
    let horizon = grid.dt * grid.steps as f64;
    let master = density_master(
        &DensityMatrix::pure(&phi),
        &MasterEvolutionSpec::new(&a, &h, model.lambda, horizon, sec.dt_ode)?,
    )?;
    out.put_with("master", "density_master.csv", |w| write_density_csv(master.matrix(), w))?;

    let time_grid = TimeGrid::new(grid.dt, grid.steps)?;
    let stepper = SplitStepper::new(CollapseChannels::from_operator(&a)?, &h, grid.dt, model.lambda)?;
    let runs = simulate_runs(&stepper, &phi, time_grid, sec.sampler, cfg.master_seed, grid.trajectories, None)?;
    let mc = density_monte_carlo(&runs, sec.sampler.tag())?;
    out.put_with("monte_carlo", "density_mc.csv", |w| write_density_csv(&mc.mean, w))?;
    let stderr = mc.stderr.map(|x| c(x, 0.0));
    out.put_with("monte_carlo_stderr", "density_mc_stderr.csv", |w| write_density_csv(&stderr, w))?;

    let reference = if model.hamiltonian.is_none() {
        let closed = density_closed_form(&model.amplitudes(), &model.a, model.lambda, horizon)?;
        out.put_with("closed_form", "density_closed.csv", |w| write_density_csv(closed.matrix(), w))?;
        checks.at_most("master vs closed form, Frobenius", frobenius_distance(master.matrix(), closed.matrix()), 1e-8);
        closed
    } else {
        master.clone()
    };
    let err = mc.aggregate_stderr();
    checks.at_most(
        "Monte Carlo vs reference in standard errors",
        frobenius_distance(&mc.mean, reference.matrix()) / err,
        5.0,
    );

    let first = &runs[0];
    let cp = Checkpoint {
        step: grid.steps,
        time: horizon,
        state: first.state.clone(),
        log_norm2: first.log_norm2,
        log_vacuum: first.log_vacuum,
    };
    out.put_with("final_state_0", "final_state_0.bin", |w| write_checkpoint(&cp, w))?;
    out.put_json("run_0", "run_0.json", &RunMetadata::of(first))?;
    Ok(json!({
        "horizon": horizon,
        "runs": mc.runs,
        "aggregate_stderr": err,
        "master_purity": master.purity(),
    }))
}

fn energy(cfg: &ExperimentConfig, out: &mut OutputSet, checks: &mut Checks) -> Result<serde_json::Value, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let sec = section(&cfg.energy, "energy")?;
    let alpha = model.amplitudes();
    let e_grid = symmetric_grid(sec.e_max, sec.points);
    let t = grid.dt * grid.steps as f64;

    let total = dist_total_diag(&alpha, &model.a, model.lambda, &e_grid)?;
    let weights: Vec<f64> = alpha.iter().map(|z| z.norm_sqr()).collect();
    let f = |b: f64| {
        c(
            weights.iter().zip(&model.a).map(|(w, a)| w * (-0.5 * model.lambda * a * a * b.abs()).exp()).sum(),
            0.0,
        )
    };
    let inverted = invert_hermitian(f, sec.beta_max, sec.half_steps, &e_grid)?;
    let sup = inverted.iter().zip(&total.density).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    checks.at_most("total-energy inversion vs closed form, sup", sup, 1e-3);
    checks.at_most("total-energy mass deviation from 1", (total.total_mass() - 1.0).abs(), 0.01);
    out.put_with("total", "energy_total.csv", |w| write_distribution_csv(&total, Some(&inverted), w))?;
    let beta = symmetric_grid(sec.beta_max, sec.points);
    let cf = charfn_total_diag(&alpha, &model.a, model.lambda, &beta)?;
    out.put_with("total_charfn", "energy_total_charfn.csv", |w| write_charfn_csv(&cf, w))?;

    let field = dist_w_diag(&alpha, &model.a, model.lambda, t, &e_grid)?;
    checks.at_most("field-energy mass deviation from 1", (field.total_mass() - 1.0).abs(), 0.01);
    out.put_with("field", "energy_field.csv", |w| write_distribution_csv(&field, None, w))?;
    let params = json!({ "t": t, "lambda": model.lambda, "a": model.a });
    out.put_json("field_sidecar", "energy_field.json", &distribution_sidecar(&field, params))?;

    let spec = MasterEvolutionSpec::new(&model.collapse_operator(), &model.hamiltonian(), model.lambda, t, sec.dt_ode)?;
    let balance = energy_balance(&spec, &model.state()?)?;
    checks.at_most("max |<H_A> + <H_w> - E0|", balance.conservation_error(), 1e-6);
    out.put_with("balance", "energy_balance.csv", |w| {
        write_columns(&["t", "mean_ha", "mean_hw"], &[&balance.times, &balance.mean_ha, &balance.mean_hw], w)
    })?;
    Ok(json!({
        "t": t,
        "total_mass": total.total_mass(),
        "field_mass": field.total_mass(),
        "field_point_mass": field.point_mass_total(),
        "conservation_error": balance.conservation_error(),
    }))
}

fn timeop(cfg: &ExperimentConfig, out: &mut OutputSet, checks: &mut Checks) -> Result<serde_json::Value, CliError> {
    let model = cfg.model()?;
    let sec = section(&cfg.timeop, "timeop")?;
    let n = sec.times.len();
    let (mut mean, mut second, mut var, mut frac, mut from_cf, mut center) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (i, t) in sec.times.iter().enumerate() {
        let spec = match sec.s {
            Some(s) => TimeOpSpec::power_law(model.amplitudes(), model.a.clone(), model.lambda, *t, s, sec.a_scale)?,
            None => TimeOpSpec::diagonal(model.amplitudes(), model.a.clone(), model.lambda, *t)?,
        };
        mean[i] = mean_t(&spec)?;
        second[i] = second_moment_t(&spec)?;
        var[i] = variance_t(&spec)?;
        frac[i] = fractional_deviation_t(&spec)?;
        center[i] = center_of_time(sec.s.unwrap_or(0.0), *t);
        // truncation failures surface here rather than as NaN below
        charfn_t_diag(&spec, &[0.0], 1e-15)?;
        // beta is conjugate to T, whose scale is t
        let h = 0.02 / t;
        from_cf[i] = first_moment(
            |b| charfn_t_diag(&spec, &[b], 1e-15).map(|f| f.values[0]).unwrap_or(c(f64::NAN, f64::NAN)),
            h,
        );
        let gap = (from_cf[i] - mean[i]).abs() / t;
        checks.at_most(format!("t={t}: |i f'(0) - <T>| / t"), if gap.is_nan() { f64::INFINITY } else { gap }, 1e-6);
    }
    out.put_with("moments", "timeop.csv", |w| {
        write_columns(
            &["t", "mean", "mean_from_charfn", "second_moment", "variance", "fractional_deviation", "center"],
            &[&sec.times, &mean, &from_cf, &second, &var, &frac, &center],
            w,
        )
    })?;
    Ok(json!({ "times": sec.times, "mean": mean, "fractional_deviation": frac }))
}

fn spins(cfg: &ExperimentConfig, out: &mut OutputSet, checks: &mut Checks) -> Result<serde_json::Value, CliError> {
    let sec = section(&cfg.spins, "spins")?;
    let blocks = sample_spin_blocks(sec.n, sec.beta_c, sec.samples, cfg.master_seed)?;
    let (support, pmf, cdf) = spin_block_distribution(sec.n, sec.beta_c)?;
    let d = ks_statistic_discrete(&blocks, &support, &cdf);
    let p = ks_pvalue(d, sec.samples);
    checks.at_least("KS p-value of sampled block sums", p, 0.01);
    let offset = support[0];
    let mut counts = vec![0.0; support.len()];
    for s in &blocks {
        counts[((s - offset) / 2) as usize] += 1.0;
    }
    let empirical: Vec<f64> = counts.iter().map(|k| k / sec.samples as f64).collect();
    let gaussian = support
        .iter()
        .map(|s| spin_block_gaussian_log_pmf(sec.n, sec.beta_c, *s).map(f64::exp))
        .collect::<csl_core::Result<Vec<f64>>>()?;
    let tv = if sec.n >= MIN_EQUIVALENCE_SPINS {
        let tv = gaussian_tv_distance(sec.n, sec.beta_c)?;
        checks.at_most("total variation, exact vs Gaussian", tv, 0.01);
        Some(tv)
    } else {
        None
    };
    let s: Vec<f64> = support.iter().map(|x| *x as f64).collect();
    out.put_with("pmf", "spins_pmf.csv", |w| write_columns(&["s", "empirical", "exact", "gaussian"], &[&s, &empirical, &pmf, &gaussian], w))?;
    Ok(json!({ "ks_statistic": d, "ks_p_value": p, "tv_distance": tv }))
}

fn fields(cfg: &ExperimentConfig, out: &mut OutputSet, checks: &mut Checks) -> Result<serde_json::Value, CliError> {
    let sec = section(&cfg.fields, "fields")?;
    let mapping = field_mapping_constants(sec.mass, sec.lambda)?;
    let coarse = discrete_mode_commutator_check(sec.n_times, sec.n_freqs, sec.tau)?;
    let fine = discrete_mode_commutator_check(2 * sec.n_times, sec.n_freqs, sec.tau)?;
    checks.at_most("discrete Fourier deviation", coarse.dft_deviation.max(fine.dft_deviation), 1e-12);
    let ratio = coarse.continuum_deviation / fine.continuum_deviation;
    checks.at_most("|continuum deviation ratio under doubling / 2 - 1|", (ratio / 2.0 - 1.0).abs(), 0.2);
    let rows = [coarse, fine];
    let col = |f: fn(&csl_core::models::fields::CommutatorCheck) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let n_times = col(|r| r.n_times as f64);
    let span = col(|r| r.n_times as f64 * r.tau);
    let dft = col(|r| r.dft_deviation);
    let cont = col(|r| r.continuum_deviation);
    let predicted: Vec<f64> = span.iter().map(|t| 4.0 / (std::f64::consts::PI * t)).collect();
    out.put_with("commutators", "commutators.csv", |w| {
        write_columns(&["n_times", "span", "dft_deviation", "continuum_deviation", "predicted"], &[&n_times, &span, &dft, &cont, &predicted], w)
    })?;
    Ok(json!({ "mapping": mapping, "per_time_coefficient": mapping.per_time_coefficient(), "ratio": ratio }))
}

fn audit(cfg: &ExperimentConfig, out: &mut OutputSet, checks: &mut Checks) -> Result<serde_json::Value, CliError> {
    let sec = section(&cfg.audit, "audit")?;
    let constants = cfg.constants.unwrap_or_else(PhysicalConstants::default);
    let consistency = constants.consistency();
    checks.at_most("Planck-unit consistency of the constants", consistency.max(), 0.05);
    let report = audit_parameters(&constants, &sec.bath_energies_ev, sec.rho)?;
    for r in &report.rows {
        checks.at_least(format!("1/beta={:e} eV: finite log10 p", r.bath_energy_ev), if r.log10_p.is_finite() { 1.0 } else { 0.0 }, 1.0);
    }
    out.put("audit_csv", "audit.csv", report.to_csv().as_bytes())?;
    out.put("audit_text", "audit.txt", report.to_text().as_bytes())?;
    Ok(json!({ "report": report, "consistency": consistency }))
}
