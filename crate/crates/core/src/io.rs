//! File formats: CSV tables, JSON sidecars and binary state checkpoints.
//!
//! Floats are written with Rust's shortest round-trip formatting so equal
//! values always produce equal bytes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{Checkpoint, CslRun, TrajectoryRef};
use crate::energy::{CharacteristicFunction, EnergyDistribution, PointMass};
use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, CVector, StateVector};

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

/// Density matrix as CSV, one matrix row per line with real and imaginary
/// parts interleaved.
pub fn write_density_csv(rho: &CMatrix, mut out: impl Write) -> Result<()> {
    let header: Vec<String> = (0..rho.ncols()).flat_map(|j| [format!("re_{j}"), format!("im_{j}")]).collect();
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for i in 0..rho.nrows() {
        let row: Vec<String> = (0..rho.ncols())
            .flat_map(|j| [rho[(i, j)].re.to_string(), rho[(i, j)].im.to_string()])
            .collect();
        writeln!(out, "{}", row.join(",")).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_density_csv(mut input: impl Read) -> Result<CMatrix> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(io_err)?;
    let mut lines = text.lines();
    let cols = lines.next().ok_or_else(|| Error::Format("empty density file".into()))?.split(',').count();
    if cols % 2 != 0 {
        return Err(Error::Format("density header needs re/im pairs".into()));
    }
    let n = cols / 2;
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Format(format!("bad number {v:?}: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != cols {
            return Err(Error::Format(format!("row {rows} has {} fields, expected {cols}", vals.len())));
        }
        data.extend(vals.chunks(2).map(|p| c(p[0], p[1])));
        rows += 1;
    }
    if rows != n {
        return Err(Error::Format(format!("expected {n} rows, found {rows}")));
    }
    Ok(CMatrix::from_row_slice(n, n, &data))
}

/// JSON form of a density matrix with free-form metadata.
pub fn density_json(rho: &CMatrix, metadata: serde_json::Value) -> String {
    let re: Vec<Vec<f64>> = (0..rho.nrows()).map(|i| (0..rho.ncols()).map(|j| rho[(i, j)].re).collect()).collect();
    let im: Vec<Vec<f64>> = (0..rho.nrows()).map(|i| (0..rho.ncols()).map(|j| rho[(i, j)].im).collect()).collect();
    serde_json::to_string_pretty(&json!({ "dim": rho.nrows(), "re": re, "im": im, "metadata": metadata }))
        .expect("plain data serializes")
}

/// Energy density table, optionally with an analytic column beside it.
pub fn write_distribution_csv(dist: &EnergyDistribution, oracle: Option<&[f64]>, mut out: impl Write) -> Result<()> {
    if let Some(o) = oracle {
        if o.len() != dist.e_grid.len() {
            return Err(Error::DimensionMismatch {
                context: "oracle column vs energy grid",
                expected: dist.e_grid.len(),
                got: o.len(),
            });
        }
    }
    writeln!(out, "{}", if oracle.is_some() { "E,density,oracle" } else { "E,density" }).map_err(io_err)?;
    for (i, (e, d)) in dist.e_grid.iter().zip(&dist.density).enumerate() {
        match oracle {
            Some(o) => writeln!(out, "{e},{d},{}", o[i]),
            None => writeln!(out, "{e},{d}"),
        }
        .map_err(io_err)?;
    }
    Ok(())
}

/// Sidecar for a distribution: point masses, tail estimate and parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionSidecar {
    pub point_masses: Vec<PointMass>,
    pub tail_mass_estimate: f64,
    pub grid_mass: f64,
    pub total_mass: f64,
    pub parameters: serde_json::Value,
}

pub fn distribution_sidecar(dist: &EnergyDistribution, parameters: serde_json::Value) -> DistributionSidecar {
    DistributionSidecar {
        point_masses: dist.point_masses.clone(),
        tail_mass_estimate: dist.tail_mass_estimate,
        grid_mass: dist.grid_mass(),
        total_mass: dist.total_mass(),
        parameters,
    }
}

pub fn write_charfn_csv(f: &CharacteristicFunction, mut out: impl Write) -> Result<()> {
    writeln!(out, "beta,re,im").map_err(io_err)?;
    for (b, z) in f.beta_grid.iter().zip(&f.values) {
        writeln!(out, "{b},{},{}", z.re, z.im).map_err(io_err)?;
    }
    Ok(())
}

/// Generic table writer: header plus equally long columns.
pub fn write_columns(header: &[&str], columns: &[&[f64]], mut out: impl Write) -> Result<()> {
    if header.len() != columns.len() {
        return Err(Error::DimensionMismatch {
            context: "header vs columns",
            expected: header.len(),
            got: columns.len(),
        });
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::Format("columns differ in length".into()));
    }
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for i in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| c[i].to_string()).collect();
        writeln!(out, "{}", line.join(",")).map_err(io_err)?;
    }
    Ok(())
}

/// JSON metadata of a finished trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub trajectory: TrajectoryRef,
    pub log_norm2: f64,
    pub log_vacuum: f64,
    pub noise_integral: f64,
    pub deweighted: bool,
    pub checkpoints: usize,
}

impl RunMetadata {
    pub fn of(run: &CslRun) -> Self {
        Self {
            trajectory: run.trajectory,
            log_norm2: run.log_norm2,
            log_vacuum: run.log_vacuum,
            noise_integral: run.noise_integral,
            deweighted: run.deweighted,
            checkpoints: run.checkpoints.len(),
        }
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSLSTATE";

/// Binary checkpoint: magic, then little-endian `step (u64)`, `time`,
/// `log_norm2`, `log_vacuum`, `dim (u64)` and `dim` (re, im) pairs of the
/// normalized state.
pub fn write_checkpoint(cp: &Checkpoint, mut out: impl Write) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    out.write_all(&(cp.step as u64).to_le_bytes()).map_err(io_err)?;
    for v in [cp.time, cp.log_norm2, cp.log_vacuum] {
        out.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    out.write_all(&(cp.state.dim() as u64).to_le_bytes()).map_err(io_err)?;
    for z in cp.state.amplitudes().iter() {
        out.write_all(&z.re.to_le_bytes()).map_err(io_err)?;
        out.write_all(&z.im.to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

fn read_word(input: &mut impl Read) -> Result<[u8; 8]> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b).map_err(io_err)?;
    Ok(b)
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    if &read_word(&mut input)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a state checkpoint".into()));
    }
    let step = u64::from_le_bytes(read_word(&mut input)?) as usize;
    let time = f64::from_le_bytes(read_word(&mut input)?);
    let log_norm2 = f64::from_le_bytes(read_word(&mut input)?);
    let log_vacuum = f64::from_le_bytes(read_word(&mut input)?);
    let dim = u64::from_le_bytes(read_word(&mut input)?) as usize;
    if dim == 0 || dim > 1 << 24 {
        return Err(Error::Format(format!("implausible state dimension {dim}")));
    }
    let mut amps = Vec::with_capacity(dim);
    for _ in 0..dim {
        let re = f64::from_le_bytes(read_word(&mut input)?);
        let im = f64::from_le_bytes(read_word(&mut input)?);
        amps.push(c(re, im));
    }
    Ok(Checkpoint {
        step,
        time,
        state: StateVector::new(CVector::from_vec(amps))?,
        log_norm2,
        log_vacuum,
    })
}
