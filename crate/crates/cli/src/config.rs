use std::fmt;
use std::path::{Path, PathBuf};

use csl_core::dynamics::Sampler;
use csl_core::linalg::{c, CMatrix, HermitianOperator, StateVector, C64};
use csl_core::models::PhysicalConstants;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Collapse,
    Density,
    Energy,
    Timeop,
    Spins,
    Fields,
    Audit,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Collapse => "collapse",
            Kind::Density => "density",
            Kind::Energy => "energy",
            Kind::Timeop => "timeop",
            Kind::Spins => "spins",
            Kind::Fields => "fields",
            Kind::Audit => "audit",
        }
    }
}

/// Every key is mandatory unless its absence has a stated meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub master_seed: u64,
    pub tolerance_scale: f64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse: Option<CollapseSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeop: Option<TimeopSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spins: Option<SpinsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fields: Option<FieldsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSection>,
    /// Absent means the built-in table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<PhysicalConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `[re, im]` amplitude per eigenvalue of the collapse operator.
    pub alpha: Vec<[f64; 2]>,
    pub a: Vec<f64>,
    pub lambda: f64,
    /// Absent means `H_A = 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<MatrixConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dt: f64,
    pub steps: usize,
    pub trajectories: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseSection {
    pub sampler: Sampler,
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub sampler: Sampler,
    pub dt_ode: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub e_max: f64,
    /// Grid points on each side of zero.
    pub points: usize,
    pub beta_max: f64,
    pub half_steps: usize,
    pub dt_ode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeopSection {
    pub times: Vec<f64>,
    /// Power-law exponent of `A(t)`; absent means time-independent `A`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub a_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinsSection {
    pub n: u64,
    pub beta_c: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsSection {
    pub mass: f64,
    pub lambda: f64,
    pub n_times: usize,
    pub n_freqs: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub bath_energies_ev: Vec<f64>,
    pub rho: f64,
}

/// Problem in the configuration, with the offending key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

type Checked<T> = std::result::Result<T, ConfigError>;

fn positive(field: &str, x: f64) -> Checked<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be positive and finite, got {x}")))
    }
}

fn nonzero(field: &str, n: usize) -> Checked<()> {
    if n == 0 {
        Err(ConfigError::new(field, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn need<'a, T>(field: &str, section: &'a Option<T>, kind: Kind) -> Checked<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| ConfigError::new(field, format!("section is required for kind `{}`", kind.name())))
}

impl ExperimentConfig {
    /// Parses TOML; syntax errors carry line and column.
    pub fn parse(text: &str) -> Checked<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::new("", e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Checked<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Resolved form with the built-in constants written out.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        if r.constants.is_none() && matches!(r.kind, Kind::Audit) {
            r.constants = Some(PhysicalConstants::default());
        }
        r
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Checked<()> {
        positive("tolerance_scale", self.tolerance_scale)?;
        let allowed: &[&str] = match self.kind {
            Kind::Collapse => &["model", "grid", "collapse"],
            Kind::Density => &["model", "grid", "density"],
            Kind::Energy => &["model", "grid", "energy"],
            Kind::Timeop => &["model", "timeop"],
            Kind::Spins => &["spins"],
            Kind::Fields => &["fields"],
            Kind::Audit => &["audit", "constants"],
        };
        let present = [
            ("model", self.model.is_some()),
            ("grid", self.grid.is_some()),
            ("collapse", self.collapse.is_some()),
            ("density", self.density.is_some()),
            ("energy", self.energy.is_some()),
            ("timeop", self.timeop.is_some()),
            ("spins", self.spins.is_some()),
            ("fields", self.fields.is_some()),
            ("audit", self.audit.is_some()),
            ("constants", self.constants.is_some()),
        ];
        for (name, here) in present {
            if here && !allowed.contains(&name) {
                return Err(ConfigError::new(name, format!("section is not used by kind `{}`", self.kind.name())));
            }
        }
        for name in allowed.iter().filter(|n| **n != "constants") {
            if !present.iter().any(|(p, here)| p == name && *here) {
                return Err(ConfigError::new(*name, format!("section is required for kind `{}`", self.kind.name())));
            }
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(g) = &self.grid {
            positive("grid.dt", g.dt)?;
            nonzero("grid.steps", g.steps)?;
            if g.trajectories < 100 {
                return Err(ConfigError::new("grid.trajectories", "need at least 100 trajectories"));
            }
        }
        if let Some(s) = &self.collapse {
            if s.bins < 2 {
                return Err(ConfigError::new("collapse.bins", "need at least 2 bins"));
            }
        }
        if let Some(d) = &self.density {
            positive("density.dt_ode", d.dt_ode)?;
        }
        if let Some(e) = &self.energy {
            positive("energy.e_max", e.e_max)?;
            positive("energy.beta_max", e.beta_max)?;
            positive("energy.dt_ode", e.dt_ode)?;
            nonzero("energy.points", e.points)?;
            nonzero("energy.half_steps", e.half_steps)?;
        }
        if let Some(t) = &self.timeop {
            if t.times.is_empty() {
                return Err(ConfigError::new("timeop.times", "need at least one time"));
            }
            for x in &t.times {
                positive("timeop.times", *x)?;
            }
            if let Some(s) = t.s {
                if !(s >= 0.0) || !s.is_finite() {
                    return Err(ConfigError::new("timeop.s", format!("must be non-negative, got {s}")));
                }
            }
            positive("timeop.a_scale", t.a_scale)?;
        }
        if let Some(s) = &self.spins {
            if s.n == 0 {
                return Err(ConfigError::new("spins.n", "must be at least 1"));
            }
            if !s.beta_c.is_finite() {
                return Err(ConfigError::new("spins.beta_c", "must be finite"));
            }
            nonzero("spins.samples", s.samples)?;
        }
        if let Some(f) = &self.fields {
            positive("fields.mass", f.mass)?;
            positive("fields.lambda", f.lambda)?;
            positive("fields.tau", f.tau)?;
            if f.n_times < 8 || f.n_freqs < 8 || f.n_freqs > f.n_times {
                return Err(ConfigError::new("fields.n_freqs", "need 8 <= n_freqs <= n_times"));
            }
        }
        if let Some(a) = &self.audit {
            positive("audit.rho", a.rho)?;
            if a.bath_energies_ev.is_empty() {
                return Err(ConfigError::new("audit.bath_energies_ev", "need at least one bath energy"));
            }
            for e in &a.bath_energies_ev {
                positive("audit.bath_energies_ev", *e)?;
            }
        }
        if let Some(k) = &self.constants {
            k.validate().map_err(|e| ConfigError::new("constants", e.to_string()))?;
        }
        Ok(())
    }

    pub fn model(&self) -> Checked<&ModelConfig> {
        need("model", &self.model, self.kind)
    }

    pub fn grid(&self) -> Checked<&GridConfig> {
        need("grid", &self.grid, self.kind)
    }
}

impl ModelConfig {
    fn validate(&self) -> Checked<()> {
        positive("model.lambda", self.lambda)?;
        if self.a.is_empty() {
            return Err(ConfigError::new("model.a", "need at least one eigenvalue"));
        }
        if self.alpha.len() != self.a.len() {
            return Err(ConfigError::new(
                "model.alpha",
                format!("{} amplitudes for {} eigenvalues", self.alpha.len(), self.a.len()),
            ));
        }
        if self.a.iter().chain(self.alpha.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(ConfigError::new("model", "non-finite entry"));
        }
        let norm: f64 = self.alpha.iter().map(|[r, i]| r * r + i * i).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(ConfigError::new("model.alpha", format!("amplitudes must be normalized, sum |alpha|^2 = {norm}")));
        }
        if let Some(h) = &self.hamiltonian {
            self.hamiltonian_operator_from(h)?;
        }
        Ok(())
    }

    pub fn amplitudes(&self) -> Vec<C64> {
        self.alpha.iter().map(|[r, i]| c(*r, *i)).collect()
    }

    pub fn state(&self) -> csl_core::Result<StateVector> {
        StateVector::new(nalgebra::DVector::from_vec(self.amplitudes()))
    }

    pub fn collapse_operator(&self) -> HermitianOperator {
        HermitianOperator::diagonal(&self.a)
    }

    fn hamiltonian_operator_from(&self, h: &MatrixConfig) -> Checked<HermitianOperator> {
        let n = self.a.len();
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square(&h.re) || !square(&h.im) {
            return Err(ConfigError::new("model.hamiltonian", format!("re and im must be {n} x {n}")));
        }
        let m = CMatrix::from_fn(n, n, |i, j| c(h.re[i][j], h.im[i][j]));
        HermitianOperator::new(m).map_err(|e| ConfigError::new("model.hamiltonian", e.to_string()))
    }

    /// `H_A`, zero when not given.
    pub fn hamiltonian(&self) -> HermitianOperator {
        match &self.hamiltonian {
            Some(h) => self.hamiltonian_operator_from(h).expect("validated"),
            None => HermitianOperator::zeros(self.a.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COLLAPSE: &str = r#"
kind = "collapse"
master_seed = 3
tolerance_scale = 1.0
output_dir = "out"

[model]
alpha = [[0.6, 0.0], [0.0, 0.8]]
a = [0.0, 1.0]
lambda = 1.0

[grid]
dt = 0.01
steps = 100
trajectories = 200

[collapse]
sampler = "physical"
bins = 20
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(COLLAPSE).unwrap();
        assert_eq!(cfg.kind, Kind::Collapse);
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_key() {
        let text = COLLAPSE.replace("bins = 20", "bins = 20\nbinz = 3");
        let e = ExperimentConfig::parse(&text).unwrap_err();
        assert!(e.message.contains("binz"), "{e}");
        assert!(e.message.contains("line"), "{e}");
    }

    #[test]
    fn negative_lambda_names_field() {
        let e = ExperimentConfig::parse(&COLLAPSE.replace("lambda = 1.0", "lambda = -1.0")).unwrap_err();
        assert_eq!(e.field, "model.lambda");
    }

    #[test]
    fn missing_and_stray_sections() {
        let start = COLLAPSE.find("[collapse]").unwrap();
        let e = ExperimentConfig::parse(&COLLAPSE[..start]).unwrap_err();
        assert_eq!(e.field, "collapse");
        let stray = format!("{COLLAPSE}\n[spins]\nn = 10\nbeta_c = 0.1\nsamples = 10\n");
        assert_eq!(ExperimentConfig::parse(&stray).unwrap_err().field, "spins");
    }

    #[test]
    fn missing_key_is_an_error() {
        let text = COLLAPSE.replace("master_seed = 3\n", "");
        let e = ExperimentConfig::parse(&text).unwrap_err();
        assert!(e.message.contains("master_seed"), "{e}");
    }

    #[test]
    fn unnormalized_and_non_hermitian() {
        let e = ExperimentConfig::parse(&COLLAPSE.replace("[0.0, 0.8]", "[0.0, 0.9]")).unwrap_err();
        assert_eq!(e.field, "model.alpha");
        let h = COLLAPSE.replace("lambda = 1.0", "lambda = 1.0\nhamiltonian = { re = [[0.0, 1.0], [2.0, 0.0]], im = [[0.0, 0.0], [0.0, 0.0]] }");
        assert_eq!(ExperimentConfig::parse(&h).unwrap_err().field, "model.hamiltonian");
    }
}
