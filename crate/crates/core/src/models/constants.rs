//! Built-in constants table in CGS units, with energies in eV where noted.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Version tag of the built-in table.
pub const CONSTANTS_VERSION: &str = "cgs-1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConstants {
    /// cm^3 g^-1 s^-2
    pub g: f64,
    /// cm s^-1
    pub c: f64,
    /// g
    pub planck_mass: f64,
    /// cm
    pub planck_length: f64,
    /// s
    pub planck_time: f64,
    /// smearing length, cm
    pub a: f64,
    /// collapse rate, s^-1
    pub lambda: f64,
    /// proton rest energy, eV
    pub proton_rest_energy_ev: f64,
    /// proton mass, g
    pub proton_mass: f64,
    /// erg per eV
    pub erg_per_ev: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            g: 6.674_30e-8,
            c: 2.997_924_58e10,
            planck_mass: 2.176_434e-5,
            planck_length: 1.616_255e-33,
            planck_time: 5.391_247e-44,
            a: 1e-5,
            lambda: 1e-16,
            proton_rest_energy_ev: 938.272_088e6,
            proton_mass: 1.672_621_92e-24,
            erg_per_ev: 1.602_176_634e-12,
        }
    }
}

/// Relative mismatches of the identities the models rely on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `|l - c tau| / l`
    pub length_time: f64,
    /// `|G mu - l c^2| / (G mu)`
    pub gravity_length: f64,
}

impl ConsistencyReport {
    pub fn max(&self) -> f64 {
        self.length_time.max(self.gravity_length)
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("g", self.g),
            ("c", self.c),
            ("planck_mass", self.planck_mass),
            ("planck_length", self.planck_length),
            ("planck_time", self.planck_time),
            ("a", self.a),
            ("lambda", self.lambda),
            ("proton_rest_energy_ev", self.proton_rest_energy_ev),
            ("proton_mass", self.proton_mass),
            ("erg_per_ev", self.erg_per_ev),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "physical constants must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn consistency(&self) -> ConsistencyReport {
        let gm = self.g * self.planck_mass;
        ConsistencyReport {
            length_time: (self.planck_length - self.c * self.planck_time).abs() / self.planck_length,
            gravity_length: (gm - self.planck_length * self.c * self.c).abs() / gm,
        }
    }

    /// `beta` in erg^-1 for a bath energy `1/beta` given in eV.
    pub fn beta(&self, bath_energy_ev: f64) -> f64 {
        1.0 / (bath_energy_ev * self.erg_per_ev)
    }

    /// `beta m0 c^2`, dimensionless.
    pub fn beta_rest_energy(&self, bath_energy_ev: f64) -> f64 {
        self.proton_rest_energy_ev / bath_energy_ev
    }

    /// `beta G mu a^2` in cm^3 g^-1 (coupling per unit mass density).
    pub fn coupling_per_density(&self, bath_energy_ev: f64) -> f64 {
        self.beta(bath_energy_ev) * self.g * self.planck_mass * self.a * self.a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_table_is_consistent() {
        let k = PhysicalConstants::default();
        k.validate().unwrap();
        assert!(k.consistency().max() < 1e-4, "{:?}", k.consistency());
        let mc2 = k.proton_mass * k.c * k.c / k.erg_per_ev;
        assert!((mc2 / k.proton_rest_energy_ev - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive() {
        let k = PhysicalConstants {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(k.validate().is_err());
    }
}
