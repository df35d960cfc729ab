use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

/// Daily conversion from md·m·bar/cp to m³/day (Darcy's law in metric units).
pub const DARCY_METRIC: f64 = 0.008_527_02;

pub const DEFAULT_PRODUCER_BOUNDS: (f64, f64) = (280.0, 345.0);
pub const DEFAULT_INJECTOR_BOUNDS: (f64, f64) = (355.0, 450.0);
pub const DEFAULT_MAX_LIQUID_RATE: f64 = 1526.0;
pub const DEFAULT_WELLBORE_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellKind {
    Producer,
    Injector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellSpec {
    pub name: String,
    /// Global identifier across all assets of a run (1-based); 0 until assigned.
    #[serde(default)]
    pub well_id: usize,
    pub kind: WellKind,
    pub i: usize,
    pub j: usize,
    /// Perforated layers; empty means every layer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<usize>,
    pub bhp_lower: f64,
    pub bhp_upper: f64,
    pub max_liquid_rate: f64,
    pub wellbore_radius: f64,
}

impl WellSpec {
    pub fn new(name: impl Into<String>, kind: WellKind, i: usize, j: usize) -> Self {
        let (bhp_lower, bhp_upper) = match kind {
            WellKind::Producer => DEFAULT_PRODUCER_BOUNDS,
            WellKind::Injector => DEFAULT_INJECTOR_BOUNDS,
        };
        Self {
            name: name.into(),
            well_id: 0,
            kind,
            i,
            j,
            layers: Vec::new(),
            bhp_lower,
            bhp_upper,
            max_liquid_rate: DEFAULT_MAX_LIQUID_RATE,
            wellbore_radius: DEFAULT_WELLBORE_RADIUS,
        }
    }

    pub fn producer(name: impl Into<String>, i: usize, j: usize) -> Self {
        Self::new(name, WellKind::Producer, i, j)
    }

    pub fn injector(name: impl Into<String>, i: usize, j: usize) -> Self {
        Self::new(name, WellKind::Injector, i, j)
    }

    pub fn is_producer(&self) -> bool {
        self.kind == WellKind::Producer
    }

    pub fn perforated_layers(&self, nz: usize) -> Vec<usize> {
        if self.layers.is_empty() {
            (0..nz).collect()
        } else {
            self.layers.clone()
        }
    }

    /// Maximum relative change that moves a setting from the lower to the upper bound.
    pub fn max_relative_change(&self) -> f64 {
        (self.bhp_upper - self.bhp_lower) / self.bhp_lower
    }

    pub fn validate(&self, nx: usize, ny: usize, nz: usize) -> Result<()> {
        if self.i >= nx || self.j >= ny {
            return arg(format!(
                "well {} at ({}, {}) outside {nx}x{ny} grid",
                self.name, self.i, self.j
            ));
        }
        if let Some(k) = self.layers.iter().find(|&&k| k >= nz) {
            return arg(format!("well {} perforates layer {k} of {nz}", self.name));
        }
        if !(self.bhp_lower > 0.0 && self.bhp_lower < self.bhp_upper) {
            return arg(format!(
                "well {}: need 0 < bhp_lower < bhp_upper, got [{}, {}]",
                self.name, self.bhp_lower, self.bhp_upper
            ));
        }
        if !(self.max_liquid_rate > 0.0) {
            return arg(format!("well {}: max_liquid_rate must be > 0", self.name));
        }
        if !(self.wellbore_radius > 0.0) {
            return arg(format!("well {}: wellbore radius must be > 0", self.name));
        }
        Ok(())
    }
}

/// Peaceman equivalent radius for an anisotropic block.
pub fn peaceman_radius(kx: f64, ky: f64, dx: f64, dy: f64) -> f64 {
    let ryx = (ky / kx).sqrt();
    let rxy = (kx / ky).sqrt();
    0.28 * (ryx * dx * dx + rxy * dy * dy).sqrt() / ((ky / kx).powf(0.25) + (kx / ky).powf(0.25))
}

/// Peaceman well index such that `q[m³/day] = WI · mobility[1/cp] · Δp[bar]`.
pub fn peaceman_well_index(
    kx: f64,
    ky: f64,
    dx: f64,
    dy: f64,
    dz_perf: f64,
    rw: f64,
) -> Result<f64> {
    for (name, v) in [
        ("kx", kx),
        ("ky", ky),
        ("dx", dx),
        ("dy", dy),
        ("dz", dz_perf),
        ("rw", rw),
    ] {
        if !(v > 0.0) {
            return arg(format!("well index input {name} must be positive, got {v}"));
        }
    }
    let r_eq = peaceman_radius(kx, ky, dx, dy);
    if r_eq <= rw {
        return Err(Error::Config(format!(
            "Peaceman radius {r_eq:.4} m does not exceed wellbore radius {rw} m"
        )));
    }
    Ok(DARCY_METRIC * 2.0 * std::f64::consts::PI * (kx * ky).sqrt() * dz_perf / (r_eq / rw).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_radius_reduces() {
        let r = peaceman_radius(50.0, 50.0, 60.0, 60.0);
        let expect = 0.28 * 60.0 * 2f64.sqrt() / 2.0;
        assert!((r - expect).abs() < 1e-12);
        assert!((r / 60.0 - 0.197_989_898_732_233_3).abs() < 1e-12);
    }

    #[test]
    fn index_linear_in_thickness() {
        let a = peaceman_well_index(80.0, 120.0, 50.0, 70.0, 6.0, 0.1).unwrap();
        let b = peaceman_well_index(80.0, 120.0, 50.0, 70.0, 12.0, 0.1).unwrap();
        assert!((b / a - 2.0).abs() < 1e-14);
    }

    #[test]
    fn index_matches_one_line_oracle() {
        // Isotropic closed form: r_eq = 0.14·sqrt(dx² + dy²).
        let oracle = 0.008_527_02 * 2.0 * std::f64::consts::PI * 100.0 * 12.0
            / ((0.14 * (60.0f64 * 60.0 + 60.0 * 60.0).sqrt()) / 0.1).ln();
        let wi = peaceman_well_index(100.0, 100.0, 60.0, 60.0, 12.0, 0.1).unwrap();
        assert!(((wi - oracle) / oracle).abs() < 1e-12);
    }

    #[test]
    fn radius_not_exceeding_rw_is_config_error() {
        let err = peaceman_well_index(100.0, 100.0, 0.5, 0.5, 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(peaceman_well_index(-1.0, 100.0, 60.0, 60.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn default_bounds_by_kind() {
        let p = WellSpec::producer("P1", 0, 0);
        let i = WellSpec::injector("I1", 1, 1);
        assert_eq!((p.bhp_lower, p.bhp_upper), (280.0, 345.0));
        assert_eq!((i.bhp_lower, i.bhp_upper), (355.0, 450.0));
        assert!((p.max_relative_change() - 65.0 / 280.0).abs() < 1e-15);
    }
}
