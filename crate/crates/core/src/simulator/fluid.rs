use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

/// Corey relative-permeability parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoreyParams {
    pub swc: f64,
    pub sor: f64,
    pub krw_end: f64,
    pub kro_end: f64,
    pub nw: f64,
    pub no: f64,
}

impl Default for CoreyParams {
    fn default() -> Self {
        Self {
            swc: 0.15,
            sor: 0.20,
            krw_end: 0.55,
            kro_end: 1.0,
            nw: 2.0,
            no: 2.0,
        }
    }
}

impl CoreyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.swc >= 0.0 && self.sor >= 0.0 && self.swc + self.sor < 1.0) {
            return arg(format!(
                "need swc + sor < 1, got {} + {}",
                self.swc, self.sor
            ));
        }
        for (n, v) in [("krw_end", self.krw_end), ("kro_end", self.kro_end)] {
            if !(v > 0.0 && v <= 1.0) {
                return arg(format!("{n} = {v} not in (0, 1]"));
            }
        }
        if !(self.nw >= 1.0 && self.no >= 1.0) {
            return arg("Corey exponents must be >= 1");
        }
        Ok(())
    }

    pub fn sw_max(&self) -> f64 {
        1.0 - self.sor
    }

    fn normalized(&self, sw: f64) -> f64 {
        ((sw - self.swc) / (1.0 - self.swc - self.sor)).clamp(0.0, 1.0)
    }
}

/// `(krw, kro)` at water saturation `sw`, clamped to the mobile range.
pub fn relative_permeability(sw: f64, p: &CoreyParams) -> (f64, f64) {
    let s = p.normalized(sw);
    (p.krw_end * power(s, p.nw), p.kro_end * power(1.0 - s, p.no))
}

fn power(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() <= 16.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidRock {
    pub mu_oil: f64,
    pub mu_water: f64,
    pub rho_oil: f64,
    pub rho_water: f64,
    pub relperm: CoreyParams,
    pub initial_pressure: f64,
    pub initial_oil_saturation: f64,
}

impl Default for FluidRock {
    fn default() -> Self {
        Self {
            mu_oil: 1.0,
            mu_water: 0.31,
            rho_oil: 849.0,
            rho_water: 1025.0,
            relperm: CoreyParams::default(),
            initial_pressure: 350.0,
            initial_oil_saturation: 0.85,
        }
    }
}

impl FluidRock {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_oil > 0.0 && self.mu_water > 0.0) {
            return arg("viscosities must be > 0");
        }
        if !(self.initial_oil_saturation > 0.0 && self.initial_oil_saturation < 1.0) {
            return arg("initial oil saturation must be in (0, 1)");
        }
        self.relperm.validate()
    }

    /// Phase mobilities `(λw, λo)` in 1/cp.
    pub fn mobilities(&self, sw: f64) -> (f64, f64) {
        let (krw, kro) = relative_permeability(sw, &self.relperm);
        (krw / self.mu_water, kro / self.mu_oil)
    }

    /// Water fractional flow without gravity.
    pub fn fractional_flow(&self, sw: f64) -> f64 {
        let (lw, lo) = self.mobilities(sw);
        if lw + lo > 0.0 {
            lw / (lw + lo)
        } else {
            0.0
        }
    }

    /// Upper bound of dfw/dSw over the mobile range, by dense sampling.
    pub fn max_fractional_flow_slope(&self) -> f64 {
        let (lo, hi) = (self.relperm.swc, self.relperm.sw_max());
        let n = 2000;
        let h = (hi - lo) / n as f64;
        (0..n)
            .map(|i| {
                let a = lo + i as f64 * h;
                (self.fractional_flow(a + h) - self.fractional_flow(a)) / h
            })
            .fold(0.0, f64::max)
            * 1.05
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let p = CoreyParams::default();
        assert_eq!(relative_permeability(p.swc, &p), (0.0, p.kro_end));
        assert_eq!(relative_permeability(1.0 - p.sor, &p), (p.krw_end, 0.0));
        assert_eq!(relative_permeability(0.0, &p), (0.0, p.kro_end));
        assert_eq!(relative_permeability(1.0, &p), (p.krw_end, 0.0));
    }

    #[test]
    fn quadratic_midpoint() {
        let p = CoreyParams::default();
        let mid = p.swc + 0.5 * (1.0 - p.swc - p.sor);
        let (krw, kro) = relative_permeability(mid, &p);
        assert!((krw - 0.25 * p.krw_end).abs() < 1e-15);
        assert!((kro - 0.25 * p.kro_end).abs() < 1e-15);
    }

    #[test]
    fn invalid_params() {
        let p = CoreyParams {
            swc: 0.6,
            sor: 0.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = CoreyParams {
            nw: 0.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn slope_bound_dominates_finite_differences() {
        let f = FluidRock::default();
        let bound = f.max_fractional_flow_slope();
        for i in 0..500 {
            let s = 0.15 + 0.65 * i as f64 / 500.0;
            let d = (f.fractional_flow(s + 1e-6) - f.fractional_flow(s - 1e-6)) / 2e-6;
            assert!(d <= bound);
        }
    }
}
