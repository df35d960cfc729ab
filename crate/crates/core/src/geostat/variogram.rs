use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramKind {
    Exponential,
    Spherical,
}

/// Isotropic-in-plane variogram. Ranges are in grid blocks; exponential
/// models use the practical range (correlation e^-3 at one range).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub horizontal_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertical_range: Option<f64>,
}

impl VariogramModel {
    pub fn new(kind: VariogramKind, horizontal_range: f64) -> Self {
        Self {
            kind,
            horizontal_range,
            vertical_range: None,
        }
    }

    pub fn with_vertical_range(mut self, range: f64) -> Self {
        self.vertical_range = Some(range);
        self
    }

    pub fn validate(&self, three_d: bool) -> Result<()> {
        if !(self.horizontal_range > 0.0) {
            return arg(format!(
                "horizontal range must be > 0, got {}",
                self.horizontal_range
            ));
        }
        match self.vertical_range {
            Some(v) if !(v > 0.0) => arg(format!("vertical range must be > 0, got {v}")),
            None if three_d => arg("3D variogram requires a vertical range"),
            _ => Ok(()),
        }
    }

    /// Correlation at a lag already divided by the range.
    pub fn correlation_scaled(&self, r: f64) -> f64 {
        match self.kind {
            VariogramKind::Exponential => (-3.0 * r).exp(),
            VariogramKind::Spherical => {
                if r < 1.0 {
                    1.0 - 1.5 * r + 0.5 * r * r * r
                } else {
                    0.0
                }
            }
        }
    }

    /// Correlation between two cells separated by (di, dj, dk) blocks.
    pub fn correlation_between(&self, di: f64, dj: f64, dk: f64) -> f64 {
        let a = self.horizontal_range;
        let mut r2 = (di * di + dj * dj) / (a * a);
        if dk != 0.0 {
            let av = self.vertical_range.unwrap_or(a);
            r2 += dk * dk / (av * av);
        }
        self.correlation_scaled(r2.sqrt())
    }
}

/// Correlation at horizontal separation `h` (blocks).
pub fn covariance(h: f64, model: &VariogramModel) -> Result<f64> {
    if !(h >= 0.0) {
        return arg(format!("lag must be non-negative, got {h}"));
    }
    Ok(model.correlation_scaled(h / model.horizontal_range))
}
