use rayon::prelude::*;

use crate::error::Result;
use crate::geostat::{AssetSpec, RealizationSet};
use crate::simulator::{SimConfig, Simulator};

/// Per-realization feature vectors for clustering.
pub trait FeatureProvider: Sync {
    fn features(&self, asset: &AssetSpec, set: &RealizationSet) -> Result<Vec<Vec<f64>>>;
}

/// Field oil and water production rates of one simulation per realization
/// with every well held at its initial-period BHP.
#[derive(Debug, Clone)]
pub struct ReferenceSimulation {
    pub sim: SimConfig,
    pub days: f64,
    pub reports: usize,
}

impl ReferenceSimulation {
    /// Oil-rate series followed by water-rate series, one value per report.
    pub fn field_rates(&self, asset: &AssetSpec, log_perm: &[f64]) -> Result<Vec<f64>> {
        let sim = Simulator::new(asset, log_perm, self.sim.clone())?;
        let settings = sim.initial_settings();
        let (_, result) =
            sim.simulate_control_step(&sim.initial_state(), &settings, self.days, self.reports)?;
        let oil = result
            .reports
            .iter()
            .map(|r| r.wells.iter().map(|w| w.oil_rate).sum::<f64>());
        let water = result
            .reports
            .iter()
            .map(|r| r.wells.iter().map(|w| w.water_rate).sum::<f64>());
        Ok(oil.chain(water).collect())
    }
}

impl FeatureProvider for ReferenceSimulation {
    fn features(&self, asset: &AssetSpec, set: &RealizationSet) -> Result<Vec<Vec<f64>>> {
        set.fields
            .par_iter()
            .map(|f| self.field_rates(asset, f))
            .collect()
    }
}
