//! Per-control-step NPV contributions and the early-termination rule.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::simulator::ReportInterval;

pub const BBL_PER_M3: f64 = 6.28981;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EconParams {
    /// USD per STB.
    pub oil_price: f64,
    pub produced_water_cost: f64,
    pub injected_water_cost: f64,
    /// USD per day.
    pub opex: f64,
    pub discount_rate_annual: f64,
    pub bbl_per_m3: f64,
}

impl Default for EconParams {
    fn default() -> Self {
        Self {
            oil_price: 70.0,
            produced_water_cost: 7.0,
            injected_water_cost: 7.0,
            opex: 41_000.0,
            discount_rate_annual: 0.1,
            bbl_per_m3: BBL_PER_M3,
        }
    }
}

impl EconParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.oil_price,
            self.produced_water_cost,
            self.injected_water_cost,
            self.opex,
            self.bbl_per_m3,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return arg("prices, costs and unit conversion must be finite and >= 0");
        }
        if !(self.discount_rate_annual > -1.0) {
            return arg("discount rate must be > -1");
        }
        Ok(())
    }

    pub fn discount_factor(&self, t_days: f64) -> f64 {
        (1.0 + self.discount_rate_annual).powf(-t_days / 365.0)
    }
}

/// Discounted cash flow of one control step. Rates in the reports are m³/day
/// and are converted to STB/day here; each interval is discounted at its start.
pub fn step_npv(reports: &[ReportInterval], econ: &EconParams) -> Result<f64> {
    econ.validate()?;
    check_contiguous(reports)?;
    let c = econ.bbl_per_m3;
    Ok(reports
        .iter()
        .map(|r| {
            let cash: f64 = r
                .wells
                .iter()
                .map(|w| {
                    c * (econ.oil_price * w.oil_rate
                        - econ.produced_water_cost * w.water_rate
                        - econ.injected_water_cost * w.injection_rate)
                })
                .sum::<f64>()
                - econ.opex;
            cash * r.duration * econ.discount_factor(r.t_start)
        })
        .sum())
}

fn check_contiguous(reports: &[ReportInterval]) -> Result<()> {
    if reports.is_empty() {
        return arg("no report intervals");
    }
    for r in reports {
        if !(r.duration > 0.0 && r.t_start >= 0.0 && r.t_start.is_finite()) {
            return arg(format!(
                "invalid interval at t = {} (duration {})",
                r.t_start, r.duration
            ));
        }
    }
    for pair in reports.windows(2) {
        let end = pair[0].t_start + pair[0].duration;
        if (pair[1].t_start - end).abs() > 1e-9 * end.max(1.0) {
            let kind = if pair[1].t_start < end {
                "overlapping"
            } else {
                "gapped"
            };
            return arg(format!("{kind} intervals at t = {end}"));
        }
    }
    Ok(())
}

/// True when a negative step contribution should end the episode.
pub fn should_terminate(step_npv: f64, allow_early_termination: bool) -> bool {
    allow_early_termination && step_npv < 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::WellReport;
    use proptest::prelude::*;

    fn interval(t: f64, dt: f64, wells: Vec<WellReport>) -> ReportInterval {
        ReportInterval {
            t_start: t,
            duration: dt,
            wells,
        }
    }

    fn producer(qo: f64, qw: f64) -> WellReport {
        WellReport {
            oil_rate: qo,
            water_rate: qw,
            ..Default::default()
        }
    }

    fn injector(q: f64) -> WellReport {
        WellReport {
            injection_rate: q,
            ..Default::default()
        }
    }

    #[test]
    fn opex_only_interval() {
        let v = step_npv(
            &[interval(200.0, 200.0, vec![producer(0.0, 0.0)])],
            &EconParams::default(),
        )
        .unwrap();
        let expected = -41_000.0 * 200.0 / 1.1f64.powf(200.0 / 365.0);
        assert!((v - expected).abs() < 1e-6);
        assert!((v - (-7_782_747.29)).abs() < 0.01, "{v}");
    }

    #[test]
    fn one_year_oil_only() {
        let econ = EconParams {
            bbl_per_m3: 1.0,
            ..Default::default()
        };
        let v = step_npv(
            &[interval(365.0, 365.0, vec![producer(1000.0, 0.0)])],
            &econ,
        )
        .unwrap();
        assert!((v - 9_622_727.272_727).abs() < 1e-3, "{v}");
    }

    #[test]
    fn zero_discount_is_plain_sum() {
        let econ = EconParams {
            discount_rate_annual: 0.0,
            ..Default::default()
        };
        let r = vec![
            interval(0.0, 50.0, vec![producer(10.0, 2.0), injector(12.0)]),
            interval(50.0, 50.0, vec![producer(8.0, 4.0), injector(12.0)]),
        ];
        let c = BBL_PER_M3;
        let expected = 50.0 * (c * (700.0 - 14.0 - 84.0) - 41_000.0)
            + 50.0 * (c * (560.0 - 28.0 - 84.0) - 41_000.0);
        assert!((step_npv(&r, &econ).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn discount_at_whole_years() {
        let e = EconParams::default();
        for m in 0..6 {
            assert_eq!(e.discount_factor(365.0 * m as f64), 1.1f64.powi(-m));
        }
    }

    #[test]
    fn gaps_and_overlaps_rejected() {
        let e = EconParams::default();
        let w = || vec![producer(1.0, 0.0)];
        assert!(step_npv(&[interval(0.0, 50.0, w()), interval(60.0, 50.0, w())], &e).is_err());
        assert!(step_npv(&[interval(0.0, 50.0, w()), interval(40.0, 50.0, w())], &e).is_err());
        assert!(step_npv(&[], &e).is_err());
        assert!(step_npv(&[interval(0.0, 50.0, w()), interval(50.0, 50.0, w())], &e).is_ok());
    }

    #[test]
    fn termination_rule() {
        assert!(should_terminate(-1.0, true));
        assert!(!should_terminate(-1.0, false));
        assert!(!should_terminate(0.0, true));
    }

    /// Straight-line evaluation with separate producer and injector sums.
    fn oracle(reports: &[ReportInterval], e: &EconParams) -> f64 {
        let mut total = 0.0;
        for r in reports {
            let mut prod = 0.0;
            let mut inj = 0.0;
            for w in &r.wells {
                prod += e.oil_price * w.oil_rate * e.bbl_per_m3
                    - e.produced_water_cost * w.water_rate * e.bbl_per_m3;
                inj += e.injected_water_cost * w.injection_rate * e.bbl_per_m3;
            }
            total += (prod - inj - e.opex) * r.duration
                / (1.0 + e.discount_rate_annual).powf(r.t_start / 365.0);
        }
        total
    }

    fn report_set() -> impl Strategy<Value = Vec<ReportInterval>> {
        (
            0.0..2000.0f64,
            prop::collection::vec(
                (
                    1.0..100.0f64,
                    prop::collection::vec((0.0..2000.0f64, 0.0..2000.0f64, 0.0..2000.0f64), 1..5),
                ),
                1..6,
            ),
        )
            .prop_map(|(t0, items)| {
                let mut t = t0;
                items
                    .into_iter()
                    .map(|(dt, wells)| {
                        let r = interval(
                            t,
                            dt,
                            wells
                                .into_iter()
                                .map(|(a, b, c)| WellReport {
                                    oil_rate: a,
                                    water_rate: b,
                                    injection_rate: c,
                                    ..Default::default()
                                })
                                .collect(),
                        );
                        t += dt;
                        r
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn matches_oracle(r in report_set(), b in 0.0..0.3f64) {
            let e = EconParams { discount_rate_annual: b, ..Default::default() };
            let v = step_npv(&r, &e).unwrap();
            let o = oracle(&r, &e);
            prop_assert!((v - o).abs() <= 1e-9 * o.abs().max(1.0));
        }

        #[test]
        fn price_scaling(r in report_set(), s in 0.1..10.0f64) {
            let e = EconParams::default();
            let scaled = EconParams {
                oil_price: e.oil_price * s,
                produced_water_cost: e.produced_water_cost * s,
                injected_water_cost: e.injected_water_cost * s,
                opex: e.opex * s,
                ..e
            };
            let (v, vs) = (step_npv(&r, &e).unwrap(), step_npv(&r, &scaled).unwrap());
            prop_assert!((vs - s * v).abs() <= 1e-9 * (s * v).abs().max(1.0));
        }

        #[test]
        fn linear_in_oil_rate(r in report_set(), extra in 0.0..500.0f64) {
            let e = EconParams::default();
            let mut bumped = r.clone();
            bumped[0].wells[0].oil_rate += extra;
            let (v1, v0) = (step_npv(&bumped, &e).unwrap(), step_npv(&r, &e).unwrap());
            let delta = v1 - v0;
            let expected = e.oil_price * e.bbl_per_m3 * extra * r[0].duration * e.discount_factor(r[0].t_start);
            prop_assert!((delta - expected).abs() <= 1e-9 * (v1.abs() + v0.abs()) + 1e-9 * expected.abs());
        }
    }
}
