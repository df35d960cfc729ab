use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::evaluate::{compute_cdf, EvaluationRecord};
use super::plot::{Chart, Series, Style};
use crate::environment::TraceRow;
use crate::error::{arg, Error, Result};
use crate::geostat::{AssetSpec, ClusterAssignment};
use crate::ppo::{read_training_log, IterationLog};

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub realization: usize,
    pub label: usize,
    pub centroid: bool,
}

pub fn cluster_rows(a: &ClusterAssignment) -> Vec<ClusterRow> {
    a.labels
        .iter()
        .enumerate()
        .map(|(r, &label)| ClusterRow {
            realization: r,
            label,
            centroid: a.centroid_members.get(label) == Some(&r),
        })
        .collect()
}

pub fn clusters_from_rows(rows: &[ClusterRow]) -> Result<ClusterAssignment> {
    let k = rows.iter().map(|r| r.label + 1).max().unwrap_or(0);
    let mut labels = vec![usize::MAX; rows.len()];
    let mut centroids = vec![None; k];
    for r in rows {
        if r.realization >= rows.len() || labels[r.realization] != usize::MAX {
            return arg(format!(
                "cluster table has a bad or repeated realization {}",
                r.realization
            ));
        }
        labels[r.realization] = r.label;
        if r.centroid && centroids[r.label].replace(r.realization).is_some() {
            return arg(format!("cluster {} has two centroid members", r.label));
        }
    }
    let centroid_members = centroids
        .into_iter()
        .enumerate()
        .map(|(c, m)| {
            m.ok_or_else(|| Error::Argument(format!("cluster {c} has no centroid member")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterAssignment {
        labels,
        centroid_members,
    })
}

/// One test case of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub policy: String,
    pub iteration: usize,
    pub epsilon_c: f64,
    pub asset: usize,
    pub realization: usize,
    pub npv: f64,
    pub expected_npv: f64,
    pub selected: bool,
}

pub fn evaluation_rows(policy: &str, records: &[EvaluationRecord]) -> Vec<EvaluationRow> {
    records
        .iter()
        .flat_map(|r| {
            r.cases
                .iter()
                .zip(&r.npvs)
                .map(move |(&(asset, realization), &npv)| EvaluationRow {
                    policy: policy.into(),
                    iteration: r.iteration,
                    epsilon_c: r.epsilon_c,
                    asset,
                    realization,
                    npv,
                    expected_npv: r.expected_npv,
                    selected: r.selected,
                })
        })
        .collect()
}

pub fn write_evaluation(policy: &str, records: &[EvaluationRecord], path: &Path) -> Result<()> {
    write_csv(&evaluation_rows(policy, records), path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub npv: f64,
    pub probability: f64,
}

/// Filename fragment for an ε_c value.
pub fn eps_tag(eps: f64) -> String {
    format!("{eps:.2}")
}

/// One CDF file per (asset, ε_c) present in `records`.
pub fn write_cdfs(records: &[EvaluationRecord], assets: &[AssetSpec], dir: &Path) -> Result<()> {
    for r in records {
        let mut present: Vec<usize> = r.cases.iter().map(|c| c.0).collect();
        present.dedup();
        for n in present {
            let rows: Vec<CdfRow> = compute_cdf(&r.asset_npvs(n))?
                .into_iter()
                .map(|(npv, probability)| CdfRow { npv, probability })
                .collect();
            let path = dir.join(format!(
                "cdf_{}_eps_{}.csv",
                assets[n].name,
                eps_tag(r.epsilon_c)
            ));
            write_csv(&rows, &path)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhpRow {
    pub realization: usize,
    pub time: f64,
    pub well: String,
    pub bhp: f64,
    pub setting: f64,
}

/// Index of the case of `asset` with the median NPV (lower median for an
/// even count).
pub fn median_case(record: &EvaluationRecord, asset: usize) -> Option<usize> {
    let mut idx: Vec<usize> = (0..record.cases.len())
        .filter(|&i| record.cases[i].0 == asset)
        .collect();
    if idx.is_empty() {
        return None;
    }
    idx.sort_by(|&a, &b| record.npvs[a].total_cmp(&record.npvs[b]).then(a.cmp(&b)));
    Some(idx[(idx.len() - 1) / 2])
}

/// Reported and prescribed BHP of every well over the episode of the median-NPV test realization.
pub fn write_bhp_trace(
    record: &EvaluationRecord,
    traces: &[Vec<TraceRow>],
    asset: usize,
    spec: &AssetSpec,
    dir: &Path,
) -> Result<()> {
    let Some(i) = median_case(record, asset) else {
        return arg(format!("no test case for asset {}", spec.name));
    };
    let trace = traces
        .get(i)
        .ok_or_else(|| Error::Argument("trace missing for the median case".into()))?;
    let realization = record.cases[i].1;
    let rows: Vec<BhpRow> = trace
        .iter()
        .map(|t| BhpRow {
            realization,
            time: t.time,
            well: t.well.clone(),
            bhp: t.bhp,
            setting: t.setting,
        })
        .collect();
    write_csv(&rows, &dir.join(format!("bhp_{}.csv", spec.name)))
}

fn write_svg(chart: Chart, csv_path: &Path) -> Result<()> {
    std::fs::write(csv_path.with_extension("svg"), chart.render())?;
    Ok(())
}

fn training_chart(rows: &[IterationLog]) -> Chart {
    Chart {
        title: "Training episodes".into(),
        x_label: "iteration".into(),
        y_label: "mean episode NPV (USD)".into(),
        style: Style::Line,
        series: vec![Series {
            name: "expected NPV".into(),
            points: rows
                .iter()
                .map(|r| (r.iteration as f64, r.expected_npv))
                .collect(),
        }],
    }
}

fn evaluation_chart(rows: &[EvaluationRow]) -> Chart {
    let mut by_eps: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let pts = by_eps.entry(eps_tag(r.epsilon_c)).or_default();
        let p = (r.iteration as f64, r.expected_npv);
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    Chart {
        title: "Test-set evaluation".into(),
        x_label: "iteration".into(),
        y_label: "expected NPV (USD)".into(),
        style: Style::Line,
        series: by_eps
            .into_iter()
            .map(|(e, points)| Series {
                name: format!("eps_c = {e}"),
                points,
            })
            .collect(),
    }
}

fn cdf_chart(name: &str, rows: &[CdfRow]) -> Chart {
    Chart {
        title: name.into(),
        x_label: "NPV (USD)".into(),
        y_label: "cumulative probability".into(),
        style: Style::Step,
        series: vec![Series {
            name: "CDF".into(),
            points: rows.iter().map(|r| (r.npv, r.probability)).collect(),
        }],
    }
}

fn bhp_chart(name: &str, rows: &[BhpRow]) -> Chart {
    let mut wells: Vec<Series> = Vec::new();
    for r in rows {
        match wells.iter_mut().find(|s| s.name == r.well) {
            Some(s) => s.points.push((r.time, r.setting)),
            None => wells.push(Series {
                name: r.well.clone(),
                points: vec![(r.time, r.setting)],
            }),
        }
    }
    Chart {
        title: name.into(),
        x_label: "time (days)".into(),
        y_label: "BHP setting (bar)".into(),
        style: Style::Step,
        series: wells,
    }
}

/// Writes an SVG beside every training-log, evaluation, CDF and BHP-trace
/// CSV in `dir`.
pub fn render_reports(dir: &Path) -> Result<usize> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut n = 0;
    for name in names {
        let path = dir.join(&name);
        let stem = name.trim_end_matches(".csv");
        let chart = if name == "training_log.csv" {
            training_chart(&read_training_log(&path)?)
        } else if name == "evaluation.csv" {
            evaluation_chart(&read_csv(&path)?)
        } else if name.starts_with("cdf_") {
            cdf_chart(stem, &read_csv(&path)?)
        } else if name.starts_with("bhp_") {
            bhp_chart(stem, &read_csv(&path)?)
        } else {
            continue;
        };
        write_svg(chart, &path)?;
        n += 1;
    }
    Ok(n)
}
