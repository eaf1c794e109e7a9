//! Side-by-side controller evaluation on identical courses and seeds.

use rayon::prelude::*;
use rock_core::config::{ControllerKind, ScenarioConfig};
use rock_core::nn::Mlp;
use rock_core::{Error, Result};

use crate::course::{follow_course, WaypointCourse};
use crate::driver::Driver;

#[derive(Debug, Clone)]
pub struct CompareEntry {
    pub scenario: String,
    pub cfg: ScenarioConfig,
    pub controller: ControllerKind,
    /// Required for the policy controller.
    pub policy: Option<Mlp>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub scenario: String,
    pub controller: String,
    pub runs: usize,
    pub completion_rate: f64,
    /// Mean over runs of path length / duration, m/s.
    pub average_speed: f64,
    /// Mean over runs of the maximum cross-track error, m.
    pub mean_max_cross_track: f64,
    /// Mean duration of completed runs, s.
    pub mean_completion_time: Option<f64>,
}

pub const CSV_HEADER: &str =
    "scenario,controller,runs,completion_rate,average_speed,mean_max_cross_track,mean_completion_time";

/// One row per entry; runs within an entry execute in parallel.
pub fn compare_controllers(entries: &[CompareEntry]) -> Result<Vec<CompareRow>> {
    entries.iter().map(evaluate).collect()
}

fn evaluate(entry: &CompareEntry) -> Result<CompareRow> {
    let course = WaypointCourse::from_config(&entry.cfg.course)?;
    let driver = match entry.controller {
        ControllerKind::Projection => Driver::projection(entry.cfg.controller),
        ControllerKind::Policy => {
            let net = entry.policy.clone().ok_or_else(|| {
                Error::Config(format!("scenario {}: policy controller needs a checkpoint", entry.scenario))
            })?;
            Driver::policy(net, entry.cfg.env.heading_relative)
        }
    };
    let runs: Vec<_> = entry
        .seeds
        .par_iter()
        .map(|&seed| follow_course(&mut driver.clone(), &course, &entry.cfg, seed).map(|r| r.summary))
        .collect::<Result<_>>()?;
    let n = runs.len().max(1) as f64;
    let done: Vec<f64> = runs.iter().filter_map(|s| s.completion_time).collect();
    Ok(CompareRow {
        scenario: entry.scenario.clone(),
        controller: entry.controller.as_str().into(),
        runs: runs.len(),
        completion_rate: done.len() as f64 / n,
        average_speed: runs.iter().map(|s| s.average_speed).sum::<f64>() / n,
        mean_max_cross_track: runs.iter().map(|s| s.max_cross_track).sum::<f64>() / n,
        mean_completion_time: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
    })
}

fn cells(r: &CompareRow) -> [String; 7] {
    [
        r.scenario.clone(),
        r.controller.clone(),
        r.runs.to_string(),
        format!("{:.3}", r.completion_rate),
        format!("{:.4}", r.average_speed),
        format!("{:.4}", r.mean_max_cross_track),
        r.mean_completion_time.map_or_else(|| "-".into(), |t| format!("{t:.2}")),
    ]
}

pub fn to_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&cells(r).join(","));
        out.push('\n');
    }
    out
}

/// Column-aligned text table.
pub fn to_text(rows: &[CompareRow]) -> String {
    let header: Vec<String> = CSV_HEADER.split(',').map(str::to_owned).collect();
    let body: Vec<[String; 7]> = rows.iter().map(cells).collect();
    let widths: Vec<usize> =
        (0..7).map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0)).collect();
    let line = |cols: &[String]| {
        let padded: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_owned() + "\n"
    };
    let mut out = line(&header);
    for r in &body {
        out.push_str(&line(r));
    }
    out
}
