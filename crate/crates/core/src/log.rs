//! JSON-lines trajectory logs.
//!
//! A log is a header line, one line per sample, and a summary line. Summary
//! metrics are derived from the samples; loading recomputes them and rejects
//! files whose stored summary disagrees.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::RobotState;
use crate::error::{Error, Result};

const METRIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub controller: String,
    pub seed: u64,
    /// Course waypoints, empty for free runs.
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub position: [f64; 3],
    /// `(w, x, y, z)`.
    pub quaternion: [f64; 4],
    pub pendulum: f64,
    /// Commanded direction; `None` while no command is active.
    pub command: Option<[f64; 2]>,
    pub controller: String,
    /// Distance to the active course segment (0 outside course runs).
    #[serde(default)]
    pub cross_track: f64,
}

impl Sample {
    pub fn from_state(state: &RobotState, command: Option<[f64; 2]>, controller: &str, cross_track: f64) -> Self {
        let q = state.orientation.quaternion();
        Self {
            t: state.time,
            position: state.position.into(),
            quaternion: [q.w, q.i, q.j, q.k],
            pendulum: state.pendulum_angle(),
            command,
            controller: controller.to_owned(),
            cross_track,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub completed: bool,
    /// Duration of a completed run, s.
    pub completion_time: Option<f64>,
    pub duration: f64,
    pub path_length: f64,
    pub average_speed: f64,
    pub max_cross_track: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(Header),
    Sample(Sample),
    Summary(Summary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub header: Header,
    samples: Vec<Sample>,
    completed: bool,
}

impl TrajectoryLog {
    pub fn new(header: Header) -> Self {
        Self { header, samples: Vec::new(), completed: false }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Appends a sample; timestamps must strictly increase.
    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if let Some(last) = self.samples.last() {
            if !(sample.t > last.t) {
                return Err(Error::Log(format!("timestamp {} does not follow {}", sample.t, last.t)));
            }
        }
        if !sample.t.is_finite() || sample.position.iter().any(|x| !x.is_finite()) {
            return Err(Error::Log("non-finite sample".into()));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn set_completed(&mut self, completed: bool) {
        self.completed = completed;
    }

    pub fn summary(&self) -> Summary {
        summarize(&self.samples, self.completed)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |l: &Line| {
            out.push_str(&serde_json::to_string(l).expect("log lines serialize"));
            out.push('\n');
        };
        line(&Line::Header(self.header.clone()));
        for s in &self.samples {
            line(&Line::Sample(s.clone()));
        }
        line(&Line::Summary(self.summary()));
        out
    }

    /// Parses a log and checks the stored summary against the samples.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut stored = None;
        let mut log: Option<TrajectoryLog> = None;
        for (n, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: Line = serde_json::from_str(raw).map_err(|e| Error::Log(format!("line {}: {e}", n + 1)))?;
            match line {
                Line::Header(h) if header.is_none() => {
                    header = Some(());
                    log = Some(TrajectoryLog::new(h));
                }
                Line::Sample(s) if stored.is_none() => {
                    log.as_mut().ok_or_else(|| Error::Log("sample before header".into()))?.push(s)?;
                }
                Line::Summary(s) if stored.is_none() && log.is_some() => stored = Some(s),
                _ => return Err(Error::Log(format!("line {}: unexpected record", n + 1))),
            }
        }
        let mut log = log.ok_or_else(|| Error::Log("missing header".into()))?;
        let stored = stored.ok_or_else(|| Error::Log("missing summary".into()))?;
        log.completed = stored.completed;
        check_summary(&stored, &log.summary())?;
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

/// Metrics derived from raw samples.
pub fn summarize(samples: &[Sample], completed: bool) -> Summary {
    let path_length: f64 = samples
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].position, w[1].position);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .sum();
    let duration = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => b.t - a.t,
        _ => 0.0,
    };
    let average_speed = if duration > 0.0 { path_length / duration } else { 0.0 };
    Summary {
        completed,
        completion_time: completed.then_some(duration),
        duration,
        path_length,
        average_speed,
        max_cross_track: samples.iter().fold(0.0, |m, s| m.max(s.cross_track)),
    }
}

fn check_summary(stored: &Summary, fresh: &Summary) -> Result<()> {
    let close = |a: f64, b: f64| (a - b).abs() <= METRIC_TOLERANCE * a.abs().max(1.0);
    let times = match (stored.completion_time, fresh.completion_time) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    };
    let ok = times
        && close(stored.duration, fresh.duration)
        && close(stored.path_length, fresh.path_length)
        && close(stored.average_speed, fresh.average_speed)
        && close(stored.max_cross_track, fresh.max_cross_track);
    if !ok {
        return Err(Error::Log(format!("stored summary {stored:?} disagrees with samples {fresh:?}")));
    }
    Ok(())
}

/// Appends JSON lines to a file, one record per call. Used for flight logs
/// that several sessions share.
#[derive(Debug)]
pub struct JsonlAppender {
    file: fs::File,
}

impl JsonlAppender {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        Ok(Self { file: fs::OpenOptions::new().create(true).append(true).open(path)? })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_string(record).map_err(|e| Error::Log(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        Ok(())
    }
}

/// Reads every line of a JSON-lines file as a generic value.
pub fn read_jsonl(path: &Path) -> Result<Vec<serde_json::Value>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Log(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}
