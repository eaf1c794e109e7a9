//! Offline replay of teleoperation flight logs.

use std::path::Path;

use serde_json::Value;

use rock_core::log::{read_jsonl, summarize, Sample, Summary};
use rock_core::{Error, Result};

use super::session::StateFrame;

/// State frames between two session starts or resets.
#[derive(Debug, Clone)]
pub struct ReplaySegment {
    pub session: String,
    pub seed: u64,
    pub samples: Vec<Sample>,
    /// Path length over the frame timestamps; `completed` is always false
    /// since live sessions have no course.
    pub summary: Summary,
}

/// Splits a flight log into segments and recomputes their metrics from the
/// broadcast frames. Input records are ignored.
pub fn replay_flight_log(path: &Path) -> Result<Vec<ReplaySegment>> {
    replay_records(&read_jsonl(path)?)
}

pub fn replay_records(records: &[Value]) -> Result<Vec<ReplaySegment>> {
    let mut segments: Vec<ReplaySegment> = Vec::new();
    let mut session = String::new();
    let open = |segments: &mut Vec<ReplaySegment>, session: &str, seed: u64| {
        segments.push(ReplaySegment { session: session.to_owned(), seed, samples: Vec::new(), summary: summarize(&[], false) })
    };
    for (n, rec) in records.iter().enumerate() {
        let bad = |what: &str| Error::Log(format!("flight log record {}: {what}", n + 1));
        let seed = || rec.get("seed").and_then(Value::as_u64).ok_or_else(|| bad("missing seed"));
        match rec.get("type").and_then(Value::as_str) {
            Some("session") => {
                session = rec.get("id").and_then(Value::as_str).ok_or_else(|| bad("missing id"))?.to_owned();
                open(&mut segments, &session, seed()?);
            }
            Some("reset") => open(&mut segments, &session, seed()?),
            Some("state") => {
                let frame: StateFrame = serde_json::from_value(rec.clone()).map_err(|e| bad(&e.to_string()))?;
                let Some(seg) = segments.last_mut() else {
                    return Err(bad("state frame before any session record"));
                };
                if seg.samples.last().is_some_and(|s| s.t >= frame.t) {
                    return Err(bad("state frames out of order"));
                }
                seg.samples.push(Sample {
                    t: frame.t,
                    position: frame.pos,
                    quaternion: frame.quat,
                    pendulum: frame.pendulum,
                    command: frame.command,
                    controller: frame.controller,
                    cross_track: 0.0,
                });
            }
            Some("input") => {}
            Some(other) => return Err(bad(&format!("unknown record type \"{other}\""))),
            None => return Err(bad("missing type")),
        }
    }
    for seg in &mut segments {
        seg.summary = summarize(&seg.samples, false);
    }
    Ok(segments)
}
