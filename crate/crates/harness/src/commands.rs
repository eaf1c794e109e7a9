//! Subcommand implementations behind the `rock` binary. Each writes its
//! artifacts under the output directory and returns a short human summary.
//! Everything written to disk is a pure function of the config and seed;
//! wall-clock measurements go to the returned summary only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde_json::json;

use rock_core::checkpoint::{load_policy, save_quantized, write_sidecar};
use rock_core::config::{ControllerKind, ScenarioConfig};
use rock_core::env::Env;
use rock_core::log::{Header, Sample, TrajectoryLog};
use rock_core::nn::{policy_action, Mlp};
use rock_core::quant::{calibrate, quantize_with_ranges};
use rock_core::{Error, Result};

use crate::compare::{self, compare_controllers, CompareEntry};
use crate::course::{follow_course, WaypointCourse};
use crate::driver::Driver;
use crate::jump::jump_trial;
use crate::teleop::{replay::replay_records, ServeOptions, TeleopServer};

/// Global state shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ScenarioConfig,
    /// Exact config text; hashed into checkpoint sidecars.
    pub config_text: String,
    /// Directory of the config file, for resolving relative paths in it.
    pub config_dir: PathBuf,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Context {
    /// Loads `config` or falls back to the built-in defaults.
    pub fn load(config: Option<&Path>, seed: u64, out_dir: PathBuf) -> Result<Self> {
        let (cfg, config_text, config_dir) = match config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                let cfg = ScenarioConfig::from_toml(&text)?;
                (cfg, text, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => {
                let cfg = ScenarioConfig::default();
                (cfg.clone(), cfg.to_toml(), PathBuf::new())
            }
        };
        Ok(Self { cfg, config_text, config_dir, seed, out_dir })
    }

    fn output(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(self.out_dir.join(name))
    }

    fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    /// `--checkpoint` if given, else `course.checkpoint` from the config.
    fn checkpoint(&self, explicit: Option<&Path>) -> Option<PathBuf> {
        explicit.map(Path::to_path_buf).or_else(|| self.cfg.course.checkpoint.as_deref().map(|p| self.resolve(p)))
    }

    fn driver(&self, controller: ControllerKind, checkpoint: Option<&Path>) -> Result<Driver> {
        Ok(match controller {
            ControllerKind::Projection => Driver::projection(self.cfg.controller),
            ControllerKind::Policy => Driver::policy(self.policy(checkpoint)?, self.cfg.env.heading_relative),
        })
    }

    fn policy(&self, checkpoint: Option<&Path>) -> Result<Mlp> {
        let path = self
            .checkpoint(checkpoint)
            .ok_or_else(|| Error::Config("policy controller needs --checkpoint or course.checkpoint".into()))?;
        load_policy(&path).map_err(|e| Error::Config(format!("cannot load policy {}: {e}", path.display())))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

/// One episode from the env's initial distribution under `seed`, driven by
/// `controller` toward the sampled command. Writes `sim_log.jsonl`.
pub fn sim(ctx: &Context, controller: ControllerKind, checkpoint: Option<&Path>) -> Result<String> {
    let cfg = Arc::new(ctx.cfg.clone());
    let mut env = Env::new(cfg.clone())?;
    env.reset(ctx.seed)?;
    let mut sim = env.simulator().cloned().ok_or_else(|| Error::Usage("environment did not reset".into()))?;
    let cmd = env.command();
    let mut driver = ctx.driver(controller, checkpoint)?;
    let id = controller.as_str();
    let mut log = TrajectoryLog::new(Header { controller: id.into(), seed: ctx.seed, waypoints: vec![] });
    let d = [cmd.direction().x, cmd.direction().y];
    let steps = env.max_steps();
    let mut diverged = None;
    log.push(Sample::from_state(&sim.state, Some(d), id, 0.0))?;
    'outer: for _ in 0..steps {
        let setpoint = driver.setpoint(&sim.robot, &sim.state, Some(&cmd))?;
        sim.motor.set_setpoint(setpoint);
        for _ in 0..cfg.substeps() {
            if let Err(e) = sim.step() {
                diverged = Some(e);
                break 'outer;
            }
        }
        log.push(Sample::from_state(&sim.state, Some(d), id, 0.0))?;
    }
    log.set_completed(diverged.is_none());
    let path = ctx.output("sim_log.jsonl")?;
    log.save(&path)?;
    let s = log.summary();
    let start = log.samples()[0].position;
    let end = sim.state.position;
    let along = (end[0] - start[0]) * d[0] + (end[1] - start[1]) * d[1];
    let mut out = format!(
        "sim: {id}, command ({:.3}, {:.3}), {:.1} s, path {:.3} m, speed {:.4} m/s, progress along command {:.3} m\n",
        d[0], d[1], s.duration, s.path_length, s.average_speed, along
    );
    if let Some(e) = diverged {
        let _ = writeln!(out, "simulation stopped early: {e}");
    }
    let _ = writeln!(out, "log: {}", path.display());
    Ok(out)
}

/// Trains from scratch under `--seed`; see `rock_ppo::train`.
pub fn train(ctx: &Context) -> Result<String> {
    let out = rock_ppo::train(&ctx.cfg, &ctx.config_text, ctx.seed, &ctx.out_dir)?;
    let mut text = format!("train: {} iterations\n", out.rows.len());
    if let Some(last) = out.rows.last() {
        let _ = writeln!(
            text,
            "final mean reward {:.4}, mean speed {:.4} m/s, action std {:.4}",
            last.mean_reward, last.mean_speed, last.action_std
        );
    }
    let _ = writeln!(text, "policy: {}\ncurve: {}", out.checkpoint.display(), out.curve.display());
    Ok(text)
}

/// Observations visited by the deterministic policy over one episode per seed.
pub fn policy_observations(policy: &Mlp, cfg: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
    let shared = Arc::new(cfg.clone());
    let robot = Arc::new(cfg.robot()?);
    let per_seed: Vec<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut env = Env::with_robot(shared.clone(), robot.clone());
            let mut obs = env.reset(seed)?;
            let mut out = vec![obs.to_vec()];
            loop {
                let step = env.step(policy_action(policy, &obs)?)?;
                if step.info.diverged {
                    break;
                }
                obs = step.observation;
                out.push(obs.to_vec());
                if step.done {
                    break;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// Seeds used by `quantize`: calibration and held-out episodes never overlap.
pub fn quantize_seeds(seed: u64, episodes: usize) -> (Vec<u64>, Vec<u64>) {
    let base = seed.wrapping_mul(1_000_003);
    let cal = (0..episodes as u64).map(|i| base.wrapping_add(i)).collect();
    let held = (0..episodes as u64).map(|i| base.wrapping_add(500_000 + i)).collect();
    (cal, held)
}

/// Calibrates int8 ranges on policy rollouts, writes `policy.q8` (+ `.meta`)
/// and `quant_report.txt` (per-layer ranges and held-out error).
pub fn quantize(ctx: &Context, checkpoint: Option<&Path>, episodes: usize) -> Result<String> {
    if episodes == 0 {
        return Err(Error::Usage("quantize needs at least one calibration episode".into()));
    }
    let policy = ctx.policy(checkpoint)?;
    let (cal_seeds, held_seeds) = quantize_seeds(ctx.seed, episodes);
    let calibration = policy_observations(&policy, &ctx.cfg, &cal_seeds)?;
    let held_out = policy_observations(&policy, &ctx.cfg, &held_seeds)?;
    let ranges = calibrate(&policy, &calibration)?;
    let q = quantize_with_ranges(&policy, &ranges)?;
    let (mut max_err, mut sum_err) = (0.0f64, 0.0);
    for obs in &held_out {
        let e = (q.forward(obs)? - policy_action(&policy, obs)?).abs();
        max_err = max_err.max(e);
        sum_err += e;
    }
    let path = ctx.output("policy.q8")?;
    save_quantized(&q, &path)?;
    write_sidecar(&path, &ctx.config_text, &[("seed", ctx.seed.to_string()), ("episodes", episodes.to_string())])?;

    let mut report = String::from("layer,calibrated_range\n");
    for (l, r) in ranges.iter().enumerate() {
        let _ = writeln!(report, "{l},{}", f(*r));
    }
    let _ = writeln!(report, "calibration_observations,{}", calibration.len());
    let _ = writeln!(report, "held_out_observations,{}", held_out.len());
    let _ = writeln!(report, "max_abs_error,{}", f(max_err));
    let _ = writeln!(report, "mean_abs_error,{}", f(sum_err / held_out.len().max(1) as f64));
    write(&ctx.output("quant_report.txt")?, &report)?;

    let latency = q.benchmark(&held_out[0], 200)?;
    Ok(format!(
        "quantize: {} layers, max |q - float| = {max_err:.5} over {} held-out observations\n\
         single inference {:.3} ms\nwrote {}\n",
        ranges.len(),
        held_out.len(),
        latency.as_secs_f64() * 1e3,
        path.display()
    ))
}

/// Waypoint course under `--seed`; writes `course_log.jsonl` and
/// `course_summary.json`.
pub fn eval_course(ctx: &Context, controller: ControllerKind, checkpoint: Option<&Path>) -> Result<String> {
    let course = WaypointCourse::from_config(&ctx.cfg.course)?;
    let mut driver = ctx.driver(controller, checkpoint)?;
    let run = follow_course(&mut driver, &course, &ctx.cfg, ctx.seed)?;
    run.log.save(&ctx.output("course_log.jsonl")?)?;
    let s = &run.summary;
    let summary = json!({
        "controller": controller.as_str(),
        "seed": ctx.seed,
        "completed": s.completed,
        "completion_time": s.completion_time,
        "duration": s.duration,
        "path_length": s.path_length,
        "average_speed": s.average_speed,
        "max_cross_track": s.max_cross_track,
        "waypoints_reached": run.reached,
        "control_steps": run.steps,
    });
    write(&ctx.output("course_summary.json")?, &format!("{:#}\n", summary))?;
    Ok(format!(
        "eval-course: {} {} in {:.1} s, path {:.3} m, average speed {:.4} m/s (hardware reference 0.13 m/s), \
         max cross-track {:.3} m, {}/{} waypoints\n",
        controller.as_str(),
        if s.completed { "completed" } else { "timed out" },
        s.duration,
        s.path_length,
        s.average_speed,
        s.max_cross_track,
        run.reached,
        course.waypoints.len()
    ))
}

/// Jump profile from the config's `[jump]` section; writes
/// `jump_history.csv` and `jump_report.json`.
pub fn eval_jump(ctx: &Context) -> Result<String> {
    let j = &ctx.cfg.jump;
    let trial = jump_trial(j, &ctx.cfg.dynamics, &j.profile)?;
    let mut csv = String::from("time,contact_count,clearance\n");
    for s in &trial.history {
        let _ = writeln!(csv, "{},{},{}", f(s.time), s.contact_count, f(s.clearance));
    }
    write(&ctx.output("jump_history.csv")?, &csv)?;
    let r = &trial.report;
    let report = json!({
        "airborne": r.airborne,
        "airborne_duration": r.duration,
        "clearance": r.clearance,
        "peak_clearance": trial.peak_clearance,
    });
    write(&ctx.output("jump_report.json")?, &format!("{:#}\n", report))?;
    Ok(format!(
        "eval-jump: airborne={} for {:.3} s, clearance {:.4} m\n",
        r.airborne, r.duration, r.clearance
    ))
}

/// Projection vs policy on every scenario file over `runs` seeds starting at
/// `--seed`. Writes `compare.csv` and `compare.txt`.
pub fn compare(ctx: &Context, scenarios: &[PathBuf], checkpoint: Option<&Path>, runs: usize) -> Result<String> {
    let seeds: Vec<u64> = (0..runs as u64).map(|i| ctx.seed.wrapping_add(i)).collect();
    let mut entries = Vec::new();
    for path in scenarios {
        let sc = Context::load(Some(path), ctx.seed, ctx.out_dir.clone())?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let policy = sc.policy(checkpoint)?;
        for (controller, policy) in [(ControllerKind::Projection, None), (ControllerKind::Policy, Some(policy))] {
            entries.push(CompareEntry {
                scenario: name.clone(),
                cfg: sc.cfg.clone(),
                controller,
                policy,
                seeds: seeds.clone(),
            });
        }
    }
    let rows = compare_controllers(&entries)?;
    let text = compare::to_text(&rows);
    write(&ctx.output("compare.csv")?, &compare::to_csv(&rows))?;
    write(&ctx.output("compare.txt")?, &text)?;
    Ok(text)
}

/// Runs the teleop server until `duration` elapses (forever if `None`).
/// `--flight-log` overrides `teleop.flight_log`.
pub fn serve(
    ctx: &Context,
    port: Option<u16>,
    checkpoint: Option<&Path>,
    flight_log: Option<PathBuf>,
    duration: Option<Duration>,
) -> Result<String> {
    let policy = match ctx.checkpoint(checkpoint) {
        Some(_) => Some(ctx.policy(checkpoint)?),
        None => None,
    };
    let flight_log = flight_log.or_else(|| ctx.cfg.teleop.flight_log.as_deref().map(|p| ctx.resolve(p)));
    let opts = ServeOptions { port: port.unwrap_or(ctx.cfg.teleop.port), seed: ctx.seed, policy, flight_log };
    let server = TeleopServer::start(Arc::new(ctx.cfg.clone()), opts)?;
    eprintln!("serving on {} (newline JSON or WebSocket)", server.local_addr());
    let flag = server.shutdown_flag();
    let started = Instant::now();
    while duration.is_none_or(|d| started.elapsed() < d) {
        std::thread::sleep(Duration::from_millis(50));
    }
    flag.store(true, Ordering::SeqCst);
    server.wait();
    Ok("serve: stopped\n".into())
}

/// Recomputes per-segment metrics from a flight log; writes `replay.csv`.
pub fn replay(ctx: &Context, flight_log: &Path) -> Result<String> {
    let records = rock_core::log::read_jsonl(flight_log)?;
    let segments = replay_records(&records)?;
    let mut csv = String::from("segment,session,seed,frames,duration,path_length,average_speed\n");
    for (i, s) in segments.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{i},{},{},{},{},{},{}",
            s.session,
            s.seed,
            s.samples.len(),
            f(s.summary.duration),
            f(s.summary.path_length),
            f(s.summary.average_speed)
        );
    }
    write(&ctx.output("replay.csv")?, &csv)?;
    Ok(csv)
}
