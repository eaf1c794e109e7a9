use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
schema_version = 1

[env]
episode_length = 1.0
roughness = 0.0

[train]
num_envs = 2
horizon = 16
minibatch_size = 16
epochs = 2
iterations = 2
hidden = [8, 8]
checkpoint_every = 1

[course]
timeout = 3.0
roughness = 0.005
"#;

fn rock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rock")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rock(args);
    assert!(out.status.success(), "rock {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    Fixture { config: config.to_str().unwrap().to_owned(), root, _dir: dir }
}

impl Fixture {
    fn out(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_owned()
    }

    /// Runs `args` twice into separate directories and checks the outputs
    /// are byte-identical.
    fn deterministic(&self, name: &str, args: &[&str]) -> BTreeMap<PathBuf, Vec<u8>> {
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = self.out(&format!("{name}_{tag}"));
                let mut full = vec!["--config", &self.config, "--seed", "7", "--out-dir", &out];
                full.extend_from_slice(args);
                ok(&full);
                snapshot(Path::new(&out))
            })
            .collect();
        assert!(!runs[0].is_empty(), "{name} wrote nothing");
        assert_eq!(runs[0], runs[1], "{name} is not reproducible");
        runs.into_iter().next().unwrap()
    }
}

#[test]
fn every_subcommand_is_reproducible() {
    let fx = fixture();
    let sim = fx.deterministic("sim", &["sim"]);
    assert!(sim.contains_key(Path::new("sim_log.jsonl")));

    let train = fx.deterministic("train", &["train"]);
    for f in ["policy.bin", "policy.bin.meta", "value.bin", "learning_curve.csv", "checkpoints/policy_0001.bin"] {
        assert!(train.contains_key(Path::new(f)), "missing {f}");
    }
    let checkpoint = fx.out("train_a/policy.bin");

    let quant = fx.deterministic("quantize", &["quantize", "--checkpoint", &checkpoint, "--episodes", "1"]);
    assert!(quant.contains_key(Path::new("policy.q8")));
    assert!(quant.contains_key(Path::new("quant_report.txt")));

    fx.deterministic("course", &["eval-course"]);
    fx.deterministic("course_policy", &["eval-course", "--controller", "policy", "--checkpoint", &checkpoint]);
    fx.deterministic("jump", &["eval-jump"]);
    let cmp = fx.deterministic("compare", &["compare", &fx.config, "--checkpoint", &checkpoint, "--runs", "2"]);
    let csv = String::from_utf8(cmp[Path::new("compare.csv")].clone()).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");

    let log = fx.root.join("flight.jsonl");
    fs::write(
        &log,
        concat!(
            r#"{"type":"session","id":"s","seed":1,"controller":"projection"}"#,
            "\n",
            r#"{"type":"state","t":0.1,"pos":[0,0,0.1],"quat":[1,0,0,0],"pendulum":1.5,"motor_vel":0,"command":null,"contact_count":1,"controller":"projection"}"#,
            "\n",
            r#"{"type":"state","t":0.2,"pos":[0.1,0,0.1],"quat":[1,0,0,0],"pendulum":1.5,"motor_vel":0,"command":[1,0],"contact_count":1,"controller":"projection"}"#,
            "\n"
        ),
    )
    .unwrap();
    let replay = fx.deterministic("replay", &["replay", log.to_str().unwrap()]);
    let csv = String::from_utf8(replay[Path::new("replay.csv")].clone()).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",1.000000"), "{csv}");
}

#[test]
fn compare_without_scenarios_prints_an_empty_table() {
    let fx = fixture();
    let out = ok(&["--out-dir", &fx.out("empty"), "compare"]);
    assert_eq!(out.lines().count(), 1);
}

#[test]
fn policy_without_checkpoint_is_a_config_error() {
    let fx = fixture();
    let out = rock(&["--out-dir", &fx.out("x"), "eval-course", "--controller", "policy"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
    let out = rock(&["--out-dir", &fx.out("y"), "compare", &fx.config]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let fx = fixture();
    let bad = fx.root.join("bad.toml");
    fs::write(&bad, "schema_version = 1\n[env]\nepisode_lenght = 3.0\n").unwrap();
    let out = rock(&["--config", bad.to_str().unwrap(), "eval-jump"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("episode_lenght"));
}

#[test]
fn serve_starts_and_stops() {
    let fx = fixture();
    let log = fx.out("serve_flight.jsonl");
    let out = ok(&["--config", &fx.config, "serve", "--port", "0", "--duration", "0.3", "--flight-log", &log]);
    assert!(out.contains("stopped"));
    assert!(fs::read_to_string(&log).unwrap().starts_with(r#"{"type":"session""#));
}
