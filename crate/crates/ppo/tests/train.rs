use rock_core::checkpoint::{config_hash, load_policy, read_sidecar_hash};
use rock_core::config::ScenarioConfig;
use rock_ppo::train::CURVE_HEADER;
use rock_ppo::{evaluate_speed, train};

fn tiny(iterations: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.env.roughness = 0.0;
    cfg.env.episode_length = 0.3;
    cfg.train.num_envs = 2;
    cfg.train.horizon = 8;
    cfg.train.iterations = iterations;
    cfg.train.hidden = vec![8];
    cfg.train.minibatch_size = 8;
    cfg.train.checkpoint_every = 2;
    cfg
}

#[test]
fn zero_iterations_write_untrained_checkpoint_and_empty_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(0);
    let text = cfg.to_toml();
    let out = train(&cfg, &text, 3, dir.path()).unwrap();
    assert!(out.rows.is_empty());
    assert_eq!(std::fs::read_to_string(&out.curve).unwrap(), format!("{CURVE_HEADER}\n"));
    let net = load_policy(&out.checkpoint).unwrap();
    assert_eq!(net, out.policy.export());
    assert_eq!(net.widths(), &[45, 8, 1]);
    assert_eq!(read_sidecar_hash(&out.checkpoint).unwrap(), config_hash(&text));
}

#[test]
fn same_seed_gives_identical_learning_curves() {
    let cfg = tiny(3);
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = train(&cfg, "", 9, a_dir.path()).unwrap();
    let b = train(&cfg, "", 9, b_dir.path()).unwrap();
    assert_eq!(a.rows.len(), 3);
    assert_eq!(std::fs::read(&a.curve).unwrap(), std::fs::read(&b.curve).unwrap());
    assert_eq!(std::fs::read(&a.checkpoint).unwrap(), std::fs::read(&b.checkpoint).unwrap());
    assert!(a_dir.path().join("checkpoints/policy_0002.bin").exists());
    assert!(a_dir.path().join("value.bin").exists());

    let c_dir = tempfile::tempdir().unwrap();
    let c = train(&cfg, "", 10, c_dir.path()).unwrap();
    assert_ne!(c.rows, a.rows);
}

#[test]
fn unwritable_output_aborts_with_partial_note() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = train(&tiny(1), "", 1, &blocker.join("out")).unwrap_err();
    assert!(err.to_string().contains("partial results"), "{err}");
}

#[test]
fn evaluation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(0);
    let out = train(&cfg, "", 4, dir.path()).unwrap();
    let net = out.policy.export();
    let a = evaluate_speed(&net, &cfg, &[1, 2, 3]).unwrap();
    let b = evaluate_speed(&net, &cfg, &[1, 2, 3]).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(evaluate_speed(&net, &cfg, &[]).is_err());
}
