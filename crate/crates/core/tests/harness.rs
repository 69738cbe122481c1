mod common;

use std::fs;
use std::path::Path;

use uavnet::harness::checkpoint::Checkpoint;
use uavnet::harness::commands::{self, cmd_adapt, cmd_eval, cmd_export_traj, cmd_meta_train, cmd_train};
use uavnet::harness::{metrics, Algo, ExperimentConfig};

fn serial_smoke(updates: u64) -> ExperimentConfig {
    let mut cfg = common::smoke();
    cfg.train.serial = true;
    cfg.train.num_workers = 1;
    cfg.train.max_updates = updates;
    cfg.meta.parallel = false;
    cfg
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn serial_training_writes_one_row_per_update_reproducibly() {
    let cfg = serial_smoke(10);
    let (a, b) = (tmp(), tmp());
    let out = cmd_train(&cfg, 3, a.path()).unwrap();
    cmd_train(&cfg, 3, b.path()).unwrap();
    assert_eq!(out.rows, 10);
    let text = fs::read_to_string(a.path().join(commands::METRICS_FILE)).unwrap();
    assert!(text.starts_with("# schema: uavnet-train v1\n"));
    let (header, rows) = metrics::read_table(&a.path().join(commands::METRICS_FILE)).unwrap();
    assert_eq!(header, metrics::TRAIN_HEADER);
    assert_eq!(rows.len(), 10);
    assert_eq!(text, fs::read_to_string(b.path().join(commands::METRICS_FILE)).unwrap());
}

#[test]
fn both_algorithms_share_the_metrics_schema() {
    let mut cfg = serial_smoke(3);
    cfg.meta.iterations = 2;
    cfg.meta.meta_batch = 2;
    cfg.meta.inner_steps = 1;
    let (a, b) = (tmp(), tmp());
    cmd_train(&cfg, 0, a.path()).unwrap();
    let m = cmd_meta_train(&cfg, 0, b.path()).unwrap();
    assert_eq!(m.rows, 2);
    let ha = metrics::read_table(&a.path().join(commands::METRICS_FILE)).unwrap().0;
    let (hb, rows) = metrics::read_table(&b.path().join(commands::METRICS_FILE)).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(rows[1][1], "meta-a3c");
    assert_eq!(rows[1][3].split(';').count(), 2);
    let ck = Checkpoint::load(&m.checkpoint).unwrap();
    assert_eq!((ck.algo, ck.counter), (Algo::MetaA3c, 2));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let cfg = serial_smoke(5);
    let dir = tmp();
    let out = cmd_train(&cfg, 1, dir.path()).unwrap();
    let ck = Checkpoint::load(&out.checkpoint).unwrap();
    assert_eq!(ck.model, out.model);
    assert_eq!(Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap(), ck);

    let (s, t) = common::world(&cfg);
    let seeds = cfg.eval.seeds();
    let direct = uavnet::a3c::evaluate_policy(&out.model, &s, &t, &seeds).unwrap();
    let rows = cmd_eval(&cfg, Some(&out.checkpoint), &[], 0, &dir.path().join("eval")).unwrap();
    assert_eq!(rows[0].stats, direct);
}

#[test]
fn bad_checkpoints_are_rejected() {
    let cfg = serial_smoke(2);
    let dir = tmp();
    let out = cmd_train(&cfg, 1, dir.path()).unwrap();
    let mut bytes = fs::read(&out.checkpoint).unwrap();
    bytes[8] = 99;
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, &bytes).unwrap();
    let e = Checkpoint::load(&bad).unwrap_err();
    assert_eq!(e.to_string(), "unsupported checkpoint version");

    fs::write(&bad, b"not a checkpoint").unwrap();
    assert!(Checkpoint::load(&bad).is_err());

    let other = common::default_preset();
    let e = commands::load_model(&other, Some(&out.checkpoint), 0).unwrap_err();
    assert!(e.to_string().starts_with("scenario fingerprint mismatch"), "{e}");
}

#[test]
fn user_sweep_gives_one_row_per_count() {
    let mut cfg = common::smoke();
    cfg.eval.episodes = 1;
    let dir = tmp();
    let rows = cmd_eval(&cfg, None, &[20, 60, 100], 0, dir.path()).unwrap();
    assert_eq!(rows.iter().map(|r| r.users).collect::<Vec<_>>(), vec![20, 60, 100]);
    let (header, table) = metrics::read_table(&dir.path().join("eval.csv")).unwrap();
    assert_eq!(table.len(), 3);
    assert_eq!(header.len(), 6 + 11);
    assert!(cmd_eval(&cfg, None, &[0], 0, dir.path()).is_err());
}

#[test]
fn trajectory_export_covers_every_vehicle_and_user() {
    let cfg = common::default_preset();
    let dir = tmp();
    let rows = cmd_export_traj(&cfg, None, 0, 0, 0, dir.path()).unwrap();
    assert_eq!(rows.len(), (4 + 4) * 26 + 100);
    let (_, table) = metrics::read_table(&dir.path().join("traj.csv")).unwrap();
    assert_eq!(table.len(), rows.len());
    assert!(rows.iter().filter(|r| r.slot == 0).all(|r| r.reward.is_none()));
    assert!(rows.iter().filter(|r| r.slot > 0).all(|r| r.reward.is_some()));
}

fn adapt_table(cfg: &ExperimentConfig, ckpt: &Path, steps: usize, dir: &Path) -> String {
    let r = cmd_adapt(cfg, ckpt, 11, steps, 4, dir).unwrap();
    if steps == 0 {
        assert_eq!(r.pre, r.post);
    }
    fs::read_to_string(dir.join("adapt.csv")).unwrap()
}

#[test]
fn adaptation_is_reproducible() {
    let mut cfg = serial_smoke(3);
    cfg.eval.episodes = 2;
    let dir = tmp();
    let out = cmd_train(&cfg, 1, dir.path()).unwrap();
    adapt_table(&cfg, &out.checkpoint, 0, &dir.path().join("k0"));
    let a = adapt_table(&cfg, &out.checkpoint, 2, &dir.path().join("a"));
    let b = adapt_table(&cfg, &out.checkpoint, 2, &dir.path().join("b"));
    assert_eq!(a, b);
    assert!(dir.path().join("a/adapted.bin").exists());
}

#[test]
fn bench_rejects_too_few_repetitions() {
    let cfg = common::smoke();
    let dir = tmp();
    assert!(commands::cmd_bench(std::slice::from_ref(&cfg), &[Algo::A3c], 4, 0, dir.path()).is_err());
    let rows = commands::cmd_bench(&[cfg], &[Algo::A3c, Algo::MetaA3c], 5, 0, dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.reps == 5 && r.mean_episode_secs > 0.0 && r.std_episode_secs.is_finite()));
}

#[test]
fn config_round_trips_through_toml() {
    for cfg in [common::smoke(), common::default_preset()] {
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint().unwrap(), cfg.fingerprint().unwrap());
    }
    assert!(ExperimentConfig::from_toml_str("no_such_field = 1").is_err());
}
