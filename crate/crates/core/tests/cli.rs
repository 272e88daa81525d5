//! Command round-trips through the library entry points and the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dpgla::cli::{
    cmd_adapt, cmd_eval, cmd_filter, cmd_gen_scenes, cmd_mix, cmd_pretrain, cmd_report, AdaptOptions, EvalOptions,
    OutputLock, Run,
};
use dpgla::cli::commands::{label_path, list_scans, scan_path};
use dpgla::config::{RunConfig, Split};
use dpgla::io::{load_labels_for, load_scan, ClassMap};
use dpgla::report::parse_thresholds;
use dpgla::scene::{generate_scene, NUM_CLASSES};
use dpgla::trainer::load_checkpoint;
use dpgla::Error;

const SMALL: &str = "seed = 5
[scenes]
source_count = 3
target_count = 4
val_count = 2
[train]
batch_size = 2
iterations = 3
learning_rate = 0.5
pretrain_epochs = 20
pretrain_learning_rate = 2.0
teacher_period = 1
teacher_momentum = 0.99
[filter.schedule]
warmup = 1
period = 2
";

fn run_in(out: &Path, extra: &str) -> Run {
    let text = format!("{SMALL}{extra}");
    let mut config = RunConfig::from_toml(&text).unwrap();
    config.out = out.to_path_buf();
    Run {
        config,
        config_text: Some(text),
    }
}

fn prepared(out: &Path) -> Run {
    let run = run_in(out, "");
    cmd_gen_scenes(&run).unwrap();
    cmd_pretrain(&run).unwrap();
    run
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_scenes_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let s = cmd_gen_scenes(&run_in(&a, "")).unwrap();
    cmd_gen_scenes(&run_in(&b, "")).unwrap();
    for split in ["source", "target", "val"] {
        let (fa, fb) = (files_under(&a.join(split)), files_under(&b.join(split)));
        assert_eq!(fa, fb);
        for f in &fa {
            assert_eq!(fs::read(a.join(split).join(f)).unwrap(), fs::read(b.join(split).join(f)).unwrap());
        }
    }
    assert_eq!(list_scans(&a.join("source")).unwrap().len(), s.source);
    assert_eq!(list_scans(&a.join("target")).unwrap().len(), s.target);
    assert_eq!(list_scans(&a.join("val")).unwrap().len(), s.val);

    // Files hold the generator's output at f32 precision.
    let cfg = run_in(&a, "").config;
    let (cloud, labels) = generate_scene(&cfg.scenes.source, cfg.seed, 1).unwrap();
    let dir_s = a.join("source");
    let loaded = load_scan(scan_path(&dir_s, 1)).unwrap();
    let loaded_labels = load_labels_for(label_path(&dir_s, 1), &ClassMap::identity(NUM_CLASSES), loaded.len()).unwrap();
    assert_eq!(loaded_labels, labels);
    for (p, q) in loaded.positions().iter().zip(cloud.positions()) {
        for k in 0..3 {
            assert_eq!(p[k], q[k] as f32 as f64);
        }
    }
}

#[test]
fn config_is_echoed_and_timestamps_confined_to_meta() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_in(dir.path(), "");
    cmd_gen_scenes(&run).unwrap();
    let echoed = fs::read_to_string(dir.path().join("config/gen-scenes.toml")).unwrap();
    assert_eq!(Some(echoed), run.config_text);
    let resolved = fs::read_to_string(dir.path().join("config/gen-scenes.resolved.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&resolved).unwrap(), run.config);
    assert!(fs::read_to_string(dir.path().join("meta.txt")).unwrap().starts_with("gen-scenes started="));
    assert!(!dir.path().join(".dpgla.lock").exists());
}

#[test]
fn zero_iterations_leave_the_pretrain_checkpoint_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let run = run_in(dir.path(), "");
    let mut zero = run.clone();
    zero.config.train.iterations = 0;
    cmd_adapt(&zero, &AdaptOptions::default()).unwrap();
    assert_eq!(
        fs::read(dir.path().join("checkpoints/adapt.ckpt")).unwrap(),
        fs::read(dir.path().join("checkpoints/pretrain.ckpt")).unwrap()
    );
}

#[test]
fn filter_then_mix_reproduces_first_adapt_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let run = prepared(dir.path());
    let dump = dir.path().join("dump");
    cmd_adapt(
        &run,
        &AdaptOptions {
            checkpoint: None,
            dump_mixed: Some(dump.clone()),
        },
    )
    .unwrap();
    cmd_filter(&run, None).unwrap();
    cmd_mix(&run, None).unwrap();
    let batch = run.config.train.batch_size;
    let dumped = files_under(&dump);
    assert_eq!(dumped.len(), 2 * 3 * batch);
    for f in dumped {
        assert_eq!(
            fs::read(dump.join(&f)).unwrap(),
            fs::read(dir.path().join("mix").join(&f)).unwrap(),
            "{}",
            f.display()
        );
    }
}

#[test]
fn filter_counts_add_up() {
    let dir = tempfile::tempdir().unwrap();
    let run = prepared(dir.path());
    let r = cmd_filter(&run, None).unwrap();
    let csv = fs::read_to_string(dir.path().join("filter/retention.csv")).unwrap();
    let map = ClassMap::identity(NUM_CLASSES);
    let mut points = 0;
    for (i, path) in list_scans(&dir.path().join("target")).unwrap().iter().enumerate() {
        let n = load_scan(path).unwrap().len();
        points += n;
        let labels = load_labels_for(label_path(&dir.path().join("filter"), i), &map, n).unwrap();
        let kept = labels.as_slice().iter().filter(|&&l| l >= 0).count() as u64;
        assert!(kept <= n as u64);
    }
    let mut total = 0;
    for (c, line) in csv.lines().skip(1).enumerate() {
        let v: Vec<u64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[0] as usize, c);
        assert_eq!(v[2] + v[3], v[1]);
        assert!(v[4] <= v[3]);
        assert_eq!(v[1], r.total[c]);
        total += v[1];
    }
    assert_eq!(total as usize, points);
}

#[test]
fn eval_of_identical_labels_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_in(dir.path(), "");
    cmd_gen_scenes(&run).unwrap();
    let opts = EvalOptions {
        predictions: Some(dir.path().join("val")),
        ..EvalOptions::default()
    };
    let r = cmd_eval(&run, &opts).unwrap();
    assert_eq!(r.miou, 100.0);
    let csv = fs::read_to_string(dir.path().join("eval/iou.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("miou,,100"));
}

#[test]
fn report_matches_telemetry() {
    let dir = tempfile::tempdir().unwrap();
    let run = prepared(dir.path());
    let (state, tel) = cmd_adapt(&run, &AdaptOptions::default()).unwrap();
    let rep = cmd_report(&run, None).unwrap();
    let counted: u64 = rep.totals.iter().sum();
    assert_eq!(counted as usize, tel.samples.len());
    for c in 0..NUM_CLASSES {
        assert_eq!(rep.raw_histogram[c].iter().sum::<u64>(), rep.totals[c]);
    }
    let tel_dir = dir.path().join("telemetry");
    let parsed = parse_thresholds(&fs::read_to_string(tel_dir.join("thresholds.csv")).unwrap()).unwrap();
    assert_eq!(parsed, state.thresholds);
    assert_eq!(load_checkpoint(dir.path().join("checkpoints/adapt.ckpt")).unwrap(), state);
    let lines = fs::read_to_string(dir.path().join("report/thresholds.csv")).unwrap();
    let tau_g: f64 = lines
        .lines()
        .find(|l| l.starts_with("tau_global"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(tau_g, state.thresholds.global_threshold());
}

#[test]
fn lockfile_excludes_concurrent_runs() {
    let dir = tempfile::tempdir().unwrap();
    let held = OutputLock::acquire(dir.path()).unwrap();
    let err = cmd_gen_scenes(&run_in(dir.path(), "")).unwrap_err();
    assert!(matches!(err, Error::Locked { .. }));
    assert_eq!(err.exit_code(), 4);
    drop(held);
    cmd_gen_scenes(&run_in(dir.path(), "")).unwrap();
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_pretrain(&run_in(dir.path(), "")).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let err = cmd_eval(&run_in(dir.path(), ""), &EvalOptions { split: Split::Source, ..EvalOptions::default() }).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpgla"))
}

#[test]
fn binary_exit_codes_and_eval_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let ok = bin()
        .args(["gen-scenes", "--out"])
        .arg(&out)
        .env("DPGLA_CONFIG", &cfg)
        .status()
        .unwrap();
    assert!(ok.success());

    let eval = bin()
        .args(["--jobs", "1", "eval", "--pred"])
        .arg(out.join("val"))
        .arg("--out")
        .arg(&out)
        .env("DPGLA_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(eval.status.success());
    let text = String::from_utf8(eval.stdout).unwrap();
    assert!(text.contains("mIoU") && text.contains("100.0"), "{text}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearnig_rate = 1.0\n").unwrap();
    let code = bin().arg("--config").arg(&bad).arg("pretrain").status().unwrap().code();
    assert_eq!(code, Some(2));

    let code = bin()
        .arg("pretrain")
        .arg("--out")
        .arg(dir.path().join("empty"))
        .env_remove("DPGLA_CONFIG")
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(3));

    let code = bin().arg("no-such-command").status().unwrap().code();
    assert_eq!(code, Some(2));
}
