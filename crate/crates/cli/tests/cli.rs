use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use arclab::harness::ExperimentConfig;

fn arc_lab(out_root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arc-lab"))
        .args(args)
        .env("ARC_LAB_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.model.width = 16;
    cfg.model.hidden_layers = 3;
    cfg.model.head_width = 8;
    cfg.pretrain.iterations = 60;
    cfg.pretrain.batch_size = 32;
    cfg.pretrain.log_every = 20;
    cfg.pretrain.validate_every = 20;
    cfg.pretrain.validation_size = 128;
    cfg.posttrain.iterations = 6;
    cfg.posttrain.batch_size = 16;
    cfg.posttrain.log_every = 3;
    cfg.eval.samples_per_class = 32;
    cfg.eval.euler_steps = vec![4];
    cfg.eval.pingpong_steps = vec![2];
    cfg.eval.classifier.train_samples = 256;
    cfg.eval.classifier.epochs = 1;
    cfg.eval.measure_time = false;
    let path = dir.join("tiny.toml");
    cfg.save(&path).unwrap();
    path
}

fn pretrained(dir: &Path) -> PathBuf {
    let cfg = tiny_config(dir);
    let o = arc_lab(dir, &["-q", "pretrain", "--config", cfg.to_str().unwrap(), "--run-name", "pre"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = PathBuf::from(stdout(&o).trim());
    assert!(ckpt.exists());
    ckpt
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = arc_lab(dir.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_or_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["train"][..], &["plot", "--metric", "x.csv", "--out", "o"][..]] {
        let o = arc_lab(dir.path(), args);
        assert_eq!(code(&o), 2);
        assert!(stderr(&o).contains("Usage"));
    }
}

#[test]
fn version_is_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let o = arc_lab(dir.path(), &["--version"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), format!("arc-lab {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["pretrain", "posttrain", "sample", "transfer", "eval", "ablate", "plot"] {
        let o = arc_lab(dir.path(), &[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn config_errors_exit_2_and_missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[pretrain]\nitertions = 3\n").unwrap();
    let o = arc_lab(dir.path(), &["pretrain", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let missing = dir.path().join("nope.toml");
    let o = arc_lab(dir.path(), &["pretrain", "--config", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let o = arc_lab(
        dir.path(),
        &["sample", "--ckpt", "nope.ckpt", "--prompt", "0", "--out", dir.path().to_str().unwrap()],
    );
    assert_eq!(code(&o), 4);
    let cfg = tiny_config(dir.path());
    let o = arc_lab(
        dir.path(),
        &["posttrain", "--config", cfg.to_str().unwrap(), "--init", "x.ckpt", "--variant", "arc2"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_3_and_keeps_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&tiny_config(dir.path())).unwrap();
    cfg.pretrain.lr = 1e300;
    cfg.pretrain.final_lr = 1e300;
    let path = dir.path().join("hot.toml");
    cfg.save(&path).unwrap();
    let o = arc_lab(dir.path(), &["-q", "pretrain", "--config", path.to_str().unwrap(), "--run-name", "hot"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let run = dir.path().join("hot");
    assert!(run.join("checkpoints/pretrain_last_good.ckpt").exists());
    let manifest = fs::read_to_string(run.join("manifest.json")).unwrap();
    assert!(manifest.contains("failed: training diverged"), "{manifest}");
}

#[test]
fn sample_drives_pingpong_and_euler() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = pretrained(dir.path());
    let out = dir.path().join("samples");
    for (sampler, steps) in [("pingpong", "8"), ("pingpong", "1"), ("euler", "4")] {
        let o = arc_lab(
            dir.path(),
            &[
                "-q", "sample", "--ckpt", ckpt.to_str().unwrap(), "--sampler", sampler, "--steps", steps, "--prompt",
                "2", "--n", "5", "--seed", "3", "--out", out.to_str().unwrap(),
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let file = out.join(format!("{sampler}_{steps}.csv"));
        assert_eq!(stdout(&o).trim(), file.display().to_string());
        let rows = csv_rows(&file);
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.starts_with("2,") && r.ends_with(",3")));
    }
    let o = arc_lab(
        dir.path(),
        &["sample", "--ckpt", ckpt.to_str().unwrap(), "--prompt", "9", "--out", out.to_str().unwrap()],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn style_transfer_from_a_sample_file() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = pretrained(dir.path());
    let reference = dir.path().join("ref.csv");
    fs::write(&reference, "class_id,x0,x1\n0,4.0,0.0\n1,0.0,4.0\n3,-2.8,-2.8\n").unwrap();
    let out = dir.path().join("t");
    let o = arc_lab(
        dir.path(),
        &[
            "-q", "transfer", "--ckpt", ckpt.to_str().unwrap(), "--init-from", reference.to_str().unwrap(),
            "--tau-start", "0.6", "--prompt", "2", "--out", out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(Path::new(stdout(&o).trim()));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.starts_with("2,")));

    // the same through `sample --init-from`, keeping each row's class
    let o = arc_lab(
        dir.path(),
        &[
            "-q", "sample", "--ckpt", ckpt.to_str().unwrap(), "--init-from", reference.to_str().unwrap(),
            "--tau-start", "0.6", "--out", out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let classes: Vec<String> = csv_rows(Path::new(stdout(&o).trim()))
        .iter()
        .map(|r| r.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(classes, ["0", "1", "3"]);

    let o = arc_lab(
        dir.path(),
        &[
            "transfer", "--ckpt", ckpt.to_str().unwrap(), "--init-from", reference.to_str().unwrap(),
            "--tau-start", "0.05", "--out", out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 2, "no schedule level below tau");
}

#[test]
fn posttrain_and_eval_write_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = pretrained(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let o = arc_lab(
        dir.path(),
        &[
            "-q", "posttrain", "--config", cfg.to_str().unwrap(), "--init", ckpt.to_str().unwrap(), "--variant",
            "no_contrastive", "--order", "disc-then-gen", "--run-name", "post",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let gen = PathBuf::from(stdout(&o).lines().next().unwrap());
    assert!(gen.ends_with("checkpoints/no_contrastive_gen.ckpt"));
    let echoed = ExperimentConfig::load(&dir.path().join("post/config.toml")).unwrap();
    assert_eq!(echoed.posttrain.order, arclab::arcloss::UpdateOrder::DiscThenGen);

    let o = arc_lab(
        dir.path(),
        &["-q", "eval", "--config", cfg.to_str().unwrap(), "--ckpt", gen.to_str().unwrap(), "--run-name", "ev"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("ev");
    assert_eq!(csv_rows(&run.join("metrics.csv")).len(), 2);
    assert!(run.join("metrics.json").exists());
    assert!(run.join("plots/bar_sw.svg").exists() && run.join("plots/scatter_class0.svg").exists());
}

#[test]
fn ablate_writes_the_seven_row_table_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = arc_lab(dir.path(), &["-q", "ablate", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs: Vec<PathBuf> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    assert!(run.file_name().unwrap().to_string_lossy().starts_with("ablate-"));
    assert!(run.file_name().unwrap().to_string_lossy().ends_with("-seed5"));
    assert_eq!(csv_rows(&run.join("metrics.csv")).len(), 7);
    let plots: Vec<String> = fs::read_dir(run.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(plots.iter().filter(|p| p.starts_with("bar_")).count(), 8);
    assert_eq!(plots.iter().filter(|p| p.starts_with("scatter_class")).count(), 4);

    // re-plotting the same CSV gives byte-identical files
    let again = dir.path().join("again");
    let o = arc_lab(
        dir.path(),
        &["-q", "plot", "--metrics", run.join("metrics.csv").to_str().unwrap(), "--out", again.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for p in &plots {
        assert_eq!(fs::read(run.join("plots").join(p)).unwrap(), fs::read(again.join(p)).unwrap(), "{p}");
    }
}

#[test]
fn plot_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plots");
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let header_only = dir.path().join("header.csv");
    arclab::evalkit::MetricReport::write_csv(&[], &header_only).unwrap();
    for f in [&empty, &header_only] {
        let o = arc_lab(dir.path(), &["plot", "--metrics", f.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        assert!(stderr(&o).contains("nothing to plot"), "{}", stderr(&o));
        assert!(!out.exists());
    }
    let malformed = dir.path().join("bad.csv");
    fs::write(&malformed, "label,sw\narc@8,not-a-number\n").unwrap();
    let o = arc_lab(dir.path(), &["plot", "--metrics", malformed.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let missing = dir.path().join("missing.csv");
    let o = arc_lab(dir.path(), &["plot", "--metrics", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
}
