use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pfos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfos")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pfos(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "# tiny model\nd=16\nheads=2\ncross_layers=1\nfusion_layers=1\ngrid_channels=16\nffn_dim=32\nbatch_size=4\nepochs=3\n";

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();

    let out = ok(&["gen-data", "--out", s(&data), "--n", "16", "--seed", "5", "--categories", "absolute:1,relation:1", "--n-val", "4", "--n-test", "4"]);
    assert!(out.contains("train: 16 samples"));
    assert!(data.join("vocab.txt").exists());

    // `--set` overrides the file.
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--set", "epochs=2"]);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("epoch,lr,loss_total,loss_cls,loss_off,loss_rgr,loss_giou,val_acc\n"));
    let written = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(written.contains("epochs=2\n") && written.contains("d=16\n"));

    let ckpt = run.join("best.ckpt");
    let report = dir.path().join("report.txt");
    let text = ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&report)]);
    assert!(text.contains("accuracy@0.5"));
    assert!(fs::read_to_string(dir.path().join("report.txt.csv")).unwrap().starts_with("metric,value\n"));
    let preds = fs::read_to_string(dir.path().join("report.txt.predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 5);
    assert!(preds.starts_with("sample_id,x_t,y_t,w_t,h_t,score\n"));

    // A checkpoint checked against a different architecture is refused.
    let wide = dir.path().join("wide.cfg");
    fs::write(&wide, TINY.replace("d=16", "d=32")).unwrap();
    let out = pfos(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&report), "--config", s(&wide)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    let maps = dir.path().join("maps");
    ok(&["heatmap", "--ckpt", s(&ckpt), "--sample", "1", "--out", s(&maps), "--data", s(&data)]);
    assert!(maps.join("fusion0_words.csv").exists() && maps.join("fusion0_grid.csv").exists());
    assert!(maps.join("prediction.txt").exists());
    assert!(!pfos(&["heatmap", "--ckpt", s(&ckpt), "--sample", "99", "--out", s(&maps), "--data", s(&data)]).status.success());

    let grid = dir.path().join("grid.txt");
    fs::write(&grid, "baseline: ablation=concat-baseline\nfull: ablation=full\n").unwrap();
    let abl = dir.path().join("abl");
    let table = ok(&["ablate", "--grid", s(&grid), "--data", s(&data), "--config", s(&cfg), "--set", "epochs=1", "--out", s(&abl)]);
    assert_eq!(table.lines().count(), 3);
    assert_eq!(fs::read_to_string(abl.join("ablation.csv")).unwrap().lines().count(), 3);
    assert!(abl.join("full").join("metrics.csv").exists());

    fs::write(&grid, "only: ablation=full\n").unwrap();
    assert!(!pfos(&["ablate", "--grid", s(&grid), "--data", s(&data)]).status.success());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!pfos(&["gen-data", "--out", s(dir.path()), "--n", "4", "--categories", "bogus"]).status.success());
    assert!(!pfos(&["train", "--data", s(dir.path()), "--out", s(dir.path()), "--set", "nokey"]).status.success());
    assert!(!pfos(&["train", "--data", s(&dir.path().join("missing")), "--out", s(dir.path())]).status.success());
}
