use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use salnet_core::data::{read_image, write_image, ImageBuffer};

fn salnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salnet"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// `n` image/mask pairs of size `w×h`: a bright square on a textured ground.
fn dataset(dir: &Path, n: usize, w: usize, h: usize) -> PathBuf {
    let mut text = String::from("# fixture\n");
    for k in 0..n {
        let mut img = Vec::new();
        let mut mask = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let inside = x >= w / 4 + k % 3 && x < 3 * w / 4 && y >= h / 4 && y < 3 * h / 4;
                let base = ((x * 13 + y * 7 + k * 29) % 64) as u8;
                img.extend([base + if inside { 180 } else { 0 }, base, 255 - base]);
                mask.push(if inside { 255 } else { 0 });
            }
        }
        write_image(&ImageBuffer::new(w, h, 3, img).unwrap(), &dir.join(format!("img{k}.ppm"))).unwrap();
        write_image(&ImageBuffer::new(w, h, 1, mask).unwrap(), &dir.join(format!("img{k}.pgm"))).unwrap();
        writeln!(text, "img{k}.ppm\timg{k}.pgm").unwrap();
    }
    let m = dir.join("manifest.txt");
    std::fs::write(&m, text).unwrap();
    m
}

fn losses(out: &str) -> Vec<String> {
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("epoch,step,loss"));
    lines.map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
}

const TINY: &[&str] = &["--channel-scale", "0.0625", "--size", "32", "--threads", "1"];

fn train(extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    salnet(&args)
}

#[test]
fn help_lists_defaults_for_every_subcommand() {
    for (cmd, needle) in [
        ("train", "[default: 20]"),
        ("predict", "--out-dir"),
        ("eval", "[default: 0.09]"),
        ("pr-curve", "[default: 256]"),
        ("gradcheck", "[default: 0.01]"),
    ] {
        let o = salnet(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
        assert!(stdout(&o).contains(needle), "{cmd}: {}", stdout(&o));
    }
    assert_eq!(salnet(&["train", "--epochs", "x"]).status.code(), Some(2));
    assert_eq!(salnet(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn tiny_training_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 8, 40, 36);
    let ck = dir.path().join("out/ck.fcnw");
    std::fs::create_dir(dir.path().join("out")).unwrap();
    let log = dir.path().join("loss.csv");
    let o = train(&["--manifest", p(&m), "--out-checkpoint", p(&ck), "--epochs", "1", "--batch-size", "4", "--log-csv", p(&log)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(losses(&stdout(&o)).len(), 2);
    assert_eq!(std::fs::read_to_string(&log).unwrap(), stdout(&o));
    assert!(ck.exists());
    assert!(stderr(&o).contains("froze 26 encoder tensors"));
    assert!(stderr(&o).contains("epochs = 1 (flag)"));
}

#[test]
fn zero_learning_rate_gives_constant_losses() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 3, 32, 32);
    let ck = dir.path().join("ck.fcnw");
    let o = train(&["--manifest", p(&m), "--out-checkpoint", p(&ck), "--epochs", "3", "--batch-size", "3", "--lr", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let l = losses(&stdout(&o));
    assert_eq!(l.len(), 3);
    assert!(l.iter().all(|v| v == &l[0]));
}

#[test]
fn missing_manifest_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.fcnw");
    let o = train(&["--manifest", p(&dir.path().join("nope.txt")), "--out-checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.txt"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    // a manifest naming absent files is also refused up front
    std::fs::write(dir.path().join("m.txt"), "a.ppm\ta.pgm\n").unwrap();
    let o = train(&["--manifest", p(&dir.path().join("m.txt")), "--out-checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!ck.exists());
    assert_eq!(train(&["--out-checkpoint", p(&ck)]).status.code(), Some(2));
}

#[test]
fn equal_seeds_single_thread_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 5, 32, 32);
    let run = |name: &str| {
        let ck = dir.path().join(name);
        let o = train(&["--manifest", p(&m), "--out-checkpoint", p(&ck), "--epochs", "2", "--batch-size", "2", "--seed", "3", "--lr", "1e-3", "--freeze-encoder", "false"]);
        assert!(o.status.success(), "{}", stderr(&o));
        (stdout(&o), std::fs::read(ck).unwrap())
    };
    let (a, ca) = run("a.fcnw");
    let (b, cb) = run("b.fcnw");
    assert_eq!(losses(&a).len(), 6);
    assert_eq!(a, b);
    assert_eq!(ca, cb);
}

#[test]
fn flags_override_config_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 4, 32, 32);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("# shared settings\nmanifest = {}\nepochs = 3\nbatch-size = 4\nthreshold = 0.4\n", p(&m))).unwrap();
    let ck = dir.path().join("ck.fcnw");
    let o = train(&["--config", p(&cfg), "--out-checkpoint", p(&ck), "--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(losses(&stdout(&o)).len(), 1);
    let err = stderr(&o);
    assert!(err.contains("epochs = 1 (flag)"), "{err}");
    assert!(err.contains("batch_size = 4 (config)"));
    assert!(err.contains("lr = 0.0001 (default)"));
    assert!(err.contains("config key `threshold` is not used"));

    std::fs::write(&cfg, "epochs = many\n").unwrap();
    let o = train(&["--config", p(&cfg), "--manifest", p(&m), "--out-checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochs"));
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let m = dataset(dir, 2, 32, 32);
    let ck = dir.join("ck.fcnw");
    let o = train(&["--manifest", p(&m), "--out-checkpoint", p(&ck), "--epochs", "1", "--batch-size", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    ck
}

#[test]
fn predict_keeps_input_size_and_skips_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let ck = tiny_checkpoint(dir.path());
    let single = dir.path().join("big.ppm");
    write_image(&ImageBuffer::filled(100, 100, 3, 90), &single).unwrap();
    let out = dir.path().join("maps");
    let o = salnet(&["predict", "--checkpoint", p(&ck), "--input", p(&single), "--out-dir", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let map = read_image(&out.join("big.pgm")).unwrap();
    assert_eq!((map.width, map.height, map.channels), (100, 100, 1));

    let inputs = dir.path().join("in");
    std::fs::create_dir(&inputs).unwrap();
    write_image(&ImageBuffer::filled(48, 40, 3, 10), &inputs.join("a.ppm")).unwrap();
    write_image(&ImageBuffer::filled(30, 20, 1, 200), &inputs.join("b.pgm")).unwrap();
    std::fs::write(inputs.join("c.ppm"), b"P6\n4 4\n255\n\x01\x02").unwrap();
    std::fs::write(inputs.join("notes.txt"), "ignored").unwrap();
    let out = dir.path().join("dir_maps");
    let o = salnet(&["predict", "--checkpoint", p(&ck), "--input", p(&inputs), "--out-dir", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("skipping"));
    let mut names: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["a.pgm", "b.pgm"]);
    assert_eq!(read_image(&out.join("b.pgm")).unwrap().width, 30);

    std::fs::write(dir.path().join("junk.fcnw"), b"not a checkpoint").unwrap();
    let o = salnet(&["predict", "--checkpoint", p(&dir.path().join("junk.fcnw")), "--input", p(&single), "--out-dir", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

/// Masks from `dataset` plus prediction maps written under `pred/`.
fn eval_fixture(dir: &Path, preds: &[Vec<u8>]) -> (PathBuf, PathBuf) {
    let m = dataset(dir, preds.len(), 4, 2);
    let pred = dir.join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    for (k, data) in preds.iter().enumerate() {
        write_image(&ImageBuffer::new(4, 2, 1, data.clone()).unwrap(), &pred.join(format!("img{k}.pgm"))).unwrap();
    }
    (m, pred)
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn eval_perfect_predictions_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 4, 4, 2);
    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    for k in [0, 2] {
        std::fs::copy(dir.path().join(format!("img{k}.pgm")), pred.join(format!("img{k}.pgm"))).unwrap();
    }
    let o = salnet(&["eval", "--pred-dir", p(&pred), "--manifest", p(&m)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("image,precision,recall,f_measure,mae\n"));
    assert_eq!(out.lines().last(), Some("__average__,1.000000,1.000000,1.000000,0.000000"));
    assert_eq!(out.lines().count(), 4);
    let err = stderr(&o);
    assert!(err.contains("skipped 2 of 4") && err.contains("img1") && err.contains("img3"), "{err}");

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(salnet(&["eval", "--pred-dir", p(&empty), "--manifest", p(&m)]).status.code(), Some(2));
    assert_eq!(salnet(&["eval", "--manifest", p(&m)]).status.code(), Some(2));
}

#[test]
fn eval_matches_hand_recount_on_three_images() {
    // Masks of `dataset(…, 4, 2)` cover the first row only: x in 1..3, then x = 2, then nothing.
    let dir = tempfile::tempdir().unwrap();
    let preds = vec![
        vec![0, 255, 0, 0, 200, 200, 0, 0],
        vec![0, 0, 255, 255, 0, 0, 0, 0],
        vec![0; 8],
    ];
    let (m, pred) = eval_fixture(dir.path(), &preds);
    let gt: Vec<Vec<u8>> = (0..3).map(|k| read_image(&dir.path().join(format!("img{k}.pgm"))).unwrap().data).collect();
    let csv = dir.path().join("metrics/out.csv");
    let o = salnet(&["eval", "--pred-dir", p(&pred), "--manifest", p(&m), "--beta-squared", "0.3", "--out", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&std::fs::read_to_string(&csv).unwrap());
    let mut sums = [0.0f64; 4];
    for (k, (s, g)) in preds.iter().zip(&gt).enumerate() {
        let on = |v: u8, t: f64| v as f64 / 255.0 > t;
        let hits = (0..8).filter(|&i| on(s[i], 0.5) && g[i] == 255).count() as f64;
        let pred_n = (0..8).filter(|&i| on(s[i], 0.5)).count() as f64;
        let act = g.iter().filter(|&&v| v == 255).count() as f64;
        let (pr, rc) = match (pred_n == 0.0, act == 0.0) {
            (true, true) => (1.0, 1.0),
            (true, false) => (0.0, 0.0),
            (false, true) => (0.0, 1.0),
            _ => (hits / pred_n, hits / act),
        };
        let f = if pr + rc == 0.0 { 0.0 } else { 1.3 * pr * rc / (0.3 * pr + rc) };
        let e = (0..8).map(|i| (s[i] as f64 - g[i] as f64).abs() / 255.0).sum::<f64>() / 8.0;
        let want = [pr, rc, f, e];
        assert_eq!(rows[k][0], format!("img{k}"));
        for j in 0..4 {
            let got: f64 = rows[k][j + 1].parse().unwrap();
            assert!((got - want[j]).abs() < 1e-6, "img{k} column {j}: {got} vs {}", want[j]);
            sums[j] += want[j];
        }
    }
    let avg = &rows[3];
    assert_eq!(avg[0], "__average__");
    for j in 0..4 {
        assert!((avg[j + 1].parse::<f64>().unwrap() - sums[j] / 3.0).abs() < 1e-6);
    }
    assert!(stdout(&o).ends_with(&format!("{}\n", avg.join(","))));
}

#[test]
fn pr_curve_of_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 3, 8, 6);
    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    for k in 0..3 {
        std::fs::copy(dir.path().join(format!("img{k}.pgm")), pred.join(format!("img{k}.pgm"))).unwrap();
    }
    let out = dir.path().join("pr.csv");
    let o = salnet(&["pr-curve", "--pred-dir", p(&pred), "--manifest", p(&m), "--points", "11", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("threshold,precision,recall\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 11);
    // nothing exceeds the last threshold, so the prediction is empty there
    for r in &rows[..10] {
        assert_eq!(r[1], "1.000000");
    }
    let recall: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(recall.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(salnet(&["pr-curve", "--pred-dir", p(&pred), "--manifest", p(&m)]).status.code(), Some(2));
}

#[test]
fn eval_can_run_a_checkpoint_directly() {
    let dir = tempfile::tempdir().unwrap();
    let ck = tiny_checkpoint(dir.path());
    let o = salnet(&["eval", "--checkpoint", p(&ck), "--manifest", p(&dir.path().join("manifest.txt"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);
    let both = salnet(&["eval", "--checkpoint", p(&ck), "--pred-dir", "x", "--manifest", "m"]);
    assert_eq!(both.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let o = salnet(&["gradcheck", "--cases", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    for op in ["conv2d", "transpose_conv2d", "avg_pool2d", "max_pool2d", "relu", "sigmoid", "batch_norm", "l1_loss"] {
        assert!(out.contains(&format!("  {op}")), "{op}");
    }
    assert!(out.contains("all ops passed"));
    assert_eq!(salnet(&["gradcheck", "--epsilon", "0"]).status.code(), Some(2));
    let o = salnet(&["gradcheck", "--precision", "single", "--fault", "transpose_conv2d"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}
