use std::path::Path;
use std::process::{Command, Output};

fn relpos(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relpos"))
        .args(args)
        .env("RELPOS_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn dump_sequence_nine() {
    let dir = tempfile::tempdir().unwrap();
    let out = relpos(&["dump-distances", "--n", "9", "--kind", "sequence"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "5 4 3 2 1 2 3 4 5");
    let file = std::fs::read_to_string(dir.path().join("distances_sequence_9.txt")).unwrap();
    assert!(file.starts_with("sequence 9 1 1\n"));
    assert_eq!(file.lines().count(), 10);
}

#[test]
fn dump_circle_sixteen_to_explicit_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/c16.txt");
    let out = relpos(
        &[
            "dump-distances",
            "--n",
            "16",
            "--kind",
            "circle",
            "--out",
            path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let values: Vec<f64> = stdout(&out).split_whitespace().map(|s| s.parse().unwrap()).collect();
    let r = std::f64::consts::SQRT_2;
    let expected = [
        2.0, r, r, 2.0, //
        r, 1.0, 1.0, r, //
        r, 1.0, 1.0, r, //
        2.0, r, r, 2.0,
    ];
    assert_eq!(values.len(), 16);
    for (v, e) in values.iter().zip(expected) {
        assert!((v - e).abs() < 1e-12, "{v} vs {e}");
    }
    assert!(path.is_file());
}

#[test]
fn dump_rejects_non_square() {
    let dir = tempfile::tempdir().unwrap();
    let out = relpos(&["dump-distances", "--n", "10"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not a perfect square"), "{}", stderr(&out));
    let out = relpos(&["dump-distances", "--n", "4"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

fn count_rows(text: &str) -> Vec<(String, usize, usize)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn param_count_at_vit_base_shape() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "param-count",
        "--set",
        "image_side=224",
        "--set",
        "patch_size=16",
        "--set",
        "channels=3",
        "--set",
        "embed_dim=768",
        "--set",
        "heads=12",
        "--set",
        "blocks=12",
        "--set",
        "mlp_ratio=4",
    ];
    let out = relpos(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = count_rows(&stdout(&out));
    let modes: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(modes, ["none", "pe", "sre", "cre", "sre_plus_pe", "cre_plus_pe"]);
    let get = |m: &str| rows.iter().find(|r| r.0 == m).unwrap().clone();
    assert_eq!(get("none").1, 0);
    assert_eq!(get("pe").1, 150_528);
    assert_eq!(get("sre").1, 768);
    assert_eq!(get("cre").1, 768);
    assert_eq!(get("sre_plus_pe").1, 150_528 + 768);
    assert_eq!(get("pe").2 - get("none").2, 150_528);
    assert_eq!(get("cre").2 - get("none").2, 768);
}

#[test]
fn param_count_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = relpos(&["param-count", "--set", "nonsense=1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "heads=3\n").unwrap();
    let out = relpos(&["param-count", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_by_default() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["pe", "sre", "cre_plus_pe"] {
        let set = format!("mode={mode}");
        let out = relpos(&["gradcheck", "--set", &set], dir.path());
        assert_eq!(out.status.code(), Some(0), "{mode}: {}{}", stdout(&out), stderr(&out));
        assert!(stdout(&out).contains("pos "), "{}", stdout(&out));
    }
}

#[test]
fn gradcheck_catches_corrupted_backward() {
    let dir = tempfile::tempdir().unwrap();
    let out = relpos(&["gradcheck", "--inject-fault", "gelu"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    let out = relpos(
        &["gradcheck", "--set", "mode=cre", "--inject-fault", "softmax"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
}

#[test]
fn gradcheck_guards_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = relpos(
        &["gradcheck", "--set", "image_side=16", "--set", "embed_dim=128"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n*D"), "{}", stderr(&out));
}

const QUICK: [&str; 10] = [
    "--set",
    "epochs=2",
    "--set",
    "count=32",
    "--set",
    "embed_dim=16",
    "--set",
    "batch_size=8",
    "--set",
    "blocks=1",
];

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--set", "mode=cre_plus_pe"];
    args.extend(QUICK);
    let a = relpos(&args, &dir.path().join("a"));
    let b = relpos(&args, &dir.path().join("b"));
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).starts_with("mode=cre_plus_pe eval_top1="), "{}", stdout(&a));
    let read = |sub: &str| std::fs::read(dir.path().join(sub).join("metrics_cre_plus_pe_seed0.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let csv = String::from_utf8(read("a")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("epoch,lr,train_loss,train_top1,eval_top1,wall_seconds")
    );
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("a/checkpoint_cre_plus_pe_seed0.txt").is_file());
}

#[test]
fn train_multiple_seeds_reports_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--seeds", "2", "--set", "seed=5", "--set", "mode=sre"];
    args.extend(QUICK);
    let out = relpos(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().last().unwrap().starts_with("mode=sre seeds=2 eval_top1="));
    assert!(dir.path().join("metrics_sre_seed5.csv").is_file());
    assert!(dir.path().join("metrics_sre_seed6.csv").is_file());
}

#[test]
fn train_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = relpos(&["train", "--set", "image_side=10"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = relpos(
        &["train", "--set", "data_format=csv", "--set", "data_csv=missing.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "0,1,2\n").unwrap();
    let set = format!("data_csv={}", csv.display());
    let out = relpos(&["train", "--set", "data_format=csv", "--set", &set], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn train_on_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for k in 0..16 {
        let label = k % 2;
        let pixels: Vec<String> = (0..36)
            .map(|i| if (i % 6 < 3) == (label == 0) { "255" } else { "0" }.to_string())
            .collect();
        text.push_str(&format!("{label},{}\n", pixels.join(",")));
    }
    let csv = dir.path().join("toy.csv");
    std::fs::write(&csv, text).unwrap();
    let set = format!("data_csv={}", csv.display());
    let out = relpos(
        &[
            "train",
            "--set",
            "data_format=csv",
            "--set",
            &set,
            "--set",
            "image_side=6",
            "--set",
            "embed_dim=8",
            "--set",
            "heads=2",
            "--set",
            "blocks=1",
            "--set",
            "epochs=1",
            "--set",
            "batch_size=4",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("mode=pe eval_top1="));
}
