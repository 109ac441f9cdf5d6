use std::path::Path;
use std::process::{Command, Output};

fn regunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regunet"))
        .args(args)
        .output()
        .expect("run the regunet binary")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(path: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--out",
        p(path),
        "--n",
        "160",
        "--flip-rate",
        "0.1",
        "--seed",
        "4",
    ];
    args.extend_from_slice(extra);
    let o = regunet(&args);
    assert!(o.status.success(), "{o:?}");
}

fn small_train(data: &Path, out: &Path) -> Output {
    regunet(&[
        "train",
        "--data",
        p(data),
        "--variant",
        "l2_reg",
        "--epochs",
        "4",
        "--hidden-width",
        "16",
        "--head-width",
        "8",
        "--seed",
        "7",
        "--out",
        p(out),
    ])
}

#[test]
fn train_then_eval_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    synth(&data, &[]);
    let out = dir.path().join("run");
    let o = small_train(&data, &out);
    assert!(o.status.success(), "{o:?}");
    assert!(o.stderr.is_empty(), "success must not write to stderr");
    for f in [
        "history.csv",
        "history.json",
        "checkpoint.json",
        "resolved-config.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary = stdout(&o);
    let fields: Vec<&str> = summary.trim().split(' ').collect();
    assert_eq!(fields.len(), 5);
    assert_eq!(fields[0], "l2_reg");
    assert!(fields[1..]
        .iter()
        .all(|f| f.ends_with('%') && f.split('.').nth(1).unwrap().len() == 3));

    let ckpt = out.join("checkpoint.json");
    let val = regunet(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--subset",
        "val",
    ]);
    let train = regunet(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--subset",
        "train",
    ]);
    assert!(val.status.success() && train.status.success());
    let pick = |o: &Output| -> Vec<String> {
        let s = stdout(o);
        let w: Vec<&str> = s.split_whitespace().collect();
        vec![w[4].to_string(), w[6].to_string()]
    };
    let (v, t) = (pick(&val), pick(&train));
    assert_eq!(
        [t[0].as_str(), v[0].as_str(), t[1].as_str(), v[1].as_str()],
        [fields[1], fields[2], fields[3], fields[4]]
    );
}

#[test]
fn eval_rejects_mismatched_features_and_bad_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    synth(&data, &[]);
    let out = dir.path().join("run");
    assert!(small_train(&data, &out).status.success());
    let narrow = dir.path().join("narrow.csv");
    synth(&narrow, &["--dim", "40"]);
    let o = regunet(&[
        "eval",
        "--checkpoint",
        p(&out.join("checkpoint.json")),
        "--data",
        p(&narrow),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("40 feature columns"));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{}").unwrap();
    let o = regunet(&["eval", "--checkpoint", p(&broken), "--data", p(&data)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn raising_the_threshold_only_moves_borderline_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    synth(&data, &[]);
    let out = dir.path().join("run");
    assert!(small_train(&data, &out).status.success());
    let ckpt = out.join("checkpoint.json");
    let acc = |t: &str| -> f64 {
        let o = regunet(&[
            "eval",
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&data),
            "--threshold",
            t,
        ]);
        assert!(o.status.success(), "{o:?}");
        stdout(&o)
            .split_whitespace()
            .nth(4)
            .unwrap()
            .trim_end_matches('%')
            .parse()
            .unwrap()
    };

    // Oracle: only rows with probability in [0.5, 0.6) can change class.
    let loaded = regunet::load_checkpoint(&ckpt).unwrap();
    let record = loaded.data.unwrap();
    let (raw, _) =
        regunet::load_csv(&data, &record.label_column, regunet::MissingPolicy::Drop).unwrap();
    let ds = raw.apply_standardizer(record.standardization).unwrap();
    let probs = loaded.model.predict(ds.x()).unwrap();
    let borderline: Vec<usize> = (0..ds.len())
        .filter(|&i| (0.5..0.6).contains(&probs.get(i, 0)))
        .collect();
    let gained = borderline
        .iter()
        .filter(|&&i| ds.y().get(i, 0) == 0.0)
        .count() as f64;
    let lost = borderline.len() as f64 - gained;
    let expected = acc("0.5") + 100.0 * (gained - lost) / ds.len() as f64;
    assert!(
        (acc("0.6") - expected).abs() < 0.006,
        "{} vs {expected}",
        acc("0.6")
    );

    let o = regunet(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--threshold",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    synth(&data, &[]);
    let o = regunet(&[
        "train",
        "--data",
        p(&data),
        "--label",
        "Outcome",
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Outcome"));

    assert_eq!(regunet(&["train"]).status.code(), Some(1));
    assert_eq!(
        regunet(&["train", "--synthetic", "--variant", "deep"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        regunet(&[
            "train",
            "--synthetic",
            "--epochs",
            "0",
            "--out",
            p(&dir.path().join("y"))
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(regunet(&["nonsense"]).status.code(), Some(1));
    assert_eq!(regunet(&["--help"]).status.code(), Some(0));

    let o = regunet(&[
        "train",
        "--synthetic",
        "--n",
        "60",
        "--epochs",
        "3",
        "--hidden-width",
        "8",
        "--head-width",
        "4",
        "--lr",
        "1e300",
        "--alpha",
        "0",
        "--out",
        p(&dir.path().join("z")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn params_table() {
    let o = regunet(&[
        "params",
        "--variant",
        "residual_concat",
        "--expect",
        "1750273",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("branch0.residual_add"));
    assert!(text.trim_end().ends_with("total 1750273"));
    let o = regunet(&[
        "params",
        "--variant",
        "l1_reg",
        "--branch-only",
        "--expect",
        "809472",
    ]);
    assert!(o.status.success());
    assert!(!stdout(&o).contains("head."));
    let o = regunet(&["params", "--variant", "concat", "--expect", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_command() {
    let o = regunet(&["gradcheck"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = regunet(&["gradcheck", "--variant", "concat"]);
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("concat"));
    let o = regunet(&["gradcheck", "--variant", "concat", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("concat") && err.contains("branch0.dense1.weight"),
        "{err}"
    );
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("run");
    std::fs::write(
        &cfg,
        format!("synthetic = true\nn = 80\nvariant = l1_reg\nepochs = 5\nhidden_width = 8\nhead_width = 4\nout = {}\n", p(&out)),
    )
    .unwrap();
    let o = regunet(&[
        "train",
        "--config",
        p(&cfg),
        "--epochs",
        "2",
        "--variant",
        "concat",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("concat "));
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("resolved-config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["epochs"], 2);
    assert_eq!(resolved["n"], 80);
    assert_eq!(resolved["variant"], "concat");
    assert_eq!(
        std::fs::read_to_string(out.join("history.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn missing_cells_are_reported_or_imputed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    synth(&data, &[]);
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[5].split(',').collect();
    cells[2] = "";
    lines[5] = cells.join(",");
    std::fs::write(&data, lines.join("\n") + "\n").unwrap();

    let run = |impute: &str, out: &str| {
        regunet(&[
            "train",
            "--data",
            p(&data),
            "--epochs",
            "1",
            "--hidden-width",
            "8",
            "--head-width",
            "4",
            "--impute",
            impute,
            "--out",
            p(&dir.path().join(out)),
        ])
    };
    let dropped = run("none", "a");
    assert!(dropped.status.success(), "{dropped:?}");
    assert!(String::from_utf8_lossy(&dropped.stderr).contains("dropped 1 of 160 rows"));
    let imputed = run("median", "b");
    assert!(imputed.status.success());
    assert!(imputed.stderr.is_empty());
}
