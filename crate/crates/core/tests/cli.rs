use std::path::Path;
use std::process::{Command, Output};

fn umgad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umgad"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn prepare(dir: &Path) {
    assert!(umgad(
        dir,
        &["generate", "--nodes", "60", "--seed", "3", "--out", "g.ini"]
    )
    .status
    .success());
    let inj = umgad(
        dir,
        &[
            "inject",
            "--manifest",
            "g.ini",
            "--seed",
            "3",
            "--anomalies",
            "10",
            "--out",
            "inj.ini",
        ],
    );
    assert!(
        inj.status.success(),
        "{}",
        String::from_utf8_lossy(&inj.stderr)
    );
}

fn train(dir: &Path, out: &str) -> Output {
    umgad(
        dir,
        &[
            "train",
            "--manifest",
            "inj.ini",
            "--seed",
            "7",
            "--set",
            "train.epochs=3",
            "--set",
            "model.hidden_dim=8",
            "--out",
            out,
        ],
    )
}

#[test]
fn train_detect_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);

    let t = train(dir, "m.ckpt");
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    let text = stdout(&t);
    assert!(text.contains("epochs = 3") && text.contains("hidden_dim = 8"));
    assert!(dir.join("m.ckpt").exists());
    let log = std::fs::read_to_string(dir.join("m.ckpt.log.csv")).unwrap();
    assert!(log.starts_with("epoch,attr,struct,"));
    assert_eq!(log.lines().count(), 4);

    let d = umgad(
        dir,
        &[
            "detect",
            "--manifest",
            "inj.ini",
            "--ckpt",
            "m.ckpt",
            "--out",
            "report.csv",
            "--curve",
            "curve.csv",
        ],
    );
    assert!(d.status.success(), "{}", String::from_utf8_lossy(&d.stderr));
    assert!(stdout(&d).contains("auc="));
    let report = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(report
        .starts_with("node_id,score_original,score_attr_aug,score_sub_aug,score_fused,flag\n"));
    assert_eq!(report.lines().count(), 61);
    let curve = std::fs::read_to_string(dir.join("curve.csv")).unwrap();
    assert!(curve.starts_with("rank,score,smoothed\n"));

    let e = umgad(
        dir,
        &[
            "eval",
            "--scores",
            "report.csv",
            "--labels",
            "inj.labels.txt",
        ],
    );
    assert!(e.status.success());
    assert!(stdout(&e).lines().any(|l| l.starts_with("auc=")));

    let c = umgad(
        dir,
        &["curve", "--scores", "report.csv", "--out", "curve2.csv"],
    );
    assert!(c.status.success());
    assert_eq!(
        std::fs::read(dir.join("curve.csv")).unwrap(),
        std::fs::read(dir.join("curve2.csv")).unwrap()
    );
}

#[test]
fn identical_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    for name in ["a", "b"] {
        assert!(train(dir, &format!("{name}.ckpt")).status.success());
        let s = umgad(
            dir,
            &[
                "score",
                "--manifest",
                "inj.ini",
                "--ckpt",
                &format!("{name}.ckpt"),
                "--out",
                &format!("{name}.csv"),
            ],
        );
        assert!(s.status.success());
    }
    let read = |f: &str| std::fs::read(dir.join(f)).unwrap();
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.ckpt.log.csv"), read("b.ckpt.log.csv"));
}

#[test]
fn eval_of_perfect_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut scores =
        String::from("node_id,score_original,score_attr_aug,score_sub_aug,score_fused,flag\n");
    let mut labels = String::new();
    for i in 0..12 {
        let anomalous = i % 4 == 0;
        let s = if anomalous {
            5.0 + f64::from(i)
        } else {
            f64::from(i) / 10.0
        };
        scores.push_str(&format!("{i},{s},{s},{s},{s},{}\n", u8::from(anomalous)));
        labels.push_str(&format!("{i} {}\n", u8::from(anomalous)));
    }
    std::fs::write(dir.join("s.csv"), scores).unwrap();
    std::fs::write(dir.join("l.txt"), labels).unwrap();
    let e = umgad(dir, &["eval", "--scores", "s.csv", "--labels", "l.txt"]);
    assert!(e.status.success());
    let out = stdout(&e);
    assert!(out.contains("auc=1.0000"));
    assert!(out.contains("macro_f1=1.0000"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(umgad(dir, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        umgad(dir, &["config", "--set", "train.nonsense=1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        umgad(dir, &["config", "--set", "train.epochs=0"])
            .status
            .code(),
        Some(1)
    );
    let missing = umgad(
        dir,
        &["train", "--manifest", "absent.ini", "--out", "m.ckpt"],
    );
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&missing.stderr).lines().count(), 1);
    assert!(!dir.join("m.ckpt").exists());

    let zeros: String = std::iter::once("12 2\n".to_string())
        .chain((0..12).map(|_| "0 0\n".to_string()))
        .collect();
    let ring: String = (0..12).map(|i| format!("{i} {}\n", (i + 1) % 12)).collect();
    std::fs::write(dir.join("x.txt"), zeros).unwrap();
    std::fs::write(dir.join("e.txt"), ring).unwrap();
    std::fs::write(
        dir.join("z.ini"),
        "nodes=12\nfeatures=x.txt\nrelation.a=e.txt\n",
    )
    .unwrap();
    let z = umgad(
        dir,
        &[
            "train",
            "--manifest",
            "z.ini",
            "--set",
            "train.epochs=1",
            "--out",
            "z.ckpt",
        ],
    );
    assert_eq!(
        z.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&z.stderr)
    );
}

#[test]
fn dump_plans_writes_one_line_per_item() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let t = umgad(
        dir,
        &[
            "train",
            "--manifest",
            "inj.ini",
            "--set",
            "train.epochs=1",
            "--set",
            "mask.repeats=2",
            "--out",
            "m.ckpt",
            "--dump-plans",
            "plans.txt",
        ],
    );
    assert!(t.status.success());
    let plans = std::fs::read_to_string(dir.join("plans.txt")).unwrap();
    let attr = plans.lines().filter(|l| l.contains(" attr_mask ")).count();
    assert_eq!(attr, 2 * 12);
    assert!(plans.lines().any(|l| l.contains(" swap ")));
}
