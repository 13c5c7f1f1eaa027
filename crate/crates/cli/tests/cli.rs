use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn osr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osr"))
        .args(args)
        .env_remove("OSR_DATA_ROOT")
        .output()
        .expect("osr runs")
}

fn ok(args: &[&str]) -> String {
    let out = osr(args);
    assert!(
        out.status.success(),
        "osr {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = osr(args);
    assert!(!out.status.success(), "osr {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Two known classes, one negative, probabilities given directly.
const SCORES: &str = "\
# osr-scores v1 K=2 C=2 kind=probabilities
sample_id,label,v1,v2
a,1,0.9,0.1
b,1,0.3,0.7
c,2,0.2,0.8
d,0,0.6,0.4
e,0,0.5,0.5
";

#[test]
fn eval_prints_table_and_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("run.csv");
    let curve = dir.path().join("curve.csv");
    fs::write(&scores, SCORES).unwrap();
    let out = ok(&["eval", "--scores", s(&scores), "--oscr-out", s(&curve)]);
    assert!(out.starts_with("method"), "{out}");
    assert!(out.contains("run (negative)"), "{out}");
    // gamma+ = (0.9 + 0.3 + 0.8) / 3; without a background output each
    // negative adds 1/K: gamma- = ((1 - 0.6 + 0.5) + (1 - 0.5 + 0.5)) / 2.
    assert!(out.contains("   0.667   0.950"), "{out}");

    let text = fs::read_to_string(&curve).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("theta,fpr,ccr"));
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    // Two of the three knowns are correct.
    assert_eq!(first, vec![0.0, 1.0, 2.0 / 3.0]);
}

#[test]
fn eval_checks_scores_against_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let val = dir.path().join("val.txt");
    let classes = ok(&[
        "protocol",
        "--data-root",
        s(&data_root()),
        "--protocol",
        "p2",
        "--list-classes",
    ]);
    let mut t = String::new();
    let mut v = String::new();
    for line in classes.lines().skip(1) {
        let id = line.split('\t').nth(1).unwrap();
        for i in 0..5 {
            t.push_str(&format!("train/{id}_{i}.JPEG {id}\n"));
        }
        v.push_str(&format!("val/{id}.JPEG {id}\n"));
    }
    fs::write(&train, t).unwrap();
    fs::write(&val, v).unwrap();
    let manifest = dir.path().join("p2.csv");
    ok(&[
        "protocol",
        "--data-root",
        s(&data_root()),
        "--protocol",
        "p2",
        "--train-manifest",
        s(&train),
        "--val-manifest",
        s(&val),
        "-o",
        s(&manifest),
    ]);

    // First known class and the first negative, with correct labels.
    let k: Vec<f64> = (0..30)
        .map(|i| if i == 0 { 0.9 } else { 0.1 / 29.0 })
        .collect();
    let row = |id: &str, label: i64| {
        let vals: Vec<String> = k.iter().map(|x| x.to_string()).collect();
        format!("val/{id}.JPEG,{label},{}\n", vals.join(","))
    };
    let header = (1..=30)
        .map(|i| format!("v{i}"))
        .collect::<Vec<_>>()
        .join(",");
    let good = format!(
        "# osr-scores v1 K=30 C=30 kind=probabilities\nsample_id,label,{header}\n{}{}",
        row("n02087394", 1),
        row("n02096051", 0)
    );
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, &good).unwrap();
    ok(&["eval", "--scores", s(&scores), "--manifest", s(&manifest)]);

    let bad = good.replace("val/n02087394.JPEG,1,", "val/n02087394.JPEG,2,");
    fs::write(&scores, bad).unwrap();
    let err = fails(&["eval", "--scores", s(&scores), "--manifest", s(&manifest)]);
    assert!(err.contains("manifest says 1"), "{err}");

    let stranger = good.replace("val/n02087394.JPEG", "train/n02087394_0.JPEG");
    fs::write(&scores, stranger).unwrap();
    let err = fails(&["eval", "--scores", s(&scores), "--manifest", s(&manifest)]);
    assert!(err.contains("not a test sample"), "{err}");
}

#[test]
fn confidence_series_picks_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let negatives = ["0.6,0.4", "0.9,0.1", "0.7,0.3"];
    for (epoch, neg) in negatives.iter().enumerate() {
        let text = format!(
            "# osr-scores v1 K=2 C=2 kind=probabilities\nsample_id,label,v1,v2\na,1,0.9,0.1\nd,0,{neg}\n"
        );
        fs::write(dir.path().join(format!("e{epoch}.csv")), text).unwrap();
    }
    let pattern = dir.path().join("e{epoch}.csv");
    let out_csv = dir.path().join("conf.csv");
    ok(&[
        "confidence",
        "--pattern",
        s(&pattern),
        "--epochs",
        "0..2",
        "-o",
        s(&out_csv),
    ]);
    let text = fs::read_to_string(&out_csv).unwrap();
    assert!(
        text.starts_with("epoch,gamma_plus,gamma_minus,gamma\n"),
        "{text}"
    );
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert!(text.trim_end().ends_with("# best epoch=0"), "{text}");

    let err = fails(&["confidence", "--pattern", s(&pattern), "--epochs", "0,5"]);
    assert!(err.contains("epoch 5"), "{err}");
}

#[test]
fn plots_are_valid_svg() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    ok(&[
        "toy",
        "--epochs",
        "50",
        "--per-cluster",
        "40",
        "--out-dir",
        s(&toy),
    ]);
    let summary = fs::read_to_string(toy.join("summary.txt")).unwrap();
    assert_eq!(summary.lines().count(), 7, "{summary}");

    let oscr = dir.path().join("oscr.svg");
    ok(&[
        "plot",
        "oscr",
        "--input",
        &format!("S={}", s(&toy.join("oscr_s_unknown.csv"))),
        "--input",
        s(&toy.join("oscr_eos_unknown.csv")),
        "--title",
        "S & EOS <unknown>",
        "-o",
        s(&oscr),
    ]);
    let hist = dir.path().join("hist.svg");
    ok(&[
        "plot",
        "histogram",
        "--scores",
        s(&toy.join("scores_bg.csv")),
        "--bins",
        "20",
        "-o",
        s(&hist),
    ]);

    let conf_csv = dir.path().join("c.csv");
    fs::copy(toy.join("scores_eos.csv"), dir.path().join("ep1.csv")).unwrap();
    fs::copy(toy.join("scores_s.csv"), dir.path().join("ep2.csv")).unwrap();
    ok(&[
        "confidence",
        "--pattern",
        s(&dir.path().join("ep{epoch}.csv")),
        "--epochs",
        "1,2",
        "-o",
        s(&conf_csv),
    ]);
    let conf = dir.path().join("conf.svg");
    ok(&[
        "plot",
        "confidence",
        "--input",
        s(&conf_csv),
        "--metric",
        "gamma-minus",
        "-o",
        s(&conf),
    ]);

    for (path, series) in [(&oscr, 2), (&hist, 2), (&conf, 1)] {
        let text = fs::read_to_string(path).unwrap();
        let doc = roxmltree::Document::parse(&text).expect("well-formed SVG");
        let n = doc
            .descendants()
            .filter(|n| n.has_tag_name("path") && n.attribute("class") == Some("series"))
            .count();
        assert_eq!(n, series, "{}", path.display());
    }
    let oscr_text = fs::read_to_string(&oscr).unwrap();
    assert!(oscr_text.contains("S &amp; EOS &lt;unknown&gt;"));
}

#[test]
fn gradcheck_reports_each_mode() {
    let out = ok(&["gradcheck", "--instances", "20"]);
    for mode in ["S ", "BG ", "EOS "] {
        assert!(out.lines().any(|l| l.starts_with(mode)), "{out}");
    }
    // An impossible tolerance must fail.
    let err = fails(&["gradcheck", "--instances", "5", "--tolerance", "0"]);
    assert!(err.contains("gradient check failed"), "{err}");
}

#[test]
fn toy_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&[
            "toy",
            "--epochs",
            "30",
            "--per-cluster",
            "30",
            "--seed",
            seed,
            "--out-dir",
            s(&out),
        ]);
        fs::read(out.join("scores_eos.csv")).unwrap()
    };
    assert_eq!(run("a", "1"), run("b", "1"));
    assert_ne!(run("a", "1"), run("c", "2"));
}

#[test]
fn error_cases() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&[
        "protocol",
        "--data-root",
        s(&data_root()),
        "--protocol",
        "p4",
        "--list-classes",
    ]);
    assert!(err.contains("unknown protocol"), "{err}");

    let err = fails(&[
        "protocol",
        "--data-root",
        s(dir.path()),
        "--protocol",
        "p1",
        "--list-classes",
    ]);
    assert!(err.contains("WordNet"), "{err}");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, SCORES.replace("0.9,0.1", "0.9,0.2")).unwrap();
    let err = fails(&["eval", "--scores", s(&bad)]);
    assert!(err.contains("error:"), "{err}");

    let nan = dir.path().join("nan.csv");
    fs::write(&nan, SCORES.replace("0.9,0.1", "NaN,0.1")).unwrap();
    fails(&["eval", "--scores", s(&nan)]);

    let no_neg = dir.path().join("noneg.csv");
    fs::write(&no_neg, SCORES).unwrap();
    let err = fails(&["eval", "--scores", s(&no_neg), "--group", "unknown"]);
    assert!(err.contains("unknown"), "{err}");

    let err = fails(&["confidence", "--pattern", "x.csv", "--epochs", "1"]);
    assert!(err.contains("{epoch}"), "{err}");
    fails(&["toy", "--out-dir", s(dir.path()), "--unknown-at", "1"]);
}
