//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use osr_core::losses::{cce_loss, gradient_check, make_targets, LossMode};
use osr_core::metrics::{confidence, oscr_curve, EvaluationGroups, Group};
use osr_core::protocol::{ProtocolManifest, Role, Split};
use osr_core::rng::SeededStream;
use osr_core::scores::{ScoreKind, ScoreRow, ScoreTable};
use osr_core::toy::evaluate_group;

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_root() -> PathBuf {
    repo_root().join("data")
}

fn osr(args: &[&str]) -> Result<String> {
    let out = Command::new(env!("CARGO_BIN_EXE_osr"))
        .args(args)
        .output()
        .context("cannot start osr")?;
    if !out.status.success() {
        bail!(
            "osr {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        );
    }
    Ok(String::from_utf8(out.stdout)?)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

const PROTOCOL_CLASSES: [(&str, [usize; 3]); 3] = [
    ("p1", [116, 67, 166]),
    ("p2", [30, 31, 55]),
    ("p3", [151, 97, 164]),
];

/// Per-role class sets from `osr protocol --list-classes`.
fn listed_classes(protocol: &str) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let out = osr(&[
        "protocol",
        "--data-root",
        path_str(&data_root()),
        "--protocol",
        protocol,
        "--list-classes",
    ])?;
    let mut roles: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for line in out.lines().skip(1) {
        let mut f = line.split('\t');
        let (role, synset) = (f.next().unwrap_or(""), f.next().unwrap_or(""));
        ensure!(
            roles.entry(role.into()).or_default().insert(synset.into()),
            "{synset} listed twice"
        );
    }
    Ok(roles)
}

/// Image lists over all ILSVRC classes: 1..=60 training images per class and
/// 50 validation images each.
fn write_synthetic_sources(dir: &Path) -> Result<BTreeMap<String, usize>> {
    let classes = fs::read_to_string(data_root().join("wordnet/ilsvrc_synsets.txt"))?;
    let mut rng = SeededStream::new(2024);
    let (mut train, mut val) = (String::new(), String::new());
    let mut counts = BTreeMap::new();
    for c in classes.split_whitespace() {
        let n = 1 + rng.next_index(60);
        counts.insert(c.to_string(), n);
        for i in 0..n {
            train.push_str(&format!("train/{c}/{c}_{i}.JPEG {c}\n"));
        }
        for i in 0..50 {
            val.push_str(&format!("val/{c}_{i:02}.JPEG {c}\n"));
        }
    }
    fs::write(dir.join("train.txt"), train)?;
    fs::write(dir.join("val.txt"), val)?;
    Ok(counts)
}

fn run_protocol(protocol: &str, train: &Path, val: &Path, out: &Path) -> Result<()> {
    osr(&[
        "protocol",
        "--data-root",
        path_str(&data_root()),
        "--protocol",
        protocol,
        "--train-manifest",
        path_str(train),
        "--val-manifest",
        path_str(val),
        "--out",
        path_str(out),
    ])?;
    Ok(())
}

fn criterion_1() -> Result<String> {
    let fixture =
        fs::read_to_string(repo_root().join("crates/core/tests/fixtures/p2_classes.tsv"))?;
    let mut p2: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for line in fixture.lines().filter(|l| !l.starts_with('#')) {
        let (role, synset) = line.split_once('\t').context("bad fixture line")?;
        p2.entry(role.into()).or_default().insert(synset.into());
    }

    for (name, counts) in PROTOCOL_CLASSES {
        let listed = listed_classes(name)?;
        let got = Role::ALL.map(|r| listed.get(r.as_str()).map_or(0, |s| s.len()));
        ensure!(
            got == counts,
            "{name}: classes {got:?}, expected {counts:?}"
        );
        if name == "p2" {
            ensure!(
                listed == p2,
                "p2 class sets differ from the published table"
            );
        }
    }

    let real_train = data_root().join("ilsvrc/train.txt");
    let real_val = data_root().join("ilsvrc/val.txt");
    let tmp = tempfile::tempdir()?;
    let (train, val, synthetic) = if real_train.is_file() && real_val.is_file() {
        (real_train, real_val, None)
    } else {
        let counts = write_synthetic_sources(tmp.path())?;
        (
            tmp.path().join("train.txt"),
            tmp.path().join("val.txt"),
            Some(counts),
        )
    };

    for (name, counts) in PROTOCOL_CLASSES {
        let a = tmp.path().join(format!("{name}_a.csv"));
        let b = tmp.path().join(format!("{name}_b.csv"));
        run_protocol(name, &train, &val, &a)?;
        run_protocol(name, &train, &val, &b)?;
        ensure!(fs::read(&a)? == fs::read(&b)?, "{name}: two runs differ");
        let m = ProtocolManifest::read(&a)?;
        for (role, classes) in Role::ALL.into_iter().zip(counts) {
            let rc = m.counts(role);
            ensure!(
                rc.classes == classes,
                "{name} {role}: {} classes",
                rc.classes
            );
            ensure!(
                rc.test == 50 * classes,
                "{name} {role}: {} test images",
                rc.test
            );
        }
        if let Some(source) = &synthetic {
            let mut split: BTreeMap<(String, Split), usize> = BTreeMap::new();
            for r in &m.records {
                *split.entry((r.synset.to_string(), r.split)).or_default() += 1;
            }
            for r in m.records.iter().filter(|r| r.role != Role::Unknown) {
                let s = r.synset.to_string();
                let n = source[&s];
                let train = split.get(&(s.clone(), Split::Train)).copied().unwrap_or(0);
                let val = split.get(&(s.clone(), Split::Val)).copied().unwrap_or(0);
                ensure!(
                    train == (n * 4) / 5 && train + val == n,
                    "{name} {s}: {train}/{val} split of {n}"
                );
            }
        }
    }
    Ok(match synthetic {
        None => "class counts, P2 class sets and 50 test images per class on the real image lists".into(),
        Some(_) => "class counts and P2 class sets exact; synthetic image lists: floor(0.8 n) split, 50 test per class, deterministic".into(),
    })
}

/// Random score table with at least one known and one `group` sample. One
/// third each: continuous logits, small integer logits (ties), and
/// probabilities that sit exactly on the 1e-4 threshold grid.
fn random_instance(rng: &mut SeededStream, i: usize) -> (ScoreTable, Group) {
    let k = 1 + rng.next_index(5);
    let c = if i.is_multiple_of(2) { k } else { k + 1 };
    let n = 2 + rng.next_index(199);
    let group = if rng.next_index(2) == 0 {
        Group::Negative
    } else {
        Group::Unknown
    };
    let flavour = i % 3;
    let rows = (0..n)
        .map(|j| {
            let label = match j {
                0 => 1 + rng.next_index(k) as i64,
                1 => group.label(),
                _ if rng.next_index(2) == 0 => 1 + rng.next_index(k) as i64,
                _ => group.label(),
            };
            let values = match flavour {
                0 => (0..c).map(|_| 3.0 * rng.next_standard_normal()).collect(),
                1 => (0..c).map(|_| rng.next_index(7) as f64 - 3.0).collect(),
                _ => {
                    let mut left = 10_000;
                    let mut v: Vec<f64> = (0..c - 1)
                        .map(|_| {
                            let a = rng.next_index(left + 1);
                            left -= a;
                            a as f64 / 10_000.0
                        })
                        .collect();
                    v.push(left as f64 / 10_000.0);
                    v
                }
            };
            ScoreRow {
                sample_id: format!("s{j}"),
                label,
                values,
            }
        })
        .collect();
    let kind = if flavour == 2 {
        ScoreKind::Probabilities
    } else {
        ScoreKind::Logits
    };
    (
        ScoreTable::new(k, c, kind, rows).expect("valid table"),
        group,
    )
}

fn criterion_2() -> Result<String> {
    let grid: Vec<f64> = (0..=10_000).map(|i| i as f64 / 10_000.0).collect();
    let mut rng = SeededStream::new(20_230_103);
    let mut checked = 0usize;
    for i in 0..1000 {
        let (table, group) = random_instance(&mut rng, i);
        let curve = oscr_curve(&EvaluationGroups::from_table(&table, group)?)?;

        // Oracle: count straight from the probability rows.
        let probs = table.to_probabilities()?;
        let mut known = Vec::new();
        let mut rejected = Vec::new();
        for row in &probs.rows {
            let v = &row.values[..table.k];
            let mut best = 0;
            for (j, p) in v.iter().enumerate() {
                if *p > v[best] {
                    best = j;
                }
            }
            if row.label >= 1 {
                known.push((v[best], best as i64 + 1 == row.label));
            } else if row.label == group.label() {
                rejected.push(v[best]);
            }
        }
        for &theta in &grid {
            let ccr = known.iter().filter(|(s, ok)| *ok && *s > theta).count() as f64
                / known.len() as f64;
            let fpr =
                rejected.iter().filter(|s| **s > theta).count() as f64 / rejected.len() as f64;
            let p = curve.at(theta)?;
            ensure!(
                p.ccr == ccr && p.fpr == fpr,
                "instance {i} (K={}, C={}) at theta={theta}: curve ({}, {}) vs counted ({fpr}, {ccr})",
                table.k,
                table.c,
                p.fpr,
                p.ccr
            );
            checked += 1;
        }
    }
    Ok(format!(
        "1000 instances, {checked} threshold queries, all exact"
    ))
}

fn criterion_3() -> Result<String> {
    let mut parts = Vec::new();
    for (i, mode) in LossMode::ALL.into_iter().enumerate() {
        let s = gradient_check(mode, 100, 1e-5, 1000 + i as u64);
        ensure!(s.instances == 100, "{mode}: {} instances", s.instances);
        ensure!(
            s.max_relative_error < 1e-4,
            "{mode}: max relative error {:.3e}",
            s.max_relative_error
        );
        parts.push(format!("{mode} {:.1e}", s.max_relative_error));
    }
    Ok(format!("max relative error {}", parts.join(", ")))
}

fn criterion_4() -> Result<String> {
    for k in 2..=10usize {
        for mode in LossMode::ALL {
            let c = mode.outputs(k);
            let ones = vec![1.0; c];
            let uniform = vec![vec![0.0; c]];
            for label in 1..=k as i64 {
                let t = make_targets(mode, label, k)?;
                let j = cce_loss(&uniform, &[t], &ones)?;
                ensure!(
                    (j - (c as f64).ln()).abs() <= 1e-10,
                    "{mode} K={k} label {label}: {j} vs ln {c}"
                );
            }
        }
        let t = make_targets(LossMode::EOS, 0, k)?;
        let j = cce_loss(&[vec![1.5; k]], &[t], &vec![1.0; k])?;
        ensure!(
            (j - (k as f64).ln()).abs() <= 1e-10,
            "EOS negative K={k}: {j}"
        );
    }
    let mut rng = SeededStream::new(99);
    let mut min_gap = f64::INFINITY;
    for _ in 0..1000 {
        let c = 2 + rng.next_index(9);
        let z: Vec<f64> = (0..c).map(|_| 3.0 * rng.next_standard_normal()).collect();
        let t = make_targets(LossMode::EOS, 0, c)?;
        let j = cce_loss(&[z], &[t], &vec![1.0; c])?;
        let gap = j - (c as f64).ln();
        ensure!(gap >= 0.0, "EOS negative loss {j} below ln {c}");
        min_gap = min_gap.min(gap);
    }
    Ok(format!(
        "uniform losses equal ln C within 1e-10 for K=2..10; 1000 random EOS negatives, min J - ln C = {min_gap:.2e}"
    ))
}

fn criterion_5() -> Result<String> {
    let k = 4;
    for with_background in [false, true] {
        let c = if with_background { k + 1 } else { k };
        let mut rows = Vec::new();
        for label in 1..=k {
            let mut v = vec![0.0; c];
            v[label - 1] = 1.0;
            rows.push(ScoreRow {
                sample_id: format!("k{label}"),
                label: label as i64,
                values: v,
            });
        }
        for i in 0..3 {
            let values = if with_background {
                let mut v = vec![0.0; c];
                v[k] = 1.0;
                v
            } else {
                vec![1.0 / k as f64; c]
            };
            rows.push(ScoreRow {
                sample_id: format!("n{i}"),
                label: 0,
                values,
            });
        }
        let table = ScoreTable::new(k, c, ScoreKind::Probabilities, rows)?;
        let r = confidence(&table, Group::Negative)?;
        for (name, v) in [
            ("gamma+", r.gamma_plus),
            ("gamma-", r.gamma_minus),
            ("gamma", r.gamma),
        ] {
            ensure!((v - 1.0).abs() <= 1e-12, "C={c}: {name} = {v}");
        }
    }
    Ok("gamma+, gamma- and gamma equal 1 within 1e-12 for C=K and C=K+1".into())
}

struct ToyMetrics {
    gamma_minus: f64,
    ccr_01: Option<f64>,
}

fn toy_metrics(dir: &Path, mode: &str, group: Group) -> Result<ToyMetrics> {
    let table = ScoreTable::read(&dir.join(format!("scores_{mode}.csv")))?;
    let eval = evaluate_group(&table, group)?;
    // FPR targets are 1e-3, 1e-2, 1e-1, 1.
    Ok(ToyMetrics {
        gamma_minus: eval.confidence.gamma_minus,
        ccr_01: eval.ccr_at_fpr[2],
    })
}

fn compare_eos_to_s(dir: &Path, group: Group, label: &str) -> Result<String> {
    let s = toy_metrics(dir, "s", group)?;
    let e = toy_metrics(dir, "eos", group)?;
    let fmt = |v: Option<f64>| v.map_or("---".to_string(), |v| format!("{v:.3}"));
    let line = format!(
        "{label}: gamma- {:.3} vs {:.3}, CCR@0.1 {} vs {}",
        e.gamma_minus,
        s.gamma_minus,
        fmt(e.ccr_01),
        fmt(s.ccr_01)
    );
    ensure!(
        e.gamma_minus > s.gamma_minus,
        "EOS gamma- not above S ({line})"
    );
    ensure!(
        matches!(e.ccr_01, Some(v) if v > s.ccr_01.unwrap_or(0.0)),
        "EOS CCR@FPR=0.1 not above S ({line})"
    );
    Ok(line)
}

fn criterion_6() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let ring = tmp.path().join("ring");
    let far = tmp.path().join("far");
    osr(&["toy", "--out-dir", path_str(&ring)])?;
    osr(&[
        "toy",
        "--layout",
        "far-unknown",
        "--out-dir",
        path_str(&far),
    ])?;
    let lines = [
        compare_eos_to_s(&ring, Group::Negative, "negatives")?,
        compare_eos_to_s(&ring, Group::Unknown, "unknowns")?,
        compare_eos_to_s(&far, Group::Unknown, "far unknowns")?,
    ];
    Ok(format!("EOS vs S, {}", lines.join("; ")))
}

fn dir_contents(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        out.insert(
            entry.file_name().to_string_lossy().into_owned(),
            fs::read(entry.path())?,
        );
    }
    Ok(out)
}

fn criterion_7() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    write_synthetic_sources(tmp.path())?;
    let (train, val) = (tmp.path().join("train.txt"), tmp.path().join("val.txt"));
    for name in ["p1", "p2", "p3"] {
        let a = tmp.path().join(format!("{name}_1.csv"));
        let b = tmp.path().join(format!("{name}_2.csv"));
        run_protocol(name, &train, &val, &a)?;
        run_protocol(name, &train, &val, &b)?;
        ensure!(
            fs::read(&a)? == fs::read(&b)?,
            "osr protocol {name}: outputs differ"
        );
    }
    let (a, b) = (tmp.path().join("toy1"), tmp.path().join("toy2"));
    let out_a = osr(&["toy", "--seed", "7", "--out-dir", path_str(&a)])?;
    let out_b = osr(&["toy", "--seed", "7", "--out-dir", path_str(&b)])?;
    ensure!(out_a == out_b, "osr toy: printed summaries differ");
    let (fa, fb) = (dir_contents(&a)?, dir_contents(&b)?);
    ensure!(fa.len() >= 10, "osr toy wrote only {} files", fa.len());
    ensure!(fa == fb, "osr toy: output files differ");
    Ok(format!(
        "osr protocol p1/p2/p3 and osr toy ({} files) byte-identical across runs",
        fa.len()
    ))
}

type Check = fn() -> Result<String>;

fn main() -> ExitCode {
    let criteria: [(&str, Check, Option<Duration>); 7] = [
        (
            "protocol metadata reproduction",
            criterion_1,
            Some(Duration::from_secs(30)),
        ),
        (
            "OSCR curve equals direct counting",
            criterion_2,
            Some(Duration::from_secs(60)),
        ),
        (
            "loss gradient suite",
            criterion_3,
            Some(Duration::from_secs(10)),
        ),
        ("closed-form loss values", criterion_4, None),
        ("confidence endpoints", criterion_5, None),
        (
            "toy experiment: EOS over S",
            criterion_6,
            Some(Duration::from_secs(30)),
        ),
        ("determinism", criterion_7, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(anyhow::anyhow!("took {elapsed:.1?}, limit {limit:?}"))
            }
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {} {name} [{elapsed:.2?}]: {detail}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL  {} {name} [{elapsed:.2?}]: {e:#}", i + 1);
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all 7 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 7 criteria failed");
        ExitCode::FAILURE
    }
}
