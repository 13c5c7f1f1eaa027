use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;

use osr_core::losses::{gradient_check, LossMode, ToyParams};
use osr_core::metrics::{
    ccr_at_fpr, confidence as confidence_report, oscr_curve, select_best_epoch, EvaluationGroups,
};
use osr_core::protocol::{
    build_protocol, resolve_classes, ProtocolManifest, ProtocolSpec, Role, Split,
};
use osr_core::report::{
    confidence_chart, confidence_csv, histogram_chart, oscr_chart, parse_confidence_csv,
    parse_oscr_csv, results_table, score_histograms, ResultRow, FPR_TARGETS,
};
use osr_core::scores::ScoreTable;
use osr_core::toy::{run_toy, ToyConfig};
use osr_core::Taxonomy;

use crate::{
    ConfidenceArgs, DataArgs, EvalArgs, GradcheckArgs, PlotCommand, ProtocolArgs, ToyArgs,
    ToyLayout,
};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

impl DataArgs {
    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given
            .clone()
            .unwrap_or_else(|| self.data_root.join(default))
    }

    fn taxonomy(&self) -> Result<Taxonomy> {
        let is_a = self.path(&self.is_a, "wordnet/is_a.txt");
        let words = self.path(&self.words, "wordnet/words.txt");
        let ilsvrc = self.path(&self.ilsvrc, "wordnet/ilsvrc_synsets.txt");
        let t = Taxonomy::load(&is_a, &words, &ilsvrc, self.parent_policy)
            .context("cannot load the WordNet hierarchy")?;
        info!(
            "taxonomy: {} synsets, {} ILSVRC classes",
            t.len(),
            t.ilsvrc_leaves().len()
        );
        Ok(t)
    }
}

fn load_spec(name: &str) -> Result<ProtocolSpec> {
    if let Some(spec) = ProtocolSpec::builtin(name) {
        return Ok(spec);
    }
    let path = Path::new(name);
    if !path.is_file() {
        bail!("unknown protocol {name:?}: expected p1, p2, p3 or a spec file");
    }
    ProtocolSpec::parse(&read_text(path)?).with_context(|| format!("invalid protocol spec {name}"))
}

pub fn protocol(args: ProtocolArgs) -> Result<()> {
    let spec = load_spec(&args.protocol)?;
    let taxonomy = args.data.taxonomy()?;
    if args.list_classes {
        let classes = resolve_classes(&taxonomy, &spec)?;
        let mut text = String::from("role\tsynset\tname\n");
        for role in Role::ALL {
            for id in classes.get(role) {
                let name = taxonomy.name(id).unwrap_or(id.as_str());
                text.push_str(&format!("{role}\t{id}\t{name}\n"));
            }
        }
        eprintln!(
            "{}: {} known / {} negative / {} unknown classes",
            spec.name,
            classes.known.len(),
            classes.negative.len(),
            classes.unknown.len()
        );
        return write_output(args.out.as_deref(), &text);
    }
    let train_path = args.data.path(&args.train_manifest, "ilsvrc/train.txt");
    let val_path = args.data.path(&args.val_manifest, "ilsvrc/val.txt");
    let manifest = build_protocol(
        &taxonomy,
        &spec,
        &read_text(&train_path)?,
        &read_text(&val_path)?,
        args.seed,
    )?;
    for role in Role::ALL {
        eprintln!("{:<8} {}", role.as_str(), manifest.counts(role));
    }
    match &args.out {
        Some(path) => manifest.write(path)?,
        None => manifest.write_to(std::io::stdout().lock())?,
    }
    Ok(())
}

/// Every score row must name a test sample of the manifest with its label.
fn check_against_manifest(scores: &ScoreTable, manifest: &ProtocolManifest) -> Result<()> {
    if scores.k != manifest.known_classes {
        bail!(
            "score file has K={} but the manifest has K={}",
            scores.k,
            manifest.known_classes
        );
    }
    let test: HashMap<&str, i64> = manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Test)
        .map(|r| (r.path.as_str(), r.class_index))
        .collect();
    for (i, row) in scores.rows.iter().enumerate() {
        match test.get(row.sample_id.as_str()) {
            None => bail!(
                "score row {} ({}) is not a test sample of the manifest",
                i + 1,
                row.sample_id
            ),
            Some(&label) if label != row.label => bail!(
                "score row {} ({}) has label {} but the manifest says {label}",
                i + 1,
                row.sample_id,
                row.label
            ),
            Some(_) => {}
        }
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let scores = ScoreTable::read(&args.scores)?;
    if let Some(path) = &args.manifest {
        check_against_manifest(&scores, &ProtocolManifest::read(path)?)?;
    }
    let groups = EvaluationGroups::from_table(&scores, args.group)?;
    let curve = oscr_curve(&groups)?;
    let report = confidence_report(&scores, args.group)?;
    if let Some(path) = &args.oscr_out {
        write_output(Some(path), &curve.write_csv())?;
    }
    let label = args.label.clone().unwrap_or_else(|| {
        args.scores
            .file_stem()
            .map_or_else(|| "scores".into(), |s| s.to_string_lossy().into_owned())
    });
    let row = ResultRow {
        label: format!("{label} ({})", args.group),
        epoch: None,
        gamma_plus: Some(report.gamma_plus),
        gamma_minus: Some(report.gamma_minus),
        ccr: ccr_at_fpr(&curve, &FPR_TARGETS)?,
    };
    print!("{}", results_table(&[row]));
    Ok(())
}

fn parse_epochs(spec: &str) -> Result<Vec<u64>> {
    let bad = || anyhow!("bad epoch list {spec:?}: use first..last or a comma list");
    let epochs: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',')
            .map(|e| e.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if epochs.is_empty() {
        return Err(bad());
    }
    Ok(epochs)
}

pub fn confidence(args: ConfidenceArgs) -> Result<()> {
    if !args.pattern.contains("{epoch}") {
        bail!("--pattern must contain {{epoch}}");
    }
    let mut reports = Vec::new();
    for epoch in parse_epochs(&args.epochs)? {
        let path = PathBuf::from(args.pattern.replace("{epoch}", &epoch.to_string()));
        if !path.is_file() {
            bail!("missing score file for epoch {epoch}: {}", path.display());
        }
        let table = ScoreTable::read(&path)?;
        let mut r = confidence_report(&table, args.group)
            .with_context(|| format!("epoch {epoch} ({})", path.display()))?;
        r.epoch = Some(epoch);
        reports.push(r);
    }
    let best = select_best_epoch(&reports)?;
    eprintln!("best epoch: {best}");
    write_output(args.out.as_deref(), &confidence_csv(&reports, Some(best)))
}

/// Splits `LABEL=PATH`; a bare path is labelled with its file stem.
fn labelled(input: &str) -> (String, PathBuf) {
    match input.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(input);
            let label = path
                .file_stem()
                .map_or_else(|| input.to_string(), |s| s.to_string_lossy().into_owned());
            (label, path)
        }
    }
}

pub fn plot(cmd: PlotCommand) -> Result<()> {
    let (chart, out) = match cmd {
        PlotCommand::Oscr {
            inputs,
            scale,
            title,
            out,
        } => {
            let curves = inputs
                .iter()
                .map(|i| {
                    let (label, path) = labelled(i);
                    let curve = parse_oscr_csv(&read_text(&path)?)
                        .with_context(|| format!("in {}", path.display()))?;
                    Ok((label, curve))
                })
                .collect::<Result<Vec<_>>>()?;
            (oscr_chart(&curves, scale, &title)?, out)
        }
        PlotCommand::Confidence {
            inputs,
            metric,
            title,
            out,
        } => {
            let rows = inputs
                .iter()
                .map(|i| {
                    let (label, path) = labelled(i);
                    let rows = parse_confidence_csv(&read_text(&path)?)
                        .with_context(|| format!("in {}", path.display()))?;
                    Ok((label, rows))
                })
                .collect::<Result<Vec<_>>>()?;
            (confidence_chart(&rows, metric, &title)?, out)
        }
        PlotCommand::Histogram {
            inputs,
            group,
            bins,
            title,
            out,
        } => {
            let mut series = Vec::new();
            for i in &inputs {
                let (label, path) = labelled(i);
                let table = ScoreTable::read(&path)?;
                let (known, rejected) = score_histograms(&table, group, bins)?;
                series.push((format!("{label} known"), known));
                series.push((format!("{label} {group}"), rejected));
            }
            (histogram_chart(&series, &title)?, out)
        }
    };
    write_output(Some(&out), &chart.to_svg())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (i, mode) in LossMode::ALL.into_iter().enumerate() {
        let s = gradient_check(
            mode,
            args.instances,
            args.step,
            args.seed.wrapping_add(i as u64),
        );
        println!(
            "{:<4} instances={} max_relative_error={:.3e}",
            mode.to_string(),
            s.instances,
            s.max_relative_error
        );
        worst = worst.max(s.max_relative_error);
    }
    if worst >= args.tolerance {
        bail!(
            "gradient check failed: {worst:.3e} >= {:.1e}",
            args.tolerance
        );
    }
    Ok(())
}

fn parse_point(s: &str) -> Result<[f64; 2]> {
    let bad = || anyhow!("expected x,y but got {s:?}");
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok([
        x.trim().parse().map_err(|_| bad())?,
        y.trim().parse().map_err(|_| bad())?,
    ])
}

pub fn toy(args: ToyArgs) -> Result<()> {
    let mut params = match args.layout {
        ToyLayout::Ring => ToyParams::ring(args.known, args.radius, parse_point(&args.unknown_at)?),
        ToyLayout::FarUnknown => ToyParams::far_unknown(args.known, args.radius),
    };
    params.per_cluster = args.per_cluster;
    let config = ToyConfig {
        params,
        seed: args.seed,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        ..ToyConfig::default()
    };
    let outcome = run_toy(&config)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let mut rows = Vec::new();
    for m in &outcome.modes {
        let mode = m.training.mode.to_string().to_lowercase();
        m.test_scores
            .write(&args.out_dir.join(format!("scores_{mode}.csv")))?;
        for eval in [&m.negative, &m.unknown] {
            let path = args.out_dir.join(format!("oscr_{mode}_{}.csv", eval.group));
            write_output(Some(&path), &eval.curve.write_csv())?;
        }
        if m.training.excluded_negatives > 0 {
            eprintln!(
                "{}: {} negative samples excluded from training",
                m.training.mode, m.training.excluded_negatives
            );
        }
    }
    for group in [
        osr_core::metrics::Group::Negative,
        osr_core::metrics::Group::Unknown,
    ] {
        rows.extend(outcome.modes.iter().map(|m| m.result_row(group)));
    }
    let table = results_table(&rows);
    write_output(Some(&args.out_dir.join("summary.txt")), &table)?;
    print!("{table}");
    Ok(())
}
