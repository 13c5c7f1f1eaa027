//! Open-set evaluation: CCR/FPR counting, OSCR curves, CCR@FPR readouts and
//! the confidence metric used for early stopping.
//!
//! All scores are probabilities. Maxima and argmaxes are taken over the K
//! known outputs only; the background output of a K+1 model is ignored.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::scores::{ScoreKind, ScoreTable, ScoresError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Scores(#[from] ScoresError),
    #[error("no {0} samples to evaluate")]
    EmptyGroup(&'static str),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("FPR target {0} outside (0, 1]")]
    FprTarget(f64),
    #[error("empty OSCR curve")]
    EmptyCurve,
    #[error("no confidence reports to choose from")]
    NoReports,
    #[error("confidence report without an epoch number")]
    MissingEpoch,
    #[error("epoch {0} reported more than once")]
    DuplicateEpoch(u64),
}

/// Which rejection group is evaluated against the knowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Group {
    #[default]
    Negative,
    Unknown,
}

impl Group {
    pub fn label(self) -> i64 {
        match self {
            Group::Negative => 0,
            Group::Unknown => -1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Negative => "negative",
            Group::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negative" => Ok(Group::Negative),
            "unknown" => Ok(Group::Unknown),
            other => Err(format!(
                "unknown group {other:?} (expected negative or unknown)"
            )),
        }
    }
}

/// Index and value of the largest of the first `k` entries; ties go to the
/// lowest index.
pub fn known_argmax(values: &[f64], k: usize) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in values[..k].iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownScore {
    /// Probability of the true class.
    pub score: f64,
    /// Whether the true class wins the argmax over known outputs.
    pub correct: bool,
}

/// Known samples and one rejection group, reduced to the scores the CCR and
/// FPR counts read.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationGroups {
    pub group: Group,
    pub known: Vec<KnownScore>,
    /// Maximum known-class probability of each group sample.
    pub rejected: Vec<f64>,
}

impl EvaluationGroups {
    /// Logit tables are converted with softmax first.
    pub fn from_table(table: &ScoreTable, group: Group) -> Result<Self, MetricsError> {
        let converted;
        let table = if table.kind == ScoreKind::Probabilities {
            table
        } else {
            converted = table.to_probabilities()?;
            &converted
        };
        let mut known = Vec::new();
        let mut rejected = Vec::new();
        for row in &table.rows {
            if row.label >= 1 {
                let truth = (row.label - 1) as usize;
                let (arg, _) = known_argmax(&row.values, table.k);
                known.push(KnownScore {
                    score: row.values[truth],
                    correct: arg == truth,
                });
            } else if row.label == group.label() {
                rejected.push(known_argmax(&row.values, table.k).1);
            }
        }
        Self::new(group, known, rejected)
    }

    pub fn new(
        group: Group,
        known: Vec<KnownScore>,
        rejected: Vec<f64>,
    ) -> Result<Self, MetricsError> {
        if known.is_empty() {
            return Err(MetricsError::EmptyGroup("known"));
        }
        if rejected.is_empty() {
            return Err(MetricsError::EmptyGroup(group.as_str()));
        }
        Ok(Self {
            group,
            known,
            rejected,
        })
    }

    pub fn n_known(&self) -> usize {
        self.known.len()
    }

    pub fn n_rejected(&self) -> usize {
        self.rejected.len()
    }

    /// Raw CCR and FPR numerators at `theta`: (correct knowns above, group above).
    pub fn counts_at(&self, theta: f64) -> Result<(usize, usize), MetricsError> {
        check_theta(theta)?;
        let ccr = self
            .known
            .iter()
            .filter(|k| k.correct && k.score > theta)
            .count();
        let fpr = self.rejected.iter().filter(|s| **s > theta).count();
        Ok((ccr, fpr))
    }
}

fn check_theta(theta: f64) -> Result<(), MetricsError> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(MetricsError::Threshold(theta))
    }
}

/// CCR and FPR at one threshold, with strict `>` comparisons.
pub fn ccr_fpr_at(groups: &EvaluationGroups, theta: f64) -> Result<(f64, f64), MetricsError> {
    let (c, f) = groups.counts_at(theta)?;
    Ok((
        c as f64 / groups.n_known() as f64,
        f as f64 / groups.n_rejected() as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscrPoint {
    pub theta: f64,
    pub fpr: f64,
    pub ccr: f64,
}

/// Step function of (FPR, CCR) over thresholds.
///
/// The value at any `theta` is that of the last point whose threshold does
/// not exceed it.
#[derive(Debug, Clone, PartialEq)]
pub struct OscrCurve {
    pub points: Vec<OscrPoint>,
}

impl OscrCurve {
    /// Curve value at `theta`.
    pub fn at(&self, theta: f64) -> Result<OscrPoint, MetricsError> {
        check_theta(theta)?;
        let idx = self.points.partition_point(|p| p.theta <= theta);
        if idx == 0 {
            return Err(MetricsError::EmptyCurve);
        }
        Ok(self.points[idx - 1])
    }

    pub fn write_csv(&self) -> String {
        let mut out = String::from("theta,fpr,ccr\n");
        for p in &self.points {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", p.theta, p.fpr, p.ccr));
        }
        out
    }
}

/// Exact OSCR curve: evaluated at 0, 1 and every score that can change a
/// count, with consecutive repeats of the same (FPR, CCR) pair collapsed.
pub fn oscr_curve(groups: &EvaluationGroups) -> Result<OscrCurve, MetricsError> {
    let mut correct: Vec<f64> = groups
        .known
        .iter()
        .filter(|k| k.correct)
        .map(|k| k.score)
        .collect();
    let mut rejected = groups.rejected.clone();
    correct.sort_by(f64::total_cmp);
    rejected.sort_by(f64::total_cmp);

    let mut thetas: Vec<f64> = correct
        .iter()
        .chain(rejected.iter())
        .copied()
        .filter(|t| (0.0..=1.0).contains(t))
        .chain([0.0, 1.0])
        .collect();
    thetas.sort_by(f64::total_cmp);
    // -0.0 and 0.0 compare equal as thresholds.
    thetas.dedup_by(|a, b| a == b);

    let n_known = groups.n_known() as f64;
    let n_rejected = groups.n_rejected() as f64;
    let mut points: Vec<OscrPoint> = Vec::with_capacity(thetas.len());
    for theta in thetas {
        let ccr_count = correct.len() - correct.partition_point(|s| *s <= theta);
        let fpr_count = rejected.len() - rejected.partition_point(|s| *s <= theta);
        let point = OscrPoint {
            theta,
            fpr: fpr_count as f64 / n_rejected,
            ccr: ccr_count as f64 / n_known,
        };
        if points
            .last()
            .is_some_and(|p| p.fpr == point.fpr && p.ccr == point.ccr)
        {
            continue;
        }
        points.push(point);
    }
    Ok(OscrCurve { points })
}

/// Best CCR with FPR at most each target, without interpolation.
///
/// `None` marks a target where nothing is correctly classified although the
/// curve reaches a positive CCR at FPR 1.
pub fn ccr_at_fpr(curve: &OscrCurve, targets: &[f64]) -> Result<Vec<Option<f64>>, MetricsError> {
    if curve.points.is_empty() {
        return Err(MetricsError::EmptyCurve);
    }
    let top = curve.points.iter().map(|p| p.ccr).fold(0.0, f64::max);
    targets
        .iter()
        .map(|&target| {
            if !(target > 0.0 && target <= 1.0) {
                return Err(MetricsError::FprTarget(target));
            }
            let best = curve
                .points
                .iter()
                .filter(|p| p.fpr <= target)
                .map(|p| p.ccr)
                .fold(0.0, f64::max);
            Ok(if best == 0.0 && top > 0.0 {
                None
            } else {
                Some(best)
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceReport {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub gamma: f64,
    pub k: usize,
    pub c: usize,
    pub epoch: Option<u64>,
}

/// Mean true-class probability on knowns and mean rejection confidence on
/// the selected group. Without a background output the rejection term gets a
/// `1/K` offset, so a uniform output scores 1.
pub fn confidence(table: &ScoreTable, group: Group) -> Result<ConfidenceReport, MetricsError> {
    let converted;
    let table = if table.kind == ScoreKind::Probabilities {
        table
    } else {
        converted = table.to_probabilities()?;
        &converted
    };
    let k = table.k;
    let offset = if table.c == k { 1.0 / k as f64 } else { 0.0 };
    let (mut plus, mut n_plus) = (0.0, 0usize);
    let (mut minus, mut n_minus) = (0.0, 0usize);
    for row in &table.rows {
        if row.label >= 1 {
            plus += row.values[(row.label - 1) as usize];
            n_plus += 1;
        } else if row.label == group.label() {
            minus += 1.0 - known_argmax(&row.values, k).1 + offset;
            n_minus += 1;
        }
    }
    if n_plus == 0 {
        return Err(MetricsError::EmptyGroup("known"));
    }
    if n_minus == 0 {
        return Err(MetricsError::EmptyGroup(group.as_str()));
    }
    let gamma_plus = plus / n_plus as f64;
    let gamma_minus = minus / n_minus as f64;
    Ok(ConfidenceReport {
        gamma_plus,
        gamma_minus,
        gamma: (gamma_plus + gamma_minus) / 2.0,
        k,
        c: table.c,
        epoch: None,
    })
}

/// Epoch with the highest gamma; ties resolve to the earliest epoch.
pub fn select_best_epoch(reports: &[ConfidenceReport]) -> Result<u64, MetricsError> {
    let mut epochs = Vec::with_capacity(reports.len());
    for r in reports {
        epochs.push(r.epoch.ok_or(MetricsError::MissingEpoch)?);
    }
    let mut sorted = epochs.clone();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(MetricsError::DuplicateEpoch(w[0]));
    }
    reports
        .iter()
        .zip(epochs)
        .reduce(|best, cur| {
            if cur.0.gamma > best.0.gamma || (cur.0.gamma == best.0.gamma && cur.1 < best.1) {
                cur
            } else {
                best
            }
        })
        .map(|(_, e)| e)
        .ok_or(MetricsError::NoReports)
}
