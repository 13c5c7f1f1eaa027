//! Reference kernels for the SoftMax (S), background-class (BG) and entropic
//! open-set (EOS) losses, plus a 2-D toy trainer.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::Role;
use crate::rng::SeededStream;
use crate::scores::{softmax, ScoreKind, ScoreRow, ScoreTable, ScoresError};

/// Lower clamp applied to probabilities before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Scores(#[from] ScoresError),
    #[error("{mode} does not train on label {label} (K={k})")]
    Label {
        mode: LossMode,
        label: i64,
        k: usize,
    },
    #[error("class {0} has zero samples")]
    ZeroCount(usize),
    #[error("empty count vector")]
    NoClasses,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid toy parameters: {0}")]
    ToyParams(String),
    #[error("no {0} samples available for training")]
    NoTrainingData(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    S,
    BG,
    EOS,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::S, LossMode::BG, LossMode::EOS];

    /// Number of network outputs for `k` known classes.
    pub fn outputs(self, k: usize) -> usize {
        match self {
            LossMode::BG => k + 1,
            LossMode::S | LossMode::EOS => k,
        }
    }

    pub fn uses_negatives(self) -> bool {
        self != LossMode::S
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::S => "S",
            LossMode::BG => "BG",
            LossMode::EOS => "EOS",
        })
    }
}

impl FromStr for LossMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "S" | "SOFTMAX" => Ok(LossMode::S),
            "BG" | "BACKGROUND" => Ok(LossMode::BG),
            "EOS" | "ENTROPIC" => Ok(LossMode::EOS),
            _ => Err(format!("unknown loss mode {s:?} (expected S, BG or EOS)")),
        }
    }
}

/// Target vector for one sample. Label 0 marks a negative.
pub fn make_targets(mode: LossMode, label: i64, k: usize) -> Result<Vec<f64>, LossError> {
    let c = mode.outputs(k);
    let mut t = vec![0.0; c];
    match (mode, label) {
        (_, l) if l >= 1 && l as usize <= k => t[(l - 1) as usize] = 1.0,
        (LossMode::BG, 0) => t[k] = 1.0,
        (LossMode::EOS, 0) => t.fill(1.0 / c as f64),
        _ => return Err(LossError::Label { mode, label, k }),
    }
    Ok(t)
}

/// Inverse-frequency weights `w_c = N / (C N_c)`.
pub fn bg_class_weights(counts: &[usize]) -> Result<Vec<f64>, LossError> {
    if counts.is_empty() {
        return Err(LossError::NoClasses);
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(LossError::ZeroCount(i));
    }
    let total: usize = counts.iter().sum();
    let c = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&n| total as f64 / (c * n as f64))
        .collect())
}

/// Class weighting used by the toy trainer.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum WeightScheme {
    /// Inverse frequency for BG, all ones for S and EOS.
    #[default]
    ModeDefault,
    /// Caller-supplied weights, one per output.
    Custom(Vec<f64>),
}

impl WeightScheme {
    /// Resolves the weights for `mode` given per-output training counts.
    pub fn weights(&self, mode: LossMode, counts: &[usize]) -> Result<Vec<f64>, LossError> {
        match self {
            WeightScheme::ModeDefault if mode == LossMode::BG => bg_class_weights(counts),
            WeightScheme::ModeDefault => Ok(vec![1.0; counts.len()]),
            WeightScheme::Custom(w) if w.len() != counts.len() => Err(LossError::Shape(format!(
                "{} custom weights for {} outputs",
                w.len(),
                counts.len()
            ))),
            WeightScheme::Custom(w) => Ok(w.clone()),
        }
    }
}

fn check_shapes(
    logits: &[Vec<f64>],
    targets: &[Vec<f64>],
    weights: &[f64],
) -> Result<(), LossError> {
    if logits.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if logits.len() != targets.len() {
        return Err(LossError::Shape(format!(
            "{} logit rows, {} target rows",
            logits.len(),
            targets.len()
        )));
    }
    let c = weights.len();
    for (n, (z, t)) in logits.iter().zip(targets).enumerate() {
        if z.len() != c || t.len() != c {
            return Err(LossError::Shape(format!(
                "row {n}: {} logits, {} targets, {c} weights",
                z.len(),
                t.len()
            )));
        }
    }
    Ok(())
}

/// Weighted categorical cross-entropy averaged over the batch.
pub fn cce_loss(
    logits: &[Vec<f64>],
    targets: &[Vec<f64>],
    weights: &[f64],
) -> Result<f64, LossError> {
    check_shapes(logits, targets, weights)?;
    let mut total = 0.0;
    for (z, t) in logits.iter().zip(targets) {
        let y = softmax(z)?;
        for c in 0..weights.len() {
            if t[c] != 0.0 {
                total -= weights[c] * t[c] * y[c].max(PROBABILITY_FLOOR).ln();
            }
        }
    }
    Ok(total / logits.len() as f64)
}

/// Gradient of [`cce_loss`] with respect to the logits.
pub fn cce_gradient(
    logits: &[Vec<f64>],
    targets: &[Vec<f64>],
    weights: &[f64],
) -> Result<Vec<Vec<f64>>, LossError> {
    check_shapes(logits, targets, weights)?;
    let scale = 1.0 / logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(z, t)| {
            let y = softmax(z)?;
            let mass: f64 = weights.iter().zip(t).map(|(w, t)| w * t).sum();
            Ok(y.iter()
                .zip(weights.iter().zip(t))
                .map(|(y, (w, t))| (y * mass - w * t) * scale)
                .collect())
        })
        .collect()
}

/// One randomly drawn loss instance for gradient checking.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub mode: LossMode,
    pub logits: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl GradCheckInstance {
    /// K in 2..=10, batch 1..=8, logits ~ N(0, 2^2). A third of the labels
    /// are negatives for BG and EOS. BG weights follow random counts.
    pub fn random(mode: LossMode, rng: &mut SeededStream) -> Self {
        let k = 2 + rng.next_index(9);
        let n = 1 + rng.next_index(8);
        let c = mode.outputs(k);
        let logits = (0..n)
            .map(|_| (0..c).map(|_| 2.0 * rng.next_standard_normal()).collect())
            .collect();
        let targets = (0..n)
            .map(|_| {
                let label = if mode.uses_negatives() && rng.next_index(3) == 0 {
                    0
                } else {
                    1 + rng.next_index(k) as i64
                };
                make_targets(mode, label, k).expect("label drawn from the valid range")
            })
            .collect();
        let weights = match mode {
            LossMode::BG => {
                let counts: Vec<usize> = (0..c).map(|_| 1 + rng.next_index(500)).collect();
                bg_class_weights(&counts).expect("counts are positive")
            }
            _ => vec![1.0; c],
        };
        Self {
            mode,
            logits,
            targets,
            weights,
        }
    }

    /// `max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)` using
    /// central differences with step `h`.
    pub fn relative_error(&self, h: f64) -> f64 {
        let analytic =
            cce_gradient(&self.logits, &self.targets, &self.weights).expect("valid shapes");
        let mut z = self.logits.clone();
        let mut max_diff: f64 = 0.0;
        let mut max_a: f64 = 0.0;
        let mut max_n: f64 = 0.0;
        for n in 0..z.len() {
            for j in 0..z[n].len() {
                let orig = z[n][j];
                z[n][j] = orig + h;
                let plus = cce_loss(&z, &self.targets, &self.weights).expect("valid shapes");
                z[n][j] = orig - h;
                let minus = cce_loss(&z, &self.targets, &self.weights).expect("valid shapes");
                z[n][j] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                max_diff = max_diff.max((analytic[n][j] - numeric).abs());
                max_a = max_a.max(analytic[n][j].abs());
                max_n = max_n.max(numeric.abs());
            }
        }
        max_diff / max_a.max(max_n).max(1e-12)
    }
}

/// Summary of a gradient-check run for one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSummary {
    pub mode: LossMode,
    pub instances: usize,
    pub max_relative_error: f64,
}

pub fn gradient_check(mode: LossMode, instances: usize, step: f64, seed: u64) -> GradCheckSummary {
    let mut rng = SeededStream::new(seed);
    let max_relative_error = (0..instances)
        .map(|_| GradCheckInstance::random(mode, &mut rng).relative_error(step))
        .fold(0.0, f64::max);
    GradCheckSummary {
        mode,
        instances,
        max_relative_error,
    }
}

/// Gaussian clusters in the plane. Known cluster `i` gets label `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub known_means: Vec<[f64; 2]>,
    pub negative_means: Vec<[f64; 2]>,
    pub unknown_means: Vec<[f64; 2]>,
    pub std_dev: f64,
    pub per_cluster: usize,
}

impl ToyParams {
    /// `k` known clusters evenly spaced on a circle of radius `radius`
    /// starting at 90 degrees, one negative cluster at the origin and one
    /// unknown cluster at `unknown`.
    pub fn ring(k: usize, radius: f64, unknown: [f64; 2]) -> Self {
        let known_means = (0..k)
            .map(|i| {
                let angle = (90.0 + 360.0 * i as f64 / k as f64).to_radians();
                [radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        Self {
            known_means,
            negative_means: vec![[0.0, 0.0]],
            unknown_means: vec![unknown],
            std_dev: 1.0,
            per_cluster: 200,
        }
    }

    /// Negatives sit between the knowns and a distant unknown cluster:
    /// `k` known means spread over the upper arc from 30 to 150 degrees,
    /// negatives at the origin and the unknown cluster at `(0, -radius)`.
    pub fn far_unknown(k: usize, radius: f64) -> Self {
        let known_means = (0..k)
            .map(|i| {
                let t = if k > 1 {
                    i as f64 / (k - 1) as f64
                } else {
                    0.5
                };
                let angle = (30.0 + 120.0 * t).to_radians();
                [radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        Self {
            known_means,
            negative_means: vec![[0.0, 0.0]],
            unknown_means: vec![[0.0, -radius]],
            std_dev: 1.0,
            per_cluster: 200,
        }
    }

    pub fn k(&self) -> usize {
        self.known_means.len()
    }

    fn validate(&self) -> Result<(), LossError> {
        let bad = |m: &str| Err(LossError::ToyParams(m.to_string()));
        if self.known_means.len() < 2 {
            return bad("need at least two known clusters");
        }
        if self.negative_means.is_empty() {
            return bad("need at least one negative cluster");
        }
        if self.unknown_means.is_empty() {
            return bad("need at least one unknown cluster");
        }
        if !(self.std_dev.is_finite() && self.std_dev > 0.0) {
            return bad("standard deviation must be positive and finite");
        }
        if self.per_cluster == 0 {
            return bad("clusters need at least one point");
        }
        let all = self
            .known_means
            .iter()
            .chain(&self.negative_means)
            .chain(&self.unknown_means);
        if all.flatten().any(|v| !v.is_finite()) {
            return bad("cluster means must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyPoint {
    pub x: [f64; 2],
    pub label: i64,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub k: usize,
    pub points: Vec<ToyPoint>,
}

impl ToyDataset {
    /// Points a model of `mode` is trained on: never unknowns, and no
    /// negatives for S.
    pub fn training_subset(&self, mode: LossMode) -> impl Iterator<Item = &ToyPoint> + '_ {
        self.points.iter().filter(move |p| match p.role {
            Role::Known => true,
            Role::Negative => mode.uses_negatives(),
            Role::Unknown => false,
        })
    }
}

/// Draws clusters in order known, negative, unknown; each point consumes two
/// normal deviates (x then y) from one SplitMix64 stream.
pub fn make_toy_dataset(params: &ToyParams, seed: u64) -> Result<ToyDataset, LossError> {
    params.validate()?;
    let mut rng = SeededStream::new(seed);
    let clusters = params
        .known_means
        .iter()
        .enumerate()
        .map(|(i, m)| (m, i as i64 + 1, Role::Known))
        .chain(params.negative_means.iter().map(|m| (m, 0, Role::Negative)))
        .chain(params.unknown_means.iter().map(|m| (m, -1, Role::Unknown)));
    let mut points = Vec::new();
    for (mean, label, role) in clusters {
        for _ in 0..params.per_cluster {
            let dx = rng.next_standard_normal();
            let dy = rng.next_standard_normal();
            points.push(ToyPoint {
                x: [mean[0] + params.std_dev * dx, mean[1] + params.std_dev * dy],
                label,
                role,
            });
        }
    }
    Ok(ToyDataset {
        k: params.k(),
        points,
    })
}

/// Affine map from the plane to `C` logits; row `c` holds `(w_x, w_y, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<[f64; 3]>,
}

impl LinearModel {
    pub fn logits(&self, x: [f64; 2]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w[0] * x[0] + w[1] * x[1] + w[2])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainResult {
    pub mode: LossMode,
    pub k: usize,
    pub model: LinearModel,
    /// Negatives left out because the mode trains on knowns only.
    pub excluded_negatives: usize,
    /// Loss before each update, followed by the final loss.
    pub loss_history: Vec<f64>,
}

impl ToyTrainResult {
    /// Logit scores for every point of `data`, labelled with its role code.
    pub fn score_table(&self, data: &ToyDataset) -> Result<ScoreTable, LossError> {
        let rows = data
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| ScoreRow {
                sample_id: format!("toy{i:05}"),
                label: p.label,
                values: self.model.logits(p.x),
            })
            .collect();
        Ok(ScoreTable::new(
            self.k,
            self.mode.outputs(self.k),
            ScoreKind::Logits,
            rows,
        )?)
    }
}

/// Full-batch gradient descent on a linear model.
///
/// Weights start from N(0, 0.01^2) drawn from `seed`.
pub fn toy_train(
    data: &ToyDataset,
    mode: LossMode,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
    scheme: &WeightScheme,
) -> Result<ToyTrainResult, LossError> {
    let k = data.k;
    let c = mode.outputs(k);
    let train: Vec<&ToyPoint> = data.training_subset(mode).collect();
    let excluded_negatives = if mode.uses_negatives() {
        0
    } else {
        data.points
            .iter()
            .filter(|p| p.role == Role::Negative)
            .count()
    };
    if excluded_negatives > 0 {
        log::info!("{mode}: excluded {excluded_negatives} negative samples from training");
    }
    if !train.iter().any(|p| p.role == Role::Known) {
        return Err(LossError::NoTrainingData("known"));
    }
    if mode.uses_negatives() && !train.iter().any(|p| p.role == Role::Negative) {
        return Err(LossError::NoTrainingData("negative"));
    }

    let targets = train
        .iter()
        .map(|p| make_targets(mode, p.label, k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut counts = vec![0usize; c];
    for p in &train {
        let slot = if p.label >= 1 {
            (p.label - 1) as usize
        } else {
            k
        };
        if slot < c {
            counts[slot] += 1;
        }
    }
    let weights = scheme.weights(mode, &counts)?;

    let mut rng = SeededStream::new(seed);
    let mut model = LinearModel {
        weights: (0..c)
            .map(|_| {
                [
                    0.01 * rng.next_standard_normal(),
                    0.01 * rng.next_standard_normal(),
                    0.01 * rng.next_standard_normal(),
                ]
            })
            .collect(),
    };
    let inputs: Vec<[f64; 3]> = train.iter().map(|p| [p.x[0], p.x[1], 1.0]).collect();
    let mut loss_history = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let logits: Vec<Vec<f64>> = train.iter().map(|p| model.logits(p.x)).collect();
        loss_history.push(cce_loss(&logits, &targets, &weights)?);
        let grad = cce_gradient(&logits, &targets, &weights)?;
        let mut step = vec![[0.0; 3]; c];
        for (g, x) in grad.iter().zip(&inputs) {
            for (row, gj) in step.iter_mut().zip(g) {
                for d in 0..3 {
                    row[d] += gj * x[d];
                }
            }
        }
        for (w, s) in model.weights.iter_mut().zip(&step) {
            for d in 0..3 {
                w[d] -= learning_rate * s[d];
            }
        }
    }
    let logits: Vec<Vec<f64>> = train.iter().map(|p| model.logits(p.x)).collect();
    loss_history.push(cce_loss(&logits, &targets, &weights)?);
    Ok(ToyTrainResult {
        mode,
        k,
        model,
        excluded_negatives,
        loss_history,
    })
}
