//! End-to-end toy experiment: train S, BG and EOS linear models on 2-D
//! clusters and evaluate them on a fresh draw with negatives and unknowns.

use crate::losses::{
    make_toy_dataset, toy_train, LossError, LossMode, ToyDataset, ToyParams, ToyTrainResult,
    WeightScheme,
};
use crate::metrics::{
    ccr_at_fpr, confidence, oscr_curve, ConfidenceReport, EvaluationGroups, Group, MetricsError,
    OscrCurve,
};
use crate::report::{ResultRow, FPR_TARGETS};
use crate::scores::ScoreTable;

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub params: ToyParams,
    /// Seed of the training draw; the test draw uses `seed + 1` and the
    /// weight initialization `seed + 2`.
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub modes: Vec<LossMode>,
}

impl Default for ToyConfig {
    /// Four known clusters on a ring of radius 3.5, negatives at the origin
    /// and an unknown cluster at (0.5, 0.5), away from every known mean.
    fn default() -> Self {
        Self {
            params: ToyParams::ring(4, 3.5, [0.5, 0.5]),
            seed: 42,
            epochs: 1000,
            learning_rate: 0.5,
            modes: LossMode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEvaluation {
    pub group: Group,
    pub confidence: ConfidenceReport,
    pub curve: OscrCurve,
    pub ccr_at_fpr: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModeOutcome {
    pub training: ToyTrainResult,
    pub test_scores: ScoreTable,
    pub negative: GroupEvaluation,
    pub unknown: GroupEvaluation,
}

impl ToyModeOutcome {
    pub fn group(&self, group: Group) -> &GroupEvaluation {
        match group {
            Group::Negative => &self.negative,
            Group::Unknown => &self.unknown,
        }
    }

    pub fn result_row(&self, group: Group) -> ResultRow {
        let g = self.group(group);
        ResultRow {
            label: format!("toy - {} ({group})", self.training.mode),
            epoch: Some(self.training.loss_history.len() as u64 - 1),
            gamma_plus: Some(g.confidence.gamma_plus),
            gamma_minus: Some(g.confidence.gamma_minus),
            ccr: g.ccr_at_fpr.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOutcome {
    pub train: ToyDataset,
    pub test: ToyDataset,
    pub modes: Vec<ToyModeOutcome>,
}

impl ToyOutcome {
    pub fn mode(&self, mode: LossMode) -> Option<&ToyModeOutcome> {
        self.modes.iter().find(|m| m.training.mode == mode)
    }
}

pub fn evaluate_group(scores: &ScoreTable, group: Group) -> Result<GroupEvaluation, MetricsError> {
    let curve = oscr_curve(&EvaluationGroups::from_table(scores, group)?)?;
    Ok(GroupEvaluation {
        group,
        confidence: confidence(scores, group)?,
        ccr_at_fpr: ccr_at_fpr(&curve, &FPR_TARGETS)?,
        curve,
    })
}

pub fn run_toy(config: &ToyConfig) -> Result<ToyOutcome, ToyError> {
    let train = make_toy_dataset(&config.params, config.seed)?;
    let test = make_toy_dataset(&config.params, config.seed.wrapping_add(1))?;
    let mut modes = Vec::with_capacity(config.modes.len());
    for &mode in &config.modes {
        let training = toy_train(
            &train,
            mode,
            config.epochs,
            config.learning_rate,
            config.seed.wrapping_add(2),
            &WeightScheme::ModeDefault,
        )?;
        let test_scores = training.score_table(&test)?;
        modes.push(ToyModeOutcome {
            negative: evaluate_group(&test_scores, Group::Negative)?,
            unknown: evaluate_group(&test_scores, Group::Unknown)?,
            training,
            test_scores,
        });
    }
    Ok(ToyOutcome { train, test, modes })
}
