//! Leader selection for active output selection.
//!
//! Four strategies share one measurement loop and differ only in which output
//! model places the next query:
//!
//! * `SF` ignores the models and fills space.
//! * `RR` cycles through the unfinished outputs.
//! * `CVH` picks the output with the highest filtered K-fold CV error.
//! * `CVHn` divides that filtered error by the model's own noise estimate
//!   before taking the argmax, so an output whose error is already at its
//!   noise floor stops attracting queries.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::active::{self, CandidateSet, Leader, Query};
use crate::dataset::Dataset;
use crate::error::{AosError, Result};
use crate::gp::{self, FitConfig, GpModel, KernelParams};
use crate::seed::{self, Stream};

/// Smallest noise estimate (relative to the output range) used as a divisor.
pub const NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    SF,
    RR,
    CVH,
    CVHn,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [StrategyKind::SF, StrategyKind::RR, StrategyKind::CVH, StrategyKind::CVHn];

    fn uses_cv(self) -> bool {
        matches!(self, StrategyKind::CVH | StrategyKind::CVHn)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StrategyKind::SF => "SF",
            StrategyKind::RR => "RR",
            StrategyKind::CVH => "CVH",
            StrategyKind::CVHn => "CVHn",
        };
        f.write_str(s)
    }
}

impl FromStr for StrategyKind {
    type Err = AosError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sf" => Ok(StrategyKind::SF),
            "rr" => Ok(StrategyKind::RR),
            "cvh" => Ok(StrategyKind::CVH),
            "cvhn" => Ok(StrategyKind::CVHn),
            _ => Err(AosError::Config(format!(
                "unknown strategy {s:?}, expected one of SF, RR, CVH, CVHn"
            ))),
        }
    }
}

/// Per-output cross-validation snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    /// RMSE of held-out predictions over the target range.
    pub raw: f64,
    /// Moving average of the recent raw scores.
    pub filtered: f64,
    /// `filtered / noise_estimate`.
    pub normalized: f64,
    /// Fitted noise standard deviation over the target range, floored.
    pub noise_estimate: f64,
    /// The targets had zero range.
    pub degenerate: bool,
}

impl CvScore {
    pub fn new(raw: f64, filtered: f64, noise_estimate: f64) -> Self {
        let noise_estimate = noise_estimate.max(NOISE_FLOOR);
        CvScore {
            raw,
            filtered,
            normalized: filtered / noise_estimate,
            noise_estimate,
            degenerate: false,
        }
    }
}

/// Outcome of [`cross_validation_error`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvError {
    pub value: f64,
    pub degenerate: bool,
}

/// How the model of each fold is obtained.
#[derive(Debug, Clone)]
pub enum FoldFit {
    /// Condition on the fold's training data with fixed hyperparameters.
    Fixed(KernelParams),
    /// Re-optimize hyperparameters on every fold.
    Refit(FitConfig),
}

/// Split `0..n` into `k` near-equal folds after a seeded shuffle.
pub fn make_folds(n: usize, k: usize, fold_seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(AosError::Folds { folds: k, samples: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(fold_seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    Ok(folds)
}

fn target_range(targets: &[f64]) -> f64 {
    let lo = targets.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Normalized root-mean-squared K-fold cross-validation error.
pub fn cross_validation_error(
    inputs: &[Vec<f64>],
    targets: &[f64],
    k: usize,
    fold_seed: u64,
    fold_fit: &FoldFit,
) -> Result<CvError> {
    if inputs.len() != targets.len() {
        return Err(AosError::Contract("inputs and targets differ in length".into()));
    }
    let folds = make_folds(inputs.len(), k, fold_seed)?;
    cv_over_folds(inputs, targets, &folds, fold_fit)
}

/// Cross-validation error over an explicit partition.
pub fn cv_over_folds(
    inputs: &[Vec<f64>],
    targets: &[f64],
    folds: &[Vec<usize>],
    fold_fit: &FoldFit,
) -> Result<CvError> {
    let range = target_range(targets);
    if !(range > 0.0) {
        return Ok(CvError {
            value: 0.0,
            degenerate: true,
        });
    }
    let n = targets.len();
    let mut held_out = vec![false; n];
    let mut sse = 0.0;
    let mut count = 0usize;
    for (f, fold) in folds.iter().enumerate() {
        fold.iter().for_each(|&i| held_out[i] = true);
        let (train_x, train_y): (Vec<Vec<f64>>, Vec<f64>) = (0..n)
            .filter(|&i| !held_out[i])
            .map(|i| (inputs[i].clone(), targets[i]))
            .unzip();
        fold.iter().for_each(|&i| held_out[i] = false);

        let model = match fold_fit {
            FoldFit::Fixed(params) => {
                let mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
                GpModel::condition_with_mean(&train_x, &train_y, params.clone(), mean)?
            }
            FoldFit::Refit(cfg) => {
                let cfg = cfg.clone().with_seed(seed::derive(cfg.seed, Stream::Fit, &[f as u64]));
                gp::fit(&train_x, &train_y, &cfg)?
            }
        };
        for &i in fold {
            let e = model.predict(&inputs[i])?.mean - targets[i];
            sse += e * e;
            count += 1;
        }
    }
    Ok(CvError {
        value: (sse / count as f64).sqrt() / range,
        degenerate: false,
    })
}

/// Arithmetic mean of the last `window` entries.
pub fn filter_cv(history: &[f64], window: usize) -> f64 {
    let w = window.max(1).min(history.len());
    if w == 0 {
        return 0.0;
    }
    history[history.len() - w..].iter().sum::<f64>() / w as f64
}

/// Outputs whose filtered CV error is at or below `threshold`.
pub fn check_finished(scores: &[CvScore], threshold: Option<f64>) -> Vec<bool> {
    match threshold {
        None => vec![false; scores.len()],
        Some(t) => scores.iter().map(|s| s.filtered <= t).collect(),
    }
}

/// Tunables of the strategy loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub cv_folds: usize,
    pub filter_window: usize,
    pub quality_threshold: Option<f64>,
    /// Re-optimize hyperparameters inside every CV fold instead of reusing
    /// the full-data hyperparameters.
    pub cv_refit: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            cv_folds: 10,
            filter_window: 3,
            quality_threshold: None,
            cv_refit: false,
        }
    }
}

/// Mutable state of one strategy within one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyState {
    pub kind: StrategyKind,
    pub config: StrategyConfig,
    pub leader_history: Vec<Leader>,
    /// Raw CV scores per output, oldest first.
    pub cv_history: Vec<Vec<f64>>,
    pub finished: Vec<bool>,
    pub rr_cursor: usize,
    /// Seed from which per-iteration fold shuffles are derived.
    pub seed: u64,
    pub iteration: usize,
}

/// Result of one [`StrategyState::step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// `None` once every output is finished.
    pub query: Option<Query>,
    pub scores: Option<Vec<CvScore>>,
}

impl StrategyState {
    pub fn new(kind: StrategyKind, n_outputs: usize, config: StrategyConfig, seed: u64) -> Self {
        StrategyState {
            kind,
            config,
            leader_history: Vec::new(),
            cv_history: vec![Vec::new(); n_outputs],
            finished: vec![false; n_outputs],
            rr_cursor: 0,
            seed,
            iteration: 0,
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.finished.len()
    }

    pub fn all_finished(&self) -> bool {
        self.finished.iter().all(|f| *f)
    }

    /// Choose the leader for the next query and record it. Returns `None`
    /// when every output is finished.
    pub fn select_leader(&mut self, scores: Option<&[CvScore]>) -> Result<Option<Leader>> {
        if self.all_finished() {
            return Ok(None);
        }
        let m = self.n_outputs();
        let leader = match self.kind {
            StrategyKind::SF => Leader::SpaceFilling,
            StrategyKind::RR => {
                let chosen = (0..m)
                    .map(|k| (self.rr_cursor + k) % m)
                    .find(|&i| !self.finished[i])
                    .expect("an unfinished output exists");
                self.rr_cursor = (chosen + 1) % m;
                Leader::Output(chosen)
            }
            StrategyKind::CVH | StrategyKind::CVHn => {
                let scores = scores.ok_or_else(|| {
                    AosError::Contract(format!("{} needs cross-validation scores", self.kind))
                })?;
                if scores.len() != m {
                    return Err(AosError::Contract(format!(
                        "{} scores for {m} outputs",
                        scores.len()
                    )));
                }
                let key = |s: &CvScore| match self.kind {
                    StrategyKind::CVH => s.filtered,
                    _ => s.normalized,
                };
                let mut best: Option<(usize, f64)> = None;
                for (i, s) in scores.iter().enumerate() {
                    if self.finished[i] {
                        continue;
                    }
                    let v = key(s);
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
                Leader::Output(best.expect("an unfinished output exists").0)
            }
        };
        self.leader_history.push(leader);
        Ok(Some(leader))
    }

    /// Score every output: K-fold CV error, moving-average filter, noise
    /// estimate and normalized score. Folds are capped at the sample count.
    pub fn score_outputs(&mut self, models: &[GpModel], dataset: &Dataset) -> Result<Vec<CvScore>> {
        let n = dataset.len();
        let k = self.config.cv_folds.min(n);
        let mut scores = Vec::with_capacity(models.len());
        for (m, model) in models.iter().enumerate() {
            let targets = dataset.targets(m);
            let fold_seed = seed::derive(self.seed, Stream::Folds, &[self.iteration as u64, m as u64]);
            let fold_fit = if self.config.cv_refit {
                FoldFit::Refit(
                    FitConfig::default()
                        .with_seed(seed::derive(fold_seed, Stream::Fit, &[]))
                        .with_warm_start(Some(model.params.clone())),
                )
            } else {
                FoldFit::Fixed(model.params.clone())
            };
            let cv = cross_validation_error(&dataset.inputs, &targets, k, fold_seed, &fold_fit)?;
            self.cv_history[m].push(cv.value);
            let filtered = filter_cv(&self.cv_history[m], self.config.filter_window);
            let range = target_range(&targets);
            let noise = if range > 0.0 { model.noise_std() / range } else { NOISE_FLOOR };
            let mut score = CvScore::new(cv.value, filtered, noise);
            score.degenerate = cv.degenerate;
            scores.push(score);
        }
        Ok(scores)
    }

    /// One iteration: score (when needed), update finished flags, pick the
    /// leader and return its query. The caller measures the query, appends it
    /// to the dataset and refits every model before the next step.
    pub fn step(&mut self, models: &[GpModel], dataset: &Dataset, candidates: &CandidateSet) -> Result<StepOutcome> {
        if models.len() != self.n_outputs() {
            return Err(AosError::Contract(format!(
                "{} models for {} outputs",
                models.len(),
                self.n_outputs()
            )));
        }
        if dataset.is_empty() {
            return Err(AosError::Contract("step needs the initial design to be measured".into()));
        }
        let scores = if self.kind.uses_cv() || self.config.quality_threshold.is_some() {
            Some(self.score_outputs(models, dataset)?)
        } else {
            None
        };
        if let Some(s) = &scores {
            let done = check_finished(s, self.config.quality_threshold);
            self.finished.iter_mut().zip(done).for_each(|(f, d)| *f |= d);
        }
        self.iteration += 1;
        let Some(leader) = self.select_leader(scores.as_deref())? else {
            return Ok(StepOutcome { query: None, scores });
        };
        let query = match leader {
            Leader::SpaceFilling => active::space_filling_query(&dataset.inputs, candidates)?,
            Leader::Output(m) => active::max_variance_query(&models[m], candidates, &dataset.inputs, m)?,
        };
        Ok(StepOutcome {
            query: Some(query),
            scores,
        })
    }
}
