//! Query placement: max-variance selection for a leading model, sequential
//! space filling, and the initial Latin-hypercube design.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AosError, Result};
use crate::gp::GpModel;
use crate::seed;

/// Candidates closer than this to a measured point are never proposed.
pub const DUPLICATE_TOL: f64 = 1e-9;

/// Who placed a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leader {
    Output(usize),
    SpaceFilling,
}

impl fmt::Display for Leader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Leader::Output(m) => write!(f, "{m}"),
            Leader::SpaceFilling => f.write_str("SF"),
        }
    }
}

impl FromStr for Leader {
    type Err = AosError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "SF" {
            return Ok(Leader::SpaceFilling);
        }
        s.parse()
            .map(Leader::Output)
            .map_err(|_| AosError::Serde(format!("unknown leader {s:?}")))
    }
}

/// A fixed, seeded set of points in the unit hypercube over which queries
/// are selected.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub points: Vec<Vec<f64>>,
    pub generation_seed: u64,
}

impl CandidateSet {
    /// `count` points of an Owen-scrambled Sobol sequence.
    pub fn sobol(count: usize, dim: usize, generation_seed: u64) -> Result<Self> {
        if count == 0 || count > 1 << 16 {
            return Err(AosError::Contract(format!(
                "candidate count must be in 1..=65536, got {count}"
            )));
        }
        if dim == 0 || dim > sobol_burley::NUM_DIMENSIONS as usize {
            return Err(AosError::Contract(format!("unsupported candidate dimension {dim}")));
        }
        let scramble = (generation_seed ^ (generation_seed >> 32)) as u32;
        let points = (0..count as u32)
            .map(|i| {
                (0..dim as u32)
                    .map(|d| f64::from(sobol_burley::sample(i, d, scramble)))
                    .collect()
            })
            .collect();
        Ok(CandidateSet {
            points,
            generation_seed,
        })
    }

    /// Wrap explicit points (e.g. a grid). The seed is informational.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(AosError::Contract("candidate set must be non-empty".into()));
        }
        if points.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AosError::Contract("candidates must lie in [0, 1]".into()));
        }
        Ok(CandidateSet {
            points,
            generation_seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub point: Vec<f64>,
    /// Index into the candidate set the point was taken from.
    pub candidate_index: usize,
    pub proposed_by: Leader,
    /// Predictive variance (max-variance) or minimum distance (space filling).
    pub score: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn min_sq_dist(point: &[f64], measured: &[Vec<f64>]) -> f64 {
    measured
        .iter()
        .map(|m| sq_dist(point, m))
        .fold(f64::INFINITY, f64::min)
}

/// Argmax over candidates of `score`, skipping near-duplicates of measured
/// points. Ties keep the lowest index.
fn argmax_candidate(
    candidates: &CandidateSet,
    measured: &[Vec<f64>],
    mut score: impl FnMut(usize, &[f64], f64) -> f64,
) -> Option<(usize, f64)> {
    let tol2 = DUPLICATE_TOL * DUPLICATE_TOL;
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.points.iter().enumerate() {
        let d2 = min_sq_dist(c, measured);
        if d2 <= tol2 {
            continue;
        }
        let s = score(i, c, d2);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// The candidate with the largest predictive variance under `model`.
pub fn max_variance_query(
    model: &GpModel,
    candidates: &CandidateSet,
    measured: &[Vec<f64>],
    leader: usize,
) -> Result<Query> {
    if candidates.is_empty() {
        return Err(AosError::Contract("candidate set must be non-empty".into()));
    }
    let variances = model.predict_many(&candidates.points)?;
    let (index, score) = argmax_candidate(candidates, measured, |i, _, _| variances[i].variance)
        .ok_or_else(|| AosError::Exhausted("every candidate duplicates a measured point".into()))?;
    Ok(Query {
        point: candidates.points[index].clone(),
        candidate_index: index,
        proposed_by: Leader::Output(leader),
        score,
    })
}

/// The candidate farthest (in Euclidean distance) from its nearest measured
/// point. On the unit box with independent coordinates this is the
/// Mahalanobis criterion with identity covariance.
pub fn space_filling_query(measured: &[Vec<f64>], candidates: &CandidateSet) -> Result<Query> {
    if measured.is_empty() {
        return Err(AosError::Contract(
            "space filling needs at least one measured point".into(),
        ));
    }
    if candidates.is_empty() {
        return Err(AosError::Contract("candidate set must be non-empty".into()));
    }
    let (index, d2) = argmax_candidate(candidates, measured, |_, _, d2| d2)
        .ok_or_else(|| AosError::Exhausted("every candidate duplicates a measured point".into()))?;
    Ok(Query {
        point: candidates.points[index].clone(),
        candidate_index: index,
        proposed_by: Leader::SpaceFilling,
        score: d2.sqrt(),
    })
}

/// Seeded Latin-hypercube sample of `n_init` points in `[0, 1]^dim`.
pub fn initial_design(n_init: usize, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_init == 0 {
        return Err(AosError::Contract("initial design needs at least one point".into()));
    }
    let mut rng = seed::rng(seed);
    let mut design = vec![vec![0.0; dim]; n_init];
    let mut strata: Vec<usize> = (0..n_init).collect();
    for d in 0..dim {
        strata.shuffle(&mut rng);
        for (row, &s) in design.iter_mut().zip(&strata) {
            row[d] = (s as f64 + rng.random::<f64>()) / n_init as f64;
        }
    }
    Ok(design)
}
