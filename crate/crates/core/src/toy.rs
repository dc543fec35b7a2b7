//! Reproducible multi-output toy processes.
//!
//! Each output is a seeded sum of Gaussian bumps on the unit square.
//! High-complexity outputs additionally carry axis-aligned Heaviside steps.
//! Noise is additive Gaussian with a per-output standard deviation chosen so
//! that range / sigma on the 11 x 11 validation grid hits a target SNR.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AosError, Result};
use crate::seed::{self, Stream};

/// Input dimensionality of the benchmark setups.
pub const SETUP_DIM: usize = 2;
/// Points per axis of the validation grid.
pub const GRID_SIDE: usize = 11;
/// Plausible SNR band for real measurement channels.
pub const SNR_BAND: (f64, f64) = (7.0, 100.0);
/// Minimum jump of a step term as a fraction of the output's grid range.
pub const MIN_STEP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Low,
    HighWithSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupSpec {
    pub setup_id: u8,
    pub complexities: Vec<Complexity>,
    pub target_snrs: Vec<f64>,
}

impl SetupSpec {
    /// Default archetypes: 1 = similar outputs, 2 = one stepped output,
    /// 3 = one stepped output plus a different, noisier output.
    pub fn standard(setup_id: u8) -> Result<Self> {
        use Complexity::*;
        let spec = match setup_id {
            1 => SetupSpec {
                setup_id,
                complexities: vec![Low, Low, Low],
                target_snrs: vec![50.0, 50.0, 50.0],
            },
            2 => SetupSpec {
                setup_id,
                complexities: vec![HighWithSteps, Low, Low],
                target_snrs: vec![50.0, 50.0, 50.0],
            },
            3 => SetupSpec {
                setup_id,
                complexities: vec![HighWithSteps, Low, Low],
                target_snrs: vec![50.0, 10.0, 50.0],
            },
            other => return Err(AosError::Config(format!("unknown setup {other}, expected 1, 2 or 3"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_outputs(&self) -> usize {
        self.complexities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.complexities.len();
        if m == 0 || self.target_snrs.len() != m {
            return Err(AosError::Config(format!(
                "{} complexities but {} target SNRs",
                m,
                self.target_snrs.len()
            )));
        }
        if self.target_snrs.iter().any(|s| !(*s > 0.0)) {
            return Err(AosError::Config("target SNRs must be positive".into()));
        }
        let high: Vec<usize> = (0..m)
            .filter(|&i| self.complexities[i] == Complexity::HighWithSteps)
            .collect();
        let all_equal_snr = self.target_snrs.windows(2).all(|w| w[0] == w[1]);
        let ok = match self.setup_id {
            1 => high.is_empty() && all_equal_snr,
            2 => high.len() == 1 && all_equal_snr,
            3 => {
                let max_snr = self.target_snrs.iter().cloned().fold(f64::MIN, f64::max);
                high.len() == 1
                    && (0..m).any(|i| i != high[0] && self.target_snrs[i] < max_snr)
                    && self.target_snrs[high[0]] == max_snr
            }
            _ => false,
        };
        if !ok {
            return Err(AosError::Config(format!(
                "spec does not match the structure of setup {}",
                self.setup_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub amplitude: f64,
    pub widths: Vec<f64>,
}

/// `jump * H(x[axis] - threshold)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub axis: usize,
    pub threshold: f64,
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFunction {
    pub bumps: Vec<Bump>,
    pub steps: Vec<Step>,
}

impl ToyFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let smooth: f64 = self
            .bumps
            .iter()
            .map(|b| {
                let r2: f64 = x
                    .iter()
                    .zip(&b.center)
                    .zip(&b.widths)
                    .map(|((xi, c), w)| ((xi - c) / w).powi(2))
                    .sum();
                b.amplitude * (-0.5 * r2).exp()
            })
            .sum();
        let steps: f64 = self
            .steps
            .iter()
            .filter(|s| x[s.axis] >= s.threshold)
            .map(|s| s.jump)
            .sum();
        smooth + steps
    }
}

/// M ground-truth functions plus calibrated noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyProcess {
    pub spec: SetupSpec,
    pub seed: u64,
    pub dim: usize,
    pub functions: Vec<ToyFunction>,
    pub noise_sigmas: Vec<f64>,
    /// (min, max) of each noise-free output over the validation grid.
    pub output_ranges: Vec<(f64, f64)>,
}

/// Equidistant grid with `side` points per axis on `[0, 1]^dim`, first axis
/// outermost.
pub fn grid(side: usize, dim: usize) -> Vec<Vec<f64>> {
    let step = 1.0 / (side - 1) as f64;
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            let mut p = vec![0.0; dim];
            for d in (0..dim).rev() {
                p[d] = (k % side) as f64 * step;
                k /= side;
            }
            p
        })
        .collect()
}

fn grid_range(f: &ToyFunction, grid: &[Vec<f64>]) -> (f64, f64) {
    grid.iter()
        .map(|x| f.eval(x))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn random_smooth(rng: &mut impl Rng, dim: usize) -> ToyFunction {
    let n_bumps = rng.random_range(4..=8);
    let bumps = (0..n_bumps)
        .map(|_| Bump {
            center: (0..dim).map(|_| rng.random::<f64>()).collect(),
            amplitude: rng.random_range(-1.0..=1.0),
            widths: (0..dim).map(|_| rng.random_range(0.15..=0.5)).collect(),
        })
        .collect();
    ToyFunction {
        bumps,
        steps: Vec::new(),
    }
}

fn add_steps(rng: &mut impl Rng, f: &mut ToyFunction, dim: usize, grid: &[Vec<f64>]) {
    let (lo, hi) = grid_range(f, grid);
    let smooth_range = hi - lo;
    let n_steps = rng.random_range(1..=2);
    // A jump of at least half the smooth range keeps every step above
    // MIN_STEP_FRACTION of the final range, even with two steps.
    f.steps = (0..n_steps)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Step {
                axis: rng.random_range(0..dim),
                threshold: rng.random_range(0.25..=0.75),
                jump: sign * rng.random_range(0.5..=1.0) * smooth_range,
            }
        })
        .collect();
}

/// Build the process for `spec` deterministically from `seed`. Every output
/// function draws from its own derived seed.
pub fn generate_process(spec: &SetupSpec, seed: u64) -> Result<ToyProcess> {
    generate_process_with_dim(spec, seed, SETUP_DIM)
}

pub fn generate_process_with_dim(spec: &SetupSpec, seed: u64, dim: usize) -> Result<ToyProcess> {
    spec.validate()?;
    if dim == 0 {
        return Err(AosError::Config("process dimension must be positive".into()));
    }
    let grid = grid(GRID_SIDE, dim);
    let mut functions = Vec::with_capacity(spec.n_outputs());
    for (m, complexity) in spec.complexities.iter().enumerate() {
        let mut attempt = 0u64;
        let f = loop {
            let mut rng = seed::rng(seed::derive(seed, Stream::Process, &[m as u64, attempt]));
            let mut f = random_smooth(&mut rng, dim);
            if *complexity == Complexity::HighWithSteps {
                add_steps(&mut rng, &mut f, dim, &grid);
            }
            let (lo, hi) = grid_range(&f, &grid);
            let range = hi - lo;
            let steps_ok = f
                .steps
                .iter()
                .all(|s| s.jump.abs() >= MIN_STEP_FRACTION * range);
            if range > 1e-3 && steps_ok {
                break f;
            }
            attempt += 1;
        };
        functions.push(f);
    }
    let output_ranges: Vec<(f64, f64)> = functions.iter().map(|f| grid_range(f, &grid)).collect();
    let noise_sigmas = output_ranges
        .iter()
        .zip(&spec.target_snrs)
        .map(|((lo, hi), snr)| (hi - lo) / snr)
        .collect();
    Ok(ToyProcess {
        spec: spec.clone(),
        seed,
        dim,
        functions,
        noise_sigmas,
        output_ranges,
    })
}

impl ToyProcess {
    pub fn n_outputs(&self) -> usize {
        self.functions.len()
    }

    /// Noise-free values of every output.
    pub fn truth(&self, x: &[f64]) -> Vec<f64> {
        self.functions.iter().map(|f| f.eval(x)).collect()
    }

    /// range / sigma per output, using the validation-grid range.
    pub fn achieved_snrs(&self) -> Vec<f64> {
        self.output_ranges
            .iter()
            .zip(&self.noise_sigmas)
            .map(|((lo, hi), s)| (hi - lo) / s)
            .collect()
    }

    /// Replace the noise levels, e.g. to get a noiseless process.
    pub fn with_noise_sigmas(mut self, sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() != self.n_outputs() || sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(AosError::Contract("one non-negative sigma per output required".into()));
        }
        self.noise_sigmas = sigmas;
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One noisy measurement of all outputs at `query`. Consumes exactly one
/// standard-normal draw per output from `noise`.
pub fn measure(process: &ToyProcess, query: &[f64], noise: &mut impl Rng) -> Result<Vec<f64>> {
    if query.len() != process.dim {
        return Err(AosError::Input(format!(
            "query has dimension {}, process expects {}",
            query.len(),
            process.dim
        )));
    }
    if query.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(AosError::Input(format!("query {query:?} outside [0, 1]")));
    }
    Ok(process
        .functions
        .iter()
        .zip(&process.noise_sigmas)
        .map(|(f, sigma)| {
            let z: f64 = noise.sample(StandardNormal);
            f.eval(query) + sigma * z
        })
        .collect())
}

/// Validation grid and its noise-free truths (`truths[m][i]`).
pub fn validation_set(process: &ToyProcess) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let points = grid(GRID_SIDE, process.dim);
    let truths = process
        .functions
        .iter()
        .map(|f| points.iter().map(|x| f.eval(x)).collect())
        .collect();
    (points, truths)
}
