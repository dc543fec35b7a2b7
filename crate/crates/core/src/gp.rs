//! Single-output Gaussian-process regression.
//!
//! Squared-exponential kernel with one lengthscale per input dimension,
//! homoscedastic Gaussian noise and a constant prior mean. Hyperparameters are
//! fitted by maximizing the log marginal likelihood with multi-start L-BFGS in
//! a bounded log space. The fitted noise variance doubles as the process-noise
//! estimate that CVHn normalizes by.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AosError, Result};
use crate::optim::{self, LbfgsConfig};
use crate::seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal jitter schedule, relative to the signal variance. The first entry
/// is the unjittered attempt.
pub const JITTER_SCHEDULE: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Tolerance on the unit-box check for training inputs.
const UNIT_BOX_TOL: f64 = 1e-12;

/// Hyperparameters of the squared-exponential ARD kernel plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let p = KernelParams {
            signal_variance,
            lengthscales,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same lengthscale in every dimension.
    pub fn isotropic(signal_variance: f64, lengthscale: f64, dim: usize, noise_variance: f64) -> Result<Self> {
        Self::new(signal_variance, vec![lengthscale; dim], noise_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(AosError::Contract(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(AosError::Contract("at least one lengthscale required".into()));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(AosError::Contract(format!("lengthscales must be positive, got {l}")));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(AosError::Contract(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// Covariance between two inputs.
pub fn kernel(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    if a.len() != params.dim() || b.len() != params.dim() {
        return Err(AosError::Contract(format!(
            "kernel expects {}-dimensional inputs, got {} and {}",
            params.dim(),
            a.len(),
            b.len()
        )));
    }
    Ok(kernel_unchecked(a, b, params))
}

#[inline]
fn kernel_unchecked(a: &[f64], b: &[f64], params: &KernelParams) -> f64 {
    let mut r2 = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(&params.lengthscales) {
        let d = (x - y) / l;
        r2 += d * d;
    }
    params.signal_variance * (-0.5 * r2).exp()
}

/// Kernel matrix without the noise term.
fn gram(inputs: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance;
        for j in 0..i {
            let v = kernel_unchecked(&inputs[i], &inputs[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorize `gram + (noise + jitter) I`, escalating jitter on failure.
fn factorize(gram: &DMatrix<f64>, noise: f64, scale: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    for rel in JITTER_SCHEDULE {
        let jitter = rel * scale;
        let mut a = gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += noise + jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            if c.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Some((c, jitter));
            }
        }
    }
    None
}

/// Predictive distribution at one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// A GP conditioned on training data.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub params: KernelParams,
    /// Constant prior mean; targets are centered on it before conditioning.
    pub mean: f64,
    pub train_inputs: Vec<Vec<f64>>,
    pub train_targets: Vec<f64>,
    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    pub chol_factor: DMatrix<f64>,
    /// `(K + noise I)^-1 (y - mean)`.
    pub alpha: DVector<f64>,
    /// Diagonal jitter that the factorization needed.
    pub jitter: f64,
}

impl GpModel {
    /// Prior with no training data. Predictions return the prior mean and
    /// the signal variance.
    pub fn prior(params: KernelParams) -> Result<Self> {
        params.validate()?;
        Ok(GpModel {
            params,
            mean: 0.0,
            train_inputs: Vec::new(),
            train_targets: Vec::new(),
            chol_factor: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            jitter: 0.0,
        })
    }

    /// Condition on data with fixed hyperparameters and zero prior mean.
    pub fn condition(inputs: &[Vec<f64>], targets: &[f64], params: KernelParams) -> Result<Self> {
        Self::condition_with_mean(inputs, targets, params, 0.0)
    }

    /// Condition on data with fixed hyperparameters and a constant prior mean.
    pub fn condition_with_mean(
        inputs: &[Vec<f64>],
        targets: &[f64],
        params: KernelParams,
        mean: f64,
    ) -> Result<Self> {
        params.validate()?;
        check_data(inputs, targets, params.dim())?;
        let k = gram(inputs, &params);
        let (chol, jitter) = factorize(&k, params.noise_variance, params.signal_variance)
            .ok_or_else(|| AosError::Numerical("kernel matrix not positive definite after jitter".into()))?;
        let centered = DVector::from_iterator(targets.len(), targets.iter().map(|y| y - mean));
        let alpha = chol.solve(&centered);
        Ok(GpModel {
            params,
            mean,
            train_inputs: inputs.to_vec(),
            train_targets: targets.to_vec(),
            chol_factor: chol.unpack(),
            alpha,
            jitter,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Fitted noise standard deviation.
    pub fn noise_std(&self) -> f64 {
        self.params.noise_variance.sqrt()
    }

    /// Predictive mean and variance of the latent function at `query`.
    pub fn predict(&self, query: &[f64]) -> Result<Prediction> {
        if query.len() != self.dim() {
            return Err(AosError::Contract(format!(
                "query has dimension {}, model expects {}",
                query.len(),
                self.dim()
            )));
        }
        let mut work = vec![0.0; self.n_train()];
        Ok(self.predict_into(query, &mut work))
    }

    /// Predict at many queries, reusing one work buffer.
    pub fn predict_many(&self, queries: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let mut work = vec![0.0; self.n_train()];
        queries
            .iter()
            .map(|q| {
                if q.len() != self.dim() {
                    return Err(AosError::Contract(format!(
                        "query has dimension {}, model expects {}",
                        q.len(),
                        self.dim()
                    )));
                }
                Ok(self.predict_into(q, &mut work))
            })
            .collect()
    }

    fn predict_into(&self, query: &[f64], v: &mut [f64]) -> Prediction {
        let n = self.n_train();
        let prior = self.params.signal_variance;
        let mut mean = self.mean;
        for (i, x) in self.train_inputs.iter().enumerate() {
            let k = kernel_unchecked(x, query, &self.params);
            v[i] = k;
            mean += k * self.alpha[i];
        }
        // Forward substitution: v <- L^-1 k.
        let l = &self.chol_factor;
        let mut quad = 0.0;
        for i in 0..n {
            let mut s = v[i];
            for j in 0..i {
                s -= l[(i, j)] * v[j];
            }
            let vi = s / l[(i, i)];
            v[i] = vi;
            quad += vi * vi;
        }
        Prediction {
            mean,
            variance: (prior - quad).max(0.0),
        }
    }

    /// `-1/2 y^T alpha - sum log diag(L) - n/2 log 2 pi` on centered targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n_train();
        let fit: f64 = self
            .train_targets
            .iter()
            .zip(self.alpha.iter())
            .map(|(y, a)| (y - self.mean) * a)
            .sum();
        let log_det: f64 = (0..n).map(|i| self.chol_factor[(i, i)].ln()).sum();
        -0.5 * fit - log_det - 0.5 * n as f64 * LN_2PI
    }
}

fn check_data(inputs: &[Vec<f64>], targets: &[f64], dim: usize) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(AosError::Contract(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    for x in inputs {
        if x.len() != dim {
            return Err(AosError::Contract(format!(
                "input of dimension {} where {dim} expected",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AosError::Input("non-finite input coordinate".into()));
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(AosError::Input("non-finite target".into()));
    }
    Ok(())
}

/// Bounds and restart policy for [`fit`]. Variance bounds are relative to the
/// empirical target variance; lengthscale bounds are in normalized input units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub restarts: usize,
    pub seed: u64,
    pub lengthscale_bounds: (f64, f64),
    pub signal_bounds: (f64, f64),
    pub noise_bounds: (f64, f64),
    /// Box the random initializations are drawn from (log-uniformly).
    pub init_lengthscale: (f64, f64),
    pub init_signal: (f64, f64),
    pub init_noise: (f64, f64),
    /// Extra start at these parameters, in output units (e.g. last iteration's fit).
    #[serde(skip)]
    pub warm_start: Option<KernelParams>,
    pub max_iters: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 5,
            seed: 0,
            lengthscale_bounds: (1e-2, 1e1),
            signal_bounds: (1e-2, 1e2),
            noise_bounds: (1e-6, 1e1),
            init_lengthscale: (0.05, 2.0),
            init_signal: (0.2, 5.0),
            init_noise: (1e-4, 0.2),
            warm_start: None,
            max_iters: 100,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_warm_start(mut self, params: Option<KernelParams>) -> Self {
        self.warm_start = params;
        self
    }
}

/// Maps unconstrained coordinates onto a bounded log-parameter box:
/// `u = lo + (hi - lo) * sigmoid(z)`.
struct LogBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl LogBox {
    fn new(dim: usize, cfg: &FitConfig) -> Self {
        let mut lo = vec![cfg.signal_bounds.0.ln()];
        let mut hi = vec![cfg.signal_bounds.1.ln()];
        for _ in 0..dim {
            lo.push(cfg.lengthscale_bounds.0.ln());
            hi.push(cfg.lengthscale_bounds.1.ln());
        }
        lo.push(cfg.noise_bounds.0.ln());
        hi.push(cfg.noise_bounds.1.ln());
        LogBox { lo, hi }
    }

    fn to_log(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(z, (lo, hi))| lo + (hi - lo) / (1.0 + (-z).exp()))
            .collect()
    }

    fn to_unconstrained(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (lo, hi))| {
                let p = ((u - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            })
            .collect()
    }

    /// du/dz at the log-parameters `u`.
    fn jacobian(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (lo, hi))| (u - lo) * (hi - u) / (hi - lo))
            .collect()
    }
}

fn params_from_log(u: &[f64]) -> KernelParams {
    let d = u.len() - 2;
    KernelParams {
        signal_variance: u[0].exp(),
        lengthscales: u[1..=d].iter().map(|v| v.exp()).collect(),
        noise_variance: u[d + 1].exp(),
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// In-place lower Cholesky of a row-major `n x n` matrix. Returns false if
/// the matrix is not numerically positive definite.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let (ri, rj) = (i * n, j * n);
            let s = a[ri + j] - dot(&a[ri..ri + j], &a[rj..rj + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                a[ri + i] = s.sqrt();
            } else {
                a[ri + j] = s / a[rj + j];
            }
        }
    }
    true
}

/// Negative log marginal likelihood and its gradient with respect to the log
/// hyperparameters `u = (log sf2, log l_1..l_D, log sn2)`.
///
/// Works on flat row-major buffers: the Cholesky factor `L`, then
/// `T = (L^-1)^T` so that `K^-1[i][j] = sum_k T[i][k] T[j][k]` runs over
/// contiguous rows.
fn neg_lml_and_grad(inputs: &[Vec<f64>], y: &[f64], u: &[f64], grad: &mut [f64]) -> f64 {
    let params = params_from_log(u);
    let n = inputs.len();
    let d = params.dim();

    let mut kf = vec![0.0; n * n];
    for i in 0..n {
        kf[i * n + i] = params.signal_variance;
        for j in 0..i {
            let v = kernel_unchecked(&inputs[i], &inputs[j], &params);
            kf[i * n + j] = v;
            kf[j * n + i] = v;
        }
    }

    let mut l = vec![0.0; n * n];
    let mut factored = false;
    for rel in JITTER_SCHEDULE {
        let jitter = rel * params.signal_variance;
        l.copy_from_slice(&kf);
        for i in 0..n {
            l[i * n + i] += params.noise_variance + jitter;
        }
        if cholesky_in_place(&mut l, n) {
            factored = true;
            break;
        }
    }
    if !factored {
        return f64::NAN;
    }

    // T[j][i] = (L^-1)[i][j] for j <= i, zero elsewhere.
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        let ri = i * n;
        let lii = l[ri + i];
        for j in 0..i {
            let rj = j * n;
            let s = dot(&l[ri + j..ri + i], &t[rj + j..rj + i]);
            t[rj + i] = -s / lii;
        }
        t[ri + i] = 1.0 / lii;
    }

    // K^-1 (lower half) and alpha = K^-1 y.
    let mut k_inv = vec![0.0; n * n];
    for i in 0..n {
        let ri = i * n;
        for j in 0..=i {
            let rj = j * n;
            let s = dot(&t[ri + i..ri + n], &t[rj + i..rj + n]);
            k_inv[ri + j] = s;
            k_inv[rj + i] = s;
        }
    }
    let alpha: Vec<f64> = (0..n)
        .map(|i| dot(&k_inv[i * n..(i + 1) * n], y))
        .collect();

    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let log_det: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
    let lml = -0.5 * fit - log_det - 0.5 * n as f64 * LN_2PI;

    // dLML/du = 1/2 tr(W dK/du) with W = alpha alpha^T - K^-1.
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut trace_w = 0.0;
    for i in 0..n {
        let ri = i * n;
        let w_ii = alpha[i] * alpha[i] - k_inv[ri + i];
        trace_w += w_ii;
        grad[0] += 0.5 * w_ii * kf[ri + i];
        for j in 0..i {
            // Symmetric off-diagonal pair counted twice.
            let w = (alpha[i] * alpha[j] - k_inv[ri + j]) * kf[ri + j];
            grad[0] += w;
            for dd in 0..d {
                let diff = (inputs[i][dd] - inputs[j][dd]) / params.lengthscales[dd];
                grad[1 + dd] += w * diff * diff;
            }
        }
    }
    grad[d + 1] = 0.5 * trace_w * params.noise_variance;
    grad.iter_mut().for_each(|g| *g = -*g);
    -lml
}

/// Fit hyperparameters by maximizing the log marginal likelihood.
///
/// Targets are centered on their mean (the constant prior mean) and scaled by
/// their standard deviation during optimization; the returned parameters are
/// in output units.
pub fn fit(inputs: &[Vec<f64>], targets: &[f64], config: &FitConfig) -> Result<GpModel> {
    let n = inputs.len();
    if n == 0 {
        return Err(AosError::Contract("fit needs at least one training point".into()));
    }
    let dim = inputs[0].len();
    if dim == 0 {
        return Err(AosError::Contract("inputs must have at least one dimension".into()));
    }
    check_data(inputs, targets, dim)?;
    if inputs
        .iter()
        .flatten()
        .any(|v| *v < -UNIT_BOX_TOL || *v > 1.0 + UNIT_BOX_TOL)
    {
        return Err(AosError::Input("training inputs must be normalized to [0, 1]".into()));
    }

    let mean = targets.iter().sum::<f64>() / n as f64;
    let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    let scale2 = if var > 1e-24 { var } else { 1.0 };
    let scale = scale2.sqrt();
    let y: Vec<f64> = targets.iter().map(|t| (t - mean) / scale).collect();

    let bounds = LogBox::new(dim, config);
    let mut rng = seed::rng(config.seed);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.restarts + 1);
    if let Some(w) = &config.warm_start {
        if w.dim() == dim && w.validate().is_ok() {
            let mut u = vec![(w.signal_variance / scale2).ln()];
            u.extend(w.lengthscales.iter().map(|l| l.ln()));
            u.push((w.noise_variance.max(1e-300) / scale2).ln());
            starts.push(u);
        }
    }
    let log_uniform = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| {
        rng.random_range(lo.ln()..=hi.ln())
    };
    for _ in 0..config.restarts {
        let mut u = vec![log_uniform(&mut rng, config.init_signal)];
        for _ in 0..dim {
            u.push(log_uniform(&mut rng, config.init_lengthscale));
        }
        u.push(log_uniform(&mut rng, config.init_noise));
        starts.push(u);
    }
    if starts.is_empty() {
        return Err(AosError::Contract("fit needs at least one start".into()));
    }

    let lbfgs = LbfgsConfig {
        max_iters: config.max_iters,
        ..LbfgsConfig::default()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut grad_u = vec![0.0; dim + 2];
    for start in starts {
        let z0 = bounds.to_unconstrained(&start);
        let objective = |z: &[f64], g: &mut [f64]| {
            let u = bounds.to_log(z);
            let f = neg_lml_and_grad(inputs, &y, &u, &mut grad_u);
            let jac = bounds.jacobian(&u);
            for ((gz, gu), j) in g.iter_mut().zip(&grad_u).zip(jac) {
                *gz = gu * j;
            }
            f
        };
        let m = optim::minimize(objective, &z0, &lbfgs);
        if m.value.is_finite() && best.as_ref().is_none_or(|(f, _)| m.value < *f) {
            best = Some((m.value, m.x));
        }
    }
    let (_, z) = best.ok_or_else(|| {
        AosError::Numerical("log marginal likelihood could not be evaluated at any start".into())
    })?;
    let mut params = params_from_log(&bounds.to_log(&z));
    params.signal_variance *= scale2;
    params.noise_variance *= scale2;
    GpModel::condition_with_mean(inputs, targets, params, mean)
}
