//! Gaussian-process lifting of raw states to lifted initial conditions.
//!
//! One independent GP with an ARD squared-exponential kernel per lifted
//! coordinate. Targets are centered per output; hyperparameters maximize the
//! log marginal likelihood with a box-constrained BFGS over log-parameters
//! and seeded restarts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Fixes `σ_n²` instead of optimizing it.
    pub fixed_noise: Option<f64>,
    pub seed: u64,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self { restarts: 5, max_iter: 200, grad_tol: 1e-6, fixed_noise: None, seed: 0 }
    }
}

/// Hyperparameters of one output GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Constant prior mean (the training-target mean).
    pub mean: f64,
}

impl Hyperparameters {
    fn from_log(theta: &[f64], mean: f64) -> Self {
        let d = theta.len() - 2;
        Self {
            lengthscales: theta[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: theta[d].exp(),
            noise_variance: theta[d + 1].exp(),
            mean,
        }
    }
}

/// ARD squared-exponential covariance between columns of `a` and `b`.
pub fn ard_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, lengthscales: &[f64], signal_variance: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        let mut s = 0.0;
        for (k, l) in lengthscales.iter().enumerate() {
            let diff = (a[(k, i)] - b[(k, j)]) / l;
            s += diff * diff;
        }
        signal_variance * (-0.5 * s).exp()
    })
}

fn factor_with_jitter(mut k: DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    if let Some(ch) = Cholesky::new(k.clone()) {
        return Some((ch, 0.0));
    }
    let mean_diag = (k.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * mean_diag;
    let mut added = 0.0;
    while jitter <= 1e-6 * mean_diag * (1.0 + 1e-9) {
        for i in 0..n {
            k[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(ch) = Cholesky::new(k.clone()) {
            return Some((ch, added));
        }
        jitter *= 10.0;
    }
    None
}

/// Negative log marginal likelihood and its gradient for one output.
struct Objective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    sq_dists: Vec<DMatrix<f64>>,
}

impl<'a> Objective<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Self {
        let n = x.ncols();
        let sq_dists = (0..x.nrows())
            .map(|k| DMatrix::from_fn(n, n, |i, j| (x[(k, i)] - x[(k, j)]).powi(2)))
            .collect();
        Self { x, y, sq_dists }
    }

    fn kernel_parts(&self, theta: &[f64]) -> (DMatrix<f64>, f64) {
        let d = self.x.nrows();
        let sf2 = theta[d].exp();
        let n = self.x.ncols();
        let mut k = DMatrix::<f64>::zeros(n, n);
        for (dk, &log_l) in self.sq_dists.iter().zip(&theta[..d]) {
            k += dk * (-0.5 * (-2.0 * log_l).exp());
        }
        k.apply(|v: &mut f64| *v = sf2 * v.exp());
        (k, theta[d + 1].exp())
    }

    fn factor(&self, theta: &[f64]) -> Option<(DMatrix<f64>, Cholesky<f64, Dyn>, f64)> {
        let (kse, sn2) = self.kernel_parts(theta);
        let n = kse.nrows();
        let noisy = &kse + DMatrix::identity(n, n) * sn2;
        factor_with_jitter(noisy).map(|(ch, jitter)| (kse, ch, jitter))
    }

    fn value(&self, theta: &[f64]) -> f64 {
        match self.factor(theta) {
            Some((_, ch, _)) => self.nll(&ch),
            None => f64::INFINITY,
        }
    }

    fn nll(&self, ch: &Cholesky<f64, Dyn>) -> f64 {
        let alpha = ch.solve(self.y);
        let logdet: f64 = ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let n = self.y.len() as f64;
        0.5 * self.y.dot(&alpha) + logdet + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (kse, ch, _) = self.factor(theta)?;
        let d = self.x.nrows();
        let alpha = ch.solve(self.y);
        let mut w = ch.inverse();
        w.ger(-1.0, &alpha, &alpha, 1.0);
        // w = K⁻¹ − ααᵀ, gradient of the negative LML is ½ tr(w ∂K)
        let mut grad = Vec::with_capacity(d + 2);
        for (k, dk) in self.sq_dists.iter().enumerate() {
            let inv_l2 = (-2.0 * theta[k]).exp();
            let mut s = 0.0;
            for ((wv, kv), dv) in w.iter().zip(kse.iter()).zip(dk.iter()) {
                s += wv * kv * dv;
            }
            grad.push(0.5 * s * inv_l2);
        }
        grad.push(0.5 * w.dot(&kse));
        grad.push(0.5 * theta[d + 1].exp() * w.trace());
        Some((self.nll(&ch), grad))
    }
}

/// Projected BFGS minimization inside `[lo, hi]`; `free[j] = false` pins θ_j.
fn minimize(
    f: &Objective<'_>,
    mut theta: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    free: &[bool],
    opts: &GpOptions,
) -> (Vec<f64>, f64) {
    let n = theta.len();
    let clamp = |t: &mut Vec<f64>| {
        for j in 0..n {
            t[j] = t[j].clamp(lo[j], hi[j]);
        }
    };
    clamp(&mut theta);
    let Some((mut fx, mut g)) = f.value_and_gradient(&theta) else {
        return (theta, f64::INFINITY);
    };
    let mask = |g: &mut Vec<f64>, t: &[f64]| {
        for j in 0..n {
            let at_lo = t[j] <= lo[j] && g[j] > 0.0;
            let at_hi = t[j] >= hi[j] && g[j] < 0.0;
            if !free[j] || at_lo || at_hi {
                g[j] = 0.0;
            }
        }
    };
    mask(&mut g, &theta);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..opts.max_iter {
        let gv = DVector::from_vec(g.clone());
        if gv.norm() < opts.grad_tol {
            break;
        }
        let mut dir = -(&h * &gv);
        if dir.dot(&gv) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -gv.clone();
        }
        for j in 0..n {
            if g[j] == 0.0 {
                dir[j] = 0.0;
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = (0..n).map(|j| theta[j] + step * dir[j]).collect();
            clamp(&mut cand);
            let decrease: f64 = (0..n).map(|j| g[j] * (cand[j] - theta[j])).sum();
            let fc = f.value(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * decrease {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        let Some(cand) = accepted else { break };
        let Some((fc, mut gc)) = f.value_and_gradient(&cand) else { break };
        mask(&mut gc, &cand);
        let s = DVector::from_iterator(n, (0..n).map(|j| cand[j] - theta[j]));
        let y = DVector::from_iterator(n, (0..n).map(|j| gc[j] - g[j]));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            h = left * h * right + rho * &s * s.transpose();
        }
        let converged = (fx - fc).abs() <= 1e-12 * fx.abs().max(1.0) && s.norm() < 1e-10;
        theta = cand;
        fx = fc;
        g = gc;
        if converged {
            break;
        }
    }
    (theta, fx)
}

/// One fitted scalar GP.
#[derive(Debug, Clone)]
pub struct ScalarGp {
    pub hyper: Hyperparameters,
    pub jitter: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl ScalarGp {
    fn build(x: &DMatrix<f64>, centered: &DVector<f64>, hyper: Hyperparameters) -> Result<Self> {
        if hyper.signal_variance == 0.0 {
            return Ok(Self { hyper, jitter: 0.0, chol: None, alpha: DVector::zeros(centered.len()) });
        }
        let n = x.ncols();
        let k = ard_kernel(x, x, &hyper.lengthscales, hyper.signal_variance) + DMatrix::identity(n, n) * hyper.noise_variance;
        let (chol, jitter) = factor_with_jitter(k)
            .ok_or_else(|| Error::DegenerateTraining("kernel matrix is not positive definite even with jitter".into()))?;
        let alpha = chol.solve(centered);
        Ok(Self { hyper, jitter, chol: Some(chol), alpha })
    }

    fn predict(&self, train_x: &DMatrix<f64>, x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let q = x.ncols();
        let Some(chol) = &self.chol else {
            return (DVector::from_element(q, self.hyper.mean), DVector::zeros(q));
        };
        let ks = ard_kernel(train_x, x, &self.hyper.lengthscales, self.hyper.signal_variance);
        let mean = ks.tr_mul(&self.alpha).add_scalar(self.hyper.mean);
        let mut v = ks;
        chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let var = DVector::from_fn(q, |j, _| (self.hyper.signal_variance - v.column(j).norm_squared()).max(0.0));
        (mean, var)
    }
}

/// Bank of independent GPs mapping `x ∈ ℝ^d` to `z ∈ ℝ^r`.
#[derive(Debug, Clone)]
pub struct GpLifter {
    train_x: DMatrix<f64>,
    outputs: Vec<ScalarGp>,
}

fn dedupe(x: &DMatrix<f64>, z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut keep: Vec<usize> = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        if !keep.iter().any(|&k| (x.column(k) - x.column(j)).norm() < 1e-12) {
            keep.push(j);
        }
    }
    if keep.len() == x.ncols() {
        return (x.clone(), z.clone());
    }
    (x.select_columns(&keep), z.select_columns(&keep))
}

fn fit_output(x: &DMatrix<f64>, y: &DVector<f64>, opts: &GpOptions, seed: u64) -> Result<ScalarGp> {
    let n = y.len();
    let mean = y.mean();
    let centered = y.add_scalar(-mean);
    let var = centered.norm_squared() / n as f64;
    if var <= 1e-28 * mean.abs().max(1.0).powi(2) {
        return Err(Error::DegenerateTraining("constant targets".into()));
    }
    let d = x.nrows();
    let mut lo = Vec::with_capacity(d + 2);
    let mut hi = Vec::with_capacity(d + 2);
    let mut start = Vec::with_capacity(d + 2);
    for k in 0..d {
        let row = x.row(k);
        let span = (row.max() - row.min()).max(1e-6);
        lo.push((1e-3 * span).ln());
        hi.push((1e2 * span).ln());
        start.push((0.3 * span).ln());
    }
    lo.push((1e-4 * var).ln());
    hi.push((1e4 * var).ln());
    start.push(var.ln());
    let mut free = vec![true; d + 2];
    match opts.fixed_noise {
        Some(sn2) => {
            let v = sn2.max(f64::MIN_POSITIVE).ln();
            lo.push(v);
            hi.push(v);
            start.push(v);
            free[d + 1] = false;
        }
        None => {
            lo.push((1e-10 * var).ln());
            hi.push(var.ln());
            start.push((1e-4 * var).ln());
        }
    }
    let objective = Objective::new(x, &centered);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for restart in 0..opts.restarts.max(1) {
        let init: Vec<f64> = if restart == 0 {
            start.clone()
        } else {
            (0..d + 2).map(|j| if free[j] { rng.random_range(lo[j]..=hi[j]) } else { start[j] }).collect()
        };
        let (theta, fx) = minimize(&objective, init, &lo, &hi, &free, opts);
        if best.as_ref().is_none_or(|(_, bf)| fx < *bf) {
            best = Some((theta, fx));
        }
    }
    let (theta, fx) = best.expect("at least one restart");
    if !fx.is_finite() {
        return Err(Error::DegenerateTraining("no restart reached a finite likelihood".into()));
    }
    ScalarGp::build(x, &centered, Hyperparameters::from_log(&theta, mean))
}

impl GpLifter {
    /// Fits one GP per row of `train_z` (`r × n`) on columns of `train_x` (`d × n`).
    ///
    /// Near-duplicate inputs are dropped first. An output with constant
    /// targets becomes a constant predictor with zero variance.
    pub fn fit(train_x: &DMatrix<f64>, train_z: &DMatrix<f64>, opts: &GpOptions) -> Result<Self> {
        if train_x.ncols() != train_z.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs vs {} targets",
                train_x.ncols(),
                train_z.ncols()
            )));
        }
        if train_x.iter().chain(train_z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let (x, z) = dedupe(train_x, train_z);
        if x.ncols() < 2 {
            return Err(Error::DegenerateTraining(format!("{} distinct training inputs", x.ncols())));
        }
        let fit_one = |j: usize| -> Result<ScalarGp> {
            let y = z.row(j).transpose();
            match fit_output(&x, &y, opts, crate::simulate::derive_seed(opts.seed, j as u64)) {
                Err(Error::DegenerateTraining(msg)) if msg == "constant targets" => {
                    let hyper = Hyperparameters {
                        lengthscales: vec![1.0; x.nrows()],
                        signal_variance: 0.0,
                        noise_variance: 0.0,
                        mean: y.mean(),
                    };
                    ScalarGp::build(&x, &y.add_scalar(-y.mean()), hyper)
                }
                other => other,
            }
        };
        #[cfg(feature = "parallel")]
        let outputs = {
            use rayon::prelude::*;
            (0..z.nrows()).into_par_iter().map(fit_one).collect::<Result<Vec<_>>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let outputs = (0..z.nrows()).map(fit_one).collect::<Result<Vec<_>>>()?;
        Ok(Self { train_x: x, outputs })
    }

    /// Rebuilds a lifter from stored hyperparameters without optimizing.
    pub fn from_hyperparameters(train_x: &DMatrix<f64>, train_z: &DMatrix<f64>, hypers: &[Hyperparameters]) -> Result<Self> {
        if hypers.len() != train_z.nrows() || train_x.ncols() != train_z.ncols() {
            return Err(Error::DimensionMismatch("hyperparameters do not match training data".into()));
        }
        let (x, z) = dedupe(train_x, train_z);
        let outputs = hypers
            .iter()
            .enumerate()
            .map(|(j, h)| ScalarGp::build(&x, &z.row(j).transpose().add_scalar(-h.mean), h.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { train_x: x, outputs })
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn training_inputs(&self) -> &DMatrix<f64> {
        &self.train_x
    }

    /// Diagonal jitter each output needed to factor its kernel matrix.
    pub fn jitters(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.jitter).collect()
    }

    pub fn hyperparameters(&self) -> Vec<Hyperparameters> {
        self.outputs.iter().map(|o| o.hyper.clone()).collect()
    }

    /// Posterior means at the columns of `x` (`r × q`).
    pub fn posterior_mean_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.predict_batch(x).0
    }

    /// Posterior means and variances at the columns of `x`, both `r × q`.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let q = x.ncols();
        let mut mean = DMatrix::zeros(self.outputs.len(), q);
        let mut var = DMatrix::zeros(self.outputs.len(), q);
        for (j, gp) in self.outputs.iter().enumerate() {
            let (m, v) = gp.predict(&self.train_x, x);
            mean.set_row(j, &m.transpose());
            var.set_row(j, &v.transpose());
        }
        (mean, var)
    }

    pub fn posterior_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        self.posterior_mean_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice())).column(0).into_owned()
    }

    pub fn posterior_var(&self, x: &DVector<f64>) -> DVector<f64> {
        self.predict_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice())).1.column(0).into_owned()
    }

    pub fn hyperparameters_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.hyperparameters())?)
    }
}

/// Log marginal likelihood of centered targets `y` under log-hyperparameters
/// `[log ℓ_1.., log σ_f², log σ_n²]`, with its gradient.
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, log_theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    Objective::new(x, y).value_and_gradient(log_theta).map(|(f, g)| (-f, g.into_iter().map(|v| -v).collect()))
}
