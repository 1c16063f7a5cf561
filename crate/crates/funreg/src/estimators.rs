//! Loss functions and the three fitting procedures: pooled penalized
//! splines, the reduced rank-R model, and the graph-regularized model.
//!
//! All objectives use the `(1/NM)` loss normalization, so penalty weights
//! are comparable with the tuning prescriptions of the rate tables. The
//! per-task design matrices hold the working-basis covariate integrals.

use crate::error::{FunRegError, Result};
use crate::graph::Laplacian;
use crate::linalg;
use crate::manifold::{self, FixedRankPoint};
use crate::penalty::PenaltySpec;
use crate::simdiag::DiagonalizedSystem;
use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand::SeedableRng;

/// Loss family for a task.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    Squared,
    /// Bernoulli responses in {0, 1} with the canonical logit link.
    Logistic,
    /// Pinball loss at level `w`, optimized through a Huber-smoothed
    /// version with corner half-width `smooth_eps`.
    Quantile { w: f64, smooth_eps: f64 },
}

impl LossKind {
    pub fn quantile(w: f64, smooth_eps: f64) -> Result<Self> {
        if !(0.0 < w && w < 1.0) {
            return Err(FunRegError::InvalidQuantileLevel(w));
        }
        if !(smooth_eps > 0.0) {
            return Err(FunRegError::InvalidScenario(format!(
                "smooth_eps must be positive, got {smooth_eps}"
            )));
        }
        Ok(LossKind::Quantile { w, smooth_eps })
    }

    /// Quantile loss with the corner width tied to the response spread
    /// (1e-3 times the interquartile range, floored away from zero).
    pub fn quantile_auto(w: f64, y: &[f64]) -> Result<Self> {
        let mut s: Vec<f64> = y.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let iqr = s[(3 * n) / 4] - s[n / 4];
        Self::quantile(w, (1e-3 * iqr).max(1e-8))
    }

    fn validate_labels(&self, y: &Array1<f64>) -> Result<()> {
        if matches!(self, LossKind::Logistic) {
            for &v in y {
                if v != 0.0 && v != 1.0 {
                    return Err(FunRegError::InvalidLabel(v));
                }
            }
        }
        Ok(())
    }
}

/// Mean loss with its gradient in the prediction vector; `exact_value`
/// differs from `value` only for the smoothed quantile loss, where it
/// reports the unsmoothed pinball objective.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grad: Array1<f64>,
    pub exact_value: f64,
}

fn log1p_exp(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over a task and its gradient with respect to `u`.
pub fn loss_value_grad(loss: &LossKind, y: &Array1<f64>, u: &Array1<f64>) -> Result<LossEval> {
    if y.len() != u.len() {
        return Err(FunRegError::DimensionMismatch(format!(
            "loss inputs have lengths {} and {}",
            y.len(),
            u.len()
        )));
    }
    loss.validate_labels(y)?;
    let n = y.len() as f64;
    let mut value = 0.0;
    let mut exact = 0.0;
    let mut grad = Array1::zeros(y.len());
    match *loss {
        LossKind::Squared => {
            for i in 0..y.len() {
                let r = y[i] - u[i];
                value += r * r;
                grad[i] = -2.0 * r / n;
            }
            exact = value;
        }
        LossKind::Logistic => {
            for i in 0..y.len() {
                value += -y[i] * u[i] + log1p_exp(u[i]);
                grad[i] = (sigmoid(u[i]) - y[i]) / n;
            }
            exact = value;
        }
        LossKind::Quantile { w, smooth_eps } => {
            if !(0.0 < w && w < 1.0) {
                return Err(FunRegError::InvalidQuantileLevel(w));
            }
            let eps = smooth_eps;
            for i in 0..y.len() {
                let r = y[i] - u[i];
                exact += if r >= 0.0 { w * r } else { (w - 1.0) * r };
                let (val, slope) = if r >= eps {
                    (w * r, w)
                } else if r <= -eps {
                    ((w - 1.0) * r, w - 1.0)
                } else {
                    (
                        r * r / (4.0 * eps) + (w - 0.5) * r + eps / 4.0,
                        r / (2.0 * eps) + w - 0.5,
                    )
                };
                value += val;
                grad[i] = -slope / n;
            }
        }
    }
    Ok(LossEval {
        value: value / n,
        grad,
        exact_value: exact / n,
    })
}

/// Second derivative of the per-observation loss at `u` (for Newton steps).
fn loss_curvature(loss: &LossKind, u: f64, y: f64) -> f64 {
    match *loss {
        LossKind::Squared => 2.0,
        LossKind::Logistic => {
            let s = sigmoid(u);
            (s * (1.0 - s)).max(1e-10)
        }
        LossKind::Quantile { smooth_eps, .. } => {
            let _ = y;
            // curvature only inside the smoothing corner; floor keeps the
            // Newton system positive definite
            1.0 / (2.0 * smooth_eps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InterceptMode {
    None,
    Fitted,
}

/// Observations for all M tasks: per-task response vectors and the
/// covariate integral design matrices (one row per observation).
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub x: Vec<Array2<f64>>,
    pub y: Vec<Array1<f64>>,
    pub intercept: InterceptMode,
    pub loss: LossKind,
}

impl TaskDataset {
    pub fn new(
        x: Vec<Array2<f64>>,
        y: Vec<Array1<f64>>,
        intercept: InterceptMode,
        loss: LossKind,
    ) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(FunRegError::InvalidDataset(format!(
                "{} design matrices vs {} response vectors",
                x.len(),
                y.len()
            )));
        }
        let n = x[0].nrows();
        let k = x[0].ncols();
        for (m, (xm, ym)) in x.iter().zip(&y).enumerate() {
            if xm.nrows() != n || xm.ncols() != k || ym.len() != n {
                return Err(FunRegError::InvalidDataset(format!(
                    "task {m}: design {}x{}, response {} (expected {n} observations, {k} columns)",
                    xm.nrows(),
                    xm.ncols(),
                    ym.len()
                )));
            }
            if xm.iter().any(|v| !v.is_finite()) || ym.iter().any(|v| !v.is_finite()) {
                return Err(FunRegError::InvalidDataset(format!(
                    "task {m} contains non-finite entries"
                )));
            }
        }
        Ok(Self {
            x,
            y,
            intercept,
            loss,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.x.len()
    }

    pub fn n_obs(&self) -> usize {
        self.x[0].nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x[0].ncols()
    }

    /// Pooled empirical covariance `(1/NM) sum_{n,m} x x'`.
    pub fn pooled_covariance(&self) -> Array2<f64> {
        let k = self.n_features();
        let nm = (self.n_obs() * self.n_tasks()) as f64;
        let mut s = Array2::zeros((k, k));
        for xm in &self.x {
            s = s + xm.t().dot(xm);
        }
        s / nm
    }
}

/// Fit output: coefficient matrix, intercepts, and solver bookkeeping.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub b: Array2<f64>,
    pub alpha: Array1<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("solvers always record at least the final objective")
    }
}

/// Total objective `(1/NM) sum loss + P(B)` at `(alpha, B)`.
pub fn objective(
    data: &TaskDataset,
    spec: &PenaltySpec,
    alpha: &Array1<f64>,
    b: &Array2<f64>,
) -> Result<f64> {
    let m = data.n_tasks() as f64;
    let mut loss_total = 0.0;
    for t in 0..data.n_tasks() {
        let u = data.x[t].dot(&b.column(t)) + alpha[t];
        loss_total += loss_value_grad(&data.loss, &data.y[t], &u)?.value;
    }
    Ok(loss_total / m + spec.value(b)?)
}

/// Gradient of the total objective in `B` (per-task loss part plus the
/// penalty part); intercepts held fixed.
pub fn objective_gradient_b(
    data: &TaskDataset,
    spec: &PenaltySpec,
    alpha: &Array1<f64>,
    b: &Array2<f64>,
) -> Result<Array2<f64>> {
    let m = data.n_tasks() as f64;
    let mut grad = spec.gradient(b)?;
    for t in 0..data.n_tasks() {
        let u = data.x[t].dot(&b.column(t)) + alpha[t];
        let le = loss_value_grad(&data.loss, &data.y[t], &u)?;
        let gcol = data.x[t].t().dot(&le.grad) / m;
        grad.column_mut(t).scaled_add(1.0, &gcol);
    }
    Ok(grad)
}

/// Loss-minimizing constant prediction for a response vector: mean,
/// logit-mean, or the empirical `w`-quantile.
pub fn fit_intercept_only(loss: &LossKind, y: &Array1<f64>) -> Result<f64> {
    loss.validate_labels(y)?;
    match *loss {
        LossKind::Squared => Ok(y.mean().unwrap_or(0.0)),
        LossKind::Logistic => {
            let p = y.mean().unwrap_or(0.5).clamp(1e-10, 1.0 - 1e-10);
            Ok((p / (1.0 - p)).ln())
        }
        LossKind::Quantile { w, .. } => {
            let mut s: Vec<f64> = y.to_vec();
            s.sort_by(f64::total_cmp);
            let pos = w * (s.len() as f64 - 1.0);
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            Ok(s[lo] * (1.0 - frac) + s[hi] * frac)
        }
    }
}

// ---------------------------------------------------------------------
// Pooled fit
// ---------------------------------------------------------------------

/// Pooled penalized-spline estimator: each task solved independently
/// under the shared roughness penalty `eta1 tr(B' Gamma B)`.
pub fn fit_pooled(
    data: &TaskDataset,
    system: &DiagonalizedSystem,
    eta1: f64,
) -> Result<FitResult> {
    if eta1 < 0.0 {
        return Err(FunRegError::InvalidScenario(format!(
            "eta1 must be nonnegative, got {eta1}"
        )));
    }
    let m = data.n_tasks();
    let k = data.n_features();
    if k != system.dof() {
        return Err(FunRegError::DimensionMismatch(format!(
            "design has {k} columns, system has dof {}",
            system.dof()
        )));
    }
    let spec = PenaltySpec::roughness(system, eta1, m)?;
    let mut b = Array2::zeros((k, m));
    let mut alpha = Array1::zeros(m);
    let mut iterations = 0;
    let mut converged = true;
    for t in 0..m {
        let (bt, at, iters, ok) = match data.loss {
            LossKind::Squared => {
                let (bt, at) = solve_task_squared(
                    &data.x[t],
                    &data.y[t],
                    system.gamma(),
                    eta1 * m as f64,
                    data.intercept,
                )?;
                (bt, at, 1, true)
            }
            LossKind::Logistic => solve_task_newton(
                &data.x[t],
                &data.y[t],
                &data.loss,
                system.gamma(),
                eta1 * m as f64,
                data.intercept,
                None,
            )?,
            LossKind::Quantile { .. } => solve_task_lbfgs(
                &data.x[t],
                &data.y[t],
                &data.loss,
                system.gamma(),
                eta1 * m as f64,
                data.intercept,
                None,
            )?,
        };
        b.column_mut(t).assign(&bt);
        alpha[t] = at;
        iterations = iterations.max(iters);
        converged &= ok;
    }
    let obj = objective(data, &spec, &alpha, &b)?;
    Ok(FitResult {
        b,
        alpha,
        objective_trace: vec![obj],
        converged,
        iterations,
    })
}

/// Closed-form per-task ridge: `(X'X/N + scaled_eta Gamma) b = X'y/N`
/// after profiling out the intercept by centering.
fn solve_task_squared(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gamma: &Array1<f64>,
    scaled_eta: f64,
    intercept: InterceptMode,
) -> Result<(Array1<f64>, f64)> {
    let n = x.nrows() as f64;
    let k = x.ncols();
    let (xc, yc, xbar, ybar) = match intercept {
        InterceptMode::Fitted => {
            let xbar = x.mean_axis(Axis(0)).unwrap();
            let ybar = y.mean().unwrap_or(0.0);
            (x - &xbar, y - ybar, xbar, ybar)
        }
        InterceptMode::None => (x.to_owned(), y.to_owned(), Array1::zeros(k), 0.0),
    };
    let mut a = xc.t().dot(&xc) / n;
    for i in 0..k {
        a[[i, i]] += scaled_eta * gamma[i];
    }
    let rhs = xc.t().dot(&yc) / n;
    let b = linalg::solve_spd(&a, &rhs)?;
    let alpha = match intercept {
        InterceptMode::Fitted => ybar - xbar.dot(&b),
        InterceptMode::None => 0.0,
    };
    Ok((b, alpha))
}

/// Augmented parameter vector: theta = (alpha?, b).
struct TaskProblem<'a> {
    x: &'a Array2<f64>,
    y: &'a Array1<f64>,
    loss: &'a LossKind,
    gamma: &'a Array1<f64>,
    scaled_eta: f64,
    with_intercept: bool,
}

impl TaskProblem<'_> {
    fn dim(&self) -> usize {
        self.x.ncols() + usize::from(self.with_intercept)
    }

    fn split(&self, theta: &Array1<f64>) -> (f64, Array1<f64>) {
        if self.with_intercept {
            (theta[0], theta.slice(ndarray::s![1..]).to_owned())
        } else {
            (0.0, theta.to_owned())
        }
    }

    fn predictions(&self, theta: &Array1<f64>) -> Array1<f64> {
        let (a, b) = self.split(theta);
        self.x.dot(&b) + a
    }

    fn value_grad(&self, theta: &Array1<f64>) -> Result<(f64, Array1<f64>)> {
        let u = self.predictions(theta);
        let le = loss_value_grad(self.loss, self.y, &u)?;
        let (_, b) = self.split(theta);
        let pen: f64 = self
            .gamma
            .iter()
            .zip(b.iter())
            .map(|(g, v)| g * v * v)
            .sum::<f64>()
            * self.scaled_eta;
        let mut grad = Array1::zeros(self.dim());
        let gb = self.x.t().dot(&le.grad);
        let off = usize::from(self.with_intercept);
        for i in 0..self.x.ncols() {
            grad[off + i] = gb[i] + 2.0 * self.scaled_eta * self.gamma[i] * b[i];
        }
        if self.with_intercept {
            grad[0] = le.grad.sum();
        }
        Ok((le.value + pen, grad))
    }
}

const TASK_SOLVER_TOL: f64 = 1e-8;
const TASK_SOLVER_MAX_ITERS: usize = 500;

/// Damped Newton with Armijo backtracking on one task.
fn solve_task_newton(
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossKind,
    gamma: &Array1<f64>,
    scaled_eta: f64,
    intercept: InterceptMode,
    init: Option<Array1<f64>>,
) -> Result<(Array1<f64>, f64, usize, bool)> {
    let prob = TaskProblem {
        x,
        y,
        loss,
        gamma,
        scaled_eta,
        with_intercept: intercept == InterceptMode::Fitted,
    };
    let dim = prob.dim();
    let n = x.nrows() as f64;
    let off = usize::from(prob.with_intercept);
    let mut theta = init.unwrap_or_else(|| Array1::zeros(dim));
    let (mut f, mut g) = prob.value_grad(&theta)?;
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=TASK_SOLVER_MAX_ITERS {
        iters = it;
        if g.dot(&g).sqrt() <= TASK_SOLVER_TOL {
            converged = true;
            break;
        }
        // Hessian of the mean loss plus the penalty block.
        let u = prob.predictions(&theta);
        let wts = Array1::from_shape_fn(x.nrows(), |i| loss_curvature(loss, u[i], y[i]) / n);
        let xw = x * &wts.view().insert_axis(Axis(1));
        let mut h = Array2::zeros((dim, dim));
        let hxx = xw.t().dot(x);
        for i in 0..x.ncols() {
            for j in 0..x.ncols() {
                h[[off + i, off + j]] = hxx[[i, j]];
            }
            h[[off + i, off + i]] += 2.0 * scaled_eta * gamma[i];
        }
        if prob.with_intercept {
            h[[0, 0]] = wts.sum();
            let cross = xw.sum_axis(Axis(0));
            for i in 0..x.ncols() {
                h[[0, off + i]] = cross[i];
                h[[off + i, 0]] = cross[i];
            }
        }
        let step = linalg::solve_spd(&h, &g)?;
        let descent = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta - &(t * &step);
            let (fc, gc) = prob.value_grad(&cand)?;
            if fc <= f - 1e-4 * t * descent {
                theta = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (alpha, b) = prob.split(&theta);
    Ok((b, alpha, iters, converged))
}

/// Upper bound on the per-observation loss curvature, used for diagonal
/// preconditioning.
fn loss_curvature_bound(loss: &LossKind) -> f64 {
    match *loss {
        LossKind::Squared => 2.0,
        LossKind::Logistic => 0.25,
        LossKind::Quantile { smooth_eps, .. } => 1.0 / (2.0 * smooth_eps),
    }
}

/// Limited-memory BFGS with Armijo backtracking on one task (used for the
/// smoothed quantile objective). The iteration runs in Jacobi-scaled
/// coordinates: the roughness weights span many orders of magnitude and
/// would otherwise stall the line search.
fn solve_task_lbfgs(
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossKind,
    gamma: &Array1<f64>,
    scaled_eta: f64,
    intercept: InterceptMode,
    init: Option<Array1<f64>>,
) -> Result<(Array1<f64>, f64, usize, bool)> {
    let prob = TaskProblem {
        x,
        y,
        loss,
        gamma,
        scaled_eta,
        with_intercept: intercept == InterceptMode::Fitted,
    };
    let dim = prob.dim();
    let n = x.nrows() as f64;
    let curv = loss_curvature_bound(loss);
    let off = usize::from(prob.with_intercept);
    let mut scale = Array1::ones(dim);
    for i in 0..x.ncols() {
        let col_sq: f64 = x.column(i).iter().map(|v| v * v).sum();
        scale[off + i] = (curv * col_sq / n + 2.0 * scaled_eta * gamma[i])
            .max(1e-12)
            .sqrt();
    }
    if prob.with_intercept {
        scale[0] = curv.max(1e-12).sqrt();
    }
    // phi = scale * theta; gradients transform by 1/scale
    let prob_scaled = |phi: &Array1<f64>| -> Result<(f64, Array1<f64>)> {
        let theta = phi / &scale;
        let (f, g) = prob.value_grad(&theta)?;
        Ok((f, &g / &scale))
    };
    let mut theta = init.unwrap_or_else(|| Array1::zeros(dim));
    let mut phi = &theta * &scale;
    let (mut f, mut g) = prob_scaled(&phi)?;
    let memory = 10usize;
    let mut s_hist: Vec<Array1<f64>> = Vec::new();
    let mut y_hist: Vec<Array1<f64>> = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=TASK_SOLVER_MAX_ITERS {
        iters = it;
        // convergence measured on the unscaled gradient, matching the
        // other task solvers
        let g_unscaled = &g * &scale;
        if g_unscaled.dot(&g_unscaled).sqrt() <= TASK_SOLVER_TOL {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let rho = 1.0 / y_hist[i].dot(&s_hist[i]);
            alphas[i] = rho * s_hist[i].dot(&q);
            q.scaled_add(-alphas[i], &y_hist[i]);
        }
        if let (Some(s_l), Some(y_l)) = (s_hist.last(), y_hist.last()) {
            q *= s_l.dot(y_l) / y_l.dot(y_l);
        }
        for i in 0..s_hist.len() {
            let rho = 1.0 / y_hist[i].dot(&s_hist[i]);
            let beta = rho * y_hist[i].dot(&q);
            q.scaled_add(alphas[i] - beta, &s_hist[i]);
        }
        let mut dir = -q;
        let mut descent = -g.dot(&dir);
        if descent <= 0.0 {
            dir = -g.clone();
            descent = g.dot(&g);
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &phi + &(t * &dir);
            let (fc, gc) = prob_scaled(&cand)?;
            if fc <= f - 1e-4 * t * descent {
                let s_step = &cand - &phi;
                let y_step = &gc - &g;
                if y_step.dot(&s_step) > 1e-12 * s_step.dot(&s_step) {
                    s_hist.push(s_step);
                    y_hist.push(y_step);
                    if s_hist.len() > memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                phi = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    theta = &phi / &scale;
    let (alpha, b) = prob.split(&theta);
    Ok((b, alpha, iters, converged))
}

// ---------------------------------------------------------------------
// Reduced-rank fit
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ReducedInit {
    SvdOfPooled,
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ReducedMethod {
    /// Exact alternating least squares; squared loss only.
    Als,
    /// Riemannian projected gradient with the SVD retraction; any loss.
    Riemannian,
}

/// Rank-constrained estimator `rank(B) = R` under the roughness penalty.
pub fn fit_reduced(
    data: &TaskDataset,
    system: &DiagonalizedSystem,
    eta1: f64,
    rank: usize,
    init: ReducedInit,
    method: ReducedMethod,
) -> Result<FitResult> {
    let (k, m) = (data.n_features(), data.n_tasks());
    if rank == 0 || rank > k.min(m) {
        return Err(FunRegError::RankOutOfrange { rank, k, m });
    }
    match method {
        ReducedMethod::Als => {
            if data.loss != LossKind::Squared {
                return Err(FunRegError::InvalidScenario(
                    "alternating least squares requires the squared loss".into(),
                ));
            }
            fit_reduced_als(data, system, eta1, rank, init)
        }
        ReducedMethod::Riemannian => fit_reduced_riemannian(data, system, eta1, rank, init),
    }
}

fn initial_b(
    data: &TaskDataset,
    system: &DiagonalizedSystem,
    eta1: f64,
    rank: usize,
    init: ReducedInit,
) -> Result<(Array2<f64>, Array1<f64>)> {
    match init {
        ReducedInit::SvdOfPooled => {
            let pooled = fit_pooled(data, system, eta1)?;
            Ok((pooled.b, pooled.alpha))
        }
        ReducedInit::Random(seed) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b = Array2::from_shape_fn((data.n_features(), data.n_tasks()), |_| {
                rng.random::<f64>() - 0.5
            });
            let alpha = Array1::from_shape_fn(data.n_tasks(), |t| {
                fit_intercept_only(&data.loss, &data.y[t]).unwrap_or(0.0)
            });
            let _ = rank;
            Ok((b, alpha))
        }
    }
}

/// Centered copies of the dataset for the squared-loss solvers; intercepts
/// are recovered afterwards from the column means.
fn centered_views(
    data: &TaskDataset,
) -> (Vec<Array2<f64>>, Vec<Array1<f64>>, Vec<Array1<f64>>, Vec<f64>) {
    let mut xs = Vec::with_capacity(data.n_tasks());
    let mut ys = Vec::with_capacity(data.n_tasks());
    let mut xbars = Vec::with_capacity(data.n_tasks());
    let mut ybars = Vec::with_capacity(data.n_tasks());
    for t in 0..data.n_tasks() {
        match data.intercept {
            InterceptMode::Fitted => {
                let xbar = data.x[t].mean_axis(Axis(0)).unwrap();
                let ybar = data.y[t].mean().unwrap_or(0.0);
                xs.push(&data.x[t] - &xbar);
                ys.push(&data.y[t] - ybar);
                xbars.push(xbar);
                ybars.push(ybar);
            }
            InterceptMode::None => {
                xs.push(data.x[t].clone());
                ys.push(data.y[t].clone());
                xbars.push(Array1::zeros(data.n_features()));
                ybars.push(0.0);
            }
        }
    }
    (xs, ys, xbars, ybars)
}

fn fit_reduced_als(
    data: &TaskDataset,
    system: &DiagonalizedSystem,
    eta1: f64,
    rank: usize,
    init: ReducedInit,
) -> Result<FitResult> {
    let (k, m) = (data.n_features(), data.n_tasks());
    let n = data.n_obs() as f64;
    let nm = n * m as f64;
    let gamma = system.gamma();
    let spec = PenaltySpec::roughness(system, eta1, m)?;
    let (xs, ys, xbars, ybars) = centered_views(data);

    let (b0, _) = initial_b(data, system, eta1, rank, init)?;
    let mut d = match FixedRankPoint::from_dense(&b0, rank) {
        Ok(p) => p.u().clone(),
        // degenerate start (e.g. zero init): seed with a deterministic frame
        Err(_) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
            let g = Array2::from_shape_fn((k, rank), |_| rng.random::<f64>() - 0.5);
            orthonormal_columns(&g)?
        }
    };
    let mut a = Array2::zeros((m, rank));

    let xtx: Vec<Array2<f64>> = xs.iter().map(|x| x.t().dot(x) / nm).collect();
    let xty: Vec<Array1<f64>> = xs.iter().zip(&ys).map(|(x, y)| x.t().dot(y) / nm).collect();

    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 1..=500 {
        sweeps = sweep;
        // A-step: per-task ridge in the R-dimensional factor space.
        let dgd = {
            let gd = &d * &gamma.view().insert_axis(Axis(1));
            d.t().dot(&gd)
        };
        for t in 0..m {
            let h = d.t().dot(&xtx[t].dot(&d)) + &(eta1 * &dgd);
            let rhs = d.t().dot(&xty[t]);
            let at = linalg::solve_spd(&h, &rhs)?;
            a.row_mut(t).assign(&at);
        }
        // D-step: joint solve over vec(D) with the Kronecker-structured
        // normal matrix (KR x KR, small at desk scale).
        let kr = k * rank;
        let mut h = Array2::zeros((kr, kr));
        let mut rhs = Array1::zeros(kr);
        let ata = a.t().dot(&a);
        for t in 0..m {
            let at = a.row(t);
            for r1 in 0..rank {
                for r2 in 0..rank {
                    let w = at[r1] * at[r2];
                    if w == 0.0 {
                        continue;
                    }
                    for i in 0..k {
                        for j in 0..k {
                            h[[r1 * k + i, r2 * k + j]] += w * xtx[t][[i, j]];
                        }
                    }
                }
            }
            for r1 in 0..rank {
                for i in 0..k {
                    rhs[r1 * k + i] += at[r1] * xty[t][i];
                }
            }
        }
        for r1 in 0..rank {
            for r2 in 0..rank {
                let w = eta1 * ata[[r1, r2]];
                for i in 0..k {
                    h[[r1 * k + i, r2 * k + i]] += w * gamma[i];
                }
            }
        }
        let dvec = linalg::solve_spd(&h, &rhs)?;
        for r1 in 0..rank {
            for i in 0..k {
                d[[i, r1]] = dvec[r1 * k + i];
            }
        }

        let b = d.dot(&a.t());
        let alpha = recover_intercepts(data, &b, &xbars, &ybars);
        let obj = objective(data, &spec, &alpha, &b)?;
        trace.push(obj);
        if (prev - obj).abs() < 1e-10 {
            converged = true;
            break;
        }
        prev = obj;
    }
    let b = d.dot(&a.t());
    let alpha = recover_intercepts(data, &b, &xbars, &ybars);
    Ok(FitResult {
        b,
        alpha,
        objective_trace: trace,
        converged,
        iterations: sweeps,
    })
}

fn recover_intercepts(
    data: &TaskDataset,
    b: &Array2<f64>,
    xbars: &[Array1<f64>],
    ybars: &[f64],
) -> Array1<f64> {
    match data.intercept {
        InterceptMode::Fitted => Array1::from_shape_fn(data.n_tasks(), |t| {
            ybars[t] - xbars[t].dot(&b.column(t))
        }),
        InterceptMode::None => Array1::zeros(data.n_tasks()),
    }
}

fn orthonormal_columns(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (u, _, _) = linalg::svd_thin(a)?;
    Ok(u.slice(ndarray::s![.., ..a.ncols()]).to_owned())
}

const RIEMANN_TOL: f64 = 1e-7;
const RIEMANN_MAX_ITERS: usize = 2000;

fn fit_reduced_riemannian(
    data: &TaskDataset,
    system: &DiagonalizedSystem,
    eta1: f64,
    rank: usize,
    init: ReducedInit,
) -> Result<FitResult> {
    let m = data.n_tasks();
    let spec = PenaltySpec::roughness(system, eta1, m)?;
    let (b0, mut alpha) = initial_b(data, system, eta1, rank, init)?;
    let mut point = FixedRankPoint::from_dense(&b0, rank)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    let mut b = point.to_dense();
    let mut f = objective(data, &spec, &alpha, &b)?;
    trace.push(f);
    for it in 1..=RIEMANN_MAX_ITERS {
        iters = it;
        if data.intercept == InterceptMode::Fitted {
            update_intercepts(data, &b, &mut alpha)?;
            f = objective(data, &spec, &alpha, &b)?;
        }
        let grad = objective_gradient_b(data, &spec, &alpha, &b)?;
        let rgrad = manifold::project_tangent(&point, &grad)?;
        let gnorm = rgrad.norm();
        if gnorm <= RIEMANN_TOL * (1.0 + b.iter().map(|v| v * v).sum::<f64>().sqrt()) {
            converged = true;
            break;
        }
        let dir = rgrad.scale(-1.0);
        let mut step = 1.0 / (1.0 + gnorm);
        let mut accepted = false;
        for _ in 0..60 {
            match manifold::retract(&point, &dir.scale(step)) {
                Ok(cand) => {
                    let bc = cand.to_dense();
                    let fc = objective(data, &spec, &alpha, &bc)?;
                    if fc <= f - 1e-4 * step * gnorm * gnorm {
                        point = cand;
                        b = bc;
                        f = fc;
                        accepted = true;
                        break;
                    }
                }
                Err(FunRegError::RankDegeneracy { .. }) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(f);
    }
    Ok(FitResult {
        b,
        alpha,
        objective_trace: trace,
        converged,
        iterations: iters,
    })
}

/// One-dimensional Newton refresh of each intercept given B.
fn update_intercepts(data: &TaskDataset, b: &Array2<f64>, alpha: &mut Array1<f64>) -> Result<()> {
    for t in 0..data.n_tasks() {
        let base = data.x[t].dot(&b.column(t));
        let mut a = alpha[t];
        for _ in 0..50 {
            let u = &base + a;
            let le = loss_value_grad(&data.loss, &data.y[t], &u)?;
            let g: f64 = le.grad.sum();
            let h: f64 = u
                .iter()
                .zip(data.y[t].iter())
                .map(|(&ui, &yi)| loss_curvature(&data.loss, ui, yi))
                .sum::<f64>()
                / data.n_obs() as f64;
            let step = g / h.max(1e-12);
            a -= step;
            if step.abs() < 1e-12 {
                break;
            }
        }
        alpha[t] = a;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Graph-regularized fit
// ---------------------------------------------------------------------

const CG_REL_TOL: f64 = 1e-10;
const GRAPH_GD_MAX_ITERS: usize = 5000;

/// Graph-regularized estimator: tasks coupled through
/// `eta2 tr(B Omega B' Sigma) + eta1 eta2 tr(B' Gamma B Omega)` on top of
/// the roughness penalty.
pub fn fit_graph(
    data: &TaskDataset,
    system: &DiagonalizedSystem,
    lap: &Laplacian,
    eta1: f64,
    eta2: f64,
) -> Result<FitResult> {
    if eta1 < 0.0 || eta2 < 0.0 {
        return Err(FunRegError::InvalidScenario(format!(
            "penalty weights must be nonnegative, got eta1={eta1}, eta2={eta2}"
        )));
    }
    let m = data.n_tasks();
    if lap.n_vertices() != m {
        return Err(FunRegError::DimensionMismatch(format!(
            "Laplacian has {} vertices, dataset has {m} tasks",
            lap.n_vertices()
        )));
    }
    let sigma_hat = data.pooled_covariance();
    let spec = PenaltySpec::graph(system, lap, sigma_hat, eta1, eta2)?;
    match data.loss {
        LossKind::Squared => fit_graph_cg(data, &spec),
        _ => fit_graph_descent(data, &spec),
    }
}

/// Preconditioned conjugate gradient on the coupled normal equations,
/// with the structured mat-vec (never materializing the KM x KM system).
fn fit_graph_cg(data: &TaskDataset, spec: &PenaltySpec) -> Result<FitResult> {
    let (k, m) = (data.n_features(), data.n_tasks());
    let n = data.n_obs() as f64;
    let nm = n * m as f64;
    let (xs, ys, xbars, ybars) = centered_views(data);
    let xtx: Vec<Array2<f64>> = xs.iter().map(|x| x.t().dot(x) / nm).collect();
    let mut rhs = Array2::zeros((k, m));
    for t in 0..m {
        rhs.column_mut(t).assign(&(xs[t].t().dot(&ys[t]) / nm));
    }
    let y_norm_sq: f64 = ys.iter().map(|y| y.dot(y)).sum::<f64>() / nm;

    let apply = |b: &Array2<f64>| -> Result<Array2<f64>> {
        let mut out = spec.operator_apply(b)?;
        for t in 0..m {
            let col = xtx[t].dot(&b.column(t));
            out.column_mut(t).scaled_add(1.0, &col);
        }
        Ok(out)
    };
    // Jacobi preconditioner from the diagonal of the full operator.
    let mut precond = spec.operator_diagonal();
    for t in 0..m {
        for i in 0..k {
            precond[[i, t]] += xtx[t][[i, i]];
        }
    }
    precond.mapv_inplace(|v| 1.0 / v.max(1e-300));

    let mut b = Array2::zeros((k, m));
    let mut r = rhs.clone();
    let mut z = &r * &precond;
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(z.iter()).map(|(a, c)| a * c).sum();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let max_iters = 10 * k * m;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=max_iters {
        iters = it;
        let ap = apply(&p)?;
        let pap: f64 = p.iter().zip(ap.iter()).map(|(a, c)| a * c).sum();
        if pap <= 0.0 {
            return Err(FunRegError::SingularSystem);
        }
        let alpha = rz / pap;
        b.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        // quadratic objective shifted to the true training objective
        let phi: f64 = -0.5 * b.iter().zip(rhs.iter().zip(r.iter())).map(|(x, (c, rr))| x * (c + rr)).sum::<f64>();
        trace.push(2.0 * phi + y_norm_sq);
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= CG_REL_TOL * rhs_norm {
            converged = true;
            break;
        }
        z = &r * &precond;
        let rz_next: f64 = r.iter().zip(z.iter()).map(|(a, c)| a * c).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        p = &z + &(beta * &p);
    }
    if !converged {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        return Err(FunRegError::CgDidNotConverge {
            iters,
            tol: CG_REL_TOL,
            residual: rnorm / rhs_norm,
        });
    }
    let alpha = recover_intercepts(data, &b, &xbars, &ybars);
    Ok(FitResult {
        b,
        alpha,
        objective_trace: trace,
        converged,
        iterations: iters,
    })
}

/// Jacobi-preconditioned gradient descent with Armijo backtracking for
/// non-quadratic losses under the graph penalty; intercepts refreshed
/// between steps. The preconditioner is the diagonal of the curvature
/// bound (loss curvature cap plus the penalty operator diagonal).
fn fit_graph_descent(data: &TaskDataset, spec: &PenaltySpec) -> Result<FitResult> {
    let (k, m) = (data.n_features(), data.n_tasks());
    let nm = (data.n_obs() * m) as f64;
    let curv = loss_curvature_bound(&data.loss);
    let mut precond = 2.0 * spec.operator_diagonal();
    for t in 0..m {
        for i in 0..k {
            let col_sq: f64 = data.x[t].column(i).iter().map(|v| v * v).sum();
            precond[[i, t]] += curv * col_sq / nm;
        }
    }
    precond.mapv_inplace(|v| 1.0 / v.max(1e-12));

    let mut b = Array2::zeros((k, m));
    let mut alpha = Array1::from_shape_fn(m, |t| {
        fit_intercept_only(&data.loss, &data.y[t]).unwrap_or(0.0)
    });
    if data.intercept == InterceptMode::None {
        alpha.fill(0.0);
    }
    let mut f = objective(data, spec, &alpha, &b)?;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iters = 0;
    let mut step = 1.0f64;
    for it in 1..=GRAPH_GD_MAX_ITERS {
        iters = it;
        if data.intercept == InterceptMode::Fitted {
            update_intercepts(data, &b, &mut alpha)?;
            f = objective(data, spec, &alpha, &b)?;
        }
        let g = objective_gradient_b(data, spec, &alpha, &b)?;
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= 1e-7 * (1.0 + bnorm) {
            converged = true;
            break;
        }
        let dir = &g * &precond;
        let descent: f64 = g.iter().zip(dir.iter()).map(|(a, c)| a * c).sum();
        step = (step * 2.0).min(4.0);
        let mut accepted = false;
        for _ in 0..80 {
            let cand = &b - &(step * &dir);
            let fc = objective(data, spec, &alpha, &cand)?;
            if fc <= f - 1e-4 * step * descent {
                b = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(f);
    }
    Ok(FitResult {
        b,
        alpha,
        objective_trace: trace,
        converged,
        iterations: iters,
    })
}

/// Dense oracle for the graph normal equations (test use, K*M <= 144):
/// assembles the full KM x KM system and solves it directly.
pub fn graph_dense_solve(
    data: &TaskDataset,
    system: &DiagonalizedSystem,
    lap: &Laplacian,
    eta1: f64,
    eta2: f64,
) -> Result<Array2<f64>> {
    let (k, m) = (data.n_features(), data.n_tasks());
    let km = k * m;
    if km > 144 {
        return Err(FunRegError::DimensionMismatch(format!(
            "dense graph oracle limited to K*M <= 144, got {km}"
        )));
    }
    let n = data.n_obs() as f64;
    let nm = n * m as f64;
    let sigma_hat = data.pooled_covariance();
    let spec = PenaltySpec::graph(system, lap, sigma_hat, eta1, eta2)?;
    let mut a = spec.kronecker_dense()?;
    let (xs, ys, _, _) = centered_views(data);
    let mut rhs = Array1::zeros(km);
    for t in 0..m {
        let xtx = xs[t].t().dot(&xs[t]) / nm;
        for i in 0..k {
            for j in 0..k {
                a[[t * k + i, t * k + j]] += xtx[[i, j]];
            }
        }
        let xty = xs[t].t().dot(&ys[t]) / nm;
        for i in 0..k {
            rhs[t * k + i] = xty[i];
        }
    }
    let sol = linalg::solve_spd(&a, &rhs)?;
    let mut b = Array2::zeros((k, m));
    for t in 0..m {
        for i in 0..k {
            b[[i, t]] = sol[t * k + i];
        }
    }
    Ok(b)
}
