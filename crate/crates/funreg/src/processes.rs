//! Covariance kernels for the functional covariates and Gaussian-process
//! path sampling on a dense grid.

use crate::error::{FunRegError, Result};
use crate::linalg;
use crate::quad;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Covariance kernel of the functional covariate process on [0, 1].
///
/// Each kernel declares the eigenvalue decay exponent `q` and the
/// dimension `p` of the polynomial null space of its reproducing-kernel
/// decomposition of the Sobolev space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovKernel {
    /// `C(s,t) = min(s,t)`.
    Brownian,
    /// `C(s,t) = a + b min(s,t)`.
    BrownianShifted { a: f64, b: f64 },
    /// `C(s,t) = c1 exp(-c2 |s-t|)`.
    OrnsteinUhlenbeck { c1: f64, c2: f64 },
    /// `C(s,t) = min(s,t) - s t`.
    BrownianBridge,
    /// `(q-1)`-fold integrated Brownian motion.
    IteratedBrownian { q: usize },
    /// Sobolev reproducing kernel of order `q` with coefficients
    /// `c[0..=q]` (polynomial part plus integrated-Brownian part).
    Sobolev { q: usize, c: Vec<f64> },
}

impl CovKernel {
    /// Sobolev kernel with all coefficients set to 1.
    pub fn sobolev_unit(q: usize) -> Self {
        CovKernel::Sobolev {
            q,
            c: vec![1.0; q + 1],
        }
    }

    /// Declared eigenvalue decay exponent q.
    pub fn eigen_decay_q(&self) -> usize {
        match self {
            CovKernel::Brownian
            | CovKernel::BrownianShifted { .. }
            | CovKernel::OrnsteinUhlenbeck { .. }
            | CovKernel::BrownianBridge => 1,
            CovKernel::IteratedBrownian { q } | CovKernel::Sobolev { q, .. } => *q,
        }
    }

    /// Declared dimension p of the polynomial space without variability.
    pub fn null_dim_p(&self) -> usize {
        match self {
            CovKernel::Brownian => 1,
            CovKernel::BrownianShifted { .. } => 0,
            CovKernel::OrnsteinUhlenbeck { .. } => 0,
            CovKernel::BrownianBridge => 2,
            CovKernel::IteratedBrownian { q } => *q,
            CovKernel::Sobolev { .. } => 0,
        }
    }

    /// Pointwise kernel value `C(s, t)`.
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match self {
            CovKernel::Brownian => s.min(t),
            CovKernel::BrownianShifted { a, b } => a + b * s.min(t),
            CovKernel::OrnsteinUhlenbeck { c1, c2 } => c1 * (-c2 * (s - t).abs()).exp(),
            CovKernel::BrownianBridge => s.min(t) - s * t,
            CovKernel::IteratedBrownian { q } => iterated_brownian(*q, s, t),
            CovKernel::Sobolev { q, c } => {
                let mut val = 0.0;
                let mut sfac = 1.0;
                let mut tfac = 1.0;
                let mut fact = 1.0;
                for (l, &cl) in c.iter().take(*q).enumerate() {
                    if l > 0 {
                        sfac *= s;
                        tfac *= t;
                        fact *= l as f64;
                    }
                    val += cl * (sfac / fact) * (tfac / fact);
                }
                val + c[*q] * iterated_brownian(*q, s, t)
            }
        }
    }

    /// Kernel matrix on a grid.
    pub fn matrix(&self, grid: &[f64]) -> Array2<f64> {
        let n = grid.len();
        let mut c = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(grid[i], grid[j]);
                c[[i, j]] = v;
                c[[j, i]] = v;
            }
        }
        c
    }

    /// `\int C(t, t) dt` by fine quadrature (the operator trace).
    pub fn trace(&self) -> f64 {
        let (pts, wts) = quad::gauss_legendre_on_partition(&[0.0, 0.5, 1.0], 24);
        pts.iter()
            .zip(&wts)
            .map(|(&t, &w)| w * self.eval(t, t))
            .sum()
    }

    /// Nystrom eigenvalues of the grid-discretized integral operator,
    /// sorted in decreasing order.
    pub fn eigenvalues(&self, n_grid: usize, n_eigs: usize) -> Result<Array1<f64>> {
        if n_grid < 32 {
            return Err(FunRegError::EigenGridTooCoarse(n_grid));
        }
        if n_eigs > n_grid {
            return Err(FunRegError::TooManyEigenvalues { n_eigs, n_grid });
        }
        let grid = quad::uniform_grid(n_grid);
        let w = quad::trapezoid_weights(&grid);
        let sqw = Array1::from_iter(w.iter().map(|v| v.sqrt()));
        let mut c = self.matrix(&grid);
        for i in 0..n_grid {
            for j in 0..n_grid {
                c[[i, j]] *= sqw[i] * sqw[j];
            }
        }
        let vals = linalg::eigvalsh(&c)?;
        let mut out = Array1::zeros(n_eigs);
        for k in 0..n_eigs {
            out[k] = vals[n_grid - 1 - k];
        }
        Ok(out)
    }
}

/// Covariance of the (q-1)-fold integrated Brownian motion,
/// `\int_0^1 (s-u)_+^{q-1} (t-u)_+^{q-1} du / ((q-1)!)^2`, in closed form.
fn iterated_brownian(q: usize, s: f64, t: f64) -> f64 {
    assert!(q >= 1);
    let m = s.min(t);
    if m <= 0.0 {
        return 0.0;
    }
    let p = (q - 1) as i32;
    let fact: f64 = (1..q).map(|k| k as f64).product();
    // Expand (s-u)^p (t-u)^p and integrate monomials over [0, m].
    let mut total = 0.0;
    for i in 0..=p {
        for j in 0..=p {
            let coef = binom(p, i) * binom(p, j) * (-1.0f64).powi(i + j);
            let power = (i + j + 1) as f64;
            total += coef * s.powi(p - i) * t.powi(p - j) * m.powf(power) / power;
        }
    }
    total / (fact * fact)
}

fn binom(n: i32, k: i32) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out *= (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Gaussian-process sampler on a fixed dense grid, backed by a cached
/// Cholesky factor of the grid covariance (with an escalating jitter
/// ladder for semi-definite kernels).
#[derive(Debug, Clone)]
pub struct GpSampler {
    kernel: CovKernel,
    grid: Vec<f64>,
    chol: Array2<f64>,
    jitter: f64,
    seed: u64,
}

impl GpSampler {
    pub const DEFAULT_GRID: usize = 512;

    pub fn new(kernel: CovKernel, n_grid: usize, seed: u64) -> Result<Self> {
        let grid = quad::uniform_grid(n_grid);
        let c = kernel.matrix(&grid);
        let mean_diag = c.diag().sum() / n_grid as f64;
        let mut chosen = None;
        for &rel in &[1e-14, 1e-12, 1e-10, 1e-8] {
            let mut cj = c.clone();
            for i in 0..n_grid {
                cj[[i, i]] += rel * mean_diag.max(f64::MIN_POSITIVE);
            }
            if let Some(l) = linalg::cholesky_lower(&cj) {
                chosen = Some((l, rel * mean_diag));
                break;
            }
        }
        let (chol, jitter) = chosen.ok_or(FunRegError::CholeskyFailed)?;
        Ok(Self {
            kernel,
            grid,
            chol,
            jitter,
            seed,
        })
    }

    pub fn kernel(&self) -> &CovKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Maximum relative deviation between `L L^T` and the grid covariance.
    pub fn factor_residual(&self) -> f64 {
        let c = self.kernel.matrix(&self.grid);
        let rec = self.chol.dot(&self.chol.t());
        let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        (&rec - &c).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale
    }

    /// `n` zero-mean Gaussian paths with the grid covariance, one row per
    /// path. Each call restarts the generator from the stored seed, so the
    /// output is a pure function of `(kernel, grid, seed, n)`.
    pub fn sample_paths(&self, n: usize) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        self.sample_paths_with(&mut rng, n)
    }

    /// Same as [`sample_paths`](Self::sample_paths) with a caller-supplied
    /// generator (used by the experiment harness for seed splitting).
    pub fn sample_paths_with(&self, rng: &mut impl rand::Rng, n: usize) -> Array2<f64> {
        let g = self.grid.len();
        let mut z = Array2::zeros((n, g));
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        z.dot(&self.chol.t())
    }
}
