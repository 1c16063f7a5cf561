//! Synthetic experiment scenarios: true slope surfaces, covariate path
//! generation, and response sampling under each loss model.
//!
//! Responses are generated from the true surface by fine-grid quadrature,
//! not from its spline projection, so spline approximation bias is
//! genuinely present in every experiment.

use crate::error::{FunRegError, Result};
use crate::estimators::{InterceptMode, LossKind, TaskDataset};
use crate::graph::{self, AuxiliarySample, KernelG, Laplacian, Manifold};
use crate::linalg;
use crate::processes::{CovKernel, GpSampler};
use crate::quad;
use crate::simdiag::DiagonalizedSystem;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

/// Named true-slope families.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Beta0Family {
    /// `beta0(t) = sin(2 pi t) + 0.5 cos(4 pi t)`, shared by every task.
    SingleSmooth,
    /// `beta0_m = sum_r a_{mr} psi_r` with sinusoidal factors psi_r and
    /// Gaussian mixing weights; exactly rank `r0` in any basis.
    ReducedRank { r0: usize },
    /// `beta0(t, s) = sin(2 pi t)(1 + s_1) + cos(2 pi t) s_2` over
    /// auxiliary points s on a sphere.
    GraphSphere,
}

/// Scenario presets mirroring the simulated settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ScenarioPreset {
    SingleTaskSmooth,
    ReducedRank { r0: usize },
    GraphSphere { mu: usize },
}

/// Full description of a data-generating process.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Scenario {
    pub kernel: CovKernel,
    pub beta0: Beta0Family,
    pub manifold: Option<Manifold>,
    pub m_tasks: usize,
    pub n_obs: usize,
    pub noise_sd: f64,
    pub loss: LossKind,
    pub rank_true: Option<usize>,
    pub intercept: InterceptMode,
    pub seed: u64,
}

/// Ground truth attached to a generated dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// True slope curves evaluated on the system grid, one column per task.
    pub beta0_grid: Array2<f64>,
    /// L2 projection of the true slopes onto the working spline basis.
    pub b0_proj: Array2<f64>,
    pub aux: Option<AuxiliarySample>,
    pub laplacian: Option<Laplacian>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub data: TaskDataset,
    pub truth: GroundTruth,
}

/// Build a scenario from a preset with the common defaults; fields can be
/// overridden on the returned value.
pub fn make_scenario(preset: ScenarioPreset, seed: u64) -> Result<Scenario> {
    match preset {
        ScenarioPreset::SingleTaskSmooth => Ok(Scenario {
            kernel: CovKernel::Brownian,
            beta0: Beta0Family::SingleSmooth,
            manifold: None,
            m_tasks: 1,
            n_obs: 256,
            noise_sd: 0.5,
            loss: LossKind::Squared,
            rank_true: None,
            intercept: InterceptMode::None,
            seed,
        }),
        ScenarioPreset::ReducedRank { r0 } => {
            if r0 == 0 {
                return Err(FunRegError::InvalidScenario(
                    "reduced-rank preset needs r0 >= 1".into(),
                ));
            }
            Ok(Scenario {
                kernel: CovKernel::Brownian,
                beta0: Beta0Family::ReducedRank { r0 },
                manifold: None,
                m_tasks: 20,
                n_obs: 96,
                noise_sd: 1.0,
                loss: LossKind::Squared,
                rank_true: Some(r0),
                intercept: InterceptMode::None,
                seed,
            })
        }
        ScenarioPreset::GraphSphere { mu } => {
            if mu < 2 {
                return Err(FunRegError::InvalidScenario(
                    "graph-sphere preset needs mu >= 2".into(),
                ));
            }
            Ok(Scenario {
                kernel: CovKernel::Brownian,
                beta0: Beta0Family::GraphSphere,
                manifold: Some(Manifold::Sphere { mu }),
                m_tasks: 100,
                n_obs: 64,
                noise_sd: 1.0,
                loss: LossKind::Squared,
                rank_true: None,
                intercept: InterceptMode::None,
                seed,
            })
        }
    }
}

/// Sinusoidal representation factors: odd ranks are sines, even ranks are
/// cosines, with frequency growing in the rank index.
pub fn factor_curve(r: usize, t: f64) -> f64 {
    let freq = 2.0 * std::f64::consts::PI * r as f64;
    if r % 2 == 1 {
        (freq * t).sin()
    } else {
        (freq * t).cos()
    }
}

fn single_smooth(t: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI * t;
    tau.sin() + 0.5 * (2.0 * tau).cos()
}

/// True slope values on a grid for every task, together with any
/// auxiliary structure the family needs.
fn beta0_on_grid(
    scenario: &Scenario,
    grid: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Option<AuxiliarySample>)> {
    let m = scenario.m_tasks;
    let g = grid.len();
    match &scenario.beta0 {
        Beta0Family::SingleSmooth => {
            let mut out = Array2::zeros((g, m));
            for (i, &t) in grid.iter().enumerate() {
                let v = single_smooth(t);
                for task in 0..m {
                    out[[i, task]] = v;
                }
            }
            Ok((out, None))
        }
        Beta0Family::ReducedRank { r0 } => {
            let a = Array2::from_shape_fn((m, *r0), |_| StandardNormal.sample(rng));
            let mut psi = Array2::zeros((g, *r0));
            for (i, &t) in grid.iter().enumerate() {
                for r in 0..*r0 {
                    psi[[i, r]] = factor_curve(r + 1, t);
                }
            }
            Ok((psi.dot(&a.t()), None))
        }
        Beta0Family::GraphSphere => {
            let manifold = scenario.manifold.ok_or_else(|| {
                FunRegError::InvalidScenario("graph family needs a manifold".into())
            })?;
            let aux = graph::sample_manifold(manifold, m, rng.random())?;
            let mut out = Array2::zeros((g, m));
            for task in 0..m {
                let s1 = aux.points[[task, 0]];
                let s2 = aux.points[[task, 1]];
                for (i, &t) in grid.iter().enumerate() {
                    let tau = 2.0 * std::f64::consts::PI * t;
                    out[[i, task]] = tau.sin() * (1.0 + s1) + tau.cos() * s2;
                }
            }
            Ok((out, Some(aux)))
        }
    }
}

/// Closed-form CDF of the Student-t distribution with 4 degrees of
/// freedom: `F(x) = 1/2 + x (x^2 + 6) / (2 (x^2 + 4)^{3/2})`.
pub fn student_t4_cdf(x: f64) -> f64 {
    0.5 + x * (x * x + 6.0) / (2.0 * (x * x + 4.0).powf(1.5))
}

/// Quantile of the t(4) distribution by bisection on the closed-form CDF.
pub fn student_t4_quantile(w: f64) -> f64 {
    assert!(0.0 < w && w < 1.0);
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t4_cdf(mid) < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generate a dataset with a sampler built on the system grid.
pub fn generate(scenario: &Scenario, system: &DiagonalizedSystem) -> Result<Generated> {
    let sampler = GpSampler::new(scenario.kernel.clone(), system.grid().len(), scenario.seed)?;
    generate_with(scenario, system, &sampler, scenario.seed)
}

/// Fast path reusing a prebuilt sampler (the Cholesky factor is the
/// expensive part); `seed` controls every random draw.
pub fn generate_with(
    scenario: &Scenario,
    system: &DiagonalizedSystem,
    sampler: &GpSampler,
    seed: u64,
) -> Result<Generated> {
    if scenario.kernel != *sampler.kernel() {
        return Err(FunRegError::InvalidScenario(
            "sampler kernel differs from the scenario kernel".into(),
        ));
    }
    if scenario.m_tasks == 0 || scenario.n_obs == 0 {
        return Err(FunRegError::InvalidScenario(
            "need at least one task and one observation".into(),
        ));
    }
    if let Some(r0) = scenario.rank_true {
        if r0 > scenario.m_tasks.min(system.dof()) {
            return Err(FunRegError::InvalidScenario(format!(
                "rank_true {r0} exceeds min(K, M)"
            )));
        }
    }
    let grid = system.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (beta0_grid, aux) = beta0_on_grid(scenario, grid, &mut rng)?;

    let w = Array1::from(quad::trapezoid_weights(grid));
    let phi = system.basis().eval_matrix(grid, 0)?;
    let n = scenario.n_obs;
    let m = scenario.m_tasks;
    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    let t4 = StudentT::new(4.0).expect("4 degrees of freedom is valid");
    let t4_shift = match scenario.loss {
        LossKind::Quantile { w, .. } => student_t4_quantile(w),
        _ => 0.0,
    };
    for _task in 0..m {
        let paths = sampler.sample_paths_with(&mut rng, n);
        let weighted = &paths * &w.view().insert_axis(Axis(0));
        let design = weighted.dot(&phi);
        let u = weighted.dot(&beta0_grid.column(_task));
        let mut y = Array1::zeros(n);
        match scenario.loss {
            LossKind::Squared => {
                for i in 0..n {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    y[i] = u[i] + scenario.noise_sd * z;
                }
            }
            LossKind::Logistic => {
                for i in 0..n {
                    let p = 1.0 / (1.0 + (-u[i]).exp());
                    y[i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                }
            }
            LossKind::Quantile { .. } => {
                for i in 0..n {
                    let z: f64 = t4.sample(&mut rng);
                    y[i] = u[i] + scenario.noise_sd * (z - t4_shift);
                }
            }
        }
        xs.push(design);
        ys.push(y);
    }

    // L2 projection of the true curves onto the working basis.
    let phiw = &phi * &w.view().insert_axis(Axis(1));
    let gram = linalg::symmetrize(&phiw.t().dot(&phi));
    let rhs = phiw.t().dot(&beta0_grid);
    let mut b0_proj = Array2::zeros((system.dof(), m));
    for task in 0..m {
        let col = linalg::solve_spd(&gram, &rhs.column(task).to_owned())?;
        b0_proj.column_mut(task).assign(&col);
    }

    let laplacian = match &aux {
        Some(sample) => {
            let h = graph::default_bandwidth(sample.intrinsic_dim(), m);
            Some(graph::build_laplacian(sample, h, KernelG::ExpTrunc)?)
        }
        None => None,
    };

    let data = TaskDataset::new(xs, ys, scenario.intercept, scenario.loss)?;
    Ok(Generated {
        data,
        truth: GroundTruth {
            beta0_grid,
            b0_proj,
            aux,
            laplacian,
        },
    })
}
