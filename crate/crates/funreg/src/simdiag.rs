//! Simultaneous diagonalization of the prediction norm and the roughness
//! norm over the spline space.
//!
//! A two-step change of basis makes both quadratic forms diagonal. Step
//! one whitens the L2 Gram matrix and diagonalizes the roughness form;
//! step two diagonalizes the covariance form of the covariate process in
//! the intermediate basis, inflating numerically-null directions by
//! `K^{-2q}` so the final whitening stays invertible. The installed
//! working basis then satisfies: covariance of basis integrals =
//! `I_{K-pbar} (+) 0_{pbar}` and roughness = `diag(gamma)` with gamma
//! nondecreasing.

use crate::basis::SplineBasis;
use crate::error::{FunRegError, Result};
use crate::linalg;
use crate::processes::CovKernel;
use crate::quad;
use ndarray::{Array1, Array2, Axis};

/// Relative threshold below which a covariance-form eigenvalue is treated
/// as numerically zero.
pub const NULL_TOLERANCE_REL: f64 = 1e-10;

/// Spline system with the diagonalizing transform installed.
#[derive(Debug, Clone)]
pub struct DiagonalizedSystem {
    basis: SplineBasis,
    kernel: CovKernel,
    gamma: Array1<f64>,
    pbar: usize,
    deriv_order: usize,
    grid: Vec<f64>,
    /// Covariance of working-basis integrals, computed on the kernel grid.
    cov_transformed: Array2<f64>,
    cond_q: f64,
}

impl DiagonalizedSystem {
    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn kernel(&self) -> &CovKernel {
        &self.kernel
    }

    /// Diagonal of the transformed roughness form, nondecreasing.
    pub fn gamma(&self) -> &Array1<f64> {
        &self.gamma
    }

    /// Detected multiplicity of the covariance form's numerical null space.
    pub fn pbar(&self) -> usize {
        self.pbar
    }

    pub fn deriv_order(&self) -> usize {
        self.deriv_order
    }

    pub fn dof(&self) -> usize {
        self.basis.dof()
    }

    /// Quadrature grid the covariance form was discretized on.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cond_q(&self) -> f64 {
        self.cond_q
    }

    /// Covariance matrix of `\int x phi` in the working basis.
    pub fn cov_transformed(&self) -> &Array2<f64> {
        &self.cov_transformed
    }

    /// The pattern `I_{K-pbar} (+) 0_{pbar}` as a diagonal vector.
    pub fn sigma_pattern(&self) -> Array1<f64> {
        let k = self.dof();
        Array1::from_shape_fn(k, |i| if i < k - self.pbar { 1.0 } else { 0.0 })
    }

    /// Squared prediction semi-norm of a coefficient vector on the
    /// nontrivial block.
    pub fn x_norm_sq(&self, b: &Array1<f64>) -> f64 {
        let cut = self.dof() - self.pbar;
        b.iter().take(cut).map(|v| v * v).sum()
    }

    /// Squared roughness semi-norm of a coefficient vector.
    pub fn gamma_norm_sq(&self, b: &Array1<f64>) -> f64 {
        b.iter()
            .zip(self.gamma.iter())
            .map(|(v, g)| g * v * v)
            .sum()
    }

    /// Least-squares slope of `log gamma_k` on `log k` over `k` in
    /// `[2d+2, K]` (1-based).
    pub fn gamma_growth_check(&self) -> Result<f64> {
        let k = self.dof();
        let d = self.deriv_order;
        if k < 2 * d + 8 {
            return Err(FunRegError::DimensionMismatch(format!(
                "gamma growth check needs K >= 2d+8, got K={k}, d={d}"
            )));
        }
        let lo = 2 * d + 2;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for idx in lo..=k {
            let g = self.gamma[idx - 1];
            if g <= 0.0 {
                return Err(FunRegError::NonPositiveGamma {
                    index: idx,
                    value: g,
                });
            }
            xs.push((idx as f64).ln());
            ys.push(g.ln());
        }
        let (slope, _, _) = linalg::ols_line(&xs, &ys);
        Ok(slope)
    }
}

/// Construct the diagonalizing transform for `basis` under `kernel` with
/// roughness order `d`, discretizing the covariance form on `n_grid`
/// uniform points.
pub fn diagonalize(
    basis: &SplineBasis,
    kernel: &CovKernel,
    d: usize,
    n_grid: usize,
) -> Result<DiagonalizedSystem> {
    let k = basis.dof();
    let q = kernel.eigen_decay_q();
    let gp = basis.gram_matrices(d)?;

    // Step one: whiten the Gram matrix and diagonalize roughness.
    let n_inv_sqrt = linalg::inv_sqrt_spd(&gp.gram, 1e-14)?;
    let m1 = n_inv_sqrt.dot(&gp.rough).dot(&n_inv_sqrt);
    let (mut w1, v1) = linalg::eigh_ascending(&m1)?;
    let w1_max = w1[k - 1].max(f64::MIN_POSITIVE);
    // The roughness form has exactly d zero eigenvalues (polynomials below
    // the derivative order). The first positive eigenvalue can sit as low
    // as K^{-2d} relative to the top, so the zero threshold keys off the
    // (d+1)-th smallest value instead of the largest.
    let tol_w = (1e-8 * w1[d.min(k - 1)]).max(1e-14 * w1_max);
    let mut near_null = 0usize;
    for v in w1.iter_mut() {
        if *v < tol_w {
            *v = 0.0;
            near_null += 1;
        }
    }
    if near_null > d {
        return Err(FunRegError::KnotDegeneracy {
            found: near_null,
            expected: d,
        });
    }

    // Intermediate basis values on the kernel grid: rows are grid points.
    let grid = quad::uniform_grid(n_grid);
    let w = Array1::from(quad::trapezoid_weights(&grid));
    let raw = basis.eval_matrix_raw(&grid, 0)?;
    let inter = raw.dot(&n_inv_sqrt).dot(&v1);

    // Step two: covariance form of basis integrals in the intermediate basis.
    let c = kernel.matrix(&grid);
    let interw = &inter * &w.view().insert_axis(Axis(1));
    let f = linalg::symmetrize(&interw.t().dot(&c).dot(&interw));
    let (fvals, fvecs) = linalg::eigh_ascending(&f)?;
    let fmax = fvals[k - 1];
    if !(fmax > 0.0) {
        return Err(FunRegError::SingularCovarianceForm);
    }
    let tol_null = NULL_TOLERANCE_REL * fmax;
    let pbar = fvals.iter().filter(|&&v| v < tol_null).count();
    let inflate = (k as f64).powi(-2 * q as i32);
    let fixed = fvals.mapv(|v| if v < tol_null { inflate } else { v });
    if fixed.iter().any(|&v| !(v > 0.0)) {
        return Err(FunRegError::SingularCovarianceForm);
    }
    let f_inv_sqrt = {
        let scaled = &fvecs * &fixed.mapv(|v| v.powf(-0.25));
        scaled.dot(&scaled.t())
    };

    // Final rotation: diagonalize the roughness form in the F-whitened basis.
    let m2 = linalg::symmetrize(&f_inv_sqrt.dot(&Array2::from_diag(&w1)).dot(&f_inv_sqrt));
    let (g_raw, v2) = linalg::eigh_ascending(&m2)?;
    // negatives here are eigensolver noise on the d exact zeros
    let gamma = g_raw.mapv(|v| v.max(0.0));

    let q_mat = v2.t().dot(&f_inv_sqrt).dot(&v1.t()).dot(&n_inv_sqrt);
    let installed = basis.clone().with_transform(q_mat)?;
    let cond_q = installed.transform_cond();

    // Covariance of working-basis integrals for verification and reporting.
    let work = installed.eval_matrix(&grid, 0)?;
    let workw = &work * &w.view().insert_axis(Axis(1));
    let cov_transformed = linalg::symmetrize(&workw.t().dot(&c).dot(&workw));

    Ok(DiagonalizedSystem {
        basis: installed,
        kernel: kernel.clone(),
        gamma,
        pbar,
        deriv_order: d,
        grid,
        cov_transformed,
        cond_q,
    })
}

/// Relative change of the gamma sequence when the covariance grid is
/// refined from `n_grid` to `2 n_grid`; exposes the discretization error
/// of the step-two quadrature.
pub fn refinement_report(
    basis: &SplineBasis,
    kernel: &CovKernel,
    d: usize,
    n_grid: usize,
) -> Result<RefinementReport> {
    let coarse = diagonalize(basis, kernel, d, n_grid)?;
    let fine = diagonalize(basis, kernel, d, 2 * n_grid)?;
    let mut max_rel = 0.0f64;
    for (a, b) in coarse.gamma.iter().zip(fine.gamma.iter()) {
        let denom = b.abs().max(1.0);
        max_rel = max_rel.max((a - b).abs() / denom);
    }
    Ok(RefinementReport {
        coarse_grid: n_grid,
        max_rel_gamma_change: max_rel,
        pbar_stable: coarse.pbar == fine.pbar,
    })
}

#[derive(Debug, Clone)]
pub struct RefinementReport {
    pub coarse_grid: usize,
    pub max_rel_gamma_change: f64,
    pub pbar_stable: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::KnotRule;
    use crate::processes::GpSampler;
    use ndarray::Axis;
    use rand::Rng;
    use rand::SeedableRng;

    fn system(k: usize, d: usize, kernel: CovKernel) -> DiagonalizedSystem {
        let b = SplineBasis::make_basis(k, 4, KnotRule::Uniform).unwrap();
        diagonalize(&b, &kernel, d, 512).unwrap()
    }

    #[test]
    fn transformed_forms_are_diagonal() {
        let sys = system(20, 2, CovKernel::Brownian);
        let k = sys.dof();
        // covariance form: off-diagonal entries vanish, diagonal matches pattern
        let cov = sys.cov_transformed();
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    assert!(cov[[i, j]].abs() < 1e-8, "cov[{i},{j}] = {}", cov[[i, j]]);
                }
            }
        }
        let pattern = sys.sigma_pattern();
        for i in 0..k {
            assert!(
                (cov[[i, i]] - pattern[i]).abs() < 1e-6,
                "cov[{i},{i}] = {} vs pattern {}",
                cov[[i, i]],
                pattern[i]
            );
        }
        // roughness form recomputed by quadrature on the working basis
        let (pts, wts) =
            quad::gauss_legendre_on_partition(sys.basis().breaks(), sys.basis().order() + 2);
        let ad = sys.basis().eval_matrix(&pts, 2).unwrap();
        let w = Array1::from(wts);
        let adw = &ad * &w.view().insert_axis(Axis(1));
        let rough = adw.t().dot(&ad);
        let gmax = sys.gamma()[k - 1];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    assert!(
                        rough[[i, j]].abs() < 1e-8 * gmax,
                        "rough[{i},{j}] = {}",
                        rough[[i, j]]
                    );
                } else {
                    let denom = sys.gamma()[i].max(1.0);
                    assert!(
                        (rough[[i, i]] - sys.gamma()[i]).abs() / denom < 1e-8,
                        "gamma[{i}] mismatch: {} vs {}",
                        rough[[i, i]],
                        sys.gamma()[i]
                    );
                }
            }
        }
    }

    #[test]
    fn detected_null_count_is_consistent_with_pattern() {
        // The Brownian covariance form is strictly positive definite on the
        // spline space (its smallest eigenvalue decays like K^{-2}, far
        // above the null threshold), so no direction is flagged.
        let sys = system(20, 2, CovKernel::Brownian);
        assert_eq!(sys.pbar(), 0);
        let sob = system(20, 2, CovKernel::sobolev_unit(1));
        assert_eq!(sob.pbar(), 0);
    }

    #[test]
    fn gamma_is_nonnegative_and_sorted() {
        let sys = system(24, 2, CovKernel::Brownian);
        let g = sys.gamma();
        for i in 1..g.len() {
            assert!(g[i] >= g[i - 1]);
        }
        assert!(g.iter().all(|&v| v >= 0.0));
        // the d leading entries are the roughness null space: separated
        // from the first genuine eigenvalue by many orders of magnitude
        assert!(g[0] < 1e-6 * g[2] && g[1] < 1e-6 * g[2]);
        assert!(g[2] > 0.0);
    }

    #[test]
    fn gamma_growth_meets_theory_floor() {
        let sys = system(40, 2, CovKernel::Brownian);
        let slope = sys.gamma_growth_check().unwrap();
        assert!(slope >= 5.0, "gamma slope {slope}");
        let sys1 = system(40, 1, CovKernel::Brownian);
        let slope1 = sys1.gamma_growth_check().unwrap();
        assert!(slope1 >= 3.0, "gamma slope (d=1) {slope1}");
    }

    #[test]
    fn representation_is_basis_independent() {
        let sys = system(12, 2, CovKernel::Brownian);
        let q = sys.basis().transform().unwrap().clone();
        let plain = SplineBasis::make_basis(12, 4, KnotRule::Uniform).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let grid = quad::uniform_grid(200);
        let phi = sys.basis().eval_matrix(&grid, 0).unwrap();
        let phit = plain.eval_matrix(&grid, 0).unwrap();
        for _ in 0..100 {
            let b = Array1::from_shape_fn(12, |_| rng.random::<f64>() - 0.5);
            let bt = q.t().dot(&b); // coefficients in the raw basis
            let f1 = phi.dot(&b);
            let f2 = phit.dot(&bt);
            let dev = (&f1 - &f2).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(dev < 1e-9, "pointwise deviation {dev}");
        }
    }

    #[test]
    fn norm_identities_hold() {
        let sys = system(14, 2, CovKernel::Brownian);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let b = Array1::from_shape_fn(14, |_| rng.random::<f64>() - 0.5);

        // Gamma norm vs direct quadrature of the d-th derivative.
        let (pts, wts) =
            quad::gauss_legendre_on_partition(sys.basis().breaks(), sys.basis().order() + 2);
        let ad = sys.basis().eval_matrix(&pts, 2).unwrap();
        let dvals = ad.dot(&b);
        let direct: f64 = dvals
            .iter()
            .zip(&wts)
            .map(|(v, w)| w * v * v)
            .sum();
        let viag = sys.gamma_norm_sq(&b);
        assert!(
            (direct - viag).abs() / direct.max(1e-12) < 1e-8,
            "{direct} vs {viag}"
        );

        // X norm vs Monte Carlo over sampled paths.
        let sampler = GpSampler::new(CovKernel::Brownian, 256, 77).unwrap();
        let paths = sampler.sample_paths(50_000);
        let w = Array1::from(quad::trapezoid_weights(sampler.grid()));
        let phi = sys.basis().eval_matrix(sampler.grid(), 0).unwrap();
        let beta_vals = phi.dot(&b);
        let bw = &beta_vals * &w;
        let ip = paths.dot(&bw);
        let mc: f64 = ip.iter().map(|v| v * v).sum::<f64>() / ip.len() as f64;
        let exact = sys.x_norm_sq(&b);
        assert!(
            (mc - exact).abs() / exact < 0.03,
            "MC {mc} vs diagonal form {exact}"
        );
    }

    #[test]
    fn ellipsoid_proxy_slope_in_smoothing_regime() {
        let b = SplineBasis::make_basis(400, 4, KnotRule::Uniform).unwrap();
        let sys = diagonalize(&b, &CovKernel::Brownian, 2, 1024).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut eta = 1e-14;
        while eta < 1.5e-8 {
            let proxy = crate::diagnostics::ellipsoid_complexity(sys.gamma(), eta);
            assert!(proxy <= (sys.dof() as f64).sqrt() + 1e-12);
            xs.push(eta.ln());
            ys.push(proxy.ln());
            eta *= 10.0f64.powf(0.5);
        }
        let (slope, _, _) = linalg::ols_line(&xs, &ys);
        assert!(
            (slope + 1.0 / 12.0).abs() < 0.1,
            "proxy slope {slope}, expected near -1/12"
        );
    }

    #[test]
    fn refinement_report_converges() {
        let b = SplineBasis::make_basis(16, 4, KnotRule::Uniform).unwrap();
        let rep = refinement_report(&b, &CovKernel::Brownian, 2, 256).unwrap();
        assert!(rep.pbar_stable);
        assert!(
            rep.max_rel_gamma_change < 0.05,
            "gamma drift {}",
            rep.max_rel_gamma_change
        );
    }
}
