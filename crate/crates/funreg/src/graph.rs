//! Task-similarity graphs from auxiliary covariates on a manifold, and the
//! unnormalized Laplacian with its spectral growth check.

use crate::error::{FunRegError, Result};
use crate::linalg;
use crate::quad;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Sampling manifold for the auxiliary covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Manifold {
    /// Unit sphere S^mu embedded in R^{mu+1}.
    Sphere { mu: usize },
    /// Flat torus (product of mu unit circles) embedded in R^{2 mu}.
    Torus { mu: usize },
    /// Unit cube [0,1]^mu.
    EuclideanCube { mu: usize },
}

impl Manifold {
    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Manifold::Sphere { mu } | Manifold::Torus { mu } | Manifold::EuclideanCube { mu } => {
                *mu
            }
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Sphere { mu } => mu + 1,
            Manifold::Torus { mu } => 2 * mu,
            Manifold::EuclideanCube { mu } => *mu,
        }
    }
}

/// Auxiliary covariate sample: one row per task.
#[derive(Debug, Clone)]
pub struct AuxiliarySample {
    pub points: Array2<f64>,
    pub manifold: Manifold,
}

impl AuxiliarySample {
    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.manifold.intrinsic_dim()
    }
}

/// Uniform sample of `m` points on the manifold, deterministic in `seed`.
pub fn sample_manifold(manifold: Manifold, m: usize, seed: u64) -> Result<AuxiliarySample> {
    if m < 2 {
        return Err(FunRegError::InvalidLaplacian(format!(
            "need at least 2 auxiliary points, got {m}"
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let s = manifold.ambient_dim();
    let mut points = Array2::zeros((m, s));
    match manifold {
        Manifold::Sphere { mu } => {
            for i in 0..m {
                loop {
                    let mut norm2 = 0.0;
                    for j in 0..=mu {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        points[[i, j]] = z;
                        norm2 += z * z;
                    }
                    if norm2 > 1e-24 {
                        let inv = norm2.sqrt().recip();
                        for j in 0..=mu {
                            points[[i, j]] *= inv;
                        }
                        break;
                    }
                }
            }
        }
        Manifold::Torus { mu } => {
            for i in 0..m {
                for c in 0..mu {
                    let theta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                    points[[i, 2 * c]] = theta.cos();
                    points[[i, 2 * c + 1]] = theta.sin();
                }
            }
        }
        Manifold::EuclideanCube { mu } => {
            for i in 0..m {
                for j in 0..mu {
                    points[[i, j]] = rng.random();
                }
            }
        }
    }
    Ok(AuxiliarySample { points, manifold })
}

/// Compactly supported similarity kernel G on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelG {
    /// `G(u) ∝ exp(-u) 1(u in (0,1))`.
    ExpTrunc,
    /// `G(u) ∝ (1-u^2)^2 1(u in (0,1))`.
    Quartic,
}

impl KernelG {
    fn profile(&self, u: f64) -> f64 {
        if !(0.0..1.0).contains(&u) && u != 0.0 {
            return 0.0;
        }
        match self {
            KernelG::ExpTrunc => (-u).exp(),
            KernelG::Quartic => {
                let w = 1.0 - u * u;
                w * w
            }
        }
    }

    /// Normalization constant and second-moment constant in ambient
    /// dimension `s`: `c` scales the profile so the kernel integrates to 1
    /// over R^s, and `sigma_g = \int s_1^2 G(|s|) ds`. Both computed by
    /// quadrature of the radial integrals.
    pub fn constants(&self, s: usize) -> (f64, f64) {
        let surface = unit_sphere_surface(s);
        let (pts, wts) = quad::gauss_legendre_on_partition(&[0.0, 0.5, 1.0], 32);
        let mut i0 = 0.0;
        let mut i2 = 0.0;
        for (&r, &w) in pts.iter().zip(&wts) {
            let g = self.profile(r);
            i0 += w * g * r.powi(s as i32 - 1);
            i2 += w * g * r.powi(s as i32 + 1);
        }
        let c = 1.0 / (surface * i0);
        let sigma_g = c * surface * i2 / s as f64;
        (c, sigma_g)
    }
}

/// Surface area of the unit sphere S^{s-1} in R^s.
fn unit_sphere_surface(s: usize) -> f64 {
    // 2 pi^{s/2} / Gamma(s/2), unrolled through the half-integer recurrence.
    let mut gamma_half = if s % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if s % 2 == 0 { 1.0 } else { 0.5 };
    while x < s as f64 / 2.0 - 1e-12 {
        gamma_half *= x;
        x += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(s as f64 / 2.0) / gamma_half
}

/// Unnormalized graph Laplacian built from kernel-weighted distances.
#[derive(Debug, Clone)]
pub struct Laplacian {
    weights: Array2<f64>,
    degree: Array1<f64>,
    omega: Array2<f64>,
    bandwidth: f64,
    sigma_g: f64,
    kernel: KernelG,
    components: usize,
}

impl Laplacian {
    pub fn omega(&self) -> &Array2<f64> {
        &self.omega
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn degree(&self) -> &Array1<f64> {
        &self.degree
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sigma_g(&self) -> f64 {
        self.sigma_g
    }

    pub fn kernel(&self) -> KernelG {
        self.kernel
    }

    pub fn n_vertices(&self) -> usize {
        self.omega.nrows()
    }

    /// Number of connected components of the positive-weight graph.
    pub fn connected_components(&self) -> usize {
        self.components
    }

    /// True when the graph shattered into more than M/2 components; the
    /// builder keeps going but spectral conclusions are unreliable.
    pub fn is_fragmented(&self) -> bool {
        self.components > self.n_vertices() / 2
    }

    /// Discrete Dirichlet form `f' Omega f / M`.
    pub fn dirichlet_form(&self, f: &Array1<f64>) -> f64 {
        f.dot(&self.omega.dot(f)) / self.n_vertices() as f64
    }

    /// Ascending eigenvalues of Omega together with the log-log slope of
    /// `lambda_m` against `m` over `[m_lo, m_hi]` (1-based, m_lo >= 5: the
    /// leading eigenvalues sit in the constant-eigenvector regime).
    pub fn spectral_growth(&self, m_lo: usize, m_hi: usize) -> Result<(Array1<f64>, f64)> {
        let m = self.n_vertices();
        if m_lo < 5 || m_hi > m || m_lo >= m_hi {
            return Err(FunRegError::InvalidSpectralRange { m_lo, m_hi, m });
        }
        let eigs = linalg::eigvalsh(&self.omega)?;
        let mut xs = Vec::with_capacity(m_hi - m_lo + 1);
        let mut ys = Vec::with_capacity(m_hi - m_lo + 1);
        for idx in m_lo..=m_hi {
            let lam = eigs[idx - 1];
            if lam <= 0.0 {
                return Err(FunRegError::InvalidLaplacian(format!(
                    "eigenvalue {idx} is non-positive ({lam:.3e}); graph too fragmented for a growth fit"
                )));
            }
            xs.push((idx as f64).ln());
            ys.push(lam.ln());
        }
        let (slope, _, _) = linalg::ols_line(&xs, &ys);
        Ok((eigs, slope))
    }
}

/// Default bandwidth rule `h = (log M)^{zeta_mu + 1/2} / M^{1/mu}` with
/// `zeta_2 = 3/4` and `zeta_mu = 1/mu` for mu >= 3. The margin exponent
/// keeps the graph connected at moderate M while preserving `h -> 0` and
/// `h M^{1/mu} / (log M)^{zeta_mu} -> infinity`.
pub fn default_bandwidth(mu: usize, m: usize) -> f64 {
    let zeta = if mu <= 2 { 0.75 } else { 1.0 / mu as f64 };
    (m as f64).ln().powf(zeta + 0.5) / (m as f64).powf(1.0 / mu as f64)
}

/// Build the Laplacian from an auxiliary sample with the edge-weight rule
/// `w_uv = 2 G(|s_u - s_v| / h) / (sigma_G h^{mu+2} M)`.
pub fn build_laplacian(sample: &AuxiliarySample, h: f64, kernel: KernelG) -> Result<Laplacian> {
    if !(h > 0.0) {
        return Err(FunRegError::InvalidBandwidth(h));
    }
    let m = sample.n_points();
    let mu = sample.intrinsic_dim();
    let s = sample.manifold.ambient_dim();
    let (c_norm, sigma_g) = kernel.constants(s);
    let scale = 2.0 / (sigma_g * h.powi(mu as i32 + 2) * m as f64);
    let mut w = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..=i {
            let mut d2 = 0.0;
            for a in 0..s {
                let diff = sample.points[[i, a]] - sample.points[[j, a]];
                d2 += diff * diff;
            }
            let u = d2.sqrt() / h;
            let wij = if u < 1.0 { scale * c_norm * kernel.profile(u) } else { 0.0 };
            w[[i, j]] = wij;
            w[[j, i]] = wij;
        }
    }
    laplacian_from_weights_impl(w, h, sigma_g, kernel)
}

/// Wrap a pre-given symmetric nonnegative weight matrix (fixed-graph
/// setting); bandwidth metadata is set to 1.
pub fn laplacian_from_weights(w: Array2<f64>) -> Result<Laplacian> {
    if w.nrows() != w.ncols() {
        return Err(FunRegError::InvalidLaplacian(
            "weight matrix must be square".into(),
        ));
    }
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            if w[[i, j]] < -1e-12 * scale {
                return Err(FunRegError::InvalidLaplacian(format!(
                    "negative weight at ({i},{j})"
                )));
            }
            if (w[[i, j]] - w[[j, i]]).abs() > 1e-10 * scale {
                return Err(FunRegError::InvalidLaplacian(format!(
                    "weight matrix asymmetric at ({i},{j})"
                )));
            }
        }
    }
    laplacian_from_weights_impl(w, 1.0, 1.0, KernelG::ExpTrunc)
}

fn laplacian_from_weights_impl(
    w: Array2<f64>,
    h: f64,
    sigma_g: f64,
    kernel: KernelG,
) -> Result<Laplacian> {
    let m = w.nrows();
    let mut degree = Array1::zeros(m);
    for i in 0..m {
        degree[i] = w.row(i).sum();
    }
    let mut omega = -w.clone();
    for i in 0..m {
        omega[[i, i]] += degree[i];
    }
    let components = count_components(&w);
    Ok(Laplacian {
        weights: w,
        degree,
        omega,
        bandwidth: h,
        sigma_g,
        kernel,
        components,
    })
}

fn count_components(w: &Array2<f64>) -> usize {
    let m = w.nrows();
    let mut seen = vec![false; m];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..m {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for u in 0..m {
                if u != v && !seen[u] && w[[v, u]] > 0.0 {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    components
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_have_unit_norm() {
        let s = sample_manifold(Manifold::Sphere { mu: 2 }, 1000, 1).unwrap();
        for i in 0..1000 {
            let n: f64 = s.points.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_mean_is_clt_small() {
        let m = 1000;
        let s = sample_manifold(Manifold::Sphere { mu: 2 }, m, 7).unwrap();
        let mean = s.points.mean_axis(ndarray::Axis(0)).unwrap();
        let norm: f64 = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 4.0 / (m as f64).sqrt(), "mean norm {norm}");
    }

    #[test]
    fn cube_coordinates_in_unit_interval() {
        let s = sample_manifold(Manifold::EuclideanCube { mu: 1 }, 200, 3).unwrap();
        assert!(s.points.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn torus_circles_have_unit_radius() {
        let s = sample_manifold(Manifold::Torus { mu: 2 }, 50, 4).unwrap();
        for i in 0..50 {
            for c in 0..2 {
                let r = (s.points[[i, 2 * c]].powi(2) + s.points[[i, 2 * c + 1]].powi(2)).sqrt();
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn manifold_sampling_is_deterministic() {
        let a = sample_manifold(Manifold::Sphere { mu: 3 }, 64, 11).unwrap();
        let b = sample_manifold(Manifold::Sphere { mu: 3 }, 64, 11).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn weights_vanish_beyond_bandwidth() {
        let points = ndarray::array![[0.0, 0.0], [0.5, 0.0], [0.0, 0.9]];
        let sample = AuxiliarySample {
            points,
            manifold: Manifold::EuclideanCube { mu: 2 },
        };
        let lap = build_laplacian(&sample, 0.6, KernelG::ExpTrunc).unwrap();
        assert!(lap.weights()[[0, 1]] > 0.0);
        assert_eq!(lap.weights()[[0, 2]], 0.0);
        assert_eq!(lap.weights()[[1, 2]], 0.0);
    }

    #[test]
    fn two_vertex_closed_form() {
        let points = ndarray::array![[0.0], [0.3]];
        let sample = AuxiliarySample {
            points,
            manifold: Manifold::EuclideanCube { mu: 1 },
        };
        let lap = build_laplacian(&sample, 0.5, KernelG::ExpTrunc).unwrap();
        let w = lap.weights()[[0, 1]];
        assert!(w > 0.0);
        let om = lap.omega();
        assert!((om[[0, 0]] - w).abs() < 1e-12);
        assert!((om[[0, 1]] + w).abs() < 1e-12);
        let eigs = linalg::eigvalsh(om).unwrap();
        assert!(eigs[0].abs() < 1e-12 * w.max(1.0));
        assert!((eigs[1] - 2.0 * w).abs() < 1e-9 * w.max(1.0));
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let sample = sample_manifold(Manifold::Sphere { mu: 2 }, 150, 9).unwrap();
        let h = default_bandwidth(2, 150);
        let lap = build_laplacian(&sample, h, KernelG::ExpTrunc).unwrap();
        let ones = Array1::ones(150);
        let r = lap.omega().dot(&ones);
        let scale = lap.omega().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(r.iter().all(|&v| v.abs() < 1e-10 * scale.max(1.0)));
    }

    #[test]
    fn laplacian_is_psd() {
        let sample = sample_manifold(Manifold::Sphere { mu: 2 }, 120, 13).unwrap();
        let h = default_bandwidth(2, 120);
        let lap = build_laplacian(&sample, h, KernelG::Quartic).unwrap();
        let eigs = linalg::eigvalsh(lap.omega()).unwrap();
        assert!(eigs[0] >= -1e-8 * eigs[eigs.len() - 1]);
    }

    #[test]
    fn dirichlet_identity_matches_double_sum() {
        use rand::SeedableRng;
        let sample = sample_manifold(Manifold::Sphere { mu: 2 }, 60, 17).unwrap();
        let h = default_bandwidth(2, 60);
        let lap = build_laplacian(&sample, h, KernelG::ExpTrunc).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(18);
        let f = Array1::from_shape_fn(60, |_| rng.random::<f64>() - 0.5);
        let lhs = lap.dirichlet_form(&f);
        let mut rhs = 0.0;
        for v in 0..60 {
            for vp in 0..60 {
                let d = f[v] - f[vp];
                rhs += lap.weights()[[v, vp]] * d * d;
            }
        }
        rhs /= 2.0 * 60.0;
        assert!((lhs - rhs).abs() / rhs.abs().max(1e-300) < 1e-10);
    }

    #[test]
    fn first_eigenvalue_is_zero_when_connected() {
        let sample = sample_manifold(Manifold::Sphere { mu: 2 }, 200, 21).unwrap();
        let h = default_bandwidth(2, 200);
        let lap = build_laplacian(&sample, h, KernelG::ExpTrunc).unwrap();
        assert_eq!(lap.connected_components(), 1);
        let (eigs, _) = lap.spectral_growth(5, 60).unwrap();
        assert!(eigs[0].abs() < 1e-8 * eigs[eigs.len() - 1]);
    }

    #[test]
    fn bandwidth_rule_is_admissible() {
        for mu in [2usize, 3, 4] {
            let zeta = if mu == 2 { 0.75 } else { 1.0 / mu as f64 };
            let mut prev_h = f64::INFINITY;
            let mut prev_ratio = 0.0;
            for &m in &[500usize, 2000, 8000, 32000, 128_000] {
                let h = default_bandwidth(mu, m);
                let ratio = h * (m as f64).powf(1.0 / mu as f64) / (m as f64).ln().powf(zeta);
                assert!(h < prev_h, "h must shrink in M");
                assert!(ratio > prev_ratio, "h M^(1/mu) / log^zeta must grow");
                prev_h = h;
                prev_ratio = ratio;
            }
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let sample = sample_manifold(Manifold::Sphere { mu: 2 }, 30, 2).unwrap();
        assert!(build_laplacian(&sample, 0.0, KernelG::ExpTrunc).is_err());
        let lap = build_laplacian(&sample, 0.8, KernelG::ExpTrunc).unwrap();
        assert!(lap.spectral_growth(4, 20).is_err());
        assert!(lap.spectral_growth(5, 31).is_err());
        let bad = ndarray::array![[0.0, 1.0], [2.0, 0.0]];
        assert!(laplacian_from_weights(bad).is_err());
    }

    #[test]
    fn kernel_constants_are_positive_and_scale_with_dim() {
        for s in 1..=5 {
            for k in [KernelG::ExpTrunc, KernelG::Quartic] {
                let (c, sg) = k.constants(s);
                assert!(c > 0.0 && sg > 0.0);
            }
        }
        // s = 1 ExpTrunc: c * 2 * int_0^1 exp(-r) dr = 1
        let (c, _) = KernelG::ExpTrunc.constants(1);
        let want = 1.0 / (2.0 * (1.0 - (-1.0f64).exp()));
        assert!((c - want).abs() < 1e-10);
    }
}
