//! Geometry of the fixed-rank matrix manifold: SVD-form points, tangent
//! vectors, projections, the SVD-truncation retraction, geodesic
//! integration, the second fundamental form, and curvature probes.

use crate::error::{FunRegError, Result};
use crate::linalg;
use crate::penalty::PenaltySpec;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Smallest admissible R-th singular value before a rank drop is declared.
pub const RANK_FLOOR: f64 = 1e-12;

/// Rank-R matrix in compact SVD form `U diag(d) V'` with `U` K x R and
/// `V` M x R column-orthonormal and `d` strictly positive decreasing.
#[derive(Debug, Clone)]
pub struct FixedRankPoint {
    u: Array2<f64>,
    d: Array1<f64>,
    v: Array2<f64>,
}

/// Tangent vector at a fixed-rank point, parameterized as
/// `U m_core V' + u_p V' + U v_p'` with `U' u_p = 0` and `V' v_p = 0`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub m_core: Array2<f64>,
    pub u_p: Array2<f64>,
    pub v_p: Array2<f64>,
}

impl FixedRankPoint {
    /// Best rank-R approximation of a dense matrix.
    pub fn from_dense(b: &Array2<f64>, rank: usize) -> Result<Self> {
        let (k, m) = (b.nrows(), b.ncols());
        if rank == 0 || rank > k.min(m) {
            return Err(FunRegError::RankOutOfrange { rank, k, m });
        }
        let (u, s, vt) = linalg::svd_thin(b)?;
        if s[rank - 1] <= RANK_FLOOR {
            return Err(FunRegError::RankDegeneracy {
                index: rank,
                value: s[rank - 1],
            });
        }
        Ok(Self {
            u: u.slice(ndarray::s![.., ..rank]).to_owned(),
            d: s.slice(ndarray::s![..rank]).to_owned(),
            v: vt.slice(ndarray::s![..rank, ..]).t().to_owned(),
        })
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.d
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    pub fn sigma_min(&self) -> f64 {
        self.d[self.d.len() - 1]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let ud = &self.u * &self.d.view().insert_axis(ndarray::Axis(0));
        ud.dot(&self.v.t())
    }

    /// Generalized inverse `V diag(1/d) U'`.
    pub fn pseudo_inverse(&self) -> Array2<f64> {
        let vd = &self.v * &self.d.mapv(|x| 1.0 / x).view().insert_axis(ndarray::Axis(0));
        vd.dot(&self.u.t())
    }

    /// Orthonormality and positivity residuals; used by tests.
    pub fn frame_residual(&self) -> f64 {
        let r = self.rank();
        let iu = self.u.t().dot(&self.u) - Array2::<f64>::eye(r);
        let iv = self.v.t().dot(&self.v) - Array2::<f64>::eye(r);
        iu.iter()
            .chain(iv.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl TangentVector {
    pub fn zeros(point: &FixedRankPoint) -> Self {
        let (k, m) = point.shape();
        let r = point.rank();
        Self {
            m_core: Array2::zeros((r, r)),
            u_p: Array2::zeros((k, r)),
            v_p: Array2::zeros((m, r)),
        }
    }

    pub fn to_dense(&self, point: &FixedRankPoint) -> Array2<f64> {
        point.u.dot(&self.m_core).dot(&point.v.t())
            + self.u_p.dot(&point.v.t())
            + point.u.dot(&self.v_p.t())
    }

    pub fn norm_sq(&self) -> f64 {
        let s = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        s(&self.m_core) + s(&self.u_p) + s(&self.v_p)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            m_core: c * &self.m_core,
            u_p: c * &self.u_p,
            v_p: c * &self.v_p,
        }
    }

    /// Residual of the orthogonality constraints `U' u_p = 0`, `V' v_p = 0`.
    pub fn orthogonality_residual(&self, point: &FixedRankPoint) -> f64 {
        let a = point.u.t().dot(&self.u_p);
        let b = point.v.t().dot(&self.v_p);
        a.iter().chain(b.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Orthogonal projection of a dense matrix onto the tangent space.
pub fn project_tangent(point: &FixedRankPoint, x: &Array2<f64>) -> Result<TangentVector> {
    let (k, m) = point.shape();
    if x.nrows() != k || x.ncols() != m {
        return Err(FunRegError::DimensionMismatch(format!(
            "matrix is {}x{}, point is {k}x{m}",
            x.nrows(),
            x.ncols()
        )));
    }
    let xv = x.dot(&point.v);
    let xtu = x.t().dot(&point.u);
    let m_core = point.u.t().dot(&xv);
    let u_p = &xv - &point.u.dot(&m_core);
    let v_p = &xtu - &point.v.dot(&m_core.t());
    Ok(TangentVector { m_core, u_p, v_p })
}

/// Rank-R projective retraction: the best rank-R approximation of
/// `point + delta`. Second-order accurate against the exponential map.
pub fn retract(point: &FixedRankPoint, delta: &TangentVector) -> Result<FixedRankPoint> {
    let ambient = point.to_dense() + delta.to_dense(point);
    FixedRankPoint::from_dense(&ambient, point.rank())
}

/// Second fundamental form `II(d1, d2) = P_perp(d1 B+ d2 + d2 B+ d1)`,
/// a normal-space matrix.
pub fn second_fundamental_form(
    point: &FixedRankPoint,
    d1: &TangentVector,
    d2: &TangentVector,
) -> Array2<f64> {
    let pinv = point.pseudo_inverse();
    let a = d1.to_dense(point);
    let b = d2.to_dense(point);
    let sym = a.dot(&pinv).dot(&b) + b.dot(&pinv).dot(&a);
    project_normal(point, &sym)
}

/// Projection onto the normal space `(I - UU') X (I - VV')`.
pub fn project_normal(point: &FixedRankPoint, x: &Array2<f64>) -> Array2<f64> {
    let ux = point.u.t().dot(x);
    let xv = x.dot(&point.v);
    let uxv = point.u.t().dot(&xv);
    x - &point.u.dot(&ux) - &xv.dot(&point.v.t()) + &point.u.dot(&uxv).dot(&point.v.t())
}

/// Weingarten map `W_N(d) = N d' (B+)' + (B+)' d' N` for a normal
/// direction N; the adjoint of the second fundamental form.
pub fn weingarten(point: &FixedRankPoint, normal: &Array2<f64>, d: &TangentVector) -> Array2<f64> {
    let pinv_t = point.pseudo_inverse().t().to_owned();
    let dt = d.to_dense(point).t().to_owned();
    normal.dot(&dt).dot(&pinv_t) + pinv_t.dot(&dt).dot(normal)
}

/// Endpoint of the geodesic with initial velocity `delta`, integrated in
/// the ambient space with acceleration `II(v, v)` by RK4, re-projecting
/// the velocity onto the tangent space after every step.
pub fn geodesic_integrate(
    point: &FixedRankPoint,
    delta: &TangentVector,
    t_end: f64,
    n_steps: usize,
) -> Result<FixedRankPoint> {
    if n_steps == 0 || t_end == 0.0 {
        return Ok(point.clone());
    }
    let rank = point.rank();
    let h = t_end / n_steps as f64;
    let mut pos = point.to_dense();
    let mut vel = delta.to_dense(point);
    let accel = |p: &Array2<f64>, v: &Array2<f64>| -> Result<Array2<f64>> {
        let pt = FixedRankPoint::from_dense(p, rank)?;
        let tv = project_tangent(&pt, v)?;
        Ok(second_fundamental_form(&pt, &tv, &tv))
    };
    for _ in 0..n_steps {
        let k1v = accel(&pos, &vel)?;
        let k1x = vel.clone();
        let k2v = accel(&(&pos + &(0.5 * h * &k1x)), &(&vel + &(0.5 * h * &k1v)))?;
        let k2x = &vel + &(0.5 * h * &k1v);
        let k3v = accel(&(&pos + &(0.5 * h * &k2x)), &(&vel + &(0.5 * h * &k2v)))?;
        let k3x = &vel + &(0.5 * h * &k2v);
        let k4v = accel(&(&pos + &(h * &k3x)), &(&vel + &(h * &k3v)))?;
        let k4x = &vel + &(h * &k3v);
        pos = &pos + &((h / 6.0) * &(&k1x + &(2.0 * &k2x) + &(2.0 * &k3x) + &k4x));
        vel = &vel + &((h / 6.0) * &(&k1v + &(2.0 * &k2v) + &(2.0 * &k3v) + &k4v));
        // keep the state on the manifold with a tangent velocity
        let pt = FixedRankPoint::from_dense(&pos, rank)?;
        pos = pt.to_dense();
        vel = project_tangent(&pt, &vel)?.to_dense(&pt);
    }
    FixedRankPoint::from_dense(&pos, rank)
}

/// Speed profile along the integrated geodesic; constant for an exact
/// geodesic.
pub fn geodesic_speed_profile(
    point: &FixedRankPoint,
    delta: &TangentVector,
    t_end: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    let rank = point.rank();
    let h = t_end / n_steps as f64;
    let mut pos = point.to_dense();
    let mut vel = delta.to_dense(point);
    let mut speeds = vec![vel.iter().map(|v| v * v).sum::<f64>().sqrt()];
    for _ in 0..n_steps {
        let accel = |p: &Array2<f64>, v: &Array2<f64>| -> Result<Array2<f64>> {
            let pt = FixedRankPoint::from_dense(p, rank)?;
            let tv = project_tangent(&pt, v)?;
            Ok(second_fundamental_form(&pt, &tv, &tv))
        };
        let k1v = accel(&pos, &vel)?;
        let k1x = vel.clone();
        let k2v = accel(&(&pos + &(0.5 * h * &k1x)), &(&vel + &(0.5 * h * &k1v)))?;
        let k2x = &vel + &(0.5 * h * &k1v);
        let k3v = accel(&(&pos + &(0.5 * h * &k2x)), &(&vel + &(0.5 * h * &k2v)))?;
        let k3x = &vel + &(0.5 * h * &k2v);
        let k4v = accel(&(&pos + &(h * &k3x)), &(&vel + &(h * &k3v)))?;
        let k4x = &vel + &(h * &k3v);
        pos = &pos + &((h / 6.0) * &(&k1x + &(2.0 * &k2x) + &(2.0 * &k3x) + &k4x));
        vel = &vel + &((h / 6.0) * &(&k1v + &(2.0 * &k2v) + &(2.0 * &k3v) + &k4v));
        let pt = FixedRankPoint::from_dense(&pos, rank)?;
        pos = pt.to_dense();
        vel = project_tangent(&pt, &vel)?.to_dense(&pt);
        speeds.push(vel.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(speeds)
}

/// Draw a random tangent vector with independent Gaussian entries in the
/// `(m_core, u_p, v_p)` parameterization, orthogonalized against the frame.
pub fn random_tangent(point: &FixedRankPoint, rng: &mut impl Rng) -> TangentVector {
    let (k, m) = point.shape();
    let r = point.rank();
    let gauss = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    };
    let m_core = gauss(r, r, rng);
    let mut u_p = gauss(k, r, rng);
    let mut v_p = gauss(m, r, rng);
    u_p = &u_p - &point.u.dot(&point.u.t().dot(&u_p));
    v_p = &v_p - &point.v.dot(&point.v.t().dot(&v_p));
    TangentVector { m_core, u_p, v_p }
}

/// Empirical bound on the curvature constant: the maximum of
/// `Q(II(D,D)) / Q(D)^2` over random tangent directions.
pub fn curvature_bound_probe(
    point: &FixedRankPoint,
    spec: &PenaltySpec,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..n_samples.max(1) {
        let d = random_tangent(point, rng);
        let q_d = spec.q_norm(&d.to_dense(point))?;
        if q_d < 1e-14 {
            continue;
        }
        let ii = second_fundamental_form(point, &d, &d);
        let q_ii = spec.q_norm(&ii)?;
        worst = worst.max(q_ii / (q_d * q_d));
    }
    Ok(worst)
}
