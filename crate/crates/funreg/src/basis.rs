//! Clamped B-spline bases on [0, 1]: evaluation, derivatives, Gram and
//! roughness matrices, and integration of functional covariates.
//!
//! The working basis is `phi = Q phi_tilde` where `phi_tilde` is the raw
//! clamped B-spline system and `Q` is an optional invertible transform
//! (installed by the simultaneous diagonalization). Gram/roughness
//! integrals always refer to the raw system; evaluation and covariate
//! integration apply the transform when one is installed.

use crate::error::{FunRegError, Result};
use crate::quad;
use ndarray::{Array1, Array2};

/// Knot placement rule. Only uniform interior knots are supported; a
/// general domain is handled by affine reparameterization at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotRule {
    Uniform,
}

/// Order-(degree+1) clamped B-spline system on [0, 1] with `dof` basis
/// functions.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    order: usize,
    dof: usize,
    knots: Vec<f64>,
    breaks: Vec<f64>,
    transform: Option<Array2<f64>>,
    transform_cond: f64,
}

/// Raw-basis Gram matrix and roughness matrix for a derivative order `d`.
#[derive(Debug, Clone)]
pub struct GramPair {
    /// `N = \int phi_tilde phi_tilde^T`.
    pub gram: Array2<f64>,
    /// `Gamma = \int phi_tilde^{(d)} (phi_tilde^{(d)})^T`.
    pub rough: Array2<f64>,
    pub deriv_order: usize,
}

/// Basis values together with a flag marking a derivative order at or
/// above the spline order (the derivative is identically zero there).
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub values: Array1<f64>,
    pub derivative_vanishes: bool,
}

/// Largest admissible condition number for an installed transform.
const MAX_TRANSFORM_COND: f64 = 1e12;

impl SplineBasis {
    /// Uniform clamped basis with `dof` degrees of freedom and the given
    /// order (polynomial degree + 1).
    pub fn make_basis(dof: usize, order: usize, _rule: KnotRule) -> Result<Self> {
        if order < 1 {
            return Err(FunRegError::InvalidOrder);
        }
        if dof < order {
            return Err(FunRegError::DofBelowOrder { dof, order });
        }
        let n_interior = dof - order;
        let mut knots = Vec::with_capacity(dof + order);
        knots.extend(std::iter::repeat_n(0.0, order));
        for j in 1..=n_interior {
            knots.push(j as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, order));
        let mut breaks = vec![0.0];
        for j in 1..=n_interior {
            breaks.push(j as f64 / (n_interior + 1) as f64);
        }
        breaks.push(1.0);
        Ok(Self {
            order,
            dof,
            knots,
            breaks,
            transform: None,
            transform_cond: 1.0,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn degree(&self) -> usize {
        self.order - 1
    }

    /// Full clamped knot vector (length dof + order).
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Unique knots spanning [0, 1], i.e. the quadrature partition.
    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn transform(&self) -> Option<&Array2<f64>> {
        self.transform.as_ref()
    }

    pub fn transform_cond(&self) -> f64 {
        self.transform_cond
    }

    /// Install an invertible change-of-basis matrix `Q` so that the
    /// working basis becomes `Q phi_tilde`.
    pub fn with_transform(mut self, q: Array2<f64>) -> Result<Self> {
        if q.nrows() != self.dof || q.ncols() != self.dof {
            return Err(FunRegError::DimensionMismatch(format!(
                "transform is {}x{}, basis dof is {}",
                q.nrows(),
                q.ncols(),
                self.dof
            )));
        }
        let s = crate::linalg::singular_values(&q)?;
        let (smax, smin) = (s[0], s[s.len() - 1]);
        if !(smin > 0.0) || smax / smin > MAX_TRANSFORM_COND {
            return Err(FunRegError::Linalg(format!(
                "transform condition number {:.3e} exceeds {:.1e}",
                smax / smin,
                MAX_TRANSFORM_COND
            )));
        }
        self.transform_cond = smax / smin;
        self.transform = Some(q);
        Ok(self)
    }

    /// Knot span index for `t` in [0, 1].
    fn find_span(&self, t: f64) -> usize {
        let p = self.degree();
        if t >= 1.0 {
            return self.dof - 1;
        }
        // Binary search over knots[p..=dof] for knots[i] <= t < knots[i+1].
        let (mut lo, mut hi) = (p, self.dof);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Derivatives 0..=n of the `order` basis functions that are nonzero on
    /// the span of `t`. Row k holds the k-th derivative.
    fn ders_basis_funs(&self, span: usize, t: f64, n: usize) -> Vec<Vec<f64>> {
        let p = self.degree();
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; n + 1];
        ders[0][..(p + 1)].copy_from_slice(&ndu.iter().map(|row| row[p]).collect::<Vec<_>>());
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    a[s2][j] =
                        (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                    d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n.min(p) {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Raw-basis derivative values at `t`, scattered into a dense K-vector.
    pub fn eval_raw(&self, t: f64, deriv: usize) -> Result<Array1<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(FunRegError::PointOutOfDomain(t));
        }
        let mut out = Array1::zeros(self.dof);
        if deriv >= self.order {
            return Ok(out);
        }
        let span = self.find_span(t);
        let ders = self.ders_basis_funs(span, t, deriv);
        let p = self.degree();
        for (j, &v) in ders[deriv].iter().enumerate() {
            out[span - p + j] = v;
        }
        Ok(out)
    }

    /// Working-basis values at `t`: the transform (when installed) applied
    /// to the raw derivative values. A derivative order at or above the
    /// spline order yields the zero vector with a flag rather than an error.
    pub fn eval_flagged(&self, t: f64, deriv: usize) -> Result<BasisEval> {
        let raw = self.eval_raw(t, deriv)?;
        let derivative_vanishes = deriv >= self.order;
        let values = match &self.transform {
            Some(q) => q.dot(&raw),
            None => raw,
        };
        Ok(BasisEval {
            values,
            derivative_vanishes,
        })
    }

    /// Working-basis values at `t`; rejects derivative orders >= order.
    pub fn eval(&self, t: f64, deriv: usize) -> Result<Array1<f64>> {
        if deriv >= self.order {
            return Err(FunRegError::DerivativeTooHigh {
                deriv,
                order: self.order,
            });
        }
        Ok(self.eval_flagged(t, deriv)?.values)
    }

    /// Working-basis values at many points, one row per point.
    pub fn eval_matrix(&self, ts: &[f64], deriv: usize) -> Result<Array2<f64>> {
        let raw = self.eval_matrix_raw(ts, deriv)?;
        Ok(match &self.transform {
            Some(q) => raw.dot(&q.t()),
            None => raw,
        })
    }

    /// Raw-basis values at many points, one row per point.
    pub fn eval_matrix_raw(&self, ts: &[f64], deriv: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((ts.len(), self.dof));
        if deriv >= self.order {
            return Ok(out);
        }
        let p = self.degree();
        for (i, &t) in ts.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(FunRegError::PointOutOfDomain(t));
            }
            let span = self.find_span(t);
            let ders = self.ders_basis_funs(span, t, deriv);
            for (j, &v) in ders[deriv].iter().enumerate() {
                out[[i, span - p + j]] = v;
            }
        }
        Ok(out)
    }

    /// Exact raw-basis Gram and roughness matrices by Gauss-Legendre
    /// quadrature with `order` nodes per inter-knot interval (exact for the
    /// occurring piecewise-polynomial degrees).
    pub fn gram_matrices(&self, d: usize) -> Result<GramPair> {
        self.gram_matrices_with_nodes(d, self.order)
    }

    /// Same integrals with an explicit node count; used by the quadrature
    /// exactness check.
    pub fn gram_matrices_with_nodes(&self, d: usize, nodes: usize) -> Result<GramPair> {
        if d >= self.order {
            return Err(FunRegError::DerivativeTooHigh {
                deriv: d,
                order: self.order,
            });
        }
        let (pts, wts) = quad::gauss_legendre_on_partition(&self.breaks, nodes);
        let a0 = self.eval_matrix_raw(&pts, 0)?;
        let ad = self.eval_matrix_raw(&pts, d)?;
        let w = Array1::from(wts);
        let a0w = &a0 * &w.view().insert_axis(ndarray::Axis(1));
        let adw = &ad * &w.view().insert_axis(ndarray::Axis(1));
        let gram = crate::linalg::symmetrize(&a0w.t().dot(&a0));
        let rough = crate::linalg::symmetrize(&adw.t().dot(&ad));
        Ok(GramPair {
            gram,
            rough,
            deriv_order: d,
        })
    }

    /// `\int phi_tilde_k dt` for every k (exact).
    pub fn integral_raw(&self) -> Array1<f64> {
        let (pts, wts) = quad::gauss_legendre_on_partition(&self.breaks, self.order);
        let a0 = self
            .eval_matrix_raw(&pts, 0)
            .expect("quadrature points lie inside the domain");
        let w = Array1::from(wts);
        a0.t().dot(&w)
    }

    /// `\int x(t) phi(t) dt` for a curve supplied as samples on a sorted
    /// grid, by the composite trapezoid rule on that grid.
    pub fn integrate_samples(&self, grid: &[f64], values: &[f64]) -> Result<Array1<f64>> {
        if grid.len() != values.len() {
            return Err(FunRegError::DimensionMismatch(format!(
                "grid has {} points, curve has {}",
                grid.len(),
                values.len()
            )));
        }
        let need = 4 * self.dof;
        if grid.len() < need {
            return Err(FunRegError::GridTooCoarse {
                got: grid.len(),
                need,
            });
        }
        let w = quad::trapezoid_weights(grid);
        let a = self.eval_matrix(grid, 0)?;
        let xw = Array1::from_iter(values.iter().zip(&w).map(|(x, wi)| x * wi));
        Ok(a.t().dot(&xw))
    }

    /// `\int x(t) phi(t) dt` for a curve supplied as a function handle, by
    /// Gauss-Legendre quadrature per knot interval.
    pub fn integrate_fn(&self, x: impl Fn(f64) -> f64) -> Array1<f64> {
        let (pts, wts) = quad::gauss_legendre_on_partition(&self.breaks, self.order + 2);
        let a = self
            .eval_matrix(&pts, 0)
            .expect("quadrature points lie inside the domain");
        let xw = Array1::from_iter(pts.iter().zip(&wts).map(|(&t, &w)| x(t) * w));
        a.t().dot(&xw)
    }

    /// Raw coefficients of the constant function 1 (solves `N b = \int phi_tilde`).
    pub fn constant_coefficients_raw(&self) -> Result<Array1<f64>> {
        let gp = self.gram_matrices(0)?;
        crate::linalg::solve_spd(&gp.gram, &self.integral_raw())
    }
}
