//! The composite quadratic penalty `P(B) = sum_j eta_j tr(B' Pi_j1 B Pi_j2)`,
//! its gradient, the induced Q norm, and the graph specialization.

use crate::error::{FunRegError, Result};
use crate::graph::Laplacian;
use crate::linalg;
use crate::simdiag::DiagonalizedSystem;
use ndarray::{Array1, Array2, Axis};

/// Symmetric PSD factor of a penalty term, stored by structure so that
/// evaluation never materializes Kronecker products.
#[derive(Debug, Clone)]
pub enum PiMatrix {
    Identity(usize),
    Diagonal(Array1<f64>),
    Dense(Array2<f64>),
}

impl PiMatrix {
    pub fn dim(&self) -> usize {
        match self {
            PiMatrix::Identity(n) => *n,
            PiMatrix::Diagonal(d) => d.len(),
            PiMatrix::Dense(a) => a.nrows(),
        }
    }

    /// `Pi * B`.
    fn apply_left(&self, b: &Array2<f64>) -> Array2<f64> {
        match self {
            PiMatrix::Identity(_) => b.to_owned(),
            PiMatrix::Diagonal(d) => b * &d.view().insert_axis(Axis(1)),
            PiMatrix::Dense(a) => a.dot(b),
        }
    }

    /// `B * Pi`.
    fn apply_right(&self, b: &Array2<f64>) -> Array2<f64> {
        match self {
            PiMatrix::Identity(_) => b.to_owned(),
            PiMatrix::Diagonal(d) => b * &d.view().insert_axis(Axis(0)),
            PiMatrix::Dense(a) => b.dot(a),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            PiMatrix::Identity(n) => Array2::eye(*n),
            PiMatrix::Diagonal(d) => Array2::from_diag(d),
            PiMatrix::Dense(a) => a.clone(),
        }
    }

    pub fn diag_entry(&self, i: usize) -> f64 {
        match self {
            PiMatrix::Identity(_) => 1.0,
            PiMatrix::Diagonal(d) => d[i],
            PiMatrix::Dense(a) => a[[i, i]],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PiMatrix::Identity(_) => Ok(()),
            PiMatrix::Diagonal(d) => {
                if d.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    Err(FunRegError::InvalidLaplacian(
                        "diagonal penalty factor has negative or non-finite entries".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            PiMatrix::Dense(a) => {
                if a.nrows() != a.ncols() {
                    return Err(FunRegError::DimensionMismatch(
                        "penalty factor must be square".into(),
                    ));
                }
                let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                let asym = (a - &a.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if asym > 1e-10 * scale {
                    return Err(FunRegError::InvalidLaplacian(format!(
                        "penalty factor asymmetry {asym:.3e} exceeds tolerance"
                    )));
                }
                let vals = linalg::eigvalsh(a)?;
                if vals[0] < -1e-8 * scale {
                    return Err(FunRegError::InvalidLaplacian(format!(
                        "penalty factor has negative eigenvalue {:.3e}",
                        vals[0]
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One quadratic term `eta * tr(B' pi1 B pi2)`.
#[derive(Debug, Clone)]
pub struct PenaltyTerm {
    pub eta: f64,
    pub pi1: PiMatrix,
    pub pi2: PiMatrix,
}

/// Ordered list of quadratic penalty terms over a K x M coefficient
/// matrix. By convention the first term is the roughness penalty
/// `(eta1, diag(gamma), I)`.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    terms: Vec<PenaltyTerm>,
    k: usize,
    m: usize,
}

impl PenaltySpec {
    pub fn new(terms: Vec<PenaltyTerm>, k: usize, m: usize) -> Result<Self> {
        for term in &terms {
            if term.eta < 0.0 || !term.eta.is_finite() {
                return Err(FunRegError::InvalidLaplacian(format!(
                    "penalty weight {} must be finite and nonnegative",
                    term.eta
                )));
            }
            if term.pi1.dim() != k || term.pi2.dim() != m {
                return Err(FunRegError::DimensionMismatch(format!(
                    "penalty term factors are {}x{}, expected {k}x{m}",
                    term.pi1.dim(),
                    term.pi2.dim()
                )));
            }
            term.pi1.validate()?;
            term.pi2.validate()?;
        }
        Ok(Self { terms, k, m })
    }

    /// Roughness-only penalty `eta1 tr(B' Gamma B)` for M tasks.
    pub fn roughness(system: &DiagonalizedSystem, eta1: f64, m: usize) -> Result<Self> {
        Self::new(
            vec![PenaltyTerm {
                eta: eta1,
                pi1: PiMatrix::Diagonal(system.gamma().clone()),
                pi2: PiMatrix::Identity(m),
            }],
            system.dof(),
            m,
        )
    }

    /// Graph-regularized penalty: roughness, prediction-similarity and
    /// derivative-similarity terms. `tr(B Omega B' Sigma) = tr(B' Sigma B Omega)`,
    /// so the second term carries `(Sigma, Omega)` as its factor pair.
    pub fn graph(
        system: &DiagonalizedSystem,
        lap: &Laplacian,
        sigma_hat: Array2<f64>,
        eta1: f64,
        eta2: f64,
    ) -> Result<Self> {
        let gamma = PiMatrix::Diagonal(system.gamma().clone());
        let omega = PiMatrix::Dense(lap.omega().clone());
        let m = lap.n_vertices();
        Self::new(
            vec![
                PenaltyTerm {
                    eta: eta1,
                    pi1: gamma.clone(),
                    pi2: PiMatrix::Identity(m),
                },
                PenaltyTerm {
                    eta: eta2,
                    pi1: PiMatrix::Dense(sigma_hat),
                    pi2: omega.clone(),
                },
                PenaltyTerm {
                    eta: eta1 * eta2,
                    pi1: gamma,
                    pi2: omega,
                },
            ],
            system.dof(),
            m,
        )
    }

    pub fn terms(&self) -> &[PenaltyTerm] {
        &self.terms
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.k, self.m)
    }

    fn check_dims(&self, b: &Array2<f64>) -> Result<()> {
        if b.nrows() != self.k || b.ncols() != self.m {
            return Err(FunRegError::DimensionMismatch(format!(
                "coefficient matrix is {}x{}, penalty expects {}x{}",
                b.nrows(),
                b.ncols(),
                self.k,
                self.m
            )));
        }
        Ok(())
    }

    /// `sum_j eta_j tr(B' Pi_j1 B Pi_j2)`, term-wise.
    pub fn value(&self, b: &Array2<f64>) -> Result<f64> {
        self.check_dims(b)?;
        let mut total = 0.0;
        for term in &self.terms {
            if term.eta == 0.0 {
                continue;
            }
            let left = term.pi1.apply_left(b);
            let right = term.pi2.apply_right(b);
            total += term.eta * left.iter().zip(right.iter()).map(|(a, c)| a * c).sum::<f64>();
        }
        Ok(total)
    }

    /// `2 sum_j eta_j Pi_j1 B Pi_j2`.
    pub fn gradient(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dims(b)?;
        let mut grad = Array2::zeros((self.k, self.m));
        for term in &self.terms {
            if term.eta == 0.0 {
                continue;
            }
            let g = term.pi1.apply_left(&term.pi2.apply_right(b));
            grad.scaled_add(2.0 * term.eta, &g);
        }
        Ok(grad)
    }

    /// `(||B||_F^2 + P(B))^{1/2}`.
    pub fn q_norm(&self, b: &Array2<f64>) -> Result<f64> {
        let fro2: f64 = b.iter().map(|v| v * v).sum();
        Ok((fro2 + self.value(b)?.max(0.0)).sqrt())
    }

    /// The penalty operator applied to B without the leading factor 2:
    /// `sum_j eta_j Pi_j1 B Pi_j2`. Used inside normal-equation mat-vecs.
    pub fn operator_apply(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dims(b)?;
        let mut out = Array2::zeros((self.k, self.m));
        for term in &self.terms {
            if term.eta == 0.0 {
                continue;
            }
            out.scaled_add(term.eta, &term.pi1.apply_left(&term.pi2.apply_right(b)));
        }
        Ok(out)
    }

    /// Diagonal of `sum_j eta_j Pi_j2 (x) Pi_j1` in column-major vec order;
    /// feeds the Jacobi preconditioner of the graph solver.
    pub fn operator_diagonal(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.k, self.m));
        for term in &self.terms {
            for m in 0..self.m {
                let p2 = term.pi2.diag_entry(m);
                for k in 0..self.k {
                    d[[k, m]] += term.eta * term.pi1.diag_entry(k) * p2;
                }
            }
        }
        d
    }

    /// Dense `sum_j eta_j Pi_j2 (x) Pi_j1`; test oracle, K*M <= 256.
    pub fn kronecker_dense(&self) -> Result<Array2<f64>> {
        let km = self.k * self.m;
        if km > 256 {
            return Err(FunRegError::DimensionMismatch(format!(
                "refusing to materialize a {km}x{km} Kronecker matrix"
            )));
        }
        let mut out = Array2::zeros((km, km));
        for term in &self.terms {
            let p1 = term.pi1.to_dense();
            let p2 = term.pi2.to_dense();
            // column-major vec(B): entry (k + K m) x (k' + K m')
            for m1 in 0..self.m {
                for m2 in 0..self.m {
                    for k1 in 0..self.k {
                        for k2 in 0..self.k {
                            out[[k1 + self.k * m1, k2 + self.k * m2]] +=
                                term.eta * p2[[m1, m2]] * p1[[k1, k2]];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
