//! Linear design model, history-based error-state reconstruction, and the
//! discounted observer Riccati equation.
//!
//! Histories are stacked newest first everywhere in this crate: the
//! correction history is `[w_{k-1}; w_{k-2}; ...; w_{k-n_x}]` and the output
//! error history is `[ỹ_{k-1}; ...; ỹ_{k-n_x}]`.

use thiserror::Error;

use crate::linalg::{self, Mat, Vector};
use crate::qnn::ValueMatrix;

/// Smallest-to-largest singular value ratio below which the observability
/// matrix is treated as rank deficient.
pub const OBSERVABILITY_RANK_TOL: f64 = 1e-8;
pub const RICCATI_DEFAULT_TOL: f64 = 1e-12;
pub const RICCATI_DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("(A, C) is not observable: observability matrix has numeric rank {rank}, need {n_x}")]
    Unobservable { rank: usize, n_x: usize },
    #[error("invalid cost configuration: {0}")]
    InvalidCost(String),
    #[error("Riccati iteration did not converge in {iterations} iterations (residual {residual:e})")]
    RiccatiNonConvergence { iterations: usize, residual: f64 },
    #[error("singular matrix: {0}")]
    Singular(&'static str),
}

/// Discrete-time design model `x_{k+1} = A x_k + B u_k`, `y_k = C x_k`.
///
/// Construction checks dimensions and observability of `(A, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: Mat,
    b: Mat,
    c: Mat,
    sample_time: f64,
}

impl SystemModel {
    pub fn new(a: Mat, b: Mat, c: Mat, sample_time: f64) -> Result<Self, ModelError> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(ModelError::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n_x = a.nrows();
        if b.nrows() != n_x {
            return Err(ModelError::Dimension(format!(
                "B has {} rows, expected {n_x}",
                b.nrows()
            )));
        }
        if c.ncols() != n_x || c.nrows() == 0 {
            return Err(ModelError::Dimension(format!(
                "C is {}x{}, expected n_y x {n_x} with n_y >= 1",
                c.nrows(),
                c.ncols()
            )));
        }
        if !(sample_time.is_finite() && sample_time > 0.0) {
            return Err(ModelError::Dimension(format!(
                "sample_time must be positive, got {sample_time}"
            )));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::Dimension("non-finite matrix entry".into()));
        }
        let model = Self { a, b, c, sample_time };
        check_observable(&observability_matrix(&model))?;
        Ok(model)
    }

    /// The linearized pendulum used throughout the experiments
    /// (`Ts = 0.1 s`, output is the angular rate).
    pub fn linear_pendulum() -> Self {
        let a = Mat::from_row_slice(2, 2, &[0.95, 0.10, -0.98, 0.94]);
        let b = Mat::from_row_slice(2, 1, &[0.005, 0.098]);
        let c = Mat::from_row_slice(1, 2, &[0.0, 1.0]);
        Self::new(a, b, c, 0.1).expect("pendulum model is observable")
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
    /// Width of the correction term; always equal to `n_x`.
    pub fn n_w(&self) -> usize {
        self.n_x()
    }
    /// Length of the stacked history `[w_{k-1..k-n_x}; ỹ_{k-1..k-n_x}]`.
    pub fn history_dim(&self) -> usize {
        self.n_x() * (self.n_w() + self.n_y())
    }
}

/// Output-error and correction weights with the discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CostConfig {
    q: Mat,
    r: Mat,
    gamma: f64,
}

impl CostConfig {
    pub fn new(q: Mat, r: Mat, gamma: f64) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(ModelError::InvalidCost(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        for (name, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() || m.nrows() == 0 {
                return Err(ModelError::InvalidCost(format!("{name} must be square")));
            }
            if !linalg::is_symmetric(m, 1e-12) {
                return Err(ModelError::InvalidCost(format!("{name} is not symmetric")));
            }
        }
        let scale = q.amax().max(1.0);
        if linalg::sym_eigenvalues(&q)[0] < -1e-12 * scale {
            return Err(ModelError::InvalidCost("Q is not positive semidefinite".into()));
        }
        if linalg::sym_eigenvalues(&r)[0] <= 0.0 {
            return Err(ModelError::InvalidCost("R is not positive definite".into()));
        }
        Ok(Self { q, r, gamma })
    }

    /// Weights used in the pendulum experiments: `Q = 10`, `R = I₂`, `γ = 0.6`.
    pub fn pendulum_default() -> Self {
        Self::new(Mat::from_element(1, 1, 10.0), Mat::identity(2, 2), 0.6)
            .expect("valid default cost")
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn check_against(&self, model: &SystemModel) -> Result<(), ModelError> {
        if self.q.nrows() != model.n_y() {
            return Err(ModelError::Dimension(format!(
                "Q is {0}x{0}, model has n_y = {1}",
                self.q.nrows(),
                model.n_y()
            )));
        }
        if self.r.nrows() != model.n_w() {
            return Err(ModelError::Dimension(format!(
                "R is {0}x{0}, correction width is {1}",
                self.r.nrows(),
                model.n_w()
            )));
        }
        Ok(())
    }

    /// Local cost `ỹᵀQỹ + wᵀRw`.
    pub fn stage_cost(&self, y_tilde: &Vector, w: &Vector) -> f64 {
        linalg::quad_form(&self.q, y_tilde) + linalg::quad_form(&self.r, w)
    }

    /// Smallest `T` with `γ^T < 1e-8`; 1 when `γ = 0`.
    pub fn default_horizon(&self) -> usize {
        if self.gamma == 0.0 {
            return 1;
        }
        let mut t = 1usize;
        while self.gamma.powi(t as i32) >= 1e-8 {
            t += 1;
        }
        t
    }
}

/// Matrices mapping measured histories to the current estimation error.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionMatrices {
    pub observability: Mat,
    pub left_inverse: Mat,
    pub toeplitz: Mat,
    pub controllability: Mat,
    pub m_w: Mat,
    pub m_y: Mat,
}

impl ReconstructionMatrices {
    pub fn n_x(&self) -> usize {
        self.m_w.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.m_y.ncols() / self.n_x()
    }

    /// `[M_w  M_y]`, the map from the full stacked history to `x̃_k`.
    pub fn stacked(&self) -> Mat {
        let n = self.n_x();
        let (cw, cy) = (self.m_w.ncols(), self.m_y.ncols());
        let mut out = Mat::zeros(n, cw + cy);
        out.view_mut((0, 0), (n, cw)).copy_from(&self.m_w);
        out.view_mut((0, cw), (n, cy)).copy_from(&self.m_y);
        out
    }

    /// `x̃_k = M_w w_hist + M_y y_hist` with both histories newest first.
    pub fn reconstruct_error_state(
        &self,
        w_hist: &Vector,
        y_hist: &Vector,
    ) -> Result<Vector, ModelError> {
        if w_hist.len() != self.m_w.ncols() || y_hist.len() != self.m_y.ncols() {
            return Err(ModelError::Dimension(format!(
                "histories have lengths ({}, {}), expected ({}, {})",
                w_hist.len(),
                y_hist.len(),
                self.m_w.ncols(),
                self.m_y.ncols()
            )));
        }
        Ok(&self.m_w * w_hist + &self.m_y * y_hist)
    }

    /// Reconstruction from a full stacked history `[w_hist; y_hist]`.
    pub fn reconstruct_stacked(&self, history: &Vector) -> Result<Vector, ModelError> {
        let cw = self.m_w.ncols();
        if history.len() != cw + self.m_y.ncols() {
            return Err(ModelError::Dimension(format!(
                "history has length {}, expected {}",
                history.len(),
                cw + self.m_y.ncols()
            )));
        }
        let w = history.rows(0, cw).into_owned();
        let y = history.rows(cw, self.m_y.ncols()).into_owned();
        self.reconstruct_error_state(&w, &y)
    }
}

/// `[C A^{n-1}; ...; C A; C]`.
fn observability_matrix(model: &SystemModel) -> Mat {
    let (n, ny) = (model.n_x(), model.n_y());
    let mut o = Mat::zeros(n * ny, n);
    for i in 0..n {
        let block = model.c() * linalg::matrix_power(model.a(), n - 1 - i);
        o.view_mut((i * ny, 0), (ny, n)).copy_from(&block);
    }
    o
}

fn check_observable(o: &Mat) -> Result<(), ModelError> {
    let n = o.ncols();
    let rank = linalg::numerical_rank(o, OBSERVABILITY_RANK_TOL);
    if rank < n {
        return Err(ModelError::Unobservable { rank, n_x: n });
    }
    Ok(())
}

pub fn build_reconstruction(model: &SystemModel) -> Result<ReconstructionMatrices, ModelError> {
    let (n, ny, nw) = (model.n_x(), model.n_y(), model.n_w());
    let a = model.a();
    let c = model.c();

    let observability = observability_matrix(model);
    check_observable(&observability)?;

    // (OᵀO)⁻¹Oᵀ through a QR factorization: O = QR, O⁺ = R⁻¹Qᵀ.
    let qr = observability.clone().qr();
    let r = qr.r();
    let qt = qr.q().transpose();
    let left_inverse = r
        .solve_upper_triangular(&qt)
        .ok_or(ModelError::Singular("observability QR factor"))?;

    // Row block i holds ỹ_{k-1-i}, column block j holds w_{k-1-j}.
    let mut toeplitz = Mat::zeros(n * ny, n * nw);
    for i in 0..n {
        for j in (i + 1)..n {
            let block = -(c * linalg::matrix_power(a, j - i - 1));
            toeplitz.view_mut((i * ny, j * nw), (ny, nw)).copy_from(&block);
        }
    }

    let mut controllability = Mat::zeros(n, n * nw);
    for j in 0..n {
        let block = -linalg::matrix_power(a, j);
        controllability.view_mut((0, j * nw), (n, nw)).copy_from(&block);
    }

    let a_n = linalg::matrix_power(a, n);
    let m_y = &a_n * &left_inverse;
    let m_w = &controllability - &m_y * &toeplitz;

    Ok(ReconstructionMatrices {
        observability,
        left_inverse,
        toeplitz,
        controllability,
        m_w,
        m_y,
    })
}

/// Solution of `P = CᵀQC + γAᵀPA − γ²AᵀP(R+γP)⁻¹PA`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Mat,
    pub iterations: usize,
    pub residual: f64,
}

/// One application of the discounted observer Riccati map.
pub fn riccati_map(model: &SystemModel, cost: &CostConfig, p: &Mat) -> Result<Mat, ModelError> {
    let a = model.a();
    let g = cost.gamma();
    let ctqc = model.c().transpose() * cost.q() * model.c();
    let pa = p * a;
    let inner = cost.r() + p * g;
    let solved = match inner.clone().cholesky() {
        Some(ch) => ch.solve(&pa),
        None => inner
            .lu()
            .solve(&pa)
            .ok_or(ModelError::Singular("R + γP"))?,
    };
    let next = ctqc + (a.transpose() * &pa) * g - (a.transpose() * p * solved) * (g * g);
    Ok(linalg::symmetrize(&next))
}

/// Fixed-point iteration of the Riccati map from `P₀ = CᵀQC`.
pub fn solve_discounted_riccati(
    model: &SystemModel,
    cost: &CostConfig,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution, ModelError> {
    cost.check_against(model)?;
    let mut p = model.c().transpose() * cost.q() * model.c();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = riccati_map(model, cost, &p)?;
        residual = (&next - &p).norm();
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual < tol {
            return Ok(RiccatiSolution { p, iterations: it, residual });
        }
    }
    Err(ModelError::RiccatiNonConvergence { iterations: max_iter, residual })
}

/// `H* = [M_w M_y]ᵀ P [M_w M_y]`.
pub fn closed_form_value_matrix(
    p: &Mat,
    rec: &ReconstructionMatrices,
) -> Result<ValueMatrix, ModelError> {
    if p.nrows() != rec.n_x() || p.ncols() != rec.n_x() {
        return Err(ModelError::Dimension(format!(
            "P is {}x{}, reconstruction has n_x = {}",
            p.nrows(),
            p.ncols(),
            rec.n_x()
        )));
    }
    let m = rec.stacked();
    let h = linalg::symmetrize(&(m.transpose() * p * &m));
    ValueMatrix::new(h, rec.n_x(), rec.n_y())
        .map_err(|e| ModelError::Dimension(e.to_string()))
}

/// `max |λ|` over the (complex) spectrum of a square matrix.
pub fn spectral_radius(m: &Mat) -> f64 {
    assert!(m.is_square(), "spectral radius needs a square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
