//! Two-layer quadratic network with one output, trained as a convex program.
//!
//! The network `Ŷ = Σ_j f(XᵀW_j) v_j` with `f(z) = az² + bz + c`, unit-norm
//! first-layer weights and an `ℓ₁` penalty on the output weights has a convex
//! dual over a pair of PSD matrices `Z⁺, Z⁻`. Only `Z₁ = Z₁⁺ − Z₁⁻` (and `Z₂`
//! when `b ≠ 0`) enters the predictions, and the smallest `tr(Z₁⁺ + Z₁⁻)`
//! realizing a given `Z₁` is its nuclear norm (split `Z₁` into its positive and
//! negative spectral parts). For squared loss the dual therefore reduces to
//!
//! ```text
//! min_Z1  ½ Σ_i (⟨Z₁, a XᵢXᵢᵀ + c I⟩ − Yᵢ)² + β ‖Z₁‖_*
//! ```
//!
//! which is ordinary least squares over symmetric matrices at `β = 0` and is
//! solved by accelerated proximal gradient with eigenvalue soft-thresholding
//! for `β > 0`. The coupling between `Z₂` and `Z₁` inside the PSD blocks is
//! not captured by the nuclear norm, so `β > 0` with `b ≠ 0` is rejected.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat, Vector};
use crate::par::{self, Execution};

/// Relative singular-value floor for the least-squares design matrix.
pub const DESIGN_RANK_TOL: f64 = 1e-10;
/// Relative eigenvalue floor when counting neurons.
pub const NEURON_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QnnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("activation needs a != 0 and finite coefficients, got ({a}, {b}, {c})")]
    InvalidActivation { a: f64, b: f64, c: f64 },
    #[error(
        "quadratic map is not identifiable: {samples} samples, {unknowns} unknowns, design rank {rank}"
    )]
    Identifiability { samples: usize, unknowns: usize, rank: usize },
    #[error("proximal gradient did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
}

/// Coefficients of the activation `f(z) = az² + bz + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ActivationCoeffs {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, QnnError> {
        if a == 0.0 || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(QnnError::InvalidActivation { a, b, c });
        }
        Ok(Self { a, b, c })
    }

    /// `f(z) = z²`, the setting whose input-output map is `XᵀHX`.
    pub fn pure_quadratic() -> Self {
        Self { a: 1.0, b: 0.0, c: 0.0 }
    }

    pub fn is_pure_quadratic(&self) -> bool {
        self.a == 1.0 && self.b == 0.0 && self.c == 0.0
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.a * z * z + self.b * z + self.c
    }
}

impl Default for ActivationCoeffs {
    fn default() -> Self {
        Self::pure_quadratic()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QnnTrainingProblem {
    inputs: Vec<Vector>,
    labels: Vec<f64>,
    activation: ActivationCoeffs,
    beta: f64,
}

impl QnnTrainingProblem {
    pub fn new(
        inputs: Vec<Vector>,
        labels: Vec<f64>,
        activation: ActivationCoeffs,
        beta: f64,
    ) -> Result<Self, QnnError> {
        if inputs.is_empty() {
            return Err(QnnError::Dimension("no training samples".into()));
        }
        if inputs.len() != labels.len() {
            return Err(QnnError::Dimension(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let n = inputs[0].len();
        if n == 0 || inputs.iter().any(|x| x.len() != n) {
            return Err(QnnError::Dimension("inputs must share a nonzero dimension".into()));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(QnnError::Dimension(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self { inputs, labels, activation, beta })
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }
    pub fn len(&self) -> usize {
        self.inputs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
    pub fn activation(&self) -> ActivationCoeffs {
        self.activation
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// One hidden unit: unit-norm input weights and an output weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub w: Vector,
    pub v: f64,
}

/// A trained network in its quadratic-form representation.
#[derive(Debug, Clone, PartialEq)]
pub struct QnnModel {
    /// `n×n` when `b = c = 0` (`Ŷ = XᵀHX`), otherwise the `(n+1)×(n+1)`
    /// matrix acting on `[X; 1]`.
    pub h: Mat,
    /// `Z₁⁺ − Z₁⁻`.
    pub z1: Mat,
    /// `Z₂⁺ − Z₂⁻`; zero unless `b ≠ 0`.
    pub z2: Vector,
    pub activation: ActivationCoeffs,
    pub beta: f64,
    /// `½‖Ŷ − Y‖² + β‖Z₁‖_*`.
    pub objective: f64,
    pub data_fit: f64,
    pub nuclear_norm: f64,
    /// Normal-equation residual (`β = 0`) or proximal fixed-point residual
    /// (`β > 0`), both relative.
    pub certificate: f64,
    pub iterations: usize,
    pub neurons: Vec<Neuron>,
}

impl QnnModel {
    pub fn input_dim(&self) -> usize {
        self.z1.nrows()
    }

    pub fn is_augmented(&self) -> bool {
        self.h.nrows() != self.z1.nrows()
    }

    /// Output of the quadratic input-output map.
    pub fn predict(&self, x: &Vector) -> f64 {
        if self.is_augmented() {
            let mut xa = Vector::zeros(x.len() + 1);
            xa.rows_mut(0, x.len()).copy_from(x);
            xa[x.len()] = 1.0;
            linalg::quad_form(&self.h, &xa)
        } else {
            linalg::quad_form(&self.h, x)
        }
    }

    /// Output computed through the recovered neurons, `Σ_j f(XᵀW_j) v_j`.
    pub fn predict_neurons(&self, x: &Vector) -> f64 {
        self.neurons
            .iter()
            .map(|n| self.activation.eval(x.dot(&n.w)) * n.v)
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub exec: Execution,
    pub max_iter: usize,
    /// Relative proximal fixed-point residual accepted as converged.
    pub fixed_point_tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { exec: Execution::Parallel, max_iter: 200_000, fixed_point_tol: 1e-9 }
    }
}

/// Number of free entries of a symmetric `n×n` matrix.
pub fn sym_param_count(n: usize) -> usize {
    n * (n + 1) / 2
}

fn sym_index_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(sym_param_count(n));
    for p in 0..n {
        for q in p..n {
            out.push((p, q));
        }
    }
    out
}

/// Least-squares fit of a quadratic map to a fixed set of inputs.
///
/// The design matrix depends only on the inputs, so it is factored once and
/// reused for every label vector; policy evaluation refits the same windows
/// many times with changing labels.
#[derive(Debug, Clone)]
pub struct QuadraticRegressor {
    n: usize,
    activation: ActivationCoeffs,
    with_linear: bool,
    design: Mat,
    u_t: Mat,
    v: Mat,
    sigma_inv: Vector,
    sigma_max: f64,
}

impl QuadraticRegressor {
    pub fn new(
        inputs: &[Vector],
        activation: ActivationCoeffs,
        exec: Execution,
    ) -> Result<Self, QnnError> {
        let n = inputs.first().map(|x| x.len()).unwrap_or(0);
        if n == 0 || inputs.iter().any(|x| x.len() != n) {
            return Err(QnnError::Dimension("inputs must share a nonzero dimension".into()));
        }
        let with_linear = activation.b != 0.0;
        let design = design_matrix(inputs, activation, exec);
        let (samples, unknowns) = (design.nrows(), design.ncols());
        if samples < unknowns {
            return Err(QnnError::Identifiability { samples, unknowns, rank: samples });
        }
        let svd = design.clone().svd(true, true);
        let sigma = &svd.singular_values;
        let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
        let rank = sigma.iter().filter(|&&s| s > DESIGN_RANK_TOL * sigma_max).count();
        if sigma_max == 0.0 || rank < unknowns {
            return Err(QnnError::Identifiability { samples, unknowns, rank });
        }
        let u_t = svd.u.expect("requested U").transpose();
        let v = svd.v_t.expect("requested Vᵀ").transpose();
        let sigma_inv = sigma.map(|s| 1.0 / s);
        Ok(Self { n, activation, with_linear, design, u_t, v, sigma_inv, sigma_max })
    }

    pub fn samples(&self) -> usize {
        self.design.nrows()
    }

    /// Least-squares parameters and the relative normal-equation residual.
    fn solve(&self, labels: &Vector) -> (Vector, f64) {
        let coeffs = self.u_t.rows(0, self.sigma_inv.len()) * labels;
        let theta = &self.v * coeffs.component_mul(&self.sigma_inv);
        let residual = &self.design * &theta - labels;
        let normal = self.design.transpose() * &residual;
        let scale = self.sigma_max * labels.norm();
        let cert = if scale > 0.0 { normal.norm() / scale } else { normal.norm() };
        (theta, cert)
    }

    /// Fits `labels` at `β = 0` and returns the trained model.
    pub fn fit(&self, labels: &[f64]) -> Result<QnnModel, QnnError> {
        if labels.len() != self.samples() {
            return Err(QnnError::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                self.samples()
            )));
        }
        let y = Vector::from_column_slice(labels);
        let (theta, cert) = self.solve(&y);
        let (z1, z2) = unpack(&theta, self.n, self.with_linear);
        let residual = &self.design * &theta - &y;
        let data_fit = 0.5 * residual.norm_squared();
        assemble_model(z1, z2, self.activation, 0.0, data_fit, cert, 1)
    }

    /// Fits and returns only the symmetric `n×n` quadratic-form matrix.
    /// Valid for the pure quadratic activation.
    pub fn fit_matrix(&self, labels: &[f64]) -> Result<(Mat, f64), QnnError> {
        if labels.len() != self.samples() {
            return Err(QnnError::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                self.samples()
            )));
        }
        let (theta, cert) = self.solve(&Vector::from_column_slice(labels));
        let (z1, _) = unpack(&theta, self.n, self.with_linear);
        Ok((z1 * self.activation.a, cert))
    }
}

/// Rows of `⟨Z₁, aXXᵀ + cI⟩ + b XᵀZ₂` in the symmetric parameterization where
/// off-diagonal entries appear twice.
fn design_matrix(inputs: &[Vector], act: ActivationCoeffs, exec: Execution) -> Mat {
    let n = inputs[0].len();
    let pairs = sym_index_pairs(n);
    let with_linear = act.b != 0.0;
    let cols = pairs.len() + if with_linear { n } else { 0 };
    let rows: Vec<Vec<f64>> = par::map_slice(exec, inputs, |x| {
        let mut row = Vec::with_capacity(cols);
        for &(p, q) in &pairs {
            let dup = if p == q { 1.0 } else { 2.0 };
            let mut v = act.a * dup * x[p] * x[q];
            if p == q {
                v += act.c;
            }
            row.push(v);
        }
        if with_linear {
            row.extend(x.iter().map(|xi| act.b * xi));
        }
        row
    });
    Mat::from_fn(inputs.len(), cols, |i, j| rows[i][j])
}

fn unpack(theta: &Vector, n: usize, with_linear: bool) -> (Mat, Vector) {
    let mut z1 = Mat::zeros(n, n);
    for (idx, (p, q)) in sym_index_pairs(n).into_iter().enumerate() {
        z1[(p, q)] = theta[idx];
        z1[(q, p)] = theta[idx];
    }
    let z2 = if with_linear {
        theta.rows(sym_param_count(n), n).into_owned()
    } else {
        Vector::zeros(n)
    };
    (z1, z2)
}

fn nuclear_norm(m: &Mat) -> f64 {
    linalg::sym_eigenvalues(m).iter().map(|l| l.abs()).sum()
}

fn assemble_model(
    z1: Mat,
    z2: Vector,
    activation: ActivationCoeffs,
    beta: f64,
    data_fit: f64,
    certificate: f64,
    iterations: usize,
) -> Result<QnnModel, QnnError> {
    let n = z1.nrows();
    let nuc = nuclear_norm(&z1);
    let h = if activation.b == 0.0 && activation.c == 0.0 {
        &z1 * activation.a
    } else {
        let mut h = Mat::zeros(n + 1, n + 1);
        h.view_mut((0, 0), (n, n)).copy_from(&(&z1 * activation.a));
        let half_b = &z2 * (0.5 * activation.b);
        h.view_mut((0, n), (n, 1)).copy_from(&half_b);
        h.view_mut((n, 0), (1, n)).copy_from(&half_b.transpose());
        h[(n, n)] = activation.c * z1.trace();
        h
    };
    let neurons = if activation.b == 0.0 {
        recover_neurons(&(&z1 * activation.a), activation)?
    } else {
        Vec::new()
    };
    Ok(QnnModel {
        h,
        z1,
        z2,
        activation,
        beta,
        objective: data_fit + beta * nuc,
        data_fit,
        nuclear_norm: nuc,
        certificate,
        iterations,
        neurons,
    })
}

pub fn train_quadratic(problem: &QnnTrainingProblem) -> Result<QnnModel, QnnError> {
    train_quadratic_with(problem, &TrainOptions::default())
}

pub fn train_quadratic_with(
    problem: &QnnTrainingProblem,
    opts: &TrainOptions,
) -> Result<QnnModel, QnnError> {
    if problem.beta == 0.0 {
        let reg = QuadraticRegressor::new(&problem.inputs, problem.activation, opts.exec)?;
        return reg.fit(&problem.labels);
    }
    if problem.activation.b != 0.0 {
        return Err(QnnError::Unsupported(
            "beta > 0 requires b = 0 (nuclear-norm reformulation)".into(),
        ));
    }
    train_nuclear(problem, opts)
}

/// Accelerated proximal gradient (FISTA with adaptive restart) on
/// `½‖A(Z) − Y‖² + β‖Z‖_*`.
fn train_nuclear(problem: &QnnTrainingProblem, opts: &TrainOptions) -> Result<QnnModel, QnnError> {
    let n = problem.input_dim();
    let act = problem.activation;
    let beta = problem.beta;
    // Frobenius-orthonormal coordinates: off-diagonal features scaled by √2.
    let pairs = sym_index_pairs(n);
    let rows: Vec<Vec<f64>> = par::map_slice(opts.exec, &problem.inputs, |x| {
        pairs
            .iter()
            .map(|&(p, q)| {
                if p == q {
                    act.a * x[p] * x[p] + act.c
                } else {
                    std::f64::consts::SQRT_2 * act.a * x[p] * x[q]
                }
            })
            .collect()
    });
    let design = Mat::from_fn(rows.len(), pairs.len(), |i, j| rows[i][j]);
    let y = Vector::from_column_slice(&problem.labels);
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &y;
    let lipschitz = linalg::sym_eigenvalues(&gram).last().copied().unwrap_or(0.0);
    if lipschitz <= 0.0 {
        // All features vanish: Z = 0 is optimal.
        return assemble_model(
            Mat::zeros(n, n),
            Vector::zeros(n),
            act,
            beta,
            0.5 * y.norm_squared(),
            0.0,
            0,
        );
    }
    let step = 1.0 / lipschitz;
    let to_mat = |theta: &Vector| {
        let mut m = Mat::zeros(n, n);
        for (idx, &(p, q)) in pairs.iter().enumerate() {
            if p == q {
                m[(p, p)] = theta[idx];
            } else {
                let v = theta[idx] / std::f64::consts::SQRT_2;
                m[(p, q)] = v;
                m[(q, p)] = v;
            }
        }
        m
    };
    let to_vec = |m: &Mat| {
        Vector::from_iterator(
            pairs.len(),
            pairs.iter().map(|&(p, q)| {
                if p == q {
                    m[(p, p)]
                } else {
                    std::f64::consts::SQRT_2 * m[(p, q)]
                }
            }),
        )
    };
    let grad = |theta: &Vector| &gram * theta - &rhs;
    let objective = |theta: &Vector| {
        let r = &design * theta - &y;
        0.5 * r.norm_squared() + beta * nuclear_norm(&to_mat(theta))
    };
    let prox = |theta: &Vector, t: f64| to_vec(&soft_threshold_spectrum(&to_mat(theta), t));
    let fixed_point_residual = |theta: &Vector| {
        let moved = prox(&(theta - grad(theta) * step), beta * step);
        (&moved - theta).norm() / theta.norm().max(1.0)
    };

    let mut x = Vector::zeros(pairs.len());
    let mut x_prev = x.clone();
    let mut t = 1.0f64;
    let mut obj = objective(&x);
    let mut residual = fixed_point_residual(&x);
    for it in 1..=opts.max_iter {
        let momentum = (t - 1.0) / (0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()));
        let yk = &x + (&x - &x_prev) * momentum;
        let mut candidate = prox(&(&yk - grad(&yk) * step), beta * step);
        let mut cand_obj = objective(&candidate);
        t = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if cand_obj > obj {
            // restart from a plain proximal step, which never increases the objective
            t = 1.0;
            candidate = prox(&(&x - grad(&x) * step), beta * step);
            cand_obj = objective(&candidate);
        }
        x_prev = std::mem::replace(&mut x, candidate);
        obj = cand_obj;
        residual = fixed_point_residual(&x);
        if residual < opts.fixed_point_tol {
            let z1 = to_mat(&x);
            let r = &design * &x - &y;
            return assemble_model(z1, Vector::zeros(n), act, beta, 0.5 * r.norm_squared(), residual, it);
        }
    }
    Err(QnnError::NonConvergence { iterations: opts.max_iter, residual })
}

/// `Q max(|Λ| − t, 0) sign(Λ) Qᵀ`, the proximal map of `t‖·‖_*` on symmetric
/// matrices.
pub fn soft_threshold_spectrum(m: &Mat, t: f64) -> Mat {
    let eig = SymmetricEigen::new(linalg::symmetrize(m));
    let shrunk = eig
        .eigenvalues
        .map(|l| l.signum() * (l.abs() - t).max(0.0));
    let q = &eig.eigenvectors;
    linalg::symmetrize(&(q * Mat::from_diagonal(&shrunk) * q.transpose()))
}

/// Unit-norm neurons reproducing `aXᵀZ₁X (+ c tr Z₁)` from the spectral
/// decomposition `Z₁ = Σ λ_j q_j q_jᵀ`: `W_j = q_j`, `v_j = λ_j`.
///
/// The `H` passed here is the quadratic-form matrix (`aZ₁`), so `v_j = λ_j/a`.
pub fn recover_neurons(h: &Mat, activation: ActivationCoeffs) -> Result<Vec<Neuron>, QnnError> {
    if activation.b != 0.0 {
        return Err(QnnError::Unsupported(
            "neuron recovery needs b = 0; the linear term ties Z₂ to the neuron directions".into(),
        ));
    }
    if !h.is_square() {
        return Err(QnnError::Dimension("H must be square".into()));
    }
    let asym = linalg::asymmetry(h);
    if asym > 1e-10 * h.amax().max(1.0) {
        return Err(QnnError::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(linalg::symmetrize(h));
    let max_abs = eig.eigenvalues.amax();
    if max_abs == 0.0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    Ok(order
        .into_iter()
        .filter(|&j| eig.eigenvalues[j].abs() > NEURON_RANK_TOL * max_abs)
        .map(|j| Neuron {
            w: eig.eigenvectors.column(j).into_owned(),
            v: eig.eigenvalues[j] / activation.a,
        })
        .collect())
}

/// Symmetric value matrix over the stacked history
/// `[w_{k-1..k-n_x}; ỹ_{k-1..k-n_x}]`.
///
/// Block layout used by policy improvement, with `n_w = n_x`:
///
/// ```text
///            w_k     w_{k-1..k-n_x+1}   ỹ_{k..k-n_x+1}
/// w_k        H11     H_w                H_y
/// w_hist     H_wᵀ    H22                H23
/// y_hist     H_yᵀ    H23ᵀ               H33
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix {
    h: Mat,
    n_x: usize,
    n_y: usize,
}

impl ValueMatrix {
    pub fn new(h: Mat, n_x: usize, n_y: usize) -> Result<Self, QnnError> {
        let dim = n_x * (n_x + n_y);
        if n_x == 0 || n_y == 0 || h.nrows() != dim || h.ncols() != dim {
            return Err(QnnError::Dimension(format!(
                "value matrix is {}x{}, expected {dim}x{dim} for n_x = {n_x}, n_y = {n_y}",
                h.nrows(),
                h.ncols()
            )));
        }
        let asym = linalg::asymmetry(&h);
        if asym > 1e-10 * h.amax().max(1.0) {
            return Err(QnnError::NotSymmetric(asym));
        }
        Ok(Self { h: linalg::symmetrize(&h), n_x, n_y })
    }

    pub fn zeros(n_x: usize, n_y: usize) -> Self {
        let dim = n_x * (n_x + n_y);
        Self { h: Mat::zeros(dim, dim), n_x, n_y }
    }

    pub fn matrix(&self) -> &Mat {
        &self.h
    }
    pub fn into_matrix(self) -> Mat {
        self.h
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_y(&self) -> usize {
        self.n_y
    }
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// `M = n(n+1)/2` with `n = n_x(n_x + n_y)`.
    pub fn independent_element_count(&self) -> usize {
        independent_element_count(self.n_x, self.n_y)
    }

    fn bounds(&self) -> [(usize, usize); 3] {
        let nw = self.n_x;
        let w_end = self.n_x * nw;
        [(0, nw), (nw, w_end - nw), (w_end, self.dim() - w_end)]
    }

    fn block(&self, r: usize, c: usize) -> Mat {
        let b = self.bounds();
        self.h.view((b[r].0, b[c].0), (b[r].1, b[c].1)).into_owned()
    }

    pub fn h11(&self) -> Mat {
        self.block(0, 0)
    }
    pub fn h_w(&self) -> Mat {
        self.block(0, 1)
    }
    pub fn h_y(&self) -> Mat {
        self.block(0, 2)
    }
    pub fn h22(&self) -> Mat {
        self.block(1, 1)
    }
    pub fn h23(&self) -> Mat {
        self.block(1, 2)
    }
    pub fn h33(&self) -> Mat {
        self.block(2, 2)
    }

    /// Inverse of the partition accessors.
    pub fn from_blocks(
        blocks: [&Mat; 6],
        n_x: usize,
        n_y: usize,
    ) -> Result<Self, QnnError> {
        let mut out = Self::zeros(n_x, n_y);
        let b = out.bounds();
        let [h11, hw, hy, h22, h23, h33] = blocks;
        let layout = [(0, 0, h11), (0, 1, hw), (0, 2, hy), (1, 1, h22), (1, 2, h23), (2, 2, h33)];
        for (r, c, m) in layout {
            if m.nrows() != b[r].1 || m.ncols() != b[c].1 {
                return Err(QnnError::Dimension(format!(
                    "block ({r},{c}) is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    b[r].1,
                    b[c].1
                )));
            }
            out.h.view_mut((b[r].0, b[c].0), (b[r].1, b[c].1)).copy_from(m);
            if r != c {
                out.h.view_mut((b[c].0, b[r].0), (b[c].1, b[r].1)).copy_from(&m.transpose());
            }
        }
        Ok(out)
    }

    /// `XᵀHX`.
    pub fn eval(&self, x: &Vector) -> f64 {
        linalg::quad_form(&self.h, x)
    }

    pub fn frobenius_distance(&self, other: &ValueMatrix) -> f64 {
        (&self.h - &other.h).norm()
    }
}

pub fn independent_element_count(n_x: usize, n_y: usize) -> usize {
    sym_param_count(n_x * (n_x + n_y))
}

/// Re-labels a trained pure-quadratic model as a value matrix.
pub fn extract_mapping(model: &QnnModel, n_x: usize, n_y: usize) -> Result<ValueMatrix, QnnError> {
    if !model.activation.is_pure_quadratic() {
        return Err(QnnError::Unsupported(
            "value matrices come from the a = 1, b = c = 0 network".into(),
        ));
    }
    ValueMatrix::new(model.h.clone(), n_x, n_y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(n: usize, count: usize, seed: u64) -> Vec<Vector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn labels_for(h: &Mat, xs: &[Vector]) -> Vec<f64> {
        xs.iter().map(|x| linalg::quad_form(h, x)).collect()
    }

    #[test]
    fn identity_form_is_interpolated() {
        let xs = random_inputs(4, 30, 1);
        let ys = labels_for(&Mat::identity(4, 4), &xs);
        let prob = QnnTrainingProblem::new(xs, ys, ActivationCoeffs::pure_quadratic(), 0.0).unwrap();
        let model = train_quadratic(&prob).unwrap();
        assert!((&model.h - Mat::identity(4, 4)).amax() < 1e-8);
        assert!(model.certificate < 1e-8);
    }

    #[test]
    fn too_few_samples_is_identifiability_error() {
        let xs = random_inputs(4, 9, 2);
        let ys = vec![1.0; 9];
        let prob = QnnTrainingProblem::new(xs, ys, ActivationCoeffs::pure_quadratic(), 0.0).unwrap();
        assert!(matches!(
            train_quadratic(&prob),
            Err(QnnError::Identifiability { samples: 9, unknowns: 10, .. })
        ));
    }

    #[test]
    fn rank_deficient_inputs_are_rejected() {
        // inputs confined to a line: only one quadratic direction is observed
        let xs: Vec<Vector> = (0..50)
            .map(|i| Vector::from_vec(vec![i as f64 * 0.1, i as f64 * 0.2]))
            .collect();
        let ys = vec![0.0; 50];
        let prob = QnnTrainingProblem::new(xs, ys, ActivationCoeffs::pure_quadratic(), 0.0).unwrap();
        assert!(matches!(train_quadratic(&prob), Err(QnnError::Identifiability { rank: 1, .. })));
    }

    #[test]
    fn neurons_of_identity_and_rank_one() {
        let act = ActivationCoeffs::pure_quadratic();
        let n = recover_neurons(&Mat::identity(3, 3), act).unwrap();
        assert_eq!(n.len(), 3);
        for neuron in &n {
            assert!((neuron.v - 1.0).abs() < 1e-12);
            assert!((neuron.w.norm() - 1.0).abs() < 1e-12);
        }
        let d = Mat::from_diagonal(&Vector::from_vec(vec![2.0, 0.0, 0.0]));
        let n = recover_neurons(&d, act).unwrap();
        assert_eq!(n.len(), 1);
        assert!((n[0].v - 2.0).abs() < 1e-12);
        assert!((n[0].w[0].abs() - 1.0).abs() < 1e-12);
        assert!(recover_neurons(&Mat::zeros(2, 2), act).unwrap().is_empty());
    }

    #[test]
    fn asymmetric_h_rejected_by_neuron_recovery() {
        let h = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            recover_neurons(&h, ActivationCoeffs::pure_quadratic()),
            Err(QnnError::NotSymmetric(_))
        ));
    }

    #[test]
    fn zero_a_is_invalid() {
        assert!(ActivationCoeffs::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn augmented_map_with_general_activation() {
        // Y = 2 XᵀZX + 0.5 tr(Z) with Z = diag(1, -1, 0.5)
        let z = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1.0, 0.5]));
        let act = ActivationCoeffs::new(2.0, 0.0, 0.5).unwrap();
        let xs = random_inputs(3, 40, 3);
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 2.0 * linalg::quad_form(&z, x) + 0.5 * z.trace())
            .collect();
        let prob = QnnTrainingProblem::new(xs.clone(), ys.clone(), act, 0.0).unwrap();
        let model = train_quadratic(&prob).unwrap();
        assert!(model.is_augmented());
        assert!((&model.z1 - &z).amax() < 1e-9);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((model.predict(x) - y).abs() < 1e-9);
            assert!((model.predict_neurons(x) - y).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_term_is_fitted_when_b_nonzero() {
        let act = ActivationCoeffs::new(1.0, 1.0, 0.0).unwrap();
        let z = Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.2, -0.5]);
        let z2 = Vector::from_vec(vec![0.3, -0.7]);
        let xs = random_inputs(2, 30, 4);
        let ys: Vec<f64> = xs.iter().map(|x| linalg::quad_form(&z, x) + x.dot(&z2)).collect();
        let prob = QnnTrainingProblem::new(xs.clone(), ys.clone(), act, 0.0).unwrap();
        let model = train_quadratic(&prob).unwrap();
        assert!((&model.z2 - &z2).amax() < 1e-9);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((model.predict(x) - y).abs() < 1e-9);
        }
        let reg = QnnTrainingProblem::new(xs, ys, act, 0.1).unwrap();
        assert!(matches!(train_quadratic(&reg), Err(QnnError::Unsupported(_))));
    }

    #[test]
    fn soft_threshold_shrinks_spectrum() {
        let m = Mat::from_diagonal(&Vector::from_vec(vec![3.0, -0.5, 1.0]));
        let s = soft_threshold_spectrum(&m, 1.0);
        let ev = linalg::sym_eigenvalues(&s);
        assert!((ev[0] - 0.0).abs() < 1e-12);
        assert!((ev[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn value_matrix_partitions_for_pendulum_layout() {
        let h = Mat::from_fn(6, 6, |i, j| (i.min(j) * 10 + i.max(j)) as f64);
        let v = ValueMatrix::new(h.clone(), 2, 1).unwrap();
        assert_eq!(v.h11(), h.view((0, 0), (2, 2)).into_owned());
        assert_eq!(v.h_w(), h.view((0, 2), (2, 2)).into_owned());
        assert_eq!(v.h_y(), h.view((0, 4), (2, 2)).into_owned());
        assert_eq!(v.independent_element_count(), 21);
        let back = ValueMatrix::from_blocks(
            [&v.h11(), &v.h_w(), &v.h_y(), &v.h22(), &v.h23(), &v.h33()],
            2,
            1,
        )
        .unwrap();
        assert_eq!(back, v);
        assert!(ValueMatrix::new(Mat::zeros(5, 5), 2, 1).is_err());
    }
}
