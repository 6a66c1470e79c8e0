//! Policy iteration on measured data.
//!
//! Each outer iteration collects a trajectory under the current policy,
//! evaluates it by the fixed-point recursion `Ĥ_i = fit(X_k ↦ Y_k(Ĥ_{i−1}))`
//! with the quadratic network as regressor, and improves the policy in closed
//! form from the blocks of the learned value matrix.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::fmt_num;
use crate::linalg::{self, Mat, Vector};
use crate::model::{spectral_radius, CostConfig, ModelError, SystemModel};
use crate::par::{self, Execution};
use crate::qnn::{
    self, ActivationCoeffs, QnnError, QnnTrainingProblem, QuadraticRegressor, TrainOptions,
    ValueMatrix,
};
use crate::sim::{
    self, CorrectionPolicy, ExcitationConfig, PendulumParams, SimError, Trajectory, Warmup, Window,
};

/// Smallest admissible singular value of `R + γH₁₁`.
pub const IMPROVEMENT_SIGMA_MIN: f64 = 1e-10;
/// Spectral-radius bound for sampled initial gains.
pub const SAMPLED_GAIN_RHO: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PiError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Qnn(#[from] QnnError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("policy evaluation did not converge in {} inner iterations (last change {:e})", .residuals.len(), .residuals.last().copied().unwrap_or(f64::NAN))]
    InnerNonConvergence { residuals: Vec<f64> },
    #[error("R + γH11 is near singular (smallest singular value {sigma_min:e})")]
    Conditioning { sigma_min: f64 },
    #[error("initial policy does not stabilize the design model: {0}")]
    NotStabilizing(String),
    #[error("only {available} usable windows, need {needed}")]
    InsufficientData { available: usize, needed: usize },
    #[error("no stabilizing gain found in {tries} draws")]
    MaxTries { tries: usize },
    #[error("trajectory under policy {outer} diverged{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Diverged { outer: usize, step: Option<usize>, partial: Box<PiRun> },
    #[error("outer iteration {outer}: {source}")]
    Outer { outer: usize, source: Box<PiError>, partial: Box<PiRun> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum H0Mode {
    #[default]
    Zero,
    /// Entries uniform in `[−scale, scale]`, then symmetrized.
    RandomSymmetric { scale: f64, seed: u64 },
}

/// What the measured-data policy applies while its history window fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WarmupMode {
    /// The initial Luenberger gain, or zero if the initial policy has none.
    #[default]
    InitialPolicy,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiConfig {
    /// Regression windows per policy evaluation.
    pub n_samples: usize,
    pub epsilon_inner: f64,
    pub epsilon_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub beta: f64,
    pub h0_mode: H0Mode,
    pub refresh_data_per_inner: bool,
    /// Fixed collection length; by default the trajectory is extended until
    /// `n_samples` usable windows exist.
    pub trajectory_steps: Option<usize>,
    /// Regress only on windows whose `w_k` was not probed, so every label is
    /// an exact Bellman identity for the policy being evaluated.
    pub exclude_probed_actions: bool,
    pub warmup: WarmupMode,
    /// Collection is declared divergent when `‖ỹ_k‖` exceeds this multiple of
    /// the initial output-error scale.
    pub boundedness_factor: f64,
}

impl Default for PiConfig {
    fn default() -> Self {
        Self {
            n_samples: 300,
            epsilon_inner: 1e-6,
            epsilon_outer: 1e-4,
            max_inner: 200,
            max_outer: 30,
            beta: 0.0,
            h0_mode: H0Mode::Zero,
            refresh_data_per_inner: false,
            trajectory_steps: None,
            exclude_probed_actions: true,
            warmup: WarmupMode::InitialPolicy,
            boundedness_factor: 1e3,
        }
    }
}

impl PiConfig {
    pub fn validate(&self, n_x: usize, n_y: usize) -> Result<(), PiError> {
        let m = qnn::independent_element_count(n_x, n_y);
        if self.beta == 0.0 && self.n_samples < m {
            return Err(PiError::Config(format!(
                "N = {} is below the {m} unknowns of the value matrix",
                self.n_samples
            )));
        }
        if !(self.epsilon_inner > 0.0 && self.epsilon_outer > 0.0) {
            return Err(PiError::Config("thresholds must be positive".into()));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(PiError::Config("iteration limits must be >= 1".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(PiError::Config("beta must be >= 0".into()));
        }
        if !(self.boundedness_factor > 1.0) {
            return Err(PiError::Config("boundedness_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// `Y_k = ỹ_kᵀQỹ_k + w_kᵀRw_k + γ X_{k+1}ᵀ H_prev X_{k+1}` for every window.
pub fn assemble_labels(
    windows: &[Window],
    h_prev: &ValueMatrix,
    cost: &CostConfig,
    exec: Execution,
) -> Result<Vec<f64>, PiError> {
    let dim = h_prev.dim();
    if let Some(w) = windows.iter().find(|w| w.x_next.len() != dim) {
        return Err(PiError::Dimension(format!(
            "window history has length {}, value matrix is {dim}x{dim}",
            w.x_next.len()
        )));
    }
    if let Some(w) = windows
        .iter()
        .find(|w| w.y_tilde.len() != cost.q().nrows() || w.w.len() != cost.r().nrows())
    {
        return Err(PiError::Dimension(format!(
            "window at k = {} does not match the cost weights",
            w.k
        )));
    }
    let g = cost.gamma();
    let h = h_prev.matrix();
    Ok(par::map_slice(exec, windows, |w| {
        cost.stage_cost(&w.y_tilde, &w.w) + g * linalg::quad_form(h, &w.x_next)
    }))
}

/// Windows used for regression: exact-label windows first, up to `n`.
pub fn select_windows(windows: Vec<Window>, exclude_probed: bool, n: usize) -> Vec<Window> {
    windows
        .into_iter()
        .filter(|w| !(exclude_probed && w.probed))
        .take(n)
        .collect()
}

/// Mean squared Bellman residual `(X_kᵀHX_k − Y_k)²` with labels built from
/// `h` itself.
pub fn bellman_residual(
    h: &ValueMatrix,
    windows: &[Window],
    cost: &CostConfig,
) -> Result<f64, PiError> {
    if windows.is_empty() {
        return Ok(0.0);
    }
    let labels = assemble_labels(windows, h, cost, Execution::Sequential)?;
    let sum: f64 = windows
        .iter()
        .zip(&labels)
        .map(|(w, y)| (h.eval(&w.x_k) - y).powi(2))
        .sum();
    Ok(sum / windows.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub h: ValueMatrix,
    /// `Ĥ_0, Ĥ_1, …, Ĥ_I`.
    pub iterates: Vec<ValueMatrix>,
    /// `‖Ĥ_i − Ĥ_{i−1}‖_F` for `i = 1..=I`.
    pub residuals: Vec<f64>,
    /// Trainer optimality certificate of the last fit.
    pub certificate: f64,
}

impl PolicyEvaluation {
    pub fn inner_iterations(&self) -> usize {
        self.residuals.len()
    }
}

pub fn initial_value_matrix(mode: H0Mode, n_x: usize, n_y: usize) -> ValueMatrix {
    match mode {
        H0Mode::Zero => ValueMatrix::zeros(n_x, n_y),
        H0Mode::RandomSymmetric { scale, seed } => {
            let dim = n_x * (n_x + n_y);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Mat::from_fn(dim, dim, |_, _| rng.random_range(-1.0..=1.0) * scale);
            ValueMatrix::new(linalg::symmetrize(&m), n_x, n_y).expect("symmetric by construction")
        }
    }
}

enum Fitter {
    LeastSquares(QuadraticRegressor),
    Nuclear { inputs: Vec<Vector>, beta: f64, exec: Execution },
}

impl Fitter {
    fn new(windows: &[Window], beta: f64, exec: Execution) -> Result<Self, PiError> {
        let inputs: Vec<Vector> = windows.iter().map(|w| w.x_k.clone()).collect();
        if beta == 0.0 {
            Ok(Self::LeastSquares(QuadraticRegressor::new(
                &inputs,
                ActivationCoeffs::pure_quadratic(),
                exec,
            )?))
        } else {
            Ok(Self::Nuclear { inputs, beta, exec })
        }
    }

    fn fit(&self, labels: Vec<f64>) -> Result<(Mat, f64), PiError> {
        match self {
            Self::LeastSquares(reg) => Ok(reg.fit_matrix(&labels)?),
            Self::Nuclear { inputs, beta, exec } => {
                let prob = QnnTrainingProblem::new(
                    inputs.clone(),
                    labels,
                    ActivationCoeffs::pure_quadratic(),
                    *beta,
                )?;
                let opts = TrainOptions { exec: *exec, ..TrainOptions::default() };
                let model = qnn::train_quadratic_with(&prob, &opts)?;
                Ok((model.h, model.certificate))
            }
        }
    }
}

/// Fixed-point evaluation on one fixed window set.
pub fn evaluate_policy(
    windows: &[Window],
    n_x: usize,
    n_y: usize,
    cost: &CostConfig,
    cfg: &PiConfig,
    exec: Execution,
) -> Result<PolicyEvaluation, PiError> {
    evaluate_with_source(windows.to_vec(), n_x, n_y, cost, cfg, exec, None)
}

type WindowSource<'a> = &'a mut dyn FnMut(usize) -> Result<Vec<Window>, PiError>;

fn evaluate_with_source(
    first: Vec<Window>,
    n_x: usize,
    n_y: usize,
    cost: &CostConfig,
    cfg: &PiConfig,
    exec: Execution,
    mut refresh: Option<WindowSource<'_>>,
) -> Result<PolicyEvaluation, PiError> {
    if first.is_empty() {
        return Err(PiError::InsufficientData { available: 0, needed: cfg.n_samples.max(1) });
    }
    let mut windows = first;
    let mut fitter = Fitter::new(&windows, cfg.beta, exec)?;
    let mut h = initial_value_matrix(cfg.h0_mode, n_x, n_y);
    let mut iterates = vec![h.clone()];
    let mut residuals = Vec::new();
    let mut certificate;
    for i in 1..=cfg.max_inner {
        if i > 1 {
            if let Some(src) = refresh.as_mut() {
                windows = src(i)?;
                fitter = Fitter::new(&windows, cfg.beta, exec)?;
            }
        }
        let labels = assemble_labels(&windows, &h, cost, exec)?;
        let (next, cert) = fitter.fit(labels)?;
        let next = ValueMatrix::new(next, n_x, n_y)?;
        let change = next.frobenius_distance(&h);
        residuals.push(change);
        certificate = cert;
        h = next;
        iterates.push(h.clone());
        if change < cfg.epsilon_inner {
            return Ok(PolicyEvaluation { h, iterates, residuals, certificate });
        }
    }
    Err(PiError::InnerNonConvergence { residuals })
}

/// `F_w = −γ(R+γH₁₁)⁻¹H_w`, `F_y = −γ(R+γH₁₁)⁻¹H_ỹ`.
pub fn improve_policy(
    h: &ValueMatrix,
    cost: &CostConfig,
    warmup: Warmup,
) -> Result<CorrectionPolicy, PiError> {
    let g = cost.gamma();
    if cost.r().nrows() != h.n_x() {
        return Err(PiError::Dimension(format!(
            "R is {}x{}, value matrix has n_w = {}",
            cost.r().nrows(),
            cost.r().ncols(),
            h.n_x()
        )));
    }
    let k = cost.r() + h.h11() * g;
    let sigma_min = linalg::singular_values(&k).last().copied().unwrap_or(0.0);
    if sigma_min <= IMPROVEMENT_SIGMA_MIN {
        return Err(PiError::Conditioning { sigma_min });
    }
    let lu = k.lu();
    let solve = |rhs: Mat| -> Result<Mat, PiError> {
        lu.solve(&rhs).ok_or(PiError::Conditioning { sigma_min })
    };
    let f_w = solve(h.h_w())? * (-g);
    let f_y = solve(h.h_y())? * (-g);
    Ok(CorrectionPolicy::measured_data(f_w, f_y, warmup)?)
}

/// Value of the improvement objective `wᵀRw + γ [w; h]ᵀ H [w; h]` where `h` is
/// the rest of `X_{k+1}` (past corrections, then output errors).
pub fn improvement_objective(h: &ValueMatrix, cost: &CostConfig, w: &Vector, rest: &Vector) -> f64 {
    let x = linalg::stack([w, rest]);
    linalg::quad_form(cost.r(), w) + cost.gamma() * h.eval(&x)
}

/// Closed-loop error dynamics of a policy on a linear model, over the state
/// `[x̃_k; w_{k-1}; …; w_{k-n_x+1}; ỹ_{k-1}; …; ỹ_{k-n_x+1}]`. Diagnostic only.
pub fn closed_loop_matrix(model: &SystemModel, policy: &CorrectionPolicy) -> Mat {
    let (n, ny) = (model.n_x(), model.n_y());
    let (a, c) = (model.a(), model.c());
    match policy {
        CorrectionPolicy::Zero => a.clone(),
        CorrectionPolicy::Luenberger { gain } => a - gain * c,
        CorrectionPolicy::MeasuredData { f_w, f_y, .. } => {
            let mw = (n - 1) * n;
            let my = (n - 1) * ny;
            let dim = n + mw + my;
            // w_k = G s_k
            let mut g = Mat::zeros(n, dim);
            g.view_mut((0, 0), (n, n)).copy_from(&(f_y.columns(0, ny) * c));
            g.view_mut((0, n), (n, mw)).copy_from(f_w);
            g.view_mut((0, n + mw), (n, my)).copy_from(&f_y.columns(ny, my));
            let mut t = Mat::zeros(dim, dim);
            t.view_mut((0, 0), (n, n)).copy_from(a);
            let top = t.view((0, 0), (n, dim)).into_owned() - &g;
            t.view_mut((0, 0), (n, dim)).copy_from(&top);
            if n > 1 {
                // shift registers
                t.view_mut((n, 0), (n, dim)).copy_from(&g);
                for i in 1..(n - 1) {
                    for d in 0..n {
                        t[(n + i * n + d, n + (i - 1) * n + d)] = 1.0;
                    }
                }
                t.view_mut((n + mw, 0), (ny, n)).copy_from(c);
                for i in 1..(n - 1) {
                    for d in 0..ny {
                        t[(n + mw + i * ny + d, n + mw + (i - 1) * ny + d)] = 1.0;
                    }
                }
            }
            t
        }
    }
}

/// Draws `L` entries uniformly from `[−2, 2]` until `ρ(A − LC) < 0.95`.
/// Returns the gain and the number of draws used.
pub fn sample_stabilizing_gain(
    model: &SystemModel,
    seed: u64,
    max_tries: usize,
) -> Result<(Mat, usize), PiError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 1..=max_tries {
        let l = Mat::from_fn(model.n_x(), model.n_y(), |_, _| rng.random_range(-2.0..=2.0));
        if spectral_radius(&(model.a() - &l * model.c())) < SAMPLED_GAIN_RHO {
            return Ok((l, t));
        }
    }
    Err(PiError::MaxTries { tries: max_tries })
}

pub fn sample_stabilizing_policy(
    model: &SystemModel,
    seed: u64,
    max_tries: usize,
) -> Result<CorrectionPolicy, PiError> {
    sample_stabilizing_gain(model, seed, max_tries)
        .map(|(gain, _)| CorrectionPolicy::Luenberger { gain })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plant {
    /// The design model itself is the plant.
    Linear,
    Pendulum(PendulumParams),
}

/// Initial condition and window used to score a policy by its truncated
/// cost-to-go. Rollouts are noiseless, and every policy (Luenberger included)
/// runs the same warm-up for the first `n_x` steps, so costs counted from
/// `start = n_x` compare policies from one common error state.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSpec {
    pub x0: Vector,
    pub xhat0: Vector,
    pub start: usize,
    pub horizon: usize,
    /// Warm-up applied to measured-data policies during the rollout.
    pub warmup: Warmup,
}

/// Everything fixed across the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PiProblem {
    pub plant: Plant,
    pub design: SystemModel,
    pub cost: CostConfig,
    /// Initial plant state and estimate for every data collection.
    pub data_x0: Vector,
    pub data_xhat0: Vector,
    pub rollout: Option<RolloutSpec>,
    /// Reference value matrix for error reporting.
    pub oracle: Option<ValueMatrix>,
}

impl PiProblem {
    fn simulate(
        &self,
        policy: &CorrectionPolicy,
        exc: &ExcitationConfig,
        x0: &Vector,
        xhat0: &Vector,
        steps: usize,
    ) -> Result<Trajectory, SimError> {
        match &self.plant {
            Plant::Linear => sim::simulate_linear(&self.design, policy, exc, x0, xhat0, steps),
            Plant::Pendulum(params) => {
                if x0.len() != 2 {
                    return Err(SimError::Dimension("pendulum state is [θ, θ̇]".into()));
                }
                sim::simulate_pendulum(params, &self.design, policy, exc, [x0[0], x0[1]], xhat0, steps)
            }
        }
    }

    /// Noiseless truncated cost-to-go of `policy` from the rollout spec.
    pub fn rollout_cost(&self, policy: &CorrectionPolicy) -> Result<Option<f64>, SimError> {
        let Some(spec) = &self.rollout else { return Ok(None) };
        let traj = self.rollout_trajectory(policy, spec)?;
        sim::truncated_cost_to_go(&traj, &self.cost, spec.start, spec.horizon).map(Some)
    }

    pub fn rollout_trajectory(
        &self,
        policy: &CorrectionPolicy,
        spec: &RolloutSpec,
    ) -> Result<Trajectory, SimError> {
        let policy =
            as_measured_data(policy, self.design.n_x(), self.design.n_y(), spec.warmup.clone());
        self.simulate(
            &policy,
            &ExcitationConfig::noiseless(),
            &spec.x0,
            &spec.xhat0,
            spec.start + spec.horizon,
        )
    }
}

/// Rewrites any policy in measured-data form with the given warm-up, so every
/// policy applies the same correction while the history fills. Luenberger
/// `w_k = Lỹ_k` becomes `F_w = 0`, `F_y = [L 0 … 0]`.
pub fn as_measured_data(
    policy: &CorrectionPolicy,
    n_x: usize,
    n_y: usize,
    warmup: Warmup,
) -> CorrectionPolicy {
    let (f_w, f_y) = match policy {
        CorrectionPolicy::MeasuredData { f_w, f_y, .. } => (f_w.clone(), f_y.clone()),
        CorrectionPolicy::Zero => (Mat::zeros(n_x, (n_x - 1) * n_x), Mat::zeros(n_x, n_x * n_y)),
        CorrectionPolicy::Luenberger { gain } => {
            let mut f_y = Mat::zeros(n_x, n_x * n_y);
            f_y.view_mut((0, 0), (n_x, n_y)).copy_from(gain);
            (Mat::zeros(n_x, (n_x - 1) * n_x), f_y)
        }
    };
    CorrectionPolicy::MeasuredData { f_w, f_y, warmup }
}

/// One evaluated policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub j: usize,
    pub policy: CorrectionPolicy,
    pub h: ValueMatrix,
    pub inner_iterations: usize,
    pub inner_residuals: Vec<f64>,
    /// `‖H^{π_j} − H^{π_{j−1}}‖_F`; absent for the first policy.
    pub h_change: Option<f64>,
    pub frob_error: Option<f64>,
    pub rel_error: Option<f64>,
    pub cost_to_go: Option<f64>,
    pub windows_used: usize,
    pub trajectory_steps: usize,
    pub certificate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiRun {
    pub seed: u64,
    pub records: Vec<OuterRecord>,
    pub converged: bool,
    /// Policy improved from the last evaluated value matrix.
    pub final_policy: Option<CorrectionPolicy>,
    pub final_cost_to_go: Option<f64>,
}

impl PiRun {
    pub fn last(&self) -> Option<&OuterRecord> {
        self.records.last()
    }

    /// `j,inner_iters,frob_Hj_minus_Hstar,rel_error,h_change,cost_to_go,windows,steps`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        let mut s = String::from(
            "j,inner_iters,frob_Hj_minus_Hstar,rel_error,h_change,cost_to_go,windows,steps\n",
        );
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.j,
                r.inner_iterations,
                opt(r.frob_error),
                opt(r.rel_error),
                opt(r.h_change),
                opt(r.cost_to_go),
                r.windows_used,
                r.trajectory_steps
            )
            .unwrap();
        }
        s
    }
}

/// Per-iteration JSON artifact: value matrix, gains and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationFile {
    pub v: u32,
    pub j: usize,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub policy: crate::io::PolicyFile,
    pub inner_iterations: usize,
    pub inner_residuals: Vec<f64>,
    pub frob_error: Option<f64>,
    pub cost_to_go: Option<f64>,
}

impl IterationFile {
    pub fn from_record(r: &OuterRecord) -> Self {
        Self {
            v: crate::io::SCHEMA_VERSION,
            j: r.j,
            h: linalg::to_rows(r.h.matrix()),
            policy: crate::io::PolicyFile::from_policy(&r.policy),
            inner_iterations: r.inner_iterations,
            inner_residuals: r.inner_residuals.clone(),
            frob_error: r.frob_error,
            cost_to_go: r.cost_to_go,
        }
    }
}

/// Independent 64-bit stream derived from a base seed and two indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Collector<'a> {
    problem: &'a PiProblem,
    cfg: &'a PiConfig,
    exc: &'a ExcitationConfig,
}

impl Collector<'_> {
    fn fraction_usable(&self) -> f64 {
        if self.cfg.exclude_probed_actions && self.exc.amplitude > 0.0 {
            1.0 - self.exc.probe_probability
        } else {
            1.0
        }
    }

    /// Trajectory and selected windows under `policy` with noise stream `seed`.
    fn collect(
        &self,
        policy: &CorrectionPolicy,
        seed: u64,
    ) -> Result<(Trajectory, Vec<Window>), PiError> {
        let n_x = self.problem.design.n_x();
        let exc = self.exc.clone().with_seed(seed);
        let n = self.cfg.n_samples;
        let frac = self.fraction_usable();
        if frac <= 0.0 {
            return Err(PiError::Config(
                "every step is probed and probed windows are excluded".into(),
            ));
        }
        let mut steps = self
            .cfg
            .trajectory_steps
            .unwrap_or(n_x + 1 + (1.2 * n as f64 / frac).ceil() as usize);
        loop {
            let traj = self.problem.simulate(
                policy,
                &exc,
                &self.problem.data_x0,
                &self.problem.data_xhat0,
                steps,
            )?;
            let windows = sim::extract_windows(&traj, n_x)?;
            let selected = select_windows(windows, self.cfg.exclude_probed_actions, n);
            // Same seed, longer run: the prefix is unchanged, so growing is
            // deterministic.
            if selected.len() >= n || self.cfg.trajectory_steps.is_some() || steps > 64 * n {
                if selected.len() < n {
                    log::warn!("only {} of {} requested windows available", selected.len(), n);
                }
                return Ok((traj, selected));
            }
            steps *= 2;
        }
    }
}

fn output_error_reference(traj: &Trajectory, n_x: usize, amplitude: f64) -> f64 {
    let early = traj
        .records
        .iter()
        .take(n_x + 1)
        .map(|r| r.y_tilde.norm())
        .fold(0.0, f64::max);
    early.max(amplitude).max(f64::EPSILON)
}

/// Runs policy iteration from `initial`.
pub fn run_policy_iteration(
    problem: &PiProblem,
    initial: &CorrectionPolicy,
    cfg: &PiConfig,
    exc: &ExcitationConfig,
    exec: Execution,
) -> Result<PiRun, PiError> {
    let (n_x, n_y) = (problem.design.n_x(), problem.design.n_y());
    cfg.validate(n_x, n_y)?;
    problem.cost.check_against(&problem.design)?;
    exc.validate()?;
    initial.check_dims(n_x, n_y)?;
    if problem.data_x0.len() != n_x || problem.data_xhat0.len() != n_x {
        return Err(PiError::Dimension("initial conditions must have n_x entries".into()));
    }
    if let Some(false) = initial.is_stabilizing(&problem.design) {
        return Err(PiError::NotStabilizing(
            "spectral radius of the closed-loop error dynamics is >= 1".into(),
        ));
    }
    let warmup = match (cfg.warmup, initial) {
        (WarmupMode::InitialPolicy, CorrectionPolicy::Luenberger { gain }) => {
            Warmup::Luenberger { gain: gain.clone() }
        }
        (WarmupMode::InitialPolicy, CorrectionPolicy::MeasuredData { warmup, .. }) => warmup.clone(),
        _ => Warmup::Zero,
    };
    let collector = Collector { problem, cfg, exc };
    let mut run = PiRun {
        seed: exc.seed,
        records: Vec::new(),
        converged: false,
        final_policy: None,
        final_cost_to_go: None,
    };
    let mut policy = initial.clone();
    for j in 0..cfg.max_outer {
        let fail = |run: &PiRun, e: PiError| match e {
            PiError::Sim(SimError::Diverged { step }) => PiError::Diverged {
                outer: j,
                step: Some(step),
                partial: Box::new(run.clone()),
            },
            e @ PiError::Diverged { .. } => e,
            other => PiError::Outer { outer: j, source: Box::new(other), partial: Box::new(run.clone()) },
        };
        let seed = derive_seed(exc.seed, j as u64, 0);
        let (traj, windows) = collector.collect(&policy, seed).map_err(|e| fail(&run, e))?;
        let reference = output_error_reference(&traj, n_x, exc.amplitude);
        if traj.max_output_error() > cfg.boundedness_factor * reference {
            return Err(PiError::Diverged { outer: j, step: None, partial: Box::new(run) });
        }
        let windows_used = windows.len();
        let mut refresh = |i: usize| -> Result<Vec<Window>, PiError> {
            collector.collect(&policy, derive_seed(exc.seed, j as u64, i as u64)).map(|(_, w)| w)
        };
        let source: Option<WindowSource<'_>> =
            if cfg.refresh_data_per_inner { Some(&mut refresh) } else { None };
        let eval = evaluate_with_source(windows, n_x, n_y, &problem.cost, cfg, exec, source)
            .map_err(|e| fail(&run, e))?;
        let cost_to_go = problem.rollout_cost(&policy).map_err(|e| fail(&run, e.into()))?;
        let h_change = run.records.last().map(|r| eval.h.frobenius_distance(&r.h));
        let (frob_error, rel_error) = match &problem.oracle {
            Some(o) => {
                let e = eval.h.frobenius_distance(o);
                let scale = o.matrix().norm();
                (Some(e), Some(if scale > 0.0 { e / scale } else { e }))
            }
            None => (None, None),
        };
        log::info!(
            "seed {} policy {j}: {} inner iterations, change {:?}, rel error {:?}, cost {:?}",
            exc.seed,
            eval.inner_iterations(),
            h_change,
            rel_error,
            cost_to_go
        );
        let next = improve_policy(&eval.h, &problem.cost, warmup.clone()).map_err(|e| fail(&run, e))?;
        run.records.push(OuterRecord {
            j,
            policy: std::mem::replace(&mut policy, next),
            h: eval.h.clone(),
            inner_iterations: eval.inner_iterations(),
            inner_residuals: eval.residuals.clone(),
            h_change,
            frob_error,
            rel_error,
            cost_to_go,
            windows_used,
            trajectory_steps: traj.len(),
            certificate: eval.certificate,
        });
        if h_change.is_some_and(|c| c < cfg.epsilon_outer) {
            run.converged = true;
            break;
        }
    }
    run.final_cost_to_go = problem.rollout_cost(&policy).map_err(|e| match e {
        SimError::Diverged { step } => PiError::Diverged {
            outer: run.records.len(),
            step: Some(step),
            partial: Box::new(run.clone()),
        },
        other => other.into(),
    })?;
    run.final_policy = Some(policy);
    Ok(run)
}

/// Independent runs, one per `(seed, initial policy)`, returned in input
/// order. Each run's noise stream is seeded by its own seed.
pub fn run_many(
    problem: &PiProblem,
    starts: &[(u64, CorrectionPolicy)],
    cfg: &PiConfig,
    exc: &ExcitationConfig,
    exec: Execution,
) -> Vec<Result<PiRun, PiError>> {
    // Inner work stays sequential inside a parallel fan-out to avoid
    // oversubscription; the results are identical either way.
    let inner = if exec.is_parallel() { Execution::Sequential } else { exec };
    par::map_slice(exec, starts, |(seed, initial)| {
        run_policy_iteration(problem, initial, cfg, &exc.clone().with_seed(*seed), inner)
    })
}
