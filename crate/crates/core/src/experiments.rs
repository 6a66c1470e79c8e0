//! Ready-made setups for the linear and nonlinear pendulum experiments.
//!
//! Shared by the command line front end and the acceptance tests so both run
//! the exact same configuration.

use crate::linalg::Vector;
use crate::model::{
    build_reconstruction, closed_form_value_matrix, solve_discounted_riccati, CostConfig,
    ModelError, SystemModel, RICCATI_DEFAULT_MAX_ITER, RICCATI_DEFAULT_TOL,
};
use crate::pi::{improve_policy, PiConfig, PiError, PiProblem, Plant, RolloutSpec, WarmupMode};
use crate::qnn::ValueMatrix;
use crate::sim::{CorrectionPolicy, ExcitationConfig, PendulumParams, Warmup};

/// Probing amplitude for the nonlinear pendulum. At 0.1 the learned
/// policies excite too little of the nonlinearity and collection diverges for
/// some seeds.
pub const PENDULUM_NOISE_AMPLITUDE: f64 = 0.3;

/// Closed-form optimal value matrix `H*` for a model and cost.
pub fn closed_form_h(model: &SystemModel, cost: &CostConfig) -> Result<ValueMatrix, ModelError> {
    let p = solve_discounted_riccati(model, cost, RICCATI_DEFAULT_TOL, RICCATI_DEFAULT_MAX_ITER)?;
    let rec = build_reconstruction(model)?;
    closed_form_value_matrix(&p.p, &rec)
}

/// Measured-data policy improved from `H*`; the model-based reference.
pub fn closed_form_policy(
    model: &SystemModel,
    cost: &CostConfig,
) -> Result<CorrectionPolicy, PiError> {
    let h = closed_form_h(model, cost)?;
    improve_policy(&h, cost, Warmup::Zero)
}

/// Linear pendulum: plant equals design model, data collected from
/// `x0 = [0, 0]`, `x̂0 = [−1, 1]`, scored from the same point.
pub fn linear_problem(model: SystemModel, cost: CostConfig) -> Result<PiProblem, PiError> {
    let oracle = closed_form_h(&model, &cost)?;
    let horizon = cost.default_horizon();
    let n_x = model.n_x();
    let x0 = Vector::zeros(n_x);
    let mut xhat0 = Vector::zeros(model.n_x());
    if model.n_x() == 2 {
        xhat0 = Vector::from_vec(vec![-1.0, 1.0]);
    } else {
        xhat0.fill(1.0);
    }
    Ok(PiProblem {
        plant: Plant::Linear,
        rollout: Some(RolloutSpec {
            x0: x0.clone(),
            xhat0: xhat0.clone(),
            start: n_x,
            horizon,
            warmup: Warmup::Zero,
        }),
        oracle: Some(oracle),
        design: model,
        cost,
        data_x0: x0,
        data_xhat0: xhat0,
    })
}

/// Nonlinear pendulum from `θ0 = x0[0]`, `θ̇0 = x0[1]` with a zero initial
/// estimate, observed through the linearized model.
pub fn pendulum_problem(
    params: PendulumParams,
    design: SystemModel,
    cost: CostConfig,
    x0: [f64; 2],
) -> Result<PiProblem, PiError> {
    let oracle = closed_form_h(&design, &cost)?;
    let horizon = cost.default_horizon();
    let n_x = design.n_x();
    let x0 = Vector::from_column_slice(&x0);
    let xhat0 = Vector::zeros(2);
    Ok(PiProblem {
        plant: Plant::Pendulum(params),
        rollout: Some(RolloutSpec {
            x0: x0.clone(),
            xhat0: xhat0.clone(),
            start: n_x,
            horizon,
            warmup: Warmup::Zero,
        }),
        oracle: Some(oracle),
        design,
        cost,
        data_x0: x0,
        data_xhat0: xhat0,
    })
}

pub fn linear_excitation(seed: u64) -> ExcitationConfig {
    ExcitationConfig::default().with_seed(seed)
}

pub fn pendulum_excitation(seed: u64) -> ExcitationConfig {
    ExcitationConfig { amplitude: PENDULUM_NOISE_AMPLITUDE, ..ExcitationConfig::default() }
        .with_seed(seed)
}

/// Outer iterations for the nonlinear pendulum. On nonlinear data the value
/// matrix estimates keep moving (the outer tolerance is never met) and are
/// indefinite, so long runs eventually draw a destabilizing policy.
pub const PENDULUM_MAX_OUTER: usize = 10;

pub fn pendulum_pi_config() -> PiConfig {
    PiConfig {
        warmup: WarmupMode::InitialPolicy,
        max_outer: PENDULUM_MAX_OUTER,
        ..PiConfig::default()
    }
}
