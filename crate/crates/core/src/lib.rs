//! Data-driven synthesis of an optimal observer correction term.
//!
//! The observer runs a (possibly inaccurate) linear design model and adds a
//! correction term `w_k` computed from measured data. Policy iteration finds
//! the correction policy minimizing a discounted quadratic cost in the output
//! error and the correction effort. The value of a policy is a quadratic form
//! over stacked histories of past corrections and output errors; it is learned
//! by a two-layer quadratic network whose training is a convex program, and the
//! improved policy is read off the learned quadratic form in closed form.
//!
//! Modules:
//! - [`model`]: design model, history reconstruction, discounted Riccati oracle.
//! - [`sim`]: plant/observer simulation, probing excitation, trajectories.
//! - [`qnn`]: convex training of the quadratic network and its quadratic map.
//! - [`pi`]: policy evaluation, policy improvement, and the outer loop.
//! - [`io`]: JSON/CSV formats shared with the command line front end.
//! - [`svg`]: dependency-free line charts for the experiment artifacts.
//!
//! Data-parallel work (label assembly, feature construction, independent
//! runs) goes through [`par`], which uses rayon when the `parallel` feature is
//! enabled and plain iteration otherwise.

pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod par;
pub mod pi;
pub mod qnn;
pub mod sim;
pub mod svg;

pub use model::{
    build_reconstruction, closed_form_value_matrix, solve_discounted_riccati, spectral_radius,
    CostConfig, ModelError, ReconstructionMatrices, RiccatiSolution, SystemModel,
};
pub use par::Execution;
pub use pi::{
    assemble_labels, evaluate_policy, improve_policy, run_many, run_policy_iteration,
    sample_stabilizing_gain, sample_stabilizing_policy, H0Mode, OuterRecord, PiConfig, PiError,
    PiProblem, PiRun, Plant, PolicyEvaluation, RolloutSpec, WarmupMode,
};
pub use qnn::{
    extract_mapping, recover_neurons, train_quadratic, train_quadratic_with, ActivationCoeffs,
    Neuron, QnnError, QnnModel, QnnTrainingProblem, QuadraticRegressor, TrainOptions,
    ValueMatrix,
};
pub use sim::{
    extract_windows, simulate_linear, simulate_pendulum, truncated_cost_to_go, CorrectionPolicy,
    ExcitationConfig, InputSignal, Integrator, NoiseDistribution, PendulumParams, SimError,
    StepRecord, Trajectory, Warmup, Window,
};
