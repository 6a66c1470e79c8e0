//! Plant and observer simulation under a correction policy with probing noise.
//!
//! The observer always runs the linear design model,
//! `x̂_{k+1} = A x̂_k + B u_k + w_k`, `ŷ_k = C x̂_k`, where `w_k` is the policy
//! output plus probing noise. The plant is either the design model itself or
//! the nonlinear pendulum `θ̈ = −dθ̇ − g sin θ + u`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::fmt_num;
use crate::linalg::{Mat, Vector};
use crate::model::{spectral_radius, CostConfig, SystemModel};

/// Magnitude beyond which a state is treated as diverged even if finite.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("trajectory has {len} steps, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("window [{start}, {end}) is outside a trajectory of {len} steps")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Policy used for the first `n_x` steps while the history window fills.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Warmup {
    #[default]
    Zero,
    Luenberger { gain: Mat },
}

/// Generator of the correction term `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrectionPolicy {
    Zero,
    /// `w_k = L ỹ_k`, giving error dynamics `x̃_{k+1} = (A − LC) x̃_k`.
    Luenberger { gain: Mat },
    /// `w_k = F_w [w_{k-1}; …; w_{k-n_x+1}] + F_y [ỹ_k; …; ỹ_{k-n_x+1}]`.
    MeasuredData { f_w: Mat, f_y: Mat, warmup: Warmup },
}

impl CorrectionPolicy {
    pub fn measured_data(f_w: Mat, f_y: Mat, warmup: Warmup) -> Result<Self, SimError> {
        let n = f_w.nrows();
        if n == 0 || f_y.nrows() != n {
            return Err(SimError::Dimension("F_w and F_y need n_x >= 1 matching rows".into()));
        }
        if f_w.ncols() != (n - 1) * n {
            return Err(SimError::Dimension(format!(
                "F_w has {} columns, expected {}",
                f_w.ncols(),
                (n - 1) * n
            )));
        }
        if f_y.ncols() == 0 || !f_y.ncols().is_multiple_of(n) {
            return Err(SimError::Dimension(format!(
                "F_y has {} columns, expected a positive multiple of {n}",
                f_y.ncols()
            )));
        }
        Ok(Self::MeasuredData { f_w, f_y, warmup })
    }

    /// Verifies the policy's gains fit a model with `n_x` states and `n_y`
    /// outputs.
    pub fn check_dims(&self, n_x: usize, n_y: usize) -> Result<(), SimError> {
        let bad = |what: &str, m: &Mat, r: usize, c: usize| {
            if m.nrows() != r || m.ncols() != c {
                Err(SimError::Dimension(format!(
                    "{what} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Zero => Ok(()),
            Self::Luenberger { gain } => bad("L", gain, n_x, n_y),
            Self::MeasuredData { f_w, f_y, warmup } => {
                bad("F_w", f_w, n_x, (n_x - 1) * n_x)?;
                bad("F_y", f_y, n_x, n_x * n_y)?;
                if let Warmup::Luenberger { gain } = warmup {
                    bad("warm-up L", gain, n_x, n_y)?;
                }
                Ok(())
            }
        }
    }

    /// Spectral test on the design model where one exists: `ρ(A − LC) < 1`
    /// for Luenberger, `ρ(A) < 1` for the zero policy. `None` for
    /// measured-data policies, which are checked empirically.
    pub fn is_stabilizing(&self, model: &SystemModel) -> Option<bool> {
        match self {
            Self::Zero => Some(spectral_radius(model.a()) < 1.0),
            Self::Luenberger { gain } => {
                Some(spectral_radius(&(model.a() - gain * model.c())) < 1.0)
            }
            Self::MeasuredData { .. } => None,
        }
    }

    /// Policy output at step `k` for an `n_x`-state model. `ws` holds the
    /// applied corrections `w_0..w_{k-1}`, `ys` the output errors `ỹ_0..ỹ_k`.
    pub fn correction(&self, n_x: usize, k: usize, ws: &[Vector], ys: &[Vector]) -> Vector {
        let y_k = &ys[k];
        match self {
            Self::Zero => Vector::zeros(n_x),
            Self::Luenberger { gain } => gain * y_k,
            Self::MeasuredData { f_w, f_y, warmup } => {
                let n = f_w.nrows();
                if k < n {
                    return match warmup {
                        Warmup::Zero => Vector::zeros(n),
                        Warmup::Luenberger { gain } => gain * y_k,
                    };
                }
                let ny = y_k.len();
                let mut w_hist = Vector::zeros((n - 1) * n);
                for i in 1..n {
                    w_hist.rows_mut((i - 1) * n, n).copy_from(&ws[k - i]);
                }
                let mut y_hist = Vector::zeros(n * ny);
                for i in 0..n {
                    y_hist.rows_mut(i * ny, ny).copy_from(&ys[k - i]);
                }
                f_w * w_hist + f_y * y_hist
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    /// Uniform on `[−amp, amp]`.
    #[default]
    Uniform,
    /// Zero-mean normal with standard deviation `amp`.
    Gaussian,
}

/// Known plant input `u_k`, applied identically to every input channel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    #[default]
    Zero,
    /// `Σ_i amps[i] · sin(freqs[i] · k·Ts)` with frequencies in rad/s.
    SumOfSinusoids { freqs: Vec<f64>, amps: Vec<f64> },
    /// `±amplitude` from a 7-bit maximal-length shift register.
    Prbs { amplitude: f64 },
}

impl InputSignal {
    fn validate(&self) -> Result<(), SimError> {
        match self {
            Self::Zero => Ok(()),
            Self::SumOfSinusoids { freqs, amps } => {
                if freqs.len() != amps.len() {
                    return Err(SimError::InvalidConfig(
                        "sum_of_sinusoids needs as many amplitudes as frequencies".into(),
                    ));
                }
                if freqs.iter().chain(amps).any(|v| !v.is_finite()) {
                    return Err(SimError::InvalidConfig("non-finite input parameter".into()));
                }
                Ok(())
            }
            Self::Prbs { amplitude } if !amplitude.is_finite() => {
                Err(SimError::InvalidConfig("non-finite PRBS amplitude".into()))
            }
            Self::Prbs { .. } => Ok(()),
        }
    }

    /// The whole input sequence for `steps` samples.
    pub fn sequence(&self, steps: usize, sample_time: f64) -> Vec<f64> {
        match self {
            Self::Zero => vec![0.0; steps],
            Self::SumOfSinusoids { freqs, amps } => (0..steps)
                .map(|k| {
                    let t = k as f64 * sample_time;
                    freqs.iter().zip(amps).map(|(f, a)| a * (f * t).sin()).sum()
                })
                .collect(),
            Self::Prbs { amplitude } => {
                let mut reg: u8 = 0x7f;
                (0..steps)
                    .map(|_| {
                        let bit = ((reg >> 6) ^ (reg >> 5)) & 1;
                        reg = ((reg << 1) | bit) & 0x7f;
                        if bit == 1 {
                            *amplitude
                        } else {
                            -amplitude
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Probing noise and plant input used during data collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationConfig {
    pub amplitude: f64,
    pub distribution: NoiseDistribution,
    pub seed: u64,
    pub input_signal: InputSignal,
    /// Probability that a given step is probed. Unprobed steps apply the
    /// policy output exactly, which is what the Bellman labels need.
    pub probe_probability: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            distribution: NoiseDistribution::Uniform,
            seed: 0,
            input_signal: InputSignal::Zero,
            probe_probability: 0.5,
        }
    }
}

impl ExcitationConfig {
    /// No probing and zero input.
    pub fn noiseless() -> Self {
        Self { amplitude: 0.0, probe_probability: 0.0, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "noise amplitude must be finite and >= 0, got {}",
                self.amplitude
            )));
        }
        if !(0.0..=1.0).contains(&self.probe_probability) {
            return Err(SimError::InvalidConfig(format!(
                "probe probability must lie in [0, 1], got {}",
                self.probe_probability
            )));
        }
        self.input_signal.validate()
    }
}

struct ProbeStream {
    rng: ChaCha8Rng,
    amplitude: f64,
    probability: f64,
    normal: Option<Normal<f64>>,
}

impl ProbeStream {
    fn new(exc: &ExcitationConfig) -> Self {
        let normal = match exc.distribution {
            NoiseDistribution::Gaussian if exc.amplitude > 0.0 => {
                Some(Normal::new(0.0, exc.amplitude).expect("finite positive std"))
            }
            _ => None,
        };
        Self {
            rng: ChaCha8Rng::seed_from_u64(exc.seed),
            amplitude: exc.amplitude,
            probability: exc.probe_probability,
            normal,
        }
    }

    fn draw(&mut self, dim: usize) -> (Vector, bool) {
        if self.amplitude == 0.0 || self.probability == 0.0 {
            return (Vector::zeros(dim), false);
        }
        if self.rng.random::<f64>() >= self.probability {
            return (Vector::zeros(dim), false);
        }
        let noise = match &self.normal {
            Some(n) => Vector::from_fn(dim, |_, _| n.sample(&mut self.rng)),
            None => {
                let a = self.amplitude;
                Vector::from_fn(dim, |_, _| self.rng.random_range(-a..=a))
            }
        };
        (noise, true)
    }
}

/// One sample of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub u: Vector,
    pub y: Vector,
    pub y_hat: Vector,
    pub y_tilde: Vector,
    /// Applied correction, probing noise included.
    pub w: Vector,
    pub noise: Vector,
    pub probed: bool,
    pub x_hat: Vector,
    /// Plant state; only stored for the linear plant.
    pub x: Option<Vector>,
    /// `x − x̂`; only stored for the linear plant.
    pub x_tilde: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// Pendulum `[θ, θ̇]` per step. Diagnostics only: the learning path
    /// never reads it.
    pub diagnostic_plant_state: Option<Vec<Vector>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Largest `‖ỹ_k‖` over the run.
    pub fn max_output_error(&self) -> f64 {
        self.records.iter().map(|r| r.y_tilde.norm()).fold(0.0, f64::max)
    }

    /// CSV with one row per step; vector components are suffixed `_0.._d`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.records.first() else {
            out.push_str("k\n");
            return out;
        };
        let mut header = vec!["k".to_string()];
        let groups: [(&str, usize); 6] = [
            ("u", first.u.len()),
            ("y", first.y.len()),
            ("yhat", first.y_hat.len()),
            ("ytilde", first.y_tilde.len()),
            ("w", first.w.len()),
            ("n", first.noise.len()),
        ];
        for (name, d) in groups {
            header.extend((0..d).map(|i| format!("{name}_{i}")));
        }
        header.push("probed".into());
        header.extend((0..first.x_hat.len()).map(|i| format!("xhat_{i}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for (k, r) in self.records.iter().enumerate() {
            write!(out, "{k}").unwrap();
            for v in [&r.u, &r.y, &r.y_hat, &r.y_tilde, &r.w, &r.noise] {
                for x in v.iter() {
                    write!(out, ",{}", fmt_num(*x)).unwrap();
                }
            }
            write!(out, ",{}", u8::from(r.probed)).unwrap();
            for x in r.x_hat.iter() {
                write!(out, ",{}", fmt_num(*x)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub damping: f64,
    pub gravity_term: f64,
    pub sample_time: f64,
    pub integrator: Integrator,
    pub substeps: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            damping: 0.1,
            gravity_term: 10.0,
            sample_time: 0.1,
            integrator: Integrator::Rk4,
            substeps: 10,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(SimError::InvalidConfig("sample_time must be > 0".into()));
        }
        if self.substeps == 0 {
            return Err(SimError::InvalidConfig("substeps must be >= 1".into()));
        }
        if !(self.damping.is_finite() && self.gravity_term.is_finite()) {
            return Err(SimError::InvalidConfig("non-finite pendulum coefficient".into()));
        }
        Ok(())
    }

    fn deriv(&self, s: [f64; 2], u: f64) -> [f64; 2] {
        [s[1], -self.damping * s[1] - self.gravity_term * s[0].sin() + u]
    }

    /// Advances `[θ, θ̇]` by one sample with `u` held constant.
    pub fn step(&self, s: [f64; 2], u: f64) -> [f64; 2] {
        let h = self.sample_time / self.substeps as f64;
        let mut s = s;
        for _ in 0..self.substeps {
            s = match self.integrator {
                Integrator::Euler => {
                    let d = self.deriv(s, u);
                    [s[0] + h * d[0], s[1] + h * d[1]]
                }
                Integrator::Rk4 => {
                    let k1 = self.deriv(s, u);
                    let k2 = self.deriv([s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]], u);
                    let k3 = self.deriv([s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]], u);
                    let k4 = self.deriv([s[0] + h * k3[0], s[1] + h * k3[1]], u);
                    [
                        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                    ]
                }
            };
        }
        s
    }
}

fn is_sane(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite() && x.abs() < DIVERGENCE_LIMIT)
}

fn check_common(
    model: &SystemModel,
    policy: &CorrectionPolicy,
    exc: &ExcitationConfig,
    xhat0: &Vector,
) -> Result<(), SimError> {
    exc.validate()?;
    policy.check_dims(model.n_x(), model.n_y())?;
    if xhat0.len() != model.n_x() {
        return Err(SimError::Dimension(format!(
            "x̂0 has length {}, expected {}",
            xhat0.len(),
            model.n_x()
        )));
    }
    Ok(())
}

/// Shared observer loop. `plant_step(k, u_k)` returns the plant output
/// `y_k` before the step and advances the plant.
fn run_observer<P>(
    model: &SystemModel,
    policy: &CorrectionPolicy,
    exc: &ExcitationConfig,
    xhat0: &Vector,
    steps: usize,
    mut plant: P,
) -> Result<Vec<StepRecord>, SimError>
where
    P: FnMut(usize, &Vector) -> Result<(Vector, Option<Vector>), SimError>,
{
    let n = model.n_x();
    let inputs = exc.input_signal.sequence(steps, model.sample_time());
    let mut probes = ProbeStream::new(exc);
    let mut x_hat = xhat0.clone();
    let mut ws: Vec<Vector> = Vec::with_capacity(steps);
    let mut ys: Vec<Vector> = Vec::with_capacity(steps);
    let mut records = Vec::with_capacity(steps);
    for (k, &u_val) in inputs.iter().enumerate() {
        let u = Vector::from_element(model.n_u(), u_val);
        let (y, x) = plant(k, &u)?;
        let y_hat = model.c() * &x_hat;
        let y_tilde = &y - &y_hat;
        ys.push(y_tilde.clone());
        let policy_w = policy.correction(n, k, &ws, &ys);
        let (noise, probed) = probes.draw(n);
        let w = policy_w + &noise;
        if !(is_sane(&y) && is_sane(&w) && is_sane(&x_hat)) {
            return Err(SimError::Diverged { step: k });
        }
        let next_hat = model.a() * &x_hat + model.b() * &u + &w;
        let x_tilde = x.as_ref().map(|x| x - &x_hat);
        ws.push(w.clone());
        records.push(StepRecord {
            u,
            y,
            y_hat,
            y_tilde,
            w,
            noise,
            probed,
            x_hat: std::mem::replace(&mut x_hat, next_hat),
            x,
            x_tilde,
        });
    }
    Ok(records)
}

/// Linear plant `x_{k+1} = A x_k + B u_k`, `y_k = C x_k`, observed by the same
/// model.
pub fn simulate_linear(
    model: &SystemModel,
    policy: &CorrectionPolicy,
    exc: &ExcitationConfig,
    x0: &Vector,
    xhat0: &Vector,
    steps: usize,
) -> Result<Trajectory, SimError> {
    check_common(model, policy, exc, xhat0)?;
    if x0.len() != model.n_x() {
        return Err(SimError::Dimension(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            model.n_x()
        )));
    }
    let mut x = x0.clone();
    let records = run_observer(model, policy, exc, xhat0, steps, |k, u| {
        if !is_sane(&x) {
            return Err(SimError::Diverged { step: k });
        }
        let y = model.c() * &x;
        let current = x.clone();
        x = model.a() * &x + model.b() * u;
        Ok((y, Some(current)))
    })?;
    Ok(Trajectory { records, diagnostic_plant_state: None })
}

/// Nonlinear pendulum plant observed through the linear design model. The
/// measured output is `C [θ; θ̇]` with the design model's `C`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_pendulum(
    params: &PendulumParams,
    design: &SystemModel,
    policy: &CorrectionPolicy,
    exc: &ExcitationConfig,
    x0: [f64; 2],
    xhat0: &Vector,
    steps: usize,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    if design.n_x() != 2 || design.n_u() != 1 {
        return Err(SimError::Dimension(
            "pendulum design model needs two states and one input".into(),
        ));
    }
    check_common(design, policy, exc, xhat0)?;
    let mut s = x0;
    let mut states = Vec::with_capacity(steps);
    let records = run_observer(design, policy, exc, xhat0, steps, |k, u| {
        let sv = Vector::from_column_slice(&s);
        if !is_sane(&sv) {
            return Err(SimError::Diverged { step: k });
        }
        let y = design.c() * &sv;
        states.push(sv);
        s = params.step(s, u[0]);
        Ok((y, None))
    })?;
    Ok(Trajectory { records, diagnostic_plant_state: Some(states) })
}

/// `Σ_{i<horizon} γ^i (ỹᵀQỹ + wᵀRw)` from `start`, using the applied `w`.
pub fn truncated_cost_to_go(
    traj: &Trajectory,
    cost: &CostConfig,
    start: usize,
    horizon: usize,
) -> Result<f64, SimError> {
    let end = start + horizon;
    if end > traj.len() {
        return Err(SimError::OutOfRange { start, end, len: traj.len() });
    }
    let g = cost.gamma();
    let mut disc = 1.0;
    let mut total = 0.0;
    for r in &traj.records[start..end] {
        total += disc * cost.stage_cost(&r.y_tilde, &r.w);
        disc *= g;
    }
    Ok(total)
}

/// Regression window at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub k: usize,
    /// `[w_{k-1}; …; w_{k-n_x}; ỹ_{k-1}; …; ỹ_{k-n_x}]`.
    pub x_k: Vector,
    /// The same stacking one step later.
    pub x_next: Vector,
    pub y_tilde: Vector,
    pub w: Vector,
    /// Whether `w_k` carries probing noise.
    pub probed: bool,
}

/// Stacked history ending just before step `k` (requires `k ≥ n_x`).
pub fn history_at(traj: &Trajectory, n_x: usize, k: usize) -> Vector {
    let r0 = &traj.records[0];
    let (nw, ny) = (r0.w.len(), r0.y_tilde.len());
    let mut x = Vector::zeros(n_x * (nw + ny));
    for i in 1..=n_x {
        let r = &traj.records[k - i];
        x.rows_mut((i - 1) * nw, nw).copy_from(&r.w);
        x.rows_mut(n_x * nw + (i - 1) * ny, ny).copy_from(&r.y_tilde);
    }
    x
}

/// One window per `k = n_x, …, T−1`.
pub fn extract_windows(traj: &Trajectory, n_x: usize) -> Result<Vec<Window>, SimError> {
    if n_x == 0 {
        return Err(SimError::Dimension("n_x must be >= 1".into()));
    }
    if traj.len() < n_x + 1 {
        return Err(SimError::TooShort { len: traj.len(), needed: n_x + 1 });
    }
    if traj.records[0].w.len() != n_x {
        return Err(SimError::Dimension(format!(
            "corrections have width {}, expected {n_x}",
            traj.records[0].w.len()
        )));
    }
    Ok((n_x..traj.len())
        .map(|k| {
            let r = &traj.records[k];
            let x_next = if k + 1 < traj.len() {
                history_at(traj, n_x, k + 1)
            } else {
                shifted_history(traj, n_x, k)
            };
            Window {
                k,
                x_k: history_at(traj, n_x, k),
                x_next,
                y_tilde: r.y_tilde.clone(),
                w: r.w.clone(),
                probed: r.probed,
            }
        })
        .collect())
}

/// `X_{k+1}` for the last record, built from records `k-n_x+1..=k`.
fn shifted_history(traj: &Trajectory, n_x: usize, k: usize) -> Vector {
    let r0 = &traj.records[0];
    let (nw, ny) = (r0.w.len(), r0.y_tilde.len());
    let mut x = Vector::zeros(n_x * (nw + ny));
    for i in 0..n_x {
        let r = &traj.records[k - i];
        x.rows_mut(i * nw, nw).copy_from(&r.w);
        x.rows_mut(n_x * nw + i * ny, ny).copy_from(&r.y_tilde);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_reconstruction;

    fn pendulum() -> SystemModel {
        SystemModel::linear_pendulum()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn matched_initial_conditions_give_zero_output_error() {
        let traj = simulate_linear(
            &pendulum(),
            &CorrectionPolicy::Zero,
            &ExcitationConfig::noiseless(),
            &v(&[0.3, -0.2]),
            &v(&[0.3, -0.2]),
            40,
        )
        .unwrap();
        assert_eq!(traj.len(), 40);
        assert!(traj.records.iter().all(|r| r.y_tilde.amax() < 1e-15));
    }

    #[test]
    fn first_output_error_picks_second_component() {
        let traj = simulate_linear(
            &pendulum(),
            &CorrectionPolicy::Zero,
            &ExcitationConfig::noiseless(),
            &v(&[0.0, 0.0]),
            &v(&[-1.0, 1.0]),
            3,
        )
        .unwrap();
        assert_eq!(traj.records[0].y_tilde[0], -1.0);
        for r in &traj.records {
            assert!((&r.y - &r.y_hat - &r.y_tilde).amax() == 0.0);
        }
    }

    #[test]
    fn pendulum_equilibrium_stays_zero() {
        let traj = simulate_pendulum(
            &PendulumParams::default(),
            &pendulum(),
            &CorrectionPolicy::Zero,
            &ExcitationConfig::noiseless(),
            [0.0, 0.0],
            &v(&[0.0, 0.0]),
            50,
        )
        .unwrap();
        for r in &traj.records {
            assert_eq!(r.y.amax(), 0.0);
            assert_eq!(r.x_hat.amax(), 0.0);
            assert!(r.x.is_none());
        }
    }

    #[test]
    fn windows_unroll_newest_first() {
        let n = 2;
        let records = (0..3)
            .map(|k| StepRecord {
                u: v(&[0.0]),
                y: v(&[0.0]),
                y_hat: v(&[0.0]),
                y_tilde: v(&[10.0 + k as f64]),
                w: v(&[k as f64, 100.0 + k as f64]),
                noise: v(&[0.0, 0.0]),
                probed: false,
                x_hat: v(&[0.0, 0.0]),
                x: None,
                x_tilde: None,
            })
            .collect();
        let traj = Trajectory { records, diagnostic_plant_state: None };
        let win = extract_windows(&traj, n).unwrap();
        assert_eq!(win.len(), 1);
        assert_eq!(win[0].x_k, v(&[1.0, 101.0, 0.0, 100.0, 11.0, 10.0]));
        assert_eq!(win[0].x_next, v(&[2.0, 102.0, 1.0, 101.0, 12.0, 11.0]));
        assert!(matches!(
            extract_windows(&Trajectory { records: traj.records[..2].to_vec(), ..traj }, n),
            Err(SimError::TooShort { .. })
        ));
    }

    #[test]
    fn windows_reconstruct_ground_truth() {
        let model = pendulum();
        let rec = build_reconstruction(&model).unwrap();
        let policy = CorrectionPolicy::Luenberger { gain: Mat::from_row_slice(2, 1, &[0.1, 0.9]) };
        let exc = ExcitationConfig { probe_probability: 1.0, ..Default::default() }.with_seed(3);
        let traj =
            simulate_linear(&model, &policy, &exc, &v(&[0.5, 0.0]), &v(&[0.0, 0.0]), 80).unwrap();
        for w in extract_windows(&traj, 2).unwrap() {
            let est = rec.reconstruct_stacked(&w.x_k).unwrap();
            let truth = traj.records[w.k].x_tilde.as_ref().unwrap();
            assert!((est - truth).amax() < 1e-10);
        }
    }

    #[test]
    fn cost_to_go_basics() {
        let cost = CostConfig::pendulum_default();
        let traj = simulate_linear(
            &pendulum(),
            &CorrectionPolicy::Zero,
            &ExcitationConfig::noiseless(),
            &v(&[0.0, 1.0]),
            &v(&[0.0, 0.0]),
            5,
        )
        .unwrap();
        assert!((truncated_cost_to_go(&traj, &cost, 0, 1).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(
            truncated_cost_to_go(&traj, &cost, 3, 3),
            Err(SimError::OutOfRange { .. })
        ));
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let model = pendulum();
        let policy = CorrectionPolicy::Luenberger { gain: Mat::from_row_slice(2, 1, &[0.1, 0.9]) };
        let run = |seed| {
            simulate_linear(
                &model,
                &policy,
                &ExcitationConfig::default().with_seed(seed),
                &v(&[0.5, 0.0]),
                &v(&[0.0, 0.0]),
                60,
            )
            .unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
        assert_eq!(run(7).to_csv(), run(7).to_csv());
    }

    #[test]
    fn measured_data_policy_uses_warmup_then_gains() {
        // F_w over w_{k-1}, F_y over [ỹ_k; ỹ_{k-1}]
        let f_w = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let f_y = Mat::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 2.0]);
        let pol = CorrectionPolicy::measured_data(f_w, f_y, Warmup::Zero).unwrap();
        let ws = vec![v(&[3.0, 4.0]), v(&[5.0, 6.0])];
        let ys = vec![v(&[1.0]), v(&[2.0]), v(&[7.0])];
        assert_eq!(pol.correction(2, 1, &ws[..1], &ys[..2]), v(&[0.0, 0.0]));
        assert_eq!(pol.correction(2, 2, &ws, &ys), v(&[5.0, 7.0 + 4.0]));
    }

    #[test]
    fn divergence_reports_step() {
        let model = SystemModel::new(
            Mat::from_row_slice(1, 1, &[1e4]),
            Mat::zeros(1, 1),
            Mat::identity(1, 1),
            1.0,
        )
        .unwrap();
        let err = simulate_linear(
            &model,
            &CorrectionPolicy::Zero,
            &ExcitationConfig::noiseless(),
            &v(&[1.0]),
            &v(&[0.0]),
            10,
        )
        .unwrap_err();
        assert_eq!(err, SimError::Diverged { step: 3 });
    }

    #[test]
    fn prbs_is_balanced_and_periodic() {
        let s = InputSignal::Prbs { amplitude: 1.0 }.sequence(254, 0.1);
        assert_eq!(&s[..127], &s[127..]);
        let ones = s[..127].iter().filter(|&&x| x > 0.0).count();
        assert_eq!(ones, 64);
    }
}
