//! Experiment config: one JSON document pointing at model, cost, PI and
//! excitation files. Relative paths resolve against the config's directory.
//! Every referenced file is optional and falls back to the pendulum defaults.

use std::path::{Path, PathBuf};

use observer_pi::io::{self, CostFile, ModelFile, PolicyFile, SCHEMA_VERSION};
use observer_pi::{
    CorrectionPolicy, CostConfig, ExcitationConfig, PendulumParams, PiConfig, SystemModel,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Riccati,
    LinearPi,
    PendulumPi,
    Compare,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Riccati => "riccati",
            Experiment::LinearPi => "linear_pi",
            Experiment::PendulumPi => "pendulum_pi",
            Experiment::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    #[default]
    Linear,
    Pendulum,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub v: u32,
    pub experiment: Option<Experiment>,
    pub model: Option<PathBuf>,
    pub cost: Option<PathBuf>,
    pub pi: Option<PathBuf>,
    pub excitation: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    /// Largest final relative error to `H*` accepted by `linear-pi`.
    pub acceptance_threshold: Option<f64>,
    /// Start every seed from this policy instead of a sampled gain.
    pub initial_policy: Option<PathBuf>,
    pub pendulum: Option<PendulumParams>,
    /// Pendulum `[θ0, θ̇0]`.
    pub x0: Option<[f64; 2]>,
    /// Length of the output-error traces.
    pub trace_steps: Option<usize>,
    pub plant: Option<PlantKind>,
    /// The two policies for `compare`.
    pub policies: Option<Vec<PathBuf>>,
}

pub const DEFAULT_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_TRACE_STEPS: usize = 300;

/// A loaded config with every referenced file parsed.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: SystemModel,
    pub cost: CostConfig,
    pub pi: Option<PiConfig>,
    pub excitation: Option<ExcitationConfig>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub threshold: f64,
    pub initial_policy: Option<CorrectionPolicy>,
    pub pendulum: PendulumParams,
    pub x0: [f64; 2],
    pub trace_steps: usize,
    pub plant: PlantKind,
    pub policies: Vec<(PathBuf, CorrectionPolicy)>,
}

fn input(e: io::IoError) -> CliError {
    CliError::Input(e.to_string())
}

fn read_policy(path: &Path) -> Result<CorrectionPolicy, CliError> {
    let file: PolicyFile = io::read_json(path).map_err(input)?;
    file.to_policy()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

impl Setup {
    pub fn load(
        path: &Path,
        expected: Experiment,
        out: Option<PathBuf>,
        seeds: Option<Vec<u64>>,
    ) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = io::read_json(path).map_err(input)?;
        if cfg.v != SCHEMA_VERSION {
            return Err(input(io::IoError::Version(cfg.v)));
        }
        if let Some(e) = cfg.experiment {
            if e != expected {
                return Err(CliError::Input(format!(
                    "{}: config is for experiment {:?}, not {:?}",
                    path.display(),
                    e.name(),
                    expected.name()
                )));
            }
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };

        let model = match &cfg.model {
            Some(p) => {
                let p = resolve(p);
                let file: ModelFile = io::read_json(&p).map_err(input)?;
                file.to_model().map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
            }
            None => SystemModel::linear_pendulum(),
        };
        let cost = match &cfg.cost {
            Some(p) => {
                let p = resolve(p);
                let file: CostFile = io::read_json(&p).map_err(input)?;
                let cost =
                    file.to_cost().map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                cost.check_against(&model)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                cost
            }
            None => CostConfig::pendulum_default(),
        };
        let pi = match &cfg.pi {
            Some(p) => Some(io::read_json::<PiConfig>(&resolve(p)).map_err(input)?),
            None => None,
        };
        let excitation = match &cfg.excitation {
            Some(p) => {
                let p = resolve(p);
                let exc: ExcitationConfig = io::read_json(&p).map_err(input)?;
                exc.validate().map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                Some(exc)
            }
            None => None,
        };
        let initial_policy = cfg.initial_policy.as_ref().map(|p| read_policy(&resolve(p))).transpose()?;
        let policies = cfg
            .policies
            .iter()
            .flatten()
            .map(|p| {
                let p = resolve(p);
                read_policy(&p).map(|pol| (p, pol))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let pendulum = cfg.pendulum.unwrap_or_default();
        pendulum.validate().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;

        let seeds = seeds.or(cfg.seeds).unwrap_or_else(|| DEFAULT_SEEDS.collect());
        let mut seeds_sorted = seeds.clone();
        seeds_sorted.sort_unstable();
        seeds_sorted.dedup();
        Ok(Setup {
            model,
            cost,
            pi,
            excitation,
            seeds: seeds_sorted,
            out: out.unwrap_or_else(|| cfg.out.as_ref().map(resolve).unwrap_or_else(|| "out".into())),
            threshold: cfg.acceptance_threshold.unwrap_or(DEFAULT_THRESHOLD),
            initial_policy,
            pendulum,
            x0: cfg.x0.unwrap_or([3.0, 0.0]),
            trace_steps: cfg.trace_steps.unwrap_or(DEFAULT_TRACE_STEPS),
            plant: cfg.plant.unwrap_or_default(),
            policies,
        })
    }
}
