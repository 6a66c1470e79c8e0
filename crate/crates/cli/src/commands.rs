use std::fmt::Write as _;
use std::path::Path;

use observer_pi::experiments::{
    closed_form_policy, linear_excitation, linear_problem, pendulum_excitation, pendulum_pi_config,
    pendulum_problem,
};
use observer_pi::io::{self, fmt_num, PolicyFile, SCHEMA_VERSION};
use observer_pi::linalg;
use observer_pi::model::{RICCATI_DEFAULT_MAX_ITER, RICCATI_DEFAULT_TOL};
use observer_pi::pi::IterationFile;
use observer_pi::svg::{Chart, Series};
use observer_pi::{
    build_reconstruction, closed_form_value_matrix, run_many, sample_stabilizing_policy,
    solve_discounted_riccati, CorrectionPolicy, Execution, PiConfig, PiError, PiProblem, PiRun,
    SimError, Trajectory,
};
use serde::Serialize;

use crate::config::{PlantKind, Setup};
use crate::table::{self, opt4, sig4};
use crate::CliError;

const SAMPLE_TRIES: usize = 10_000;

type SeedRuns = Vec<(u64, Result<PiRun, PiError>)>;

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    io::write_text(path, text).map_err(|e| CliError::Input(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    io::write_json(path, value).map_err(|e| CliError::Input(e.to_string()))
}

#[derive(Serialize)]
struct RiccatiFile {
    v: u32,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    iterations: usize,
    residual: f64,
}

pub fn riccati(setup: &Setup) -> Result<(), CliError> {
    let sol = solve_discounted_riccati(&setup.model, &setup.cost, RICCATI_DEFAULT_TOL, RICCATI_DEFAULT_MAX_ITER)
        .map_err(|e| CliError::Input(format!("Riccati solver failed: {e}")))?;
    let rec = build_reconstruction(&setup.model).map_err(|e| CliError::Input(e.to_string()))?;
    let h = closed_form_value_matrix(&sol.p, &rec).map_err(|e| CliError::Input(e.to_string()))?;
    let policy = closed_form_policy(&setup.model, &setup.cost).map_err(|e| CliError::Input(e.to_string()))?;

    println!("P ({} iterations, residual {:.3e}):", sol.iterations, sol.residual);
    print!("{}", table::matrix(&sol.p));
    println!("H*:");
    print!("{}", table::matrix(h.matrix()));

    write_json(
        &setup.out.join("riccati.json"),
        &RiccatiFile {
            v: SCHEMA_VERSION,
            p: linalg::to_rows(&sol.p),
            h: linalg::to_rows(h.matrix()),
            iterations: sol.iterations,
            residual: sol.residual,
        },
    )?;
    write_json(&setup.out.join("closed_form_policy.json"), &PolicyFile::from_policy(&policy))
}

fn is_divergence(e: &PiError) -> bool {
    match e {
        PiError::Diverged { .. } | PiError::Sim(SimError::Diverged { .. }) => true,
        PiError::Outer { source, .. } => is_divergence(source),
        _ => false,
    }
}

fn partial_run(e: &PiError) -> Option<&PiRun> {
    match e {
        PiError::Diverged { partial, .. } | PiError::Outer { partial, .. } => Some(partial),
        _ => None,
    }
}

fn write_run(out: &Path, run: &PiRun) -> Result<(), CliError> {
    let dir = out.join(format!("run_{}", run.seed));
    write(&dir.join("convergence.csv"), &run.to_csv())?;
    for r in &run.records {
        write_json(&dir.join(format!("iter_{}.json", r.j)), &IterationFile::from_record(r))?;
    }
    if let Some(p) = &run.final_policy {
        write_json(&dir.join("final_policy.json"), &PolicyFile::from_policy(p))?;
    }
    Ok(())
}

fn starts(setup: &Setup) -> Result<Vec<(u64, CorrectionPolicy)>, CliError> {
    if setup.seeds.is_empty() {
        return Err(CliError::Input("no seeds given".into()));
    }
    setup
        .seeds
        .iter()
        .map(|&s| {
            let p = match &setup.initial_policy {
                Some(p) => p.clone(),
                None => sample_stabilizing_policy(&setup.model, s, SAMPLE_TRIES)
                    .map_err(|e| CliError::Input(format!("seed {s}: {e}")))?,
            };
            Ok((s, p))
        })
        .collect()
}

/// Runs every seed and writes whatever each run produced, partial runs
/// included. Runs are returned in seed order.
fn run_seeds(
    setup: &Setup,
    problem: &PiProblem,
    cfg: &PiConfig,
    exc: &observer_pi::ExcitationConfig,
) -> Result<SeedRuns, CliError> {
    let starts = starts(setup)?;
    let runs = run_many(problem, &starts, cfg, exc, Execution::Parallel);
    let mut out = Vec::new();
    for ((seed, _), res) in starts.into_iter().zip(runs) {
        match &res {
            Ok(run) => write_run(&setup.out, run)?,
            Err(e) => {
                log::error!("seed {seed}: {e}");
                if let Some(p) = partial_run(e) {
                    write_run(&setup.out, p)?;
                }
            }
        }
        out.push((seed, res));
    }
    Ok(out)
}

fn check_runs(runs: &SeedRuns) -> Result<(), CliError> {
    let diverged: Vec<String> = runs
        .iter()
        .filter_map(|(s, r)| r.as_ref().err().filter(|e| is_divergence(e)).map(|e| format!("seed {s}: {e}")))
        .collect();
    if !diverged.is_empty() {
        return Err(CliError::Divergence(diverged.join("; ")));
    }
    let errors: Vec<String> = runs
        .iter()
        .filter_map(|(s, r)| r.as_ref().err().map(|e| format!("seed {s}: {e}")))
        .collect();
    if !errors.is_empty() {
        return Err(CliError::Input(errors.join("; ")));
    }
    Ok(())
}

pub fn linear_pi(setup: &Setup) -> Result<(), CliError> {
    let problem = linear_problem(setup.model.clone(), setup.cost.clone())
        .map_err(|e| CliError::Input(e.to_string()))?;
    let cfg = setup.pi.clone().unwrap_or_default();
    let exc = setup.excitation.clone().unwrap_or_else(|| linear_excitation(0));
    let runs = run_seeds(setup, &problem, &cfg, &exc)?;

    let mut chart = Chart::new("Convergence of H to H*", "policy j", "||H_j - H*||_F").log_y();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (seed, res) in &runs {
        let Ok(run) = res else { continue };
        chart.push(Series::new(
            format!("seed {seed}"),
            run.records.iter().filter_map(|r| Some((r.j as f64, r.frob_error?))).collect(),
        ));
        let last = run.last();
        let rel = last.and_then(|r| r.rel_error);
        if !rel.is_some_and(|e| e < setup.threshold) {
            failed.push(seed.to_string());
        }
        rows.push(vec![
            seed.to_string(),
            run.records.len().to_string(),
            opt4(last.and_then(|r| r.frob_error)),
            opt4(rel),
            run.converged.to_string(),
        ]);
    }
    print!("{}", table::render(&["seed", "policies", "||H-H*||_F", "rel error", "converged"], &rows));
    write(&setup.out.join("convergence.svg"), &chart.render())?;
    check_runs(&runs)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!(
            "final relative error not below {} for seeds {}",
            setup.threshold,
            failed.join(",")
        )))
    }
}

/// Signed output error for a single output, the norm otherwise.
fn output_error(traj: &Trajectory) -> Vec<f64> {
    traj.records
        .iter()
        .map(|r| if r.y_tilde.len() == 1 { r.y_tilde[0] } else { r.y_tilde.norm() })
        .collect()
}

fn trace(problem: &PiProblem, policy: &CorrectionPolicy, steps: usize) -> Result<Trajectory, CliError> {
    let mut spec = problem.rollout.clone().expect("experiment problems carry a rollout");
    spec.horizon = steps;
    problem.rollout_trajectory(policy, &spec).map_err(|e| match e {
        SimError::Diverged { .. } => CliError::Divergence(e.to_string()),
        other => CliError::Input(other.to_string()),
    })
}

fn series_csv(columns: &[(String, Vec<f64>)]) -> String {
    let mut s = String::from("k");
    for (name, _) in columns {
        write!(s, ",{name}").unwrap();
    }
    s.push('\n');
    let len = columns.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    for k in 0..len {
        write!(s, "{k}").unwrap();
        for (_, v) in columns {
            s.push(',');
            if let Some(x) = v.get(k) {
                s.push_str(&fmt_num(*x));
            }
        }
        s.push('\n');
    }
    s
}

fn indexed(v: &[f64]) -> Vec<(f64, f64)> {
    v.iter().enumerate().map(|(k, &x)| (k as f64, x)).collect()
}

fn pendulum_setup(setup: &Setup) -> Result<PiProblem, CliError> {
    pendulum_problem(setup.pendulum, setup.model.clone(), setup.cost.clone(), setup.x0)
        .map_err(|e| CliError::Input(e.to_string()))
}

pub fn pendulum_pi(setup: &Setup) -> Result<(), CliError> {
    if setup.model.n_x() != 2 || setup.model.n_y() != 1 {
        return Err(CliError::Input("the pendulum needs a 2-state, 1-output design model".into()));
    }
    let problem = pendulum_setup(setup)?;
    let baseline = closed_form_policy(&setup.model, &setup.cost).map_err(|e| CliError::Input(e.to_string()))?;
    let base_cost = problem
        .rollout_cost(&baseline)
        .map_err(|e| CliError::Divergence(e.to_string()))?
        .expect("rollout present");
    write_json(&setup.out.join("baseline_policy.json"), &PolicyFile::from_policy(&baseline))?;
    let base_traj = trace(&problem, &baseline, setup.trace_steps)?;
    write(&setup.out.join("baseline_trajectory.csv"), &base_traj.to_csv())?;

    let cfg = setup.pi.clone().unwrap_or_else(pendulum_pi_config);
    let exc = setup.excitation.clone().unwrap_or_else(|| pendulum_excitation(0));
    let runs = run_seeds(setup, &problem, &cfg, &exc)?;

    let mut cost_chart = Chart::new("Cost-to-go per policy", "policy j", "cost-to-go");
    let mut err_chart = Chart::new("Output error", "k", "output error");
    let mut cost_cols = Vec::new();
    let mut err_cols = vec![("baseline".to_string(), output_error(&base_traj))];
    let mut rows = Vec::new();
    let mut worse = Vec::new();
    let mut max_j = 0;
    for (seed, res) in &runs {
        let Ok(run) = res else { continue };
        // costs of the evaluated policies followed by the final improved one
        let mut costs: Vec<f64> = run.records.iter().filter_map(|r| r.cost_to_go).collect();
        costs.extend(run.final_cost_to_go);
        max_j = max_j.max(costs.len().saturating_sub(1));
        cost_chart.push(Series::new(format!("seed {seed}"), indexed(&costs)));
        cost_cols.push((format!("seed_{seed}"), costs));
        let final_cost = run.final_cost_to_go.unwrap_or(f64::NAN);
        if !(final_cost <= base_cost) {
            worse.push(seed.to_string());
        }
        if let Some(p) = &run.final_policy {
            let tr = trace(&problem, p, setup.trace_steps)?;
            let e = output_error(&tr);
            err_chart.push(Series::new(format!("seed {seed}"), indexed(&e)));
            err_cols.push((format!("seed_{seed}"), e));
        }
        rows.push(vec![
            seed.to_string(),
            run.records.len().to_string(),
            opt4(run.records.first().and_then(|r| r.cost_to_go)),
            sig4(final_cost),
            sig4(base_cost),
        ]);
    }
    cost_chart.push(
        Series::new("closed-form baseline", vec![(0.0, base_cost), (max_j.max(1) as f64, base_cost)]).dashed(),
    );
    err_chart.push(Series::new("closed-form baseline", indexed(&err_cols[0].1)).dashed());
    cost_cols.push(("baseline".into(), vec![base_cost; max_j + 1]));

    print!(
        "{}",
        table::render(&["seed", "policies", "initial cost", "final cost", "baseline"], &rows)
    );
    write(&setup.out.join("cost_to_go.csv"), &series_csv(&cost_cols))?;
    write(&setup.out.join("cost_to_go.svg"), &cost_chart.render())?;
    write(&setup.out.join("output_error.csv"), &series_csv(&err_cols))?;
    write(&setup.out.join("output_error.svg"), &err_chart.render())?;
    check_runs(&runs)?;
    if worse.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!(
            "learned policy does not beat the baseline for seeds {}",
            worse.join(",")
        )))
    }
}

pub fn compare(setup: &Setup) -> Result<(), CliError> {
    let [(path_a, a), (path_b, b)] = setup.policies.as_slice() else {
        return Err(CliError::Input(format!(
            "compare needs exactly two policy files, got {}",
            setup.policies.len()
        )));
    };
    let (n_x, n_y) = (setup.model.n_x(), setup.model.n_y());
    for (path, p) in [(path_a, a), (path_b, b)] {
        p.check_dims(n_x, n_y)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    let problem = match setup.plant {
        PlantKind::Linear => linear_problem(setup.model.clone(), setup.cost.clone())
            .map_err(|e| CliError::Input(e.to_string()))?,
        PlantKind::Pendulum => pendulum_setup(setup)?,
    };
    let mut err_chart = Chart::new("Output error", "k", "output error");
    let mut err_cols = Vec::new();
    let mut summary = String::from("policy,file,cost_to_go\n");
    let mut rows = Vec::new();
    for ((label, path, policy), dashed) in [("a", path_a, a), ("b", path_b, b)].into_iter().zip([false, true]) {
        let cost = problem
            .rollout_cost(policy)
            .map_err(|e| CliError::Divergence(e.to_string()))?
            .expect("rollout present");
        let tr = trace(&problem, policy, setup.trace_steps)?;
        write(&setup.out.join(format!("policy_{label}_trajectory.csv")), &tr.to_csv())?;
        let e = output_error(&tr);
        let s = Series::new(format!("policy {label}"), indexed(&e));
        err_chart.push(if dashed { s.dashed() } else { s });
        err_cols.push((format!("policy_{label}"), e));
        writeln!(summary, "{label},{},{}", path.display(), fmt_num(cost)).unwrap();
        rows.push(vec![label.to_string(), path.display().to_string(), sig4(cost)]);
    }
    print!("{}", table::render(&["policy", "file", "cost-to-go"], &rows));
    write(&setup.out.join("costs.csv"), &summary)?;
    write(&setup.out.join("output_error.csv"), &series_csv(&err_cols))?;
    write(&setup.out.join("output_error.svg"), &err_chart.render())
}
