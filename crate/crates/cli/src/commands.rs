//! One function per CLI verb, plus the shared report/artifact helpers.
//!
//! Reports go to stdout (the `check` verbs print exactly one JSON document,
//! so they can be piped), artifacts go under `--out`, and anything
//! diagnostic goes to stderr. Helpers that both a verb and a `repro` bundle
//! need are factored so the canned scenarios exercise the same code paths
//! as user configs.

use std::collections::BTreeMap;
use std::path::Path;

use chemostat_core::age::{AgeEquilibrium, AgeSystem};
use chemostat_core::age_pde::{self, PdeRun, PdeState};
use chemostat_core::analysis::{self, AuditConfig, BasinLabel, Dilution2, Dilution3, GridSpec};
use chemostat_core::lumped::{FeedbackConfig, LumpedEquilibrium, LumpedSystem};
use chemostat_core::sim::{self, IntegratorConfig, Trajectory};
use chemostat_core::Error;
use serde_json::json;

use crate::config::{select_equilibrium, ModelKind, RunMode, RunSpec, ScenarioConfig, SweepSpec};
use crate::output::{self, fmt_f64};
use crate::{cfg_err, run_err, CliError, ReproTarget};

/// Feedback gains for commands that work without an explicit section:
/// `delta = 1`, `alpha = 0.5` (the certificate constants do not depend on
/// them; only the derivative audit does).
fn feedback_or_default(
    cfg: &ScenarioConfig,
) -> Result<(FeedbackConfig<f64>, Option<f64>, Option<usize>), CliError> {
    match &cfg.feedback {
        Some(spec) => {
            let fb = FeedbackConfig::new(spec.delta, spec.alpha).map_err(cfg_err)?;
            Ok((fb, spec.phi, spec.target))
        }
        None => {
            let fb = FeedbackConfig::new(1.0, 0.5).map_err(cfg_err)?;
            Ok((fb, None, None))
        }
    }
}

fn initial_states<const N: usize>(raw: &[Vec<f64>]) -> Result<Vec<[f64; N]>, CliError> {
    if raw.is_empty() {
        return Err(CliError::Config("run.initial needs at least one initial state".into()));
    }
    let mut out = Vec::with_capacity(raw.len());
    for (i, entry) in raw.iter().enumerate() {
        if entry.len() != N {
            return Err(CliError::Config(format!(
                "run.initial[{i}] has {} components; this model has {N} states",
                entry.len()
            )));
        }
        let mut state = [0.0; N];
        for (c, v) in entry.iter().enumerate() {
            if !v.is_finite() {
                return Err(CliError::Config(format!(
                    "run.initial[{i}][{c}] = {v} is not finite"
                )));
            }
            state[c] = *v;
        }
        out.push(state);
    }
    Ok(out)
}

fn sweep_axes(sweep: &SweepSpec, dim: usize, names: &str) -> Result<Vec<GridSpec<f64>>, CliError> {
    if sweep.axes.len() != dim {
        return Err(CliError::Config(format!(
            "sweep.axes has {} entries; this model needs {dim}, one per state ({names})",
            sweep.axes.len()
        )));
    }
    sweep.axes.iter().map(|a| a.build()).collect()
}

/// `d` is the open-loop knob; catching it on a closed-loop section keeps a
/// silently ignored field from masking a config mistake.
fn reject_closed_d(mode: RunMode, d: Option<f64>, section: &str) -> Result<(), CliError> {
    if mode == RunMode::Closed && d.is_some() {
        return Err(CliError::Config(format!(
            "{section}.d sets the constant dilution of open-loop runs; remove it or use mode \"open\""
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// equilibria

pub fn equilibria(cfg: &ScenarioConfig) -> Result<(), CliError> {
    match cfg.model.kind {
        ModelKind::Lumped => {
            let sys = cfg.build_lumped()?;
            let eqs = sys.equilibria().map_err(run_err)?;
            println!(
                "lumped model: mu* = {}, S_in = {}",
                fmt_f64(sys.mu_star()),
                fmt_f64(sys.s_in)
            );
            if eqs.is_empty() {
                println!("no interior equilibrium: the growth law never reaches mu* on (0, S_in)");
                return Ok(());
            }
            println!("interior equilibria (ascending S*): {}", eqs.len());
            for (i, eq) in eqs.iter().enumerate() {
                let rep = sys.classify_equilibrium(eq).map_err(run_err)?;
                println!(
                    "[{i}] X* = {}, S* = {} | kappa = {}",
                    fmt_f64(eq.x_star),
                    fmt_f64(eq.s_star),
                    fmt_f64(eq.kappa)
                );
                print_stability(&rep);
            }
        }
        ModelKind::Age | ModelKind::AgePde => {
            let sys = cfg.build_age()?;
            let eqs = sys.equilibria().map_err(run_err)?;
            println!(
                "age-structured model (reduced): mu* = {}, S_in = {}",
                fmt_f64(sys.mu_star()),
                fmt_f64(sys.s_in)
            );
            if eqs.is_empty() {
                println!("no interior equilibrium: the growth law never reaches mu* on (0, S_in)");
                return Ok(());
            }
            println!("interior equilibria (ascending S*): {}", eqs.len());
            for (i, eq) in eqs.iter().enumerate() {
                let rep = sys.classify_equilibrium(eq).map_err(run_err)?;
                println!(
                    "[{i}] X* = {}, Y* = {}, S* = {} | kappa = {}, lambda = {}",
                    fmt_f64(eq.x_star),
                    fmt_f64(eq.y_star),
                    fmt_f64(eq.s_star),
                    fmt_f64(eq.kappa),
                    fmt_f64(eq.lambda)
                );
                print_stability(&rep);
            }
        }
    }
    Ok(())
}

fn print_stability(rep: &analysis::StabilityReport<f64>) {
    let poly: Vec<String> = rep.char_poly.iter().map(|c| fmt_f64(*c)).collect();
    println!(
        "    {:?} | eigenvalue signs (pos, neg, zero) = ({}, {}, {}) | jacobian consistent: {}",
        rep.verdict, rep.eig_signs.n_pos, rep.eig_signs.n_neg, rep.eig_signs.n_zero, rep.consistent
    );
    println!("    char poly (monic, descending): [{}]", poly.join(", "));
}

// ---------------------------------------------------------------------------
// check

pub fn check(cfg: &ScenarioConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let (fb, phi, target) = feedback_or_default(cfg)?;
    let s_bar = cfg.divergence.as_ref().and_then(|d| d.s_bar);
    let (report, certified) = match cfg.model.kind {
        ModelKind::Lumped => certificate_lumped(&cfg.build_lumped()?, &fb, target, s_bar, seed)?,
        ModelKind::Age | ModelKind::AgePde => {
            certificate_age(&cfg.build_age()?, &fb, phi, target, seed)?
        }
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Numerical(format!("cannot serialize the certificate: {e}")))?;
    println!("{text}");
    output::write_json(&out.join("certificate.json"), &report)?;
    if certified {
        Ok(())
    } else {
        Err(CliError::Refusal)
    }
}

fn eq2_json(idx: usize, eq: &LumpedEquilibrium<f64>) -> serde_json::Value {
    json!({
        "index": idx,
        "x_star": eq.x_star,
        "s_star": eq.s_star,
        "kappa": eq.kappa,
        "mu_star": eq.mu_star,
    })
}

fn eq3_json(idx: usize, eq: &AgeEquilibrium<f64>) -> serde_json::Value {
    json!({
        "index": idx,
        "x_star": eq.x_star,
        "y_star": eq.y_star,
        "s_star": eq.s_star,
        "kappa": eq.kappa,
        "mu_star": eq.mu_star,
        "lambda": eq.lambda,
    })
}

fn audit_json(seed: u64, acfg: &AuditConfig<f64>, violations: usize, worst: f64) -> serde_json::Value {
    json!({
        "samples": acfg.samples,
        "seed": seed,
        "half_width": acfg.half_width,
        "violations": violations,
        "worst_value": worst,
    })
}

fn certificate_lumped(
    sys: &LumpedSystem<f64>,
    fb: &FeedbackConfig<f64>,
    target: Option<usize>,
    s_bar: Option<f64>,
    seed: u64,
) -> Result<(serde_json::Value, bool), CliError> {
    let eqs = sys.equilibria().map_err(run_err)?;
    if eqs.is_empty() {
        let report = json!({
            "model": "lumped",
            "certified": false,
            "reason": "no interior equilibrium at the nominal dilution",
        });
        return Ok((report, false));
    }
    let idx = select_equilibrium(eqs.len(), target)?;
    let eq = &eqs[idx];
    let margin = sys.check_assumption_a(eq);
    let margin_json = json!({
        "holds": margin.holds,
        "margin": margin.margin,
        "arg_min": margin.arg_min,
    });
    if !margin.holds {
        // No certificate exists; hand back the constructive counterexample
        // instead, so the refusal is checkable.
        let scenario = match sys.divergence_scenario(eq, s_bar) {
            Ok(sc) => json!({
                "s_bar": sc.s_bar,
                "theta": sc.theta,
                "beta": sc.beta,
                "xbar2": sc.xbar2,
                "x1_0": sc.x1_0,
                "big_g": sc.big_g,
                "big_m": sc.big_m,
            }),
            Err(e) => json!({ "error": e.to_string() }),
        };
        let report = json!({
            "model": "lumped",
            "certified": false,
            "reason": "growth margin fails: p0*mu(S) - b is not positive everywhere on [S*, S_in]",
            "equilibrium": eq2_json(idx, eq),
            "growth_margin": margin_json,
            "divergence_scenario": scenario,
        });
        return Ok((report, false));
    }
    let consts = sys.lyapunov_constants(eq).map_err(run_err)?;
    let acfg = AuditConfig { seed, ..AuditConfig::default() };
    let audit = analysis::lyapunov_audit2(sys, eq, fb, &consts, &acfg).map_err(run_err)?;
    if audit.violations > 0 {
        return Err(CliError::Numerical(format!(
            "derivative audit found {} violations (worst {} at {:?}) against certified constants; \
             this is a bug, not a property of the model",
            audit.violations, audit.worst_value, audit.worst_point
        )));
    }
    let report = json!({
        "model": "lumped",
        "certified": true,
        "equilibrium": eq2_json(idx, eq),
        "growth_margin": margin_json,
        "feedback": { "delta": fb.delta, "alpha": fb.alpha },
        "constants": {
            "a": consts.a,
            "r": consts.r,
            "c": consts.c,
            "big_r_lower": consts.big_r_lower,
            "big_r": consts.big_r,
        },
        "audit": audit_json(seed, &acfg, audit.violations, audit.worst_value),
    });
    Ok((report, true))
}

fn certificate_age(
    sys: &AgeSystem<f64>,
    fb: &FeedbackConfig<f64>,
    phi: Option<f64>,
    target: Option<usize>,
    seed: u64,
) -> Result<(serde_json::Value, bool), CliError> {
    let eqs = sys.equilibria().map_err(run_err)?;
    if eqs.is_empty() {
        let report = json!({
            "model": "age",
            "certified": false,
            "reason": "no interior equilibrium at the nominal dilution",
        });
        return Ok((report, false));
    }
    let idx = select_equilibrium(eqs.len(), target)?;
    let eq = &eqs[idx];
    let phi = match phi {
        Some(p) => p,
        None => match sys.find_phi(eq) {
            Some(p) => p,
            None => {
                let report = json!({
                    "model": "age",
                    "certified": false,
                    "reason": "no multiplier phi > 1 gives the margin condition a positive margin",
                    "equilibrium": eq3_json(idx, eq),
                });
                return Ok((report, false));
            }
        },
    };
    // A user-supplied phi <= 1 is a config mistake, not a refusal.
    let margin = sys.check_assumption_c(eq, phi).map_err(cfg_err)?;
    let margin_json = json!({
        "phi": phi,
        "holds": margin.holds,
        "margin": margin.margin,
        "sup_lhs": margin.sup_lhs,
        "arg_sup": margin.arg_sup,
        "rhs": margin.rhs,
    });
    if !margin.holds {
        let report = json!({
            "model": "age",
            "certified": false,
            "reason": "margin condition fails at the supplied multiplier",
            "equilibrium": eq3_json(idx, eq),
            "margin_condition": margin_json,
        });
        return Ok((report, false));
    }
    let consts = sys.lyapunov_constants(eq, phi).map_err(run_err)?;
    let acfg = AuditConfig { seed, ..AuditConfig::default() };
    let audit = analysis::lyapunov_audit3(sys, eq, fb, &consts, &acfg).map_err(run_err)?;
    if audit.violations > 0 {
        return Err(CliError::Numerical(format!(
            "derivative audit found {} violations (worst {} at {:?}) against certified constants; \
             this is a bug, not a property of the model",
            audit.violations, audit.worst_value, audit.worst_point
        )));
    }
    let report = json!({
        "model": "age",
        "certified": true,
        "equilibrium": eq3_json(idx, eq),
        "margin_condition": margin_json,
        "feedback": { "delta": fb.delta, "alpha": fb.alpha },
        "constants": {
            "lambda": consts.lambda,
            "phi": consts.phi,
            "big_b": consts.big_b,
            "omega": consts.omega,
            "a": consts.a,
            "r": consts.r,
            "c": consts.c,
            "big_r_lower": consts.big_r_lower,
            "big_r": consts.big_r,
        },
        "audit": audit_json(seed, &acfg, audit.violations, audit.worst_value),
    });
    Ok((report, true))
}

// ---------------------------------------------------------------------------
// simulate

pub fn simulate(cfg: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let run = cfg.run()?;
    reject_closed_d(run.mode, run.d, "run")?;
    match cfg.model.kind {
        ModelKind::Lumped => simulate_lumped(cfg, run, out),
        ModelKind::Age => simulate_age(cfg, run, out),
        ModelKind::AgePde => simulate_age_pde(cfg, run, out),
    }
}

fn write_trajectory_csv<const N: usize>(
    path: &Path,
    names: [&str; N],
    traj: &Trajectory<f64, N>,
) -> Result<(), CliError> {
    let inputs = traj
        .inputs
        .as_ref()
        .ok_or_else(|| CliError::Numerical("trajectory lacks the recorded dilution".into()))?;
    let mut header = String::from("t");
    for name in names {
        header.push(',');
        header.push_str(name);
    }
    header.push_str(",D");
    if traj.lyapunov.is_some() {
        header.push_str(",V");
    }
    let mut rows = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let mut row = Vec::with_capacity(N + 3);
        row.push(fmt_f64(traj.times[i]));
        for c in 0..N {
            row.push(fmt_f64(traj.states[i][c]));
        }
        row.push(fmt_f64(inputs[i]));
        if let Some(vs) = &traj.lyapunov {
            row.push(fmt_f64(vs[i]));
        }
        rows.push(row);
    }
    output::write_csv(path, &header, &rows)
}

/// Reports per-trajectory outcomes and fails only when nothing succeeded.
fn finish_batch(written: usize, failed: usize) -> Result<(), CliError> {
    if written == 0 {
        return Err(CliError::Numerical(format!(
            "all {failed} trajectories failed (details on stderr)"
        )));
    }
    if failed > 0 {
        eprintln!("{failed} of {} trajectories failed", written + failed);
    }
    Ok(())
}

fn simulate_lumped(cfg: &ScenarioConfig, run: &RunSpec, out: &Path) -> Result<(), CliError> {
    let sys = cfg.build_lumped()?;
    let icfg = cfg.integrator()?;
    let ics = initial_states::<2>(&run.initial)?;

    let mut closed = None;
    if run.mode == RunMode::Closed {
        let (fb, spec) = cfg.feedback()?;
        let eqs = sys.equilibria().map_err(run_err)?;
        let idx = select_equilibrium(eqs.len(), spec.target)?;
        let eq = eqs[idx];
        let consts = if run.record_lyapunov {
            match sys.lyapunov_constants(&eq) {
                Ok(k) => Some(k),
                Err(Error::AssumptionFailed(msg)) => {
                    println!("cannot record the certificate value: {msg}");
                    return Err(CliError::Refusal);
                }
                Err(e) => return Err(run_err(e)),
            }
        } else {
            None
        };
        closed = Some((eq, fb, consts));
    } else if run.record_lyapunov {
        return Err(CliError::Config(
            "run.record_lyapunov applies to closed-loop runs only".into(),
        ));
    }
    let d_open = run.d.unwrap_or(sys.d_star);

    let (mut written, mut failed) = (0, 0);
    for (i, ic) in ics.iter().enumerate() {
        let result = match &closed {
            Some((eq, fb, consts)) => {
                sim::simulate_closed2(&sys, eq, fb, *ic, run.t_final, &icfg, consts.as_ref())
            }
            None => sim::simulate_open2(&sys, d_open, *ic, run.t_final, &icfg),
        };
        match result {
            Ok(traj) => {
                let path = out.join(format!("trajectory_{i}.csv"));
                write_trajectory_csv(&path, ["X", "S"], &traj)?;
                println!(
                    "trajectory_{i}.csv: {} steps, ended {:?}",
                    traj.len(),
                    traj.termination
                );
                written += 1;
            }
            Err(e) => {
                eprintln!("trajectory {i} from {ic:?}: {e}");
                failed += 1;
            }
        }
    }
    finish_batch(written, failed)
}

fn simulate_age(cfg: &ScenarioConfig, run: &RunSpec, out: &Path) -> Result<(), CliError> {
    let sys = cfg.build_age()?;
    let icfg = cfg.integrator()?;
    let ics = initial_states::<3>(&run.initial)?;

    let mut closed = None;
    if run.mode == RunMode::Closed {
        let (fb, spec) = cfg.feedback()?;
        let eqs = sys.equilibria().map_err(run_err)?;
        let idx = select_equilibrium(eqs.len(), spec.target)?;
        let eq = eqs[idx];
        let consts = if run.record_lyapunov {
            let phi = match spec.phi.or_else(|| sys.find_phi(&eq)) {
                Some(p) => p,
                None => {
                    println!(
                        "cannot record the certificate value: no multiplier phi > 1 gives the \
                         margin condition a positive margin"
                    );
                    return Err(CliError::Refusal);
                }
            };
            match sys.lyapunov_constants(&eq, phi) {
                Ok(k) => Some(k),
                Err(Error::AssumptionFailed(msg)) => {
                    println!("cannot record the certificate value: {msg}");
                    return Err(CliError::Refusal);
                }
                Err(e) => return Err(run_err(e)),
            }
        } else {
            None
        };
        closed = Some((eq, fb, consts));
    } else if run.record_lyapunov {
        return Err(CliError::Config(
            "run.record_lyapunov applies to closed-loop runs only".into(),
        ));
    }
    let d_open = run.d.unwrap_or(sys.d_star);

    let (mut written, mut failed) = (0, 0);
    for (i, ic) in ics.iter().enumerate() {
        let result = match &closed {
            Some((eq, fb, consts)) => {
                sim::simulate_closed3(&sys, eq, fb, *ic, run.t_final, &icfg, consts.as_ref())
            }
            None => sim::simulate_open3(&sys, d_open, *ic, run.t_final, &icfg),
        };
        match result {
            Ok(traj) => {
                let path = out.join(format!("trajectory_{i}.csv"));
                write_trajectory_csv(&path, ["X", "Y", "S"], &traj)?;
                println!(
                    "trajectory_{i}.csv: {} steps, ended {:?}",
                    traj.len(),
                    traj.termination
                );
                written += 1;
            }
            Err(e) => {
                eprintln!("trajectory {i} from {ic:?}: {e}");
                failed += 1;
            }
        }
    }
    finish_batch(written, failed)
}

fn write_pde_csv(path: &Path, run: &PdeRun<f64>) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(run.times.len());
    for i in 0..run.times.len() {
        rows.push(vec![
            fmt_f64(run.times[i]),
            fmt_f64(run.x[i]),
            fmt_f64(run.y[i]),
            fmt_f64(run.s[i]),
            fmt_f64(run.d[i]),
        ]);
    }
    output::write_csv(path, "t,X,Y,S,D", &rows)
}

fn simulate_age_pde(cfg: &ScenarioConfig, run: &RunSpec, out: &Path) -> Result<(), CliError> {
    let sys = cfg.build_age()?;
    let pde = cfg.pde()?;
    if !run.initial.is_empty() {
        return Err(CliError::Config(
            "age_pde runs start from the `pde.initial` profile; leave run.initial empty".into(),
        ));
    }
    if run.record_lyapunov {
        return Err(CliError::Config(
            "run.record_lyapunov applies to the reduced models only".into(),
        ));
    }
    let (grid, kernel) = pde.build_grid(&sys, pde.n_cells)?;
    let f0 = pde.build_profile(&sys, &grid, &kernel)?;
    let dt = pde.dt_factor()? * grid.da;
    let result = match run.mode {
        RunMode::Open => age_pde::simulate_open_pde(
            &sys,
            &grid,
            &kernel,
            run.d.unwrap_or(sys.d_star),
            &f0,
            pde.s0,
            run.t_final,
            dt,
        ),
        RunMode::Closed => {
            let (fb, spec) = cfg.feedback()?;
            let eqs = sys.equilibria().map_err(run_err)?;
            let idx = select_equilibrium(eqs.len(), spec.target)?;
            age_pde::simulate_closed_pde(
                &sys,
                &eqs[idx],
                &fb,
                &grid,
                &kernel,
                &f0,
                pde.s0,
                run.t_final,
                dt,
            )
        }
    }
    .map_err(run_err)?;
    write_pde_csv(&out.join("trajectory_pde.csv"), &result)?;
    println!(
        "trajectory_pde.csv: {} time nodes, {} cells on [0, {}]",
        result.times.len(),
        grid.n_cells,
        fmt_f64(grid.a_max)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// portrait

pub fn portrait(cfg: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let n = match cfg.model.kind {
        ModelKind::Lumped => portrait_lumped(cfg, &out.join("portrait.csv"))?,
        ModelKind::Age => portrait_age(cfg, &out.join("portrait.csv"))?,
        ModelKind::AgePde => {
            return Err(CliError::Config(
                "portrait sweeps run on the reduced models; use kind \"lumped\" or \"age\"".into(),
            ))
        }
    };
    println!("portrait.csv: {n} trajectories");
    Ok(())
}

fn portrait_rows<const N: usize>(trajs: &[Trajectory<f64, N>]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (id, traj) in trajs.iter().enumerate() {
        for i in 0..traj.len() {
            let mut row = Vec::with_capacity(N + 2);
            row.push(id.to_string());
            row.push(fmt_f64(traj.times[i]));
            for c in 0..N {
                row.push(fmt_f64(traj.states[i][c]));
            }
            rows.push(row);
        }
    }
    rows
}

fn portrait_lumped(cfg: &ScenarioConfig, path: &Path) -> Result<usize, CliError> {
    let sweep = cfg.sweep()?;
    reject_closed_d(sweep.mode, sweep.d, "sweep")?;
    let sys = cfg.build_lumped()?;
    let icfg = cfg.integrator()?;
    let axes = sweep_axes(sweep, 2, "X0, S0")?;
    let eqs;
    let fb;
    let policy = match sweep.mode {
        RunMode::Open => Dilution2::Constant(sweep.d.unwrap_or(sys.d_star)),
        RunMode::Closed => {
            let (f, spec) = cfg.feedback()?;
            fb = f;
            eqs = sys.equilibria().map_err(run_err)?;
            let idx = select_equilibrium(eqs.len(), spec.target)?;
            Dilution2::Feedback { eq: &eqs[idx], cfg: &fb }
        }
    };
    let trajs = analysis::phase_portrait2(&sys, &policy, &axes[0], &axes[1], sweep.t_final, &icfg)
        .map_err(run_err)?;
    output::write_csv(path, "id,t,X,S", &portrait_rows(&trajs))?;
    Ok(trajs.len())
}

fn portrait_age(cfg: &ScenarioConfig, path: &Path) -> Result<usize, CliError> {
    let sweep = cfg.sweep()?;
    reject_closed_d(sweep.mode, sweep.d, "sweep")?;
    let sys = cfg.build_age()?;
    let icfg = cfg.integrator()?;
    let axes = sweep_axes(sweep, 3, "X0, Y0, S0")?;
    let eqs;
    let fb;
    let policy = match sweep.mode {
        RunMode::Open => Dilution3::Constant(sweep.d.unwrap_or(sys.d_star)),
        RunMode::Closed => {
            let (f, spec) = cfg.feedback()?;
            fb = f;
            eqs = sys.equilibria().map_err(run_err)?;
            let idx = select_equilibrium(eqs.len(), spec.target)?;
            Dilution3::Feedback { eq: &eqs[idx], cfg: &fb }
        }
    };
    let trajs =
        analysis::phase_portrait3(&sys, &policy, &axes[0], &axes[1], &axes[2], sweep.t_final, &icfg)
            .map_err(run_err)?;
    output::write_csv(path, "id,t,X,Y,S", &portrait_rows(&trajs))?;
    Ok(trajs.len())
}

// ---------------------------------------------------------------------------
// basin

fn basin_label(label: BasinLabel) -> String {
    match label {
        BasinLabel::ConvergedTo(i) => format!("equilibrium_{i}"),
        BasinLabel::Washout => "washout".into(),
        BasinLabel::Undecided => "undecided".into(),
    }
}

pub fn basin(cfg: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let sweep = cfg.sweep()?;
    reject_closed_d(sweep.mode, sweep.d, "sweep")?;
    let ball = sweep.ball.unwrap_or(1e-3);
    let path = out.join("basin.csv");

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let total = match cfg.model.kind {
        ModelKind::AgePde => {
            return Err(CliError::Config(
                "basin sweeps run on the reduced models; use kind \"lumped\" or \"age\"".into(),
            ))
        }
        ModelKind::Lumped => {
            let sys = cfg.build_lumped()?;
            let icfg = cfg.integrator()?;
            let axes = sweep_axes(sweep, 2, "X0, S0")?;
            let eqs = sys.equilibria().map_err(run_err)?;
            if eqs.is_empty() {
                return Err(CliError::Config(
                    "the configured model has no interior equilibrium to use as a basin target"
                        .into(),
                ));
            }
            let fb;
            let policy = match sweep.mode {
                RunMode::Open => Dilution2::Constant(sweep.d.unwrap_or(sys.d_star)),
                RunMode::Closed => {
                    let (f, spec) = cfg.feedback()?;
                    fb = f;
                    let idx = select_equilibrium(eqs.len(), spec.target)?;
                    Dilution2::Feedback { eq: &eqs[idx], cfg: &fb }
                }
            };
            let points = analysis::basin_sample2(
                &sys, &eqs, &policy, &axes[0], &axes[1], sweep.t_final, ball, &icfg,
            )
            .map_err(run_err)?;
            let mut rows = Vec::with_capacity(points.len());
            for p in &points {
                let label = basin_label(p.label);
                *counts.entry(label.clone()).or_insert(0) += 1;
                rows.push(vec![fmt_f64(p.init[0]), fmt_f64(p.init[1]), label]);
            }
            output::write_csv(&path, "X0,S0,label", &rows)?;
            points.len()
        }
        ModelKind::Age => {
            let sys = cfg.build_age()?;
            let icfg = cfg.integrator()?;
            let axes = sweep_axes(sweep, 3, "X0, Y0, S0")?;
            let eqs = sys.equilibria().map_err(run_err)?;
            if eqs.is_empty() {
                return Err(CliError::Config(
                    "the configured model has no interior equilibrium to use as a basin target"
                        .into(),
                ));
            }
            let fb;
            let policy = match sweep.mode {
                RunMode::Open => Dilution3::Constant(sweep.d.unwrap_or(sys.d_star)),
                RunMode::Closed => {
                    let (f, spec) = cfg.feedback()?;
                    fb = f;
                    let idx = select_equilibrium(eqs.len(), spec.target)?;
                    Dilution3::Feedback { eq: &eqs[idx], cfg: &fb }
                }
            };
            let points = analysis::basin_sample3(
                &sys, &eqs, &policy, &axes[0], &axes[1], &axes[2], sweep.t_final, ball, &icfg,
            )
            .map_err(run_err)?;
            let mut rows = Vec::with_capacity(points.len());
            for p in &points {
                let label = basin_label(p.label);
                *counts.entry(label.clone()).or_insert(0) += 1;
                rows.push(vec![
                    fmt_f64(p.init[0]),
                    fmt_f64(p.init[1]),
                    fmt_f64(p.init[2]),
                    label,
                ]);
            }
            output::write_csv(&path, "X0,Y0,S0,label", &rows)?;
            points.len()
        }
    };
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    println!("basin.csv: {total} points ({})", summary.join(", "));
    Ok(())
}

// ---------------------------------------------------------------------------
// pde-compare

pub fn pde_compare(cfg: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    if cfg.model.kind == ModelKind::Lumped {
        return Err(CliError::Config(
            "pde-compare needs the age-structured model (`kind: \"age\"` or \"age_pde\")".into(),
        ));
    }
    let sys = cfg.build_age()?;
    let pde = cfg.pde()?;
    let run = cfg.run()?;
    reject_closed_d(run.mode, run.d, "run")?;
    if !run.initial.is_empty() {
        return Err(CliError::Config(
            "pde-compare starts from the `pde.initial` profile; leave run.initial empty".into(),
        ));
    }
    let dt_factor = pde.dt_factor()?;
    let ladder = pde.refinement_ladder();
    if ladder.is_empty() {
        return Err(CliError::Config("pde.refinements must list at least one cell count".into()));
    }

    let mut closed = None;
    if run.mode == RunMode::Closed {
        let (fb, spec) = cfg.feedback()?;
        let eqs = sys.equilibria().map_err(run_err)?;
        let idx = select_equilibrium(eqs.len(), spec.target)?;
        closed = Some((eqs[idx], fb));
    }
    let d_open = run.d.unwrap_or(sys.d_star);

    // The reduced reference is integrated far tighter than the scheme's
    // truncation error, so the table measures the PDE discretization alone.
    let tight = IntegratorConfig { rel_tol: 1e-10, abs_tol: 1e-12, ..IntegratorConfig::default() };

    let mut prev_err: Option<f64> = None;
    let mut csv_rows = Vec::with_capacity(ladder.len());
    let mut table_rows = Vec::with_capacity(ladder.len());
    for &n in &ladder {
        let (grid, kernel) = pde.build_grid(&sys, n)?;
        let f0 = pde.build_profile(&sys, &grid, &kernel)?;
        if f0.iter().all(|v| *v == 0.0) {
            return zero_mass_report(&sys, pde.s0, closed.as_ref().map(|(eq, _)| eq), d_open);
        }
        let dt = dt_factor * grid.da;
        let pde_run = match &closed {
            Some((eq, fb)) => age_pde::simulate_closed_pde(
                &sys, eq, fb, &grid, &kernel, &f0, pde.s0, run.t_final, dt,
            ),
            None => age_pde::simulate_open_pde(
                &sys, &grid, &kernel, d_open, &f0, pde.s0, run.t_final, dt,
            ),
        }
        .map_err(run_err)?;

        // Reduced reference from this grid's own discrete initial moments,
        // so the comparison isolates the transport error from the moment
        // quadrature of the initial profile.
        let (x0, y0) = PdeState { f: f0, s: pde.s0 }.moments(&grid, &kernel);
        let ode = match &closed {
            Some((eq, fb)) => {
                sim::simulate_closed3(&sys, eq, fb, [x0, y0, pde.s0], run.t_final, &tight, None)
            }
            None => sim::simulate_open3(&sys, d_open, [x0, y0, pde.s0], run.t_final, &tight),
        }
        .map_err(run_err)?;

        let mut err = 0.0f64;
        for i in 0..pde_run.times.len() {
            let Some(reference) = ode.sample(pde_run.times[i]) else { continue };
            for (got, want) in [
                (pde_run.x[i], reference[0]),
                (pde_run.y[i], reference[1]),
                (pde_run.s[i], reference[2]),
            ] {
                err = err.max((got - want).abs() / want.abs().max(1e-6));
            }
        }
        let ratio = prev_err.map(|p| p / err);
        csv_rows.push(vec![
            n.to_string(),
            fmt_f64(err),
            ratio.map_or(String::new(), fmt_f64),
        ]);
        table_rows.push(vec![
            n.to_string(),
            format!("{err:.6e}"),
            ratio.map_or_else(|| "-".into(), |r| format!("{r:.3}")),
        ]);
        prev_err = Some(err);
        write_pde_csv(&out.join(format!("moments_{n}.csv")), &pde_run)?;
    }
    print!("{}", output::render_table(&["n_cells", "max_rel_err", "ratio"], &table_rows));
    output::write_csv(&out.join("pde_compare.csv"), "n_cells,max_rel_err,ratio", &csv_rows)?;
    Ok(())
}

/// The empty reactor needs no numerics: both descriptions keep it empty,
/// and the substrate drift is solvable in closed form, so the comparison
/// is reported analytically.
fn zero_mass_report(
    sys: &AgeSystem<f64>,
    s0: f64,
    closed_eq: Option<&AgeEquilibrium<f64>>,
    d_open: f64,
) -> Result<(), CliError> {
    println!("zero-mass initial profile: the reactor is empty and stays empty in both models.");
    println!("  PDE: the renewal inflow is mu(S)*Y = 0, so f = 0 and X(t) = Y(t) = 0 for all t.");
    println!("  ODE: (0, 0, S) is invariant, so its moments agree identically.");
    match closed_eq {
        None => {
            if d_open > 0.0 {
                println!(
                    "  substrate: S(t) = S_in + (S0 - S_in)*exp(-D*t) relaxes to the feed \
                     S_in = {} at rate D = {}.",
                    fmt_f64(sys.s_in),
                    fmt_f64(d_open)
                );
            } else {
                println!("  substrate: D = 0 holds S at S0 = {}.", fmt_f64(s0));
            }
        }
        Some(eq) => {
            if s0 > eq.s_star {
                println!(
                    "  substrate: above the design level S* = {} the boost is off, so D = 0 \
                     and S holds at S0 = {}.",
                    fmt_f64(eq.s_star),
                    fmt_f64(s0)
                );
            } else {
                println!(
                    "  substrate: the boost alone drives S up toward the design level \
                     S* = {}, where the dilution switches off.",
                    fmt_f64(eq.s_star)
                );
            }
        }
    }
    println!("the two drifts coincide exactly; no refinement table to build.");
    Ok(())
}

// ---------------------------------------------------------------------------
// repro

pub fn repro(target: ReproTarget, seed: u64, out: &Path) -> Result<(), CliError> {
    let (name, text) = match target {
        ReproTarget::Example1 => ("example1", include_str!("../scenarios/example1.json")),
        ReproTarget::Example2 => ("example2", include_str!("../scenarios/example2.json")),
        ReproTarget::Theorem2 => ("theorem2", include_str!("../scenarios/theorem2.json")),
    };
    let cfg = ScenarioConfig::parse(text)
        .map_err(|e| CliError::Numerical(format!("bundled scenario {name} is invalid: {e:?}")))?;
    let dir = out.join(name);
    match target {
        ReproTarget::Example1 => repro_example1(&cfg, seed, &dir),
        ReproTarget::Example2 => repro_example2(&cfg, seed, &dir),
        ReproTarget::Theorem2 => repro_theorem2(&cfg, &dir),
    }
}

fn repro_example1(cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<(), CliError> {
    let sys = cfg.build_lumped()?;
    let eqs = sys.equilibria().map_err(run_err)?;
    let (fb, _, target) = feedback_or_default(cfg)?;

    let mut eq_reports = Vec::with_capacity(eqs.len());
    for (i, eq) in eqs.iter().enumerate() {
        let rep = sys.classify_equilibrium(eq).map_err(run_err)?;
        eq_reports.push(json!({
            "index": i,
            "x_star": eq.x_star,
            "s_star": eq.s_star,
            "kappa": eq.kappa,
            "mu_star": eq.mu_star,
            "verdict": format!("{:?}", rep.verdict),
            "eig_signs": {
                "pos": rep.eig_signs.n_pos,
                "neg": rep.eig_signs.n_neg,
                "zero": rep.eig_signs.n_zero,
            },
            "consistent": rep.consistent,
        }));
    }
    output::write_json(&dir.join("equilibria.json"), &json!(eq_reports))?;

    let (cert, certified) = certificate_lumped(&sys, &fb, target, None, seed)?;
    output::write_json(&dir.join("certificate.json"), &cert)?;
    if !certified {
        return Err(CliError::Numerical(
            "the worked two-state culture failed to certify; its parameters are fixed, so this \
             is a bug"
                .into(),
        ));
    }

    let n_trajs = portrait_lumped(cfg, &dir.join("portrait.csv"))?;

    // Gain comparison from the worked initial state: the aggressive boost
    // settles the substrate sooner.
    let run = cfg.run()?;
    let icfg = cfg.integrator()?;
    let ic = initial_states::<2>(&run.initial)?[0];
    let idx = select_equilibrium(eqs.len(), target)?;
    let eq = &eqs[idx];
    let mut rows = Vec::new();
    let mut settles = Vec::new();
    for delta in [1.0, 100.0] {
        let fbv = FeedbackConfig::new(delta, fb.alpha).map_err(cfg_err)?;
        let traj =
            sim::simulate_closed2(&sys, eq, &fbv, ic, run.t_final, &icfg, None).map_err(run_err)?;
        let inputs = traj.inputs.as_ref().expect("closed-loop runs record the dilution");
        for i in 0..traj.len() {
            rows.push(vec![
                fmt_f64(delta),
                fmt_f64(traj.times[i]),
                fmt_f64(traj.states[i][0]),
                fmt_f64(traj.states[i][1]),
                fmt_f64(inputs[i]),
            ]);
        }
        settles.push((delta, substrate_settle(&traj, eq.s_star, 1e-3)));
    }
    output::write_csv(&dir.join("delta_compare.csv"), "delta,t,X,S,D", &rows)?;

    println!("example1 bundle in {}:", dir.display());
    println!("  equilibria.json: {} interior equilibria", eqs.len());
    println!("  certificate.json: certified = true");
    println!("  portrait.csv: {n_trajs} closed-loop trajectories");
    println!("  delta_compare.csv: gains 1 and 100 from ({}, {})", fmt_f64(ic[0]), fmt_f64(ic[1]));
    for (delta, settle) in &settles {
        println!(
            "  substrate settles within 1e-3 of S* = {} by t = {:.3} at delta = {delta}",
            fmt_f64(eq.s_star),
            settle
        );
    }
    Ok(())
}

/// Last time the substrate sits outside `tol` of `s_star`, on a 5 ms dense
/// sampling of the trajectory.
fn substrate_settle(traj: &Trajectory<f64, 2>, s_star: f64, tol: f64) -> f64 {
    let t_end = traj.end_time();
    let mut last_out = 0.0f64;
    let mut i = 0usize;
    loop {
        let t = (i as f64) * 0.005;
        if t > t_end {
            break;
        }
        if let Some(st) = traj.sample(t) {
            if (st[1] - s_star).abs() > tol {
                last_out = t;
            }
        }
        i += 1;
    }
    last_out
}

fn repro_example2(cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<(), CliError> {
    let sys = cfg.build_age()?;
    let eqs = sys.equilibria().map_err(run_err)?;
    let (fb, phi, target) = feedback_or_default(cfg)?;

    let mut eq_reports = Vec::with_capacity(eqs.len());
    for (i, eq) in eqs.iter().enumerate() {
        let rep = sys.classify_equilibrium(eq).map_err(run_err)?;
        eq_reports.push(json!({
            "index": i,
            "x_star": eq.x_star,
            "y_star": eq.y_star,
            "s_star": eq.s_star,
            "kappa": eq.kappa,
            "mu_star": eq.mu_star,
            "lambda": eq.lambda,
            "verdict": format!("{:?}", rep.verdict),
            "eig_signs": {
                "pos": rep.eig_signs.n_pos,
                "neg": rep.eig_signs.n_neg,
                "zero": rep.eig_signs.n_zero,
            },
            "consistent": rep.consistent,
        }));
    }
    output::write_json(&dir.join("equilibria.json"), &json!(eq_reports))?;

    let (cert, certified) = certificate_age(&sys, &fb, phi, target, seed)?;
    output::write_json(&dir.join("certificate.json"), &cert)?;
    if !certified {
        return Err(CliError::Numerical(
            "the worked three-state culture failed to certify; its parameters are fixed, so \
             this is a bug"
                .into(),
        ));
    }

    let n_trajs = portrait_age(cfg, &dir.join("portrait.csv"))?;

    println!("example2 bundle in {}:", dir.display());
    println!("  equilibria.json: {} interior equilibria", eqs.len());
    println!("  certificate.json: certified = true (phi = {})", fmt_f64(phi.unwrap_or(1.1)));
    println!("  portrait.csv: {n_trajs} closed-loop trajectories");
    Ok(())
}

fn repro_theorem2(cfg: &ScenarioConfig, dir: &Path) -> Result<(), CliError> {
    let sys = cfg.build_lumped()?;
    let eqs = sys.equilibria().map_err(run_err)?;
    let (fb, _, target) = feedback_or_default(cfg)?;
    let idx = select_equilibrium(eqs.len(), target)?;
    let eq = &eqs[idx];

    let margin = sys.check_assumption_a(eq);
    let s_bar = cfg.divergence.as_ref().and_then(|d| d.s_bar);
    let sc = sys.divergence_scenario(eq, s_bar).map_err(run_err)?;
    output::write_json(
        &dir.join("scenario.json"),
        &json!({
            "model": "lumped",
            "equilibrium": eq2_json(idx, eq),
            "growth_margin": {
                "holds": margin.holds,
                "margin": margin.margin,
                "arg_min": margin.arg_min,
            },
            "divergence_scenario": {
                "s_bar": sc.s_bar,
                "theta": sc.theta,
                "beta": sc.beta,
                "xbar2": sc.xbar2,
                "x1_0": sc.x1_0,
                "big_g": sc.big_g,
                "big_m": sc.big_m,
            },
        }),
    )?;

    // The same initial data diverges under the nominal constant dilution
    // and under the feedback law; both runs live in transformed
    // coordinates, where the estimate is linear.
    let run = cfg.run()?;
    let icfg = cfg.integrator()?;
    let z0 = [sc.x1_0, sc.xbar2];
    let x_0 = sys.from_z(eq, z0)[0];
    let open = sim::simulate_open_z2(&sys, eq, sys.d_star, z0, run.t_final, &icfg).map_err(run_err)?;
    let closed =
        sim::simulate_closed_z2(&sys, eq, &fb, z0, run.t_final, &icfg, None).map_err(run_err)?;

    let mut rows = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut decay = Vec::new();
    for (policy, traj) in [("open", &open), ("closed", &closed)] {
        for i in 0..traj.len() {
            let t = traj.times[i];
            let z = traj.states[i];
            let bound = sc.x1_0 - sc.theta * t;
            worst_excess = worst_excess.max(z[0] - bound);
            let state = sys.from_z(eq, z);
            rows.push(vec![
                policy.to_string(),
                fmt_f64(t),
                fmt_f64(z[0]),
                fmt_f64(bound),
                fmt_f64(state[0]),
                fmt_f64(state[1]),
            ]);
        }
        let x_t = sys.from_z(eq, traj.end_state())[0];
        decay.push((policy, x_t / x_0));
    }
    output::write_csv(&dir.join("divergence.csv"), "policy,t,x1,bound,X,S", &rows)?;

    println!("theorem2 bundle in {}:", dir.display());
    println!(
        "  scenario.json: growth margin {} (margin = {}), theta = {}",
        if margin.holds { "holds" } else { "fails" },
        fmt_f64(margin.margin),
        fmt_f64(sc.theta)
    );
    println!(
        "  divergence.csv: x1(t) <= x1(0) - theta*t with max excess {:.3e} (never positive)",
        worst_excess
    );
    for (policy, ratio) in decay {
        println!("  {policy} loop: X({})/X(0) = {:.3e}", fmt_f64(run.t_final), ratio);
    }
    Ok(())
}
