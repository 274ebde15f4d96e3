//! The pipelines behind each subcommand.

use std::path::Path;
use std::time::Instant;

use gradiform::dynamics::{
    ensemble, graham_estimate, homotopy_lyapunov, integrate_rk4_every, lyapunov_check,
    orthogonality_residual, stationary_density, trajectory_seed, transformed_lyapunov, Axis, SdeConfig,
};
use gradiform::forms::decompose;
use gradiform::gradientize::{
    potential_via_transform, solve_consistency_constant_with, solve_general, solve_symmetrizer_with,
    ConstantOptions, GeneralSolveConfig, GradientizeVerdict,
};
use gradiform::integrability::{classify, loop_integral_panels};
use gradiform::sampling::halton_ball;
use gradiform::zoo::{build, zoo_list, ScalarFn, ZooSystem};
use gradiform::{JacobianScheme, Loop, MatrixFamily, OneForm, QuadratureRule};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::config::{PotentialSource, RunConfig};
use crate::error::CliError;
use crate::report::{to_value, Report};

fn system(cfg: &RunConfig) -> Result<ZooSystem, CliError> {
    build(&cfg.system).map_err(|e| CliError::Config(e.to_string()))
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn vec_json(v: &DVector<f64>) -> Value {
    to_value(&v.iter().copied().collect::<Vec<_>>())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    to_value(
        &m.row_iter()
            .map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
}

fn finish(mut report: Report, results: Value, start: Instant) -> Report {
    report.results = results;
    report.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    report
}

/// Closedness, Frobenius defect and circulation around coordinate circles.
pub fn cmd_classify(cfg: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let sys = system(cfg)?;
    let samples = cfg.sampling.points(sys.dim);
    let mut rep = classify(&sys.field, &samples, cfg.tolerances.closedness).map_err(numerical)?;
    let form = OneForm::new(sys.field.clone());
    let rule = QuadratureRule::gauss_legendre(cfg.loops.nodes);
    for a in 0..sys.dim {
        for b in (a + 1)..sys.dim {
            let gamma = Loop::coordinate_circle(sys.dim, a, b, cfg.loops.radius);
            let v = loop_integral_panels(&form, &gamma, &rule, cfg.loops.panels).map_err(numerical)?;
            rep.loop_integrals.push((gamma.id().to_string(), v));
        }
    }
    let results = json!({
        "system": sys.spec,
        "verdict": rep.verdict.to_string(),
        "closedness": rep,
    });
    Ok(finish(Report::new("classify", cfg), results, start))
}

/// Potential, exact and antiexact parts at every sample.
pub fn cmd_decompose(cfg: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let sys = system(cfg)?;
    let form = OneForm::new(sys.field.clone());
    let quad = cfg.quadrature.build();
    let mut per_sample = Vec::new();
    let (mut max_res, mut max_radial, mut max_exact, mut max_anti) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for x in cfg.sampling.points(sys.dim) {
        let d = decompose(&form, &x, quad.as_ref()).map_err(numerical)?;
        max_res = max_res.max(d.reconstruction_residual);
        max_radial = max_radial.max(d.radial_violation());
        max_exact = max_exact.max(d.exact_part.amax());
        max_anti = max_anti.max(d.antiexact_part.amax());
        per_sample.push(json!({
            "point": vec_json(&d.point),
            "potential": d.potential,
            "exact_part": vec_json(&d.exact_part),
            "antiexact_part": vec_json(&d.antiexact_part),
            "reconstruction_residual": d.reconstruction_residual,
            "radial_violation": d.radial_violation(),
        }));
    }
    let results = json!({
        "system": sys.spec,
        "summary": {
            "samples": per_sample.len(),
            "max_reconstruction_residual": max_res,
            "max_radial_violation": max_radial,
            "max_exact_norm": max_exact,
            "max_antiexact_norm": max_anti,
        },
        "samples": per_sample,
    });
    Ok(finish(Report::new("decompose", cfg), results, start))
}

fn constant_options(cfg: &RunConfig) -> ConstantOptions {
    ConstantOptions {
        tol: cfg.tolerances.closedness,
        consistency_tol: cfg.tolerances.consistency,
        draws: cfg.solver.draws,
        seed: cfg.sampling.seed,
        ..ConstantOptions::default()
    }
}

/// Jacobian at the origin and its largest deviation over the samples.
fn linearization(sys: &ZooSystem, samples: &[DVector<f64>]) -> Result<(DMatrix<f64>, f64), CliError> {
    let j0 = sys
        .field
        .jacobian(&DVector::zeros(sys.dim), JacobianScheme::Auto)
        .map_err(numerical)?;
    let mut dev = 0.0f64;
    for x in samples {
        let j = sys.field.jacobian(x, JacobianScheme::Auto).map_err(numerical)?;
        dev = dev.max((j - &j0).amax());
    }
    Ok((j0, dev))
}

fn rank(v: GradientizeVerdict) -> u8 {
    match v {
        GradientizeVerdict::Gradientized => 3,
        GradientizeVerdict::ConsistencyOnlySolution => 2,
        GradientizeVerdict::NotConverged => 1,
        GradientizeVerdict::Infeasible => 0,
    }
}

/// Constant-case solvers on the linearization at the origin, optionally
/// followed by the state-dependent collocation solver.
pub fn cmd_gradientize(cfg: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let sys = system(cfg)?;
    let samples = cfg.sampling.points(sys.dim);
    let (j, deviation) = linearization(&sys, &samples)?;
    let opts = constant_options(cfg);
    let consistency = solve_consistency_constant_with(&j, &opts).map_err(numerical)?;
    let symmetrizer = solve_symmetrizer_with(&j, &opts).map_err(numerical)?;
    let mut report = Report::new("gradientize", cfg);
    report
        .timings
        .insert("constant_seconds".into(), start.elapsed().as_secs_f64());

    let best = [&symmetrizer, &consistency]
        .into_iter()
        .max_by_key(|r| rank(r.verdict))
        .expect("two reports");
    let mut verdict = best.verdict;
    let potential = match (&best.chosen_d, best.verdict) {
        (Some(d), GradientizeVerdict::Gradientized) => {
            let quad = QuadratureRule::gauss_legendre(16);
            let values: Vec<Value> = samples
                .iter()
                .take(8)
                .map(|y| {
                    let x = d * y;
                    match potential_via_transform(&sys.field, d, &x, &quad, cfg.tolerances.closedness) {
                        Ok(v) => json!({"y": vec_json(y), "x": vec_json(&x), "value": v}),
                        Err(e) => json!({"y": vec_json(y), "x": vec_json(&x), "refused": e.to_string()}),
                    }
                })
                .collect();
            json!({"method": best.method, "d": mat_json(d), "values": values})
        }
        _ => Value::Null,
    };

    let general = if cfg.solver.general {
        let t = Instant::now();
        let family = MatrixFamily::new(sys.dim, cfg.solver.degree);
        let mut gcfg = GeneralSolveConfig::new(halton_ball(
            cfg.solver.samples.max(1),
            sys.dim,
            cfg.sampling.radius,
            cfg.sampling.seed,
        ));
        gcfg.max_iter = cfg.solver.max_iter;
        gcfg.tol = cfg.tolerances.solver;
        gcfg.barrier_weight = cfg.solver.barrier_weight;
        let rep = solve_general(&sys.field, &family, &gcfg).map_err(numerical)?;
        report.timings.insert("general_seconds".into(), t.elapsed().as_secs_f64());
        if rank(rep.verdict) > rank(verdict) {
            verdict = rep.verdict;
        }
        json!({
            "degree": cfg.solver.degree,
            "parameters": family.param_count(),
            "report": rep,
        })
    } else {
        Value::Null
    };

    let results = json!({
        "system": sys.spec,
        "verdict": verdict,
        "jacobian_at_origin": mat_json(&j),
        "jacobian_max_deviation": deviation,
        "constant_jacobian": deviation <= cfg.tolerances.closedness * (1.0 + j.amax()),
        "consistency_equation": constant_json(&consistency),
        "symmetrizer": constant_json(&symmetrizer),
        "potential": potential,
        "general": general,
    });
    report.results = results;
    report.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    Ok(report)
}

fn constant_json(r: &gradiform::ConstantSolveReport) -> Value {
    json!({
        "method": r.method,
        "verdict": r.verdict,
        "nullspace_basis": r.nullspace_basis.iter().map(mat_json).collect::<Vec<_>>(),
        "identity_adjoined": r.identity_adjoined,
        "chosen_d": r.chosen_d.as_ref().map(mat_json),
        "checks": r.checks,
        "identity_residual": r.identity_residual,
        "det_j": r.det_j,
        "det_j_is_one": r.det_j_is_one,
        "symmetrizer": r.symmetrizer.as_ref().map(mat_json),
        "symmetrizer_min_eigenvalue": r.symmetrizer_min_eigenvalue,
    })
}

fn potential_fn(cfg: &RunConfig, sys: &ZooSystem) -> Result<(ScalarFn, Value), CliError> {
    let source = cfg
        .potential_source
        .ok_or_else(|| CliError::MissingPotential("set potential_source to analytic, homotopy or transform".into()))?;
    let quad = || QuadratureRule::gauss_legendre(32);
    match source {
        PotentialSource::Analytic => sys
            .potential
            .clone()
            .map(|v| (v, json!({"source": "analytic"})))
            .ok_or_else(|| CliError::MissingPotential(format!("system `{}` has no closed-form potential", sys.spec.name))),
        PotentialSource::Homotopy => {
            let v = homotopy_lyapunov(&sys.field, quad());
            Ok((std::sync::Arc::new(v) as ScalarFn, json!({"source": "homotopy"})))
        }
        PotentialSource::Transform => {
            let samples = cfg.sampling.points(sys.dim);
            let (j, _) = linearization(sys, &samples)?;
            let rep = solve_symmetrizer_with(&j, &constant_options(cfg)).map_err(numerical)?;
            let d = match (rep.verdict, rep.chosen_d) {
                (GradientizeVerdict::Gradientized, Some(d)) => d,
                _ => {
                    return Err(CliError::MissingPotential(format!(
                        "no constant gradientizing matrix for `{}` (symmetrizer verdict: {})",
                        sys.spec.name, rep.verdict
                    )))
                }
            };
            let v = transformed_lyapunov(&sys.field, &d, quad()).map_err(numerical)?;
            Ok((std::sync::Arc::new(v) as ScalarFn, json!({"source": "transform", "d": mat_json(&d)})))
        }
    }
}

/// Runge-Kutta trajectories of the flow and descent of the chosen potential.
pub fn cmd_simulate(cfg: &RunConfig, traj_dir: Option<&Path>) -> Result<Report, CliError> {
    let start = Instant::now();
    let sys = system(cfg)?;
    let (v, source) = potential_fn(cfg, &sys)?;
    let sim = &cfg.simulation;
    let initial: Vec<DVector<f64>> = match &sim.initial {
        Some(list) => list
            .iter()
            .map(|p| {
                if p.len() == sys.dim {
                    Ok(DVector::from_column_slice(p))
                } else {
                    Err(CliError::Config(format!("initial point {p:?} is not of dimension {}", sys.dim)))
                }
            })
            .collect::<Result<_, _>>()?,
        None => halton_ball(sim.trajectories.max(1), sys.dim, sim.initial_radius, sim.master_seed),
    };
    let identity = DMatrix::identity(sys.dim, sys.dim);
    let mut per_traj = Vec::new();
    let mut all_monotone = true;
    let mut violations = 0usize;
    for (k, x0) in initial.iter().enumerate() {
        let traj = integrate_rk4_every(&sys.flow, x0, sim.dt, sim.steps, sim.record_every).map_err(numerical)?;
        if traj.aborted {
            return Err(CliError::Numerical(format!(
                "trajectory {k} from {:?} left the finite range",
                x0.as_slice()
            )));
        }
        let lyap = lyapunov_check(v.as_ref(), &sys.flow, &traj, cfg.tolerances.lyapunov).map_err(numerical)?;
        let ortho = orthogonality_residual(&sys.flow, v.as_ref(), &identity, x0).map_err(numerical)?;
        all_monotone &= lyap.monotone;
        violations += usize::from(!lyap.monotone);
        if let Some(dir) = traj_dir {
            let path = dir.join(format!("traj_{k:04}.csv"));
            std::fs::create_dir_all(dir)?;
            traj.save_csv(&path).map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
        }
        per_traj.push(json!({
            "x0": vec_json(x0),
            "final": vec_json(traj.last()),
            "recorded_states": traj.len(),
            "lyapunov": lyap,
            "orthogonality_residual_at_x0": ortho,
        }));
    }
    let results = json!({
        "system": sys.spec,
        "potential": source,
        "summary": {
            "trajectories": per_traj.len(),
            "all_monotone": all_monotone,
            "violations": violations,
        },
        "trajectories": per_traj,
    });
    Ok(finish(Report::new("simulate", cfg), results, start))
}

const MAX_LISTED_CELLS: usize = 10_000;

/// Euler-Maruyama ensembles per noise level and `-eps ln P` estimates.
pub fn cmd_graham(cfg: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let sys = system(cfg)?;
    let sim = &cfg.simulation;
    if sim.eps.is_empty() {
        return Err(CliError::Config("simulation.eps must list at least one noise level".into()));
    }
    let axes: Vec<Axis> = match sim.grid.len() {
        1 => vec![sim.grid[0]; sys.dim],
        n if n == sys.dim => sim.grid.clone(),
        n => {
            return Err(CliError::Config(format!(
                "simulation.grid has {n} axes for a system of dimension {}",
                sys.dim
            )))
        }
    };
    let initial = match &sim.initial {
        Some(list) if !list.is_empty() => (0..sim.ensemble_size)
            .map(|k| {
                let p = &list[k % list.len()];
                if p.len() == sys.dim {
                    Ok(DVector::from_column_slice(p))
                } else {
                    Err(CliError::Config(format!("initial point {p:?} is not of dimension {}", sys.dim)))
                }
            })
            .collect::<Result<Vec<_>, _>>()?,
        _ => halton_ball(sim.ensemble_size.max(1), sys.dim, sim.initial_radius, sim.master_seed),
    };
    let mut report = Report::new("graham", cfg);
    let mut blocks = Vec::new();
    for (k, &eps) in sim.eps.iter().enumerate() {
        let t = Instant::now();
        let sde = SdeConfig::new(eps, sim.sde_dt, sim.sde_steps).with_record_every(sim.sde_record_every);
        let ens = ensemble(&sys.flow, &initial, &sde, trajectory_seed(sim.master_seed, k as u64)).map_err(numerical)?;
        if ens.any_aborted() {
            return Err(CliError::Numerical(format!("an ensemble member diverged at eps = {eps}")));
        }
        let len = ens.trajectories[0].len();
        let burn_in = (len as f64 * sim.burn_in_fraction) as usize;
        let density = stationary_density(&ens, &axes, Some(burn_in)).map_err(numerical)?;
        let est = graham_estimate(&density, eps).map_err(numerical)?;
        let window = (axes.iter().map(|a| a.bins).min().unwrap_or(1) / 10).max(1);
        let minima: Vec<Value> = est
            .local_minima(window)
            .into_iter()
            .map(|i| to_value(&est.cell_center(i)))
            .collect();
        let r = sim.compare_radius;
        let sup_error = sys.potential.as_ref().and_then(|v| {
            est.sup_error(
                &|c: &[f64]| v(&DVector::from_column_slice(c)),
                &|c: &[f64]| c.iter().all(|x| x.abs() <= r),
            )
        });
        let cells = (est.values.len() <= MAX_LISTED_CELLS).then(|| {
            est.values
                .iter()
                .enumerate()
                .map(|(i, v)| json!({"center": est.cell_center(i), "count": density.counts[i], "estimate": v}))
                .collect::<Vec<_>>()
        });
        blocks.push(json!({
            "eps": eps,
            "trajectories": ens.trajectories.len(),
            "burn_in_states": burn_in,
            "samples": density.total,
            "dropped": density.dropped,
            "occupied_cells": density.occupied_cells(),
            "minima": minima,
            "sup_error_vs_analytic": sup_error,
            "cells": cells,
        }));
        report.timings.insert(format!("eps_{k}_seconds"), t.elapsed().as_secs_f64());
    }
    let results = json!({
        "system": sys.spec,
        "grid": axes,
        "estimates": blocks,
    });
    report.results = results;
    report.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    Ok(report)
}

pub fn cmd_zoo_list(cfg: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    Ok(finish(Report::new("zoo-list", cfg), json!({ "systems": zoo_list() }), start))
}
