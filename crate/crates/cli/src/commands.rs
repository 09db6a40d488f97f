use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use multichemo::bubbles::{collapse_experiment, CollapseExperiment, Verdict};
use multichemo::checks::{duality_check, gradient_check_trials};
use multichemo::dynamics::{initial_state, run, Diagnostics, SimState};
use multichemo::measure::{critical_mass_average, critical_mass_individual, AverageCriticalMass};
use multichemo::snapshot::{write_binary, write_csv};
use multichemo::{Field64, Green64, Grid64, Measure64, SpeciesDensity};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::SnapshotFormat;
use crate::validate::{InitialData, Source};

pub const EXIT_OK: u8 = 0;
pub const EXIT_COLLAPSE: u8 = 3;
pub const EXIT_CHECK_FAILED: u8 = 4;

/// Shortest round-trip form, exponent notation for very small or large values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn csv_row(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = values.into_iter().map(num).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn measure_json(measure: &Measure64) -> serde_json::Value {
    json!(measure.atoms().iter().map(|a| json!({"alpha": a.alpha, "weight": a.weight})).collect::<Vec<_>>())
}

fn grid_json(grid: &Grid64) -> serde_json::Value {
    json!({"nx": grid.nx(), "ny": grid.ny(), "h": grid.h(), "cells": grid.len(), "area": grid.area()})
}

pub fn trajectory_csv(records: &[Diagnostics<f64>], species: usize) -> String {
    let mut out = String::from("time,L,F,J_or_I");
    for j in 0..species {
        out.push_str(&format!(",mass_{j}"));
    }
    out.push_str(",total_mass,min_rho,max_rho,max_abs_v\n");
    for d in records {
        let row = [d.time, d.l, d.f, d.j_or_i].into_iter().chain(d.masses.iter().copied()).chain([
            d.total_mass,
            d.min_rho,
            d.max_rho,
            d.max_abs_v,
        ]);
        out.push_str(&csv_row(row));
    }
    out
}

fn write_field(dir: &Path, stem: &str, grid: &Grid64, field: &Field64, format: SnapshotFormat) -> Result<()> {
    if matches!(format, SnapshotFormat::Binary | SnapshotFormat::Both) {
        let mut buf = Vec::new();
        write_binary(&mut buf, grid, field)?;
        write_file(&dir.join(format!("{stem}.bin")), &buf)?;
    }
    if matches!(format, SnapshotFormat::Csv | SnapshotFormat::Both) {
        let mut buf = Vec::new();
        write_csv(&mut buf, grid, field)?;
        write_file(&dir.join(format!("{stem}.csv")), &buf)?;
    }
    Ok(())
}

fn write_state(dir: &Path, prefix: &str, grid: &Grid64, state: &SimState<f64>, format: SnapshotFormat) -> Result<()> {
    write_field(dir, &format!("{prefix}_v"), grid, &state.v, format)?;
    if let Some(rho) = &state.rho {
        for (j, f) in rho.species().iter().enumerate() {
            write_field(dir, &format!("{prefix}_rho{j}"), grid, f, format)?;
        }
    }
    Ok(())
}

pub fn simulate(source: &Source, base: &Path, out: &Path) -> Result<u8> {
    let grid = source.grid()?;
    let measure = source.measure()?;
    let (config, format) = source.simulation(&measure)?;
    let initial = source.initial(&grid, &measure, config.regime, base)?;

    let started = Instant::now();
    let green = Green64::new(&grid)?;
    let (rho, v) = match (config.regime.evolves_density(), initial) {
        (true, InitialData::Profile(p)) => (Some(SpeciesDensity::replicate(&grid, &p, measure.len())?), None),
        (true, InitialData::Files(fs)) if fs.len() == 1 => {
            (Some(SpeciesDensity::replicate(&grid, &fs[0], measure.len())?), None)
        }
        (true, InitialData::Files(fs)) => (Some(SpeciesDensity::new(&grid, fs)?), None),
        (false, InitialData::Profile(p)) => (None, Some(green.solve(&p)?)),
        (false, InitialData::Files(mut fs)) => (None, fs.pop()),
    };
    let state = initial_state(rho, v, &config, &measure, &green)?;
    let trajectory = run(state, &config, &measure, &green)?;
    let wall = started.elapsed().as_secs_f64();

    create_dir(out)?;
    write_file(&out.join("trajectory.csv"), trajectory_csv(&trajectory.records, measure.len()).as_bytes())?;
    let snaps = out.join("snapshots");
    create_dir(&snaps)?;
    let mut index = String::from("index,time\n");
    for (i, s) in trajectory.snapshots.iter().enumerate() {
        write_state(&snaps, &format!("t{i:03}"), &grid, s, format)?;
        index.push_str(&format!("{i},{}\n", num(s.time)));
    }
    write_file(&snaps.join("index.csv"), index.as_bytes())?;
    write_state(&snaps, "final", &grid, &trajectory.final_state, format)?;

    let meta = json!({
        "command": "simulate",
        "config": source.config,
        "regime": config.regime,
        "grid": grid_json(&grid),
        "measure": measure_json(&measure),
        "termination": trajectory.termination,
        "steps": trajectory.steps,
        "final_time": trajectory.final_state.time,
        "records": trajectory.records.len(),
        "snapshots": trajectory.snapshots.len(),
        "wall_time_seconds": wall,
        "threads": rayon::current_num_threads(),
    });
    write_json(&out.join("metadata.json"), &meta)?;
    println!(
        "{} steps to t = {}, termination: {}",
        trajectory.steps,
        trajectory.final_state.time,
        serde_json::to_string(&trajectory.termination)?
    );
    Ok(if trajectory.termination.is_collapse() { EXIT_COLLAPSE } else { EXIT_OK })
}

pub fn duality(source: &Source, out: &Path) -> Result<u8> {
    let grid = source.grid()?;
    let measure = source.measure()?;
    let lambda = source.lambda()?;
    let plan = source.checks(100, 1e-10)?;

    let green = Green64::new(&grid)?;
    let report = duality_check(&green, &measure, lambda, plan.trials, source.seed(), plan.zero)?;
    let passed = report.max_gap_lj <= plan.tolerance && report.max_gap_lf <= plan.tolerance;
    let summary = json!({
        "command": "duality-check",
        "config": source.config,
        "grid": grid_json(&grid),
        "measure": measure_json(&measure),
        "lambda": lambda,
        "seed": source.seed(),
        "trials": report.trials,
        "zero": plan.zero,
        "max_gap_lj": report.max_gap_lj,
        "max_gap_lf": report.max_gap_lf,
        "tolerance": plan.tolerance,
        "passed": passed,
    });
    create_dir(out)?;
    write_json(&out.join("duality.json"), &summary)?;
    println!(
        "duality over {} trials: |L-J| <= {:e}, |L-F| <= {:e}: {}",
        report.trials,
        report.max_gap_lj,
        report.max_gap_lf,
        if passed { "pass" } else { "FAIL" }
    );
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn gradient(source: &Source, out: &Path) -> Result<u8> {
    let grid = source.grid()?;
    let measure = source.measure()?;
    let lambda = source.lambda()?;
    let plan = source.checks(20, 1e-5)?;

    let report =
        gradient_check_trials(&grid, &measure, lambda, plan.variant, plan.trials, source.seed(), plan.step, plan.zero)?;
    let passed = report.max_relative_error <= plan.tolerance;
    let summary = json!({
        "command": "gradient-check",
        "config": source.config,
        "grid": grid_json(&grid),
        "measure": measure_json(&measure),
        "lambda": lambda,
        "seed": source.seed(),
        "variant": plan.variant,
        "step": plan.step,
        "pairs": report.pairs,
        "max_relative_error": report.max_relative_error,
        "tolerance": plan.tolerance,
        "passed": passed,
        "checks": report.checks,
    });
    create_dir(out)?;
    write_json(&out.join("gradient.json"), &summary)?;
    println!(
        "gradient check over {} pairs: max relative error {:e}: {}",
        report.pairs,
        report.max_relative_error,
        if passed { "pass" } else { "FAIL" }
    );
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub const BUBBLE_COLUMNS: &str = "lambda,epsilon,log_inv_eps2,int_eu,int_eu_reference,int_eu_u,ratio_eu_u,int_eu_geu,ratio_eu_geu,int_psi_log_psi,int_psi_gpsi,free_energy,projection_error";

pub fn bubble_csv(experiments: &[CollapseExperiment<f64>]) -> String {
    let mut out = format!("{BUBBLE_COLUMNS}\n");
    for e in experiments {
        for r in &e.scan.records {
            out.push_str(&csv_row([
                e.lambda,
                r.epsilon,
                r.log_inv_eps2,
                r.int_eu,
                r.int_eu_reference,
                r.int_eu_u,
                r.ratio_eu_u,
                r.int_eu_geu,
                r.ratio_eu_geu,
                r.int_psi_log_psi,
                r.int_psi_gpsi,
                r.free_energy,
                r.projection_error,
            ]));
        }
    }
    out
}

/// Number of verdict changes along the mass sweep sorted by `λ`.
pub fn sign_changes(experiments: &[CollapseExperiment<f64>]) -> usize {
    let mut sorted: Vec<(f64, Verdict)> = experiments.iter().map(|e| (e.lambda, e.verdict)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.windows(2).filter(|w| w[0].1 != w[1].1).count()
}

pub fn bubble_scan(source: &Source, out: &Path) -> Result<u8> {
    let grid = source.grid()?;
    let measure = source.measure()?;
    let plan = source.bubbles(&grid)?;

    let green = Green64::new(&grid)?;
    let experiments = plan
        .lambdas
        .par_iter()
        .map(|&l| collapse_experiment(&green, &measure, l, plan.eta, &plan.epsilons))
        .collect::<multichemo::Result<Vec<_>>>()?;
    let runs: Vec<_> = experiments
        .iter()
        .map(|e| {
            json!({
                "lambda": e.lambda,
                "lambda_over_pi": e.lambda / std::f64::consts::PI,
                "slope": e.fit.slope,
                "intercept": e.fit.intercept,
                "stderr": e.fit.stderr,
                "rms_residual": e.fit.rms_residual,
                "points": e.fit.points,
                "predicted_slope": e.predicted_slope,
                "verdict": e.verdict,
            })
        })
        .collect();
    let band = &experiments[0].scan.band;
    let summary = json!({
        "command": "bubble-scan",
        "config": source.config,
        "grid": grid_json(&grid),
        "measure": measure_json(&measure),
        "eta": plan.eta,
        "epsilons": plan.epsilons,
        "band": {"lo": band.lo, "hi": band.hi, "mass": band.mass, "moment": band.moment, "constant": band.constant()},
        "runs": runs,
        "sign_changes": sign_changes(&experiments),
    });
    create_dir(out)?;
    write_file(&out.join("bubble_scan.csv"), bubble_csv(&experiments).as_bytes())?;
    write_json(&out.join("bubble_scan.json"), &summary)?;
    for e in &experiments {
        println!(
            "lambda = {:.4}pi: slope {:.4} (predicted {:.4}), verdict {}",
            e.lambda / std::f64::consts::PI,
            e.fit.slope,
            e.predicted_slope,
            serde_json::to_string(&e.verdict)?.trim_matches('"')
        );
    }
    Ok(EXIT_OK)
}

pub fn critical_mass_json(measure: &Measure64) -> Result<serde_json::Value> {
    let pi = std::f64::consts::PI;
    let (bar, bar_over_pi) = match critical_mass_average(measure) {
        AverageCriticalMass::Value(v) => (json!(v), json!(v / pi)),
        AverageCriticalMass::NotCovered => (json!("not covered"), serde_json::Value::Null),
    };
    let double_bar = critical_mass_individual(measure)?;
    Ok(json!({
        "measure": measure_json(measure),
        "lambda_bar": bar,
        "lambda_bar_over_pi": bar_over_pi,
        "lambda_double_bar": double_bar,
        "lambda_double_bar_over_pi": double_bar / pi,
    }))
}

pub fn critical_mass(measure: &Measure64, out: Option<&PathBuf>) -> Result<u8> {
    let value = critical_mass_json(measure)?;
    let text = serde_json::to_string_pretty(&value)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("critical_mass.json"), format!("{text}\n").as_bytes())?;
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}")?;
    Ok(EXIT_OK)
}
