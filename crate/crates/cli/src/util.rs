//! File IO helpers shared by the subcommands.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use ned_core::flow::{LinearSystem, NonlinearPerturbation};
use ned_core::io::{PerturbationSpec, SystemSpec, TransformSpec};
use ned_core::kinematics::{transform_linear, transform_nonlinearity, KinematicTransform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

/// 17 significant digits: round-trip exact for f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))
}

pub fn load_system(path: &Path) -> Result<LinearSystem, CliError> {
    let text = read_to_string(path)?;
    SystemSpec::from_json(&text)
        .and_then(SystemSpec::into_system)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn load_perturbation(path: &Path) -> Result<NonlinearPerturbation, CliError> {
    let text = read_to_string(path)?;
    PerturbationSpec::from_json(&text)
        .and_then(PerturbationSpec::into_perturbation)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn load_transform(path: &Path) -> Result<KinematicTransform, CliError> {
    let text = read_to_string(path)?;
    TransformSpec::from_json(&text)
        .and_then(TransformSpec::into_transform)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// Apply an optional kinematic transform to the system.
pub fn maybe_transform_system(
    sys: LinearSystem,
    transform: &Option<KinematicTransform>,
) -> Result<LinearSystem, CliError> {
    match transform {
        None => Ok(sys),
        Some(tr) => transform_linear(&sys, tr)
            .map_err(|e| CliError::Parse(format!("transform: {e}"))),
    }
}

pub fn maybe_transform_perturbation(
    pert: NonlinearPerturbation,
    transform: &Option<KinematicTransform>,
) -> Result<NonlinearPerturbation, CliError> {
    match transform {
        None => Ok(pert),
        Some(tr) => transform_nonlinearity(&pert, tr)
            .map_err(|e| CliError::Parse(format!("transform: {e}"))),
    }
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Other(format!("serialize {name}: {e}")))?;
    fs::write(&path, text + "\n")
        .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

pub fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_float(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(&path, out)
        .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

/// Rows `tau, xi_1..xi_n`; a non-numeric first row is treated as a header.
pub fn read_points(path: &Path, dim: usize) -> Result<Vec<(f64, DVector<f64>)>, CliError> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Err(_) if i == 0 => continue, // header row
            Err(e) => {
                return Err(CliError::Parse(format!(
                    "{}:{}: bad number: {e}",
                    path.display(),
                    i + 1
                )))
            }
            Ok(vals) => {
                if vals.len() != dim + 1 {
                    return Err(CliError::Parse(format!(
                        "{}:{}: expected {} columns (tau, xi_1..xi_{dim}), got {}",
                        path.display(),
                        i + 1,
                        dim + 1,
                        vals.len()
                    )));
                }
                out.push((vals[0], DVector::from_vec(vals[1..].to_vec())));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Parse(format!(
            "{}: no points found",
            path.display()
        )));
    }
    Ok(out)
}

/// Deterministic sample points: base times in the front quarter of the
/// window, states away from the origin.
pub fn generate_points(dim: usize, n: usize, t_max: f64, seed: u64) -> Vec<(f64, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let tau = rng.gen_range(0.0..t_max / 4.0);
        let mut xi = DVector::zeros(dim);
        for i in 0..dim {
            xi[i] = rng.gen_range(-2.0..2.0f64);
        }
        if xi.norm() >= 0.75 {
            out.push((tau, xi));
        }
    }
    out
}
