use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use niot_core::imageio::{build_forcing, save_float_field, save_grayscale, BitDepth, Normalization};
use niot_core::inpaint::{connectivity_check, run_niot, InitialGuess, RunReport, StoppingReason, WeightKind};
use serde::Serialize;
use serde_json::json;

use crate::config::{load_field, RunSpec};

/// Connectivity threshold reported for every run, relative to `max μ`.
pub const CONNECTIVITY_THRESHOLD: f64 = 1e-2;

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or unreadable/unwritable files.
    Config(anyhow::Error),
    /// A numerical solver failed.
    Solver(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Solver(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Solver(e) => e,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub output: PathBuf,
    pub stopping_reason: StoppingReason,
    pub iterations: usize,
    pub objective: f64,
    pub discrepancy: f64,
    pub update_norm: f64,
    pub connected: bool,
}

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

/// Loads inputs, runs the optimizer and writes all artifacts into
/// `spec.output`. Nothing is written unless the inputs load cleanly.
pub fn execute(spec: &RunSpec) -> Result<RunSummary, Failure> {
    spec.check_inputs().map_err(config_err)?;
    let observed = load_field(&spec.observed).map_err(config_err)?;
    let mask = spec.mask.as_deref().map(load_field).transpose().map_err(config_err)?;
    if spec.niot.weight_kind == WeightKind::Mask && mask.is_none() {
        log::info!("no mask given; using unit confidence weight");
    }
    let (fspec, total) = spec.forcing_spec().map_err(config_err)?;
    let forcing = build_forcing(&fspec, observed.grid(), total)
        .context("building the forcing")
        .map_err(config_err)?;
    let report = run_niot(&observed, &forcing, mask.as_ref(), &spec.niot)
        .context("optimization failed")
        .map_err(Failure::Solver)?;
    let connected = connectivity_check(&report.mu, &forcing, CONNECTIVITY_THRESHOLD);
    write_outputs(&spec.output, spec, &report, connected).map_err(config_err)?;
    Ok(RunSummary {
        output: spec.output.clone(),
        stopping_reason: report.stopping_reason,
        iterations: report.iterations,
        objective: report.final_parts.total,
        discrepancy: report.final_parts.discrepancy,
        update_norm: report.final_update_norm,
        connected,
    })
}

fn write_outputs(dir: &Path, spec: &RunSpec, report: &RunReport, connected: bool) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_float_field(&report.mu, &dir.join("mu.niotf"))?;
    save_float_field(&report.image, &dir.join("image.niotf"))?;
    save_float_field(&report.u, &dir.join("u.niotf"))?;
    let mu_scale = save_grayscale(
        &report.mu,
        &dir.join("mu.png"),
        Normalization::MaxScaled,
        BitDepth::Eight,
    )?;
    let image_scale = save_grayscale(
        &report.image,
        &dir.join("image.png"),
        Normalization::MaxScaled,
        BitDepth::Eight,
    )?;
    let cfg = &spec.niot;
    let grid = report.mu.grid();
    let doc = json!({
        "config": {
            "gamma": cfg.gamma,
            "lambda": cfg.lambda,
            "map": cfg.map_kind,
            "alpha": cfg.alpha,
            "pm": {
                "m": cfg.pm.m,
                "t_star": cfg.pm.t_star,
                "substeps": cfg.pm.substeps,
                "step_ratio": cfg.pm.step_ratio,
            },
            "weight": match cfg.weight_kind { WeightKind::Mask => "mask", WeightKind::One => "one" },
            "mu0": match cfg.mu0 {
                InitialGuess::Uniform(v) => json!({"uniform": v}),
                InitialGuess::FromObservation => json!("from_observation"),
            },
            "mu_plus_rel": cfg.mu_plus_rel,
            "dt0": cfg.dt0,
            "dt_min": cfg.dt_min,
            "dt_max": cfg.dt_max,
            "dt_grow": cfg.dt_grow,
            "stop_tol": cfg.stop_tol,
            "k_max": cfg.k_max,
            "elliptic": {
                "rtol": cfg.elliptic.rtol,
                "mu_min": cfg.elliptic.mu_min,
                "preconditioner": cfg.elliptic.preconditioner,
                "face_mean": cfg.elliptic.face_mean,
            },
            "total_mass": spec.total_mass,
            "text": spec.text,
        },
        "grid": {"nx": grid.nx(), "ny": grid.ny(), "h": grid.h()},
        "stopping_reason": report.stopping_reason,
        "iterations": report.iterations,
        "final": {
            "objective": report.final_parts.total,
            "energy": report.final_parts.energy,
            "mass": report.final_parts.mass,
            "discrepancy": report.final_parts.discrepancy,
            "update_norm": report.final_update_norm,
            "mu_max": report.mu.max(),
        },
        "connectivity": {"threshold": CONNECTIVITY_THRESHOLD, "connected": connected},
        "previews": {
            "normalization": "max_scaled",
            "bit_depth": 8,
            "mu_scale": mu_scale,
            "image_scale": image_scale,
        },
        "records": report.records,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| anyhow!(e))?;
    std::fs::write(dir.join("report.json"), text + "\n")?;
    Ok(())
}
