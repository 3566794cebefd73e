//! Network inpainting driver: objective `J = E + M_γ + λ D`, its gradient,
//! and a mirror-descent loop with adaptive step control.

use std::collections::VecDeque;

use crate::elliptic::{solve_poisson_from, SolverSettings};
use crate::error::{NiotError, Result};
use crate::grid::{CellField, ForcingPair};
use crate::maps::{build_map, ImageMap, MapEvaluation, MapSettings};
use crate::porous::PmParams;
use crate::regularizer::{dissipation_energy_stable, mass_term, transport_gradient, RegParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// `W = 1 − mask`; falls back to `W ≡ 1` when no mask is supplied.
    Mask,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialGuess {
    Uniform(f64),
    FromObservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiotConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub map_kind: String,
    pub alpha: f64,
    pub pm: PmParams,
    pub weight_kind: WeightKind,
    pub mu0: InitialGuess,
    pub mu_plus_rel: f64,
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_grow: f64,
    pub stop_tol: f64,
    pub k_max: usize,
    pub elliptic: SolverSettings,
}

impl Default for NiotConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            lambda: 0.0,
            map_kind: "identity".into(),
            alpha: 1.0,
            pm: PmParams::default(),
            weight_kind: WeightKind::Mask,
            mu0: InitialGuess::Uniform(1.0),
            mu_plus_rel: 1e-5,
            dt0: 1e-2,
            dt_min: 1e-6,
            dt_max: 1.0,
            dt_grow: 1.05,
            stop_tol: 1e-5,
            k_max: 20000,
            elliptic: SolverSettings::default(),
        }
    }
}

impl NiotConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NiotError::InvalidParameter(msg));
        self.reg_params().validate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt0 && self.dt0 <= self.dt_max) {
            return bad(format!(
                "time steps must satisfy 0 < dt_min <= dt0 <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt0, self.dt_max
            ));
        }
        if !(self.dt_grow >= 1.0) {
            return bad(format!("dt_grow must be >= 1, got {}", self.dt_grow));
        }
        if !(self.stop_tol > 0.0) {
            return bad(format!("stop_tol must be positive, got {}", self.stop_tol));
        }
        if !(self.mu_plus_rel >= 0.0) {
            return bad(format!("mu_plus_rel must be >= 0, got {}", self.mu_plus_rel));
        }
        if let InitialGuess::Uniform(v) = self.mu0 {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("uniform initial value must be finite and >= 0, got {v}"));
            }
        }
        self.elliptic.validate()?;
        self.image_map()?;
        Ok(())
    }

    pub fn reg_params(&self) -> RegParams {
        RegParams {
            gamma: self.gamma,
            mu_min: self.elliptic.mu_min,
            face_mean: self.elliptic.face_mean.clone(),
        }
    }

    pub fn image_map(&self) -> Result<Box<dyn ImageMap>> {
        build_map(
            &self.map_kind,
            &MapSettings {
                alpha: self.alpha,
                pm: self.pm.clone(),
            },
        )
    }
}

/// `W = 1 − mask` for a binary mask with 1 on the corrupted region.
pub fn confidence_from_mask(mask: &CellField) -> Result<CellField> {
    mask.ensure_binary(1e-12)?;
    Ok(mask.map(|m| if m > 0.5 { 0.0 } else { 1.0 }))
}

/// `½ Σ (image − observed)² W h²`.
pub fn discrepancy(image: &CellField, observed: &CellField, weight: &CellField) -> Result<f64> {
    image.same_grid(observed)?;
    image.same_grid(weight)?;
    let s: f64 = image
        .values()
        .iter()
        .zip(observed.values())
        .zip(weight.values())
        .map(|((i, o), w)| if *w == 0.0 { 0.0 } else { w * (i - o) * (i - o) })
        .sum();
    Ok(0.5 * s * image.grid().cell_area())
}

/// `W (image − observed)`, exactly zero wherever `W` is.
fn weighted_residual(image: &CellField, observed: &CellField, weight: &CellField) -> Result<CellField> {
    let r = image.zip_map(observed, |i, o| i - o)?;
    r.zip_map(weight, |r, w| if w == 0.0 { 0.0 } else { w * r })
}

/// Objective terms at one conductivity.
#[derive(Debug, Clone)]
pub struct ObjectiveParts {
    pub energy: f64,
    pub mass: f64,
    pub discrepancy: f64,
    pub total: f64,
    pub u: CellField,
}

#[derive(Debug, Clone)]
pub struct TotalGradient {
    /// `(−|∇u|² + μ^{γ−1})/2 + λ I′ᵀ W (I(μ) − observed)`, with the mass
    /// term evaluated at `max(μ, μ_min)`.
    pub grad: CellField,
    /// The gradient without the `μ^{γ−1}/2` term.
    pub smooth: CellField,
    pub parts: ObjectiveParts,
}

/// Everything needed to score a conductivity and, if accepted, differentiate
/// at it.
struct Evaluation {
    mu: CellField,
    parts: ObjectiveParts,
    map: Option<MapEvaluation>,
}

struct Problem<'a> {
    observed: &'a CellField,
    weight: &'a CellField,
    forcing: &'a ForcingPair,
    cfg: &'a NiotConfig,
    reg: RegParams,
    map: Option<Box<dyn ImageMap>>,
}

impl<'a> Problem<'a> {
    fn new(
        observed: &'a CellField,
        weight: &'a CellField,
        forcing: &'a ForcingPair,
        cfg: &'a NiotConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        observed.same_grid(weight)?;
        observed.same_grid(forcing.fplus())?;
        let map = if cfg.lambda > 0.0 { Some(cfg.image_map()?) } else { None };
        Ok(Self {
            observed,
            weight,
            forcing,
            cfg,
            reg: cfg.reg_params(),
            map,
        })
    }

    fn evaluate(&self, mu: CellField, guess: Option<&CellField>) -> Result<Evaluation> {
        let sol = solve_poisson_from(&mu, self.forcing, &self.cfg.elliptic, guess)?;
        let energy = dissipation_energy_stable(&mu, &sol.u, self.forcing, &self.reg)?;
        let mass = mass_term(&mu, &self.reg);
        let (discrepancy, map) = match &self.map {
            Some(m) => {
                let ev = m.evaluate(&mu)?;
                (discrepancy(&ev.image, self.observed, self.weight)?, Some(ev))
            }
            None => (0.0, None),
        };
        let total = energy + mass + self.cfg.lambda * discrepancy;
        Ok(Evaluation {
            mu,
            parts: ObjectiveParts {
                energy,
                mass,
                discrepancy,
                total,
                u: sol.u,
            },
            map,
        })
    }

    fn gradient(&self, ev: &Evaluation) -> Result<TotalGradient> {
        let mut smooth = transport_gradient(&ev.mu, &ev.parts.u, &self.reg)?;
        if let Some(m) = &ev.map {
            let r = weighted_residual(&m.image, self.observed, self.weight)?;
            let back = m.linearization.adjoint(&r)?;
            let lambda = self.cfg.lambda;
            smooth = smooth.zip_map(&back, |a, b| a + lambda * b)?;
        }
        let e = self.reg.gamma - 1.0;
        let floor = self.reg.mu_min;
        let grad = smooth.zip_map(&ev.mu, |s, m| s + 0.5 * m.max(floor).powf(e))?;
        Ok(TotalGradient {
            grad,
            smooth,
            parts: ev.parts.clone(),
        })
    }
}

/// Gradient of `J` at `mu` (one elliptic solve, plus one map evaluation and
/// one adjoint application when `λ > 0`).
pub fn total_gradient(
    mu: &CellField,
    observed: &CellField,
    weight: &CellField,
    forcing: &ForcingPair,
    cfg: &NiotConfig,
) -> Result<TotalGradient> {
    mu.ensure_nonnegative()?;
    let problem = Problem::new(observed, weight, forcing, cfg)?;
    let ev = problem.evaluate(mu.clone(), None)?;
    problem.gradient(&ev)
}

/// `J(μ)` evaluated the same way the optimizer does.
pub fn objective(
    mu: &CellField,
    observed: &CellField,
    weight: &CellField,
    forcing: &ForcingPair,
    cfg: &NiotConfig,
) -> Result<ObjectiveParts> {
    mu.ensure_nonnegative()?;
    let problem = Problem::new(observed, weight, forcing, cfg)?;
    Ok(problem.evaluate(mu.clone(), None)?.parts)
}

/// The step-free update direction `μ^{2/γ} ∇J`. The mass term is applied
/// with the combined power `μ^{2/γ+γ−1}`, which vanishes at `μ = 0`.
pub fn descent_direction(mu: &CellField, g: &TotalGradient, gamma: f64) -> Result<CellField> {
    let p = 2.0 / gamma;
    let q = p + gamma - 1.0;
    mu.zip_map(
        &g.smooth,
        |m, s| {
            if m <= 0.0 {
                0.0
            } else {
                m.powf(p) * s + 0.5 * m.powf(q)
            }
        },
    )
}

/// `μ − dt d`; rejects the step if any cell would become negative.
pub fn apply_direction(mu: &CellField, direction: &CellField, dt: f64) -> Result<CellField> {
    let next = mu.zip_map(direction, |m, d| m - dt * d)?;
    let negative = next.values().iter().filter(|&&v| v < 0.0).count();
    if negative > 0 {
        return Err(NiotError::StepInadmissible { negative });
    }
    Ok(next)
}

/// `μ − dt μ^{2/γ} grad`.
pub fn mirror_step(mu: &CellField, grad: &CellField, dt: f64, cfg: &NiotConfig) -> Result<CellField> {
    if !(dt > 0.0) {
        return Err(NiotError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    mu.ensure_nonnegative()?;
    let p = 2.0 / cfg.gamma;
    let d = mu.zip_map(grad, |m, g| if m <= 0.0 { 0.0 } else { m.powf(p) * g })?;
    apply_direction(mu, &d, dt)
}

fn update_norm(direction: &CellField) -> f64 {
    direction.values().iter().map(|v| v.abs()).sum::<f64>() * direction.grid().cell_area()
}

pub fn initial_mu(observed: &CellField, cfg: &NiotConfig) -> Result<CellField> {
    match cfg.mu0 {
        InitialGuess::Uniform(v) => Ok(CellField::constant(*observed.grid(), v)),
        InitialGuess::FromObservation => {
            let map = cfg.image_map()?;
            let base = map.invert(observed).ok_or_else(|| {
                NiotError::InvalidParameter(format!(
                    "initial data from the observation needs an invertible map; '{}' has none",
                    map.name()
                ))
            })?;
            let plus = cfg.mu_plus_rel * observed.max().max(0.0);
            Ok(base.map(|v| v.max(0.0) + plus))
        }
    }
}

/// True iff every sink cell is 4-connected to some source cell through cells
/// with `μ ≥ threshold_rel · max μ`.
pub fn connectivity_check(mu: &CellField, forcing: &ForcingPair, threshold_rel: f64) -> bool {
    let grid = *mu.grid();
    let level = threshold_rel * mu.max();
    let open = |c: usize| mu.values()[c] >= level;
    let mut seen = vec![false; grid.n_cells()];
    let mut queue = VecDeque::new();
    for (c, &f) in forcing.fplus().values().iter().enumerate() {
        if f > 0.0 && open(c) {
            seen[c] = true;
            queue.push_back(c);
        }
    }
    while let Some(c) = queue.pop_front() {
        for nb in grid.neighbors(c) {
            if !seen[nb] && open(nb) {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    forcing
        .fminus()
        .values()
        .iter()
        .enumerate()
        .all(|(c, &f)| f <= 0.0 || seen[c])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingReason {
    ToleranceMet,
    KMax,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IterationRecord {
    /// Number of accepted steps before this attempt.
    pub k: usize,
    pub dt: f64,
    pub objective: f64,
    pub energy: f64,
    pub mass: f64,
    pub discrepancy: f64,
    /// Update norm at the iterate this attempt started from.
    pub update_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub records: Vec<IterationRecord>,
    pub stopping_reason: StoppingReason,
    pub iterations: usize,
    pub final_update_norm: f64,
    pub final_parts: ObjectiveParts,
    pub mu: CellField,
    pub image: CellField,
    pub u: CellField,
}

/// Confidence weight for a run: `1 − mask` or all ones.
pub fn weight_for(observed: &CellField, mask: Option<&CellField>, kind: WeightKind) -> Result<CellField> {
    match (kind, mask) {
        (WeightKind::Mask, Some(m)) => {
            observed.same_grid(m)?;
            confidence_from_mask(m)
        }
        _ => Ok(CellField::constant(*observed.grid(), 1.0)),
    }
}

/// Mirror descent on `J` from `initial_mu`, halving `dt` on rejected steps
/// and growing it after accepted ones.
pub fn run_niot(
    observed: &CellField,
    forcing: &ForcingPair,
    mask: Option<&CellField>,
    cfg: &NiotConfig,
) -> Result<RunReport> {
    let weight = weight_for(observed, mask, cfg.weight_kind)?;
    // Data the weight discards must not reach the iterates, including μ₀.
    let trusted = observed.zip_map(&weight, |o, w| if w == 0.0 { 0.0 } else { o })?;
    let mu0 = initial_mu(&trusted, cfg)?;
    run_niot_from(mu0, observed, forcing, &weight, cfg)
}

/// As [`run_niot`] with an explicit initial conductivity and weight.
pub fn run_niot_from(
    mu0: CellField,
    observed: &CellField,
    forcing: &ForcingPair,
    weight: &CellField,
    cfg: &NiotConfig,
) -> Result<RunReport> {
    mu0.ensure_nonnegative()?;
    mu0.same_grid(observed)?;
    let problem = Problem::new(observed, weight, forcing, cfg)?;
    let mut current = problem.evaluate(mu0, None)?;
    let mut grad = problem.gradient(&current)?;
    let mut direction = descent_direction(&current.mu, &grad, cfg.gamma)?;
    let mut norm = update_norm(&direction);
    let mut dt = cfg.dt0;
    let mut records = Vec::new();
    let mut k = 0;
    let reason = loop {
        if norm < cfg.stop_tol {
            break StoppingReason::ToleranceMet;
        }
        if k >= cfg.k_max {
            break StoppingReason::KMax;
        }
        if dt < cfg.dt_min {
            break StoppingReason::StepUnderflow;
        }
        let trial = match apply_direction(&current.mu, &direction, dt) {
            Ok(mu) => Some(problem.evaluate(mu, Some(&current.parts.u))?),
            Err(NiotError::StepInadmissible { .. }) => None,
            Err(e) => return Err(e),
        };
        let accepted = matches!(&trial, Some(t) if t.parts.total < current.parts.total);
        let parts = trial.as_ref().map(|t| &t.parts);
        records.push(IterationRecord {
            k,
            dt,
            objective: parts.map_or(f64::NAN, |p| p.total),
            energy: parts.map_or(f64::NAN, |p| p.energy),
            mass: parts.map_or(f64::NAN, |p| p.mass),
            discrepancy: parts.map_or(f64::NAN, |p| p.discrepancy),
            update_norm: norm,
            accepted,
        });
        if accepted {
            current = trial.expect("accepted trial exists");
            grad = problem.gradient(&current)?;
            direction = descent_direction(&current.mu, &grad, cfg.gamma)?;
            norm = update_norm(&direction);
            k += 1;
            dt = (dt * cfg.dt_grow).min(cfg.dt_max);
            log::debug!("k={k} J={:.10e} norm={norm:.3e} dt={dt:.3e}", current.parts.total);
        } else {
            dt *= 0.5;
        }
    };
    log::info!("stopped after {k} steps ({reason:?}), update norm {norm:.3e}");
    let image = match &current.map {
        Some(m) => m.image.clone(),
        None => cfg.image_map()?.evaluate(&current.mu)?.image,
    };
    Ok(RunReport {
        records,
        stopping_reason: reason,
        iterations: k,
        final_update_norm: norm,
        final_parts: current.parts.clone(),
        u: current.parts.u.clone(),
        mu: current.mu,
        image,
    })
}
