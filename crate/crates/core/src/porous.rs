//! Porous-media smoothing `ρ_t − div(ρ^{m−1}∇ρ) = 0` with zero-flux
//! boundary, advanced by backward Euler with Newton on a conservative
//! two-point finite-volume discretization, plus the closed-form Barenblatt
//! solution used to calibrate the exponent and the final time.
//!
//! Face diffusivities are the arithmetic mean of the neighbouring `ρ^{m−1}`.
//! The converged Jacobian of every substep is kept so the linearized map and
//! its transpose can be applied without re-running Newton.

use std::f64::consts::PI;

use crate::error::{NiotError, Result};
use crate::grid::{CellField, Grid2D};
use crate::sparse::{bicgstab, CsrMatrix, Ilu0Preconditioner};

#[derive(Debug, Clone, PartialEq)]
pub struct PmParams {
    pub m: f64,
    pub t_star: f64,
    pub substeps: usize,
    pub step_ratio: f64,
    pub alpha: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Relative tolerance of the inner Newton and adjoint linear solves.
    pub linear_rtol: f64,
}

impl Default for PmParams {
    fn default() -> Self {
        Self {
            m: 2.0,
            t_star: 1e-3,
            substeps: 5,
            step_ratio: 2.0,
            alpha: 1.0,
            newton_tol: 1e-10,
            newton_max: 30,
            linear_rtol: 1e-12,
        }
    }
}

impl PmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NiotError::InvalidParameter(msg));
        if !(self.m >= 1.0) {
            return bad(format!("porous-media exponent must be >= 1, got {}", self.m));
        }
        if !(self.t_star > 0.0) {
            return bad(format!("t_star must be positive, got {}", self.t_star));
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1".into());
        }
        if !(self.step_ratio >= 1.0) {
            return bad(format!("step_ratio must be >= 1, got {}", self.step_ratio));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 {
            return bad("Newton tolerance and iteration cap must be positive".into());
        }
        if !(self.linear_rtol > 0.0 && self.linear_rtol < 1.0) {
            return bad(format!("linear_rtol must lie in (0, 1), got {}", self.linear_rtol));
        }
        Ok(())
    }
}

/// Measure of the unit sphere `S^{n−1}` in `R^n`.
pub fn unit_sphere_measure(n: usize) -> Result<f64> {
    match n {
        1 => Ok(2.0),
        2 => Ok(2.0 * PI),
        3 => Ok(4.0 * PI),
        _ => Err(NiotError::InvalidParameter(format!(
            "dimension {n} not supported (1, 2 or 3)"
        ))),
    }
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫₀^{π/2} cos(θ)^{(m+1)/(m−1)} sin(θ)^{n−1} dθ`.
pub fn barenblatt_z(m: f64, n: usize) -> f64 {
    let pc = (m + 1.0) / (m - 1.0);
    let ps = n as f64 - 1.0;
    adaptive_simpson(
        &|t: f64| t.cos().max(0.0).powf(pc) * t.sin().powf(ps),
        0.0,
        PI / 2.0,
        1e-14,
    )
}

/// Self-similar solution of `ρ_t = div(ρ^{m−1}∇ρ)` in `R^n` with initial
/// datum `M δ₀`:
/// `ρ(t, x) = t^{−α} (A − B|x|² t^{−2β})₊^{1/(m−1)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarenblattProfile {
    pub m: f64,
    pub n: usize,
    pub mass: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub w_n: f64,
    pub z_mn: f64,
}

impl BarenblattProfile {
    pub fn new(m: f64, n: usize, mass: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(NiotError::InvalidParameter(format!(
                "Barenblatt profile needs m > 1, got {m}"
            )));
        }
        if !(mass > 0.0) {
            return Err(NiotError::InvalidParameter(format!(
                "mass must be positive, got {mass}"
            )));
        }
        let w_n = unit_sphere_measure(n)?;
        let nf = n as f64;
        let beta = 1.0 / (2.0 + (m - 1.0) * nf);
        let alpha = beta * nf;
        // Diffusivity ρ^{m−1} (not mρ^{m−1}) fixes B = β(m−1)/2.
        let b = beta * (m - 1.0) / 2.0;
        let z_mn = barenblatt_z(m, n);
        let a = (b.powf(nf / 2.0) * mass / (w_n * z_mn)).powf(2.0 * beta * (m - 1.0));
        Ok(Self {
            m,
            n,
            mass,
            alpha,
            beta,
            a,
            b,
            w_n,
            z_mn,
        })
    }

    /// Density at time `t` and distance `r = |x|` from the origin.
    pub fn eval_radial(&self, t: f64, r: f64) -> Result<f64> {
        check_time(t)?;
        let base = self.a - self.b * r * r * t.powf(-2.0 * self.beta);
        if base <= 0.0 {
            return Ok(0.0);
        }
        Ok(t.powf(-self.alpha) * base.powf(1.0 / (self.m - 1.0)))
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(NiotError::ShapeMismatch(format!(
                "point has {} coordinates, profile dimension is {}",
                x.len(),
                self.n
            )));
        }
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.eval_radial(t, r)
    }

    /// Support radius `t^β (A/B)^{1/2}`.
    pub fn radius(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(t.powf(self.beta) * self.b.powf(-0.5) * self.a.sqrt())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(NiotError::InvalidParameter(format!("time must be positive, got {t}")));
    }
    Ok(())
}

/// Support radius of the Barenblatt solution for `(m, n, mass)` at time `t`.
pub fn barenblatt_radius(t: f64, profile: &BarenblattProfile) -> Result<f64> {
    profile.radius(t)
}

pub fn barenblatt_eval(t: f64, x: &[f64], profile: &BarenblattProfile) -> Result<f64> {
    profile.eval(t, x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmExponents {
    pub m: f64,
    pub t_star: f64,
    /// Dimension of the channel cross-section, `d − 1`.
    pub n: usize,
}

/// Exponent `m` and time `t*` such that a point mass `M` spreads to the
/// radius `(M/κ)^{1/p}` of a Hagen–Poiseuille channel with conductivity
/// `κ r^p`, for every `M`.
pub fn pm_exponents(p: f64, kappa: f64, d: usize) -> Result<PmExponents> {
    if d != 2 && d != 3 {
        return Err(NiotError::InvalidParameter(format!(
            "ambient dimension must be 2 or 3, got {d}"
        )));
    }
    if !(kappa > 0.0) {
        return Err(NiotError::InvalidParameter(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let n = d - 1;
    let nf = n as f64;
    if !(p > nf) {
        return Err(NiotError::InvalidParameter(format!(
            "Poiseuille exponent must exceed {n}, got {p}"
        )));
    }
    let m = (2.0 + p - nf) / (p - nf);
    // Constants for unit mass; the identity holds for every mass by construction of m.
    let prof = BarenblattProfile::new(m, n, 1.0)?;
    let beta = prof.beta;
    let base = kappa.powf(-1.0 / p) * (prof.w_n * prof.z_mn).powf(beta * (m - 1.0)) * prof.b.powf(beta);
    Ok(PmExponents {
        m,
        t_star: base.powf(1.0 / beta),
        n,
    })
}

/// Geometric substep lengths `τ_k = t*(r−1)r^{k−1}/(r^S−1)` summing to `t*`.
pub fn substep_schedule(params: &PmParams) -> Vec<f64> {
    let s = params.substeps.max(1);
    let t = params.t_star;
    if s == 1 {
        return vec![t];
    }
    let r = params.step_ratio;
    let mut steps: Vec<f64> = if (r - 1.0).abs() < 1e-14 {
        vec![t / s as f64; s]
    } else {
        let denom = r.powi(s as i32) - 1.0;
        (0..s).map(|k| t * (r - 1.0) * r.powi(k as i32) / denom).collect()
    };
    let head: f64 = steps[..s - 1].iter().sum();
    steps[s - 1] = t - head;
    steps
}

#[derive(Debug, Clone)]
pub struct SubstepRecord {
    pub tau: f64,
    pub newton_iterations: usize,
    /// Scaled L¹ Newton residual before each iteration and after the last.
    pub residuals: Vec<f64>,
}

/// Record of one forward porous-media solve, retaining the converged
/// Jacobian of every substep.
#[derive(Debug, Clone)]
pub struct NewtonTrace {
    grid: Grid2D,
    pub substeps: Vec<SubstepRecord>,
    jacobians: Vec<CsrMatrix>,
    linear_rtol: f64,
}

impl NewtonTrace {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn n_substeps(&self) -> usize {
        self.jacobians.len()
    }
}

struct PmStepper {
    grid: Grid2D,
    m: f64,
}

impl PmStepper {
    #[inline]
    fn phi(&self, r: f64) -> f64 {
        if self.m == 1.0 {
            1.0
        } else {
            r.max(0.0).powf(self.m - 1.0)
        }
    }

    #[inline]
    fn dphi(&self, r: f64) -> f64 {
        if self.m == 1.0 {
            0.0
        } else if self.m == 2.0 {
            1.0
        } else {
            (self.m - 1.0) * r.max(1e-300).powf(self.m - 2.0)
        }
    }

    fn residual(&self, rho: &[f64], old: &[f64], tau: f64, out: &mut [f64]) {
        let g = &self.grid;
        let c = tau / g.cell_area();
        for (i, o) in out.iter_mut().enumerate() {
            *o = rho[i] - old[i];
        }
        for f in 0..g.n_faces() {
            let (a, b) = g.face_cells(f);
            let d = 0.5 * (self.phi(rho[a]) + self.phi(rho[b]));
            let flux = c * d * (rho[a] - rho[b]);
            out[a] += flux;
            out[b] -= flux;
        }
    }

    fn jacobian(&self, rho: &[f64], tau: f64) -> CsrMatrix {
        let g = &self.grid;
        let c = tau / g.cell_area();
        let mut rows: Vec<Vec<(usize, f64)>> = (0..g.n_cells()).map(|i| vec![(i, 1.0)]).collect();
        for f in 0..g.n_faces() {
            let (a, b) = g.face_cells(f);
            let d = 0.5 * (self.phi(rho[a]) + self.phi(rho[b]));
            let diff = rho[a] - rho[b];
            let (da, db) = (0.5 * self.dphi(rho[a]), 0.5 * self.dphi(rho[b]));
            // flux_ab = c·d·(ρa − ρb) enters row a with +, row b with −.
            let dflux_da = c * (d + da * diff);
            let dflux_db = c * (-d + db * diff);
            rows[a].push((a, dflux_da));
            rows[a].push((b, dflux_db));
            rows[b].push((a, -dflux_da));
            rows[b].push((b, -dflux_db));
        }
        CsrMatrix::from_rows(rows)
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn solve_linear(a: &CsrMatrix, b: &[f64], rtol: f64) -> Result<Vec<f64>> {
    let prec = Ilu0Preconditioner::new(a)?;
    let mut x = vec![0.0; a.n()];
    bicgstab(a, b, &mut x, &prec, rtol, 20 * a.n().max(50))?;
    Ok(x)
}

/// Advances `mu` over the default geometric substep schedule and returns
/// `α ρ(t*)` together with the Newton trace.
pub fn pm_forward(mu: &CellField, params: &PmParams) -> Result<(CellField, NewtonTrace)> {
    pm_forward_with_schedule(mu, params, &substep_schedule(params))
}

/// As [`pm_forward`] with an explicit list of substep lengths.
pub fn pm_forward_with_schedule(mu: &CellField, params: &PmParams, steps: &[f64]) -> Result<(CellField, NewtonTrace)> {
    params.validate()?;
    mu.ensure_nonnegative()?;
    let grid = *mu.grid();
    let stepper = PmStepper { grid, m: params.m };
    let n = grid.n_cells();
    let mut rho = mu.values().to_vec();
    let mut records = Vec::with_capacity(steps.len());
    let mut jacobians = Vec::with_capacity(steps.len());
    let mut res = vec![0.0; n];
    let mut trial_res = vec![0.0; n];
    for (k, &tau) in steps.iter().enumerate() {
        let old = rho.clone();
        let scale = l1(&old).max(f64::MIN_POSITIVE);
        let mut residuals = Vec::new();
        let mut iterations = 0;
        stepper.residual(&rho, &old, tau, &mut res);
        let mut rnorm = l1(&res);
        residuals.push(rnorm / scale);
        let mut converged = rnorm <= params.newton_tol * scale;
        // One polishing step after the tolerance is met pushes the residual,
        // and with it the mass defect, to round-off.
        let mut polish = converged && rnorm > 1e-15 * scale;
        while !converged || polish {
            if iterations >= params.newton_max {
                return Err(NiotError::NewtonNoConvergence {
                    step: k,
                    residual: rnorm / scale,
                });
            }
            iterations += 1;
            let jac = stepper.jacobian(&rho, tau);
            let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
            let delta = solve_linear(&jac, &rhs, params.linear_rtol).map_err(|e| match e {
                NiotError::NoConvergence { residual, .. } => NiotError::NewtonNoConvergence { step: k, residual },
                other => other,
            })?;
            let mut s = 1.0;
            let mut trial = vec![0.0; n];
            let mut accepted = false;
            for _ in 0..=20 {
                for i in 0..n {
                    trial[i] = (rho[i] + s * delta[i]).max(0.0);
                }
                stepper.residual(&trial, &old, tau, &mut trial_res);
                if l1(&trial_res) < rnorm {
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                if polish {
                    break;
                }
                return Err(NiotError::NewtonNoConvergence {
                    step: k,
                    residual: rnorm / scale,
                });
            }
            rho.copy_from_slice(&trial);
            std::mem::swap(&mut res, &mut trial_res);
            rnorm = l1(&res);
            residuals.push(rnorm / scale);
            if polish {
                polish = false;
            } else if rnorm <= params.newton_tol * scale {
                converged = true;
                polish = rnorm > 1e-15 * scale;
            }
        }
        jacobians.push(stepper.jacobian(&rho, tau));
        records.push(SubstepRecord {
            tau,
            newton_iterations: iterations,
            residuals,
        });
    }
    let image = CellField::new(grid, rho.iter().map(|r| params.alpha * r).collect())?;
    Ok((
        image,
        NewtonTrace {
            grid,
            substeps: records,
            jacobians,
            linear_rtol: params.linear_rtol,
        },
    ))
}

/// `I′(μ) v`: the linearized map applied forward through the substeps.
pub fn pm_tangent_apply(v: &CellField, trace: &NewtonTrace, params: &PmParams) -> Result<CellField> {
    if v.grid() != trace.grid() {
        return Err(NiotError::ShapeMismatch(
            "tangent direction and trace grids differ".into(),
        ));
    }
    let mut w = v.values().to_vec();
    for (k, jac) in trace.jacobians.iter().enumerate() {
        w = solve_linear(jac, &w, trace.linear_rtol).map_err(|e| NiotError::AdjointSolve {
            step: k,
            source: Box::new(e),
        })?;
    }
    CellField::new(*trace.grid(), w.into_iter().map(|x| params.alpha * x).collect())
}

/// `I′(μ)ᵀ r`: one transposed Jacobian solve per substep in reverse order.
pub fn pm_adjoint_apply(residual: &CellField, trace: &NewtonTrace, params: &PmParams) -> Result<CellField> {
    if residual.grid() != trace.grid() {
        return Err(NiotError::ShapeMismatch("residual and trace grids differ".into()));
    }
    let mut w: Vec<f64> = residual.values().iter().map(|x| params.alpha * x).collect();
    for (k, jac) in trace.jacobians.iter().enumerate().rev() {
        let jt = jac.transpose();
        w = solve_linear(&jt, &w, trace.linear_rtol).map_err(|e| NiotError::AdjointSolve {
            step: k,
            source: Box::new(e),
        })?;
    }
    CellField::new(*trace.grid(), w)
}

/// `α μ`.
pub fn identity_map(mu: &CellField, alpha: f64) -> CellField {
    mu.scaled(alpha)
}
