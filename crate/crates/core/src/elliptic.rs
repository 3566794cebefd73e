//! Weighted Neumann Poisson problem `−div((μ + μ_min)∇u) = f⁺ − f⁻` with
//! zero normal flux on the boundary, discretized by two-point finite volumes.

use crate::error::{NiotError, Result};
use crate::face_mean::{face_mean_by_name, FaceMean, Harmonic};
use crate::grid::{cell_divergence, face_coefficient, face_gradient, CellField, FaceField, ForcingPair, Grid2D};
use crate::sparse::{build_preconditioner, pcg, preconditioner_names, CsrMatrix, LinearOperator, Preconditioner};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub rtol: f64,
    /// Offset added to the conductivity before face averaging.
    pub mu_min: f64,
    /// `None` means `10 · nx · ny`.
    pub max_iterations: Option<usize>,
    /// Name of a registered preconditioner (`none`, `diagonal`, `ic0`, `mic0`, `ilu0`).
    pub preconditioner: String,
    /// Name of a registered face mean (`harmonic`, `arithmetic`).
    pub face_mean: String,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            mu_min: 1e-8,
            max_iterations: None,
            preconditioner: "ic0".to_string(),
            face_mean: "harmonic".to_string(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(NiotError::InvalidParameter(format!(
                "rtol must lie in (0, 1), got {}",
                self.rtol
            )));
        }
        if !(self.mu_min > 0.0) {
            return Err(NiotError::InvalidParameter(format!(
                "mu_min must be positive, got {}",
                self.mu_min
            )));
        }
        if self.max_iterations == Some(0) {
            return Err(NiotError::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !elliptic_preconditioner_names().any(|n| n == self.preconditioner) {
            return Err(NiotError::UnknownStrategy {
                kind: "preconditioner",
                name: self.preconditioner.clone(),
                known: elliptic_preconditioner_names().collect::<Vec<_>>().join(", "),
            });
        }
        face_mean_by_name(&self.face_mean)?;
        Ok(())
    }

    fn max_iterations_for(&self, grid: &Grid2D) -> usize {
        self.max_iterations.unwrap_or(10 * grid.n_cells())
    }
}

/// The assembled operator `−div(k∇·)` with face coefficients `k`, kept both
/// as a five-point stencil and as a CSR matrix.
#[derive(Debug, Clone)]
pub struct WeightedLaplacian {
    grid: Grid2D,
    face_coeff: FaceField,
    diag: Vec<f64>,
    /// Coupling between cell `c` and `c + 1` (zero on the last column).
    east: Vec<f64>,
    /// Coupling between cell `c` and `c + nx` (zero on the last row).
    north: Vec<f64>,
    matrix: CsrMatrix,
}

impl WeightedLaplacian {
    pub fn from_face_coefficients(face_coeff: FaceField) -> Self {
        let grid = *face_coeff.grid();
        let (nx, ny, n) = (grid.nx(), grid.ny(), grid.n_cells());
        let inv_h2 = 1.0 / grid.cell_area();
        let k = face_coeff.values();
        let mut diag = vec![0.0; n];
        let mut east = vec![0.0; n];
        let mut north = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let c = grid.index(i, j);
                if i + 1 < nx {
                    let w = k[grid.x_face(i, j)] * inv_h2;
                    east[c] = -w;
                    diag[c] += w;
                    diag[c + 1] += w;
                }
                if j + 1 < ny {
                    let w = k[grid.y_face(i, j)] * inv_h2;
                    north[c] = -w;
                    diag[c] += w;
                    diag[c + nx] += w;
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(5 * n);
        let mut vals = Vec::with_capacity(5 * n);
        row_ptr.push(0);
        for c in 0..n {
            let (i, j) = grid.coords(c);
            if j > 0 {
                cols.push(c - nx);
                vals.push(north[c - nx]);
            }
            if i > 0 {
                cols.push(c - 1);
                vals.push(east[c - 1]);
            }
            cols.push(c);
            vals.push(diag[c]);
            if i + 1 < nx {
                cols.push(c + 1);
                vals.push(east[c]);
            }
            if j + 1 < ny {
                cols.push(c + nx);
                vals.push(north[c]);
            }
            row_ptr.push(cols.len());
        }
        Self {
            grid,
            face_coeff,
            diag,
            east,
            north,
            matrix: CsrMatrix::from_csr_parts(n, row_ptr, cols, vals),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn face_coefficients(&self) -> &FaceField {
        &self.face_coeff
    }

    pub fn apply(&self, u: &CellField) -> CellField {
        let mut y = vec![0.0; self.grid.n_cells()];
        LinearOperator::apply(self, u.values(), &mut y);
        CellField::new(self.grid, y).expect("operator and field share a grid")
    }
}

impl LinearOperator for WeightedLaplacian {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.diag.len();
        for ((yc, d), xc) in y.iter_mut().zip(&self.diag).zip(x) {
            *yc = d * xc;
        }
        // Each coupling array is zero where its neighbour would leave the grid,
        // so both offsets can sweep over whole slices.
        for (off, w) in [(1, &self.east), (self.grid.nx(), &self.north)] {
            if off >= n {
                continue;
            }
            for ((yc, wc), xc) in y[..n - off].iter_mut().zip(&w[..n - off]).zip(&x[off..]) {
                *yc += wc * xc;
            }
            for ((yc, wc), xc) in y[off..].iter_mut().zip(&w[..n - off]).zip(&x[..n - off]) {
                *yc += wc * xc;
            }
        }
    }
}

/// Incomplete Cholesky factor of a five-point operator in natural ordering.
/// With `relax = 0` this is IC(0) and matches [`crate::sparse::Ic0Preconditioner`];
/// with `relax` near one the dropped fill is lumped onto the diagonal (MIC(0)).
pub struct StencilCholesky {
    nx: usize,
    /// Reciprocal diagonal `1/d_c` of the factor.
    inv: Vec<f64>,
    /// `a_{c,c+nx} / d_c`.
    north: Vec<f64>,
    /// `a_{c-1,c} / (d_{c-1} d_c)`, the within-row coupling of the forward sweep.
    fwd: Vec<f64>,
    /// `a_{c,c+1} / d_c²`, the within-row coupling of the backward sweep.
    bwd: Vec<f64>,
    name: &'static str,
}

impl StencilCholesky {
    const SHIFT: f64 = 1e-10;
    /// Pivots below this fraction of the matrix diagonal fall back to the diagonal.
    const SAFETY: f64 = 0.25;

    pub fn new(op: &WeightedLaplacian, relax: f64, name: &'static str) -> Self {
        let n = op.diag.len();
        let nx = op.grid.nx();
        let mut inv = vec![0.0; n];
        for c in 0..n {
            let a = op.diag[c];
            let mut e = a * (1.0 + Self::SHIFT);
            if c % nx > 0 {
                let l = op.east[c - 1] * inv[c - 1];
                e -= l * l + relax * op.east[c - 1] * op.north[c - 1] * inv[c - 1] * inv[c - 1];
            }
            if c >= nx {
                let l = op.north[c - nx] * inv[c - nx];
                e -= l * l + relax * op.north[c - nx] * op.east[c - nx] * inv[c - nx] * inv[c - nx];
            }
            if relax > 0.0 && e < Self::SAFETY * a {
                e = a;
            }
            if !(e > 0.0) {
                e = a.abs().max(f64::MIN_POSITIVE) * Self::SHIFT;
            }
            inv[c] = 1.0 / e.sqrt();
        }
        let north = op.north.iter().zip(&inv).map(|(a, d)| a * d).collect();
        let fwd = (0..n)
            .map(|c| {
                if c % nx > 0 {
                    op.east[c - 1] * inv[c - 1] * inv[c]
                } else {
                    0.0
                }
            })
            .collect();
        let bwd = (0..n).map(|c| op.east[c] * inv[c] * inv[c]).collect();
        Self {
            nx,
            inv,
            north,
            fwd,
            bwd,
            name,
        }
    }
}

impl Preconditioner for StencilCholesky {
    fn name(&self) -> &'static str {
        self.name
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let (nx, n) = (self.nx, self.inv.len());
        // Forward solve L y = r one grid row at a time: the coupling to the
        // previous row is a plain vector update, leaving a short recurrence.
        for row in (0..n).step_by(nx) {
            let (done, rest) = z.split_at_mut(row);
            let cur = &mut rest[..nx];
            let range = row..row + nx;
            if row == 0 {
                for ((zc, rc), d) in cur.iter_mut().zip(&r[range.clone()]).zip(&self.inv[range.clone()]) {
                    *zc = rc * d;
                }
            } else {
                let below = &done[row - nx..];
                for (((zc, rc), d), (ln, zb)) in cur
                    .iter_mut()
                    .zip(&r[range.clone()])
                    .zip(&self.inv[range.clone()])
                    .zip(self.north[row - nx..row].iter().zip(below))
                {
                    *zc = (rc - ln * zb) * d;
                }
            }
            let fwd = &self.fwd[range];
            for i in 1..nx {
                cur[i] -= fwd[i] * cur[i - 1];
            }
        }
        // Backward solve Lᵀ x = y.
        for row in (0..n).step_by(nx).rev() {
            let (head, above) = z.split_at_mut(row + nx);
            let cur = &mut head[row..];
            let range = row..row + nx;
            if row + nx < n {
                for (((zc, d), ln), za) in cur
                    .iter_mut()
                    .zip(&self.inv[range.clone()])
                    .zip(&self.north[range.clone()])
                    .zip(&above[..nx])
                {
                    *zc = (*zc - ln * za) * d;
                }
            } else {
                for (zc, d) in cur.iter_mut().zip(&self.inv[range.clone()]) {
                    *zc *= d;
                }
            }
            let bwd = &self.bwd[range];
            for i in (0..nx - 1).rev() {
                cur[i] -= bwd[i] * cur[i + 1];
            }
        }
    }
}

/// Relaxation used by the `mic0` preconditioner.
const MIC_RELAX: f64 = 0.97;

/// Preconditioners accepted by the elliptic solver: the generic sparse ones
/// plus the stencil-specialized modified incomplete Cholesky.
pub fn elliptic_preconditioner_names() -> impl Iterator<Item = &'static str> {
    preconditioner_names().chain(std::iter::once("mic0"))
}

fn build_elliptic_preconditioner(name: &str, op: &WeightedLaplacian) -> Result<Box<dyn Preconditioner>> {
    match name {
        "ic0" => Ok(Box::new(StencilCholesky::new(op, 0.0, "ic0"))),
        "mic0" => Ok(Box::new(StencilCholesky::new(op, MIC_RELAX, "mic0"))),
        other => build_preconditioner(other, op.matrix()),
    }
}

/// Assembles `−div((μ + μ_min)∇·)` with harmonic face averaging.
pub fn assemble_weighted_laplacian(mu: &CellField, mu_min: f64) -> Result<WeightedLaplacian> {
    assemble_with_mean(mu, mu_min, &Harmonic)
}

pub fn assemble_with_mean(mu: &CellField, mu_min: f64, mean: &dyn FaceMean) -> Result<WeightedLaplacian> {
    Ok(WeightedLaplacian::from_face_coefficients(face_coefficient(
        mu, mu_min, mean,
    )?))
}

#[derive(Debug, Clone)]
pub struct PotentialSolution {
    /// Zero-mean potential.
    pub u: CellField,
    /// `−k · ∇u` on interior faces.
    pub flux: FaceField,
    /// ‖A u − b‖₂ / ‖b‖₂ for the mean-projected right-hand side `b`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub operator: WeightedLaplacian,
}

impl PotentialSolution {
    /// `−div(flux)`-consistency check: `cell_divergence(flux)` should equal `f⁺ − f⁻`.
    pub fn flux_divergence(&self) -> CellField {
        cell_divergence(&self.flux)
    }
}

/// Net forcing with its (tolerated) imbalance projected out.
pub fn balanced_rhs(forcing: &ForcingPair) -> Result<CellField> {
    let source_mass = forcing.fplus().integral();
    let net = forcing.net();
    let imbalance = net.integral();
    if imbalance.abs() > 1e-10 * source_mass || (source_mass == 0.0 && imbalance != 0.0) {
        return Err(NiotError::UnbalancedForcing {
            net: imbalance,
            source_mass,
        });
    }
    let m = net.mean();
    Ok(net.map(|v| v - m))
}

pub fn solve_poisson(mu: &CellField, forcing: &ForcingPair, settings: &SolverSettings) -> Result<PotentialSolution> {
    solve_poisson_from(mu, forcing, settings, None)
}

/// As [`solve_poisson`], starting the iteration from `guess` when given.
pub fn solve_poisson_from(
    mu: &CellField,
    forcing: &ForcingPair,
    settings: &SolverSettings,
    guess: Option<&CellField>,
) -> Result<PotentialSolution> {
    settings.validate()?;
    mu.same_grid(forcing.fplus())?;
    let mean = face_mean_by_name(&settings.face_mean)?;
    let operator = assemble_with_mean(mu, settings.mu_min, mean.as_ref())?;
    solve_with_operator(operator, forcing, settings, guess)
}

/// Solves with an already assembled operator.
pub fn solve_with_operator(
    operator: WeightedLaplacian,
    forcing: &ForcingPair,
    settings: &SolverSettings,
    guess: Option<&CellField>,
) -> Result<PotentialSolution> {
    let grid = *operator.grid();
    let rhs = balanced_rhs(forcing)?;
    let mut x = match guess {
        Some(g) => {
            g.same_grid(&rhs)?;
            g.values().to_vec()
        }
        None => vec![0.0; grid.n_cells()],
    };
    let prec = build_elliptic_preconditioner(&settings.preconditioner, &operator)?;
    let outcome = pcg(
        &operator,
        rhs.values(),
        &mut x,
        prec.as_ref(),
        settings.rtol,
        settings.max_iterations_for(&grid),
        true,
    )?;
    let u = CellField::new(grid, x)?;
    let g = face_gradient(&u);
    let flux_values = g
        .values()
        .iter()
        .zip(operator.face_coefficients().values())
        .map(|(gf, k)| -k * gf)
        .collect();
    Ok(PotentialSolution {
        flux: FaceField::new(grid, flux_values)?,
        u,
        residual_norm: outcome.relative_residual,
        iterations: outcome.iterations,
        operator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cell_forcing(grid: Grid2D) -> ForcingPair {
        let p = CellField::from_fn(grid, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let m = CellField::from_fn(grid, |i, _| if i == 1 { 1.0 } else { 0.0 });
        ForcingPair::new(p, m).unwrap()
    }

    #[test]
    fn zero_net_forcing_gives_zero_potential() {
        let g = Grid2D::new(4, 4, 0.25).unwrap();
        let f = CellField::constant(g, 2.0);
        let forcing = ForcingPair::new(f.clone(), f).unwrap();
        let sol = solve_poisson(&CellField::constant(g, 1.0), &forcing, &SolverSettings::default()).unwrap();
        assert!(sol.u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_column_strip() {
        let g = Grid2D::new(2, 2, 1.0).unwrap();
        let settings = SolverSettings {
            rtol: 1e-14,
            mu_min: 1e-8,
            ..SolverSettings::default()
        };
        let mu = CellField::constant(g, 1.0 - 1e-8);
        let sol = solve_poisson(&mu, &two_cell_forcing(g), &settings).unwrap();
        for j in 0..2 {
            assert!((sol.u.get(0, j) - 0.5).abs() < 1e-12);
            assert!((sol.u.get(1, j) + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_rows_sum_to_zero_and_is_symmetric() {
        let g = Grid2D::new(5, 3, 0.2).unwrap();
        let mu = CellField::from_fn(g, |i, j| ((i + 2 * j) % 4) as f64 * 0.3);
        let op = assemble_weighted_laplacian(&mu, 1e-8).unwrap();
        let ones = CellField::constant(g, 1.0);
        assert!(op.apply(&ones).values().iter().all(|v| v.abs() < 1e-9));
        assert_eq!(op.matrix().transpose(), *op.matrix());
    }

    #[test]
    fn zero_conductivity_is_scaled_neumann_laplacian() {
        let g = Grid2D::new(3, 3, 1.0).unwrap();
        let op = assemble_weighted_laplacian(&CellField::zeros(g), 1e-8).unwrap();
        let unit = assemble_weighted_laplacian(&CellField::constant(g, 1.0 - 1e-8), 1e-8).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let a = op.matrix().get(i, j);
                let b = unit.matrix().get(i, j) * 1e-8;
                assert!((a - b).abs() <= 1e-22, "{i},{j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn unbalanced_forcing_is_rejected() {
        let g = Grid2D::new(3, 3, 1.0).unwrap();
        let mut p = CellField::zeros(g);
        p.set(0, 0, 1.0);
        let mut m = CellField::zeros(g);
        m.set(2, 2, 0.9);
        let forcing = ForcingPair::new_unchecked(p, m).unwrap();
        let err = solve_poisson(&CellField::constant(g, 1.0), &forcing, &SolverSettings::default());
        assert!(matches!(err, Err(NiotError::UnbalancedForcing { .. })));
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let g = Grid2D::new(10, 10, 0.1).unwrap();
        let settings = SolverSettings {
            max_iterations: Some(1),
            preconditioner: "none".into(),
            ..SolverSettings::default()
        };
        let mu = CellField::from_fn(g, |i, j| 0.1 + ((i * j) % 5) as f64);
        let err = solve_poisson(&mu, &two_cell_forcing(g), &settings);
        assert!(matches!(err, Err(NiotError::NoConvergence { .. })));
    }

    #[test]
    fn settings_validation() {
        let s = SolverSettings {
            rtol: 1.0,
            ..SolverSettings::default()
        };
        assert!(s.validate().is_err());
        let s = SolverSettings {
            preconditioner: "amg".into(),
            ..SolverSettings::default()
        };
        assert!(s.validate().is_err());
    }

    fn rough_operator(nx: usize, ny: usize) -> WeightedLaplacian {
        let g = Grid2D::new(nx, ny, 0.1).unwrap();
        let mu = CellField::from_fn(g, |i, j| 1e-3 + ((3 * i + 7 * j) % 5) as f64 * 0.8);
        assemble_weighted_laplacian(&mu, 1e-8).unwrap()
    }

    #[test]
    fn stencil_apply_matches_csr() {
        for (nx, ny) in [(7, 5), (2, 4), (4, 2), (2, 2)] {
            let op = rough_operator(nx, ny);
            let x: Vec<f64> = (0..nx * ny).map(|c| (c as f64 * 0.37).sin()).collect();
            let mut y = vec![0.0; x.len()];
            LinearOperator::apply(&op, &x, &mut y);
            let want = op.matrix().mul(&x);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{nx}x{ny}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn stencil_ic0_matches_generic_ic0() {
        for (nx, ny) in [(6, 5), (2, 5), (5, 2)] {
            let op = rough_operator(nx, ny);
            let generic = crate::sparse::Ic0Preconditioner::new(op.matrix()).unwrap();
            let stencil = StencilCholesky::new(&op, 0.0, "ic0");
            let r: Vec<f64> = (0..nx * ny).map(|c| (c as f64 * 1.3).cos()).collect();
            let (mut a, mut b) = (vec![0.0; r.len()], vec![0.0; r.len()]);
            generic.apply(&r, &mut a);
            stencil.apply(&r, &mut b);
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-9 * scale, "{nx}x{ny}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn mic0_is_symmetric_positive() {
        let op = rough_operator(6, 6);
        let p = StencilCholesky::new(&op, MIC_RELAX, "mic0");
        let n = 36;
        let u: Vec<f64> = (0..n).map(|c| (c as f64 * 0.9).sin()).collect();
        let v: Vec<f64> = (0..n).map(|c| (c as f64 * 0.4 + 1.0).cos()).collect();
        let (mut pu, mut pv) = (vec![0.0; n], vec![0.0; n]);
        p.apply(&u, &mut pu);
        p.apply(&v, &mut pv);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&v, &pu) - dot(&u, &pv)).abs() <= 1e-10 * dot(&u, &pu).abs());
        assert!(dot(&u, &pu) > 0.0 && dot(&v, &pv) > 0.0);
    }

    #[test]
    fn every_preconditioner_gives_the_same_potential() {
        let g = Grid2D::new(9, 7, 0.1).unwrap();
        let mu = CellField::from_fn(g, |i, j| 1e-4 + ((2 * i + 5 * j) % 7) as f64);
        let forcing = two_cell_forcing(g);
        let solve = |name: &str| {
            let s = SolverSettings {
                preconditioner: name.into(),
                rtol: 1e-12,
                ..SolverSettings::default()
            };
            solve_poisson(&mu, &forcing, &s).unwrap()
        };
        let reference = solve("none").u;
        let scale = reference.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for name in elliptic_preconditioner_names() {
            let sol = solve(name);
            for (a, b) in sol.u.values().iter().zip(reference.values()) {
                assert!((a - b).abs() <= 1e-8 * scale, "{name}");
            }
        }
    }
}
