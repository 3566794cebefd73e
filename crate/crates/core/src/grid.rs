//! Cartesian pixel grid, piecewise-constant cell and face fields, and the
//! discrete differential operators acting on them.
//!
//! Cells are indexed row-major from the lower-left pixel: cell `(i, j)` has
//! index `j * nx + i`, with `i` along x and `j` along y. Interior faces are
//! enumerated x-faces first (the face between `(i, j)` and `(i + 1, j)` has
//! index `j * (nx - 1) + i`), then y-faces (between `(i, j)` and `(i, j + 1)`,
//! index `(nx - 1) * ny + j * nx + i`). Boundary faces are not stored: they
//! carry zero normal flux.

use crate::error::{NiotError, Result};
use crate::face_mean::{FaceMean, Harmonic};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    h: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, h: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(NiotError::InvalidGrid(format!(
                "need at least 2x2 cells, got {nx}x{ny}"
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(NiotError::InvalidGrid(format!("cell width must be positive, got {h}")));
        }
        Ok(Self { nx, ny, h })
    }

    /// Square grid covering the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0 / n as f64)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_x_faces(&self) -> usize {
        (self.nx - 1) * self.ny
    }

    pub fn n_y_faces(&self) -> usize {
        self.nx * (self.ny - 1)
    }

    pub fn n_faces(&self) -> usize {
        self.n_x_faces() + self.n_y_faces()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    /// Center of cell `(i, j)` in domain coordinates, origin at the lower-left corner.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    pub fn x_face(&self, i: usize, j: usize) -> usize {
        j * (self.nx - 1) + i
    }

    pub fn y_face(&self, i: usize, j: usize) -> usize {
        self.n_x_faces() + j * self.nx + i
    }

    /// The two cells joined by an interior face, ordered (lower, upper) along
    /// the face normal.
    #[inline]
    pub fn face_cells(&self, face: usize) -> (usize, usize) {
        let nxf = self.n_x_faces();
        if face < nxf {
            let j = face / (self.nx - 1);
            let i = face % (self.nx - 1);
            let a = self.index(i, j);
            (a, a + 1)
        } else {
            let f = face - nxf;
            let a = f;
            (a, a + self.nx)
        }
    }

    /// Interior faces touching `cell`, in the fixed order left, right, down, up.
    pub fn cell_faces(&self, cell: usize) -> [Option<usize>; 4] {
        let (i, j) = self.coords(cell);
        [
            (i > 0).then(|| self.x_face(i - 1, j)),
            (i + 1 < self.nx).then(|| self.x_face(i, j)),
            (j > 0).then(|| self.y_face(i, j - 1)),
            (j + 1 < self.ny).then(|| self.y_face(i, j)),
        ]
    }

    /// 4-connected neighbours of `cell`.
    pub fn neighbors(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.coords(cell);
        let nx = self.nx;
        [
            (i > 0).then(|| cell - 1),
            (i + 1 < nx).then(|| cell + 1),
            (j > 0).then(|| cell - nx),
            (j + 1 < self.ny).then(|| cell + nx),
        ]
        .into_iter()
        .flatten()
    }

    fn check_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self != other {
            return Err(NiotError::ShapeMismatch(format!(
                "{what}: grid {}x{} (h={}) vs {}x{} (h={})",
                self.nx, self.ny, self.h, other.nx, other.ny, other.h
            )));
        }
        Ok(())
    }
}

/// One real value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(NiotError::ShapeMismatch(format!(
                "cell field needs {} values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_cells()],
        }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(i, j));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.grid.index(i, j);
        self.values[k] = value;
    }

    /// Sum of values times cell area.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Area-weighted L2 inner product.
    pub fn dot(&self, other: &CellField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_area()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CellField {
        CellField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &CellField, f: impl Fn(f64, f64) -> f64) -> Result<CellField> {
        self.same_grid(other)?;
        Ok(CellField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> CellField {
        self.map(|v| v * factor)
    }

    pub fn same_grid(&self, other: &CellField) -> Result<()> {
        self.grid.check_same(&other.grid, "cell fields")
    }

    pub fn ensure_nonnegative(&self) -> Result<()> {
        match self.values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            Some((index, &value)) => Err(NiotError::NegativeValue { index, value }),
            None => Ok(()),
        }
    }

    /// Checks every value is 0 or 1 within `tol`.
    pub fn ensure_binary(&self, tol: f64) -> Result<()> {
        match self
            .values
            .iter()
            .position(|&v| !(v.abs() <= tol || (v - 1.0).abs() <= tol))
        {
            Some(k) => Err(NiotError::InvalidParameter(format!(
                "binary field has value {} at cell {k}",
                self.values[k]
            ))),
            None => Ok(()),
        }
    }
}

/// One real value per interior face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl FaceField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_faces() {
            return Err(NiotError::ShapeMismatch(format!(
                "face field needs {} values, got {}",
                grid.n_faces(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_faces()],
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Balanced source and sink densities.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingPair {
    fplus: CellField,
    fminus: CellField,
}

impl ForcingPair {
    pub const BALANCE_RTOL: f64 = 1e-12;

    pub fn new(fplus: CellField, fminus: CellField) -> Result<Self> {
        fplus.same_grid(&fminus)?;
        fplus.ensure_nonnegative()?;
        fminus.ensure_nonnegative()?;
        let (p, m) = (fplus.integral(), fminus.integral());
        if (p - m).abs() > Self::BALANCE_RTOL * p.max(m) {
            return Err(NiotError::UnbalancedForcing {
                net: p - m,
                source_mass: p,
            });
        }
        Ok(Self { fplus, fminus })
    }

    /// Builds a pair without the balance check; `solve_poisson` rejects it
    /// later if the imbalance is significant.
    pub fn new_unchecked(fplus: CellField, fminus: CellField) -> Result<Self> {
        fplus.same_grid(&fminus)?;
        Ok(Self { fplus, fminus })
    }

    pub fn fplus(&self) -> &CellField {
        &self.fplus
    }

    pub fn fminus(&self) -> &CellField {
        &self.fminus
    }

    pub fn grid(&self) -> &Grid2D {
        self.fplus.grid()
    }

    /// f⁺ − f⁻.
    pub fn net(&self) -> CellField {
        self.fplus
            .zip_map(&self.fminus, |a, b| a - b)
            .expect("forcing pair shares one grid")
    }

    pub fn scaled(&self, factor: f64) -> ForcingPair {
        ForcingPair {
            fplus: self.fplus.scaled(factor),
            fminus: self.fminus.scaled(factor),
        }
    }
}

/// Per interior face, `(u_upper − u_lower) / h`.
pub fn face_gradient(u: &CellField) -> FaceField {
    let grid = *u.grid();
    let inv_h = 1.0 / grid.h;
    let v = u.values();
    let values = (0..grid.n_faces())
        .map(|f| {
            let (a, b) = grid.face_cells(f);
            (v[b] - v[a]) * inv_h
        })
        .collect();
    FaceField { grid, values }
}

/// Per cell, net outflow of `q` through its interior faces divided by the
/// cell area.
pub fn cell_divergence(q: &FaceField) -> CellField {
    let grid = *q.grid();
    let inv_h = 1.0 / grid.h;
    let mut values = vec![0.0; grid.n_cells()];
    for (f, &flux) in q.values().iter().enumerate() {
        let (a, b) = grid.face_cells(f);
        values[a] += flux * inv_h;
        values[b] -= flux * inv_h;
    }
    CellField { grid, values }
}

/// Face coefficients from cell values offset by `mu_min` using an arbitrary
/// averaging rule.
pub fn face_coefficient(mu: &CellField, mu_min: f64, mean: &dyn FaceMean) -> Result<FaceField> {
    mu.ensure_nonnegative()?;
    let grid = *mu.grid();
    let v = mu.values();
    let values = (0..grid.n_faces())
        .map(|f| {
            let (a, b) = grid.face_cells(f);
            mean.coefficient(v[a] + mu_min, v[b] + mu_min)
        })
        .collect();
    Ok(FaceField { grid, values })
}

/// Harmonic mean of `mu + mu_min` across each interior face.
pub fn harmonic_face_coefficient(mu: &CellField, mu_min: f64) -> Result<FaceField> {
    face_coefficient(mu, mu_min, &Harmonic)
}

/// Per cell, the sum over both directions of the mean of the squared normal
/// differences on its two faces in that direction. Boundary faces count as
/// zero slope.
pub fn cell_gradient_sq(u: &CellField) -> CellField {
    let grid = *u.grid();
    let g = face_gradient(u);
    let gv = g.values();
    let values = (0..grid.n_cells())
        .map(|c| {
            let faces = grid.cell_faces(c);
            let sq = |f: Option<usize>| f.map_or(0.0, |f| gv[f] * gv[f]);
            0.5 * (sq(faces[0]) + sq(faces[1])) + 0.5 * (sq(faces[2]) + sq(faces[3]))
        })
        .collect();
    CellField { grid, values }
}

/// Per cell, `Σ_faces ∂k_f/∂μ_c · g_f²` where `k_f` is the face coefficient
/// produced by `mean` and `g_f` the face gradient of `u`. This is the
/// sensitivity of the face-summed Dirichlet energy to the cell value, and
/// coincides with [`cell_gradient_sq`] when the face mean is arithmetic.
pub fn face_weighted_gradient_sq(mu: &CellField, u: &CellField, mu_min: f64, mean: &dyn FaceMean) -> Result<CellField> {
    mu.same_grid(u)?;
    let grid = *u.grid();
    let g = face_gradient(u);
    let m = mu.values();
    let mut values = vec![0.0; grid.n_cells()];
    for (f, &gf) in g.values().iter().enumerate() {
        let (a, b) = grid.face_cells(f);
        let (ka, kb) = (m[a] + mu_min, m[b] + mu_min);
        let sq = gf * gf;
        values[a] += mean.d_first(ka, kb) * sq;
        values[b] += mean.d_first(kb, ka) * sq;
    }
    Ok(CellField { grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_mean::Arithmetic;

    #[test]
    fn grid_counts() {
        assert!(Grid2D::new(2, 1, 1.0).is_err());
        assert!(Grid2D::new(1, 5, 1.0).is_err());
        assert!(Grid2D::new(2, 2, 0.0).is_err());
        assert!(Grid2D::new(2, 2, -1.0).is_err());
        let g = Grid2D::new(2, 2, 1.0).unwrap();
        assert_eq!(g.n_cells(), 4);
        assert_eq!(g.n_faces(), 4);
        assert_eq!(Grid2D::new(52, 52, 1.0 / 52.0).unwrap().n_cells(), 2704);
        assert_eq!(Grid2D::new(208, 208, 1.0 / 208.0).unwrap().n_cells(), 43264);
    }

    #[test]
    fn face_enumeration_matches_cell_faces() {
        let g = Grid2D::new(4, 3, 0.5).unwrap();
        for f in 0..g.n_faces() {
            let (a, b) = g.face_cells(f);
            assert!(g.cell_faces(a).contains(&Some(f)));
            assert!(g.cell_faces(b).contains(&Some(f)));
        }
        assert_eq!(g.face_cells(g.x_face(2, 1)), (g.index(2, 1), g.index(3, 1)));
        assert_eq!(g.face_cells(g.y_face(3, 0)), (g.index(3, 0), g.index(3, 1)));
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let g = Grid2D::new(3, 2, 0.25).unwrap();
        assert!(face_gradient(&CellField::constant(g, 3.0))
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let s = 1.7;
        let u = CellField::from_fn(g, |i, _| s * (i as f64 + 0.5) * 0.25);
        let q = face_gradient(&u);
        for f in 0..g.n_x_faces() {
            assert!((q.values()[f] - s).abs() < 1e-12);
        }
        for f in g.n_x_faces()..g.n_faces() {
            assert!(q.values()[f].abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_zero_and_gradient_integrates_to_zero() {
        let g = Grid2D::new(5, 4, 0.2).unwrap();
        assert!(cell_divergence(&FaceField::zeros(g)).values().iter().all(|&v| v == 0.0));
        let u = CellField::from_fn(g, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.3);
        let d = cell_divergence(&face_gradient(&u));
        assert!(d.integral().abs() < 1e-12);
    }

    #[test]
    fn harmonic_face_values() {
        let g = Grid2D::new(2, 2, 1.0).unwrap();
        let mu = CellField::constant(g, 2.5);
        let k = harmonic_face_coefficient(&mu, 1e-8).unwrap();
        assert!(k.values().iter().all(|&v| (v - (2.5 + 1e-8)).abs() < 1e-14));

        let mu = CellField::new(g, vec![0.0, 1e3, 0.0, 1e3]).unwrap();
        let k = harmonic_face_coefficient(&mu, 1e-8).unwrap();
        let x0 = k.values()[g.x_face(0, 0)];
        assert!((x0 - 2e-8).abs() < 1e-15, "{x0}");

        let eps = 1e-9;
        let mu = CellField::new(g, vec![1.0, 3.0, 1.0, 3.0]).unwrap();
        let k = harmonic_face_coefficient(&mu, eps).unwrap();
        let expected = 2.0 * (1.0 + eps) * (3.0 + eps) / (4.0 + 2.0 * eps);
        assert!((k.values()[0] - expected).abs() < 1e-15);
        assert!((k.values()[0] - 1.5).abs() < 1e-8);

        let bad = CellField::new(g, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!(harmonic_face_coefficient(&bad, 1e-8).is_err());
    }

    #[test]
    fn gradient_sq_constant_and_linear() {
        let g = Grid2D::new(6, 5, 0.1).unwrap();
        assert!(cell_gradient_sq(&CellField::constant(g, 1.0))
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let s = 2.0;
        let u = CellField::from_fn(g, |i, _| s * i as f64 * 0.1);
        let gs = cell_gradient_sq(&u);
        for j in 0..5 {
            for i in 1..5 {
                assert!((gs.get(i, j) - s * s).abs() < 1e-12);
            }
            assert!((gs.get(0, j) - 0.5 * s * s).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_gradient_sq_reduces_to_cell_reconstruction_under_arithmetic_mean() {
        let g = Grid2D::new(5, 4, 0.3).unwrap();
        let mu = CellField::from_fn(g, |i, j| 0.1 + ((i * 3 + j * 5) % 7) as f64 * 0.1);
        let u = CellField::from_fn(g, |i, j| ((i * i + 2 * j) % 5) as f64 * 0.37);
        let w = face_weighted_gradient_sq(&mu, &u, 1e-8, &Arithmetic).unwrap();
        let c = cell_gradient_sq(&u);
        for (a, b) in w.values().iter().zip(c.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn forcing_balance_is_checked() {
        let g = Grid2D::new(3, 3, 1.0).unwrap();
        let mut p = CellField::zeros(g);
        let mut m = CellField::zeros(g);
        p.set(0, 0, 1.0);
        m.set(2, 2, 0.5);
        assert!(matches!(
            ForcingPair::new(p.clone(), m.clone()),
            Err(NiotError::UnbalancedForcing { .. })
        ));
        m.set(2, 2, 1.0);
        assert!(ForcingPair::new(p, m).is_ok());
    }
}
