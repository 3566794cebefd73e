#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use niot_core::{CellField, ForcingPair, Grid2D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn grid(n: usize) -> Grid2D {
    Grid2D::unit_square(n).unwrap()
}

pub fn random_field(g: Grid2D, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> CellField {
    CellField::from_fn(g, |_, _| rng.gen_range(lo..hi))
}

/// Two sources and two sinks at random distinct cells, balanced.
pub fn random_forcing(g: Grid2D, rng: &mut ChaCha8Rng) -> ForcingPair {
    let n = g.n_cells();
    let mut cells = Vec::new();
    while cells.len() < 4 {
        let c = rng.gen_range(0..n);
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let a = g.cell_area();
    let s: f64 = rng.gen_range(0.2..0.8);
    let k: f64 = rng.gen_range(0.2..0.8);
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    plus[cells[0]] = s / a;
    plus[cells[1]] = (1.0 - s) / a;
    minus[cells[2]] = k / a;
    minus[cells[3]] = (1.0 - k) / a;
    ForcingPair::new(CellField::new(g, plus).unwrap(), CellField::new(g, minus).unwrap()).unwrap()
}

/// Zero-mean solution of `−div(k∇u) = f⁺ − f⁻` by a dense bordered LU solve,
/// with harmonic face coefficients of `μ + μ_min`.
pub fn dense_potential(mu: &CellField, forcing: &ForcingPair, mu_min: f64) -> Vec<f64> {
    let g = *mu.grid();
    let (nx, ny, n) = (g.nx(), g.ny(), g.n_cells());
    let h2 = g.h() * g.h();
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut couple = |p: usize, q: usize| {
        let (x, y) = (mu.values()[p] + mu_min, mu.values()[q] + mu_min);
        let k = 2.0 * x * y / (x + y) / h2;
        a[(p, p)] += k;
        a[(q, q)] += k;
        a[(p, q)] -= k;
        a[(q, p)] -= k;
    };
    for j in 0..ny {
        for i in 0..nx {
            let c = j * nx + i;
            if i + 1 < nx {
                couple(c, c + 1);
            }
            if j + 1 < ny {
                couple(c, c + nx);
            }
        }
    }
    for c in 0..n {
        a[(c, n)] = 1.0;
        a[(n, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n + 1);
    for c in 0..n {
        b[c] = forcing.fplus().values()[c] - forcing.fminus().values()[c];
    }
    let x = a.lu().solve(&b).expect("bordered Neumann system is nonsingular");
    x.iter().take(n).copied().collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
