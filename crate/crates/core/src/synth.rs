//! Procedural Y-shaped test network: one source feeding two sinks of
//! unequal demand, its rasterized image and a three-patch corruption mask.

use crate::error::Result;
use crate::graph_oracle::{optimal_branch_point, Point};
use crate::grid::{CellField, Grid2D};
use crate::imageio::{ForcingEntry, ForcingSpec};

/// Terminal positions are in domain coordinates, `[0, nx·h] × [0, ny·h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YNetwork {
    pub source: Point,
    pub sink_p: Point,
    pub sink_q: Point,
    pub mass_p: f64,
    pub mass_q: f64,
    /// Line width of the rasterized network.
    pub width: f64,
    /// Side of each square mask patch.
    pub patch: f64,
}

impl Default for YNetwork {
    fn default() -> Self {
        Self {
            source: (0.5, 0.08),
            sink_p: (0.1, 0.85),
            sink_q: (0.9, 0.85),
            mass_p: 1.0 / 3.0,
            mass_q: 2.0 / 3.0,
            width: 0.03,
            patch: 0.12,
        }
    }
}

fn seg_dist(x: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((x.0 - a.0) * dx + (x.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (x.0 - a.0 - t * dx).hypot(x.1 - a.1 - t * dy)
}

fn midpoint(a: Point, b: Point) -> Point {
    (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1))
}

impl YNetwork {
    /// Cell containing a domain point.
    pub fn cell_of(grid: &Grid2D, pt: Point) -> (usize, usize) {
        let f = |v: f64, n: usize| ((v / grid.h()).floor().max(0.0) as usize).min(n - 1);
        (f(pt.0, grid.nx()), f(pt.1, grid.ny()))
    }

    /// Branching point minimizing the Gilbert energy with exponent `alpha`.
    pub fn branch_point(&self, alpha: f64) -> Result<Point> {
        Ok(optimal_branch_point(self.source, self.sink_p, self.sink_q, self.mass_p, self.mass_q, alpha)?.b)
    }

    /// Point source at the source cell and point sinks at the two sink cells.
    pub fn forcing_spec(&self, grid: &Grid2D) -> ForcingSpec {
        let (oi, oj) = Self::cell_of(grid, self.source);
        let (pi, pj) = Self::cell_of(grid, self.sink_p);
        let (qi, qj) = Self::cell_of(grid, self.sink_q);
        ForcingSpec {
            sources: vec![ForcingEntry::point(oi, oj, 1.0)],
            sinks: vec![
                ForcingEntry::point(pi, pj, self.mass_p),
                ForcingEntry::point(qi, qj, self.mass_q),
            ],
        }
    }

    /// 1 on cells whose centre lies within `width/2` of the three segments
    /// through the optimal branching point for `alpha`, 0 elsewhere.
    pub fn image(&self, grid: &Grid2D, alpha: f64) -> Result<CellField> {
        let b = self.branch_point(alpha)?;
        let r = 0.5 * self.width.max(grid.h());
        Ok(CellField::from_fn(*grid, |i, j| {
            let x = grid.cell_center(i, j);
            let d = seg_dist(x, self.source, b)
                .min(seg_dist(x, b, self.sink_p))
                .min(seg_dist(x, b, self.sink_q));
            if d <= r {
                1.0
            } else {
                0.0
            }
        }))
    }

    /// Three square patches (value 1) centred on the midpoints of the trunk
    /// and of both arms.
    pub fn mask(&self, grid: &Grid2D, alpha: f64) -> Result<CellField> {
        let b = self.branch_point(alpha)?;
        let centres = [
            midpoint(self.source, b),
            midpoint(b, self.sink_p),
            midpoint(b, self.sink_q),
        ];
        let half = 0.5 * self.patch;
        Ok(CellField::from_fn(*grid, |i, j| {
            let (x, y) = grid.cell_center(i, j);
            if centres
                .iter()
                .any(|c| (x - c.0).abs() <= half && (y - c.1).abs() <= half)
            {
                1.0
            } else {
                0.0
            }
        }))
    }
}
