//! Binary-image topology: thresholded supports, Zhang–Suen thinning and
//! skeleton branch points.

use crate::grid::{CellField, Grid2D};

/// Cells with `μ ≥ rel · max μ`.
pub fn threshold_support(mu: &CellField, rel: f64) -> Vec<bool> {
    let level = rel * mu.max();
    mu.values().iter().map(|&v| v >= level && v > 0.0).collect()
}

/// 8-neighbourhood `P2..P9` of cell `(i, j)`, clockwise from north; cells
/// outside the grid are background.
fn ring(img: &[bool], g: &Grid2D, i: usize, j: usize) -> [bool; 8] {
    let at = |di: isize, dj: isize| {
        let (x, y) = (i as isize + di, j as isize + dj);
        x >= 0 && y >= 0 && (x as usize) < g.nx() && (y as usize) < g.ny() && img[g.index(x as usize, y as usize)]
    };
    [
        at(0, 1),
        at(1, 1),
        at(1, 0),
        at(1, -1),
        at(0, -1),
        at(-1, -1),
        at(-1, 0),
        at(-1, 1),
    ]
}

/// Number of background-to-foreground transitions around the ring.
fn transitions(p: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count()
}

/// Zhang–Suen thinning to a one-pixel-wide, 8-connected skeleton.
pub fn thin(img: &[bool], g: &Grid2D) -> Vec<bool> {
    let mut cur = img.to_vec();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    let c = g.index(i, j);
                    if !cur[c] {
                        continue;
                    }
                    let p = ring(&cur, g, i, j);
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) || transitions(&p) != 1 {
                        continue;
                    }
                    // p[0]=N, p[2]=E, p[4]=S, p[6]=W
                    let ok = if pass == 0 {
                        !(p[0] && p[2] && p[4]) && !(p[2] && p[4] && p[6])
                    } else {
                        !(p[0] && p[2] && p[6]) && !(p[0] && p[4] && p[6])
                    };
                    if ok {
                        remove.push(c);
                    }
                }
            }
            changed |= !remove.is_empty();
            for c in remove {
                cur[c] = false;
            }
        }
        if !changed {
            return cur;
        }
    }
}

/// Skeleton cells where three or more branches meet (crossing number ≥ 3).
pub fn branch_points(skeleton: &[bool], g: &Grid2D) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            if skeleton[g.index(i, j)] && transitions(&ring(skeleton, g, i, j)) >= 3 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Number of 4-connected components of the foreground.
pub fn component_count(img: &[bool], g: &Grid2D) -> usize {
    let mut seen = vec![false; img.len()];
    let mut count = 0;
    for start in 0..img.len() {
        if !img[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(c) = stack.pop() {
            for nb in g.neighbors(c) {
                if img[nb] && !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
    }
    count
}
