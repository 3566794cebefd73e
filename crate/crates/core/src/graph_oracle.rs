//! Flux and Gilbert energy on planar forests, and the optimal branching
//! point of a one-source, two-sink network.

use crate::error::{NiotError, Result};

pub type Point = (f64, f64);

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Planar forest with oriented edges and a node forcing (positive at
/// sources, negative at sinks).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<Point>,
    edges: Vec<(usize, usize)>,
    forcing: Vec<f64>,
}

impl Graph {
    pub fn new(nodes: Vec<Point>, edges: Vec<(usize, usize)>, forcing: Vec<f64>) -> Result<Self> {
        if forcing.len() != nodes.len() {
            return Err(NiotError::ShapeMismatch(format!(
                "{} forcing entries for {} nodes",
                forcing.len(),
                nodes.len()
            )));
        }
        let n = nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(NiotError::InvalidParameter(format!(
                    "edge ({a}, {b}) references a missing node"
                )));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(NiotError::CyclicGraph);
            }
            parent[ra] = rb;
        }
        let scale: f64 = forcing.iter().map(|f| f.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        let mut sums = vec![0.0; n];
        for (k, f) in forcing.iter().enumerate() {
            let r = find(&mut parent, k);
            sums[r] += f;
        }
        for (k, &sum) in sums.iter().enumerate() {
            if find(&mut parent, k) == k && sum.abs() > 1e-12 * scale {
                return Err(NiotError::UnbalancedComponent { node: k, sum });
            }
        }
        Ok(Self { nodes, edges, forcing })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn forcing(&self) -> &[f64] {
        &self.forcing
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let (a, b) = self.edges[e];
        dist(self.nodes[a], self.nodes[b])
    }

    /// `Σ_{e out of k} v_e − Σ_{e into k} v_e − f_k` per node.
    pub fn balance_residual(&self, flux: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.forcing.iter().map(|f| -f).collect();
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            r[a] += flux[e];
            r[b] -= flux[e];
        }
        r
    }
}

/// The unique edge flux balancing the node forcing. Each tree is rooted at
/// its smallest node and edges are resolved from the leaves inwards, summing
/// in edge order, so the result is bitwise reproducible.
pub fn graph_flux(g: &Graph) -> Result<Vec<f64>> {
    let n = g.nodes.len();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &(a, b)) in g.edges.iter().enumerate() {
        incident[a].push(e);
        incident[b].push(e);
    }
    let mut flux = vec![0.0; g.edges.len()];
    let mut visited = vec![false; n];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        // iterative DFS giving a pre-order with parent edges
        let mut order = Vec::new();
        let mut parent_edge = Vec::new();
        let mut stack = vec![(root, usize::MAX)];
        visited[root] = true;
        while let Some((k, pe)) = stack.pop() {
            order.push(k);
            parent_edge.push(pe);
            for &e in incident[k].iter().rev() {
                if e == pe {
                    continue;
                }
                let (a, b) = g.edges[e];
                let other = if a == k { b } else { a };
                if visited[other] {
                    return Err(NiotError::CyclicGraph);
                }
                visited[other] = true;
                stack.push((other, e));
            }
        }
        let mut done = vec![false; g.edges.len()];
        for (&k, &pe) in order.iter().zip(&parent_edge).rev() {
            if pe == usize::MAX {
                continue;
            }
            // outflow through child edges, in edge order
            let mut out = 0.0;
            for &e in &incident[k] {
                if e == pe {
                    continue;
                }
                debug_assert!(done[e]);
                let (a, _) = g.edges[e];
                out += if a == k { flux[e] } else { -flux[e] };
            }
            let need = g.forcing[k] - out;
            let (a, _) = g.edges[pe];
            flux[pe] = if a == k { need } else { -need };
            done[pe] = true;
        }
    }
    Ok(flux)
}

/// `Σ_e |v_e|^α ℓ_e`.
pub fn gilbert_energy(g: &Graph, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(NiotError::InvalidParameter(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let flux = graph_flux(g)?;
    Ok(flux
        .iter()
        .enumerate()
        .map(|(e, v)| {
            if *v == 0.0 {
                0.0
            } else {
                v.abs().powf(alpha) * g.edge_length(e)
            }
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchPoint {
    pub b: Point,
    pub energy: f64,
    /// `∠PBQ` in radians.
    pub angle: f64,
}

/// `|OB| + w_P^α |BP| + w_Q^α |BQ|`.
pub fn y_energy(o: Point, p: Point, q: Point, w_p: f64, w_q: f64, alpha: f64, b: Point) -> f64 {
    dist(o, b) + w_p.powf(alpha) * dist(b, p) + w_q.powf(alpha) * dist(b, q)
}

/// Angle at `b` between the rays to `p` and `q`; zero if either is degenerate.
pub fn angle_at(b: Point, p: Point, q: Point) -> f64 {
    let u = (p.0 - b.0, p.1 - b.1);
    let v = (q.0 - b.0, q.1 - b.1);
    if (u.0 == 0.0 && u.1 == 0.0) || (v.0 == 0.0 && v.1 == 0.0) {
        return 0.0;
    }
    (u.0 * v.1 - u.1 * v.0).abs().atan2(u.0 * v.0 + u.1 * v.1)
}

/// Grid search for the branching point over the bounding box of the three
/// terminals, refined around the incumbent until the spacing is below
/// `resolution`. The energy is convex in `B`, so refinement cannot lose the
/// minimum. Ties go to the lexicographically smallest point.
pub fn optimal_branch_point_with(
    o: Point,
    p: Point,
    q: Point,
    w_p: f64,
    w_q: f64,
    alpha: f64,
    resolution: f64,
) -> Result<BranchPoint> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(NiotError::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(w_p >= 0.0 && w_q >= 0.0 && ((w_p + w_q) - 1.0).abs() < 1e-12) {
        return Err(NiotError::InvalidParameter(format!(
            "sink weights must be nonnegative and sum to 1, got {w_p} and {w_q}"
        )));
    }
    if !(resolution > 0.0) {
        return Err(NiotError::InvalidParameter("resolution must be positive".into()));
    }
    let energy = |b: Point| y_energy(o, p, q, w_p, w_q, alpha, b);
    let (mut x0, mut x1) = (o.0.min(p.0).min(q.0), o.0.max(p.0).max(q.0));
    let (mut y0, mut y1) = (o.1.min(p.1).min(q.1), o.1.max(p.1).max(q.1));
    const N: usize = 200;
    let mut best = (f64::INFINITY, o);
    loop {
        let dx = (x1 - x0) / N as f64;
        let dy = (y1 - y0) / N as f64;
        for a in 0..=N {
            let x = if a == N { x1 } else { x0 + a as f64 * dx };
            for c in 0..=N {
                let y = if c == N { y1 } else { y0 + c as f64 * dy };
                let e = energy((x, y));
                if e < best.0 || (e == best.0 && (x, y) < best.1) {
                    best = (e, (x, y));
                }
            }
        }
        if dx.max(dy) <= resolution {
            break;
        }
        let (bx, by) = best.1;
        let (lo_x, hi_x) = (o.0.min(p.0).min(q.0), o.0.max(p.0).max(q.0));
        let (lo_y, hi_y) = (o.1.min(p.1).min(q.1), o.1.max(p.1).max(q.1));
        x0 = (bx - 2.0 * dx).max(lo_x);
        x1 = (bx + 2.0 * dx).min(hi_x);
        y0 = (by - 2.0 * dy).max(lo_y);
        y1 = (by + 2.0 * dy).min(hi_y);
    }
    let b = best.1;
    Ok(BranchPoint {
        b,
        energy: best.0,
        angle: angle_at(b, p, q),
    })
}

/// [`optimal_branch_point_with`] at resolution `1e-5`.
pub fn optimal_branch_point(o: Point, p: Point, q: Point, w_p: f64, w_q: f64, alpha: f64) -> Result<BranchPoint> {
    optimal_branch_point_with(o, p, q, w_p, w_q, alpha, 1e-5)
}

/// Branching angle predicted by force balance at an interior branch point:
/// `cos θ = (1 − w_P^{2α} − w_Q^{2α}) / (2 w_P^α w_Q^α)`.
pub fn stationary_branch_angle(w_p: f64, w_q: f64, alpha: f64) -> f64 {
    let (a, b) = (w_p.powf(alpha), w_q.powf(alpha));
    ((1.0 - a * a - b * b) / (2.0 * a * b)).clamp(-1.0, 1.0).acos()
}
