//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --release --test acceptance -- 4 7`.

// NaN objectives and norms must count as violations.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::time::Instant;

use common::*;
use niot_core::elliptic::{solve_poisson, SolverSettings};
use niot_core::graph_oracle::{graph_flux, optimal_branch_point, Graph};
use niot_core::grid::cell_divergence;
use niot_core::imageio::{apply_mask, build_forcing};
use niot_core::inpaint::{
    connectivity_check, descent_direction, objective, run_niot, total_gradient, IterationRecord, NiotConfig, RunReport,
    StoppingReason, WeightKind,
};
use niot_core::maps::{build_map, MapSettings};
use niot_core::porous::{pm_exponents, pm_forward, BarenblattProfile, PmParams};
use niot_core::synth::YNetwork;
use niot_core::topology::{branch_points, thin, threshold_support};
use niot_core::{CellField, ForcingPair, Grid2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Total mass of the Y-network forcing.
const Y_MASS: f64 = 0.1;
/// Iteration budget of the 52×52 topology runs.
const TOPOLOGY_K_MAX: usize = 200_000;
/// Iteration budget of the 104×104 connectivity runs.
const INPAINT_K_MAX: usize = 20_000;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Accepted-step objectives of every optimizer run, for the descent check.
type Runs = Vec<(String, Vec<IterationRecord>, StoppingReason, f64)>;

fn record(runs: &mut Runs, name: &str, rep: &RunReport) {
    runs.push((
        name.into(),
        rep.records.clone(),
        rep.stopping_reason,
        rep.final_update_norm,
    ));
}

fn exponent_formula() -> Verdict {
    let e = pm_exponents(3.0, 500.0, 2).unwrap();
    Verdict::new(e.m == 2.0, format!("m = {}, t* = {:.4e}", e.m, e.t_star))
}

fn random_instance(rng: &mut ChaCha8Rng, g: Grid2D) -> (CellField, ForcingPair, CellField, CellField) {
    let mu = random_field(g, rng, 0.5, 1.5);
    let forcing = random_forcing(g, rng);
    let observed = random_field(g, rng, 0.0, 2.0);
    let weight = CellField::from_fn(g, |_, _| if rng.gen_bool(0.8) { 1.0 } else { 0.0 });
    (mu, forcing, observed, weight)
}

fn gradient_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let g = grid(8);
    let mut worst: f64 = 0.0;
    for map in ["identity", "pm"] {
        let cfg = NiotConfig {
            lambda: 0.5,
            map_kind: map.into(),
            alpha: 2.0,
            ..NiotConfig::default()
        };
        for _ in 0..5 {
            let (mu, forcing, observed, weight) = random_instance(&mut rng, g);
            let tg = total_gradient(&mu, &observed, &weight, &forcing, &cfg).unwrap();
            for _ in 0..10 {
                let v = random_field(g, &mut rng, -1.0, 1.0);
                let eps = 1e-5;
                let j = |s: f64| {
                    let m = mu.zip_map(&v, |a, b| a + s * b).unwrap();
                    objective(&m, &observed, &weight, &forcing, &cfg).unwrap().total
                };
                let fd = (j(eps) - j(-eps)) / (2.0 * eps);
                let an = tg.grad.dot(&v);
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
            }
        }
    }
    Verdict::new(worst <= 1e-4, format!("worst relative error {worst:.2e} (tol 1e-4)"))
}

fn adjoint_dot_product() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = grid(8);
    let map = build_map(
        "pm",
        &MapSettings {
            alpha: 1.0,
            pm: PmParams::default(),
        },
    )
    .unwrap();
    let mu = random_field(g, &mut rng, 0.1, 2.0);
    let lin = map.evaluate(&mu).unwrap().linearization;
    let euclid = |a: &CellField, b: &CellField| a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let v = random_field(g, &mut rng, -1.0, 1.0);
        let r = random_field(g, &mut rng, -1.0, 1.0);
        let lhs = euclid(&lin.tangent(&v).unwrap(), &r);
        let rhs = euclid(&v, &lin.adjoint(&r).unwrap());
        worst = worst.max((lhs - rhs).abs() / (euclid(&v, &v).sqrt() * euclid(&r, &r).sqrt()));
    }
    Verdict::new(worst <= 1e-8, format!("worst normalized gap {worst:.2e} (tol 1e-8)"))
}

/// L¹ error against the closed-form profile and the relative mass defect.
fn barenblatt_error(n: usize, substeps: usize) -> (f64, f64) {
    let (t0, t1) = (1e-4, 5e-3);
    let g = grid(n);
    let h = g.h();
    let prof = BarenblattProfile::new(2.0, 2, 1.0).unwrap();
    let sample = |t: f64| {
        CellField::from_fn(g, |i, j| {
            let (x, y) = g.cell_center(i, j);
            let mut s = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    let px = x - 0.5 + (a as f64 - 1.5) * h / 4.0;
                    let py = y - 0.5 + (b as f64 - 1.5) * h / 4.0;
                    s += prof.eval(t, &[px, py]).unwrap();
                }
            }
            s / 16.0
        })
    };
    let init = sample(t0);
    let params = PmParams {
        t_star: t1 - t0,
        substeps,
        step_ratio: 1.0,
        ..PmParams::default()
    };
    let (out, _) = pm_forward(&init, &params).unwrap();
    let exact = sample(t1);
    let err = out
        .values()
        .iter()
        .zip(exact.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * g.cell_area();
    let defect = (out.integral() - init.integral()).abs() / init.integral();
    (err / init.integral(), defect)
}

fn barenblatt() -> Verdict {
    let (e64, _) = barenblatt_error(64, 100);
    let (e128, _) = barenblatt_error(128, 200);
    let ratio = e64 / e128;
    Verdict::new(
        e128 <= 0.05 && ratio >= 1.4,
        format!(
            "L1 error {:.2}% of mass on 128² (tol 5%), contraction {ratio:.2} (tol 1.4)",
            100.0 * e128
        ),
    )
}

fn mass_conservation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_pm: f64 = 0.0;
    for n in [8, 16, 32] {
        for _ in 0..3 {
            let mu = random_field(grid(n), &mut rng, 0.0, 5.0);
            let (img, _) = pm_forward(&mu, &PmParams::default()).unwrap();
            worst_pm = worst_pm.max((img.integral() - mu.integral()).abs() / mu.integral());
        }
    }
    let (_, d) = barenblatt_error(32, 20);
    worst_pm = worst_pm.max(d);
    let mut spike = CellField::zeros(grid(24));
    spike.set(12, 12, 1e4);
    let (img, _) = pm_forward(&spike, &PmParams::default()).unwrap();
    worst_pm = worst_pm.max((img.integral() - spike.integral()).abs() / spike.integral());

    let settings = SolverSettings::default();
    let mut worst_flux: f64 = 0.0;
    for _ in 0..5 {
        let g = grid(16);
        let mu = random_field(g, &mut rng, 1e-3, 10.0);
        let forcing = random_forcing(g, &mut rng);
        let sol = solve_poisson(&mu, &forcing, &settings).unwrap();
        let div = cell_divergence(&sol.flux);
        let net = forcing.net();
        let diff = div
            .values()
            .iter()
            .zip(net.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = net.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_flux = worst_flux.max(diff / scale);
    }
    Verdict::new(
        worst_pm <= 1e-12 && worst_flux <= 10.0 * settings.rtol,
        format!("PM mass defect {worst_pm:.1e} (tol 1e-12), flux defect {worst_flux:.1e} (tol 1e-9)"),
    )
}

fn oracle_equivalences() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = grid(6);
    let settings = SolverSettings::default();
    let mut dense_err: f64 = 0.0;
    for _ in 0..5 {
        let mu = random_field(g, &mut rng, 0.05, 3.0);
        let forcing = random_forcing(g, &mut rng);
        let u = solve_poisson(&mu, &forcing, &settings).unwrap().u;
        let d = dense_potential(&mu, &forcing, settings.mu_min);
        let e: Vec<f64> = u.values().iter().zip(&d).map(|(a, b)| a - b).collect();
        dense_err = dense_err.max(max_abs(&e));
    }
    let nodes = vec![(0.0, 0.0), (0.4, 0.1), (0.8, 0.5), (0.9, -0.2), (0.2, 0.7), (0.5, 0.9)];
    let edges = vec![(0, 1), (1, 2), (1, 3), (0, 4), (4, 5)];
    let forcing = vec![1.0, 0.0, -0.25, -0.35, 0.1, -0.5];
    let graph = Graph::new(nodes, edges, forcing).unwrap();
    let balance = max_abs(&graph.balance_residual(&graph_flux(&graph).unwrap()));
    let bp = optimal_branch_point((0.0, 0.0), (1.0, 0.5), (1.0, -0.5), 0.5, 0.5, 0.5).unwrap();
    let b_ok = (bp.b.0 - 0.5).abs() <= 1e-3 && bp.b.1.abs() <= 1e-3 && (bp.energy - 1.5).abs() <= 1e-3;
    Verdict::new(
        dense_err <= 1e-8 && balance <= 1e-14 && b_ok,
        format!(
            "dense gap {dense_err:.1e}, node balance {balance:.1e}, B = ({:.4}, {:.4}), E = {:.6}",
            bp.b.0, bp.b.1, bp.energy
        ),
    )
}

struct YCase {
    grid: Grid2D,
    net: YNetwork,
    forcing: ForcingPair,
    truth: CellField,
    mask: CellField,
}

fn y_case(n: usize) -> YCase {
    let g = grid(n);
    let net = YNetwork::default();
    YCase {
        grid: g,
        net,
        forcing: build_forcing(&net.forcing_spec(&g), &g, Y_MASS).unwrap(),
        truth: net.image(&g, 0.5).unwrap(),
        mask: net.mask(&g, 0.5).unwrap(),
    }
}

/// Skeleton branch points away from the terminals.
fn interior_branch_points(case: &YCase, mu: &CellField) -> Vec<((usize, usize), f64)> {
    let support = threshold_support(mu, 1e-2);
    let skeleton = thin(&support, &case.grid);
    let cell = |p| YNetwork::cell_of(&case.grid, p);
    let dist = |a: (usize, usize), b: (usize, usize)| (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64);
    let (o, p, q) = (cell(case.net.source), cell(case.net.sink_p), cell(case.net.sink_q));
    branch_points(&skeleton, &case.grid)
        .into_iter()
        .filter(|&b| dist(b, p) > 3.0 && dist(b, q) > 3.0)
        .map(|b| (b, dist(b, o)))
        .collect()
}

fn topology(runs: &mut Runs) -> Verdict {
    let case = y_case(52);
    let zero = CellField::zeros(case.grid);
    let mut details = Vec::new();
    let mut pass = true;
    for gamma in [0.5, 0.8] {
        let cfg = NiotConfig {
            gamma,
            k_max: TOPOLOGY_K_MAX,
            ..NiotConfig::default()
        };
        let t = Instant::now();
        let rep = run_niot(&zero, &case.forcing, None, &cfg).unwrap();
        record(runs, &format!("topology γ={gamma}"), &rep);
        let connected = connectivity_check(&rep.mu, &case.forcing, 1e-2);
        let bps = interior_branch_points(&case, &rep.mu);
        let far = bps.iter().map(|b| b.1).fold(0.0, f64::max);
        let support = threshold_support(&rep.mu, 1e-2).iter().filter(|&&s| s).count();
        let ok = if gamma < 0.6 {
            connected && far >= 5.0
        } else {
            connected && far <= 3.0
        };
        pass &= ok;
        details.push(format!(
            "γ={gamma}: connected={connected}, support {support} cells, farthest interior branch point {far:.1} cells from O, {:?} after {} steps ({:.0}s)",
            rep.stopping_reason,
            rep.iterations,
            t.elapsed().as_secs_f64()
        ));
    }
    Verdict::new(pass, details.join("; "))
}

fn connectivity_restoration(runs: &mut Runs) -> Verdict {
    let case = y_case(104);
    let observed = apply_mask(&case.truth, &case.mask).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for lambda in [1e-2, 1e-1] {
        let cfg = NiotConfig {
            lambda,
            alpha: 10.0,
            weight_kind: WeightKind::Mask,
            k_max: INPAINT_K_MAX,
            ..NiotConfig::default()
        };
        let t = Instant::now();
        let rep = run_niot(&observed, &case.forcing, Some(&case.mask), &cfg).unwrap();
        record(runs, &format!("inpaint λ={lambda}"), &rep);
        let connected = connectivity_check(&rep.mu, &case.forcing, 1e-2);
        let mut sorted = rep.mu.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2] / rep.mu.max();
        pass &= connected;
        details.push(format!(
            "λ={lambda}: connected={connected}, median μ/max {median:.1e}, {:?} after {} steps ({:.0}s)",
            rep.stopping_reason,
            rep.iterations,
            t.elapsed().as_secs_f64()
        ));
    }
    Verdict::new(pass, details.join("; "))
}

fn descent_and_stopping(runs: &mut Runs) -> Verdict {
    // A small problem that runs to tolerance.
    let g = grid(16);
    let mut p = CellField::zeros(g);
    p.set(2, 2, Y_MASS / g.cell_area());
    let mut m = CellField::zeros(g);
    m.set(13, 12, Y_MASS / g.cell_area());
    let forcing = ForcingPair::new(p, m).unwrap();
    let cfg = NiotConfig {
        k_max: 100_000,
        ..NiotConfig::default()
    };
    let rep = run_niot(&CellField::zeros(g), &forcing, None, &cfg).unwrap();
    record(runs, "two-point", &rep);
    let mut violations = 0;
    let mut tolerance_runs = 0;
    let mut bad_stops = 0;
    for (_, records, reason, norm) in runs.iter() {
        let acc: Vec<f64> = records.iter().filter(|r| r.accepted).map(|r| r.objective).collect();
        violations += acc.windows(2).filter(|w| !(w[1] < w[0])).count();
        if *reason == StoppingReason::ToleranceMet {
            tolerance_runs += 1;
            if !(*norm < 1e-5) {
                bad_stops += 1;
            }
        }
    }
    Verdict::new(
        violations == 0 && tolerance_runs > 0 && bad_stops == 0,
        format!(
            "{} runs, {violations} non-decreasing accepted steps, {tolerance_runs} stopped at tolerance ({bad_stops} with norm >= 1e-5)",
            runs.len()
        ),
    )
}

fn w_locality() -> Verdict {
    let case = y_case(26);
    let mut other = case.truth.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (v, m) in other.values_mut().iter_mut().zip(case.mask.values()) {
        if *m > 0.5 {
            *v = rng.gen_range(0.0..3.0);
        }
    }
    let mut same = true;
    for map in ["identity", "pm"] {
        let cfg = NiotConfig {
            lambda: 0.1,
            alpha: 10.0,
            map_kind: map.into(),
            weight_kind: WeightKind::Mask,
            k_max: 40,
            ..NiotConfig::default()
        };
        let a = run_niot(&case.truth, &case.forcing, Some(&case.mask), &cfg).unwrap();
        let b = run_niot(&other, &case.forcing, Some(&case.mask), &cfg).unwrap();
        let bits = |f: &CellField| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        same &= bits(&a.mu) == bits(&b.mu) && bits(&a.u) == bits(&b.u) && bits(&a.image) == bits(&b.image);
        same &= a.records.len() == b.records.len() && a.final_parts.total.to_bits() == b.final_parts.total.to_bits();
    }
    Verdict::new(same, format!("outputs bitwise identical: {same}"))
}

fn scaling_transfer(runs: &mut Runs) -> Verdict {
    let g = grid(16);
    let net = YNetwork::default();
    let forcing = build_forcing(&net.forcing_spec(&g), &g, Y_MASS).unwrap();
    let cfg = NiotConfig {
        k_max: 100_000,
        ..NiotConfig::default()
    };
    let zero = CellField::zeros(g);
    let one = CellField::constant(g, 1.0);
    let rep = run_niot(&zero, &forcing, None, &cfg).unwrap();
    record(runs, "scaling base", &rep);
    let c: f64 = 2.0;
    let gamma = cfg.gamma;
    let s = c.powf(2.0 / (gamma + 1.0));
    let norm = |mu: &CellField, f: &ForcingPair| {
        let tg = total_gradient(mu, &zero, &one, f, &cfg).unwrap();
        descent_direction(mu, &tg, gamma)
            .unwrap()
            .values()
            .iter()
            .map(|v| v.abs())
            .sum::<f64>()
            * g.cell_area()
    };
    let base = norm(&rep.mu, &forcing);
    let scaled = norm(&rep.mu.scaled(s), &forcing.scaled(c));
    let predicted = s.powf(2.0 / gamma + gamma - 1.0) * base;
    let ratio = scaled / predicted;
    Verdict::new(
        rep.stopping_reason == StoppingReason::ToleranceMet && (0.1..=10.0).contains(&ratio),
        format!(
            "base {:?} after {} steps, scaled norm {scaled:.3e}, predicted {predicted:.3e}, ratio {ratio:.3} (tol 10x)",
            rep.stopping_reason, rep.iterations
        ),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut runs: Runs = Vec::new();
    let mut failures = 0;
    let mut report = |k: u32, name: &str, v: Verdict| {
        println!("{} {k:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failures += 1;
        }
    };
    if wanted(1) {
        report(1, "exponent formula", exponent_formula());
    }
    if wanted(2) {
        report(2, "gradient fidelity", gradient_fidelity());
    }
    if wanted(3) {
        report(3, "adjoint dot-product", adjoint_dot_product());
    }
    if wanted(4) {
        report(4, "Barenblatt reproduction", barenblatt());
    }
    if wanted(5) {
        report(5, "mass conservation", mass_conservation());
    }
    if wanted(6) {
        report(6, "oracle equivalences", oracle_equivalences());
    }
    if wanted(7) {
        report(7, "Y-network topology", topology(&mut runs));
    }
    if wanted(8) {
        report(8, "connectivity restoration", connectivity_restoration(&mut runs));
    }
    if wanted(10) {
        report(10, "W-locality", w_locality());
    }
    if wanted(11) {
        report(11, "scaling transfer", scaling_transfer(&mut runs));
    }
    if wanted(9) {
        report(9, "descent and stopping", descent_and_stopping(&mut runs));
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
