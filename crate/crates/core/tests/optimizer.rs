mod common;

use common::*;
use niot_core::imageio::{apply_mask, build_forcing};
use niot_core::inpaint::{run_niot, InitialGuess, NiotConfig, StoppingReason, WeightKind};
use niot_core::synth::YNetwork;
use niot_core::CellField;

fn small_problem(n: usize) -> (CellField, CellField, niot_core::ForcingPair) {
    let g = grid(n);
    let y = YNetwork::default();
    let truth = y.image(&g, 0.5).unwrap();
    let mask = y.mask(&g, 0.5).unwrap();
    let forcing = build_forcing(&y.forcing_spec(&g), &g, 0.1).unwrap();
    (truth, mask, forcing)
}

#[test]
fn accepted_steps_strictly_decrease_the_objective() {
    let (truth, mask, forcing) = small_problem(16);
    for (lambda, map) in [(0.0, "identity"), (0.05, "identity"), (0.05, "pm")] {
        let cfg = NiotConfig {
            lambda,
            map_kind: map.into(),
            alpha: 10.0,
            k_max: 60,
            ..NiotConfig::default()
        };
        let observed = apply_mask(&truth, &mask).unwrap();
        let rep = run_niot(&observed, &forcing, Some(&mask), &cfg).unwrap();
        let accepted: Vec<f64> = rep.records.iter().filter(|r| r.accepted).map(|r| r.objective).collect();
        assert_eq!(accepted.len(), rep.iterations);
        assert!(accepted.windows(2).all(|w| w[1] < w[0]), "{map} λ={lambda}");
        assert!(rep.mu.min() >= 0.0);
        assert_eq!(rep.final_parts.total, *accepted.last().unwrap());
    }
}

#[test]
fn tolerance_stop_reports_small_update() {
    // Without net transport only the mass term acts and μ decays toward 0.
    let g = grid(8);
    let f = CellField::constant(g, 1.0);
    let forcing = niot_core::ForcingPair::new(f.clone(), f).unwrap();
    let cfg = NiotConfig {
        stop_tol: 1e-3,
        k_max: 5000,
        ..NiotConfig::default()
    };
    let rep = run_niot(&CellField::zeros(g), &forcing, None, &cfg).unwrap();
    assert_eq!(rep.stopping_reason, StoppingReason::ToleranceMet);
    assert!(rep.final_update_norm < 1e-3);
    assert!(rep.iterations > 0);
}

#[test]
fn values_hidden_by_the_mask_do_not_matter() {
    let (truth, mask, forcing) = small_problem(16);
    let mut scribbled = truth.clone();
    for (v, m) in scribbled.values_mut().iter_mut().zip(mask.values()) {
        if *m > 0.5 {
            *v = 0.77;
        }
    }
    for mu0 in [InitialGuess::Uniform(1.0), InitialGuess::FromObservation] {
        let cfg = NiotConfig {
            lambda: 0.1,
            alpha: 10.0,
            weight_kind: WeightKind::Mask,
            mu0,
            k_max: 25,
            ..NiotConfig::default()
        };
        let a = run_niot(&truth, &forcing, Some(&mask), &cfg).unwrap();
        let b = run_niot(&scribbled, &forcing, Some(&mask), &cfg).unwrap();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.u, b.u);
        assert_eq!(a.image, b.image);
        assert_eq!(a.records.len(), b.records.len());
    }
}

#[test]
fn step_underflow_is_reported_not_raised() {
    let (truth, mask, forcing) = small_problem(12);
    let cfg = NiotConfig {
        dt0: 1e6,
        dt_max: 1e6,
        dt_min: 6e5,
        ..NiotConfig::default()
    };
    let rep = run_niot(&truth, &forcing, Some(&mask), &cfg).unwrap();
    assert_eq!(rep.stopping_reason, StoppingReason::StepUnderflow);
    assert_eq!(rep.iterations, 0);
}
