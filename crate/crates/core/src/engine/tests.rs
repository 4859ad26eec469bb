use super::*;
use crate::directions::{BroydenFull, BroydenRestarted, DirectionKind, ZeroDirection};
use crate::problems::{build_ball_line_example, build_cones_example, build_lasso, build_soc_example, ProblemInstance};
use crate::space::Metric;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn constant_zero() -> AveragedOperator {
    AveragedOperator::new("zero", 2, 0.5, Metric::Euclidean, |x: &Vector| Vector::zeros(x.len())).unwrap()
}

fn identity() -> AveragedOperator {
    AveragedOperator::new("id", 2, 0.5, Metric::Euclidean, |x: &Vector| x.clone()).unwrap()
}

fn tight(max_iters: usize) -> SolverConfig {
    SolverConfig {
        tol_rel: 0.0,
        max_iters,
        ..SolverConfig::default()
    }
}

#[test]
fn km_constant_map_converges_in_one_step() {
    let op = constant_zero();
    let res = km_solve(&op, &v(&[2.0, 3.0]), &|_| 1.0, &SolverConfig::default(), None).unwrap();
    assert_eq!(res.summary.iterations, 1);
    assert_eq!(res.x, Vector::zeros(2));
    assert_eq!(res.summary.status, Status::Converged);
}

#[test]
fn km_identity_stops_immediately() {
    let op = identity();
    let res = km_solve(&op, &v(&[2.0, 3.0]), &|_| 1.0, &SolverConfig::default(), None).unwrap();
    assert_eq!(res.summary.iterations, 0);
    assert_eq!(res.x, v(&[2.0, 3.0]));
    assert_eq!(res.summary.t_evals, 1);
}

#[test]
fn km_rejects_lambda_out_of_range() {
    let op = build_cones_example().unwrap().operator;
    assert!(km_solve(&op, &v(&[1.0, 0.15]), &|_| 1.6, &SolverConfig::default(), None).is_err());
}

#[test]
fn km_residual_is_monotone_on_cones() {
    let p = build_cones_example().unwrap();
    let res = km_solve(&p.operator, &p.x0, &|_| 1.0, &tight(500), None).unwrap();
    let norms: Vec<f64> = res.trace.iter().map(|r| r.norm_rx).collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0]));
    assert!(norms[norms.len() - 1] < norms[0]);
}

#[test]
fn fixed_start_takes_no_iterations() {
    let p = build_cones_example().unwrap();
    let mut dirs = BroydenRestarted::new(20, 0.2).unwrap();
    let res = supermann_solve(
        &p.operator,
        &Vector::zeros(2),
        &mut dirs,
        &SolverConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(res.summary.iterations, 0);
    assert_eq!(res.summary.status, Status::Converged);
    assert_eq!(res.trace.len(), 1);
    assert_eq!(res.trace[0].kind, StepKind::Terminated);
}

#[test]
fn zero_residual_step_terminates() {
    let p = build_cones_example().unwrap();
    let mut dirs = ZeroDirection;
    let mut state = initial_state(&p.operator, &Vector::zeros(2), &mut dirs).unwrap();
    let before = state.x.clone();
    let cfg = SolverConfig::default();
    let params = StepParams::new(&cfg, p.operator.alpha(), 0.0);
    let rec = supermann_step(&mut state, &p.operator, &mut dirs, &cfg, params).unwrap();
    assert_eq!(rec.kind, StepKind::Terminated);
    assert_eq!(state.x, before);
    assert_eq!(state.k, 0);
}

#[test]
fn zero_direction_takes_full_safeguard_step() {
    let p = build_cones_example().unwrap();
    let op = &p.operator;
    let mut dirs = ZeroDirection;
    let mut state = initial_state(op, &p.x0, &mut dirs).unwrap();
    let cfg = SolverConfig::default();
    let params = StepParams::new(&cfg, op.alpha(), state.norm_rx);
    let expected = op.relax(&state.x, &state.tx, 1.0).unwrap();
    let rec = supermann_step(&mut state, op, &mut dirs, &cfg, params).unwrap();
    assert_eq!(rec.kind, StepKind::K2);
    assert_eq!(rec.tau, 1.0);
    assert_eq!(rec.backtracks, 0);
    assert_eq!(state.x, expected);
}

#[test]
fn blind_step_when_residual_small_relative_to_eta() {
    let p = build_cones_example().unwrap();
    let op = &p.operator;
    let mut dirs = BroydenRestarted::new(20, 0.2).unwrap();
    let mut state = initial_state(op, &p.x0, &mut dirs).unwrap();
    state.eta = 10.0 * state.norm_rx;
    let eta_before = state.eta;
    let x = state.x.clone();
    let d = state.d.clone();
    let cfg = SolverConfig::default();
    let params = StepParams::new(&cfg, op.alpha(), state.norm_rx);
    let rec = supermann_step(&mut state, op, &mut dirs, &cfg, params).unwrap();
    assert_eq!(rec.kind, StepKind::K0);
    assert_eq!(state.x, &x + &d);
    assert!(state.eta < eta_before);
}

#[test]
fn km_equivalence_with_zero_directions() {
    let p = build_cones_example().unwrap();
    let cfg = tight(200);
    let mut km_iterates = Vec::new();
    km_solve_observed(&p.operator, &p.x0, &|_| 1.0, &cfg, None, &mut |x| {
        km_iterates.push(x.clone())
    })
    .unwrap();
    let mut sm_iterates = Vec::new();
    let res = supermann_solve_observed(&p.operator, &p.x0, &mut ZeroDirection, &cfg, None, &mut |s| {
        sm_iterates.push(s.x.clone())
    })
    .unwrap();
    assert_eq!(km_iterates.len(), 201);
    assert_eq!(sm_iterates.len(), 201);
    for (a, b) in km_iterates.iter().zip(&sm_iterates) {
        assert!((a - b).amax() <= 1e-14);
    }
    assert_eq!(res.summary.k2_steps, 200);
}

#[test]
fn non_finite_values_abort() {
    let op = AveragedOperator::new("nan", 1, 0.5, Metric::Euclidean, |x: &Vector| {
        if x[0] < 0.5 {
            Vector::from_element(1, f64::NAN)
        } else {
            x * 0.5
        }
    })
    .unwrap();
    let res = supermann_solve(&op, &v(&[1.0]), &mut ZeroDirection, &tight(100), None).unwrap();
    assert_eq!(res.summary.status, Status::NonFinite);
}

#[test]
fn budget_exhaustion_is_not_an_error() {
    let p = build_ball_line_example().unwrap();
    let cfg = SolverConfig {
        max_iters: 5,
        ..tight(5)
    };
    let res = km_solve(&p.operator, &p.x0, &|_| 1.0, &cfg, None).unwrap();
    assert_eq!(res.summary.status, Status::NotConverged);
    assert_eq!(res.stop_reason, StopReason::MaxIterations);
    let cfg = SolverConfig {
        max_t_evals: 3,
        ..tight(1000)
    };
    let res = supermann_solve(&p.operator, &p.x0, &mut ZeroDirection, &cfg, None).unwrap();
    assert_eq!(res.stop_reason, StopReason::MaxEvaluations);
}

#[derive(Debug)]
struct FirstCoordinateBelow(f64);

impl Termination for FirstCoordinateBelow {
    fn reached(&self, x: &Vector) -> bool {
        x[0].abs() < self.0
    }
}

#[test]
fn problem_specific_termination() {
    let p = build_cones_example().unwrap();
    let stop = FirstCoordinateBelow(0.5);
    let res = km_solve(&p.operator, &p.x0, &|_| 1.0, &tight(100_000), Some(&stop)).unwrap();
    assert_eq!(res.stop_reason, StopReason::ProblemTolerance);
    assert!(res.x[0].abs() < 0.5);
}

#[test]
fn summary_serializes_with_expected_keys() {
    let p = build_cones_example().unwrap();
    let res = supermann_solve(&p.operator, &p.x0, &mut ZeroDirection, &tight(3), None).unwrap();
    let value = serde_json::to_value(&res.summary).unwrap();
    let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    let mut expected = vec![
        "status",
        "iterations",
        "T_evals",
        "final_residual",
        "k0_steps",
        "k1_steps",
        "k2_steps",
        "fallback_steps",
        "wall_time_s",
    ];
    expected.sort();
    assert_eq!(keys, expected);
    assert_eq!(value["status"], "not_converged");
}

#[test]
fn trace_rows_serialize_in_column_order() {
    let rec = StepRecord {
        k: 3,
        kind: StepKind::Nominal,
        tau: 0.5,
        backtracks: 1,
        rho: None,
        norm_rx: 1.0,
        norm_d: 2.0,
        eta: Some(1.0),
        r_safe: None,
        t_evals: 9,
    };
    let s = serde_json::to_string(&rec).unwrap();
    let mut last = 0;
    for col in TRACE_COLUMNS {
        let pos = s.find(&format!("\"{col}\"")).unwrap();
        assert!(pos >= last, "{col}");
        last = pos;
    }
    assert!(s.contains("\"NOM\""));
}

struct Run {
    states: Vec<IterateState>,
    result: SolveResult,
}

fn run(p: &ProblemInstance, kind: DirectionKind, cfg: &SolverConfig) -> Run {
    let mut dirs = kind.build(p.x0.len(), cfg.memory, cfg.theta_bar).unwrap();
    let mut states = Vec::new();
    let result = supermann_solve_observed(&p.operator, &p.x0, dirs.as_mut(), cfg, None, &mut |s| {
        states.push(s.clone())
    })
    .unwrap();
    Run { states, result }
}

fn example_runs() -> Vec<(ProblemInstance, Run)> {
    // no effective truncation: near tangential intersections the useful
    // step is of order sqrt(|Rx|), far above 1e4 |Rx|
    let cfg = SolverConfig {
        tol_rel: 1e-10,
        max_iters: 2000,
        d_max: 1e8,
        ..SolverConfig::default()
    };
    let mut out = Vec::new();
    for build in [build_cones_example, build_ball_line_example, build_soc_example] {
        for kind in [DirectionKind::Broyden, DirectionKind::Rbroyden] {
            let p = build().unwrap();
            let r = run(&p, kind, &cfg);
            out.push((p, r));
        }
    }
    out
}

#[test]
fn safeguard_steps_decrease_distance_to_fixed_points() {
    for (p, r) in example_runs() {
        let alpha = p.operator.alpha();
        let lambda = SolverConfig::default().lambda_for(alpha);
        for (rec, pair) in r.result.trace.iter().zip(r.states.windows(2)) {
            if rec.kind != StepKind::K2 {
                continue;
            }
            let (x, xn) = (&pair[0].x, &pair[1].x);
            // |x+ - x| = lambda rho / |Rw|, so rho^2 / |Rw|^2 = |x+ - x|^2 / lambda^2
            let decrease = lambda * (1.0 / alpha - lambda) * (xn - x).norm_squared() / (lambda * lambda);
            for z in &p.fixed_points {
                let before = (x - z).norm_squared();
                let after = (xn - z).norm_squared();
                assert!(
                    after <= before - decrease + 1e-9 * before.max(1.0),
                    "{} k={}",
                    p.name(),
                    rec.k
                );
            }
        }
    }
}

#[test]
fn educated_and_blind_steps_are_bounded() {
    let d_max = 1e8;
    for (p, r) in example_runs() {
        for (rec, pair) in r.result.trace.iter().zip(r.states.windows(2)) {
            if matches!(rec.kind, StepKind::K0 | StepKind::K1) {
                let step = (&pair[1].x - &pair[0].x).norm();
                assert!(step <= d_max * rec.norm_rx + 1e-12, "{}", p.name());
            }
        }
    }
}

#[test]
fn backtracks_respect_theoretical_bound() {
    let cfg = SolverConfig {
        d_max: 1e8,
        ..SolverConfig::default()
    };
    for (p, r) in example_runs() {
        let alpha = p.operator.alpha();
        let tau_min = (cfg.beta * (1.0 - cfg.sigma) / (4.0 * alpha * cfg.d_max)).min(1.0);
        let bound = tau_min.log(cfg.beta).ceil() as usize + 1;
        for rec in &r.result.trace {
            assert!(rec.backtracks <= bound.min(cfg.max_backtracks), "{}", p.name());
        }
    }
}

#[test]
fn eta_is_monotone_and_drops_only_at_blind_steps() {
    for (p, r) in example_runs() {
        let mut eta = r.states[0].eta;
        for rec in r.result.trace.iter().filter(|r| r.kind != StepKind::Terminated) {
            let next = rec.eta.unwrap();
            assert!(next <= eta, "{}", p.name());
            assert_eq!(next < eta, rec.kind == StepKind::K0, "{} k={}", p.name(), rec.k);
            eta = next;
        }
    }
}

#[test]
fn residuals_are_square_summable_in_practice() {
    for (p, r) in example_runs() {
        assert_eq!(r.result.summary.status, Status::Converged, "{}", p.name());
        let sq: Vec<f64> = r.states.iter().map(|s| s.norm_rx * s.norm_rx).collect();
        let total: f64 = sq.iter().sum();
        let tail: f64 = sq[sq.len() - sq.len() / 4..].iter().sum();
        assert!(total.is_finite());
        assert!(tail < 0.01 * total, "{}: tail {tail} total {total}", p.name());
    }
}

#[test]
fn broyden_solves_small_lasso() {
    let p = build_lasso(20, 40, 0.05, 4).unwrap();
    let mut dirs = BroydenFull::new(40, 0.2).unwrap();
    let cfg = SolverConfig {
        tol_rel: 1e-8,
        ..SolverConfig::default()
    };
    let res = supermann_solve(&p.operator, &p.x0, &mut dirs, &cfg, None).unwrap();
    assert_eq!(res.summary.status, Status::Converged);
}
