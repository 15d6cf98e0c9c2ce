//! Acceptance suite: one test per release gate, each printing a single
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`).

use std::time::Instant;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cbf_sim::barrier::{
    BarrierDescriptor, ClassKappa, EnergyBarrier, KinematicBarrier, UnderactuatedBarrier,
};
use cbf_sim::filter::{
    robust_torque_constraint_residual, robust_torque_filter,
    robust_underactuated_constraint_residual, torque_constraint_residual, torque_filter,
    underactuated_constraint_residual, underactuated_filter, velocity_command_filter,
    velocity_filter, RobustMode,
};
use cbf_sim::models::{RobotModel, State, StateBox};
use cbf_sim::qp_oracle::{
    bound_estimator, solve_single_constraint_qp, BoundQuantity, HalfspaceQP, MIN_BOUND_SAMPLES,
};
use cbf_sim::sim::{
    run, DesiredPolicy, FilterChoice, InitialCondition, RunParams, Scenario, Trace,
};
use cbf_sim::verify::{self, FaultInjection, Suite};

const PI: f64 = std::f64::consts::PI;

fn announce(number: u32, name: &str, ok: bool) -> bool {
    println!(
        "ACCEPTANCE {number} {name}: {}",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn overhead_sphere() -> BarrierDescriptor {
    BarrierDescriptor::SphereObstacle {
        center: vec![0.0, 1.2],
        min_distance: 0.4,
    }
}

fn arm_barrier() -> KinematicBarrier {
    KinematicBarrier::new(RobotModel::two_link_arm(), overhead_sphere()).unwrap()
}

fn cartpole_barrier() -> KinematicBarrier {
    KinematicBarrier::new(
        RobotModel::cart_pole(),
        BarrierDescriptor::AngleBox { width: PI / 6.0 },
    )
    .unwrap()
}

fn random_vector(len: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-scale..scale))
}

fn arm_state(rng: &mut ChaCha8Rng) -> State {
    let bx = RobotModel::two_link_arm().valid_box();
    let unit: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
    bx.lerp(&unit)
}

fn cartpole_state(rng: &mut ChaCha8Rng) -> State {
    State::from_slices(
        &[rng.gen_range(-1.0..1.0), PI + rng.gen_range(-0.5..0.5)],
        &[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
    )
}

fn oracle_gap(a_row: &RowDVector<f64>, rhs: f64, u_des: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let qp = HalfspaceQP::new(u_des.clone(), a_row.transpose(), rhs);
    let oracle = solve_single_constraint_qp(&qp).unwrap();
    (u - oracle).abs().max()
}

/// Criterion 1: every filter family agrees with the independently solved
/// projection on at least 10^4 random instances, to 1e-10, in under 10 s.
#[test]
fn criterion_1_filters_match_kkt_oracle() {
    let started = Instant::now();
    let n = 10_000;
    let tol = 1e-10;
    let mut worst_overall = 0.0f64;

    let arm = RobotModel::two_link_arm();
    let kin = arm_barrier();

    // Velocity filter.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let s = arm_state(&mut rng);
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let qdot_des = random_vector(2, 3.0, &mut rng);
        let (h, jh) = kin.h_and_grad(&s.q).unwrap();
        if jh.norm() < 1e-9 {
            continue;
        }
        let out = velocity_filter(&s.q, &kin, &a, &qdot_des).unwrap();
        worst = worst.max(oracle_gap(&jh, -a.apply(h), &qdot_des, &out.command));
    }
    worst_overall = worst_overall.max(worst);

    // Torque filter.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let s = arm_state(&mut rng);
        if s.qdot.norm() < 1e-6 {
            continue;
        }
        let alpha_e = rng.gen_range(0.3..8.0);
        let b = EnergyBarrier::new(kin.clone(), alpha_e).unwrap();
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let u_des = random_vector(2, 15.0, &mut rng);
        let jh = kin.grad(&s.q).unwrap();
        let g = arm.gravity_vector(&s.q).unwrap();
        let lf = alpha_e * (&jh * &s.qdot)[0] + s.qdot.dot(&g);
        let lg = -(s.qdot.transpose() * arm.actuation_matrix(&s.q));
        let rhs = -(lf + a.apply(b.h_d(&s).unwrap()));
        let out = torque_filter(&b, &s, &a, &u_des).unwrap();
        worst = worst.max(oracle_gap(&lg, rhs, &u_des, &out.command));
    }
    worst_overall = worst_overall.max(worst);

    // Robust torque filter, both modes.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for i in 0..n {
        let s = arm_state(&mut rng);
        if s.qdot.norm() < 1e-6 {
            continue;
        }
        let mode = if i % 2 == 0 {
            RobustMode::KeepGravity
        } else {
            RobustMode::DropGravity
        };
        let alpha_e = rng.gen_range(0.3..4.0);
        let c_u = rng.gen_range(3.0..40.0);
        let b = EnergyBarrier::new(kin.clone(), alpha_e).unwrap();
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let u_des = random_vector(2, 15.0, &mut rng);
        let jh = kin.grad(&s.q).unwrap();
        let speed2 = s.qdot.norm_squared();
        let lf = match mode {
            RobustMode::KeepGravity => {
                let g = arm.gravity_vector(&s.q).unwrap();
                alpha_e * (&jh * &s.qdot)[0] + s.qdot.dot(&g)
            }
            RobustMode::DropGravity => alpha_e * (&jh * &s.qdot)[0] - c_u * speed2.sqrt(),
        };
        let h_tilde = -c_u * speed2 + alpha_e * kin.h(&s.q).unwrap();
        let lg = -(s.qdot.transpose() * arm.actuation_matrix(&s.q));
        let rhs = -(lf + a.apply(h_tilde));
        let out = robust_torque_filter(&b, &s, &a, &u_des, c_u, mode).unwrap();
        worst = worst.max(oracle_gap(&lg, rhs, &u_des, &out.command));
    }
    worst_overall = worst_overall.max(worst);

    // Velocity-command filter.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let s = arm_state(&mut rng);
        if s.qdot.norm() < 1e-6 {
            continue;
        }
        let alpha_e = rng.gen_range(0.3..4.0);
        let k_vel = DMatrix::identity(2, 2) * rng.gen_range(2.0..30.0);
        let b = EnergyBarrier::new(kin.clone(), alpha_e).unwrap();
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let qdot_des = random_vector(2, 3.0, &mut rng);
        let jh = kin.grad(&s.q).unwrap();
        let g = arm.gravity_vector(&s.q).unwrap();
        let bk = arm.actuation_matrix(&s.q) * &k_vel;
        let lf = alpha_e * (&jh * &s.qdot)[0]
            + s.qdot.dot(&g)
            + (s.qdot.transpose() * &bk * &s.qdot)[(0, 0)];
        let lg = -(s.qdot.transpose() * bk);
        let rhs = -(lf + a.apply(b.h_d(&s).unwrap()));
        let out = velocity_command_filter(&b, &s, &a, &k_vel, &qdot_des).unwrap();
        worst = worst.max(oracle_gap(&lg, rhs, &qdot_des, &out.command));
    }
    worst_overall = worst_overall.max(worst);

    // Underactuated filter; the constraint is rebuilt from the public
    // residual by affine probing.
    let pole = RobotModel::cart_pole();
    let kin_cp = cartpole_barrier();
    let b = UnderactuatedBarrier::new(kin_cp, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let s = cartpole_state(&mut rng);
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let u_des = random_vector(pole.input_dim(), 10.0, &mut rng);
        let out = match underactuated_filter(&b, &s, &a, &u_des) {
            Ok(out) => out,
            Err(_) => continue,
        };
        let probe = 1e6;
        let resid = |u: &DVector<f64>| underactuated_constraint_residual(&b, &s, &a, u).unwrap();
        let r0 = resid(&DVector::zeros(1));
        let slope = (resid(&DVector::from_row_slice(&[probe])) - r0) / probe;
        let a_row = RowDVector::from_row_slice(&[slope]);
        if a_row.norm() < 1e-12 {
            worst = worst.max((&out.command - &u_des).abs().max());
            continue;
        }
        worst = worst.max(oracle_gap(&a_row, -r0, &u_des, &out.command));
    }
    worst_overall = worst_overall.max(worst);

    let elapsed = started.elapsed();
    let ok = worst_overall <= tol && elapsed.as_secs_f64() < 10.0;
    assert!(
        announce(1, "filters_match_kkt_oracle", ok),
        "worst gap {worst_overall:.3e}, elapsed {elapsed:?}"
    );
}

fn invariance_scenario(filter: FilterChoice, desired: DesiredPolicy, seed: u64) -> Scenario {
    Scenario {
        name: format!("invariance_{seed}"),
        model: RobotModel::two_link_arm(),
        barrier: overhead_sphere(),
        filter,
        desired,
        initial: InitialCondition::Sample {
            margin: 0.05,
            zero_velocity: false,
        },
        run: RunParams {
            dt: 1e-3,
            horizon: 10.0,
            seed,
        },
    }
}

fn arm_shove() -> DesiredPolicy {
    DesiredPolicy::Sinusoid {
        amplitude: vec![12.0, 6.0],
        frequency_hz: vec![0.4, 0.7],
        phase: vec![0.0, 1.0],
        offset: vec![0.0, 0.0],
    }
}

/// Criterion 2: the torque filter keeps 100 sampled starts (barrier
/// margin 0.05) inside the energy-safe set for 10 s at dt = 1e-3, within
/// a 2-minute budget.
#[test]
fn criterion_2_torque_filter_invariance() {
    let started = Instant::now();
    let results: Vec<(f64, bool)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let scenario = invariance_scenario(
                FilterChoice::Torque {
                    alpha: ClassKappa::default(),
                    alpha_e: 1.0,
                },
                arm_shove(),
                seed,
            );
            let (trace, m) = run(&scenario).unwrap();
            (m.min_h_d, trace.error.is_none())
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let all_completed = results.iter().all(|r| r.1);
    let elapsed = started.elapsed();
    let ok = worst >= -1e-3 && all_completed && elapsed.as_secs_f64() < 120.0;
    assert!(
        announce(2, "torque_filter_invariance_100_starts", ok),
        "worst min h_D {worst:.6}, all completed {all_completed}, elapsed {elapsed:?}"
    );
}

/// Criterion 3: the same suite passes with the velocity-command filter
/// driving an embedded PD loop with K_vel = 10 I.
#[test]
fn criterion_3_velocity_command_invariance() {
    let started = Instant::now();
    let results: Vec<(f64, bool)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let scenario = invariance_scenario(
                FilterChoice::VelocityCommand {
                    alpha: ClassKappa::default(),
                    alpha_e: 1.0,
                    k_vel: 10.0,
                },
                DesiredPolicy::Sinusoid {
                    amplitude: vec![2.0, 2.5],
                    frequency_hz: vec![0.3, 0.5],
                    phase: vec![0.0, 1.0],
                    offset: vec![0.0, 0.0],
                },
                seed,
            );
            let (trace, m) = run(&scenario).unwrap();
            (m.min_h_d, trace.error.is_none())
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let all_completed = results.iter().all(|r| r.1);
    let elapsed = started.elapsed();
    let ok = worst >= -1e-3 && all_completed && elapsed.as_secs_f64() < 120.0;
    assert!(
        announce(3, "velocity_command_invariance_100_starts", ok),
        "worst min h_D {worst:.6}, all completed {all_completed}, elapsed {elapsed:?}"
    );
}

/// Criterion 4: 50 sampled cart-pole starts under an aggressive desired
/// input never leave the angle cone (with discretization slack 1e-3).
#[test]
fn criterion_4_cartpole_angle_containment() {
    let lo = 5.0 * PI / 6.0 - 1e-3;
    let hi = 7.0 * PI / 6.0 + 1e-3;
    let results: Vec<(f64, f64, bool)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let scenario = Scenario {
                name: format!("cartpole_{seed}"),
                model: RobotModel::cart_pole(),
                barrier: BarrierDescriptor::AngleBox { width: PI / 6.0 },
                filter: FilterChoice::Underactuated {
                    alpha: ClassKappa::default(),
                    alpha_e: 1.0,
                },
                desired: DesiredPolicy::Sinusoid {
                    amplitude: vec![15.0],
                    frequency_hz: vec![0.4],
                    phase: vec![0.5],
                    offset: vec![0.0],
                },
                initial: InitialCondition::Sample {
                    margin: 0.05,
                    zero_velocity: false,
                },
                run: RunParams {
                    dt: 1e-3,
                    horizon: 10.0,
                    seed,
                },
            };
            let (trace, _) = run(&scenario).unwrap();
            let theta_min = trace
                .records
                .iter()
                .map(|r| r.q[1])
                .fold(f64::INFINITY, f64::min);
            let theta_max = trace
                .records
                .iter()
                .map(|r| r.q[1])
                .fold(f64::NEG_INFINITY, f64::max);
            (theta_min, theta_max, trace.error.is_none())
        })
        .collect();
    let theta_min = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let theta_max = results
        .iter()
        .map(|r| r.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let all_completed = results.iter().all(|r| r.2);
    let ok = theta_min >= lo && theta_max <= hi && all_completed;
    assert!(
        announce(4, "cartpole_angle_containment_50_starts", ok),
        "theta range [{theta_min:.4}, {theta_max:.4}] vs [{lo:.4}, {hi:.4}], all completed {all_completed}"
    );
}

/// Criterion 5: both robust filters keep their invariance suites safe
/// with estimated bounds, and on every logged step the tightened
/// constraint implies the exact one (no counterexamples over at least
/// 10^5 steps).
#[test]
fn criterion_5_robust_variants() {
    // Robust torque: c_u = 5 * (sampled max of half lambda_max(D)),
    // mirroring the five-fold inflation used for the arm experiments.
    let arm = RobotModel::two_link_arm();
    let lambda_hat = bound_estimator(
        &arm,
        &arm.valid_box(),
        BoundQuantity::HalfLambdaMaxD,
        1.0,
        MIN_BOUND_SAMPLES,
    )
    .unwrap()
    .c_u;
    let c_u_arm = 5.0 * lambda_hat;

    let torque_traces: Vec<Trace> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let scenario = invariance_scenario(
                FilterChoice::RobustTorque {
                    alpha: ClassKappa::default(),
                    alpha_e: 1.0,
                    c_u: c_u_arm,
                    mode: RobustMode::KeepGravity,
                },
                arm_shove(),
                seed,
            );
            run(&scenario).unwrap().0
        })
        .collect();
    let torque_ok = torque_traces.iter().all(|t| t.error.is_none())
        && torque_traces
            .iter()
            .flat_map(|t| &t.records)
            .all(|r| r.h_d >= -1e-3);

    // Robust underactuated: bounds estimated on the one-sided box the
    // scenario stays in, short horizon so it actually stays there.
    let pole = RobotModel::cart_pole();
    let bx = StateBox::new(
        vec![-PI, PI + 0.1],
        vec![PI, PI + PI / 6.0],
        vec![-5.0, -5.0],
        vec![5.0, 5.0],
    );
    let kin_cp = cartpole_barrier();
    let report =
        bound_estimator(&pole, &bx, BoundQuantity::DHBounds(&kin_cp), 1.25, 20_000).unwrap();
    let (c_l, c_u) = (report.c_l.unwrap(), report.c_u);

    let pole_traces: Vec<Trace> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let scenario = Scenario {
                name: format!("robust_pole_{seed}"),
                model: RobotModel::cart_pole(),
                barrier: BarrierDescriptor::AngleBox { width: PI / 6.0 },
                filter: FilterChoice::RobustUnderactuated {
                    alpha: ClassKappa::default(),
                    alpha_e: 1.0,
                    c_l,
                    c_u,
                },
                desired: DesiredPolicy::Sinusoid {
                    amplitude: vec![1.0],
                    frequency_hz: vec![0.5],
                    phase: vec![0.1 * seed as f64],
                    offset: vec![2.0],
                },
                initial: InitialCondition::State {
                    q: vec![0.0, PI + 0.18 + 0.01 * seed as f64],
                    qdot: vec![0.0, 0.05 + 0.01 * seed as f64],
                },
                run: RunParams {
                    dt: 1e-3,
                    horizon: 1.0,
                    seed,
                },
            };
            run(&scenario).unwrap().0
        })
        .collect();
    let pole_runs_ok = pole_traces.iter().all(|t| t.error.is_none())
        && pole_traces
            .iter()
            .flat_map(|t| &t.records)
            .all(|r| r.h_d >= -1e-3 && bx.contains(&State::new(r.q.clone(), r.qdot.clone())));

    // Implication audit over every logged step: wherever the tightened
    // constraint held for the applied input, the exact one must hold too.
    let tol = 1e-9;
    let kin = arm_barrier();
    let eb = EnergyBarrier::new(kin, 1.0).unwrap();
    let a = ClassKappa::default();
    let torque_counters: usize = torque_traces
        .par_iter()
        .map(|t| {
            t.records
                .iter()
                .filter(|r| {
                    let s = State::new(r.q.clone(), r.qdot.clone());
                    let tight = robust_torque_constraint_residual(
                        &eb,
                        &s,
                        &a,
                        &r.applied,
                        c_u_arm,
                        RobustMode::KeepGravity,
                    )
                    .unwrap();
                    if tight < -tol {
                        return false;
                    }
                    torque_constraint_residual(&eb, &s, &a, &r.applied).unwrap() < -tol
                })
                .count()
        })
        .sum();
    let ub = UnderactuatedBarrier::new(cartpole_barrier(), 1.0).unwrap();
    let pole_counters: usize = pole_traces
        .par_iter()
        .map(|t| {
            t.records
                .iter()
                .filter(|r| {
                    let s = State::new(r.q.clone(), r.qdot.clone());
                    let tight =
                        robust_underactuated_constraint_residual(&ub, &s, &a, &r.applied, c_l, c_u)
                            .unwrap();
                    if tight < -tol {
                        return false;
                    }
                    underactuated_constraint_residual(&ub, &s, &a, &r.applied).unwrap() < -tol
                })
                .count()
        })
        .sum();
    let audited_steps: usize = torque_traces
        .iter()
        .chain(pole_traces.iter())
        .map(|t| t.records.len())
        .sum();

    let ok = torque_ok
        && pole_runs_ok
        && torque_counters == 0
        && pole_counters == 0
        && audited_steps >= 100_000;
    assert!(
        announce(5, "robust_variants_safe_and_tight_implies_exact", ok),
        "torque suite ok {torque_ok}, pole suite ok {pole_runs_ok}, counterexamples {torque_counters}+{pole_counters}, audited {audited_steps}"
    );
}

fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn swept_metrics(file: &str, parameter: &str, values: &[f64]) -> Vec<cbf_sim::Metrics> {
    values
        .iter()
        .map(|v| {
            let config =
                cbf_sim::cli::load_config(&scenario_path(file), &[format!("{parameter}={v}")])
                    .unwrap();
            run(&config.scenario).unwrap().1
        })
        .collect()
}

/// Criterion 6: the shipped kinematic scenario violates safety for at
/// least one swept alpha, while the shipped energy sweep stays safe for
/// every alpha_e in {0.5, 1, 5, 20}.
#[test]
fn criterion_6_alpha_dichotomy() {
    let kin = swept_metrics(
        "arm_kinematic_unsafe.toml",
        "filter.alpha.gain",
        &[0.5, 1.0, 2.0, 3.0, 5.0],
    );
    let some_alpha_unsafe = kin.iter().any(|m| m.min_h < 0.0);

    let energy = swept_metrics(
        "arm_energy_sweep.toml",
        "filter.alpha_e",
        &[0.5, 1.0, 5.0, 20.0],
    );
    let all_alpha_e_safe = energy.iter().all(|m| m.min_h_d >= -1e-3);

    let ok = some_alpha_unsafe && all_alpha_e_safe;
    assert!(
        announce(6, "alpha_dichotomy_on_shipped_scenarios", ok),
        "kinematic min_h {:?}, energy min_h_D {:?}",
        kin.iter().map(|m| m.min_h).collect::<Vec<_>>(),
        energy.iter().map(|m| m.min_h_d).collect::<Vec<_>>()
    );
}

/// Regression riding on the energy sweep: the filter gets less intrusive
/// as alpha_e grows, so tracking error cannot increase along the sweep.
#[test]
fn energy_sweep_tracking_improves_with_alpha_e() {
    let energy = swept_metrics(
        "arm_energy_sweep.toml",
        "filter.alpha_e",
        &[0.5, 1.0, 5.0, 20.0],
    );
    let rms: Vec<f64> = energy.iter().map(|m| m.tracking_rms.unwrap()).collect();
    assert!(
        rms.windows(2).all(|w| w[1] <= w[0]),
        "tracking rms not nonincreasing: {rms:?}"
    );
}

/// Criterion 7: the structural residual suites (skew symmetry, safe-set
/// nesting, constraint-coordinate reduction, exact tracking decay) all
/// pass at their stated tolerances.
#[test]
fn criterion_7_structure_residuals() {
    let reports = verify::run(Suite::All, FaultInjection::None);
    let ok = reports.iter().all(|r| r.passed());
    for report in &reports {
        for p in report.properties.iter().filter(|p| !p.passed) {
            eprintln!("{}", p.render());
        }
    }
    assert!(announce(7, "structure_residual_suites", ok));
}

/// Criterion 8: running the same scenario through the CLI twice yields
/// byte-identical traces and metrics.
#[test]
fn criterion_8_reruns_are_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_cbf-sim");
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let status = std::process::Command::new(bin)
            .arg("run")
            .arg(scenario_path("cartpole_energy.toml"))
            .arg("--out")
            .arg(out)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    }
    let mut ok = true;
    for file in [
        "cartpole_energy.csv",
        "cartpole_energy.metrics.txt",
        "cartpole_energy.metrics.json",
    ] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        ok &= a == b;
    }
    assert!(announce(8, "cli_reruns_byte_identical", ok));
}
