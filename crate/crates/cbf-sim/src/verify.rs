//! Executable verification suites behind `cbf-sim verify`.
//!
//! Three suites group the library's checkable claims:
//!
//! * `models`: structural identities of the dynamics (symmetry, energy
//!   conservation, gradients) and the nesting of the safe sets.
//! * `filters`: agreement of every closed-form filter with an
//!   independently solved projection, the constraint-coordinate
//!   reduction against finite differences of the actual flow, exact
//!   tracking decay, and the robust-constraint implications.
//! * `bounds`: sampled bound estimates dominate fresh samples they were
//!   not fitted on.
//!
//! Each property reports a count, a worst-case residual, and its
//! tolerance, so a failure points at a number rather than a boolean.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::{
    reduced_terms, BarrierDescriptor, ClassKappa, EnergyBarrier, KinematicBarrier,
    UnderactuatedBarrier,
};
use crate::diff;
use crate::filter::{
    coordinate_w_map, coupling_ok, explicit_cbf_qp, robust_torque_constraint_residual,
    robust_torque_filter, robust_underactuated_constraint_residual, robust_underactuated_filter,
    schur_reduce, torque_constraint_residual, torque_filter, tracking_qdot_des,
    underactuated_constraint_residual, underactuated_filter, velocity_command_filter,
    velocity_filter, TrackingTask,
};
use crate::models::{RobotModel, State, StateBox};
use crate::qp_oracle::{
    bound_estimator, solve_single_constraint_qp, BoundQuantity, HalfspaceQP, MIN_BOUND_SAMPLES,
};
use crate::sim::rk4_step;

/// Which suite(s) to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Models,
    Filters,
    Bounds,
    All,
}

/// Deliberate corruption used to confirm the suites have teeth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    None,
    /// Flip the sign of Ψ when deciding whether the QP constraint is
    /// active. The oracle-agreement property must fail.
    PsiSignFlip,
}

/// Outcome of one checked property.
#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    /// States or instances actually checked.
    pub checks: usize,
    /// Draws skipped because the property's premise did not apply
    /// (outside the safe set, degenerate chart, ...).
    pub skipped: usize,
    /// Worst residual seen, in the property's own units.
    pub worst: f64,
    pub tolerance: f64,
}

impl PropertyResult {
    pub fn render(&self) -> String {
        format!(
            "  [{}] {:<46} checks={:<6} skipped={:<5} worst={:<10.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checks,
            self.skipped,
            self.worst,
            self.tolerance
        )
    }
}

/// All properties of one suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }
}

/// Run the requested suite(s).
pub fn run(suite: Suite, fault: FaultInjection) -> Vec<SuiteReport> {
    match suite {
        Suite::Models => vec![models_suite()],
        Suite::Filters => vec![filters_suite(fault)],
        Suite::Bounds => vec![bounds_suite()],
        Suite::All => vec![models_suite(), filters_suite(fault), bounds_suite()],
    }
}

fn all_models() -> Vec<RobotModel> {
    vec![
        RobotModel::double_integrator(),
        RobotModel::two_link_arm(),
        RobotModel::cart_pole(),
    ]
}

/// Uniform draws from the model's valid box.
fn sample_states(model: &RobotModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<State> {
    let bx = model.valid_box();
    let dim = 2 * model.k();
    (0..n)
        .map(|_| {
            let unit: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            bx.lerp(&unit)
        })
        .collect()
}

fn random_vector(len: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-scale..scale))
}

/// The three shipped barrier pairings used by set-level properties.
fn barrier_pairings() -> Vec<(RobotModel, BarrierDescriptor)> {
    vec![
        (
            RobotModel::double_integrator(),
            BarrierDescriptor::PositionBox { limit: 2.0 },
        ),
        (
            RobotModel::two_link_arm(),
            BarrierDescriptor::SphereObstacle {
                center: vec![0.0, 1.2],
                min_distance: 0.4,
            },
        ),
        (
            RobotModel::cart_pole(),
            BarrierDescriptor::AngleBox {
                width: std::f64::consts::FRAC_PI_6,
            },
        ),
    ]
}

// ────────────────────────────────────────────────────────────────────────────
// models suite

fn models_suite() -> SuiteReport {
    let properties = vec![
        mass_matrix_symmetric_spd(),
        coriolis_matches_mass_rate(),
        gravity_is_potential_gradient(),
        task_jacobian_matches_fd(),
        forward_dynamics_solves_manipulator_equation(),
        energy_conserved_without_gravity(),
        energy_safe_set_inside_position_safe_set(),
        energy_safe_set_grows_with_alpha_e(),
        interior_states_captured_for_large_alpha_e(),
    ];
    SuiteReport {
        suite: "models",
        properties,
    }
}

fn mass_matrix_symmetric_spd() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut spd_ok = true;
    for model in all_models() {
        for s in sample_states(&model, 1000, &mut rng) {
            let d = model.mass_matrix(&s.q).unwrap();
            worst = worst.max((&d - d.transpose()).abs().max());
            spd_ok &= nalgebra::Cholesky::new(d).is_some();
            checks += 1;
        }
    }
    let tolerance = 1e-12;
    PropertyResult {
        name: "mass_matrix_symmetric_spd",
        passed: worst <= tolerance && spd_ok,
        checks,
        skipped: 0,
        worst,
        tolerance,
    }
}

/// `q̇ᵀ(Ḋ − 2C)q̇` must vanish; we check the stronger matrix statement
/// that `Ḋ − 2C` is skew-symmetric, with `Ḋ` from a directional finite
/// difference of the mass matrix along `q̇`.
fn coriolis_matches_mass_rate() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for model in all_models() {
        for s in sample_states(&model, 1000, &mut rng) {
            let d_dot =
                diff::matrix_directional(|q| model.mass_matrix(q).unwrap(), &s.q, &s.qdot, 1e-6);
            let c = model.coriolis_matrix(&s.q, &s.qdot).unwrap();
            let m = d_dot - 2.0 * c;
            worst = worst.max((&m + m.transpose()).abs().max());
            checks += 1;
        }
    }
    let tolerance = 1e-6;
    PropertyResult {
        name: "coriolis_matches_mass_rate",
        passed: worst <= tolerance,
        checks,
        skipped: 0,
        worst,
        tolerance,
    }
}

fn gravity_is_potential_gradient() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for model in all_models() {
        for s in sample_states(&model, 1000, &mut rng) {
            let g = model.gravity_vector(&s.q).unwrap();
            let fd = diff::gradient(|q| model.potential_energy(q), &s.q, 1e-6);
            worst = worst.max((g - fd).abs().max());
            checks += 1;
        }
    }
    let tolerance = 1e-6;
    PropertyResult {
        name: "gravity_is_potential_gradient",
        passed: worst <= tolerance,
        checks,
        skipped: 0,
        worst,
        tolerance,
    }
}

fn task_jacobian_matches_fd() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for model in all_models() {
        for s in sample_states(&model, 1000, &mut rng) {
            let (_, jac) = model.task_map(&s.q).unwrap();
            let fd = diff::jacobian(|q| model.task_map(q).unwrap().0, &s.q, 1e-6);
            worst = worst.max((jac - fd).abs().max());
            checks += 1;
        }
    }
    let tolerance = 1e-6;
    PropertyResult {
        name: "task_jacobian_matches_fd",
        passed: worst <= tolerance,
        checks,
        skipped: 0,
        worst,
        tolerance,
    }
}

fn forward_dynamics_solves_manipulator_equation() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for model in all_models() {
        for s in sample_states(&model, 1000, &mut rng) {
            let u = random_vector(model.input_dim(), 10.0, &mut rng);
            let qddot = model.forward_dynamics(&s, &u).unwrap();
            let d = model.mass_matrix(&s.q).unwrap();
            let c = model.coriolis_matrix(&s.q, &s.qdot).unwrap();
            let g = model.gravity_vector(&s.q).unwrap();
            let b = model.actuation_matrix(&s.q);
            let residual = d * qddot + c * &s.qdot + g - b * u;
            worst = worst.max(residual.abs().max());
            checks += 1;
        }
    }
    let tolerance = 1e-8;
    PropertyResult {
        name: "forward_dynamics_solves_manipulator_equation",
        passed: worst <= tolerance,
        checks,
        skipped: 0,
        worst,
        tolerance,
    }
}

/// With gravity disabled and zero input the total energy is invariant;
/// integration drift beyond tolerance means `D`, `C`, or the dynamics
/// disagree with each other.
fn energy_conserved_without_gravity() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for base in all_models() {
        let model = base.with_gravity(false);
        for s0 in sample_states(&model, 5, &mut rng) {
            let u = DVector::zeros(model.input_dim());
            let e0 = model.kinetic_energy(&s0.q, &s0.qdot) + model.potential_energy(&s0.q);
            let mut s = s0;
            for _ in 0..2000 {
                s = rk4_step(&model, &s, &u, 1e-4).unwrap();
            }
            let e1 = model.kinetic_energy(&s.q, &s.qdot) + model.potential_energy(&s.q);
            worst = worst.max((e1 - e0).abs());
            checks += 1;
        }
    }
    let tolerance = 1e-7;
    PropertyResult {
        name: "energy_conserved_without_gravity",
        passed: worst <= tolerance,
        checks,
        skipped: 0,
        worst,
        tolerance,
    }
}

/// Membership in an energy safe set implies `h ≥ 0`: the sets shrink the
/// position-safe set, never extend it.
fn energy_safe_set_inside_position_safe_set() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst = f64::INFINITY;
    let mut checks = 0;
    let mut skipped = 0;
    for (model, descriptor) in barrier_pairings() {
        let kin = KinematicBarrier::new(model.clone(), descriptor).unwrap();
        let energy = EnergyBarrier::new(kin.clone(), 1.0).unwrap();
        let reduced = if model.k() > model.input_dim() {
            Some(UnderactuatedBarrier::new(kin.clone(), 1.0).unwrap())
        } else {
            None
        };
        for s in sample_states(&model, 10_000, &mut rng) {
            let mut inside = energy.contains(&s).unwrap();
            if let Some(r) = &reduced {
                inside |= r.contains(&s).unwrap();
            }
            if !inside {
                skipped += 1;
                continue;
            }
            worst = worst.min(kin.h(&s.q).unwrap());
            checks += 1;
        }
    }
    let tolerance = 0.0;
    PropertyResult {
        name: "energy_safe_set_inside_position_safe_set",
        passed: checks > 0 && worst >= -tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

/// For `h ≥ 0` the energy margin `−½q̇ᵀDq̇ + α_e h` is monotone in `α_e`,
/// so the safe sets are nested as `α_e` grows.
fn energy_safe_set_grows_with_alpha_e() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut checks = 0;
    let mut skipped = 0;
    let mut violations = 0usize;
    for (model, descriptor) in barrier_pairings() {
        let kin = KinematicBarrier::new(model.clone(), descriptor).unwrap();
        let small = EnergyBarrier::new(kin.clone(), 0.5).unwrap();
        let large = EnergyBarrier::new(kin.clone(), 2.0).unwrap();
        for s in sample_states(&model, 10_000, &mut rng) {
            if !small.contains(&s).unwrap() {
                skipped += 1;
                continue;
            }
            if !large.contains(&s).unwrap() {
                violations += 1;
            }
            checks += 1;
        }
    }
    PropertyResult {
        name: "energy_safe_set_grows_with_alpha_e",
        passed: checks > 0 && violations == 0,
        checks,
        skipped,
        worst: violations as f64,
        tolerance: 0.0,
    }
}

/// Any state with strictly positive clearance lands inside the energy
/// safe set once `α_e` is large enough to cover its kinetic energy.
fn interior_states_captured_for_large_alpha_e() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut checks = 0;
    let mut skipped = 0;
    let mut failures = 0usize;
    for (model, descriptor) in barrier_pairings() {
        let kin = KinematicBarrier::new(model.clone(), descriptor).unwrap();
        for s in sample_states(&model, 1000, &mut rng) {
            let h = kin.h(&s.q).unwrap();
            if h < 0.01 {
                skipped += 1;
                continue;
            }
            let ke = model.kinetic_energy(&s.q, &s.qdot);
            let alpha_e = (2.0 * ke / h).max(1.0);
            let energy = EnergyBarrier::new(kin.clone(), alpha_e).unwrap();
            if !energy.contains(&s).unwrap() {
                failures += 1;
            }
            checks += 1;
        }
    }
    PropertyResult {
        name: "interior_states_captured_for_large_alpha_e",
        passed: checks > 0 && failures == 0,
        checks,
        skipped,
        worst: failures as f64,
        tolerance: 0.0,
    }
}

// ────────────────────────────────────────────────────────────────────────────
// filters suite

fn filters_suite(fault: FaultInjection) -> SuiteReport {
    let properties = vec![
        explicit_qp_matches_oracle(fault),
        velocity_filter_matches_oracle(),
        torque_filter_matches_oracle(),
        robust_torque_filter_matches_oracle(),
        velocity_command_filter_matches_oracle(),
        underactuated_filter_matches_oracle(),
        robust_underactuated_filter_matches_oracle(),
        constraint_acceleration_matches_flow(),
        tracking_error_decays_exponentially(),
        robust_margin_never_loosens_with_larger_c_u(),
        tightened_constraints_imply_exact(),
    ];
    SuiteReport {
        suite: "filters",
        properties,
    }
}

/// Mirror of the closed-form projection with an injectable sign fault on
/// Ψ, so the oracle comparison can demonstrate it catches that mutation.
fn qp_candidate(
    lf: f64,
    lg: &RowDVector<f64>,
    h_val: f64,
    a: &ClassKappa,
    u_des: &DVector<f64>,
    fault: FaultInjection,
) -> Option<DVector<f64>> {
    match fault {
        FaultInjection::None => explicit_cbf_qp(lf, lg, h_val, a, u_des)
            .ok()
            .map(|o| o.command),
        FaultInjection::PsiSignFlip => {
            let mut psi = lf + (lg * u_des)[0] + a.apply(h_val);
            psi = -psi;
            if psi >= 0.0 {
                Some(u_des.clone())
            } else {
                let norm2 = lg.norm_squared();
                if norm2 == 0.0 {
                    return None;
                }
                Some(u_des - lg.transpose() * (psi / norm2))
            }
        }
    }
}

fn explicit_qp_matches_oracle(fault: FaultInjection) -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    for _ in 0..2000 {
        let m = rng.gen_range(1..=3);
        let lf = rng.gen_range(-5.0..5.0);
        let lg = RowDVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
        let h_val = rng.gen_range(-1.0..2.0);
        let a = if rng.gen_bool(0.5) {
            ClassKappa::linear(rng.gen_range(0.1..5.0)).unwrap()
        } else {
            ClassKappa::cubic(rng.gen_range(0.1..2.0)).unwrap()
        };
        let u_des = random_vector(m, 5.0, &mut rng);
        if lg.norm() < 1e-6 {
            skipped += 1;
            continue;
        }
        let Some(u) = qp_candidate(lf, &lg, h_val, &a, &u_des, fault) else {
            skipped += 1;
            continue;
        };
        let qp = HalfspaceQP::new(u_des.clone(), lg.transpose(), -(lf + a.apply(h_val)));
        let oracle = solve_single_constraint_qp(&qp).unwrap();
        worst = worst.max((u - oracle).abs().max());
        checks += 1;
    }
    let tolerance = 1e-10;
    PropertyResult {
        name: "explicit_qp_matches_oracle",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

/// Compare a filter's command with the oracle solution of the constraint
/// assembled in `(a, b)` form. Returns the new worst residual.
fn oracle_gap(
    a_row: &RowDVector<f64>,
    rhs: f64,
    u_des: &DVector<f64>,
    command: &DVector<f64>,
) -> f64 {
    let qp = HalfspaceQP::new(u_des.clone(), a_row.transpose(), rhs);
    let oracle = solve_single_constraint_qp(&qp).unwrap();
    (command - oracle).abs().max()
}

fn velocity_filter_matches_oracle() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let model = RobotModel::two_link_arm();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::SphereObstacle {
            center: vec![0.0, 1.2],
            min_distance: 0.4,
        },
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    for s in sample_states(&model, 1500, &mut rng) {
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let qdot_des = random_vector(model.k(), 3.0, &mut rng);
        let (h, jh) = kin.h_and_grad(&s.q).unwrap();
        if jh.norm() < 1e-9 {
            skipped += 1;
            continue;
        }
        let out = velocity_filter(&s.q, &kin, &a, &qdot_des).unwrap();
        worst = worst.max(oracle_gap(&jh, -a.apply(h), &qdot_des, &out.command));
        checks += 1;
    }
    let tolerance = 1e-10;
    PropertyResult {
        name: "velocity_filter_matches_oracle",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

fn torque_filter_matches_oracle() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let model = RobotModel::two_link_arm();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::SphereObstacle {
            center: vec![0.0, 1.2],
            min_distance: 0.4,
        },
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    for s in sample_states(&model, 1500, &mut rng) {
        if s.qdot.norm() < 1e-6 {
            skipped += 1;
            continue;
        }
        let alpha_e = rng.gen_range(0.3..8.0);
        let b = EnergyBarrier::new(kin.clone(), alpha_e).unwrap();
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let u_des = random_vector(model.input_dim(), 15.0, &mut rng);

        // Constraint assembled from model primitives, not the filter.
        let jh = kin.grad(&s.q).unwrap();
        let g = model.gravity_vector(&s.q).unwrap();
        let lf = alpha_e * (&jh * &s.qdot)[0] + s.qdot.dot(&g);
        let lg = -(s.qdot.transpose() * model.actuation_matrix(&s.q));
        let rhs = -(lf + a.apply(b.h_d(&s).unwrap()));

        let out = torque_filter(&b, &s, &a, &u_des).unwrap();
        worst = worst.max(oracle_gap(&lg, rhs, &u_des, &out.command));
        checks += 1;
    }
    let tolerance = 1e-10;
    PropertyResult {
        name: "torque_filter_matches_oracle",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

fn robust_torque_filter_matches_oracle() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(204);
    let model = RobotModel::two_link_arm();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::SphereObstacle {
            center: vec![0.0, 1.2],
            min_distance: 0.4,
        },
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    for (i, s) in sample_states(&model, 1500, &mut rng)
        .into_iter()
        .enumerate()
    {
        if s.qdot.norm() < 1e-6 {
            skipped += 1;
            continue;
        }
        let mode = if i % 2 == 0 {
            crate::filter::RobustMode::KeepGravity
        } else {
            crate::filter::RobustMode::DropGravity
        };
        let alpha_e = rng.gen_range(0.3..4.0);
        let c_u = rng.gen_range(3.0..40.0);
        let b = EnergyBarrier::new(kin.clone(), alpha_e).unwrap();
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let u_des = random_vector(model.input_dim(), 15.0, &mut rng);

        let jh = kin.grad(&s.q).unwrap();
        let speed2 = s.qdot.norm_squared();
        let lf = match mode {
            crate::filter::RobustMode::KeepGravity => {
                let g = model.gravity_vector(&s.q).unwrap();
                alpha_e * (&jh * &s.qdot)[0] + s.qdot.dot(&g)
            }
            crate::filter::RobustMode::DropGravity => {
                alpha_e * (&jh * &s.qdot)[0] - c_u * speed2.sqrt()
            }
        };
        let h_tilde = -c_u * speed2 + alpha_e * kin.h(&s.q).unwrap();
        let lg = -(s.qdot.transpose() * model.actuation_matrix(&s.q));
        let rhs = -(lf + a.apply(h_tilde));

        let out = robust_torque_filter(&b, &s, &a, &u_des, c_u, mode).unwrap();
        worst = worst.max(oracle_gap(&lg, rhs, &u_des, &out.command));
        checks += 1;
    }
    let tolerance = 1e-10;
    PropertyResult {
        name: "robust_torque_filter_matches_oracle",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

fn velocity_command_filter_matches_oracle() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    let model = RobotModel::two_link_arm();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::SphereObstacle {
            center: vec![0.0, 1.2],
            min_distance: 0.4,
        },
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    for s in sample_states(&model, 1500, &mut rng) {
        if s.qdot.norm() < 1e-6 {
            skipped += 1;
            continue;
        }
        let alpha_e = rng.gen_range(0.3..4.0);
        let gain = rng.gen_range(2.0..30.0);
        let k_vel = DMatrix::identity(model.k(), model.k()) * gain;
        let b = EnergyBarrier::new(kin.clone(), alpha_e).unwrap();
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let qdot_des = random_vector(model.k(), 3.0, &mut rng);

        let jh = kin.grad(&s.q).unwrap();
        let g = model.gravity_vector(&s.q).unwrap();
        let bk = model.actuation_matrix(&s.q) * &k_vel;
        let lf = alpha_e * (&jh * &s.qdot)[0]
            + s.qdot.dot(&g)
            + (s.qdot.transpose() * &bk * &s.qdot)[(0, 0)];
        let lg = -(s.qdot.transpose() * bk);
        let rhs = -(lf + a.apply(b.h_d(&s).unwrap()));

        let out = velocity_command_filter(&b, &s, &a, &k_vel, &qdot_des).unwrap();
        worst = worst.max(oracle_gap(&lg, rhs, &qdot_des, &out.command));
        checks += 1;
    }
    let tolerance = 1e-10;
    PropertyResult {
        name: "velocity_command_filter_matches_oracle",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

/// Cart-pole states in the band around upright where the angle barrier
/// lives. The filters only ever run there; further out, near the
/// horizontal pole, the vanishing input coupling makes commands blow up
/// and absolute command comparisons stop being meaningful.
fn sample_upright_band(n: usize, rng: &mut ChaCha8Rng) -> Vec<State> {
    let pi = std::f64::consts::PI;
    (0..n)
        .map(|_| {
            State::from_slices(
                &[rng.gen_range(-1.0..1.0), pi + rng.gen_range(-0.5..0.5)],
                &[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
            )
        })
        .collect()
}

/// Read the affine constraint off a residual evaluator by probing it at
/// the origin and along scaled coordinate directions. The large probe
/// magnitude keeps the slope extraction accurate even where the drift
/// term dwarfs the input row.
fn halfspace_from_residual(
    resid: impl Fn(&DVector<f64>) -> f64,
    m: usize,
) -> (RowDVector<f64>, f64) {
    let probe = 1e6;
    let r0 = resid(&DVector::zeros(m));
    let a = RowDVector::from_fn(m, |_, i| {
        let mut e = DVector::zeros(m);
        e[i] = probe;
        (resid(&e) - r0) / probe
    });
    (a, -r0)
}

fn underactuated_filter_matches_oracle() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(206);
    let model = RobotModel::cart_pole();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::AngleBox {
            width: std::f64::consts::FRAC_PI_6,
        },
    )
    .unwrap();
    let b = UnderactuatedBarrier::new(kin, 1.0).unwrap();
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    for s in sample_upright_band(1500, &mut rng) {
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let u_des = random_vector(model.input_dim(), 10.0, &mut rng);
        let out = match underactuated_filter(&b, &s, &a, &u_des) {
            Ok(out) => out,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let (a_row, rhs) = halfspace_from_residual(
            |u| underactuated_constraint_residual(&b, &s, &a, u).unwrap(),
            model.input_dim(),
        );
        if a_row.norm() < 1e-12 {
            // ḣ = 0 makes the constraint input-independent; the filter
            // must pass the desired input through untouched.
            worst = worst.max((&out.command - &u_des).abs().max());
            checks += 1;
            continue;
        }
        worst = worst.max(oracle_gap(&a_row, rhs, &u_des, &out.command));
        checks += 1;
    }
    let tolerance = 1e-10;
    PropertyResult {
        name: "underactuated_filter_matches_oracle",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

fn robust_underactuated_filter_matches_oracle() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(207);
    let model = RobotModel::cart_pole();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::AngleBox {
            width: std::f64::consts::FRAC_PI_6,
        },
    )
    .unwrap();
    let b = UnderactuatedBarrier::new(kin, 1.0).unwrap();
    let (c_l, c_u) = (0.03, 2.6);
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    for s in sample_upright_band(1500, &mut rng) {
        let a = ClassKappa::linear(rng.gen_range(0.2..4.0)).unwrap();
        let u_des = random_vector(model.input_dim(), 10.0, &mut rng);
        let out = match robust_underactuated_filter(&b, &s, &a, &u_des, c_l, c_u) {
            Ok(out) => out,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let (a_row, rhs) = halfspace_from_residual(
            |u| robust_underactuated_constraint_residual(&b, &s, &a, u, c_l, c_u).unwrap(),
            model.input_dim(),
        );
        if a_row.norm() < 1e-12 {
            worst = worst.max((&out.command - &u_des).abs().max());
            checks += 1;
            continue;
        }
        worst = worst.max(oracle_gap(&a_row, rhs, &u_des, &out.command));
        checks += 1;
    }
    let tolerance = 1e-10;
    PropertyResult {
        name: "robust_underactuated_filter_matches_oracle",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

/// The reduced equation `D_h ḧ + C_h q̇ + G_h = B_h u` must reproduce the
/// actual second derivative of `h` along the flow, measured here by a
/// central difference of `ḣ = J_h q̇` across two short RK4 steps.
fn constraint_acceleration_matches_flow() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(208);
    let model = RobotModel::cart_pole();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::AngleBox {
            width: std::f64::consts::FRAC_PI_6,
        },
    )
    .unwrap();
    let w_map = coordinate_w_map(vec![0]);
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    let pi = std::f64::consts::PI;
    while checks < 1000 {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let theta = pi + side * rng.gen_range(0.05..0.45);
        let s = State::from_slices(
            &[rng.gen_range(-1.0..1.0), theta],
            &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
        );
        if !coupling_ok(&kin, &s.q).unwrap() {
            skipped += 1;
            continue;
        }
        let u = random_vector(model.input_dim(), 8.0, &mut rng);
        let red = match schur_reduce(&model, &kin, &w_map, &s.q, &s.qdot) {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let hddot_reduced = ((&red.b_h * &u)[0] - (&red.c_h * &s.qdot)[0] - red.g_h) / red.d_h;

        let hdot_at = |state: &State| (&kin.grad(&state.q).unwrap() * &state.qdot)[0];
        let central = |delta: f64| {
            let fwd = rk4_step(&model, &s, &u, delta).unwrap();
            let bwd = rk4_step(&model, &s, &u, -delta).unwrap();
            (hdot_at(&fwd) - hdot_at(&bwd)) / (2.0 * delta)
        };
        // Richardson-extrapolated central difference: the δ² truncation
        // term cancels, leaving roundoff well below the tolerance.
        let delta = 1e-4;
        let hddot_flow = (4.0 * central(0.5 * delta) - central(delta)) / 3.0;

        worst = worst.max((hddot_reduced - hddot_flow).abs());
        checks += 1;
    }
    let tolerance = 1e-8;
    PropertyResult {
        name: "constraint_acceleration_matches_flow",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

/// Integrating `q̇ = q̇_des` must contract the task error exactly like
/// `e^{−λt}`; the pseudoinverse construction makes this an identity, so
/// the check runs at integration accuracy.
fn tracking_error_decays_exponentially() -> PropertyResult {
    let model = RobotModel::two_link_arm();
    let lambda = 1.5;
    let task = TrackingTask::fixed_point(DVector::from_row_slice(&[0.9, 0.9]), lambda).unwrap();
    let mut q = DVector::from_row_slice(&[0.2, 1.9]);
    let e0 = (model.task_map(&q).unwrap().0 - DVector::from_row_slice(&[0.9, 0.9])).norm();

    let dt = 1e-4;
    let mut worst = 0.0f64;
    let mut checks = 0;
    // Classical RK4 on the kinematic flow alone.
    let deriv = |q: &DVector<f64>, t: f64| tracking_qdot_des(&model, q, t, &task).unwrap();
    for step in 1..=20_000usize {
        let t = (step - 1) as f64 * dt;
        let k1 = deriv(&q, t);
        let k2 = deriv(&(&q + 0.5 * dt * &k1), t + 0.5 * dt);
        let k3 = deriv(&(&q + 0.5 * dt * &k2), t + 0.5 * dt);
        let k4 = deriv(&(&q + dt * &k3), t + dt);
        q += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if step % 2000 == 0 {
            let t_now = step as f64 * dt;
            let e = (model.task_map(&q).unwrap().0 - DVector::from_row_slice(&[0.9, 0.9])).norm();
            let expected = e0 * (-lambda * t_now).exp();
            worst = worst.max((e - expected).abs() / expected);
            checks += 1;
        }
    }
    let tolerance = 1e-3;
    PropertyResult {
        name: "tracking_error_decays_exponentially",
        passed: worst <= tolerance,
        checks,
        skipped: 0,
        worst,
        tolerance,
    }
}

/// A larger uncertainty bound can only shrink Ψ, so interventions start
/// no later as `c_u` grows.
fn robust_margin_never_loosens_with_larger_c_u() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(209);
    let model = RobotModel::two_link_arm();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::SphereObstacle {
            center: vec![0.0, 1.2],
            min_distance: 0.4,
        },
    )
    .unwrap();
    let b = EnergyBarrier::new(kin, 1.0).unwrap();
    let a = ClassKappa::default();
    let grid = [3.0, 6.0, 12.0, 24.0, 48.0];
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut skipped = 0;
    for (i, s) in sample_states(&model, 800, &mut rng).into_iter().enumerate() {
        if s.qdot.norm() < 1e-6 {
            skipped += 1;
            continue;
        }
        let mode = if i % 2 == 0 {
            crate::filter::RobustMode::KeepGravity
        } else {
            crate::filter::RobustMode::DropGravity
        };
        let u_des = random_vector(model.input_dim(), 15.0, &mut rng);
        let mut prev = f64::INFINITY;
        for c_u in grid {
            let out = robust_torque_filter(&b, &s, &a, &u_des, c_u, mode).unwrap();
            worst = worst.max(out.psi - prev);
            prev = out.psi;
        }
        checks += 1;
    }
    let tolerance = 1e-12;
    PropertyResult {
        name: "robust_margin_never_loosens_with_larger_c_u",
        passed: worst <= tolerance,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

/// Wherever a tightened (robust) constraint holds with valid bounds, the
/// exact constraint must hold too; a counterexample would break the
/// robust filters' guarantee.
fn tightened_constraints_imply_exact() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(210);
    let mut checks = 0;
    let mut skipped = 0;
    let mut worst = f64::INFINITY;
    let mut counterexamples = 0usize;
    let tolerance = 1e-9;

    // Fully actuated arm: c_u from the box bound on ½λ_max(D) (and ‖G‖
    // for the gravity-dropping mode).
    let model = RobotModel::two_link_arm();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::SphereObstacle {
            center: vec![0.0, 1.2],
            min_distance: 0.4,
        },
    )
    .unwrap();
    let bx = model.valid_box();
    let c_inertia = bound_estimator(
        &model,
        &bx,
        BoundQuantity::HalfLambdaMaxD,
        1.25,
        MIN_BOUND_SAMPLES,
    )
    .unwrap()
    .c_u;
    let c_gravity = bound_estimator(&model, &bx, BoundQuantity::NormG, 1.25, MIN_BOUND_SAMPLES)
        .unwrap()
        .c_u;
    for alpha_e in [0.5, 1.0, 3.0] {
        let b = EnergyBarrier::new(kin.clone(), alpha_e).unwrap();
        let a = ClassKappa::default();
        for s in sample_states(&model, 800, &mut rng) {
            for mode in [
                crate::filter::RobustMode::KeepGravity,
                crate::filter::RobustMode::DropGravity,
            ] {
                let c_u = match mode {
                    crate::filter::RobustMode::KeepGravity => c_inertia,
                    crate::filter::RobustMode::DropGravity => c_inertia.max(c_gravity),
                };
                let u = random_vector(model.input_dim(), 20.0, &mut rng);
                let tight = robust_torque_constraint_residual(&b, &s, &a, &u, c_u, mode).unwrap();
                if tight < 0.0 {
                    skipped += 1;
                    continue;
                }
                let exact = torque_constraint_residual(&b, &s, &a, &u).unwrap();
                worst = worst.min(exact);
                if exact < -tolerance {
                    counterexamples += 1;
                }
                checks += 1;
            }
        }
    }

    // Underactuated cart-pole on the one-sided box its bounds were
    // estimated for.
    let model = RobotModel::cart_pole();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::AngleBox {
            width: std::f64::consts::FRAC_PI_6,
        },
    )
    .unwrap();
    let pi = std::f64::consts::PI;
    let bx = StateBox::new(
        vec![-pi, pi + 0.1],
        vec![pi, pi + pi / 6.0],
        vec![-5.0, -5.0],
        vec![5.0, 5.0],
    );
    let report = bound_estimator(&model, &bx, BoundQuantity::DHBounds(&kin), 1.25, 20_000).unwrap();
    let (c_l, c_u) = (report.c_l.unwrap(), report.c_u);
    let b = UnderactuatedBarrier::new(kin, 1.0).unwrap();
    let a = ClassKappa::default();
    let mut drawn = 0;
    while drawn < 2000 {
        drawn += 1;
        let unit: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let s = bx.lerp(&unit);
        let u = random_vector(model.input_dim(), 10.0, &mut rng);
        let tight = match robust_underactuated_constraint_residual(&b, &s, &a, &u, c_l, c_u) {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        if tight < 0.0 {
            skipped += 1;
            continue;
        }
        let exact = underactuated_constraint_residual(&b, &s, &a, &u).unwrap();
        worst = worst.min(exact);
        if exact < -tolerance {
            counterexamples += 1;
        }
        checks += 1;
    }

    PropertyResult {
        name: "tightened_constraints_imply_exact",
        passed: checks > 0 && counterexamples == 0,
        checks,
        skipped,
        worst,
        tolerance,
    }
}

// ────────────────────────────────────────────────────────────────────────────
// bounds suite

fn bounds_suite() -> SuiteReport {
    let properties = vec![
        inertia_bound_dominates_fresh_samples(),
        gravity_bound_dominates_fresh_samples(),
        reduced_bounds_bracket_fresh_samples(),
        bound_reports_are_deterministic(),
    ];
    SuiteReport {
        suite: "bounds",
        properties,
    }
}

fn inertia_bound_dominates_fresh_samples() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let model = RobotModel::two_link_arm();
    let bx = model.valid_box();
    let c_u = bound_estimator(
        &model,
        &bx,
        BoundQuantity::HalfLambdaMaxD,
        1.25,
        MIN_BOUND_SAMPLES,
    )
    .unwrap()
    .c_u;
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    for s in sample_states(&model, 10_000, &mut rng) {
        let d = model.mass_matrix(&s.q).unwrap();
        let lam = d.symmetric_eigenvalues().max();
        worst = worst.max(0.5 * lam - c_u);
        checks += 1;
    }
    PropertyResult {
        name: "inertia_bound_dominates_fresh_samples",
        passed: worst <= 0.0,
        checks,
        skipped: 0,
        worst,
        tolerance: 0.0,
    }
}

fn gravity_bound_dominates_fresh_samples() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(302);
    let model = RobotModel::two_link_arm();
    let bx = model.valid_box();
    let c_u = bound_estimator(&model, &bx, BoundQuantity::NormG, 1.25, MIN_BOUND_SAMPLES)
        .unwrap()
        .c_u;
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    for s in sample_states(&model, 10_000, &mut rng) {
        let g = model.gravity_vector(&s.q).unwrap();
        worst = worst.max(g.norm() - c_u);
        checks += 1;
    }
    PropertyResult {
        name: "gravity_bound_dominates_fresh_samples",
        passed: worst <= 0.0,
        checks,
        skipped: 0,
        worst,
        tolerance: 0.0,
    }
}

/// On the one-sided cart-pole box: `c_l ≤ D_h ≤ c_u`, `‖C_h‖ ≤ c_u‖q̇‖`,
/// `|G_h| ≤ c_u` for fresh samples the estimator never saw.
fn reduced_bounds_bracket_fresh_samples() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let model = RobotModel::cart_pole();
    let kin = KinematicBarrier::new(
        model.clone(),
        BarrierDescriptor::AngleBox {
            width: std::f64::consts::FRAC_PI_6,
        },
    )
    .unwrap();
    let pi = std::f64::consts::PI;
    let bx = StateBox::new(
        vec![-pi, pi + 0.1],
        vec![pi, pi + pi / 6.0],
        vec![-5.0, -5.0],
        vec![5.0, 5.0],
    );
    let report = bound_estimator(&model, &bx, BoundQuantity::DHBounds(&kin), 1.25, 20_000).unwrap();
    let (c_l, c_u) = (report.c_l.unwrap(), report.c_u);
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    let mut skipped = 0;
    for _ in 0..10_000 {
        let unit: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let s = bx.lerp(&unit);
        let Some(t) = reduced_terms(&kin, &s).unwrap() else {
            skipped += 1;
            continue;
        };
        let margin = (c_l - t.d_h)
            .max(t.d_h - c_u)
            .max(t.c_h.norm() - c_u * s.qdot.norm())
            .max(t.g_h.abs() - c_u);
        worst = worst.max(margin);
        checks += 1;
    }
    PropertyResult {
        name: "reduced_bounds_bracket_fresh_samples",
        passed: checks > 0 && worst <= 0.0,
        checks,
        skipped,
        worst,
        tolerance: 0.0,
    }
}

fn bound_reports_are_deterministic() -> PropertyResult {
    let model = RobotModel::two_link_arm();
    let bx = model.valid_box();
    let a = bound_estimator(
        &model,
        &bx,
        BoundQuantity::HalfLambdaMaxD,
        1.25,
        MIN_BOUND_SAMPLES,
    )
    .unwrap();
    let b = bound_estimator(
        &model,
        &bx,
        BoundQuantity::HalfLambdaMaxD,
        1.25,
        MIN_BOUND_SAMPLES,
    )
    .unwrap();
    let identical = a == b;
    PropertyResult {
        name: "bound_reports_are_deterministic",
        passed: identical,
        checks: 2,
        skipped: 0,
        worst: if identical { 0.0 } else { 1.0 },
        tolerance: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes_all_suites() {
        for report in run(Suite::All, FaultInjection::None) {
            for p in &report.properties {
                assert!(p.passed, "{} failed: {}", report.suite, p.render());
            }
        }
    }

    #[test]
    fn psi_sign_flip_is_caught_by_the_oracle_property() {
        let reports = run(Suite::Filters, FaultInjection::PsiSignFlip);
        let prop = reports[0]
            .properties
            .iter()
            .find(|p| p.name == "explicit_qp_matches_oracle")
            .unwrap();
        assert!(!prop.passed, "sign flip in Ψ went unnoticed");
    }

    #[test]
    fn fault_injection_only_touches_the_mirrored_property() {
        let reports = run(Suite::Filters, FaultInjection::PsiSignFlip);
        for p in &reports[0].properties {
            if p.name != "explicit_qp_matches_oracle" {
                assert!(p.passed, "{} should not react to the fault", p.name);
            }
        }
    }
}
