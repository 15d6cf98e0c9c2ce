//! Closed-form safety filters.
//!
//! Every filter here solves the same optimization problem: find the input
//! closest to a desired one, subject to a single affine constraint that
//! keeps a barrier function nonnegative,
//!
//! ```text
//! min ‖u − u_des‖²   s.t.   L_f + L_g u + α(h) ≥ 0.
//! ```
//!
//! With one constraint the solution is explicit (a halfspace projection),
//! so no QP solver appears in the control path. The individual filters
//! differ only in how they assemble `L_f`, `L_g` and the barrier value:
//! from a kinematic barrier for velocity commands, from an energy barrier
//! for torques, from sampled bounds for the robust variants, and from the
//! dynamics of the constraint coordinate for the underactuated case.
//!
//! All functions are pure and cheap; nothing allocates beyond the returned
//! vectors, and everything can run inside a control loop.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{
    BarrierError, ClassKappa, EnergyBarrier, KinematicBarrier, UnderactuatedBarrier,
    JH_RATE_FD_STEP,
};
use crate::diff;
use crate::models::{ModelError, RobotModel, State};

/// Below this gradient norm an intervention is impossible: the input no
/// longer appears in the constraint. Inside the relevant safe sets the
/// theory rules this out, so hitting it signals a modeling bug.
pub const EPS_V: f64 = 1e-8;

/// Minimum Gram determinant for the exact right-pseudoinverse in the
/// tracking law. Below it the task Jacobian is singular and the run aborts
/// rather than silently damping the inverse.
pub const EPS_PINV: f64 = 1e-10;

/// Minimum `|det J_e|` for the coordinate change `(w, h)` to count as a
/// diffeomorphism at the evaluated configuration.
pub const EPS_DET: f64 = 1e-8;

/// Minimum reduced actuation gain `‖B_h‖` for the input to reach the
/// constraint coordinate (e.g. a horizontal pole cannot be steered by cart
/// force, and sits just outside this set).
pub const EPS_C: f64 = 1e-6;

/// Filtered constraints must evaluate to at least this after the fact.
pub const RESIDUAL_TOL: f64 = -1e-9;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("CBF condition unsatisfiable here: zero input direction with Ψ = {psi}")]
    InfeasibleCbf { psi: f64 },
    #[error("constraint gradient degenerate (‖L_g‖ = {norm}) while Ψ = {psi} < 0")]
    DegenerateGradient { norm: f64, psi: f64 },
    #[error("internal contract violated: {0}")]
    InternalContract(&'static str),
    #[error("task Jacobian singular (Gram determinant {gram_det})")]
    TrackingSingularity { gram_det: f64 },
    #[error("coordinate change (w, h) singular (det J_e = {det})")]
    DiffeomorphismFailure { det: f64 },
    #[error("constraint coordinate not inertially coupled to the input (‖B_h‖ = {b_h_norm})")]
    CouplingFailure { b_h_norm: f64 },
    #[error("filter requires a fully actuated model (k = {k}, m = {m})")]
    NotFullyActuated { k: usize, m: usize },
    #[error("invalid gain: {0}")]
    BadGain(&'static str),
    #[error("invalid bounds: need 0 < c_l ≤ c_u, got c_l = {c_l}, c_u = {c_u}")]
    InvalidBounds { c_l: f64, c_u: f64 },
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What a filter returns for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// The safe command (velocity or torque, depending on the filter).
    pub command: DVector<f64>,
    /// Constraint value at the desired input; negative means the desired
    /// input would have violated the barrier condition.
    pub psi: f64,
    /// True exactly when `psi < 0` and the command was modified.
    pub intervened: bool,
    /// `L_f + L_g·command + α(h)` evaluated after filtering; at least
    /// [`RESIDUAL_TOL`] on success.
    pub constraint_residual: f64,
}

/// Solve `min ‖u − u_des‖² s.t. L_f + L_g u + α(h_val) ≥ 0` explicitly.
///
/// Writing `Ψ = L_f + L_g u_des + α(h_val)`, the desired input is optimal
/// when `Ψ ≥ 0`; otherwise the constraint is active and the optimum is
///
/// ```text
/// u* = u_des − L_gᵀ Ψ / (L_g L_gᵀ),
/// ```
///
/// the projection of `u_des` onto the constraint boundary.
pub fn explicit_cbf_qp(
    lf: f64,
    lg: &RowDVector<f64>,
    h_val: f64,
    a: &ClassKappa,
    u_des: &DVector<f64>,
) -> Result<FilterOutput, FilterError> {
    a.validate()?;
    let alpha = a.apply(h_val);
    let psi = lf + (lg * u_des)[0] + alpha;
    if psi >= 0.0 {
        return Ok(FilterOutput {
            command: u_des.clone(),
            psi,
            intervened: false,
            constraint_residual: psi,
        });
    }
    let gram = (lg * lg.transpose())[0];
    if gram.sqrt() < EPS_V {
        return Err(if gram == 0.0 {
            FilterError::InfeasibleCbf { psi }
        } else {
            FilterError::DegenerateGradient {
                norm: gram.sqrt(),
                psi,
            }
        });
    }
    let command = u_des - lg.transpose() * (psi / gram);
    let constraint_residual = lf + (lg * &command)[0] + alpha;
    Ok(FilterOutput {
        command,
        psi,
        intervened: true,
        constraint_residual,
    })
}

// ────────────────────────────────────────────────────────────────────────────
// Kinematic layer: tracking law and velocity filter

/// A task-space trajectory to track with first-order kinematics.
pub struct TrackingTask {
    pub x_d: Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    pub xdot_d: Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    pub lambda: f64,
}

impl TrackingTask {
    pub fn new(
        x_d: Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
        xdot_d: Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
        lambda: f64,
    ) -> Result<Self, FilterError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(FilterError::BadGain("lambda must be positive"));
        }
        Ok(Self {
            x_d,
            xdot_d,
            lambda,
        })
    }

    /// Hold a fixed task-space point.
    pub fn fixed_point(target: DVector<f64>, lambda: f64) -> Result<Self, FilterError> {
        let t2 = target.clone();
        Self::new(
            Box::new(move |_| target.clone()),
            Box::new(move |_| DVector::zeros(t2.len())),
            lambda,
        )
    }
}

impl std::fmt::Debug for TrackingTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrackingTask")
            .field("lambda", &self.lambda)
            .finish_non_exhaustive()
    }
}

/// Desired joint velocity for exponential task-space tracking:
///
/// ```text
/// q̇_des = J_y(q)† (ẋ_d(t) − λ e),   e = y(q) − x_d(t),
/// ```
///
/// with the exact right-pseudoinverse `J† = Jᵀ(JJᵀ)⁻¹`. Along the exact
/// kinematic flow the task error then decays as `e(t) = e^{−λt} e(0)`.
pub fn tracking_qdot_des(
    model: &RobotModel,
    q: &DVector<f64>,
    t: f64,
    task: &TrackingTask,
) -> Result<DVector<f64>, FilterError> {
    let (y, jac) = model.task_map(q)?;
    let e = y - (task.x_d)(t);
    let rhs = (task.xdot_d)(t) - task.lambda * e;
    let gram = &jac * jac.transpose();
    let det = gram.determinant();
    if det.abs() < EPS_PINV {
        return Err(FilterError::TrackingSingularity { gram_det: det });
    }
    let sol = gram
        .lu()
        .solve(&rhs)
        .ok_or(FilterError::TrackingSingularity { gram_det: det })?;
    Ok(jac.transpose() * sol)
}

/// Velocity-level safety filter for a position barrier: project the desired
/// joint velocity onto `{q̇ : J_h q̇ + α(h) ≥ 0}`.
pub fn velocity_filter(
    q: &DVector<f64>,
    kin: &KinematicBarrier,
    a: &ClassKappa,
    qdot_des: &DVector<f64>,
) -> Result<FilterOutput, FilterError> {
    let (h, jh) = kin.h_and_grad(q)?;
    explicit_cbf_qp(0.0, &jh, h, a, qdot_des)
}

// ────────────────────────────────────────────────────────────────────────────
// Energy layer: torque filters for fully actuated systems

/// Constraint terms shared by the torque filters: with an energy barrier
/// `h_D = −½ q̇ᵀDq̇ + α_e h`, the drift and input rows of `ḣ_D` are
///
/// ```text
/// L_f = q̇ᵀ(α_e J_hᵀ + G),   L_g = −q̇ᵀB,
/// ```
///
/// the Coriolis term having cancelled against `½Ḋ` by skew symmetry.
fn energy_rate_terms(b: &EnergyBarrier, s: &State) -> Result<(f64, RowDVector<f64>), FilterError> {
    let model = b.model();
    let jh = b.kinematic().grad(&s.q)?;
    let g = model.gravity_vector(&s.q)?;
    let lf = b.alpha_e() * (jh * &s.qdot)[0] + s.qdot.dot(&g);
    let bmat = model.actuation_matrix(&s.q);
    let lg = -(s.qdot.transpose() * bmat);
    Ok((lf, lg))
}

/// Torque-level safety filter keeping the energy barrier nonnegative.
///
/// States outside `{h_D ≥ 0}` are not rejected: the closed form stays
/// evaluable and pushes the system toward the safe set, but the invariance
/// guarantee only speaks for trajectories starting inside.
pub fn torque_filter(
    b: &EnergyBarrier,
    s: &State,
    a: &ClassKappa,
    u_des: &DVector<f64>,
) -> Result<FilterOutput, FilterError> {
    let (lf, lg) = energy_rate_terms(b, s)?;
    let h_d = b.h_d(s)?;
    explicit_cbf_qp(lf, &lg, h_d, a, u_des).map_err(shift_zero_velocity_blame)
}

/// `ḣ_D(s, u) + α(h_D)`: the exact constraint the torque filter enforces,
/// evaluated for an arbitrary input. Used to confirm that the tightened
/// robust constraints imply this one.
pub fn torque_constraint_residual(
    b: &EnergyBarrier,
    s: &State,
    a: &ClassKappa,
    u: &DVector<f64>,
) -> Result<f64, FilterError> {
    let (lf, lg) = energy_rate_terms(b, s)?;
    Ok(lf + (lg * u)[0] + a.apply(b.h_d(s)?))
}

/// Inside the energy-safe set, `q̇ = 0` forces `Ψ = α(α_e h) ≥ 0`, so a
/// degenerate gradient with `Ψ < 0` cannot happen there; report it as a
/// broken contract instead of a user-facing infeasibility.
fn shift_zero_velocity_blame(e: FilterError) -> FilterError {
    match e {
        FilterError::InfeasibleCbf { .. } | FilterError::DegenerateGradient { .. } => {
            FilterError::InternalContract(
                "zero velocity with negative Ψ cannot occur inside the energy-safe set",
            )
        }
        other => other,
    }
}

/// Which reduced-model robust constraint to enforce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustMode {
    /// Replace the inertia term with the bound `c_u ≥ ½λ_max(D)`:
    /// the barrier argument becomes `−c_u‖q̇‖² + α_e h`, the gravity term
    /// stays exact.
    KeepGravity,
    /// Additionally replace the gravity term by its worst case `−c_u‖q̇‖`,
    /// valid when also `‖G‖ ≤ c_u`.
    DropGravity,
}

/// Robust torque filter: enforces a tightened constraint built from a
/// single bound `c_u` instead of the exact inertia (and optionally gravity)
/// terms. Satisfying the tightened constraint implies the exact one, at
/// the cost of earlier interventions.
pub fn robust_torque_filter(
    b: &EnergyBarrier,
    s: &State,
    a: &ClassKappa,
    u_des: &DVector<f64>,
    c_u: f64,
    mode: RobustMode,
) -> Result<FilterOutput, FilterError> {
    if !(c_u > 0.0 && c_u.is_finite()) {
        return Err(FilterError::InvalidBounds { c_l: c_u, c_u });
    }
    let model = b.model();
    let jh = b.kinematic().grad(&s.q)?;
    let speed2 = s.qdot.norm_squared();
    let h_tilde = -c_u * speed2 + b.alpha_e() * b.kinematic().h(&s.q)?;
    let lf = match mode {
        RobustMode::KeepGravity => {
            let g = model.gravity_vector(&s.q)?;
            b.alpha_e() * (&jh * &s.qdot)[0] + s.qdot.dot(&g)
        }
        RobustMode::DropGravity => b.alpha_e() * (&jh * &s.qdot)[0] - c_u * speed2.sqrt(),
    };
    let lg = -(s.qdot.transpose() * model.actuation_matrix(&s.q));
    explicit_cbf_qp(lf, &lg, h_tilde, a, u_des).map_err(shift_zero_velocity_blame)
}

/// The tightened constraint the robust torque filter enforces, evaluated
/// for an arbitrary input. Nonnegative here should imply nonnegative
/// [`torque_constraint_residual`] whenever the bound `c_u` is valid.
pub fn robust_torque_constraint_residual(
    b: &EnergyBarrier,
    s: &State,
    a: &ClassKappa,
    u: &DVector<f64>,
    c_u: f64,
    mode: RobustMode,
) -> Result<f64, FilterError> {
    if !(c_u > 0.0 && c_u.is_finite()) {
        return Err(FilterError::InvalidBounds { c_l: c_u, c_u });
    }
    let model = b.model();
    let jh = b.kinematic().grad(&s.q)?;
    let speed2 = s.qdot.norm_squared();
    let h_tilde = -c_u * speed2 + b.alpha_e() * b.kinematic().h(&s.q)?;
    let lf = match mode {
        RobustMode::KeepGravity => {
            let g = model.gravity_vector(&s.q)?;
            b.alpha_e() * (&jh * &s.qdot)[0] + s.qdot.dot(&g)
        }
        RobustMode::DropGravity => b.alpha_e() * (&jh * &s.qdot)[0] - c_u * speed2.sqrt(),
    };
    let lg = -(s.qdot.transpose() * model.actuation_matrix(&s.q));
    Ok(lf + (lg * u)[0] + a.apply(h_tilde))
}

/// Safety filter producing a velocity command for an embedded PD loop.
///
/// The plant torque is `u = −K_vel(q̇ − q̇_d)`; substituting it into the
/// energy-barrier rate gives a constraint affine in the commanded `q̇_d`,
///
/// ```text
/// Ψ = q̇ᵀ(α_e J_hᵀ + B K_vel q̇ − B K_vel q̇_des + G) + α(h_D),
/// ```
///
/// so the same projection applies with `L_g = −q̇ᵀ B K_vel`. The returned
/// command, fed back through [`low_level_pd`], satisfies the torque-level
/// constraint by construction.
pub fn velocity_command_filter(
    b: &EnergyBarrier,
    s: &State,
    a: &ClassKappa,
    k_vel: &DMatrix<f64>,
    qdot_des: &DVector<f64>,
) -> Result<FilterOutput, FilterError> {
    let model = b.model();
    let (k, m) = (model.k(), model.input_dim());
    if k != m {
        return Err(FilterError::NotFullyActuated { k, m });
    }
    validate_spd(k_vel, k)?;
    let jh = b.kinematic().grad(&s.q)?;
    let g = model.gravity_vector(&s.q)?;
    let bk = model.actuation_matrix(&s.q) * k_vel;
    let lf = b.alpha_e() * (&jh * &s.qdot)[0]
        + s.qdot.dot(&g)
        + (s.qdot.transpose() * &bk * &s.qdot)[(0, 0)];
    let lg = -(s.qdot.transpose() * bk);
    let h_d = b.h_d(s)?;
    explicit_cbf_qp(lf, &lg, h_d, a, qdot_des).map_err(shift_zero_velocity_blame)
}

fn validate_spd(k_vel: &DMatrix<f64>, dim: usize) -> Result<(), FilterError> {
    if k_vel.nrows() != dim || k_vel.ncols() != dim {
        return Err(FilterError::BadGain("K_vel has the wrong shape"));
    }
    if (k_vel - k_vel.transpose()).abs().max() > 1e-9 {
        return Err(FilterError::BadGain("K_vel must be symmetric"));
    }
    if nalgebra::Cholesky::new(k_vel.clone()).is_none() {
        return Err(FilterError::BadGain("K_vel must be positive definite"));
    }
    Ok(())
}

/// The embedded velocity loop: `u = −K_vel(q̇ − q̇_cmd)`.
pub fn low_level_pd(
    qdot: &DVector<f64>,
    qdot_cmd: &DVector<f64>,
    k_vel: &DMatrix<f64>,
) -> DVector<f64> {
    -(k_vel * (qdot - qdot_cmd))
}

/// Min-norm gravity compensation `B† G(q)`; with full actuation simply
/// `G(q)`. No safety guarantee attaches to using it, but it makes desired
/// torques better-behaved in the scenarios.
pub fn gravity_precompensation(
    model: &RobotModel,
    q: &DVector<f64>,
) -> Result<DVector<f64>, FilterError> {
    let g = model.gravity_vector(q)?;
    let b = model.actuation_matrix(q);
    let gram = b.transpose() * &b;
    let det = gram.determinant();
    if det.abs() < EPS_PINV {
        return Err(FilterError::TrackingSingularity { gram_det: det });
    }
    gram.lu()
        .solve(&(b.transpose() * g))
        .ok_or(FilterError::TrackingSingularity { gram_det: det })
}

// ────────────────────────────────────────────────────────────────────────────
// Underactuated layer: constraint-coordinate reduction and filters

/// The dynamics terms of the constraint coordinate after eliminating the
/// remaining coordinates `w`: `D_h ḧ + C_h q̇ + G_h = B_h u`.
#[derive(Debug, Clone)]
pub struct SchurReduction {
    pub d_h: f64,
    /// 1 × k, acting on the original q̇.
    pub c_h: RowDVector<f64>,
    pub g_h: f64,
    /// 1 × m.
    pub b_h: RowDVector<f64>,
    pub j_e: DMatrix<f64>,
    pub w_jacobian: DMatrix<f64>,
}

/// Build a `w`-map that copies out the listed configuration coordinates.
pub fn coordinate_w_map(
    keep: Vec<usize>,
) -> impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + Clone {
    move |q| DVector::from_fn(keep.len(), |i, _| q[keep[i]])
}

/// Change coordinates to `Φ = (w, h)` and eliminate `w` from the dynamics,
/// leaving the scalar equation `D_h ḧ + C_h q̇ + G_h = B_h u`.
///
/// The transformed matrices are `D_e = J_e⁻ᵀ D J_e⁻¹`, `C_e = J_e⁻ᵀ(C −
/// D J_e⁻¹ J̇_e)J_e⁻¹`, `G_e = J_e⁻ᵀ G`, `B_e = J_e⁻ᵀ B`; eliminating the
/// first block row is a Schur complement, e.g. `D_h = D₂₂ − D₂₁D₁₁⁻¹D₁₂`.
/// The row `C_h` is returned acting on the original `q̇` (post-multiplied
/// by `J_e`). Valid only where `J_e` is invertible and the input actually
/// reaches `h`; expect [`FilterError::DiffeomorphismFailure`] at chart
/// boundaries (for the cart-pole angle barrier: the upright itself) and
/// [`FilterError::CouplingFailure`] where `B_h` vanishes (horizontal pole).
pub fn schur_reduce(
    model: &RobotModel,
    kin: &KinematicBarrier,
    w_map: &(dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<SchurReduction, FilterError> {
    let k = model.k();
    let build_j_e = |q2: &DVector<f64>| -> DMatrix<f64> {
        let jw = diff::jacobian(|x| w_map(x), q2, 1e-7);
        let jh = kin
            .grad(q2)
            .expect("barrier gradient inside reduction stencil");
        let mut j = DMatrix::zeros(k, k);
        j.view_mut((0, 0), (k - 1, k)).copy_from(&jw);
        j.view_mut((k - 1, 0), (1, k)).copy_from(&jh);
        j
    };

    let j_e = build_j_e(q);
    let det = j_e.determinant();
    if det.abs() < EPS_DET {
        return Err(FilterError::DiffeomorphismFailure { det });
    }
    let j_e_inv = j_e
        .clone()
        .try_inverse()
        .ok_or(FilterError::DiffeomorphismFailure { det })?;

    let d = model.mass_matrix(q)?;
    let c = model.coriolis_matrix(q, qdot)?;
    let g = model.gravity_vector(q)?;
    let bmat = model.actuation_matrix(q);
    let j_e_dot = diff::matrix_directional(build_j_e, q, qdot, JH_RATE_FD_STEP);

    let d_e = j_e_inv.transpose() * &d * &j_e_inv;
    let c_e = j_e_inv.transpose() * (&c - &d * &j_e_inv * j_e_dot) * &j_e_inv;
    let g_e = j_e_inv.transpose() * g;
    let b_e = j_e_inv.transpose() * bmat;

    // Schur complement of the leading (k−1) block.
    let n = k - 1;
    let d11 = d_e.view((0, 0), (n, n)).clone_owned();
    let d12 = d_e.view((0, n), (n, 1)).clone_owned();
    let d21 = d_e.view((n, 0), (1, n)).clone_owned();
    let d11_lu = d11.lu();
    let sol_d12 = d11_lu
        .solve(&d12)
        .ok_or(FilterError::DiffeomorphismFailure { det })?;
    let d_h = d_e[(n, n)] - (&d21 * sol_d12)[(0, 0)];

    let c1 = c_e.view((0, 0), (n, k)).clone_owned();
    let c2 = c_e.view((n, 0), (1, k)).clone_owned();
    let sol_c1 = d11_lu
        .solve(&c1)
        .ok_or(FilterError::DiffeomorphismFailure { det })?;
    // Rows act on Φ̇ = J_e q̇; convert back to the q̇ basis.
    let c_h_phi = c2 - &d21 * sol_c1;
    let c_h = RowDVector::from_iterator(k, (c_h_phi * &j_e).iter().copied());

    let g1 = g_e.rows(0, n).clone_owned();
    let sol_g1 = d11_lu
        .solve(&g1)
        .ok_or(FilterError::DiffeomorphismFailure { det })?;
    let g_h = g_e[n] - (&d21 * sol_g1)[(0, 0)];

    let b1 = b_e.view((0, 0), (n, b_e.ncols())).clone_owned();
    let b2 = b_e.view((n, 0), (1, b_e.ncols())).clone_owned();
    let sol_b1 = d11_lu
        .solve(&b1)
        .ok_or(FilterError::DiffeomorphismFailure { det })?;
    let b_h_mat = b2 - &d21 * sol_b1;
    let b_h = RowDVector::from_iterator(b_e.ncols(), b_h_mat.iter().copied());

    if b_h.norm() < EPS_C {
        return Err(FilterError::CouplingFailure {
            b_h_norm: b_h.norm(),
        });
    }
    if d_h <= 0.0 {
        return Err(FilterError::InternalContract(
            "reduced inertia must be positive where the reduction is defined",
        ));
    }

    let w_jacobian = DMatrix::from(j_e.view((0, 0), (n, k)));
    Ok(SchurReduction {
        d_h,
        c_h,
        g_h,
        b_h,
        j_e,
        w_jacobian,
    })
}

/// Whether the input reaches the constraint coordinate at `q`, using the
/// continuous extension of `B_h` where the gradient vanishes: as `J_h → 0`
/// along a fixed axis `n`, `B_h → (n D⁻¹ B)/(n D⁻¹ nᵀ)`.
pub fn coupling_ok(kin: &KinematicBarrier, q: &DVector<f64>) -> Result<bool, FilterError> {
    let model = kin.model();
    let jh = kin.grad(q)?;
    let row = if jh.norm() > 0.0 {
        jh
    } else {
        match kin.grad_direction(q)? {
            Some(dir) => dir,
            None => return Ok(false),
        }
    };
    let d = model.mass_matrix(q)?;
    let lu = d.lu();
    let dinv_row_t = lu
        .solve(&row.transpose())
        .ok_or(ModelError::SingularInertia)?;
    let rho = (&row * &dinv_row_t)[0];
    if rho <= 0.0 {
        return Ok(false);
    }
    let b_h = (dinv_row_t.transpose() * model.actuation_matrix(q)) / rho;
    Ok(b_h.norm() >= EPS_C)
}

/// Assembled constraint terms for the underactuated filter: the barrier
/// rate is `ḣ̂_D = L_f + L_g u` with
///
/// ```text
/// L_g = −ḣ B_h,
/// L_f = −K̇ + (ḣ/ρ)(J_h D⁻¹ C q̇) + (ḣ/ρ)(J_h D⁻¹ G) + α_e ḣ,
/// ```
///
/// where `K(q) = ½ (J_h(q) q̇)² / ρ(q)` is the constraint-coordinate
/// kinetic energy at frozen `q̇` and `K̇` its central-difference rate along
/// `q̇`. This single difference carries both the `−½Ḋ_h ḣ²` term and the
/// `J̇_h` part of `ḣ C_h q̇`, and unlike those two pieces individually it
/// stays bounded where the gradient (and with it `ρ`) pinches to zero, so
/// the filter can be evaluated right through such configurations.
struct UnderactuatedTerms {
    hdot: f64,
    lf: f64,
    lg: RowDVector<f64>,
    h_hat: f64,
}

fn underactuated_terms(
    b: &UnderactuatedBarrier,
    s: &State,
) -> Result<UnderactuatedTerms, FilterError> {
    let model = b.model();
    let kin = b.kinematic();
    let jh = kin.grad(&s.q)?;
    let hdot = (&jh * &s.qdot)[0];
    let h_hat = b.h_hat(s)?;
    let m = model.input_dim();
    if hdot == 0.0 {
        return Ok(UnderactuatedTerms {
            hdot,
            lf: 0.0,
            lg: RowDVector::zeros(m),
            h_hat,
        });
    }
    let d = model.mass_matrix(&s.q)?;
    let lu = d.lu();
    let dinv_jht = lu
        .solve(&jh.transpose())
        .ok_or(ModelError::SingularInertia)?;
    let rho = (&jh * &dinv_jht)[0];
    if rho <= 0.0 {
        // ḣ ≠ 0 requires J_h ≠ 0, which makes ρ > 0; anything else is a
        // broken model, not a state to filter.
        return Err(FilterError::InternalContract(
            "nonzero ḣ with vanishing reduced mobility",
        ));
    }
    let b_h = (dinv_jht.transpose() * model.actuation_matrix(&s.q)) / rho;
    if b_h.norm() < EPS_C {
        return Err(FilterError::CouplingFailure {
            b_h_norm: b_h.norm(),
        });
    }
    let qdot = s.qdot.clone();
    let constraint_kinetic = move |q2: &DVector<f64>| -> f64 {
        let jh2 = kin.grad(q2).expect("barrier gradient inside FD stencil");
        let d2 = model.mass_matrix(q2).expect("inertia inside FD stencil");
        let dinv2 = d2
            .lu()
            .solve(&jh2.transpose())
            .expect("inertia solvable inside FD stencil");
        let rho2 = (&jh2 * &dinv2)[0];
        let hd2 = (&jh2 * &qdot)[0];
        if rho2 > 0.0 {
            0.5 * hd2 * hd2 / rho2
        } else {
            0.0
        }
    };
    let k_rate = diff::scalar_directional(constraint_kinetic, &s.q, &s.qdot, JH_RATE_FD_STEP);

    let c = model.coriolis_matrix(&s.q, &s.qdot)?;
    let g = model.gravity_vector(&s.q)?;
    let scale = hdot / rho;
    let lf = -k_rate
        + scale * (dinv_jht.transpose() * (c * &s.qdot))[0]
        + scale * dinv_jht.dot(&g)
        + b.alpha_e() * hdot;
    Ok(UnderactuatedTerms {
        hdot,
        lf,
        lg: -hdot * b_h,
        h_hat,
    })
}

/// Torque filter for underactuated systems, enforcing the rate condition
/// of the constraint-coordinate energy barrier `ĥ_D`.
///
/// When `ḣ = 0` every input-dependent term carries a factor `ḣ` and the
/// condition reduces to `α(ĥ_D) ≥ 0`, so the desired input passes through
/// untouched; this also covers configurations where the reduction itself
/// is undefined. States outside `{ĥ_D ≥ 0}` are filtered on a best-effort
/// basis, without the invariance guarantee.
pub fn underactuated_filter(
    b: &UnderactuatedBarrier,
    s: &State,
    a: &ClassKappa,
    u_des: &DVector<f64>,
) -> Result<FilterOutput, FilterError> {
    let t = underactuated_terms(b, s)?;
    explicit_cbf_qp(t.lf, &t.lg, t.h_hat, a, u_des).map_err(|e| match e {
        FilterError::DegenerateGradient { .. } => FilterError::InternalContract(
            "vanishing ḣ·B_h with negative Ψ cannot occur inside the reduced-energy safe set",
        ),
        other => other,
    })
}

/// The exact constraint the underactuated filter enforces, for an
/// arbitrary input.
pub fn underactuated_constraint_residual(
    b: &UnderactuatedBarrier,
    s: &State,
    a: &ClassKappa,
    u: &DVector<f64>,
) -> Result<f64, FilterError> {
    let t = underactuated_terms(b, s)?;
    Ok(t.lf + (&t.lg * u)[0] + a.apply(t.h_hat))
}

/// Underactuated filter with the model-based reduced terms replaced by the
/// box bounds `c_l ≤ D_h`, `D_h ≤ c_u`, `‖C_h‖ ≤ c_u‖q̇‖`, `|G_h| ≤ c_u`:
///
/// ```text
/// Ψ = −½ c_l ḣ² − c_u |ḣ| (‖q̇‖² + 1) + α_e ḣ + L_g u_des + α(−c_u ḣ² + α_e h),
/// ```
///
/// keeping only `L_g = −ḣ B_h` exact. Valid, and implying the exact
/// constraint, only while the state stays in the box the bounds were
/// estimated on.
pub fn robust_underactuated_filter(
    b: &UnderactuatedBarrier,
    s: &State,
    a: &ClassKappa,
    u_des: &DVector<f64>,
    c_l: f64,
    c_u: f64,
) -> Result<FilterOutput, FilterError> {
    if !(c_l > 0.0 && c_u >= c_l && c_u.is_finite()) {
        return Err(FilterError::InvalidBounds { c_l, c_u });
    }
    let t = underactuated_terms(b, s)?;
    let h_tilde = -c_u * t.hdot * t.hdot + b.alpha_e() * b.kinematic().h(&s.q)?;
    let lf = -0.5 * c_l * t.hdot * t.hdot - c_u * t.hdot.abs() * (s.qdot.norm_squared() + 1.0)
        + b.alpha_e() * t.hdot;
    explicit_cbf_qp(lf, &t.lg, h_tilde, a, u_des).map_err(|e| match e {
        FilterError::DegenerateGradient { .. } => FilterError::InternalContract(
            "vanishing ḣ·B_h with negative robust Ψ cannot occur inside the tightened safe set",
        ),
        other => other,
    })
}

/// The tightened constraint the robust underactuated filter enforces, for
/// an arbitrary input. Nonnegative here should imply nonnegative
/// [`underactuated_constraint_residual`] while the state stays in the box
/// the bounds were estimated on.
pub fn robust_underactuated_constraint_residual(
    b: &UnderactuatedBarrier,
    s: &State,
    a: &ClassKappa,
    u: &DVector<f64>,
    c_l: f64,
    c_u: f64,
) -> Result<f64, FilterError> {
    if !(c_l > 0.0 && c_u >= c_l && c_u.is_finite()) {
        return Err(FilterError::InvalidBounds { c_l, c_u });
    }
    let t = underactuated_terms(b, s)?;
    let h_tilde = -c_u * t.hdot * t.hdot + b.alpha_e() * b.kinematic().h(&s.q)?;
    let lf = -0.5 * c_l * t.hdot * t.hdot - c_u * t.hdot.abs() * (s.qdot.norm_squared() + 1.0)
        + b.alpha_e() * t.hdot;
    Ok(lf + (&t.lg * u)[0] + a.apply(h_tilde))
}

// ────────────────────────────────────────────────────────────────────────────
