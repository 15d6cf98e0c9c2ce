//! Barrier functions over configuration and state space.
//!
//! A *kinematic* barrier `h(q)` encodes a position constraint: the safe set
//! is `{q : h(q) ≥ 0}`. An *energy* barrier extends it to the full state,
//!
//! ```text
//! h_D(q, q̇) = -1/2 q̇ᵀ D(q) q̇ + α_e h(q),
//! ```
//!
//! trading kinetic energy against distance from the boundary: the faster the
//! system moves, the deeper inside the position-safe set it must stay. For
//! underactuated systems the kinetic term is replaced by the energy of the
//! constraint coordinate alone,
//!
//! ```text
//! ĥ_D(q, q̇) = -1/2 ḣ² / ρ(q) + α_e h(q),    ρ = J_h D⁻¹ J_hᵀ,
//! ```
//!
//! which charges only motion toward the boundary. Both state barriers have
//! zero-sublevel sets contained in the position-safe set, so keeping them
//! nonnegative keeps `h` nonnegative.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, RobotModel, State};

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("barrier parameter {name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("class-kappa gain must be positive, got {0}")]
    NonPositiveGain(f64),
    #[error("obstacle center has dimension {got}, task space has dimension {expected}")]
    CenterDimension { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A class-kappa function `α`: strictly increasing with `α(0) = 0`. The
/// barrier condition `ḣ ≥ -α(h)` lets `h` decay no faster than this rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassKappa {
    /// `α(h) = gain · h`
    Linear { gain: f64 },
    /// `α(h) = gain · h³`; flat near the boundary, so interventions start
    /// later and harder.
    Cubic { gain: f64 },
}

impl Default for ClassKappa {
    fn default() -> Self {
        ClassKappa::Linear { gain: 1.0 }
    }
}

impl ClassKappa {
    pub fn linear(gain: f64) -> Result<Self, BarrierError> {
        if gain > 0.0 {
            Ok(ClassKappa::Linear { gain })
        } else {
            Err(BarrierError::NonPositiveGain(gain))
        }
    }

    pub fn cubic(gain: f64) -> Result<Self, BarrierError> {
        if gain > 0.0 {
            Ok(ClassKappa::Cubic { gain })
        } else {
            Err(BarrierError::NonPositiveGain(gain))
        }
    }

    pub fn validate(&self) -> Result<(), BarrierError> {
        let g = match self {
            ClassKappa::Linear { gain } | ClassKappa::Cubic { gain } => *gain,
        };
        if g > 0.0 && g.is_finite() {
            Ok(())
        } else {
            Err(BarrierError::NonPositiveGain(g))
        }
    }

    pub fn apply(&self, h: f64) -> f64 {
        match self {
            ClassKappa::Linear { gain } => gain * h,
            ClassKappa::Cubic { gain } => gain * h * h * h,
        }
    }
}

/// Shape of a position constraint, independent of any particular model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BarrierDescriptor {
    /// Keep the task point at least `min_distance` away from `center`:
    /// `h = ‖y(q) − center‖² − min_distance²`.
    SphereObstacle { center: Vec<f64>, min_distance: f64 },
    /// Keep the last configuration coordinate within `width` of `π`:
    /// `h = width² − (q_last − π)²`. Written for the cart-pole, where the
    /// last coordinate is the pole angle and `π` is upright.
    AngleBox { width: f64 },
    /// Keep the first configuration coordinate within `±limit`:
    /// `h = limit² − q_0²`.
    PositionBox { limit: f64 },
}

impl BarrierDescriptor {
    pub fn validate(&self, model: &RobotModel) -> Result<(), BarrierError> {
        match self {
            BarrierDescriptor::SphereObstacle {
                center,
                min_distance,
            } => {
                if *min_distance <= 0.0 || !min_distance.is_finite() {
                    return Err(BarrierError::NonPositiveParameter {
                        name: "min_distance",
                        value: *min_distance,
                    });
                }
                if center.len() != model.task_dim() {
                    return Err(BarrierError::CenterDimension {
                        expected: model.task_dim(),
                        got: center.len(),
                    });
                }
            }
            BarrierDescriptor::AngleBox { width } => {
                if *width <= 0.0 || !width.is_finite() {
                    return Err(BarrierError::NonPositiveParameter {
                        name: "width",
                        value: *width,
                    });
                }
            }
            BarrierDescriptor::PositionBox { limit } => {
                if *limit <= 0.0 || !limit.is_finite() {
                    return Err(BarrierError::NonPositiveParameter {
                        name: "limit",
                        value: *limit,
                    });
                }
            }
        }
        Ok(())
    }
}

/// A position barrier bound to a model: evaluates `h(q)` and its gradient
/// row `J_h(q)` (1 × k).
#[derive(Debug, Clone)]
pub struct KinematicBarrier {
    model: RobotModel,
    descriptor: BarrierDescriptor,
}

impl KinematicBarrier {
    pub fn new(model: RobotModel, descriptor: BarrierDescriptor) -> Result<Self, BarrierError> {
        descriptor.validate(&model)?;
        Ok(Self { model, descriptor })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn descriptor(&self) -> &BarrierDescriptor {
        &self.descriptor
    }

    pub fn h(&self, q: &DVector<f64>) -> Result<f64, BarrierError> {
        Ok(self.h_and_grad(q)?.0)
    }

    pub fn grad(&self, q: &DVector<f64>) -> Result<RowDVector<f64>, BarrierError> {
        Ok(self.h_and_grad(q)?.1)
    }

    pub fn h_and_grad(&self, q: &DVector<f64>) -> Result<(f64, RowDVector<f64>), BarrierError> {
        let k = self.model.k();
        match &self.descriptor {
            BarrierDescriptor::SphereObstacle {
                center,
                min_distance,
            } => {
                let (y, jac) = self.model.task_map(q)?;
                let delta = y - DVector::from_row_slice(center);
                let h = delta.norm_squared() - min_distance * min_distance;
                let grad = 2.0 * delta.transpose() * jac;
                Ok((h, grad))
            }
            BarrierDescriptor::AngleBox { width } => {
                let dev = q[k - 1] - std::f64::consts::PI;
                let mut grad = RowDVector::zeros(k);
                grad[k - 1] = -2.0 * dev;
                Ok((width * width - dev * dev, grad))
            }
            BarrierDescriptor::PositionBox { limit } => {
                let mut grad = RowDVector::zeros(k);
                grad[0] = -2.0 * q[0];
                Ok((limit * limit - q[0] * q[0], grad))
            }
        }
    }

    /// `ḣ = J_h(q) q̇`.
    pub fn hdot(&self, s: &State) -> Result<f64, BarrierError> {
        Ok((self.grad(&s.q)? * &s.qdot)[0])
    }

    /// Direction of the constraint axis when the gradient itself vanishes.
    ///
    /// Box barriers constrain a fixed coordinate, so the axis is constant
    /// even where `J_h = 0` (at the box center). The sphere barrier has no
    /// meaningful direction at its center and returns `None` there.
    pub fn grad_direction(
        &self,
        q: &DVector<f64>,
    ) -> Result<Option<RowDVector<f64>>, BarrierError> {
        let k = self.model.k();
        match &self.descriptor {
            BarrierDescriptor::AngleBox { .. } => {
                let mut dir = RowDVector::zeros(k);
                dir[k - 1] = 1.0;
                Ok(Some(dir))
            }
            BarrierDescriptor::PositionBox { .. } => {
                let mut dir = RowDVector::zeros(k);
                dir[0] = 1.0;
                Ok(Some(dir))
            }
            BarrierDescriptor::SphereObstacle { .. } => {
                let grad = self.grad(q)?;
                let n = grad.norm();
                if n > 0.0 {
                    Ok(Some(grad / n))
                } else {
                    Ok(None)
                }
            }
        }
    }
}

/// Energy barrier for fully actuated systems.
#[derive(Debug, Clone)]
pub struct EnergyBarrier {
    kin: KinematicBarrier,
    alpha_e: f64,
}

impl EnergyBarrier {
    pub fn new(kin: KinematicBarrier, alpha_e: f64) -> Result<Self, BarrierError> {
        if alpha_e <= 0.0 || !alpha_e.is_finite() {
            return Err(BarrierError::NonPositiveParameter {
                name: "alpha_e",
                value: alpha_e,
            });
        }
        Ok(Self { kin, alpha_e })
    }

    pub fn kinematic(&self) -> &KinematicBarrier {
        &self.kin
    }

    pub fn model(&self) -> &RobotModel {
        self.kin.model()
    }

    pub fn alpha_e(&self) -> f64 {
        self.alpha_e
    }

    /// `h_D(q, q̇) = -1/2 q̇ᵀ D(q) q̇ + α_e h(q)`.
    pub fn h_d(&self, s: &State) -> Result<f64, BarrierError> {
        let d = self.model().mass_matrix(&s.q)?;
        let kinetic = 0.5 * (s.qdot.transpose() * d * &s.qdot)[(0, 0)];
        Ok(-kinetic + self.alpha_e * self.kin.h(&s.q)?)
    }

    /// True when the state is inside the energy-safe set.
    pub fn contains(&self, s: &State) -> Result<bool, BarrierError> {
        Ok(self.h_d(s)? >= 0.0)
    }
}

/// Energy barrier for underactuated systems, charging only the kinetic
/// energy of the constraint coordinate.
#[derive(Debug, Clone)]
pub struct UnderactuatedBarrier {
    kin: KinematicBarrier,
    alpha_e: f64,
}

impl UnderactuatedBarrier {
    pub fn new(kin: KinematicBarrier, alpha_e: f64) -> Result<Self, BarrierError> {
        if alpha_e <= 0.0 || !alpha_e.is_finite() {
            return Err(BarrierError::NonPositiveParameter {
                name: "alpha_e",
                value: alpha_e,
            });
        }
        Ok(Self { kin, alpha_e })
    }

    pub fn kinematic(&self) -> &KinematicBarrier {
        &self.kin
    }

    pub fn model(&self) -> &RobotModel {
        self.kin.model()
    }

    pub fn alpha_e(&self) -> f64 {
        self.alpha_e
    }

    /// `ρ(q) = J_h D⁻¹ J_hᵀ`, the inverse of the inertia felt by the
    /// constraint coordinate. Zero exactly where `J_h` vanishes.
    pub fn rho(&self, q: &DVector<f64>) -> Result<f64, BarrierError> {
        let jh = self.kin.grad(q)?;
        let d = self.model().mass_matrix(q)?;
        let dinv_jht = d
            .lu()
            .solve(&jh.transpose())
            .ok_or(ModelError::SingularInertia)?;
        Ok((jh * dinv_jht)[0])
    }

    /// `ĥ_D = -1/2 ḣ²/ρ + α_e h`.
    ///
    /// The ratio `ḣ²/ρ` is scale invariant in `J_h` and bounded by
    /// `λ_max(D) ‖q̇‖²`, so this form is numerically stable even where the
    /// reduced inertia `1/ρ` blows up. Where `J_h` itself vanishes the
    /// ratio is extended by continuity along the constraint axis (for the
    /// box barriers the value is in fact identical on and off the zero),
    /// so the barrier still charges motion along the constrained
    /// coordinate there.
    pub fn h_hat(&self, s: &State) -> Result<f64, BarrierError> {
        Ok(-self.constraint_kinetic(s)? + self.alpha_e * self.kin.h(&s.q)?)
    }

    /// Kinetic energy of the constraint coordinate, `½ ḣ²/ρ`, extended by
    /// continuity where the gradient vanishes. Returns zero only when no
    /// constraint axis exists at all (a sphere barrier at its center).
    pub fn constraint_kinetic(&self, s: &State) -> Result<f64, BarrierError> {
        let jh = self.kin.grad(&s.q)?;
        let row = if jh.norm() > 0.0 {
            jh
        } else {
            match self.kin.grad_direction(&s.q)? {
                Some(dir) => dir,
                None => return Ok(0.0),
            }
        };
        let d = self.model().mass_matrix(&s.q)?;
        let dinv_row_t = d
            .lu()
            .solve(&row.transpose())
            .ok_or(ModelError::SingularInertia)?;
        let rho = (&row * &dinv_row_t)[0];
        let hd = (&row * &s.qdot)[0];
        if rho > 0.0 {
            Ok(0.5 * hd * hd / rho)
        } else {
            Ok(0.0)
        }
    }

    pub fn contains(&self, s: &State) -> Result<bool, BarrierError> {
        Ok(self.h_hat(s)? >= 0.0)
    }
}

/// Dynamics of the constraint coordinate `h` treated as a one-dimensional
/// mechanical system: `D_h ḧ + C_h q̇ + G_h = B_h u` away from points where
/// the constraint gradient vanishes.
///
/// All terms are obtained directly from the full-coordinate quantities,
///
/// ```text
/// ρ = J_h D⁻¹ J_hᵀ      D_h = 1/ρ
/// B_h = D_h J_h D⁻¹ B   G_h = D_h J_h D⁻¹ G
/// C_h = D_h (J_h D⁻¹ C − J̇_h)
/// ```
///
/// which avoids forming the coordinate change `(w, h)` explicitly. `D_h`,
/// `C_h` and `G_h` individually blow up as `J_h → 0`; use [`reduced_terms`]
/// only where `ρ` is healthy and prefer ratio forms like `ḣ²/ρ` elsewhere.
#[derive(Debug, Clone)]
pub struct ReducedTerms {
    pub rho: f64,
    pub d_h: f64,
    /// 1 × m row multiplying the input.
    pub b_h: RowDVector<f64>,
    pub g_h: f64,
    /// 1 × k row multiplying q̇.
    pub c_h: RowDVector<f64>,
}

/// Step used for the directional finite difference of `J_h` inside
/// [`reduced_terms`] and the energy-rate terms of the underactuated filter.
pub const JH_RATE_FD_STEP: f64 = 1e-6;

/// Evaluate [`ReducedTerms`] at a state, or `None` where `ρ(q)` is too
/// small for `1/ρ` to mean anything (threshold `1e-12`).
pub fn reduced_terms(
    kin: &KinematicBarrier,
    s: &State,
) -> Result<Option<ReducedTerms>, BarrierError> {
    let model = kin.model();
    let k = model.k();
    let jh = kin.grad(&s.q)?;
    let d = model.mass_matrix(&s.q)?;
    let lu = d.lu();
    let dinv_jht = lu
        .solve(&jh.transpose())
        .ok_or(ModelError::SingularInertia)?;
    let rho = (&jh * &dinv_jht)[0];
    if rho <= 1e-12 {
        return Ok(None);
    }
    let d_h = 1.0 / rho;
    let b = model.actuation_matrix(&s.q);
    let b_h = d_h * (dinv_jht.transpose() * b);
    let g = model.gravity_vector(&s.q)?;
    let g_h = d_h * dinv_jht.dot(&g);
    let c = model.coriolis_matrix(&s.q, &s.qdot)?;
    let jh_dot = crate::diff::matrix_directional(
        |q| {
            let row = kin.grad(q).expect("gradient inside FD stencil");
            DMatrix::from_fn(1, k, |_, j| row[j])
        },
        &s.q,
        &s.qdot,
        JH_RATE_FD_STEP,
    );
    let c_h = d_h * (dinv_jht.transpose() * c - jh_dot.row(0));
    Ok(Some(ReducedTerms {
        rho,
        d_h,
        b_h,
        g_h,
        c_h,
    }))
}

// ────────────────────────────────────────────────────────────────────────────
