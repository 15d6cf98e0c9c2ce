//! Analytic rigid-body dynamics and task-space kinematics for the built-in
//! systems.
//!
//! Every model supplies the terms of the manipulator equation
//!
//! ```text
//! D(q) q̈ + C(q, q̇) q̇ + G(q) = B u
//! ```
//!
//! with `D` symmetric positive definite and `Ḋ − 2C` skew symmetric, plus a
//! task map `y(q)` with Jacobian `J_y(q)`. Kinetic and potential energy are
//! computed from point-mass geometry rather than from `D(q)` and `G(q)`, so
//! the finite-difference Lagrangian oracles in the verification suite check
//! the analytic matrices against an independent derivation.
//!
//! All operations are pure; a model is immutable after construction and can
//! be shared freely across threads.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default joint-angle half-range of the valid domain box (rad).
pub const DOMAIN_ANGLE_LIMIT: f64 = std::f64::consts::PI;
/// Default per-coordinate velocity half-range of the valid domain box (rad/s or m/s).
pub const DOMAIN_VELOCITY_LIMIT: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch for {name}: expected {expected}, got {got}")]
    Dimension {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("inertia matrix is numerically singular")]
    SingularInertia,
}

/// A configuration/velocity pair `(q, q̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl State {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn from_slices(q: &[f64], qdot: &[f64]) -> Self {
        Self {
            q: DVector::from_row_slice(q),
            qdot: DVector::from_row_slice(qdot),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.qdot.iter().all(|v| v.is_finite())
    }
}

/// An axis-aligned box in state space, used for domain checks and for the
/// sampled bound estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub qd_min: Vec<f64>,
    pub qd_max: Vec<f64>,
}

impl StateBox {
    pub fn new(q_min: Vec<f64>, q_max: Vec<f64>, qd_min: Vec<f64>, qd_max: Vec<f64>) -> Self {
        assert_eq!(q_min.len(), q_max.len());
        assert_eq!(qd_min.len(), qd_max.len());
        assert_eq!(q_min.len(), qd_min.len());
        Self {
            q_min,
            q_max,
            qd_min,
            qd_max,
        }
    }

    /// Uniform box `[-angle, angle]^k x [-vel, vel]^k`.
    pub fn symmetric(k: usize, angle: f64, vel: f64) -> Self {
        Self::new(vec![-angle; k], vec![angle; k], vec![-vel; k], vec![vel; k])
    }

    pub fn dim(&self) -> usize {
        self.q_min.len()
    }

    /// True when each box interval has positive width.
    pub fn is_nondegenerate(&self) -> bool {
        self.q_min.iter().zip(&self.q_max).all(|(lo, hi)| hi > lo)
            && self.qd_min.iter().zip(&self.qd_max).all(|(lo, hi)| hi > lo)
    }

    pub fn contains(&self, s: &State) -> bool {
        s.q.len() == self.dim()
            && s.q
                .iter()
                .zip(self.q_min.iter().zip(&self.q_max))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
            && s.qdot
                .iter()
                .zip(self.qd_min.iter().zip(&self.qd_max))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Map a point of the unit cube `[0,1]^{2k}` into the box.
    pub fn lerp(&self, unit: &[f64]) -> State {
        let k = self.dim();
        assert_eq!(unit.len(), 2 * k);
        let q = DVector::from_fn(k, |i, _| {
            self.q_min[i] + unit[i] * (self.q_max[i] - self.q_min[i])
        });
        let qdot = DVector::from_fn(k, |i, _| {
            self.qd_min[i] + unit[k + i] * (self.qd_max[i] - self.qd_min[i])
        });
        State::new(q, qdot)
    }

    /// Compact text form used as part of bound-cache keys.
    pub fn key_string(&self) -> String {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "q[{}..{}]qd[{}..{}]",
            fmt(&self.q_min),
            fmt(&self.q_max),
            fmt(&self.qd_min),
            fmt(&self.qd_max)
        )
    }
}

fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_g() -> f64 {
    9.81
}
fn default_pole_mass() -> f64 {
    0.2
}
fn default_pole_length() -> f64 {
    0.5
}

/// One of the built-in dynamics models.
///
/// - `DoubleIntegrator`: a unit point mass on a line, `m ẍ = u`.
/// - `TwoLinkArm`: planar revolute-revolute arm with point masses at the
///   link ends; fully actuated (`B = I`). Task map: end-effector position.
/// - `CartPole`: cart of mass `m_c` with a point-mass pole; only the cart
///   is actuated (`B = [1, 0]ᵀ`). The pole angle `θ` is measured from the
///   downward vertical, so `θ = π` is the upright position. Task map: cart
///   position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobotModel {
    DoubleIntegrator {
        #[serde(default = "default_one")]
        mass: f64,
    },
    TwoLinkArm {
        #[serde(default = "default_one")]
        m1: f64,
        #[serde(default = "default_one")]
        m2: f64,
        #[serde(default = "default_one")]
        l1: f64,
        #[serde(default = "default_one")]
        l2: f64,
        #[serde(default = "default_g")]
        g: f64,
        #[serde(default = "default_true")]
        gravity: bool,
    },
    CartPole {
        #[serde(default = "default_one")]
        m_c: f64,
        #[serde(default = "default_pole_mass")]
        m_p: f64,
        #[serde(default = "default_pole_length")]
        l: f64,
        #[serde(default = "default_g")]
        g: f64,
        #[serde(default = "default_true")]
        gravity: bool,
    },
}

impl RobotModel {
    pub fn double_integrator() -> Self {
        RobotModel::DoubleIntegrator { mass: 1.0 }
    }

    pub fn two_link_arm() -> Self {
        RobotModel::TwoLinkArm {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            g: 9.81,
            gravity: true,
        }
    }

    pub fn cart_pole() -> Self {
        RobotModel::CartPole {
            m_c: 1.0,
            m_p: 0.2,
            l: 0.5,
            g: 9.81,
            gravity: true,
        }
    }

    /// Copy of the model with gravity switched on or off (used by the
    /// energy-conservation checks; the double integrator has no gravity).
    pub fn with_gravity(mut self, enabled: bool) -> Self {
        match &mut self {
            RobotModel::DoubleIntegrator { .. } => {}
            RobotModel::TwoLinkArm { gravity, .. } => *gravity = enabled,
            RobotModel::CartPole { gravity, .. } => *gravity = enabled,
        }
        self
    }

    pub fn name(&self) -> &'static str {
        match self {
            RobotModel::DoubleIntegrator { .. } => "double_integrator",
            RobotModel::TwoLinkArm { .. } => "two_link_arm",
            RobotModel::CartPole { .. } => "cart_pole",
        }
    }

    /// Configuration dimension `k`.
    pub fn k(&self) -> usize {
        match self {
            RobotModel::DoubleIntegrator { .. } => 1,
            RobotModel::TwoLinkArm { .. } | RobotModel::CartPole { .. } => 2,
        }
    }

    /// Input dimension `m` (`m ≤ k`; the cart-pole is underactuated).
    pub fn input_dim(&self) -> usize {
        match self {
            RobotModel::DoubleIntegrator { .. } => 1,
            RobotModel::TwoLinkArm { .. } => 2,
            RobotModel::CartPole { .. } => 1,
        }
    }

    /// Task-space dimension of `y(q)`.
    pub fn task_dim(&self) -> usize {
        match self {
            RobotModel::DoubleIntegrator { .. } => 1,
            RobotModel::TwoLinkArm { .. } => 2,
            RobotModel::CartPole { .. } => 1,
        }
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<(), ModelError> {
        if q.len() != self.k() {
            return Err(ModelError::Dimension {
                name: "q",
                expected: self.k(),
                got: q.len(),
            });
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("q"));
        }
        Ok(())
    }

    fn check_qdot(&self, qdot: &DVector<f64>) -> Result<(), ModelError> {
        if qdot.len() != self.k() {
            return Err(ModelError::Dimension {
                name: "qdot",
                expected: self.k(),
                got: qdot.len(),
            });
        }
        if !qdot.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("qdot"));
        }
        Ok(())
    }

    /// Inertia matrix `D(q)`, symmetric positive definite on the valid domain.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        self.check_q(q)?;
        Ok(match self {
            RobotModel::DoubleIntegrator { mass } => DMatrix::from_element(1, 1, *mass),
            RobotModel::TwoLinkArm { m1, m2, l1, l2, .. } => {
                let c2 = q[1].cos();
                let d11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
                let d12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
                let d22 = m2 * l2 * l2;
                DMatrix::from_row_slice(2, 2, &[d11, d12, d12, d22])
            }
            RobotModel::CartPole { m_c, m_p, l, .. } => {
                let ct = q[1].cos();
                let d12 = m_p * l * ct;
                DMatrix::from_row_slice(2, 2, &[m_c + m_p, d12, d12, m_p * l * l])
            }
        })
    }

    /// Coriolis/centrifugal matrix `C(q, q̇)`, chosen so that `Ḋ − 2C` is
    /// skew symmetric (Christoffel convention).
    pub fn coriolis_matrix(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
    ) -> Result<DMatrix<f64>, ModelError> {
        self.check_q(q)?;
        self.check_qdot(qdot)?;
        Ok(match self {
            RobotModel::DoubleIntegrator { .. } => DMatrix::zeros(1, 1),
            RobotModel::TwoLinkArm { m2, l1, l2, .. } => {
                let hc = -m2 * l1 * l2 * q[1].sin();
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[hc * qdot[1], hc * (qdot[0] + qdot[1]), -hc * qdot[0], 0.0],
                )
            }
            RobotModel::CartPole { m_p, l, .. } => {
                DMatrix::from_row_slice(2, 2, &[0.0, -m_p * l * q[1].sin() * qdot[1], 0.0, 0.0])
            }
        })
    }

    /// Gravity vector `G(q) = ∂P/∂q`; zero when gravity is disabled.
    pub fn gravity_vector(&self, q: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        self.check_q(q)?;
        Ok(match self {
            RobotModel::DoubleIntegrator { .. } => DVector::zeros(1),
            RobotModel::TwoLinkArm {
                m1,
                m2,
                l1,
                l2,
                g,
                gravity,
            } => {
                if !gravity {
                    return Ok(DVector::zeros(2));
                }
                let c1 = q[0].cos();
                let c12 = (q[0] + q[1]).cos();
                DVector::from_vec(vec![
                    g * ((m1 + m2) * l1 * c1 + m2 * l2 * c12),
                    g * m2 * l2 * c12,
                ])
            }
            RobotModel::CartPole {
                m_p, l, g, gravity, ..
            } => {
                if !gravity {
                    return Ok(DVector::zeros(2));
                }
                DVector::from_vec(vec![0.0, m_p * g * l * q[1].sin()])
            }
        })
    }

    /// Actuation matrix `B(q)` (`k × m`); constant for all built-in models.
    pub fn actuation_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        match self {
            RobotModel::DoubleIntegrator { .. } => DMatrix::identity(1, 1),
            RobotModel::TwoLinkArm { .. } => DMatrix::identity(2, 2),
            RobotModel::CartPole { .. } => DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        }
    }

    /// Solve `D(q) q̈ = B u − C(q, q̇) q̇ − G(q)` for the acceleration.
    pub fn forward_dynamics(
        &self,
        s: &State,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>, ModelError> {
        if u.len() != self.input_dim() {
            return Err(ModelError::Dimension {
                name: "u",
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("u"));
        }
        let d = self.mass_matrix(&s.q)?;
        let c = self.coriolis_matrix(&s.q, &s.qdot)?;
        let g = self.gravity_vector(&s.q)?;
        let rhs = self.actuation_matrix(&s.q) * u - c * &s.qdot - g;
        d.lu().solve(&rhs).ok_or(ModelError::SingularInertia)
    }

    /// Task map `y(q)` and its Jacobian `J_y(q)` (rows: task dims).
    pub fn task_map(&self, q: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), ModelError> {
        self.check_q(q)?;
        Ok(match self {
            RobotModel::DoubleIntegrator { .. } => (q.clone(), DMatrix::identity(1, 1)),
            RobotModel::TwoLinkArm { l1, l2, .. } => {
                let (s1, c1) = q[0].sin_cos();
                let (s12, c12) = (q[0] + q[1]).sin_cos();
                let y = DVector::from_vec(vec![l1 * c1 + l2 * c12, l1 * s1 + l2 * s12]);
                let jac = DMatrix::from_row_slice(
                    2,
                    2,
                    &[-l1 * s1 - l2 * s12, -l2 * s12, l1 * c1 + l2 * c12, l2 * c12],
                );
                (y, jac)
            }
            RobotModel::CartPole { .. } => (
                DVector::from_vec(vec![q[0]]),
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            ),
        })
    }

    /// Kinetic energy from point-mass velocities (independent of `D(q)`).
    pub fn kinetic_energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
        match self {
            RobotModel::DoubleIntegrator { mass } => 0.5 * mass * qdot[0] * qdot[0],
            RobotModel::TwoLinkArm { m1, m2, l1, l2, .. } => {
                let (s1, c1) = q[0].sin_cos();
                let (s12, c12) = (q[0] + q[1]).sin_cos();
                // Velocity of the first point mass (end of link 1).
                let v1 = [-l1 * s1 * qdot[0], l1 * c1 * qdot[0]];
                // Velocity of the second point mass (end of link 2).
                let w2 = qdot[0] + qdot[1];
                let v2 = [v1[0] - l2 * s12 * w2, v1[1] + l2 * c12 * w2];
                0.5 * m1 * (v1[0] * v1[0] + v1[1] * v1[1])
                    + 0.5 * m2 * (v2[0] * v2[0] + v2[1] * v2[1])
            }
            RobotModel::CartPole { m_c, m_p, l, .. } => {
                let (st, ct) = q[1].sin_cos();
                // Pole tip sits at (x + l sin θ, −l cos θ).
                let vp = [qdot[0] + l * ct * qdot[1], l * st * qdot[1]];
                0.5 * m_c * qdot[0] * qdot[0] + 0.5 * m_p * (vp[0] * vp[0] + vp[1] * vp[1])
            }
        }
    }

    /// Potential energy from point-mass heights; zero with gravity disabled.
    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        match self {
            RobotModel::DoubleIntegrator { .. } => 0.0,
            RobotModel::TwoLinkArm {
                m1,
                m2,
                l1,
                l2,
                g,
                gravity,
            } => {
                if !gravity {
                    return 0.0;
                }
                let y1 = l1 * q[0].sin();
                let y2 = y1 + l2 * (q[0] + q[1]).sin();
                g * (m1 * y1 + m2 * y2)
            }
            RobotModel::CartPole {
                m_p, l, g, gravity, ..
            } => {
                if !gravity {
                    return 0.0;
                }
                -m_p * g * l * q[1].cos()
            }
        }
    }

    /// The compact state box on which bounds are estimated and random
    /// states are drawn: angles/positions in `[-π, π]`, velocities in
    /// `[-5, 5]` per coordinate.
    pub fn valid_box(&self) -> StateBox {
        StateBox::symmetric(self.k(), DOMAIN_ANGLE_LIMIT, DOMAIN_VELOCITY_LIMIT)
    }
}
