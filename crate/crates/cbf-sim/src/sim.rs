//! Closed-loop scenario simulation.
//!
//! A [`Scenario`] bundles a robot model, a barrier, a safety filter, a
//! desired-input policy and integration parameters into one declarative,
//! TOML-friendly description. [`run`] integrates the closed loop with
//! fixed-step RK4 (control held over each step) and produces a [`Trace`]
//! of every filter decision plus summary [`Metrics`].
//!
//! Runs are deterministic: the only randomness is the seeded initial-state
//! sampler, and trace serialization avoids anything time- or
//! platform-dependent, so identical scenarios yield byte-identical CSV.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::barrier::{
    BarrierDescriptor, BarrierError, ClassKappa, EnergyBarrier, KinematicBarrier,
    UnderactuatedBarrier,
};
use crate::filter::{self, FilterError, FilterOutput, RobustMode, TrackingTask};
use crate::models::{ModelError, RobotModel, State};

/// Integration step used by the shipped scenarios. Small enough that the
/// discrete-time drift past the continuous-time invariant stays below the
/// reporting tolerance.
pub const DEFAULT_DT: f64 = 1e-3;
/// Default episode length in seconds.
pub const DEFAULT_HORIZON: f64 = 10.0;
/// A step counts as a safety violation when the episode's barrier value
/// drops below minus this tolerance.
pub const VIOLATION_TOL: f64 = 1e-3;
/// Default barrier margin required of sampled initial states.
pub const SAMPLE_MARGIN: f64 = 0.05;

const MAX_SAMPLE_ATTEMPTS: usize = 100_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("barrier: {0}")]
    Barrier(#[from] BarrierError),
    #[error("filter: {0}")]
    Filter(#[from] FilterError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no initial state with the requested margin found in {0} attempts")]
    SamplingFailed(usize),
    #[error("comparison needs at least two scenarios")]
    ComparisonTooSmall,
    #[error("comparison needs a shared model and barrier ({0} vs {1})")]
    ComparisonMismatch(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ────────────────────────────────────────────────────────────────────────────
// Scenario description

/// Which safety filter closes the loop, with its parameters.
///
/// `alpha` is the class-K function applied to the barrier value in the
/// filter constraint; `alpha_e` weighs configuration margin against
/// kinetic energy in the energy barriers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterChoice {
    /// Velocity-level filter; the command is a joint velocity realized by a
    /// low-level loop `u = k_pd Bᵀ(q̇* − q̇) (+ B†G)`. Its guarantee speaks
    /// about `h` itself, so the trace's barrier column repeats `h`.
    Velocity {
        #[serde(default)]
        alpha: ClassKappa,
        #[serde(default = "default_k_pd")]
        k_pd: f64,
        #[serde(default = "default_true")]
        gravity_compensation: bool,
    },
    /// Energy-barrier torque filter.
    Torque {
        #[serde(default)]
        alpha: ClassKappa,
        #[serde(default = "default_one")]
        alpha_e: f64,
    },
    /// Torque filter with the inertia (and optionally gravity) terms
    /// replaced by the bound `c_u`.
    RobustTorque {
        #[serde(default)]
        alpha: ClassKappa,
        #[serde(default = "default_one")]
        alpha_e: f64,
        c_u: f64,
        mode: RobustMode,
    },
    /// Velocity-command filter with the embedded loop `u = −K_vel(q̇ − q̇_d)`;
    /// `k_vel` scales the identity.
    VelocityCommand {
        #[serde(default)]
        alpha: ClassKappa,
        #[serde(default = "default_one")]
        alpha_e: f64,
        k_vel: f64,
    },
    /// Constraint-coordinate energy filter for underactuated models.
    Underactuated {
        #[serde(default)]
        alpha: ClassKappa,
        #[serde(default = "default_one")]
        alpha_e: f64,
    },
    /// Underactuated filter driven by box bounds on the reduced terms.
    RobustUnderactuated {
        #[serde(default)]
        alpha: ClassKappa,
        #[serde(default = "default_one")]
        alpha_e: f64,
        c_l: f64,
        c_u: f64,
    },
}

impl FilterChoice {
    pub fn name(&self) -> &'static str {
        match self {
            FilterChoice::Velocity { .. } => "velocity",
            FilterChoice::Torque { .. } => "torque",
            FilterChoice::RobustTorque { .. } => "robust_torque",
            FilterChoice::VelocityCommand { .. } => "velocity_command",
            FilterChoice::Underactuated { .. } => "underactuated",
            FilterChoice::RobustUnderactuated { .. } => "robust_underactuated",
        }
    }

    /// True when the filter's decision variable is a joint velocity, so the
    /// desired-input policy must produce `q̇_des` rather than a torque.
    pub fn wants_velocity_desired(&self) -> bool {
        matches!(
            self,
            FilterChoice::Velocity { .. } | FilterChoice::VelocityCommand { .. }
        )
    }
}

/// Reference trajectory for the task map, `x_d(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskPath {
    /// Hold a fixed task-space point.
    Setpoint { point: Vec<f64> },
    /// Move from `start` to `end` at constant velocity over `duration`
    /// seconds, then hold.
    Line {
        start: Vec<f64>,
        end: Vec<f64>,
        duration: f64,
    },
    /// Circle of given radius traversed once per `period` seconds
    /// (two-dimensional task maps only).
    Circle {
        center: Vec<f64>,
        radius: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl TaskPath {
    pub fn dim(&self) -> usize {
        match self {
            TaskPath::Setpoint { point } => point.len(),
            TaskPath::Line { start, .. } => start.len(),
            TaskPath::Circle { .. } => 2,
        }
    }

    pub fn position(&self, t: f64) -> DVector<f64> {
        match self {
            TaskPath::Setpoint { point } => DVector::from_row_slice(point),
            TaskPath::Line {
                start,
                end,
                duration,
            } => {
                let r = (t / duration).clamp(0.0, 1.0);
                DVector::from_fn(start.len(), |i, _| start[i] + r * (end[i] - start[i]))
            }
            TaskPath::Circle {
                center,
                radius,
                period,
                phase,
            } => {
                let ang = std::f64::consts::TAU * t / period + phase;
                DVector::from_row_slice(&[
                    center[0] + radius * ang.cos(),
                    center[1] + radius * ang.sin(),
                ])
            }
        }
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        match self {
            TaskPath::Setpoint { point } => DVector::zeros(point.len()),
            TaskPath::Line {
                start,
                end,
                duration,
            } => {
                if t < *duration {
                    DVector::from_fn(start.len(), |i, _| (end[i] - start[i]) / duration)
                } else {
                    DVector::zeros(start.len())
                }
            }
            TaskPath::Circle {
                radius,
                period,
                phase,
                ..
            } => {
                let w = std::f64::consts::TAU / period;
                let ang = w * t + phase;
                DVector::from_row_slice(&[-radius * w * ang.sin(), radius * w * ang.cos()])
            }
        }
    }

    fn validate(&self, task_dim: usize) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        match self {
            TaskPath::Setpoint { point } => {
                if point.len() != task_dim {
                    return bad(format!(
                        "setpoint has {} coordinates, task map has {task_dim}",
                        point.len()
                    ));
                }
            }
            TaskPath::Line {
                start,
                end,
                duration,
            } => {
                if start.len() != task_dim || end.len() != task_dim {
                    return bad("line endpoints must match the task dimension".into());
                }
                if !(*duration > 0.0) {
                    return bad("line duration must be positive".into());
                }
            }
            TaskPath::Circle { center, period, .. } => {
                if task_dim != 2 || center.len() != 2 {
                    return bad("circle paths need a two-dimensional task map".into());
                }
                if !(*period > 0.0) {
                    return bad("circle period must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Package the path as closures for the tracking law.
    pub fn tracking_task(&self, lambda: f64) -> Result<TrackingTask, FilterError> {
        let p = self.clone();
        let v = self.clone();
        TrackingTask::new(
            Box::new(move |t| p.position(t)),
            Box::new(move |t| v.velocity(t)),
            lambda,
        )
    }
}

/// How the unfiltered desired input is produced each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesiredPolicy {
    /// Task-space tracking. Velocity-level filters receive the tracking
    /// velocity `q̇_des` directly; torque-level filters receive
    /// `u_des = k_des Bᵀ(q̇_des − q̇)` plus optional gravity precompensation.
    Tracking {
        task: TaskPath,
        lambda: f64,
        #[serde(default = "default_k_des")]
        k_des: f64,
        #[serde(default = "default_true")]
        gravity_compensation: bool,
    },
    /// Open-loop sinusoid per input coordinate:
    /// `offset_i + amplitude_i sin(2π frequency_hz_i t + phase_i)`.
    Sinusoid {
        amplitude: Vec<f64>,
        frequency_hz: Vec<f64>,
        #[serde(default)]
        phase: Vec<f64>,
        #[serde(default)]
        offset: Vec<f64>,
    },
    /// Fixed desired input.
    Constant { value: Vec<f64> },
}

/// Initial state: given explicitly, or rejection-sampled inside the
/// filter's safe set with a barrier margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    State {
        q: Vec<f64>,
        qdot: Vec<f64>,
    },
    Sample {
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default)]
        zero_velocity: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    /// Integration step in seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Episode length in seconds.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Seed for the initial-state sampler.
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            seed: 0,
        }
    }
}

/// One complete closed-loop experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub model: RobotModel,
    pub barrier: BarrierDescriptor,
    pub filter: FilterChoice,
    pub desired: DesiredPolicy,
    pub initial: InitialCondition,
    #[serde(default)]
    pub run: RunParams,
}

impl Scenario {
    /// Content hash identifying the full scenario (including the seed).
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("scenario serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        if !(self.run.dt > 0.0 && self.run.dt.is_finite()) {
            return bad("dt must be positive".into());
        }
        if self.run.horizon < self.run.dt {
            return bad("horizon must be at least one step".into());
        }
        self.barrier.validate(&self.model)?;
        let k = self.model.k();
        let m = self.model.input_dim();
        let want = if self.filter.wants_velocity_desired() {
            k
        } else {
            m
        };
        match &self.desired {
            DesiredPolicy::Tracking { task, lambda, .. } => {
                task.validate(self.model.task_dim())?;
                if !(*lambda > 0.0) {
                    return bad("tracking lambda must be positive".into());
                }
            }
            DesiredPolicy::Sinusoid {
                amplitude,
                frequency_hz,
                phase,
                offset,
            } => {
                if amplitude.len() != want || frequency_hz.len() != want {
                    return bad(format!(
                        "sinusoid needs {want} amplitude/frequency entries for this filter"
                    ));
                }
                if !(phase.is_empty() || phase.len() == want)
                    || !(offset.is_empty() || offset.len() == want)
                {
                    return bad("sinusoid phase/offset must be empty or full-length".into());
                }
            }
            DesiredPolicy::Constant { value } => {
                if value.len() != want {
                    return bad(format!("constant desired input needs {want} entries"));
                }
            }
        }
        if let InitialCondition::State { q, qdot } = &self.initial {
            if q.len() != k || qdot.len() != k {
                return bad(format!("initial state must have {k} coordinates"));
            }
        }
        match &self.filter {
            FilterChoice::Underactuated { .. } | FilterChoice::RobustUnderactuated { .. } => {}
            FilterChoice::VelocityCommand { k_vel, .. } => {
                if k != m {
                    return bad("velocity-command filter needs full actuation".into());
                }
                if !(*k_vel > 0.0) {
                    return bad("k_vel must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

// ────────────────────────────────────────────────────────────────────────────
// Trace and metrics

/// Everything logged about one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// What the filter returned (a velocity or a torque, by filter family).
    pub command: DVector<f64>,
    /// Torque actually applied to the plant.
    pub applied: DVector<f64>,
    pub h: f64,
    /// The barrier value the filter's guarantee is stated for: `h_D`
    /// (energy filters), `ĥ_D` (underactuated), or `h` again (velocity
    /// filter).
    pub h_d: f64,
    pub psi: f64,
    pub intervened: bool,
    pub constraint_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub scenario_name: String,
    pub scenario_hash: String,
    pub tool_version: String,
    pub model: String,
    pub filter: String,
    pub dt: f64,
    /// Whether the (possibly sampled) initial state lay inside the
    /// episode's safe set.
    pub start_inside: bool,
    pub records: Vec<StepRecord>,
    /// Populated when the run aborted; the records up to the failure are
    /// kept.
    pub error: Option<String>,
}

/// Summary statistics of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub min_h: f64,
    pub min_h_d: f64,
    /// Steps with the episode barrier below `−VIOLATION_TOL`.
    pub violation_steps: usize,
    pub intervention_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking_rms: Option<f64>,
    pub max_command_norm: f64,
    pub steps: usize,
    pub completed: bool,
}

impl Metrics {
    /// Recompute the summary from a trace. `tracking_errors` carries the
    /// per-record task error norms when the scenario tracks a reference.
    pub fn from_trace(trace: &Trace, tracking_errors: Option<&[f64]>) -> Self {
        let n = trace.records.len();
        let mut min_h = f64::INFINITY;
        let mut min_h_d = f64::INFINITY;
        let mut violations = 0usize;
        let mut interventions = 0usize;
        let mut max_cmd = 0.0f64;
        for r in &trace.records {
            min_h = min_h.min(r.h);
            min_h_d = min_h_d.min(r.h_d);
            if r.h_d < -VIOLATION_TOL {
                violations += 1;
            }
            if r.intervened {
                interventions += 1;
            }
            max_cmd = max_cmd.max(r.command.norm());
        }
        let tracking_rms = tracking_errors.map(|errs| {
            let ss: f64 = errs.iter().map(|e| e * e).sum();
            (ss / errs.len().max(1) as f64).sqrt()
        });
        Metrics {
            min_h,
            min_h_d,
            violation_steps: violations,
            intervention_fraction: if n == 0 {
                0.0
            } else {
                interventions as f64 / n as f64
            },
            tracking_rms,
            max_command_norm: max_cmd,
            steps: n,
            completed: trace.error.is_none(),
        }
    }

    /// Flat `key = value` block, one metric per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("min_h = {}\n", self.min_h));
        out.push_str(&format!("min_h_d = {}\n", self.min_h_d));
        out.push_str(&format!("violation_steps = {}\n", self.violation_steps));
        out.push_str(&format!(
            "intervention_fraction = {}\n",
            self.intervention_fraction
        ));
        if let Some(rms) = self.tracking_rms {
            out.push_str(&format!("tracking_rms = {rms}\n"));
        }
        out.push_str(&format!("max_command_norm = {}\n", self.max_command_norm));
        out.push_str(&format!("steps = {}\n", self.steps));
        out.push_str(&format!("completed = {}\n", self.completed));
        out
    }
}

impl Trace {
    /// CSV serialization: `# key = value` metadata lines, a header row, then
    /// one row per step with columns
    /// `t, q_0.., qd_0.., cmd_0.., u_0.., h, hD, psi, intervened`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# scenario = {}\n", self.scenario_name));
        out.push_str(&format!("# hash = {}\n", self.scenario_hash));
        out.push_str(&format!("# version = {}\n", self.tool_version));
        out.push_str(&format!("# model = {}\n", self.model));
        out.push_str(&format!("# filter = {}\n", self.filter));
        out.push_str(&format!("# dt = {}\n", self.dt));
        out.push_str(&format!("# start_inside = {}\n", self.start_inside));
        if let Some(err) = &self.error {
            out.push_str(&format!("# error = {err}\n"));
        }
        let (k, m) = self
            .records
            .first()
            .map(|r| (r.q.len(), r.applied.len()))
            .unwrap_or((0, 0));
        let mut cols = vec!["t".to_string()];
        cols.extend((0..k).map(|i| format!("q_{i}")));
        cols.extend((0..k).map(|i| format!("qd_{i}")));
        cols.extend((0..m).map(|i| format!("cmd_{i}")));
        cols.extend((0..m).map(|i| format!("u_{i}")));
        cols.extend(["h", "hD", "psi", "intervened"].map(String::from));
        out.push_str(&cols.join(","));
        out.push('\n');
        for r in &self.records {
            let mut row = vec![format!("{}", r.t)];
            row.extend(r.q.iter().map(|v| format!("{v}")));
            row.extend(r.qdot.iter().map(|v| format!("{v}")));
            row.extend(r.command.iter().map(|v| format!("{v}")));
            row.extend(r.applied.iter().map(|v| format!("{v}")));
            row.push(format!("{}", r.h));
            row.push(format!("{}", r.h_d));
            row.push(format!("{}", r.psi));
            row.push(if r.intervened { "1".into() } else { "0".into() });
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

// ────────────────────────────────────────────────────────────────────────────
// Integration

/// One classical RK4 step of the rigid-body dynamics with the input held
/// constant across the step.
pub fn rk4_step(
    model: &RobotModel,
    s: &State,
    u: &DVector<f64>,
    dt: f64,
) -> Result<State, SimError> {
    let f = |st: &State| -> Result<(DVector<f64>, DVector<f64>), ModelError> {
        Ok((st.qdot.clone(), model.forward_dynamics(st, u)?))
    };
    let (k1q, k1v) = f(s)?;
    let s2 = State::new(&s.q + 0.5 * dt * &k1q, &s.qdot + 0.5 * dt * &k1v);
    let (k2q, k2v) = f(&s2)?;
    let s3 = State::new(&s.q + 0.5 * dt * &k2q, &s.qdot + 0.5 * dt * &k2v);
    let (k3q, k3v) = f(&s3)?;
    let s4 = State::new(&s.q + dt * &k3q, &s.qdot + dt * &k3v);
    let (k4q, k4v) = f(&s4)?;
    let next = State::new(
        &s.q + dt / 6.0 * (&k1q + 2.0 * &k2q + 2.0 * &k3q + &k4q),
        &s.qdot + dt / 6.0 * (&k1v + 2.0 * &k2v + 2.0 * &k3v + &k4v),
    );
    if !next.is_finite() {
        return Err(SimError::InvalidScenario(
            "state diverged to a non-finite value".into(),
        ));
    }
    Ok(next)
}

// ────────────────────────────────────────────────────────────────────────────
// Runtime pieces resolved from the declarative scenario

enum FilterRuntime {
    Velocity {
        kin: KinematicBarrier,
        alpha: ClassKappa,
        k_pd: f64,
        gravity_compensation: bool,
    },
    Torque {
        b: EnergyBarrier,
        alpha: ClassKappa,
    },
    RobustTorque {
        b: EnergyBarrier,
        alpha: ClassKappa,
        c_u: f64,
        mode: RobustMode,
    },
    VelocityCommand {
        b: EnergyBarrier,
        alpha: ClassKappa,
        k_vel: DMatrix<f64>,
    },
    Underactuated {
        b: UnderactuatedBarrier,
        alpha: ClassKappa,
    },
    RobustUnderactuated {
        b: UnderactuatedBarrier,
        alpha: ClassKappa,
        c_l: f64,
        c_u: f64,
    },
}

impl FilterRuntime {
    fn build(choice: &FilterChoice, kin: KinematicBarrier) -> Result<Self, SimError> {
        Ok(match choice {
            FilterChoice::Velocity {
                alpha,
                k_pd,
                gravity_compensation,
            } => {
                alpha.validate()?;
                if !(*k_pd > 0.0) {
                    return Err(SimError::InvalidScenario("k_pd must be positive".into()));
                }
                FilterRuntime::Velocity {
                    kin,
                    alpha: *alpha,
                    k_pd: *k_pd,
                    gravity_compensation: *gravity_compensation,
                }
            }
            FilterChoice::Torque { alpha, alpha_e } => {
                alpha.validate()?;
                FilterRuntime::Torque {
                    b: EnergyBarrier::new(kin, *alpha_e)?,
                    alpha: *alpha,
                }
            }
            FilterChoice::RobustTorque {
                alpha,
                alpha_e,
                c_u,
                mode,
            } => {
                alpha.validate()?;
                FilterRuntime::RobustTorque {
                    b: EnergyBarrier::new(kin, *alpha_e)?,
                    alpha: *alpha,
                    c_u: *c_u,
                    mode: *mode,
                }
            }
            FilterChoice::VelocityCommand {
                alpha,
                alpha_e,
                k_vel,
            } => {
                alpha.validate()?;
                let k = kin.model().k();
                FilterRuntime::VelocityCommand {
                    b: EnergyBarrier::new(kin, *alpha_e)?,
                    alpha: *alpha,
                    k_vel: DMatrix::identity(k, k) * *k_vel,
                }
            }
            FilterChoice::Underactuated { alpha, alpha_e } => {
                alpha.validate()?;
                FilterRuntime::Underactuated {
                    b: UnderactuatedBarrier::new(kin, *alpha_e)?,
                    alpha: *alpha,
                }
            }
            FilterChoice::RobustUnderactuated {
                alpha,
                alpha_e,
                c_l,
                c_u,
            } => {
                alpha.validate()?;
                FilterRuntime::RobustUnderactuated {
                    b: UnderactuatedBarrier::new(kin, *alpha_e)?,
                    alpha: *alpha,
                    c_l: *c_l,
                    c_u: *c_u,
                }
            }
        })
    }

    /// The barrier value the filter's guarantee is stated for: `h` for the
    /// velocity filter, `h_D` for the energy filters, `ĥ_D` for the
    /// underactuated ones. This is what the trace's `hD` column holds and
    /// what violation counting uses.
    fn episode_barrier(&self, s: &State) -> Result<f64, BarrierError> {
        match self {
            FilterRuntime::Velocity { kin, .. } => kin.h(&s.q),
            FilterRuntime::Torque { b, .. }
            | FilterRuntime::RobustTorque { b, .. }
            | FilterRuntime::VelocityCommand { b, .. } => b.h_d(s),
            FilterRuntime::Underactuated { b, .. }
            | FilterRuntime::RobustUnderactuated { b, .. } => b.h_hat(s),
        }
    }

    /// Membership test for the set the filter's guarantee speaks about.
    fn inside_safe_set(&self, s: &State) -> Result<bool, SimError> {
        match self {
            FilterRuntime::Underactuated { b, .. }
            | FilterRuntime::RobustUnderactuated { b, .. } => {
                Ok(b.contains(s)? && filter::coupling_ok(b.kinematic(), &s.q)?)
            }
            _ => Ok(self.episode_barrier(s)? >= 0.0),
        }
    }

    /// Run the filter and realize its command as a plant torque.
    fn step(
        &self,
        s: &State,
        desired: &DVector<f64>,
    ) -> Result<(FilterOutput, DVector<f64>), FilterError> {
        match self {
            FilterRuntime::Velocity {
                kin,
                alpha,
                k_pd,
                gravity_compensation,
                ..
            } => {
                let out = filter::velocity_filter(&s.q, kin, alpha, desired)?;
                let model = kin.model();
                let bmat = model.actuation_matrix(&s.q);
                let mut u = *k_pd * (bmat.transpose() * (&out.command - &s.qdot));
                if *gravity_compensation {
                    u += filter::gravity_precompensation(model, &s.q)?;
                }
                Ok((out, u))
            }
            FilterRuntime::Torque { b, alpha } => {
                let out = filter::torque_filter(b, s, alpha, desired)?;
                let u = out.command.clone();
                Ok((out, u))
            }
            FilterRuntime::RobustTorque {
                b,
                alpha,
                c_u,
                mode,
            } => {
                let out = filter::robust_torque_filter(b, s, alpha, desired, *c_u, *mode)?;
                let u = out.command.clone();
                Ok((out, u))
            }
            FilterRuntime::VelocityCommand { b, alpha, k_vel } => {
                let out = filter::velocity_command_filter(b, s, alpha, k_vel, desired)?;
                let u = filter::low_level_pd(&s.qdot, &out.command, k_vel);
                Ok((out, u))
            }
            FilterRuntime::Underactuated { b, alpha } => {
                let out = filter::underactuated_filter(b, s, alpha, desired)?;
                let u = out.command.clone();
                Ok((out, u))
            }
            FilterRuntime::RobustUnderactuated { b, alpha, c_l, c_u } => {
                let out = filter::robust_underactuated_filter(b, s, alpha, desired, *c_l, *c_u)?;
                let u = out.command.clone();
                Ok((out, u))
            }
        }
    }
}

enum DesiredRuntime {
    Tracking {
        task: TrackingTask,
        k_des: f64,
        gravity_compensation: bool,
    },
    Sinusoid {
        amplitude: Vec<f64>,
        omega: Vec<f64>,
        phase: Vec<f64>,
        offset: Vec<f64>,
    },
    Constant {
        value: DVector<f64>,
    },
}

impl DesiredRuntime {
    fn build(policy: &DesiredPolicy, dim: usize) -> Result<Self, SimError> {
        Ok(match policy {
            DesiredPolicy::Tracking {
                task,
                lambda,
                k_des,
                gravity_compensation,
            } => DesiredRuntime::Tracking {
                task: task.tracking_task(*lambda)?,
                k_des: *k_des,
                gravity_compensation: *gravity_compensation,
            },
            DesiredPolicy::Sinusoid {
                amplitude,
                frequency_hz,
                phase,
                offset,
            } => DesiredRuntime::Sinusoid {
                amplitude: amplitude.clone(),
                omega: frequency_hz
                    .iter()
                    .map(|f| std::f64::consts::TAU * f)
                    .collect(),
                phase: if phase.is_empty() {
                    vec![0.0; dim]
                } else {
                    phase.clone()
                },
                offset: if offset.is_empty() {
                    vec![0.0; dim]
                } else {
                    offset.clone()
                },
            },
            DesiredPolicy::Constant { value } => DesiredRuntime::Constant {
                value: DVector::from_row_slice(value),
            },
        })
    }

    /// Desired input for this step: a joint velocity when
    /// `wants_velocity` is set, otherwise a torque.
    fn desired(
        &self,
        model: &RobotModel,
        s: &State,
        t: f64,
        wants_velocity: bool,
    ) -> Result<DVector<f64>, FilterError> {
        match self {
            DesiredRuntime::Tracking {
                task,
                k_des,
                gravity_compensation,
            } => {
                let qdot_des = filter::tracking_qdot_des(model, &s.q, t, task)?;
                if wants_velocity {
                    return Ok(qdot_des);
                }
                let bmat = model.actuation_matrix(&s.q);
                let mut u = *k_des * (bmat.transpose() * (qdot_des - &s.qdot));
                if *gravity_compensation {
                    u += filter::gravity_precompensation(model, &s.q)?;
                }
                Ok(u)
            }
            DesiredRuntime::Sinusoid {
                amplitude,
                omega,
                phase,
                offset,
            } => Ok(DVector::from_fn(amplitude.len(), |i, _| {
                offset[i] + amplitude[i] * (omega[i] * t + phase[i]).sin()
            })),
            DesiredRuntime::Constant { value } => Ok(value.clone()),
        }
    }

    /// Task error norm at the current state, when a reference is tracked.
    fn tracking_error(&self, model: &RobotModel, s: &State, t: f64) -> Option<f64> {
        match self {
            DesiredRuntime::Tracking { task, .. } => {
                let (y, _) = model.task_map(&s.q).ok()?;
                Some((y - (task.x_d)(t)).norm())
            }
            _ => None,
        }
    }
}

// ────────────────────────────────────────────────────────────────────────────
// Initial-state sampling

/// Rejection-sample a state with the episode barrier at least `margin`.
///
/// Configurations are drawn first and accepted only when `h(q) ≥ margin`;
/// unless `zero_velocity` is set, a velocity is then drawn and the pair is
/// accepted when the filter family's barrier (and, for underactuated
/// filters, the inertial-coupling test) still clears the margin.
pub fn sample_initial_state(
    choice: &FilterChoice,
    kin: &KinematicBarrier,
    margin: f64,
    zero_velocity: bool,
    rng: &mut ChaCha8Rng,
) -> Result<State, SimError> {
    let runtime = FilterRuntime::build(choice, kin.clone())?;
    let bx = kin.model().valid_box();
    let k = bx.dim();
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let mut unit = vec![0.0; 2 * k];
        for v in unit.iter_mut().take(k) {
            *v = rng.gen::<f64>();
        }
        let probe = bx.lerp(&unit);
        if kin.h(&probe.q)? < margin {
            continue;
        }
        if zero_velocity {
            return Ok(State::new(probe.q, DVector::zeros(k)));
        }
        for v in unit.iter_mut().skip(k) {
            *v = rng.gen::<f64>();
        }
        let s = bx.lerp(&unit);
        if runtime.episode_barrier(&s)? < margin {
            continue;
        }
        if matches!(
            choice,
            FilterChoice::Underactuated { .. } | FilterChoice::RobustUnderactuated { .. }
        ) && !filter::coupling_ok(kin, &s.q)?
        {
            continue;
        }
        return Ok(s);
    }
    Err(SimError::SamplingFailed(MAX_SAMPLE_ATTEMPTS))
}

// ────────────────────────────────────────────────────────────────────────────
// The closed loop

/// Integrate one scenario to completion.
///
/// Filter and divergence errors do not tear down the run: the partial
/// trace is preserved with [`Trace::error`] set, `completed` turns false
/// in the metrics, and the caller decides what that means for exit
/// status. Errors before the first step (bad scenario, failed sampling)
/// are returned directly.
pub fn run(scenario: &Scenario) -> Result<(Trace, Metrics), SimError> {
    scenario.validate()?;
    let model = scenario.model.clone();
    let kin = KinematicBarrier::new(model.clone(), scenario.barrier.clone())?;
    let runtime = FilterRuntime::build(&scenario.filter, kin.clone())?;
    let wants_velocity = scenario.filter.wants_velocity_desired();
    let desired_dim = if wants_velocity {
        model.k()
    } else {
        model.input_dim()
    };
    let policy = DesiredRuntime::build(&scenario.desired, desired_dim)?;

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.run.seed);
    let start = match &scenario.initial {
        InitialCondition::State { q, qdot } => State::from_slices(q, qdot),
        InitialCondition::Sample {
            margin,
            zero_velocity,
        } => sample_initial_state(&scenario.filter, &kin, *margin, *zero_velocity, &mut rng)?,
    };

    let dt = scenario.run.dt;
    let steps = (scenario.run.horizon / dt).round() as usize;
    let mut trace = Trace {
        scenario_name: scenario.name.clone(),
        scenario_hash: scenario.hash(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model: model.name().to_string(),
        filter: scenario.filter.name().to_string(),
        dt,
        start_inside: runtime.inside_safe_set(&start)?,
        records: Vec::with_capacity(steps + 1),
        error: None,
    };
    let mut tracking_errors: Vec<f64> = Vec::new();

    let mut s = start;
    for i in 0..=steps {
        let t = i as f64 * dt;
        let step_result = (|| -> Result<(FilterOutput, DVector<f64>, f64, f64), SimError> {
            let desired = policy.desired(&model, &s, t, wants_velocity)?;
            let (out, applied) = runtime.step(&s, &desired)?;
            let h = kin.h(&s.q)?;
            let h_d = runtime.episode_barrier(&s)?;
            Ok((out, applied, h, h_d))
        })();
        let (out, applied, h, h_d) = match step_result {
            Ok(v) => v,
            Err(e) => {
                trace.error = Some(format!("t = {t}: {e}"));
                break;
            }
        };
        if let Some(err) = policy.tracking_error(&model, &s, t) {
            tracking_errors.push(err);
        }
        trace.records.push(StepRecord {
            t,
            q: s.q.clone(),
            qdot: s.qdot.clone(),
            command: out.command,
            applied: applied.clone(),
            h,
            h_d,
            psi: out.psi,
            intervened: out.intervened,
            constraint_residual: out.constraint_residual,
        });
        if i < steps {
            match rk4_step(&model, &s, &applied, dt) {
                Ok(next) => s = next,
                Err(e) => {
                    trace.error = Some(format!("t = {t}: {e}"));
                    break;
                }
            }
        }
    }

    let metrics = Metrics::from_trace(
        &trace,
        if tracking_errors.is_empty() {
            None
        } else {
            Some(&tracking_errors)
        },
    );
    Ok((trace, metrics))
}

// ────────────────────────────────────────────────────────────────────────────
// Comparison tables

/// Aligned metrics table for several runs of the same model and barrier,
/// e.g. a parameter sweep. Labels come from the caller (typically the
/// swept value).
pub fn compare(entries: &[(String, Scenario, Metrics)]) -> Result<String, SimError> {
    if entries.len() < 2 {
        return Err(SimError::ComparisonTooSmall);
    }
    let fingerprint = |s: &Scenario| -> String {
        format!(
            "{}|{}",
            toml::to_string(&s.model).unwrap_or_default(),
            toml::to_string(&s.barrier).unwrap_or_default()
        )
    };
    let base = fingerprint(&entries[0].1);
    for (label, sc, _) in &entries[1..] {
        let fp = fingerprint(sc);
        if fp != base {
            return Err(SimError::ComparisonMismatch(
                entries[0].0.clone(),
                label.clone(),
            ));
        }
    }
    let label_w = entries
        .iter()
        .map(|(l, _, _)| l.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<label_w$}  {:>12}  {:>12}  {:>10}  {:>11}  {:>12}  {:>9}\n",
        "label", "min_h", "min_h_d", "violations", "interv_frac", "tracking_rms", "completed"
    ));
    for (label, _, m) in entries {
        out.push_str(&format!(
            "{:<label_w$}  {:>12.6}  {:>12.6}  {:>10}  {:>11.4}  {:>12}  {:>9}\n",
            label,
            m.min_h,
            m.min_h_d,
            m.violation_steps,
            m.intervention_fraction,
            m.tracking_rms
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "-".into()),
            m.completed
        ));
    }
    Ok(out)
}

fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_k_pd() -> f64 {
    20.0
}
fn default_k_des() -> f64 {
    10.0
}
fn default_margin() -> f64 {
    SAMPLE_MARGIN
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}

// ────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn di_torque_scenario() -> Scenario {
        Scenario {
            name: "di_test".into(),
            model: RobotModel::double_integrator(),
            barrier: BarrierDescriptor::PositionBox { limit: 2.0 },
            filter: FilterChoice::Torque {
                alpha: ClassKappa::default(),
                alpha_e: 1.0,
            },
            desired: DesiredPolicy::Constant { value: vec![10.0] },
            initial: InitialCondition::State {
                q: vec![0.0],
                qdot: vec![0.0],
            },
            run: RunParams {
                dt: 1e-3,
                horizon: 1.0,
                seed: 0,
            },
        }
    }

    #[test]
    fn rk4_leaves_an_equilibrium_alone() {
        let model = RobotModel::two_link_arm().with_gravity(false);
        let s = State::from_slices(&[0.3, -0.8], &[0.0, 0.0]);
        let next = rk4_step(&model, &s, &DVector::zeros(2), 1e-2).unwrap();
        assert_relative_eq!(next.q, s.q, epsilon = 1e-14);
        assert_relative_eq!(next.qdot, s.qdot, epsilon = 1e-14);
    }

    #[test]
    fn rk4_is_exact_on_the_double_integrator() {
        let model = RobotModel::double_integrator();
        let s = State::from_slices(&[0.5], &[-0.25]);
        let dt = 0.1;
        let u = DVector::from_row_slice(&[1.0]);
        let next = rk4_step(&model, &s, &u, dt).unwrap();
        // Constant acceleration a = u/m = 1: quadratic in t, which RK4
        // integrates without error.
        assert_relative_eq!(next.qdot[0], -0.25 + dt, epsilon = 1e-15);
        assert_relative_eq!(next.q[0], 0.5 - 0.25 * dt + 0.5 * dt * dt, epsilon = 1e-15);
    }

    #[test]
    fn rk4_shows_fourth_order_convergence_on_the_arm() {
        let model = RobotModel::two_link_arm();
        let s0 = State::from_slices(&[0.4, 0.9], &[0.3, -0.2]);
        let u = DVector::from_row_slice(&[1.5, -0.5]);
        let integrate = |dt: f64, steps: usize| -> State {
            let mut s = s0.clone();
            for _ in 0..steps {
                s = rk4_step(&model, &s, &u, dt).unwrap();
            }
            s
        };
        // Endpoint errors against a much finer reference; the global error
        // of RK4 scales as dt^4, so halving dt should shrink it ~16x.
        let reference = integrate(0.5 / 512.0, 512);
        let err = |s: &State| {
            ((&s.q - &reference.q).norm_squared() + (&s.qdot - &reference.qdot).norm_squared())
                .sqrt()
        };
        let e1 = err(&integrate(0.5 / 8.0, 8));
        let e2 = err(&integrate(0.5 / 16.0, 16));
        let order = (e1 / e2).log2();
        assert!(order >= 3.8, "observed order {order}");
    }

    #[test]
    fn resting_at_a_safe_equilibrium_never_intervenes() {
        let model = RobotModel::two_link_arm();
        let q0 = vec![0.4, 1.2];
        let g0 = model.gravity_vector(&DVector::from_row_slice(&q0)).unwrap();
        let scenario = Scenario {
            name: "rest".into(),
            model,
            barrier: BarrierDescriptor::SphereObstacle {
                center: vec![1.5, -1.2],
                min_distance: 0.5,
            },
            filter: FilterChoice::Torque {
                alpha: ClassKappa::default(),
                alpha_e: 1.0,
            },
            desired: DesiredPolicy::Constant {
                value: g0.iter().copied().collect(),
            },
            initial: InitialCondition::State {
                q: q0,
                qdot: vec![0.0, 0.0],
            },
            run: RunParams {
                dt: 1e-3,
                horizon: 0.5,
                seed: 0,
            },
        };
        let (trace, metrics) = run(&scenario).unwrap();
        assert!(trace.error.is_none());
        assert_eq!(metrics.steps, 501);
        assert_eq!(metrics.violation_steps, 0);
        assert_relative_eq!(metrics.intervention_fraction, 0.0);
        // Nothing moves, so the minimum is the starting value.
        assert_relative_eq!(metrics.min_h_d, trace.records[0].h_d, epsilon = 1e-9);
        let last = trace.records.last().unwrap();
        assert_relative_eq!(last.qdot.norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn record_count_and_time_grid_match_the_horizon() {
        let scenario = di_torque_scenario();
        let (trace, metrics) = run(&scenario).unwrap();
        assert_eq!(trace.records.len(), 1001);
        assert_eq!(metrics.steps, 1001);
        for (i, r) in trace.records.iter().enumerate() {
            assert_relative_eq!(r.t, i as f64 * 1e-3, epsilon = 1e-12);
        }
    }

    #[test]
    fn aggressive_approach_to_the_wall_stays_inside_the_box() {
        // A stiff tracking controller aiming just inside the wall: the
        // filter has to brake the approach, and the state settles at the
        // target without ever leaving the box.
        let mut scenario = di_torque_scenario();
        scenario.desired = DesiredPolicy::Tracking {
            task: TaskPath::Setpoint { point: vec![1.95] },
            lambda: 3.0,
            k_des: 20.0,
            gravity_compensation: false,
        };
        scenario.initial = InitialCondition::State {
            q: vec![-1.5],
            qdot: vec![0.0],
        };
        scenario.run.horizon = 10.0;
        let (trace, metrics) = run(&scenario).unwrap();
        assert!(trace.error.is_none());
        assert_eq!(metrics.violation_steps, 0, "min h_D {}", metrics.min_h_d);
        assert!(metrics.min_h_d >= -1e-3);
        assert!(metrics.intervention_fraction > 0.0);
        assert!(metrics.min_h >= 0.0);
        let final_x = trace.records.last().unwrap().q[0];
        assert_relative_eq!(final_x, 1.95, epsilon = 1e-2);
    }

    #[test]
    fn infeasible_start_aborts_with_partial_trace() {
        let mut scenario = di_torque_scenario();
        // Outside the position box with zero velocity: the energy filter
        // has no way to help and reports infeasibility at the first step.
        scenario.initial = InitialCondition::State {
            q: vec![3.0],
            qdot: vec![0.0],
        };
        let (trace, metrics) = run(&scenario).unwrap();
        assert!(trace.error.is_some(), "expected an aborted run");
        assert!(!metrics.completed);
        assert!(trace.records.len() < 1001);
        assert!(!trace.start_inside);
    }

    #[test]
    fn sampled_starts_respect_the_margin() {
        let model = RobotModel::two_link_arm();
        let kin = KinematicBarrier::new(
            model.clone(),
            BarrierDescriptor::SphereObstacle {
                center: vec![1.5, -1.2],
                min_distance: 0.5,
            },
        )
        .unwrap();
        let choice = FilterChoice::Torque {
            alpha: ClassKappa::default(),
            alpha_e: 1.0,
        };
        let energy = EnergyBarrier::new(kin.clone(), 1.0).unwrap();
        let bx = model.valid_box();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let s = sample_initial_state(&choice, &kin, 0.05, false, &mut rng).unwrap();
            assert!(energy.h_d(&s).unwrap() >= 0.05);
            assert!(bx.contains(&s));
        }
    }

    #[test]
    fn zero_velocity_sampling_actually_zeroes_the_velocity() {
        let model = RobotModel::two_link_arm();
        let kin = KinematicBarrier::new(
            model,
            BarrierDescriptor::SphereObstacle {
                center: vec![1.5, -1.2],
                min_distance: 0.5,
            },
        )
        .unwrap();
        let choice = FilterChoice::Torque {
            alpha: ClassKappa::default(),
            alpha_e: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let s = sample_initial_state(&choice, &kin, 0.05, true, &mut rng).unwrap();
            assert_eq!(s.qdot.norm(), 0.0);
            assert!(kin.h(&s.q).unwrap() >= 0.05);
        }
    }

    #[test]
    fn identical_scenarios_serialize_to_identical_csv() {
        let scenario = di_torque_scenario();
        let (t1, m1) = run(&scenario).unwrap();
        let (t2, m2) = run(&scenario).unwrap();
        assert_eq!(t1.to_csv(), t2.to_csv());
        assert_eq!(m1, m2);
        assert_eq!(m1.to_text(), m2.to_text());
    }

    #[test]
    fn csv_has_the_documented_shape() {
        let mut scenario = di_torque_scenario();
        scenario.run.horizon = 0.01;
        let (trace, _) = run(&scenario).unwrap();
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        let mut meta = 0;
        let header = loop {
            let line = lines.next().unwrap();
            if line.starts_with('#') {
                meta += 1;
                assert!(line.contains(" = "), "metadata line {line:?}");
            } else {
                break line;
            }
        };
        assert!(meta >= 5);
        assert_eq!(header, "t,q_0,qd_0,cmd_0,u_0,h,hD,psi,intervened");
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 11);
        for row in rows {
            assert_eq!(row.split(',').count(), 9);
            let flag = row.rsplit(',').next().unwrap();
            assert!(flag == "0" || flag == "1");
        }
    }

    #[test]
    fn violation_count_matches_a_trace_recount() {
        let mut scenario = di_torque_scenario();
        // Start outside the safe set with inward velocity: early records
        // violate, later ones recover, exercising both sides of the count.
        scenario.initial = InitialCondition::State {
            q: vec![2.2],
            qdot: vec![-1.0],
        };
        scenario.desired = DesiredPolicy::Constant { value: vec![0.0] };
        let (trace, metrics) = run(&scenario).unwrap();
        let recount = trace
            .records
            .iter()
            .filter(|r| r.h_d < -VIOLATION_TOL)
            .count();
        assert_eq!(metrics.violation_steps, recount);
        assert!(recount > 0);
    }

    #[test]
    fn tracking_rms_is_reported_only_for_tracking_policies() {
        let (_, m_const) = run(&di_torque_scenario()).unwrap();
        assert!(m_const.tracking_rms.is_none());

        let scenario = Scenario {
            name: "track".into(),
            model: RobotModel::two_link_arm(),
            barrier: BarrierDescriptor::SphereObstacle {
                center: vec![1.5, -1.2],
                min_distance: 0.5,
            },
            filter: FilterChoice::Torque {
                alpha: ClassKappa::default(),
                alpha_e: 1.0,
            },
            desired: DesiredPolicy::Tracking {
                task: TaskPath::Setpoint {
                    point: vec![0.2, 1.6],
                },
                lambda: 2.0,
                k_des: 10.0,
                gravity_compensation: true,
            },
            initial: InitialCondition::State {
                q: vec![0.4, 1.2],
                qdot: vec![0.0, 0.0],
            },
            run: RunParams {
                dt: 1e-3,
                horizon: 1.0,
                seed: 0,
            },
        };
        let (trace, metrics) = run(&scenario).unwrap();
        assert!(trace.error.is_none());
        let rms = metrics.tracking_rms.expect("tracking scenario has an rms");
        assert!(rms.is_finite() && rms >= 0.0);
    }

    #[test]
    fn scenario_round_trips_through_toml_with_a_stable_hash() {
        let scenario = di_torque_scenario();
        let text = toml::to_string(&scenario).unwrap();
        let parsed: Scenario = toml::from_str(&text).unwrap();
        assert_eq!(parsed, scenario);
        assert_eq!(parsed.hash(), scenario.hash());
    }

    #[test]
    fn unknown_scenario_keys_are_rejected() {
        let text = r#"
            name = "x"
            surprising = 3
            [model]
            kind = "double_integrator"
            [barrier]
            kind = "position_box"
            limit = 2.0
            [filter]
            kind = "torque"
            [desired]
            kind = "constant"
            value = [0.0]
            [initial]
            kind = "state"
            q = [0.0]
            qdot = [0.0]
        "#;
        assert!(toml::from_str::<Scenario>(text).is_err());
    }

    #[test]
    fn comparison_requires_matching_physics() {
        let a = di_torque_scenario();
        let mut b = a.clone();
        let (_, ma) = run(&a).unwrap();
        let (_, mb) = run(&b).unwrap();
        let table = compare(&[
            ("first".into(), a.clone(), ma.clone()),
            ("second".into(), b.clone(), mb.clone()),
        ])
        .unwrap();
        assert!(table.contains("min_h_d"));
        assert_eq!(table.lines().count(), 3);

        b.barrier = BarrierDescriptor::PositionBox { limit: 1.0 };
        let err = compare(&[("first".into(), a, ma), ("second".into(), b, mb)]);
        assert!(matches!(err, Err(SimError::ComparisonMismatch(_, _))));

        let lone = compare(&[]);
        assert!(matches!(lone, Err(SimError::ComparisonTooSmall)));
    }

    #[test]
    fn circle_and_line_paths_have_consistent_derivatives() {
        let circle = TaskPath::Circle {
            center: vec![0.5, 0.5],
            radius: 0.3,
            period: 4.0,
            phase: 0.7,
        };
        let line = TaskPath::Line {
            start: vec![0.0, 0.0],
            end: vec![1.0, -2.0],
            duration: 2.0,
        };
        let fd = |p: &TaskPath, t: f64| {
            let e = 1e-6;
            (p.position(t + e) - p.position(t - e)) / (2.0 * e)
        };
        for t in [0.3, 1.1, 1.9] {
            assert_relative_eq!(fd(&circle, t), circle.velocity(t), epsilon = 1e-8);
            assert_relative_eq!(fd(&line, t), line.velocity(t), epsilon = 1e-8);
        }
        // After the line finishes the reference holds still.
        assert_relative_eq!(line.velocity(3.0).norm(), 0.0);
        assert_relative_eq!(line.position(3.0), line.position(2.0), epsilon = 1e-12);
    }
}
