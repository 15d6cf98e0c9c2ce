//! Independent reference solvers and bound estimators.
//!
//! The safety filters in [`crate::filter`] are closed-form expressions, so
//! their correctness is checked against solvers derived a different way:
//! a KKT projection onto a halfspace, a brute-force grid search, and a
//! perturbation test that tries to beat a candidate optimum with sampled
//! feasible neighbors. The robust filters additionally need numeric bounds
//! on model quantities over a state box; [`bound_estimator`] produces them
//! by low-discrepancy sampling with a safety factor.
//!
//! Nothing in this module is called by the filters at runtime.

use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::barrier::{reduced_terms, BarrierError, KinematicBarrier};
use crate::models::{RobotModel, StateBox};

/// Multiplier applied to sampled extrema when no factor is given explicitly.
pub const DEFAULT_BOUND_FACTOR: f64 = 1.25;

/// Floor on the number of box samples used by [`bound_estimator`].
pub const MIN_BOUND_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("QP is infeasible: zero constraint normal with offset {b} > 0")]
    Infeasible { b: f64 },
    #[error("no feasible grid point within radius {radius} at resolution {resolution}")]
    InfeasibleAtResolution { radius: f64, resolution: f64 },
    #[error("grid search supports at most 3 inputs, got {0}")]
    TooManyInputs(usize),
    #[error("safety factor must be ≥ 1, got {0}")]
    FactorBelowOne(f64),
    #[error("state box is degenerate or has the wrong dimension")]
    BadBox,
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error("bound cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("bound cache entry is corrupt: {0}")]
    CacheFormat(#[from] serde_json::Error),
}

/// The QP `min ‖u − u_des‖²  s.t.  aᵀu ≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceQP {
    pub u_des: DVector<f64>,
    pub a: DVector<f64>,
    pub b: f64,
}

impl HalfspaceQP {
    pub fn new(u_des: DVector<f64>, a: DVector<f64>, b: f64) -> Self {
        assert_eq!(u_des.len(), a.len());
        Self { u_des, a, b }
    }

    pub fn is_satisfied_by(&self, u: &DVector<f64>) -> bool {
        self.a.dot(u) >= self.b
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        (u - &self.u_des).norm_squared()
    }
}

/// Solve the halfspace QP from its KKT conditions.
///
/// With a single affine constraint the solution is a projection: if `u_des`
/// already satisfies `aᵀu ≥ b` it is optimal (zero multiplier); otherwise
/// the constraint is active and the optimum is the nearest point of the
/// hyperplane `aᵀu = b`,
///
/// ```text
/// u* = u_des + a (b − aᵀu_des) / ‖a‖².
/// ```
///
/// Infeasible only when `a = 0` and `b > 0`.
pub fn solve_single_constraint_qp(p: &HalfspaceQP) -> Result<DVector<f64>, OracleError> {
    let slack = p.a.dot(&p.u_des) - p.b;
    if slack >= 0.0 {
        return Ok(p.u_des.clone());
    }
    let aa = p.a.norm_squared();
    if aa == 0.0 {
        return Err(OracleError::Infeasible { b: p.b });
    }
    Ok(&p.u_des - &p.a * (slack / aa))
}

/// Try to beat `u_star` with `n` sampled feasible points inside a ball of
/// the given radius. Returns `false` if any of them achieves a strictly
/// smaller objective (beyond fp slop), i.e. `u_star` was not optimal.
pub fn perturbation_optimality(
    p: &HalfspaceQP,
    u_star: &DVector<f64>,
    n: usize,
    radius: f64,
    rng: &mut impl Rng,
) -> bool {
    let m = u_star.len();
    let best = p.objective(u_star);
    for _ in 0..n {
        let step = DVector::from_fn(m, |_, _| rng.gen_range(-radius..=radius));
        let candidate = u_star + step;
        if p.is_satisfied_by(&candidate) && p.objective(&candidate) < best - 1e-12 {
            return false;
        }
    }
    true
}

/// Exhaustive search over a uniform grid centered at `u_des`, spanning
/// `±radius` per input with the given spacing. Returns the feasible grid
/// point with the smallest objective.
///
/// Intentionally dumb. With the grid centered at `u_des`, any instance
/// whose true optimum lies well inside the search radius yields an
/// objective within `2·resolution·radius` of the KKT solution, which is
/// the agreement checked by the cross-oracle tests.
pub fn grid_search_qp(
    p: &HalfspaceQP,
    radius: f64,
    resolution: f64,
) -> Result<DVector<f64>, OracleError> {
    let m = p.u_des.len();
    if m > 3 {
        return Err(OracleError::TooManyInputs(m));
    }
    assert!(radius > 0.0 && resolution > 0.0);
    let n = (radius / resolution).round() as i64;
    let per_axis = 2 * n + 1;
    let total = per_axis.pow(m as u32);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut u = DVector::zeros(m);
    for flat in 0..total {
        let mut rem = flat;
        for i in 0..m {
            let j = rem % per_axis - n;
            rem /= per_axis;
            u[i] = p.u_des[i] + j as f64 * resolution;
        }
        if !p.is_satisfied_by(&u) {
            continue;
        }
        let obj = p.objective(&u);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, u.clone()));
        }
    }
    best.map(|(_, u)| u)
        .ok_or(OracleError::InfeasibleAtResolution { radius, resolution })
}

// ────────────────────────────────────────────────────────────────────────────
// Sampled bounds over a state box

/// Additive low-discrepancy sequence on the unit cube (the `R2` family:
/// increments are powers of the generalized golden ratio). Deterministic
/// and unseeded, so bound estimates are reproducible.
#[derive(Debug, Clone)]
pub struct R2Sequence {
    alphas: Vec<f64>,
    state: Vec<f64>,
}

impl R2Sequence {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        // Unique root > 1 of x^(d+1) = x + 1 by fixed-point iteration.
        let mut phi = 2.0_f64;
        for _ in 0..128 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alphas = (1..=dim as i32).map(|i| phi.powi(-i).fract()).collect();
        Self {
            alphas,
            state: vec![0.5; dim],
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        for (s, a) in self.state.iter_mut().zip(&self.alphas) {
            *s = (*s + *a).fract();
        }
        self.state.clone()
    }
}

/// Which scalar the estimator should bound.
#[derive(Debug, Clone, Copy)]
pub enum BoundQuantity<'a> {
    /// `max ½ λ_max(D(q))` over the box: the coefficient a robust filter
    /// needs to dominate the inertia term.
    HalfLambdaMaxD,
    /// `max ‖G(q)‖` over the box.
    NormG,
    /// Bounds `c_l ≤ D_h ≤ c_u`, `‖C_h‖ ≤ c_u ‖q̇‖`, `|G_h| ≤ c_u` for the
    /// reduced dynamics of the given constraint coordinate.
    DHBounds(&'a KinematicBarrier),
}

impl BoundQuantity<'_> {
    pub fn key_name(&self) -> &'static str {
        match self {
            BoundQuantity::HalfLambdaMaxD => "half_lambda_max_d",
            BoundQuantity::NormG => "norm_g",
            BoundQuantity::DHBounds(_) => "d_h_bounds",
        }
    }
}

/// Result of [`bound_estimator`]. `c_l` is only present for `DHBounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub quantity: String,
    pub factor: f64,
    pub samples: usize,
    /// Fraction of samples where the quantity was well defined; below 1
    /// means the constraint coordinate lost actuation coupling (or its
    /// gradient vanished) somewhere in the box.
    pub valid_fraction: f64,
    pub c_l: Option<f64>,
    pub c_u: f64,
}

impl BoundReport {
    pub fn value(&self) -> f64 {
        self.c_u
    }

    pub fn warning(&self) -> Option<String> {
        if self.valid_fraction < 1.0 {
            Some(format!(
                "{}: quantity only defined on {:.1}% of sampled box points; bounds cover that subset",
                self.quantity,
                self.valid_fraction * 100.0
            ))
        } else {
            None
        }
    }
}

/// Estimate a bound by scanning `≥ 10⁴` low-discrepancy samples of the box
/// and applying the safety factor (`≥ 1`): maxima are multiplied by it,
/// the `c_l` minimum is divided by it.
pub fn bound_estimator(
    model: &RobotModel,
    bx: &StateBox,
    quantity: BoundQuantity,
    factor: f64,
    samples: usize,
) -> Result<BoundReport, OracleError> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(OracleError::FactorBelowOne(factor));
    }
    if bx.dim() != model.k() || !bx.is_nondegenerate() {
        return Err(OracleError::BadBox);
    }
    let n = samples.max(MIN_BOUND_SAMPLES);
    let mut seq = R2Sequence::new(2 * model.k());

    let mut report = BoundReport {
        quantity: quantity.key_name().to_string(),
        factor,
        samples: n,
        valid_fraction: 1.0,
        c_l: None,
        c_u: f64::NAN,
    };

    match quantity {
        BoundQuantity::HalfLambdaMaxD => {
            let mut max = f64::NEG_INFINITY;
            for _ in 0..n {
                let s = bx.lerp(&seq.next_point());
                let d = model.mass_matrix(&s.q).map_err(BarrierError::from)?;
                let lam = d.symmetric_eigenvalues().max();
                max = max.max(lam);
            }
            report.c_u = factor * 0.5 * max;
        }
        BoundQuantity::NormG => {
            let mut max = f64::NEG_INFINITY;
            for _ in 0..n {
                let s = bx.lerp(&seq.next_point());
                let g = model.gravity_vector(&s.q).map_err(BarrierError::from)?;
                max = max.max(g.norm());
            }
            report.c_u = factor * max;
        }
        BoundQuantity::DHBounds(kin) => {
            let mut d_min = f64::INFINITY;
            let mut d_max = f64::NEG_INFINITY;
            let mut c_ratio_max: f64 = 0.0;
            let mut g_max: f64 = 0.0;
            let mut valid = 0usize;
            for _ in 0..n {
                let s = bx.lerp(&seq.next_point());
                let Some(terms) = reduced_terms(kin, &s)? else {
                    continue;
                };
                // Coupling check: the input must act on the constraint
                // coordinate with a non-negligible share of its authority.
                let jh = kin.grad(&s.q)?;
                let raw = &terms.b_h / terms.d_h;
                let d = model.mass_matrix(&s.q).map_err(BarrierError::from)?;
                let b = model.actuation_matrix(&s.q);
                let dinv_b = d.lu().solve(&b).ok_or(BarrierError::from(
                    crate::models::ModelError::SingularInertia,
                ))?;
                if raw.norm() <= 1e-3 * jh.norm() * dinv_b.norm() {
                    continue;
                }
                valid += 1;
                d_min = d_min.min(terms.d_h);
                d_max = d_max.max(terms.d_h);
                g_max = g_max.max(terms.g_h.abs());
                let speed = s.qdot.norm();
                if speed > 1e-9 {
                    c_ratio_max = c_ratio_max.max(terms.c_h.norm() / speed);
                }
            }
            if valid == 0 {
                return Err(OracleError::BadBox);
            }
            report.valid_fraction = valid as f64 / n as f64;
            report.c_l = Some(d_min / factor);
            report.c_u = factor * d_max.max(c_ratio_max).max(g_max);
        }
    }
    Ok(report)
}

fn cache_key(
    model: &RobotModel,
    bx: &StateBox,
    quantity: &BoundQuantity,
    factor: f64,
    samples: usize,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("{model:?}").as_bytes());
    hasher.update(bx.key_string().as_bytes());
    hasher.update(quantity.key_name().as_bytes());
    if let BoundQuantity::DHBounds(kin) = quantity {
        hasher.update(format!("{:?}", kin.descriptor()).as_bytes());
    }
    hasher.update(format!("|{factor}|{samples}").as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Like [`bound_estimator`], but consults a plain-text sidecar first: one
/// `key<TAB>json` line per cached report. Estimating over 10⁴ box points
/// is cheap but not free, and sweeps ask for the same bounds repeatedly.
pub fn bound_estimator_cached(
    model: &RobotModel,
    bx: &StateBox,
    quantity: BoundQuantity,
    factor: f64,
    samples: usize,
    cache_path: &Path,
) -> Result<BoundReport, OracleError> {
    let key = cache_key(model, bx, &quantity, factor, samples);
    if cache_path.exists() {
        let text = std::fs::read_to_string(cache_path)?;
        for line in text.lines() {
            if let Some((k, json)) = line.split_once('\t') {
                if k == key {
                    return Ok(serde_json::from_str(json)?);
                }
            }
        }
    }
    let report = bound_estimator(model, bx, quantity, factor, samples)?;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(cache_path)?;
    writeln!(file, "{key}\t{}", serde_json::to_string(&report)?)?;
    Ok(report)
}

// ────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BarrierDescriptor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn inactive_constraint_returns_desired_input() {
        let p = HalfspaceQP::new(vecd(&[2.0, -1.0]), vecd(&[1.0, 0.0]), 1.0);
        assert_eq!(solve_single_constraint_qp(&p).unwrap(), p.u_des);
    }

    #[test]
    fn active_constraint_projects_onto_boundary() {
        let p = HalfspaceQP::new(vecd(&[0.0, 0.0]), vecd(&[1.0, 0.0]), 1.0);
        let u = solve_single_constraint_qp(&p).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15);
        assert_eq!(u[1], 0.0);
    }

    #[test]
    fn zero_normal_with_positive_offset_is_infeasible() {
        let p = HalfspaceQP::new(vecd(&[1.0]), vecd(&[0.0]), 0.5);
        assert!(matches!(
            solve_single_constraint_qp(&p),
            Err(OracleError::Infeasible { .. })
        ));
        // ...but harmless when the offset is non-positive.
        let ok = HalfspaceQP::new(vecd(&[1.0]), vecd(&[0.0]), -0.5);
        assert_eq!(solve_single_constraint_qp(&ok).unwrap(), ok.u_des);
    }

    #[test]
    fn no_sampled_feasible_neighbor_beats_the_kkt_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let m = rng.gen_range(1..=3);
            let u_des = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
            let a = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            if a.norm() < 1e-6 {
                continue;
            }
            let b = rng.gen_range(-2.0..2.0);
            let p = HalfspaceQP::new(u_des, a, b);
            let u = solve_single_constraint_qp(&p).unwrap();
            assert!(perturbation_optimality(&p, &u, 1000, 1e-3, &mut rng));
        }
    }

    #[test]
    fn perturbation_test_rejects_a_suboptimal_point() {
        let p = HalfspaceQP::new(vecd(&[0.0, 0.0]), vecd(&[1.0, 0.0]), 1.0);
        let bad = vecd(&[1.5, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        assert!(!perturbation_optimality(&p, &bad, 1000, 1e-1, &mut rng));
    }

    #[test]
    fn grid_search_hits_the_projection_example() {
        // Grid centered at u_des with the boundary at an exact multiple of
        // the spacing: the optimum is a grid point.
        let p = HalfspaceQP::new(vecd(&[0.0, 0.0]), vecd(&[1.0, 0.0]), 1.0);
        let radius = 2.0;
        let resolution = 0.25;
        let g = grid_search_qp(&p, radius, resolution).unwrap();
        let u = solve_single_constraint_qp(&p).unwrap();
        let gap = p.objective(&g) - p.objective(&u);
        assert!(gap >= -1e-15);
        assert!(gap <= resolution * resolution * 2.0);
    }

    #[test]
    fn grid_search_is_exact_when_the_center_is_feasible() {
        let p = HalfspaceQP::new(vecd(&[0.3, -0.4, 1.0]), vecd(&[0.0, 0.0, 1.0]), -5.0);
        let g = grid_search_qp(&p, 1.0, 0.1).unwrap();
        assert_eq!(g, p.u_des);
        assert!(p.objective(&g) <= 0.1 * 0.1 * 3.0);
    }

    #[test]
    fn grid_search_reports_infeasible_at_resolution() {
        let p = HalfspaceQP::new(vecd(&[0.0]), vecd(&[1.0]), 10.0);
        assert!(matches!(
            grid_search_qp(&p, 1.0, 0.25),
            Err(OracleError::InfeasibleAtResolution { .. })
        ));
    }

    #[test]
    fn grid_search_rejects_high_dimensional_inputs() {
        let p = HalfspaceQP::new(DVector::zeros(4), DVector::zeros(4), -1.0);
        assert!(matches!(
            grid_search_qp(&p, 1.0, 0.5),
            Err(OracleError::TooManyInputs(4))
        ));
    }

    #[test]
    fn grid_and_kkt_solvers_agree_across_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let radius = 1.0;
        let resolution = 0.05;
        for _ in 0..1000 {
            let m = rng.gen_range(1..=3);
            let u_des = DVector::from_fn(m, |_, _| rng.gen_range(-0.2..0.2));
            let mut a = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            while a.norm() < 0.1 {
                a = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            }
            // Place the optimum within half the search radius so a feasible
            // grid point is guaranteed to sit near it.
            let depth = rng.gen_range(-0.45 * radius..0.45 * radius);
            let b = a.dot(&u_des) + depth * a.norm();
            let p = HalfspaceQP::new(u_des, a, b);
            let u = solve_single_constraint_qp(&p).unwrap();
            let g = grid_search_qp(&p, radius, resolution).unwrap();
            let gap = p.objective(&g) - p.objective(&u);
            assert!(gap >= -1e-12, "grid beat the closed form: gap {gap}");
            assert!(
                gap <= 2.0 * resolution * radius,
                "gap {gap} exceeds the grid bound"
            );
        }
    }

    #[test]
    fn constant_inertia_bound_is_exact_at_factor_one() {
        let model = RobotModel::double_integrator();
        let report = bound_estimator(
            &model,
            &model.valid_box(),
            BoundQuantity::HalfLambdaMaxD,
            1.0,
            10_000,
        )
        .unwrap();
        assert_eq!(report.c_u, 0.5);
        assert_eq!(report.valid_fraction, 1.0);
        assert!(report.c_l.is_none());
    }

    #[test]
    fn gravity_bound_dominates_fresh_samples() {
        let model = RobotModel::two_link_arm();
        let bx = model.valid_box();
        let report = bound_estimator(
            &model,
            &bx,
            BoundQuantity::NormG,
            DEFAULT_BOUND_FACTOR,
            10_000,
        )
        .unwrap();
        assert!(report.c_u > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..2000 {
            let unit: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let s = bx.lerp(&unit);
            assert!(model.gravity_vector(&s.q).unwrap().norm() <= report.c_u);
        }
    }

    #[test]
    fn inertia_bound_dominates_fresh_samples() {
        let model = RobotModel::two_link_arm();
        let bx = model.valid_box();
        let report =
            bound_estimator(&model, &bx, BoundQuantity::HalfLambdaMaxD, 1.1, 10_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..2000 {
            let unit: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let s = bx.lerp(&unit);
            let lam = model
                .mass_matrix(&s.q)
                .unwrap()
                .symmetric_eigenvalues()
                .max();
            assert!(0.5 * lam <= report.c_u);
        }
    }

    #[test]
    fn reduced_bounds_cover_a_box_clear_of_degeneracies() {
        let model = RobotModel::cart_pole();
        let kin = KinematicBarrier::new(
            model.clone(),
            BarrierDescriptor::AngleBox {
                width: std::f64::consts::PI / 6.0,
            },
        )
        .unwrap();
        let pi = std::f64::consts::PI;
        // One-sided band above upright: the gradient never vanishes here.
        let bx = StateBox::new(
            vec![-1.0, pi + 0.1],
            vec![1.0, pi + pi / 6.0],
            vec![-2.0, -2.0],
            vec![2.0, 2.0],
        );
        let report = bound_estimator(
            &model,
            &bx,
            BoundQuantity::DHBounds(&kin),
            DEFAULT_BOUND_FACTOR,
            10_000,
        )
        .unwrap();
        assert_eq!(report.valid_fraction, 1.0);
        let c_l = report.c_l.unwrap();
        assert!(c_l > 0.0 && c_l < report.c_u);
        // Fresh samples stay inside the reported range.
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for _ in 0..1000 {
            let unit: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let s = bx.lerp(&unit);
            let t = reduced_terms(&kin, &s).unwrap().unwrap();
            assert!(t.d_h >= c_l && t.d_h <= report.c_u);
            assert!(t.g_h.abs() <= report.c_u);
            let speed = s.qdot.norm();
            if speed > 1e-9 {
                assert!(t.c_h.norm() <= report.c_u * speed);
            }
        }
    }

    #[test]
    fn coupling_loss_inside_the_box_reports_partial_coverage() {
        // Around θ = π/2 the pole is horizontal and cart force cannot move
        // the angle: D⁻¹B becomes orthogonal to the constraint gradient.
        let model = RobotModel::cart_pole();
        let kin = KinematicBarrier::new(model.clone(), BarrierDescriptor::AngleBox { width: 2.0 })
            .unwrap();
        let half = std::f64::consts::FRAC_PI_2;
        let bx = StateBox::new(
            vec![-1.0, half - 0.01],
            vec![1.0, half + 0.01],
            vec![-2.0, -2.0],
            vec![2.0, 2.0],
        );
        let report = bound_estimator(
            &model,
            &bx,
            BoundQuantity::DHBounds(&kin),
            DEFAULT_BOUND_FACTOR,
            10_000,
        )
        .unwrap();
        assert!(report.valid_fraction < 1.0);
        assert!(report.warning().is_some());
    }

    #[test]
    fn bound_cache_round_trips_and_hits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bounds.cache");
        let model = RobotModel::two_link_arm();
        let bx = model.valid_box();
        let first = bound_estimator_cached(
            &model,
            &bx,
            BoundQuantity::NormG,
            DEFAULT_BOUND_FACTOR,
            10_000,
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let second = bound_estimator_cached(
            &model,
            &bx,
            BoundQuantity::NormG,
            DEFAULT_BOUND_FACTOR,
            10_000,
            &path,
        )
        .unwrap();
        assert_eq!(first, second);
        // Still a single line: the second call was a cache hit.
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn low_discrepancy_sequence_fills_the_cube_evenly() {
        let mut seq = R2Sequence::new(2);
        let n = 4096;
        let mut counts = [[0usize; 4]; 4];
        for _ in 0..n {
            let p = seq.next_point();
            let i = ((p[0] * 4.0) as usize).min(3);
            let j = ((p[1] * 4.0) as usize).min(3);
            counts[i][j] += 1;
        }
        let expected = n / 16;
        for row in &counts {
            for &c in row {
                assert!(
                    (c as f64 - expected as f64).abs() < expected as f64 * 0.25,
                    "cell count {c} far from {expected}"
                );
            }
        }
    }
}
