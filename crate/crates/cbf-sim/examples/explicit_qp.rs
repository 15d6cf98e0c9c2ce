//! The projection at the heart of every filter in this crate.
//!
//! Each filter builds one affine constraint `L_f + L_g u + α(h) ≥ 0` and
//! projects the desired input onto it. With a single constraint the QP has
//! a closed form, and `explicit_cbf_qp` evaluates it directly; this example
//! shows both branches and cross-checks the active one against the
//! standalone halfspace solver and a brute-force grid search.

use cbf_sim::barrier::ClassKappa;
use cbf_sim::filter::explicit_cbf_qp;
use cbf_sim::qp_oracle::{
    grid_search_qp, perturbation_optimality, solve_single_constraint_qp, HalfspaceQP,
};
use nalgebra::{DVector, RowDVector};

fn main() {
    let alpha = ClassKappa::linear(2.0).unwrap();
    let lg = RowDVector::from_row_slice(&[1.0, -0.5]);

    // Safe side: the desired input already satisfies the constraint, so the
    // filter is a no-op and reports the slack it saw.
    let u_des = DVector::from_row_slice(&[0.3, -0.2]);
    let out = explicit_cbf_qp(0.1, &lg, 0.5, &alpha, &u_des).unwrap();
    println!("inactive branch:");
    println!("  psi        = {:+.4}  (already feasible)", out.psi);
    println!("  command    = {:?}", out.command.as_slice());
    println!("  intervened = {}", out.intervened);
    assert_eq!(out.command, u_des);

    // Unsafe side: h < 0 would be reached, so the command is the Euclidean
    // projection of u_des onto the constraint boundary.
    let u_des = DVector::from_row_slice(&[-2.0, 1.5]);
    let out = explicit_cbf_qp(-0.3, &lg, -0.1, &alpha, &u_des).unwrap();
    println!("\nactive branch:");
    println!("  psi        = {:+.4}  (violated by u_des)", out.psi);
    println!(
        "  command    = [{:+.6}, {:+.6}]",
        out.command[0], out.command[1]
    );
    println!(
        "  residual   = {:+.2e} (sits on the boundary)",
        out.constraint_residual
    );

    // The same problem phrased as min ‖u − u_des‖² s.t. aᵀu ≥ b and handed
    // to the independent KKT solver.
    let rhs = -(-0.3 + alpha.apply(-0.1));
    let qp = HalfspaceQP::new(u_des.clone(), lg.transpose(), rhs);
    let oracle = solve_single_constraint_qp(&qp).unwrap();
    let gap = (&out.command - &oracle).abs().max();
    println!("\ncross-checks:");
    println!("  KKT solver gap      = {gap:.2e}");

    let grid = grid_search_qp(&qp, 4.0, 0.004).unwrap();
    println!(
        "  grid search gap     = {:.2e} (grid spacing 4e-3)",
        (&out.command - &grid).abs().max()
    );

    // First-order optimality: random feasible perturbations never improve
    // the objective.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
    let stationary = perturbation_optimality(&qp, &out.command, 2000, 1e-6, &mut rng);
    println!("  perturbation check  = {stationary}");
}
