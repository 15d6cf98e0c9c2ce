//! Central-difference helpers.
//!
//! These back the independent numerical oracles used by the test and
//! verification suites (finite-difference Jacobians, gradients, and
//! directional derivatives), and the one production use the filters make of
//! differencing: the reduced-inertia rate term of the underactuated filter.

use nalgebra::{DMatrix, DVector};

/// Central-difference gradient of a scalar field, step `h` per coordinate.
pub fn gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n, |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector field, step `h` per coordinate.
pub fn jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), n);
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(i, &col);
    }
    jac
}

/// Central-difference Hessian of a scalar field (symmetrised), step `h`.
pub fn hessian(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut xpp = x.clone();
            let mut xpm = x.clone();
            let mut xmp = x.clone();
            let mut xmm = x.clone();
            xpp[i] += h;
            xpp[j] += h;
            xpm[i] += h;
            xpm[j] -= h;
            xmp[i] -= h;
            xmp[j] += h;
            xmm[i] -= h;
            xmm[j] -= h;
            hess[(i, j)] = (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h * h);
        }
    }
    // Average out the asymmetry left by rounding.
    let ht = hess.transpose();
    (hess + ht) * 0.5
}

/// Central-difference directional derivative of a matrix field along `dir`.
pub fn matrix_directional(
    f: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let xp = x + dir * h;
    let xm = x - dir * h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Central-difference derivative of a scalar field along `dir`.
pub fn scalar_directional(
    f: impl Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    h: f64,
) -> f64 {
    let xp = x + dir * h;
    let xm = x - dir * h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}
