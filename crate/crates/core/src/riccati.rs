//! Continuous-limit dynamics: the matrix Riccati equation
//! `dA/dt = G - D A - A E - A F A`, its linearization through `A = W U^-1`
//! with `dW/dt = -D W + G U`, `dU/dt = F W + E U`, and the closed-form
//! solutions used as oracles.
//!
//! Units ledger: the closed forms [`analytic_spin_var`] and
//! [`analytic_b_var`] are stated in variance units (`Var = gamma / 2`). The
//! magnetometer system of [`magnetometer_riccati`] propagates the
//! covariance-matrix block in gamma units (initial condition
//! `diag(2 Var(B_0), 1)`); conversion between the two conventions happens
//! explicitly at this module's boundary via [`gamma_to_var`] /
//! [`var_to_gamma`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `Var = gamma / 2`.
pub fn gamma_to_var(gamma: f64) -> f64 {
    0.5 * gamma
}

/// `gamma = 2 Var`.
pub fn var_to_gamma(var: f64) -> f64 {
    2.0 * var
}

/// Coefficient matrices of `dA/dt = G - D A - A E - A F A` for a `d x d`
/// tracked covariance block.
#[derive(Debug, Clone)]
pub struct RiccatiSystem {
    pub g: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

impl RiccatiSystem {
    pub fn new(g: DMatrix<f64>, d: DMatrix<f64>, e: DMatrix<f64>, f: DMatrix<f64>) -> Result<Self> {
        let n = g.nrows();
        for m in [&g, &d, &e, &f] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, got: m.nrows() });
            }
        }
        Ok(Self { g, d, e, f })
    }

    /// Dimension of the tracked block.
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// All-zero system of the given dimension (`A(t) = A0`).
    pub fn zero(dim: usize) -> Self {
        Self {
            g: DMatrix::zeros(dim, dim),
            d: DMatrix::zeros(dim, dim),
            e: DMatrix::zeros(dim, dim),
            f: DMatrix::zeros(dim, dim),
        }
    }
}

/// Scalar spin-squeezing system in variance units: `A = Var(p_at)`,
/// `dA/dt = -2 kappa^2 A^2`.
pub fn spin_squeezing_riccati(kappa_sq: f64) -> RiccatiSystem {
    RiccatiSystem {
        g: DMatrix::zeros(1, 1),
        d: DMatrix::zeros(1, 1),
        e: DMatrix::zeros(1, 1),
        f: DMatrix::from_element(1, 1, 2.0 * kappa_sq),
    }
}

/// Scalar-magnetometry system for the block `y = (B_y, p_at)` in gamma
/// units: `G = 0`, `D = [[0, 0], [mu, 0]]`, `E = D^T`, `F = diag(0,
/// kappa^2)`. Integrate from `A0 = diag(2 Var(B_0), 1)`; then
/// `Var(B)(t) = A(0,0) / 2`.
pub fn magnetometer_riccati(kappa_sq: f64, mu: f64) -> RiccatiSystem {
    let mut d = DMatrix::zeros(2, 2);
    d[(1, 0)] = mu;
    let e = d.transpose();
    let mut f = DMatrix::zeros(2, 2);
    f[(1, 1)] = kappa_sq;
    RiccatiSystem { g: DMatrix::zeros(2, 2), d, e, f }
}

/// Right-hand side `G - D A - A E - A F A`.
pub fn riccati_rhs(a: &DMatrix<f64>, sys: &RiccatiSystem) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.nrows() });
    }
    Ok(&sys.g - &sys.d * a - a * &sys.e - a * &sys.f * a)
}

/// Integration route for [`integrate_riccati`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrationMethod {
    /// Classical fixed-step Runge-Kutta on the nonlinear equation.
    Rk4,
    /// Fixed-step integration of the linear `(W, U)` pair, returning
    /// `W U^-1`.
    WU,
}

/// Default step size such that `kappa^2 * dt <= 1e-3`.
pub fn default_dt(kappa_sq: f64) -> f64 {
    1e-3 / kappa_sq
}

/// Propagate `A0` to `t_end` with fixed step `dt` (rounded so an integer
/// number of steps lands exactly on `t_end`).
pub fn integrate_riccati(
    sys: &RiccatiSystem,
    a0: &DMatrix<f64>,
    t_end: f64,
    dt: f64,
    method: IntegrationMethod,
) -> Result<DMatrix<f64>> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let n = sys.dim();
    if a0.nrows() != n || a0.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a0.nrows() });
    }
    if t_end < 0.0 {
        return Err(Error::InvalidArgument("t_end must be nonnegative".into()));
    }
    if t_end == 0.0 {
        return Ok(a0.clone());
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    let h = t_end / steps as f64;
    match method {
        IntegrationMethod::Rk4 => integrate_rk4(sys, a0, steps, h),
        IntegrationMethod::WU => integrate_wu(sys, a0, steps, h),
    }
}

fn integrate_rk4(
    sys: &RiccatiSystem,
    a0: &DMatrix<f64>,
    steps: usize,
    h: f64,
) -> Result<DMatrix<f64>> {
    let mut a = a0.clone();
    for _ in 0..steps {
        let k1 = riccati_rhs(&a, sys)?;
        let k2 = riccati_rhs(&(&a + &k1 * (h / 2.0)), sys)?;
        let k3 = riccati_rhs(&(&a + &k2 * (h / 2.0)), sys)?;
        let k4 = riccati_rhs(&(&a + &k3 * h), sys)?;
        a += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence("rk4 state became non-finite".into()));
        }
    }
    Ok(a)
}

fn integrate_wu(
    sys: &RiccatiSystem,
    a0: &DMatrix<f64>,
    steps: usize,
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let mut w = a0.clone();
    let mut u = DMatrix::identity(n, n);
    let rhs = |w: &DMatrix<f64>, u: &DMatrix<f64>| -> (DMatrix<f64>, DMatrix<f64>) {
        (-(&sys.d) * w + &sys.g * u, &sys.f * w + &sys.e * u)
    };
    for _ in 0..steps {
        let (kw1, ku1) = rhs(&w, &u);
        let (kw2, ku2) = rhs(&(&w + &kw1 * (h / 2.0)), &(&u + &ku1 * (h / 2.0)));
        let (kw3, ku3) = rhs(&(&w + &kw2 * (h / 2.0)), &(&u + &ku2 * (h / 2.0)));
        let (kw4, ku4) = rhs(&(&w + &kw3 * h), &(&u + &ku3 * h));
        w += (kw1 + kw2 * 2.0 + kw3 * 2.0 + kw4) * (h / 6.0);
        u += (ku1 + ku2 * 2.0 + ku3 * 2.0 + ku4) * (h / 6.0);
        if !(w.iter().all(|v| v.is_finite()) && u.iter().all(|v| v.is_finite())) {
            return Err(Error::Divergence("W/U state became non-finite".into()));
        }
    }
    let det = u.determinant();
    let inv = u.try_inverse().ok_or(Error::LinearizationBreakdown(det.abs()))?;
    Ok(w * inv)
}

/// Variances of one noiselessly probed ensemble, in variance units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinVariances {
    /// Squeezed quadrature: `Var(p_at) = 1 / (2 kappa^2 t + 1 / var0)`.
    pub p: f64,
    /// Antisqueezed companion, from a minimum-uncertainty initial state:
    /// `Var(x_at) = kappa^2 t / 2 + 1 / (4 var0)`.
    pub x: f64,
}

/// Closed-form spin squeezing under noiseless probing.
pub fn analytic_spin_var(kappa_sq: f64, t: f64, var0: f64) -> SpinVariances {
    SpinVariances {
        p: 1.0 / (2.0 * kappa_sq * t + 1.0 / var0),
        x: 0.5 * kappa_sq * t + 1.0 / (4.0 * var0),
    }
}

/// Closed-form variance of the probed field component, in variance units:
///
/// `Var(B)(t) = Var(B0) (k2 t + 1) / ((1/6) k2^2 mu^2 Var(B0) t^4
///   + (2/3) k2 mu^2 Var(B0) t^3 + k2 t + 1)`,
/// with large-`t` asymptote `6 / (k2 mu^2 t^3)`.
pub fn analytic_b_var(kappa_sq: f64, mu: f64, t: f64, var_b0: f64) -> f64 {
    let k2 = kappa_sq;
    let num = var_b0 * (k2 * t + 1.0);
    let den = k2 * k2 * mu * mu * var_b0 * t.powi(4) / 6.0
        + 2.0 / 3.0 * k2 * mu * mu * var_b0 * t.powi(3)
        + k2 * t
        + 1.0;
    num / den
}
