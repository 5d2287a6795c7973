//! Phase-space layer: Gaussian Wigner evaluation, conditioning on a
//! single-photon detection event (which leaves the Gaussian family), and
//! grid diagnostics.
//!
//! In the `gamma = 2 Var` convention the vacuum Wigner function is
//! `exp(-|xi|^2) / pi` and a single-photon detection applies the kernel
//! `W_1(d) = (1/pi) exp(-|d|^2) (2 |d|^2 - 1)`.
//!
//! The conditioned Wigner function is evaluated in closed form (the integral
//! of a Gaussian times a quadratic polynomial) on a grid over the kept mode;
//! direct two-dimensional quadrature over the measured mode is kept as an
//! independent oracle for that closed form.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::gstate::GaussianState;

/// Fraction of probability mass allowed on the outermost grid cells before
/// the grid is rejected as too small.
pub const BOUNDARY_MASS_TOL: f64 = 1e-4;
/// Measurement probabilities below this are treated as "the detector never
/// clicks" and conditioning fails.
pub const MIN_MEASUREMENT_PROBABILITY: f64 = 1e-10;

/// Grid request: half-width in standard deviations of the kept mode, and
/// points per axis.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub half_width_sigmas: f64,
    pub points_per_axis: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { half_width_sigmas: 6.0, points_per_axis: 256 }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if !(self.half_width_sigmas > 0.0) {
            return Err(Error::InvalidArgument("grid half-width must be positive".into()));
        }
        if self.points_per_axis < 16 {
            return Err(Error::InvalidArgument("grid needs at least 16 points per axis".into()));
        }
        Ok(())
    }
}

/// Wigner function sampled on a uniform rectangular `(x, p)` grid.
#[derive(Debug, Clone)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    /// Row-major over `(x index, p index)`.
    pub values: Vec<f64>,
    pub cell_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAxis {
    X,
    P,
}

impl WignerGrid {
    pub fn value(&self, ix: usize, ip: usize) -> f64 {
        self.values[ix * self.p_axis.len() + ip]
    }

    /// Riemann-sum total mass.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume
    }

    fn boundary_abs_mass(&self) -> f64 {
        let (nx, np) = (self.x_axis.len(), self.p_axis.len());
        let mut m = 0.0;
        for ix in 0..nx {
            for ip in 0..np {
                if ix == 0 || ix == nx - 1 || ip == 0 || ip == np - 1 {
                    m += self.value(ix, ip).abs();
                }
            }
        }
        m * self.cell_volume
    }
}

/// Evaluate the Gaussian Wigner function
/// `W(xi) = pi^-n det(gamma)^{-1/2} exp(-(xi - m)^T gamma^-1 (xi - m))`.
pub fn eval_gaussian_wigner(state: &GaussianState, xi: &[f64]) -> Result<f64> {
    let d = state.layout().dim();
    if xi.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: xi.len() });
    }
    let n = state.n_modes();
    let chol = state
        .cov()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidState("covariance is singular".into()))?;
    let det = chol.determinant();
    let diff = DVector::from_iterator(d, xi.iter().zip(state.mean().iter()).map(|(a, b)| a - b));
    let quad = diff.dot(&chol.solve(&diff));
    Ok((-quad).exp() / (std::f64::consts::PI.powi(n as i32) * det.sqrt()))
}

/// Single-photon detection kernel at phase-space point `d`.
pub fn single_photon_kernel(dx: f64, dp: f64) -> f64 {
    let r2 = dx * dx + dp * dp;
    (2.0 * r2 - 1.0) * (-r2).exp() / std::f64::consts::PI
}

/// Probability of registering exactly one photon in `measured_mode`,
/// `2 pi int W W_1`, equal to the Fock-state weight p(1) of that mode's
/// reduced state.
pub fn single_photon_probability(state: &GaussianState, measured_mode: &str) -> Result<f64> {
    let mode = state.layout().require(measured_mode)?;
    let (xq, pq) = state.layout().quad(mode);
    let b = Matrix2::new(
        state.cov()[(xq, xq)],
        state.cov()[(xq, pq)],
        state.cov()[(pq, xq)],
        state.cov()[(pq, pq)],
    );
    let mb = Vector2::new(state.mean()[xq], state.mean()[pq]);
    let b_inv = b
        .try_inverse()
        .ok_or_else(|| Error::InvalidState("measured-mode covariance singular".into()))?;
    let norm = 1.0 / (std::f64::consts::PI * b.determinant().sqrt());
    let overlap = gaussian_times_kernel_integral(&b_inv, &mb, norm);
    Ok(std::f64::consts::TAU * overlap)
}

/// Closed form of `int exp(-(u - mu0)^T P (u - mu0)) * N * W_1(u) du` for a
/// 2x2 precision `P` (inverse covariance) and prefactor `N`.
fn gaussian_times_kernel_integral(p: &Matrix2<f64>, mu0: &Vector2<f64>, prefactor: f64) -> f64 {
    // exponent: -u^T M u + b^T u + c with M = P + I.
    let m = p + Matrix2::identity();
    let b = 2.0 * p * mu0;
    let c = -(mu0.transpose() * p * mu0)[(0, 0)];
    let m_inv = m.try_inverse().expect("P + I is positive definite");
    let mu = 0.5 * (m_inv * b);
    let quad_mean = 2.0 * mu.norm_squared() + m_inv.trace() - 1.0;
    let gauss = (c + (mu.transpose() * m * mu)[(0, 0)]).exp() * std::f64::consts::PI
        / m.determinant().sqrt();
    prefactor / std::f64::consts::PI * gauss * quad_mean
}

struct TwoModeSplit {
    /// Precision matrix blocks of the joint covariance, ordered (kept,
    /// measured).
    paa: Matrix2<f64>,
    pab: Matrix2<f64>,
    pbb: Matrix2<f64>,
    mean_kept: Vector2<f64>,
    mean_meas: Vector2<f64>,
    norm: f64,
}

fn split_two_modes(state: &GaussianState, measured_mode: &str) -> Result<TwoModeSplit> {
    if state.n_modes() != 2 {
        return Err(Error::InvalidArgument(format!(
            "single-photon conditioning needs exactly 2 modes, state has {}",
            state.n_modes()
        )));
    }
    let meas = state.layout().require(measured_mode)?;
    let keep = 1 - meas;
    let (kx, _) = state.layout().quad(keep);
    let (mx, _) = state.layout().quad(meas);
    let idx = [kx, kx + 1, mx, mx + 1];
    let reordered = DMatrix::from_fn(4, 4, |i, j| state.cov()[(idx[i], idx[j])]);
    let chol = reordered
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidState("covariance is singular".into()))?;
    let det = chol.determinant();
    let p = chol.inverse();
    Ok(TwoModeSplit {
        paa: p.fixed_view::<2, 2>(0, 0).into(),
        pab: p.fixed_view::<2, 2>(0, 2).into(),
        pbb: p.fixed_view::<2, 2>(2, 2).into(),
        mean_kept: Vector2::new(state.mean()[idx[0]], state.mean()[idx[1]]),
        mean_meas: Vector2::new(state.mean()[idx[2]], state.mean()[idx[3]]),
        norm: 1.0 / (std::f64::consts::PI.powi(2) * det.sqrt()),
    })
}

impl TwoModeSplit {
    /// Unnormalized `int W(a, d) W_1(d) d^2 d` at kept-mode point `a`.
    fn photon_overlap_at(&self, a: Vector2<f64>) -> f64 {
        let da = a - self.mean_kept;
        // In u = d: -u^T M u + b^T u + c with M = Pbb + I.
        let m = self.pbb + Matrix2::identity();
        let b = 2.0 * (self.pbb * self.mean_meas) - 2.0 * (self.pab.transpose() * da);
        let c = -(da.transpose() * self.paa * da)[(0, 0)]
            + 2.0 * (da.transpose() * self.pab * self.mean_meas)[(0, 0)]
            - (self.mean_meas.transpose() * self.pbb * self.mean_meas)[(0, 0)];
        let m_inv = m.try_inverse().expect("Pbb + I is positive definite");
        let mu = 0.5 * (m_inv * b);
        let quad_mean = 2.0 * mu.norm_squared() + m_inv.trace() - 1.0;
        self.norm / std::f64::consts::PI
            * ((c + (mu.transpose() * m * mu)[(0, 0)]).exp() * std::f64::consts::PI
                / m.determinant().sqrt())
            * quad_mean
    }
}

fn kept_axes(state: &GaussianState, measured_mode: &str, grid: &GridSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let meas = state.layout().require(measured_mode)?;
    let keep = 1 - meas;
    let (kx, kp) = state.layout().quad(keep);
    let n = grid.points_per_axis;
    let axis = |center: f64, sigma: f64| -> Vec<f64> {
        let half = grid.half_width_sigmas * sigma;
        (0..n).map(|i| center - half + 2.0 * half * i as f64 / (n - 1) as f64).collect()
    };
    let sx = (state.cov()[(kx, kx)] / 2.0).sqrt();
    let sp = (state.cov()[(kp, kp)] / 2.0).sqrt();
    Ok((axis(state.mean()[kx], sx), axis(state.mean()[kp], sp)))
}

/// Condition a two-mode Gaussian state on a single-photon detection in
/// `measured_mode`. Returns the (generally non-Gaussian, possibly negative)
/// normalized Wigner function of the kept mode on a grid, and the
/// measurement probability.
///
/// This is the closed-form evaluation path; see
/// [`condition_single_photon_quadrature`] for the independent grid-quadrature
/// oracle.
pub fn condition_single_photon(
    state: &GaussianState,
    measured_mode: &str,
    grid: &GridSpec,
) -> Result<(WignerGrid, f64)> {
    grid.validate()?;
    let split = split_two_modes(state, measured_mode)?;
    let p_meas = single_photon_probability(state, measured_mode)?;
    if p_meas < MIN_MEASUREMENT_PROBABILITY {
        return Err(Error::NumericalFailure(format!(
            "single-photon probability {p_meas:.3e} is consistent with zero; conditioning failed"
        )));
    }
    let raw_norm = p_meas / std::f64::consts::TAU;
    let (x_axis, p_axis) = kept_axes(state, measured_mode, grid)?;
    let n = grid.points_per_axis;
    let mut values = Vec::with_capacity(n * n);
    for &x in &x_axis {
        for &p in &p_axis {
            values.push(split.photon_overlap_at(Vector2::new(x, p)) / raw_norm);
        }
    }
    let cell_volume = (x_axis[1] - x_axis[0]) * (p_axis[1] - p_axis[0]);
    let out = WignerGrid { x_axis, p_axis, values, cell_volume };
    let boundary = out.boundary_abs_mass();
    if boundary > BOUNDARY_MASS_TOL {
        return Err(Error::GridCoverage(boundary));
    }
    Ok((out, p_meas))
}

/// Independent oracle for [`condition_single_photon`]: brute-force
/// two-dimensional Riemann quadrature over the measured mode at each
/// requested kept-mode point. Returns normalized conditional Wigner values.
///
/// `quad_points` controls the quadrature resolution per axis.
pub fn condition_single_photon_quadrature(
    state: &GaussianState,
    measured_mode: &str,
    kept_points: &[[f64; 2]],
    quad_points: usize,
) -> Result<Vec<f64>> {
    let meas = state.layout().require(measured_mode)?;
    if state.n_modes() != 2 {
        return Err(Error::InvalidArgument("quadrature oracle needs exactly 2 modes".into()));
    }
    let keep = 1 - meas;
    let (mx, mp) = state.layout().quad(meas);
    let (kx, kp) = state.layout().quad(keep);
    // Quadrature grid over the measured mode: wide enough for both the
    // state's marginal and the photon kernel (unit scale).
    let sx = (state.cov()[(mx, mx)] / 2.0).sqrt().max(1.0);
    let sp = (state.cov()[(mp, mp)] / 2.0).sqrt().max(1.0);
    let (cx, cp) = (state.mean()[mx], state.mean()[mp]);
    let hx = 8.0 * sx;
    let hp = 8.0 * sp;
    let nq = quad_points;
    let step_x = 2.0 * hx / (nq - 1) as f64;
    let step_p = 2.0 * hp / (nq - 1) as f64;

    let overlap_at = |a: [f64; 2]| -> Result<f64> {
        let mut xi = vec![0.0; 4];
        xi[kx] = a[0];
        xi[kp] = a[1];
        let mut acc = 0.0;
        for i in 0..nq {
            let dx = cx - hx + step_x * i as f64;
            for j in 0..nq {
                let dp = cp - hp + step_p * j as f64;
                xi[mx] = dx;
                xi[mp] = dp;
                acc += eval_gaussian_wigner(state, &xi)? * single_photon_kernel(dx, dp);
            }
        }
        Ok(acc * step_x * step_p)
    };

    // Normalization from the quadrature path itself: the overlap of the
    // measured mode's reduced state with the kernel.
    let reduced = state.remove_mode(state.layout().label(keep))?;
    let mut raw = 0.0;
    for i in 0..nq {
        let dx = cx - hx + step_x * i as f64;
        for j in 0..nq {
            let dp = cp - hp + step_p * j as f64;
            raw += eval_gaussian_wigner(&reduced, &[dx, dp])? * single_photon_kernel(dx, dp);
        }
    }
    raw *= step_x * step_p;
    if raw.abs() < MIN_MEASUREMENT_PROBABILITY {
        return Err(Error::NumericalFailure(format!(
            "quadrature measurement probability {raw:.3e} is consistent with zero"
        )));
    }
    kept_points.iter().map(|&a| Ok(overlap_at(a)? / raw)).collect()
}

/// Condition on a Gaussian measurement kernel with the given center and
/// covariance applied to one mode of an n-mode state. The posterior is
/// Gaussian: `A' = A - C (B + K)^-1 C^T`,
/// `m' = m_a + C (B + K)^-1 (c - m_b)`; the measured mode is removed.
///
/// With `K = diag(s, 1/s)` and `s -> 0` this reproduces the homodyne
/// Schur-complement update.
pub fn condition_gaussian(
    state: &GaussianState,
    measured_mode: &str,
    kernel_center: [f64; 2],
    kernel_cov: [[f64; 2]; 2],
) -> Result<GaussianState> {
    let mode = state.layout().require(measured_mode)?;
    if state.n_modes() < 2 {
        return Err(Error::InvalidArgument("conditioning needs an unmeasured mode".into()));
    }
    let (mx, mp) = state.layout().quad(mode);
    let g = state.cov();
    let b_plus_k = Matrix2::new(
        g[(mx, mx)] + kernel_cov[0][0],
        g[(mx, mp)] + kernel_cov[0][1],
        g[(mp, mx)] + kernel_cov[1][0],
        g[(mp, mp)] + kernel_cov[1][1],
    );
    let inv = b_plus_k
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("B + kernel covariance singular".into()))?;
    let delta =
        Vector2::new(kernel_center[0] - state.mean()[mx], kernel_center[1] - state.mean()[mp]);
    let keep: Vec<usize> = (0..g.nrows()).filter(|&i| i != mx && i != mp).collect();
    let mut out = state.remove_mode_at(mode);
    {
        let oc = out.cov_mut();
        for (i, &gi) in keep.iter().enumerate() {
            let ci = Vector2::new(g[(gi, mx)], g[(gi, mp)]);
            for (j, &gj) in keep.iter().enumerate() {
                let cj = Vector2::new(g[(gj, mx)], g[(gj, mp)]);
                oc[(i, j)] -= (ci.transpose() * inv * cj)[(0, 0)];
            }
        }
    }
    {
        let om = out.mean_mut();
        for (i, &gi) in keep.iter().enumerate() {
            let ci = Vector2::new(g[(gi, mx)], g[(gi, mp)]);
            om[i] += (ci.transpose() * inv * delta)[(0, 0)];
        }
    }
    out.symmetrize();
    Ok(out)
}

/// Integrate out one axis: distribution over the other, normalized the same
/// way as the grid.
pub fn marginal(grid: &WignerGrid, axis: GridAxis) -> (Vec<f64>, Vec<f64>) {
    match axis {
        GridAxis::X => {
            let cell = grid.p_axis[1] - grid.p_axis[0];
            let vals = (0..grid.x_axis.len())
                .map(|ix| (0..grid.p_axis.len()).map(|ip| grid.value(ix, ip)).sum::<f64>() * cell)
                .collect();
            (grid.x_axis.clone(), vals)
        }
        GridAxis::P => {
            let cell = grid.x_axis[1] - grid.x_axis[0];
            let vals = (0..grid.p_axis.len())
                .map(|ip| (0..grid.x_axis.len()).map(|ix| grid.value(ix, ip)).sum::<f64>() * cell)
                .collect();
            (grid.p_axis.clone(), vals)
        }
    }
}

/// Minimum grid value and total negative volume `sum |W<0| * cell`.
pub fn wigner_negativity(grid: &WignerGrid) -> (f64, f64) {
    let min = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
    let neg: f64 = grid.values.iter().filter(|v| **v < 0.0).map(|v| -v).sum::<f64>()
        * grid.cell_volume;
    (min, neg)
}

/// Indices of strict local maxima of a 1-D series.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
        .collect()
}

/// 50/50 beam-splitter symplectic for two modes.
pub fn beam_splitter_5050(dim: usize, mode_a: usize, mode_b: usize) -> DMatrix<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = DMatrix::identity(dim, dim);
    for off in 0..2 {
        let (ia, ib) = (2 * mode_a + off, 2 * mode_b + off);
        m[(ia, ia)] = s;
        m[(ia, ib)] = s;
        m[(ib, ia)] = -s;
        m[(ib, ib)] = s;
    }
    m
}
