//! Deterministic state propagation and construction of the scenario coupling
//! matrices.
//!
//! One discrete step of duration `tau` acts as
//! `gamma' = L S gamma S^T L + N` and `m' = L S m`, with `S` symplectic on the
//! quantum modes, `L` a diagonal damping matrix, and `N` the diagonal noise
//! that restores the Heisenberg bound after damping.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gstate::{select_submatrix, symplectic_form, GaussianState, ModeKind, ModeLayout};

/// The per-step propagation triple `(S, L, N)`.
///
/// `L` and `N` are diagonal; only their diagonals are stored.
#[derive(Debug, Clone)]
pub struct StepMatrices {
    pub s: DMatrix<f64>,
    pub l_diag: Vec<f64>,
    pub n_diag: Vec<f64>,
    /// Step duration in seconds.
    pub tau: f64,
}

impl StepMatrices {
    /// Purely symplectic step: `L = I`, `N = 0`.
    pub fn unitary(s: DMatrix<f64>, tau: f64) -> Self {
        let d = s.nrows();
        Self { s, l_diag: vec![1.0; d], n_diag: vec![0.0; d], tau }
    }

    /// Residual of `S Omega S^T = Omega` restricted to the quantum
    /// quadratures of `layout`.
    pub fn symplectic_residual(&self, layout: &ModeLayout) -> f64 {
        symplectic_residual(&self.s, layout)
    }
}

/// Max-abs residual of the symplectic condition on the quantum sub-block.
pub fn symplectic_residual(s: &DMatrix<f64>, layout: &ModeLayout) -> f64 {
    let idx = layout.quantum_quads();
    let sq = select_submatrix(s, &idx);
    let omega = symplectic_form(idx.len() / 2);
    let res = &sq * &omega * sq.transpose() - omega;
    res.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Tracks the decaying classical spin polarization of one atomic ensemble.
///
/// `jx_fraction` is `<J_x(t)> / <J_x(0)>`; `atom_noise_factor` is
/// `hbar N_at / <J_x(t)>`, which starts at 2 and grows by `(1 - eta_tau)^-1`
/// each step; `kappa_tau` shrinks by `sqrt(1 - eta_tau)` per step when the
/// feedback toggle is on.
#[derive(Debug, Clone)]
pub struct SpinTracker {
    pub jx_fraction: f64,
    pub atom_noise_factor: f64,
    /// Per-step decay probability `eta * tau`.
    pub eta_tau: f64,
    /// Current dimensionless per-step coupling.
    pub kappa_tau: f64,
    /// Whether decay feeds back into `kappa_tau`.
    pub kappa_feedback: bool,
}

impl SpinTracker {
    pub fn new(kappa_tau: f64, eta_tau: f64, kappa_feedback: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&eta_tau) {
            return Err(Error::InvalidArgument(format!("eta_tau {eta_tau} outside [0, 1)")));
        }
        if kappa_tau < 0.0 {
            return Err(Error::InvalidArgument("kappa_tau must be nonnegative".into()));
        }
        Ok(Self { jx_fraction: 1.0, atom_noise_factor: 2.0, eta_tau, kappa_tau, kappa_feedback })
    }
}

/// Advance a spin tracker by one step: the mean spin shrinks by
/// `(1 - eta_tau)`, the noise factor grows to keep
/// `atom_noise_factor * jx_fraction = 2`, and the coupling picks up
/// `sqrt(1 - eta_tau)` when feedback is enabled.
pub fn advance_tracker(tracker: &SpinTracker) -> SpinTracker {
    let mut t = tracker.clone();
    let survive = 1.0 - t.eta_tau;
    t.jx_fraction *= survive;
    t.atom_noise_factor /= survive;
    if t.kappa_feedback {
        t.kappa_tau *= survive.sqrt();
    }
    t
}

/// `m' = S m`, `gamma' = S gamma S^T`.
pub fn apply_symplectic(state: &GaussianState, s: &DMatrix<f64>) -> Result<GaussianState> {
    let d = state.layout().dim();
    if s.nrows() != d || s.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: s.nrows() });
    }
    let mut out = state.clone();
    *out.mean_mut() = s * state.mean();
    *out.cov_mut() = s * state.cov() * s.transpose();
    out.symmetrize();
    Ok(out)
}

/// `m' = L m`, `gamma' = L gamma L + N` with diagonal `L`, `N`.
pub fn apply_loss_noise(state: &GaussianState, l_diag: &[f64], n_diag: &[f64]) -> Result<GaussianState> {
    let d = state.layout().dim();
    if l_diag.len() != d || n_diag.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: l_diag.len() });
    }
    let mut out = state.clone();
    for i in 0..d {
        out.mean_mut()[i] *= l_diag[i];
    }
    let cov = out.cov_mut();
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] *= l_diag[i] * l_diag[j];
        }
        cov[(i, i)] += n_diag[i];
    }
    Ok(out)
}

/// One full deterministic step: symplectic interaction then loss/noise.
pub fn step(state: &GaussianState, matrices: &StepMatrices) -> Result<GaussianState> {
    let after_s = apply_symplectic(state, &matrices.s)?;
    apply_loss_noise(&after_s, &matrices.l_diag, &matrices.n_diag)
}

/// Faraday-rotation coupling of `n` atomic slices to one field segment:
/// `x_at,i += kappa_i p_ph` and `x_ph += sum_i kappa_i p_at,i`.
///
/// The layout must hold the atomic slices first, then the field segment.
/// All momenta commute with the interaction, so the first-order matrix is the
/// exact flow and is exactly symplectic.
pub fn build_faraday_s(layout: &ModeLayout, kappa_tau_per_slice: &[f64]) -> Result<DMatrix<f64>> {
    let n = layout.len();
    if n != kappa_tau_per_slice.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "layout has {} modes but {} slice couplings were given",
            n,
            kappa_tau_per_slice.len()
        )));
    }
    for i in 0..n - 1 {
        if layout.kind(i) != ModeKind::Atomic {
            return Err(Error::InvalidArgument(format!(
                "mode '{}' must be atomic for the Faraday coupling",
                layout.label(i)
            )));
        }
    }
    if layout.kind(n - 1) != ModeKind::FieldSegment {
        return Err(Error::InvalidArgument("last mode must be a field segment".into()));
    }
    let d = layout.dim();
    let (x_ph, p_ph) = layout.quad(n - 1);
    let mut s = DMatrix::identity(d, d);
    for (i, &kappa) in kappa_tau_per_slice.iter().enumerate() {
        let (x_at, p_at) = layout.quad(i);
        s[(x_at, p_ph)] += kappa;
        s[(x_ph, p_at)] += kappa;
    }
    Ok(s)
}

/// Scalar-magnetometry coupling for the layout
/// `(B classical, atoms, field segment)`:
/// the Faraday coupling plus the Larmor drive `p_at -= mu_tau * B`.
///
/// The B mode's p-quadrature row and column stay identity (QND probing of a
/// static parameter).
pub fn build_magnetometer_s(layout: &ModeLayout, kappa_tau: f64, mu_tau: f64) -> Result<DMatrix<f64>> {
    expect_kinds(
        layout,
        &[ModeKind::ClassicalParameter, ModeKind::Atomic, ModeKind::FieldSegment],
        "magnetometer",
    )?;
    let (b, _) = layout.quad(0);
    let (x_at, p_at) = layout.quad(1);
    let (x_ph, p_ph) = layout.quad(2);
    let mut s = DMatrix::identity(6, 6);
    s[(x_at, p_ph)] += kappa_tau;
    s[(x_ph, p_at)] += kappa_tau;
    s[(p_at, b)] -= mu_tau;
    Ok(s)
}

/// Two-cell vector-magnetometry coupling for the layout
/// `(B_z, B_y, atoms 1, atoms 2, field 1, field 2)`, to first order in tau.
///
/// Beam 1 couples to `p_at,1 - p_at,2`, beam 2 to `x_at,1 + x_at,2`; the
/// relative sign on the second cell comes from flipping `kappa_tau` between
/// the cells. The field drives are `p_at,i -/+ mu_tau B_y` and
/// `x_at,i += mu_tau B_z`.
pub fn build_vector_mag_s(layout: &ModeLayout, kappa_tau: f64, mu_tau: f64) -> Result<DMatrix<f64>> {
    build_vector_mag_s_per_beam(layout, kappa_tau, kappa_tau, mu_tau)
}

/// [`build_vector_mag_s`] with independent beam couplings, for asymmetric
/// probing.
pub fn build_vector_mag_s_per_beam(
    layout: &ModeLayout,
    kappa_beam1: f64,
    kappa_beam2: f64,
    mu_tau: f64,
) -> Result<DMatrix<f64>> {
    vector_mag_matrix(layout, kappa_beam1, kappa_beam2, mu_tau, true)
}

/// Vector-magnetometry coupling where each beam probes one cell only
/// (beam 1 reads `p_at,1`, beam 2 reads `x_at,2`); the field drives are
/// unchanged. Used as the separable baseline for the entangled scheme.
pub fn build_vector_mag_separate_s(
    layout: &ModeLayout,
    kappa_tau: f64,
    mu_tau: f64,
) -> Result<DMatrix<f64>> {
    vector_mag_matrix(layout, kappa_tau, kappa_tau, mu_tau, false)
}

fn vector_mag_matrix(
    layout: &ModeLayout,
    kappa_beam1: f64,
    kappa_beam2: f64,
    mu_tau: f64,
    entangled: bool,
) -> Result<DMatrix<f64>> {
    expect_kinds(
        layout,
        &[
            ModeKind::ClassicalParameter,
            ModeKind::ClassicalParameter,
            ModeKind::Atomic,
            ModeKind::Atomic,
            ModeKind::FieldSegment,
            ModeKind::FieldSegment,
        ],
        "vector magnetometer",
    )?;
    let (bz, _) = layout.quad(0);
    let (by, _) = layout.quad(1);
    let (x1, p1) = layout.quad(2);
    let (x2, p2) = layout.quad(3);
    let (xf1, pf1) = layout.quad(4);
    let (xf2, pf2) = layout.quad(5);
    let mut s = DMatrix::identity(12, 12);
    // Magnetic drives: mu B_y (x1 - x2) + mu B_z (p1 + p2).
    s[(p1, by)] -= mu_tau;
    s[(p2, by)] += mu_tau;
    s[(x1, bz)] += mu_tau;
    s[(x2, bz)] += mu_tau;
    if entangled {
        // kappa_1 (p1 - p2) p_f1
        s[(x1, pf1)] += kappa_beam1;
        s[(x2, pf1)] -= kappa_beam1;
        s[(xf1, p1)] += kappa_beam1;
        s[(xf1, p2)] -= kappa_beam1;
        // kappa_2 (x1 + x2) x_f2
        s[(p1, xf2)] -= kappa_beam2;
        s[(p2, xf2)] -= kappa_beam2;
        s[(pf2, x1)] -= kappa_beam2;
        s[(pf2, x2)] -= kappa_beam2;
    } else {
        // kappa_1 p1 p_f1 on cell 1, kappa_2 x2 x_f2 on cell 2.
        s[(x1, pf1)] += kappa_beam1;
        s[(xf1, p1)] += kappa_beam1;
        s[(p2, xf2)] -= kappa_beam2;
        s[(pf2, x2)] -= kappa_beam2;
    }
    Ok(s)
}

fn expect_kinds(layout: &ModeLayout, kinds: &[ModeKind], what: &str) -> Result<()> {
    if layout.len() != kinds.len() {
        return Err(Error::InvalidArgument(format!(
            "{what} layout needs {} modes, got {}",
            kinds.len(),
            layout.len()
        )));
    }
    for (i, &k) in kinds.iter().enumerate() {
        if layout.kind(i) != k {
            return Err(Error::InvalidArgument(format!(
                "{what} layout: mode '{}' has the wrong kind",
                layout.label(i)
            )));
        }
    }
    Ok(())
}

/// Damping/noise diagonals for atomic decay and photon absorption.
///
/// Atomic rows get `L = sqrt(1 - eta_tau)` and `N = f_at * eta_tau` with the
/// noise factor taken from that slice's tracker; field rows get
/// `L = sqrt(1 - epsilon)`, `N = epsilon` (the coherent segment is a fixed
/// point); classical rows stay `L = 1`, `N = 0`.
///
/// `trackers` must hold one entry per atomic mode, in layout order.
pub fn build_decay_ln(
    layout: &ModeLayout,
    trackers: &[SpinTracker],
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1)")));
    }
    let n_atomic = layout.modes().filter(|(_, k)| *k == ModeKind::Atomic).count();
    if trackers.len() != n_atomic {
        return Err(Error::InvalidArgument(format!(
            "{} atomic modes but {} trackers",
            n_atomic,
            trackers.len()
        )));
    }
    let d = layout.dim();
    let mut l = vec![1.0; d];
    let mut n = vec![0.0; d];
    let mut atom_idx = 0;
    for (i, (_, kind)) in layout.modes().enumerate() {
        let (x, p) = layout.quad(i);
        match kind {
            ModeKind::Atomic => {
                let t = &trackers[atom_idx];
                if !(0.0..1.0).contains(&t.eta_tau) {
                    return Err(Error::InvalidArgument(format!(
                        "eta_tau {} outside [0, 1)",
                        t.eta_tau
                    )));
                }
                let damp = (1.0 - t.eta_tau).sqrt();
                let noise = t.atom_noise_factor * t.eta_tau;
                l[x] = damp;
                l[p] = damp;
                n[x] = noise;
                n[p] = noise;
                atom_idx += 1;
            }
            ModeKind::FieldSegment => {
                let damp = (1.0 - epsilon).sqrt();
                l[x] = damp;
                l[p] = damp;
                n[x] = epsilon;
                n[p] = epsilon;
            }
            ModeKind::ClassicalParameter | ModeKind::Cavity => {}
        }
    }
    Ok((l, n))
}
