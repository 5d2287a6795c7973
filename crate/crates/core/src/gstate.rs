//! Multimode Gaussian states: mode layouts, vacuum construction, mode
//! attach/remove lifecycle, symplectic spectra, and physicality validation.
//!
//! Quadratures are interleaved as `(x1, p1, ..., xn, pn)` with `[x, p] = i`.
//! The covariance convention is `gamma_ij = 2 Re<dy_i dy_j>`, so the vacuum
//! covariance is the identity and `Var(x) = gamma_xx / 2 = 1/2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry residual allowed on covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Slack below 1 allowed for symplectic eigenvalues of physical states.
pub const SYMPLECTIC_SLACK: f64 = 1e-9;

/// What a mode represents physically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    /// Collective atomic spin mode.
    Atomic,
    /// One beam segment of duration tau, attached for a single probe cycle.
    FieldSegment,
    /// Classical parameter carried as a mode (e.g. a magnetic-field
    /// component). Its p-quadrature is an unspecified conjugate: it is kept in
    /// the matrix but never coupled, and the mode is excluded from symplectic
    /// physicality checks.
    ClassicalParameter,
    /// Intracavity field mode (persistent across probe cycles).
    Cavity,
}

impl ModeKind {
    pub fn is_classical(self) -> bool {
        matches!(self, ModeKind::ClassicalParameter)
    }
}

/// Ordered set of labelled modes. Mode `i` owns quadrature indices
/// `(2i, 2i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeLayout {
    modes: Vec<(String, ModeKind)>,
}

impl ModeLayout {
    pub fn new<S: Into<String>>(modes: Vec<(S, ModeKind)>) -> Result<Self> {
        let modes: Vec<(String, ModeKind)> =
            modes.into_iter().map(|(l, k)| (l.into(), k)).collect();
        if modes.is_empty() {
            return Err(Error::InvalidArgument("layout must contain at least one mode".into()));
        }
        for (i, (label, _)) in modes.iter().enumerate() {
            if modes[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::InvalidArgument(format!("duplicate mode label '{label}'")));
            }
        }
        Ok(Self { modes })
    }

    /// Number of modes.
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Number of quadratures (`2 * len`).
    pub fn dim(&self) -> usize {
        2 * self.modes.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.modes.iter().position(|(l, _)| l == label)
    }

    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownLabel(label.into()))
    }

    pub fn label(&self, mode: usize) -> &str {
        &self.modes[mode].0
    }

    pub fn kind(&self, mode: usize) -> ModeKind {
        self.modes[mode].1
    }

    /// Quadrature indices `(x, p)` of a mode.
    pub fn quad(&self, mode: usize) -> (usize, usize) {
        (2 * mode, 2 * mode + 1)
    }

    pub fn modes(&self) -> impl Iterator<Item = (&str, ModeKind)> {
        self.modes.iter().map(|(l, k)| (l.as_str(), *k))
    }

    /// Quadrature indices belonging to non-classical modes, in order.
    pub fn quantum_quads(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for (i, (_, kind)) in self.modes.iter().enumerate() {
            if !kind.is_classical() {
                idx.push(2 * i);
                idx.push(2 * i + 1);
            }
        }
        idx
    }

    fn pushed(&self, label: &str, kind: ModeKind) -> Result<Self> {
        if self.index_of(label).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate mode label '{label}'")));
        }
        let mut modes = self.modes.clone();
        modes.push((label.to_string(), kind));
        Ok(Self { modes })
    }

    fn removed(&self, mode: usize) -> Self {
        let mut modes = self.modes.clone();
        modes.remove(mode);
        Self { modes }
    }
}

/// The symplectic form for `n` modes in interleaved ordering: block diagonal
/// copies of `[[0, 1], [-1, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for i in 0..n_modes {
        omega[(2 * i, 2 * i + 1)] = 1.0;
        omega[(2 * i + 1, 2 * i)] = -1.0;
    }
    omega
}

/// Symplectic eigenvalues of a symmetric, positive semidefinite covariance
/// matrix, each reported once and sorted ascending.
///
/// Computed as the singular values of `sqrt(gamma) * Omega * sqrt(gamma)`,
/// which come in equal pairs; each pair is averaged into one eigenvalue.
pub fn symplectic_eigenvalues(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = cov.nrows();
    if d != cov.ncols() || d % 2 != 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "covariance must be square with even dimension, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let residual = symmetry_residual(cov);
    if residual > SYMMETRY_TOL {
        return Err(Error::InvalidArgument(format!(
            "covariance not symmetric (residual {residual:.3e})"
        )));
    }
    let n = d / 2;
    let eig = cov.clone().symmetric_eigen();
    // Clamp tiny negative eigenvalues from roundoff; genuinely unphysical
    // matrices then produce symplectic eigenvalues below 1 and fail validate.
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let sqrt_cov = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let k = &sqrt_cov * symplectic_form(n) * &sqrt_cov;
    let mut sv: Vec<f64> = k.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((0..n).map(|i| 0.5 * (sv[2 * i] + sv[2 * i + 1])).collect())
}

fn symmetry_residual(m: &DMatrix<f64>) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            r = r.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    r
}

/// Outcome of [`GaussianState::validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub pass: bool,
    pub symmetry_residual: f64,
    pub finite: bool,
    /// Minimum symplectic eigenvalue over the non-classical modes, if any.
    pub min_symplectic_eigenvalue: Option<f64>,
    /// Description of the first offending quantity, when `pass` is false.
    pub failure: Option<String>,
}

/// A multimode Gaussian state: mean vector and covariance matrix over an
/// ordered mode layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    layout: ModeLayout,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    /// Vacuum on the given layout: zero mean, identity covariance.
    pub fn new_vacuum(layout: ModeLayout) -> Self {
        let d = layout.dim();
        Self { layout, mean: DVector::zeros(d), cov: DMatrix::identity(d, d) }
    }

    /// Build a state from raw parts. The covariance is symmetrized.
    pub fn from_parts(layout: ModeLayout, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = layout.dim();
        if mean.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: mean.len() });
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        if symmetry_residual(&cov) > SYMMETRY_TOL {
            return Err(Error::InvalidArgument("covariance not symmetric".into()));
        }
        let mut state = Self { layout, mean, cov };
        state.symmetrize();
        Ok(state)
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn mean_mut(&mut self) -> &mut DVector<f64> {
        &mut self.mean
    }

    pub fn cov_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.cov
    }

    /// Number of modes.
    pub fn n_modes(&self) -> usize {
        self.layout.len()
    }

    /// `gamma <- (gamma + gamma^T) / 2`, applied after every update step to
    /// bound floating-point drift.
    pub fn symmetrize(&mut self) {
        let d = self.cov.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let s = 0.5 * (self.cov[(i, j)] + self.cov[(j, i)]);
                self.cov[(i, j)] = s;
                self.cov[(j, i)] = s;
            }
        }
    }

    /// Append a fresh mode, uncorrelated with everything already present.
    ///
    /// `mode_cov` must be symmetric, and physical (symplectic eigenvalue at
    /// least 1) unless the mode is a classical parameter.
    pub fn attach_mode(
        &self,
        label: &str,
        kind: ModeKind,
        mode_mean: [f64; 2],
        mode_cov: [[f64; 2]; 2],
    ) -> Result<Self> {
        if (mode_cov[0][1] - mode_cov[1][0]).abs() > SYMMETRY_TOL {
            return Err(Error::InvalidArgument("mode covariance not symmetric".into()));
        }
        if !kind.is_classical() {
            // Symplectic eigenvalue of a 2x2 covariance is sqrt(det).
            let det = mode_cov[0][0] * mode_cov[1][1] - mode_cov[0][1] * mode_cov[1][0];
            if det < (1.0 - SYMPLECTIC_SLACK).powi(2) {
                return Err(Error::InvalidArgument(format!(
                    "mode covariance unphysical (symplectic eigenvalue {:.6} < 1)",
                    det.max(0.0).sqrt()
                )));
            }
        }
        let layout = self.layout.pushed(label, kind)?;
        let d = self.cov.nrows();
        let mut cov = DMatrix::zeros(d + 2, d + 2);
        cov.view_mut((0, 0), (d, d)).copy_from(&self.cov);
        for i in 0..2 {
            for j in 0..2 {
                cov[(d + i, d + j)] = mode_cov[i][j];
            }
        }
        let mut mean = DVector::zeros(d + 2);
        mean.rows_mut(0, d).copy_from(&self.mean);
        mean[d] = mode_mean[0];
        mean[d + 1] = mode_mean[1];
        Ok(Self { layout, mean, cov })
    }

    /// Partial trace over one mode: delete its rows/columns from the
    /// covariance and its entries from the mean.
    pub fn remove_mode(&self, label: &str) -> Result<Self> {
        let mode = self.layout.require(label)?;
        if self.layout.len() < 2 {
            return Err(Error::InvalidArgument("cannot remove the last remaining mode".into()));
        }
        Ok(self.remove_mode_at(mode))
    }

    pub(crate) fn remove_mode_at(&self, mode: usize) -> Self {
        let layout = self.layout.removed(mode);
        let (x, _) = self.layout.quad(mode);
        let cov = self.cov.clone().remove_rows(x, 2).remove_columns(x, 2);
        let mean = self.mean.clone().remove_rows(x, 2);
        Self { layout, mean, cov }
    }

    /// Symplectic eigenvalues of the full covariance, classical modes
    /// included.
    pub fn symplectic_eigenvalues(&self) -> Result<Vec<f64>> {
        symplectic_eigenvalues(&self.cov)
    }

    /// Covariance restricted to the non-classical modes.
    pub fn quantum_cov(&self) -> DMatrix<f64> {
        let idx = self.layout.quantum_quads();
        select_submatrix(&self.cov, &idx)
    }

    /// Check symmetry, finiteness, and the Heisenberg bound (minimum
    /// symplectic eigenvalue of the quantum block at least `1 - 1e-9`).
    /// Classical-parameter modes are excluded together with their
    /// rows/columns.
    pub fn validate(&self) -> ValidationReport {
        let symmetry = symmetry_residual(&self.cov);
        let finite =
            self.mean.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite());
        let mut failure = None;
        if !finite {
            failure = Some("non-finite entry in mean or covariance".into());
        } else if symmetry > SYMMETRY_TOL {
            failure = Some(format!("covariance symmetry residual {symmetry:.3e}"));
        }
        let quantum = self.layout.quantum_quads();
        let mut min_nu = None;
        if failure.is_none() && !quantum.is_empty() {
            let block = select_submatrix(&self.cov, &quantum);
            match symplectic_eigenvalues(&block) {
                Ok(nus) => {
                    let m = nus.iter().copied().fold(f64::INFINITY, f64::min);
                    min_nu = Some(m);
                    if m < 1.0 - SYMPLECTIC_SLACK {
                        failure = Some(format!("minimum symplectic eigenvalue {m:.12}"));
                    }
                }
                Err(e) => failure = Some(format!("symplectic spectrum failed: {e}")),
            }
        }
        ValidationReport {
            pass: failure.is_none(),
            symmetry_residual: symmetry,
            finite,
            min_symplectic_eigenvalue: min_nu,
            failure,
        }
    }
}

pub(crate) fn select_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let k = idx.len();
    DMatrix::from_fn(k, k, |i, j| m[(idx[i], idx[j])])
}
