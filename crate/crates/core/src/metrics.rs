//! Observable extraction: quadrature variances, squeezing in dB, EPR
//! variance, logarithmic negativity, and the minimal-variance atomic mode.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gstate::{symplectic_eigenvalues, GaussianState};

/// Vacuum variance of a single quadrature in these units.
pub const VACUUM_VARIANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    X,
    P,
}

/// `Var(q) = gamma_qq / 2` for the chosen quadrature of a mode.
pub fn quadrature_variance(
    state: &GaussianState,
    mode_label: &str,
    quad: Quadrature,
) -> Result<f64> {
    let mode = state.layout().require(mode_label)?;
    let (x, p) = state.layout().quad(mode);
    let idx = match quad {
        Quadrature::X => x,
        Quadrature::P => p,
    };
    Ok(state.cov()[(idx, idx)] / 2.0)
}

/// Squeezing relative to a reference variance, in dB:
/// `-10 log10(var / var_ref)`.
pub fn squeezing_db(var: f64, var_ref: f64) -> f64 {
    -10.0 * (var / var_ref).log10()
}

/// Sign convention for the commuting EPR pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EprSigns {
    /// `Var(x1 - x2) + Var(p1 + p2)` (oppositely polarized ensembles with
    /// the sign absorbed into the layout).
    XMinusPPlus,
    /// `Var(x1 + x2) + Var(p1 - p2)`.
    XPlusPMinus,
}

/// EPR variance of two modes. Separable states obey a lower bound of 2 in
/// these units (each joint variance is at least twice the vacuum variance).
pub fn epr_variance(
    state: &GaussianState,
    label1: &str,
    label2: &str,
    signs: EprSigns,
) -> Result<f64> {
    let m1 = state.layout().require(label1)?;
    let m2 = state.layout().require(label2)?;
    let (x1, p1) = state.layout().quad(m1);
    let (x2, p2) = state.layout().quad(m2);
    let g = state.cov();
    let (sx, sp) = match signs {
        EprSigns::XMinusPPlus => (-1.0, 1.0),
        EprSigns::XPlusPMinus => (1.0, -1.0),
    };
    let var_x = (g[(x1, x1)] + g[(x2, x2)] + 2.0 * sx * g[(x1, x2)]) / 2.0;
    let var_p = (g[(p1, p1)] + g[(p2, p2)] + 2.0 * sp * g[(p1, p2)]) / 2.0;
    Ok(var_x + var_p)
}

/// Logarithmic negativity (in bits) across a bipartition given by the mode
/// labels of one party.
///
/// The partial transpose flips the sign of the p quadratures of that party;
/// the result is `sum_k max(0, -log2(nu_k))` over the symplectic eigenvalues
/// of the transposed covariance.
pub fn log_negativity(state: &GaussianState, partition: &[&str]) -> Result<f64> {
    if partition.is_empty() {
        return Err(Error::InvalidArgument("partition must name at least one mode".into()));
    }
    if state.layout().modes().any(|(_, k)| k.is_classical()) {
        return Err(Error::InvalidArgument(
            "log negativity is undefined with classical-parameter modes present".into(),
        ));
    }
    let mut party = Vec::with_capacity(partition.len());
    for label in partition {
        let m = state.layout().require(label)?;
        if party.contains(&m) {
            return Err(Error::InvalidArgument(format!("mode '{label}' listed twice")));
        }
        party.push(m);
    }
    if party.len() == state.n_modes() {
        return Err(Error::InvalidArgument("partition covers every mode".into()));
    }
    let mut transposed = state.cov().clone();
    let d = transposed.nrows();
    for &m in &party {
        let (_, p) = state.layout().quad(m);
        for i in 0..d {
            transposed[(i, p)] = -transposed[(i, p)];
            transposed[(p, i)] = -transposed[(p, i)];
        }
    }
    let nus = symplectic_eigenvalues(&transposed)?;
    Ok(nus.iter().filter(|&&nu| nu < 1.0).map(|nu| -nu.log2()).sum())
}

/// Minimal eigenvalue of an atomic covariance block, as a variance, together
/// with its normalized eigenvector (the maximally squeezed spatial mode).
pub fn min_variance_mode(atomic_cov_block: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let mut sym = atomic_cov_block.clone();
    let d = sym.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = s;
            sym[(j, i)] = s;
        }
    }
    let eig = sym.symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    let vec = eig.eigenvectors.column(best).into_owned();
    (eig.eigenvalues[best] / 2.0, vec)
}

/// Covariance of a two-mode squeezed vacuum with squeezing parameter `r`
/// (vacuum = identity convention): diagonal blocks `cosh(2r) I`,
/// off-diagonal `sinh(2r) diag(1, -1)`.
pub fn two_mode_squeezed_cov(r: f64) -> DMatrix<f64> {
    let c = (2.0 * r).cosh();
    let s = (2.0 * r).sinh();
    let mut g = DMatrix::identity(4, 4) * c;
    g[(0, 2)] = s;
    g[(2, 0)] = s;
    g[(1, 3)] = -s;
    g[(3, 1)] = -s;
    g
}
