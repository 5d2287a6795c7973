//! Homodyne measurement conditioning and the per-segment probe cycle.
//!
//! Measuring the x quadrature of one mode updates the covariance of the rest
//! by a Schur complement through the Moore-Penrose pseudoinverse of the
//! projected measured block, and shifts the means by an amount proportional
//! to the outcome deviation `chi`. The covariance update is independent of
//! the outcome; only the means are stochastic. The measured mode is removed
//! from the state afterwards.

use nalgebra::DMatrix;

use crate::channels::{self, SpinTracker, StepMatrices};
use crate::error::{Error, Result};
use crate::gstate::{GaussianState, ModeKind, ModeLayout};
use crate::rng::TrajectoryRng;

/// Variance floor below which a homodyne measurement is considered
/// degenerate: a quadrature this sharp carries no new information and its
/// inverse would overflow the update.
pub const DEGENERATE_VARIANCE_TOL: f64 = 1e-12;

/// Record of one homodyne detection.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementOutcome {
    /// Deviation of the outcome from the prior mean (quadrature units).
    pub chi: f64,
    /// Prior mean of the measured quadrature.
    pub prior_mean: f64,
    /// Prior variance of the measured quadrature (`B(1,1) / 2`).
    pub prior_variance: f64,
}

impl MeasurementOutcome {
    /// Absolute measured value, `prior_mean + chi`.
    pub fn value(&self) -> f64 {
        self.prior_mean + self.chi
    }
}

/// Outcome source: draw from the conditional Gaussian, or force a fixed
/// deviation (used by tests; the covariance update is identical either way).
pub enum ChiSource<'a> {
    Rng(&'a mut TrajectoryRng),
    Fixed(f64),
}

impl<'a> From<&'a mut TrajectoryRng> for ChiSource<'a> {
    fn from(rng: &'a mut TrajectoryRng) -> Self {
        ChiSource::Rng(rng)
    }
}

/// Homodyne detection of the x quadrature of `mode_label`.
///
/// Returns the post-measurement state (measured mode removed) and the
/// outcome. `chi` is drawn from a zero-mean normal with variance
/// `B(1,1) / 2` unless fixed.
pub fn homodyne_x(
    state: &GaussianState,
    mode_label: &str,
    chi: ChiSource<'_>,
) -> Result<(GaussianState, MeasurementOutcome)> {
    let mode = state.layout().require(mode_label)?;
    homodyne_x_at(state, mode, chi)
}

pub(crate) fn homodyne_x_at(
    state: &GaussianState,
    mode: usize,
    chi: ChiSource<'_>,
) -> Result<(GaussianState, MeasurementOutcome)> {
    if state.n_modes() < 2 {
        return Err(Error::InvalidArgument(
            "homodyne requires at least one unmeasured mode".into(),
        ));
    }
    let (xq, _) = state.layout().quad(mode);
    let cov = state.cov();
    let b11 = cov[(xq, xq)];
    if b11 <= DEGENERATE_VARIANCE_TOL {
        return Err(Error::DegenerateMeasurement(b11));
    }
    let prior_mean = state.mean()[xq];
    let chi = match chi {
        ChiSource::Rng(rng) => rng.normal((b11 / 2.0).sqrt()),
        ChiSource::Fixed(v) => v,
    };

    // A' = A - c c^T / B(1,1), m' = m + c chi / B(1,1), where c is the
    // cross-covariance column with the measured x quadrature. The projector
    // onto x plus pseudoinverse reduces to using that single column.
    let mut out = state.remove_mode_at(mode);
    let keep: Vec<usize> = (0..cov.nrows()).filter(|&i| i != xq && i != xq + 1).collect();
    {
        let oc = out.cov_mut();
        for (i, &gi) in keep.iter().enumerate() {
            for (j, &gj) in keep.iter().enumerate() {
                oc[(i, j)] -= cov[(gi, xq)] * cov[(gj, xq)] / b11;
            }
        }
    }
    {
        let om = out.mean_mut();
        for (i, &gi) in keep.iter().enumerate() {
            om[i] += cov[(gi, xq)] * chi / b11;
        }
    }
    out.symmetrize();
    Ok((out, MeasurementOutcome { chi, prior_mean, prior_variance: b11 / 2.0 }))
}

/// Homodyne detection of the quadrature `x cos(theta) + p sin(theta)` of one
/// mode: an in-mode phase rotation followed by [`homodyne_x`].
pub fn homodyne_quadrature(
    state: &GaussianState,
    mode_label: &str,
    theta: f64,
    chi: ChiSource<'_>,
) -> Result<(GaussianState, MeasurementOutcome)> {
    let mode = state.layout().require(mode_label)?;
    let d = state.layout().dim();
    let (xq, pq) = state.layout().quad(mode);
    let mut rot = DMatrix::identity(d, d);
    let (sin, cos) = theta.sin_cos();
    rot[(xq, xq)] = cos;
    rot[(xq, pq)] = sin;
    rot[(pq, xq)] = -sin;
    rot[(pq, pq)] = cos;
    let rotated = channels::apply_symplectic(state, &rot)?;
    homodyne_x_at(&rotated, mode, chi)
}

/// Segment preparation for [`GaussianState::attach_mode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    /// Coherent segment: identity covariance.
    Coherent,
    /// Quadrature-squeezed segment with covariance `diag(1/r, r)`.
    Squeezed { r: f64 },
}

/// Mean and covariance of a fresh beam segment.
pub fn make_segment(kind: SegmentKind) -> Result<([f64; 2], [[f64; 2]; 2])> {
    match kind {
        SegmentKind::Coherent => Ok(([0.0; 2], [[1.0, 0.0], [0.0, 1.0]])),
        SegmentKind::Squeezed { r } => {
            if r <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "squeezing parameter r must be positive, got {r}"
                )));
            }
            Ok(([0.0; 2], [[1.0 / r, 0.0], [0.0, r]]))
        }
    }
}

/// Builds the step's symplectic matrix for the layout with the segment
/// attached, given the current per-ensemble trackers.
pub trait ProbeSBuilder {
    fn build(&self, layout: &ModeLayout, trackers: &[SpinTracker]) -> Result<DMatrix<f64>>;
}

impl<F> ProbeSBuilder for F
where
    F: Fn(&ModeLayout, &[SpinTracker]) -> Result<DMatrix<f64>>,
{
    fn build(&self, layout: &ModeLayout, trackers: &[SpinTracker]) -> Result<DMatrix<f64>> {
        self(layout, trackers)
    }
}

/// One probe cycle: attach a fresh segment, propagate with `(S, L, N)`,
/// homodyne the segment's x quadrature (which removes it), and advance the
/// trackers.
///
/// The input state must hold only persistent modes; the segment label is
/// internal to the cycle.
pub fn probe_cycle(
    state: &GaussianState,
    trackers: &mut [SpinTracker],
    s_builder: &dyn ProbeSBuilder,
    epsilon: f64,
    segment_kind: SegmentKind,
    tau: f64,
    rng: &mut TrajectoryRng,
) -> Result<(GaussianState, MeasurementOutcome)> {
    const SEGMENT_LABEL: &str = "__segment";
    let (seg_mean, seg_cov) = make_segment(segment_kind)?;
    let attached = state.attach_mode(SEGMENT_LABEL, ModeKind::FieldSegment, seg_mean, seg_cov)?;
    let s = s_builder.build(attached.layout(), trackers)?;
    let (l, n) = channels::build_decay_ln(attached.layout(), trackers, epsilon)?;
    let stepped = channels::step(&attached, &StepMatrices { s, l_diag: l, n_diag: n, tau })?;
    let (conditioned, outcome) = homodyne_x(&stepped, SEGMENT_LABEL, ChiSource::Rng(rng))?;
    for t in trackers.iter_mut() {
        *t = channels::advance_tracker(t);
    }
    Ok((conditioned, outcome))
}
