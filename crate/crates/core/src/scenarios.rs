//! End-to-end experiment drivers: spin squeezing, inhomogeneous slices,
//! scalar and vector magnetometry, two-ensemble entanglement, plus the
//! derivation of coupling constants from physical beam/gas parameters.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{self, SpinTracker};
use crate::error::{Error, Result};
use crate::gstate::{GaussianState, ModeKind, ModeLayout};
use crate::measure::{self, ChiSource, SegmentKind};
use crate::metrics;
use crate::rng::TrajectoryRng;

const HBAR: f64 = 1.054_571_817e-34; // J s
const PT_PER_T: f64 = 1e12;

/// Physical beam and gas parameters from which the dimensionless couplings
/// derive. Rates are angular (rad/s); the B field is handled in picotesla.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Spontaneous decay rate of the probed transition.
    pub gamma: f64,
    /// Probe wavelength (m).
    pub lambda: f64,
    /// Detuning from the transition (rad/s).
    pub delta: f64,
    /// Beam cross section (m^2).
    pub area: f64,
    /// Photon flux (1/s).
    pub phi: f64,
    /// Atom number.
    pub n_atoms: f64,
    /// Beam segment duration (s).
    pub tau: f64,
    /// Magnetic moment (J/T).
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Prior variance of the field component (pT^2).
    #[serde(default = "default_var_b0")]
    pub var_b0: f64,
}

fn default_beta() -> f64 {
    9.274_010_1e-24 // Bohr magneton
}

fn default_var_b0() -> f64 {
    1.0
}

impl PhysicalParams {
    /// Resonant photon absorption cross section `lambda^2 / (2 pi)`.
    pub fn sigma(&self) -> f64 {
        self.lambda * self.lambda / std::f64::consts::TAU
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("delta", self.delta),
            ("area", self.area),
            ("phi", self.phi),
            ("n_atoms", self.n_atoms),
            ("tau", self.tau),
            ("beta", self.beta),
            ("var_b0", self.var_b0),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("physical.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Dimensionless per-step couplings derived from [`PhysicalParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedCouplings {
    /// Per-step Faraday coupling (scales as sqrt(tau)).
    pub kappa_tau: f64,
    /// Per-step decay probability `eta * tau`.
    pub eta_tau: f64,
    /// Per-pass photon absorption probability.
    pub epsilon: f64,
    /// Per-step Larmor coupling, per picotesla.
    pub mu_tau: f64,
}

/// Evaluate the coupling formulas. Factors of order unity from the real
/// Zeeman substructure are not included, so these land within a small factor
/// of measured values; explicitly configured couplings always win.
pub fn derive_couplings(p: &PhysicalParams) -> Result<DerivedCouplings> {
    p.validate()?;
    let sigma = p.sigma();
    let n_ph = p.phi * p.tau;
    // |kappa_tau| = (3 Gamma sigma / (Delta A)) sqrt(S_x J_x) with
    // S_x = N_ph / 2 and J_x = N_at / 2 in units of hbar.
    let kappa_tau = 3.0 * p.gamma * sigma / (p.delta * p.area) * (n_ph * p.n_atoms).sqrt() / 2.0;
    let lorentz = (p.gamma * p.gamma / 4.0) / (p.gamma * p.gamma / 4.0 + p.delta * p.delta);
    let eta = p.phi * (sigma / p.area) * lorentz;
    let epsilon = p.n_atoms * (sigma / p.area) * lorentz;
    // mu_tau = (tau / hbar) beta sqrt(J_x / hbar); the 1/pT factor keeps the
    // B mode in picotesla.
    let mu_tau = p.tau / HBAR * p.beta * (p.n_atoms / 2.0).sqrt() / PT_PER_T;
    Ok(DerivedCouplings { kappa_tau, eta_tau: eta * p.tau, epsilon, mu_tau })
}

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SpinSqueezing,
    Inhomogeneous,
    ScalarMagnetometry,
    Entanglement,
    VectorMagnetometry,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::SpinSqueezing => "spin-squeezing",
            Scenario::Inhomogeneous => "inhomogeneous",
            Scenario::ScalarMagnetometry => "scalar-magnetometry",
            Scenario::Entanglement => "entanglement",
            Scenario::VectorMagnetometry => "vector-magnetometry",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spin-squeezing" => Ok(Scenario::SpinSqueezing),
            "inhomogeneous" => Ok(Scenario::Inhomogeneous),
            "scalar-magnetometry" => Ok(Scenario::ScalarMagnetometry),
            "entanglement" => Ok(Scenario::Entanglement),
            "vector-magnetometry" => Ok(Scenario::VectorMagnetometry),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected spin-squeezing, inhomogeneous, \
                 scalar-magnetometry, entanglement, or vector-magnetometry)"
            ))),
        }
    }
}

/// Probing scheme for the two-cell vector magnetometer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VectorMode {
    /// Both beams traverse both cells.
    #[default]
    Entangled,
    /// Each beam probes one cell.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    /// Beam segment duration (s).
    pub tau: f64,
    /// Total probed time (s); must be an integer multiple of `tau`.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Record every k-th step (plus t = 0 and the final step).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
}

fn default_record_every() -> usize {
    1000
}

fn default_trajectories() -> usize {
    1
}

/// Explicit couplings. Rates are per second; per-step values are the rate
/// forms multiplied by `tau`. Give either the rate or the per-step form of
/// each coupling, not both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Couplings {
    /// Effective coupling rate `kappa^2 = kappa_tau^2 / tau` (1/s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_sq: Option<f64>,
    /// Per-step coupling squared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_tau_sq: Option<f64>,
    /// Larmor coupling rate `mu = mu_tau / tau` (1/(s pT)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Per-step Larmor coupling (1/pT).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_tau: Option<f64>,
    /// Atomic decay rate (1/s).
    #[serde(default)]
    pub eta: f64,
    /// Per-pass photon absorption probability.
    #[serde(default)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum SegmentConfig {
    Coherent,
    Squeezed { r: f64 },
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig::Coherent
    }
}

impl SegmentConfig {
    pub fn kind(&self) -> SegmentKind {
        match self {
            SegmentConfig::Coherent => SegmentKind::Coherent,
            SegmentConfig::Squeezed { r } => SegmentKind::Squeezed { r: *r },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicesConfig {
    /// Relative coupling weight per atomic slice; slice i couples with
    /// `weight_i * kappa_tau`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    /// Apply the decay/noise channel (with `eta`/`epsilon` from couplings).
    pub decay: bool,
    /// Shrink `kappa_tau` by `sqrt(1 - eta_tau)` per step as the mean spin
    /// decays.
    pub kappa_decay_feedback: bool,
    /// Prior variance of each probed field component (pT^2).
    pub var_b0: f64,
    /// Variance assigned to the unobserved conjugate of a classical
    /// parameter mode.
    pub var_b_conjugate: f64,
    /// Validate physicality every k steps (0 = off).
    pub validate_every: usize,
    /// Probing scheme for vector magnetometry.
    pub vector_mode: VectorMode,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            decay: true,
            kappa_decay_feedback: true,
            var_b0: 1.0,
            var_b_conjugate: 1e6,
            validate_every: 0,
            vector_mode: VectorMode::Entangled,
        }
    }
}

/// Full description of one run: scenario, numerical parameters, couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub run: RunParams,
    #[serde(default)]
    pub couplings: Couplings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalParams>,
    #[serde(default)]
    pub segment: SegmentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<SlicesConfig>,
    #[serde(default)]
    pub options: Options,
}

/// Couplings actually used by a run, after precedence resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedCouplings {
    pub kappa_tau: f64,
    pub mu_tau: f64,
    pub eta_tau: f64,
    pub epsilon: f64,
}

impl ScenarioConfig {
    /// Number of steps; errors unless `duration` is an integer multiple of
    /// `tau`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.run.tau > 0.0) {
            return Err(Error::Config(format!("run.tau must be positive, got {}", self.run.tau)));
        }
        if !(self.run.duration > 0.0) {
            return Err(Error::Config(format!(
                "run.duration must be positive, got {}",
                self.run.duration
            )));
        }
        let steps = (self.run.duration / self.run.tau).round();
        if steps < 1.0
            || (steps * self.run.tau - self.run.duration).abs() > 1e-6 * self.run.duration
        {
            return Err(Error::Config(format!(
                "run.duration {} is not an integer multiple of run.tau {}",
                self.run.duration, self.run.tau
            )));
        }
        Ok(steps as usize)
    }

    /// Resolve couplings. Explicit values win over physical-parameter
    /// derivation; each such shadowing is reported as a warning string.
    pub fn resolve_couplings(&self) -> Result<(ResolvedCouplings, Vec<String>)> {
        let mut warnings = Vec::new();
        let derived = match &self.physical {
            Some(p) => {
                let mut p = p.clone();
                if (p.tau - self.run.tau).abs() > 1e-12 * self.run.tau.abs() {
                    warnings.push(format!(
                        "physical.tau {} overridden by run.tau {}",
                        p.tau, self.run.tau
                    ));
                    p.tau = self.run.tau;
                }
                Some(derive_couplings(&p)?)
            }
            None => None,
        };
        let shadowing = |warnings: &mut Vec<String>, what: &str| {
            if derived.is_some() {
                warnings.push(format!(
                    "explicit couplings.{what} overrides the [physical] derivation"
                ));
            }
        };

        let kappa_tau = match (self.couplings.kappa_sq, self.couplings.kappa_tau_sq) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "specify only one of couplings.kappa_sq and couplings.kappa_tau_sq".into(),
                ))
            }
            (Some(k2), None) => {
                non_negative("couplings.kappa_sq", k2)?;
                shadowing(&mut warnings, "kappa_sq");
                (k2 * self.run.tau).sqrt()
            }
            (None, Some(kt2)) => {
                non_negative("couplings.kappa_tau_sq", kt2)?;
                shadowing(&mut warnings, "kappa_tau_sq");
                kt2.sqrt()
            }
            (None, None) => match &derived {
                Some(d) => d.kappa_tau,
                None => {
                    return Err(Error::Config(
                        "missing coupling: set couplings.kappa_sq, couplings.kappa_tau_sq, or a [physical] section"
                            .into(),
                    ))
                }
            },
        };

        let mu_tau = match (self.couplings.mu, self.couplings.mu_tau) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "specify only one of couplings.mu and couplings.mu_tau".into(),
                ))
            }
            (Some(mu), None) => {
                non_negative("couplings.mu", mu)?;
                shadowing(&mut warnings, "mu");
                mu * self.run.tau
            }
            (None, Some(mt)) => {
                non_negative("couplings.mu_tau", mt)?;
                shadowing(&mut warnings, "mu_tau");
                mt
            }
            (None, None) => derived.as_ref().map(|d| d.mu_tau).unwrap_or(0.0),
        };

        let (eta_tau, epsilon) = if self.options.decay {
            let eta_tau = if self.couplings.eta != 0.0 {
                non_negative("couplings.eta", self.couplings.eta)?;
                self.couplings.eta * self.run.tau
            } else {
                derived.as_ref().map(|d| d.eta_tau).unwrap_or(0.0)
            };
            let epsilon = if self.couplings.epsilon != 0.0 {
                non_negative("couplings.epsilon", self.couplings.epsilon)?;
                self.couplings.epsilon
            } else {
                derived.as_ref().map(|d| d.epsilon).unwrap_or(0.0)
            };
            (eta_tau, epsilon)
        } else {
            (0.0, 0.0)
        };
        if !(0.0..1.0).contains(&eta_tau) {
            return Err(Error::Config(format!("eta * tau = {eta_tau} outside [0, 1)")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon = {epsilon} outside [0, 1)")));
        }
        Ok((ResolvedCouplings { kappa_tau, mu_tau, eta_tau, epsilon }, warnings))
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        self.n_steps()?;
        if self.run.record_every == 0 {
            return Err(Error::Config("run.record_every must be at least 1".into()));
        }
        if self.run.trajectories == 0 {
            return Err(Error::Config("run.trajectories must be at least 1".into()));
        }
        if let SegmentConfig::Squeezed { r } = self.segment {
            if r <= 0.0 {
                return Err(Error::Config(format!("segment.r must be positive, got {r}")));
            }
        }
        if self.scenario == Scenario::Inhomogeneous {
            match &self.slices {
                None => {
                    return Err(Error::Config(
                        "missing [slices] section for the inhomogeneous scenario".into(),
                    ))
                }
                Some(s) if s.weights.is_empty() => {
                    return Err(Error::Config("slices.weights must not be empty".into()))
                }
                Some(s) if s.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) => {
                    return Err(Error::Config(
                        "slices.weights must be finite and nonnegative".into(),
                    ))
                }
                _ => {}
            }
        }
        let (_, warnings) = self.resolve_couplings()?;
        Ok(warnings)
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
    }
    Ok(())
}

/// One named time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

impl Series {
    fn new(name: &str) -> Self {
        Self { name: name.to_string(), values: Vec::new() }
    }
}

/// Recorded time series of one stochastic run. Variance-like series are
/// deterministic (identical across seeds); means and outcomes carry the
/// stochastic measurement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    pub variances: Vec<Series>,
    pub means: Vec<Series>,
    /// Outcome deviation (chi) of the measurement at each recorded step;
    /// NaN at t = 0 where nothing has been measured yet.
    pub outcomes: Vec<Series>,
    pub seed: u64,
    pub trajectory: u64,
}

impl TrajectoryResult {
    /// Equal-length and nonnegative-variance invariants.
    pub fn check(&self) -> Result<()> {
        let n = self.times.len();
        for s in self.variances.iter().chain(&self.means).chain(&self.outcomes) {
            if s.values.len() != n {
                return Err(Error::NumericalFailure(format!(
                    "series '{}' has {} points, expected {n}",
                    s.name,
                    s.values.len()
                )));
            }
        }
        for s in &self.variances {
            if s.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NumericalFailure(format!(
                    "variance series '{}' has a negative or non-finite entry",
                    s.name
                )));
            }
        }
        Ok(())
    }

    /// Look up a series by name across all three groups.
    pub fn series(&self, name: &str) -> Option<&Series> {
        self.variances
            .iter()
            .chain(&self.means)
            .chain(&self.outcomes)
            .find(|s| s.name == name)
    }

    /// Bit-level equality, treating NaN as equal to itself.
    pub fn bit_identical(&self, other: &Self) -> bool {
        fn names_and_bits(s: &[Series], o: &[Series]) -> bool {
            s.len() == o.len()
                && s.iter().zip(o).all(|(a, b)| a.name == b.name && bits_eq(&a.values, &b.values))
        }
        self.seed == other.seed
            && self.trajectory == other.trajectory
            && bits_eq(&self.times, &other.times)
            && names_and_bits(&self.variances, &other.variances)
            && names_and_bits(&self.means, &other.means)
            && names_and_bits(&self.outcomes, &other.outcomes)
    }
}

/// Element-wise f64 comparison by bit pattern (NaN-safe).
pub fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

struct Recorder {
    times: Vec<f64>,
    variances: Vec<Series>,
    means: Vec<Series>,
    outcomes: Vec<Series>,
    record_every: usize,
    n_steps: usize,
}

impl Recorder {
    fn new(
        var_names: &[&str],
        mean_names: &[&str],
        outcome_names: &[&str],
        record_every: usize,
        n_steps: usize,
    ) -> Self {
        Self {
            times: Vec::new(),
            variances: var_names.iter().map(|n| Series::new(n)).collect(),
            means: mean_names.iter().map(|n| Series::new(n)).collect(),
            outcomes: outcome_names.iter().map(|n| Series::new(n)).collect(),
            record_every,
            n_steps,
        }
    }

    fn due(&self, step_just_done: usize) -> bool {
        step_just_done % self.record_every == 0 || step_just_done == self.n_steps
    }

    fn push(&mut self, t: f64, vars: &[f64], means: &[f64], outcomes: &[f64]) {
        self.times.push(t);
        for (s, v) in self.variances.iter_mut().zip(vars) {
            s.values.push(*v);
        }
        for (s, v) in self.means.iter_mut().zip(means) {
            s.values.push(*v);
        }
        for (s, v) in self.outcomes.iter_mut().zip(outcomes) {
            s.values.push(*v);
        }
    }

    fn finish(self, seed: u64) -> Result<TrajectoryResult> {
        let result = TrajectoryResult {
            times: self.times,
            variances: self.variances,
            means: self.means,
            outcomes: self.outcomes,
            seed,
            trajectory: 0,
        };
        result.check()?;
        Ok(result)
    }
}

fn validate_if_due(state: &GaussianState, step: usize, every: usize) -> Result<()> {
    if every > 0 && step % every == 0 {
        let report = state.validate();
        if !report.pass {
            return Err(Error::InvalidState(format!(
                "physicality violated at step {step}: {}",
                report.failure.unwrap_or_default()
            )));
        }
    }
    Ok(())
}

/// Variance of the normalized quadrature combination `sum_i c_i q_i`.
fn combination_variance(state: &GaussianState, coeffs: &DVector<f64>) -> f64 {
    (coeffs.transpose() * state.cov() * coeffs)[(0, 0)] / 2.0
}

/// Single-ensemble Faraday probing; records the squeezed and antisqueezed
/// variances.
pub fn run_spin_squeezing(
    cfg: &ScenarioConfig,
    rng: &mut TrajectoryRng,
) -> Result<TrajectoryResult> {
    run_sliced_squeezing(cfg, rng, &[1.0], false)
}

/// Multi-slice Faraday probing with per-slice couplings; records the
/// collective symmetric-mode variance and the minimal eigenvalue of the
/// atomic covariance.
pub fn run_inhomogeneous(
    cfg: &ScenarioConfig,
    rng: &mut TrajectoryRng,
) -> Result<TrajectoryResult> {
    let weights = cfg
        .slices
        .as_ref()
        .map(|s| s.weights.clone())
        .ok_or_else(|| Error::Config("missing [slices] section".into()))?;
    run_sliced_squeezing(cfg, rng, &weights, true)
}

fn run_sliced_squeezing(
    cfg: &ScenarioConfig,
    rng: &mut TrajectoryRng,
    weights: &[f64],
    record_min_eig: bool,
) -> Result<TrajectoryResult> {
    let n_steps = cfg.n_steps()?;
    let (couplings, _) = cfg.resolve_couplings()?;
    let n = weights.len();
    let layout = ModeLayout::new(
        (0..n).map(|i| (format!("atoms{i}"), ModeKind::Atomic)).collect::<Vec<_>>(),
    )?;
    let mut state = GaussianState::new_vacuum(layout);
    let mut trackers: Vec<SpinTracker> = weights
        .iter()
        .map(|w| {
            SpinTracker::new(
                w * couplings.kappa_tau,
                couplings.eta_tau,
                cfg.options.kappa_decay_feedback,
            )
        })
        .collect::<Result<_>>()?;

    let builder = |layout: &ModeLayout, trackers: &[SpinTracker]| {
        let kappas: Vec<f64> = trackers.iter().map(|t| t.kappa_tau).collect();
        channels::build_faraday_s(layout, &kappas)
    };

    // Normalized symmetric combinations (the collective spin).
    let mut p_sym = DVector::zeros(2 * n);
    let mut x_sym = DVector::zeros(2 * n);
    for i in 0..n {
        p_sym[2 * i + 1] = 1.0 / (n as f64).sqrt();
        x_sym[2 * i] = 1.0 / (n as f64).sqrt();
    }

    let var_names: &[&str] = if record_min_eig {
        &["var_p_at", "var_x_at", "min_eig_var"]
    } else {
        &["var_p_at", "var_x_at"]
    };
    let mut rec =
        Recorder::new(var_names, &["mean_x_at", "mean_p_at"], &["chi"], cfg.run.record_every, n_steps);
    let record = |rec: &mut Recorder, state: &GaussianState, t: f64, chi: f64| {
        let var_p = combination_variance(state, &p_sym);
        let var_x = combination_variance(state, &x_sym);
        let mean_x = x_sym.dot(state.mean());
        let mean_p = p_sym.dot(state.mean());
        if record_min_eig {
            let (min_var, _) = metrics::min_variance_mode(state.cov());
            rec.push(t, &[var_p, var_x, min_var], &[mean_x, mean_p], &[chi]);
        } else {
            rec.push(t, &[var_p, var_x], &[mean_x, mean_p], &[chi]);
        }
    };
    record(&mut rec, &state, 0.0, f64::NAN);

    for step in 1..=n_steps {
        let (next, outcome) = measure::probe_cycle(
            &state,
            &mut trackers,
            &builder,
            couplings.epsilon,
            cfg.segment.kind(),
            cfg.run.tau,
            rng,
        )?;
        state = next;
        validate_if_due(&state, step, cfg.options.validate_every)?;
        if rec.due(step) {
            record(&mut rec, &state, step as f64 * cfg.run.tau, outcome.chi);
        }
    }
    rec.finish(cfg.run.seed)
}

/// Scalar magnetometry: a classical field component probed through the
/// Larmor drive of one atomic ensemble under continuous Faraday readout.
pub fn run_scalar_magnetometry(
    cfg: &ScenarioConfig,
    rng: &mut TrajectoryRng,
) -> Result<TrajectoryResult> {
    let n_steps = cfg.n_steps()?;
    let (couplings, _) = cfg.resolve_couplings()?;
    let layout = ModeLayout::new(vec![
        ("B".to_string(), ModeKind::ClassicalParameter),
        ("atoms".to_string(), ModeKind::Atomic),
    ])?;
    let mut state = GaussianState::new_vacuum(layout);
    state.cov_mut()[(0, 0)] = 2.0 * cfg.options.var_b0;
    state.cov_mut()[(1, 1)] = 2.0 * cfg.options.var_b_conjugate;
    let mut trackers = vec![SpinTracker::new(
        couplings.kappa_tau,
        couplings.eta_tau,
        cfg.options.kappa_decay_feedback,
    )?];
    let mu_tau = couplings.mu_tau;
    let builder = move |layout: &ModeLayout, trackers: &[SpinTracker]| {
        channels::build_magnetometer_s(layout, trackers[0].kappa_tau, mu_tau)
    };

    let mut rec = Recorder::new(
        &["var_B", "var_p_at", "var_x_at"],
        &["mean_B", "mean_p_at"],
        &["chi"],
        cfg.run.record_every,
        n_steps,
    );
    let record = |rec: &mut Recorder, state: &GaussianState, t: f64, chi: f64| {
        let g = state.cov();
        rec.push(
            t,
            &[g[(0, 0)] / 2.0, g[(3, 3)] / 2.0, g[(2, 2)] / 2.0],
            &[state.mean()[0], state.mean()[3]],
            &[chi],
        );
    };
    record(&mut rec, &state, 0.0, f64::NAN);

    for step in 1..=n_steps {
        let (next, outcome) = measure::probe_cycle(
            &state,
            &mut trackers,
            &builder,
            couplings.epsilon,
            cfg.segment.kind(),
            cfg.run.tau,
            rng,
        )?;
        state = next;
        validate_if_due(&state, step, cfg.options.validate_every)?;
        if rec.due(step) {
            record(&mut rec, &state, step as f64 * cfg.run.tau, outcome.chi);
        }
    }
    rec.finish(cfg.run.seed)
}

/// Two oppositely polarized ensembles probed by a shared beam; the layout
/// absorbs the sign of the second ensemble, so the light couples to the sum
/// mode `p1 + p2` and the probing entangles the cells.
pub fn run_entanglement(cfg: &ScenarioConfig, rng: &mut TrajectoryRng) -> Result<TrajectoryResult> {
    let n_steps = cfg.n_steps()?;
    let (couplings, _) = cfg.resolve_couplings()?;
    let layout = ModeLayout::new(vec![
        ("atoms1".to_string(), ModeKind::Atomic),
        ("atoms2".to_string(), ModeKind::Atomic),
    ])?;
    let mut state = GaussianState::new_vacuum(layout);
    let mut trackers = vec![
        SpinTracker::new(couplings.kappa_tau, couplings.eta_tau, cfg.options.kappa_decay_feedback)?,
        SpinTracker::new(couplings.kappa_tau, couplings.eta_tau, cfg.options.kappa_decay_feedback)?,
    ];
    // The composition S_1 S_2 of the per-ensemble couplings equals the
    // two-slice Faraday matrix with equal couplings (the generators
    // commute), so the shared-beam step reuses that builder.
    let builder = |layout: &ModeLayout, trackers: &[SpinTracker]| {
        let kappas: Vec<f64> = trackers.iter().map(|t| t.kappa_tau).collect();
        channels::build_faraday_s(layout, &kappas)
    };

    let mut p_sum = DVector::zeros(4);
    p_sum[1] = 1.0 / 2.0f64.sqrt();
    p_sum[3] = 1.0 / 2.0f64.sqrt();
    let mut x_diff = DVector::zeros(4);
    x_diff[0] = 1.0 / 2.0f64.sqrt();
    x_diff[2] = -1.0 / 2.0f64.sqrt();

    let mut rec = Recorder::new(
        &["epr_var", "log_negativity", "var_p_sum", "var_x_diff"],
        &["mean_p_sum"],
        &["chi"],
        cfg.run.record_every,
        n_steps,
    );
    let record = |rec: &mut Recorder, state: &GaussianState, t: f64, chi: f64| -> Result<()> {
        let epr = metrics::epr_variance(state, "atoms1", "atoms2", metrics::EprSigns::XMinusPPlus)?;
        let logneg = metrics::log_negativity(state, &["atoms2"])?;
        rec.push(
            t,
            &[
                epr,
                logneg,
                combination_variance(state, &p_sum),
                combination_variance(state, &x_diff),
            ],
            &[p_sum.dot(state.mean())],
            &[chi],
        );
        Ok(())
    };
    record(&mut rec, &state, 0.0, f64::NAN)?;

    for step in 1..=n_steps {
        let (next, outcome) = measure::probe_cycle(
            &state,
            &mut trackers,
            &builder,
            couplings.epsilon,
            cfg.segment.kind(),
            cfg.run.tau,
            rng,
        )?;
        state = next;
        validate_if_due(&state, step, cfg.options.validate_every)?;
        if rec.due(step) {
            record(&mut rec, &state, step as f64 * cfg.run.tau, outcome.chi)?;
        }
    }
    rec.finish(cfg.run.seed)
}

/// Two-cell vector magnetometry: both field components `B_y`, `B_z` probed
/// simultaneously by two beams, either through both cells (`Entangled`) or
/// one cell each (`Separate`). Beam 1 is read out in x, beam 2 in p.
pub fn run_vector_magnetometry(
    cfg: &ScenarioConfig,
    rng: &mut TrajectoryRng,
    mode: VectorMode,
) -> Result<TrajectoryResult> {
    let n_steps = cfg.n_steps()?;
    let (couplings, _) = cfg.resolve_couplings()?;
    let layout = ModeLayout::new(vec![
        ("Bz".to_string(), ModeKind::ClassicalParameter),
        ("By".to_string(), ModeKind::ClassicalParameter),
        ("atoms1".to_string(), ModeKind::Atomic),
        ("atoms2".to_string(), ModeKind::Atomic),
    ])?;
    let mut state = GaussianState::new_vacuum(layout);
    for b in 0..2 {
        state.cov_mut()[(2 * b, 2 * b)] = 2.0 * cfg.options.var_b0;
        state.cov_mut()[(2 * b + 1, 2 * b + 1)] = 2.0 * cfg.options.var_b_conjugate;
    }
    let mut trackers = vec![
        SpinTracker::new(couplings.kappa_tau, couplings.eta_tau, cfg.options.kappa_decay_feedback)?,
        SpinTracker::new(couplings.kappa_tau, couplings.eta_tau, cfg.options.kappa_decay_feedback)?,
    ];

    let (seg_mean, seg_cov) = measure::make_segment(cfg.segment.kind())?;
    let mut rec = Recorder::new(
        &["var_B_y", "var_B_z", "var_p_at1", "var_x_at1"],
        &["mean_B_y", "mean_B_z"],
        &["chi_beam1", "chi_beam2"],
        cfg.run.record_every,
        n_steps,
    );
    let record = |rec: &mut Recorder, state: &GaussianState, t: f64, chi1: f64, chi2: f64| {
        let g = state.cov();
        rec.push(
            t,
            &[g[(2, 2)] / 2.0, g[(0, 0)] / 2.0, g[(5, 5)] / 2.0, g[(4, 4)] / 2.0],
            &[state.mean()[2], state.mean()[0]],
            &[chi1, chi2],
        );
    };
    record(&mut rec, &state, 0.0, f64::NAN, f64::NAN);

    for step in 1..=n_steps {
        let attached = state
            .attach_mode("seg1", ModeKind::FieldSegment, seg_mean, seg_cov)?
            .attach_mode("seg2", ModeKind::FieldSegment, seg_mean, seg_cov)?;
        let kappa = trackers[0].kappa_tau;
        let s = match mode {
            VectorMode::Entangled => {
                channels::build_vector_mag_s(attached.layout(), kappa, couplings.mu_tau)?
            }
            VectorMode::Separate => {
                channels::build_vector_mag_separate_s(attached.layout(), kappa, couplings.mu_tau)?
            }
        };
        let (l, n) = channels::build_decay_ln(attached.layout(), &trackers, couplings.epsilon)?;
        let stepped = channels::step(
            &attached,
            &channels::StepMatrices { s, l_diag: l, n_diag: n, tau: cfg.run.tau },
        )?;
        let (after1, out1) = measure::homodyne_x(&stepped, "seg1", ChiSource::Rng(rng))?;
        let (after2, out2) = measure::homodyne_quadrature(
            &after1,
            "seg2",
            std::f64::consts::FRAC_PI_2,
            ChiSource::Rng(rng),
        )?;
        state = after2;
        for t in trackers.iter_mut() {
            *t = channels::advance_tracker(t);
        }
        validate_if_due(&state, step, cfg.options.validate_every)?;
        if rec.due(step) {
            record(&mut rec, &state, step as f64 * cfg.run.tau, out1.chi, out2.chi);
        }
    }
    rec.finish(cfg.run.seed)
}

/// Run the configured scenario for one trajectory index. The random stream
/// is derived from `(seed, trajectory)`, so results are reproducible and
/// independent of batching.
pub fn run_scenario(cfg: &ScenarioConfig, trajectory: u64) -> Result<TrajectoryResult> {
    let mut rng = TrajectoryRng::new(cfg.run.seed, trajectory);
    let mut result = match cfg.scenario {
        Scenario::SpinSqueezing => run_spin_squeezing(cfg, &mut rng),
        Scenario::Inhomogeneous => run_inhomogeneous(cfg, &mut rng),
        Scenario::ScalarMagnetometry => run_scalar_magnetometry(cfg, &mut rng),
        Scenario::Entanglement => run_entanglement(cfg, &mut rng),
        Scenario::VectorMagnetometry => {
            run_vector_magnetometry(cfg, &mut rng, cfg.options.vector_mode)
        }
    }?;
    result.trajectory = trajectory;
    Ok(result)
}

/// Run all configured trajectories in parallel, ordered by index.
pub fn run_batch(cfg: &ScenarioConfig) -> Result<Vec<TrajectoryResult>> {
    (0..cfg.run.trajectories as u64)
        .into_par_iter()
        .map(|i| run_scenario(cfg, i))
        .collect()
}
