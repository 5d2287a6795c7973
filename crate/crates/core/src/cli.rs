//! Config-driven scenario runner: TOML config parsing, reproducible CSV time
//! series, run manifests, and post-run summaries (final values, minimum
//! location, log-log slope fits).
//!
//! CSV format: one header row; '.' decimal separator; every float written in
//! scientific notation with 17 significant digits, so identical runs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::riccati;
use crate::scenarios::{self, Scenario, ScenarioConfig, TrajectoryResult};
use crate::wigner::WignerGrid;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GAUSIM_OUT_DIR";

/// Record of one completed run, written as `manifest.json` next to the data
/// files. The embedded config snapshot (defaults resolved) is sufficient to
/// reproduce the outputs bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub engine_version: String,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

/// Parse and validate a TOML config file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Parse and validate a TOML config from a string.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a config back to TOML. `parse_config_str(emit_config(c)) == c`.
pub fn emit_config(cfg: &ScenarioConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))
}

/// How multi-trajectory runs are laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrajectoryLayout {
    /// One CSV with per-trajectory mean/outcome columns.
    #[default]
    Columns,
    /// One CSV per trajectory.
    Files,
}

/// Options for [`run`] beyond the scenario config itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub layout: TrajectoryLayout,
    /// Also emit the closed-form noiseless curves at the recorded times
    /// (spin squeezing and scalar magnetometry).
    pub analytic: bool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render trajectories into the column-layout CSV: the deterministic
/// variance series once, then per-trajectory mean and outcome columns.
fn render_columns_csv(results: &[TrajectoryResult]) -> String {
    let first = &results[0];
    let mut out = String::new();
    out.push_str("time");
    for s in &first.variances {
        write!(out, ",{}", s.name).unwrap();
    }
    let multi = results.len() > 1;
    for r in results {
        for s in r.means.iter().chain(&r.outcomes) {
            if multi {
                write!(out, ",{}_t{}", s.name, r.trajectory).unwrap();
            } else {
                write!(out, ",{}", s.name).unwrap();
            }
        }
    }
    out.push('\n');
    for i in 0..first.times.len() {
        out.push_str(&fmt_f64(first.times[i]));
        for s in &first.variances {
            out.push(',');
            out.push_str(&fmt_f64(s.values[i]));
        }
        for r in results {
            for s in r.means.iter().chain(&r.outcomes) {
                out.push(',');
                out.push_str(&fmt_f64(s.values[i]));
            }
        }
        out.push('\n');
    }
    out
}

fn render_single_csv(result: &TrajectoryResult) -> String {
    render_columns_csv(std::slice::from_ref(result))
}

/// Execute a configured run and write CSV outputs plus `manifest.json` into
/// `out_dir` (created if missing). Returns the manifest.
pub fn run(cfg: &ScenarioConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest> {
    let mut warnings = cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let results = scenarios::run_batch(cfg)?;
    let mut outputs = Vec::new();

    match opts.layout {
        TrajectoryLayout::Columns => {
            let path = out_dir.join(format!("{}.csv", cfg.scenario.name()));
            write_atomic(&path, render_columns_csv(&results).as_bytes())?;
            outputs.push(path.display().to_string());
        }
        TrajectoryLayout::Files => {
            for r in &results {
                let path = out_dir.join(format!("{}_t{}.csv", cfg.scenario.name(), r.trajectory));
                write_atomic(&path, render_single_csv(r).as_bytes())?;
                outputs.push(path.display().to_string());
            }
        }
    }

    if opts.analytic {
        match analytic_curves(cfg, &results[0].times)? {
            Some(csv) => {
                let path = out_dir.join(format!("{}_analytic.csv", cfg.scenario.name()));
                write_atomic(&path, csv.as_bytes())?;
                outputs.push(path.display().to_string());
            }
            None => warnings.push(format!(
                "no closed-form curves available for scenario {}",
                cfg.scenario.name()
            )),
        }
    }

    let manifest = RunManifest {
        scenario: cfg.scenario.name().to_string(),
        config: cfg.clone(),
        seed: cfg.run.seed,
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        outputs,
        warnings,
    };
    let manifest_path = out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::NumericalFailure(format!("manifest serialization: {e}")))?;
    write_atomic(&manifest_path, body.as_bytes())?;
    Ok(manifest)
}

/// Closed-form noiseless curves at the given times, where defined.
fn analytic_curves(cfg: &ScenarioConfig, times: &[f64]) -> Result<Option<String>> {
    let (couplings, _) = cfg.resolve_couplings()?;
    let kappa_sq = couplings.kappa_tau * couplings.kappa_tau / cfg.run.tau;
    let mut out = String::new();
    match cfg.scenario {
        Scenario::SpinSqueezing => {
            out.push_str("time,var_p_at,var_x_at\n");
            for &t in times {
                let v = riccati::analytic_spin_var(kappa_sq, t, 0.5);
                writeln!(out, "{},{},{}", fmt_f64(t), fmt_f64(v.p), fmt_f64(v.x)).unwrap();
            }
        }
        Scenario::ScalarMagnetometry => {
            let mu = couplings.mu_tau / cfg.run.tau;
            out.push_str("time,var_B\n");
            for &t in times {
                let v = riccati::analytic_b_var(kappa_sq, mu, t, cfg.options.var_b0);
                writeln!(out, "{},{}", fmt_f64(t), fmt_f64(v)).unwrap();
            }
        }
        _ => return Ok(None),
    }
    Ok(Some(out))
}

/// Export a Wigner grid as `x,p,value` rows.
pub fn write_wigner_csv(grid: &WignerGrid, path: &Path) -> Result<()> {
    let mut out = String::from("x,p,value\n");
    for (ix, &x) in grid.x_axis.iter().enumerate() {
        for (ip, &p) in grid.p_axis.iter().enumerate() {
            writeln!(out, "{},{},{}", fmt_f64(x), fmt_f64(p), fmt_f64(grid.value(ix, ip)))
                .unwrap();
        }
    }
    write_atomic(path, out.as_bytes())
}

/// A parsed CSV: header names and per-column values.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.data[i].as_slice())
    }
}

/// Read a CSV produced by this module.
pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty CSV", path.display())))?;
    let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Config(format!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                lineno + 2,
                fields.len(),
                columns.len()
            )));
        }
        for (i, f) in fields.iter().enumerate() {
            let v = f.parse::<f64>().map_err(|e| {
                Error::Config(format!("{}: line {}: {e}", path.display(), lineno + 2))
            })?;
            data[i].push(v);
        }
    }
    Ok(CsvTable { columns, data })
}

/// Least-squares slope of `ln(value)` against `ln(time)` over a time window.
pub fn fit_loglog_slope(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t >= window.0 && t <= window.1 && t > 0.0 {
            if !(v > 0.0) {
                return Err(Error::NumericalFailure(format!(
                    "log-log fit needs positive values, got {v} at t = {t}"
                )));
            }
            xs.push(t.ln());
            ys.push(v.ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::NumericalFailure(format!(
            "log-log fit window [{}, {}] contains {} points, need at least 2",
            window.0,
            window.1,
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    Ok(sxy / sxx)
}

/// Post-run summary of one CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    /// Last value of every column except time.
    pub final_values: Vec<(String, f64)>,
    /// Time and value of the minimum of `var_p_at`, when that column exists,
    /// with a flag marking whether the minimum is interior to the window.
    pub var_p_minimum: Option<MinimumReport>,
    /// Fitted log-log slope over the flagged window.
    pub slope: Option<SlopeReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimumReport {
    pub t_min: f64,
    pub value: f64,
    pub interior: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeReport {
    pub series: String,
    pub window: (f64, f64),
    pub slope: f64,
}

/// Summarize a result CSV: final values, the minimum of `var_p_at` when
/// present, and optionally a log-log slope over `window` for `slope_series`
/// (default `var_B` when present, else `var_p_at`).
pub fn summarize(
    path: &Path,
    slope_series: Option<&str>,
    window: Option<(f64, f64)>,
) -> Result<Summary> {
    let table = read_csv(path)?;
    let times = table
        .column("time")
        .ok_or_else(|| Error::Config(format!("{}: no time column", path.display())))?
        .to_vec();
    let mut final_values = Vec::new();
    for (name, col) in table.columns.iter().zip(&table.data) {
        if name != "time" {
            if let Some(&last) = col.last() {
                final_values.push((name.clone(), last));
            }
        }
    }
    let var_p_minimum = table.column("var_p_at").map(|col| {
        let (imin, vmin) = col
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        MinimumReport {
            t_min: times[imin],
            value: vmin,
            interior: imin > 0 && imin + 1 < col.len(),
        }
    });
    let slope = match window {
        Some(w) => {
            let name = slope_series
                .map(|s| s.to_string())
                .or_else(|| table.column("var_B").map(|_| "var_B".to_string()))
                .or_else(|| table.column("var_p_at").map(|_| "var_p_at".to_string()))
                .ok_or_else(|| {
                    Error::Config("no series available for the slope fit".into())
                })?;
            let col = table
                .column(&name)
                .ok_or_else(|| Error::Config(format!("no column named '{name}'")))?;
            Some(SlopeReport { series: name.clone(), window: w, slope: fit_loglog_slope(&times, col, w)? })
        }
        None => None,
    };
    Ok(Summary { final_values, var_p_minimum, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MINIMAL: &str = r#"
scenario = "spin-squeezing"

[run]
tau = 1e-8
duration = 1e-5

[couplings]
kappa_sq = 1.83e6
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.scenario, Scenario::SpinSqueezing);
        assert_eq!(cfg.run.record_every, 1000);
        assert_eq!(cfg.run.trajectories, 1);
        assert_eq!(cfg.run.seed, 0);
        assert!(cfg.options.decay);
        assert_eq!(cfg.options.var_b_conjugate, 1e6);
    }

    #[test]
    fn unknown_key_is_named() {
        let bad = format!("{MINIMAL}\n[options]\nbogus_key = 3\n");
        let err = parse_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn missing_required_key_is_named() {
        let bad = r#"
scenario = "spin-squeezing"
[run]
tau = 1e-8
"#;
        let err = parse_config_str(bad).unwrap_err();
        assert!(err.to_string().contains("duration"), "{err}");
    }

    #[test]
    fn non_integer_step_count_rejected() {
        let bad = MINIMAL.replace("duration = 1e-5", "duration = 1.05e-8");
        let err = parse_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("integer multiple"), "{err}");
    }

    #[test]
    fn config_round_trip() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let emitted = emit_config(&cfg).unwrap();
        let back = parse_config_str(&emitted).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn shipped_fig4_style_config_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs/scalar_magnetometry.toml");
        let cfg = parse_config(&path).unwrap();
        assert_eq!(cfg.scenario, Scenario::ScalarMagnetometry);
        assert_eq!(cfg.run.tau, 1e-8);
        let (c, _) = cfg.resolve_couplings().unwrap();
        assert_relative_eq!(c.kappa_tau * c.kappa_tau, 0.0183, max_relative = 1e-12);
        assert_relative_eq!(c.mu_tau, 8.8e-4, max_relative = 1e-12);
    }

    #[test]
    fn run_writes_reproducible_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config_str(MINIMAL).unwrap();
        let manifest = run(&cfg, dir.path(), &RunOptions::default()).unwrap();
        assert_eq!(manifest.outputs.len(), 1);
        let csv_path = Path::new(&manifest.outputs[0]);
        let first = fs::read(csv_path).unwrap();
        run(&cfg, dir.path(), &RunOptions::default()).unwrap();
        let second = fs::read(csv_path).unwrap();
        assert_eq!(first, second);
        // Final var_p matches the closed form.
        let table = read_csv(csv_path).unwrap();
        let vp = table.column("var_p_at").unwrap();
        let expected = riccati::analytic_spin_var(1.83e6, 1e-5, 0.5).p;
        assert_relative_eq!(*vp.last().unwrap(), expected, max_relative = 1e-6);
        // Manifest exists and echoes the seed.
        let m: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(m.seed, cfg.run.seed);
    }

    #[test]
    fn trajectory_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = parse_config_str(MINIMAL).unwrap();
        cfg.run.trajectories = 3;
        let manifest = run(&cfg, dir.path(), &RunOptions::default()).unwrap();
        let table = read_csv(Path::new(&manifest.outputs[0])).unwrap();
        let chi_cols: Vec<_> =
            table.columns.iter().filter(|c| c.starts_with("chi_t")).collect();
        assert_eq!(chi_cols.len(), 3);

        let manifest = run(
            &cfg,
            dir.path(),
            &RunOptions { layout: TrajectoryLayout::Files, analytic: false },
        )
        .unwrap();
        assert_eq!(manifest.outputs.len(), 3);
        for p in &manifest.outputs {
            assert!(Path::new(p).exists());
        }
    }

    #[test]
    fn analytic_curves_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config_str(MINIMAL).unwrap();
        let manifest =
            run(&cfg, dir.path(), &RunOptions { analytic: true, ..Default::default() }).unwrap();
        let analytic = manifest.outputs.iter().find(|p| p.contains("analytic")).unwrap();
        let table = read_csv(Path::new(analytic)).unwrap();
        assert!(table.column("var_p_at").is_some());
    }

    #[test]
    fn physical_and_explicit_couplings_warns_in_manifest() {
        let text = format!(
            "{MINIMAL}
[physical]
gamma = 3.14159e7
lambda = 852e-9
delta = 6.28e10
area = 2e-6
phi = 5e14
n_atoms = 2e12
tau = 1e-8
"
        );
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config_str(&text).unwrap();
        let manifest = run(&cfg, dir.path(), &RunOptions::default()).unwrap();
        assert!(manifest.warnings.iter().any(|w| w.contains("overrides")));
    }

    #[test]
    fn slope_fit_reference_cases() {
        // Synthetic magnetometry curve from the closed form: slope -3.
        let times: Vec<f64> = (1..=100).map(|i| 0.5e-3 + 4.5e-3 * i as f64 / 100.0).collect();
        let values: Vec<f64> =
            times.iter().map(|&t| riccati::analytic_b_var(1.83e6, 8.8e4, t, 1.0)).collect();
        let slope = fit_loglog_slope(&times, &values, (0.5e-3, 5e-3)).unwrap();
        assert!((slope + 3.0).abs() < 0.05, "slope = {slope}");
        // Flat series: slope 0.
        let flat = vec![0.25; times.len()];
        let slope = fit_loglog_slope(&times, &flat, (0.5e-3, 5e-3)).unwrap();
        assert!(slope.abs() < 1e-12);
        // Too-narrow window errors.
        assert!(fit_loglog_slope(&times, &values, (1.0, 2.0)).is_err());
    }

    #[test]
    fn summarize_reports_minimum_and_slope() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let mut csv = String::from("time,var_p_at,var_B\n");
        // V-shaped var_p_at with an interior minimum at t = 3; var_B falls
        // like 1/t.
        for i in 1..=5 {
            let t = i as f64;
            let vp = (t - 3.0).abs() + 1.0;
            writeln!(csv, "{t},{vp},{}", 1.0 / t).unwrap();
        }
        fs::write(&path, csv).unwrap();
        let summary = summarize(&path, None, Some((1.0, 5.0))).unwrap();
        let min = summary.var_p_minimum.unwrap();
        assert_eq!(min.t_min, 3.0);
        assert!(min.interior);
        let slope = summary.slope.unwrap();
        assert_eq!(slope.series, "var_B");
        assert_relative_eq!(slope.slope, -1.0, max_relative = 1e-10);
        assert!(summary.final_values.iter().any(|(n, v)| n == "var_B" && *v == 0.2));
    }

    #[test]
    fn nan_outcome_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config_str(MINIMAL).unwrap();
        let manifest = run(&cfg, dir.path(), &RunOptions::default()).unwrap();
        let table = read_csv(Path::new(&manifest.outputs[0])).unwrap();
        let chi = table.column("chi").unwrap();
        assert!(chi[0].is_nan());
        assert!(chi[1..].iter().all(|v| v.is_finite()));
    }
}
