//! Post-processing of simulated and measured spectra: dressed states of the
//! bimodal Λ system, the effective coupling, the single-parameter fit of the
//! coupling strength `g0`, its error budget, the Doppler correction and the
//! cavity-drive estimate.

pub mod optimize;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::angular::HalfInt;
use crate::atom::Manifold;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::spectroscopy::{
    emission_scan, extract_raman_shift, transmission_scan, DispersionGrid, DispersionPoint, SpectrumScan,
};

pub use optimize::{brent_minimize, Minimum, Pchip};

/// Eigen-decomposition of the first-excitation block spanned by
/// `|a,1,0⟩, |b,0,1⟩, |c,0,0⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct DressedSpectrum {
    /// `[−λ, 0, +λ]` (MHz).
    pub eigenvalues: [f64; 3],
    /// `eigenvectors[k]` belongs to `eigenvalues[k]`: `|u₋⟩, |u₀⟩, |u₊⟩`.
    pub eigenvectors: [[f64; 3]; 3],
    pub lambda: f64,
}

impl DressedSpectrum {
    pub fn dark_state(&self) -> [f64; 3] {
        self.eigenvectors[1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,eigenvalue_mhz,amp_a10,amp_b01,amp_c00\n");
        for (name, (e, v)) in ["u-", "u0", "u+"].iter().zip(self.eigenvalues.iter().zip(&self.eigenvectors)) {
            let _ = writeln!(out, "{name},{e},{},{},{}", v[0], v[1], v[2]);
        }
        out
    }
}

/// `H = g1 (|a,1,0⟩⟨c,0,0| + h.c.) + g2 (|b,0,1⟩⟨c,0,0| + h.c.)`.
pub fn dressed_states(g1: f64, g2: f64) -> Result<DressedSpectrum> {
    if !(g1.is_finite() && g2.is_finite()) || (g1 == 0.0 && g2 == 0.0) {
        return Err(Error::InvalidInput("dressed states need finite (g1, g2) not both zero".into()));
    }
    let lambda = g1.hypot(g2);
    let (va, vb) = (g1 / lambda, g2 / lambda);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Ok(DressedSpectrum {
        eigenvalues: [-lambda, 0.0, lambda],
        eigenvectors: [[va * r, vb * r, -r], [vb, -va, 0.0], [va * r, vb * r, r]],
        lambda,
    })
}

/// Clebsch–Gordan factors of the two cavity-coupled legs of the Λ system
/// `|D,−3/2⟩ ↔ |P,−1/2⟩ ↔ |D,+1/2⟩` (σ₊ and σ₋ photons respectively).
pub fn lambda_system_coefficients() -> Result<(f64, f64)> {
    let scheme = SystemConfig::default().level_scheme();
    let dj = scheme.spec(Manifold::D)?.j;
    let pj = scheme.spec(Manifold::P)?.j;
    let mp = HalfInt::from_twice(-1);
    let c1 = crate::angular::clebsch_gordan(dj, HalfInt::from_twice(-3), 1, pj, mp)?;
    let c2 = crate::angular::clebsch_gordan(dj, HalfInt::from_twice(1), -1, pj, mp)?;
    Ok((c1.abs(), c2.abs()))
}

/// Effective coupling `λ = g0 √(c1² + c2²)`.
pub fn effective_coupling(g0: f64) -> Result<f64> {
    if !(g0 >= 0.0) {
        return Err(Error::InvalidInput(format!("g0 must be non-negative, got {g0}")));
    }
    let (c1, c2) = lambda_system_coefficients()?;
    Ok(g0 * c1.hypot(c2))
}

/// Coupling averaged over a Gaussian position spread `delta_z_nm` along the
/// standing wave of wavelength `wavelength_nm`.
pub fn doppler_corrected_g0(g0_ideal: f64, delta_z_nm: f64, wavelength_nm: f64) -> Result<f64> {
    if !(g0_ideal >= 0.0 && delta_z_nm >= 0.0 && wavelength_nm > 0.0) || !g0_ideal.is_finite() {
        return Err(Error::InvalidInput(format!(
            "need g0_ideal >= 0, delta_z >= 0, wavelength > 0 (got {g0_ideal}, {delta_z_nm}, {wavelength_nm})"
        )));
    }
    let k = std::f64::consts::TAU / wavelength_nm;
    let kz = k * delta_z_nm;
    Ok(g0_ideal * ((1.0 + (-kz * kz).exp()) / 2.0).sqrt())
}

/// One measured point of the Raman-shift dispersion curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftMeasurement {
    pub delta_p: f64,
    pub delta: f64,
    pub error: Option<f64>,
}

impl From<DispersionPoint> for ShiftMeasurement {
    fn from(p: DispersionPoint) -> Self {
        ShiftMeasurement {
            delta_p: p.delta_p,
            delta: p.delta,
            error: Some(p.error),
        }
    }
}

/// Parses `delta_p_mhz,delta_mhz[,delta_error_mhz,...]` rows; `#` lines, a
/// non-numeric header row and columns past the third are skipped.
pub fn parse_shift_csv(text: &str) -> Result<Vec<ShiftMeasurement>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |i: usize| f.get(i).and_then(|s| s.parse::<f64>().ok());
        if out.is_empty() && num(0).is_none() {
            continue;
        }
        let (Some(delta_p), Some(delta)) = (num(0), num(1)) else {
            return Err(Error::Parse(format!(
                "line {}: expected delta_p,delta[,error], got `{line}`",
                k + 1
            )));
        };
        let error = match f.get(2) {
            None | Some(&"") => None,
            Some(s) => Some(s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: `{s}`: {e}", k + 1)))?),
        };
        out.push(ShiftMeasurement { delta_p, delta, error });
    }
    Ok(out)
}

/// Forward model for the shift curve `δ(Δp)` at trial coupling `g0`.
pub trait DispersionModel: Sync {
    fn shifts(&self, g0: f64, delta_p: &[f64]) -> Result<Vec<f64>>;
}

/// Full master-equation forward model with a per-`(g0, Δp)` cache.
pub struct SimulatedDispersion {
    cfg: SystemConfig,
    grid: DispersionGrid,
    cache: Mutex<HashMap<(u64, u64), f64>>,
}

impl SimulatedDispersion {
    pub fn new(cfg: SystemConfig, grid: DispersionGrid) -> Self {
        SimulatedDispersion {
            cfg,
            grid,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_points(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    fn simulate(&self, g0: f64, dp: f64) -> Result<f64> {
        let mut cfg = self.cfg.clone();
        cfg.g0 = g0;
        let axis: Vec<f64> = self.grid.offsets.iter().map(|o| dp + o).collect();
        let scan = emission_scan(&cfg, dp, &axis)?;
        Ok(extract_raman_shift(&scan, dp)?.delta)
    }
}

impl DispersionModel for SimulatedDispersion {
    fn shifts(&self, g0: f64, delta_p: &[f64]) -> Result<Vec<f64>> {
        let key = |dp: f64| (g0.to_bits(), dp.to_bits());
        let missing: Vec<f64> = {
            let cache = self.cache.lock().expect("cache poisoned");
            delta_p.iter().copied().filter(|&dp| !cache.contains_key(&key(dp))).collect()
        };
        let fresh: Vec<Result<f64>> = missing.par_iter().map(|&dp| self.simulate(g0, dp)).collect();
        let mut cache = self.cache.lock().expect("cache poisoned");
        for (&dp, r) in missing.iter().zip(fresh) {
            cache.insert(key(dp), r?);
        }
        Ok(delta_p.iter().map(|&dp| cache[&key(dp)]).collect())
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Search bracket for `g0` (MHz).
    pub bracket: (f64, f64),
    pub tolerance: f64,
    pub max_evaluations: usize,
    /// Objective slopes below this over the whole bracket count as flat.
    pub flat_slope: f64,
    /// Step for the curvature estimate behind the standard error.
    pub curvature_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            bracket: (5.0, 25.0),
            tolerance: 1e-4,
            max_evaluations: 80,
            flat_slope: 1e-10,
            curvature_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub g0: f64,
    pub std_error: f64,
    pub chi2: f64,
    pub chi2_per_dof: f64,
    pub evaluations: usize,
    /// Minimum within a few tolerances of a bracket end.
    pub at_bracket_edge: bool,
    pub weighted: bool,
}

impl FitResult {
    pub fn to_csv(&self) -> String {
        format!(
            "g0_mhz,g0_error_mhz,chi2,chi2_per_dof,evaluations,at_bracket_edge,weighted\n{},{},{},{},{},{},{}\n",
            self.g0,
            self.std_error,
            self.chi2,
            self.chi2_per_dof,
            self.evaluations,
            self.at_bracket_edge,
            self.weighted
        )
    }
}

fn chi2(model: &dyn DispersionModel, data: &[ShiftMeasurement], weights: &[f64], g0: f64) -> Result<f64> {
    let dps: Vec<f64> = data.iter().map(|m| m.delta_p).collect();
    let sim = model.shifts(g0, &dps)?;
    Ok(data
        .iter()
        .zip(sim)
        .zip(weights)
        .map(|((m, s), w)| w * (m.delta - s).powi(2))
        .sum())
}

/// One-parameter least-squares fit of `g0` to a measured shift curve.
/// Weights are `1/error²` when every point carries an error, uniform otherwise.
pub fn fit_g0(data: &[ShiftMeasurement], model: &dyn DispersionModel, opts: &FitOptions) -> Result<FitResult> {
    if data.len() < 5 {
        return Err(Error::InvalidInput(format!("need at least 5 shift points, got {}", data.len())));
    }
    let weighted = data.iter().all(|m| m.error.is_some_and(|e| e > 0.0));
    let weights: Vec<f64> = if weighted {
        data.iter().map(|m| m.error.map_or(1.0, |e| 1.0 / (e * e))).collect()
    } else {
        vec![1.0; data.len()]
    };
    let (lo, hi) = opts.bracket;
    let min = brent_minimize(
        |g| chi2(model, data, &weights, g),
        lo,
        hi,
        opts.tolerance,
        opts.max_evaluations,
    )?;
    let mut pts = min.evaluations.clone();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let max_slope = pts
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
        .fold(0.0, f64::max);
    if max_slope < opts.flat_slope {
        return Err(Error::FlatObjective { max_slope });
    }
    let h = opts.curvature_step;
    let g = min.x;
    let (a, b) = ((g - h).max(lo), (g + h).min(hi));
    let (fa, fb) = (chi2(model, data, &weights, a)?, chi2(model, data, &weights, b)?);
    // second derivative on a possibly uneven three-point stencil
    let curv = 2.0 * ((fb - min.fx) / (b - g) - (min.fx - fa) / (g - a)) / (b - a);
    let dof = (data.len() - 1) as f64;
    let scale = if weighted { 1.0 } else { min.fx / dof };
    let std_error = if curv > 0.0 { (2.0 * scale / curv).sqrt() } else { f64::INFINITY };
    let edge = 10.0 * opts.tolerance;
    Ok(FitResult {
        g0: g,
        std_error,
        chi2: min.fx,
        chi2_per_dof: min.fx / dof,
        evaluations: min.evaluations.len() + 2,
        at_bracket_edge: g - lo < edge || hi - g < edge,
        weighted,
    })
}

/// Copy of `cfg` with one numeric key replaced.
pub fn with_parameter(cfg: &SystemConfig, key: &str, value: f64) -> Result<SystemConfig> {
    let mut table = cfg.to_table();
    match table.get(key) {
        Some(toml::Value::Float(_)) => {
            table.insert(key.to_string(), toml::Value::Float(value));
        }
        Some(_) => return Err(Error::InvalidInput(format!("`{key}` is not a real-valued parameter"))),
        None => return Err(Error::InvalidInput(format!("unknown parameter `{key}`"))),
    }
    SystemConfig::from_table(&mut table).map_err(Error::Config)
}

pub fn parameter_value(cfg: &SystemConfig, key: &str) -> Result<f64> {
    match cfg.to_table().get(key) {
        Some(toml::Value::Float(v)) => Ok(*v),
        _ => Err(Error::InvalidInput(format!("`{key}` is not a real-valued parameter"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub parameter: String,
    pub parameter_error: f64,
    /// `|Δg0/Δp|` from refits at `p ± error`.
    pub gradient: f64,
    /// Same gradient from refits at `p ± error/2`.
    pub gradient_half: f64,
    pub contribution: f64,
    /// The two gradients agree within 10 %.
    pub linear: bool,
    /// Refit failure, if any; such rows are left out of the combined error.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBudget {
    pub rows: Vec<BudgetRow>,
    pub combined_error: f64,
    pub fitted_g0: f64,
}

const LINEARITY_TOL: f64 = 0.10;

impl ErrorBudget {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,parameter_error,gradient,gradient_half_step,contribution,linear,failure\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.parameter,
                r.parameter_error,
                r.gradient,
                r.gradient_half,
                r.contribution,
                r.linear,
                r.failure.as_deref().unwrap_or("").replace(',', ";")
            );
        }
        let _ = writeln!(out, "combined,,,,{},,", self.combined_error);
        out
    }

    /// Plain-text table: Parameter, Error of param., Gradient, Error budget for g0.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<22} {:>16} {:>12} {:>24}\n",
            "Parameter", "Error of param.", "Gradient", "Error budget for g0"
        );
        for r in &self.rows {
            match &r.failure {
                None => {
                    let _ = writeln!(
                        out,
                        "{:<22} {:>16.4} {:>12.4} {:>24.4}",
                        r.parameter, r.parameter_error, r.gradient, r.contribution
                    );
                }
                Some(_) => {
                    let _ = writeln!(
                        out,
                        "{:<22} {:>16.4} {:>12} {:>24}",
                        r.parameter, r.parameter_error, "invalid", "invalid"
                    );
                }
            }
        }
        let _ = writeln!(out, "{:<22} {:>16} {:>12} {:>24.4}", "combined", "", "", self.combined_error);
        out
    }
}

/// Propagates parameter errors to `g0`: each parameter is shifted by ±error
/// and ±error/2, `refit` returns the refitted `g0`, and the gradient comes
/// from the symmetric difference.
pub fn error_budget<F>(cfg: &SystemConfig, fitted_g0: f64, parameter_errors: &[(String, f64)], refit: F) -> ErrorBudget
where
    F: Fn(&SystemConfig) -> Result<f64> + Sync,
{
    let rows: Vec<BudgetRow> = parameter_errors
        .par_iter()
        .map(|(name, err)| budget_row(cfg, name, *err, &refit))
        .collect();
    let combined_error = rows
        .iter()
        .filter(|r| r.failure.is_none())
        .map(|r| r.contribution * r.contribution)
        .sum::<f64>()
        .sqrt();
    ErrorBudget {
        rows,
        combined_error,
        fitted_g0,
    }
}

fn budget_row<F>(cfg: &SystemConfig, name: &str, err: f64, refit: &F) -> BudgetRow
where
    F: Fn(&SystemConfig) -> Result<f64> + Sync,
{
    let gradient_at = |step: f64| -> Result<f64> {
        let p0 = parameter_value(cfg, name)?;
        let plus = refit(&with_parameter(cfg, name, p0 + step)?)?;
        let minus = refit(&with_parameter(cfg, name, p0 - step)?)?;
        Ok(((plus - minus) / (2.0 * step)).abs())
    };
    let mut row = BudgetRow {
        parameter: name.to_string(),
        parameter_error: err,
        gradient: f64::NAN,
        gradient_half: f64::NAN,
        contribution: f64::NAN,
        linear: false,
        failure: None,
    };
    if !(err > 0.0) {
        row.failure = Some(format!("parameter error must be positive, got {err}"));
        return row;
    }
    match gradient_at(err).and_then(|g| Ok((g, gradient_at(err / 2.0)?))) {
        Ok((g, gh)) => {
            row.gradient = g;
            row.gradient_half = gh;
            row.contribution = g * err;
            let scale = g.max(gh);
            row.linear = scale == 0.0 || (g - gh).abs() <= LINEARITY_TOL * scale;
        }
        Err(e) => row.failure = Some(e.to_string()),
    }
    row
}

/// Refit used by the simulated error budget: the perturbed model is fitted in
/// a narrow bracket around the nominal estimate.
pub fn simulated_refit<'a>(
    data: &'a [ShiftMeasurement],
    grid: &DispersionGrid,
    around: f64,
    half_width: f64,
    tolerance: f64,
) -> impl Fn(&SystemConfig) -> Result<f64> + Sync + 'a {
    let grid = grid.clone();
    move |cfg: &SystemConfig| {
        let model = SimulatedDispersion::new(cfg.clone(), grid.clone());
        let opts = FitOptions {
            bracket: (around - half_width, around + half_width),
            tolerance,
            ..FitOptions::default()
        };
        let fit = fit_g0(data, &model, &opts)?;
        if fit.at_bracket_edge {
            return Err(Error::FitNonConvergence(format!(
                "refit hit the edge of [{}, {}]",
                opts.bracket.0, opts.bracket.1
            )));
        }
        Ok(fit.g0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveEstimate {
    pub drive_e: f64,
    /// `(E, peak ratio)` pairs of the computed calibration curve.
    pub curve: Vec<(f64, f64)>,
}

impl DriveEstimate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("drive_e_mhz,peak_ratio\n");
        for (e, r) in &self.curve {
            let _ = writeln!(out, "{e},{r}");
        }
        out
    }
}

/// `n` log-spaced drive amplitudes over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect(),
    }
}

pub fn default_drive_grid() -> Vec<f64> {
    log_grid(0.005, 0.1, 20)
}

fn peak(scan: &SpectrumScan) -> f64 {
    scan.signals().into_iter().fold(0.0, f64::max)
}

/// Ratio of the transmission peak with the ion to the one without, at drive `E`.
pub fn peak_ratio(cfg: &SystemConfig, drive_e: f64, probe_grid: &[f64]) -> Result<f64> {
    let mut with_ion = cfg.clone();
    with_ion.drive_e = drive_e;
    with_ion.sim.ion_present = true;
    let mut without = with_ion.clone();
    without.sim.ion_present = false;
    let a = peak(&transmission_scan(&with_ion, probe_grid)?);
    let b = peak(&transmission_scan(&without, probe_grid)?);
    if !(b > 0.0) {
        return Err(Error::Solver("empty-cavity transmission vanished".into()));
    }
    Ok(a / b)
}

/// Drive amplitude whose computed peak ratio matches `ratio`, by monotone
/// interpolation of the ratio-versus-`E` curve.
pub fn estimate_drive_amplitude(
    ratio: f64,
    cfg: &SystemConfig,
    drive_grid: &[f64],
    probe_grid: &[f64],
) -> Result<DriveEstimate> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidInput(format!("peak ratio must lie in (0, 1], got {ratio}")));
    }
    if drive_grid.len() < 2 || drive_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("drive grid needs at least two increasing values".into()));
    }
    let ratios = drive_grid
        .iter()
        .map(|&e| peak_ratio(cfg, e, probe_grid))
        .collect::<Result<Vec<f64>>>()?;
    let curve: Vec<(f64, f64)> = drive_grid.iter().copied().zip(ratios.iter().copied()).collect();
    if ratios.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::FitNonConvergence(format!(
            "peak ratio is not strictly increasing in E over the grid: {ratios:?}"
        )));
    }
    let inverse = Pchip::new(ratios, drive_grid.to_vec())?;
    let drive_e = inverse.eval(ratio)?;
    Ok(DriveEstimate { drive_e, curve })
}
