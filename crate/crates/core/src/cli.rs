//! Batch front end: load a flat TOML config, run one protocol, write CSV
//! outputs and a JSON run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use toml::{Table, Value};

use crate::analysis::{
    default_drive_grid, doppler_corrected_g0, dressed_states, effective_coupling, error_budget,
    estimate_drive_amplitude, fit_g0, lambda_system_coefficients, log_grid, parse_shift_csv, simulated_refit,
    DispersionModel, FitOptions, ShiftMeasurement, SimulatedDispersion,
};
use crate::config::{hash_hex, SystemConfig, Violation};
use crate::error::{Error, Result};
use crate::spectroscopy::{
    emission_scan, extract_raman_shift, fit_lorentzian, linewidth_fit, linspace, raman_dispersion_curve,
    transmission_scan, DispersionGrid, SpectrumScan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    EmissionScan,
    RamanDispersion,
    FitG0,
    TransmissionScan,
    LinewidthFit,
    DressedStates,
    ErrorBudget,
    DopplerCorrection,
    EstimateDrive,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::EmissionScan => "emission-scan",
            Protocol::RamanDispersion => "raman-dispersion",
            Protocol::FitG0 => "fit-g0",
            Protocol::TransmissionScan => "transmission-scan",
            Protocol::LinewidthFit => "linewidth-fit",
            Protocol::DressedStates => "dressed-states",
            Protocol::ErrorBudget => "error-budget",
            Protocol::DopplerCorrection => "doppler-correction",
            Protocol::EstimateDrive => "estimate-drive",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ioncavity-sim", version, about = "Ion-cavity master-equation simulations and fits")]
pub struct Args {
    #[arg(value_enum)]
    pub protocol: Protocol,
    /// Flat TOML config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, required_unless_present = "validate_only")]
    pub out: Option<PathBuf>,
    /// Override one config key, e.g. `--set g0_mhz=14.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for scan points.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Check the config and exit without running or writing anything.
    #[arg(long)]
    pub validate_only: bool,
}

/// Protocol inputs that are not part of the physical system.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSettings {
    pub scan_start_mhz: Option<f64>,
    pub scan_stop_mhz: Option<f64>,
    pub scan_points: usize,
    pub delta_p_start_mhz: f64,
    pub delta_p_stop_mhz: f64,
    pub delta_p_points: usize,
    pub dispersion_half_span_mhz: f64,
    pub dispersion_points: usize,
    pub g1_mhz: Option<f64>,
    pub g2_mhz: Option<f64>,
    pub g0_ideal_mhz: f64,
    pub delta_z_nm: f64,
    pub wavelength_nm: f64,
    pub measured_curve: Option<String>,
    pub scan_csv: Option<String>,
    pub fit_bracket_lo_mhz: f64,
    pub fit_bracket_hi_mhz: f64,
    pub fit_tolerance_mhz: f64,
    pub refit_half_width_mhz: f64,
    pub refit_tolerance_mhz: f64,
    /// `(config key, error)` pairs from `param_error_<key>` entries.
    pub parameter_errors: Vec<(String, f64)>,
    pub sideband_offset_mhz: f64,
    pub peak_ratio: Option<f64>,
    pub drive_grid_min_mhz: f64,
    pub drive_grid_max_mhz: f64,
    pub drive_grid_points: usize,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        let drive = default_drive_grid();
        ProtocolSettings {
            scan_start_mhz: None,
            scan_stop_mhz: None,
            scan_points: 81,
            delta_p_start_mhz: -20.0,
            delta_p_stop_mhz: 20.0,
            delta_p_points: 9,
            dispersion_half_span_mhz: 25.0,
            dispersion_points: 81,
            g1_mhz: None,
            g2_mhz: None,
            g0_ideal_mhz: 17.3,
            delta_z_nm: 94.0,
            wavelength_nm: 866.0,
            measured_curve: None,
            scan_csv: None,
            fit_bracket_lo_mhz: 5.0,
            fit_bracket_hi_mhz: 25.0,
            fit_tolerance_mhz: 1e-4,
            refit_half_width_mhz: 1.5,
            refit_tolerance_mhz: 1e-5,
            parameter_errors: Vec::new(),
            sideband_offset_mhz: 45.0,
            peak_ratio: None,
            drive_grid_min_mhz: drive[0],
            drive_grid_max_mhz: drive[drive.len() - 1],
            drive_grid_points: drive.len(),
        }
    }
}

const PARAM_ERROR_PREFIX: &str = "param_error_";

struct Take<'a> {
    table: &'a mut Table,
    violations: Vec<Violation>,
}

impl Take<'_> {
    fn float(&mut self, key: &str) -> Option<f64> {
        match self.table.remove(key)? {
            Value::Float(v) => Some(v),
            Value::Integer(v) => Some(v as f64),
            other => {
                self.violations.push(Violation::new(key, format!("expected a number, got {other}")));
                None
            }
        }
    }

    fn set_float(&mut self, key: &str, slot: &mut f64) {
        if let Some(v) = self.float(key) {
            *slot = v;
        }
    }

    fn count(&mut self, key: &str, slot: &mut usize) {
        match self.table.remove(key) {
            None => {}
            Some(Value::Integer(v)) if v >= 0 => *slot = v as usize,
            Some(other) => self
                .violations
                .push(Violation::new(key, format!("expected a non-negative integer, got {other}"))),
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.remove(key)? {
            Value::String(s) => Some(s),
            other => {
                self.violations.push(Violation::new(key, format!("expected a string, got {other}")));
                None
            }
        }
    }
}

impl ProtocolSettings {
    /// Removes the protocol keys from `table`.
    pub fn from_table(table: &mut Table) -> std::result::Result<Self, Vec<Violation>> {
        let mut s = ProtocolSettings::default();
        let mut t = Take {
            table,
            violations: Vec::new(),
        };
        s.scan_start_mhz = t.float("scan_start_mhz");
        s.scan_stop_mhz = t.float("scan_stop_mhz");
        t.count("scan_points", &mut s.scan_points);
        t.set_float("delta_p_start_mhz", &mut s.delta_p_start_mhz);
        t.set_float("delta_p_stop_mhz", &mut s.delta_p_stop_mhz);
        t.count("delta_p_points", &mut s.delta_p_points);
        t.set_float("dispersion_half_span_mhz", &mut s.dispersion_half_span_mhz);
        t.count("dispersion_points", &mut s.dispersion_points);
        s.g1_mhz = t.float("g1_mhz");
        s.g2_mhz = t.float("g2_mhz");
        t.set_float("g0_ideal_mhz", &mut s.g0_ideal_mhz);
        t.set_float("delta_z_nm", &mut s.delta_z_nm);
        t.set_float("wavelength_nm", &mut s.wavelength_nm);
        s.measured_curve = t.string("measured_curve");
        s.scan_csv = t.string("scan_csv");
        t.set_float("fit_bracket_lo_mhz", &mut s.fit_bracket_lo_mhz);
        t.set_float("fit_bracket_hi_mhz", &mut s.fit_bracket_hi_mhz);
        t.set_float("fit_tolerance_mhz", &mut s.fit_tolerance_mhz);
        t.set_float("refit_half_width_mhz", &mut s.refit_half_width_mhz);
        t.set_float("refit_tolerance_mhz", &mut s.refit_tolerance_mhz);
        t.set_float("sideband_offset_mhz", &mut s.sideband_offset_mhz);
        s.peak_ratio = t.float("peak_ratio");
        t.set_float("drive_grid_min_mhz", &mut s.drive_grid_min_mhz);
        t.set_float("drive_grid_max_mhz", &mut s.drive_grid_max_mhz);
        t.count("drive_grid_points", &mut s.drive_grid_points);
        let error_keys: Vec<String> = t.table.keys().filter(|k| k.starts_with(PARAM_ERROR_PREFIX)).cloned().collect();
        for key in error_keys {
            if let Some(v) = t.float(&key) {
                let param = key[PARAM_ERROR_PREFIX.len()..].to_string();
                if !SystemConfig::default().to_table().get(&param).is_some_and(Value::is_float) {
                    t.violations
                        .push(Violation::new(&key, format!("`{param}` is not a real-valued system parameter")));
                } else if !(v > 0.0) {
                    t.violations.push(Violation::new(&key, "parameter error must be positive"));
                } else {
                    s.parameter_errors.push((param, v));
                }
            }
        }
        let mut v = t.violations;
        v.extend(s.violations());
        if v.is_empty() {
            Ok(s)
        } else {
            Err(v)
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.scan_points < 2 {
            v.push(Violation::new("scan_points", "need at least 2 points"));
        }
        if self.delta_p_points < 5 {
            v.push(Violation::new("delta_p_points", "need at least 5 pump detunings"));
        }
        if self.dispersion_points < 5 {
            v.push(Violation::new("dispersion_points", "need at least 5 points"));
        }
        if !(self.dispersion_half_span_mhz > 0.0) {
            v.push(Violation::new("dispersion_half_span_mhz", "must be positive"));
        }
        if !(self.fit_bracket_lo_mhz >= 0.0 && self.fit_bracket_hi_mhz > self.fit_bracket_lo_mhz) {
            v.push(Violation::new("fit_bracket_hi_mhz", "need 0 <= fit_bracket_lo_mhz < fit_bracket_hi_mhz"));
        }
        for (k, x) in [
            ("fit_tolerance_mhz", self.fit_tolerance_mhz),
            ("refit_half_width_mhz", self.refit_half_width_mhz),
            ("refit_tolerance_mhz", self.refit_tolerance_mhz),
            ("sideband_offset_mhz", self.sideband_offset_mhz),
            ("wavelength_nm", self.wavelength_nm),
            ("drive_grid_min_mhz", self.drive_grid_min_mhz),
        ] {
            if !(x > 0.0) {
                v.push(Violation::new(k, "must be positive"));
            }
        }
        if !(self.drive_grid_max_mhz > self.drive_grid_min_mhz) || self.drive_grid_points < 2 {
            v.push(Violation::new(
                "drive_grid_max_mhz",
                "need drive_grid_min_mhz < drive_grid_max_mhz and at least 2 points",
            ));
        }
        if let (Some(a), Some(b)) = (self.scan_start_mhz, self.scan_stop_mhz) {
            if !(b > a) {
                v.push(Violation::new("scan_stop_mhz", "must exceed scan_start_mhz"));
            }
        }
        v
    }

    /// Checks that the inputs `protocol` needs are present.
    pub fn requirements(&self, protocol: Protocol) -> Vec<Violation> {
        let mut v = Vec::new();
        match protocol {
            Protocol::LinewidthFit if self.scan_csv.is_none() => {
                v.push(Violation::new("scan_csv", "linewidth-fit needs a scan CSV with carrier and sidebands"))
            }
            Protocol::ErrorBudget if self.parameter_errors.is_empty() => v.push(Violation::new(
                "param_error_*",
                "error-budget needs at least one param_error_<key> entry",
            )),
            Protocol::EstimateDrive if self.peak_ratio.is_none() => {
                v.push(Violation::new("peak_ratio", "estimate-drive needs the measured peak ratio"))
            }
            _ => {}
        }
        v
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new();
        let mut f = |k: &str, v: f64| {
            t.insert(k.into(), Value::Float(v));
        };
        if let Some(x) = self.scan_start_mhz {
            f("scan_start_mhz", x);
        }
        if let Some(x) = self.scan_stop_mhz {
            f("scan_stop_mhz", x);
        }
        f("delta_p_start_mhz", self.delta_p_start_mhz);
        f("delta_p_stop_mhz", self.delta_p_stop_mhz);
        f("dispersion_half_span_mhz", self.dispersion_half_span_mhz);
        if let Some(x) = self.g1_mhz {
            f("g1_mhz", x);
        }
        if let Some(x) = self.g2_mhz {
            f("g2_mhz", x);
        }
        f("g0_ideal_mhz", self.g0_ideal_mhz);
        f("delta_z_nm", self.delta_z_nm);
        f("wavelength_nm", self.wavelength_nm);
        f("fit_bracket_lo_mhz", self.fit_bracket_lo_mhz);
        f("fit_bracket_hi_mhz", self.fit_bracket_hi_mhz);
        f("fit_tolerance_mhz", self.fit_tolerance_mhz);
        f("refit_half_width_mhz", self.refit_half_width_mhz);
        f("refit_tolerance_mhz", self.refit_tolerance_mhz);
        f("sideband_offset_mhz", self.sideband_offset_mhz);
        if let Some(x) = self.peak_ratio {
            f("peak_ratio", x);
        }
        f("drive_grid_min_mhz", self.drive_grid_min_mhz);
        f("drive_grid_max_mhz", self.drive_grid_max_mhz);
        for (k, e) in &self.parameter_errors {
            f(&format!("{PARAM_ERROR_PREFIX}{k}"), *e);
        }
        let mut n = |k: &str, v: usize| {
            t.insert(k.into(), Value::Integer(v as i64));
        };
        n("scan_points", self.scan_points);
        n("delta_p_points", self.delta_p_points);
        n("dispersion_points", self.dispersion_points);
        n("drive_grid_points", self.drive_grid_points);
        if let Some(p) = &self.measured_curve {
            t.insert("measured_curve".into(), Value::String(p.clone()));
        }
        if let Some(p) = &self.scan_csv {
            t.insert("scan_csv".into(), Value::String(p.clone()));
        }
        t
    }

    fn scan_grid(&self, center: f64) -> Vec<f64> {
        let lo = self.scan_start_mhz.unwrap_or(center - 25.0);
        let hi = self.scan_stop_mhz.unwrap_or(center + 25.0);
        linspace(lo, hi, self.scan_points)
    }

    fn delta_p_grid(&self) -> Vec<f64> {
        linspace(self.delta_p_start_mhz, self.delta_p_stop_mhz, self.delta_p_points)
    }

    fn dispersion_grid(&self) -> DispersionGrid {
        let h = self.dispersion_half_span_mhz;
        DispersionGrid {
            offsets: linspace(-h, h, self.dispersion_points),
        }
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            bracket: (self.fit_bracket_lo_mhz, self.fit_bracket_hi_mhz),
            tolerance: self.fit_tolerance_mhz,
            ..FitOptions::default()
        }
    }
}

/// A fully resolved run: physical system plus protocol inputs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub protocol: ProtocolSettings,
    /// Directory that relative input paths are resolved against.
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn resolved_table(&self) -> Table {
        let mut t = self.system.to_table();
        t.extend(self.protocol.to_table());
        t
    }

    /// SHA-256 over the canonical serialisation of every resolved key.
    pub fn content_hash(&self) -> String {
        hash_hex(toml::to_string(&self.resolved_table()).expect("flat table serialises").as_bytes())
    }

    fn input_path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn parse_override(s: &str) -> std::result::Result<(String, Value), Violation> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Violation::new(s, "override must look like key=value"))?;
    let key = k.trim().to_string();
    let raw = v.trim();
    // values that are not valid TOML literals are taken as bare strings
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

/// Parses config text, applies `--set` overrides and validates everything,
/// reporting all violations at once.
pub fn load_run_config(text: &str, overrides: &[String], base_dir: &Path, protocol: Protocol) -> Result<RunConfig> {
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![Violation::new("<file>", e.to_string())]))?;
    let mut violations = Vec::new();
    for o in overrides {
        match parse_override(o) {
            Ok((k, v)) => {
                table.insert(k, v);
            }
            Err(v) => violations.push(v),
        }
    }
    let protocol_settings = ProtocolSettings::from_table(&mut table);
    let system = SystemConfig::from_table(&mut table);
    for key in table.keys() {
        violations.push(Violation::new(key.clone(), "unknown key"));
    }
    match (&protocol_settings, &system) {
        (Err(a), Err(b)) => {
            violations.extend(a.iter().cloned());
            violations.extend(b.iter().cloned());
        }
        (Err(a), _) => violations.extend(a.iter().cloned()),
        (_, Err(b)) => violations.extend(b.iter().cloned()),
        (Ok(p), Ok(_)) => violations.extend(p.requirements(protocol)),
    }
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    Ok(RunConfig {
        system: system.expect("checked"),
        protocol: protocol_settings.expect("checked"),
        base_dir: base_dir.to_path_buf(),
    })
}

/// Named output files and their contents.
pub type Outputs = Vec<(String, String)>;

fn synthetic_curve(run: &RunConfig) -> Result<Vec<ShiftMeasurement>> {
    let curve = raman_dispersion_curve(&run.system, &run.protocol.delta_p_grid(), &run.protocol.dispersion_grid());
    if let Some((dp, why)) = curve.failures.first() {
        return Err(Error::Solver(format!("synthetic curve failed at delta_p = {dp} MHz: {why}")));
    }
    Ok(curve.points.into_iter().map(ShiftMeasurement::from).collect())
}

/// The measured curve from `measured_curve`, or a curve simulated from the
/// configured system when no file is given.
fn measured_curve(run: &RunConfig) -> Result<Vec<ShiftMeasurement>> {
    match &run.protocol.measured_curve {
        Some(p) => parse_shift_csv(&fs::read_to_string(run.input_path(p))?),
        None => synthetic_curve(run),
    }
}

fn csv_curve(data: &[ShiftMeasurement], fitted: Option<&[f64]>) -> String {
    let mut out = String::from("delta_p_mhz,delta_mhz,delta_error_mhz");
    out.push_str(if fitted.is_some() { ",fitted_delta_mhz\n" } else { "\n" });
    for (i, m) in data.iter().enumerate() {
        let err = m.error.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}", m.delta_p, m.delta, err));
        if let Some(f) = fitted {
            out.push_str(&format!(",{}", f[i]));
        }
        out.push('\n');
    }
    out
}

/// Runs `protocol`, returning the files to write.
pub fn execute(protocol: Protocol, run: &RunConfig) -> Result<Outputs> {
    let cfg = &run.system;
    let p = &run.protocol;
    let name = protocol.name();
    let mut out: Outputs = Vec::new();
    match protocol {
        Protocol::EmissionScan => {
            let scan = emission_scan(cfg, cfg.delta_p, &p.scan_grid(cfg.delta_p))?;
            out.push((format!("{name}.csv"), scan.to_csv()));
            let s = extract_raman_shift(&scan, cfg.delta_p)?;
            out.push((
                "fit.csv".into(),
                format!(
                    "delta_p_mhz,delta_mhz,delta_error_mhz,center_mhz,hwhm_mhz,amplitude,offset,edge_warning\n{},{},{},{},{},{},{},{}\n",
                    cfg.delta_p, s.delta, s.error, s.fit.center, s.fit.hwhm, s.fit.amplitude, s.fit.offset, s.edge_warning
                ),
            ));
        }
        Protocol::RamanDispersion => {
            let curve = raman_dispersion_curve(cfg, &p.delta_p_grid(), &p.dispersion_grid());
            let mut csv = String::from("delta_p_mhz,delta_mhz,delta_error_mhz,edge_warning\n");
            for d in &curve.points {
                csv.push_str(&format!("{},{},{},{}\n", d.delta_p, d.delta, d.error, d.edge_warning));
            }
            for (dp, why) in &curve.failures {
                csv.push_str(&format!("# failed delta_p={dp}: {}\n", why.replace('\n', " ")));
            }
            if curve.points.is_empty() {
                return Err(Error::Solver("every pump detuning failed".into()));
            }
            out.push((format!("{name}.csv"), csv));
        }
        Protocol::FitG0 => {
            let data = measured_curve(run)?;
            let model = SimulatedDispersion::new(cfg.clone(), p.dispersion_grid());
            let fit = fit_g0(&data, &model, &p.fit_options())?;
            let dps: Vec<f64> = data.iter().map(|m| m.delta_p).collect();
            let fitted = model.shifts(fit.g0, &dps)?;
            out.push((format!("{name}.csv"), csv_curve(&data, Some(&fitted))));
            out.push(("fit.csv".into(), fit.to_csv()));
        }
        Protocol::TransmissionScan => {
            let scan = transmission_scan(cfg, &p.scan_grid(0.0))?;
            out.push((format!("{name}.csv"), scan.to_csv()));
            if !cfg.sim.ion_present || cfg.g0 == 0.0 {
                let f = fit_lorentzian(&scan.detunings(), &scan.signals(), None)?;
                out.push((
                    "fit.csv".into(),
                    format!(
                        "center_mhz,hwhm_mhz,amplitude,offset\n{},{},{},{}\n",
                        f.center, f.hwhm, f.amplitude, f.offset
                    ),
                ));
            }
        }
        Protocol::LinewidthFit => {
            let path = run.input_path(p.scan_csv.as_deref().expect("checked by requirements"));
            let (_, _, points) = SpectrumScan::parse_csv(&fs::read_to_string(path)?)?;
            let scan = SpectrumScan::new("measured", "detuning_mhz", points, cfg.clone())?;
            let f = linewidth_fit(&scan, p.sideband_offset_mhz)?;
            out.push((
                format!("{name}.csv"),
                format!(
                    "kappa_mhz,kappa_error_mhz,axis_scale,sideband_offset_mhz\n{},{},{},{}\n",
                    f.kappa, f.kappa_error, f.axis_scale, p.sideband_offset_mhz
                ),
            ));
        }
        Protocol::DressedStates => {
            let (g1, g2) = match (p.g1_mhz, p.g2_mhz) {
                (Some(a), Some(b)) => (a, b),
                (None, None) => {
                    let (c1, c2) = lambda_system_coefficients()?;
                    (cfg.g0 * c1, cfg.g0 * c2)
                }
                _ => {
                    return Err(Error::Config(vec![Violation::new(
                        "g1_mhz",
                        "give both g1_mhz and g2_mhz, or neither",
                    )]))
                }
            };
            out.push((format!("{name}.csv"), dressed_states(g1, g2)?.to_csv()));
            out.push((
                "fit.csv".into(),
                format!("g0_mhz,effective_coupling_mhz\n{},{}\n", cfg.g0, effective_coupling(cfg.g0)?),
            ));
        }
        Protocol::ErrorBudget => {
            let data = measured_curve(run)?;
            let model = SimulatedDispersion::new(cfg.clone(), p.dispersion_grid());
            let fit = fit_g0(&data, &model, &p.fit_options())?;
            let grid = p.dispersion_grid();
            let refit = simulated_refit(&data, &grid, fit.g0, p.refit_half_width_mhz, p.refit_tolerance_mhz);
            let budget = error_budget(cfg, fit.g0, &p.parameter_errors, refit);
            out.push((format!("{name}.csv"), budget.to_csv()));
            out.push((format!("{name}.txt"), budget.to_table()));
            out.push(("fit.csv".into(), fit.to_csv()));
        }
        Protocol::DopplerCorrection => {
            let g = doppler_corrected_g0(p.g0_ideal_mhz, p.delta_z_nm, p.wavelength_nm)?;
            out.push((
                format!("{name}.csv"),
                format!(
                    "g0_ideal_mhz,delta_z_nm,wavelength_nm,g0_mhz\n{},{},{},{}\n",
                    p.g0_ideal_mhz, p.delta_z_nm, p.wavelength_nm, g
                ),
            ));
        }
        Protocol::EstimateDrive => {
            let grid = log_grid(p.drive_grid_min_mhz, p.drive_grid_max_mhz, p.drive_grid_points);
            let ratio = p.peak_ratio.expect("checked by requirements");
            let est = estimate_drive_amplitude(ratio, cfg, &grid, &p.scan_grid(0.0))?;
            out.push((format!("{name}.csv"), est.to_csv()));
            out.push((
                "fit.csv".into(),
                format!("peak_ratio,drive_e_mhz\n{},{}\n", ratio, est.drive_e),
            ));
        }
    }
    Ok(out)
}

fn manifest(protocol: Protocol, run: &RunConfig, seconds: f64, files: &[String]) -> serde_json::Value {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    serde_json::json!({
        "protocol": protocol.name(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_hash": run.content_hash(),
        "config": run.resolved_table(),
        "wall_clock_seconds": seconds,
        "finished_unix": stamp,
        "outputs": files,
    })
}

fn error_report(e: &Error) -> String {
    let mut s = format!("error [{}]: {e}", e.class().as_str());
    if let Error::Config(v) = e {
        for item in v {
            s.push_str(&format!("\n  - {item}"));
        }
    }
    s
}

/// Parses arguments, runs the protocol and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_args(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_report(&e));
            e.class().exit_code()
        }
    }
}

fn run_args(args: &Args) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let run = load_run_config(&text, &args.set, &base, args.protocol)?;
    if args.validate_only {
        println!("config OK ({}), hash {}", args.protocol.name(), run.content_hash());
        return Ok(());
    }
    if let Some(n) = args.threads {
        // fails only if a global pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let out_dir = args.out.as_ref().expect("clap enforces --out");
    let start = Instant::now();
    let outputs = execute(args.protocol, &run)?;
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for (name, body) in &outputs {
        fs::write(out_dir.join(name), body)?;
        files.push(name.clone());
    }
    let m = manifest(args.protocol, &run, start.elapsed().as_secs_f64(), &files);
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&m).expect("manifest serialises"),
    )?;
    println!("{}: wrote {} file(s) to {}", args.protocol.name(), files.len() + 1, out_dir.display());
    Ok(())
}
