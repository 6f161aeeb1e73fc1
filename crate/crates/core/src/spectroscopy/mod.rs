//! Simulated measurement protocols: Raman emission scans, cavity
//! transmission scans and cavity-linewidth calibration.
//!
//! Detunings on scan axes are quoted in MHz (ordinary frequency); internally
//! the master equation is solved in rad/μs with times in μs.

pub mod fit;

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::{angular, SystemConfig, TransmissionModel};
use crate::dynamics::{evolve, steady_state, EvolveOptions, Hamiltonian, MasterEquationProblem};
use crate::error::{Error, Result};
use crate::linalg::{expectation, DensityMatrix, OperatorMatrix};
use crate::model::{
    build_cavity_transmission, build_collapse_operators, build_h0_raman, build_h0_transmission, build_h_drive,
    build_h_ioncav, build_h_pump_profile, build_hb, Layout,
};
use crate::atom::Manifold;

pub use fit::{fit_linewidth, fit_lorentzian, LinewidthFit, LorentzianFit};

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Default scan: 81 points over ±25 MHz around `center`.
pub fn default_grid(center: f64) -> Vec<f64> {
    linspace(center - 25.0, center + 25.0, 81)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub detuning: f64,
    pub signal: f64,
    pub signal_error: Option<f64>,
}

/// A spectrum: signal versus detuning, plus the configuration that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumScan {
    pub protocol: String,
    pub axis_label: String,
    pub points: Vec<ScanPoint>,
    pub config: SystemConfig,
}

impl SpectrumScan {
    pub fn new(protocol: &str, axis_label: &str, points: Vec<ScanPoint>, config: SystemConfig) -> Result<Self> {
        let scan = SpectrumScan {
            protocol: protocol.to_string(),
            axis_label: axis_label.to_string(),
            points,
            config,
        };
        scan.check()?;
        Ok(scan)
    }

    fn check(&self) -> Result<()> {
        let increasing = self.points.windows(2).all(|w| w[1].detuning > w[0].detuning);
        let decreasing = self.points.windows(2).all(|w| w[1].detuning < w[0].detuning);
        if !(increasing || decreasing) {
            return Err(Error::InvalidInput("scan detunings must be strictly monotone".into()));
        }
        if let Some(p) = self.points.iter().find(|p| !(p.signal >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "negative or non-finite signal {} at {} MHz",
                p.signal, p.detuning
            )));
        }
        Ok(())
    }

    pub fn detunings(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.detuning).collect()
    }

    pub fn signals(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.signal).collect()
    }

    fn errors(&self) -> Option<Vec<f64>> {
        self.points.iter().map(|p| p.signal_error).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# protocol={}, params hash={}\ndetuning_mhz,signal,signal_error\n",
            self.protocol,
            self.config.content_hash()
        );
        for p in &self.points {
            let err = p.signal_error.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", p.detuning, p.signal, err);
        }
        out
    }

    /// Parses the CSV body written by [`SpectrumScan::to_csv`]; returns the
    /// protocol name, parameter hash and points.
    pub fn parse_csv(text: &str) -> Result<(String, String, Vec<ScanPoint>)> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let meta = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("missing `# protocol=...` header".into()))?;
        let mut protocol = None;
        let mut hash = None;
        for part in meta.split(", ") {
            if let Some(v) = part.strip_prefix("protocol=") {
                protocol = Some(v.to_string());
            } else if let Some(v) = part.strip_prefix("params hash=") {
                hash = Some(v.to_string());
            }
        }
        let cols = lines.next().ok_or_else(|| Error::Parse("missing column header".into()))?;
        if cols.trim() != "detuning_mhz,signal,signal_error" {
            return Err(Error::Parse(format!("unexpected columns `{cols}`")));
        }
        let num = |s: &str, line: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {line}: `{s}`: {e}")))
        };
        let mut points = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 fields", k + 3)));
            }
            let err = if f[2].trim().is_empty() { None } else { Some(num(f[2], k + 3)?) };
            points.push(ScanPoint {
                detuning: num(f[0], k + 3)?,
                signal: num(f[1], k + 3)?,
                signal_error: err,
            });
        }
        Ok((
            protocol.ok_or_else(|| Error::Parse("header lacks protocol".into()))?,
            hash.ok_or_else(|| Error::Parse("header lacks params hash".into()))?,
            points,
        ))
    }
}

fn to_rad(op: &OperatorMatrix) -> OperatorMatrix {
    op.scale_real(TAU)
}

fn collapse_rad(ops: &[OperatorMatrix]) -> Vec<OperatorMatrix> {
    ops.iter().map(|o| o.scale_real(TAU.sqrt())).collect()
}

fn evolve_options(cfg: &SystemConfig) -> EvolveOptions {
    EvolveOptions {
        atol: cfg.sim.ode_atol,
        rtol: cfg.sim.ode_rtol,
        ..Default::default()
    }
}

/// Length of the emission window in μs: pump pulse plus ring-down.
pub fn emission_window(cfg: &SystemConfig) -> f64 {
    cfg.pulse.duration() + cfg.sim.ringdown_factor / (2.0 * angular(cfg.kappa))
}

/// Expected number of photons leaving the cavity (both modes) for one pump
/// pulse, starting from the configured S₁/₂ mixture.
pub fn raman_emission(cfg: &SystemConfig) -> Result<f64> {
    let lay = Layout::new(cfg)?;
    let h_static = &(&build_h0_raman(cfg)? + &build_hb(cfg)?) + &build_h_ioncav(cfg)?;
    let h_pump = build_h_pump_profile(cfg)?;
    let ops = collapse_rad(&build_collapse_operators(cfg)?);
    let mut pops = vec![0.0; lay.space.total_dim()];
    for (k, (idx, _)) in lay.scheme.sublevels_of(Manifold::S).enumerate() {
        pops[lay.index(idx, 0, 0)] = cfg.sim.initial_s_populations[k];
    }
    let rho0 = DensityMatrix::diagonal(lay.space.clone(), &pops)?;
    let emission_ops: Vec<OperatorMatrix> = if cfg.kappa > 0.0 { ops[..2].to_vec() } else { Vec::new() };
    let problem = MasterEquationProblem {
        hamiltonian: Hamiltonian {
            static_part: to_rad(&h_static),
            pulse: Some((to_rad(&h_pump), cfg.pulse)),
        },
        collapse_ops: ops,
        initial_state: rho0,
    };
    let opts = EvolveOptions {
        emission_ops,
        ..evolve_options(cfg)
    };
    let res = evolve(&problem, emission_window(cfg), &opts)?;
    Ok(res.integrated_emission.iter().sum::<f64>().max(0.0))
}

/// Emission spectrum versus cavity detuning at fixed pump detuning.
pub fn emission_scan(cfg: &SystemConfig, delta_p: f64, delta_c_grid: &[f64]) -> Result<SpectrumScan> {
    if delta_c_grid.is_empty() {
        return Err(Error::InvalidInput("empty cavity-detuning grid".into()));
    }
    let mut base = cfg.clone();
    base.delta_p = delta_p;
    let signals: Vec<Result<f64>> = delta_c_grid
        .par_iter()
        .map(|&dc| {
            let mut c = base.clone();
            c.delta_c = dc;
            raman_emission(&c).map_err(|e| e.at_detuning(dc))
        })
        .collect();
    let mut points = Vec::with_capacity(signals.len());
    for (&dc, s) in delta_c_grid.iter().zip(signals) {
        points.push(ScanPoint {
            detuning: dc,
            signal: s?,
            signal_error: None,
        });
    }
    SpectrumScan::new("emission-scan", "delta_c_mhz", points, base)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamanShift {
    /// Fitted peak position minus the pump detuning (MHz); negative when the
    /// peak sits below `Δc = Δp`.
    pub delta: f64,
    pub error: f64,
    /// The fitted center lies within one grid step of a scan edge.
    pub edge_warning: bool,
    pub fit: LorentzianFitSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianFitSummary {
    pub center: f64,
    pub hwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
}

pub fn extract_raman_shift(scan: &SpectrumScan, delta_p: f64) -> Result<RamanShift> {
    let xs = scan.detunings();
    let ys = scan.signals();
    let errs = scan.errors();
    let f = fit_lorentzian(&xs, &ys, errs.as_deref())?;
    let (lo, hi) = (xs[0].min(xs[xs.len() - 1]), xs[0].max(xs[xs.len() - 1]));
    let step = (hi - lo) / (xs.len().max(2) - 1) as f64;
    let edge_warning = f.center < lo + step || f.center > hi - step;
    Ok(RamanShift {
        delta: f.center - delta_p,
        error: f.errors[0],
        edge_warning,
        fit: LorentzianFitSummary {
            center: f.center,
            hwhm: f.hwhm,
            amplitude: f.amplitude,
            offset: f.offset,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionPoint {
    pub delta_p: f64,
    pub delta: f64,
    pub error: f64,
    pub edge_warning: bool,
}

#[derive(Debug, Clone)]
pub struct DispersionCurve {
    pub points: Vec<DispersionPoint>,
    /// Pump detunings whose scan or fit failed, with the reason.
    pub failures: Vec<(f64, String)>,
}

/// Cavity-detuning offsets (relative to each `Δp`) used by the dispersion curve.
#[derive(Debug, Clone)]
pub struct DispersionGrid {
    pub offsets: Vec<f64>,
}

impl Default for DispersionGrid {
    fn default() -> Self {
        DispersionGrid {
            offsets: linspace(-25.0, 25.0, 81),
        }
    }
}

/// Raman shift δ for each pump detuning, from an emission scan centred on
/// `Δc = Δp`.
pub fn raman_dispersion_curve(cfg: &SystemConfig, delta_p_grid: &[f64], grid: &DispersionGrid) -> DispersionCurve {
    let results: Vec<Result<RamanShift>> = delta_p_grid
        .par_iter()
        .map(|&dp| {
            let axis: Vec<f64> = grid.offsets.iter().map(|o| dp + o).collect();
            let scan = emission_scan(cfg, dp, &axis)?;
            extract_raman_shift(&scan, dp)
        })
        .collect();
    let mut curve = DispersionCurve {
        points: Vec::new(),
        failures: Vec::new(),
    };
    for (&dp, r) in delta_p_grid.iter().zip(results) {
        match r {
            Ok(s) => curve.points.push(DispersionPoint {
                delta_p: dp,
                delta: s.delta,
                error: s.error,
                edge_warning: s.edge_warning,
            }),
            Err(e) => curve.failures.push((dp, e.to_string())),
        }
    }
    curve
}

/// The optically pumped probe state `|D,−3/2; 0, 0⟩`.
pub fn prepared_probe_state(cfg: &SystemConfig) -> Result<DensityMatrix> {
    let lay = Layout::new(cfg)?;
    let d = lay.scheme.spec(Manifold::D)?.j;
    let level = lay.scheme.index(Manifold::D, -d)?;
    DensityMatrix::basis_state(lay.space.clone(), lay.index(level, 0, 0))
}

/// Transmitted photon rate (photons/μs) at one probe detuning.
pub fn transmission_signal(cfg: &SystemConfig) -> Result<f64> {
    let kappa_rad = angular(cfg.kappa);
    let both = cfg.sim.detect_both_modes;
    if !cfg.sim.ion_present || cfg.g0 == 0.0 {
        // the decoupled cavity evolves independently of the atom, so the
        // cavity-only problem gives the same transmitted field
        let (h, ops) = build_cavity_transmission(cfg)?;
        let rho = steady_state(&to_rad(&h), &collapse_rad(&ops))?;
        let f = cfg.fock_cutoff + 1;
        let n_plus: f64 = (0..f * f).map(|i| (i / f) as f64 * rho.get(i, i).re).sum();
        let n_minus: f64 = (0..f * f).map(|i| (i % f) as f64 * rho.get(i, i).re).sum();
        let n = if both { n_plus + n_minus } else { n_plus };
        return Ok(2.0 * kappa_rad * n.max(0.0));
    }
    let lay = Layout::new(cfg)?;
    let h = &(&(&build_h0_transmission(cfg)? + &build_hb(cfg)?) + &build_h_drive(cfg)?) + &build_h_ioncav(cfg)?;
    let ops = collapse_rad(&build_collapse_operators(cfg)?);
    match cfg.sim.transmission_model {
        TransmissionModel::SteadyState => {
            let rho = steady_state(&to_rad(&h), &ops)?;
            let mut n = expectation(&rho, &lay.number(true)?)?.re;
            if both {
                n += expectation(&rho, &lay.number(false)?)?.re;
            }
            Ok(2.0 * kappa_rad * n.max(0.0))
        }
        TransmissionModel::Pulsed => {
            let t = cfg.sim.probe_duration;
            let problem = MasterEquationProblem {
                hamiltonian: Hamiltonian::constant(to_rad(&h)),
                collapse_ops: ops.clone(),
                initial_state: prepared_probe_state(cfg)?,
            };
            let emission_ops = if both { ops[..2].to_vec() } else { ops[..1].to_vec() };
            let opts = EvolveOptions {
                emission_ops,
                ..evolve_options(cfg)
            };
            let res = evolve(&problem, t, &opts)?;
            Ok((res.integrated_emission.iter().sum::<f64>() / t).max(0.0))
        }
    }
}

/// Transmission spectrum versus probe detuning `Δ866`.
pub fn transmission_scan(cfg: &SystemConfig, delta_866_grid: &[f64]) -> Result<SpectrumScan> {
    if delta_866_grid.is_empty() {
        return Err(Error::InvalidInput("empty probe-detuning grid".into()));
    }
    let signals: Vec<Result<f64>> = delta_866_grid
        .par_iter()
        .map(|&d| {
            let mut c = cfg.clone();
            c.delta_866 = d;
            transmission_signal(&c).map_err(|e| e.at_detuning(d))
        })
        .collect();
    let mut points = Vec::with_capacity(signals.len());
    for (&d, s) in delta_866_grid.iter().zip(signals) {
        points.push(ScanPoint {
            detuning: d,
            signal: s?,
            signal_error: None,
        });
    }
    SpectrumScan::new("transmission-scan", "delta_866_mhz", points, cfg.clone())
}

/// Empty-cavity transmitted photon rate `2κ E²/(κ² + Δ²)` in photons/μs
/// (rates converted to rad/μs).
pub fn empty_cavity_transmission(cfg: &SystemConfig, delta_866: f64) -> f64 {
    let (k, e, d) = (angular(cfg.kappa), angular(cfg.drive_e), angular(delta_866));
    2.0 * k * e * e / (k * k + d * d)
}

/// Cavity linewidth from a scan containing a carrier and two sidebands at
/// `±sideband_offset`.
pub fn linewidth_fit(scan: &SpectrumScan, sideband_offset: f64) -> Result<LinewidthFit> {
    let errs = scan.errors();
    fit_linewidth(&scan.detunings(), &scan.signals(), errs.as_deref(), sideband_offset)
}
