//! Physical parameters and simulation settings, with a flat key–value file
//! format.
//!
//! Rates and detunings are stored in units of 2π·MHz (a stored `15.1` means
//! an angular frequency of 2π × 15.1 MHz); times are in μs. Files quote the
//! same numbers with `_mhz` / `_us` / `_gauss` key suffixes, so a config
//! survives a write/read cycle bit for bit.

use std::fmt;
use std::f64::consts::TAU;

use num_complex::Complex64;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::atom::{LevelScheme, MagneticEnvironment, DEFAULT_G_D, DEFAULT_G_P, DEFAULT_G_S};
use crate::error::{Error, Result};

/// Converts a value in units of 2π·MHz to rad/μs.
pub fn angular(mhz: f64) -> f64 {
    TAU * mhz
}

pub const MAX_FOCK_CUTOFF: usize = 3;

/// Pump pulse envelope `f(t)`, non-zero on `[0, duration]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseShape {
    Rectangular { duration: f64 },
    /// sin² rise over `ramp`, flat top, sin² fall over `ramp`.
    Sin2Ramp { duration: f64, ramp: f64 },
}

impl PulseShape {
    pub fn duration(&self) -> f64 {
        match *self {
            PulseShape::Rectangular { duration } | PulseShape::Sin2Ramp { duration, .. } => duration,
        }
    }

    pub fn with_duration(&self, duration: f64) -> PulseShape {
        match *self {
            PulseShape::Rectangular { .. } => PulseShape::Rectangular { duration },
            PulseShape::Sin2Ramp { ramp, .. } => PulseShape::Sin2Ramp {
                duration,
                ramp: ramp.min(duration / 2.0),
            },
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.piece_value(t, t)
    }

    /// Value at `t` of the smooth piece of `f` that is active at `probe`.
    /// Integrators use this to evaluate a segment's envelope up to and
    /// including its end points.
    pub fn piece_value(&self, probe: f64, t: f64) -> f64 {
        match *self {
            PulseShape::Rectangular { duration } => {
                if (0.0..duration).contains(&probe) {
                    1.0
                } else {
                    0.0
                }
            }
            PulseShape::Sin2Ramp { duration, ramp } => {
                if !(0.0..duration).contains(&probe) {
                    0.0
                } else if ramp > 0.0 && probe < ramp {
                    (std::f64::consts::FRAC_PI_2 * t / ramp).sin().powi(2)
                } else if ramp > 0.0 && probe > duration - ramp {
                    (std::f64::consts::FRAC_PI_2 * (duration - t) / ramp).sin().powi(2)
                } else {
                    1.0
                }
            }
        }
    }

    /// Times where `f` or its derivative is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            PulseShape::Rectangular { duration } => vec![0.0, duration],
            PulseShape::Sin2Ramp { duration, ramp } => vec![0.0, ramp, duration - ramp, duration],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            PulseShape::Rectangular { .. } => "rectangular",
            PulseShape::Sin2Ramp { .. } => "sin2",
        }
    }

    fn ramp(&self) -> f64 {
        match *self {
            PulseShape::Rectangular { .. } => 0.0,
            PulseShape::Sin2Ramp { ramp, .. } => ramp,
        }
    }
}

/// How the transmission signal is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransmissionModel {
    /// Mean transmitted photon rate over a probe window, starting from the
    /// optically pumped state `|D,−3/2; 0, 0⟩`.
    Pulsed,
    /// Unique steady state of the driven master equation.
    SteadyState,
}

impl TransmissionModel {
    pub fn name(&self) -> &'static str {
        match self {
            TransmissionModel::Pulsed => "pulsed",
            TransmissionModel::SteadyState => "steady-state",
        }
    }
}

/// Numerical and protocol settings that are not physical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub ode_atol: f64,
    pub ode_rtol: f64,
    /// Initial populations of `|S,−1/2⟩` and `|S,+1/2⟩` for Raman emission.
    pub initial_s_populations: [f64; 2],
    /// Ring-down window after the pump pulse, in units of `1/(2κ)`.
    pub ringdown_factor: f64,
    pub transmission_model: TransmissionModel,
    pub probe_duration: f64,
    /// Count transmitted photons from both polarisation modes.
    pub detect_both_modes: bool,
    /// `false` removes the atom from transmission runs (empty cavity).
    pub ion_present: bool,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            ode_atol: 1e-10,
            ode_rtol: 1e-8,
            initial_s_populations: [0.5, 0.5],
            ringdown_factor: 5.0,
            transmission_model: TransmissionModel::Pulsed,
            probe_duration: 10.0,
            detect_both_modes: false,
            ion_present: true,
        }
    }
}

/// Every physical parameter of the ion–cavity model.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub g0: f64,
    /// Cavity field decay rate.
    pub kappa: f64,
    /// P → S decay rate.
    pub gamma_s: f64,
    /// P → D decay rate.
    pub gamma_d: f64,
    pub omega_397: f64,
    pub delta_p: f64,
    pub delta_c: f64,
    pub delta_866: f64,
    /// Cavity drive amplitude on the σ₊ mode.
    pub drive_e: f64,
    /// Spherical components (ε₋₁, ε₀, ε₊₁) of the pump polarisation.
    pub pump_polarization: [Complex64; 3],
    pub env: MagneticEnvironment,
    pub lande_g: [f64; 3],
    pub fock_cutoff: usize,
    pub pulse: PulseShape,
    pub sim: SimulationSettings,
}

/// Fraction of P₁/₂ decays that end in S₁/₂.
pub const DEFAULT_BRANCHING_S: f64 = 0.936;
pub const DEFAULT_GAMMA_TOTAL: f64 = 11.5;

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            g0: 15.1,
            kappa: 4.1,
            gamma_s: DEFAULT_BRANCHING_S * DEFAULT_GAMMA_TOTAL,
            gamma_d: (1.0 - DEFAULT_BRANCHING_S) * DEFAULT_GAMMA_TOTAL,
            omega_397: 11.9,
            delta_p: -10.0,
            delta_c: -10.0,
            delta_866: 0.0,
            drive_e: 0.032,
            pump_polarization: [
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
            env: MagneticEnvironment::default(),
            lande_g: [DEFAULT_G_S, DEFAULT_G_P, DEFAULT_G_D],
            fock_cutoff: 1,
            pulse: PulseShape::Rectangular { duration: 0.3 },
            sim: SimulationSettings::default(),
        }
    }
}

/// One problem found while reading or validating a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl Violation {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Keys understood by [`SystemConfig::from_table`], with a one-line description.
pub const SYSTEM_KEYS: &[(&str, &str)] = &[
    ("g0_mhz", "ion-cavity coupling g0 / 2π"),
    ("kappa_mhz", "cavity field decay κ / 2π"),
    ("gamma_s_mhz", "P→S decay γ_S / 2π"),
    ("gamma_d_mhz", "P→D decay γ_D / 2π"),
    ("omega_397_mhz", "pump Rabi frequency Ω397 / 2π"),
    ("delta_p_mhz", "pump detuning Δp / 2π"),
    ("delta_c_mhz", "cavity detuning Δc / 2π"),
    ("delta_866_mhz", "probe detuning Δ866 / 2π"),
    ("drive_e_mhz", "cavity drive amplitude E / 2π"),
    ("pump_eps_minus_re", "pump polarisation ε₋₁ (real part)"),
    ("pump_eps_minus_im", "pump polarisation ε₋₁ (imaginary part)"),
    ("pump_eps_pi_re", "pump polarisation ε₀ (real part)"),
    ("pump_eps_pi_im", "pump polarisation ε₀ (imaginary part)"),
    ("pump_eps_plus_re", "pump polarisation ε₊₁ (real part)"),
    ("pump_eps_plus_im", "pump polarisation ε₊₁ (imaginary part)"),
    ("b_gauss", "magnetic field in gauss"),
    ("mu_b_mhz_per_gauss", "Bohr magneton in MHz/gauss"),
    ("lande_g_s", "Landé factor of S1/2"),
    ("lande_g_p", "Landé factor of P1/2"),
    ("lande_g_d", "Landé factor of D3/2"),
    ("fock_cutoff", "maximum photon number per mode (1..=3)"),
    ("pulse_shape", "\"rectangular\" or \"sin2\""),
    ("pulse_duration_us", "pump pulse duration in μs"),
    ("pulse_ramp_us", "sin² edge duration in μs (sin2 only)"),
    ("ode_atol", "integrator absolute tolerance"),
    ("ode_rtol", "integrator relative tolerance"),
    ("initial_pop_s_minus", "initial population of |S,-1/2⟩ (Raman)"),
    ("initial_pop_s_plus", "initial population of |S,+1/2⟩ (Raman)"),
    ("ringdown_factor", "emission ring-down window in units of 1/(2κ)"),
    ("transmission_model", "\"pulsed\" or \"steady-state\""),
    ("probe_duration_us", "probe window for pulsed transmission, μs"),
    ("detect_both_modes", "count transmission on both polarisation modes"),
    ("ion_present", "false removes the ion from transmission runs"),
];

struct Reader<'a> {
    table: &'a mut Table,
    violations: Vec<Violation>,
}

impl Reader<'_> {
    fn float(&mut self, key: &str, slot: &mut f64) {
        if let Some(v) = self.table.remove(key) {
            match v {
                Value::Float(x) => *slot = x,
                Value::Integer(i) => *slot = i as f64,
                other => self
                    .violations
                    .push(Violation::new(key, format!("expected a number, got {}", other.type_str()))),
            }
        }
    }

    fn boolean(&mut self, key: &str, slot: &mut bool) {
        if let Some(v) = self.table.remove(key) {
            match v {
                Value::Boolean(b) => *slot = b,
                other => self
                    .violations
                    .push(Violation::new(key, format!("expected a boolean, got {}", other.type_str()))),
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.remove(key) {
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                self.violations
                    .push(Violation::new(key, format!("expected a string, got {}", other.type_str())));
                None
            }
            None => None,
        }
    }

    fn integer(&mut self, key: &str, slot: &mut usize) {
        if let Some(v) = self.table.remove(key) {
            match v {
                Value::Integer(i) if i >= 0 => *slot = i as usize,
                other => self.violations.push(Violation::new(
                    key,
                    format!("expected a non-negative integer, got {other}"),
                )),
            }
        }
    }
}

impl SystemConfig {
    /// P₁/₂ amplitude decay rate γ = γ_S + γ_D.
    pub fn gamma_total(&self) -> f64 {
        self.gamma_s + self.gamma_d
    }

    pub fn level_scheme(&self) -> LevelScheme {
        LevelScheme::calcium(self.lande_g[0], self.lande_g[1], self.lande_g[2])
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let finite = [
            ("g0_mhz", self.g0),
            ("omega_397_mhz", self.omega_397),
            ("delta_p_mhz", self.delta_p),
            ("delta_c_mhz", self.delta_c),
            ("delta_866_mhz", self.delta_866),
            ("drive_e_mhz", self.drive_e),
            ("lande_g_s", self.lande_g[0]),
            ("lande_g_p", self.lande_g[1]),
            ("lande_g_d", self.lande_g[2]),
        ];
        for (k, v) in finite {
            if !v.is_finite() {
                out.push(Violation::new(k, "must be finite"));
            }
        }
        for (k, v) in [("g0_mhz", self.g0), ("omega_397_mhz", self.omega_397), ("drive_e_mhz", self.drive_e)] {
            if v < 0.0 {
                out.push(Violation::new(k, "must be >= 0"));
            }
        }
        for (k, v) in [
            ("kappa_mhz", self.kappa),
            ("gamma_s_mhz", self.gamma_s),
            ("gamma_d_mhz", self.gamma_d),
            ("pulse_duration_us", self.pulse.duration()),
            ("ode_atol", self.sim.ode_atol),
            ("ode_rtol", self.sim.ode_rtol),
            ("probe_duration_us", self.sim.probe_duration),
            ("mu_b_mhz_per_gauss", self.env.mu_b),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(Violation::new(k, format!("must be > 0, got {v}")));
            }
        }
        if !(self.env.b_gauss >= 0.0 && self.env.b_gauss.is_finite()) {
            out.push(Violation::new("b_gauss", format!("must be >= 0, got {}", self.env.b_gauss)));
        }
        let norm: f64 = self.pump_polarization.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            out.push(Violation::new("pump_eps_*", format!("|ε|² sums to {norm}, expected 1")));
        }
        if self.fock_cutoff == 0 || self.fock_cutoff > MAX_FOCK_CUTOFF {
            out.push(Violation::new(
                "fock_cutoff",
                format!("must be in 1..={MAX_FOCK_CUTOFF}, got {}", self.fock_cutoff),
            ));
        }
        if let PulseShape::Sin2Ramp { duration, ramp } = self.pulse {
            if !(ramp >= 0.0 && ramp <= duration / 2.0) {
                out.push(Violation::new("pulse_ramp_us", "must lie in [0, duration/2]"));
            }
        }
        let [a, b] = self.sim.initial_s_populations;
        if !(a >= 0.0 && b >= 0.0 && a + b > 0.0 && (a + b).is_finite()) {
            out.push(Violation::new(
                "initial_pop_s_*",
                "populations must be non-negative with a positive sum",
            ));
        }
        if !(self.sim.ringdown_factor >= 0.0 && self.sim.ringdown_factor.is_finite()) {
            out.push(Violation::new("ringdown_factor", "must be >= 0"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Reads the keys in [`SYSTEM_KEYS`] from `table`, removing them; keys
    /// not present keep their default. Unknown keys are left in the table.
    pub fn from_table(table: &mut Table) -> std::result::Result<Self, Vec<Violation>> {
        let mut cfg = SystemConfig::default();
        let mut r = Reader {
            table,
            violations: Vec::new(),
        };
        r.float("g0_mhz", &mut cfg.g0);
        r.float("kappa_mhz", &mut cfg.kappa);
        r.float("gamma_s_mhz", &mut cfg.gamma_s);
        r.float("gamma_d_mhz", &mut cfg.gamma_d);
        r.float("omega_397_mhz", &mut cfg.omega_397);
        r.float("delta_p_mhz", &mut cfg.delta_p);
        r.float("delta_c_mhz", &mut cfg.delta_c);
        r.float("delta_866_mhz", &mut cfg.delta_866);
        r.float("drive_e_mhz", &mut cfg.drive_e);
        let names = ["minus", "pi", "plus"];
        for (k, name) in names.iter().enumerate() {
            let mut re = cfg.pump_polarization[k].re;
            let mut im = cfg.pump_polarization[k].im;
            r.float(&format!("pump_eps_{name}_re"), &mut re);
            r.float(&format!("pump_eps_{name}_im"), &mut im);
            cfg.pump_polarization[k] = Complex64::new(re, im);
        }
        r.float("b_gauss", &mut cfg.env.b_gauss);
        r.float("mu_b_mhz_per_gauss", &mut cfg.env.mu_b);
        r.float("lande_g_s", &mut cfg.lande_g[0]);
        r.float("lande_g_p", &mut cfg.lande_g[1]);
        r.float("lande_g_d", &mut cfg.lande_g[2]);
        r.integer("fock_cutoff", &mut cfg.fock_cutoff);
        let shape = r.string("pulse_shape");
        let mut duration = cfg.pulse.duration();
        let mut ramp = cfg.pulse.ramp();
        r.float("pulse_duration_us", &mut duration);
        r.float("pulse_ramp_us", &mut ramp);
        cfg.pulse = match shape.as_deref().unwrap_or(cfg.pulse.name()) {
            "rectangular" => PulseShape::Rectangular { duration },
            "sin2" => PulseShape::Sin2Ramp { duration, ramp },
            other => {
                r.violations.push(Violation::new(
                    "pulse_shape",
                    format!("unknown shape `{other}` (expected rectangular or sin2)"),
                ));
                cfg.pulse
            }
        };
        r.float("ode_atol", &mut cfg.sim.ode_atol);
        r.float("ode_rtol", &mut cfg.sim.ode_rtol);
        r.float("initial_pop_s_minus", &mut cfg.sim.initial_s_populations[0]);
        r.float("initial_pop_s_plus", &mut cfg.sim.initial_s_populations[1]);
        r.float("ringdown_factor", &mut cfg.sim.ringdown_factor);
        if let Some(model) = r.string("transmission_model") {
            match model.as_str() {
                "pulsed" => cfg.sim.transmission_model = TransmissionModel::Pulsed,
                "steady-state" => cfg.sim.transmission_model = TransmissionModel::SteadyState,
                other => r.violations.push(Violation::new(
                    "transmission_model",
                    format!("unknown model `{other}` (expected pulsed or steady-state)"),
                )),
            }
        }
        r.float("probe_duration_us", &mut cfg.sim.probe_duration);
        r.boolean("detect_both_modes", &mut cfg.sim.detect_both_modes);
        r.boolean("ion_present", &mut cfg.sim.ion_present);

        let mut violations = r.violations;
        violations.extend(cfg.violations());
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(violations)
        }
    }

    /// Parses a config file body; unknown keys are violations.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![Violation::new("<file>", e.to_string())]))?;
        let parsed = SystemConfig::from_table(&mut table);
        let mut violations = match &parsed {
            Ok(_) => Vec::new(),
            Err(v) => v.clone(),
        };
        for key in table.keys() {
            violations.push(Violation::new(key.clone(), "unknown key"));
        }
        match parsed {
            Ok(cfg) if violations.is_empty() => Ok(cfg),
            _ => Err(Error::Config(violations)),
        }
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new();
        let mut f = |k: &str, v: f64| {
            t.insert(k.to_string(), Value::Float(v));
        };
        f("g0_mhz", self.g0);
        f("kappa_mhz", self.kappa);
        f("gamma_s_mhz", self.gamma_s);
        f("gamma_d_mhz", self.gamma_d);
        f("omega_397_mhz", self.omega_397);
        f("delta_p_mhz", self.delta_p);
        f("delta_c_mhz", self.delta_c);
        f("delta_866_mhz", self.delta_866);
        f("drive_e_mhz", self.drive_e);
        for (k, name) in ["minus", "pi", "plus"].iter().enumerate() {
            f(&format!("pump_eps_{name}_re"), self.pump_polarization[k].re);
            f(&format!("pump_eps_{name}_im"), self.pump_polarization[k].im);
        }
        f("b_gauss", self.env.b_gauss);
        f("mu_b_mhz_per_gauss", self.env.mu_b);
        f("lande_g_s", self.lande_g[0]);
        f("lande_g_p", self.lande_g[1]);
        f("lande_g_d", self.lande_g[2]);
        f("pulse_duration_us", self.pulse.duration());
        f("pulse_ramp_us", self.pulse.ramp());
        f("ode_atol", self.sim.ode_atol);
        f("ode_rtol", self.sim.ode_rtol);
        f("initial_pop_s_minus", self.sim.initial_s_populations[0]);
        f("initial_pop_s_plus", self.sim.initial_s_populations[1]);
        f("ringdown_factor", self.sim.ringdown_factor);
        f("probe_duration_us", self.sim.probe_duration);
        t.insert("fock_cutoff".into(), Value::Integer(self.fock_cutoff as i64));
        t.insert("pulse_shape".into(), Value::String(self.pulse.name().into()));
        t.insert(
            "transmission_model".into(),
            Value::String(self.sim.transmission_model.name().into()),
        );
        t.insert("detect_both_modes".into(), Value::Boolean(self.sim.detect_both_modes));
        t.insert("ion_present".into(), Value::Boolean(self.sim.ion_present));
        t
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_table()).expect("flat table serialises")
    }

    /// SHA-256 of the canonical serialisation, as lowercase hex.
    pub fn content_hash(&self) -> String {
        hash_hex(self.to_toml_string().as_bytes())
    }
}

pub fn hash_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
