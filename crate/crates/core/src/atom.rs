//! Atomic level scheme of the ion and its Zeeman structure.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::angular::HalfInt;
use crate::error::{Error, Result};

/// Fine-structure manifold of the 8-level model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Manifold {
    /// S₁/₂ ground state
    S,
    /// P₁/₂ excited state
    P,
    /// D₃/₂ metastable state
    D,
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Manifold::S => "S",
            Manifold::P => "P",
            Manifold::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Manifold {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(Manifold::S),
            "P" | "p" => Ok(Manifold::P),
            "D" | "d" => Ok(Manifold::D),
            other => Err(Error::UnknownManifold(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldSpec {
    pub manifold: Manifold,
    pub j: HalfInt,
    pub lande_g: f64,
}

/// One Zeeman sublevel `|L, m_j⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sublevel {
    pub manifold: Manifold,
    pub m: HalfInt,
}

impl fmt::Display for Sublevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{},{}⟩", self.manifold, self.m)
    }
}

/// Ordered set of manifolds; sublevels are enumerated manifold by manifold
/// (in declaration order) and by ascending `m_j` within each manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelScheme {
    manifolds: Vec<ManifoldSpec>,
    sublevels: Vec<Sublevel>,
}

pub const DEFAULT_G_S: f64 = 2.002;
pub const DEFAULT_G_P: f64 = 2.0 / 3.0;
pub const DEFAULT_G_D: f64 = 4.0 / 5.0;
/// Bohr magneton in MHz per gauss (h = 1).
pub const DEFAULT_MU_B: f64 = 1.3996;

impl LevelScheme {
    pub fn new(manifolds: Vec<ManifoldSpec>) -> Result<Self> {
        let mut sublevels = Vec::new();
        for (i, spec) in manifolds.iter().enumerate() {
            if spec.j.twice() < 0 {
                return Err(Error::MalformedAngularMomentum(format!("negative j for {}", spec.manifold)));
            }
            if manifolds[..i].iter().any(|m| m.manifold == spec.manifold) {
                return Err(Error::InvalidInput(format!("manifold {} listed twice", spec.manifold)));
            }
            let tj = spec.j.twice();
            for tm in (-tj..=tj).step_by(2) {
                sublevels.push(Sublevel {
                    manifold: spec.manifold,
                    m: HalfInt::from_twice(tm),
                });
            }
        }
        Ok(LevelScheme { manifolds, sublevels })
    }

    /// S₁/₂, P₁/₂, D₃/₂ with the given Landé factors.
    pub fn calcium(g_s: f64, g_p: f64, g_d: f64) -> Self {
        Self::new(vec![
            ManifoldSpec { manifold: Manifold::S, j: HalfInt::from_twice(1), lande_g: g_s },
            ManifoldSpec { manifold: Manifold::P, j: HalfInt::from_twice(1), lande_g: g_p },
            ManifoldSpec { manifold: Manifold::D, j: HalfInt::from_twice(3), lande_g: g_d },
        ])
        .expect("static scheme is valid")
    }

    pub fn manifolds(&self) -> &[ManifoldSpec] {
        &self.manifolds
    }

    pub fn sublevels(&self) -> &[Sublevel] {
        &self.sublevels
    }

    pub fn len(&self) -> usize {
        self.sublevels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sublevels.is_empty()
    }

    pub fn spec(&self, manifold: Manifold) -> Result<&ManifoldSpec> {
        self.manifolds
            .iter()
            .find(|m| m.manifold == manifold)
            .ok_or_else(|| Error::UnknownManifold(manifold.to_string()))
    }

    pub fn index(&self, manifold: Manifold, m: HalfInt) -> Result<usize> {
        self.sublevels
            .iter()
            .position(|s| s.manifold == manifold && s.m == m)
            .ok_or_else(|| Error::InvalidState(format!("no sublevel |{manifold},{m}⟩ in scheme")))
    }

    pub fn sublevels_of(&self, manifold: Manifold) -> impl Iterator<Item = (usize, Sublevel)> + '_ {
        self.sublevels
            .iter()
            .copied()
            .enumerate()
            .filter(move |(_, s)| s.manifold == manifold)
    }
}

impl Default for LevelScheme {
    fn default() -> Self {
        Self::calcium(DEFAULT_G_S, DEFAULT_G_P, DEFAULT_G_D)
    }
}

/// Static magnetic field and the Bohr magneton in frequency units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagneticEnvironment {
    /// Field in gauss.
    pub b_gauss: f64,
    /// MHz per gauss.
    pub mu_b: f64,
}

impl Default for MagneticEnvironment {
    fn default() -> Self {
        MagneticEnvironment { b_gauss: 0.9, mu_b: DEFAULT_MU_B }
    }
}

impl MagneticEnvironment {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_gauss >= 0.0 && self.b_gauss.is_finite()) {
            return Err(Error::InvalidInput(format!("B must be >= 0, got {}", self.b_gauss)));
        }
        if !(self.mu_b > 0.0 && self.mu_b.is_finite()) {
            return Err(Error::InvalidInput(format!("mu_B must be > 0, got {}", self.mu_b)));
        }
        Ok(())
    }
}

/// Zeeman shift `B·g_L·μ_B·m_j`, in units of 2π·MHz.
pub fn zeeman_shift(scheme: &LevelScheme, level: Sublevel, env: &MagneticEnvironment) -> Result<f64> {
    let spec = scheme.spec(level.manifold)?;
    if level.m.twice().abs() > spec.j.twice() || (spec.j.twice() - level.m.twice()) % 2 != 0 {
        return Err(Error::MalformedAngularMomentum(format!(
            "m = {} not allowed in {} (j = {})",
            level.m, level.manifold, spec.j
        )));
    }
    Ok(env.b_gauss * spec.lande_g * env.mu_b * level.m.value())
}
