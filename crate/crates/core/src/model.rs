//! Hamiltonian terms and collapse operators of the ion–cavity system.
//!
//! The composite space is `atom ⊗ mode+ ⊗ mode−`: the eight Zeeman sublevels
//! of S₁/₂, P₁/₂, D₃/₂ and two cavity modes coupled to σ₊ and σ₋ transitions.
//! All builders return operators in units of 2π·MHz (collapse operators in
//! units of √(2π·MHz)).

use std::sync::Arc;

use num_complex::Complex64;

use crate::angular::clebsch_gordan;
use crate::atom::{zeeman_shift, LevelScheme, Manifold};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{HilbertSpace, OperatorMatrix};

pub const ATOM: &str = "atom";
pub const MODE_PLUS: &str = "mode+";
pub const MODE_MINUS: &str = "mode-";

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Basis bookkeeping for `atom ⊗ mode+ ⊗ mode−`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub space: Arc<HilbertSpace>,
    pub scheme: LevelScheme,
    /// Fock states per mode (`fock_cutoff + 1`).
    pub fock: usize,
}

impl Layout {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        if cfg.fock_cutoff == 0 {
            return Err(Error::ZeroCutoff);
        }
        let scheme = cfg.level_scheme();
        let fock = cfg.fock_cutoff + 1;
        let space = HilbertSpace::new([(ATOM, scheme.len()), (MODE_PLUS, fock), (MODE_MINUS, fock)])?;
        Ok(Layout {
            space: Arc::new(space),
            scheme,
            fock,
        })
    }

    pub fn index(&self, level: usize, n_plus: usize, n_minus: usize) -> usize {
        (level * self.fock + n_plus) * self.fock + n_minus
    }

    /// All `(level, n₊, n₋)` triples in basis order.
    pub fn states(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let f = self.fock;
        (0..self.scheme.len()).flat_map(move |l| (0..f).flat_map(move |p| (0..f).map(move |m| (l, p, m))))
    }

    pub fn label(&self, index: usize) -> String {
        let level = index / (self.fock * self.fock);
        let rem = index % (self.fock * self.fock);
        format!(
            "{}⊗|{},{}⟩",
            self.scheme.sublevels()[level],
            rem / self.fock,
            rem % self.fock
        )
    }

    fn diagonal(&self, value: impl Fn(usize, usize, usize) -> f64) -> Result<OperatorMatrix> {
        let entries: Vec<_> = self
            .states()
            .map(|(l, p, m)| (self.index(l, p, m), self.index(l, p, m), re(value(l, p, m))))
            .collect();
        OperatorMatrix::from_entries(self.space.clone(), entries)
    }

    fn manifold_of(&self, level: usize) -> Manifold {
        self.scheme.sublevels()[level].manifold
    }

    /// Atomic transition operator `|upper⟩⟨lower|` between sublevel indices,
    /// tensored with the mode identities, times `coeff`.
    fn atomic_jump(&self, row_level: usize, col_level: usize, coeff: f64) -> Result<OperatorMatrix> {
        let mut entries = Vec::with_capacity(self.fock * self.fock);
        for p in 0..self.fock {
            for m in 0..self.fock {
                entries.push((self.index(row_level, p, m), self.index(col_level, p, m), re(coeff)));
            }
        }
        OperatorMatrix::from_entries(self.space.clone(), entries)
    }

    /// Annihilation operator of one mode on the full space.
    pub fn annihilation(&self, plus: bool) -> Result<OperatorMatrix> {
        let mut entries = Vec::new();
        for (l, p, m) in self.states() {
            let n = if plus { p } else { m };
            if n == 0 {
                continue;
            }
            let target = if plus { self.index(l, p - 1, m) } else { self.index(l, p, m - 1) };
            entries.push((target, self.index(l, p, m), re((n as f64).sqrt())));
        }
        OperatorMatrix::from_entries(self.space.clone(), entries)
    }

    pub fn number(&self, plus: bool) -> Result<OperatorMatrix> {
        self.diagonal(|_, p, m| if plus { p as f64 } else { m as f64 })
    }

    /// Projector onto one atomic manifold.
    pub fn projector(&self, manifold: Manifold) -> Result<OperatorMatrix> {
        self.diagonal(|l, _, _| if self.manifold_of(l) == manifold { 1.0 } else { 0.0 })
    }

    /// Excitation number `Σ|P⟩⟨P| + n₊ + n₋`.
    pub fn excitation_number(&self) -> Result<OperatorMatrix> {
        self.diagonal(|l, p, m| (self.manifold_of(l) == Manifold::P) as u8 as f64 + (p + m) as f64)
    }
}

/// `Δp Σ|S⟩⟨S| + Δc Σ|D⟩⟨D|`.
pub fn build_h0_raman(cfg: &SystemConfig) -> Result<OperatorMatrix> {
    let lay = Layout::new(cfg)?;
    lay.diagonal(|l, _, _| match lay.manifold_of(l) {
        Manifold::S => cfg.delta_p,
        Manifold::D => cfg.delta_c,
        Manifold::P => 0.0,
    })
}

/// Zeeman term, diagonal in the sublevel basis.
pub fn build_hb(cfg: &SystemConfig) -> Result<OperatorMatrix> {
    let lay = Layout::new(cfg)?;
    let shifts = lay
        .scheme
        .sublevels()
        .iter()
        .map(|&s| zeeman_shift(&lay.scheme, s, &cfg.env))
        .collect::<Result<Vec<f64>>>()?;
    lay.diagonal(|l, _, _| shifts[l])
}

/// Pump coupling S ↔ P with unit envelope: `(Ω/2) Σ ε_q C |P⟩⟨S| + h.c.`
pub fn build_h_pump_profile(cfg: &SystemConfig) -> Result<OperatorMatrix> {
    let lay = Layout::new(cfg)?;
    let s = lay.scheme.spec(Manifold::S)?.j;
    let pj = lay.scheme.spec(Manifold::P)?.j;
    let mut entries = Vec::new();
    for (is, ls) in lay.scheme.sublevels_of(Manifold::S) {
        for (ip, lp) in lay.scheme.sublevels_of(Manifold::P) {
            for q in -1..=1 {
                let eps = cfg.pump_polarization[(q + 1) as usize];
                if eps == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let c = clebsch_gordan(s, ls.m, q, pj, lp.m)?;
                if c == 0.0 {
                    continue;
                }
                let amp = eps * (cfg.omega_397 / 2.0 * c);
                for p in 0..lay.fock {
                    for m in 0..lay.fock {
                        let (row, col) = (lay.index(ip, p, m), lay.index(is, p, m));
                        entries.push((row, col, amp));
                        entries.push((col, row, amp.conj()));
                    }
                }
            }
        }
    }
    OperatorMatrix::from_entries(lay.space.clone(), entries)
}

/// Pump term at time `t` (μs): the profile scaled by the pulse envelope.
pub fn build_h_pump(cfg: &SystemConfig, t: f64) -> Result<OperatorMatrix> {
    let f = cfg.pulse.value(t);
    if f == 0.0 {
        return Ok(OperatorMatrix::zeros(Layout::new(cfg)?.space));
    }
    Ok(build_h_pump_profile(cfg)?.scale_real(f))
}

/// Ion–cavity coupling on the P ↔ D transition: the σ₊ mode drives
/// `q = +1`, the σ₋ mode `q = −1`.
pub fn build_h_ioncav(cfg: &SystemConfig) -> Result<OperatorMatrix> {
    let lay = Layout::new(cfg)?;
    let dj = lay.scheme.spec(Manifold::D)?.j;
    let pj = lay.scheme.spec(Manifold::P)?.j;
    let mut entries = Vec::new();
    for (id, ld) in lay.scheme.sublevels_of(Manifold::D) {
        for (ip, lp) in lay.scheme.sublevels_of(Manifold::P) {
            for (q, plus) in [(1, true), (-1, false)] {
                let c = clebsch_gordan(dj, ld.m, q, pj, lp.m)?;
                if c == 0.0 {
                    continue;
                }
                // a|n⟩ = √n|n−1⟩ on the coupled mode
                for p in 0..lay.fock {
                    for m in 0..lay.fock {
                        let n = if plus { p } else { m };
                        if n == 0 {
                            continue;
                        }
                        let (p2, m2) = if plus { (p - 1, m) } else { (p, m - 1) };
                        let v = re(cfg.g0 * c * (n as f64).sqrt());
                        let (row, col) = (lay.index(ip, p2, m2), lay.index(id, p, m));
                        entries.push((row, col, v));
                        entries.push((col, row, v));
                    }
                }
            }
        }
    }
    OperatorMatrix::from_entries(lay.space.clone(), entries)
}

/// Probe-frame bare Hamiltonian `Δ866 Σ|D⟩⟨D| − Δ866 (n₊ + n₋)`, cavity on
/// resonance with the atomic transition.
pub fn build_h0_transmission(cfg: &SystemConfig) -> Result<OperatorMatrix> {
    let lay = Layout::new(cfg)?;
    let d = cfg.delta_866;
    lay.diagonal(|l, p, m| {
        let atom = if lay.manifold_of(l) == Manifold::D { d } else { 0.0 };
        atom - d * (p + m) as f64
    })
}

/// Coherent drive `E (a₊ + a₊†)` on the σ₊ mode.
pub fn build_h_drive(cfg: &SystemConfig) -> Result<OperatorMatrix> {
    let lay = Layout::new(cfg)?;
    let a = lay.annihilation(true)?;
    Ok((&a + &a.dagger()).scale_real(cfg.drive_e))
}

/// Collapse operators `O_k` for the dissipator `Σ 2OρO† − O†Oρ − ρO†O`:
/// the two cavity modes first, then P → S, then P → D. Channels with zero
/// rate or vanishing coupling coefficient are omitted.
pub fn build_collapse_operators(cfg: &SystemConfig) -> Result<Vec<OperatorMatrix>> {
    let lay = Layout::new(cfg)?;
    let mut ops = Vec::new();
    if cfg.kappa != 0.0 {
        let k = cfg.kappa.sqrt();
        ops.push(lay.annihilation(true)?.scale_real(k));
        ops.push(lay.annihilation(false)?.scale_real(k));
    }
    let pj = lay.scheme.spec(Manifold::P)?.j;
    for (lower, rate) in [(Manifold::S, cfg.gamma_s), (Manifold::D, cfg.gamma_d)] {
        if rate == 0.0 {
            continue;
        }
        let lj = lay.scheme.spec(lower)?.j;
        for (ip, lp) in lay.scheme.sublevels_of(Manifold::P) {
            for (il, ll) in lay.scheme.sublevels_of(lower) {
                let q = (lp.m - ll.m).twice() / 2;
                if !(-1..=1).contains(&q) {
                    continue;
                }
                let c = clebsch_gordan(lj, ll.m, q, pj, lp.m)?;
                if c != 0.0 {
                    ops.push(lay.atomic_jump(il, ip, rate.sqrt() * c)?);
                }
            }
        }
    }
    Ok(ops)
}

/// Cavity-only space `mode+ ⊗ mode−` used when the ion is removed.
pub fn cavity_space(cfg: &SystemConfig) -> Result<Arc<HilbertSpace>> {
    if cfg.fock_cutoff == 0 {
        return Err(Error::ZeroCutoff);
    }
    let f = cfg.fock_cutoff + 1;
    Ok(Arc::new(HilbertSpace::new([(MODE_PLUS, f), (MODE_MINUS, f)])?))
}

/// Empty-cavity transmission problem: Hamiltonian `−Δ866 (n₊ + n₋) +
/// E(a₊ + a₊†)` and collapse operators `√κ a₊, √κ a₋`.
pub fn build_cavity_transmission(cfg: &SystemConfig) -> Result<(OperatorMatrix, Vec<OperatorMatrix>)> {
    let space = cavity_space(cfg)?;
    let f = cfg.fock_cutoff + 1;
    let idx = |p: usize, m: usize| p * f + m;
    let mut h = Vec::new();
    let mut a_plus = Vec::new();
    let mut a_minus = Vec::new();
    for p in 0..f {
        for m in 0..f {
            h.push((idx(p, m), idx(p, m), re(-cfg.delta_866 * (p + m) as f64)));
            if p > 0 {
                let v = (p as f64).sqrt();
                h.push((idx(p - 1, m), idx(p, m), re(cfg.drive_e * v)));
                h.push((idx(p, m), idx(p - 1, m), re(cfg.drive_e * v)));
                a_plus.push((idx(p - 1, m), idx(p, m), re(v * cfg.kappa.sqrt())));
            }
            if m > 0 {
                a_minus.push((idx(p, m - 1), idx(p, m), re((m as f64).sqrt() * cfg.kappa.sqrt())));
            }
        }
    }
    let h = OperatorMatrix::from_entries(space.clone(), h)?;
    let mut ops = Vec::new();
    if cfg.kappa != 0.0 {
        ops.push(OperatorMatrix::from_entries(space.clone(), a_plus)?);
        ops.push(OperatorMatrix::from_entries(space, a_minus)?);
    }
    Ok((h, ops))
}
