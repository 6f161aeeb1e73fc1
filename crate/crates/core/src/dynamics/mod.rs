//! Lindblad master equation: right-hand side, time evolution and steady state.
//!
//! The module is unit-agnostic: Hamiltonians and collapse operators must use
//! angular-frequency units consistent with the time axis (e.g. rad/μs with
//! times in μs).

mod integrator;
mod sparse;
mod steady;

use std::sync::Mutex;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::config::PulseShape;
use crate::error::{Error, Result};
use crate::linalg::{DensityMatrix, OperatorMatrix, HERMITIAN_RTOL};

use integrator::{Stepper, Tolerances};
use sparse::{commutator_superoperator, liouvillian, reachable, Csr};

pub use steady::{steady_state, steady_state_with, SteadyStateMethod, SteadyStateOptions};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Dense positivity checks are done up to this Hilbert-space dimension.
pub const POSITIVITY_CHECK_MAX_DIM: usize = 128;

/// Worst invariant violations over every evolution and steady state computed
/// in this process since the last reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantSummary {
    pub runs: usize,
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    /// `+∞` until some state has been checked.
    pub min_eigenvalue: f64,
    pub positivity_checks: usize,
}

const EMPTY_SUMMARY: InvariantSummary = InvariantSummary {
    runs: 0,
    max_trace_drift: 0.0,
    max_hermiticity_error: 0.0,
    min_eigenvalue: f64::INFINITY,
    positivity_checks: 0,
};

static MONITOR: Mutex<InvariantSummary> = Mutex::new(EMPTY_SUMMARY);

pub fn invariant_summary() -> InvariantSummary {
    *MONITOR.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn reset_invariant_summary() {
    *MONITOR.lock().unwrap_or_else(|e| e.into_inner()) = EMPTY_SUMMARY;
}

pub(crate) fn record_invariants(d: &Diagnostics) {
    let mut m = MONITOR.lock().unwrap_or_else(|e| e.into_inner());
    m.runs += 1;
    m.max_trace_drift = m.max_trace_drift.max(d.max_trace_drift);
    m.max_hermiticity_error = m.max_hermiticity_error.max(d.max_hermiticity_error);
    if let Some(e) = d.min_eigenvalue {
        m.min_eigenvalue = m.min_eigenvalue.min(e);
        m.positivity_checks += 1;
    }
}

/// `L(ρ, O) = 2OρO† − O†Oρ − ρO†O`.
pub fn lindblad_dissipator(rho: &DensityMatrix, op: &OperatorMatrix) -> Result<OperatorMatrix> {
    if rho.space() != op.space() {
        return Err(Error::SpaceMismatch {
            left: rho.space().to_string(),
            right: op.space().to_string(),
        });
    }
    let n = rho.dim();
    let r = DMatrix::from_row_slice(n, n, rho.data());
    let o = op.to_dense();
    let od = o.adjoint();
    let odo = &od * &o;
    let out = (&o * &r * &od) * Complex64::new(2.0, 0.0) - &odo * &r - &r * &odo;
    OperatorMatrix::from_dense(rho.space().clone(), &out)
}

/// `H(t) = H_static + f(t)·H_pulse`.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub static_part: OperatorMatrix,
    pub pulse: Option<(OperatorMatrix, PulseShape)>,
}

impl Hamiltonian {
    pub fn constant(h: OperatorMatrix) -> Self {
        Hamiltonian {
            static_part: h,
            pulse: None,
        }
    }

    pub fn at(&self, t: f64) -> OperatorMatrix {
        match &self.pulse {
            Some((hp, shape)) => {
                let f = shape.value(t);
                if f == 0.0 {
                    self.static_part.clone()
                } else {
                    &self.static_part + &hp.scale_real(f)
                }
            }
            None => self.static_part.clone(),
        }
    }

    fn check_hermitian(&self) -> Result<()> {
        let mut worst = self.static_part.hermiticity_error();
        if let Some((hp, _)) = &self.pulse {
            worst = worst.max(hp.hermiticity_error());
        }
        if worst > HERMITIAN_RTOL {
            return Err(Error::NonHermitian { deviation: worst });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MasterEquationProblem {
    pub hamiltonian: Hamiltonian,
    pub collapse_ops: Vec<OperatorMatrix>,
    pub initial_state: DensityMatrix,
}

impl MasterEquationProblem {
    fn check(&self) -> Result<()> {
        let space = self.initial_state.space();
        let mut ops: Vec<&OperatorMatrix> = vec![&self.hamiltonian.static_part];
        if let Some((hp, _)) = &self.hamiltonian.pulse {
            ops.push(hp);
        }
        ops.extend(self.collapse_ops.iter());
        for op in ops {
            if op.space() != space {
                return Err(Error::SpaceMismatch {
                    left: space.to_string(),
                    right: op.space().to_string(),
                });
            }
        }
        self.hamiltonian.check_hermitian()
    }
}

/// What to record during [`evolve`].
#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Times (strictly increasing, within `(0, t_final]`) at which to record.
    /// `t_final` is always recorded.
    pub sample_times: Vec<f64>,
    pub store_states: bool,
    /// Expectation values `Tr(ρ·A)` recorded at every sample time.
    pub observables: Vec<OperatorMatrix>,
    /// Operators `O` whose emission `∫ 2⟨O†O⟩ dt` is accumulated; with
    /// `O = √κ·a` this is the expected photon count leaking from the mode.
    pub emission_ops: Vec<OperatorMatrix>,
    /// Integration window for the emission; the whole run if `None`.
    pub emission_window: Option<(f64, f64)>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            atol: 1e-10,
            rtol: 1e-8,
            sample_times: Vec::new(),
            store_states: false,
            observables: Vec::new(),
            emission_ops: Vec::new(),
            emission_window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    /// Smallest eigenvalue seen at the sample times; `None` above
    /// [`POSITIVITY_CHECK_MAX_DIM`].
    pub min_eigenvalue: Option<f64>,
    pub steps: usize,
    pub rejected_steps: usize,
    /// Size of the invariant subspace the integration ran on.
    pub reduced_dim: usize,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// `expectations[k][s]` is observable `k` at `times[s]`.
    pub expectations: Vec<Vec<Complex64>>,
    pub integrated_emission: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Linear functional `vec(ρ) ↦ Tr(ρ·A)` on the reduced coordinates.
fn functional(op: &OperatorMatrix, pos: &[usize]) -> Vec<(usize, Complex64)> {
    let n = op.dim();
    op.entries()
        .iter()
        .filter_map(|&(r, c, v)| {
            let p = pos[c * n + r];
            (p != usize::MAX).then_some((p, v))
        })
        .collect()
}

fn apply_functional(f: &[(usize, Complex64)], y: &[Complex64]) -> Complex64 {
    f.iter().map(|&(p, v)| v * y[p]).sum()
}

/// Integrates the master equation from `t = 0` to `t_final`.
///
/// The state is propagated on the smallest subspace of `vec(ρ)` that is
/// invariant under the Liouvillian and contains the initial state, which is
/// exact and typically much smaller than the full `n²`.
pub fn evolve(problem: &MasterEquationProblem, t_final: f64, opts: &EvolveOptions) -> Result<TrajectoryResult> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidInput(format!("t_final must be > 0, got {t_final}")));
    }
    problem.check()?;
    let space = problem.initial_state.space().clone();
    for op in opts.observables.iter().chain(&opts.emission_ops) {
        if op.space() != &space {
            return Err(Error::SpaceMismatch {
                left: space.to_string(),
                right: op.space().to_string(),
            });
        }
    }
    let mut samples: Vec<f64> = opts.sample_times.clone();
    if samples.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("sample times must be strictly increasing".into()));
    }
    if samples.iter().any(|&t| !(t > 0.0 && t <= t_final)) {
        return Err(Error::InvalidInput(format!("sample times must lie in (0, {t_final}]")));
    }
    if samples.last() != Some(&t_final) {
        samples.push(t_final);
    }

    let n = space.total_dim();
    let l_static = liouvillian(&problem.hamiltonian.static_part, &problem.collapse_ops);
    let l_pulse = problem
        .hamiltonian
        .pulse
        .as_ref()
        .map(|(hp, shape)| (commutator_superoperator(hp), *shape));

    let start: Vec<usize> = (0..n * n).filter(|&p| problem.initial_state.data()[p] != ZERO).collect();
    let mut mats: Vec<&Csr> = vec![&l_static];
    if let Some((lp, _)) = &l_pulse {
        mats.push(lp);
    }
    let keep = reachable(&mats, &start);
    let mut pos = vec![usize::MAX; n * n];
    for (new, &old) in keep.iter().enumerate() {
        pos[old] = new;
    }
    let ls = l_static.restrict(&keep, &pos);
    let lp = l_pulse.as_ref().map(|(m, shape)| (m.restrict(&keep, &pos), *shape));
    let r = keep.len();

    let emission: Vec<Vec<(usize, Complex64)>> = opts
        .emission_ops
        .iter()
        .map(|o| functional(&(&o.dagger() * o).scale_real(2.0), &pos))
        .collect();
    let observables: Vec<Vec<(usize, Complex64)>> = opts.observables.iter().map(|o| functional(o, &pos)).collect();
    let n_em = emission.len();

    let mut y: Vec<Complex64> = keep.iter().map(|&p| problem.initial_state.data()[p]).collect();
    y.extend(std::iter::repeat_n(ZERO, n_em));

    // segment boundaries: pulse edges, emission window, samples
    let mut marks: Vec<f64> = samples.clone();
    if let Some((_, shape)) = &lp {
        marks.extend(shape.breakpoints());
    }
    if let Some((a, b)) = opts.emission_window {
        if !(a < b) {
            return Err(Error::InvalidInput(format!("empty emission window ({a}, {b})")));
        }
        marks.push(a);
        marks.push(b);
    }
    marks.retain(|&t| t > 0.0 && t <= t_final);
    marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    marks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_final);

    let tol = Tolerances {
        atol: opts.atol,
        rtol: opts.rtol,
    };
    let mut stepper = Stepper::new(r + n_em, tol);
    let mut result = TrajectoryResult {
        times: Vec::with_capacity(samples.len()),
        states: Vec::new(),
        expectations: vec![Vec::with_capacity(samples.len()); observables.len()],
        integrated_emission: vec![0.0; n_em],
        diagnostics: Diagnostics {
            max_trace_drift: 0.0,
            max_hermiticity_error: 0.0,
            min_eigenvalue: None,
            steps: 0,
            rejected_steps: 0,
            reduced_dim: r,
        },
    };
    let full_state = |y: &[Complex64]| -> Vec<Complex64> {
        let mut data = vec![ZERO; n * n];
        for (k, &p) in keep.iter().enumerate() {
            data[p] = y[k];
        }
        data
    };

    let mut t = 0.0;
    let mut next_sample = 0;
    for &mark in &marks {
        let mid = 0.5 * (t + mark);
        let emitting = match opts.emission_window {
            Some((a, b)) => mid > a && mid < b,
            None => true,
        };
        let mut rhs = |time: f64, y: &[Complex64], dy: &mut [Complex64]| {
            ls.matvec(&y[..r], &mut dy[..r]);
            if let Some((m, shape)) = &lp {
                let f = shape.piece_value(mid, time);
                if f != 0.0 {
                    m.matvec_add(f, &y[..r], &mut dy[..r]);
                }
            }
            for (k, w) in emission.iter().enumerate() {
                dy[r + k] = if emitting { apply_functional(w, &y[..r]) } else { ZERO };
            }
        };
        stepper.invalidate();
        stepper.integrate(&mut rhs, t, mark, &mut y)?;
        t = mark;

        while next_sample < samples.len() && (samples[next_sample] - t).abs() <= 1e-12 * t_final {
            let data = full_state(&y);
            let rho = DensityMatrix::from_raw(space.clone(), data)?;
            let d = &mut result.diagnostics;
            d.max_trace_drift = d.max_trace_drift.max((rho.trace() - Complex64::new(1.0, 0.0)).norm());
            d.max_hermiticity_error = d.max_hermiticity_error.max(rho.hermiticity_error());
            if n <= POSITIVITY_CHECK_MAX_DIM {
                let e = rho.min_eigenvalue();
                d.min_eigenvalue = Some(d.min_eigenvalue.map_or(e, |m: f64| m.min(e)));
            }
            for (k, f) in observables.iter().enumerate() {
                result.expectations[k].push(apply_functional(f, &y[..r]));
            }
            result.times.push(samples[next_sample]);
            if opts.store_states {
                result.states.push(rho);
            }
            next_sample += 1;
        }
    }
    for k in 0..n_em {
        result.integrated_emission[k] = y[r + k].re;
    }
    result.diagnostics.steps = stepper.steps;
    result.diagnostics.rejected_steps = stepper.rejected;
    record_invariants(&result.diagnostics);
    Ok(result)
}

/// Right-hand side `dρ/dt` of the master equation at a given state.
pub fn master_equation_rhs(
    h: &OperatorMatrix,
    collapse_ops: &[OperatorMatrix],
    rho: &DensityMatrix,
) -> Result<Vec<Complex64>> {
    for op in std::iter::once(h).chain(collapse_ops) {
        if op.space() != rho.space() {
            return Err(Error::SpaceMismatch {
                left: rho.space().to_string(),
                right: op.space().to_string(),
            });
        }
    }
    let l = liouvillian(h, collapse_ops);
    let mut out = vec![ZERO; rho.data().len()];
    l.matvec(rho.data(), &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{annihilation_operator, kron, HilbertSpace};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn dissipator_on_fock_state() {
        let a = annihilation_operator(1).unwrap();
        let rho = DensityMatrix::basis_state(a.space().clone(), 1).unwrap();
        let d = lindblad_dissipator(&rho, &a).unwrap();
        assert_eq!(d.get(0, 0), c(2.0));
        assert_eq!(d.get(1, 1), c(-2.0));
        assert_eq!(d.nnz(), 2);
        let id = OperatorMatrix::identity(a.space().clone());
        assert!(lindblad_dissipator(&rho, &id).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn free_evolution_is_trivial() {
        let space = Arc::new(HilbertSpace::single("q", 3).unwrap());
        let psi = [c(0.6), Complex64::new(0.0, 0.8), c(0.0)];
        let rho = DensityMatrix::pure(space.clone(), &psi).unwrap();
        let p = MasterEquationProblem {
            hamiltonian: Hamiltonian::constant(OperatorMatrix::zeros(space)),
            collapse_ops: vec![],
            initial_state: rho.clone(),
        };
        let opts = EvolveOptions {
            sample_times: vec![0.5, 1.0],
            store_states: true,
            ..Default::default()
        };
        let res = evolve(&p, 2.0, &opts).unwrap();
        assert_eq!(res.times, vec![0.5, 1.0, 2.0]);
        for s in &res.states {
            assert_eq!(s, &rho);
        }
    }

    #[test]
    fn cavity_decay_matches_exponential() {
        let kappa: f64 = 1.3;
        let a = annihilation_operator(1).unwrap();
        let n_op = &a.dagger() * &a;
        let rho = DensityMatrix::basis_state(a.space().clone(), 1).unwrap();
        let p = MasterEquationProblem {
            hamiltonian: Hamiltonian::constant(OperatorMatrix::zeros(a.space().clone())),
            collapse_ops: vec![a.scale_real(kappa.sqrt())],
            initial_state: rho,
        };
        let times: Vec<f64> = (1..=10).map(|k| 0.2 * k as f64).collect();
        let opts = EvolveOptions {
            sample_times: times.clone(),
            observables: vec![n_op],
            emission_ops: vec![a.scale_real(kappa.sqrt())],
            ..Default::default()
        };
        let res = evolve(&p, 2.0, &opts).unwrap();
        for (t, v) in times.iter().zip(&res.expectations[0]) {
            assert!((v.re - (-2.0 * kappa * t).exp()).abs() < 1e-8, "t={t}");
        }
        // emitted photons 1 − e^{−2κT}
        assert!((res.integrated_emission[0] - (1.0 - (-2.0 * kappa * 2.0f64).exp())).abs() < 1e-8);
        assert!(res.diagnostics.max_trace_drift < 1e-9);
    }

    #[test]
    fn vacuum_rabi_oscillation() {
        // two-level atom ⊗ mode, resonant, lossless
        let g = 2.0;
        let sm = annihilation_operator(1).unwrap(); // |g⟩⟨e| with g = 0
        let a = annihilation_operator(1).unwrap();
        let atom = sm.relabel(Arc::new(HilbertSpace::single("atom", 2).unwrap())).unwrap();
        let id_c = OperatorMatrix::identity(a.space().clone());
        let h = (&kron(&atom.dagger(), &a).unwrap() + &kron(&atom, &a.dagger()).unwrap()).scale_real(g);
        let pe = kron(&(&atom.dagger() * &atom), &id_c).unwrap();
        // |g, 1⟩ = index 1
        let rho = DensityMatrix::basis_state(h.space().clone(), 1).unwrap();
        let p = MasterEquationProblem {
            hamiltonian: Hamiltonian::constant(h),
            collapse_ops: vec![],
            initial_state: rho,
        };
        let times: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
        let opts = EvolveOptions {
            sample_times: times.clone(),
            observables: vec![pe],
            ..Default::default()
        };
        let res = evolve(&p, 2.0, &opts).unwrap();
        for (t, v) in times.iter().zip(&res.expectations[0]) {
            // P_e = sin²(g t): oscillation at angular frequency 2g
            let oracle = 0.5 * (1.0 - (2.0 * g * t).cos());
            assert!((v.re - oracle).abs() < 1e-7, "t={t}: {} vs {oracle}", v.re);
        }
    }

    #[test]
    fn pulsed_drive_switches_off() {
        // Rabi flopping during a rectangular pulse, frozen afterwards
        let sm = annihilation_operator(1).unwrap();
        let space = sm.space().clone();
        let omega = 3.0;
        let hp = (&sm + &sm.dagger()).scale_real(omega / 2.0);
        let pe = &sm.dagger() * &sm;
        let p = MasterEquationProblem {
            hamiltonian: Hamiltonian {
                static_part: OperatorMatrix::zeros(space.clone()),
                pulse: Some((hp, PulseShape::Rectangular { duration: 0.4 })),
            },
            collapse_ops: vec![],
            initial_state: DensityMatrix::basis_state(space, 0).unwrap(),
        };
        let opts = EvolveOptions {
            sample_times: vec![0.2, 0.4, 1.0],
            observables: vec![pe],
            ..Default::default()
        };
        let res = evolve(&p, 1.0, &opts).unwrap();
        let at = |t: f64| (omega * t / 2.0).sin().powi(2);
        assert!((res.expectations[0][0].re - at(0.2)).abs() < 1e-8);
        assert!((res.expectations[0][1].re - at(0.4)).abs() < 1e-8);
        assert!((res.expectations[0][2].re - at(0.4)).abs() < 1e-8);
    }

    #[test]
    fn non_hermitian_hamiltonian_rejected() {
        let a = annihilation_operator(1).unwrap();
        let p = MasterEquationProblem {
            hamiltonian: Hamiltonian::constant(a.clone()),
            collapse_ops: vec![],
            initial_state: DensityMatrix::basis_state(a.space().clone(), 0).unwrap(),
        };
        assert!(matches!(
            evolve(&p, 1.0, &EvolveOptions::default()),
            Err(Error::NonHermitian { .. })
        ));
    }

    #[test]
    fn emission_window_restricts_count() {
        let kappa: f64 = 0.8;
        let a = annihilation_operator(1).unwrap();
        let p = MasterEquationProblem {
            hamiltonian: Hamiltonian::constant(OperatorMatrix::zeros(a.space().clone())),
            collapse_ops: vec![a.scale_real(kappa.sqrt())],
            initial_state: DensityMatrix::basis_state(a.space().clone(), 1).unwrap(),
        };
        let opts = EvolveOptions {
            emission_ops: vec![a.scale_real(kappa.sqrt())],
            emission_window: Some((0.5, 1.0)),
            ..Default::default()
        };
        let res = evolve(&p, 3.0, &opts).unwrap();
        let oracle = (-2.0 * kappa * 0.5f64).exp() - (-2.0 * kappa * 1.0f64).exp();
        assert!((res.integrated_emission[0] - oracle).abs() < 1e-8);
    }

    fn random_problem(seed: &[f64]) -> (OperatorMatrix, Vec<OperatorMatrix>) {
        let a = annihilation_operator(2).unwrap();
        let h = (&a.dagger() * &a).scale_real(seed[0]) + (&a + &a.dagger()).scale_real(seed[1]);
        (h, vec![a.scale_real(seed[2].sqrt())])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dissipator_is_traceless(re in proptest::collection::vec(-1.0f64..1.0, 16),
                                   im in proptest::collection::vec(-1.0f64..1.0, 16),
                                   ps in proptest::collection::vec(0.0f64..1.0, 4)) {
            let space = Arc::new(HilbertSpace::single("q", 4).unwrap());
            let dense = DMatrix::from_fn(4, 4, |i, j| Complex64::new(re[i * 4 + j], im[i * 4 + j]));
            let op = OperatorMatrix::from_dense(space.clone(), &dense).unwrap();
            let rho = DensityMatrix::diagonal(space, &[ps[0] + 0.1, ps[1], ps[2], ps[3]]).unwrap();
            let d = lindblad_dissipator(&rho, &op).unwrap();
            prop_assert!(d.trace().norm() < 1e-12);
        }

        #[test]
        fn evolution_is_linear(w in 0.0f64..1.0, d in -2.0f64..2.0, e in 0.0f64..1.0, k in 0.1f64..2.0) {
            let (h, ops) = random_problem(&[d, e, k]);
            let space = h.space().clone();
            let r1 = DensityMatrix::basis_state(space.clone(), 1).unwrap();
            let psi = [c(0.5), c(0.5), Complex64::new(0.0, 0.7)];
            let r2 = DensityMatrix::pure(space.clone(), &psi).unwrap();
            let n_op = { let a = annihilation_operator(2).unwrap(); &a.dagger() * &a };
            let run = |rho: DensityMatrix| {
                let p = MasterEquationProblem {
                    hamiltonian: Hamiltonian::constant(h.clone()),
                    collapse_ops: ops.clone(),
                    initial_state: rho,
                };
                let opts = EvolveOptions { observables: vec![n_op.clone()], ..Default::default() };
                evolve(&p, 1.0, &opts).unwrap().expectations[0][0]
            };
            let mixed = run(r1.mix(&r2, w).unwrap());
            let separate = run(r1.clone()) * w + run(r2.clone()) * (1.0 - w);
            prop_assert!((mixed - separate).norm() < 1e-7);
        }
    }

    #[test]
    fn rhs_preserves_trace() {
        let (h, ops) = random_problem(&[0.3, 0.2, 0.5]);
        let rho = DensityMatrix::basis_state(h.space().clone(), 1).unwrap();
        let d = master_equation_rhs(&h, &ops, &rho).unwrap();
        let tr: Complex64 = (0..3).map(|i| d[i * 3 + i]).sum();
        assert!(tr.norm() < 1e-14);
    }
}
