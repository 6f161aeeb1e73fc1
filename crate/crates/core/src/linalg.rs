//! Sparse complex operator algebra on composite Hilbert spaces.
//!
//! Operators keep their non-zero entries sorted by `(row, col)`, so every
//! iteration, sum and product visits entries in the same order on every run.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const HERMITIAN_RTOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// An ordered tensor product of labelled subsystems.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HilbertSpace {
    subsystems: Vec<(String, usize)>,
    total_dim: usize,
}

impl HilbertSpace {
    pub fn new<S: Into<String>>(subsystems: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let subsystems: Vec<(String, usize)> =
            subsystems.into_iter().map(|(l, d)| (l.into(), d)).collect();
        if subsystems.is_empty() {
            return Err(Error::InvalidSpace("no subsystems".into()));
        }
        for (i, (label, dim)) in subsystems.iter().enumerate() {
            if *dim == 0 {
                return Err(Error::InvalidSpace(format!("subsystem `{label}` has dimension 0")));
            }
            if subsystems[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::InvalidSpace(format!("duplicate subsystem label `{label}`")));
            }
        }
        let total_dim = subsystems.iter().map(|(_, d)| d).product();
        Ok(HilbertSpace {
            subsystems,
            total_dim,
        })
    }

    pub fn single(label: impl Into<String>, dim: usize) -> Result<Self> {
        Self::new([(label.into(), dim)])
    }

    /// Product space `self ⊗ other`.
    pub fn product(&self, other: &HilbertSpace) -> Result<Self> {
        Self::new(self.subsystems.iter().chain(&other.subsystems).cloned())
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn subsystems(&self) -> &[(String, usize)] {
        &self.subsystems
    }

    pub fn dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|(_, d)| *d).collect()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.subsystems.iter().position(|(l, _)| l == label)
    }

    /// Flat index of a product basis state given one index per subsystem.
    pub fn index_of(&self, local: &[usize]) -> Result<usize> {
        if local.len() != self.subsystems.len() {
            return Err(Error::InvalidState(format!(
                "expected {} subsystem indices, got {}",
                self.subsystems.len(),
                local.len()
            )));
        }
        let mut idx = 0;
        for ((label, dim), &k) in self.subsystems.iter().zip(local) {
            if k >= *dim {
                return Err(Error::DimensionMismatch {
                    subsystem: label.clone(),
                    expected: *dim,
                    got: k + 1,
                });
            }
            idx = idx * dim + k;
        }
        Ok(idx)
    }

    /// Inverse of [`HilbertSpace::index_of`].
    pub fn local_indices(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.subsystems.len()];
        for (slot, (_, dim)) in out.iter_mut().zip(&self.subsystems).rev() {
            *slot = index % dim;
            index /= dim;
        }
        out
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .subsystems
            .iter()
            .map(|(l, d)| format!("{l}:{d}"))
            .collect();
        write!(f, "[{}]", parts.join(" x "))
    }
}

/// Sparse complex matrix acting on a [`HilbertSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    space: Arc<HilbertSpace>,
    entries: Vec<(usize, usize, Complex64)>,
}

impl OperatorMatrix {
    pub fn zeros(space: Arc<HilbertSpace>) -> Self {
        OperatorMatrix {
            space,
            entries: Vec::new(),
        }
    }

    pub fn identity(space: Arc<HilbertSpace>) -> Self {
        let entries = (0..space.total_dim()).map(|i| (i, i, ONE)).collect();
        OperatorMatrix { space, entries }
    }

    /// Builds an operator from `(row, col, value)` triplets. Duplicates are
    /// summed and exact zeros dropped.
    pub fn from_entries(
        space: Arc<HilbertSpace>,
        entries: impl IntoIterator<Item = (usize, usize, Complex64)>,
    ) -> Result<Self> {
        let n = space.total_dim();
        let mut map = BTreeMap::new();
        for (r, c, v) in entries {
            if r >= n || c >= n {
                return Err(Error::InvalidState(format!(
                    "entry ({r}, {c}) out of range for dimension {n}"
                )));
            }
            *map.entry((r, c)).or_insert(ZERO) += v;
        }
        Ok(Self::from_map(space, map))
    }

    fn from_map(space: Arc<HilbertSpace>, map: BTreeMap<(usize, usize), Complex64>) -> Self {
        let entries = map
            .into_iter()
            .filter(|(_, v)| *v != ZERO)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        OperatorMatrix { space, entries }
    }

    /// Single matrix unit `|row⟩⟨col|` scaled by `value`.
    pub fn unit(space: Arc<HilbertSpace>, row: usize, col: usize, value: Complex64) -> Result<Self> {
        Self::from_entries(space, [(row, col, value)])
    }

    pub fn from_dense(space: Arc<HilbertSpace>, dense: &DMatrix<Complex64>) -> Result<Self> {
        let n = space.total_dim();
        if dense.nrows() != n || dense.ncols() != n {
            return Err(Error::DimensionMismatch {
                subsystem: space.to_string(),
                expected: n,
                got: dense.nrows(),
            });
        }
        let mut entries = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let v = dense[(r, c)];
                if v != ZERO {
                    entries.push((r, c, v));
                }
            }
        }
        Ok(OperatorMatrix { space, entries })
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    /// Non-zero entries in `(row, col)` order.
    pub fn entries(&self) -> &[(usize, usize, Complex64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        match self.entries.binary_search_by(|e| (e.0, e.1).cmp(&(row, col))) {
            Ok(i) => self.entries[i].2,
            Err(_) => ZERO,
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
        }
        m
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        if factor == ZERO {
            return Self::zeros(self.space.clone());
        }
        OperatorMatrix {
            space: self.space.clone(),
            entries: self
                .entries
                .iter()
                .map(|&(r, c, v)| (r, c, v * factor))
                .filter(|e| e.2 != ZERO)
                .collect(),
        }
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(Complex64::new(factor, 0.0))
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        let mut entries: Vec<_> = self
            .entries
            .iter()
            .map(|&(r, c, v)| (c, r, v.conj()))
            .collect();
        entries.sort_by_key(|e| (e.0, e.1));
        OperatorMatrix {
            space: self.space.clone(),
            entries,
        }
    }

    pub fn trace(&self) -> Complex64 {
        self.entries
            .iter()
            .filter(|e| e.0 == e.1)
            .map(|e| e.2)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.2.norm()).fold(0.0, f64::max)
    }

    /// Largest `|M_ij - conj(M_ji)|`, relative to the largest entry.
    pub fn hermiticity_error(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for &(r, c, v) in &self.entries {
            let d = (v - self.get(c, r).conj()).norm();
            worst = worst.max(d);
        }
        worst / scale
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_error() <= HERMITIAN_RTOL
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Ok(self.combine(other, ONE))
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        let n = self.dim();
        // row offsets into `other`
        let mut starts = vec![0usize; n + 1];
        for &(r, _, _) in &other.entries {
            starts[r + 1] += 1;
        }
        for i in 0..n {
            starts[i + 1] += starts[i];
        }
        let mut map = BTreeMap::new();
        for &(i, k, a) in &self.entries {
            for &(_, j, b) in &other.entries[starts[k]..starts[k + 1]] {
                *map.entry((i, j)).or_insert(ZERO) += a * b;
            }
        }
        Ok(Self::from_map(self.space.clone(), map))
    }

    /// `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        let ab = self.checked_mul(other)?;
        let ba = other.checked_mul(self)?;
        Ok(ab.combine(&ba, -ONE))
    }

    /// Matrix–vector product.
    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                subsystem: self.space.to_string(),
                expected: self.dim(),
                got: v.len(),
            });
        }
        let mut out = vec![ZERO; v.len()];
        for &(r, c, m) in &self.entries {
            out[r] += m * v[c];
        }
        Ok(out)
    }

    fn combine(&self, other: &Self, factor: Complex64) -> Self {
        let mut map: BTreeMap<(usize, usize), Complex64> =
            self.entries.iter().map(|&(r, c, v)| ((r, c), v)).collect();
        for &(r, c, v) in &other.entries {
            *map.entry((r, c)).or_insert(ZERO) += factor * v;
        }
        Self::from_map(self.space.clone(), map)
    }

    fn same_space(&self, other: &Self) -> Result<()> {
        if self.space == other.space {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                left: self.space.to_string(),
                right: other.space.to_string(),
            })
        }
    }

    /// Restates the operator on an equal-shaped space with different labels.
    pub fn relabel(&self, space: Arc<HilbertSpace>) -> Result<Self> {
        if space.dims() != self.space.dims() {
            return Err(Error::DimensionMismatch {
                subsystem: space.to_string(),
                expected: self.dim(),
                got: space.total_dim(),
            });
        }
        Ok(OperatorMatrix {
            space,
            entries: self.entries.clone(),
        })
    }
}

fn expect_same(a: &OperatorMatrix, b: &OperatorMatrix) {
    if let Err(e) = a.same_space(b) {
        panic!("{e}");
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    /// Panics when the operands live on different spaces; see [`OperatorMatrix::checked_add`].
    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        expect_same(self, rhs);
        self.combine(rhs, ONE)
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        expect_same(self, rhs);
        self.combine(rhs, -ONE)
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        expect_same(self, rhs);
        self.checked_mul(rhs).expect("same space")
    }
}

impl Neg for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn neg(self) -> OperatorMatrix {
        self.scale(-ONE)
    }
}

impl Add for OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: OperatorMatrix) -> OperatorMatrix {
        &self + &rhs
    }
}

impl Sub for OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: OperatorMatrix) -> OperatorMatrix {
        &self - &rhs
    }
}

/// Kronecker product of two operators on the product of their spaces.
pub fn kron(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<OperatorMatrix> {
    let space = Arc::new(a.space.product(&b.space)?);
    let nb = b.dim();
    let mut entries = Vec::with_capacity(a.nnz() * b.nnz());
    for &(ra, ca, va) in &a.entries {
        for &(rb, cb, vb) in &b.entries {
            entries.push((ra * nb + rb, ca * nb + cb, va * vb));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));
    entries.retain(|e| e.2 != ZERO);
    Ok(OperatorMatrix { space, entries })
}

/// Kronecker product of one operator per subsystem of `space`, in the
/// subsystem order declared by `space`.
pub fn tensor_product(space: &Arc<HilbertSpace>, factors: &[OperatorMatrix]) -> Result<OperatorMatrix> {
    let subs = space.subsystems();
    if factors.len() != subs.len() {
        return Err(Error::InvalidSpace(format!(
            "expected {} factors for {space}, got {}",
            subs.len(),
            factors.len()
        )));
    }
    for ((label, dim), op) in subs.iter().zip(factors) {
        if op.dim() != *dim {
            return Err(Error::DimensionMismatch {
                subsystem: label.clone(),
                expected: *dim,
                got: op.dim(),
            });
        }
    }
    let mut entries: Vec<(usize, usize, Complex64)> = vec![(0, 0, ONE)];
    for op in factors {
        let n = op.dim();
        let mut next = Vec::with_capacity(entries.len() * op.nnz());
        for &(r, c, v) in &entries {
            for &(ro, co, vo) in &op.entries {
                next.push((r * n + ro, c * n + co, v * vo));
            }
        }
        entries = next;
    }
    entries.sort_by_key(|e| (e.0, e.1));
    entries.retain(|e| e.2 != ZERO);
    Ok(OperatorMatrix {
        space: space.clone(),
        entries,
    })
}

/// Lifts a single-subsystem operator into `space`, with identities elsewhere.
pub fn embed(space: &Arc<HilbertSpace>, label: &str, op: &OperatorMatrix) -> Result<OperatorMatrix> {
    let pos = space
        .position(label)
        .ok_or_else(|| Error::InvalidSpace(format!("no subsystem `{label}` in {space}")))?;
    let factors: Vec<OperatorMatrix> = space
        .subsystems()
        .iter()
        .enumerate()
        .map(|(i, (l, d))| {
            if i == pos {
                Ok(op.clone())
            } else {
                Ok(OperatorMatrix::identity(Arc::new(HilbertSpace::single(l.clone(), *d)?)))
            }
        })
        .collect::<Result<_>>()?;
    tensor_product(space, &factors)
}

/// Truncated bosonic annihilation operator on `n_max + 1` Fock states.
pub fn annihilation_operator(n_max: usize) -> Result<OperatorMatrix> {
    if n_max == 0 {
        return Err(Error::ZeroCutoff);
    }
    let space = Arc::new(HilbertSpace::single("mode", n_max + 1)?);
    let entries = (1..=n_max).map(|n| (n - 1, n, Complex64::new((n as f64).sqrt(), 0.0)));
    OperatorMatrix::from_entries(space, entries)
}

pub fn dagger(op: &OperatorMatrix) -> OperatorMatrix {
    op.dagger()
}

/// Dense, trace-normalised density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: Arc<HilbertSpace>,
    /// Row-major `n × n` storage.
    data: Vec<Complex64>,
}

pub const TRACE_TOL: f64 = 1e-9;
pub const HERMITICITY_TOL: f64 = 1e-12;
pub const POSITIVITY_TOL: f64 = 1e-9;

impl DensityMatrix {
    /// Wraps raw row-major data without checking the density-matrix invariants.
    pub fn from_raw(space: Arc<HilbertSpace>, data: Vec<Complex64>) -> Result<Self> {
        let n = space.total_dim();
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                subsystem: space.to_string(),
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(DensityMatrix { space, data })
    }

    /// Checked constructor: trace, hermiticity and positivity are validated.
    pub fn new(space: Arc<HilbertSpace>, data: Vec<Complex64>) -> Result<Self> {
        let rho = Self::from_raw(space, data)?;
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_operator(op: &OperatorMatrix) -> Result<Self> {
        let n = op.dim();
        let mut data = vec![ZERO; n * n];
        for &(r, c, v) in op.entries() {
            data[r * n + c] = v;
        }
        Self::new(op.space().clone(), data)
    }

    /// `|ψ⟩⟨ψ|` for a normalised copy of `psi`.
    pub fn pure(space: Arc<HilbertSpace>, psi: &[Complex64]) -> Result<Self> {
        let n = space.total_dim();
        if psi.len() != n {
            return Err(Error::DimensionMismatch {
                subsystem: space.to_string(),
                expected: n,
                got: psi.len(),
            });
        }
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let mut data = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = psi[i] * psi[j].conj() / norm2;
            }
        }
        Ok(DensityMatrix { space, data })
    }

    pub fn basis_state(space: Arc<HilbertSpace>, index: usize) -> Result<Self> {
        Self::diagonal(space.clone(), &{
            let mut p = vec![0.0; space.total_dim()];
            if index >= p.len() {
                return Err(Error::InvalidState(format!("basis index {index} out of range")));
            }
            p[index] = 1.0;
            p
        })
    }

    /// Incoherent mixture with the given (renormalised) populations.
    pub fn diagonal(space: Arc<HilbertSpace>, populations: &[f64]) -> Result<Self> {
        let n = space.total_dim();
        if populations.len() != n {
            return Err(Error::DimensionMismatch {
                subsystem: space.to_string(),
                expected: n,
                got: populations.len(),
            });
        }
        if populations.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidState("populations must be finite and non-negative".into()));
        }
        let total: f64 = populations.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidState("populations sum to zero".into()));
        }
        let mut data = vec![ZERO; n * n];
        for (i, p) in populations.iter().enumerate() {
            data[i * n + i] = Complex64::new(p / total, 0.0);
        }
        Ok(DensityMatrix { space, data })
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim() + col]
    }

    pub fn trace(&self) -> Complex64 {
        let n = self.dim();
        (0..n).map(|i| self.data[i * n + i]).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.data[i * n + i].re).collect()
    }

    /// `max |ρ_ij − conj(ρ_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |i, j| {
            (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5
        });
        m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let herm = self.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!("not hermitian (deviation {herm:.3e})")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(())
    }

    pub fn to_operator(&self) -> OperatorMatrix {
        let n = self.dim();
        let entries = self
            .data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != ZERO)
            .map(|(k, v)| (k / n, k % n, *v))
            .collect();
        OperatorMatrix {
            space: self.space.clone(),
            entries,
        }
    }

    /// Convex combination `w·self + (1−w)·other`.
    pub fn mix(&self, other: &DensityMatrix, w: f64) -> Result<DensityMatrix> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch {
                left: self.space.to_string(),
                right: other.space.to_string(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * w + b * (1.0 - w))
            .collect();
        Ok(DensityMatrix {
            space: self.space.clone(),
            data,
        })
    }
}

/// `Tr(ρ·op)`.
pub fn expectation(rho: &DensityMatrix, op: &OperatorMatrix) -> Result<Complex64> {
    if rho.space() != op.space() {
        return Err(Error::SpaceMismatch {
            left: rho.space().to_string(),
            right: op.space().to_string(),
        });
    }
    Ok(op
        .entries()
        .iter()
        .map(|&(r, c, v)| v * rho.get(c, r))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn qubit(label: &str) -> Arc<HilbertSpace> {
        Arc::new(HilbertSpace::single(label, 2).unwrap())
    }

    fn sigma_z(label: &str) -> OperatorMatrix {
        OperatorMatrix::from_entries(qubit(label), [(0, 0, c(1.0, 0.0)), (1, 1, c(-1.0, 0.0))]).unwrap()
    }

    #[test]
    fn space_invariants() {
        let s = HilbertSpace::new([("atom", 8), ("p", 2), ("m", 2)]).unwrap();
        assert_eq!(s.total_dim(), 32);
        assert!(HilbertSpace::new([("a", 2), ("a", 3)]).is_err());
        assert!(HilbertSpace::new([("a", 0)]).is_err());
        for k in 0..32 {
            assert_eq!(s.index_of(&s.local_indices(k)).unwrap(), k);
        }
    }

    #[test]
    fn identity_tensor_identity() {
        let space = Arc::new(HilbertSpace::new([("a", 2), ("b", 2)]).unwrap());
        let out = tensor_product(&space, &[OperatorMatrix::identity(qubit("a")), OperatorMatrix::identity(qubit("b"))])
            .unwrap();
        assert_eq!(out, OperatorMatrix::identity(space));
    }

    #[test]
    fn sigma_z_tensor_identity_is_diagonal() {
        let space = Arc::new(HilbertSpace::new([("a", 2), ("b", 2)]).unwrap());
        let out = tensor_product(&space, &[sigma_z("a"), OperatorMatrix::identity(qubit("b"))]).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| out.get(i, i).re).collect();
        assert_eq!(diag, vec![1.0, 1.0, -1.0, -1.0]);
        assert_eq!(out.nnz(), 4);
    }

    #[test]
    fn lowering_first_factor_by_hand() {
        // |1,0⟩ is index 1*2+0 = 2; a ⊗ I maps it to |0,0⟩ = index 0
        let a = annihilation_operator(1).unwrap().relabel(qubit("a")).unwrap();
        let space = Arc::new(HilbertSpace::new([("a", 2), ("b", 2)]).unwrap());
        let op = tensor_product(&space, &[a, OperatorMatrix::identity(qubit("b"))]).unwrap();
        let mut psi = vec![Complex64::new(0.0, 0.0); 4];
        psi[2] = ONE;
        let out = op.apply(&psi).unwrap();
        // dense 4x4 oracle
        let dense = [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ];
        for r in 0..4 {
            let expect: f64 = (0..4).map(|k| dense[r][k] * psi[k].re).sum();
            assert_eq!(out[r].re, expect);
        }
        assert_eq!(out[0], ONE);
    }

    #[test]
    fn tensor_product_reports_offending_subsystem() {
        let space = Arc::new(HilbertSpace::new([("atom", 3), ("cav", 2)]).unwrap());
        let err = tensor_product(&space, &[OperatorMatrix::identity(qubit("x")), OperatorMatrix::identity(qubit("y"))])
            .unwrap_err();
        match err {
            Error::DimensionMismatch { subsystem, .. } => assert_eq!(subsystem, "atom"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn annihilation_entries() {
        let a1 = annihilation_operator(1).unwrap();
        assert_eq!(a1.entries(), &[(0, 1, ONE)]);
        let a2 = annihilation_operator(2).unwrap();
        assert_eq!(a2.get(1, 2), c(2f64.sqrt(), 0.0));
        assert!(matches!(annihilation_operator(0), Err(Error::ZeroCutoff)));
    }

    #[test]
    fn number_operator_action() {
        for n_max in 1..5 {
            let a = annihilation_operator(n_max).unwrap();
            let num = &a.dagger() * &a;
            for n in 0..=n_max {
                let mut psi = vec![Complex64::new(0.0, 0.0); n_max + 1];
                psi[n] = ONE;
                let out = num.apply(&psi).unwrap();
                for (k, v) in out.iter().enumerate() {
                    let expect = if k == n { n as f64 } else { 0.0 };
                    assert!((v.re - expect).abs() < 1e-14 && v.im == 0.0);
                }
            }
        }
    }

    #[test]
    fn truncated_commutator_identity() {
        for n_max in 1..6 {
            let a = annihilation_operator(n_max).unwrap();
            let comm = a.commutator(&a.dagger()).unwrap();
            let mut expect = OperatorMatrix::identity(a.space().clone());
            expect = &expect
                - &OperatorMatrix::unit(a.space().clone(), n_max, n_max, c((n_max + 1) as f64, 0.0)).unwrap();
            // √n·√n products are exact only up to rounding of the square roots
            let diff = &comm - &expect;
            assert!(diff.max_abs() < 1e-12, "n_max={n_max}: {diff:?}");
        }
    }

    #[test]
    fn dagger_examples() {
        let a = annihilation_operator(3).unwrap();
        let ad = dagger(&a);
        for n in 1..=3 {
            assert_eq!(ad.get(n, n - 1), c((n as f64).sqrt(), 0.0));
        }
        let m = OperatorMatrix::from_entries(qubit("q"), [(0, 1, c(0.0, 1.0))]).unwrap();
        assert_eq!(dagger(&m).entries(), &[(1, 0, c(0.0, -1.0))]);
        assert_eq!(dagger(&dagger(&m)), m);
        let h = &a + &a.dagger();
        assert_eq!(dagger(&h), h);
    }

    #[test]
    fn expectation_examples() {
        let a = annihilation_operator(1).unwrap();
        let num = &a.dagger() * &a;
        let space = a.space().clone();
        let one = DensityMatrix::basis_state(space.clone(), 1).unwrap();
        assert_eq!(expectation(&one, &num).unwrap(), ONE);
        let mixed = DensityMatrix::diagonal(space.clone(), &[0.5, 0.5]).unwrap();
        assert_eq!(expectation(&mixed, &num).unwrap(), c(0.5, 0.0));
        assert_eq!(expectation(&mixed, &OperatorMatrix::identity(space)).unwrap(), ONE);
        let other = DensityMatrix::basis_state(qubit("q"), 0).unwrap();
        assert!(matches!(expectation(&other, &num), Err(Error::SpaceMismatch { .. })));
    }

    #[test]
    fn density_matrix_validation() {
        let s = qubit("q");
        assert!(DensityMatrix::new(s.clone(), vec![c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.6, 0.0)]).is_err());
        assert!(DensityMatrix::new(s.clone(), vec![c(0.5, 0.0), c(0.6, 0.0), c(0.6, 0.0), c(0.5, 0.0)]).is_err());
        let psi = [c(1.0, 0.0), c(0.0, 1.0)];
        let rho = DensityMatrix::pure(s, &psi).unwrap();
        rho.validate().unwrap();
        assert!((rho.min_eigenvalue()).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn op_strategy(label: &'static str, dim: usize) -> impl Strategy<Value = OperatorMatrix> {
            proptest::collection::vec(
                (0..dim, 0..dim, -3i32..=3, -3i32..=3),
                0..(dim * dim),
            )
            .prop_map(move |v| {
                let space = Arc::new(HilbertSpace::single(label, dim).unwrap());
                // small integers keep products exact so equality can be tested exactly
                OperatorMatrix::from_entries(
                    space,
                    v.into_iter().map(|(r, c, re, im)| (r, c, Complex64::new(re as f64, im as f64))),
                )
                .unwrap()
            })
        }

        proptest! {
            #[test]
            fn kron_is_associative(a in op_strategy("a", 2), b in op_strategy("b", 3), c in op_strategy("c", 2)) {
                let left = kron(&kron(&a, &b).unwrap(), &c).unwrap();
                let right = kron(&a, &kron(&b, &c).unwrap()).unwrap();
                prop_assert_eq!(left.entries(), right.entries());
                prop_assert_eq!(left.space(), right.space());
            }

            #[test]
            fn dagger_is_involution(a in op_strategy("a", 4)) {
                prop_assert_eq!(a.dagger().dagger(), a);
            }

            #[test]
            fn hermitian_expectation_is_real(
                a in op_strategy("a", 4),
                amps in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
                amps2 in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
                w in 0.0f64..1.0,
            ) {
                let h = &a + &a.dagger();
                let psi: Vec<_> = amps.iter().map(|&(r, i)| c(r, i)).collect();
                let phi: Vec<_> = amps2.iter().map(|&(r, i)| c(r, i)).collect();
                prop_assume!(psi.iter().any(|z| z.norm() > 1e-3) && phi.iter().any(|z| z.norm() > 1e-3));
                let rho = DensityMatrix::pure(a.space().clone(), &psi).unwrap()
                    .mix(&DensityMatrix::pure(a.space().clone(), &phi).unwrap(), w).unwrap();
                let e = expectation(&rho, &h).unwrap();
                prop_assert!(e.im.abs() <= 1e-10 * h.max_abs().max(1.0));
            }
        }
    }
}
