//! Compressed sparse row matrices and Liouvillian assembly on the row-major
//! vectorised density matrix (`vec(ρ)[i·n + j] = ρ[i, j]`).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::OperatorMatrix;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone)]
pub(crate) struct Csr {
    pub n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl Csr {
    pub fn from_triplets(n: usize, mut trips: Vec<(usize, usize, Complex64)>) -> Csr {
        trips.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(trips.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(trips.len());
        for (r, c, v) in trips {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        // drop entries that cancelled exactly
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut k = 0;
        for idx in 0..rows.len() {
            if vals[idx] != ZERO {
                cols[k] = cols[idx];
                vals[k] = vals[idx];
                keep_rows.push(rows[idx]);
                k += 1;
            }
        }
        cols.truncate(k);
        vals.truncate(k);
        for &r in &keep_rows {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }

    /// `y += alpha · A x`
    pub fn matvec_add(&self, alpha: f64, x: &[Complex64], y: &mut [Complex64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out += acc * alpha;
        }
    }

    /// Submatrix on the index set `keep` (ascending); `pos[i]` is the new
    /// index of old index `i`, or `usize::MAX` if dropped.
    pub fn restrict(&self, keep: &[usize], pos: &[usize]) -> Csr {
        let mut trips = Vec::new();
        for (new_r, &r) in keep.iter().enumerate() {
            for (c, v) in self.row(r) {
                let nc = pos[c];
                if nc != usize::MAX {
                    trips.push((new_r, nc, v));
                }
            }
        }
        Csr::from_triplets(keep.len(), trips)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.n)
            .map(|r| self.row(r).find(|&(c, _)| c == r).map_or(ZERO, |(_, v)| v))
            .collect()
    }
}

/// Triplets of the superoperator `ρ ↦ −i(Aρ − ρA†)`.
fn push_effective_hamiltonian(a: &OperatorMatrix, trips: &mut Vec<(usize, usize, Complex64)>) {
    let n = a.dim();
    for &(i, k, v) in a.entries() {
        // (Aρ)[i, j] = Σ_k A[i, k] ρ[k, j]
        for j in 0..n {
            trips.push((i * n + j, k * n + j, -I * v));
        }
        // (ρA†)[i', j'] with A†[k', j'] = conj(A[j', k']); here j' = i, k' = k
        for row in 0..n {
            trips.push((row * n + i, row * n + k, I * v.conj()));
        }
    }
}

/// Liouvillian of `dρ/dt = −i[H, ρ] + Σ_k 2O_kρO_k† − O_k†O_kρ − ρO_k†O_k`.
pub(crate) fn liouvillian(h: &OperatorMatrix, collapse: &[OperatorMatrix]) -> Csr {
    let n = h.dim();
    let mut h_eff = h.clone();
    for o in collapse {
        let odo = &o.dagger() * o;
        h_eff = &h_eff - &odo.scale(I);
    }
    let mut trips = Vec::new();
    push_effective_hamiltonian(&h_eff, &mut trips);
    for o in collapse {
        for &(i, k, a) in o.entries() {
            for &(j, l, b) in o.entries() {
                trips.push((i * n + j, k * n + l, 2.0 * a * b.conj()));
            }
        }
    }
    Csr::from_triplets(n * n, trips)
}

/// Superoperator of `−i[H, ρ]` alone.
pub(crate) fn commutator_superoperator(h: &OperatorMatrix) -> Csr {
    let n = h.dim();
    let mut trips = Vec::new();
    push_effective_hamiltonian(h, &mut trips);
    Csr::from_triplets(n * n, trips)
}

/// Smallest index set containing `start` and closed under the column → row
/// reachability of every matrix in `mats`. Returned ascending.
pub(crate) fn reachable(mats: &[&Csr], start: &[usize]) -> Vec<usize> {
    let n = mats[0].n;
    // transpose adjacency: column c feeds rows r with A[r, c] ≠ 0
    let mut feeds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for m in mats {
        for r in 0..m.n {
            for (c, _) in m.row(r) {
                feeds[c].push(r);
            }
        }
    }
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    for &s in start {
        if !seen[s] {
            seen[s] = true;
            stack.push(s);
        }
    }
    while let Some(c) = stack.pop() {
        for &r in &feeds[c] {
            if !seen[r] {
                seen[r] = true;
                stack.push(r);
            }
        }
    }
    (0..n).filter(|&i| seen[i]).collect()
}

/// Connected components of the undirected sparsity graph of `m`.
pub(crate) fn components(m: &Csr) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..m.n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for r in 0..m.n {
        for (c, _) in m.row(r) {
            let (a, b) = (find(&mut parent, r), find(&mut parent, c));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..m.n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{annihilation_operator, DensityMatrix};
    use std::sync::Arc;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn csr_merges_and_drops() {
        let m = Csr::from_triplets(2, vec![(0, 1, c(1.0)), (0, 1, c(2.0)), (1, 0, c(1.0)), (1, 0, c(-1.0))]);
        assert_eq!(m.nnz(), 1);
        let mut y = vec![ZERO; 2];
        m.matvec(&[c(1.0), c(2.0)], &mut y);
        assert_eq!(y, vec![c(6.0), ZERO]);
    }

    /// Dense evaluation of the master-equation right-hand side.
    fn dense_rhs(h: &OperatorMatrix, ops: &[OperatorMatrix], rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let hd = h.to_dense();
        let mut out = (&hd * rho - rho * &hd) * (-I);
        for o in ops {
            let od = o.to_dense();
            let oa = od.adjoint();
            out += (&od * rho * &oa) * c(2.0) - &oa * &od * rho - rho * &oa * &od;
        }
        out
    }

    #[test]
    fn liouvillian_matches_dense_rhs() {
        let a = annihilation_operator(2).unwrap();
        let h = (&a.dagger() * &a).scale_real(0.7) + (&a + &a.dagger()).scale_real(0.3);
        let ops = vec![a.scale_real(0.5), (&a.dagger() * &a).scale_real(0.2)];
        let l = liouvillian(&h, &ops);
        let n = 3;
        let psi = [c(0.3), Complex64::new(0.2, -0.5), c(0.7)];
        let rho = DensityMatrix::pure(Arc::new(crate::linalg::HilbertSpace::single("mode", 3).unwrap()), &psi).unwrap();
        let mut y = vec![ZERO; n * n];
        l.matvec(rho.data(), &mut y);
        let dense = dense_rhs(&h, &ops, &DMatrix::from_row_slice(n, n, rho.data()));
        for i in 0..n {
            for j in 0..n {
                assert!((y[i * n + j] - dense[(i, j)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn reachability_and_components() {
        let a = annihilation_operator(1).unwrap();
        let l = liouvillian(&OperatorMatrix::zeros(a.space().clone()), &[a]);
        // decay from |1⟩⟨1| reaches |0⟩⟨0| only
        assert_eq!(reachable(&[&l], &[3]), vec![0, 3]);
        let comps = components(&l);
        assert_eq!(comps, vec![vec![0, 3], vec![1], vec![2]]);
    }
}
