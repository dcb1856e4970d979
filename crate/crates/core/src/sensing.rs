//! Sensing operators linking the sparse gain matrix `X` (M x Q̄) and the
//! subarray VR matrix `Φ_s` (K x Q̄) to the stacked observation.
//!
//! With `T = Ψ^T (Q ⊙ (Φ_s ⊗ 1))` (P x Q̄) the observation is
//! `vec(F X T^T)`, i.e. `D1 = T ⊗ F`. `D1` is applied lazily; only the
//! small factor Grams `T^H T` and `F^H F` are formed.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::algebra::{kron_vec, unvec, vec, ComplexMatrix, ComplexVector};
use crate::error::{Error, Result};

/// `Q ⊙ (Φ_s ⊗ 1_{E x 1})`.
pub fn mask_columns(q: &ComplexMatrix, phi_s: &DMatrix<bool>, elems_per_sub: usize) -> Result<ComplexMatrix> {
    if phi_s.ncols() != q.ncols() || phi_s.nrows() * elems_per_sub != q.nrows() {
        return Err(Error::dims(
            "mask_columns",
            format!(
                "Q is {}x{}, Φ_s is {}x{} with {} elements per subarray",
                q.nrows(),
                q.ncols(),
                phi_s.nrows(),
                phi_s.ncols(),
                elems_per_sub
            ),
        ));
    }
    let mut out = q.clone();
    for j in 0..q.ncols() {
        for i in 0..q.nrows() {
            if !phi_s[(i / elems_per_sub, j)] {
                out[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(out)
}

/// `D1 = T ⊗ F` with `T = Ψ^T Q_masked`.
#[derive(Debug, Clone)]
pub struct D1Operator {
    f: ComplexMatrix,
    t: ComplexMatrix,
    f_gram: ComplexMatrix,
    t_gram: ComplexMatrix,
}

impl D1Operator {
    pub fn new(f: ComplexMatrix, q_masked: &ComplexMatrix, ris_phases: &ComplexMatrix) -> Result<Self> {
        if q_masked.nrows() != ris_phases.nrows() {
            return Err(Error::dims(
                "D1",
                format!(
                    "dictionary has {} rows but pilots cover {} elements",
                    q_masked.nrows(),
                    ris_phases.nrows()
                ),
            ));
        }
        let t = ris_phases.transpose() * q_masked;
        Ok(D1Operator {
            f_gram: f.adjoint() * &f,
            t_gram: t.adjoint() * &t,
            f,
            t,
        })
    }

    /// Build from an unmasked dictionary and a subarray VR matrix.
    pub fn with_vr(
        f: ComplexMatrix,
        q: &ComplexMatrix,
        phi_s: &DMatrix<bool>,
        ris_phases: &ComplexMatrix,
    ) -> Result<Self> {
        let e = q.nrows() / phi_s.nrows().max(1);
        Self::new(f, &mask_columns(q, phi_s, e)?, ris_phases)
    }

    pub fn m(&self) -> usize {
        self.f.nrows()
    }

    pub fn pilots(&self) -> usize {
        self.t.nrows()
    }

    pub fn q_bar(&self) -> usize {
        self.t.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.m() * self.pilots()
    }

    pub fn ncols(&self) -> usize {
        self.m() * self.q_bar()
    }

    pub fn f(&self) -> &ComplexMatrix {
        &self.f
    }

    pub fn t(&self) -> &ComplexMatrix {
        &self.t
    }

    fn check_len(&self, op: &'static str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::dims(op, format!("expected length {want}, got {got}")));
        }
        Ok(())
    }

    /// `D1 x = vec(F X T^T)`.
    pub fn apply(&self, x: &ComplexVector) -> Result<ComplexVector> {
        self.check_len("D1 apply", x.len(), self.ncols())?;
        let xm = unvec(x, self.m(), self.q_bar())?;
        Ok(vec(&(&self.f * xm * self.t.transpose())))
    }

    /// `D1^H y = vec(F^H Y conj(T))`.
    pub fn adjoint(&self, y: &ComplexVector) -> Result<ComplexVector> {
        self.check_len("D1 adjoint", y.len(), self.nrows())?;
        let ym = unvec(y, self.m(), self.pilots())?;
        Ok(vec(&(self.f.adjoint() * ym * self.t.conjugate())))
    }

    /// `D1^H D1 x = vec(F^H F X (T^H T)^T)`.
    pub fn gram_apply(&self, x: &ComplexVector) -> Result<ComplexVector> {
        self.check_len("D1 gram apply", x.len(), self.ncols())?;
        let xm = unvec(x, self.m(), self.q_bar())?;
        Ok(vec(&(&self.f_gram * xm * self.t_gram.transpose())))
    }

    /// Column `q·M + m`, i.e. `t_q ⊗ f_m`.
    pub fn column(&self, i: usize) -> ComplexVector {
        let (q, m) = (i / self.m(), i % self.m());
        kron_vec(&self.t.column(q).into_owned(), &self.f.column(m).into_owned())
    }

    /// `(D1^H D1)[i, j]`.
    pub fn gram(&self, i: usize, j: usize) -> Complex64 {
        let m = self.m();
        self.t_gram[(i / m, j / m)] * self.f_gram[(i % m, j % m)]
    }

    pub fn column_norm2(&self, i: usize) -> f64 {
        self.gram(i, i).re
    }

    pub fn column_norms2(&self) -> Vec<f64> {
        (0..self.ncols()).map(|i| self.column_norm2(i)).collect()
    }

    /// Dense matrix; intended for small test sizes.
    pub fn to_dense(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.nrows(), self.ncols());
        for i in 0..self.ncols() {
            out.set_column(i, &self.column(i));
        }
        out
    }
}

/// Cascaded channel `vec(F X Q_masked^T)` for gains `x`.
pub fn cascaded_channel(f: &ComplexMatrix, q_masked: &ComplexMatrix, x: &ComplexVector) -> Result<ComplexVector> {
    let (m, q_bar) = (f.ncols(), q_masked.ncols());
    if x.len() != m * q_bar {
        return Err(Error::dims(
            "cascaded_channel",
            format!("gain vector has length {}, expected {}", x.len(), m * q_bar),
        ));
    }
    let xm = unvec(x, m, q_bar)?;
    Ok(vec(&(f * xm * q_masked.transpose())))
}

/// Dense `D2(x)` restricted to the listed columns of `Φ_s`.
///
/// Column `j·K + k` responds to `Φ_s[k, columns[j]]` and equals
/// `t_{k,q} ⊗ (F x_q)` with `t_{k,q}[p] = Σ_{n ∈ subarray k} Ψ[n, p] Q[n, q]`.
pub fn assemble_d2(
    f: &ComplexMatrix,
    q: &ComplexMatrix,
    x: &ComplexVector,
    ris_phases: &ComplexMatrix,
    k: usize,
    columns: &[usize],
) -> Result<ComplexMatrix> {
    let (m, n, q_bar) = (f.nrows(), q.nrows(), q.ncols());
    if x.len() != f.ncols() * q_bar || ris_phases.nrows() != n || k == 0 || n % k != 0 {
        return Err(Error::dims(
            "assemble_d2",
            format!(
                "x {} for {}x{} gains, pilots over {} elements, N = {n}, K = {k}",
                x.len(),
                f.ncols(),
                q_bar,
                ris_phases.nrows()
            ),
        ));
    }
    if let Some(&bad) = columns.iter().find(|&&c| c >= q_bar) {
        return Err(Error::dims("assemble_d2", format!("column {bad} out of {q_bar}")));
    }
    let xm = unvec(x, f.ncols(), q_bar)?;
    let p = ris_phases.ncols();
    let e = n / k;
    let mut out = ComplexMatrix::zeros(m * p, k * columns.len());
    for (j, &qi) in columns.iter().enumerate() {
        let fx = f * xm.column(qi);
        for kk in 0..k {
            let mut t = ComplexVector::zeros(p);
            for pp in 0..p {
                let mut acc = Complex64::new(0.0, 0.0);
                for nn in kk * e..(kk + 1) * e {
                    acc += ris_phases[(nn, pp)] * q[(nn, qi)];
                }
                t[pp] = acc;
            }
            out.set_column(j * k + kk, &kron_vec(&t, &fx));
        }
    }
    Ok(out)
}

/// Columns of `unvec(x)` carrying at least `fraction` of the energy,
/// strongest first, ties broken by index.
pub fn energy_columns(x: &ComplexVector, m: usize, fraction: f64) -> Vec<usize> {
    let q_bar = x.len() / m;
    let energy: Vec<f64> = (0..q_bar)
        .map(|q| (0..m).map(|r| x[q * m + r].norm_sqr()).sum())
        .collect();
    top_energy(&energy, fraction)
}

/// Smallest prefix of indices sorted by decreasing energy whose sum reaches
/// `fraction` of the total. Empty when the total is zero.
pub fn top_energy(energy: &[f64], fraction: f64) -> Vec<usize> {
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..energy.len()).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        if acc >= fraction * total || energy[i] == 0.0 {
            break;
        }
        acc += energy[i];
        out.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{kron, lemma1_transform};
    use crate::dictionary::DictionarySet;
    use crate::geometry::{random_ris_phases, SystemGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> SystemGeometry {
        SystemGeometry::new(4, 8, 2, 28e9).unwrap()
    }

    fn random_vec(len: usize, rng: &mut impl Rng) -> ComplexVector {
        ComplexVector::from_fn(len, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_phi(k: usize, q: usize, rng: &mut impl Rng) -> DMatrix<bool> {
        DMatrix::from_fn(k, q, |_, _| rng.random_bool(0.7))
    }

    /// `rowstack_p (η_p^T ⊗ I_M)((Q ⊙ Φ̄) ⊗ F)`.
    fn dense_d1(f: &ComplexMatrix, qm: &ComplexMatrix, psi: &ComplexMatrix) -> ComplexMatrix {
        let m = f.nrows();
        let big = kron(qm, f).unwrap();
        let eye = ComplexMatrix::identity(m, m);
        let mut out = ComplexMatrix::zeros(m * psi.ncols(), big.ncols());
        for p in 0..psi.ncols() {
            let eta_t = ComplexMatrix::from_fn(1, psi.nrows(), |_, n| psi[(n, p)]);
            let block = kron(&eta_t, &eye).unwrap() * &big;
            out.rows_mut(p * m, m).copy_from(&block);
        }
        out
    }

    #[test]
    fn apply_and_adjoint_match_dense() {
        let g = small();
        let d = DictionarySet::with_defaults(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = random_ris_phases(g.n, 5, &mut rng);
        let phi = random_phi(g.k, d.q_bar(), &mut rng);
        let op = D1Operator::with_vr(d.f_m.clone(), &d.q, &phi, &psi).unwrap();
        let qm = mask_columns(&d.q, &phi, g.n / g.k).unwrap();
        let dense = dense_d1(&d.f_m, &qm, &psi);
        assert!((op.to_dense() - &dense).norm() < 1e-10 * dense.norm());
        let x = random_vec(op.ncols(), &mut rng);
        let y = random_vec(op.nrows(), &mut rng);
        assert!((op.apply(&x).unwrap() - &dense * &x).norm() < 1e-10 * dense.norm());
        assert!((op.adjoint(&y).unwrap() - dense.adjoint() * &y).norm() < 1e-10 * dense.norm());
        let gram = dense.adjoint() * &dense;
        for i in 0..op.ncols() {
            for j in 0..op.ncols() {
                assert!((op.gram(i, j) - gram[(i, j)]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn one_hot_selects_single_column() {
        let g = small();
        let d = DictionarySet::with_defaults(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = random_ris_phases(g.n, 3, &mut rng);
        let phi = DMatrix::from_element(g.k, d.q_bar(), true);
        let op = D1Operator::with_vr(d.f_m.clone(), &d.q, &phi, &psi).unwrap();
        let (m, q) = (2, 5);
        let mut x = ComplexVector::zeros(op.ncols());
        x[q * g.m + m] = Complex64::new(1.0, 0.0);
        let y = op.apply(&x).unwrap();
        for p in 0..3 {
            let eta = psi.column(p);
            let s: Complex64 = (0..g.n).map(|n| eta[n] * d.q[(n, q)]).sum();
            for r in 0..g.m {
                assert!((y[p * g.m + r] - s * d.f_m[(r, m)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_consistency() {
        let g = small();
        let d = DictionarySet::with_defaults(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let psi = random_ris_phases(g.n, 4, &mut rng);
            let phi = random_phi(g.k, d.q_bar(), &mut rng);
            let x = random_vec(g.m * d.q_bar(), &mut rng);
            let op = D1Operator::with_vr(d.f_m.clone(), &d.q, &phi, &psi).unwrap();
            let cols: Vec<usize> = (0..d.q_bar()).collect();
            let d2 = assemble_d2(&d.f_m, &d.q, &x, &psi, g.k, &cols).unwrap();
            let vphi = ComplexVector::from_fn(g.k * d.q_bar(), |i, _| {
                let v = phi[(i % g.k, i / g.k)];
                Complex64::new(if v { 1.0 } else { 0.0 }, 0.0)
            });
            let lhs = op.apply(&x).unwrap();
            let rhs = &d2 * vphi;
            assert!((&lhs - rhs).norm() <= 1e-10 * lhs.norm());
        }
    }

    #[test]
    fn d2_matches_selection_construction() {
        let g = small();
        let d = DictionarySet::with_defaults(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi = random_ris_phases(g.n, 3, &mut rng);
        let x = random_vec(g.m * d.q_bar(), &mut rng);
        let cols: Vec<usize> = (0..d.q_bar()).collect();
        let d2 = assemble_d2(&d.f_m, &d.q, &x, &psi, g.k, &cols).unwrap();

        // y = (Ψ^T ⊗ F X) K vec(Q ⊙ Φ̄), vec(Q ⊙ Φ̄) = diag(vec Q) S(1) vec(Φ_s)
        let (n, qb, e) = (g.n, d.q_bar(), g.n / g.k);
        let xm = unvec(&x, g.m, qb).unwrap();
        let left = kron(&psi.transpose(), &(&d.f_m * xm)).unwrap();
        let mut commute = ComplexMatrix::zeros(n * qb, n * qb);
        for i in 0..n {
            for j in 0..qb {
                commute[(i * qb + j, j * n + i)] = Complex64::new(1.0, 0.0);
            }
        }
        let diag_q = ComplexMatrix::from_diagonal(&vec(&d.q));
        let ones = ComplexMatrix::from_element(e, 1, Complex64::new(1.0, 0.0));
        let s = lemma1_transform(&ones, g.k, qb).unwrap().to_dense();
        let oracle = left * commute * diag_q * s;
        assert!((d2 - &oracle).norm() < 1e-10 * oracle.norm());
    }

    #[test]
    fn d2_rejects_bad_shapes() {
        let g = small();
        let d = DictionarySet::with_defaults(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = random_ris_phases(g.n, 3, &mut rng);
        let x = random_vec(g.m * d.q_bar(), &mut rng);
        assert!(assemble_d2(&d.f_m, &d.q, &x, &psi, 3, &[0]).is_err());
        assert!(assemble_d2(&d.f_m, &d.q, &x, &psi, g.k, &[d.q_bar()]).is_err());
        let short = random_ris_phases(g.n - 1, 3, &mut rng);
        assert!(D1Operator::new(d.f_m.clone(), &d.q, &short).is_err());
    }

    #[test]
    fn energy_selection() {
        assert_eq!(top_energy(&[0.0, 3.0, 0.0], 0.95), vec![1]);
        assert_eq!(top_energy(&[1.0, 0.0, 1.0], 0.95), vec![0, 2]);
        assert!(top_energy(&[0.0, 0.0], 0.95).is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let e: Vec<f64> = (0..7)
                .map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..1.0) } else { 0.0 })
                .collect();
            let total: f64 = e.iter().sum();
            if total == 0.0 {
                continue;
            }
            let sel = top_energy(&e, 0.95);
            // brute force: smallest subset reaching the threshold
            let mut best = usize::MAX;
            for mask in 0u32..(1 << 7) {
                let s: f64 = (0..7).filter(|i| mask >> i & 1 == 1).map(|i| e[i]).sum();
                if s >= 0.95 * total {
                    best = best.min(mask.count_ones() as usize);
                }
            }
            assert_eq!(sel.len(), best);
        }
    }
}
