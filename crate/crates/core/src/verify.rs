//! Numerical verification of the structured-matrix identities behind the
//! linear channel models, and of the dictionary compression on small on-grid
//! channels. Used by the `identity-check` command and the acceptance tests.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{
    diag, hadamard, khatri_rao_col, khatri_rao_row, kron, lemma1_transform, relative_error, unvec, vec,
    ComplexMatrix, ComplexVector, ONE,
};
use crate::dictionary::{build_polar_grid, compress_dictionary, far_field_angles, polar_dictionary, DictionarySet};
use crate::error::Result;
use crate::geometry::{complex_normal, random_ris_phases, SystemGeometry};
use crate::sensing::{cascaded_channel, mask_columns, D1Operator};

pub const TOLERANCE: f64 = 1e-10;

/// Worst relative error of one identity over a batch of random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    /// Instances failing a structural (non-numerical) condition.
    pub structural_failures: usize,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check {
            name,
            instances: 0,
            max_rel_error: 0.0,
            structural_failures: 0,
        }
    }

    fn record(&mut self, err: f64) {
        // NaN must fail
        self.max_rel_error = if err.is_nan() { f64::INFINITY } else { self.max_rel_error.max(err) };
    }

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_rel_error <= TOLERANCE && self.structural_failures == 0
    }
}

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(r, c, |_, _| complex_normal(rng))
}

fn random_binary(rng: &mut impl Rng, r: usize, c: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(r, c, |_, _| if rng.random_bool(0.5) { ONE } else { Complex64::new(0.0, 0.0) })
}

fn vec_err(a: &ComplexVector, b: &ComplexVector) -> f64 {
    let scale = a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
    (a - b).norm() / scale
}

fn row(v: &ComplexVector) -> ComplexMatrix {
    ComplexMatrix::from_row_slice(1, v.len(), v.as_slice())
}

/// Steps of the `vec(bᵀ ⊗ A)` chain, each compared with
/// `F_M A F_Nᴴ diag(η) W̄ b`, plus the generic identities it uses.
fn gain_chain(rng: &mut impl Rng, checks: &mut [Check; 9]) -> Result<()> {
    let m = rng.random_range(2..5);
    let n = rng.random_range(2..6);
    let nb = rng.random_range(2..6);
    let f_m = random_matrix(rng, m, m);
    let a = random_matrix(rng, m, n);
    let f_n = random_matrix(rng, n, n);
    let eta = ComplexVector::from_fn(n, |_, _| complex_normal(rng));
    let w_bar = random_matrix(rng, n, nb);
    let b = ComplexVector::from_fn(nb, |_, _| complex_normal(rng));

    let afh = &a * f_n.adjoint();
    let wb = &w_bar * &b;
    let direct = &f_m * &afh * diag(&eta) * &wb;
    let eta_i = kron(&row(&eta), &ComplexMatrix::identity(m, m))?;

    let step0 = &f_m * &afh * diag(&wb) * &eta;
    let step_a = &eta_i * vec(&(&f_m * &afh * diag(&wb)));
    let step_b = &eta_i * vec(&(&f_m * khatri_rao_col(&(row(&b) * w_bar.transpose()), &afh)?));
    let bt_a = kron(&row(&b), &a)?;
    let kr = khatri_rao_col(&w_bar.transpose(), &f_n.adjoint())?;
    let step_c = &eta_i * vec(&(&f_m * &bt_a * &kr));
    let step_d = &eta_i * kron(&kr.transpose(), &f_m)? * vec(&bt_a);
    let step_e = &eta_i * kron(&khatri_rao_row(&w_bar, &f_n.conjugate())?, &f_m)? * vec(&bt_a);
    for (c, v) in checks[..6].iter_mut().zip([step0, step_a, step_b, step_c, step_d, step_e]) {
        c.record(vec_err(&direct, &v));
    }

    // generic forms
    let (p, q, r, s) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
    let ma = random_matrix(rng, p, q);
    let mb = random_matrix(rng, q, r);
    let mc = random_matrix(rng, r, s);
    checks[6].record(vec_err(&vec(&(&ma * &mb * &mc)), &(kron(&mc.transpose(), &ma)? * vec(&mb))));
    let v = ComplexVector::from_fn(q, |_, _| complex_normal(rng));
    checks[7].record(relative_error(&(&ma * diag(&v)), &khatri_rao_col(&row(&v), &ma)?));
    let mc2 = random_matrix(rng, q, s);
    let md = random_matrix(rng, r, s);
    let lhs = kron(&ma, &mb)? * khatri_rao_col(&mc2, &md)?;
    let rhs = khatri_rao_col(&(&ma * &mc2), &(&mb * &md))?;
    checks[8].record(relative_error(&lhs, &rhs));
    Ok(())
}

/// Steps of the `vec(Φ̄)` chain, each compared with
/// `(ηᵀ ⊗ I_M)((Q ⊙ Φ̄) ⊗ F_M) x`.
fn vr_chain(rng: &mut impl Rng, checks: &mut [Check; 5]) -> Result<()> {
    let m = rng.random_range(2..4);
    let n = rng.random_range(2..5);
    let qb = rng.random_range(2..5);
    let f_m = random_matrix(rng, m, m);
    let q = random_matrix(rng, n, qb);
    let phi = random_binary(rng, n, qb);
    let eta = ComplexVector::from_fn(n, |_, _| complex_normal(rng));
    let x = ComplexVector::from_fn(m * qb, |_, _| complex_normal(rng));
    let ones = ComplexMatrix::from_element(m, m, ONE);

    let eta_i = kron(&row(&eta), &ComplexMatrix::identity(m, m))?;
    let direct = &eta_i * kron(&hadamard(&q, &phi)?, &f_m)? * &x;
    let lead = kron(&row(&x), &eta_i)?;
    let step_f = &lead * vec(&kron(&hadamard(&q, &phi)?, &f_m)?);
    let step_g = &lead * vec(&hadamard(&kron(&q, &f_m)?, &kron(&phi, &ones)?)?);
    let diag_qf = diag(&vec(&kron(&q, &f_m)?));
    let step_h = &lead * &diag_qf * vec(&kron(&phi, &ones)?);
    let s = lemma1_transform(&ones, n, qb)?;
    let step_sel = &lead * &diag_qf * s.apply(&vec(&phi))?;
    for (c, v) in checks[..4].iter_mut().zip([step_f, step_g, step_h, step_sel]) {
        c.record(vec_err(&direct, &v));
    }
    // mixed product of Kronecker and Hadamard products on general inputs
    let (r, c) = (rng.random_range(1..4), rng.random_range(1..4));
    let (r2, c2) = (rng.random_range(1..4), rng.random_range(1..4));
    let (a1, b1) = (random_matrix(rng, r, c), random_matrix(rng, r, c));
    let (c1, d1) = (random_matrix(rng, r2, c2), random_matrix(rng, r2, c2));
    let lhs = kron(&hadamard(&a1, &b1)?, &hadamard(&c1, &d1)?)?;
    let rhs = hadamard(&kron(&a1, &c1)?, &kron(&b1, &d1)?)?;
    checks[4].record(relative_error(&lhs, &rhs));
    Ok(())
}

fn selection_instance(rng: &mut impl Rng, lemma: &mut Check, hadamard_vec: &mut Check) -> Result<()> {
    let (ra, ca) = (rng.random_range(1..4), rng.random_range(1..4));
    let (rb, cb) = (rng.random_range(1..4), rng.random_range(1..4));
    let a = random_matrix(rng, ra, ca);
    let b = random_matrix(rng, rb, cb);
    let s = lemma1_transform(&a, rb, cb)?;
    lemma.record(vec_err(&vec(&kron(&b, &a)?), &s.apply(&vec(&b))?));
    let binary = random_binary(rng, ra, ca);
    let sb = lemma1_transform(&binary, rb, cb)?;
    let ones = binary.iter().filter(|v| **v == ONE).count();
    if (0..sb.ncols()).any(|j| sb.column(j).len() != ones || sb.column(j).iter().any(|e| e.1 != ONE)) {
        lemma.structural_failures += 1;
    }
    let (r, c) = (rng.random_range(1..6), rng.random_range(1..6));
    let ha = random_matrix(rng, r, c);
    let hb = random_matrix(rng, r, c);
    hadamard_vec.record(vec_err(&vec(&hadamard(&ha, &hb)?), &(diag(&vec(&ha)) * vec(&hb))));
    Ok(())
}

/// All identity steps, `instances` random draws each.
pub fn identity_suite(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gain = [
        Check::new("diag(Wb) eta reordering"),
        Check::new("cascade vectorized over the RIS phases"),
        Check::new("diagonal factor as a Khatri-Rao product"),
        Check::new("Kronecker gain times Khatri-Rao dictionary"),
        Check::new("cascade linear in vec(b^T kron A)"),
        Check::new("row-wise Khatri-Rao dictionary"),
        Check::new("vec(ABC) = (C^T kron A) vec(B)"),
        Check::new("X diag(v) = v^T kr X"),
        Check::new("(A kron B)(C kr D) = (AC) kr (BD)"),
    ];
    let mut vr = [
        Check::new("response linear in the vectorized sensing matrix"),
        Check::new("VR mask split by the mixed product"),
        Check::new("VR mask as a diagonal weighting"),
        Check::new("VR mask through the selection transform"),
        Check::new("(A o B) kron (C o D) = (A kron C) o (B kron D)"),
    ];
    let mut lemma = Check::new("vec(B kron A) = S(A) vec(B)");
    let mut hv = Check::new("vec(A o B) = diag(vec A) vec(B)");
    for _ in 0..instances {
        gain_chain(&mut rng, &mut gain)?;
        vr_chain(&mut rng, &mut vr)?;
        selection_instance(&mut rng, &mut lemma, &mut hv)?;
    }
    let mut out: Vec<Check> = gain.into_iter().chain(vr).chain([lemma, hv]).collect();
    for c in out.iter_mut() {
        c.instances = instances;
    }
    Ok(out)
}

/// Direct cascade `F_M A F_Nᴴ diag(W̄ b)` against `D1 vec(X)` after mapping
/// every active (polar, far-field) pair onto its compressed column, on
/// sparse on-grid channels with `M = 4`, `N = 8`. Draws whose active pairs
/// share a compressed column are redrawn.
pub fn compression_check(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let geom = SystemGeometry::new(4, 8, 4, 28e9)?;
    let (m, n, k) = (geom.m, geom.n, geom.k);
    let e = geom.elements_per_subarray();
    let polar = build_polar_grid(&geom, n, 2, 1.2)?;
    let w = polar_dictionary(&geom, &polar.points);
    let dict = DictionarySet::new(&geom, n, 2, 1.2)?;
    let f_n = crate::dictionary::far_field_dictionary(n, geom.spacing, geom.wavelength);
    let pairs = compress_dictionary(&polar.points, &far_field_angles(n), &dict.grid)?;
    let nb = polar.points.len();
    let q_bar = dict.q_bar();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cascade = Check::new("cascade equals compressed model");
    let mut pilots = Check::new("pilot response equals D1 vec(X)");
    let mut done = 0;
    while done < instances {
        let mut a = ComplexMatrix::zeros(m, n);
        for _ in 0..2 {
            a[(rng.random_range(0..m), rng.random_range(0..n))] = complex_normal(&mut rng);
        }
        let mut b = ComplexVector::zeros(nb);
        let mut phi = DMatrix::from_element(k, nb, true);
        for _ in 0..2 {
            let col = rng.random_range(0..nb);
            b[col] = complex_normal(&mut rng);
            for s in 0..k {
                phi[(s, col)] = rng.random_bool(0.7);
            }
            let keep = rng.random_range(0..k);
            phi[(keep, col)] = true;
        }
        let w_bar = mask_columns(&w, &phi, e)?;

        let mut x = ComplexMatrix::zeros(m, q_bar);
        let mut phi_s = DMatrix::from_element(k, q_bar, true);
        let mut used = vec![false; q_bar];
        let mut collision = false;
        let mut direct_active = 0;
        for nbi in (0..nb).filter(|&i| b[i] != Complex64::new(0.0, 0.0)) {
            for ni in (0..n).filter(|&j| a.column(j).iter().any(|v| v.norm() > 0.0)) {
                direct_active += 1;
                let q = pairs[nbi * n + ni].column;
                collision |= used[q];
                used[q] = true;
                let col = a.column(ni) * b[nbi];
                x.set_column(q, &(x.column(q) + col));
                phi_s.set_column(q, &phi.column(nbi));
            }
        }
        if collision {
            continue;
        }
        done += 1;
        let compressed_active = (0..q_bar).filter(|&q| x.column(q).iter().any(|v| v.norm() > 0.0)).count();
        if compressed_active != direct_active {
            cascade.structural_failures += 1;
        }

        let h = &dict.f_m * &a * f_n.adjoint() * diag(&(&w_bar * &b));
        let xv = vec(&x);
        let h_model = cascaded_channel(&dict.f_m, &mask_columns(&dict.q, &phi_s, e)?, &xv)?;
        cascade.record(vec_err(&vec(&h), &h_model));

        let psi = random_ris_phases(n, 6, &mut rng);
        let op = D1Operator::with_vr(dict.f_m.clone(), &dict.q, &phi_s, &psi)?;
        let y = op.apply(&xv)?;
        pilots.record(relative_error(&(&h * &psi), &unvec(&y, m, psi.ncols())?));
    }
    cascade.instances = instances;
    pilots.instances = instances;
    Ok(vec![cascade, pilots])
}
