//! Sparse gain inference: variational Bayes under a three-layer
//! support / precision / gain prior with a diagonal posterior covariance
//! and a subspace-restricted mean update.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::algebra::ComplexVector;
use crate::error::{Error, Result};
use crate::sensing::{top_energy, D1Operator};

/// Support probability `λ`, Gamma shape/rate for active `(a, b)` and
/// inactive `(ā, b̄)` precisions, and the noise-precision prior `(c, d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePrior3L {
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub a_bar: f64,
    pub b_bar: f64,
    pub c: f64,
    pub d: f64,
}

impl SparsePrior3L {
    /// `λ = L_U L_RB / (M Q̄)` with the default Gamma hyperparameters.
    pub fn for_paths(l_u: usize, l_rb: usize, m: usize, q_bar: usize) -> Self {
        let lambda = (l_u * l_rb) as f64 / (m * q_bar) as f64;
        SparsePrior3L {
            lambda: lambda.clamp(1e-6, 1.0 - 1e-6),
            a: 1.0,
            b: 1.0,
            a_bar: 1e6,
            b_bar: 1.0,
            c: 1e-6,
            d: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.a_bar, self.b_bar, self.c, self.d];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::param("prior", "Gamma hyperparameters must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::param("lambda", format!("{} not in (0, 1)", self.lambda)));
        }
        Ok(())
    }

    /// `ln ∫ Γ(ρ; a, b) CN(x; 0, 1/ρ) dρ` up to the common `-ln π`, at
    /// `|x|^2 = e`.
    fn log_marginal(a: f64, b: f64, e: f64) -> f64 {
        a.ln() + a * b.ln() - (a + 1.0) * (b + e).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbiConfig {
    pub i_x: usize,
    pub i_g: usize,
    /// Energy share defining active columns.
    pub energy_fraction: f64,
    /// Columns taken from the matched filter when the mean is zero.
    pub fallback_columns: usize,
}

impl Default for VbiConfig {
    fn default() -> Self {
        VbiConfig {
            i_x: 10,
            i_g: 5,
            energy_fraction: 0.95,
            fallback_columns: 9,
        }
    }
}

/// Variational posterior of the gains and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub mu: ComplexVector,
    pub sigma2: Vec<f64>,
    pub rho_a: Vec<f64>,
    pub rho_b: Vec<f64>,
    pub s_prob: Vec<f64>,
    pub kappa_c: f64,
    pub kappa_d: f64,
    /// Last subspace index set, ascending.
    pub support: Vec<usize>,
}

impl PosteriorState {
    /// Fresh hyperparameter posteriors around a given mean: `⟨s⟩ = 1` on
    /// `active`, `λ` elsewhere, `q(ρ)` set from `⟨s⟩` alone and
    /// `⟨κ⟩ = kappa`.
    pub fn init(prior: &SparsePrior3L, mu: ComplexVector, active: &[usize], kappa: f64) -> Self {
        let len = mu.len();
        let mut s_prob = vec![prior.lambda; len];
        for &i in active {
            s_prob[i] = 1.0;
        }
        let rho_a = s_prob
            .iter()
            .map(|s| s * prior.a + (1.0 - s) * prior.a_bar)
            .collect();
        let rho_b = s_prob
            .iter()
            .map(|s| s * prior.b + (1.0 - s) * prior.b_bar)
            .collect();
        PosteriorState {
            mu,
            sigma2: vec![0.0; len],
            rho_a,
            rho_b,
            s_prob,
            kappa_c: 1.0,
            kappa_d: 1.0 / kappa,
            support: active.to_vec(),
        }
    }

    pub fn rho_mean(&self, i: usize) -> f64 {
        self.rho_a[i] / self.rho_b[i]
    }

    pub fn kappa_mean(&self) -> f64 {
        self.kappa_c / self.kappa_d
    }

    fn second_moment(&self, i: usize) -> f64 {
        self.mu[i].norm_sqr() + self.sigma2[i]
    }
}

/// Per-iteration diagnostics of the gain module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbiDiagnostics {
    pub residual: f64,
    pub support_size: usize,
    pub kappa: f64,
}

/// One row per active column: the columns of `unvec(mu)` holding
/// `fraction` of the energy, each contributing its strongest row.
pub fn select_subspace(mu: &ComplexVector, m: usize, fraction: f64) -> Vec<usize> {
    let q_bar = mu.len() / m;
    let energy: Vec<f64> = (0..q_bar)
        .map(|q| (0..m).map(|r| mu[q * m + r].norm_sqr()).sum())
        .collect();
    argmax_rows(mu, m, &top_energy(&energy, fraction))
}

fn argmax_rows(v: &ComplexVector, m: usize, columns: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = columns
        .iter()
        .map(|&q| {
            let row = (0..m)
                .max_by(|&a, &b| {
                    v[q * m + a]
                        .norm_sqr()
                        .total_cmp(&v[q * m + b].norm_sqr())
                        .then(b.cmp(&a))
                })
                .unwrap_or(0);
            q * m + row
        })
        .collect();
    out.sort_unstable();
    out
}

/// Subspace from the normalized matched filter `D^H y / ‖d_i‖`: the
/// `columns` strongest columns, one row each.
pub fn matched_filter_support(y: &ComplexVector, d1: &D1Operator, columns: usize) -> Result<Vec<usize>> {
    let dhy = d1.adjoint(y)?;
    Ok(fallback_subspace(&dhy, &d1.column_norms2(), d1.m(), columns))
}

/// Greedy initial support: repeatedly add the entry best matched to the
/// residual and refit all selected gains by least squares. Returns the
/// ascending index set and the fitted gains.
pub fn greedy_support(y: &ComplexVector, d1: &D1Operator, count: usize) -> Result<(Vec<usize>, ComplexVector)> {
    let norms = d1.column_norms2();
    let mut picked: Vec<usize> = Vec::new();
    let mut x = ComplexVector::zeros(d1.ncols());
    let mut r = y.clone();
    let dhy = d1.adjoint(y)?;
    let rho = vec![0.0; d1.ncols()];
    while picked.len() < count.min(d1.ncols()) {
        let c = d1.adjoint(&r)?;
        let best = (0..d1.ncols())
            .filter(|&i| norms[i] > 0.0 && !picked.contains(&i))
            .max_by(|&a, &b| {
                (c[a].norm_sqr() / norms[a])
                    .total_cmp(&(c[b].norm_sqr() / norms[b]))
                    .then(b.cmp(&a))
            });
        let Some(best) = best else { break };
        if c[best].norm_sqr() == 0.0 {
            break;
        }
        picked.push(best);
        let sol = restricted_solve(d1, &rho, 1.0, &dhy, &picked)?;
        x.fill(Complex64::new(0.0, 0.0));
        for (a, &i) in picked.iter().enumerate() {
            x[i] = sol[a];
        }
        r = y - d1.apply(&x)?;
    }
    picked.sort_unstable();
    Ok((picked, x))
}

fn fallback_subspace(dhy: &ComplexVector, norms: &[f64], m: usize, columns: usize) -> Vec<usize> {
    let mf = ComplexVector::from_fn(dhy.len(), |i, _| {
        if norms[i] > 0.0 {
            dhy[i] / norms[i].sqrt()
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let q_bar = mf.len() / m;
    let best: Vec<f64> = (0..q_bar)
        .map(|q| (0..m).map(|r| mf[q * m + r].norm_sqr()).fold(0.0, f64::max))
        .collect();
    let mut order: Vec<usize> = (0..q_bar).filter(|&q| best[q] > 0.0).collect();
    order.sort_by(|&a, &b| best[b].total_cmp(&best[a]).then(a.cmp(&b)));
    order.truncate(columns.max(1));
    argmax_rows(&mf, m, &order)
}

/// `Re(u^H G u) - 2 κ Re(u^H D^H y)` with `G = diag(⟨ρ⟩) + κ D^H D`.
pub fn objective(d1: &D1Operator, rho: &[f64], kappa: f64, dhy: &ComplexVector, u: &ComplexVector) -> Result<f64> {
    let gu = apply_g(d1, rho, kappa, u)?;
    Ok(u.dotc(&gu).re - 2.0 * kappa * u.dotc(dhy).re)
}

fn apply_g(d1: &D1Operator, rho: &[f64], kappa: f64, u: &ComplexVector) -> Result<ComplexVector> {
    let mut out = d1.gram_apply(u)? * Complex64::new(kappa, 0.0);
    for (i, v) in out.iter_mut().enumerate() {
        *v += u[i] * rho[i];
    }
    Ok(out)
}

/// Solve the `|S| x |S|` restriction of `G`, adding a small ridge when the
/// system is badly conditioned.
fn restricted_solve(
    d1: &D1Operator,
    rho: &[f64],
    kappa: f64,
    dhy: &ComplexVector,
    support: &[usize],
) -> Result<ComplexVector> {
    let s = support.len();
    let mut g = DMatrix::from_fn(s, s, |a, b| d1.gram(support[a], support[b]) * kappa);
    for (a, &i) in support.iter().enumerate() {
        g[(a, a)] += Complex64::new(rho[i], 0.0);
    }
    let rhs = ComplexVector::from_fn(s, |a, _| dhy[support[a]] * kappa);
    let eig = g.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 0.0) || hi / lo > 1e12 {
        let trace: f64 = (0..s).map(|a| g[(a, a)].re).sum();
        let ridge = 1e-10 * trace / s as f64;
        for a in 0..s {
            g[(a, a)] += Complex64::new(ridge, 0.0);
        }
    }
    match g.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&rhs)),
        None => g
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular restricted Gram matrix".into())),
    }
}

/// Update `q(x)`: diagonal variances, restricted solve on the subspace of
/// the previous mean, then `i_g` backtracked gradient steps. Returns the
/// objective after the restricted solve and after each gradient step.
pub fn update_qx(
    y: &ComplexVector,
    d1: &D1Operator,
    state: &mut PosteriorState,
    cfg: &VbiConfig,
) -> Result<Vec<f64>> {
    let m = d1.m();
    let norms = d1.column_norms2();
    let kappa = state.kappa_mean();
    let rho: Vec<f64> = (0..d1.ncols()).map(|i| state.rho_mean(i)).collect();
    for i in 0..d1.ncols() {
        state.sigma2[i] = 1.0 / (rho[i] + kappa * norms[i]);
    }
    let dhy = d1.adjoint(y)?;
    let mut support = select_subspace(&state.mu, m, cfg.energy_fraction);
    if support.is_empty() {
        support = fallback_subspace(&dhy, &norms, m, cfg.fallback_columns);
    }
    let mut u = ComplexVector::zeros(d1.ncols());
    if !support.is_empty() {
        let sol = restricted_solve(d1, &rho, kappa, &dhy, &support)?;
        for (a, &i) in support.iter().enumerate() {
            u[i] = sol[a];
        }
    }
    let mut gu = apply_g(d1, &rho, kappa, &u)?;
    let mut phi = u.dotc(&gu).re - 2.0 * kappa * u.dotc(&dhy).re;
    let mut trace = vec![phi];
    for _ in 0..cfg.i_g {
        let r = &gu - &dhy * Complex64::new(kappa, 0.0);
        // descent direction in the metric of the diagonal posterior covariance
        let dir = ComplexVector::from_fn(r.len(), |i, _| r[i] * state.sigma2[i]);
        let slope = r.dotc(&dir).re;
        if !(slope > 0.0) {
            trace.push(phi);
            continue;
        }
        let g_dir = apply_g(d1, &rho, kappa, &dir)?;
        let curv = dir.dotc(&g_dir).re;
        let mut step = if curv > 0.0 { slope / curv } else { 1.0 };
        let mut accepted = false;
        for _ in 0..30 {
            // the objective is quadratic along the line
            let val = phi - 2.0 * step * slope + step * step * curv;
            if val <= phi - 1e-4 * step * 2.0 * slope {
                u -= &dir * Complex64::new(step, 0.0);
                gu -= &g_dir * Complex64::new(step, 0.0);
                phi = val;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(phi);
        if !accepted {
            break;
        }
    }
    state.mu = u;
    state.support = support;
    Ok(trace)
}

/// `ã = ⟨s⟩a + ⟨1-s⟩ā + 1`, `b̃ = ⟨s⟩b + ⟨1-s⟩b̄ + ⟨|x|^2⟩`.
pub fn update_qrho(state: &mut PosteriorState, prior: &SparsePrior3L) {
    for i in 0..state.mu.len() {
        let s = state.s_prob[i];
        state.rho_a[i] = s * prior.a + (1.0 - s) * prior.a_bar + 1.0;
        state.rho_b[i] = s * prior.b + (1.0 - s) * prior.b_bar + state.second_moment(i);
    }
}

/// Support posterior from the two Gamma-marginal branches, in log domain.
pub fn update_qs(state: &mut PosteriorState, prior: &SparsePrior3L) {
    let logit = (prior.lambda / (1.0 - prior.lambda)).ln();
    for i in 0..state.mu.len() {
        let e = state.second_moment(i);
        let z = logit + SparsePrior3L::log_marginal(prior.a, prior.b, e)
            - SparsePrior3L::log_marginal(prior.a_bar, prior.b_bar, e);
        state.s_prob[i] = 1.0 / (1.0 + (-z).exp());
    }
}

/// `⟨‖y - D x‖^2⟩ = ‖y - D μ‖^2 + Σ σ_i^2 ‖d_i‖^2`.
pub fn expected_residual(y: &ComplexVector, d1: &D1Operator, mu: &ComplexVector, sigma2: &[f64]) -> Result<f64> {
    let r = y - d1.apply(mu)?;
    let spread: f64 = sigma2
        .iter()
        .enumerate()
        .map(|(i, s)| s * d1.column_norm2(i))
        .sum();
    Ok(r.norm_squared() + spread)
}

/// `c̃ = c + MP`, `d̃ = d + ⟨‖y - D x‖^2⟩`.
pub fn update_qkappa(
    y: &ComplexVector,
    d1: &D1Operator,
    state: &mut PosteriorState,
    prior: &SparsePrior3L,
) -> Result<()> {
    let res = expected_residual(y, d1, &state.mu, &state.sigma2)?;
    state.kappa_c = prior.c + y.len() as f64;
    state.kappa_d = prior.d + res;
    if !(state.kappa_d > 0.0) {
        return Err(Error::Numerical(format!("noise rate {}", state.kappa_d)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainOutput {
    pub x_hat: ComplexVector,
    pub kappa_hat: f64,
    pub trace: Vec<VbiDiagnostics>,
}

/// `I_x` sweeps of `q(x) → q(ρ) → q(s) → q(κ)`. Aborts with
/// [`Error::Divergence`] when the residual exceeds ten times its minimum.
pub fn run_gain_module(
    y: &ComplexVector,
    d1: &D1Operator,
    prior: &SparsePrior3L,
    cfg: &VbiConfig,
    state: &mut PosteriorState,
) -> Result<GainOutput> {
    prior.validate()?;
    if y.len() != d1.nrows() || state.mu.len() != d1.ncols() {
        return Err(Error::dims(
            "run_gain_module",
            format!(
                "y {} / state {} against a {}x{} operator",
                y.len(),
                state.mu.len(),
                d1.nrows(),
                d1.ncols()
            ),
        ));
    }
    let y_norm = y.norm();
    if y_norm == 0.0 {
        state.mu.fill(Complex64::new(0.0, 0.0));
        return Ok(GainOutput {
            x_hat: state.mu.clone(),
            kappa_hat: state.kappa_mean(),
            trace: Vec::new(),
        });
    }
    let mut trace = Vec::with_capacity(cfg.i_x);
    let mut best = f64::INFINITY;
    for it in 0..cfg.i_x {
        update_qx(y, d1, state, cfg)?;
        update_qrho(state, prior);
        update_qs(state, prior);
        update_qkappa(y, d1, state, prior)?;
        let residual = (y - d1.apply(&state.mu)?).norm();
        if !residual.is_finite() {
            return Err(Error::Numerical(format!("residual {residual} at iteration {it}")));
        }
        if residual > 10.0 * best && residual > 1e-6 * y_norm {
            return Err(Error::Divergence {
                iteration: it,
                residual,
                minimum: best,
            });
        }
        best = best.min(residual);
        trace.push(VbiDiagnostics {
            residual,
            support_size: state.support.len(),
            kappa: state.kappa_mean(),
        });
    }
    Ok(GainOutput {
        x_hat: state.mu.clone(),
        kappa_hat: state.kappa_mean(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::DictionarySet;
    use crate::geometry::{complex_normal, random_ris_phases, SystemGeometry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn operator(g: &SystemGeometry, pilots: usize, seed: u64) -> (DictionarySet, D1Operator) {
        let d = DictionarySet::with_defaults(g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = random_ris_phases(g.n, pilots, &mut rng);
        let phi = DMatrix::from_element(g.k, d.q_bar(), true);
        let op = D1Operator::with_vr(d.f_m.clone(), &d.q, &phi, &psi).unwrap();
        (d, op)
    }

    #[test]
    fn subspace_cases() {
        let mut mu = ComplexVector::zeros(12);
        mu[7] = Complex64::new(0.0, 2.0);
        assert_eq!(select_subspace(&mu, 3, 0.95), vec![7]);
        mu[1] = Complex64::new(2.0, 0.0);
        mu[2] = Complex64::new(0.1, 0.0);
        assert_eq!(select_subspace(&mu, 3, 0.95), vec![1, 7]);
        assert!(select_subspace(&ComplexVector::zeros(6), 3, 0.95).is_empty());
    }

    #[test]
    fn single_atom_noiseless_recovery() {
        let g = SystemGeometry::new(4, 8, 2, 28e9).unwrap();
        let d = DictionarySet::with_defaults(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = random_ris_phases(g.n, 6, &mut rng);
        let one = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let col = d.q.columns(5, 1).into_owned();
        let op = D1Operator::new(one, &col, &psi).unwrap();
        let x = ComplexVector::from_element(1, Complex64::new(0.8, -0.3));
        let y = op.apply(&x).unwrap();
        let prior = SparsePrior3L::for_paths(1, 1, 1, 2);
        let cfg = VbiConfig {
            i_x: 30,
            fallback_columns: 1,
            ..VbiConfig::default()
        };
        let active = matched_filter_support(&y, &op, 1).unwrap();
        assert_eq!(active, vec![0]);
        let mut st = PosteriorState::init(&prior, ComplexVector::zeros(1), &active, 1.0);
        let out = run_gain_module(&y, &op, &prior, &cfg, &mut st).unwrap();
        assert!((out.x_hat[0] - x[0]).norm() / x[0].norm() < 1e-6);
    }

    #[test]
    fn huge_precision_forces_zero_mean() {
        let g = SystemGeometry::new(4, 8, 2, 28e9).unwrap();
        let (d, op) = operator(&g, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = ComplexVector::from_fn(op.nrows(), |_, _| complex_normal(&mut rng));
        let prior = SparsePrior3L::for_paths(1, 1, g.m, d.q_bar());
        let mut st = PosteriorState::init(&prior, ComplexVector::zeros(op.ncols()), &[], 1.0);
        st.rho_a.iter_mut().for_each(|a| *a = 1e14);
        update_qx(&y, &op, &mut st, &VbiConfig::default()).unwrap();
        assert!(st.mu.norm() < 1e-6 * y.norm());
    }

    #[test]
    fn gradient_steps_do_not_increase_objective() {
        let g = SystemGeometry::desk_scale();
        let (d, op) = operator(&g, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prior = SparsePrior3L::for_paths(3, 3, g.m, d.q_bar());
        for _ in 0..10 {
            let y = ComplexVector::from_fn(op.nrows(), |_, _| complex_normal(&mut rng));
            let mut st = PosteriorState::init(&prior, ComplexVector::zeros(op.ncols()), &[], 0.5);
            for _ in 0..3 {
                let tr = update_qx(&y, &op, &mut st, &VbiConfig::default()).unwrap();
                for w in tr.windows(2) {
                    assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
                }
                update_qrho(&mut st, &prior);
                update_qs(&mut st, &prior);
            }
        }
    }

    #[test]
    fn rho_update_all_active() {
        let prior = SparsePrior3L::for_paths(3, 3, 8, 64);
        let mut st = PosteriorState::init(&prior, ComplexVector::from_element(4, Complex64::new(0.5, 0.5)), &[0, 1, 2, 3], 1.0);
        st.sigma2 = vec![0.25; 4];
        update_qrho(&mut st, &prior);
        for i in 0..4 {
            assert_eq!(st.rho_a[i], prior.a + 1.0);
            assert_eq!(st.rho_b[i], prior.b + 0.5 + 0.25);
        }
    }

    #[test]
    fn support_probability_tracks_energy() {
        let prior = SparsePrior3L::for_paths(3, 3, 8, 64);
        let mut mu = ComplexVector::zeros(3);
        mu[0] = Complex64::new(1.0, 0.0);
        mu[1] = Complex64::new(1e-4, 0.0);
        let mut st = PosteriorState::init(&prior, mu, &[], 1.0);
        st.sigma2 = vec![1e-9; 3];
        update_qs(&mut st, &prior);
        assert!(st.s_prob[0] > 0.999);
        assert!(st.s_prob[1] < 0.5);
        assert!(st.s_prob.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn kappa_update_with_zero_residual() {
        let g = SystemGeometry::new(4, 8, 2, 28e9).unwrap();
        let (d, op) = operator(&g, 6, 6);
        let prior = SparsePrior3L::for_paths(1, 1, g.m, d.q_bar());
        let mut x = ComplexVector::zeros(op.ncols());
        x[3] = Complex64::new(1.0, 1.0);
        let y = op.apply(&x).unwrap();
        let mut st = PosteriorState::init(&prior, x, &[], 1.0);
        st.sigma2 = vec![0.0; op.ncols()];
        update_qkappa(&y, &op, &mut st, &prior).unwrap();
        assert!((st.kappa_d - prior.d).abs() < 1e-20 + 1e-12 * y.norm_squared());
        assert_eq!(st.kappa_c, prior.c + op.nrows() as f64);
    }

    #[test]
    fn expected_residual_matches_sampling() {
        let g = SystemGeometry::new(4, 8, 2, 28e9).unwrap();
        let (_, op) = operator(&g, 6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = ComplexVector::from_fn(op.nrows(), |_, _| complex_normal(&mut rng) * 5.0);
        let mu = ComplexVector::from_fn(op.ncols(), |_, _| complex_normal(&mut rng) * 0.1);
        let sigma2: Vec<f64> = (0..op.ncols()).map(|i| 0.001 * (1 + i % 5) as f64).collect();
        let analytic = expected_residual(&y, &op, &mu, &sigma2).unwrap();
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let x = ComplexVector::from_fn(op.ncols(), |i, _| mu[i] + complex_normal(&mut rng) * sigma2[i].sqrt());
            acc += (&y - op.apply(&x).unwrap()).norm_squared();
        }
        let mc = acc / draws as f64;
        assert!((mc - analytic).abs() / analytic < 0.01, "{mc} vs {analytic}");
    }

    #[test]
    fn zero_observation_gives_zero() {
        let g = SystemGeometry::new(4, 8, 2, 28e9).unwrap();
        let (d, op) = operator(&g, 6, 9);
        let prior = SparsePrior3L::for_paths(1, 1, g.m, d.q_bar());
        let mut st = PosteriorState::init(&prior, ComplexVector::zeros(op.ncols()), &[], 1.0);
        let out = run_gain_module(&ComplexVector::zeros(op.nrows()), &op, &prior, &VbiConfig::default(), &mut st).unwrap();
        assert_eq!(out.x_hat.norm(), 0.0);
    }

    #[test]
    fn invalid_prior_rejected() {
        let mut p = SparsePrior3L::for_paths(1, 1, 4, 16);
        p.b = 0.0;
        assert!(p.validate().is_err());
    }
}
