//! Joint gain / visible-region / off-grid estimation and the reference
//! estimators it is compared against.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::algebra::{unvec, vec, ComplexMatrix, ComplexVector};
use crate::dictionary::{DictionarySet, OffGrid};
use crate::error::{Error, Result};
use crate::geometry::{far_field_arv, user_path_response, ChannelRealization, PilotObservation, SystemGeometry};
use crate::grid_refine::{refine, OffGridState, RefineProblem};
use crate::metrics::compute_nmse;
use crate::sensing::{cascaded_channel, mask_columns, D1Operator};
use crate::turbo::{run_vr_module, MarkovVrPrior, VrConfig};
use crate::vbi::{greedy_support, run_gain_module, PosteriorState, SparsePrior3L, VbiConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub i_out: usize,
    pub vbi: VbiConfig,
    pub vr: VrConfig,
    pub prior: SparsePrior3L,
    pub markov: MarkovVrPrior,
    pub enable_vr: bool,
    pub enable_offgrid: bool,
}

impl EstimatorConfig {
    pub fn new(l_u: usize, l_rb: usize, dict: &DictionarySet, lambda_vr: f64, p01: f64) -> Result<Self> {
        Ok(EstimatorConfig {
            i_out: 30,
            vbi: VbiConfig {
                fallback_columns: l_u * l_rb,
                ..VbiConfig::default()
            },
            vr: VrConfig::default(),
            prior: SparsePrior3L::for_paths(l_u, l_rb, dict.m, dict.q_bar()),
            markov: MarkovVrPrior::from_stationary(lambda_vr, p01)?,
            enable_vr: true,
            enable_offgrid: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.i_out == 0 || self.vbi.i_x == 0 || self.vr.i_v == 0 || self.vbi.i_g == 0 {
            return Err(Error::param("iterations", "all iteration counts must be at least 1"));
        }
        self.prior.validate()
    }
}

/// State after one outer iteration, or one greedy / EM step for baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// `‖y - ŷ‖ / ‖y‖`.
    pub residual: f64,
    pub nmse: Option<f64>,
    /// Estimator-specific cost, when one is tracked.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    /// Gains in the dictionary domain; path coefficients for the oracle.
    pub x_hat: ComplexVector,
    pub phi_s_hat: Option<DMatrix<bool>>,
    pub xi_hat: Option<OffGrid>,
    /// `vec(Ĥ diag(ĥ_u))`, length M·N.
    pub h_cascaded_hat: ComplexVector,
    pub nmse: Option<f64>,
    pub iteration_trace: Vec<IterationRecord>,
    pub converged: bool,
    pub failure: Option<String>,
}

fn check_obs(obs: &PilotObservation, dict: &DictionarySet) -> Result<()> {
    if obs.ris_phases.nrows() != dict.n
        || obs.ris_phases.ncols() != obs.pilots
        || obs.y.len() != dict.m * obs.pilots
    {
        return Err(Error::dims(
            "observation",
            format!(
                "y {} with {}x{} phases for M = {}, N = {}",
                obs.y.len(),
                obs.ris_phases.nrows(),
                obs.ris_phases.ncols(),
                dict.m,
                dict.n
            ),
        ));
    }
    Ok(())
}

fn nmse_of(h: &ComplexVector, truth: Option<&ComplexVector>) -> Result<Option<f64>> {
    truth.map(|t| compute_nmse(h, t)).transpose()
}

/// `vec(F_M(Δϑ) X (Q(Δφ̄, Δr̄) ⊙ Φ̄)^T)`.
pub fn reconstruct_channel(
    dict: &DictionarySet,
    xi: &OffGrid,
    phi_s: &DMatrix<bool>,
    x: &ComplexVector,
) -> Result<ComplexVector> {
    let f = dict.perturbed_fm(xi)?;
    let q = mask_columns(&dict.perturbed_q(xi)?, phi_s, dict.elements_per_subarray())?;
    cascaded_channel(&f, &q, x)
}

/// Scale making the mean observation power one per entry.
fn observation_scale(obs: &PilotObservation) -> f64 {
    (obs.y.norm_squared() / obs.y.len() as f64).sqrt()
}

fn zero_estimate(dict: &DictionarySet, truth: Option<&ComplexVector>) -> Result<EstimateResult> {
    let h = ComplexVector::zeros(dict.m * dict.n);
    Ok(EstimateResult {
        x_hat: ComplexVector::zeros(dict.m * dict.q_bar()),
        phi_s_hat: Some(DMatrix::from_element(dict.k, dict.q_bar(), true)),
        xi_hat: Some(OffGrid::zeros(dict.m, dict.q_bar())),
        nmse: nmse_of(&h, truth)?,
        h_cascaded_hat: h,
        iteration_trace: Vec::new(),
        converged: true,
        failure: None,
    })
}

fn is_soft_failure(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::Numerical(_))
}

/// Outer loop: gain module, then VR module, then off-grid refinement.
/// `truth` only feeds the NMSE trace. Divergence of an inner module ends
/// the loop and is reported in `failure` with the last good estimate.
pub fn tsjbe(
    obs: &PilotObservation,
    dict: &DictionarySet,
    cfg: &EstimatorConfig,
    truth: Option<&ComplexVector>,
) -> Result<EstimateResult> {
    cfg.validate()?;
    check_obs(obs, dict)?;
    let (m, k, q_bar) = (dict.m, dict.k, dict.q_bar());
    let scale = observation_scale(obs);
    if !(scale > 0.0) {
        return zero_estimate(dict, truth);
    }
    let y = &obs.y / Complex64::new(scale, 0.0);
    let y_norm = y.norm();
    let mut phi = DMatrix::from_element(k, q_bar, true);
    let mut grid = OffGridState::new(m, q_bar);
    let mut x_hat = ComplexVector::zeros(m * q_bar);
    let mut state: Option<PosteriorState> = None;
    let mut trace = Vec::with_capacity(cfg.i_out);
    let mut failure = None;

    for _ in 0..cfg.i_out {
        let f = dict.perturbed_fm(&grid.xi)?;
        let q = dict.perturbed_q(&grid.xi)?;
        let d1 = D1Operator::with_vr(f.clone(), &q, &phi, &obs.ris_phases)?;
        let st = match state.as_mut() {
            Some(st) => st,
            None => {
                let (active, mu0) = greedy_support(&y, &d1, cfg.vbi.fallback_columns)?;
                let fit = (&y - d1.apply(&mu0)?).norm_squared().max(1e-12 * y_norm * y_norm);
                let dof = (y.len() - active.len()).max(1) as f64;
                state.insert(PosteriorState::init(&cfg.prior, mu0, &active, dof / fit))
            }
        };
        let gain = match run_gain_module(&y, &d1, &cfg.prior, &cfg.vbi, st) {
            Ok(g) => g,
            Err(e) if is_soft_failure(&e) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        // entries the support posterior rejects carry the inactive prior
        // and are reported as zero
        x_hat = ComplexVector::from_fn(gain.x_hat.len(), |i, _| {
            if st.s_prob[i] > 0.5 {
                gain.x_hat[i]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });

        if cfg.enable_vr {
            match run_vr_module(&y, &f, &q, &obs.ris_phases, &x_hat, gain.kappa_hat, &cfg.markov, k, &cfg.vr) {
                Ok((p, _)) => phi = p,
                Err(e) if is_soft_failure(&e) => {
                    failure = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        if cfg.enable_offgrid {
            let problem = RefineProblem {
                y: &y,
                ris_phases: &obs.ris_phases,
                phi_s: &phi,
                x_hat: &x_hat,
                dict,
            };
            refine(&problem, &mut grid)?;
        }

        let h = reconstruct_channel(dict, &grid.xi, &phi, &x_hat)?;
        let fit = vec(&(unvec(&h, m, dict.n)? * &obs.ris_phases));
        trace.push(IterationRecord {
            residual: (&y - fit).norm() / y_norm,
            nmse: nmse_of(&(h * Complex64::new(scale, 0.0)), truth)?,
            objective: None,
        });
    }

    let x_hat = x_hat * Complex64::new(scale, 0.0);
    let h = reconstruct_channel(dict, &grid.xi, &phi, &x_hat)?;
    Ok(EstimateResult {
        nmse: nmse_of(&h, truth)?,
        h_cascaded_hat: h,
        x_hat,
        phi_s_hat: Some(phi),
        xi_hat: Some(grid.xi),
        iteration_trace: trace,
        converged: failure.is_none(),
        failure,
    })
}

/// Minimum-norm least squares via SVD.
fn pseudo_solve(a: &ComplexMatrix, y: &ComplexVector) -> Result<ComplexVector> {
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.iter().fold(0.0f64, |acc, &s| acc.max(s));
    let eps = top * 1e-12 * a.nrows().max(a.ncols()) as f64;
    svd.solve(y, eps).map_err(|e| Error::Numerical(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpConfig {
    pub sparsity: usize,
    /// Stop early once `‖r‖ <= tol ‖y‖`.
    pub residual_tol: Option<f64>,
}

/// Greedy atom selection over the on-grid `D1` with every element visible,
/// refitting all selected atoms by least squares after each pick.
pub fn omp_baseline(
    obs: &PilotObservation,
    dict: &DictionarySet,
    cfg: &OmpConfig,
    truth: Option<&ComplexVector>,
) -> Result<EstimateResult> {
    check_obs(obs, dict)?;
    if cfg.sparsity == 0 {
        return Err(Error::param("sparsity", "must be at least 1"));
    }
    let ones = DMatrix::from_element(dict.k, dict.q_bar(), true);
    let d1 = D1Operator::with_vr(dict.f_m.clone(), &dict.q, &ones, &obs.ris_phases)?;
    let norms = d1.column_norms2();
    let y = &obs.y;
    let y_norm = y.norm();
    let mut x = ComplexVector::zeros(d1.ncols());
    let mut trace = Vec::new();
    if y_norm > 0.0 {
        let mut selected: Vec<usize> = Vec::new();
        let mut atoms = ComplexMatrix::zeros(y.len(), 0);
        let mut r = y.clone();
        let mut coef = ComplexVector::zeros(0);
        while selected.len() < cfg.sparsity.min(d1.ncols()) {
            let c = d1.adjoint(&r)?;
            let pick = (0..d1.ncols())
                .filter(|i| norms[*i] > 0.0 && !selected.contains(i))
                .max_by(|&a, &b| {
                    (c[a].norm_sqr() / norms[a])
                        .total_cmp(&(c[b].norm_sqr() / norms[b]))
                        .then(b.cmp(&a))
                });
            let Some(pick) = pick else { break };
            selected.push(pick);
            let width = atoms.ncols();
            atoms = atoms.insert_column(width, Complex64::new(0.0, 0.0));
            let last = atoms.ncols() - 1;
            atoms.set_column(last, &d1.column(pick));
            coef = pseudo_solve(&atoms, y)?;
            r = y - &atoms * &coef;
            let residual = r.norm() / y_norm;
            let mut xs = ComplexVector::zeros(d1.ncols());
            for (a, &i) in selected.iter().enumerate() {
                xs[i] = coef[a];
            }
            let h = cascaded_channel(&dict.f_m, &dict.q, &xs)?;
            trace.push(IterationRecord {
                residual,
                nmse: nmse_of(&h, truth)?,
                objective: None,
            });
            if cfg.residual_tol.is_some_and(|t| residual <= t) {
                break;
            }
        }
        for (a, &i) in selected.iter().enumerate() {
            x[i] = coef[a];
        }
    }
    let h = cascaded_channel(&dict.f_m, &dict.q, &x)?;
    Ok(EstimateResult {
        nmse: nmse_of(&h, truth)?,
        h_cascaded_hat: h,
        x_hat: x,
        phi_s_hat: Some(ones),
        xi_hat: Some(OffGrid::zeros(dict.m, dict.q_bar())),
        iteration_trace: trace,
        converged: true,
        failure: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SblConfig {
    pub max_iter: usize,
    /// Stop when the largest variance change, relative to the largest
    /// variance, drops below.
    pub tol: f64,
}

impl Default for SblConfig {
    fn default() -> Self {
        SblConfig {
            max_iter: 200,
            tol: 1e-3,
        }
    }
}

/// EM sparse Bayesian learning on `z_m = T x_m + w_m`, `m = 1..M`, with
/// per-entry variances `γ` and one shared noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SblSolution {
    /// `Q̄ x M`, column `m` is the mean of `x_m`.
    pub mu: ComplexMatrix,
    pub gamma: DMatrix<f64>,
    pub noise_var: f64,
    /// `Σ_m ln|C_m| + z_m^H C_m^{-1} z_m` before each update.
    pub costs: Vec<f64>,
}

pub fn sbl_rows(
    t: &ComplexMatrix,
    z: &ComplexMatrix,
    gamma0: f64,
    noise0: f64,
    cfg: &SblConfig,
) -> Result<SblSolution> {
    let (p, q_bar, m) = (t.nrows(), t.ncols(), z.ncols());
    if z.nrows() != p {
        return Err(Error::dims("sbl", format!("T has {p} rows, Z has {}", z.nrows())));
    }
    let floor = 1e-12 * z.norm_squared() / (p * m).max(1) as f64;
    let mut gamma = DMatrix::from_element(q_bar, m, gamma0);
    let mut noise = noise0.max(floor);
    let mut mu = ComplexMatrix::zeros(q_bar, m);
    let mut costs = Vec::new();
    for _ in 0..cfg.max_iter.max(1) {
        let mut cost = 0.0;
        let mut spread = 0.0;
        let mut next = gamma.clone();
        for r in 0..m {
            let g = gamma.column(r);
            let tg = ComplexMatrix::from_fn(p, q_bar, |i, j| t[(i, j)] * g[j]);
            let mut c = &tg * t.adjoint();
            for i in 0..p {
                c[(i, i)] += noise;
            }
            let ch = c
                .cholesky()
                .ok_or_else(|| Error::Numerical("SBL covariance not positive definite".into()))?;
            let zr = z.column(r).into_owned();
            let ciz = ch.solve(&zr);
            let logdet: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.re.ln()).sum();
            cost += logdet + zr.dotc(&ciz).re;
            let mean = tg.adjoint() * &ciz;
            // quad_j = t_j^H C^-1 t_j = ‖L^-1 t_j‖²
            let w = ch
                .l()
                .solve_lower_triangular(t)
                .ok_or_else(|| Error::Numerical("SBL covariance factor is singular".into()))?;
            spread += (&zr - t * &mean).norm_squared();
            for j in 0..q_bar {
                let quad = w.column(j).norm_squared();
                // tr(noise I - noise² C^-1) = noise Σ_j γ_j quad_j
                spread += noise * g[j] * quad;
                let var = (g[j] - g[j] * g[j] * quad).max(0.0);
                next[(j, r)] = mean[j].norm_sqr() + var;
            }
            mu.set_column(r, &mean);
        }
        costs.push(cost);
        // pruned variances shrink geometrically, so change is measured
        // against the largest variance
        let top = next.iter().fold(f64::MIN_POSITIVE, |a, &b| a.max(b));
        let change = gamma
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / top;
        gamma = next;
        noise = (spread / (p * m) as f64).max(floor);
        if change < cfg.tol {
            break;
        }
    }
    Ok(SblSolution {
        mu,
        gamma,
        noise_var: noise,
        costs,
    })
}

/// SBL over the on-grid `D1` with every element visible. The BS dictionary
/// is orthogonal (`F^H F = M I`), so the problem splits into one `P x Q̄`
/// system per BS angle.
pub fn sbl_baseline(
    obs: &PilotObservation,
    dict: &DictionarySet,
    cfg: &SblConfig,
    truth: Option<&ComplexVector>,
) -> Result<EstimateResult> {
    check_obs(obs, dict)?;
    let m = dict.m;
    let f = &dict.f_m;
    let gram = f.adjoint() * f;
    let dev = (&gram - ComplexMatrix::identity(m, m) * Complex64::new(m as f64, 0.0))
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max);
    if dev > 1e-9 * m as f64 {
        return Err(Error::Numerical("BS dictionary is not orthogonal".into()));
    }
    let ones = DMatrix::from_element(dict.k, dict.q_bar(), true);
    let q = mask_columns(&dict.q, &ones, dict.elements_per_subarray())?;
    let t = obs.ris_phases.transpose() * &q;
    let y = unvec(&obs.y, m, obs.pilots)?;
    // row m of F^H Y / M equals T x_m^T + noise; columns of Z are those rows
    let z = (f.adjoint() * y / Complex64::new(m as f64, 0.0)).transpose();
    let power = z.norm_squared() / z.len().max(1) as f64;
    let mut x = ComplexVector::zeros(m * dict.q_bar());
    let mut trace = Vec::new();
    if power > 0.0 {
        let gamma0 = z.norm_squared() / t.norm_squared().max(f64::MIN_POSITIVE) / m as f64;
        let sol = sbl_rows(&t, &z, gamma0, 0.1 * power, cfg)?;
        for qi in 0..dict.q_bar() {
            for r in 0..m {
                x[qi * m + r] = sol.mu[(qi, r)];
            }
        }
        let fit = (&t * &sol.mu - &z).norm() / z.norm();
        for c in &sol.costs {
            trace.push(IterationRecord {
                residual: fit,
                nmse: None,
                objective: Some(*c),
            });
        }
    }
    let h = cascaded_channel(f, &q, &x)?;
    Ok(EstimateResult {
        nmse: nmse_of(&h, truth)?,
        h_cascaded_hat: h,
        x_hat: x,
        phi_s_hat: Some(ones),
        xi_hat: Some(OffGrid::zeros(dict.m, dict.q_bar())),
        iteration_trace: trace,
        converged: true,
        failure: None,
    })
}

/// Cascaded atoms `a_B(ϑ_j) (conj(a_R(φ_j)) ⊙ b_l ⊙ v_l)^T`, ordered
/// `j·L_U + l`, as M x N matrices.
pub fn oracle_atoms(geom: &SystemGeometry, ch: &ChannelRealization) -> Result<Vec<ComplexMatrix>> {
    let (d, lambda) = (geom.spacing, geom.wavelength);
    let mut out = Vec::new();
    for rb in &ch.paths.rb_paths {
        let a_b = far_field_arv(geom.m, rb.aoa_bs, d, lambda)?;
        let a_r = far_field_arv(geom.n, rb.aod_ris, d, lambda)?;
        for (l, up) in ch.paths.user_paths.iter().enumerate() {
            let b = user_path_response(geom, up)?;
            let mask = ch.vr.element_mask(l);
            let v = ComplexVector::from_fn(geom.n, |n, _| a_r[n].conj() * b[n] * mask[n]);
            out.push(&a_b * v.transpose());
        }
    }
    Ok(out)
}

/// Least squares on the exact path atoms and visible regions.
pub fn oracle_ls(
    obs: &PilotObservation,
    geom: &SystemGeometry,
    ch: &ChannelRealization,
    truth: Option<&ComplexVector>,
) -> Result<EstimateResult> {
    if obs.ris_phases.nrows() != geom.n || obs.y.len() != geom.m * obs.pilots {
        return Err(Error::dims("oracle_ls", "observation does not match the geometry"));
    }
    let atoms = oracle_atoms(geom, ch)?;
    let mut a = ComplexMatrix::zeros(obs.y.len(), atoms.len());
    for (i, c) in atoms.iter().enumerate() {
        a.set_column(i, &vec(&(c * &obs.ris_phases)));
    }
    let coef = pseudo_solve(&a, &obs.y)?;
    let mut h = ComplexVector::zeros(geom.m * geom.n);
    for (i, c) in atoms.iter().enumerate() {
        h += vec(c) * coef[i];
    }
    let residual = if obs.y.norm() > 0.0 {
        (&obs.y - &a * &coef).norm() / obs.y.norm()
    } else {
        0.0
    };
    Ok(EstimateResult {
        nmse: nmse_of(&h, truth)?,
        h_cascaded_hat: h,
        x_hat: coef,
        phi_s_hat: None,
        xi_hat: None,
        iteration_trace: vec![IterationRecord {
            residual,
            nmse: None,
            objective: None,
        }],
        converged: true,
        failure: None,
    })
}
