//! Visible-region estimation: turbo exchange between a real-valued LMMSE
//! module and sum-product on per-column Markov chains of subarray states.

use nalgebra::{DMatrix, DVector};

use crate::algebra::{ComplexMatrix, ComplexVector, RealVector};
use crate::error::{Error, Result};
use crate::sensing::{assemble_d2, energy_columns};

const PROB_FLOOR: f64 = 1e-12;
/// Variance assigned to messages that carry no information.
pub const VARIANCE_CAP: f64 = 1e8;

/// Two-state chain along the subarrays; `p_ab = P(next = b | prev = a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovVrPrior {
    pub lambda_vr: f64,
    pub p01: f64,
    pub p10: f64,
    pub p00: f64,
    pub p11: f64,
}

impl MarkovVrPrior {
    pub fn new(p01: f64, p10: f64) -> Result<Self> {
        if !(p01 > 0.0 && p01 <= 1.0) || !(0.0..1.0).contains(&p10) {
            return Err(Error::param(
                "markov",
                format!("transitions p01 = {p01}, p10 = {p10} out of range"),
            ));
        }
        Ok(MarkovVrPrior {
            lambda_vr: p01 / (p01 + p10),
            p01,
            p10,
            p00: 1.0 - p01,
            p11: 1.0 - p10,
        })
    }

    /// Chain with stationary probability `lambda_vr` and the given `p01`.
    pub fn from_stationary(lambda_vr: f64, p01: f64) -> Result<Self> {
        if !(lambda_vr > 0.0 && lambda_vr <= 1.0) {
            return Err(Error::param("lambda_vr", format!("{lambda_vr} not in (0, 1]")));
        }
        Self::new(p01, p01 * (1.0 - lambda_vr) / lambda_vr)
    }
}

/// Gaussian density up to the common normalizer, in log domain.
fn log_gauss(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * var.ln() - (x - mean) * (x - mean) / (2.0 * var)
}

fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        0.5
    } else {
        p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }
}

/// `[Re y; Im y]` and the matching real stacking of `D2`.
pub fn realify(y: &ComplexVector, d2: &ComplexMatrix) -> Result<(RealVector, DMatrix<f64>)> {
    if d2.ncols() == 0 {
        return Err(Error::param("realify", "no active columns"));
    }
    if d2.nrows() != y.len() {
        return Err(Error::dims(
            "realify",
            format!("D2 has {} rows, y has {}", d2.nrows(), y.len()),
        ));
    }
    let n = y.len();
    let y_bar = DVector::from_fn(2 * n, |i, _| if i < n { y[i].re } else { y[i - n].im });
    let d_bar = DMatrix::from_fn(2 * n, d2.ncols(), |i, j| {
        if i < n {
            d2[(i, j)].re
        } else {
            d2[(i - n, j)].im
        }
    });
    Ok((y_bar, d_bar))
}

/// LMMSE posterior under `y = D v + n`, `n ~ N(0, I / precision)`,
/// `v ~ N(α_pri, diag(β_pri))`. Returns the mean and the diagonal of the
/// posterior covariance.
pub fn lmmse_step(
    y: &RealVector,
    d: &DMatrix<f64>,
    precision: f64,
    alpha_pri: &RealVector,
    beta_pri: &RealVector,
) -> Result<(RealVector, RealVector)> {
    if beta_pri.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::param("beta_pri", "prior variances must be positive"));
    }
    if d.nrows() != y.len() || d.ncols() != alpha_pri.len() || beta_pri.len() != alpha_pri.len() {
        return Err(Error::dims("lmmse_step", "inconsistent shapes"));
    }
    let mut normal = d.transpose() * d * precision;
    for i in 0..normal.nrows() {
        normal[(i, i)] += 1.0 / beta_pri[i];
    }
    let rhs = alpha_pri.component_div(beta_pri) + d.transpose() * y * precision;
    let cov = match normal.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let trace: f64 = normal.diagonal().sum();
            let ridge = 1e-10 * trace / normal.nrows() as f64;
            for i in 0..normal.nrows() {
                normal[(i, i)] += ridge;
            }
            normal
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular LMMSE normal matrix".into()))?
        }
    };
    let mean = &cov * rhs;
    Ok((mean, cov.diagonal()))
}

/// Remove a Gaussian prior from a Gaussian posterior. Non-positive or
/// infinite extrinsic variances are replaced by [`VARIANCE_CAP`] with the
/// posterior mean.
pub fn decorrelate(post_mean: f64, post_var: f64, pri_mean: f64, pri_var: f64) -> (f64, f64) {
    let prec = 1.0 / post_var - 1.0 / pri_var;
    if !(prec > 0.0) || !prec.is_finite() {
        return (post_mean, VARIANCE_CAP);
    }
    let var = 1.0 / prec;
    if !(var <= VARIANCE_CAP) {
        return (post_mean, VARIANCE_CAP);
    }
    let mean = var * (post_mean / post_var - pri_mean / pri_var);
    (mean, var)
}

/// Vector form of [`decorrelate`].
pub fn decorrelate_all(
    post_mean: &RealVector,
    post_var: &RealVector,
    pri_mean: &RealVector,
    pri_var: &RealVector,
) -> (RealVector, RealVector) {
    let n = post_mean.len();
    let mut mean = RealVector::zeros(n);
    let mut var = RealVector::zeros(n);
    for i in 0..n {
        let (m, v) = decorrelate(post_mean[i], post_var[i], pri_mean[i], pri_var[i]);
        mean[i] = m;
        var[i] = v;
    }
    (mean, var)
}

/// Output of one sum-product pass over all chains.
#[derive(Debug, Clone, PartialEq)]
pub struct MpOutput {
    pub pi_in: RealVector,
    pub pi_out: RealVector,
    pub posterior: RealVector,
    pub alpha_post: RealVector,
    pub beta_post: RealVector,
}

/// Sum-product on independent chains of length `k`. Entry `j·k + i` is
/// subarray `i` of chain `j`; each node sees the Gaussian pseudo-observation
/// `N(α_pri; v, β_pri)`.
pub fn mp_step(
    alpha_pri: &RealVector,
    beta_pri: &RealVector,
    prior: &MarkovVrPrior,
    k: usize,
) -> Result<MpOutput> {
    let len = alpha_pri.len();
    if k == 0 || !len.is_multiple_of(k) || beta_pri.len() != len {
        return Err(Error::dims("mp_step", format!("{len} nodes in chains of {k}")));
    }
    let pi_in = RealVector::from_fn(len, |i, _| {
        let l1 = log_gauss(1.0, alpha_pri[i], beta_pri[i]);
        let l0 = log_gauss(0.0, alpha_pri[i], beta_pri[i]);
        clamp_prob(1.0 / (1.0 + (l0 - l1).exp()))
    });
    let p = prior;
    let mut fwd = RealVector::zeros(len);
    let mut bwd = RealVector::zeros(len);
    for c in 0..len / k {
        let base = c * k;
        fwd[base] = p.lambda_vr;
        for i in 1..k {
            let (pi, lf) = (pi_in[base + i - 1], fwd[base + i - 1]);
            let num = p.p01 * (1.0 - pi) * (1.0 - lf) + p.p11 * pi * lf;
            let den = (1.0 - pi) * (1.0 - lf) + pi * lf;
            fwd[base + i] = clamp_prob(num / den);
        }
        bwd[base + k - 1] = 0.5;
        for i in (0..k - 1).rev() {
            let (pi, lb) = (pi_in[base + i + 1], bwd[base + i + 1]);
            let num = p.p10 * (1.0 - pi) * (1.0 - lb) + p.p11 * pi * lb;
            let den = (p.p00 + p.p10) * (1.0 - pi) * (1.0 - lb) + (p.p11 + p.p01) * pi * lb;
            bwd[base + i] = clamp_prob(num / den);
        }
    }
    let pi_out = RealVector::from_fn(len, |i, _| {
        let (lf, lb) = (fwd[i], bwd[i]);
        clamp_prob(lf * lb / ((1.0 - lf) * (1.0 - lb) + lf * lb))
    });
    let posterior = RealVector::from_fn(len, |i, _| {
        let (a, b) = (pi_in[i], pi_out[i]);
        clamp_prob(a * b / (a * b + (1.0 - a) * (1.0 - b)))
    });
    let alpha_post = posterior.clone();
    let beta_post = posterior.map(|v| v * (1.0 - v));
    Ok(MpOutput {
        pi_in,
        pi_out,
        posterior,
        alpha_post,
        beta_post,
    })
}

/// Beliefs over the active columns after the last turbo iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct VrBeliefState {
    pub columns: Vec<usize>,
    pub alpha_a_pri: RealVector,
    pub beta_a_pri: RealVector,
    pub alpha_a_post: RealVector,
    pub beta_a_post: RealVector,
    pub alpha_b_pri: RealVector,
    pub beta_b_pri: RealVector,
    pub alpha_b_post: RealVector,
    pub beta_b_post: RealVector,
    pub pi_in: RealVector,
    pub pi_out: RealVector,
    pub posterior: RealVector,
    /// `K x |Q_v|` decisions.
    pub decision: DMatrix<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VrConfig {
    pub i_v: usize,
    pub energy_fraction: f64,
}

impl Default for VrConfig {
    fn default() -> Self {
        VrConfig {
            i_v: 5,
            energy_fraction: 0.95,
        }
    }
}

/// Turbo iterations on a fixed real-valued model over `columns`.
/// Returns the `K x |columns|` decision and the final beliefs.
pub fn turbo_iterations(
    y_bar: &RealVector,
    d_bar: &DMatrix<f64>,
    precision: f64,
    prior: &MarkovVrPrior,
    k: usize,
    columns: Vec<usize>,
    i_v: usize,
) -> Result<VrBeliefState> {
    let len = d_bar.ncols();
    let lam = prior.lambda_vr;
    // Unbiased start: Bernoulli(λ) moments, floored so that λ = 1 stays valid.
    let mut alpha_a_pri = RealVector::from_element(len, lam);
    let mut beta_a_pri = RealVector::from_element(len, (lam * (1.0 - lam)).max(PROB_FLOOR));
    let mut state = None;
    for _ in 0..i_v.max(1) {
        let (alpha_a_post, beta_a_post) = lmmse_step(y_bar, d_bar, precision, &alpha_a_pri, &beta_a_pri)?;
        let (alpha_b_pri, beta_b_pri) = decorrelate_all(&alpha_a_post, &beta_a_post, &alpha_a_pri, &beta_a_pri);
        let mp = mp_step(&alpha_b_pri, &beta_b_pri, prior, k)?;
        let (next_alpha, next_beta) = decorrelate_all(&mp.alpha_post, &mp.beta_post, &alpha_b_pri, &beta_b_pri);
        let decision = DMatrix::from_fn(k, len / k, |r, c| mp.posterior[c * k + r] > 0.5);
        state = Some(VrBeliefState {
            columns: columns.clone(),
            alpha_a_pri: alpha_a_pri.clone(),
            beta_a_pri: beta_a_pri.clone(),
            alpha_a_post,
            beta_a_post,
            alpha_b_pri,
            beta_b_pri,
            alpha_b_post: mp.alpha_post,
            beta_b_post: mp.beta_post,
            pi_in: mp.pi_in,
            pi_out: mp.pi_out,
            posterior: mp.posterior,
            decision,
        });
        alpha_a_pri = next_alpha;
        beta_a_pri = next_beta;
    }
    Ok(state.expect("at least one turbo iteration"))
}

/// Estimate `Φ_s` on the active columns of `x_hat`; other columns are set
/// visible. `noise_precision` is the complex-domain `κ̂`, so the real model
/// has precision `2 κ̂`.
#[allow(clippy::too_many_arguments)]
pub fn run_vr_module(
    y: &ComplexVector,
    f: &ComplexMatrix,
    q: &ComplexMatrix,
    ris_phases: &ComplexMatrix,
    x_hat: &ComplexVector,
    noise_precision: f64,
    prior: &MarkovVrPrior,
    k: usize,
    cfg: &VrConfig,
) -> Result<(DMatrix<bool>, Option<VrBeliefState>)> {
    let q_bar = q.ncols();
    let mut phi = DMatrix::from_element(k, q_bar, true);
    let columns = energy_columns(x_hat, f.ncols(), cfg.energy_fraction);
    if columns.is_empty() {
        return Ok((phi, None));
    }
    let d2 = assemble_d2(f, q, x_hat, ris_phases, k, &columns)?;
    let (y_bar, d_bar) = realify(y, &d2)?;
    let beliefs = turbo_iterations(&y_bar, &d_bar, 2.0 * noise_precision, prior, k, columns, cfg.i_v)?;
    for (j, &c) in beliefs.columns.iter().enumerate() {
        for r in 0..k {
            phi[(r, c)] = beliefs.decision[(r, j)];
        }
    }
    Ok((phi, Some(beliefs)))
}
