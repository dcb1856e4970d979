//! Hybrid-field cascaded channel synthesis.
//!
//! The RIS is a ULA along the x-axis with element `n` at `((n-1)d, 0)`;
//! the BS is a ULA whose reference element sits at `bs_anchor`. The
//! RIS–BS link is planar-wave, the user–RIS link spherical-wave with
//! per-path visible regions (VRs) shared by all elements of a subarray.
//!
//! Ground truth always uses exact spherical distances; the Fresnel form
//! is only used by the dictionaries.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::algebra::{vec, ComplexMatrix, ComplexVector, ZERO};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemGeometry {
    /// BS antenna count.
    pub m: usize,
    /// RIS element count.
    pub n: usize,
    /// RIS subarray count.
    pub k: usize,
    /// Element spacing in meters (BS and RIS).
    pub spacing: f64,
    pub wavelength: f64,
    pub bs_anchor: [f64; 2],
    /// User and scatterer distance interval in meters.
    pub user_range: [f64; 2],
}

impl SystemGeometry {
    /// Half-wavelength ULAs at the given carrier.
    pub fn new(m: usize, n: usize, k: usize, carrier_hz: f64) -> Result<Self> {
        let wavelength = SPEED_OF_LIGHT / carrier_hz;
        let geom = SystemGeometry {
            m,
            n,
            k,
            spacing: wavelength / 2.0,
            wavelength,
            bs_anchor: [-90.0, -30.0],
            user_range: [10.0, 20.0],
        };
        geom.validate()?;
        Ok(geom)
    }

    /// 28 GHz, M = 16, N = 128, K = 8.
    pub fn full_scale() -> Self {
        Self::new(16, 128, 8, 28e9).expect("valid built-in geometry")
    }

    /// 28 GHz, M = 8, N = 32, K = 4.
    pub fn desk_scale() -> Self {
        Self::new(8, 32, 4, 28e9).expect("valid built-in geometry")
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::param("geometry", "array sizes must be positive"));
        }
        if !self.n.is_multiple_of(self.k) {
            return Err(Error::param(
                "k",
                format!("N = {} is not divisible by K = {}", self.n, self.k),
            ));
        }
        if !(self.spacing > 0.0 && self.wavelength > 0.0) {
            return Err(Error::param("spacing", "spacing and wavelength must be positive"));
        }
        let [lo, hi] = self.user_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::param("user_range", format!("[{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn elements_per_subarray(&self) -> usize {
        self.n / self.k
    }

    /// `2 (N d)^2 / λ` for the RIS aperture.
    pub fn rayleigh_distance(&self) -> f64 {
        let aperture = self.n as f64 * self.spacing;
        2.0 * aperture * aperture / self.wavelength
    }

    pub fn ris_center(&self) -> [f64; 2] {
        [(self.n as f64 - 1.0) * self.spacing / 2.0, 0.0]
    }

    /// Distance from the BS reference element to the RIS center.
    pub fn bs_distance(&self) -> f64 {
        let c = self.ris_center();
        (self.bs_anchor[0] - c[0]).hypot(self.bs_anchor[1] - c[1])
    }

    pub fn is_far_field(&self, distance: f64) -> bool {
        distance > self.rayleigh_distance()
    }

    pub fn is_near_field(&self, distance: f64) -> bool {
        distance < self.rayleigh_distance()
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }
}

/// Near-field response evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArvMode {
    /// Exact spherical distance.
    Exact,
    /// Second-order (Fresnel) distance expansion.
    Fresnel,
}

/// Far-field ULA response `exp(-j 2π/λ (n-1) d φ)`.
pub fn far_field_arv(n_elems: usize, varphi: f64, d: f64, lambda: f64) -> Result<ComplexVector> {
    if !(varphi.abs() <= 1.0) {
        return Err(Error::param("varphi", format!("|{varphi}| > 1")));
    }
    Ok(linear_phase_arv(n_elems, varphi, d, lambda))
}

pub(crate) fn linear_phase_arv(n_elems: usize, varphi: f64, d: f64, lambda: f64) -> ComplexVector {
    let kd = 2.0 * PI / lambda * d;
    ComplexVector::from_fn(n_elems, |i, _| {
        Complex64::from_polar(1.0, -kd * i as f64 * varphi)
    })
}

/// Near-field ULA response `exp(j 2π/λ (r_n - r))`.
///
/// The exponent sign is chosen so that the response tends to
/// [`far_field_arv`] at the same cosine as `r` grows.
pub fn near_field_arv(
    n_elems: usize,
    vartheta: f64,
    r: f64,
    d: f64,
    lambda: f64,
    mode: ArvMode,
) -> Result<ComplexVector> {
    if !(r > 0.0) {
        return Err(Error::param("r", format!("range must be positive, got {r}")));
    }
    if !(vartheta.abs() <= 1.0) {
        return Err(Error::param("vartheta", format!("|{vartheta}| > 1")));
    }
    let k = 2.0 * PI / lambda;
    Ok(ComplexVector::from_fn(n_elems, |i, _| {
        let delta = i as f64 * d;
        let excess = match mode {
            // r_n - r written without cancellation.
            ArvMode::Exact => {
                let num = delta * delta - 2.0 * r * delta * vartheta;
                let rn = (r * r + num).max(0.0).sqrt();
                num / (rn + r)
            }
            ArvMode::Fresnel => {
                -delta * vartheta + delta * delta * (1.0 - vartheta * vartheta) / (2.0 * r)
            }
        };
        Complex64::from_polar(1.0, k * excess)
    }))
}

/// Fresnel-form response at a generalized cosine (`|angle| <= 2` after
/// compression) with `range = inf` meaning no quadratic term.
pub(crate) fn fresnel_arv(n_elems: usize, angle: f64, range: f64, d: f64, lambda: f64) -> ComplexVector {
    let k = 2.0 * PI / lambda;
    let curv = if range.is_finite() {
        (1.0 - angle * angle) / (2.0 * range)
    } else {
        0.0
    };
    ComplexVector::from_fn(n_elems, |i, _| {
        let delta = i as f64 * d;
        Complex64::from_polar(1.0, k * (-delta * angle + delta * delta * curv))
    })
}

/// One user–RIS path: spatial angle cosine, reference distance and gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserPath {
    pub angle: f64,
    pub range: f64,
    pub gain: Complex64,
}

/// One RIS–BS path: BS arrival cosine, RIS departure cosine and gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisBsPath {
    pub aoa_bs: f64,
    pub aod_ris: f64,
    pub gain: Complex64,
}

/// Ground-truth propagation paths. `user_paths[0]` is the user LoS path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub user_paths: Vec<UserPath>,
    pub rb_paths: Vec<RisBsPath>,
}

impl PathSet {
    pub fn l_u(&self) -> usize {
        self.user_paths.len()
    }

    pub fn l_rb(&self) -> usize {
        self.rb_paths.len()
    }
}

/// Per-path visibility of the RIS, at subarray and element granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleRegion {
    /// `K x L_U` subarray visibility.
    pub phi_sub: DMatrix<bool>,
    elems_per_sub: usize,
}

impl VisibleRegion {
    pub fn from_subarrays(phi_sub: DMatrix<bool>, elems_per_sub: usize) -> Self {
        VisibleRegion {
            phi_sub,
            elems_per_sub,
        }
    }

    pub fn all_visible(k: usize, l_u: usize, elems_per_sub: usize) -> Self {
        Self::from_subarrays(DMatrix::from_element(k, l_u, true), elems_per_sub)
    }

    pub fn n_elements(&self) -> usize {
        self.phi_sub.nrows() * self.elems_per_sub
    }

    /// Element-level `N x L_U` matrix, each subarray row replicated.
    pub fn phi(&self) -> DMatrix<bool> {
        let e = self.elems_per_sub;
        DMatrix::from_fn(self.n_elements(), self.phi_sub.ncols(), |n, l| {
            self.phi_sub[(n / e, l)]
        })
    }

    pub fn element_mask(&self, path: usize) -> Vec<f64> {
        let e = self.elems_per_sub;
        (0..self.n_elements())
            .map(|n| if self.phi_sub[(n / e, path)] { 1.0 } else { 0.0 })
            .collect()
    }

    /// Fraction of visible elements over all paths.
    pub fn visible_fraction(&self) -> f64 {
        let total = self.phi_sub.len() as f64;
        self.phi_sub.iter().filter(|&&v| v).count() as f64 / total
    }
}

const VR_RESAMPLE_ATTEMPTS: usize = 50;

/// Draw subarray VRs as independent two-state Markov chains along the RIS.
///
/// The chain starts in the visible state with probability
/// `p01 / (p01 + p10)`, its stationary distribution, so every subarray is
/// marginally visible with that probability. `p10 = 0` gives the absorbing
/// fully-visible case.
pub fn sample_vr(
    geom: &SystemGeometry,
    l_u: usize,
    p01: f64,
    p10: f64,
    rng: &mut impl Rng,
) -> Result<VisibleRegion> {
    if !(p01 > 0.0 && p01 < 1.0) {
        return Err(Error::param("p01", format!("{p01} not in (0, 1)")));
    }
    if !(0.0..1.0).contains(&p10) {
        return Err(Error::param("p10", format!("{p10} not in [0, 1)")));
    }
    let lambda_vr = p01 / (p01 + p10);
    let k = geom.k;
    let mut phi_sub = DMatrix::from_element(k, l_u, false);
    for l in 0..l_u {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut state = rng.random_bool(lambda_vr);
            phi_sub[(0, l)] = state;
            for kk in 1..k {
                state = if state {
                    !rng.random_bool(p10)
                } else {
                    rng.random_bool(p01)
                };
                phi_sub[(kk, l)] = state;
            }
            if phi_sub.column(l).iter().any(|&v| v) {
                break;
            }
            if attempts >= VR_RESAMPLE_ATTEMPTS {
                return Err(Error::BlockedPath { attempts });
            }
        }
    }
    Ok(VisibleRegion::from_subarrays(
        phi_sub,
        geom.elements_per_subarray(),
    ))
}

/// Large-scale fading `PL = α + 10 β log10(d) + ξ` in dB, `ξ ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    pub alpha: f64,
    pub beta: f64,
    pub sigma_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            alpha: 61.4,
            beta: 2.0,
            sigma_db: 5.8,
        }
    }
}

impl PathLossModel {
    /// Amplitude factor `10^(-PL/20)` for one shadowing draw.
    pub fn amplitude(&self, distance: f64, rng: &mut impl Rng) -> f64 {
        let shadow = if self.sigma_db > 0.0 {
            Normal::new(0.0, self.sigma_db)
                .expect("finite sigma")
                .sample(rng)
        } else {
            0.0
        };
        let pl = self.alpha + 10.0 * self.beta * distance.log10() + shadow;
        10f64.powf(-pl / 20.0)
    }
}

/// Randomization settings for path draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub l_u: usize,
    pub l_rb: usize,
    pub path_loss: PathLossModel,
    /// Extra power of the user LoS path in dB.
    pub los_boost_db: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            l_u: 3,
            l_rb: 3,
            path_loss: PathLossModel::default(),
            los_boost_db: 10.0,
        }
    }
}

pub fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draw angles uniformly in the cosine domain, distances uniformly over the
/// user range, and circular Gaussian gains scaled by path loss.
pub fn sample_paths(
    geom: &SystemGeometry,
    cfg: &PathConfig,
    rng: &mut impl Rng,
) -> Result<PathSet> {
    if cfg.l_u == 0 || cfg.l_rb == 0 {
        return Err(Error::param("paths", "need at least one path per link"));
    }
    let [lo, hi] = geom.user_range;
    let los = 10f64.powf(cfg.los_boost_db / 20.0);
    let user_paths = (0..cfg.l_u)
        .map(|l| {
            let angle = rng.random_range(-1.0..=1.0);
            let range = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let boost = if l == 0 { los } else { 1.0 };
            let gain = complex_normal(rng) * boost * cfg.path_loss.amplitude(range, rng);
            UserPath { angle, range, gain }
        })
        .collect();
    let bs_dist = geom.bs_distance();
    let rb_paths = (0..cfg.l_rb)
        .map(|_| {
            let aoa_bs = rng.random_range(-1.0..=1.0);
            let aod_ris = rng.random_range(-1.0..=1.0);
            let gain = complex_normal(rng) * cfg.path_loss.amplitude(bs_dist, rng);
            RisBsPath {
                aoa_bs,
                aod_ris,
                gain,
            }
        })
        .collect();
    Ok(PathSet {
        user_paths,
        rb_paths,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// User–RIS channel, length N.
    pub h_u: ComplexVector,
    /// RIS–BS channel, M x N.
    pub h_rb: ComplexMatrix,
    /// `vec(H diag(h_u))`, length M·N.
    pub h_cascaded: ComplexVector,
    pub paths: PathSet,
    pub vr: VisibleRegion,
}

impl ChannelRealization {
    /// `H diag(h_u)` as an M x N matrix.
    pub fn cascaded_matrix(&self) -> ComplexMatrix {
        let mut c = self.h_rb.clone();
        for (j, mut col) in c.column_iter_mut().enumerate() {
            col *= self.h_u[j];
        }
        c
    }
}

/// User–RIS response of one path, exact spherical model.
pub fn user_path_response(geom: &SystemGeometry, path: &UserPath) -> Result<ComplexVector> {
    near_field_arv(
        geom.n,
        path.angle,
        path.range,
        geom.spacing,
        geom.wavelength,
        ArvMode::Exact,
    )
}

/// Build `h_u`, `H` and the cascaded channel from a path set and VRs.
pub fn synthesize_channel(
    geom: &SystemGeometry,
    paths: &PathSet,
    vr: &VisibleRegion,
) -> Result<ChannelRealization> {
    if paths.l_u() == 0 || paths.l_rb() == 0 {
        return Err(Error::param("paths", "degenerate path set"));
    }
    if vr.phi_sub.ncols() != paths.l_u() || vr.n_elements() != geom.n {
        return Err(Error::dims(
            "synthesize_channel",
            format!(
                "VR is {}x{} (elements {}), paths L_U = {}, N = {}",
                vr.phi_sub.nrows(),
                vr.phi_sub.ncols(),
                vr.n_elements(),
                paths.l_u(),
                geom.n
            ),
        ));
    }
    let (d, lambda) = (geom.spacing, geom.wavelength);
    let mut h_u = ComplexVector::zeros(geom.n);
    for (l, p) in paths.user_paths.iter().enumerate() {
        let a = user_path_response(geom, p)?;
        let mask = vr.element_mask(l);
        for n in 0..geom.n {
            h_u[n] += p.gain * a[n] * mask[n];
        }
    }
    let mut h_rb = ComplexMatrix::zeros(geom.m, geom.n);
    for p in &paths.rb_paths {
        let a_b = far_field_arv(geom.m, p.aoa_bs, d, lambda)?;
        let a_r = far_field_arv(geom.n, p.aod_ris, d, lambda)?;
        h_rb += (a_b * a_r.adjoint()) * p.gain;
    }
    let mut ch = ChannelRealization {
        h_u,
        h_rb,
        h_cascaded: ComplexVector::zeros(0),
        paths: paths.clone(),
        vr: vr.clone(),
    };
    ch.h_cascaded = vec(&ch.cascaded_matrix());
    Ok(ch)
}

/// Stacked pilot observations `y_p = H diag(η_p) h_u + n_p`, `p = 1..P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub pilots: usize,
    /// `N x P` unit-modulus RIS reflection coefficients.
    pub ris_phases: ComplexMatrix,
    /// Length `M·P`; entry `p·M + m` is antenna `m` at pilot `p`.
    pub y: ComplexVector,
    /// Per-entry complex noise variance.
    pub noise_var: f64,
}

impl PilotObservation {
    pub fn bs_antennas(&self) -> usize {
        self.y.len() / self.pilots.max(1)
    }

    /// Reorder pilots; `order[i]` is the source pilot placed at position `i`.
    pub fn permuted(&self, order: &[usize]) -> PilotObservation {
        let m = self.bs_antennas();
        let phases = ComplexMatrix::from_fn(self.ris_phases.nrows(), order.len(), |n, p| {
            self.ris_phases[(n, order[p])]
        });
        let y = ComplexVector::from_fn(m * order.len(), |i, _| self.y[order[i / m] * m + i % m]);
        PilotObservation {
            pilots: order.len(),
            ris_phases: phases,
            y,
            noise_var: self.noise_var,
        }
    }
}

pub fn random_ris_phases(n: usize, pilots: usize, rng: &mut impl Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, pilots, |_, _| {
        Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
    })
}

/// Noise variance giving `E‖h̃‖² / (M P σ²) = SNR` for random unit-modulus
/// pilots, where `E‖h_p‖² = ‖h_c‖²`.
pub fn noise_variance_for(ch: &ChannelRealization, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    let m = ch.h_rb.nrows() as f64;
    ch.h_cascaded.norm_squared() / (m * 10f64.powf(snr_db / 10.0))
}

/// Noiseless stacked channel `[h_1; …; h_P]` for the given phases.
pub fn noiseless_observation(ch: &ChannelRealization, ris_phases: &ComplexMatrix) -> ComplexVector {
    vec(&(ch.cascaded_matrix() * ris_phases))
}

/// Draw random pilots and noisy observations at the given SNR.
pub fn observe(
    ch: &ChannelRealization,
    pilots: usize,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<PilotObservation> {
    if pilots == 0 {
        return Err(Error::param("pilots", "need at least one pilot"));
    }
    let phases = random_ris_phases(ch.h_u.len(), pilots, rng);
    Ok(observe_with_phases(ch, phases, snr_db, rng))
}

pub fn observe_with_phases(
    ch: &ChannelRealization,
    ris_phases: ComplexMatrix,
    snr_db: f64,
    rng: &mut impl Rng,
) -> PilotObservation {
    let noise_var = noise_variance_for(ch, snr_db);
    let mut y = noiseless_observation(ch, &ris_phases);
    if noise_var > 0.0 {
        let sd = noise_var.sqrt();
        for v in y.iter_mut() {
            *v += complex_normal(rng) * sd;
        }
    }
    PilotObservation {
        pilots: ris_phases.ncols(),
        ris_phases,
        y,
        noise_var,
    }
}

/// Write a realization as a `key = value` geometry header followed by
/// `section,row,col,re,im` rows for `h_u`, `H` and `h_c`.
pub fn write_channel_csv(
    geom: &SystemGeometry,
    ch: &ChannelRealization,
    out: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(out, "# m = {}", geom.m)?;
    writeln!(out, "# n = {}", geom.n)?;
    writeln!(out, "# k = {}", geom.k)?;
    writeln!(out, "# spacing = {}", geom.spacing)?;
    writeln!(out, "# wavelength = {}", geom.wavelength)?;
    writeln!(out, "# l_u = {}", ch.paths.l_u())?;
    writeln!(out, "# l_rb = {}", ch.paths.l_rb())?;
    writeln!(out, "section,row,col,re,im")?;
    for (i, z) in ch.h_u.iter().enumerate() {
        writeln!(out, "h_u,{i},0,{},{}", z.re, z.im)?;
    }
    for j in 0..ch.h_rb.ncols() {
        for i in 0..ch.h_rb.nrows() {
            let z = ch.h_rb[(i, j)];
            writeln!(out, "H,{i},{j},{},{}", z.re, z.im)?;
        }
    }
    for (i, z) in ch.h_cascaded.iter().enumerate() {
        writeln!(out, "h_c,{i},0,{},{}", z.re, z.im)?;
    }
    Ok(())
}

/// Entries read back from [`write_channel_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDump {
    pub header: Vec<(String, String)>,
    pub h_u: ComplexVector,
    pub h_rb: ComplexMatrix,
    pub h_cascaded: ComplexVector,
}

pub fn read_channel_csv(input: impl BufRead) -> Result<ChannelDump> {
    let bad = |msg: String| Error::param("channel csv", msg);
    let mut header = Vec::new();
    let mut rows: Vec<(String, usize, usize, Complex64)> = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if line.starts_with("section") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("malformed row `{line}`")));
        }
        let parse_u = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
        rows.push((
            f[0].to_string(),
            parse_u(f[1])?,
            parse_u(f[2])?,
            Complex64::new(parse_f(f[3])?, parse_f(f[4])?),
        ));
    }
    let get = |key: &str| -> Result<usize> {
        header
            .iter()
            .find(|(k, _)| k == key)
            .ok_or_else(|| bad(format!("missing header `{key}`")))?
            .1
            .parse()
            .map_err(|_| bad(format!("bad header `{key}`")))
    };
    let (m, n) = (get("m")?, get("n")?);
    let mut h_u = ComplexVector::from_element(n, ZERO);
    let mut h_rb = ComplexMatrix::from_element(m, n, ZERO);
    let mut h_c = ComplexVector::from_element(m * n, ZERO);
    for (sec, i, j, z) in rows {
        match sec.as_str() {
            "h_u" if i < n => h_u[i] = z,
            "H" if i < m && j < n => h_rb[(i, j)] = z,
            "h_c" if i < m * n => h_c[i] = z,
            _ => return Err(bad(format!("unexpected entry {sec}[{i},{j}]"))),
        }
    }
    Ok(ChannelDump {
        header,
        h_u,
        h_rb,
        h_cascaded: h_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wrap(x: f64) -> f64 {
        (x + PI).rem_euclid(2.0 * PI) - PI
    }

    #[test]
    fn far_field_special_angles() {
        let a = far_field_arv(6, 0.0, 0.5, 1.0).unwrap();
        assert!(a.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let a = far_field_arv(5, 1.0, 0.5, 1.0).unwrap();
        for (i, z) in a.iter().enumerate() {
            let expect = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert!((z - Complex64::new(expect, 0.0)).norm() < 1e-12);
        }
        assert!(far_field_arv(4, 1.01, 0.5, 1.0).is_err());
    }

    #[test]
    fn far_field_phase_is_linear() {
        let a = far_field_arv(16, 0.37, 0.5, 1.0).unwrap();
        assert_eq!(a[0], Complex64::new(1.0, 0.0));
        for (i, z) in a.iter().enumerate() {
            let expect = wrap(-PI * i as f64 * 0.37);
            assert!(wrap(z.arg() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn near_field_reference_element_is_one() {
        for mode in [ArvMode::Exact, ArvMode::Fresnel] {
            let a = near_field_arv(8, 0.4, 3.0, 0.005, 0.01, mode).unwrap();
            assert_eq!(a[0], Complex64::new(1.0, 0.0));
        }
        assert!(near_field_arv(8, 0.4, 0.0, 0.005, 0.01, ArvMode::Exact).is_err());
        assert!(near_field_arv(8, 1.4, 1.0, 0.005, 0.01, ArvMode::Exact).is_err());
    }

    #[test]
    fn fresnel_tends_to_far_field() {
        let g = SystemGeometry::full_scale();
        let r = 1e6 * g.rayleigh_distance();
        let nf = near_field_arv(g.n, 0.3, r, g.spacing, g.wavelength, ArvMode::Fresnel).unwrap();
        let ff = far_field_arv(g.n, 0.3, g.spacing, g.wavelength).unwrap();
        for (a, b) in nf.iter().zip(ff.iter()) {
            assert!(wrap(a.arg() - b.arg()).abs() < 1e-3);
        }
    }

    #[test]
    fn fresnel_error_within_third_order_bound() {
        let g = SystemGeometry::full_scale();
        let (r, th) = (15.0, 0.3);
        let ex = near_field_arv(g.n, th, r, g.spacing, g.wavelength, ArvMode::Exact).unwrap();
        let fr = near_field_arv(g.n, th, r, g.spacing, g.wavelength, ArvMode::Fresnel).unwrap();
        let k = g.wavenumber();
        let mut worst: f64 = 0.0;
        for i in 0..g.n {
            let delta = i as f64 * g.spacing;
            let err = wrap(ex[i].arg() - fr[i].arg()).abs();
            // cubic Taylor term plus a quartic remainder bound
            let bound = k
                * (delta.powi(3) * th.abs() * (1.0 - th * th) / (2.0 * r * r)
                    + delta.powi(4) / (2.0 * r.powi(3)));
            assert!(err <= bound + 1e-12, "element {i}: {err} > {bound}");
            worst = worst.max(err);
        }
        // Aperture-edge discrepancy at 15 m is about a tenth of a radian.
        assert!(worst > 0.05 && worst < 0.2, "{worst}");
    }

    #[test]
    fn full_scale_geometry_distances() {
        let g = SystemGeometry::full_scale();
        assert!((g.rayleigh_distance() - 87.5).abs() / 87.5 < 0.02);
        assert!((g.bs_distance() - 95.2).abs() / 95.2 < 0.02);
        assert!(g.is_far_field(g.bs_distance()));
        assert!(g.is_near_field(10.0) && g.is_near_field(20.0));
        assert!(SystemGeometry::new(8, 30, 4, 28e9).is_err());
    }

    #[test]
    fn vr_absorbing_visible_state() {
        let g = SystemGeometry::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let vr = sample_vr(&g, 3, 0.35, 0.0, &mut rng).unwrap();
            assert!(vr.phi_sub.iter().all(|&v| v));
        }
    }

    #[test]
    fn vr_replication_and_visibility() {
        let g = SystemGeometry::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let vr = sample_vr(&g, 3, 0.35, 0.05, &mut rng).unwrap();
            let phi = vr.phi();
            let e = g.elements_per_subarray();
            for l in 0..3 {
                assert!(phi.column(l).iter().any(|&v| v));
                for n in 0..g.n {
                    assert_eq!(phi[(n, l)], phi[((n / e) * e, l)]);
                }
            }
        }
    }

    #[test]
    fn vr_stationary_mean() {
        let g = SystemGeometry::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (p01, p10) = (0.35, 0.05);
        let draws = 25_000; // 10^5 subarray samples
        let mut visible = 0usize;
        let mut total = 0usize;
        for _ in 0..draws {
            let vr = sample_vr(&g, 1, p01, p10, &mut rng).unwrap();
            visible += vr.phi_sub.iter().filter(|&&v| v).count();
            total += g.k;
        }
        // Resampling conditions on "not all blocked", which carries zero
        // visible subarrays, so the raw mean is λ / (1 - P(all blocked)).
        let frac = visible as f64 / total as f64;
        let lambda = p01 / (p01 + p10);
        let all_blocked = (1.0 - lambda) * (1.0 - p01).powi(3);
        let corrected = frac * (1.0 - all_blocked);
        assert!((corrected - lambda).abs() < 0.01, "{frac} {corrected}");
    }

    #[test]
    fn vr_invalid_probabilities() {
        let g = SystemGeometry::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        assert!(sample_vr(&g, 1, 0.0, 0.1, &mut rng).is_err());
        assert!(sample_vr(&g, 1, 0.3, 1.0, &mut rng).is_err());
    }

    fn unit_paths() -> PathSet {
        PathSet {
            user_paths: vec![UserPath {
                angle: 0.2,
                range: 12.0,
                gain: Complex64::new(1.0, 0.0),
            }],
            rb_paths: vec![RisBsPath {
                aoa_bs: -0.4,
                aod_ris: 0.6,
                gain: Complex64::new(1.0, 0.0),
            }],
        }
    }

    #[test]
    fn single_path_closed_form() {
        let g = SystemGeometry::desk_scale();
        let paths = unit_paths();
        let vr = VisibleRegion::all_visible(g.k, 1, g.elements_per_subarray());
        let ch = synthesize_channel(&g, &paths, &vr).unwrap();
        let a_b = far_field_arv(g.m, -0.4, g.spacing, g.wavelength).unwrap();
        let a_r = far_field_arv(g.n, 0.6, g.spacing, g.wavelength).unwrap();
        let a_u = user_path_response(&g, &paths.user_paths[0]).unwrap();
        let expect = vec(&(a_b * a_r.adjoint() * ComplexMatrix::from_diagonal(&a_u)));
        assert!((ch.h_cascaded - expect).norm() < 1e-12);
    }

    #[test]
    fn blocked_path_contributes_nothing() {
        let g = SystemGeometry::desk_scale();
        let mut paths = unit_paths();
        paths.user_paths.push(UserPath {
            angle: -0.5,
            range: 15.0,
            gain: Complex64::new(0.3, 0.2),
        });
        let mut phi = DMatrix::from_element(g.k, 2, true);
        phi.column_mut(1).fill(false);
        let vr = VisibleRegion::from_subarrays(phi, g.elements_per_subarray());
        let ch = synthesize_channel(&g, &paths, &vr).unwrap();
        let single = synthesize_channel(
            &g,
            &unit_paths(),
            &VisibleRegion::all_visible(g.k, 1, g.elements_per_subarray()),
        )
        .unwrap();
        assert!((ch.h_u - single.h_u).norm() < 1e-14);
    }

    #[test]
    fn user_channel_matches_element_loop() {
        let g = SystemGeometry::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let paths = sample_paths(&g, &PathConfig::default(), &mut rng).unwrap();
        let vr = sample_vr(&g, 3, 0.35, 0.05, &mut rng).unwrap();
        let ch = synthesize_channel(&g, &paths, &vr).unwrap();
        let k = 2.0 * PI / g.wavelength;
        let phi = vr.phi();
        let scale = ch.h_u.norm();
        for n in 0..g.n {
            let x = n as f64 * g.spacing;
            let mut acc = ZERO;
            for (l, p) in paths.user_paths.iter().enumerate() {
                let pos = [p.range * p.angle, p.range * (1.0 - p.angle * p.angle).sqrt()];
                let rn = (pos[0] - x).hypot(pos[1]);
                if phi[(n, l)] {
                    acc += p.gain * Complex64::from_polar(1.0, k * (rn - p.range));
                }
            }
            assert!((acc - ch.h_u[n]).norm() <= 1e-12 * scale);
        }
        assert!(ch.h_cascaded.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert!(ch.h_cascaded.norm() > 0.0);
    }

    #[test]
    fn degenerate_paths_rejected() {
        let g = SystemGeometry::desk_scale();
        let paths = PathSet {
            user_paths: vec![],
            rb_paths: unit_paths().rb_paths,
        };
        let vr = VisibleRegion::all_visible(g.k, 0, g.elements_per_subarray());
        assert!(synthesize_channel(&g, &paths, &vr).is_err());
    }

    #[test]
    fn noiseless_observation_and_pilot_loop() {
        let g = SystemGeometry::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let paths = sample_paths(&g, &PathConfig::default(), &mut rng).unwrap();
        let vr = sample_vr(&g, 3, 0.35, 0.05, &mut rng).unwrap();
        let ch = synthesize_channel(&g, &paths, &vr).unwrap();
        let obs = observe(&ch, 5, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(obs.noise_var, 0.0);
        assert!(obs.ris_phases.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        for p in 0..5 {
            let eta = obs.ris_phases.column(p).into_owned();
            let hp = &ch.h_rb * ComplexMatrix::from_diagonal(&eta) * &ch.h_u;
            for m in 0..g.m {
                assert!((obs.y[p * g.m + m] - hp[m]).norm() < 1e-12 * hp.norm().max(1e-300));
            }
        }
        assert!(observe(&ch, 0, 10.0, &mut rng).is_err());
    }

    #[test]
    fn empirical_snr_close_to_target() {
        let g = SystemGeometry::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let paths = sample_paths(&g, &PathConfig::default(), &mut rng).unwrap();
        let vr = sample_vr(&g, 3, 0.35, 0.05, &mut rng).unwrap();
        let ch = synthesize_channel(&g, &paths, &vr).unwrap();
        let (mut sig, mut noise) = (0.0, 0.0);
        for _ in 0..1000 {
            let obs = observe(&ch, 4, 10.0, &mut rng).unwrap();
            let clean = noiseless_observation(&ch, &obs.ris_phases);
            sig += clean.norm_squared();
            noise += (&obs.y - clean).norm_squared();
        }
        let snr_db = 10.0 * (sig / noise).log10();
        assert!((snr_db - 10.0).abs() < 0.2, "{snr_db}");
    }

    #[test]
    fn channel_csv_round_trip() {
        let g = SystemGeometry::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let paths = sample_paths(&g, &PathConfig::default(), &mut rng).unwrap();
        let vr = sample_vr(&g, 3, 0.35, 0.05, &mut rng).unwrap();
        let ch = synthesize_channel(&g, &paths, &vr).unwrap();
        let mut buf = Vec::new();
        write_channel_csv(&g, &ch, &mut buf).unwrap();
        let dump = read_channel_csv(buf.as_slice()).unwrap();
        assert_eq!(dump.h_u, ch.h_u);
        assert_eq!(dump.h_rb, ch.h_rb);
        assert_eq!(dump.h_cascaded, ch.h_cascaded);
    }
}
