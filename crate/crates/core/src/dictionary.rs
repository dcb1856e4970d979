//! Far-field and polar-domain dictionaries, the compressed cascaded
//! dictionary and its off-grid perturbations.
//!
//! Far-field grids sit on the midpoint lattice `-1 + (2i + 1)/N`, which
//! makes `F^H F = N I`. Polar grids sit on the integer lattice
//! `-1 + 2i/N_p`, so the difference of a polar and a far-field angle always
//! lands on a midpoint and never on endfire.
//!
//! Ring 0 of every angle is the far-field sentinel (`range = inf`); ring
//! `s >= 1` has range `Z (1 - φ^2) / s` with `Z = N^2 d^2 / (2 β^2 λ)`, so
//! the quadratic phase coefficient `(1 - φ^2) / r` equals `s / Z` for every
//! angle.

use std::io::Write;

use num_complex::Complex64;

use crate::algebra::{ComplexMatrix, ComplexVector};
use crate::error::{Error, Result};
use crate::geometry::{fresnel_arv, linear_phase_arv, SystemGeometry};

const ENDFIRE_GUARD: f64 = 1e-3;

/// Midpoint lattice `-1 + (2i + 1)/n`, `i = 0..n`.
pub fn far_field_angles(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -1.0 + (2 * i + 1) as f64 / n as f64)
        .collect()
}

/// Columns are far-field responses at [`far_field_angles`] of the same size.
pub fn far_field_dictionary(n: usize, d: f64, lambda: f64) -> ComplexMatrix {
    columns_to_matrix(
        n,
        far_field_angles(n)
            .into_iter()
            .map(|a| linear_phase_arv(n, a, d, lambda)),
    )
}

fn columns_to_matrix(rows: usize, cols: impl Iterator<Item = ComplexVector>) -> ComplexMatrix {
    let cols: Vec<ComplexVector> = cols.collect();
    let mut out = ComplexMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Wrap a cosine difference into `[-1, 1)`. The linear phase of a
/// half-wavelength array is 2-periodic in the cosine.
pub fn wrap_angle(a: f64) -> f64 {
    (a + 1.0).rem_euclid(2.0) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPoint {
    pub angle: f64,
    /// Meters; `f64::INFINITY` for the far-field ring.
    pub range: f64,
    /// 0 for the far-field ring, `s` otherwise.
    pub ring: usize,
}

/// `N^2 d^2 / (2 β^2 λ)`, the range of ring 1 at broadside.
pub fn ring_scale(geom: &SystemGeometry, beta: f64) -> f64 {
    let aperture = geom.n as f64 * geom.spacing;
    aperture * aperture / (2.0 * beta * beta * geom.wavelength)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub points: Vec<PolarPoint>,
    pub n_angles: usize,
    /// Rings per angle including the far-field ring.
    pub n_rings: usize,
    pub beta: f64,
}

/// Integer-lattice angles with `n_rings - 1` finite rings plus the
/// far-field ring; near endfire only the far-field ring is kept.
pub fn build_polar_grid(
    geom: &SystemGeometry,
    n_angles: usize,
    n_rings: usize,
    beta: f64,
) -> Result<PolarGrid> {
    if !(beta > 0.0) {
        return Err(Error::param("beta", format!("must be positive, got {beta}")));
    }
    if n_angles == 0 || n_rings == 0 {
        return Err(Error::param("polar grid", "need at least one angle and one ring"));
    }
    let z = ring_scale(geom, beta);
    let mut points = Vec::new();
    for i in 0..n_angles {
        let angle = -1.0 + 2.0 * i as f64 / n_angles as f64;
        points.push(PolarPoint {
            angle,
            range: f64::INFINITY,
            ring: 0,
        });
        if angle.abs() > 1.0 - ENDFIRE_GUARD {
            continue;
        }
        for s in 1..n_rings {
            points.push(PolarPoint {
                angle,
                range: z * (1.0 - angle * angle) / s as f64,
                ring: s,
            });
        }
    }
    Ok(PolarGrid {
        points,
        n_angles,
        n_rings,
        beta,
    })
}

/// Fresnel-form responses at the given grid points.
pub fn polar_dictionary(geom: &SystemGeometry, points: &[PolarPoint]) -> ComplexMatrix {
    columns_to_matrix(
        geom.n,
        points
            .iter()
            .map(|p| fresnel_arv(geom.n, p.angle, p.range, geom.spacing, geom.wavelength)),
    )
}

/// Grid of the compressed cascaded dictionary: midpoint angles in
/// `[-1, 1)` times `n_rings` curvature levels, column `a * n_rings + ring`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedGrid {
    pub points: Vec<PolarPoint>,
    pub n_angles: usize,
    pub n_rings: usize,
    /// Ring scale `Z`.
    pub scale: f64,
}

impl CompressedGrid {
    pub fn new(geom: &SystemGeometry, n_angles: usize, n_rings: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::param("beta", format!("must be positive, got {beta}")));
        }
        if n_angles == 0 || n_rings == 0 {
            return Err(Error::param("compressed grid", "need at least one angle and one ring"));
        }
        let scale = ring_scale(geom, beta);
        let rayleigh = geom.rayleigh_distance();
        let mut points = Vec::with_capacity(n_angles * n_rings);
        for angle in far_field_angles(n_angles) {
            for ring in 0..n_rings {
                let mut range = if ring == 0 {
                    f64::INFINITY
                } else {
                    scale * (1.0 - angle * angle) / ring as f64
                };
                if range > rayleigh {
                    range = f64::INFINITY;
                }
                points.push(PolarPoint { angle, range, ring });
            }
        }
        Ok(CompressedGrid {
            points,
            n_angles,
            n_rings,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn angle_cell(&self) -> f64 {
        2.0 / self.n_angles as f64
    }

    /// Nearest column for a generalized cosine and quadratic coefficient
    /// `(1 - φ^2) / r` (0 for far field).
    pub fn nearest(&self, angle: f64, curvature: f64) -> usize {
        let w = wrap_angle(angle);
        let a = (((w + 1.0) / self.angle_cell()).floor() as usize).min(self.n_angles - 1);
        let ring = (curvature * self.scale).round().max(0.0) as usize;
        a * self.n_rings + ring.min(self.n_rings - 1)
    }

    /// Ring spacing of column `q` in inverse range, `1 / (Z (1 - φ^2))`.
    pub fn inverse_range_cell(&self, q: usize) -> f64 {
        let a = self.points[q].angle;
        1.0 / (self.scale * (1.0 - a * a))
    }

    /// Admissible inverse-range offsets `[lo, hi]` for column `q`: half a
    /// ring either way, never past the far field.
    pub fn range_bounds(&self, q: usize) -> (f64, f64) {
        let cell = self.inverse_range_cell(q);
        let g0 = 1.0 / self.points[q].range;
        ((g0 - 0.5 * cell).max(0.0) - g0, 0.5 * cell)
    }
}

/// Image of one (polar column, far-field column) pair under compression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedPair {
    pub polar_col: usize,
    pub far_col: usize,
    /// `ϑ - φ` before wrapping, in `(-2, 2)`.
    pub angle_bar: f64,
    /// `r (1 - φ̄^2) / (1 - ϑ^2)` before wrapping.
    pub range_bar: f64,
    /// Nearest compressed column.
    pub column: usize,
}

/// Map every product of a polar column and a conjugated far-field column to
/// the compressed grid. Element `i` of `w_n̄ ⊙ conj(f_n)` equals the Fresnel
/// response at `(ϑ - φ, r (1 - φ̄^2) / (1 - ϑ^2))`.
pub fn compress_dictionary(
    polar: &[PolarPoint],
    far_angles: &[f64],
    grid: &CompressedGrid,
) -> Result<Vec<MappedPair>> {
    let mut out = Vec::with_capacity(polar.len() * far_angles.len());
    for (pc, p) in polar.iter().enumerate() {
        let curvature = if p.range.is_finite() {
            let denom = 1.0 - p.angle * p.angle;
            if denom <= 0.0 {
                return Err(Error::param(
                    "polar grid",
                    format!("finite range at endfire angle {}", p.angle),
                ));
            }
            denom / p.range
        } else {
            0.0
        };
        for (fc, &phi) in far_angles.iter().enumerate() {
            let angle_bar = p.angle - phi;
            let range_bar = if curvature > 0.0 {
                (1.0 - angle_bar * angle_bar) / curvature
            } else {
                f64::INFINITY
            };
            out.push(MappedPair {
                polar_col: pc,
                far_col: fc,
                angle_bar,
                range_bar,
                column: grid.nearest(angle_bar, curvature),
            });
        }
    }
    Ok(out)
}

/// Off-grid offsets: BS angles per row of `X`, compressed angle and
/// inverse compressed range `1/r̄` per column. Acting on `1/r̄` lets far-ring
/// columns pick up curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct OffGrid {
    pub delta_vartheta: Vec<f64>,
    pub delta_varphi_bar: Vec<f64>,
    pub delta_r_bar: Vec<f64>,
}

impl OffGrid {
    pub fn zeros(m: usize, q_bar: usize) -> Self {
        OffGrid {
            delta_vartheta: vec![0.0; m],
            delta_varphi_bar: vec![0.0; q_bar],
            delta_r_bar: vec![0.0; q_bar],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.delta_vartheta
            .iter()
            .chain(&self.delta_varphi_bar)
            .chain(&self.delta_r_bar)
            .all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffGridParam {
    /// `Δϑ_m`, column `m` of `F_M`.
    AngleBs,
    /// `Δφ̄_q`, column `q` of `Q`.
    AngleRis,
    /// `Δr̄_q` (inverse range), column `q` of `Q`.
    RangeRis,
}

/// BS far-field dictionary and the compressed cascaded dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionarySet {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub spacing: f64,
    pub wavelength: f64,
    pub bs_angles: Vec<f64>,
    pub grid: CompressedGrid,
    pub f_m: ComplexMatrix,
    pub q: ComplexMatrix,
}

impl DictionarySet {
    pub fn new(geom: &SystemGeometry, n_angles: usize, n_rings: usize, beta: f64) -> Result<Self> {
        geom.validate()?;
        let grid = CompressedGrid::new(geom, n_angles, n_rings, beta)?;
        let q = polar_dictionary(geom, &grid.points);
        Ok(DictionarySet {
            m: geom.m,
            n: geom.n,
            k: geom.k,
            spacing: geom.spacing,
            wavelength: geom.wavelength,
            bs_angles: far_field_angles(geom.m),
            f_m: far_field_dictionary(geom.m, geom.spacing, geom.wavelength),
            q,
            grid,
        })
    }

    /// `N` angles and two curvature levels, giving `Q̄ = 2N`.
    pub fn with_defaults(geom: &SystemGeometry) -> Result<Self> {
        Self::new(geom, geom.n, 2, 1.2)
    }

    /// `Q̄ = 2N` columns. The near ring is kept only when it lies at or
    /// beyond the closest user; otherwise every column is a far-field angle
    /// on a twice-oversampled lattice.
    pub fn for_user_range(geom: &SystemGeometry) -> Result<Self> {
        if ring_scale(geom, 1.2) >= geom.user_range[0] {
            Self::new(geom, geom.n, 2, 1.2)
        } else {
            Self::new(geom, 2 * geom.n, 1, 1.2)
        }
    }

    pub fn q_bar(&self) -> usize {
        self.grid.len()
    }

    pub fn elements_per_subarray(&self) -> usize {
        self.n / self.k
    }

    pub fn bs_cell(&self) -> f64 {
        2.0 / self.m as f64
    }

    fn check_offgrid(&self, off: &OffGrid) -> Result<()> {
        if off.delta_vartheta.len() != self.m
            || off.delta_varphi_bar.len() != self.q_bar()
            || off.delta_r_bar.len() != self.q_bar()
        {
            return Err(Error::dims(
                "off-grid set",
                format!(
                    "expected {} / {} / {} offsets, got {} / {} / {}",
                    self.m,
                    self.q_bar(),
                    self.q_bar(),
                    off.delta_vartheta.len(),
                    off.delta_varphi_bar.len(),
                    off.delta_r_bar.len()
                ),
            ));
        }
        Ok(())
    }

    /// Perturbed BS angle of row `m`.
    pub fn bs_angle(&self, off: &OffGrid, m: usize) -> Result<f64> {
        let a = self.bs_angles[m] + off.delta_vartheta[m];
        if !(a.abs() <= 1.0) {
            return Err(Error::param("delta_vartheta", format!("angle {a} leaves [-1, 1]")));
        }
        Ok(a)
    }

    /// Perturbed compressed-grid point of column `q`.
    pub fn ris_point(&self, off: &OffGrid, q: usize) -> Result<(f64, f64)> {
        let p = self.grid.points[q];
        let angle = p.angle + off.delta_varphi_bar[q];
        if !(angle.abs() <= 2.0) {
            return Err(Error::param("delta_varphi_bar", format!("angle {angle} leaves [-2, 2]")));
        }
        let inv = 1.0 / p.range + off.delta_r_bar[q];
        if !(inv >= 0.0) {
            return Err(Error::param("delta_r_bar", format!("inverse range {inv} negative")));
        }
        Ok((angle, 1.0 / inv))
    }

    pub fn fm_column(&self, off: &OffGrid, m: usize) -> Result<ComplexVector> {
        let a = self.bs_angle(off, m)?;
        Ok(linear_phase_arv(self.m, a, self.spacing, self.wavelength))
    }

    pub fn q_column(&self, off: &OffGrid, q: usize) -> Result<ComplexVector> {
        let (a, r) = self.ris_point(off, q)?;
        Ok(fresnel_arv(self.n, a, r, self.spacing, self.wavelength))
    }

    /// `F_M(Δϑ)`; columns without an offset are copied from the base.
    pub fn perturbed_fm(&self, off: &OffGrid) -> Result<ComplexMatrix> {
        self.check_offgrid(off)?;
        let mut f = self.f_m.clone();
        for m in 0..self.m {
            if off.delta_vartheta[m] != 0.0 {
                f.set_column(m, &self.fm_column(off, m)?);
            }
        }
        Ok(f)
    }

    /// `Q(Δφ̄, Δr̄)`; columns without an offset are copied from the base.
    pub fn perturbed_q(&self, off: &OffGrid) -> Result<ComplexMatrix> {
        self.check_offgrid(off)?;
        let mut q = self.q.clone();
        for j in 0..self.q_bar() {
            if off.delta_varphi_bar[j] != 0.0 || off.delta_r_bar[j] != 0.0 {
                q.set_column(j, &self.q_column(off, j)?);
            }
        }
        Ok(q)
    }

    /// Derivative of a perturbed column with respect to its offset.
    pub fn derivative(&self, off: &OffGrid, which: OffGridParam, index: usize) -> Result<ComplexVector> {
        self.check_offgrid(off)?;
        let k = 2.0 * std::f64::consts::PI / self.wavelength;
        let d = self.spacing;
        match which {
            OffGridParam::AngleBs => {
                let col = self.fm_column(off, index)?;
                Ok(ComplexVector::from_fn(self.m, |i, _| {
                    col[i] * Complex64::new(0.0, -k * i as f64 * d)
                }))
            }
            OffGridParam::AngleRis | OffGridParam::RangeRis => {
                let (a, r) = self.ris_point(off, index)?;
                let col = fresnel_arv(self.n, a, r, d, self.wavelength);
                Ok(ComplexVector::from_fn(self.n, |i, _| {
                    let delta = i as f64 * d;
                    let dphase = match (which, r.is_finite()) {
                        (OffGridParam::AngleRis, true) => -delta - delta * delta * a / r,
                        (OffGridParam::AngleRis, false) => -delta,
                        _ => delta * delta * (1.0 - a * a) / 2.0,
                    };
                    col[i] * Complex64::new(0.0, k * dphase)
                }))
            }
        }
    }
}

/// Dump grid points as `angle,range,ring` rows.
pub fn write_grid_csv(points: &[PolarPoint], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "angle,range,ring")?;
    for p in points {
        writeln!(out, "{},{},{}", p.angle, p.range, p.ring)?;
    }
    Ok(())
}
