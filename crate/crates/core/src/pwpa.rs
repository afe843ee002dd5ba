//! Plane-wave-pump spectra: Bogoliubov gains, the PDC spectrum, the biphoton
//! amplitude, the SFG kernel, and the coherent and incoherent SFG components.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispersion::{omega_of, Mode};
use crate::fft::self_convolve;
use crate::phasematch::{PhaseMatchContext, PhaseMatchError};
use crate::spectrum::{Axis, AxisKind, Normalization, Spectrum2D, Spectrum3D, SpectrumError};

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PwpaError {
    #[error(transparent)]
    PhaseMatch(#[from] PhaseMatchError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(
        "grid under-resolved along {axis}: spacing {spacing:.4e} exceeds a quarter of the narrowest scale {scale:.4e} ({which})"
    )]
    UnderResolved {
        axis: &'static str,
        spacing: f64,
        scale: f64,
        which: &'static str,
    },
    #[error("invalid grid: {0}")]
    Grid(String),
}

/// Bogoliubov coefficients of one mode: `b(w) = U a(w) + V a†(−w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPair {
    pub u: Complex64,
    pub v: Complex64,
}

fn sinhc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        1.0 + z * z / 6.0
    } else {
        z.sinh() / z
    }
}

/// `Γl_c = √(g² − x²/4)` on the principal branch: positive real inside the
/// gain band, positive imaginary outside it.
fn gamma_l(g: f64, x: f64) -> Complex64 {
    Complex64::new(g * g - x * x / 4.0, 0.0).sqrt()
}

/// Gains for scaled mismatch `x = ΔPDC·l_c` and common phase `phase`.
pub fn gain_pair(x: f64, g: f64, phase: f64) -> GainPair {
    let gl = gamma_l(g, x);
    let e = Complex64::from_polar(1.0, phase);
    let sc = sinhc(gl);
    let u = e * (gl.cosh() + Complex64::i() * (x / 2.0) * sc);
    let v = e * g * sc;
    GainPair { u, v }
}

/// `𝒮_PDC = |V|² = g²|sinh Γl_c / Γl_c|²`.
pub fn pdc_photons(x: f64, g: f64) -> f64 {
    g * g * sinhc(gamma_l(g, x)).norm_sqr()
}

/// `UV` as a function of the scaled mismatch, without the `e^{ik₀l_c}` phase.
pub fn biphoton_scaled(x: f64, g: f64) -> Complex64 {
    let gl = gamma_l(g, x);
    let sc = sinhc(gl);
    g * sc * (gl.cosh() + Complex64::i() * (x / 2.0) * sc)
}

/// Gains of mode `w`. The phase `k₀^PDC l_c/2 + [k₁z(w) − k₁z(−w)] l_c/2`
/// makes `U(w)V(−w)` reproduce the biphoton amplitude exactly.
pub fn gain_functions(ctx: &PhaseMatchContext, w: Mode, g: f64) -> Result<GainPair, PhaseMatchError> {
    let lc = ctx.pdc.length;
    let kp = ctx.kz_signal_pdc(w)?;
    let km = ctx.kz_signal_pdc(-w)?;
    let x = (kp + km - ctx.k0_pdc) * lc;
    let phase = 0.5 * ctx.k0_pdc * lc + 0.5 * (kp - km) * lc;
    Ok(gain_pair(x, g, phase))
}

/// `UV(w) = g e^{ik₀l_c} (sinh Γl_c/Γl_c)[cosh Γl_c + i(ΔPDC/2Γ) sinh Γl_c]`.
pub fn biphoton_amplitude(ctx: &PhaseMatchContext, w: Mode, g: f64) -> Result<Complex64, PhaseMatchError> {
    let lc = ctx.pdc.length;
    let x = ctx.delta_pdc(w)? * lc;
    Ok(Complex64::from_polar(1.0, ctx.k0_pdc * lc) * biphoton_scaled(x, g))
}

/// `Φ = σl e^{iΔl/2} sinc(Δl/2)` for `delta_l = Δ·l`.
pub fn sfg_kernel_scaled(delta_l: f64, sigma_l: f64) -> Complex64 {
    Complex64::from_polar(sigma_l * sinc(delta_l / 2.0), delta_l / 2.0)
}

pub fn sfg_kernel(ctx: &PhaseMatchContext, w: Mode, w2: Mode) -> Result<Complex64, PhaseMatchError> {
    let l = ctx.sfg.length;
    Ok(sfg_kernel_scaled(ctx.delta_sfg_pair(w, w2)? * l, ctx.sfg.sigma * l))
}

#[inline]
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Rectangular pass band on the fundamental's frequency offset Ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxFilter {
    pub omega_min: f64,
    pub omega_max: f64,
}

impl BoxFilter {
    pub const OPEN: BoxFilter = BoxFilter {
        omega_min: f64::NEG_INFINITY,
        omega_max: f64::INFINITY,
    };

    /// Transmission window `[λ_min, λ_max]` around the carrier `omega_signal`.
    pub fn from_wavelengths(omega_signal: f64, lambda_min: f64, lambda_max: f64) -> Self {
        Self {
            omega_min: omega_of(lambda_max) - omega_signal,
            omega_max: omega_of(lambda_min) - omega_signal,
        }
    }

    #[inline]
    pub fn passes(&self, omega: f64) -> bool {
        omega >= self.omega_min && omega <= self.omega_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    /// (q_x, Ω), containing the walk-off direction
    WalkOff,
    /// (q_y, Ω)
    Orthogonal,
}

impl Plane {
    pub fn in_plane_kind(self) -> AxisKind {
        match self {
            Plane::WalkOff => AxisKind::Qx,
            Plane::Orthogonal => AxisKind::Qy,
        }
    }

    pub fn perpendicular_kind(self) -> AxisKind {
        match self {
            Plane::WalkOff => AxisKind::Qy,
            Plane::Orthogonal => AxisKind::Qx,
        }
    }

    /// Mode at in-plane `q`, perpendicular `p`, offset `omega`.
    pub fn mode(self, q: f64, p: f64, omega: f64) -> Mode {
        match self {
            Plane::WalkOff => Mode::new(q, p, omega),
            Plane::Orthogonal => Mode::new(p, q, omega),
        }
    }
}

/// A `(q, Ω)` plane sampled on a centered grid, with the perpendicular
/// wave vector integrated over a narrow stripe of `stripe` cells (odd).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneGrid {
    pub plane: Plane,
    pub n_q: usize,
    pub n_omega: usize,
    pub dq: f64,
    pub domega: f64,
    pub stripe: usize,
}

impl PlaneGrid {
    pub fn validate(&self) -> Result<(), PwpaError> {
        if self.n_q < 2 || self.n_omega < 2 || self.n_q % 2 != 0 || self.n_omega % 2 != 0 {
            return Err(PwpaError::Grid(format!(
                "sizes must be even and ≥ 2, got {}×{}",
                self.n_q, self.n_omega
            )));
        }
        if self.stripe % 2 == 0 || self.stripe > self.n_q {
            return Err(PwpaError::Grid(format!(
                "stripe must be odd and ≤ n_q, got {}",
                self.stripe
            )));
        }
        if !(self.dq > 0.0 && self.domega > 0.0 && self.dq.is_finite() && self.domega.is_finite()) {
            return Err(PwpaError::Grid("spacings must be positive".into()));
        }
        Ok(())
    }

    pub fn q_axis(&self) -> Axis {
        Axis::centered(self.plane.in_plane_kind(), self.dq, self.n_q)
    }

    pub fn perpendicular_axis(&self) -> Axis {
        Axis::centered(self.plane.perpendicular_kind(), self.dq, self.stripe)
    }

    pub fn omega_axis(&self) -> Axis {
        Axis::centered(AxisKind::Omega, self.domega, self.n_omega)
    }

    /// `d³w/(2π)³` of one cell.
    pub fn cell_measure(&self) -> f64 {
        self.dq * self.dq * self.domega / TAU.powi(3)
    }
}

/// Refuses grids coarser than a quarter of the narrowest relevant scale.
pub fn check_resolution(ctx: &PhaseMatchContext, dq: f64, domega: f64) -> Result<(), PwpaError> {
    let bw = ctx.bandwidths()?;
    let (qs, qw) = if bw.q_sw < bw.q_d { (bw.q_sw, "q_SW") } else { (bw.q_d, "q_D") };
    let (os, ow) = if bw.omega_gvm < bw.omega_d {
        (bw.omega_gvm, "Omega_GVM")
    } else {
        (bw.omega_d, "Omega_D")
    };
    if dq > 0.25 * qs {
        return Err(PwpaError::UnderResolved {
            axis: "q",
            spacing: dq,
            scale: qs,
            which: qw,
        });
    }
    if domega > 0.25 * os {
        return Err(PwpaError::UnderResolved {
            axis: "Omega",
            spacing: domega,
            scale: os,
            which: ow,
        });
    }
    Ok(())
}

/// Filtered `𝒮_PDC` and `k₁z` in the SFG crystal over the stripe cube
/// `(in-plane, perpendicular, Ω)`. Evanescent or filtered modes hold zero,
/// and so does the unpaired `−N/2` edge sample of each even axis, which keeps
/// the integration box symmetric under `w → −w`.
struct StripeTables {
    n: usize,
    h: usize,
    m: usize,
    s: Vec<f64>,
    k: Vec<f64>,
}

impl StripeTables {
    fn build(ctx: &PhaseMatchContext, grid: &PlaneGrid, g: f64, filter: &BoxFilter) -> Self {
        let (n, h, m) = (grid.n_q, grid.stripe, grid.n_omega);
        let qa = grid.q_axis();
        let pa = grid.perpendicular_axis();
        let oa = grid.omega_axis();
        let lc = ctx.pdc.length;
        let mut s = vec![0.0; n * h * m];
        let mut k = vec![0.0; n * h * m];
        for i in 1..n {
            for j in 0..h {
                for l in 1..m {
                    let w = grid.plane.mode(qa.points[i], pa.points[j], oa.points[l]);
                    if !filter.passes(w.omega) {
                        continue;
                    }
                    let idx = (i * h + j) * m + l;
                    if let (Ok(x), Ok(kz)) = (ctx.delta_pdc(w), ctx.kz_signal_sfg(w)) {
                        s[idx] = pdc_photons(x * lc, g);
                        k[idx] = kz;
                    }
                }
            }
        }
        Self { n, h, m, s, k }
    }

    fn cube(&self) -> Array3<f64> {
        Array3::from_shape_vec((self.n, self.h, self.m), self.s.clone()).expect("table shape")
    }
}

/// Filtered PDC photon-number spectrum on the plane (perpendicular q = 0).
pub fn pdc_spectrum(ctx: &PhaseMatchContext, grid: &PlaneGrid, g: f64, filter: &BoxFilter) -> Result<Spectrum2D, PwpaError> {
    grid.validate()?;
    let t = StripeTables::build(ctx, &PlaneGrid { stripe: 1, ..*grid }, g, filter);
    let values = Array2::from_shape_vec((t.n, t.m), t.s).expect("table shape");
    Ok(Spectrum2D::new(
        [grid.q_axis(), grid.omega_axis()],
        values,
        Normalization::PhotonsPerMode,
    )?)
}

/// Filtered PDC spectrum over the full stripe cube.
pub fn pdc_spectrum_stripe(
    ctx: &PhaseMatchContext,
    grid: &PlaneGrid,
    g: f64,
    filter: &BoxFilter,
) -> Result<Spectrum3D, PwpaError> {
    grid.validate()?;
    let t = StripeTables::build(ctx, grid, g, filter);
    Ok(Spectrum3D::new(
        [grid.q_axis(), grid.perpendicular_axis(), grid.omega_axis()],
        t.cube(),
        Normalization::PhotonsPerMode,
    )?)
}

/// `∫ d³w/(2π)³ S(w − w′)S(w′)` by zero-padded FFT. The output has `2n − 1`
/// samples per axis starting at twice the input offset.
pub fn self_convolution(spectrum: &Spectrum3D) -> Result<Spectrum3D, PwpaError> {
    let conv = self_convolve(&spectrum.values);
    let mut measure = 1.0;
    let axes = spectrum.axes.clone().map(|a| {
        let d = if a.len() > 1 { a.spacing() } else { 1.0 };
        measure *= d / TAU;
        Axis::uniform(a.kind, 2.0 * a.offset(), d, 2 * a.len() - 1)
    });
    // round-off can leave tiny negatives where the true value is zero
    let values = conv.mapv(|v| (v * measure).max(0.0));
    Ok(Spectrum3D::new(axes, values, spectrum.normalization)?)
}

/// Direct `O(N²)` evaluation of [`self_convolution`], for cross-checks.
pub fn self_convolution_direct(spectrum: &Spectrum3D) -> Spectrum3D {
    let a = &spectrum.values;
    let (n0, n1, n2) = a.dim();
    let mut out = Array3::zeros((2 * n0 - 1, 2 * n1 - 1, 2 * n2 - 1));
    for ((i, j, k), &x) in a.indexed_iter() {
        if x == 0.0 {
            continue;
        }
        for ((p, q, r), &y) in a.indexed_iter() {
            out[[i + p, j + q, k + r]] += x * y;
        }
    }
    let mut measure = 1.0;
    let axes = spectrum.axes.clone().map(|a| {
        let d = if a.len() > 1 { a.spacing() } else { 1.0 };
        measure *= d / TAU;
        Axis::uniform(a.kind, 2.0 * a.offset(), d, 2 * a.len() - 1)
    });
    out.mapv_inplace(|v| v * measure);
    Spectrum3D {
        axes,
        values: out,
        normalization: spectrum.normalization,
    }
}

/// `𝒱_PDC^inc` on the plane grid: the self-convolution of the filtered PDC
/// stripe cube, read back at perpendicular q = 0.
pub fn self_convolution_plane(
    ctx: &PhaseMatchContext,
    grid: &PlaneGrid,
    g: f64,
    filter: &BoxFilter,
) -> Result<Spectrum2D, PwpaError> {
    let cube = pdc_spectrum_stripe(ctx, grid, g, filter)?;
    let conv = self_convolution(&cube)?;
    let (n, h, m) = (grid.n_q, grid.stripe, grid.n_omega);
    let values = Array2::from_shape_fn((n, m), |(i, j)| conv.values[[i + n / 2, h - 1, j + m / 2]]);
    Ok(Spectrum2D::new(
        [grid.q_axis(), grid.omega_axis()],
        values,
        Normalization::PhotonsPerMode,
    )?)
}

/// Propagation factor `𝒲 = (σl′)² sinc²(𝒟^inc l′/2)` with the exact `𝒟^inc`.
pub fn incoherent_propagation_factor(ctx: &PhaseMatchContext, grid: &PlaneGrid) -> Result<Spectrum2D, PwpaError> {
    grid.validate()?;
    let l = ctx.sfg.length;
    let sl2 = (ctx.sfg.sigma * l).powi(2);
    let qa = grid.q_axis();
    let oa = grid.omega_axis();
    let values = Array2::from_shape_fn((grid.n_q, grid.n_omega), |(i, j)| {
        match ctx.d_inc(grid.plane.mode(qa.points[i], 0.0, oa.points[j])) {
            Ok(d) => sl2 * sinc(0.5 * d * l).powi(2),
            Err(_) => 0.0,
        }
    });
    Ok(Spectrum2D::new([qa, oa], values, Normalization::PhotonsPerMode)?)
}

/// `𝒮_SFG^inc(w) = 2∫ d³w′/(2π)³ 𝒮(w − w′)𝒮(w′)|Φ(w − w′, w′)|²` on the
/// plane. Both `w′` and `w − w′` range over the grid (the box filter), the
/// perpendicular component over the stripe. Each output cell is an
/// independent fixed-order sum, so the result does not depend on threading.
pub fn incoherent_spectrum_full(
    ctx: &PhaseMatchContext,
    grid: &PlaneGrid,
    g: f64,
    filter: &BoxFilter,
) -> Result<Spectrum2D, PwpaError> {
    let n = grid.n_q;
    let all: Vec<usize> = (0..n).collect();
    let rows = incoherent_spectrum_rows(ctx, grid, g, filter, &all)?;
    let (qa, oa) = (grid.q_axis(), grid.omega_axis());
    let values = Array2::from_shape_fn((n, grid.n_omega), |(i, j)| rows[i][j]);
    Ok(Spectrum2D::new([qa, oa], values, Normalization::PhotonsPerMode)?)
}

/// Selected in-plane rows (fixed `q` index, all `Ω`) of the full integral;
/// the collinear row alone is enough to locate the ridge on the axis.
pub fn incoherent_spectrum_rows(
    ctx: &PhaseMatchContext,
    grid: &PlaneGrid,
    g: f64,
    filter: &BoxFilter,
    rows: &[usize],
) -> Result<Vec<Vec<f64>>, PwpaError> {
    grid.validate()?;
    check_resolution(ctx, grid.dq, grid.domega)?;
    if let Some(&bad) = rows.iter().find(|&&i| i >= grid.n_q) {
        return Err(PwpaError::Grid(format!("row {bad} outside the {}-point q axis", grid.n_q)));
    }
    let t = StripeTables::build(ctx, grid, g, filter);
    let (n, h, m) = (t.n, t.h, t.m);
    let l = ctx.sfg.length;
    let sl = ctx.sfg.sigma * l;
    let qa = grid.q_axis();
    let oa = grid.omega_axis();
    let scale = 2.0 * sl * sl * grid.cell_measure();
    Ok(rows
        .par_iter()
        .map(|&i| {
            let mut row = vec![0.0; m];
            for (j, out) in row.iter_mut().enumerate() {
                let Ok(k0) = ctx.kz_sum_sfg(grid.plane.mode(qa.points[i], 0.0, oa.points[j])) else {
                    continue;
                };
                let mut acc = 0.0;
                // w − w′ index: i − a + n/2 must lie in [0, n)
                let a_lo = (i + n / 2 + 1).saturating_sub(n);
                let a_hi = (i + n / 2).min(n - 1);
                let b_lo = (j + m / 2 + 1).saturating_sub(m);
                let b_hi = (j + m / 2).min(m - 1);
                for a in a_lo..=a_hi {
                    let ia = i + n / 2 - a;
                    for s in 0..h {
                        let base1 = (a * h + s) * m;
                        let base2 = (ia * h + (h - 1 - s)) * m;
                        for b in b_lo..=b_hi {
                            let s1 = t.s[base1 + b];
                            if s1 == 0.0 {
                                continue;
                            }
                            let jb = j + m / 2 - b;
                            let s2 = t.s[base2 + jb];
                            if s2 == 0.0 {
                                continue;
                            }
                            let d = t.k[base1 + b] + t.k[base2 + jb] - k0;
                            let sc = sinc(0.5 * d * l);
                            acc += s1 * s2 * sc * sc;
                        }
                    }
                }
                *out = acc * scale;
            }
            row
        })
        .collect())
}

/// Factorized approximation `2·𝒲·𝒱`, valid for `l_c ≫ l_c′`. The factor 2
/// is the pair factor of the full integral, kept so the two forms compare
/// directly.
pub fn incoherent_spectrum_factorized(
    ctx: &PhaseMatchContext,
    grid: &PlaneGrid,
    g: f64,
    filter: &BoxFilter,
) -> Result<Spectrum2D, PwpaError> {
    let w = incoherent_propagation_factor(ctx, grid)?;
    let v = self_convolution_plane(ctx, grid, g, filter)?;
    let values = &w.values * &v.values * 2.0;
    Ok(Spectrum2D::new(w.axes, values, Normalization::PhotonsPerMode)?)
}

/// Centered `(q_x, q_y, Ω)` integration grid for the coherent amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentGrid {
    pub n_q: usize,
    pub n_omega: usize,
    pub dq: f64,
    pub domega: f64,
}

/// `A = ∫ d³w′/(2π)^{3/2} UV(w′) Φ(w′, −w′)` over modes whose pair
/// `(w′, −w′)` passes the filter. The integrand depends on `|q|²` and `|Ω|`
/// only, so each distinct `(|i|, |j|, |k|)` cell class is evaluated once and
/// weighted by its multiplicity.
pub fn coherent_amplitude(
    ctx: &PhaseMatchContext,
    grid: &CoherentGrid,
    g: f64,
    filter: &BoxFilter,
) -> Result<Complex64, PwpaError> {
    if grid.n_q < 2 || grid.n_omega < 2 || grid.n_q % 2 != 0 || grid.n_omega % 2 != 0 {
        return Err(PwpaError::Grid("coherent grid sizes must be even and ≥ 2".into()));
    }
    check_resolution(ctx, grid.dq, grid.domega)?;
    let lc = ctx.pdc.length;
    let l = ctx.sfg.length;
    let sl = ctx.sfg.sigma * l;
    let (hq, ho) = (grid.n_q / 2, grid.n_omega / 2);
    // multiplicity of |index| on a centered axis of even length: 0 once,
    // 1..h−1 twice, h once (only −h exists)
    let mult = |a: usize, h: usize| -> f64 {
        if a == 0 || a == h {
            1.0
        } else {
            2.0
        }
    };
    let classes: Vec<Complex64> = (0..=ho)
        .into_par_iter()
        .map(|c| {
            let om = c as f64 * grid.domega;
            if !(filter.passes(om) && filter.passes(-om)) {
                return Complex64::new(0.0, 0.0);
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..=hq {
                for b in 0..=a {
                    let w = Mode::new(a as f64 * grid.dq, b as f64 * grid.dq, om);
                    let (Ok(kp), Ok(km)) = (ctx.kz_signal_pdc(w), ctx.kz_signal_pdc(-w)) else {
                        continue;
                    };
                    let (Ok(sp), Ok(sm)) = (ctx.kz_signal_sfg(w), ctx.kz_signal_sfg(-w)) else {
                        continue;
                    };
                    let uv = biphoton_scaled((kp + km - ctx.k0_pdc) * lc, g);
                    let phi = sfg_kernel_scaled((sp + sm - ctx.k0_sfg) * l, sl);
                    let weight = mult(a, hq) * mult(b, hq) * if a == b { 1.0 } else { 2.0 };
                    acc += uv * phi * weight;
                }
            }
            acc * mult(c, ho)
        })
        .collect();
    let sum: Complex64 = classes.iter().sum();
    let phase = Complex64::from_polar(1.0, ctx.k0_pdc * lc);
    Ok(phase * sum * (grid.dq * grid.dq * grid.domega) / TAU.powf(1.5))
}
