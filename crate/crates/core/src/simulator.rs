//! Stochastic 3D+1 model of the PDC → 4f → SFG cascade in the Wigner
//! representation. Fields are stored in spectral space in FFT (wrapped)
//! order, normalized so that `|a|²` counts photons per mode; the unitary FFT
//! makes `|A|²` in direct space photons per cell. Propagation is in the
//! frame moving with the fundamental's group velocity; envelopes are
//! referred to `k₀^PDC/2` (ordinary) and `k₀^PDC` (extraordinary), so the
//! nonlinear terms carry no explicit z phase.

use std::time::Instant;

use ndarray::{Array3, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispersion::{omega_of, CrystalParams, DispersionError, Mode, Polarization};
use crate::fft::{wrapped_index, Direction, Fft3};
use crate::phasematch::{PhaseMatchContext, PhaseMatchError};
use crate::spectrum::{Axis, AxisKind, Normalization, Spectrum3D, SpectrumError};

const TAU: f64 = std::f64::consts::TAU;
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    PhaseMatch(#[from] PhaseMatchError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(
        "grid under-resolved: {axis} spacing {spacing:.4e} must be below a quarter of {which} = {scale:.4e}; \
         enlarge the {remedy}"
    )]
    UnderResolved {
        axis: &'static str,
        spacing: f64,
        which: &'static str,
        scale: f64,
        remedy: &'static str,
    },
    #[error("non-finite field in {stage} at step {step}: gain too high for this grid")]
    NonFinite { stage: &'static str, step: usize },
    #[error("invalid run configuration: {0}")]
    Config(String),
}

impl From<DispersionError> for SimError {
    fn from(e: DispersionError) -> Self {
        SimError::PhaseMatch(e.into())
    }
}

/// Discretization of `(x, y, t)` and its Fourier dual `(q_x, q_y, Ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    /// pump / SFG carrier ω₀
    pub omega_pump: f64,
}

impl GridSpec {
    /// Grid with the given spectral spacings (Δq for both transverse axes).
    pub fn from_spectral(n: [usize; 3], dq: f64, domega: f64, omega_pump: f64) -> Result<Self, SimError> {
        let g = Self {
            nx: n[0],
            ny: n[1],
            nt: n[2],
            dx: TAU / (n[0] as f64 * dq),
            dy: TAU / (n[1] as f64 * dq),
            dt: TAU / (n[2] as f64 * domega),
            omega_pump,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny), ("nt", self.nt)] {
            if n < 2 || !n.is_power_of_two() {
                return Err(SimError::Grid(format!("{name} = {n} must be a power of two ≥ 2")));
            }
        }
        for (name, d) in [("dx", self.dx), ("dy", self.dy), ("dt", self.dt), ("omega_pump", self.omega_pump)] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(SimError::Grid(format!("{name} = {d} must be positive and finite")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nt]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dqx(&self) -> f64 {
        TAU / (self.nx as f64 * self.dx)
    }

    pub fn dqy(&self) -> f64 {
        TAU / (self.ny as f64 * self.dy)
    }

    pub fn domega(&self) -> f64 {
        TAU / (self.nt as f64 * self.dt)
    }

    pub fn omega_signal(&self) -> f64 {
        self.omega_pump / 2.0
    }

    /// Mode of FFT bin `(i, j, k)`.
    pub fn mode(&self, i: usize, j: usize, k: usize) -> Mode {
        Mode::new(
            wrapped_index(i, self.nx) as f64 * self.dqx(),
            wrapped_index(j, self.ny) as f64 * self.dqy(),
            wrapped_index(k, self.nt) as f64 * self.domega(),
        )
    }

    /// Bin holding centered index `c` (value `(c − n/2)·spacing`).
    pub fn bin_of_centered(c: usize, n: usize) -> usize {
        (c + n - n / 2) % n
    }

    /// Centered ascending axes `(q_x, q_y, Ω)`.
    pub fn centered_axes(&self) -> [Axis; 3] {
        [
            Axis::centered(AxisKind::Qx, self.dqx(), self.nx),
            Axis::centered(AxisKind::Qy, self.dqy(), self.ny),
            Axis::centered(AxisKind::Omega, self.domega(), self.nt),
        ]
    }

    /// `Δq < ¼ q_SW` and `ΔΩ < ¼ Ω_GVM` of the SFG crystal.
    pub fn check_resolution(&self, ctx: &PhaseMatchContext) -> Result<(), SimError> {
        let bw = ctx.bandwidths()?;
        let dq = self.dqx().max(self.dqy());
        if dq >= 0.25 * bw.q_sw {
            return Err(SimError::UnderResolved {
                axis: "q",
                spacing: dq,
                which: "q_SW",
                scale: bw.q_sw,
                remedy: "transverse box (n·dx)",
            });
        }
        if self.domega() >= 0.25 * bw.omega_gvm {
            return Err(SimError::UnderResolved {
                axis: "Omega",
                spacing: self.domega(),
                which: "Omega_GVM",
                scale: bw.omega_gvm,
                remedy: "time window (n·dt)",
            });
        }
        Ok(())
    }

    /// Periodic box at least six pump waists / durations wide.
    pub fn check_extent(&self, pump: &PumpPulse) -> Result<(), SimError> {
        let checks = [
            ("x", self.nx as f64 * self.dx, pump.waist),
            ("y", self.ny as f64 * self.dy, pump.waist),
            ("t", self.nt as f64 * self.dt, pump.duration),
        ];
        for (name, extent, width) in checks {
            if width.is_finite() && extent < 6.0 * width {
                return Err(SimError::Grid(format!(
                    "{name} extent {extent:.4e} is below six pump widths ({:.4e})",
                    6.0 * width
                )));
            }
        }
        Ok(())
    }
}

/// Complex amplitudes over `(q_x, q_y, Ω)` in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub data: Array3<Complex64>,
    pub polarization: Polarization,
    /// carrier frequency (rad/s)
    pub carrier: f64,
    /// propagation distance accumulated so far (m)
    pub z: f64,
}

impl SpectralField {
    pub fn zeros(grid: &GridSpec, polarization: Polarization, carrier: f64) -> Self {
        Self {
            data: Array3::from_elem(grid.shape(), ZERO),
            polarization,
            carrier,
            z: 0.0,
        }
    }

    /// `Σ|a|²`, summed in fixed memory order.
    pub fn total(&self) -> f64 {
        fixed_order_sum(self.data.as_slice().expect("standard layout"), |z| z.norm_sqr())
    }
}

/// Deterministic sum over fixed-size chunks, independent of thread count.
pub(crate) fn fixed_order_sum<T: Sync>(xs: &[T], f: impl Fn(&T) -> f64 + Sync) -> f64 {
    const CHUNK: usize = 4096;
    let partial: Vec<f64> = xs.par_chunks(CHUNK).map(|c| c.iter().map(&f).sum()).collect();
    partial.iter().sum()
}

/// Gaussian pump `A(x, y, t) = A_p exp(−(x² + y²)/w_p² − t²/τ_p²)`; an
/// infinite waist or duration makes the pulse uniform along that axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpPulse {
    pub waist: f64,
    pub duration: f64,
    pub wavelength: f64,
    /// peak amplitude, √(photons per cell)
    pub peak_amplitude: f64,
}

impl PumpPulse {
    /// Peak amplitude that yields the PDC crystal's gain `g = σ A_p l_c`.
    pub fn calibrated(waist: f64, duration: f64, wavelength: f64, pdc: &CrystalParams) -> Result<Self, SimError> {
        if !(waist > 0.0 && duration > 0.0 && wavelength > 0.0) {
            return Err(SimError::Config("pump waist, duration and wavelength must be > 0".into()));
        }
        let peak_amplitude = if pdc.gain == 0.0 {
            0.0
        } else if pdc.sigma > 0.0 {
            pdc.gain / (pdc.sigma * pdc.length)
        } else {
            return Err(SimError::Config("non-zero gain needs a positive PDC coupling sigma".into()));
        };
        Ok(Self {
            waist,
            duration,
            wavelength,
            peak_amplitude,
        })
    }

    pub fn field(&self, grid: &GridSpec, fft: &Fft3) -> SpectralField {
        let profile = |w: f64, x: f64| if w.is_finite() { (-(x / w).powi(2)).exp() } else { 1.0 };
        let mut data = Array3::from_shape_fn(grid.shape(), |(i, j, k)| {
            let x = wrapped_index(i, grid.nx) as f64 * grid.dx;
            let y = wrapped_index(j, grid.ny) as f64 * grid.dy;
            let t = wrapped_index(k, grid.nt) as f64 * grid.dt;
            Complex64::new(
                self.peak_amplitude * profile(self.waist, x) * profile(self.waist, y) * profile(self.duration, t),
                0.0,
            )
        });
        fft.process(&mut data, Direction::Forward);
        SpectralField {
            data,
            polarization: Polarization::Extraordinary,
            carrier: omega_of(self.wavelength),
            z: 0.0,
        }
    }
}

/// Transmission window of the glass filter between the crystals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterWindow {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl FilterWindow {
    pub fn passes(&self, omega_signal: f64, omega: f64) -> bool {
        let w = omega_signal + omega;
        w >= omega_of(self.lambda_max) && w <= omega_of(self.lambda_min)
    }
}

/// Independent circular Gaussian amplitudes with `⟨|c|²⟩ = ½` in every mode
/// (symmetric-ordering vacuum). `stream` selects an independent sequence for
/// the same `seed`.
pub fn seed_vacuum(grid: &GridSpec, seed: u64, stream: u64, polarization: Polarization, carrier: f64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut f = SpectralField::zeros(grid, polarization, carrier);
    for v in f.data.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v = Complex64::new(0.5 * re, 0.5 * im);
    }
    f
}

/// Propagation constants relative to the moving, phase-referenced frame:
/// `κ₁ = k₁z − k₀^PDC/2 − k₁′Ω` and `κ₀ = k₀z(θ) − k₀^PDC − k₁′Ω`.
/// Evanescent modes return `None`.
fn kappa(ctx: &PhaseMatchContext, crystal: Crystal, pol: Polarization, w: Mode) -> Option<f64> {
    let k1p = match crystal {
        Crystal::Pdc => ctx.pdc_ordinary.k1,
        Crystal::Sfg => ctx.sfg_ordinary.k1,
    };
    let kz = match (crystal, pol) {
        (Crystal::Pdc, Polarization::Ordinary) => ctx.kz_signal_pdc(w),
        (Crystal::Pdc, Polarization::Extraordinary) => ctx.kz_pump_pdc(w),
        (Crystal::Sfg, Polarization::Ordinary) => ctx.kz_signal_sfg(w),
        (Crystal::Sfg, Polarization::Extraordinary) => ctx.kz_sum_sfg(w),
    }
    .ok()?;
    let reference = match pol {
        Polarization::Ordinary => 0.5 * ctx.k0_pdc,
        Polarization::Extraordinary => ctx.k0_pdc,
    };
    Some(kz - reference - k1p * w.omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Crystal {
    Pdc,
    Sfg,
}

/// `e^{iκ dz/2}` per bin, zero where evanescent or masked out.
fn half_step(
    grid: &GridSpec,
    ctx: &PhaseMatchContext,
    crystal: Crystal,
    pol: Polarization,
    dz: f64,
    keep: impl Fn(usize, usize, usize) -> bool,
) -> Array3<Complex64> {
    Array3::from_shape_fn(grid.shape(), |(i, j, k)| {
        if !keep(i, j, k) {
            return ZERO;
        }
        match kappa(ctx, crystal, pol, grid.mode(i, j, k)) {
            Some(kp) => Complex64::from_polar(1.0, 0.5 * kp * dz),
            None => ZERO,
        }
    })
}

/// Anti-aliasing support: `|index| < n/4` on every axis, so products of two
/// band-limited fields stay inside the periodic box.
pub fn half_band(grid: &GridSpec, i: usize, j: usize, k: usize) -> bool {
    let inside = |i: usize, n: usize| (wrapped_index(i, n).unsigned_abs() as usize) * 4 < n;
    inside(i, grid.nx) && inside(j, grid.ny) && inside(k, grid.nt)
}

struct Stage<'a> {
    name: &'static str,
    fft: &'a Fft3,
    half_o: Array3<Complex64>,
    half_e: Array3<Complex64>,
    sigma: f64,
    dz: f64,
    steps: usize,
}

impl Stage<'_> {
    /// Symmetric split step: linear half, RK2-midpoint nonlinear full step
    /// in direct space, linear half.
    fn run(&self, o: &mut Array3<Complex64>, e: &mut Array3<Complex64>) -> Result<(), SimError> {
        for step in 0..self.steps {
            *o *= &self.half_o;
            *e *= &self.half_e;
            if self.sigma != 0.0 {
                self.fft.process(o, Direction::Inverse);
                self.fft.process(e, Direction::Inverse);
                nonlinear_step(o, e, self.sigma, self.dz);
                self.fft.process(o, Direction::Forward);
                self.fft.process(e, Direction::Forward);
            }
            *o *= &self.half_o;
            *e *= &self.half_e;
            let finite = |a: &Array3<Complex64>| {
                a.as_slice()
                    .expect("standard layout")
                    .par_iter()
                    .all(|z| z.re.is_finite() && z.im.is_finite())
            };
            if !(finite(o) && finite(e)) {
                return Err(SimError::NonFinite { stage: self.name, step });
            }
        }
        Ok(())
    }
}

/// `dA₁/dz = σA₀A₁*`, `dA₀/dz = −(σ/2)A₁²` over `h`, explicit midpoint rule.
fn nonlinear_step(o: &mut Array3<Complex64>, e: &mut Array3<Complex64>, sigma: f64, h: f64) {
    Zip::from(o).and(e).par_for_each(|a1, a0| {
        let f1 = sigma * *a0 * a1.conj();
        let f0 = -0.5 * sigma * *a1 * *a1;
        let m1 = *a1 + 0.5 * h * f1;
        let m0 = *a0 + 0.5 * h * f0;
        *a1 += h * sigma * m0 * m1.conj();
        *a0 += -0.5 * h * sigma * m1 * m1;
    });
}

/// Propagates the vacuum-seeded signal and the co-propagating pump through
/// the PDC crystal; returns `(signal, pump)` at the exit face.
pub fn propagate_pdc(
    grid: &GridSpec,
    ctx: &PhaseMatchContext,
    fft: &Fft3,
    signal: SpectralField,
    pump: SpectralField,
    steps: usize,
) -> Result<(SpectralField, SpectralField), SimError> {
    check_stage_inputs(grid, &signal, &pump, steps)?;
    let dz = ctx.pdc.length / steps as f64;
    let stage = Stage {
        name: "PDC crystal",
        fft,
        half_o: half_step(grid, ctx, Crystal::Pdc, Polarization::Ordinary, dz, |_, _, _| true),
        half_e: half_step(grid, ctx, Crystal::Pdc, Polarization::Extraordinary, dz, |_, _, _| true),
        sigma: ctx.pdc.sigma,
        dz,
        steps,
    };
    let (mut s, mut p) = (signal, pump);
    stage.run(&mut s.data, &mut p.data)?;
    s.z += ctx.pdc.length;
    p.z += ctx.pdc.length;
    Ok((s, p))
}

fn check_stage_inputs(grid: &GridSpec, o: &SpectralField, e: &SpectralField, steps: usize) -> Result<(), SimError> {
    if steps == 0 {
        return Err(SimError::Config("at least one z step per crystal is required".into()));
    }
    if o.data.shape() != grid.shape() || e.data.shape() != grid.shape() {
        return Err(SimError::Grid("field shape differs from the grid".into()));
    }
    if o.polarization != Polarization::Ordinary || e.polarization != Polarization::Extraordinary {
        return Err(SimError::Config("expected an ordinary fundamental and an extraordinary partner".into()));
    }
    Ok(())
}

/// Ideal unit-magnification 4f relay (identity on the envelope) followed by
/// the glass filter: modes outside the window are zeroed. The pump is not
/// passed in and so is discarded.
pub fn image_4f_and_filter(grid: &GridSpec, field: &SpectralField, window: &FilterWindow) -> SpectralField {
    let mut out = field.clone();
    let ws = field.carrier;
    for ((i, j, k), v) in out.data.indexed_iter_mut() {
        if !window.passes(ws, grid.mode(i, j, k).omega) {
            *v = ZERO;
        }
    }
    out
}

/// Propagates the fundamental and the generated extraordinary field through
/// the SFG crystal (orientation taken from `ctx.sfg`). The fundamental is
/// held to the half band so the quadratic source cannot alias.
pub fn propagate_sfg(
    grid: &GridSpec,
    ctx: &PhaseMatchContext,
    fft: &Fft3,
    fundamental: SpectralField,
    sfg_seed: SpectralField,
    steps: usize,
) -> Result<(SpectralField, SpectralField), SimError> {
    check_stage_inputs(grid, &fundamental, &sfg_seed, steps)?;
    let dz = ctx.sfg.length / steps as f64;
    let stage = Stage {
        name: "SFG crystal",
        fft,
        half_o: half_step(grid, ctx, Crystal::Sfg, Polarization::Ordinary, dz, |i, j, k| {
            half_band(grid, i, j, k)
        }),
        half_e: half_step(grid, ctx, Crystal::Sfg, Polarization::Extraordinary, dz, |_, _, _| true),
        sigma: ctx.sfg.sigma,
        dz,
        steps,
    };
    let (mut f, mut s) = (fundamental, sfg_seed);
    stage.run(&mut f.data, &mut s.data)?;
    f.z += ctx.sfg.length;
    s.z += ctx.sfg.length;
    Ok((f, s))
}

/// Far-field density `|a|²` on centered ascending `(q_x, q_y, Ω)` axes;
/// `correct` subtracts the ½ symmetric-ordering term per mode.
pub fn far_field(grid: &GridSpec, field: &SpectralField, correct: bool) -> Result<Spectrum3D, SimError> {
    far_field_mean(grid, std::slice::from_ref(&field.data), correct)
}

/// Ensemble mean of [`far_field`] over realizations, accumulated in index order.
pub fn far_field_mean(grid: &GridSpec, fields: &[Array3<Complex64>], correct: bool) -> Result<Spectrum3D, SimError> {
    if fields.is_empty() {
        return Err(SimError::Config("no realizations to average".into()));
    }
    let [nx, ny, nt] = grid.shape();
    let m = fields.len() as f64;
    let offset = if correct { 0.5 } else { 0.0 };
    let values = Array3::from_shape_fn((nx, ny, nt), |(a, b, c)| {
        let bin = [
            GridSpec::bin_of_centered(a, nx),
            GridSpec::bin_of_centered(b, ny),
            GridSpec::bin_of_centered(c, nt),
        ];
        let mut s = 0.0;
        for f in fields {
            s += f[bin].norm_sqr();
        }
        s / m - offset
    });
    let normalization = if correct {
        Normalization::WignerCorrected
    } else {
        Normalization::Wigner
    };
    Ok(Spectrum3D::new(grid.centered_axes(), values, normalization)?)
}

/// Direct evaluation of the perturbative SFG output
/// `a₀(w) = e^{iκ₀L}[a₀(w) − (σL/2)/√N Σ_{w′} a₁(w′)a₁(w − w′) e^{iΔL/2} sinc(ΔL/2)]`,
/// `Δ = κ₁(w′) + κ₁(w − w′) − κ₀(w)`, over the non-zero bins of a sparse,
/// half-band-limited fundamental.
pub fn sfg_perturbative_quadrature(
    grid: &GridSpec,
    ctx: &PhaseMatchContext,
    fundamental: &SpectralField,
    sfg_seed: &SpectralField,
) -> SpectralField {
    let l = ctx.sfg.length;
    let sigma = ctx.sfg.sigma;
    let n = grid.len() as f64;
    let support: Vec<((usize, usize, usize), Complex64, f64)> = fundamental
        .data
        .indexed_iter()
        .filter(|&((i, j, k), v)| *v != ZERO && half_band(grid, i, j, k))
        .filter_map(|(idx, v)| {
            kappa(ctx, Crystal::Sfg, Polarization::Ordinary, grid.mode(idx.0, idx.1, idx.2)).map(|kp| (idx, *v, kp))
        })
        .collect();
    let mut source = Array3::from_elem(grid.shape(), ZERO);
    let [nx, ny, nt] = grid.shape();
    for &((i1, j1, k1), a1, kp1) in &support {
        for &((i2, j2, k2), a2, kp2) in &support {
            let idx = ((i1 + i2) % nx, (j1 + j2) % ny, (k1 + k2) % nt);
            let Some(k0) = kappa(ctx, Crystal::Sfg, Polarization::Extraordinary, grid.mode(idx.0, idx.1, idx.2)) else {
                continue;
            };
            let d = kp1 + kp2 - k0;
            source[idx] += a1 * a2 * Complex64::from_polar(crate::pwpa::sinc(0.5 * d * l), 0.5 * d * l);
        }
    }
    let mut out = sfg_seed.clone();
    for ((i, j, k), v) in out.data.indexed_iter_mut() {
        let Some(k0) = kappa(ctx, Crystal::Sfg, Polarization::Extraordinary, grid.mode(i, j, k)) else {
            *v = ZERO;
            continue;
        };
        *v = Complex64::from_polar(1.0, k0 * l) * (*v - 0.5 * sigma * l / n.sqrt() * source[[i, j, k]]);
    }
    out.z += l;
    out
}

/// Everything needed for one stochastic run of the cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub pdc: CrystalParams,
    /// SFG crystal; its orientation is replaced by `θ₀^PDC + detuning`
    pub sfg: CrystalParams,
    pub detuning: f64,
    pub pump: PumpPulse,
    pub filter: FilterWindow,
    pub steps_per_crystal: usize,
    pub seed: u64,
    pub realizations: usize,
}

/// Smallest step count accepted for a full experiment.
pub const MIN_STEPS_PER_CRYSTAL: usize = 100;

impl RunConfig {
    pub fn context(&self) -> Result<PhaseMatchContext, SimError> {
        let mut sfg = self.sfg.clone();
        sfg.theta = self.pdc.theta;
        let ctx = PhaseMatchContext::new(self.pdc.clone(), sfg, self.pump.wavelength)?;
        Ok(ctx.with_detuning(self.detuning)?)
    }

    pub fn validate(&self) -> Result<PhaseMatchContext, SimError> {
        self.grid.validate()?;
        let ctx = self.context()?;
        if (self.grid.omega_pump / omega_of(self.pump.wavelength) - 1.0).abs() > 1e-12 {
            return Err(SimError::Config("grid carrier differs from the pump wavelength".into()));
        }
        self.grid.check_resolution(&ctx)?;
        self.grid.check_extent(&self.pump)?;
        if self.steps_per_crystal < MIN_STEPS_PER_CRYSTAL {
            return Err(SimError::Config(format!(
                "steps_per_crystal = {} is below the minimum {MIN_STEPS_PER_CRYSTAL}",
                self.steps_per_crystal
            )));
        }
        if self.realizations == 0 {
            return Err(SimError::Config("realizations must be ≥ 1".into()));
        }
        let m = &self.pdc.material.ordinary;
        let (lo, hi) = (m.min_um * 1e-6, m.max_um * 1e-6);
        if !(self.filter.lambda_min >= lo && self.filter.lambda_max <= hi && self.filter.lambda_min < self.filter.lambda_max)
        {
            return Err(SimError::Config(format!(
                "filter window [{:.4e}, {:.4e}] m must be ordered and inside the dispersion validity [{lo:.1e}, {hi:.1e}] m",
                self.filter.lambda_min, self.filter.lambda_max
            )));
        }
        Ok(ctx)
    }
}

/// Filtered fundamentals at the SFG crystal input, one per realization,
/// reusable across SFG orientations.
#[derive(Debug, Clone)]
pub struct PreparedFundamental {
    pub fields: Vec<SpectralField>,
    pub pdc_seconds: f64,
}

/// Seeds and propagates every realization through the PDC crystal and the
/// filter. Realization `r` draws its vacuum from stream `2r` of the seed.
pub fn prepare_fundamental(config: &RunConfig) -> Result<PreparedFundamental, SimError> {
    let ctx = config.validate()?;
    let grid = &config.grid;
    let start = Instant::now();
    let fields = (0..config.realizations)
        .into_par_iter()
        .map(|r| {
            let fft = Fft3::new(grid.shape());
            let signal = seed_vacuum(grid, config.seed, 2 * r as u64, Polarization::Ordinary, grid.omega_signal());
            let pump = config.pump.field(grid, &fft);
            let (signal, _pump) = propagate_pdc(grid, &ctx, &fft, signal, pump, config.steps_per_crystal)?;
            Ok(image_4f_and_filter(grid, &signal, &config.filter))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(PreparedFundamental {
        fields,
        pdc_seconds: start.elapsed().as_secs_f64(),
    })
}

/// SFG stage for every prepared realization at the given detuning; returns
/// the exit fields. Realization `r` seeds the SFG vacuum from stream `2r + 1`.
pub fn run_sfg_stage(
    config: &RunConfig,
    prepared: &PreparedFundamental,
    detuning: f64,
) -> Result<Vec<SpectralField>, SimError> {
    let ctx = RunConfig {
        detuning,
        ..config.clone()
    }
    .context()?;
    let grid = &config.grid;
    prepared
        .fields
        .par_iter()
        .enumerate()
        .map(|(r, fundamental)| {
            let fft = Fft3::new(grid.shape());
            let seed = seed_vacuum(
                grid,
                config.seed,
                2 * r as u64 + 1,
                Polarization::Extraordinary,
                grid.omega_pump,
            );
            let (_f, s) = propagate_sfg(grid, &ctx, &fft, fundamental.clone(), seed, config.steps_per_crystal)?;
            Ok(s)
        })
        .collect()
}

/// Far-field SFG spectra of a full run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// ensemble mean, ½ subtracted per mode
    pub mean: Spectrum3D,
    /// first realization, uncorrected (speckle as in a single shot)
    pub single: Spectrum3D,
    pub pdc_seconds: f64,
    pub sfg_seconds: f64,
}

/// Seed → PDC → 4f/filter → SFG → far field at `config.detuning`.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentOutput, SimError> {
    let prepared = prepare_fundamental(config)?;
    experiment_at(config, &prepared, config.detuning)
}

/// SFG stage and far field for one detuning, reusing the PDC output.
pub fn experiment_at(
    config: &RunConfig,
    prepared: &PreparedFundamental,
    detuning: f64,
) -> Result<ExperimentOutput, SimError> {
    let start = Instant::now();
    let fields = run_sfg_stage(config, prepared, detuning)?;
    let data: Vec<Array3<Complex64>> = fields.into_iter().map(|f| f.data).collect();
    let mean = far_field_mean(&config.grid, &data, true)?;
    let single = far_field_mean(&config.grid, &data[..1], false)?;
    Ok(ExperimentOutput {
        mean,
        single,
        pdc_seconds: prepared.pdc_seconds,
        sfg_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{kz_extraordinary, Material};
    use crate::phasematch::tests::{bbo_context, LAMBDA0};
    use crate::pwpa::pdc_photons;

    fn grid_for(ctx: &PhaseMatchContext, n: [usize; 3], frac: f64) -> GridSpec {
        let bw = ctx.bandwidths().unwrap();
        GridSpec::from_spectral(n, frac * bw.q_sw, frac * bw.omega_gvm, ctx.omega_pump).unwrap()
    }

    fn rel_l2(a: &Array3<Complex64>, b: &Array3<Complex64>) -> f64 {
        let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn grid_fourier_pairs_and_validation() {
        let g = GridSpec::from_spectral([8, 16, 32], 2.0, 3.0, 1.0).unwrap();
        assert!((g.dqx() - 2.0).abs() < 1e-12 && (g.dqy() - 2.0).abs() < 1e-12);
        assert!((g.domega() - 3.0).abs() < 1e-12);
        assert!((g.dx * 8.0 * g.dqx() - TAU).abs() < 1e-12);
        assert!(GridSpec::from_spectral([8, 12, 32], 2.0, 3.0, 1.0).is_err());
        assert_eq!(GridSpec::bin_of_centered(4, 8), 0);
        assert_eq!(GridSpec::bin_of_centered(0, 8), 4);
        assert_eq!(g.mode(0, 0, 31).omega, -3.0);
    }

    #[test]
    fn resolution_refusal_names_walkoff_scale() {
        let ctx = bbo_context(4e-3, 4e-3);
        let coarse = grid_for(&ctx, [8, 8, 8], 0.3);
        let err = coarse.check_resolution(&ctx).unwrap_err();
        assert!(matches!(err, SimError::UnderResolved { which: "q_SW", .. }));
        assert!(err.to_string().contains("q_SW"));
        assert!(grid_for(&ctx, [8, 8, 8], 0.2).check_resolution(&ctx).is_ok());
    }

    #[test]
    fn vacuum_statistics() {
        let ctx = bbo_context(4e-3, 4e-3);
        let g = grid_for(&ctx, [16, 16, 64], 0.2);
        let f = seed_vacuum(&g, 42, 0, Polarization::Ordinary, g.omega_signal());
        let n = g.len() as f64;
        let mean = f.total() / n;
        // |c|² is exponential with mean ½, standard deviation ½
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / n.sqrt(), "{mean}");
        let vr: f64 = f.data.iter().map(|z| z.re * z.re).sum::<f64>() / n;
        let vi: f64 = f.data.iter().map(|z| z.im * z.im).sum::<f64>() / n;
        let cov: f64 = f.data.iter().map(|z| z.re * z.im).sum::<f64>() / n;
        let sd = 0.25 * (2.0 / n).sqrt();
        assert!((vr - 0.25).abs() < 3.0 * sd && (vi - 0.25).abs() < 3.0 * sd);
        assert!(cov.abs() < 3.0 * 0.25 / n.sqrt());
        let m: Complex64 = f.data.iter().sum::<Complex64>() / n;
        assert!(m.norm() < 3.0 * (0.5 / n).sqrt());
        assert_eq!(f, seed_vacuum(&g, 42, 0, Polarization::Ordinary, g.omega_signal()));
        assert_ne!(f, seed_vacuum(&g, 42, 1, Polarization::Ordinary, g.omega_signal()));
    }

    #[test]
    fn linear_steps_conserve_energy() {
        let mut ctx = bbo_context(4e-3, 4e-3);
        ctx.pdc.sigma = 0.0;
        let g = grid_for(&ctx, [16, 16, 64], 0.2);
        let fft = Fft3::new(g.shape());
        let s = seed_vacuum(&g, 1, 0, Polarization::Ordinary, g.omega_signal());
        let p = seed_vacuum(&g, 1, 1, Polarization::Extraordinary, g.omega_pump);
        let (e_s, e_p) = (s.total(), p.total());
        let (s2, p2) = propagate_pdc(&g, &ctx, &fft, s.clone(), p, 50).unwrap();
        assert!((s2.total() - e_s).abs() < 1e-10 * e_s);
        assert!((p2.total() - e_p).abs() < 1e-10 * e_p);
        // no gain: each mode only picks up e^{iκ l_c}
        for ((i, j, k), v) in s2.data.indexed_iter() {
            let kp = kappa(&ctx, Crystal::Pdc, Polarization::Ordinary, g.mode(i, j, k)).unwrap();
            let expect = s.data[[i, j, k]] * Complex64::from_polar(1.0, kp * ctx.pdc.length);
            assert!((v - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn parametric_gain_scaling_at_small_gain() {
        // a coherent seed at w generates an idler at −w with |V|² ∝ g² at g ≪ 1
        let ctx0 = bbo_context(4e-3, 4e-3);
        let g = grid_for(&ctx0, [8, 8, 32], 0.2);
        let fft = Fft3::new(g.shape());
        let idler_photons = |gain: f64| {
            let mut ctx = ctx0.clone();
            ctx.pdc.gain = gain;
            let pump = PumpPulse::calibrated(f64::INFINITY, f64::INFINITY, LAMBDA0, &ctx.pdc).unwrap();
            let mut s = SpectralField::zeros(&g, Polarization::Ordinary, g.omega_signal());
            s.data[[1, 0, 2]] = Complex64::new(10.0, 0.0);
            let (out, _) = propagate_pdc(&g, &ctx, &fft, s, pump.field(&g, &fft), 100).unwrap();
            out.data[[7, 0, 30]].norm_sqr()
        };
        let r = idler_photons(0.02) / idler_photons(0.01);
        assert!((r - 4.0).abs() < 0.01, "{r}");
        // and matches the plane-wave |V|² = g² sinh²Γ/Γ² for that mode
        let x = ctx0.delta_pdc(g.mode(1, 0, 2)).unwrap() * ctx0.pdc.length;
        let v2 = pdc_photons(x, 0.01) * 100.0;
        assert!((idler_photons(0.01) / v2 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_pump_is_pure_dispersion() {
        let mut ctx = bbo_context(4e-3, 4e-3);
        ctx.pdc.gain = 0.0;
        let g = grid_for(&ctx, [8, 8, 32], 0.2);
        let fft = Fft3::new(g.shape());
        let pump = PumpPulse::calibrated(1e-3, 1e-12, LAMBDA0, &ctx.pdc).unwrap();
        assert_eq!(pump.peak_amplitude, 0.0);
        let s = seed_vacuum(&g, 3, 0, Polarization::Ordinary, g.omega_signal());
        let (out, _) = propagate_pdc(&g, &ctx, &fft, s.clone(), pump.field(&g, &fft), 20).unwrap();
        // only the vacuum's own second harmonic couples back, at O((σl_c)²|a|³)
        for (a, b) in out.data.iter().zip(s.data.iter()) {
            assert!((a.norm() - b.norm()).abs() < 1e-8);
        }
    }

    #[test]
    fn filter_is_a_projection() {
        let ctx = bbo_context(4e-3, 4e-3);
        let g = GridSpec::from_spectral([4, 4, 64], 1e3, 2e13, ctx.omega_pump).unwrap();
        let f = seed_vacuum(&g, 9, 0, Polarization::Ordinary, g.omega_signal());
        let w = FilterWindow {
            lambda_min: 1000e-9,
            lambda_max: 1100e-9,
        };
        let out = image_4f_and_filter(&g, &f, &w);
        let mut kept = 0;
        for ((i, j, k), v) in out.data.indexed_iter() {
            if w.passes(g.omega_signal(), g.mode(i, j, k).omega) {
                assert_eq!(*v, f.data[[i, j, k]]);
                kept += 1;
            } else {
                assert_eq!(*v, ZERO);
            }
        }
        assert!(kept > 0 && kept < g.len());
        assert!(out.total() <= f.total());
    }

    #[test]
    fn sfg_zero_input_and_quadratic_scaling() {
        let ctx = bbo_context(4e-3, 4e-3);
        let g = grid_for(&ctx, [8, 8, 32], 0.2);
        let fft = Fft3::new(g.shape());
        let zero_o = SpectralField::zeros(&g, Polarization::Ordinary, g.omega_signal());
        let zero_e = SpectralField::zeros(&g, Polarization::Extraordinary, g.omega_pump);
        let (_, s) = propagate_sfg(&g, &ctx, &fft, zero_o, zero_e.clone(), 20).unwrap();
        assert!(s.data.iter().all(|v| *v == ZERO));
        let input = |scale: f64| {
            let mut f = SpectralField::zeros(&g, Polarization::Ordinary, g.omega_signal());
            f.data[[1, 0, 1]] = Complex64::new(3.0 * scale, scale);
            f.data[[7, 1, 30]] = Complex64::new(-2.0 * scale, 0.5 * scale);
            f.data[[0, 0, 0]] = Complex64::new(4.0 * scale, 0.0);
            f
        };
        let run = |scale: f64| propagate_sfg(&g, &ctx, &fft, input(scale), zero_e.clone(), 40).unwrap().1;
        let a = run(1.0);
        let b = run(2.0);
        let ratio = b.total() / a.total();
        assert!((ratio - 16.0).abs() < 0.05 * 16.0, "{ratio}");
    }

    #[test]
    fn phase_matched_pair_grows_quadratically() {
        // pick w = (q, 0, 0) and orient the SFG crystal so that ΔSFG(w) = 0
        let base = bbo_context(4e-3, 1e-3);
        let g = grid_for(&base, [8, 8, 16], 0.2);
        let w = g.mode(1, 0, 0);
        let target = 2.0 * base.kz_signal_sfg(w).unwrap();
        let bbo = Material::bbo();
        let (mut lo, mut hi) = (base.pdc.theta - 0.05, base.pdc.theta + 0.05);
        let f = |th: f64| kz_extraordinary(&bbo, base.omega_pump, th, Mode::ZERO).unwrap().value().unwrap() - target;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (f(lo) > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tuned = base.with_detuning(0.5 * (lo + hi) - base.pdc.theta).unwrap();
        assert!(tuned.delta_sfg(w).unwrap().abs() < 1e-6);
        let fft = Fft3::new(g.shape());
        let power = |length: f64| {
            let ctx = tuned.with_sfg_length(length).unwrap();
            let mut f = SpectralField::zeros(&g, Polarization::Ordinary, g.omega_signal());
            f.data[[1, 0, 0]] = Complex64::new(1.0, 0.0);
            f.data[[7, 0, 0]] = Complex64::new(1.0, 0.0);
            let e = SpectralField::zeros(&g, Polarization::Extraordinary, g.omega_pump);
            let (_, s) = propagate_sfg(&g, &ctx, &fft, f, e, 100).unwrap();
            s.data[[0, 0, 0]].norm_sqr()
        };
        let r = power(2e-3) / power(1e-3);
        assert!((r - 4.0).abs() < 0.05 * 4.0, "{r}");
    }

    #[test]
    fn split_step_matches_perturbative_quadrature() {
        let mut ctx = bbo_context(4e-3, 4e-3).with_detuning(0.05f64.to_radians()).unwrap();
        ctx.sfg.sigma = 1e-4;
        let g = grid_for(&ctx, [32, 32, 64], 0.2);
        let fft = Fft3::new(g.shape());
        let mut f = SpectralField::zeros(&g, Polarization::Ordinary, g.omega_signal());
        let noise = seed_vacuum(&g, 77, 0, Polarization::Ordinary, g.omega_signal());
        // sparse band-limited input: every third bin inside the half band
        let mut count = 0;
        for ((i, j, k), v) in f.data.indexed_iter_mut() {
            if half_band(&g, i, j, k) && (i + 2 * j + 5 * k) % 23 == 0 {
                *v = noise.data[[i, j, k]] * 100.0;
                count += 1;
            }
        }
        assert!(count > 50);
        let e = SpectralField::zeros(&g, Polarization::Extraordinary, g.omega_pump);
        let (_, split) = propagate_sfg(&g, &ctx, &fft, f.clone(), e.clone(), 200).unwrap();
        let quad = sfg_perturbative_quadrature(&g, &ctx, &f, &e);
        let err = rel_l2(&split.data, &quad.data);
        assert!(err < 0.03, "{err}");
    }

    fn small_run(steps: usize, seed: u64) -> RunConfig {
        let ctx = bbo_context(4e-3, 4e-3);
        let pdc = ctx.pdc.clone();
        let grid = grid_for(&ctx, [16, 16, 32], 0.2);
        let pump = PumpPulse::calibrated(
            grid.nx as f64 * grid.dx / 8.0,
            grid.nt as f64 * grid.dt / 8.0,
            LAMBDA0,
            &pdc,
        )
        .unwrap();
        RunConfig {
            grid,
            pdc,
            sfg: ctx.sfg.clone(),
            detuning: 0.0,
            pump,
            filter: FilterWindow {
                lambda_min: 750e-9,
                lambda_max: 1300e-9,
            },
            steps_per_crystal: steps,
            seed,
            realizations: 1,
        }
    }

    #[test]
    fn halving_dz_changes_little() {
        let a = run_experiment(&small_run(200, 5)).unwrap().single;
        let b = run_experiment(&small_run(400, 5)).unwrap().single;
        let num: f64 = a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.values.iter().map(|y| y * y).sum();
        let err = (num / den).sqrt();
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn runs_are_bit_identical_across_thread_counts() {
        let cfg = RunConfig {
            realizations: 2,
            ..small_run(100, 11)
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let two = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let a = one.install(|| run_experiment(&cfg)).unwrap();
        let b = two.install(|| run_experiment(&cfg)).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.single, b.single);
        let c = run_experiment(&RunConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.single, c.single);
    }

    #[test]
    fn coherent_peak_sits_at_origin() {
        let out = run_experiment(&small_run(100, 2)).unwrap();
        let (mut best, mut idx) = (f64::NEG_INFINITY, [0; 3]);
        for ((i, j, k), &v) in out.single.values.indexed_iter() {
            if v > best {
                best = v;
                idx = [i, j, k];
            }
        }
        assert_eq!(idx, [8, 8, 16]);
    }

    #[test]
    fn far_field_parseval_and_vacuum_correction() {
        let ctx = bbo_context(4e-3, 4e-3);
        let g = grid_for(&ctx, [8, 8, 16], 0.2);
        let fft = Fft3::new(g.shape());
        let f = seed_vacuum(&g, 4, 0, Polarization::Ordinary, g.omega_signal());
        let ff = far_field(&g, &f, false).unwrap();
        let mut direct = f.data.clone();
        fft.process(&mut direct, Direction::Inverse);
        let e: f64 = direct.iter().map(|z| z.norm_sqr()).sum();
        assert!((ff.total() - e).abs() < 1e-10 * e);
        let fields: Vec<_> = (0..400)
            .map(|r| seed_vacuum(&g, 4, r, Polarization::Ordinary, g.omega_signal()).data)
            .collect();
        let mean = far_field_mean(&g, &fields, true).unwrap();
        let avg = mean.total() / g.len() as f64;
        // per-mode sd ½/√400, averaged over 1024 modes
        assert!(avg.abs() < 3.0 * 0.5 / (400.0f64 * 1024.0).sqrt(), "{avg}");
    }

    #[test]
    fn huge_gain_is_reported_not_propagated() {
        let mut cfg = small_run(100, 1);
        cfg.pdc.gain = 2000.0;
        cfg.pump = PumpPulse::calibrated(cfg.pump.waist, cfg.pump.duration, LAMBDA0, &cfg.pdc).unwrap();
        assert!(matches!(
            run_experiment(&cfg),
            Err(SimError::NonFinite { stage: "PDC crystal", .. })
        ));
    }

    #[test]
    fn plane_wave_limit_reproduces_pwpa_spectrum() {
        // uniform pump: the split-step couples exactly the (w, −w) pairs
        let ctx = bbo_context(4e-3, 4e-3);
        let mut pdc = ctx.pdc.clone();
        pdc.gain = 4.0;
        let bw = ctx.bandwidths().unwrap();
        let g = GridSpec::from_spectral([2, 2, 64], 0.2 * bw.q_sw, 0.05 * bw.omega_d, ctx.omega_pump).unwrap();
        let pctx = PhaseMatchContext::new(pdc.clone(), ctx.sfg.clone(), LAMBDA0).unwrap();
        let fft = Fft3::new(g.shape());
        let pump = PumpPulse::calibrated(f64::INFINITY, f64::INFINITY, LAMBDA0, &pdc).unwrap();
        let m = 400;
        let mut acc = vec![0.0; g.nt];
        for r in 0..m {
            let s = seed_vacuum(&g, 21, r, Polarization::Ordinary, g.omega_signal());
            let (out, _) = propagate_pdc(&g, &pctx, &fft, s, pump.field(&g, &fft), 200).unwrap();
            for (k, a) in acc.iter_mut().enumerate() {
                *a += out.data[[0, 0, k]].norm_sqr() - 0.5;
            }
        }
        // central lobe: modes with 𝒮_PDC above a tenth of its peak
        let peak = pdc_photons(0.0, 4.0);
        let mut ratios = Vec::new();
        for (k, a) in acc.iter().enumerate() {
            let x = pctx.delta_pdc(g.mode(0, 0, k)).unwrap() * pdc.length;
            let s = pdc_photons(x, 4.0);
            if s > 0.1 * peak {
                ratios.push(a / m as f64 / s);
            }
        }
        assert!(ratios.len() >= 5, "{}", ratios.len());
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }
}
