//! Post-processing in the spirit of the imaging spectrometer: plane slices,
//! `(q, Ω) → (α, λ)` axes, coherent/incoherent split, ridge centroids and
//! angle sweeps over the three engines.

use ndarray::{Array2, Array3, ArrayD, Axis as NdAxis, IxDyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispersion::{omega_of, wavelength_of, SPEED_OF_LIGHT};
use crate::phasematch::{PhaseMatchContext, PhaseMatchError};
use crate::pwpa::{coherent_amplitude, incoherent_spectrum_rows, BoxFilter, CoherentGrid, Plane, PlaneGrid, PwpaError};
use crate::simulator::{experiment_at, prepare_fundamental, GridSpec, PumpPulse, RunConfig, SimError};
use crate::spectrum::{Axis, AxisKind, Spectrum2D, Spectrum3D, SpectrumError};

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    PhaseMatch(#[from] PhaseMatchError),
    #[error(transparent)]
    Pwpa(#[from] PwpaError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("slit of {slit} cells around index {center} does not fit an axis of {len} points")]
    EmptyStripe { slit: usize, center: usize, len: usize },
    #[error("coherent mask covers {cells} of {total} cells (more than 10%); the split is meaningless")]
    MaskTooLarge { cells: usize, total: usize },
    #[error("axis {0} does not contain the origin")]
    NoOrigin(usize),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisMode {
    /// `(q, Ω)`
    Frequency,
    /// `(α in degrees, λ in m)`
    Experimental,
}

/// Which plane the spectrometer slit selects and how wide it is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrometerView {
    pub plane: Plane,
    /// slit width in grid cells, ≥ 1
    pub slit: usize,
    pub axes: AxisMode,
}

/// Average of a `(q_x, q_y, Ω)` spectrum over a slit stripe around the
/// zero of the perpendicular axis. `carrier` is the frequency that `Ω` is
/// measured from (used only for experimental axes).
pub fn slice_spectrum(s: &Spectrum3D, view: &SpectrometerView, carrier: f64) -> Result<Spectrum2D, AnalysisError> {
    if view.slit == 0 {
        return Err(AnalysisError::Input("slit width must be ≥ 1".into()));
    }
    let (keep, across) = match view.plane {
        Plane::WalkOff => (0, 1),
        Plane::Orthogonal => (1, 0),
    };
    let perp = &s.axes[across];
    let center = perp.nearest(0.0);
    let lo = center as isize - (view.slit as isize - 1) / 2;
    let hi = lo + view.slit as isize;
    if lo < 0 || hi > perp.len() as isize {
        return Err(AnalysisError::EmptyStripe {
            slit: view.slit,
            center,
            len: perp.len(),
        });
    }
    let mut acc = Array2::<f64>::zeros((s.axes[keep].len(), s.axes[2].len()));
    for c in lo as usize..hi as usize {
        acc += &s.values.index_axis(NdAxis(across), c);
    }
    acc /= view.slit as f64;
    let out = Spectrum2D::new([s.axes[keep].clone(), s.axes[2].clone()], acc, s.normalization)?;
    match view.axes {
        AxisMode::Frequency => Ok(out),
        AxisMode::Experimental => to_experimental_axes(&out, carrier),
    }
}

/// `q → α = qλ_c/(2π)` in degrees (small angle, carrier wavelength `λ_c`)
/// and `Ω → λ = 2πc/(ω_c + Ω)`. Values are left per cell, not re-binned.
pub fn to_experimental_axes(s: &Spectrum2D, carrier: f64) -> Result<Spectrum2D, AnalysisError> {
    let [qa, oa] = &s.axes;
    if !matches!(qa.kind, AxisKind::Qx | AxisKind::Qy) || oa.kind != AxisKind::Omega {
        return Err(AnalysisError::Input("expected (q, Omega) axes".into()));
    }
    let lc = wavelength_of(carrier);
    let alpha = Axis {
        kind: AxisKind::Alpha,
        points: qa.points.iter().map(|q| (q * lc / TAU).to_degrees()).collect(),
    };
    let lambda = Axis {
        kind: AxisKind::Lambda,
        points: oa.points.iter().map(|o| wavelength_of(carrier + o)).collect(),
    };
    Ok(Spectrum2D::new([alpha, lambda], s.values.clone(), s.normalization)?)
}

/// Inverse of [`to_experimental_axes`]; `q_kind` names the recovered q axis.
pub fn to_frequency_axes(s: &Spectrum2D, carrier: f64, q_kind: AxisKind) -> Result<Spectrum2D, AnalysisError> {
    let [aa, la] = &s.axes;
    if aa.kind != AxisKind::Alpha || la.kind != AxisKind::Lambda {
        return Err(AnalysisError::Input("expected (alpha, lambda) axes".into()));
    }
    let lc = wavelength_of(carrier);
    let q = Axis {
        kind: q_kind,
        points: aa.points.iter().map(|a| a.to_radians() * TAU / lc).collect(),
    };
    let omega = Axis {
        kind: AxisKind::Omega,
        points: la.points.iter().map(|l| omega_of(*l) - carrier).collect(),
    };
    Ok(Spectrum2D::new([q, omega], s.values.clone(), s.normalization)?)
}

/// Default coherent-mask radius in cells.
pub const DEFAULT_MASK_RADIUS: f64 = 3.0;
/// Default display truncation, as a fraction of the coherent peak.
pub const DEFAULT_TRUNCATION: f64 = 5e-4;

/// Per-axis mask radii `(q_x, q_y, Ω)` in cells covering the pump's spectral
/// footprint down to `floor` of its peak intensity (`|FT|² ∝ e^{−q²w²/2}`).
/// The coherent component reproduces the pump mode, so this is where it lives.
pub fn pump_footprint_radii(grid: &GridSpec, pump: &PumpPulse, floor: f64) -> [f64; 3] {
    let reach = (2.0 * (1.0 / floor).ln()).sqrt();
    let cells = |width: f64, spacing: f64| {
        if width.is_finite() {
            (reach / width / spacing).max(1.0)
        } else {
            1.0
        }
    };
    [
        cells(pump.waist, grid.dqx()),
        cells(pump.waist, grid.dqy()),
        cells(pump.duration, grid.domega()),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<S> {
    /// sum inside the mask
    pub n_coh: f64,
    /// sum outside the mask
    pub n_inc: f64,
    pub coherent_peak: f64,
    pub incoherent_peak: f64,
    pub mask_cells: usize,
    /// outside-only spectrum, optionally clipped to `truncate × coherent_peak`
    pub residual: S,
}

struct RawSplit {
    n_coh: f64,
    n_inc: f64,
    coherent_peak: f64,
    incoherent_peak: f64,
    mask_cells: usize,
    residual: ArrayD<f64>,
}

fn split_dyn(values: ArrayD<f64>, axes: &[Axis], radii: &[f64], truncate: Option<f64>) -> Result<RawSplit, AnalysisError> {
    if radii.len() != axes.len() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(AnalysisError::Input("one positive mask radius per axis is required".into()));
    }
    let mut origin = Vec::with_capacity(axes.len());
    for (i, a) in axes.iter().enumerate() {
        let c = a.nearest(0.0);
        if a.points[c].abs() > 0.5 * a.spacing().abs() + f64::EPSILON {
            return Err(AnalysisError::NoOrigin(i));
        }
        origin.push(c as f64);
    }
    let inside = |idx: &IxDyn| {
        let mut d = 0.0;
        for (k, &o) in origin.iter().enumerate() {
            d += ((idx[k] as f64 - o) / radii[k]).powi(2);
        }
        d <= 1.0
    };
    let total = values.len();
    let mut residual = values;
    let (mut n_coh, mut n_inc, mut cp, mut ip, mut cells) = (0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
    for (idx, v) in residual.indexed_iter_mut() {
        if inside(&idx) {
            cells += 1;
            n_coh += *v;
            cp = cp.max(*v);
            *v = 0.0;
        } else {
            n_inc += *v;
            ip = ip.max(*v);
        }
    }
    if cells * 10 > total {
        return Err(AnalysisError::MaskTooLarge { cells, total });
    }
    if let Some(frac) = truncate {
        let cap = frac * cp.max(0.0);
        residual.mapv_inplace(|v| v.min(cap));
    }
    Ok(RawSplit {
        n_coh,
        n_inc,
        coherent_peak: cp.max(0.0),
        incoherent_peak: ip.max(0.0),
        mask_cells: cells,
        residual,
    })
}

/// Coherent (ellipsoidal mask around the origin) / incoherent split of a
/// `(q, Ω)` plane.
pub fn split_coherent_incoherent(
    s: &Spectrum2D,
    radii: [f64; 2],
    truncate: Option<f64>,
) -> Result<Split<Spectrum2D>, AnalysisError> {
    let r = split_dyn(s.values.clone().into_dyn(), &s.axes, &radii, truncate)?;
    let values = r.residual.into_dimensionality().expect("2D");
    Ok(Split {
        n_coh: r.n_coh,
        n_inc: r.n_inc,
        coherent_peak: r.coherent_peak,
        incoherent_peak: r.incoherent_peak,
        mask_cells: r.mask_cells,
        residual: Spectrum2D::new(s.axes.clone(), values, s.normalization)?,
    })
}

/// Same split on the full `(q_x, q_y, Ω)` cube.
pub fn split_coherent_incoherent_3d(
    s: &Spectrum3D,
    radii: [f64; 3],
    truncate: Option<f64>,
) -> Result<Split<Spectrum3D>, AnalysisError> {
    let r = split_dyn(s.values.clone().into_dyn(), &s.axes, &radii, truncate)?;
    let values: Array3<f64> = r.residual.into_dimensionality().expect("3D");
    Ok(Split {
        n_coh: r.n_coh,
        n_inc: r.n_inc,
        coherent_peak: r.coherent_peak,
        incoherent_peak: r.incoherent_peak,
        mask_cells: r.mask_cells,
        residual: Spectrum3D::new(s.axes.clone(), values, s.normalization)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CentroidMode {
    /// whole column
    Full,
    /// `±half_width` (rad/s) around the column maximum
    PeakWindow { half_width: f64 },
    /// position of the column maximum
    Argmax,
}

/// Ω-centroid of every q column of a `(q, Ω)` spectrum. Negative cells
/// (vacuum-corrected noise) carry no weight; columns without positive weight
/// have no centroid and are listed in `flagged`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeCentroids {
    pub q: Vec<f64>,
    pub omega: Vec<Option<f64>>,
    pub flagged: Vec<usize>,
}

impl RidgeCentroids {
    /// Centroid of the collinear (`q = 0`) column.
    pub fn at_origin(&self) -> Option<f64> {
        let mut best = 0;
        for (i, q) in self.q.iter().enumerate() {
            if q.abs() < self.q[best].abs() {
                best = i;
            }
        }
        self.omega.get(best).copied().flatten()
    }

    /// Least-squares slope `dΩ/dq` over unflagged columns with `|q| ≤ q_max`.
    pub fn slope(&self, q_max: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .q
            .iter()
            .zip(&self.omega)
            .filter_map(|(&q, o)| o.filter(|_| q.abs() <= q_max).map(|o| (q, o)))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mq = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mo = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sqq: f64 = pts.iter().map(|p| (p.0 - mq).powi(2)).sum();
        let sqo: f64 = pts.iter().map(|p| (p.0 - mq) * (p.1 - mo)).sum();
        (sqq > 0.0).then(|| sqo / sqq)
    }
}

pub fn ridge_centroid(s: &Spectrum2D, mode: CentroidMode) -> Result<RidgeCentroids, AnalysisError> {
    let [qa, oa] = &s.axes;
    if oa.kind != AxisKind::Omega {
        return Err(AnalysisError::Input("second axis must be Omega".into()));
    }
    let mut omega = Vec::with_capacity(qa.len());
    let mut flagged = Vec::new();
    for (i, col) in s.values.outer_iter().enumerate() {
        let c = column_centroid(col.as_slice().expect("standard layout"), &oa.points, mode);
        if c.is_none() {
            flagged.push(i);
        }
        omega.push(c);
    }
    Ok(RidgeCentroids {
        q: qa.points.clone(),
        omega,
        flagged,
    })
}

fn column_centroid(v: &[f64], om: &[f64], mode: CentroidMode) -> Option<f64> {
    let (mut peak, mut at) = (0.0, None);
    for (k, &x) in v.iter().enumerate() {
        if x > peak {
            peak = x;
            at = Some(k);
        }
    }
    let at = at?;
    let window = match mode {
        CentroidMode::Argmax => return Some(om[at]),
        CentroidMode::Full => f64::INFINITY,
        CentroidMode::PeakWindow { half_width } => half_width,
    };
    let (mut w, mut m) = (0.0, 0.0);
    for (&x, &o) in v.iter().zip(om) {
        if x > 0.0 && (o - om[at]).abs() <= window {
            w += x;
            m += x * o;
        }
    }
    (w > 0.0).then(|| m / w)
}

/// Intensity-weighted regression slope `Cov(q, Ω)/Var(q)` of a plane
/// (positive cells only): the tilt of the spectral cloud.
pub fn covariance_tilt(s: &Spectrum2D) -> f64 {
    let [qa, oa] = &s.axes;
    let (mut w, mut mq, mut mo) = (0.0, 0.0, 0.0);
    for ((i, j), &v) in s.values.indexed_iter() {
        if v > 0.0 {
            w += v;
            mq += v * qa.points[i];
            mo += v * oa.points[j];
        }
    }
    if w == 0.0 {
        return 0.0;
    }
    mq /= w;
    mo /= w;
    let (mut cqq, mut cqo) = (0.0, 0.0);
    for ((i, j), &v) in s.values.indexed_iter() {
        if v > 0.0 {
            let dq = qa.points[i] - mq;
            cqq += v * dq * dq;
            cqo += v * dq * (oa.points[j] - mo);
        }
    }
    if cqq == 0.0 {
        0.0
    } else {
        cqo / cqq
    }
}

/// Wavelength of a frequency offset `omega` from `carrier`.
pub fn lambda_of_offset(carrier: f64, omega: f64) -> f64 {
    TAU * SPEED_OF_LIGHT / (carrier + omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// root of the exact incoherent mismatch
    Analytic,
    /// centroid of the plane-wave-pump full integral
    Pwpa,
    /// centroid of the stochastic simulation
    Stochastic,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Analytic => "analytic",
            Engine::Pwpa => "pwpa",
            Engine::Stochastic => "stochastic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// SFG crystal detuning Δθ (rad)
    Detuning,
    /// SFG crystal length (m)
    SfgLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    /// m
    pub lambda_inc: Option<f64>,
    pub n_coh: Option<f64>,
    pub n_inc: Option<f64>,
    /// dΩ/dq_x of the ridge (s⁻¹·m)
    pub ridge_slope: Option<f64>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub provenance: Engine,
    pub rows: Vec<SweepRow>,
}

/// Inputs shared by all sweep engines. The PWPA engine needs `plane_grid`
/// (walk-off plane) and optionally `coherent_grid`; the stochastic engine
/// needs `run`.
#[derive(Debug, Clone)]
pub struct SweepSetup {
    /// tuned context; its SFG crystal is re-oriented / resized per row
    pub ctx: PhaseMatchContext,
    pub gain: f64,
    pub filter: BoxFilter,
    pub plane_grid: Option<PlaneGrid>,
    pub coherent_grid: Option<CoherentGrid>,
    pub run: Option<RunConfig>,
    pub centroid: CentroidMode,
    /// coherent mask radii in cells `(q_x, q_y, Ω)`
    pub mask_radii: [f64; 3],
    pub slit: usize,
}

impl SweepSetup {
    /// Analytic-only setup.
    pub fn analytic(ctx: PhaseMatchContext) -> Self {
        Self {
            gain: ctx.pdc.gain,
            filter: BoxFilter::OPEN,
            ctx,
            plane_grid: None,
            coherent_grid: None,
            run: None,
            centroid: CentroidMode::Argmax,
            mask_radii: [DEFAULT_MASK_RADIUS; 3],
            slit: 1,
        }
    }
}

/// λ_inc, photon numbers and ridge slope over a list of SFG detunings (rad).
/// Row failures are reported in the row's `flag`; rows come back sorted.
pub fn angle_sweep(setup: &SweepSetup, angles: &[f64], engine: Engine) -> Result<SweepResult, AnalysisError> {
    sweep(setup, angles, SweepParameter::Detuning, engine)
}

/// As [`angle_sweep`], varying the SFG crystal length (m) at zero detuning.
pub fn length_sweep(setup: &SweepSetup, lengths: &[f64], engine: Engine) -> Result<SweepResult, AnalysisError> {
    sweep(setup, lengths, SweepParameter::SfgLength, engine)
}

fn row_context(setup: &SweepSetup, kind: SweepParameter, p: f64) -> Result<PhaseMatchContext, PhaseMatchError> {
    match kind {
        SweepParameter::Detuning => setup.ctx.with_detuning(p),
        SweepParameter::SfgLength => setup.ctx.with_sfg_length(p),
    }
}

fn sweep(setup: &SweepSetup, params: &[f64], kind: SweepParameter, engine: Engine) -> Result<SweepResult, AnalysisError> {
    if params.iter().any(|p| !p.is_finite()) {
        return Err(AnalysisError::Input("sweep values must be finite".into()));
    }
    let mut sorted = params.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows = match engine {
        Engine::Analytic => sorted.par_iter().map(|&p| analytic_row(setup, kind, p)).collect(),
        Engine::Pwpa => {
            let grid = setup
                .plane_grid
                .ok_or_else(|| AnalysisError::Input("the pwpa engine needs a plane grid".into()))?;
            sorted.iter().map(|&p| pwpa_row(setup, &grid, kind, p)).collect()
        }
        Engine::Stochastic => stochastic_rows(setup, &sorted, kind)?,
    };
    Ok(SweepResult {
        parameter: kind,
        provenance: engine,
        rows,
    })
}

fn failed_row(p: f64, e: impl std::fmt::Display) -> SweepRow {
    SweepRow {
        parameter: p,
        lambda_inc: None,
        n_coh: None,
        n_inc: None,
        ridge_slope: None,
        flag: Some(e.to_string()),
    }
}

fn analytic_row(setup: &SweepSetup, kind: SweepParameter, p: f64) -> SweepRow {
    let ctx = match row_context(setup, kind, p) {
        Ok(c) => c,
        Err(e) => return failed_row(p, e),
    };
    match ctx.sigma_root(0.0, 0.0) {
        Ok(om) => SweepRow {
            parameter: p,
            lambda_inc: Some(wavelength_of(ctx.omega_pump + om)),
            n_coh: None,
            n_inc: None,
            ridge_slope: Some(ctx.sfg_extraordinary.walkoff / ctx.group_velocity_mismatch()),
            flag: None,
        },
        Err(e) => failed_row(p, e),
    }
}

fn pwpa_row(setup: &SweepSetup, grid: &PlaneGrid, kind: SweepParameter, p: f64) -> SweepRow {
    let run = || -> Result<SweepRow, AnalysisError> {
        let ctx = row_context(setup, kind, p)?;
        let axis_row = grid.n_q / 2;
        let rows = incoherent_spectrum_rows(&ctx, grid, setup.gain, &setup.filter, &[axis_row])?;
        let om = grid.omega_axis().points;
        let lambda_inc = column_centroid(&rows[0], &om, setup.centroid).map(|o| wavelength_of(ctx.omega_pump + o));
        let n_coh = match &setup.coherent_grid {
            Some(cg) => Some(coherent_amplitude(&ctx, cg, setup.gain, &setup.filter)?.norm_sqr()),
            None => None,
        };
        Ok(SweepRow {
            parameter: p,
            flag: lambda_inc.is_none().then(|| "empty collinear column".to_string()),
            lambda_inc,
            n_coh,
            n_inc: None,
            ridge_slope: None,
        })
    };
    run().unwrap_or_else(|e| failed_row(p, e))
}

/// Summary of one stochastic far field: photon numbers from the cube, λ_inc
/// and ridge slope from the walk-off slice.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticSummary {
    pub split: Split<Spectrum3D>,
    pub walkoff: Spectrum2D,
    pub orthogonal: Spectrum2D,
    pub centroids: RidgeCentroids,
    pub lambda_inc: Option<f64>,
    pub ridge_slope: Option<f64>,
}

pub fn summarize_far_field(
    s: &Spectrum3D,
    carrier: f64,
    radii: [f64; 3],
    slit: usize,
    centroid: CentroidMode,
) -> Result<StochasticSummary, AnalysisError> {
    let split = split_coherent_incoherent_3d(s, radii, None)?;
    let view = |plane| SpectrometerView {
        plane,
        slit,
        axes: AxisMode::Frequency,
    };
    let walkoff = slice_spectrum(&split.residual, &view(Plane::WalkOff), carrier)?;
    let orthogonal = slice_spectrum(&split.residual, &view(Plane::Orthogonal), carrier)?;
    let centroids = ridge_centroid(&walkoff, centroid)?;
    let lambda_inc = centroids.at_origin().map(|o| lambda_of_offset(carrier, o));
    let q_half = 0.5 * walkoff.axes[0].points.iter().fold(0.0f64, |m, q| m.max(q.abs()));
    let ridge_slope = centroids.slope(q_half);
    Ok(StochasticSummary {
        split,
        walkoff,
        orthogonal,
        centroids,
        lambda_inc,
        ridge_slope,
    })
}

fn stochastic_rows(setup: &SweepSetup, params: &[f64], kind: SweepParameter) -> Result<Vec<SweepRow>, AnalysisError> {
    let base = setup
        .run
        .as_ref()
        .ok_or_else(|| AnalysisError::Input("the stochastic engine needs a run configuration".into()))?;
    let prepared = prepare_fundamental(base)?;
    let mut rows = Vec::with_capacity(params.len());
    for &p in params {
        let (cfg, det) = match kind {
            SweepParameter::Detuning => (base.clone(), p),
            SweepParameter::SfgLength => {
                let mut c = base.clone();
                c.sfg.length = p;
                (c, base.detuning)
            }
        };
        let row = experiment_at(&cfg, &prepared, det)
            .map_err(AnalysisError::from)
            .and_then(|out| {
                summarize_far_field(&out.mean, cfg.grid.omega_pump, setup.mask_radii, setup.slit, setup.centroid)
            });
        rows.push(match row {
            Ok(s) => SweepRow {
                parameter: p,
                flag: s.lambda_inc.is_none().then(|| "empty collinear column".to_string()),
                lambda_inc: s.lambda_inc,
                n_coh: Some(s.split.n_coh.max(0.0)),
                n_inc: Some(s.split.n_inc.max(0.0)),
                ridge_slope: s.ridge_slope,
            },
            Err(e) => failed_row(p, e),
        });
    }
    Ok(rows)
}
