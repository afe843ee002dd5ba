//! Run configuration: a TOML document whose physical values carry units.
//! Every key is optional and falls back to the documented default; unknown
//! keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{CentroidMode, Engine, SweepSetup};
use crate::dispersion::{omega_of, CrystalParams, Material, SellmeierSet};
use crate::phasematch::{tune_collinear, PhaseMatchContext};
use crate::pwpa::{BoxFilter, CoherentGrid, Plane, PlaneGrid};
use crate::simulator::{FilterWindow, GridSpec, PumpPulse, RunConfig};
use crate::units::{format_quantity, parse_quantity, parse_quantity_in, Dimension};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("`{path}`: {message} (hint: {hint})")]
    Invalid {
        path: String,
        message: String,
        hint: String,
    },
}

fn invalid(path: &str, message: impl Into<String>, hint: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
        hint: hint.into(),
    }
}

// --- raw text schema -------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDoc {
    material: RawMaterial,
    pump: RawPump,
    pdc: RawPdc,
    sfg: RawSfg,
    filter: RawFilter,
    grid: RawGrid,
    plane: RawPlane,
    coherent: RawCoherent,
    run: RawRun,
    analysis: RawAnalysis,
    sweep: RawSweep,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMaterial {
    name: Option<String>,
    ordinary: Option<RawSellmeier>,
    extraordinary: Option<RawSellmeier>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSellmeier {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    min: String,
    max: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPump {
    wavelength: Option<String>,
    waist: Option<String>,
    duration: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPdc {
    length: Option<String>,
    /// "auto" (collinear degenerate tuning) or an angle
    theta: Option<String>,
    gain: Option<f64>,
    sigma: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSfg {
    length: Option<String>,
    detuning: Option<String>,
    sigma: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawFilter {
    lambda_min: Option<String>,
    lambda_max: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawGrid {
    n: Option<[usize; 3]>,
    dq: Option<String>,
    domega: Option<String>,
    resolution: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPlane {
    n_q: Option<usize>,
    n_omega: Option<usize>,
    stripe: Option<usize>,
    resolution: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCoherent {
    n_q: Option<usize>,
    n_omega: Option<usize>,
    resolution: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawRun {
    seed: Option<u64>,
    realizations: Option<usize>,
    steps_per_crystal: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawAnalysis {
    plane: Option<String>,
    slit: Option<usize>,
    /// cells, or "auto" for the pump footprint
    mask_radius: Option<toml::Value>,
    footprint_floor: Option<f64>,
    truncate: Option<f64>,
    centroid: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSweep {
    /// "START:STEP:END unit"
    angles: Option<String>,
    engine: Option<String>,
}

// --- validated document ----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PumpSection {
    pub wavelength: f64,
    pub waist: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdcSection {
    pub length: f64,
    /// `None`: tuned for collinear degenerate phase matching
    pub theta: Option<f64>,
    pub gain: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SfgSection {
    pub length: f64,
    pub detuning: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSection {
    pub n: [usize; 3],
    /// explicit spacings override `resolution`
    pub dq: Option<f64>,
    pub domega: Option<f64>,
    /// spacing as a fraction of `q_SW` / `Ω_GVM` of the SFG crystal
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneSection {
    pub n_q: usize,
    pub n_omega: usize,
    pub stripe: usize,
    /// spacing as a fraction of `min(q_SW, q_D)` / `min(Ω_GVM, Ω_D)`
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherentSection {
    pub n_q: usize,
    pub n_omega: usize,
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub seed: u64,
    pub realizations: usize,
    pub steps_per_crystal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MaskRadius {
    /// pump spectral footprint down to `footprint_floor`
    Auto,
    Cells(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CentroidKind {
    Full,
    /// ±2π·Ω_GVM around the column maximum
    PeakWindow,
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSection {
    pub plane: Plane,
    pub slit: usize,
    pub mask_radius: MaskRadius,
    pub footprint_floor: f64,
    pub truncate: f64,
    pub centroid: CentroidKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSection {
    /// rad
    pub angles: Vec<f64>,
    pub angle_range: (f64, f64, f64),
    pub engine: Engine,
}

/// Validated configuration in SI units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigDocument {
    pub material: Material,
    pub pump: PumpSection,
    pub pdc: PdcSection,
    pub sfg: SfgSection,
    pub filter: FilterWindow,
    pub grid: GridSection,
    pub plane: PlaneSection,
    pub coherent: CoherentSection,
    pub run: RunSection,
    pub analysis: AnalysisSection,
    pub sweep: SweepSection,
}

fn quantity(path: &str, text: Option<&String>, default: &str, dim: Dimension) -> Result<f64, ConfigError> {
    let t = text.map(String::as_str).unwrap_or(default);
    parse_quantity(t, dim).map_err(|e| invalid(path, e.to_string(), format!("write a number and a unit, e.g. \"{default}\"")))
}

fn positive(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(path, format!("{v} must be positive"), "use a value > 0"))
    }
}

/// `START:STEP:END` inclusive, in the given dimension (unit applies to all
/// three numbers, e.g. `"-2:0.5:2 deg"`; a bare range means degrees).
pub fn parse_range(text: &str, dim: Dimension) -> Result<(f64, f64, f64), String> {
    let t = text.trim();
    let (nums, unit) = match t.find(char::is_whitespace) {
        Some(i) => (&t[..i], t[i..].trim()),
        None => (t, "deg"),
    };
    let parts: Vec<&str> = nums.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("`{text}` is not START:STEP:END"));
    }
    let mut v = [0.0; 3];
    for (x, p) in v.iter_mut().zip(&parts) {
        *x = parse_quantity(&format!("{p} {unit}"), dim).map_err(|e| e.to_string())?;
    }
    if !(v[1] > 0.0) || v[2] < v[0] {
        return Err(format!("`{text}`: need STEP > 0 and END ≥ START"));
    }
    Ok((v[0], v[1], v[2]))
}

/// Inclusive samples of a range; the end point is kept despite rounding.
pub fn range_values(start: f64, step: f64, end: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

pub const DEFAULT_TOML: &str = "";

impl ConfigDocument {
    /// All defaults: BBO, the published pump and crystal parameters, CI grid.
    pub fn bbo_defaults() -> Self {
        parse_config(DEFAULT_TOML).expect("defaults are valid")
    }

    /// Collinear degenerate tuning of the PDC crystal, or the configured angle.
    pub fn pdc_theta(&self) -> Result<f64, ConfigError> {
        match self.pdc.theta {
            Some(t) => Ok(t),
            None => tune_collinear(&self.material, omega_of(self.pump.wavelength), 23f64.to_radians())
                .map_err(|e| invalid("pdc.theta", e.to_string(), "give an explicit angle")),
        }
    }

    pub fn crystals(&self) -> Result<(CrystalParams, CrystalParams), ConfigError> {
        let th = self.pdc_theta()?;
        let pdc = CrystalParams::new(self.material.clone(), self.pdc.length, th, self.pdc.sigma, self.pdc.gain)
            .map_err(|e| invalid("pdc", e.to_string(), "check length, theta, sigma, gain"))?;
        let sfg = CrystalParams::new(self.material.clone(), self.sfg.length, th, self.sfg.sigma, 0.0)
            .map_err(|e| invalid("sfg", e.to_string(), "check length and sigma"))?;
        Ok((pdc, sfg))
    }

    /// Context with the SFG crystal at the configured detuning.
    pub fn context(&self) -> Result<PhaseMatchContext, ConfigError> {
        let (pdc, sfg) = self.crystals()?;
        PhaseMatchContext::new(pdc, sfg, self.pump.wavelength)
            .and_then(|c| c.with_detuning(self.sfg.detuning))
            .map_err(|e| invalid("sfg.detuning", e.to_string(), "reduce the detuning"))
    }

    pub fn tuned_context(&self) -> Result<PhaseMatchContext, ConfigError> {
        let (pdc, sfg) = self.crystals()?;
        PhaseMatchContext::new(pdc, sfg, self.pump.wavelength).map_err(|e| invalid("pdc", e.to_string(), "check the crystal"))
    }

    pub fn box_filter(&self) -> BoxFilter {
        BoxFilter::from_wavelengths(omega_of(self.pump.wavelength) / 2.0, self.filter.lambda_min, self.filter.lambda_max)
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        let ctx = self.context()?;
        let bw = ctx.bandwidths().map_err(|e| invalid("sfg", e.to_string(), "check the SFG crystal"))?;
        let dq = self.grid.dq.unwrap_or(self.grid.resolution * bw.q_sw);
        let domega = self.grid.domega.unwrap_or(self.grid.resolution * bw.omega_gvm);
        let g = GridSpec::from_spectral(self.grid.n, dq, domega, ctx.omega_pump)
            .map_err(|e| invalid("grid.n", e.to_string(), "use powers of two"))?;
        g.check_resolution(&ctx).map_err(|e| {
            let key = if e.to_string().contains("q_SW") { "grid.dq" } else { "grid.domega" };
            invalid(key, e.to_string(), "reduce the spacing or the grid.resolution fraction")
        })?;
        Ok(g)
    }

    pub fn pump_pulse(&self) -> Result<PumpPulse, ConfigError> {
        let (pdc, _) = self.crystals()?;
        PumpPulse::calibrated(self.pump.waist, self.pump.duration, self.pump.wavelength, &pdc)
            .map_err(|e| invalid("pump", e.to_string(), "check waist, duration and pdc.sigma"))
    }

    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        let (pdc, sfg) = self.crystals()?;
        let cfg = RunConfig {
            grid: self.grid_spec()?,
            pdc,
            sfg,
            detuning: self.sfg.detuning,
            pump: self.pump_pulse()?,
            filter: self.filter,
            steps_per_crystal: self.run.steps_per_crystal,
            seed: self.run.seed,
            realizations: self.run.realizations,
        };
        cfg.validate().map_err(|e| invalid("run", e.to_string(), "see the message"))?;
        Ok(cfg)
    }

    fn pwpa_scales(&self, ctx: &PhaseMatchContext) -> Result<(f64, f64), ConfigError> {
        let bw = ctx.bandwidths().map_err(|e| invalid("sfg", e.to_string(), "check the SFG crystal"))?;
        Ok((bw.q_sw.min(bw.q_d), bw.omega_gvm.min(bw.omega_d)))
    }

    pub fn plane_grid(&self, plane: Plane) -> Result<PlaneGrid, ConfigError> {
        let ctx = self.context()?;
        let (q, o) = self.pwpa_scales(&ctx)?;
        let g = PlaneGrid {
            plane,
            n_q: self.plane.n_q,
            n_omega: self.plane.n_omega,
            dq: self.plane.resolution * q,
            domega: self.plane.resolution * o,
            stripe: self.plane.stripe,
        };
        g.validate().map_err(|e| invalid("plane", e.to_string(), "use even sizes and an odd stripe"))?;
        Ok(g)
    }

    pub fn coherent_grid(&self) -> Result<CoherentGrid, ConfigError> {
        let ctx = self.context()?;
        let (q, o) = self.pwpa_scales(&ctx)?;
        Ok(CoherentGrid {
            n_q: self.coherent.n_q,
            n_omega: self.coherent.n_omega,
            dq: self.coherent.resolution * q,
            domega: self.coherent.resolution * o,
        })
    }

    pub fn mask_radii(&self) -> Result<[f64; 3], ConfigError> {
        Ok(match self.analysis.mask_radius {
            MaskRadius::Cells(r) => [r; 3],
            MaskRadius::Auto => {
                crate::analysis::pump_footprint_radii(&self.grid_spec()?, &self.pump_pulse()?, self.analysis.footprint_floor)
            }
        })
    }

    pub fn centroid_mode(&self) -> Result<CentroidMode, ConfigError> {
        Ok(match self.analysis.centroid {
            CentroidKind::Full => CentroidMode::Full,
            CentroidKind::Argmax => CentroidMode::Argmax,
            CentroidKind::PeakWindow => {
                let bw = self
                    .context()?
                    .bandwidths()
                    .map_err(|e| invalid("sfg", e.to_string(), "check the SFG crystal"))?;
                CentroidMode::PeakWindow {
                    half_width: std::f64::consts::TAU * bw.omega_gvm,
                }
            }
        })
    }

    /// Everything the sweep engines need; the stochastic part only if its
    /// run configuration validates.
    pub fn sweep_setup(&self, engine: Engine) -> Result<SweepSetup, ConfigError> {
        let ctx = self.tuned_context()?;
        let (plane_grid, coherent_grid, run) = match engine {
            Engine::Analytic => (None, None, None),
            Engine::Pwpa => (Some(self.plane_grid(Plane::WalkOff)?), Some(self.coherent_grid()?), None),
            Engine::Stochastic => (None, None, Some(self.run_config()?)),
        };
        let mask_radii = if engine == Engine::Stochastic {
            self.mask_radii()?
        } else {
            [crate::analysis::DEFAULT_MASK_RADIUS; 3]
        };
        Ok(SweepSetup {
            gain: self.pdc.gain,
            filter: self.box_filter(),
            ctx,
            plane_grid,
            coherent_grid,
            run,
            centroid: self.centroid_mode()?,
            mask_radii,
            slit: self.analysis.slit,
        })
    }

    /// Canonical TOML with every key present and SI units; parses back to
    /// an identical document.
    pub fn echo(&self) -> String {
        let q = format_quantity;
        let sm = |s: &SellmeierSet| RawSellmeier {
            a: s.a,
            b: s.b,
            c: s.c,
            d: s.d,
            min: format!("{:?} um", s.min_um),
            max: format!("{:?} um", s.max_um),
        };
        let (a0, st, a1) = self.sweep.angle_range;
        let raw = RawDoc {
            material: RawMaterial {
                name: Some(self.material.name.clone()),
                ordinary: Some(sm(&self.material.ordinary)),
                extraordinary: Some(sm(&self.material.extraordinary)),
            },
            pump: RawPump {
                wavelength: Some(q(self.pump.wavelength, Dimension::Length)),
                waist: Some(q(self.pump.waist, Dimension::Length)),
                duration: Some(q(self.pump.duration, Dimension::Time)),
            },
            pdc: RawPdc {
                length: Some(q(self.pdc.length, Dimension::Length)),
                theta: Some(match self.pdc.theta {
                    None => "auto".into(),
                    Some(t) => q(t, Dimension::Angle),
                }),
                gain: Some(self.pdc.gain),
                sigma: Some(q(self.pdc.sigma, Dimension::Coupling)),
            },
            sfg: RawSfg {
                length: Some(q(self.sfg.length, Dimension::Length)),
                detuning: Some(q(self.sfg.detuning, Dimension::Angle)),
                sigma: Some(q(self.sfg.sigma, Dimension::Coupling)),
            },
            filter: RawFilter {
                lambda_min: Some(q(self.filter.lambda_min, Dimension::Length)),
                lambda_max: Some(q(self.filter.lambda_max, Dimension::Length)),
            },
            grid: RawGrid {
                n: Some(self.grid.n),
                dq: self.grid.dq.map(|v| q(v, Dimension::Wavenumber)),
                domega: self.grid.domega.map(|v| q(v, Dimension::AngularFrequency)),
                resolution: Some(self.grid.resolution),
            },
            plane: RawPlane {
                n_q: Some(self.plane.n_q),
                n_omega: Some(self.plane.n_omega),
                stripe: Some(self.plane.stripe),
                resolution: Some(self.plane.resolution),
            },
            coherent: RawCoherent {
                n_q: Some(self.coherent.n_q),
                n_omega: Some(self.coherent.n_omega),
                resolution: Some(self.coherent.resolution),
            },
            run: RawRun {
                seed: Some(self.run.seed),
                realizations: Some(self.run.realizations),
                steps_per_crystal: Some(self.run.steps_per_crystal),
            },
            analysis: RawAnalysis {
                plane: Some(plane_code(self.analysis.plane).into()),
                slit: Some(self.analysis.slit),
                mask_radius: Some(match self.analysis.mask_radius {
                    MaskRadius::Auto => toml::Value::String("auto".into()),
                    MaskRadius::Cells(r) => toml::Value::Float(r),
                }),
                footprint_floor: Some(self.analysis.footprint_floor),
                truncate: Some(self.analysis.truncate),
                centroid: Some(
                    match self.analysis.centroid {
                        CentroidKind::Full => "full",
                        CentroidKind::PeakWindow => "peak_window",
                        CentroidKind::Argmax => "argmax",
                    }
                    .into(),
                ),
            },
            sweep: RawSweep {
                angles: Some(format!("{a0:?}:{st:?}:{a1:?} rad")),
                engine: Some(self.sweep.engine.name().into()),
            },
        };
        toml::to_string(&raw).expect("config serializes")
    }

    /// SHA-256 of the canonical echo, hex encoded.
    pub fn hash(&self) -> String {
        hex(&self.hash_bytes())
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        Sha256::digest(self.echo().as_bytes()).into()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn plane_code(p: Plane) -> &'static str {
    match p {
        Plane::WalkOff => "xw",
        Plane::Orthogonal => "yw",
    }
}

pub fn parse_plane(s: &str) -> Option<Plane> {
    match s {
        "xw" | "walkoff" | "walk-off" => Some(Plane::WalkOff),
        "yw" | "orthogonal" => Some(Plane::Orthogonal),
        _ => None,
    }
}

pub fn parse_engine(s: &str) -> Option<Engine> {
    match s {
        "analytic" => Some(Engine::Analytic),
        "pwpa" => Some(Engine::Pwpa),
        "stochastic" => Some(Engine::Stochastic),
        _ => None,
    }
}

fn sellmeier(path: &str, raw: &Option<RawSellmeier>, default: &SellmeierSet) -> Result<SellmeierSet, ConfigError> {
    let Some(r) = raw else {
        return Ok(default.clone());
    };
    let um = |key: &str, t: &str| {
        parse_quantity_in(t, Dimension::Length, "um")
            .map_err(|e| invalid(&format!("{path}.{key}"), e.to_string(), "write e.g. \"0.4 um\""))
    };
    let (min, max) = (um("min", &r.min)?, um("max", &r.max)?);
    SellmeierSet::new(r.a, r.b, r.c, r.d, min, max)
        .map_err(|e| invalid(path, e.to_string(), "check the Sellmeier coefficients"))
}

fn size(path: &str, v: Option<usize>, default: usize) -> Result<usize, ConfigError> {
    let n = v.unwrap_or(default);
    if n == 0 {
        return Err(invalid(path, "must be ≥ 1", "use a positive count"));
    }
    Ok(n)
}

/// Parses and validates a configuration document. Resolution preconditions
/// of the simulation grid are checked against the configured crystals.
pub fn parse_config(text: &str) -> Result<ConfigDocument, ConfigError> {
    let raw: RawDoc = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let bbo = Material::bbo();
    let material = Material {
        name: raw.material.name.clone().unwrap_or_else(|| bbo.name.clone()),
        ordinary: sellmeier("material.ordinary", &raw.material.ordinary, &bbo.ordinary)?,
        extraordinary: sellmeier("material.extraordinary", &raw.material.extraordinary, &bbo.extraordinary)?,
    };
    let p = &raw.pump;
    let pump = PumpSection {
        wavelength: positive(
            "pump.wavelength",
            quantity("pump.wavelength", p.wavelength.as_ref(), "527.5 nm", Dimension::Length)?,
        )?,
        waist: positive("pump.waist", quantity("pump.waist", p.waist.as_ref(), "500 um", Dimension::Length)?)?,
        duration: positive("pump.duration", quantity("pump.duration", p.duration.as_ref(), "1 ps", Dimension::Time)?)?,
    };
    let pdc = PdcSection {
        length: positive("pdc.length", quantity("pdc.length", raw.pdc.length.as_ref(), "4 mm", Dimension::Length)?)?,
        theta: match raw.pdc.theta.as_deref() {
            None | Some("auto") => None,
            Some(t) => Some(quantity("pdc.theta", Some(&t.to_string()), "22.9 deg", Dimension::Angle)?),
        },
        gain: raw.pdc.gain.unwrap_or(9.3),
        sigma: quantity("pdc.sigma", raw.pdc.sigma.as_ref(), "0.01 1/m", Dimension::Coupling)?,
    };
    if !(pdc.gain >= 0.0) {
        return Err(invalid("pdc.gain", "must be ≥ 0", "use the parametric gain g, e.g. 9.3"));
    }
    let sfg = SfgSection {
        length: positive("sfg.length", quantity("sfg.length", raw.sfg.length.as_ref(), "4 mm", Dimension::Length)?)?,
        detuning: quantity("sfg.detuning", raw.sfg.detuning.as_ref(), "0 deg", Dimension::Angle)?,
        sigma: quantity("sfg.sigma", raw.sfg.sigma.as_ref(), "0.3 1/m", Dimension::Coupling)?,
    };
    let filter = FilterWindow {
        lambda_min: quantity("filter.lambda_min", raw.filter.lambda_min.as_ref(), "750 nm", Dimension::Length)?,
        lambda_max: quantity("filter.lambda_max", raw.filter.lambda_max.as_ref(), "1300 nm", Dimension::Length)?,
    };
    let (lo, hi) = (material.ordinary.min_um * 1e-6, material.ordinary.max_um * 1e-6);
    if !(filter.lambda_min < filter.lambda_max && filter.lambda_min >= lo * (1.0 - 1e-12) && filter.lambda_max <= hi * (1.0 + 1e-12)) {
        return Err(invalid(
            "filter",
            format!(
                "window [{:e}, {:e}] m must be ordered and inside the dispersion validity [{lo:e}, {hi:e}] m",
                filter.lambda_min, filter.lambda_max
            ),
            "narrow the filter window",
        ));
    }
    let grid = GridSection {
        n: raw.grid.n.unwrap_or([64, 64, 256]),
        dq: raw
            .grid
            .dq
            .as_ref()
            .map(|t| quantity("grid.dq", Some(t), "1e3 1/m", Dimension::Wavenumber))
            .transpose()?,
        domega: raw
            .grid
            .domega
            .as_ref()
            .map(|t| quantity("grid.domega", Some(t), "7e11 rad/s", Dimension::AngularFrequency))
            .transpose()?,
        resolution: positive("grid.resolution", raw.grid.resolution.unwrap_or(0.24))?,
    };
    let plane = PlaneSection {
        n_q: size("plane.n_q", raw.plane.n_q, 128)?,
        n_omega: size("plane.n_omega", raw.plane.n_omega, 128)?,
        stripe: size("plane.stripe", raw.plane.stripe, 3)?,
        resolution: positive("plane.resolution", raw.plane.resolution.unwrap_or(0.2))?,
    };
    let coherent = CoherentSection {
        n_q: size("coherent.n_q", raw.coherent.n_q, 512)?,
        n_omega: size("coherent.n_omega", raw.coherent.n_omega, 1024)?,
        resolution: positive("coherent.resolution", raw.coherent.resolution.unwrap_or(0.24))?,
    };
    let run = RunSection {
        seed: raw.run.seed.unwrap_or(1),
        realizations: size("run.realizations", raw.run.realizations, 1)?,
        steps_per_crystal: size("run.steps_per_crystal", raw.run.steps_per_crystal, 200)?,
    };
    let a = &raw.analysis;
    let analysis = AnalysisSection {
        plane: match a.plane.as_deref() {
            None => Plane::WalkOff,
            Some(s) => parse_plane(s).ok_or_else(|| invalid("analysis.plane", format!("unknown plane `{s}`"), "use xw or yw"))?,
        },
        slit: size("analysis.slit", a.slit, 1)?,
        mask_radius: match &a.mask_radius {
            None => MaskRadius::Auto,
            Some(toml::Value::String(s)) if s == "auto" => MaskRadius::Auto,
            Some(toml::Value::Float(r)) => MaskRadius::Cells(positive("analysis.mask_radius", *r)?),
            Some(toml::Value::Integer(r)) => MaskRadius::Cells(positive("analysis.mask_radius", *r as f64)?),
            Some(other) => {
                return Err(invalid(
                    "analysis.mask_radius",
                    format!("unsupported value {other}"),
                    "use a number of cells or \"auto\"",
                ))
            }
        },
        footprint_floor: a.footprint_floor.unwrap_or(1e-6),
        truncate: a.truncate.unwrap_or(crate::analysis::DEFAULT_TRUNCATION),
        centroid: match a.centroid.as_deref() {
            None | Some("full") => CentroidKind::Full,
            Some("peak_window") => CentroidKind::PeakWindow,
            Some("argmax") => CentroidKind::Argmax,
            Some(s) => {
                return Err(invalid(
                    "analysis.centroid",
                    format!("unknown centroid `{s}`"),
                    "use full, peak_window or argmax",
                ))
            }
        },
    };
    if !(analysis.footprint_floor > 0.0 && analysis.footprint_floor < 1.0) {
        return Err(invalid("analysis.footprint_floor", "must lie in (0, 1)", "e.g. 1e-6"));
    }
    if !(analysis.truncate > 0.0 && analysis.truncate <= 1.0) {
        return Err(invalid("analysis.truncate", "must lie in (0, 1]", "e.g. 5e-4"));
    }
    let angle_text = raw.sweep.angles.clone().unwrap_or_else(|| "-2:0.5:2 deg".into());
    let angle_range =
        parse_range(&angle_text, Dimension::Angle).map_err(|e| invalid("sweep.angles", e, "e.g. \"-2:0.5:2 deg\""))?;
    let sweep = SweepSection {
        angles: range_values(angle_range.0, angle_range.1, angle_range.2),
        angle_range,
        engine: match raw.sweep.engine.as_deref() {
            None => Engine::Analytic,
            Some(s) => parse_engine(s)
                .ok_or_else(|| invalid("sweep.engine", format!("unknown engine `{s}`"), "use analytic, pwpa or stochastic"))?,
        },
    };
    let doc = ConfigDocument {
        material,
        pump,
        pdc,
        sfg,
        filter,
        grid,
        plane,
        coherent,
        run,
        analysis,
        sweep,
    };
    doc.crystals()?;
    doc.grid_spec()?;
    Ok(doc)
}
