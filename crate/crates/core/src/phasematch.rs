//! Phase-matching functions of the PDC → SFG cascade and the closed-form
//! geometry derived from them: bandwidths, crossover lengths, the critical
//! detuning angle and the incoherent ridge `Σ: 𝒟^inc = 0`.

use serde::Serialize;
use thiserror::Error;

use crate::dispersion::{
    dispersion_sample, kz_extraordinary, kz_ordinary, omega_of, wavelength_of, CrystalParams, DispersionError,
    DispersionSample, Material, Mode, Polarization, SPEED_OF_LIGHT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseMatchError {
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error("mode (qx={qx:.4e}, qy={qy:.4e}, omega={omega:.4e}) is evanescent")]
    Evanescent { qx: f64, qy: f64, omega: f64 },
    #[error("singular bandwidth: {0}")]
    Singular(String),
    #[error("no root of the incoherent mismatch in the frequency window ({0})")]
    NoRoot(String),
    #[error("collinear tuning failed: {0}")]
    Tuning(String),
}

impl PhaseMatchError {
    fn evanescent(m: Mode) -> Self {
        PhaseMatchError::Evanescent {
            qx: m.qx,
            qy: m.qy,
            omega: m.omega,
        }
    }
}

/// Wavelength tolerance of the Σ root-finder (m).
pub const ROOT_TOLERANCE_WAVELENGTH: f64 = 1e-13;

/// Finds `θ` so that the collinear degenerate mismatch `2k₁ − k₀(θ)` vanishes,
/// by bisection on a bracket around `guess`.
pub fn tune_collinear(material: &Material, omega_pump: f64, guess: f64) -> Result<f64, PhaseMatchError> {
    let k1 = kz_ordinary(material, omega_pump / 2.0, Mode::ZERO)?
        .value()
        .ok_or_else(|| PhaseMatchError::Tuning("signal evanescent".into()))?;
    let f = |th: f64| -> Result<f64, PhaseMatchError> {
        let k0 = kz_extraordinary(material, omega_pump, th, Mode::ZERO)?
            .value()
            .ok_or_else(|| PhaseMatchError::Tuning("pump evanescent".into()))?;
        Ok(2.0 * k1 - k0)
    };
    let mut half = 0.05;
    let (mut lo, mut hi) = loop {
        let lo = (guess - half).max(1e-6);
        let hi = (guess + half).min(std::f64::consts::FRAC_PI_2 - 1e-6);
        if f(lo)? * f(hi)? <= 0.0 {
            break (lo, hi);
        }
        half *= 2.0;
        if half > 1.0 {
            return Err(PhaseMatchError::Tuning("no sign change of 2k1 - k0(theta)".into()));
        }
    };
    let flo = f(lo)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Both crystals of the cascade plus the cached carrier dispersion data.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseMatchContext {
    pub pdc: CrystalParams,
    pub sfg: CrystalParams,
    /// Pump / SFG carrier ω₀ (rad/s).
    pub omega_pump: f64,
    /// Degenerate signal carrier ω₁ = ω₀/2 (rad/s).
    pub omega_signal: f64,
    pub pdc_ordinary: DispersionSample,
    pub pdc_extraordinary: DispersionSample,
    pub sfg_ordinary: DispersionSample,
    pub sfg_extraordinary: DispersionSample,
    /// Pump wave number in the PDC crystal, k₀^PDC.
    pub k0_pdc: f64,
    /// Reference extraordinary wave number in the SFG crystal, k₀^SFG.
    pub k0_sfg: f64,
}

impl PhaseMatchContext {
    pub fn new(pdc: CrystalParams, sfg: CrystalParams, pump_wavelength: f64) -> Result<Self, PhaseMatchError> {
        pdc.validate()?;
        sfg.validate()?;
        let omega_pump = omega_of(pump_wavelength);
        let omega_signal = omega_pump / 2.0;
        let pdc_ordinary = dispersion_sample(&pdc.material, Polarization::Ordinary, pdc.theta, omega_signal)?;
        let pdc_extraordinary = dispersion_sample(&pdc.material, Polarization::Extraordinary, pdc.theta, omega_pump)?;
        let sfg_ordinary = dispersion_sample(&sfg.material, Polarization::Ordinary, sfg.theta, omega_signal)?;
        let sfg_extraordinary = dispersion_sample(&sfg.material, Polarization::Extraordinary, sfg.theta, omega_pump)?;
        let k0_pdc = kz_extraordinary(&pdc.material, omega_pump, pdc.theta, Mode::ZERO)?
            .value()
            .ok_or_else(|| PhaseMatchError::evanescent(Mode::ZERO))?;
        let k0_sfg = kz_extraordinary(&sfg.material, omega_pump, sfg.theta, Mode::ZERO)?
            .value()
            .ok_or_else(|| PhaseMatchError::evanescent(Mode::ZERO))?;
        Ok(Self {
            pdc,
            sfg,
            omega_pump,
            omega_signal,
            pdc_ordinary,
            pdc_extraordinary,
            sfg_ordinary,
            sfg_extraordinary,
            k0_pdc,
            k0_sfg,
        })
    }

    /// Copy with the SFG crystal rotated to `θ₀^PDC + detuning`.
    pub fn with_detuning(&self, detuning: f64) -> Result<Self, PhaseMatchError> {
        let mut sfg = self.sfg.clone();
        sfg.theta = self.pdc.theta + detuning;
        Self::new(self.pdc.clone(), sfg, wavelength_of(self.omega_pump))
    }

    /// Copy with a different SFG crystal length.
    pub fn with_sfg_length(&self, length: f64) -> Result<Self, PhaseMatchError> {
        let mut sfg = self.sfg.clone();
        sfg.length = length;
        Self::new(self.pdc.clone(), sfg, wavelength_of(self.omega_pump))
    }

    /// Copy with a different PDC crystal length.
    pub fn with_pdc_length(&self, length: f64) -> Result<Self, PhaseMatchError> {
        let mut pdc = self.pdc.clone();
        pdc.length = length;
        Self::new(pdc, self.sfg.clone(), wavelength_of(self.omega_pump))
    }

    pub fn detuning(&self) -> f64 {
        self.sfg.theta - self.pdc.theta
    }

    pub fn pump_wavelength(&self) -> f64 {
        wavelength_of(self.omega_pump)
    }

    /// Ordinary `k_z` of the signal in the PDC crystal.
    pub fn kz_signal_pdc(&self, m: Mode) -> Result<f64, PhaseMatchError> {
        kz_ordinary(&self.pdc.material, self.omega_signal, m)?
            .value()
            .ok_or_else(|| PhaseMatchError::evanescent(m))
    }

    /// Ordinary `k_z` of the fundamental in the SFG crystal.
    pub fn kz_signal_sfg(&self, m: Mode) -> Result<f64, PhaseMatchError> {
        kz_ordinary(&self.sfg.material, self.omega_signal, m)?
            .value()
            .ok_or_else(|| PhaseMatchError::evanescent(m))
    }

    /// Extraordinary `k_z` of the pump in the PDC crystal.
    pub fn kz_pump_pdc(&self, m: Mode) -> Result<f64, PhaseMatchError> {
        kz_extraordinary(&self.pdc.material, self.omega_pump, self.pdc.theta, m)?
            .value()
            .ok_or_else(|| PhaseMatchError::evanescent(m))
    }

    /// Extraordinary `k_z` of the generated field in the SFG crystal.
    pub fn kz_sum_sfg(&self, m: Mode) -> Result<f64, PhaseMatchError> {
        kz_extraordinary(&self.sfg.material, self.omega_pump, self.sfg.theta, m)?
            .value()
            .ok_or_else(|| PhaseMatchError::evanescent(m))
    }

    /// `ΔPDC(w) = k₁z(w) + k₁z(−w) − k₀^PDC`.
    pub fn delta_pdc(&self, w: Mode) -> Result<f64, PhaseMatchError> {
        Ok(self.kz_signal_pdc(w)? + self.kz_signal_pdc(-w)? - self.k0_pdc)
    }

    /// Two-mode SFG mismatch `Δ(w, w′) = k₁z(w) + k₁z(w′) − k₀z(w + w′)`.
    pub fn delta_sfg_pair(&self, w: Mode, w2: Mode) -> Result<f64, PhaseMatchError> {
        Ok(self.kz_signal_sfg(w)? + self.kz_signal_sfg(w2)? - self.kz_sum_sfg(w + w2)?)
    }

    /// `ΔSFG(w) = Δ(w, −w)`.
    pub fn delta_sfg(&self, w: Mode) -> Result<f64, PhaseMatchError> {
        self.delta_sfg_pair(w, -w)
    }

    /// Incoherent mismatch `𝒟^inc(w) = k₀^PDC − k₀z(w) + k₁′Ω`, exact `k₀z`.
    pub fn d_inc(&self, w: Mode) -> Result<f64, PhaseMatchError> {
        Ok(self.k0_pdc - self.kz_sum_sfg(w)? + self.sfg_ordinary.k1 * w.omega)
    }

    /// Linearized `𝒟^inc·l_c′` (the Σ′ plane).
    pub fn d_inc_linear(&self, w: Mode) -> f64 {
        let l = self.sfg.length;
        (self.k0_pdc - self.k0_sfg) * l + self.sfg_extraordinary.walkoff * l * w.qx
            - (self.sfg_extraordinary.k1 - self.sfg_ordinary.k1) * l * w.omega
    }

    pub fn bandwidths(&self) -> Result<Bandwidths, PhaseMatchError> {
        let lc = self.pdc.length;
        let lp = self.sfg.length;
        let o = &self.pdc_ordinary;
        if !(o.k2 > 0.0) {
            return Err(PhaseMatchError::Singular(format!("k1'' = {} <= 0", o.k2)));
        }
        let gvm = self.group_velocity_mismatch();
        if !(gvm > 0.0) {
            return Err(PhaseMatchError::Singular(format!("k0' - k1' = {gvm} <= 0")));
        }
        let rho = self.sfg_extraordinary.walkoff;
        if !(rho > 0.0) {
            return Err(PhaseMatchError::Singular(format!("walk-off {rho} <= 0")));
        }
        Ok(Bandwidths {
            omega_d: (1.0 / (o.k2 * lc)).sqrt(),
            q_d: (o.k / lc).sqrt(),
            omega_gvm: 1.0 / (gvm * lp),
            q_sw: 1.0 / (rho * lp),
        })
    }

    /// `k₀′ − k₁′` in the SFG crystal.
    pub fn group_velocity_mismatch(&self) -> f64 {
        self.sfg_extraordinary.k1 - self.sfg_ordinary.k1
    }

    /// SFG lengths above which the sinc² factor is narrower than the PDC
    /// self-convolution: `q_SW = q_D` and `Ω_GVM = Ω_D` respectively.
    pub fn threshold_lengths(&self) -> Result<ThresholdLengths, PhaseMatchError> {
        self.bandwidths()?;
        let lc = self.pdc.length;
        let o = &self.pdc_ordinary;
        Ok(ThresholdLengths {
            spatial_walkoff: (lc / o.k).sqrt() / self.sfg_extraordinary.walkoff,
            group_velocity: (o.k2 * lc).sqrt() / self.group_velocity_mismatch(),
        })
    }

    /// Detuning at which the coherent SFG yield has dropped by about 10×.
    pub fn critical_angle(&self, g: f64) -> f64 {
        let e = &self.sfg_extraordinary;
        2.0 * (std::f64::consts::PI.powi(2) + g * g).sqrt() / (e.walkoff * e.k * self.sfg.length)
    }

    /// Frequency offset of Σ at `q = (qx, qy)`: root of `𝒟^inc(q, Ω) = 0`.
    pub fn sigma_root(&self, qx: f64, qy: f64) -> Result<f64, PhaseMatchError> {
        let gvm = self.group_velocity_mismatch();
        let rho = self.sfg_extraordinary.walkoff;
        let guess = ((self.k0_pdc - self.k0_sfg) + rho * qx) / gvm;
        let bw = self.bandwidths()?;
        let f = |om: f64| self.d_inc(Mode::new(qx, qy, om));
        let (om_min, om_max) = self.sum_window();
        // 𝒟^inc decreases through the physical root (slope −(k₀′ − k₁′)); far
        // from tuning a second, increasing crossing appears, so scan the
        // bracket for the decreasing sign change nearest the linear guess
        let mut half = 3.0 * 2.0 * std::f64::consts::PI * bw.omega_gvm;
        let (mut lo, mut hi);
        loop {
            let a = (guess - half).max(om_min);
            let b = (guess + half).min(om_max);
            let n = 128;
            let mut prev: Option<(f64, f64)> = None;
            let mut best: Option<(f64, f64)> = None;
            for i in 0..=n {
                let om = a + (b - a) * i as f64 / n as f64;
                let Ok(v) = f(om) else {
                    prev = None;
                    continue;
                };
                if let Some((om_p, v_p)) = prev {
                    if v_p >= 0.0 && v <= 0.0 {
                        let d = (0.5 * (om_p + om) - guess).abs();
                        if best.is_none_or(|(x, y)| d < (0.5 * (x + y) - guess).abs()) {
                            best = Some((om_p, om));
                        }
                    }
                }
                prev = Some((om, v));
            }
            if let Some((x, y)) = best {
                lo = x;
                hi = y;
                break;
            }
            if a <= om_min && b >= om_max {
                return Err(PhaseMatchError::NoRoot(format!(
                    "qx={qx:.3e}, detuning={:.4e} rad",
                    self.detuning()
                )));
            }
            half *= 2.0;
        }
        let mut flo = f(lo)?;
        // bisection until the bracket spans less than the wavelength tolerance
        let tol = self.omega_pump * ROOT_TOLERANCE_WAVELENGTH / self.pump_wavelength() * 1e-3;
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if fm == 0.0 {
                return Ok(mid);
            }
            if (fm > 0.0) == (flo > 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
            if hi - lo < tol {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Frequency-offset window in which the SFG field stays inside the
    /// Sellmeier validity range.
    fn sum_window(&self) -> (f64, f64) {
        let s = &self.sfg.material.extraordinary;
        let o = &self.sfg.material.ordinary;
        let min_um = s.min_um.max(o.min_um);
        let max_um = s.max_um.min(o.max_um);
        (
            omega_of(max_um * 1e-6) - self.omega_pump,
            omega_of(min_um * 1e-6) - self.omega_pump,
        )
    }

    /// Σ′ frequency at `qx`: `Ω = Ω_GVM[q_x/q_SW + (k₀^PDC − k₀^SFG)l_c′]`.
    pub fn sigma_prime(&self, qx: f64) -> f64 {
        let gvm = self.group_velocity_mismatch();
        ((self.k0_pdc - self.k0_sfg) + self.sfg_extraordinary.walkoff * qx) / gvm
    }

    /// Central wavelength of the incoherent ridge on the collinear axis for
    /// the SFG crystal detuned by `detuning` (rad).
    pub fn lambda_inc(&self, detuning: f64) -> Result<f64, PhaseMatchError> {
        let ctx = self.with_detuning(detuning)?;
        let om = ctx.sigma_root(0.0, 0.0)?;
        Ok(wavelength_of(ctx.omega_pump + om))
    }

    /// Small-angle slope `dλ_inc/dΔθ = −n₀ρ₀λ₀ / (c(k₀′ − k₁′))`, with `n₀`
    /// taken at `(θ₀^PDC, λ₀)`.
    pub fn lambda_inc_slope_linear(&self) -> f64 {
        let n0 = self.k0_pdc * SPEED_OF_LIGHT / self.omega_pump;
        -n0 * self.pdc_extraordinary.walkoff * self.pump_wavelength() / (SPEED_OF_LIGHT * self.group_velocity_mismatch())
    }

    /// Exact Σ and linear Σ′ sampled at the given `qx` values (qy = 0).
    pub fn sigma_curves(&self, qx: &[f64]) -> Vec<SigmaPoint> {
        qx.iter()
            .map(|&q| SigmaPoint {
                qx: q,
                omega_exact: self.sigma_root(q, 0.0).ok(),
                omega_linear: self.sigma_prime(q),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bandwidths {
    /// Ω_D (rad/s)
    pub omega_d: f64,
    /// q_D (1/m)
    pub q_d: f64,
    /// Ω_GVM (rad/s)
    pub omega_gvm: f64,
    /// q_SW (1/m)
    pub q_sw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdLengths {
    /// l_SW (m)
    pub spatial_walkoff: f64,
    /// l_GVM (m)
    pub group_velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaPoint {
    pub qx: f64,
    pub omega_exact: Option<f64>,
    pub omega_linear: f64,
}
