//! Birefringent dispersion of a negative uniaxial crystal.
//!
//! Wavelengths are in meters everywhere except inside [`SellmeierSet`], whose
//! coefficients follow the usual micrometer convention. Frequencies are
//! angular (rad/s); a [`Mode`] carries the offset `Ω` from a carrier.

use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("wavelength {wavelength_um:.4} um outside Sellmeier validity window [{min_um}, {max_um}] um")]
    OutOfWindow {
        wavelength_um: f64,
        min_um: f64,
        max_um: f64,
    },
    #[error("invalid Sellmeier set: {0}")]
    InvalidSellmeier(String),
    #[error("invalid crystal parameter: {0}")]
    InvalidCrystal(String),
}

/// Converts an angular frequency to a vacuum wavelength in meters.
pub fn wavelength_of(omega: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / omega
}

/// Converts a vacuum wavelength in meters to an angular frequency.
pub fn omega_of(wavelength: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / wavelength
}

/// Principal-index Sellmeier form `n²(λ) = a + b/(λ² − c) − d·λ²`, λ in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SellmeierSet {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Validity window in µm.
    pub min_um: f64,
    pub max_um: f64,
}

impl SellmeierSet {
    const CHECK_SAMPLES: usize = 64;

    pub fn new(a: f64, b: f64, c: f64, d: f64, min_um: f64, max_um: f64) -> Result<Self, DispersionError> {
        let set = Self { a, b, c, d, min_um, max_um };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), DispersionError> {
        if !(self.min_um > 0.0 && self.max_um > self.min_um) {
            return Err(DispersionError::InvalidSellmeier(format!(
                "window [{}, {}] um is empty",
                self.min_um, self.max_um
            )));
        }
        if self.c >= 0.0 && self.c.sqrt() >= self.min_um && self.c.sqrt() <= self.max_um {
            return Err(DispersionError::InvalidSellmeier(format!(
                "pole at {} um inside validity window",
                self.c.sqrt()
            )));
        }
        for i in 0..=Self::CHECK_SAMPLES {
            let l = self.min_um + (self.max_um - self.min_um) * i as f64 / Self::CHECK_SAMPLES as f64;
            let n2 = self.n_squared_unchecked(l);
            if !(n2 > 1.0) || !n2.is_finite() {
                return Err(DispersionError::InvalidSellmeier(format!("n^2 = {n2} <= 1 at {l} um")));
            }
        }
        Ok(())
    }

    fn check(&self, lambda_um: f64) -> Result<(), DispersionError> {
        if lambda_um >= self.min_um && lambda_um <= self.max_um {
            Ok(())
        } else {
            Err(DispersionError::OutOfWindow {
                wavelength_um: lambda_um,
                min_um: self.min_um,
                max_um: self.max_um,
            })
        }
    }

    fn n_squared_unchecked(&self, l: f64) -> f64 {
        let l2 = l * l;
        self.a + self.b / (l2 - self.c) - self.d * l2
    }

    /// `n²` at `lambda_um`.
    pub fn n_squared(&self, lambda_um: f64) -> Result<f64, DispersionError> {
        self.check(lambda_um)?;
        Ok(self.n_squared_unchecked(lambda_um))
    }

    /// `(n², dn²/dλ, d²n²/dλ²)` with λ in µm.
    pub fn n_squared_derivs(&self, lambda_um: f64) -> Result<(f64, f64, f64), DispersionError> {
        self.check(lambda_um)?;
        let l = lambda_um;
        let den = l * l - self.c;
        let n2 = self.a + self.b / den - self.d * l * l;
        let d1 = -2.0 * l * self.b / (den * den) - 2.0 * self.d * l;
        let d2 = -2.0 * self.b / (den * den) + 8.0 * l * l * self.b / (den * den * den) - 2.0 * self.d;
        Ok((n2, d1, d2))
    }
}

/// Named pair of principal Sellmeier sets for a uniaxial crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub ordinary: SellmeierSet,
    pub extraordinary: SellmeierSet,
}

impl Material {
    /// β-barium borate, widely published coefficient set, valid 0.4–1.4 µm.
    pub fn bbo() -> Self {
        Self {
            name: "BBO".to_string(),
            ordinary: SellmeierSet {
                a: 2.7359,
                b: 0.01878,
                c: 0.01822,
                d: 0.01354,
                min_um: 0.4,
                max_um: 1.4,
            },
            extraordinary: SellmeierSet {
                a: 2.3753,
                b: 0.01224,
                c: 0.01667,
                d: 0.01516,
                min_um: 0.4,
                max_um: 1.4,
            },
        }
    }

    /// Ordinary index `n_o(λ)`; `wavelength` in meters.
    pub fn index_ordinary(&self, wavelength: f64) -> Result<f64, DispersionError> {
        Ok(self.ordinary.n_squared(wavelength * 1e6)?.sqrt())
    }

    /// Extraordinary-wave index for propagation at `theta` to the optic axis.
    pub fn index_extraordinary(&self, theta: f64, wavelength: f64) -> Result<f64, DispersionError> {
        let l = wavelength * 1e6;
        let no2 = self.ordinary.n_squared(l)?;
        let ne2 = self.extraordinary.n_squared(l)?;
        if theta == 0.0 {
            return Ok(no2.sqrt());
        }
        if theta == std::f64::consts::FRAC_PI_2 {
            return Ok(ne2.sqrt());
        }
        let (s, c) = theta.sin_cos();
        Ok((c * c / no2 + s * s / ne2).powf(-0.5))
    }

    /// `(n, dn/dλ, d²n/dλ²)` with λ in µm for the given polarization.
    fn index_derivs(&self, pol: Polarization, theta: f64, lambda_um: f64) -> Result<(f64, f64, f64), DispersionError> {
        let (no2, no2_1, no2_2) = self.ordinary.n_squared_derivs(lambda_um)?;
        let (u, u1, u2) = match pol {
            Polarization::Ordinary => inverse_derivs(no2, no2_1, no2_2),
            Polarization::Extraordinary => {
                let (ne2, ne2_1, ne2_2) = self.extraordinary.n_squared_derivs(lambda_um)?;
                let (s, c) = theta.sin_cos();
                let (io, io1, io2) = inverse_derivs(no2, no2_1, no2_2);
                let (ie, ie1, ie2) = inverse_derivs(ne2, ne2_1, ne2_2);
                (
                    c * c * io + s * s * ie,
                    c * c * io1 + s * s * ie1,
                    c * c * io2 + s * s * ie2,
                )
            }
        };
        // n = u^{-1/2}
        let n = u.powf(-0.5);
        let n1 = -0.5 * u.powf(-1.5) * u1;
        let n2 = 0.75 * u.powf(-2.5) * u1 * u1 - 0.5 * u.powf(-1.5) * u2;
        Ok((n, n1, n2))
    }
}

/// Derivatives of `1/N` given `N, N', N''`.
fn inverse_derivs(n: f64, n1: f64, n2: f64) -> (f64, f64, f64) {
    (1.0 / n, -n1 / (n * n), -n2 / (n * n) + 2.0 * n1 * n1 / (n * n * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    Ordinary,
    Extraordinary,
}

/// Material and geometry of one χ(2) crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalParams {
    pub material: Material,
    /// Length (m).
    pub length: f64,
    /// Optic-axis angle to the pump propagation axis (rad).
    pub theta: f64,
    /// Nonlinear coupling (1/m, in simulation field units).
    pub sigma: f64,
    /// Parametric gain; only meaningful for the PDC crystal.
    pub gain: f64,
}

impl CrystalParams {
    pub fn new(material: Material, length: f64, theta: f64, sigma: f64, gain: f64) -> Result<Self, DispersionError> {
        let c = Self {
            material,
            length,
            theta,
            sigma,
            gain,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), DispersionError> {
        if !(self.length > 0.0) {
            return Err(DispersionError::InvalidCrystal(format!("length {} must be > 0", self.length)));
        }
        if !(self.theta > 0.0 && self.theta < std::f64::consts::FRAC_PI_2) {
            return Err(DispersionError::InvalidCrystal(format!(
                "orientation {} rad must lie in (0, pi/2)",
                self.theta
            )));
        }
        if !(self.sigma >= 0.0) {
            return Err(DispersionError::InvalidCrystal(format!("sigma {} must be >= 0", self.sigma)));
        }
        if !(self.gain >= 0.0) {
            return Err(DispersionError::InvalidCrystal(format!("gain {} must be >= 0", self.gain)));
        }
        self.material.ordinary.validate()?;
        self.material.extraordinary.validate()
    }
}

/// A spatio-temporal Fourier mode `(q_x, q_y, Ω)` relative to some carrier.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mode {
    pub qx: f64,
    pub qy: f64,
    pub omega: f64,
}

impl Mode {
    pub const ZERO: Mode = Mode {
        qx: 0.0,
        qy: 0.0,
        omega: 0.0,
    };

    pub fn new(qx: f64, qy: f64, omega: f64) -> Self {
        Self { qx, qy, omega }
    }

    pub fn q_squared(&self) -> f64 {
        self.qx * self.qx + self.qy * self.qy
    }
}

impl Neg for Mode {
    type Output = Mode;
    fn neg(self) -> Mode {
        Mode::new(-self.qx, -self.qy, -self.omega)
    }
}

impl Add for Mode {
    type Output = Mode;
    fn add(self, o: Mode) -> Mode {
        Mode::new(self.qx + o.qx, self.qy + o.qy, self.omega + o.omega)
    }
}

impl Sub for Mode {
    type Output = Mode;
    fn sub(self, o: Mode) -> Mode {
        Mode::new(self.qx - o.qx, self.qy - o.qy, self.omega - o.omega)
    }
}

/// Longitudinal wave-vector component, or a flag for a non-propagating mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kz {
    Propagating(f64),
    Evanescent,
}

impl Kz {
    pub fn value(self) -> Option<f64> {
        match self {
            Kz::Propagating(k) => Some(k),
            Kz::Evanescent => None,
        }
    }
}

/// Ordinary wave: `k_z = sqrt(k(ω)² − q²)`.
pub fn kz_ordinary(material: &Material, carrier: f64, mode: Mode) -> Result<Kz, DispersionError> {
    let omega = carrier + mode.omega;
    if omega <= 0.0 {
        return Ok(Kz::Evanescent);
    }
    let k = omega / SPEED_OF_LIGHT * material.index_ordinary(wavelength_of(omega))?;
    let r = k * k - mode.q_squared();
    Ok(if r > 0.0 { Kz::Propagating(r.sqrt()) } else { Kz::Evanescent })
}

/// Extraordinary wave with the optic axis in the x–z plane at `theta` from z.
///
/// Solves `k_∥²/n_o² + k_⊥²/n_e² = (ω/c)²` exactly for `k_z`, with
/// `k_∥ = k_z cos θ − q_x sin θ`. The sign of the `q_x` term puts the
/// walk-off along +x, i.e. `∂k_z/∂q_x = −ρ₀ < 0`.
pub fn kz_extraordinary(material: &Material, carrier: f64, theta: f64, mode: Mode) -> Result<Kz, DispersionError> {
    let omega = carrier + mode.omega;
    if omega <= 0.0 {
        return Ok(Kz::Evanescent);
    }
    let l = wavelength_of(omega) * 1e6;
    let a = 1.0 / material.ordinary.n_squared(l)?;
    let b = 1.0 / material.extraordinary.n_squared(l)?;
    let k0 = omega / SPEED_OF_LIGHT;
    let (s, c) = theta.sin_cos();
    let ab = a - b;
    let alpha = ab * c * c + b;
    let beta = -2.0 * ab * c * s * mode.qx;
    let gamma = ab * s * s * mode.qx * mode.qx + b * mode.q_squared() - k0 * k0;
    let disc = beta * beta - 4.0 * alpha * gamma;
    if disc < 0.0 {
        return Ok(Kz::Evanescent);
    }
    // numerically stable root selection for the positive branch
    let sq = disc.sqrt();
    let kz = if beta <= 0.0 {
        (-beta + sq) / (2.0 * alpha)
    } else {
        (2.0 * gamma) / (-beta - sq)
    };
    Ok(if kz > 0.0 { Kz::Propagating(kz) } else { Kz::Evanescent })
}

/// Wave number and its frequency derivatives at the carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSample {
    /// k (1/m)
    pub k: f64,
    /// dk/dΩ (s/m)
    pub k1: f64,
    /// d²k/dΩ² (s²/m)
    pub k2: f64,
    /// Walk-off angle (rad); exactly zero for the ordinary wave.
    pub walkoff: f64,
}

/// Analytic `k, k′, k″, ρ₀` at `carrier` for the given polarization.
pub fn dispersion_sample(
    material: &Material,
    pol: Polarization,
    theta: f64,
    carrier: f64,
) -> Result<DispersionSample, DispersionError> {
    let lambda = wavelength_of(carrier);
    let l_um = lambda * 1e6;
    let (n, n1, n2) = material.index_derivs(pol, theta, l_um)?;
    let c = SPEED_OF_LIGHT;
    // λ·dn/dλ and λ²·d²n/dλ² are unit-free, so µm derivatives are fine here.
    let k = carrier * n / c;
    let k1 = (n - l_um * n1) / c;
    let k2 = l_um * l_um * n2 / (c * carrier);
    let walkoff = match pol {
        Polarization::Ordinary => 0.0,
        Polarization::Extraordinary => {
            let no2 = material.ordinary.n_squared(l_um)?;
            let ne2 = material.extraordinary.n_squared(l_um)?;
            0.5 * n * n * (1.0 / ne2 - 1.0 / no2) * (2.0 * theta).sin()
        }
    };
    Ok(DispersionSample { k, k1, k2, walkoff })
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn kz_symmetries(qx in -4e4..4e4f64, qy in -4e4..4e4f64, om in -1.5e14..1.5e14f64) {
            let m = Material::bbo();
            let (w1, w0, theta) = (omega_of(1055e-9), omega_of(527.5e-9), 22.92f64.to_radians());
            let w = Mode::new(qx, qy, om);
            let ko = kz_ordinary(&m, w1, w).unwrap().value();
            prop_assert_eq!(ko, kz_ordinary(&m, w1, Mode::new(-qx, -qy, om)).unwrap().value());
            let ke = kz_extraordinary(&m, w0, theta, w).unwrap().value();
            prop_assert_eq!(ke, kz_extraordinary(&m, w0, theta, Mode::new(qx, -qy, om)).unwrap().value());
        }
    }
}
