//! Real-valued density maps with axis metadata.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("axis {axis} has {got} points but the data has {expected}")]
    Shape { axis: usize, got: usize, expected: usize },
    #[error("axis {0} is not strictly monotone")]
    NonMonotone(usize),
    #[error("spectrum holds a non-finite value at {0:?}")]
    NonFinite(Vec<usize>),
    #[error("spectrum holds a negative value {value} at {index:?}")]
    Negative { index: Vec<usize>, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    Qx,
    Qy,
    Omega,
    /// far-field angle, degrees
    Alpha,
    /// wavelength, m
    Lambda,
}

impl AxisKind {
    pub fn label(self) -> &'static str {
        match self {
            AxisKind::Qx => "qx_per_m",
            AxisKind::Qy => "qy_per_m",
            AxisKind::Omega => "omega_rad_per_s",
            AxisKind::Alpha => "alpha_deg",
            AxisKind::Lambda => "lambda_m",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            AxisKind::Qx => 0,
            AxisKind::Qy => 1,
            AxisKind::Omega => 2,
            AxisKind::Alpha => 3,
            AxisKind::Lambda => 4,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => AxisKind::Qx,
            1 => AxisKind::Qy,
            2 => AxisKind::Omega,
            3 => AxisKind::Alpha,
            4 => AxisKind::Lambda,
            _ => return None,
        })
    }
}

/// Sample coordinates along one grid dimension. Uniform for (q, Ω);
/// wavelength axes from a converted spectrum are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub kind: AxisKind,
    pub points: Vec<f64>,
}

impl Axis {
    pub fn uniform(kind: AxisKind, offset: f64, spacing: f64, n: usize) -> Self {
        Self {
            kind,
            points: (0..n).map(|i| offset + i as f64 * spacing).collect(),
        }
    }

    /// `points[i] = (i − n/2)·spacing`, so the zero sits at index `n/2`.
    pub fn centered(kind: AxisKind, spacing: f64, n: usize) -> Self {
        Self::uniform(kind, -((n / 2) as f64) * spacing, spacing, n)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn offset(&self) -> f64 {
        self.points[0]
    }

    /// Mean spacing; exact for uniform axes.
    pub fn spacing(&self) -> f64 {
        match self.points.len() {
            0 | 1 => 0.0,
            n => (self.points[n - 1] - self.points[0]) / (n - 1) as f64,
        }
    }

    pub fn is_strictly_monotone(&self) -> bool {
        let w = &self.points;
        w.windows(2).all(|p| p[1] > p[0]) || w.windows(2).all(|p| p[1] < p[0])
    }

    /// Index of the sample closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, &p) in self.points.iter().enumerate() {
            if (p - x).abs() < (self.points[best] - x).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// photon number per mode (analytic spectra)
    PhotonsPerMode,
    /// uncorrected symmetric-ordered |amplitude|²
    Wigner,
    /// Wigner density minus ½ per mode; single cells may be negative
    WignerCorrected,
    Arbitrary,
}

impl Normalization {
    pub(crate) fn code(self) -> u8 {
        match self {
            Normalization::PhotonsPerMode => 0,
            Normalization::Wigner => 1,
            Normalization::WignerCorrected => 2,
            Normalization::Arbitrary => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Normalization::PhotonsPerMode,
            1 => Normalization::Wigner,
            2 => Normalization::WignerCorrected,
            3 => Normalization::Arbitrary,
            _ => return None,
        })
    }
}

fn check_axes(axes: &[Axis], shape: &[usize]) -> Result<(), SpectrumError> {
    for (i, (a, &n)) in axes.iter().zip(shape).enumerate() {
        if a.len() != n {
            return Err(SpectrumError::Shape {
                axis: i,
                got: a.len(),
                expected: n,
            });
        }
        if n > 1 && !a.is_strictly_monotone() {
            return Err(SpectrumError::NonMonotone(i));
        }
    }
    Ok(())
}

fn check_values<'a>(
    it: impl Iterator<Item = (Vec<usize>, &'a f64)>,
    norm: Normalization,
) -> Result<(), SpectrumError> {
    for (idx, &v) in it {
        if !v.is_finite() {
            return Err(SpectrumError::NonFinite(idx));
        }
        if v < 0.0 && norm != Normalization::WignerCorrected {
            return Err(SpectrumError::Negative { index: idx, value: v });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    pub axes: [Axis; 2],
    pub values: Array2<f64>,
    pub normalization: Normalization,
}

impl Spectrum2D {
    pub fn new(axes: [Axis; 2], values: Array2<f64>, normalization: Normalization) -> Result<Self, SpectrumError> {
        check_axes(&axes, values.shape())?;
        check_values(
            values.indexed_iter().map(|((i, j), v)| (vec![i, j], v)),
            normalization,
        )?;
        Ok(Self {
            axes,
            values,
            normalization,
        })
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for ((i, j), &v) in self.values.indexed_iter() {
            if v > self.values[best] {
                best = (i, j);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum3D {
    pub axes: [Axis; 3],
    pub values: Array3<f64>,
    pub normalization: Normalization,
}

impl Spectrum3D {
    pub fn new(axes: [Axis; 3], values: Array3<f64>, normalization: Normalization) -> Result<Self, SpectrumError> {
        check_axes(&axes, values.shape())?;
        check_values(
            values.indexed_iter().map(|((i, j, k), v)| (vec![i, j, k], v)),
            normalization,
        )?;
        Ok(Self {
            axes,
            values,
            normalization,
        })
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
