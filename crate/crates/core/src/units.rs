//! Quantities written as `"<number> <unit>"` strings, normalized to SI.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Time,
    Angle,
    /// spatial frequency, 1/m
    Wavenumber,
    /// rad/s
    AngularFrequency,
    /// nonlinear coupling, 1/m in field units
    Coupling,
}

impl Dimension {
    /// Unit used when echoing values.
    pub fn si_unit(self) -> &'static str {
        match self {
            Dimension::Length => "m",
            Dimension::Time => "s",
            Dimension::Angle => "rad",
            Dimension::Wavenumber | Dimension::Coupling => "1/m",
            Dimension::AngularFrequency => "rad/s",
        }
    }

    fn scale(self, unit: &str) -> Option<f64> {
        let s = match (self, unit) {
            (Dimension::Length, "m") => 1.0,
            (Dimension::Length, "cm") => 1e-2,
            (Dimension::Length, "mm") => 1e-3,
            (Dimension::Length, "um" | "µm") => 1e-6,
            (Dimension::Length, "nm") => 1e-9,
            (Dimension::Time, "s") => 1.0,
            (Dimension::Time, "ms") => 1e-3,
            (Dimension::Time, "us" | "µs") => 1e-6,
            (Dimension::Time, "ns") => 1e-9,
            (Dimension::Time, "ps") => 1e-12,
            (Dimension::Time, "fs") => 1e-15,
            (Dimension::Angle, "rad") => 1.0,
            (Dimension::Angle, "mrad") => 1e-3,
            (Dimension::Angle, "deg") => std::f64::consts::PI / 180.0,
            (Dimension::Wavenumber | Dimension::Coupling, "1/m" | "rad/m") => 1.0,
            (Dimension::Wavenumber | Dimension::Coupling, "1/mm" | "rad/mm") => 1e3,
            (Dimension::Wavenumber | Dimension::Coupling, "1/um" | "rad/um") => 1e6,
            (Dimension::AngularFrequency, "rad/s" | "1/s") => 1.0,
            (Dimension::AngularFrequency, "rad/ps") => 1e12,
            (Dimension::AngularFrequency, "rad/fs") => 1e15,
            _ => return None,
        };
        Some(s)
    }

    pub fn accepted_units(self) -> &'static str {
        match self {
            Dimension::Length => "m, cm, mm, um, nm",
            Dimension::Time => "s, ms, us, ns, ps, fs",
            Dimension::Angle => "rad, mrad, deg",
            Dimension::Wavenumber | Dimension::Coupling => "1/m, 1/mm, 1/um",
            Dimension::AngularFrequency => "rad/s, rad/ps, rad/fs",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("`{0}` has no unit (expected e.g. \"4 mm\")")]
    MissingUnit(String),
    #[error("`{text}`: unknown unit `{unit}`; accepted: {accepted}")]
    UnknownUnit {
        text: String,
        unit: String,
        accepted: &'static str,
    },
    #[error("`{0}` does not start with a number")]
    BadNumber(String),
}

/// Parses `"4 mm"`, `"500um"`, `"-0.5 deg"` into SI.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, UnitError> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit()
                || c == '.'
                || c == '+'
                || c == '-'
                || ((c == 'e' || c == 'E') && t[i + 1..].starts_with(|d: char| d.is_ascii_digit() || d == '-' || d == '+')))
        })
        .map(|(i, _)| i)
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let unit = unit.trim();
    if unit.is_empty() {
        return Err(UnitError::MissingUnit(text.to_string()));
    }
    let value: f64 = num.parse().map_err(|_| UnitError::BadNumber(text.to_string()))?;
    let scale = dim.scale(unit).ok_or_else(|| UnitError::UnknownUnit {
        text: text.to_string(),
        unit: unit.to_string(),
        accepted: dim.accepted_units(),
    })?;
    Ok(value * scale)
}

/// As [`parse_quantity`] but expressed in `target` (exact when the text
/// already uses `target`).
pub fn parse_quantity_in(text: &str, dim: Dimension, target: &str) -> Result<f64, UnitError> {
    let si = parse_quantity(text, dim)?;
    let t = text.trim();
    if let Some(num) = t.strip_suffix(target) {
        if let Ok(v) = num.trim().parse::<f64>() {
            return Ok(v);
        }
    }
    let scale = dim.scale(target).ok_or_else(|| UnitError::UnknownUnit {
        text: text.to_string(),
        unit: target.to_string(),
        accepted: dim.accepted_units(),
    })?;
    Ok(si / scale)
}

/// Canonical SI text; parses back to the identical `f64`.
pub fn format_quantity(value: f64, dim: Dimension) -> String {
    format!("{value:?} {}", dim.si_unit())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert_eq!(parse_quantity("4 mm", Dimension::Length).unwrap(), 4.0e-3);
        assert!((parse_quantity("500um", Dimension::Length).unwrap() - 5e-4).abs() < 1e-18);
        assert_eq!(parse_quantity("1 ps", Dimension::Time).unwrap(), 1e-12);
        assert!((parse_quantity("-0.5 deg", Dimension::Angle).unwrap() + 0.5f64.to_radians()).abs() < 1e-15);
        assert_eq!(parse_quantity("1.5e3 1/m", Dimension::Wavenumber).unwrap(), 1.5e3);
        assert_eq!(parse_quantity("2 rad/ps", Dimension::AngularFrequency).unwrap(), 2e12);
    }

    #[test]
    fn errors_name_the_problem() {
        assert!(matches!(parse_quantity("4", Dimension::Length), Err(UnitError::MissingUnit(_))));
        let e = parse_quantity("4 furlong", Dimension::Length).unwrap_err();
        assert!(e.to_string().contains("mm"));
        assert!(matches!(parse_quantity("4 ps", Dimension::Length), Err(UnitError::UnknownUnit { .. })));
        assert!(matches!(parse_quantity("x mm", Dimension::Length), Err(UnitError::BadNumber(_))));
    }

    #[test]
    fn echo_is_exact() {
        for v in [4e-3, 527.5e-9, 0.1 + 0.2, -1.234567890123e-17] {
            assert_eq!(parse_quantity(&format_quantity(v, Dimension::Length), Dimension::Length).unwrap(), v);
        }
    }
}
