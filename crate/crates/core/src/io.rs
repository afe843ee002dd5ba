//! On-disk formats: the binary grid file, CSV exports and the run manifest.
//!
//! Grid file layout (all little-endian):
//!
//! ```text
//! magic      8   b"UPCGRID\0"
//! endian     4   0x0A0B0C0D
//! version    2
//! payload    1   0 = real f64, 1 = complex (re, im) f64 pairs
//! pol        1   0 = none, 1 = ordinary, 2 = extraordinary
//! norm       1   normalization code, 255 = none
//! ndim       1
//! seed       8
//! hash      32   sha256 of the producing config echo
//! carrier    8   rad/s, 0 when not meaningful
//! axes           ndim × (kind u8, len u64, len × f64)
//! count      8   number of scalars in the payload
//! payload        row-major
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{SweepParameter, SweepResult};
use crate::config::hex;
use crate::dispersion::Polarization;
use crate::phasematch::{PhaseMatchContext, PhaseMatchError, SigmaPoint};
use crate::simulator::{GridSpec, SpectralField};
use crate::spectrum::{Axis, AxisKind, Normalization, Spectrum2D, Spectrum3D};

pub const MAGIC: [u8; 8] = *b"UPCGRID\0";
pub const FORMAT_VERSION: u16 = 1;
const ENDIAN_MARK: u32 = 0x0A0B_0C0D;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a grid file (bad magic bytes)")]
    BadMagic,
    #[error("grid file was written big-endian; only little-endian files are supported")]
    ForeignEndian,
    #[error("grid file version {found} is not supported (this build reads version {supported})")]
    Version { found: u16, supported: u16 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("corrupt grid header: {0}")]
    Corrupt(String),
    #[error("phase matching: {0}")]
    PhaseMatch(#[from] PhaseMatchError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridHeader {
    pub version: u16,
    pub complex: bool,
    pub polarization: Option<Polarization>,
    pub normalization: Option<Normalization>,
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub carrier: f64,
    pub axes: Vec<Axis>,
}

impl GridHeader {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::len).collect()
    }

    pub fn scalar_count(&self) -> u64 {
        self.shape().iter().map(|&n| n as u64).product::<u64>() * if self.complex { 2 } else { 1 }
    }

    pub fn config_hash_hex(&self) -> String {
        hex(&self.config_hash)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    Real(ArrayD<f64>),
    Complex(ArrayD<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub header: GridHeader,
    pub data: GridData,
}

fn pol_code(p: Option<Polarization>) -> u8 {
    match p {
        None => 0,
        Some(Polarization::Ordinary) => 1,
        Some(Polarization::Extraordinary) => 2,
    }
}

fn pol_from_code(c: u8) -> Result<Option<Polarization>, IoError> {
    match c {
        0 => Ok(None),
        1 => Ok(Some(Polarization::Ordinary)),
        2 => Ok(Some(Polarization::Extraordinary)),
        _ => Err(IoError::Corrupt(format!("polarization tag {c}"))),
    }
}

impl GridFile {
    fn new(header_axes: Vec<Axis>, data: GridData) -> Self {
        let complex = matches!(data, GridData::Complex(_));
        GridFile {
            header: GridHeader {
                version: FORMAT_VERSION,
                complex,
                polarization: None,
                normalization: None,
                seed: 0,
                config_hash: [0; 32],
                carrier: 0.0,
                axes: header_axes,
            },
            data,
        }
    }

    pub fn with_provenance(mut self, seed: u64, config_hash: [u8; 32]) -> Self {
        self.header.seed = seed;
        self.header.config_hash = config_hash;
        self
    }

    pub fn from_spectrum2d(s: &Spectrum2D) -> Self {
        let mut f = Self::new(s.axes.to_vec(), GridData::Real(s.values.clone().into_dyn()));
        f.header.normalization = Some(s.normalization);
        f
    }

    pub fn from_spectrum3d(s: &Spectrum3D) -> Self {
        let mut f = Self::new(s.axes.to_vec(), GridData::Real(s.values.clone().into_dyn()));
        f.header.normalization = Some(s.normalization);
        f
    }

    /// Stores a spectral field on centered (q_x, q_y, Ω) axes.
    pub fn from_field(grid: &GridSpec, field: &SpectralField) -> Self {
        let [nx, ny, nt] = grid.shape();
        let [ax, ay, aw] = grid.centered_axes();
        let data = ArrayD::from_shape_fn(IxDyn(&[nx, ny, nt]), |ix| {
            field.data[[
                GridSpec::bin_of_centered(ix[0], nx),
                GridSpec::bin_of_centered(ix[1], ny),
                GridSpec::bin_of_centered(ix[2], nt),
            ]]
        });
        let mut f = Self::new(vec![ax, ay, aw], GridData::Complex(data));
        f.header.polarization = Some(field.polarization);
        f.header.carrier = field.carrier;
        f
    }

    fn validate(&self) -> Result<(), IoError> {
        let shape = self.header.shape();
        let (data_shape, complex) = match &self.data {
            GridData::Real(a) => (a.shape().to_vec(), false),
            GridData::Complex(a) => (a.shape().to_vec(), true),
        };
        if data_shape != shape || complex != self.header.complex {
            return Err(IoError::Corrupt(format!(
                "payload shape {data_shape:?} (complex: {complex}) does not match axes {shape:?} (complex: {})",
                self.header.complex
            )));
        }
        if shape.len() > u8::MAX as usize {
            return Err(IoError::Corrupt("too many axes".into()));
        }
        Ok(())
    }
}

pub fn write_grid(path: &Path, file: &GridFile) -> Result<(), IoError> {
    file.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    let h = &file.header;
    w.write_all(&MAGIC)?;
    w.write_all(&ENDIAN_MARK.to_le_bytes())?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[
        h.complex as u8,
        pol_code(h.polarization),
        h.normalization.map_or(255, Normalization::code),
        h.axes.len() as u8,
    ])?;
    w.write_all(&h.seed.to_le_bytes())?;
    w.write_all(&h.config_hash)?;
    w.write_all(&h.carrier.to_le_bytes())?;
    for a in &h.axes {
        w.write_all(&[a.kind.code()])?;
        w.write_all(&(a.len() as u64).to_le_bytes())?;
        for p in &a.points {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.write_all(&h.scalar_count().to_le_bytes())?;
    match &file.data {
        GridData::Real(a) => {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        GridData::Complex(a) => {
            for v in a.iter() {
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), IoError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => IoError::Corrupt(format!("file ends inside the header ({what})")),
        _ => IoError::Io(e),
    })
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64, IoError> {
    let mut b = [0u8; 8];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_header_from<R: Read>(r: &mut R) -> Result<GridHeader, IoError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| IoError::BadMagic)?;
    if magic != MAGIC {
        return Err(IoError::BadMagic);
    }
    let mut e = [0u8; 4];
    read_exact_or_corrupt(r, &mut e, "endian mark")?;
    if e == ENDIAN_MARK.to_be_bytes() {
        return Err(IoError::ForeignEndian);
    }
    if e != ENDIAN_MARK.to_le_bytes() {
        return Err(IoError::Corrupt("unrecognized endian mark".into()));
    }
    let mut v = [0u8; 2];
    read_exact_or_corrupt(r, &mut v, "version")?;
    let version = u16::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(IoError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let mut tags = [0u8; 4];
    read_exact_or_corrupt(r, &mut tags, "tags")?;
    let complex = match tags[0] {
        0 => false,
        1 => true,
        c => return Err(IoError::Corrupt(format!("payload kind {c}"))),
    };
    let polarization = pol_from_code(tags[1])?;
    let normalization = match tags[2] {
        255 => None,
        c => Some(Normalization::from_code(c).ok_or_else(|| IoError::Corrupt(format!("normalization tag {c}")))?),
    };
    let seed = read_u64(r, "seed")?;
    let mut config_hash = [0u8; 32];
    read_exact_or_corrupt(r, &mut config_hash, "config hash")?;
    let carrier = f64::from_bits(read_u64(r, "carrier")?);
    let mut axes = Vec::with_capacity(tags[3] as usize);
    for _ in 0..tags[3] {
        let mut k = [0u8; 1];
        read_exact_or_corrupt(r, &mut k, "axis kind")?;
        let kind = AxisKind::from_code(k[0]).ok_or_else(|| IoError::Corrupt(format!("axis kind {}", k[0])))?;
        let len = read_u64(r, "axis length")?;
        if len > (1 << 32) {
            return Err(IoError::Corrupt(format!("axis length {len}")));
        }
        let mut points = Vec::with_capacity(len as usize);
        for _ in 0..len {
            points.push(f64::from_bits(read_u64(r, "axis point")?));
        }
        axes.push(Axis { kind, points });
    }
    let header = GridHeader {
        version,
        complex,
        polarization,
        normalization,
        seed,
        config_hash,
        carrier,
        axes,
    };
    let count = read_u64(r, "payload count")?;
    if count != header.scalar_count() {
        return Err(IoError::Corrupt(format!(
            "payload count {count} does not match axes ({})",
            header.scalar_count()
        )));
    }
    Ok(header)
}

/// Reads only the header; the payload is not touched.
pub fn read_grid_header(path: &Path) -> Result<GridHeader, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header_from(&mut r)
}

pub fn read_grid(path: &Path) -> Result<GridFile, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header_from(&mut r)?;
    let expected = header.scalar_count() * 8;
    let mut bytes = Vec::with_capacity(expected as usize);
    r.read_to_end(&mut bytes)?;
    if bytes.len() as u64 != expected {
        return Err(IoError::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    let scalars = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let shape = IxDyn(&header.shape());
    let data = if header.complex {
        let v: Vec<f64> = scalars.collect();
        let c: Vec<Complex64> = v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        GridData::Complex(ArrayD::from_shape_vec(shape, c).map_err(|e| IoError::Corrupt(e.to_string()))?)
    } else {
        GridData::Real(ArrayD::from_shape_vec(shape, scalars.collect()).map_err(|e| IoError::Corrupt(e.to_string()))?)
    };
    Ok(GridFile { header, data })
}

/// Nine significant digits, locale-independent.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Long format: one row per cell, both axis coordinates spelled out.
pub fn write_spectrum2d_csv<W: Write>(mut w: W, s: &Spectrum2D, provenance: &str) -> std::io::Result<()> {
    writeln!(w, "{},{},value,normalization,provenance", s.axes[0].kind.label(), s.axes[1].kind.label())?;
    let norm = format!("{:?}", s.normalization);
    for ((i, j), v) in s.values.indexed_iter() {
        writeln!(w, "{},{},{},{norm},{provenance}", num(s.axes[0].points[i]), num(s.axes[1].points[j]), num(*v))?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(mut w: W, r: &SweepResult) -> std::io::Result<()> {
    let (col, scale) = match r.parameter {
        SweepParameter::Detuning => ("detuning_deg", 180.0 / std::f64::consts::PI),
        SweepParameter::SfgLength => ("sfg_length_m", 1.0),
    };
    writeln!(w, "{col},lambda_inc_m,n_coh,n_inc,ridge_slope_m_per_s,flag,provenance")?;
    for row in &r.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            num(row.parameter * scale),
            opt(row.lambda_inc),
            opt(row.n_coh),
            opt(row.n_inc),
            opt(row.ridge_slope),
            row.flag.as_deref().unwrap_or(""),
            r.provenance.name()
        )?;
    }
    Ok(())
}

/// Bandwidths, threshold lengths and the critical angle as `quantity,value,unit` rows.
pub fn write_phasematch_csv<W: Write>(mut w: W, ctx: &PhaseMatchContext, gain: f64) -> Result<(), IoError> {
    let b = ctx.bandwidths()?;
    let t = ctx.threshold_lengths()?;
    let crit = ctx.critical_angle(gain);
    writeln!(w, "quantity,value,unit,provenance")?;
    let rows = [
        ("omega_d", b.omega_d, "rad/s"),
        ("q_d", b.q_d, "1/m"),
        ("omega_gvm", b.omega_gvm, "rad/s"),
        ("q_sw", b.q_sw, "1/m"),
        ("l_spatial_walkoff", t.spatial_walkoff, "m"),
        ("l_group_velocity", t.group_velocity, "m"),
        ("critical_angle", crit.to_degrees(), "deg"),
        ("pdc_theta", ctx.pdc.theta.to_degrees(), "deg"),
        ("walkoff_angle", ctx.sfg_extraordinary.walkoff, "rad"),
        ("gvm", ctx.group_velocity_mismatch(), "s/m"),
    ];
    for (name, v, unit) in rows {
        writeln!(w, "{name},{},{unit},analytic", num(v))?;
    }
    Ok(())
}

pub fn write_sigma_csv<W: Write>(mut w: W, pts: &[SigmaPoint]) -> std::io::Result<()> {
    writeln!(w, "qx_per_m,omega_sigma_rad_per_s,omega_sigma_linear_rad_per_s,provenance")?;
    for p in pts {
        writeln!(w, "{},{},{},analytic", num(p.qx), opt(p.omega_exact), num(p.omega_linear))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// relative to the manifest's directory
    pub path: String,
    pub sha256: String,
}

/// Everything needed to regenerate a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub program: String,
    pub version: String,
    pub subcommand: String,
    pub arguments: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    /// canonical echo of the configuration actually used
    pub config: String,
    pub runtimes_s: BTreeMap<String, f64>,
    pub outputs: Vec<OutputRecord>,
}

impl Manifest {
    /// Hashes and records a file already written under `dir`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<(), IoError> {
        let mut h = Sha256::new();
        let mut f = BufReader::new(File::open(dir.join(name))?);
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            sha256: hex(&h.finalize()),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}
