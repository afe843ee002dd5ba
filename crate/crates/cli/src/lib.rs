//! Command-line front end: every subcommand loads a configuration, applies
//! flag overrides, runs one pipeline and writes CSV/grid outputs plus a
//! `manifest.json` into the output directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use upconv::analysis::{
    angle_sweep, length_sweep, slice_spectrum, split_coherent_incoherent_3d, summarize_far_field,
    to_experimental_axes, AxisMode, Engine, SpectrometerView, SweepResult,
};
use upconv::config::{parse_config, parse_engine, parse_plane, parse_range, plane_code, range_values, ConfigDocument};
use upconv::io::{
    num, read_grid, write_grid, write_phasematch_csv, write_sigma_csv, write_spectrum2d_csv, write_sweep_csv,
    GridData, GridFile, Manifest,
};
use upconv::pwpa::{incoherent_spectrum_full, pdc_spectrum, Plane};
use upconv::simulator::run_experiment;
use upconv::spectrum::{Normalization, Spectrum2D, Spectrum3D};
use upconv::units::{parse_quantity, Dimension};

#[derive(Debug, Parser)]
#[command(
    name = "upconv",
    version,
    about = "Sum-frequency up-conversion of broadband down-converted light: analytic and stochastic spectra"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file (TOML with explicit units), or `defaults`
    #[arg(long, global = true, value_name = "PATH", default_value = "defaults")]
    pub config: String,
    /// Output directory [default: upconv-out/<subcommand>-<config hash prefix>]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides run.seed
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it) [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Spectrometer plane: xw (walk-off) or yw (orthogonal); overrides analysis.plane
    #[arg(long, global = true, value_name = "xw|yw")]
    pub plane: Option<String>,
    /// Sweep engine; overrides sweep.engine
    #[arg(long, global = true, value_name = "analytic|pwpa|stochastic")]
    pub engine: Option<String>,
    /// Detuning sweep, e.g. `-2:0.5:2` (degrees) or `-0.02:0.01:0.02 rad`; overrides sweep.angles
    #[arg(long, global = true, value_name = "START:STEP:END", allow_hyphen_values = true)]
    pub angles: Option<String>,
    /// Display truncation as a fraction of the coherent peak; overrides analysis.truncate
    #[arg(long, global = true, value_name = "FRAC")]
    pub truncate: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bandwidths, threshold lengths, critical angle, Σ/Σ′ curves and the λ_inc sweep
    Phasematch,
    /// Plane-wave-pump PDC and incoherent SFG spectra on one plane
    PwpaSpectrum(PwpaArgs),
    /// Stochastic simulation: seed → PDC → filter → SFG → far field
    Simulate,
    /// Coherent/incoherent split, slices and ridge centroids of a simulated far field
    Analyze(AnalyzeArgs),
    /// λ_inc, N_coh, N_inc and ridge slope versus detuning or SFG length
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct PwpaArgs {
    /// SFG crystal length, e.g. `1 mm`; overrides sfg.length
    #[arg(long, value_name = "LENGTH")]
    pub sfg_length: Option<String>,
    /// SFG detuning, e.g. `0.5 deg`; overrides sfg.detuning
    #[arg(long, value_name = "ANGLE", allow_hyphen_values = true)]
    pub detuning: Option<String>,
    /// PDC gain; overrides pdc.gain
    #[arg(long, value_name = "G")]
    pub gain: Option<f64>,
    /// In-plane q samples; overrides plane.n_q
    #[arg(long, value_name = "N")]
    pub n_q: Option<usize>,
    /// Ω samples; overrides plane.n_omega
    #[arg(long, value_name = "N")]
    pub n_omega: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Far-field grid written by `simulate` (sfg_mean.grid)
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep the SFG crystal length instead, e.g. `1:1:4 mm`
    #[arg(long, value_name = "START:STEP:END")]
    pub lengths: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] upconv::config::ConfigError),
    #[error(transparent)]
    Io(#[from] upconv::io::IoError),
    #[error("{0}")]
    File(#[from] std::io::Error),
    #[error(transparent)]
    Analysis(#[from] upconv::analysis::AnalysisError),
    #[error(transparent)]
    Simulation(#[from] upconv::simulator::SimError),
    #[error(transparent)]
    Pwpa(#[from] upconv::pwpa::PwpaError),
    #[error(transparent)]
    PhaseMatch(#[from] upconv::phasematch::PhaseMatchError),
    #[error("{0}")]
    Usage(String),
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.common.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli, &args)),
            Err(e) => Err(CliError::Usage(format!("--threads {n}: {e}"))),
        },
        None => run(&cli, &args),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Phasematch => "phasematch",
        Command::PwpaSpectrum(_) => "pwpa-spectrum",
        Command::Simulate => "simulate",
        Command::Analyze(_) => "analyze",
        Command::Sweep(_) => "sweep",
    }
}

fn usage(flag: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{flag}: {e}"))
}

/// Loads the configuration and applies every flag that maps to a key, so
/// the echoed config (and its hash) describes the run completely.
pub fn load_config(cli: &Cli) -> Result<ConfigDocument, CliError> {
    let c = &cli.common;
    let mut doc = if c.config == "defaults" {
        ConfigDocument::bbo_defaults()
    } else {
        let text = fs::read_to_string(&c.config).map_err(|e| usage("--config", format!("{}: {e}", c.config)))?;
        parse_config(&text)?
    };
    if let Some(s) = c.seed {
        doc.run.seed = s;
    }
    if let Some(p) = &c.plane {
        doc.analysis.plane = parse_plane(p).ok_or_else(|| usage("--plane", format!("`{p}` is not xw or yw")))?;
    }
    if let Some(e) = &c.engine {
        doc.sweep.engine = parse_engine(e).ok_or_else(|| usage("--engine", format!("`{e}` is not analytic, pwpa or stochastic")))?;
    }
    if let Some(a) = &c.angles {
        let (s, st, e) = parse_range(a, Dimension::Angle).map_err(|m| usage("--angles", m))?;
        doc.sweep.angle_range = (s, st, e);
        doc.sweep.angles = range_values(s, st, e);
    }
    if let Some(t) = c.truncate {
        if !(t > 0.0 && t <= 1.0) {
            return Err(usage("--truncate", format!("{t} is not in (0, 1]")));
        }
        doc.analysis.truncate = t;
    }
    if let Command::PwpaSpectrum(p) = &cli.command {
        if let Some(l) = &p.sfg_length {
            doc.sfg.length = parse_quantity(l, Dimension::Length).map_err(|e| usage("--sfg-length", e))?;
        }
        if let Some(d) = &p.detuning {
            doc.sfg.detuning = parse_quantity(d, Dimension::Angle).map_err(|e| usage("--detuning", e))?;
        }
        if let Some(g) = p.gain {
            doc.pdc.gain = g;
        }
        if let Some(n) = p.n_q {
            doc.plane.n_q = n;
        }
        if let Some(n) = p.n_omega {
            doc.plane.n_omega = n;
        }
    }
    // re-validate everything the overrides may have broken
    let doc = parse_config(&doc.echo())?;
    Ok(doc)
}

struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn new(cli: &Cli, args: &[String], doc: &ConfigDocument) -> Result<Self, CliError> {
        let name = subcommand_name(&cli.command);
        let hash = doc.hash();
        let dir = cli
            .common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("upconv-out").join(format!("{name}-{}", &hash[..12])));
        fs::create_dir_all(&dir)?;
        Ok(Run {
            dir,
            manifest: Manifest {
                program: "upconv".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                subcommand: name.into(),
                arguments: args.to_vec(),
                config_hash: hash,
                seed: doc.run.seed,
                threads: rayon::current_num_threads(),
                config: doc.echo(),
                runtimes_s: BTreeMap::new(),
                outputs: Vec::new(),
            },
        })
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(BufWriter<File>) -> Result<(), CliError>) -> Result<(), CliError> {
        f(BufWriter::new(File::create(self.dir.join(name))?))?;
        self.manifest.record(&self.dir, name)?;
        Ok(())
    }

    fn grid(&mut self, name: &str, file: &GridFile) -> Result<(), CliError> {
        write_grid(&self.dir.join(name), file)?;
        self.manifest.record(&self.dir, name)?;
        Ok(())
    }

    fn time(&mut self, stage: &str, secs: f64) {
        self.manifest.runtimes_s.insert(stage.into(), secs);
    }

    fn finish(self) -> Result<PathBuf, CliError> {
        self.manifest.write(&self.dir.join("manifest.json"))?;
        Ok(self.dir)
    }
}

fn flush(mut w: BufWriter<File>) -> Result<(), CliError> {
    use std::io::Write;
    w.flush()?;
    Ok(())
}

fn spectrum_csv<'a>(s: &'a Spectrum2D, provenance: &'static str) -> impl FnOnce(BufWriter<File>) -> Result<(), CliError> + 'a {
    move |mut w| {
        write_spectrum2d_csv(&mut w, s, provenance)?;
        flush(w)
    }
}

fn sweep_csv(r: &SweepResult) -> impl FnOnce(BufWriter<File>) -> Result<(), CliError> + '_ {
    move |mut w| {
        write_sweep_csv(&mut w, r)?;
        flush(w)
    }
}

fn run(cli: &Cli, args: &[String]) -> Result<PathBuf, CliError> {
    let doc = load_config(cli)?;
    let mut out = Run::new(cli, args, &doc)?;
    let start = Instant::now();
    match &cli.command {
        Command::Phasematch => phasematch(&doc, &mut out)?,
        Command::PwpaSpectrum(_) => pwpa(&doc, &mut out)?,
        Command::Simulate => simulate(&doc, &mut out)?,
        Command::Analyze(a) => analyze(&doc, &a.input, &mut out)?,
        Command::Sweep(s) => sweep(&doc, s, cli.common.angles.is_some(), &mut out)?,
    }
    out.time("total", start.elapsed().as_secs_f64());
    out.finish()
}

fn phasematch(doc: &ConfigDocument, out: &mut Run) -> Result<(), CliError> {
    let ctx = doc.context()?;
    out.csv("phasematch.csv", |mut w| {
        write_phasematch_csv(&mut w, &ctx, doc.pdc.gain)?;
        flush(w)
    })?;
    let bw = ctx.bandwidths()?;
    let qx: Vec<f64> = (-100..=100).map(|i| i as f64 * 0.03 * bw.q_sw).collect();
    let pts = ctx.sigma_curves(&qx);
    out.csv("sigma.csv", |mut w| {
        write_sigma_csv(&mut w, &pts)?;
        flush(w)
    })?;
    let sweep = angle_sweep(&doc.sweep_setup(Engine::Analytic)?, &doc.sweep.angles, Engine::Analytic)?;
    out.csv("lambda_inc.csv", sweep_csv(&sweep))
}

fn pwpa(doc: &ConfigDocument, out: &mut Run) -> Result<(), CliError> {
    let ctx = doc.context()?;
    let plane = doc.analysis.plane;
    let grid = doc.plane_grid(plane)?;
    let filter = doc.box_filter();
    let code = plane_code(plane);
    let t = Instant::now();
    let pdc = pdc_spectrum(&ctx, &grid, doc.pdc.gain, &filter)?;
    out.csv(&format!("pdc_{code}.csv"), spectrum_csv(&pdc, "pwpa"))?;
    let inc = incoherent_spectrum_full(&ctx, &grid, doc.pdc.gain, &filter)?;
    out.time("pwpa", t.elapsed().as_secs_f64());
    out.csv(&format!("incoherent_{code}.csv"), spectrum_csv(&inc, "pwpa"))?;
    let hash = doc.hash_bytes();
    let mut f = GridFile::from_spectrum2d(&inc).with_provenance(doc.run.seed, hash);
    f.header.carrier = ctx.omega_pump;
    out.grid(&format!("incoherent_{code}.grid"), &f)
}

fn simulate(doc: &ConfigDocument, out: &mut Run) -> Result<(), CliError> {
    let cfg = doc.run_config()?;
    let result = run_experiment(&cfg)?;
    out.time("pdc_stage", result.pdc_seconds);
    out.time("sfg_stage", result.sfg_seconds);
    let hash = doc.hash_bytes();
    for (name, s) in [("sfg_mean", &result.mean), ("sfg_single", &result.single)] {
        let mut f = GridFile::from_spectrum3d(s).with_provenance(doc.run.seed, hash);
        f.header.carrier = cfg.grid.omega_pump;
        out.grid(&format!("{name}.grid"), &f)?;
    }
    for plane in [Plane::WalkOff, Plane::Orthogonal] {
        let view = SpectrometerView {
            plane,
            slit: doc.analysis.slit,
            axes: AxisMode::Frequency,
        };
        let s = slice_spectrum(&result.mean, &view, cfg.grid.omega_pump)?;
        out.csv(&format!("sfg_mean_{}.csv", plane_code(plane)), spectrum_csv(&s, "stochastic"))?;
    }
    Ok(())
}

fn load_spectrum3d(path: &Path, doc: &ConfigDocument) -> Result<(Spectrum3D, f64), CliError> {
    let f = read_grid(path)?;
    if f.header.config_hash != doc.hash_bytes() {
        eprintln!(
            "warning: {} was produced by config {}, analysing with config {}",
            path.display(),
            f.header.config_hash_hex(),
            doc.hash()
        );
    }
    let GridData::Real(values) = f.data else {
        return Err(CliError::Usage(format!("{}: expected a real spectrum, found a complex field", path.display())));
    };
    let values = values
        .into_dimensionality()
        .map_err(|_| CliError::Usage(format!("{}: expected a 3D (q_x, q_y, Ω) spectrum", path.display())))?;
    let axes: [_; 3] = f.header.axes.try_into().expect("three axes");
    let s = Spectrum3D::new(axes, values, f.header.normalization.unwrap_or(Normalization::Arbitrary))
        .map_err(upconv::analysis::AnalysisError::from)?;
    Ok((s, f.header.carrier))
}

fn analyze(doc: &ConfigDocument, input: &Path, out: &mut Run) -> Result<(), CliError> {
    let (s, carrier) = load_spectrum3d(input, doc)?;
    let radii = doc.mask_radii()?;
    let summary = summarize_far_field(&s, carrier, radii, doc.analysis.slit, doc.centroid_mode()?)?;
    let plane = doc.analysis.plane;
    let code = plane_code(plane);
    let view = SpectrometerView {
        plane,
        slit: doc.analysis.slit,
        axes: AxisMode::Frequency,
    };
    // full image clipped at a fraction of the coherent peak, as displayed
    let clipped = split_coherent_incoherent_3d(&s, radii, Some(doc.analysis.truncate))?;
    let mut display = slice_spectrum(&s, &view, carrier)?;
    let cap = doc.analysis.truncate * clipped.coherent_peak;
    display.values.mapv_inplace(|v| v.min(cap));
    out.csv(&format!("display_{code}.csv"), spectrum_csv(&display, "stochastic"))?;
    let experimental = to_experimental_axes(&display, carrier)?;
    out.csv(&format!("display_{code}_experimental.csv"), spectrum_csv(&experimental, "stochastic"))?;
    let residual = match plane {
        Plane::WalkOff => &summary.walkoff,
        Plane::Orthogonal => &summary.orthogonal,
    };
    out.csv(&format!("incoherent_{code}.csv"), spectrum_csv(residual, "stochastic"))?;
    let sp = &summary.split;
    let rows: Vec<(&str, Option<f64>, &str)> = vec![
        ("n_coh", Some(sp.n_coh), "photons"),
        ("n_inc", Some(sp.n_inc), "photons"),
        ("coherent_peak", Some(sp.coherent_peak), "photons/mode"),
        ("incoherent_peak", Some(sp.incoherent_peak), "photons/mode"),
        ("mask_cells", Some(sp.mask_cells as f64), "cells"),
        ("lambda_inc", summary.lambda_inc, "m"),
        ("ridge_slope", summary.ridge_slope, "m/s"),
    ];
    out.csv("summary.csv", |mut w| {
        use std::io::Write;
        writeln!(w, "quantity,value,unit,provenance")?;
        for (name, v, unit) in rows {
            writeln!(w, "{name},{},{unit},stochastic", v.map(num).unwrap_or_default())?;
        }
        flush(w)
    })
}

fn sweep(doc: &ConfigDocument, args: &SweepArgs, cli_angles: bool, out: &mut Run) -> Result<(), CliError> {
    let engine = doc.sweep.engine;
    let setup = doc.sweep_setup(engine)?;
    let t = Instant::now();
    let result = match &args.lengths {
        Some(_) if cli_angles => return Err(usage("--lengths", "cannot be combined with --angles")),
        Some(l) => {
            let (s, st, e) = parse_range(l, Dimension::Length).map_err(|m| usage("--lengths", m))?;
            length_sweep(&setup, &range_values(s, st, e), engine)?
        }
        None => angle_sweep(&setup, &doc.sweep.angles, engine)?,
    };
    out.time("sweep", t.elapsed().as_secs_f64());
    out.csv(&format!("sweep_{}.csv", engine.name()), sweep_csv(&result))
}
