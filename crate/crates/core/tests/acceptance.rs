//! Acceptance gate: thirteen criteria, one PASS/FAIL line each.
//!
//! Runs with its own harness so the lines are always printed. Every
//! tolerance and budget is a named constant below. Criteria 5 to 7 share the
//! expensive 128^3 shrink-wrap runs, which dominate the wall time.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bcdi::dcdi::{calibrate_window, dcdi_reconstruct, locate_window, ReconstructionResult};
use bcdi::experiment::{compare_traces, SeedComparison};
use bcdi::fft::{forward_centered, inverse_centered, Fft3};
use bcdi::forward::{simulate_intensity_direct, simulate_intensity_fft, ForwardConfig, QGrid};
use bcdi::metrics::{abs_r, chi2, evaluate, phase_z_derivative, register, rms_d, MetricsReport};
use bcdi::model::{build_object, build_phase_field, CrystalSpec, Deformation, Inclusion};
use bcdi::noise::{apply_poisson, NoiseSpec};
use bcdi::shrinkwrap::{
    run_shrinkwrap, seed_from_autocorrelation, seed_from_dcdi, seed_from_truth, MetricTrace,
    ShrinkwrapParams,
};
use bcdi::volume::{ComplexVolume, Dims, IntensityVolume};

// 1
const FORWARD_CELLS: usize = 8;
const FORWARD_REL_TOL: f64 = 1e-10;
const FORWARD_BUDGET: Duration = Duration::from_secs(60);
// 2
const RANDOM_SPECS: usize = 20;
const PARSEVAL_TOL: f64 = 1e-10;
// 3: amplitude error of the frozen window in the calibration scan at 16^3
const FROZEN_CALIBRATION_D_ABS: f64 = 8.35e-14;
const EXACTNESS_FACTOR: f64 = 2.0;
const EXACTNESS_CELLS: usize = 16;
const EXACTNESS_BUDGET: Duration = Duration::from_secs(120);
// 4
const DC_TOL: f64 = 1e-12;
// 5 to 7
const SEEDING_FRACTION: f64 = 0.5;
const SEEDING_BUDGET: Duration = Duration::from_secs(30 * 60);
const NOISE_SEEDS: [u64; 3] = [1, 2, 3];
// 8 and 9
const METRIC_TOL: f64 = 1e-12;
const REGISTRATION_TOL: f64 = 1e-12;
// 10
const FIXED_POINT_CHI2: f64 = 1e-12;
const FIXED_POINT_ITERS: usize = 100;
// 11
const NOISE_SIGMAS: f64 = 5.0;
// 13
const DIVERGENCE_D_FACTOR: f64 = 10.0;
const DIVERGENCE_CHI2_CHANGE: f64 = 0.10;

type Check = std::result::Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn c01_forward_oracle() -> Check {
    let spec = CrystalSpec::cubic(FORWARD_CELLS);
    let t0 = Instant::now();
    let object = build_object(&spec).map_err(err)?;
    let cfg = ForwardConfig::default();
    let direct = simulate_intensity_direct(&object, &spec, &cfg).map_err(err)?;
    let fast = simulate_intensity_fft(&object, &cfg).map_err(err)?;
    let elapsed = t0.elapsed();
    let peak = fast.max();
    let rel = direct
        .data
        .iter()
        .zip(&fast.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / peak;
    Ok((
        rel < FORWARD_REL_TOL && elapsed < FORWARD_BUDGET,
        format!(
            "{}^3 cells in {}^3: max |direct - fft| / peak = {rel:.3e} (< {FORWARD_REL_TOL:e}), {:.1} s (< {} s)",
            FORWARD_CELLS,
            spec.array_dims().0[0],
            elapsed.as_secs_f64(),
            FORWARD_BUDGET.as_secs()
        ),
    ))
}

fn random_spec(rng: &mut ChaCha8Rng) -> CrystalSpec {
    let n = rng.random_range(3..=8usize);
    let s = n as f64;
    let inclusions = (0..rng.random_range(0..=3))
        .map(|_| Inclusion {
            center: [
                rng.random_range(0.0..s),
                rng.random_range(0.0..s),
                rng.random_range(0.0..s / 2.0),
            ],
            radius: rng.random_range(0.5..s / 2.0),
            beta: rng.random_range(0.9..=1.0),
        })
        .collect();
    CrystalSpec {
        n_cells: [n; 3],
        lattice_const: rng.random_range(1.0..100.0),
        max_phase: rng.random_range(-3.0..3.0),
        inclusions: Some(inclusions),
        oversampling: rng.random_range(2..=4),
        reflection: [0, 0, rng.random_range(1..=3)],
        deformation: if rng.random_bool(0.5) {
            Deformation::Whole
        } else {
            Deformation::DefectHalf
        },
        ..CrystalSpec::default()
    }
}

fn c02_parseval() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut negatives = 0usize;
    for _ in 0..RANDOM_SPECS {
        let spec = random_spec(&mut rng);
        let cfg = ForwardConfig {
            intensity_scale: rng.random_range(0.1..10.0),
            ..Default::default()
        };
        let object = build_object(&spec).map_err(err)?;
        let iv = simulate_intensity_fft(&object, &cfg).map_err(err)?;
        let expected = cfg.intensity_scale * object.dims.len() as f64 * object.energy();
        worst = worst.max((iv.total() - expected).abs() / expected);
        negatives += iv.data.iter().filter(|v| v.is_nan() || **v < 0.0).count();
    }
    Ok((
        worst < PARSEVAL_TOL && negatives == 0,
        format!(
            "{RANDOM_SPECS} random specs: worst Parseval error {worst:.3e} (< {PARSEVAL_TOL:e}), {negatives} negative voxels"
        ),
    ))
}

fn c03_dcdi_exactness() -> Check {
    let t0 = Instant::now();
    let spec = CrystalSpec {
        deformation: Deformation::DefectHalf,
        ..CrystalSpec::cubic(EXACTNESS_CELLS)
    };
    let truth = build_object(&spec).map_err(err)?;
    let iv = simulate_intensity_fft(&truth, &ForwardConfig::default()).map_err(err)?;
    let rec = dcdi_reconstruct(&iv, &spec).map_err(err)?;
    let m = evaluate(&rec, &truth, &iv).map_err(err)?;
    let elapsed = t0.elapsed();

    // re-derive the calibration: one inclusion, flat phase, every window scanned
    let s = EXACTNESS_CELLS as f64;
    let cal_spec = CrystalSpec {
        max_phase: 0.0,
        inclusions: Some(vec![Inclusion {
            center: [0.3 * s, 0.6 * s, 0.25 * s],
            radius: s / 8.0 + 0.5,
            beta: 0.9,
        }]),
        ..CrystalSpec::cubic(EXACTNESS_CELLS)
    };
    let cal_truth = build_object(&cal_spec).map_err(err)?;
    let cal_iv = simulate_intensity_fft(&cal_truth, &ForwardConfig::default()).map_err(err)?;
    let cands = calibrate_window(&cal_iv, &cal_spec, &cal_truth).map_err(err)?;
    let frozen = locate_window(&cal_spec).map_err(err)?;
    let mine = cands
        .iter()
        .find(|c| c.window == frozen)
        .map(|c| c.d_abs)
        .ok_or("frozen window missing from the scan")?;
    let best = cands[0].d_abs;

    let limit = EXACTNESS_FACTOR * FROZEN_CALIBRATION_D_ABS;
    Ok((
        m.d_abs <= limit && elapsed < EXACTNESS_BUDGET && mine <= limit,
        format!(
            "{0}^3 defect-half crystal: d_abs {1:.3e} (<= {EXACTNESS_FACTOR} x {FROZEN_CALIBRATION_D_ABS:e}), {2:.1} s (< {3} s); calibration scan: frozen window {mine:.3e}, best of {4} windows {best:.3e}",
            EXACTNESS_CELLS,
            m.d_abs,
            elapsed.as_secs_f64(),
            EXACTNESS_BUDGET.as_secs(),
            cands.len()
        ),
    ))
}

fn c04_dc_insensitivity() -> Check {
    let spec = CrystalSpec::default();
    let truth = build_object(&spec).map_err(err)?;
    let iv = simulate_intensity_fft(&truth, &ForwardConfig::default()).map_err(err)?;
    let base = dcdi_reconstruct(&iv, &spec).map_err(err)?;
    let dc = QGrid::new(iv.dims, iv.pitch).dc_index();

    let mut at_dc = iv.clone();
    at_dc.data[dc] += 0.1 * iv.data[dc];
    let d_dc = max_abs_diff(&dcdi_reconstruct(&at_dc, &spec).map_err(err)?.object.data, &base.object.data);

    let offset = iv.total() / iv.data.len() as f64;
    let mut uniform = iv.clone();
    for v in uniform.data.iter_mut() {
        *v += offset;
    }
    let d_uni = max_abs_diff(&dcdi_reconstruct(&uniform, &spec).map_err(err)?.object.data, &base.object.data);
    Ok((
        d_dc < DC_TOL && d_uni < DC_TOL,
        format!(
            "default crystal: constant added at q = 0 moves the object by {d_dc:.3e}, constant {offset:.3e} added everywhere by {d_uni:.3e} (< {DC_TOL:e})"
        ),
    ))
}

struct Pair {
    dcdi: MetricsReport,
    from_dcdi: MetricsReport,
    from_autocorr: MetricsReport,
    comparison: SeedComparison,
    elapsed: Duration,
}

fn refine(
    iv: &IntensityVolume,
    truth: &ComplexVolume,
    seed: bcdi::shrinkwrap::Seed,
) -> std::result::Result<(MetricsReport, MetricTrace), String> {
    let params = ShrinkwrapParams::default();
    let out: ReconstructionResult = run_shrinkwrap(iv, &seed, &params, None).map_err(err)?;
    let report = evaluate(&out, truth, iv).map_err(err)?;
    Ok((report, out.trace.unwrap_or_default()))
}

fn seeding_pair(noise_seed: Option<u64>) -> std::result::Result<Pair, String> {
    let t0 = Instant::now();
    let spec = CrystalSpec::default();
    let truth = build_object(&spec).map_err(err)?;
    let mut iv = simulate_intensity_fft(&truth, &ForwardConfig::default()).map_err(err)?;
    if let Some(rng_seed) = noise_seed {
        iv = apply_poisson(&iv, &NoiseSpec { rng_seed, ..NoiseSpec::default() }).map_err(err)?;
    }
    let rec = dcdi_reconstruct(&iv, &spec).map_err(err)?;
    let dcdi = evaluate(&rec, &truth, &iv).map_err(err)?;
    let (from_dcdi, td) = refine(&iv, &truth, seed_from_dcdi(&rec))?;
    let (from_autocorr, ta) = refine(&iv, &truth, seed_from_autocorrelation(&iv).map_err(err)?)?;
    let comparison = compare_traces(&td, &ta, noise_seed.is_some()).map_err(err)?;
    Ok(Pair {
        dcdi,
        from_dcdi,
        from_autocorr,
        comparison,
        elapsed: t0.elapsed(),
    })
}

fn pair_line(label: &str, p: &Pair) -> String {
    let c = &p.comparison;
    format!(
        "{label}: final chi2 {:.3e} (dcdi seed) vs {:.3e} (autocorr seed), one-step dcdi {:.3e}; target reached at iteration {} ({:.1}% of the run); d_abs {:.3e} vs {:.3e}",
        c.final_chi2_dcdi,
        c.final_chi2_autocorr,
        p.dcdi.chi2,
        c.iters_dcdi.map(|i| i.to_string()).unwrap_or_else(|| "never".into()),
        100.0 * c.fraction_of_run,
        p.from_dcdi.d_abs,
        p.from_autocorr.d_abs
    )
}

fn c05_seeding_clean(clean: &std::result::Result<Pair, String>) -> Check {
    let p = clean.as_ref().map_err(|e| e.clone())?;
    let c = &p.comparison;
    let ok = c.final_chi2_dcdi < c.final_chi2_autocorr
        && c.fraction_of_run <= SEEDING_FRACTION
        && p.elapsed < SEEDING_BUDGET;
    Ok((
        ok,
        format!(
            "{}; limit {:.0}%; {:.0} s (< {} s)",
            pair_line("no noise", p),
            100.0 * SEEDING_FRACTION,
            p.elapsed.as_secs_f64(),
            SEEDING_BUDGET.as_secs()
        ),
    ))
}

fn c06_seeding_noisy(noisy: &[(u64, std::result::Result<Pair, String>)]) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (seed, p) in noisy {
        match p {
            Ok(p) => {
                let c = &p.comparison;
                let strict = c.final_chi2_dcdi < c.final_chi2_autocorr;
                ok &= strict;
                parts.push(format!(
                    "rng {seed}: {:.3e} {} {:.3e}",
                    c.final_chi2_dcdi,
                    if strict { "<" } else { ">=" },
                    c.final_chi2_autocorr
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("rng {seed}: {e}"));
            }
        }
    }
    Ok((ok, format!("1e11 photons, final chi2 dcdi seed vs autocorr seed: {}", parts.join("; "))))
}

fn c07_refinement_repairs(
    clean: &std::result::Result<Pair, String>,
    noisy: &[(u64, std::result::Result<Pair, String>)],
) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut cases: Vec<(String, &std::result::Result<Pair, String>)> = vec![("no noise".into(), clean)];
    cases.extend(noisy.iter().map(|(s, p)| (format!("rng {s}"), p)));
    for (label, p) in cases {
        match p {
            Ok(p) => {
                let better = p.from_dcdi.d_abs < p.dcdi.d_abs;
                ok &= better;
                parts.push(format!("{label}: {:.3e} vs {:.3e}", p.from_dcdi.d_abs, p.dcdi.d_abs));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{label}: {e}"));
            }
        }
    }
    Ok((ok, format!("d_abs refined from dcdi vs dcdi alone: {}", parts.join("; "))))
}

fn field(values: &[f64]) -> IntensityVolume {
    IntensityVolume {
        data: values.to_vec(),
        dims: Dims([values.len(), 1, 1]),
        pitch: 1.0,
        scale: 1.0,
        photon_scale: None,
    }
}

fn c08_metric_suite() -> Check {
    let mut worst = 0.0f64;
    let mut note = |got: f64, want: f64| worst = worst.max((got - want).abs());
    note(chi2(&field(&[4.0]), &field(&[1.0])).map_err(err)?, 0.25);
    note(chi2(&field(&[1.0, 1.0]), &field(&[0.0, 0.0])).map_err(err)?, 1.0);
    let all = [true, true];
    note(rms_d(&[2.0, 2.0], &[1.0, 3.0], &all).map_err(err)?, 1.0);
    note(abs_r(&[2.0, 2.0], &[1.0, 3.0], &all).map_err(err)?, 0.5f64.sqrt());
    note(abs_r(&[4.0, 4.0], &[2.0, 6.0], &all).map_err(err)?, 0.5f64.sqrt());

    // constant offset against the closed form
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ideal: Vec<f64> = (0..64).map(|_| rng.random_range(0.5..1.0)).collect();
    let c = 0.03;
    let rec: Vec<f64> = ideal.iter().map(|g| g + c).collect();
    let mean = ideal.iter().sum::<f64>() / 64.0;
    let spread: f64 = ideal.iter().map(|g| (g - mean).powi(2)).sum();
    note(rms_d(&rec, &ideal, &[true; 64]).map_err(err)?, (64.0 * c * c / spread).sqrt());

    // z-derivative of the default phase at cell centers
    let spec = CrystalSpec::default();
    let phase = build_phase_field(&spec).map_err(err)?;
    let cells = spec.cells();
    let deriv = phase_z_derivative(&phase, cells, spec.lattice_const).map_err(err)?;
    let gamma = spec.gamma().map_err(err)?;
    let [lx, ly, lz] = spec.lengths();
    let a = spec.lattice_const;
    let mut worst_deriv = 0.0f64;
    for (i, d) in deriv.iter().enumerate() {
        let [x, y, _] = cells.coords(i);
        let (px, py) = ((x as f64 + 0.5) * a, (y as f64 + 0.5) * a);
        let want = -gamma * ((px - lx / 2.0).powi(2) + (py - ly / 2.0).powi(2)) / lz;
        worst_deriv = worst_deriv.max((d - want).abs());
    }
    let flat = phase_z_derivative(&vec![0.7; cells.len()], cells, a).map_err(err)?;
    let flat_max = flat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let alpha = 0.013;
    let ramp: Vec<f64> = (0..cells.len()).map(|i| alpha * cells.coords(i)[2] as f64 * a).collect();
    let ramp_d = phase_z_derivative(&ramp, cells, a).map_err(err)?;
    let ramp_err = ramp_d.iter().fold(0.0f64, |m, v| m.max((v - alpha).abs()));
    let all_worst = worst.max(worst_deriv).max(flat_max).max(ramp_err);
    Ok((
        all_worst < METRIC_TOL,
        format!(
            "hand values worst {worst:.2e}, parabolic phase derivative worst {worst_deriv:.2e}, constant {flat_max:.2e}, ramp {ramp_err:.2e} (< {METRIC_TOL:e})"
        ),
    ))
}

fn c09_registration() -> Check {
    let truth = build_object(&CrystalSpec::default()).map_err(err)?;
    let box_d = |aligned: &ComplexVolume| -> std::result::Result<f64, String> {
        let t = truth.crop_box().amplitude();
        let r = aligned.clone().with_box(truth.origin, truth.cells).crop_box().amplitude();
        rms_d(&r, &t, &vec![true; t.len()]).map_err(err)
    };
    let shifted = register(&truth.rolled([1, 0, 2]), &truth).map_err(err)?;
    let d_shift = box_d(&shifted.aligned)?;
    let twinned = register(&truth.twin().rolled([-3, 2, 1]), &truth).map_err(err)?;
    let d_twin = box_d(&twinned.aligned)?;
    let ok = shifted.shift == [1, 0, 2]
        && !shifted.twin
        && d_shift < REGISTRATION_TOL
        && twinned.twin
        && d_twin < REGISTRATION_TOL;
    Ok((
        ok,
        format!(
            "shift (1,0,2) recovered as {:?} twin={} d_abs {d_shift:.2e}; twin case twin={} d_abs {d_twin:.2e} (< {REGISTRATION_TOL:e})",
            shifted.shift, shifted.twin, twinned.twin
        ),
    ))
}

fn c10_fixed_point() -> Check {
    let truth = build_object(&CrystalSpec::default()).map_err(err)?;
    let iv = simulate_intensity_fft(&truth, &ForwardConfig::default()).map_err(err)?;
    let params = ShrinkwrapParams {
        max_iterations: FIXED_POINT_ITERS,
        ..Default::default()
    };
    let out = run_shrinkwrap(&iv, &seed_from_truth(&truth), &params, None).map_err(err)?;
    let trace = out.trace.unwrap_or_default();
    let worst = trace.records.iter().map(|r| r.chi2).fold(0.0, f64::max);
    let complete = trace.records.len() == FIXED_POINT_ITERS + 1;
    Ok((
        complete && worst < FIXED_POINT_CHI2,
        format!(
            "ground-truth seed, default parameters: max chi2 over {} records {worst:.3e} (< {FIXED_POINT_CHI2:e})",
            trace.records.len()
        ),
    ))
}

fn c11_noise() -> Check {
    let truth = build_object(&CrystalSpec::default()).map_err(err)?;
    let iv = simulate_intensity_fft(&truth, &ForwardConfig::default()).map_err(err)?;
    let spec = NoiseSpec::default();
    let run = |threads: usize| -> std::result::Result<IntensityVolume, String> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(err)?
            .install(|| apply_poisson(&iv, &spec))
            .map_err(err)
    };
    let one = run(1)?;
    let four = run(4)?;
    let identical = one.data.iter().zip(&four.data).all(|(a, b)| a.to_bits() == b.to_bits());

    let dims = Dims::cube(32);
    let flat = IntensityVolume {
        data: vec![0.37; dims.len()],
        dims,
        pitch: 1.0,
        scale: 1.0,
        photon_scale: None,
    };
    let noisy = apply_poisson(&flat, &spec).map_err(err)?;
    let v = dims.len() as f64;
    let mean = noisy.total() / v;
    let sigma = (spec.max_photons / v).sqrt();
    let z = (mean - spec.max_photons).abs() / sigma;
    Ok((
        identical && z < NOISE_SIGMAS,
        format!(
            "128^3 draw bit-identical on 1 and 4 threads: {identical}; constant field mean off by {z:.2} sigma (< {NOISE_SIGMAS})"
        ),
    ))
}

const SMOKE_CONFIG: &str = "[crystal]\nn_cells = [8, 8, 8]\n\n[shrinkwrap]\nmax_iterations = 100\n";

fn run_cli(config: &Path, out: &Path) -> std::result::Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_bcdi"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(err)?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    Ok(())
}

fn csv_files(dir: &Path) -> std::result::Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&p).unwrap_or_default())
        })
        .collect();
    files.sort();
    Ok(files)
}

fn c12_end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let config = tmp.path().join("smoke.toml");
    std::fs::write(&config, SMOKE_CONFIG).map_err(err)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_cli(&config, &a)?;
    run_cli(&config, &b)?;
    let fa = csv_files(&a)?;
    let fb = csv_files(&b)?;
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    Ok((
        fa.len() >= 6 && fa == fb,
        format!("two `run` invocations, {} CSVs byte-identical: {} ({})", fa.len(), fa == fb, names.join(", ")),
    ))
}

fn c13_divergence() -> Check {
    let spec = CrystalSpec::default();
    let truth = build_object(&spec).map_err(err)?;
    let iv = simulate_intensity_fft(&truth, &ForwardConfig::default()).map_err(err)?;
    let as_result = |object: ComplexVolume| ReconstructionResult {
        support: object.box_mask(),
        object,
        method: bcdi::dcdi::Method::Dcdi,
        intensity_scale: 1.0,
        trace: None,
    };
    // baseline: a uniform gain error, seen by both metrics
    let gain = 1e-5;
    let mut base = truth.clone();
    for v in base.data.iter_mut() {
        *v *= 1.0 + gain;
    }
    // perturbation: a small real multiplier on the spectrum's imaginary axis,
    // F -> F (1 + i eps(q)), which moves |F| only at second order
    let eta = 1e-3;
    let shift_cells = 4.0;
    let fft = Fft3::new(truth.dims);
    let qgrid = QGrid::new(truth.dims, truth.pitch);
    let mut spectrum = forward_centered(&fft, &base.data);
    for (i, f) in spectrum.iter_mut().enumerate() {
        let qz = qgrid.q(2, truth.dims.coords(i)[2]);
        let eps = eta * (qz * shift_cells * truth.pitch).sin();
        *f *= Complex64::new(1.0, eps);
    }
    let perturbed = ComplexVolume {
        data: inverse_centered(&fft, &spectrum),
        ..base.clone()
    };
    let m0 = evaluate(&as_result(base), &truth, &iv).map_err(err)?;
    let m1 = evaluate(&as_result(perturbed), &truth, &iv).map_err(err)?;
    let d_factor = m1.d_abs / m0.d_abs;
    let chi2_change = (m1.chi2 - m0.chi2).abs() / m0.chi2;
    Ok((
        d_factor > DIVERGENCE_D_FACTOR && chi2_change < DIVERGENCE_CHI2_CHANGE,
        format!(
            "d_abs {:.3e} -> {:.3e} (x{d_factor:.1}, > {DIVERGENCE_D_FACTOR}); chi2 {:.3e} -> {:.3e} ({:.2}% change, < {:.0}%)",
            m0.d_abs,
            m1.d_abs,
            m0.chi2,
            m1.chi2,
            100.0 * chi2_change,
            100.0 * DIVERGENCE_CHI2_CHANGE
        ),
    ))
}

fn guarded(f: &mut dyn FnMut() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())),
    }
}

fn report(id: usize, name: &str, result: Check, failed: &mut usize) {
    let (ok, detail) = match result {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    if !ok {
        *failed += 1;
    }
    println!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn main() {
    // `cargo test -- --list` and filters from the default harness are not supported
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let t0 = Instant::now();
    // ACCEPTANCE_ONLY=3,4 runs a subset while developing; the gate is the full run
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut failed = 0;
    let mut skipped = 0;
    let mut step = |id: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        if wanted(id) {
            report(id, name, guarded(f), &mut failed);
        } else {
            skipped += 1;
            println!("SKIP {id:>2} {name}");
        }
    };
    step(1, "forward-model oracle", &mut c01_forward_oracle);
    step(2, "Parseval and non-negativity", &mut c02_parseval);
    step(3, "DCDI exactness", &mut c03_dcdi_exactness);
    step(4, "DCDI DC-insensitivity", &mut c04_dc_insensitivity);

    let seeding = [5, 6, 7].iter().any(|&i| wanted(i));
    let pair = |s: Option<u64>| {
        if !seeding {
            return Err("not run".to_string());
        }
        let label = s.map(|s| format!("noisy, rng {s}")).unwrap_or_else(|| "clean".into());
        eprintln!("seeding runs ({label}): 2 x 2000 iterations on 128^3 ...");
        let out = catch_unwind(|| seeding_pair(s)).unwrap_or_else(|_| Err("panic".into()));
        if let Ok(p) = &out {
            eprintln!("seeding runs ({label}): done in {:.0} s", p.elapsed.as_secs_f64());
        }
        out
    };
    let clean = pair(None);
    let noisy: Vec<(u64, std::result::Result<Pair, String>)> =
        if wanted(6) || wanted(7) { NOISE_SEEDS.iter().map(|&s| (s, pair(Some(s)))).collect() } else { Vec::new() };
    step(5, "seeding ordering, no noise", &mut || c05_seeding_clean(&clean));
    step(6, "seeding ordering, noisy", &mut || c06_seeding_noisy(&noisy));
    step(7, "refinement repairs DCDI", &mut || c07_refinement_repairs(&clean, &noisy));

    step(8, "metric unit suite", &mut c08_metric_suite);
    step(9, "registration oracle", &mut c09_registration);
    step(10, "HIO fixed point", &mut c10_fixed_point);
    step(11, "noise determinism and statistics", &mut c11_noise);
    step(12, "end-to-end determinism", &mut c12_end_to_end);
    step(13, "multi-metric divergence", &mut c13_divergence);
    println!(
        "acceptance: {} of {} criteria passed, {skipped} skipped, {:.0} s",
        13 - failed - skipped,
        13 - skipped,
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
