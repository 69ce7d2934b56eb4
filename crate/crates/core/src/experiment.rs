//! The experiment matrix: simulate once, then per noise case run the
//! deterministic reconstruction and every requested refinement branch,
//! writing `summary.csv`, one `trace_<seed>_<noise>.csv` per branch and,
//! when asked, volume dumps.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{noise_tag, ExperimentConfig, Variant};
use crate::dcdi::{dcdi_reconstruct, ReconstructionResult};
use crate::error::{Error, Result};
use crate::forward::simulate_intensity_fft;
use crate::metrics::{evaluate, MetricsReport, SUMMARY_HEADER};
use crate::model::build_object;
use crate::noise::{apply_poisson, NoiseSpec};
use crate::shrinkwrap::{
    run_shrinkwrap_with, seed_from_autocorrelation, seed_from_dcdi, seed_from_truth, MetricTrace, Seed,
    SeedKind, TraceRecord,
};
use crate::volume::{ComplexVolume, IntensityVolume};
use crate::volume_io::{write_atomic, write_complex, write_intensity};

pub const TRACE_HEADER: [&str; 6] = ["iteration", "chi2", "d_abs", "r_abs", "d_ph_z", "r_ph_z"];

/// Ground truth and its noise-free intensity.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(ComplexVolume, IntensityVolume)> {
    let truth = build_object(&cfg.crystal)?;
    let clean = simulate_intensity_fft(&truth, &cfg.forward)?;
    Ok((truth, clean))
}

/// The data one noise case works from.
pub fn measured(cfg: &ExperimentConfig, clean: &IntensityVolume, noisy: bool) -> Result<IntensityVolume> {
    if noisy {
        apply_poisson(clean, &NoiseSpec { enabled: true, ..cfg.noise.clone() })
    } else {
        Ok(clean.clone())
    }
}

/// Noise level as written in the summary: `none` or the peak photon count.
pub fn noise_label(cfg: &ExperimentConfig, noisy: bool) -> String {
    if noisy {
        format!("{:e}", cfg.noise.max_photons)
    } else {
        "none".into()
    }
}

#[derive(Debug)]
pub struct BranchOutcome {
    pub variant: Variant,
    pub report: MetricsReport,
    pub trace: MetricTrace,
    pub result: ReconstructionResult,
}

#[derive(Debug)]
pub struct CaseOutcome {
    pub noisy: bool,
    pub dcdi: Option<(ReconstructionResult, MetricsReport)>,
    pub branches: Vec<BranchOutcome>,
}

#[derive(Debug, Default)]
pub struct ExperimentReport {
    pub cases: Vec<CaseOutcome>,
    /// Stage label and error of every variant that did not finish.
    pub failures: Vec<(String, Error)>,
    pub summary_path: Option<PathBuf>,
}

impl ExperimentReport {
    pub fn case(&self, noisy: bool) -> Option<&CaseOutcome> {
        self.cases.iter().find(|c| c.noisy == noisy)
    }

    pub fn branch(&self, seed: SeedKind, noisy: bool) -> Option<&BranchOutcome> {
        self.case(noisy)?
            .branches
            .iter()
            .find(|b| b.variant.seed == seed)
    }
}

fn trace_row(r: &TraceRecord) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    vec![
        r.iteration.to_string(),
        r.chi2.to_string(),
        opt(r.d_abs),
        opt(r.r_abs),
        opt(r.d_ph_z),
        opt(r.r_ph_z),
    ]
}

pub fn read_trace(path: &Path) -> Result<MetricTrace> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(Error::Config(format!("{}: not a trace file", path.display())));
    }
    let mut trace = MetricTrace::default();
    for row in rd.records() {
        let row = row?;
        let num = |i: usize| -> Result<Option<f64>> {
            let s = &row[i];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{}: bad number {s:?}", path.display())))
        };
        trace.records.push(TraceRecord {
            iteration: row[0]
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad iteration", path.display())))?,
            chi2: num(1)?.unwrap_or(f64::NAN),
            d_abs: num(2)?,
            r_abs: num(3)?,
            d_ph_z: num(4)?,
            r_ph_z: num(5)?,
        });
    }
    Ok(trace)
}

pub fn trace_path(dir: &Path, variant: &Variant) -> PathBuf {
    dir.join(format!("trace_{}.csv", variant.name()))
}

fn run_branch(
    cfg: &ExperimentConfig,
    variant: Variant,
    truth: &ComplexVolume,
    intensity: &IntensityVolume,
    dcdi: Option<&ReconstructionResult>,
) -> Result<BranchOutcome> {
    let seed: Seed = match variant.seed {
        SeedKind::Dcdi => seed_from_dcdi(dcdi.ok_or_else(|| {
            Error::ReconstructionFailed("no deterministic reconstruction to seed from".into())
        })?),
        SeedKind::Autocorrelation => seed_from_autocorrelation(intensity)?,
        SeedKind::GroundTruth => seed_from_truth(truth),
    };
    let dir = &cfg.output.dir;
    let every = cfg.output.trace_every;
    let last = cfg.shrinkwrap.max_iterations;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut out = csv::Writer::from_writer(tmp.reopen()?);
    out.write_record(TRACE_HEADER)?;
    let mut sink = |r: &TraceRecord| -> Result<()> {
        if r.iteration.is_multiple_of(every) || r.iteration == last {
            out.write_record(trace_row(r))?;
            out.flush()?;
        }
        Ok(())
    };
    let result = run_shrinkwrap_with(intensity, &seed, &cfg.shrinkwrap, Some(truth), &mut sink)?;
    out.flush()?;
    drop(out);
    tmp.as_file().sync_all()?;
    tmp.persist(trace_path(dir, &variant)).map_err(|e| Error::Io(e.error))?;
    let report = evaluate(&result, truth, intensity)?;
    if cfg.output.dump_volumes {
        write_complex(&dir.join(format!("object_{}", variant.name())), &result.object)?;
    }
    Ok(BranchOutcome {
        variant,
        report,
        trace: result.trace.clone().unwrap_or_default(),
        result,
    })
}

fn run_case(
    cfg: &ExperimentConfig,
    noisy: bool,
    truth: &ComplexVolume,
    clean: &IntensityVolume,
    failures: &mut Vec<(String, Error)>,
) -> Result<Option<CaseOutcome>> {
    let variants: Vec<Variant> = cfg.variants.iter().copied().filter(|v| v.noise == noisy).collect();
    if variants.is_empty() {
        return Ok(None);
    }
    let tag = noise_tag(noisy);
    let intensity = match measured(cfg, clean, noisy) {
        Ok(iv) => iv,
        Err(e) => {
            failures.push((format!("noise ({tag})"), e));
            return Ok(None);
        }
    };
    let dir = &cfg.output.dir;
    if cfg.output.dump_volumes {
        write_intensity(&dir.join(format!("intensity_{tag}")), &intensity)?;
    }
    let dcdi = dcdi_reconstruct(&intensity, &cfg.crystal)
        .and_then(|r| evaluate(&r, truth, &intensity).map(|m| (r, m)));
    let dcdi = match dcdi {
        Ok(d) => {
            if cfg.output.dump_volumes {
                write_complex(&dir.join(format!("dcdi_{tag}")), &d.0.object)?;
            }
            Some(d)
        }
        Err(e) => {
            failures.push((format!("dcdi_{tag}"), e));
            None
        }
    };
    // branches share nothing mutable; each streams its own trace file
    let results: Vec<(Variant, Result<BranchOutcome>)> = variants
        .par_iter()
        .map(|&v| (v, run_branch(cfg, v, truth, &intensity, dcdi.as_ref().map(|d| &d.0))))
        .collect();
    let mut branches = Vec::new();
    for (v, r) in results {
        match r {
            Ok(b) => branches.push(b),
            Err(e) => failures.push((v.name(), e)),
        }
    }
    Ok(Some(CaseOutcome { noisy, dcdi, branches }))
}

pub fn summary_rows(cfg: &ExperimentConfig, report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for case in &report.cases {
        let noise = noise_label(cfg, case.noisy);
        if let Some((r, m)) = &case.dcdi {
            rows.push(m.csv_row(r.method.tag(), "none", &noise));
        }
        for b in &case.branches {
            rows.push(b.report.csv_row(b.result.method.tag(), b.variant.seed.tag(), &noise));
        }
    }
    rows
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Runs every variant of the config and writes the artifacts. Errors in one
/// variant are collected in the report; only setup and output failures abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let (truth, clean) = simulate(cfg)?;
    if cfg.output.dump_volumes {
        write_complex(&dir.join("truth"), &truth)?;
    }
    let mut report = ExperimentReport::default();
    for noisy in [false, true] {
        if let Some(case) = run_case(cfg, noisy, &truth, &clean, &mut report.failures)? {
            report.cases.push(case);
        }
    }
    let path = dir.join("summary.csv");
    write_atomic(&path, &csv_bytes(&SUMMARY_HEADER, &summary_rows(cfg, &report))?)?;
    report.summary_path = Some(path);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    DcdiBetter,
    Tie,
    AutocorrBetter,
    /// Lower final chi^2 for one seed, faster arrival for the other.
    Mixed,
}

impl Verdict {
    pub fn tag(self) -> &'static str {
        match self {
            Verdict::DcdiBetter => "dcdi-seed-better",
            Verdict::Tie => "tie",
            Verdict::AutocorrBetter => "autocorr-seed-better",
            Verdict::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedComparison {
    pub noisy: bool,
    pub final_chi2_dcdi: f64,
    pub final_chi2_autocorr: f64,
    /// The target: the autocorrelation branch's final chi^2.
    pub target: f64,
    /// First iteration at or below the target, per branch.
    pub iters_dcdi: Option<usize>,
    pub iters_autocorr: Option<usize>,
    /// `iters_dcdi / iters_autocorr`.
    pub ratio: f64,
    /// `iters_dcdi` over the length of the dcdi-seeded run.
    pub fraction_of_run: f64,
    pub verdict: Verdict,
}

impl SeedComparison {
    /// Reaches the target within half the run and ends strictly lower.
    pub fn dcdi_claim_holds(&self) -> bool {
        self.final_chi2_dcdi < self.final_chi2_autocorr && self.fraction_of_run <= 0.5
    }

    pub fn line(&self) -> String {
        let it = |v: Option<usize>| v.map(|i| i.to_string()).unwrap_or_else(|| "never".into());
        format!(
            "{}: final chi2 dcdi-seed {:e} vs autocorr-seed {:e}; dcdi-seed reaches autocorr final chi2 at iteration {} ({:.1}% of the run), autocorr-seed at {}; ratio {:.4}; verdict {}",
            noise_tag(self.noisy),
            self.final_chi2_dcdi,
            self.final_chi2_autocorr,
            it(self.iters_dcdi),
            100.0 * self.fraction_of_run,
            it(self.iters_autocorr),
            self.ratio,
            self.verdict.tag()
        )
    }
}

pub fn compare_traces(dcdi: &MetricTrace, autocorr: &MetricTrace, noisy: bool) -> Result<SeedComparison> {
    let (fd, fa) = match (dcdi.final_chi2(), autocorr.final_chi2()) {
        (Some(d), Some(a)) => (d, a),
        _ => return Err(Error::Config("empty trace in seed comparison".into())),
    };
    let target = fa;
    let iters_dcdi = dcdi.first_reaching(target);
    let iters_autocorr = autocorr.first_reaching(target);
    let len = dcdi.records.last().map(|r| r.iteration).unwrap_or(0);
    let ratio = match (iters_dcdi, iters_autocorr) {
        (Some(a), Some(b)) if a == b => 1.0,
        (Some(a), Some(b)) => a as f64 / b as f64,
        _ => f64::INFINITY,
    };
    let fraction_of_run = match iters_dcdi {
        Some(i) if len > 0 => i as f64 / len as f64,
        Some(_) => 0.0,
        None => f64::INFINITY,
    };
    let faster = ratio < 1.0;
    let slower = ratio > 1.0;
    let verdict = if fd == fa && !faster && !slower {
        Verdict::Tie
    } else if fd <= fa && !slower {
        Verdict::DcdiBetter
    } else if fd >= fa && !faster {
        Verdict::AutocorrBetter
    } else {
        Verdict::Mixed
    };
    Ok(SeedComparison {
        noisy,
        final_chi2_dcdi: fd,
        final_chi2_autocorr: fa,
        target,
        iters_dcdi,
        iters_autocorr,
        ratio,
        fraction_of_run,
        verdict,
    })
}

/// One comparison per noise case that ran both seed branches.
pub fn compare_seeds(report: &ExperimentReport) -> Result<Vec<SeedComparison>> {
    let mut out = Vec::new();
    for case in &report.cases {
        let get = |s: SeedKind| case.branches.iter().find(|b| b.variant.seed == s);
        match (get(SeedKind::Dcdi), get(SeedKind::Autocorrelation)) {
            (Some(d), Some(a)) => out.push(compare_traces(&d.trace, &a.trace, case.noisy)?),
            _ => {
                return Err(Error::Config(format!(
                    "{} case lacks a dcdi or autocorr branch",
                    noise_tag(case.noisy)
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no noise case to compare".into()));
    }
    Ok(out)
}

pub const COMPARISON_HEADER: [&str; 9] = [
    "noise",
    "final_chi2_dcdi",
    "final_chi2_autocorr",
    "iters_dcdi",
    "iters_autocorr",
    "ratio",
    "fraction_of_run",
    "claim_holds",
    "verdict",
];

pub fn write_comparison(dir: &Path, cmps: &[SeedComparison]) -> Result<PathBuf> {
    let it = |v: Option<usize>| v.map(|i| i.to_string()).unwrap_or_default();
    let rows: Vec<Vec<String>> = cmps
        .iter()
        .map(|c| {
            vec![
                noise_tag(c.noisy).to_string(),
                c.final_chi2_dcdi.to_string(),
                c.final_chi2_autocorr.to_string(),
                it(c.iters_dcdi),
                it(c.iters_autocorr),
                c.ratio.to_string(),
                c.fraction_of_run.to_string(),
                c.dcdi_claim_holds().to_string(),
                c.verdict.tag().to_string(),
            ]
        })
        .collect();
    let path = dir.join("comparison.csv");
    write_atomic(&path, &csv_bytes(&COMPARISON_HEADER, &rows)?)?;
    Ok(path)
}
