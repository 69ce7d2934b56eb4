use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bcdi::config::{load_config, noise_tag, ExperimentConfig, Variant};
use bcdi::dcdi::dcdi_reconstruct;
use bcdi::experiment::{
    compare_seeds, measured, noise_label, run_experiment, simulate, write_comparison, ExperimentReport,
};
use bcdi::metrics::{evaluate, SUMMARY_HEADER};
use bcdi::shrinkwrap::SeedKind;
use bcdi::volume_io::{write_atomic, write_complex, write_intensity};
use bcdi::{Error, Result};

#[derive(Parser)]
#[command(name = "bcdi", version, about = "Simulate and reconstruct Bragg CDI data of a strained crystal")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for `refine`.
    #[arg(long, global = true, value_enum, default_value = "dcdi")]
    seed_kind: SeedArg,
    /// Skip the noisy case.
    #[arg(long, global = true)]
    no_noise: bool,
    /// Write object and intensity volumes.
    #[arg(long, global = true)]
    dump_volumes: bool,
    /// Shrink-wrap iteration count (overrides `shrinkwrap.max_iterations`).
    #[arg(long, global = true)]
    max_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the ground truth and its clean and noisy intensities.
    Simulate,
    /// Deterministic reconstruction only.
    Reconstruct,
    /// Shrink-wrap from one seed kind.
    Refine,
    /// Both seeds, then the convergence comparison.
    Compare,
    /// The full matrix from the config.
    Run,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeedArg {
    Dcdi,
    Autocorr,
}

impl From<SeedArg> for SeedKind {
    fn from(s: SeedArg) -> Self {
        match s {
            SeedArg::Dcdi => SeedKind::Dcdi,
            SeedArg::Autocorr => SeedKind::Autocorrelation,
        }
    }
}

fn noise_cases(cfg: &ExperimentConfig, no_noise: bool) -> Vec<bool> {
    if no_noise || !cfg.noise.enabled {
        vec![false]
    } else {
        vec![false, true]
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(n) = cli.max_iters {
        cfg.shrinkwrap.max_iterations = n;
    }
    cfg.output.dump_volumes |= cli.dump_volumes;
    let cases = noise_cases(&cfg, cli.no_noise);
    let seeds: Vec<SeedKind> = match cli.verb {
        Verb::Refine => vec![cli.seed_kind.into()],
        Verb::Compare => vec![SeedKind::Dcdi, SeedKind::Autocorrelation],
        _ => Vec::new(),
    };
    if !seeds.is_empty() {
        cfg.variants = cases
            .iter()
            .flat_map(|&noise| seeds.iter().map(move |&seed| Variant { seed, noise }))
            .collect();
    } else if cli.no_noise {
        cfg.variants.retain(|v| !v.noise);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(cfg: &ExperimentConfig, cases: &[bool]) -> Result<()> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let (truth, clean) = simulate(cfg)?;
    write_complex(&dir.join("truth"), &truth)?;
    for &noisy in cases {
        let iv = measured(cfg, &clean, noisy)?;
        let stem = dir.join(format!("intensity_{}", noise_tag(noisy)));
        write_intensity(&stem, &iv)?;
        println!("wrote {} (total {:e})", stem.with_extension("bin").display(), iv.total());
    }
    Ok(())
}

fn cmd_reconstruct(cfg: &ExperimentConfig, cases: &[bool]) -> Result<bool> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let (truth, clean) = simulate(cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    let mut ok = true;
    for &noisy in cases {
        let tag = noise_tag(noisy);
        let iv = measured(cfg, &clean, noisy)?;
        match dcdi_reconstruct(&iv, &cfg.crystal).and_then(|r| evaluate(&r, &truth, &iv).map(|m| (r, m))) {
            Ok((rec, m)) => {
                println!("dcdi {tag}: d_abs {:e} d_ph_z {:e} chi2 {:e}", m.d_abs, m.d_ph_z, m.chi2);
                w.write_record(m.csv_row(rec.method.tag(), "none", &noise_label(cfg, noisy)))?;
                if cfg.output.dump_volumes {
                    write_complex(&dir.join(format!("dcdi_{tag}")), &rec.object)?;
                }
            }
            Err(e) => {
                eprintln!("dcdi {tag}: {e}");
                ok = false;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&dir.join("summary.csv"), &bytes)?;
    Ok(ok)
}

fn print_report(report: &ExperimentReport) {
    for case in &report.cases {
        let tag = noise_tag(case.noisy);
        if let Some((_, m)) = &case.dcdi {
            println!("{tag} dcdi: d_abs {:e} d_ph_z {:e} chi2 {:e}", m.d_abs, m.d_ph_z, m.chi2);
        }
        for b in &case.branches {
            let m = &b.report;
            println!(
                "{tag} shrinkwrap from {}: d_abs {:e} d_ph_z {:e} chi2 {:e}",
                b.variant.seed.tag(),
                m.d_abs,
                m.d_ph_z,
                m.chi2
            );
        }
    }
    for (stage, e) in &report.failures {
        eprintln!("failed {stage}: {e}");
    }
    if let Some(p) = &report.summary_path {
        println!("summary: {}", p.display());
    }
}

fn cmd_experiment(cfg: &ExperimentConfig, compare: bool) -> Result<bool> {
    let report = run_experiment(cfg)?;
    print_report(&report);
    let mut ok = report.failures.is_empty();
    let wants_compare = compare
        || [false, true].iter().any(|&n| {
            report.branch(SeedKind::Dcdi, n).is_some() && report.branch(SeedKind::Autocorrelation, n).is_some()
        });
    if wants_compare {
        match compare_seeds(&report) {
            Ok(cmps) => {
                for c in &cmps {
                    println!("{}", c.line());
                }
                write_comparison(&cfg.output.dir, &cmps)?;
            }
            Err(e) => {
                eprintln!("comparison: {e}");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli).and_then(|cfg| {
        let cases = noise_cases(&cfg, cli.no_noise);
        match cli.verb {
            Verb::Simulate => cmd_simulate(&cfg, &cases).map(|_| true),
            Verb::Reconstruct => cmd_reconstruct(&cfg, &cases),
            Verb::Refine | Verb::Run => cmd_experiment(&cfg, false),
            Verb::Compare => cmd_experiment(&cfg, true),
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
