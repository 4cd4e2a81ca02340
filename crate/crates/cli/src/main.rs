//! Command-line front end: runs the ROC, detection, throughput and
//! calibration experiments, and the golden run.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand as ClapSubcommand};

use ecra::detector::DetectionRule;
use ecra::experiment::{golden_run, run_experiment, ExperimentSpec, GoldenSpec, ModeSelection, Report, Subcommand};
use ecra::metrics::Calibration;
use ecra::params::SystemConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "ecra-sim", version, about = "Monte Carlo simulator for asynchronous random access with replica combining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, ClapSubcommand)]
enum Command {
    /// ROC of the plain and interference-aware detection rules.
    Roc(Common),
    /// Replica detection and correct-combining probabilities.
    Detect(Common),
    /// Spectral efficiency and packet loss of the SIC receiver.
    Throughput(Common),
    /// Detection threshold for a target false-alarm probability.
    Calibrate(Common),
    /// All experiment families at reduced size, plus a hash manifest.
    Golden(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON scenario configuration; unspecified fields take defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Trials per sweep point (samples per hypothesis for roc, H0 samples for calibrate).
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, value_name = "N", env = "ECRA_SIM_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Comma-separated channel loads.
    #[arg(long = "g", value_name = "LIST", value_delimiter = ',')]
    g: Vec<f64>,
    /// Es/N0 in dB.
    #[arg(long, value_name = "DB", allow_negative_numbers = true)]
    esn0: Option<f64>,
    /// Detection rule.
    #[arg(long, value_name = "RULE", default_value = "plain", value_parser = parse_rule)]
    rule: DetectionRule,
    /// Receivers evaluated by throughput.
    #[arg(long, value_name = "MODE", default_value = "both", value_parser = parse_mode)]
    mode: ModeSelection,
    /// Detection threshold.
    #[arg(long, value_name = "X", conflicts_with = "lambda_from", allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Take the detection threshold from a calibration file.
    #[arg(long, value_name = "PATH")]
    lambda_from: Option<PathBuf>,
    /// Target false-alarm probability for calibrate and golden.
    #[arg(long, value_name = "P", default_value_t = ecra::experiment::DEFAULT_TARGET_PF)]
    target_pf: f64,
    /// Channel load at which calibrate collects H0 samples.
    #[arg(long, value_name = "G", default_value_t = 1.0)]
    g_cal: f64,
    /// Receiver windows in the central region of one throughput trial.
    #[arg(long, value_name = "N", default_value_t = 10)]
    windows_per_trial: usize,
}

fn parse_rule(s: &str) -> Result<DetectionRule, String> {
    s.parse().map_err(|e: ecra::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ModeSelection, String> {
    s.parse().map_err(|e: ecra::Error| e.to_string())
}

fn base_config(c: &Common) -> anyhow::Result<SystemConfig> {
    let mut cfg = match &c.config {
        Some(p) => SystemConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => SystemConfig::default(),
    };
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(e) = c.esn0 {
        cfg.es_n0_db = e;
    }
    if let Some(l) = c.lambda {
        cfg.lambda = l;
    } else if let Some(p) = &c.lambda_from {
        cfg.lambda = Calibration::load(p).with_context(|| format!("reading calibration {}", p.display()))?.lambda;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn spec_for(sub: Subcommand, c: &Common) -> anyhow::Result<ExperimentSpec> {
    let base = base_config(c)?;
    let gs = if c.g.is_empty() { vec![base.channel_load] } else { c.g.clone() };
    Ok(ExperimentSpec {
        subcommand: sub,
        gs,
        trials: base.trials,
        out: c.out.clone(),
        workers: c.workers,
        rule: c.rule,
        modes: c.mode,
        threshold: base.lambda,
        target_pf: c.target_pf,
        g_cal: c.g_cal,
        windows_per_trial: c.windows_per_trial,
        base,
    })
}

fn format_report(report: &Report, out: &Path) -> String {
    let mut o = String::new();
    match report {
        Report::Roc(rows) => {
            let _ = writeln!(o, "{:>6} {:>10} {:>10} {:>12} {:>12}", "G", "auc_plain", "auc_ia", "pd_plain@.02", "pd_ia@.02");
            for r in rows {
                let pp = r.operating_point(DetectionRule::Plain, 0.02).map(|x| x.2).unwrap_or(f64::NAN);
                let pi = r.operating_point(DetectionRule::InterferenceAware, 0.02).map(|x| x.2).unwrap_or(f64::NAN);
                let _ = writeln!(o, "{:>6} {:>10.5} {:>10.5} {:>12.5} {:>12.5}", r.g, r.auc_plain, r.auc_ia, pp, pi);
            }
        }
        Report::Detect(rows) => {
            let _ = writeln!(o, "{:>6} {:>8} {:>8} {:>8} {:>8} {:>8}", "G", "P_D", "±", "P_CC", "±", "P_D^2");
            for r in rows {
                let s = &r.summary;
                let _ = writeln!(o, "{:>6} {:>8.5} {:>8.5} {:>8.5} {:>8.5} {:>8.5}", r.g, s.pd, s.pd_ci, s.pcc, s.pcc_ci, s.pd * s.pd);
            }
        }
        Report::Throughput(rows) => {
            let _ = writeln!(o, "{:>6} {:>10} {:>10} {:>10} {:>10}", "G", "xi_2phase", "xi_ideal", "plr_2phase", "plr_ideal");
            for r in rows {
                let xi = |s: &Option<ecra::metrics::Summary>| s.map(|s| s.xi).unwrap_or(f64::NAN);
                let plr = |s: &Option<ecra::metrics::Summary>| s.map(|s| s.plr).unwrap_or(f64::NAN);
                let _ = writeln!(o, 
                    "{:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                    r.g,
                    xi(&r.two_phase),
                    xi(&r.ideal),
                    plr(&r.two_phase),
                    plr(&r.ideal)
                );
            }
        }
        Report::Calibrate(c) => {
            let _ = writeln!(o, 
                "lambda* = {} (rule {}, target P_F {}, G_cal {}, Es/N0 {} dB, {} H0 samples)",
                c.lambda, c.rule, c.target_pf, c.g_cal, c.es_n0_db, c.h0_samples
            );
        }
    }
    let _ = writeln!(o, "output written to {}", out.display());
    o
}

/// Writes to stdout, ignoring a closed pipe (e.g. output piped into `head`).
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (sub, common) = match &cli.command {
        Command::Roc(c) => (Some(Subcommand::Roc), c),
        Command::Detect(c) => (Some(Subcommand::Detect), c),
        Command::Throughput(c) => (Some(Subcommand::Throughput), c),
        Command::Calibrate(c) => (Some(Subcommand::Calibrate), c),
        Command::Golden(c) => (None, c),
    };
    match sub {
        Some(sub) => {
            let spec = spec_for(sub, common)?;
            let report = run_experiment(&spec)?;
            emit(&format_report(&report, &spec.out));
        }
        None => {
            let cfg = base_config(common)?;
            let golden = GoldenSpec { target_pf: common.target_pf, cal_g: common.g_cal, ..GoldenSpec::default() };
            let m = golden_run(&cfg, &golden, &common.out, common.workers)?;
            let mut o = String::new();
            let _ = writeln!(o, "config sha256 {}", m.config_sha256);
            for (name, hash) in &m.files {
                let _ = writeln!(o, "{hash}  {name}");
            }
            let _ = writeln!(o, "manifest written to {}", common.out.join(ecra::experiment::MANIFEST_JSON).display());
            emit(&o);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
