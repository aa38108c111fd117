//! `dsd`: plan draft lengths and simulate distributed speculative decoding.

mod config;
mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dsd_core::planner::PlannerInput;
use dsd_core::simkit::{equivalence_report, k_sweep, make_pair, monte_carlo, GammaChoice, KSweepRow, SCHEMA_VERSION};
use dsd_core::specdec::AcceptRule;
use dsd_core::transport::latency_params;
use dsd_core::{as2, speedup, sweep_table, Mode};
use serde::Serialize;
use serde_json::json;

use config::{out_dir, pick, require, ChannelArgs, FileConfig, Meta, PairArgs};
use error::{say, CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "dsd", version, about = "Draft-length planning and simulation for distributed speculative decoding")]
struct Cli {
    /// JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Choose the draft length for one (alpha, b, c) operating point.
    Plan {
        #[arg(long)]
        alpha: Option<f64>,
        /// Uplink cost per drafted token, relative to one target step.
        #[arg(long)]
        b: Option<f64>,
        /// Drafter cost per token, relative to one target step.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Optimal draft length and speedup curves over an (alpha, L) grid.
    SweepGamma {
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        latencies: Vec<f64>,
        /// Longest draft on the emitted speedup curves.
        #[arg(long)]
        gamma_max: Option<u32>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Planned and measured speedup as a function of the top-K truncation.
    SweepK {
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        /// Fixed acceptance rate; skips the synthetic pair entirely.
        #[arg(long)]
        alpha: Option<f64>,
        /// Use the pair's exact acceptance rate instead of simulating.
        #[arg(long)]
        analytic: bool,
        /// Draft lengths to simulate; planned per K when omitted.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Monte Carlo run of the draft-verify loop over a synthetic pair.
    Simulate {
        #[arg(long)]
        gamma: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        channel: ChannelArgs,
        /// Write the metrics here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical check that emitted tokens follow the target distribution.
    VerifyEquivalence {
        #[arg(long)]
        gamma: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        pair: PairArgs,
        /// Accept every draft token; the check is expected to fail.
        #[arg(long)]
        break_verifier: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("dsd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = pick(cli.seed, file.seed, 0);
    match cli.command {
        Command::Plan { alpha, b, c, format } => {
            plan(require(alpha, file.alpha, "alpha")?, require(b, file.b, "b")?, require(c, file.c, "c")?, format)
        }
        Command::SweepGamma {
            alphas,
            latencies,
            gamma_max,
            out_dir: dir,
        } => {
            let alphas = non_empty(alphas, file.alphas.clone(), vec![0.4, 0.6, 0.8]);
            let latencies = non_empty(latencies, file.latencies.clone(), vec![0.01, 0.1, 0.2, 0.4, 0.6]);
            let gamma_max = pick(gamma_max, file.gamma_max, 40);
            sweep_gamma(&alphas, &latencies, gamma_max, seed, &out_dir(dir, file.out_dir.clone()))
        }
        Command::SweepK {
            ks,
            alpha,
            analytic,
            gammas,
            rounds,
            pair,
            channel,
            out_dir: dir,
        } => {
            let spec = pair.resolve(&file, seed)?;
            let channel = channel.resolve(&file, spec.vocab_size)?;
            let default_ks = (0..).map(|i| 1usize << i).take_while(|&k| k <= spec.vocab_size).collect();
            let opts = SweepK {
                ks: non_empty(ks, file.ks.clone(), default_ks),
                alpha: alpha.or(file.alpha),
                analytic,
                gammas: non_empty(gammas, file.gammas.clone(), Vec::new()),
                rounds: pick(rounds, file.rounds, 20_000),
            };
            sweep_k(&opts, &spec, &channel, seed, &out_dir(dir, file.out_dir.clone()))
        }
        Command::Simulate {
            gamma,
            k,
            rounds,
            pair,
            channel,
            out,
        } => {
            let spec = pair.resolve(&file, seed)?;
            let channel = channel.resolve(&file, spec.vocab_size)?;
            let gamma = pick(gamma, file.gamma, 4);
            let k = pick(k, file.k, spec.vocab_size.min(8));
            let rounds = pick(rounds, file.rounds, 10_000);
            let metrics = monte_carlo(&spec, gamma, k, &channel, rounds, seed)?;
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "config": { "seed": seed, "gamma": gamma, "k": k, "rounds": rounds, "pair": spec, "channel": channel },
                "metrics": metrics,
            });
            emit_json(&doc, out.as_deref())?;
            Ok(0)
        }
        Command::VerifyEquivalence {
            gamma,
            k,
            samples,
            pair,
            break_verifier,
        } => {
            let spec = pair.resolve(&file, seed)?;
            let gamma = pick(gamma, file.gamma, 4);
            let k = pick(k, file.k, spec.vocab_size.min(8));
            let samples = pick(samples, file.samples, 100_000);
            let rule = if break_verifier { AcceptRule::AcceptAll } else { AcceptRule::Standard };
            let report = equivalence_report(&spec, gamma, k, samples, seed, rule)?;
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "config": { "seed": seed, "gamma": gamma, "k": k, "samples": samples, "pair": spec, "break_verifier": break_verifier },
                "result": if report.pass { "PASS" } else { "FAIL" },
                "report": report,
            });
            emit_json(&doc, None)?;
            eprintln!(
                "{}: TV = {:.5}, threshold = {:.5}",
                if report.pass { "PASS" } else { "FAIL" },
                report.tv,
                report.threshold
            );
            Ok(if report.pass { 0 } else { 1 })
        }
    }
}

fn non_empty<T>(flag: Vec<T>, file: Option<Vec<T>>, default: Vec<T>) -> Vec<T> {
    if !flag.is_empty() {
        flag
    } else {
        file.unwrap_or(default)
    }
}

#[derive(Serialize)]
struct PlanLine {
    schema_version: u32,
    alpha: f64,
    b: f64,
    c: f64,
    #[serde(rename = "L")]
    latency: f64,
    mode: Mode,
    gamma_star: u32,
    gamma_zero: f64,
    s_star: f64,
}

fn plan(alpha: f64, b: f64, c: f64, format: Format) -> CliResult<u8> {
    let input = PlannerInput::new(alpha, b, c)?;
    let p = as2(&input);
    let line = PlanLine {
        schema_version: SCHEMA_VERSION,
        alpha,
        b,
        c,
        latency: input.latency(),
        mode: p.mode,
        gamma_star: p.gamma_star,
        gamma_zero: p.gamma_zero,
        s_star: p.s_star,
    };
    let mut out = std::io::stdout().lock();
    match format {
        Format::Text => {
            writeln!(out, "mode={}", p.mode)?;
            writeln!(out, "gamma_star={}", p.gamma_star)?;
            writeln!(out, "gamma_zero={}", p.gamma_zero)?;
            writeln!(out, "s_star={}", p.s_star)?;
            writeln!(out, "L={}", input.latency())?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.serialize(&line)?;
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &line)?;
            writeln!(out)?;
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct TableRow {
    schema_version: u32,
    alpha: f64,
    #[serde(rename = "L")]
    latency: f64,
    gamma_zero: f64,
    gamma_star: u32,
    s_star: f64,
    mode: Mode,
}

#[derive(Serialize)]
struct CurveRow {
    schema_version: u32,
    alpha: f64,
    #[serde(rename = "L")]
    latency: f64,
    gamma: u32,
    s_inf: f64,
}

fn sweep_gamma(alphas: &[f64], latencies: &[f64], gamma_max: u32, seed: u64, dir: &Path) -> CliResult<u8> {
    if gamma_max == 0 {
        return Err(CliError::Validation("--gamma-max must be at least 1".into()));
    }
    let table = sweep_table(alphas, latencies, Some(gamma_max))?;
    let rows: Vec<_> = table
        .rows
        .iter()
        .map(|r| TableRow {
            schema_version: SCHEMA_VERSION,
            alpha: r.alpha,
            latency: r.latency,
            gamma_zero: r.plan.gamma_zero,
            gamma_star: r.plan.gamma_star,
            s_star: r.plan.s_star,
            mode: r.plan.mode,
        })
        .collect();
    let curves: Vec<_> = table
        .curves
        .iter()
        .map(|p| CurveRow {
            schema_version: SCHEMA_VERSION,
            alpha: p.alpha,
            latency: p.latency,
            gamma: p.gamma,
            s_inf: p.s_inf,
        })
        .collect();
    let config = json!({ "alphas": alphas, "latencies": latencies, "gamma_max": gamma_max });
    let meta = Meta { schema_version: SCHEMA_VERSION, command: "sweep-gamma", seed, config };
    let table_path = write_csv(dir, "gamma_table.csv", &rows, &meta)?;
    let curve_path = write_csv(dir, "gamma_curves.csv", &curves, &meta)?;
    for r in &rows {
        say(format_args!(
            "alpha={} L={} gamma_star={} s_star={:.4} mode={}",
            r.alpha, r.latency, r.gamma_star, r.s_star, r.mode
        ))?;
    }
    eprintln!("wrote {} and {}", table_path.display(), curve_path.display());
    Ok(0)
}

struct SweepK {
    ks: Vec<usize>,
    alpha: Option<f64>,
    analytic: bool,
    gammas: Vec<usize>,
    rounds: usize,
}

#[derive(Serialize)]
struct KRow {
    schema_version: u32,
    k: usize,
    #[serde(rename = "L")]
    latency: f64,
    alpha: f64,
    gamma_star: usize,
    mode: Mode,
    predicted_s: f64,
    /// Empty unless the row was simulated.
    measured_s: Option<f64>,
}

impl From<KSweepRow> for KRow {
    fn from(r: KSweepRow) -> Self {
        KRow {
            schema_version: SCHEMA_VERSION,
            k: r.k,
            latency: r.latency,
            alpha: r.alpha_k,
            gamma_star: r.gamma,
            mode: r.mode,
            predicted_s: r.predicted_s,
            measured_s: Some(r.measured_s),
        }
    }
}

fn sweep_k(
    opts: &SweepK,
    spec: &dsd_core::simkit::SyntheticPairSpec,
    channel: &dsd_core::transport::ChannelConfig,
    seed: u64,
    dir: &Path,
) -> CliResult<u8> {
    let mut ks = opts.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let rows: Vec<KRow> = if opts.alpha.is_some() || opts.analytic {
        let pair = if opts.alpha.is_none() { Some(make_pair(spec)?) } else { None };
        let mut rows = Vec::new();
        for &k in &ks {
            let alpha = match (&pair, opts.alpha) {
                (_, Some(a)) => a,
                (Some(p), None) => p.analytic_alpha(k)?,
                (None, None) => unreachable!(),
            };
            let lat = latency_params(channel, k)?;
            let plan = as2(&PlannerInput::new(alpha.clamp(1e-9, 1.0 - 1e-9), lat.b, lat.c)?);
            let gammas = if opts.gammas.is_empty() { vec![plan.gamma_star as usize] } else { opts.gammas.clone() };
            for g in gammas {
                let predicted = speedup(alpha, g as u32, lat.l);
                rows.push(KRow {
                    schema_version: SCHEMA_VERSION,
                    k,
                    latency: lat.l,
                    alpha,
                    gamma_star: g,
                    mode: if opts.gammas.is_empty() { plan.mode } else if predicted < 1.0 { Mode::Standalone } else { Mode::Dsd },
                    predicted_s: predicted,
                    measured_s: None,
                });
            }
        }
        rows
    } else {
        let choice = if opts.gammas.is_empty() { GammaChoice::Auto } else { GammaChoice::List(opts.gammas.clone()) };
        k_sweep(spec, &choice, &ks, channel, opts.rounds, seed)?
            .into_iter()
            .map(KRow::from)
            .collect()
    };
    let config = json!({
        "ks": ks,
        "alpha": opts.alpha,
        "analytic": opts.analytic,
        "gammas": opts.gammas,
        "rounds": opts.rounds,
        "pair": spec,
        "channel": channel,
    });
    let meta = Meta { schema_version: SCHEMA_VERSION, command: "sweep-k", seed, config };
    let path = write_csv(dir, "k_sweep.csv", &rows, &meta)?;
    for r in &rows {
        let measured = r.measured_s.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into());
        say(format_args!(
            "k={} L={:.5} alpha={:.4} gamma={} mode={} predicted_s={:.4} measured_s={measured}",
            r.k, r.latency, r.alpha, r.gamma_star, r.mode, r.predicted_s
        ))?;
    }
    eprintln!("wrote {}", path.display());
    Ok(0)
}

fn write_csv<T: Serialize, C: Serialize>(dir: &Path, name: &str, rows: &[T], meta: &Meta<C>) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let meta_path = dir.join(format!("{name}.meta.json"));
    std::fs::write(&meta_path, serde_json::to_string_pretty(meta)? + "\n")
        .map_err(|e| CliError::Io(format!("{}: {e}", meta_path.display())))?;
    Ok(path)
}

fn emit_json(doc: &serde_json::Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(doc)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => Ok(std::io::stdout().lock().write_all(text.as_bytes())?),
    }
}
