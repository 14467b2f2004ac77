use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use oddac::harness::{analyze_run, emit_csv, run, RunLog, RunMode, Scenario};
use oddac::linalg::to_rows;
use oddac::lmi::{build_aux_sandwich, build_problem, gain_program};
use oddac::sdp::{self, backend_by_name, verify, SdpBackend, BACKEND_ENV, VERIFY_TOL};
use oddac::window::DataWindow;

#[derive(Parser)]
#[command(name = "oddac", version, about = "Online data-driven adaptive control runner")]
struct Cli {
    /// SDP backend used for gain synthesis.
    #[arg(long, global = true, env = BACKEND_ENV, default_value = "barrier")]
    backend: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and optionally write the CSV log.
    Run {
        /// Scenario file, or one of the presets `paper-ltv`, `paper-lti`.
        #[arg(long)]
        scenario: String,
        /// `oddac` or `static` (fixed initial gain).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the stability analysis; exit non-zero on any violation.
        #[arg(long)]
        verify: bool,
    },
    /// Replay a logged run and check it.
    Verify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scenario: String,
    },
    /// Synthesize one gain from a window CSV with columns x*, u*, xp*.
    LmiSolve {
        #[arg(long)]
        window: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        lipschitz: f64,
        #[arg(long, default_value_t = 100)]
        period: usize,
        #[arg(long, default_value_t = 0.001)]
        sigma1: f64,
        #[arg(long, default_value_t = 1000.0)]
        sigma2: f64,
    },
}

fn backend(name: &str) -> Result<Box<dyn SdpBackend>> {
    Ok(backend_by_name(name)?)
}

fn print_updates(out: &oddac::harness::RunOutcome) {
    for u in &out.updates {
        let margin = u.certificate.as_ref().map_or(f64::NAN, |c| c.margin);
        println!(
            "update i={:<3} t={:<5} status={:<14} accepted={:<5} margin={:.3e}",
            u.index,
            u.time,
            u.status.as_str(),
            u.accepted,
            margin
        );
        if let Some(e) = &u.error {
            println!("  error: {e}");
        }
    }
}

fn cmd_run(
    backend_name: &str,
    source: &str,
    mode: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    check: bool,
) -> Result<bool> {
    let mut sc = Scenario::resolve(source)?;
    if let Some(m) = mode {
        sc = sc.with_mode(m.parse::<RunMode>()?);
    }
    if let Some(s) = seed {
        sc = sc.with_seed(s);
    }
    let outcome = run(&sc, backend(backend_name)?)?;
    println!(
        "scenario {} ({}), mode {}, L = {:.6e}",
        sc.name,
        &sc.hash()[..12],
        sc.mode.as_str(),
        sc.cfg.lipschitz
    );
    print_updates(&outcome);
    let last = outcome.log.rows.last().context("empty log")?;
    println!("|x({})| = {:.6e}", last.t, last.norm_x);
    if let Some(path) = out {
        emit_csv(&outcome.log, &path).with_context(|| format!("writing {}", path.display()))?;
        println!("log written to {}", path.display());
    }
    if check {
        let report = analyze_run(&sc, &outcome.log, &outcome.periods)?;
        print!("{report}");
        return Ok(report.passed());
    }
    Ok(true)
}

fn cmd_verify(backend_name: &str, log_path: &PathBuf, source: &str) -> Result<bool> {
    let text = std::fs::read_to_string(log_path).with_context(|| format!("reading {}", log_path.display()))?;
    let log = RunLog::parse(&text)?;
    let sc = Scenario::resolve(source)?
        .with_mode(log.header.mode.parse::<RunMode>()?)
        .with_seed(log.header.seed);
    let mut ok = true;
    if sc.hash() != log.header.scenario_sha256 {
        println!(
            "scenario hash mismatch: log {} vs scenario {}",
            log.header.scenario_sha256,
            sc.hash()
        );
        ok = false;
    }
    let replay = run(&sc, backend(backend_name)?)?;
    if replay.log.to_csv_string() == text {
        println!("replay reproduces the log byte for byte");
    } else {
        let first = replay
            .log
            .rows
            .iter()
            .zip(&log.rows)
            .find(|(a, b)| a != b)
            .map(|(a, _)| a.t);
        println!("replay differs from the log (first differing row: {first:?})");
        ok = false;
    }
    let report = analyze_run(&sc, &log, &replay.periods)?;
    print!("{report}");
    Ok(ok && report.passed())
}

fn read_window(path: &PathBuf, lipschitz: f64) -> Result<oddac::window::DataMatrices> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let cols: Vec<String> = rdr.headers()?.iter().map(|c| c.trim().to_string()).collect();
    let pick = |prefix: &str| -> Vec<usize> {
        cols.iter()
            .enumerate()
            .filter(|(_, c)| {
                c.strip_prefix(prefix)
                    .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|ch| ch.is_ascii_digit()))
            })
            .map(|(i, _)| i)
            .collect()
    };
    let (xi, ui, pi) = (pick("x"), pick("u"), pick("xp"));
    if xi.is_empty() || ui.is_empty() || xi.len() != pi.len() {
        bail!("window needs columns x1..xn, u1..um, xp1..xpn; got {cols:?}");
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec.iter().map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>()?;
        rows.push(vals);
    }
    let mut w = DataWindow::new(rows.len(), 0);
    for r in &rows {
        let get = |idx: &[usize]| DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i]));
        w.push_sample(get(&xi), get(&ui), get(&pi))?;
    }
    Ok(w.build_data_matrices(lipschitz)?)
}

fn cmd_lmi_solve(
    backend_name: &str,
    window: &PathBuf,
    lambda: f64,
    lipschitz: f64,
    period: usize,
    sigma1: f64,
    sigma2: f64,
) -> Result<bool> {
    let d = read_window(window, lipschitz)?;
    let problem = build_problem(&d, lambda, lipschitz, period)?;
    let sandwich = build_aux_sandwich(sigma1, sigma2, d.n())?;
    let prog = gain_program(&problem, &sandwich, None);
    let be = backend(backend_name)?;
    let cert = sdp::solve(&prog, be.as_ref())?;
    let report = verify(&cert, &prog, VERIFY_TOL);
    let residuals: serde_json::Map<String, serde_json::Value> = report
        .entries
        .iter()
        .map(|e| {
            (
                e.name.clone(),
                json!({ "min_eigenvalue": e.min_eigenvalue, "pass": e.pass }),
            )
        })
        .collect();
    let out = json!({
        "status": cert.status.as_str(),
        "backend": cert.backend,
        "margin": cert.margin,
        "margin_upper_bound": cert.margin_upper_bound,
        "pi": d.pi,
        "K": to_rows(&cert.k),
        "P": to_rows(&cert.p),
        "Q": to_rows(&cert.q),
        "L": to_rows(&cert.l),
        "alpha1": cert.a1,
        "alpha2": cert.a2,
        "alpha_at_bound": cert.alpha_at_bound,
        "verification": { "tol": report.tol, "passed": report.passed(), "residuals": residuals },
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(cert.is_feasible() && report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            mode,
            seed,
            out,
            verify,
        } => cmd_run(&cli.backend, scenario, mode.clone(), *seed, out.clone(), *verify),
        Command::Verify { log, scenario } => cmd_verify(&cli.backend, log, scenario),
        Command::LmiSolve {
            window,
            lambda,
            lipschitz,
            period,
            sigma1,
            sigma2,
        } => cmd_lmi_solve(&cli.backend, window, *lambda, *lipschitz, *period, *sigma1, *sigma2),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
