//! `superq`: solve manifest problems, generate synthetic instances and run
//! quantile-regression paths.
//!
//! Exit codes: 0 success, 1 a solve did not reach its tolerance, 2 bad input.

pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use superq_core::{
    alm_solve, generate_synthetic, solve_path_with, AlmSettings, IterateState, ObjectiveKind, QrSpec, RowMatrix,
    SynthSpec,
};

use crate::manifest::{write_problem, LoadedManifest};
use crate::report::{PathReport, SettingsEcho, SolveReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "superq", version, about = "Superquantile-constrained optimization by SSN-ALM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the problem described by a manifest.
    Solve(SolveArgs),
    /// Write a random feasible instance as manifest + blobs.
    Generate(GenerateArgs),
    /// Quantile regression over a grid of levels, warm-started in order.
    QrPath(QrPathArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma0: f64,
    #[arg(long, default_value_t = 2.0)]
    pub sigma_growth: f64,
    /// Iterate state (JSON) from an earlier `--state-out`.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include per-iteration records in the report and echo them to stderr.
    #[arg(long)]
    pub trace: bool,
    /// Write the final iterate state for a later warm start.
    #[arg(long)]
    pub state_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Linear,
    Quad,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Rows per block.
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    /// Number of constraint blocks.
    #[arg(long = "L", default_value_t = 1)]
    pub l: usize,
    /// `k = ceil(k_frac * m)`.
    #[arg(long, default_value_t = 0.01)]
    pub k_frac: f64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Linear)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct QrPathArgs {
    /// CSV with a header row; every column except the response is a feature.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column, by name or zero-based index.
    #[arg(long)]
    pub response: String,
    /// Comma-separated increasing levels in (0, 1).
    #[arg(long, value_delimiter = ',', required = true)]
    pub tau: Vec<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_outer: usize,
    /// Solve every level from scratch.
    #[arg(long)]
    pub cold: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::QrPath(a) => cmd_qr_path(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}

fn emit(out: Option<&Path>, json: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{json}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            // a closed pipe (`superq solve ... | head`) is not an error
            match writeln!(std::io::stdout().lock(), "{json}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing report"),
                _ => Ok(()),
            }
        }
    }
}

pub fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let loaded = LoadedManifest::read(&a.manifest)?;
    let prob = loaded.problem()?;
    let settings = AlmSettings {
        tol: a.tol,
        max_outer: a.max_outer,
        sigma0: a.sigma0,
        sigma_growth: a.sigma_growth,
        ..AlmSettings::default()
    };
    let warm = match &a.warm_start {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading warm start {}", p.display()))?;
            Some(serde_json::from_str::<IterateState>(&text).with_context(|| format!("parsing warm start {}", p.display()))?)
        }
        None => None,
    };
    let res = alm_solve(&prob, &settings, warm.as_ref()).context("solver")?;
    let residuals = res.state.residuals(&prob)?;
    if a.trace {
        for r in &res.trace.records {
            eprintln!(
                "outer {:>3} sigma {:.1e} ssn {:>3} eta_p {:.2e} eta_d {:.2e} eta_r {:.2e} t {:.3}s",
                r.iter, r.sigma, r.ssn_iterations, r.residuals.eta_p, r.residuals.eta_d, r.residuals.eta_r, r.elapsed_secs
            );
        }
    }
    let converged = residuals.eta <= settings.tol;
    let report = SolveReport {
        converged,
        objective: prob.objective.value(&res.state.x),
        x: res.state.x.clone(),
        residuals,
        max_violation: prob.max_violation(&res.state.x),
        outer_iterations: res.outer_iterations,
        inner_iterations: res.inner_iterations,
        warm_started: warm.is_some(),
        timings: res.trace.breakdown(),
        settings: SettingsEcho::from(&settings),
        trace: a.trace.then(|| res.trace.records.clone()),
    };
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
    if let Some(p) = &a.state_out {
        fs::write(p, serde_json::to_string(&res.state)?).with_context(|| format!("writing {}", p.display()))?;
    }
    if !converged {
        eprintln!("not converged: eta {:.3e} > tol {:.1e}", residuals.eta, settings.tol);
    }
    Ok(if converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<i32> {
    let spec = SynthSpec {
        m: a.m,
        n: a.n,
        l: a.l,
        k_fraction: a.k_frac,
        objective: match a.objective {
            ObjectiveArg::Linear => ObjectiveKind::Linear,
            ObjectiveArg::Quad => ObjectiveKind::DiagQuadratic,
        },
        seed: a.seed,
    };
    let (prob, witness) = generate_synthetic(&spec)?;
    let path = write_problem(&a.out_dir, &prob, Some(&witness))?;
    eprintln!("wrote {} (m = {}, n = {}, L = {}, k = {})", path.display(), a.m, a.n, a.l, prob.blocks[0].k);
    Ok(EXIT_OK)
}

/// Features and response parsed from a CSV file.
pub struct QrData {
    pub features: RowMatrix,
    pub feature_names: Vec<String>,
    pub response: Vec<f64>,
    pub response_name: String,
}

pub fn read_qr_csv(path: &Path, response: &str) -> Result<QrData> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = match headers.iter().position(|h| h == response) {
        Some(c) => c,
        None => match response.parse::<usize>() {
            Ok(c) if c < headers.len() => c,
            _ => bail!("response column {response:?} not found; columns are {headers:?}"),
        },
    };
    let mut data = Vec::new();
    let mut b = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: data row {}", path.display(), row + 1))?;
        if rec.len() != headers.len() {
            bail!("{}: data row {} has {} fields, header has {}", path.display(), row + 1, rec.len(), headers.len());
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{}: data row {}, column {:?}: {field:?}", path.display(), row + 1, headers[j]))?;
            if j == col {
                b.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if b.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let n = headers.len() - 1;
    Ok(QrData {
        features: RowMatrix::new(b.len(), n, data)?,
        feature_names: headers.iter().enumerate().filter(|&(j, _)| j != col).map(|(_, h)| h.clone()).collect(),
        response_name: headers[col].clone(),
        response: b,
    })
}

pub fn cmd_qr_path(a: &QrPathArgs) -> Result<i32> {
    let data = read_qr_csv(&a.data, &a.response)?;
    let (m, n) = (data.features.rows(), data.features.cols());
    let spec = QrSpec::new(data.features, data.response, a.tau.clone()).context("tau grid")?;
    let settings = AlmSettings {
        tol: a.tol,
        max_outer: a.max_outer,
        ..AlmSettings::default()
    };
    let start = Instant::now();
    let entries = solve_path_with(&spec, &settings, !a.cold);
    for e in &entries {
        let eta = e.residuals.map_or(f64::NAN, |r| r.eta);
        eprintln!(
            "tau {:<6} {} outer {:>3} eta {:.2e}{}",
            e.tau,
            if e.converged { "ok  " } else { "FAIL" },
            e.outer_iterations,
            eta,
            e.error.as_deref().map(|s| format!(" ({s})")).unwrap_or_default()
        );
    }
    let all_ok = entries.iter().all(|e| e.converged);
    let report = PathReport {
        m,
        n,
        features: data.feature_names,
        response: data.response_name,
        warm_start: !a.cold,
        settings: SettingsEcho::from(&settings),
        total_secs: start.elapsed().as_secs_f64(),
        entries,
    };
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
    Ok(if all_ok { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn parse_errors_exit_with_input_code() {
        assert_eq!(run(["superq", "solve"]), EXIT_INPUT);
        assert_eq!(run(["superq", "frobnicate"]), EXIT_INPUT);
        assert_eq!(run(["superq", "--help"]), EXIT_OK);
    }

    #[test]
    fn tau_list_is_comma_separated() {
        let cli = Cli::try_parse_from(["superq", "qr-path", "--data", "d.csv", "--response", "y", "--tau", "0.1,0.25,0.5"]).unwrap();
        match cli.command {
            Command::QrPath(a) => {
                assert_eq!(a.tau, vec![0.1, 0.25, 0.5]);
                assert_eq!(a.tol, 1e-4);
            }
            _ => unreachable!(),
        }
    }
}
