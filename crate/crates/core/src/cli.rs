//! Command-line front end. Exit codes: 0 on success, 1 for usage or
//! configuration errors, 2 for failures during a run.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::harness::{
    asymptotic_sweep, draw_network, format_float, oracle_suite, run_campaign, run_scheme, AsymptoticCase,
    AsymptoticOptions, CampaignSpec, HarnessError, RunParams, SuiteOptions,
};
use crate::metrics::evaluate;
use crate::model::NetworkConfig;
use crate::optimize::Scheme;
use crate::precoding::pzf_grouping;

#[derive(Debug, Parser)]
#[command(name = "cfisac", version, about = "Cell-free massive MIMO ISAC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scheme on one realization and print the SE report.
    Simulate(SimulateArgs),
    /// Run a campaign file and write CSV and metadata outputs.
    Campaign(CampaignArgs),
    /// Interference-to-desired ratio as the AP or antenna count grows.
    Asymptotic(AsymptoticArgs),
    /// Compare closed forms and ZF properties against sampling oracles.
    Verify(VerifyArgs),
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    Scheme::parse(s).ok_or_else(|| format!("unknown scheme '{s}' (expected JAP-OPA, GAP-OPA or RAP-OPA)"))
}

fn parse_case(s: &str) -> Result<AsymptoticCase, String> {
    AsymptoticCase::parse(s).ok_or_else(|| format!("unknown case '{s}' (expected I or II)"))
}

/// Seeds are capped at `i64::MAX` so they survive a round trip through TOML.
fn parse_seed(s: &str) -> Result<u64, String> {
    let v: u64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > i64::MAX as u64 {
        return Err(format!("seed must be at most {}", i64::MAX));
    }
    Ok(v)
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_scheme, default_value = "JAP-OPA")]
    scheme: Scheme,
}

#[derive(Debug, Args)]
struct CampaignArgs {
    /// Campaign file; same as --config.
    file: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Restrict to these schemes (repeatable).
    #[arg(long, value_parser = parse_scheme)]
    scheme: Vec<Scheme>,
    /// Two realizations per sweep point.
    #[arg(long)]
    quick: bool,
}

#[derive(Debug, Args)]
struct AsymptoticArgs {
    #[arg(long, value_parser = parse_case)]
    case: AsymptoticCase,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    /// Power budget E normalized by the noise power.
    #[arg(long)]
    energy: Option<f64>,
    /// Comma-separated AP counts (case I) or antenna counts (case II).
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long)]
    geometries: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    /// Communication to sensing AP ratio.
    #[arg(long)]
    ratio: Option<f64>,
    /// Write the table as CSV to this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quick: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    quick: bool,
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Same as [`cli_main`] with explicit output streams.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Campaign(a) => campaign(a, out),
        Command::Asymptotic(a) => asymptotic(a, out),
        Command::Verify(a) => verify(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_config_error() {
                1
            } else {
                2
            }
        }
    }
}

fn load_network(path: Option<&Path>) -> Result<NetworkConfig, HarnessError> {
    match path {
        Some(p) => Ok(NetworkConfig::from_toml_file(p)?),
        None => Ok(NetworkConfig::default()),
    }
}

fn io(e: std::io::Error) -> HarnessError {
    HarnessError::Io { path: PathBuf::from("<stdout>"), source: e }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let cfg = load_network(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.rng_seed);
    let real = draw_network(&cfg, seed)?;
    let params = RunParams::for_config(&cfg);
    let res = run_scheme(&real, &cfg, a.scheme, seed, &params)?;
    let grouping = pzf_grouping(&real.beta, cfg.varrho_percent, cfg.n);
    let report = evaluate(&real, &grouping, &res.alloc, cfg.kappa_linear())?;
    let modes: String = res.alloc.a.iter().map(|&v| if v >= 0.5 { 'C' } else { 'S' }).collect();

    let mut s = String::new();
    s += &format!("scheme {}\nseed {seed}\n", a.scheme.name());
    s += &format!("M {} N {} K {} L {} kappa_db {}\n", cfg.m, cfg.n, cfg.k, cfg.l, cfg.kappa_db);
    s += &format!("modes {modes}\n");
    s += &format!("feasible {}\nsensing_success {}\n", res.feasible, res.sensing_success);
    s += &format!("min_se {}\niterations {}\n", format_float(res.min_se), res.iterations);
    s += "ue sinr se\n";
    for k in 0..cfg.k {
        s += &format!("{} {} {}\n", k + 1, format_float(report.sinr[k]), format_float(report.se[k]));
    }
    s += "zone masr satisfied\n";
    for l in 0..cfg.l {
        s += &format!("{} {} {}\n", l + 1, format_float(report.masr[l]), report.masr_satisfied[l]);
    }
    out.write_all(s.as_bytes()).map_err(io)?;
    Ok(0)
}

fn campaign(a: CampaignArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let path = match (a.file.as_ref(), a.config.as_ref()) {
        (Some(_), Some(_)) => return Err(HarnessError::InvalidSpec("give the campaign file once".into())),
        (Some(p), None) | (None, Some(p)) => p,
        (None, None) => return Err(HarnessError::InvalidSpec("a campaign file is required".into())),
    };
    let mut spec = CampaignSpec::from_toml_file(path)?;
    if let Some(s) = a.seed {
        spec.seed = Some(s);
    }
    if let Some(o) = a.out {
        spec.out_dir = o;
    }
    if let Some(r) = a.realizations {
        spec.realizations = r;
    }
    if !a.scheme.is_empty() {
        spec.schemes = a.scheme;
    }
    if a.quick {
        spec.realizations = spec.realizations.min(2);
    }
    spec.validate()?;
    let result = run_campaign(&spec)?;

    let mut s = String::from("scheme sweep_value success_rate mean_min_se errors\n");
    for p in &result.summaries {
        s += &format!(
            "{} {} {:.4} {} {}\n",
            p.scheme.name(),
            format_float(p.sweep_value),
            p.success_rate,
            format_float(p.mean_min_se),
            p.errors
        );
    }
    s += &format!("wrote {}\n", spec.out_dir.display());
    out.write_all(s.as_bytes()).map_err(io)?;
    Ok(0)
}

fn asymptotic(a: AsymptoticArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let cfg = load_network(a.config.as_deref())?;
    let mut opts = AsymptoticOptions::new(a.case, &cfg);
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    if let Some(e) = a.energy {
        opts.energy = e;
    }
    if !a.sizes.is_empty() {
        opts.sizes = a.sizes;
    }
    if a.quick {
        opts.geometries = 4;
        opts.draws = 50;
    }
    if let Some(g) = a.geometries {
        opts.geometries = g;
    }
    if let Some(d) = a.draws {
        opts.draws = d;
    }
    if let Some(c) = a.ratio {
        opts.comm_ratio = c;
    }
    let rows = asymptotic_sweep(a.case, &cfg, &opts)?;

    let header = ["size", "m_c", "m_s", "n", "desired", "interference", "ratio", "sinr"];
    let lines: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.size.to_string(),
                r.m_c.to_string(),
                r.m_s.to_string(),
                r.n.to_string(),
                format_float(r.desired),
                format_float(r.interference),
                format_float(r.ratio),
                format_float(r.sinr),
            ]
        })
        .collect();
    let mut s = header.join(" ") + "\n";
    for l in &lines {
        s += &(l.join(" ") + "\n");
    }
    out.write_all(s.as_bytes()).map_err(io)?;

    if let Some(dir) = a.out {
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::Io { path: dir.clone(), source: e })?;
        let path = dir.join("asymptotic.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for l in &lines {
            w.write_record(l)?;
        }
        w.flush().map_err(|e| HarnessError::Io { path, source: e })?;
    }
    Ok(0)
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let mut opts = if a.quick { SuiteOptions::quick() } else { SuiteOptions::full() };
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let checks = oracle_suite(&opts)?;
    let mut s = String::new();
    for c in &checks {
        let tag = if c.passed() { "PASS" } else { "FAIL" };
        s += &format!("{tag} {}: {:.3e} (tolerance {:.1e})\n", c.name, c.measured, c.tolerance);
    }
    out.write_all(s.as_bytes()).map_err(io)?;
    Ok(if checks.iter().all(|c| c.passed()) { 0 } else { 2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("cfisac").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&["bogus"]).0, 1);
        assert_eq!(run_args(&["simulate", "--nope"]).0, 1);
        assert_eq!(run_args(&["simulate", "--scheme", "XYZ"]).0, 1);
        assert_eq!(run_args(&["campaign"]).0, 1);
        assert_eq!(run_args(&["--help"]).0, 0);
    }

    #[test]
    fn missing_campaign_file() {
        let (code, _, err) = run_args(&["campaign", "definitely-missing.cfg"]);
        assert_eq!(code, 1);
        assert!(err.contains("file not found"), "{err}");
    }
}
