//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::channels::{pm_from_sigma, NoiseParams, ONE_QUBIT_RATIO};
use crate::enumerate::{enumerate_single_faults, EnumerationOptions};
use crate::error::{Error, Result};
use crate::experiment::{estimate_point, fit_exponent, sweep, SweepRecord, TrialConfig};
use crate::simulator::{Architecture, LeakageModel, LeakedReadout};

/// Output columns, in order.
pub const CSV_HEADER: [&str; 16] = [
    "arch", "model", "d", "rounds", "p_s", "p_s_1q", "p_M", "sigma_uG", "trials", "failures_x", "failures_z", "failures",
    "p_L", "ci_lo", "ci_hi", "seed",
];

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "LEAKSIM_THREADS";

#[derive(Parser, Debug)]
#[command(name = "leaksim", version, about = "Toric code memory simulations with leakage and field noise")]
pub struct Cli {
    /// Flat `key = value` file using the long flag names; flags given on the
    /// command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate p_L over the grid arch x model x d x field x p_s.
    Sweep(PointArgs),
    /// Estimate p_L at exactly one point, seeded directly by --seed.
    Single(PointArgs),
    /// Count uncorrectable single faults by exhaustive injection.
    EnumerateFaults(EnumerateArgs),
    /// Fit log-log slopes of p_L against p_s from a results file.
    Fit(FitArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    #[value(alias = "json-lines")]
    Jsonl,
}

fn parse_arch(s: &str) -> std::result::Result<Architecture, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> std::result::Result<LeakageModel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_readout(s: &str) -> std::result::Result<LeakedReadout, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_distance(s: &str) -> std::result::Result<usize, String> {
    let d: usize = s.parse().map_err(|e| format!("{e}"))?;
    if d < 3 || d % 2 == 0 {
        return Err(format!("distance must be odd and at least 3, got {d}"));
    }
    Ok(d)
}

fn parse_probability(s: &str) -> std::result::Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(format!("probability must lie in [0, 1], got {p}"));
    }
    Ok(p)
}

fn parse_sigma(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    pm_from_sigma(v).map(|_| v).map_err(|e| e.to_string())
}

#[derive(Args, Debug, Clone)]
pub struct PointArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_arch, default_value = "mixed")]
    pub arch: Vec<Architecture>,
    #[arg(long, value_delimiter = ',', value_parser = parse_model, default_value = "depolarizing")]
    pub model: Vec<LeakageModel>,
    #[arg(long, value_delimiter = ',', value_parser = parse_distance, default_value = "3")]
    pub d: Vec<usize>,
    /// Noisy rounds per trial; defaults to d.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Two-qubit scattering probabilities.
    #[arg(long, value_delimiter = ',', value_parser = parse_probability, required = true)]
    pub ps: Vec<f64>,
    /// One-qubit scattering probability; defaults to a fixed fraction of p_s.
    #[arg(long, value_parser = parse_probability)]
    pub ps1q: Option<f64>,
    /// Dephasing probabilities per two-qubit gate.
    #[arg(long, value_delimiter = ',', value_parser = parse_probability)]
    pub pm: Vec<f64>,
    /// Field standard deviations in µG, converted to p_M.
    #[arg(long, value_delimiter = ',', value_parser = parse_sigma)]
    pub sigma: Vec<f64>,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Worker threads (overridden by LEAKSIM_THREADS).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Dephase memory-susceptible qubits on every CNOT step, not only at their gates.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "false")]
    pub idle_dephasing: bool,
    #[arg(long, value_parser = parse_readout, default_value = "bright")]
    pub leaked_readout: LeakedReadout,
}

#[derive(Args, Debug, Clone)]
pub struct EnumerateArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_arch, default_value = "hyperfine,zeeman,mixed")]
    pub arch: Vec<Architecture>,
    #[arg(long, value_delimiter = ',', value_parser = parse_model, default_value = "depolarizing,ms")]
    pub model: Vec<LeakageModel>,
    #[arg(long, value_parser = parse_distance, default_value = "3")]
    pub d: usize,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, value_parser = parse_readout, default_value = "bright")]
    pub leaked_readout: LeakedReadout,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "false")]
    pub idle_dephasing: bool,
    /// Leaves explored per fault before it is reported unresolved.
    #[arg(long, default_value_t = 1 << 14)]
    pub budget: usize,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Also list every uncorrectable fault.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// CSV or json-lines results.
    #[arg(long)]
    pub input: PathBuf,
    /// Only fit points with p_s at least this multiple of p_M.
    #[arg(long, default_value_t = 10.0)]
    pub regime_ratio: f64,
}

/// `--config` value, if present, scanned before full parsing.
fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Reads a flat `key = value` file. Blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.into(), source })?;
    let mut map = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io { path: path.into(), source })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            path: path.into(),
            message: format!("line {}: expected key = value", n + 1),
        })?;
        map.insert(k.trim().trim_start_matches("--").replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

/// Splices file settings after the subcommand, dropping any key that is
/// also given on the command line.
fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let settings = read_config_file(&path)?;
    // the subcommand is the first argument after the program name that is
    // not the global --config option
    let mut at = 1;
    while at < argv.len() {
        let s = argv[at].to_string_lossy();
        if s == "--config" {
            at += 2;
        } else if s.starts_with("--config=") {
            at += 1;
        } else {
            break;
        }
    }
    let given: Vec<String> = argv
        .iter()
        .filter_map(|a| a.to_str()?.strip_prefix("--").map(|f| f.split('=').next().unwrap_or(f).replace('_', "-")))
        .collect();
    let mut merged: Vec<OsString> = argv[..=at.min(argv.len() - 1)].to_vec();
    for (k, v) in settings.into_iter().filter(|(k, _)| !given.contains(k)) {
        merged.push(format!("--{k}={v}").into());
    }
    merged.extend(argv.into_iter().skip(at + 1));
    Ok(merged)
}

impl PointArgs {
    /// Field settings as `(p_M, sigma)` pairs.
    fn fields(&self) -> Result<Vec<(f64, Option<f64>)>> {
        match (self.pm.is_empty(), self.sigma.is_empty()) {
            (true, true) => Ok(vec![(0.0, None)]),
            (false, true) => Ok(self.pm.iter().map(|&p| (p, None)).collect()),
            (true, false) => self.sigma.iter().map(|&s| Ok((pm_from_sigma(s)?, Some(s)))).collect(),
            (false, false) => {
                if self.pm.len() != self.sigma.len() {
                    return Err(Error::Config(format!(
                        "--pm has {} values but --sigma has {}",
                        self.pm.len(),
                        self.sigma.len()
                    )));
                }
                self.sigma
                    .iter()
                    .zip(&self.pm)
                    .map(|(&s, &p)| {
                        let noise = NoiseParams::noiseless().with_sigma(s)?;
                        NoiseParams { p_m: p, ..noise }.validate()?;
                        Ok((p, Some(s)))
                    })
                    .collect()
            }
        }
    }

    /// Grid in arch, model, d, field, p_s order.
    pub fn grid(&self) -> Result<Vec<TrialConfig>> {
        let fields = self.fields()?;
        let mut grid = Vec::new();
        for &arch in &self.arch {
            for &model in &self.model {
                for &d in &self.d {
                    for &(p_m, sigma_ug) in &fields {
                        for &p_s in &self.ps {
                            let noise = NoiseParams {
                                p_s_2q: p_s,
                                p_s_1q: self.ps1q.unwrap_or(p_s * ONE_QUBIT_RATIO),
                                p_m,
                                sigma_ug,
                                idle_dephasing: self.idle_dephasing,
                            };
                            let config = TrialConfig {
                                arch,
                                model,
                                d,
                                rounds: self.rounds.unwrap_or(d),
                                noise,
                                seed: self.seed,
                                trials: self.trials,
                                leaked_readout: self.leaked_readout,
                            };
                            config.validate()?;
                            grid.push(config);
                        }
                    }
                }
            }
        }
        Ok(grid)
    }
}

/// Writes `records` to `path`, or standard output when `path` is `None`.
pub fn emit(records: &[SweepRecord], format: Format, path: Option<&Path>) -> Result<()> {
    let shown = path.unwrap_or(Path::new("<stdout>"));
    let bytes = render(records, format).map_err(|message| Error::Format { path: shown.into(), message })?;
    let io = |source| Error::Io { path: shown.into(), source };
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(io)?);
            w.write_all(&bytes).map_err(io)?;
            w.flush().map_err(io)
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&bytes).map_err(io)?;
            out.flush().map_err(io)
        }
    }
}

/// Serializes `records` in `format`.
pub fn render(records: &[SweepRecord], format: Format) -> std::result::Result<Vec<u8>, String> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(CSV_HEADER).map_err(|e| e.to_string())?;
            for r in records {
                w.serialize(r).map_err(|e| e.to_string())?;
            }
            w.into_inner().map_err(|e| e.to_string())
        }
        Format::Jsonl => {
            let mut out = Vec::new();
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(|e| e.to_string())?;
                out.push(b'\n');
            }
            Ok(out)
        }
    }
}

/// Reads records written by [`emit`]; json-lines if the first non-blank
/// character is `{`, CSV otherwise.
pub fn read_records(path: &Path) -> Result<Vec<SweepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
    let bad = |message: String| Error::Format { path: path.into(), message };
    if text.trim_start().starts_with('{') {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(format!("line {}: {e}", i + 1))))
            .collect()
    } else {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
        }
        reader.deserialize().map(|r| r.map_err(|e| bad(e.to_string()))).collect()
    }
}

/// Worker count: LEAKSIM_THREADS, then the flag.
pub fn thread_count(flag: Option<u64>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(flag.map(|n| n as usize)),
    }
}

fn install_threads(flag: Option<u64>) -> Result<()> {
    if let Some(n) = thread_count(flag)? {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `argv`, merging any config file. Usage errors carry clap's
/// formatting and exit code.
pub fn parse_args<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let merged = merge_config(argv).map_err(|e| clap::Error::raw(clap::error::ErrorKind::Io, format!("{e}\n")))?;
    Cli::try_parse_from(merged)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep(args) => {
            install_threads(args.threads)?;
            let records = sweep(&args.grid()?)?;
            emit(&records, args.format, args.out.as_deref())
        }
        Command::Single(args) => {
            install_threads(args.threads)?;
            let grid = args.grid()?;
            if grid.len() != 1 {
                return Err(Error::Config(format!("single expects one point, the flags describe {}", grid.len())));
            }
            let record = estimate_point(&grid[0])?;
            emit(&[record], args.format, args.out.as_deref())
        }
        Command::EnumerateFaults(args) => {
            install_threads(args.threads)?;
            let mut out = std::io::stdout().lock();
            let io = |source| Error::Io { path: "<stdout>".into(), source };
            writeln!(out, "arch,model,d,rounds,locations,faults,uncorrectable,unresolved").map_err(io)?;
            for &arch in &args.arch {
                for &model in &args.model {
                    let options = EnumerationOptions {
                        rounds: args.rounds,
                        readout: args.leaked_readout,
                        idle_dephasing: args.idle_dephasing,
                        branch_budget: args.budget,
                        ..EnumerationOptions::new(args.d)
                    };
                    let r = enumerate_single_faults(arch, model, options)?;
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        arch.name(),
                        model.name(),
                        r.d,
                        r.rounds,
                        r.locations,
                        r.faults,
                        r.uncorrectable.len(),
                        r.unresolved.len()
                    )
                    .map_err(io)?;
                    if args.verbose {
                        for f in &r.uncorrectable {
                            writeln!(out, "  uncorrectable: {f:?}").map_err(io)?;
                        }
                    }
                }
            }
            Ok(())
        }
        Command::Fit(args) => {
            let records = read_records(&args.input)?;
            let mut groups: BTreeMap<(String, String, usize, usize, u64), Vec<(f64, f64)>> = BTreeMap::new();
            for r in records.iter().filter(|r| r.p_m == 0.0 || r.p_s >= args.regime_ratio * r.p_m) {
                groups
                    .entry((r.arch.name().into(), r.model.name().into(), r.d, r.rounds, r.p_m.to_bits()))
                    .or_default()
                    .push((r.p_s, r.p_l));
            }
            let mut out = std::io::stdout().lock();
            let io = |source| Error::Io { path: "<stdout>".into(), source };
            writeln!(out, "arch,model,d,rounds,p_M,points,slope").map_err(io)?;
            for ((arch, model, d, rounds, pm), points) in groups {
                let slope = match fit_exponent(&points) {
                    Ok(s) => format!("{s:.4}"),
                    Err(e) => format!("NA ({e})"),
                };
                writeln!(out, "{arch},{model},{d},{rounds},{},{},{slope}", f64::from_bits(pm), points.len()).map_err(io)?;
            }
            Ok(())
        }
    }
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let cli = match parse_args(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
