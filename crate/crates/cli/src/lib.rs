//! Command line front end: `list`, `run` and `check` over the scenario catalog.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use pgmpc::options::OptionValue;
use pgmpc::problem::{DerivativeReport, HookCheckOutcome};
use pgmpc_testbench::{Entry, RunError, RunOutput, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Relative error above which a derivative hook fails `check`.
pub const CHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "pgmpc", version, about = "Run and verify the pgmpc benchmark scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the registered scenarios.
    List {
        /// Print the catalog as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run scenarios and write the trajectory log, metrics and effective config.
    Run(RunArgs),
    /// Compare every derivative hook against central finite differences.
    Check {
        #[arg(required = true)]
        scenarios: Vec<String>,
    },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(required = true)]
    pub scenarios: Vec<String>,
    /// Option override `key=value`; repeatable, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// JSON object with the same flat keys as `--set`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scenarios run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Scenarios compiled into this binary.
pub fn registry() -> &'static [Entry] {
    #[cfg(feature = "builtin-scenarios")]
    {
        &pgmpc_testbench::BUILTIN
    }
    #[cfg(not(feature = "builtin-scenarios"))]
    {
        &[]
    }
}

fn find(name: &str) -> Option<&'static Entry> {
    registry().iter().find(|e| e.name == name)
}

/// Parses arguments and runs the command; returns the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = write!(stderr, "{e}");
            return code;
        }
    };
    match cli.command {
        Command::List { json } => cmd_list(json, stdout),
        Command::Run(args) => cmd_run(&args, stdout, stderr),
        Command::Check { scenarios } => cmd_check(&scenarios, stdout, stderr),
    }
}

pub fn cmd_list(as_json: bool, stdout: &mut dyn Write) -> i32 {
    let entries: Vec<Value> = registry().iter().map(catalog_entry).collect();
    let res = if as_json {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&entries).expect("catalog serializes"))
    } else {
        registry().iter().try_for_each(|e| {
            let d = (e.dims)();
            writeln!(
                stdout,
                "{:<30} nx={} nu={} np={} ng={} nh={} ngt={} nht={}  {}",
                e.name, d.nx, d.nu, d.np, d.ng, d.nh, d.ngt, d.nht, e.description
            )
        })
    };
    if res.is_err() {
        return EXIT_CONFIG;
    }
    EXIT_OK
}

fn catalog_entry(e: &Entry) -> Value {
    let sc = (e.scenario)();
    let options: BTreeMap<String, Value> = sc.entries().into_iter().map(|(k, v)| (k, option_json(&v))).collect();
    json!({
        "name": e.name,
        "description": e.description,
        "kind": sc.kind,
        "dims": (e.dims)(),
        "options": options,
    })
}

fn option_json(v: &OptionValue) -> Value {
    serde_json::to_value(v).expect("option values serialize")
}

/// Builds the scenario for `name` from defaults, the config file and `--set`.
pub fn resolve(name: &str, args: &RunArgs) -> anyhow::Result<(&'static Entry, Scenario)> {
    let entry = find(name).ok_or_else(|| anyhow!("unknown scenario '{name}'"))?;
    let mut sc = (entry.scenario)();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc: BTreeMap<String, OptionValue> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for (k, v) in &doc {
            sc.set(k, v)?;
        }
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got '{kv}'"))?;
        sc.set(k.trim(), &OptionValue::parse(v))?;
    }
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    sc.validate()?;
    Ok((entry, sc))
}

/// Flat key/value document that [`resolve`] reads back into the same scenario.
pub fn config_json(sc: &Scenario) -> String {
    let doc: BTreeMap<String, Value> = sc.entries().into_iter().map(|(k, v)| (k, option_json(&v))).collect();
    serde_json::to_string_pretty(&doc).expect("config serializes")
}

fn write_outputs(dir: &Path, sc: &Scenario, out: &RunOutput, format: Format) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = dir.join(&sc.name);
    match format {
        Format::Csv => {
            let f = fs::File::create(stem.with_extension("csv"))?;
            out.log.write_csv(std::io::BufWriter::new(f))?;
        }
        Format::Json => {
            let doc = json!({
                "comments": out.log.comments,
                "header": out.log.header,
                "rows": out.log.rows,
            });
            fs::write(stem.with_extension("json"), serde_json::to_string(&doc)?)?;
        }
    }
    fs::write(dir.join(format!("{}.metrics.json", sc.name)), out.metrics.to_json())?;
    fs::write(dir.join(format!("{}.config.json", sc.name)), config_json(sc))?;
    Ok(())
}

enum Outcome {
    Done(RunOutput),
    Failed(RunError),
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let mut jobs = Vec::new();
    for name in &args.scenarios {
        match resolve(name, args) {
            Ok(job) => jobs.push(job),
            Err(e) => {
                let _ = writeln!(stderr, "error: {e:#}");
                return EXIT_CONFIG;
            }
        }
    }
    let outcomes = run_parallel(&jobs, args.jobs.max(1));
    let mut code = EXIT_OK;
    for ((_, sc), outcome) in jobs.iter().zip(outcomes) {
        let out = match &outcome {
            Outcome::Done(out) => Some(out),
            Outcome::Failed(err) => {
                let _ = writeln!(stderr, "{}: {err}", sc.name);
                code = code.max(match err {
                    RunError::Config(_) => EXIT_CONFIG,
                    RunError::Numerical { .. } => EXIT_NUMERICAL,
                });
                err.partial()
            }
        };
        if let Some(out) = out {
            if let Err(e) = write_outputs(&args.out, sc, out, args.format) {
                let _ = writeln!(stderr, "{}: writing outputs: {e:#}", sc.name);
                code = code.max(EXIT_CONFIG);
            }
            let _ = writeln!(stdout, "{}", out.metrics.to_json());
        }
    }
    code
}

fn run_parallel(jobs: &[(&'static Entry, Scenario)], threads: usize) -> Vec<Outcome> {
    let run = |(entry, sc): &(&'static Entry, Scenario)| match (entry.run)(sc) {
        Ok(out) => Outcome::Done(out),
        Err(e) => Outcome::Failed(e),
    };
    if threads <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(run).collect();
    }
    let mut results: Vec<Option<Outcome>> = (0..jobs.len()).map(|_| None).collect();
    for (chunk_jobs, chunk_out) in jobs.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_jobs.iter().map(|job| s.spawn(move || run(job))).collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("scenario thread panicked"));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Prints one line per hook; returns the names of failing hooks.
pub fn report_lines(report: &DerivativeReport, tol: f64, out: &mut dyn Write) -> Vec<&'static str> {
    let mut failed = Vec::new();
    for c in &report.checks {
        let _ = match c.outcome {
            HookCheckOutcome::Checked { worst_rel_err } => {
                let pass = worst_rel_err <= tol;
                if !pass {
                    failed.push(c.hook);
                }
                writeln!(out, "  {:<12} {:.3e}  {}", c.hook, worst_rel_err, if pass { "ok" } else { "FAIL" })
            }
            HookCheckOutcome::NotApplicable => writeln!(out, "  {:<12} not applicable", c.hook),
        };
    }
    failed
}

pub fn cmd_check(names: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let mut code = EXIT_OK;
    for name in names {
        let Some(entry) = find(name) else {
            let _ = writeln!(stderr, "error: unknown scenario '{name}'");
            return EXIT_CONFIG;
        };
        let _ = writeln!(stdout, "{name}");
        let failed = report_lines(&(entry.check)(), CHECK_TOL, stdout);
        if !failed.is_empty() {
            let _ = writeln!(stderr, "{name}: derivative check failed for {}", failed.join(", "));
            code = EXIT_CHECK_FAILED;
        }
    }
    code
}
