//! Command-line front end: scenario configs, single runs, parameter
//! sweeps, and the verification suites.
//!
//! A config file is a TOML rendering of [`Scenario`] plus two optional
//! blocks that the simulator itself does not know about:
//!
//! ```toml
//! [output]
//! directory = "out"        # where traces and metrics land
//!
//! [sweep]
//! parameter = "filter.alpha_e"
//! values = [0.5, 1.0, 5.0, 20.0]
//! ```
//!
//! Every other key must deserialize into [`Scenario`]; unknown keys are
//! rejected with the parser's line/column diagnostics. `--set key=value`
//! edits the raw TOML document before it is parsed, so overrides go
//! through exactly the same validation as the file contents.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::sim::{self, Metrics, Scenario, Trace};
use crate::verify::{self, FaultInjection, Suite};

/// Exit code for a clean, violation-free run.
pub const EXIT_OK: i32 = 0;
/// Exit code for configuration or runtime errors.
pub const EXIT_ERROR: i32 = 1;
/// Exit code when the trace contains safety violations.
pub const EXIT_VIOLATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cbf-sim",
    version,
    about = "Safety-filtered robot scenario simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its trace and metrics.
    Run(RunArgs),
    /// Run the scenario once per value of a swept parameter.
    Sweep(SweepArgs),
    /// Run verification suites (models | filters | bounds | all).
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario config file (TOML).
    pub config: PathBuf,
    /// Override a config key before parsing, e.g. `--set filter.alpha_e=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Override the RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the integration step in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Override the episode length in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Output directory (defaults to the config's `output.directory`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Scenario config file (TOML).
    pub config: PathBuf,
    /// Dotted path of the parameter to sweep, e.g. `filter.alpha.gain`.
    /// Defaults to the config's `sweep.parameter`.
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated list of values, e.g. `0.5,1,5,20`.
    /// Defaults to the config's `sweep.values`.
    #[arg(long)]
    pub values: Option<String>,
    /// Override a config key before parsing (applies to every sweep point).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Override the RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the integration step in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Override the episode length in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Output directory (defaults to the config's `output.directory`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Which suite to run: models, filters, bounds, or all.
    #[arg(default_value = "all")]
    pub suite: String,
    /// Deliberately corrupt one pipeline stage to confirm the suites
    /// notice. Supported: `psi-sign-flip`.
    #[arg(long, value_name = "FAULT")]
    pub inject_fault: Option<String>,
}

/// A parsed config file: the scenario plus the CLI-only blocks.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    pub sweep: Option<SweepBlock>,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputBlock {
    directory: PathBuf,
}

/// Default sweep attached to a scenario file, used when `--param` and
/// `--values` are not given on the command line.
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameter: String,
    pub values: Vec<toml::Value>,
}

/// Parse and dispatch, returning the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Verify(args) => cmd_verify(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Run a single scenario config. Exit 0 only if the run completed with no
/// violation steps; a trace containing violations exits 2 even when the
/// run later aborted, and all other failures exit 1.
pub fn cmd_run(args: &RunArgs) -> Result<i32, String> {
    let config = load_config(&args.config, &args.set)?;
    let scenario = with_overrides(config.scenario, args.seed, args.dt, args.horizon);
    let out_dir = args.out.clone().unwrap_or(config.output_dir);

    let (trace, metrics) = sim::run(&scenario).map_err(|e| e.to_string())?;
    write_run_outputs(&out_dir, &scenario.name, &trace, &metrics)?;

    print!("{}", metrics.to_text());
    if let Some(err) = &trace.error {
        println!("aborted: {err}");
    }
    println!(
        "wrote {}",
        out_dir.join(format!("{}.csv", scenario.name)).display()
    );

    if metrics.violation_steps > 0 {
        println!(
            "outcome: SAFETY VIOLATION ({} steps)",
            metrics.violation_steps
        );
        Ok(EXIT_VIOLATION)
    } else if !metrics.completed {
        println!("outcome: ABORTED");
        Ok(EXIT_ERROR)
    } else {
        println!("outcome: OK");
        Ok(EXIT_OK)
    }
}

/// Run the scenario once per sweep value and write a comparison table.
/// Exit 0 iff every run completed; violations are reported in the table
/// rather than the exit code, since sweeps exist to expose them.
pub fn cmd_sweep(args: &SweepArgs) -> Result<i32, String> {
    let config = load_config(&args.config, &args.set)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| config.output_dir.clone());

    let (parameter, values) = resolve_sweep(&config, args)?;
    if values.is_empty() {
        return Err("sweep value list is empty".into());
    }

    // Re-apply each sweep value through the same raw-document route as
    // --set, so sweeping is exactly repeated overriding.
    let mut entries = Vec::new();
    let mut all_completed = true;
    for value in &values {
        let rendered = render_toml_value(value);
        let mut overrides: Vec<String> = args.set.clone();
        overrides.push(format!("{parameter}={rendered}"));
        let point = load_config(&args.config, &overrides)?;
        let scenario = with_overrides(point.scenario, args.seed, args.dt, args.horizon);
        let label = format!("{parameter}={rendered}");

        let (trace, metrics) = sim::run(&scenario).map_err(|e| format!("{label}: {e}"))?;
        let stem = format!("{}__{}", scenario.name, sanitize(&label));
        write_run_outputs(&out_dir, &stem, &trace, &metrics)?;
        if !metrics.completed {
            all_completed = false;
        }
        entries.push((label, scenario, metrics));
    }

    let table = sim::compare(&entries).map_err(|e| e.to_string())?;
    let base_name = &entries[0].1.name;
    let table_path = out_dir.join(format!("{base_name}__sweep.txt"));
    atomic_write(&table_path, table.as_bytes())?;
    print!("{table}");
    println!("wrote {}", table_path.display());

    Ok(if all_completed { EXIT_OK } else { EXIT_ERROR })
}

/// Run one or all verification suites. Exit 0 iff every property passed.
pub fn cmd_verify(args: &VerifyArgs) -> Result<i32, String> {
    let suite = match args.suite.as_str() {
        "models" => Suite::Models,
        "filters" => Suite::Filters,
        "bounds" => Suite::Bounds,
        "all" => Suite::All,
        other => {
            return Err(format!(
                "unknown suite `{other}` (expected models, filters, bounds, or all)"
            ))
        }
    };
    let fault = match args.inject_fault.as_deref() {
        None => FaultInjection::None,
        Some("psi-sign-flip") => FaultInjection::PsiSignFlip,
        Some(other) => {
            return Err(format!(
                "unknown fault `{other}` (supported: psi-sign-flip)"
            ))
        }
    };

    let reports = verify::run(suite, fault);
    let mut all_passed = true;
    for report in &reports {
        println!("suite {}", report.suite);
        for p in &report.properties {
            println!("{}", p.render());
            all_passed &= p.passed;
        }
        let passed = report.properties.iter().filter(|p| p.passed).count();
        println!("  {passed}/{} properties passed\n", report.properties.len());
    }
    Ok(if all_passed { EXIT_OK } else { EXIT_ERROR })
}

/// Read a config file, apply `--set` overrides to the raw document, and
/// parse the result. The scenario name defaults to the file stem.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ConfigFile, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut doc: toml::Value = text
        .parse()
        .map_err(|e| format!("{}: {e}", path.display()))?;

    for assignment in overrides {
        apply_override(&mut doc, assignment)?;
    }

    let table = doc
        .as_table_mut()
        .ok_or_else(|| format!("{}: top level must be a table", path.display()))?;

    let output_dir = match table.remove("output") {
        Some(v) => {
            let block: OutputBlock = v
                .try_into()
                .map_err(|e| format!("{}: output: {e}", path.display()))?;
            block.directory
        }
        None => PathBuf::from("out"),
    };
    let sweep = match table.remove("sweep") {
        Some(v) => Some(
            v.try_into::<SweepBlock>()
                .map_err(|e| format!("{}: sweep: {e}", path.display()))?,
        ),
        None => None,
    };

    let mut scenario: Scenario = doc
        .try_into()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    if scenario.name.is_empty() {
        scenario.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
    }

    Ok(ConfigFile {
        scenario,
        output_dir,
        sweep,
    })
}

fn with_overrides(
    mut scenario: Scenario,
    seed: Option<u64>,
    dt: Option<f64>,
    horizon: Option<f64>,
) -> Scenario {
    if let Some(seed) = seed {
        scenario.run.seed = seed;
    }
    if let Some(dt) = dt {
        scenario.run.dt = dt;
    }
    if let Some(horizon) = horizon {
        scenario.run.horizon = horizon;
    }
    scenario
}

fn resolve_sweep(
    config: &ConfigFile,
    args: &SweepArgs,
) -> Result<(String, Vec<toml::Value>), String> {
    let parameter = args
        .param
        .clone()
        .or_else(|| config.sweep.as_ref().map(|s| s.parameter.clone()))
        .ok_or("no sweep parameter: pass --param or add a [sweep] block")?;
    let values: Vec<toml::Value> = match &args.values {
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| parse_value(s.trim()))
            .collect(),
        None => config
            .sweep
            .as_ref()
            .map(|s| s.values.clone())
            .ok_or("no sweep values: pass --values or add a [sweep] block")?,
    };
    Ok((parameter, values))
}

/// Apply one `key.path=value` assignment to a TOML document, creating
/// intermediate tables as needed. Numeric segments index arrays.
fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form key=value"))?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(format!("override key `{path}` has an empty segment"));
    }
    let value = parse_value(raw.trim());

    let mut node = doc;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(index) = seg.parse::<usize>() {
            let arr = node
                .as_array_mut()
                .ok_or_else(|| format!("`{}` is not an array", segments[..i].join(".")))?;
            if index >= arr.len() {
                return Err(format!(
                    "index {index} out of range for `{}` (len {})",
                    segments[..i].join("."),
                    arr.len()
                ));
            }
            if last {
                arr[index] = value;
                return Ok(());
            }
            node = &mut arr[index];
        } else {
            let table = node
                .as_table_mut()
                .ok_or_else(|| format!("`{}` is not a table", segments[..i].join(".")))?;
            if last {
                table.insert(seg.to_string(), value);
                return Ok(());
            }
            node = table
                .entry(seg.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
    }
    Ok(())
}

/// Parse an override right-hand side with TOML's own grammar; anything
/// that does not parse (bare words like `cart_pole`) becomes a string.
fn parse_value(raw: &str) -> toml::Value {
    #[derive(serde::Deserialize)]
    struct Wrapper {
        v: toml::Value,
    }
    match toml::from_str::<Wrapper>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn render_toml_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_run_outputs(
    out_dir: &Path,
    stem: &str,
    trace: &Trace,
    metrics: &Metrics,
) -> Result<(), String> {
    fs::create_dir_all(out_dir).map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    atomic_write(
        &out_dir.join(format!("{stem}.csv")),
        trace.to_csv().as_bytes(),
    )?;
    atomic_write(
        &out_dir.join(format!("{stem}.metrics.txt")),
        metrics.to_text().as_bytes(),
    )?;
    let json = serde_json::to_string_pretty(metrics).map_err(|e| e.to_string())?;
    let mut json = json;
    json.push('\n');
    atomic_write(
        &out_dir.join(format!("{stem}.metrics.json")),
        json.as_bytes(),
    )?;
    Ok(())
}

/// Write via a sibling temp file and rename, so partially written outputs
/// never appear under the final name.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    fs::rename(&tmp, path)
        .map_err(|e| format!("cannot rename {} to {}: {e}", tmp.display(), path.display()))?;
    Ok(())
}

/// One-line usage summary for `--help` footer tests and the README.
pub fn describe_exit_codes() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "exit codes:");
    let _ = writeln!(
        s,
        "  run:    0 completed without violations, 2 violations, 1 error"
    );
    let _ = writeln!(
        s,
        "  sweep:  0 all runs completed, 1 error or empty value list"
    );
    let _ = writeln!(s, "  verify: 0 all properties passed, 1 otherwise");
    s
}
