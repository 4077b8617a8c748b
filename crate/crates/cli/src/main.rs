use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use wkb_nls::experiments::{resolve_plan, run, write_outputs, ExperimentConfig, Job};

#[derive(Parser)]
#[command(name = "wkb-nls", version, about = "Semiclassical NLS experiments: rays, WKB profiles, phase-amplitude systems, reference solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace rays, caustic time and eikonal residual
    Rays(Common),
    /// Build the WKB approximant at the configured times
    Wkb(Common),
    /// Integrate one phase-amplitude system
    Grenier(Common),
    /// Run the split-step reference solver once
    Nls(Common),
    /// Epsilon sweep with slope verdicts
    Converge(Common),
    /// Separation of nearby data at vanishing times
    Instability(Common),
    /// Compensated Sobolev norms across epsilon
    Normgrowth(Common),
    /// Error of the ODE profile along t = eps^p
    Odewindow(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment description
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (defaults to output.dir, then out/<subcommand>)
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Print the resolved plan and exit without solving
    #[arg(long)]
    dry_run: bool,
    /// Override a config field, e.g. --set grid.points=[2048] or --set epsilons=[0.1,0.05]
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

impl Command {
    fn split(self) -> (Job, Common) {
        match self {
            Self::Rays(c) => (Job::Rays, c),
            Self::Wkb(c) => (Job::Wkb, c),
            Self::Grenier(c) => (Job::Grenier, c),
            Self::Nls(c) => (Job::Nls, c),
            Self::Converge(c) => (Job::Converge, c),
            Self::Instability(c) => (Job::Instability, c),
            Self::Normgrowth(c) => (Job::NormGrowth, c),
            Self::Odewindow(c) => (Job::OdeWindow, c),
        }
    }
}

/// Sets `path` (dot separated) in `root`; the value is parsed as JSON and
/// falls back to a plain string.
fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').with_context(|| format!("override `{spec}` is not PATH=VALUE"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override path `{path}` has an empty component");
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let obj = node.as_object_mut().with_context(|| format!("cannot descend into `{key}` in `{path}`"))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().with_context(|| format!("parent of `{path}` is not an object"))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(ExperimentConfig::from_value(value)?)
}

fn execute(job: Job, args: Common) -> Result<bool> {
    let cfg = load(&args.config, &args.overrides)?;
    let plan = resolve_plan(&cfg, job)?;
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "subcommand": job.name(), "plan": plan, "config": cfg }))?);
        return Ok(true);
    }
    let out = args
        .out
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(job.name()));
    let report = run(&cfg, job)?;
    let written = write_outputs(&report, &out)?;
    for fit in &report.fits {
        if let Some(f) = &fit.fit {
            let s = fit.s.map_or(String::new(), |s| format!(" s={s}"));
            let expected = fit.expected.map_or("-".to_string(), |e| format!("{e}±{}", fit.tolerance));
            println!(
                "{:4} {}{s}: slope {:.4} (expected {expected}, R² {:.4})",
                if fit.passed { "ok" } else { "FAIL" },
                fit.metric,
                f.slope,
                f.r_squared
            );
        } else {
            println!("FAIL {}: too few points for a fit", fit.metric);
        }
    }
    for c in &report.checks {
        println!("{:4} {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    for f in &report.flags {
        println!("flag {f}");
    }
    println!("{} files written to {}", written.len(), out.display());
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (job, args) = cli.command.split();
    match execute(job, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verdict: FAIL");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_and_create_objects() {
        let mut v = serde_json::json!({"grid": {"points": [1024]}});
        apply_override(&mut v, "grid.points=[2048]").unwrap();
        apply_override(&mut v, "time_step.max=0.002").unwrap();
        apply_override(&mut v, "scenario=critical").unwrap();
        assert_eq!(v["grid"]["points"][0], 2048);
        assert_eq!(v["time_step"]["max"], 0.002);
        assert_eq!(v["scenario"], "critical");
        assert!(apply_override(&mut v, "noequals").is_err());
        assert!(apply_override(&mut v, "grid..x=1").is_err());
        assert!(apply_override(&mut v, "scenario.x=1").is_err());
    }
}
