use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlca_core::profiles::{
    apply_override, builtin_profiles, load_manifest_file, InferenceInputs, Project, Registries,
};
use mlca_core::report::{
    compare, embodied_report, idle_report, project_report, run_lca, training_report, Format,
    Render, DEFAULT_TOLERANCE,
};
use mlca_core::telemetry::{
    bucket_join, deployment_summary, ingest_power_csv, ingest_requests_csv,
};
use mlca_core::{CarbonIntensity, Duration, Error, ErrorKind};

/// Carbon accounting for ML training runs and inference deployments.
#[derive(Debug, Parser)]
#[command(name = "mlca", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Project manifest (TOML).
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Output format: json, csv or markdown.
    #[arg(long, default_value = "markdown", value_parser = parse_format)]
    format: Format,
    /// What-if override applied after loading, e.g. `grid=us-central1` or `pue=1.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set idle_method=...`.
    #[arg(long, value_name = "wallclock|fractional|none")]
    idle_method: Option<String>,
    /// Extra directory of profile files (*.toml) layered over the built-ins.
    #[arg(long, env = "MLCA_PROFILE_DIR", value_name = "DIR")]
    profile_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Amortised manufacturing emissions per run.
    Embodied(Common),
    /// Dynamic energy and emissions of training runs.
    Train(Common),
    /// Idle and infrastructure consumption of training runs.
    Idle(Common),
    /// Full life-cycle breakdown of one run.
    Lca {
        #[command(flatten)]
        common: Common,
        /// Run to report; required when the manifest has several.
        #[arg(long)]
        run: Option<String>,
    },
    /// Complete and cross-check published model footprints.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Relative disagreement above which a row is flagged.
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Per-process breakdown, extended workshop-wide when configured.
    Breakdown(Common),
    /// Energy, power and emissions of an inference deployment.
    Inference {
        #[command(flatten)]
        common: Common,
        /// Power log; overrides the manifest's `[inference] power`.
        #[arg(long, value_name = "PATH")]
        power: Option<PathBuf>,
        /// Request log; overrides the manifest's `[inference] requests`.
        #[arg(long, value_name = "PATH")]
        requests: Option<PathBuf>,
        /// Bucket length for the request/energy join.
        #[arg(long, value_name = "N")]
        bucket_minutes: Option<u32>,
        /// Print `bucket_start,requests,energy_kwh` pairs instead of the summary.
        #[arg(long)]
        pairs: bool,
    },
    /// Load and check a manifest; prints nothing on success.
    Validate(Common),
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn registries(common: &Common) -> Result<Registries, Error> {
    let mut base = builtin_profiles();
    if let Some(dir) = &common.profile_dir {
        base.merge(Registries::load_dir(dir)?);
        base.validate()?;
    }
    Ok(base)
}

fn overrides(common: &Common) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for o in &common.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Parse {
            source_name: "--set".to_string(),
            message: format!("expected KEY=VALUE, got `{o}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(m) = &common.idle_method {
        out.push(("idle_method".to_string(), m.clone()));
    }
    Ok(out)
}

fn load(common: &Common) -> Result<Project, Error> {
    let path = common.manifest.as_ref().ok_or_else(|| Error::Parse {
        source_name: "arguments".to_string(),
        message: "--manifest is required".to_string(),
    })?;
    let base = registries(common)?;
    let mut project = load_manifest_file(path, &base).map_err(|e| match e {
        Error::Io(io) => Error::Parse {
            source_name: path.display().to_string(),
            message: io.to_string(),
        },
        other => other,
    })?;
    for (k, v) in overrides(common)? {
        apply_override(&mut project, &k, &v, &base)?;
    }
    for g in &project.profiles.grids {
        if let Some(w) = g.intensity.plausibility_warning() {
            warn(format!("grid `{}`: {w}", g.region));
        }
    }
    Ok(project)
}

fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        message: e.to_string(),
    })
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Embodied(c) => embodied_report(&load(&c)?)?.render(c.format),
        Command::Train(c) => training_report(&load(&c)?)?.render(c.format),
        Command::Idle(c) => idle_report(&load(&c)?)?.render(c.format),
        Command::Lca { common, run } => {
            let project = load(&common)?;
            let selected = match (&run, project.runs.as_slice()) {
                (Some(name), _) => project.run(name)?,
                (None, [only]) => only,
                (None, []) => {
                    return Err(Error::EmptyInput(format!(
                        "project `{}` has no training runs",
                        project.name
                    )))
                }
                (None, _) => {
                    return Err(Error::Parse {
                        source_name: "arguments".to_string(),
                        message: "manifest has several runs; choose one with --run".to_string(),
                    })
                }
            };
            run_lca(selected)?.render(common.format)
        }
        Command::Compare { common, tolerance } => {
            let project = load(&common)?;
            let c = compare(&project.comparisons, tolerance)?;
            for r in &c.rows {
                for f in &r.flags {
                    warn(format!(
                        "{}: {} off by {:.1}%",
                        r.model,
                        f.relation,
                        100.0 * f.relative_difference
                    ));
                }
            }
            c.render(common.format)
        }
        Command::Breakdown(c) => {
            let report = project_report(&load(&c)?)?;
            if let Some(w) = &report.workshop {
                w.warnings.iter().for_each(warn);
            }
            report.render(c.format)
        }
        Command::Inference {
            common,
            power,
            requests,
            bucket_minutes,
            pairs,
        } => {
            let project = common
                .manifest
                .as_ref()
                .map(|_| load(&common))
                .transpose()?;
            let base_dir = common
                .manifest
                .as_ref()
                .and_then(|m| m.parent())
                .map(Path::to_path_buf)
                .unwrap_or_default();
            let inputs = project.as_ref().and_then(|p| p.inference.as_ref());
            let from_manifest =
                |field: fn(&InferenceInputs) -> &String| inputs.map(|i| base_dir.join(field(i)));
            let missing = |what: &str| Error::Parse {
                source_name: "arguments".to_string(),
                message: format!("no {what} log: pass --{what} or a manifest with [inference]"),
            };
            let power = power
                .or_else(|| from_manifest(|i| &i.power))
                .ok_or_else(|| missing("power"))?;
            let requests = requests
                .or_else(|| from_manifest(|i| &i.requests))
                .ok_or_else(|| missing("requests"))?;
            let minutes = bucket_minutes
                .or_else(|| inputs.and_then(|i| i.bucket_minutes))
                .unwrap_or(10);
            let bucket = Duration::from_minutes(minutes as f64)?;

            let telemetry = ingest_power_csv(open(&power)?, &power.display().to_string())?;
            let buckets = ingest_requests_csv(open(&requests)?, &requests.display().to_string())?;
            if pairs {
                let join = bucket_join(&telemetry, &buckets, bucket)?;
                return Ok(join.to_csv());
            }

            // grid: manifest section, else `--set grid=...`
            let base = registries(&common)?;
            let sets = overrides(&common)?;
            let region = sets
                .iter()
                .rev()
                .find(|(k, _)| k == "grid")
                .map(|(_, v)| v.clone())
                .or_else(|| inputs.map(|i| i.grid.clone()))
                .ok_or_else(|| missing("grid"))?;
            let mut grid = project
                .as_ref()
                .and_then(|p| p.profiles.grid(&region).ok().cloned())
                .map_or_else(|| base.grid(&region).cloned(), Ok)?;
            let mut pue = inputs.and_then(|i| i.pue);
            if project.is_none() {
                for (k, v) in &sets {
                    match k.as_str() {
                        "grid" => {}
                        "intensity" => grid.intensity = CarbonIntensity::parse_lenient(v)?,
                        "pue" => {
                            pue = Some(v.parse().map_err(|_| Error::Parse {
                                source_name: "override pue".to_string(),
                                message: format!("expected a number, got `{v}`"),
                            })?)
                        }
                        other => {
                            return Err(Error::Parse {
                                source_name: "--set".to_string(),
                                message: format!("`{other}` does not apply to inference"),
                            })
                        }
                    }
                }
            }
            let summary = deployment_summary(&telemetry, &buckets, &grid, pue, bucket)?;
            summary.warnings.iter().for_each(warn);
            summary.render(common.format)
        }
        Command::Validate(c) => {
            load(&c)?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout
                .write_all(out.as_bytes())
                .and_then(|_| stdout.flush())
                .is_err()
            {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Computation => 3,
            })
        }
    }
}
