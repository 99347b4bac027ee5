//! `weft` — run, validate, and plan simulated deployments from the shell.
//!
//! Exit codes: 0 success, 2 invalid input (parse or validation errors),
//! 3 execution failure (deploy, run, or I/O errors).

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use weft_core::cluster::{render_csv, render_json, Report, Scenario, ScenarioError};
use weft_core::model::{
    validate_class, validate_profiles, ClassDefinition, DatacenterProfile,
};
use weft_core::runtime::HandlerRegistry;

#[derive(Parser)]
#[command(
    name = "weft",
    about = "Deterministic simulator for an edge-cloud object runtime with declarative SLAs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and export the per-second report.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Replace the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Check a class file: inheritance, SLAs, handlers, triggers.
    Validate {
        /// TOML file with `[[classes]]` (and optional `[[templates]]`).
        classes: PathBuf,
    },
    /// Show where each class would be placed on a given fleet.
    Plan {
        /// TOML file with `[[classes]]` (and optional `[[templates]]`).
        classes: PathBuf,
        /// TOML file with `[[datacenters]]`.
        #[arg(long)]
        dcs: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

/// Standalone class library file: deployable classes plus abstract parents.
#[derive(Deserialize)]
struct ClassFile {
    #[serde(default)]
    templates: Vec<ClassDefinition>,
    #[serde(default)]
    classes: Vec<ClassDefinition>,
}

/// Standalone fleet description.
#[derive(Deserialize)]
struct FleetFile {
    datacenters: Vec<DatacenterProfile>,
}

const EXIT_INVALID: u8 = 2;
const EXIT_FAILED: u8 = 3;

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("weft: {msg}");
    ExitCode::from(code)
}

fn read_text(path: &PathBuf) -> Result<String, ExitCode> {
    fs::read_to_string(path)
        .map_err(|e| fail(EXIT_FAILED, &format!("cannot read {}: {e}", path.display())))
}

fn parse_classes(path: &PathBuf) -> Result<ClassFile, ExitCode> {
    let text = read_text(path)?;
    toml::from_str(&text)
        .map_err(|e| fail(EXIT_INVALID, &format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            seed,
            out,
            format,
        } => cmd_run(&scenario, seed, out.as_ref(), format),
        Command::Validate { classes } => cmd_validate(&classes),
        Command::Plan {
            classes,
            dcs,
            format,
        } => cmd_plan(&classes, &dcs, format),
    }
}

fn cmd_run(path: &PathBuf, seed: Option<u64>, out: Option<&PathBuf>, format: Format) -> ExitCode {
    let text = match read_text(path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let scenario = match Scenario::from_toml_str(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INVALID, &format!("{}: {e}", path.display())),
    };
    let cluster = match scenario.run(seed) {
        Ok(c) => c,
        Err(ScenarioError::Parse(e)) => {
            return fail(EXIT_INVALID, &format!("{}: {e}", path.display()))
        }
        Err(ScenarioError::Cluster(e)) => return fail(EXIT_FAILED, &e.to_string()),
    };
    let report = Report::from_metrics(
        &scenario.name,
        seed.unwrap_or(scenario.seed),
        &cluster.metrics,
    );
    let rendered = match format {
        Format::Csv => render_csv(&report),
        Format::Json => render_json(&report),
    };
    match out {
        None => {
            print!("{rendered}");
            ExitCode::SUCCESS
        }
        Some(dest) => match fs::write(dest, rendered) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(EXIT_FAILED, &format!("cannot write {}: {e}", dest.display())),
        },
    }
}

fn cmd_validate(path: &PathBuf) -> ExitCode {
    let file = match parse_classes(path) {
        Ok(f) => f,
        Err(code) => return code,
    };
    if file.classes.is_empty() && file.templates.is_empty() {
        return fail(EXIT_INVALID, &format!("{}: no classes", path.display()));
    }
    let mut library: BTreeMap<String, ClassDefinition> = BTreeMap::new();
    for def in file.templates.iter().chain(&file.classes) {
        library.insert(def.name.clone(), def.clone());
    }
    let handlers = HandlerRegistry::standard().names();
    let mut bad = 0usize;
    for def in file.templates.iter().chain(&file.classes) {
        match validate_class(def, &library, &handlers) {
            Ok(flat) => println!(
                "ok {}: mode={} attributes={} functions={} triggers={}",
                flat.name,
                flat.class_sla.consistency.mode_name(),
                flat.attributes.len(),
                flat.functions.len(),
                flat.triggers.len()
            ),
            Err(e) => {
                eprintln!("error: {e}");
                bad += 1;
            }
        }
    }
    if bad > 0 {
        ExitCode::from(EXIT_INVALID)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_plan(classes: &PathBuf, dcs: &PathBuf, format: Format) -> ExitCode {
    let file = match parse_classes(classes) {
        Ok(f) => f,
        Err(code) => return code,
    };
    let fleet: FleetFile = {
        let text = match read_text(dcs) {
            Ok(t) => t,
            Err(code) => return code,
        };
        match toml::from_str(&text) {
            Ok(f) => f,
            Err(e) => return fail(EXIT_INVALID, &format!("{}: {e}", dcs.display())),
        }
    };
    if let Err(e) = validate_profiles(&fleet.datacenters) {
        return fail(EXIT_INVALID, &e.to_string());
    }
    let mut cluster = match weft_core::cluster::Cluster::new(fleet.datacenters, 1, 1, (0, 0)) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_FAILED, &e.to_string()),
    };
    for def in &file.templates {
        cluster.add_definition(def.clone());
    }
    for def in &file.classes {
        if let Err(e) = cluster.deploy(def) {
            return fail(EXIT_INVALID, &e.to_string());
        }
    }
    let placements = cluster.placements();
    match format {
        Format::Json => {
            println!(
                "{}",
                serde_json::to_string_pretty(&placements).expect("placements serialize")
            );
        }
        Format::Csv => {
            println!("class,mode,replicas,target_replicas,reserved_rps,bounded_delta_ms,consensus");
            for p in &placements {
                println!(
                    "{},{},{},{},{},{},{}",
                    p.class,
                    p.mode,
                    p.replicas.join("+"),
                    p.target_replicas,
                    p.reserved_rps,
                    p.bounded_delta_ms
                        .map_or(String::new(), |d| d.to_string()),
                    p.consensus
                );
            }
        }
    }
    ExitCode::SUCCESS
}
