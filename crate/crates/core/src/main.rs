//! Command-line front end: single runs, sensing-duration sweeps, and the
//! preset catalog. Exit codes: 0 on success, 2 on configuration errors
//! (including argument errors), 1 on I/O failures.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use whitefi_sim::engine::SimTime;
use whitefi_sim::mac::AccessCategory;
use whitefi_sim::metrics::Metric;
use whitefi_sim::scenario::{
    self, comparison_csv, preset, preset_description, ScenarioConfig, PRESET_NAMES,
};
use whitefi_sim::sensing::SensingStrategy;

#[derive(Parser)]
#[command(
    name = "whitefi-sim",
    version,
    about = "White-Fi spectrum-sensing QoS simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and export per-AC metric series plus a JSON summary.
    Run {
        /// Built-in scenario name (see `preset --list`).
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// JSON scenario file; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated duration override, in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Sensing strategy: fixed:<ms> or adaptive[:vo,vi,be,bk ms].
        #[arg(long)]
        strategy: Option<String>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a preset once per fixed sensing duration and compare.
    Sweep {
        /// Built-in scenario name (see `preset --list`).
        #[arg(long)]
        preset: String,
        /// Comma-separated fixed sensing durations in milliseconds.
        #[arg(long)]
        durations: String,
        /// Also run the per-AC adaptive strategy as a case.
        #[arg(long)]
        with_adaptive: bool,
        /// Output directory; each case writes into a subdirectory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Inspect the built-in scenarios.
    Preset {
        /// List available presets with one-line descriptions.
        #[arg(long, required = true)]
        list: bool,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            preset,
            config,
            seed,
            duration,
            strategy,
            out,
        } => cmd_run(preset, config, seed, duration, strategy, out),
        Command::Sweep {
            preset,
            durations,
            with_adaptive,
            out,
        } => cmd_sweep(&preset, &durations, with_adaptive, out),
        Command::Preset { .. } => {
            for name in PRESET_NAMES {
                println!("{:<14} {}", name, preset_description(name));
            }
            ExitCode::SUCCESS
        }
    }
}

fn config_error(msg: &str) -> ExitCode {
    eprintln!("error: {}", msg);
    ExitCode::from(2)
}

fn io_error(err: &std::io::Error) -> ExitCode {
    eprintln!("error: {}", err);
    ExitCode::from(1)
}

fn load_scenario(
    preset_name: Option<&str>,
    config: Option<&PathBuf>,
) -> Result<ScenarioConfig, String> {
    match (preset_name, config) {
        (Some(name), None) => preset(name),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("{}: {}", path.display(), e))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {}", path.display(), e))
        }
        _ => Err("exactly one of --preset or --config is required".to_owned()),
    }
}

fn parse_strategy(s: &str) -> Result<SensingStrategy, String> {
    let parse_ms = |v: &str| -> Result<f64, String> {
        let ms: f64 = v
            .trim()
            .parse()
            .map_err(|_| format!("invalid duration '{}' (milliseconds expected)", v))?;
        if ms.is_finite() && ms >= 0.0 {
            Ok(ms)
        } else {
            Err(format!("invalid duration '{}' (must be >= 0)", v))
        }
    };
    if let Some(rest) = s.strip_prefix("fixed:") {
        return Ok(SensingStrategy::fixed_ms(parse_ms(rest)?));
    }
    if s == "adaptive" {
        return Ok(SensingStrategy::adaptive_default());
    }
    if let Some(rest) = s.strip_prefix("adaptive:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 4 {
            return Err("adaptive strategy needs four durations: vo,vi,be,bk".to_owned());
        }
        let mut durations = [SimTime::ZERO; 4];
        for (slot, part) in durations.iter_mut().zip(&parts) {
            *slot = SimTime::from_ms_f64(parse_ms(part)?);
        }
        return Ok(SensingStrategy::AdaptiveByAc { durations });
    }
    Err(format!(
        "unrecognized strategy '{}'; use fixed:<ms> or adaptive[:vo,vi,be,bk]",
        s
    ))
}

fn cmd_run(
    preset_name: Option<String>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    duration: Option<f64>,
    strategy: Option<String>,
    out: PathBuf,
) -> ExitCode {
    let mut cfg = match load_scenario(preset_name.as_deref(), config.as_ref()) {
        Ok(cfg) => cfg,
        Err(e) => return config_error(&e),
    };
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if let Some(secs) = duration {
        if !(secs.is_finite() && secs >= 0.0) {
            return config_error("duration must be a non-negative number of seconds");
        }
        cfg.duration = SimTime::from_secs_f64(secs);
    }
    if let Some(s) = strategy {
        cfg.strategy = match parse_strategy(&s) {
            Ok(st) => st,
            Err(e) => return config_error(&e),
        };
    }
    let bundle = match scenario::run(&cfg) {
        Ok(b) => b,
        Err(e) => return config_error(&e),
    };
    if let Err(e) = scenario::export(&bundle, &out) {
        return io_error(&e);
    }
    let s = &bundle.summary;
    println!(
        "{}: seed {}, strategy {}, {:.1} s simulated, {} events",
        s.scenario, s.master_seed, s.strategy, s.duration_s, s.events_processed
    );
    println!(
        "sensing windows {}, handoffs {} (retries {})",
        s.sense_count, s.handoff_count, s.handoff_retries
    );
    for ac in AccessCategory::ALL {
        let e2e = s.stat(Metric::E2eDelay, ac);
        let thr = s.stat(Metric::Throughput, ac).unwrap_or_default();
        let frames = &s.frames[ac.label()];
        match e2e {
            Some(e2e) => println!(
                "{}: e2e mean {:.3} ms, throughput {:.3} Mb/s, delivered {}, dropped {}",
                ac.label(),
                e2e.mean * 1e3,
                thr.mean / 1e6,
                frames.delivered,
                frames.dropped(),
            ),
            None => println!("{}: no traffic", ac.label()),
        }
    }
    println!("wrote {}", out.join("summary.json").display());
    ExitCode::SUCCESS
}

fn cmd_sweep(preset_name: &str, durations: &str, with_adaptive: bool, out: PathBuf) -> ExitCode {
    let base = match preset(preset_name) {
        Ok(cfg) => cfg,
        Err(e) => return config_error(&e),
    };
    let mut ms_list = Vec::new();
    for part in durations.split(',') {
        match part.trim().parse::<f64>() {
            Ok(ms) => ms_list.push(ms),
            Err(_) => return config_error(&format!("invalid duration '{}' in --durations", part)),
        }
    }
    if ms_list.is_empty() {
        return config_error("--durations needs at least one value");
    }
    let cases = match scenario::sweep(&base, &ms_list, with_adaptive) {
        Ok(cases) => cases,
        Err(e) => return config_error(&e),
    };
    for case in &cases {
        if let Err(e) = scenario::export(&case.bundle, &out.join(&case.label)) {
            return io_error(&e);
        }
        println!(
            "{:<14} sensing windows {:>9}, events {:>10}",
            case.label, case.bundle.summary.sense_count, case.bundle.summary.events_processed
        );
    }
    let table = comparison_csv(&cases);
    let path = out.join("comparison.csv");
    if let Err(e) = fs::write(&path, table) {
        return io_error(&e);
    }
    println!("wrote {}", path.display());
    ExitCode::SUCCESS
}
