use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use sideband_cli::{apply_overrides, run, Overrides, RunConfig};

/// Phonon-sideband spectra and coherence of cavity-coupled emitters.
#[derive(Parser)]
#[command(name = "sideband", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the bare emission and one cavity-filtered spectrum per detuning.
    SimulateSpectrum(Common),
    /// First-order coherence and visibility of simulated or measured spectra.
    SimulateCoherence(Common),
    /// Sideband ratio, visibility decay and sideband visibility area per detuning.
    SweepDetuning(Common),
    /// Joint fit of a spectrum series with shared phonon parameters.
    FitSpectra(Common),
    /// Two-stage fit of visibility traces.
    FitVisibility(Common),
    /// Fringe envelopes and visibility from raw interferograms.
    AnalyzeInterferogram(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input file or directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cavity detunings in meV, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    detunings: Option<Vec<f64>>,
    /// Dataset tag left out of the spectral fit; repeatable.
    #[arg(long = "exclude-dataset")]
    exclude_dataset: Vec<String>,
    /// LOW,HIGH in meV relative to the ZPL.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_window)]
    window: Option<(f64, f64)>,
    /// NAME=VALUE; repeatable.
    #[arg(long, value_parser = parse_lock)]
    lock: Vec<(String, f64)>,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LOW,HIGH")?;
    let low: f64 = a.trim().parse().map_err(|_| format!("bad LOW {a:?}"))?;
    let high: f64 = b.trim().parse().map_err(|_| format!("bad HIGH {b:?}"))?;
    if !(low < high) {
        return Err(format!("LOW must be below HIGH, got {low},{high}"));
    }
    Ok((low, high))
}

fn parse_lock(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let v: f64 = value.trim().parse().map_err(|_| format!("bad value {value:?}"))?;
    Ok((name.trim().to_string(), v))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (name, c) = match cli.command {
        Command::SimulateSpectrum(c) => ("simulate-spectrum", c),
        Command::SimulateCoherence(c) => ("simulate-coherence", c),
        Command::SweepDetuning(c) => ("sweep-detuning", c),
        Command::FitSpectra(c) => ("fit-spectra", c),
        Command::FitVisibility(c) => ("fit-visibility", c),
        Command::AnalyzeInterferogram(c) => ("analyze-interferogram", c),
    };
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let o = Overrides {
        seed: c.seed,
        detunings: c.detunings,
        exclude: c.exclude_dataset,
        window: c.window,
        locks: c.lock,
        out: c.out,
        data: c.data,
    };
    apply_overrides(name, &mut cfg, &o)?;
    let m = run(name, &cfg).with_context(|| format!("{name} failed"))?;
    println!("run {} wrote {} files to {}", m.run_id, m.outputs.len(), cfg.paths.out.display());
    let failed: Vec<_> = m.checks.iter().filter(|k| !k.passed).collect();
    for k in &failed {
        eprintln!("warning: {}: {}", k.name, k.detail);
    }
    if m.outputs.is_empty() {
        return Err(anyhow!("no outputs written"));
    }
    Ok(())
}
