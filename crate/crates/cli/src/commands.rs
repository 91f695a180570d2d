//! The subcommands, callable without the argument parser.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use sideband_core::coherence::{dominant_beat_period, temporal_coherence, visibility_of, SpectralWindow, VisibilityTrace};
use sideband_core::fitting::spectral::{fit_spectra_global, locate_zpl, SpectralFitSetup};
use sideband_core::fitting::visibility::{
    fit_visibility_long, fit_visibility_short, psb_visibility_area, AmplitudeLock, LongFitOptions, ShortFit, ShortFitOptions,
};
use sideband_core::interferometry::{extract_visibility, interferogram_from_coherence, ExtractOptions, ScanPlan};
use sideband_core::spectra::{
    apply_cavity_filter, detuning_tag, simulate_emission, split_zpl_psb, transform::RIPPLE_LIMIT, CavityParams, SplitOptions,
};
use sideband_core::{noise, FitResult, LmOptions, Spectrum};

use crate::config::{PhononConfig, RunConfig};
use crate::io::{
    collect_tables, interferogram_from_table, interferogram_table, spectrum_from_table, spectrum_table, visibility_from_table,
    visibility_table, Table,
};
use crate::manifest::{Manifest, Run};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub detunings: Option<Vec<f64>>,
    pub exclude: Vec<String>,
    /// meV relative to ω₀: the coherence window, or the fit range for `fit-spectra`.
    pub window: Option<(f64, f64)>,
    pub locks: Vec<(String, f64)>,
    pub out: Option<std::path::PathBuf>,
    pub data: Option<std::path::PathBuf>,
}

pub const COMMANDS: [&str; 6] =
    ["simulate-spectrum", "simulate-coherence", "sweep-detuning", "fit-spectra", "fit-visibility", "analyze-interferogram"];

/// Fold `o` into `cfg` for `command` and validate the result.
pub fn apply_overrides(command: &str, cfg: &mut RunConfig, o: &Overrides) -> Result<()> {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(d) = &o.detunings {
        cfg.sweep.detunings = d.clone();
    }
    if let Some(p) = &o.out {
        cfg.paths.out = p.clone();
    }
    if let Some(p) = &o.data {
        cfg.paths.data = Some(p.clone());
    }
    cfg.spectral_fit.exclude.extend(o.exclude.iter().cloned());
    if let Some((low, high)) = o.window {
        if command == "fit-spectra" {
            cfg.spectral_fit.window = (low, high);
        } else {
            cfg.coherence.window = SpectralWindow::Hard { low, high };
        }
    }
    for (name, value) in &o.locks {
        match (command, name.as_str()) {
            ("fit-visibility", "tau1") => cfg.visibility_fit.tau1 = Some(*value),
            ("fit-visibility", "amplitude") => cfg.visibility_fit.amplitude = AmplitudeLock::Fixed(*value),
            ("fit-visibility", _) => bail!("--lock {name}: fit-visibility can lock `tau1` or `amplitude`"),
            ("fit-spectra", _) => {
                cfg.spectral_fit.locks.insert(name.clone(), *value);
            }
            _ => bail!("--lock applies to fit-spectra and fit-visibility, not {command}"),
        }
    }
    cfg.validate()
}

pub fn run(command: &str, cfg: &RunConfig) -> Result<Manifest> {
    match command {
        "simulate-spectrum" => simulate_spectrum(cfg),
        "simulate-coherence" => simulate_coherence(cfg),
        "sweep-detuning" => sweep_detuning(cfg),
        "fit-spectra" => fit_spectra(cfg),
        "fit-visibility" => fit_visibility(cfg),
        "analyze-interferogram" => analyze_interferogram(cfg),
        other => bail!("unknown command {other:?}"),
    }
}

/// Bare emission and one filtered spectrum per detuning, noise applied.
fn simulate_series(cfg: &RunConfig) -> Result<(Spectrum, Vec<Spectrum>)> {
    let e = cfg.emitter();
    let mut bare = simulate_emission(&e, &cfg.phonon.params(), &cfg.grid.settings())?;
    bare.tag = "bare".into();
    let mut rng = noise::rng(cfg.seed);
    let mut out = Vec::new();
    for &d in &cfg.sweep.detunings {
        let c = CavityParams { omega_cav: e.omega0 + d, gamma_cav: cfg.cavity.gamma, a_cav: cfg.cavity.amplitude };
        let mut s = apply_cavity_filter(&bare, &c, cfg.cavity.background)?;
        s.detuning = Some(d);
        s.tag = detuning_tag(d);
        if cfg.noise.spectrum > 0.0 {
            noise::multiplicative(&mut s.intensity, cfg.noise.spectrum, &mut rng);
        }
        out.push(s);
    }
    Ok((bare, out))
}

fn require_data(cfg: &RunConfig, command: &str) -> Result<std::path::PathBuf> {
    cfg.paths.data.clone().ok_or_else(|| anyhow!("{command} needs input data: pass --data or set paths.data"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x:.4}"))
}

pub fn simulate_spectrum(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = Run::new("simulate-spectrum", cfg)?;
    let (bare, series) = simulate_series(cfg)?;
    let mut t = spectrum_table(&bare);
    t.meta.insert("kind".into(), "emission".into());
    run.table("emission_bare.tsv", t)?;
    for s in &series {
        run.table(&format!("spectrum_{}.tsv", s.tag), spectrum_table(s))?;
    }
    run.check(
        "ripple",
        bare.clipped_mass <= RIPPLE_LIMIT,
        format!("clipped fraction {:.3e}", bare.clipped_mass),
    );
    let p = cfg.phonon.params();
    if p.alpha_la == 0.0 && p.s_loc == 0.0 && cfg.emitter.gamma_inhom == 0.0 && cfg.emitter.gamma_hom > 0.0 {
        // a bare Lorentzian: FWHM = 2ħγ
        let want = 2.0 * sideband_core::units::HBAR_MEV_PS * cfg.emitter.gamma_hom;
        let got = bare.fwhm();
        let ok = got.is_some_and(|g| (g - want).abs() <= 0.01 * want + bare.grid.step);
        run.check("lorentzian_fwhm", ok, format!("measured {} meV, expected {want:.6} meV", fmt_opt(got)));
    }
    run.finish()
}

/// Spectra from `paths.data` when given, otherwise simulated.
fn coherence_inputs(cfg: &RunConfig) -> Result<Vec<(Spectrum, f64)>> {
    match &cfg.paths.data {
        Some(d) => collect_tables(d, "spectrum", &["energy_mev", "intensity"])?
            .iter()
            .map(|t| {
                let s = spectrum_from_table(t)?;
                let w0 = locate_zpl(&s.energies(), &s.intensity)
                    .ok_or_else(|| anyhow!("{}: no ZPL peak found", t.path.display()))?;
                Ok((s, w0))
            })
            .collect(),
        None => {
            let (bare, series) = simulate_series(cfg)?;
            let w0 = cfg.emitter.omega0;
            Ok(if series.is_empty() { vec![(bare, w0)] } else { series.into_iter().map(|s| (s, w0)).collect() })
        }
    }
}

fn scan_plan(cfg: &RunConfig) -> ScanPlan {
    let ig = &cfg.interferometry;
    let mut centers = ScanPlan::range(-ig.coarse_span, ig.coarse_span, ig.coarse_step);
    centers.extend(ScanPlan::range(-ig.fine_span, ig.fine_span, ig.fine_step));
    centers.sort_by(f64::total_cmp);
    centers.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    ScanPlan { centers, fringes_per_scan: ig.fringes_per_scan, points_per_fringe: ig.points_per_fringe }
}

pub fn simulate_coherence(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = Run::new("simulate-coherence", cfg)?;
    let opts = cfg.coherence.options();
    let mut rng = noise::rng(cfg.seed);
    let mut beats = Vec::new();
    for (s, w0) in coherence_inputs(cfg)? {
        let c = temporal_coherence(&s, w0, &opts).with_context(|| format!("coherence of {}", s.tag))?;
        let mut v = visibility_of(&c);
        let beat = dominant_beat_period(&v, cfg.coherence.beat_range.0, cfg.coherence.beat_range.1);
        beats.push(vec![s.detuning.unwrap_or(f64::NAN), beat.unwrap_or(f64::NAN)]);
        run.check(&format!("beat_period[{}]", s.tag), true, format!("{} ps", fmt_opt(beat)));
        if cfg.noise.visibility > 0.0 {
            noise::additive(&mut v.visibility, cfg.noise.visibility, &mut rng);
            v.sigma = Some(vec![cfg.noise.visibility; v.len()]);
        }
        run.table(&format!("visibility_{}.tsv", s.tag), visibility_table(&v, &s.tag, s.detuning))?;
        if cfg.interferometry.synthesize {
            let delays = scan_plan(cfg).delays(w0)?;
            let mut ig = interferogram_from_coherence(&c, w0, &delays, 1.0)?;
            if cfg.noise.interferogram > 0.0 {
                noise::additive(&mut ig.intensity, cfg.noise.interferogram, &mut rng);
            }
            run.table(&format!("interferogram_{}.tsv", s.tag), interferogram_table(&ig, &s.tag, w0, s.detuning))?;
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("units".into(), "detuning=meV period=ps".into());
    run.table("beats.tsv", Table::new(meta, vec!["detuning_mev".into(), "beat_period_ps".into()], beats))?;
    run.finish()
}

/// One row of the detuning sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub detuning: f64,
    pub zpl_area: f64,
    pub psb_area: f64,
    pub ratio: f64,
    pub ratio_sigma: f64,
    pub unreliable: bool,
    pub tau1: f64,
    pub slow_amplitude: f64,
    pub psb_visibility_area: f64,
    pub psb_visibility_clipped: f64,
    pub beat_period: Option<f64>,
}

pub const SWEEP_COLUMNS: [&str; 11] = [
    "detuning_mev",
    "zpl_area",
    "psb_area",
    "ratio",
    "ratio_sigma",
    "unreliable",
    "tau1_ps",
    "slow_amplitude",
    "psb_visibility_area_ps",
    "psb_visibility_clipped_ps",
    "beat_period_ps",
];

impl SweepRow {
    fn values(&self) -> Vec<f64> {
        vec![
            self.detuning,
            self.zpl_area,
            self.psb_area,
            self.ratio,
            self.ratio_sigma,
            if self.unreliable { 1.0 } else { 0.0 },
            self.tau1,
            self.slow_amplitude,
            self.psb_visibility_area,
            self.psb_visibility_clipped,
            self.beat_period.unwrap_or(f64::NAN),
        ]
    }

    pub fn from_values(v: &[f64]) -> Self {
        Self {
            detuning: v[0],
            zpl_area: v[1],
            psb_area: v[2],
            ratio: v[3],
            ratio_sigma: v[4],
            unreliable: v[5] != 0.0,
            tau1: v[6],
            slow_amplitude: v[7],
            psb_visibility_area: v[8],
            psb_visibility_clipped: v[9],
            beat_period: Some(v[10]).filter(|x| x.is_finite()),
        }
    }
}

/// Sideband weight, coherence and visibility area across the detuning series.
pub fn sweep_rows(cfg: &RunConfig) -> Result<Vec<(Spectrum, VisibilityTrace, SweepRow)>> {
    let (_, series) = simulate_series(cfg)?;
    let opts = cfg.coherence.options();
    let vf = &cfg.visibility_fit;
    let w0 = cfg.emitter.omega0;
    series
        .into_iter()
        .map(|s| {
            let ctx = || format!("detuning {}", s.tag);
            let split = split_zpl_psb(&s, &SplitOptions::default()).with_context(ctx)?;
            let v = visibility_of(&temporal_coherence(&s, w0, &opts).with_context(ctx)?);
            let long = fit_visibility_long(&v, &LongFitOptions { exclusion: vf.exclusion, amplitude: vf.amplitude }).with_context(ctx)?;
            let tau1 = vf.tau1.unwrap_or_else(|| long.value("tau1").unwrap_or(f64::NAN));
            let amp = long.value("amplitude").unwrap_or(f64::NAN);
            let area = psb_visibility_area(&v, amp, tau1, vf.short_window).with_context(ctx)?;
            let row = SweepRow {
                detuning: s.detuning.unwrap_or(f64::NAN),
                zpl_area: split.zpl_area,
                psb_area: split.psb_area,
                ratio: split.ratio,
                ratio_sigma: split.ratio_sigma,
                unreliable: split.unreliable,
                tau1,
                slow_amplitude: amp,
                psb_visibility_area: area.area,
                psb_visibility_clipped: area.clipped,
                beat_period: dominant_beat_period(&v, cfg.coherence.beat_range.0, cfg.coherence.beat_range.1),
            };
            Ok((s, v, row))
        })
        .collect()
}

pub fn sweep_detuning(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = Run::new("sweep-detuning", cfg)?;
    let rows = sweep_rows(cfg)?;
    for (s, v, _) in &rows {
        run.table(&format!("spectrum_{}.tsv", s.tag), spectrum_table(s))?;
        run.table(&format!("visibility_{}.tsv", s.tag), visibility_table(v, &s.tag, s.detuning))?;
    }
    let mut meta = BTreeMap::new();
    meta.insert("units".into(), "detuning=meV areas=arb tau1=ps visibility_area=ps period=ps".into());
    let table = Table::new(meta, SWEEP_COLUMNS.iter().map(|c| c.to_string()).collect(), rows.iter().map(|r| r.2.values()).collect());
    run.table("sweep_summary.tsv", table)?;
    for (s, _, r) in &rows {
        if r.unreliable {
            run.check(&format!("split[{}]", s.tag), false, "sideband area below three standard deviations");
        }
        if r.psb_visibility_clipped > 0.05 * r.psb_visibility_area {
            run.check(&format!("psb_area[{}]", s.tag), false, "clipped parts exceed 5% of the area");
        }
    }
    run.finish()
}

#[derive(Debug, Serialize)]
struct SpectralReport<'a> {
    fit: &'a FitResult,
    excluded: &'a [String],
    /// Fitted bath with frequencies as energies.
    phonon_mev: PhononConfig,
}

pub fn fit_spectra(cfg: &RunConfig) -> Result<Manifest> {
    let data = require_data(cfg, "fit-spectra")?;
    let tables = collect_tables(&data, "spectrum", &["energy_mev", "intensity"])?;
    let series: Vec<Spectrum> = tables.iter().map(spectrum_from_table).collect::<Result<_>>()?;
    if series.len() < 2 {
        bail!("fit-spectra needs at least two spectra, found {} in {}", series.len(), data.display());
    }
    let mut run = Run::new("fit-spectra", cfg)?;
    let sf = &cfg.spectral_fit;
    let mut setup = SpectralFitSetup::new(cfg.phonon.params(), cfg.emitter.gamma_inhom, cfg.emitter.gamma_hom);
    setup.gamma_cav = cfg.cavity.gamma;
    setup.locks = sf.locks.clone();
    setup.unlock_gamma_hom = sf.unlock_gamma_hom;
    setup.exclude = sf.exclude.clone();
    setup.settings = cfg.grid.settings();
    setup.window = sf.window;
    let res = fit_spectra_global(&series, &setup, &LmOptions::default())?;
    run.json(
        "fit_result.json",
        &SpectralReport { fit: &res.fit, excluded: &res.excluded, phonon_mev: PhononConfig::from_params(&res.phonon()) },
    )?;
    for o in &res.overlays {
        let rows = (0..o.energy.len()).map(|i| vec![o.energy[i], o.data[i], o.model[i], o.data[i] - o.model[i]]).collect();
        let mut meta = BTreeMap::new();
        meta.insert("tag".into(), o.tag.clone());
        meta.insert("units".into(), "energy=meV intensity=arb".into());
        let cols = ["energy_mev", "data", "model", "residual"].map(String::from).to_vec();
        run.table(&format!("overlay_{}.tsv", o.tag), Table::new(meta, cols, rows))?;
    }
    run.check("converged", res.fit.converged, res.fit.termination.clone());
    for tag in &res.excluded {
        run.check(&format!("excluded[{tag}]"), true, "reported, not fitted");
    }
    run.finish()
}

#[derive(Debug, Serialize)]
struct StageOne {
    traces: Vec<(String, FitResult)>,
    tau1_mean: f64,
    tau1_std: f64,
    tau1_used: f64,
}

pub fn fit_visibility(cfg: &RunConfig) -> Result<Manifest> {
    let data = require_data(cfg, "fit-visibility")?;
    let tables = collect_tables(&data, "visibility", &["time_ps", "visibility"])?;
    let mut run = Run::new("fit-visibility", cfg)?;
    let vf = &cfg.visibility_fit;
    let traces: Vec<(Table, VisibilityTrace)> =
        tables.into_iter().map(|t| visibility_from_table(&t).map(|v| (t, v))).collect::<Result<_>>()?;

    let mut stage1 = Vec::new();
    if vf.tau1.is_none() {
        for (t, v) in &traces {
            let fit = fit_visibility_long(v, &LongFitOptions { exclusion: vf.exclusion, amplitude: vf.amplitude })
                .with_context(|| format!("stage one on {}", t.path.display()))?;
            stage1.push((t.tag(), fit));
        }
    }
    let taus: Vec<f64> = stage1.iter().filter_map(|(_, f)| f.value("tau1")).collect();
    let n = taus.len() as f64;
    let mean = taus.iter().sum::<f64>() / n;
    let std = (taus.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let (tau1, source) = match vf.tau1 {
        Some(t) => (t, "user lock".to_string()),
        None => (mean, format!("stage-one average over {} traces", taus.len())),
    };
    run.json("stage1.json", &StageOne { traces: stage1.clone(), tau1_mean: mean, tau1_std: std, tau1_used: tau1 })?;

    let mut areas = Vec::new();
    for (k, (t, v)) in traces.iter().enumerate() {
        let tag = t.tag();
        let amp = match (vf.amplitude, stage1.get(k)) {
            (AmplitudeLock::Fixed(a), _) => a,
            (_, Some((_, f))) => f.value("amplitude").unwrap_or(f64::NAN),
            (AmplitudeLock::MaxObserved, None) => v.visibility.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            (AmplitudeLock::Free, None) => bail!("a free amplitude needs stage one; lock tau1 only with a fixed amplitude"),
        };
        let opts = ShortFitOptions {
            window: vf.short_window,
            slow_amplitude: amp,
            max_delta_omega: vf.max_delta_omega,
            tau1_source: source.clone(),
        };
        let short: ShortFit = fit_visibility_short(v, tau1, &opts).with_context(|| format!("stage two on {}", t.path.display()))?;
        run.json(&format!("stage2_{tag}.json"), &short)?;
        let area = psb_visibility_area(v, amp, tau1, vf.short_window)?;
        run.table(&format!("fragment_{tag}.tsv"), visibility_table(&area.fragment, &tag, t.meta_f64("detuning_mev")?))?;
        areas.push(vec![t.meta_f64("detuning_mev")?.unwrap_or(f64::NAN), area.area, area.clipped, f64::from(u8::from(area.warning))]);
        if short.degenerate {
            run.check(&format!("fast_component[{tag}]"), false, "A2 and tau2 are not separately resolved");
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("units".into(), "detuning=meV area=ps".into());
    meta.insert("tau1_ps".into(), format!("{tau1}"));
    let cols = ["detuning_mev", "area_ps", "clipped_ps", "warning"].map(String::from).to_vec();
    run.table("psb_area.tsv", Table::new(meta, cols, areas))?;
    if taus.len() > 1 {
        run.check("tau1_spread", std < 0.1 * mean, format!("{mean:.3} ± {std:.3} ps"));
    }
    run.finish()
}

pub fn analyze_interferogram(cfg: &RunConfig) -> Result<Manifest> {
    let data = require_data(cfg, "analyze-interferogram")?;
    let tables = collect_tables(&data, "interferogram", &["delay_ps", "intensity"])?;
    let mut run = Run::new("analyze-interferogram", cfg)?;
    let opts = ExtractOptions { window_fringes: cfg.interferometry.window_fringes, min_points_per_fringe: 4.0 };
    for t in &tables {
        let ig = interferogram_from_table(t)?;
        let w0 = t.meta_f64("omega0_mev")?.unwrap_or(cfg.emitter.omega0);
        let v = extract_visibility(&ig, w0, &opts).with_context(|| format!("extracting {}", t.path.display()))?;
        let tag = t.tag();
        run.check(&format!("windows[{tag}]"), true, format!("{} envelope windows", v.len()));
        run.table(&format!("visibility_{tag}.tsv"), visibility_table(&v, &tag, t.meta_f64("detuning_mev")?))?;
    }
    run.finish()
}

/// Read the summary written by `sweep-detuning`.
pub fn read_sweep_summary(dir: &Path) -> Result<Vec<SweepRow>> {
    let t = Table::read(&dir.join("sweep_summary.tsv"))?;
    let cols: Vec<Vec<f64>> = SWEEP_COLUMNS.iter().map(|c| t.column(c)).collect::<Result<_>>()?;
    Ok((0..t.rows.len()).map(|i| SweepRow::from_values(&cols.iter().map(|c| c[i]).collect::<Vec<_>>())).collect())
}
