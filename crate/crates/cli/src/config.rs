//! Run configuration loaded from TOML.
//!
//! Every block has defaults matching the built-in reference preset, so an
//! empty file (or no file) is a valid configuration. Energies are in meV,
//! times in ps, rates in ps⁻¹.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sideband_core::coherence::{CoherenceOptions, SpectralWindow};
use sideband_core::fitting::visibility::AmplitudeLock;
use sideband_core::presets;
use sideband_core::spectra::SimulationSettings;
use sideband_core::units::{angular_to_mev, mev_to_angular};
use sideband_core::{EmitterParams, Error, PhononParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for all synthetic noise.
    pub seed: u64,
    pub emitter: EmitterConfig,
    pub phonon: PhononConfig,
    pub cavity: CavityConfig,
    pub grid: GridConfig,
    pub sweep: SweepConfig,
    pub coherence: CoherenceConfig,
    pub noise: NoiseConfig,
    pub spectral_fit: SpectralFitConfig,
    pub visibility_fit: VisibilityFitConfig,
    pub interferometry: InterferometryConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            emitter: EmitterConfig::default(),
            phonon: PhononConfig::default(),
            cavity: CavityConfig::default(),
            grid: GridConfig::default(),
            sweep: SweepConfig::default(),
            coherence: CoherenceConfig::default(),
            noise: NoiseConfig::default(),
            spectral_fit: SpectralFitConfig::default(),
            visibility_fit: VisibilityFitConfig::default(),
            interferometry: InterferometryConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitterConfig {
    /// ZPL energy, meV.
    pub omega0: f64,
    /// Gaussian broadening Γ in exp(−Γ²t²), ps⁻¹.
    pub gamma_inhom: f64,
    /// Exponential dephasing rate, ps⁻¹.
    pub gamma_hom: f64,
}

impl Default for EmitterConfig {
    fn default() -> Self {
        let e = presets::reference().emitter;
        Self { omega0: e.omega0, gamma_inhom: e.gamma_inhom, gamma_hom: e.gamma_hom }
    }
}

/// Phonon bath with frequencies given as energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhononConfig {
    /// LA coupling, ps².
    pub alpha_la: f64,
    /// LA cutoff, meV.
    pub omega_c: f64,
    pub s_loc: f64,
    /// Localized-mode center and width, meV.
    pub omega_loc: f64,
    pub sigma_loc: f64,
    /// K.
    pub temperature: f64,
}

impl Default for PhononConfig {
    fn default() -> Self {
        Self::from_params(&presets::reference().phonon)
    }
}

impl PhononConfig {
    pub fn from_params(p: &PhononParams) -> Self {
        Self {
            alpha_la: p.alpha_la,
            omega_c: angular_to_mev(p.omega_c),
            s_loc: p.s_loc,
            omega_loc: angular_to_mev(p.omega_loc),
            sigma_loc: angular_to_mev(p.sigma_loc),
            temperature: p.temperature,
        }
    }

    pub fn params(&self) -> PhononParams {
        PhononParams {
            alpha_la: self.alpha_la,
            omega_c: mev_to_angular(self.omega_c),
            s_loc: self.s_loc,
            omega_loc: mev_to_angular(self.omega_loc),
            sigma_loc: mev_to_angular(self.sigma_loc),
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavityConfig {
    /// HWHM, meV.
    pub gamma: f64,
    pub amplitude: f64,
    /// Flat background added after filtering.
    pub background: f64,
}

impl Default for CavityConfig {
    fn default() -> Self {
        let c = presets::reference().cavity;
        Self { gamma: c.gamma_cav, amplitude: c.a_cav, background: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Half width of the energy grid around ω₀, meV.
    pub half_span: f64,
    pub points: usize,
    /// Susceptibility time span, ps.
    pub t_max: f64,
    pub nyquist_margin: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let s = SimulationSettings::default();
        Self { half_span: s.half_span_mev, points: s.points, t_max: s.t_max_ps, nyquist_margin: s.nyquist_margin }
    }
}

impl GridConfig {
    pub fn settings(&self) -> SimulationSettings {
        SimulationSettings {
            half_span_mev: self.half_span,
            points: self.points,
            t_max_ps: self.t_max,
            nyquist_margin: self.nyquist_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Cavity detunings δ = E_cav − ω₀, meV.
    pub detunings: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { detunings: presets::REFERENCE_DETUNINGS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceConfig {
    pub window: SpectralWindow,
    pub t_max: f64,
    pub dt: f64,
    pub subtract_background: bool,
    /// Delay range searched for the beat period, ps.
    pub beat_range: (f64, f64),
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        let o = CoherenceOptions::default();
        Self { window: o.window, t_max: o.t_max, dt: o.dt, subtract_background: o.subtract_background, beat_range: (0.2, 4.0) }
    }
}

impl CoherenceConfig {
    pub fn options(&self) -> CoherenceOptions {
        CoherenceOptions { window: self.window, t_max: self.t_max, dt: self.dt, subtract_background: self.subtract_background }
    }
}

/// Synthetic noise levels; zero disables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Relative (multiplicative) noise on simulated spectra.
    pub spectrum: f64,
    /// Absolute noise on simulated visibility traces.
    pub visibility: f64,
    /// Absolute noise on synthetic interferograms, in units of I₀.
    pub interferogram: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralFitConfig {
    /// Fit range relative to each ZPL, meV.
    pub window: (f64, f64),
    pub exclude: Vec<String>,
    pub locks: BTreeMap<String, f64>,
    pub unlock_gamma_hom: bool,
}

impl Default for SpectralFitConfig {
    fn default() -> Self {
        Self { window: (-15.0, 8.0), exclude: Vec::new(), locks: BTreeMap::new(), unlock_gamma_hom: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilityFitConfig {
    /// Stage one ignores |t| ≤ exclusion, ps.
    pub exclusion: f64,
    pub amplitude: AmplitudeLock,
    /// Fixed τ₁ instead of the stage-one average, ps.
    pub tau1: Option<f64>,
    /// Stage two fits |t| ≤ short_window, ps.
    pub short_window: f64,
    pub max_delta_omega: f64,
}

impl Default for VisibilityFitConfig {
    fn default() -> Self {
        Self { exclusion: 10.0, amplitude: AmplitudeLock::Fixed(0.8), tau1: None, short_window: 3.2, max_delta_omega: 20.0 }
    }
}

/// Scan layout for synthetic interferograms and their analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferometryConfig {
    /// Write a synthetic interferogram next to each simulated coherence trace.
    pub synthesize: bool,
    pub coarse_span: f64,
    pub coarse_step: f64,
    pub fine_span: f64,
    pub fine_step: f64,
    pub fringes_per_scan: f64,
    pub points_per_fringe: usize,
    /// Fringes per envelope window during extraction.
    pub window_fringes: f64,
}

impl Default for InterferometryConfig {
    fn default() -> Self {
        Self {
            synthesize: false,
            coarse_span: 37.5,
            coarse_step: 2.5,
            fine_span: 3.2,
            fine_step: 0.05,
            fringes_per_scan: 20.0,
            points_per_fringe: 8,
            window_fringes: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out: PathBuf,
    /// Input file or directory for the fitting and analysis commands.
    pub data: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out: PathBuf::from("out"), data: None }
    }
}

impl RunConfig {
    /// Parse a TOML file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.paths.out.is_relative() {
            cfg.paths.out = base.join(&cfg.paths.out);
        }
        if let Some(d) = cfg.paths.data.as_mut() {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        Ok(cfg)
    }

    /// Parse without validating; toml errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn emitter(&self) -> EmitterParams {
        EmitterParams { omega0: self.emitter.omega0, gamma_inhom: self.emitter.gamma_inhom, gamma_hom: self.emitter.gamma_hom }
    }

    /// Check every block, reporting the offending field by its dotted path.
    pub fn validate(&self) -> Result<()> {
        at("emitter", self.emitter().validate())?;
        at("phonon", self.phonon.params().validate())?;
        let c = &self.cavity;
        ensure(c.gamma > 0.0 && c.gamma.is_finite(), "cavity.gamma", "must be > 0")?;
        ensure(c.amplitude >= 0.0 && c.amplitude.is_finite(), "cavity.amplitude", "must be >= 0")?;
        ensure(c.background.is_finite(), "cavity.background", "must be finite")?;
        ensure(self.grid.points >= 16, "grid.points", "must be >= 16")?;
        at("grid", self.grid.settings().time_grid().map(|_| ()))?;
        at("grid", self.grid.settings().energy_grid(self.emitter.omega0).map(|_| ()))?;
        for (i, d) in self.sweep.detunings.iter().enumerate() {
            ensure(d.is_finite(), &format!("sweep.detunings[{i}]"), "must be finite")?;
        }
        let co = &self.coherence;
        ensure(co.t_max > 0.0, "coherence.t_max", "must be > 0")?;
        ensure(co.dt > 0.0 && co.dt < co.t_max, "coherence.dt", "must be in (0, t_max)")?;
        ensure(co.beat_range.0 < co.beat_range.1, "coherence.beat_range", "needs low < high")?;
        if let SpectralWindow::Hard { low, high } = co.window {
            ensure(low < high, "coherence.window", "needs low < high")?;
        }
        if let SpectralWindow::Bandpass { fwhm, .. } = co.window {
            ensure(fwhm > 0.0, "coherence.window.fwhm", "must be > 0")?;
        }
        let n = &self.noise;
        for (name, v) in [("noise.spectrum", n.spectrum), ("noise.visibility", n.visibility), ("noise.interferogram", n.interferogram)] {
            ensure(v >= 0.0 && v.is_finite(), name, "must be >= 0")?;
        }
        let sf = &self.spectral_fit;
        ensure(sf.window.0 < 0.0 && sf.window.1 > 0.0, "spectral_fit.window", "must bracket the ZPL (low < 0 < high)")?;
        let vf = &self.visibility_fit;
        ensure(vf.exclusion >= 0.0, "visibility_fit.exclusion", "must be >= 0")?;
        ensure(vf.short_window > 0.0, "visibility_fit.short_window", "must be > 0")?;
        ensure(vf.max_delta_omega > 0.0, "visibility_fit.max_delta_omega", "must be > 0")?;
        if let Some(t) = vf.tau1 {
            ensure(t > 0.0, "visibility_fit.tau1", "must be > 0")?;
        }
        if let AmplitudeLock::Fixed(a) = vf.amplitude {
            ensure(a > 0.0 && a.is_finite(), "visibility_fit.amplitude", "must be > 0")?;
        }
        let ig = &self.interferometry;
        ensure(ig.coarse_step > 0.0 && ig.fine_step > 0.0, "interferometry", "scan steps must be > 0")?;
        ensure(ig.fringes_per_scan >= ig.window_fringes, "interferometry.fringes_per_scan", "must be >= window_fringes")?;
        ensure(ig.points_per_fringe >= 4, "interferometry.points_per_fringe", "must be >= 4")?;
        if let Some(d) = &self.paths.data {
            ensure(d.exists(), "paths.data", &format!("{} does not exist", d.display()))?;
        }
        Ok(())
    }

    /// The configuration with input and output locations cleared. Runs that
    /// differ only in where they read or write hash identically.
    pub fn portable(&self) -> Self {
        Self { paths: PathsConfig { out: PathBuf::new(), data: None }, ..self.clone() }
    }

    /// SHA-256 of the canonical JSON form of [`RunConfig::portable`].
    pub fn hash(&self) -> String {
        crate::io::sha256_hex(serde_json::to_string(&self.portable()).expect("config serializes").as_bytes())
    }
}

fn ensure(ok: bool, field: &str, reason: &str) -> Result<()> {
    if !ok {
        bail!("invalid config field `{field}`: {reason}");
    }
    Ok(())
}

fn at(block: &str, r: sideband_core::Result<()>) -> Result<()> {
    match r {
        Ok(()) => Ok(()),
        Err(Error::InvalidParameter { name, reason }) => bail!("invalid config field `{block}.{name}`: {reason}"),
        Err(e) => bail!("invalid config block `{block}`: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn phonon_block_round_trips_through_energies() {
        let p = presets::reference().phonon;
        let back = PhononConfig::from_params(&p).params();
        assert!((back.omega_c - p.omega_c).abs() < 1e-12 * p.omega_c);
    }

    #[test]
    fn parse_error_reports_line() {
        let err = RunConfig::from_toml("seed = 1\n[phonon]\ntemperature = \"warm\"\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = RunConfig::from_toml("[cavity]\ngama = 1.0\n").unwrap_err();
        assert!(format!("{err:#}").contains("gama"));
    }

    #[test]
    fn validation_names_the_field() {
        let c = RunConfig::from_toml("[phonon]\nsigma_loc = -0.1\n").unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("phonon.sigma_loc"), "{msg}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.paths.out = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
