//! Absorption and emission spectra, cavity filtering and detuning sweeps.

mod split;
pub mod transform;

pub use split::{split_zpl_psb, SplitOptions, ZplPsbSplit};
pub use transform::{absorption_relative, fourier_transform, RelativeSpectrum};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::phonon::{susceptibility_with, EmitterParams, PhononParams, TimeGrid};
use crate::quadrature::AdaptiveOptions;
use crate::units::HBAR_MEV_PS;

/// Uniform, ascending photon-energy grid in meV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl EnergyGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !start.is_finite() || !(step > 0.0 && step.is_finite()) || len < 2 {
            return Err(Error::Config(format!(
                "energy grid needs finite start, step > 0 and >= 2 points (start={start}, step={step}, len={len})"
            )));
        }
        Ok(Self { start, step, len })
    }

    /// `len` points spanning [center − half_span, center + half_span].
    pub fn centered(center: f64, half_span: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Config("energy grid needs at least 2 points".into()));
        }
        Self::new(center - half_span, 2.0 * half_span / (len - 1) as f64, len)
    }

    pub fn at(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn end(&self) -> f64 {
        self.at(self.len - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.at(i)).collect()
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.start && e <= self.end()
    }
}

/// Intensity sampled on an energy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub grid: EnergyGrid,
    pub intensity: Vec<f64>,
    /// Flat background already contained in `intensity`.
    pub background: f64,
    /// Cavity detuning ω_cav − ω₀ in meV, when filtered.
    pub detuning: Option<f64>,
    pub tag: String,
    /// Negative ripple removed when the spectrum was produced.
    #[serde(default)]
    pub clipped_mass: f64,
}

impl Spectrum {
    pub fn energies(&self) -> Vec<f64> {
        self.grid.points()
    }

    /// Trapezoid area above the stored background.
    pub fn area(&self) -> f64 {
        trapezoid(self.grid.step, self.intensity.iter().map(|v| v - self.background))
    }

    pub fn peak(&self) -> (f64, f64) {
        let (i, v) = self
            .intensity
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        (self.grid.at(i), v)
    }

    /// Linear-interpolation full width at half maximum of the highest peak.
    pub fn fwhm(&self) -> Option<f64> {
        let (e, pk) = self.peak();
        let i0 = ((e - self.grid.start) / self.grid.step).round() as usize;
        let half = 0.5 * (pk + self.background);
        let y = &self.intensity;
        let mut l = i0;
        while l > 0 && y[l] > half {
            l -= 1;
        }
        let mut r = i0;
        while r + 1 < y.len() && y[r] > half {
            r += 1;
        }
        if y[l] > half || y[r] > half {
            return None;
        }
        let el = self.grid.at(l) + self.grid.step * (half - y[l]) / (y[l + 1] - y[l]);
        let er = self.grid.at(r - 1) + self.grid.step * (y[r - 1] - half) / (y[r - 1] - y[r]);
        Some(er - el)
    }

    /// Intensity at `e` by cubic interpolation, zero off the grid.
    pub fn sample(&self, e: f64) -> f64 {
        transform::interp_cubic(self.grid.start, self.grid.step, &self.intensity, e)
    }
}

pub(crate) fn trapezoid(step: f64, values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    let mut first = None;
    let mut last = 0.0;
    for v in values {
        if first.is_none() {
            first = Some(v);
        }
        acc += v;
        last = v;
    }
    match first {
        Some(f) => step * (acc - 0.5 * (f + last)),
        None => 0.0,
    }
}

/// Lorentzian cavity transmission parameters (meV).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    /// Cavity resonance.
    pub omega_cav: f64,
    /// Half width at half maximum.
    pub gamma_cav: f64,
    /// Amplitude; the peak transmission is a_cav/gamma_cav.
    pub a_cav: f64,
}

impl CavityParams {
    pub fn validate(&self) -> Result<()> {
        if !self.omega_cav.is_finite() {
            return Err(invalid("omega_cav", "must be finite"));
        }
        if !(self.gamma_cav > 0.0 && self.gamma_cav.is_finite()) {
            return Err(invalid("gamma_cav", "must be > 0"));
        }
        if !(self.a_cav >= 0.0 && self.a_cav.is_finite()) {
            return Err(invalid("a_cav", "must be >= 0"));
        }
        Ok(())
    }

    /// (a/γ) / (1 + (E − ω_cav)²/γ²)
    pub fn transmission(&self, e: f64) -> f64 {
        let x = (e - self.omega_cav) / self.gamma_cav;
        self.a_cav / self.gamma_cav / (1.0 + x * x)
    }
}

/// Grid sizes shared by the spectrum simulators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    /// Half width of the energy window around ω₀, meV.
    pub half_span_mev: f64,
    /// Points on the energy grid.
    pub points: usize,
    /// Length of the susceptibility time grid, ps.
    pub t_max_ps: f64,
    /// Ratio of the Nyquist band to the energy half span.
    pub nyquist_margin: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self { half_span_mev: 20.0, points: 1 << 14, t_max_ps: 120.0, nyquist_margin: 1.5 }
    }
}

impl SimulationSettings {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        if !(self.nyquist_margin >= 1.0) {
            return Err(Error::Config(format!("nyquist_margin must be >= 1, got {}", self.nyquist_margin)));
        }
        if !(self.half_span_mev > 0.0) || !(self.t_max_ps > 0.0) {
            return Err(Error::Config("half_span_mev and t_max_ps must be > 0".into()));
        }
        let dt = std::f64::consts::PI * HBAR_MEV_PS / (self.nyquist_margin * self.half_span_mev);
        TimeGrid::spanning(self.t_max_ps, dt)
    }

    pub fn energy_grid(&self, center: f64) -> Result<EnergyGrid> {
        EnergyGrid::centered(center, self.half_span_mev, self.points)
    }
}

/// α(E) on `grid`, with the ZPL at `chi.omega0`.
pub fn absorption_spectrum(chi: &crate::phonon::SusceptibilityTrace, grid: &EnergyGrid) -> Result<Spectrum> {
    let half = (grid.start - chi.omega0).abs().max((grid.end() - chi.omega0).abs());
    let rel = absorption_relative(chi, grid.step, half)?;
    let mut intensity: Vec<f64> = (0..grid.len).map(|i| rel.eval(grid.at(i) - chi.omega0)).collect();
    let (clipped, _) = transform::clip_negative(&mut intensity, grid.step);
    Ok(Spectrum {
        grid: *grid,
        intensity,
        background: 0.0,
        detuning: None,
        tag: "absorption".into(),
        clipped_mass: rel.clipped_mass + clipped,
    })
}

/// Emission I(E) = α(2ω₀ − E).
///
/// Without `target` the result lives on the mirrored grid and the values are
/// the absorption samples reversed. With `target`, every requested energy
/// must mirror into the absorption grid.
pub fn emission_spectrum(absorption: &Spectrum, omega0: f64, target: Option<&EnergyGrid>) -> Result<Spectrum> {
    let g = &absorption.grid;
    let (grid, intensity) = match target {
        None => {
            let grid = EnergyGrid { start: 2.0 * omega0 - g.end(), step: g.step, len: g.len };
            (grid, absorption.intensity.iter().rev().copied().collect())
        }
        Some(t) => {
            let lo = 2.0 * omega0 - t.end();
            let hi = 2.0 * omega0 - t.start;
            let tol = 1e-9 * g.step;
            if lo < g.start - tol || hi > g.end() + tol {
                return Err(Error::Domain(format!(
                    "mirrored target [{lo:.6}, {hi:.6}] meV leaves the absorption grid [{:.6}, {:.6}] meV",
                    g.start,
                    g.end()
                )));
            }
            let v = (0..t.len)
                .map(|i| {
                    let m = (2.0 * omega0 - t.at(i)).clamp(g.start, g.end());
                    absorption.sample(m).max(0.0)
                })
                .collect();
            (*t, v)
        }
    };
    Ok(Spectrum {
        grid,
        intensity,
        background: absorption.background,
        detuning: None,
        tag: "emission".into(),
        clipped_mass: absorption.clipped_mass,
    })
}

/// Bare emission on the grid of `settings`, centered at ω₀.
pub fn simulate_emission(e: &EmitterParams, p: &PhononParams, settings: &SimulationSettings) -> Result<Spectrum> {
    let tg = settings.time_grid()?;
    let chi = susceptibility_with(&tg, e, p, &AdaptiveOptions::default())?;
    let alpha = absorption_spectrum(&chi, &settings.energy_grid(e.omega0)?)?;
    emission_spectrum(&alpha, e.omega0, None)
}

/// I(E)·T_cav(E) + I_BG
pub fn apply_cavity_filter(s: &Spectrum, c: &CavityParams, background: f64) -> Result<Spectrum> {
    c.validate()?;
    if !background.is_finite() {
        return Err(invalid("background", "must be finite"));
    }
    let intensity = s
        .intensity
        .iter()
        .enumerate()
        .map(|(i, v)| (v - s.background) * c.transmission(s.grid.at(i)) + background)
        .collect();
    Ok(Spectrum { intensity, background, tag: "filtered".into(), ..s.clone() })
}

pub fn detuning_tag(detuning: f64) -> String {
    format!("delta{:+.2}meV", detuning)
}

/// One filtered spectrum per detuning; the bare emission is computed once.
pub fn sweep_detuning(
    e: &EmitterParams,
    p: &PhononParams,
    cavity: &CavityParams,
    background: f64,
    detunings: &[f64],
    settings: &SimulationSettings,
) -> Result<Vec<Spectrum>> {
    let bare = simulate_emission(e, p, settings)?;
    detunings
        .iter()
        .map(|&d| {
            let c = CavityParams { omega_cav: e.omega0 + d, ..*cavity };
            let mut s = apply_cavity_filter(&bare, &c, background)?;
            s.detuning = Some(d);
            s.tag = detuning_tag(d);
            Ok(s)
        })
        .collect()
}

/// Emission lineshape as a function of E − ω₀, for repeated model evaluation.
#[derive(Debug, Clone)]
pub struct EmissionLineshape {
    rel: RelativeSpectrum,
}

impl EmissionLineshape {
    /// `step_mev` is the finest energy spacing the lineshape will be sampled at.
    pub fn compute(
        gamma_inhom: f64,
        gamma_hom: f64,
        p: &PhononParams,
        settings: &SimulationSettings,
        step_mev: f64,
    ) -> Result<Self> {
        let e = EmitterParams { omega0: 1.0, gamma_inhom, gamma_hom };
        let chi = susceptibility_with(&settings.time_grid()?, &e, p, &AdaptiveOptions::default())?;
        let rel = absorption_relative(&chi, step_mev, settings.half_span_mev)?;
        Ok(Self { rel })
    }

    /// Intensity at E − ω₀ = `x` meV.
    pub fn eval(&self, x: f64) -> f64 {
        self.rel.eval(-x)
    }

    /// Offsets inside which the lineshape is defined.
    pub fn support(&self) -> (f64, f64) {
        (-self.rel.last(), -self.rel.first)
    }

    pub fn clipped_mass(&self) -> f64 {
        self.rel.clipped_mass
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn small_settings() -> SimulationSettings {
        SimulationSettings { half_span_mev: 15.0, points: 3001, t_max_ps: 120.0, nyquist_margin: 1.5 }
    }

    #[test]
    fn grid_validation() {
        assert!(EnergyGrid::new(0.0, 0.0, 10).is_err());
        assert!(EnergyGrid::new(0.0, 0.1, 1).is_err());
        let g = EnergyGrid::centered(10.0, 2.0, 5).unwrap();
        assert_eq!(g.points(), vec![8.0, 9.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    fn bare_line_has_homogeneous_width() {
        let pre = presets::reference();
        let p = pre.phonon.decoupled();
        let s = simulate_emission(&pre.emitter, &p, &small_settings()).unwrap();
        let expected = presets::zpl_fwhm_mev(pre.emitter.gamma_hom);
        let w = s.fwhm().unwrap();
        assert!((w - expected).abs() < 2e-3 * expected + 0.5 * s.grid.step, "{w} vs {expected}");
    }

    #[test]
    fn emission_area_is_pi_hbar() {
        let pre = presets::reference();
        let s = simulate_emission(&pre.emitter, &pre.phonon, &small_settings()).unwrap();
        let target = std::f64::consts::PI * HBAR_MEV_PS;
        // ZPL and sideband tails beyond ±15 meV carry a few 1e-3 of the area
        assert!((s.area() - target).abs() < 1e-2 * target, "{} vs {target}", s.area());
        assert!(s.intensity.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn sideband_sits_on_the_red_side() {
        let pre = presets::reference();
        let s = simulate_emission(&pre.emitter, &pre.phonon, &small_settings()).unwrap();
        let side = |lo: f64, hi: f64| -> f64 {
            s.energies().iter().zip(&s.intensity).filter(|(e, _)| **e >= lo && **e <= hi).map(|(_, v)| v).sum()
        };
        let w0 = pre.emitter.omega0;
        assert!(side(w0 - 6.0, w0 - 1.0) > 3.0 * side(w0 + 1.0, w0 + 6.0));
    }

    #[test]
    fn mirror_is_exact_reversal() {
        let pre = presets::reference();
        let tg = small_settings().time_grid().unwrap();
        let chi = crate::phonon::susceptibility(&tg, &pre.emitter, &pre.phonon).unwrap();
        let a = absorption_spectrum(&chi, &small_settings().energy_grid(pre.emitter.omega0).unwrap()).unwrap();
        let em = emission_spectrum(&a, pre.emitter.omega0, None).unwrap();
        let back = emission_spectrum(&em, pre.emitter.omega0, None).unwrap();
        assert_eq!(back.intensity, a.intensity);
        for i in 0..a.grid.len {
            assert_eq!(em.intensity[i], a.intensity[a.grid.len - 1 - i]);
        }
    }

    #[test]
    fn mirror_outside_grid_is_domain_error() {
        let g = EnergyGrid::new(0.0, 0.1, 11).unwrap();
        let s = Spectrum { grid: g, intensity: vec![1.0; 11], background: 0.0, detuning: None, tag: String::new(), clipped_mass: 0.0 };
        let t = EnergyGrid::new(-0.5, 0.1, 11).unwrap();
        assert!(matches!(emission_spectrum(&s, 0.5, Some(&t)), Err(Error::Domain(_))));
        let ok = EnergyGrid::new(0.2, 0.1, 5).unwrap();
        assert!(emission_spectrum(&s, 0.5, Some(&ok)).is_ok());
    }

    #[test]
    fn filter_rejects_bad_cavity() {
        let g = EnergyGrid::new(0.0, 0.1, 11).unwrap();
        let s = Spectrum { grid: g, intensity: vec![1.0; 11], background: 0.0, detuning: None, tag: String::new(), clipped_mass: 0.0 };
        let c = CavityParams { omega_cav: 0.5, gamma_cav: 0.0, a_cav: 1.0 };
        assert!(matches!(apply_cavity_filter(&s, &c, 0.0), Err(Error::InvalidParameter { name: "gamma_cav", .. })));
    }

    #[test]
    fn sweep_tags_every_detuning() {
        let pre = presets::reference();
        let out = sweep_detuning(&pre.emitter, &pre.phonon, &pre.cavity, 0.0, &presets::REFERENCE_DETUNINGS, &small_settings()).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[1].tag, "delta-4.60meV");
        assert_eq!(out[4].detuning, Some(8.92));
    }

    #[test]
    fn lineshape_matches_emission() {
        let pre = presets::reference();
        let st = small_settings();
        let s = simulate_emission(&pre.emitter, &pre.phonon, &st).unwrap();
        let l = EmissionLineshape::compute(0.0, pre.emitter.gamma_hom, &pre.phonon, &st, st.half_span_mev / 1500.0).unwrap();
        let peak = s.peak().1;
        for i in (0..s.grid.len).step_by(37) {
            let x = s.grid.at(i) - pre.emitter.omega0;
            assert!((l.eval(x) - s.intensity[i]).abs() < 1e-6 * peak);
        }
    }
}
