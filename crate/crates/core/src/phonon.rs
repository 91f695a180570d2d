//! Phonon spectral densities, the dephasing integral Φ(t) and the
//! independent-boson susceptibility envelope.
//!
//! Two branches couple to the emitter: a superohmic longitudinal-acoustic
//! branch `J_LA(ω) = α ω³ exp(-ω²/ω_c²)` and a localized mode modelled as a
//! normalized Gaussian bump. The bump is tapered by `1 - exp(-(ω/ω_t)³)`
//! with `ω_t = ω_loc/3`, which keeps `J_loc ∝ ω³` at the origin so the
//! integrand of Φ(t) stays finite as ω → 0.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate_adaptive, AdaptiveOptions, GaussLegendre};
use crate::units::{HBAR_MEV_PS, KB_MEV_PER_K};

/// Below this frequency (ps⁻¹) the integrand is evaluated from its series.
pub const SERIES_CUTOFF: f64 = 1e-3;

/// Coupling strengths and shapes of the two phonon branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononParams {
    /// LA coupling, ps².
    pub alpha_la: f64,
    /// LA cutoff, ps⁻¹.
    pub omega_c: f64,
    /// Localized-mode weight (dimensionless).
    pub s_loc: f64,
    /// Localized-mode center, ps⁻¹.
    pub omega_loc: f64,
    /// Localized-mode width, ps⁻¹.
    pub sigma_loc: f64,
    /// Lattice temperature, K.
    pub temperature: f64,
}

impl PhononParams {
    pub fn validate(&self) -> Result<()> {
        check(self.alpha_la >= 0.0, "alpha_la", "must be >= 0")?;
        check(self.omega_c > 0.0, "omega_c", "must be > 0")?;
        check(self.s_loc >= 0.0, "s_loc", "must be >= 0")?;
        check(self.omega_loc > 0.0, "omega_loc", "must be > 0")?;
        check(self.sigma_loc > 0.0, "sigma_loc", "must be > 0")?;
        check(self.temperature > 0.0, "temperature", "must be > 0")?;
        Ok(())
    }

    /// Upper integration limit for all frequency integrals.
    pub fn omega_max(&self) -> f64 {
        (5.0 * self.omega_c).max(self.omega_loc + 8.0 * self.sigma_loc)
    }

    /// Same parameters with every coupling switched off.
    pub fn decoupled(&self) -> Self {
        Self { alpha_la: 0.0, s_loc: 0.0, ..*self }
    }
}

fn check(ok: bool, name: &'static str, reason: &str) -> Result<()> {
    // NaN fails every comparison, so it lands here too.
    if ok {
        Ok(())
    } else {
        Err(invalid(name, reason))
    }
}

/// Zero-phonon line and broadening of the emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    /// ZPL energy, meV.
    pub omega0: f64,
    /// Gaussian broadening Γ in exp(-Γ²t²), ps⁻¹.
    pub gamma_inhom: f64,
    /// Exponential dephasing rate, ps⁻¹.
    #[serde(default)]
    pub gamma_hom: f64,
}

impl EmitterParams {
    pub fn validate(&self) -> Result<()> {
        check(self.omega0 > 0.0 && self.omega0.is_finite(), "omega0", "must be > 0")?;
        check(self.gamma_inhom >= 0.0, "gamma_inhom", "must be >= 0")?;
        check(self.gamma_hom >= 0.0, "gamma_hom", "must be >= 0")?;
        Ok(())
    }
}

/// A phonon bath with its precomputed localized-mode normalization.
#[derive(Debug, Clone)]
pub struct PhononBath {
    params: PhononParams,
    /// 1/∫₀^∞ bump(ω) dω
    local_norm: f64,
    taper_omega: f64,
    /// 2 k_B T / ħ in ps⁻¹
    thermal_rate: f64,
}

impl PhononBath {
    pub fn new(params: PhononParams) -> Result<Self> {
        params.validate()?;
        let taper_omega = params.omega_loc / 3.0;
        let mut bath = Self {
            params,
            local_norm: 1.0,
            taper_omega,
            thermal_rate: 2.0 * KB_MEV_PER_K * params.temperature / HBAR_MEV_PS,
        };
        let hi = params.omega_loc + 10.0 * params.sigma_loc;
        let panels = (hi / params.sigma_loc).ceil().max(8.0) as usize;
        let opts = AdaptiveOptions { rel_tol: 1e-12, abs_tol: 0.0, max_nodes: 1 << 16, order: 16 };
        let mass = integrate_adaptive(|w| Complex64::new(bath.bump(w), 0.0), 0.0, hi, panels, &opts)?;
        bath.local_norm = 1.0 / mass.value.re;
        Ok(bath)
    }

    pub fn params(&self) -> &PhononParams {
        &self.params
    }

    /// Unnormalized tapered Gaussian.
    fn bump(&self, w: f64) -> f64 {
        let p = &self.params;
        let z = (w - p.omega_loc) / p.sigma_loc;
        let u = w / self.taper_omega;
        (-0.5 * z * z).exp() * -(-(u * u * u)).exp_m1()
    }

    pub fn j_la(&self, w: f64) -> f64 {
        let p = &self.params;
        p.alpha_la * w * w * w * (-(w * w) / (p.omega_c * p.omega_c)).exp()
    }

    pub fn j_local(&self, w: f64) -> f64 {
        let p = &self.params;
        p.s_loc * p.omega_loc * p.omega_loc * self.local_norm * self.bump(w)
    }

    pub fn j_total(&self, w: f64) -> f64 {
        self.j_la(w) + self.j_local(w)
    }

    /// J(ω)/ω³, finite at the origin.
    fn j_over_cube(&self, w: f64) -> f64 {
        let p = &self.params;
        let la = p.alpha_la * (-(w * w) / (p.omega_c * p.omega_c)).exp();
        let u = w / self.taper_omega;
        let u3 = u * u * u;
        let taper_ratio = if w < SERIES_CUTOFF {
            1.0 - 0.5 * u3 + u3 * u3 / 6.0
        } else {
            -(-u3).exp_m1() / u3
        };
        let z = (w - p.omega_loc) / p.sigma_loc;
        let tw3 = self.taper_omega.powi(3);
        let local = p.s_loc * p.omega_loc * p.omega_loc * self.local_norm * (-0.5 * z * z).exp() * taper_ratio
            / tw3;
        la + local
    }

    /// ω·coth(ħω/2k_BT), which tends to 2k_BT/ħ at the origin.
    fn thermal(&self, w: f64) -> f64 {
        let x = w / self.thermal_rate;
        self.thermal_rate * x_coth_x(x, w < SERIES_CUTOFF)
    }

    /// Integrand of Φ(t) in a cancellation-free form.
    pub fn integrand(&self, w: f64, t: f64) -> Complex64 {
        let jc = self.j_over_cube(w) / std::f64::consts::PI;
        let s = (0.5 * w * t).sin();
        Complex64::new(-jc * self.thermal(w) * 2.0 * s * s, -jc * w * (w * t).sin())
    }

    /// Integrand written literally as J/(πω²)·{coth(·)[cos ωt − 1] − i sin ωt}.
    pub fn integrand_direct(&self, w: f64, t: f64) -> Complex64 {
        let pre = self.j_total(w) / (std::f64::consts::PI * w * w);
        let coth = 1.0 / (w / self.thermal_rate).tanh();
        Complex64::new(pre * coth * ((w * t).cos() - 1.0), -pre * (w * t).sin())
    }

    /// Same as [`integrand`](Self::integrand) but forcing the small-ω series.
    pub fn integrand_series(&self, w: f64, t: f64) -> Complex64 {
        let p = &self.params;
        let la = p.alpha_la * (-(w * w) / (p.omega_c * p.omega_c)).exp();
        let u = w / self.taper_omega;
        let u3 = u * u * u;
        let z = (w - p.omega_loc) / p.sigma_loc;
        let local = p.s_loc * p.omega_loc * p.omega_loc * self.local_norm * (-0.5 * z * z).exp()
            * (1.0 - 0.5 * u3 + u3 * u3 / 6.0 - u3 * u3 * u3 / 24.0)
            / self.taper_omega.powi(3);
        let jc = (la + local) / std::f64::consts::PI;
        let thermal = self.thermal_rate * x_coth_x(w / self.thermal_rate, true);
        let s = (0.5 * w * t).sin();
        Complex64::new(-jc * thermal * 2.0 * s * s, -jc * w * (w * t).sin())
    }

    fn initial_panels(&self, t: f64) -> usize {
        let p = &self.params;
        let wmax = p.omega_max();
        let feature = p.sigma_loc.min(0.5 * p.omega_c);
        let by_feature = (wmax / feature).ceil();
        // four oscillation periods of cos(ωt) per panel
        let by_phase = (wmax * t.abs() / (8.0 * std::f64::consts::PI)).ceil();
        by_feature.max(by_phase).max(4.0) as usize
    }

    /// Φ(t); Φ(−t) = conj Φ(t).
    pub fn phonon_integral(&self, t: f64, opts: &AdaptiveOptions) -> Result<Complex64> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("time must be finite, got {t}")));
        }
        if t == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let tau = t.abs();
        let res = integrate_adaptive(
            |w| self.integrand(w, tau),
            0.0,
            self.params.omega_max(),
            self.initial_panels(tau),
            opts,
        )?;
        Ok(if t < 0.0 { res.value.conj() } else { res.value })
    }

    /// Σ_j ∫ J_j/(πω²) dω.
    pub fn huang_rhys(&self) -> Result<f64> {
        self.static_integral(|w| self.j_over_cube(w) * w)
    }

    /// Σ_j ∫ J_j/(πω²)·coth(ħω/2k_BT) dω, so that Re Φ(∞) = −this.
    pub fn debye_waller_exponent(&self) -> Result<f64> {
        self.static_integral(|w| self.j_over_cube(w) * self.thermal(w))
    }

    /// Fraction of emission left in the zero-phonon line, exp(Re Φ(∞)).
    pub fn debye_waller_factor(&self) -> Result<f64> {
        Ok((-self.debye_waller_exponent()?).exp())
    }

    fn static_integral(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        let opts = AdaptiveOptions { rel_tol: 1e-10, abs_tol: 1e-15, ..AdaptiveOptions::default() };
        let res = integrate_adaptive(
            |w| Complex64::new(f(w) / std::f64::consts::PI, 0.0),
            0.0,
            self.params.omega_max(),
            self.initial_panels(0.0),
            &opts,
        )?;
        Ok(res.value.re)
    }

    /// Fixed node set adequate for every |t| ≤ `t_max`.
    ///
    /// The panel partition is the adaptive one converged at `t_max`, where the
    /// integrand oscillates fastest.
    pub fn dephasing_rule(&self, t_max: f64, opts: &AdaptiveOptions) -> Result<DephasingRule> {
        let wmax = self.params.omega_max();
        let res = integrate_adaptive(|w| self.integrand(w, t_max), 0.0, wmax, self.initial_panels(t_max), opts)?;
        let rule = GaussLegendre::new(opts.order);
        let mut nodes = Vec::with_capacity(res.panels.len() * 2 * rule.len());
        for &(a, b) in &res.panels {
            let m = 0.5 * (a + b);
            for (lo, hi) in [(a, m), (m, b)] {
                for (w, wt) in rule.mapped(lo, hi) {
                    let jc = self.j_over_cube(w) / std::f64::consts::PI * wt;
                    nodes.push(RuleNode { omega: w, real_weight: jc * self.thermal(w), imag_weight: jc * w });
                }
            }
        }
        Ok(DephasingRule { nodes, t_max })
    }
}

/// x·coth(x), by series near the origin.
fn x_coth_x(x: f64, series: bool) -> f64 {
    if series {
        let x2 = x * x;
        1.0 + x2 / 3.0 - x2 * x2 / 45.0 + 2.0 * x2 * x2 * x2 / 945.0
    } else {
        x / x.tanh()
    }
}

#[derive(Debug, Clone, Copy)]
struct RuleNode {
    omega: f64,
    real_weight: f64,
    imag_weight: f64,
}

/// Precomputed quadrature for evaluating Φ on many time points.
#[derive(Debug, Clone)]
pub struct DephasingRule {
    nodes: Vec<RuleNode>,
    t_max: f64,
}

impl DephasingRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in &self.nodes {
            let (s, c) = (n.omega * t).sin_cos();
            acc.re += n.real_weight * (c - 1.0);
            acc.im -= n.imag_weight * s;
        }
        acc
    }

    /// Φ(k·dt) for k = 0..len, using a rotating phasor per node.
    pub fn eval_uniform(&self, dt: f64, len: usize) -> Vec<Complex64> {
        assert!(
            (len.saturating_sub(1)) as f64 * dt <= self.t_max * (1.0 + 1e-12),
            "time grid exceeds the span the rule was built for"
        );
        const CHUNK: usize = 512;
        let partials: Vec<Vec<Complex64>> = self
            .nodes
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut out = vec![Complex64::new(0.0, 0.0); len];
                for n in chunk {
                    let step = Complex64::from_polar(1.0, n.omega * dt);
                    let mut z = Complex64::new(1.0, 0.0);
                    for (k, slot) in out.iter_mut().enumerate() {
                        if k % 256 == 0 {
                            // re-seed to stop phase drift
                            z = Complex64::from_polar(1.0, n.omega * dt * k as f64);
                        }
                        slot.re += n.real_weight * (z.re - 1.0);
                        slot.im -= n.imag_weight * z.im;
                        z *= step;
                    }
                }
                out
            })
            .collect();
        let mut total = vec![Complex64::new(0.0, 0.0); len];
        for part in partials {
            for (a, b) in total.iter_mut().zip(part) {
                *a += b;
            }
        }
        total[0] = Complex64::new(0.0, 0.0);
        total
    }
}

pub fn spectral_density_la(omega: f64, p: &PhononParams) -> Result<f64> {
    domain_check(omega)?;
    p.validate()?;
    Ok(p.alpha_la * omega.powi(3) * (-(omega * omega) / (p.omega_c * p.omega_c)).exp())
}

pub fn spectral_density_local(omega: f64, p: &PhononParams) -> Result<f64> {
    domain_check(omega)?;
    Ok(PhononBath::new(*p)?.j_local(omega))
}

fn domain_check(omega: f64) -> Result<()> {
    if omega >= 0.0 && omega.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("spectral density needs omega >= 0, got {omega}")))
    }
}

/// The dephasing integral Φ(t) with default tolerances.
pub fn phonon_integral(t: f64, p: &PhononParams) -> Result<Complex64> {
    PhononBath::new(*p)?.phonon_integral(t, &AdaptiveOptions::default())
}

pub fn huang_rhys_total(p: &PhononParams) -> Result<f64> {
    PhononBath::new(*p)?.huang_rhys()
}

/// Uniform time grid starting at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, len: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || len < 2 {
            return Err(Error::Config(format!("time grid needs dt > 0 and at least 2 points (dt={dt}, len={len})")));
        }
        Ok(Self { dt, len })
    }

    /// Grid covering [0, t_max] with step at most `dt_max`.
    pub fn spanning(t_max: f64, dt_max: f64) -> Result<Self> {
        let steps = (t_max / dt_max).ceil().max(1.0) as usize;
        Self::new(t_max / steps as f64, steps + 1)
    }

    pub fn t_max(&self) -> f64 {
        self.dt * (self.len - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }
}

/// χ(t) envelope sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct SusceptibilityTrace {
    pub grid: TimeGrid,
    pub values: Vec<Complex64>,
    /// ZPL energy, meV.
    pub omega0: f64,
    /// Whether `values` still carry the optical carrier exp(−iω₀t).
    pub carrier_included: bool,
}

impl SusceptibilityTrace {
    /// Envelope with the carrier removed, whatever the stored form.
    pub fn envelope(&self) -> Vec<Complex64> {
        if !self.carrier_included {
            return self.values.clone();
        }
        let w0 = self.omega0 / HBAR_MEV_PS;
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| v * Complex64::from_polar(1.0, w0 * self.grid.time(k)))
            .collect()
    }

    /// Multiply the carrier back in.
    pub fn with_carrier(mut self) -> Self {
        if !self.carrier_included {
            let w0 = self.omega0 / HBAR_MEV_PS;
            for (k, v) in self.values.iter_mut().enumerate() {
                *v *= Complex64::from_polar(1.0, -w0 * self.grid.time(k));
            }
            self.carrier_included = true;
        }
        self
    }
}

/// exp(Φ(t) − Γ²t² − γt) on `grid`; carrier factored out.
pub fn susceptibility(grid: &TimeGrid, e: &EmitterParams, p: &PhononParams) -> Result<SusceptibilityTrace> {
    susceptibility_with(grid, e, p, &AdaptiveOptions::default())
}

pub fn susceptibility_with(
    grid: &TimeGrid,
    e: &EmitterParams,
    p: &PhononParams,
    opts: &AdaptiveOptions,
) -> Result<SusceptibilityTrace> {
    e.validate()?;
    let bath = PhononBath::new(*p)?;
    let phi = if p.alpha_la == 0.0 && p.s_loc == 0.0 {
        vec![Complex64::new(0.0, 0.0); grid.len]
    } else {
        bath.dephasing_rule(grid.t_max(), opts)?.eval_uniform(grid.dt, grid.len)
    };
    let values = phi
        .iter()
        .enumerate()
        .map(|(k, ph)| {
            let t = grid.time(k);
            (ph - Complex64::new(e.gamma_inhom * e.gamma_inhom * t * t + e.gamma_hom * t, 0.0)).exp()
        })
        .collect();
    Ok(SusceptibilityTrace { grid: *grid, values, omega0: e.omega0, carrier_included: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn bath() -> PhononBath {
        PhononBath::new(presets::reference().phonon).unwrap()
    }

    #[test]
    fn densities_vanish_at_origin() {
        let p = presets::reference().phonon;
        assert_eq!(spectral_density_la(0.0, &p).unwrap(), 0.0);
        assert_eq!(spectral_density_local(0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn negative_frequency_is_a_domain_error() {
        let p = presets::reference().phonon;
        assert!(matches!(spectral_density_la(-1.0, &p), Err(Error::Domain(_))));
        assert!(matches!(spectral_density_local(-1e-3, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn la_maximum_by_grid_search() {
        let p = PhononParams { alpha_la: 0.7, omega_c: 2.3, ..presets::reference().phonon };
        let (mut best, mut arg) = (0.0, 0.0);
        for i in 1..200_000 {
            let w = i as f64 * 5e-5;
            let j = spectral_density_la(w, &p).unwrap();
            if j > best {
                best = j;
                arg = w;
            }
        }
        let expected = p.omega_c * (1.5f64).sqrt();
        assert!((arg - expected).abs() < 1e-4, "{arg} vs {expected}");
    }

    #[test]
    fn decoupled_limits_are_zero() {
        let p = PhononParams { alpha_la: 0.0, s_loc: 0.0, ..presets::reference().phonon };
        for w in [0.0, 0.1, 1.0, 10.0] {
            assert_eq!(spectral_density_la(w, &p).unwrap(), 0.0);
            assert_eq!(spectral_density_local(w, &p).unwrap(), 0.0);
        }
        assert_eq!(huang_rhys_total(&p).unwrap(), 0.0);
    }

    #[test]
    fn local_peak_by_grid_search() {
        let p = PhononParams { omega_loc: 1.2, sigma_loc: 0.06, ..presets::reference().phonon };
        let b = PhononBath::new(p).unwrap();
        let (mut best, mut arg) = (0.0, 0.0);
        for i in 0..400_000 {
            let w = 0.8 + i as f64 * 2e-6;
            let j = b.j_local(w);
            if j > best {
                best = j;
                arg = w;
            }
        }
        assert!((arg - p.omega_loc).abs() < p.sigma_loc / 100.0, "{arg}");
    }

    #[test]
    fn narrow_local_mode_weight() {
        let p = PhononParams { alpha_la: 0.0, omega_loc: 1.0, sigma_loc: 0.05, s_loc: 0.4, ..presets::reference().phonon };
        let b = PhononBath::new(p).unwrap();
        // dense trapezoid oracle of ∫ J_loc/(πω²)
        let n = 400_000;
        let hi = p.omega_max();
        let h = hi / n as f64;
        let mut acc = 0.0;
        for i in 1..=n {
            let w = i as f64 * h;
            let f = b.j_local(w) / (std::f64::consts::PI * w * w);
            acc += if i == n { 0.5 * f } else { f };
        }
        acc *= h;
        let target = p.s_loc / std::f64::consts::PI;
        assert!((acc - target).abs() < 0.01 * target, "{acc} vs {target}");
        let hr = b.huang_rhys().unwrap();
        assert!((hr - acc).abs() < 1e-8 * acc);
    }

    #[test]
    fn doubling_la_coupling_doubles_its_weight() {
        let base = PhononParams { s_loc: 0.0, ..presets::reference().phonon };
        let twice = PhononParams { alpha_la: 2.0 * base.alpha_la, ..base };
        let a = huang_rhys_total(&base).unwrap();
        let b = huang_rhys_total(&twice).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * b);
        // closed form: α ω_c² / (2π)
        let exact = base.alpha_la * base.omega_c * base.omega_c / (2.0 * std::f64::consts::PI);
        assert!((a - exact).abs() < 1e-9 * exact, "{a} vs {exact}");
    }

    #[test]
    fn phi_at_zero_is_exact() {
        assert_eq!(phonon_integral(0.0, &presets::reference().phonon).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn phi_conjugate_symmetry() {
        let b = bath();
        let opts = AdaptiveOptions::default();
        let a = b.phonon_integral(3.7, &opts).unwrap();
        let c = b.phonon_integral(-3.7, &opts).unwrap();
        assert_eq!(a.conj(), c);
    }

    #[test]
    fn non_finite_time_rejected() {
        assert!(matches!(phonon_integral(f64::NAN, &presets::reference().phonon), Err(Error::Domain(_))));
    }

    #[test]
    fn coth_factor_at_one_mev() {
        let x = 1.0 / (2.0 * KB_MEV_PER_K * 3.9);
        let coth = 1.0 / x.tanh();
        assert!((coth - 1.107).abs() < 1e-3, "{coth}");
    }

    #[test]
    fn series_branch_matches_direct() {
        let b = bath();
        for t in [0.5, 10.0, 80.0] {
            let w = 1e-2;
            let s = b.integrand_series(w, t);
            let d = b.integrand_direct(w, t);
            assert!((s - d).norm() <= 1e-8 * d.norm(), "t={t}: {s} vs {d}");
            let stable = b.integrand(w, t);
            assert!((stable - d).norm() <= 1e-8 * d.norm());
        }
    }

    #[test]
    fn integrand_is_finite_near_origin() {
        let b = bath();
        for w in [0.0, 1e-12, 1e-6, 9.99e-4, 1e-3] {
            let v = b.integrand(w, 50.0);
            assert!(v.re.is_finite() && v.im.is_finite());
        }
    }

    #[test]
    fn rule_matches_pointwise_integral() {
        let b = bath();
        let opts = AdaptiveOptions::default();
        let rule = b.dephasing_rule(60.0, &opts).unwrap();
        let grid = rule.eval_uniform(0.5, 121);
        for k in [1, 7, 40, 120] {
            let t = 0.5 * k as f64;
            let direct = b.phonon_integral(t, &opts).unwrap();
            assert!((grid[k] - direct).norm() < 1e-8 * direct.norm().max(1e-3), "t={t}");
            assert!((rule.eval(t) - direct).norm() < 1e-8 * direct.norm().max(1e-3));
        }
    }

    #[test]
    fn bare_oscillator_envelope() {
        let e = EmitterParams { omega0: 1596.0, gamma_inhom: 0.0, gamma_hom: 0.0 };
        let p = presets::reference().phonon.decoupled();
        let g = TimeGrid::new(0.1, 100).unwrap();
        let chi = susceptibility(&g, &e, &p).unwrap();
        assert!(chi.values.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn homogeneous_envelope_is_exponential() {
        let e = EmitterParams { omega0: 1596.0, gamma_inhom: 0.0, gamma_hom: 0.3 };
        let p = presets::reference().phonon.decoupled();
        let g = TimeGrid::new(0.1, 100).unwrap();
        let chi = susceptibility(&g, &e, &p).unwrap();
        for (k, v) in chi.values.iter().enumerate() {
            let exact = (-0.3 * g.time(k)).exp();
            assert!((v.re - exact).abs() < 1e-15 && v.im == 0.0);
        }
    }

    #[test]
    fn envelope_settles_on_debye_waller_factor() {
        let p = presets::reference().phonon;
        let e = EmitterParams { omega0: 1596.0, gamma_inhom: 0.0, gamma_hom: 0.01 };
        let g = TimeGrid::spanning(50.0, 0.1).unwrap();
        let chi = susceptibility(&g, &e, &p).unwrap();
        let dw = PhononBath::new(p).unwrap().debye_waller_factor().unwrap();
        let last = chi.values.last().unwrap().norm();
        let floor = dw * (-0.01f64 * 50.0).exp();
        assert!((last - floor).abs() < 1e-4 * floor, "{last} vs {floor}");
        assert!((chi.values[0] - Complex64::new(1.0, 0.0)).norm() == 0.0);
        assert!(chi.values.iter().all(|v| v.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn carrier_round_trip() {
        let p = presets::reference().phonon;
        let e = EmitterParams { omega0: 1596.0, gamma_inhom: 0.05, gamma_hom: 0.0 };
        let g = TimeGrid::new(0.05, 50).unwrap();
        let chi = susceptibility(&g, &e, &p).unwrap();
        let env = chi.clone().with_carrier().envelope();
        for (a, b) in env.iter().zip(&chi.values) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = presets::reference().phonon;
        p.temperature = 0.0;
        assert!(matches!(PhononBath::new(p), Err(Error::InvalidParameter { name: "temperature", .. })));
        p.temperature = f64::NAN;
        assert!(PhononBath::new(p).is_err());
    }
}
