//! Time-to-energy transform of the susceptibility envelope.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::phonon::SusceptibilityTrace;
use crate::units::HBAR_MEV_PS;

/// Largest |χ(T)| accepted at the end of the time grid.
pub const DECAY_LIMIT: f64 = 1e-3;
/// Largest clipped negative mass, relative to the total, before aborting.
pub const RIPPLE_LIMIT: f64 = 1e-3;
/// FFT bins per requested energy step.
const OVERSAMPLE: f64 = 4.0;

/// Spectrum on a uniform grid of detunings Δ = E − ω₀ (meV).
#[derive(Debug, Clone)]
pub struct RelativeSpectrum {
    /// Detuning of `values[0]`, meV.
    pub first: f64,
    /// Bin spacing, meV.
    pub step: f64,
    pub values: Vec<f64>,
    /// Negative ripple removed by clipping, same units as the area.
    pub clipped_mass: f64,
    pub total_mass: f64,
}

impl RelativeSpectrum {
    pub fn last(&self) -> f64 {
        self.first + self.step * (self.values.len() - 1) as f64
    }

    /// Four-point Lagrange interpolation; zero outside the band.
    pub fn eval(&self, delta: f64) -> f64 {
        interp_cubic(self.first, self.step, &self.values, delta)
    }
}

/// Four-point Lagrange interpolation on a uniform grid, zero outside it.
pub(crate) fn interp_cubic(first: f64, step: f64, v: &[f64], x: f64) -> f64 {
    let n = v.len();
    let u = (x - first) / step;
    if !(u >= 0.0 && u <= (n - 1) as f64) {
        return 0.0;
    }
    if n < 4 {
        let i = (u.floor() as usize).min(n - 2);
        let f = u - i as f64;
        return v[i] * (1.0 - f) + v[i + 1] * f;
    }
    let i = (u.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let f = u - i as f64;
    let (f0, f1, f2, f3) = (f, f - 1.0, f - 2.0, f - 3.0);
    -v[i] * f1 * f2 * f3 / 6.0 + v[i + 1] * f0 * f2 * f3 / 2.0 - v[i + 2] * f0 * f1 * f3 / 2.0
        + v[i + 3] * f0 * f1 * f2 / 6.0
}

/// Complex transform F(Δ) = ∫₀^T χ(t) e^{iΔt/ħ} dt on the full FFT band,
/// ordered by ascending Δ. Returns (first Δ in meV, spacing in meV, values).
pub fn fourier_transform(chi: &SusceptibilityTrace, min_len: usize) -> (f64, f64, Vec<Complex64>) {
    let env = chi.envelope();
    let dt = chi.grid.dt;
    let m = min_len.max(env.len()).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let last = env.len() - 1;
    for (k, v) in env.iter().enumerate() {
        let w = if k == 0 || k == last { 0.5 } else { 1.0 };
        buf[k] = v * (w * dt);
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let half = m / 2;
    let mut out = Vec::with_capacity(m);
    out.extend_from_slice(&buf[half..]);
    out.extend_from_slice(&buf[..half]);
    let step = 2.0 * std::f64::consts::PI * HBAR_MEV_PS / (m as f64 * dt);
    (-(half as f64) * step, step, out)
}

/// Largest |Δ| (meV) representable on the time grid of `chi`.
pub fn nyquist_mev(chi: &SusceptibilityTrace) -> f64 {
    std::f64::consts::PI * HBAR_MEV_PS / chi.grid.dt
}

/// Absorption α(Δ) = Re ∫₀^T χ(t) e^{iΔt/ħ} dt, oversampled relative to
/// `step_mev` and restricted to |Δ| ≤ `half_span_mev`.
///
/// Fails with a configuration error when the band exceeds the Nyquist limit
/// of the time grid or the envelope has not decayed by the last sample.
pub fn absorption_relative(chi: &SusceptibilityTrace, step_mev: f64, half_span_mev: f64) -> Result<RelativeSpectrum> {
    let nyq = nyquist_mev(chi);
    if half_span_mev > nyq {
        return Err(Error::Config(format!(
            "energy span ±{half_span_mev} meV exceeds the Nyquist band ±{nyq:.4} meV of the time grid (dt = {} ps)",
            chi.grid.dt
        )));
    }
    let env = chi.envelope();
    let tail = env.last().map_or(0.0, |v| v.norm());
    if tail > DECAY_LIMIT {
        return Err(Error::Config(format!(
            "time grid of {:.3} ps cannot resolve the line: |chi(T)| = {tail:.3e} > {DECAY_LIMIT:e}",
            chi.grid.t_max()
        )));
    }
    if !(step_mev > 0.0) {
        return Err(Error::Config(format!("energy step must be > 0, got {step_mev}")));
    }
    let dt = chi.grid.dt;
    let want = (OVERSAMPLE * 2.0 * std::f64::consts::PI * HBAR_MEV_PS / (dt * step_mev)).ceil() as usize;
    let (first, step, full) = fourier_transform(chi, want);

    // Euler–Maclaurin end correction at t = 0: (dt²/12)·Re χ'(0).
    let d0 = if env.len() >= 3 {
        (-3.0 * env[0] + 4.0 * env[1] - env[2]) / (2.0 * dt)
    } else {
        (env[1] - env[0]) / dt
    };
    let corr = dt * dt / 12.0 * d0.re;

    let lo = ((-half_span_mev - first) / step).floor().max(0.0) as usize;
    let hi = (((half_span_mev - first) / step).ceil() as usize).min(full.len() - 1);
    // two guard bins each side for the interpolation stencil
    let lo = lo.saturating_sub(2);
    let hi = (hi + 2).min(full.len() - 1);
    let mut values: Vec<f64> = full[lo..=hi].iter().map(|z| z.re + corr).collect();
    let (clipped, total) = clip_negative(&mut values, step);
    if total > 0.0 && clipped / total > RIPPLE_LIMIT {
        return Err(Error::Ripple { clipped: clipped / total, limit: RIPPLE_LIMIT });
    }
    Ok(RelativeSpectrum { first: first + lo as f64 * step, step, values, clipped_mass: clipped, total_mass: total })
}

/// Zero negative samples; returns (clipped mass, total absolute mass).
pub(crate) fn clip_negative(values: &mut [f64], step: f64) -> (f64, f64) {
    let mut clipped = 0.0;
    let mut total = 0.0;
    for v in values.iter_mut() {
        total += v.abs() * step;
        if *v < 0.0 {
            clipped -= *v * step;
            *v = 0.0;
        }
    }
    (clipped, total)
}
