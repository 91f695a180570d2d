//! First-order temporal coherence from a spectrum (Wiener–Khinchin).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::Spectrum;
use crate::units::HBAR_MEV_PS;

/// Spectral region entering the transform, in meV relative to ω₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralWindow {
    /// Every grid point.
    Full,
    /// Sharp cut to [ω₀ + low, ω₀ + high].
    Hard { low: f64, high: f64 },
    /// Gaussian transmission centered at ω₀ + center.
    Bandpass { center: f64, fwhm: f64 },
}

impl Default for SpectralWindow {
    fn default() -> Self {
        SpectralWindow::Hard { low: -5.0, high: 2.0 }
    }
}

impl SpectralWindow {
    fn weight(&self, x: f64) -> f64 {
        match *self {
            SpectralWindow::Full => 1.0,
            SpectralWindow::Hard { low, high } => {
                if x >= low && x <= high {
                    1.0
                } else {
                    0.0
                }
            }
            SpectralWindow::Bandpass { center, fwhm } => {
                let s = fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
                let z = (x - center) / s;
                (-0.5 * z * z).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SpectralWindow::Hard { low, high } if !(low < high) => {
                Err(Error::Config(format!("spectral window needs low < high, got [{low}, {high}]")))
            }
            SpectralWindow::Bandpass { fwhm, .. } if !(fwhm > 0.0) => {
                Err(Error::Config(format!("bandpass width must be > 0, got {fwhm}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceOptions {
    pub window: SpectralWindow,
    /// Delays run over [−t_max, t_max], ps.
    pub t_max: f64,
    pub dt: f64,
    /// Subtract the spectrum's flat background before transforming.
    pub subtract_background: bool,
}

impl Default for CoherenceOptions {
    fn default() -> Self {
        Self { window: SpectralWindow::default(), t_max: 40.0, dt: 0.01, subtract_background: true }
    }
}

/// Normalized I(t) on a symmetric delay grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTrace {
    pub time: Vec<f64>,
    pub values: Vec<Complex64>,
}

/// Fringe visibility against delay, optionally with uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityTrace {
    pub time: Vec<f64>,
    pub visibility: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl VisibilityTrace {
    pub fn new(time: Vec<f64>, visibility: Vec<f64>) -> Self {
        Self { time, visibility, sigma: None }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Points whose delay satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(f64) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.time[i])).collect();
        Self {
            time: idx.iter().map(|&i| self.time[i]).collect(),
            visibility: idx.iter().map(|&i| self.visibility[i]).collect(),
            sigma: self.sigma.as_ref().map(|s| idx.iter().map(|&i| s[i]).collect()),
        }
    }

    /// Sorted by delay.
    pub fn sorted(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.time[a].total_cmp(&self.time[b]));
        Self {
            time: idx.iter().map(|&i| self.time[i]).collect(),
            visibility: idx.iter().map(|&i| self.visibility[i]).collect(),
            sigma: self.sigma.as_ref().map(|s| idx.iter().map(|&i| s[i]).collect()),
        }
    }
}

/// I(t) = ∫ S(E) e^{−i(E−ω₀)t/ħ} dE / ∫ S(E) dE over the window.
pub fn temporal_coherence(s: &Spectrum, omega0: f64, opts: &CoherenceOptions) -> Result<CoherenceTrace> {
    opts.window.validate()?;
    if !(opts.dt > 0.0 && opts.t_max > 0.0) {
        return Err(Error::Config(format!("coherence grid needs dt, t_max > 0 (dt={}, t_max={})", opts.dt, opts.t_max)));
    }
    let bg = if opts.subtract_background { s.background } else { 0.0 };
    let g = &s.grid;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for i in 0..g.len {
        let x = g.at(i) - omega0;
        let w = opts.window.weight(x);
        if w > 0.0 {
            pts.push((x, w * (s.intensity[i] - bg) * g.step));
        }
    }
    if pts.len() < 2 {
        return Err(Error::Domain(format!("spectral window {:?} selects fewer than two grid points", opts.window)));
    }
    if matches!(opts.window, SpectralWindow::Hard { .. } | SpectralWindow::Full) {
        let n = pts.len();
        pts[0].1 *= 0.5;
        pts[n - 1].1 *= 0.5;
    }
    let norm: f64 = pts.iter().map(|p| p.1).sum();
    if !(norm > 0.0) {
        return Err(Error::Domain("spectrum has no positive area inside the window".into()));
    }

    let n = (opts.t_max / opts.dt).round() as usize;
    const CHUNK: usize = 256;
    let parts: Vec<Vec<Complex64>> = pts
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n + 1];
            for &(x, w) in chunk {
                let om = x / HBAR_MEV_PS;
                let step = Complex64::from_polar(1.0, -om * opts.dt);
                let mut z = Complex64::new(1.0, 0.0);
                for (k, slot) in acc.iter_mut().enumerate() {
                    if k % 256 == 0 {
                        z = Complex64::from_polar(1.0, -om * opts.dt * k as f64);
                    }
                    *slot += z * w;
                    z *= step;
                }
            }
            acc
        })
        .collect();
    let mut pos = vec![Complex64::new(0.0, 0.0); n + 1];
    for part in parts {
        for (a, b) in pos.iter_mut().zip(part) {
            *a += b;
        }
    }
    for v in pos.iter_mut() {
        *v /= norm;
    }
    pos[0] = Complex64::new(1.0, 0.0);

    let mut time = Vec::with_capacity(2 * n + 1);
    let mut values = Vec::with_capacity(2 * n + 1);
    for k in (1..=n).rev() {
        time.push(-(k as f64) * opts.dt);
        values.push(pos[k].conj());
    }
    for (k, v) in pos.iter().enumerate() {
        time.push(k as f64 * opts.dt);
        values.push(*v);
    }
    Ok(CoherenceTrace { time, values })
}

/// |I(t)| clamped to [0, 1].
pub fn visibility_of(c: &CoherenceTrace) -> VisibilityTrace {
    VisibilityTrace::new(c.time.clone(), c.values.iter().map(|v| v.norm().clamp(0.0, 1.0)).collect())
}

/// Period of the dominant visibility oscillation on `lo ≤ t ≤ hi`, from the
/// autocorrelation of the quadratically detrended trace.
///
/// Assumes a uniformly spaced trace; returns `None` without a clear beat.
pub fn dominant_beat_period(v: &VisibilityTrace, lo: f64, hi: f64) -> Option<f64> {
    let seg = v.filter(|t| t >= lo && t <= hi).sorted();
    let n = seg.len();
    if n < 8 {
        return None;
    }
    let dt = (seg.time[n - 1] - seg.time[0]) / (n - 1) as f64;
    let y = detrend_quadratic(&seg.time, &seg.visibility)?;
    let ac: Vec<f64> = (0..n / 2)
        .map(|lag| (0..n - lag).map(|i| y[i] * y[i + lag]).sum::<f64>() / (n - lag) as f64)
        .collect();
    if !(ac[0] > 0.0) {
        return None;
    }
    let first_neg = ac.iter().position(|&a| a < 0.0)?;
    let mut best: Option<usize> = None;
    for k in first_neg + 1..ac.len() - 1 {
        if ac[k] > ac[k - 1] && ac[k] >= ac[k + 1] && ac[k] > 0.0 {
            best = Some(k);
            break;
        }
    }
    let k = best?;
    // parabolic refinement of the lag
    let (a, b, c) = (ac[k - 1], ac[k], ac[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Some((k as f64 + shift) * dt)
}

/// Residual of a least-squares quadratic in t.
fn detrend_quadratic(t: &[f64], y: &[f64]) -> Option<Vec<f64>> {
    use nalgebra::{DMatrix, DVector};
    let n = t.len();
    let t0 = t.iter().sum::<f64>() / n as f64;
    let a = DMatrix::from_fn(n, 3, |i, j| (t[i] - t0).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let coef = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
    let fit = a * coef;
    Some((0..n).map(|i| y[i] - fit[i]).collect())
}
