//! Michelson interferograms: two-component model, synthesis from a
//! coherence trace, and windowed visibility extraction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coherence::{CoherenceTrace, VisibilityTrace};
use crate::error::{Error, Result};
use crate::fitting::{least_squares, FitProblem, LmOptions, Parameter};
use crate::units::HBAR_MEV_PS;

/// Interferogram with a slow exponential and a fast Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoComponentModel {
    pub i0: f64,
    pub a1: f64,
    /// Slow decay time, ps.
    pub tau1: f64,
    /// Slow-component frequency, ps⁻¹.
    pub omega1: f64,
    pub a2: f64,
    /// Fast decay time, ps; the fast envelope is exp(−t²/(τ₂² ln 2)).
    pub tau2: f64,
    /// Fast-component frequency, ps⁻¹.
    pub omega2: f64,
}

impl TwoComponentModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0 && self.tau1 > 0.0 && self.tau2 > 0.0 && self.a1 >= 0.0 && self.a2 >= 0.0) {
            return Err(Error::Domain(format!("interferogram model needs i0, tau1, tau2 > 0 and a1, a2 >= 0: {self:?}")));
        }
        Ok(())
    }

    /// Slow and fast component amplitudes at delay `t`.
    pub fn components(&self, t: f64) -> (f64, f64) {
        let s = self.a1 / self.tau1 * (-t.abs() / self.tau1).exp();
        let f = self.a2 / self.tau2 * (-t * t / (self.tau2 * self.tau2 * std::f64::consts::LN_2)).exp();
        (s, f)
    }

    /// Raw intensity at delay `t`.
    pub fn intensity(&self, t: f64) -> f64 {
        let (s, f) = self.components(t);
        self.i0 + s * (self.omega1 * t).cos() + f * (self.omega2 * t).cos()
    }

    /// Squared fringe envelope, with cross term 2(A₁/τ₁)(A₂/τ₂)e^{…}cos(|ω₁−ω₂|t).
    pub fn radicand(&self, t: f64) -> f64 {
        let (s, f) = self.components(t);
        s * s + f * f + 2.0 * s * f * ((self.omega1 - self.omega2).abs() * t).cos()
    }

    pub fn envelope(&self, t: f64) -> f64 {
        self.radicand(t).max(0.0).sqrt()
    }

    /// Upper and lower fringe envelopes I₀ ± √radicand.
    pub fn envelope_pair(&self, t: f64) -> (f64, f64) {
        let e = self.envelope(t);
        (self.i0 + e, self.i0 - e)
    }

    /// (I_max − I_min)/(I_max + I_min).
    pub fn visibility(&self, t: f64) -> f64 {
        let (hi, lo) = self.envelope_pair(t);
        (hi - lo) / (hi + lo)
    }
}

/// Delay samples and detected intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interferogram {
    pub delay: Vec<f64>,
    pub intensity: Vec<f64>,
}

/// Short local phase scans around a list of delay positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub centers: Vec<f64>,
    pub fringes_per_scan: f64,
    pub points_per_fringe: usize,
}

impl ScanPlan {
    /// Centers on [start, end] every `step`.
    pub fn range(start: f64, end: f64, step: f64) -> Vec<f64> {
        let n = ((end - start) / step).round() as usize;
        (0..=n).map(|k| start + step * k as f64).collect()
    }

    /// Absolute delays of every sample for a carrier at `omega0_mev`.
    pub fn delays(&self, omega0_mev: f64) -> Result<Vec<f64>> {
        if self.points_per_fringe < 4 {
            return Err(Error::Protocol(format!(
                "{} points per fringe undersample the carrier; at least 4 are needed",
                self.points_per_fringe
            )));
        }
        let period = 2.0 * std::f64::consts::PI * HBAR_MEV_PS / omega0_mev;
        let n = (self.fringes_per_scan * self.points_per_fringe as f64).round() as usize;
        let h = period / self.points_per_fringe as f64;
        let mut out = Vec::with_capacity(n * self.centers.len());
        for &c in &self.centers {
            for k in 0..n {
                out.push(c + (k as f64 - 0.5 * n as f64) * h);
            }
        }
        Ok(out)
    }
}

/// I₀(1 + Re[e^{−iω₀t} I(t)]) sampled at `delays`.
pub fn interferogram_from_coherence(c: &CoherenceTrace, omega0_mev: f64, delays: &[f64], i0: f64) -> Result<Interferogram> {
    let n = c.time.len();
    if n < 4 {
        return Err(Error::Domain("coherence trace too short to interpolate".into()));
    }
    let t0 = c.time[0];
    let dt = (c.time[n - 1] - t0) / (n - 1) as f64;
    let re: Vec<f64> = c.values.iter().map(|v| v.re).collect();
    let im: Vec<f64> = c.values.iter().map(|v| v.im).collect();
    let w0 = omega0_mev / HBAR_MEV_PS;
    let mut intensity = Vec::with_capacity(delays.len());
    for &t in delays {
        if t < t0 || t > c.time[n - 1] {
            return Err(Error::Domain(format!("delay {t} ps outside the coherence trace")));
        }
        let g = num_complex::Complex64::new(
            crate::spectra::transform::interp_cubic(t0, dt, &re, t),
            crate::spectra::transform::interp_cubic(t0, dt, &im, t),
        );
        intensity.push(i0 * (1.0 + (g * num_complex::Complex64::from_polar(1.0, -w0 * t)).re));
    }
    Ok(Interferogram { delay: delays.to_vec(), intensity })
}

/// Raw intensity of a [`TwoComponentModel`] at `delays`.
pub fn interferogram_from_model(m: &TwoComponentModel, delays: &[f64]) -> Interferogram {
    Interferogram { delay: delays.to_vec(), intensity: delays.iter().map(|&t| m.intensity(t)).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Window width in carrier periods.
    pub window_fringes: f64,
    pub min_points_per_fringe: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { window_fringes: 10.0, min_points_per_fringe: 4.0 }
    }
}

/// Fit offset + sinusoid in sliding windows and report amplitude/offset.
///
/// Windows never straddle gaps between local scans. Points whose amplitude
/// uncertainty exceeds the amplitude are dropped.
pub fn extract_visibility(ig: &Interferogram, omega0_mev: f64, opts: &ExtractOptions) -> Result<VisibilityTrace> {
    if ig.delay.len() != ig.intensity.len() {
        return Err(Error::Domain("delay and intensity columns differ in length".into()));
    }
    let period = 2.0 * std::f64::consts::PI * HBAR_MEV_PS / omega0_mev;
    let width = opts.window_fringes * period;
    let mut idx: Vec<usize> = (0..ig.delay.len()).collect();
    idx.sort_by(|&a, &b| ig.delay[a].total_cmp(&ig.delay[b]));
    let t: Vec<f64> = idx.iter().map(|&i| ig.delay[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| ig.intensity[i]).collect();

    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..=t.len() {
        if i == t.len() || t[i] - t[i - 1] > 0.5 * period {
            segments.push(start..i);
            start = i;
        }
    }

    let mut windows = Vec::new();
    for seg in segments {
        let (t_lo, t_hi) = (t[seg.start], t[seg.end - 1]);
        let mut a = t_lo;
        while a + width <= t_hi + 1e-9 * width {
            let lo = seg.start + t[seg.clone()].partition_point(|&v| v < a);
            let hi = seg.start + t[seg.clone()].partition_point(|&v| v < a + width);
            windows.push(lo..hi);
            a += 0.5 * width;
        }
    }
    let omega = omega0_mev / HBAR_MEV_PS;
    let mut time = Vec::new();
    let mut vis = Vec::new();
    let mut sig = Vec::new();
    for w in windows {
        let n = w.len();
        let span_fringes = width / period;
        if (n as f64) < opts.min_points_per_fringe * span_fringes {
            return Err(Error::Protocol(format!(
                "window at {:.4} ps holds {n} samples for {span_fringes:.1} fringes; need {} per fringe",
                t[w.start], opts.min_points_per_fringe
            )));
        }
        if let Some((tc, v, s)) = fit_window(&t[w.clone()], &y[w], omega)? {
            time.push(tc);
            vis.push(v);
            sig.push(s);
        }
    }
    if time.len() < 3 {
        return Err(Error::Protocol(format!("only {} valid visibility windows; at least 3 are needed", time.len())));
    }
    Ok(VisibilityTrace { time, visibility: vis, sigma: Some(sig) })
}

/// Returns (center, visibility, σ) or None when the amplitude is not resolved.
fn fit_window(t: &[f64], y: &[f64], omega: f64) -> Result<Option<(f64, f64, f64)>> {
    let n = t.len();
    let tc = t.iter().sum::<f64>() / n as f64;
    let u: Vec<f64> = t.iter().map(|v| v - tc).collect();
    // linear start at the nominal carrier
    let a = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => (omega * u[i]).sin(),
        _ => (omega * u[i]).cos(),
    });
    let lin = a
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-12)
        .map_err(|e| Error::Fit(format!("window linear solve failed: {e}")))?;
    let params = vec![
        Parameter::new("offset", lin[0]),
        Parameter::new("s", lin[1]).with_scale(lin[0].abs().max(1e-12)),
        Parameter::new("c", lin[2]).with_scale(lin[0].abs().max(1e-12)),
        Parameter::new("omega", omega).bounded(0.8 * omega, 1.2 * omega),
    ];
    let resid = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(u.iter().zip(y).map(|(&x, &yy)| p[0] + p[1] * (p[3] * x).sin() + p[2] * (p[3] * x).cos() - yy).collect())
    };
    let jac = |p: &[f64]| -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(n, 4, |i, j| {
            let (s, c) = (p[3] * u[i]).sin_cos();
            match j {
                0 => 1.0,
                1 => s,
                2 => c,
                _ => u[i] * (p[1] * c - p[2] * s),
            }
        }))
    };
    let prob = FitProblem::new(params, resid).with_jacobian(jac);
    let res = least_squares(&prob, &LmOptions { max_iter: 100, ..LmOptions::default() })?;
    let (off, s, c) = (res.params[0].value, res.params[1].value, res.params[2].value);
    let amp = (s * s + c * c).sqrt();
    let (ss, sc, so) = (res.params[1].sigma, res.params[2].sigma, res.params[0].sigma);
    let rho = res.correlation_between("s", "c").unwrap_or(0.0);
    let var_amp = if amp > 0.0 {
        (s * s * ss * ss + c * c * sc * sc + 2.0 * s * c * rho * ss * sc) / (amp * amp)
    } else {
        f64::INFINITY
    };
    let sigma_amp = var_amp.max(0.0).sqrt();
    if !(off > 0.0) || !(sigma_amp <= amp) {
        return Ok(None);
    }
    let v = amp / off;
    let sigma_v = v * ((sigma_amp / amp).powi(2) + (so / off).powi(2)).sqrt();
    Ok(Some((tc, v, sigma_v)))
}
