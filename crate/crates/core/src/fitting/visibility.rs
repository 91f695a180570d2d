//! Two-stage fit of visibility traces and the sideband visibility area.
//!
//! Stage one fits the slow exponential outside the fast window. Stage two
//! fits the two-component envelope near zero delay with τ₁ locked. The
//! amplitude A₁ of the slow component cannot be separated from the overall
//! scale, so it is derived from the stage-one amplitude and locked as well.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{least_squares, FitProblem, FitResult, LmOptions, Parameter};
use crate::coherence::VisibilityTrace;
use crate::error::{Error, Result};
use crate::interferometry::TwoComponentModel;

/// How the slow amplitude is treated in stage one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum AmplitudeLock {
    Fixed(f64),
    MaxObserved,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongFitOptions {
    /// Points with |t| at or below this delay (ps) are excluded.
    pub exclusion: f64,
    pub amplitude: AmplitudeLock,
}

impl Default for LongFitOptions {
    fn default() -> Self {
        Self { exclusion: 10.0, amplitude: AmplitudeLock::Fixed(0.8) }
    }
}

fn weights(v: &VisibilityTrace) -> Vec<f64> {
    match &v.sigma {
        Some(s) => {
            let positive: Vec<f64> = s.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).collect();
            let floor = if positive.is_empty() {
                1.0
            } else {
                positive.iter().sum::<f64>() / positive.len() as f64 * 1e-2
            };
            s.iter().map(|x| 1.0 / x.max(floor)).collect()
        }
        None => vec![1.0; v.len()],
    }
}

/// Fit amplitude·exp(−|t|/τ₁) to the points with |t| > `exclusion`.
///
/// Parameters: `amplitude`, `tau1`.
pub fn fit_visibility_long(v: &VisibilityTrace, o: &LongFitOptions) -> Result<FitResult> {
    let reach = v.time.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if reach <= o.exclusion {
        return Err(Error::Protocol(format!(
            "trace reaches only ±{reach:.3} ps; the slow-decay fit needs points beyond ±{} ps",
            o.exclusion
        )));
    }
    let outer = v.filter(|t| t.abs() > o.exclusion);
    if outer.len() < 6 {
        return Err(Error::Protocol(format!("only {} points beyond ±{} ps", outer.len(), o.exclusion)));
    }
    let w = weights(&outer);
    // log-linear start
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, y) in outer.time.iter().zip(&outer.visibility) {
        if *y > 0.0 {
            let x = t.abs();
            sx += x;
            sy += y.ln();
            sxx += x * x;
            sxy += x * y.ln();
            n += 1.0;
        }
    }
    let slope = if n >= 2.0 { (n * sxy - sx * sy) / (n * sxx - sx * sx) } else { -0.1 };
    let tau0 = if slope < 0.0 { (-1.0 / slope).clamp(0.1, 1e4) } else { 10.0 };
    let amp0 = if n >= 2.0 { ((sy - slope * sx) / n).exp() } else { 0.8 };
    let amp = match o.amplitude {
        AmplitudeLock::Fixed(a) => Parameter::new("amplitude", a).locked("fixed"),
        AmplitudeLock::MaxObserved => {
            let m = v.visibility.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Parameter::new("amplitude", m).locked("maximum observed visibility")
        }
        AmplitudeLock::Free => Parameter::new("amplitude", amp0.clamp(1e-6, 10.0)).bounded(0.0, 10.0),
    };
    let params = vec![amp, Parameter::new("tau1", tau0).bounded(1e-3, 1e5)];
    let t = outer.time.clone();
    let y = outer.visibility.clone();
    let resid = |p: &[f64]| -> Result<Vec<f64>> {
        Ok((0..t.len()).map(|i| (p[0] * (-t[i].abs() / p[1]).exp() - y[i]) * w[i]).collect())
    };
    let jac = |p: &[f64]| -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(t.len(), 2, |i, j| {
            let e = (-t[i].abs() / p[1]).exp();
            w[i] * if j == 0 { e } else { p[0] * e * t[i].abs() / (p[1] * p[1]) }
        }))
    };
    let prob = FitProblem::new(params, resid).with_jacobian(jac);
    least_squares(&prob, &LmOptions::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortFitOptions {
    /// Fit |t| ≤ window, ps.
    pub window: f64,
    /// Slow visibility amplitude A₁/τ₁ from stage one.
    pub slow_amplitude: f64,
    /// Largest Δω (ps⁻¹) scanned for the starting point.
    pub max_delta_omega: f64,
    /// Where the locked τ₁ came from, recorded as its provenance.
    pub tau1_source: String,
}

impl Default for ShortFitOptions {
    fn default() -> Self {
        Self { window: 3.2, slow_amplitude: 0.8, max_delta_omega: 20.0, tau1_source: "stage-one slow fit".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortFit {
    pub fit: FitResult,
    /// Correlation between A₂ and τ₂.
    pub a2_tau2_correlation: f64,
    /// A₂ and τ₂ are not separately resolved.
    pub degenerate: bool,
}

impl ShortFit {
    /// Envelope model with I₀ = 1/scale, carrier `omega1` and ω₂ = ω₁ − Δω.
    pub fn model(&self, omega1: f64) -> TwoComponentModel {
        let v = |n: &str| self.fit.value(n).unwrap_or(f64::NAN);
        TwoComponentModel {
            i0: 1.0 / v("scale"),
            a1: v("a1"),
            tau1: v("tau1"),
            omega1,
            a2: v("a2"),
            tau2: v("tau2"),
            omega2: omega1 - v("delta_omega"),
        }
    }
}

/// Order: tau1, a1, scale, a2, tau2, delta_omega.
fn short_model(p: &[f64], t: f64) -> f64 {
    let m = TwoComponentModel { i0: 1.0, a1: p[1], tau1: p[0], omega1: p[5], a2: p[3], tau2: p[4], omega2: 0.0 };
    p[2] * m.envelope(t)
}

fn short_jacobian_row(p: &[f64], t: f64) -> [f64; 6] {
    let (tau1, a1, c, a2, tau2, dw) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let at = t.abs();
    let e1 = (-at / tau1).exp();
    let ln2 = std::f64::consts::LN_2;
    let e2 = (-t * t / (tau2 * tau2 * ln2)).exp();
    let s = a1 / tau1 * e1;
    let f = a2 / tau2 * e2;
    let cs = (dw * t).cos();
    let r = s * s + f * f + 2.0 * s * f * cs;
    let env = r.max(1e-300).sqrt();
    // dV/dx = C/(2 env)·dR/dx
    let k = c / (2.0 * env);
    let dr_ds = 2.0 * s + 2.0 * f * cs;
    let dr_df = 2.0 * f + 2.0 * s * cs;
    let ds_dtau1 = a1 * e1 * (at - tau1) / tau1.powi(3);
    let ds_da1 = e1 / tau1;
    let df_da2 = e2 / tau2;
    let df_dtau2 = a2 * e2 * (2.0 * t * t / (ln2 * tau2 * tau2) - 1.0) / (tau2 * tau2);
    let dr_ddw = -2.0 * s * f * t * (dw * t).sin();
    [k * dr_ds * ds_dtau1, k * dr_ds * ds_da1, env, k * dr_df * df_da2, k * dr_df * df_dtau2, k * dr_ddw]
}

/// Analytic Jacobian of the two-component visibility model (rows: `times`).
pub fn short_model_jacobian(p: &[f64], times: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(times.len(), 6, |i, j| short_jacobian_row(p, times[i])[j])
}

pub fn short_model_eval(p: &[f64], t: f64) -> f64 {
    short_model(p, t)
}

/// Stage two: fit the envelope near zero delay with τ₁ and A₁ locked.
///
/// Parameters: `tau1`, `a1` (locked), `scale`, `a2`, `tau2`, `delta_omega`.
pub fn fit_visibility_short(v: &VisibilityTrace, tau1: f64, o: &ShortFitOptions) -> Result<ShortFit> {
    if !(tau1 > 0.0) {
        return Err(Error::Protocol(format!("locked tau1 must be > 0, got {tau1}")));
    }
    let inner = v.filter(|t| t.abs() <= o.window).sorted();
    if inner.len() < 8 {
        return Err(Error::Protocol(format!("only {} points within ±{} ps for the fast fit", inner.len(), o.window)));
    }
    let w = weights(&inner);
    let t = inner.time.clone();
    let y = inner.visibility.clone();
    let a1 = o.slow_amplitude * tau1;

    // starting point: fast amplitude from the excess at zero delay
    let i0 = (0..t.len()).min_by(|&a, &b| t[a].abs().total_cmp(&t[b].abs())).unwrap_or(0);
    let excess = (y[i0] - o.slow_amplitude * (-t[i0].abs() / tau1).exp()).abs().max(0.02);
    let mut tau2 = 1.0;
    for i in 0..t.len() {
        let ex = y[i] - o.slow_amplitude * (-t[i].abs() / tau1).exp();
        if t[i] > 0.0 && ex.abs() < 0.5 * excess {
            tau2 = (t[i] / std::f64::consts::LN_2).clamp(0.05, 0.5 * tau1);
            break;
        }
    }
    let cost = |p: &[f64]| -> f64 { (0..t.len()).map(|i| ((short_model(p, t[i]) - y[i]) * w[i]).powi(2)).sum() };
    let mut best = (f64::INFINITY, 0.0);
    let steps = 400;
    for k in 0..=steps {
        let dw = o.max_delta_omega * k as f64 / steps as f64;
        let c = cost(&[tau1, a1, 1.0, excess * tau2, tau2, dw]);
        if c < best.0 {
            best = (c, dw);
        }
    }
    let params = vec![
        Parameter::new("tau1", tau1).locked(o.tau1_source.clone()),
        Parameter::new("a1", a1).locked("stage-one amplitude times tau1"),
        Parameter::new("scale", 1.0).bounded(0.0, 10.0),
        Parameter::new("a2", excess * tau2).bounded(0.0, 100.0),
        Parameter::new("tau2", tau2).bounded(1e-3, tau1),
        Parameter::new("delta_omega", best.1).bounded(0.0, 2.0 * o.max_delta_omega).with_scale(1.0),
    ];
    let (tr, yr, wr) = (t.clone(), y.clone(), w.clone());
    let resid = move |p: &[f64]| -> Result<Vec<f64>> {
        Ok((0..tr.len()).map(|i| (short_model(p, tr[i]) - yr[i]) * wr[i]).collect())
    };
    let (tj, wj) = (t, w);
    let jac = move |p: &[f64]| -> Result<DMatrix<f64>> {
        let mut j = short_model_jacobian(p, &tj);
        for (i, wi) in wj.iter().enumerate() {
            j.row_mut(i).scale_mut(*wi);
        }
        Ok(j)
    };
    let fit = least_squares(&FitProblem::new(params, resid).with_jacobian(jac), &LmOptions::default())?;
    let rho = fit.correlation_between("a2", "tau2").unwrap_or(0.0);
    let rel = |n: &str| fit.sigma(n).unwrap_or(0.0) / fit.value(n).unwrap_or(1.0).abs().max(1e-300);
    let degenerate = rho.abs() > 0.995 || rel("tau2") > 0.5 || rel("a2") > 0.5;
    Ok(ShortFit { fit, a2_tau2_correlation: rho, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsbArea {
    /// ∫ max(V − V_slow, 0) dt over the fast window, ps.
    pub area: f64,
    /// Area of the negative parts removed by clipping.
    pub clipped: f64,
    /// Clipped parts exceed 5% of the positive area.
    pub warning: bool,
    /// Residual V − V_slow before clipping.
    pub fragment: VisibilityTrace,
}

/// Area of the visibility excess over the slow exponential near zero delay.
pub fn psb_visibility_area(v: &VisibilityTrace, amplitude: f64, tau1: f64, window: f64) -> Result<PsbArea> {
    let inner = v.filter(|t| t.abs() <= window).sorted();
    if inner.len() < 3 {
        return Err(Error::Protocol(format!("only {} points within ±{window} ps", inner.len())));
    }
    let frag: Vec<f64> = inner
        .time
        .iter()
        .zip(&inner.visibility)
        .map(|(t, y)| y - amplitude * (-t.abs() / tau1).exp())
        .collect();
    let mut area = 0.0;
    let mut clipped = 0.0;
    for i in 1..frag.len() {
        let h = inner.time[i] - inner.time[i - 1];
        area += 0.5 * h * (frag[i].max(0.0) + frag[i - 1].max(0.0));
        clipped += 0.5 * h * ((-frag[i]).max(0.0) + (-frag[i - 1]).max(0.0));
    }
    Ok(PsbArea {
        area,
        clipped,
        warning: clipped > 0.05 * area,
        fragment: VisibilityTrace { time: inner.time.clone(), visibility: frag, sigma: inner.sigma.clone() },
    })
}
