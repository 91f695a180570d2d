//! Decomposition of a spectrum into zero-phonon line and phonon sideband.

use serde::{Deserialize, Serialize};

use super::Spectrum;
use crate::error::{Error, Result};
use crate::fitting::{least_squares, FitProblem, FitResult, LmOptions, Parameter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Spectrometer resolution (FWHM), meV. The ZPL may be at most 3× wider.
    pub instrument_fwhm: f64,
    /// Fit range relative to the ZPL peak, meV.
    pub low: f64,
    pub high: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self { instrument_fwhm: 0.110, low: -12.0, high: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZplPsbSplit {
    pub zpl_area: f64,
    pub zpl_sigma: f64,
    pub psb_area: f64,
    pub psb_sigma: f64,
    /// ZPL area / PSB area.
    pub ratio: f64,
    pub ratio_sigma: f64,
    /// Set when the sideband area is below three standard deviations.
    pub unreliable: bool,
    pub fit: FitResult,
}

const PARAMS: [&str; 8] = ["zpl_area", "zpl_center", "zpl_hwhm", "psb_area", "psb_offset", "psb_sigma_low", "psb_sigma_high", "background"];

fn model(p: &[f64], x: f64) -> f64 {
    let (az, xz, gz) = (p[0], p[1], p[2]);
    let (ap, xp, sl, sh) = (p[3], p[1] - p[4], p[5], p[6]);
    let lor = az / std::f64::consts::PI * gz / (gz * gz + (x - xz).powi(2));
    let s = if x < xp { sl } else { sh };
    let norm = 2.0 / ((2.0 * std::f64::consts::PI).sqrt() * (sl + sh));
    lor + ap * norm * (-0.5 * ((x - xp) / s).powi(2)).exp() + p[7]
}

/// Fit a Lorentzian ZPL plus a split-normal sideband on its low-energy side.
pub fn split_zpl_psb(s: &Spectrum, opts: &SplitOptions) -> Result<ZplPsbSplit> {
    let (e_pk, pk) = s.peak();
    if !(pk > 0.0) {
        return Err(Error::Domain("spectrum has no positive peak".into()));
    }
    let pts: Vec<(f64, f64)> = s
        .energies()
        .into_iter()
        .zip(s.intensity.iter().copied())
        .filter(|(e, _)| *e >= e_pk + opts.low && *e <= e_pk + opts.high)
        .collect();
    if pts.len() < 16 {
        return Err(Error::Domain(format!("only {} points inside the split window", pts.len())));
    }
    let step = s.grid.step;
    let floor = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).max(0.0);
    let total: f64 = pts.iter().map(|p| (p.1 - floor) * step).sum();
    let g0 = 0.5 * opts.instrument_fwhm;
    let hw_max = 1.5 * opts.instrument_fwhm;
    let az0 = ((pk - floor) * std::f64::consts::PI * g0).min(0.9 * total);
    let ap0 = (total - az0).max(0.05 * total);
    let params = vec![
        Parameter::new(PARAMS[0], az0).bounded(0.0, f64::INFINITY),
        Parameter::new(PARAMS[1], e_pk).bounded(e_pk - 0.5, e_pk + 0.5).with_scale(1.0),
        Parameter::new(PARAMS[2], g0).bounded(0.05 * step, hw_max),
        Parameter::new(PARAMS[3], ap0).bounded(0.0, f64::INFINITY),
        Parameter::new(PARAMS[4], 1.5).bounded(0.0, -opts.low),
        Parameter::new(PARAMS[5], 1.5).bounded(step, -opts.low),
        Parameter::new(PARAMS[6], 0.7).bounded(step, -opts.low),
        Parameter::new(PARAMS[7], floor).with_scale(pk * 1e-3),
    ];
    let scale = 1.0 / pk;
    let resid = |p: &[f64]| -> Result<Vec<f64>> { Ok(pts.iter().map(|&(x, y)| (model(p, x) - y) * scale).collect()) };
    let fit = least_squares(&FitProblem::new(params, resid), &LmOptions::default())?;
    let get = |i: usize| (fit.params[i].value, fit.params[i].sigma);
    let (az, sz) = get(0);
    let (ap, sp) = get(3);
    let ratio = if ap > 0.0 { az / ap } else { f64::INFINITY };
    let ratio_sigma = if ap > 0.0 && az > 0.0 {
        ratio * ((sz / az).powi(2) + (sp / ap).powi(2)).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(ZplPsbSplit {
        zpl_area: az,
        zpl_sigma: sz,
        psb_area: ap,
        psb_sigma: sp,
        ratio,
        ratio_sigma,
        unreliable: !(ap > 3.0 * sp) || !fit.converged,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::EnergyGrid;

    #[test]
    fn recovers_synthetic_components() {
        let truth = [2.0, 1600.0, 0.06, 1.0, 1.8, 1.6, 0.6, 0.01];
        let grid = EnergyGrid::centered(1598.0, 12.0, 4801).unwrap();
        let intensity = grid.points().iter().map(|&e| model(&truth, e)).collect();
        let s = Spectrum { grid, intensity, background: 0.0, detuning: None, tag: "t".into(), clipped_mass: 0.0 };
        let out = split_zpl_psb(&s, &SplitOptions::default()).unwrap();
        assert!((out.zpl_area - 2.0).abs() < 1e-6, "{}", out.zpl_area);
        assert!((out.psb_area - 1.0).abs() < 1e-6, "{}", out.psb_area);
        assert!((out.ratio - 2.0).abs() < 1e-5);
        assert!(!out.unreliable);
    }

    #[test]
    fn sideband_center_stays_below_zpl() {
        let truth = [1.0, 10.0, 0.05, 0.5, 0.0, 0.5, 0.5, 0.0];
        let grid = EnergyGrid::centered(10.0, 8.0, 3201).unwrap();
        let intensity = grid.points().iter().map(|&e| model(&truth, e)).collect();
        let s = Spectrum { grid, intensity, background: 0.0, detuning: None, tag: "t".into(), clipped_mass: 0.0 };
        let out = split_zpl_psb(&s, &SplitOptions::default()).unwrap();
        assert!(out.fit.value("psb_offset").unwrap() >= 0.0);
        assert!(out.fit.value("zpl_hwhm").unwrap() <= 1.5 * 0.110);
    }
}
