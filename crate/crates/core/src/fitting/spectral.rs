//! Global fit of a detuning series with shared phonon parameters.
//!
//! Each dataset contributes its own ZPL energy, cavity resonance, cavity
//! width, cavity amplitude and background. The phonon bath, the Gaussian
//! broadening and the homogeneous rate are shared; the homogeneous rate is
//! locked unless asked otherwise.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{least_squares, FitProblem, FitResult, LmOptions, Parameter};
use crate::error::{Error, Result};
use crate::phonon::PhononParams;
use crate::spectra::{CavityParams, EmissionLineshape, SimulationSettings, Spectrum};

/// Shared parameter names in vector order.
pub const SHARED: [&str; 8] =
    ["alpha_la", "omega_c", "s_loc", "omega_loc", "sigma_loc", "temperature", "gamma_inhom", "gamma_hom"];
/// Per-dataset parameter names; the dataset tag is appended in brackets.
pub const PER_DATASET: [&str; 5] = ["omega0", "omega_cav", "gamma_cav", "a_cav", "i_bg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFitSetup {
    /// Starting phonon parameters.
    pub phonon: PhononParams,
    pub gamma_inhom: f64,
    pub gamma_hom: f64,
    /// Starting cavity HWHM, meV.
    pub gamma_cav: f64,
    /// Fixed values by name: a shared name, a per-dataset base name (all
    /// datasets) or `name[tag]`.
    pub locks: BTreeMap<String, f64>,
    /// Names left free even if locked by default (only `gamma_hom`).
    pub unlock_gamma_hom: bool,
    /// Tags of datasets to leave out.
    pub exclude: Vec<String>,
    /// Lineshape simulation grid.
    pub settings: SimulationSettings,
    /// Fit range relative to each dataset's ZPL, meV.
    pub window: (f64, f64),
    /// Weight floor as a fraction of each dataset's maximum.
    pub weight_floor: f64,
}

impl SpectralFitSetup {
    pub fn new(phonon: PhononParams, gamma_inhom: f64, gamma_hom: f64) -> Self {
        Self {
            phonon,
            gamma_inhom,
            gamma_hom,
            gamma_cav: 1.75,
            locks: BTreeMap::new(),
            unlock_gamma_hom: false,
            exclude: Vec::new(),
            settings: SimulationSettings { half_span_mev: 20.0, points: 1 << 14, t_max_ps: 120.0, nyquist_margin: 1.5 },
            window: (-15.0, 8.0),
            weight_floor: 1e-3,
        }
    }
}

/// Data and model for one dataset at the optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub tag: String,
    pub energy: Vec<f64>,
    pub data: Vec<f64>,
    pub model: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSpectralFit {
    pub fit: FitResult,
    pub overlays: Vec<Overlay>,
    pub excluded: Vec<String>,
}

impl GlobalSpectralFit {
    pub fn phonon(&self) -> PhononParams {
        let v = |n| self.fit.value(n).unwrap_or(f64::NAN);
        PhononParams {
            alpha_la: v("alpha_la"),
            omega_c: v("omega_c"),
            s_loc: v("s_loc"),
            omega_loc: v("omega_loc"),
            sigma_loc: v("sigma_loc"),
            temperature: v("temperature"),
        }
    }

    pub fn cavity(&self, tag: &str) -> Option<CavityParams> {
        Some(CavityParams {
            omega_cav: self.fit.value(&format!("omega_cav[{tag}]"))?,
            gamma_cav: self.fit.value(&format!("gamma_cav[{tag}]"))?,
            a_cav: self.fit.value(&format!("a_cav[{tag}]"))?,
        })
    }
}

struct Dataset {
    tag: String,
    energy: Vec<f64>,
    data: Vec<f64>,
    weight: Vec<f64>,
}

/// Recently used lineshapes keyed by the bit patterns of the shared parameters.
struct LineshapeCache {
    entries: Mutex<Vec<([u64; 8], Arc<EmissionLineshape>)>>,
    capacity: usize,
    settings: SimulationSettings,
    step: f64,
}

impl LineshapeCache {
    fn get(&self, shared: &[f64]) -> Result<Arc<EmissionLineshape>> {
        let mut key = [0u64; 8];
        for (k, v) in key.iter_mut().zip(shared) {
            *k = v.to_bits();
        }
        if let Some((_, l)) = self.entries.lock().expect("cache lock").iter().find(|(k, _)| *k == key) {
            return Ok(l.clone());
        }
        let p = PhononParams {
            alpha_la: shared[0],
            omega_c: shared[1],
            s_loc: shared[2],
            omega_loc: shared[3],
            sigma_loc: shared[4],
            temperature: shared[5],
        };
        let l = Arc::new(EmissionLineshape::compute(shared[6], shared[7], &p, &self.settings, self.step)?);
        let mut e = self.entries.lock().expect("cache lock");
        if e.len() >= self.capacity {
            e.remove(0);
        }
        e.push((key, l.clone()));
        Ok(l)
    }
}

/// ZPL position: of the two strongest local maxima, the narrower one.
pub fn locate_zpl(energy: &[f64], y: &[f64]) -> Option<f64> {
    let n = y.len();
    if n < 5 {
        return None;
    }
    let mut peaks: Vec<usize> = (1..n - 1).filter(|&i| y[i] >= y[i - 1] && y[i] > y[i + 1]).collect();
    peaks.sort_by(|&a, &b| y[b].total_cmp(&y[a]));
    let width = |i: usize| -> f64 {
        let half = 0.5 * y[i];
        let mut l = i;
        while l > 0 && y[l] > half {
            l -= 1;
        }
        let mut r = i;
        while r + 1 < n && y[r] > half {
            r += 1;
        }
        energy[r] - energy[l]
    };
    match peaks.as_slice() {
        [] => None,
        [p] => Some(energy[*p]),
        [a, b, ..] => {
            // comparable heights only; a much weaker narrow peak is noise
            if y[*b] > 0.5 * y[*a] && width(*b) < width(*a) {
                Some(energy[*b])
            } else {
                Some(energy[*a])
            }
        }
    }
}

/// Joint least-squares fit of all datasets.
pub fn fit_spectra_global(series: &[Spectrum], setup: &SpectralFitSetup, opts: &LmOptions) -> Result<GlobalSpectralFit> {
    let mut excluded = Vec::new();
    let mut sets = Vec::new();
    let mut tags_seen = std::collections::BTreeSet::new();
    for s in series {
        if setup.exclude.contains(&s.tag) {
            excluded.push(s.tag.clone());
            continue;
        }
        if !tags_seen.insert(s.tag.clone()) {
            return Err(Error::Fit(format!("duplicate dataset tag {:?}", s.tag)));
        }
        sets.push(s);
    }
    for tag in &setup.exclude {
        if !excluded.contains(tag) {
            return Err(Error::Fit(format!("excluded dataset {tag:?} is not in the series")));
        }
    }
    if sets.is_empty() {
        return Err(Error::Fit("no datasets left to fit".into()));
    }
    for name in setup.locks.keys() {
        let known = match name.split_once('[') {
            None => SHARED.contains(&name.as_str()) || PER_DATASET.contains(&name.as_str()),
            Some((base, rest)) => {
                PER_DATASET.contains(&base) && rest.strip_suffix(']').is_some_and(|t| sets.iter().any(|s| s.tag == t))
            }
        };
        if !known {
            return Err(Error::Fit(format!("cannot lock {name:?}: no such parameter")));
        }
    }

    let shared0 = [
        setup.phonon.alpha_la,
        setup.phonon.omega_c,
        setup.phonon.s_loc,
        setup.phonon.omega_loc,
        setup.phonon.sigma_loc,
        setup.phonon.temperature,
        setup.gamma_inhom,
        setup.gamma_hom,
    ];
    let bounds = [(0.0, 10.0), (0.05, 50.0), (0.0, 5.0), (0.02, 20.0), (0.01, 10.0), (0.3, 300.0), (0.0, 5.0), (0.0, 5.0)];
    let mut params = Vec::new();
    for (i, name) in SHARED.iter().enumerate() {
        let mut p = Parameter::new(*name, shared0[i]).bounded(bounds[i].0, bounds[i].1);
        if let Some(&v) = setup.locks.get(*name) {
            p = Parameter::new(*name, v).locked("user lock");
        } else if *name == "gamma_hom" && !setup.unlock_gamma_hom {
            p = p.locked("homogeneous rate held at its input value");
        }
        params.push(p);
    }

    let mut datasets = Vec::new();
    let mut step = f64::INFINITY;
    for s in &sets {
        let e = s.energies();
        let w0 = locate_zpl(&e, &s.intensity).ok_or_else(|| Error::Fit(format!("no peak found in dataset {:?}", s.tag)))?;
        let keep: Vec<usize> = (0..e.len()).filter(|&i| e[i] >= w0 + setup.window.0 && e[i] <= w0 + setup.window.1).collect();
        if keep.len() < 16 {
            return Err(Error::Fit(format!("dataset {:?} has only {} points in the fit window", s.tag, keep.len())));
        }
        let energy: Vec<f64> = keep.iter().map(|&i| e[i]).collect();
        let data: Vec<f64> = keep.iter().map(|&i| s.intensity[i]).collect();
        let peak = data.iter().copied().fold(0.0, f64::max);
        let floor = setup.weight_floor * peak;
        let weight = data.iter().map(|&y| 1.0 / y.max(floor).sqrt()).collect();
        step = step.min(s.grid.step);
        let omega_cav0 = w0 + s.detuning.unwrap_or(0.0);
        datasets.push((Dataset { tag: s.tag.clone(), energy, data, weight }, w0, omega_cav0));
    }

    let cache = LineshapeCache {
        entries: Mutex::new(Vec::new()),
        capacity: 12,
        settings: setup.settings,
        step,
    };
    let base = cache.get(&shared0)?;
    for (d, w0, wc) in &datasets {
        // amplitude and background by linear least squares at the start
        let c = CavityParams { omega_cav: *wc, gamma_cav: setup.gamma_cav, a_cav: 1.0 };
        let basis: Vec<f64> = d.energy.iter().map(|&e| base.eval(e - w0) * c.transmission(e)).collect();
        let (mut saa, mut sab, mut sbb, mut say, mut sby) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..basis.len() {
            let w2 = d.weight[i] * d.weight[i];
            saa += w2 * basis[i] * basis[i];
            sab += w2 * basis[i];
            sbb += w2;
            say += w2 * basis[i] * d.data[i];
            sby += w2 * d.data[i];
        }
        let det = saa * sbb - sab * sab;
        let (a0, b0) = if det > 0.0 { ((say * sbb - sab * sby) / det, (saa * sby - sab * say) / det) } else { (1.0, 0.0) };
        let a0 = a0.max(1e-12);
        let tag = &d.tag;
        let lock = |base: &str| setup.locks.get(&format!("{base}[{tag}]")).or_else(|| setup.locks.get(base)).copied();
        let scale_i = d.data.iter().copied().fold(0.0, f64::max).max(1e-12);
        let entries = [
            Parameter::new(format!("omega0[{tag}]"), *w0).bounded(w0 - 1.0, w0 + 1.0).with_scale(1.0),
            Parameter::new(format!("omega_cav[{tag}]"), *wc).bounded(wc - 10.0, wc + 10.0).with_scale(1.0),
            Parameter::new(format!("gamma_cav[{tag}]"), setup.gamma_cav).bounded(0.05, 50.0),
            Parameter::new(format!("a_cav[{tag}]"), a0).bounded(0.0, f64::INFINITY),
            Parameter::new(format!("i_bg[{tag}]"), b0).with_scale(1e-3 * scale_i),
        ];
        for (p, base_name) in entries.into_iter().zip(PER_DATASET) {
            let p = match lock(base_name) {
                Some(v) => Parameter { initial: v, lower: v.min(p.lower), upper: v.max(p.upper), ..p }.locked("user lock"),
                None => p,
            };
            params.push(p.scoped(tag.clone()));
        }
    }
    let data: Vec<&Dataset> = datasets.iter().map(|(d, _, _)| d).collect();
    let mut ranges = Vec::new();
    let mut offset = 0;
    for d in &data {
        ranges.push((d.tag.clone(), offset..offset + d.data.len()));
        offset += d.data.len();
    }

    let model = |p: &[f64], k: usize, l: &EmissionLineshape| -> Vec<f64> {
        let q = &p[8 + 5 * k..8 + 5 * k + 5];
        let c = CavityParams { omega_cav: q[1], gamma_cav: q[2], a_cav: q[3] };
        data[k].energy.iter().map(|&e| l.eval(e - q[0]) * c.transmission(e) + q[4]).collect()
    };
    let resid = |p: &[f64]| -> Result<Vec<f64>> {
        let l = cache.get(&p[..8])?;
        let mut out = Vec::with_capacity(offset);
        for (k, d) in data.iter().enumerate() {
            let m = model(p, k, &l);
            out.extend((0..m.len()).map(|i| (m[i] - d.data[i]) * d.weight[i]));
        }
        Ok(out)
    };
    let prob = FitProblem::new(params, resid).with_datasets(ranges);
    let fit = least_squares(&prob, opts)?;
    let x = fit.values();
    let l = cache.get(&x[..8])?;
    let overlays = data
        .iter()
        .enumerate()
        .map(|(k, d)| Overlay { tag: d.tag.clone(), energy: d.energy.clone(), data: d.data.clone(), model: model(&x, k, &l) })
        .collect();
    Ok(GlobalSpectralFit { fit, overlays, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zpl_is_the_narrow_peak() {
        let e: Vec<f64> = (0..2000).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = e
            .iter()
            .map(|&x| 1.0 * (-0.5 * ((x - 5.0) / 1.5).powi(2)).exp() + 0.9 * (-0.5 * ((x - 12.0) / 0.05).powi(2)).exp())
            .collect();
        assert!((locate_zpl(&e, &y).unwrap() - 12.0).abs() < 0.011);
    }

    #[test]
    fn unknown_exclusion_is_an_error() {
        let grid = crate::spectra::EnergyGrid::new(0.0, 0.1, 100).unwrap();
        let s = Spectrum { grid, intensity: vec![1.0; 100], background: 0.0, detuning: None, tag: "a".into(), clipped_mass: 0.0 };
        let mut setup = SpectralFitSetup::new(crate::presets::reference().phonon, 0.0, 0.1);
        setup.exclude = vec!["b".into()];
        assert!(matches!(fit_spectra_global(&[s], &setup, &LmOptions::default()), Err(Error::Fit(_))));
    }
}
