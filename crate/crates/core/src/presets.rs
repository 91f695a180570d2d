//! Parameter sets resembling a WSe₂ dot in a tunable open microcavity.

use serde::{Deserialize, Serialize};

use crate::phonon::{EmitterParams, PhononParams};
use crate::spectra::CavityParams;
use crate::units::{mev_to_angular, HBAR_MEV_PS};

/// Cavity detunings of the reference sweep, meV.
pub const REFERENCE_DETUNINGS: [f64; 5] = [-9.15, -4.60, 0.0, 4.60, 8.92];

/// Slow coherence time of the reference emitter, ps.
pub const REFERENCE_T2: f64 = 11.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub emitter: EmitterParams,
    pub phonon: PhononParams,
    pub cavity: CavityParams,
}

/// Reference parameters: LA-dominated sideband, weak local mode near 0.9 meV.
pub fn reference() -> Preset {
    Preset {
        emitter: EmitterParams { omega0: 1596.0, gamma_inhom: 0.0, gamma_hom: 1.0 / REFERENCE_T2 },
        phonon: PhononParams {
            alpha_la: 0.05,
            omega_c: mev_to_angular(4.0),
            s_loc: 0.05,
            omega_loc: mev_to_angular(0.9),
            sigma_loc: mev_to_angular(0.3),
            temperature: 3.9,
        },
        cavity: CavityParams { omega_cav: 1596.0, gamma_cav: 1.75, a_cav: 1.75 },
    }
}

/// ZPL full width (meV) implied by a pure exponential dephasing rate.
pub fn zpl_fwhm_mev(gamma_hom: f64) -> f64 {
    2.0 * HBAR_MEV_PS * gamma_hom
}
