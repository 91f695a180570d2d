//! Physical constants and unit conversions.
//!
//! Energies at the boundary are in meV, times in ps, and angular frequencies
//! in ps⁻¹. With these choices every quantity in the model is O(1).

/// Reduced Planck constant in meV·ps.
pub const HBAR_MEV_PS: f64 = 0.658_211_956_9;

/// Boltzmann constant in meV/K.
pub const KB_MEV_PER_K: f64 = 0.086_173_33;

/// Convert an energy in meV to an angular frequency in ps⁻¹.
#[inline]
pub fn mev_to_angular(energy_mev: f64) -> f64 {
    energy_mev / HBAR_MEV_PS
}

/// Convert an angular frequency in ps⁻¹ to an energy in meV.
#[inline]
pub fn angular_to_mev(omega: f64) -> f64 {
    omega * HBAR_MEV_PS
}

/// Oscillation period (ps) of a beat between two lines split by `splitting_mev`.
#[inline]
pub fn beat_period_ps(splitting_mev: f64) -> f64 {
    2.0 * std::f64::consts::PI * HBAR_MEV_PS / splitting_mev.abs()
}

/// Coherence time (ps) of a Lorentzian line with the given FWHM (meV).
///
/// |g1(t)| = exp(-|t|/τ) with τ = 2ħ/Γ.
#[inline]
pub fn lorentzian_coherence_time_ps(fwhm_mev: f64) -> f64 {
    2.0 * HBAR_MEV_PS / fwhm_mev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zpl_linewidth_maps_to_twelve_ps() {
        let tau = lorentzian_coherence_time_ps(0.110);
        assert!((tau - 11.967).abs() < 1e-3, "{tau}");
    }

    #[test]
    fn beat_period_for_cavity_detuning() {
        let period = beat_period_ps(-4.60);
        assert!((period - 0.899).abs() < 1e-3, "{period}");
    }

    #[test]
    fn conversion_round_trip() {
        let e = 1.596e3;
        assert!((angular_to_mev(mev_to_angular(e)) - e).abs() < 1e-9);
    }
}
