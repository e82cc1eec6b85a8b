//! Physical constants and unit conventions.
//!
//! The crate works in meV for energies, picoseconds for times and kelvin for
//! temperatures. Angular frequencies are rad/ps, so an energy `E` in meV
//! corresponds to the frequency `E / HBAR_MEV_PS`.

/// Reduced Planck constant in meV·ps.
pub const HBAR_MEV_PS: f64 = 0.6582119569;

/// Boltzmann constant in meV/K.
pub const KB_MEV_PER_K: f64 = 0.08617333;

/// Reduced Planck constant in J·s, used when converting bath parameters
/// quoted in SI units.
pub const HBAR_SI: f64 = 1.054571817e-34;

/// Elementary charge in C (J per eV).
pub const EV_TO_J: f64 = 1.602176634e-19;

/// Convert a pulse full-width-half-maximum to the Gaussian standard
/// deviation, FWHM = 2 sqrt(2 ln 2) τ.
pub fn fwhm_to_std(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Energy (meV) to angular frequency (rad/ps).
pub fn mev_to_freq(e: f64) -> f64 {
    e / HBAR_MEV_PS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fwhm_round_trip() {
        let tau = fwhm_to_std(5.0);
        assert!((2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * tau - 5.0).abs() < 1e-14);
        // the envelope exp(-t^2 / 2 tau^2) is 1/2 at t = FWHM/2
        let half = (-(2.5f64 / tau).powi(2) / 2.0).exp();
        assert!((half - 0.5).abs() < 1e-12);
    }
}
