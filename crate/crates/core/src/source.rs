//! Per-pulse photon-number statistics of a sub-Poissonian source.
//!
//! Only the inequality `P_multi <= mu^2 g2 / 2` is known for the source, so the
//! distribution here saturates it (the worst case for security) and truncates
//! the support at two photons. At `mu ~ 1e-4` the three-photon weight is
//! `O(mu^3)` and is dropped.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Above this mean photon number the two-photon truncation stops being
/// accurate enough to use for sampling.
pub const LINEAR_REGIME_MU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Mean photon number per pulse at the sender's output.
    pub mu: f64,
    /// Pulsed second-order correlation at zero delay.
    pub g2_pulsed: f64,
    /// Pulse repetition rate in Hz.
    pub rep_rate: f64,
    /// Centre wavelength in nm.
    pub center_wavelength: f64,
    /// Spectral FWHM in nm.
    pub fwhm: f64,
}

impl Default for SourceParams {
    /// The GaN defect emitter used for the metropolitan link.
    fn default() -> Self {
        SourceParams {
            mu: 8.955e-5,
            g2_pulsed: 0.356,
            rep_rate: 80e6,
            center_wavelength: 1305.4,
            fwhm: 8.96,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) {
            return domain(format!("source.mu must be >= 0, got {}", self.mu));
        }
        if !(self.g2_pulsed >= 0.0) {
            return domain(format!("source.g2_pulsed must be >= 0, got {}", self.g2_pulsed));
        }
        if !(self.rep_rate > 0.0) {
            return domain(format!("source.rep_rate_hz must be > 0, got {}", self.rep_rate));
        }
        if !(self.fwhm > 0.0) {
            return domain(format!("source.fwhm_nm must be > 0, got {}", self.fwhm));
        }
        if !(self.center_wavelength > 0.0) {
            return domain(format!(
                "source.wavelength_nm must be > 0, got {}",
                self.center_wavelength
            ));
        }
        Ok(())
    }

    pub fn multi_photon_bound(&self) -> Result<f64> {
        multi_photon_bound(self.mu, self.g2_pulsed)
    }

    /// Coherence length of the emission in µm.
    pub fn coherence_length_um(&self) -> Result<f64> {
        coherence_length(self.center_wavelength, self.fwhm)
    }
}

/// Probabilities of emitting 0, 1 and 2 photons in one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberDist {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

impl PhotonNumberDist {
    pub fn mean(&self) -> f64 {
        self.p1 + 2.0 * self.p2
    }

    /// Maps a uniform draw in `[0, 1)` to a photon number.
    ///
    /// The rare outcomes are checked first so that the comparison happens
    /// against small thresholds, where `f64` resolution is finest.
    #[inline]
    pub fn photon_number(&self, u: f64) -> u8 {
        if u < self.p2 {
            2
        } else if u < self.p2 + self.p1 {
            1
        } else {
            0
        }
    }
}

/// Upper bound on the multi-photon emission probability, `mu^2 g2 / 2`.
pub fn multi_photon_bound(mu: f64, g2_pulsed: f64) -> Result<f64> {
    if !(mu >= 0.0) || !(g2_pulsed >= 0.0) {
        return domain(format!(
            "multi-photon bound needs mu >= 0 and g2 >= 0 (mu={mu}, g2={g2_pulsed})"
        ));
    }
    Ok(mu * mu * g2_pulsed / 2.0)
}

/// Photon-number distribution that saturates the multi-photon bound while
/// keeping the mean photon number equal to `mu`.
pub fn photon_number_distribution(params: &SourceParams) -> Result<PhotonNumberDist> {
    params.validate()?;
    if params.mu >= LINEAR_REGIME_MU {
        return domain(format!(
            "source.mu = {} is outside the low-mu regime (< {LINEAR_REGIME_MU}) where the \
             two-photon truncation holds",
            params.mu
        ));
    }
    let p2 = multi_photon_bound(params.mu, params.g2_pulsed)?;
    let p1 = params.mu - 2.0 * p2;
    if p1 < 0.0 {
        return domain(format!(
            "single-photon probability mu - mu^2 g2 = {p1} is negative; \
             requires mu * g2 <= 1 (mu={}, g2={})",
            params.mu, params.g2_pulsed
        ));
    }
    let p0 = 1.0 - p1 - p2;
    Ok(PhotonNumberDist { p0, p1, p2 })
}

/// Coherence length `lambda^2 / (pi * dlambda)` in µm for a Lorentzian line,
/// with both wavelengths in nm.
pub fn coherence_length(center_wavelength_nm: f64, fwhm_nm: f64) -> Result<f64> {
    if !(center_wavelength_nm > 0.0) || !(fwhm_nm > 0.0) {
        return domain(format!(
            "coherence length needs positive wavelength and linewidth \
             (lambda={center_wavelength_nm} nm, fwhm={fwhm_nm} nm)"
        ));
    }
    let nm = center_wavelength_nm * center_wavelength_nm / (std::f64::consts::PI * fwhm_nm);
    Ok(nm * 1e-3)
}

/// Coherence time in ps for a coherence length in µm (vacuum light speed).
pub fn coherence_time_ps(coherence_length_um: f64) -> f64 {
    const C_UM_PER_PS: f64 = 299.792_458;
    coherence_length_um / C_UM_PER_PS
}
