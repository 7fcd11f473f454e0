//! Fibre link and detector model, plus the closed-form gains and error rates
//! that the Monte Carlo engine is checked against.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::source::SourceParams;

/// Each measurement basis is read out by two detection channels (bit 0 and
/// bit 1). Noise in the discarded satellite slots is filtered out by timing.
pub const NOISE_CHANNELS: u32 = 2;

/// Above this signal probability per pulse the linearised gain is no longer
/// accurate.
pub const LINEAR_GAIN_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Total link attenuation in dB.
    pub loss_db: f64,
    /// Extra insertion loss not attributed to the fibre (connectors, spools).
    pub excess_loss_db: f64,
    /// Background photons per second reaching Bob.
    pub background_rate: f64,
    pub length_km: f64,
    /// Polarisation-mode-dispersion coefficient, ps/sqrt(km).
    pub pmd_coeff: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            loss_db: 0.0,
            excess_loss_db: 0.0,
            background_rate: 0.0,
            length_km: 0.0,
            pmd_coeff: 2.71,
        }
    }
}

impl ChannelParams {
    /// The 30 km deployed metropolitan link.
    pub fn metropolitan() -> Self {
        ChannelParams {
            loss_db: 15.52,
            excess_loss_db: 0.0,
            background_rate: 0.0,
            length_km: 30.0,
            pmd_coeff: 2.71,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loss_db >= 0.0) {
            return domain(format!("channel.loss_db must be >= 0, got {}", self.loss_db));
        }
        if !(self.excess_loss_db >= 0.0) {
            return domain(format!(
                "channel.excess_loss_db must be >= 0, got {}",
                self.excess_loss_db
            ));
        }
        if !(self.background_rate >= 0.0) {
            return domain(format!(
                "channel.background_cps must be >= 0, got {}",
                self.background_rate
            ));
        }
        if !(self.length_km >= 0.0) {
            return domain(format!("channel.length_km must be >= 0, got {}", self.length_km));
        }
        if !(self.pmd_coeff >= 0.0) {
            return domain(format!("channel PMD coefficient must be >= 0, got {}", self.pmd_coeff));
        }
        Ok(())
    }

    pub fn transmittance(&self) -> Result<f64> {
        transmittance(self.loss_db + self.excess_loss_db)
    }

    /// Mean differential group delay of the link in ps.
    pub fn dgd_ps(&self) -> f64 {
        self.pmd_coeff * self.length_km.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Dark-count probability per gate and detection channel.
    pub dark_prob: f64,
    /// Gate (coincidence) window in seconds.
    pub gate_width: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { dark_prob: 2e-8, gate_width: 1e-9 }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dark_prob) {
            return domain(format!("detector.dark_prob must be in [0,1), got {}", self.dark_prob));
        }
        if !(self.gate_width > 0.0) {
            return domain(format!("detector.gate_ns must be > 0, got {}", self.gate_width * 1e9));
        }
        Ok(())
    }
}

pub fn transmittance(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return domain(format!("loss must be >= 0 dB, got {loss_db}"));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Noise click probability per gate on a single detection channel.
pub fn noise_prob_per_gate(background_rate: f64, detector: &DetectorParams) -> Result<f64> {
    if !(background_rate >= 0.0) || !(detector.dark_prob >= 0.0) || !(detector.gate_width >= 0.0) {
        return domain("noise inputs must be non-negative");
    }
    let p = detector.dark_prob + background_rate * detector.gate_width;
    if p >= 1.0 {
        return domain(format!("noise probability per gate {p} is >= 1"));
    }
    Ok(p)
}

/// Noise summed over the detection channels of one basis.
pub fn noise_total(p_noise_per_channel: f64) -> f64 {
    f64::from(NOISE_CHANNELS) * p_noise_per_channel
}

/// Signal part of the gain, `mu * t * eta`.
pub fn signal_gain(source: &SourceParams, transmittance: f64, eta_basis: f64) -> Result<f64> {
    let s = source.mu * transmittance * eta_basis;
    if !(s >= 0.0) {
        return domain(format!("signal gain must be >= 0 (mu={}, t={transmittance}, eta={eta_basis})", source.mu));
    }
    if s >= LINEAR_GAIN_LIMIT {
        return domain(format!(
            "mu * t * eta = {s} is not << 1; the linearised gain is invalid here, \
             use the exact Poissonian form 1 - exp(-mu t eta)"
        ));
    }
    Ok(s)
}

/// Linearised gain `Q = mu t eta + p_noise_total`.
pub fn expected_gain(
    source: &SourceParams,
    transmittance: f64,
    eta_basis: f64,
    p_noise_total: f64,
) -> Result<f64> {
    Ok(signal_gain(source, transmittance, eta_basis)? + p_noise_total)
}

/// Error rate when noise clicks are right half of the time.
pub fn expected_qber(intrinsic_e: f64, signal_gain: f64, p_noise_total: f64) -> Result<f64> {
    let total = signal_gain + p_noise_total;
    if !(total > 0.0) {
        return domain("total gain is zero; the error rate is undefined");
    }
    Ok((intrinsic_e * signal_gain + 0.5 * p_noise_total) / total)
}
