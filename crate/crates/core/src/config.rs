//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then a config file, then
//! command-line overrides. Only the keys in [`KEYS`] are accepted.

use std::collections::BTreeMap;
use std::path::Path;

use crate::channel::{self, ChannelParams, DetectorParams};
use crate::error::{Error, Result};
use crate::keyrate::{SecurityParams, SweepParams, DEFAULT_BLOCK_SIZES};
use crate::optics::{Basis, OpticsParams};
use crate::simulate::{LinkParams, ProtocolMode, TrialConfig};
use crate::source::SourceParams;

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("source.mu", "mean photon number per pulse at the sender's output"),
    ("source.g2_pulsed", "pulsed g2(0)"),
    ("source.rep_rate_hz", "pulse repetition rate"),
    ("source.wavelength_nm", "centre wavelength"),
    ("source.fwhm_nm", "spectral FWHM"),
    ("optics.v_peak", "peak interferometer visibility"),
    ("optics.envelope_um", "path-mismatch scale of the visibility decay"),
    ("optics.delay_mismatch_um", "current path mismatch"),
    ("optics.eta_z", "conclusive detection efficiency, time-bin basis"),
    ("optics.eta_x", "conclusive detection efficiency, phase bases"),
    ("optics.e_z_intrinsic", "time-bin misalignment error"),
    ("optics.e_x_intrinsic", "phase misalignment error on top of visibility"),
    ("optics.phase_offset_rad", "slow phase-frame rotation"),
    ("pmd.dgd_ps", "differential group delay (default: coefficient x sqrt(length))"),
    ("channel.loss_db", "link attenuation"),
    ("channel.excess_loss_db", "extra insertion loss"),
    ("channel.background_cps", "background photon rate at the receiver"),
    ("channel.length_km", "fibre length"),
    ("detector.dark_prob", "dark-count probability per gate and channel"),
    ("detector.gate_ns", "gate width"),
    ("sim.n_pulses", "pulses to simulate"),
    ("sim.seed", "random seed"),
    ("sim.q_z_alice", "sender's Z-basis probability"),
    ("sim.q_z_bob", "receiver's Z-basis probability"),
    ("sim.protocol", "bb84 or rfi"),
    ("sim.slices", "number of consecutive time slices to emit"),
    ("sim.drift_rad", "phase drift accumulated over the whole run"),
    ("security.eps_hat", "smoothing parameter"),
    ("security.eps_pa", "privacy-amplification failure probability"),
    ("security.eps_cor", "correctness failure probability"),
    ("security.f_ec", "error-correction inefficiency"),
    ("sweep.loss_start_db", "first loss of the sweep grid"),
    ("sweep.loss_stop_db", "last loss of the sweep grid"),
    ("sweep.loss_step_db", "sweep grid spacing"),
    ("sweep.block_sizes", "comma-separated block sizes in pulses; inf allowed"),
    ("g2.bin_ps", "histogram bin width"),
    ("g2.window_ps", "histogram half window"),
    ("g2.half_width_ps", "pulsed-peak integration half width"),
    ("g2.side_peaks", "side peaks averaged for pulsed g2(0)"),
    ("g2.channel_a", "start channel"),
    ("g2.channel_b", "stop channel"),
    ("g2.max_iterations", "iteration cap of the g2 fit"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        return Ok(());
    }
    let nearest = KEYS
        .iter()
        .map(|(k, _)| (strsim::jaro_winkler(key, k), *k))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
        .unwrap_or_default();
    Err(Error::Usage(format!("unknown config key '{key}' (did you mean '{nearest}'?)")))
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    /// Sets `key` after checking it is known. Later calls win.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        check_key(key)?;
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Parses a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("expected KEY=VALUE, got '{pair}'")))?;
        self.set(k, v)
    }

    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config line {}: expected 'key = value', got '{line}'", i + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Usage(m) => Error::Usage(format!("config line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        self.merge_str(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| parse_f64(key, v)).transpose()
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key).map(|v| parse_count(key, v)).transpose()
    }

    fn apply(&self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.f64(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn source(&self) -> Result<SourceParams> {
        let mut s = SourceParams::default();
        self.apply("source.mu", &mut s.mu)?;
        self.apply("source.g2_pulsed", &mut s.g2_pulsed)?;
        self.apply("source.rep_rate_hz", &mut s.rep_rate)?;
        self.apply("source.wavelength_nm", &mut s.center_wavelength)?;
        self.apply("source.fwhm_nm", &mut s.fwhm)?;
        s.validate()?;
        Ok(s)
    }

    pub fn optics(&self) -> Result<OpticsParams> {
        let mut o = OpticsParams::default();
        self.apply("optics.v_peak", &mut o.v_peak)?;
        self.apply("optics.envelope_um", &mut o.envelope_length)?;
        self.apply("optics.delay_mismatch_um", &mut o.delay_mismatch)?;
        self.apply("optics.eta_z", &mut o.eta_z)?;
        self.apply("optics.eta_x", &mut o.eta_x)?;
        self.apply("optics.e_z_intrinsic", &mut o.intrinsic_e_z)?;
        self.apply("optics.e_x_intrinsic", &mut o.intrinsic_e_x)?;
        self.apply("optics.phase_offset_rad", &mut o.phase_offset)?;
        o.validate()?;
        Ok(o)
    }

    pub fn channel(&self) -> Result<ChannelParams> {
        let mut c = ChannelParams::default();
        self.apply("channel.loss_db", &mut c.loss_db)?;
        self.apply("channel.excess_loss_db", &mut c.excess_loss_db)?;
        self.apply("channel.background_cps", &mut c.background_rate)?;
        self.apply("channel.length_km", &mut c.length_km)?;
        c.validate()?;
        Ok(c)
    }

    pub fn detector(&self) -> Result<DetectorParams> {
        let mut d = DetectorParams::default();
        self.apply("detector.dark_prob", &mut d.dark_prob)?;
        if let Some(ns) = self.f64("detector.gate_ns")? {
            d.gate_width = ns * 1e-9;
        }
        d.validate()?;
        Ok(d)
    }

    pub fn link(&self) -> Result<LinkParams> {
        let link = LinkParams {
            source: self.source()?,
            optics: self.optics()?,
            channel: self.channel()?,
            detector: self.detector()?,
        };
        link.validate()?;
        Ok(link)
    }

    /// Differential group delay: explicit value, else from the link length.
    pub fn dgd_ps(&self) -> Result<f64> {
        match self.f64("pmd.dgd_ps")? {
            Some(d) if d >= 0.0 => Ok(d),
            Some(d) => Err(Error::Domain(format!("pmd.dgd_ps must be >= 0, got {d}"))),
            None => Ok(self.channel()?.dgd_ps()),
        }
    }

    pub fn protocol(&self) -> Result<ProtocolMode> {
        self.get("sim.protocol").map_or(Ok(ProtocolMode::Bb84), |v| v.parse())
    }

    pub fn trial(&self) -> Result<TrialConfig> {
        let mut t = TrialConfig::default();
        if let Some(n) = self.u64("sim.n_pulses")? {
            t.n_pulses = n;
        }
        if let Some(s) = self.u64("sim.seed")? {
            t.seed = s;
        }
        self.apply("sim.q_z_alice", &mut t.q_z_alice)?;
        self.apply("sim.q_z_bob", &mut t.q_z_bob)?;
        t.protocol_mode = self.protocol()?;
        t.validate()?;
        Ok(t)
    }

    pub fn slices(&self) -> Result<usize> {
        Ok(self.u64("sim.slices")?.unwrap_or(1) as usize)
    }

    pub fn drift_rad(&self) -> Result<f64> {
        Ok(self.f64("sim.drift_rad")?.unwrap_or(0.0))
    }

    pub fn security(&self) -> Result<SecurityParams> {
        let mut s = SecurityParams::default();
        self.apply("security.eps_hat", &mut s.eps_hat)?;
        self.apply("security.eps_pa", &mut s.eps_pa)?;
        self.apply("security.eps_cor", &mut s.eps_cor)?;
        self.apply("security.f_ec", &mut s.f_ec)?;
        s.validate()?;
        Ok(s)
    }

    /// Sweep model built from the link description: errors are the optics'
    /// effective misalignment errors and noise is dark counts plus
    /// background per gate.
    pub fn sweep_params(&self) -> Result<SweepParams> {
        let link = self.link()?;
        let trial = self.trial()?;
        Ok(SweepParams {
            mu: link.source.mu,
            g2_pulsed: link.source.g2_pulsed,
            eta_z: link.optics.eta_z,
            eta_x: link.optics.eta_x,
            e_z: link.optics.effective_error(Basis::Z),
            e_x: link.optics.effective_error(Basis::X),
            p_noise: channel::noise_prob_per_gate(link.channel.background_rate, &link.detector)?,
            q_z_alice: trial.q_z_alice,
            q_z_bob: trial.q_z_bob,
            protocol: trial.protocol_mode,
            security: self.security()?,
        })
    }

    pub fn sweep_losses(&self) -> Result<Vec<f64>> {
        let start = self.f64("sweep.loss_start_db")?.unwrap_or(0.0);
        let stop = self.f64("sweep.loss_stop_db")?.unwrap_or(30.0);
        let step = self.f64("sweep.loss_step_db")?.unwrap_or(0.5);
        crate::keyrate::loss_grid(start, stop, step)
    }

    pub fn sweep_blocks(&self) -> Result<Vec<f64>> {
        match self.get("sweep.block_sizes") {
            None => Ok(DEFAULT_BLOCK_SIZES.to_vec()),
            Some(list) => list.split(',').map(|v| parse_f64("sweep.block_sizes", v.trim())).collect(),
        }
    }

    pub fn g2_i64(&self, key: &str, default: i64) -> Result<i64> {
        Ok(self.f64(key)?.map_or(default, |v| v.round() as i64))
    }

    pub fn g2_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.u64(key)?.map_or(default, |v| v as usize))
    }
}

/// Accepts ordinary float syntax plus `inf`.
pub fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| !x.is_nan())
        .ok_or_else(|| Error::Usage(format!("{key}: '{v}' is not a number")))
}

/// Non-negative integer, also in float notation such as `1e8`.
fn parse_count(key: &str, v: &str) -> Result<u64> {
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    match v.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
        _ => Err(Error::Usage(format!("{key}: '{v}' is not a non-negative integer"))),
    }
}
