//! Secure key rate per pulse with finite-size corrections.
//!
//! ```text
//! R = Q_z [ A_z (1 - I_E) - f_EC h(E_z)
//!           - 7 sqrt(log2(2/eps_hat) / n_z)
//!           - (2/n_z) log2(1/eps_pa)
//!           - (1/n_z) log2(2/eps_cor) ]
//! ```
//!
//! `A_z = (Q_z - P_m) / Q_z` is the fraction of Z detections that come from
//! single-photon pulses, with `P_m = mu^2 g2 / 2`. `n_z = inf` drops the last
//! three terms exactly.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{self, DetectorParams};
use crate::error::{domain, Error, Result};
use crate::protocol::RfiGrouping;
use crate::optics::Basis;
use crate::simulate::ProtocolMode;
use crate::source::{multi_photon_bound, SourceParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecurityParams {
    pub eps_hat: f64,
    pub eps_pa: f64,
    pub eps_cor: f64,
    pub f_ec: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        SecurityParams { eps_hat: 1e-10, eps_pa: 1e-10, eps_cor: 1e-10, f_ec: 1.1 }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in [
            ("security.eps_hat", self.eps_hat),
            ("security.eps_pa", self.eps_pa),
            ("security.eps_cor", self.eps_cor),
        ] {
            if !(e > 0.0 && e < 1.0) {
                return domain(format!("{name} must be in (0,1), got {e}"));
            }
        }
        if !(self.f_ec >= 1.0) {
            return domain(format!("security.f_ec must be >= 1, got {}", self.f_ec));
        }
        Ok(())
    }
}

/// How the eavesdropper's information on single-photon detections is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IeModel {
    /// `h(E_x)`: the BB84 phase-error bound.
    PhaseError,
    /// `h(E_z)`: reported alongside for comparison only.
    BitError,
    /// Reference-frame-independent bound from `C` and `E_z`.
    Rfi,
}

impl IeModel {
    pub fn default_for(protocol: ProtocolMode) -> IeModel {
        match protocol {
            ProtocolMode::Bb84 => IeModel::PhaseError,
            ProtocolMode::Rfi => IeModel::Rfi,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IeModel::PhaseError => "h_ex",
            IeModel::BitError => "h_ez",
            IeModel::Rfi => "rfi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyRateInput {
    pub q_z: f64,
    pub e_z: f64,
    pub e_x: f64,
    pub e_y: Option<f64>,
    /// RFI correlation quantity; rebuilt from `e_x` as `2(1 - 2 e_x)^2` when
    /// absent.
    pub c: Option<f64>,
    /// Sifted Z block length; `f64::INFINITY` for the asymptotic rate.
    pub n_z: f64,
    pub mu: f64,
    pub g2_pulsed: f64,
    pub protocol: ProtocolMode,
}

impl KeyRateInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_z > 0.0 && self.q_z <= 1.0) {
            return domain(format!("Q_z must be in (0,1], got {}", self.q_z));
        }
        for (name, e) in [("E_z", Some(self.e_z)), ("E_x", Some(self.e_x)), ("E_y", self.e_y)] {
            if let Some(e) = e {
                if !(0.0..=1.0).contains(&e) {
                    return domain(format!("{name} must be in [0,1], got {e}"));
                }
            }
        }
        if let Some(c) = self.c {
            if !(0.0..=2.0).contains(&c) {
                return domain(format!("C must be in [0,2], got {c}"));
            }
        }
        if !(self.n_z >= 1.0) {
            return domain(format!("n_z must be >= 1 or inf, got {}", self.n_z));
        }
        Ok(())
    }

    /// `C` as given, or rebuilt from a uniform phase error `e_x`.
    pub fn c_value(&self) -> f64 {
        self.c.unwrap_or_else(|| c_from_phase_error(self.e_x))
    }
}

/// `C` for a rotation-free channel with the same phase error in X and Y.
pub fn c_from_phase_error(e_x: f64) -> f64 {
    2.0 * (1.0 - 2.0 * e_x).powi(2)
}

/// Each field is a signed contribution to `R` per pulse; they sum to
/// [`KeyRateReport::unclipped`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateTerms {
    /// `Q_z A_z (1 - I_E)`
    pub secrecy: f64,
    /// `-Q_z f_EC h(E_z)`
    pub error_correction: f64,
    /// `-Q_z 7 sqrt(log2(2/eps_hat)/n_z)`
    pub smoothing: f64,
    /// `-Q_z (2/n_z) log2(1/eps_pa)`
    pub privacy_amplification: f64,
    /// `-Q_z (1/n_z) log2(2/eps_cor)`
    pub correctness: f64,
}

impl RateTerms {
    pub fn sum(&self) -> f64 {
        self.secrecy + self.error_correction + self.smoothing + self.privacy_amplification + self.correctness
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyRateReport {
    /// Secure key per pulse, floored at zero.
    pub rate: f64,
    pub unclipped: f64,
    pub clipped: bool,
    pub a_z: f64,
    pub i_e: f64,
    pub ie_model: IeModel,
    pub terms: RateTerms,
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("binary entropy argument must be in [0,1], got {x}"));
    }
    Ok(h(x))
}

fn h(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// Single-photon fraction of the Z detections.
pub fn untagged_ratio(q_z: f64, mu: f64, g2_pulsed: f64) -> Result<f64> {
    let p_m = multi_photon_bound(mu, g2_pulsed)?;
    if !(q_z > p_m) {
        return domain(format!(
            "Q_z = {q_z} does not exceed the multi-photon probability {p_m}; \
             no single-photon fraction can be certified"
        ));
    }
    Ok((q_z - p_m) / q_z)
}

pub fn ie_bb84(e_x: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&e_x) {
        return domain(format!("E_x must be in [0,0.5], got {e_x}"));
    }
    Ok(h(e_x))
}

/// Reference-frame-independent bound on Eve's information.
pub fn ie_rfi(c: f64, e_z: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&c) {
        return domain(format!("C must be in [0,2], got {c}"));
    }
    if !(0.0..=0.5).contains(&e_z) {
        return domain(format!("E_z must be in [0,0.5], got {e_z}"));
    }
    let u = ((c / 2.0).sqrt() / (1.0 - e_z)).min(1.0);
    let first = (1.0 - e_z) * h((1.0 + u) / 2.0);
    if e_z == 0.0 {
        return Ok(first);
    }
    let rest = (c / 2.0 - (1.0 - e_z).powi(2) * u * u).max(0.0);
    let v = (rest.sqrt() / e_z).min(1.0);
    Ok(first + e_z * h((1.0 + v) / 2.0))
}

pub fn eavesdropper_information(input: &KeyRateInput, model: IeModel) -> Result<f64> {
    match model {
        IeModel::PhaseError => ie_bb84(input.e_x),
        IeModel::BitError => ie_bb84(input.e_z),
        IeModel::Rfi => ie_rfi(input.c_value(), input.e_z),
    }
}

/// Key rate with the protocol's default eavesdropper bound.
pub fn secure_key_rate(input: &KeyRateInput, sec: &SecurityParams) -> Result<KeyRateReport> {
    secure_key_rate_with(input, sec, IeModel::default_for(input.protocol))
}

pub fn secure_key_rate_with(input: &KeyRateInput, sec: &SecurityParams, model: IeModel) -> Result<KeyRateReport> {
    input.validate()?;
    sec.validate()?;
    let q = input.q_z;
    let a_z = untagged_ratio(q, input.mu, input.g2_pulsed)?;
    let i_e = eavesdropper_information(input, model)?;
    let h_ez = binary_entropy(input.e_z)?;

    let (smoothing, pa, cor) = if input.n_z.is_infinite() {
        (0.0, 0.0, 0.0)
    } else {
        let n = input.n_z;
        (
            7.0 * ((2.0 / sec.eps_hat).log2() / n).sqrt(),
            2.0 / n * (1.0 / sec.eps_pa).log2(),
            1.0 / n * (2.0 / sec.eps_cor).log2(),
        )
    };
    let terms = RateTerms {
        secrecy: q * a_z * (1.0 - i_e),
        error_correction: penalty(q * sec.f_ec * h_ez),
        smoothing: penalty(q * smoothing),
        privacy_amplification: penalty(q * pa),
        correctness: penalty(q * cor),
    };
    let unclipped = terms.sum();
    Ok(KeyRateReport {
        rate: unclipped.max(0.0),
        unclipped,
        clipped: unclipped < 0.0,
        a_z,
        i_e,
        ie_model: model,
        terms,
    })
}

/// Negated term that reads as `0` rather than `-0` when absent.
fn penalty(x: f64) -> f64 {
    0.0 - x
}

/// Key rate of a grouped free-running RFI run: each group is evaluated on its
/// own statistics and the rates are combined with the group weights. For a
/// finite block each group gets `n_z * weight` of the sifted bits, reusing the
/// single-block finite-size penalties per group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupedKeyRate {
    pub rate: f64,
    pub per_group: Vec<Option<KeyRateReport>>,
    /// Always true for finite blocks: the per-group penalties are an
    /// extrapolation of the single-block analysis.
    pub finite_size_extrapolated: bool,
}

pub fn rfi_grouped_key_rate(
    grouping: &RfiGrouping,
    source: &SourceParams,
    n_z: f64,
    sec: &SecurityParams,
) -> Result<GroupedKeyRate> {
    let mut rate = 0.0;
    let mut per_group = Vec::with_capacity(grouping.groups.len());
    for g in &grouping.groups {
        let s = &g.tallies;
        let report = match (s.gain(Basis::Z), s.qber(Basis::Z), g.c_statistic()) {
            (Some(q_z), Some(e_z), Ok(c)) if g.weight > 0.0 && q_z > 0.0 => {
                let input = KeyRateInput {
                    q_z,
                    e_z: e_z.min(0.5),
                    e_x: s.qber(Basis::X).unwrap_or(0.5).min(0.5),
                    e_y: s.qber(Basis::Y),
                    c: Some(c.min(2.0)),
                    n_z: if n_z.is_infinite() { n_z } else { (n_z * g.weight).max(1.0) },
                    mu: source.mu,
                    g2_pulsed: source.g2_pulsed,
                    protocol: ProtocolMode::Rfi,
                };
                match secure_key_rate(&input, sec) {
                    Ok(r) => Some(r),
                    Err(Error::Domain(msg)) => {
                        log::warn!("group at theta={:.3} contributes no key: {msg}", g.theta);
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        if let Some(r) = &report {
            rate += g.weight * r.rate;
        }
        per_group.push(report);
    }
    Ok(GroupedKeyRate { rate, per_group, finite_size_extrapolated: n_z.is_finite() })
}

/// Model parameters for key rate versus channel loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepParams {
    pub mu: f64,
    pub g2_pulsed: f64,
    pub eta_z: f64,
    pub eta_x: f64,
    /// Misalignment error of time-bin states (before noise).
    pub e_z: f64,
    /// Misalignment error of phase states (before noise).
    pub e_x: f64,
    /// Noise click probability per gate and detection channel.
    pub p_noise: f64,
    pub q_z_alice: f64,
    pub q_z_bob: f64,
    pub protocol: ProtocolMode,
    pub security: SecurityParams,
}

impl Default for SweepParams {
    /// Parameters measured on the back-to-back link.
    fn default() -> Self {
        SweepParams {
            mu: 8.955e-5,
            g2_pulsed: 0.356,
            eta_z: 0.182,
            eta_x: 0.0784,
            e_z: 0.0089,
            e_x: 0.0188,
            p_noise: DetectorParams::default().dark_prob,
            q_z_alice: 0.5,
            q_z_bob: 0.5,
            protocol: ProtocolMode::Bb84,
            security: SecurityParams::default(),
        }
    }
}

/// Block sizes (pulses sent) plotted against loss; infinity is the
/// asymptotic curve.
pub const DEFAULT_BLOCK_SIZES: [f64; 4] = [1e10, 1e12, 1e14, f64::INFINITY];

impl SweepParams {
    fn source(&self) -> SourceParams {
        SourceParams { mu: self.mu, g2_pulsed: self.g2_pulsed, ..SourceParams::default() }
    }

    /// Closed-form key-rate input at `loss_db` for a block of `block_size`
    /// pulses.
    pub fn input_at(&self, loss_db: f64, block_size: f64) -> Result<KeyRateInput> {
        let t = channel::transmittance(loss_db)?;
        let src = self.source();
        let noise = channel::noise_total(self.p_noise);
        let s_z = channel::signal_gain(&src, t, self.eta_z)?;
        let s_x = channel::signal_gain(&src, t, self.eta_x)?;
        let q_z = s_z + noise;
        let e_z = channel::expected_qber(self.e_z, s_z, noise)?;
        let e_x = channel::expected_qber(self.e_x, s_x, noise)?;
        if !(block_size > 0.0) {
            return domain(format!("block size must be > 0, got {block_size}"));
        }
        let n_z = if block_size.is_infinite() {
            f64::INFINITY
        } else {
            (block_size * self.q_z_alice * self.q_z_bob * q_z).max(1.0)
        };
        Ok(KeyRateInput {
            q_z,
            e_z,
            e_x,
            e_y: None,
            c: None,
            n_z,
            mu: self.mu,
            g2_pulsed: self.g2_pulsed,
            protocol: self.protocol,
        })
    }

    pub fn rate_at(&self, loss_db: f64, block_size: f64) -> Result<KeyRateReport> {
        secure_key_rate(&self.input_at(loss_db, block_size)?, &self.security)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub loss_db: f64,
    pub block_size: f64,
    pub rate: f64,
    pub clipped: bool,
}

/// Evaluates every (block size, loss) pair. Output is ordered by block size
/// then loss, following the input order.
pub fn sweep_loss(params: &SweepParams, losses: &[f64], block_sizes: &[f64]) -> Result<Vec<SweepPoint>> {
    if losses.is_empty() || block_sizes.is_empty() {
        return domain("sweep grid is empty");
    }
    let grid: Vec<(f64, f64)> = block_sizes
        .iter()
        .flat_map(|&n| losses.iter().map(move |&l| (n, l)))
        .collect();
    grid.par_iter()
        .map(|&(n, loss)| {
            let r = params.rate_at(loss, n)?;
            Ok(SweepPoint { loss_db: loss, block_size: n, rate: r.rate, clipped: r.clipped })
        })
        .collect()
}

/// Evenly spaced grid `start, start+step, ..., <= stop`.
pub fn loss_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return domain(format!("bad loss grid {start}..{stop} step {step}"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

/// Largest loss (dB) with a positive key rate, by bisection on
/// `[0, max_loss_db]`. `None` when no key is produced even at zero loss.
pub fn cutoff_loss(params: &SweepParams, block_size: f64, max_loss_db: f64) -> Result<Option<f64>> {
    let positive = |l: f64| -> Result<bool> { Ok(params.rate_at(l, block_size)?.unclipped > 0.0) };
    if !positive(0.0)? {
        return Ok(None);
    }
    if positive(max_loss_db)? {
        return Ok(Some(max_loss_db));
    }
    let (mut lo, mut hi) = (0.0, max_loss_db);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if positive(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}
