//! Time-bin / phase state preparation and measurement.
//!
//! Z states are early/late time bins. X and Y states are equal superpositions
//! of the two bins with relative phase {0, pi} and {pi/2, 3pi/2}. Bob's
//! unbalanced interferometer spreads a photon over three arrival slots: the
//! middle slot interferes (weight 1/2), the two satellites do not (1/4 each)
//! and are discarded as inconclusive.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
    Y,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::Z, Basis::X, Basis::Y];

    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
            Basis::Y => 2,
        }
    }

    pub fn is_phase(self) -> bool {
        !matches!(self, Basis::Z)
    }

    /// Phase of the bit-0 state for phase bases.
    fn phase_origin(self) -> f64 {
        match self {
            Basis::Z | Basis::X => 0.0,
            Basis::Y => FRAC_PI_2,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
            Basis::Y => "Y",
        })
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Z" | "z" => Ok(Basis::Z),
            "X" | "x" => Ok(Basis::X),
            "Y" | "y" => Ok(Basis::Y),
            other => domain(format!("invalid basis tag {other:?}; expected Z, X or Y")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QubitState {
    pub basis: Basis,
    pub bit: bool,
}

impl QubitState {
    pub fn new(basis: Basis, bit: bool) -> Self {
        QubitState { basis, bit }
    }

    /// Relative phase between late and early bins (phase bases only).
    pub fn phase(&self) -> f64 {
        self.basis.phase_origin() + if self.bit { PI } else { 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsParams {
    pub v_peak: f64,
    /// Path-mismatch scale of the visibility decay, µm.
    pub envelope_length: f64,
    /// Current interferometer path mismatch, µm.
    pub delay_mismatch: f64,
    /// Conclusive detection efficiency for time-bin measurements.
    pub eta_z: f64,
    /// Conclusive detection efficiency for phase measurements. Includes the
    /// interferometer's excess loss and the discarded satellite slots.
    pub eta_x: f64,
    pub intrinsic_e_z: f64,
    pub intrinsic_e_x: f64,
    /// Slow rotation between the sender's and receiver's phase frames, rad.
    pub phase_offset: f64,
}

/// Envelope scale at which a 0.98 peak visibility falls to 0.5 after 57.4 µm.
pub fn envelope_from_half_point(v_peak: f64, half_point_um: f64) -> f64 {
    half_point_um / (v_peak / 0.5).ln()
}

impl Default for OpticsParams {
    /// Local back-to-back link: 98 % peak visibility, 0.89 % / 1.88 % total
    /// time-bin / phase errors at zero path mismatch.
    fn default() -> Self {
        let v_peak = 0.98;
        OpticsParams {
            v_peak,
            envelope_length: envelope_from_half_point(v_peak, 57.4),
            delay_mismatch: 0.0,
            eta_z: 0.182,
            eta_x: 0.0784,
            intrinsic_e_z: 0.0089,
            // combines with (1 - 0.98) / 2 = 0.01 to a total of 0.0188
            intrinsic_e_x: (0.0188 - 0.01) / (1.0 - 2.0 * 0.01),
            phase_offset: 0.0,
        }
    }
}

/// Fraction of photons that land in the interfering slot of a phase
/// measurement.
pub const CONCLUSIVE_FRACTION_PHASE: f64 = 0.5;

impl OpticsParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.v_peak) {
            return domain(format!("optics.v_peak must be in [0,1], got {}", self.v_peak));
        }
        if !(self.envelope_length > 0.0) {
            return domain(format!("optics.envelope_um must be > 0, got {}", self.envelope_length));
        }
        if !(self.delay_mismatch >= 0.0) {
            return domain(format!(
                "optics.delay_mismatch_um must be >= 0, got {}",
                self.delay_mismatch
            ));
        }
        if !(0.0 <= self.eta_x && self.eta_x <= self.eta_z && self.eta_z <= 1.0) {
            return domain(format!(
                "need 0 <= optics.eta_x <= optics.eta_z <= 1 (eta_x={}, eta_z={})",
                self.eta_x, self.eta_z
            ));
        }
        if self.eta_x > CONCLUSIVE_FRACTION_PHASE {
            return domain(format!(
                "optics.eta_x = {} exceeds the interfering-slot fraction {}",
                self.eta_x, CONCLUSIVE_FRACTION_PHASE
            ));
        }
        for (name, e) in [
            ("optics.e_z_intrinsic", self.intrinsic_e_z),
            ("optics.e_x_intrinsic", self.intrinsic_e_x),
        ] {
            if !(0.0..=0.5).contains(&e) {
                return domain(format!("{name} must be in [0, 0.5], got {e}"));
            }
        }
        if !self.phase_offset.is_finite() {
            return domain("optics.phase_offset_rad must be finite");
        }
        Ok(())
    }

    pub fn visibility(&self) -> f64 {
        fringe_visibility(self.delay_mismatch, self)
    }

    /// Conclusive detection efficiency for a measurement basis.
    pub fn efficiency(&self, basis: Basis) -> f64 {
        if basis.is_phase() {
            self.eta_x
        } else {
            self.eta_z
        }
    }

    /// Probability that a photon reaches Bob's detectors at all; phase
    /// measurements lose half of those to the satellite slots.
    pub fn arrival_efficiency(&self, basis: Basis) -> f64 {
        if basis.is_phase() {
            self.eta_x / CONCLUSIVE_FRACTION_PHASE
        } else {
            self.eta_z
        }
    }

    /// Matched-basis error probability, conditional on a conclusive click.
    pub fn effective_error(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.intrinsic_e_z,
            Basis::X | Basis::Y => {
                let vis = (1.0 - self.visibility()) / 2.0;
                compose_flips(self.intrinsic_e_x, vis)
            }
        }
    }
}

/// Probability of an odd number of flips from two independent bit flips.
pub fn compose_flips(a: f64, b: f64) -> f64 {
    a + b - 2.0 * a * b
}

/// Exponential visibility envelope `v_peak * exp(-mismatch / envelope)`.
pub fn fringe_visibility(delay_mismatch: f64, params: &OpticsParams) -> f64 {
    params.v_peak * (-delay_mismatch.max(0.0) / params.envelope_length).exp()
}

pub fn phase_error_from_visibility(visibility: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&visibility) {
        return domain(format!("visibility must be in [0,1], got {visibility}"));
    }
    Ok((1.0 - visibility) / 2.0)
}

/// Outcome probabilities for a photon reaching Bob's analyser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeDist {
    pub bit0: f64,
    pub bit1: f64,
    pub inconclusive: f64,
}

impl OutcomeDist {
    pub fn total(&self) -> f64 {
        self.bit0 + self.bit1 + self.inconclusive
    }

    /// Probability of the wrong bit given a conclusive outcome.
    pub fn conditional_error(&self, sent: bool) -> f64 {
        let wrong = if sent { self.bit0 } else { self.bit1 };
        wrong / (self.bit0 + self.bit1)
    }
}

/// Where a photon prepared in `state` lands when Bob measures in
/// `bob_basis`, with the phase frames rotated by `phase_offset` (added to the
/// configured `params.phase_offset`).
pub fn detection_distribution(
    state: QubitState,
    bob_basis: Basis,
    phase_offset: f64,
    params: &OpticsParams,
) -> OutcomeDist {
    match (state.basis, bob_basis) {
        (Basis::Z, Basis::Z) => {
            let e = params.intrinsic_e_z;
            let (right, wrong) = (1.0 - e, e);
            if state.bit {
                OutcomeDist { bit0: wrong, bit1: right, inconclusive: 0.0 }
            } else {
                OutcomeDist { bit0: right, bit1: wrong, inconclusive: 0.0 }
            }
        }
        // arrival time of a phase state is uniform over the two bins
        (_, Basis::Z) => OutcomeDist { bit0: 0.5, bit1: 0.5, inconclusive: 0.0 },
        // a single time bin in the middle slot carries no phase reference
        (Basis::Z, _) => OutcomeDist { bit0: 0.25, bit1: 0.25, inconclusive: 0.5 },
        (_, _) => {
            let contrast = 1.0 - 2.0 * params.effective_error(bob_basis);
            let delta = state.phase() - bob_basis.phase_origin() + params.phase_offset + phase_offset;
            let p0 = 0.5 * (1.0 + contrast * delta.cos());
            OutcomeDist {
                bit0: CONCLUSIVE_FRACTION_PHASE * p0,
                bit1: CONCLUSIVE_FRACTION_PHASE * (1.0 - p0),
                inconclusive: 1.0 - CONCLUSIVE_FRACTION_PHASE,
            }
        }
    }
}

/// Error rate of polarisation encoding through a fibre with differential
/// group delay `dgd_ps`, for a source of coherence time `coherence_time_ps`.
pub fn pmd_polarization_qber(dgd_ps: f64, coherence_time_ps: f64, intrinsic_error: f64) -> f64 {
    let decay = if coherence_time_ps > 0.0 {
        (-dgd_ps / coherence_time_ps).exp()
    } else if dgd_ps > 0.0 {
        0.0
    } else {
        1.0
    };
    0.5 * (1.0 - (1.0 - 2.0 * intrinsic_error) * decay)
}
