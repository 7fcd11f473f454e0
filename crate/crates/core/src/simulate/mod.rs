//! Per-pulse Monte Carlo of the source -> encoder -> fibre -> analyser ->
//! detector chain.
//!
//! Every pulse draws from its own counter-based stream (see [`rng`]), so a run
//! is a pure function of `(seed, config, params)` no matter how the pulses
//! are split across blocks or worker threads.

pub mod rng;
pub mod tally;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams, DetectorParams};
use crate::error::{domain, Error, Result};
use crate::optics::{detection_distribution, Basis, OpticsParams, QubitState};
use crate::source::{photon_number_distribution, PhotonNumberDist, SourceParams};

pub use rng::PulseStreams;
pub use tally::{read_sliced_csv, write_sliced_csv, Outcome, TallySet};

/// Pulses handed to a worker at a time.
const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolMode {
    Bb84,
    Rfi,
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolMode::Bb84 => "bb84",
            ProtocolMode::Rfi => "rfi",
        })
    }
}

impl FromStr for ProtocolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bb84" => Ok(ProtocolMode::Bb84),
            "rfi" => Ok(ProtocolMode::Rfi),
            other => domain(format!("unknown protocol {other:?}; expected bb84 or rfi")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n_pulses: u64,
    pub seed: u64,
    /// Probability that Alice prepares a Z state. The rest goes to X (BB84)
    /// or is split evenly between X and Y (RFI).
    pub q_z_alice: f64,
    pub q_z_bob: f64,
    pub protocol_mode: ProtocolMode,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            n_pulses: 1_000_000,
            seed: 0,
            q_z_alice: 0.5,
            q_z_bob: 0.5,
            protocol_mode: ProtocolMode::Bb84,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pulses == 0 {
            return domain("sim.n_pulses must be > 0");
        }
        for (name, q) in [("sim.q_z_alice", self.q_z_alice), ("sim.q_z_bob", self.q_z_bob)] {
            if !(q > 0.0 && q < 1.0) {
                return domain(format!("{name} must be in (0,1), got {q}"));
            }
        }
        Ok(())
    }

    /// Probability of each basis (Z, X, Y) for a party with Z-probability `q_z`.
    pub fn basis_probs(&self, q_z: f64) -> [f64; 3] {
        match self.protocol_mode {
            ProtocolMode::Bb84 => [q_z, 1.0 - q_z, 0.0],
            ProtocolMode::Rfi => [q_z, (1.0 - q_z) / 2.0, (1.0 - q_z) / 2.0],
        }
    }
}

/// All physical parameters of a link.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkParams {
    pub source: SourceParams,
    pub optics: OpticsParams,
    pub channel: ChannelParams,
    pub detector: DetectorParams,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.optics.validate()?;
        self.channel.validate()?;
        self.detector.validate()
    }

    /// Noise click probability per gate and detection channel.
    pub fn noise_per_channel(&self) -> Result<f64> {
        channel::noise_prob_per_gate(self.channel.background_rate, &self.detector)
    }
}

/// Closed-form gain and error rate for matched-basis measurements, used as
/// the oracle for the Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub gain: f64,
    pub qber: f64,
}

pub fn predict(link: &LinkParams, basis: Basis) -> Result<Prediction> {
    link.validate()?;
    let t = link.channel.transmittance()?;
    let noise = channel::noise_total(link.noise_per_channel()?);
    let signal = channel::signal_gain(&link.source, t, link.optics.efficiency(basis))?;
    Ok(Prediction {
        gain: signal + noise,
        qber: channel::expected_qber(link.optics.effective_error(basis), signal, noise)?,
    })
}

/// Cumulative thresholds for one photon: `[bit0, bit0+bit1, arrival]`.
type PhotonThresholds = [f64; 3];

/// Everything a pulse needs, precomputed from the parameters.
#[derive(Debug, Clone)]
struct PulseModel {
    alice_cdf: [f64; 2],
    bob_cdf: [f64; 2],
    photons: PhotonNumberDist,
    noise: f64,
    /// Indexed by [alice basis][alice bit][bob basis].
    thresholds: [[[PhotonThresholds; 3]; 2]; 3],
}

fn cdf(p: [f64; 3]) -> [f64; 2] {
    [p[0], p[0] + p[1]]
}

#[inline]
fn pick_basis(cdf: &[f64; 2], u: f64) -> Basis {
    if u < cdf[0] {
        Basis::Z
    } else if u < cdf[1] {
        Basis::X
    } else {
        Basis::Y
    }
}

impl PulseModel {
    fn new(cfg: &TrialConfig, link: &LinkParams, phase_offset: f64) -> Result<Self> {
        cfg.validate()?;
        link.validate()?;
        let photons = photon_number_distribution(&link.source)?;
        let t = link.channel.transmittance()?;
        for basis in [Basis::Z, Basis::X] {
            channel::signal_gain(&link.source, t, link.optics.efficiency(basis))?;
        }
        let noise = link.noise_per_channel()?;

        let mut thresholds = [[[[0.0; 3]; 3]; 2]; 3];
        for a in Basis::ALL {
            for bit in [false, true] {
                for b in Basis::ALL {
                    let arrive = t * link.optics.arrival_efficiency(b);
                    let d = detection_distribution(QubitState::new(a, bit), b, phase_offset, &link.optics);
                    thresholds[a.index()][usize::from(bit)][b.index()] =
                        [arrive * d.bit0, arrive * (d.bit0 + d.bit1), arrive];
                }
            }
        }
        Ok(PulseModel {
            alice_cdf: cdf(cfg.basis_probs(cfg.q_z_alice)),
            bob_cdf: cdf(cfg.basis_probs(cfg.q_z_bob)),
            photons,
            noise,
            thresholds,
        })
    }

    #[inline]
    fn pulse<R: RngCore>(&self, rng: &mut R, tally: &mut TallySet) {
        let alice = pick_basis(&self.alice_cdf, rng.random());
        let bit = rng.next_u64() & 1 == 1;
        let bob = pick_basis(&self.bob_cdf, rng.random());
        let n_photons = self.photons.photon_number(rng.random());

        let th = &self.thresholds[alice.index()][usize::from(bit)][bob.index()];
        let (mut click0, mut click1, mut satellite) = (false, false, false);
        for _ in 0..n_photons {
            let u: f64 = rng.random();
            if u < th[0] {
                click0 = true;
            } else if u < th[1] {
                click1 = true;
            } else if u < th[2] {
                satellite = true;
            }
        }
        click0 |= rng.random::<f64>() < self.noise;
        click1 |= rng.random::<f64>() < self.noise;

        let outcome = match (click0, click1) {
            // squash double clicks to a random bit
            (true, true) => Outcome::bit(rng.next_u64() & 1 == 1),
            (true, false) => Outcome::Bit0,
            (false, true) => Outcome::Bit1,
            (false, false) if satellite => Outcome::Inconclusive,
            (false, false) => Outcome::NoClick,
        };
        tally.record(alice, bit, bob, outcome, 1);
    }

    fn run_range(&self, streams: PulseStreams, start: u64, end: u64) -> TallySet {
        let n_chunks = (end - start).div_ceil(CHUNK);
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = start + c * CHUNK;
                let hi = (lo + CHUNK).min(end);
                let mut tally = TallySet::new();
                for i in lo..hi {
                    self.pulse(&mut streams.pulse(i), &mut tally);
                }
                tally
            })
            .reduce(TallySet::new, |a, b| a + b)
    }
}

impl PulseModel {
    /// Exact outcome probabilities `[bit0, bit1, inconclusive, no-click]` for
    /// one preparation, enumerating photon fates instead of sampling them.
    fn outcome_probs(&self, alice: Basis, bit: bool, bob: Basis) -> [f64; 4] {
        let th = &self.thresholds[alice.index()][usize::from(bit)][bob.index()];
        // per-photon fates: channel 0, channel 1, satellite, lost
        let fate = [th[0], th[1] - th[0], th[2] - th[1], 1.0 - th[2]];
        let p_n = [self.photons.p0, self.photons.p1, self.photons.p2];
        let mut out = [0.0; 4];
        for (n, &pn) in p_n.iter().enumerate() {
            // joint probability of (hit 0, hit 1, any satellite) after n photons
            let mut states = vec![((false, false, false), pn)];
            for _ in 0..n {
                let mut next = Vec::with_capacity(states.len() * 4);
                for &((c0, c1, s), p) in &states {
                    next.push(((true, c1, s), p * fate[0]));
                    next.push(((c0, true, s), p * fate[1]));
                    next.push(((c0, c1, true), p * fate[2]));
                    next.push(((c0, c1, s), p * fate[3]));
                }
                states = next;
            }
            for ((c0, c1, sat), p) in states {
                for (n0, q0) in [(true, self.noise), (false, 1.0 - self.noise)] {
                    for (n1, q1) in [(true, self.noise), (false, 1.0 - self.noise)] {
                        let w = p * q0 * q1;
                        match (c0 || n0, c1 || n1) {
                            (true, true) => {
                                out[0] += w / 2.0;
                                out[1] += w / 2.0;
                            }
                            (true, false) => out[0] += w,
                            (false, true) => out[1] += w,
                            (false, false) if sat => out[2] += w,
                            (false, false) => out[3] += w,
                        }
                    }
                }
            }
        }
        out
    }
}

/// Expected tally for `n_pulses` pulses, rounded to whole counts, with the
/// phase frames rotated by `phase_offset`. Useful as a noise-free reference
/// for the estimators.
pub fn expected_tally(cfg: &TrialConfig, link: &LinkParams, n_pulses: f64, phase_offset: f64) -> Result<TallySet> {
    let model = PulseModel::new(cfg, link, phase_offset)?;
    let pa = cfg.basis_probs(cfg.q_z_alice);
    let pb = cfg.basis_probs(cfg.q_z_bob);
    let mut tally = TallySet::new();
    for a in Basis::ALL {
        for bit in [false, true] {
            for b in Basis::ALL {
                let prep = n_pulses * pa[a.index()] * 0.5 * pb[b.index()];
                for (o, p) in Outcome::ALL.into_iter().zip(model.outcome_probs(a, bit, b)) {
                    tally.record(a, bit, b, o, (prep * p).round() as u64);
                }
            }
        }
    }
    Ok(tally)
}

/// Simulates `cfg.n_pulses` pulses over the link on the current rayon pool.
pub fn run(cfg: &TrialConfig, link: &LinkParams) -> Result<TallySet> {
    let model = PulseModel::new(cfg, link, 0.0)?;
    Ok(model.run_range(PulseStreams::new(cfg.seed), 0, cfg.n_pulses))
}

/// Like [`run`] but on a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &TrialConfig, link: &LinkParams, threads: usize) -> Result<TallySet> {
    with_threads(threads, || run(cfg, link))
}

pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot build a pool of {threads} threads: {e}")))?;
    pool.install(f)
}

/// Pulse ranges of `n_blocks` consecutive blocks; the last one may be short.
pub fn block_ranges(n_pulses: u64, n_blocks: usize) -> Result<Vec<(u64, u64)>> {
    if n_blocks == 0 {
        return domain("number of blocks must be > 0");
    }
    let size = n_pulses.div_ceil(n_blocks as u64).max(1);
    Ok((0..n_blocks as u64)
        .map(|k| ((k * size).min(n_pulses), ((k + 1) * size).min(n_pulses)))
        .collect())
}

/// Splits a run into consecutive blocks. The element-wise sum of the blocks
/// equals [`run`] on the same config.
pub fn split_run(cfg: &TrialConfig, link: &LinkParams, n_blocks: usize) -> Result<Vec<TallySet>> {
    split_run_with_phase(cfg, link, n_blocks, |_| 0.0)
}

/// [`split_run`] with an extra phase-frame rotation for each block, e.g. a
/// slow interferometer drift.
pub fn split_run_with_phase(
    cfg: &TrialConfig,
    link: &LinkParams,
    n_blocks: usize,
    block_phase: impl Fn(usize) -> f64 + Sync,
) -> Result<Vec<TallySet>> {
    cfg.validate()?;
    let ranges = block_ranges(cfg.n_pulses, n_blocks)?;
    let streams = PulseStreams::new(cfg.seed);
    ranges
        .iter()
        .enumerate()
        .map(|(k, &(lo, hi))| {
            let model = PulseModel::new(cfg, link, block_phase(k))?;
            Ok(model.run_range(streams, lo, hi))
        })
        .collect()
}
