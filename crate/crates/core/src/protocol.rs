//! Classical post-processing of detection tallies.
//!
//! Time-bin (Z) detections form the raw key; the phase bases only monitor the
//! channel. For the reference-frame-independent protocol the four X/Y
//! cross-correlators are combined into the rotation-invariant quantity
//! `C = <XX>^2 + <XY>^2 + <YX>^2 + <YY>^2`.

use std::f64::consts::TAU;
use std::ops::{Add, AddAssign};

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::optics::Basis;
use crate::simulate::{Outcome, TallySet};

/// Number of equal-width misalignment bins over `[0, 2pi)`.
pub const RFI_GROUPS: usize = 12;

/// Counts for one (alice basis, bob basis) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CellStats {
    /// Pulses sent with this basis pair.
    pub pulses: u64,
    /// Conclusive outcomes (bit 0 or bit 1).
    pub conclusive: u64,
    /// Conclusive outcomes where Bob's bit equals Alice's.
    pub agree: u64,
}

impl CellStats {
    pub fn disagree(&self) -> u64 {
        self.conclusive - self.agree
    }

    /// `(n_agree - n_disagree) / (n_agree + n_disagree)`.
    pub fn correlator(&self) -> Option<f64> {
        (self.conclusive > 0).then(|| (self.agree as f64 - self.disagree() as f64) / self.conclusive as f64)
    }
}

impl AddAssign for CellStats {
    fn add_assign(&mut self, rhs: Self) {
        self.pulses += rhs.pulses;
        self.conclusive += rhs.conclusive;
        self.agree += rhs.agree;
    }
}

/// Sifted statistics for every preparation/measurement basis pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SiftedResult {
    cells: [[CellStats; 3]; 3],
}

impl SiftedResult {
    pub fn cell(&self, alice: Basis, bob: Basis) -> CellStats {
        self.cells[alice.index()][bob.index()]
    }

    pub fn cell_mut(&mut self, alice: Basis, bob: Basis) -> &mut CellStats {
        &mut self.cells[alice.index()][bob.index()]
    }

    /// Sifted conclusive counts in basis `b`.
    pub fn n(&self, b: Basis) -> u64 {
        self.cell(b, b).conclusive
    }

    /// Sifted errors in basis `b`.
    pub fn err(&self, b: Basis) -> u64 {
        self.cell(b, b).disagree()
    }

    /// Conclusive detections per pulse sent and measured in basis `b`.
    pub fn gain(&self, b: Basis) -> Option<f64> {
        let c = self.cell(b, b);
        (c.pulses > 0).then(|| c.conclusive as f64 / c.pulses as f64)
    }

    pub fn qber(&self, b: Basis) -> Option<f64> {
        let n = self.n(b);
        (n > 0).then(|| self.err(b) as f64 / n as f64)
    }

    /// Signed correlator for prepare-`a` / measure-`b`.
    pub fn correlator(&self, a: Basis, b: Basis) -> Result<f64> {
        self.cell(a, b).correlator().ok_or_else(|| {
            Error::InsufficientStatistics(format!("no conclusive counts in the {a}{b} cell"))
        })
    }

    /// Conclusive counts over every cell.
    pub fn total_conclusive(&self) -> u64 {
        self.cells.iter().flatten().map(|c| c.conclusive).sum()
    }
}

impl AddAssign for SiftedResult {
    fn add_assign(&mut self, rhs: Self) {
        for (row, rrow) in self.cells.iter_mut().zip(rhs.cells) {
            for (c, rc) in row.iter_mut().zip(rrow) {
                *c += rc;
            }
        }
    }
}

impl Add for SiftedResult {
    type Output = SiftedResult;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for SiftedResult {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(SiftedResult::default(), Add::add)
    }
}

/// Keeps conclusive outcomes and counts agreements per basis pair. Matched
/// pairs give the sifted key statistics; mismatched phase pairs feed the
/// reference-frame-independent estimators.
pub fn sift(tally: &TallySet) -> SiftedResult {
    let mut out = SiftedResult::default();
    for a in Basis::ALL {
        for b in Basis::ALL {
            let cell = out.cell_mut(a, b);
            for bit in [false, true] {
                let right = tally.get(a, bit, b, Outcome::bit(bit));
                let wrong = tally.get(a, bit, b, Outcome::bit(!bit));
                cell.pulses += tally.prepared(a, bit, b);
                cell.conclusive += right + wrong;
                cell.agree += right;
            }
        }
    }
    out
}

/// Removes the noise contribution from a measured gain and error rate,
/// assuming noise clicks are wrong half of the time.
pub fn background_correct(gain: f64, qber: f64, p_noise_total: f64) -> Result<(f64, f64)> {
    if !(p_noise_total >= 0.0) {
        return domain(format!("noise probability must be >= 0, got {p_noise_total}"));
    }
    if !(gain > p_noise_total) {
        return domain(format!(
            "gain {gain} does not exceed the noise level {p_noise_total}; the signal is buried"
        ));
    }
    let corrected = gain - p_noise_total;
    let e = ((qber * gain - 0.5 * p_noise_total) / corrected).clamp(0.0, 0.5);
    Ok((corrected, e))
}

/// Inverse of [`background_correct`] (exact when no clamping occurred).
pub fn background_uncorrect(gain_corrected: f64, qber_corrected: f64, p_noise_total: f64) -> (f64, f64) {
    let gain = gain_corrected + p_noise_total;
    (gain, (qber_corrected * gain_corrected + 0.5 * p_noise_total) / gain)
}

/// Misalignment angle `atan2(<XY>, <XX>)` in `[0, 2pi)`.
pub fn estimate_theta(sifted: &SiftedResult) -> Result<f64> {
    let xx = sifted.correlator(Basis::X, Basis::X)?;
    let xy = sifted.correlator(Basis::X, Basis::Y)?;
    Ok(xy.atan2(xx).rem_euclid(TAU))
}

pub fn c_statistic(sifted: &SiftedResult) -> Result<f64> {
    let mut c = 0.0;
    for a in [Basis::X, Basis::Y] {
        for b in [Basis::X, Basis::Y] {
            c += sifted.correlator(a, b)?.powi(2);
        }
    }
    Ok(c)
}

/// Data slices whose misalignment angle falls into one bin.
#[derive(Debug, Clone, Serialize)]
pub struct RfiGroup {
    /// Misalignment estimated from the pooled tallies of the group, or the
    /// bin centre when the group has too few phase-basis counts.
    pub theta: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub tallies: SiftedResult,
    /// Fraction of all conclusive counts (over included slices) in this group.
    pub weight: f64,
    pub n_slices: usize,
}

impl RfiGroup {
    pub fn c_statistic(&self) -> Result<f64> {
        c_statistic(&self.tallies)
    }

    /// Phase error seen in a frame aligned with the group's misalignment,
    /// `(1 - sqrt(C/2)) / 2`.
    pub fn aligned_phase_error(&self) -> Result<f64> {
        Ok((1.0 - (self.c_statistic()? / 2.0).min(1.0).sqrt()) / 2.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RfiGrouping {
    /// Always [`RFI_GROUPS`] entries, in bin order.
    pub groups: Vec<RfiGroup>,
    /// Indices of slices dropped because their angle could not be estimated.
    pub skipped: Vec<usize>,
}

impl RfiGrouping {
    pub fn total(&self) -> SiftedResult {
        self.groups.iter().map(|g| g.tallies).sum()
    }
}

pub fn theta_bin(theta: f64) -> usize {
    let width = TAU / RFI_GROUPS as f64;
    ((theta.rem_euclid(TAU) / width) as usize).min(RFI_GROUPS - 1)
}

/// Bins slices into [`RFI_GROUPS`] equal misalignment bins over `[0, 2pi)`
/// and pools the tallies within each bin.
pub fn rfi_group(slices: &[SiftedResult]) -> Result<RfiGrouping> {
    let width = TAU / RFI_GROUPS as f64;
    let mut pooled = [SiftedResult::default(); RFI_GROUPS];
    let mut counts = [0usize; RFI_GROUPS];
    let mut skipped = Vec::new();

    for (k, slice) in slices.iter().enumerate() {
        match estimate_theta(slice) {
            Ok(theta) => {
                let bin = theta_bin(theta);
                pooled[bin] += *slice;
                counts[bin] += 1;
            }
            Err(e) => {
                log::warn!("slice {k} skipped: {e}");
                skipped.push(k);
            }
        }
    }

    let total: u64 = pooled.iter().map(SiftedResult::total_conclusive).sum();
    if total == 0 {
        return Err(Error::InsufficientStatistics(format!(
            "no usable slices among {} (all lacked X/Y statistics)",
            slices.len()
        )));
    }
    let groups = (0..RFI_GROUPS)
        .map(|k| {
            let tallies = pooled[k];
            let lo = k as f64 * width;
            RfiGroup {
                theta: estimate_theta(&tallies).unwrap_or(lo + width / 2.0),
                bin_lo: lo,
                bin_hi: lo + width,
                tallies,
                weight: tallies.total_conclusive() as f64 / total as f64,
                n_slices: counts[k],
            }
        })
        .collect();
    Ok(RfiGrouping { groups, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Exact (real-valued) X/Y cells for contrast `c` rotated by `theta`,
    /// scaled to `n` conclusive counts per cell. Kept as floats to test the
    /// estimators without rounding.
    fn rotated(c: f64, theta: f64, n: u64) -> SiftedResult {
        let corr = |a: Basis, b: Basis| match (a, b) {
            (Basis::X, Basis::X) | (Basis::Y, Basis::Y) => c * theta.cos(),
            (Basis::X, Basis::Y) => c * theta.sin(),
            _ => -c * theta.sin(),
        };
        let mut s = SiftedResult::default();
        for a in [Basis::X, Basis::Y] {
            for b in [Basis::X, Basis::Y] {
                let agree = ((1.0 + corr(a, b)) / 2.0 * n as f64).round() as u64;
                *s.cell_mut(a, b) = CellStats { pulses: 4 * n, conclusive: n, agree };
            }
        }
        s
    }

    fn correlators_exact(c: f64, theta: f64) -> [f64; 4] {
        [c * theta.cos(), c * theta.sin(), -c * theta.sin(), c * theta.cos()]
    }

    #[test]
    fn sift_counts_errors() {
        let mut t = TallySet::new();
        t.record(Basis::Z, false, Basis::Z, Outcome::Bit0, 90);
        t.record(Basis::Z, false, Basis::Z, Outcome::Bit1, 10);
        t.record(Basis::Z, false, Basis::Z, Outcome::NoClick, 900);
        t.record(Basis::X, true, Basis::X, Outcome::Bit1, 50);
        t.record(Basis::X, true, Basis::X, Outcome::Inconclusive, 50);
        t.record(Basis::X, true, Basis::Z, Outcome::Bit0, 7);
        let s = sift(&t);
        assert_eq!(s.n(Basis::Z), 100);
        assert_eq!(s.err(Basis::Z), 10);
        assert_relative_eq!(s.gain(Basis::Z).unwrap(), 0.1);
        assert_relative_eq!(s.qber(Basis::Z).unwrap(), 0.1);
        assert_eq!(s.err(Basis::X), 0);
        assert_relative_eq!(s.gain(Basis::X).unwrap(), 0.5);
        assert_eq!(s.cell(Basis::X, Basis::Z).conclusive, 7);
        assert!(s.gain(Basis::Y).is_none());
    }

    #[test]
    fn all_correct_and_all_flipped() {
        let mut ok = TallySet::new();
        let mut flipped = TallySet::new();
        for b in Basis::ALL {
            for bit in [false, true] {
                ok.record(b, bit, b, Outcome::bit(bit), 5);
                flipped.record(b, bit, b, Outcome::bit(!bit), 5);
            }
        }
        let s = sift(&ok);
        for b in Basis::ALL {
            assert_eq!(s.err(b), 0);
        }
        assert_eq!(sift(&flipped).qber(Basis::Z), Some(1.0));
    }

    #[test]
    fn background_correction_examples() {
        assert_eq!(background_correct(1e-5, 0.02, 0.0).unwrap(), (1e-5, 0.02));
        let (q, e) = background_correct(2.32e-7, 0.0416, 9e-9).unwrap();
        assert_relative_eq!(q, 2.23e-7, max_relative = 1e-12);
        assert_relative_eq!(e, 0.0231, max_relative = 1e-3);
        assert!((e - 0.0219).abs() / 0.0219 <= 0.10);
        assert!(background_correct(4e-8, 0.5, 4e-8).is_err());
        assert!(background_correct(1e-8, 0.5, 4e-8).is_err());
    }

    #[test]
    fn theta_examples() {
        let mut s = SiftedResult::default();
        *s.cell_mut(Basis::X, Basis::X) = CellStats { pulses: 100, conclusive: 100, agree: 98 };
        *s.cell_mut(Basis::X, Basis::Y) = CellStats { pulses: 100, conclusive: 100, agree: 50 };
        assert_relative_eq!(estimate_theta(&s).unwrap(), 0.0);
        *s.cell_mut(Basis::X, Basis::X) = CellStats { pulses: 100, conclusive: 100, agree: 50 };
        *s.cell_mut(Basis::X, Basis::Y) = CellStats { pulses: 100, conclusive: 100, agree: 98 };
        assert_relative_eq!(estimate_theta(&s).unwrap(), PI / 2.0);
        let t = estimate_theta(&rotated(0.96, PI / 6.0, 1_000_000)).unwrap();
        assert_relative_eq!(t, PI / 6.0, epsilon = 1e-5);
        assert!(matches!(
            estimate_theta(&SiftedResult::default()),
            Err(Error::InsufficientStatistics(_))
        ));
    }

    #[test]
    fn c_examples() {
        assert_relative_eq!(c_statistic(&rotated(1.0, 0.0, 1000)).unwrap(), 2.0);
        assert_relative_eq!(c_statistic(&rotated(0.0, 1.0, 1000)).unwrap(), 0.0);
        let e = 0.0188;
        let c = 1.0 - 2.0 * e;
        assert_relative_eq!(
            c_statistic(&rotated(c, 0.7, 10_000_000)).unwrap(),
            1.8524,
            epsilon = 1e-4
        );
        assert!(c_statistic(&SiftedResult::default()).is_err());
    }

    #[test]
    fn grouping_single_bin() {
        let slices: Vec<_> = (0..20).map(|_| rotated(0.96, 0.0, 1000)).collect();
        let g = rfi_group(&slices).unwrap();
        assert_eq!(g.groups.len(), RFI_GROUPS);
        assert_eq!(g.groups[0].weight, 1.0);
        assert_eq!(g.groups[0].n_slices, 20);
        assert!(g.groups[1..].iter().all(|x| x.weight == 0.0));
    }

    #[test]
    fn grouping_uniform_spread() {
        let slices: Vec<_> = (0..1200)
            .map(|k| rotated(0.96, (k as f64 + 0.5) * TAU / 1200.0, 1000))
            .collect();
        let g = rfi_group(&slices).unwrap();
        for grp in &g.groups {
            assert_eq!(grp.n_slices, 100);
            assert_relative_eq!(grp.weight, 1.0 / 12.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn grouping_beats_pooling_under_drift() {
        let slices: Vec<_> = (0..600).map(|k| rotated(0.96, k as f64 * 0.0123, 1000)).collect();
        let pooled: SiftedResult = slices.iter().copied().sum();
        let pooled_ex = pooled.qber(Basis::X).unwrap();
        let g = rfi_group(&slices).unwrap();
        for grp in g.groups.iter().filter(|g| g.weight > 0.0) {
            assert!(grp.aligned_phase_error().unwrap() <= pooled_ex);
        }
    }

    #[test]
    fn grouping_skips_and_conserves() {
        let mut slices: Vec<_> = (0..30).map(|k| rotated(0.9, k as f64 * 0.2, 500)).collect();
        slices.push(SiftedResult::default());
        let g = rfi_group(&slices).unwrap();
        assert_eq!(g.skipped, vec![30]);
        let input: u64 = slices.iter().map(SiftedResult::total_conclusive).sum();
        assert_eq!(g.total().total_conclusive(), input);
        let w: f64 = g.groups.iter().map(|g| g.weight).sum();
        assert_relative_eq!(w, 1.0, epsilon = 1e-12);
        assert!(rfi_group(&[SiftedResult::default()]).is_err());
    }

    proptest! {
        #[test]
        fn c_is_rotation_invariant(c in 0.0f64..1.0, theta in 0.0f64..TAU) {
            let k = correlators_exact(c, theta);
            let k0 = correlators_exact(c, 0.0);
            let sum = |v: [f64; 4]| v.iter().map(|x| x * x).sum::<f64>();
            prop_assert!((sum(k) - sum(k0)).abs() < 1e-12);
        }

        #[test]
        fn uncorrect_inverts_correct(q in 1e-8f64..1e-4, e in 0.0f64..0.5, frac in 0.0f64..0.9) {
            let p = q * frac;
            let (qc, ec) = background_correct(q, e, p).unwrap();
            let raw_ec = (e * q - 0.5 * p) / qc;
            prop_assume!((0.0..=0.5).contains(&raw_ec));
            let (q2, e2) = background_uncorrect(qc, ec, p);
            prop_assert!((q2 - q).abs() <= 1e-12 * q);
            prop_assert!((e2 - e).abs() <= 1e-12);
        }
    }
}
