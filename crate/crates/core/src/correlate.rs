//! Time-tag analysis: coincidence histograms, HBT normalisation, pulsed
//! g2(0) and a weighted fit of the three-level bunching/antibunching model
//!
//! ```text
//! g2(tau) = 1 - A exp(-|tau|/tau1) + B exp(-|tau|/tau2) + C exp(-|tau|/tau3)
//! ```
//!
//! The fit works on the model as written. Detector timing jitter is not
//! deconvolved, so the fitted `tau1` is broadened by the instrument response.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};

/// Channel-tagged detection times in integer picoseconds, sorted per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampSeries {
    channels: Vec<Vec<i64>>,
}

impl TimestampSeries {
    pub fn new(n_channels: usize) -> Self {
        TimestampSeries { channels: vec![Vec::new(); n_channels] }
    }

    /// Builds a series from per-channel time lists, which must be sorted.
    pub fn from_channels(channels: Vec<Vec<i64>>) -> Result<Self> {
        for (ch, times) in channels.iter().enumerate() {
            if let Some(i) = times.windows(2).position(|w| w[1] < w[0]) {
                return Err(Error::Data(format!(
                    "channel {ch}: time {} follows {} (times must be non-decreasing)",
                    times[i + 1],
                    times[i]
                )));
            }
        }
        Ok(TimestampSeries { channels })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, ch: usize) -> Result<&[i64]> {
        self.channels
            .get(ch)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Domain(format!("channel {ch} not in series with {} channels", self.channels.len())))
    }

    pub fn len(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Span from the first to the last event over all channels, in ps.
    pub fn span_ps(&self) -> i64 {
        let first = self.channels.iter().filter_map(|c| c.first()).min();
        let last = self.channels.iter().filter_map(|c| c.last()).max();
        match (first, last) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }

    /// Reads the text format: a header `#channels=<k> #unit=ps` followed by
    /// `channel,time_ps` lines. Blank lines and later `#` lines are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let n_channels = loop {
            let Some((i, line)) = lines.next() else {
                return Err(Error::Data("timestamp file is empty; expected a '#channels=<k> #unit=ps' header".into()));
            };
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            break parse_header(line).map_err(|m| Error::Data(format!("line {}: {m}", i + 1)))?;
        };
        let mut channels = vec![Vec::new(); n_channels];
        for (i, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::Data(format!("line {}: {m}", i + 1));
            let (ch, t) = line
                .split_once(',')
                .ok_or_else(|| bad(format!("expected 'channel,time_ps', got '{line}'")))?;
            let ch: usize = ch.trim().parse().map_err(|_| bad(format!("bad channel id '{}'", ch.trim())))?;
            let t: i64 = t.trim().parse().map_err(|_| bad(format!("bad time '{}'", t.trim())))?;
            let list = channels
                .get_mut(ch)
                .ok_or_else(|| bad(format!("channel {ch} outside declared 0..{n_channels}")))?;
            if let Some(&prev) = list.last() {
                if t < prev {
                    return Err(bad(format!("channel {ch}: time {t} follows {prev} (unsorted input)")));
                }
            }
            list.push(t);
        }
        Ok(TimestampSeries { channels })
    }

    /// Writes events in time order, ties broken by channel.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#channels={} #unit=ps", self.channels.len())?;
        let mut events: Vec<(i64, usize)> = self
            .channels
            .iter()
            .enumerate()
            .flat_map(|(ch, ts)| ts.iter().map(move |&t| (t, ch)))
            .collect();
        events.sort_unstable();
        for (t, ch) in events {
            writeln!(w, "{ch},{t}")?;
        }
        Ok(())
    }
}

fn parse_header(line: &str) -> std::result::Result<usize, String> {
    let mut channels = None;
    let mut unit = None;
    for tok in line.split_whitespace() {
        let tok = tok.trim_start_matches('#');
        match tok.split_once('=') {
            Some(("channels", v)) => channels = v.parse::<usize>().ok(),
            Some(("unit", v)) => unit = Some(v.to_string()),
            _ => {}
        }
    }
    match (channels, unit.as_deref()) {
        (Some(k), Some("ps")) if k > 0 => Ok(k),
        (_, Some(u)) if u != "ps" => Err(format!("unsupported time unit '{u}', expected ps")),
        _ => Err(format!("expected header '#channels=<k> #unit=ps', got '{line}'")),
    }
}

/// Coincidence counts of `t_b - t_a` in bins centred at `k * bin_width`,
/// `k = -half_bins..=half_bins`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub bin_width_ps: i64,
    pub half_bins: i64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_width_ps: i64, window_ps: i64) -> Result<Self> {
        if bin_width_ps <= 0 {
            return domain(format!("bin width must be > 0 ps, got {bin_width_ps}"));
        }
        if window_ps <= bin_width_ps {
            return domain(format!("window ({window_ps} ps) must exceed the bin width ({bin_width_ps} ps)"));
        }
        let half_bins = window_ps / bin_width_ps;
        Ok(Histogram { bin_width_ps, half_bins, counts: vec![0; (2 * half_bins + 1) as usize] })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Bin centre in ps.
    pub fn tau_ps(&self, i: usize) -> i64 {
        (i as i64 - self.half_bins) * self.bin_width_ps
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Histogram with `tau -> -tau`.
    pub fn mirrored(&self) -> Histogram {
        let mut counts = self.counts.clone();
        counts.reverse();
        Histogram { counts, ..*self }
    }

    /// Bin index for a delay, or `None` outside the window. Symmetric in the
    /// sign of `delta`, with half-way delays rounded away from zero.
    fn index(&self, delta: i64) -> Option<usize> {
        let bw = self.bin_width_ps;
        let k = (2 * delta.abs() + bw) / (2 * bw);
        (k <= self.half_bins).then(|| (self.half_bins + delta.signum() * k) as usize)
    }

    /// Largest `|delta|` still inside the outermost bin.
    fn reach(&self) -> i64 {
        (self.bin_width_ps * (2 * self.half_bins + 1) - 1) / 2
    }

    fn merge(mut self, other: &Histogram) -> Histogram {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["tau_ps", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            out.write_record([self.tau_ps(i).to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

const CORRELATE_CHUNK: usize = 1 << 16;

/// Start-stop coincidence histogram of `b` relative to `a`, by a two-pointer
/// sweep over the sorted times. Chunks of `a` are processed in parallel and
/// merged by bin-wise addition, which gives the same counts as a serial pass.
pub fn cross_correlate(a: &[i64], b: &[i64], bin_width_ps: i64, window_ps: i64) -> Result<Histogram> {
    let empty = Histogram::new(bin_width_ps, window_ps)?;
    for (name, s) in [("a", a), ("b", b)] {
        if s.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Data(format!("series {name} is not sorted in time")));
        }
    }
    let reach = empty.reach();
    let hist = a
        .par_chunks(CORRELATE_CHUNK)
        .map(|chunk| {
            let mut h = empty.clone();
            let mut lo = b.partition_point(|&t| t < chunk[0] - reach);
            for &ta in chunk {
                while lo < b.len() && b[lo] < ta - reach {
                    lo += 1;
                }
                for &tb in b[lo..].iter().take_while(|&&tb| tb <= ta + reach) {
                    if let Some(i) = h.index(tb - ta) {
                        h.counts[i] += 1;
                    }
                }
            }
            h
        })
        .reduce(|| empty.clone(), |x, y| x.merge(&y));
    Ok(hist)
}

/// Normalised correlation curve with the raw counts kept for weighting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G2Curve {
    pub tau_ps: Vec<f64>,
    pub g2: Vec<f64>,
    pub counts: Vec<f64>,
    /// Counts per bin expected for uncorrelated streams.
    pub flat_level: f64,
}

impl G2Curve {
    pub fn len(&self) -> usize {
        self.g2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g2.is_empty()
    }

    /// Curve from counts and a known flat level.
    pub fn from_counts(tau_ps: Vec<f64>, counts: Vec<f64>, flat_level: f64) -> Result<Self> {
        if tau_ps.len() != counts.len() {
            return domain("tau and count vectors differ in length");
        }
        if !(flat_level > 0.0) {
            return domain(format!("flat level must be > 0, got {flat_level}"));
        }
        let g2 = counts.iter().map(|c| c / flat_level).collect();
        Ok(G2Curve { tau_ps, g2, counts, flat_level })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["tau_ps", "count", "g2"])?;
        for i in 0..self.len() {
            out.write_record([
                format!("{:e}", self.tau_ps[i]),
                format!("{:e}", self.counts[i]),
                format!("{:e}", self.g2[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Divides counts by `rate_a * rate_b * duration * bin_width`. Rates in Hz,
/// duration in s.
pub fn normalize_g2(hist: &Histogram, rate_a: f64, rate_b: f64, duration_s: f64) -> Result<G2Curve> {
    if !(rate_a > 0.0 && rate_b > 0.0) {
        return domain(format!("count rates must be > 0, got {rate_a} and {rate_b}"));
    }
    if !(duration_s > 0.0) {
        return domain(format!("duration must be > 0, got {duration_s}"));
    }
    let flat = rate_a * rate_b * duration_s * hist.bin_width_ps as f64 * 1e-12;
    let tau = (0..hist.len()).map(|i| hist.tau_ps(i) as f64).collect();
    let counts = hist.counts.iter().map(|&c| c as f64).collect();
    G2Curve::from_counts(tau, counts, flat)
}

/// Normalises a histogram built from two channels of `series`, taking rates
/// and duration from the series itself.
pub fn normalize_from_series(hist: &Histogram, series: &TimestampSeries, ch_a: usize, ch_b: usize) -> Result<G2Curve> {
    let span = series.span_ps() as f64 * 1e-12;
    if !(span > 0.0) {
        return Err(Error::Data("timestamp series spans zero time; cannot normalise".into()));
    }
    let ra = series.channel(ch_a)?.len() as f64 / span;
    let rb = series.channel(ch_b)?.len() as f64 / span;
    normalize_g2(hist, ra, rb, span)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct G2Params {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl G2Params {
    pub fn g2_zero(&self) -> f64 {
        1.0 - self.a + self.b + self.c
    }

    pub fn eval(&self, tau: f64) -> f64 {
        g2_model(tau, self)
    }
}

pub fn g2_model(tau: f64, p: &G2Params) -> f64 {
    let t = tau.abs();
    1.0 - p.a * (-t / p.tau1).exp() + p.b * (-t / p.tau2).exp() + p.c * (-t / p.tau3).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct G2FitResult {
    pub params: G2Params,
    pub std_err: G2Params,
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    /// `sqrt(chi^2)` of the weighted residuals.
    pub residual_norm: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the fitted curve stays >= 0 at every bin.
    pub model_nonnegative: bool,
}

impl G2FitResult {
    /// Turns an unconverged fit into an error carrying the best parameters.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            let p = &self.params;
            Err(Error::NonConvergence(format!(
                "g2 fit stopped after {} iterations; best so far A={:e} B={:e} C={:e} tau1={:e} tau2={:e} tau3={:e}",
                self.iterations, p.a, p.b, p.c, p.tau1, p.tau2, p.tau3
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when `|step| / |params|` drops below this.
    pub rel_step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: 200, rel_step_tol: 1e-8 }
    }
}

/// Minimum number of bins for a fit.
pub const MIN_FIT_BINS: usize = 50;
const N_PARAMS: usize = 6;

/// Weighted fit with Poisson weights `1 / max(count, 1)`.
pub fn fit_g2(curve: &G2Curve) -> Result<G2FitResult> {
    let w: Vec<f64> = curve.counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();
    fit_g2_weighted(curve, &w, &FitOptions::default())
}

/// Levenberg-Marquardt on `(A, B, C, ln tau1, ln tau2, ln tau3)`.
pub fn fit_g2_weighted(curve: &G2Curve, weights: &[f64], opts: &FitOptions) -> Result<G2FitResult> {
    let m = curve.len();
    if m < MIN_FIT_BINS {
        return domain(format!("g2 fit needs at least {MIN_FIT_BINS} bins, got {m}"));
    }
    if weights.len() != m || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return domain("fit weights must be positive and one per bin");
    }
    if curve.g2.iter().chain(&curve.tau_ps).any(|v| !v.is_finite()) {
        return Err(Error::Data("g2 curve contains non-finite values".into()));
    }

    let tau = &curve.tau_ps;
    let y = &curve.g2;
    let start = initial_guess(curve);
    let mut x = DVector::from_row_slice(&[start.a, start.b, start.c, start.tau1.ln(), start.tau2.ln(), start.tau3.ln()]);

    let chi2_at = |x: &DVector<f64>| -> f64 {
        let p = unpack(x);
        (0..m).map(|i| weights[i] * (y[i] - g2_model(tau[i], &p)).powi(2)).sum()
    };
    let normal_eqs = |x: &DVector<f64>| -> (DMatrix<f64>, DVector<f64>) {
        let p = unpack(x);
        let mut jtj = DMatrix::zeros(N_PARAMS, N_PARAMS);
        let mut jtr = DVector::zeros(N_PARAMS);
        for i in 0..m {
            let t = tau[i].abs();
            let e1 = (-t / p.tau1).exp();
            let e2 = (-t / p.tau2).exp();
            let e3 = (-t / p.tau3).exp();
            // d model / d (A, B, C, ln tau1, ln tau2, ln tau3)
            let j = [-e1, e2, e3, -p.a * e1 * t / p.tau1, p.b * e2 * t / p.tau2, p.c * e3 * t / p.tau3];
            let r = y[i] - g2_model(tau[i], &p);
            for a in 0..N_PARAMS {
                jtr[a] += weights[i] * j[a] * r;
                for b in 0..=a {
                    jtj[(a, b)] += weights[i] * j[a] * j[b];
                }
            }
        }
        jtj.fill_upper_triangle_with_lower_triangle();
        (jtj, jtr)
    };

    let mut chi2 = chi2_at(&x);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let (mut jtj, mut jtr) = normal_eqs(&x);
    while iterations < opts.max_iterations {
        iterations += 1;
        let floor = 1e-12 * jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut damped = jtj.clone();
        for k in 0..N_PARAMS {
            damped[(k, k)] += lambda * jtj[(k, k)].max(floor);
        }
        let Some(step) = damped.cholesky().map(|ch| ch.solve(&jtr)) else {
            lambda *= 10.0;
            continue;
        };
        let trial = &x + &step;
        let trial_chi2 = chi2_at(&trial);
        if trial_chi2.is_finite() && trial_chi2 <= chi2 {
            let rel = step.norm() / (x.norm() + f64::EPSILON);
            x = trial;
            chi2 = trial_chi2;
            lambda = (lambda / 10.0).max(1e-12);
            (jtj, jtr) = normal_eqs(&x);
            if rel < opts.rel_step_tol {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            // No downhill direction left at machine precision: a minimum.
            if lambda > 1e16 {
                converged = true;
                break;
            }
        }
    }

    let params = unpack(&x);
    let dof = m - N_PARAMS;
    let s2 = chi2 / dof as f64;
    let cov = jtj
        .clone()
        .pseudo_inverse(1e-14 * jtj.diagonal().max().max(f64::MIN_POSITIVE))
        .map_err(|e| Error::NonConvergence(format!("covariance of g2 fit is singular: {e}")))?
        * s2;
    let sd = |k: usize| cov[(k, k)].max(0.0).sqrt();
    let std_err = G2Params {
        a: sd(0),
        b: sd(1),
        c: sd(2),
        tau1: params.tau1 * sd(3),
        tau2: params.tau2 * sd(4),
        tau3: params.tau3 * sd(5),
    };
    // g2(0) = 1 - A + B + C
    let g = [-1.0, 1.0, 1.0];
    let var0: f64 = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| g[a] * g[b] * cov[(a, b)]).sum();
    let model_nonnegative = tau.iter().all(|&t| g2_model(t, &params) >= 0.0);
    Ok(G2FitResult {
        params,
        std_err,
        g2_zero: params.g2_zero(),
        g2_zero_err: var0.max(0.0).sqrt(),
        residual_norm: chi2.sqrt(),
        dof,
        iterations,
        converged,
        model_nonnegative,
    })
}

fn unpack(x: &DVector<f64>) -> G2Params {
    G2Params { a: x[0], b: x[1], c: x[2], tau1: x[3].exp(), tau2: x[4].exp(), tau3: x[5].exp() }
}

/// `A` from the depth of the central dip, `tau1` from where the curve has
/// recovered half way, `B = C = 0` with `tau2, tau3` at 10 and 100 `tau1`.
fn initial_guess(curve: &G2Curve) -> G2Params {
    let mut by_tau: Vec<(f64, f64)> = curve.tau_ps.iter().map(|t| t.abs()).zip(curve.g2.iter().copied()).collect();
    by_tau.sort_by(|p, q| p.0.total_cmp(&q.0));
    let min_step = by_tau.windows(2).map(|w| w[1].0 - w[0].0).filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min);
    let bin = if min_step.is_finite() { min_step } else { 1.0 };

    // Average |tau| bins pairwise to damp noise; the centre bin stands alone.
    let centre: Vec<f64> = by_tau.iter().take(3).map(|p| p.1).collect();
    let dip = centre.iter().sum::<f64>() / centre.len() as f64;
    let a = (1.0 - dip).clamp(0.0, 1.0);
    let half = 1.0 - a / 2.0;
    let recovered = by_tau.iter().find(|p| p.0 > 0.0 && p.1 >= half).map(|p| p.0);
    let tau1 = match recovered {
        Some(t) if a > 0.0 => (t / std::f64::consts::LN_2).max(bin),
        _ => 5.0 * bin,
    };
    G2Params { a, b: 0.0, c: 0.0, tau1, tau2: 10.0 * tau1, tau3: 100.0 * tau1 }
}

/// Default number of side peaks averaged for pulsed g2(0).
pub const DEFAULT_SIDE_PEAKS: usize = 6;
const MIN_SIDE_PEAKS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulsedG2 {
    pub value: f64,
    /// Poisson error propagated from the peak areas.
    pub std_err: f64,
    pub center_area: f64,
    pub side_mean: f64,
    pub side_peaks: usize,
}

/// Centre-peak area over the mean area of the `n_side` nearest side peaks.
/// Peaks sit at multiples of `rep_period_ps`; each area sums the bins whose
/// centres lie within `half_width_ps` of the peak.
pub fn pulsed_g2(hist: &Histogram, rep_period_ps: f64, half_width_ps: f64, n_side: usize) -> Result<PulsedG2> {
    if !(half_width_ps > 0.0) {
        return domain(format!("integration half width must be > 0, got {half_width_ps}"));
    }
    if !(rep_period_ps > 2.0 * half_width_ps) {
        return domain(format!(
            "repetition period {rep_period_ps} ps must exceed twice the half width {half_width_ps} ps"
        ));
    }
    if n_side < MIN_SIDE_PEAKS {
        return domain(format!("at least {MIN_SIDE_PEAKS} side peaks are needed, got {n_side}"));
    }
    let edge = hist.half_bins as f64 * hist.bin_width_ps as f64;
    let area = |centre: f64| -> f64 {
        (0..hist.len())
            .filter(|&i| (hist.tau_ps(i) as f64 - centre).abs() <= half_width_ps)
            .map(|i| hist.counts[i] as f64)
            .sum()
    };
    let mut sides = Vec::with_capacity(n_side);
    let mut k = 1.0;
    while sides.len() < n_side && k * rep_period_ps + half_width_ps <= edge {
        for c in [-k * rep_period_ps, k * rep_period_ps] {
            if sides.len() < n_side {
                sides.push(area(c));
            }
        }
        k += 1.0;
    }
    if sides.len() < MIN_SIDE_PEAKS {
        return Err(Error::Data(format!(
            "only {} side peaks fit in the +-{edge} ps window (need {MIN_SIDE_PEAKS})",
            sides.len()
        )));
    }
    let n = sides.len() as f64;
    let s: f64 = sides.iter().sum();
    if s <= 0.0 {
        return Err(Error::Data("side peaks are empty; pulsed g2 is undefined".into()));
    }
    let c = area(0.0);
    let value = c * n / s;
    let var = n * n * c / (s * s) + c * c * n * n / (s * s * s);
    Ok(PulsedG2 { value, std_err: var.sqrt(), center_area: c, side_mean: s / n, side_peaks: sides.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Exp, Normal, Poisson};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn poisson_stream(rate_hz: f64, duration_ps: i64, rng: &mut impl Rng) -> Vec<i64> {
        let gap = Exp::new(rate_hz * 1e-12).unwrap();
        let mut t = 0.0;
        let mut out = Vec::new();
        loop {
            t += gap.sample(rng);
            if t >= duration_ps as f64 {
                return out;
            }
            out.push(t as i64);
        }
    }

    fn naive(a: &[i64], b: &[i64], bw: i64, window: i64) -> Histogram {
        let mut h = Histogram::new(bw, window).unwrap();
        for &ta in a {
            for &tb in b {
                if let Some(i) = h.index(tb - ta) {
                    h.counts[i] += 1;
                }
            }
        }
        h
    }

    fn synthetic_curve(p: &G2Params, bin: f64, half_bins: i64, total: f64, seed: u64) -> G2Curve {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let tau: Vec<f64> = (-half_bins..=half_bins).map(|k| k as f64 * bin).collect();
        let shape: f64 = tau.iter().map(|&t| g2_model(t, p)).sum();
        let flat = total / shape;
        let counts = tau
            .iter()
            .map(|&t| Poisson::new(flat * g2_model(t, p)).unwrap().sample(&mut rng))
            .collect();
        G2Curve::from_counts(tau, counts, flat).unwrap()
    }

    #[test]
    fn header_and_parse() {
        let text = "#channels=2 #unit=ps\n0,5\n1,7\n0,9\n\n1,12\n";
        let s = TimestampSeries::read(text.as_bytes()).unwrap();
        assert_eq!(s.channel(0).unwrap(), &[5, 9]);
        assert_eq!(s.channel(1).unwrap(), &[7, 12]);
        assert_eq!(s.span_ps(), 7);
        let mut out = Vec::new();
        s.write(&mut out).unwrap();
        assert_eq!(TimestampSeries::read(out.as_slice()).unwrap(), s);
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "",
            "0,5\n",
            "#channels=2 #unit=ns\n0,5\n",
            "#channels=2 #unit=ps\n0,9\n0,5\n",
            "#channels=2 #unit=ps\n3,5\n",
            "#channels=2 #unit=ps\n0;5\n",
        ] {
            assert!(matches!(TimestampSeries::read(bad.as_bytes()), Err(Error::Data(_))), "{bad:?}");
        }
    }

    #[test]
    fn empty_series_gives_zero_histogram() {
        let h = cross_correlate(&[], &[], 100, 1000).unwrap();
        assert_eq!(h.len(), 21);
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn histogram_rejects_bad_bins_and_unsorted() {
        assert!(cross_correlate(&[1], &[2], 0, 10).is_err());
        assert!(cross_correlate(&[1], &[2], 10, 10).is_err());
        assert!(matches!(cross_correlate(&[3, 1], &[2], 1, 10), Err(Error::Data(_))));
    }

    #[test]
    fn bins_are_centred() {
        let h = cross_correlate(&[1000], &[950, 951, 1000, 1049, 1050, 1300], 100, 250).unwrap();
        assert_eq!(h.half_bins, 2);
        // delays 0, 49 -> bin 0; 50 -> +1; -49 -> 0; -50 -> -1; 300 outside
        assert_eq!(h.counts, vec![0, 1, 3, 1, 0]);
    }

    #[test]
    fn pulsed_clicks_land_on_period_multiples() {
        let period = 12_500;
        let a: Vec<i64> = (0..200).map(|k| k * period).collect();
        let b: Vec<i64> = (0..200).filter(|k| k % 3 != 0).map(|k| k * period).collect();
        let h = cross_correlate(&a, &b, 500, 60_000).unwrap();
        for (i, &c) in h.counts.iter().enumerate() {
            if h.tau_ps(i) % period != 0 {
                assert_eq!(c, 0);
            } else {
                assert!(c > 0);
            }
        }
    }

    #[test]
    fn poisson_streams_are_flat() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let dur = 2_000_000_000_000; // 2 s
        let (ra, rb) = (2e5, 2e5);
        let a = poisson_stream(ra, dur, &mut rng);
        let b = poisson_stream(rb, dur, &mut rng);
        let h = cross_correlate(&a, &b, 1000, 50_000).unwrap();
        let expect = ra * rb * 2.0 * 1e-9;
        let sigma = expect.sqrt();
        let outliers = h.counts.iter().filter(|&&c| (c as f64 - expect).abs() > 3.0 * sigma).count();
        // 101 bins; a 3 sigma excursion is rare
        assert!(outliers <= 2, "{outliers}");
        let g = normalize_g2(&h, ra, rb, 2.0).unwrap();
        let mean = g.g2.iter().sum::<f64>() / g.len() as f64;
        assert!((mean - 1.0).abs() < 3.0 / (expect * g.len() as f64).sqrt());
    }

    #[test]
    fn normalisation_is_linear() {
        let mut h = Histogram::new(10, 100).unwrap();
        h.counts.iter_mut().for_each(|c| *c = 40);
        let g = normalize_g2(&h, 2.0, 2.0, 1e12).unwrap();
        let mut half = h.clone();
        half.counts.iter_mut().for_each(|c| *c = 20);
        let g_half = normalize_g2(&half, 2.0, 2.0, 1e12).unwrap();
        for (x, y) in g.g2.iter().zip(&g_half.g2) {
            assert_relative_eq!(*y, 0.5 * x);
            assert_relative_eq!(*x, 1.0);
        }
        assert!(normalize_g2(&h, 0.0, 1.0, 1.0).is_err());
        assert!(normalize_g2(&h, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn model_limits() {
        let p = G2Params { a: 0.95, b: 0.02, c: 0.01, tau1: 500.0, tau2: 5000.0, tau3: 50_000.0 };
        assert_eq!(g2_model(0.0, &p), 1.0 - 0.95 + 0.02 + 0.01);
        assert!((g2_model(100.0 * 50_000.0, &p) - 1.0).abs() < 1e-6);
        assert_eq!(g2_model(-700.0, &p), g2_model(700.0, &p));
    }

    #[test]
    fn fit_recovers_synthetic_dip() {
        let truth = G2Params { a: 0.95, b: 0.02, c: 0.01, tau1: 500.0, tau2: 5000.0, tau3: 50_000.0 };
        let curve = synthetic_curve(&truth, 100.0, 2000, 1e5, 7);
        let fit = fit_g2(&curve).unwrap();
        assert!(fit.converged);
        assert!(
            (fit.g2_zero - truth.g2_zero()).abs() <= fit.g2_zero_err,
            "g2(0) = {} +- {}",
            fit.g2_zero,
            fit.g2_zero_err
        );
        assert!(fit.params.tau1 > 0.0 && fit.params.tau2 > 0.0 && fit.params.tau3 > 0.0);
        let far = 100.0 * fit.params.tau1.max(fit.params.tau2).max(fit.params.tau3);
        assert!((g2_model(far, &fit.params) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nested_model_without_bunching() {
        let truth = G2Params { a: 0.9, b: 0.0, c: 0.0, tau1: 800.0, tau2: 8000.0, tau3: 80_000.0 };
        let curve = synthetic_curve(&truth, 100.0, 1000, 1e6, 3);
        let fit = fit_g2(&curve).unwrap();
        assert!(fit.converged);
        assert!(fit.params.b <= fit.std_err.b, "B = {} +- {}", fit.params.b, fit.std_err.b);
        assert!(fit.params.c <= fit.std_err.c, "C = {} +- {}", fit.params.c, fit.std_err.c);
    }

    #[test]
    fn flat_curve_fits_to_one() {
        let tau: Vec<f64> = (-100..=100).map(|k| k as f64 * 50.0).collect();
        let curve = G2Curve::from_counts(tau.clone(), vec![400.0; tau.len()], 400.0).unwrap();
        let fit = fit_g2(&curve).unwrap();
        assert!(fit.converged);
        assert!(fit.params.a.abs() < 1e-6 && fit.params.b.abs() < 1e-6 && fit.params.c.abs() < 1e-6);
        assert_relative_eq!(fit.g2_zero, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn fit_invariant_to_weight_scale() {
        let truth = G2Params { a: 0.8, b: 0.05, c: 0.0, tau1: 600.0, tau2: 6000.0, tau3: 60_000.0 };
        let curve = synthetic_curve(&truth, 100.0, 500, 2e5, 5);
        let w: Vec<f64> = curve.counts.iter().map(|c| 1.0 / c.max(1.0)).collect();
        let w3: Vec<f64> = w.iter().map(|x| 1000.0 * x).collect();
        let f1 = fit_g2_weighted(&curve, &w, &FitOptions::default()).unwrap();
        let f2 = fit_g2_weighted(&curve, &w3, &FitOptions::default()).unwrap();
        assert_relative_eq!(f1.g2_zero, f2.g2_zero, max_relative = 1e-6);
        assert_relative_eq!(f1.g2_zero_err, f2.g2_zero_err, max_relative = 1e-6);
        assert_relative_eq!(f1.params.tau1, f2.params.tau1, max_relative = 1e-6);
    }

    #[test]
    fn fit_needs_enough_bins() {
        let tau: Vec<f64> = (0..10).map(f64::from).collect();
        let curve = G2Curve::from_counts(tau, vec![1.0; 10], 1.0).unwrap();
        assert!(fit_g2(&curve).is_err());
    }

    #[test]
    fn unconverged_fit_is_flagged() {
        let truth = G2Params { a: 0.95, b: 0.02, c: 0.01, tau1: 500.0, tau2: 5000.0, tau3: 50_000.0 };
        let curve = synthetic_curve(&truth, 100.0, 500, 1e5, 1);
        let w: Vec<f64> = curve.counts.iter().map(|c| 1.0 / c.max(1.0)).collect();
        let fit = fit_g2_weighted(&curve, &w, &FitOptions { max_iterations: 1, rel_step_tol: 1e-8 }).unwrap();
        assert!(!fit.converged);
        assert!(matches!(fit.require_converged(), Err(Error::NonConvergence(_))));
    }

    fn hist_from(period: i64, areas: &[(i64, u64)]) -> Histogram {
        let mut h = Histogram::new(100, 5 * period).unwrap();
        for &(k, n) in areas {
            let i = h.index(k * period).unwrap();
            h.counts[i] = n;
        }
        h
    }

    #[test]
    fn pulsed_examples() {
        let p = 12_500;
        let equal: Vec<(i64, u64)> = (-4..=4).map(|k| (k, 100)).collect();
        let g = pulsed_g2(&hist_from(p, &equal), p as f64, 1000.0, DEFAULT_SIDE_PEAKS).unwrap();
        assert_eq!(g.value, 1.0);
        assert_eq!(g.side_peaks, 6);
        let no_centre: Vec<(i64, u64)> = (-4..=4).filter(|&k| k != 0).map(|k| (k, 100)).collect();
        assert_eq!(pulsed_g2(&hist_from(p, &no_centre), p as f64, 1000.0, 6).unwrap().value, 0.0);
        assert!(pulsed_g2(&hist_from(p, &equal), p as f64, 7000.0, 6).is_err());
        assert!(pulsed_g2(&hist_from(p, &equal), p as f64, 1000.0, 2).is_err());
        // window of +-1 period holds only two side peaks
        let narrow = Histogram::new(100, p + 1000).unwrap();
        assert!(matches!(pulsed_g2(&narrow, p as f64, 1000.0, 6), Err(Error::Data(_))));
    }

    /// Two detectors behind a pulsed source with a chosen coincidence
    /// suppression, with Gaussian timing jitter.
    fn pulsed_pair(n_pulses: i64, p_click: f64, g2: f64, seed: u64) -> (Vec<i64>, Vec<i64>) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let jitter = Normal::new(0.0, 60.0).unwrap();
        let both = g2 * p_click * p_click;
        let only = p_click - both;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for k in 0..n_pulses {
            let t0 = k * 12_500 + 1_000;
            let u: f64 = rng.random();
            let (ca, cb) = if u < both {
                (true, true)
            } else if u < both + only {
                (true, false)
            } else if u < both + 2.0 * only {
                (false, true)
            } else {
                (false, false)
            };
            if ca {
                a.push(t0 + jitter.sample(&mut rng) as i64);
            }
            if cb {
                b.push(t0 + jitter.sample(&mut rng) as i64);
            }
        }
        a.sort_unstable();
        b.sort_unstable();
        (a, b)
    }

    #[test]
    fn pulsed_suppression_recovered() {
        let (a, b) = pulsed_pair(2_000_000, 0.05, 0.356, 21);
        let h = cross_correlate(&a, &b, 100, 50_000).unwrap();
        let g = pulsed_g2(&h, 12_500.0, 2_000.0, DEFAULT_SIDE_PEAKS).unwrap();
        assert!((g.value - 0.356).abs() <= 3.0 * g.std_err, "{} +- {}", g.value, g.std_err);
    }

    #[test]
    fn pulsed_poisson_is_one() {
        let (a, b) = pulsed_pair(2_000_000, 0.05, 1.0, 22);
        let h = cross_correlate(&a, &b, 100, 50_000).unwrap();
        let g = pulsed_g2(&h, 12_500.0, 2_000.0, DEFAULT_SIDE_PEAKS).unwrap();
        assert!((g.value - 1.0).abs() <= 3.0 * g.std_err, "{} +- {}", g.value, g.std_err);
    }

    proptest! {
        #[test]
        fn sweep_matches_naive_and_mirrors(
            mut a in prop::collection::vec(0i64..20_000, 0..60),
            mut b in prop::collection::vec(0i64..20_000, 0..60),
            bw in 1i64..400,
            extra in 1i64..3000,
        ) {
            a.sort_unstable();
            b.sort_unstable();
            let window = bw + extra;
            let h = cross_correlate(&a, &b, bw, window).unwrap();
            prop_assert_eq!(&h, &naive(&a, &b, bw, window));
            prop_assert_eq!(h.mirrored(), cross_correlate(&b, &a, bw, window).unwrap());
        }
    }
}
