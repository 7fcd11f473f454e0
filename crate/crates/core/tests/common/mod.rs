//! Synthetic data generators shared by the integration tests. They model
//! the physics directly and share no code with the estimators under test.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;
use sps_qkd::correlate::{g2_model, G2Curve, G2Params};

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Poisson arrivals at `rate_hz` over `[0, duration_ps)`.
pub fn poisson_stream(rate_hz: f64, duration_ps: i64, rng: &mut impl Rng) -> Vec<i64> {
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

/// Histogram-level draw: each bin is Poisson around `flat * g2(tau)`, with
/// `flat` set so the expected total is `total`.
pub fn g2_histogram(p: &G2Params, bin_ps: f64, half_bins: i64, total: f64, seed: u64) -> G2Curve {
    let mut rng = rng(seed);
    let tau: Vec<f64> = (-half_bins..=half_bins).map(|k| k as f64 * bin_ps).collect();
    let shape: f64 = tau.iter().map(|&t| g2_model(t, p)).sum();
    let flat = total / shape;
    let counts = tau
        .iter()
        .map(|&t| Poisson::new(flat * g2_model(t, p)).unwrap().sample(&mut rng))
        .collect();
    G2Curve::from_counts(tau, counts, flat).unwrap()
}

/// Two detectors behind a pulsed source. Each detector clicks with
/// probability `p_click` per pulse and both click together with probability
/// `g2 * p_click^2`. Gaussian timing jitter of 60 ps.
pub fn pulsed_pair(n_pulses: i64, period_ps: i64, p_click: f64, g2: f64, seed: u64) -> (Vec<i64>, Vec<i64>) {
    let mut rng = rng(seed);
    let jitter = Normal::new(0.0, 60.0).unwrap();
    let both = g2 * p_click * p_click;
    let only = p_click - both;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for k in 0..n_pulses {
        let t0 = k * period_ps + 1_000;
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
