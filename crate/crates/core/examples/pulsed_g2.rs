//! Pulsed g2(0) from time tags of two detectors: coincidence histogram, then
//! the centre peak against the six nearest side peaks.
//!
//! cargo run --release --example pulsed_g2

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sps_qkd::correlate::{cross_correlate, pulsed_g2, DEFAULT_SIDE_PEAKS};

const PERIOD_PS: i64 = 12_500;

fn main() -> sps_qkd::Result<()> {
    // each detector clicks on 5 % of pulses, jointly 0.356 times as often as
    // independent clicks would
    let (p, g2) = (0.05, 0.356);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for k in 0..2_000_000i64 {
        let t = k * PERIOD_PS;
        let u: f64 = rng.random();
        let both = g2 * p * p;
        if u < both {
            a.push(t + rng.random_range(-80..80));
            b.push(t + rng.random_range(-80..80));
        } else if u < p {
            a.push(t + rng.random_range(-80..80));
        } else if u < 2.0 * p - both {
            b.push(t + rng.random_range(-80..80));
        }
    }
    a.sort_unstable();
    b.sort_unstable();

    let hist = cross_correlate(&a, &b, 100, 5 * PERIOD_PS)?;
    let g = pulsed_g2(&hist, PERIOD_PS as f64, 2_000.0, DEFAULT_SIDE_PEAKS)?;
    println!("{} and {} clicks, {} coincidences in window", a.len(), b.len(), hist.total());
    println!("centre {} vs side mean {:.1} over {} peaks", g.center_area, g.side_mean, g.side_peaks);
    println!("g2(0) = {:.3} +- {:.3}", g.value, g.std_err);
    Ok(())
}
