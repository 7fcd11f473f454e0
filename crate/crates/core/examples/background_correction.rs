//! Removing the noise floor from gains and error rates of the deployed link.
//!
//! cargo run --example background_correction

use sps_qkd::channel::{noise_prob_per_gate, noise_total, DetectorParams};
use sps_qkd::protocol::{background_correct, background_uncorrect};

fn main() -> sps_qkd::Result<()> {
    // noise probability implied by the measured and corrected gains
    let p_noise = 2.32e-7 - 2.23e-7;
    for (basis, q, e) in [("Z", 2.32e-7, 0.0416), ("X", 8.11e-8, 0.102)] {
        let (qc, ec) = background_correct(q, e, p_noise)?;
        let (q2, e2) = background_uncorrect(qc, ec, p_noise);
        println!("{basis}: Q {q:.3e} -> {qc:.3e}, E {e:.4} -> {ec:.4} (round trip {q2:.3e}, {e2:.4})");
    }

    // the same floor from detector parameters: dark counts plus 1 kcps background
    let det = DetectorParams::default();
    let p = noise_total(noise_prob_per_gate(1000.0, &det)?);
    println!("noise per gate over both detectors with a 1 ns gate: {p:.2e}");
    Ok(())
}
