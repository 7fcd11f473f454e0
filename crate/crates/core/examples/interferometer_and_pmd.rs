//! Phase-basis error from interferometer path mismatch, and why polarisation
//! encoding suffers on the deployed fibre while time-bin encoding does not.
//!
//! cargo run --example interferometer_and_pmd

use sps_qkd::channel::ChannelParams;
use sps_qkd::optics::{fringe_visibility, phase_error_from_visibility, pmd_polarization_qber, OpticsParams};
use sps_qkd::source::{coherence_time_ps, SourceParams};

fn main() -> sps_qkd::Result<()> {
    let optics = OpticsParams::default();
    println!("{:>14} {:>10} {:>10}", "mismatch um", "V", "E_phase");
    for m in [0.0, 10.0, 20.0, 40.0, 57.4, 80.0] {
        let v = fringe_visibility(m, &optics);
        println!("{m:>14.1} {v:>10.3} {:>10.4}", phase_error_from_visibility(v)?);
    }

    let src = SourceParams::default();
    let l_c = src.coherence_length_um()?;
    let t_c = coherence_time_ps(l_c);
    println!("\ncoherence length {l_c:.1} um, coherence time {t_c:.3} ps");

    let link = ChannelParams::metropolitan();
    println!("{:>8} {:>10} {:>14}", "km", "DGD ps", "pol. QBER");
    for km in [0.0, 0.001, 0.01, 0.05, 0.2, 1.0] {
        let dgd = ChannelParams { length_km: km, ..link }.dgd_ps();
        println!("{km:>8.3} {dgd:>10.2} {:>14.3}", pmd_polarization_qber(dgd, t_c, 0.009));
    }
    Ok(())
}
