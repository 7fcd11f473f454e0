//! Asymptotic key rates for the measured link rows, with both bounds on the
//! eavesdropper's information for BB84 and the reference-frame-independent
//! bound.
//!
//! cargo run --example table1_key_rates

use sps_qkd::keyrate::{c_from_phase_error, secure_key_rate_with, IeModel, KeyRateInput, SecurityParams};
use sps_qkd::simulate::ProtocolMode;

fn main() -> sps_qkd::Result<()> {
    let sec = SecurityParams::default();
    let rows = [
        ("back-to-back", 1.63e-5, 0.0089, 0.0188),
        ("33 km spool", 1.03e-6, 0.0178, 0.0471),
        ("metropolitan", 2.32e-7, 0.0416, 0.102),
        ("metropolitan, corrected", 2.23e-7, 0.0219, 0.0518),
    ];
    println!("{:<24} {:>12} {:>12} {:>12}", "link", "R h(E_x)", "R h(E_z)", "R rfi");
    for (name, q_z, e_z, e_x) in rows {
        let input = KeyRateInput {
            q_z,
            e_z,
            e_x,
            e_y: None,
            c: None,
            n_z: f64::INFINITY,
            mu: 8.955e-5,
            g2_pulsed: 0.356,
            protocol: ProtocolMode::Bb84,
        };
        let hx = secure_key_rate_with(&input, &sec, IeModel::PhaseError)?;
        let hz = secure_key_rate_with(&input, &sec, IeModel::BitError)?;
        let rfi_input = KeyRateInput { c: Some(c_from_phase_error(e_x)), protocol: ProtocolMode::Rfi, ..input };
        let rfi = secure_key_rate_with(&rfi_input, &sec, IeModel::Rfi)?;
        println!("{name:<24} {:>12.3e} {:>12.3e} {:>12.3e}", hx.rate, hz.rate, rfi.rate);
    }

    let input = KeyRateInput {
        q_z: 1.63e-5,
        e_z: 0.0089,
        e_x: 0.0188,
        e_y: None,
        c: None,
        n_z: 1e6,
        mu: 8.955e-5,
        g2_pulsed: 0.356,
        protocol: ProtocolMode::Bb84,
    };
    let r = secure_key_rate_with(&input, &sec, IeModel::PhaseError)?;
    println!("\nback-to-back with n_z = 1e6:");
    println!("  A_z = {:.6}, I_E = {:.5}", r.a_z, r.i_e);
    let t = r.terms;
    for (name, v) in [
        ("secrecy", t.secrecy),
        ("error correction", t.error_correction),
        ("smoothing", t.smoothing),
        ("privacy amplification", t.privacy_amplification),
        ("correctness", t.correctness),
    ] {
        println!("  {name:<22} {v:+.3e}");
    }
    println!("  rate {:.3e} (clipped: {})", r.rate, r.clipped);
    Ok(())
}
