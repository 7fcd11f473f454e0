//! Pulse-level simulation of the back-to-back link and of the metropolitan
//! link, compared with the closed-form gains and error rates.
//!
//! cargo run --release --example monte_carlo_link

use std::time::Instant;

use sps_qkd::channel::ChannelParams;
use sps_qkd::optics::Basis;
use sps_qkd::protocol::sift;
use sps_qkd::simulate::{predict, run, LinkParams, TrialConfig};

fn main() -> sps_qkd::Result<()> {
    let cfg = TrialConfig { n_pulses: 200_000_000, seed: 1, ..TrialConfig::default() };
    for (name, channel) in [("back-to-back", ChannelParams::default()), ("metropolitan", ChannelParams::metropolitan())] {
        let link = LinkParams { channel, ..LinkParams::default() };
        let t0 = Instant::now();
        let tally = run(&cfg, &link)?;
        let s = sift(&tally);
        println!("{name}: {} pulses in {:.2?}", tally.n_pulses_total(), t0.elapsed());
        for b in [Basis::Z, Basis::X] {
            let p = predict(&link, b)?;
            let (q, e, n) = (s.gain(b).unwrap_or(0.0), s.qber(b).unwrap_or(f64::NAN), s.n(b) as f64);
            // binomial errors; only a few hundred sifted bits per basis at these settings
            println!(
                "  {b}: Q = {q:.3e} +- {:.1e} (expected {:.3e}), E = {e:.4} +- {:.4} (expected {:.4}), {n} sifted",
                q / n.sqrt(),
                p.gain,
                (e * (1.0 - e) / n).sqrt(),
                p.qber,
            );
        }
    }
    Ok(())
}
