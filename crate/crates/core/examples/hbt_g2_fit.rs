//! Fit of the three-level correlation model to a noisy antibunching dip.
//!
//! cargo run --release --example hbt_g2_fit

use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;
use sps_qkd::correlate::{fit_g2, g2_model, G2Curve, G2Params};

fn main() -> sps_qkd::Result<()> {
    let truth = G2Params { a: 0.95, b: 0.02, c: 0.01, tau1: 500.0, tau2: 5_000.0, tau3: 50_000.0 };
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);

    // 100 ps bins over +-200 ns, 1e6 coincidences in total
    let tau: Vec<f64> = (-2000..=2000).map(|k| k as f64 * 100.0).collect();
    let flat = 1e6 / tau.iter().map(|&t| g2_model(t, &truth)).sum::<f64>();
    let counts = tau
        .iter()
        .map(|&t| Poisson::new(flat * g2_model(t, &truth)).unwrap().sample(&mut rng))
        .collect();
    let curve = G2Curve::from_counts(tau, counts, flat)?;

    let fit = fit_g2(&curve)?.require_converged()?;
    let (p, e) = (fit.params, fit.std_err);
    println!("converged after {} iterations", fit.iterations);
    println!("A    = {:.3} +- {:.3}  (true {})", p.a, e.a, truth.a);
    println!("B    = {:.3} +- {:.3}  (true {})", p.b, e.b, truth.b);
    println!("C    = {:.3} +- {:.3}  (true {})", p.c, e.c, truth.c);
    println!("tau1 = {:.0} +- {:.0} ps", p.tau1, e.tau1);
    println!("tau2 = {:.0} +- {:.0} ps", p.tau2, e.tau2);
    println!("tau3 = {:.0} +- {:.0} ps", p.tau3, e.tau3);
    println!("g2(0) = {:.3} +- {:.3}  (true {:.3})", fit.g2_zero, fit.g2_zero_err, truth.g2_zero());
    Ok(())
}
