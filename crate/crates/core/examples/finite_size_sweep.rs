//! Key rate against channel loss for finite block sizes, and the loss at
//! which each block size stops producing key.
//!
//! cargo run --example finite_size_sweep

use sps_qkd::keyrate::{cutoff_loss, loss_grid, sweep_loss, SweepParams, DEFAULT_BLOCK_SIZES};

fn main() -> sps_qkd::Result<()> {
    let params = SweepParams::default();
    let losses = loss_grid(0.0, 20.0, 2.5)?;
    let points = sweep_loss(&params, &losses, &DEFAULT_BLOCK_SIZES)?;

    print!("{:>8}", "loss dB");
    for n in DEFAULT_BLOCK_SIZES {
        print!("{:>12}", format!("N={n:e}"));
    }
    println!();
    for (i, loss) in losses.iter().enumerate() {
        print!("{loss:>8.1}");
        for k in 0..DEFAULT_BLOCK_SIZES.len() {
            print!("{:>12.3e}", points[k * losses.len() + i].rate);
        }
        println!();
    }

    println!();
    for n in DEFAULT_BLOCK_SIZES {
        match cutoff_loss(&params, n, 60.0)? {
            Some(l) => println!("N = {n:e}: key up to {l:.2} dB"),
            None => println!("N = {n:e}: no key at any loss"),
        }
    }
    Ok(())
}
