//! Sweeps the number of concepts for each reducer on synthetic feature maps
//! with 20 planted concepts and prints the fidelity table.

use ncav::fidelity::{sweep, SweepConfig};
use ncav::synthetic::{generate, SyntheticConfig};

fn main() -> ncav::Result<()> {
    let config = SyntheticConfig {
        images: 40,
        seed: 7,
        ..Default::default()
    };
    let (world, train, eval) = generate(&config)?;
    let report = sweep(&train.maps, &eval.eval_batch()?, &world.head, &SweepConfig::default())?;

    println!("{:<7} {:>3} {:>7} {:>12} {:>10}", "method", "c'", "fid_c", "fid_r", "recon");
    for cell in &report.cells {
        println!(
            "{:<7} {:>3} {:>7.3} {:>12.3e} {:>10.4}",
            cell.method.as_str(),
            cell.c_prime,
            cell.fid_c,
            cell.fid_r,
            cell.reconstruction_error
        );
    }
    Ok(())
}
