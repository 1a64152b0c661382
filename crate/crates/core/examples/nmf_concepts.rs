//! Fits NMF to synthetic feature maps and matches each learned concept to
//! the closest planted one by cosine similarity.

use ncav::reducers::{fit_nmf, FitOptions};
use ncav::synthetic::{generate, SyntheticConfig};
use ncav::tensor::flatten_channels;
use ndarray::ArrayView1;

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()).max(1e-300)
}

fn main() -> ncav::Result<()> {
    let config = SyntheticConfig {
        concepts: 8,
        channels: 64,
        noise: 0.02,
        ..Default::default()
    };
    let (world, train, _) = generate(&config)?;
    let v = flatten_channels(&train.maps);
    let fit = fit_nmf(&v, 8, &FitOptions::default().with_max_iterations(500).with_tolerance(1e-6))?;

    let trace = &fit.objective_trace;
    println!(
        "{} iterations, objective {:.4} -> {:.4}",
        fit.model.fit_iterations,
        trace[0],
        trace[trace.len() - 1]
    );
    for (j, learned) in fit.model.basis.rows().into_iter().enumerate() {
        let (best, sim) = world
            .basis
            .rows()
            .into_iter()
            .map(|planted| cosine(learned, planted))
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        println!("concept {j}: closest planted {best}, cosine {sim:.3}");
    }
    Ok(())
}
