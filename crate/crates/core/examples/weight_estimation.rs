//! Compares the closed-form concept weights `P·W` with finite-difference
//! estimates taken along each concept direction.

use ncav::explainer::{default_epsilon, directional_concept_weights, fit_explainer};
use ncav::reducers::{FitOptions, Method};
use ncav::synthetic::{generate, SyntheticConfig};
use ncav::tensor::FeatureMapBatch;

fn main() -> ncav::Result<()> {
    let config = SyntheticConfig {
        images: 3,
        height: 4,
        width: 4,
        channels: 32,
        classes: 4,
        ..Default::default()
    };
    let (world, train, _) = generate(&config)?;
    let head = &world.head;
    let explainer = fit_explainer(&train.maps, head, 5, Method::Pca, &FitOptions::default())?;
    let closed = explainer.concept_weights();

    let default_eps = default_epsilon(&train.maps);
    for eps in [1e-1, 1e-3, 1e-6, default_eps] {
        let estimate = directional_concept_weights(
            |x: &FeatureMapBatch| head.predict(x),
            explainer.reducer().basis(),
            &train.maps,
            head.n_classes(),
            eps,
        )?;
        let worst = estimate
            .iter()
            .zip(closed.iter())
            .map(|(e, c)| (e - c).abs() / c.abs().max(1.0))
            .fold(0.0, f64::max);
        println!("epsilon {eps:.1e}: worst relative gap {worst:.2e}");
    }
    println!("concept weights (concepts x classes):\n{closed:.4}");
    Ok(())
}
