//! Breaks one image's class score into per-concept contributions and checks
//! that they add back up to the exact score.

use ncav::explainer::fit_explainer;
use ncav::reducers::{FitOptions, Method};
use ncav::synthetic::{generate, SyntheticConfig};

fn main() -> ncav::Result<()> {
    let config = SyntheticConfig {
        channels: 64,
        ..Default::default()
    };
    let (world, train, eval) = generate(&config)?;
    let explainer = fit_explainer(&train.maps, &world.head, 8, Method::Nmf, &FitOptions::default())?;

    let image = eval.maps.image(0)?;
    let class = eval.labels[0];
    let local = explainer.explain_local(&image, class)?;

    println!("image 0, predicted class {class}");
    println!("{:>7} {:>9} {:>9} {:>12}", "concept", "score", "weight", "contribution");
    let mut order: Vec<usize> = (0..local.contributions.len()).collect();
    order.sort_by(|&a, &b| local.contributions[b].abs().total_cmp(&local.contributions[a].abs()));
    for j in order {
        println!(
            "{:>7} {:>9.4} {:>9.4} {:>12.4}",
            j, local.concept_scores[j], local.concept_weights[j], local.contributions[j]
        );
    }
    let total: f64 = local.contributions.iter().sum::<f64>() + local.residual_term + local.bias_term;
    println!("residual {:.4}, bias {:.4}", local.residual_term, local.bias_term);
    println!("approx {:.6}, exact {:.6}, sum with residual {:.6}", local.approx_score, local.exact_score, total);
    Ok(())
}
