//! Renders a local explanation with heat-blended concept overlays and
//! highlighted prototypes from the training set.
//!
//! Usage: `cargo run --example render_heatmaps -- [out_dir]`

use image::{Rgb, RgbImage};
use ncav::explainer::fit_explainer;
use ncav::reducers::{FitOptions, Method};
use ncav::render::{render_explanation, score_map, ConceptPrototypes, RenderOptions, ScoredImage};
use ncav::synthetic::{generate, SyntheticConfig};

fn stripes(seed: usize) -> RgbImage {
    RgbImage::from_fn(112, 112, |x, y| {
        let band = ((x + y + seed as u32 * 9) / 14) % 2;
        Rgb([60 + band as u8 * 120, 90, 160 - band as u8 * 80])
    })
}

fn main() -> ncav::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/ncav-render".into());
    let config = SyntheticConfig {
        images: 12,
        channels: 48,
        ..Default::default()
    };
    let (world, train, eval) = generate(&config)?;
    let (h, w) = (config.height, config.width);
    let explainer = fit_explainer(&train.maps, &world.head, 4, Method::Nmf, &FitOptions::default())?;

    let instance = eval.maps.image(0)?;
    let local = explainer.explain_local(&instance, eval.labels[0])?;
    let positions = explainer.position_scores(&instance)?;
    let instance_maps = (0..4)
        .map(|j| score_map(&positions, h, w, 0, j))
        .collect::<ncav::Result<Vec<_>>>()?;

    let train_positions = explainer.position_scores(&train.maps)?;
    let mut prototypes = Vec::new();
    for j in 0..4 {
        let set = explainer.select_prototypes(&train.maps, j, 3)?;
        let images = set
            .image_indices
            .iter()
            .map(|&i| {
                Ok(ScoredImage {
                    image_index: i,
                    image: stripes(i),
                    score_map: score_map(&train_positions, h, w, i, j)?,
                })
            })
            .collect::<ncav::Result<Vec<_>>>()?;
        prototypes.push(ConceptPrototypes { set, images });
    }

    let files = render_explanation(
        &local,
        &stripes(99),
        &instance_maps,
        &prototypes,
        &out,
        &RenderOptions::default(),
    )?;
    println!("wrote {} files to {out}", files.count());
    println!("  {}", files.explanation.display());
    println!("  {}", files.chart.display());
    Ok(())
}
