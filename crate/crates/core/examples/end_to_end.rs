//! Full workflow on archives. Synthetic activations go to disk, an explainer
//! is fitted and saved, then the reloaded explainer explains one image.

use ncav::explainer::{fit_explainer, load_explainer, save_explainer, ClassifierHead};
use ncav::fidelity::{approximate_predict, fid_classification};
use ncav::reducers::{FitOptions, Method};
use ncav::synthetic::{generate, SyntheticConfig};
use ncav::tensor::{read_archive, to_channel_first, to_channel_last, write_archive, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("ncav_end_to_end");
    std::fs::create_dir_all(&dir)?;
    let config = SyntheticConfig {
        channels: 64,
        classes: 5,
        ..Default::default()
    };
    let (world, train, eval) = generate(&config)?;

    let acts_path = dir.join("train.npz");
    let acts = to_channel_first(&train.maps);
    let w = Tensor::from_matrix(&world.head.weights);
    let b = Tensor::from_vector(world.head.bias.as_slice().unwrap());
    write_archive(&acts_path, &[("acts", &acts), ("W", &w), ("b", &b)], &[])?;

    let archive = read_archive(&acts_path)?;
    let maps = to_channel_last(archive.require("acts")?)?;
    let names = (0..5).map(|k| format!("class-{k}")).collect();
    let head = ClassifierHead::from_tensors(archive.require("W")?, archive.require("b")?, Some(names))?;
    let explainer = fit_explainer(&maps, &head, 20, Method::Nmf, &FitOptions::default().with_seed(1))?
        .with_layer_name("synthetic");
    let model_path = dir.join("explainer.npz");
    save_explainer(&explainer, &model_path)?;

    let explainer = load_explainer(&model_path)?;
    println!("loaded {} concepts for layer {}", explainer.n_concepts(), explainer.layer_name());

    let approx = approximate_predict(&explainer, &eval.maps)?;
    println!("Fid_c on {} eval images: {:.3}", eval.maps.n(), fid_classification(&eval.logits, &approx, None)?);

    let local = explainer.explain_local(&eval.maps.image(0)?, eval.labels[0])?;
    let top = local
        .contributions
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| j)
        .unwrap();
    println!(
        "image 0 is {} (score {:.3}); concept {top} contributes most ({:.3})",
        local.class_name, local.exact_score, local.contributions[top]
    );
    let protos = explainer.select_prototypes(&maps, top, 5)?;
    println!("training prototypes for concept {top}: {:?}", protos.image_indices);
    Ok(())
}
