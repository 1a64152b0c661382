//! Round-trips feature maps through the channel-first `.npz` interchange
//! format and checks that pooling plus the stored head reproduces the
//! stored logits.

use ncav::explainer::ClassifierHead;
use ncav::synthetic::{generate, SyntheticConfig};
use ncav::tensor::{gap, read_archive_requiring, to_channel_first, to_channel_last, write_archive, Tensor};

fn main() -> ncav::Result<()> {
    let config = SyntheticConfig {
        images: 4,
        channels: 32,
        classes: 3,
        ..Default::default()
    };
    let (world, sample, _) = generate(&config)?;

    let path = std::env::temp_dir().join("ncav_tensor_io.npz");
    let acts = to_channel_first(&sample.maps);
    let logits = Tensor::from_matrix(&sample.logits);
    let w = Tensor::from_matrix(&world.head.weights);
    let b = Tensor::from_vector(world.head.bias.as_slice().unwrap());
    write_archive(&path, &[("acts", &acts), ("logits", &logits), ("W", &w), ("b", &b)], &[])?;
    println!("wrote {} with acts shape {:?}", path.display(), acts.shape);

    let archive = read_archive_requiring(&path, &["acts", "logits", "W", "b"])?;
    let maps = to_channel_last(archive.require("acts")?)?;
    let head = ClassifierHead::from_tensors(archive.require("W")?, archive.require("b")?, None)?;
    println!("channel-last batch: n={} h={} w={} c={}", maps.n(), maps.h(), maps.w(), maps.c());

    let pooled = gap(&maps);
    let predicted = head.predict_pooled(&pooled)?;
    let stored = archive.require("logits")?.to_matrix()?;
    let worst = predicted
        .iter()
        .zip(stored.iter())
        .map(|(p, s)| (p - s).abs())
        .fold(0.0, f64::max);
    println!("largest |GAP(A)W + b - logits| = {worst:.3e}");
    std::fs::remove_file(&path).ok();
    Ok(())
}
