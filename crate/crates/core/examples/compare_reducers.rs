//! Reconstruction error of PCA, NMF, k-means and NMF seeded from k-means on
//! the same flattened feature maps.

use ncav::reducers::{fit_reducer, reconstruction_error, FitOptions, Method, NmfInit};
use ncav::synthetic::{generate, SyntheticConfig};
use ncav::tensor::flatten_channels;

fn main() -> ncav::Result<()> {
    let config = SyntheticConfig {
        images: 20,
        channels: 64,
        ..Default::default()
    };
    let (_, train, _) = generate(&config)?;
    let v = flatten_channels(&train.maps);
    let opts = FitOptions::default();

    println!("{:>3} {:>10} {:>10} {:>10} {:>14}", "c'", "pca", "nmf", "kmeans", "nmf<-kmeans");
    for k in [5, 10, 20, 30] {
        let err = |method, opts: &FitOptions| -> ncav::Result<f64> {
            reconstruction_error(&v, &fit_reducer(method, &v, k, opts)?.model)
        };
        println!(
            "{:>3} {:>10.4} {:>10.4} {:>10.4} {:>14.4}",
            k,
            err(Method::Pca, &opts)?,
            err(Method::Nmf, &opts)?,
            err(Method::KMeans, &opts)?,
            err(Method::Nmf, &opts.with_init(NmfInit::FromKmeans))?
        );
    }
    Ok(())
}
