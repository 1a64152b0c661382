//! Seeded synthetic feature maps with known concept structure.
//!
//! Maps are generated as `unflatten(S*·P*) + |noise|` from non-negative
//! ground-truth concepts `P*` and sparse non-negative scores `S*`, paired
//! with a random linear head. Useful for examples and for checking that a
//! reducer recovers what was planted.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::explainer::ClassifierHead;
use crate::fidelity::EvalBatch;
use crate::tensor::{unflatten, FeatureMapBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub concepts: usize,
    pub classes: usize,
    /// Probability that a concept is active at a position.
    pub density: f64,
    /// Standard deviation of the folded-normal noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            images: 40,
            height: 7,
            width: 7,
            channels: 256,
            concepts: 20,
            classes: 10,
            density: 0.2,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.images,
            self.height,
            self.width,
            self.channels,
            self.concepts,
            self.classes,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("synthetic dimensions must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.density) || self.noise.is_nan() || self.noise < 0.0 {
            return Err(Error::InvalidArgument(
                "density must lie in [0, 1] and noise be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth and the derived feature maps.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    /// `concepts × channels`, rows of unit norm.
    pub basis: Array2<f64>,
    pub head: ClassifierHead,
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub maps: FeatureMapBatch,
    /// `(n·h·w) × concepts`.
    pub scores: Array2<f64>,
    /// `n × K` head outputs on `maps`.
    pub logits: Array2<f64>,
    /// Argmax of `logits` per image.
    pub labels: Vec<usize>,
}

impl SyntheticSample {
    pub fn eval_batch(&self) -> Result<EvalBatch> {
        EvalBatch::new(self.maps.clone(), self.logits.clone(), self.labels.clone())
    }
}

pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>())
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Head with standard-normal weights and bias.
pub fn random_head(channels: usize, classes: usize, rng: &mut impl Rng) -> Result<ClassifierHead> {
    let w = normal_matrix(channels, classes, rng);
    let b = Array1::from_shape_simple_fn(classes, || StandardNormal.sample(rng));
    ClassifierHead::unnamed(w, b)
}

/// Non-negative unit-norm concept directions, each concentrated on a
/// random subset of channels.
pub fn random_concepts(concepts: usize, channels: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut p = Array2::zeros((concepts, channels));
    for mut row in p.rows_mut() {
        for x in row.iter_mut() {
            if rng.random::<f64>() < 0.3 {
                *x = rng.random::<f64>() + 0.1;
            }
        }
        if row.iter().all(|&x| x == 0.0) {
            row[rng.random_range(0..channels)] = 1.0;
        }
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|x| x / norm);
    }
    p
}

impl SyntheticWorld {
    pub fn new(config: &SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let basis = random_concepts(config.concepts, config.channels, &mut rng);
        let head = random_head(config.channels, config.classes, &mut rng)?;
        Ok(Self { basis, head })
    }

    /// Draws `images` feature maps. Different `stream` values give
    /// independent samples from the same world.
    pub fn sample(&self, config: &SyntheticConfig, images: usize, stream: u64) -> Result<SyntheticSample> {
        config.validate()?;
        if images == 0 {
            return Err(Error::InvalidArgument("need at least one image".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream + 1);
        let m = images * config.height * config.width;
        let k = self.basis.nrows();
        let scores = Array2::from_shape_simple_fn((m, k), || {
            if rng.random::<f64>() < config.density {
                Exp1.sample(&mut rng)
            } else {
                0.0
            }
        });
        let noise = Array2::from_shape_simple_fn((m, self.basis.ncols()), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z * config.noise).abs()
        });
        let v = scores.dot(&self.basis) + noise;
        let maps = FeatureMapBatch::new(unflatten(&v, images, config.height, config.width)?.into_array())?;
        let logits = self.head.predict(&maps)?;
        let labels = logits
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (i, &x) in r.iter().enumerate() {
                    if x > r[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        Ok(SyntheticSample {
            maps,
            scores,
            logits,
            labels,
        })
    }
}

/// A world plus a training and an evaluation sample.
pub fn generate(config: &SyntheticConfig) -> Result<(SyntheticWorld, SyntheticSample, SyntheticSample)> {
    let world = SyntheticWorld::new(config)?;
    let train = world.sample(config, config.images, 0)?;
    let eval = world.sample(config, config.images, 1)?;
    Ok((world, train, eval))
}
