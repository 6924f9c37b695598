//! Synthetic two-modality identity dataset, augmentation and PK sampling.

mod augment;
mod export;
pub mod render;
mod sampler;

use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentConfig, Erasure};
pub use export::{export, import, MANIFEST_COLUMNS};
pub use sampler::{PkSampler, PkSpec};

use crate::error::{Error, Result};
use crate::model::Modality;
use crate::rng;
use crate::tensor::Tensor;
use render::{Camera, Channel, Latent, RenderSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub num_identities: usize,
    /// Identities `0..train_identities` train; the rest form the test split.
    pub train_identities: usize,
    pub per_id_per_modality: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Fraction of identities generated as hue twins of the previous one.
    pub twin_fraction: f64,
    pub noise_std: f64,
    pub brightness_jitter: f64,
    pub cameras_per_modality: u32,
    /// Extra training identities whose second modality is the red channel
    /// of the colour rendering instead of an infrared one.
    pub red_channel_identities: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_identities: 40,
            train_identities: 30,
            per_id_per_modality: 8,
            height: 96,
            width: 48,
            seed: 0,
            twin_fraction: 0.25,
            noise_std: 0.02,
            brightness_jitter: 0.1,
            cameras_per_modality: 2,
            red_channel_identities: 0,
        }
    }
}

impl DataConfig {
    /// Half-resolution images, matching [`crate::model::ModelConfig::compact`].
    pub fn compact() -> Self {
        Self {
            height: 48,
            width: 24,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 4 {
            return Err(Error::Config(format!(
                "need at least 4 identities, got {}",
                self.num_identities
            )));
        }
        if self.per_id_per_modality < 2 {
            return Err(Error::Config(format!(
                "need at least 2 images per identity and modality, got {}",
                self.per_id_per_modality
            )));
        }
        if self.train_identities < 2 || self.train_identities >= self.num_identities {
            return Err(Error::Config(format!(
                "train_identities must be in 2..{}, got {}",
                self.num_identities, self.train_identities
            )));
        }
        if self.height < 8 || self.width < 4 || self.cameras_per_modality == 0 {
            return Err(Error::Config("image size or camera count too small".into()));
        }
        if !(0.0..=1.0).contains(&self.twin_fraction) {
            return Err(Error::Config("twin_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Number of identities the classifier heads see during training.
    pub fn num_train_classes(&self) -> usize {
        self.train_identities + self.red_channel_identities
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    /// Infrared probes of test identities.
    Query,
    /// One colour image per test identity.
    Gallery,
    /// Remaining colour images of test identities (not in the gallery).
    Pool,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
            Split::Pool => "pool",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Split::Train, Split::Query, Split::Gallery, Split::Pool]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub identity: usize,
    pub modality: Modality,
    pub camera: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub train: Vec<Sample>,
    pub query: Vec<Sample>,
    pub gallery: Vec<Sample>,
    pub pool: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Sample] {
        match s {
            Split::Train => &self.train,
            Split::Query => &self.query,
            Split::Gallery => &self.gallery,
            Split::Pool => &self.pool,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.query.len() + self.gallery.len() + self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-channel pixel means of the training split, used to fill erasures.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0.0; 3];
        let mut count = 0usize;
        for s in &self.train {
            let plane = s.image.numel() / 3;
            for (c, sum) in sums.iter_mut().enumerate() {
                *sum += s.image.values()[c * plane..(c + 1) * plane].iter().sum::<f64>();
            }
            count += plane;
        }
        sums.map(|s| s / count.max(1) as f64)
    }

    /// Same-identity (colour, infrared) pairs among test images.
    pub fn cross_modal_pairs(&self) -> Vec<(&Sample, &Sample)> {
        let colour: Vec<&Sample> = self.gallery.iter().chain(&self.pool).collect();
        let mut out = Vec::new();
        for q in &self.query {
            for c in colour.iter().filter(|c| c.identity == q.identity) {
                out.push((*c, q));
            }
        }
        out
    }
}

/// Render the full dataset. Deterministic in `config.seed`.
pub fn generate(config: &DataConfig) -> Result<Dataset> {
    config.validate()?;
    let total = config.num_identities + config.red_channel_identities;
    let mut latents: Vec<Latent> = Vec::with_capacity(total);
    for id in 0..total {
        let mut r = rng::derive(config.seed, 0x1d_0000 + id as u64);
        let twin = id % 2 == 1
            && rng::uniform(&mut rng::derive(config.seed, 0x7_0000 + id as u64), 0.0, 1.0) < config.twin_fraction * 2.0;
        latents.push(if twin {
            latents[id - 1].hue_twin(&mut r)
        } else {
            Latent::sample(&mut r)
        });
    }
    let spec = RenderSpec {
        height: config.height,
        width: config.width,
        noise_std: config.noise_std,
    };
    let cams = config.cameras_per_modality;
    let cameras: Vec<Camera> = (0..2 * cams)
        .map(|c| Camera::new(config.seed, c, config.brightness_jitter))
        .collect();

    let mut ds = Dataset {
        config: config.clone(),
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
        pool: Vec::new(),
    };
    // Red-channel identities take the classifier labels after the real ones.
    let order: Vec<usize> = (0..config.train_identities)
        .chain(config.num_identities..total)
        .chain(config.train_identities..config.num_identities)
        .collect();
    for (label, &id) in order.iter().enumerate() {
        let red = id >= config.num_identities;
        let test = !red && id >= config.train_identities;
        let mut r = rng::derive(config.seed, 0x5a_0000 + id as u64);
        for m in [Modality::Colour, Modality::Infrared] {
            for k in 0..config.per_id_per_modality {
                let camera = m as u32 * cams + (rng::uniform(&mut r, 0.0, cams as f64) as u32).min(cams - 1);
                let channel = match (m, red) {
                    (Modality::Infrared, true) => Channel::Red,
                    _ => Channel::from(m),
                };
                let image = render::render(&latents[id], channel, &cameras[camera as usize], &spec, &mut r);
                let sample = Sample {
                    image,
                    identity: label,
                    modality: m,
                    camera,
                };
                match (test, m) {
                    (false, _) => ds.train.push(sample),
                    (true, Modality::Infrared) => ds.query.push(sample),
                    (true, Modality::Colour) if k == 0 => ds.gallery.push(sample),
                    (true, Modality::Colour) => ds.pool.push(sample),
                }
            }
        }
    }
    Ok(ds)
}

/// Rank-1 accuracy of nearest-neighbour matching in raw pixel space from
/// query to gallery. Establishes that the test split is learnable at all.
pub fn pixel_nn_rank1(ds: &Dataset) -> f64 {
    let hits = ds
        .query
        .iter()
        .filter(|q| {
            let best = ds
                .gallery
                .iter()
                .map(|g| {
                    let d: f64 = q
                        .image
                        .values()
                        .iter()
                        .zip(g.image.values())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, g.identity)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("gallery is non-empty");
            best.1 == q.identity
        })
        .count();
    hits as f64 / ds.query.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            height: 32,
            width: 16,
            ..Default::default()
        }
    }

    #[test]
    fn single_shot_split_sizes() {
        let ds = generate(&small()).unwrap();
        assert_eq!(ds.gallery.len(), 10);
        assert_eq!(ds.query.len(), 10 * 8);
        assert_eq!(ds.pool.len(), 10 * 7);
        assert_eq!(ds.train.len(), 30 * 16);
        assert_eq!(ds.len(), 40 * 8 * 2);
        assert!(ds.query.iter().all(|s| s.modality == Modality::Infrared));
        assert!(ds.gallery.iter().all(|s| s.modality == Modality::Colour));
        let mut ids: Vec<usize> = ds.gallery.iter().map(|s| s.identity).collect();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn train_and_test_identities_are_disjoint() {
        let ds = generate(&small()).unwrap();
        let train: std::collections::HashSet<usize> = ds.train.iter().map(|s| s.identity).collect();
        assert_eq!(train.len(), 30);
        for s in ds.query.iter().chain(&ds.gallery).chain(&ds.pool) {
            assert!(!train.contains(&s.identity));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&DataConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train[0].image, c.train[0].image);
    }

    #[test]
    fn rejects_insufficient_counts() {
        assert!(generate(&DataConfig { num_identities: 3, ..small() }).is_err());
        assert!(generate(&DataConfig { per_id_per_modality: 1, ..small() }).is_err());
    }

    #[test]
    fn red_channel_identities_extend_train_labels() {
        let cfg = DataConfig { red_channel_identities: 2, ..small() };
        let ds = generate(&cfg).unwrap();
        assert_eq!(cfg.num_train_classes(), 32);
        assert_eq!(ds.train.len(), 32 * 16);
        assert!(ds.train.iter().all(|s| s.identity < 32));
        assert!(ds.gallery.iter().all(|s| s.identity >= 32));
    }

    #[test]
    fn pixel_space_matching_beats_chance() {
        let ds = generate(&small()).unwrap();
        let r1 = pixel_nn_rank1(&ds);
        assert!(r1 >= 2.0 / ds.gallery.len() as f64, "pixel rank-1 {r1}");
    }
}
