use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::rng::{self, Rng};

/// `P` identities × `K` images per batch, half colour and half infrared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PkSpec {
    pub p: usize,
    pub k: usize,
}

impl Default for PkSpec {
    fn default() -> Self {
        Self { p: 8, k: 4 }
    }
}

impl PkSpec {
    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }
}

/// Identity-balanced batch sampler over a training split.
#[derive(Clone, Debug)]
pub struct PkSampler {
    spec: PkSpec,
    /// `by_id[id] = (colour indices, infrared indices)`.
    by_id: Vec<(Vec<usize>, Vec<usize>)>,
    eligible: Vec<usize>,
    samples: usize,
}

impl PkSampler {
    pub fn new(samples: &[Sample], spec: PkSpec) -> Result<Self> {
        if spec.p < 2 || spec.k < 2 || spec.k % 2 != 0 {
            return Err(Error::Config(format!(
                "PK batch needs P >= 2 and an even K >= 2, got P={} K={}",
                spec.p, spec.k
            )));
        }
        let n_ids = samples.iter().map(|s| s.identity + 1).max().unwrap_or(0);
        let mut by_id = vec![(Vec::new(), Vec::new()); n_ids];
        for (i, s) in samples.iter().enumerate() {
            match s.modality {
                Modality::Colour => by_id[s.identity].0.push(i),
                Modality::Infrared => by_id[s.identity].1.push(i),
            }
        }
        let half = spec.k / 2;
        let eligible: Vec<usize> = (0..n_ids)
            .filter(|&id| by_id[id].0.len() >= half && by_id[id].1.len() >= half)
            .collect();
        if eligible.len() < spec.p {
            return Err(Error::Config(format!(
                "PK batch needs {} identities with {half} images per modality; only {} qualify",
                spec.p,
                eligible.len()
            )));
        }
        Ok(Self {
            spec,
            by_id,
            eligible,
            samples: samples.len(),
        })
    }

    pub fn spec(&self) -> PkSpec {
        self.spec
    }

    /// Batches per epoch: one pass over roughly every training image.
    pub fn batches_per_epoch(&self) -> usize {
        (self.samples / self.spec.batch_size()).max(1)
    }

    /// Indices into the training split. Per identity: `K/2` colour then
    /// `K/2` infrared images, identities drawn without replacement.
    pub fn next_batch(&self, rng: &mut Rng) -> Vec<usize> {
        let mut ids = self.eligible.clone();
        rng::shuffle(rng, &mut ids);
        let half = self.spec.k / 2;
        let mut out = Vec::with_capacity(self.spec.batch_size());
        for &id in &ids[..self.spec.p] {
            for pool in [&self.by_id[id].0, &self.by_id[id].1] {
                let mut pool = pool.clone();
                rng::shuffle(rng, &mut pool);
                out.extend_from_slice(&pool[..half]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DataConfig};
    use std::collections::HashMap;

    fn train() -> Vec<Sample> {
        generate(&DataConfig {
            height: 16,
            width: 8,
            ..Default::default()
        })
        .unwrap()
        .train
    }

    #[test]
    fn batches_follow_the_pk_layout() {
        let t = train();
        let s = PkSampler::new(&t, PkSpec::default()).unwrap();
        let mut r = rng::seeded(0);
        for _ in 0..50 {
            let b = s.next_batch(&mut r);
            assert_eq!(b.len(), 32);
            let mut per: HashMap<usize, (usize, usize)> = HashMap::new();
            for &i in &b {
                let e = per.entry(t[i].identity).or_default();
                match t[i].modality {
                    Modality::Colour => e.0 += 1,
                    Modality::Infrared => e.1 += 1,
                }
            }
            assert_eq!(per.len(), 8);
            assert!(per.values().all(|&c| c == (2, 2)));
            let colour = b.iter().filter(|&&i| t[i].modality == Modality::Colour).count();
            assert_eq!(colour, 16);
            let mut uniq = b.clone();
            uniq.sort_unstable();
            uniq.dedup();
            assert_eq!(uniq.len(), 32);
        }
    }

    #[test]
    fn infeasible_spec_rejected() {
        let t = train();
        assert!(PkSampler::new(&t, PkSpec { p: 31, k: 4 }).is_err());
        assert!(PkSampler::new(&t, PkSpec { p: 4, k: 3 }).is_err());
        assert!(PkSampler::new(&t, PkSpec { p: 4, k: 18 }).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let t = train();
        let s = PkSampler::new(&t, PkSpec::default()).unwrap();
        let (mut a, mut b) = (rng::seeded(5), rng::seeded(5));
        for _ in 0..5 {
            assert_eq!(s.next_batch(&mut a), s.next_batch(&mut b));
        }
    }
}
