//! Retrieval metrics (CMC, mAP), the modality probe and the per-level
//! cross-modal correlation diagnostic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{adversarial_graph, uniform_weights};
use crate::model::{ForwardRecord, Modality, Model, NUM_LEVELS};
use crate::rng;
use crate::tensor::{Graph, SgdMomentum, Tensor};

/// Gallery ranking for one probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    pub probe: usize,
    pub probe_identity: usize,
    /// Gallery indices by ascending distance, ties by index.
    pub order: Vec<usize>,
    /// `relevant[r]` is true when `order[r]` shares the probe's identity.
    pub relevant: Vec<bool>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Rank the gallery for every probe under `distance`.
pub fn rank_lists_with(
    probes: &[Vec<f64>],
    probe_ids: &[usize],
    gallery: &[Vec<f64>],
    gallery_ids: &[usize],
    distance: impl Fn(&[f64], &[f64]) -> f64,
) -> Vec<RankList> {
    probes
        .iter()
        .zip(probe_ids)
        .enumerate()
        .map(|(p, (f, &pid))| {
            let mut scored: Vec<(f64, usize)> = gallery.iter().enumerate().map(|(i, g)| (distance(f, g), i)).collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let order: Vec<usize> = scored.into_iter().map(|(_, i)| i).collect();
            let relevant = order.iter().map(|&i| gallery_ids[i] == pid).collect();
            RankList {
                probe: p,
                probe_identity: pid,
                order,
                relevant,
            }
        })
        .collect()
}

/// Euclidean ranking.
pub fn rank_lists(probes: &[Vec<f64>], probe_ids: &[usize], gallery: &[Vec<f64>], gallery_ids: &[usize]) -> Vec<RankList> {
    rank_lists_with(probes, probe_ids, gallery, gallery_ids, euclidean)
}

fn check_relevant(lists: &[RankList]) -> Result<()> {
    if lists.is_empty() {
        return Err(Error::Protocol("no probes to evaluate".into()));
    }
    if let Some(l) = lists.iter().find(|l| !l.relevant.contains(&true)) {
        return Err(Error::Protocol(format!(
            "probe {} (identity {}) has no relevant gallery item",
            l.probe, l.probe_identity
        )));
    }
    Ok(())
}

/// Fraction of probes with a relevant item in the top `k`.
pub fn cmc(lists: &[RankList], k: usize) -> Result<f64> {
    check_relevant(lists)?;
    let hits = lists.iter().filter(|l| l.relevant.iter().take(k).any(|r| *r)).count();
    Ok(hits as f64 / lists.len() as f64)
}

/// Mean of precision at each relevant position.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, r) in relevant.iter().enumerate() {
        if *r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn mean_average_precision(lists: &[RankList]) -> Result<f64> {
    check_relevant(lists)?;
    Ok(lists.iter().map(|l| average_precision(&l.relevant)).sum::<f64>() / lists.len() as f64)
}

/// Probe id, top-10 gallery ids and their relevance flags, one row per probe.
pub fn write_rank_csv<W: Write>(lists: &[RankList], gallery_ids: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["probe".to_string(), "probe_identity".to_string()];
    header.extend((1..=10).map(|r| format!("gallery_{r}")));
    header.extend((1..=10).map(|r| format!("relevant_{r}")));
    w.write_record(&header)?;
    for l in lists {
        let mut row = vec![l.probe.to_string(), l.probe_identity.to_string()];
        let top: Vec<usize> = l.order.iter().take(10).copied().collect();
        for r in 0..10 {
            row.push(top.get(r).map(|&i| gallery_ids[i].to_string()).unwrap_or_default());
        }
        for r in 0..10 {
            row.push(l.relevant.get(r).map(|&b| u8::from(b).to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Fraction of each modality used for fitting; the rest is held out.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            iterations: 300,
            lr: 0.05,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Held-out accuracy of a fresh two-layer classifier predicting modality
/// from `features`. Near 0.5 means the features do not reveal modality.
pub fn domain_probe(features: &[Vec<f64>], labels: &[Modality], cfg: &ProbeConfig) -> Result<f64> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Usage(format!(
            "{} features with {} labels",
            features.len(),
            labels.len()
        )));
    }
    let d = features[0].len();
    let mut r = rng::derive(cfg.seed, 0x9_0be);
    // Stratified split so both halves keep the modality balance.
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for m in [Modality::Colour, Modality::Infrared] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == m).collect();
        if idx.len() < 2 {
            return Err(Error::Usage(
                "domain probe needs at least two samples of each modality".into(),
            ));
        }
        rng::shuffle(&mut r, &mut idx);
        let cut = ((idx.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();

    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for &i in &train {
        mean.iter_mut().zip(&features[i]).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in &train {
        std.iter_mut().zip(&features[i]).zip(&mean).for_each(|((s, x), m)| *s += (x - m) * (x - m));
    }
    std.iter_mut().for_each(|s| *s = (*s / train.len() as f64).sqrt().max(1e-8));
    let matrix = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .flat_map(|&i| features[i].iter().zip(&mean).zip(&std).map(|((x, m), s)| (x - m) / s))
            .collect()
    };

    let h = cfg.hidden;
    let mut params = vec![
        Tensor::param(vec![d, h], rng::normals(&mut r, d * h, (2.0 / d as f64).sqrt()))?,
        Tensor::param(vec![h], vec![0.0; h])?,
        Tensor::param(vec![h, 1], rng::normals(&mut r, h, (1.0 / h as f64).sqrt()))?,
        Tensor::param(vec![1], vec![0.0])?,
    ];
    let forward = |g: &mut Graph, p: &[Tensor], x: Vec<f64>, n: usize, train: bool| -> Result<(Vec<crate::tensor::Var>, crate::tensor::Var)> {
        let vars: Vec<_> = p.iter().map(|t| if train { g.leaf(t) } else { g.frozen(t) }).collect();
        let x = g.constant(vec![n, d], x)?;
        let a = g.linear(x, vars[0], vars[1])?;
        let a = g.relu(a);
        let o = g.linear(a, vars[2], vars[3])?;
        let o = g.sigmoid(o);
        let o = g.reshape(o, vec![n])?;
        Ok((vars, o))
    };
    let xtrain = matrix(&train);
    let ytrain: Vec<Modality> = train.iter().map(|&i| labels[i]).collect();
    let w = uniform_weights(train.len());
    let mut opt = SgdMomentum::new(0.9)?;
    for _ in 0..cfg.iterations {
        let mut g = Graph::new();
        let (vars, p) = forward(&mut g, &params, xtrain.clone(), train.len(), true)?;
        let loss = adversarial_graph(&mut g, p, &ytrain, &w)?;
        g.backward(loss)?;
        for (t, v) in params.iter_mut().zip(&vars) {
            g.accumulate_grad_into(*v, t)?;
        }
        opt.step(params.iter_mut().map(|t| (t, cfg.lr)))?;
    }
    let mut g = Graph::new();
    let (_, p) = forward(&mut g, &params, matrix(&test), test.len(), false)?;
    let correct = g
        .value(p)
        .iter()
        .zip(&test)
        .filter(|(p, &i)| (**p >= 0.5) == (labels[i] == Modality::Infrared))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMeasure {
    Pearson,
    Cosine,
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (ab / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCorrelation {
    /// Mean correlation per level over the pairs that were not skipped.
    pub mean: Vec<f64>,
    /// Pairs skipped per level for zero variance.
    pub skipped: Vec<usize>,
    pub pairs: usize,
}

/// Mean per-level correlation between paired feature sets; `pairs[k].0[j]`
/// and `pairs[k].1[j]` are the level-`j` features of the two members.
pub fn layer_correlation(pairs: &[(&[Vec<f64>], &[Vec<f64>])], measure: CorrelationMeasure) -> Result<LayerCorrelation> {
    if pairs.is_empty() {
        return Err(Error::Usage("layer correlation needs at least one pair".into()));
    }
    let levels = pairs[0].0.len();
    let f = match measure {
        CorrelationMeasure::Pearson => pearson,
        CorrelationMeasure::Cosine => cosine,
    };
    let mut mean = vec![0.0; levels];
    let mut skipped = vec![0; levels];
    for j in 0..levels {
        let vals: Vec<f64> = pairs
            .iter()
            .filter_map(|(a, b)| {
                let c = f(&a[j], &b[j]);
                if c.is_none() {
                    skipped[j] += 1;
                }
                c
            })
            .collect();
        mean[j] = if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
    }
    Ok(LayerCorrelation {
        mean,
        skipped,
        pairs: pairs.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub correlation: CorrelationMeasure,
    /// Images per inference chunk.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            correlation: CorrelationMeasure::Pearson,
            chunk: 64,
        }
    }
}

/// Evaluation summary. Serialized as the documented JSON result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rank1: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub probe_accuracy: f64,
    pub layer_correlations: Vec<f64>,
    pub correlation_skipped: Vec<usize>,
    pub correlation_pairs: usize,
    pub num_probes: usize,
    pub gallery_size: usize,
}

/// Everything an evaluation computes, including per-probe rankings.
pub struct Evaluation {
    pub result: EvalResult,
    pub rank_lists: Vec<RankList>,
    pub gallery_ids: Vec<usize>,
}

fn records(model: &Model, samples: &[crate::data::Sample], chunk: usize) -> Result<Vec<ForwardRecord>> {
    let imgs: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let mods: Vec<Modality> = samples.iter().map(|s| s.modality).collect();
    model.infer(&imgs, &mods, chunk)
}

/// Full evaluation of `model` on the test split of `ds`.
pub fn evaluate(model: &Model, ds: &Dataset, cfg: &EvalConfig) -> Result<Evaluation> {
    let c = model.config();
    if (c.input_height, c.input_width) != (ds.config.height, ds.config.width) {
        return Err(Error::Config(format!(
            "model expects {}x{} images, dataset has {}x{}",
            c.input_height, c.input_width, ds.config.height, ds.config.width
        )));
    }
    let query = records(model, &ds.query, cfg.chunk)?;
    let gallery = records(model, &ds.gallery, cfg.chunk)?;
    let pool = records(model, &ds.pool, cfg.chunk)?;

    let qd: Vec<Vec<f64>> = query.iter().map(ForwardRecord::descriptor).collect();
    let gd: Vec<Vec<f64>> = gallery.iter().map(ForwardRecord::descriptor).collect();
    let qid: Vec<usize> = ds.query.iter().map(|s| s.identity).collect();
    let gid: Vec<usize> = ds.gallery.iter().map(|s| s.identity).collect();
    let lists = rank_lists(&qd, &qid, &gd, &gid);

    let mut feats = qd.clone();
    feats.extend(gd.iter().cloned());
    feats.extend(pool.iter().map(ForwardRecord::descriptor));
    let mods: Vec<Modality> = ds
        .query
        .iter()
        .chain(&ds.gallery)
        .chain(&ds.pool)
        .map(|s| s.modality)
        .collect();
    let probe_accuracy = domain_probe(&feats, &mods, &cfg.probe)?;

    let colour: Vec<(&ForwardRecord, usize)> = gallery
        .iter()
        .zip(&ds.gallery)
        .chain(pool.iter().zip(&ds.pool))
        .map(|(r, s)| (r, s.identity))
        .collect();
    let mut pairs: Vec<(&[Vec<f64>], &[Vec<f64>])> = Vec::new();
    for (q, s) in query.iter().zip(&ds.query) {
        for (cr, id) in &colour {
            if *id == s.identity {
                pairs.push((&cr.taps, &q.taps));
            }
        }
    }
    let corr = layer_correlation(&pairs, cfg.correlation)?;
    debug_assert_eq!(corr.mean.len(), NUM_LEVELS);

    let result = EvalResult {
        rank1: cmc(&lists, 1)?,
        rank10: cmc(&lists, 10)?,
        map: mean_average_precision(&lists)?,
        probe_accuracy,
        layer_correlations: corr.mean,
        correlation_skipped: corr.skipped,
        correlation_pairs: corr.pairs,
        num_probes: lists.len(),
        gallery_size: gd.len(),
    };
    Ok(Evaluation {
        result,
        rank_lists: lists,
        gallery_ids: gid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(relevant: &[bool]) -> RankList {
        RankList {
            probe: 0,
            probe_identity: 0,
            order: (0..relevant.len()).collect(),
            relevant: relevant.to_vec(),
        }
    }

    #[test]
    fn cmc_examples() {
        let perfect = vec![list(&[true, false]), list(&[true, false, false])];
        assert_eq!(cmc(&perfect, 1).unwrap(), 1.0);
        let third = vec![list(&[false, false, true, false])];
        assert_eq!(cmc(&third, 1).unwrap(), 0.0);
        assert_eq!(cmc(&third, 10).unwrap(), 1.0);
        assert!(matches!(cmc(&[list(&[false, false])], 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn average_precision_examples() {
        assert!((average_precision(&[true, false, true]) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true, true, false]), 1.0);
        for r in 1..8 {
            let mut rel = vec![false; 8];
            rel[r - 1] = true;
            assert!((average_precision(&rel) - 1.0 / r as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let g = vec![vec![1.0], vec![1.0], vec![0.0]];
        let l = rank_lists(&[vec![0.5]], &[7], &g, &[1, 7, 2]);
        assert_eq!(l[0].order, vec![0, 1, 2]);
        assert_eq!(l[0].relevant, vec![false, true, false]);
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 4.0, 3.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&a, &[2.0; 4]).is_none());
    }

    #[test]
    fn correlation_skips_constant_vectors() {
        let a = vec![vec![1.0, 2.0, 3.0]];
        let c = vec![vec![5.0, 5.0, 5.0]];
        let pairs: Vec<(&[Vec<f64>], &[Vec<f64>])> = vec![(&a, &a), (&a, &c)];
        let r = layer_correlation(&pairs, CorrelationMeasure::Pearson).unwrap();
        assert_eq!(r.skipped, vec![1]);
        assert!((r.mean[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_rejects_single_modality() {
        let f = vec![vec![0.0]; 4];
        let l = vec![Modality::Colour; 4];
        assert!(matches!(domain_probe(&f, &l, &ProbeConfig::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn probe_separable_and_identical() {
        let n = 80;
        let labels: Vec<Modality> = (0..n).map(|i| if i % 2 == 0 { Modality::Colour } else { Modality::Infrared }).collect();
        let sep: Vec<Vec<f64>> = labels.iter().map(|m| vec![m.label(); 4]).collect();
        assert!(domain_probe(&sep, &labels, &ProbeConfig::default()).unwrap() > 0.99);
        let same = vec![vec![0.3, -0.2, 1.0]; n];
        let acc = domain_probe(&same, &labels, &ProbeConfig::default()).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }
}
