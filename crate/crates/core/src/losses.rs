//! Training objective: per-part cross-entropy, batch-hard triplet, entropy
//! weights and the per-level domain-adversarial term.
//!
//! Every term has a plain-value form (used by tests, evaluation and logging)
//! and a graph form that the trainer differentiates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{average_distribution, BatchForward, Bound, Modality, Model, Tap, NUM_LEVELS};
use crate::tensor::{log_sum_exp, Graph, Var, LOG_EPS};

/// The four training configurations compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Cross-entropy and triplet only.
    #[serde(rename = "baseline")]
    Baseline,
    /// Unweighted adversarial loss on the descriptor and the deepest tap.
    #[serde(rename = "vanilla")]
    Vanilla,
    /// Unweighted adversarial loss on all four taps.
    #[serde(rename = "shallow")]
    Shallow,
    /// Entropy-weighted adversarial loss on all four taps.
    #[serde(rename = "shallow+weighting")]
    ShallowWeighting,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Baseline,
        Ablation::Vanilla,
        Ablation::Shallow,
        Ablation::ShallowWeighting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Vanilla => "vanilla",
            Ablation::Shallow => "shallow",
            Ablation::ShallowWeighting => "shallow+weighting",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown ablation {s:?}; expected one of baseline, vanilla, shallow, shallow+weighting"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub triplet_margin: f64,
    /// Taps `1..=4` that receive an adversarial term. Empty disables it.
    pub adv_levels: Vec<usize>,
    pub weighting_enabled: bool,
    /// Adversarial term on the descriptor and `g_4` only, unweighted.
    pub vanilla_mode: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::for_ablation(Ablation::ShallowWeighting)
    }
}

impl LossConfig {
    pub fn for_ablation(a: Ablation) -> Self {
        let (adv_levels, weighting_enabled, vanilla_mode) = match a {
            Ablation::Baseline => (vec![], false, false),
            Ablation::Vanilla => (vec![NUM_LEVELS], false, true),
            Ablation::Shallow => ((1..=NUM_LEVELS).collect(), false, false),
            Ablation::ShallowWeighting => ((1..=NUM_LEVELS).collect(), true, false),
        };
        Self {
            triplet_margin: 0.3,
            adv_levels,
            weighting_enabled,
            vanilla_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.triplet_margin >= 0.0) {
            return Err(Error::Config("triplet_margin must be >= 0".into()));
        }
        if let Some(bad) = self.adv_levels.iter().find(|l| !(1..=NUM_LEVELS).contains(*l)) {
            return Err(Error::Config(format!(
                "adversarial level {bad} out of range 1..={NUM_LEVELS}"
            )));
        }
        if self.vanilla_mode && self.weighting_enabled {
            return Err(Error::Config("vanilla mode is unweighted by definition".into()));
        }
        Ok(())
    }

    /// Classifier inputs that carry an adversarial term, in log order.
    pub fn taps(&self) -> Vec<Tap> {
        if self.vanilla_mode {
            return vec![Tap::Descriptor, Tap::Level(NUM_LEVELS)];
        }
        let mut levels = self.adv_levels.clone();
        levels.sort_unstable();
        levels.dedup();
        levels.into_iter().map(Tap::Level).collect()
    }

    pub fn adversarial(&self) -> bool {
        !self.taps().is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvTerm {
    pub tap: Tap,
    pub value: f64,
}

impl AdvTerm {
    /// Column name in training logs: `adv_1`..`adv_4`, `adv_f`.
    pub fn column(&self) -> String {
        tap_column(self.tap)
    }
}

pub fn tap_column(tap: Tap) -> String {
    match tap {
        Tap::Level(j) => format!("adv_{j}"),
        Tap::Descriptor => "adv_f".into(),
    }
}

/// Values of every term of the objective for one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub xent_per_part: Vec<f64>,
    pub triplet: f64,
    pub adv: Vec<AdvTerm>,
    /// Per-sample adversarial weights, in the caller's sample order.
    pub weights: Vec<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn adv_total(&self) -> f64 {
        self.adv.iter().map(|a| a.value).sum()
    }

    pub fn xent_mean(&self) -> f64 {
        self.xent_per_part.iter().sum::<f64>() / self.xent_per_part.len() as f64
    }

    /// `Σ xent + triplet − Σ adv` from the stored parts.
    pub fn recomputed_total(&self) -> f64 {
        self.xent_per_part.iter().sum::<f64>() + self.triplet - self.adv_total()
    }

    /// First non-finite term, by log column name.
    pub fn non_finite_term(&self) -> Option<String> {
        for (i, x) in self.xent_per_part.iter().enumerate() {
            if !x.is_finite() {
                return Some(format!("xent_{}", i + 1));
            }
        }
        if !self.triplet.is_finite() {
            return Some("triplet".into());
        }
        if let Some(a) = self.adv.iter().find(|a| !a.value.is_finite()) {
            return Some(a.column());
        }
        (!self.total.is_finite()).then(|| "total".into())
    }
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy_part(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Usage(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

fn check_triplet_batch(labels: &[usize]) -> Result<()> {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Usage(
            "batch-hard triplet needs at least two identities in the batch".into(),
        ));
    }
    for id in distinct {
        if labels.iter().filter(|&&l| l == id).count() < 2 {
            return Err(Error::Usage(format!(
                "identity {id} has a single sample in the batch; batch-hard triplet needs two"
            )));
        }
    }
    Ok(())
}

/// Hardest positive and hardest negative index for every anchor, from a
/// row-major `n × n` distance matrix. Ties go to the lower index.
fn hardest(dist: &[f64], labels: &[usize]) -> Vec<(usize, usize)> {
    let n = labels.len();
    (0..n)
        .map(|a| {
            let row = &dist[a * n..(a + 1) * n];
            let mut pos = (usize::MAX, f64::NEG_INFINITY);
            let mut neg = (usize::MAX, f64::INFINITY);
            for (j, &d) in row.iter().enumerate() {
                if j == a {
                    continue;
                }
                if labels[j] == labels[a] {
                    if d > pos.1 {
                        pos = (j, d);
                    }
                } else if d < neg.1 {
                    neg = (j, d);
                }
            }
            (pos.0, neg.0)
        })
        .collect()
}

/// Batch-hard triplet loss on raw descriptors, averaged over anchors.
pub fn triplet_batch_hard(descriptors: &[Vec<f64>], labels: &[usize], margin: f64) -> Result<f64> {
    if descriptors.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} descriptors with {} labels",
            descriptors.len(),
            labels.len()
        )));
    }
    check_triplet_batch(labels)?;
    let n = labels.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = crate::tensor::euclidean(&descriptors[i], &descriptors[j]);
        }
    }
    let total: f64 = hardest(&dist, labels)
        .into_iter()
        .enumerate()
        .map(|(a, (p, q))| (dist[a * n + p] - dist[a * n + q] + margin).max(0.0))
        .sum();
    Ok(total / n as f64)
}

/// Shannon entropy in nats, with `0 · log 0 = 0`.
pub fn entropy(distribution: &[f64]) -> Result<f64> {
    if distribution.is_empty() {
        return Err(Error::Usage("entropy of an empty distribution".into()));
    }
    if distribution.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Usage("distribution has a negative or NaN entry".into()));
    }
    let s: f64 = distribution.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Usage(format!("distribution sums to {s}, not 1")));
    }
    let h = -distribution
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// `w_k = (1 + e^{-H_k}) / Σ (1 + e^{-H_k'})`.
pub fn batch_weights(entropies: &[f64]) -> Result<Vec<f64>> {
    if entropies.is_empty() {
        return Err(Error::Usage("batch_weights of an empty batch".into()));
    }
    if let Some(bad) = entropies.iter().find(|h| !(**h >= 0.0) || !h.is_finite()) {
        return Err(Error::Usage(format!("entropy {bad} is not a finite non-negative value")));
    }
    let raw: Vec<f64> = entropies.iter().map(|h| 1.0 + (-h).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / z).collect())
}

/// `1/M` for every sample.
pub fn uniform_weights(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// `-m log D - (1 - m) log(1 - D)` with `D` clamped away from 0 and 1.
pub fn adversarial_vanilla(d_out: f64, m: Modality) -> f64 {
    let d = d_out.clamp(LOG_EPS, 1.0 - LOG_EPS);
    let m = m.label();
    -m * d.ln() - (1.0 - m) * (1.0 - d).ln()
}

/// Weighted adversarial loss summed over levels. `d_out[level][k]` is the
/// classifier output for sample `k`. Returns the total and the per-level terms.
pub fn adversarial_weighted(d_out: &[Vec<f64>], modality: &[Modality], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut per_level = Vec::with_capacity(d_out.len());
    for level in d_out {
        if level.len() != modality.len() || level.len() != weights.len() {
            return Err(Error::Usage(format!(
                "{} classifier outputs for {} samples and {} weights",
                level.len(),
                modality.len(),
                weights.len()
            )));
        }
        per_level.push(
            level
                .iter()
                .zip(modality)
                .zip(weights)
                .map(|((d, m), w)| w * adversarial_vanilla(*d, *m))
                .sum(),
        );
    }
    Ok((per_level.iter().sum(), per_level))
}

/// Entropy of each row's averaged class distribution, in batch-row order.
pub fn row_entropies(g: &Graph, bf: &BatchForward) -> Result<Vec<f64>> {
    let n = bf.order.len();
    let c = g.shape(bf.logits[0])[1];
    (0..n)
        .map(|r| {
            let rows: Vec<&[f64]> = bf
                .logits
                .iter()
                .map(|l| &g.value(*l)[r * c..(r + 1) * c])
                .collect();
            entropy(&average_distribution(&rows))
        })
        .collect()
}

/// Graph form of the batch-hard triplet loss on the rows of `x`.
pub fn triplet_graph(g: &mut Graph, x: Var, labels: &[usize], margin: f64) -> Result<Var> {
    check_triplet_batch(labels)?;
    let n = labels.len();
    if g.shape(x)[0] != n {
        return Err(Error::Usage(format!("{} labels for {} rows", n, g.shape(x)[0])));
    }
    let dist = g.pairwise_distance(x)?;
    let pairs = hardest(g.value(dist), labels);
    let pos_idx: Vec<usize> = pairs.iter().enumerate().map(|(a, (p, _))| a * n + p).collect();
    let neg_idx: Vec<usize> = pairs.iter().enumerate().map(|(a, (_, q))| a * n + q).collect();
    let dp = g.gather(dist, &pos_idx)?;
    let dn = g.gather(dist, &neg_idx)?;
    let diff = g.sub(dp, dn)?;
    let shifted = g.add_scalar(diff, margin);
    let hinge = g.relu(shifted);
    Ok(g.mean(hinge))
}

/// Graph form of `Σ_k -w_k (m_k log p_k + (1 - m_k) log(1 - p_k))` for
/// classifier outputs `p[N]`. Weights enter as constants.
pub fn adversarial_graph(g: &mut Graph, p: Var, modality: &[Modality], weights: &[f64]) -> Result<Var> {
    let n = modality.len();
    if g.shape(p) != [n] || weights.len() != n {
        return Err(Error::Usage(format!(
            "classifier output {:?} for {n} samples and {} weights",
            g.shape(p),
            weights.len()
        )));
    }
    let pos: Vec<f64> = modality.iter().zip(weights).map(|(m, w)| w * m.label()).collect();
    let neg: Vec<f64> = modality.iter().zip(weights).map(|(m, w)| w * (1.0 - m.label())).collect();
    let pos = g.constant(vec![n], pos)?;
    let neg = g.constant(vec![n], neg)?;
    let lp = g.log(p);
    let q = g.one_minus(p);
    let lq = g.log(q);
    let a = g.mul(pos, lp)?;
    let b = g.mul(neg, lq)?;
    let s = g.add(a, b)?;
    let s = g.sum(s);
    Ok(g.scale(s, -1.0))
}

/// Adversarial weights for a batch in row order.
fn weights_for(g: &Graph, bf: &BatchForward, config: &LossConfig) -> Result<Vec<f64>> {
    let n = bf.order.len();
    if config.weighting_enabled && !config.vanilla_mode {
        batch_weights(&row_entropies(g, bf)?)
    } else {
        Ok(uniform_weights(n))
    }
}

fn to_caller_order(rows: &[f64], order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; rows.len()];
    for (r, &i) in order.iter().enumerate() {
        out[i] = rows[r];
    }
    out
}

/// Adversarial term over the configured taps. Returns the summed loss node,
/// per-tap values and the weights (caller order). `None` when no tap is active.
pub fn adversarial_objective(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    bf: &BatchForward,
    config: &LossConfig,
) -> Result<Option<(Var, Vec<AdvTerm>, Vec<f64>)>> {
    let taps = config.taps();
    if taps.is_empty() {
        return Ok(None);
    }
    let w = weights_for(g, bf, config)?;
    let mut terms = Vec::with_capacity(taps.len());
    let mut nodes = Vec::with_capacity(taps.len());
    for tap in taps {
        let input = match tap {
            Tap::Level(j) => bf.taps[j - 1],
            Tap::Descriptor => bf.descriptor,
        };
        let p = model.discriminate_batch(g, bound, input, tap)?;
        let l = adversarial_graph(g, p, &bf.modality, &w)?;
        terms.push(AdvTerm {
            tap,
            value: g.scalar(l),
        });
        nodes.push(l);
    }
    let mut total = nodes[0];
    for n in &nodes[1..] {
        total = g.add(total, *n)?;
    }
    Ok(Some((total, terms, to_caller_order(&w, &bf.order))))
}

/// The extractor's objective `Σ_i xent_i + triplet − adv`. `labels` are in
/// the caller's sample order.
pub fn total_objective(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    bf: &BatchForward,
    labels: &[usize],
    config: &LossConfig,
) -> Result<(Var, LossReport)> {
    config.validate()?;
    let n = bf.order.len();
    if labels.len() != n {
        return Err(Error::Usage(format!("{} labels for {n} samples", labels.len())));
    }
    let rows: Vec<usize> = bf.order.iter().map(|&i| labels[i]).collect();

    let mut xent = Vec::with_capacity(bf.logits.len());
    let mut total = None;
    for (i, l) in bf.logits.iter().enumerate() {
        let ce = g.cross_entropy(*l, &rows).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("xent_{}: {m}", i + 1)),
            e => e,
        })?;
        let ce = g.mean(ce);
        xent.push(g.scalar(ce));
        total = Some(match total {
            None => ce,
            Some(t) => g.add(t, ce)?,
        });
    }
    let tri = triplet_graph(g, bf.descriptor, &rows, config.triplet_margin)?;
    let triplet = g.scalar(tri);
    let mut total = g.add(total.expect("at least one part"), tri)?;

    let (adv, weights) = match adversarial_objective(g, model, bound, bf, config)? {
        Some((node, terms, w)) => {
            total = g.sub(total, node)?;
            (terms, w)
        }
        None => (Vec::new(), uniform_weights(n)),
    };
    let report = LossReport {
        xent_per_part: xent,
        triplet,
        adv,
        weights,
        total: g.scalar(total),
    };
    Ok((total, report))
}
