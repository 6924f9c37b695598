//! Dual-stream part-stripe feature extractor and per-level domain classifiers.
//!
//! The colour and infrared streams own separate residual stages 1–3 and
//! meet at a shared stage 4. Each stage's output is globally pooled into an
//! intermediate tap `g_j`. The final map is cut into `n_parts` horizontal
//! stripes; each stripe is pooled, embedded by its own fully connected
//! block into a part feature `f_i` and classified by its own matrix `W_i`.

mod config;
mod params;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, NUM_LEVELS, STAGE_STRIDES};
pub use params::{Bound, Group, Param, ParamStore, RunningStats};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::losses;
use crate::rng::{self, Rng};
use crate::tensor::{Graph, Tensor, Var};

/// Imaging domain of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Colour = 0,
    Infrared = 1,
}

impl Modality {
    pub fn label(self) -> f64 {
        match self {
            Modality::Colour => 0.0,
            Modality::Infrared => 1.0,
        }
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Modality::Colour),
            1 => Ok(Modality::Infrared),
            other => Err(Error::Usage(format!("modality must be 0 or 1, got {other}"))),
        }
    }
}

/// Which batch-norm statistics a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Statistics of the current batch; running averages are reported back.
    Train,
    /// Frozen running statistics. Deterministic per sample.
    Eval,
}

/// Input of a domain classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tap {
    /// Pooled output of residual stage `1..=4`.
    Level(usize),
    /// Concatenated part features (the retrieval descriptor, pre-normalization).
    Descriptor,
}

impl Tap {
    fn slot(self) -> usize {
        match self {
            Tap::Level(j) => j - 1,
            Tap::Descriptor => NUM_LEVELS,
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    w: usize,
    gamma: usize,
    beta: usize,
    stats: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
struct ResUnit {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<ConvBn>,
}

#[derive(Clone, Debug)]
struct Stage {
    stem: Option<ConvBn>,
    units: Vec<ResUnit>,
}

#[derive(Clone, Debug)]
struct PartHead {
    embed_w: usize,
    embed_b: usize,
    classifier: usize,
}

#[derive(Clone, Debug)]
struct Discriminator {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    input_dim: usize,
}

/// One batch-norm layer's batch statistics from a training-mode forward.
#[derive(Clone, Debug)]
pub struct StatsUpdate {
    stats: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

/// Graph handles produced by a batched forward pass.
///
/// Rows are grouped by modality (all colour samples first); `order[r]` is
/// the caller's index of row `r`.
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub order: Vec<usize>,
    pub modality: Vec<Modality>,
    /// Intermediate taps `g_1..g_4`, each `[N × stage_channels[j]]`.
    pub taps: [Var; NUM_LEVELS],
    /// Part features `f_i`, each `[N × part_dim]`.
    pub parts: Vec<Var>,
    /// Per-part identity logits, each `[N × num_identities]`.
    pub logits: Vec<Var>,
    /// `[f_1, ..., f_n]` before normalization, `[N × n·part_dim]`.
    pub descriptor: Var,
    pub stats_updates: Vec<StatsUpdate>,
}

/// Per-sample outputs of a forward pass, as plain values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardRecord {
    pub taps: Vec<Vec<f64>>,
    pub parts: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub avg_distribution: Vec<f64>,
    pub entropy: f64,
    pub modality: Modality,
}

impl ForwardRecord {
    /// Concatenated, L2-normalized part features used for retrieval.
    pub fn descriptor(&self) -> Vec<f64> {
        extract_descriptor(&self.parts)
    }
}

/// Concatenate part features in order and scale to unit length.
pub fn extract_descriptor(parts: &[Vec<f64>]) -> Vec<f64> {
    let cat: Vec<f64> = parts.iter().flatten().copied().collect();
    let norm = cat.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    cat.into_iter().map(|x| x / norm).collect()
}

/// Class distribution from per-part logits: softmax of their mean.
pub fn average_distribution(logits: &[&[f64]]) -> Vec<f64> {
    let c = logits[0].len();
    let mut mean = vec![0.0; c];
    for l in logits {
        mean.iter_mut().zip(*l).for_each(|(m, v)| *m += v);
    }
    let n = logits.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    crate::tensor::softmax(&mean)
}

pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    colour: Vec<Stage>,
    infrared: Vec<Stage>,
    shared: Stage,
    heads: Vec<PartHead>,
    discriminators: Vec<Discriminator>,
    discriminator_evals: AtomicUsize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            store: self.store.clone(),
            colour: self.colour.clone(),
            infrared: self.infrared.clone(),
            shared: self.shared.clone(),
            heads: self.heads.clone(),
            discriminators: self.discriminators.clone(),
            discriminator_evals: AtomicUsize::new(self.discriminator_evals()),
        }
    }
}

fn he_normal(rng: &mut Rng, n: usize, fan_in: usize) -> Vec<f64> {
    rng::normals(rng, n, (2.0 / fan_in as f64).sqrt())
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn conv_bn(&mut self, name: &str, group: Group, cin: usize, cout: usize, k: usize, stride: usize) -> ConvBn {
        let fan_in = cin * k * k;
        let w = self.store.add(
            format!("{name}.w"),
            group,
            vec![cout, cin, k, k],
            he_normal(self.rng, cout * fan_in, fan_in),
        );
        let gamma = self.store.add(format!("{name}.gamma"), group, vec![cout], vec![1.0; cout]);
        let beta = self.store.add(format!("{name}.beta"), group, vec![cout], vec![0.0; cout]);
        let stats = self.store.add_buffer(format!("{name}.bn"), cout);
        ConvBn {
            w,
            gamma,
            beta,
            stats,
            stride,
            pad: k / 2,
        }
    }

    fn stage(&mut self, prefix: &str, group: Group, cin: usize, cout: usize, stride: usize, blocks: usize, stem_from: Option<usize>) -> Stage {
        let stem = stem_from.map(|c| self.conv_bn(&format!("{prefix}.stem"), group, c, cin, 3, 1));
        let mut units = Vec::with_capacity(blocks);
        for u in 0..blocks {
            let (ci, s) = if u == 0 { (cin, stride) } else { (cout, 1) };
            let name = format!("{prefix}.unit{u}");
            let a = self.conv_bn(&format!("{name}.a"), group, ci, cout, 3, s);
            let b = self.conv_bn(&format!("{name}.b"), group, cout, cout, 3, 1);
            let shortcut = (ci != cout || s != 1)
                .then(|| self.conv_bn(&format!("{name}.down"), group, ci, cout, 1, s));
            units.push(ResUnit { a, b, shortcut });
        }
        Stage { stem, units }
    }

    fn linear(&mut self, name: &str, group: Group, din: usize, dout: usize, std: f64, bias: bool) -> (usize, Option<usize>) {
        let w = self.store.add(
            format!("{name}.w"),
            group,
            vec![din, dout],
            rng::normals(self.rng, din * dout, std),
        );
        let b = bias.then(|| self.store.add(format!("{name}.b"), group, vec![dout], vec![0.0; dout]));
        (w, b)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut rng = rng::derive(seed, 0x6d6f_64656c);
        let ch = config.stage_channels;
        let blocks = config.blocks_per_stage;
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };

        let stream = |b: &mut Builder, name: &str, group: Group| -> Vec<Stage> {
            (0..3)
                .map(|j| {
                    let cin = if j == 0 { ch[0] } else { ch[j - 1] };
                    let stem = (j == 0).then_some(config.input_channels);
                    b.stage(&format!("{name}.stage{}", j + 1), group, cin, ch[j], STAGE_STRIDES[j], blocks, stem)
                })
                .collect()
        };
        let colour = stream(&mut b, "colour", Group::ColourStream);
        let infrared = stream(&mut b, "infrared", Group::InfraredStream);
        let shared = b.stage("shared.stage4", Group::SharedStage, ch[2], ch[3], STAGE_STRIDES[3], blocks, None);

        let heads = (0..config.n_parts)
            .map(|i| {
                let (embed_w, embed_b) = b.linear(
                    &format!("part{i}.embed"),
                    Group::Heads,
                    ch[3],
                    config.part_dim,
                    (1.0 / ch[3] as f64).sqrt(),
                    true,
                );
                let (classifier, _) = b.linear(
                    &format!("part{i}.classifier"),
                    Group::Heads,
                    config.part_dim,
                    config.num_identities,
                    (1.0 / config.part_dim as f64).sqrt(),
                    false,
                );
                PartHead {
                    embed_w,
                    embed_b: embed_b.expect("embedding has a bias"),
                    classifier,
                }
            })
            .collect();

        let disc_inputs: Vec<(String, usize)> = (0..NUM_LEVELS)
            .map(|j| (format!("disc.level{}", j + 1), ch[j]))
            .chain(std::iter::once(("disc.descriptor".to_string(), config.descriptor_dim())))
            .collect();
        let hidden = config.discriminator_hidden;
        let discriminators = disc_inputs
            .into_iter()
            .map(|(name, din)| {
                let (w1, b1) = b.linear(&format!("{name}.hidden"), Group::Discriminator, din, hidden, (2.0 / din as f64).sqrt(), true);
                // Output layer starts at zero: every classifier begins at D = 0.5.
                let w2 = b.store.add(format!("{name}.out.w"), Group::Discriminator, vec![hidden, 1], vec![0.0; hidden]);
                let b2 = b.store.add(format!("{name}.out.b"), Group::Discriminator, vec![1], vec![0.0]);
                Discriminator {
                    w1,
                    b1: b1.expect("hidden layer has a bias"),
                    w2,
                    b2,
                    input_dim: din,
                }
            })
            .collect();

        let mut model = Self {
            config,
            store,
            colour,
            infrared,
            shared,
            heads,
            discriminators,
            discriminator_evals: AtomicUsize::new(0),
        };
        if model.config.mirror_stream_init {
            model.mirror_streams();
        }
        Ok(model)
    }

    fn mirror_streams(&mut self) {
        let pairs: Vec<(usize, usize)> = self
            .store
            .params()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group == Group::ColourStream)
            .map(|(i, p)| {
                let twin = p.name.replacen("colour.", "infrared.", 1);
                (i, self.store.index_of(&twin).expect("streams are symmetric"))
            })
            .collect();
        for (src, dst) in pairs {
            let v = self.store.tensor(src).values().to_vec();
            self.store.tensor_mut(dst).values_mut().copy_from_slice(&v);
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of individual domain-classifier evaluations so far.
    pub fn discriminator_evals(&self) -> usize {
        self.discriminator_evals.load(Ordering::Relaxed)
    }

    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(Group) -> bool) -> Bound {
        self.store.bind(g, trainable)
    }

    fn conv_bn(&self, g: &mut Graph, b: &Bound, x: Var, l: &ConvBn, mode: Mode, up: &mut Vec<StatsUpdate>) -> Result<Var> {
        let y = g.conv2d(x, b.var(l.w), l.stride, l.pad)?;
        let (gamma, beta) = (b.var(l.gamma), b.var(l.beta));
        match mode {
            Mode::Train => {
                let (z, mean, var) = g.batch_norm_train(y, gamma, beta, self.config.bn_eps)?;
                let s = g.shape(y);
                up.push(StatsUpdate {
                    stats: l.stats,
                    mean,
                    var,
                    count: s[0] * s[2] * s[3],
                });
                Ok(z)
            }
            Mode::Eval => {
                let rs = self.store.buffer(l.stats);
                g.batch_norm_eval(y, gamma, beta, &rs.mean, &rs.var, self.config.bn_eps)
            }
        }
    }

    fn run_stage(&self, g: &mut Graph, b: &Bound, mut x: Var, stage: &Stage, mode: Mode, up: &mut Vec<StatsUpdate>) -> Result<Var> {
        if let Some(stem) = &stage.stem {
            let y = self.conv_bn(g, b, x, stem, mode, up)?;
            x = g.relu(y);
        }
        for unit in &stage.units {
            let h = self.conv_bn(g, b, x, &unit.a, mode, up)?;
            let h = g.relu(h);
            let h = self.conv_bn(g, b, h, &unit.b, mode, up)?;
            let skip = match &unit.shortcut {
                Some(s) => self.conv_bn(g, b, x, s, mode, up)?,
                None => x,
            };
            let sum = g.add(h, skip)?;
            x = g.relu(sum);
        }
        Ok(x)
    }

    fn check_image(&self, img: &Tensor) -> Result<()> {
        let c = &self.config;
        let want = [c.input_channels, c.input_height, c.input_width];
        if img.shape() != want {
            return Err(Error::Dimension(format!(
                "image of shape {:?}, model expects {want:?}",
                img.shape()
            )));
        }
        Ok(())
    }

    /// Batched forward pass on `g`.
    pub fn forward_batch(&self, g: &mut Graph, b: &Bound, images: &[&Tensor], modality: &[Modality], mode: Mode) -> Result<BatchForward> {
        if images.is_empty() || images.len() != modality.len() {
            return Err(Error::Usage(format!(
                "{} images with {} modality labels",
                images.len(),
                modality.len()
            )));
        }
        for img in images {
            self.check_image(img)?;
        }
        let mut up = Vec::new();
        let mut order = Vec::with_capacity(images.len());
        let mut per_stream: Vec<[Var; 3]> = Vec::new();
        let mut stage3 = Vec::new();
        for (m, stages) in [(Modality::Colour, &self.colour), (Modality::Infrared, &self.infrared)] {
            let idx: Vec<usize> = (0..images.len()).filter(|&i| modality[i] == m).collect();
            if idx.is_empty() {
                continue;
            }
            let c = &self.config;
            let mut vals = Vec::with_capacity(idx.len() * images[0].numel());
            for &i in &idx {
                vals.extend_from_slice(images[i].values());
            }
            let x = g.constant(vec![idx.len(), c.input_channels, c.input_height, c.input_width], vals)?;
            let mut h = x;
            let mut taps = [x; 3];
            for (j, stage) in stages.iter().enumerate() {
                h = self.run_stage(g, b, h, stage, mode, &mut up)?;
                taps[j] = g.global_avg_pool(h)?;
            }
            per_stream.push(taps);
            stage3.push(h);
            order.extend(idx);
        }
        let joined = if stage3.len() == 1 { stage3[0] } else { g.concat(&stage3, 0)? };
        let final_map = self.run_stage(g, b, joined, &self.shared, mode, &mut up)?;

        let mut taps = [final_map; NUM_LEVELS];
        for (j, tap) in taps.iter_mut().enumerate().take(3) {
            let level: Vec<Var> = per_stream.iter().map(|t| t[j]).collect();
            *tap = if level.len() == 1 { level[0] } else { g.concat(&level, 0)? };
        }
        taps[3] = g.global_avg_pool(final_map)?;

        let stripe = self.config.final_height() / self.config.n_parts;
        let mut parts = Vec::with_capacity(self.heads.len());
        let mut logits = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let s = g.slice(final_map, 2, i * stripe, (i + 1) * stripe)?;
            let pooled = g.global_avg_pool(s)?;
            let f = g.linear(pooled, b.var(head.embed_w), b.var(head.embed_b))?;
            logits.push(g.matmul(f, b.var(head.classifier))?);
            parts.push(f);
        }
        let descriptor = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
        let modality = order.iter().map(|&i| modality[i]).collect();
        Ok(BatchForward {
            order,
            modality,
            taps,
            parts,
            logits,
            descriptor,
            stats_updates: up,
        })
    }

    /// Fold training-mode batch statistics into the running averages.
    pub fn apply_stats_updates(&mut self, updates: &[StatsUpdate]) {
        let m = self.config.bn_momentum;
        for u in updates {
            let rs = self.store.buffer_mut(u.stats);
            let unbias = if u.count > 1 {
                u.count as f64 / (u.count - 1) as f64
            } else {
                1.0
            };
            for (r, v) in rs.mean.iter_mut().zip(&u.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in rs.var.iter_mut().zip(&u.var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
        }
    }

    /// Domain-classifier probabilities `D(x)` for each row of `x`, shape `[N]`.
    pub fn discriminate_batch(&self, g: &mut Graph, b: &Bound, x: Var, tap: Tap) -> Result<Var> {
        let d = self.discriminator(tap)?;
        let s = g.shape(x).to_vec();
        if s.len() != 2 || s[1] != d.input_dim {
            return Err(Error::Usage(format!(
                "{tap:?} classifier takes [N, {}], got {s:?}",
                d.input_dim
            )));
        }
        self.discriminator_evals.fetch_add(s[0], Ordering::Relaxed);
        let h = g.linear(x, b.var(d.w1), b.var(d.b1))?;
        let h = g.relu(h);
        let o = g.linear(h, b.var(d.w2), b.var(d.b2))?;
        let p = g.sigmoid(o);
        g.reshape(p, vec![s[0]])
    }

    fn discriminator(&self, tap: Tap) -> Result<&Discriminator> {
        match tap {
            Tap::Level(j) if (1..=NUM_LEVELS).contains(&j) => Ok(&self.discriminators[tap.slot()]),
            Tap::Descriptor => Ok(&self.discriminators[tap.slot()]),
            Tap::Level(j) => Err(Error::Usage(format!(
                "discriminator level {j} out of range 1..={NUM_LEVELS}"
            ))),
        }
    }

    /// Probability that a single feature vector comes from the infrared
    /// modality, clamped to `[1e-7, 1 - 1e-7]`.
    pub fn discriminate(&self, features: &[f64], level: usize) -> Result<f64> {
        let tap = Tap::Level(level);
        self.discriminator(tap)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let x = g.constant(vec![1, features.len()], features.to_vec())?;
        let p = self.discriminate_batch(&mut g, &b, x, tap)?;
        let eps = crate::tensor::LOG_EPS;
        Ok(g.value(p)[0].clamp(eps, 1.0 - eps))
    }

    /// Per-sample records of a batched forward, in the caller's order.
    pub fn records(&self, g: &Graph, bf: &BatchForward) -> Result<Vec<ForwardRecord>> {
        let n = bf.order.len();
        let row = |v: Var, r: usize| -> Vec<f64> {
            let d = g.shape(v)[1];
            g.value(v)[r * d..(r + 1) * d].to_vec()
        };
        let mut out: Vec<Option<ForwardRecord>> = vec![None; n];
        for r in 0..n {
            let logits: Vec<Vec<f64>> = bf.logits.iter().map(|l| row(*l, r)).collect();
            if logits.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite identity logits for sample {}", bf.order[r])));
            }
            let refs: Vec<&[f64]> = logits.iter().map(Vec::as_slice).collect();
            let avg = average_distribution(&refs);
            let entropy = losses::entropy(&avg).map_err(|e| Error::Numeric(e.to_string()))?;
            out[bf.order[r]] = Some(ForwardRecord {
                taps: bf.taps.iter().map(|t| row(*t, r)).collect(),
                parts: bf.parts.iter().map(|p| row(*p, r)).collect(),
                logits,
                avg_distribution: avg,
                entropy,
                modality: bf.modality[r],
            });
        }
        Ok(out.into_iter().map(|r| r.expect("order is a permutation")).collect())
    }

    /// Single-image forward pass.
    pub fn forward(&self, image: &Tensor, modality: Modality, train_mode: bool) -> Result<ForwardRecord> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let mode = if train_mode { Mode::Train } else { Mode::Eval };
        let bf = self.forward_batch(&mut g, &b, &[image], &[modality], mode)?;
        Ok(self.records(&g, &bf)?.remove(0))
    }

    /// Eval-mode records for many images, processed in chunks.
    pub fn infer(&self, images: &[&Tensor], modality: &[Modality], chunk: usize) -> Result<Vec<ForwardRecord>> {
        let mut out = Vec::with_capacity(images.len());
        for (imgs, mods) in images.chunks(chunk.max(1)).zip(modality.chunks(chunk.max(1))) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, |_| false);
            let bf = self.forward_batch(&mut g, &b, imgs, mods, Mode::Eval)?;
            out.extend(self.records(&g, &bf)?);
        }
        Ok(out)
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let header = serde_json::to_string(&self.config)?;
        let mut a = Archive::new("model", header);
        for p in self.store.params() {
            a.push(p.name.clone(), p.tensor.shape().to_vec(), p.tensor.values().to_vec());
        }
        for rs in self.store.buffers() {
            a.push(format!("{}.mean", rs.name), vec![rs.mean.len()], rs.mean.clone());
            a.push(format!("{}.var", rs.name), vec![rs.var.len()], rs.var.clone());
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != "model" {
            return Err(Error::Format(format!("expected a model archive, got {:?}", a.kind)));
        }
        let config: ModelConfig = serde_json::from_str(&a.header)?;
        let mut model = Self::new(config, 0)?;
        let expected = model.store.params().len() + 2 * model.store.buffers().len();
        if a.arrays.len() != expected {
            return Err(Error::Config(format!(
                "checkpoint holds {} arrays, model layout needs {expected}",
                a.arrays.len()
            )));
        }
        for arr in &a.arrays {
            if let Some(base) = arr.name.strip_suffix(".mean").or_else(|| arr.name.strip_suffix(".var")) {
                if let Some(i) = model.store.buffers().iter().position(|b| b.name == base) {
                    let rs = model.store.buffer_mut(i);
                    let dst = if arr.name.ends_with(".mean") { &mut rs.mean } else { &mut rs.var };
                    if dst.len() != arr.values.len() {
                        return Err(Error::Config(format!("buffer {} has the wrong length", arr.name)));
                    }
                    dst.copy_from_slice(&arr.values);
                    continue;
                }
            }
            model.store.load_values(&arr.name, &arr.shape, &arr.values)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}
