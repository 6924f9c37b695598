//! Alternating min-max training.
//!
//! Discriminator epochs fit the domain classifiers on frozen features;
//! extractor epochs minimize `Σ xent + triplet − adv` with the classifiers
//! frozen. Epochs alternate 1:1 by default.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::data::{augment, AugmentConfig, Dataset, PkSampler, PkSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalResult};
use crate::losses::{self, adversarial_objective, tap_column, total_objective, Ablation, AdvTerm, LossConfig, LossReport};
use crate::model::{Group, Modality, Mode, Model, Tap};
use crate::rng::{self, Rng};
use crate::tensor::{Graph, SgdMomentum, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerEpoch,
    PerBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Discriminator,
    Extractor,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Discriminator => "discriminator",
            Phase::Extractor => "extractor",
        }
    }

    pub fn trains(self, g: Group) -> bool {
        match self {
            Phase::Discriminator => g == Group::Discriminator,
            Phase::Extractor => g.is_extractor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_per_side: usize,
    pub granularity: Granularity,
    /// Consecutive discriminator epochs per cycle (per-epoch granularity).
    pub discriminator_block: usize,
    /// Consecutive extractor epochs per cycle (per-epoch granularity).
    pub extractor_block: usize,
    pub lr_heads: f64,
    pub lr_backbone: f64,
    pub lr_discriminator: f64,
    /// Overrides all three learning rates when set.
    pub unified_lr: Option<f64>,
    pub momentum: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub triplet_margin: f64,
    pub pk: PkSpec,
    pub augment: AugmentConfig,
    /// Batches per epoch; defaults to one pass over the training split.
    pub batches_per_epoch: Option<usize>,
    /// Evaluate on the test split after every this many epochs (0: never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_side: 35,
            granularity: Granularity::PerEpoch,
            discriminator_block: 1,
            extractor_block: 1,
            lr_heads: 0.01,
            lr_backbone: 0.001,
            lr_discriminator: 0.01,
            unified_lr: None,
            momentum: 0.9,
            seed: 0,
            ablation: Ablation::ShallowWeighting,
            triplet_margin: 0.3,
            pk: PkSpec::default(),
            augment: AugmentConfig::default(),
            batches_per_epoch: None,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_side == 0 {
            return Err(Error::Config("epochs_per_side must be positive".into()));
        }
        if self.discriminator_block == 0 || self.extractor_block == 0 {
            return Err(Error::Config("alternation blocks must be positive".into()));
        }
        for (name, lr) in [
            ("lr_heads", self.lr_heads),
            ("lr_backbone", self.lr_backbone),
            ("lr_discriminator", self.lr_discriminator),
            ("unified_lr", self.unified_lr.unwrap_or(1.0)),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        self.augment.validate()?;
        self.loss().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            triplet_margin: self.triplet_margin,
            ..LossConfig::for_ablation(self.ablation)
        }
    }

    pub fn total_epochs(&self) -> usize {
        2 * self.epochs_per_side
    }

    pub fn lr(&self, g: Group) -> f64 {
        if let Some(lr) = self.unified_lr {
            return lr;
        }
        match g {
            Group::ColourStream | Group::InfraredStream | Group::SharedStage => self.lr_backbone,
            Group::Heads => self.lr_heads,
            Group::Discriminator => self.lr_discriminator,
        }
    }

    /// Phase of a whole epoch under per-epoch alternation.
    pub fn epoch_phase(&self, epoch: usize) -> Phase {
        let cycle = self.discriminator_block + self.extractor_block;
        if epoch % cycle < self.discriminator_block {
            Phase::Discriminator
        } else {
            Phase::Extractor
        }
    }
}

/// One training-log row: the mean of every active term over a phase's
/// steps within an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub phase: Phase,
    pub steps: usize,
    pub xent: Vec<f64>,
    pub triplet: Option<f64>,
    pub adv: Vec<AdvTerm>,
    pub total: f64,
    /// Largest `max w / min w` seen in any batch of the phase.
    pub weight_ratio: f64,
    pub eval: Option<EvalResult>,
}

#[derive(Default)]
struct Accum {
    steps: usize,
    xent: Vec<f64>,
    triplet: f64,
    adv: Vec<AdvTerm>,
    total: f64,
    weight_ratio: f64,
}

impl Accum {
    fn add(&mut self, r: &LossReport) {
        if self.steps == 0 {
            self.xent = vec![0.0; r.xent_per_part.len()];
            self.adv = r.adv.iter().map(|a| AdvTerm { tap: a.tap, value: 0.0 }).collect();
        }
        self.steps += 1;
        self.xent.iter_mut().zip(&r.xent_per_part).for_each(|(a, b)| *a += b);
        self.triplet += r.triplet;
        self.adv.iter_mut().zip(&r.adv).for_each(|(a, b)| a.value += b.value);
        self.total += r.total;
        let (lo, hi) = r
            .weights
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), w| (lo.min(*w), hi.max(*w)));
        self.weight_ratio = self.weight_ratio.max(hi / lo);
    }

    fn row(self, epoch: usize, phase: Phase) -> LogRow {
        let n = self.steps.max(1) as f64;
        LogRow {
            epoch,
            phase,
            steps: self.steps,
            xent: self.xent.iter().map(|x| x / n).collect(),
            triplet: (phase == Phase::Extractor).then_some(self.triplet / n),
            adv: self
                .adv
                .into_iter()
                .map(|a| AdvTerm {
                    tap: a.tap,
                    value: a.value / n,
                })
                .collect(),
            total: self.total / n,
            weight_ratio: self.weight_ratio,
            eval: None,
        }
    }
}

/// Optimizer and schedule state, everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub phase: Phase,
    pub extractor_opt: SgdMomentum,
    pub discriminator_opt: SgdMomentum,
    pub rng: Rng,
    pub log: Vec<LogRow>,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    epoch: usize,
    phase: Phase,
    momentum: f64,
    extractor_slots: usize,
    discriminator_slots: usize,
    rng: Rng,
    log: Vec<LogRow>,
    config: TrainConfig,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    loss: LossConfig,
    model: Model,
    data: &'a Dataset,
    sampler: PkSampler,
    fill: [f64; 3],
    state: TrainState,
    eval: EvalConfig,
    last_grad_groups: Vec<Group>,
    /// Batch index within the current epoch, for error messages.
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = TrainState {
            epoch: 0,
            phase: config.epoch_phase(0),
            extractor_opt: SgdMomentum::new(config.momentum)?,
            discriminator_opt: SgdMomentum::new(config.momentum)?,
            rng: rng::derive(config.seed, 0x7_4a1e),
            log: Vec::new(),
        };
        Self::with_state(model, data, config, state)
    }

    fn with_state(model: Model, data: &'a Dataset, config: TrainConfig, state: TrainState) -> Result<Self> {
        let mc = model.config();
        if (mc.input_height, mc.input_width) != (data.config.height, data.config.width) {
            return Err(Error::Config(format!(
                "model expects {}x{} images, dataset has {}x{}",
                mc.input_height, mc.input_width, data.config.height, data.config.width
            )));
        }
        if mc.num_identities != data.config.num_train_classes() {
            return Err(Error::Config(format!(
                "model classifies {} identities, training split has {}",
                mc.num_identities,
                data.config.num_train_classes()
            )));
        }
        let sampler = PkSampler::new(&data.train, config.pk)?;
        Ok(Self {
            loss: config.loss(),
            eval: EvalConfig {
                probe: crate::eval::ProbeConfig {
                    seed: config.seed,
                    ..Default::default()
                },
                ..Default::default()
            },
            fill: data.channel_means(),
            config,
            model,
            data,
            sampler,
            state,
            last_grad_groups: Vec::new(),
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn log(&self) -> &[LogRow] {
        &self.state.log
    }

    pub fn set_eval_config(&mut self, eval: EvalConfig) {
        self.eval = eval;
    }

    /// Parameter groups that held a nonzero gradient in the last step.
    pub fn last_grad_groups(&self) -> &[Group] {
        &self.last_grad_groups
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.config
            .batches_per_epoch
            .unwrap_or_else(|| self.sampler.batches_per_epoch())
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.total_epochs()
    }

    /// Draw the next PK batch from the trainer's stream.
    pub fn sample_batch(&mut self) -> Vec<usize> {
        self.sampler.next_batch(&mut self.state.rng)
    }

    /// Augmented images, labels and modalities of a batch.
    fn materialize(&mut self, batch: &[usize]) -> (Vec<Tensor>, Vec<usize>, Vec<Modality>) {
        let mut imgs = Vec::with_capacity(batch.len());
        for &i in batch {
            let (img, _) = augment(&self.data.train[i].image, &self.config.augment, self.fill, &mut self.state.rng);
            imgs.push(img);
        }
        let labels = batch.iter().map(|&i| self.data.train[i].identity).collect();
        let mods = batch.iter().map(|&i| self.data.train[i].modality).collect();
        (imgs, labels, mods)
    }

    fn apply_step(&mut self, g: &Graph, bound: &crate::model::Bound, phase: Phase) -> Result<()> {
        let store = self.model.params_mut();
        store.collect_grads(g, bound)?;
        self.last_grad_groups = store.nonzero_grad_groups();
        let cfg = &self.config;
        let opt = match phase {
            Phase::Discriminator => &mut self.state.discriminator_opt,
            Phase::Extractor => &mut self.state.extractor_opt,
        };
        opt.step(
            store
                .params_mut()
                .iter_mut()
                .filter(|p| phase.trains(p.group))
                .map(|p| {
                    let lr = cfg.lr(p.group);
                    (&mut p.tensor, lr)
                }),
        )?;
        store.zero_grads();
        Ok(())
    }

    /// One update of the domain classifiers on a batch; extractor frozen.
    pub fn discriminator_step(&mut self, batch: &[usize]) -> Result<LossReport> {
        let (imgs, _, mods) = self.materialize(batch);
        self.discriminator_step_on(&imgs, &mods)
    }

    pub fn discriminator_step_on(&mut self, imgs: &[Tensor], mods: &[Modality]) -> Result<LossReport> {
        self.discriminator_inner(imgs, mods).map_err(|e| self.context(e, Phase::Discriminator))
    }

    fn context(&self, e: Error, phase: Phase) -> Error {
        match e {
            Error::Numeric(m) => Error::Numeric(format!(
                "{m} ({} step, epoch {}, step {})",
                phase.name(),
                self.state.epoch,
                self.step
            )),
            e => e,
        }
    }

    fn discriminator_inner(&mut self, imgs: &[Tensor], mods: &[Modality]) -> Result<LossReport> {
        let refs: Vec<&Tensor> = imgs.iter().collect();
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, |gr| Phase::Discriminator.trains(gr));
        // Batch statistics for the forward, but the running averages belong
        // to the extractor and stay untouched here.
        let bf = self.model.forward_batch(&mut g, &bound, &refs, mods, Mode::Train)?;
        let Some((loss, adv, weights)) = adversarial_objective(&mut g, &self.model, &bound, &bf, &self.loss)? else {
            return Err(Error::Usage("discriminator step with no adversarial term".into()));
        };
        let report = LossReport {
            xent_per_part: Vec::new(),
            triplet: 0.0,
            total: g.scalar(loss),
            adv,
            weights,
        };
        if let Some(term) = report.non_finite_term() {
            return Err(Error::Numeric(format!("non-finite {term}")));
        }
        g.backward(loss)?;
        self.apply_step(&g, &bound, Phase::Discriminator)?;
        Ok(report)
    }

    /// One update of extractor and heads on a batch; classifiers frozen.
    pub fn extractor_step(&mut self, batch: &[usize]) -> Result<LossReport> {
        let (imgs, labels, mods) = self.materialize(batch);
        self.extractor_step_on(&imgs, &labels, &mods)
    }

    pub fn extractor_step_on(&mut self, imgs: &[Tensor], labels: &[usize], mods: &[Modality]) -> Result<LossReport> {
        self.extractor_inner(imgs, labels, mods).map_err(|e| self.context(e, Phase::Extractor))
    }

    fn extractor_inner(&mut self, imgs: &[Tensor], labels: &[usize], mods: &[Modality]) -> Result<LossReport> {
        let refs: Vec<&Tensor> = imgs.iter().collect();
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, |gr| Phase::Extractor.trains(gr));
        let bf = self.model.forward_batch(&mut g, &bound, &refs, mods, Mode::Train)?;
        let (loss, report) = total_objective(&mut g, &self.model, &bound, &bf, labels, &self.loss)?;
        if let Some(term) = report.non_finite_term() {
            return Err(Error::Numeric(format!("non-finite {term}")));
        }
        g.backward(loss)?;
        self.apply_step(&g, &bound, Phase::Extractor)?;
        self.model.apply_stats_updates(&bf.stats_updates);
        Ok(report)
    }

    fn active(&self, phase: Phase) -> bool {
        phase == Phase::Extractor || self.loss.adversarial()
    }

    /// Run one epoch and append its log rows.
    pub fn run_epoch(&mut self) -> Result<()> {
        let epoch = self.state.epoch;
        let n = self.batches_per_epoch();
        let mut rows = Vec::new();
        match self.config.granularity {
            Granularity::PerEpoch => {
                let phase = self.config.epoch_phase(epoch);
                self.state.phase = phase;
                if self.active(phase) {
                    let mut acc = Accum::default();
                    for b in 0..n {
                        self.step = b;
                        let batch = self.sample_batch();
                        let r = match phase {
                            Phase::Discriminator => self.discriminator_step(&batch)?,
                            Phase::Extractor => self.extractor_step(&batch)?,
                        };
                        acc.add(&r);
                    }
                    rows.push(acc.row(epoch, phase));
                }
            }
            Granularity::PerBatch => {
                let (mut d, mut e) = (Accum::default(), Accum::default());
                for b in 0..n {
                    self.step = b;
                    let batch = self.sample_batch();
                    let phase = if b % 2 == 0 { Phase::Discriminator } else { Phase::Extractor };
                    self.state.phase = phase;
                    if !self.active(phase) {
                        continue;
                    }
                    match phase {
                        Phase::Discriminator => d.add(&self.discriminator_step(&batch)?),
                        Phase::Extractor => e.add(&self.extractor_step(&batch)?),
                    }
                }
                if d.steps > 0 {
                    rows.push(d.row(epoch, Phase::Discriminator));
                }
                rows.push(e.row(epoch, Phase::Extractor));
            }
        }
        self.state.epoch += 1;
        if self.config.eval_every > 0 && self.state.epoch % self.config.eval_every == 0 {
            let res = evaluate(&self.model, self.data, &self.eval)?.result;
            if let Some(last) = rows.last_mut() {
                last.eval = Some(res);
            }
        }
        self.state.log.extend(rows);
        Ok(())
    }

    /// Run until `epoch` epochs have completed (capped at the schedule's end).
    pub fn run_until(&mut self, epoch: usize) -> Result<()> {
        while self.state.epoch < epoch.min(self.config.total_epochs()) {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.total_epochs())
    }

    pub fn state_archive(&self) -> Result<Archive> {
        let header = StateHeader {
            epoch: self.state.epoch,
            phase: self.state.phase,
            momentum: self.config.momentum,
            extractor_slots: self.state.extractor_opt.velocity().len(),
            discriminator_slots: self.state.discriminator_opt.velocity().len(),
            rng: self.state.rng.clone(),
            log: self.state.log.clone(),
            config: self.config.clone(),
        };
        let mut a = Archive::new("train-state", serde_json::to_string(&header)?);
        for (i, v) in self.state.extractor_opt.velocity().iter().enumerate() {
            a.push(format!("extractor.{i}"), vec![v.len()], v.clone());
        }
        for (i, v) in self.state.discriminator_opt.velocity().iter().enumerate() {
            a.push(format!("discriminator.{i}"), vec![v.len()], v.clone());
        }
        Ok(a)
    }

    /// Write `model.xmr` and `state.xmr` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.model.save(&dir.join("model.xmr"))?;
        self.state_archive()?.save(&dir.join("state.xmr"))
    }

    /// Continue a run saved with [`Trainer::save_checkpoint`].
    pub fn resume(dir: &Path, data: &'a Dataset) -> Result<Self> {
        let model = Model::load(&dir.join("model.xmr"))?;
        let a = Archive::load(&dir.join("state.xmr"))?;
        if a.kind != "train-state" {
            return Err(Error::Format(format!("expected a train-state archive, got {:?}", a.kind)));
        }
        let h: StateHeader = serde_json::from_str(&a.header)?;
        let velocities = |prefix: &str, n: usize| -> Result<Vec<Vec<f64>>> {
            (0..n)
                .map(|i| {
                    a.get(&format!("{prefix}.{i}"))
                        .map(|x| x.values.clone())
                        .ok_or_else(|| Error::Format(format!("missing {prefix}.{i} in train state")))
                })
                .collect()
        };
        let state = TrainState {
            epoch: h.epoch,
            phase: h.phase,
            extractor_opt: SgdMomentum::with_velocity(h.momentum, velocities("extractor", h.extractor_slots)?)?,
            discriminator_opt: SgdMomentum::with_velocity(h.momentum, velocities("discriminator", h.discriminator_slots)?)?,
            rng: h.rng,
            log: h.log,
        };
        h.config.validate()?;
        Self::with_state(model, data, h.config, state)
    }

    /// Columns of the training log for this run's configuration.
    pub fn log_columns(&self) -> Vec<String> {
        log_columns(&self.loss, self.model.config().n_parts)
    }

    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        write_log(&self.state.log, &self.loss, self.model.config().n_parts, out)
    }
}

pub fn log_columns(loss: &LossConfig, n_parts: usize) -> Vec<String> {
    let mut cols = vec!["epoch".to_string(), "phase".to_string(), "steps".to_string()];
    cols.extend((1..=n_parts).map(|i| format!("xent_{i}")));
    cols.push("triplet".into());
    cols.extend(loss.taps().into_iter().map(tap_column));
    cols.extend(["total", "weight_ratio", "eval_rank1", "eval_mAP"].map(String::from));
    cols
}

/// CSV training log. Terms that a phase does not compute are left empty.
pub fn write_log<W: Write>(rows: &[LogRow], loss: &LossConfig, n_parts: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(log_columns(loss, n_parts))?;
    let taps: Vec<Tap> = loss.taps();
    for r in rows {
        let mut rec = vec![r.epoch.to_string(), r.phase.name().to_string(), r.steps.to_string()];
        for i in 0..n_parts {
            rec.push(r.xent.get(i).map(f64::to_string).unwrap_or_default());
        }
        rec.push(r.triplet.map(|t| t.to_string()).unwrap_or_default());
        for t in &taps {
            rec.push(
                r.adv
                    .iter()
                    .find(|a| a.tap == *t)
                    .map(|a| a.value.to_string())
                    .unwrap_or_default(),
            );
        }
        rec.push(r.total.to_string());
        rec.push(if r.weight_ratio.is_finite() { r.weight_ratio.to_string() } else { String::new() });
        rec.push(r.eval.as_ref().map(|e| e.rank1.to_string()).unwrap_or_default());
        rec.push(r.eval.as_ref().map(|e| e.map.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Build, train and return a model for `data` under `config`.
pub fn train(model_config: crate::model::ModelConfig, data: &Dataset, config: TrainConfig) -> Result<(Model, Vec<LogRow>)> {
    let model = Model::new(model_config, config.seed)?;
    let mut t = Trainer::new(model, data, config)?;
    t.run()?;
    let log = t.state.log.clone();
    Ok((t.into_model(), log))
}

/// Modality accuracy of the level-`level` classifier on a batch (threshold 0.5).
pub fn discriminator_accuracy(model: &Model, imgs: &[Tensor], mods: &[Modality], tap: Tap) -> Result<f64> {
    let refs: Vec<&Tensor> = imgs.iter().collect();
    let mut g = Graph::new();
    let b = model.bind(&mut g, |_| false);
    let bf = model.forward_batch(&mut g, &b, &refs, mods, Mode::Train)?;
    let input = match tap {
        Tap::Level(j) => bf.taps[j - 1],
        Tap::Descriptor => bf.descriptor,
    };
    let p = model.discriminate_batch(&mut g, &b, input, tap)?;
    let correct = g
        .value(p)
        .iter()
        .zip(&bf.modality)
        .filter(|(p, m)| (**p >= 0.5) == (**m == Modality::Infrared))
        .count();
    Ok(correct as f64 / mods.len() as f64)
}

/// Re-exported so callers can compute weights outside a training step.
pub use losses::batch_weights;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DataConfig};
    use crate::model::ModelConfig;

    fn data(ids: usize, train: usize) -> Dataset {
        generate(&DataConfig {
            num_identities: ids,
            train_identities: train,
            per_id_per_modality: 4,
            height: 24,
            width: 12,
            ..Default::default()
        })
        .unwrap()
    }

    fn model(classes: usize, seed: u64) -> Model {
        Model::new(
            ModelConfig {
                stage_channels: [4, 6, 8, 10],
                blocks_per_stage: 1,
                input_height: 24,
                input_width: 12,
                n_parts: 3,
                part_dim: 5,
                num_identities: classes,
                discriminator_hidden: 7,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    fn config(ablation: Ablation) -> TrainConfig {
        TrainConfig {
            epochs_per_side: 2,
            ablation,
            pk: PkSpec { p: 3, k: 2 },
            batches_per_epoch: Some(2),
            ..Default::default()
        }
    }

    #[test]
    fn phases_touch_only_their_parameters() {
        let ds = data(8, 6);
        let mut t = Trainer::new(model(6, 0), &ds, config(Ablation::ShallowWeighting)).unwrap();
        let ext = |m: &Model| m.params().checksum(Group::is_extractor);
        let disc = |m: &Model| m.params().checksum(|g| g == Group::Discriminator);

        let (e0, d0) = (ext(t.model()), disc(t.model()));
        let b = t.sample_batch();
        t.discriminator_step(&b).unwrap();
        assert_eq!(t.last_grad_groups(), [Group::Discriminator]);
        assert_eq!(ext(t.model()), e0);
        assert_ne!(disc(t.model()), d0);

        let bn: Vec<_> = t.model().params().buffers().to_vec();
        t.discriminator_step(&b).unwrap();
        assert_eq!(t.model().params().buffers(), bn.as_slice());
        let d1 = disc(t.model());

        t.extractor_step(&b).unwrap();
        assert!(!t.last_grad_groups().contains(&Group::Discriminator));
        assert!(t.last_grad_groups().contains(&Group::SharedStage));
        assert_eq!(disc(t.model()), d1);
        assert_ne!(ext(t.model()), e0);
        assert_ne!(t.model().params().buffers(), bn.as_slice());
    }

    #[test]
    fn baseline_never_evaluates_a_discriminator() {
        let ds = data(8, 6);
        let mut t = Trainer::new(model(6, 0), &ds, config(Ablation::Baseline)).unwrap();
        let d0 = t.model().params().checksum(|g| g == Group::Discriminator);
        t.run().unwrap();
        assert_eq!(t.model().discriminator_evals(), 0);
        assert_eq!(t.model().params().checksum(|g| g == Group::Discriminator), d0);
        assert!(t.log().iter().all(|r| r.phase == Phase::Extractor && r.adv.is_empty()));
        assert_eq!(t.log().len(), 2);
    }

    #[test]
    fn discriminator_loss_falls_on_a_fixed_batch() {
        let ds = data(8, 6);
        let cfg = TrainConfig {
            lr_discriminator: 0.1,
            ..config(Ablation::Shallow)
        };
        let mut t = Trainer::new(model(6, 3), &ds, cfg).unwrap();
        let b = t.sample_batch();
        let imgs: Vec<Tensor> = b.iter().map(|&i| ds.train[i].image.clone()).collect();
        let mods: Vec<Modality> = b.iter().map(|&i| ds.train[i].modality).collect();
        let first = t.discriminator_step_on(&imgs, &mods).unwrap().total;
        let mut last = first;
        for _ in 0..60 {
            last = t.discriminator_step_on(&imgs, &mods).unwrap().total;
        }
        assert!(last < 0.8 * first, "{first} -> {last}");
        let acc: f64 = (1..=4)
            .map(|j| discriminator_accuracy(t.model(), &imgs, &mods, Tap::Level(j)).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!(acc > 0.7, "{acc}");
    }

    #[test]
    fn overfits_a_handful_of_identities() {
        let ds = data(6, 4);
        let cfg = TrainConfig {
            ablation: Ablation::Baseline,
            augment: AugmentConfig::disabled(),
            pk: PkSpec { p: 4, k: 4 },
            unified_lr: Some(0.02),
            ..config(Ablation::Baseline)
        };
        let mut t = Trainer::new(model(4, 1), &ds, cfg).unwrap();
        let mut xent = f64::INFINITY;
        for step in 0..200 {
            let b = t.sample_batch();
            let r = t.extractor_step(&b).unwrap();
            xent = r.xent_mean();
            if xent < 0.1 {
                eprintln!("xent {xent:.4} after {} steps", step + 1);
                break;
            }
        }
        assert!(xent < 0.1, "{xent}");
    }

    #[test]
    fn schedule_alternates() {
        let ds = data(8, 6);
        let mut t = Trainer::new(model(6, 0), &ds, config(Ablation::Shallow)).unwrap();
        t.run().unwrap();
        let phases: Vec<_> = t.log().iter().map(|r| (r.epoch, r.phase)).collect();
        use Phase::*;
        assert_eq!(phases, [(0, Discriminator), (1, Extractor), (2, Discriminator), (3, Extractor)]);
        assert!(t.log().iter().all(|r| r.steps == 2));
        assert!(t.log()[0].triplet.is_none() && t.log()[1].triplet.is_some());

        let blocks = TrainConfig {
            discriminator_block: 2,
            extractor_block: 1,
            ..config(Ablation::Shallow)
        };
        let p: Vec<_> = (0..6).map(|e| blocks.epoch_phase(e)).collect();
        assert_eq!(p, [Discriminator, Discriminator, Extractor, Discriminator, Discriminator, Extractor]);

        let per_batch = TrainConfig {
            granularity: Granularity::PerBatch,
            batches_per_epoch: Some(4),
            epochs_per_side: 1,
            ..config(Ablation::Shallow)
        };
        let mut t = Trainer::new(model(6, 0), &ds, per_batch).unwrap();
        t.run().unwrap();
        let rows: Vec<_> = t.log().iter().map(|r| (r.epoch, r.phase, r.steps)).collect();
        assert_eq!(
            rows,
            [(0, Discriminator, 2), (0, Extractor, 2), (1, Discriminator, 2), (1, Extractor, 2)]
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let ds = data(8, 6);
        let run = || {
            let mut t = Trainer::new(model(6, 7), &ds, config(Ablation::ShallowWeighting)).unwrap();
            t.run().unwrap();
            (t.model().params().checksum(|_| true), t.log().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ds = data(8, 6);
        let cfg = config(Ablation::ShallowWeighting);
        let mut full = Trainer::new(model(6, 2), &ds, cfg.clone()).unwrap();
        full.run().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut a = Trainer::new(model(6, 2), &ds, cfg).unwrap();
        a.run_until(3).unwrap();
        a.save_checkpoint(dir.path()).unwrap();
        drop(a);
        let mut b = Trainer::resume(dir.path(), &ds).unwrap();
        assert_eq!(b.state().epoch, 3);
        b.run().unwrap();
        assert_eq!(b.model().params().checksum(|_| true), full.model().params().checksum(|_| true));
        assert_eq!(b.model().params().buffers(), full.model().params().buffers());
        assert_eq!(b.log(), full.log());
    }

    #[test]
    fn weighting_is_not_uniform() {
        let ds = data(8, 6);
        let mut t = Trainer::new(model(6, 0), &ds, config(Ablation::ShallowWeighting)).unwrap();
        t.run_until(2).unwrap();
        let r = &t.log()[1];
        assert!(r.weight_ratio > 1.01, "{}", r.weight_ratio);

        let mut u = Trainer::new(model(6, 0), &ds, config(Ablation::Shallow)).unwrap();
        u.run_until(2).unwrap();
        assert!((u.log()[1].weight_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let ds = data(8, 6);
        let mut t = Trainer::new(model(6, 0), &ds, config(Ablation::Baseline)).unwrap();
        let p = t.model_mut().params_mut().get_mut("part1.classifier.w").unwrap();
        p.tensor.values_mut()[0] = f64::NAN;
        match t.run() {
            Err(Error::Numeric(msg)) => {
                assert!(msg.contains("xent_2") && msg.contains("epoch 1") && msg.contains("step 0"), "{msg}")
            }
            other => panic!("expected a numeric error, got {other:?}"),
        }
    }

    #[test]
    fn log_csv_has_one_column_per_term() {
        let ds = data(8, 6);
        let mut t = Trainer::new(model(6, 0), &ds, config(Ablation::ShallowWeighting)).unwrap();
        t.run_until(2).unwrap();
        let mut buf = Vec::new();
        t.write_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,phase,steps,xent_1,xent_2,xent_3,triplet,adv_1,adv_2,adv_3,adv_4,total,weight_ratio,eval_rank1,eval_mAP"
        );
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn mismatched_model_rejected() {
        let ds = data(8, 6);
        assert!(matches!(
            Trainer::new(model(5, 0), &ds, config(Ablation::Baseline)),
            Err(Error::Config(_))
        ));
    }
}
