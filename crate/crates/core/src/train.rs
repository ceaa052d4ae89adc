//! Two-stage training.
//!
//! Stage 1 updates the backbone with the similarity-proportion loss on
//! random bag pairs. Stage 2 freezes the backbone and fits the classifier
//! head with the bag-level proportion loss. A joint mode that optimizes
//! both losses at once is available as an ablation.

use std::fmt::Write as _;
use std::ops::Range;

use crate::bags::{Bag, BagSampler};
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{
    aggregate_predictions_on, prop_loss_on, sim_prop_loss_on, GroundTruthMode, PairingMode, SimPropConfig,
};
use crate::model::{Backbone, ClassifierHead, FreezePolicy, Input, ModelParams};
use crate::scalar::Scalar;
use crate::simhist::Kernel;
use crate::seeds::{derive_seed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction, or plain gradient descent.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    cfg: OptimizerConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(cfg: OptimizerConfig, len: usize) -> Self {
        Optimizer {
            cfg,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len(), "optimizer sized for a different parameter block");
        assert_eq!(grads.len(), params.len());
        let lr = T::of(self.cfg.lr);
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let (b1, b2) = (T::of(self.cfg.beta1), T::of(self.cfg.beta2));
                let c1 = T::one() - b1.powi(self.t);
                let c2 = T::one() - b2.powi(self.t);
                let eps = T::of(self.cfg.eps);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Root seed; bag sampling streams are derived from it.
    pub seed: u64,
    pub bag_size: usize,
    pub bins: usize,
    pub sigma: f64,
    pub stage1_epochs: usize,
    pub stage1_steps_per_epoch: usize,
    pub stage2_epochs: usize,
    pub backbone_optimizer: OptimizerConfig,
    pub head_optimizer: OptimizerConfig,
    pub freeze: FreezePolicy,
    pub pairing: PairingMode,
    pub ground_truth: GroundTruthMode,
    pub kernel: Kernel,
    /// Checkpoint every this many epochs within a stage; 0 means stage ends only.
    pub checkpoint_every: usize,
    pub joint: bool,
    /// Worker threads for batch feature extraction; 1 is fully serial.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            bag_size: 64,
            bins: 20,
            sigma: 0.1,
            stage1_epochs: 10,
            stage1_steps_per_epoch: 40,
            stage2_epochs: 40,
            backbone_optimizer: OptimizerConfig::default(),
            head_optimizer: OptimizerConfig {
                lr: 3e-3,
                ..OptimizerConfig::default()
            },
            freeze: FreezePolicy::TrainAll,
            pairing: PairingMode::Aligned,
            ground_truth: GroundTruthMode::Smoothed,
            kernel: Kernel::default(),
            checkpoint_every: 0,
            joint: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.bag_size == 0 {
            return bad("bag_size must be >= 1");
        }
        if self.bins == 0 {
            return bad("bins must be >= 1");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be > 0");
        }
        if self.stage1_steps_per_epoch == 0 {
            return bad("stage1_steps_per_epoch must be >= 1");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        for o in [&self.backbone_optimizer, &self.head_optimizer] {
            if !(o.lr >= 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
                return bad("optimizer needs lr >= 0, betas in [0, 1), eps > 0");
            }
        }
        Ok(())
    }

    pub fn sim_prop<T: Scalar>(&self) -> Result<SimPropConfig<T>> {
        let mut c = SimPropConfig::new(self.bins, T::of(self.sigma))?;
        c.pairing = self.pairing;
        c.ground_truth = self.ground_truth;
        c.kernel = self.kernel;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub stage: u8,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<String>,
}

impl TrainLog {
    pub fn stage_losses(&self, stage: u8) -> Vec<f64> {
        self.steps.iter().filter(|s| s.stage == stage).map(|s| s.loss).collect()
    }

    pub fn epoch_losses(&self, stage: u8) -> Vec<f64> {
        self.epochs
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| e.mean_loss)
            .collect()
    }

    /// Mean loss over the first and last tenth of a stage's steps.
    pub fn first_last_decile(&self, stage: u8) -> Option<(f64, f64)> {
        let l = self.stage_losses(stage);
        if l.is_empty() {
            return None;
        }
        let n = (l.len() / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&l[..n]), mean(&l[l.len() - n..])))
    }

    /// `step,stage,loss` rows.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,stage,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{}", r.step, r.stage, r.loss);
        }
        s
    }

    /// `epoch,stage,mean_loss` rows.
    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,stage,mean_loss\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.stage, r.mean_loss);
        }
        s
    }
}

/// Plain backbone features for a batch, split over `threads` workers.
/// Output order matches input order regardless of the thread count.
pub fn extract_features<T: Scalar>(backbone: &Backbone<T>, inputs: &[Vec<T>], threads: usize) -> Result<Vec<Vec<T>>> {
    if threads <= 1 || inputs.len() < 2 * threads {
        return inputs.iter().map(|x| backbone.forward(x)).collect();
    }
    let chunk = inputs.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|x| backbone.forward(x)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for h in handles {
            out.extend(h.join().expect("feature worker panicked")?);
        }
        Ok(out)
    })
}

fn finite_loss(value: f64, stage: u8, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { stage, step })
    }
}

/// Stage 1 state carried across epochs.
pub struct BackboneTrainer<T> {
    sampler: BagSampler,
    optimizer: Optimizer<T>,
    trainable: Range<usize>,
    sim: SimPropConfig<T>,
    steps_per_epoch: usize,
    step: usize,
    tape: Tape<T>,
}

impl<T: Scalar> BackboneTrainer<T> {
    pub fn new(cfg: &TrainConfig, backbone: &Backbone<T>) -> Result<Self> {
        cfg.validate()?;
        let trainable = backbone.trainable(cfg.freeze);
        Ok(BackboneTrainer {
            sampler: BagSampler::new(derive_seed(cfg.seed, stream::STAGE1)),
            optimizer: Optimizer::new(cfg.backbone_optimizer, trainable.len()),
            trainable,
            sim: cfg.sim_prop()?,
            steps_per_epoch: cfg.stage1_steps_per_epoch,
            step: 0,
            tape: Tape::new(),
        })
    }

    /// One optimizer step on a freshly drawn bag pair; returns the loss.
    pub fn step(&mut self, bags: &[Bag<T>], backbone: &mut Backbone<T>) -> Result<f64> {
        let pair = self.sampler.sample_pair(bags)?;
        let (a, b) = (&bags[pair.a], &bags[pair.b]);
        let tape = &mut self.tape;
        tape.clear();
        let p = backbone.0.bind(tape);
        let fa = a
            .inputs
            .iter()
            .map(|x| backbone.forward_on(tape, &p, x))
            .collect::<Result<Vec<_>>>()?;
        let fb = b
            .inputs
            .iter()
            .map(|x| backbone.forward_on(tape, &p, x))
            .collect::<Result<Vec<_>>>()?;
        let loss = sim_prop_loss_on(tape, &fa, &fb, &a.proportion, &b.proportion, &self.sim, Some(&pair.permutation))?;
        let value = finite_loss(tape.value(loss).as_f64(), 1, self.step)?;
        let grads = tape.backward(loss)?;
        let g = grads.wrt_all(&p[self.trainable.clone()]);
        self.optimizer
            .step(&mut backbone.0.params_mut()[self.trainable.clone()], &g);
        self.step += 1;
        Ok(value)
    }

    /// Runs one epoch, appending per-step and epoch records to `log`.
    pub fn run_epoch(&mut self, bags: &[Bag<T>], backbone: &mut Backbone<T>, epoch: usize, log: &mut TrainLog) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..self.steps_per_epoch {
            let step = self.step;
            let loss = self.step(bags, backbone)?;
            log.steps.push(StepRecord { stage: 1, step, loss });
            total += loss;
        }
        let mean_loss = total / self.steps_per_epoch as f64;
        log.epochs.push(EpochRecord {
            stage: 1,
            epoch,
            mean_loss,
        });
        Ok(mean_loss)
    }
}

/// Stage 2 state: cached frozen-backbone features per bag.
pub struct HeadTrainer<T> {
    sampler: BagSampler,
    optimizer: Optimizer<T>,
    features: Vec<Vec<Vec<T>>>,
    step: usize,
    tape: Tape<T>,
}

impl<T: Scalar> HeadTrainer<T> {
    pub fn new(cfg: &TrainConfig, bags: &[Bag<T>], backbone: &Backbone<T>, head: &ClassifierHead<T>) -> Result<Self> {
        cfg.validate()?;
        if bags.is_empty() {
            return Err(Error::Empty("bags"));
        }
        let features = bags
            .iter()
            .map(|b| extract_features(backbone, &b.inputs, cfg.threads))
            .collect::<Result<Vec<_>>>()?;
        Ok(HeadTrainer {
            sampler: BagSampler::new(derive_seed(cfg.seed, stream::STAGE2)),
            optimizer: Optimizer::new(cfg.head_optimizer, head.0.num_params()),
            features,
            step: 0,
            tape: Tape::new(),
        })
    }

    pub fn step(&mut self, bag_index: usize, bags: &[Bag<T>], head: &mut ClassifierHead<T>) -> Result<f64> {
        let tape = &mut self.tape;
        tape.clear();
        let p = head.0.bind(tape);
        let conf = self.features[bag_index]
            .iter()
            .map(|f| head.forward_on(tape, &p, Input::Const(f)))
            .collect::<Result<Vec<_>>>()?;
        let predicted = aggregate_predictions_on(tape, &conf)?;
        let loss = prop_loss_on(tape, &bags[bag_index].proportion, &predicted)?;
        let value = finite_loss(tape.value(loss).as_f64(), 2, self.step)?;
        let g = tape.backward(loss)?.wrt_all(&p);
        self.optimizer.step(head.0.params_mut(), &g);
        self.step += 1;
        Ok(value)
    }

    /// One pass over all bags in shuffled order.
    pub fn run_epoch(&mut self, bags: &[Bag<T>], head: &mut ClassifierHead<T>, epoch: usize, log: &mut TrainLog) -> Result<f64> {
        let order = self.sampler.epoch_order(bags.len());
        let mut total = 0.0;
        for &i in &order {
            let step = self.step;
            let loss = self.step(i, bags, head)?;
            log.steps.push(StepRecord { stage: 2, step, loss });
            total += loss;
        }
        let mean_loss = total / order.len() as f64;
        log.epochs.push(EpochRecord {
            stage: 2,
            epoch,
            mean_loss,
        });
        Ok(mean_loss)
    }
}

/// Stage 1 on its own.
pub fn train_backbone<T: Scalar>(bags: &[Bag<T>], backbone: &mut Backbone<T>, cfg: &TrainConfig) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    let mut trainer = BackboneTrainer::new(cfg, backbone)?;
    for epoch in 0..cfg.stage1_epochs {
        trainer.run_epoch(bags, backbone, epoch, &mut log)?;
    }
    Ok(log)
}

/// Stage 2 on its own; `backbone` is only read.
pub fn train_head<T: Scalar>(
    bags: &[Bag<T>],
    backbone: &Backbone<T>,
    head: &mut ClassifierHead<T>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    let mut trainer = HeadTrainer::new(cfg, bags, backbone, head)?;
    for epoch in 0..cfg.stage2_epochs {
        trainer.run_epoch(bags, head, epoch, &mut log)?;
    }
    Ok(log)
}

/// Joint ablation: each step minimizes the similarity loss of a bag pair
/// plus the proportion loss of both bags, updating both networks.
pub fn train_joint<T: Scalar>(
    bags: &[Bag<T>],
    model: &mut ModelParams<T>,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<()> {
    cfg.validate()?;
    let sim = cfg.sim_prop::<T>()?;
    let mut sampler = BagSampler::new(derive_seed(cfg.seed, stream::STAGE1));
    let trainable = model.backbone.trainable(cfg.freeze);
    let mut bopt = Optimizer::new(cfg.backbone_optimizer, trainable.len());
    let mut hopt = Optimizer::new(cfg.head_optimizer, model.head.0.num_params());
    let mut tape = Tape::new();
    let mut step = 0;
    for epoch in 0..cfg.stage1_epochs {
        let mut total = 0.0;
        for _ in 0..cfg.stage1_steps_per_epoch {
            let pair = sampler.sample_pair(bags)?;
            tape.clear();
            let bp = model.backbone.0.bind(&mut tape);
            let hp = model.head.0.bind(&mut tape);
            let mut parts: Vec<Var> = Vec::new();
            let mut feats = Vec::new();
            for idx in [pair.a, pair.b] {
                let f = bags[idx]
                    .inputs
                    .iter()
                    .map(|x| model.backbone.forward_on(&mut tape, &bp, x))
                    .collect::<Result<Vec<_>>>()?;
                let conf = f
                    .iter()
                    .map(|fv| model.head.forward_on(&mut tape, &hp, Input::Var(fv)))
                    .collect::<Result<Vec<_>>>()?;
                let agg = aggregate_predictions_on(&mut tape, &conf)?;
                parts.push(prop_loss_on(&mut tape, &bags[idx].proportion, &agg)?);
                feats.push(f);
            }
            let (a, b) = (&bags[pair.a], &bags[pair.b]);
            parts.push(sim_prop_loss_on(
                &mut tape,
                &feats[0],
                &feats[1],
                &a.proportion,
                &b.proportion,
                &sim,
                Some(&pair.permutation),
            )?);
            let loss = tape.sum(&parts);
            let value = finite_loss(tape.value(loss).as_f64(), 1, step)?;
            let grads = tape.backward(loss)?;
            let gb = grads.wrt_all(&bp[trainable.clone()]);
            let gh = grads.wrt_all(&hp);
            bopt.step(&mut model.backbone.0.params_mut()[trainable.clone()], &gb);
            hopt.step(model.head.0.params_mut(), &gh);
            log.steps.push(StepRecord { stage: 1, step, loss: value });
            total += value;
            step += 1;
        }
        log.epochs.push(EpochRecord {
            stage: 1,
            epoch,
            mean_loss: total / cfg.stage1_steps_per_epoch as f64,
        });
    }
    Ok(())
}

/// When a checkpoint hook fires.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointPoint {
    /// After epoch `epoch` (0-based) of `stage`, per `checkpoint_every`.
    Epoch { stage: u8, epoch: usize },
    StageEnd { stage: u8 },
}

/// Runs the configured schedule. With `skip_stage1` the backbone keeps its
/// initial weights (the frozen-random baseline). `hook` is called at every
/// checkpoint point and returns the name of whatever it wrote.
pub fn run_training<T: Scalar>(
    model: &mut ModelParams<T>,
    bags: &[Bag<T>],
    cfg: &TrainConfig,
    skip_stage1: bool,
    hook: &mut dyn FnMut(CheckpointPoint, &ModelParams<T>) -> Result<Option<String>>,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut log = TrainLog::default();
    let record = |log: &mut TrainLog, name: Option<String>| {
        if let Some(n) = name {
            log.checkpoints.push(n);
        }
    };
    let due = |epoch: usize| cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;

    if cfg.joint {
        train_joint(bags, model, cfg, &mut log)?;
        let name = hook(CheckpointPoint::StageEnd { stage: 1 }, model)?;
        record(&mut log, name);
        return Ok(log);
    }

    if !skip_stage1 {
        let mut trainer = BackboneTrainer::new(cfg, &model.backbone)?;
        for epoch in 0..cfg.stage1_epochs {
            let mean = trainer.run_epoch(bags, &mut model.backbone, epoch, &mut log)?;
            log::info!("stage 1 epoch {epoch}: mean loss {mean:.5}");
            if due(epoch) {
                let name = hook(CheckpointPoint::Epoch { stage: 1, epoch }, model)?;
                record(&mut log, name);
            }
        }
    }
    let name = hook(CheckpointPoint::StageEnd { stage: 1 }, model)?;
    record(&mut log, name);

    let mut trainer = HeadTrainer::new(cfg, bags, &model.backbone, &model.head)?;
    for epoch in 0..cfg.stage2_epochs {
        let mean = trainer.run_epoch(bags, &mut model.head, epoch, &mut log)?;
        log::info!("stage 2 epoch {epoch}: mean loss {mean:.5}");
        if due(epoch) {
            let name = hook(CheckpointPoint::Epoch { stage: 2, epoch }, model)?;
            record(&mut log, name);
        }
    }
    let name = hook(CheckpointPoint::StageEnd { stage: 2 }, model)?;
    record(&mut log, name);
    Ok(log)
}
