//! Losses, rewards and the full training schedule: denoising and
//! back-translation pretraining, then reward-driven fine-tuning with
//! periodic back-translation updates.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ironygen_nn::{checkpoint, clip_global_norm, Adam, AdamConfig, Gradients, Graph, Var};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierBundle;
use crate::seq2seq::{add_noise, DecodeConfig, DualModel, ModelConfig, NoiseSpec};
use crate::vocab::MAX_LEN;
use crate::{Direction, Error, Result, Style};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    /// Learning rate for the reward phase; `lr` when unset.
    pub rl_lr: Option<f64>,
    pub batch_size: usize,
    pub beta: f64,
    /// A back-translation update follows every `interval`-th reward batch.
    pub interval: usize,
    pub pretrain_epochs: usize,
    pub rl_epochs: usize,
    pub max_len: usize,
    pub seed: u64,
    pub noise_delete: f64,
    pub noise_duplicate: f64,
    pub noise_swap: f64,
    pub reward_epsilon: f64,
    pub clip_norm: Option<f64>,
    pub use_irony_reward: bool,
    pub use_senti_reward: bool,
    pub use_back_translation: bool,
    pub use_baseline: bool,
    /// Weight rewards by the sequence probability itself instead of its log.
    pub raw_prob_objective: bool,
    /// Inference-time repetition penalty.
    pub rep_penalty: f64,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub shared_layers: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            rl_lr: None,
            batch_size: 32,
            beta: 0.5,
            interval: 200,
            pretrain_epochs: 6,
            rl_epochs: 15,
            max_len: MAX_LEN,
            seed: 0,
            noise_delete: 0.1,
            noise_duplicate: 0.1,
            noise_swap: 0.1,
            reward_epsilon: 1e-4,
            clip_norm: None,
            use_irony_reward: true,
            use_senti_reward: true,
            use_back_translation: true,
            use_baseline: true,
            raw_prob_objective: false,
            rep_penalty: 2.0,
            dim: 128,
            heads: 4,
            ffn_dim: 512,
            layers: 4,
            shared_layers: 2,
        }
    }
}

impl TrainingConfig {
    /// Parses `key = value` lines; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.beta, self.reward_epsilon];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("lr, beta and reward_epsilon must be positive".into()));
        }
        if self.rl_lr.is_some_and(|v| !(v > 0.0)) || self.clip_norm.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::Config("rl_lr and clip_norm must be positive".into()));
        }
        if self.batch_size == 0 || self.interval == 0 {
            return Err(Error::Config("batch_size and interval must be positive".into()));
        }
        if self.max_len == 0 || self.max_len > MAX_LEN {
            return Err(Error::Config(format!("max_len must be in 1..={MAX_LEN}")));
        }
        if self.reward_epsilon >= 1.0 {
            return Err(Error::Config("reward_epsilon must be below 1".into()));
        }
        self.noise().validate()?;
        self.model_config(10).validate()
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            p_delete: self.noise_delete,
            p_duplicate: self.noise_duplicate,
            p_swap: self.noise_swap,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            dim: self.dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            layers: self.layers,
            shared_layers: self.shared_layers,
            max_len: self.max_len,
            seed: self.seed,
        }
    }

    pub fn rl_learning_rate(&self) -> f64 {
        self.rl_lr.unwrap_or(self.lr)
    }

    /// Greedy decoding used for back-translation pairs.
    pub fn bt_decode(&self) -> DecodeConfig {
        DecodeConfig {
            max_len: self.max_len,
            ..DecodeConfig::greedy()
        }
    }

    /// Greedy decoding with the repetition penalty, used for transfer.
    pub fn inference_decode(&self) -> DecodeConfig {
        DecodeConfig {
            repetition_penalty: self.rep_penalty,
            max_len: self.max_len,
            ..DecodeConfig::greedy()
        }
    }
}

/// Target-style probability gain: `p(out) - p(in)` towards irony, the
/// negation towards non-irony.
pub fn irony_reward(p_in: f64, p_out: f64, direction: Direction) -> f64 {
    match direction {
        Direction::NonIronyToIrony => p_out - p_in,
        Direction::IronyToNonIrony => p_in - p_out,
    }
}

pub fn sentiment_reward(std_in: f64, std_out: f64) -> f64 {
    1.0 - (std_in - std_out).abs()
}

/// Weighted harmonic mean of the two rewards; inputs are expected clamped to `[eps, 1]`.
pub fn overall_reward(senti: f64, irony: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    (1.0 + b2) * senti * irony / (b2 * senti + irony)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub irony: f64,
    pub senti: f64,
    pub irony_clamped: f64,
    pub senti_clamped: f64,
    pub overall: f64,
}

impl RewardBundle {
    pub fn new(irony: f64, senti: f64, cfg: &TrainingConfig) -> Self {
        let eps = cfg.reward_epsilon;
        let irony_clamped = irony.clamp(eps, 1.0);
        let senti_clamped = senti.clamp(eps, 1.0);
        let overall = match (cfg.use_irony_reward, cfg.use_senti_reward) {
            (true, true) | (false, false) => overall_reward(senti_clamped, irony_clamped, cfg.beta),
            (true, false) => irony_clamped,
            (false, true) => senti_clamped,
        };
        Self {
            irony,
            senti,
            irony_clamped,
            senti_clamped,
            overall,
        }
    }

    pub fn check_bounds(&self, eps: f64) -> Result<()> {
        let within = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
        if !(within(self.irony, -1.0, 1.0)
            && within(self.irony_clamped, eps, 1.0)
            && within(self.senti_clamped, eps, 1.0)
            && within(self.overall, eps, 1.0 + 1e-12))
        {
            return Err(Error::InvalidInput(format!("reward out of bounds: {self:?}")));
        }
        Ok(())
    }
}

fn as_refs(seqs: &[Vec<usize>]) -> Vec<&[usize]> {
    seqs.iter().map(Vec::as_slice).collect()
}

/// Mean negative log-likelihood of each clean sentence given its noised
/// copy, through the encoder and decoder of `style`.
pub fn dae_loss(
    model: &DualModel,
    g: &mut Graph,
    batch: &[Vec<usize>],
    style: Style,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let noised: Vec<Vec<usize>> = batch.iter().map(|s| add_noise(s, noise, rng)).collect();
    let lp = model.sequence_log_probs(g, &as_refs(&noised), style, &as_refs(batch), style)?;
    let mean = g.mean(lp);
    Ok(g.scale(mean, -1.0))
}

/// Greedy transfer of a batch, without gradients; used to build pseudo-parallel pairs.
pub fn translate(model: &DualModel, batch: &[Vec<usize>], source: Style, cfg: &DecodeConfig) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(model
        .transfer(&as_refs(batch), source, cfg, &mut rng)?
        .into_iter()
        .map(|d| d.ids)
        .collect())
}

/// Back-translation loss for sentences of `direction.source()`: they are
/// translated to the other style, and the originals are reconstructed from
/// the translations through the other encoder and the source decoder.
pub fn bt_loss_from_pairs(
    model: &DualModel,
    g: &mut Graph,
    originals: &[Vec<usize>],
    translations: &[Vec<usize>],
    direction: Direction,
) -> Result<Var> {
    let lp = model.sequence_log_probs(
        g,
        &as_refs(translations),
        direction.target(),
        &as_refs(originals),
        direction.source(),
    )?;
    let mean = g.mean(lp);
    Ok(g.scale(mean, -1.0))
}

pub fn bt_loss(
    model: &DualModel,
    g: &mut Graph,
    batch: &[Vec<usize>],
    direction: Direction,
    decode: &DecodeConfig,
) -> Result<Var> {
    let translations = translate(model, batch, direction.source(), decode)?;
    bt_loss_from_pairs(model, g, batch, &translations, direction)
}

/// `-(1/K) sum_k w_k * log p_k`, or `exp(log p_k)` in place of the log.
pub fn policy_loss(g: &mut Graph, log_probs: Var, weights: &[f64], raw_prob: bool) -> Result<Var> {
    let k = weights.len();
    let term = if raw_prob { g.exp(log_probs) } else { log_probs };
    let w = Array2::from_shape_vec((1, k), weights.iter().map(|w| -w / k as f64).collect())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let w = g.constant(w);
    Ok(g.matmul(w, term)?)
}

/// Reward weights after the batch-mean baseline.
pub fn centered(rewards: &[f64], use_baseline: bool) -> Vec<f64> {
    if !use_baseline || rewards.is_empty() {
        return rewards.to_vec();
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    rewards.iter().map(|r| r - mean).collect()
}

/// Gradient of the reward objective for fixed samples and rewards. Only the
/// source encoder and target decoder are on the path.
pub fn rl_gradients(
    model: &DualModel,
    sources: &[Vec<usize>],
    samples: &[Vec<usize>],
    rewards: &[f64],
    direction: Direction,
    cfg: &TrainingConfig,
) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(&model.store);
    let lp = model.sequence_log_probs(
        &mut g,
        &as_refs(sources),
        direction.source(),
        &as_refs(samples),
        direction.target(),
    )?;
    let weights = centered(rewards, cfg.use_baseline);
    let loss = policy_loss(&mut g, lp, &weights, cfg.raw_prob_objective)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        let lps = g.value(lp);
        let bad = lps.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::NonFiniteLoss {
            sample: format!("{:?}", samples.get(bad)),
        });
    }
    Ok((value, g.backward(loss)?))
}

/// Per-sample rewards for a batch of transfers.
pub fn batch_rewards(
    sources: &[Vec<usize>],
    outputs: &[Vec<usize>],
    direction: Direction,
    bundle: &ClassifierBundle,
    cfg: &TrainingConfig,
) -> Result<Vec<RewardBundle>> {
    let src_senti = bundle.sentiment_for(direction.source());
    let tgt_senti = bundle.sentiment_for(direction.target());
    sources
        .iter()
        .zip(outputs)
        .map(|(s, o)| {
            let p_in = bundle.irony.score(s)?;
            let p_out = bundle.irony.score(o)?;
            let std_in = src_senti.standardized_score(s)?;
            let std_out = tgt_senti.standardized_score(o)?;
            let r = RewardBundle::new(irony_reward(p_in, p_out, direction), sentiment_reward(std_in, std_out), cfg);
            r.check_bounds(cfg.reward_epsilon)?;
            Ok(r)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RlStep {
    pub loss: f64,
    pub rewards: Vec<RewardBundle>,
    pub samples: Vec<Vec<usize>>,
    pub gradients: Gradients,
}

/// Samples transfers (temperature 1, no repetition penalty), scores them and
/// returns the policy-gradient loss and gradients.
pub fn rl_step(
    model: &DualModel,
    sources: &[Vec<usize>],
    direction: Direction,
    bundle: &ClassifierBundle,
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RlStep> {
    let decode = DecodeConfig {
        max_len: cfg.max_len,
        ..DecodeConfig::sample(1.0)
    };
    let samples: Vec<Vec<usize>> = model
        .transfer(&as_refs(sources), direction.source(), &decode, rng)?
        .into_iter()
        .map(|d| d.ids)
        .collect();
    let rewards = batch_rewards(sources, &samples, direction, bundle, cfg)?;
    let overall: Vec<f64> = rewards.iter().map(|r| r.overall).collect();
    let (loss, gradients) = rl_gradients(model, sources, &samples, &overall, direction, cfg)?;
    Ok(RlStep {
        loss,
        rewards,
        samples,
        gradients,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Rl,
}

/// One line of the epoch log. Reward means are absent during pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub direction: Direction,
    pub loss: f64,
    pub dae_loss: Option<f64>,
    pub bt_loss: Option<f64>,
    pub rw_irony: Option<f64>,
    pub rw_senti: Option<f64>,
    pub rw: Option<f64>,
    pub batches: usize,
    pub bt_updates: usize,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialises") + "\n"
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Owns the model and optimiser across phases.
pub struct Trainer {
    pub model: DualModel,
    pub cfg: TrainingConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    pub log: Vec<EpochRecord>,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(cfg: TrainingConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        let model = DualModel::new(cfg.model_config(vocab_size))?;
        Ok(Self::with_model(model, cfg))
    }

    pub fn with_model(model: DualModel, cfg: TrainingConfig) -> Self {
        let adam = Adam::new(AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        });
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(11)),
            noise_rng: ChaCha8Rng::seed_from_u64(cfg.noise().seed.wrapping_add(7)),
            model,
            cfg,
            adam,
            log: Vec::new(),
            checkpoint_dir: None,
        }
    }

    /// Saves a checkpoint before each phase and after every epoch, and
    /// appends epoch records to `epochs.jsonl`.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.checkpoint_dir = Some(dir);
        Ok(self)
    }

    fn checkpoint(&self, name: &str) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            checkpoint::save(&self.model.store, &dir.join(format!("{name}.ckpt")))?;
        }
        Ok(())
    }

    fn record(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            let path = dir.join("epochs.jsonl");
            let mut f = File::options()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            f.write_all(rec.to_json_line().as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        self.log.push(rec);
        Ok(())
    }

    fn apply(&mut self, mut grads: Gradients) -> Result<()> {
        if let Some(max) = self.cfg.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        self.adam.step(&mut self.model.store, &grads)?;
        Ok(())
    }

    fn batches(&mut self, corpus: &[Vec<usize>]) -> Vec<Vec<Vec<usize>>> {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.cfg.batch_size)
            .map(|c| c.iter().map(|&i| corpus[i].clone()).collect())
            .collect()
    }

    fn loss_step(&mut self, build: impl FnOnce(&DualModel, &mut Graph, &mut ChaCha8Rng) -> Result<Var>) -> Result<f64> {
        let (value, grads) = {
            let mut g = Graph::new(&self.model.store);
            let loss = build(&self.model, &mut g, &mut self.noise_rng)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    sample: "training batch".into(),
                });
            }
            (value, g.backward(loss)?)
        };
        self.apply(grads)?;
        Ok(value)
    }

    fn dae_update(&mut self, batch: &[Vec<usize>], style: Style) -> Result<f64> {
        let noise = self.cfg.noise();
        self.loss_step(|m, g, rng| dae_loss(m, g, batch, style, &noise, rng))
    }

    fn bt_update(&mut self, batch: &[Vec<usize>], direction: Direction) -> Result<f64> {
        let translations = translate(&self.model, batch, direction.source(), &self.cfg.bt_decode())?;
        self.loss_step(|m, g, _| bt_loss_from_pairs(m, g, batch, &translations, direction))
    }

    /// Denoising then back-translation updates for both styles, batch by batch.
    pub fn pretrain(&mut self, non_irony: &[Vec<usize>], irony: &[Vec<usize>]) -> Result<()> {
        self.adam.set_lr(self.cfg.lr);
        self.checkpoint("pretrain_start")?;
        for epoch in 1..=self.cfg.pretrain_epochs {
            let n_batches = self.batches(non_irony);
            let i_batches = self.batches(irony);
            let mut dae = [Vec::new(), Vec::new()];
            let mut bt = [Vec::new(), Vec::new()];
            for b in 0..n_batches.len().max(i_batches.len()) {
                for (style, batches) in [(Style::NonIrony, &n_batches), (Style::Irony, &i_batches)] {
                    if let Some(batch) = batches.get(b) {
                        dae[style.index()].push(self.dae_update(batch, style)?);
                    }
                }
                if self.cfg.use_back_translation {
                    for (style, batches) in [(Style::NonIrony, &n_batches), (Style::Irony, &i_batches)] {
                        if let Some(batch) = batches.get(b) {
                            bt[style.index()].push(self.bt_update(batch, Direction::from_source(style))?);
                        }
                    }
                }
            }
            for style in Style::ALL {
                let d = mean(&dae[style.index()]);
                let t = mean(&bt[style.index()]);
                self.record(EpochRecord {
                    phase: Phase::Pretrain,
                    epoch,
                    direction: Direction::from_source(style),
                    loss: d.unwrap_or(0.0) + t.unwrap_or(0.0),
                    dae_loss: d,
                    bt_loss: t,
                    rw_irony: None,
                    rw_senti: None,
                    rw: None,
                    batches: dae[style.index()].len(),
                    bt_updates: bt[style.index()].len(),
                })?;
            }
            self.checkpoint(&format!("pretrain_epoch{epoch}"))?;
        }
        Ok(())
    }

    fn rl_direction(&mut self, corpus: &[Vec<usize>], direction: Direction, bundle: &ClassifierBundle, epoch: usize) -> Result<()> {
        let batches = self.batches(corpus);
        let (mut losses, mut bt_losses) = (Vec::new(), Vec::new());
        let (mut irony, mut senti, mut overall) = (Vec::new(), Vec::new(), Vec::new());
        for (b, batch) in batches.iter().enumerate() {
            let step = rl_step(&self.model, batch, direction, bundle, &self.cfg, &mut self.rng)?;
            losses.push(step.loss);
            for r in &step.rewards {
                irony.push(r.irony);
                senti.push(r.senti);
                overall.push(r.overall);
            }
            self.apply(step.gradients)?;
            if self.cfg.use_back_translation && (b + 1) % self.cfg.interval == 0 {
                bt_losses.push(self.bt_update(batch, direction)?);
            }
        }
        self.record(EpochRecord {
            phase: Phase::Rl,
            epoch,
            direction,
            loss: mean(&losses).unwrap_or(0.0),
            dae_loss: None,
            bt_loss: mean(&bt_losses),
            rw_irony: mean(&irony),
            rw_senti: mean(&senti),
            rw: mean(&overall),
            batches: losses.len(),
            bt_updates: bt_losses.len(),
        })
    }

    /// Reward phase: each epoch covers the non-ironic corpus towards irony,
    /// then the ironic corpus towards non-irony.
    pub fn train_rl(&mut self, non_irony: &[Vec<usize>], irony: &[Vec<usize>], bundle: &ClassifierBundle) -> Result<()> {
        if !bundle.is_trained() {
            return Err(Error::UntrainedClassifier);
        }
        let frozen = bundle.checksum();
        self.adam.set_lr(self.cfg.rl_learning_rate());
        self.checkpoint("rl_start")?;
        for epoch in 1..=self.cfg.rl_epochs {
            self.rl_direction(non_irony, Direction::NonIronyToIrony, bundle, epoch)?;
            self.rl_direction(irony, Direction::IronyToNonIrony, bundle, epoch)?;
            self.checkpoint(&format!("rl_epoch{epoch}"))?;
        }
        debug_assert_eq!(frozen, bundle.checksum());
        Ok(())
    }

    /// Both phases in order.
    pub fn run(&mut self, non_irony: &[Vec<usize>], irony: &[Vec<usize>], bundle: &ClassifierBundle) -> Result<()> {
        self.pretrain(non_irony, irony)?;
        self.train_rl(non_irony, irony, bundle)
    }

    pub fn into_model(self) -> DualModel {
        self.model
    }
}
