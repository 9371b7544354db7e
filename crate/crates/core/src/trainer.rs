//! REINFORCE with a symmetric shared baseline and per-distribution reward
//! balancing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camp::{self, CampError, CampParams, DecodeMode};
use crate::instance::{generate, DistKind, GenConfig, Instance, InstanceError, Variant};
use crate::nd::{adam_step, AdamState, NdError, Tape, Tensor, Var};

/// Reward magnitudes below this are not used as a divisor.
pub const NORMALIZE_FLOOR: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Camp(#[from] CampError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("non-finite training signal at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
}

impl From<NdError> for TrainError {
    fn from(e: NdError) -> Self {
        TrainError::Camp(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaPolicy {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    /// Rollouts per batch, `batch_size / augmentations` instances each
    /// decoded under `augmentations` symmetric transforms.
    pub batch_size: usize,
    pub augmentations: usize,
    pub lr0: f64,
    /// Fractions of the run after which the learning rate is multiplied by
    /// `decay_factor` once more.
    pub decay_points: Vec<f64>,
    pub decay_factor: f64,
    pub beta: f64,
    pub variant: Variant,
    pub dists: Vec<DistKind>,
    pub n_min: usize,
    pub n_max: usize,
    pub m: usize,
    pub alpha: AlphaPolicy,
    pub reward_balance: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            samples_per_epoch: 6400,
            batch_size: 64,
            augmentations: 4,
            lr0: 3e-4,
            decay_points: vec![0.8, 0.95],
            decay_factor: 0.1,
            beta: 0.1,
            variant: Variant::Preferences,
            dists: vec![DistKind::Random, DistKind::Angle, DistKind::Cluster],
            n_min: 5,
            n_max: 10,
            m: 2,
            alpha: AlphaPolicy::Uniform { lo: 0.0, hi: 0.2 },
            reward_balance: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn batches_per_epoch(&self) -> usize {
        self.samples_per_epoch / self.batch_size
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |s: String| Err(TrainError::Config(s));
        if self.augmentations == 0 || self.augmentations > 8 {
            return err(format!("augmentations must be in 1..=8, got {}", self.augmentations));
        }
        if self.batch_size == 0 || self.batch_size % self.augmentations != 0 {
            return err(format!(
                "batch_size {} is not a multiple of augmentations {}",
                self.batch_size, self.augmentations
            ));
        }
        if self.batches_per_epoch() == 0 || self.epochs == 0 {
            return err("need at least one epoch of at least one batch".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return err(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || !(self.decay_factor > 0.0) {
            return err("learning rate and decay factor must be positive".into());
        }
        if self.n_min == 0 || self.n_min > self.n_max || self.m == 0 {
            return err("need 1 <= n_min <= n_max and m >= 1".into());
        }
        if self.dists.is_empty() {
            return err("no training distribution enabled".into());
        }
        if let Some(d) = self.dists.iter().find(|d| !d.supports(self.variant)) {
            return err(format!("distribution {} does not support {}", d.as_str(), self.variant.as_str()));
        }
        match self.alpha {
            AlphaPolicy::Fixed(a) if a < 0.0 || !a.is_finite() => err(format!("alpha {a} must be nonnegative")),
            AlphaPolicy::Uniform { lo, hi } if !(0.0 <= lo && lo <= hi && hi.is_finite()) => {
                err(format!("alpha range [{lo}, {hi}] is invalid"))
            }
            _ => Ok(()),
        }
    }
}

/// Exponentially smoothed mean reward of one distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Smoothed {
    pub r_hat: f64,
    pub initialized: bool,
    pub t: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothingState {
    pub beta: f64,
    pub per_dist: [Smoothed; 4],
}

impl SmoothingState {
    pub fn new(beta: f64) -> Self {
        SmoothingState {
            beta,
            per_dist: [Smoothed::default(); 4],
        }
    }

    /// Folds a batch mean into the smoothed mean of `kind`; the first batch
    /// mean is taken as is.
    pub fn update(&mut self, kind: DistKind, batch_mean: f64) -> f64 {
        let s = &mut self.per_dist[kind.index()];
        if s.initialized {
            s.r_hat = (1.0 - self.beta) * s.r_hat + self.beta * batch_mean;
        } else {
            s.r_hat = batch_mean;
            s.initialized = true;
        }
        s.t += 1;
        s.r_hat
    }
}

/// Updates the smoothed mean of `kind` with `batch_mean` and divides
/// `rewards` by its magnitude.
pub fn reward_normalize(state: &mut SmoothingState, kind: DistKind, batch_mean: f64, rewards: &[f64]) -> Vec<f64> {
    let r_hat = state.update(kind, batch_mean);
    if r_hat.abs() < NORMALIZE_FLOOR {
        rewards.to_vec()
    } else {
        rewards.iter().map(|r| r / r_hat.abs()).collect()
    }
}

/// Element `g` of the symmetry group of the unit square: `g >= 4` swaps the
/// axes, then `g % 4` quarter turns about the centre.
pub fn transform_point(p: [f64; 2], g: usize) -> [f64; 2] {
    let [mut x, mut y] = p;
    if g >= 4 {
        std::mem::swap(&mut x, &mut y);
    }
    for _ in 0..g % 4 {
        (x, y) = (1.0 - y, x);
    }
    [x, y]
}

/// Applies symmetry `g` (0 is the identity) to every coordinate.
pub fn symmetric_augment(instance: &Instance, g: usize) -> Instance {
    assert!(g < 8, "symmetry index {g} out of range");
    let mut out = instance.clone();
    if g > 0 {
        out.depot = transform_point(instance.depot, g);
        out.clients = instance.clients.iter().map(|&p| transform_point(p, g)).collect();
        out.id = format!("{}~{g}", instance.id);
    }
    out
}

/// Group mean and the advantages relative to it.
pub fn shared_baseline(rewards: &[f64]) -> (f64, Vec<f64>) {
    let b = rewards.iter().sum::<f64>() / rewards.len() as f64;
    (b, rewards.iter().map(|r| r - b).collect())
}

/// `-(1/len) * sum(advantage * logprob)`.
pub fn reinforce_loss(logprobs: &[f64], advantages: &[f64]) -> f64 {
    assert_eq!(logprobs.len(), advantages.len());
    let n = logprobs.len() as f64;
    -logprobs.iter().zip(advantages).map(|(l, a)| l * a).sum::<f64>() / n
}

/// [`reinforce_loss`] as a differentiable tape node over episode log-probs.
pub fn reinforce_loss_on_tape(tape: &mut Tape, logprobs: &[Var], advantages: &[f64]) -> Result<Var, NdError> {
    let lp = tape.concat_rows(logprobs)?;
    let adv = tape.constant(Tensor::from_vec(advantages.len(), 1, advantages.to_vec())?);
    let weighted = tape.mul(lp, adv)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / advantages.len() as f64))
}

/// Piecewise-constant schedule: `lr0`, times `decay_factor` after each decay
/// point (a fraction of `epochs`) has been passed.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let passed = config
        .decay_points
        .iter()
        .filter(|&&f| epoch as f64 >= (f * config.epochs as f64).round())
        .count();
    config.lr0 * config.decay_factor.powi(passed as i32)
}

/// Mixes integers into one seed (splitmix64 finalizer chain).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// One metrics row: a distribution's statistics within a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub batch: usize,
    pub dist_kind: DistKind,
    pub mean_reward: f64,
    pub normalized_mean: f64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Left empty unless timing was requested, so metrics stay reproducible.
    pub wallclock_ms: Option<u128>,
}

pub const METRICS_HEADER: &str = "epoch,batch,dist_kind,mean_reward,normalized_mean,loss,lr,grad_norm,wallclock_ms";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{}",
            self.epoch,
            self.batch,
            self.dist_kind.as_str(),
            self.mean_reward,
            self.normalized_mean,
            self.loss,
            self.lr,
            self.grad_norm,
            self.wallclock_ms.map_or(String::new(), |t| t.to_string())
        )
    }
}

/// Draws the instances of one batch.
pub fn sample_batch(config: &TrainConfig, epoch: usize, batch: usize) -> Result<Vec<Instance>, TrainError> {
    let groups = config.batch_size / config.augmentations;
    let global = epoch * config.batches_per_epoch() + batch;
    (0..groups)
        .map(|g| {
            let seed = derive_seed(&[config.seed, 1, epoch as u64, batch as u64, g as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kind = config.dists[(global * groups + g) % config.dists.len()];
            let n = rng.gen_range(config.n_min..=config.n_max);
            let alpha = match config.alpha {
                AlphaPolicy::Fixed(a) => a,
                AlphaPolicy::Uniform { lo, hi } => rng.gen_range(lo..=hi),
            };
            let mut gen = GenConfig::new(n, config.m, kind, rng.gen()).with_alpha(alpha);
            gen.variant = config.variant;
            let mut inst = generate(&gen)?;
            inst.id = format!("train-{epoch}-{batch}-{g}");
            Ok(inst)
        })
        .collect()
}

/// Optimizer state carried across batches.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: CampParams,
    pub adam: AdamState,
    pub smoothing: SmoothingState,
}

impl TrainState {
    pub fn new(params: CampParams, config: &TrainConfig) -> Self {
        let adam = AdamState::new(&params.store);
        TrainState {
            params,
            adam,
            smoothing: SmoothingState::new(config.beta),
        }
    }
}

/// Samples one batch, applies one Adam step and returns the batch metrics.
pub fn train_batch(state: &mut TrainState, config: &TrainConfig, epoch: usize, batch: usize) -> Result<Vec<MetricsRow>, TrainError> {
    let l = config.augmentations;
    let instances = sample_batch(config, epoch, batch)?;
    let mut tapes = Vec::with_capacity(config.batch_size);
    let mut rewards = Vec::with_capacity(config.batch_size);
    for (g, inst) in instances.iter().enumerate() {
        for a in 0..l {
            let aug = symmetric_augment(inst, a);
            let idx = (g * l + a) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 2, epoch as u64, batch as u64, idx]));
            let mut tape = Tape::new();
            let (r, lp) = camp::rollout_on_tape(&mut tape, &aug, &state.params, DecodeMode::Sample, &mut rng)?;
            rewards.push(r.reward);
            tapes.push((tape, lp));
        }
    }

    let mut normalized = rewards.clone();
    let mut kinds: Vec<DistKind> = instances.iter().map(|i| i.dist_kind).collect();
    kinds.sort_by_key(|k| k.index());
    kinds.dedup();
    let mut per_kind = Vec::new();
    for &kind in &kinds {
        let idx: Vec<usize> = (0..rewards.len()).filter(|&i| instances[i / l].dist_kind == kind).collect();
        let raw: Vec<f64> = idx.iter().map(|&i| rewards[i]).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        if config.reward_balance {
            let scaled = reward_normalize(&mut state.smoothing, kind, mean, &raw);
            for (&i, v) in idx.iter().zip(scaled) {
                normalized[i] = v;
            }
        }
        per_kind.push((kind, idx, mean));
    }

    let mut advantages = Vec::with_capacity(rewards.len());
    for group in normalized.chunks(l) {
        advantages.extend(shared_baseline(group).1);
    }
    let logprobs: Vec<f64> = tapes.iter().map(|(t, lp)| t.scalar(*lp)).collect();
    let loss = reinforce_loss(&logprobs, &advantages);
    if !loss.is_finite() {
        return Err(TrainError::NonFinite {
            epoch,
            batch,
            detail: format!("loss {loss}; rewards {rewards:?}; log-probs {logprobs:?}"),
        });
    }

    state.params.store.zero_grad();
    let count = advantages.len() as f64;
    for ((tape, lp), adv) in tapes.iter().zip(&advantages) {
        if *adv != 0.0 {
            let grads = tape.backward(*lp, -adv / count)?;
            state.params.store.accumulate(&grads);
        }
    }
    let grad_norm = state.params.store.grad_norm();
    if !grad_norm.is_finite() {
        return Err(TrainError::NonFinite {
            epoch,
            batch,
            detail: format!("gradient norm {grad_norm}; loss {loss}"),
        });
    }
    let lr = lr_at(epoch, config);
    adam_step(&mut state.params.store, &mut state.adam, lr);

    Ok(per_kind
        .into_iter()
        .map(|(kind, idx, mean)| MetricsRow {
            epoch,
            batch,
            dist_kind: kind,
            mean_reward: mean,
            normalized_mean: idx.iter().map(|&i| normalized[i]).sum::<f64>() / idx.len() as f64,
            loss,
            lr,
            grad_norm,
            wallclock_ms: None,
        })
        .collect())
}

/// Hooks invoked by [`train`].
pub trait TrainObserver {
    fn on_batch(&mut self, _rows: &[MetricsRow]) -> Result<(), TrainError> {
        Ok(())
    }
    fn on_epoch(&mut self, _epoch: usize, _state: &TrainState) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Runs every batch of one epoch.
pub fn train_epoch<O: TrainObserver + ?Sized>(
    state: &mut TrainState,
    config: &TrainConfig,
    epoch: usize,
    timed: bool,
    observer: &mut O,
) -> Result<Vec<MetricsRow>, TrainError> {
    let start = Instant::now();
    let mut rows = Vec::new();
    for batch in 0..config.batches_per_epoch() {
        let mut batch_rows = train_batch(state, config, epoch, batch)?;
        if timed {
            let ms = start.elapsed().as_millis();
            batch_rows.iter_mut().for_each(|r| r.wallclock_ms = Some(ms));
        }
        observer.on_batch(&batch_rows)?;
        rows.extend(batch_rows);
    }
    observer.on_epoch(epoch, state)?;
    Ok(rows)
}

/// Full training run; a pure function of the two configurations unless
/// `timed` adds wall-clock columns.
pub fn train<O: TrainObserver + ?Sized>(
    params: CampParams,
    config: &TrainConfig,
    timed: bool,
    observer: &mut O,
) -> Result<(TrainState, Vec<MetricsRow>), TrainError> {
    config.validate()?;
    let mut state = TrainState::new(params, config);
    let mut rows = Vec::new();
    for epoch in 0..config.epochs {
        rows.extend(train_epoch(&mut state, config, epoch, timed, observer)?);
    }
    Ok((state, rows))
}

/// Mean greedy reward over `instances`.
pub fn greedy_mean_reward(params: &CampParams, instances: &[Instance]) -> Result<f64, CampError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for inst in instances {
        total += camp::rollout(inst, params, DecodeMode::Greedy, &mut rng)?.reward;
    }
    Ok(total / instances.len() as f64)
}

#[cfg(test)]
mod tests;
