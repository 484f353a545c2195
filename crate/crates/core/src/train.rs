//! Stochastic gradient descent with momentum over sampled triplet batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{head_init, EmbedConfig, HeadParams, AUGMENTED_DIM};
use crate::error::{Error, Result};
use crate::loss::{loss_and_gradient, sample_training_batch, TrainingSequence, DEFAULT_ALPHA, DEFAULT_ANCHOR_COUNT};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub anchor_count: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub embed: EmbedConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            learning_rate: 1e-3,
            momentum: 0.9,
            iterations: 500,
            anchor_count: DEFAULT_ANCHOR_COUNT,
            seed: 0,
            hidden_dim: 64,
            embedding_dim: 128,
            embed: EmbedConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| Error::Config(format!("line {}: {key}: {e}", n + 1));
            macro_rules! parse {
                ($field:expr) => {
                    $field = value.parse().map_err(|e| bad(&e))?
                };
            }
            match key {
                "alpha" => parse!(config.alpha),
                "learning_rate" => parse!(config.learning_rate),
                "momentum" => parse!(config.momentum),
                "iterations" => parse!(config.iterations),
                "anchor_count" => parse!(config.anchor_count),
                "seed" => parse!(config.seed),
                "hidden_dim" => parse!(config.hidden_dim),
                "embedding_dim" => parse!(config.embedding_dim),
                "stride" => parse!(config.embed.stride),
                "lambda_space" => parse!(config.embed.lambda_space),
                "lambda_time" => parse!(config.embed.lambda_time),
                _ => return Err(Error::Config(format!("line {}: unknown key {key}", n + 1))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "alpha = {}\nlearning_rate = {}\nmomentum = {}\niterations = {}\nanchor_count = {}\nseed = {}\n\
             hidden_dim = {}\nembedding_dim = {}\nstride = {}\nlambda_space = {}\nlambda_time = {}\n",
            self.alpha,
            self.learning_rate,
            self.momentum,
            self.iterations,
            self.anchor_count,
            self.seed,
            self.hidden_dim,
            self.embedding_dim,
            self.embed.stride,
            self.embed.lambda_space,
            self.embed.lambda_time,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("need learning_rate >= 0 and momentum in [0, 1)".into()));
        }
        if self.hidden_dim == 0 || self.embedding_dim == 0 || self.anchor_count == 0 || self.embed.stride == 0 {
            return Err(Error::Config("dimensions, anchor_count and stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub iteration: usize,
    pub total: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HeadParams,
    pub curve: Vec<LossPoint>,
}

/// Batch sampler seeded independently of the head initialization.
pub fn batch_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
}

/// Trains a freshly initialized head.
pub fn train(sequences: &[TrainingSequence], config: &TrainConfig) -> Result<TrainOutcome> {
    let params = head_init(config.seed, AUGMENTED_DIM, config.hidden_dim, config.embedding_dim);
    train_from(params, sequences, config)
}

/// Continues training from the given parameters.
pub fn train_from(mut params: HeadParams, sequences: &[TrainingSequence], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::Config("no training sequences".into()));
    }
    let mut rng = batch_rng(config.seed);
    let mut velocity = vec![0.0; params.param_count()];
    let mut curve = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let sequence = &sequences[rng.random_range(0..sequences.len())];
        let batch = sample_training_batch(sequence, config.anchor_count, &mut rng)?;
        let (report, grad) = loss_and_gradient(&params, &batch, config.alpha)?;
        if !report.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration });
        }
        curve.push(LossPoint {
            iteration,
            total: report.total,
            skipped: report.skipped_count(),
        });
        for ((p, v), g) in params.as_flat_mut().iter_mut().zip(&mut velocity).zip(&grad) {
            *v = config.momentum * *v - config.learning_rate * g;
            *p += *v;
        }
        if params.as_flat().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { iteration });
        }
    }
    Ok(TrainOutcome { params, curve })
}
