//! Loss computation, optimization, augmentation, checkpointing, the training
//! loop, and sliding-window inference.

mod adamw;
mod augment;
mod checkpoint;
mod dataset;
mod infer;
mod losses;

pub use adamw::AdamW;
pub use augment::{augment_clip, resize_bilinear, AugmentRecord};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{ClipSource, SyntheticDataset};
pub use infer::{evaluate_model, infer_video, window_starts};
pub use losses::{compute_loss_vars, LossReport, LossVars};

use crate::frame::ValueRange;
use crate::model::{Binder, Model, ModelConfig, Params};
use crate::rng::derive_rng;
use crate::autodiff::Tape;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss in component '{component}' at step {step}")]
    Diverged { component: &'static str, step: u64 },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("clip too short: {got} frames, need at least 1")]
    EmptyClip { got: usize },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint invalid: {0}")]
    BadCheckpoint(String),
}

/// Training hyperparameters. Desk-scale defaults: resize 84, crop 64,
/// 8-frame clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub clip_length: usize,
    pub resize_to: usize,
    pub crop_to: usize,
    pub loss_value_range: ValueRange,
    pub lambda_aux: f32,
    pub lambda_layered: f32,
    pub lambda_final: f32,
    pub lambda_perceptual: f32,
    pub max_iters: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_length: 8,
            resize_to: 84,
            crop_to: 64,
            loss_value_range: ValueRange::CENTERED,
            lambda_aux: 1.0,
            lambda_layered: 1.0,
            lambda_final: 1.0,
            lambda_perceptual: 0.1,
            max_iters: 2000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.crop_to > self.resize_to {
            return Err(TrainError::BadConfig(format!(
                "crop_to {} exceeds resize_to {}",
                self.crop_to, self.resize_to
            )));
        }
        let lambdas = [
            self.lambda_aux,
            self.lambda_layered,
            self.lambda_final,
            self.lambda_perceptual,
        ];
        if lambdas.iter().any(|l| *l < 0.0) {
            return Err(TrainError::BadConfig("loss weights must be >= 0".into()));
        }
        if lambdas.iter().all(|l| *l == 0.0) {
            return Err(TrainError::BadConfig("at least one loss weight must be > 0".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(TrainError::BadConfig("learning rate must be >= 0".into()));
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file over the defaults.
    pub fn from_kv_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrainError::BadConfig(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.set_field(key.trim(), value.trim()).map_err(|e| {
                TrainError::BadConfig(format!("line {}: {}", lineno + 1, e))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one field by its config-file name.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn pf(v: &str) -> Result<f32, String> {
            v.parse().map_err(|e| format!("bad float '{}': {}", v, e))
        }
        fn pu(v: &str) -> Result<usize, String> {
            v.parse().map_err(|e| format!("bad integer '{}': {}", v, e))
        }
        match key {
            "learning_rate" => self.learning_rate = pf(value)?,
            "weight_decay" => self.weight_decay = pf(value)?,
            "beta1" => self.beta1 = pf(value)?,
            "beta2" => self.beta2 = pf(value)?,
            "eps" => self.eps = pf(value)?,
            "clip_length" => self.clip_length = pu(value)?,
            "resize_to" => self.resize_to = pu(value)?,
            "crop_to" => self.crop_to = pu(value)?,
            "loss_value_range" => {
                let (lo, hi) = value
                    .split_once(',')
                    .ok_or_else(|| "expected 'lo, hi'".to_string())?;
                self.loss_value_range = ValueRange {
                    lo: pf(lo.trim())?,
                    hi: pf(hi.trim())?,
                };
            }
            "lambda_aux" => self.lambda_aux = pf(value)?,
            "lambda_layered" => self.lambda_layered = pf(value)?,
            "lambda_final" => self.lambda_final = pf(value)?,
            "lambda_perceptual" => self.lambda_perceptual = pf(value)?,
            "max_iters" => self.max_iters = pu(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|e| format!("bad integer '{}': {}", value, e))?
            }
            "checkpoint_every" => self.checkpoint_every = pu(value)?,
            other => return Err(format!("unknown config key '{}'", other)),
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "learning_rate = {}\nweight_decay = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\n\
             clip_length = {}\nresize_to = {}\ncrop_to = {}\nloss_value_range = {}, {}\n\
             lambda_aux = {}\nlambda_layered = {}\nlambda_final = {}\nlambda_perceptual = {}\n\
             max_iters = {}\nseed = {}\ncheckpoint_every = {}\n",
            self.learning_rate,
            self.weight_decay,
            self.beta1,
            self.beta2,
            self.eps,
            self.clip_length,
            self.resize_to,
            self.crop_to,
            self.loss_value_range.lo,
            self.loss_value_range.hi,
            self.lambda_aux,
            self.lambda_layered,
            self.lambda_final,
            self.lambda_perceptual,
            self.max_iters,
            self.seed,
            self.checkpoint_every,
        )
    }
}

/// Everything that evolves during training.
pub struct TrainState {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: Params,
    pub opt: AdamW,
    pub step: u64,
}

impl TrainState {
    pub fn new(model_config: ModelConfig, train_config: TrainConfig) -> Result<Self, TrainError> {
        train_config.validate()?;
        let model = Model::new(model_config.clone())?;
        let params = model.init_params(train_config.seed);
        let opt = AdamW::from_config(&train_config);
        Ok(Self {
            model_config,
            train_config,
            params,
            opt,
            step: 0,
        })
    }

    /// One optimization step on an aligned stereo clip (already augmented).
    pub fn train_step(
        &mut self,
        model: &Model,
        left: &crate::frame::FrameSequence,
        right: &crate::frame::FrameSequence,
    ) -> Result<LossReport, TrainError> {
        let tape = Tape::new();
        let binder = Binder::new(&tape, &self.params);
        let fp = model.forward(&tape, &binder, left)?;
        let gt = tape.constant(right.data().clone().into_dyn());
        let lv = compute_loss_vars(&tape, &fp, gt, left.value_range(), &self.train_config);
        let report = lv.report(&tape);
        if let Some(component) = report.non_finite_component() {
            return Err(TrainError::Diverged {
                component,
                step: self.step,
            });
        }
        let mut grads = tape.backward(lv.total);
        let gmap = binder.grad_map(&mut grads);
        self.opt.step(&mut self.params, &gmap);
        self.step += 1;
        Ok(report)
    }
}

/// Run `iters` steps, sampling clips from `data`, augmenting per the config,
/// and reporting each step to `on_step`. Returning `false` from `on_step`
/// stops early.
pub fn train_loop(
    state: &mut TrainState,
    model: &Model,
    data: &dyn ClipSource,
    iters: usize,
    mut on_step: impl FnMut(u64, &LossReport) -> bool,
) -> Result<(), TrainError> {
    if data.len() == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let cfg = state.train_config.clone();
    for _ in 0..iters {
        let step = state.step;
        let mut rng = derive_rng(cfg.seed, "sample_clip", step);
        let idx = rng.gen_range(0..data.len());
        let (left, right) = data.clip(idx);
        let (left, right, _rec) = augment_clip(&left, &right, &cfg, step)?;
        let report = state.train_step(model, &left, &right)?;
        if !on_step(step, &report) {
            break;
        }
    }
    Ok(())
}
