//! Checkpoints: one archive holding parameters, optimizer moments, the step
//! counter, and both configs. Loading validates the stored architecture
//! against a freshly constructed one.

use super::{AdamW, TrainError, TrainState};
use crate::datakit::tensorfile::TensorFile;
use crate::model::Model;
use std::path::Path;

const FORMAT: &str = "parallax-checkpoint-v1";

pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainState) -> Result<(), TrainError> {
    let meta = serde_json::json!({
        "format": FORMAT,
        "step": state.step,
        "adam_t": state.opt.t,
        "model_config": state.model_config,
        "train_config": state.train_config,
    });
    let mut tf = TensorFile::new(meta);
    for (name, tensor) in state.params.iter() {
        tf.insert(format!("param/{}", name), tensor.clone());
    }
    for (name, tensor) in &state.opt.m {
        tf.insert(format!("adam_m/{}", name), tensor.clone());
    }
    for (name, tensor) in &state.opt.v {
        tf.insert(format!("adam_v/{}", name), tensor.clone());
    }
    tf.save(path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState, TrainError> {
    let tf = TensorFile::load(path)?;
    if tf.meta["format"] != FORMAT {
        return Err(TrainError::BadCheckpoint(format!(
            "unknown format {:?}",
            tf.meta["format"]
        )));
    }
    let model_config = serde_json::from_value(tf.meta["model_config"].clone())
        .map_err(|e| TrainError::BadCheckpoint(format!("model config: {}", e)))?;
    let train_config: super::TrainConfig = serde_json::from_value(tf.meta["train_config"].clone())
        .map_err(|e| TrainError::BadCheckpoint(format!("train config: {}", e)))?;
    let step = tf.meta["step"]
        .as_u64()
        .ok_or_else(|| TrainError::BadCheckpoint("missing step".into()))?;
    let adam_t = tf.meta["adam_t"]
        .as_u64()
        .ok_or_else(|| TrainError::BadCheckpoint("missing adam_t".into()))?;

    // validate against a freshly built architecture
    let model = Model::new(model_config.clone() as crate::model::ModelConfig)?;
    let reference = model.init_params(0);
    let mut params = crate::model::Params::new();
    for (name, tensor) in reference.iter() {
        let stored = tf
            .get(&format!("param/{}", name))
            .ok_or_else(|| TrainError::BadCheckpoint(format!("missing parameter {}", name)))?;
        if stored.shape() != tensor.shape() {
            return Err(TrainError::BadCheckpoint(format!(
                "parameter {} has shape {:?}, architecture expects {:?}",
                name,
                stored.shape(),
                tensor.shape()
            )));
        }
        params.insert(name.clone(), stored.clone());
    }

    let mut opt = AdamW::from_config(&train_config);
    opt.t = adam_t;
    for (key, tensor) in &tf.tensors {
        if let Some(name) = key.strip_prefix("adam_m/") {
            opt.m.insert(name.to_string(), tensor.clone());
        } else if let Some(name) = key.strip_prefix("adam_v/") {
            opt.v.insert(name.to_string(), tensor.clone());
        }
    }

    Ok(TrainState {
        model_config,
        train_config,
        params,
        opt,
        step,
    })
}
