//! Checkpoint cache keyed by a content hash of the training inputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use hedgelab::policy::{train, Checkpoint, EnvConfig, TrainConfig, TrainedModel, CHECKPOINT_SCHEMA_VERSION};

#[derive(Serialize)]
struct Key<'a> {
    schema_version: u32,
    env: &'a EnvConfig,
    train: &'a TrainConfig,
}

/// Hex SHA-256 of the canonical JSON of the environment and training config.
pub fn config_hash(env: &EnvConfig, train: &TrainConfig) -> String {
    let json = serde_json::to_string(&Key { schema_version: CHECKPOINT_SCHEMA_VERSION, env, train }).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn cache_path(dir: &Path, env: &EnvConfig, train: &TrainConfig) -> PathBuf {
    let kind = match env {
        EnvConfig::Qlbs(_) => "qlbs",
        EnvConfig::Rlop(_) => "rlop",
    };
    dir.join(format!("{kind}-{}.json", &config_hash(env, train)[..16]))
}

/// Loads a cached model for exactly these inputs, or trains and stores one.
/// Returns the model and whether it came from the cache.
pub fn train_cached(env: &EnvConfig, cfg: &TrainConfig, dir: &Path) -> Result<(TrainedModel, bool)> {
    let path = cache_path(dir, env, cfg);
    if path.exists() {
        match Checkpoint::load(&path) {
            Ok(ck) if ck.model.env == *env && ck.model.train == *cfg => {
                log::info!("checkpoint cache hit: {}", path.display());
                return Ok((ck.model, true));
            }
            Ok(_) => log::warn!("checkpoint {} does not match its key; retraining", path.display()),
            Err(e) => log::warn!("unreadable checkpoint {}: {e}; retraining", path.display()),
        }
    }
    let model = train(env, cfg).context("training failed")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = path.with_extension("json.tmp");
    Checkpoint::new(model.clone()).save(&tmp)?;
    std::fs::rename(&tmp, &path)?;
    Ok((model, false))
}
