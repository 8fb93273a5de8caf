//! Checkpoints: the complete training state of the networks — parameter
//! values, Adam moments, step counts — plus the configs and the global step,
//! in one JSON file. A save/load round trip is bit-exact, so a resumed run
//! continues from precisely the saved optimizer state.

use std::path::Path;

use crate::env::EnvConfig;
use crate::nn::serialize::{paramset_from_document, paramset_to_document};
use crate::nn::ParamSet;

use super::{AgentConfig, AgentError, AgentNets};

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointDoc {
    env_config: EnvConfig,
    agent_config: AgentConfig,
    /// Global environment step the checkpoint was taken at.
    step: u64,
    actor_spec: crate::nn::MlpSpec,
    critic_spec: crate::nn::MlpSpec,
    encoder_spec: Option<crate::nn::ConvEncoderSpec>,
    actor: serde_json::Value,
    encoder: Option<serde_json::Value>,
    critic1: serde_json::Value,
    critic2: serde_json::Value,
    target1: serde_json::Value,
    target2: serde_json::Value,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub nets: AgentNets,
    pub env_config: EnvConfig,
    pub agent_config: AgentConfig,
    pub step: u64,
}

fn params_value(params: &ParamSet) -> serde_json::Value {
    serde_json::from_str(&paramset_to_document(params)).expect("parameter documents are JSON")
}

fn params_from_value(which: &str, value: &serde_json::Value) -> Result<ParamSet, AgentError> {
    let text = serde_json::to_string(value)
        .map_err(|e| AgentError::Checkpoint(format!("{which}: {e}")))?;
    paramset_from_document(&text).map_err(|e| AgentError::Checkpoint(format!("{which}: {e}")))
}

/// Writes the networks and configs to `path` as JSON.
pub fn save_checkpoint(
    path: &Path,
    nets: &AgentNets,
    env_config: &EnvConfig,
    agent_config: &AgentConfig,
    step: u64,
) -> Result<(), AgentError> {
    let doc = CheckpointDoc {
        env_config: env_config.clone(),
        agent_config: agent_config.clone(),
        step,
        actor_spec: nets.actor_spec.clone(),
        critic_spec: nets.critic_spec.clone(),
        encoder_spec: nets.encoder_spec.clone(),
        actor: params_value(&nets.actor),
        encoder: nets.encoder.as_ref().map(params_value),
        critic1: params_value(&nets.critic1),
        critic2: params_value(&nets.critic2),
        target1: params_value(&nets.target1),
        target2: params_value(&nets.target2),
    };
    let text = serde_json::to_string(&doc).expect("checkpoint serialization cannot fail");
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, AgentError> {
    let text = std::fs::read_to_string(path)?;
    let doc: CheckpointDoc = serde_json::from_str(&text)
        .map_err(|e| AgentError::Checkpoint(format!("malformed checkpoint: {e}")))?;
    let encoder = match (&doc.encoder_spec, &doc.encoder) {
        (Some(_), Some(v)) => Some(params_from_value("encoder", v)?),
        (None, None) => None,
        _ => {
            return Err(AgentError::Checkpoint(
                "encoder parameters and spec must be present together".into(),
            ))
        }
    };
    let nets = AgentNets {
        actor_spec: doc.actor_spec,
        critic_spec: doc.critic_spec,
        encoder_spec: doc.encoder_spec,
        actor: params_from_value("actor", &doc.actor)?,
        encoder,
        critic1: params_from_value("critic1", &doc.critic1)?,
        critic2: params_from_value("critic2", &doc.critic2)?,
        target1: params_from_value("target1", &doc.target1)?,
        target2: params_from_value("target2", &doc.target2)?,
    };
    Ok(Checkpoint {
        nets,
        env_config: doc.env_config,
        agent_config: doc.agent_config,
        step: doc.step,
    })
}
