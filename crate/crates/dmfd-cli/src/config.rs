//! The TOML run configuration: parsing with unknown-key rejection, default
//! resolution, command-line overrides, and the resolved dump written into
//! every output directory.
//!
//! A document has three optional tables — `[env]`, `[agent]`, `[run]` — in
//! which every key is optional. Resolution starts from the task and
//! observation-mode defaults, applies the document, then applies a baseline
//! projection when one is named, so a dumped resolved config parses back to
//! exactly itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dmfd_core::agent::{ActorObjective, AgentConfig, CriticInput, ObsMode};
use dmfd_core::baselines::{project_onto, BaselineName, BaselineSpec};
use dmfd_core::env::{EnvConfig, Task};

use crate::errors::CliError;

/// Fully resolved configuration of a run: every field explicit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub run: RunSection,
}

/// Run-shape parameters and paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub budget_steps: u64,
    pub eval_every: u64,
    /// Episodes per evaluation point during training.
    pub eval_episodes: usize,
    /// Episodes for the standalone `eval` command.
    pub final_eval_episodes: usize,
    /// Epochs for behavior-cloning baselines and pretraining.
    pub bc_epochs: usize,
    /// Gradient updates on the prepopulated buffer before interaction.
    pub offline_steps: u64,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Command-line overrides applied on top of the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub task: Option<String>,
    pub obs: Option<String>,
    pub baseline: Option<String>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    env: RawEnv,
    agent: RawAgent,
    run: RawRun,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawEnv {
    task: Option<String>,
    horizon: Option<u32>,
    dt: Option<f64>,
    substeps_per_action: Option<u32>,
    stiffness: Option<f64>,
    damping: Option<f64>,
    particle_mass: Option<f64>,
    rope_particles: Option<usize>,
    rope_spacing: Option<f64>,
    rope_target_length: Option<f64>,
    cloth_rows: Option<usize>,
    cloth_cols: Option<usize>,
    cloth_spacing: Option<f64>,
    max_picker_step: Option<f64>,
    grasp_radius: Option<f64>,
    n_variants: Option<u32>,
    p_opt: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawAgent {
    obs_mode: Option<ObsMode>,
    critic_input: Option<CriticInput>,
    actor_objective: Option<ActorObjective>,
    gamma: Option<f64>,
    w_e: Option<f64>,
    c_ent: Option<f64>,
    p_eta: Option<f64>,
    awr_temperature: Option<f64>,
    advantage_samples: Option<usize>,
    batch_size: Option<usize>,
    replay_capacity: Option<usize>,
    target_tau: Option<f64>,
    crop_pad: Option<usize>,
    actor_lr: Option<f64>,
    critic_lr: Option<f64>,
    hidden_width: Option<usize>,
    feature_len: Option<usize>,
    rsi_enabled: Option<bool>,
    entropy_reg_enabled: Option<bool>,
    crop_enabled: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawRun {
    budget_steps: Option<u64>,
    eval_every: Option<u64>,
    eval_episodes: Option<usize>,
    final_eval_episodes: Option<usize>,
    bc_epochs: Option<usize>,
    offline_steps: Option<u64>,
    seeds: Option<Vec<u64>>,
    baseline: Option<BaselineName>,
    dataset: Option<PathBuf>,
    output_dir: Option<PathBuf>,
}

macro_rules! apply {
    ($dst:expr, $src:expr, { $($f:ident),* $(,)? }) => {
        $( if let Some(v) = $src.$f { $dst.$f = v; } )*
    };
}

fn parse_task(name: &str) -> Result<Task, CliError> {
    Task::from_name(name).ok_or_else(|| {
        let names: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
        CliError::Config(format!(
            "unknown task '{name}', valid tasks: {}",
            names.join(", ")
        ))
    })
}

fn parse_obs(name: &str) -> Result<ObsMode, CliError> {
    match name {
        "state" => Ok(ObsMode::State),
        "image" => Ok(ObsMode::Image),
        other => Err(CliError::Config(format!(
            "unknown observation mode '{other}', valid modes: state, image"
        ))),
    }
}

fn parse_baseline(name: &str) -> Result<BaselineName, CliError> {
    name.parse::<BaselineName>()
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Parses a configuration document, returning the raw (all-optional) form.
/// Unknown keys are rejected with their path.
fn parse_raw(text: &str) -> Result<RawConfig, CliError> {
    let de = toml::de::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            CliError::Config(format!("config: {inner}"))
        } else {
            CliError::Config(format!("config key `{path}`: {inner}"))
        }
    })
}

/// Loads, merges, resolves, and validates a run configuration.
///
/// Precedence, lowest to highest: task/mode defaults, the document, command
/// line flags, then the baseline projection for the fields it defines.
/// `default_seeds` fills in when neither document nor flags name seeds.
pub fn load_run_config(
    ov: &Overrides,
    default_seeds: &[u64],
) -> Result<(RunConfig, Option<BaselineSpec>), CliError> {
    let text = match &ov.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?,
        None => String::new(),
    };
    let raw = parse_raw(&text)?;

    let task = match ov.task.as_deref().or(raw.env.task.as_deref()) {
        Some(name) => parse_task(name)?,
        None => Task::StraightenRope,
    };
    let baseline = match &ov.baseline {
        Some(name) => Some(parse_baseline(name)?),
        None => raw.run.baseline,
    };
    let obs = match ov.obs.as_deref() {
        Some(name) => Some(parse_obs(name)?),
        None => raw.agent.obs_mode,
    };
    let mode = baseline
        .and_then(BaselineName::forced_mode)
        .or(obs)
        .unwrap_or(ObsMode::State);

    let mut env = EnvConfig::for_task(task);
    apply!(env, raw.env, {
        horizon, dt, substeps_per_action, stiffness, damping, particle_mass,
        rope_particles, rope_spacing, rope_target_length, cloth_rows,
        cloth_cols, cloth_spacing, max_picker_step, grasp_radius, n_variants,
        p_opt,
    });

    let mut agent = AgentConfig::for_mode(mode);
    apply!(agent, raw.agent, {
        critic_input, actor_objective, gamma, w_e, c_ent, p_eta,
        awr_temperature, advantage_samples, batch_size, replay_capacity,
        target_tau, crop_pad, actor_lr, critic_lr, hidden_width, feature_len,
        rsi_enabled, entropy_reg_enabled, crop_enabled,
    });

    let spec = baseline.map(|name| project_onto(name, agent.clone()));
    if let Some(s) = &spec {
        agent = s.agent.clone();
    }

    let seeds = match (&ov.seed, &ov.seeds) {
        (Some(s), _) => vec![*s],
        (None, Some(list)) => list.clone(),
        (None, None) => raw.run.seeds.unwrap_or_else(|| default_seeds.to_vec()),
    };

    let run = RunSection {
        budget_steps: raw.run.budget_steps.unwrap_or(40_000),
        eval_every: raw.run.eval_every.unwrap_or(2_000),
        eval_episodes: raw.run.eval_episodes.unwrap_or(20),
        final_eval_episodes: raw.run.final_eval_episodes.unwrap_or(100),
        bc_epochs: raw.run.bc_epochs.unwrap_or(20),
        offline_steps: raw
            .run
            .offline_steps
            .unwrap_or_else(|| spec.as_ref().map_or(0, |s| s.offline_steps)),
        seeds,
        baseline,
        dataset: ov.dataset.clone().or(raw.run.dataset),
        output_dir: ov.out.clone().or(raw.run.output_dir),
    };

    let cfg = RunConfig { env, agent, run };
    validate(&cfg)?;
    Ok((cfg, spec))
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.env
        .validate()
        .map_err(|e| CliError::Config(format!("env: {e}")))?;
    cfg.agent
        .validate()
        .map_err(|e| CliError::Config(format!("agent: {e}")))?;
    let run = &cfg.run;
    if run.seeds.is_empty() {
        return Err(CliError::config("run: seeds must be non-empty"));
    }
    if run.eval_every == 0 {
        return Err(CliError::config("run: eval_every must be positive"));
    }
    if run.budget_steps % run.eval_every != 0 {
        return Err(CliError::Config(format!(
            "run: budget_steps ({}) must be a multiple of eval_every ({})",
            run.budget_steps, run.eval_every
        )));
    }
    if run.eval_episodes == 0 || run.final_eval_episodes == 0 {
        return Err(CliError::config("run: evaluation episode counts must be positive"));
    }
    Ok(())
}

/// Serializes a resolved configuration; `parse(dump(cfg))` returns `cfg`.
pub fn dump(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).expect("resolved configs serialize")
}

/// Writes the resolved config into `dir` as `config.toml`.
pub fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), dump(cfg))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn from_text(text: &str) -> Result<(RunConfig, Option<BaselineSpec>), CliError> {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(text.as_bytes()).unwrap();
        let ov = Overrides {
            config: Some(file.path().to_path_buf()),
            ..Overrides::default()
        };
        load_run_config(&ov, &[0])
    }

    #[test]
    fn empty_document_yields_full_defaults() {
        let (cfg, spec) = load_run_config(&Overrides::default(), &[0]).unwrap();
        assert!(spec.is_none());
        assert_eq!(cfg.env.task, Task::StraightenRope);
        assert_eq!(cfg.agent.gamma, 0.9);
        assert_eq!(cfg.agent.w_e, 0.1);
        assert_eq!(cfg.agent.c_ent, 0.5);
        assert_eq!(cfg.agent.obs_mode, ObsMode::State);
        assert_eq!(cfg.run.budget_steps, 40_000);
        assert_eq!(cfg.run.eval_every, 2_000);
        assert_eq!(cfg.run.eval_episodes, 20);
        assert_eq!(cfg.run.final_eval_episodes, 100);
        assert_eq!(cfg.run.seeds, vec![0]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = from_text("[agent]\ngama = 0.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("agent"), "{msg}");
        assert!(msg.contains("gama"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn out_of_range_p_eta_names_the_key() {
        let err = from_text("[agent]\np_eta = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("p_eta"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn dump_parse_round_trip_is_identity() {
        let (cfg, _) = from_text(
            "[env]\ntask = \"cloth_fold\"\nhorizon = 40\n\
             [agent]\nobs_mode = \"image\"\ngamma = 0.95\n\
             [run]\nbudget_steps = 8000\neval_every = 1000\nseeds = [3, 4]\n\
             baseline = \"sac_lfd\"\ndataset = \"demos.bin\"\n",
        )
        .unwrap();
        let (reparsed, _) = from_text(&dump(&cfg)).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn flags_override_the_document() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(b"[env]\ntask = \"cloth_fold\"\n[run]\nseeds = [9]\n")
            .unwrap();
        let ov = Overrides {
            config: Some(file.path().to_path_buf()),
            task: Some("straighten_rope".into()),
            seed: Some(5),
            obs: Some("image".into()),
            ..Overrides::default()
        };
        let (cfg, _) = load_run_config(&ov, &[0]).unwrap();
        assert_eq!(cfg.env.task, Task::StraightenRope);
        assert_eq!(cfg.run.seeds, vec![5]);
        assert_eq!(cfg.agent.obs_mode, ObsMode::Image);
        assert_eq!(cfg.agent.batch_size, 64);
    }

    #[test]
    fn baseline_projection_wins_over_document_fields() {
        let (cfg, spec) = from_text(
            "[agent]\nrsi_enabled = true\nactor_objective = \"advantage_weighted\"\n\
             [run]\nbaseline = \"sac\"\n",
        )
        .unwrap();
        let spec = spec.unwrap();
        assert_eq!(spec.name, BaselineName::Sac);
        assert_eq!(cfg.agent.actor_objective, ActorObjective::SacReparam);
        assert!(!cfg.agent.rsi_enabled);
        assert!(!spec.uses_dataset);
    }

    #[test]
    fn bc_baselines_force_their_mode_and_awac_gets_offline_steps() {
        let ov = Overrides {
            baseline: Some("bc_state".into()),
            obs: Some("image".into()),
            ..Overrides::default()
        };
        let (cfg, _) = load_run_config(&ov, &[0]).unwrap();
        assert_eq!(cfg.agent.obs_mode, ObsMode::State);

        let ov = Overrides {
            baseline: Some("awac_like".into()),
            ..Overrides::default()
        };
        let (cfg, _) = load_run_config(&ov, &[0]).unwrap();
        assert_eq!(cfg.run.offline_steps, 5000);
        assert!(!cfg.agent.entropy_reg_enabled);
    }

    #[test]
    fn budget_must_align_with_eval_cadence() {
        let err = from_text("[run]\nbudget_steps = 4100\neval_every = 2000\n").unwrap_err();
        assert!(err.to_string().contains("multiple of eval_every"), "{err}");
    }

    #[test]
    fn unknown_names_list_alternatives() {
        let err = from_text("[env]\ntask = \"rope\"\n").unwrap_err();
        assert!(err.to_string().contains("straighten_rope"), "{err}");
        let ov = Overrides {
            baseline: Some("ppo".into()),
            ..Overrides::default()
        };
        let err = load_run_config(&ov, &[0]).unwrap_err();
        assert!(err.to_string().contains("sac_lfd"), "{err}");
    }
}
