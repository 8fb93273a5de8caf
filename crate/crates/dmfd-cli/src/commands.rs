//! The five subcommands: demonstration generation, training, evaluation,
//! ablation sweeps, and curve plotting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dmfd_core::agent::{evaluate, load_checkpoint, ObsMode};
use dmfd_core::baselines::BaselineSpec;
use dmfd_core::expert::{DemoDataset, ScriptedExpert};

use crate::cli::{AblateArgs, EvalArgs, GenDemosArgs, TrainArgs};
use crate::config::{load_run_config, write_resolved, Overrides, RunConfig};
use crate::errors::CliError;
use crate::jobs::run_all;
use crate::runner::{run_seed, SeedSummary};

/// Refuses to reuse an output directory that already holds a run, unless
/// `--force` (start over) or `--resume` (continue) says otherwise.
fn claim_out_dir(out: &Path, force: bool, resume: bool) -> Result<(), CliError> {
    if out.join("config.toml").exists() && !force && !resume {
        return Err(CliError::Config(format!(
            "output directory {} already contains a run; \
             pass --force to overwrite or --resume to continue it",
            out.display()
        )));
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn required_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.run.output_dir.clone().ok_or_else(|| {
        CliError::config("no output directory: pass --out or set run.output_dir")
    })
}

/// Whether the resolved method consumes demonstrations at all.
fn needs_dataset(spec: Option<&BaselineSpec>) -> bool {
    match spec {
        None => true,
        Some(s) => s.uses_dataset || s.init_actor_from_bc,
    }
}

/// Loads the dataset when the method calls for one, rendering images when
/// any consumer will need them.
fn load_dataset(
    cfg: &RunConfig,
    spec: Option<&BaselineSpec>,
) -> Result<Option<DemoDataset>, CliError> {
    if !needs_dataset(spec) {
        return Ok(None);
    }
    let path = cfg.run.dataset.as_ref().ok_or_else(|| {
        CliError::config(
            "this method consumes demonstrations; pass --dataset or set run.dataset",
        )
    })?;
    let mut ds = DemoDataset::load(path, &cfg.env)?;
    if cfg.agent.needs_images() {
        ds.ensure_images()?;
    }
    Ok(Some(ds))
}

fn print_seed_summaries(results: &[Result<SeedSummary, CliError>], seeds: &[u64]) {
    for (seed, result) in seeds.iter().zip(results) {
        match result {
            Ok(s) if s.already_complete => {
                println!("seed {}: already complete ({} rows)", s.seed, s.rows)
            }
            Ok(s) => {
                let final_mean = s
                    .final_mean
                    .map_or("n/a".to_string(), |m| format!("{m:.3}"));
                println!(
                    "seed {}: {} rows, final mean p_hat {final_mean}, {:.1}s",
                    s.seed, s.rows, s.wall_seconds
                );
            }
            Err(e) => println!("seed {seed}: FAILED: {e}"),
        }
    }
}

fn first_error(results: Vec<Result<SeedSummary, CliError>>) -> Result<(), CliError> {
    for r in results {
        r?;
    }
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (cfg, spec) = load_run_config(&args.flags.to_overrides(), &[0])?;
    let out = required_out(&cfg)?;
    claim_out_dir(&out, args.force, args.resume)?;
    write_resolved(&cfg, &out)?;
    let dataset = load_dataset(&cfg, spec.as_ref())?;

    let seeds = cfg.run.seeds.clone();
    let jobs: Vec<_> = seeds
        .iter()
        .map(|&seed| {
            let cfg = &cfg;
            let spec = spec.as_ref();
            let dataset = dataset.as_ref();
            let dir = out.join(format!("seed{seed}"));
            let resume = args.resume;
            move || run_seed(cfg, spec, dataset, seed, &dir, resume)
        })
        .collect();
    let results = run_all(jobs);
    print_seed_summaries(&results, &seeds);
    first_error(results)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_gen_demos(args: GenDemosArgs) -> Result<(), CliError> {
    let ov = Overrides {
        config: args.config.clone(),
        task: args.task.clone(),
        ..Overrides::default()
    };
    let (cfg, _) = load_run_config(&ov, &[0])?;
    if args.out.exists() && !args.force {
        return Err(CliError::Config(format!(
            "{} already exists; pass --force to overwrite",
            args.out.display()
        )));
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let expert = ScriptedExpert::default();
    let mut ds = DemoDataset::generate(&cfg.env, &expert, args.episodes, args.seed, args.filter)?;
    if args.images {
        ds.save_with_images(&args.out)?;
    } else {
        ds.save(&args.out)?;
    }
    // Report from a reload so the summary reflects the file, not the
    // in-memory dataset.
    let reloaded = DemoDataset::load(&args.out, &cfg.env)?;
    let size = std::fs::metadata(&args.out)?.len();
    println!(
        "wrote {}: {} episodes, mean p_hat {:.4}, {} bytes",
        args.out.display(),
        reloaded.episodes.len(),
        reloaded.mean_p_hat(),
        size
    );
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let mut episodes = args.episodes;
    if let Some(config) = &args.config {
        let ov = Overrides {
            config: Some(config.clone()),
            ..Overrides::default()
        };
        let (cfg, _) = load_run_config(&ov, &[0])?;
        if cfg.env != ck.env_config {
            return Err(CliError::config(
                "checkpoint/config mismatch: environment configs differ",
            ));
        }
        if cfg.agent != ck.agent_config {
            return Err(CliError::config(
                "checkpoint/config mismatch: agent configs differ",
            ));
        }
        episodes = episodes.or(Some(cfg.run.final_eval_episodes));
    }
    let episodes = episodes.unwrap_or(100);
    if episodes == 0 {
        return Err(CliError::config("--episodes must be positive"));
    }

    let (records, summary) = evaluate(
        &ck.nets,
        &ck.agent_config,
        &ck.env_config,
        episodes,
        args.seed,
    )?;

    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args
            .checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval"),
    };
    std::fs::create_dir_all(&out)?;

    let mut csv = String::from("episode,p_start,p_end,p_hat\n");
    for (i, r) in records.iter().enumerate() {
        writeln!(csv, "{},{},{},{}", i, r.p_start, r.p_end, r.p_hat).unwrap();
    }
    std::fs::write(out.join("episodes.csv"), csv)?;

    #[derive(serde::Serialize)]
    struct Report<'a> {
        checkpoint: &'a Path,
        step: u64,
        episodes: usize,
        seed: u64,
        mean: f64,
        std: f64,
        median: f64,
        q25: f64,
        q75: f64,
    }
    let report = Report {
        checkpoint: &args.checkpoint,
        step: ck.step,
        episodes,
        seed: args.seed,
        mean: summary.mean,
        std: summary.std,
        median: summary.median,
        q25: summary.q25,
        q75: summary.q75,
    };
    let doc = toml::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("report serialization: {e}")))?;
    std::fs::write(out.join("summary.toml"), &doc)?;
    std::fs::write(
        out.join("checkpoint_config.toml"),
        crate::config::dump(&RunConfig {
            env: ck.env_config.clone(),
            agent: ck.agent_config.clone(),
            run: crate::config::RunSection {
                budget_steps: ck.step,
                eval_every: ck.step.max(1),
                eval_episodes: episodes,
                final_eval_episodes: episodes,
                bc_epochs: 0,
                offline_steps: 0,
                seeds: vec![args.seed],
                baseline: None,
                dataset: None,
                output_dir: None,
            },
        }),
    )?;
    println!(
        "n={} mean={:.4} std={:.4} median={:.4} q25={:.4} q75={:.4}",
        episodes, summary.mean, summary.std, summary.median, summary.q25, summary.q75
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// The named ablation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Entropy,
    Rsi,
    Crop,
    DatasetSize,
    CriticInput,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Entropy,
        Ablation::Rsi,
        Ablation::Crop,
        Ablation::DatasetSize,
        Ablation::CriticInput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Entropy => "entropy",
            Ablation::Rsi => "rsi",
            Ablation::Crop => "crop",
            Ablation::DatasetSize => "dataset_size",
            Ablation::CriticInput => "critic_input",
        }
    }

    /// Image-feature ablations need pixels; the rest run on states.
    fn obs_mode(self) -> ObsMode {
        match self {
            Ablation::Crop | Ablation::CriticInput => ObsMode::Image,
            _ => ObsMode::State,
        }
    }
}

impl FromStr for Ablation {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.as_str()).collect();
                CliError::Config(format!(
                    "unknown ablation '{s}', valid names: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Episode counts of the dataset-size grid; the smallest cell duplicates
/// its 100 episodes eighty times.
pub const DATASET_SIZE_GRID: [usize; 3] = [1000, 4000, 8000];
pub const DUPLICATED_EPISODES: usize = 100;
pub const DUPLICATION_FACTOR: usize = 80;

fn ablation_cells(ablation: Ablation, base: &RunConfig) -> Vec<(String, RunConfig)> {
    let cell = |name: &str, edit: &dyn Fn(&mut RunConfig)| {
        let mut cfg = base.clone();
        edit(&mut cfg);
        (name.to_string(), cfg)
    };
    match ablation {
        Ablation::Entropy => vec![
            cell("entropy_on", &|c| c.agent.entropy_reg_enabled = true),
            cell("entropy_off", &|c| c.agent.entropy_reg_enabled = false),
        ],
        Ablation::Rsi => vec![
            cell("rsi_off", &|c| c.agent.rsi_enabled = false),
            cell("rsi_always", &|c| {
                c.agent.rsi_enabled = true;
                c.agent.p_eta = 1.0;
            }),
            cell("rsi_probabilistic", &|c| c.agent.rsi_enabled = true),
        ],
        Ablation::Crop => vec![
            cell("crop_on", &|c| c.agent.crop_enabled = true),
            cell("crop_off", &|c| c.agent.crop_enabled = false),
        ],
        Ablation::DatasetSize => DATASET_SIZE_GRID
            .iter()
            .map(|&n| cell(&format!("ds{n}"), &|_| {}))
            .chain(std::iter::once(cell(
                &format!("ds{DUPLICATED_EPISODES}x{DUPLICATION_FACTOR}"),
                &|_| {},
            )))
            .collect(),
        Ablation::CriticInput => {
            use dmfd_core::agent::CriticInput;
            vec![
                cell("critic_state", &|c| {
                    c.agent.critic_input = CriticInput::State
                }),
                cell("critic_image", &|c| {
                    c.agent.critic_input = CriticInput::Image
                }),
                cell("critic_state_plus_image", &|c| {
                    c.agent.critic_input = CriticInput::StatePlusImage
                }),
            ]
        }
    }
}

/// Builds the per-cell dataset views of the dataset-size grid. The base
/// must hold at least the largest grid size; smaller cells are prefixes, and
/// the duplicated cell repeats the first 100 episodes eighty times.
fn dataset_size_views(base: &DemoDataset) -> Result<Vec<(String, DemoDataset)>, CliError> {
    let largest = *DATASET_SIZE_GRID.iter().max().unwrap();
    if base.episodes.len() < largest {
        return Err(CliError::Config(format!(
            "dataset_size ablation needs at least {largest} episodes, got {}; \
             generate one with gen-demos --episodes {largest}",
            base.episodes.len()
        )));
    }
    let prefix = |n: usize| DemoDataset {
        config: base.config.clone(),
        episodes: base.episodes[..n].to_vec(),
    };
    let mut views: Vec<(String, DemoDataset)> = DATASET_SIZE_GRID
        .iter()
        .map(|&n| (format!("ds{n}"), prefix(n)))
        .collect();
    let mut duplicated = prefix(DUPLICATED_EPISODES);
    duplicated.duplicate_episodes(DUPLICATION_FACTOR);
    views.push((
        format!("ds{DUPLICATED_EPISODES}x{DUPLICATION_FACTOR}"),
        duplicated,
    ));
    Ok(views)
}

pub fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let ablation: Ablation = args.name.parse()?;
    let mut ov = args.flags.to_overrides();
    if ov.baseline.is_some() {
        return Err(CliError::config(
            "ablations always run the full method; --baseline is not accepted",
        ));
    }
    if ov.obs.is_none() {
        ov.obs = Some(
            match ablation.obs_mode() {
                ObsMode::State => "state",
                ObsMode::Image => "image",
            }
            .to_string(),
        );
    }
    let (base, _) = load_run_config(&ov, &[0, 1, 2])?;
    let out = required_out(&base)?;
    claim_out_dir(&out, args.force, false)?;

    let dataset = load_dataset(&base, None)?.expect("full method loads a dataset");
    let cells = ablation_cells(ablation, &base);

    // Per-cell datasets: the dataset-size sweep slices the base; everything
    // else shares it.
    let views: Vec<(String, DemoDataset)> = if ablation == Ablation::DatasetSize {
        dataset_size_views(&dataset)?
    } else {
        Vec::new()
    };
    let dataset_for = |cell: &str| -> &DemoDataset {
        views
            .iter()
            .find(|(name, _)| name == cell)
            .map(|(_, ds)| ds)
            .unwrap_or(&dataset)
    };

    let mut jobs = Vec::new();
    let mut labels = Vec::new();
    for (cell, cfg) in &cells {
        let cell_dir = out.join(cell);
        write_resolved(cfg, &cell_dir)?;
        for &seed in &cfg.run.seeds {
            let ds = dataset_for(cell);
            let dir = cell_dir.join(format!("seed{seed}"));
            labels.push(format!("{cell}/seed{seed}"));
            jobs.push(move || run_seed(cfg, None, Some(ds), seed, &dir, false));
        }
    }
    let results = run_all(jobs);
    for (label, result) in labels.iter().zip(&results) {
        match result {
            Ok(s) => {
                let final_mean = s
                    .final_mean
                    .map_or("n/a".to_string(), |m| format!("{m:.3}"));
                println!(
                    "{label}: {} rows, final mean p_hat {final_mean}, {:.1}s",
                    s.rows, s.wall_seconds
                );
            }
            Err(e) => println!("{label}: FAILED: {e}"),
        }
    }
    first_error(results)?;
    println!("wrote {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dmfd_core::env::{EnvConfig, Task};

    fn base_config() -> RunConfig {
        let (cfg, _) = load_run_config(&Overrides::default(), &[0, 1, 2]).unwrap();
        cfg
    }

    #[test]
    fn ablation_names_parse_and_unknown_names_list_the_set() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
        let err = "dropout".parse::<Ablation>().unwrap_err();
        let msg = err.to_string();
        for a in Ablation::ALL {
            assert!(msg.contains(a.as_str()), "{msg}");
        }
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rsi_grid_has_off_always_and_probabilistic() {
        let base = base_config();
        let cells = ablation_cells(Ablation::Rsi, &base);
        let names: Vec<&str> = cells.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["rsi_off", "rsi_always", "rsi_probabilistic"]);
        assert!(!cells[0].1.agent.rsi_enabled);
        assert!(cells[1].1.agent.rsi_enabled);
        assert_eq!(cells[1].1.agent.p_eta, 1.0);
        assert!(cells[2].1.agent.rsi_enabled);
        assert_eq!(cells[2].1.agent.p_eta, base.agent.p_eta);
    }

    #[test]
    fn dataset_size_views_slice_and_duplicate() {
        let mut env = EnvConfig::for_task(Task::StraightenRope);
        env.horizon = 2;
        let one = DemoDataset::generate(&env, &ScriptedExpert::default(), 10, 3, -10.0).unwrap();
        // Inflate to 8000 episodes cheaply for the slicing logic test.
        let mut big = one.clone();
        big.duplicate_episodes(800);
        let views = dataset_size_views(&big).unwrap();
        let names: Vec<&str> = views.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["ds1000", "ds4000", "ds8000", "ds100x80"]);
        assert_eq!(views[0].1.episodes.len(), 1000);
        assert_eq!(views[2].1.episodes.len(), 8000);
        let dup = &views[3].1;
        assert_eq!(dup.episodes.len(), 8000);
        assert_eq!(dup.episodes[0], dup.episodes[100]);

        let small = one;
        let err = dataset_size_views(&small).unwrap_err();
        assert!(err.to_string().contains("8000"), "{err}");
    }

    #[test]
    fn image_ablations_force_image_mode_cells() {
        assert_eq!(Ablation::Crop.obs_mode(), ObsMode::Image);
        assert_eq!(Ablation::CriticInput.obs_mode(), ObsMode::Image);
        assert_eq!(Ablation::Entropy.obs_mode(), ObsMode::State);
        let base = base_config();
        let cells = ablation_cells(Ablation::CriticInput, &base);
        assert_eq!(cells.len(), 3);
        let cells = ablation_cells(Ablation::Entropy, &base);
        assert!(cells[0].1.agent.entropy_reg_enabled);
        assert!(!cells[1].1.agent.entropy_reg_enabled);
    }
}
