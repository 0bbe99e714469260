//! Run configuration.
//!
//! Runs are described in TOML and resolved against the invoking subcommand:
//! the file carries everything reusable across modes (tasks, model size,
//! optimization constants), while the mode itself, an optional seed override,
//! and the output directory come from the command line. Unknown keys are
//! rejected so typos fail loudly instead of silently training with defaults.

use std::path::{Path, PathBuf};

use crate::apnnet::{Arch, Checkpoint, MixerKind};
use crate::envsuite::task_from_name;
use crate::trainer::{Mode, TrainConfig, TransferMode, TransferSetup};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Environment-step budget per task.
    pub total_env_steps: usize,
    pub out_dir: Option<PathBuf>,
    /// Report grouping label; defaults to `{mode}-{arch}-{mixer}`.
    pub label: Option<String>,
}

fn default_d() -> usize {
    64
}

fn default_arch() -> String {
    "apn".to_string()
}

fn default_mixer() -> String {
    "vdn".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_arch")]
    pub arch: String,
    #[serde(default = "default_mixer")]
    pub mixer: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d: default_d(),
            arch: default_arch(),
            mixer: default_mixer(),
        }
    }
}

fn default_lr() -> f32 {
    crate::nnkit::DEFAULT_LR
}

fn default_gamma() -> f32 {
    0.99
}

fn default_batch() -> usize {
    32
}

fn default_target_sync() -> usize {
    200
}

fn default_epsilon_start() -> f32 {
    1.0
}

fn default_epsilon_end() -> f32 {
    0.05
}

fn default_anneal() -> usize {
    50_000
}

fn default_eval_interval() -> usize {
    2_000
}

fn default_eval_episodes() -> usize {
    32
}

fn default_replay_capacity() -> usize {
    5_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_gamma")]
    pub gamma: f32,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_target_sync")]
    pub target_sync: usize,
    #[serde(default = "default_epsilon_start")]
    pub epsilon_start: f32,
    #[serde(default = "default_epsilon_end")]
    pub epsilon_end: f32,
    #[serde(default = "default_anneal")]
    pub epsilon_anneal_steps: usize,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_replay_capacity")]
    pub replay_capacity: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: default_lr(),
            gamma: default_gamma(),
            batch: default_batch(),
            target_sync: default_target_sync(),
            epsilon_start: default_epsilon_start(),
            epsilon_end: default_epsilon_end(),
            epsilon_anneal_steps: default_anneal(),
            eval_interval: default_eval_interval(),
            eval_episodes: default_eval_episodes(),
            replay_capacity: default_replay_capacity(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksSection {
    pub names: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub checkpoint: PathBuf,
    /// `fix` keeps the loaded decision layer frozen; `finetune` trains it.
    pub mode: String,
}

/// The file as written, before mode-specific validation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    pub tasks: TasksSection,
    pub transfer: Option<TransferSection>,
}

pub fn parse_config(text: &str) -> Result<FileConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// The `DECLFORGE_OUT` environment value, read by the caller.
    pub env_out: Option<PathBuf>,
}

/// A validated run plus where its artifacts go.
#[derive(Debug)]
pub struct Resolved {
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

/// Output directory precedence: command line, then the file, then the
/// environment, then the working directory.
pub fn pick_out_dir(file: &FileConfig, overrides: &Overrides) -> PathBuf {
    overrides
        .out
        .clone()
        .or_else(|| file.run.out_dir.clone())
        .or_else(|| overrides.env_out.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Validate the file against a mode and produce a runnable description.
/// Transfer mode reads the referenced checkpoint here.
pub fn resolve(file: &FileConfig, mode: Mode, overrides: &Overrides) -> Result<Resolved, ConfigError> {
    let arch = Arch::parse(&file.model.arch).map_err(|e| invalid(e.to_string()))?;
    let mixer = MixerKind::parse(&file.model.mixer).map_err(|e| invalid(e.to_string()))?;
    let t = &file.train;

    if file.model.d == 0 {
        return Err(invalid("model width d must be positive"));
    }
    if file.run.total_env_steps == 0 {
        return Err(invalid("total_env_steps must be positive"));
    }
    if !(t.lr > 0.0) {
        return Err(invalid(format!("lr must be positive, got {}", t.lr)));
    }
    if !(t.gamma >= 0.0 && t.gamma < 1.0) {
        return Err(invalid(format!("gamma must lie in [0, 1), got {}", t.gamma)));
    }
    for (name, eps) in [("epsilon_start", t.epsilon_start), ("epsilon_end", t.epsilon_end)] {
        if !(0.05..=1.0).contains(&eps) {
            return Err(invalid(format!("{name} must lie in [0.05, 1], got {eps}")));
        }
    }
    if t.epsilon_end > t.epsilon_start {
        return Err(invalid(format!(
            "exploration must not grow: epsilon_end {} exceeds epsilon_start {}",
            t.epsilon_end, t.epsilon_start
        )));
    }
    for (name, v) in [
        ("batch", t.batch),
        ("target_sync", t.target_sync),
        ("eval_interval", t.eval_interval),
        ("eval_episodes", t.eval_episodes),
        ("replay_capacity", t.replay_capacity),
    ] {
        if v == 0 {
            return Err(invalid(format!("{name} must be positive")));
        }
    }

    let names = &file.tasks.names;
    if names.is_empty() {
        return Err(invalid("at least one task is required"));
    }
    match mode {
        Mode::Pretrain => {}
        Mode::Scratch | Mode::Transfer => {
            if names.len() != 1 {
                return Err(invalid(format!(
                    "{} runs take exactly one task, got {}",
                    mode.as_str(),
                    names.len()
                )));
            }
        }
    }
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(invalid(format!("duplicate task '{name}'")));
        }
    }
    let tasks = names
        .iter()
        .map(|n| task_from_name(n).map_err(|e| invalid(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    if mode == Mode::Pretrain && mixer == MixerKind::Qmix {
        return Err(invalid(
            "pretraining supports only the additive mixer; qmix is per-run",
        ));
    }
    if arch == Arch::Original && mode != Mode::Scratch {
        return Err(invalid(
            "the original architecture has no shared decision layer; it only trains from scratch",
        ));
    }

    let transfer = match (mode, &file.transfer) {
        (Mode::Transfer, Some(section)) => {
            let tmode = match section.mode.as_str() {
                "fix" => TransferMode::Fix,
                "finetune" => TransferMode::Finetune,
                other => {
                    return Err(invalid(format!(
                        "transfer mode must be 'fix' or 'finetune', got '{other}'"
                    )))
                }
            };
            let checkpoint =
                Checkpoint::load(&section.checkpoint).map_err(|e| invalid(e.to_string()))?;
            Some(TransferSetup {
                checkpoint,
                mode: tmode,
            })
        }
        (Mode::Transfer, None) => {
            return Err(invalid("transfer runs need a [transfer] section"));
        }
        (_, Some(_)) => {
            return Err(invalid(format!(
                "a [transfer] section is not used by {} runs",
                mode.as_str()
            )));
        }
        (_, None) => None,
    };

    let label = match &file.run.label {
        Some(label) => {
            if label.is_empty()
                || !label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            {
                return Err(invalid(format!(
                    "label '{label}' may only contain letters, digits, '-', '_', '.'"
                )));
            }
            label.clone()
        }
        None => match (mode, &transfer) {
            (Mode::Transfer, Some(setup)) => {
                let kind = match setup.mode {
                    TransferMode::Fix => "fix",
                    TransferMode::Finetune => "finetune",
                };
                format!("transfer-{kind}-{}-{}", arch.as_str(), mixer.as_str())
            }
            _ => format!("{}-{}-{}", mode.as_str(), arch.as_str(), mixer.as_str()),
        },
    };

    let train = TrainConfig {
        seed: overrides.seed.unwrap_or(file.run.seed),
        label,
        mode,
        arch,
        mixer,
        d: file.model.d,
        tasks,
        total_env_steps: file.run.total_env_steps,
        lr: t.lr,
        gamma: t.gamma,
        batch: t.batch,
        target_sync: t.target_sync,
        epsilon_start: t.epsilon_start,
        epsilon_end: t.epsilon_end,
        epsilon_anneal_steps: t.epsilon_anneal_steps,
        eval_interval: t.eval_interval,
        eval_episodes: t.eval_episodes,
        replay_capacity: t.replay_capacity,
        transfer,
    };
    Ok(Resolved {
        train,
        out_dir: pick_out_dir(file, overrides),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apnnet::{ApnNet, Scope};
    use crate::envsuite::{make_task, Family};

    const MINIMAL: &str = r#"
        [run]
        total_env_steps = 1000

        [tasks]
        names = ["teamreach-N2-W5-H5-C0"]
    "#;

    #[test]
    fn minimal_file_fills_in_every_default() {
        let file = parse_config(MINIMAL).unwrap();
        let resolved = resolve(&file, Mode::Scratch, &Overrides::default()).unwrap();
        let c = &resolved.train;
        assert_eq!(c.seed, 1);
        assert_eq!(c.d, 64);
        assert_eq!(c.arch, Arch::Apn);
        assert_eq!(c.mixer, MixerKind::Vdn);
        assert_eq!(c.lr, 5e-4);
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.batch, 32);
        assert_eq!(c.target_sync, 200);
        assert_eq!(c.epsilon_start, 1.0);
        assert_eq!(c.epsilon_end, 0.05);
        assert_eq!(c.epsilon_anneal_steps, 50_000);
        assert_eq!(c.eval_interval, 2_000);
        assert_eq!(c.eval_episodes, 32);
        assert_eq!(c.replay_capacity, 5_000);
        assert_eq!(c.label, "scratch-apn-vdn");
        assert_eq!(c.run_id(), "scratch-apn-vdn-s1");
        assert_eq!(resolved.out_dir, PathBuf::from("."));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[model]\nwidth = 3\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn missing_budget_is_rejected() {
        let err = parse_config("[run]\nseed = 3\n[tasks]\nnames = [\"preychase-N2-W7\"]")
            .unwrap_err()
            .to_string();
        assert!(err.contains("total_env_steps"), "{err}");
    }

    #[test]
    fn task_counts_are_mode_specific() {
        let two = parse_config(
            r#"
            [run]
            total_env_steps = 100
            [tasks]
            names = ["teamreach-N2-W5-H5-C0", "preychase-N2-W7"]
            "#,
        )
        .unwrap();
        let err = resolve(&two, Mode::Scratch, &Overrides::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("exactly one task"), "{err}");
        assert!(resolve(&two, Mode::Pretrain, &Overrides::default()).is_ok());

        let none = parse_config("[run]\ntotal_env_steps = 100\n[tasks]\nnames = []").unwrap();
        let err = resolve(&none, Mode::Pretrain, &Overrides::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("at least one task"), "{err}");
    }

    #[test]
    fn incompatible_mode_combinations_are_rejected() {
        let qmix = parse_config(&format!("{MINIMAL}\n[model]\nmixer = \"qmix\"\n")).unwrap();
        assert!(resolve(&qmix, Mode::Pretrain, &Overrides::default()).is_err());
        assert!(resolve(&qmix, Mode::Scratch, &Overrides::default()).is_ok());

        let original = parse_config(&format!("{MINIMAL}\n[model]\narch = \"original\"\n")).unwrap();
        assert!(resolve(&original, Mode::Pretrain, &Overrides::default()).is_err());
        assert!(resolve(&original, Mode::Scratch, &Overrides::default()).is_ok());
    }

    #[test]
    fn numeric_bounds_are_enforced() {
        for (snippet, needle) in [
            ("[train]\ngamma = 1.0", "gamma"),
            ("[train]\nepsilon_end = 0.01", "epsilon_end"),
            ("[train]\nepsilon_start = 1.5", "epsilon_start"),
            ("[train]\nepsilon_start = 0.05\nepsilon_end = 0.5", "must not grow"),
            ("[train]\nlr = 0.0", "lr"),
            ("[train]\nbatch = 0", "batch"),
        ] {
            let file = parse_config(&format!("{MINIMAL}\n{snippet}\n")).unwrap();
            let err = resolve(&file, Mode::Scratch, &Overrides::default())
                .unwrap_err()
                .to_string();
            assert!(err.contains(needle), "'{snippet}' should mention {needle}: {err}");
        }
    }

    #[test]
    fn bad_task_names_are_quoted() {
        let file = parse_config(
            "[run]\ntotal_env_steps = 100\n[tasks]\nnames = [\"teamreach-oops\"]",
        )
        .unwrap();
        let err = resolve(&file, Mode::Scratch, &Overrides::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("teamreach-oops"), "{err}");
    }

    #[test]
    fn output_directory_follows_precedence() {
        let mut file = parse_config(MINIMAL).unwrap();
        let mut over = Overrides::default();
        assert_eq!(pick_out_dir(&file, &over), PathBuf::from("."));
        over.env_out = Some(PathBuf::from("/tmp/env"));
        assert_eq!(pick_out_dir(&file, &over), PathBuf::from("/tmp/env"));
        file.run.out_dir = Some(PathBuf::from("/tmp/file"));
        assert_eq!(pick_out_dir(&file, &over), PathBuf::from("/tmp/file"));
        over.out = Some(PathBuf::from("/tmp/cli"));
        assert_eq!(pick_out_dir(&file, &over), PathBuf::from("/tmp/cli"));
    }

    #[test]
    fn seed_override_beats_the_file() {
        let file = parse_config(MINIMAL).unwrap();
        let over = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let resolved = resolve(&file, Mode::Scratch, &over).unwrap();
        assert_eq!(resolved.train.seed, 9);
        assert_eq!(resolved.train.run_id(), "scratch-apn-vdn-s9");
    }

    #[test]
    fn transfer_loads_its_checkpoint_and_validates_its_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decl.apnc");
        let spec = make_task(Family::TeamReach { n: 2, w: 5, h: 5, c: 0 }).unwrap();
        let net = ApnNet::new(16, Arch::Apn, MixerKind::Vdn, &[spec], 5).unwrap();
        net.checkpoint(Scope::DeclOnly, 7, false).save(&path).unwrap();

        let text = format!(
            r#"
            [run]
            total_env_steps = 100
            [model]
            d = 16
            [tasks]
            names = ["preychase-N2-W7"]
            [transfer]
            checkpoint = "{}"
            mode = "fix"
            "#,
            path.display()
        );
        let file = parse_config(&text).unwrap();
        let resolved = resolve(&file, Mode::Transfer, &Overrides::default()).unwrap();
        let setup = resolved.train.transfer.as_ref().unwrap();
        assert_eq!(setup.mode, TransferMode::Fix);
        assert_eq!(setup.checkpoint.arrays.len(), 4);
        assert_eq!(resolved.train.label, "transfer-fix-apn-vdn");

        let err = resolve(&file, Mode::Scratch, &Overrides::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("[transfer]"), "{err}");

        let bad = text.replace("\"fix\"", "\"freeze\"");
        let file = parse_config(&bad).unwrap();
        let err = resolve(&file, Mode::Transfer, &Overrides::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("freeze"), "{err}");
    }

    #[test]
    fn labels_are_validated_for_report_grouping() {
        let good = parse_config(&format!("{MINIMAL}\n")).unwrap();
        let mut with_label = good;
        with_label.run.label = Some("pilot_a.v2".to_string());
        let resolved = resolve(&with_label, Mode::Scratch, &Overrides::default()).unwrap();
        assert_eq!(resolved.train.label, "pilot_a.v2");

        with_label.run.label = Some("has space".to_string());
        assert!(resolve(&with_label, Mode::Scratch, &Overrides::default()).is_err());
        with_label.run.label = Some("has,comma".to_string());
        assert!(resolve(&with_label, Mode::Scratch, &Overrides::default()).is_err());
    }
}
