//! Experiment and sweep configuration files (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ganselect::optim::SamTargets;
use ganselect::{DatasetSpec, EvalOptions, NetworkSpec, ObjectiveKind, ObjectiveSpec, ProbeConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Hidden width of every network in the 2D experiments.
pub const HIDDEN_UNITS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub generator: NetworkSpec,
    pub critic: NetworkSpec,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// WGAN on 2000 points of a 2D standard normal, with a 64-unit MLP2
    /// critic and a generator with latent dim `latent` and `hidden_layers`
    /// hidden layers.
    pub fn gaussian_2d(latent: usize, hidden_layers: usize) -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::gaussian(2, 2000, 0),
            generator: NetworkSpec::generator(latent, 2, hidden_layers, HIDDEN_UNITS),
            critic: NetworkSpec::critic(2, 2, HIDDEN_UNITS),
            objective: ObjectiveSpec::new(ObjectiveKind::WganDiv),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            probe: ProbeConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::config("", e.to_string()))
    }

    /// Section-level validation plus cross-section shape checks.
    pub fn validate(&self) -> Result<()> {
        let at = |section: &'static str| move |e: ganselect::Error| CliError::config(section, e.to_string());
        self.dataset.validate().map_err(at("dataset"))?;
        self.generator.validate().map_err(at("generator"))?;
        self.objective.validate().map_err(at("objective"))?;
        self.train.validate().map_err(at("train"))?;
        self.eval.validate().map_err(at("eval"))?;
        self.probe.validate().map_err(at("probe"))?;
        if self.generator.output_dim != self.dataset.dim {
            return Err(CliError::config(
                "generator.output_dim",
                format!("{} does not match dataset.dim {}", self.generator.output_dim, self.dataset.dim),
            ));
        }
        if self.objective.kind.has_critic() {
            self.critic.validate().map_err(at("critic"))?;
            if self.critic.input_dim != self.dataset.dim || self.critic.output_dim != 1 {
                return Err(CliError::config(
                    "critic",
                    format!(
                        "must map dataset.dim {} to 1 score, got {}→{}",
                        self.dataset.dim, self.critic.input_dim, self.critic.output_dim
                    ),
                ));
            }
            if self.train.n_critic == 0 {
                return Err(CliError::config("train.n_critic", "must be positive for objectives with a critic"));
            }
        }
        Ok(())
    }
}

/// A base experiment, grid axes over dotted field paths and a repeat count.
///
/// Cells enumerate the cross product of the axes with paths in lexicographic
/// order and the last path varying fastest. Repeat `r` of a cell trains with
/// seed `base.train.seed + r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    1
}

/// One point of a sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    /// `(path, value)` per axis, in axis order.
    pub assignment: Vec<(String, toml::Value)>,
    pub config: ExperimentConfig,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = parse_toml(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::config("", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(CliError::config("repeats", "must be ≥ 1"));
        }
        if let Some((path, _)) = self.axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(CliError::config(format!("axes.{path}"), "axis has no values"));
        }
        self.base.validate()?;
        self.cells().map(|_| ())
    }

    /// Every grid cell, type-checked against the base config. When an axis
    /// sets `train.rho_sam` and none sets `train.sam_targets`, the targets
    /// follow the radius (both when positive, none at zero).
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        let base = toml::Value::try_from(&self.base).map_err(|e| CliError::config("base", e.to_string()))?;
        let paths: Vec<&String> = self.axes.keys().collect();
        let sizes: Vec<usize> = self.axes.values().map(Vec::len).collect();
        let total: usize = sizes.iter().product();
        let mut cells = Vec::with_capacity(total);
        for index in 0..total {
            let mut rem = index;
            let mut picks = vec![0; paths.len()];
            for k in (0..paths.len()).rev() {
                picks[k] = rem % sizes[k];
                rem /= sizes[k];
            }
            let mut value = base.clone();
            let mut assignment = Vec::with_capacity(paths.len());
            for (k, path) in paths.iter().enumerate() {
                let v = self.axes[*path][picks[k]].clone();
                set_path(&mut value, path, v.clone())?;
                assignment.push(((*path).clone(), v));
            }
            let text = toml::to_string(&value).map_err(|e| CliError::config("axes", e.to_string()))?;
            let mut config: ExperimentConfig = parse_toml(&text)?;
            if self.axes.contains_key("train.rho_sam") && !self.axes.contains_key("train.sam_targets") {
                config.train.sam_targets =
                    if config.train.rho_sam > 0.0 { SamTargets::Both } else { SamTargets::None };
            }
            config.validate().map_err(|e| match e {
                CliError::Config { path, detail } => CliError::config(path, format!("{detail} (sweep cell {index})")),
                other => other,
            })?;
            cells.push(SweepCell { index, assignment, config });
        }
        Ok(cells)
    }
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("axes.{path}"), format!("`{}` is not a table", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            table.insert((*key).to_string(), value);
            return Ok(());
        }
        node = table.entry((*key).to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(CliError::config("axes", "empty field path"))
}

fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::config("", e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "<root>".to_string() } else { path };
        CliError::config(path, e.into_inner().message().to_string())
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
