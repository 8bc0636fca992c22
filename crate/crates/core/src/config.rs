//! Versioned run configuration and the experiment it describes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentSpec, StandardAugment};
use crate::data::{load_manifest, make_split, Holdout, SplitSets, SplitSpec};
use crate::error::{OpgError, Result};
use crate::eval::Probe;
use crate::model::{ConvLayer, ModelSpec, Normalize, Preset};
use crate::pairing::PolicyMode;
use crate::trainer::{TrainOptions, TrainSchedule};

pub const CONFIG_VERSION: &str = "1";
pub const DATA_ROOT_ENV: &str = "OPG_DATA_ROOT";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    #[serde(default)]
    pub holdout: Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    /// Number of pseudo-unseen head nodes. Exclusive with `head_width`.
    #[serde(default)]
    pub r_prime: Option<usize>,
    /// Total head width `r + r'`. Exclusive with `r_prime`.
    #[serde(default)]
    pub head_width: Option<usize>,
    /// Overrides the preset's encoder layout.
    #[serde(default)]
    pub conv_layers: Option<Vec<ConvLayer>>,
    #[serde(default)]
    pub normalize: Option<Normalize>,
}

fn default_preset() -> Preset {
    Preset::Desk
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    #[serde(default)]
    pub standard: StandardAugment,
    #[serde(default)]
    pub pseudo_unseen: AugmentSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingSection {
    #[serde(default)]
    pub policy: PolicyMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_auroc_every")]
    pub auroc_every: usize,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub export_features: bool,
}

fn default_auroc_every() -> usize {
    5
}
fn default_bins() -> usize {
    crate::eval::DEFAULT_BINS
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            auroc_every: default_auroc_every(),
            histogram_bins: default_bins(),
            export_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: String,
    pub data: DataSection,
    pub split: SplitSection,
    pub model: ModelSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub pairing: PairingSection,
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Deserialize)]
struct VersionProbe {
    config_version: Option<toml::Value>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Built-in starting points for `--preset`.
    pub fn preset(preset: Preset, data_root: PathBuf, split_path: PathBuf, seed: u64) -> Self {
        let (schedule, r_prime, head_width, standard) = match preset {
            Preset::PaperCifar => (
                TrainSchedule::paper_cifar(seed),
                None,
                Some(100),
                StandardAugment::default(),
            ),
            Preset::PaperTiny => (
                TrainSchedule::paper_tiny(seed),
                None,
                Some(200),
                StandardAugment::default(),
            ),
            Preset::Desk => (
                TrainSchedule::desk(seed),
                Some(2),
                None,
                StandardAugment {
                    enabled: true,
                    crop_padding: 2,
                    flip: true,
                },
            ),
        };
        RunConfig {
            config_version: CONFIG_VERSION.into(),
            data: DataSection {
                root: data_root,
                holdout: Holdout::default(),
            },
            split: SplitSection { path: split_path },
            model: ModelSection {
                preset,
                r_prime,
                head_width,
                conv_layers: None,
                normalize: None,
            },
            augment: AugmentSection {
                standard,
                pseudo_unseen: AugmentSpec::default(),
            },
            pairing: PairingSection::default(),
            schedule,
            eval: EvalSection::default(),
        }
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let probe: VersionProbe =
            toml::from_str(text).map_err(|e| OpgError::config("config", e.message().to_string()))?;
        match probe.config_version {
            Some(toml::Value::String(v)) if v == CONFIG_VERSION => {}
            Some(v) => {
                return Err(OpgError::config(
                    "config_version",
                    format!("unsupported version {v}; this build reads \"{CONFIG_VERSION}\""),
                ))
            }
            None => return Err(OpgError::config("config_version", "missing")),
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map_or_else(|| "config".to_string(), str::to_string);
            OpgError::config(field, msg)
        })?;
        cfg.data.root = resolve(base_dir, &cfg.data.root);
        cfg.split.path = resolve(base_dir, &cfg.split.path);
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            if !root.is_empty() {
                cfg.data.root = PathBuf::from(root);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| OpgError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| OpgError::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(OpgError::config(
                "config_version",
                format!("expected \"{CONFIG_VERSION}\""),
            ));
        }
        match (self.model.r_prime, self.model.head_width) {
            (Some(0), _) => return Err(OpgError::config("model.r_prime", "must be >= 1")),
            (Some(_), Some(_)) => return Err(OpgError::config("model", "set either r_prime or head_width, not both")),
            (None, None) => return Err(OpgError::config("model", "one of r_prime or head_width is required")),
            _ => {}
        }
        self.schedule.validate()?;
        self.augment.pseudo_unseen.validate()?;
        if self.eval.histogram_bins == 0 {
            return Err(OpgError::config("eval.histogram_bins", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.data.holdout.fraction) {
            return Err(OpgError::config("data.holdout.fraction", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn model_spec(&self, r: usize, input_shape: (usize, usize, usize)) -> Result<ModelSpec> {
        let r_prime = match (self.model.r_prime, self.model.head_width) {
            (Some(rp), _) => rp,
            (None, Some(w)) if w > r => w - r,
            (None, Some(w)) => {
                return Err(OpgError::config(
                    "model.head_width",
                    format!("head width {w} leaves no pseudo-unseen nodes for r = {r}"),
                ))
            }
            (None, None) => return Err(OpgError::config("model", "one of r_prime or head_width is required")),
        };
        let mut spec = ModelSpec::from_preset(self.model.preset, r, r_prime, input_shape);
        if let Some(layers) = &self.model.conv_layers {
            spec.conv_layers = layers.clone();
        }
        spec.normalize = self.model.normalize.clone();
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_options(&self, out_dir: Option<PathBuf>) -> TrainOptions {
        TrainOptions {
            schedule: self.schedule.clone(),
            standard: self.augment.standard,
            pseudo: self.augment.pseudo_unseen,
            policy: self.pairing.policy,
            auroc_every: self.eval.auroc_every,
            out_dir,
        }
    }
}

/// A loaded dataset split plus everything derived from the config.
pub struct Experiment {
    pub config: RunConfig,
    pub split: SplitSpec,
    pub sets: SplitSets,
    pub probe: Probe,
    pub model_spec: ModelSpec,
}

impl Experiment {
    pub fn prepare(config: RunConfig) -> Result<Self> {
        config.validate()?;
        if !config.split.path.exists() {
            return Err(OpgError::validation(format!(
                "split file not found: {}",
                config.split.path.display()
            )));
        }
        let split = SplitSpec::load(&config.split.path)?;
        if !config.data.root.exists() {
            return Err(OpgError::validation(format!(
                "data root not found: {}",
                config.data.root.display()
            )));
        }
        let dataset = load_manifest(&config.data.root)?;
        let sets = make_split(&dataset, &split, config.data.holdout)?;
        let dims = sets
            .seen_train
            .dims()
            .ok_or_else(|| OpgError::validation("split has no seen training samples"))?;
        let model_spec = config.model_spec(split.r(), dims)?;
        let probe = Probe::new(&sets.seen_test, &sets.unseen_test)?;
        Ok(Experiment {
            config,
            split,
            sets,
            probe,
            model_spec,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_text() -> String {
        let cfg = RunConfig::preset(Preset::Desk, "data".into(), "data/splits/split0.toml".into(), 3);
        cfg.to_toml().unwrap()
    }

    #[test]
    fn preset_round_trips_through_toml() {
        let text = desk_text();
        let back = RunConfig::from_toml_str(&text, Path::new("/base")).unwrap();
        assert_eq!(back.schedule, TrainSchedule::desk(3));
        assert_eq!(back.split.path, PathBuf::from("/base/data/splits/split0.toml"));
        for p in [Preset::PaperCifar, Preset::PaperTiny] {
            let c = RunConfig::preset(p, "/d".into(), "/s".into(), 0);
            let again = RunConfig::from_toml_str(&c.to_toml().unwrap(), Path::new("/")).unwrap();
            assert_eq!(again, c);
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_field_name() {
        let text = desk_text().replace("[eval]", "[eval]\nbogus_key = 1");
        let err = RunConfig::from_toml_str(&text, Path::new("/")).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn other_versions_fail_loudly() {
        let text = desk_text().replace("config_version = \"1\"", "config_version = \"0\"");
        let err = RunConfig::from_toml_str(&text, Path::new("/")).unwrap_err();
        assert!(err.to_string().contains("config_version"));
        let text = desk_text().replace("config_version = \"1\"", "");
        assert!(RunConfig::from_toml_str(&text, Path::new("/")).is_err());
    }

    #[test]
    fn head_width_sets_pseudo_nodes() {
        let c = RunConfig::preset(Preset::PaperCifar, "/d".into(), "/s".into(), 0);
        let spec = c.model_spec(6, (32, 32, 3)).unwrap();
        assert_eq!((spec.r, spec.r_prime, spec.head_width()), (6, 94, 100));
        let t = RunConfig::preset(Preset::PaperTiny, "/d".into(), "/s".into(), 0);
        assert_eq!(t.model_spec(20, (64, 64, 3)).unwrap().head_width(), 200);
        assert!(c.model_spec(100, (32, 32, 3)).is_err());
    }

    #[test]
    fn invalid_schedule_is_a_config_error() {
        let mut c = RunConfig::preset(Preset::Desk, "/d".into(), "/s".into(), 0);
        c.schedule.step1.lr = -1.0;
        assert!(matches!(c.validate(), Err(OpgError::Config { .. })));
    }

    #[test]
    fn missing_split_names_the_path() {
        let c = RunConfig::preset(Preset::Desk, "/nonexistent".into(), "/nonexistent/split.toml".into(), 0);
        let err = Experiment::prepare(c).err().unwrap();
        assert!(err.is_validation());
        assert!(err.to_string().contains("/nonexistent/split.toml"));
    }
}
