//! Run configuration: a TOML file whose every key can be overridden on the command line.

use std::path::{Path, PathBuf};

use ctxprop_core::dataset::{OrderingKey, SplitSpec, SynthSpec, CAR};
use ctxprop_core::proposals::{DEFAULT_DEDUP_IOU, DEFAULT_MAX_STALE_DRAWS};
use ctxprop_core::topics::{
    DEFAULT_NUM_TOPICS, DEFAULT_THETA_BINS, DEFAULT_X_EXTENT, DEFAULT_Z_EXTENT,
};
use ctxprop_core::{Frame, GridSpec, ObjectSize, SeedMode, Strategy, StrategyKind};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Typical KITTI car, used when no training statistics are available.
pub const DEFAULT_OBJECT_SIZE: ObjectSize = ObjectSize {
    l: 3.88,
    w: 1.63,
    h: 1.53,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rng_seed: u64,
    pub class: String,
    /// Worker threads for per-image work; 0 lets the pool decide.
    pub threads: usize,
    pub paths: PathsConfig,
    pub split: SplitConfig,
    pub strategy: StrategyConfig,
    pub grid: GridConfig,
    pub vocabulary: VocabularyConfig,
    pub lda: LdaConfig,
    pub fit: FitConfig,
    pub sampling: SamplingConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            class: CAR.to_string(),
            threads: 0,
            paths: PathsConfig::default(),
            split: SplitConfig::default(),
            strategy: StrategyConfig::default(),
            grid: GridConfig::default(),
            vocabulary: VocabularyConfig::default(),
            lda: LdaConfig::default(),
            fit: FitConfig::default(),
            sampling: SamplingConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset root with `label_2/`, `calib/` and optionally `detections/`.
    pub data: PathBuf,
    pub models: PathBuf,
    /// Proposal files read by `eval`.
    pub proposals: Vec<PathBuf>,
    /// Output of the current command: scene directory, proposals file or CSV.
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            models: PathBuf::from("models"),
            proposals: Vec::new(),
            output: PathBuf::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    #[default]
    Test,
    All,
}

impl std::str::FromStr for SplitPart {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitPart::Train),
            "test" => Ok(SplitPart::Test),
            "all" => Ok(SplitPart::All),
            _ => Err(format!("unknown split part `{s}` (train, test, all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Images processed by `sample` and `eval`; `fit` always uses the training part.
    pub part: SplitPart,
    pub fraction: f64,
    pub ordering_key: OrderingKey,
    pub min_objects_per_image: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            part: SplitPart::Test,
            fraction: s.fraction,
            ordering_key: s.ordering_key,
            min_objects_per_image: s.min_objects_per_image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub frame: Frame,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::HigherOrderTopics,
            frame: Frame::CameraCentered,
        }
    }
}

impl StrategyConfig {
    pub fn strategy(&self) -> Strategy {
        Strategy::new(self.kind, self.frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub x_step: f64,
    pub z_step: f64,
    pub num_orientations: usize,
    /// Box size for grid proposals. Unset: the training mean recorded by `fit`, or a
    /// typical car.
    pub object_size: Option<ObjectSize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_range: (-20.0, 20.0),
            z_range: (4.0, 60.0),
            x_step: 0.5,
            z_step: 0.5,
            num_orientations: 8,
            object_size: None,
        }
    }
}

impl GridConfig {
    pub fn spec(&self, size: ObjectSize) -> GridSpec {
        GridSpec {
            x_range: self.x_range,
            z_range: self.z_range,
            x_step: self.x_step,
            z_step: self.z_step,
            num_orientations: self.num_orientations,
            default_size: size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularyConfig {
    /// Cell size in meters. Unset: half the mean training object width.
    pub cell: Option<f64>,
    pub theta_bins: usize,
    pub x_extent: (f64, f64),
    pub z_extent: (f64, f64),
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        Self {
            cell: None,
            theta_bins: DEFAULT_THETA_BINS,
            x_extent: DEFAULT_X_EXTENT,
            z_extent: DEFAULT_Z_EXTENT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaConfig {
    pub topics: usize,
    pub iterations: usize,
    /// Document-topic prior. Unset: `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            topics: DEFAULT_NUM_TOPICS,
            iterations: 1000,
            alpha: None,
            beta: 0.01,
        }
    }
}

impl LdaConfig {
    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Relation strategies to fit models for.
    pub strategies: Vec<StrategyKind>,
    pub frames: Vec<Frame>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            strategies: vec![
                StrategyKind::PairwiseKde,
                StrategyKind::HigherOrderTopics,
                StrategyKind::HigherOrderElongation,
            ],
            frames: vec![Frame::CameraCentered, Frame::ObjectCentered],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub budget: usize,
    pub dedup_iou: f64,
    pub seed_mode: SeedMode,
    pub include_seeds: bool,
    pub max_stale_draws: usize,
    /// Detection score threshold τ.
    pub score_threshold: f64,
    pub nms_threshold: f64,
    /// Fill budgets left open by an exhausted strategy with grid proposals.
    pub top_up: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            budget: 1000,
            dedup_iou: DEFAULT_DEDUP_IOU,
            seed_mode: SeedMode::All,
            include_seeds: true,
            max_stale_draws: DEFAULT_MAX_STALE_DRAWS,
            score_threshold: 0.5,
            nms_threshold: 0.5,
            top_up: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub budgets: Vec<usize>,
    pub iou_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            budgets: vec![1, 10, 50, 100, 200, 500, 1000],
            iou_thresholds: vec![0.5, 0.75],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            ordering_key: self.split.ordering_key,
            fraction: self.split.fraction,
            min_objects_per_image: self.split.min_objects_per_image,
            class_of_interest: self.class.clone(),
        }
    }

    /// Checks the invariants the pipeline relies on.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::config(m));
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return bad(format!(
                "split.fraction {} outside (0, 1)",
                self.split.fraction
            ));
        }
        if self.eval.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return bad("eval.budgets must be strictly ascending".into());
        }
        if let Some(t) = self
            .eval
            .iou_thresholds
            .iter()
            .find(|t| !(**t > 0.0 && **t <= 1.0))
        {
            return bad(format!("iou threshold {t} outside (0, 1]"));
        }
        if self.sampling.budget == 0 {
            return bad("sampling.budget must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.sampling.nms_threshold) {
            return bad(format!(
                "nms threshold {} outside [0, 1]",
                self.sampling.nms_threshold
            ));
        }
        if self.lda.topics == 0 {
            return bad("lda.topics must be at least 1".into());
        }
        // Manifests store seeds as TOML integers.
        for (key, v) in [
            ("rng_seed", self.rng_seed),
            ("synth.rng_seed", self.synth.rng_seed),
        ] {
            if i64::try_from(v).is_err() {
                return bad(format!("{key} {v} exceeds {}", i64::MAX));
            }
        }
        Ok(())
    }
}
