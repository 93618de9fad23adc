//! JSON run configuration for the `stylize` command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::guidance::{
    ConditioningSpec, Denoiser, Fingerprint, FrozenLinearDenoiser, GaussianBranch,
    GaussianToyDenoiser, GuidanceError, MeanField, Role, Token,
};
use crate::scene::{
    bake_all, load_scene, make_synthetic_scene, ColorInit, GaussianScene, SceneError, SplatWeights,
    SyntheticParams,
};
use crate::schedule::NoiseSchedule;
use crate::stylize::{self, RunConfig, StylizeError, StylizeOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Synthetic(SyntheticParams),
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathwayConfig {
    pub positive: Vec<Token>,
    pub negative: Vec<Token>,
}

impl PathwayConfig {
    pub fn build(&self) -> Result<ConditioningSpec, GuidanceError> {
        ConditioningSpec::new(self.positive.clone(), self.negative.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    pub target: PathwayConfig,
    pub source: PathwayConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    /// Token names selecting this branch (order-free, structure tokens excluded).
    pub tokens: Vec<String>,
    /// Per-channel data mean.
    pub mean: Vec<f64>,
    #[serde(default)]
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    pub tokens: Vec<String>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserConfig {
    GaussianToy { branches: Vec<BranchConfig> },
    FrozenLinear { seed: u64, biases: Vec<BiasConfig> },
}

impl DenoiserConfig {
    pub fn build(
        &self,
        schedule: &NoiseSchedule,
        channels: usize,
    ) -> Result<Box<dyn Denoiser>, String> {
        match self {
            DenoiserConfig::GaussianToy { branches } => {
                let mut d = GaussianToyDenoiser::new(schedule.clone());
                for b in branches {
                    if b.mean.len() != channels {
                        return Err(format!(
                            "branch {:?} mean has {} entries, expected {channels}",
                            b.tokens,
                            b.mean.len()
                        ));
                    }
                    if !(b.variance >= 0.0 && b.variance.is_finite()) {
                        return Err(format!("branch {:?} variance must be >= 0", b.tokens));
                    }
                    d = d.with_branch(
                        Fingerprint::from_names(&b.tokens),
                        GaussianBranch {
                            mean: MeanField::PerChannel(b.mean.clone()),
                            variance: b.variance,
                        },
                    );
                }
                Ok(Box::new(d))
            }
            DenoiserConfig::FrozenLinear { seed, biases } => {
                let mut d = FrozenLinearDenoiser::new(*seed, channels);
                for b in biases {
                    if b.bias.len() != channels {
                        return Err(format!(
                            "bias {:?} has {} entries, expected {channels}",
                            b.tokens,
                            b.bias.len()
                        ));
                    }
                    d = d.with_bias(&b.tokens, b.bias.clone());
                }
                Ok(Box::new(d))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub scene: SceneSource,
    pub run: RunConfig,
    pub conditioning: ConditioningConfig,
    pub denoiser: DenoiserConfig,
    pub output_dir: PathBuf,
}

fn token(name: &str, role: Role, value: f64) -> Token {
    Token::scalar(name, role, value)
}

impl Default for Config {
    fn default() -> Self {
        let branch = |tokens: &[&str], mean: [f64; 3]| BranchConfig {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            mean: mean.to_vec(),
            variance: 0.0,
        };
        Self {
            scene: SceneSource::Synthetic(SyntheticParams {
                color_init: ColorInit::Uniform {
                    color: [0.5, 0.5, 0.5],
                },
                ..SyntheticParams::default()
            }),
            run: RunConfig::default(),
            conditioning: ConditioningConfig {
                target: PathwayConfig {
                    positive: vec![
                        token("prompt", Role::TextPrompt, 1.0),
                        token("style", Role::Style, 2.0),
                    ],
                    negative: vec![token("content", Role::Content, 3.0)],
                },
                source: PathwayConfig {
                    positive: vec![token("prompt", Role::TextPrompt, 1.0)],
                    negative: vec![token("null", Role::Null, 0.0)],
                },
            },
            denoiser: DenoiserConfig::GaussianToy {
                branches: vec![
                    branch(&["prompt", "style"], [0.75, 0.45, 0.3]),
                    branch(&["content"], [0.5, 0.5, 0.5]),
                    branch(&["prompt"], [0.55, 0.5, 0.45]),
                    branch(&["null"], [0.5, 0.5, 0.5]),
                ],
            },
            output_dir: PathBuf::from("out"),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PrepareError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Stylize(#[from] StylizeError),
}

/// Everything a stylization run needs, built and validated from a [`Config`].
pub struct Prepared {
    pub scene: GaussianScene,
    pub weights: Vec<SplatWeights>,
    pub denoiser: Box<dyn Denoiser>,
    pub cond_tgt: ConditioningSpec,
    pub cond_src: ConditioningSpec,
    pub run: RunConfig,
}

impl Prepared {
    /// Relative scene paths resolve against `base_dir`.
    pub fn new(cfg: &Config, base_dir: &Path) -> Result<Self, PrepareError> {
        let invalid = |e: &dyn std::fmt::Display| PrepareError::Invalid(e.to_string());
        let (scene, weights) = match &cfg.scene {
            SceneSource::Synthetic(p) => make_synthetic_scene(p)?,
            SceneSource::File { path } => {
                let scene = load_scene(base_dir.join(path))?;
                let weights = bake_all(&scene)?;
                (scene, weights)
            }
        };
        let schedule = cfg.run.schedule.build().map_err(|e| invalid(&e))?;
        cfg.run.validate(scene.cameras().len())?;
        let denoiser = cfg
            .denoiser
            .build(&schedule, 3)
            .map_err(PrepareError::Invalid)?;
        let cond_tgt = cfg.conditioning.target.build().map_err(|e| invalid(&e))?;
        let cond_src = cfg.conditioning.source.build().map_err(|e| invalid(&e))?;
        cond_tgt
            .check_pathway_roles("target")
            .map_err(|e| invalid(&e))?;
        cond_src
            .check_pathway_roles("source")
            .map_err(|e| invalid(&e))?;
        Ok(Self {
            scene,
            weights,
            denoiser,
            cond_tgt,
            cond_src,
            run: cfg.run.clone(),
        })
    }

    pub fn stylize(&self) -> Result<StylizeOutput, StylizeError> {
        stylize::stylize(
            &self.scene,
            &self.weights,
            &self.denoiser,
            &self.cond_tgt,
            &self.cond_src,
            &self.run,
        )
    }
}
