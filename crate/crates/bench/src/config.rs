//! Experiment configuration, read from TOML (`key = value` lines in `[sections]`).

use std::path::Path;

use anyhow::{ensure, Context, Result};
use resalign::synth::{ChannelSpec, SmoothNoise};
use resalign::train::{FitConfig, LrSchedule};
use resalign::{AnalyticImage, ResampleMethod, Sinusoid};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub grid: GridConfig,
    pub study: StudyConfig,
    #[serde(default)]
    pub implicit: ImplicitConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub assertions: AssertionConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub channels: usize,
    #[serde(default)]
    pub offset: f64,
    /// Phase advance of channel `c` is `c * phase_step`.
    #[serde(default)]
    pub phase_step: f64,
    #[serde(default, rename = "sinusoid")]
    pub sinusoids: Vec<SinusoidConfig>,
    pub noise: Option<NoiseConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidConfig {
    pub amplitude: f64,
    pub freq_x: f64,
    #[serde(default)]
    pub freq_y: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub components: usize,
    pub cutoff: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    /// Border excluded from PSNR/SSIM/attenuation.
    #[serde(default = "default_margin")]
    pub eval_margin: usize,
}

fn default_margin() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub shifts: Vec<[f64; 2]>,
    pub methods: Vec<String>,
    #[serde(default = "default_peak")]
    pub peak: f64,
}

fn default_peak() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImplicitConfig {
    pub window: usize,
    pub heads: usize,
    pub iterations: usize,
    pub lr: f64,
    pub schedule: String,
    pub seed: u64,
    pub pe_decimal: bool,
    pub pe_window: bool,
    /// Training pairs per shift, rendered at seeded scene origins.
    pub train_instances: usize,
    pub train_origin_range: f64,
}

impl Default for ImplicitConfig {
    fn default() -> Self {
        Self {
            window: 2,
            heads: 2,
            iterations: 2000,
            lr: 1e-2,
            schedule: "constant".into(),
            seed: 7,
            pe_decimal: true,
            pe_window: true,
            train_instances: 4,
            train_origin_range: 64.0,
        }
    }
}

impl ImplicitConfig {
    pub fn fit_config(&self) -> Result<FitConfig> {
        let schedule = match self.schedule.as_str() {
            "constant" => LrSchedule::Constant,
            "cosine" => LrSchedule::Cosine,
            other => anyhow::bail!("unknown schedule '{other}' (expected constant or cosine)"),
        };
        Ok(FitConfig {
            iterations: self.iterations,
            lr: self.lr,
            schedule,
            batch_size: None,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub windows: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            windows: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssertionConfig {
    /// Classical rows at zero shift must report infinite PSNR.
    pub classical_identity_at_zero_shift: bool,
    /// Implicit PSNR >= bilinear PSNR at every fractional shift, and bilinear PSNR > 0 dB.
    pub implicit_beats_bilinear: bool,
    /// Ablation: both encodings pooled PSNR >= no encodings.
    pub pe_improves_psnr: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Classical(ResampleMethod),
    Implicit,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("implicit") {
            Ok(Self::Implicit)
        } else {
            Ok(Self::Classical(s.parse()?))
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.study.methods.iter().map(|m| Method::parse(m)).collect()
    }

    pub fn implicit_enabled(&self) -> bool {
        self.methods().map(|m| m.contains(&Method::Implicit)).unwrap_or(false)
    }

    fn validate(&self) -> Result<()> {
        ensure!(!self.study.methods.is_empty(), "study.methods must not be empty");
        ensure!(!self.study.shifts.is_empty(), "study.shifts must not be empty");
        self.methods()?;
        ensure!(self.scene.channels >= 1, "scene.channels must be >= 1");
        ensure!(self.grid.height >= 1 && self.grid.width >= 1, "grid must be non-empty");
        ensure!(
            self.grid.height > 2 * self.grid.eval_margin && self.grid.width > 2 * self.grid.eval_margin,
            "eval_margin leaves no pixels to score"
        );
        if self.implicit_enabled() {
            ensure!(
                self.scene.channels.is_multiple_of(4),
                "implicit alignment needs channels divisible by 4, got {}",
                self.scene.channels
            );
        }
        self.implicit.fit_config()?;
        Ok(())
    }

    pub fn scene(&self) -> Result<AnalyticImage> {
        let channels = (0..self.scene.channels)
            .map(|c| ChannelSpec {
                offset: self.scene.offset,
                sinusoids: self
                    .scene
                    .sinusoids
                    .iter()
                    .map(|s| {
                        Sinusoid::new(
                            s.amplitude,
                            s.freq_x,
                            s.freq_y,
                            s.phase + c as f64 * self.scene.phase_step,
                        )
                    })
                    .collect(),
            })
            .collect();
        let mut image = AnalyticImage::new(channels)?;
        if let Some(n) = self.scene.noise {
            image.add_smooth_noise(SmoothNoise {
                components: n.components,
                cutoff: n.cutoff,
                amplitude: n.amplitude,
                seed: n.seed,
            })?;
        }
        Ok(image)
    }
}
