//! Experiment configuration (JSON, versioned by `schema`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackSpec;
use crate::error::{Error, Result};
use crate::grid::is_pow2;
use crate::model::{MixtureModel, ModelSpec};
use crate::solvers::{GradientMode, SolverConfig, DDIM_STEPS, RF_STEPS};
use crate::stats::{DEFAULT_BINS, DEFAULT_FPR_LEVELS};
use crate::watermark::{KeyPattern, Watermark};

pub const CONFIG_SCHEMA: u32 = 1;

/// `"sd"` (4×64×64), `"flux"` (16×64×64) or an explicit `[C, H, W]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LatentShape {
    Preset(String),
    Explicit([usize; 3]),
}

impl LatentShape {
    pub fn resolve(&self) -> Result<(usize, usize, usize)> {
        let (c, h, w) = match self {
            LatentShape::Preset(p) => match p.as_str() {
                "sd" => (4, 64, 64),
                "flux" => (16, 64, 64),
                other => return Err(Error::Config(format!("unknown shape preset {other:?}"))),
            },
            LatentShape::Explicit([c, h, w]) => (*c, *h, *w),
        };
        if c == 0 || !is_pow2(h) || !is_pow2(w) {
            return Err(Error::Config(format!(
                "latent shape {c}x{h}x{w} needs C >= 1 and power-of-two planes"
            )));
        }
        Ok((c, h, w))
    }
}

impl Default for LatentShape {
    fn default() -> Self {
        LatentShape::Preset("sd".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatermarkConfig {
    pub radius: f64,
    pub channel: usize,
    pub pattern: KeyPattern,
    pub key_seed: u64,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self {
            radius: 10.0,
            channel: 0,
            pattern: KeyPattern::default(),
            key_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Rf,
    Ddim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    Naive,
    Implicit,
    Exact,
    Dpmpp2,
}

impl InversionMode {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Rf => InversionMode::Implicit,
            Family::Ddim => InversionMode::Exact,
        }
    }

    fn check(self, family: Family) -> Result<()> {
        let ok = matches!(
            (family, self),
            (Family::Rf, InversionMode::Naive | InversionMode::Implicit)
                | (Family::Ddim, InversionMode::Naive | InversionMode::Exact | InversionMode::Dpmpp2)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inversion {self:?} is not available for {family:?}")))
        }
    }
}

/// Solver family, inversion mode and optional overrides of [`SolverConfig`].
/// Unset `steps` falls back to 28 for rectified flow and 50 for DDIM.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub family: Family,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inversion: Option<InversionMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fp_max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fp_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gd_max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gd_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<GradientMode>,
}

impl SolverSection {
    pub fn inversion(&self) -> InversionMode {
        self.inversion.unwrap_or(InversionMode::default_for(self.family))
    }

    pub fn resolve(&self) -> Result<SolverConfig> {
        let base = SolverConfig::default();
        let cfg = SolverConfig {
            steps: self.steps.unwrap_or(match self.family {
                Family::Rf => RF_STEPS,
                Family::Ddim => DDIM_STEPS,
            }),
            fp_max_iters: self.fp_max_iters.unwrap_or(base.fp_max_iters),
            fp_tol: self.fp_tol.unwrap_or(base.fp_tol),
            gd_max_iters: self.gd_max_iters.unwrap_or(base.gd_max_iters),
            gd_step: self.gd_step.unwrap_or(base.gd_step),
            guidance_scale: self.guidance_scale.unwrap_or(base.guidance_scale),
            gradient: self.gradient.unwrap_or(base.gradient),
            fd_step: base.fd_step,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.inversion().check(self.family)?;
        Ok(cfg)
    }
}

/// Condition used when inverting, relative to the generating component `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "arm", deny_unknown_fields)]
pub enum GuidanceArm {
    /// `exact(k)` with guidance.
    Matched,
    /// The unconditional field alone.
    Null,
    /// `perturbed(k, η)` with guidance.
    Perturbed { eta: f64 },
    /// `exact(j)` for a random `j ≠ k`, with guidance.
    Adversarial,
}

/// Default η of the perturbed arm.
pub const DEFAULT_ETA: f64 = 0.3;

impl GuidanceArm {
    pub fn tag(&self) -> &'static str {
        match self {
            GuidanceArm::Matched => "matched",
            GuidanceArm::Null => "null",
            GuidanceArm::Perturbed { .. } => "perturbed",
            GuidanceArm::Adversarial => "adversarial",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    pub fpr_levels: Vec<f64>,
    pub kld_bins: usize,
    pub histogram_bins: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            fpr_levels: DEFAULT_FPR_LEVELS.to_vec(),
            kld_bins: DEFAULT_BINS,
            histogram_bins: DEFAULT_BINS,
        }
    }
}

impl ReportOptions {
    pub fn validate(&self) -> Result<()> {
        if self.fpr_levels.is_empty() || self.fpr_levels.iter().any(|f| !(0.0..1.0).contains(f) || *f == 0.0) {
            return Err(Error::Config("fpr_levels must be nonempty and inside (0, 1)".into()));
        }
        if self.fpr_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("fpr_levels must be strictly increasing".into()));
        }
        if self.kld_bins < 2 || self.histogram_bins < 1 {
            return Err(Error::Config("kld_bins must be >= 2 and histogram_bins >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub global_seed: u64,
    /// Number of trials; each trial yields one watermarked and one clean row
    /// per (attack, guidance) pair.
    pub trials: usize,
    pub latent_shape: LatentShape,
    /// Model file, relative to the config file. Unset means the default
    /// mixture generated from `model_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub model_seed: u64,
    pub watermark: WatermarkConfig,
    pub solver: SolverSection,
    pub guidance: Vec<GuidanceArm>,
    pub attacks: Vec<AttackSpec>,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub report: ReportOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            global_seed: 2024,
            trials: 100,
            latent_shape: LatentShape::default(),
            model: None,
            model_seed: 1,
            watermark: WatermarkConfig::default(),
            solver: SolverSection::default(),
            guidance: vec![GuidanceArm::Matched],
            attacks: vec![AttackSpec::NONE],
            workers: 0,
            output_dir: PathBuf::from("out"),
            report: ReportOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a config. Relative `model` paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        if let Some(m) = &cfg.model {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.model = Some(base.join(m));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported config schema {} (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        let (c, h, w) = self.latent_shape.resolve()?;
        if self.watermark.channel >= c {
            return Err(Error::Config(format!("watermark channel {} >= {c}", self.watermark.channel)));
        }
        if !(self.watermark.radius >= 1.0 && self.watermark.radius < h.min(w) as f64 / 2.0) {
            return Err(Error::Config(format!("watermark radius {} out of range", self.watermark.radius)));
        }
        if let Some(m) = &self.model {
            if !m.is_file() {
                return Err(Error::Config(format!("model file {} does not exist", m.display())));
            }
        }
        self.solver.resolve()?;
        if self.guidance.is_empty() || self.attacks.is_empty() {
            return Err(Error::Config("guidance and attacks must be nonempty".into()));
        }
        for g in &self.guidance {
            if let GuidanceArm::Perturbed { eta } = g {
                if !(0.0..=1.0).contains(eta) {
                    return Err(Error::Config(format!("perturbed eta {eta} outside [0, 1]")));
                }
            }
        }
        unique(self.guidance.iter().map(GuidanceArm::tag), "guidance")?;
        unique(self.attacks.iter().map(AttackSpec::tag), "attack")?;
        for a in &self.attacks {
            a.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.report.validate()
    }

    pub fn shape(&self) -> Result<(usize, usize, usize)> {
        self.latent_shape.resolve()
    }

    pub fn build_model(&self) -> Result<MixtureModel> {
        let spec = match &self.model {
            Some(path) => ModelSpec::load(path)?,
            None => ModelSpec::default_mixture(self.model_seed),
        };
        let base = self
            .model
            .as_deref()
            .and_then(Path::parent)
            .unwrap_or(Path::new("."));
        spec.build(self.shape()?, base)
    }

    pub fn build_watermark(&self) -> Result<Watermark> {
        let (_, h, w) = self.shape()?;
        let wm = &self.watermark;
        Watermark::generate(h, w, wm.radius, wm.channel, wm.key_seed, wm.pattern)
    }
}

fn unique<'a>(tags: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen: Vec<&str> = Vec::new();
    for t in tags {
        if seen.contains(&t) {
            return Err(Error::Config(format!("duplicate {what} tag {t:?}")));
        }
        seen.push(t);
    }
    Ok(())
}
