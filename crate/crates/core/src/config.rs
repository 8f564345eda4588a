//! Experiment configuration files.
//!
//! A config is TOML: `[section]` headers or dotted keys (`triplet.k = 4`),
//! with every unknown key rejected. One master `seed` feeds both random
//! consumers (texture and initialization) through separate ChaCha streams.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::camera::{Intrinsics, StereoRig};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_CAP;
use crate::optimizer::{InitMode, OptConfig};
use crate::photometric::PhotometricConfig;
use crate::synth::{Rect, SceneObject, SceneSpec};
use crate::triplet::TripletConfig;

/// The config shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub width: usize,
    pub height: usize,
    pub d_bg: u32,
    pub d_fg: u32,
    pub fg_rect: Rect,
    #[serde(default)]
    pub window_rect: Option<Rect>,
    pub texture_scale: f64,
    #[serde(default)]
    pub extra_objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Meters.
    pub baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_smooth: f64,
    pub lambda_triplet: f64,
    pub init: InitMode,
    /// Defaults to 0.5.
    #[serde(default)]
    pub d_lo: Option<f64>,
    /// Defaults to twice the foreground disparity.
    #[serde(default)]
    pub d_hi: Option<f64>,
    /// Write a disparity snapshot every this many steps; 0 keeps only the final map.
    #[serde(default)]
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub d_lo: f64,
    pub d_hi: f64,
    pub step: f64,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { d_lo: 1.0, d_hi: 15.0, step: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub cap: f64,
    #[serde(default)]
    pub median_scale: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { cap: DEFAULT_CAP, median_scale: false }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub margins: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { margins: vec![0.50, 0.60, 0.65, 0.70, 0.80] }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scene: SceneSection,
    pub rig: RigSection,
    #[serde(default)]
    pub photometric: PhotometricConfig,
    #[serde(default)]
    pub triplet: TripletConfig,
    pub opt: OptSection,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn shipped_default() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("shipped default config is valid")
    }

    /// Checks every section; failures are reported as config errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Contract(m) => Error::Config(m),
            other => other,
        };
        self.scene_spec().validate().map_err(as_config)?;
        self.rig()?.validate().map_err(as_config)?;
        self.opt_config().validate().map_err(as_config)?;
        let m = &self.metrics;
        if !(m.cap > 0.0 && m.cap.is_finite()) {
            return Err(Error::Config(format!("metrics.cap must be positive, got {}", m.cap)));
        }
        let p = &self.profile;
        if !(p.d_lo > 0.0 && p.d_hi >= p.d_lo && p.step > 0.0) {
            return Err(Error::Config(format!("invalid profile range [{}, {}] step {}", p.d_lo, p.d_hi, p.step)));
        }
        if self.sweep.margins.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::Config("sweep margins must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn scene_spec(&self) -> SceneSpec {
        let s = &self.scene;
        SceneSpec {
            width: s.width,
            height: s.height,
            d_bg: s.d_bg,
            d_fg: s.d_fg,
            fg_rect: s.fg_rect,
            window_rect: s.window_rect,
            texture_seed: self.seed,
            texture_scale: s.texture_scale,
            extra_objects: s.extra_objects.clone(),
        }
    }

    pub fn rig(&self) -> Result<StereoRig> {
        let r = &self.rig;
        let intrinsics = Intrinsics::new(r.fx, r.fy, r.cx, r.cy).map_err(|e| Error::Config(e.to_string()))?;
        Ok(StereoRig { intrinsics, baseline: r.baseline })
    }

    pub fn opt_config(&self) -> OptConfig {
        let o = &self.opt;
        OptConfig {
            steps: o.steps,
            learning_rate: o.learning_rate,
            lambda_smooth: o.lambda_smooth,
            lambda_triplet: o.lambda_triplet,
            triplet: self.triplet,
            photometric: self.photometric,
            init: o.init,
            seed: self.seed,
            d_bounds: (o.d_lo.unwrap_or(0.5), o.d_hi.unwrap_or(2.0 * self.scene.d_fg as f64)),
        }
    }
}
