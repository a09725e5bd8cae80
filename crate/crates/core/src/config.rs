//! JSON pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SectorWidthRange, DEFAULT_SQUEEZE_RANGE, DEFAULT_TRANSLATE_RANGE_M};
use crate::io::read_text;
use crate::projection::{ImageSize, Sampling};
use crate::refine::{RefineOptions, RefineScheme, TieBreak, DEFAULT_K};
use crate::threshold::ThresholdConfig;

/// Camera used when a config does not name one.
pub const DEFAULT_CAMERA: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    pub scheme: RefineScheme,
    pub k: usize,
    pub include_self: bool,
    pub tie_break: TieBreak,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            scheme: RefineScheme::default(),
            k: DEFAULT_K,
            include_self: true,
            tie_break: TieBreak::default(),
        }
    }
}

impl RefinementConfig {
    pub fn options(&self) -> RefineOptions {
        RefineOptions {
            k: self.k,
            include_self: self.include_self,
            tie_break: self.tie_break,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub translate_range_m: f64,
    pub squeeze_range: (f64, f64),
    /// Sector widths for sector mixing, radians.
    pub sector_widths: SectorWidthRange,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            translate_range_m: DEFAULT_TRANSLATE_RANGE_M,
            squeeze_range: DEFAULT_SQUEEZE_RANGE,
            sector_widths: SectorWidthRange::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory holding `sequences/` and `probs_2d/`.
    pub dataset_root: PathBuf,
    #[serde(default = "default_cameras")]
    pub cameras: Vec<u8>,
    pub class_map: PathBuf,
    #[serde(default)]
    pub label_remap: Option<PathBuf>,
    /// Sequences to process; empty means every sequence found.
    #[serde(default)]
    pub sequences: Vec<String>,
    /// Used when a calibration file carries no image size.
    #[serde(default)]
    pub image_size: Option<ImageSize>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub refinement: RefinementConfig,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_root: PathBuf,
    /// Worker threads; 0 picks one per core.
    #[serde(default)]
    pub jobs: usize,
    /// Evaluation command for weight soups; the weight file path is appended.
    #[serde(default)]
    pub soup_command: Vec<String>,
}

fn default_cameras() -> Vec<u8> {
    vec![DEFAULT_CAMERA]
}

impl PipelineConfig {
    /// Minimal config with defaults for everything optional.
    pub fn new(dataset_root: impl Into<PathBuf>, class_map: impl Into<PathBuf>, output_root: impl Into<PathBuf>) -> Self {
        Self {
            dataset_root: dataset_root.into(),
            cameras: default_cameras(),
            class_map: class_map.into(),
            label_remap: None,
            sequences: Vec::new(),
            image_size: None,
            sampling: Sampling::default(),
            refinement: RefinementConfig::default(),
            threshold: ThresholdConfig::default(),
            augmentation: AugmentationConfig::default(),
            seed: 0,
            output_root: output_root.into(),
            jobs: 0,
            soup_command: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::Config("at least one camera is required".into()));
        }
        let mut seen = self.cameras.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.cameras.len() {
            return Err(Error::Config("camera ids must be distinct".into()));
        }
        if let Some(s) = self.image_size {
            if s.width == 0 || s.height == 0 {
                return Err(Error::Config("image_size must be positive".into()));
            }
        }
        self.refinement.options().validate()?;
        self.threshold.validate()?;
        let a = &self.augmentation;
        if !(a.translate_range_m >= 0.0) {
            return Err(Error::Config("translate_range_m must be >= 0".into()));
        }
        if !(a.squeeze_range.0 > 0.0 && a.squeeze_range.0 <= a.squeeze_range.1) {
            return Err(Error::Config("squeeze_range must satisfy 0 < low <= high".into()));
        }
        let w = a.sector_widths;
        if !(w.min > 0.0 && w.min <= w.max && w.max <= std::f64::consts::TAU) {
            return Err(Error::Config("sector_widths must satisfy 0 < min <= max <= 2π".into()));
        }
        Ok(())
    }

    /// Makes every relative path relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_root);
        fix(&mut self.class_map);
        fix(&mut self.output_root);
        if let Some(r) = self.label_remap.as_mut() {
            fix(r);
        }
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("{context}: line {}: {e}", e.line())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loads, validates and resolves a config; relative paths are taken relative
/// to the file's directory.
pub fn read_config(path: &Path) -> Result<PipelineConfig> {
    let text = read_text(path)?;
    let mut cfg = PipelineConfig::parse(&text, &path.display().to_string())?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dataset_root": "data", "class_map": "classes.csv", "output_root": "out"}"#;

    #[test]
    fn minimal_gets_defaults() {
        let cfg = PipelineConfig::parse(MINIMAL, "t").unwrap();
        assert_eq!(cfg, PipelineConfig::new("data", "classes.csv", "out"));
        assert_eq!(cfg.refinement.k, 19);
        assert_eq!(cfg.cameras, vec![2]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"dataset_root": "d", "class_map": "c", "output_root": "o", "colour": 1}"#;
        let err = PipelineConfig::parse(text, "t").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("colour"));
        let nested = r#"{"dataset_root": "d", "class_map": "c", "output_root": "o", "refinement": {"kk": 3}}"#;
        assert!(PipelineConfig::parse(nested, "t").unwrap_err().is_config());
    }

    #[test]
    fn even_k_is_config_error() {
        let text = r#"{"dataset_root": "d", "class_map": "c", "output_root": "o", "refinement": {"k": 4}}"#;
        assert!(matches!(PipelineConfig::parse(text, "t"), Err(Error::BadK { k: 4, .. })));
    }

    #[test]
    fn bad_thresholds_rejected() {
        let text = r#"{"dataset_root": "d", "class_map": "c", "output_root": "o",
                      "threshold": {"tau_min": 0.9, "tau_max": 0.5}}"#;
        assert!(PipelineConfig::parse(text, "t").unwrap_err().is_config());
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, MINIMAL).unwrap();
        let cfg = read_config(&path).unwrap();
        assert_eq!(cfg.dataset_root, dir.path().join("data"));
        assert_eq!(cfg.output_root, dir.path().join("out"));
        let mut abs = PipelineConfig::new("/abs/data", "c", "o");
        abs.resolve_paths(Path::new("/x"));
        assert_eq!(abs.dataset_root, PathBuf::from("/abs/data"));
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = PipelineConfig::new("d", "c", "o");
        cfg.refinement.scheme = RefineScheme::Majority;
        cfg.soup_command = vec!["python".into(), "eval.py".into()];
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(PipelineConfig::parse(&json, "t").unwrap(), cfg);
    }
}
