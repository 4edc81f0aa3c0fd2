//! Experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::MixtureMode;
use crate::editing::StyleFilter;
use crate::encode::Encoder;
use crate::error::{Error, Result};
use crate::kdes::KdesParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        per_class: usize,
        size: usize,
        seed: u64,
    },
    Directory {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Single kernel on the unedited variant.
    Standard,
    /// Fixed uniform average of all base kernels.
    AddAk,
    /// Learned base-kernel weights.
    AddGmkl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::AddAk => "add_ak",
            Method::AddGmkl => "add_gmkl",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Method::Standard),
            "add_ak" => Ok(Method::AddAk),
            "add_gmkl" => Ok(Method::AddGmkl),
            _ => Err(Error::Parameter(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub styles: Vec<StyleFilter>,
    pub mixture: MixtureMode,
    pub train_per_class: usize,
    /// Test images per class; the whole remainder when absent.
    #[serde(default)]
    pub test_per_class: Option<usize>,
    #[serde(default = "default_encoder")]
    pub encoder: Encoder,
    #[serde(default)]
    pub kdes: KdesParams,
    #[serde(default = "default_codebook_size")]
    pub codebook_size: usize,
    /// Descriptors drawn per variant for k-means.
    #[serde(default = "default_codebook_samples")]
    pub codebook_samples: usize,
    /// EMK bandwidth; when absent, the inverse median squared distance
    /// between codewords.
    #[serde(default)]
    pub gamma_e: Option<f64>,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_lambda_d")]
    pub lambda_d: f64,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

fn default_encoder() -> Encoder {
    Encoder::Emk
}
fn default_codebook_size() -> usize {
    200
}
fn default_codebook_samples() -> usize {
    500
}
fn default_c() -> f64 {
    10.0
}
fn default_lambda_d() -> f64 {
    1e-2
}

impl ExperimentConfig {
    /// Desk-scale defaults: 4 synthetic classes of 64x64 images, 20 train and
    /// 20 test per class, D = 200, 5 seeds.
    pub fn desk(styles: Vec<StyleFilter>, mixture: MixtureMode, output_dir: PathBuf) -> Self {
        Self {
            dataset: DatasetSpec::Synthetic { classes: 4, per_class: 40, size: 64, seed: 2024 },
            styles,
            mixture,
            train_per_class: 20,
            test_per_class: Some(20),
            encoder: Encoder::Emk,
            kdes: KdesParams::default(),
            codebook_size: default_codebook_size(),
            codebook_samples: default_codebook_samples(),
            gamma_e: None,
            c: default_c(),
            lambda_d: default_lambda_d(),
            methods: vec![Method::Standard, Method::AddAk, Method::AddGmkl],
            seeds: vec![0, 1, 2, 3, 4],
            output_dir,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.styles.is_empty() {
            return bad("style pool must not be empty".into());
        }
        for s in &self.styles {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.train_per_class == 0 {
            return bad("train_per_class must be >= 1".into());
        }
        if let DatasetSpec::Synthetic { per_class, .. } = self.dataset {
            if self.train_per_class >= per_class {
                return bad(format!("train_per_class {} must be below the class size {per_class}", self.train_per_class));
            }
        }
        if self.codebook_size < 2 || self.codebook_samples == 0 {
            return bad("codebook_size must be >= 2 and codebook_samples >= 1".into());
        }
        if matches!(self.gamma_e, Some(g) if !(g > 0.0)) {
            return bad("gamma_e must be > 0".into());
        }
        if !(self.c > 0.0) || !(self.lambda_d >= 0.0) {
            return bad("C must be > 0 and lambda_d >= 0".into());
        }
        self.kdes.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
