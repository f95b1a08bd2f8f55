//! Run configuration: a TOML document with fixed sections.
//!
//! ```toml
//! output = "case"
//!
//! [phantom]
//! rows = 96
//! cols = 96
//! coils = 4
//! variant_seed = 0
//! noise_sigma = 0.0
//!
//! [scheme]
//! b = 3
//! # shifts = [0.0, 0.3333333333333333, -0.3333333333333333]
//!
//! [mask]
//! r = 2
//! acs = 32
//!
//! [inference]
//! t_m = 10
//! t_u = 10
//! guidance_interval = 2
//! anchor = true
//! dc = true
//! predictor = "grappa"
//!
//! [seeds]
//! noise = 0
//! ```
//!
//! Every section and key is optional; unknown keys are rejected. Relative
//! paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{DEFAULT_GUIDANCE_INTERVAL, DEFAULT_STEPS};
use crate::simulation::{build_case_with_shifts, DatasetCase, PhantomSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub rows: usize,
    pub cols: usize,
    pub coils: usize,
    pub variant_seed: u64,
    pub noise_sigma: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let d = PhantomSpec::default();
        Self {
            rows: d.rows,
            cols: d.cols,
            coils: d.coils,
            variant_seed: d.variant_seed,
            noise_sigma: d.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeSection {
    pub b: usize,
    pub shifts: Option<Vec<f64>>,
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self { b: 3, shifts: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub r: usize,
    pub acs: usize,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self { r: 2, acs: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub t_m: usize,
    pub t_u: usize,
    pub guidance_interval: usize,
    pub anchor: bool,
    pub dc: bool,
    /// `oracle`, `grappa` or `external`.
    pub predictor: String,
    /// Endpoint descriptor for the external predictor.
    pub endpoint: Option<String>,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            t_m: DEFAULT_STEPS,
            t_u: DEFAULT_STEPS,
            guidance_interval: DEFAULT_GUIDANCE_INTERVAL,
            anchor: true,
            dc: true,
            predictor: "grappa".into(),
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output: PathBuf,
    pub phantom: PhantomSection,
    pub scheme: SchemeSection,
    pub mask: MaskSection,
    pub inference: InferenceSection,
    pub seeds: SeedSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("case"),
            phantom: PhantomSection::default(),
            scheme: SchemeSection::default(),
            mask: MaskSection::default(),
            inference: InferenceSection::default(),
            seeds: SeedSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses `path`, resolving `output` against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if cfg.output.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec {
            rows: self.phantom.rows,
            cols: self.phantom.cols,
            b: self.scheme.b,
            coils: self.phantom.coils,
            variant_seed: self.phantom.variant_seed,
            noise_sigma: self.phantom.noise_sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, e: Error| Error::Config(format!("{k}: {}", e.root()));
        self.phantom_spec().validate().map_err(|e| key("phantom", e))?;
        if self.scheme.b == 0 {
            return Err(Error::Config("scheme.b: must be >= 1".into()));
        }
        if let Some(f) = &self.scheme.shifts {
            if f.len() != self.scheme.b {
                return Err(Error::Config(format!(
                    "scheme.shifts: {} values for b = {}",
                    f.len(),
                    self.scheme.b
                )));
            }
        }
        if self.mask.r == 0 {
            return Err(Error::Config("mask.r: must be >= 1".into()));
        }
        if self.mask.acs > self.phantom.cols {
            return Err(Error::Config(format!(
                "mask.acs: {} lines exceed {} columns",
                self.mask.acs, self.phantom.cols
            )));
        }
        let inf = &self.inference;
        if inf.t_m == 0 || inf.t_u == 0 {
            return Err(Error::Config("inference.t_m / inference.t_u: must be >= 1".into()));
        }
        if inf.guidance_interval == 0 {
            return Err(Error::Config("inference.guidance_interval: must be >= 1".into()));
        }
        match (inf.predictor.as_str(), &inf.endpoint) {
            ("oracle" | "grappa", _) => {}
            ("external", Some(_)) => {}
            ("external", None) => return Err(Error::Config("inference.endpoint: required for the external predictor".into())),
            (other, _) => {
                return Err(Error::Config(format!(
                    "inference.predictor: unknown kind {other:?} (oracle, grappa, external)"
                )))
            }
        }
        Ok(())
    }

    pub fn build_case(&self) -> Result<DatasetCase> {
        build_case_with_shifts(
            &self.phantom_spec(),
            self.scheme.b,
            self.scheme.shifts.as_deref(),
            self.mask.r,
            self.mask.acs,
            self.seeds.noise,
        )
    }
}
