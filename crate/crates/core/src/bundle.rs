//! On-disk bundles: one directory per case or result, fixed file names.
//!
//! Case bundle: `truth_s<i>.kst`, `sens_s<i>.kst`, `measurement.kst`,
//! `mask.kst`, `scheme.txt`, `provenance.txt`.
//! Result bundle: `kspace_s<i>.kst`, `image_s<i>.kst`, optionally
//! `stage_m_s<i>.kst`, `provenance.txt` and `timing.txt`.
//! Kernel files are JSON with a plain-text residual report next to them.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::CoilSensitivitySet;
use crate::error::{Error, Result};
use crate::inference::{ConfigSummary, ReconstructionResult};
use crate::kspace::{MagnitudeImage, MultiCoilKSpace, SliceStack};
use crate::operators::{CaipiScheme, SamplingMask};
use crate::predictors::KernelSet;
use crate::simulation::{CaseProvenance, DatasetCase};
use crate::tensorfile::{write_atomic, TensorFile};

pub const MEASUREMENT_FILE: &str = "measurement.kst";
pub const MASK_FILE: &str = "mask.kst";
pub const SCHEME_FILE: &str = "scheme.txt";
pub const PROVENANCE_FILE: &str = "provenance.txt";
pub const TIMING_FILE: &str = "timing.txt";
pub const REPORT_FILE: &str = "report.txt";

pub fn truth_file(s: usize) -> String {
    format!("truth_s{s}.kst")
}

pub fn sens_file(s: usize) -> String {
    format!("sens_s{s}.kst")
}

pub fn kspace_file(s: usize) -> String {
    format!("kspace_s{s}.kst")
}

pub fn image_file(s: usize) -> String {
    format!("image_s{s}.kst")
}

pub fn stage_m_file(s: usize) -> String {
    format!("stage_m_s{s}.kst")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::InvalidData(format!("serialization failed: {e}")))
}

fn from_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))
}

/// Grid geometry shared by the measurement, the mask and the scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeRecord {
    pub rows: usize,
    pub cols: usize,
    pub shifts: Vec<f64>,
    /// ACS band `[start, end)` in phase-encode lines.
    pub acs: [usize; 2],
}

impl SchemeRecord {
    pub fn new(scheme: &CaipiScheme, mask: &SamplingMask) -> Self {
        let (rows, cols) = scheme.shape();
        Self {
            rows,
            cols,
            shifts: scheme.shifts().to_vec(),
            acs: [mask.acs().start, mask.acs().end],
        }
    }

    pub fn scheme(&self) -> Result<CaipiScheme> {
        CaipiScheme::new(self.shifts.clone(), self.rows, self.cols)
    }

    pub fn acs(&self) -> Range<usize> {
        self.acs[0]..self.acs[1]
    }
}

/// A case as loaded from disk; tensors carry f32 precision.
#[derive(Debug, Clone)]
pub struct CaseBundle {
    pub truth: SliceStack,
    pub sensitivities: CoilSensitivitySet,
    pub scheme: CaipiScheme,
    pub mask: SamplingMask,
    pub measurement: MultiCoilKSpace,
    pub provenance: CaseProvenance,
}

impl CaseBundle {
    pub fn acs_reference(&self) -> Result<SliceStack> {
        crate::simulation::acs_reference(&self.truth, &self.mask)
    }
}

pub fn write_case(dir: impl AsRef<Path>, case: &DatasetCase) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    for (s, k) in case.truth.slices().iter().enumerate() {
        TensorFile::from_kspace(k).write(dir.join(truth_file(s)))?;
    }
    for (s, maps) in case.sensitivities.maps().iter().enumerate() {
        TensorFile::from_kspace(&MultiCoilKSpace::new(maps.clone())?).write(dir.join(sens_file(s)))?;
    }
    TensorFile::from_kspace(&case.measurement).write(dir.join(MEASUREMENT_FILE))?;
    TensorFile::from_mask(&case.mask).write(dir.join(MASK_FILE))?;
    write_text(&dir.join(SCHEME_FILE), &to_toml(&SchemeRecord::new(&case.scheme, &case.mask))?)?;
    write_text(&dir.join(PROVENANCE_FILE), &to_toml(&case.provenance)?)
}

pub fn read_case(dir: impl AsRef<Path>) -> Result<CaseBundle> {
    let dir = dir.as_ref();
    let record: SchemeRecord = from_toml(&dir.join(SCHEME_FILE))?;
    let provenance: CaseProvenance = from_toml(&dir.join(PROVENANCE_FILE))?;
    let scheme = record.scheme()?;
    let b = scheme.b();
    let mask = TensorFile::read(dir.join(MASK_FILE))?.to_mask(record.acs())?;
    let measurement = TensorFile::read(dir.join(MEASUREMENT_FILE))?.to_kspace()?;
    let truth = SliceStack::new(
        (0..b)
            .map(|s| TensorFile::read(dir.join(truth_file(s)))?.to_kspace())
            .collect::<Result<_>>()?,
    )?;
    let sensitivities = CoilSensitivitySet::new(
        (0..b)
            .map(|s| Ok(TensorFile::read(dir.join(sens_file(s)))?.to_kspace()?.into_grids()))
            .collect::<Result<_>>()?,
    )?;
    let (_, rows, cols) = measurement.dims();
    if truth.dims() != measurement.dims() || mask.shape() != (rows, cols) || scheme.shape() != (rows, cols) {
        return Err(Error::Shape(format!("{}: bundle tensors disagree in shape", dir.display())));
    }
    Ok(CaseBundle {
        truth,
        sensitivities,
        scheme,
        mask,
        measurement,
        provenance,
    })
}

/// Method, predictor and settings behind a result bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultProvenance {
    pub method: String,
    pub b: usize,
    pub coils: usize,
    pub rows: usize,
    pub cols: usize,
    pub inference: Option<ConfigSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub provenance: ResultProvenance,
    pub kspace: Vec<MultiCoilKSpace>,
    pub images: Vec<MagnitudeImage>,
    pub stage_m: Option<Vec<MultiCoilKSpace>>,
}

impl ResultBundle {
    /// Bundle for a baseline that produces only final k-space.
    pub fn from_slices(method: &str, slices: Vec<MultiCoilKSpace>) -> Result<Self> {
        let stack = SliceStack::new(slices)?;
        let (coils, rows, cols) = stack.dims();
        let images = stack.slices().iter().map(crate::kspace::rss_combine).collect::<Result<_>>()?;
        Ok(Self {
            provenance: ResultProvenance {
                method: method.into(),
                b: stack.b(),
                coils,
                rows,
                cols,
                inference: None,
            },
            kspace: stack.into_slices(),
            images,
            stage_m: None,
        })
    }

    pub fn from_reconstruction(method: &str, r: &ReconstructionResult) -> Self {
        let (coils, rows, cols) = r.provenance.dims;
        Self {
            provenance: ResultProvenance {
                method: method.into(),
                b: r.provenance.b,
                coils,
                rows,
                cols,
                inference: Some(r.provenance.config.clone()),
            },
            kspace: r.full.clone(),
            images: r.images.clone(),
            stage_m: Some(r.stage_m.clone()),
        }
    }
}

/// Writes a result bundle. `timings` (seconds per slice) go to a separate
/// file so the rest of the bundle is reproducible byte for byte.
pub fn write_result(dir: impl AsRef<Path>, result: &ResultBundle, timings: Option<&[f64]>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    for (s, k) in result.kspace.iter().enumerate() {
        TensorFile::from_kspace(k).write(dir.join(kspace_file(s)))?;
    }
    for (s, img) in result.images.iter().enumerate() {
        TensorFile::from_image(img).write(dir.join(image_file(s)))?;
    }
    if let Some(stage_m) = &result.stage_m {
        for (s, k) in stage_m.iter().enumerate() {
            TensorFile::from_kspace(k).write(dir.join(stage_m_file(s)))?;
        }
    }
    write_text(&dir.join(PROVENANCE_FILE), &to_toml(&result.provenance)?)?;
    if let Some(t) = timings {
        let text: String = t.iter().enumerate().map(|(s, v)| format!("slice={s} seconds={v}\n")).collect();
        write_text(&dir.join(TIMING_FILE), &text)?;
    }
    Ok(())
}

pub fn read_result(dir: impl AsRef<Path>) -> Result<ResultBundle> {
    let dir = dir.as_ref();
    let provenance: ResultProvenance = from_toml(&dir.join(PROVENANCE_FILE))?;
    let b = provenance.b;
    let kspace = (0..b)
        .map(|s| TensorFile::read(dir.join(kspace_file(s)))?.to_kspace())
        .collect::<Result<Vec<_>>>()?;
    let images = (0..b)
        .map(|s| TensorFile::read(dir.join(image_file(s)))?.to_image())
        .collect::<Result<Vec<_>>>()?;
    let stage_m = if dir.join(stage_m_file(0)).exists() {
        Some(
            (0..b)
                .map(|s| TensorFile::read(dir.join(stage_m_file(s)))?.to_kspace())
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let dims = (provenance.coils, provenance.rows, provenance.cols);
    if kspace.iter().any(|k| k.dims() != dims) || images.iter().any(|i| i.shape() != (dims.1, dims.2)) {
        return Err(Error::Shape(format!("{}: result tensors disagree with provenance", dir.display())));
    }
    Ok(ResultBundle {
        provenance,
        kspace,
        images,
        stage_m,
    })
}

/// `kernels.json` plus a residual report in `<stem>.txt` beside it.
pub fn write_kernels(path: impl AsRef<Path>, kernels: &KernelSet) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let json = serde_json::to_string(kernels).map_err(|e| Error::InvalidData(format!("kernel serialization: {e}")))?;
    write_atomic(path, json.as_bytes())?;
    write_text(&path.with_extension("txt"), &residual_report(kernels))
}

pub fn read_kernels(path: impl AsRef<Path>) -> Result<KernelSet> {
    let path = path.as_ref();
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))
}

/// One `key=value` line per kernel with its relative calibration residual.
pub fn residual_report(kernels: &KernelSet) -> String {
    let mut out = String::new();
    for k in &kernels.slice {
        out.push_str(&format!("kind=slice slice={} residual={}\n", k.target, k.residual));
    }
    for k in &kernels.anchor {
        out.push_str(&format!("kind=anchor slice={} residual={}\n", k.target, k.residual));
    }
    for k in kernels.inplane.iter().flatten() {
        out.push_str(&format!(
            "kind=inplane slice={} offset={} residual={}\n",
            k.slice, k.missing_offset, k.residual
        ));
    }
    out.push_str(&format!("max_residual={}\n", kernels.max_residual()));
    out
}
