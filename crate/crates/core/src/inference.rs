//! Two-stage inference: Stage-M slice separation, then Stage-U in-plane
//! completion under data-consistency and low-frequency anchor projections.

use std::ops::Range;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{rss_combine, MagnitudeImage, MultiCoilKSpace};
use crate::operators::{apply_mask, caipi_inverse, CaipiScheme, SamplingMask, Stage};
use crate::predictors::{low_frequency_anchor, KernelSet, PredictorKind};
use crate::trajectory::{linear_schedule, run_reverse_chain, DegradationPredictor, TrajectoryState};

pub const DEFAULT_STEPS: usize = 10;
pub const DEFAULT_GUIDANCE_INTERVAL: usize = 2;

#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub t_m: usize,
    pub t_u: usize,
    /// Anchor projection runs on steps `t` with `t % guidance_interval == 0`.
    pub guidance_interval: usize,
    pub use_anchor: bool,
    pub dc_enabled: bool,
    pub predictor_m: PredictorKind,
    pub predictor_u: PredictorKind,
    /// Source of the low-frequency anchor; required when `use_anchor` is set.
    pub anchor_kernels: Option<Arc<KernelSet>>,
}

impl InferenceConfig {
    /// Default steps and interval; the anchor is on exactly when kernels are
    /// given.
    pub fn new(predictor_m: PredictorKind, predictor_u: PredictorKind, anchor_kernels: Option<Arc<KernelSet>>) -> Self {
        Self {
            t_m: DEFAULT_STEPS,
            t_u: DEFAULT_STEPS,
            guidance_interval: DEFAULT_GUIDANCE_INTERVAL,
            use_anchor: anchor_kernels.is_some(),
            dc_enabled: true,
            predictor_m,
            predictor_u,
            anchor_kernels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_m == 0 || self.t_u == 0 {
            return Err(Error::Config("step counts t_m and t_u must be >= 1".into()));
        }
        if self.guidance_interval == 0 {
            return Err(Error::Config("guidance interval must be >= 1".into()));
        }
        if self.use_anchor && self.anchor_kernels.is_none() {
            return Err(Error::Config("anchor enabled but no kernels were calibrated".into()));
        }
        Ok(())
    }

    pub fn summary(&self) -> ConfigSummary {
        ConfigSummary {
            t_m: self.t_m,
            t_u: self.t_u,
            guidance_interval: self.guidance_interval,
            use_anchor: self.use_anchor,
            dc_enabled: self.dc_enabled,
            predictor_m: self.predictor_m.name().to_string(),
            predictor_u: self.predictor_u.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub t_m: usize,
    pub t_u: usize,
    pub guidance_interval: usize,
    pub use_anchor: bool,
    pub dc_enabled: bool,
    pub predictor_m: String,
    pub predictor_u: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config: ConfigSummary,
    pub b: usize,
    pub dims: (usize, usize, usize),
    /// Wall-clock seconds per slice (Stage-M + Stage-U).
    pub slice_seconds: Vec<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Stage-M output per slice.
    pub stage_m: Vec<MultiCoilKSpace>,
    /// Final k-space per slice.
    pub full: Vec<MultiCoilKSpace>,
    pub images: Vec<MagnitudeImage>,
    pub provenance: Provenance,
}

impl ReconstructionResult {
    /// Equality of every reconstructed value, ignoring timings.
    pub fn same_output(&self, other: &Self) -> bool {
        self.stage_m == other.stage_m && self.full == other.full && self.images == other.images
    }
}

/// Acquired entries taken from `pseudo`, the rest from `x`.
pub fn dc_project(x: &MultiCoilKSpace, pseudo: &MultiCoilKSpace, mask: &SamplingMask) -> Result<MultiCoilKSpace> {
    x.check_same_dims(pseudo)?;
    if mask.shape() != (x.rows(), x.cols()) {
        return Err(Error::Shape("mask does not match the state grid".into()));
    }
    let mut out = x.clone();
    for (og, pg) in out.grids_mut().iter_mut().zip(pseudo.grids()) {
        for ((v, &p), &m) in og.data_mut().iter_mut().zip(pg.data()).zip(mask.kept()) {
            if m == 1 {
                *v = p;
            }
        }
    }
    Ok(out)
}

/// ACS lines taken from `anchor`, the rest from `x`.
pub fn anchor_project(x: &MultiCoilKSpace, anchor: &MultiCoilKSpace, acs: Range<usize>) -> Result<MultiCoilKSpace> {
    x.check_same_dims(anchor)?;
    if acs.end > x.cols() {
        return Err(Error::Shape(format!("ACS band {acs:?} exceeds {} columns", x.cols())));
    }
    let cols = x.cols();
    let mut out = x.clone();
    for (og, ag) in out.grids_mut().iter_mut().zip(anchor.grids()) {
        for (i, (v, &a)) in og.data_mut().iter_mut().zip(ag.data()).enumerate() {
            if acs.contains(&(i % cols)) {
                *v = a;
            }
        }
    }
    Ok(out)
}

/// The Stage-M estimate on the acquired entries.
pub fn pseudo_measurement(k_hat_m: &MultiCoilKSpace, mask: &SamplingMask) -> Result<MultiCoilKSpace> {
    apply_mask(k_hat_m, mask)
}

/// Stage-M chain from the target-aligned measurement; no projections.
pub fn stage_m(
    y_aligned: &MultiCoilKSpace,
    cfg: &InferenceConfig,
    predictor: &mut dyn DegradationPredictor,
) -> Result<MultiCoilKSpace> {
    let sched = linear_schedule(cfg.t_m)?;
    run_reverse_chain(y_aligned.clone(), Stage::M, &sched, predictor, None)
}

/// Stage-U chain warm-started at the Stage-M output. Each reverse step is
/// followed by the data-consistency projection (if enabled) and, on guided
/// steps, the anchor projection.
pub fn stage_u(
    k_hat_m: &MultiCoilKSpace,
    mask: &SamplingMask,
    cfg: &InferenceConfig,
    predictor: &mut dyn DegradationPredictor,
    anchor: Option<&MultiCoilKSpace>,
) -> Result<MultiCoilKSpace> {
    if cfg.guidance_interval == 0 {
        return Err(Error::Config("guidance interval must be >= 1".into()));
    }
    let sched = linear_schedule(cfg.t_u)?;
    let pseudo = pseudo_measurement(k_hat_m, mask)?;
    let acs = mask.acs();
    let anchor = if cfg.use_anchor { anchor } else { None };
    let mut post = |mut state: TrajectoryState, t: usize| -> Result<TrajectoryState> {
        if cfg.dc_enabled {
            state.x = dc_project(&state.x, &pseudo, mask)?;
        }
        if let Some(a) = anchor {
            if t % cfg.guidance_interval == 0 {
                state.x = anchor_project(&state.x, a, acs.clone())?;
            }
        }
        Ok(state)
    };
    run_reverse_chain(k_hat_m.clone(), Stage::U, &sched, predictor, Some(&mut post))
}

fn reconstruct_slice(
    y: &MultiCoilKSpace,
    scheme: &CaipiScheme,
    mask: &SamplingMask,
    cfg: &InferenceConfig,
    anchor: Option<&MultiCoilKSpace>,
    s: usize,
) -> Result<(MultiCoilKSpace, MultiCoilKSpace, MagnitudeImage, f64)> {
    let start = Instant::now();
    let aligned = caipi_inverse(y, scheme, s)?;
    let mut pm = cfg.predictor_m.instantiate(Stage::M, s, &aligned, mask)?;
    let k_m = stage_m(&aligned, cfg, pm.as_mut())?;
    let mut pu = cfg.predictor_u.instantiate(Stage::U, s, &k_m, mask)?;
    let k_full = stage_u(&k_m, mask, cfg, pu.as_mut(), anchor)?;
    let image = rss_combine(&k_full)?;
    Ok((k_m, k_full, image, start.elapsed().as_secs_f64()))
}

/// Runs both stages for every slice of the scheme. Slices are reconstructed
/// concurrently; each result depends only on its own inputs.
pub fn reconstruct_all(
    y: &MultiCoilKSpace,
    scheme: &CaipiScheme,
    mask: &SamplingMask,
    cfg: &InferenceConfig,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let start = Instant::now();
    if mask.is_all_zeros() {
        return Err(Error::Degenerate("sampling mask keeps no entries".into()));
    }
    if mask.shape() != (y.rows(), y.cols()) || scheme.shape() != (y.rows(), y.cols()) {
        return Err(Error::Shape("measurement, mask and scheme differ in grid shape".into()));
    }
    if !y.is_finite() {
        return Err(Error::InvalidData("measurement contains non-finite values".into()));
    }
    let anchors = match (&cfg.anchor_kernels, cfg.use_anchor) {
        (Some(kernels), true) => Some(low_frequency_anchor(y, mask, scheme, kernels)?),
        _ => None,
    };
    let b = scheme.b();
    let outcomes: Vec<Result<_>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..b)
            .map(|s| {
                let anchor = anchors.as_ref().map(|a| &a[s]);
                scope.spawn(move || reconstruct_slice(y, scheme, mask, cfg, anchor, s))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidData("slice worker panicked".into()))))
            .collect()
    });
    let mut result = ReconstructionResult {
        stage_m: Vec::with_capacity(b),
        full: Vec::with_capacity(b),
        images: Vec::with_capacity(b),
        provenance: Provenance {
            config: cfg.summary(),
            b,
            dims: y.dims(),
            slice_seconds: Vec::with_capacity(b),
            total_seconds: 0.0,
        },
    };
    for (s, outcome) in outcomes.into_iter().enumerate() {
        let (k_m, k_full, image, secs) = outcome.map_err(|e| Error::Slice { slice: s, source: Box::new(e) })?;
        result.stage_m.push(k_m);
        result.full.push(k_full);
        result.images.push(image);
        result.provenance.slice_seconds.push(secs);
    }
    result.provenance.total_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Predictor that always returns a zero degradation, freezing the chain.
pub fn zero_predictor() -> impl DegradationPredictor {
    |state: &TrajectoryState, _: crate::trajectory::StepInfo| {
        Ok(crate::operators::Degradation::zeros_like(&state.x, state.stage))
    }
}
