//! Degradation predictors `(x_t, t, Ω) → d̂_t`.
//!
//! * [`OracleTruth`] returns the exact degradation from ground truth.
//! * [`EstimatePredictor`] turns any slice estimate `k̂*` into a predictor via
//!   `d̂ = (x_t − k̂*) / α_t`; the calibrated predictors are built this way from
//!   a [`KernelSet`].
//! * [`external::ExternalEndpoint`] forwards requests to another process over
//!   the `OCDI-PRED v1` protocol.

pub mod external;
pub mod grappa;

use std::sync::Arc;

pub use external::{external_predict, EndpointDescriptor, ExternalEndpoint};
pub use grappa::{
    grappa_calibrate, low_frequency_anchor, slice_grappa_apply, GrappaKernel, InPlaneKernel, KernelOptions, KernelSet,
};

use crate::error::{Error, Result};
use crate::kspace::{MultiCoilKSpace, SliceStack};
use crate::operators::{apply_mask, degradation_m, degradation_u, CaipiScheme, Degradation, SamplingMask, Stage};
use crate::trajectory::{DegradationPredictor, Schedule, StepInfo, TrajectoryState};

/// Smallest `α_t` at which the estimate adapter may be queried.
pub const ALPHA_EPS: f64 = 1e-6;

/// Ground truth available to the oracle predictor.
#[derive(Debug, Clone)]
pub struct OracleTruth {
    pub stack: SliceStack,
    pub scheme: CaipiScheme,
    /// Needed for Stage-U and for Stage-M under undersampling.
    pub mask: Option<SamplingMask>,
}

impl OracleTruth {
    pub fn new(stack: SliceStack, scheme: CaipiScheme, mask: Option<SamplingMask>) -> Self {
        Self { stack, scheme, mask }
    }

    /// Exact degradation of `target` for `stage`.
    ///
    /// Under undersampling the Stage-M degradation is taken against masked
    /// truth, so the Stage-M chain lands on `P⊙k`.
    pub fn degradation(&self, stage: Stage, target: usize) -> Result<Degradation> {
        match stage {
            Stage::M => match &self.mask {
                Some(mask) if !mask.is_all_ones() => {
                    let masked = SliceStack::new(
                        self.stack
                            .slices()
                            .iter()
                            .map(|k| apply_mask(k, mask))
                            .collect::<Result<_>>()?,
                    )?;
                    degradation_m(&masked, &self.scheme, target)
                }
                _ => degradation_m(&self.stack, &self.scheme, target),
            },
            Stage::U => {
                let mask = self
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::Config("oracle Stage-U prediction needs the sampling mask".into()))?;
                degradation_u(self.stack.slice(target)?, mask)
            }
        }
    }
}

/// Oracle prediction for a state of slice `target`; independent of `t`.
pub fn oracle_predict(state: &TrajectoryState, truth: Option<&OracleTruth>, target: usize) -> Result<Degradation> {
    let truth = truth.ok_or_else(|| Error::Config("oracle predictor has no ground truth".into()))?;
    let d = truth.degradation(state.stage, target)?;
    d.field.check_same_dims(&state.x)?;
    Ok(d)
}

/// Oracle bound to one slice; the degradation is computed once.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    degradation: Degradation,
}

impl OraclePredictor {
    pub fn new(truth: &OracleTruth, stage: Stage, target: usize) -> Result<Self> {
        Ok(Self {
            degradation: truth.degradation(stage, target)?,
        })
    }
}

impl DegradationPredictor for OraclePredictor {
    fn predict(&mut self, state: &TrajectoryState, _step: StepInfo) -> Result<Degradation> {
        if self.degradation.stage != state.stage {
            return Err(Error::Config(format!(
                "oracle built for stage {} queried at stage {}",
                self.degradation.stage, state.stage
            )));
        }
        self.degradation.field.check_same_dims(&state.x)?;
        Ok(self.degradation.clone())
    }
}

/// `(x_t − k_est) / α_t`, the degradation implied by a slice estimate.
pub fn estimator_to_degradation(
    state: &TrajectoryState,
    k_est: &MultiCoilKSpace,
    sched: &Schedule,
) -> Result<Degradation> {
    degradation_from_estimate(state, k_est, sched.alpha(state.t)?)
}

fn degradation_from_estimate(state: &TrajectoryState, k_est: &MultiCoilKSpace, alpha: f64) -> Result<Degradation> {
    if !(alpha >= ALPHA_EPS) {
        return Err(Error::NearZeroAlpha { alpha, eps: ALPHA_EPS });
    }
    let inv = 1.0 / alpha;
    Ok(Degradation::new(
        state.x.zip_map(k_est, move |x, k| (x - k) * inv)?,
        state.stage,
    ))
}

/// Predictor backed by a fixed slice estimate.
#[derive(Debug, Clone)]
pub struct EstimatePredictor {
    estimate: MultiCoilKSpace,
}

impl EstimatePredictor {
    pub fn new(estimate: MultiCoilKSpace) -> Self {
        Self { estimate }
    }

    pub fn estimate(&self) -> &MultiCoilKSpace {
        &self.estimate
    }

    /// Stage-M calibrated predictor: slice-GRAPPA separation of the
    /// terminal state, evaluated on the acquired entries.
    pub fn slice_separation(kernels: &KernelSet, x_terminal: &MultiCoilKSpace, mask: &SamplingMask, slice: usize) -> Result<Self> {
        Ok(Self::new(kernels.separate(x_terminal, mask, slice)?))
    }

    /// Stage-U calibrated predictor: in-plane GRAPPA completion of the
    /// terminal state.
    pub fn inplane_completion(kernels: &KernelSet, x_terminal: &MultiCoilKSpace, mask: &SamplingMask, slice: usize) -> Result<Self> {
        Ok(Self::new(kernels.complete(x_terminal, mask, slice)?))
    }
}

impl DegradationPredictor for EstimatePredictor {
    fn predict(&mut self, state: &TrajectoryState, step: StepInfo) -> Result<Degradation> {
        degradation_from_estimate(state, &self.estimate, step.alpha)
    }
}

/// Which predictor a stage uses.
#[derive(Debug, Clone)]
pub enum PredictorKind {
    Oracle(Arc<OracleTruth>),
    Calibrated(Arc<KernelSet>),
    External(Arc<ExternalEndpoint>),
}

impl PredictorKind {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::Oracle(_) => "oracle",
            PredictorKind::Calibrated(_) => "grappa",
            PredictorKind::External(_) => "external",
        }
    }

    /// Predictor for one chain of `slice` starting from `x_terminal`.
    pub fn instantiate(
        &self,
        stage: Stage,
        slice: usize,
        x_terminal: &MultiCoilKSpace,
        mask: &SamplingMask,
    ) -> Result<Box<dyn DegradationPredictor + Send>> {
        Ok(match self {
            PredictorKind::Oracle(truth) => Box::new(OraclePredictor::new(truth, stage, slice)?),
            PredictorKind::Calibrated(kernels) => Box::new(match stage {
                Stage::M => EstimatePredictor::slice_separation(kernels, x_terminal, mask, slice)?,
                Stage::U => EstimatePredictor::inplane_completion(kernels, x_terminal, mask, slice)?,
            }),
            PredictorKind::External(endpoint) => Box::new(external::ExternalPredictor::new(endpoint.clone())),
        })
    }
}
