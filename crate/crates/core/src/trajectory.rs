//! Deterministic degradation path `x_t = k* + α_t d` and its reverse updates.

use crate::error::{Error, Result};
use crate::kspace::MultiCoilKSpace;
use crate::operators::{Degradation, Stage};

/// Monotone interpolation weights `α_0 = 0 ≤ … ≤ α_T = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alphas: Vec<f64>,
}

impl Schedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::Argument("a schedule needs at least two points".into()));
        }
        if alphas[0] != 0.0 || *alphas.last().unwrap() != 1.0 {
            return Err(Error::Argument("schedule must start at 0 and end at 1".into()));
        }
        if alphas.windows(2).any(|w| !(w[1] >= w[0])) || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Argument("schedule must be nondecreasing within [0, 1]".into()));
        }
        Ok(Self { alphas })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.alphas
            .get(t)
            .copied()
            .ok_or_else(|| Error::Index(format!("step {t} beyond T = {}", self.steps())))
    }

    pub fn step_info(&self, t: usize) -> Result<StepInfo> {
        Ok(StepInfo {
            t,
            steps: self.steps(),
            t_norm: t as f64 / self.steps() as f64,
            alpha: self.alpha(t)?,
        })
    }
}

/// `α_t = t / T`.
pub fn linear_schedule(steps: usize) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::Argument("schedule length T must be at least 1".into()));
    }
    let mut alphas: Vec<f64> = (0..=steps).map(|t| t as f64 / steps as f64).collect();
    alphas[steps] = 1.0;
    Schedule::new(alphas)
}

/// What a predictor learns about the step it is queried at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub t: usize,
    pub steps: usize,
    /// `t / T`, the conditioning value sent to learned predictors.
    pub t_norm: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub x: MultiCoilKSpace,
    pub t: usize,
    pub stage: Stage,
}

/// Estimates the stage degradation at a trajectory state.
pub trait DegradationPredictor {
    fn predict(&mut self, state: &TrajectoryState, step: StepInfo) -> Result<Degradation>;
}

impl<F> DegradationPredictor for F
where
    F: FnMut(&TrajectoryState, StepInfo) -> Result<Degradation>,
{
    fn predict(&mut self, state: &TrajectoryState, step: StepInfo) -> Result<Degradation> {
        self(state, step)
    }
}

/// Projection applied to each freshly propagated state; receives the state at
/// `t - 1` and the step `t` that produced it.
pub type PostStep<'a> = dyn FnMut(TrajectoryState, usize) -> Result<TrajectoryState> + 'a;

pub fn forward_state(
    k_star: &MultiCoilKSpace,
    d: &Degradation,
    sched: &Schedule,
    t: usize,
) -> Result<TrajectoryState> {
    let alpha = sched.alpha(t)?;
    Ok(TrajectoryState {
        x: k_star.add_scaled(&d.field, alpha)?,
        t,
        stage: d.stage,
    })
}

/// One reverse update: `k̂ = x_t − α_t d̂`, then `x_{t−1} = k̂ + α_{t−1} d̂`.
pub fn reverse_step(
    state: &TrajectoryState,
    d_hat: &Degradation,
    sched: &Schedule,
) -> Result<(MultiCoilKSpace, TrajectoryState)> {
    if state.t == 0 {
        return Err(Error::StepUnderflow);
    }
    if d_hat.stage != state.stage {
        return Err(Error::InvalidData(format!(
            "degradation for stage {} applied to a stage {} state",
            d_hat.stage, state.stage
        )));
    }
    let a_t = sched.alpha(state.t)?;
    let a_prev = sched.alpha(state.t - 1)?;
    let k_hat = state.x.add_scaled(&d_hat.field, -a_t)?;
    let next = TrajectoryState {
        x: k_hat.add_scaled(&d_hat.field, a_prev)?,
        t: state.t - 1,
        stage: state.stage,
    };
    Ok((k_hat, next))
}

/// Runs the reverse chain from `x_T` down to `x_0`.
pub fn run_reverse_chain(
    x_terminal: MultiCoilKSpace,
    stage: Stage,
    sched: &Schedule,
    predictor: &mut dyn DegradationPredictor,
    mut post_step: Option<&mut PostStep<'_>>,
) -> Result<MultiCoilKSpace> {
    let mut state = TrajectoryState {
        x: x_terminal,
        t: sched.steps(),
        stage,
    };
    let ctx = |step: usize| move |e: Error| Error::Step {
        stage: stage.as_char(),
        step,
        source: Box::new(e),
    };
    while state.t > 0 {
        let t = state.t;
        let step = sched.step_info(t)?;
        let d_hat = predictor.predict(&state, step).map_err(ctx(t))?;
        if d_hat.field.dims() != state.x.dims() {
            return Err(ctx(t)(Error::Protocol(format!(
                "predicted degradation dims {:?} differ from state dims {:?}",
                d_hat.field.dims(),
                state.x.dims()
            ))));
        }
        let (_, mut next) = reverse_step(&state, &d_hat, sched).map_err(ctx(t))?;
        if let Some(post) = post_step.as_deref_mut() {
            next = post(next, t).map_err(ctx(t))?;
        }
        state = next;
    }
    Ok(state.x)
}
