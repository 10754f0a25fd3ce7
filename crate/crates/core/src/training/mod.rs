//! Optimizer, losses, data generators and the desk-scale experiment tasks.

pub mod adam;
pub mod data;
pub mod direct;
pub mod inverse;
pub mod loss;
pub mod motif;
pub mod sweep;
pub mod universality;

pub use adam::{adam_step, Adam, AdamConfig};
pub use direct::DirectMedium;
pub use inverse::{run_inverse_medium, InverseMediumReport, InverseMediumSpec};
pub use motif::{run_pattern_detect, PatternDetectReport, PatternDetectSpec};
pub use sweep::{run_dt_sweep, run_wecs_ablation, DtSweepRow, DtSweepSpec, WecsReport, WecsSpec};
pub use universality::{run_universality_fit, UniversalityReport, UniversalitySpec};

use serde::{Deserialize, Serialize};

use crate::error::{Result, WaveError};
use crate::params::Parameters;

/// A task and its parameters, tagged by task id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum TaskSpec {
    InverseMedium(InverseMediumSpec),
    DtSweep(DtSweepSpec),
    WecsAblation(WecsSpec),
    PatternDetect(PatternDetectSpec),
    UniversalityFit(UniversalitySpec),
}

impl TaskSpec {
    pub fn id(&self) -> &'static str {
        match self {
            TaskSpec::InverseMedium(_) => "inverse-medium",
            TaskSpec::DtSweep(_) => "dt-sweep",
            TaskSpec::WecsAblation(_) => "wecs-ablation",
            TaskSpec::PatternDetect(_) => "pattern-detect",
            TaskSpec::UniversalityFit(_) => "universality-fit",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::InverseMedium(s) => s.validate(),
            TaskSpec::DtSweep(s) => s.validate(),
            TaskSpec::WecsAblation(s) => s.validate(),
            TaskSpec::PatternDetect(s) => s.validate(),
            TaskSpec::UniversalityFit(s) => s.validate(),
        }
    }

    /// Replaces the seed of seeded tasks; the integrator experiments have
    /// no randomness and are returned unchanged.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            TaskSpec::InverseMedium(s) => s.seed = seed,
            TaskSpec::PatternDetect(s) => s.seed = seed,
            TaskSpec::UniversalityFit(s) => s.seed = seed,
            TaskSpec::DtSweep(_) | TaskSpec::WecsAblation(_) => {}
        }
        self
    }
}

/// One logged point of a learning curve: the loss evaluated before update
/// `step` (or after the last update for the final point) and a task metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub curve: Vec<CurvePoint>,
    /// Set when the loss became non-finite or a rollout overflowed; the
    /// parameters are left as they were before the failing evaluation.
    pub diverged: bool,
}

/// Runs `steps` Adam updates. `loss_grad(step, params)` returns the loss
/// and flat gradient for that step; `metric` is evaluated at every logged
/// point. Points are logged at multiples of `log_every` and after the last
/// update.
pub fn fit<P, L, M>(
    params: &mut P,
    adam: &mut Adam<f64>,
    steps: usize,
    log_every: usize,
    mut loss_grad: L,
    mut metric: M,
) -> Result<FitOutcome>
where
    P: Parameters<f64>,
    L: FnMut(usize, &P) -> Result<(f64, Vec<f64>)>,
    M: FnMut(&P) -> Result<f64>,
{
    let log_every = log_every.max(1);
    let mut curve = Vec::new();
    for step in 0..=steps {
        let (loss, grads) = match loss_grad(step, params) {
            Ok((loss, g)) if loss.is_finite() && g.iter().all(|x| x.is_finite()) => (loss, g),
            Ok(_) | Err(WaveError::Overflow { .. }) => {
                curve.push(CurvePoint {
                    step,
                    loss: f64::INFINITY,
                    metric: metric(params)?,
                });
                return Ok(FitOutcome {
                    curve,
                    diverged: true,
                });
            }
            Err(e) => return Err(e),
        };
        if step % log_every == 0 || step == steps {
            curve.push(CurvePoint {
                step,
                loss,
                metric: metric(params)?,
            });
        }
        if step < steps {
            let mut flat = params.to_flat();
            adam.step(&mut flat, &grads)?;
            params.load_flat(&flat)?;
        }
    }
    Ok(FitOutcome {
        curve,
        diverged: false,
    })
}
