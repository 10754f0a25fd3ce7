//! Seeded gradient-check cases for rollouts, single layers and full models.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::reference::ReferenceRollout;
use super::{central_differences, max_relative_error, rollout_gradients, LinearFunctional, RolloutPoint};
use crate::dynamics::{verlet_stability_bound, Medium, WaveState};
use crate::error::{Result, WaveError};
use crate::model::{
    model_backward, model_forward, wave_layer_backward, wave_layer_forward, DtSharing, HiddenSequence,
    LayerInit, LayerParams, ModelConfig, ModelInput, ModelOutput, ModelParams, ReadoutKind, V0Mode,
};
use crate::params::Parameters;
use crate::spectral::Field;
use crate::training::data::seeded_rng;

/// One randomly drawn gradient-check problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckCase {
    /// Raw rollout: gradients w.r.t. `u0, v0, c, γ, dt` of a weighted
    /// quadratic terminal loss.
    Rollout { n: usize, steps: usize },
    /// One wave layer: every learnable scalar plus the input.
    Layer { n: usize, d: usize, steps: usize },
    /// Field-input model with per-position readout: every learnable scalar
    /// plus the input.
    Model { n: usize, d: usize, blocks: usize, steps: usize },
}

impl CheckCase {
    pub fn name(&self) -> &'static str {
        match self {
            CheckCase::Rollout { .. } => "rollout",
            CheckCase::Layer { .. } => "layer",
            CheckCase::Model { .. } => "model",
        }
    }

    /// Maximum relative error the case must stay within.
    pub fn tolerance(&self) -> f64 {
        match self {
            CheckCase::Rollout { .. } => 1e-6,
            _ => 1e-5,
        }
    }
}

/// 100 rollout cases cycling through `n ∈ {8, 16, 32}` × `steps ∈ {1, 4, 8}`,
/// then one layer case and one 2-block model case.
pub fn standard_suite() -> Vec<CheckCase> {
    let grid: Vec<(usize, usize)> = [8, 16, 32]
        .into_iter()
        .flat_map(|n| [1, 4, 8].into_iter().map(move |k| (n, k)))
        .collect();
    let mut cases: Vec<CheckCase> = (0..100)
        .map(|i| {
            let (n, steps) = grid[i % grid.len()];
            CheckCase::Rollout { n, steps }
        })
        .collect();
    cases.push(CheckCase::Layer { n: 16, d: 4, steps: 4 });
    cases.push(CheckCase::Model {
        n: 16,
        d: 8,
        blocks: 2,
        steps: 4,
    });
    cases
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    /// Step for rollout cases (double-double reference, so only
    /// truncation error matters).
    pub rollout_eps: f64,
    /// Step for layer and model cases (f64 reference).
    pub eps: f64,
    /// Negates every damping gradient before comparison. Used to confirm
    /// that the harness detects a broken adjoint.
    pub corrupt_gamma_sign: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            rollout_eps: 1e-6,
            eps: 1e-5,
            corrupt_gamma_sign: false,
        }
    }
}

fn uniform_field<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Result<Field<f64>> {
    Field::new((0..n).map(|_| rng.random_range(lo..hi)).collect())
}

fn normal_field<R: Rng>(rng: &mut R, n: usize) -> Result<Field<f64>> {
    Field::new((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

fn normal_hidden<R: Rng>(rng: &mut R, n: usize, d: usize) -> Result<HiddenSequence<f64>> {
    HiddenSequence::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

fn check_sizes(n: usize, d: usize) -> Result<()> {
    if n < 2 {
        return Err(WaveError::InvalidGrid { n });
    }
    if d == 0 {
        return Err(WaveError::InvalidConfig("gradient-check width must be positive".into()));
    }
    Ok(())
}

/// Draws the case's random instance from `seed` and returns the maximum
/// relative error between analytic and central-difference gradients.
pub fn run_case(case: &CheckCase, seed: u64, opts: &CheckOptions) -> Result<f64> {
    match *case {
        CheckCase::Rollout { n, steps } => check_rollout(n, steps, seed, opts),
        CheckCase::Layer { n, d, steps } => check_layer(n, d, steps, seed, opts),
        CheckCase::Model { n, d, blocks, steps } => check_model(n, d, blocks, steps, seed, opts),
    }
}

fn check_rollout(n: usize, steps: usize, seed: u64, opts: &CheckOptions) -> Result<f64> {
    check_sizes(n, 1)?;
    let mut rng = seeded_rng(seed);
    let medium = Medium::new(uniform_field(&mut rng, n, 0.5, 1.5)?, uniform_field(&mut rng, n, 0.01, 0.2)?)?;
    let dt = 0.5 * verlet_stability_bound(n, medium.c_max())?;
    let state = WaveState::new(normal_field(&mut rng, n)?, normal_field(&mut rng, n)?)?;
    let loss = LinearFunctional {
        u_weights: normal_field(&mut rng, n)?.into_vec(),
        v_weights: normal_field(&mut rng, n)?.into_vec(),
    };
    let point = RolloutPoint { state, medium, dt };
    let mut analytic = rollout_gradients(&loss, &point, steps)?;
    if opts.corrupt_gamma_sign {
        analytic.d_gamma = analytic.d_gamma.scaled(-1.0)?;
    }
    // f64 round-off in the loss (~1e-15) would swamp components below
    // ~1e-4, so the differences come from a double-double reference.
    let numeric = ReferenceRollout::new(n, steps, &loss.u_weights, &loss.v_weights)
        .central_differences(&point.to_flat(), opts.rollout_eps)?;
    Ok(max_relative_error(&analytic.to_flat(), &numeric))
}

fn corrupt_damping_head<P: Parameters<f64>>(grads: &mut P) {
    grads.visit_mut(&mut |name, _, xs| {
        if name.ends_with("w_g") || name.ends_with("b_g") {
            xs.iter_mut().for_each(|x| *x = -*x);
        }
    });
}

/// `Σ W ⊙ out`
fn contract(out: &[f64], w: &[f64]) -> f64 {
    out.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn check_layer(n: usize, d: usize, steps: usize, seed: u64, opts: &CheckOptions) -> Result<f64> {
    check_sizes(n, d)?;
    let mut rng = seeded_rng(seed);
    let init = LayerInit {
        steps,
        v0_mode: V0Mode::Linear,
        c0: 0.8,
        gamma0: 0.05,
        dt0: 0.1,
        head_scale: 0.5,
    };
    let params = LayerParams::<f64>::random(d, &init, &mut rng);
    let h = normal_hidden(&mut rng, n, d)?;
    let w = normal_hidden(&mut rng, n, d)?;

    let (_, tape) = wave_layer_forward(&h, &params)?;
    let mut grads = wave_layer_backward(&params, &tape, &w)?;
    if opts.corrupt_gamma_sign {
        corrupt_damping_head(&mut grads.params);
    }
    let mut analytic = grads.params.to_flat();
    analytic.extend_from_slice(grads.d_input.as_slice());

    let np = params.num_params();
    let mut x = params.to_flat();
    x.extend_from_slice(h.as_slice());
    let numeric = central_differences(
        |flat| {
            let mut p = params.clone();
            p.load_flat(&flat[..np])?;
            let h = HiddenSequence::new(n, d, flat[np..].to_vec())?;
            let (out, _) = wave_layer_forward(&h, &p)?;
            Ok(contract(out.as_slice(), w.as_slice()))
        },
        &x,
        opts.eps,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

fn check_model(n: usize, d: usize, blocks: usize, steps: usize, seed: u64, opts: &CheckOptions) -> Result<f64> {
    check_sizes(n, d)?;
    let mut rng = seeded_rng(seed);
    let cfg = ModelConfig {
        d,
        blocks,
        vocab: None,
        readout: ReadoutKind::PerPosition,
        out_dim: 2,
        layer: LayerInit {
            steps,
            v0_mode: V0Mode::Linear,
            c0: 0.8,
            gamma0: 0.05,
            dt0: 0.1,
            head_scale: 0.5,
        },
        dt_sharing: DtSharing::PerLayer,
    };
    let mut params = ModelParams::<f64>::init(&cfg, &mut rng)?;
    // Non-trivial norm affine maps so their gradients are exercised.
    for b in params.blocks.iter_mut() {
        for s in b.norm.scale.iter_mut() {
            *s = rng.random_range(0.5..1.5);
        }
        for s in b.norm.shift.iter_mut() {
            *s = rng.random_range(-0.2..0.2);
        }
    }
    let h = normal_hidden(&mut rng, n, d)?;
    let w = normal_hidden(&mut rng, n, cfg.out_dim)?;

    let (_, tape) = model_forward(&params, ModelInput::Field(&h))?;
    let (mut grads, d_input) = model_backward(&params, &tape, &ModelOutput::Field(w.clone()))?;
    if opts.corrupt_gamma_sign {
        corrupt_damping_head(&mut grads);
    }
    let mut analytic = grads.to_flat();
    analytic.extend_from_slice(
        d_input
            .ok_or(WaveError::InputKind("field model must return an input gradient"))?
            .as_slice(),
    );

    let np = params.num_params();
    let mut x = params.to_flat();
    x.extend_from_slice(h.as_slice());
    let numeric = central_differences(
        |flat| {
            let mut p = params.clone();
            p.load_flat(&flat[..np])?;
            let h = HiddenSequence::new(n, d, flat[np..].to_vec())?;
            let (out, _) = model_forward(&p, ModelInput::Field(&h))?;
            Ok(contract(out.as_slice(), w.as_slice()))
        },
        &x,
        opts.eps,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_shape() {
        let s = standard_suite();
        assert_eq!(s.len(), 102);
        assert_eq!(s.iter().filter(|c| c.name() == "rollout").count(), 100);
        assert_eq!(s[4], CheckCase::Rollout { n: 16, steps: 4 });
    }

    #[test]
    fn corruption_is_detected() {
        let opts = CheckOptions {
            corrupt_gamma_sign: true,
            ..CheckOptions::default()
        };
        for case in [
            CheckCase::Rollout { n: 8, steps: 4 },
            CheckCase::Layer { n: 8, d: 2, steps: 2 },
        ] {
            assert!(run_case(&case, 1, &opts).unwrap() > 1.0);
            assert!(run_case(&case, 1, &CheckOptions::default()).unwrap() < case.tolerance());
        }
    }
}
