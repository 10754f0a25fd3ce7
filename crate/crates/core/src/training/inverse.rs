//! Recovering a known medium from propagated wave data.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_with, Medium, RolloutConfig, WaveState};
use crate::error::{Result, WaveError};
use crate::params::Parameters;
use crate::spectral::Field;
use crate::training::adam::{Adam, AdamConfig};
use crate::training::data::{generate_wave_dataset, WavePair};
use crate::training::direct::DirectMedium;
use crate::training::loss::mse;
use crate::training::{fit, CurvePoint, FitOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseMediumSpec {
    pub seed: u64,
    pub n: usize,
    /// Verlet steps per sample (`k`).
    pub steps: usize,
    /// Ground-truth time step, also used (fixed) by the fitted model.
    pub dt: f64,
    pub num_samples: usize,
    /// Ground-truth wave speed on positions `0..n/2`.
    pub c_left: f64,
    /// Ground-truth wave speed on positions `n/2..n`.
    pub c_right: f64,
    pub gamma_true: f64,
    pub c_init: f64,
    pub gamma_init: f64,
    pub train_steps: usize,
    pub log_every: usize,
    pub adam: AdamConfig,
}

impl Default for InverseMediumSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n: 64,
            steps: 8,
            dt: 0.25,
            num_samples: 16,
            c_left: 0.5,
            c_right: 1.5,
            gamma_true: 0.0,
            c_init: 1.0,
            gamma_init: 1e-6,
            train_steps: 2000,
            log_every: 10,
            adam: AdamConfig::with_lr(1e-2),
        }
    }
}

impl InverseMediumSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(WaveError::InvalidGrid { n: self.n });
        }
        if self.steps == 0 || self.num_samples == 0 || self.log_every == 0 {
            return Err(WaveError::InvalidConfig(
                "inverse-medium steps, num_samples and log_every must be positive".into(),
            ));
        }
        if !(self.c_left > 0.0 && self.c_right > 0.0 && self.gamma_true >= 0.0) {
            return Err(WaveError::InvalidConfig(
                "inverse-medium ground truth needs c > 0 and gamma >= 0".into(),
            ));
        }
        self.adam.validate()
    }

    pub fn ground_truth(&self) -> Result<Medium<f64>> {
        let half = self.n / 2;
        Medium::new(
            Field::from_fn(self.n, |j| if j < half { self.c_left } else { self.c_right })?,
            Field::constant(self.n, self.gamma_true)?,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InverseMediumReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `‖ĉ − c‖₂ / ‖c‖₂`
    pub c_rel_err: f64,
    /// `√(Σ w (γ̂ − γ)² / Σ w)` with `w` the time-averaged ground-truth
    /// energy density per position.
    pub gamma_weighted_err: f64,
    pub diverged: bool,
    pub curve: Vec<CurvePoint>,
    pub params: DirectMedium<f64>,
    pub truth: Medium<f64>,
}

fn c_rel_err(p: &DirectMedium<f64>, truth: &Medium<f64>) -> f64 {
    let c = p.medium().map(|m| m.into_parts().0.into_vec());
    match c {
        Ok(c) => {
            let num: f64 = c.iter().zip(truth.c().iter()).map(|(a, b)| (a - b).powi(2)).sum();
            (num / truth.c().dot(truth.c())).sqrt()
        }
        Err(_) => f64::INFINITY,
    }
}

/// Per-position energy density averaged over samples and integer steps.
fn energy_weights(data: &[WavePair], truth: &Medium<f64>, cfg: &RolloutConfig<f64>) -> Result<Vec<f64>> {
    let n = truth.len();
    let mut w = vec![0.0; n];
    for pair in data {
        rollout_with(&WaveState::at_rest(pair.input.clone()), truth, cfg, |_, s| {
            let g = crate::spectral::spectral_gradient(s.u());
            for j in 0..n {
                let c = truth.c()[j];
                w[j] += 0.5 * s.v()[j].powi(2) + 0.5 * (c * g[j]).powi(2);
            }
        })?;
    }
    Ok(w)
}

fn gamma_weighted_err(p: &DirectMedium<f64>, truth: &Medium<f64>, w: &[f64]) -> f64 {
    let Ok(m) = p.medium() else {
        return f64::INFINITY;
    };
    let total: f64 = w.iter().sum();
    let num: f64 = m
        .gamma()
        .iter()
        .zip(truth.gamma().iter())
        .zip(w)
        .map(|((a, b), w)| w * (a - b).powi(2))
        .sum();
    (num / total).sqrt()
}

/// Mean over samples of the per-sample MSE of the final displacement, and
/// its gradient. `dt` is held fixed.
fn loss_and_grad(p: &DirectMedium<f64>, data: &[WavePair], inputs: &[Field<f64>]) -> Result<(f64, Vec<f64>)> {
    let tape = p.forward(inputs)?;
    let scale = 1.0 / data.len() as f64;
    let mut loss = 0.0;
    let mut cot = Vec::with_capacity(data.len());
    for (u, pair) in tape.outputs().into_iter().zip(data) {
        let (l, g) = mse(u.as_slice(), pair.target.as_slice());
        loss += l * scale;
        cot.push(g.into_iter().map(|x| x * scale).collect());
    }
    let (mut grads, _) = p.backward(&tape, &cot)?;
    grads.dt_raw = 0.0;
    Ok((loss, grads.to_flat()))
}

/// Fits a free per-position medium by full-batch Adam on MSE against
/// ground-truth rollouts.
pub fn run_inverse_medium(spec: &InverseMediumSpec) -> Result<InverseMediumReport> {
    spec.validate()?;
    let truth = spec.ground_truth()?;
    let data = generate_wave_dataset(spec.seed, spec.n, spec.num_samples, &truth, spec.dt, spec.steps)?;
    let inputs: Vec<Field<f64>> = data.iter().map(|p| p.input.clone()).collect();
    let weights = energy_weights(&data, &truth, &RolloutConfig::verlet(spec.dt, spec.steps)?)?;

    let mut params = DirectMedium::uniform(spec.n, spec.c_init, spec.gamma_init, spec.dt, spec.steps)?;
    let mut adam = Adam::new(params.num_params(), spec.adam)?;
    let FitOutcome { curve, diverged } = fit(
        &mut params,
        &mut adam,
        spec.train_steps,
        spec.log_every,
        |_, p| loss_and_grad(p, &data, &inputs),
        |p| Ok(c_rel_err(p, &truth)),
    )?;
    let initial_loss = curve.first().map_or(f64::NAN, |c| c.loss);
    let final_loss = curve.last().map_or(f64::NAN, |c| c.loss);
    Ok(InverseMediumReport {
        initial_loss,
        final_loss,
        c_rel_err: c_rel_err(&params, &truth),
        gamma_weighted_err: gamma_weighted_err(&params, &truth, &weights),
        diverged,
        curve,
        params,
        truth,
    })
}
