//! Motif detection: is a fixed ordered 3-token pattern present anywhere in
//! a random token string? Solving it requires mixing information across
//! positions before pooling.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WaveError};
use crate::model::{
    model_backward, model_forward, DtSharing, LayerInit, ModelConfig, ModelInput, ModelOutput,
    ModelParams, ReadoutKind, V0Mode,
};
use crate::params::Parameters;
use crate::training::adam::{Adam, AdamConfig};
use crate::training::data::{generate_motif_dataset, seeded_rng, MotifExample};
use crate::training::loss::{argmax, softmax_cross_entropy};
use crate::training::{fit, CurvePoint, FitOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternDetectSpec {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub blocks: usize,
    pub vocab: usize,
    pub motif: [usize; 3],
    pub train_size: usize,
    pub test_size: usize,
    pub batch_size: usize,
    pub train_steps: usize,
    pub log_every: usize,
    pub layer: LayerInit,
    pub adam: AdamConfig,
    /// Also train the `steps = 0` control under the same budget.
    pub control: bool,
}

impl Default for PatternDetectSpec {
    fn default() -> Self {
        Self {
            seed: 11,
            n: 128,
            d: 32,
            blocks: 2,
            vocab: 16,
            motif: [1, 2, 3],
            train_size: 8192,
            test_size: 1000,
            batch_size: 16,
            train_steps: 5000,
            log_every: 100,
            layer: LayerInit {
                steps: 8,
                v0_mode: V0Mode::Linear,
                dt0: 0.25,
                head_scale: 1.0,
                ..LayerInit::default()
            },
            adam: AdamConfig::with_lr(3e-3),
            control: true,
        }
    }
}

impl PatternDetectSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.d, self.train_size, self.test_size, self.batch_size, self.log_every]
            .contains(&0)
        {
            return Err(WaveError::InvalidConfig(
                "pattern-detect sizes must be positive".into(),
            ));
        }
        self.adam.validate()
    }

    pub fn model_config(&self, steps: usize) -> ModelConfig {
        ModelConfig {
            d: self.d,
            blocks: self.blocks,
            vocab: Some(self.vocab),
            readout: ReadoutKind::Pooled,
            out_dim: 2,
            layer: LayerInit {
                steps,
                ..self.layer
            },
            dt_sharing: DtSharing::PerLayer,
        }
    }

    /// Training and held-out examples (independent seeds).
    pub fn datasets(&self) -> Result<(Vec<MotifExample>, Vec<MotifExample>)> {
        let train = generate_motif_dataset(self.seed, self.train_size, self.n, self.vocab, &self.motif)?;
        let test = generate_motif_dataset(
            self.seed ^ 0x9e37_79b9_7f4a_7c15,
            self.test_size,
            self.n,
            self.vocab,
            &self.motif,
        )?;
        Ok((train, test))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierRun {
    pub test_accuracy: f64,
    pub diverged: bool,
    /// Minibatch loss; metric is minibatch accuracy.
    pub curve: Vec<CurvePoint>,
    pub params: ModelParams<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternDetectReport {
    pub wave: ClassifierRun,
    pub control: Option<ClassifierRun>,
}

pub fn classify(params: &ModelParams<f64>, tokens: &[usize]) -> Result<usize> {
    match model_forward(params, ModelInput::Tokens(tokens))?.0 {
        ModelOutput::Logits(l) => Ok(argmax(&l)),
        ModelOutput::Field(_) => Err(WaveError::InputKind("classifier needs a pooled readout")),
    }
}

pub fn accuracy(params: &ModelParams<f64>, data: &[MotifExample]) -> Result<f64> {
    let mut correct = 0usize;
    for ex in data {
        correct += usize::from(classify(params, &ex.tokens)? == ex.label);
    }
    Ok(correct as f64 / data.len() as f64)
}

fn batch_loss(
    params: &ModelParams<f64>,
    batch: &[MotifExample],
    batch_acc: &mut f64,
) -> Result<(f64, Vec<f64>)> {
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; params.num_params()];
    let mut correct = 0usize;
    for ex in batch {
        let (out, tape) = model_forward(params, ModelInput::Tokens(&ex.tokens))?;
        let ModelOutput::Logits(logits) = out else {
            return Err(WaveError::InputKind("classifier needs a pooled readout"));
        };
        correct += usize::from(argmax(&logits) == ex.label);
        let (l, g) = softmax_cross_entropy(&logits, ex.label);
        loss += l * scale;
        let d_out = ModelOutput::Logits(g.into_iter().map(|x| x * scale).collect());
        let (pg, _) = model_backward(params, &tape, &d_out)?;
        for (a, b) in grads.iter_mut().zip(pg.to_flat()) {
            *a += b;
        }
    }
    *batch_acc = correct as f64 / batch.len() as f64;
    Ok((loss, grads))
}

fn train_classifier(
    spec: &PatternDetectSpec,
    steps: usize,
    train: &[MotifExample],
    test: &[MotifExample],
) -> Result<ClassifierRun> {
    let mut params = ModelParams::init(&spec.model_config(steps), &mut seeded_rng(spec.seed.wrapping_add(1)))?;
    let mut adam = Adam::new(params.num_params(), spec.adam)?;
    let bs = spec.batch_size.min(train.len());
    let batches = train.len() / bs;
    let batch_acc = Cell::new(f64::NAN);
    let FitOutcome { curve, diverged } = fit(
        &mut params,
        &mut adam,
        spec.train_steps,
        spec.log_every,
        |step, p| {
            let b = step % batches;
            let mut acc = f64::NAN;
            let r = batch_loss(p, &train[b * bs..(b + 1) * bs], &mut acc);
            batch_acc.set(acc);
            r
        },
        |_| Ok(batch_acc.get()),
    )?;
    let test_accuracy = if diverged { f64::NAN } else { accuracy(&params, test)? };
    Ok(ClassifierRun {
        test_accuracy,
        diverged,
        curve,
        params,
    })
}

/// Trains the wave model and (optionally) the `steps = 0` control with the
/// same data, initialization seed, optimizer and step budget.
pub fn run_pattern_detect(spec: &PatternDetectSpec) -> Result<PatternDetectReport> {
    spec.validate()?;
    let (train, test) = spec.datasets()?;
    let wave = train_classifier(spec, spec.layer.steps, &train, &test)?;
    let control = if spec.control {
        Some(train_classifier(spec, 0, &train, &test)?)
    } else {
        None
    };
    Ok(PatternDetectReport { wave, control })
}
