//! Fitting a fixed target function on the grid with one wave layer and a
//! per-position linear readout.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WaveError};
use crate::model::Linear;
use crate::params::{ParamFile, Parameters};
use crate::spectral::Field;
use crate::training::adam::{Adam, AdamConfig};
use crate::training::data::seeded_rng;
use crate::training::direct::{DirectMedium, DirectTape};
use crate::training::{fit, CurvePoint, FitOutcome};

/// Field fed (as `d` identical channels) into the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LayerInput {
    /// Grid coordinate `x_j = j / n`.
    Coordinate,
    /// Seeded standard-normal samples.
    Noise,
    /// `(−1)^j`
    #[default]
    Alternating,
}

/// What the layer is asked to reproduce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// Seeded random trigonometric polynomial scaled to unit sup-norm.
    #[default]
    RandomTrig,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniversalitySpec {
    pub seed: u64,
    pub n: usize,
    /// Number of lifted copies of the input.
    pub d: usize,
    pub steps: usize,
    pub degree: usize,
    pub input: LayerInput,
    pub target: TargetKind,
    pub c_init: f64,
    pub gamma_init: f64,
    pub dt_init: f64,
    pub train_steps: usize,
    pub log_every: usize,
    pub adam: AdamConfig,
}

impl Default for UniversalitySpec {
    fn default() -> Self {
        Self {
            seed: 3,
            n: 64,
            d: 16,
            steps: 8,
            degree: 5,
            input: LayerInput::Alternating,
            target: TargetKind::RandomTrig,
            c_init: 1.0,
            gamma_init: 0.1,
            dt_init: 0.25,
            train_steps: 10_000,
            log_every: 100,
            adam: AdamConfig::with_lr(1e-2),
        }
    }
}

impl UniversalitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(WaveError::InvalidGrid { n: self.n });
        }
        if self.d == 0 || self.log_every == 0 {
            return Err(WaveError::InvalidConfig(
                "universality-fit width and log_every must be positive".into(),
            ));
        }
        if 2 * self.degree >= self.n {
            return Err(WaveError::InvalidConfig(format!(
                "trigonometric degree {} needs n > {}",
                self.degree,
                2 * self.degree
            )));
        }
        self.adam.validate()
    }

    pub fn input_field(&self) -> Result<Field<f64>> {
        match self.input {
            LayerInput::Coordinate => Field::from_fn(self.n, |j| j as f64 / self.n as f64),
            LayerInput::Noise => {
                let mut rng = seeded_rng(self.seed ^ 0x5eed);
                Field::from_fn(self.n, |_| rng.sample(StandardNormal))
            }
            LayerInput::Alternating => Field::from_fn(self.n, |j| if j % 2 == 0 { 1.0 } else { -1.0 }),
        }
    }

    pub fn target_field(&self) -> Result<Field<f64>> {
        match self.target {
            TargetKind::Zero => Field::zeros(self.n),
            TargetKind::RandomTrig => random_trig_polynomial(self.seed, self.n, self.degree),
        }
    }
}

/// `a₀ + Σ_{m=1}^{degree} aₘ cos(2πmj/n) + bₘ sin(2πmj/n)` with standard
/// normal coefficients, divided by its largest magnitude on the grid.
pub fn random_trig_polynomial(seed: u64, n: usize, degree: usize) -> Result<Field<f64>> {
    let mut rng = seeded_rng(seed);
    let coeffs: Vec<f64> = (0..2 * degree + 1).map(|_| rng.sample(StandardNormal)).collect();
    let values: Vec<f64> = (0..n)
        .map(|j| {
            (1..=degree).fold(coeffs[0], |acc, m| {
                let phase = TAU * (m * j % n) as f64 / n as f64;
                acc + coeffs[2 * m - 1] * phase.cos() + coeffs[2 * m] * phase.sin()
            })
        })
        .collect();
    let sup = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Field::new(values.into_iter().map(|x| x / sup).collect())
}

/// Wave layer over `d` copies of one input field plus a per-position
/// readout `d → 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldFitter {
    pub layer: DirectMedium<f64>,
    pub readout: Linear<f64>,
    pub d: usize,
}

impl FieldFitter {
    pub fn new(spec: &UniversalitySpec) -> Result<Self> {
        Ok(Self {
            layer: DirectMedium::uniform(spec.n, spec.c_init, spec.gamma_init, spec.dt_init, spec.steps)?,
            readout: Linear::zeros(spec.d, 1),
            d: spec.d,
        })
    }

    /// Layer output (`n × d`, as columns) and its tape.
    pub fn propagate(&self, input: &Field<f64>) -> Result<(Vec<Vec<f64>>, DirectTape<f64>)> {
        let tape = self.layer.forward(&vec![input.clone(); self.d])?;
        let cols = tape.outputs().iter().map(|u| u.as_slice().to_vec()).collect();
        Ok((cols, tape))
    }

    fn read(&self, cols: &[Vec<f64>], j: usize) -> f64 {
        let row: Vec<f64> = cols.iter().map(|c| c[j]).collect();
        self.readout.apply(&row)[0]
    }

    pub fn predict(&self, input: &Field<f64>) -> Result<Vec<f64>> {
        let (cols, _) = self.propagate(input)?;
        Ok((0..input.len()).map(|j| self.read(&cols, j)).collect())
    }

    /// MSE against `target` and its flat gradient.
    pub fn loss_and_grad(&self, input: &Field<f64>, target: &Field<f64>) -> Result<(f64, Vec<f64>)> {
        let n = input.len();
        let (cols, tape) = self.propagate(input)?;
        let mut readout_grad = Linear::zeros(self.d, 1);
        let mut d_cols = vec![vec![0.0; n]; self.d];
        let mut loss = 0.0;
        for j in 0..n {
            let row: Vec<f64> = cols.iter().map(|c| c[j]).collect();
            let r = self.readout.apply(&row)[0] - target[j];
            loss += r * r / n as f64;
            let dx = self.readout.backprop(&row, &[2.0 * r / n as f64], &mut readout_grad);
            for (dc, g) in d_cols.iter_mut().zip(dx) {
                dc[j] = g;
            }
        }
        let (layer_grad, _) = self.layer.backward(&tape, &d_cols)?;
        let grads = Self {
            layer: layer_grad,
            readout: readout_grad,
            d: self.d,
        };
        Ok((loss, grads.to_flat()))
    }

    /// Replaces the readout with the least-squares fit of `target` from the
    /// current layer output (minimum-norm over linearly dependent channels).
    pub fn fit_readout(&mut self, input: &Field<f64>, target: &Field<f64>) -> Result<()> {
        let (cols, _) = self.propagate(input)?;
        let mut features = cols;
        features.push(vec![1.0; input.len()]);
        let coef = least_squares(&features, target.as_slice());
        self.readout.weight.copy_from_slice(&coef[..self.d]);
        self.readout.bias[0] = coef[self.d];
        Ok(())
    }
}

impl FieldFitter {
    /// Parameter file with `kind = field-fitter`.
    pub fn to_param_file(&self) -> ParamFile {
        let mut file = ParamFile::default();
        file.set_meta("kind", "field-fitter");
        file.set_meta("d", self.d);
        self.layer.write_into(&mut file, "layer.");
        file.push_params("readout.", &self.readout);
        file
    }

    pub fn from_param_file(file: &ParamFile) -> Result<Self> {
        if file.meta("kind")? != "field-fitter" {
            return Err(WaveError::ParamFormat("file does not hold a field fitter".into()));
        }
        let d: usize = file.meta_parse("d")?;
        let layer = DirectMedium::read_from(file, "layer.")?;
        let mut readout = Linear::zeros(d, 1);
        file.fill_params("readout.", &mut readout)?;
        Ok(Self { layer, readout, d })
    }
}

impl Parameters<f64> for FieldFitter {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.layer.visit(&mut |name, shape, xs| f(&format!("layer.{name}"), shape, xs));
        self.readout.visit(&mut |name, shape, xs| f(&format!("readout.{name}"), shape, xs));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.layer.visit_mut(&mut |name, shape, xs| f(&format!("layer.{name}"), shape, xs));
        self.readout.visit_mut(&mut |name, shape, xs| f(&format!("readout.{name}"), shape, xs));
    }
}

/// Least squares over the column set `features` by modified Gram-Schmidt.
/// Columns that are (numerically) dependent on earlier ones get weight 0.
fn least_squares(features: &[Vec<f64>], target: &[f64]) -> Vec<f64> {
    let k = features.len();
    // Orthonormal columns q[i], each stored with its expansion over `features`.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for (i, col) in features.iter().enumerate() {
        let norm0 = dot(col, col).sqrt();
        let mut v = col.clone();
        let mut comb = vec![0.0; k];
        comb[i] = 1.0;
        for (qj, cj) in q.iter().zip(&basis) {
            let p = dot(qj, &v);
            v.iter_mut().zip(qj).for_each(|(a, b)| *a -= p * b);
            comb.iter_mut().zip(cj).for_each(|(a, b)| *a -= p * b);
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= 1e-10 * norm0.max(f64::MIN_POSITIVE) {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        comb.iter_mut().for_each(|a| *a /= norm);
        q.push(v);
        basis.push(comb);
    }
    let mut coef = vec![0.0; k];
    for (qj, cj) in q.iter().zip(&basis) {
        let p = dot(qj, target);
        coef.iter_mut().zip(cj).for_each(|(a, b)| *a += p * b);
    }
    coef
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniversalityReport {
    pub sup_error: f64,
    pub final_loss: f64,
    pub diverged: bool,
    pub curve: Vec<CurvePoint>,
    pub params: FieldFitter,
}

fn sup_error(p: &FieldFitter, input: &Field<f64>, target: &Field<f64>) -> Result<f64> {
    Ok(p.predict(input)?
        .iter()
        .zip(target.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Trains medium, time step and readout jointly by Adam on the grid MSE.
/// The metric column of the curve is the sup-norm error.
pub fn run_universality_fit(spec: &UniversalitySpec) -> Result<UniversalityReport> {
    spec.validate()?;
    let input = spec.input_field()?;
    let target = spec.target_field()?;
    let mut params = FieldFitter::new(spec)?;
    let mut adam = Adam::new(params.num_params(), spec.adam)?;
    let FitOutcome { curve, diverged } = fit(
        &mut params,
        &mut adam,
        spec.train_steps,
        spec.log_every,
        |_, p| p.loss_and_grad(&input, &target),
        |p| sup_error(p, &input, &target).or(Ok(f64::INFINITY)),
    )?;
    let sup = if diverged { f64::INFINITY } else { sup_error(&params, &input, &target)? };
    Ok(UniversalityReport {
        sup_error: sup,
        final_loss: curve.last().map_or(f64::NAN, |c| c.loss),
        diverged,
        curve,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_differences, max_relative_error};

    #[test]
    fn zero_target_is_fit_by_the_zero_readout() {
        let spec = UniversalitySpec {
            target: TargetKind::Zero,
            train_steps: 0,
            ..UniversalitySpec::default()
        };
        let r = run_universality_fit(&spec).unwrap();
        assert!(r.sup_error < 1e-8);
    }

    #[test]
    fn own_output_is_fit_by_the_readout_alone() {
        let spec = UniversalitySpec::default();
        let input = spec.input_field().unwrap();
        let mut p = FieldFitter::new(&spec).unwrap();
        let (cols, _) = p.propagate(&input).unwrap();
        let target = Field::new(cols[0].clone()).unwrap();
        p.fit_readout(&input, &target).unwrap();
        assert!(sup_error(&p, &input, &target).unwrap() < 1e-10);
    }

    #[test]
    fn param_file_round_trip() {
        let spec = UniversalitySpec::default();
        let mut p = FieldFitter::new(&spec).unwrap();
        p.readout.weight[3] = 0.1 + 0.2;
        p.layer.gamma_raw[5] = f64::MIN_POSITIVE;
        let text = p.to_param_file().to_text();
        let back = FieldFitter::from_param_file(&ParamFile::parse(&text).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn target_has_unit_sup_norm() {
        let f = random_trig_polynomial(1, 64, 5).unwrap();
        assert!((f.max_abs() - 1.0).abs() < 1e-15);
        assert_eq!(f, random_trig_polynomial(1, 64, 5).unwrap());
    }

    #[test]
    fn fitter_gradients_match_finite_differences() {
        let spec = UniversalitySpec {
            n: 16,
            d: 3,
            steps: 3,
            degree: 2,
            ..UniversalitySpec::default()
        };
        let input = spec.input_field().unwrap();
        let target = spec.target_field().unwrap();
        let mut p = FieldFitter::new(&spec).unwrap();
        let mut rng = seeded_rng(2);
        let mut flat = p.to_flat();
        flat.iter_mut().for_each(|x| *x += 0.3 * rng.sample::<f64, _>(StandardNormal));
        p.load_flat(&flat).unwrap();
        let (_, g) = p.loss_and_grad(&input, &target).unwrap();
        let numeric = central_differences(
            |x| {
                let mut q = p.clone();
                q.load_flat(x)?;
                Ok(q.loss_and_grad(&input, &target)?.0)
            },
            &flat,
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(&g, &numeric) < 1e-6);
    }
}
