//! A wave layer whose medium is a free per-position parameter instead of a
//! function of the input.

use crate::adjoint::{backward_on_grid, record_on_grid, LaplacianAdjoint, RolloutTape};
use crate::dynamics::{Medium, RolloutConfig, WaveState};
use crate::error::{Result, WaveError};
use crate::model::{inverse_softplus, sigmoid, softplus};
use crate::params::{ParamFile, Parameters};
use crate::scalar::Real;
use crate::spectral::{shared_grid, Field};

/// `c = softplus(c_raw)`, `γ = softplus(gamma_raw)`, `dt = softplus(dt_raw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectMedium<T> {
    pub c_raw: Vec<T>,
    pub gamma_raw: Vec<T>,
    pub dt_raw: T,
    pub steps: usize,
}

impl<T: Real> DirectMedium<T> {
    pub fn uniform(n: usize, c: T, gamma: T, dt: T, steps: usize) -> Result<Self> {
        if n < 2 {
            return Err(WaveError::InvalidGrid { n });
        }
        for (what, x) in [("wave speed", c), ("damping", gamma), ("time step", dt)] {
            if !(x > T::zero() && x.is_finite()) {
                return Err(WaveError::InvalidConfig(format!(
                    "initial {what} must be positive, got {x}"
                )));
            }
        }
        Ok(Self {
            c_raw: vec![inverse_softplus(c); n],
            gamma_raw: vec![inverse_softplus(gamma); n],
            dt_raw: inverse_softplus(dt),
            steps,
        })
    }

    pub fn len(&self) -> usize {
        self.c_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_raw.is_empty()
    }

    pub fn dt(&self) -> T {
        softplus(self.dt_raw)
    }

    pub fn medium(&self) -> Result<Medium<T>> {
        if self.gamma_raw.len() != self.c_raw.len() {
            return Err(WaveError::ShapeMismatch {
                what: "damping parameters",
                expected: self.c_raw.len(),
                found: self.gamma_raw.len(),
            });
        }
        Medium::new(
            Field::new(self.c_raw.iter().map(|&z| softplus(z)).collect())?,
            Field::new(self.gamma_raw.iter().map(|&z| softplus(z)).collect())?,
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            c_raw: vec![T::zero(); self.len()],
            gamma_raw: vec![T::zero(); self.len()],
            dt_raw: T::zero(),
            steps: self.steps,
        }
    }

    /// Propagates each initial displacement (at rest) and records tapes.
    pub fn forward(&self, inputs: &[Field<T>]) -> Result<DirectTape<T>> {
        let medium = self.medium()?;
        let grid = shared_grid::<T>(self.len())?;
        let cfg = RolloutConfig::verlet(self.dt(), self.steps)?;
        let tapes = inputs
            .iter()
            .map(|u0| {
                if u0.len() != self.len() {
                    return Err(WaveError::ShapeMismatch {
                        what: "initial displacement",
                        expected: self.len(),
                        found: u0.len(),
                    });
                }
                record_on_grid(&grid, &WaveState::at_rest(u0.clone()), &medium, &cfg)
            })
            .collect::<Result<_>>()?;
        Ok(DirectTape {
            params: self.clone(),
            tapes,
        })
    }

    /// Parameter gradients and per-input displacement gradients for the
    /// final-displacement cotangents `d_outputs`.
    pub fn backward(&self, tape: &DirectTape<T>, d_outputs: &[Vec<T>]) -> Result<(Self, Vec<Vec<T>>)> {
        if tape.params != *self {
            return Err(WaveError::StaleTape);
        }
        if d_outputs.len() != tape.tapes.len() {
            return Err(WaveError::ShapeMismatch {
                what: "output cotangents",
                expected: tape.tapes.len(),
                found: d_outputs.len(),
            });
        }
        let n = self.len();
        let grid = shared_grid::<T>(n)?;
        let zeros = vec![T::zero(); n];
        let mut grads = self.zeros_like();
        let mut d_dt = T::zero();
        let mut d_inputs = Vec::with_capacity(d_outputs.len());
        for (t, du) in tape.tapes.iter().zip(d_outputs) {
            if du.len() != n {
                return Err(WaveError::ShapeMismatch {
                    what: "output cotangent",
                    expected: n,
                    found: du.len(),
                });
            }
            let g = backward_on_grid(&grid, t, du, &zeros, LaplacianAdjoint::Forward)?;
            for j in 0..n {
                grads.c_raw[j] = grads.c_raw[j] + g.d_c[j];
                grads.gamma_raw[j] = grads.gamma_raw[j] + g.d_gamma[j];
            }
            d_dt = d_dt + g.d_dt;
            d_inputs.push(g.d_u0.into_vec());
        }
        for j in 0..n {
            grads.c_raw[j] = grads.c_raw[j] * sigmoid(self.c_raw[j]);
            grads.gamma_raw[j] = grads.gamma_raw[j] * sigmoid(self.gamma_raw[j]);
        }
        grads.dt_raw = d_dt * sigmoid(self.dt_raw);
        Ok((grads, d_inputs))
    }
}

impl<T: Real> Parameters<T> for DirectMedium<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        f("c_raw", &[self.c_raw.len()], &self.c_raw);
        f("gamma_raw", &[self.gamma_raw.len()], &self.gamma_raw);
        f("dt_raw", &[], std::slice::from_ref(&self.dt_raw));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        let n = self.c_raw.len();
        f("c_raw", &[n], &mut self.c_raw);
        f("gamma_raw", &[n], &mut self.gamma_raw);
        f("dt_raw", &[], std::slice::from_mut(&mut self.dt_raw));
    }
}

impl DirectMedium<f64> {
    /// Parameter file with `kind = direct-medium`.
    pub fn to_param_file(&self) -> ParamFile {
        let mut file = ParamFile::default();
        file.set_meta("kind", "direct-medium");
        self.write_into(&mut file, "");
        file
    }

    pub fn from_param_file(file: &ParamFile) -> Result<Self> {
        if file.meta("kind")? != "direct-medium" {
            return Err(WaveError::ParamFormat("file does not hold a direct medium".into()));
        }
        Self::read_from(file, "")
    }

    pub(crate) fn write_into(&self, file: &mut ParamFile, prefix: &str) {
        file.set_meta(&format!("{prefix}n"), self.len());
        file.set_meta(&format!("{prefix}steps"), self.steps);
        file.push_params(prefix, self);
    }

    pub(crate) fn read_from(file: &ParamFile, prefix: &str) -> Result<Self> {
        let n: usize = file.meta_parse(&format!("{prefix}n"))?;
        let mut p = Self {
            c_raw: vec![0.0; n],
            gamma_raw: vec![0.0; n],
            dt_raw: 0.0,
            steps: file.meta_parse(&format!("{prefix}steps"))?,
        };
        file.fill_params(prefix, &mut p)?;
        p.medium()?;
        Ok(p)
    }
}

/// Recorded forward pass of a [`DirectMedium`] layer.
#[derive(Clone, Debug)]
pub struct DirectTape<T> {
    params: DirectMedium<T>,
    tapes: Vec<RolloutTape<T>>,
}

impl<T: Real> DirectTape<T> {
    pub fn rollouts(&self) -> &[RolloutTape<T>] {
        &self.tapes
    }

    /// Final displacement of every propagated input.
    pub fn outputs(&self) -> Vec<&Field<T>> {
        self.tapes.iter().map(|t| t.final_state().u()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_differences, max_relative_error};
    use crate::training::data::{band_limited_field, seeded_rng};

    fn loss(p: &DirectMedium<f64>, inputs: &[Field<f64>], w: &[Vec<f64>]) -> f64 {
        let tape = p.forward(inputs).unwrap();
        tape.outputs()
            .iter()
            .zip(w)
            .map(|(u, w)| u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let n = 16;
        let mut rng = seeded_rng(5);
        let mut p = DirectMedium::uniform(n, 0.8, 0.05, 0.2, 5).unwrap();
        for (j, (c, g)) in p.c_raw.iter_mut().zip(p.gamma_raw.iter_mut()).enumerate() {
            *c += 0.3 * (j as f64).sin();
            *g += 0.5 * (j as f64).cos();
        }
        let inputs: Vec<Field<f64>> = (0..2)
            .map(|_| band_limited_field(&mut rng, n, 2.0).unwrap())
            .collect();
        let w: Vec<Vec<f64>> = (0..2)
            .map(|k| (0..n).map(|j| ((j + 3 * k) as f64).cos()).collect())
            .collect();
        let tape = p.forward(&inputs).unwrap();
        let (grads, _) = p.backward(&tape, &w).unwrap();
        let numeric = central_differences(
            |x| {
                let mut q = p.clone();
                q.load_flat(x)?;
                Ok(loss(&q, &inputs, &w))
            },
            &p.to_flat(),
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&grads.to_flat(), &numeric);
        assert!(err < 1e-6, "{err:e}");
    }

    #[test]
    fn param_file_round_trip() {
        let mut p = DirectMedium::<f64>::uniform(6, 0.7, 0.01, 0.1, 3).unwrap();
        p.c_raw[2] = -1.0 / 3.0;
        let text = p.to_param_file().to_text();
        let back = DirectMedium::from_param_file(&ParamFile::parse(&text).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn stale_tape_rejected() {
        let p = DirectMedium::<f64>::uniform(8, 1.0, 0.1, 0.1, 2).unwrap();
        let tape = p.forward(&[Field::zeros(8).unwrap()]).unwrap();
        let mut q = p.clone();
        q.dt_raw += 1.0;
        assert_eq!(q.backward(&tape, &[vec![0.0; 8]]).unwrap_err(), WaveError::StaleTape);
    }
}
