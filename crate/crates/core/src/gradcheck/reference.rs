//! Double-double Verlet rollout with a dense Laplacian, used as the
//! finite-difference reference for rollout gradients. Independent of the
//! FFT path; its round-off (~1e-30) is far below any central-difference
//! signal.

use std::f64::consts::TAU;

use twofloat::TwoFloat;

use crate::error::{Result, WaveError};
use crate::spectral::signed_mode;

/// Row-major `n × n` spectral Laplacian (Nyquist retained) as a symmetric
/// circulant matrix.
fn dense_laplacian(n: usize) -> Vec<TwoFloat> {
    let column: Vec<f64> = (0..n)
        .map(|offset| {
            (0..n)
                .map(|m| {
                    let w = TAU * signed_mode(m, n) as f64 / n as f64;
                    let phase = TAU * ((m * offset) % n) as f64 / n as f64;
                    -w * w * phase.cos()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            out.push(TwoFloat::from(column[(j + n - k) % n]));
        }
    }
    out
}

fn matvec(a: &[TwoFloat], x: &[TwoFloat]) -> Vec<TwoFloat> {
    let n = x.len();
    (0..n)
        .map(|j| {
            a[j * n..(j + 1) * n]
                .iter()
                .zip(x)
                .fold(TwoFloat::from(0.0), |acc, (&l, &u)| acc + l * u)
        })
        .collect()
}

/// Linear terminal loss `Σ a u_k + Σ b v_k` after `steps` Verlet steps,
/// evaluated on a flat point `[u0, v0, c, γ, dt]`.
pub(crate) struct ReferenceRollout {
    n: usize,
    steps: usize,
    lap: Vec<TwoFloat>,
    u_weights: Vec<TwoFloat>,
    v_weights: Vec<TwoFloat>,
}

impl ReferenceRollout {
    pub(crate) fn new(n: usize, steps: usize, u_weights: &[f64], v_weights: &[f64]) -> Self {
        let wide = |xs: &[f64]| xs.iter().map(|&x| TwoFloat::from(x)).collect();
        Self {
            n,
            steps,
            lap: dense_laplacian(n),
            u_weights: wide(u_weights),
            v_weights: wide(v_weights),
        }
    }

    fn loss(&self, x: &[TwoFloat]) -> TwoFloat {
        let n = self.n;
        let mut u = x[..n].to_vec();
        let mut v = x[n..2 * n].to_vec();
        let c2: Vec<TwoFloat> = x[2 * n..3 * n].iter().map(|&c| c * c).collect();
        let gamma = &x[3 * n..4 * n];
        let dt = x[4 * n];
        let h = dt * 0.5;
        let kick = |v: &[TwoFloat], lap: &[TwoFloat]| -> Vec<TwoFloat> {
            (0..n).map(|j| v[j] + h * (c2[j] * lap[j] - gamma[j] * v[j])).collect()
        };
        let mut lap = matvec(&self.lap, &u);
        for _ in 0..self.steps {
            let w = kick(&v, &lap);
            u = (0..n).map(|j| u[j] + dt * w[j]).collect();
            lap = matvec(&self.lap, &u);
            v = kick(&w, &lap);
        }
        (0..n).fold(TwoFloat::from(0.0), |acc, j| {
            acc + self.u_weights[j] * u[j] + self.v_weights[j] * v[j]
        })
    }

    /// Central differences with step `eps` around `point`, rounded to f64.
    pub(crate) fn central_differences(&self, point: &[f64], eps: f64) -> Result<Vec<f64>> {
        if !(eps > 0.0) {
            return Err(WaveError::InvalidEps(eps));
        }
        if point.len() != 4 * self.n + 1 {
            return Err(WaveError::ShapeMismatch {
                what: "flat rollout point",
                expected: 4 * self.n + 1,
                found: point.len(),
            });
        }
        let mut probe: Vec<TwoFloat> = point.iter().map(|&x| TwoFloat::from(x)).collect();
        let step = TwoFloat::from(eps);
        let mut out = Vec::with_capacity(point.len());
        for i in 0..point.len() {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = self.loss(&probe);
            probe[i] = orig - step;
            let minus = self.loss(&probe);
            probe[i] = orig;
            let d = (plus - minus) / (step * 2.0);
            out.push(d.hi() + d.lo());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rollout_final, Medium, RolloutConfig, WaveState};
    use crate::spectral::{spectral_laplacian, Field};

    #[test]
    fn dense_matches_fft_laplacian() {
        for n in [5, 8, 15] {
            let f = Field::from_fn(n, |j| (j as f64 * 1.3).sin() + 0.2 * j as f64).unwrap();
            let a = spectral_laplacian(&f);
            let wide: Vec<TwoFloat> = f.iter().map(|&x| TwoFloat::from(x)).collect();
            let b = matvec(&dense_laplacian(n), &wide);
            for j in 0..n {
                assert!((a[j] - b[j].hi()).abs() < 1e-13, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn rollout_matches_fft_path() {
        let n = 12;
        let u0 = Field::from_fn(n, |j| (j as f64 * 0.7).cos()).unwrap();
        let v0 = Field::from_fn(n, |j| 0.1 * j as f64 - 0.5).unwrap();
        let c = Field::from_fn(n, |j| 0.6 + 0.05 * j as f64).unwrap();
        let g = Field::constant(n, 0.03).unwrap();
        let (dt, steps) = (0.2, 6);
        let fin = rollout_final(
            &WaveState::new(u0.clone(), v0.clone()).unwrap(),
            &Medium::new(c.clone(), g.clone()).unwrap(),
            &RolloutConfig::verlet(dt, steps).unwrap(),
        )
        .unwrap();
        let a: Vec<f64> = (0..n).map(|j| 1.0 + j as f64).collect();
        let b: Vec<f64> = (0..n).map(|j| 0.5 - j as f64).collect();
        let expect: f64 = (0..n).map(|j| a[j] * fin.u()[j] + b[j] * fin.v()[j]).sum();
        let mut x = Vec::new();
        for f in [&u0, &v0, &c, &g] {
            x.extend(f.iter().map(|&v| TwoFloat::from(v)));
        }
        x.push(TwoFloat::from(dt));
        let got = ReferenceRollout::new(n, steps, &a, &b).loss(&x);
        assert!((got.hi() - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }
}
