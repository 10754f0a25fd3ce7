//! Central finite-difference verification of analytic gradients.

use crate::adjoint::{backward, record_rollout, RolloutGradients};
use crate::dynamics::{rollout_final, Medium, RolloutConfig, WaveState};
use crate::error::{Result, WaveError};
use crate::scalar::Real;
use crate::spectral::Field;

mod reference;
mod suite;
pub use suite::{run_case, standard_suite, CheckCase, CheckOptions};

/// `|a − b| / max(|a|, |b|, 1e−8)`
pub fn relative_error<T: Real>(a: T, b: T) -> T {
    let denom = a.abs().max(b.abs()).max(T::lit(1e-8));
    (a - b).abs() / denom
}

pub fn max_relative_error<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "gradient lengths");
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max(relative_error(x, y)))
}

/// Central differences `(f(x + eε_i) − f(x − eε_i)) / 2ε` for every
/// coordinate of `x`.
pub fn central_differences<T: Real, F>(mut f: F, x: &[T], eps: T) -> Result<Vec<T>>
where
    F: FnMut(&[T]) -> Result<T>,
{
    if !(eps > T::zero()) {
        return Err(WaveError::InvalidEps(eps.as_f64()));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe)?;
        probe[i] = orig - eps;
        let minus = f(&probe)?;
        probe[i] = orig;
        out.push((plus - minus) / (T::two() * eps));
    }
    Ok(out)
}

/// Inputs of a rollout that gradients are taken with respect to.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutPoint<T> {
    pub state: WaveState<T>,
    pub medium: Medium<T>,
    pub dt: T,
}

impl<T: Real> RolloutPoint<T> {
    /// `[u0, v0, c, γ, dt]`
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(4 * self.state.len() + 1);
        out.extend_from_slice(self.state.u().as_slice());
        out.extend_from_slice(self.state.v().as_slice());
        out.extend_from_slice(self.medium.c().as_slice());
        out.extend_from_slice(self.medium.gamma().as_slice());
        out.push(self.dt);
        out
    }

    /// Inverse of [`Self::to_flat`]. The medium is rebuilt without sign
    /// checks so that perturbations may cross zero.
    pub fn from_flat(n: usize, flat: &[T]) -> Result<Self> {
        if flat.len() != 4 * n + 1 {
            return Err(WaveError::ShapeMismatch {
                what: "flat rollout point",
                expected: 4 * n + 1,
                found: flat.len(),
            });
        }
        let part = |k: usize| Field::new(flat[k * n..(k + 1) * n].to_vec());
        Ok(Self {
            state: WaveState::new(part(0)?, part(1)?)?,
            medium: Medium::unconstrained(part(2)?, part(3)?)?,
            dt: flat[4 * n],
        })
    }
}

/// Compares `analytic` against central differences of `loss` around
/// `point`, perturbing every `u0_j, v0_j, c_j, γ_j` and `dt`. Returns the
/// maximum relative error.
pub fn finite_difference_check<T: Real, F>(
    loss: F,
    point: &RolloutPoint<T>,
    analytic: &RolloutGradients<T>,
    eps: T,
) -> Result<T>
where
    F: Fn(&RolloutPoint<T>) -> Result<T>,
{
    let n = point.state.len();
    let numeric = central_differences(
        |flat| loss(&RolloutPoint::from_flat(n, flat)?),
        &point.to_flat(),
        eps,
    )?;
    Ok(max_relative_error(&analytic.to_flat(), &numeric))
}

/// Scalar loss on the final state of a rollout, with its cotangent.
pub trait TerminalLoss<T: Real> {
    fn value(&self, state: &WaveState<T>) -> T;
    fn cotangent(&self, state: &WaveState<T>) -> Result<(Field<T>, Field<T>)>;
}

/// `½ Σ a_j (u_j − t_j)² + ½ Σ b_j v_j²`
#[derive(Clone, Debug)]
pub struct WeightedQuadratic<T> {
    pub u_weights: Vec<T>,
    pub u_target: Vec<T>,
    pub v_weights: Vec<T>,
}

impl<T: Real> WeightedQuadratic<T> {
    /// `½‖u‖²`
    pub fn half_norm_u(n: usize) -> Self {
        Self {
            u_weights: vec![T::one(); n],
            u_target: vec![T::zero(); n],
            v_weights: vec![T::zero(); n],
        }
    }
}

impl<T: Real> TerminalLoss<T> for WeightedQuadratic<T> {
    fn value(&self, s: &WaveState<T>) -> T {
        let half = T::half();
        let mut acc = T::zero();
        for j in 0..s.len() {
            let du = s.u()[j] - self.u_target[j];
            acc = acc + half * self.u_weights[j] * du * du;
            acc = acc + half * self.v_weights[j] * s.v()[j] * s.v()[j];
        }
        acc
    }

    fn cotangent(&self, s: &WaveState<T>) -> Result<(Field<T>, Field<T>)> {
        let du = (0..s.len())
            .map(|j| self.u_weights[j] * (s.u()[j] - self.u_target[j]))
            .collect();
        let dv = (0..s.len()).map(|j| self.v_weights[j] * s.v()[j]).collect();
        Ok((Field::new(du)?, Field::new(dv)?))
    }
}

/// `Σ a_j u_j + Σ b_j v_j`
#[derive(Clone, Debug)]
pub struct LinearFunctional<T> {
    pub u_weights: Vec<T>,
    pub v_weights: Vec<T>,
}

impl<T: Real> TerminalLoss<T> for LinearFunctional<T> {
    fn value(&self, s: &WaveState<T>) -> T {
        let mut acc = T::zero();
        for j in 0..s.len() {
            acc = acc + self.u_weights[j] * s.u()[j] + self.v_weights[j] * s.v()[j];
        }
        acc
    }

    fn cotangent(&self, _: &WaveState<T>) -> Result<(Field<T>, Field<T>)> {
        Ok((Field::new(self.u_weights.clone())?, Field::new(self.v_weights.clone())?))
    }
}

pub fn rollout_loss<T: Real, L: TerminalLoss<T>>(
    loss: &L,
    point: &RolloutPoint<T>,
    steps: usize,
) -> Result<T> {
    let cfg = RolloutConfig::verlet(point.dt, steps)?;
    Ok(loss.value(&rollout_final(&point.state, &point.medium, &cfg)?))
}

pub fn rollout_gradients<T: Real, L: TerminalLoss<T>>(
    loss: &L,
    point: &RolloutPoint<T>,
    steps: usize,
) -> Result<RolloutGradients<T>> {
    let cfg = RolloutConfig::verlet(point.dt, steps)?;
    let (fin, tape) = record_rollout(&point.state, &point.medium, &cfg)?;
    let (du, dv) = loss.cotangent(&fin)?;
    backward(&tape, &du, &dv)
}

/// Adjoint gradients of `loss` after `steps` Verlet steps, checked against
/// central differences.
pub fn check_rollout_gradients<T: Real, L: TerminalLoss<T>>(
    loss: &L,
    point: &RolloutPoint<T>,
    steps: usize,
    eps: T,
) -> Result<T> {
    let analytic = rollout_gradients(loss, point, steps)?;
    finite_difference_check(|p| rollout_loss(loss, p, steps), point, &analytic, eps)
}
