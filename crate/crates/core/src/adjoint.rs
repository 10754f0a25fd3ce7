//! Exact reverse-mode differentiation through an unrolled Verlet rollout.
//!
//! The forward pass records every integer-step state; Laplacians and
//! half-step velocities are recomputed in the backward sweep, bitwise equal
//! to their forward values. Each step of
//! the sweep is the transpose of
//!
//! ```text
//! a  = c²⊙∇²u_t − γ⊙v_t          w  = v_t + ½dt·a
//! u' = u_t + dt·w                 b  = c²⊙∇²u' − γ⊙w
//! v' = w + ½dt·b
//! ```
//!
//! with `∇²` symmetric, so its transpose is another spectral Laplacian.

use crate::dynamics::{check_lengths, finite_state, Integrator, Medium, RolloutConfig, Stepper, WaveState};
use crate::error::{Result, WaveError};
use crate::scalar::{dot, Real};
use crate::spectral::{shared_grid, Field, SpectralGrid};

/// Everything the backward sweep needs from a forward rollout.
#[derive(Clone, Debug)]
pub struct RolloutTape<T> {
    states: Vec<WaveState<T>>,
    medium: Medium<T>,
    cfg: RolloutConfig<T>,
}

impl<T: Real> RolloutTape<T> {
    pub fn states(&self) -> &[WaveState<T>] {
        &self.states
    }

    pub fn medium(&self) -> &Medium<T> {
        &self.medium
    }

    pub fn config(&self) -> &RolloutConfig<T> {
        &self.cfg
    }

    pub fn final_state(&self) -> &WaveState<T> {
        self.states.last().expect("tape holds at least the initial state")
    }

    /// Number of field samples held: `2(k+1)·n`.
    pub fn stored_scalars(&self) -> usize {
        2 * self.states.len() * self.medium.len()
    }

    /// Largest absolute deviation between the recorded states and a replay
    /// of each step from its recorded predecessor.
    pub fn replay_error(&self) -> Result<T> {
        let grid = shared_grid::<T>(self.medium.len())?;
        let stepper = Stepper::new(&grid, &self.medium, self.cfg.dt());
        let mut worst = T::zero();
        let mut w = vec![T::zero(); self.medium.len()];
        for pair in self.states.windows(2) {
            let mut lap = grid.laplacian_vec(pair[0].u.as_slice());
            let (u, v) = stepper.verlet(pair[0].u.as_slice(), pair[0].v.as_slice(), &mut lap, &mut w);
            for (a, b) in u.iter().zip(pair[1].u.iter()) {
                worst = worst.max((*a - *b).abs());
            }
            for (a, b) in v.iter().zip(pair[1].v.iter()) {
                worst = worst.max((*a - *b).abs());
            }
        }
        Ok(worst)
    }
}

/// Gradients of a scalar loss with respect to the rollout inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGradients<T> {
    pub d_u0: Field<T>,
    pub d_v0: Field<T>,
    pub d_c: Field<T>,
    pub d_gamma: Field<T>,
    pub d_dt: T,
}

impl<T: Real> RolloutGradients<T> {
    /// Flat layout `[d_u0, d_v0, d_c, d_gamma, d_dt]`, matching
    /// [`crate::gradcheck::RolloutPoint::to_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(4 * self.d_u0.len() + 1);
        out.extend_from_slice(self.d_u0.as_slice());
        out.extend_from_slice(self.d_v0.as_slice());
        out.extend_from_slice(self.d_c.as_slice());
        out.extend_from_slice(self.d_gamma.as_slice());
        out.push(self.d_dt);
        out
    }
}

/// Which operator the backward sweep applies where the transpose of the
/// Laplacian is needed. Both give the same gradients up to round-off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LaplacianAdjoint {
    /// Reversed transform order: the literal transpose.
    Transpose,
    /// The forward Laplacian itself (valid because it is symmetric).
    #[default]
    Forward,
}

pub(crate) fn record_on_grid<T: Real>(
    grid: &SpectralGrid<T>,
    s0: &WaveState<T>,
    m: &Medium<T>,
    cfg: &RolloutConfig<T>,
) -> Result<RolloutTape<T>> {
    if cfg.integrator() != Integrator::Verlet {
        return Err(WaveError::UnsupportedIntegrator(cfg.integrator().name()));
    }
    check_lengths(s0, m)?;
    grid.check_len(s0.len())?;
    let stepper = Stepper::new(grid, m, cfg.dt());
    let mut states = Vec::with_capacity(cfg.steps() + 1);
    states.push(s0.clone());
    let mut lap = grid.laplacian_vec(s0.u.as_slice());
    let mut w = vec![T::zero(); s0.len()];
    for i in 1..=cfg.steps() {
        let prev = &states[i - 1];
        let (u, v) = stepper.verlet(prev.u.as_slice(), prev.v.as_slice(), &mut lap, &mut w);
        states.push(finite_state(u, v, i)?);
    }
    Ok(RolloutTape {
        states,
        medium: m.clone(),
        cfg: *cfg,
    })
}

/// Runs a Verlet rollout and records the tape for [`backward`].
pub fn record_rollout<T: Real>(
    s0: &WaveState<T>,
    m: &Medium<T>,
    cfg: &RolloutConfig<T>,
) -> Result<(WaveState<T>, RolloutTape<T>)> {
    let grid = shared_grid::<T>(s0.len())?;
    let tape = record_on_grid(&grid, s0, m, cfg)?;
    Ok((tape.final_state().clone(), tape))
}

/// Reverse-mode sweep: contracts the Jacobian of `(u_k, v_k)` with the
/// cotangents `(d_u_final, d_v_final)`.
pub fn backward<T: Real>(
    tape: &RolloutTape<T>,
    d_u_final: &Field<T>,
    d_v_final: &Field<T>,
) -> Result<RolloutGradients<T>> {
    backward_with(tape, d_u_final, d_v_final, LaplacianAdjoint::Forward)
}

pub fn backward_with<T: Real>(
    tape: &RolloutTape<T>,
    d_u_final: &Field<T>,
    d_v_final: &Field<T>,
    adjoint: LaplacianAdjoint,
) -> Result<RolloutGradients<T>> {
    let grid = shared_grid::<T>(tape.medium.len())?;
    backward_on_grid(&grid, tape, d_u_final.as_slice(), d_v_final.as_slice(), adjoint)
}

pub(crate) fn backward_on_grid<T: Real>(
    grid: &SpectralGrid<T>,
    tape: &RolloutTape<T>,
    d_u_final: &[T],
    d_v_final: &[T],
    adjoint: LaplacianAdjoint,
) -> Result<RolloutGradients<T>> {
    let n = tape.medium.len();
    grid.check_len(n)?;
    for (what, len) in [("u cotangent", d_u_final.len()), ("v cotangent", d_v_final.len())] {
        if len != n {
            return Err(WaveError::ShapeMismatch {
                what,
                expected: n,
                found: len,
            });
        }
    }
    let apply_adjoint = |input: &[T], out: &mut [T]| match adjoint {
        LaplacianAdjoint::Transpose => grid.laplacian_transpose_into(input, out),
        LaplacianAdjoint::Forward => grid.laplacian_into(input, out),
    };

    let dt = tape.cfg.dt();
    let h = T::half() * dt;
    let two = T::two();
    let c = tape.medium.c().as_slice();
    let gamma = tape.medium.gamma().as_slice();
    let c2: Vec<T> = c.iter().map(|&x| x * x).collect();

    let mut bu = d_u_final.to_vec();
    let mut bv = d_v_final.to_vec();
    let mut d_c = vec![T::zero(); n];
    let mut d_gamma = vec![T::zero(); n];
    let mut d_dt = T::zero();
    // c²⊙(adjoint of a Laplacian argument) not yet pushed through ∇²ᵀ;
    // flushed once per step since ∇²ᵀ is linear.
    let mut pending = vec![T::zero(); n];
    let mut lap_t = vec![T::zero(); n];
    let mut scratch = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut bw = vec![T::zero(); n];

    let steps = tape.states.len() - 1;
    let mut lap_next = if steps > 0 {
        grid.laplacian_vec(tape.states[steps].u.as_slice())
    } else {
        Vec::new()
    };

    for t in (0..steps).rev() {
        let u_t = tape.states[t].u.as_slice();
        let v_t = tape.states[t].v.as_slice();
        grid.laplacian_into(u_t, &mut lap_t);
        for j in 0..n {
            w[j] = v_t[j] + h * (c2[j] * lap_t[j] - gamma[j] * v_t[j]);
        }

        // v' = w + h·b with b = c²⊙∇²u' − γ⊙w
        bw.copy_from_slice(&bv);
        let mut dt_acc = T::zero();
        for j in 0..n {
            let b = c2[j] * lap_next[j] - gamma[j] * w[j];
            dt_acc = dt_acc + bv[j] * b;
            let bb = h * bv[j];
            pending[j] = pending[j] + c2[j] * bb;
            d_c[j] = d_c[j] + two * c[j] * lap_next[j] * bb;
            d_gamma[j] = d_gamma[j] - w[j] * bb;
            bw[j] = bw[j] - gamma[j] * bb;
        }
        d_dt = d_dt + T::half() * dt_acc;

        // ū' is complete once the pending Laplacian adjoint lands.
        apply_adjoint(&pending, &mut scratch);
        for j in 0..n {
            bu[j] = bu[j] + scratch[j];
        }

        // u' = u_t + dt·w
        d_dt = d_dt + dot(&bu, &w);
        for j in 0..n {
            bw[j] = bw[j] + dt * bu[j];
        }

        // w = v_t + h·a with a = c²⊙∇²u_t − γ⊙v_t
        let mut dt_acc = T::zero();
        for j in 0..n {
            let a = c2[j] * lap_t[j] - gamma[j] * v_t[j];
            dt_acc = dt_acc + bw[j] * a;
            let ba = h * bw[j];
            pending[j] = c2[j] * ba;
            d_c[j] = d_c[j] + two * c[j] * lap_t[j] * ba;
            d_gamma[j] = d_gamma[j] - v_t[j] * ba;
            bv[j] = bw[j] - gamma[j] * ba;
        }
        d_dt = d_dt + T::half() * dt_acc;

        std::mem::swap(&mut lap_next, &mut lap_t);
    }

    if steps > 0 {
        apply_adjoint(&pending, &mut scratch);
        for j in 0..n {
            bu[j] = bu[j] + scratch[j];
        }
    }

    Ok(RolloutGradients {
        d_u0: Field::new(bu)?,
        d_v0: Field::new(bv)?,
        d_c: Field::new(d_c)?,
        d_gamma: Field::new(d_gamma)?,
        d_dt,
    })
}
