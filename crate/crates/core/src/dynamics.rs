//! Damped wave dynamics on the periodic grid.
//!
//! `∂tt u = c²(x) ∂xx u − γ(x) ∂t u`, integrated with velocity Verlet
//! (half kick, drift, half kick) or, for the ablation, explicit Euler.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WaveError};
use crate::scalar::{all_finite, Real};
use crate::spectral::{shared_grid, Field, SpectralGrid};

/// Wave speed `c` and damping `γ` per grid position.
///
/// `Medium::new` enforces `c >= 0` and `γ >= 0` (media produced by the
/// layer are strictly positive through softplus). `Medium::unconstrained`
/// skips the sign checks and exists for sensitivity analysis, where central
/// differences probe both sides of zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Medium<T> {
    c: Field<T>,
    gamma: Field<T>,
}

impl<T: Real> Medium<T> {
    pub fn new(c: Field<T>, gamma: Field<T>) -> Result<Self> {
        if let Some(j) = c.iter().position(|&x| x < T::zero()) {
            return Err(WaveError::InvalidMedium(format!(
                "negative wave speed at position {j}"
            )));
        }
        if let Some(j) = gamma.iter().position(|&x| x < T::zero()) {
            return Err(WaveError::InvalidMedium(format!(
                "negative damping at position {j}"
            )));
        }
        Self::unconstrained(c, gamma)
    }

    pub fn unconstrained(c: Field<T>, gamma: Field<T>) -> Result<Self> {
        if c.len() != gamma.len() {
            return Err(WaveError::ShapeMismatch {
                what: "medium damping",
                expected: c.len(),
                found: gamma.len(),
            });
        }
        Ok(Self { c, gamma })
    }

    pub fn uniform(n: usize, c: T, gamma: T) -> Result<Self> {
        Self::new(Field::constant(n, c)?, Field::constant(n, gamma)?)
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn c(&self) -> &Field<T> {
        &self.c
    }

    pub fn gamma(&self) -> &Field<T> {
        &self.gamma
    }

    pub fn c_max(&self) -> T {
        self.c.max_abs()
    }

    pub fn into_parts(self) -> (Field<T>, Field<T>) {
        (self.c, self.gamma)
    }
}

/// Displacement `u` and velocity `v = ∂t u` at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState<T> {
    pub(crate) u: Field<T>,
    pub(crate) v: Field<T>,
}

impl<T: Real> WaveState<T> {
    pub fn new(u: Field<T>, v: Field<T>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(WaveError::ShapeMismatch {
                what: "state velocity",
                expected: u.len(),
                found: v.len(),
            });
        }
        Ok(Self { u, v })
    }

    /// State with zero initial velocity.
    pub fn at_rest(u: Field<T>) -> Self {
        let v = Field::from_vec_unchecked(vec![T::zero(); u.len()]);
        Self { u, v }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn u(&self) -> &Field<T> {
        &self.u
    }

    pub fn v(&self) -> &Field<T> {
        &self.v
    }

    /// Same displacement, negated velocity.
    pub fn reversed(&self) -> Self {
        let v = Field::from_vec_unchecked(self.v.iter().map(|&x| -x).collect());
        Self {
            u: self.u.clone(),
            v,
        }
    }

    pub fn into_parts(self) -> (Field<T>, Field<T>) {
        (self.u, self.v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Verlet,
    Euler,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Integrator::Verlet => "verlet",
            Integrator::Euler => "euler",
        }
    }
}

/// Time step `dt`, step count `k` and integrator. The virtual horizon is
/// `τ = k·dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutConfig<T> {
    dt: T,
    steps: usize,
    integrator: Integrator,
}

impl<T: Real> RolloutConfig<T> {
    pub fn new(dt: T, steps: usize, integrator: Integrator) -> Result<Self> {
        if !(dt > T::zero() && dt.is_finite()) {
            return Err(WaveError::InvalidTimeStep(dt.as_f64()));
        }
        Ok(Self {
            dt,
            steps,
            integrator,
        })
    }

    pub fn verlet(dt: T, steps: usize) -> Result<Self> {
        Self::new(dt, steps, Integrator::Verlet)
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    pub fn horizon(&self) -> T {
        self.dt * T::from_usize_lossy(self.steps)
    }
}

/// Largest stable undamped Verlet step for wave speed `c_max` on an
/// `n`-point grid: `2 / (ω_max · c_max)`.
pub fn verlet_stability_bound<T: Real>(n: usize, c_max: T) -> Result<T> {
    let grid = shared_grid::<T>(n)?;
    Ok(T::two() / (grid.wavenumbers().max_abs() * c_max))
}

/// Per-rollout constants: the grid, `c²`, `γ` and `dt`.
pub(crate) struct Stepper<'a, T: Real> {
    pub grid: &'a SpectralGrid<T>,
    pub c2: Vec<T>,
    pub gamma: &'a [T],
    pub dt: T,
}

impl<'a, T: Real> Stepper<'a, T> {
    pub fn new(grid: &'a SpectralGrid<T>, medium: &'a Medium<T>, dt: T) -> Self {
        let c2 = medium.c.iter().map(|&c| c * c).collect();
        Self {
            grid,
            c2,
            gamma: medium.gamma.as_slice(),
            dt,
        }
    }

    /// `v + ½dt (c² ⊙ lap_u − γ ⊙ v)`, elementwise.
    #[inline]
    fn half_kick(&self, v: T, lap_u: T, c2: T, g: T) -> T {
        v + T::half() * self.dt * (c2 * lap_u - g * v)
    }

    /// One velocity-Verlet step returning `(u', v')`. `lap` holds `∇²u` on
    /// entry and `∇²u'` on exit; `w` is scratch for the half-step velocity.
    pub fn verlet(&self, u: &[T], v: &[T], lap: &mut [T], w: &mut [T]) -> (Vec<T>, Vec<T>) {
        let n = u.len();
        let (c2, gamma) = (&self.c2[..n], &self.gamma[..n]);
        for j in 0..n {
            w[j] = self.half_kick(v[j], lap[j], c2[j], gamma[j]);
        }
        let u_next: Vec<T> = u.iter().zip(&*w).map(|(&u, &w)| u + self.dt * w).collect();
        self.grid.laplacian_into(&u_next, lap);
        let v_next = (0..n).map(|j| self.half_kick(w[j], lap[j], c2[j], gamma[j])).collect();
        (u_next, v_next)
    }

    pub fn euler(&self, u: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let lap = self.grid.laplacian_vec(u);
        let u_next = u.iter().zip(v).map(|(&u, &v)| u + self.dt * v).collect();
        let v_next = v
            .iter()
            .zip(&lap)
            .zip(self.c2.iter().zip(self.gamma))
            .map(|((&v, &l), (&c2, &g))| v + self.dt * (c2 * l - g * v))
            .collect();
        (u_next, v_next)
    }
}

pub(crate) fn check_lengths<T: Real>(s: &WaveState<T>, m: &Medium<T>) -> Result<()> {
    if s.len() != m.len() {
        return Err(WaveError::ShapeMismatch {
            what: "state vs medium",
            expected: m.len(),
            found: s.len(),
        });
    }
    Ok(())
}

pub(crate) fn finite_state<T: Real>(u: Vec<T>, v: Vec<T>, step: usize) -> Result<WaveState<T>> {
    if all_finite(&u) && all_finite(&v) {
        Ok(WaveState {
            u: Field::from_vec_unchecked(u),
            v: Field::from_vec_unchecked(v),
        })
    } else {
        Err(WaveError::Overflow {
            step,
            channel: None,
        })
    }
}

fn check_dt<T: Real>(dt: T) -> Result<()> {
    if dt > T::zero() && dt.is_finite() {
        Ok(())
    } else {
        Err(WaveError::InvalidTimeStep(dt.as_f64()))
    }
}

/// One velocity-Verlet step.
pub fn verlet_step<T: Real>(s: &WaveState<T>, m: &Medium<T>, dt: T) -> Result<WaveState<T>> {
    check_lengths(s, m)?;
    check_dt(dt)?;
    let grid = shared_grid::<T>(s.len())?;
    let stepper = Stepper::new(&grid, m, dt);
    let mut lap = grid.laplacian_vec(s.u.as_slice());
    let mut w = vec![T::zero(); s.len()];
    let (u, v) = stepper.verlet(s.u.as_slice(), s.v.as_slice(), &mut lap, &mut w);
    finite_state(u, v, 1)
}

/// One explicit-Euler step, both updates evaluated at the start state.
pub fn euler_step<T: Real>(s: &WaveState<T>, m: &Medium<T>, dt: T) -> Result<WaveState<T>> {
    check_lengths(s, m)?;
    check_dt(dt)?;
    let grid = shared_grid::<T>(s.len())?;
    let stepper = Stepper::new(&grid, m, dt);
    let (u, v) = stepper.euler(s.u.as_slice(), s.v.as_slice());
    finite_state(u, v, 1)
}

/// Runs `cfg.steps` steps and calls `visit(i, state)` for every integer-step
/// state, starting with `i = 0` for `s0`. Returns the final state.
pub fn rollout_with<T: Real>(
    s0: &WaveState<T>,
    m: &Medium<T>,
    cfg: &RolloutConfig<T>,
    mut visit: impl FnMut(usize, &WaveState<T>),
) -> Result<WaveState<T>> {
    check_lengths(s0, m)?;
    let grid = shared_grid::<T>(s0.len())?;
    let stepper = Stepper::new(&grid, m, cfg.dt);
    let mut state = s0.clone();
    visit(0, &state);
    match cfg.integrator {
        Integrator::Verlet => {
            let mut lap = grid.laplacian_vec(state.u.as_slice());
            let mut w = vec![T::zero(); state.len()];
            for i in 1..=cfg.steps {
                let (u, v) = stepper.verlet(state.u.as_slice(), state.v.as_slice(), &mut lap, &mut w);
                state = finite_state(u, v, i)?;
                visit(i, &state);
            }
        }
        Integrator::Euler => {
            for i in 1..=cfg.steps {
                let (u, v) = stepper.euler(state.u.as_slice(), state.v.as_slice());
                state = finite_state(u, v, i)?;
                visit(i, &state);
            }
        }
    }
    Ok(state)
}

/// Full trajectory: `steps + 1` states, `s0` first.
pub fn rollout<T: Real>(
    s0: &WaveState<T>,
    m: &Medium<T>,
    cfg: &RolloutConfig<T>,
) -> Result<Vec<WaveState<T>>> {
    let mut states = Vec::with_capacity(cfg.steps + 1);
    rollout_with(s0, m, cfg, |_, s| states.push(s.clone()))?;
    Ok(states)
}

pub fn rollout_final<T: Real>(
    s0: &WaveState<T>,
    m: &Medium<T>,
    cfg: &RolloutConfig<T>,
) -> Result<WaveState<T>> {
    rollout_with(s0, m, cfg, |_, _| {})
}

/// `E = Σ ½v² + ½c²(∂x u)²` with the spectral first derivative.
pub fn discrete_energy<T: Real>(s: &WaveState<T>, m: &Medium<T>) -> Result<T> {
    check_lengths(s, m)?;
    let grid = shared_grid::<T>(s.len())?;
    let g = grid.gradient_vec(s.u.as_slice());
    let half = T::half();
    Ok(s
        .v
        .iter()
        .zip(&g)
        .zip(m.c.iter())
        .fold(T::zero(), |acc, ((&v, &g), &c)| {
            acc + half * v * v + half * c * c * g * g
        }))
}

/// Weighted energy conservation score: `E(last) / E(first)`.
pub fn wecs<T: Real>(trajectory: &[WaveState<T>], m: &Medium<T>) -> Result<T> {
    let (first, last) = match (trajectory.first(), trajectory.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(WaveError::EmptyTrajectory),
    };
    let e0 = discrete_energy(first, m)?;
    if e0 == T::zero() {
        return Err(WaveError::UndefinedWecs);
    }
    Ok(discrete_energy(last, m)? / e0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    fn field(v: &[f64]) -> Field<f64> {
        Field::new(v.to_vec()).unwrap()
    }

    #[test]
    fn verlet_free_drift() {
        let m = Medium::uniform(4, 0.0, 0.0).unwrap();
        let s = WaveState::new(field(&[1.0, 2.0, 3.0, 4.0]), field(&[1.0; 4])).unwrap();
        let s1 = verlet_step(&s, &m, 0.5).unwrap();
        assert_eq!(s1.u().as_slice(), &[1.5, 2.5, 3.5, 4.5]);
        assert_eq!(s1.v().as_slice(), &[1.0; 4]);
    }

    #[test]
    fn verlet_pure_damping() {
        let m = Medium::uniform(4, 0.0, 1.0).unwrap();
        let s = WaveState::new(field(&[0.3, -1.0, 2.0, 0.0]), field(&[1.0; 4])).unwrap();
        let s1 = verlet_step(&s, &m, 0.1).unwrap();
        for &v in s1.v().iter() {
            assert_abs_diff_eq!(v, 0.9025, epsilon = 1e-15);
        }
    }

    #[test]
    fn euler_examples() {
        let m = Medium::uniform(2, 0.0, 0.0).unwrap();
        let s = WaveState::new(field(&[0.0, 0.0]), field(&[1.0, 1.0])).unwrap();
        let s1 = euler_step(&s, &m, 1.0).unwrap();
        assert_eq!(s1.u().as_slice(), &[1.0, 1.0]);
        assert_eq!(s1.v().as_slice(), &[1.0, 1.0]);

        let m = Medium::uniform(4, 0.0, 1.0).unwrap();
        let s = WaveState::new(field(&[0.0; 4]), field(&[1.0; 4])).unwrap();
        let s1 = euler_step(&s, &m, 0.1).unwrap();
        for &v in s1.v().iter() {
            assert_abs_diff_eq!(v, 0.9, epsilon = 1e-15);
        }
    }

    #[test]
    fn euler_energy_grows_monotonically() {
        // Small dt keeps round-off in the high modes far below overflow.
        let n = 64;
        let m = Medium::uniform(n, 1.0, 0.0).unwrap();
        let u = Field::from_fn(n, |j| (TAU * 4.0 * j as f64 / n as f64).cos()).unwrap();
        let cfg = RolloutConfig::new(0.05, 1000, Integrator::Euler).unwrap();
        let traj = rollout(&WaveState::at_rest(u), &m, &cfg).unwrap();
        let energies: Vec<f64> = traj
            .iter()
            .map(|s| discrete_energy(s, &m).unwrap())
            .collect();
        assert!(energies.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn shape_and_dt_errors() {
        let m = Medium::uniform(4, 1.0, 0.0).unwrap();
        let s = WaveState::at_rest(Field::zeros(5).unwrap());
        assert!(matches!(
            verlet_step(&s, &m, 0.1),
            Err(WaveError::ShapeMismatch { .. })
        ));
        let s = WaveState::at_rest(Field::zeros(4).unwrap());
        assert!(matches!(
            verlet_step(&s, &m, 0.0),
            Err(WaveError::InvalidTimeStep(_))
        ));
        assert!(WaveState::new(Field::<f64>::zeros(4).unwrap(), Field::zeros(3).unwrap()).is_err());
        assert!(Medium::new(field(&[1.0, -1.0]), field(&[0.0, 0.0])).is_err());
        assert!(Medium::new(field(&[1.0, 1.0]), field(&[0.0, -0.1])).is_err());
        assert!(Medium::unconstrained(field(&[1.0, -1.0]), field(&[0.0, -0.1])).is_ok());
    }

    #[test]
    fn rollout_edges() {
        let m = Medium::uniform(4, 0.0, 0.0).unwrap();
        let s0 = WaveState::new(field(&[0.0, 1.0, 0.0, -1.0]), field(&[2.0; 4])).unwrap();
        let cfg = RolloutConfig::verlet(0.25, 0).unwrap();
        assert_eq!(rollout(&s0, &m, &cfg).unwrap(), vec![s0.clone()]);

        let cfg = RolloutConfig::verlet(0.25, 3).unwrap();
        let traj = rollout(&s0, &m, &cfg).unwrap();
        for (i, s) in traj.iter().enumerate() {
            for (j, &u) in s.u().iter().enumerate() {
                assert_abs_diff_eq!(u, s0.u()[j] + i as f64 * 0.25 * 2.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn overflow_reports_step() {
        let n = 8;
        let m = Medium::uniform(n, 1.0, 0.0).unwrap();
        let u = Field::from_fn(n, |j| if j % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let cfg = RolloutConfig::verlet(3.0, 2000).unwrap();
        match rollout_final(&WaveState::at_rest(u), &m, &cfg) {
            Err(WaveError::Overflow { step, channel }) => {
                assert!(step > 1 && step <= 2000);
                assert_eq!(channel, None);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn energy_examples() {
        let m = Medium::uniform(4, 1.0, 0.0).unwrap();
        let zero = WaveState::at_rest(Field::zeros(4).unwrap());
        assert_eq!(discrete_energy(&zero, &m).unwrap(), 0.0);
        let s = WaveState::new(Field::zeros(4).unwrap(), field(&[2.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(discrete_energy(&s, &m).unwrap(), 2.0);
    }

    #[test]
    fn wecs_edges() {
        let m = Medium::uniform(4, 1.0, 0.0).unwrap();
        let s = WaveState::new(field(&[0.0, 1.0, 0.0, 3.0]), field(&[1.0; 4])).unwrap();
        assert_eq!(wecs(std::slice::from_ref(&s), &m).unwrap(), 1.0);
        assert_eq!(wecs(&[s.clone(), s.clone(), s], &m).unwrap(), 1.0);
        let zero = WaveState::at_rest(Field::zeros(4).unwrap());
        assert_eq!(wecs(&[zero], &m).unwrap_err(), WaveError::UndefinedWecs);
        assert_eq!(wecs::<f64>(&[], &m).unwrap_err(), WaveError::EmptyTrajectory);
    }

    #[test]
    fn stability_bound_for_unit_speed() {
        let b = verlet_stability_bound(64, 1.0f64).unwrap();
        assert_abs_diff_eq!(b, 2.0 / std::f64::consts::PI, epsilon = 1e-15);
    }
}
