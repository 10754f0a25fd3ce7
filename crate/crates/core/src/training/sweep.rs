//! Integrator experiments on single Fourier modes with known solutions:
//! the time-step sweep and the energy-conservation ablation.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    discrete_energy, rollout_with, verlet_stability_bound, Integrator, Medium, RolloutConfig,
    WaveState,
};
use crate::error::{Result, WaveError};
use crate::spectral::Field;

fn mode_field(n: usize, m: usize) -> Result<Field<f64>> {
    Field::from_fn(n, |j| (TAU * (m * j % n) as f64 / n as f64).cos())
}

fn mode_omega(n: usize, m: usize) -> f64 {
    TAU * m as f64 / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtSweepSpec {
    pub n: usize,
    pub c: f64,
    /// Mode indices `m` of the initial conditions `cos(2πmj/n)`, each
    /// started at rest.
    pub modes: Vec<usize>,
    /// Virtual time every rollout covers; a row's step count is
    /// `ceil(horizon / dt)`.
    pub horizon: f64,
    pub dt_grid: Vec<f64>,
    /// Energy growth (relative to the initial energy) treated as divergence.
    pub divergence_ratio: f64,
}

impl Default for DtSweepSpec {
    fn default() -> Self {
        Self {
            n: 64,
            c: 1.0,
            modes: vec![1, 4, 16, 31],
            horizon: 20.0,
            dt_grid: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0],
            divergence_ratio: 1e6,
        }
    }
}

impl DtSweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(WaveError::InvalidConfig(msg));
        if self.n < 2 {
            return Err(WaveError::InvalidGrid { n: self.n });
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("dt-sweep wave speed must be positive, got {}", self.c));
        }
        if self.modes.is_empty() {
            return bad("dt-sweep needs at least one mode".into());
        }
        if let Some(&m) = self.modes.iter().find(|&&m| m == 0 || 2 * m >= self.n) {
            return bad(format!(
                "dt-sweep mode {m} must satisfy 0 < m < n/2 (n = {})",
                self.n
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("dt-sweep horizon must be positive, got {}", self.horizon));
        }
        if !(self.divergence_ratio > 1.0) {
            return bad("dt-sweep divergence ratio must exceed 1".into());
        }
        check_dt_grid(&self.dt_grid)
    }
}

pub(crate) fn check_dt_grid(grid: &[f64]) -> Result<()> {
    if let Some(&dt) = grid.iter().find(|&&dt| !(dt > 0.0 && dt.is_finite())) {
        return Err(WaveError::InvalidTimeStep(dt));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(WaveError::InvalidConfig(
            "dt grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtSweepRow {
    pub dt: f64,
    pub steps: usize,
    /// Mean squared error against the analytic solution, averaged over
    /// modes and positions; `None` when diverged.
    pub mse: Option<f64>,
    /// Largest `|WECS − 1|` over the modes; `None` when diverged.
    pub wecs_abs_err: Option<f64>,
    pub diverged: bool,
}

/// One row per `dt`: Verlet rollouts of every mode to the common horizon.
pub fn run_dt_sweep(spec: &DtSweepSpec) -> Result<Vec<DtSweepRow>> {
    spec.validate()?;
    let n = spec.n;
    let medium = Medium::uniform(n, spec.c, 0.0)?;
    let modes: Vec<(Field<f64>, f64)> = spec
        .modes
        .iter()
        .map(|&m| Ok((mode_field(n, m)?, mode_omega(n, m) * spec.c)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(spec.dt_grid.len());
    for &dt in &spec.dt_grid {
        let steps = (spec.horizon / dt - 1e-9).ceil() as usize;
        let t_end = steps as f64 * dt;
        let cfg = RolloutConfig::verlet(dt, steps)?;
        let mut sq_err = 0.0;
        let mut wecs_err: f64 = 0.0;
        let mut diverged = false;
        for (u0, omega) in &modes {
            let s0 = WaveState::at_rest(u0.clone());
            let e0 = discrete_energy(&s0, &medium)?;
            let mut peak: f64 = 1.0;
            let result = rollout_with(&s0, &medium, &cfg, |_, s| {
                if let Ok(e) = discrete_energy(s, &medium) {
                    peak = peak.max(e / e0);
                }
            });
            let last = match result {
                Ok(s) if peak <= spec.divergence_ratio => s,
                Ok(_) | Err(WaveError::Overflow { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let amp = (omega * t_end).cos();
            sq_err += last
                .u()
                .iter()
                .zip(u0.iter())
                .map(|(&u, &m)| (u - amp * m).powi(2))
                .sum::<f64>();
            wecs_err = wecs_err.max((discrete_energy(&last, &medium)? / e0 - 1.0).abs());
        }
        rows.push(DtSweepRow {
            dt,
            steps,
            mse: (!diverged).then(|| sq_err / (n * modes.len()) as f64),
            wecs_abs_err: (!diverged).then_some(wecs_err),
            diverged,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WecsSpec {
    pub n: usize,
    pub c: f64,
    /// Mode index of the initial displacement (started at rest).
    pub mode: usize,
    /// Time step; `None` means half the Verlet stability bound.
    pub dt: Option<f64>,
    /// Step counts at which WECS is reported; the rollout runs to the last.
    pub checkpoints: Vec<usize>,
}

impl Default for WecsSpec {
    fn default() -> Self {
        Self {
            n: 64,
            c: 1.0,
            mode: 1,
            dt: None,
            checkpoints: vec![1, 10, 100, 1000],
        }
    }
}

impl WecsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(WaveError::InvalidGrid { n: self.n });
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(WaveError::InvalidConfig(format!(
                "wecs wave speed must be positive, got {}",
                self.c
            )));
        }
        if self.mode == 0 || 2 * self.mode >= self.n {
            return Err(WaveError::InvalidConfig(format!(
                "wecs mode {} must satisfy 0 < m < n/2 (n = {})",
                self.mode, self.n
            )));
        }
        if let Some(dt) = self.dt {
            RolloutConfig::verlet(dt, 0)?;
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WaveError::InvalidConfig(
                "wecs checkpoints must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn resolved_dt(&self) -> Result<f64> {
        match self.dt {
            Some(dt) => Ok(dt),
            None => Ok(0.5 * verlet_stability_bound(self.n, self.c)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WecsReport {
    pub dt: f64,
    /// `(steps, wecs)` per checkpoint; `+∞` once the rollout overflowed.
    pub verlet: Vec<(usize, f64)>,
    pub euler: Vec<(usize, f64)>,
}

impl WecsReport {
    /// WECS at the final checkpoint (1 when there are no checkpoints).
    pub fn final_wecs(&self, integrator: Integrator) -> f64 {
        let rows = match integrator {
            Integrator::Verlet => &self.verlet,
            Integrator::Euler => &self.euler,
        };
        rows.last().map_or(1.0, |&(_, w)| w)
    }
}

fn wecs_checkpoints(
    s0: &WaveState<f64>,
    medium: &Medium<f64>,
    dt: f64,
    integrator: Integrator,
    checkpoints: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let steps = checkpoints.last().copied().unwrap_or(0);
    let e0 = discrete_energy(s0, medium)?;
    if e0 == 0.0 {
        return Err(WaveError::UndefinedWecs);
    }
    let cfg = RolloutConfig::new(dt, steps, integrator)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let result = rollout_with(s0, medium, &cfg, |i, s| {
        if checkpoints.contains(&i) {
            let e = discrete_energy(s, medium).unwrap_or(f64::INFINITY);
            out.push((i, if e.is_finite() { e / e0 } else { f64::INFINITY }));
        }
    });
    match result {
        Ok(_) | Err(WaveError::Overflow { .. }) => {}
        Err(e) => return Err(e),
    }
    for &c in &checkpoints[out.len()..] {
        out.push((c, f64::INFINITY));
    }
    Ok(out)
}

/// Same initial mode, medium (`γ = 0`) and `dt` under both integrators.
pub fn run_wecs_ablation(spec: &WecsSpec) -> Result<WecsReport> {
    spec.validate()?;
    let dt = spec.resolved_dt()?;
    let medium = Medium::uniform(spec.n, spec.c, 0.0)?;
    let s0 = WaveState::at_rest(mode_field(spec.n, spec.mode)?);
    Ok(WecsReport {
        dt,
        verlet: wecs_checkpoints(&s0, &medium, dt, Integrator::Verlet, &spec.checkpoints)?,
        euler: wecs_checkpoints(&s0, &medium, dt, Integrator::Euler, &spec.checkpoints)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_flags_follow_the_bound() {
        let spec = DtSweepSpec {
            dt_grid: vec![0.01, 0.1, 0.5, 0.7, 1.0],
            ..DtSweepSpec::default()
        };
        let rows = run_dt_sweep(&spec).unwrap();
        let flags: Vec<bool> = rows.iter().map(|r| r.diverged).collect();
        assert_eq!(flags, vec![false, false, false, true, true]);
        assert!(rows[0].wecs_abs_err.unwrap() < 0.01);
        assert!(rows[3].mse.is_none());
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let mut spec = DtSweepSpec {
            dt_grid: vec![0.2, 0.1],
            ..DtSweepSpec::default()
        };
        assert!(run_dt_sweep(&spec).is_err());
        spec.dt_grid = vec![0.0];
        assert!(run_dt_sweep(&spec).is_err());
        spec.dt_grid = vec![0.1];
        spec.modes = vec![32];
        assert!(run_dt_sweep(&spec).is_err());
    }

    #[test]
    fn zero_steps_gives_unit_wecs() {
        let spec = WecsSpec {
            checkpoints: vec![0],
            ..WecsSpec::default()
        };
        let r = run_wecs_ablation(&spec).unwrap();
        assert_eq!(r.verlet, vec![(0, 1.0)]);
        assert_eq!(r.euler, vec![(0, 1.0)]);
        let r = run_wecs_ablation(&WecsSpec {
            checkpoints: vec![],
            ..WecsSpec::default()
        })
        .unwrap();
        assert_eq!(r.final_wecs(Integrator::Verlet), 1.0);
        assert_eq!(r.final_wecs(Integrator::Euler), 1.0);
    }
}
