use std::f64::consts::TAU;

use proptest::prelude::*;
use wavefield::training::data::{band_limited_field, seeded_rng};
use wavefield::{
    discrete_energy, euler_step, spectral_laplacian, rollout, rollout_final, verlet_stability_bound, verlet_step, wecs, Field64,
    Integrator, Medium64, RolloutConfig, WaveState64, WaveError,
};

fn field(values: Vec<f64>) -> Field64 {
    Field64::new(values).unwrap()
}

fn mode(n: usize, m: usize) -> Field64 {
    Field64::from_fn(n, |j| (TAU * (m * j) as f64 / n as f64).cos()).unwrap()
}

fn max_diff(a: &Field64, b: &Field64) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn verlet_hand_examples() {
    let s = WaveState64::new(field(vec![1.0, 2.0, 3.0, 4.0]), field(vec![1.0; 4])).unwrap();
    let out = verlet_step(&s, &Medium64::uniform(4, 0.0, 0.0).unwrap(), 0.5).unwrap();
    assert_eq!(out.u().as_slice(), &[1.5, 2.5, 3.5, 4.5]);
    assert_eq!(out.v().as_slice(), &[1.0; 4]);

    let s = WaveState64::new(field(vec![0.3; 4]), field(vec![1.0; 4])).unwrap();
    let out = verlet_step(&s, &Medium64::uniform(4, 0.0, 1.0).unwrap(), 0.1).unwrap();
    for v in out.v().iter() {
        assert!((v - 0.95f64 * 0.95).abs() < 1e-15);
    }
}

#[test]
fn euler_hand_examples() {
    let s = WaveState64::new(field(vec![0.0, 0.0]), field(vec![1.0, 1.0])).unwrap();
    let out = euler_step(&s, &Medium64::uniform(2, 0.0, 0.0).unwrap(), 1.0).unwrap();
    assert_eq!(out.u().as_slice(), &[1.0, 1.0]);
    assert_eq!(out.v().as_slice(), &[1.0, 1.0]);
    let s = WaveState64::new(field(vec![2.0; 3]), field(vec![1.0; 3])).unwrap();
    let out = euler_step(&s, &Medium64::uniform(3, 0.0, 1.0).unwrap(), 0.1).unwrap();
    assert!(out.v().iter().all(|v| (v - 0.9).abs() < 1e-15));
}

#[test]
fn free_drift_is_linear_in_steps() {
    let n = 8;
    let u0 = Field64::from_fn(n, |j| j as f64 * 0.25).unwrap();
    let v0 = Field64::from_fn(n, |j| 1.0 - j as f64 * 0.125).unwrap();
    let s0 = WaveState64::new(u0.clone(), v0.clone()).unwrap();
    let m = Medium64::uniform(n, 0.0, 0.0).unwrap();
    let dt = 0.125;
    let traj = rollout(&s0, &m, &RolloutConfig::verlet(dt, 40).unwrap()).unwrap();
    assert_eq!(traj.len(), 41);
    for (k, s) in traj.iter().enumerate() {
        for j in 0..n {
            let expect = u0.as_slice()[j] + k as f64 * dt * v0.as_slice()[j];
            assert!((s.u().as_slice()[j] - expect).abs() <= 1e-13, "step {k} position {j}");
        }
        assert_eq!(s.v(), &v0);
    }
}

#[test]
fn single_mode_period_is_about_n_steps() {
    // With dt = 1 and ω = 2π/n the exact period is n steps; Verlet's
    // dispersion shifts it by O((ωdt)²).
    let n = 64;
    let m = Medium64::uniform(n, 1.0, 0.0).unwrap();
    let traj = rollout(&WaveState64::at_rest(mode(n, 1)), &m, &RolloutConfig::verlet(1.0 / 4.0, 4 * 3 * n).unwrap())
        .unwrap();
    let u0: Vec<f64> = traj.iter().map(|s| s.u().as_slice()[0]).collect();
    let crossings: Vec<f64> = u0
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > 0.0 && w[1] <= 0.0)
        .map(|(i, w)| i as f64 + w[0] / (w[0] - w[1]))
        .collect();
    assert!(crossings.len() >= 2);
    let period_steps = crossings[1] - crossings[0];
    let period_time = period_steps * 0.25;
    assert!((period_time - n as f64).abs() < 0.01 * n as f64, "period {period_time}");
}

#[test]
fn energy_examples() {
    let n = 64;
    let m = Medium64::uniform(n, 1.0, 0.0).unwrap();
    let zero = WaveState64::at_rest(Field64::zeros(n).unwrap());
    assert_eq!(discrete_energy(&zero, &m).unwrap(), 0.0);
    let kick = WaveState64::new(Field64::zeros(4).unwrap(), field(vec![2.0, 0.0, 0.0, 0.0])).unwrap();
    assert_eq!(discrete_energy(&kick, &Medium64::uniform(4, 1.0, 0.0).unwrap()).unwrap(), 2.0);
    let sine = WaveState64::at_rest(Field64::from_fn(n, |j| (TAU * j as f64 / n as f64).sin()).unwrap());
    let w1 = TAU / n as f64;
    let e = discrete_energy(&sine, &m).unwrap();
    assert!((e - 0.25 * n as f64 * w1 * w1).abs() < 1e-12);
    assert!((e - 0.1542).abs() < 1e-4);
}

#[test]
fn verlet_conserves_and_euler_amplifies() {
    let n = 64;
    let m = Medium64::uniform(n, 1.0, 0.0).unwrap();
    let s0 = WaveState64::at_rest(mode(n, 2));
    let dt = 0.1 / (TAU * 2.0 / n as f64);
    let v = rollout(&s0, &m, &RolloutConfig::verlet(dt, 1000).unwrap()).unwrap();
    let w = wecs(&v, &m).unwrap();
    assert!((0.99..=1.01).contains(&w), "{w}");
    let cfg = RolloutConfig::new(dt, 1000, Integrator::Euler).unwrap();
    match rollout(&s0, &m, &cfg) {
        Ok(e) => assert!((wecs(&e, &m).unwrap() - 1.0).abs() > 0.5),
        Err(WaveError::Overflow { .. }) => {}
        Err(e) => panic!("{e}"),
    }
    assert_eq!(wecs(&[s0.clone(), s0.clone(), s0.clone()], &m).unwrap(), 1.0);
    assert_eq!(wecs(&[s0], &m).unwrap(), 1.0);
}

#[test]
fn stability_boundary_for_unit_speed() {
    let n = 32;
    let bound = verlet_stability_bound(n, 1.0).unwrap();
    assert!((bound - 2.0 / std::f64::consts::PI).abs() < 1e-15);
    let m = Medium64::uniform(n, 1.0, 0.0).unwrap();
    let nyquist_ish = WaveState64::at_rest(mode(n, n / 2 - 1));
    let e0 = discrete_energy(&nyquist_ish, &m).unwrap();
    let inside = rollout_final(&nyquist_ish, &m, &RolloutConfig::verlet(0.9 * bound, 2000).unwrap()).unwrap();
    assert!(discrete_energy(&inside, &m).unwrap() < 10.0 * e0);
    let outside = rollout(&nyquist_ish, &m, &RolloutConfig::verlet(1.1 * bound, 2000).unwrap());
    match outside {
        Err(WaveError::Overflow { .. }) => {}
        Ok(traj) => assert!(discrete_energy(traj.last().unwrap(), &m).unwrap() > 1e6 * e0),
        Err(e) => panic!("{e}"),
    }
}

fn smooth_state(seed: u64, n: usize) -> WaveState64 {
    let mut rng = seeded_rng(seed);
    let u = band_limited_field(&mut rng, n, 1.0).unwrap();
    let v = band_limited_field(&mut rng, n, 1.0).unwrap();
    WaveState64::new(u, v).unwrap()
}

/// `½|v|² + ½⟨u, K(I - dt²K/4)u⟩` with `K = -c²∇²`: the quadratic that
/// undamped velocity Verlet conserves exactly on a uniform medium.
fn verlet_shadow_energy(s: &WaveState64, c: f64, dt: f64) -> f64 {
    let ku = spectral_laplacian(s.u()).scaled(-c * c).unwrap();
    0.5 * s.v().dot(s.v()) + 0.5 * (s.u().dot(&ku) - 0.25 * dt * dt * ku.dot(&ku))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn undamped_verlet_is_reversible(seed in 0u64..1000, n in 8usize..64, steps in 1usize..400, frac in 0.1f64..0.9) {
        let s0 = smooth_state(seed, n);
        let c = Field64::from_fn(n, |j| 0.6 + 0.8 * ((j * 37 + seed as usize) % 13) as f64 / 13.0).unwrap();
        let m = Medium64::new(c, Field64::zeros(n).unwrap()).unwrap();
        let dt = frac * verlet_stability_bound(n, m.c_max()).unwrap();
        let cfg = RolloutConfig::verlet(dt, steps).unwrap();
        let there = rollout_final(&s0, &m, &cfg).unwrap();
        let back = rollout_final(&there.reversed(), &m, &cfg).unwrap().reversed();
        let scale = s0.u().max_abs().max(s0.v().max_abs());
        prop_assert!(max_diff(back.u(), s0.u()).max(max_diff(back.v(), s0.v())) <= 1e-8 * scale);
    }

    #[test]
    fn damping_never_adds_energy(seed in 0u64..1000, gamma in 0.01f64..1.0, c in 0.3f64..2.0, frac in 0.05f64..0.9) {
        let n = 32;
        let s0 = smooth_state(seed, n);
        let m = Medium64::uniform(n, c, gamma).unwrap();
        let dt = frac * verlet_stability_bound(n, c).unwrap();
        let traj = rollout(&s0, &m, &RolloutConfig::verlet(dt, 200).unwrap()).unwrap();
        let energies: Vec<f64> = traj.iter().map(|s| verlet_shadow_energy(s, c, dt)).collect();
        for w in energies.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-300, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn euler_energy_strictly_grows(seed in 0u64..1000, dt in 0.01f64..0.5) {
        let n = 32;
        let s = smooth_state(seed, n);
        let m = Medium64::uniform(n, 1.0, 0.0).unwrap();
        let next = euler_step(&s, &m, dt).unwrap();
        prop_assert!(discrete_energy(&next, &m).unwrap() > discrete_energy(&s, &m).unwrap());
    }
}
