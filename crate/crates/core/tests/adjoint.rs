use proptest::prelude::*;
use wavefield::adjoint::backward_with;
use wavefield::gradcheck::{
    check_rollout_gradients, relative_error, rollout_gradients, rollout_loss, RolloutPoint, WeightedQuadratic,
};
use wavefield::training::data::seeded_rng;
use wavefield::{
    backward, record_rollout, rollout_final, verlet_stability_bound, Field64, LaplacianAdjoint, Medium64,
    RolloutConfig, WaveState64,
};

use rand::Rng;
use rand_distr::StandardNormal;

fn normal_field<R: Rng>(rng: &mut R, n: usize) -> Field64 {
    Field64::from_fn(n, |_| rng.sample(StandardNormal)).unwrap()
}

struct Instance {
    s0: WaveState64,
    m: Medium64,
    cfg: RolloutConfig<f64>,
}

fn instance(seed: u64, n: usize, steps: usize) -> Instance {
    let mut rng = seeded_rng(seed);
    let s0 = WaveState64::new(normal_field(&mut rng, n), normal_field(&mut rng, n)).unwrap();
    let c = Field64::from_fn(n, |_| rng.random_range(0.5..1.5)).unwrap();
    let g = Field64::from_fn(n, |_| rng.random_range(0.01..0.2)).unwrap();
    let m = Medium64::new(c, g).unwrap();
    let dt = 0.5 * verlet_stability_bound(n, m.c_max()).unwrap();
    Instance { s0, m, cfg: RolloutConfig::verlet(dt, steps).unwrap() }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn one_step_drift_closed_form() {
    let n = 6;
    let u0 = Field64::from_fn(n, |j| j as f64 - 2.0).unwrap();
    let v0 = Field64::from_fn(n, |j| 0.5 * j as f64).unwrap();
    let dt = 0.3;
    let (fin, tape) = record_rollout(
        &WaveState64::new(u0, v0).unwrap(),
        &Medium64::uniform(n, 0.0, 0.0).unwrap(),
        &RolloutConfig::verlet(dt, 1).unwrap(),
    )
    .unwrap();
    let g = backward(&tape, fin.u(), &Field64::zeros(n).unwrap()).unwrap();
    assert_eq!(g.d_u0.as_slice(), fin.u().as_slice());
    for (a, b) in g.d_v0.iter().zip(fin.u().iter()) {
        assert!((a - dt * b).abs() < 1e-15);
    }
}

#[test]
fn free_drift_dt_gradient() {
    // L = ½‖u_k‖², u_k = u0 + k·dt·v0  ⇒  dL/ddt = k·⟨u_k, v0⟩.
    let n = 16;
    let mut rng = seeded_rng(5);
    for steps in [1, 3, 8] {
        let s0 = WaveState64::new(normal_field(&mut rng, n), normal_field(&mut rng, n)).unwrap();
        let (fin, tape) = record_rollout(
            &s0,
            &Medium64::uniform(n, 0.0, 0.0).unwrap(),
            &RolloutConfig::verlet(0.37, steps).unwrap(),
        )
        .unwrap();
        let g = backward(&tape, fin.u(), &Field64::zeros(n).unwrap()).unwrap();
        let expect = steps as f64 * fin.u().dot(s0.v());
        assert!((g.d_dt - expect).abs() <= 1e-10 * expect.abs().max(1.0), "{} vs {expect}", g.d_dt);
    }
}

#[test]
fn random_instance_matches_finite_differences() {
    let inst = instance(17, 16, 5);
    let mut rng = seeded_rng(18);
    let loss = WeightedQuadratic {
        u_weights: (0..16).map(|_| rng.random_range(0.5..1.5)).collect(),
        u_target: (0..16).map(|_| rng.sample(StandardNormal)).collect(),
        v_weights: (0..16).map(|_| rng.random_range(0.5..1.5)).collect(),
    };
    let point = RolloutPoint { state: inst.s0, medium: inst.m, dt: inst.cfg.dt() };
    let err = check_rollout_gradients(&loss, &point, 5, 1e-5).unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn quadratic_in_linear_regime_is_exact() {
    // With c = γ = 0 the state map is linear, so ½‖u_k‖² is quadratic in
    // (u0, v0) and central differences are exact up to round-off.
    let (n, steps, eps) = (8, 3, 1e-5);
    let mut rng = seeded_rng(2);
    let point = RolloutPoint {
        state: WaveState64::new(normal_field(&mut rng, n), normal_field(&mut rng, n)).unwrap(),
        medium: Medium64::uniform(n, 0.0, 0.0).unwrap(),
        dt: 0.2,
    };
    let loss = WeightedQuadratic::half_norm_u(n);
    let analytic = rollout_gradients(&loss, &point, steps).unwrap().to_flat();
    let flat = point.to_flat();
    for i in 0..2 * n {
        let at = |delta: f64| {
            let mut x = flat.clone();
            x[i] += delta;
            rollout_loss(&loss, &RolloutPoint::from_flat(n, &x).unwrap(), steps).unwrap()
        };
        let fd = (at(eps) - at(-eps)) / (2.0 * eps);
        assert!(relative_error(fd, analytic[i]) <= 1e-9, "component {i}: {fd} vs {}", analytic[i]);
    }
}

#[test]
fn tape_size_is_linear_in_steps() {
    let inst = instance(1, 16, 1);
    let sizes: Vec<usize> = [1, 2, 4, 8]
        .iter()
        .map(|&k| {
            let cfg = RolloutConfig::verlet(inst.cfg.dt(), k).unwrap();
            record_rollout(&inst.s0, &inst.m, &cfg).unwrap().1.stored_scalars()
        })
        .collect();
    let per_step = sizes[1] - sizes[0];
    assert!(per_step > 0);
    assert_eq!(sizes[2] - sizes[1], 2 * per_step);
    assert_eq!(sizes[3] - sizes[2], 4 * per_step);
}

#[test]
fn tape_final_state_matches_rollout() {
    let inst = instance(3, 32, 12);
    let (fin, tape) = record_rollout(&inst.s0, &inst.m, &inst.cfg).unwrap();
    assert_eq!(fin, rollout_final(&inst.s0, &inst.m, &inst.cfg).unwrap());
    assert_eq!(tape.states().len(), 13);
    assert!(tape.replay_error().unwrap() <= 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transpose_and_forward_adjoints_agree(seed in 0u64..10_000, n in 3usize..40, steps in 0usize..10) {
        let inst = instance(seed, n, steps);
        let (_, tape) = record_rollout(&inst.s0, &inst.m, &inst.cfg).unwrap();
        let mut rng = seeded_rng(seed + 1);
        let (du, dv) = (normal_field(&mut rng, n), normal_field(&mut rng, n));
        let a = backward_with(&tape, &du, &dv, LaplacianAdjoint::Forward).unwrap().to_flat();
        let b = backward_with(&tape, &du, &dv, LaplacianAdjoint::Transpose).unwrap().to_flat();
        let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        prop_assert!(max_abs_diff(&a, &b) <= 1e-11 * scale);
    }

    #[test]
    fn backward_is_linear_in_cotangents(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let n = 16;
        let inst = instance(seed, n, 6);
        let (_, tape) = record_rollout(&inst.s0, &inst.m, &inst.cfg).unwrap();
        let mut rng = seeded_rng(seed ^ 0xabc);
        let (g1, g2) = (normal_field(&mut rng, n), normal_field(&mut rng, n));
        let zero = Field64::zeros(n).unwrap();
        let mix = Field64::from_fn(n, |j| a * g1.as_slice()[j] + b * g2.as_slice()[j]).unwrap();
        let lhs = backward(&tape, &mix, &zero).unwrap().to_flat();
        let r1 = backward(&tape, &g1, &zero).unwrap().to_flat();
        let r2 = backward(&tape, &g2, &zero).unwrap().to_flat();
        let rhs: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
        let scale = rhs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12 * scale);
    }

    #[test]
    fn zero_cotangent_gives_zero_and_reruns_are_bitwise(seed in 0u64..10_000) {
        let n = 12;
        let inst = instance(seed, n, 4);
        let (fin, tape) = record_rollout(&inst.s0, &inst.m, &inst.cfg).unwrap();
        let zero = Field64::zeros(n).unwrap();
        prop_assert!(backward(&tape, &zero, &zero).unwrap().to_flat().iter().all(|&x| x == 0.0));
        let (_, tape2) = record_rollout(&inst.s0, &inst.m, &inst.cfg).unwrap();
        prop_assert_eq!(
            backward(&tape, fin.u(), fin.v()).unwrap(),
            backward(&tape2, fin.u(), fin.v()).unwrap()
        );
    }
}
