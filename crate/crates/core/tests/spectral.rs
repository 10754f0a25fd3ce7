use std::f64::consts::{PI, TAU};

use approx::assert_relative_eq;
use proptest::prelude::*;
use wavefield::{spectral_gradient, spectral_laplacian, wavenumbers, Field64, SpectralGrid};

fn field(values: Vec<f64>) -> Field64 {
    Field64::new(values).unwrap()
}

fn signed_omega(m: usize, n: usize) -> f64 {
    let s = if 2 * m > n { m as f64 - n as f64 } else { m as f64 };
    TAU * s / n as f64
}

/// Applies the Fourier multiplier `mult(m)` (complex, as `(re, im)`) by
/// direct summation.
fn dft_multiply(f: &[f64], mult: impl Fn(usize) -> (f64, f64)) -> Vec<f64> {
    let n = f.len();
    let phase = |a: usize| TAU * (a % n) as f64 / n as f64;
    let spec: Vec<(f64, f64)> = (0..n)
        .map(|m| {
            let (re, im) = f
                .iter()
                .enumerate()
                .fold((0.0, 0.0), |(re, im), (j, &x)| (re + x * phase(j * m).cos(), im - x * phase(j * m).sin()));
            let (a, b) = mult(m);
            (re * a - im * b, re * b + im * a)
        })
        .collect();
    (0..n)
        .map(|j| {
            spec.iter()
                .enumerate()
                .map(|(m, &(re, im))| re * phase(j * m).cos() - im * phase(j * m).sin())
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

fn vectors(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|n| prop::collection::vec(-10.0f64..10.0, n))
}

fn vector_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..80).prop_flat_map(|n| {
        (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(-10.0f64..10.0, n))
    })
}

#[test]
fn wavenumber_examples() {
    let w4 = wavenumbers::<f64>(4).unwrap();
    assert_eq!(w4.as_slice(), &[0.0, PI / 2.0, PI, -PI / 2.0]);
    assert_eq!(wavenumbers::<f64>(2).unwrap().as_slice(), &[0.0, PI]);
    let w8 = wavenumbers::<f64>(8).unwrap();
    assert_relative_eq!(w8.as_slice()[3], 3.0 * PI / 4.0);
    assert_relative_eq!(w8.as_slice()[5], -3.0 * PI / 4.0);
}

#[test]
fn cosine_is_an_eigenfunction() {
    let n = 64;
    let f = Field64::from_fn(n, |j| (TAU * j as f64 / n as f64).cos()).unwrap();
    let lap = spectral_laplacian(&f);
    let k2 = (TAU / n as f64).powi(2);
    for (l, x) in lap.iter().zip(f.iter()) {
        assert!((l + k2 * x).abs() < 1e-14, "{l} vs {}", -k2 * x);
    }
}

#[test]
fn sine_derivative() {
    let n = 32;
    let k = TAU / n as f64;
    let f = Field64::from_fn(n, |j| (k * j as f64).sin()).unwrap();
    let g = spectral_gradient(&f);
    for (j, x) in g.iter().enumerate() {
        assert!((x - k * (k * j as f64).cos()).abs() < 1e-14);
    }
}

#[test]
fn constants_and_nyquist() {
    assert!(spectral_laplacian(&field(vec![5.0; 4])).iter().all(|x| x.abs() < 1e-14));
    assert!(spectral_gradient(&field(vec![5.0; 4])).iter().all(|x| x.abs() < 1e-14));
    let nyq = field((0..16).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect());
    assert!(spectral_gradient(&nyq).iter().all(|x| x.abs() < 1e-14));
    // The second derivative keeps the Nyquist term: -π² times the field.
    for (l, x) in spectral_laplacian(&nyq).iter().zip(nyq.iter()) {
        assert!((l + PI * PI * x).abs() < 1e-12);
    }
}

#[test]
fn f32_grid_matches_f64() {
    let n = 24;
    let f64s: Vec<f64> = (0..n).map(|j| ((j * 7 % 11) as f64 - 5.0) / 3.0).collect();
    let f32s: Vec<f32> = f64s.iter().map(|&x| x as f32).collect();
    let a = spectral_laplacian(&field(f64s));
    let b = spectral_laplacian(&wavefield::Field32::new(f32s).unwrap());
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - *y as f64).abs() < 1e-4 * (1.0 + x.abs()));
    }
}

proptest! {
    #[test]
    fn matches_naive_dft(f in vectors(2..48)) {
        let n = f.len();
        let lap = spectral_laplacian(&field(f.clone()));
        let expect = dft_multiply(&f, |m| (-signed_omega(m, n).powi(2), 0.0));
        prop_assert!(rel_err(lap.as_slice(), &expect) <= 1e-10);
        let grad = spectral_gradient(&field(f.clone()));
        let expect = dft_multiply(&f, |m| if 2 * m == n { (0.0, 0.0) } else { (0.0, signed_omega(m, n)) });
        let scale = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        let abs: f64 = grad.iter().zip(&expect).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(abs <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn laplacian_is_self_adjoint((f, g) in vector_pairs()) {
        let (f, g) = (field(f), field(g));
        let a = g.dot(&spectral_laplacian(&f));
        let b = spectral_laplacian(&g).dot(&f);
        let scale = f.norm() * g.norm() * PI * PI;
        prop_assert!((a - b).abs() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn laplacian_is_negative_semidefinite(f in vectors(2..80)) {
        let f = field(f);
        prop_assert!(f.dot(&spectral_laplacian(&f)) <= 1e-10 * f.dot(&f));
    }

    #[test]
    fn second_derivative_is_repeated_first_without_nyquist(f in vectors(2..64)) {
        let n = f.len();
        let mut f = field(f);
        if n % 2 == 0 {
            // Project out the Nyquist component.
            let a = f.iter().enumerate().map(|(j, x)| if j % 2 == 0 { *x } else { -*x }).sum::<f64>() / n as f64;
            f = Field64::from_fn(n, |j| f.as_slice()[j] - if j % 2 == 0 { a } else { -a }).unwrap();
        }
        let twice = spectral_gradient(&spectral_gradient(&f));
        let lap = spectral_laplacian(&f);
        prop_assert!(rel_err(twice.as_slice(), lap.as_slice()) <= 1e-10 || lap.norm() < 1e-12);
    }

    #[test]
    fn fft_round_trip(f in vectors(2..100)) {
        let grid = SpectralGrid::<f64>::new(f.len()).unwrap();
        let back: Vec<f64> = grid.inverse(&grid.forward(&f)).iter().map(|z| z.re).collect();
        prop_assert!(rel_err(&back, &f) <= 1e-12);
    }

    #[test]
    fn transpose_path_agrees(f in vectors(2..64)) {
        let grid = SpectralGrid::<f64>::new(f.len()).unwrap();
        let mut t = vec![0.0; f.len()];
        grid.laplacian_transpose_into(&f, &mut t);
        prop_assert!(rel_err(&t, &grid.laplacian_vec(&f)) <= 1e-12 || f.iter().all(|x| x.abs() < 1e-12));
    }
}
