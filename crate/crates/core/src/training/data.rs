//! Seeded data generators. Every generator is a pure function of its seed
//! and arguments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{rollout_final, verlet_stability_bound, Medium, RolloutConfig, WaveState};
use crate::error::{Result, WaveError};
use crate::spectral::Field;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Zero-mean random field built from modes with `0 < |ω| <= max_omega`,
/// Gaussian coefficients, scaled to unit RMS.
pub fn band_limited_field<R: Rng>(rng: &mut R, n: usize, max_omega: f64) -> Result<Field<f64>> {
    let tau = std::f64::consts::TAU;
    let top = (0..=n / 2)
        .take_while(|&m| tau * m as f64 / n as f64 <= max_omega + 1e-12)
        .last()
        .unwrap_or(0);
    if top == 0 {
        return Err(WaveError::InvalidConfig(format!(
            "no non-constant mode of an {n}-point grid has |ω| <= {max_omega}"
        )));
    }
    let coeffs: Vec<(f64, f64)> = (1..=top)
        .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let mut values: Vec<f64> = (0..n)
        .map(|j| {
            coeffs.iter().enumerate().fold(0.0, |acc, (k, &(a, b))| {
                let phase = tau * ((k + 1) * j % n) as f64 / n as f64;
                acc + a * phase.cos() + b * phase.sin()
            })
        })
        .collect();
    let rms = (values.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        values.iter_mut().for_each(|x| *x /= rms);
    }
    Field::new(values)
}

/// One training pair: an initial displacement and its propagated value.
#[derive(Clone, Debug, PartialEq)]
pub struct WavePair {
    pub input: Field<f64>,
    pub target: Field<f64>,
}

/// Band-limited (`|ω| <= π/4`) initial fields at rest, propagated for
/// `steps` Verlet steps through `medium`.
pub fn generate_wave_dataset(
    seed: u64,
    n: usize,
    num_samples: usize,
    medium: &Medium<f64>,
    dt: f64,
    steps: usize,
) -> Result<Vec<WavePair>> {
    if medium.len() != n {
        return Err(WaveError::ShapeMismatch {
            what: "ground-truth medium",
            expected: n,
            found: medium.len(),
        });
    }
    let bound = verlet_stability_bound(n, medium.c_max())?;
    if dt >= bound {
        return Err(WaveError::UnstableGroundTruth { dt, bound });
    }
    let cfg = RolloutConfig::verlet(dt, steps)?;
    let mut rng = seeded_rng(seed);
    (0..num_samples)
        .map(|_| {
            let input = band_limited_field(&mut rng, n, std::f64::consts::FRAC_PI_4)?;
            let target = rollout_final(&WaveState::at_rest(input.clone()), medium, &cfg)?
                .into_parts()
                .0;
            Ok(WavePair { input, target })
        })
        .collect()
}

/// Token strings labelled by whether a fixed 3-token motif occurs.
#[derive(Clone, Debug, PartialEq)]
pub struct MotifExample {
    pub tokens: Vec<usize>,
    pub label: usize,
}

/// Occurrence test on the periodic sequence (wrap-around windows count).
pub fn contains_motif(tokens: &[usize], motif: &[usize; 3]) -> bool {
    let n = tokens.len();
    (0..n).any(|p| (0..3).all(|k| tokens[(p + k) % n] == motif[k]))
}

/// Balanced-in-expectation motif detection data: each example is positive
/// with probability ½. Positives get the motif planted at a random
/// position; negatives are resampled until no (cyclic) occurrence remains.
pub fn generate_motif_dataset(
    seed: u64,
    count: usize,
    n: usize,
    vocab: usize,
    motif: &[usize; 3],
) -> Result<Vec<MotifExample>> {
    if n < 4 || vocab < 2 || motif.iter().any(|&t| t >= vocab) {
        return Err(WaveError::InvalidConfig(format!(
            "motif task needs n >= 4, vocab >= 2 and motif tokens < vocab (n = {n}, vocab = {vocab}, motif = {motif:?})"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let positive = rng.random_bool(0.5);
        let mut tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        if positive {
            let p = rng.random_range(0..=n - 3);
            tokens[p..p + 3].copy_from_slice(motif);
        } else {
            while let Some(p) = (0..n).find(|&p| (0..3).all(|k| tokens[(p + k) % n] == motif[k])) {
                tokens[(p + 1) % n] = rng.random_range(0..vocab);
            }
        }
        out.push(MotifExample {
            tokens,
            label: usize::from(positive),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_limited_field_is_unit_rms_and_deterministic() {
        let a = band_limited_field(&mut seeded_rng(3), 64, std::f64::consts::FRAC_PI_4).unwrap();
        let b = band_limited_field(&mut seeded_rng(3), 64, std::f64::consts::FRAC_PI_4).unwrap();
        assert_eq!(a, b);
        let rms = (a.dot(&a) / 64.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        assert!(a.mean().abs() < 1e-12);
        assert!(band_limited_field(&mut seeded_rng(3), 4, 0.5).is_err());
    }

    #[test]
    fn unstable_ground_truth_rejected() {
        let m = Medium::uniform(32, 1.0, 0.0).unwrap();
        assert!(matches!(
            generate_wave_dataset(0, 32, 2, &m, 0.7, 4),
            Err(WaveError::UnstableGroundTruth { .. })
        ));
    }

    #[test]
    fn motif_labels_are_truthful() {
        let motif = [1, 2, 3];
        let data = generate_motif_dataset(9, 500, 32, 8, &motif).unwrap();
        for ex in &data {
            assert_eq!(contains_motif(&ex.tokens, &motif), ex.label == 1);
            assert_eq!(ex.tokens.len(), 32);
        }
        assert!(generate_motif_dataset(9, 1, 32, 3, &motif).is_err());
    }
}
