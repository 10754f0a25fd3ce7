//! Wall-clock scaling of the wave layer against naive attention.
//!
//! Both contenders run single-threaded in f64. Attention materializes the
//! full score matrix one block of query rows at a time, so it does the full
//! `O(n²·d)` work without needing `n²` memory at once.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use wavefield::model::{wave_layer_backward, wave_layer_forward, HiddenSequence, LayerInit, LayerParams};
use wavefield::training::data::seeded_rng;

use crate::config::BenchConfig;
use crate::error::{CliError, Result};

/// Median seconds per contender; `None` when the point was skipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub wave: Option<f64>,
    pub attention: Option<f64>,
}

impl BenchRow {
    /// Attention time over wave time.
    pub fn ratio(&self) -> Option<f64> {
        Some(self.attention? / self.wave?)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Runs `warmup` untimed calls, then timed repetitions; returns the median.
/// The first timed call sizes the repetition count so that one point takes
/// roughly `budget_seconds` (at least one, at most `repetitions`).
fn measure<F: FnMut() -> Result<()>>(cfg: &BenchConfig, mut f: F) -> Result<f64> {
    for _ in 0..cfg.warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(cfg.repetitions.max(1));
    let mut reps = 1;
    while times.len() < reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
        if times.len() == 1 {
            let affordable = (cfg.budget_seconds / times[0].max(1e-9)).floor() as usize;
            reps = affordable.clamp(1, cfg.repetitions.max(1));
        }
    }
    Ok(median(times))
}

fn normal_vec<R: Rng>(rng: &mut R, len: usize, std: f64) -> Vec<f64> {
    (0..len).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `Vec` of `len` zeros, or `None` if the allocation is refused.
fn try_zeros(len: usize) -> Option<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).ok()?;
    v.resize(len, 0.0);
    Some(v)
}

/// `C = A·B` for row-major `A: m×k`, `B: k×n` (or `Bᵀ` when `b_transposed`).
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], b_transposed: bool, c: &mut [f64]) {
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents asserted below.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Buffers and weights for one single-head attention forward pass.
pub struct Attention {
    n: usize,
    d: usize,
    block: usize,
    x: Vec<f64>,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    scores: Vec<f64>,
    out: Vec<f64>,
}

impl Attention {
    /// `None` if any buffer cannot be allocated.
    pub fn new(n: usize, d: usize, block: usize, seed: u64) -> Option<Self> {
        let block = block.clamp(1, n.max(1));
        let mut rng = seeded_rng(seed);
        let w_std = 1.0 / (d as f64).sqrt();
        let mut x = try_zeros(n * d)?;
        x.copy_from_slice(&normal_vec(&mut rng, n * d, 1.0));
        Some(Self {
            n,
            d,
            block,
            x,
            wq: normal_vec(&mut rng, d * d, w_std),
            wk: normal_vec(&mut rng, d * d, w_std),
            wv: normal_vec(&mut rng, d * d, w_std),
            q: try_zeros(n * d)?,
            k: try_zeros(n * d)?,
            v: try_zeros(n * d)?,
            scores: try_zeros(block * n)?,
            out: try_zeros(n * d)?,
        })
    }

    /// `softmax(Q Kᵀ / √d) V` with `Q, K, V = X W_{q,k,v}`.
    pub fn forward(&mut self) -> &[f64] {
        let (n, d) = (self.n, self.d);
        gemm(n, d, d, &self.x, &self.wq, false, &mut self.q);
        gemm(n, d, d, &self.x, &self.wk, false, &mut self.k);
        gemm(n, d, d, &self.x, &self.wv, false, &mut self.v);
        let scale = 1.0 / (d as f64).sqrt();
        for start in (0..n).step_by(self.block) {
            let rows = self.block.min(n - start);
            let s = &mut self.scores[..rows * n];
            gemm(rows, d, n, &self.q[start * d..(start + rows) * d], &self.k, true, s);
            for row in s.chunks_exact_mut(n) {
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) * scale;
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x * scale - max).exp();
                    total += *x;
                }
                let inv = 1.0 / total;
                row.iter_mut().for_each(|x| *x *= inv);
            }
            gemm(rows, n, d, s, &self.v, false, &mut self.out[start * d..(start + rows) * d]);
        }
        &self.out
    }
}

/// Input, cotangent and parameters for one wave-layer forward+backward.
pub struct WaveWorkload {
    h: HiddenSequence<f64>,
    dy: HiddenSequence<f64>,
    params: LayerParams<f64>,
}

impl WaveWorkload {
    pub fn new(n: usize, d: usize, steps: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let init = LayerInit {
            steps,
            head_scale: 1.0,
            ..LayerInit::default()
        };
        let params = LayerParams::random(d, &init, &mut rng);
        let h = HiddenSequence::new(n, d, normal_vec(&mut rng, n * d, 1.0))?;
        let dy = HiddenSequence::new(n, d, normal_vec(&mut rng, n * d, 1.0))?;
        Ok(Self { h, dy, params })
    }

    pub fn run(&self) -> Result<()> {
        let (out, tape) = wave_layer_forward(&self.h, &self.params)?;
        black_box(&out);
        black_box(wave_layer_backward(&self.params, &tape, &self.dy)?);
        Ok(())
    }
}

/// Times both contenders at every configured size.
pub fn run_bench(cfg: &BenchConfig, seed: u64, mut log: impl FnMut(&str)) -> Result<Vec<BenchRow>> {
    if cfg.d == 0 || cfg.sizes.iter().any(|&n| n < 2) {
        return Err(CliError::Usage("bench needs d >= 1 and every n >= 2".into()));
    }
    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let wave = match try_zeros(n * cfg.d * (3 * cfg.steps + 8)) {
            // Probe for roughly the tape footprint before committing.
            Some(probe) => {
                drop(probe);
                let w = WaveWorkload::new(n, cfg.d, cfg.steps, seed)?;
                Some(measure(cfg, || w.run())?)
            }
            None => None,
        };
        let attention = match Attention::new(n, cfg.d, cfg.query_block, seed) {
            Some(mut a) => Some(measure(cfg, || {
                black_box(a.forward());
                Ok(())
            })?),
            None => None,
        };
        let row = BenchRow { n, wave, attention };
        log(&format!("bench n={n} wave={wave:?} attention={attention:?}"));
        rows.push(row);
    }
    Ok(rows)
}
