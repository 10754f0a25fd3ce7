//! Wave layers, residual blocks and the stacked model.
//!
//! Each position of an `n × d` hidden sequence gets one wave speed and one
//! damping value from 1×1 convolutions (per-position dot products across
//! channels) followed by softplus. Every channel is then propagated as an
//! independent displacement field through that shared medium for `steps`
//! Verlet steps; the final displacements form the layer output.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adjoint::{backward_on_grid, record_on_grid, LaplacianAdjoint, RolloutTape};
use crate::dynamics::{Medium, RolloutConfig, WaveState};
use crate::error::{Result, WaveError};
use crate::params::Parameters;
use crate::scalar::{all_finite, Real};
use crate::spectral::{shared_grid, Field};

/// `ln(1 + eˣ)` without overflow for large `x`.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus<T: Real>(y: T) -> T {
    // ln(eʸ − 1) = y + ln(1 − e⁻ʸ)
    y + (-(-y).exp()).ln_1p()
}

const TILE_ROWS: usize = 32;

/// `n × d` matrix of hidden activations, row-major (one row per position).
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSequence<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Real> HiddenSequence<T> {
    pub fn new(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if n < 2 {
            return Err(WaveError::InvalidGrid { n });
        }
        if d < 1 {
            return Err(WaveError::InvalidConfig("hidden width must be >= 1".into()));
        }
        if data.len() != n * d {
            return Err(WaveError::ShapeMismatch {
                what: "hidden sequence data",
                expected: n * d,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(WaveError::NonFinite {
                what: "hidden sequence",
                index,
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn zeros(n: usize, d: usize) -> Result<Self> {
        Self::new(n, d, vec![T::zero(); n * d])
    }

    pub fn from_fn(n: usize, d: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(n * d);
        for j in 0..n {
            for ch in 0..d {
                data.push(f(j, ch));
            }
        }
        Self::new(n, d, data)
    }

    /// Stacks equal-length fields as channels.
    pub fn from_columns(columns: &[Field<T>]) -> Result<Self> {
        let d = columns.len();
        let n = columns.first().map(|c| c.len()).unwrap_or(0);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(WaveError::ShapeMismatch {
                what: "column length",
                expected: n,
                found: bad.len(),
            });
        }
        Self::from_fn(n, d, |j, ch| columns[ch][j])
    }

    fn from_parts_unchecked(n: usize, d: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), n * d);
        Self { n, d, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, j: usize, ch: usize) -> T {
        self.data[j * self.d + ch]
    }

    pub fn row(&self, j: usize) -> &[T] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn column(&self, ch: usize) -> Vec<T> {
        (0..self.n).map(|j| self.get(j, ch)).collect()
    }

    /// Every channel as a contiguous vector; tiled so that large `n` does
    /// not stream the whole matrix once per channel.
    pub fn columns(&self) -> Vec<Vec<T>> {
        let mut cols: Vec<Vec<T>> = (0..self.d).map(|_| Vec::with_capacity(self.n)).collect();
        for j0 in (0..self.n).step_by(TILE_ROWS) {
            let rows = j0..(j0 + TILE_ROWS).min(self.n);
            for (ch, col) in cols.iter_mut().enumerate() {
                col.extend(rows.clone().map(|j| self.data[j * self.d + ch]));
            }
        }
        cols
    }

    /// Adds `cols[ch][j]` to entry `(j, ch)`.
    fn add_columns<C: AsRef<[T]>>(&mut self, cols: &[C]) {
        debug_assert_eq!(cols.len(), self.d);
        for j0 in (0..self.n).step_by(TILE_ROWS) {
            let j1 = (j0 + TILE_ROWS).min(self.n);
            for (ch, col) in cols.iter().enumerate() {
                let col = col.as_ref();
                for (j, &x) in (j0..j1).zip(&col[j0..j1]) {
                    let idx = j * self.d + ch;
                    self.data[idx] = self.data[idx] + x;
                }
            }
        }
    }

    /// Cyclic shift along positions: row `j` moves to row `(j + shift) % n`.
    pub fn rolled(&self, shift: usize) -> Self {
        let mut data = vec![T::zero(); self.data.len()];
        for j in 0..self.n {
            let dst = (j + shift) % self.n;
            data[dst * self.d..(dst + 1) * self.d].copy_from_slice(self.row(j));
        }
        Self::from_parts_unchecked(self.n, self.d, data)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x * x)
    }

    fn check_dims(&self, n: usize, d: usize, what: &'static str) -> Result<()> {
        if self.n != n {
            return Err(WaveError::ShapeMismatch {
                what,
                expected: n,
                found: self.n,
            });
        }
        if self.d != d {
            return Err(WaveError::ShapeMismatch {
                what,
                expected: d,
                found: self.d,
            });
        }
        Ok(())
    }
}

/// Initial velocity of each channel's rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum V0Mode {
    /// `v0 = 0`
    #[default]
    Zero,
    /// `v0 = H·W_v`
    Linear,
}

impl V0Mode {
    pub fn name(self) -> &'static str {
        match self {
            V0Mode::Zero => "zero",
            V0Mode::Linear => "linear",
        }
    }
}

/// Learnable weights of one wave layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub w_c: Vec<T>,
    pub b_c: T,
    pub w_g: Vec<T>,
    pub b_g: T,
    /// Pre-softplus time step.
    pub dt_raw: T,
    pub steps: usize,
    pub v0_mode: V0Mode,
    /// `d × d`, row-major `[input][output]`; present iff `v0_mode` is linear.
    pub w_v: Option<Vec<T>>,
}

/// Starting values for a freshly built layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerInit {
    pub steps: usize,
    pub v0_mode: V0Mode,
    /// Wave speed at zero head input.
    pub c0: f64,
    pub gamma0: f64,
    pub dt0: f64,
    /// Standard deviation of head weights is `head_scale / √d`.
    pub head_scale: f64,
}

impl Default for LayerInit {
    fn default() -> Self {
        Self {
            steps: 8,
            v0_mode: V0Mode::Zero,
            c0: 1.0,
            gamma0: 0.01,
            dt0: 0.05,
            head_scale: 0.0,
        }
    }
}

fn normal_vec<T: Real, R: Rng>(rng: &mut R, len: usize, std: f64) -> Vec<T> {
    (0..len)
        .map(|_| T::lit(std * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

impl<T: Real> LayerParams<T> {
    /// Zero head weights, biases at `init`'s speed/damping/time step.
    pub fn new(d: usize, init: &LayerInit) -> Self {
        Self {
            w_c: vec![T::zero(); d],
            b_c: inverse_softplus(T::lit(init.c0)),
            w_g: vec![T::zero(); d],
            b_g: inverse_softplus(T::lit(init.gamma0)),
            dt_raw: inverse_softplus(T::lit(init.dt0)),
            steps: init.steps,
            v0_mode: init.v0_mode,
            w_v: match init.v0_mode {
                V0Mode::Zero => None,
                V0Mode::Linear => Some(vec![T::zero(); d * d]),
            },
        }
    }

    pub fn random<R: Rng>(d: usize, init: &LayerInit, rng: &mut R) -> Self {
        let mut p = Self::new(d, init);
        let std = init.head_scale / (d as f64).sqrt();
        p.w_c = normal_vec(rng, d, std);
        p.w_g = normal_vec(rng, d, std);
        if let Some(w) = p.w_v.as_mut() {
            *w = normal_vec(rng, d * d, std);
        }
        p
    }

    pub fn d(&self) -> usize {
        self.w_c.len()
    }

    pub fn dt(&self) -> T {
        softplus(self.dt_raw)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if self.w_g.len() != d {
            return Err(WaveError::ShapeMismatch {
                what: "damping head",
                expected: d,
                found: self.w_g.len(),
            });
        }
        match (self.v0_mode, &self.w_v) {
            (V0Mode::Zero, None) => Ok(()),
            (V0Mode::Linear, Some(w)) if w.len() == d * d => Ok(()),
            (V0Mode::Linear, Some(w)) => Err(WaveError::ShapeMismatch {
                what: "initial-velocity map",
                expected: d * d,
                found: w.len(),
            }),
            _ => Err(WaveError::InvalidConfig(
                "initial-velocity map must be present iff v0_mode = linear".into(),
            )),
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, _, xs| xs.iter_mut().for_each(|x| *x = T::zero()));
        z
    }
}

impl<T: Real> Parameters<T> for LayerParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        let d = self.d();
        f("w_c", &[d], &self.w_c);
        f("b_c", &[], std::slice::from_ref(&self.b_c));
        f("w_g", &[d], &self.w_g);
        f("b_g", &[], std::slice::from_ref(&self.b_g));
        f("dt_raw", &[], std::slice::from_ref(&self.dt_raw));
        if let Some(w) = &self.w_v {
            f("w_v", &[d, d], w);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        let d = self.d();
        f("w_c", &[d], &mut self.w_c);
        f("b_c", &[], std::slice::from_mut(&mut self.b_c));
        f("w_g", &[d], &mut self.w_g);
        f("b_g", &[], std::slice::from_mut(&mut self.b_g));
        f("dt_raw", &[], std::slice::from_mut(&mut self.dt_raw));
        if let Some(w) = &mut self.w_v {
            f("w_v", &[d, d], w);
        }
    }
}

/// Pre-activations of the speed and damping heads.
fn head_preactivations<T: Real>(h: &HiddenSequence<T>, p: &LayerParams<T>) -> (Vec<T>, Vec<T>) {
    let mut zc = Vec::with_capacity(h.n);
    let mut zg = Vec::with_capacity(h.n);
    for j in 0..h.n {
        let row = h.row(j);
        let c = row.iter().zip(&p.w_c).fold(p.b_c, |acc, (&x, &w)| acc + x * w);
        let g = row.iter().zip(&p.w_g).fold(p.b_g, |acc, (&x, &w)| acc + x * w);
        zc.push(c);
        zg.push(g);
    }
    (zc, zg)
}

fn check_width<T: Real>(h: &HiddenSequence<T>, p: &LayerParams<T>) -> Result<()> {
    p.validate()?;
    if h.d != p.d() {
        return Err(WaveError::ShapeMismatch {
            what: "hidden width vs layer",
            expected: p.d(),
            found: h.d,
        });
    }
    Ok(())
}

/// `c_j = softplus(H_j·w_c + b_c)`, `γ_j = softplus(H_j·w_g + b_g)`.
pub fn medium_from_hidden<T: Real>(h: &HiddenSequence<T>, p: &LayerParams<T>) -> Result<Medium<T>> {
    check_width(h, p)?;
    let (zc, zg) = head_preactivations(h, p);
    medium_from_preactivations(&zc, &zg)
}

fn medium_from_preactivations<T: Real>(zc: &[T], zg: &[T]) -> Result<Medium<T>> {
    Medium::new(
        Field::new(zc.iter().map(|&z| softplus(z)).collect())?,
        Field::new(zg.iter().map(|&z| softplus(z)).collect())?,
    )
}

/// Recorded forward pass of one wave layer.
#[derive(Clone, Debug)]
pub struct LayerTape<T> {
    params: LayerParams<T>,
    input: HiddenSequence<T>,
    zc: Vec<T>,
    zg: Vec<T>,
    medium: Medium<T>,
    channels: Vec<RolloutTape<T>>,
}

impl<T: Real> LayerTape<T> {
    /// The medium every channel was propagated through.
    pub fn medium(&self) -> &Medium<T> {
        &self.medium
    }

    pub fn channel_tapes(&self) -> &[RolloutTape<T>] {
        &self.channels
    }

    pub fn input(&self) -> &HiddenSequence<T> {
        &self.input
    }
}

/// Gradients of a wave layer: one entry per learnable scalar (held in a
/// `LayerParams`-shaped container) plus the gradient w.r.t. the input.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients<T> {
    pub params: LayerParams<T>,
    pub d_input: HiddenSequence<T>,
}

fn initial_velocity<T: Real>(h: &HiddenSequence<T>, w: &[T]) -> Vec<T> {
    let d = h.d;
    let mut v0 = vec![T::zero(); h.n * d];
    for j in 0..h.n {
        let row = h.row(j);
        let out = &mut v0[j * d..(j + 1) * d];
        for (i, &x) in row.iter().enumerate() {
            let wrow = &w[i * d..(i + 1) * d];
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o = *o + x * wv;
            }
        }
    }
    v0
}

/// Propagates every channel of `h` through the medium derived from `h`.
pub fn wave_layer_forward<T: Real>(
    h: &HiddenSequence<T>,
    p: &LayerParams<T>,
) -> Result<(HiddenSequence<T>, LayerTape<T>)> {
    check_width(h, p)?;
    let grid = shared_grid::<T>(h.n)?;
    let (zc, zg) = head_preactivations(h, p);
    let medium = medium_from_preactivations(&zc, &zg)?;
    let cfg = RolloutConfig::verlet(p.dt(), p.steps)?;
    let v0 = p.w_v.as_ref().map(|w| HiddenSequence::from_parts_unchecked(h.n, h.d, initial_velocity(h, w)));

    let v0_cols = v0.map(|v| v.columns());
    let mut channels = Vec::with_capacity(h.d);
    for (ch, u0) in h.columns().into_iter().enumerate() {
        let u0 = Field::from_vec_unchecked(u0);
        let s0 = match &v0_cols {
            Some(v) => WaveState::new(u0, Field::new(v[ch].clone())?)?,
            None => WaveState::at_rest(u0),
        };
        let tape = record_on_grid(&grid, &s0, &medium, &cfg).map_err(|e| match e {
            WaveError::Overflow { step, .. } => WaveError::Overflow {
                step,
                channel: Some(ch),
            },
            other => other,
        })?;
        channels.push(tape);
    }
    let mut out = HiddenSequence::from_parts_unchecked(h.n, h.d, vec![T::zero(); h.n * h.d]);
    let finals: Vec<&[T]> = channels.iter().map(|t| t.final_state().u().as_slice()).collect();
    out.add_columns(&finals);
    Ok((
        out,
        LayerTape {
            params: p.clone(),
            input: h.clone(),
            zc,
            zg,
            medium,
            channels,
        },
    ))
}

pub fn wave_layer_backward<T: Real>(
    p: &LayerParams<T>,
    tape: &LayerTape<T>,
    d_out: &HiddenSequence<T>,
) -> Result<LayerGradients<T>> {
    if tape.params != *p {
        return Err(WaveError::StaleTape);
    }
    let h = &tape.input;
    d_out.check_dims(h.n, h.d, "layer output cotangent")?;
    let grid = shared_grid::<T>(h.n)?;
    let (n, d) = (h.n, h.d);

    let mut d_input = HiddenSequence::from_parts_unchecked(n, d, vec![T::zero(); n * d]);
    let mut d_u0_cols = Vec::with_capacity(d);
    let mut d_v0_cols = Vec::with_capacity(d);
    let mut d_c = vec![T::zero(); n];
    let mut d_gamma = vec![T::zero(); n];
    let mut d_dt = T::zero();
    let zeros = vec![T::zero(); n];

    for (ch_tape, dy) in tape.channels.iter().zip(d_out.columns()) {
        let g = backward_on_grid(&grid, ch_tape, &dy, &zeros, LaplacianAdjoint::Forward)?;
        for j in 0..n {
            d_c[j] = d_c[j] + g.d_c[j];
            d_gamma[j] = d_gamma[j] + g.d_gamma[j];
        }
        d_dt = d_dt + g.d_dt;
        d_u0_cols.push(g.d_u0);
        d_v0_cols.push(g.d_v0);
    }
    d_input.add_columns(&d_u0_cols);
    let d_v0 = p.w_v.as_ref().map(|_| {
        let mut dv = HiddenSequence::from_parts_unchecked(n, d, vec![T::zero(); n * d]);
        dv.add_columns(&d_v0_cols);
        dv.data
    });

    let mut grads = p.zeros_like();
    for j in 0..n {
        let dzc = d_c[j] * sigmoid(tape.zc[j]);
        let dzg = d_gamma[j] * sigmoid(tape.zg[j]);
        grads.b_c = grads.b_c + dzc;
        grads.b_g = grads.b_g + dzg;
        let row = h.row(j);
        for (i, &x) in row.iter().enumerate() {
            grads.w_c[i] = grads.w_c[i] + dzc * x;
            grads.w_g[i] = grads.w_g[i] + dzg * x;
            let idx = j * d + i;
            d_input.data[idx] = d_input.data[idx] + dzc * p.w_c[i] + dzg * p.w_g[i];
        }
    }
    grads.dt_raw = d_dt * sigmoid(p.dt_raw);

    if let (Some(w), Some(dv), Some(dw)) = (p.w_v.as_ref(), d_v0.as_ref(), grads.w_v.as_mut()) {
        for j in 0..n {
            let row = h.row(j);
            let dvrow = &dv[j * d..(j + 1) * d];
            for i in 0..d {
                let wrow = &w[i * d..(i + 1) * d];
                let mut acc = T::zero();
                for o in 0..d {
                    dw[i * d + o] = dw[i * d + o] + row[i] * dvrow[o];
                    acc = acc + dvrow[o] * wrow[o];
                }
                let idx = j * d + i;
                d_input.data[idx] = d_input.data[idx] + acc;
            }
        }
    }

    Ok(LayerGradients {
        params: grads,
        d_input,
    })
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-position normalization over channels with learnable scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct LayerNormTape<T> {
    normalized: HiddenSequence<T>,
    inv_std: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    /// Unit scale, zero shift.
    pub fn new(d: usize) -> Self {
        Self {
            scale: vec![T::one(); d],
            shift: vec![T::zero(); d],
        }
    }

    pub fn forward(&self, h: &HiddenSequence<T>) -> Result<(HiddenSequence<T>, LayerNormTape<T>)> {
        if h.d != self.scale.len() {
            return Err(WaveError::ShapeMismatch {
                what: "layer norm width",
                expected: self.scale.len(),
                found: h.d,
            });
        }
        let (n, d) = (h.n, h.d);
        let dd = T::from_usize_lossy(d);
        let mut xhat = vec![T::zero(); n * d];
        let mut out = vec![T::zero(); n * d];
        let mut inv_std = Vec::with_capacity(n);
        for j in 0..n {
            let row = h.row(j);
            let mean = row.iter().fold(T::zero(), |a, &x| a + x) / dd;
            let var = row.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean)) / dd;
            let is = T::one() / (var + T::lit(LAYER_NORM_EPS)).sqrt();
            inv_std.push(is);
            for i in 0..d {
                let xh = (row[i] - mean) * is;
                xhat[j * d + i] = xh;
                out[j * d + i] = xh * self.scale[i] + self.shift[i];
            }
        }
        Ok((
            HiddenSequence::new(n, d, out)?,
            LayerNormTape {
                normalized: HiddenSequence::from_parts_unchecked(n, d, xhat),
                inv_std,
            },
        ))
    }

    /// Returns `(gradient-valued LayerNorm, d_input)`.
    pub fn backward(&self, tape: &LayerNormTape<T>, d_out: &HiddenSequence<T>) -> Result<(Self, HiddenSequence<T>)> {
        let xhat = &tape.normalized;
        d_out.check_dims(xhat.n, xhat.d, "layer norm cotangent")?;
        let (n, d) = (xhat.n, xhat.d);
        let dd = T::from_usize_lossy(d);
        let mut grads = Self {
            scale: vec![T::zero(); d],
            shift: vec![T::zero(); d],
        };
        let mut dx = vec![T::zero(); n * d];
        let mut dxhat = vec![T::zero(); d];
        for j in 0..n {
            let xr = xhat.row(j);
            let gr = d_out.row(j);
            let mut sum = T::zero();
            let mut sum_x = T::zero();
            for i in 0..d {
                grads.scale[i] = grads.scale[i] + gr[i] * xr[i];
                grads.shift[i] = grads.shift[i] + gr[i];
                dxhat[i] = gr[i] * self.scale[i];
                sum = sum + dxhat[i];
                sum_x = sum_x + dxhat[i] * xr[i];
            }
            let k = tape.inv_std[j] / dd;
            for i in 0..d {
                dx[j * d + i] = k * (dd * dxhat[i] - sum - xr[i] * sum_x);
            }
        }
        Ok((grads, HiddenSequence::new(n, d, dx)?))
    }
}

impl<T: Real> Parameters<T> for LayerNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        f("scale", &[self.scale.len()], &self.scale);
        f("shift", &[self.shift.len()], &self.shift);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        let d = self.scale.len();
        f("scale", &[d], &mut self.scale);
        f("shift", &[d], &mut self.shift);
    }
}

/// Pre-norm residual block: `H' = H + wave(layer_norm(H))`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub norm: LayerNorm<T>,
    pub wave: LayerParams<T>,
}

impl<T: Real> Parameters<T> for BlockParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.norm.visit(&mut |name, shape, xs| f(&format!("norm.{name}"), shape, xs));
        self.wave.visit(&mut |name, shape, xs| f(&format!("wave.{name}"), shape, xs));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.norm.visit_mut(&mut |name, shape, xs| f(&format!("norm.{name}"), shape, xs));
        self.wave.visit_mut(&mut |name, shape, xs| f(&format!("wave.{name}"), shape, xs));
    }
}

#[derive(Clone, Debug)]
pub struct BlockTape<T> {
    norm: LayerNormTape<T>,
    layer: LayerTape<T>,
}

impl<T: Real> BlockTape<T> {
    pub fn layer(&self) -> &LayerTape<T> {
        &self.layer
    }
}

pub fn block_forward<T: Real>(
    h: &HiddenSequence<T>,
    block: &BlockParams<T>,
) -> Result<(HiddenSequence<T>, BlockTape<T>)> {
    let (normed, norm) = block.norm.forward(h)?;
    let (wave_out, layer) = wave_layer_forward(&normed, &block.wave)?;
    let data = h.data.iter().zip(&wave_out.data).map(|(&a, &b)| a + b).collect();
    Ok((HiddenSequence::new(h.n, h.d, data)?, BlockTape { norm, layer }))
}

/// Returns `(gradient-valued BlockParams, d_input)`.
pub fn block_backward<T: Real>(
    block: &BlockParams<T>,
    tape: &BlockTape<T>,
    d_out: &HiddenSequence<T>,
) -> Result<(BlockParams<T>, HiddenSequence<T>)> {
    let layer = wave_layer_backward(&block.wave, &tape.layer, d_out)?;
    let (norm, d_norm_in) = block.norm.backward(&tape.norm, &layer.d_input)?;
    let data = d_out.data.iter().zip(&d_norm_in.data).map(|(&a, &b)| a + b).collect();
    Ok((
        BlockParams {
            norm,
            wave: layer.params,
        },
        HiddenSequence::new(d_out.n, d_out.d, data)?,
    ))
}

/// Dense map `d_in → d_out`, weight row-major `[input][output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            weight: vec![T::zero(); d_in * d_out],
            bias: vec![T::zero(); d_out],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut l = Self::zeros(d, d);
        for i in 0..d {
            l.weight[i * d + i] = T::one();
        }
        l
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&self.weight[i * self.d_out..(i + 1) * self.d_out]) {
                *o = *o + xi * w;
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and returns `d_x`.
    pub fn backprop(&self, x: &[T], dy: &[T], grads: &mut Self) -> Vec<T> {
        let mut dx = vec![T::zero(); self.d_in];
        for (b, &g) in grads.bias.iter_mut().zip(dy) {
            *b = *b + g;
        }
        for i in 0..self.d_in {
            let w = &self.weight[i * self.d_out..(i + 1) * self.d_out];
            let gw = &mut grads.weight[i * self.d_out..(i + 1) * self.d_out];
            let mut acc = T::zero();
            for o in 0..self.d_out {
                gw[o] = gw[o] + x[i] * dy[o];
                acc = acc + w[o] * dy[o];
            }
            dx[i] = acc;
        }
        dx
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        f("weight", &[self.d_in, self.d_out], &self.weight);
        f("bias", &[self.d_out], &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        f("weight", &[self.d_in, self.d_out], &mut self.weight);
        f("bias", &[self.d_out], &mut self.bias);
    }
}

/// How model inputs become an `n × d` hidden sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum InputMap<T> {
    /// Field inputs pass through unchanged (width must equal `d`).
    Identity,
    /// Token lookup into a `vocab × d` table.
    Embedding { vocab: usize, table: Vec<T> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    /// Linear map applied at every position (regression).
    PerPosition,
    /// Mean over positions, then linear (classification logits).
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DtSharing {
    /// Each block learns its own time step.
    #[default]
    PerLayer,
    /// Every block uses block 0's time step.
    Shared,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub d: usize,
    pub input: InputMap<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub readout_kind: ReadoutKind,
    pub readout: Linear<T>,
    pub dt_sharing: DtSharing,
}

/// Shape of a model to build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub blocks: usize,
    /// Vocabulary size for token inputs; `None` for field inputs.
    pub vocab: Option<usize>,
    pub readout: ReadoutKind,
    pub out_dim: usize,
    #[serde(default)]
    pub layer: LayerInit,
    #[serde(default)]
    pub dt_sharing: DtSharing,
}

impl<T: Real> ModelParams<T> {
    /// Embedding entries ~ N(0, 1), readout weights ~ N(0, 1/d), heads per
    /// `cfg.layer`.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        if cfg.d == 0 || cfg.out_dim == 0 {
            return Err(WaveError::InvalidConfig("model width and output size must be positive".into()));
        }
        let input = match cfg.vocab {
            Some(0) => return Err(WaveError::InvalidConfig("vocabulary must be non-empty".into())),
            Some(vocab) => InputMap::Embedding {
                vocab,
                table: normal_vec(rng, vocab * cfg.d, 1.0),
            },
            None => InputMap::Identity,
        };
        let blocks = (0..cfg.blocks)
            .map(|_| BlockParams {
                norm: LayerNorm::new(cfg.d),
                wave: LayerParams::random(cfg.d, &cfg.layer, rng),
            })
            .collect();
        let mut readout = Linear::zeros(cfg.d, cfg.out_dim);
        readout.weight = normal_vec(rng, cfg.d * cfg.out_dim, 1.0 / (cfg.d as f64).sqrt());
        Ok(Self {
            d: cfg.d,
            input,
            blocks,
            readout_kind: cfg.readout,
            readout,
            dt_sharing: cfg.dt_sharing,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let InputMap::Embedding { vocab, table } = &self.input {
            if table.len() != vocab * self.d {
                return Err(WaveError::ShapeMismatch {
                    what: "embedding table",
                    expected: vocab * self.d,
                    found: table.len(),
                });
            }
        }
        for b in &self.blocks {
            b.wave.validate()?;
            if b.wave.d() != self.d || b.norm.scale.len() != self.d || b.norm.shift.len() != self.d {
                return Err(WaveError::ShapeMismatch {
                    what: "block width",
                    expected: self.d,
                    found: b.wave.d(),
                });
            }
        }
        if self.readout.d_in != self.d {
            return Err(WaveError::ShapeMismatch {
                what: "readout input width",
                expected: self.d,
                found: self.readout.d_in,
            });
        }
        Ok(())
    }

    /// Block parameters as seen by the forward pass (time step tied to
    /// block 0 under [`DtSharing::Shared`]).
    pub fn effective_block(&self, i: usize) -> BlockParams<T> {
        let mut b = self.blocks[i].clone();
        if self.dt_sharing == DtSharing::Shared {
            b.wave.dt_raw = self.blocks[0].wave.dt_raw;
        }
        b
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, _, xs| xs.iter_mut().for_each(|x| *x = T::zero()));
        z
    }

    /// Hidden sequence entering the first block.
    pub fn embed(&self, input: &ModelInput<'_, T>) -> Result<HiddenSequence<T>> {
        match (&self.input, input) {
            (InputMap::Identity, ModelInput::Field(h)) => {
                if h.d != self.d {
                    return Err(WaveError::ShapeMismatch {
                        what: "field input width",
                        expected: self.d,
                        found: h.d,
                    });
                }
                Ok((*h).clone())
            }
            (InputMap::Embedding { vocab, table }, ModelInput::Tokens(tokens)) => {
                if let Some(&token) = tokens.iter().find(|&&t| t >= *vocab) {
                    return Err(WaveError::TokenOutOfRange { token, vocab: *vocab });
                }
                let d = self.d;
                let mut data = Vec::with_capacity(tokens.len() * d);
                for &t in tokens.iter() {
                    data.extend_from_slice(&table[t * d..(t + 1) * d]);
                }
                HiddenSequence::new(tokens.len(), d, data)
            }
            (InputMap::Identity, ModelInput::Tokens(_)) => Err(WaveError::InputKind("model expects a field input")),
            (InputMap::Embedding { .. }, ModelInput::Field(_)) => {
                Err(WaveError::InputKind("model expects token input"))
            }
        }
    }
}

impl<T: Real> Parameters<T> for ModelParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        if let InputMap::Embedding { vocab, table } = &self.input {
            f("embed.table", &[*vocab, self.d], table);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&mut |name, shape, xs| f(&format!("blocks.{i}.{name}"), shape, xs));
        }
        self.readout.visit(&mut |name, shape, xs| f(&format!("readout.{name}"), shape, xs));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        let d = self.d;
        if let InputMap::Embedding { vocab, table } = &mut self.input {
            f("embed.table", &[*vocab, d], table);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&mut |name, shape, xs| f(&format!("blocks.{i}.{name}"), shape, xs));
        }
        self.readout.visit_mut(&mut |name, shape, xs| f(&format!("readout.{name}"), shape, xs));
    }
}

#[derive(Clone, Copy, Debug)]
pub enum ModelInput<'a, T> {
    Tokens(&'a [usize]),
    Field(&'a HiddenSequence<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelOutput<T> {
    /// `n × out_dim` per-position predictions.
    Field(HiddenSequence<T>),
    Logits(Vec<T>),
}

impl<T: Real> ModelOutput<T> {
    pub fn as_slice(&self) -> &[T] {
        match self {
            ModelOutput::Field(h) => h.as_slice(),
            ModelOutput::Logits(l) => l,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelTape<T> {
    tokens: Option<Vec<usize>>,
    blocks: Vec<BlockTape<T>>,
    last_hidden: HiddenSequence<T>,
}

impl<T: Real> ModelTape<T> {
    pub fn blocks(&self) -> &[BlockTape<T>] {
        &self.blocks
    }

    /// Hidden sequence fed to the readout.
    pub fn last_hidden(&self) -> &HiddenSequence<T> {
        &self.last_hidden
    }
}

/// embed → blocks → readout.
pub fn model_forward<T: Real>(
    params: &ModelParams<T>,
    input: ModelInput<'_, T>,
) -> Result<(ModelOutput<T>, ModelTape<T>)> {
    params.validate()?;
    let mut h = params.embed(&input)?;
    let mut tapes = Vec::with_capacity(params.blocks.len());
    for i in 0..params.blocks.len() {
        let (next, tape) = block_forward(&h, &params.effective_block(i))?;
        h = next;
        tapes.push(tape);
    }
    let output = match params.readout_kind {
        ReadoutKind::PerPosition => {
            let mut data = Vec::with_capacity(h.n * params.readout.d_out);
            for j in 0..h.n {
                data.extend(params.readout.apply(h.row(j)));
            }
            ModelOutput::Field(HiddenSequence::new(h.n, params.readout.d_out, data)?)
        }
        ReadoutKind::Pooled => ModelOutput::Logits(params.readout.apply(&mean_rows(&h))),
    };
    let tokens = match input {
        ModelInput::Tokens(t) => Some(t.to_vec()),
        ModelInput::Field(_) => None,
    };
    Ok((
        output,
        ModelTape {
            tokens,
            blocks: tapes,
            last_hidden: h,
        },
    ))
}

fn mean_rows<T: Real>(h: &HiddenSequence<T>) -> Vec<T> {
    let mut acc = vec![T::zero(); h.d];
    for j in 0..h.n {
        for (a, &x) in acc.iter_mut().zip(h.row(j)) {
            *a = *a + x;
        }
    }
    let inv = T::one() / T::from_usize_lossy(h.n);
    acc.iter_mut().for_each(|a| *a = *a * inv);
    acc
}

/// Gradient of the model output contracted with `d_output`. Returns the
/// parameter gradients and, for field inputs, the input gradient.
pub fn model_backward<T: Real>(
    params: &ModelParams<T>,
    tape: &ModelTape<T>,
    d_output: &ModelOutput<T>,
) -> Result<(ModelParams<T>, Option<HiddenSequence<T>>)> {
    let h = &tape.last_hidden;
    let (n, d) = (h.n, h.d);
    let mut grads = params.zeros_like();
    let mut dh = vec![T::zero(); n * d];
    match (params.readout_kind, d_output) {
        (ReadoutKind::PerPosition, ModelOutput::Field(dy)) => {
            dy.check_dims(n, params.readout.d_out, "readout cotangent")?;
            for j in 0..n {
                let dx = params.readout.backprop(h.row(j), dy.row(j), &mut grads.readout);
                dh[j * d..(j + 1) * d].copy_from_slice(&dx);
            }
        }
        (ReadoutKind::Pooled, ModelOutput::Logits(dy)) => {
            if dy.len() != params.readout.d_out {
                return Err(WaveError::ShapeMismatch {
                    what: "logit cotangent",
                    expected: params.readout.d_out,
                    found: dy.len(),
                });
            }
            let dx = params.readout.backprop(&mean_rows(h), dy, &mut grads.readout);
            let inv = T::one() / T::from_usize_lossy(n);
            for j in 0..n {
                for i in 0..d {
                    dh[j * d + i] = dx[i] * inv;
                }
            }
        }
        _ => return Err(WaveError::InputKind("output cotangent does not match the readout")),
    }
    let mut dh = HiddenSequence::new(n, d, dh)?;
    for i in (0..params.blocks.len()).rev() {
        let (bg, d_in) = block_backward(&params.effective_block(i), &tape.blocks[i], &dh)?;
        grads.blocks[i] = bg;
        dh = d_in;
    }
    if params.dt_sharing == DtSharing::Shared && !grads.blocks.is_empty() {
        let total = grads.blocks.iter().fold(T::zero(), |a, b| a + b.wave.dt_raw);
        for b in grads.blocks.iter_mut() {
            b.wave.dt_raw = T::zero();
        }
        grads.blocks[0].wave.dt_raw = total;
    }
    match (&mut grads.input, &tape.tokens) {
        (InputMap::Embedding { table, .. }, Some(tokens)) => {
            for (j, &t) in tokens.iter().enumerate() {
                for i in 0..d {
                    table[t * d + i] = table[t * d + i] + dh.get(j, i);
                }
            }
            Ok((grads, None))
        }
        _ => Ok((grads, Some(dh))),
    }
}
