//! Periodic-grid Fourier machinery.
//!
//! Fields live on a periodic 1D grid of `n` points with unit spacing, so the
//! angular wavenumber of mode `m` is `2π m̃ / n` with `m̃` the signed index.
//! The Laplacian multiplies each Fourier coefficient by `-ω²` (Nyquist term
//! kept); the first derivative multiplies by `iω` with the Nyquist term
//! forced to zero so that real fields map to real fields.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::ops::Index;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, WaveError};
use crate::scalar::{all_finite, dot, Real};

/// Real samples of a field on the periodic grid.
///
/// Construction guarantees `n >= 2` and that every value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(WaveError::InvalidGrid { n: values.len() });
        }
        if let Some(index) = values.iter().position(|x| !x.is_finite()) {
            return Err(WaveError::NonFinite {
                what: "field",
                index,
            });
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(vec![T::zero(); n])
    }

    pub fn constant(n: usize, value: T) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> T) -> Result<Self> {
        Self::new((0..n).map(f).collect())
    }

    /// Wraps values already known to be finite and of length >= 2.
    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        debug_assert!(values.len() >= 2 && all_finite(&values));
        Self { values }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false: a field has at least two samples.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.values.iter()
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn mean(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &x| a + x) / T::from_usize_lossy(self.len())
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.values.iter().map(|&x| x * factor).collect())
    }

    /// Cyclic shift: `out[(j + shift) % n] = self[j]`.
    pub fn rolled(&self, shift: usize) -> Self {
        let n = self.len();
        let mut out = vec![T::zero(); n];
        for (j, &x) in self.values.iter().enumerate() {
            out[(j + shift) % n] = x;
        }
        Self { values: out }
    }
}

impl<T> Index<usize> for Field<T> {
    type Output = T;

    fn index(&self, index: usize) -> &T {
        &self.values[index]
    }
}

/// Angular wavenumbers of the FFT bins of an `n`-point unit-spacing grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WavenumberTable<T> {
    omegas: Vec<T>,
}

impl<T: Real> WavenumberTable<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.omegas
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// Largest |ω| on the grid; equals π for even `n`.
    pub fn max_abs(&self) -> T {
        self.omegas.iter().fold(T::zero(), |m, w| m.max(w.abs()))
    }
}

impl<T> Index<usize> for WavenumberTable<T> {
    type Output = T;

    fn index(&self, index: usize) -> &T {
        &self.omegas[index]
    }
}

/// Signed FFT index: `m` for `m <= n/2`, `m - n` otherwise.
pub fn signed_mode(m: usize, n: usize) -> isize {
    if m <= n / 2 {
        m as isize
    } else {
        m as isize - n as isize
    }
}

pub fn wavenumbers<T: Real>(n: usize) -> Result<WavenumberTable<T>> {
    if n < 2 {
        return Err(WaveError::InvalidGrid { n });
    }
    let scale = T::TAU() / T::from_usize_lossy(n);
    let omegas = (0..n)
        .map(|m| {
            let s = signed_mode(m, n);
            let mag = T::from_usize_lossy(s.unsigned_abs()) * scale;
            if s < 0 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Ok(WavenumberTable { omegas })
}

impl<T> AsRef<[T]> for Field<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

/// FFT plans and spectral multipliers for one grid size.
pub struct SpectralGrid<T: Real> {
    n: usize,
    omegas: WavenumberTable<T>,
    // -ω²/n: Laplacian multiplier with the inverse-FFT normalization folded in.
    laplacian_mult: Vec<T>,
    // ω/n with the Nyquist bin zeroed; applied as multiplication by i·(ω/n).
    gradient_mult: Vec<T>,
    fft: Arc<dyn Fft<T>>,
    ifft: Arc<dyn Fft<T>>,
    scratch_len: usize,
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
    // Reusable buffers for the real-transform path; one set per call.
    pool: Mutex<Vec<Workspace<T>>>,
}

struct Workspace<T> {
    real: Vec<T>,
    half: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Real> std::fmt::Debug for SpectralGrid<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid").field("n", &self.n).finish()
    }
}

impl<T: Real> SpectralGrid<T> {
    pub fn new(n: usize) -> Result<Self> {
        let omegas = wavenumbers::<T>(n)?;
        let inv_n = T::one() / T::from_usize_lossy(n);
        let laplacian_mult = omegas.as_slice().iter().map(|&w| -(w * w) * inv_n).collect();
        let gradient_mult = omegas
            .as_slice()
            .iter()
            .enumerate()
            .map(|(m, &w)| {
                if n.is_multiple_of(2) && m == n / 2 {
                    T::zero()
                } else {
                    w * inv_n
                }
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let scratch_len = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());
        let mut real_planner = RealFftPlanner::new();
        let r2c = real_planner.plan_fft_forward(n);
        let c2r = real_planner.plan_fft_inverse(n);
        Ok(Self {
            n,
            omegas,
            laplacian_mult,
            gradient_mult,
            fft,
            ifft,
            scratch_len,
            r2c,
            c2r,
            pool: Mutex::new(Vec::new()),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn wavenumbers(&self) -> &WavenumberTable<T> {
        &self.omegas
    }

    fn complexify(input: &[T]) -> Vec<Complex<T>> {
        input.iter().map(|&x| Complex::new(x, T::zero())).collect()
    }

    fn run(&self, plan: &Arc<dyn Fft<T>>, buf: &mut [Complex<T>]) {
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.scratch_len];
        plan.process_with_scratch(buf, &mut scratch);
    }

    fn checkout(&self) -> Workspace<T> {
        let pooled = self.pool.lock().unwrap_or_else(|e| e.into_inner()).pop();
        pooled.unwrap_or_else(|| Workspace {
            real: self.r2c.make_input_vec(),
            half: self.r2c.make_output_vec(),
            scratch: vec![
                Complex::new(T::zero(), T::zero());
                self.r2c.get_scratch_len().max(self.c2r.get_scratch_len())
            ],
        })
    }

    /// `out = IDFT(mult ⊙ DFT(input))` over the non-negative half spectrum.
    /// `mult` must keep the DC and Nyquist bins real.
    fn apply_multiplier<F>(&self, input: &[T], out: &mut [T], mult: F)
    where
        F: Fn(Complex<T>, usize) -> Complex<T>,
    {
        assert_eq!(input.len(), self.n, "grid length");
        assert_eq!(out.len(), self.n, "grid length");
        let mut ws = self.checkout();
        ws.real.copy_from_slice(input);
        self.r2c
            .process_with_scratch(&mut ws.real, &mut ws.half, &mut ws.scratch)
            .expect("buffer lengths come from the plan");
        for (m, z) in ws.half.iter_mut().enumerate() {
            *z = mult(*z, m);
        }
        // Real-valued by construction; clear round-off before the inverse.
        ws.half[0].im = T::zero();
        if self.n.is_multiple_of(2) {
            ws.half[self.n / 2].im = T::zero();
        }
        self.c2r
            .process_with_scratch(&mut ws.half, out, &mut ws.scratch)
            .expect("buffer lengths come from the plan");
        self.pool.lock().unwrap_or_else(|e| e.into_inner()).push(ws);
    }

    /// Unnormalized forward DFT of a real signal.
    pub fn forward(&self, input: &[T]) -> Vec<Complex<T>> {
        assert_eq!(input.len(), self.n, "grid length");
        let mut buf = Self::complexify(input);
        self.run(&self.fft, &mut buf);
        buf
    }

    /// Normalized inverse DFT, so that `inverse(forward(f)) == f`.
    pub fn inverse(&self, spectrum: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(spectrum.len(), self.n, "grid length");
        let mut buf = spectrum.to_vec();
        self.run(&self.ifft, &mut buf);
        let inv_n = T::one() / T::from_usize_lossy(self.n);
        buf.iter_mut().for_each(|z| *z = *z * inv_n);
        buf
    }

    /// Writes `IFFT(-ω² ⊙ FFT(input))` into `out`.
    pub fn laplacian_into(&self, input: &[T], out: &mut [T]) {
        self.apply_multiplier(input, out, |z, m| z * self.laplacian_mult[m]);
    }

    /// Transpose of the Laplacian evaluated along the reversed transform
    /// order (inverse transform, multiply, forward transform). Equal to
    /// [`Self::laplacian_into`] up to round-off because the operator is
    /// symmetric.
    pub fn laplacian_transpose_into(&self, input: &[T], out: &mut [T]) {
        assert_eq!(input.len(), self.n, "grid length");
        assert_eq!(out.len(), self.n, "grid length");
        let mut buf = Self::complexify(input);
        self.run(&self.ifft, &mut buf);
        for (z, &m) in buf.iter_mut().zip(&self.laplacian_mult) {
            *z = *z * m;
        }
        self.run(&self.fft, &mut buf);
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re;
        }
    }

    pub fn laplacian_vec(&self, input: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        self.laplacian_into(input, &mut out);
        out
    }

    /// Writes `IFFT(iω ⊙ FFT(input))` into `out`, Nyquist multiplier zeroed.
    pub fn gradient_into(&self, input: &[T], out: &mut [T]) {
        self.apply_multiplier(input, out, |z, m| {
            // i·g·(a + ib) = -g·b + i·g·a
            let g = self.gradient_mult[m];
            Complex::new(-g * z.im, g * z.re)
        });
    }

    pub fn gradient_vec(&self, input: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        self.gradient_into(input, &mut out);
        out
    }

    pub fn laplacian(&self, f: &Field<T>) -> Result<Field<T>> {
        self.check_len(f.len())?;
        Ok(Field::from_vec_unchecked(self.laplacian_vec(f.as_slice())))
    }

    pub fn gradient(&self, f: &Field<T>) -> Result<Field<T>> {
        self.check_len(f.len())?;
        Ok(Field::from_vec_unchecked(self.gradient_vec(f.as_slice())))
    }

    pub(crate) fn check_len(&self, found: usize) -> Result<()> {
        if found == self.n {
            Ok(())
        } else {
            Err(WaveError::ShapeMismatch {
                what: "field length",
                expected: self.n,
                found,
            })
        }
    }
}

type GridCache = Mutex<HashMap<(TypeId, usize), Arc<dyn Any + Send + Sync>>>;

/// Process-wide cache of grids keyed by scalar type and size.
pub fn shared_grid<T: Real>(n: usize) -> Result<Arc<SpectralGrid<T>>> {
    static CACHE: OnceLock<GridCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (TypeId::of::<T>(), n);
    if let Some(hit) = cache.lock().expect("grid cache poisoned").get(&key) {
        return Ok(Arc::clone(hit)
            .downcast::<SpectralGrid<T>>()
            .expect("cache keyed by TypeId"));
    }
    let grid = Arc::new(SpectralGrid::<T>::new(n)?);
    cache
        .lock()
        .expect("grid cache poisoned")
        .insert(key, grid.clone() as Arc<dyn Any + Send + Sync>);
    Ok(grid)
}

pub fn spectral_laplacian<T: Real>(f: &Field<T>) -> Field<T> {
    let grid = shared_grid::<T>(f.len()).expect("field length is a valid grid");
    Field::from_vec_unchecked(grid.laplacian_vec(f.as_slice()))
}

pub fn spectral_gradient<T: Real>(f: &Field<T>) -> Field<T> {
    let grid = shared_grid::<T>(f.len()).expect("field length is a valid grid");
    Field::from_vec_unchecked(grid.gradient_vec(f.as_slice()))
}
