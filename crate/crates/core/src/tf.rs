//! Discrete operator algebra on the periodic `L`-point lattice.
//!
//! Conventions (all indices modulo `L`):
//!
//! * TF shift: `(S(m,k) x)[n] = x[n-m] e^{+i2πkn/L}`.
//! * Spreading function at alpha = 1/2: `S[m,k] = Σ_n h[n, n-m] e^{-i2πkn/L}`;
//!   other alphas multiply by `e^{-i2π(α-1/2)θ(m,k)/L}` where `θ` is the
//!   centered lag-Doppler product of [`lattice::lag_doppler_product`].
//! * Symplectic DFT: `S[m,k] = (1/L) Σ_{n,l} F[n,l] e^{-i2π(kn-ml)/L}` and its inverse.
//!
//! With these choices `weyl_symbol(I) = 1`, `spreading_function(I) = L δ₀`
//! and `<A,B>_HS = (1/L) <S_A, S_B>`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, TfError};
use crate::lattice::{self, wrap};
use crate::linalg::{hermitian_defect, CMatrix};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Hermitian symmetry tolerance used when classifying kernels.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A length-`L` complex signal on the periodic unit-spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<Complex64>,
}

impl Signal {
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        lattice::check_len(samples.len())?;
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![ZERO; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Kernel `h[n, n']` of a linear operator on the grid (row = output time).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorKernel {
    entries: CMatrix,
    hermitian: bool,
    psd: bool,
}

impl OperatorKernel {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(TfError::DimensionMismatch {
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        lattice::check_len(entries.nrows())?;
        let hermitian = hermitian_defect(&entries) <= HERMITIAN_TOL;
        Ok(Self {
            entries,
            hermitian,
            psd: false,
        })
    }

    /// Marks the kernel as positive semidefinite; callers vouch for it.
    pub(crate) fn with_psd(mut self) -> Self {
        self.psd = self.hermitian;
        self
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        Self::new(CMatrix::from_fn(len, len, f))
    }

    pub fn identity(len: usize) -> Result<Self> {
        Ok(Self::new(CMatrix::identity(len, len))?.with_psd())
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Ok(Self::new(CMatrix::zeros(len, len))?.with_psd())
    }

    /// Rank-one operator `g ⊗ g`, i.e. `x ↦ <x, g> g`.
    pub fn rank_one(g: &[Complex64]) -> Result<Self> {
        let n = g.len();
        Ok(Self::new(CMatrix::from_fn(n, n, |i, j| g[i] * g[j].conj()))?.with_psd())
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_psd(&self) -> bool {
        self.psd
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// Squared Hilbert-Schmidt norm `Σ |h[n,n']|²`.
    pub fn hs_norm_sqr(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_norm_sqr().sqrt()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            entries: self.entries.adjoint(),
            hermitian: self.hermitian,
            psd: self.psd,
        }
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        check_same(self.len(), other.len())?;
        Self::new(&self.entries * &other.entries)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            entries: &self.entries * Complex64::new(c, 0.0),
            hermitian: self.hermitian,
            psd: self.psd && c >= 0.0,
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same(self.len(), other.len())?;
        Self::new(&self.entries - &other.entries)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same(self.len(), other.len())?;
        Self::new(&self.entries + &other.entries)
    }

    pub fn apply(&self, x: &Signal) -> Result<Signal> {
        check_same(self.len(), x.len())?;
        let v = &self.entries * nalgebra::DVector::from_column_slice(x.samples());
        Signal::new(v.iter().copied().collect())
    }
}

/// An `L × L` field over (time sample `n`, frequency bin `l`).
#[derive(Debug, Clone, PartialEq)]
pub struct TfField {
    pub values: CMatrix,
    pub alpha: f64,
}

/// An `L × L` field over (lag `m`, Doppler bin `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityField {
    pub values: CMatrix,
    pub alpha: f64,
}

impl TfField {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest imaginary part relative to the largest modulus.
    pub fn imag_ratio(&self) -> f64 {
        imag_ratio(&self.values)
    }

    /// Real parts as a row-major `L × L` table.
    pub fn real_part(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.values[(i, j)].re).collect())
            .collect()
    }
}

impl AmbiguityField {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn imag_ratio(m: &CMatrix) -> f64 {
    let peak = m.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let im = m.iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
    if peak == 0.0 {
        0.0
    } else {
        im / peak
    }
}

pub(crate) fn check_same(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(TfError::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_nan() || alpha.abs() > 0.5 {
        return Err(TfError::AlphaOutOfRange(alpha));
    }
    Ok(())
}

/// `e^{+i2πj/L}` for `j` reduced modulo `L`.
#[inline]
pub(crate) fn unit_root(j: i64, len: usize) -> Complex64 {
    let j = wrap(j, len);
    Complex64::from_polar(1.0, 2.0 * PI * j as f64 / len as f64)
}

/// Phase `e^{-i2π(α-1/2)θ(m,k)/L}` taking the alpha = 1/2 spreading
/// function to the alpha one.
#[inline]
pub fn alpha_phase(alpha: f64, m: usize, k: usize, len: usize) -> Complex64 {
    let theta = lattice::lag_doppler_product(m, k, len) as f64;
    Complex64::from_polar(1.0, -2.0 * PI * (alpha - 0.5) * theta / len as f64)
}

/// Forward and inverse unnormalized FFTs of one length.
pub(crate) struct FftPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub(crate) fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    /// In place `X[k] = Σ x[n] e^{-i2πkn/L}`.
    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
    }

    /// In place `x[n] = Σ X[k] e^{+i2πkn/L}` (no 1/L).
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
    }
}

/// `y[n] = x[n-m] e^{+i2πkn/L}`.
pub fn tf_shift(x: &Signal, m: i64, k: i64) -> Signal {
    let len = x.len();
    let s = x.samples();
    let samples = (0..len)
        .map(|n| s[wrap(n as i64 - m, len)] * unit_root(k * n as i64, len))
        .collect();
    Signal { samples }
}

/// `S(m,k) P S(m,k)⁺`, kernel `p[n-m, n'-m] e^{+i2πk(n-n')/L}`.
pub fn operator_tf_shift(p: &OperatorKernel, m: i64, k: i64) -> OperatorKernel {
    let len = p.len();
    let h = p.entries();
    let entries = CMatrix::from_fn(len, len, |a, b| {
        h[(wrap(a as i64 - m, len), wrap(b as i64 - m, len))]
            * unit_root(k * (a as i64 - b as i64), len)
    });
    OperatorKernel {
        entries,
        hermitian: p.hermitian,
        psd: p.psd,
    }
}

/// Hermitian Hilbert-Schmidt pairing `Σ a[n,n'] conj(b[n,n'])`.
pub fn hs_inner(a: &OperatorKernel, b: &OperatorKernel) -> Result<Complex64> {
    check_same(a.len(), b.len())?;
    Ok(a.entries()
        .iter()
        .zip(b.entries().iter())
        .map(|(x, y)| x * y.conj())
        .sum())
}

/// Generalized spreading function of `h` at the given `alpha`.
pub fn spreading_function(h: &OperatorKernel, alpha: f64) -> Result<AmbiguityField> {
    check_alpha(alpha)?;
    let len = h.len();
    let fft = FftPair::new(len);
    let k = h.entries();
    let mut values = CMatrix::zeros(len, len);
    let mut buf = vec![ZERO; len];
    for m in 0..len {
        for (n, b) in buf.iter_mut().enumerate() {
            *b = k[(n, wrap(n as i64 - m as i64, len))];
        }
        fft.forward(&mut buf);
        for (dk, b) in buf.iter().enumerate() {
            values[(m, dk)] = b * alpha_phase(alpha, m, dk, len);
        }
    }
    Ok(AmbiguityField { values, alpha })
}

/// Exact inverse of [`spreading_function`].
pub fn kernel_from_spreading(s: &AmbiguityField) -> Result<OperatorKernel> {
    check_alpha(s.alpha)?;
    let len = s.len();
    lattice::check_len(len)?;
    let fft = FftPair::new(len);
    let scale = 1.0 / len as f64;
    let mut entries = CMatrix::zeros(len, len);
    let mut buf = vec![ZERO; len];
    for m in 0..len {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = s.values[(m, k)] * alpha_phase(s.alpha, m, k, len).conj();
        }
        fft.inverse(&mut buf);
        for (n, b) in buf.iter().enumerate() {
            entries[(n, wrap(n as i64 - m as i64, len))] = b * scale;
        }
    }
    OperatorKernel::new(entries)
}

/// Direction of [`symplectic_dft`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Time-frequency field to lag-Doppler field.
    Forward,
    /// Lag-Doppler field to time-frequency field.
    Inverse,
}

/// Symplectic DFT on raw `L × L` arrays.
///
/// Forward: `S[m,k] = (1/L) Σ F[n,l] e^{-i2π(kn - ml)/L}`. With this sign
/// pairing the transform is an involution, so both directions run the same
/// row/column pass; `direction` only documents intent at call sites.
pub fn symplectic_dft(input: &CMatrix, _direction: Direction) -> CMatrix {
    let len = input.nrows();
    let fft = FftPair::new(len);
    let scale = 1.0 / len as f64;
    // e^{+} transform along each row, then e^{-} along each column; the
    // row index of the input becomes the column index of the output.
    let mut tmp = CMatrix::zeros(len, len);
    let mut buf = vec![ZERO; len];
    for r in 0..len {
        for (c, b) in buf.iter_mut().enumerate() {
            *b = input[(r, c)];
        }
        fft.inverse(&mut buf);
        for (c, b) in buf.iter().enumerate() {
            tmp[(r, c)] = *b;
        }
    }
    let mut out = CMatrix::zeros(len, len);
    for c in 0..len {
        for (r, b) in buf.iter_mut().enumerate() {
            *b = tmp[(r, c)];
        }
        fft.forward(&mut buf);
        for (r, b) in buf.iter().enumerate() {
            out[(c, r)] = b * scale;
        }
    }
    out
}

pub fn symplectic_forward(field: &TfField) -> AmbiguityField {
    AmbiguityField {
        values: symplectic_dft(&field.values, Direction::Forward),
        alpha: field.alpha,
    }
}

pub fn symplectic_inverse(field: &AmbiguityField) -> TfField {
    TfField {
        values: symplectic_dft(&field.values, Direction::Inverse),
        alpha: field.alpha,
    }
}

/// Generalized Weyl symbol, the inverse symplectic DFT of the spreading function.
pub fn weyl_symbol(h: &OperatorKernel, alpha: f64) -> Result<TfField> {
    Ok(symplectic_inverse(&spreading_function(h, alpha)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal, stream, Purpose};

    fn random_kernel(len: usize, seed: u64) -> OperatorKernel {
        let mut rng = stream(seed, Purpose::Trial, 0);
        OperatorKernel::from_fn(len, |_, _| complex_normal(&mut rng)).unwrap()
    }

    fn random_hermitian(len: usize, seed: u64) -> OperatorKernel {
        let a = random_kernel(len, seed);
        OperatorKernel::new((a.entries() + a.entries().adjoint()) * Complex64::new(0.5, 0.0))
            .unwrap()
    }

    fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn shift_identity_delay_and_modulation() {
        let x = Signal::new((0..8).map(|i| c(i as f64, -(i as f64))).collect()).unwrap();
        assert_eq!(tf_shift(&x, 0, 0), x);

        let mut d = vec![ZERO; 8];
        d[0] = c(1.0, 0.0);
        let y = tf_shift(&Signal::new(d).unwrap(), 3, 0);
        for (n, v) in y.samples().iter().enumerate() {
            assert_eq!(*v, if n == 3 { c(1.0, 0.0) } else { ZERO });
        }

        let ones = Signal::new(vec![c(1.0, 0.0); 4]).unwrap();
        let y = tf_shift(&ones, 0, 1);
        let want = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        for (a, b) in y.samples().iter().zip(want) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn operator_shift_examples() {
        let p = random_kernel(8, 1);
        assert_eq!(operator_tf_shift(&p, 0, 0), p);
        let id = OperatorKernel::identity(8).unwrap();
        for (m, k) in [(1, 0), (3, 5), (-2, 7)] {
            assert!(max_abs_diff(operator_tf_shift(&id, m, k).entries(), id.entries()) < 1e-15);
        }
        let mut rng = stream(2, Purpose::Trial, 0);
        let g = Signal::new((0..8).map(|_| complex_normal(&mut rng)).collect()).unwrap();
        let proj = OperatorKernel::rank_one(g.samples()).unwrap();
        let shifted = operator_tf_shift(&proj, 3, 2);
        let want = OperatorKernel::rank_one(tf_shift(&g, 3, 2).samples()).unwrap();
        assert!(max_abs_diff(shifted.entries(), want.entries()) < 1e-12);
    }

    #[test]
    fn hs_inner_examples() {
        let id = OperatorKernel::identity(4).unwrap();
        assert_eq!(hs_inner(&id, &id).unwrap(), c(4.0, 0.0));
        let mut a = CMatrix::zeros(4, 4);
        a[(0, 0)] = c(1.0, 0.0);
        a[(1, 1)] = c(0.0, 2.0);
        let a = OperatorKernel::new(a).unwrap();
        assert_eq!(hs_inner(&a, &a).unwrap(), c(5.0, 0.0));
        let b = OperatorKernel::identity(8).unwrap();
        assert!(matches!(
            hs_inner(&a, &b),
            Err(TfError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spreading_of_identity_and_shift_operator() {
        for alpha in [-0.5, -0.2, 0.0, 0.3, 0.5] {
            let s = spreading_function(&OperatorKernel::identity(8).unwrap(), alpha).unwrap();
            for m in 0..8 {
                for k in 0..8 {
                    let want = if m == 0 && k == 0 { 8.0 } else { 0.0 };
                    assert!((s.values[(m, k)] - c(want, 0.0)).norm() < 1e-12);
                }
            }
        }
        // kernel of the shift operator S(m0,k0)
        let (m0, k0) = (3usize, 5usize);
        let h = OperatorKernel::from_fn(8, |n, np| {
            if np == wrap(n as i64 - m0 as i64, 8) {
                unit_root((k0 * n) as i64, 8)
            } else {
                ZERO
            }
        })
        .unwrap();
        let s = spreading_function(&h, 0.1).unwrap();
        for m in 0..8 {
            for k in 0..8 {
                let mag = s.values[(m, k)].norm();
                if (m, k) == (m0, k0) {
                    assert!((mag - 8.0).abs() < 1e-12);
                } else {
                    assert!(mag < 1e-12);
                }
            }
        }
    }

    #[test]
    fn alpha_out_of_range() {
        let id = OperatorKernel::identity(4).unwrap();
        assert_eq!(
            spreading_function(&id, 0.51),
            Err(TfError::AlphaOutOfRange(0.51))
        );
        assert!(weyl_symbol(&id, -0.7).is_err());
        assert!(weyl_symbol(&id, f64::NAN).is_err());
    }

    #[test]
    fn weyl_of_identity_is_one_and_hermitian_symbol_real() {
        for alpha in [-0.5, 0.0, 0.25, 0.5] {
            let w = weyl_symbol(&OperatorKernel::identity(8).unwrap(), alpha).unwrap();
            assert!(w.values.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-12));
        }
        for len in [4, 8, 16] {
            let h = random_hermitian(len, len as u64);
            let w = weyl_symbol(&h, 0.0).unwrap();
            assert!(w.imag_ratio() < 1e-10, "L={len}: {}", w.imag_ratio());
        }
    }

    #[test]
    fn weyl_shift_covariance() {
        let h = random_kernel(8, 9);
        for alpha in [0.0, 0.5, -0.3] {
            let base = weyl_symbol(&h, alpha).unwrap();
            let (a, b) = (3i64, -2i64);
            let shifted = weyl_symbol(&operator_tf_shift(&h, a, b), alpha).unwrap();
            for n in 0..8 {
                for l in 0..8 {
                    let want = base.values[(wrap(n as i64 - a, 8), wrap(l as i64 - b, 8))];
                    assert!((shifted.values[(n, l)] - want).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn symplectic_constant_and_roundtrip() {
        let ones = TfField {
            values: CMatrix::from_element(8, 8, c(1.0, 0.0)),
            alpha: 0.0,
        };
        let s = symplectic_forward(&ones);
        for m in 0..8 {
            for k in 0..8 {
                let want = if m == 0 && k == 0 { 8.0 } else { 0.0 };
                assert!((s.values[(m, k)] - c(want, 0.0)).norm() < 1e-12);
            }
        }
        let f = TfField {
            values: random_kernel(16, 4).into_entries(),
            alpha: 0.2,
        };
        let back = symplectic_inverse(&symplectic_forward(&f));
        assert!(max_abs_diff(&back.values, &f.values) < 1e-12);
        assert_eq!(back.alpha, 0.2);
    }

    #[test]
    fn symplectic_matches_definition() {
        let len = 4;
        let f = random_kernel(len, 11).into_entries();
        let s = symplectic_dft(&f, Direction::Forward);
        for m in 0..len {
            for k in 0..len {
                let mut acc = ZERO;
                for n in 0..len {
                    for l in 0..len {
                        acc += f[(n, l)] * unit_root(-((k * n) as i64 - (m * l) as i64), len);
                    }
                }
                assert!((s[(m, k)] - acc / len as f64).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn symplectic_parseval_constant() {
        // the symplectic DFT is unitary: Σ|S|² = Σ|F|²
        let f = random_kernel(8, 12).into_entries();
        let s = symplectic_dft(&f, Direction::Forward);
        let ef: f64 = f.iter().map(|z| z.norm_sqr()).sum();
        let es: f64 = s.iter().map(|z| z.norm_sqr()).sum();
        assert!((ef - es).abs() < 1e-10 * ef);
    }

    #[test]
    fn kernel_from_spreading_examples() {
        let mut delta = CMatrix::zeros(8, 8);
        delta[(0, 0)] = c(8.0, 0.0);
        for alpha in [0.0, 0.5, -0.4] {
            let k = kernel_from_spreading(&AmbiguityField {
                values: delta.clone(),
                alpha,
            })
            .unwrap();
            assert!(max_abs_diff(k.entries(), &CMatrix::identity(8, 8)) < 1e-14);
        }
        let h = random_kernel(8, 5);
        for alpha in [0.0, 0.5, 0.17] {
            let back = kernel_from_spreading(&spreading_function(&h, alpha).unwrap()).unwrap();
            assert!(max_abs_diff(back.entries(), h.entries()) < 1e-10);
        }
        // indicator rectangle at alpha = 0 gives a Hermitian kernel
        let len = 16;
        let chi = CMatrix::from_fn(len, len, |m, k| {
            let (mc, kc) = (lattice::centered(m, len), lattice::centered(k, len));
            if mc.abs() <= 3 && kc.abs() <= 2 {
                c(1.0, 0.0)
            } else {
                ZERO
            }
        });
        let p = kernel_from_spreading(&AmbiguityField {
            values: chi,
            alpha: 0.0,
        })
        .unwrap();
        assert!(p.is_hermitian());
    }

    #[test]
    fn shift_and_parseval_rejects_mismatch() {
        let a = OperatorKernel::identity(4).unwrap();
        let b = OperatorKernel::identity(6).unwrap();
        assert!(a.compose(&b).is_err());
        assert!(a.sub(&b).is_err());
        assert!(Signal::new(vec![ZERO; 5]).is_err());
    }
}
