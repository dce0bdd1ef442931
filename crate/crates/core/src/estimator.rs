//! Quadratic TF-invariant estimators: prototypes, estimates from a single
//! observation, and the analytic bias/variance fields with their global
//! summaries and bounds.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TfError};
use crate::lattice::centered;
use crate::linalg::{CMatrix, HermitianEigen};
use crate::process::{expected_ambiguity, CorrelationModel, SpreadSupport};
use crate::tf::{
    check_alpha, check_same, kernel_from_spreading, operator_tf_shift, spreading_function,
    AmbiguityField, FftPair, OperatorKernel, Signal, TfField,
};

/// Eigenvalues below this fraction of the largest one are dropped from the
/// spectrogram expansion of a prototype.
pub const EIGEN_DROP_TOL: f64 = 1e-13;

/// Target prototype `P`, estimator prototype `P̂` and the shared alpha.
#[derive(Debug)]
pub struct PrototypeSpec {
    target: OperatorKernel,
    estimator: OperatorKernel,
    alpha: f64,
    eigen: OnceLock<HermitianEigen>,
}

impl Clone for PrototypeSpec {
    fn clone(&self) -> Self {
        Self {
            target: self.target.clone(),
            estimator: self.estimator.clone(),
            alpha: self.alpha,
            eigen: self.eigen.clone(),
        }
    }
}

impl PrototypeSpec {
    pub fn new(target: OperatorKernel, estimator: OperatorKernel, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_same(target.len(), estimator.len())?;
        if !target.is_hermitian() || !estimator.is_hermitian() {
            return Err(TfError::NotHermitian);
        }
        Ok(Self {
            target,
            estimator,
            alpha,
            eigen: OnceLock::new(),
        })
    }

    pub fn target(&self) -> &OperatorKernel {
        &self.target
    }

    pub fn estimator(&self) -> &OperatorKernel {
        &self.estimator
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// `P̃ = P̂ - P`.
    pub fn bias_operator(&self) -> OperatorKernel {
        self.estimator
            .sub(&self.target)
            .expect("lengths checked at construction")
    }

    /// Eigendecomposition of `P̂`, computed on first use.
    pub fn eigen(&self) -> &HermitianEigen {
        self.eigen
            .get_or_init(|| HermitianEigen::new(self.estimator.entries()))
    }

    pub fn bank(&self) -> SpectrogramBank {
        SpectrogramBank::from_eigen(self.eigen())
    }
}

/// Global bias/variance summary of an estimator on a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `σ_n² tr P̂`.
    pub b0: f64,
    /// `(1/L) Σ |S_P̃|² |EA|²`.
    pub b_tot2: f64,
    /// `(1/L) Σ_{n,l} (B - B0)²` from the pointwise bias field.
    pub b_tot2_integrated: f64,
    /// `σ_n⁴ ‖P̂‖²`.
    pub v0: f64,
    /// `‖P̂‖² (tr R² + 2σ_n² tr R)`.
    pub v_tot: f64,
    /// `(1/L) Σ_{n,l} (V - V0)` from the pointwise variance field.
    pub v_tot_integrated: f64,
    /// `‖P̃‖ ‖R‖ + σ_n² |tr P̂|`.
    pub b_max_bound: f64,
    /// `‖P̂‖² (‖R‖ + σ_n²)²`.
    pub v_max_bound: f64,
    /// `‖P̂ - P̂_MVUB‖² tr²R + ‖P̂‖² (‖R‖² + 2σ_n² tr R)`.
    pub e_tot_bound: f64,
}

/// Prototype whose alpha = 0 spreading function is `cos(2π m k α / L)` on
/// centered indices; its expected quadratic form is `Re EW^(α)`.
pub fn gwv_prototype(len: usize, alpha: f64) -> Result<OperatorKernel> {
    check_alpha(alpha)?;
    crate::lattice::check_len(len)?;
    let values = CMatrix::from_fn(len, len, |m, k| {
        let mk = (centered(m, len) * centered(k, len)) as f64;
        Complex64::new((2.0 * PI * mk * alpha / len as f64).cos(), 0.0)
    });
    kernel_from_spreading(&AmbiguityField { values, alpha: 0.0 })
}

/// Minimum-norm unbiased prototype: the spreading function of `p` with
/// everything outside `support` set to zero.
pub fn mvub_prototype(
    p: &OperatorKernel,
    support: &SpreadSupport,
    alpha: f64,
) -> Result<OperatorKernel> {
    check_same(p.len(), support.len)?;
    let mut s = spreading_function(p, alpha)?;
    for m in 0..s.len() {
        for k in 0..s.len() {
            if !support.contains(m, k) {
                s.values[(m, k)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    kernel_from_spreading(&s)
}

/// Weighted spectrogram expansion `P̂ = Σ_j w_j u_j ⊗ u_j`.
#[derive(Debug, Clone)]
pub struct SpectrogramBank {
    len: usize,
    weights: Vec<f64>,
    windows: Vec<Vec<Complex64>>,
}

impl SpectrogramBank {
    pub fn from_eigen(eig: &HermitianEigen) -> Self {
        let len = eig.vectors.nrows();
        let cutoff = EIGEN_DROP_TOL * eig.max_abs();
        let mut weights = Vec::new();
        let mut windows = Vec::new();
        for (j, &v) in eig.values.iter().enumerate() {
            if v.abs() > cutoff {
                weights.push(v);
                windows.push(eig.vectors.column(j).iter().copied().collect());
            }
        }
        Self {
            len,
            weights,
            windows,
        }
    }

    /// Bank of orthonormal windows with equal weights `1/N`.
    pub fn uniform(len: usize, windows: Vec<Vec<Complex64>>) -> Self {
        let w = 1.0 / windows.len().max(1) as f64;
        Self {
            len,
            weights: vec![w; windows.len()],
            windows,
        }
    }

    pub fn rank(&self) -> usize {
        self.windows.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Writes the row-major estimate `Σ_j w_j |<y, S(n,l) u_j>|²` into `out`.
    pub fn estimate_into(&self, y: &[Complex64], fft: &Fft, out: &mut [f64]) {
        let len = self.len;
        debug_assert_eq!(y.len(), len);
        debug_assert_eq!(out.len(), len * len);
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (w, u) in self.weights.iter().zip(&self.windows) {
            for n in 0..len {
                for (s, b) in buf.iter_mut().enumerate() {
                    *b = y[s] * u[(s + len - n) % len].conj();
                }
                fft.0.forward(&mut buf);
                let row = &mut out[n * len..(n + 1) * len];
                for (o, b) in row.iter_mut().zip(&buf) {
                    *o += w * b.norm_sqr();
                }
            }
        }
    }

    pub fn estimate(&self, y: &Signal) -> Result<TfField> {
        check_same(self.len, y.len())?;
        let fft = Fft::new(self.len);
        let mut out = vec![0.0; self.len * self.len];
        self.estimate_into(y.samples(), &fft, &mut out);
        Ok(real_field(self.len, &out, 0.0))
    }
}

/// Reusable FFT plan for [`SpectrogramBank::estimate_into`].
pub struct Fft(FftPair);

impl Fft {
    pub fn new(len: usize) -> Self {
        Self(FftPair::new(len))
    }
}

pub(crate) fn real_field(len: usize, row_major: &[f64], alpha: f64) -> TfField {
    TfField {
        values: CMatrix::from_fn(len, len, |n, l| Complex64::new(row_major[n * len + l], 0.0)),
        alpha,
    }
}

/// `P̂_x(n,l) = <P̂^(n,l) y, y>`.
///
/// Hermitian prototypes go through their eigendecomposition as a weighted
/// sum of spectrograms; others fall back to [`estimate_spectrum_direct`].
pub fn estimate_spectrum(p_hat: &OperatorKernel, y: &Signal) -> Result<TfField> {
    check_same(p_hat.len(), y.len())?;
    if !p_hat.is_hermitian() {
        return estimate_spectrum_direct(p_hat, y);
    }
    SpectrogramBank::from_eigen(&HermitianEigen::new(p_hat.entries())).estimate(y)
}

/// Quadratic form evaluated cell by cell with explicitly shifted kernels.
pub fn estimate_spectrum_direct(p_hat: &OperatorKernel, y: &Signal) -> Result<TfField> {
    let len = p_hat.len();
    check_same(len, y.len())?;
    let yv = nalgebra::DVector::from_column_slice(y.samples());
    let values = CMatrix::from_fn(len, len, |n, l| {
        let shifted = operator_tf_shift(p_hat, n as i64, l as i64);
        yv.dotc(&(shifted.entries() * &yv))
    });
    Ok(TfField { values, alpha: 0.0 })
}

/// Subtracts the constant `σ_n² tr P̂`.
pub fn noise_bias_correct(field: &TfField, p_hat: &OperatorKernel, sigma_n2: f64) -> TfField {
    let b0 = p_hat.trace() * sigma_n2;
    TfField {
        values: field.values.map(|z| z - b0),
        alpha: field.alpha,
    }
}

/// `T[n,l] = tr{A^(n,l) R}` for every lattice cell.
///
/// For each time shift the diagonal sums `g[d] = Σ_i a[i-n, i-d-n] r[i-d, i]`
/// are formed and a single inverse DFT over `d` yields the frequency row.
pub fn shifted_trace_field(a: &OperatorKernel, r: &OperatorKernel) -> Result<CMatrix> {
    check_same(a.len(), r.len())?;
    let len = a.len();
    let (ae, re) = (a.entries(), r.entries());
    let fft = FftPair::new(len);
    let rows: Vec<Vec<Complex64>> = (0..len)
        .into_par_iter()
        .map(|n| {
            let mut g = vec![Complex64::new(0.0, 0.0); len];
            for (d, gd) in g.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..len {
                    let j = (i + len - d) % len;
                    acc += ae[((i + len - n) % len, (j + len - n) % len)] * re[(j, i)];
                }
                *gd = acc;
            }
            fft.inverse(&mut g);
            g
        })
        .collect();
    Ok(CMatrix::from_fn(len, len, |n, l| rows[n][l]))
}

/// Expected value of the estimate, `tr{P̂^(n,l) R} + σ_n² tr P̂`.
pub fn mean_field(p_hat: &OperatorKernel, model: &CorrelationModel) -> Result<TfField> {
    let t = shifted_trace_field(p_hat, model.r())?;
    let b0 = p_hat.trace() * model.sigma_n2();
    Ok(TfField {
        values: t.map(|z| z + b0),
        alpha: 0.0,
    })
}

/// `B(n,l) = tr{P̃^(n,l) R} + σ_n² tr P̂`.
pub fn bias_field(spec: &PrototypeSpec, model: &CorrelationModel) -> Result<TfField> {
    check_same(spec.len(), model.len())?;
    let t = shifted_trace_field(&spec.bias_operator(), model.r())?;
    let b0 = spec.estimator().trace() * model.sigma_n2();
    Ok(TfField {
        values: t.map(|z| z + b0),
        alpha: spec.alpha(),
    })
}

/// `V(n,l) = tr{(P̂^(n,l) R)²} + 2σ_n² tr{(P̂^(n,l))² R} + σ_n⁴ ‖P̂‖²`
/// for circular complex Gaussian signal and noise.
pub fn variance_field(p_hat: &OperatorKernel, model: &CorrelationModel) -> Result<TfField> {
    check_same(p_hat.len(), model.len())?;
    if !p_hat.is_hermitian() {
        return Err(TfError::NotHermitian);
    }
    let len = p_hat.len();
    let s2 = model.sigma_n2();
    let r = model.r().entries();
    let quartic: Vec<f64> = (0..len * len)
        .into_par_iter()
        .map(|cell| {
            let (n, l) = (cell / len, cell % len);
            let x = operator_tf_shift(p_hat, n as i64, l as i64).entries() * r;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..len {
                for j in 0..len {
                    acc += x[(i, j)] * x[(j, i)];
                }
            }
            acc.re
        })
        .collect();
    let p2 = p_hat.compose(p_hat)?;
    let cross = shifted_trace_field(&p2, model.r())?;
    let v0 = s2 * s2 * p_hat.hs_norm_sqr();
    Ok(TfField {
        values: CMatrix::from_fn(len, len, |n, l| {
            Complex64::new(quartic[n * len + l] + 2.0 * s2 * cross[(n, l)].re + v0, 0.0)
        }),
        alpha: 0.0,
    })
}

/// Global bias and variance constants of `spec` on `model`, each of the two
/// integrated quantities computed in closed form and by summing the
/// pointwise field with lattice measure `1/L`.
pub fn global_error_report(
    spec: &PrototypeSpec,
    model: &CorrelationModel,
) -> Result<ErrorReport> {
    check_same(spec.len(), model.len())?;
    let len = spec.len();
    let cell = 1.0 / len as f64;
    let s2 = model.sigma_n2();
    let p_hat = spec.estimator();
    let p_tilde = spec.bias_operator();
    let r = model.r();

    let tr_p_hat = p_hat.trace().re;
    let b0 = s2 * tr_p_hat;
    let s_tilde = spreading_function(&p_tilde, spec.alpha())?;
    let ea = expected_ambiguity(model, spec.alpha())?;
    let b_tot2 = cell
        * s_tilde
            .values
            .iter()
            .zip(ea.values.iter())
            .map(|(a, b)| a.norm_sqr() * b.norm_sqr())
            .sum::<f64>();
    let bias = bias_field(spec, model)?;
    let b_tot2_integrated = cell * bias.values.iter().map(|z| (z.re - b0).powi(2)).sum::<f64>();

    let p_norm2 = p_hat.hs_norm_sqr();
    let r_norm2 = r.hs_norm_sqr();
    let tr_r = model.trace();
    let v0 = s2 * s2 * p_norm2;
    let v_tot = p_norm2 * (r_norm2 + 2.0 * s2 * tr_r);
    let var = variance_field(p_hat, model)?;
    let v_tot_integrated = cell * var.values.iter().map(|z| z.re - v0).sum::<f64>();

    let b_max_bound = p_tilde.hs_norm() * r.hs_norm() + s2 * tr_p_hat.abs();
    let v_max_bound = p_norm2 * (r.hs_norm() + s2).powi(2);
    let mvub = mvub_prototype(spec.target(), model.support(), spec.alpha())?;
    let e_tot_bound =
        p_hat.sub(&mvub)?.hs_norm_sqr() * tr_r * tr_r + p_norm2 * (r_norm2 + 2.0 * s2 * tr_r);

    Ok(ErrorReport {
        b0,
        b_tot2,
        b_tot2_integrated,
        v0,
        v_tot,
        v_tot_integrated,
        b_max_bound,
        v_max_bound,
        e_tot_bound,
    })
}

/// Integrated mean squared error of the noise-corrected estimate,
/// `(1/L) Σ_{n,l} [(B - B0)² + V]`.
pub fn integrated_mse(spec: &PrototypeSpec, model: &CorrelationModel) -> Result<f64> {
    let b0 = spec.estimator().trace().re * model.sigma_n2();
    let bias = bias_field(spec, model)?;
    let var = variance_field(spec.estimator(), model)?;
    let total: f64 = bias
        .values
        .iter()
        .zip(var.values.iter())
        .map(|(b, v)| (b.re - b0).powi(2) + v.re)
        .sum();
    Ok(total / spec.len() as f64)
}
