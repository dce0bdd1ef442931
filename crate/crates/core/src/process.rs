//! Nonstationary circular complex Gaussian process models.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TfError};
use crate::lattice::{self, centered};
use crate::linalg::{CMatrix, HermitianEigen};
use crate::rng::{self, Purpose};
use crate::tf::{
    check_alpha, check_same, kernel_from_spreading, operator_tf_shift, spreading_function,
    weyl_symbol, AmbiguityField, OperatorKernel, Signal, TfField,
};

/// A cell is part of a field's support when its modulus exceeds this
/// fraction of the field's peak modulus.
pub const SUPPORT_REL_TOL: f64 = 1e-12;

/// Minimum eigenvalue accepted for a correlation model, relative to the largest.
pub const MODEL_PSD_TOL: f64 = 1e-10;

/// Negative eigenvalues down to this relative size are clamped to zero when sampling.
pub const SAMPLER_PSD_TOL: f64 = 1e-8;

/// Centered lag-Doppler rectangle `|m| <= tau_max`, `|k| <= nu_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpreadSupport {
    pub len: usize,
    pub tau_max: usize,
    pub nu_max: usize,
}

impl SpreadSupport {
    pub fn new(len: usize, tau_max: usize, nu_max: usize) -> Result<Self> {
        lattice::check_len(len)?;
        let limit = len / 2;
        if tau_max > limit {
            return Err(TfError::ExceedsGrid {
                name: "tau_max",
                value: tau_max,
                limit,
            });
        }
        if nu_max > limit {
            return Err(TfError::ExceedsGrid {
                name: "nu_max",
                value: nu_max,
                limit,
            });
        }
        Ok(Self {
            len,
            tau_max,
            nu_max,
        })
    }

    /// The whole lag-Doppler plane.
    pub fn full(len: usize) -> Result<Self> {
        Self::new(len, len / 2, len / 2)
    }

    pub fn origin(len: usize) -> Result<Self> {
        Self::new(len, 0, 0)
    }

    /// Number of lag and Doppler cells covered.
    pub fn extent(&self) -> (usize, usize) {
        (
            (2 * self.tau_max + 1).min(self.len),
            (2 * self.nu_max + 1).min(self.len),
        )
    }

    /// Fraction of the `L²` lag-Doppler cells covered, times `L`:
    /// `(2 tau_max + 1)(2 nu_max + 1) / L`.
    pub fn spread(&self) -> f64 {
        let (a, b) = self.extent();
        (a * b) as f64 / self.len as f64
    }

    pub fn is_underspread(&self) -> bool {
        self.spread() < 1.0
    }

    pub fn contains(&self, m: usize, k: usize) -> bool {
        centered(m, self.len).unsigned_abs() as usize <= self.tau_max
            && centered(k, self.len).unsigned_abs() as usize <= self.nu_max
    }

    /// Rectangle with both half-widths doubled (clamped to the grid).
    pub fn doubled(&self) -> Self {
        let limit = self.len / 2;
        Self {
            len: self.len,
            tau_max: (2 * self.tau_max).min(limit),
            nu_max: (2 * self.nu_max).min(limit),
        }
    }

    /// 0/1 indicator on the `[m, k]` lattice.
    pub fn indicator(&self) -> CMatrix {
        CMatrix::from_fn(self.len, self.len, |m, k| {
            if self.contains(m, k) {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }
}

/// Largest centered lag and Doppler indices among the support cells of `field`.
pub fn support_half_widths(field: &AmbiguityField) -> (usize, usize) {
    let len = field.len();
    let peak = field.values.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if peak == 0.0 {
        return (0, 0);
    }
    let mut tau = 0;
    let mut nu = 0;
    for m in 0..len {
        for k in 0..len {
            if field.values[(m, k)].norm() > SUPPORT_REL_TOL * peak {
                tau = tau.max(centered(m, len).unsigned_abs() as usize);
                nu = nu.max(centered(k, len).unsigned_abs() as usize);
            }
        }
    }
    (tau, nu)
}

/// Correlation operator of the signal process plus observation noise level.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    r: OperatorKernel,
    sigma_n2: f64,
    support: SpreadSupport,
}

impl CorrelationModel {
    /// Validates `R` (Hermitian, PSD to [`MODEL_PSD_TOL`], finite non-negative
    /// trace) and `sigma_n2 >= 0`.
    pub fn new(r: OperatorKernel, sigma_n2: f64, support: SpreadSupport) -> Result<Self> {
        check_same(r.len(), support.len)?;
        if !sigma_n2.is_finite() || sigma_n2 < 0.0 {
            return Err(invalid("sigma_n2", format!("{sigma_n2} must be >= 0")));
        }
        if !r.is_hermitian() {
            return Err(TfError::NotHermitian);
        }
        let tr = r.trace().re;
        if !tr.is_finite() || tr < 0.0 {
            return Err(invalid("R", format!("trace {tr} must be finite and >= 0")));
        }
        let r = if r.is_psd() {
            r
        } else {
            let eig = HermitianEigen::new(r.entries());
            let max = eig.max_abs();
            let min = eig.values.last().copied().unwrap_or(0.0);
            if min < -MODEL_PSD_TOL * max {
                return Err(TfError::NotPsd {
                    min_eig: min,
                    max_eig: max,
                });
            }
            r.with_psd()
        };
        Ok(Self {
            r,
            sigma_n2,
            support,
        })
    }

    /// White noise `sigma2 · I` with origin-only spreading.
    pub fn white(len: usize, sigma2: f64, sigma_n2: f64) -> Result<Self> {
        Self::new(
            OperatorKernel::identity(len)?.scale(sigma2),
            sigma_n2,
            SpreadSupport::origin(len)?,
        )
    }

    pub fn r(&self) -> &OperatorKernel {
        &self.r
    }

    pub fn sigma_n2(&self) -> f64 {
        self.sigma_n2
    }

    pub fn support(&self) -> &SpreadSupport {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.r.trace().re
    }

    pub fn with_noise(&self, sigma_n2: f64) -> Result<Self> {
        Self::new(self.r.clone(), sigma_n2, self.support)
    }

    pub fn with_support(&self, support: SpreadSupport) -> Result<Self> {
        check_same(self.len(), support.len)?;
        Ok(Self {
            support,
            ..self.clone()
        })
    }
}

/// Linear time-varying system with a rectangle-limited spreading function.
#[derive(Debug, Clone)]
pub struct LtvSystem {
    pub h: OperatorKernel,
    pub support: SpreadSupport,
}

/// `EA = S_R^(alpha)`.
pub fn expected_ambiguity(model: &CorrelationModel, alpha: f64) -> Result<AmbiguityField> {
    spreading_function(model.r(), alpha)
}

/// `EW = L_R^(alpha)`.
pub fn wigner_ville_spectrum(model: &CorrelationModel, alpha: f64) -> Result<TfField> {
    weyl_symbol(model.r(), alpha)
}

/// Draws a system whose alpha = 1/2 spreading function is i.i.d. circular
/// complex normal inside the centered `(tau_max, nu_max)` rectangle and zero
/// outside.
pub fn synthesize_underspread_system(
    len: usize,
    tau_max: usize,
    nu_max: usize,
    seed: u64,
) -> Result<LtvSystem> {
    let support = SpreadSupport::new(len, tau_max, nu_max)?;
    let mut rng = rng::stream(seed, Purpose::Synthesis, 0);
    let mut values = CMatrix::zeros(len, len);
    // fixed traversal order keeps the draw sequence independent of the mask layout
    for m in 0..len {
        for k in 0..len {
            if support.contains(m, k) {
                values[(m, k)] = rng::complex_normal(&mut rng);
            }
        }
    }
    let h = kernel_from_spreading(&AmbiguityField { values, alpha: 0.5 })?;
    Ok(LtvSystem { h, support })
}

/// `R = H H⁺`, support doubled, no observation noise.
pub fn correlation_from_system(sys: &LtvSystem) -> Result<CorrelationModel> {
    let r = OperatorKernel::new(sys.h.entries() * sys.h.entries().adjoint())?;
    let r = OperatorKernel::new((r.entries() + r.entries().adjoint()) * Complex64::new(0.5, 0.0))?
        .with_psd();
    CorrelationModel::new(r, 0.0, sys.support.doubled())
}

/// Colouring transform `x = R^{1/2} w` for circular complex normal `w`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: CMatrix,
}

impl GaussianSampler {
    pub fn new(r: &OperatorKernel) -> Result<Self> {
        let eig = HermitianEigen::new(r.entries());
        let max = eig.max_abs();
        let len = r.len();
        let mut factor = eig.vectors.clone();
        for (j, &v) in eig.values.iter().enumerate() {
            if v < -SAMPLER_PSD_TOL * max {
                return Err(TfError::NotPsd {
                    min_eig: v,
                    max_eig: max,
                });
            }
            let s = Complex64::new(v.max(0.0).sqrt(), 0.0);
            for i in 0..len {
                factor[(i, j)] *= s;
            }
        }
        Ok(Self { factor })
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.factor.is_empty()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        let w = DVector::from_vec(rng::complex_normal_vec(rng, self.len()));
        (&self.factor * w).iter().copied().collect()
    }
}

/// One realization `x` with `E{x x⁺} = R`, from the signal stream of `seed`.
pub fn sample_realization(model: &CorrelationModel, seed: u64) -> Result<Signal> {
    let sampler = GaussianSampler::new(model.r())?;
    let mut rng = rng::stream(seed, Purpose::Signal, 0);
    Signal::new(sampler.draw(&mut rng))
}

/// Adds circular complex white noise of variance `sigma_n2` from the noise stream of `seed`.
pub fn observe(x: &Signal, sigma_n2: f64, seed: u64) -> Result<Signal> {
    if sigma_n2.is_nan() || sigma_n2 < 0.0 {
        return Err(invalid("sigma_n2", format!("{sigma_n2} must be >= 0")));
    }
    if sigma_n2 == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = rng::stream(seed, Purpose::Noise, 0);
    let sd = sigma_n2.sqrt();
    let samples = x
        .samples()
        .iter()
        .map(|v| v + rng::complex_normal(&mut rng) * sd)
        .collect();
    Signal::new(samples)
}

/// Prototype whose alpha spreading function is the indicator of `support`.
pub fn mask_prototype(support: &SpreadSupport, alpha: f64) -> Result<OperatorKernel> {
    check_alpha(alpha)?;
    kernel_from_spreading(&AmbiguityField {
        values: support.indicator(),
        alpha,
    })
}

/// Rebuilds the correlation operator from Wigner-Ville samples on the
/// `(t_step, f_step)` subgrid:
/// `R̂ = (t_step f_step / L) Σ_{a,b} EW(a t_step, b f_step) P^{(a t_step, b f_step)}`.
///
/// Exact when the spreading of `R` lies in `support`, `prototype` is the
/// [`mask_prototype`] of that support, and
/// `t_step <= L/(2 nu_max + 1)`, `f_step <= L/(2 tau_max + 1)`.
pub fn weyl_heisenberg_reconstruct(
    ew: &TfField,
    prototype: &OperatorKernel,
    support: &SpreadSupport,
    t_step: usize,
    f_step: usize,
) -> Result<OperatorKernel> {
    let len = ew.len();
    check_same(len, prototype.len())?;
    check_same(len, support.len)?;
    for (name, step) in [("t_step", t_step), ("f_step", f_step)] {
        if step == 0 || !len.is_multiple_of(step) {
            return Err(invalid(name, format!("{step} must divide L = {len}")));
        }
    }
    let (lag_cells, doppler_cells) = support.extent();
    if t_step * doppler_cells > len {
        return Err(TfError::SamplingBound {
            bound: "T <= L/(2 nu_max + 1)",
            detail: format!(
                "t_step = {t_step}, nu_max = {}, L = {len}",
                support.nu_max
            ),
        });
    }
    if f_step * lag_cells > len {
        return Err(TfError::SamplingBound {
            bound: "F <= L/(2 tau_max + 1)",
            detail: format!(
                "f_step = {f_step}, tau_max = {}, L = {len}",
                support.tau_max
            ),
        });
    }
    let mut acc = CMatrix::zeros(len, len);
    for a in (0..len).step_by(t_step) {
        for b in (0..len).step_by(f_step) {
            let w = ew.values[(a, b)];
            if w == Complex64::new(0.0, 0.0) {
                continue;
            }
            acc += operator_tf_shift(prototype, a as i64, b as i64).entries() * w;
        }
    }
    acc *= Complex64::new((t_step * f_step) as f64 / len as f64, 0.0);
    OperatorKernel::new(acc)
}

/// Largest deviation of the reproducing formula
/// `L_H(t,f) = (1/L) Σ_{t',f'} L_H(t',f') conj(L_P(t'-t, f'-f))` over the grid.
pub fn rkhs_reproduce_check(
    h: &OperatorKernel,
    prototype: &OperatorKernel,
    alpha: f64,
) -> Result<f64> {
    check_same(h.len(), prototype.len())?;
    let len = h.len();
    let lh = weyl_symbol(h, alpha)?.values;
    let lp = weyl_symbol(prototype, alpha)?.values;
    let scale = 1.0 / len as f64;
    let mut worst = 0.0f64;
    for t in 0..len {
        for f in 0..len {
            let mut rep = Complex64::new(0.0, 0.0);
            for tp in 0..len {
                let dt = (tp + len - t) % len;
                for fp in 0..len {
                    let df = (fp + len - f) % len;
                    rep += lh[(tp, fp)] * lp[(dt, df)].conj();
                }
            }
            worst = worst.max((lh[(t, f)] - rep * scale).norm());
        }
    }
    Ok(worst)
}
