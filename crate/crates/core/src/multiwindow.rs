//! Matched multi-window realization of the MVUB estimator, rank selection
//! and the sinusoidal multitaper estimate.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result, TfError};
use crate::estimator::SpectrogramBank;
use crate::lattice::{centered_interval, check_len};
use crate::linalg::{CMatrix, HermitianEigen};
use crate::tf::{OperatorKernel, Signal, TfField};

/// Eigenvalues closer than this (relative to the largest magnitude) are
/// treated as one degenerate cluster.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Orthonormal windows supported on a `T`-sample centered interval.
///
/// Windows are stored compactly: entry `j` of a taper sits at grid offset
/// `j - floor(T/2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSet {
    t_support: usize,
    tapers: Vec<Vec<Complex64>>,
    eigenvalues: Option<Vec<f64>>,
}

impl WindowSet {
    pub fn rank(&self) -> usize {
        self.tapers.len()
    }

    pub fn t_support(&self) -> usize {
        self.t_support
    }

    pub fn tapers(&self) -> &[Vec<Complex64>] {
        &self.tapers
    }

    /// `λ_k` of the compressed eigenproblem; `None` for closed-form tapers.
    pub fn eigenvalues(&self) -> Option<&[f64]> {
        self.eigenvalues.as_deref()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.rank() as f64
    }

    /// Offsets `-floor(T/2) ..` of the compact samples.
    pub fn offsets(&self) -> impl Iterator<Item = i64> {
        let start = -((self.t_support / 2) as i64);
        (0..self.t_support as i64).map(move |j| start + j)
    }

    /// Windows zero-padded onto the periodic `len`-point grid.
    pub fn embed(&self, len: usize) -> Result<Vec<Vec<Complex64>>> {
        if self.t_support > len {
            return Err(TfError::ExceedsGrid {
                name: "T_len",
                value: self.t_support,
                limit: len,
            });
        }
        let idx = centered_interval(self.t_support, len);
        Ok(self
            .tapers
            .iter()
            .map(|t| {
                let mut w = vec![Complex64::new(0.0, 0.0); len];
                for (&i, &v) in idx.iter().zip(t) {
                    w[i] = v;
                }
                w
            })
            .collect())
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn gram_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (a, u) in self.tapers.iter().enumerate() {
            for (b, v) in self.tapers.iter().enumerate() {
                let ip: Complex64 = u.iter().zip(v).map(|(x, y)| x.conj() * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((ip - want).norm());
            }
        }
        worst
    }

    pub fn bank(&self, len: usize) -> Result<SpectrogramBank> {
        Ok(SpectrogramBank::uniform(len, self.embed(len)?))
    }
}

/// Top-`n` eigenvectors of `T P T`, `T` the projection onto the centered
/// `t_len`-sample interval.
///
/// Degenerate eigenvalue clusters are replaced by the Gram-Schmidt
/// orthonormalization of the standard basis projected onto the cluster, and
/// every window is rotated so its first nonzero sample is real positive.
pub fn matched_windows(p_mvub: &OperatorKernel, t_len: usize, n: usize) -> Result<WindowSet> {
    let len = p_mvub.len();
    if !p_mvub.is_hermitian() {
        return Err(TfError::NotHermitian);
    }
    if t_len == 0 || t_len > len {
        return Err(TfError::ExceedsGrid {
            name: "T_len",
            value: t_len,
            limit: len,
        });
    }
    if n == 0 || n > t_len {
        return Err(invalid("N", format!("must satisfy 1 <= N <= T_len = {t_len}")));
    }
    let idx = centered_interval(t_len, len);
    let p = p_mvub.entries();
    let compressed = CMatrix::from_fn(t_len, t_len, |a, b| p[(idx[a], idx[b])]);
    let eig = HermitianEigen::new(&compressed);
    let scale = eig.max_abs().max(f64::MIN_POSITIVE);

    let mut tapers: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < t_len && (eig.values[end - 1] - eig.values[end]).abs() <= DEGENERACY_TOL * scale {
            end += 1;
        }
        let cluster: Vec<Vec<Complex64>> = (start..end)
            .map(|c| eig.vectors.column(c).iter().copied().collect())
            .collect();
        let basis = if cluster.len() == 1 {
            cluster
        } else {
            canonical_basis(&cluster)
        };
        tapers.extend(basis.into_iter().map(fix_phase));
        start = end;
    }
    tapers.truncate(n);
    Ok(WindowSet {
        t_support: t_len,
        tapers,
        eigenvalues: Some(eig.values[..n].to_vec()),
    })
}

fn dot(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

fn canonical_basis(cluster: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let dim = cluster[0].len();
    let mut out: Vec<Vec<Complex64>> = Vec::with_capacity(cluster.len());
    for i in 0..dim {
        if out.len() == cluster.len() {
            break;
        }
        // projection of e_i onto the cluster subspace
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        for u in cluster {
            let c = u[i].conj();
            for (vj, uj) in v.iter_mut().zip(u) {
                *vj += c * uj;
            }
        }
        for _ in 0..2 {
            for q in &out {
                let c = dot(q, &v);
                for (vj, qj) in v.iter_mut().zip(q) {
                    *vj -= c * qj;
                }
            }
        }
        let norm = dot(&v, &v).re.sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|z| z / norm).collect());
        }
    }
    out
}

fn fix_phase(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let peak = v.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if let Some(first) = v.iter().find(|z| z.norm() > 1e-8 * peak) {
        let rot = first.conj() / first.norm();
        v.iter_mut().for_each(|z| *z *= rot);
    }
    v
}

/// `P̂_N = (1/N) Σ_k γ_k ⊗ γ_k` on the `len`-point grid.
pub fn multiwindow_prototype(ws: &WindowSet, len: usize) -> Result<OperatorKernel> {
    check_len(len)?;
    let windows = ws.embed(len)?;
    let w = Complex64::new(ws.weight(), 0.0);
    let mut k = CMatrix::zeros(len, len);
    for g in &windows {
        for i in 0..len {
            for j in 0..len {
                k[(i, j)] += w * g[i] * g[j].conj();
            }
        }
    }
    OperatorKernel::new(k)
}

/// Outcome of [`optimal_rank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankChoice {
    pub n: usize,
    /// Whether `σ_n²/tr R < (1 - s_x)/2` held.
    pub condition_holds: bool,
}

/// Normalized error proxy `|s_x - 1/N| + (s_x + 2σ_n²/tr R)/N`, using
/// `‖R‖² ≈ s_x tr²R`.
pub fn rank_proxy(n: usize, s_x: f64, noise_ratio: f64) -> f64 {
    let inv = 1.0 / n as f64;
    (s_x - inv).abs() + (s_x + 2.0 * noise_ratio) * inv
}

/// Window count `N` balancing approximation error against variance.
///
/// Returns `round(1/s_x)` when the moderate-noise condition holds, otherwise
/// the minimizer of [`rank_proxy`] over `1..=max_rank`.
pub fn optimal_rank(s_x: f64, sigma_n2: f64, trace_r: f64, max_rank: usize) -> Result<RankChoice> {
    if !(s_x > 0.0 && s_x <= 1.0) {
        return Err(invalid("s_x", format!("must lie in (0, 1], got {s_x}")));
    }
    if sigma_n2.is_nan() || sigma_n2 < 0.0 {
        return Err(invalid("sigma_n2", "must be nonnegative"));
    }
    if trace_r.is_nan() || trace_r <= 0.0 {
        return Err(invalid("trace_R", "must be positive"));
    }
    if max_rank == 0 {
        return Err(invalid("max_rank", "must be positive"));
    }
    let rho = sigma_n2 / trace_r;
    if rho < (1.0 - s_x) / 2.0 {
        let n = ((1.0 / s_x).round() as usize).clamp(1, max_rank);
        return Ok(RankChoice {
            n,
            condition_holds: true,
        });
    }
    let mut best = (1, f64::INFINITY);
    for n in 1..=max_rank {
        let f = rank_proxy(n, s_x, rho);
        if f < best.1 {
            best = (n, f);
        }
    }
    Ok(RankChoice {
        n: best.0,
        condition_holds: false,
    })
}

/// Sine tapers `sqrt(2/(N+1)) sin(π k n/(N+1))`, `n = 1..N_len`, `k = 1..K`.
pub fn sinusoidal_tapers(n_len: usize, k: usize) -> Result<WindowSet> {
    if n_len == 0 {
        return Err(invalid("N_len", "must be positive"));
    }
    if k == 0 || k > n_len {
        return Err(invalid("K", format!("must satisfy 1 <= K <= N_len = {n_len}")));
    }
    let denom = (n_len + 1) as f64;
    let amp = (2.0 / denom).sqrt();
    let tapers = (1..=k)
        .map(|kk| {
            (1..=n_len)
                .map(|n| Complex64::new(amp * (PI * (kk * n) as f64 / denom).sin(), 0.0))
                .collect()
        })
        .collect();
    Ok(WindowSet {
        t_support: n_len,
        tapers,
        eigenvalues: None,
    })
}

fn check_multitaper(y: &Signal, n_len: usize, k: usize) -> Result<()> {
    check_len(y.len())?;
    if n_len == 0 || n_len > y.len() {
        return Err(TfError::ExceedsGrid {
            name: "N_len",
            value: n_len,
            limit: y.len(),
        });
    }
    if k == 0 || k > n_len {
        return Err(invalid("K", format!("must satisfy 1 <= K <= N_len = {n_len}")));
    }
    Ok(())
}

/// Sliding sinusoidal multitaper estimate in its frequency-difference form,
/// `(1/(2K(N+1))) Σ_j |y(t, f + j/(2N+2)) - y(t, f - j/(2N+2))|²`, where
/// `y(t,f)` is the length-`N_len` local Fourier transform centered at `t`.
pub fn sinusoidal_multitaper_estimate(y: &Signal, n_len: usize, k: usize) -> Result<TfField> {
    check_multitaper(y, n_len, k)?;
    let len = y.len();
    let x = y.samples();
    let half = (n_len / 2) as i64;
    let step = 1.0 / (2.0 * (n_len + 1) as f64);
    let norm = 1.0 / (2.0 * k as f64 * (n_len + 1) as f64);
    let rows: Vec<Vec<f64>> = (0..len)
        .into_par_iter()
        .map(|t| {
            let seg: Vec<Complex64> = (1..=n_len as i64)
                .map(|n| x[(t as i64 + n - 1 - half).rem_euclid(len as i64) as usize])
                .collect();
            let local = |f: f64| -> Complex64 {
                seg.iter()
                    .enumerate()
                    .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * PI * f * (i + 1) as f64))
                    .sum()
            };
            (0..len)
                .map(|l| {
                    let f = l as f64 / len as f64;
                    norm * (1..=k)
                        .map(|j| {
                            let d = j as f64 * step;
                            (local(f + d) - local(f - d)).norm_sqr()
                        })
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    Ok(TfField {
        values: CMatrix::from_fn(len, len, |t, l| Complex64::new(rows[t][l], 0.0)),
        alpha: 0.0,
    })
}

/// Same estimate as the average of the `K` taper spectrograms.
pub fn sinusoidal_multitaper_taper_form(y: &Signal, n_len: usize, k: usize) -> Result<TfField> {
    check_multitaper(y, n_len, k)?;
    sinusoidal_tapers(n_len, k)?.bank(y.len())?.estimate(y)
}

/// Uniformly weighted spectrogram average over the windows of `ws`.
pub fn multiwindow_estimate(ws: &WindowSet, y: &Signal) -> Result<TfField> {
    ws.bank(y.len())?.estimate(y)
}
