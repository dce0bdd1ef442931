//! Monte Carlo harness and numerical identity checks for the analytic
//! bias/variance formulas.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result, TfError};
use crate::estimator::{global_error_report, mean_field, variance_field, Fft, PrototypeSpec};
use crate::estimator::{bias_field, shifted_trace_field};
use crate::linalg::{CMatrix, HermitianEigen};
use crate::process::{CorrelationModel, GaussianSampler, SpreadSupport};
use crate::rng::{complex_normal, complex_normal_vec, stream, Purpose};
use crate::tf::{check_same, operator_tf_shift, OperatorKernel};

pub const MIN_REPLICATES: usize = 100;
pub const MIN_ISSERLIS_REPLICATES: usize = 10_000;
pub const MAX_ISSERLIS_LEN: usize = 8;
pub const Z_LIMIT: f64 = 5.0;
pub const MAX_EXCEED_FRACTION: f64 = 1e-3;
pub const IDENTITY_TOL: f64 = 1e-8;

const BLOCK: usize = 1000;

/// Deliberate distortion of the analytic fields, used to show the harness
/// is able to fail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perturbation {
    /// Multiplies the analytic variance field.
    pub variance_scale: f64,
    /// Shifts every analytic mean and variance cell by this many of its own
    /// standard errors.
    pub shift_se: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            variance_scale: 1.0,
            shift_se: 0.0,
        }
    }
}

type Field = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCReport {
    pub replicates: usize,
    pub seed: u64,
    pub empirical_mean_field: Field,
    pub empirical_var_field: Field,
    /// `tr{P̂^(n,l) R} + σ_n² tr P̂`.
    pub analytic_mean_field: Field,
    pub analytic_bias_field: Field,
    pub analytic_var_field: Field,
    pub z_mean: Field,
    pub z_var: Field,
    pub max_abs_z: f64,
    pub exceed_fraction: f64,
    pub pass: bool,
    #[serde(skip)]
    pub wall_time: f64,
}

fn to_rows(len: usize, flat: &[f64]) -> Field {
    flat.chunks(len).map(|r| r.to_vec()).collect()
}

fn z_score(diff: f64, var_of_estimate: f64) -> f64 {
    if var_of_estimate > 0.0 {
        diff / var_of_estimate.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Fraction of the scores whose magnitude exceeds [`Z_LIMIT`].
pub fn exceed_fraction<'a>(scores: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for z in scores {
        total += 1;
        if z.is_nan() || z.abs() > Z_LIMIT {
            hit += 1;
        }
    }
    hit as f64 / total.max(1) as f64
}

pub fn run_mc(
    model: &CorrelationModel,
    spec: &PrototypeSpec,
    replicates: usize,
    seed: u64,
) -> Result<MCReport> {
    run_mc_with(model, spec, replicates, seed, Perturbation::default())
}

/// Draws `y = x + n` per replicate, forms the estimate with `spec`'s
/// estimator prototype and screens the per-cell sample mean and variance
/// against the analytic fields.
///
/// Replicate `i` uses the signal and noise streams with index `i`; blocks of
/// replicates are reduced in index order, so the report does not depend on
/// the number of worker threads.
pub fn run_mc_with(
    model: &CorrelationModel,
    spec: &PrototypeSpec,
    replicates: usize,
    seed: u64,
    perturb: Perturbation,
) -> Result<MCReport> {
    if replicates < MIN_REPLICATES {
        return Err(invalid(
            "replicates",
            format!("{replicates} is below the minimum of {MIN_REPLICATES}"),
        ));
    }
    check_same(model.len(), spec.len())?;
    let start = Instant::now();
    let len = model.len();
    let cells = len * len;
    let p_hat = spec.estimator();

    let mean_a: Vec<f64> = mean_field(p_hat, model)?.values.transpose().iter().map(|z| z.re).collect();
    let var_a: Vec<f64> = variance_field(p_hat, model)?.values.transpose().iter().map(|z| z.re).collect();
    let bias_a: Vec<f64> = bias_field(spec, model)?.values.transpose().iter().map(|z| z.re).collect();

    let sampler = GaussianSampler::new(model.r())?;
    let bank = spec.bank();
    let sd = model.sigma_n2().sqrt();

    let blocks = replicates.div_ceil(BLOCK);
    let partial: Vec<Vec<[f64; 4]>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let fft = Fft::new(len);
            let mut acc = vec![[0.0f64; 4]; cells];
            let mut est = vec![0.0; cells];
            for rep in b * BLOCK..((b + 1) * BLOCK).min(replicates) {
                let mut y = sampler.draw(&mut stream(seed, Purpose::Signal, rep as u64));
                if sd > 0.0 {
                    let mut rng = stream(seed, Purpose::Noise, rep as u64);
                    for v in y.iter_mut() {
                        *v += complex_normal(&mut rng) * sd;
                    }
                }
                bank.estimate_into(&y, &fft, &mut est);
                for ((a, e), m) in acc.iter_mut().zip(&est).zip(&mean_a) {
                    let d = e - m;
                    let d2 = d * d;
                    a[0] += d;
                    a[1] += d2;
                    a[2] += d2 * d;
                    a[3] += d2 * d2;
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![[0.0f64; 4]; cells];
    for block in &partial {
        for (s, a) in sums.iter_mut().zip(block) {
            for i in 0..4 {
                s[i] += a[i];
            }
        }
    }

    let n = replicates as f64;
    let mut emp_mean = vec![0.0; cells];
    let mut emp_var = vec![0.0; cells];
    let mut z_mean = vec![0.0; cells];
    let mut z_var = vec![0.0; cells];
    let mut var_ref = vec![0.0; cells];
    let mut mean_ref = vec![0.0; cells];
    for c in 0..cells {
        let [s1, s2, s3, s4] = sums[c];
        let md = s1 / n;
        let m2 = (s2 / n - md * md).max(0.0);
        let m4 = (s4 / n - 4.0 * md * s3 / n + 6.0 * md * md * s2 / n - 3.0 * md.powi(4)).max(0.0);
        let sample_var = m2 * n / (n - 1.0);
        emp_mean[c] = mean_a[c] + md;
        emp_var[c] = sample_var;
        let se_mean2 = sample_var / n;
        let se_var2 = (m4 - m2 * m2).max(0.0) / n;
        mean_ref[c] = mean_a[c] + perturb.shift_se * se_mean2.sqrt();
        var_ref[c] = var_a[c] * perturb.variance_scale + perturb.shift_se * se_var2.sqrt();
        z_mean[c] = z_score(emp_mean[c] - mean_ref[c], se_mean2);
        z_var[c] = z_score(emp_var[c] - var_ref[c], se_var2);
    }
    let max_abs_z = z_mean.iter().chain(&z_var).fold(0.0f64, |a, z| a.max(z.abs()));
    let frac = exceed_fraction(z_mean.iter().chain(&z_var));
    Ok(MCReport {
        replicates,
        seed,
        empirical_mean_field: to_rows(len, &emp_mean),
        empirical_var_field: to_rows(len, &emp_var),
        analytic_mean_field: to_rows(len, &mean_ref),
        analytic_bias_field: to_rows(len, &bias_a),
        analytic_var_field: to_rows(len, &var_ref),
        z_mean: to_rows(len, &z_mean),
        z_var: to_rows(len, &z_var),
        max_abs_z,
        exceed_fraction: frac,
        pass: frac <= MAX_EXCEED_FRACTION,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsserlisReport {
    pub len: usize,
    pub replicates: usize,
    /// Largest `|z|` over the real and imaginary parts of every
    /// `E{x_a x_b* x_c x_d*}` entry.
    pub max_abs_z: f64,
    pub exceed_fraction: f64,
    /// Largest `|z|` over the pseudo-covariance `E{x_a x_b}` entries.
    pub pseudo_max_abs_z: f64,
    pub pseudo_exceed_fraction: f64,
    pub pass: bool,
}

type Moments = Vec<[f64; 4]>;

/// Empirical fourth moments of `x ~ CN(0, R)` against
/// `r(a,b) r(c,d) + r(a,d) r(c,b)`, plus the vanishing pseudo-covariance.
pub fn isserlis_check(r: &CMatrix, replicates: usize, seed: u64) -> Result<IsserlisReport> {
    let len = r.nrows();
    if len == 0 || len != r.ncols() {
        return Err(TfError::DimensionMismatch {
            expected: len,
            found: r.ncols(),
        });
    }
    if len > MAX_ISSERLIS_LEN {
        return Err(TfError::ExceedsGrid {
            name: "L",
            value: len,
            limit: MAX_ISSERLIS_LEN,
        });
    }
    if replicates < MIN_ISSERLIS_REPLICATES {
        return Err(invalid(
            "replicates",
            format!("{replicates} is below the minimum of {MIN_ISSERLIS_REPLICATES}"),
        ));
    }
    let eig = HermitianEigen::new(r);
    if eig.values.iter().any(|&v| v < -1e-10 * eig.max_abs()) {
        return Err(TfError::NotPsd {
            min_eig: *eig.values.last().unwrap_or(&0.0),
            max_eig: eig.max_abs(),
        });
    }
    let mut factor = eig.vectors.clone();
    for (j, &v) in eig.values.iter().enumerate() {
        let s = Complex64::new(v.max(0.0).sqrt(), 0.0);
        factor.column_mut(j).iter_mut().for_each(|z| *z *= s);
    }

    let quads = len.pow(4);
    let pairs = len * len;
    // per entry: sum re, sum im, sum re², sum im²
    let blocks = replicates.div_ceil(BLOCK);
    let partial: Vec<(Moments, Moments)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut four = vec![[0.0f64; 4]; quads];
            let mut pseudo = vec![[0.0f64; 4]; pairs];
            let mut rng = stream(seed, Purpose::Trial, b as u64);
            for _ in b * BLOCK..((b + 1) * BLOCK).min(replicates) {
                let w = nalgebra::DVector::from_vec(complex_normal_vec(&mut rng, len));
                let x = &factor * w;
                let mut q = 0;
                for a in 0..len {
                    for bb in 0..len {
                        let ab = x[a] * x[bb].conj();
                        let p = x[a] * x[bb];
                        let e = &mut pseudo[a * len + bb];
                        e[0] += p.re;
                        e[1] += p.im;
                        e[2] += p.re * p.re;
                        e[3] += p.im * p.im;
                        for c in 0..len {
                            for d in 0..len {
                                let v = ab * x[c] * x[d].conj();
                                let e = &mut four[q];
                                e[0] += v.re;
                                e[1] += v.im;
                                e[2] += v.re * v.re;
                                e[3] += v.im * v.im;
                                q += 1;
                            }
                        }
                    }
                }
            }
            (four, pseudo)
        })
        .collect();
    let mut four = vec![[0.0f64; 4]; quads];
    let mut pseudo = vec![[0.0f64; 4]; pairs];
    for (f, p) in &partial {
        for (s, a) in four.iter_mut().zip(f) {
            (0..4).for_each(|i| s[i] += a[i]);
        }
        for (s, a) in pseudo.iter_mut().zip(p) {
            (0..4).for_each(|i| s[i] += a[i]);
        }
    }

    let n = replicates as f64;
    let scores = |s: &[f64; 4], want: Complex64| -> [f64; 2] {
        let (mr, mi) = (s[0] / n, s[1] / n);
        let vr = (s[2] / n - mr * mr).max(0.0) / (n - 1.0);
        let vi = (s[3] / n - mi * mi).max(0.0) / (n - 1.0);
        [z_score(mr - want.re, vr), z_score(mi - want.im, vi)]
    };
    let mut z4 = Vec::with_capacity(2 * quads);
    let mut q = 0;
    for a in 0..len {
        for b in 0..len {
            for c in 0..len {
                for d in 0..len {
                    let want = r[(a, b)] * r[(c, d)] + r[(a, d)] * r[(c, b)];
                    z4.extend(scores(&four[q], want));
                    q += 1;
                }
            }
        }
    }
    let zp: Vec<f64> = pseudo
        .iter()
        .flat_map(|s| scores(s, Complex64::new(0.0, 0.0)))
        .collect();
    let max_abs_z = z4.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    let pseudo_max_abs_z = zp.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    let exceed = exceed_fraction(&z4);
    let pseudo_exceed = exceed_fraction(&zp);
    Ok(IsserlisReport {
        len,
        replicates,
        max_abs_z,
        exceed_fraction: exceed,
        pseudo_max_abs_z,
        pseudo_exceed_fraction: pseudo_exceed,
        pass: exceed <= MAX_EXCEED_FRACTION && pseudo_exceed <= MAX_EXCEED_FRACTION,
    })
}

/// `(1/L) Σ_{n,l} P^(n,l)`, which equals `tr P · I`.
pub fn lattice_shift_average(p: &OperatorKernel) -> CMatrix {
    let len = p.len();
    let mut acc = CMatrix::zeros(len, len);
    for n in 0..len {
        for l in 0..len {
            acc += operator_tf_shift(p, n as i64, l as i64).entries();
        }
    }
    acc / Complex64::new(len as f64, 0.0)
}

/// `(1/L) Σ_{n,l} [‖P̂^(n,l) R‖² + 2σ_n² tr{(P̂^(n,l))² R}]`, the variance
/// integral with the Hilbert-Schmidt quartic term.
pub fn hs_variance_integral(p_hat: &OperatorKernel, model: &CorrelationModel) -> Result<f64> {
    check_same(p_hat.len(), model.len())?;
    let len = p_hat.len();
    let r = model.r().entries();
    let quartic: f64 = (0..len * len)
        .into_par_iter()
        .map(|c| {
            let shifted = operator_tf_shift(p_hat, (c / len) as i64, (c % len) as i64);
            (shifted.entries() * r).norm_squared()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let cross: f64 = shifted_trace_field(&p_hat.compose(p_hat)?, model.r())?
        .iter()
        .map(|z| z.re)
        .sum();
    Ok((quartic + 2.0 * model.sigma_n2() * cross) / len as f64)
}

fn random_matrix<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CMatrix {
    CMatrix::from_fn(len, len, |_, _| complex_normal(rng))
}

/// Hermitian kernel with independent circular normal entries.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Result<OperatorKernel> {
    let g = random_matrix(rng, len);
    OperatorKernel::new((&g + g.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Positive semidefinite kernel `G G^H / L`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Result<OperatorKernel> {
    let g = random_matrix(rng, len);
    let r = &g * g.adjoint() / Complex64::new(len as f64, 0.0);
    OperatorKernel::new((&r + r.adjoint()) * Complex64::new(0.5, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppendixReport {
    pub trials: usize,
    pub len: usize,
    /// Closed form against integrated squared bias.
    pub btot_max_rel: f64,
    /// `(1/L) Σ P^(n,l)` against `tr P · I`.
    pub shift_trace_max_rel: f64,
    /// Closed-form `V_tot` against the Hilbert-Schmidt variance integral.
    pub hs_variance_max_rel: f64,
    /// Largest `(closed - integrated)/closed` with the trace-of-square
    /// quartic term; nonnegative by the trace inequality.
    pub vtot_trace_form_max_gap: f64,
    /// Whether the trace-of-square integral stayed below the closed form.
    pub vtot_bound_holds: bool,
    pub pass: bool,
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Random `(P, P̂, R, σ_n²)` draws checked against the trace identities.
pub fn appendix_identity_suite(trials: usize, len: usize, seed: u64) -> Result<AppendixReport> {
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let mut report = AppendixReport {
        trials,
        len,
        btot_max_rel: 0.0,
        shift_trace_max_rel: 0.0,
        hs_variance_max_rel: 0.0,
        vtot_trace_form_max_gap: 0.0,
        vtot_bound_holds: true,
        pass: false,
    };
    for t in 0..trials {
        let mut rng = stream(seed, Purpose::Trial, t as u64);
        let p = random_hermitian(&mut rng, len)?;
        let p_hat = random_hermitian(&mut rng, len)?;
        let r = random_psd(&mut rng, len)?;
        let sigma_n2: f64 = rng.random::<f64>();
        let model = CorrelationModel::new(r, sigma_n2, SpreadSupport::full(len)?)?;
        let spec = PrototypeSpec::new(p.clone(), p_hat.clone(), 0.0)?;
        let rep = global_error_report(&spec, &model)?;
        report.btot_max_rel = report.btot_max_rel.max(rel(rep.b_tot2, rep.b_tot2_integrated));

        let avg = lattice_shift_average(&p);
        let want = CMatrix::identity(len, len) * p.trace();
        let err = (avg - want).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        report.shift_trace_max_rel = report.shift_trace_max_rel.max(err / p.hs_norm().max(1e-300));

        let hs = hs_variance_integral(&p_hat, &model)?;
        report.hs_variance_max_rel = report.hs_variance_max_rel.max(rel(rep.v_tot, hs));

        let gap = (rep.v_tot - rep.v_tot_integrated) / rep.v_tot.abs().max(1e-300);
        report.vtot_trace_form_max_gap = report.vtot_trace_form_max_gap.max(gap);
        if rep.v_tot_integrated > rep.v_tot * (1.0 + IDENTITY_TOL) {
            report.vtot_bound_holds = false;
        }
    }
    report.pass = report.btot_max_rel <= IDENTITY_TOL
        && report.shift_trace_max_rel <= IDENTITY_TOL
        && report.hs_variance_max_rel <= IDENTITY_TOL
        && report.vtot_bound_holds;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{gwv_prototype, mvub_prototype};
    use crate::process::{correlation_from_system, synthesize_underspread_system};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn zero_model_passes_with_zero_fields() {
        let len = 4;
        let model = CorrelationModel::white(len, 0.0, 0.0).unwrap();
        let p = gwv_prototype(len, 0.0).unwrap();
        let spec = PrototypeSpec::new(p.clone(), p, 0.0).unwrap();
        let rep = run_mc(&model, &spec, 200, 1).unwrap();
        assert!(rep.pass);
        assert!(rep.empirical_mean_field.iter().flatten().all(|v| *v == 0.0));
        assert!(rep.empirical_var_field.iter().flatten().all(|v| *v == 0.0));
        assert!(run_mc(&model, &spec, 99, 1).is_err());
    }

    #[test]
    fn mc_matches_and_detects_perturbations() {
        let len = 4;
        let model = correlation_from_system(&synthesize_underspread_system(len, 1, 0, 5).unwrap())
            .unwrap()
            .with_noise(0.2)
            .unwrap();
        let p = gwv_prototype(len, 0.0).unwrap();
        let q = mvub_prototype(&p, model.support(), 0.0).unwrap();
        let spec = PrototypeSpec::new(p, q, 0.0).unwrap();
        let rep = run_mc(&model, &spec, 20_000, 3).unwrap();
        assert!(rep.pass, "max |z| {}", rep.max_abs_z);
        let doubled = Perturbation {
            variance_scale: 2.0,
            shift_se: 0.0,
        };
        assert!(!run_mc_with(&model, &spec, 20_000, 3, doubled).unwrap().pass);
        let shift = |k: f64| {
            let p = Perturbation {
                variance_scale: 1.0,
                shift_se: k,
            };
            run_mc_with(&model, &spec, 20_000, 3, p).unwrap()
        };
        // a 3 SE shift moves every score by exactly 3
        let moved = shift(3.0);
        for (a, b) in rep.z_mean.iter().flatten().zip(moved.z_mean.iter().flatten()) {
            assert!((a - b - 3.0).abs() < 1e-9);
        }
        assert!(!shift(8.0).pass);
    }

    #[test]
    fn mc_is_thread_count_independent() {
        let len = 4;
        let model = CorrelationModel::white(len, 1.0, 0.5).unwrap();
        let p = gwv_prototype(len, 0.0).unwrap();
        let spec = PrototypeSpec::new(p.clone(), p, 0.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_mc(&model, &spec, 3500, 9).unwrap())
        };
        let (mut a, mut b) = (run(1), run(4));
        a.wall_time = 0.0;
        b.wall_time = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn isserlis_examples() {
        let id = CMatrix::identity(2, 2);
        let rep = isserlis_check(&id, 20_000, 2).unwrap();
        assert!(rep.pass, "{rep:?}");

        let zero = CMatrix::zeros(3, 3);
        let rep = isserlis_check(&zero, 10_000, 2).unwrap();
        assert!(rep.pass && rep.max_abs_z == 0.0);

        let toy = CMatrix::from_row_slice(
            3,
            3,
            &[
                c(2.0),
                Complex64::new(0.5, 0.3),
                c(0.1),
                Complex64::new(0.5, -0.3),
                c(1.0),
                Complex64::new(0.0, 0.2),
                c(0.1),
                Complex64::new(0.0, -0.2),
                c(0.7),
            ],
        );
        assert!(isserlis_check(&toy, 20_000, 4).unwrap().pass);
        assert!(isserlis_check(&CMatrix::identity(9, 9), 10_000, 1).is_err());
        assert!(isserlis_check(&id, 100, 1).is_err());
    }

    #[test]
    fn appendix_suite() {
        let rep = appendix_identity_suite(5, 8, 11).unwrap();
        assert!(rep.btot_max_rel <= 1e-8);
        assert!(rep.shift_trace_max_rel <= 1e-10);
        assert!(rep.hs_variance_max_rel <= 1e-8);
        assert!(rep.vtot_bound_holds);
        assert!(rep.pass);
        assert!(appendix_identity_suite(0, 8, 1).is_err());
    }

    #[test]
    fn identity_anchor() {
        let len = 8;
        let id = OperatorKernel::identity(len).unwrap();
        let model = CorrelationModel::white(len, 1.0, 0.0).unwrap();
        let spec = PrototypeSpec::new(id.clone(), id.clone(), 0.0).unwrap();
        let rep = global_error_report(&spec, &model).unwrap();
        let l2 = (len * len) as f64;
        assert!((rep.v_tot_integrated - l2).abs() < 1e-9);
        assert!((rep.v_tot - l2).abs() < 1e-12);
        assert!((hs_variance_integral(&id, &model).unwrap() - l2).abs() < 1e-9);
    }

    #[test]
    fn zero_bias_operator_has_zero_discrepancy() {
        let len = 8;
        let mut rng = stream(1, Purpose::Trial, 0);
        let p = random_hermitian(&mut rng, len).unwrap();
        let model = CorrelationModel::new(random_psd(&mut rng, len).unwrap(), 0.1, SpreadSupport::full(len).unwrap()).unwrap();
        let spec = PrototypeSpec::new(p.clone(), p, 0.0).unwrap();
        let rep = global_error_report(&spec, &model).unwrap();
        assert!(rep.b_tot2 < 1e-20 && rep.b_tot2_integrated < 1e-20);
    }
}
