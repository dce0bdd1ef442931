use num_complex::Complex64;
use proptest::prelude::*;

use tfspec_core::estimator::{
    bias_field, estimate_spectrum, estimate_spectrum_direct, global_error_report, gwv_prototype,
    mvub_prototype, variance_field, PrototypeSpec,
};
use tfspec_core::lattice::lag_doppler_product;
use tfspec_core::linalg::CMatrix;
use tfspec_core::multiwindow::{matched_windows, multiwindow_prototype};
use tfspec_core::process::{
    correlation_from_system, expected_ambiguity, synthesize_underspread_system,
    wigner_ville_spectrum, CorrelationModel, SpreadSupport,
};
use tfspec_core::rng::{complex_normal, stream, Purpose};
use tfspec_core::validation::{lattice_shift_average, random_hermitian, random_psd};
use tfspec_core::{
    hs_inner, kernel_from_spreading, operator_tf_shift, spreading_function, symplectic_forward,
    symplectic_inverse, tf_shift, weyl_symbol, OperatorKernel, Signal, TfField,
};

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

fn grid() -> impl Strategy<Value = usize> {
    prop_oneof![Just(4usize), Just(8), Just(16)]
}

fn rng(seed: u64) -> rand_chacha::ChaCha20Rng {
    stream(seed, Purpose::Trial, 77)
}

fn general(len: usize, seed: u64) -> OperatorKernel {
    let mut r = rng(seed ^ 0x5a5a);
    OperatorKernel::from_fn(len, |_, _| complex_normal(&mut r)).unwrap()
}

fn unit_ramp(a: i64, b: i64, m: usize, k: usize, len: usize) -> Complex64 {
    let ph = 2.0 * std::f64::consts::PI * ((k as i64 * a - m as i64 * b) as f64) / len as f64;
    Complex64::from_polar(1.0, ph)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tf_shift_is_unitary(len in grid(), seed in any::<u64>(), m in -20i64..20, k in -20i64..20) {
        let mut r = rng(seed);
        let x = Signal::new((0..len).map(|_| complex_normal(&mut r)).collect()).unwrap();
        let y = tf_shift(&x, m, k);
        prop_assert!((y.norm_sqr() - x.norm_sqr()).abs() <= 1e-12 * x.norm_sqr());
    }

    #[test]
    fn gsf_shift_covariance(len in grid(), seed in any::<u64>(), a in -9i64..9, b in -9i64..9,
                            alpha in -0.5f64..=0.5) {
        let p = general(len, seed);
        let s = spreading_function(&p, alpha).unwrap();
        let t = spreading_function(&operator_tf_shift(&p, a, b), alpha).unwrap();
        let scale = max_abs(&s.values).max(1.0);
        for m in 0..len {
            for k in 0..len {
                prop_assert!((t.values[(m, k)].norm() - s.values[(m, k)].norm()).abs() <= 1e-10 * scale);
                // S_shifted = S · e^{-i2π(ka - mb)/L}
                let want = s.values[(m, k)] * unit_ramp(a, b, m, k, len).conj();
                prop_assert!((t.values[(m, k)] - want).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn weyl_symbol_shift_covariance(len in grid(), seed in any::<u64>(), a in 0i64..16, b in 0i64..16) {
        let p = random_hermitian(&mut rng(seed), len).unwrap();
        let w = weyl_symbol(&p, 0.0).unwrap();
        let ws = weyl_symbol(&operator_tf_shift(&p, a, b), 0.0).unwrap();
        let scale = max_abs(&w.values).max(1.0);
        for n in 0..len {
            for l in 0..len {
                let src = (((n as i64 - a).rem_euclid(len as i64)) as usize, ((l as i64 - b).rem_euclid(len as i64)) as usize);
                prop_assert!((ws.values[(n, l)] - w.values[src]).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn hs_parseval(len in grid(), seed in any::<u64>(), alpha in -0.5f64..=0.5) {
        let a = general(len, seed);
        let b = general(len, seed.wrapping_add(1));
        let sa = spreading_function(&a, alpha).unwrap();
        let sb = spreading_function(&b, alpha).unwrap();
        let lhs = hs_inner(&a, &b).unwrap();
        let rhs: Complex64 = sa.values.iter().zip(sb.values.iter()).map(|(x, y)| x * y.conj()).sum::<Complex64>()
            / len as f64;
        prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn symbol_spreading_duality(len in grid(), seed in any::<u64>(), alpha in -0.5f64..=0.5) {
        let mut r = rng(seed);
        let f = TfField { values: CMatrix::from_fn(len, len, |_, _| complex_normal(&mut r)), alpha };
        let back = weyl_symbol(&kernel_from_spreading(&symplectic_forward(&f)).unwrap(), alpha).unwrap();
        prop_assert!(max_abs(&(&back.values - &f.values)) <= 1e-10);
        let twice = symplectic_inverse(&symplectic_forward(&f));
        prop_assert!(max_abs(&(&twice.values - &f.values)) <= 1e-12);
    }

    #[test]
    fn alpha_invariant_core(len in grid(), seed in any::<u64>(), a1 in -0.5f64..=0.5, a2 in -0.5f64..=0.5) {
        let p = general(len, seed);
        let s1 = spreading_function(&p, a1).unwrap();
        let s2 = spreading_function(&p, a2).unwrap();
        let scale = max_abs(&s1.values).max(1.0);
        let core = |alpha: f64, m: usize, k: usize| {
            let th = lag_doppler_product(m, k, len) as f64;
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * alpha * th / len as f64)
        };
        for m in 0..len {
            for k in 0..len {
                let d = s1.values[(m, k)] * core(a1, m, k) - s2.values[(m, k)] * core(a2, m, k);
                prop_assert!(d.norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn wiener_khintchine_and_marginal(len in grid(), seed in any::<u64>(), alpha in -0.5f64..=0.5) {
        let r = random_psd(&mut rng(seed), len).unwrap();
        let model = CorrelationModel::new(r, 0.0, SpreadSupport::full(len).unwrap()).unwrap();
        let ew = wigner_ville_spectrum(&model, alpha).unwrap();
        let via = symplectic_inverse(&expected_ambiguity(&model, alpha).unwrap());
        let scale = max_abs(&ew.values).max(1.0);
        prop_assert!(max_abs(&(&ew.values - &via.values)) <= 1e-10 * scale);
        let total: Complex64 = ew.values.iter().sum();
        prop_assert!((total / len as f64 - model.trace()).norm() <= 1e-10 * model.trace().max(1.0));
        let ew0 = wigner_ville_spectrum(&model, 0.0).unwrap();
        prop_assert!(ew0.imag_ratio() <= 1e-10);
    }

    #[test]
    fn shift_trace_identity(len in grid(), seed in any::<u64>()) {
        let p = general(len, seed);
        let avg = lattice_shift_average(&p);
        let want = CMatrix::identity(len, len) * p.trace();
        prop_assert!(max_abs(&(avg - want)) <= 1e-10 * p.hs_norm());
    }

    #[test]
    fn bias_identity_and_bounds(len in prop_oneof![Just(4usize), Just(8)], seed in any::<u64>(), s2 in 0.0f64..2.0) {
        let mut r = rng(seed);
        let p = random_hermitian(&mut r, len).unwrap();
        let q = random_hermitian(&mut r, len).unwrap();
        let model = CorrelationModel::new(random_psd(&mut r, len).unwrap(), s2, SpreadSupport::full(len).unwrap()).unwrap();
        let spec = PrototypeSpec::new(p, q.clone(), 0.0).unwrap();
        let rep = global_error_report(&spec, &model).unwrap();
        prop_assert!((rep.b_tot2 - rep.b_tot2_integrated).abs() <= 1e-8 * rep.b_tot2.max(1e-300));
        let b = bias_field(&spec, &model).unwrap();
        let v = variance_field(&q, &model).unwrap();
        prop_assert!(max_abs(&b.values) <= rep.b_max_bound * (1.0 + 1e-12));
        prop_assert!(v.values.iter().all(|z| z.re <= rep.v_max_bound * (1.0 + 1e-12)));
        prop_assert!(v.values.iter().all(|z| z.re >= -1e-9 * rep.v_max_bound));
        prop_assert!(rep.v_tot_integrated <= rep.v_tot * (1.0 + 1e-12));
    }

    #[test]
    fn mvub_unbiased_on_its_class(seed in 0u64..10_000, tau in 0usize..2, nu in 0usize..2, alpha in -0.5f64..=0.5) {
        let len = 16;
        let model = correlation_from_system(&synthesize_underspread_system(len, tau, nu, seed).unwrap()).unwrap();
        let p = gwv_prototype(len, alpha).unwrap();
        let q = mvub_prototype(&p, model.support(), alpha).unwrap();
        let spec = PrototypeSpec::new(p, q, alpha).unwrap();
        let b = bias_field(&spec, &model).unwrap();
        prop_assert!(max_abs(&b.values) <= 1e-10 * model.trace().max(1.0));
    }

    #[test]
    fn mvub_has_minimal_norm(seed in any::<u64>(), tau in 0usize..3, nu in 0usize..3) {
        let len = 16;
        let support = SpreadSupport::new(len, tau, nu).unwrap();
        let p = gwv_prototype(len, 0.0).unwrap();
        let q = mvub_prototype(&p, &support, 0.0).unwrap();
        let h = random_hermitian(&mut rng(seed), len).unwrap();
        let off_mask = h.sub(&mvub_prototype(&h, &support, 0.0).unwrap()).unwrap();
        let competitor = q.add(&off_mask).unwrap();
        let sc = spreading_function(&competitor, 0.0).unwrap();
        let sq = spreading_function(&q, 0.0).unwrap();
        for m in 0..len {
            for k in 0..len {
                if support.contains(m, k) {
                    prop_assert!((sc.values[(m, k)] - sq.values[(m, k)]).norm() <= 1e-10);
                }
            }
        }
        prop_assert!(q.hs_norm_sqr() <= competitor.hs_norm_sqr());
    }

    #[test]
    fn estimate_paths_agree(len in grid(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_hermitian(&mut r, len).unwrap();
        let y = Signal::new((0..len).map(|_| complex_normal(&mut r)).collect()).unwrap();
        let a = estimate_spectrum(&p, &y).unwrap();
        let b = estimate_spectrum_direct(&p, &y).unwrap();
        prop_assert!(max_abs(&(&a.values - &b.values)) <= 1e-10 * max_abs(&b.values).max(1.0));
    }

    #[test]
    fn matched_window_invariants(seed in any::<u64>(), t in 2usize..16, n in 1usize..8) {
        let len = 16;
        let n = n.min(t);
        let p = random_hermitian(&mut rng(seed), len).unwrap();
        let ws = matched_windows(&p, t, n).unwrap();
        prop_assert!(ws.gram_defect() <= 1e-10);
        let lams = ws.eigenvalues().unwrap();
        prop_assert!(lams.windows(2).all(|w| w[0] >= w[1]));
        let pn = multiwindow_prototype(&ws, len).unwrap();
        prop_assert!((pn.trace().re - 1.0).abs() <= 1e-12);
        prop_assert!((pn.hs_norm_sqr() - 1.0 / n as f64).abs() <= 1e-12);
        let wider = matched_windows(&p, t, t).unwrap();
        for (x, y) in lams.iter().zip(wider.eigenvalues().unwrap()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
