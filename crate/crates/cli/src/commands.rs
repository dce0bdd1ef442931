use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use tfspec_core::estimator::{
    estimate_spectrum, global_error_report, gwv_prototype, mvub_prototype, noise_bias_correct,
    bias_field, variance_field,
};
use tfspec_core::linalg::CMatrix;
use tfspec_core::multiwindow::{
    matched_windows, multiwindow_prototype, optimal_rank, sinusoidal_multitaper_estimate,
    sinusoidal_tapers,
};
use tfspec_core::process::{
    correlation_from_system, expected_ambiguity, observe, sample_realization,
    synthesize_underspread_system, wigner_ville_spectrum,
};
use tfspec_core::validation::{
    appendix_identity_suite, isserlis_check, run_mc_with, Perturbation, MIN_ISSERLIS_REPLICATES,
    MIN_REPLICATES,
};
use tfspec_core::{
    CorrelationModel, OperatorKernel, PrototypeSpec, Signal, SpreadSupport, TfField, WindowSet,
};

use crate::config::{EstimatorKind, RunConfig};
use crate::error::CliError;
use crate::io::{read_field, write_field, write_json, FieldData, FieldMeta};

fn matrix_field(m: &CMatrix, kind: &str, alpha: f64, seed: Option<u64>) -> FieldData {
    let (rows, cols) = m.shape();
    let values = (0..rows).flat_map(|i| (0..cols).map(move |j| m[(i, j)])).collect();
    FieldData {
        meta: FieldMeta {
            rows,
            cols,
            kind: kind.into(),
            alpha,
            seed,
        },
        values,
    }
}

fn signal_field(x: &Signal, seed: Option<u64>) -> FieldData {
    FieldData {
        meta: FieldMeta {
            rows: 1,
            cols: x.len(),
            kind: "signal".into(),
            alpha: 0.0,
            seed,
        },
        values: x.samples().to_vec(),
    }
}

fn synthesized_model(cfg: &RunConfig) -> Result<(OperatorKernel, CorrelationModel), CliError> {
    let sys = synthesize_underspread_system(cfg.l, cfg.tau_max, cfg.nu_max, cfg.seed)?;
    let model = correlation_from_system(&sys)?.with_noise(cfg.sigma_n2)?;
    Ok((sys.h, model))
}

pub fn synthesize(cfg: &RunConfig) -> Result<(), CliError> {
    let (h, model) = synthesized_model(cfg)?;
    let ea = expected_ambiguity(&model, cfg.alpha)?;
    let ew = wigner_ville_spectrum(&model, cfg.alpha)?;
    let x = observe(&sample_realization(&model, cfg.seed)?, cfg.sigma_n2, cfg.seed)?;
    let seed = Some(cfg.seed);
    let dir = &cfg.out;
    let files = [
        write_field(dir, "H", cfg.format, &matrix_field(h.entries(), "kernel", 0.0, seed))?,
        write_field(dir, "R", cfg.format, &matrix_field(model.r().entries(), "kernel", 0.0, seed))?,
        write_field(dir, "EA", cfg.format, &matrix_field(&ea.values, "ambiguity", cfg.alpha, seed))?,
        write_field(dir, "EW", cfg.format, &matrix_field(&ew.values, "tf", cfg.alpha, seed))?,
        write_field(dir, "x", cfg.format, &signal_field(&x, seed))?,
    ];
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    write_json(
        &dir.join("meta.json"),
        &json!({
            "config": cfg,
            "seed": cfg.seed,
            "s_x": model.support().spread(),
            "process_support": model.support(),
            "trace_R": model.trace(),
            "x_includes_noise": cfg.sigma_n2 > 0.0,
            "files": names,
        }),
    )?;
    println!("synthesized {} files in {}", names.len() + 1, dir.display());
    Ok(())
}

/// Support of the process the estimator is matched to: the system
/// half-widths from the config, doubled.
fn process_support(cfg: &RunConfig) -> Result<SpreadSupport, CliError> {
    Ok(SpreadSupport::new(cfg.l, cfg.tau_max, cfg.nu_max)?.doubled())
}

fn default_rank(cfg: &RunConfig, support: &SpreadSupport, trace_r: f64) -> Result<usize, CliError> {
    if let Some(n) = cfg.n {
        return Ok(n);
    }
    // overspread supports (s_x >= 1) get a single window
    Ok(optimal_rank(support.spread().min(1.0), cfg.sigma_n2, trace_r.max(f64::MIN_POSITIVE), cfg.t_len())?.n)
}

struct Prototypes {
    target: OperatorKernel,
    estimator: OperatorKernel,
    windows: Option<WindowSet>,
}

fn build_prototypes(cfg: &RunConfig, trace_r: f64) -> Result<Prototypes, CliError> {
    let target = gwv_prototype(cfg.l, cfg.alpha)?;
    let support = process_support(cfg)?;
    let (estimator, windows) = match cfg.estimator {
        EstimatorKind::Gwv => (target.clone(), None),
        EstimatorKind::Mvub => (mvub_prototype(&target, &support, cfg.alpha)?, None),
        EstimatorKind::Multiwindow => {
            let mvub = mvub_prototype(&target, &support, cfg.alpha)?;
            let ws = matched_windows(&mvub, cfg.t_len(), default_rank(cfg, &support, trace_r)?)?;
            (multiwindow_prototype(&ws, cfg.l)?, Some(ws))
        }
        EstimatorKind::Sinusoidal => {
            let ws = sinusoidal_tapers(cfg.t_len(), cfg.taper_count())?;
            (multiwindow_prototype(&ws, cfg.l)?, Some(ws))
        }
    };
    Ok(Prototypes {
        target,
        estimator,
        windows,
    })
}

fn read_signal(path: &Path, len: usize) -> Result<Signal, CliError> {
    let data = read_field(path)?;
    if data.meta.rows != 1 {
        return Err(CliError::Io(format!(
            "{}: expected a signal with 1 row, found {}",
            path.display(),
            data.meta.rows
        )));
    }
    if data.meta.cols != len {
        return Err(CliError::Config(format!(
            "L = {len} does not match the input signal length {}",
            data.meta.cols
        )));
    }
    if data.values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(CliError::Io(format!("{}: non-finite sample", path.display())));
    }
    Signal::new(data.values).map_err(CliError::from)
}

fn read_model(path: &Path, cfg: &RunConfig) -> Result<CorrelationModel, CliError> {
    let data = read_field(path)?;
    if data.meta.rows != cfg.l || data.meta.cols != cfg.l {
        return Err(CliError::Io(format!(
            "{}: expected an {l} x {l} kernel, found {} x {}",
            path.display(),
            data.meta.rows,
            data.meta.cols,
            l = cfg.l
        )));
    }
    let m = CMatrix::from_row_slice(cfg.l, cfg.l, &data.values);
    let bad = |e: tfspec_core::TfError| CliError::Io(format!("{}: {e}", path.display()));
    let r = OperatorKernel::new(m).map_err(bad)?;
    CorrelationModel::new(r, cfg.sigma_n2, process_support(cfg)?).map_err(bad)
}

#[derive(Serialize)]
struct EstimateMeta<'a> {
    config: &'a RunConfig,
    rank: Option<usize>,
    trace_p_hat: f64,
    b0: f64,
    noise_corrected: bool,
}

pub fn estimate(cfg: &RunConfig, input: &Path, model_path: Option<&Path>) -> Result<(), CliError> {
    let y = read_signal(input, cfg.l)?;
    let model = model_path.map(|p| read_model(p, cfg)).transpose()?;
    let trace_r = match &model {
        Some(m) => m.trace(),
        None => (y.norm_sqr() - cfg.l as f64 * cfg.sigma_n2).max(0.0),
    };
    let protos = build_prototypes(cfg, trace_r)?;
    let raw = match cfg.estimator {
        EstimatorKind::Sinusoidal => sinusoidal_multitaper_estimate(&y, cfg.t_len(), cfg.taper_count())?,
        _ => estimate_spectrum(&protos.estimator, &y)?,
    };
    let field: TfField = if cfg.sigma_n2 > 0.0 {
        noise_bias_correct(&raw, &protos.estimator, cfg.sigma_n2)
    } else {
        raw
    };
    let field_alpha = match cfg.estimator {
        EstimatorKind::Gwv | EstimatorKind::Mvub => cfg.alpha,
        _ => 0.0,
    };
    let dir = &cfg.out;
    write_field(dir, "S", cfg.format, &matrix_field(&field.values, "tf", field_alpha, None))?;
    let tr = protos.estimator.trace().re;
    write_json(
        &dir.join("estimate.json"),
        &EstimateMeta {
            config: cfg,
            rank: protos.windows.as_ref().map(|w| w.rank()),
            trace_p_hat: tr,
            b0: cfg.sigma_n2 * tr,
            noise_corrected: cfg.sigma_n2 > 0.0,
        },
    )?;
    if let Some(model) = model {
        let spec = PrototypeSpec::new(protos.target, protos.estimator, cfg.alpha)?;
        let bias = bias_field(&spec, &model)?;
        let var = variance_field(spec.estimator(), &model)?;
        write_field(dir, "bias", cfg.format, &matrix_field(&bias.values, "tf", 0.0, None))?;
        write_field(dir, "variance", cfg.format, &matrix_field(&var.values, "tf", 0.0, None))?;
        write_json(&dir.join("report.json"), &global_error_report(&spec, &model)?)?;
    }
    println!("wrote {} estimate to {}", format!("{:?}", cfg.estimator).to_lowercase(), dir.display());
    Ok(())
}

pub fn validate(cfg: &RunConfig, perturb_variance: Option<f64>) -> Result<(), CliError> {
    if cfg.replicates < MIN_REPLICATES {
        return Err(CliError::Config(format!(
            "replicates must be at least {MIN_REPLICATES} (got {})",
            cfg.replicates
        )));
    }
    let (_, model) = synthesized_model(cfg)?;

    let identities = appendix_identity_suite(20, cfg.l.min(16), cfg.seed)?;

    let isserlis_r = if cfg.l <= 8 {
        model.r().entries().clone()
    } else {
        let small = RunConfig {
            l: 8,
            tau_max: cfg.tau_max.min(4),
            nu_max: cfg.nu_max.min(4),
            ..cfg.clone()
        };
        synthesized_model(&small)?.1.r().entries().clone()
    };
    let isserlis = isserlis_check(&isserlis_r, cfg.replicates.max(MIN_ISSERLIS_REPLICATES), cfg.seed)?;

    let target = gwv_prototype(cfg.l, cfg.alpha)?;
    let mvub = mvub_prototype(&target, model.support(), cfg.alpha)?;
    let spec = PrototypeSpec::new(target, mvub, cfg.alpha)?;
    let perturb = Perturbation {
        variance_scale: perturb_variance.unwrap_or(1.0),
        ..Perturbation::default()
    };
    let mc = run_mc_with(&model, &spec, cfg.replicates, cfg.seed, perturb)?;

    let verdict = |p: bool| if p { "PASS" } else { "FAIL" };
    println!(
        "trace identities: {} (B_tot {:.2e}, shift-trace {:.2e}, HS variance {:.2e}, trace-form V_tot gap {:.3})",
        verdict(identities.pass),
        identities.btot_max_rel,
        identities.shift_trace_max_rel,
        identities.hs_variance_max_rel,
        identities.vtot_trace_form_max_gap
    );
    println!(
        "isserlis: {} (max |z| {:.2}, pseudo-covariance max |z| {:.2})",
        verdict(isserlis.pass),
        isserlis.max_abs_z,
        isserlis.pseudo_max_abs_z
    );
    println!(
        "monte carlo: {} ({} replicates, max |z| {:.2}, exceed fraction {:.2e}, {:.1} s)",
        verdict(mc.pass),
        mc.replicates,
        mc.max_abs_z,
        mc.exceed_fraction,
        mc.wall_time
    );
    write_json(
        &cfg.out.join("validate.json"),
        &json!({
            "config": cfg,
            "perturb_variance": perturb_variance,
            "identities": identities,
            "isserlis": isserlis,
            "monte_carlo": mc,
        }),
    )?;
    let failing: Vec<&str> = [
        ("identities", identities.pass),
        ("isserlis", isserlis.pass),
        ("monte_carlo", mc.pass),
    ]
    .iter()
    .filter(|(_, p)| !p)
    .map(|(n, _)| *n)
    .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("failing suites: {}", failing.join(", "))))
    }
}

pub fn tapers(cfg: &RunConfig) -> Result<(), CliError> {
    let ws = match cfg.estimator {
        EstimatorKind::Sinusoidal => sinusoidal_tapers(cfg.t_len(), cfg.taper_count())?,
        _ => {
            let support = process_support(cfg)?;
            let target = gwv_prototype(cfg.l, cfg.alpha)?;
            let mvub = mvub_prototype(&target, &support, cfg.alpha)?;
            let n = default_rank(cfg, &support, 1.0)?;
            matched_windows(&mvub, cfg.t_len(), n)?
        }
    };
    let embedded = ws.embed(cfg.l)?;
    let values: Vec<Complex64> = embedded.concat();
    let data = FieldData {
        meta: FieldMeta {
            rows: ws.rank(),
            cols: cfg.l,
            kind: "windows".into(),
            alpha: 0.0,
            seed: None,
        },
        values,
    };
    write_field(&cfg.out, "windows", cfg.format, &data)?;
    write_json(
        &cfg.out.join("windows_meta.json"),
        &json!({
            "config": cfg,
            "rank": ws.rank(),
            "t_support": ws.t_support(),
            "eigenvalues": ws.eigenvalues(),
        }),
    )?;
    println!("wrote {} windows to {}", ws.rank(), cfg.out.display());
    Ok(())
}
