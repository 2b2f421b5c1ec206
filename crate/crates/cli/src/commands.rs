//! Subcommand implementations.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use ned_core::crossing::{verify_crossing_equivalence, CrossingConfig, CrossingHomeomorphism};
use ned_core::dichotomy::{
    check_coefficient_bound, estimate_spectrum, fit_bounded_growth, fit_contraction,
    CoefficientBound, ContractionCertificate, DichotomyError, GrowthCertificate,
};
use ned_core::flow::{LinearSystem, NonlinearPerturbation};
use ned_core::kinematics::{verify_lipschitz_transfer, KinematicTransform, TransferSamples};
use ned_core::lyapunov::{
    build_quadratic, build_strict, quadratic_identity_report, verify_axioms, AxiomReport,
    LyapunovFunction, QuadraticIdentityReport, SampleSpec,
};
use ned_core::picard::{verify_pl_equivalence, PLHomeomorphism, ParamPoint, PicardError};
use rayon::prelude::*;
use serde::Serialize;

use crate::util::{
    self, generate_points, load_perturbation, load_system, load_transform,
    maybe_transform_perturbation, maybe_transform_system, read_points, write_csv, write_json,
};
use crate::{CertifyArgs, CliError, CommonArgs, LinearizeArgs, LyapunovArgs, Method, PipelineArgs,
    SpectrumArgs, VKind, VerifyArgs};

/// Candidate rates for certificate fits: geometric resolution near zero plus
/// a linear sweep for the bulk.
fn alpha_candidates() -> Vec<f64> {
    let mut grid = ned_core::dichotomy::default_alpha_grid(0.02);
    grid.extend((1..=120).map(|k| 0.05 * k as f64));
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    grid
}

fn fit_cert(sys: &LinearSystem, common: &CommonArgs) -> Result<ContractionCertificate, CliError> {
    let grid = alpha_candidates();
    let result = match common.mu_cap {
        Some(cap) => fit_contraction(sys, common.t_max, common.samples, &grid, cap),
        // Default: candidates must keep their nonuniformity below their own
        // rate, the gap every downstream construction needs.
        None => {
            let mut best: Option<ContractionCertificate> = None;
            for &alpha in &grid {
                if let Ok(c) = fit_contraction(sys, common.t_max, common.samples, &[alpha], alpha)
                {
                    if best.as_ref().map_or(true, |b| c.alpha > b.alpha) {
                        best = Some(c);
                    }
                }
            }
            best.ok_or_else(|| DichotomyError::NotCertifiable {
                detail: format!(
                    "no rate in [{:.3e}, {:.3e}] passes the envelope validation with mu <= alpha on [0, {}]",
                    grid.first().unwrap(),
                    grid.last().unwrap(),
                    common.t_max
                ),
            })
        }
    };
    result.map_err(|e| match e {
        DichotomyError::NotCertifiable { .. } => CliError::NotCertifiable(e.to_string()),
        DichotomyError::BadGrid(m) => CliError::Usage(m),
        other => CliError::Other(other.to_string()),
    })
}

fn load_common(
    common: &CommonArgs,
) -> Result<(LinearSystem, Option<KinematicTransform>), CliError> {
    let transform = match &common.transform {
        Some(p) => Some(load_transform(p)?),
        None => None,
    };
    let sys = maybe_transform_system(load_system(&common.system)?, &transform)?;
    Ok((sys, transform))
}

#[derive(Serialize)]
struct CertBundle {
    contraction: ContractionCertificate,
    growth: GrowthCertificate,
    coefficient: CoefficientBound,
    /// All certificates hold on [0, t_max] at grid resolution only.
    window_caveat: String,
}

fn certify_bundle(sys: &LinearSystem, common: &CommonArgs) -> Result<CertBundle, CliError> {
    let contraction = fit_cert(sys, common)?;
    let growth = fit_bounded_growth(sys, common.t_max, common.samples)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let coefficient = check_coefficient_bound(sys, common.t_max, common.samples)
        .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(CertBundle {
        contraction,
        growth,
        coefficient,
        window_caveat: format!(
            "valid on [0, {}] at {}-sample resolution",
            common.t_max, common.samples
        ),
    })
}

pub fn certify(args: &CertifyArgs) -> Result<String, CliError> {
    let (sys, _) = load_common(&args.common)?;
    let bundle = certify_bundle(&sys, &args.common)?;
    write_json(&args.common.out, "cert.json", &bundle)?;
    Ok(format!(
        "certify: ok K={:.6} alpha={:.6} mu={:.6} residual={:.3e} -> {}",
        bundle.contraction.k,
        bundle.contraction.alpha,
        bundle.contraction.mu,
        bundle.contraction.residual,
        args.common.out.join("cert.json").display()
    ))
}

pub fn spectrum(args: &SpectrumArgs) -> Result<String, CliError> {
    if !(args.lambda_min < args.lambda_max) || args.step <= 0.0 {
        return Err(CliError::Usage(format!(
            "empty shift grid: [{}, {}] step {}",
            args.lambda_min, args.lambda_max, args.step
        )));
    }
    let (sys, _) = load_common(&args.common)?;
    let mu_cap = args.common.mu_cap.unwrap_or(3.0);
    let est = estimate_spectrum(
        &sys,
        args.lambda_min,
        args.lambda_max,
        args.step,
        args.common.t_max,
        args.common.samples,
        mu_cap,
    )
    .map_err(|e| match e {
        DichotomyError::BadGrid(m) => CliError::Usage(m),
        other => CliError::Other(other.to_string()),
    })?;
    write_spectrum_csv(&args.common.out, &est)?;
    write_json(&args.common.out, "intervals.json", &est)?;
    let ivs: Vec<String> = est
        .intervals
        .iter()
        .map(|iv| format!("[{:.4}, {:.4}]", iv.lo, iv.hi))
        .collect();
    Ok(format!(
        "spectrum: {} interval(s) {} -> {}",
        est.intervals.len(),
        ivs.join(" "),
        args.common.out.join("spectrum.csv").display()
    ))
}

fn write_spectrum_csv(
    out: &Path,
    est: &ned_core::dichotomy::SpectrumEstimate,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Other(format!("cannot create {}: {e}", out.display())))?;
    let mut text = String::from("lambda,verdict,K,alpha,mu\n");
    for v in &est.verdicts {
        let opt = |x: Option<f64>| x.map(util::fmt_float).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            util::fmt_float(v.lambda),
            v.verdict,
            opt(v.k),
            opt(v.alpha),
            opt(v.mu)
        ));
    }
    std::fs::write(out.join("spectrum.csv"), text)
        .map_err(|e| CliError::Other(format!("cannot write spectrum.csv: {e}")))
}

#[derive(Serialize)]
struct LyapunovBundle {
    evaluator: String,
    alpha_v: f64,
    horizon: f64,
    tail_bound: f64,
    certificate: ContractionCertificate,
    axioms: AxiomReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    quadratic_identity: Option<Vec<QuadraticIdentityReport>>,
}

fn build_evaluator(
    sys: &LinearSystem,
    cert: &ContractionCertificate,
    kind: VKind,
    alpha_v: Option<f64>,
    tol: f64,
    t_work: f64,
) -> Result<(Arc<dyn LyapunovFunction>, f64, f64, f64, Option<Vec<QuadraticIdentityReport>>), CliError>
{
    let alpha_v = alpha_v.unwrap_or(cert.alpha / 2.0);
    match kind {
        VKind::Strict => {
            let v = build_strict(cert, sys, alpha_v, tol)
                .map_err(|e| CliError::Usage(e.to_string()))?
                .with_working_window(t_work, tol);
            let (h, tb) = (v.horizon, v.tail_bound);
            Ok((Arc::new(v), alpha_v, h, tb, None))
        }
        VKind::Quadratic => {
            let v = build_quadratic(cert, sys, alpha_v, tol)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let mut identities = Vec::new();
            for k in 0..3 {
                let t = t_work * (k as f64 + 0.5) / 3.0;
                identities.push(
                    quadratic_identity_report(&v, t)
                        .map_err(|e| CliError::Other(e.to_string()))?,
                );
            }
            let (h, tb) = (v.horizon, v.tail_bound);
            Ok((Arc::new(v), alpha_v, h, tb, Some(identities)))
        }
    }
}

pub fn lyapunov(args: &LyapunovArgs) -> Result<String, CliError> {
    let (sys, _) = load_common(&args.common)?;
    let cert = fit_cert(&sys, &args.common)?;
    let (v, alpha_v, horizon, tail_bound, quadratic_identity) = build_evaluator(
        &sys,
        &cert,
        args.method,
        args.alpha_v,
        args.tol,
        args.common.t_max,
    )?;
    let spec = SampleSpec {
        n_samples: args.check_samples,
        t_max: args.common.t_max,
        state_scale: 2.0,
        seed: args.seed,
        rel_tol: 1e-6,
    };
    let axioms =
        verify_axioms(v.as_ref(), &sys, &spec).map_err(|e| CliError::Other(e.to_string()))?;
    let ok = axioms.all_pass();
    let bundle = LyapunovBundle {
        evaluator: match args.method {
            VKind::Strict => "strict".into(),
            VKind::Quadratic => "quadratic".into(),
        },
        alpha_v,
        horizon,
        tail_bound,
        certificate: cert,
        axioms,
        quadratic_identity,
    };
    write_json(&args.common.out, "lyapunov_report.json", &bundle)?;
    Ok(format!(
        "lyapunov: {} gamma={:.6} axioms={} -> {}",
        bundle.evaluator,
        alpha_v,
        if ok { "pass" } else { "FAIL" },
        args.common.out.join("lyapunov_report.json").display()
    ))
}

struct LinearizeSetup {
    sys: LinearSystem,
    pert: NonlinearPerturbation,
    cert: ContractionCertificate,
    points: Vec<(f64, DVector<f64>)>,
    transform: Option<KinematicTransform>,
}

fn setup_linearize(args: &LinearizeArgs) -> Result<LinearizeSetup, CliError> {
    let (sys, transform) = load_common(&args.common)?;
    let pert = maybe_transform_perturbation(load_perturbation(&args.perturbation)?, &transform)?;
    if pert.dim() != sys.dim() {
        return Err(CliError::Usage(format!(
            "perturbation dimension {} does not match system dimension {}",
            pert.dim(),
            sys.dim()
        )));
    }
    let cert = fit_cert(&sys, &args.common)?;
    let points = match &args.points {
        Some(p) => read_points(p, sys.dim())?,
        None => generate_points(sys.dim(), args.n_points, args.common.t_max, args.seed),
    };
    Ok(LinearizeSetup {
        sys,
        pert,
        cert,
        points,
        transform,
    })
}

fn check_preconditions(
    method: Method,
    setup: &LinearizeSetup,
) -> Result<(), CliError> {
    let c = &setup.cert;
    match method {
        Method::Picard => {
            let ratio = c.k * setup.pert.l_f / c.alpha;
            if ratio >= 1.0 {
                return Err(CliError::Precondition(format!(
                    "contraction ratio K L_f / alpha = {:.6} >= 1 (K = {:.6}, L_f = {:.6}, alpha = {:.6})",
                    ratio, c.k, setup.pert.l_f, c.alpha
                )));
            }
        }
        Method::Crossing => {
            let gap = c.alpha - c.mu;
            if !(setup.pert.l_f < gap) {
                return Err(CliError::Precondition(format!(
                    "L_f = {:.6} is not below the contraction gap alpha - mu = {:.6}; \
                     the level-set decay argument needs L_f < alpha - mu",
                    setup.pert.l_f, gap
                )));
            }
        }
    }
    Ok(())
}

fn crossing_hom(
    setup: &LinearizeSetup,
    tol: f64,
    level: f64,
    t_work: f64,
) -> Result<CrossingHomeomorphism, CliError> {
    // alpha_V in the middle of the gap keeps both the horizon and the
    // crossing bracket well conditioned.
    let alpha_v = 0.5 * (setup.cert.alpha - setup.cert.mu).max(0.0).min(setup.cert.alpha);
    let v = build_strict(&setup.cert, &setup.sys, alpha_v, tol.min(1e-8))
        .map_err(|e| CliError::Usage(e.to_string()))?
        .with_working_window(t_work, tol.min(1e-8));
    let cfg = CrossingConfig {
        level,
        root_tol: tol.min(1e-9),
        ..CrossingConfig::default()
    };
    Ok(CrossingHomeomorphism::new(
        Arc::new(v),
        setup.sys.clone(),
        setup.pert.clone(),
        cfg,
    ))
}

pub fn linearize(args: &LinearizeArgs) -> Result<String, CliError> {
    let setup = setup_linearize(args)?;
    check_preconditions(args.method, &setup)?;
    let dim = setup.sys.dim();
    let out = &args.common.out;
    let mut header: Vec<String> = vec!["tau".into()];
    header.extend((1..=dim).map(|i| format!("xi_{i}")));
    header.extend((1..=dim).map(|i| format!("h_{i}")));

    let (rows, skipped, verification_name) = match args.method {
        Method::Crossing => {
            let hom = crossing_hom(&setup, args.tol, args.level, args.common.t_max)?;
            header.push("T".into());
            let mut skipped = 0usize;
            let results: Vec<Option<Vec<f64>>> = setup
                .points
                .par_iter()
                .map(|(tau, xi)| -> Result<Option<Vec<f64>>, CliError> {
                    let t_cross = match hom.crossing_time_linear(*tau, xi) {
                        Ok(t) => t,
                        Err(ned_core::crossing::CrossingError::OutOfDomain { .. }) => {
                            return Ok(None)
                        }
                        Err(e) => return Err(CliError::Other(e.to_string())),
                    };
                    let h = hom
                        .map_h(*tau, xi)
                        .map_err(|e| CliError::Other(e.to_string()))?;
                    let mut row = vec![*tau];
                    row.extend(xi.iter());
                    row.extend(h.iter());
                    row.push(t_cross);
                    Ok(Some(row))
                })
                .collect::<Result<_, _>>()?;
            let rows: Vec<Vec<f64>> = results
                .into_iter()
                .inspect(|r| {
                    if r.is_none() {
                        skipped += 1;
                    }
                })
                .flatten()
                .collect();
            let report = verify_crossing_equivalence(&hom, &setup.points, 1e-5, 1e-5)
                .map_err(|e| CliError::Other(e.to_string()))?;
            write_json(out, "verification.json", &report)?;
            (rows, skipped, "verification.json")
        }
        Method::Picard => {
            let hom = PLHomeomorphism::new(
                setup.sys.clone(),
                setup.pert.clone(),
                setup.cert.clone(),
            );
            header.push("iterations".into());
            header.push("residual".into());
            let t_window = args.common.t_max;
            let rows: Vec<Vec<f64>> = setup
                .points
                .par_iter()
                .map(|(tau, xi)| -> Result<Vec<f64>, CliError> {
                    let kappa = ParamPoint::new(*tau, xi.clone());
                    let z = hom
                        .picard_z(&kappa, t_window.max(*tau), args.tol, 200)
                        .map_err(picard_err)?;
                    let h = xi + z.eval(*tau);
                    let mut row = vec![*tau];
                    row.extend(xi.iter());
                    row.extend(h.iter());
                    row.push(z.iterations as f64);
                    row.push(z.residual);
                    Ok(row)
                })
                .collect::<Result<_, _>>()?;
            let report =
                verify_pl_equivalence(&hom, &setup.points, t_window, args.tol, 1e-6, 1e-5)
                    .map_err(picard_err)?;
            write_json(out, "verification.json", &report)?;
            (rows, 0, "verification.json")
        }
    };
    write_csv(out, "mapped_points.csv", &header, &rows)?;
    if skipped > 0 {
        eprintln!("ned: {skipped} point(s) skipped: crossing before t = 0 (out of domain)");
    }
    Ok(format!(
        "linearize: {} mapped {} point(s) -> {} + {}",
        match args.method {
            Method::Crossing => "crossing",
            Method::Picard => "picard",
        },
        rows.len(),
        out.join("mapped_points.csv").display(),
        out.join(verification_name).display()
    ))
}

fn picard_err(e: PicardError) -> CliError {
    match e {
        PicardError::ContractionRatio { .. } => CliError::Precondition(e.to_string()),
        other => CliError::Other(other.to_string()),
    }
}

pub fn verify(args: &VerifyArgs) -> Result<String, CliError> {
    let la = &args.linearize;
    let setup = setup_linearize(la)?;
    check_preconditions(la.method, &setup)?;
    let out = &la.common.out;
    let pass = match la.method {
        Method::Crossing => {
            let hom = crossing_hom(&setup, la.tol, la.level, la.common.t_max)?;
            let report = verify_crossing_equivalence(&hom, &setup.points, 1e-5, 1e-5)
                .map_err(|e| CliError::Other(e.to_string()))?;
            let pass = report.all_pass();
            write_json(out, "verification.json", &report)?;
            pass
        }
        Method::Picard => {
            let hom = PLHomeomorphism::new(
                setup.sys.clone(),
                setup.pert.clone(),
                setup.cert.clone(),
            );
            let report = verify_pl_equivalence(
                &hom,
                &setup.points,
                la.common.t_max,
                la.tol,
                1e-6,
                1e-5,
            )
            .map_err(picard_err)?;
            let pass = report.all_pass();
            write_json(out, "verification.json", &report)?;
            pass
        }
    };
    Ok(format!(
        "verify: {} {} on {} point(s) -> {}",
        match la.method {
            Method::Crossing => "crossing",
            Method::Picard => "picard",
        },
        if pass { "pass" } else { "FAIL" },
        setup.points.len(),
        out.join("verification.json").display()
    ))
}

pub fn pipeline(args: &PipelineArgs) -> Result<String, CliError> {
    let la = &args.linearize;
    let setup = setup_linearize(la)?;
    let out = &la.common.out;
    let mut stages = Vec::new();

    // Certificates (reusing the fit from setup for the contraction part).
    let growth = fit_bounded_growth(&setup.sys, la.common.t_max, la.common.samples)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let coefficient = check_coefficient_bound(&setup.sys, la.common.t_max, la.common.samples)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let bundle = CertBundle {
        contraction: setup.cert.clone(),
        growth,
        coefficient,
        window_caveat: format!(
            "valid on [0, {}] at {}-sample resolution",
            la.common.t_max, la.common.samples
        ),
    };
    write_json(out, "cert.json", &bundle)?;
    stages.push(format!("cert(alpha={:.4})", setup.cert.alpha));

    // Transform transfer report, when a transform is in play.
    if let Some(tr) = &setup.transform {
        let original = load_perturbation(&la.perturbation)?;
        let samples = TransferSamples::default_for(setup.sys.dim(), la.common.t_max, 2.0);
        let gap = setup.cert.alpha - setup.cert.mu;
        let report =
            verify_lipschitz_transfer(&setup.pert, &original, tr, &samples, Some(gap))
                .map_err(|e| CliError::Other(e.to_string()))?;
        write_json(out, "transfer_report.json", &report)?;
        stages.push(format!("transfer(pass={})", report.pass));
    }

    // Spectrum scan around the certified rate.
    let lambda_min = args
        .lambda_min
        .unwrap_or_else(|| -(2.0 * setup.cert.alpha + 2.0));
    let lambda_max = args.lambda_max.unwrap_or(1.0);
    if !(lambda_min < lambda_max) || args.step <= 0.0 {
        return Err(CliError::Usage(format!(
            "empty shift grid: [{lambda_min}, {lambda_max}] step {}",
            args.step
        )));
    }
    let mu_cap = la.common.mu_cap.unwrap_or(3.0);
    let est = estimate_spectrum(
        &setup.sys,
        lambda_min,
        lambda_max,
        args.step,
        la.common.t_max,
        la.common.samples,
        mu_cap,
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    write_spectrum_csv(out, &est)?;
    write_json(out, "intervals.json", &est)?;
    stages.push(format!("spectrum({} intervals)", est.intervals.len()));

    // Lyapunov axioms for the strict evaluator.
    let (v, alpha_v, horizon, tail_bound, _) = build_evaluator(
        &setup.sys,
        &setup.cert,
        VKind::Strict,
        None,
        1e-9,
        la.common.t_max,
    )?;
    let spec = SampleSpec {
        n_samples: 500,
        t_max: la.common.t_max,
        state_scale: 2.0,
        seed: la.seed,
        rel_tol: 1e-6,
    };
    let axioms =
        verify_axioms(v.as_ref(), &setup.sys, &spec).map_err(|e| CliError::Other(e.to_string()))?;
    let ly_bundle = LyapunovBundle {
        evaluator: "strict".into(),
        alpha_v,
        horizon,
        tail_bound,
        certificate: setup.cert.clone(),
        axioms,
        quadratic_identity: None,
    };
    write_json(out, "lyapunov_report.json", &ly_bundle)?;
    stages.push(format!("lyapunov(pass={})", ly_bundle.axioms.all_pass()));

    // Linearize + verify through the requested method.
    let lin_summary = linearize(la)?;
    stages.push(lin_summary);

    Ok(format!("pipeline: {}", stages.join("; ")))
}
