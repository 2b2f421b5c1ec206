//! Benchmarks for the hot kernels: transition solves, Lyapunov evaluation,
//! crossing-time root finding and the Picard fixed point.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use ned_core::catalog::catalog;
use ned_core::crossing::{CrossingConfig, CrossingHomeomorphism};
use ned_core::dichotomy::{fit_contraction, SampleTable};
use ned_core::expr::{EvalContext, Expression};
use ned_core::flow::{transition_matrix, NonlinearPerturbation, PerturbationClass};
use ned_core::lyapunov::{build_strict, LyapunovFunction};
use ned_core::picard::{PLHomeomorphism, ParamPoint};
use std::sync::Arc;

fn bench_expression_eval(c: &mut Criterion) {
    let e = Expression::parse("-3 + t*sin(t) + 0.1*exp(-2*t)*cos(t)").unwrap();
    let mut ctx = EvalContext::new();
    c.bench_function("expr_eval", |b| {
        let mut t = 0.0f64;
        b.iter(|| {
            t += 1e-3;
            ctx.set("t", t);
            e.evaluate(&ctx).unwrap()
        })
    });
}

fn bench_transition(c: &mut Criterion) {
    let bv = catalog("bv_scalar", &[("omega", 3.0), ("a", 1.0)].into()).unwrap();
    c.bench_function("transition_bv_10", |b| {
        b.iter(|| transition_matrix(&bv.system, 10.0, 0.0, 1e-9).unwrap())
    });
}

fn bench_sample_table(c: &mut Criterion) {
    let bv = catalog("bv_scalar", &[("omega", 3.0), ("a", 1.0)].into()).unwrap();
    c.bench_function("sample_table_bv", |b| {
        b.iter(|| SampleTable::build(&bv.system, 20.0, 33, false).unwrap())
    });
}

fn scalar_setup() -> (CrossingHomeomorphism, PLHomeomorphism) {
    let entry = catalog("scalar_autonomous", &[("lambda0", -1.0)].into()).unwrap();
    let grid: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
    let cert = fit_contraction(&entry.system, 20.0, 25, &grid, 1.0).unwrap();
    let pert = NonlinearPerturbation::new(
        1,
        vec![Expression::parse("0.1*exp(-2*t)*sin(x1)").unwrap()],
        0.1,
        1.0,
        0.0,
        PerturbationClass::A2,
    )
    .unwrap();
    let v = build_strict(&cert, &entry.system, 0.5, 1e-9).unwrap();
    let hom = CrossingHomeomorphism::new(
        Arc::new(v),
        entry.system.clone(),
        pert.clone(),
        CrossingConfig::default(),
    );
    let pl = PLHomeomorphism::new(entry.system, pert, cert);
    (hom, pl)
}

fn bench_crossing_map(c: &mut Criterion) {
    let (hom, _) = scalar_setup();
    let xi = DVector::from_vec(vec![2.0]);
    c.bench_function("crossing_map_h", |b| b.iter(|| hom.map_h(0.5, &xi).unwrap()));
}

fn bench_picard(c: &mut Criterion) {
    let (_, pl) = scalar_setup();
    c.bench_function("picard_z", |b| {
        let mut k = 0u64;
        b.iter(|| {
            // fresh base point each iteration so the cache does not trivialize
            k += 1;
            let kappa = ParamPoint::new(1.0, DVector::from_vec(vec![1.0 + k as f64 * 1e-9]));
            pl.picard_z(&kappa, 11.0, 1e-9, 100).unwrap()
        })
    });
}

fn bench_strict_eval(c: &mut Criterion) {
    let entry = catalog("bv_scalar", &[("omega", 3.0), ("a", 1.0)].into()).unwrap();
    let grid: Vec<f64> = (1..=60).map(|k| 0.05 * k as f64).collect();
    let cert = fit_contraction(&entry.system, 20.0, 33, &grid, 2.1).unwrap();
    let v = build_strict(&cert, &entry.system, 1.0, 1e-9).unwrap();
    let x = DVector::from_vec(vec![1.3]);
    c.bench_function("strict_v_eval_uncached", |b| {
        let mut t = 0.0f64;
        b.iter(|| {
            t += 1e-6; // new time each call: defeat the unit cache
            v.evaluate(t, &x).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_expression_eval,
    bench_transition,
    bench_sample_table,
    bench_crossing_map,
    bench_picard,
    bench_strict_eval
);
criterion_main!(benches);
