//! Time-dependent changes of coordinates `y = S^{-1}(t) x` and the transfer
//! of systems, nonlinearities and Lipschitz constants across them.
//!
//! The transform itself is user input; this module only applies it and
//! verifies the declared bounds `|S(t)| <= M1 e^{beta t}`,
//! `|S^{-1}(t)| <= M1 e^{beta t}` by sampling.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalContext, EvalError, Expression};
use crate::flow::{
    smallest_singular_value, spectral_norm, FlowError, LinearSystem, NonlinearPerturbation,
    PerturbationKind,
};

const COND_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Error)]
pub enum KinematicsError {
    #[error("transform entry evaluation failed at t = {t}: {source}")]
    Entry { t: f64, source: EvalError },
    #[error("S(t) is singular or ill-conditioned at t = {t} (cond ~ {cond:.3e})")]
    Singular { t: f64, cond: f64 },
    #[error("transform must be {dim}x{dim}, got {rows}x{cols}")]
    Shape {
        dim: usize,
        rows: usize,
        cols: usize,
    },
    #[error(transparent)]
    Flow(#[from] Box<FlowError>),
}

/// A kinematic similarity `S(t)` with its declared bound metadata.
#[derive(Debug, Clone)]
pub struct KinematicTransform {
    dim: usize,
    s: Vec<Vec<Expression>>,
    s_dot: Option<Vec<Vec<Expression>>>,
    pub m1: f64,
    pub beta: f64,
    pub delta: f64,
    pub k_de: f64,
}

impl KinematicTransform {
    pub fn new(
        dim: usize,
        s: Vec<Vec<Expression>>,
        s_dot: Option<Vec<Vec<Expression>>>,
        m1: f64,
        beta: f64,
        delta: f64,
        k_de: f64,
    ) -> Result<Self, KinematicsError> {
        for m in std::iter::once(&s).chain(s_dot.iter()) {
            if m.len() != dim || m.iter().any(|r| r.len() != dim) {
                return Err(KinematicsError::Shape {
                    dim,
                    rows: m.len(),
                    cols: m.first().map_or(0, |r| r.len()),
                });
            }
        }
        Ok(Self {
            dim,
            s,
            s_dot,
            m1,
            beta,
            delta,
            k_de,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let one = Expression::Constant(1.0);
        let zero = Expression::Constant(0.0);
        let s = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| if i == j { one.clone() } else { zero.clone() })
                    .collect()
            })
            .collect();
        Self {
            dim,
            s,
            s_dot: None,
            m1: 1.0,
            beta: 0.0,
            delta: 0.0,
            k_de: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn eval_entries(
        &self,
        entries: &[Vec<Expression>],
        t: f64,
    ) -> Result<DMatrix<f64>, KinematicsError> {
        let ctx = EvalContext::new().bind("t", t);
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, row) in entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                m[(i, j)] = e
                    .evaluate(&ctx)
                    .map_err(|source| KinematicsError::Entry { t, source })?;
            }
        }
        Ok(m)
    }

    pub fn s_matrix(&self, t: f64) -> Result<DMatrix<f64>, KinematicsError> {
        self.eval_entries(&self.s, t)
    }

    pub fn s_inverse(&self, t: f64) -> Result<DMatrix<f64>, KinematicsError> {
        let s = self.s_matrix(t)?;
        let smin = smallest_singular_value(&s);
        let smax = spectral_norm(&s);
        if smin <= 0.0 || smax / smin > COND_LIMIT {
            return Err(KinematicsError::Singular {
                t,
                cond: if smin > 0.0 { smax / smin } else { f64::INFINITY },
            });
        }
        s.clone().try_inverse().ok_or(KinematicsError::Singular {
            t,
            cond: f64::INFINITY,
        })
    }

    /// `S'(t)`, from the supplied expressions or by central differences.
    pub fn s_dot(&self, t: f64) -> Result<DMatrix<f64>, KinematicsError> {
        if let Some(sd) = &self.s_dot {
            return self.eval_entries(sd, t);
        }
        let h = 1e-5 * (1.0 + t.abs());
        let plus = self.s_matrix(t + h)?;
        let minus = self.s_matrix(t - h)?;
        Ok((plus - minus) / (2.0 * h))
    }

    /// Sample the declared norm bounds; a failed check demotes the metadata
    /// to unverified rather than erroring.
    pub fn verify_metadata(&self, t_max: f64, n_samples: usize) -> MetadataReport {
        let mut worst_s: f64 = 0.0;
        let mut worst_inv: f64 = 0.0;
        let mut ok = true;
        for k in 0..n_samples.max(2) {
            let t = t_max * k as f64 / (n_samples.max(2) - 1) as f64;
            let bound = self.m1 * (self.beta * t).exp();
            let (ns, ninv) = match (self.s_matrix(t), self.s_inverse(t)) {
                (Ok(s), Ok(inv)) => (spectral_norm(&s), spectral_norm(&inv)),
                _ => {
                    ok = false;
                    continue;
                }
            };
            worst_s = worst_s.max(ns / bound);
            worst_inv = worst_inv.max(ninv / bound);
        }
        let tol = 1.0 + 1e-6;
        MetadataReport {
            verified: ok && worst_s <= tol && worst_inv <= tol,
            worst_s_ratio: worst_s,
            worst_s_inv_ratio: worst_inv,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetadataReport {
    pub verified: bool,
    pub worst_s_ratio: f64,
    pub worst_s_inv_ratio: f64,
}

/// Coefficients of the transformed system `y' = S^{-1}(A S - S') y`.
pub fn transform_linear(
    sys: &LinearSystem,
    transform: &KinematicTransform,
) -> Result<LinearSystem, KinematicsError> {
    if transform.dim() != sys.dim() {
        return Err(KinematicsError::Shape {
            dim: sys.dim(),
            rows: transform.dim(),
            cols: transform.dim(),
        });
    }
    // Catch singular transforms early at a few sample times.
    for t in [0.0, 0.5, 1.0, 3.0, 10.0] {
        transform.s_inverse(t)?;
    }
    Ok(LinearSystem::conjugated(sys.clone(), transform.clone()))
}

/// `g(t, y) = S^{-1}(t) f(t, S(t) y)` with the transferred Lipschitz bound
/// `L_g = M1^2 L_f` (the exponential factors of `S`, `S^{-1}` and `f` cancel,
/// leaving a time-uniform constant).
pub fn transform_nonlinearity(
    f: &NonlinearPerturbation,
    transform: &KinematicTransform,
) -> Result<NonlinearPerturbation, KinematicsError> {
    if transform.dim() != f.dim() {
        return Err(KinematicsError::Shape {
            dim: f.dim(),
            rows: transform.dim(),
            cols: transform.dim(),
        });
    }
    for t in [0.0, 0.5, 1.0, 3.0, 10.0] {
        transform.s_inverse(t)?;
    }
    let l_g = transform.m1 * transform.m1 * f.l_f;
    let k0_g = transform.m1 * f.k0;
    Ok(NonlinearPerturbation::with_kind(
        f.dim(),
        PerturbationKind::Conjugated {
            inner: Box::new(f.clone()),
            transform: transform.clone(),
        },
        l_g,
        0.0,
        k0_g,
        f.class,
    ))
}

/// Sampled check of the Lipschitz transfer: the ratio
/// `|g(t,u) - g(t,v)| e^{2 beta_g t} / |u - v|` must stay below
/// `M1^2 L_f (1 + tol)`. `beta_g` is the transformed decay rate (zero).
#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
    /// Whether `L_g <= delta < alpha - mu` held (only when a certificate was
    /// supplied).
    pub smallness_chain_ok: Option<bool>,
    pub metadata: MetadataReport,
}

pub struct TransferSamples {
    pub t_values: Vec<f64>,
    pub pairs: Vec<(nalgebra::DVector<f64>, nalgebra::DVector<f64>)>,
}

impl TransferSamples {
    /// Deterministic default sample set in the given state scale.
    pub fn default_for(dim: usize, t_max: f64, scale: f64) -> Self {
        let t_values = (0..9).map(|k| t_max * k as f64 / 8.0).collect();
        let mut pairs = Vec::new();
        for i in 0..dim {
            for &s in &[1e-3, 0.1, 1.0] {
                let mut u = nalgebra::DVector::zeros(dim);
                u[i] = s * scale;
                pairs.push((u.clone(), -u.clone()));
                let mut v = u.clone();
                v[(i + 1) % dim] += 0.37 * s * scale;
                pairs.push((u, v));
            }
        }
        Self { t_values, pairs }
    }
}

pub fn verify_lipschitz_transfer(
    g: &NonlinearPerturbation,
    f: &NonlinearPerturbation,
    transform: &KinematicTransform,
    samples: &TransferSamples,
    contraction_gap: Option<f64>,
) -> Result<TransferReport, FlowError> {
    let bound = transform.m1 * transform.m1 * f.l_f;
    let mut max_ratio: f64 = 0.0;
    for &t in &samples.t_values {
        let weight = (2.0 * g.beta * t).exp();
        for (u, v) in &samples.pairs {
            let du = (u - v).norm();
            if du == 0.0 {
                continue;
            }
            let ratio = (g.eval(t, u)? - g.eval(t, v)?).norm() * weight / du;
            max_ratio = max_ratio.max(ratio);
        }
    }
    let metadata = transform.verify_metadata(
        samples.t_values.iter().copied().fold(1.0, f64::max),
        9,
    );
    Ok(TransferReport {
        max_ratio,
        bound,
        pass: max_ratio <= bound * (1.0 + 1e-6),
        smallness_chain_ok: contraction_gap.map(|gap| g.l_f <= transform.delta && transform.delta < gap),
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use crate::flow::{solve_linear, transition_matrix, PerturbationClass};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use std::collections::BTreeMap;

    fn rotation_transform() -> KinematicTransform {
        KinematicTransform::new(
            2,
            vec![
                vec![
                    Expression::parse("cos(t)").unwrap(),
                    Expression::parse("sin(t)").unwrap(),
                ],
                vec![
                    Expression::parse("-(sin(t))").unwrap(),
                    Expression::parse("cos(t)").unwrap(),
                ],
            ],
            None,
            1.0,
            0.0,
            0.1,
            1.0,
        )
        .unwrap()
    }

    fn isotropic_decay() -> LinearSystem {
        LinearSystem::new(
            2,
            vec![
                vec![
                    Expression::parse("-1").unwrap(),
                    Expression::parse("0").unwrap(),
                ],
                vec![
                    Expression::parse("0").unwrap(),
                    Expression::parse("-1").unwrap(),
                ],
            ],
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn identity_transform_is_inert() {
        let sys = isotropic_decay();
        let t = KinematicTransform::identity(2);
        let out = transform_linear(&sys, &t).unwrap();
        for u in [0.0, 1.3, 4.0] {
            let a = sys.eval_matrix(u).unwrap();
            let b = out.eval_matrix(u).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_scaling_conjugation() {
        // S = 2 on x' = -x keeps y' = -y.
        let sys = LinearSystem::scalar(Expression::parse("-1").unwrap(), BTreeMap::new()).unwrap();
        let tr = KinematicTransform::new(
            1,
            vec![vec![Expression::parse("2").unwrap()]],
            None,
            2.0,
            0.0,
            0.1,
            1.0,
        )
        .unwrap();
        let out = transform_linear(&sys, &tr).unwrap();
        assert_relative_eq!(out.eval_matrix(1.0).unwrap()[(0, 0)], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn rotation_conjugation_matches_hand_computation() {
        // S rotating at unit speed on the isotropic x' = -x gives
        // A_new = -I + [[0,-1],[1,0]].
        let sys = isotropic_decay();
        let out = transform_linear(&sys, &rotation_transform()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, -1.0]);
        for t in [0.0, 0.7, 2.9] {
            let a = out.eval_matrix(t).unwrap();
            assert!(
                (&a - &expected).norm() < 1e-4,
                "t={t}: got {a}, want {expected}"
            );
        }
    }

    #[test]
    fn conjugated_flow_identity() {
        // Phi_new(t, s) = S^{-1}(t) Phi(t, s) S(s).
        let sys = isotropic_decay();
        let tr = rotation_transform();
        let out = transform_linear(&sys, &tr).unwrap();
        let (t, s) = (2.0, 0.5);
        let phi_new = transition_matrix(&out, t, s, 1e-10).unwrap().matrix;
        let phi = transition_matrix(&sys, t, s, 1e-10).unwrap().matrix;
        let expected = tr.s_inverse(t).unwrap() * phi * tr.s_matrix(s).unwrap();
        assert!((&phi_new - &expected).norm() <= 1e-6 * (1.0 + expected.norm()));
    }

    #[test]
    fn transform_then_inverse_returns_original() {
        let sys = isotropic_decay();
        let tr = rotation_transform();
        // The inverse of the rotation is its transpose.
        let tr_inv = KinematicTransform::new(
            2,
            vec![
                vec![
                    Expression::parse("cos(t)").unwrap(),
                    Expression::parse("-(sin(t))").unwrap(),
                ],
                vec![
                    Expression::parse("sin(t)").unwrap(),
                    Expression::parse("cos(t)").unwrap(),
                ],
            ],
            None,
            1.0,
            0.0,
            0.1,
            1.0,
        )
        .unwrap();
        let once = transform_linear(&sys, &tr).unwrap();
        let back = transform_linear(&once, &tr_inv).unwrap();
        for t in [0.3, 1.1, 5.0] {
            let a = sys.eval_matrix(t).unwrap();
            let b = back.eval_matrix(t).unwrap();
            assert!((a - b).norm() < 1e-3, "finite-difference S' tolerance");
        }
    }

    #[test]
    fn singular_transform_is_rejected() {
        let sys = isotropic_decay();
        let tr = KinematicTransform::new(
            2,
            vec![
                vec![
                    Expression::parse("1").unwrap(),
                    Expression::parse("1").unwrap(),
                ],
                vec![
                    Expression::parse("1").unwrap(),
                    Expression::parse("1").unwrap(),
                ],
            ],
            None,
            1.0,
            0.0,
            0.1,
            1.0,
        )
        .unwrap();
        assert!(matches!(
            transform_linear(&sys, &tr),
            Err(KinematicsError::Singular { .. })
        ));
    }

    #[test]
    fn nonlinearity_transfer_metadata_and_ratio() {
        let f = NonlinearPerturbation::new(
            1,
            vec![Expression::parse("0.3*sin(x1)").unwrap()],
            0.3,
            0.0,
            0.0,
            PerturbationClass::A2,
        )
        .unwrap();
        let tr = KinematicTransform::new(
            1,
            vec![vec![Expression::parse("2").unwrap()]],
            None,
            2.0,
            0.0,
            0.5,
            1.0,
        )
        .unwrap();
        let g = transform_nonlinearity(&f, &tr).unwrap();
        assert_relative_eq!(g.l_f, 4.0 * 0.3);
        // Sampled ratio of c^{-1} L sin(c y) is still L: conservative bound.
        let samples = TransferSamples::default_for(1, 5.0, 1.0);
        let report = verify_lipschitz_transfer(&g, &f, &tr, &samples, Some(1.0)).unwrap();
        assert!(report.pass);
        assert!(report.max_ratio <= 0.3 * (1.0 + 1e-6));
        assert_eq!(report.smallness_chain_ok, Some(false)); // 1.2 > delta
    }

    #[test]
    fn rotation_preserves_sampled_lipschitz_constant() {
        let f = NonlinearPerturbation::new(
            2,
            vec![
                Expression::parse("0.2*sin(x1)").unwrap(),
                Expression::parse("0.2*sin(x2)").unwrap(),
            ],
            0.2 * std::f64::consts::SQRT_2,
            0.0,
            0.0,
            PerturbationClass::A2,
        )
        .unwrap();
        let tr = rotation_transform();
        let g = transform_nonlinearity(&f, &tr).unwrap();
        let samples = TransferSamples::default_for(2, 5.0, 1.0);
        let report = verify_lipschitz_transfer(&g, &f, &tr, &samples, None).unwrap();
        assert!(report.pass);
        assert!(report.metadata.verified);
    }

    #[test]
    fn contraction_is_preserved_by_kinematic_similarity() {
        use crate::dichotomy::fit_contraction;
        let sys = isotropic_decay();
        let out = transform_linear(&sys, &rotation_transform()).unwrap();
        let grid: Vec<f64> = (1..30).map(|k| 0.1 * k as f64).collect();
        let cert = fit_contraction(&out, 12.0, 16, &grid, 1.0).unwrap();
        assert!(cert.alpha > 0.0);
        // Solutions still decay.
        let traj = solve_linear(&out, 0.0, &DVector::from_vec(vec![1.0, 0.5]), 6.0, 1e-9).unwrap();
        assert!(traj.end_state().norm() < 0.01);
    }
}
