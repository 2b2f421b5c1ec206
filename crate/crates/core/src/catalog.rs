//! Built-in example systems, with closed-form evolution operators where a
//! clean antiderivative exists. The analytic operators double as test oracles.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::Expression;
use crate::flow::{FlowError, LinearSystem};

#[derive(Debug, Clone, Error)]
pub enum CatalogError {
    #[error("unknown catalog system `{0}` (known: scalar_autonomous, diagonal_autonomous, bv_scalar, bv_diagonal, rotation_coupled)")]
    UnknownName(String),
    #[error("catalog system `{name}` requires parameter `{param}`")]
    MissingParameter { name: String, param: &'static str },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Closed-form `Phi(t, s)` evaluator.
#[derive(Clone)]
pub struct AnalyticPhi(Arc<dyn Fn(f64, f64) -> DMatrix<f64> + Send + Sync>);

impl AnalyticPhi {
    pub fn eval(&self, t: f64, s: f64) -> DMatrix<f64> {
        (self.0)(t, s)
    }
}

impl std::fmt::Debug for AnalyticPhi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AnalyticPhi(..)")
    }
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub system: LinearSystem,
    pub analytic: Option<AnalyticPhi>,
}

/// Antiderivative of `t sin t`.
fn bv_antideriv(u: f64) -> f64 {
    u.sin() - u * u.cos()
}

fn bv_ln_phi(omega: f64, a: f64, t: f64, s: f64) -> f64 {
    -omega * (t - s) + a * (bv_antideriv(t) - bv_antideriv(s))
}

fn require(
    name: &str,
    params: &BTreeMap<&str, f64>,
    key: &'static str,
) -> Result<f64, CatalogError> {
    params.get(key).copied().ok_or(CatalogError::MissingParameter {
        name: name.to_owned(),
        param: key,
    })
}

/// Instantiate a named example system.
pub fn catalog(name: &str, params: &BTreeMap<&str, f64>) -> Result<CatalogEntry, CatalogError> {
    match name {
        "scalar_autonomous" => {
            let lambda0 = require(name, params, "lambda0")?;
            let system = LinearSystem::scalar(
                Expression::parse("lambda0").unwrap(),
                BTreeMap::from([("lambda0".to_owned(), lambda0)]),
            )?;
            let analytic = AnalyticPhi(Arc::new(move |t, s| {
                DMatrix::from_element(1, 1, (lambda0 * (t - s)).exp())
            }));
            Ok(CatalogEntry {
                system,
                analytic: Some(analytic),
            })
        }
        "diagonal_autonomous" => {
            let l1 = require(name, params, "lambda1")?;
            let l2 = require(name, params, "lambda2")?;
            let system = LinearSystem::new(
                2,
                vec![
                    vec![
                        Expression::parse("lambda1").unwrap(),
                        Expression::parse("0").unwrap(),
                    ],
                    vec![
                        Expression::parse("0").unwrap(),
                        Expression::parse("lambda2").unwrap(),
                    ],
                ],
                BTreeMap::from([("lambda1".to_owned(), l1), ("lambda2".to_owned(), l2)]),
            )?;
            let analytic = AnalyticPhi(Arc::new(move |t, s| {
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                    (l1 * (t - s)).exp(),
                    (l2 * (t - s)).exp(),
                ]))
            }));
            Ok(CatalogEntry {
                system,
                analytic: Some(analytic),
            })
        }
        "bv_scalar" => {
            let omega = require(name, params, "omega")?;
            let a = require(name, params, "a")?;
            let system = LinearSystem::scalar(
                Expression::parse("-omega + a*t*sin(t)").unwrap(),
                BTreeMap::from([("omega".to_owned(), omega), ("a".to_owned(), a)]),
            )?;
            let analytic = AnalyticPhi(Arc::new(move |t, s| {
                DMatrix::from_element(1, 1, bv_ln_phi(omega, a, t, s).exp())
            }));
            Ok(CatalogEntry {
                system,
                analytic: Some(analytic),
            })
        }
        "bv_diagonal" => {
            let o1 = require(name, params, "omega1")?;
            let a1 = require(name, params, "a1")?;
            let o2 = require(name, params, "omega2")?;
            let a2 = require(name, params, "a2")?;
            let system = LinearSystem::new(
                2,
                vec![
                    vec![
                        Expression::parse("-omega1 + a1*t*sin(t)").unwrap(),
                        Expression::parse("0").unwrap(),
                    ],
                    vec![
                        Expression::parse("0").unwrap(),
                        Expression::parse("-omega2 + a2*t*sin(t)").unwrap(),
                    ],
                ],
                BTreeMap::from([
                    ("omega1".to_owned(), o1),
                    ("a1".to_owned(), a1),
                    ("omega2".to_owned(), o2),
                    ("a2".to_owned(), a2),
                ]),
            )?;
            let analytic = AnalyticPhi(Arc::new(move |t, s| {
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                    bv_ln_phi(o1, a1, t, s).exp(),
                    bv_ln_phi(o2, a2, t, s).exp(),
                ]))
            }));
            Ok(CatalogEntry {
                system,
                analytic: Some(analytic),
            })
        }
        "rotation_coupled" => {
            // x = R(t) y with y' = diag(lambda1, lambda2) y, so
            // A(t) = R'(t) R(t)^T + R(t) D R(t)^T.
            let l1 = require(name, params, "lambda1")?;
            let l2 = require(name, params, "lambda2")?;
            let system = LinearSystem::new(
                2,
                vec![
                    vec![
                        Expression::parse("lambda1*cos(t)*cos(t) + lambda2*sin(t)*sin(t)")
                            .unwrap(),
                        Expression::parse("(lambda1 - lambda2)*sin(t)*cos(t) - 1").unwrap(),
                    ],
                    vec![
                        Expression::parse("(lambda1 - lambda2)*sin(t)*cos(t) + 1").unwrap(),
                        Expression::parse("lambda1*sin(t)*sin(t) + lambda2*cos(t)*cos(t)")
                            .unwrap(),
                    ],
                ],
                BTreeMap::from([("lambda1".to_owned(), l1), ("lambda2".to_owned(), l2)]),
            )?;
            let analytic = AnalyticPhi(Arc::new(move |t, s| {
                let rot = |u: f64| {
                    DMatrix::from_row_slice(2, 2, &[u.cos(), -u.sin(), u.sin(), u.cos()])
                };
                let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                    (l1 * (t - s)).exp(),
                    (l2 * (t - s)).exp(),
                ]));
                rot(t) * d * rot(s).transpose()
            }));
            Ok(CatalogEntry {
                system,
                analytic: Some(analytic),
            })
        }
        other => Err(CatalogError::UnknownName(other.to_owned())),
    }
}
