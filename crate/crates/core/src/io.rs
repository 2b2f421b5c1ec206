//! JSON wire schemas for systems, perturbations and transforms.
//!
//! Expressions appear as strings inside the JSON documents and are parsed on
//! load; see `GRAMMAR.md` for the grammar.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expression;
use crate::flow::{FlowError, LinearSystem, NonlinearPerturbation, PerturbationClass};
use crate::kinematics::{KinematicTransform, KinematicsError};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// `{"dim": n, "A": [[expr, ...], ...], "params": {...}}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub dim: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Expression>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SystemSpec {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_system(self) -> Result<LinearSystem, SchemaError> {
        Ok(LinearSystem::new(self.dim, self.a, self.params)?)
    }
}

/// `{"f": [expr, ...], "L_f": r, "beta": r, "K0": r, "class": "A1"|"A2"}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub f: Vec<Expression>,
    #[serde(rename = "L_f")]
    pub l_f: f64,
    pub beta: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    pub class: PerturbationClass,
}

impl PerturbationSpec {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_perturbation(self) -> Result<NonlinearPerturbation, SchemaError> {
        let dim = self.f.len();
        Ok(NonlinearPerturbation::new(
            dim, self.f, self.l_f, self.beta, self.k0, self.class,
        )?)
    }
}

/// `{"S": [[expr]], "S_dot": [[expr]]?, "M1": r, "beta": r, "delta": r, "K_de": r}`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformSpec {
    #[serde(rename = "S")]
    pub s: Vec<Vec<Expression>>,
    #[serde(rename = "S_dot", default, skip_serializing_if = "Option::is_none")]
    pub s_dot: Option<Vec<Vec<Expression>>>,
    #[serde(rename = "M1")]
    pub m1: f64,
    pub beta: f64,
    pub delta: f64,
    #[serde(rename = "K_de")]
    pub k_de: f64,
}

impl TransformSpec {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_transform(self) -> Result<KinematicTransform, SchemaError> {
        let dim = self.s.len();
        Ok(KinematicTransform::new(
            dim, self.s, self.s_dot, self.m1, self.beta, self.delta, self.k_de,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_round_trip() {
        let text = r#"{"dim": 1, "A": [["-omega + a*t*sin(t)"]], "params": {"omega": 3.0, "a": 1.0}}"#;
        let spec = SystemSpec::from_json(text).unwrap();
        assert_eq!(spec.dim, 1);
        let sys = spec.clone().into_system().unwrap();
        assert_eq!(sys.eval_matrix(0.0).unwrap()[(0, 0)], -3.0);
        // Serialize back: expressions print in canonical form.
        let out = serde_json::to_string(&spec).unwrap();
        let spec2 = SystemSpec::from_json(&out).unwrap();
        assert_eq!(
            spec2.clone().into_system().unwrap().eval_matrix(2.0).unwrap(),
            sys.eval_matrix(2.0).unwrap()
        );
    }

    #[test]
    fn perturbation_parse_and_validate() {
        let text = r#"{"f": ["0.1*exp(-2*t)*sin(x1)"], "L_f": 0.1, "beta": 1.0, "K0": 0.0, "class": "A2"}"#;
        let p = PerturbationSpec::from_json(text)
            .unwrap()
            .into_perturbation()
            .unwrap();
        assert_eq!(p.class, PerturbationClass::A2);

        let bad = r#"{"f": ["0.5"], "L_f": 0.0, "beta": 0.0, "K0": 0.5, "class": "A2"}"#;
        assert!(PerturbationSpec::from_json(bad)
            .unwrap()
            .into_perturbation()
            .is_err());
    }

    #[test]
    fn expression_parse_errors_surface_with_location() {
        let text = r#"{"dim": 1, "A": [["2^3"]], "params": {}}"#;
        let err = SystemSpec::from_json(text).unwrap_err();
        assert!(err.to_string().contains("pow"), "{err}");
    }

    #[test]
    fn transform_spec_parses() {
        let text = r#"{"S": [["cos(t)", "sin(t)"], ["-(sin(t))", "cos(t)"]], "M1": 1.0, "beta": 0.0, "delta": 0.1, "K_de": 1.0}"#;
        let tr = TransformSpec::from_json(text)
            .unwrap()
            .into_transform()
            .unwrap();
        assert_eq!(tr.dim(), 2);
        assert!(tr.verify_metadata(10.0, 9).verified);
    }
}
