//! Nonautonomous linear systems, Lipschitz perturbations, and their flows.
//!
//! State propagation is the substrate for everything else: transition
//! matrices feed the certificate fits, and the dense-output trajectories feed
//! the Lyapunov evaluators, crossing-time root finder and Picard iteration.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{EvalContext, EvalError, Expression};
use crate::kinematics::KinematicTransform;
use crate::ode::{self, OdeError, OdeOptions, Trajectory};

#[derive(Debug, Clone, Error)]
pub enum FlowError {
    #[error("coefficient evaluation failed at t = {t}: {source}")]
    Coefficient { t: f64, source: EvalError },
    #[error("perturbation evaluation failed at t = {t}: {source}")]
    Perturbation { t: f64, source: EvalError },
    #[error("matrix must be {dim}x{dim}, got {rows}x{cols}")]
    Shape { dim: usize, rows: usize, cols: usize },
    #[error("state dimension mismatch: system is {expected}, state is {got}")]
    Dimension { expected: usize, got: usize },
    #[error("entry ({row},{col}) references unknown variable `{name}` (allowed: t and declared params)")]
    UnknownVariable { row: usize, col: usize, name: String },
    #[error("perturbation component {index} references unknown variable `{name}`")]
    UnknownPerturbationVariable { index: usize, name: String },
    #[error("declared class A2 violated: |f({t}, 0)| = {value:.3e}")]
    NotVanishingAtOrigin { t: f64, value: f64 },
    #[error(
        "sampled Lipschitz ratio {ratio:.6e} at t = {t} exceeds declared L_f e^(-2 beta t) = {bound:.6e}"
    )]
    LipschitzViolated { t: f64, ratio: f64, bound: f64 },
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("kinematic transform: {0}")]
    Transform(String),
}

/// Time-dependent coefficient matrix. Either explicit expressions in `t`, or
/// a conjugation `S^{-1}(A S - S')` of another system that has no closed
/// expression form.
#[derive(Debug, Clone)]
pub(crate) enum Coefficients {
    Explicit {
        raw: Vec<Vec<Expression>>,
        /// Parameters substituted, so evaluation binds only `t`.
        resolved: Vec<Vec<Expression>>,
    },
    Conjugated {
        base: Box<LinearSystem>,
        transform: KinematicTransform,
    },
}

/// The linear system `x' = A(t) x` on the half-line `t >= 0`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    dim: usize,
    pub(crate) coeff: Coefficients,
    params: BTreeMap<String, f64>,
}

impl LinearSystem {
    pub fn new(
        dim: usize,
        entries: Vec<Vec<Expression>>,
        params: BTreeMap<String, f64>,
    ) -> Result<Self, FlowError> {
        if entries.len() != dim || entries.iter().any(|r| r.len() != dim) {
            return Err(FlowError::Shape {
                dim,
                rows: entries.len(),
                cols: entries.first().map_or(0, |r| r.len()),
            });
        }
        let bindings: Vec<(&str, f64)> = params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let mut resolved = Vec::with_capacity(dim);
        for (i, row) in entries.iter().enumerate() {
            let mut rrow = Vec::with_capacity(dim);
            for (j, e) in row.iter().enumerate() {
                let r = e.substitute(&bindings);
                if let Some(name) = r.free_vars().into_iter().find(|v| *v != "t") {
                    return Err(FlowError::UnknownVariable {
                        row: i,
                        col: j,
                        name: name.to_owned(),
                    });
                }
                rrow.push(r);
            }
            resolved.push(rrow);
        }
        Ok(Self {
            dim,
            coeff: Coefficients::Explicit {
                raw: entries,
                resolved,
            },
            params,
        })
    }

    pub fn scalar(expr: Expression, params: BTreeMap<String, f64>) -> Result<Self, FlowError> {
        Self::new(1, vec![vec![expr]], params)
    }

    pub(crate) fn conjugated(base: LinearSystem, transform: KinematicTransform) -> Self {
        let dim = base.dim;
        Self {
            dim,
            coeff: Coefficients::Conjugated {
                base: Box::new(base),
                transform,
            },
            params: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Expression entries as written, when this system is explicit.
    pub fn entries(&self) -> Option<&Vec<Vec<Expression>>> {
        match &self.coeff {
            Coefficients::Explicit { raw, .. } => Some(raw),
            Coefficients::Conjugated { .. } => None,
        }
    }

    /// Evaluate `A(t)`.
    pub fn eval_matrix(&self, t: f64) -> Result<DMatrix<f64>, FlowError> {
        match &self.coeff {
            Coefficients::Explicit { resolved, .. } => {
                let ctx = EvalContext::new().bind("t", t);
                let mut m = DMatrix::zeros(self.dim, self.dim);
                for (i, row) in resolved.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        m[(i, j)] = e
                            .evaluate(&ctx)
                            .map_err(|source| FlowError::Coefficient { t, source })?;
                    }
                }
                Ok(m)
            }
            Coefficients::Conjugated { base, transform } => {
                let a = base.eval_matrix(t)?;
                let s = transform.s_matrix(t).map_err(flow_transform)?;
                let s_inv = transform.s_inverse(t).map_err(flow_transform)?;
                let s_dot = transform.s_dot(t).map_err(flow_transform)?;
                Ok(s_inv * (a * s - s_dot))
            }
        }
    }

    /// True when every off-diagonal entry vanishes on a fixed sample set.
    pub fn is_diagonal(&self, t_max: f64) -> bool {
        if self.dim == 1 {
            return true;
        }
        for k in 0..8 {
            let t = t_max * (k as f64 + 0.31) / 8.0;
            let Ok(a) = self.eval_matrix(t) else {
                return false;
            };
            let scale = 1.0 + a.norm();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    if i != j && a[(i, j)].abs() > 1e-12 * scale {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn flow_transform(e: crate::kinematics::KinematicsError) -> FlowError {
    FlowError::Transform(e.to_string())
}

/// Perturbation families: `A1` has bounded `f(t, 0)`, `A2` vanishes there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PerturbationClass {
    A1,
    A2,
}

#[derive(Debug, Clone)]
pub(crate) enum PerturbationKind {
    Zero,
    /// Components in variables `t, x1..xn`.
    Explicit(Vec<Expression>),
    /// `inner(t, x) - inner(t, 0)`.
    Reduced(Box<NonlinearPerturbation>),
    /// `S^{-1}(t) inner(t, S(t) x)`.
    Conjugated {
        inner: Box<NonlinearPerturbation>,
        transform: KinematicTransform,
    },
}

/// The nonlinearity `f(t, x)` with its declared Lipschitz data: the sampled
/// ratio must satisfy `|f(t,u)-f(t,v)| <= L_f exp(-2 beta t) |u-v|`.
#[derive(Debug, Clone)]
pub struct NonlinearPerturbation {
    dim: usize,
    pub(crate) kind: PerturbationKind,
    pub l_f: f64,
    pub beta: f64,
    pub k0: f64,
    pub class: PerturbationClass,
}

impl NonlinearPerturbation {
    pub fn new(
        dim: usize,
        components: Vec<Expression>,
        l_f: f64,
        beta: f64,
        k0: f64,
        class: PerturbationClass,
    ) -> Result<Self, FlowError> {
        if components.len() != dim {
            return Err(FlowError::Shape {
                dim,
                rows: components.len(),
                cols: 1,
            });
        }
        for (i, e) in components.iter().enumerate() {
            for v in e.free_vars() {
                let ok = v == "t"
                    || (v.starts_with('x')
                        && v[1..]
                            .parse::<usize>()
                            .map(|k| k >= 1 && k <= dim)
                            .unwrap_or(false));
                if !ok {
                    return Err(FlowError::UnknownPerturbationVariable {
                        index: i,
                        name: v.to_owned(),
                    });
                }
            }
        }
        let p = Self {
            dim,
            kind: PerturbationKind::Explicit(components),
            l_f,
            beta,
            k0,
            class,
        };
        p.spot_check()?;
        Ok(p)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            kind: PerturbationKind::Zero,
            l_f: 0.0,
            beta: 0.0,
            k0: 0.0,
            class: PerturbationClass::A2,
        }
    }

    pub(crate) fn with_kind(
        dim: usize,
        kind: PerturbationKind,
        l_f: f64,
        beta: f64,
        k0: f64,
        class: PerturbationClass,
    ) -> Self {
        Self {
            dim,
            kind,
            l_f,
            beta,
            k0,
            class,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, PerturbationKind::Zero)
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, FlowError> {
        if x.len() != self.dim {
            return Err(FlowError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        match &self.kind {
            PerturbationKind::Zero => Ok(DVector::zeros(self.dim)),
            PerturbationKind::Explicit(components) => {
                let mut ctx = EvalContext::new().bind("t", t);
                for i in 0..self.dim {
                    ctx.set(&format!("x{}", i + 1), x[i]);
                }
                let mut out = DVector::zeros(self.dim);
                for (i, e) in components.iter().enumerate() {
                    out[i] = e
                        .evaluate(&ctx)
                        .map_err(|source| FlowError::Perturbation { t, source })?;
                }
                Ok(out)
            }
            PerturbationKind::Reduced(inner) => {
                let at_x = inner.eval(t, x)?;
                let at_zero = inner.eval(t, &DVector::zeros(self.dim))?;
                Ok(at_x - at_zero)
            }
            PerturbationKind::Conjugated { inner, transform } => {
                let s = transform.s_matrix(t).map_err(flow_transform)?;
                let s_inv = transform.s_inverse(t).map_err(flow_transform)?;
                let fx = inner.eval(t, &(&s * x))?;
                Ok(s_inv * fx)
            }
        }
    }

    /// Deterministic spot checks of the declared metadata on a fixed grid.
    fn spot_check(&self) -> Result<(), FlowError> {
        let ts = [0.0, 0.3, 1.0, 2.5, 5.0, 10.0];
        let scales = [1e-3, 0.1, 1.0, 3.0];
        let zero = DVector::zeros(self.dim);
        for &t in &ts {
            let f0 = self.eval(t, &zero)?;
            if self.class == PerturbationClass::A2 {
                let v = f0.norm();
                if v > 1e-8 * (1.0 + self.l_f + self.k0) {
                    return Err(FlowError::NotVanishingAtOrigin { t, value: v });
                }
            }
            let bound = self.l_f * (-2.0 * self.beta * t).exp();
            for &s in &scales {
                for i in 0..self.dim {
                    let mut u = DVector::zeros(self.dim);
                    u[i] = s;
                    let v = -&u;
                    let ratio = (self.eval(t, &u)? - self.eval(t, &v)?).norm() / (2.0 * s);
                    if ratio > bound * (1.0 + 1e-6) + 1e-12 {
                        return Err(FlowError::LipschitzViolated { t, ratio, bound });
                    }
                }
            }
        }
        Ok(())
    }
}

/// The evolution operator `Phi(t, s)` evaluated at one `(t, s)` pair.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    pub t: f64,
    pub s: f64,
    pub matrix: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.matrix)
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().svd(false, false).singular_values[0]
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv[sv.len() - 1]
}

/// Wrap a fallible matrix evaluation for use inside the integrator: failures
/// poison the state with NaN and are reported afterwards.
struct RhsErr(Option<FlowError>);

impl RhsErr {
    fn resolve<T>(self, r: Result<T, OdeError>) -> Result<T, FlowError> {
        match (r, self.0) {
            (Err(OdeError::NonFinite { .. }), Some(e)) => Err(e),
            (r, _) => r.map_err(FlowError::from),
        }
    }
}

/// Integrate the matrix equation `X' = A(t) X, X(s) = I` from `s` to `t`.
/// Backward pairs (`t < s`) integrate backward rather than inverting.
pub fn transition_matrix(
    sys: &LinearSystem,
    t: f64,
    s: f64,
    tol: f64,
) -> Result<TransitionMatrix, FlowError> {
    let traj = transition_trajectory(sys, s, t, &OdeOptions::with_tol(tol))?;
    let matrix = unflatten(traj.end_state(), sys.dim);
    Ok(TransitionMatrix { t, s, matrix })
}

/// Dense-output solve of the matrix equation from `s` to `t_end`; states are
/// the flattened columns of `Phi(., s)`.
pub fn transition_trajectory(
    sys: &LinearSystem,
    s: f64,
    t_end: f64,
    opts: &OdeOptions,
) -> Result<Trajectory, FlowError> {
    let n = sys.dim;
    let mut err = RhsErr(None);
    let y0 = flatten(&DMatrix::identity(n, n));
    let res = ode::integrate(
        |t, y: &DVector<f64>| match sys.eval_matrix(t) {
            Ok(a) => {
                let x = unflatten(y, n);
                flatten(&(a * x))
            }
            Err(e) => {
                if err.0.is_none() {
                    err.0 = Some(e);
                }
                DVector::from_element(n * n, f64::NAN)
            }
        },
        s,
        y0,
        t_end,
        opts,
    );
    err.resolve(res)
}

/// Length of the next integration segment for renormalized transition
/// products, in the direction `dir` (+1 forward, -1 backward). The budget of
/// ~15 e-folds of the sampled coefficient norm keeps within-segment dips of
/// the renormalized state far above the integrator's absolute error floor;
/// past that floor, recovered magnitudes silently lose decay.
pub(crate) fn segment_length(sys: &LinearSystem, t: f64, dir: f64) -> f64 {
    let mut sup = 0.0f64;
    for k in 0..6 {
        let u = t + dir * 0.4 * k as f64;
        if u < 0.0 {
            break;
        }
        if let Ok(a) = sys.eval_matrix(u) {
            sup = sup.max(spectral_norm(&a));
        }
    }
    (15.0 / (1.0 + sup)).clamp(1e-3, 2.0)
}

/// Propagate the direction of `x` along the linear flow from `s` to
/// `t >= s`, returning the log growth factor `ln(|Phi(t,s) x| / |x|)` and
/// the unit direction at `t`. Integration is segmented with renormalization,
/// so arbitrarily deep decay or growth keeps full relative accuracy.
pub fn propagate_unit(
    sys: &LinearSystem,
    s: f64,
    x: &DVector<f64>,
    t: f64,
) -> Result<(f64, DVector<f64>), FlowError> {
    let norm = x.norm();
    if norm == 0.0 {
        return Ok((0.0, x.clone()));
    }
    let opts = OdeOptions {
        rtol: 1e-10,
        atol: 1e-16,
        ceiling: f64::INFINITY,
        ..OdeOptions::default()
    };
    let mut state = x / norm;
    let mut ln_factor = 0.0f64;
    let mut seg_start = s;
    while seg_start < t {
        let seg_end = (seg_start + segment_length(sys, seg_start, 1.0)).min(t);
        let traj = solve_linear_opts(sys, seg_start, &state, seg_end, &opts)?;
        let end = traj.end_state().clone();
        let c = end.norm();
        if !(c.is_finite() && c > 0.0) {
            return Err(FlowError::Ode(OdeError::NonFinite { t: seg_end }));
        }
        state = end / c;
        ln_factor += c.ln();
        seg_start = seg_end;
    }
    Ok((ln_factor, state))
}

pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unflatten(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Solve `x' = A(t) x` through `(tau, xi)` up to `t_end` (either direction).
pub fn solve_linear(
    sys: &LinearSystem,
    tau: f64,
    xi: &DVector<f64>,
    t_end: f64,
    tol: f64,
) -> Result<Trajectory, FlowError> {
    solve_linear_opts(sys, tau, xi, t_end, &OdeOptions::with_tol(tol))
}

pub fn solve_linear_opts(
    sys: &LinearSystem,
    tau: f64,
    xi: &DVector<f64>,
    t_end: f64,
    opts: &OdeOptions,
) -> Result<Trajectory, FlowError> {
    if xi.len() != sys.dim {
        return Err(FlowError::Dimension {
            expected: sys.dim,
            got: xi.len(),
        });
    }
    let mut err = RhsErr(None);
    let res = ode::integrate(
        |t, y: &DVector<f64>| match sys.eval_matrix(t) {
            Ok(a) => a * y,
            Err(e) => {
                if err.0.is_none() {
                    err.0 = Some(e);
                }
                DVector::from_element(sys.dim, f64::NAN)
            }
        },
        tau,
        xi.clone(),
        t_end,
        opts,
    );
    err.resolve(res)
}

/// Solve `x' = A(t) x + f(t, x)` through `(tau, xi)`.
pub fn solve_perturbed(
    sys: &LinearSystem,
    f: &NonlinearPerturbation,
    tau: f64,
    xi: &DVector<f64>,
    t_end: f64,
    tol: f64,
) -> Result<Trajectory, FlowError> {
    solve_perturbed_opts(sys, f, tau, xi, t_end, &OdeOptions::with_tol(tol))
}

pub fn solve_perturbed_opts(
    sys: &LinearSystem,
    f: &NonlinearPerturbation,
    tau: f64,
    xi: &DVector<f64>,
    t_end: f64,
    opts: &OdeOptions,
) -> Result<Trajectory, FlowError> {
    if xi.len() != sys.dim || f.dim() != sys.dim {
        return Err(FlowError::Dimension {
            expected: sys.dim,
            got: xi.len(),
        });
    }
    let mut err = RhsErr(None);
    let res = ode::integrate(
        |t, y: &DVector<f64>| {
            let rhs = sys
                .eval_matrix(t)
                .map_err(|e| e)
                .and_then(|a| f.eval(t, y).map(|fv| a * y + fv));
            match rhs {
                Ok(v) => v,
                Err(e) => {
                    if err.0.is_none() {
                        err.0 = Some(e);
                    }
                    DVector::from_element(sys.dim, f64::NAN)
                }
            }
        },
        tau,
        xi.clone(),
        t_end,
        opts,
    );
    err.resolve(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use approx::assert_relative_eq;

    fn scalar_decay() -> LinearSystem {
        LinearSystem::scalar(Expression::parse("-1").unwrap(), BTreeMap::new()).unwrap()
    }

    #[test]
    fn scalar_transition_closed_form() {
        let sys = scalar_decay();
        let phi = transition_matrix(&sys, 2.0, 1.0, 1e-10).unwrap();
        assert_relative_eq!(phi.matrix[(0, 0)], (-1.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn transition_at_equal_times_is_identity() {
        let entry = catalog::catalog("bv_scalar", &[("omega", 3.0), ("a", 1.0)].into()).unwrap();
        let phi = transition_matrix(&entry.system, 4.2, 4.2, 1e-10).unwrap();
        assert_eq!(phi.matrix[(0, 0)], 1.0);
    }

    #[test]
    fn bv_scalar_transition_matches_antiderivative() {
        let entry = catalog::catalog("bv_scalar", &[("omega", 3.0), ("a", 1.0)].into()).unwrap();
        let phi = transition_matrix(&entry.system, std::f64::consts::PI, 0.0, 1e-12).unwrap();
        // exp(-3 pi + pi) = exp(-2 pi)
        let exact = (-2.0 * std::f64::consts::PI).exp();
        assert_relative_eq!(phi.matrix[(0, 0)], exact, max_relative = 1e-9);
        assert_relative_eq!(exact, 1.8674427317079889e-3, max_relative = 1e-12);
    }

    #[test]
    fn solve_linear_is_linear_in_initial_state() {
        let entry = catalog::catalog("bv_scalar", &[("omega", 3.0), ("a", 1.0)].into()).unwrap();
        // Absolute tolerance far below the decayed solution scale, so the
        // error control stays relative all the way down.
        let opts = OdeOptions {
            rtol: 1e-11,
            atol: 1e-20,
            ..OdeOptions::default()
        };
        let one = DVector::from_vec(vec![1.0]);
        let two = DVector::from_vec(vec![2.0]);
        let a = solve_linear_opts(&entry.system, 0.0, &one, 4.0, &opts).unwrap();
        let b = solve_linear_opts(&entry.system, 0.0, &two, 4.0, &opts).unwrap();
        for t in [0.5, 1.5, 3.0, 4.0] {
            assert_relative_eq!(2.0 * a.eval(t)[0], b.eval(t)[0], max_relative = 1e-8);
        }
    }

    #[test]
    fn perturbed_with_zero_f_matches_linear() {
        let sys = scalar_decay();
        let f = NonlinearPerturbation::zero(1);
        let xi = DVector::from_vec(vec![1.0]);
        let lin = solve_linear(&sys, 0.0, &xi, 1.0, 1e-10).unwrap();
        let per = solve_perturbed(&sys, &f, 0.0, &xi, 1.0, 1e-10).unwrap();
        assert_relative_eq!(lin.end_state()[0], per.end_state()[0], max_relative = 1e-10);
    }

    #[test]
    fn constant_forcing_closed_form() {
        // x' = -x + 0.5 from 0: x(t) = 0.5 (1 - e^{-t}).
        let sys = scalar_decay();
        let f = NonlinearPerturbation::new(
            1,
            vec![Expression::parse("0.5").unwrap()],
            0.0,
            0.0,
            0.5,
            PerturbationClass::A1,
        )
        .unwrap();
        let xi = DVector::from_vec(vec![0.0]);
        let traj = solve_perturbed(&sys, &f, 0.0, &xi, 1.0, 1e-11).unwrap();
        assert_relative_eq!(
            traj.end_state()[0],
            0.31606027941427883,
            max_relative = 1e-9
        );
    }

    #[test]
    fn a2_declaration_is_checked() {
        let res = NonlinearPerturbation::new(
            1,
            vec![Expression::parse("0.5").unwrap()],
            0.0,
            0.0,
            0.5,
            PerturbationClass::A2,
        );
        assert!(matches!(res, Err(FlowError::NotVanishingAtOrigin { .. })));
    }

    #[test]
    fn lipschitz_metadata_is_checked() {
        let res = NonlinearPerturbation::new(
            1,
            vec![Expression::parse("sin(x1)").unwrap()],
            0.1, // declared too small: true constant is 1
            0.0,
            0.0,
            PerturbationClass::A2,
        );
        assert!(matches!(res, Err(FlowError::LipschitzViolated { .. })));
    }

    #[test]
    fn blow_up_error_for_expanding_system() {
        let sys =
            LinearSystem::scalar(Expression::parse("1").unwrap(), BTreeMap::new()).unwrap();
        let xi = DVector::from_vec(vec![1.0]);
        let res = solve_linear(&sys, 0.0, &xi, 100.0, 1e-9);
        assert!(matches!(res, Err(FlowError::Ode(OdeError::BlowUp { .. }))));
    }

    #[test]
    fn gronwall_sandwich_for_a2_perturbation() {
        // Prop-2-style bound with the window Lipschitz constant of the full
        // right-hand side: L = sup|A| + L_f.
        let sys = scalar_decay();
        let f = NonlinearPerturbation::new(
            1,
            vec![Expression::parse("0.1*exp(-2*t)*sin(x1)").unwrap()],
            0.1,
            1.0,
            0.0,
            PerturbationClass::A2,
        )
        .unwrap();
        let l = 1.0 + 0.1;
        let s = 0.0;
        let (u, v) = (1.0, 1.3);
        let tu = solve_perturbed(&sys, &f, s, &DVector::from_vec(vec![u]), 4.0, 1e-11).unwrap();
        let tv = solve_perturbed(&sys, &f, s, &DVector::from_vec(vec![v]), 4.0, 1e-11).unwrap();
        for t in [0.5, 1.0, 2.0, 4.0] {
            let d = (tu.eval(t)[0] - tv.eval(t)[0]).abs();
            let lo = (u - v).abs() * (-l * (t - s)).exp() * (1.0 - 1e-4);
            let hi = (u - v).abs() * (l * (t - s)).exp() * (1.0 + 1e-4);
            assert!(lo <= d && d <= hi, "t={t}: {lo} <= {d} <= {hi}");
        }
    }
}
