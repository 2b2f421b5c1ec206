//! Homeomorphism pair built from crossing times of a Lyapunov level set.
//!
//! For a state `(tau, xi)` the map follows the linear flow to the unique time
//! `T` where `V(T, x(T)) = level/2`, then rides the perturbed flow back to
//! `tau`; the inverse runs the two flows in the opposite roles. Both maps fix
//! the origin by definition.

use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::flow::{
    solve_linear_opts, solve_perturbed_opts, FlowError, LinearSystem, NonlinearPerturbation,
};
use crate::lyapunov::{LyapunovError, LyapunovFunction};
use crate::ode::{OdeOptions, Trajectory};

#[derive(Debug, Clone)]
pub struct CrossingConfig {
    /// Level `l` of the construction; the crossing target is `l/2`.
    pub level: f64,
    /// Termination tolerance of the bisection, in time units.
    pub root_tol: f64,
    /// Bracket expansion factor.
    pub bracket_growth: f64,
    /// Domain boundary: the flow is only defined for `t >= t_floor`.
    pub t_floor: f64,
    /// Give up expanding the bracket beyond this width.
    pub max_bracket: f64,
}

impl Default for CrossingConfig {
    fn default() -> Self {
        Self {
            level: 1.0,
            root_tol: 1e-10,
            bracket_growth: 2.0,
            t_floor: 0.0,
            max_bracket: 500.0,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum CrossingError {
    #[error("crossing time is undefined for the zero state")]
    ZeroState,
    #[error(
        "crossing lies outside the domain: V({t_floor}, x({t_floor})) = {v_at_floor:.6e} is still below the target {target:.6e}"
    )]
    OutOfDomain {
        t_floor: f64,
        v_at_floor: f64,
        target: f64,
    },
    #[error("no sign change within bracket width {width:.3e}; V may not be monotone along the flow")]
    NoBracket { width: f64 },
    #[error("V is not monotone along the flow near t = {t}")]
    NonMonotone { t: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
}

#[derive(Clone, Copy)]
enum FlowKind {
    Linear,
    Perturbed,
}

/// The crossing-time homeomorphism pair `H`, `G` between the linear system
/// and its perturbation, driven by a Lyapunov evaluator.
pub struct CrossingHomeomorphism {
    pub v: Arc<dyn LyapunovFunction>,
    pub lin: LinearSystem,
    pub pert: NonlinearPerturbation,
    pub cfg: CrossingConfig,
    opts: OdeOptions,
}

impl CrossingHomeomorphism {
    pub fn new(
        v: Arc<dyn LyapunovFunction>,
        lin: LinearSystem,
        pert: NonlinearPerturbation,
        cfg: CrossingConfig,
    ) -> Self {
        Self {
            v,
            lin,
            pert,
            cfg,
            opts: OdeOptions::with_tol(1e-10),
        }
    }

    fn solve(
        &self,
        kind: FlowKind,
        t0: f64,
        x0: &DVector<f64>,
        t1: f64,
    ) -> Result<Trajectory, FlowError> {
        match kind {
            FlowKind::Linear => solve_linear_opts(&self.lin, t0, x0, t1, &self.opts),
            FlowKind::Perturbed => {
                solve_perturbed_opts(&self.lin, &self.pert, t0, x0, t1, &self.opts)
            }
        }
    }

    fn v_along(&self, traj: &Trajectory, t: f64) -> Result<f64, CrossingError> {
        Ok(self.v.evaluate(t, &traj.eval(t))?)
    }

    /// Find `T` with `V(T, x(T)) = level/2` along the chosen flow.
    fn crossing_time(
        &self,
        kind: FlowKind,
        tau: f64,
        xi: &DVector<f64>,
    ) -> Result<(f64, Trajectory), CrossingError> {
        if xi.norm() == 0.0 {
            return Err(CrossingError::ZeroState);
        }
        let target = self.cfg.level / 2.0;
        let v0 = self.v.evaluate(tau, xi)?;

        if v0 > target {
            // Forward: V decays at rate ~2 gamma, seed the bracket there.
            let guess = (v0 / target).ln() / (2.0 * self.v.gamma());
            let mut width = (1.25 * guess + 0.25).max(self.cfg.root_tol * 16.0);
            loop {
                let traj = self.solve(kind, tau, xi, tau + width)?;
                let v_hi = self.v_along(&traj, tau + width)?;
                if v_hi <= target {
                    return self.bisect(&traj, tau, tau + width, target);
                }
                width *= self.cfg.bracket_growth;
                if width > self.cfg.max_bracket {
                    return Err(CrossingError::NoBracket { width });
                }
            }
        } else if v0 < target {
            // Backward toward the domain floor.
            let floor = self.cfg.t_floor;
            let mut width = (0.5 * (target / v0).ln()).max(self.cfg.root_tol * 16.0);
            loop {
                let lo = (tau - width).max(floor);
                let traj = self.solve(kind, tau, xi, lo)?;
                let v_lo = self.v_along(&traj, lo)?;
                if v_lo >= target {
                    return self.bisect(&traj, lo, tau, target);
                }
                if lo <= floor {
                    return Err(CrossingError::OutOfDomain {
                        t_floor: floor,
                        v_at_floor: v_lo,
                        target,
                    });
                }
                width *= self.cfg.bracket_growth;
            }
        } else {
            let traj = self.solve(kind, tau, xi, tau)?;
            Ok((tau, traj))
        }
    }

    /// Bisection on `[lo, hi]` where `V - target` is >= 0 at `lo` and <= 0
    /// at `hi`.
    fn bisect(
        &self,
        traj: &Trajectory,
        mut lo: f64,
        mut hi: f64,
        target: f64,
    ) -> Result<(f64, Trajectory), CrossingError> {
        let phi_lo = self.v_along(traj, lo)? - target;
        let phi_hi = self.v_along(traj, hi)? - target;
        if phi_lo < 0.0 || phi_hi > 0.0 {
            return Err(CrossingError::NonMonotone { t: lo });
        }
        while hi - lo > self.cfg.root_tol {
            let mid = 0.5 * (lo + hi);
            let phi_mid = self.v_along(traj, mid)? - target;
            if phi_mid >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi), traj.clone()))
    }

    /// Crossing time along the linear flow.
    pub fn crossing_time_linear(&self, tau: f64, xi: &DVector<f64>) -> Result<f64, CrossingError> {
        Ok(self.crossing_time(FlowKind::Linear, tau, xi)?.0)
    }

    /// Crossing time along the perturbed flow.
    pub fn crossing_time_perturbed(
        &self,
        tau: f64,
        xi: &DVector<f64>,
    ) -> Result<f64, CrossingError> {
        Ok(self.crossing_time(FlowKind::Perturbed, tau, xi)?.0)
    }

    /// `H(tau, xi)`: linear flow out to the crossing, perturbed flow back.
    pub fn map_h(&self, tau: f64, xi: &DVector<f64>) -> Result<DVector<f64>, CrossingError> {
        if xi.norm() == 0.0 {
            return Ok(DVector::zeros(xi.len()));
        }
        let (t_cross, traj) = self.crossing_time(FlowKind::Linear, tau, xi)?;
        let x_cross = traj.eval(t_cross);
        let back = self.solve(FlowKind::Perturbed, t_cross, &x_cross, tau)?;
        Ok(back.end_state().clone())
    }

    /// `G(tau, xi)`: perturbed flow out to its crossing, linear flow back.
    pub fn map_g(&self, tau: f64, xi: &DVector<f64>) -> Result<DVector<f64>, CrossingError> {
        if xi.norm() == 0.0 {
            return Ok(DVector::zeros(xi.len()));
        }
        let (t_cross, traj) = self.crossing_time(FlowKind::Perturbed, tau, xi)?;
        let y_cross = traj.eval(t_cross);
        let back = self.solve(FlowKind::Linear, t_cross, &y_cross, tau)?;
        Ok(back.end_state().clone())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualStat {
    pub worst: f64,
    pub tol: f64,
    pub pass: bool,
    pub at_tau: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingReport {
    /// `|G(tau, H(tau, xi)) - xi| / (1 + |xi|)`.
    pub inverse_gh: ResidualStat,
    /// `|H(tau, G(tau, xi)) - xi| / (1 + |xi|)`.
    pub inverse_hg: ResidualStat,
    /// `|T(t, X(t, tau, xi)) - T(tau, xi)|`.
    pub t_invariance: ResidualStat,
    /// `H(t, X(t))` against the perturbed solution through `(tau, H(tau, xi))`.
    pub solution_mapping: ResidualStat,
    /// Norms `|H(tau, k xi)|` along a diverging ray; must be increasing.
    pub divergence_norms: Vec<f64>,
    pub divergence_monotone: bool,
    pub samples: usize,
    pub skipped_out_of_domain: usize,
    pub eta_assumption: f64,
}

impl CrossingReport {
    pub fn all_pass(&self) -> bool {
        self.inverse_gh.pass
            && self.inverse_hg.pass
            && self.t_invariance.pass
            && self.solution_mapping.pass
            && self.divergence_monotone
    }
}

/// Verify the topological-equivalence contract on samples `(tau, xi != 0)`.
/// Report-only: violations set `pass = false` but never error.
pub fn verify_crossing_equivalence(
    hom: &CrossingHomeomorphism,
    samples: &[(f64, DVector<f64>)],
    inverse_tol: f64,
    invariance_tol: f64,
) -> Result<CrossingReport, CrossingError> {
    let mut inv_gh = (0.0f64, 0.0f64);
    let mut inv_hg = (0.0f64, 0.0f64);
    let mut t_inv = (0.0f64, 0.0f64);
    let mut sol_map = (0.0f64, 0.0f64);
    let mut skipped = 0usize;

    for (tau, xi) in samples {
        let scale = 1.0 + xi.norm();
        let h = match hom.map_h(*tau, xi) {
            Ok(h) => h,
            Err(CrossingError::OutOfDomain { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let g_of_h = hom.map_g(*tau, &h)?;
        let r = (&g_of_h - xi).norm() / scale;
        if r > inv_gh.0 {
            inv_gh = (r, *tau);
        }

        let g = match hom.map_g(*tau, xi) {
            Ok(g) => g,
            Err(CrossingError::OutOfDomain { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let h_of_g = hom.map_h(*tau, &g)?;
        let r = (&h_of_g - xi).norm() / scale;
        if r > inv_hg.0 {
            inv_hg = (r, *tau);
        }

        // T-invariance and solution mapping at shifted base times.
        let t_big = hom.crossing_time_linear(*tau, xi)?;
        let y_tau = &h;
        let lin_to = hom.solve(FlowKind::Linear, *tau, xi, tau + 1.5)?;
        let pert_ref = hom.solve(FlowKind::Perturbed, *tau, y_tau, tau + 1.5)?;
        for dt in [0.4, 1.5] {
            let t = tau + dt;
            let x_t = lin_to.eval(t);
            let t2 = hom.crossing_time_linear(t, &x_t)?;
            let r = (t2 - t_big).abs();
            if r > t_inv.0 {
                t_inv = (r, *tau);
            }
            let h_t = hom.map_h(t, &x_t)?;
            let r = (&h_t - &pert_ref.eval(t)).norm() / scale;
            if r > sol_map.0 {
                sol_map = (r, *tau);
            }
        }
    }

    // Divergence proxy along a ray from the first sample.
    let mut divergence_norms = Vec::new();
    if let Some((tau, xi)) = samples.first() {
        let dir = xi / xi.norm();
        for k in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let state = &dir * k;
            match hom.map_h(*tau, &state) {
                Ok(h) => divergence_norms.push(h.norm()),
                Err(CrossingError::OutOfDomain { .. }) => divergence_norms.push(f64::NAN),
                Err(e) => return Err(e),
            }
        }
    }
    let divergence_monotone = divergence_norms
        .windows(2)
        .all(|w| w[1].is_nan() || w[0].is_nan() || w[1] > w[0]);

    Ok(CrossingReport {
        inverse_gh: ResidualStat {
            worst: inv_gh.0,
            tol: inverse_tol,
            pass: inv_gh.0 <= inverse_tol,
            at_tau: inv_gh.1,
        },
        inverse_hg: ResidualStat {
            worst: inv_hg.0,
            tol: inverse_tol,
            pass: inv_hg.0 <= inverse_tol,
            at_tau: inv_hg.1,
        },
        t_invariance: ResidualStat {
            worst: t_inv.0,
            tol: invariance_tol,
            pass: t_inv.0 <= invariance_tol,
            at_tau: t_inv.1,
        },
        solution_mapping: ResidualStat {
            worst: sol_map.0,
            tol: invariance_tol,
            pass: sol_map.0 <= invariance_tol,
            at_tau: sol_map.1,
        },
        divergence_norms,
        divergence_monotone,
        samples: samples.len(),
        skipped_out_of_domain: skipped,
        eta_assumption: 1.0,
    })
}
