//! Adaptive Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The downstream layers evaluate solutions at root-finder iterates, sup-grid
//! points and Picard collocation points, so every accepted step stores the
//! standard fourth-order interpolation polynomial. Integration runs forward
//! or backward depending on the sign of `t_end - t0`.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Integration aborts once the state norm exceeds this; unbounded
    /// perturbations are allowed, silent overflow is not.
    pub ceiling: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            max_steps: 10_000_000,
            ceiling: 1e12,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("non-finite right-hand side or state at t = {t}")]
    NonFinite { t: f64 },
    #[error("state norm {norm:.3e} exceeded ceiling {ceiling:.3e} at t = {t}")]
    BlowUp { t: f64, norm: f64, ceiling: f64 },
    #[error("exceeded {max_steps} steps at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// b (5th order) equals the last row of A; e = b - b_hat (4th order).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense-output weights for the fifth interpolation coefficient.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    r: [DVector<f64>; 5],
}

impl DenseStep {
    fn eval(&self, t: f64) -> DVector<f64> {
        let theta = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - theta;
        // r1 + th*(r2 + th1*(r3 + th*(r4 + th1*r5)))
        let mut acc = &self.r[3] + &self.r[4] * th1;
        acc = &self.r[2] + acc * theta;
        acc = &self.r[1] + acc * th1;
        &self.r[0] + acc * theta
    }
}

/// Solution trajectory with dense output over `[t_start, t_end]`
/// (time-reversed when integrated backward).
#[derive(Debug, Clone)]
pub struct Trajectory {
    t_start: f64,
    t_end: f64,
    y_start: DVector<f64>,
    y_end: DVector<f64>,
    steps: Vec<DenseStep>,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn start_state(&self) -> &DVector<f64> {
        &self.y_start
    }

    pub fn end_state(&self) -> &DVector<f64> {
        &self.y_end
    }

    /// Knot times, strictly monotone in the direction of integration.
    pub fn grid(&self) -> Vec<f64> {
        let mut g: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        g.push(self.t_end);
        g
    }

    /// States at the knot times.
    pub fn states(&self) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = self.steps.iter().map(|s| s.r[0].clone()).collect();
        out.push(self.y_end.clone());
        out
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t_start <= self.t_end {
            (self.t_start, self.t_end)
        } else {
            (self.t_end, self.t_start)
        };
        t >= lo - 1e-12 * (1.0 + hi.abs()) && t <= hi + 1e-12 * (1.0 + hi.abs())
    }

    /// Interpolate the state at `t` inside the integrated span.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        debug_assert!(self.contains(t), "t = {t} outside trajectory span");
        if self.steps.is_empty() {
            return self.y_end.clone();
        }
        let forward = self.t_end >= self.t_start;
        // Binary search for the step whose interval contains t.
        let mut lo = 0usize;
        let mut hi = self.steps.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            let step = &self.steps[mid];
            let step_end = step.t0 + step.h;
            let after = if forward { t > step_end } else { t < step_end };
            if after {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        self.steps[lo].eval(t)
    }
}

/// Integrate `y' = rhs(t, y)` from `(t0, y0)` to `t_end`, either direction.
pub fn integrate<F>(
    mut rhs: F,
    t0: f64,
    y0: DVector<f64>,
    t_end: f64,
    opts: &OdeOptions,
) -> Result<Trajectory, OdeError>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let n = y0.len();
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(OdeError::NonFinite { t: t0 });
    }
    if (t_end - t0).abs() < f64::EPSILON * (1.0 + t0.abs()) {
        return Ok(Trajectory {
            t_start: t0,
            t_end,
            y_start: y0.clone(),
            y_end: y0,
            steps: Vec::new(),
        });
    }

    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();
    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = rhs(t, &y);
    if !k1.iter().all(|v| v.is_finite()) {
        return Err(OdeError::NonFinite { t });
    }

    let mut h = initial_step(&mut rhs, t, &y, &k1, dir, span, opts);
    let mut steps: Vec<DenseStep> = Vec::new();
    let mut ks: [DVector<f64>; 7] = core::array::from_fn(|_| DVector::zeros(n));
    let mut n_steps = 0usize;

    loop {
        if n_steps >= opts.max_steps {
            return Err(OdeError::MaxSteps {
                t,
                max_steps: opts.max_steps,
            });
        }
        n_steps += 1;

        if h.abs() < 1e4 * f64::EPSILON * (1.0 + t.abs()) {
            return Err(OdeError::StepSizeUnderflow { t });
        }
        // Land exactly on t_end.
        if (t + h - t_end) * dir > 0.0 {
            h = t_end - t;
        }

        ks[0] = k1.clone();
        for i in 1..7 {
            let mut yi = y.clone();
            for (j, kj) in ks.iter().enumerate().take(i) {
                let a = A[i][j];
                if a != 0.0 {
                    yi.axpy(h * a, kj, 1.0);
                }
            }
            ks[i] = rhs(t + C[i] * h, &yi);
        }
        // FSAL: stage 7 is evaluated at (t+h, y_new).
        let mut y_new = y.clone();
        for (j, kj) in ks.iter().enumerate().take(6) {
            let a = A[6][j];
            if a != 0.0 {
                y_new.axpy(h * a, kj, 1.0);
            }
        }
        ks[6] = rhs(t + h, &y_new);

        if !y_new.iter().all(|v| v.is_finite()) || !ks[6].iter().all(|v| v.is_finite()) {
            return Err(OdeError::NonFinite { t: t + h });
        }

        // Weighted RMS error of the embedded 4th order difference.
        let mut err_sq = 0.0;
        for idx in 0..n {
            let mut e = 0.0;
            for (j, kj) in ks.iter().enumerate() {
                e += E[j] * kj[idx];
            }
            e *= h;
            let sc = opts.atol + opts.rtol * y[idx].abs().max(y_new[idx].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();

        if err <= 1.0 {
            // Accept: record dense coefficients.
            let dy = &y_new - &y;
            let r1 = y.clone();
            let r3 = &ks[0] * h - &dy;
            let r4 = &dy - &ks[6] * h - &r3;
            let mut r5 = DVector::zeros(n);
            for (j, kj) in ks.iter().enumerate() {
                if D[j] != 0.0 {
                    r5.axpy(h * D[j], kj, 1.0);
                }
            }
            steps.push(DenseStep {
                t0: t,
                h,
                r: [r1, dy, r3, r4, r5],
            });

            t += h;
            y = y_new;
            k1 = ks[6].clone();

            let norm = y.norm();
            if norm > opts.ceiling {
                return Err(OdeError::BlowUp {
                    t,
                    norm,
                    ceiling: opts.ceiling,
                });
            }
            if (t - t_end) * dir >= 0.0 {
                return Ok(Trajectory {
                    t_start: t0,
                    t_end,
                    y_start: y0,
                    y_end: y,
                    steps,
                });
            }
        }

        let scale = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= scale;
        if h.abs() > span {
            h = dir * span;
        }
    }
}

fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    dir: f64,
    span: f64,
    opts: &OdeOptions,
) -> f64
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let sc = |y: &DVector<f64>, i: usize| opts.atol + opts.rtol * y[i].abs();
    let n = y0.len() as f64;
    let d0 = (y0
        .iter()
        .enumerate()
        .map(|(i, v)| (v / sc(y0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let d1 = (f0
        .iter()
        .enumerate()
        .map(|(i, v)| (v / sc(y0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * (d0 / d1)
    };
    let h0 = h0.min(span);

    let y1 = y0 + f0 * (dir * h0);
    let f1 = rhs(t0 + dir * h0, &y1);
    let d2 = ((&f1 - f0)
        .iter()
        .enumerate()
        .map(|(i, v)| (v / sc(y0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d_max).powf(0.2)
    };
    dir * h0.min(h1).min(span)
}
