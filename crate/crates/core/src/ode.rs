//! Adaptive Dormand-Prince 5(4) integrator with a projection hook, and a
//! Radau IIA variant for stiff stretches.
//!
//! After every accepted step the system may project the state back onto a
//! constraint manifold (the unit tangent sphere here). Because the projected
//! state differs from the RK solution the first stage is recomputed instead of
//! reusing the last one.

/// Right-hand side of `y' = f(t, y)`.
pub trait System {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
    /// Project `y` onto the constraint set; returns the size of the correction.
    fn project(&self, _y: &mut [f64]) -> f64 {
        0.0
    }
    /// Exact Jacobian for the stiff solver; `false` falls back to differences.
    fn jacobian(&self, _t: f64, _y: &[f64], _jac: &mut nalgebra::DMatrix<f64>) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Absolute and relative local error tolerance.
    pub tol: f64,
    pub initial_step: Option<f64>,
    pub max_step: f64,
    /// When set, steps are clipped so that every multiple of this spacing
    /// (measured from the start) is hit exactly, and the observer only sees
    /// those grid points (plus the final point).
    pub sample_spacing: Option<f64>,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            initial_step: None,
            max_step: f64::INFINITY,
            sample_spacing: None,
            max_steps: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Largest projection correction applied after a step.
    pub max_projection: f64,
}

/// Observer verdict after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeError {
    StepUnderflow { t: f64, h: f64, y: Vec<f64> },
    NonFinite { t: f64, y: Vec<f64> },
    TooManySteps { t: f64, y: Vec<f64> },
}

// Dormand-Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// error coefficients b - b*
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

fn combo(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

/// One DP5 step from `(t, y)` with `k[0] = f(t, y)` already filled.
/// Returns the scaled RMS error estimate; the 5th-order result is in `y_new`.
fn attempt<S: System>(sys: &S, t: f64, y: &[f64], h: f64, st: &mut Stages, tol: f64) -> f64 {
    let Stages { k, tmp, y_new } = st;
    let [k1, k2, k3, k4, k5, k6, k7] = k;
    combo(tmp, y, h, &[(A21, k1)]);
    sys.eval(t + C2 * h, tmp, k2);
    combo(tmp, y, h, &[(A31, k1), (A32, k2)]);
    sys.eval(t + C3 * h, tmp, k3);
    combo(tmp, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
    sys.eval(t + C4 * h, tmp, k4);
    combo(tmp, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
    sys.eval(t + C5 * h, tmp, k5);
    combo(tmp, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
    sys.eval(t + h, tmp, k6);
    combo(y_new, y, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
    sys.eval(t + h, y_new, k7);
    let mut sum = 0.0;
    for i in 0..y.len() {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = tol + tol * y[i].abs().max(y_new[i].abs());
        sum += (e / sc).powi(2);
    }
    (sum / y.len() as f64).sqrt()
}

fn initial_step<S: System>(sys: &S, t: f64, y: &[f64], f0: &[f64], dir: f64, tol: f64) -> f64 {
    // Hairer-Norsett-Wanner starting step heuristic.
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| tol + tol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + dir * h0 * b).collect();
    let mut f1 = vec![0.0; n];
    sys.eval(t + dir * h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

/// One adaptive method: fills `y_new` and returns a scaled error estimate.
trait Method<S: System> {
    /// Exponent for the step-size update, `1/(q+1)` with `q` the lower order.
    const EXPONENT: f64;
    /// Called at the start and after every accepted (and projected) step.
    fn prepare(&mut self, sys: &S, t: f64, y: &[f64], stats: &mut StepStats) -> bool;
    fn attempt(&mut self, sys: &S, t: f64, y: &[f64], h: f64, tol: f64, stats: &mut StepStats) -> f64;
    fn result(&mut self) -> &mut Vec<f64>;
}

struct Dp5(Stages);

impl<S: System> Method<S> for Dp5 {
    const EXPONENT: f64 = 0.2;

    fn prepare(&mut self, sys: &S, t: f64, y: &[f64], stats: &mut StepStats) -> bool {
        sys.eval(t, y, &mut self.0.k[0]);
        stats.evaluations += 1;
        self.0.k[0].iter().all(|v| v.is_finite())
    }

    fn attempt(&mut self, sys: &S, t: f64, y: &[f64], h: f64, tol: f64, stats: &mut StepStats) -> f64 {
        stats.evaluations += 6;
        attempt(sys, t, y, h, &mut self.0, tol)
    }

    fn result(&mut self) -> &mut Vec<f64> {
        &mut self.0.y_new
    }
}

/// Integrate from `t0` towards `t_end` (either direction), calling `observe`
/// after each accepted step with the projected state.
pub fn integrate<S, F>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    ctl: &StepControl,
    observe: F,
) -> Result<StepStats, OdeError>
where
    S: System,
    F: FnMut(f64, &[f64]) -> Control,
{
    let mut method = Dp5(Stages::new(sys.dim()));
    let first = |sys: &S, t: f64, y: &[f64], f0: &[f64], dir: f64| initial_step(sys, t, y, f0, dir, ctl.tol);
    drive(sys, &mut method, t0, y0, t_end, ctl, first, observe)
}

/// Same contract as [`integrate`] with the L-stable three-stage Radau IIA
/// method (order 5). Local errors come from step doubling. Meant for stiff
/// problems such as the far field of the soliton flow.
pub fn integrate_stiff<S, F>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    ctl: &StepControl,
    observe: F,
) -> Result<StepStats, OdeError>
where
    S: System,
    F: FnMut(f64, &[f64]) -> Control,
{
    let mut method = Radau::new(sys.dim());
    let first = |_: &S, _: f64, _: &[f64], _: &[f64], _: f64| 1e-3 * (t_end - t0).abs().max(1e-3).min(1.0);
    drive(sys, &mut method, t0, y0, t_end, ctl, first, observe)
}

#[allow(clippy::too_many_arguments)]
fn drive<S, M, H, F>(
    sys: &S,
    method: &mut M,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    ctl: &StepControl,
    first_step: H,
    mut observe: F,
) -> Result<StepStats, OdeError>
where
    S: System,
    M: Method<S>,
    H: Fn(&S, f64, &[f64], &[f64], f64) -> f64,
    F: FnMut(f64, &[f64]) -> Control,
{
    let n = sys.dim();
    assert_eq!(y0.len(), n, "state length mismatch");
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut stats = StepStats::default();
    let mut t = t0;
    let mut y = y0.to_vec();
    if !method.prepare(sys, t, &y, &mut stats) || !y.iter().all(|v| v.is_finite()) {
        return Err(OdeError::NonFinite { t, y });
    }
    if t == t_end {
        return Ok(stats);
    }
    let mut h = match ctl.initial_step {
        Some(h) => h,
        None => {
            let mut f0 = vec![0.0; n];
            sys.eval(t, &y, &mut f0);
            first_step(sys, t, &y, &f0, dir)
        }
    }
    .min(ctl.max_step);
    let mut grid_index: u64 = 0;
    loop {
        if stats.accepted + stats.rejected >= ctl.max_steps {
            return Err(OdeError::TooManySteps { t, y });
        }
        let remaining = (t_end - t) * dir;
        let mut step = h.min(remaining).min(ctl.max_step);
        let mut grid_hit = None;
        if let Some(ds) = ctl.sample_spacing {
            let next = grid_index + 1;
            let target = t0 + dir * ds * next as f64;
            let gap = (target - t) * dir;
            if gap <= step * (1.0 + 1e-12) {
                step = gap;
                grid_hit = Some(next);
            }
        }
        let min_step = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if step < min_step {
            return Err(OdeError::StepUnderflow { t, h: step, y });
        }
        let err = method.attempt(sys, t, &y, dir * step, ctl.tol, &mut stats);
        if !err.is_finite() {
            stats.rejected += 1;
            h = step * FAC_MIN;
            continue;
        }
        if err <= 1.0 {
            stats.accepted += 1;
            t = match grid_hit {
                Some(k) => {
                    grid_index = k;
                    t0 + dir * ctl.sample_spacing.unwrap() * k as f64
                }
                None if step == remaining => t_end,
                None => t + dir * step,
            };
            std::mem::swap(&mut y, method.result());
            let corr = sys.project(&mut y);
            stats.max_projection = stats.max_projection.max(corr);
            if !method.prepare(sys, t, &y, &mut stats) || !y.iter().all(|v| v.is_finite()) {
                return Err(OdeError::NonFinite { t, y });
            }
            let fac = if err == 0.0 { FAC_MAX } else { (SAFETY * err.powf(-M::EXPONENT)).clamp(FAC_MIN, FAC_MAX) };
            // a clipped step says nothing about how large the next one may be
            h = if grid_hit.is_some() || step < h { h.max(step * fac) } else { step * fac };
            let finished = (t_end - t) * dir <= 0.0;
            let report = ctl.sample_spacing.is_none() || grid_hit.is_some() || finished;
            if (report && observe(t, &y) == Control::Stop) || finished {
                return Ok(stats);
            }
        } else {
            stats.rejected += 1;
            h = step * (SAFETY * err.powf(-M::EXPONENT)).clamp(FAC_MIN, 1.0);
        }
    }
}

// Radau IIA, three stages.
const SQ6: f64 = 2.449_489_742_783_178;

fn radau_tableau() -> ([[f64; 3]; 3], [f64; 3]) {
    let a = [
        [(88.0 - 7.0 * SQ6) / 360.0, (296.0 - 169.0 * SQ6) / 1800.0, (-2.0 + 3.0 * SQ6) / 225.0],
        [(296.0 + 169.0 * SQ6) / 1800.0, (88.0 + 7.0 * SQ6) / 360.0, (-2.0 - 3.0 * SQ6) / 225.0],
        [(16.0 - SQ6) / 36.0, (16.0 + SQ6) / 36.0, 1.0 / 9.0],
    ];
    let c = [(4.0 - SQ6) / 10.0, (4.0 + SQ6) / 10.0, 1.0];
    (a, c)
}

const NEWTON_MAX_ITER: usize = 12;

/// Stage increments of an accepted Radau step: the collocation polynomial
/// through `(0, 0)` and `(c_j, z_j)` in units of `h`.
#[derive(Clone)]
struct Collocation {
    h: f64,
    z: [Vec<f64>; 3],
}

impl Collocation {
    /// `u(x) - u(1)`, the increment from the end of the step to fraction `x`.
    fn from_end(&self, c: &[f64; 3], x: f64, out: &mut [f64]) {
        let nodes = [0.0, c[0], c[1], c[2]];
        let lag = |j: usize| {
            (0..4).filter(|&k| k != j).map(|k| (x - nodes[k]) / (nodes[j] - nodes[k])).product::<f64>()
        };
        let l = [lag(1), lag(2), lag(3)];
        for (k, o) in out.iter_mut().enumerate() {
            *o = l[0] * self.z[0][k] + l[1] * self.z[1][k] + l[2] * self.z[2][k] - self.z[2][k];
        }
    }
}

struct Radau {
    a: [[f64; 3]; 3],
    c: [f64; 3],
    /// Jacobians at the three stages, refreshed every Newton iteration.
    jac: [nalgebra::DMatrix<f64>; 3],
    out: Vec<f64>,
    /// Polynomial of the last accepted half step, used as Newton predictor.
    last: Option<Collocation>,
    pending: Option<Collocation>,
}

/// Exact Jacobian if the system has one, forward differences otherwise.
fn jacobian_at<S: System>(sys: &S, t: f64, y: &[f64], jac: &mut nalgebra::DMatrix<f64>, stats: &mut StepStats) -> bool {
    if sys.jacobian(t, y, jac) {
        return jac.iter().all(|v| v.is_finite());
    }
    let n = y.len();
    let mut f0 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    sys.eval(t, y, &mut f0);
    let mut yp = y.to_vec();
    for j in 0..n {
        let d = f64::EPSILON.sqrt() * y[j].abs().max(1.0);
        yp[j] = y[j] + d;
        sys.eval(t, &yp, &mut f1);
        for i in 0..n {
            jac[(i, j)] = (f1[i] - f0[i]) / d;
        }
        yp[j] = y[j];
    }
    stats.evaluations += n + 1;
    jac.iter().all(|v| v.is_finite())
}

impl Radau {
    fn new(n: usize) -> Self {
        let (a, c) = radau_tableau();
        Self {
            a,
            c,
            jac: std::array::from_fn(|_| nalgebra::DMatrix::zeros(n, n)),
            out: vec![0.0; n],
            last: None,
            pending: None,
        }
    }

    /// One Radau step by Newton's method; `None` if the iteration fails.
    /// The Jacobian is re-evaluated at every stage and iteration: in the far
    /// field the coupling blocks are of size `h|a|` and a frozen Jacobian
    /// stops contracting.
    fn step<S: System>(
        &mut self,
        sys: &S,
        t: f64,
        y: &[f64],
        h: f64,
        tol: f64,
        guess: Option<&Collocation>,
        stats: &mut StepStats,
    ) -> Option<(Vec<f64>, Collocation)> {
        let n = y.len();
        let m = 3 * n;
        let sc: Vec<f64> = y.iter().map(|v| tol * (1.0 + v.abs())).collect();
        let mut z = vec![0.0; m];
        if let Some(g) = guess {
            for j in 0..3 {
                g.from_end(&self.c, 1.0 + self.c[j] * h / g.h, &mut z[j * n..(j + 1) * n]);
            }
        }
        let mut fz = vec![0.0; m];
        let mut stage = vec![0.0; n];
        let mut prev_norm = f64::INFINITY;
        for _ in 0..NEWTON_MAX_ITER {
            let mut mat = nalgebra::DMatrix::<f64>::identity(m, m);
            for j in 0..3 {
                for k in 0..n {
                    stage[k] = y[k] + z[j * n + k];
                }
                sys.eval(t + self.c[j] * h, &stage, &mut fz[j * n..(j + 1) * n]);
                if !jacobian_at(sys, t + self.c[j] * h, &stage, &mut self.jac[j], stats) {
                    return None;
                }
                for i in 0..3 {
                    let f = h * self.a[i][j];
                    for k in 0..n {
                        for l in 0..n {
                            mat[(i * n + k, j * n + l)] -= f * self.jac[j][(k, l)];
                        }
                    }
                }
            }
            stats.evaluations += 3;
            let lu = mat.lu();
            let mut rhs = nalgebra::DVector::<f64>::zeros(m);
            for i in 0..3 {
                for k in 0..n {
                    let mut acc = 0.0;
                    for j in 0..3 {
                        acc += self.a[i][j] * fz[j * n + k];
                    }
                    rhs[i * n + k] = h * acc - z[i * n + k];
                }
            }
            let dz = lu.solve(&rhs)?;
            let mut norm = 0.0;
            for i in 0..m {
                z[i] += dz[i];
                norm += (dz[i] / sc[i % n]).powi(2);
            }
            let norm = (norm / m as f64).sqrt();
            if !norm.is_finite() {
                return None;
            }
            // converged, or contracting fast enough that the remaining error is small
            let theta = norm / prev_norm;
            if norm < 1e-2 || (prev_norm.is_finite() && theta < 0.5 && norm * theta / (1.0 - theta) < 1e-2) {
                let y_end = (0..n).map(|k| y[k] + z[2 * n + k]).collect();
                let poly = Collocation {
                    h,
                    z: [z[..n].to_vec(), z[n..2 * n].to_vec(), z[2 * n..].to_vec()],
                };
                return Some((y_end, poly));
            }
            if theta > 2.0 {
                return None;
            }
            prev_norm = norm;
        }
        None
    }
}

impl<S: System> Method<S> for Radau {
    // doubling compares two order-5 results
    const EXPONENT: f64 = 1.0 / 6.0;

    fn prepare(&mut self, _sys: &S, _t: f64, _y: &[f64], _stats: &mut StepStats) -> bool {
        // called after acceptance: the pending polynomial belongs to the accepted step
        self.last = self.pending.take();
        true
    }

    fn attempt(&mut self, sys: &S, t: f64, y: &[f64], h: f64, tol: f64, stats: &mut StepStats) -> f64 {
        let guess = self.last.clone();
        let Some((full, _)) = self.step(sys, t, y, h, tol, guess.as_ref(), stats) else {
            return f64::INFINITY;
        };
        let Some((mid, first)) = self.step(sys, t, y, 0.5 * h, tol, guess.as_ref(), stats) else {
            return f64::INFINITY;
        };
        let Some((two, second)) = self.step(sys, t + 0.5 * h, &mid, 0.5 * h, tol, Some(&first), stats) else {
            return f64::INFINITY;
        };
        let mut sum = 0.0;
        for i in 0..y.len() {
            let e = (two[i] - full[i]) / 31.0;
            sum += (e / (tol + tol * y[i].abs().max(two[i].abs()))).powi(2);
        }
        self.out = two;
        self.pending = Some(second);
        (sum / y.len() as f64).sqrt()
    }

    fn result(&mut self) -> &mut Vec<f64> {
        &mut self.out
    }
}
