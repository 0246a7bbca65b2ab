//! The flow on the closed ball: `P = C / sqrt(1 + |C|^2)` with parameter
//! `dvarsigma = sqrt(1 + |C|^2) ds`, which extends the soliton flow to the
//! sphere of points at infinity.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{tangent_projection, IntegrateOptions, PhaseState, SolitonParams};
use crate::ode::{self, Control, StepControl, StepStats, System};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactState {
    pub p: DVector<f64>,
    pub t: DVector<f64>,
}

impl CompactState {
    pub fn new(p: DVector<f64>, t: DVector<f64>) -> Result<Self> {
        if p.len() != t.len() {
            return Err(Error::Dimension { expected: p.len(), got: t.len() });
        }
        if p.norm() > 1.0 + 1e-12 {
            return Err(Error::InvalidState(format!("|P| = {} exceeds 1", p.norm())));
        }
        if (t.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState("tangent is not a unit vector".into()));
        }
        Ok(Self { p, t })
    }

    pub fn from_phase(state: &PhaseState) -> Self {
        let r = (1.0 + state.c.norm_squared()).sqrt();
        Self { p: &state.c / r, t: state.t.clone() }
    }

    /// Inverse map; `None` on the boundary sphere.
    pub fn to_phase(&self) -> Option<PhaseState> {
        let r2 = 1.0 - self.p.norm_squared();
        (r2 > 0.0).then(|| PhaseState { c: &self.p / r2.sqrt(), t: self.t.clone() })
    }

    pub fn at_infinity(&self) -> bool {
        self.p.norm_squared() >= 1.0
    }
}

/// `V` written in compact coordinates. On the boundary it extends
/// continuously (by 0) only when `alpha < 0`.
pub fn extended_lyapunov(params: &SolitonParams, state: &CompactState) -> Option<f64> {
    let r2 = 1.0 - state.p.norm_squared();
    let ap = params.spectrum().apply(&state.p);
    let bracket = ap.dot(&state.t);
    if r2 <= 0.0 {
        return (params.alpha() < 0.0).then_some(0.0);
    }
    if bracket == 0.0 {
        return Some(0.0);
    }
    let p2 = state.p.norm_squared();
    let expo = 0.5 * params.alpha() * p2 / r2 + params.v().dot(&state.p) / r2.sqrt() - 0.5 * r2.ln();
    Some(bracket * expo.exp())
}

struct CompactFlow<'a> {
    params: &'a SolitonParams,
}

impl System for CompactFlow<'_> {
    // state: P, T, and the arc length s as a quadrature component
    fn dim(&self) -> usize {
        2 * self.params.dim() + 1
    }

    fn eval(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.params.dim();
        let p = DVector::from_column_slice(&y[..n]);
        let t = DVector::from_column_slice(&y[n..2 * n]);
        let r2 = (1.0 - p.norm_squared()).max(0.0);
        let dp = (&t - &p * p.dot(&t)) * r2;
        let drive = self.params.shifted_apply(&p) + self.params.v() * r2.sqrt();
        let dt = tangent_projection(&t, &drive);
        dy[..n].copy_from_slice(dp.as_slice());
        dy[n..2 * n].copy_from_slice(dt.as_slice());
        dy[2 * n] = r2.sqrt();
    }

    fn project(&self, y: &mut [f64]) -> f64 {
        let n = self.params.dim();
        let (p, rest) = y.split_at_mut(n);
        let t = &mut rest[..n];
        let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if pn > 1.0 {
            p.iter_mut().for_each(|x| *x /= pn);
        }
        let tn = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        t.iter_mut().for_each(|x| *x /= tn);
        (tn - 1.0).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactSample {
    pub varsigma: f64,
    pub state: CompactState,
    /// Arc length accumulated from the start, `ds = sqrt(1 - |P|^2) dvarsigma`.
    pub s: f64,
    pub v_ext: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactTrajectory {
    pub params: SolitonParams,
    /// Samples ordered by increasing `varsigma`.
    pub samples: Vec<CompactSample>,
    pub stats: StepStats,
}

pub fn integrate_compactified(
    params: &SolitonParams,
    state0: &CompactState,
    span: (f64, f64),
    opts: &IntegrateOptions,
) -> Result<CompactTrajectory> {
    let n = params.dim();
    if state0.p.len() != n {
        return Err(Error::Dimension { expected: n, got: state0.p.len() });
    }
    let sys = CompactFlow { params };
    let y0: Vec<f64> = state0.p.iter().chain(state0.t.iter()).copied().chain([0.0]).collect();
    let ctl = StepControl {
        tol: opts.tol,
        max_step: opts.max_step,
        sample_spacing: opts.sample_spacing,
        max_steps: opts.max_steps,
        initial_step: None,
    };
    let mk = |varsigma: f64, y: &[f64]| {
        let state = CompactState {
            p: DVector::from_column_slice(&y[..n]),
            t: DVector::from_column_slice(&y[n..2 * n]),
        };
        let v_ext = extended_lyapunov(params, &state);
        CompactSample { varsigma, state, s: y[2 * n], v_ext }
    };
    let mut samples = vec![mk(span.0, &y0)];
    let stats = ode::integrate(&sys, span.0, &y0, span.1, &ctl, |vs, y| {
        samples.push(mk(vs, y));
        Control::Continue
    })
    .map_err(|e| Error::Domain(format!("compactified integration failed: {e:?}")))?;
    if span.1 < span.0 {
        samples.reverse();
    }
    Ok(CompactTrajectory { params: params.clone(), samples, stats })
}
