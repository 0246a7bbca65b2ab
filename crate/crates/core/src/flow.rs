//! The soliton flow `C' = T`, `T' = p_T((alpha + A) C + v)` on `R^n x S^{n-1}`,
//! with arc length `s` as independent variable.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::diagnostics::{self, DiagnosticSample, A_NORM_FLOOR};
use crate::error::{Error, Result};
use crate::ode::{self, Control, OdeError, StepControl, StepStats, System};
use crate::skewlin::{skew_normal_form, SkewSpectrum};

/// The triple `(alpha, A, v)` of a soliton.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolitonParams {
    alpha: f64,
    spectrum: SkewSpectrum,
    v: DVector<f64>,
}

impl SolitonParams {
    pub fn new(alpha: f64, spectrum: SkewSpectrum, v: DVector<f64>) -> Result<Self> {
        let n = spectrum.dim();
        if v.len() != n {
            return Err(Error::Dimension { expected: n, got: v.len() });
        }
        if !alpha.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("non-finite soliton parameters".into()));
        }
        let av = spectrum.apply(&v).norm();
        if av > 1e-12 * (1.0 + spectrum.max_frequency() * v.norm()) {
            return Err(Error::InvalidParams(format!(
                "the translation v must lie in the null space of A (|Av| = {av:.3e})"
            )));
        }
        if alpha != 0.0 && v.norm() > 0.0 {
            return Err(Error::InvalidParams(
                "alpha != 0 requires v = 0: a dilating generator is conjugate to one \
                 without translation (category C of the symmetry taxonomy)"
                    .into(),
            ));
        }
        Ok(Self { alpha, spectrum, v })
    }

    pub fn from_matrix(alpha: f64, a: &DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        Self::new(alpha, skew_normal_form(a)?, v)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn spectrum(&self) -> &SkewSpectrum {
        &self.spectrum
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    /// Drive vector `a = (alpha + A) C + v`.
    pub fn drive(&self, c: &DVector<f64>) -> DVector<f64> {
        c * self.alpha + self.spectrum.apply(c) + &self.v
    }

    /// `(alpha + A) x`.
    pub fn shifted_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.alpha + self.spectrum.apply(x)
    }

    /// Operator norm of `alpha + A`.
    pub fn shifted_norm(&self) -> f64 {
        self.spectrum.shifted_norm(self.alpha)
    }

    pub fn is_translating(&self) -> bool {
        self.v.norm() > 0.0
    }

    fn drive_into(&self, c: &[f64], out: &mut [f64]) {
        let a = self.spectrum.matrix();
        let n = c.len();
        for i in 0..n {
            let mut acc = self.alpha * c[i] + self.v[i];
            for j in 0..n {
                acc += a[(i, j)] * c[j];
            }
            out[i] = acc;
        }
    }
}

/// A point `(C, T)` of phase space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseState {
    pub c: DVector<f64>,
    pub t: DVector<f64>,
}

impl PhaseState {
    pub fn new(c: DVector<f64>, t: DVector<f64>) -> Result<Self> {
        if c.len() != t.len() {
            return Err(Error::Dimension { expected: c.len(), got: t.len() });
        }
        if (t.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("|T| = {} is not 1", t.norm())));
        }
        Ok(Self { c, t })
    }

    /// Build a state, normalizing the tangent.
    pub fn normalized(c: DVector<f64>, t: DVector<f64>) -> Result<Self> {
        let n = t.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidState("tangent must be a nonzero vector".into()));
        }
        Self::new(c, t / n)
    }

    /// `(C, -T)`: the same curve traversed the other way.
    pub fn reversed(&self) -> Self {
        Self { c: self.c.clone(), t: -&self.t }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    fn pack(&self) -> Vec<f64> {
        self.c.iter().chain(self.t.iter()).copied().collect()
    }

    fn unpack(y: &[f64]) -> Self {
        let n = y.len() / 2;
        Self {
            c: DVector::from_column_slice(&y[..n]),
            t: DVector::from_column_slice(&y[n..]),
        }
    }
}

/// `p_T(x) = x - <x, T> T / |T|^2`.
pub fn tangent_projection(t: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    x - t * (x.dot(t) / t.norm_squared())
}

/// Soliton vector field: `(dC, dT) = (T, p_T(a))`.
pub fn vector_field(params: &SolitonParams, state: &PhaseState) -> (DVector<f64>, DVector<f64>) {
    let a = params.drive(&state.c);
    (state.t.clone(), tangent_projection(&state.t, &a))
}

pub(crate) struct Flow<'a> {
    pub params: &'a SolitonParams,
}

impl System for Flow<'_> {
    fn dim(&self) -> usize {
        2 * self.params.dim()
    }

    fn eval(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.params.dim();
        let (c, t) = y.split_at(n);
        let (dc, dt) = dy.split_at_mut(n);
        dc.copy_from_slice(t);
        self.params.drive_into(c, dt);
        let tt: f64 = t.iter().map(|x| x * x).sum();
        let at: f64 = dt.iter().zip(t).map(|(a, b)| a * b).sum();
        let k = at / tt;
        for (d, ti) in dt.iter_mut().zip(t) {
            *d -= k * ti;
        }
    }

    fn project(&self, y: &mut [f64]) -> f64 {
        let n = self.params.dim();
        let t = &mut y[n..];
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        t.iter_mut().for_each(|x| *x /= norm);
        (norm - 1.0).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrateOptions {
    /// Local error tolerance (absolute and relative).
    pub tol: f64,
    pub max_step: f64,
    /// Uniform output grid in `s`; see [`StepControl::sample_spacing`].
    pub sample_spacing: Option<f64>,
    /// Stop when `|C|` reaches this bound.
    pub norm_cap: f64,
    /// Stop when `|sigma|` reaches this bound.
    pub sigma_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_step: f64::INFINITY,
            sample_spacing: None,
            norm_cap: 1e6,
            sigma_max: None,
            max_steps: 20_000_000,
        }
    }
}

impl IntegrateOptions {
    pub fn with_spacing(mut self, ds: f64) -> Self {
        self.sample_spacing = Some(ds);
        self
    }

    fn step_control(&self) -> StepControl {
        StepControl {
            tol: self.tol,
            initial_step: None,
            max_step: self.max_step,
            sample_spacing: self.sample_spacing,
            max_steps: self.max_steps,
        }
    }
}

/// A stopping condition: integration halts when `g` changes from `>= 0` to `< 0`.
pub struct Event<'a> {
    pub name: String,
    #[allow(clippy::type_complexity)]
    pub g: Box<dyn Fn(&PhaseState, &DiagnosticSample) -> f64 + Sync + 'a>,
}

impl<'a> Event<'a> {
    pub fn new(name: impl Into<String>, g: impl Fn(&PhaseState, &DiagnosticSample) -> f64 + Sync + 'a) -> Self {
        Self { name: name.into(), g: Box::new(g) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Termination {
    Completed,
    Event { name: String, s: f64 },
    NormCap { s: f64 },
    SigmaLimit { s: f64 },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub s: f64,
    pub sigma: f64,
    pub varsigma: f64,
    pub state: PhaseState,
    pub diag: DiagnosticSample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub params: SolitonParams,
    /// Samples ordered by increasing `s`.
    pub samples: Vec<TrajectorySample>,
    pub stats: StepStats,
    pub tol: f64,
    /// How the run ended in the direction of increasing `s`.
    pub termination: Termination,
    /// For bidirectional runs, how the backward half ended.
    pub backward_termination: Option<Termination>,
}

// Gauss-Legendre nodes and weights on [0, 1].
const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 4.0 / 9.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Position on the cubic Hermite arc between two samples.
fn hermite_position(a: &PhaseState, b: &PhaseState, h: f64, x: f64) -> DVector<f64> {
    let (h00, h10, h01, h11) = (
        2.0 * x.powi(3) - 3.0 * x * x + 1.0,
        x.powi(3) - 2.0 * x * x + x,
        -2.0 * x.powi(3) + 3.0 * x * x,
        x.powi(3) - x * x,
    );
    &a.c * h00 + &a.t * (h10 * h) + &b.c * h01 + &b.t * (h11 * h)
}

/// `int ds/|a|` over one step. Interior nodes keep the rule finite where the
/// drive vanishes at an endpoint.
fn sigma_increment(params: &SolitonParams, prev: &TrajectorySample, next: &TrajectorySample) -> f64 {
    let ds = next.s - prev.s;
    let floor = A_NORM_FLOOR * (1.0 + params.shifted_norm() * prev.state.c.norm().max(next.state.c.norm()));
    GAUSS3
        .iter()
        .map(|&(x, w)| {
            let c = hermite_position(&prev.state, &next.state, ds, x);
            w / params.drive(&c).norm().max(floor)
        })
        .sum::<f64>()
        * ds
}

fn varsigma_increment(prev: &TrajectorySample, next: &TrajectorySample) -> f64 {
    let w = |x: &TrajectorySample| (1.0 + x.state.c.norm_squared()).sqrt();
    0.5 * (next.s - prev.s) * (w(prev) + w(next))
}

fn make_sample(params: &SolitonParams, s: f64, state: PhaseState) -> TrajectorySample {
    let diag = diagnostics::sample(params, &state);
    TrajectorySample { s, sigma: 0.0, varsigma: 0.0, state, diag }
}

/// Cubic Hermite interpolation between two samples of the same trajectory.
pub fn hermite(params: &SolitonParams, a: &TrajectorySample, b: &TrajectorySample, s: f64) -> PhaseState {
    let h = b.s - a.s;
    let x = (s - a.s) / h;
    let (h00, h10, h01, h11) = (
        2.0 * x.powi(3) - 3.0 * x * x + 1.0,
        x.powi(3) - 2.0 * x * x + x,
        -2.0 * x.powi(3) + 3.0 * x * x,
        x.powi(3) - x * x,
    );
    let c = &a.state.c * h00 + &a.state.t * (h10 * h) + &b.state.c * h01 + &b.state.t * (h11 * h);
    let (_, ta) = vector_field(params, &a.state);
    let (_, tb) = vector_field(params, &b.state);
    let t = &a.state.t * h00 + ta * (h10 * h) + &b.state.t * h01 + tb * (h11 * h);
    let norm = t.norm();
    PhaseState { c, t: t / norm }
}

fn convert(err: OdeError, last: &TrajectorySample) -> Error {
    match err {
        OdeError::StepUnderflow { t, h, .. } => Error::StepUnderflow { s: t, h, last: Box::new(last.clone()) },
        OdeError::NonFinite { t, .. } => Error::NonFinite { s: t, last: Box::new(last.clone()) },
        OdeError::TooManySteps { t, .. } => Error::StepUnderflow { s: t, h: 0.0, last: Box::new(last.clone()) },
    }
}

/// Integrate from `s_span.0` to `s_span.1` (backwards if `s_span.1 < s_span.0`).
pub fn integrate(
    params: &SolitonParams,
    state0: &PhaseState,
    s_span: (f64, f64),
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    integrate_with_events(params, state0, s_span, opts, &[])
}

pub fn integrate_with_events(
    params: &SolitonParams,
    state0: &PhaseState,
    s_span: (f64, f64),
    opts: &IntegrateOptions,
    events: &[Event<'_>],
) -> Result<Trajectory> {
    let n = params.dim();
    if state0.dim() != n {
        return Err(Error::Dimension { expected: n, got: state0.dim() });
    }
    if (state0.t.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState("initial tangent is not a unit vector".into()));
    }
    if !s_span.0.is_finite() || !s_span.1.is_finite() {
        return Err(Error::Domain("integration span must be finite".into()));
    }
    let (s0, s1) = s_span;
    let backward = s1 < s0;
    let first = make_sample(params, s0, state0.clone());
    let event_values = |smp: &TrajectorySample| -> Vec<f64> {
        events.iter().map(|e| (e.g)(&smp.state, &smp.diag)).collect()
    };
    let mut g_prev = event_values(&first);
    let mut samples = vec![first];
    let mut termination = Termination::Completed;
    let flow = Flow { params };

    let result = ode::integrate(&flow, s0, &state0.pack(), s1, &opts.step_control(), |s, y| {
        let prev = samples.last().unwrap();
        let mut next = make_sample(params, s, PhaseState::unpack(y));
        next.sigma = prev.sigma + sigma_increment(params, prev, &next);
        next.varsigma = prev.varsigma + varsigma_increment(prev, &next);

        let mut stop: Option<(f64, Termination)> = None;
        let mut consider = |frac: f64, term: Termination| {
            if stop.as_ref().is_none_or(|(f, _)| frac < *f) {
                stop = Some((frac, term));
            }
        };
        let g_next = event_values(&next);
        for (k, e) in events.iter().enumerate() {
            if g_prev[k] >= 0.0 && g_next[k] < 0.0 {
                let frac = g_prev[k] / (g_prev[k] - g_next[k]);
                consider(frac, Termination::Event { name: e.name.clone(), s: 0.0 });
            }
        }
        let (c0, c1) = (prev.state.c.norm(), next.state.c.norm());
        if c1 >= opts.norm_cap && c0 < opts.norm_cap {
            consider((opts.norm_cap - c0) / (c1 - c0), Termination::NormCap { s: 0.0 });
        }
        if let Some(limit) = opts.sigma_max {
            let (a, b) = (prev.sigma.abs(), next.sigma.abs());
            if b >= limit && a < limit {
                consider((limit - a) / (b - a), Termination::SigmaLimit { s: 0.0 });
            }
        }
        g_prev = g_next;
        match stop {
            None => {
                samples.push(next);
                Control::Continue
            }
            Some((frac, mut term)) => {
                let s_stop = prev.s + frac * (next.s - prev.s);
                let state = hermite(params, prev, &next, s_stop);
                let mut smp = make_sample(params, s_stop, state);
                smp.sigma = prev.sigma + sigma_increment(params, prev, &smp);
                smp.varsigma = prev.varsigma + varsigma_increment(prev, &smp);
                match &mut term {
                    Termination::Event { s, .. } | Termination::NormCap { s } | Termination::SigmaLimit { s } => {
                        *s = s_stop
                    }
                    Termination::Completed => {}
                }
                termination = term;
                if frac > 0.0 {
                    samples.push(smp);
                }
                Control::Stop
            }
        }
    });
    let stats = match result {
        Ok(stats) => stats,
        Err(e) => return Err(convert(e, samples.last().unwrap())),
    };
    if backward {
        samples.reverse();
    }
    Ok(Trajectory {
        params: params.clone(),
        samples,
        stats,
        tol: opts.tol,
        termination,
        backward_termination: None,
    })
}

/// Integrate both ways from `state0` (placed at `s = 0`) and merge.
pub fn integrate_bidirectional(
    params: &SolitonParams,
    state0: &PhaseState,
    s_back: f64,
    s_fwd: f64,
    opts: &IntegrateOptions,
    events: &[Event<'_>],
) -> Result<Trajectory> {
    let back = integrate_with_events(params, state0, (0.0, -s_back.abs()), opts, events)?;
    let fwd = integrate_with_events(params, state0, (0.0, s_fwd.abs()), opts, events)?;
    let mut samples = back.samples;
    samples.pop();
    samples.extend(fwd.samples);
    let stats = StepStats {
        accepted: back.stats.accepted + fwd.stats.accepted,
        rejected: back.stats.rejected + fwd.stats.rejected,
        evaluations: back.stats.evaluations + fwd.stats.evaluations,
        max_projection: back.stats.max_projection.max(fwd.stats.max_projection),
    };
    Ok(Trajectory {
        params: params.clone(),
        samples,
        stats,
        tol: opts.tol,
        termination: fwd.termination,
        backward_termination: Some(back.termination),
    })
}

/// The flow reparametrized by `sigma` (`ds = |a| dsigma`), with `s` and
/// `varsigma` as quadrature components.
struct SigmaFlow<'a> {
    params: &'a SolitonParams,
}

impl System for SigmaFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.params.dim() + 2
    }

    fn eval(&self, _sigma: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.params.dim();
        let c = DVector::from_column_slice(&y[..n]);
        let t = DVector::from_column_slice(&y[n..2 * n]);
        let a = self.params.drive(&c);
        let na = a.norm();
        // the last term vanishes on |T| = 1 and damps drift off the sphere,
        // which the implicit solver would otherwise see as an undamped mode
        let dt = tangent_projection(&t, &a) * na + &t * (0.5 * na * na * (1.0 - t.norm_squared()));
        dy[..n].copy_from_slice((&t * na).as_slice());
        dy[n..2 * n].copy_from_slice(dt.as_slice());
        dy[2 * n] = na;
        dy[2 * n + 1] = na * (1.0 + c.norm_squared()).sqrt();
    }

    fn jacobian(&self, _sigma: f64, y: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let n = self.params.dim();
        let c = DVector::from_column_slice(&y[..n]);
        let t = DVector::from_column_slice(&y[n..2 * n]);
        let b = self.params.spectrum().matrix() + DMatrix::identity(n, n) * self.params.alpha();
        let a = self.params.drive(&c);
        let na = a.norm();
        if na == 0.0 {
            return false;
        }
        let dna = (b.transpose() * &a / na).transpose();
        let tt = t.norm_squared();
        let k = a.dot(&t) / tt;
        let g = &a - &t * k;
        let dk_dt = (&a / tt - &t * (2.0 * a.dot(&t) / (tt * tt))).transpose();
        let dg_dc = &b - &t * (t.transpose() * &b) / tt;
        let dg_dt = DMatrix::identity(n, n) * (-k) - &t * dk_dt;
        let root = (1.0 + c.norm_squared()).sqrt();
        let gap = 1.0 - tt;
        let stab_c = &t * (&dna * (na * gap));
        let stab_t = DMatrix::identity(n, n) * (0.5 * na * na * gap) - &t * t.transpose() * (na * na);
        jac.fill(0.0);
        jac.view_mut((0, 0), (n, n)).copy_from(&(&t * &dna));
        jac.view_mut((0, n), (n, n)).copy_from(&(DMatrix::identity(n, n) * na));
        jac.view_mut((n, 0), (n, n)).copy_from(&(&g * &dna + dg_dc * na + stab_c));
        jac.view_mut((n, n), (n, n)).copy_from(&(dg_dt * na + stab_t));
        jac.view_mut((2 * n, 0), (1, n)).copy_from(&dna);
        jac.view_mut((2 * n + 1, 0), (1, n)).copy_from(&(&dna * root + (&c * (na / root)).transpose()));
        true
    }

    fn project(&self, y: &mut [f64]) -> f64 {
        let n = self.params.dim();
        let t = &mut y[n..2 * n];
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        t.iter_mut().for_each(|x| *x /= norm);
        (norm - 1.0).abs()
    }
}

/// Integrate in the spiral parameter `sigma` over `sigma_span` with the stiff
/// solver. Far from the origin `T` relaxes towards `a_hat` at rate `|a|`, so an
/// explicit method in `s` needs `O(|a|^2)` steps per unit `sigma`; here the
/// cost stays bounded. `opts.sample_spacing` is read as a `sigma` spacing and
/// `s`, `varsigma` start at 0. The drive vector must not vanish on the orbit.
pub fn integrate_in_sigma(
    params: &SolitonParams,
    state0: &PhaseState,
    sigma_span: (f64, f64),
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let n = params.dim();
    if state0.dim() != n {
        return Err(Error::Dimension { expected: n, got: state0.dim() });
    }
    if params.drive(&state0.c).norm() < A_NORM_FLOOR {
        return Err(Error::Domain("sigma parametrization needs a nonzero drive vector".into()));
    }
    let sys = SigmaFlow { params };
    let y0: Vec<f64> = state0.pack().into_iter().chain([0.0, 0.0]).collect();
    let mk = |sigma: f64, y: &[f64]| {
        let state = PhaseState::unpack(&y[..2 * n]);
        let mut smp = make_sample(params, y[2 * n], state);
        smp.sigma = sigma;
        smp.varsigma = y[2 * n + 1];
        smp
    };
    let mut samples = vec![mk(sigma_span.0, &y0)];
    let mut termination = Termination::Completed;
    let result = ode::integrate_stiff(&sys, sigma_span.0, &y0, sigma_span.1, &opts.step_control(), |sigma, y| {
        let smp = mk(sigma, y);
        let capped = smp.state.c.norm() >= opts.norm_cap;
        if capped {
            termination = Termination::NormCap { s: smp.s };
        }
        samples.push(smp);
        if capped {
            Control::Stop
        } else {
            Control::Continue
        }
    });
    if let Err(e) = result {
        return Err(convert(e, samples.last().unwrap()));
    }
    let stats = result.unwrap();
    if sigma_span.1 < sigma_span.0 {
        samples.reverse();
    }
    Ok(Trajectory {
        params: params.clone(),
        samples,
        stats,
        tol: opts.tol,
        termination,
        backward_termination: None,
    })
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.samples[0].s, self.samples[self.samples.len() - 1].s)
    }

    pub fn positions(&self) -> Vec<DVector<f64>> {
        self.samples.iter().map(|x| x.state.c.clone()).collect()
    }

    /// State at arc length `s` by cubic Hermite interpolation.
    pub fn state_at(&self, s: f64) -> Option<PhaseState> {
        let (lo, hi) = self.s_range();
        if s < lo || s > hi {
            return None;
        }
        let k = self.samples.partition_point(|x| x.s <= s);
        if k == 0 {
            return Some(self.samples[0].state.clone());
        }
        if k == self.samples.len() {
            return Some(self.samples[k - 1].state.clone());
        }
        Some(hermite(&self.params, &self.samples[k - 1], &self.samples[k], s))
    }

    /// The uniform spacing of the samples, if they are uniform to `rel`.
    pub fn uniform_spacing(&self, rel: f64) -> Option<f64> {
        if self.samples.len() < 3 {
            return None;
        }
        let (lo, hi) = self.s_range();
        let h = (hi - lo) / (self.samples.len() - 1) as f64;
        let ok = self
            .samples
            .windows(2)
            .all(|w| ((w[1].s - w[0].s) - h).abs() <= rel * h);
        ok.then_some(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skewlin::skew_from_planes;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn rotating(n: usize, alpha: f64, omega: f64) -> SolitonParams {
        let m = skew_from_planes(n, &[(omega, 0, 1)]).unwrap();
        SolitonParams::from_matrix(alpha, &m, DVector::zeros(n)).unwrap()
    }

    #[test]
    fn vector_field_example() {
        let p = rotating(2, -1.0, 1.0);
        let st = PhaseState::new(dv(&[1.0, 0.0]), dv(&[0.0, 1.0])).unwrap();
        let (dc, dt) = vector_field(&p, &st);
        assert_eq!(dc, dv(&[0.0, 1.0]));
        assert!((dt - dv(&[-1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn parallel_drive_gives_zero_turning() {
        let p = rotating(3, 0.5, 1.0);
        let c = dv(&[0.0, 0.0, 2.0]);
        let a = p.drive(&c);
        let st = PhaseState::normalized(c, a).unwrap();
        assert!(vector_field(&p, &st).1.norm() < 1e-15);
    }

    #[test]
    fn turning_is_orthogonal_to_tangent() {
        let p = rotating(4, -0.7, 1.3);
        let st = PhaseState::normalized(dv(&[0.3, -1.2, 0.8, 2.0]), dv(&[1.0, 2.0, -0.5, 0.1])).unwrap();
        let (_, dt) = vector_field(&p, &st);
        assert!(dt.dot(&st.t).abs() < 1e-14);
    }

    #[test]
    fn parameters_validated() {
        let m = skew_from_planes(3, &[(1.0, 0, 1)]).unwrap();
        assert!(SolitonParams::from_matrix(0.0, &m, dv(&[1.0, 0.0, 0.0])).is_err());
        assert!(SolitonParams::from_matrix(1.0, &m, dv(&[0.0, 0.0, 1.0])).is_err());
        assert!(SolitonParams::from_matrix(0.0, &m, dv(&[0.0, 0.0, 1.0])).is_ok());
    }

    #[test]
    fn line_through_origin_stays_straight() {
        let p = rotating(3, -0.8, 1.0);
        let st = PhaseState::new(dv(&[0.0, 0.0, -1.0]), dv(&[0.0, 0.0, 1.0])).unwrap();
        let tr = integrate(&p, &st, (0.0, 10.0), &IntegrateOptions::default()).unwrap();
        for x in &tr.samples {
            assert!(x.state.c[0].abs() < 1e-14 && x.state.c[1].abs() < 1e-14);
            assert!((x.state.c[2] - (x.s - 1.0)).abs() < 1e-9);
            assert!((&x.state.t - dv(&[0.0, 0.0, 1.0])).norm() < 1e-14);
        }
    }

    #[test]
    fn circle_is_invariant_and_tangent_drift_is_small() {
        let p = rotating(2, -1.0, 1.0);
        let st = PhaseState::new(dv(&[1.0, 0.0]), dv(&[0.0, 1.0])).unwrap();
        let tr = integrate(&p, &st, (0.0, 100.0), &IntegrateOptions::default()).unwrap();
        let dev = tr.samples.iter().map(|x| (x.state.c.norm() - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6, "{dev}");
        assert!(tr.stats.max_projection < 1e-9);
        assert!(tr.samples.windows(2).all(|w| w[1].s > w[0].s && w[1].sigma > w[0].sigma));
    }

    #[test]
    fn backward_run_is_sorted() {
        let p = rotating(2, -1.0, 1.0);
        let st = PhaseState::new(dv(&[2.0, 0.0]), dv(&[0.0, 1.0])).unwrap();
        let tr = integrate(&p, &st, (0.0, -3.0), &IntegrateOptions::default()).unwrap();
        assert!(tr.samples.windows(2).all(|w| w[1].s > w[0].s));
        assert_eq!(tr.samples.last().unwrap().s, 0.0);
        assert!(tr.samples[0].sigma < 0.0);
    }

    #[test]
    fn norm_cap_event() {
        let p = rotating(2, 1.0, 1.0);
        let st = PhaseState::new(dv(&[1.0, 0.0]), dv(&[1.0, 0.0])).unwrap();
        let opts = IntegrateOptions { norm_cap: 10.0, ..Default::default() };
        let tr = integrate(&p, &st, (0.0, 1e3), &opts).unwrap();
        assert!(matches!(tr.termination, Termination::NormCap { .. }));
        let last = tr.samples.last().unwrap();
        assert!((last.state.c.norm() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn custom_event_stops() {
        let p = rotating(2, -1.0, 1.0);
        let st = PhaseState::new(dv(&[1.0, 0.0]), dv(&[0.0, 1.0])).unwrap();
        let ev = Event::new("upper", |st: &PhaseState, _: &DiagnosticSample| 0.5 - st.c[1]);
        let tr = integrate_with_events(&p, &st, (0.0, 10.0), &IntegrateOptions::default(), &[ev]).unwrap();
        match tr.termination {
            Termination::Event { s, .. } => assert!((s - (0.5f64).asin()).abs() < 1e-4),
            ref t => panic!("{t:?}"),
        }
    }

    #[test]
    fn reversal_traces_same_points() {
        // integrating (C, -T) forward retraces the backward orbit of (C, T)
        let m = skew_from_planes(3, &[(1.0, 0, 1)]).unwrap();
        let p = SolitonParams::from_matrix(0.0, &m, dv(&[0.0, 0.0, 0.6])).unwrap();
        let st = PhaseState::normalized(dv(&[0.5, -0.2, 0.1]), dv(&[0.3, 1.0, 0.4])).unwrap();
        let opts = IntegrateOptions::default().with_spacing(1e-3);
        let back = integrate(&p, &st, (0.0, -6.0), &opts).unwrap();
        let rev = integrate(&p, &st.reversed(), (0.0, 6.0), &opts).unwrap();
        let d = crate::geometry::hausdorff(&back.positions(), &rev.positions());
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn sigma_parametrization_matches_arc_length_flow() {
        let p = rotating(3, -0.6, 1.0);
        let st = PhaseState::normalized(dv(&[2.0, 1.0, 0.5]), dv(&[0.1, 1.0, 0.2])).unwrap();
        let sig = integrate_in_sigma(&p, &st, (0.0, 1.5), &IntegrateOptions { tol: 1e-12, ..Default::default() }).unwrap();
        let s_end = sig.samples.last().unwrap().s;
        let std = integrate(&p, &st, (0.0, s_end), &IntegrateOptions { tol: 1e-12, ..Default::default() }).unwrap();
        assert!((std.samples.last().unwrap().sigma - 1.5).abs() < 1e-8);
        for x in &sig.samples {
            let y = std.state_at(x.s).unwrap();
            assert!((&x.state.c - y.c).norm() < 1e-7);
            assert!((&x.state.t - y.t).norm() < 1e-7);
        }
    }

    #[test]
    fn sigma_flow_reaches_far_field_cheaply() {
        let p = rotating(3, 1.0, 1.0);
        let c = dv(&[3.0, 0.0, 1.0]);
        let st = PhaseState::normalized(c.clone(), p.drive(&c)).unwrap();
        let opts = IntegrateOptions { norm_cap: 1e12, ..Default::default() };
        let tr = integrate_in_sigma(&p, &st, (0.0, 15.0), &opts).unwrap();
        assert!(tr.termination.is_completed());
        assert!(tr.samples.last().unwrap().state.c.norm() > 1e6);
        assert!(tr.stats.accepted < 5000, "{}", tr.stats.accepted);
    }

    #[test]
    fn sigma_flow_jacobian_matches_differences() {
        use crate::ode::System;
        let p = rotating(3, -0.7, 1.3);
        let sys = SigmaFlow { params: &p };
        let y = [0.4, -1.1, 2.0, 0.6, 0.0, 0.8, 3.0, 1.0];
        let mut jac = DMatrix::zeros(8, 8);
        assert!(sys.jacobian(0.0, &y, &mut jac));
        let (mut fp, mut fm) = ([0.0; 8], [0.0; 8]);
        for j in 0..8 {
            let (mut yp, mut ym) = (y, y);
            yp[j] += 1e-6;
            ym[j] -= 1e-6;
            sys.eval(0.0, &yp, &mut fp);
            sys.eval(0.0, &ym, &mut fm);
            for i in 0..8 {
                let fd = (fp[i] - fm[i]) / 2e-6;
                assert!((fd - jac[(i, j)]).abs() < 1e-6 * (1.0 + fd.abs()), "({i},{j}) {fd} {}", jac[(i, j)]);
            }
        }
    }
}
