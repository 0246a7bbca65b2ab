//! Far-field behaviour: the low-curvature regions `R+(K)`, `R-(K)`,
//! approximate Grim Reaper arcs, generalized logarithmic spirals and the
//! shooting method for trapped shrinking-rotating ends.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{self, DiagnosticSample};
use crate::error::{Error, Result};
use crate::flow::{
    integrate_in_sigma, integrate_with_events, Event, IntegrateOptions, PhaseState, SolitonParams, Termination,
    Trajectory, TrajectorySample,
};
use crate::geometry::{hausdorff, linear_fit};

/// Threshold `K` of the regions `R+-(K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionSpec {
    k: f64,
}

impl RegionSpec {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidParams(format!("region threshold K must be positive, got {k}")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `K = 4 max(|alpha + A|^2, 1)`. Above this the boundary `nu = K` of
    /// `R+(K)` points inwards for `alpha > 0` (checked by the property tests).
    pub fn calibrated(params: &SolitonParams) -> Self {
        Self { k: 4.0 * params.shifted_norm().powi(2).max(1.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    Plus,
    Minus,
    Neither,
}

impl Region {
    /// The region after reversing the orientation `(C, T) -> (C, -T)`.
    pub fn reversed(self) -> Self {
        match self {
            Region::Plus => Region::Minus,
            Region::Minus => Region::Plus,
            Region::Neither => Region::Neither,
        }
    }
}

pub fn region_of(diag: &DiagnosticSample, spec: &RegionSpec) -> Region {
    match (diag.mu, diag.nu) {
        (Some(mu), Some(nu)) if diag.a_norm >= spec.k && nu <= spec.k => {
            if mu > 0.0 {
                Region::Plus
            } else if mu < 0.0 {
                Region::Minus
            } else {
                Region::Neither
            }
        }
        _ => Region::Neither,
    }
}

pub fn region_membership(params: &SolitonParams, state: &PhaseState, spec: &RegionSpec) -> Region {
    region_of(&diagnostics::sample(params, state), spec)
}

/// Signed margin to the boundary of `target`: positive inside, negative outside.
fn region_margin(diag: &DiagnosticSample, spec: &RegionSpec, target: Region) -> f64 {
    let (Some(mu), Some(nu)) = (diag.mu, diag.nu) else {
        return -1.0;
    };
    let side = match target {
        Region::Plus => mu,
        Region::Minus => -mu,
        Region::Neither => return -1.0,
    };
    (spec.k - nu).min(diag.a_norm - spec.k).min(side)
}

/// `d|a|/ds = <a_hat, (alpha + A) T>`.
pub fn a_norm_derivative(params: &SolitonParams, state: &PhaseState) -> Option<f64> {
    let a = params.drive(&state.c);
    let na = a.norm();
    (na >= diagnostics::A_NORM_FLOOR).then(|| a.dot(&params.shifted_apply(&state.t)) / na)
}

/// Exact `dnu/ds` along the flow, from `nu = |a|^4 (1 - mu^2)`.
pub fn nu_derivative(params: &SolitonParams, state: &PhaseState) -> Option<f64> {
    let a = params.drive(&state.c);
    let na = a.norm();
    if na < diagnostics::A_NORM_FLOOR {
        return None;
    }
    let t = &state.t;
    let hat = &a / na;
    let a_s = params.shifted_apply(t);
    let na_s = hat.dot(&a_s);
    let hat_s = (&a_s - &hat * na_s) / na;
    let mu = hat.dot(t);
    let sin2 = (t - &hat * mu).norm_squared();
    // T' = a + lambda T, so <a_hat, T'> = |a| (1 - mu^2)
    let mu_s = hat_s.dot(t) + na * sin2;
    Some(4.0 * na.powi(3) * na_s * sin2 - 2.0 * na.powi(4) * mu * mu_s)
}

/// `(|alpha| |C|, |(alpha + A) C|, |alpha + A| |C|)`; the middle value lies
/// between the outer two.
pub fn norm_equivalence(params: &SolitonParams, c: &DVector<f64>) -> (f64, f64, f64) {
    let n = c.norm();
    (params.alpha().abs() * n, params.shifted_apply(c).norm(), params.shifted_norm() * n)
}

/// Default for the unquantified constants of the arc estimates: `4 |alpha + A|`.
pub fn default_threshold(params: &SolitonParams) -> f64 {
    4.0 * params.shifted_norm()
}

/// The translating soliton with velocity `a` through `(C0, T0)`: a Grim
/// Reaper of width `pi/|a|` in the plane of `a` and `T0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrimReaperCurve {
    pub origin: DVector<f64>,
    pub tangent: DVector<f64>,
    pub a_hat: DVector<f64>,
    pub speed: f64,
    mu0: f64,
}

impl GrimReaperCurve {
    pub fn new(origin: DVector<f64>, tangent: DVector<f64>, a: &DVector<f64>) -> Option<Self> {
        let speed = a.norm();
        if speed < diagnostics::A_NORM_FLOOR {
            return None;
        }
        let a_hat = a / speed;
        let mu0 = a_hat.dot(&tangent).clamp(-1.0, 1.0);
        Some(Self { origin, tangent, a_hat, speed, mu0 })
    }

    /// Point at arc length `s` from the origin.
    pub fn point(&self, s: f64) -> DVector<f64> {
        let perp = &self.tangent - &self.a_hat * self.mu0;
        let pn = perp.norm();
        if pn < 1e-15 {
            return &self.origin + &self.tangent * s;
        }
        let e = perp / pn;
        let k = self.speed;
        let s0 = self.mu0.atanh() / k;
        let gd = |x: f64| x.sinh().atan();
        let lc = |x: f64| x.abs() + (-2.0 * x.abs()).exp().ln_1p() - std::f64::consts::LN_2;
        let (x1, x0) = (k * (s + s0), k * s0);
        &self.origin + (e * (gd(x1) - gd(x0)) + &self.a_hat * (lc(x1) - lc(x0))) / k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrArc {
    pub start: usize,
    pub end: usize,
    pub s_start: f64,
    pub s_end: f64,
    pub length: f64,
    /// Sample of largest curvature, where the model Grim Reaper is anchored.
    pub anchor: usize,
    pub anchor_s: f64,
    /// `A0 = |a|` at the anchor.
    pub a_norm: f64,
    /// `(C / A0) ln A0`.
    pub bound: f64,
    pub mu_start: f64,
    pub mu_end: f64,
    /// Hausdorff distance between the arc and the anchored Grim Reaper.
    pub fit_error: f64,
}

/// Maximal arcs where `|a| >= c` and `|mu| <= 1 - c |a|^-4`.
pub fn detect_gr_arcs(traj: &Trajectory, threshold_c: f64) -> Vec<GrArc> {
    let c = threshold_c;
    let inside = |x: &TrajectorySample| match x.diag.mu {
        Some(mu) => x.diag.a_norm >= c && mu.abs() <= 1.0 - c / x.diag.a_norm.powi(4),
        None => false,
    };
    let flags: Vec<bool> = traj.samples.iter().map(inside).collect();
    let mut arcs = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flags.len() && flags[i] {
            i += 1;
        }
        let end = i - 1;
        if end > start {
            arcs.push(describe_arc(traj, start, end, c));
        }
    }
    arcs
}

fn describe_arc(traj: &Trajectory, start: usize, end: usize, c: f64) -> GrArc {
    let run = &traj.samples[start..=end];
    let anchor = start
        + run
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.diag.curvature.total_cmp(&b.1.diag.curvature))
            .map(|(k, _)| k)
            .unwrap();
    let anc = &traj.samples[anchor];
    let a0 = anc.diag.a_norm;
    let fit_error = match GrimReaperCurve::new(anc.state.c.clone(), anc.state.t.clone(), &anc.diag.a) {
        Some(gr) => {
            let arc: Vec<DVector<f64>> = run.iter().map(|x| x.state.c.clone()).collect();
            // same parameter values on both sides, so chord error cancels
            let model: Vec<DVector<f64>> = run.iter().map(|x| gr.point(x.s - anc.s)).collect();
            hausdorff(&arc, &model)
        }
        None => f64::NAN,
    };
    GrArc {
        start,
        end,
        s_start: run[0].s,
        s_end: run[run.len() - 1].s,
        length: run[run.len() - 1].s - run[0].s,
        anchor,
        anchor_s: anc.s,
        a_norm: a0,
        bound: c / a0 * a0.ln(),
        mu_start: run[0].diag.mu.unwrap_or(f64::NAN),
        mu_end: run[run.len() - 1].diag.mu.unwrap_or(f64::NAN),
        fit_error,
    }
}

/// Which asymptotic form is fitted: `C ~ e^{sigma (alpha + A)} Gamma` in
/// `R+` or `C ~ e^{-sigma (alpha + A)} Gamma` in `R-`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpiralSign {
    Forward,
    Reversed,
}

impl SpiralSign {
    pub fn value(self) -> f64 {
        match self {
            SpiralSign::Forward => 1.0,
            SpiralSign::Reversed => -1.0,
        }
    }

    fn region(self) -> Region {
        match self {
            SpiralSign::Forward => Region::Plus,
            SpiralSign::Reversed => Region::Minus,
        }
    }
}

/// Minimum number of residual samples for the decay-rate regression.
pub const MIN_FIT_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpiralFit {
    pub gamma: DVector<f64>,
    pub sign: SpiralSign,
    /// `(sigma, |C(sigma) - e^{+-sigma (alpha + A)} Gamma|)`.
    pub residuals: Vec<(f64, f64)>,
    /// `-d ln(residual)/d sigma` over the samples above the noise floor.
    pub decay_rate: Option<f64>,
    pub fit_samples: usize,
    /// `(sigma, |R(sigma) - R(sigma - lag)|)` for the Richardson-accelerated
    /// estimates `R`; shrinking values mean the estimates converge.
    pub cauchy: Vec<(f64, f64)>,
    /// Relative noise level below which residuals are not fitted.
    pub noise: f64,
}

impl SpiralFit {
    /// Whether the Cauchy differences shrink from the first to the second
    /// half of the tail (medians compared).
    pub fn cauchy_converging(&self) -> bool {
        let d: Vec<f64> = self.cauchy.iter().map(|x| x.1).collect();
        if d.len() < 4 {
            return false;
        }
        let median = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let (a, b) = d.split_at(d.len() / 2);
        median(b) < median(a)
    }
}

/// Fit `C(sigma) ~ e^{sign sigma (alpha + A)} Gamma` to samples `(sigma, C)`
/// ordered by `sigma`. Residuals below `noise |C|` are excluded from the rate fit.
pub fn fit_spiral(params: &SolitonParams, samples: &[(f64, DVector<f64>)], sign: SpiralSign, noise: f64) -> Result<SpiralFit> {
    let alpha = params.alpha();
    if alpha == 0.0 {
        return Err(Error::InvalidParams("spiral asymptotics need alpha != 0".into()));
    }
    if samples.len() < 3 {
        return Err(Error::InvalidParams("spiral fit needs at least three samples".into()));
    }
    let spec = params.spectrum();
    let sg = sign.value();
    let pull_back = |sigma: f64, c: &DVector<f64>| spec.dilate_rotate_exp(alpha, -sg * sigma) * c;
    let raw: Vec<DVector<f64>> = samples.iter().map(|(sigma, c)| pull_back(*sigma, c)).collect();
    // Gamma(sigma) = Gamma + O(e^{-2|alpha| sigma}); pair samples a fixed lag apart
    let lag = 0.5 / alpha.abs();
    let mut rich: Vec<(usize, DVector<f64>)> = Vec::new();
    let mut j = 0;
    for k in 0..samples.len() {
        while j + 1 < k && samples[k].0 - samples[j + 1].0 >= lag {
            j += 1;
        }
        let dsig = samples[k].0 - samples[j].0;
        if dsig < lag {
            continue;
        }
        let q = (-2.0 * alpha.abs() * dsig).exp();
        rich.push((k, (&raw[k] - &raw[j] * q) / (1.0 - q)));
    }
    let mut cauchy = Vec::new();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut m = 0;
    for (idx, (k, r)) in rich.iter().enumerate() {
        while m + 1 < idx && samples[*k].0 - samples[rich[m + 1].0].0 >= lag {
            m += 1;
        }
        if idx == 0 || samples[*k].0 - samples[rich[m].0].0 < lag {
            continue;
        }
        let d = (r - &rich[m].1).norm();
        cauchy.push((samples[*k].0, d));
        if best.as_ref().is_none_or(|(bd, _)| d <= *bd) {
            best = Some((d, r.clone()));
        }
    }
    let gamma = match best {
        Some((_, g)) => g,
        None => rich.last().map(|x| x.1.clone()).unwrap_or_else(|| raw[raw.len() - 1].clone()),
    };
    let residuals: Vec<(f64, f64)> = samples
        .iter()
        .map(|(sigma, c)| (*sigma, (c - spec.dilate_rotate_exp(alpha, sg * sigma) * &gamma).norm()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = residuals
        .iter()
        .zip(samples)
        .filter(|((_, r), (_, c))| *r > noise * c.norm() && *r > 0.0)
        .map(|((sigma, r), _)| (*sigma, r.ln()))
        .unzip();
    let fit_samples = xs.len();
    let decay_rate = if fit_samples >= MIN_FIT_SAMPLES {
        linear_fit(&xs, &ys).map(|(_, slope)| -slope)
    } else {
        None
    };
    Ok(SpiralFit { gamma, sign, residuals, decay_rate, fit_samples, cauchy, noise })
}

/// Spiral fit of a trajectory tail that must lie in `R+(K)` (`Forward`,
/// `alpha > 0`) or `R-(K)` (`Reversed`, `alpha < 0`).
pub fn spiral_fit(traj: &Trajectory, spec: &RegionSpec, sign: SpiralSign) -> Result<SpiralFit> {
    let alpha = traj.params.alpha();
    let expected = if alpha > 0.0 { SpiralSign::Forward } else { SpiralSign::Reversed };
    if alpha == 0.0 || sign != expected {
        return Err(Error::InvalidParams(format!(
            "a {sign:?} spiral fit needs alpha {} 0",
            if sign == SpiralSign::Forward { ">" } else { "<" }
        )));
    }
    if let Some(index) = traj.samples.iter().position(|x| region_of(&x.diag, spec) != sign.region()) {
        return Err(Error::RegionExit { index, sigma: traj.samples[index].sigma });
    }
    let pts: Vec<(f64, DVector<f64>)> = traj.samples.iter().map(|x| (x.sigma, x.state.c.clone())).collect();
    fit_spiral(&traj.params, &pts, sign, 1e3 * traj.tol.max(f64::EPSILON))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ShootingMethod {
    /// Integrate the time-reversed orbit inwards from far away, where it is
    /// stable, and read off the trapped direction at `C0`.
    ReverseFlow,
    /// Maximize the forward exit time over the cap around `-a_hat(C0)`.
    ForwardCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootingOptions {
    pub method: ShootingMethod,
    /// Arc length the orbit must stay in `R-(K)`.
    pub horizon: f64,
    /// Scales the cap half-angle `asin(sqrt(K)/|a0|^2)`.
    pub cap_factor: f64,
    pub tol: f64,
    /// Also run the forward cap search and record its candidates.
    pub forward_search: bool,
    /// Minimum spiral-parameter length of the reverse-flow orbit.
    pub min_sigma_span: f64,
    pub max_iterations: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            method: ShootingMethod::ReverseFlow,
            horizon: 50.0,
            cap_factor: 1.0,
            tol: 1e-12,
            forward_search: true,
            min_sigma_span: 3.0,
            max_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub direction: DVector<f64>,
    /// Arc length until the forward orbit leaves `R-(K)` (the horizon if it never does).
    pub exit_span: f64,
    pub source: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootingResult {
    pub c0: DVector<f64>,
    pub t0: DVector<f64>,
    /// Arc length over which the returned orbit is verified to stay in `R-(K)`.
    pub span: f64,
    pub reached_horizon: bool,
    pub method: ShootingMethod,
    /// Cap half-angle and the chord `|T0 + a_hat(C0)|` of the result.
    pub cap: f64,
    pub cap_offset: f64,
    /// Forward re-integration from `(C0, T0)`; short because the trapped
    /// orbit is unstable forward in `s`.
    pub forward_exit_span: f64,
    pub candidates: Vec<Candidate>,
    /// Reverse-flow fixed-point history `|X - C0|`.
    pub hit_residuals: Vec<f64>,
    /// The trapped orbit oriented forwards from `C0` (reverse flow only).
    pub orbit: Option<Trajectory>,
}

/// Arc length after which the forward orbit leaves `target`, with the
/// unstable direction `T - mu a_hat` at exit. Returns `horizon` when it stays.
pub fn forward_exit(
    params: &SolitonParams,
    state: &PhaseState,
    spec: &RegionSpec,
    target: Region,
    horizon: f64,
    tol: f64,
) -> Result<(f64, Option<DVector<f64>>)> {
    let start = diagnostics::sample(params, state);
    if region_margin(&start, spec, target) < 0.0 {
        return Ok((0.0, unstable_direction(state, &start)));
    }
    let spec_c = *spec;
    let ev = Event::new("region_exit", move |_, d: &DiagnosticSample| region_margin(d, &spec_c, target));
    let opts = IntegrateOptions { tol, ..Default::default() };
    let tr = integrate_with_events(params, state, (0.0, horizon), &opts, &[ev])?;
    let last = tr.samples.last().unwrap();
    match tr.termination {
        Termination::Completed => Ok((horizon, None)),
        _ => {
            let dir = unstable_direction(&last.state, &last.diag);
            Ok((last.s, dir))
        }
    }
}

fn unstable_direction(state: &PhaseState, diag: &DiagnosticSample) -> Option<DVector<f64>> {
    let (h, mu) = (diag.a_hat.as_ref()?, diag.mu?);
    let d = &state.t - h * mu;
    let n = d.norm();
    (n > 0.0).then(|| d / n)
}

/// Exit span after rotating `t0` by `angle` towards a direction orthogonal
/// to both `t0` and `a_hat(c0)` (or to `t0` alone in the plane).
pub fn perturbation_exit(
    params: &SolitonParams,
    c0: &DVector<f64>,
    t0: &DVector<f64>,
    spec: &RegionSpec,
    angle: f64,
    horizon: f64,
) -> Result<f64> {
    let a = params.drive(c0);
    let mut basis = vec![t0.clone()];
    if a.norm() > 0.0 && c0.len() > 2 {
        basis.push(a.normalize());
    }
    let e = orthonormal_complement(&basis, c0.len())
        .into_iter()
        .next()
        .ok_or_else(|| Error::Domain("no direction orthogonal to T0".into()))?;
    let t = t0 * angle.cos() + e * angle.sin();
    let st = PhaseState::normalized(c0.clone(), t)?;
    Ok(forward_exit(params, &st, spec, Region::Minus, horizon, 1e-10)?.0)
}

/// Orthonormal basis of the complement of `span(vs)` in `R^n`.
fn orthonormal_complement(vs: &[DVector<f64>], n: usize) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for b in &basis {
            w -= b * b.dot(&w);
        }
        if w.norm() > 1e-12 {
            basis.push(w.normalize());
        }
    }
    let keep = basis.len();
    for i in 0..n {
        let mut w = DVector::zeros(n);
        w[i] = 1.0;
        for b in &basis {
            w -= b * b.dot(&w);
        }
        for b in &basis {
            w -= b * b.dot(&w);
        }
        if w.norm() > 1e-8 {
            basis.push(w.normalize());
        }
    }
    basis.split_off(keep)
}

/// Find `T0` near `-a_hat(C0)` whose forward orbit stays in `R-(K)` for the
/// requested arc length. Returns the best direction found even when the
/// horizon is not reached.
pub fn shoot_trapped_direction(
    params: &SolitonParams,
    c0: &DVector<f64>,
    spec: &RegionSpec,
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    let n = params.dim();
    if c0.len() != n {
        return Err(Error::Dimension { expected: n, got: c0.len() });
    }
    if params.alpha() >= 0.0 {
        return Err(Error::InvalidParams("shooting for trapped ends needs alpha < 0".into()));
    }
    let a0 = params.drive(c0);
    if a0.norm() < spec.k() {
        return Err(Error::InvalidParams(format!(
            "|a(C0)| = {:.3e} is below the region threshold K = {}",
            a0.norm(),
            spec.k()
        )));
    }
    let a_hat = a0.normalize();
    let cap = opts.cap_factor * (spec.k().sqrt() / a0.norm_squared()).min(1.0).asin();

    let mut candidates = Vec::new();
    if opts.forward_search || opts.method == ShootingMethod::ForwardCap {
        candidates = cap_search(params, c0, &a_hat, spec, cap, opts)?;
    }
    let mut result = match opts.method {
        ShootingMethod::ReverseFlow => reverse_flow(params, c0, spec, opts)?,
        ShootingMethod::ForwardCap => {
            let best = candidates
                .iter()
                .max_by(|a, b| a.exit_span.total_cmp(&b.exit_span))
                .ok_or_else(|| Error::Domain("cap search produced no candidates".into()))?;
            ShootingResult {
                c0: c0.clone(),
                t0: best.direction.clone(),
                span: best.exit_span,
                reached_horizon: best.exit_span >= opts.horizon,
                method: ShootingMethod::ForwardCap,
                cap,
                cap_offset: 0.0,
                forward_exit_span: best.exit_span,
                candidates: Vec::new(),
                hit_residuals: Vec::new(),
                orbit: None,
            }
        }
    };
    // always re-integrate the returned direction forwards
    let st = PhaseState::normalized(c0.clone(), result.t0.clone())?;
    result.forward_exit_span = forward_exit(params, &st, spec, Region::Minus, opts.horizon, 1e-12)?.0;
    result.cap = cap;
    result.cap_offset = (&result.t0 + &a_hat).norm();
    candidates.push(Candidate {
        direction: result.t0.clone(),
        exit_span: result.forward_exit_span,
        source: match opts.method {
            ShootingMethod::ReverseFlow => "reverse-flow",
            ShootingMethod::ForwardCap => "cap-search-best",
        },
    });
    result.candidates = candidates;
    Ok(result)
}

fn reverse_flow(params: &SolitonParams, c0: &DVector<f64>, spec: &RegionSpec, opts: &ShootingOptions) -> Result<ShootingResult> {
    let alpha = params.alpha();
    let spectrum = params.spectrum();
    let r0 = c0.norm();
    let sigma_opts = IntegrateOptions { tol: opts.tol, norm_cap: f64::INFINITY, ..Default::default() };
    // |e^{-sigma (alpha + A)} C0| = e^{|alpha| sigma} |C0|; the arc length
    // outwards is at least the radial gain
    let mut sigma_far = ((r0 + 1.5 * opts.horizon) / r0).ln() / alpha.abs();
    sigma_far = sigma_far.max(opts.min_sigma_span);
    let mut last_err = None;
    for _attempt in 0..4 {
        let mut far = spectrum.dilate_rotate_exp(alpha, -sigma_far) * c0;
        let mut residuals = Vec::new();
        let mut hit: Option<(Trajectory, usize)> = None;
        for _ in 0..opts.max_iterations {
            let a = params.drive(&far);
            let st = PhaseState::normalized(far.clone(), a)?;
            let tr = integrate_in_sigma(params, &st, (0.0, 2.0 * sigma_far + 1.0), &sigma_opts)?;
            let k = tr
                .samples
                .iter()
                .position(|x| x.state.c.norm() <= r0)
                .ok_or_else(|| Error::Domain("reverse orbit never reached |C0|".into()))?;
            let (tr, k) = refine_hit(params, tr, k, r0, &sigma_opts)?;
            let x = &tr.samples[k].state.c;
            let res = (x - c0).norm();
            residuals.push(res);
            let sigma_hit = tr.samples[k].sigma;
            let done = res <= 1e-10 * r0;
            if !done {
                far += spectrum.dilate_rotate_exp(alpha, -sigma_hit) * (c0 - x);
            }
            hit = Some((tr, k));
            if done {
                break;
            }
        }
        let (tr, k) = hit.unwrap();
        let orbit = reverse_orbit(params, &tr, k);
        let t0 = orbit.samples[0].state.t.clone();
        let exit = orbit.samples.iter().position(|x| region_of(&x.diag, spec) != Region::Minus);
        let span = match exit {
            Some(0) => 0.0,
            Some(i) => orbit.samples[i - 1].s,
            None => orbit.samples.last().unwrap().s,
        };
        let converged = residuals.last().is_some_and(|r| *r <= 1e-10 * r0);
        if span >= opts.horizon || exit.is_some() {
            if !converged {
                last_err = Some(Error::Domain(format!(
                    "reverse-flow fixed point did not converge (|X - C0| = {:.3e})",
                    residuals.last().unwrap()
                )));
                break;
            }
            return Ok(ShootingResult {
                c0: c0.clone(),
                t0,
                span,
                reached_horizon: span >= opts.horizon,
                method: ShootingMethod::ReverseFlow,
                cap: 0.0,
                cap_offset: 0.0,
                forward_exit_span: 0.0,
                candidates: Vec::new(),
                hit_residuals: residuals,
                orbit: Some(orbit),
            });
        }
        sigma_far *= 1.5;
    }
    Err(last_err.unwrap_or_else(|| Error::Domain("reverse-flow orbit too short for the horizon".into())))
}

/// Locate `|C| = r0` between samples `k-1` and `k` by Newton on a short
/// re-integration; returns the trajectory truncated at the hit.
fn refine_hit(params: &SolitonParams, tr: Trajectory, k: usize, r0: f64, opts: &IntegrateOptions) -> Result<(Trajectory, usize)> {
    if k == 0 {
        return Ok((tr, 0));
    }
    let prev = tr.samples[k - 1].clone();
    let mut dsig = 0.0;
    let mut state = prev.state.clone();
    let mut tail: Option<Trajectory> = None;
    for _ in 0..8 {
        let g = state.c.norm() - r0;
        let a = params.drive(&state.c);
        let rate = a.norm() * state.c.dot(&state.t) / state.c.norm();
        if g.abs() <= 1e-14 * r0 || rate == 0.0 {
            break;
        }
        dsig -= g / rate;
        let seg = integrate_in_sigma(params, &prev.state, (0.0, dsig), opts)?;
        state = seg.samples.last().unwrap().state.clone();
        tail = Some(seg);
    }
    let mut samples: Vec<TrajectorySample> = tr.samples[..k].to_vec();
    if let Some(seg) = tail {
        let end = seg.samples.last().unwrap();
        let mut smp = end.clone();
        smp.s += prev.s;
        smp.sigma += prev.sigma;
        smp.varsigma += prev.varsigma;
        samples.push(smp);
    }
    let k = samples.len() - 1;
    Ok((Trajectory { samples, ..tr }, k))
}

/// The orbit from sample `k` back to the start, traversed as `(C, -T)`
/// with arc length and `sigma` measured from the hit point.
fn reverse_orbit(params: &SolitonParams, tr: &Trajectory, k: usize) -> Trajectory {
    let end = &tr.samples[k];
    let samples = tr.samples[..=k]
        .iter()
        .rev()
        .map(|x| {
            let state = x.state.reversed();
            TrajectorySample {
                s: end.s - x.s,
                sigma: end.sigma - x.sigma,
                varsigma: end.varsigma - x.varsigma,
                diag: diagnostics::sample(params, &state),
                state,
            }
        })
        .collect();
    Trajectory {
        params: params.clone(),
        samples,
        stats: tr.stats,
        tol: tr.tol,
        termination: Termination::Completed,
        backward_termination: None,
    }
}

/// Forward search over the cap: bisection on the exit side for `n = 2`,
/// nested bisection for `n = 3`, pattern search above.
fn cap_search(
    params: &SolitonParams,
    c0: &DVector<f64>,
    a_hat: &DVector<f64>,
    spec: &RegionSpec,
    cap: f64,
    opts: &ShootingOptions,
) -> Result<Vec<Candidate>> {
    let n = params.dim();
    let perp = orthonormal_complement(std::slice::from_ref(a_hat), n);
    let radius = cap.tan();
    let direction = |x: &[f64]| {
        let mut t = -a_hat.clone();
        for (xi, e) in x.iter().zip(&perp) {
            t += e * *xi;
        }
        t.normalize()
    };
    let eval = |x: &[f64]| -> Result<(Candidate, Option<DVector<f64>>)> {
        let t = direction(x);
        let st = PhaseState::normalized(c0.clone(), t.clone())?;
        let (span, dir) = forward_exit(params, &st, spec, Region::Minus, opts.horizon, 1e-12)?;
        Ok((Candidate { direction: t, exit_span: span, source: "cap-search" }, dir))
    };
    let side = |dir: &Option<DVector<f64>>, e: &DVector<f64>| dir.as_ref().map_or(0.0, |d| d.dot(e).signum());
    let mut log: Vec<Candidate> = Vec::new();

    // k-section on a segment: returns the midpoint of the final bracket
    let bisect = |fixed: &(dyn Fn(f64) -> Vec<f64> + Sync), e: &DVector<f64>, log: &mut Vec<Candidate>| -> Result<f64> {
        let (mut lo, mut hi) = (-radius, radius);
        let sections = 8;
        for _ in 0..12 {
            let xs: Vec<f64> = (0..=sections).map(|j| lo + (hi - lo) * j as f64 / sections as f64).collect();
            let evals: Vec<(Candidate, Option<DVector<f64>>)> =
                xs.par_iter().map(|&x| eval(&fixed(x))).collect::<Result<_>>()?;
            let sides: Vec<f64> = evals.iter().map(|(_, d)| side(d, e)).collect();
            log.extend(evals.iter().map(|(c, _)| c.clone()));
            if let Some(j) = sides.iter().position(|s| *s == 0.0) {
                return Ok(xs[j]);
            }
            match (0..sections).find(|&j| sides[j] != sides[j + 1]) {
                Some(j) => {
                    lo = xs[j];
                    hi = xs[j + 1];
                }
                None => {
                    // no side change: keep the longest-lived candidate
                    let j = (0..=sections)
                        .max_by(|&a, &b| evals[a].0.exit_span.total_cmp(&evals[b].0.exit_span))
                        .unwrap();
                    return Ok(xs[j]);
                }
            }
            if hi - lo <= 1e-10 * radius {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    };

    match perp.len() {
        0 => {}
        1 => {
            bisect(&|x| vec![x], &perp[0], &mut log)?;
        }
        2 => {
            let (mut lo, mut hi) = (-radius, radius);
            let inner = |y: f64, log: &mut Vec<Candidate>| bisect(&|x| vec![x, y], &perp[0], log);
            let outer_side = |y: f64, log: &mut Vec<Candidate>| -> Result<f64> {
                let x = inner(y, log)?;
                let (c, d) = eval(&[x, y])?;
                log.push(c);
                Ok(side(&d, &perp[1]))
            };
            let s_lo = outer_side(lo, &mut log)?;
            let s_hi = outer_side(hi, &mut log)?;
            if s_lo != s_hi {
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    let s_mid = outer_side(mid, &mut log)?;
                    if s_mid == 0.0 {
                        break;
                    }
                    if s_mid == s_lo {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-10 * radius {
                        break;
                    }
                }
            }
        }
        m => {
            // compass search on the exit span
            let mut x = vec![0.0; m];
            let (c, _) = eval(&x)?;
            let mut best = c.exit_span;
            log.push(c);
            let mut step = 0.5 * radius;
            for _ in 0..200 {
                let trials: Vec<Vec<f64>> = (0..m)
                    .flat_map(|i| {
                        [1.0, -1.0].into_iter().map({
                            let x = x.clone();
                            move |sgn| {
                                let mut y = x.clone();
                                y[i] += sgn * step;
                                y
                            }
                        })
                    })
                    .collect();
                let evals: Vec<(Candidate, Option<DVector<f64>>)> =
                    trials.par_iter().map(|y| eval(y)).collect::<Result<_>>()?;
                let (j, top) = evals
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .0.exit_span.total_cmp(&b.1 .0.exit_span))
                    .map(|(j, e)| (j, e.0.exit_span))
                    .unwrap();
                log.extend(evals.into_iter().map(|e| e.0));
                if top > best {
                    best = top;
                    x = trials[j].clone();
                } else {
                    step *= 0.5;
                }
                if step <= 1e-12 * radius || best >= opts.horizon {
                    break;
                }
            }
        }
    }
    Ok(log)
}

/// Helper for tests and reports: the matrix `alpha + A`.
pub fn shifted_matrix(params: &SolitonParams) -> DMatrix<f64> {
    params.spectrum().matrix() + DMatrix::identity(params.dim(), params.dim()) * params.alpha()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, integrate_bidirectional};
    use crate::geometry::five_point_first;
    use crate::skewlin::skew_from_planes;
    use proptest::prelude::*;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn rotating(n: usize, alpha: f64, omega: f64) -> SolitonParams {
        let m = skew_from_planes(n, &[(omega, 0, 1)]).unwrap();
        SolitonParams::from_matrix(alpha, &m, DVector::zeros(n)).unwrap()
    }

    #[test]
    fn circle_is_in_neither_region() {
        let p = rotating(2, -1.0, 1.0);
        let st = PhaseState::new(dv(&[1.0, 0.0]), dv(&[0.0, 1.0])).unwrap();
        let d = diagnostics::sample(&p, &st);
        assert!((d.a_norm - 2f64.sqrt()).abs() < 1e-15);
        assert!((d.mu.unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((d.nu.unwrap() - 2.0).abs() < 1e-13);
        assert_eq!(region_membership(&p, &st, &RegionSpec::new(10.0).unwrap()), Region::Neither);
    }

    #[test]
    fn straight_line_is_member_when_drive_is_large() {
        let p = rotating(3, 1.0, 1.0);
        let c = dv(&[0.0, 0.0, 20.0]);
        let a = p.drive(&c);
        let spec = RegionSpec::new(10.0).unwrap();
        let st = PhaseState::normalized(c.clone(), a.clone()).unwrap();
        assert_eq!(region_membership(&p, &st, &spec), Region::Plus);
        assert_eq!(region_membership(&p, &st.reversed(), &spec), Region::Minus);
        let small = PhaseState::normalized(dv(&[0.0, 0.0, 2.0]), dv(&[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(region_membership(&p, &small, &spec), Region::Neither);
    }

    #[test]
    fn orthogonal_tangent_at_threshold_is_in_neither() {
        // mu = 0 and |a| = K gives nu = K^4 > K
        let p = rotating(2, 1.0, 0.0);
        let spec = RegionSpec::new(3.0).unwrap();
        let st = PhaseState::new(dv(&[3.0, 0.0]), dv(&[0.0, 1.0])).unwrap();
        let d = diagnostics::sample(&p, &st);
        assert!((d.nu.unwrap() - 81.0).abs() < 1e-12);
        assert_eq!(region_of(&d, &spec), Region::Neither);
        assert!(RegionSpec::new(0.0).is_err());
    }

    #[test]
    fn nu_derivative_matches_finite_differences() {
        let p = rotating(3, 0.6, 1.2);
        let st = PhaseState::normalized(dv(&[2.0, -1.0, 0.7]), dv(&[0.3, 0.5, 1.0])).unwrap();
        let h = 1e-3;
        let tr = integrate(&p, &st, (0.0, 4.0 * h), &IntegrateOptions { tol: 1e-13, ..Default::default() }.with_spacing(h))
            .unwrap();
        let nus: Vec<f64> = tr.samples.iter().map(|x| x.diag.nu.unwrap()).collect();
        let fd = five_point_first(&nus, h)[0];
        let exact = nu_derivative(&p, &tr.samples[2].state).unwrap();
        assert!((fd - exact).abs() < 1e-6 * (1.0 + exact.abs()), "{fd} vs {exact}");
        let fd_a = five_point_first(&tr.samples.iter().map(|x| x.diag.a_norm).collect::<Vec<_>>(), h)[0];
        assert!((fd_a - a_norm_derivative(&p, &tr.samples[2].state).unwrap()).abs() < 1e-8);
    }

    fn random_unit(rng: &[f64]) -> DVector<f64> {
        dv(rng).normalize()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn plus_region_boundary_points_inwards(
            alpha in 0.2f64..2.0,
            omega in 0.0f64..2.0,
            cx in prop::collection::vec(-1.0f64..1.0, 3),
            ex in prop::collection::vec(-1.0f64..1.0, 3),
            scale in 1.0f64..10.0,
        ) {
            prop_assume!(dv(&cx).norm() > 1e-3 && dv(&ex).norm() > 1e-3);
            let p = rotating(3, alpha, omega);
            let spec = RegionSpec::calibrated(&p);
            let k = spec.k();
            // |a| between K and 10 K
            let dir = random_unit(&cx);
            let c = &dir * (scale * k / p.shifted_apply(&dir).norm());
            let a = p.drive(&c);
            let na = a.norm();
            let hat = &a / na;
            let e = &dv(&ex) - &hat * hat.dot(&dv(&ex));
            prop_assume!(e.norm() > 1e-3);
            let sin = k.sqrt() / (na * na);
            let t = &hat * (1.0 - sin * sin).sqrt() + e.normalize() * sin;
            let st = PhaseState::normalized(c, t).unwrap();
            let d = diagnostics::sample(&p, &st);
            prop_assert!((d.nu.unwrap() - k).abs() < 1e-6 * k);
            prop_assert!(nu_derivative(&p, &st).unwrap() < 0.0);
        }

        #[test]
        fn shifted_operator_norm_equivalence(
            alpha in -3.0f64..3.0,
            omega in -3.0f64..3.0,
            c in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            let m = skew_from_planes(4, &[(omega.abs(), 0, 2), (0.5 * omega.abs(), 1, 3)]).unwrap();
            let p = SolitonParams::from_matrix(alpha, &m, DVector::zeros(4)).unwrap();
            let (lo, mid, hi) = norm_equivalence(&p, &dv(&c));
            prop_assert!(lo <= mid * (1.0 + 1e-12) + 1e-300);
            prop_assert!(mid <= hi * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn drive_grows_at_least_half_alpha_in_plus_region() {
        let p = rotating(3, 1.0, 1.0);
        let spec = RegionSpec::calibrated(&p);
        let c = dv(&[10.0, 0.0, 3.0]);
        let st = PhaseState::normalized(c.clone(), p.drive(&c)).unwrap();
        let tr = integrate_in_sigma(&p, &st, (0.0, 6.0), &IntegrateOptions { norm_cap: f64::INFINITY, ..Default::default() })
            .unwrap();
        let mut checked = 0;
        for x in &tr.samples {
            if region_of(&x.diag, &spec) == Region::Plus {
                assert!(a_norm_derivative(&p, &x.state).unwrap() >= 0.5 * p.alpha());
                checked += 1;
            }
        }
        assert_eq!(checked, tr.samples.len());
    }

    #[test]
    fn reversal_exchanges_regions_and_plus_is_invariant() {
        let p = rotating(3, 0.5, 1.0);
        let spec = RegionSpec::calibrated(&p);
        let c = dv(&[20.0, 5.0, 10.0]);
        let st = PhaseState::normalized(c.clone(), p.drive(&c)).unwrap();
        let (span, _) = forward_exit(&p, &st, &spec, Region::Plus, 30.0, 1e-10).unwrap();
        assert_eq!(span, 30.0);
        assert_eq!(region_membership(&p, &st.reversed(), &spec), Region::Minus);
    }

    #[test]
    fn grim_reaper_curve_solves_translating_equation() {
        let a = dv(&[0.0, 2.0]);
        let gr = GrimReaperCurve::new(dv(&[0.3, -0.1]), dv(&[0.6, 0.8]), &a).unwrap();
        let h = 1e-4;
        for s in [-1.0, -0.2, 0.0, 0.5, 1.3] {
            let (p0, pm, pp) = (gr.point(s), gr.point(s - h), gr.point(s + h));
            let t = (&pp - &pm) / (2.0 * h);
            let k = (&pp - &p0 * 2.0 + &pm) / (h * h);
            assert!((t.norm() - 1.0).abs() < 1e-7);
            let expect = &a - &t * a.dot(&t);
            assert!((k - expect).norm() < 1e-5);
        }
        assert!((gr.point(0.0) - dv(&[0.3, -0.1])).norm() < 1e-15);
    }

    fn grim_reaper_trajectory(spacing: f64) -> Trajectory {
        let p = SolitonParams::from_matrix(0.0, &DMatrix::zeros(2, 2), dv(&[0.0, 1.0])).unwrap();
        let st = PhaseState::new(dv(&[0.0, 0.0]), dv(&[1.0, 0.0])).unwrap();
        integrate_bidirectional(&p, &st, 5.0, 5.0, &IntegrateOptions::default().with_spacing(spacing), &[]).unwrap()
    }

    #[test]
    fn exact_grim_reaper_is_one_arc_at_the_tip() {
        let tr = grim_reaper_trajectory(1e-2);
        let arcs = detect_gr_arcs(&tr, default_threshold(&tr.params));
        assert_eq!(arcs.len(), 1);
        assert!(arcs[0].anchor_s.abs() < 1e-12);
        assert!(arcs[0].fit_error < 1e-8, "{}", arcs[0].fit_error);
        let arcs = detect_gr_arcs(&tr, 2.0);
        assert_eq!(arcs.len(), 0, "|a| = 1 is below the threshold");
    }

    #[test]
    fn straight_line_has_no_arcs() {
        let p = rotating(3, 0.0, 1.0);
        let st = PhaseState::new(dv(&[0.0, 0.0, 0.0]), dv(&[0.0, 0.0, 1.0])).unwrap();
        let tr = integrate(&p, &st, (0.0, 10.0), &IntegrateOptions::default()).unwrap();
        assert!(detect_gr_arcs(&tr, 0.1).is_empty());
    }

    #[test]
    fn far_out_arcs_look_like_grim_reapers() {
        // rotating-translating: the drive grows with |W|, arcs shrink
        let m = skew_from_planes(3, &[(1.0, 0, 1)]).unwrap();
        let p = SolitonParams::from_matrix(0.0, &m, dv(&[0.0, 0.0, 1.0])).unwrap();
        let c = default_threshold(&p);
        let mut errors = Vec::new();
        for r in [10.0, 20.0, 40.0] {
            let st = PhaseState::normalized(dv(&[r, 0.0, 0.0]), dv(&[0.0, 0.0, 1.0])).unwrap();
            let tr = integrate_bidirectional(&p, &st, 0.5, 0.5, &IntegrateOptions::default().with_spacing(1e-3), &[])
                .unwrap();
            let arcs = detect_gr_arcs(&tr, c);
            assert!(!arcs.is_empty());
            let arc = arcs.iter().max_by(|a, b| a.a_norm.total_cmp(&b.a_norm)).unwrap();
            assert!(arc.length <= 3.0 * arc.bound, "{} vs {}", arc.length, arc.bound);
            errors.push(arc.fit_error);
        }
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    }

    #[test]
    fn synthetic_spiral_is_recovered() {
        let m = skew_from_planes(3, &[(1.0, 0, 1)]).unwrap();
        let p = SolitonParams::from_matrix(0.7, &m, DVector::zeros(3)).unwrap();
        let g0 = dv(&[1.0, -2.0, 0.5]);
        let pts: Vec<(f64, DVector<f64>)> = (0..60)
            .map(|k| {
                let sigma = 0.1 * k as f64;
                (sigma, p.spectrum().dilate_rotate_exp(0.7, sigma) * &g0)
            })
            .collect();
        let fit = fit_spiral(&p, &pts, SpiralSign::Forward, 1e-13).unwrap();
        assert!((&fit.gamma - &g0).norm() < 1e-10);
        assert!(fit.residuals.iter().all(|(s, r)| *r < 1e-13 * (1.0 + (0.7 * s).exp())));
    }

    #[test]
    fn closed_form_spiral_per_turn_ratio() {
        // planar log spiral: radius gains e^{2 pi alpha/omega} per turn
        let m = skew_from_planes(2, &[(1.0, 0, 1)]).unwrap();
        let p = SolitonParams::from_matrix(1.0, &m, DVector::zeros(2)).unwrap();
        let x = |sigma: f64| p.spectrum().dilate_rotate_exp(1.0, sigma) * dv(&[1.0, 0.0]);
        let turn = 2.0 * std::f64::consts::PI;
        let ratio = x(turn).norm() / x(0.0).norm();
        assert!((ratio / turn.exp() - 1.0).abs() < 1e-9);
        assert!((x(turn) / ratio - dv(&[1.0, 0.0])).norm() < 1e-9);
    }

    #[test]
    fn brakke_wedge_ends_are_rays() {
        let p = SolitonParams::from_matrix(1.0, &DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let spec = RegionSpec::calibrated(&p);
        let c = dv(&[5.0, 1.0]);
        let st = PhaseState::normalized(c.clone(), dv(&[0.8, 0.6])).unwrap();
        let pre = integrate(&p, &st, (0.0, 20.0), &IntegrateOptions::default()).unwrap();
        let start = pre.samples.last().unwrap().state.clone();
        assert_eq!(region_membership(&p, &start, &spec), Region::Plus);
        let tail = integrate_in_sigma(&p, &start, (0.0, 8.0), &IntegrateOptions { norm_cap: f64::INFINITY, ..Default::default() })
            .unwrap();
        let fit = spiral_fit(&tail, &spec, SpiralSign::Forward).unwrap();
        let dir = fit.gamma.normalize();
        let last = tail.samples.last().unwrap();
        let off = (&last.state.c - &dir * dir.dot(&last.state.c)).norm();
        assert!(off < 1e-6 * last.state.c.norm(), "{off}");
        assert!((last.state.t.dot(&dir) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn expanding_rotating_tail_decays_at_rate_alpha() {
        let p = rotating(3, 1.0, 1.0);
        let spec = RegionSpec::calibrated(&p);
        let c = dv(&[8.0, 0.0, 4.0]);
        let st = PhaseState::normalized(c.clone(), p.drive(&c)).unwrap();
        let opts = IntegrateOptions { tol: 1e-12, norm_cap: f64::INFINITY, ..Default::default() }.with_spacing(0.05);
        let tr = integrate_in_sigma(&p, &st, (0.0, 15.0), &opts).unwrap();
        let fit = spiral_fit(&tr, &spec, SpiralSign::Forward).unwrap();
        let rate = fit.decay_rate.unwrap();
        assert!((rate - 1.0).abs() < 0.2, "rate {rate}, {} samples", fit.fit_samples);
        assert!(fit.cauchy_converging());
    }

    #[test]
    fn spiral_fit_reports_region_exit() {
        let p = rotating(2, 1.0, 1.0);
        let spec = RegionSpec::new(1e6).unwrap();
        let c = dv(&[10.0, 0.0]);
        let st = PhaseState::normalized(c.clone(), p.drive(&c)).unwrap();
        let tr = integrate_in_sigma(&p, &st, (0.0, 1.0), &IntegrateOptions::default()).unwrap();
        assert!(matches!(spiral_fit(&tr, &spec, SpiralSign::Forward), Err(Error::RegionExit { index: 0, .. })));
        assert!(spiral_fit(&tr, &spec, SpiralSign::Reversed).is_err());
    }

    #[test]
    fn planar_shooting_finds_trapped_direction() {
        let p = rotating(2, -1.0, 1.0);
        let spec = RegionSpec::new(10.0).unwrap();
        let c0 = dv(&[50.0, 0.0]);
        let opts = ShootingOptions { forward_search: false, ..Default::default() };
        let res = shoot_trapped_direction(&p, &c0, &spec, &opts).unwrap();
        assert!(res.reached_horizon && res.span >= 50.0, "{}", res.span);
        assert!(res.cap_offset <= res.cap);
        assert!(res.hit_residuals.last().unwrap() <= &(1e-10 * 50.0));
        let orbit = res.orbit.as_ref().unwrap();
        assert!((&orbit.samples[0].state.c - &c0).norm() < 1e-8);
        let exit = perturbation_exit(&p, &c0, &res.t0, &spec, 0.1, 50.0).unwrap();
        assert!(exit < 50.0);
    }
}
