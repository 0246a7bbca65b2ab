//! Named solitons used as fixtures: lines, shrinking circles, the Grim
//! Reaper, the Yin-Yang spiral, Brakke wedges and Abresch-Langer curves.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{integrate, IntegrateOptions, PhaseState, SolitonParams, Trajectory};
use crate::skewlin::skew_from_planes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Line,
    ShrinkingCircle,
    GrimReaper,
    YinYang,
    BrakkeWedge,
    AbreschLanger,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::Line,
        Label::ShrinkingCircle,
        Label::GrimReaper,
        Label::YinYang,
        Label::BrakkeWedge,
        Label::AbreschLanger,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Line => "line",
            Label::ShrinkingCircle => "shrinking_circle",
            Label::GrimReaper => "grim_reaper",
            Label::YinYang => "yin_yang",
            Label::BrakkeWedge => "brakke_wedge",
            Label::AbreschLanger => "abresch_langer",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown soliton label `{s}`")))
    }
}

/// Knobs for [`make`]; each label reads the fields it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureParams {
    pub dim: usize,
    pub alpha: f64,
    /// Rotation frequency in the `(e_1, e_2)` plane.
    pub omega: f64,
    /// Translation speed of the Grim Reaper.
    pub speed: f64,
    /// Distance of the starting point from the origin: the tip height of a
    /// Brakke wedge, the starting radius of an Abresch-Langer curve.
    pub height: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self { dim: 2, alpha: -0.5, omega: 1.0, speed: 1.0, height: 1.0 }
    }
}

impl FixtureParams {
    /// Defaults that give each label its textbook shape.
    pub fn for_label(label: Label) -> Self {
        let d = Self::default();
        match label {
            Label::Line => Self { dim: 3, alpha: 0.0, ..d },
            Label::ShrinkingCircle => d,
            Label::GrimReaper => Self { alpha: 0.0, omega: 0.0, ..d },
            Label::YinYang => Self { alpha: 0.0, ..d },
            Label::BrakkeWedge => Self { alpha: 1.0, omega: 0.0, ..d },
            Label::AbreschLanger => Self { alpha: -1.0, omega: 0.0, height: 0.8, ..d },
        }
    }
}

/// Exact curve, parametrized by arc length from the fixture's initial state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ClosedForm {
    Line { origin: DVector<f64>, direction: DVector<f64> },
    Circle { radius: f64, e1: DVector<f64>, e2: DVector<f64> },
    /// `y = -ln cos(k x) / k` in the plane spanned by `ex` and the velocity `ey`.
    GrimReaper { speed: f64, ex: DVector<f64>, ey: DVector<f64> },
}

impl ClosedForm {
    pub fn point(&self, s: f64) -> DVector<f64> {
        match self {
            ClosedForm::Line { origin, direction } => origin + direction * s,
            ClosedForm::Circle { radius, e1, e2 } => {
                let th = s / radius;
                (e1 * th.cos() + e2 * th.sin()) * *radius
            }
            ClosedForm::GrimReaper { speed, ex, ey } => {
                let x = (speed * s).sinh().atan();
                let y = (speed * s).cosh().ln();
                (ex * x + ey * y) / *speed
            }
        }
    }

    /// Distance-like defect of `c` from the curve as a set: distance to the
    /// line or circle, `|y + ln cos(k x)/k|` plus out-of-plane part for the
    /// Grim Reaper.
    pub fn defect(&self, c: &DVector<f64>) -> f64 {
        match self {
            ClosedForm::Line { origin, direction } => {
                let d = c - origin;
                (&d - direction * direction.dot(&d)).norm()
            }
            ClosedForm::Circle { radius, e1, e2 } => {
                let (x, y) = (e1.dot(c), e2.dot(c));
                let out = (c - e1 * x - e2 * y).norm();
                ((x * x + y * y).sqrt() - radius).abs().hypot(out)
            }
            ClosedForm::GrimReaper { speed, ex, ey } => {
                let (x, y) = (ex.dot(c), ey.dot(c));
                let out = (c - ex * x - ey * y).norm();
                let kx = speed * x;
                if kx.abs() >= PI / 2.0 {
                    return f64::INFINITY;
                }
                (y + kx.cos().ln() / speed).abs().hypot(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedSoliton {
    pub label: Label,
    pub params: SolitonParams,
    pub initial_state: PhaseState,
    pub closed_form: Option<ClosedForm>,
    pub expected_v: Option<f64>,
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

fn rotation(n: usize, omega: f64) -> Result<DMatrix<f64>> {
    if omega == 0.0 {
        Ok(DMatrix::zeros(n, n))
    } else {
        skew_from_planes(n, &[(omega.abs(), 0, 1)]).map(|m| m * omega.signum())
    }
}

pub fn make(label: Label, fp: &FixtureParams) -> Result<NamedSoliton> {
    let n = fp.dim;
    if n < 2 {
        return Err(Error::InvalidParams(format!("{label} needs dimension >= 2, got {n}")));
    }
    let bad = |msg: &str| Err(Error::InvalidParams(format!("{label}: {msg}")));
    let zero = DVector::zeros(n);
    let (params, state, closed_form, expected_v) = match label {
        Label::Line => {
            // a line through 0 along N(A): the drive is parallel to it
            if n == 2 && fp.omega != 0.0 {
                return bad("a rotating plane has no null direction; use dim >= 3");
            }
            let params = SolitonParams::from_matrix(fp.alpha, &rotation(n, fp.omega)?, zero.clone())?;
            let dir = unit(n, n - 1);
            let state = PhaseState::new(zero.clone(), dir.clone())?;
            (params, state, Some(ClosedForm::Line { origin: zero, direction: dir }), Some(0.0))
        }
        Label::ShrinkingCircle => {
            if !(fp.alpha < 0.0) {
                return bad("requires alpha < 0");
            }
            let m = rotation(n, fp.omega)?;
            let params = SolitonParams::from_matrix(fp.alpha, &m, zero)?;
            let r = (-fp.alpha).sqrt().recip();
            let e1 = unit(n, 0);
            // oriented along A e_1, so that V = +omega/sqrt(-e alpha)
            let e2 = if fp.omega != 0.0 { (&m * &e1) / fp.omega.abs() } else { unit(n, 1) };
            let state = PhaseState::new(&e1 * r, e2.clone())?;
            let v = fp.omega.abs() / (-std::f64::consts::E * fp.alpha).sqrt();
            (params, state, Some(ClosedForm::Circle { radius: r, e1, e2 }), Some(v))
        }
        Label::GrimReaper => {
            if fp.alpha != 0.0 || fp.omega != 0.0 {
                return bad("is purely translating: alpha = omega = 0");
            }
            if !(fp.speed > 0.0) {
                return bad("requires speed > 0");
            }
            let (ex, ey) = (unit(n, 0), unit(n, 1));
            let params = SolitonParams::from_matrix(0.0, &DMatrix::zeros(n, n), &ey * fp.speed)?;
            let state = PhaseState::new(zero, ex.clone())?;
            (params, state, Some(ClosedForm::GrimReaper { speed: fp.speed, ex, ey }), None)
        }
        Label::YinYang => {
            if fp.alpha != 0.0 || fp.omega == 0.0 || n != 2 {
                return bad("is planar and purely rotating: dim = 2, alpha = 0, omega != 0");
            }
            let params = SolitonParams::from_matrix(0.0, &rotation(2, fp.omega)?, zero.clone())?;
            (params, PhaseState::new(zero, unit(2, 0))?, None, Some(0.0))
        }
        Label::BrakkeWedge => {
            if !(fp.alpha > 0.0) || fp.omega != 0.0 || n != 2 {
                return bad("is planar and purely expanding: dim = 2, alpha > 0, omega = 0");
            }
            if !(fp.height > 0.0) {
                return bad("requires tip height > 0");
            }
            let params = SolitonParams::from_matrix(fp.alpha, &DMatrix::zeros(2, 2), zero)?;
            // symmetric about the e_2 axis, tip at height h
            (params, PhaseState::new(unit(2, 1) * fp.height, unit(2, 0))?, None, Some(0.0))
        }
        Label::AbreschLanger => {
            if !(fp.alpha < 0.0) || fp.omega != 0.0 || n != 2 {
                return bad("is planar and purely shrinking: dim = 2, alpha < 0, omega = 0");
            }
            if !(fp.height > 0.0) {
                return bad("requires starting radius > 0");
            }
            let params = SolitonParams::from_matrix(fp.alpha, &DMatrix::zeros(2, 2), zero)?;
            (params, PhaseState::new(unit(2, 0) * fp.height, unit(2, 1))?, None, Some(0.0))
        }
    };
    Ok(NamedSoliton { label, params, initial_state: state, closed_form, expected_v })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbreschLangerProfile {
    pub trajectory: Trajectory,
    /// Total turning of `T` divided by `2 pi`.
    pub rotation_number: f64,
    /// Polar angle swept by `C` between consecutive maxima of `|C|`, over `2 pi`.
    pub period_rotation: Option<f64>,
    pub min_radius: f64,
    pub max_radius: f64,
    /// First `s > 0` where `(C, T)` returns within `closure_tol` of the start.
    pub closure_s: Option<f64>,
    pub closure_distance: f64,
}

pub const CLOSURE_TOL: f64 = 1e-4;

/// Planar shrinker through `(r0, 0)` with `T = e_2`, integrated over `[0, s_max]`.
pub fn abresch_langer_profile(alpha: f64, r0: f64, s_max: f64) -> Result<AbreschLangerProfile> {
    let fx = make(Label::AbreschLanger, &FixtureParams { alpha, height: r0, ..FixtureParams::for_label(Label::AbreschLanger) })?;
    let opts = IntegrateOptions { tol: 1e-12, ..Default::default() }.with_spacing(1e-2);
    let traj = integrate(&fx.params, &fx.initial_state, (0.0, s_max), &opts)?;
    let angle = |v: &DVector<f64>| v[1].atan2(v[0]);
    let unwrap = |xs: Vec<f64>| {
        let mut out = Vec::with_capacity(xs.len());
        let mut acc = 0.0;
        for (i, x) in xs.iter().enumerate() {
            if i > 0 {
                let mut d = x - xs[i - 1];
                d -= 2.0 * PI * (d / (2.0 * PI)).round();
                acc += d;
            }
            out.push(acc);
        }
        out
    };
    let turning = unwrap(traj.samples.iter().map(|x| angle(&x.state.t)).collect());
    let polar = unwrap(traj.samples.iter().map(|x| angle(&x.state.c)).collect());
    let radii: Vec<f64> = traj.samples.iter().map(|x| x.state.c.norm()).collect();
    let maxima: Vec<usize> = (1..radii.len().saturating_sub(1))
        .filter(|&i| radii[i] > radii[i - 1] && radii[i] >= radii[i + 1])
        .collect();
    let period_rotation = (maxima.len() >= 2).then(|| (polar[maxima[1]] - polar[maxima[0]]) / (2.0 * PI));

    // phase-space distance to the start; refine local minima on the Hermite interpolant
    let s0 = &traj.samples[0].state;
    let dist = |st: &PhaseState| ((&st.c - &s0.c).norm_squared() + (&st.t - &s0.t).norm_squared()).sqrt();
    let d: Vec<f64> = traj.samples.iter().map(|x| dist(&x.state)).collect();
    let mut closure_s = None;
    let mut closure_distance = f64::INFINITY;
    for i in 1..d.len().saturating_sub(1) {
        if !(d[i] <= d[i - 1] && d[i] <= d[i + 1]) || traj.samples[i].s < 1e-6 {
            continue;
        }
        let (mut lo, mut hi) = (traj.samples[i - 1].s, traj.samples[i + 1].s);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let (m1, m2) = (hi - g * (hi - lo), lo + g * (hi - lo));
            let f = |s: f64| traj.state_at(s).map_or(f64::INFINITY, |st| dist(&st));
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let s = 0.5 * (lo + hi);
        let dm = traj.state_at(s).map_or(f64::INFINITY, |st| dist(&st));
        if dm < CLOSURE_TOL {
            closure_s = Some(s);
            closure_distance = dm;
            break;
        }
        closure_distance = closure_distance.min(dm);
    }
    Ok(AbreschLangerProfile {
        rotation_number: turning.last().copied().unwrap_or(0.0) / (2.0 * PI),
        period_rotation,
        min_radius: radii.iter().copied().fold(f64::INFINITY, f64::min),
        max_radius: radii.iter().copied().fold(0.0, f64::max),
        closure_s,
        closure_distance,
        trajectory: traj,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanEntry {
    pub r0: f64,
    pub period_rotation: Option<f64>,
    pub closure_s: Option<f64>,
}

/// Period rotations over a list of starting radii; closed members sit where
/// the period rotation is rational. Not a classification.
pub fn scan_abresch_langer(alpha: f64, radii: &[f64], s_max: f64) -> Result<Vec<ScanEntry>> {
    radii
        .par_iter()
        .map(|&r0| {
            let p = abresch_langer_profile(alpha, r0, s_max)?;
            Ok(ScanEntry { r0, period_rotation: p.period_rotation, closure_s: p.closure_s })
        })
        .collect()
}
