//! Reconstruction of the evolving curve `c(., t)` from a soliton profile and a
//! finite-difference check that the family moves by Curve Shortening.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{SolitonParams, Trajectory};

/// Polyline sampled uniformly in arc length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub ds: f64,
    pub points: Vec<DVector<f64>>,
}

impl Profile {
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let ds = traj
            .uniform_spacing(1e-8)
            .ok_or_else(|| Error::NonUniform("profile must be sampled uniformly in s".into()))?;
        Ok(Self { ds, points: traj.positions() })
    }

    /// Every `k`-th point.
    pub fn subsample(&self, k: usize) -> Self {
        Self {
            ds: self.ds * k as f64,
            points: self.points.iter().step_by(k).cloned().collect(),
        }
    }
}

/// `t_0 = 1/(2 alpha)`, the time at which a dilating family equals its profile.
pub fn reference_time(params: &SolitonParams) -> Option<f64> {
    (params.alpha() != 0.0).then(|| 0.5 / params.alpha())
}

/// The curve at time `t`: `e^{tA} C + t v` when `alpha = 0`, otherwise
/// `e^{eps} e^{eps M} C` with `eps = ln(t/t_0)/2`, `M = 2 t_0 A`.
pub fn evolve_family(params: &SolitonParams, profile: &[DVector<f64>], t: f64) -> Result<Vec<DVector<f64>>> {
    let spec = params.spectrum();
    match reference_time(params) {
        None => {
            let rot = spec.rotation_exp(t);
            let shift = params.v() * t;
            Ok(profile.iter().map(|c| &rot * c + &shift).collect())
        }
        Some(t0) => {
            if !(t / t0 > 0.0) {
                return Err(Error::Domain(format!(
                    "t = {t} and t0 = {t0} must share a sign for a dilating family"
                )));
            }
            let eps = 0.5 * (t / t0).ln();
            // e^{eps M} with M = 2 t0 A is a rotation by angle 2 t0 eps
            let map = spec.rotation_exp(2.0 * t0 * eps) * eps.exp();
            Ok(profile.iter().map(|c| &map * c).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsfResidual {
    pub max: f64,
    pub rms: f64,
    pub count: usize,
    /// Largest curvature times spacing seen; above 0.1 the grid is too coarse.
    pub max_curvature_h: f64,
    pub warnings: Vec<String>,
}

/// Central-difference residual of `p_{c_s}(c_t) - c_ss` over interior samples.
pub fn csf_residual(params: &SolitonParams, profile: &Profile, t: f64, grid_h: f64) -> Result<CsfResidual> {
    if profile.points.len() < 3 {
        return Err(Error::InvalidParams("profile needs at least three points".into()));
    }
    let minus = evolve_family(params, &profile.points, t - grid_h)?;
    let mid = evolve_family(params, &profile.points, t)?;
    let plus = evolve_family(params, &profile.points, t + grid_h)?;
    let ds = profile.ds;
    let mut res = Vec::with_capacity(mid.len());
    let mut max_kh: f64 = 0.0;
    for i in 1..mid.len() - 1 {
        let ct = (&plus[i] - &minus[i]) / (2.0 * grid_h);
        let cx = (&mid[i + 1] - &mid[i - 1]) / (2.0 * ds);
        let cxx = (&mid[i + 1] - &mid[i] * 2.0 + &mid[i - 1]) / (ds * ds);
        let speed2 = cx.norm_squared();
        let tau = &cx / speed2.sqrt();
        let normal = |x: &DVector<f64>| x - &tau * tau.dot(x);
        let curv = normal(&cxx) / speed2;
        max_kh = max_kh.max(curv.norm() * grid_h.max(ds * speed2.sqrt()));
        res.push((normal(&ct) - curv).norm());
    }
    let count = res.len();
    let max = res.iter().copied().fold(0.0, f64::max);
    let rms = (res.iter().map(|x| x * x).sum::<f64>() / count as f64).sqrt();
    let mut warnings = Vec::new();
    if max_kh > 0.1 {
        warnings.push(format!("grid too coarse: curvature * h reaches {max_kh:.3}"));
    }
    Ok(CsfResidual { max, rms, count, max_curvature_h: max_kh, warnings })
}
