//! Pointwise and along-trajectory functionals: the drive vector, curvature,
//! the almost-Lyapunov function `V`, distance functions and planarity checks.

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{tangent_projection, PhaseState, SolitonParams, Trajectory};
use crate::geometry::{central_first, central_second, cumulative_trapezoid, linear_fit, nonuniform_first};

/// Below this norm the direction of the drive vector is undefined.
pub const A_NORM_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticSample {
    /// `a = (alpha + A) C + v`.
    pub a: DVector<f64>,
    pub a_norm: f64,
    pub a_hat: Option<DVector<f64>>,
    /// `<a_hat, T>`.
    pub mu: Option<f64>,
    /// `|a|^4 (1 - mu^2)`.
    pub nu: Option<f64>,
    pub curvature: f64,
    /// `lambda = -<a, T>`, so that `T' = a + lambda T`.
    pub lambda: f64,
    pub v_value: f64,
    pub delta_total: f64,
    pub delta_w: f64,
    /// `<v, C>`.
    pub z: f64,
    /// Null-space component of `C`.
    pub z_part: DVector<f64>,
    /// Range component of `C`.
    pub w_part: DVector<f64>,
}

/// Exponent and bracket of `V = e^{(alpha/2)|C|^2 + <v,C>} <T, A C>`.
fn lyapunov_parts(params: &SolitonParams, state: &PhaseState) -> (f64, DVector<f64>) {
    let c = &state.c;
    let expo = 0.5 * params.alpha() * c.norm_squared() + params.v().dot(c);
    (expo, params.spectrum().apply(c))
}

fn scaled_exp(expo: f64, factor: f64) -> f64 {
    // avoid inf * 0
    if factor == 0.0 {
        0.0
    } else {
        factor * expo.exp()
    }
}

/// The almost-Lyapunov function `V(C, T)`.
pub fn lyapunov_value(params: &SolitonParams, state: &PhaseState) -> f64 {
    let (expo, ac) = lyapunov_parts(params, state);
    scaled_exp(expo, state.t.dot(&ac))
}

/// `dV/ds = e^{(alpha/2)|C|^2 + <v,C>} |p_T(A C)|^2`.
pub fn lyapunov_rate(params: &SolitonParams, state: &PhaseState) -> f64 {
    let (expo, ac) = lyapunov_parts(params, state);
    scaled_exp(expo, tangent_projection(&state.t, &ac).norm_squared())
}

pub fn sample(params: &SolitonParams, state: &PhaseState) -> DiagnosticSample {
    let a = params.drive(&state.c);
    let a_norm = a.norm();
    let lambda = -a.dot(&state.t);
    let curvature = (&a + &state.t * lambda).norm();
    let (a_hat, mu, nu) = if a_norm >= A_NORM_FLOOR {
        let hat = &a / a_norm;
        let mu = hat.dot(&state.t).clamp(-1.0, 1.0);
        // |T - mu a_hat|^2 = 1 - mu^2 without the cancellation near |mu| = 1
        let nu = a_norm.powi(4) * (&state.t - &hat * mu).norm_squared();
        (Some(hat), Some(mu), Some(nu))
    } else {
        (None, None, None)
    };
    let spec = params.spectrum();
    let z_part = spec.null_projector() * &state.c;
    let w_part = &state.c - &z_part;
    DiagnosticSample {
        a_norm,
        a_hat,
        mu,
        nu,
        curvature,
        lambda,
        v_value: lyapunov_value(params, state),
        delta_total: 0.5 * state.c.norm_squared(),
        delta_w: 0.5 * w_part.norm_squared(),
        z: params.v().dot(&state.c),
        z_part,
        w_part,
        a,
    }
}

/// `|dT - (a + lambda T)|`: how well the profile equation holds at a state.
pub fn profile_identity_residual(params: &SolitonParams, state: &PhaseState) -> f64 {
    let (_, dt) = crate::flow::vector_field(params, state);
    let d = sample(params, state);
    (dt - &d.a - &state.t * d.lambda).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualStats {
    pub max: f64,
    pub rms: f64,
    pub count: usize,
    /// Grid spacing used by the finite differences.
    pub h: f64,
}

impl ResidualStats {
    pub fn from_values(values: &[f64], h: f64) -> Self {
        let count = values.len();
        let max = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let rms = if count == 0 {
            0.0
        } else {
            (values.iter().map(|x| x * x).sum::<f64>() / count as f64).sqrt()
        };
        Self { max, rms, count, h }
    }
}

/// Observed convergence order from residuals at spacings `h` and `h/2`.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Finite-difference residual of `delta'' - lambda delta' - 2 alpha delta = |B T|^2`
/// for `delta = |B C|^2 / 2`, evaluated on every `stride`-th sample of a
/// uniformly sampled trajectory.
pub fn distance_ode_residual(traj: &Trajectory, b: &DMatrix<f64>, stride: usize) -> Result<ResidualStats> {
    let params = &traj.params;
    let n = params.dim();
    if b.shape() != (n, n) {
        return Err(Error::Dimension { expected: n, got: b.nrows() });
    }
    let a = params.spectrum().matrix();
    let scale = 1.0 + b.norm() * (1.0 + a.norm());
    if (b * a - a * b).norm() > 1e-10 * scale {
        return Err(Error::InvalidParams("B must commute with A".into()));
    }
    if (b * params.v()).norm() > 1e-10 * scale * (1.0 + params.v().norm()) {
        return Err(Error::InvalidParams("B must annihilate v".into()));
    }
    let h0 = traj
        .uniform_spacing(1e-8)
        .ok_or_else(|| Error::NonUniform("distance residual needs a uniform s-grid".into()))?;
    let stride = stride.max(1);
    let h = h0 * stride as f64;
    let picked: Vec<_> = traj.samples.iter().step_by(stride).collect();
    let delta: Vec<f64> = picked.iter().map(|x| 0.5 * (b * &x.state.c).norm_squared()).collect();
    let d1 = central_first(&delta, h);
    let d2 = central_second(&delta, h);
    let res: Vec<f64> = (0..d1.len())
        .map(|k| {
            let x = picked[k + 1];
            let bt = (b * &x.state.t).norm_squared();
            d2[k] - x.diag.lambda * d1[k] - 2.0 * params.alpha() * delta[k + 1] - bt
        })
        .collect();
    Ok(ResidualStats::from_values(&res, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `alpha >= 0`, `v = 0`: expanding and/or rotating.
    NonShrinking,
    /// `alpha = 0`, `v != 0`.
    TranslatingRotating,
    Shrinking,
}

impl Regime {
    pub fn of(params: &SolitonParams) -> Self {
        if params.alpha() < 0.0 {
            Regime::Shrinking
        } else if params.is_translating() {
            Regime::TranslatingRotating
        } else {
            Regime::NonShrinking
        }
    }
}

/// Behaviour of a quantity at one end of the trajectory, read outwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EndTrend {
    Growing,
    Decaying,
    Flat,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremaCount {
    pub minima: usize,
    pub maxima: usize,
    pub range: f64,
    pub constant: bool,
    /// Trend towards decreasing `s`, then towards increasing `s`.
    pub ends: (EndTrend, EndTrend),
}

/// Fraction of the span treated as an "end".
pub const END_FRACTION: f64 = 0.2;
/// Hysteresis band relative to the range of the sequence.
pub const HYSTERESIS: f64 = 1e-7;

fn trend(values: &[f64], band: f64) -> EndTrend {
    if values.len() < 2 {
        return EndTrend::Flat;
    }
    let net = values[values.len() - 1] - values[0];
    let up = values.windows(2).all(|w| w[1] - w[0] > -band);
    let down = values.windows(2).all(|w| w[1] - w[0] < band);
    match (up, down) {
        _ if net.abs() <= band => EndTrend::Flat,
        (true, _) if net > 0.0 => EndTrend::Growing,
        (_, true) if net < 0.0 => EndTrend::Decaying,
        _ => EndTrend::Mixed,
    }
}

/// Count strict interior extrema with a hysteresis band.
pub fn count_extrema(values: &[f64]) -> ExtremaCount {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if values.is_empty() { 0.0 } else { hi - lo };
    let magnitude = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let constant = range <= 1e-6 * (1.0 + magnitude);
    let band = HYSTERESIS * range;
    let (mut minima, mut maxima) = (0, 0);
    if !constant && values.len() > 2 {
        let (mut run_lo, mut run_hi) = (values[0], values[0]);
        let mut dir = 0i8;
        let mut ext = values[0];
        for &x in &values[1..] {
            match dir {
                0 => {
                    run_lo = run_lo.min(x);
                    run_hi = run_hi.max(x);
                    if x > run_lo + band {
                        dir = 1;
                        ext = x;
                        if run_lo < values[0] - band {
                            minima += 1;
                        }
                    } else if x < run_hi - band {
                        dir = -1;
                        ext = x;
                        if run_hi > values[0] + band {
                            maxima += 1;
                        }
                    }
                }
                1 => {
                    if x > ext {
                        ext = x;
                    } else if x < ext - band {
                        maxima += 1;
                        dir = -1;
                        ext = x;
                    }
                }
                _ => {
                    if x < ext {
                        ext = x;
                    } else if x > ext + band {
                        minima += 1;
                        dir = 1;
                        ext = x;
                    }
                }
            }
        }
    }
    let m = values.len();
    let k = ((m as f64) * END_FRACTION).ceil() as usize;
    let ends = if constant || m < 4 {
        (EndTrend::Flat, EndTrend::Flat)
    } else {
        let start: Vec<f64> = values[..k].iter().rev().copied().collect();
        (trend(&start, band), trend(&values[m - k..], band))
    };
    ExtremaCount { minima, maxima, range, constant, ends }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub regime: Regime,
    pub norm_c: ExtremaCount,
    pub norm_w: ExtremaCount,
    pub z: Option<ExtremaCount>,
    /// `max |lambda' + |C_ss|^2|` when `alpha = 0`.
    pub lambda_residual: Option<f64>,
    pub violations: Vec<String>,
    pub notes: Vec<String>,
}

/// Which of the monotonicity lemmas hold along the trajectory.
pub fn monotonicity_report(traj: &Trajectory) -> MonotonicityReport {
    let params = &traj.params;
    let regime = Regime::of(params);
    let norms: Vec<f64> = traj.samples.iter().map(|x| x.state.c.norm()).collect();
    let wn: Vec<f64> = traj.samples.iter().map(|x| x.diag.w_part.norm()).collect();
    let norm_c = count_extrema(&norms);
    let norm_w = count_extrema(&wn);
    let z = params
        .is_translating()
        .then(|| count_extrema(&traj.samples.iter().map(|x| x.diag.z).collect::<Vec<_>>()));

    let lambda_residual = (params.alpha() == 0.0 && traj.len() >= 3).then(|| {
        let s: Vec<f64> = traj.samples.iter().map(|x| x.s).collect();
        let lam: Vec<f64> = traj.samples.iter().map(|x| x.diag.lambda).collect();
        nonuniform_first(&s, &lam)
            .iter()
            .zip(&traj.samples[1..])
            .map(|(d, x)| (d + x.diag.curvature.powi(2)).abs())
            .fold(0.0, f64::max)
    });

    let mut violations = Vec::new();
    let mut notes = Vec::new();
    let grows = |e: EndTrend| e == EndTrend::Growing;
    match regime {
        Regime::Shrinking => {
            if norm_c.constant {
                notes.push("degenerate: constant |C|".into());
            }
            notes.push("alpha < 0: the extremum lemmas do not apply".into());
        }
        Regime::NonShrinking => {
            if norm_c.constant {
                notes.push("degenerate: constant |C|".into());
            } else {
                if norm_c.minima > 1 || norm_c.maxima > 0 {
                    violations.push(format!(
                        "|C| has {} minima and {} maxima (expected at most one minimum)",
                        norm_c.minima, norm_c.maxima
                    ));
                }
                if !(grows(norm_c.ends.0) && grows(norm_c.ends.1)) {
                    violations.push(format!("|C| ends not both growing: {:?}", norm_c.ends));
                }
            }
            if !norm_w.constant && (norm_w.minima > 1 || norm_w.maxima > 0) {
                violations.push(format!("|W| has {} minima, {} maxima", norm_w.minima, norm_w.maxima));
            }
        }
        Regime::TranslatingRotating => {
            let zc = z.as_ref().unwrap();
            if zc.minima > 1 || zc.maxima > 0 {
                violations.push(format!("z has {} minima and {} maxima", zc.minima, zc.maxima));
            }
            if matches!(zc.ends.0, EndTrend::Mixed) || matches!(zc.ends.1, EndTrend::Mixed) {
                violations.push(format!("z is not monotone at the ends: {:?}", zc.ends));
            }
            if !norm_w.constant && (norm_w.minima > 1 || norm_w.maxima > 0) {
                violations.push(format!("|W| has {} minima, {} maxima", norm_w.minima, norm_w.maxima));
            }
        }
    }
    MonotonicityReport { regime, norm_c, norm_w, z, lambda_residual, violations, notes }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionProfile {
    pub s: Vec<f64>,
    /// `Phi_1(s) = int_0^s exp(int_0^r lambda) dr`.
    pub phi1: Vec<f64>,
    /// Limits of `Phi_1` towards decreasing and increasing `s` (`None` = infinite).
    pub phi_minus: Option<f64>,
    pub phi_plus: Option<f64>,
    pub strictly_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanarityReport {
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub null_dim: usize,
    pub profile: Option<ProjectionProfile>,
    /// Fitted exponential rates of approach of `Z` to finite endpoints.
    pub endpoint_rates: (Option<f64>, Option<f64>),
}

/// Singular value ratio below which a direction counts as absent.
pub const RANK_THRESHOLD: f64 = 1e-8;

fn end_limit(s: &[f64], phi: &[f64], dphi: &[f64]) -> (Option<f64>, Option<f64>) {
    // Phi_1' = exp(int lambda); a finite limit shows up as exponential decay.
    let m = s.len();
    let k = ((m as f64) * END_FRACTION).ceil() as usize;
    if m < 10 || k < 3 {
        return (None, None);
    }
    let fit = |idx: &[usize]| -> Option<f64> {
        let x: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| dphi[i].ln()).collect();
        linear_fit(&x, &y).map(|(_, slope)| slope)
    };
    let tail: Vec<usize> = (m - k..m).collect();
    let head: Vec<usize> = (0..k).collect();
    let plus = fit(&tail).filter(|r| *r < -1e-3).map(|r| phi[m - 1] + dphi[m - 1] / -r);
    let minus = fit(&head).filter(|r| *r > 1e-3).map(|r| phi[0] - dphi[0] / r);
    (minus, plus)
}

/// Rank of the null-space component `Z` of the samples, and the `Phi_1`
/// projection profile for purely rotating solitons.
pub fn planarity_check(traj: &Trajectory) -> PlanarityReport {
    let params = &traj.params;
    let basis = params.spectrum().null_basis();
    let k = basis.ncols();
    let m = traj.len();
    let mut singular_values = Vec::new();
    let mut rank = 0;
    if k > 0 && m > 1 {
        let coords = DMatrix::from_fn(m, k, |i, j| basis.column(j).dot(&traj.samples[i].state.c));
        let mean = coords.row_mean();
        let centered = DMatrix::from_fn(m, k, |i, j| coords[(i, j)] - mean[j]);
        let svd = SVD::new(centered, false, false);
        singular_values = svd.singular_values.iter().copied().collect();
        singular_values.sort_by(|a, b| b.total_cmp(a));
        let top = singular_values[0];
        rank = singular_values.iter().filter(|&&x| x > RANK_THRESHOLD * top).count();
    }

    let purely_rotating = params.alpha() == 0.0 && !params.is_translating() && !params.spectrum().is_zero();
    let (profile, endpoint_rates) = if purely_rotating && m >= 3 {
        let s: Vec<f64> = traj.samples.iter().map(|x| x.s).collect();
        let lam: Vec<f64> = traj.samples.iter().map(|x| x.diag.lambda).collect();
        let origin = s
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        let int_lam = cumulative_trapezoid(&s, &lam);
        let dphi: Vec<f64> = int_lam.iter().map(|x| (x - int_lam[origin]).exp()).collect();
        let raw = cumulative_trapezoid(&s, &dphi);
        let phi: Vec<f64> = raw.iter().map(|x| x - raw[origin]).collect();
        // Phi_1' underflows on long tails, so judge by the derivative
        let strictly_increasing =
            dphi.iter().all(|d| *d > 0.0) && phi.windows(2).all(|w| w[1] >= w[0]) && phi[m - 1] > phi[0];
        let (phi_minus, phi_plus) = end_limit(&s, &phi, &dphi);

        // Z = Z(0) + Phi_1 Z'(0), so Z - P_+ is proportional to phi_+ - Phi_1.
        let rate = |limit: Option<f64>, idx: Vec<usize>| -> Option<f64> {
            let limit = limit?;
            let pts: Vec<(f64, f64)> = idx
                .into_iter()
                .map(|i| (s[i], (limit - phi[i]).abs()))
                .filter(|(_, d)| *d > 1e-13)
                .map(|(x, d)| (x, d.ln()))
                .collect();
            if pts.len() < 3 {
                return None;
            }
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            linear_fit(&x, &y).map(|(_, slope)| slope)
        };
        let kend = ((m as f64) * END_FRACTION).ceil() as usize;
        let rates = (rate(phi_minus, (0..kend).collect()), rate(phi_plus, (m - kend..m).collect()));
        (
            Some(ProjectionProfile { s, phi1: phi, phi_minus, phi_plus, strictly_increasing }),
            rates,
        )
    } else {
        (None, (None, None))
    };
    PlanarityReport { singular_values, rank, null_dim: k, profile, endpoint_rates }
}

/// Nine-point finite-difference `dV/ds` against the closed-form rate, on a
/// uniformly sampled trajectory. Returns the largest relative mismatch over
/// points where the rate exceeds `floor`, and the largest per-unit-length dip.
pub fn lyapunov_check(traj: &Trajectory, floor: f64) -> Result<(f64, f64)> {
    let h = traj
        .uniform_spacing(1e-8)
        .ok_or_else(|| Error::NonUniform("lyapunov check needs a uniform s-grid".into()))?;
    let v: Vec<f64> = traj.samples.iter().map(|x| x.diag.v_value).collect();
    // rates near the floor need the higher order: five points leave ~1e-3 there
    let fd = crate::geometry::nine_point_first(&v, h);
    let mut worst_rel: f64 = 0.0;
    for (k, d) in fd.iter().enumerate() {
        let x = &traj.samples[k + 4];
        let rate = lyapunov_rate(&traj.params, &x.state);
        if rate > floor {
            worst_rel = worst_rel.max((d - rate).abs() / rate);
        }
    }
    let worst_dip = v
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0) / h)
        .fold(0.0, f64::max);
    Ok((worst_rel, worst_dip))
}
