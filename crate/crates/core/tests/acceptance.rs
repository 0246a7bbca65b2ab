//! Acceptance gate: every primary criterion at its pinned tolerance, one
//! PASS/FAIL line each (written straight to stderr so it survives capture).

use std::io::Write;

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use soliton_core::asymptotics::{perturbation_exit, region_of, shoot_trapped_direction, spiral_fit};
use soliton_core::catalog::{make, FixtureParams, Label};
use soliton_core::diagnostics::{
    distance_ode_residual, lyapunov_check, monotonicity_report, observed_order, planarity_check, EndTrend,
};
use soliton_core::family::{csf_residual, reference_time, Profile};
use soliton_core::helix::{adjudicate_time_coefficient, integrate_profile_ode};
use soliton_core::{
    integrate, integrate_bidirectional, integrate_in_sigma, skew_from_planes, skew_normal_form, HelixSolution,
    IntegrateOptions, PhaseState, Region, RegionSpec, ShootingOptions, SolitonParams, SpiralSign, TimeCoefficient,
    Trajectory,
};

type Outcome = Result<String, String>;

fn dv(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn params(n: usize, alpha: f64, planes: &[(f64, usize, usize)], v: DVector<f64>) -> SolitonParams {
    SolitonParams::from_matrix(alpha, &skew_from_planes(n, planes).unwrap(), v).unwrap()
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn circle_invariance() -> Outcome {
    let fx = make(Label::ShrinkingCircle, &FixtureParams { dim: 2, alpha: -1.0, omega: 1.0, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let opts = IntegrateOptions { tol: 1e-12, ..Default::default() };
    let tr = integrate(&fx.params, &fx.initial_state, (0.0, 100.0), &opts).map_err(|e| e.to_string())?;
    let radius = tr.samples.iter().map(|x| (x.state.c.norm() - 1.0).abs()).fold(0.0, f64::max);
    let v: Vec<f64> = tr.samples.iter().map(|x| x.diag.v_value).collect();
    let spread = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - v.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let expected = (-0.5f64).exp();
    let off = v.iter().map(|x| (x - expected).abs()).fold(0.0, f64::max);
    ensure(
        radius < 1e-6 && spread < 1e-6 && off < 1e-8,
        format!("max||C|-1| = {radius:.2e}, V spread = {spread:.2e}, |V - e^-1/2| = {off:.2e}"),
    )
}

fn random_rotation_planes(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, usize, usize)> {
    (0..n / 2).map(|j| (rng.gen_range(0.2..2.5), 2 * j, 2 * j + 1)).collect()
}

fn lyapunov_suite() -> Outcome {
    let cases: Vec<(usize, f64, Vec<(f64, usize, usize)>, DVector<f64>, DVector<f64>)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        (0..100)
            .map(|k| {
                let n = 2 + k % 3;
                let alpha = rng.gen_range(-2.0..-0.25);
                let planes = random_rotation_planes(&mut rng, n);
                let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
                let t = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                (n, alpha, planes, c, t)
            })
            .collect()
    };
    let results: Vec<Result<(f64, f64), String>> = cases
        .par_iter()
        .map(|(n, alpha, planes, c, t)| {
            let p = params(*n, *alpha, planes, DVector::zeros(*n));
            let st = PhaseState::normalized(c.clone(), t.clone()).map_err(|e| e.to_string())?;
            let opts = IntegrateOptions { tol: 1e-13, ..Default::default() }.with_spacing(0.004);
            let tr = integrate(&p, &st, (0.0, 10.0), &opts).map_err(|e| e.to_string())?;
            lyapunov_check(&tr, 1e-8).map_err(|e| e.to_string())
        })
        .collect();
    let mut worst_rel: f64 = 0.0;
    let mut worst_dip: f64 = 0.0;
    for r in results {
        let (rel, dip) = r?;
        worst_rel = worst_rel.max(rel);
        worst_dip = worst_dip.max(dip);
    }
    ensure(
        worst_dip <= 1e-8 && worst_rel <= 1e-4,
        format!("100 orbits: worst dip = {worst_dip:.2e}/unit s, worst rate mismatch = {worst_rel:.2e}"),
    )
}

fn distance_odes() -> Outcome {
    let cases = [
        ("rotating-translating", params(3, 0.0, &[(1.0, 0, 1)], dv(&[0.0, 0.0, 1.0])), dv(&[0.8, 0.0, 0.0]), dv(&[0.0, 1.0, 0.4])),
        ("shrinking-rotating", params(3, -0.5, &[(1.0, 0, 1)], DVector::zeros(3)), dv(&[1.2, -0.4, 0.6]), dv(&[0.3, 1.0, -0.2])),
    ];
    let mut msg = Vec::new();
    let mut ok = true;
    for (name, p, c, t) in cases {
        let st = PhaseState::normalized(c, t).map_err(|e| e.to_string())?;
        let opts = IntegrateOptions { tol: 1e-13, ..Default::default() }.with_spacing(5e-4);
        let tr = integrate_bidirectional(&p, &st, 3.0, 3.0, &opts, &[]).map_err(|e| e.to_string())?;
        let id = DMatrix::identity(3, 3);
        let range = p.spectrum().range_projector();
        // C-ode needs B v = 0
        let b_c = if p.is_translating() { &range } else { &id };
        let c_fine = distance_ode_residual(&tr, b_c, 1).map_err(|e| e.to_string())?;
        let c_coarse = distance_ode_residual(&tr, b_c, 2).map_err(|e| e.to_string())?;
        let w_fine = distance_ode_residual(&tr, &range, 1).map_err(|e| e.to_string())?;
        let w_coarse = distance_ode_residual(&tr, &range, 2).map_err(|e| e.to_string())?;
        let (oc, ow) = (observed_order(c_coarse.max, c_fine.max), observed_order(w_coarse.max, w_fine.max));
        let good = c_fine.max < 1e-6 && w_fine.max < 1e-5 && (1.7..2.3).contains(&oc) && (1.7..2.3).contains(&ow);
        ok &= good;
        msg.push(format!(
            "{name}: |C| res {:.2e} (order {oc:.2}), |W| res {:.2e} (order {ow:.2})",
            c_fine.max, w_fine.max
        ));
    }
    ensure(ok, msg.join("; "))
}

fn grim_reaper_exactness() -> Outcome {
    let p = SolitonParams::from_matrix(0.0, &DMatrix::zeros(2, 2), dv(&[0.0, 1.0])).map_err(|e| e.to_string())?;
    // start off the tip, then align
    let st = PhaseState::normalized(dv(&[1.0, 2.0]), dv(&[0.4f64.cos(), 0.4f64.sin()])).map_err(|e| e.to_string())?;
    let opts = IntegrateOptions { tol: 1e-13, ..Default::default() }.with_spacing(1e-3);
    let tr = integrate_bidirectional(&p, &st, 6.0, 5.0, &opts, &[]).map_err(|e| e.to_string())?;
    let k = tr.samples.windows(2).position(|w| w[0].state.t[1] < 0.0 && w[1].state.t[1] >= 0.0).ok_or("no tip")?;
    let (mut lo, mut hi) = (tr.samples[k].s, tr.samples[k + 1].s);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if tr.state_at(mid).unwrap().t[1] < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tip = tr.state_at(0.5 * (lo + hi)).unwrap().c;
    let mut worst: f64 = 0.0;
    for x in &tr.samples {
        let c = &x.state.c - &tip;
        if c[0].abs() < 1.5 {
            worst = worst.max((c[1] + c[0].cos().ln()).abs());
        }
    }
    let prof = Profile::from_trajectory(&tr).map_err(|e| e.to_string())?;
    let csf = csf_residual(&p, &prof, 0.0, 1e-3).map_err(|e| e.to_string())?;
    ensure(
        worst < 1e-6 && csf.max < 1e-4,
        format!("max|y + ln cos x| = {worst:.2e} (|x| < 1.5), csf residual = {:.2e}", csf.max),
    )
}

fn family_self_similarity() -> Outcome {
    let cases = [
        ("rotating-translating", params(3, 0.0, &[(1.0, 0, 1)], dv(&[0.0, 0.0, 1.0])), dv(&[0.5, 0.0, 0.0]), dv(&[0.0, 1.0, 0.3])),
        ("rotating-shrinking", params(3, -0.5, &[(1.0, 0, 1)], DVector::zeros(3)), dv(&[1.0, 0.3, 0.5]), dv(&[-0.2, 1.0, 0.4])),
    ];
    let mut out = Vec::new();
    let mut ok = true;
    for (name, p, c, t) in cases {
        let st = PhaseState::normalized(c, t).map_err(|e| e.to_string())?;
        let opts = IntegrateOptions { tol: 1e-12, ..Default::default() }.with_spacing(1e-3);
        let tr = integrate_bidirectional(&p, &st, 2.0, 2.0, &opts, &[]).map_err(|e| e.to_string())?;
        let t0 = reference_time(&p).unwrap_or(0.0);
        let r = csf_residual(&p, &Profile::from_trajectory(&tr).map_err(|e| e.to_string())?, t0, 1e-3)
            .map_err(|e| e.to_string())?;
        ok &= r.max < 1e-4;
        out.push(format!("{name}: {:.2e}", r.max));
    }
    ensure(ok, format!("csf residual {}", out.join(", ")))
}

fn helix_correspondence() -> Outcome {
    let mut msg = Vec::new();
    let mut ok = true;
    // v = 0 in R^4, two frequencies, singular time 1
    let m = skew_from_planes(4, &[(1.0, 0, 1), (2.0, 2, 3)]).unwrap();
    let spec = skew_normal_form(&m).map_err(|e| e.to_string())?;
    let sol = HelixSolution::from_initial(spec.clone(), &dv(&[1.0, 0.0, 0.5, 0.0]), DVector::zeros(4), 1.0)
        .map_err(|e| e.to_string())?;
    let t0 = sol.time_of_tau(0.0);
    let track = integrate_profile_ode(&spec, &DVector::zeros(4), &sol.profile(0.0), t0, t0 + 0.5, 1e-12)
        .map_err(|e| e.to_string())?;
    let (mut dev, mut law): (f64, f64) = (0.0, 0.0);
    for (t, c) in &track {
        dev = dev.max((sol.profile_at_time(*t).map_err(|e| e.to_string())? - c).norm());
        law = law.max((c.norm_squared() - 2.0 * (1.0 - t)).abs());
    }
    ok &= dev < 1e-6 && law < 1e-8;
    msg.push(format!("v=0: closed form vs ODE {dev:.2e}, |C0|^2 - 2(T-t) {law:.2e}"));
    // v != 0 in R^5
    let m5 = skew_from_planes(5, &[(1.0, 0, 1), (1.5, 2, 3)]).unwrap();
    let spec5 = skew_normal_form(&m5).map_err(|e| e.to_string())?;
    let v = dv(&[0.0, 0.0, 0.0, 0.0, 0.7]);
    let sol5 = HelixSolution::from_initial(spec5.clone(), &dv(&[0.6, 0.2, -0.4, 0.3, 0.0]), v.clone(), 0.0)
        .map_err(|e| e.to_string())?;
    let t5 = sol5.time_of_tau(0.0);
    let track5 =
        integrate_profile_ode(&spec5, &v, &sol5.profile(0.0), t5, t5 + 2.0, 1e-12).map_err(|e| e.to_string())?;
    let mut dev5: f64 = 0.0;
    for (t, c) in &track5 {
        dev5 = dev5.max((sol5.profile_at_time(*t).map_err(|e| e.to_string())? - c).norm());
    }
    ok &= dev5 < 1e-6;
    msg.push(format!("v!=0: {dev5:.2e}"));
    let verdict = adjudicate_time_coefficient(&sol, 0.5).map_err(|e| e.to_string())?;
    ok &= verdict.confirmed == TimeCoefficient::Half && verdict.distinguishable;
    msg.push(format!(
        "t-tau coefficient: {:?} (deviation {:.2e} vs omega/2 {:.2e})",
        verdict.confirmed, verdict.deviation_half, verdict.deviation_omega_over_two
    ));
    ensure(ok, msg.join("; "))
}

fn spiral_asymptotics() -> Outcome {
    let p = params(3, 1.0, &[(1.0, 0, 1)], DVector::zeros(3));
    let spec = RegionSpec::calibrated(&p);
    let st = PhaseState::normalized(dv(&[1.0, 0.5, 0.3]), dv(&[0.2, -0.6, 1.0])).map_err(|e| e.to_string())?;
    // a generic orbit first, until it settles into R+(K)
    let pre = integrate(&p, &st, (0.0, 40.0), &IntegrateOptions { norm_cap: 1e3, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let entry = pre
        .samples
        .iter()
        .rposition(|x| region_of(&x.diag, &spec) != Region::Plus)
        .map_or(0, |i| i + 1);
    let start = pre.samples.get(entry).ok_or("orbit never entered R+(K)")?;
    let opts = IntegrateOptions { tol: 1e-12, norm_cap: f64::INFINITY, ..Default::default() }.with_spacing(0.05);
    let tail = integrate_in_sigma(&p, &start.state, (start.sigma, 15.0), &opts).map_err(|e| e.to_string())?;
    let fit = spiral_fit(&tail, &spec, SpiralSign::Forward).map_err(|e| e.to_string())?;
    let rate = fit.decay_rate.ok_or("too few residual samples above the noise floor")?;
    let converging = fit.cauchy_converging();
    ensure(
        converging && (rate - 1.0).abs() <= 0.2,
        format!(
            "entered R+ at sigma = {:.2}, |C(15)| = {:.2e}, Cauchy converging = {converging}, decay rate = {rate:.4} ({} samples)",
            start.sigma,
            tail.samples.last().unwrap().state.c.norm(),
            fit.fit_samples
        ),
    )
}

fn monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut msg = Vec::new();
    let mut ok = true;
    let mut count = 0;
    for &alpha in &[0.0, 0.5] {
        for _ in 0..5 {
            let p = params(3, alpha, &[(rng.gen_range(0.5..2.0), 0, 1)], DVector::zeros(3));
            let c = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let t = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let st = PhaseState::normalized(c, t).map_err(|e| e.to_string())?;
            let tr = integrate_bidirectional(&p, &st, 30.0, 30.0, &IntegrateOptions::default().with_spacing(0.01), &[])
                .map_err(|e| e.to_string())?;
            let rep = monotonicity_report(&tr);
            let good = rep.norm_c.minima <= 1 && rep.norm_c.ends == (EndTrend::Growing, EndTrend::Growing);
            ok &= good;
            count += 1;
            if !good {
                msg.push(format!("alpha={alpha}: {} minima, ends {:?}", rep.norm_c.minima, rep.norm_c.ends));
            }
        }
    }
    let mut zmax = 0;
    for k in 0..5 {
        let p = params(3, 0.0, &[(1.0, 0, 1)], dv(&[0.0, 0.0, 1.0]));
        let th = k as f64;
        let st = PhaseState::normalized(dv(&[0.3 * th, 0.5, -0.2]), dv(&[th.cos(), th.sin(), 0.5 - 0.2 * th]))
            .map_err(|e| e.to_string())?;
        let tr = integrate_bidirectional(&p, &st, 20.0, 20.0, &IntegrateOptions::default().with_spacing(0.01), &[])
            .map_err(|e| e.to_string())?;
        let z = monotonicity_report(&tr).z.ok_or("translating run without z")?;
        zmax = zmax.max(z.minima);
    }
    ok &= zmax <= 1;
    msg.insert(0, format!("{count} non-shrinking rotating runs, max z minima over 5 translating runs = {zmax}"));
    ensure(ok, msg.join("; "))
}

fn planarity() -> Outcome {
    // dilating-rotating, rank-2 A in R^5
    let p5 = params(5, 0.5, &[(1.0, 0, 1)], DVector::zeros(5));
    let st = PhaseState::normalized(dv(&[0.5, 0.2, 1.0, -0.7, 0.4]), dv(&[0.1, 0.9, -0.3, 0.5, 0.6]))
        .map_err(|e| e.to_string())?;
    let tr = integrate_bidirectional(&p5, &st, 4.0, 4.0, &IntegrateOptions::default(), &[]).map_err(|e| e.to_string())?;
    let sv = planarity_check(&tr).singular_values;
    let ratio5 = sv[2] / sv[0];
    // purely rotating R^3: Z in ambient coordinates spans a line
    let p3 = params(3, 0.0, &[(1.0, 0, 1)], DVector::zeros(3));
    let st3 = PhaseState::normalized(dv(&[0.8, -0.3, 0.2]), dv(&[0.2, 0.6, 0.7])).map_err(|e| e.to_string())?;
    let tr3 = integrate_bidirectional(&p3, &st3, 20.0, 20.0, &IntegrateOptions::default(), &[]).map_err(|e| e.to_string())?;
    let ratio3 = ambient_ratio(&tr3);
    let rep3 = planarity_check(&tr3);
    let incr = rep3.profile.as_ref().is_some_and(|p| p.strictly_increasing);
    // the same statement with a 3-dimensional null space
    let p5r = params(5, 0.0, &[(1.3, 1, 3)], DVector::zeros(5));
    let st5r = PhaseState::normalized(dv(&[0.4, 0.5, -0.2, 0.1, 0.9]), dv(&[0.7, -0.1, 0.3, 0.6, -0.2]))
        .map_err(|e| e.to_string())?;
    let tr5r = integrate_bidirectional(&p5r, &st5r, 20.0, 20.0, &IntegrateOptions::default(), &[]).map_err(|e| e.to_string())?;
    let ratio5r = ambient_ratio(&tr5r);
    let incr5r = planarity_check(&tr5r).profile.is_some_and(|p| p.strictly_increasing);
    ensure(
        ratio5 < 1e-8 && ratio3 < 1e-8 && incr && ratio5r < 1e-8 && incr5r,
        format!(
            "R^5 dilating sv3/sv1 = {ratio5:.2e}; R^3 rotating sv2/sv1 = {ratio3:.2e}, Phi1 increasing = {incr}; \
             R^5 rotating sv2/sv1 = {ratio5r:.2e}, Phi1 increasing = {incr5r}"
        ),
    )
}

/// Second over first singular value of the centered null-space parts, in ambient coordinates.
fn ambient_ratio(tr: &Trajectory) -> f64 {
    let n = tr.dim();
    let m = tr.len();
    let z = DMatrix::from_fn(m, n, |i, j| tr.samples[i].diag.z_part[j]);
    let mean = z.row_mean();
    let centered = DMatrix::from_fn(m, n, |i, j| z[(i, j)] - mean[j]);
    let mut sv: Vec<f64> = SVD::new(centered, false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv[1] / sv[0]
}

fn shooting() -> Outcome {
    let spec = RegionSpec::new(10.0).map_err(|e| e.to_string())?;
    let cases = [
        (params(2, -1.0, &[(1.0, 0, 1)], DVector::zeros(2)), dv(&[50.0, 0.0])),
        (params(3, -1.0, &[(1.0, 0, 1)], DVector::zeros(3)), dv(&[30.0, 0.0, 40.0])),
    ];
    let mut msg = Vec::new();
    let mut ok = true;
    for (p, c0) in cases {
        let n = p.dim();
        let res = shoot_trapped_direction(&p, &c0, &spec, &ShootingOptions::default()).map_err(|e| e.to_string())?;
        let orbit = res.orbit.as_ref().ok_or("no orbit")?;
        let fit = spiral_fit(orbit, &spec, SpiralSign::Reversed).map_err(|e| e.to_string())?;
        let rate = fit.decay_rate.unwrap_or(f64::NAN);
        let exit = perturbation_exit(&p, &c0, &res.t0, &spec, 0.1, 50.0).map_err(|e| e.to_string())?;
        let good = res.span >= 50.0 && rate > 0.0 && exit < 50.0;
        ok &= good;
        let best_forward = res.candidates.iter().map(|c| c.exit_span).fold(0.0, f64::max);
        msg.push(format!(
            "n={n}: trapped span {:.1}, spiral residual decay rate {rate:.3}, 0.1 rad perturbation exits at s = {exit:.3} \
             (longest forward-only candidate {best_forward:.3})",
            res.span
        ));
    }
    ensure(ok, msg.join("; "))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("circle soliton invariance", circle_invariance),
        ("lyapunov suite", lyapunov_suite),
        ("distance-ODE residuals", distance_odes),
        ("grim reaper exactness", grim_reaper_exactness),
        ("family self-similarity", family_self_similarity),
        ("helix correspondence", helix_correspondence),
        ("spiral asymptotics", spiral_asymptotics),
        ("monotonicity lemmas", monotonicity),
        ("planarity", planarity),
        ("shooting", shooting),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr().lock();
    for (name, run) in criteria {
        let start = std::time::Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match &outcome {
            Ok(m) => writeln!(err, "PASS [{name}] {m} ({secs:.1}s)").unwrap(),
            Err(m) => {
                writeln!(err, "FAIL [{name}] {m} ({secs:.1}s)").unwrap();
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
