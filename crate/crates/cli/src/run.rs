//! Mode runners. Each returns its report plus the data files to write;
//! nothing touches the disk until every worker has finished.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;
use soliton_core::asymptotics::{self, perturbation_exit, shoot_trapped_direction, spiral_fit, ShootingMethod};
use soliton_core::compact::{integrate_compactified, CompactState};
use soliton_core::diagnostics::{distance_ode_residual, monotonicity_report, planarity_check};
use soliton_core::export::{write_compact_csv, write_trajectory_csv};
use soliton_core::family::{csf_residual, reference_time, Profile};
use soliton_core::helix::{adjudicate_time_coefficient, integrate_profile_ode};
use soliton_core::{
    classify, integrate, integrate_bidirectional, skew_normal_form, GeneratorRaw, HelixSolution, RegionSpec,
    ShootingOptions, SpiralSign, Trajectory,
};

use crate::config::{self, build_matrix, build_params, Mode, ScenarioConfig, Seed, ShootMethod};
use crate::error::{CliError, CliResult};
use crate::report::Report;

/// A file produced by a run, by name relative to the output directory.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub struct Outcome {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

pub fn execute(cfg: &ScenarioConfig, seed: u64) -> CliResult<Outcome> {
    match cfg.mode {
        Mode::Classify => run_classify(cfg),
        Mode::Helix => run_helix(cfg),
        Mode::Shoot => run_shoot(cfg),
        Mode::Integrate | Mode::Catalog | Mode::Report | Mode::Compact | Mode::FamilyValidate => {
            let seeds = config::seeds(cfg, seed)?;
            if cfg.mode == Mode::Catalog && seeds.iter().any(|s| s.fixture.is_none()) {
                return Err(CliError::Config("catalog mode needs `initial.fixture`".into()));
            }
            let results: Vec<CliResult<Outcome>> = seeds.par_iter().map(|s| run_seed(cfg, s)).collect();
            let mut report = Report::default();
            let mut artifacts = Vec::new();
            for r in results {
                let o = r?;
                report.merge(o.report);
                artifacts.extend(o.artifacts);
            }
            Ok(Outcome { report, artifacts })
        }
    }
}

fn csv_artifact(name: String, traj: &Trajectory) -> CliResult<Artifact> {
    let mut bytes = Vec::new();
    write_trajectory_csv(traj, &mut bytes)?;
    Ok(Artifact { name, bytes })
}

fn integrate_seed(cfg: &ScenarioConfig, seed: &Seed) -> CliResult<Trajectory> {
    let ig = &cfg.integrator;
    let opts = ig.options();
    let tr = if ig.s_backward > 0.0 {
        integrate_bidirectional(&seed.params, &seed.state, ig.s_backward, ig.s_forward, &opts, &[])?
    } else {
        integrate(&seed.params, &seed.state, (0.0, ig.s_forward), &opts)?
    };
    Ok(tr)
}

/// Checks that hold on every orbit: unit tangent and `V` non-decreasing.
fn basic_checks(report: &mut Report, name: &str, tr: &Trajectory) {
    let unit = tr.samples.iter().map(|x| (x.state.t.norm() - 1.0).abs()).fold(0.0, f64::max);
    report.at_most("unit_tangent", name, true, unit, 1e-9);
    let dip = tr
        .samples
        .windows(2)
        .filter(|w| w[1].s > w[0].s)
        .map(|w| {
            let (a, b) = (w[0].diag.v_value, w[1].diag.v_value);
            (a - b).max(0.0) / a.abs().max(1.0) / (w[1].s - w[0].s)
        })
        .fold(0.0, f64::max);
    report.at_most("v_nondecreasing", name, true, dip, 1e-8);
}

fn run_seed(cfg: &ScenarioConfig, seed: &Seed) -> CliResult<Outcome> {
    let mut report = Report::default();
    let mut artifacts = Vec::new();
    let name = &seed.name;
    let file = |suffix: &str| format!("{}_{}{}", cfg.output.prefix, name, suffix);
    match cfg.mode {
        Mode::Compact => {
            let st = CompactState::from_phase(&seed.state);
            let ct = integrate_compactified(&seed.params, &st, (0.0, cfg.integrator.s_forward), &cfg.integrator.options())?;
            let out_of_ball = ct.samples.iter().map(|x| (x.state.p.norm() - 1.0).max(0.0)).fold(0.0, f64::max);
            report.at_most("inside_closed_ball", name, true, out_of_ball, 1e-12);
            if seed.params.alpha() < 0.0 {
                let dip = ct
                    .samples
                    .windows(2)
                    .filter_map(|w| {
                        let (a, b) = (w[0].v_ext?, w[1].v_ext?);
                        let dv = w[1].varsigma - w[0].varsigma;
                        (dv > 0.0).then(|| (a - b).max(0.0) / a.abs().max(1.0) / dv)
                    })
                    .fold(0.0, f64::max);
                report.at_most("extended_v_nondecreasing", name, true, dip, 1e-8);
            }
            if cfg.output.trajectories {
                let mut bytes = Vec::new();
                write_compact_csv(&ct, &mut bytes)?;
                artifacts.push(Artifact { name: file("_compact.csv"), bytes });
            }
        }
        Mode::FamilyValidate => {
            if cfg.integrator.spacing.is_none() {
                return Err(CliError::Config("family-validate needs `integrator.spacing`".into()));
            }
            let fam = cfg.family.clone().unwrap_or_default();
            let tr = integrate_seed(cfg, seed)?;
            let t = fam.time.or_else(|| reference_time(&seed.params)).unwrap_or(0.0);
            let res = csf_residual(&seed.params, &Profile::from_trajectory(&tr)?, t, fam.grid_h)?;
            report.at_most("csf_residual", name, true, res.max, fam.threshold);
            report.detail(&format!("{name}.csf"), &res);
            if cfg.output.trajectories {
                artifacts.push(csv_artifact(file(".csv"), &tr)?);
            }
        }
        Mode::Integrate | Mode::Catalog | Mode::Report => {
            let tr = integrate_seed(cfg, seed)?;
            basic_checks(&mut report, name, &tr);
            if let Some(fx) = &seed.fixture {
                if let Some(cf) = &fx.closed_form {
                    let d = tr.samples.iter().map(|x| cf.defect(&x.state.c)).fold(0.0, f64::max);
                    report.at_most("closed_form_defect", name, true, d, 1e-6);
                }
                if let Some(v) = fx.expected_v {
                    let d = tr.samples.iter().map(|x| (x.diag.v_value - v).abs()).fold(0.0, f64::max);
                    report.at_most("expected_v", name, true, d, 1e-8);
                }
            }
            if cfg.mode == Mode::Report {
                lemma_checks(&mut report, name, &tr)?;
            }
            report.detail(&format!("{name}.termination"), &tr.termination);
            report.detail(&format!("{name}.steps"), &tr.stats);
            if cfg.output.trajectories {
                artifacts.push(csv_artifact(file(".csv"), &tr)?);
            }
        }
        _ => unreachable!("per-seed modes only"),
    }
    Ok(Outcome { report, artifacts })
}

/// The report-only lemma checks: monotonicity, planarity, distance ODEs,
/// approximate Grim Reaper arcs.
fn lemma_checks(report: &mut Report, name: &str, tr: &Trajectory) -> CliResult<()> {
    let params = &tr.params;
    let mono = monotonicity_report(tr);
    report.at_most("monotonicity_violations", name, false, mono.violations.len() as f64, 0.0);
    report.detail(&format!("{name}.monotonicity"), &mono);
    let plan = planarity_check(tr);
    report.detail(
        &format!("{name}.planarity"),
        json!({
            "singular_values": plan.singular_values,
            "rank": plan.rank,
            "null_dim": plan.null_dim,
            "phi1_strictly_increasing": plan.profile.as_ref().map(|p| p.strictly_increasing),
        }),
    );
    if tr.uniform_spacing(1e-8).is_some() {
        let n = params.dim();
        let b = if params.is_translating() {
            params.spectrum().range_projector()
        } else {
            DMatrix::identity(n, n)
        };
        let res = distance_ode_residual(tr, &b, 1)?;
        report.at_most("distance_ode_residual", name, false, res.max, 1e-5);
    }
    let arcs = asymptotics::detect_gr_arcs(tr, asymptotics::default_threshold(params));
    report.detail(&format!("{name}.grim_reaper_arcs"), &arcs);
    Ok(())
}

fn run_classify(cfg: &ScenarioConfig) -> CliResult<Outcome> {
    let g = cfg.generator.as_ref().ok_or_else(|| CliError::Config("classify needs a `generator` block".into()))?;
    let m = build_matrix(&g.m, "generator.m")?;
    if g.v.len() != m.nrows() {
        return Err(CliError::Config(format!("generator.v has {} entries, expected {}", g.v.len(), m.nrows())));
    }
    let raw = GeneratorRaw::new(g.theta, DVector::from_column_slice(&g.v), g.w, m)?;
    let canon = classify(&raw).map_err(|e| match e {
        soliton_core::Error::TrivialGenerator | soliton_core::Error::NotSkew { .. } => CliError::Config(e.to_string()),
        e => CliError::Core(e),
    })?;
    let mut report = Report::default();
    let back = canon.reconstruct_raw().distance_to(&raw);
    report.at_most("conjugation_recovers_generator", "generator", true, back, 1e-10);
    report.detail("category", canon.category.to_string());
    report.detail("canonical", &canon);
    let bytes = serde_json::to_vec_pretty(&json!({ "category": canon.category.to_string(), "canonical": canon }))?;
    Ok(Outcome { report, artifacts: vec![Artifact { name: "classification.json".into(), bytes }] })
}

fn run_helix(cfg: &ScenarioConfig) -> CliResult<Outcome> {
    let h = cfg.helix.as_ref().ok_or_else(|| CliError::Config("helix needs a `helix` block".into()))?;
    let m = build_matrix(&h.matrix, "helix.matrix")?;
    let n = m.nrows();
    if h.c0.len() != n {
        return Err(CliError::Config(format!("helix.c0 has {} entries, expected {n}", h.c0.len())));
    }
    let v = h.v.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(n));
    if v.len() != n {
        return Err(CliError::Config(format!("helix.v has {} entries, expected {n}", v.len())));
    }
    let spec = skew_normal_form(&m).map_err(|e| CliError::Config(format!("helix.matrix: {e}")))?;
    let sol = HelixSolution::from_initial(spec.clone(), &DVector::from_column_slice(&h.c0), v.clone(), h.time_shift)
        .map_err(|e| CliError::Config(format!("helix: {e}")))?;
    let t0 = sol.time_of_tau(0.0);
    let t1 = match sol.singular_time() {
        Some(ts) => t0 + h.window.min(0.9 * (ts - t0)),
        None => t0 + h.window,
    };
    let track = integrate_profile_ode(&spec, &v, &sol.profile(0.0), t0, t1, 1e-12)?;
    let mut report = Report::default();
    let mut dev: f64 = 0.0;
    let mut radius_law: f64 = 0.0;
    for (t, c) in &track {
        dev = dev.max((sol.profile_at_time(*t)? - c).norm());
        if let Some(ts) = sol.singular_time() {
            radius_law = radius_law.max((c.norm_squared() - 2.0 * (ts - t)).abs());
        }
    }
    report.at_most("closed_form_vs_profile_ode", "helix", true, dev, 1e-6);
    if sol.singular_time().is_some() {
        report.at_most("radius_law", "helix", true, radius_law, 1e-8);
    }
    let verdict = adjudicate_time_coefficient(&sol, h.window)?;
    report.detail("time_coefficient", &verdict);
    report.detail("backward_radius_candidates", sol.backward_radius_candidates());
    let rows: String = std::iter::once("t,".to_string() + &(1..=n).map(|i| format!("C_{i}")).collect::<Vec<_>>().join(","))
        .chain(track.iter().map(|(t, c)| {
            std::iter::once(*t).chain(c.iter().copied()).map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
        }))
        .map(|l| l + "\n")
        .collect();
    Ok(Outcome { report, artifacts: vec![Artifact { name: "helix_profile.csv".into(), bytes: rows.into_bytes() }] })
}

fn run_shoot(cfg: &ScenarioConfig) -> CliResult<Outcome> {
    let sh = cfg.shoot.as_ref().ok_or_else(|| CliError::Config("shoot needs a `shoot` block".into()))?;
    let params = build_params(cfg.params.as_ref().ok_or_else(|| CliError::Config("missing `params` block".into()))?)?;
    if sh.c0.len() != params.dim() {
        return Err(CliError::Config(format!("shoot.c0 has {} entries, expected {}", sh.c0.len(), params.dim())));
    }
    if params.alpha() >= 0.0 {
        return Err(CliError::Config("shoot needs alpha < 0".into()));
    }
    let spec = RegionSpec::new(cfg.region_k.unwrap_or(10.0)).map_err(|e| CliError::Config(e.to_string()))?;
    let c0 = DVector::from_column_slice(&sh.c0);
    let opts = ShootingOptions {
        method: match sh.method {
            ShootMethod::ReverseFlow => ShootingMethod::ReverseFlow,
            ShootMethod::ForwardCap => ShootingMethod::ForwardCap,
        },
        horizon: sh.horizon,
        cap_factor: sh.cap_factor,
        forward_search: sh.forward_search,
        ..Default::default()
    };
    let res = shoot_trapped_direction(&params, &c0, &spec, &opts)?;
    let mut report = Report::default();
    report.at_least("trapped_span", "shoot", true, res.span, sh.horizon);
    let exit = perturbation_exit(&params, &c0, &res.t0, &spec, sh.perturbation, sh.horizon)?;
    report.at_most("perturbation_exits", "shoot", false, exit, sh.horizon * (1.0 - 1e-12));
    let mut artifacts = Vec::new();
    if let Some(orbit) = &res.orbit {
        match spiral_fit(orbit, &spec, SpiralSign::Reversed) {
            Ok(fit) => {
                report.at_least("spiral_residual_decays", "shoot", false, fit.decay_rate.unwrap_or(f64::NAN), 0.0);
                report.detail("spiral_decay_rate", fit.decay_rate);
                report.detail("spiral_gamma", fit.gamma.as_slice());
            }
            Err(e) => report.detail("spiral_fit_error", e.to_string()),
        }
        if cfg.output.trajectories {
            artifacts.push(csv_artifact(format!("{}_orbit.csv", cfg.output.prefix), orbit)?);
        }
    }
    let summary = json!({
        "c0": res.c0.as_slice(),
        "t0": res.t0.as_slice(),
        "span": res.span,
        "reached_horizon": res.reached_horizon,
        "method": res.method,
        "cap": res.cap,
        "cap_offset": res.cap_offset,
        "forward_exit_span": res.forward_exit_span,
        "perturbation_exit_span": exit,
        "hit_residuals": res.hit_residuals,
        "candidates": res.candidates,
    });
    artifacts.push(Artifact { name: "shooting.json".into(), bytes: serde_json::to_vec_pretty(&summary)? });
    Ok(Outcome { report, artifacts })
}
