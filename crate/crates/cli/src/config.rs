//! Scenario configuration: JSON schema and validation into core types.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use soliton_core::catalog::{make, FixtureParams, Label, NamedSoliton};
use soliton_core::{skew_from_planes, IntegrateOptions, PhaseState, SolitonParams};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Classify,
    Helix,
    Integrate,
    Compact,
    FamilyValidate,
    Shoot,
    Catalog,
    Report,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    #[serde(default)]
    pub params: Option<ParamsBlock>,
    #[serde(default)]
    pub initial: Option<InitialBlock>,
    #[serde(default)]
    pub integrator: IntegratorBlock,
    /// Threshold `K` of the regions `R+-(K)`.
    #[serde(default)]
    pub region_k: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub generator: Option<GeneratorBlock>,
    #[serde(default)]
    pub helix: Option<HelixBlock>,
    #[serde(default)]
    pub shoot: Option<ShootBlock>,
    #[serde(default)]
    pub family: Option<FamilyBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    pub alpha: f64,
    pub matrix: MatrixSpec,
    #[serde(default)]
    pub v: Option<Vec<f64>>,
}

/// Either `dense` rows, or `planes` plus `null_dim` in block normal form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    #[serde(default)]
    pub dense: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub planes: Option<Vec<PlaneSpec>>,
    #[serde(default)]
    pub null_dim: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub omega: f64,
    pub axis_pair: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    #[serde(default)]
    pub explicit: Option<Vec<StateSpec>>,
    #[serde(default)]
    pub fixture: Option<FixtureSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub c: Vec<f64>,
    pub t: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub label: Label,
    #[serde(default)]
    pub params: Option<FixtureParams>,
}

/// `count` random seeds: `C` uniform in `[-c_scale, c_scale]^n`, `T` uniform on the sphere.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub count: usize,
    #[serde(default = "one")]
    pub c_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorBlock {
    pub tol: f64,
    pub s_forward: f64,
    pub s_backward: f64,
    /// Uniform output spacing in `s`; needed by the finite-difference checks.
    pub spacing: Option<f64>,
    pub norm_cap: f64,
    pub max_steps: usize,
}

impl Default for IntegratorBlock {
    fn default() -> Self {
        let d = IntegrateOptions::default();
        Self { tol: d.tol, s_forward: 10.0, s_backward: 0.0, spacing: None, norm_cap: d.norm_cap, max_steps: 2_000_000 }
    }
}

impl IntegratorBlock {
    pub fn options(&self) -> IntegrateOptions {
        IntegrateOptions {
            tol: self.tol,
            sample_spacing: self.spacing,
            norm_cap: self.norm_cap,
            max_steps: self.max_steps,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub prefix: String,
    pub trajectories: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { prefix: "trajectory".into(), trajectories: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorBlock {
    pub theta: f64,
    pub v: Vec<f64>,
    pub w: f64,
    pub m: MatrixSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelixBlock {
    pub matrix: MatrixSpec,
    pub c0: Vec<f64>,
    #[serde(default)]
    pub v: Option<Vec<f64>>,
    /// Singular time when `v = 0`.
    #[serde(default)]
    pub time_shift: f64,
    #[serde(default = "half")]
    pub window: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShootMethod {
    ReverseFlow,
    ForwardCap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootBlock {
    pub c0: Vec<f64>,
    #[serde(default = "fifty")]
    pub horizon: f64,
    #[serde(default = "reverse")]
    pub method: ShootMethod,
    #[serde(default = "one")]
    pub cap_factor: f64,
    #[serde(default = "yes")]
    pub forward_search: bool,
    /// Rotation angle of the perturbed direction, radians.
    #[serde(default = "tenth")]
    pub perturbation: f64,
}

fn fifty() -> f64 {
    50.0
}
fn reverse() -> ShootMethod {
    ShootMethod::ReverseFlow
}
fn yes() -> bool {
    true
}
fn tenth() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyBlock {
    /// Evaluation time; defaults to `1/(2 alpha)` for dilating families, 0 otherwise.
    pub time: Option<f64>,
    pub grid_h: f64,
    pub threshold: f64,
}

impl Default for FamilyBlock {
    fn default() -> Self {
        Self { time: None, grid_h: 1e-3, threshold: 1e-4 }
    }
}

pub fn parse(text: &str) -> CliResult<ScenarioConfig> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid scenario: {e}")))
}

pub fn build_matrix(spec: &MatrixSpec, what: &str) -> CliResult<DMatrix<f64>> {
    match (&spec.dense, &spec.planes) {
        (Some(rows), None) => {
            if spec.null_dim.is_some() {
                return Err(CliError::Config(format!("{what}: null_dim only goes with planes")));
            }
            let n = rows.len();
            if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
                return Err(CliError::Config(format!("{what}: row {i} has {} entries, expected {n}", r.len())));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        }
        (None, Some(planes)) => {
            let n = 2 * planes.len() + spec.null_dim.unwrap_or(0);
            let list: Vec<(f64, usize, usize)> =
                planes.iter().map(|p| (p.omega, p.axis_pair[0], p.axis_pair[1])).collect();
            skew_from_planes(n, &list).map_err(|e| CliError::Config(format!("{what}: {e}")))
        }
        _ => Err(CliError::Config(format!("{what}: give exactly one of `dense` or `planes`"))),
    }
}

pub fn build_params(block: &ParamsBlock) -> CliResult<SolitonParams> {
    let m = build_matrix(&block.matrix, "params.matrix")?;
    let n = m.nrows();
    let v = match &block.v {
        Some(v) if v.len() != n => {
            return Err(CliError::Config(format!("params.v has {} entries, the matrix is {n}x{n}", v.len())))
        }
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(n),
    };
    let av = (&m * &v).norm();
    if av > 1e-12 * (1.0 + m.norm() * v.norm()) {
        return Err(CliError::Config(format!(
            "params: the translation must satisfy A v = 0, but |A v| = {av:.3e} (v must lie in the null space of the rotation)"
        )));
    }
    SolitonParams::from_matrix(block.alpha, &m, v).map_err(|e| CliError::Config(format!("params: {e}")))
}

/// A named starting point of a run.
#[derive(Debug, Clone)]
pub struct Seed {
    pub name: String,
    pub params: SolitonParams,
    pub state: PhaseState,
    pub fixture: Option<NamedSoliton>,
}

pub fn seeds(cfg: &ScenarioConfig, seed: u64) -> CliResult<Vec<Seed>> {
    let init = cfg.initial.as_ref().ok_or_else(|| CliError::Config("this mode needs an `initial` block".into()))?;
    let given = [init.explicit.is_some(), init.fixture.is_some(), init.grid.is_some()];
    if given.iter().filter(|x| **x).count() != 1 {
        return Err(CliError::Config("initial: give exactly one of `explicit`, `fixture`, `grid`".into()));
    }
    if let Some(fx) = &init.fixture {
        if cfg.params.is_some() {
            return Err(CliError::Config("initial.fixture carries its own parameters; drop `params`".into()));
        }
        let fp = fx.params.unwrap_or_else(|| FixtureParams::for_label(fx.label));
        let named = make(fx.label, &fp).map_err(|e| CliError::Config(format!("initial.fixture: {e}")))?;
        return Ok(vec![Seed {
            name: fx.label.to_string(),
            params: named.params.clone(),
            state: named.initial_state.clone(),
            fixture: Some(named),
        }]);
    }
    let params = build_params(cfg.params.as_ref().ok_or_else(|| CliError::Config("missing `params` block".into()))?)?;
    let n = params.dim();
    if let Some(list) = &init.explicit {
        return list
            .iter()
            .enumerate()
            .map(|(k, st)| {
                if st.c.len() != n || st.t.len() != n {
                    return Err(CliError::Config(format!("initial.explicit[{k}]: expected vectors of length {n}")));
                }
                let state = PhaseState::normalized(DVector::from_column_slice(&st.c), DVector::from_column_slice(&st.t))
                    .map_err(|e| CliError::Config(format!("initial.explicit[{k}]: {e}")))?;
                Ok(Seed { name: format!("seed{k:04}"), params: params.clone(), state, fixture: None })
            })
            .collect();
    }
    let grid = init.grid.as_ref().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(grid.count);
    for k in 0..grid.count {
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-grid.c_scale..=grid.c_scale));
        let t = loop {
            let t = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
            let r = t.norm();
            if r > 1e-3 && r <= 1.0 {
                break t / r;
            }
        };
        let state = PhaseState::normalized(c, t).map_err(CliError::Core)?;
        out.push(Seed { name: format!("seed{k:04}"), params: params.clone(), state, fixture: None });
    }
    Ok(out)
}
