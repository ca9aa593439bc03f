//! Run configuration: JSON in, validated simulation objects out.

use serde::{Deserialize, Serialize};

use rspde::dynamics::{step_count, CoefficientSpec, Control, Diffusion, Drift};
use rspde::lattice::{Grid, Walls};
use rspde::measure::SamplingPlan;
use rspde::obstacle::Reflection;
use rspde::optim::LbfgsOptions;
use rspde::rate::QuasipotentialOptions;

/// A failed check, naming the offending key.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl std::fmt::Display) -> Self {
        Self {
            key: key.to_string(),
            message: message.to_string(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config at `{}`: {}", self.key, self.message)
    }
}

type Checked<T> = Result<T, ConfigError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub coefficients: CoefficientConfig,
    pub walls: WallsConfig,
    #[serde(default)]
    pub initial: FieldSpec,
    #[serde(default)]
    pub reflection: ReflectionConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub rate: RateConfig,
    #[serde(default)]
    pub quasipotential: QuasipotentialConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub targets: Vec<TargetConfig>,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
}

/// Coefficients from the closed registry. `drift` is `"zero"`,
/// `"linear <c>"` or `"sinusoidal <c>"`; `sigma` is `"constant <s>"` or
/// `"cosine <base> <amplitude>"`. `m` and `M` are declared bounds that must
/// hold for the chosen functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    #[serde(default = "default_drift")]
    pub drift: String,
    #[serde(default = "default_sigma")]
    pub sigma: String,
    pub alpha: f64,
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default, rename = "M")]
    pub big_m: Option<f64>,
}

fn default_drift() -> String {
    "zero".into()
}

fn default_sigma() -> String {
    "constant 1".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallsConfig {
    pub lower: FieldSpec,
    pub upper: FieldSpec,
}

/// A spatial profile: a constant or one value per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Profile(Vec<f64>),
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Constant(0.0)
    }
}

impl FieldSpec {
    fn sample(&self, grid: &Grid, key: &str) -> Checked<Vec<f64>> {
        let v = match self {
            FieldSpec::Constant(c) => vec![*c; grid.len()],
            FieldSpec::Profile(p) if p.len() == grid.len() => p.clone(),
            FieldSpec::Profile(p) => {
                return Err(ConfigError::new(
                    key,
                    format!("profile has {} values, the grid has {} nodes", p.len(), grid.len()),
                ))
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::new(key, "values must be finite"));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "mode", rename_all = "lowercase")]
pub enum ReflectionConfig {
    Projected,
    Penalized { delta: f64, eps_pen: f64 },
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        ReflectionConfig::Projected
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_eps() -> Vec<f64> {
    vec![0.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            seeds: default_seeds(),
        }
    }
}

/// `ḣ(x, t) = amplitude·cos(mode·π·x)` for `t < until`, zero afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub mode: u32,
    #[serde(default)]
    pub until: Option<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            mode: 0,
            until: None,
        }
    }
}

/// Optional stored path for the `rate` command; otherwise the path is the
/// skeleton driven by `control`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasipotentialConfig {
    pub dt: f64,
    pub horizons: Vec<f64>,
    pub weights: Vec<f64>,
    pub delta: f64,
    pub rel_improvement: f64,
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub infinite_horizon: bool,
}

impl Default for QuasipotentialConfig {
    fn default() -> Self {
        let d = QuasipotentialOptions::default();
        Self {
            dt: d.dt,
            horizons: d.horizons,
            weights: d.weights,
            delta: d.delta,
            rel_improvement: d.rel_improvement,
            memory: d.lbfgs.memory,
            max_iter: d.lbfgs.max_iter,
            grad_tol: d.lbfgs.grad_tol,
            infinite_horizon: false,
        }
    }
}

/// Burn-in and thinning in relaxation times `1/α₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub dt: Option<f64>,
    pub burn_in_relaxations: f64,
    pub thin_relaxations: f64,
    pub samples_per_seed: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            dt: None,
            burn_in_relaxations: 10.0,
            thin_relaxations: 1.0,
            samples_per_seed: 100,
        }
    }
}

/// Ball target. Missing `J` values are computed as `J(z)`, `J` at `z`
/// shrunk toward 0 by `δ` and `J` at `z` stretched away by `δ` in sup norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub id: String,
    pub z: FieldSpec,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub j_center: Option<f64>,
    #[serde(default)]
    pub j_inner: Option<f64>,
    #[serde(default)]
    pub j_outer: Option<f64>,
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub gamma: f64,
    pub radii: Vec<f64>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            gamma: 0.4,
            radii: vec![0.5, 1.0, 2.0, 4.0],
        }
    }
}

/// Validated objects shared by every command.
pub struct Setup {
    pub grid: Grid,
    pub walls: Walls,
    pub coeffs: CoefficientSpec,
    pub u0: Vec<f64>,
    pub mode: Reflection,
    pub steps: usize,
}

pub fn parse(text: &str) -> Checked<RunConfig> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let key = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .unwrap_or("config")
            .to_string();
        ConfigError { key, message: msg }
    })
}

fn positive(key: &str, v: f64) -> Checked<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be positive and finite, got {v}")))
    }
}

fn parse_registry(key: &str, text: &str) -> Checked<(String, Vec<f64>)> {
    let mut parts = text.split_whitespace();
    let name = parts.next().unwrap_or("").to_string();
    let args = parts
        .map(|p| p.parse::<f64>().map_err(|_| ConfigError::new(key, format!("cannot parse `{p}` as a number"))))
        .collect::<Checked<Vec<f64>>>()?;
    Ok((name, args))
}

fn drift(text: &str) -> Checked<Drift> {
    let key = "coefficients.drift";
    match parse_registry(key, text)? {
        (n, a) if n == "zero" && a.is_empty() => Ok(Drift::Zero),
        (n, a) if n == "linear" && a.len() == 1 => Ok(Drift::Linear { c: a[0] }),
        (n, a) if n == "sinusoidal" && a.len() == 1 => Ok(Drift::Sinusoidal { c: a[0] }),
        _ => Err(ConfigError::new(
            key,
            format!("`{text}` is not one of \"zero\", \"linear <c>\", \"sinusoidal <c>\""),
        )),
    }
}

fn sigma(text: &str) -> Checked<Diffusion> {
    let key = "coefficients.sigma";
    match parse_registry(key, text)? {
        (n, a) if n == "constant" && a.len() == 1 => Ok(Diffusion::Constant { value: a[0] }),
        (n, a) if n == "cosine" && a.len() == 2 => Ok(Diffusion::Cosine {
            base: a[0],
            amplitude: a[1],
        }),
        _ => Err(ConfigError::new(
            key,
            format!("`{text}` is not one of \"constant <s>\", \"cosine <base> <amplitude>\""),
        )),
    }
}

impl RunConfig {
    pub fn setup(&self) -> Checked<Setup> {
        let grid = Grid::new(self.grid.n).map_err(|e| ConfigError::new("grid.n", e))?;
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        let steps = step_count(self.horizon, self.dt).map_err(|e| ConfigError::new("dt", e))?;
        let c = &self.coefficients;
        if !(c.alpha >= 0.0 && c.alpha.is_finite()) {
            return Err(ConfigError::new("coefficients.alpha", format!("must be finite and ≥ 0, got {}", c.alpha)));
        }
        let coeffs = CoefficientSpec::new(drift(&c.drift)?, sigma(&c.sigma)?, c.alpha)
            .map_err(|e| ConfigError::new("coefficients.sigma", e))?;
        let lower = self.walls.lower.sample(&grid, "walls.lower")?;
        let upper = self.walls.upper.sample(&grid, "walls.upper")?;
        let walls = Walls::from_profiles(&grid, lower, upper).map_err(|e| ConfigError::new("walls", e))?;
        if let Some(m) = c.m {
            if !(m > 0.0 && coeffs.sigma_lower_bound() >= m) {
                return Err(ConfigError::new(
                    "coefficients.m",
                    format!("need 0 < m ≤ inf |sigma| = {}", coeffs.sigma_lower_bound()),
                ));
            }
        }
        if let Some(big) = c.big_m {
            let b = coeffs.bound(&walls);
            if !(big >= b) {
                return Err(ConfigError::new("coefficients.M", format!("need M ≥ sup(|f|, |sigma|) = {b}")));
            }
        }
        let u0 = self.initial.sample(&grid, "initial")?;
        if !walls.contains(&u0, 0.0) {
            return Err(ConfigError::new("initial", "initial state lies outside the walls"));
        }
        let mode = match self.reflection {
            ReflectionConfig::Projected => Reflection::Projected,
            ReflectionConfig::Penalized { delta, eps_pen } => {
                positive("reflection.delta", delta)?;
                positive("reflection.eps_pen", eps_pen)?;
                Reflection::Penalized { delta, eps_pen }
            }
        };
        if let Some(e) = self.noise.eps.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(ConfigError::new("noise.eps", format!("noise levels must be finite and ≥ 0, got {e}")));
        }
        if self.noise.seeds.is_empty() {
            return Err(ConfigError::new("noise.seeds", "need at least one seed"));
        }
        if let Some(t) = self.control.until {
            positive("control.until", t)?;
        }
        if !self.control.amplitude.is_finite() {
            return Err(ConfigError::new("control.amplitude", "must be finite"));
        }
        Ok(Setup {
            grid,
            walls,
            coeffs,
            u0,
            mode,
            steps,
        })
    }

    pub fn control(&self, setup: &Setup) -> Checked<Control> {
        let ControlConfig { amplitude, mode, until } = self.control.clone();
        let k = mode as f64 * std::f64::consts::PI;
        let until = until.unwrap_or(f64::INFINITY);
        Control::from_fn(&setup.grid, self.dt, setup.steps, |x, t| {
            if t < until {
                amplitude * (k * x).cos()
            } else {
                0.0
            }
        })
        .map_err(|e| ConfigError::new("control", e))
    }

    pub fn quasipotential_options(&self) -> Checked<QuasipotentialOptions> {
        let q = &self.quasipotential;
        let opts = QuasipotentialOptions {
            dt: q.dt,
            horizons: q.horizons.clone(),
            weights: q.weights.clone(),
            delta: q.delta,
            rel_improvement: q.rel_improvement,
            terminal_tol: QuasipotentialOptions::default().terminal_tol,
            lbfgs: LbfgsOptions {
                memory: q.memory,
                max_iter: q.max_iter,
                grad_tol: q.grad_tol,
            },
        };
        opts.validate().map_err(|e| ConfigError::new("quasipotential", e))?;
        for &t in &q.horizons {
            step_count(t, q.dt).map_err(|e| ConfigError::new("quasipotential.horizons", e))?;
        }
        if q.memory == 0 || q.max_iter == 0 || !(q.grad_tol > 0.0) {
            return Err(ConfigError::new(
                "quasipotential",
                "memory, max_iter and grad_tol must be positive",
            ));
        }
        Ok(opts)
    }

    /// Sampling plan under hypothesis (H).
    pub fn sampling_plan(&self, setup: &Setup) -> Checked<SamplingPlan> {
        let alpha1 = setup
            .coeffs
            .alpha1()
            .map_err(|e| ConfigError::new("coefficients.drift", e))?;
        let s = &self.sampling;
        let dt = s.dt.unwrap_or(self.dt);
        positive("sampling.dt", dt)?;
        positive("sampling.thin_relaxations", s.thin_relaxations)?;
        if s.burn_in_relaxations < rspde::measure::MIN_BURN_IN_RELAXATIONS {
            return Err(ConfigError::new(
                "sampling.burn_in_relaxations",
                format!(
                    "burn-in must be at least {} relaxation times",
                    rspde::measure::MIN_BURN_IN_RELAXATIONS
                ),
            ));
        }
        if s.samples_per_seed == 0 {
            return Err(ConfigError::new("sampling.samples_per_seed", "must be positive"));
        }
        Ok(SamplingPlan {
            dt,
            burn_in: s.burn_in_relaxations / alpha1,
            thin: s.thin_relaxations / alpha1,
            samples_per_seed: s.samples_per_seed,
        })
    }

    /// Noise levels, checked to be positive and strictly decreasing.
    pub fn eps_schedule(&self) -> Checked<Vec<f64>> {
        let e = &self.noise.eps;
        if e.is_empty() || e.iter().any(|&v| !(v > 0.0)) {
            return Err(ConfigError::new("noise.eps", "need positive noise levels"));
        }
        if !e.windows(2).all(|w| w[0] > w[1]) {
            return Err(ConfigError::new("noise.eps", "schedule must be strictly decreasing"));
        }
        Ok(e.clone())
    }

    pub fn target_fields(&self, setup: &Setup) -> Checked<Vec<Vec<f64>>> {
        let mut ids = std::collections::BTreeSet::new();
        self.targets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let key = format!("targets[{i}]");
                if t.id.is_empty() || !t.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(ConfigError::new(&format!("{key}.id"), "ids use letters, digits, '_' and '-'"));
                }
                if !ids.insert(t.id.clone()) {
                    return Err(ConfigError::new(&format!("{key}.id"), "duplicate target id"));
                }
                positive(&format!("{key}.delta"), t.delta)?;
                let z = t.z.sample(&setup.grid, &format!("{key}.z"))?;
                if !setup.walls.contains(&z, 0.0) {
                    return Err(ConfigError::new(&format!("{key}.z"), "target lies outside the walls"));
                }
                Ok(z)
            })
            .collect()
    }

    pub fn diagnose_checked(&self) -> Checked<()> {
        let d = &self.diagnose;
        if !(d.gamma > 0.0 && d.gamma < 0.5) {
            return Err(ConfigError::new("diagnose.gamma", "must lie in (0, 1/2)"));
        }
        if d.radii.iter().any(|&r| !(r > 0.0)) {
            return Err(ConfigError::new("diagnose.radii", "radii must be positive"));
        }
        Ok(())
    }
}
