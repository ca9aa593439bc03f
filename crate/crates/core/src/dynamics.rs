//! Time integrators for reflected heat equations.
//!
//! Every step has the same shape. The reaction term, the control or noise
//! forcing are evaluated explicitly at the current state, then the linear part
//! and the reflection are solved implicitly:
//!
//! ```text
//! (I − dt·A) u_{n+1} = u_n + dt·f(u_n) + dt·σ(u_n)·ḣ_n + dt·(η̇ − ξ̇)
//! ```
//!
//! In projected mode `η̇, ξ̇` solve the discrete obstacle problem exactly; in
//! penalized mode they are `(1/δ)(u_{n+1} − K1)⁻` and `(1/ε)(u_{n+1} − K2)⁺`.
//! Noise enters as `ε·σ(u_n)·ΔW_i / sqrt(dx·w_i)` with `ΔW ~ N(0, dt·dx)`,
//! which reproduces `ε ∫∫ φ σ dW` in the trapezoid-weighted weak form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lattice::{uniform_times, Grid, Operator, SpaceTimeField, Walls};
use crate::obstacle::{
    complementarity, step_integral, ComplementarityReport, LocalTime, Reflection,
    ReflectionStep, StepOutput, TOL_WALL,
};

/// Largest admissible `dt·Lip(f)` for the explicit reaction sub-step.
pub const MAX_EXPLICIT_STIFFNESS: f64 = 0.5;

/// Confinement tolerance of produced trajectories.
pub const TOL_CONFINE: f64 = 1e-9;

/// Reaction term `f(u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Drift {
    Zero,
    /// `f(u) = c·u`.
    Linear { c: f64 },
    /// `f(u) = c·sin(u)`.
    Sinusoidal { c: f64 },
}

impl Drift {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Linear { c } => c * u,
            Drift::Sinusoidal { c } => c * u.sin(),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Linear { c } => c,
            Drift::Sinusoidal { c } => c * u.cos(),
        }
    }

    /// Global Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Linear { c } | Drift::Sinusoidal { c } => c.abs(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Drift::Zero => Ok(()),
            Drift::Linear { c } | Drift::Sinusoidal { c } if c.is_finite() => Ok(()),
            _ => Err(Error::param("drift", "coefficient must be finite")),
        }
    }
}

/// Noise coefficient `σ(u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Diffusion {
    Constant { value: f64 },
    /// `σ(u) = base + amplitude·cos(u)`.
    Cosine { base: f64, amplitude: f64 },
}

impl Diffusion {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Diffusion::Constant { value } => value,
            Diffusion::Cosine { base, amplitude } => base + amplitude * u.cos(),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Diffusion::Constant { .. } => 0.0,
            Diffusion::Cosine { amplitude, .. } => -amplitude * u.sin(),
        }
    }

    /// Lower bound `m` of `|σ|`.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            Diffusion::Constant { value } => value.abs(),
            Diffusion::Cosine { base, amplitude } => base.abs() - amplitude.abs(),
        }
    }

    /// Upper bound of `|σ|`.
    pub fn upper_bound(&self) -> f64 {
        match *self {
            Diffusion::Constant { value } => value.abs(),
            Diffusion::Cosine { base, amplitude } => base.abs() + amplitude.abs(),
        }
    }
}

/// Coefficients of the reflected equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientSpec {
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub alpha: f64,
}

impl CoefficientSpec {
    /// Validates boundedness of the drift on bounded sets, finiteness, and
    /// nondegeneracy `|σ| ≥ m > 0`.
    pub fn new(drift: Drift, diffusion: Diffusion, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::NegativeAlpha(alpha));
        }
        drift.validate()?;
        let m = diffusion.lower_bound();
        if !(m > 0.0) || !diffusion.upper_bound().is_finite() {
            return Err(Error::param("sigma", format!("|sigma| must be bounded below by a positive constant, got m = {m}")));
        }
        Ok(Self {
            drift,
            diffusion,
            alpha,
        })
    }

    /// `f ≡ 0`, `σ ≡ 1`.
    pub fn linear_gaussian(alpha: f64) -> Result<Self> {
        Self::new(Drift::Zero, Diffusion::Constant { value: 1.0 }, alpha)
    }

    pub fn f(&self, u: f64) -> f64 {
        self.drift.value(u)
    }

    pub fn sigma(&self, u: f64) -> f64 {
        self.diffusion.value(u)
    }

    /// Lipschitz constant `c` of `f`.
    pub fn lipschitz(&self) -> f64 {
        self.drift.lipschitz()
    }

    /// `m` with `|σ| ≥ m`.
    pub fn sigma_lower_bound(&self) -> f64 {
        self.diffusion.lower_bound()
    }

    /// Bound `M` of `|f|` and `|σ|` over the band.
    pub fn bound(&self, walls: &Walls) -> f64 {
        let r = walls.min_lower().abs().max(walls.max_upper().abs());
        let f = match self.drift {
            Drift::Zero => 0.0,
            Drift::Linear { c } => c.abs() * r,
            Drift::Sinusoidal { c } => c.abs() * r.min(1.0),
        };
        f.max(self.diffusion.upper_bound())
    }

    /// Whether `f(0) = 0` and `c < α`.
    pub fn satisfies_h(&self) -> bool {
        self.f(0.0) == 0.0 && self.lipschitz() < self.alpha
    }

    /// Decay rate `α₁ = α − c`, or an error when the hypothesis fails.
    pub fn alpha1(&self) -> Result<f64> {
        if self.satisfies_h() {
            Ok(self.alpha - self.lipschitz())
        } else {
            Err(Error::HypothesisRequired(format!(
                "need f(0) = 0 and Lipschitz constant c = {} < alpha = {}",
                self.lipschitz(),
                self.alpha
            )))
        }
    }
}

/// Cameron–Martin control `ḣ`. Row `k ≥ 1` of the field drives the step
/// `(t_{k−1}, t_k]`; row 0 is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    hdot: SpaceTimeField,
}

impl Control {
    pub fn new(hdot: SpaceTimeField) -> Self {
        Self { hdot }
    }

    pub fn zeros(grid: &Grid, times: Vec<f64>) -> Result<Self> {
        Ok(Self::new(SpaceTimeField::zeros(grid.len(), times)?))
    }

    /// Samples `ḣ(x, t)` at the left end of each step.
    pub fn from_fn(
        grid: &Grid,
        dt: f64,
        steps: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut hdot = SpaceTimeField::zeros(grid.len(), uniform_times(0.0, dt, steps))?;
        for k in 1..=steps {
            let t = (k - 1) as f64 * dt;
            for (v, &x) in hdot.row_mut(k).iter_mut().zip(grid.nodes()) {
                *v = f(x, t);
            }
        }
        Ok(Self::new(hdot))
    }

    pub fn hdot(&self) -> &SpaceTimeField {
        &self.hdot
    }

    pub fn into_field(self) -> SpaceTimeField {
        self.hdot
    }

    pub fn steps(&self) -> usize {
        self.hdot.steps()
    }

    /// `½ ∫∫ ḣ²`.
    pub fn action(&self, grid: &Grid) -> f64 {
        0.5 * self.norm_sq(grid)
    }

    /// `∫∫ ḣ²`.
    pub fn norm_sq(&self, grid: &Grid) -> f64 {
        step_integral(grid, &self.hdot, |_, v| v * v)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.hdot.map(|v| c * v))
    }
}

/// Gaussian cell increments `ΔW ~ N(0, dt·dx)`. Row `k` drives the step
/// `(t_k, t_{k+1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    pub seed: u64,
    pub stream: u64,
    pub dt: f64,
    pub dx: f64,
    nodes: usize,
    increments: Vec<f64>,
}

impl NoiseRealization {
    pub fn steps(&self) -> usize {
        self.increments.len() / self.nodes
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.increments[k * self.nodes..(k + 1) * self.nodes]
    }

    pub fn negated(&self) -> Self {
        Self {
            increments: self.increments.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

/// Reproducible source of cell increments, one ChaCha8 stream per
/// `(seed, stream)` pair.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    scale: f64,
}

impl NoiseStream {
    pub fn new(grid: &Grid, dt: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            scale: (dt * grid.dx()).sqrt(),
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = self.scale * z;
        }
    }
}

pub fn sample_noise(grid: &Grid, dt: f64, steps: usize, seed: u64, stream: u64) -> Result<NoiseRealization> {
    if steps == 0 {
        return Err(Error::param("steps", "need at least one step"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonPositiveTime(dt));
    }
    let mut increments = vec![0.0; steps * grid.len()];
    NoiseStream::new(grid, dt, seed, stream).fill(&mut increments);
    Ok(NoiseRealization {
        seed,
        stream,
        dt,
        dx: grid.dx(),
        nodes: grid.len(),
        increments,
    })
}

/// Explicit forcing of one step.
#[derive(Clone, Copy, Debug)]
pub enum StepForcing<'a> {
    None,
    /// `ḣ_n` at every node.
    Control(&'a [f64]),
    /// Cell increments `ΔW_n` and the noise level `ε`.
    Noise { eps: f64, increments: &'a [f64] },
}

/// Reflected solution with its local times.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub u: SpaceTimeField,
    pub eta: LocalTime,
    pub xi: LocalTime,
    pub coeffs: CoefficientSpec,
    pub eps_noise: f64,
    pub mode: Reflection,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        self.u.uniform_dt().unwrap_or(0.0)
    }

    pub fn complementarity(&self, grid: &Grid, walls: &Walls) -> Result<ComplementarityReport> {
        complementarity(grid, &self.u, &self.eta, &self.xi, walls)
    }

    /// Whether all states lie in the band up to [`TOL_CONFINE`].
    pub fn confined(&self, walls: &Walls) -> bool {
        self.u.rows().all(|r| walls.contains(r, TOL_CONFINE))
    }

    /// `‖u(·, t_k)‖_∞` for every time.
    pub fn sup_norms(&self) -> Vec<f64> {
        self.u.rows().map(crate::lattice::sup_norm).collect()
    }
}

/// One-step map shared by every evolution problem.
#[derive(Clone, Debug)]
pub struct Integrator {
    grid: Grid,
    walls: Walls,
    coeffs: CoefficientSpec,
    dt: f64,
    mode: Reflection,
    stepper: ReflectionStep,
    noise_scale: Vec<f64>,
}

impl Integrator {
    pub fn new(
        grid: &Grid,
        walls: &Walls,
        coeffs: &CoefficientSpec,
        dt: f64,
        mode: Reflection,
    ) -> Result<Self> {
        if walls.len() != grid.len() {
            return Err(Error::Dimension("walls do not match the grid".into()));
        }
        mode.validate()?;
        let op = Operator::new(grid, coeffs.alpha)?;
        let stepper = ReflectionStep::new(&op, dt)?;
        let stiffness = dt * coeffs.lipschitz();
        if stiffness > MAX_EXPLICIT_STIFFNESS {
            return Err(Error::StepTooLarge(format!(
                "dt * Lip(f) = {stiffness} exceeds {MAX_EXPLICIT_STIFFNESS}"
            )));
        }
        let noise_scale = grid
            .weights()
            .iter()
            .map(|&w| 1.0 / (grid.dx() * w).sqrt())
            .collect();
        Ok(Self {
            grid: grid.clone(),
            walls: walls.clone(),
            coeffs: *coeffs,
            dt,
            mode,
            stepper,
            noise_scale,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn walls(&self) -> &Walls {
        &self.walls
    }

    pub fn coeffs(&self) -> &CoefficientSpec {
        &self.coeffs
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mode(&self) -> Reflection {
        self.mode
    }

    pub fn stepper(&self) -> &ReflectionStep {
        &self.stepper
    }

    /// `u_n + dt·f(u_n) + forcing`.
    pub fn explicit_rhs(&self, u: &[f64], forcing: StepForcing, out: &mut [f64]) {
        let dt = self.dt;
        let c = &self.coeffs;
        for i in 0..u.len() {
            let extra = match forcing {
                StepForcing::None => 0.0,
                StepForcing::Control(h) => dt * c.sigma(u[i]) * h[i],
                StepForcing::Noise { eps, increments } => {
                    eps * c.sigma(u[i]) * increments[i] * self.noise_scale[i]
                }
            };
            out[i] = u[i] + dt * c.f(u[i]) + extra;
        }
    }

    pub fn step(&self, u: &[f64], forcing: StepForcing) -> StepOutput {
        let mut rhs = vec![0.0; u.len()];
        self.explicit_rhs(u, forcing, &mut rhs);
        self.stepper
            .reflect(&rhs, self.walls.lower(), self.walls.upper(), self.mode)
    }

    pub fn check_initial(&self, u0: &[f64]) -> Result<()> {
        self.grid.check_len(u0, "initial state")?;
        if let Some(node) = u0.iter().position(|v| !v.is_finite()) {
            return Err(Error::InadmissibleInitial(format!("non-finite value at node {node}")));
        }
        if let Some(node) = self.walls.first_violation(u0, TOL_WALL) {
            return Err(Error::InadmissibleInitial(format!(
                "u0 = {} lies outside the walls at node {node}",
                u0[node]
            )));
        }
        Ok(())
    }

    /// Integrates over `times` (spaced by `dt`) with the forcing of step `k`
    /// supplied by `forcing(k, buffer)`.
    pub fn run<F>(&self, u0: &[f64], times: Vec<f64>, eps_noise: f64, mut forcing: F) -> Result<Trajectory>
    where
        F: FnMut(usize, &mut Vec<f64>) -> ForcingKind,
    {
        self.check_initial(u0)?;
        let n = self.grid.len();
        let steps = times.len().saturating_sub(1);
        let mut u = SpaceTimeField::zeros(n, times.clone())?;
        let mut eta = SpaceTimeField::zeros(n, times.clone())?;
        let mut xi = SpaceTimeField::zeros(n, times)?;
        u.row_mut(0).copy_from_slice(u0);
        let mut buf = vec![0.0; n];
        for k in 0..steps {
            let kind = forcing(k, &mut buf);
            let f = match kind {
                ForcingKind::None => StepForcing::None,
                ForcingKind::Control => StepForcing::Control(&buf),
                ForcingKind::Noise(eps) => StepForcing::Noise {
                    eps,
                    increments: &buf,
                },
            };
            let out = self.step(u.row(k), f);
            if out.state.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(k + 1));
            }
            u.row_mut(k + 1).copy_from_slice(&out.state);
            eta.row_mut(k + 1).copy_from_slice(&out.eta);
            xi.row_mut(k + 1).copy_from_slice(&out.xi);
        }
        Ok(Trajectory {
            u,
            eta: LocalTime::new(&self.grid, eta)?,
            xi: LocalTime::new(&self.grid, xi)?,
            coeffs: self.coeffs,
            eps_noise,
            mode: self.mode,
        })
    }
}

/// What [`Integrator::run`]'s forcing callback wrote into its buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForcingKind {
    None,
    Control,
    Noise(f64),
}

/// Number of steps of size `dt` covering `[0, T]`.
pub fn step_count(t: f64, dt: f64) -> Result<usize> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::NonPositiveTime(t));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonPositiveTime(dt));
    }
    let steps = (t / dt).round();
    if (steps * dt - t).abs() > 1e-9 * t {
        return Err(Error::param("dt", format!("dt = {dt} does not divide T = {t}")));
    }
    Ok(steps as usize)
}

/// One penalized step from `state`.
#[allow(clippy::too_many_arguments)]
pub fn step_penalized(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    state: &[f64],
    forcing: StepForcing,
    dt: f64,
    delta: f64,
    eps_pen: f64,
) -> Result<StepOutput> {
    let integ = Integrator::new(grid, walls, coeffs, dt, Reflection::Penalized { delta, eps_pen })?;
    grid.check_len(state, "state")?;
    let out = integ.step(state, forcing);
    if let Some(node) = out.state.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(node));
    }
    Ok(out)
}

/// Skeleton equation driven by `control` on its own time mesh.
pub fn solve_skeleton(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    u0: &[f64],
    control: &Control,
    mode: Reflection,
) -> Result<Trajectory> {
    let h = control.hdot();
    if h.nodes() != grid.len() {
        return Err(Error::Dimension("control does not match the grid".into()));
    }
    let dt = h
        .uniform_dt()
        .ok_or_else(|| Error::MeshMismatch("control time mesh is not uniform".into()))?;
    let integ = Integrator::new(grid, walls, coeffs, dt, mode)?;
    integ.run(u0, h.times().to_vec(), 0.0, |k, buf| {
        buf.copy_from_slice(h.row(k + 1));
        ForcingKind::Control
    })
}

/// Zero-control flow under hypothesis (H).
pub fn solve_deterministic(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    z: &[f64],
    t: f64,
    dt: f64,
) -> Result<Trajectory> {
    coeffs.alpha1()?;
    let steps = step_count(t, dt)?;
    Integrator::new(grid, walls, coeffs, dt, Reflection::Projected)?
        .run(z, uniform_times(0.0, dt, steps), 0.0, |_, _| ForcingKind::None)
}

/// Bound `e^{−α₁t}‖z‖_∞` on the zero-control flow.
pub fn decay_envelope(coeffs: &CoefficientSpec, z_sup: f64, t: f64) -> Result<f64> {
    Ok((-coeffs.alpha1()? * t).exp() * z_sup)
}

/// Stochastic equation with fresh noise from `(seed, stream)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_spde(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    u0: &[f64],
    eps_noise: f64,
    t: f64,
    dt: f64,
    seed: u64,
    stream: u64,
    mode: Reflection,
) -> Result<Trajectory> {
    check_eps(eps_noise)?;
    let steps = step_count(t, dt)?;
    let integ = Integrator::new(grid, walls, coeffs, dt, mode)?;
    if eps_noise == 0.0 {
        return integ.run(u0, uniform_times(0.0, dt, steps), 0.0, |_, _| ForcingKind::None);
    }
    let mut noise = NoiseStream::new(grid, dt, seed, stream);
    integ.run(u0, uniform_times(0.0, dt, steps), eps_noise, |_, buf| {
        noise.fill(buf);
        ForcingKind::Noise(eps_noise)
    })
}

/// Stochastic equation driven by a stored noise realization.
pub fn solve_spde_with_noise(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    u0: &[f64],
    eps_noise: f64,
    noise: &NoiseRealization,
    mode: Reflection,
) -> Result<Trajectory> {
    check_eps(eps_noise)?;
    if noise.nodes() != grid.len() || (noise.dx - grid.dx()).abs() > 1e-15 {
        return Err(Error::MeshMismatch("noise does not match the grid".into()));
    }
    let integ = Integrator::new(grid, walls, coeffs, noise.dt, mode)?;
    integ.run(u0, uniform_times(0.0, noise.dt, noise.steps()), eps_noise, |k, buf| {
        buf.copy_from_slice(noise.row(k));
        ForcingKind::Noise(eps_noise)
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::param("eps", "noise level must be finite and nonnegative"))
    }
}

/// `∫_0^T e^{−α(T−t)} ∫_0^1 |ρ(x,t)|² dx dt` for a local-time density `ρ`.
pub fn local_time_energy(grid: &Grid, lt: &LocalTime, alpha: f64, t_end: f64) -> f64 {
    let d = lt.density();
    let times = d.times();
    let w = grid.weights();
    (1..times.len())
        .filter(|&k| times[k] <= t_end + 1e-12)
        .map(|k| {
            let dt = times[k] - times[k - 1];
            let e: f64 = d.row(k).iter().zip(w).map(|(v, w)| w * v * v).sum();
            dt * (-alpha * (t_end - times[k])).exp() * e
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::sup_distance;

    fn setup(n: usize) -> (Grid, Walls) {
        let g = Grid::new(n).unwrap();
        let w = Walls::constant(&g, -1.0, 1.0).unwrap();
        (g, w)
    }

    #[test]
    fn coefficient_validation() {
        assert!(CoefficientSpec::new(Drift::Zero, Diffusion::Constant { value: 0.0 }, 1.0).is_err());
        assert!(CoefficientSpec::new(
            Drift::Zero,
            Diffusion::Cosine { base: 1.0, amplitude: 1.0 },
            1.0
        )
        .is_err());
        assert!(CoefficientSpec::new(Drift::Zero, Diffusion::Constant { value: 1.0 }, -1.0).is_err());
        let c = CoefficientSpec::new(Drift::Linear { c: 1.0 }, Diffusion::Constant { value: 1.0 }, 1.0).unwrap();
        let err = c.alpha1().unwrap_err().to_string();
        assert!(err.contains("hypothesis H required"));
        let c = CoefficientSpec::new(Drift::Sinusoidal { c: 0.5 }, Diffusion::Constant { value: 1.0 }, 1.0).unwrap();
        assert_eq!(c.alpha1().unwrap(), 0.5);
    }

    #[test]
    fn noise_is_reproducible_and_streams_differ() {
        let g = Grid::new(8).unwrap();
        let a = sample_noise(&g, 1e-3, 10, 7, 0).unwrap();
        let b = sample_noise(&g, 1e-3, 10, 7, 0).unwrap();
        let c = sample_noise(&g, 1e-3, 10, 7, 1).unwrap();
        assert_eq!(a.increments(), b.increments());
        assert_ne!(a.increments(), c.increments());
        assert!(sample_noise(&g, 1e-3, 0, 7, 0).is_err());
    }

    #[test]
    fn penalty_inactive_inside_band() {
        let (g, w) = setup(16);
        let c = CoefficientSpec::new(Drift::Sinusoidal { c: 0.5 }, Diffusion::Constant { value: 1.0 }, 1.0).unwrap();
        let u = g.sample(|x| 0.4 * (3.0 * x).sin());
        let h = g.sample(|x| x - 0.5);
        let pen = step_penalized(&g, &w, &c, &u, StepForcing::Control(&h), 1e-3, 1e-3, 1e-3).unwrap();
        let free = Integrator::new(&g, &w, &c, 1e-3, Reflection::Projected)
            .unwrap()
            .step(&u, StepForcing::Control(&h));
        assert!(sup_distance(&pen.state, &free.state) <= 1e-14);
    }

    #[test]
    fn penalty_pulls_back_to_wall() {
        let (g, w) = setup(16);
        let c = CoefficientSpec::linear_gaussian(0.0).unwrap();
        let u = vec![-1.1; g.len()];
        let (dt, delta) = (1e-3, 1e-3);
        let out = step_penalized(&g, &w, &c, &u, StepForcing::None, dt, delta, delta).unwrap();
        let closed = (-1.1 + (dt / delta) * -1.0) / (1.0 + dt / delta);
        for &v in &out.state {
            assert!((v - closed).abs() < 1e-14);
            assert!((v + 1.0).abs() <= 2.0 * delta * (0.1 / dt));
        }
    }

    #[test]
    fn free_step_matches_heat_kernel_to_second_order() {
        let (g, w) = setup(64);
        let c = CoefficientSpec::linear_gaussian(1.0).unwrap();
        let u = g.sample(|x| 0.5 * (std::f64::consts::PI * x).cos());
        let err = |dt: f64| {
            let out = step_penalized(&g, &w, &c, &u, StepForcing::None, dt, 1e300, 1e300).unwrap();
            let exact = crate::lattice::heat_kernel(&g, 1.0, dt).unwrap().apply(&u);
            sup_distance(&out.state, &exact)
        };
        let (e1, e2) = (err(2e-3), err(1e-3));
        assert!(e2 < 1e-4);
        assert!(e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn zero_control_from_zero_stays_zero() {
        let (g, w) = setup(16);
        let c = CoefficientSpec::new(Drift::Sinusoidal { c: 0.5 }, Diffusion::Constant { value: 1.0 }, 1.0).unwrap();
        let ctl = Control::zeros(&g, uniform_times(0.0, 1e-2, 100)).unwrap();
        let tr = solve_skeleton(&g, &w, &c, &vec![0.0; g.len()], &ctl, Reflection::Projected).unwrap();
        assert_eq!(tr.u.sup_norm(), 0.0);
        assert!(tr.eta.is_zero() && tr.xi.is_zero());
    }

    #[test]
    fn deterministic_constant_decay() {
        let (g, w) = setup(16);
        let c = CoefficientSpec::linear_gaussian(2.0).unwrap();
        let tr = solve_deterministic(&g, &w, &c, &vec![0.5; g.len()], 1.0, 1e-4).unwrap();
        for (k, row) in tr.u.rows().enumerate() {
            let exact = 0.5 * (-2.0 * tr.u.times()[k]).exp();
            assert!(row.iter().all(|v| (v - exact).abs() <= 1e-4));
        }
        let c = CoefficientSpec::new(Drift::Linear { c: 1.0 }, Diffusion::Constant { value: 1.0 }, 2.0).unwrap();
        let tr = solve_deterministic(&g, &w, &c, &vec![0.5; g.len()], 1.0, 1e-4).unwrap();
        let last = tr.u.last()[3];
        assert!((last - 0.5 * (-1.0f64).exp()).abs() <= 1e-4);
    }

    #[test]
    fn deterministic_requires_h() {
        let (g, w) = setup(8);
        let c = CoefficientSpec::new(Drift::Linear { c: 3.0 }, Diffusion::Constant { value: 1.0 }, 2.0).unwrap();
        let err = solve_deterministic(&g, &w, &c, &vec![0.0; g.len()], 1.0, 1e-2).unwrap_err();
        assert!(err.to_string().contains("hypothesis H required"));
    }

    #[test]
    fn inadmissible_initial_state_rejected() {
        let (g, w) = setup(8);
        let c = CoefficientSpec::linear_gaussian(1.0).unwrap();
        let ctl = Control::zeros(&g, uniform_times(0.0, 1e-2, 3)).unwrap();
        let err = solve_skeleton(&g, &w, &c, &vec![1.5; g.len()], &ctl, Reflection::Projected).unwrap_err();
        assert!(matches!(err, Error::InadmissibleInitial(_)));
    }

    #[test]
    fn stiff_drift_rejected() {
        let (g, w) = setup(8);
        let c = CoefficientSpec::new(Drift::Linear { c: 1e4 }, Diffusion::Constant { value: 1.0 }, 1.0).unwrap();
        assert!(matches!(
            solve_spde(&g, &w, &c, &vec![0.0; g.len()], 0.1, 1.0, 1e-3, 0, 0, Reflection::Projected),
            Err(Error::StepTooLarge(_))
        ));
    }

    #[test]
    fn step_count_checks_divisibility() {
        assert_eq!(step_count(2.0, 1e-3).unwrap(), 2000);
        assert!(step_count(1.0, 0.3).is_err());
        assert!(step_count(0.0, 0.1).is_err());
    }

    #[test]
    fn zero_local_time_has_zero_energy() {
        let g = Grid::new(8).unwrap();
        let lt = LocalTime::zeros(&g, uniform_times(0.0, 0.1, 10)).unwrap();
        assert_eq!(local_time_energy(&g, &lt, 1.0, 1.0), 0.0);
    }
}
