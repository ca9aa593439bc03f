//! Rate functionals and the quasipotential.
//!
//! A discrete path `v` is produced by the skeleton scheme exactly when
//!
//! ```text
//! r_n = (v_{n+1} − v_n)/dt − A v_{n+1} − f(v_n) = σ(v_n)·ḣ_n + η̇_n − ξ̇_n
//! ```
//!
//! with `η̇` supported where `v_{n+1}` touches `K1` and `ξ̇` where it touches
//! `K2`. [`recover_control`] picks the decomposition of least action node by
//! node, which makes it the exact inverse of the projected skeleton map.
//!
//! The quasipotential minimises `½|ḣ|² + (w/2)‖u(T) − z‖²` over controls on
//! `[0, T]` through the penalized forward map, with gradients from its
//! discrete adjoint, continuation in `w` and a doubling search over `T`.

use crate::dynamics::{
    solve_deterministic, solve_skeleton, step_count, CoefficientSpec, Control, Integrator,
    StepForcing, Trajectory,
};
use crate::error::{Error, Result};
use crate::lattice::{sup_distance, sup_norm, uniform_times, Grid, Operator, SpaceTimeField, Walls};
use crate::obstacle::{LocalTime, Reflection};
use crate::optim::{self, LbfgsOptions};

/// `|v − K| ≤ TOL_CONTACT·(1 + ‖K‖_∞)` marks contact.
pub const TOL_CONTACT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredControl {
    pub hdot: Control,
    pub eta: LocalTime,
    pub xi: LocalTime,
    /// `r = ∂_t v − A v − f(v)`, row `k` on `(t_{k−1}, t_k]`.
    pub residual: SpaceTimeField,
    pub action: f64,
}

/// Splits the residual of `v` into control and local times.
pub fn recover_control(
    grid: &Grid,
    v: &SpaceTimeField,
    coeffs: &CoefficientSpec,
    walls: &Walls,
) -> Result<RecoveredControl> {
    recover(grid, v, coeffs, walls, true)
}

fn recover(
    grid: &Grid,
    v: &SpaceTimeField,
    coeffs: &CoefficientSpec,
    walls: &Walls,
    reflect: bool,
) -> Result<RecoveredControl> {
    if v.nodes() != grid.len() || walls.len() != grid.len() {
        return Err(Error::Dimension("path, walls and grid disagree".into()));
    }
    let op = Operator::new(grid, coeffs.alpha)?;
    let n = grid.len();
    let times = v.times().to_vec();
    let tol_lo = TOL_CONTACT * (1.0 + walls.lower_sup());
    let tol_hi = TOL_CONTACT * (1.0 + walls.upper_sup());
    for (k, row) in v.rows().enumerate() {
        for i in 0..n {
            if row[i] < walls.lower()[i] - tol_lo || row[i] > walls.upper()[i] + tol_hi {
                return Err(Error::OutsideWalls { step: k, node: i });
            }
        }
    }
    let m = coeffs.sigma_lower_bound();
    let mut hdot = SpaceTimeField::zeros(n, times.clone())?;
    let mut eta = SpaceTimeField::zeros(n, times.clone())?;
    let mut xi = SpaceTimeField::zeros(n, times.clone())?;
    let mut residual = SpaceTimeField::zeros(n, times.clone())?;
    let mut av = vec![0.0; n];
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        let (prev, next) = (v.row(k - 1), v.row(k));
        op.apply_into(next, &mut av);
        for i in 0..n {
            let r = (next[i] - prev[i]) / dt - av[i] - coeffs.f(prev[i]);
            let s = coeffs.sigma(prev[i]);
            if s.abs() < m * (1.0 - 1e-12) {
                return Err(Error::DegenerateDiffusion {
                    step: k,
                    node: i,
                    value: s,
                    bound: m,
                });
            }
            residual.row_mut(k)[i] = r;
            let (e, x) = if !reflect {
                (0.0, 0.0)
            } else if next[i] - walls.lower()[i] <= tol_lo {
                (r.max(0.0), 0.0)
            } else if walls.upper()[i] - next[i] <= tol_hi {
                (0.0, (-r).max(0.0))
            } else {
                (0.0, 0.0)
            };
            eta.row_mut(k)[i] = e;
            xi.row_mut(k)[i] = x;
            hdot.row_mut(k)[i] = (r - e + x) / s;
        }
    }
    let hdot = Control::new(hdot);
    let action = hdot.action(grid);
    Ok(RecoveredControl {
        hdot,
        eta: LocalTime::new(grid, eta)?,
        xi: LocalTime::new(grid, xi)?,
        residual,
        action,
    })
}

/// `½∫∫ḣ²` restricted to steps inside `[t1, t2]`.
pub fn window_action(grid: &Grid, control: &Control, t1: f64, t2: f64) -> f64 {
    let h = control.hdot();
    let times = h.times();
    let slack = 1e-9 * (times[times.len() - 1] - times[0]).abs().max(1.0);
    let w = grid.weights();
    (1..times.len())
        .filter(|&k| times[k - 1] >= t1 - slack && times[k] <= t2 + slack)
        .map(|k| {
            let dt = times[k] - times[k - 1];
            0.5 * dt * h.row(k).iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>()
        })
        .sum()
}

/// `I_{t1}^{t2}(v)`; `+∞` when `v` leaves the walls.
pub fn rate_i(
    grid: &Grid,
    v: &SpaceTimeField,
    t1: f64,
    t2: f64,
    coeffs: &CoefficientSpec,
    walls: &Walls,
) -> Result<f64> {
    rate_window(grid, v, t1, t2, coeffs, walls, true)
}

/// `S_{t1}^{t2}(v)`: the same with local times forced to zero.
pub fn rate_s(
    grid: &Grid,
    v: &SpaceTimeField,
    t1: f64,
    t2: f64,
    coeffs: &CoefficientSpec,
    walls: &Walls,
) -> Result<f64> {
    rate_window(grid, v, t1, t2, coeffs, walls, false)
}

fn rate_window(
    grid: &Grid,
    v: &SpaceTimeField,
    t1: f64,
    t2: f64,
    coeffs: &CoefficientSpec,
    walls: &Walls,
    reflect: bool,
) -> Result<f64> {
    if !(t1 <= t2) {
        return Err(Error::param("t2", "window end precedes its start"));
    }
    if reflect {
        match recover(grid, v, coeffs, walls, true) {
            Ok(rc) => Ok(window_action(grid, &rc.hdot, t1, t2)),
            Err(Error::OutsideWalls { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    } else {
        // The unreflected functional does not see the walls.
        let unbounded = Walls::constant(grid, -f64::MAX, f64::MAX)?;
        let rc = recover(grid, v, coeffs, &unbounded, false)?;
        Ok(window_action(grid, &rc.hdot, t1, t2))
    }
}

/// Settings of the minimum-action search.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasipotentialOptions {
    pub dt: f64,
    pub horizons: Vec<f64>,
    /// Terminal penalty weights, applied in order.
    pub weights: Vec<f64>,
    /// Penalty width of the forward map used inside the optimizer.
    pub delta: f64,
    /// Stop doubling once the relative improvement falls below this.
    pub rel_improvement: f64,
    /// `‖z‖_∞` at or below this counts as the attractor.
    pub terminal_tol: f64,
    pub lbfgs: LbfgsOptions,
}

impl Default for QuasipotentialOptions {
    fn default() -> Self {
        Self {
            dt: 2e-3,
            horizons: vec![1.0, 2.0, 4.0, 8.0],
            weights: vec![1e2, 1e4, 1e6],
            delta: 1e-4,
            rel_improvement: 1e-3,
            terminal_tol: 1e-8,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

impl QuasipotentialOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::NonPositiveTime(self.dt));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::param("horizons", "need at least one positive horizon"));
        }
        if !self.horizons.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::param("horizons", "must be increasing"));
        }
        if self.weights.is_empty() || self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::param("weights", "need positive penalty weights"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::param("delta", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuasipotentialResult {
    pub target: Vec<f64>,
    /// Action of `control`.
    pub value: f64,
    pub horizon: f64,
    /// Projected skeleton path from 0 driven by `control`.
    pub path: SpaceTimeField,
    pub control: Control,
    pub converged: bool,
    pub gradient_norm: f64,
    /// `‖path(T) − z‖_∞`.
    pub terminal_error: f64,
}

/// Action-plus-terminal-penalty objective in scaled variables
/// `g = ḣ·sqrt(dt·w_i)`, so that the action is `½|g|²`.
///
/// With `free_start` the first block of variables is the initial state,
/// penalized by `(w/2)‖u_0‖²`.
pub struct ActionObjective {
    integ: Integrator,
    op_t: crate::lattice::Tridiagonal,
    target: Vec<f64>,
    steps: usize,
    weight: f64,
    scale: Vec<f64>,
    free_start: bool,
}

impl ActionObjective {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &Grid,
        walls: &Walls,
        coeffs: &CoefficientSpec,
        target: &[f64],
        steps: usize,
        dt: f64,
        weight: f64,
        delta: f64,
        free_start: bool,
    ) -> Result<Self> {
        grid.check_len(target, "target")?;
        let integ = Integrator::new(
            grid,
            walls,
            coeffs,
            dt,
            Reflection::Penalized {
                delta,
                eps_pen: delta,
            },
        )?;
        let op_t = integ.stepper().matrix().transpose();
        let scale = grid.weights().iter().map(|&w| (dt * w).sqrt()).collect();
        Ok(Self {
            integ,
            op_t,
            target: target.to_vec(),
            steps,
            weight,
            scale,
            free_start,
        })
    }

    pub fn dim(&self) -> usize {
        let n = self.target.len();
        n * self.steps + if self.free_start { n } else { 0 }
    }

    fn split<'a>(&self, x: &'a [f64]) -> (Option<&'a [f64]>, &'a [f64]) {
        if self.free_start {
            let (a, b) = x.split_at(self.target.len());
            (Some(a), b)
        } else {
            (None, x)
        }
    }

    /// Scaled variables of a control (and initial state).
    pub fn encode(&self, control: &Control, start: Option<&[f64]>) -> Vec<f64> {
        let n = self.target.len();
        let mut x = Vec::with_capacity(self.dim());
        if self.free_start {
            x.extend_from_slice(start.unwrap_or(&vec![0.0; n]));
        }
        for k in 1..=self.steps {
            x.extend(control.hdot().row(k).iter().zip(&self.scale).map(|(h, s)| h * s));
        }
        x
    }

    /// Control on `[t0, t0 + steps·dt]` from scaled variables.
    pub fn decode(&self, x: &[f64], t0: f64) -> Result<(Control, Vec<f64>)> {
        let n = self.target.len();
        let (start, g) = self.split(x);
        let times = uniform_times(t0, self.integ.dt(), self.steps);
        let mut h = SpaceTimeField::zeros(n, times)?;
        for k in 0..self.steps {
            for i in 0..n {
                h.row_mut(k + 1)[i] = g[k * n + i] / self.scale[i];
            }
        }
        Ok((Control::new(h), start.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; n])))
    }

    /// Objective value; writes the adjoint gradient into `grad`.
    pub fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.target.len();
        let dt = self.integ.dt();
        let c = *self.integ.coeffs();
        let w = self.integ.grid().weights();
        let (start, g) = self.split(x);
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push(start.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; n]));
        let mut shifts = Vec::with_capacity(self.steps);
        let mut hdot = vec![0.0; n];
        let mut value = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
        for k in 0..self.steps {
            for i in 0..n {
                hdot[i] = g[k * n + i] / self.scale[i];
            }
            let out = self.integ.step(&states[k], StepForcing::Control(&hdot));
            states.push(out.state);
            shifts.push(out.shift);
        }
        let last = &states[self.steps];
        let mut p: Vec<f64> = (0..n)
            .map(|i| self.weight * w[i] * (last[i] - self.target[i]))
            .collect();
        value += 0.5
            * self.weight
            * (0..n)
                .map(|i| w[i] * (last[i] - self.target[i]).powi(2))
                .sum::<f64>();
        if let Some(s) = start {
            value += 0.5 * self.weight * (0..n).map(|i| w[i] * s[i] * s[i]).sum::<f64>();
        }
        let offset = if self.free_start { n } else { 0 };
        for k in (0..self.steps).rev() {
            self.op_t.solve_shifted_in_place(&shifts[k], &mut p);
            let u = &states[k];
            for i in 0..n {
                let gi = g[k * n + i];
                let h = gi / self.scale[i];
                // d rhs/d g = dt·σ(u)/scale, d action/d g = g.
                grad[offset + k * n + i] = gi + dt * c.sigma(u[i]) * p[i] / self.scale[i];
                p[i] *= 1.0 + dt * c.drift.derivative(u[i]) + dt * c.diffusion.derivative(u[i]) * h;
            }
        }
        if let Some(s) = start {
            for i in 0..n {
                grad[i] = p[i] + self.weight * w[i] * s[i];
            }
        }
        value
    }
}

/// Minimum-action search at a fixed horizon, warm-started from `warm`.
pub fn minimize_action(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    z: &[f64],
    horizon: f64,
    warm: Option<&Control>,
    opts: &QuasipotentialOptions,
) -> Result<QuasipotentialResult> {
    opts.validate()?;
    let steps = step_count(horizon, opts.dt)?;
    let mut x = match warm {
        Some(c) if c.steps() == steps => {
            ActionObjective::new(grid, walls, coeffs, z, steps, opts.dt, 1.0, opts.delta, false)?
                .encode(c, None)
        }
        Some(_) => return Err(Error::MeshMismatch("warm start has the wrong length".into())),
        None => vec![0.0; steps * grid.len()],
    };
    let mut converged = false;
    let mut gradient_norm = f64::INFINITY;
    let mut last = None;
    for &w in &opts.weights {
        let obj = ActionObjective::new(grid, walls, coeffs, z, steps, opts.dt, w, opts.delta, false)?;
        let out = optim::minimize(x, |x, g| obj.value_and_gradient(x, g), &opts.lbfgs);
        converged = out.converged;
        gradient_norm = out.grad_norm;
        x = out.x;
        last = Some(obj);
    }
    let obj = last.expect("at least one weight");
    let (control, _) = obj.decode(&x, 0.0)?;
    score(grid, walls, coeffs, z, horizon, control, converged, gradient_norm)
}

#[allow(clippy::too_many_arguments)]
fn score(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    z: &[f64],
    horizon: f64,
    control: Control,
    converged: bool,
    gradient_norm: f64,
) -> Result<QuasipotentialResult> {
    let zero = vec![0.0; grid.len()];
    let tr = solve_skeleton(grid, walls, coeffs, &zero, &control, Reflection::Projected)?;
    let rc = recover_control(grid, &tr.u, coeffs, walls)?;
    let terminal_error = sup_distance(tr.u.last(), z);
    Ok(QuasipotentialResult {
        target: z.to_vec(),
        value: rc.action,
        horizon,
        path: tr.u,
        control: rc.hdot,
        converged,
        gradient_norm,
        terminal_error,
    })
}

fn trivial_result(grid: &Grid, z: &[f64]) -> Result<QuasipotentialResult> {
    let path = SpaceTimeField::zeros(grid.len(), vec![0.0])?;
    Ok(QuasipotentialResult {
        target: z.to_vec(),
        value: 0.0,
        horizon: 0.0,
        control: Control::new(path.clone()),
        path,
        converged: true,
        gradient_norm: 0.0,
        terminal_error: sup_norm(z),
    })
}

/// `J(z)`: doubling search over horizons, each warm-started from the best
/// control so far delayed by the extra time.
pub fn quasipotential_j(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    z: &[f64],
    opts: &QuasipotentialOptions,
) -> Result<QuasipotentialResult> {
    opts.validate()?;
    grid.check_len(z, "target")?;
    if !walls.contains(z, 0.0) {
        return Err(Error::InadmissibleInitial("target lies outside the walls".into()));
    }
    if sup_norm(z) <= opts.terminal_tol {
        return trivial_result(grid, z);
    }
    let mut best: Option<QuasipotentialResult> = None;
    for &t in &opts.horizons {
        let warm = match &best {
            Some(b) => Some(shift_concat(&b.control, t - b.horizon)?),
            None => None,
        };
        let res = minimize_action(grid, walls, coeffs, z, t, warm.as_ref(), opts)?;
        let previous = best.as_ref().map(|b| b.value);
        if best.as_ref().is_none_or(|b| res.value < b.value) {
            best = Some(res);
        }
        if let Some(prev) = previous {
            let now = best.as_ref().unwrap().value;
            if prev - now <= opts.rel_improvement * prev {
                break;
            }
        }
    }
    Ok(best.expect("horizons are non-empty"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfiniteHorizonResult {
    pub value: f64,
    pub horizon: f64,
    /// `‖v(−T)‖_∞` of the optimized path.
    pub start_norm: f64,
    pub terminal_error: f64,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// `inf I_{−T}^0(v)` over paths ending at `z` whose free starting state is
/// penalized toward 0, with `T` the longest configured horizon.
pub fn infinite_horizon_check(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    z: &[f64],
    opts: &QuasipotentialOptions,
) -> Result<InfiniteHorizonResult> {
    opts.validate()?;
    grid.check_len(z, "target")?;
    let horizon = *opts.horizons.last().expect("validated");
    if sup_norm(z) <= opts.terminal_tol {
        return Ok(InfiniteHorizonResult {
            value: 0.0,
            horizon,
            start_norm: 0.0,
            terminal_error: sup_norm(z),
            converged: true,
            gradient_norm: 0.0,
        });
    }
    let steps = step_count(horizon, opts.dt)?;
    let mut x = vec![0.0; (steps + 1) * grid.len()];
    let mut converged = false;
    let mut gradient_norm = f64::INFINITY;
    let mut last = None;
    for &w in &opts.weights {
        let obj = ActionObjective::new(grid, walls, coeffs, z, steps, opts.dt, w, opts.delta, true)?;
        let out = optim::minimize(x, |x, g| obj.value_and_gradient(x, g), &opts.lbfgs);
        converged = out.converged;
        gradient_norm = out.grad_norm;
        x = out.x;
        last = Some(obj);
    }
    let obj = last.expect("at least one weight");
    let (control, mut start) = obj.decode(&x, -horizon)?;
    // Start exactly inside the band for the projected re-score.
    for ((s, &lo), &hi) in start.iter_mut().zip(walls.lower()).zip(walls.upper()) {
        *s = s.max(lo).min(hi);
    }
    let tr = solve_skeleton(grid, walls, coeffs, &start, &control, Reflection::Projected)?;
    let value = rate_i(grid, &tr.u, -horizon, 0.0, coeffs, walls)?;
    Ok(InfiniteHorizonResult {
        value,
        horizon,
        start_norm: sup_norm(&start),
        terminal_error: sup_distance(tr.u.last(), z),
        converged,
        gradient_norm,
    })
}

/// Control that is zero on `[t0, t0 + T]` and `ḣ(· − T)` afterwards.
pub fn shift_concat(control: &Control, t: f64) -> Result<Control> {
    let h = control.hdot();
    if t == 0.0 {
        return Ok(control.clone());
    }
    let dt = h
        .uniform_dt()
        .ok_or_else(|| Error::MeshMismatch("control time mesh is not uniform".into()))?;
    let pad = step_count(t, dt)?;
    let n = h.nodes();
    let t0 = h.times()[0];
    let mut out = SpaceTimeField::zeros(n, uniform_times(t0, dt, pad + h.steps()))?;
    for k in 1..=h.steps() {
        out.row_mut(pad + k).copy_from_slice(h.row(k));
    }
    Ok(Control::new(out))
}

/// Concatenates a zero-control flow on `[0, T]` with a tail started from its
/// final state; the tail's clock is shifted by `T`.
pub fn glue_path(u0_flow: &Trajectory, tail: &Trajectory) -> Result<SpaceTimeField> {
    let head = &u0_flow.u;
    let rest = &tail.u;
    if head.nodes() != rest.nodes() {
        return Err(Error::MeshMismatch("paths have different grids".into()));
    }
    let jump = sup_distance(head.last(), rest.first());
    if jump > 1e-10 {
        return Err(Error::MeshMismatch(format!("junction jump {jump} exceeds 1e-10")));
    }
    let t_end = head.times()[head.times().len() - 1];
    let t_tail = rest.times()[0];
    let mut times = head.times().to_vec();
    times.extend(rest.times()[1..].iter().map(|t| t - t_tail + t_end));
    let mut values = head.values().to_vec();
    values.extend_from_slice(&rest.values()[rest.nodes()..]);
    SpaceTimeField::new(head.nodes(), times, values)
}

/// `F(T₀) = sup_{t ≤ T₀} ‖u^{h̄}(0, t) − u^{h̄}(u⁰(z, T), t)‖_∞` and its ratio
/// to `‖u⁰(z, T)‖_∞`.
#[allow(clippy::too_many_arguments)]
pub fn stability_bound_check(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    z: &[f64],
    t: f64,
    t0: f64,
    hbar: &Control,
) -> Result<(f64, f64)> {
    coeffs.alpha1()?;
    let h = hbar.hdot();
    let dt = h
        .uniform_dt()
        .ok_or_else(|| Error::MeshMismatch("control time mesh is not uniform".into()))?;
    if step_count(t0, dt)? != h.steps() {
        return Err(Error::MeshMismatch("control does not span [0, T0]".into()));
    }
    let flow = solve_deterministic(grid, walls, coeffs, z, t, dt)?;
    let zt = flow.u.last().to_vec();
    let zero = vec![0.0; grid.len()];
    let psi = solve_skeleton(grid, walls, coeffs, &zero, hbar, Reflection::Projected)?;
    let psi_bar = solve_skeleton(grid, walls, coeffs, &zt, hbar, Reflection::Projected)?;
    let f = psi.u.sup_distance(&psi_bar.u)?;
    let base = sup_norm(&zt);
    let ratio = if base > 0.0 { f / base } else { 0.0 };
    Ok((f, ratio))
}

/// Sup-norm distance from `z` to the nearest cataloged target with `J ≤ s`.
pub fn level_set_distance(z: &[f64], s: f64, catalog: &[QuasipotentialResult]) -> Result<f64> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    Ok(catalog
        .iter()
        .filter(|e| e.value <= s)
        .map(|e| sup_distance(z, &e.target))
        .fold(f64::INFINITY, f64::min))
}

/// `ε₀ = ½·min(−max K1, min K2)`.
pub fn eps0(walls: &Walls) -> f64 {
    walls.eps0()
}
