//! Deterministic two-wall obstacle problem and the implicit reflection step.
//!
//! One backward-Euler step with reflection reads
//!
//! ```text
//! (I − dt·A) u = q + dt·(η̇ − ξ̇),   L ≤ u ≤ U,
//! η̇, ξ̇ ≥ 0,   η̇·(u − L) = 0,   ξ̇·(U − u) = 0,
//! ```
//!
//! a linear complementarity problem with an M-matrix. [`ReflectionStep`]
//! solves it exactly by an active-set iteration that is safeguarded with
//! projected Gauss–Seidel sweeps, and also solves the penalized relaxation in
//! which the local times are replaced by `(1/δ)(u − L)⁻` and
//! `(1/ε)(u − U)⁺`.

use crate::error::{Error, Result};
use crate::lattice::{Grid, Operator, SpaceTimeField, Tridiagonal, TridiagonalLu, Walls};

/// Exactness of the projection: reflected states sit on the walls to this
/// absolute tolerance.
pub const TOL_WALL: f64 = 1e-12;

/// Relative complementarity tolerance, scaled by `1 + total local-time mass`.
pub const TOL_COMP: f64 = 1e-6;

const MAX_ACTIVE_SET_ROUNDS: usize = 10_000;
const SWEEPS_PER_ROUND: usize = 4;
const MAX_NEWTON: usize = 60;

/// How reflection is enforced in a time step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reflection {
    /// Exact discrete obstacle problem.
    Projected,
    /// Penalized relaxation with lower/upper penalty widths.
    Penalized { delta: f64, eps_pen: f64 },
}

impl Reflection {
    pub fn validate(&self) -> Result<()> {
        if let Reflection::Penalized { delta, eps_pen } = *self {
            if !(delta > 0.0) || !(eps_pen > 0.0) {
                return Err(Error::param("delta", "penalty widths must be positive"));
            }
        }
        Ok(())
    }
}

/// Initial iterate of the projected solver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WarmStart {
    /// Unconstrained implicit step clamped to the band.
    #[default]
    ClampedFree,
    /// The right-hand side (previous state) clamped to the band.
    ClampedRhs,
    /// The zero vector clamped to the band.
    ClampedZero,
}

/// Result of one reflected step. `eta` and `xi` are local-time densities
/// (force per unit length per unit time).
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub state: Vec<f64>,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    /// Diagonal added to `I − dt·A` by active penalty terms (zero for the
    /// projected step); the Jacobian of the penalized step is
    /// `I − dt·A + diag(shift)`.
    pub shift: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReflectionStep {
    dt: f64,
    matrix: Tridiagonal,
    lu: TridiagonalLu,
}

impl ReflectionStep {
    pub fn new(op: &Operator, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::NonPositiveTime(dt));
        }
        let matrix = op.implicit(dt);
        let lu = matrix.factor();
        Ok(Self { dt, matrix, lu })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `I − dt·A`.
    pub fn matrix(&self) -> &Tridiagonal {
        &self.matrix
    }

    /// Unconstrained step `(I − dt·A)⁻¹ q`.
    pub fn free(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.lu.solve_in_place(&mut x);
        x
    }

    pub fn reflect(
        &self,
        rhs: &[f64],
        lower: &[f64],
        upper: &[f64],
        mode: Reflection,
    ) -> StepOutput {
        match mode {
            Reflection::Projected => self.projected(rhs, lower, upper, WarmStart::default()),
            Reflection::Penalized { delta, eps_pen } => {
                self.penalized(rhs, lower, upper, delta, eps_pen)
            }
        }
    }

    /// Exact solution of the discrete obstacle problem.
    pub fn projected(
        &self,
        rhs: &[f64],
        lower: &[f64],
        upper: &[f64],
        start: WarmStart,
    ) -> StepOutput {
        let n = rhs.len();
        let free = self.free(rhs);
        if start == WarmStart::ClampedFree && within(&free, lower, upper) {
            return StepOutput {
                state: free,
                eta: vec![0.0; n],
                xi: vec![0.0; n],
                shift: vec![0.0; n],
            };
        }
        let mut u: Vec<f64> = match start {
            WarmStart::ClampedFree => free,
            WarmStart::ClampedRhs => rhs.to_vec(),
            WarmStart::ClampedZero => vec![0.0; n],
        };
        clamp_into(&mut u, lower, upper);

        let scale = 1.0 + rhs.iter().chain(lower).chain(upper).fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-13 * scale;
        let m = &self.matrix;
        let mut status = vec![Contact::Free; n];
        let mut x = vec![0.0; n];
        let mut res = vec![0.0; n];
        for _ in 0..MAX_ACTIVE_SET_ROUNDS {
            for i in 0..n {
                status[i] = if u[i] <= lower[i] {
                    Contact::Lower
                } else if u[i] >= upper[i] {
                    Contact::Upper
                } else {
                    Contact::Free
                };
            }
            self.solve_with_contacts(rhs, lower, upper, &status, &mut x);
            m.mul_into(&x, &mut res);
            let consistent = (0..n).all(|i| {
                let r = res[i] - rhs[i];
                match status[i] {
                    Contact::Free => x[i] >= lower[i] - tol && x[i] <= upper[i] + tol,
                    Contact::Lower => r >= -tol,
                    Contact::Upper => r <= tol,
                }
            });
            if consistent {
                let mut eta = vec![0.0; n];
                let mut xi = vec![0.0; n];
                for i in 0..n {
                    let r = (res[i] - rhs[i]) / self.dt;
                    match status[i] {
                        Contact::Lower => eta[i] = r.max(0.0),
                        Contact::Upper => xi[i] = (-r).max(0.0),
                        Contact::Free => {}
                    }
                }
                clamp_into(&mut x, lower, upper);
                return StepOutput {
                    state: x,
                    eta,
                    xi,
                    shift: vec![0.0; n],
                };
            }
            u.copy_from_slice(&x);
            clamp_into(&mut u, lower, upper);
            for _ in 0..SWEEPS_PER_ROUND {
                projected_gauss_seidel_sweep(m, rhs, lower, upper, &mut u);
            }
        }
        unreachable!("projected Gauss-Seidel converges for M-matrices")
    }

    /// Solves `(I − dt·A) x = q` on free nodes with contact nodes pinned to
    /// their wall.
    fn solve_with_contacts(
        &self,
        rhs: &[f64],
        lower: &[f64],
        upper: &[f64],
        status: &[Contact],
        x: &mut [f64],
    ) {
        let n = rhs.len();
        let m = &self.matrix;
        let mut sub = m.sub.clone();
        let mut diag = m.diag.clone();
        let mut sup = m.sup.clone();
        for i in 0..n {
            x[i] = match status[i] {
                Contact::Free => rhs[i],
                Contact::Lower => lower[i],
                Contact::Upper => upper[i],
            };
            if status[i] != Contact::Free {
                sub[i] = 0.0;
                sup[i] = 0.0;
                diag[i] = 1.0;
            }
        }
        Tridiagonal { sub, diag, sup }.solve_in_place(x);
    }

    /// Implicit penalized step: solves
    /// `(I − dt·A) u − (dt/δ)(u − L)⁻ + (dt/ε)(u − U)⁺ = q`
    /// by a semismooth Newton (active-set) iteration, falling back to
    /// nonlinear Gauss–Seidel with closed-form node-wise updates.
    pub fn penalized(
        &self,
        rhs: &[f64],
        lower: &[f64],
        upper: &[f64],
        delta: f64,
        eps_pen: f64,
    ) -> StepOutput {
        let n = rhs.len();
        let kl = self.dt / delta;
        let ku = self.dt / eps_pen;
        let mut u = self.free(rhs);
        let mut sides = vec![0i8; n];
        let mut shift = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut converged = false;
        for _ in 0..MAX_NEWTON {
            for i in 0..n {
                sides[i] = side(u[i], lower[i], upper[i]);
            }
            self.penalty_solve(rhs, lower, upper, &sides, kl, ku, &mut shift, &mut x);
            let same = (0..n).all(|i| side(x[i], lower[i], upper[i]) == sides[i]);
            u.copy_from_slice(&x);
            if same {
                converged = true;
                break;
            }
        }
        if !converged {
            let scale = 1.0 + rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            loop {
                let change =
                    penalized_gauss_seidel_sweep(&self.matrix, rhs, lower, upper, kl, ku, &mut u);
                if change <= 1e-15 * scale {
                    break;
                }
            }
            for i in 0..n {
                sides[i] = side(u[i], lower[i], upper[i]);
            }
            self.penalty_solve(rhs, lower, upper, &sides, kl, ku, &mut shift, &mut x);
            u.copy_from_slice(&x);
        }
        let eta = u
            .iter()
            .zip(lower)
            .map(|(&v, &k)| (k - v).max(0.0) / delta)
            .collect();
        let xi = u
            .iter()
            .zip(upper)
            .map(|(&v, &k)| (v - k).max(0.0) / eps_pen)
            .collect();
        StepOutput {
            state: u,
            eta,
            xi,
            shift,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn penalty_solve(
        &self,
        rhs: &[f64],
        lower: &[f64],
        upper: &[f64],
        sides: &[i8],
        kl: f64,
        ku: f64,
        shift: &mut [f64],
        x: &mut [f64],
    ) {
        for i in 0..rhs.len() {
            let (d, wall) = match sides[i] {
                -1 => (kl, lower[i]),
                1 => (ku, upper[i]),
                _ => (0.0, 0.0),
            };
            shift[i] = d;
            x[i] = rhs[i] + d * wall;
        }
        self.matrix.solve_shifted_in_place(shift, x);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Contact {
    Free,
    Lower,
    Upper,
}

fn side(v: f64, lower: f64, upper: f64) -> i8 {
    if v < lower {
        -1
    } else if v > upper {
        1
    } else {
        0
    }
}

fn within(u: &[f64], lower: &[f64], upper: &[f64]) -> bool {
    u.iter()
        .zip(lower.iter().zip(upper))
        .all(|(&v, (&l, &h))| v >= l && v <= h)
}

fn clamp_into(u: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &l), &h) in u.iter_mut().zip(lower).zip(upper) {
        *v = v.max(l).min(h);
    }
}

fn projected_gauss_seidel_sweep(
    m: &Tridiagonal,
    rhs: &[f64],
    lower: &[f64],
    upper: &[f64],
    u: &mut [f64],
) {
    let n = u.len();
    for i in 0..n {
        let mut r = rhs[i];
        if i > 0 {
            r -= m.sub[i] * u[i - 1];
        }
        if i + 1 < n {
            r -= m.sup[i] * u[i + 1];
        }
        u[i] = (r / m.diag[i]).max(lower[i]).min(upper[i]);
    }
}

fn penalized_gauss_seidel_sweep(
    m: &Tridiagonal,
    rhs: &[f64],
    lower: &[f64],
    upper: &[f64],
    kl: f64,
    ku: f64,
    u: &mut [f64],
) -> f64 {
    let n = u.len();
    let mut change = 0.0_f64;
    for i in 0..n {
        let mut r = rhs[i];
        if i > 0 {
            r -= m.sub[i] * u[i - 1];
        }
        if i + 1 < n {
            r -= m.sup[i] * u[i + 1];
        }
        let d = m.diag[i];
        let y = r / d;
        let v = if y < lower[i] {
            (r + kl * lower[i]) / (d + kl)
        } else if y > upper[i] {
            (r + ku * upper[i]) / (d + ku)
        } else {
            y
        };
        change = change.max((v - u[i]).abs());
        u[i] = v;
    }
    change
}

/// Nonnegative local-time density on a time mesh. Row `k ≥ 1` holds the
/// density acting over `(t_{k−1}, t_k]`; row 0 is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTime {
    density: SpaceTimeField,
    total_mass: f64,
}

impl LocalTime {
    pub fn new(grid: &Grid, density: SpaceTimeField) -> Result<Self> {
        if density.nodes() != grid.len() {
            return Err(Error::Dimension("local time does not match the grid".into()));
        }
        if let Some(pos) = density.values().iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::param(
                "local time",
                format!("density must be finite and nonnegative (entry {pos})"),
            ));
        }
        let total_mass = step_integral(grid, &density, |_, v| v);
        Ok(Self {
            density,
            total_mass,
        })
    }

    pub fn zeros(grid: &Grid, times: Vec<f64>) -> Result<Self> {
        Self::new(grid, SpaceTimeField::zeros(grid.len(), times)?)
    }

    pub fn density(&self) -> &SpaceTimeField {
        &self.density
    }

    /// `η([0,1] × [0,T])`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_zero(&self) -> bool {
        self.density.values().iter().all(|&v| v == 0.0)
    }
}

/// `Σ_{k≥1} (t_k − t_{k−1}) Σ_i w_i g(i, ρ_{k,i})` for a step density `ρ`.
pub(crate) fn step_integral(
    grid: &Grid,
    density: &SpaceTimeField,
    g: impl Fn(usize, f64) -> f64,
) -> f64 {
    let times = density.times();
    let w = grid.weights();
    (1..times.len())
        .map(|k| {
            let dt = times[k] - times[k - 1];
            dt * density
                .row(k)
                .iter()
                .enumerate()
                .map(|(i, &v)| w[i] * g(i, v))
                .sum::<f64>()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleSolution {
    pub z: SpaceTimeField,
    pub eta: LocalTime,
    pub xi: LocalTime,
}

/// The two discrete complementarity integrals and the tolerance they are
/// held to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplementarityReport {
    /// `∫ (u − K1) dη`.
    pub lower: f64,
    /// `∫ (K2 − u) dξ`.
    pub upper: f64,
    pub tolerance: f64,
}

impl ComplementarityReport {
    pub fn holds(&self) -> bool {
        self.lower <= self.tolerance && self.upper <= self.tolerance
    }
}

/// Solves the obstacle problem for `z` with `K1 − v ≤ z ≤ K2 − v` and
/// `z(·, 0) = 0`, driven by the continuous path `v`.
pub fn solve_obstacle(
    grid: &Grid,
    v: &SpaceTimeField,
    walls: &Walls,
    alpha: f64,
    dt: f64,
) -> Result<ObstacleSolution> {
    solve_obstacle_with(grid, v, walls, alpha, dt, WarmStart::default())
}

pub fn solve_obstacle_with(
    grid: &Grid,
    v: &SpaceTimeField,
    walls: &Walls,
    alpha: f64,
    dt: f64,
    start: WarmStart,
) -> Result<ObstacleSolution> {
    if v.nodes() != grid.len() || walls.len() != grid.len() {
        return Err(Error::Dimension("forcing path, walls and grid disagree".into()));
    }
    check_uniform_mesh(v, dt)?;
    if let Some(node) = walls.first_violation(v.first(), TOL_WALL) {
        return Err(Error::InadmissibleInitial(format!(
            "v(x, 0) = {} lies outside the walls at node {node}",
            v.first()[node]
        )));
    }
    let op = Operator::new(grid, alpha)?;
    let stepper = ReflectionStep::new(&op, dt)?;
    let n = grid.len();
    let steps = v.steps();
    let mut z = SpaceTimeField::zeros(n, v.times().to_vec())?;
    let mut eta = SpaceTimeField::zeros(n, v.times().to_vec())?;
    let mut xi = SpaceTimeField::zeros(n, v.times().to_vec())?;
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for k in 0..steps {
        let vn = v.row(k + 1);
        for i in 0..n {
            lower[i] = walls.lower()[i] - vn[i];
            upper[i] = walls.upper()[i] - vn[i];
        }
        let out = stepper.projected(z.row(k), &lower, &upper, start);
        z.row_mut(k + 1).copy_from_slice(&out.state);
        eta.row_mut(k + 1).copy_from_slice(&out.eta);
        xi.row_mut(k + 1).copy_from_slice(&out.xi);
    }
    Ok(ObstacleSolution {
        z,
        eta: LocalTime::new(grid, eta)?,
        xi: LocalTime::new(grid, xi)?,
    })
}

pub(crate) fn check_uniform_mesh(v: &SpaceTimeField, dt: f64) -> Result<()> {
    if v.steps() == 0 {
        return Ok(());
    }
    match v.uniform_dt() {
        Some(h) if (h - dt).abs() <= 1e-9 * dt => Ok(()),
        Some(h) => Err(Error::MeshMismatch(format!("path step {h} differs from dt = {dt}"))),
        None => Err(Error::MeshMismatch("path time mesh is not uniform".into())),
    }
}

/// Complementarity integrals of an obstacle solution against its forcing.
pub fn check_complementarity(
    grid: &Grid,
    sol: &ObstacleSolution,
    v: &SpaceTimeField,
    walls: &Walls,
) -> Result<ComplementarityReport> {
    let u = sol.z.zip_map(v, |a, b| a + b)?;
    complementarity(grid, &u, &sol.eta, &sol.xi, walls)
}

/// Complementarity integrals `∫ (u − K1) dη` and `∫ (K2 − u) dξ` for a
/// reflected state `u`, evaluated where each local time acts.
pub fn complementarity(
    grid: &Grid,
    u: &SpaceTimeField,
    eta: &LocalTime,
    xi: &LocalTime,
    walls: &Walls,
) -> Result<ComplementarityReport> {
    u.check_same_mesh(eta.density())?;
    u.check_same_mesh(xi.density())?;
    if walls.len() != u.nodes() {
        return Err(Error::MeshMismatch("walls do not match the field".into()));
    }
    let mut lower = 0.0;
    let mut upper = 0.0;
    let w = grid.weights();
    for k in 1..u.times().len() {
        let dt = u.times()[k] - u.times()[k - 1];
        let (row, e, x) = (u.row(k), eta.density().row(k), xi.density().row(k));
        for i in 0..u.nodes() {
            lower += dt * w[i] * ((row[i] - walls.lower()[i]) * e[i]).abs();
            upper += dt * w[i] * ((walls.upper()[i] - row[i]) * x[i]).abs();
        }
    }
    Ok(ComplementarityReport {
        lower,
        upper,
        tolerance: TOL_COMP * (1.0 + eta.total_mass() + xi.total_mass()),
    })
}
