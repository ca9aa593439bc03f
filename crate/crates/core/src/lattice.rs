//! Uniform lattice on `[0, 1]` with Neumann structure.
//!
//! All spatial integrals use trapezoid weights (`dx/2` at the two end nodes,
//! `dx` elsewhere). The discrete operator `A = L − α` uses mirrored ghost
//! points at `x = 0, 1`, which makes `W·L` symmetric for the diagonal weight
//! matrix `W`, kills constants exactly and has the cosine vectors
//! `cos(kπ x_i)` as exact eigenvectors.

use crate::error::{Error, Result};

/// Minimum number of intervals accepted by [`Grid::new`].
pub const MIN_INTERVALS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    dx: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_INTERVALS {
            return Err(Error::GridTooCoarse(n));
        }
        let dx = 1.0 / n as f64;
        let nodes = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut weights = vec![dx; n + 1];
        weights[0] = 0.5 * dx;
        weights[n] = 0.5 * dx;
        Ok(Self {
            n,
            dx,
            nodes,
            weights,
        })
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.n
    }

    /// Number of nodes, `n + 1`.
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.len());
        u.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.len());
        debug_assert_eq!(v.len(), self.len());
        u.iter()
            .zip(v)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn l2_norm_sq(&self, u: &[f64]) -> f64 {
        self.inner(u, u)
    }

    /// Samples `f` at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    pub(crate) fn check_len(&self, u: &[f64], what: &str) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{what} has {} entries, grid has {} nodes",
                u.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

pub fn sup_norm(u: &[f64]) -> f64 {
    u.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn sup_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Hölder norm `‖f‖_∞ + sup_{i≠j} |f_i − f_j| / |x_i − x_j|^γ` on the grid.
pub fn holder_norm(grid: &Grid, f: &[f64], gamma: f64) -> f64 {
    debug_assert_eq!(f.len(), grid.len());
    let x = grid.nodes();
    let mut seminorm = 0.0_f64;
    for i in 0..f.len() {
        for j in (i + 1)..f.len() {
            let q = (f[i] - f[j]).abs() / (x[j] - x[i]).powf(gamma);
            seminorm = seminorm.max(q);
        }
    }
    sup_norm(f) + seminorm
}

/// Wall profiles `K1 < 0 < K2` sampled at the nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Walls {
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_d2: Vec<f64>,
    upper_d2: Vec<f64>,
}

impl Walls {
    pub fn constant(grid: &Grid, lower: f64, upper: f64) -> Result<Self> {
        Self::from_profiles(grid, vec![lower; grid.len()], vec![upper; grid.len()])
    }

    pub fn from_profiles(grid: &Grid, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        grid.check_len(&lower, "lower wall")?;
        grid.check_len(&upper, "upper wall")?;
        for (node, (&k1, &k2)) in lower.iter().zip(&upper).enumerate() {
            if !(k1.is_finite() && k2.is_finite() && k1 < 0.0 && 0.0 < k2) {
                return Err(Error::InvalidWalls {
                    node,
                    lower: k1,
                    upper: k2,
                });
            }
        }
        let lap = Operator::new(grid, 0.0)?;
        let lower_d2 = lap.apply(&lower);
        let upper_d2 = lap.apply(&upper);
        Ok(Self {
            lower,
            upper,
            lower_d2,
            upper_d2,
        })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Discrete second derivative of `K1`.
    pub fn lower_d2(&self) -> &[f64] {
        &self.lower_d2
    }

    pub fn upper_d2(&self) -> &[f64] {
        &self.upper_d2
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// `min_i (K2 − K1)`.
    pub fn gap(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(f64::INFINITY, |m, (a, b)| m.min(b - a))
    }

    pub fn lower_sup(&self) -> f64 {
        sup_norm(&self.lower)
    }

    pub fn upper_sup(&self) -> f64 {
        sup_norm(&self.upper)
    }

    pub fn min_lower(&self) -> f64 {
        self.lower.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_upper(&self) -> f64 {
        self.upper.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Half the distance from zero to the nearer wall: states with
    /// `‖v‖_∞ < eps0` never touch either wall.
    pub fn eps0(&self) -> f64 {
        let max_lower = self.lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_upper = self.upper.iter().copied().fold(f64::INFINITY, f64::min);
        0.5 * (-max_lower).min(min_upper)
    }

    /// First node where `u` leaves `[K1 − tol, K2 + tol]`.
    pub fn first_violation(&self, u: &[f64], tol: f64) -> Option<usize> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .position(|(&v, (&k1, &k2))| !(v >= k1 - tol && v <= k2 + tol))
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.first_violation(u, tol).is_none()
    }
}

/// Field sampled on the grid at an increasing sequence of times, stored row
/// by row (one row per time).
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    nodes: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(nodes: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Dimension("a field needs at least one time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::MeshMismatch("times must be strictly increasing".into()));
        }
        if values.len() != nodes * times.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} times x {} nodes",
                values.len(),
                times.len(),
                nodes
            )));
        }
        Ok(Self {
            nodes,
            times,
            values,
        })
    }

    pub fn zeros(nodes: usize, times: Vec<f64>) -> Result<Self> {
        let values = vec![0.0; nodes * times.len()];
        Self::new(nodes, times, values)
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let nodes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nodes) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(nodes, times, rows.concat())
    }

    /// Field sampled at `x` for times `0, dt, …, steps·dt`.
    pub fn from_fn(
        grid: &Grid,
        dt: f64,
        steps: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let times = uniform_times(0.0, dt, steps);
        let mut values = Vec::with_capacity(times.len() * grid.len());
        for &t in &times {
            values.extend(grid.nodes().iter().map(|&x| f(x, t)));
        }
        Self::new(grid.len(), times, values)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of time intervals (rows − 1).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.nodes..(k + 1) * self.nodes]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.nodes..(k + 1) * self.nodes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.nodes.max(1))
    }

    pub fn first(&self) -> &[f64] {
        self.row(0)
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.steps())
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup-norm distance to a field on the same mesh.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_mesh(other)?;
        Ok(sup_distance(&self.values, &other.values))
    }

    /// Time step if the mesh is uniform to relative precision `1e−9`.
    pub fn uniform_dt(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let dt = (self.times[self.times.len() - 1] - self.times[0]) / self.steps() as f64;
        let uniform = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(1e-300));
        uniform.then_some(dt)
    }

    pub fn check_same_mesh(&self, other: &Self) -> Result<()> {
        if self.nodes != other.nodes || self.times.len() != other.times.len() {
            return Err(Error::MeshMismatch(format!(
                "{}x{} against {}x{}",
                self.times.len(),
                self.nodes,
                other.times.len(),
                other.nodes
            )));
        }
        let scale = self.times.last().unwrap().abs().max(1.0);
        if self
            .times
            .iter()
            .zip(&other.times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * scale)
        {
            return Err(Error::MeshMismatch("time meshes differ".into()));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            nodes: self.nodes,
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_mesh(other)?;
        Ok(Self {
            nodes: self.nodes,
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

pub fn uniform_times(start: f64, dt: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| start + k as f64 * dt).collect()
}

/// Tridiagonal matrix: row `i` reads `sub[i]·x[i−1] + diag[i]·x[i] + sup[i]·x[i+1]`.
/// `sub[0]` and `sup[len−1]` are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.mul_into(x, &mut out);
        out
    }

    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.sub[i] * x[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 1..n {
            sub[i] = self.sup[i - 1];
        }
        for i in 0..n.saturating_sub(1) {
            sup[i] = self.sub[i + 1];
        }
        Self {
            sub,
            diag: self.diag.clone(),
            sup,
        }
    }

    /// Solves in place with the Thomas algorithm. The matrices built here are
    /// strictly diagonally dominant, so no pivoting is needed.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        thomas(&self.sub, &self.diag, &self.sup, rhs, None);
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `(self + diag(extra)) x = rhs` in place.
    pub fn solve_shifted_in_place(&self, extra: &[f64], rhs: &mut [f64]) {
        thomas(&self.sub, &self.diag, &self.sup, rhs, Some(extra));
    }

    pub fn factor(&self) -> TridiagonalLu {
        TridiagonalLu::new(self)
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], extra: Option<&[f64]>) {
    let n = diag.len();
    debug_assert_eq!(rhs.len(), n);
    let d = |i: usize| diag[i] + extra.map_or(0.0, |e| e[i]);
    let mut c = vec![0.0; n];
    let mut denom = d(0);
    c[0] = if n > 1 { sup[0] / denom } else { 0.0 };
    rhs[0] /= denom;
    for i in 1..n {
        denom = d(i) - sub[i] * c[i - 1];
        if i + 1 < n {
            c[i] = sup[i] / denom;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Pre-factored Thomas solver for repeated solves with one matrix.
#[derive(Clone, Debug)]
pub struct TridiagonalLu {
    sub: Vec<f64>,
    upper: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl TridiagonalLu {
    fn new(m: &Tridiagonal) -> Self {
        let n = m.len();
        let mut upper = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        inv_denom[0] = 1.0 / m.diag[0];
        if n > 1 {
            upper[0] = m.sup[0] * inv_denom[0];
        }
        for i in 1..n {
            let denom = m.diag[i] - m.sub[i] * upper[i - 1];
            inv_denom[i] = 1.0 / denom;
            if i + 1 < n {
                upper[i] = m.sup[i] * inv_denom[i];
            }
        }
        Self {
            sub: m.sub.clone(),
            upper,
            inv_denom,
        }
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.inv_denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.sub[i] * rhs[i - 1]) * self.inv_denom[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.upper[i] * rhs[i + 1];
        }
    }
}

/// `A = d²/dx² − α` with mirrored ghost points at both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    alpha: f64,
    dx: f64,
    matrix: Tridiagonal,
}

impl Operator {
    pub fn new(grid: &Grid, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::NegativeAlpha(alpha));
        }
        let n = grid.len();
        let inv = 1.0 / (grid.dx() * grid.dx());
        let mut sub = vec![inv; n];
        let mut sup = vec![inv; n];
        let diag = vec![-2.0 * inv - alpha; n];
        sub[0] = 0.0;
        sup[0] = 2.0 * inv;
        sub[n - 1] = 2.0 * inv;
        sup[n - 1] = 0.0;
        Ok(Self {
            alpha,
            dx: grid.dx(),
            matrix: Tridiagonal { sub, diag, sup },
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn matrix(&self) -> &Tridiagonal {
        &self.matrix
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.mul(u)
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        self.matrix.mul_into(u, out)
    }

    /// `I − dt·A`.
    pub fn implicit(&self, dt: f64) -> Tridiagonal {
        let m = &self.matrix;
        Tridiagonal {
            sub: m.sub.iter().map(|a| -dt * a).collect(),
            diag: m.diag.iter().map(|a| 1.0 - dt * a).collect(),
            sup: m.sup.iter().map(|a| -dt * a).collect(),
        }
    }

    /// Eigenvalue of the cosine mode `cos(kπx)`, `k = 0..=n`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let n = self.dim() - 1;
        let theta = k as f64 * std::f64::consts::PI / n as f64;
        -(2.0 - 2.0 * theta.cos()) / (self.dx * self.dx) - self.alpha
    }
}

/// Convenience constructor mirroring [`Operator::new`].
pub fn neumann_operator(grid: &Grid, alpha: f64) -> Result<Operator> {
    Operator::new(grid, alpha)
}

/// Kernel density of `G_t` with respect to the trapezoid measure:
/// `(G_t f)(x_i) = Σ_j K_ij f_j w_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatKernel {
    size: usize,
    weights: Vec<f64>,
    data: Vec<f64>,
}

/// Builds `G_t = e^{−αt} P_t` from the exact cosine eigen-decomposition of
/// the discrete operator, so that `G_{t+s} = G_t ∘ G_s` up to round-off.
pub fn heat_kernel(grid: &Grid, alpha: f64, t: f64) -> Result<HeatKernel> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::NonPositiveTime(t));
    }
    let op = Operator::new(grid, alpha)?;
    let n = grid.intervals();
    let size = grid.len();
    let mut data = vec![0.0; size * size];
    let mut mode = vec![0.0; size];
    for k in 0..=n {
        let decay = (op.eigenvalue(k) * t).exp();
        let norm_sq = if k == 0 || k == n { 1.0 } else { 0.5 };
        let coef = decay / norm_sq;
        if coef == 0.0 {
            continue;
        }
        for (i, m) in mode.iter_mut().enumerate() {
            *m = (std::f64::consts::PI * (k * i) as f64 / n as f64).cos();
        }
        for i in 0..size {
            let ci = coef * mode[i];
            let row = &mut data[i * size..(i + 1) * size];
            for (r, &mj) in row.iter_mut().zip(&mode) {
                *r += ci * mj;
            }
        }
    }
    Ok(HeatKernel {
        size,
        weights: grid.weights().to_vec(),
        data,
    })
}

impl HeatKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `∫ G_t(x_i, y) dy` by the trapezoid rule.
    pub fn row_integral(&self, i: usize) -> f64 {
        self.row(i).iter().zip(&self.weights).map(|(k, w)| k * w).sum()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(f)
                    .zip(&self.weights)
                    .map(|((k, v), w)| k * v * w)
                    .sum()
            })
            .collect()
    }

    /// `(self ∘ other)(x, y) = ∫ self(x, z) other(z, y) dz`.
    pub fn compose(&self, other: &HeatKernel) -> HeatKernel {
        let n = self.size;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entry(i, k) * self.weights[k];
                if a == 0.0 {
                    continue;
                }
                let out = &mut data[i * n..(i + 1) * n];
                for (o, b) in out.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        HeatKernel {
            size: n,
            weights: self.weights.clone(),
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &HeatKernel) -> f64 {
        sup_distance(&self.data, &other.data)
    }
}
