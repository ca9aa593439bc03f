//! Monte Carlo sampling of the invariant measure and finite-ε diagnostics.
//!
//! Nothing here claims a limit. Ball probabilities come with Wilson 95%
//! intervals, and the scaling curve `ε² log p̂_ε` is only checked against a
//! bracket `[−J_outer, −J_inner]` and for a monotone trend in `ε`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CoefficientSpec, Integrator, NoiseStream, StepForcing, TOL_CONFINE};
use crate::error::{Error, Result};
use crate::lattice::{holder_norm, sup_distance, sup_norm, Grid, Walls};
use crate::obstacle::Reflection;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Minimum burn-in in relaxation times `1/α₁`.
pub const MIN_BURN_IN_RELAXATIONS: f64 = 5.0;

/// Burn-in, thinning (both in time units) and sample count per seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub dt: f64,
    pub burn_in: f64,
    pub thin: f64,
    pub samples_per_seed: usize,
}

impl SamplingPlan {
    /// Burn-in `10/α₁`, thinning `1/α₁`.
    pub fn relaxation_default(alpha1: f64, dt: f64, samples_per_seed: usize) -> Self {
        Self {
            dt,
            burn_in: 10.0 / alpha1,
            thin: 1.0 / alpha1,
            samples_per_seed,
        }
    }

    fn steps(&self, span: f64) -> usize {
        ((span / self.dt).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    pub samples: Vec<Vec<f64>>,
    pub eps: f64,
    pub plan: SamplingPlan,
    pub seeds: Vec<u64>,
}

impl EmpiricalMeasure {
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    /// `∫ u dx` of every sample.
    pub fn spatial_means(&self, grid: &Grid) -> Vec<f64> {
        self.samples.iter().map(|s| grid.integrate(s)).collect()
    }
}

/// Runs the projected stochastic flow from 0 once per seed (stream 0),
/// discards `burn_in`, then records a state every `thin`.
pub fn sample_invariant(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    eps: f64,
    plan: &SamplingPlan,
    seeds: &[u64],
) -> Result<EmpiricalMeasure> {
    let alpha1 = coeffs.alpha1()?;
    let minimum = MIN_BURN_IN_RELAXATIONS / alpha1;
    if plan.burn_in < minimum {
        return Err(Error::BurnInTooShort {
            burn_in: plan.burn_in,
            minimum,
        });
    }
    if !(plan.thin > 0.0) || plan.samples_per_seed == 0 {
        return Err(Error::param("plan", "thin must be positive and samples_per_seed nonzero"));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::param("eps", "noise level must be finite and nonnegative"));
    }
    if seeds.is_empty() {
        return Err(Error::param("seeds", "need at least one seed"));
    }
    let integ = Integrator::new(grid, walls, coeffs, plan.dt, Reflection::Projected)?;
    let per_seed: Vec<Result<Vec<Vec<f64>>>> = seeds
        .par_iter()
        .map(|&seed| run_chain(&integ, eps, plan, seed))
        .collect();
    let mut samples = Vec::with_capacity(seeds.len() * plan.samples_per_seed);
    for chain in per_seed {
        samples.extend(chain?);
    }
    for (step, s) in samples.iter().enumerate() {
        if let Some(node) = walls.first_violation(s, TOL_CONFINE) {
            return Err(Error::OutsideWalls { step, node });
        }
    }
    Ok(EmpiricalMeasure {
        samples,
        eps,
        plan: *plan,
        seeds: seeds.to_vec(),
    })
}

fn run_chain(integ: &Integrator, eps: f64, plan: &SamplingPlan, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = integ.grid().len();
    let mut noise = NoiseStream::new(integ.grid(), plan.dt, seed, 0);
    let mut u = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut advance = |u: &mut Vec<f64>, steps: usize| -> Result<()> {
        for _ in 0..steps {
            let forcing = if eps == 0.0 {
                StepForcing::None
            } else {
                noise.fill(&mut dw);
                StepForcing::Noise {
                    eps,
                    increments: &dw,
                }
            };
            let out = integ.step(u, forcing);
            if let Some(node) = out.state.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(node));
            }
            *u = out.state;
        }
        Ok(())
    };
    advance(&mut u, plan.steps(plan.burn_in))?;
    let thin = plan.steps(plan.thin);
    let mut out = Vec::with_capacity(plan.samples_per_seed);
    for _ in 0..plan.samples_per_seed {
        advance(&mut u, thin)?;
        out.push(u.clone());
    }
    Ok(out)
}

/// Wilson score interval for `hits` successes out of `count` at the 95% level.
pub fn wilson_interval(hits: usize, count: usize) -> (f64, f64) {
    if count == 0 {
        return (0.0, 1.0);
    }
    let n = count as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == count { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallEstimate {
    pub hits: usize,
    pub count: usize,
    pub p_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// Fraction of samples in the open sup-norm ball `‖z − z*‖_∞ < δ`.
pub fn ball_probability(measure: &EmpiricalMeasure, z_star: &[f64], delta: f64) -> Result<BallEstimate> {
    if measure.samples.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if !(delta > 0.0) {
        return Err(Error::param("delta", "ball radius must be positive"));
    }
    let count = measure.samples.len();
    let hits = measure
        .samples
        .iter()
        .filter(|s| sup_distance(s, z_star) < delta)
        .count();
    let (wilson_lo, wilson_hi) = wilson_interval(hits, count);
    Ok(BallEstimate {
        hits,
        count,
        p_hat: hits as f64 / count as f64,
        wilson_lo,
        wilson_hi,
    })
}

/// A ball target with its cataloged quasipotential bracket: `j_inner` and
/// `j_outer` are `inf J` and `sup J` over the ball (estimated), `j_center`
/// is `J(z*)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpTarget {
    pub id: String,
    pub z: Vec<f64>,
    pub delta: f64,
    pub j_center: f64,
    pub j_inner: f64,
    pub j_outer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub target_id: String,
    pub eps: f64,
    pub estimate: BallEstimate,
    /// `ε² log p̂`, absent when no sample hit the ball.
    pub eps2_log_p: Option<f64>,
    pub eps2_log_lo: Option<f64>,
    pub eps2_log_hi: Option<f64>,
    pub j_inner: f64,
    pub j_outer: f64,
    pub resolved: bool,
    /// Whether the Wilson-adjusted interval meets `[−J_outer, −J_inner]`.
    pub within_bracket: Option<bool>,
}

/// Rows for every target against one empirical measure.
pub fn ldp_rows(measure: &EmpiricalMeasure, targets: &[LdpTarget]) -> Result<Vec<LdpRow>> {
    let e2 = measure.eps * measure.eps;
    targets
        .iter()
        .map(|t| {
            let est = ball_probability(measure, &t.z, t.delta)?;
            let resolved = est.hits > 0;
            let log = |p: f64| (p > 0.0).then(|| e2 * p.ln());
            let (lo, hi) = (log(est.wilson_lo), log(est.wilson_hi));
            let within = resolved.then(|| {
                hi.is_some_and(|h| h >= -t.j_outer) && lo.is_none_or(|l| l <= -t.j_inner)
            });
            Ok(LdpRow {
                target_id: t.id.clone(),
                eps: measure.eps,
                estimate: est,
                eps2_log_p: log(est.p_hat),
                eps2_log_lo: lo,
                eps2_log_hi: hi,
                j_inner: t.j_inner,
                j_outer: t.j_outer,
                resolved,
                within_bracket: within,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendStatistic {
    pub target_id: String,
    /// Spearman correlation of `ε` against `|ε² log p̂ − c|`, `c` the bracket
    /// center, over resolved rows; `None` with fewer than two.
    pub spearman: Option<f64>,
    /// All resolved points move monotonically toward the center as `ε ↓`.
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpDiagnostics {
    pub eps_schedule: Vec<f64>,
    pub rows: Vec<LdpRow>,
    pub trends: Vec<TrendStatistic>,
}

impl LdpDiagnostics {
    pub fn from_rows(eps_schedule: Vec<f64>, targets: &[LdpTarget], rows: Vec<LdpRow>) -> Self {
        let trends = targets
            .iter()
            .map(|t| {
                let center = -0.5 * (t.j_inner + t.j_outer);
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.target_id == t.id)
                    .filter_map(|r| r.eps2_log_p.map(|v| (r.eps, (v - center).abs())))
                    .collect();
                let spearman = (pts.len() >= 2).then(|| {
                    let (a, b): (Vec<f64>, Vec<f64>) = pts.iter().cloned().unzip();
                    spearman(&a, &b)
                });
                TrendStatistic {
                    target_id: t.id.clone(),
                    monotone: spearman.is_some_and(|s| s >= 1.0 - 1e-12),
                    spearman,
                }
            })
            .collect();
        Self {
            eps_schedule,
            rows,
            trends,
        }
    }
}

/// Samples the invariant measure at every `ε` of a strictly decreasing
/// schedule (plan `k` for `ε_k`) and tabulates the ball estimates.
pub fn ldp_scaling_curve(
    grid: &Grid,
    walls: &Walls,
    coeffs: &CoefficientSpec,
    targets: &[LdpTarget],
    eps_schedule: &[f64],
    plans: &[SamplingPlan],
    seeds: &[u64],
) -> Result<LdpDiagnostics> {
    if !eps_schedule.windows(2).all(|w| w[0] > w[1]) {
        return Err(Error::param("eps_schedule", "must be strictly decreasing"));
    }
    if plans.len() != eps_schedule.len() {
        return Err(Error::param("plans", "need one sampling plan per noise level"));
    }
    let mut rows = Vec::new();
    for (&eps, plan) in eps_schedule.iter().zip(plans) {
        let m = sample_invariant(grid, walls, coeffs, eps, plan, seeds)?;
        rows.extend(ldp_rows(&m, targets)?);
    }
    Ok(LdpDiagnostics::from_rows(eps_schedule.to_vec(), targets, rows))
}

/// Average ranks, ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub radius: f64,
    /// Fraction of samples with `‖z‖_γ > R`.
    pub mass_outside: f64,
    /// `ε² log` of that fraction; absent when it is zero.
    pub eps2_log: Option<f64>,
}

/// Empirical mass outside Hölder balls `{‖z‖_γ ≤ R}` for each radius.
pub fn tightness_probe(
    grid: &Grid,
    measure: &EmpiricalMeasure,
    gamma: f64,
    radii: &[f64],
) -> Result<Vec<TightnessRow>> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::param("gamma", "must lie in (0, 1/2)"));
    }
    if measure.samples.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let norms = holder_norms(grid, measure, gamma);
    let e2 = measure.eps * measure.eps;
    Ok(radii
        .iter()
        .map(|&r| {
            let mass = norms.iter().filter(|&&v| v > r).count() as f64 / norms.len() as f64;
            TightnessRow {
                radius: r,
                mass_outside: mass,
                eps2_log: (mass > 0.0).then(|| e2 * mass.ln()),
            }
        })
        .collect())
}

pub fn holder_norms(grid: &Grid, measure: &EmpiricalMeasure, gamma: f64) -> Vec<f64> {
    measure.samples.iter().map(|s| holder_norm(grid, s, gamma)).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Sup norms of all samples.
pub fn sup_norms(measure: &EmpiricalMeasure) -> Vec<f64> {
    measure.samples.iter().map(|s| sup_norm(s)).collect()
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}
