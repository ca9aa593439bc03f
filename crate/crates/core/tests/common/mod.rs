#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rspde::lattice::{Grid, SpaceTimeField};

/// Two-sided Skorokhod map on `[0, a]` by the explicit formula
/// `Λ(ψ)(t) = ψ(t) − [(ψ(0) − a)⁺ ∧ inf_{u ≤ t} ψ(u)] ∨ sup_{s ≤ t} [(ψ(s) − a) ∧ inf_{s ≤ u ≤ t} ψ(u)]`,
/// evaluated at sample index `t` of a finely sampled path.
pub fn skorokhod_at(psi: &[f64], a: f64, t: usize) -> f64 {
    let mut run_min = f64::INFINITY;
    let mut sup = f64::NEG_INFINITY;
    for s in (0..=t).rev() {
        run_min = run_min.min(psi[s]);
        sup = sup.max((psi[s] - a).min(run_min));
    }
    let first = (psi[0] - a).max(0.0).min(run_min);
    psi[t] - first.max(sup)
}

/// Random smooth forcing vanishing at `t = 0`: a sum of cosine modes in
/// space with random sinusoidal time profiles.
pub fn random_forcing(
    grid: &Grid,
    dt: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
    amplitude: f64,
) -> SpaceTimeField {
    let terms: Vec<(usize, f64, f64)> = (0..8)
        .map(|_| {
            (
                rng.random_range(0..4usize),
                rng.random_range(-amplitude..amplitude),
                rng.random_range(1.0..12.0),
            )
        })
        .collect();
    SpaceTimeField::from_fn(grid, dt, steps, |x, t| {
        terms
            .iter()
            .map(|&(j, a, w)| a * (j as f64 * std::f64::consts::PI * x).cos() * (w * t).sin())
            .sum()
    })
    .unwrap()
}
