use rayon::prelude::*;
use serde_json::{json, Value};

use rspde::dynamics::{
    sample_noise, solve_deterministic, solve_skeleton, solve_spde, Diffusion, Drift, Trajectory,
};
use rspde::io::{self, QuasipotentialRecord};
use rspde::lattice::{sup_distance, sup_norm, uniform_times, SpaceTimeField, Walls};
use rspde::measure::{
    ball_probability, holder_norms, ldp_rows, sample_invariant, tightness_probe, variance,
    EmpiricalMeasure, LdpDiagnostics, LdpTarget,
};
use rspde::obstacle::{solve_obstacle, Reflection};
use rspde::rate::{infinite_horizon_check, quasipotential_j, rate_i, rate_s, recover_control};

use crate::config::{ConfigError, RunConfig, Setup};
use crate::output::RunDir;

pub enum Failure {
    Config(ConfigError),
    Numerics(rspde::Error),
    Io(std::io::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<rspde::Error> for Failure {
    fn from(e: rspde::Error) -> Self {
        Failure::Numerics(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

/// Summary for the manifest and whether every optimization converged.
pub struct Outcome {
    pub summary: Value,
    pub converged: bool,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Self {
            summary,
            converged: true,
        }
    }
}

type Run = Result<Outcome, Failure>;

fn trajectory_files(out: &mut RunDir, setup: &Setup, stem: &str, tr: &Trajectory) -> Result<(), Failure> {
    let mut csv = Vec::new();
    io::write_trajectory_csv(&mut csv, &setup.grid, tr)?;
    out.write(&format!("{stem}.csv"), &csv)?;
    let mut bin = Vec::new();
    io::write_snapshot(&mut bin, &tr.u, setup.grid.dx())?;
    out.write(&format!("{stem}.bin"), &bin)?;
    Ok(())
}

fn trajectory_summary(setup: &Setup, tr: &Trajectory) -> Result<Value, Failure> {
    let c = tr.complementarity(&setup.grid, &setup.walls)?;
    let sup = tr.sup_norms().into_iter().fold(0.0, f64::max);
    Ok(json!({
        "confined": tr.confined(&setup.walls),
        "complementarity_lower": c.lower,
        "complementarity_upper": c.upper,
        "complementarity_holds": c.holds(),
        "eta_mass": tr.eta.total_mass(),
        "xi_mass": tr.xi.total_mass(),
        "max_sup_norm": sup,
    }))
}

pub fn simulate(cfg: &RunConfig, setup: &Setup, out: &mut RunDir) -> Run {
    let runs: Vec<(usize, f64, u64)> = cfg
        .noise
        .eps
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| cfg.noise.seeds.iter().map(move |&s| (i, e, s)))
        .collect();
    let trajectories: Vec<rspde::Result<Trajectory>> = runs
        .par_iter()
        .map(|&(_, eps, seed)| {
            solve_spde(
                &setup.grid,
                &setup.walls,
                &setup.coeffs,
                &setup.u0,
                eps,
                cfg.horizon,
                cfg.dt,
                seed,
                0,
                setup.mode,
            )
        })
        .collect();
    let mut rows = Vec::new();
    for (&(i, eps, seed), tr) in runs.iter().zip(trajectories) {
        let tr = tr?;
        let stem = format!("trajectory_e{i}_s{seed}");
        trajectory_files(out, setup, &stem, &tr)?;
        let mut s = trajectory_summary(setup, &tr)?;
        s["file"] = json!(stem);
        s["eps"] = json!(eps);
        s["seed"] = json!(seed);
        rows.push(s);
    }
    Ok(Outcome::ok(json!({ "runs": rows })))
}

pub fn skeleton(cfg: &RunConfig, setup: &Setup, out: &mut RunDir) -> Run {
    let control = cfg.control(setup)?;
    let tr = solve_skeleton(&setup.grid, &setup.walls, &setup.coeffs, &setup.u0, &control, setup.mode)?;
    trajectory_files(out, setup, "trajectory", &tr)?;
    let mut s = trajectory_summary(setup, &tr)?;
    s["action"] = json!(control.action(&setup.grid));
    s["local_time_energy"] = json!(
        rspde::dynamics::local_time_energy(&setup.grid, &tr.eta, setup.coeffs.alpha, cfg.horizon)
            + rspde::dynamics::local_time_energy(&setup.grid, &tr.xi, setup.coeffs.alpha, cfg.horizon)
    );
    Ok(Outcome::ok(s))
}

pub fn rate(cfg: &RunConfig, setup: &Setup, out: &mut RunDir) -> Run {
    let (path, control_action) = match &cfg.rate.path {
        Some(p) => {
            let file = std::fs::File::open(p)?;
            let snap = io::read_snapshot(std::io::BufReader::new(file))?;
            if snap.field.nodes() != setup.grid.len() || (snap.dx - setup.grid.dx()).abs() > 1e-15 {
                return Err(ConfigError::new("rate.path", "snapshot does not match the grid").into());
            }
            (snap.field, None)
        }
        None => {
            let control = cfg.control(setup)?;
            let tr = solve_skeleton(
                &setup.grid,
                &setup.walls,
                &setup.coeffs,
                &setup.u0,
                &control,
                Reflection::Projected,
            )?;
            (tr.u, Some(control.action(&setup.grid)))
        }
    };
    let t_end = *path.times().last().expect("non-empty mesh");
    let t0 = path.times()[0];
    let ri = rate_i(&setup.grid, &path, t0, t_end, &setup.coeffs, &setup.walls)?;
    let rs = rate_s(&setup.grid, &path, t0, t_end, &setup.coeffs, &setup.walls)?;
    if ri.is_finite() {
        let rc = recover_control(&setup.grid, &path, &setup.coeffs, &setup.walls)?;
        let mut bin = Vec::new();
        io::write_snapshot(&mut bin, rc.hdot.hdot(), setup.grid.dx())?;
        out.write("recovered_control.bin", &bin)?;
    }
    let gap = control_action.map(|a| if a > 0.0 { (ri - a).abs() / a } else { (ri - a).abs() });
    Ok(Outcome::ok(json!({
        "rate_i": finite_or_null(ri),
        "rate_s": rs,
        "control_action": control_action,
        "relative_gap": gap,
    })))
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn shifted(z: &[f64], delta: f64, outward: bool) -> Vec<f64> {
    let r = sup_norm(z);
    if r == 0.0 {
        return z.to_vec();
    }
    let scale = if outward { 1.0 + delta / r } else { (1.0 - delta / r).max(0.0) };
    z.iter().map(|v| v * scale).collect()
}

pub fn quasipotential(cfg: &RunConfig, setup: &Setup, out: &mut RunDir) -> Run {
    let opts = cfg.quasipotential_options()?;
    let targets = cfg.target_fields(setup)?;
    if targets.is_empty() {
        return Err(ConfigError::new("targets", "quasipotential needs at least one target").into());
    }
    let results: Vec<_> = targets
        .par_iter()
        .map(|z| {
            let res = quasipotential_j(&setup.grid, &setup.walls, &setup.coeffs, z, &opts)?;
            let inf = if cfg.quasipotential.infinite_horizon {
                Some(infinite_horizon_check(&setup.grid, &setup.walls, &setup.coeffs, z, &opts)?)
            } else {
                None
            };
            Ok::<_, rspde::Error>((res, inf))
        })
        .collect();
    let mut rows = Vec::new();
    let mut converged = true;
    for (t, r) in cfg.targets.iter().zip(results) {
        let (res, inf) = r?;
        let record = QuasipotentialRecord::new(&setup.grid, &res);
        out.write_json(&format!("qp_{}.json", t.id), &record)?;
        let mut bin = Vec::new();
        io::write_snapshot(&mut bin, &res.path, setup.grid.dx())?;
        out.write(&format!("qp_{}_path.bin", t.id), &bin)?;
        converged &= res.converged;
        let mut row = json!({
            "id": t.id,
            "value": res.value,
            "horizon": res.horizon,
            "terminal_error": res.terminal_error,
            "gradient_norm": res.gradient_norm,
            "converged": res.converged,
        });
        if let Some(i) = inf {
            converged &= i.converged;
            row["infinite_horizon"] = json!({
                "value": finite_or_null(i.value),
                "horizon": i.horizon,
                "start_norm": i.start_norm,
                "terminal_error": i.terminal_error,
                "converged": i.converged,
            });
        }
        rows.push(row);
    }
    Ok(Outcome {
        summary: json!({ "targets": rows }),
        converged,
    })
}

fn measures(cfg: &RunConfig, setup: &Setup, eps_list: &[f64]) -> Result<Vec<EmpiricalMeasure>, Failure> {
    let plan = cfg.sampling_plan(setup)?;
    eps_list
        .iter()
        .map(|&eps| {
            Ok(sample_invariant(
                &setup.grid,
                &setup.walls,
                &setup.coeffs,
                eps,
                &plan,
                &cfg.noise.seeds,
            )?)
        })
        .collect()
}

/// `∫u` variance of the linear benchmark, when the coefficients are
/// linear-Gaussian.
fn ou_reference(setup: &Setup, eps: f64) -> Option<f64> {
    match (setup.coeffs.drift, setup.coeffs.diffusion) {
        (Drift::Zero, Diffusion::Constant { value }) if setup.coeffs.alpha > 0.0 => {
            Some(value * value * eps * eps / (2.0 * setup.coeffs.alpha))
        }
        _ => None,
    }
}

pub fn invariant(cfg: &RunConfig, setup: &Setup, out: &mut RunDir) -> Run {
    let targets = cfg.target_fields(setup)?;
    let ms = measures(cfg, setup, &cfg.noise.eps)?;
    let per_seed = cfg.sampling.samples_per_seed;
    let mut rows = Vec::new();
    let mut balls = csv::Writer::from_writer(Vec::new());
    balls
        .write_record(["target_id", "eps", "delta", "hits", "count", "p_hat", "wilson_lo", "wilson_hi"])
        .map_err(csv_err)?;
    for (i, m) in ms.iter().enumerate() {
        let means = m.spatial_means(&setup.grid);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "index", "spatial_mean", "sup_norm"]).map_err(csv_err)?;
        for (k, s) in m.samples.iter().enumerate() {
            w.write_record(&[
                m.seeds[k / per_seed].to_string(),
                (k % per_seed).to_string(),
                io::fmt(means[k]),
                io::fmt(sup_norm(s)),
            ])
            .map_err(csv_err)?;
        }
        out.write(&format!("invariant_e{i}.csv"), &w.into_inner().map_err(into_io)?)?;
        let times = uniform_times(0.0, m.plan.thin, m.count() - 1);
        let field = SpaceTimeField::from_rows(times, &m.samples)?;
        let mut bin = Vec::new();
        io::write_snapshot(&mut bin, &field, setup.grid.dx())?;
        out.write(&format!("invariant_e{i}.bin"), &bin)?;
        for (t, z) in cfg.targets.iter().zip(&targets) {
            let e = ball_probability(m, z, t.delta)?;
            balls
                .write_record(&[
                    t.id.clone(),
                    io::fmt(m.eps),
                    io::fmt(t.delta),
                    e.hits.to_string(),
                    e.count.to_string(),
                    io::fmt(e.p_hat),
                    io::fmt(e.wilson_lo),
                    io::fmt(e.wilson_hi),
                ])
                .map_err(csv_err)?;
        }
        rows.push(json!({
            "eps": m.eps,
            "count": m.count(),
            "burn_in": m.plan.burn_in,
            "thin": m.plan.thin,
            "spatial_mean_variance": if m.count() > 1 { json!(variance(&means)) } else { Value::Null },
            "ou_reference_variance": ou_reference(setup, m.eps),
        }));
    }
    if !targets.is_empty() {
        out.write("balls.csv", &balls.into_inner().map_err(into_io)?)?;
    }
    Ok(Outcome::ok(json!({ "seeds": cfg.noise.seeds, "levels": rows })))
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Io(std::io::Error::other(e))
}

fn into_io<E: std::error::Error + Send + Sync + 'static>(e: E) -> Failure {
    Failure::Io(std::io::Error::other(e))
}

pub fn diagnose(cfg: &RunConfig, setup: &Setup, out: &mut RunDir) -> Run {
    let eps = cfg.eps_schedule()?;
    cfg.diagnose_checked()?;
    let fields = cfg.target_fields(setup)?;
    if fields.is_empty() {
        return Err(ConfigError::new("targets", "diagnose needs at least one target").into());
    }
    cfg.sampling_plan(setup)?;
    let mut converged = true;
    let mut needs_opts = None;
    let mut j = |z: &[f64], given: Option<f64>| -> Result<f64, Failure> {
        if let Some(v) = given {
            return Ok(v);
        }
        let opts = match &needs_opts {
            Some(o) => o,
            None => needs_opts.insert(cfg.quasipotential_options()?),
        };
        let r = quasipotential_j(&setup.grid, &setup.walls, &setup.coeffs, z, opts)?;
        converged &= r.converged;
        Ok(r.value)
    };
    let mut targets = Vec::new();
    for (t, z) in cfg.targets.iter().zip(&fields) {
        let j_center = j(z, t.j_center)?;
        let inner = shifted(z, t.delta, false);
        let j_inner = j(&inner, t.j_inner)?;
        let mut outer = shifted(z, t.delta, true);
        if !setup.walls.contains(&outer, 0.0) && t.j_outer.is_none() {
            outer = clamp(&outer, &setup.walls);
        }
        let j_outer = j(&outer, t.j_outer)?;
        targets.push(LdpTarget {
            id: t.id.clone(),
            z: z.clone(),
            delta: t.delta,
            j_center,
            j_inner,
            j_outer,
        });
    }
    let ms = measures(cfg, setup, &eps)?;
    let mut rows = Vec::new();
    let mut tight = csv::Writer::from_writer(Vec::new());
    tight
        .write_record(["eps", "radius", "mass_outside", "eps2_log", "median_holder_norm"])
        .map_err(csv_err)?;
    for m in &ms {
        rows.extend(ldp_rows(m, &targets)?);
        let med = rspde::measure::median(&holder_norms(&setup.grid, m, cfg.diagnose.gamma));
        for r in tightness_probe(&setup.grid, m, cfg.diagnose.gamma, &cfg.diagnose.radii)? {
            tight
                .write_record(&[
                    io::fmt(m.eps),
                    io::fmt(r.radius),
                    io::fmt(r.mass_outside),
                    r.eps2_log.map(io::fmt).unwrap_or_default(),
                    io::fmt(med),
                ])
                .map_err(csv_err)?;
        }
    }
    let diag = LdpDiagnostics::from_rows(eps, &targets, rows);
    let mut ldp = Vec::new();
    io::write_ldp_csv(&mut ldp, &diag.rows)?;
    out.write("ldp.csv", &ldp)?;
    out.write("tightness.csv", &tight.into_inner().map_err(into_io)?)?;
    let catalog: Vec<Value> = targets
        .iter()
        .map(|t| json!({"id": t.id, "delta": t.delta, "j_center": t.j_center, "j_inner": t.j_inner, "j_outer": t.j_outer}))
        .collect();
    out.write_json(
        "diagnostics.json",
        &json!({ "seeds": cfg.noise.seeds, "catalog": catalog, "rows": diag.rows, "trends": diag.trends }),
    )?;
    Ok(Outcome {
        summary: json!({ "catalog": catalog, "trends": diag.trends }),
        converged,
    })
}

fn clamp(z: &[f64], walls: &Walls) -> Vec<f64> {
    z.iter()
        .zip(walls.lower().iter().zip(walls.upper()))
        .map(|(&v, (&a, &b))| v.clamp(a, b))
        .collect()
}

/// Quick end-to-end checks on small grids; one line per check.
pub fn selftest(out: &mut RunDir) -> Run {
    let mut checks: Vec<(String, bool, String)> = Vec::new();
    let mut record = |name: &str, pass: bool, detail: String| {
        checks.push((name.to_string(), pass, detail));
    };

    let grid = rspde::lattice::Grid::new(16)?;
    let walls = Walls::constant(&grid, -1.0, 1.0)?;

    // Sup-norm contraction of the obstacle map.
    {
        let dt = 1e-2;
        let make = |a: f64, k: f64| {
            SpaceTimeField::from_fn(&grid, dt, 50, |x, t| a * (k * x + 3.0 * t).sin() * t)
        };
        let mut worst = f64::NEG_INFINITY;
        for (a, b) in [(2.0, 2.5), (3.0, -1.5), (4.0, 1.0)] {
            let v = make(a, 3.0)?;
            let w = make(b, 5.0)?;
            let z = solve_obstacle(&grid, &v, &walls, 1.0, dt)?;
            let zh = solve_obstacle(&grid, &w, &walls, 1.0, dt)?;
            worst = worst.max(z.z.sup_distance(&zh.z)? - v.sup_distance(&w)?);
        }
        record("contraction", worst <= 1e-8, format!("max excess {worst:.2e}"));
    }

    // Exponential decay of the zero-control flow, f = u, alpha = 2.
    {
        let c = rspde::dynamics::CoefficientSpec::new(Drift::Linear { c: 1.0 }, Diffusion::Constant { value: 1.0 }, 2.0)?;
        let dt = 1e-3;
        let tr = solve_deterministic(&grid, &walls, &c, &vec![0.5; grid.len()], 3.0, dt)?;
        let s = tr.sup_norms();
        let (k0, k1) = (500, 3000);
        let slope = (s[k1].ln() - s[k0].ln()) / ((k1 - k0) as f64 * dt);
        record("decay", (-1.05..=-0.95).contains(&slope), format!("log-slope {slope:.4}"));
    }

    // Zero noise reproduces the deterministic flow.
    {
        let c = rspde::dynamics::CoefficientSpec::new(Drift::Sinusoidal { c: 0.5 }, Diffusion::Constant { value: 1.0 }, 1.0)?;
        let z = vec![0.4; grid.len()];
        let a = solve_spde(&grid, &walls, &c, &z, 0.0, 1.0, 1e-2, 1, 0, Reflection::Projected)?;
        let b = solve_deterministic(&grid, &walls, &c, &z, 1.0, 1e-2)?;
        let d = a.u.sup_distance(&b.u)?;
        record("zero-noise", d <= 1e-12, format!("gap {d:.1e}"));
    }

    // Confinement under strong noise.
    {
        let c = rspde::dynamics::CoefficientSpec::linear_gaussian(1.0)?;
        let narrow = Walls::constant(&grid, -0.2, 0.2)?;
        let tr = solve_spde(&grid, &narrow, &c, &vec![0.0; grid.len()], 0.5, 0.5, 1e-3, 7, 0, Reflection::Projected)?;
        let comp = tr.complementarity(&grid, &narrow)?;
        record(
            "confinement",
            tr.confined(&narrow) && comp.holds(),
            format!("complementarity {:.1e}/{:.1e}", comp.lower, comp.upper),
        );
    }

    // Rate of a skeleton path equals the action of its control.
    {
        let c = rspde::dynamics::CoefficientSpec::linear_gaussian(1.0)?;
        let control = rspde::dynamics::Control::from_fn(&grid, 1e-2, 100, |x, t| {
            (1.0 + t) * (std::f64::consts::PI * x).cos()
        })?;
        let tr = solve_skeleton(&grid, &walls, &c, &vec![0.0; grid.len()], &control, Reflection::Projected)?;
        let a = control.action(&grid);
        let r = rate_i(&grid, &tr.u, 0.0, 1.0, &c, &walls)?;
        let rel = (r - a).abs() / a;
        record("rate-round-trip", rel <= 2e-2, format!("relative gap {rel:.1e}"));
    }

    // Noise increments have variance dt·dx.
    {
        let noise = sample_noise(&grid, 1e-3, 1000, 3, 0)?;
        let v = noise.increments().iter().map(|x| x * x).sum::<f64>() / noise.increments().len() as f64;
        let target = 1e-3 * grid.dx();
        record("noise-variance", (v / target - 1.0).abs() <= 0.05, format!("ratio {:.4}", v / target));
    }

    // Stored and regenerated noise drive identical trajectories.
    {
        let c = rspde::dynamics::CoefficientSpec::linear_gaussian(1.0)?;
        let a = solve_spde(&grid, &walls, &c, &vec![0.0; grid.len()], 0.3, 0.2, 1e-3, 11, 2, Reflection::Projected)?;
        let b = solve_spde(&grid, &walls, &c, &vec![0.0; grid.len()], 0.3, 0.2, 1e-3, 11, 2, Reflection::Projected)?;
        record("determinism", a == b, format!("max diff {:.1e}", sup_distance(a.u.values(), b.u.values())));
    }

    let all = checks.iter().all(|c| c.1);
    let mut report = String::new();
    for (name, pass, detail) in &checks {
        let line = format!("{} {name}: {detail}", if *pass { "PASS" } else { "FAIL" });
        println!("{line}");
        report.push_str(&line);
        report.push('\n');
    }
    out.write("selftest.txt", report.as_bytes())?;
    let rows: Vec<Value> = checks
        .iter()
        .map(|(n, p, d)| json!({"check": n, "pass": p, "detail": d}))
        .collect();
    Ok(Outcome {
        summary: json!({ "all_pass": all, "checks": rows }),
        converged: true,
    })
}
