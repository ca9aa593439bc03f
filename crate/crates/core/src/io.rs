//! File formats.
//!
//! * Trajectory CSV: one row per (time, node) with columns
//!   `t, x, u, eta_dot, xi_dot`.
//! * Binary snapshot: little-endian header `n: u64, m: u64, dt: f64, dx: f64`
//!   followed by the `(m + 1) × (n + 1)` values row-major, time-major.
//! * LDP table: CSV with columns
//!   `target_id, eps, p_hat, wilson_lo, wilson_hi, eps2_log_p, J_inner, J_outer`;
//!   `eps2_log_p` is empty for unresolved rows.
//! * Quasipotential record: JSON object
//!   `{target_hash, value, horizon, action, gradient_norm, converged}`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::lattice::{uniform_times, Grid, SpaceTimeField};
use crate::measure::LdpRow;
use crate::rate::QuasipotentialResult;

pub fn write_trajectory_csv<W: Write>(out: W, grid: &Grid, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "u", "eta_dot", "xi_dot"]).map_err(csv_err)?;
    let (eta, xi) = (traj.eta.density(), traj.xi.density());
    for (k, &t) in traj.u.times().iter().enumerate() {
        for (i, &x) in grid.nodes().iter().enumerate() {
            w.write_record(&[
                fmt(t),
                fmt(x),
                fmt(traj.u.row(k)[i]),
                fmt(eta.row(k)[i]),
                fmt(xi.row(k)[i]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ldp_csv<W: Write>(out: W, rows: &[LdpRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "target_id",
        "eps",
        "p_hat",
        "wilson_lo",
        "wilson_hi",
        "eps2_log_p",
        "J_inner",
        "J_outer",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record(&[
            r.target_id.clone(),
            fmt(r.eps),
            fmt(r.estimate.p_hat),
            fmt(r.estimate.wilson_lo),
            fmt(r.estimate.wilson_hi),
            r.eps2_log_p.map(fmt).unwrap_or_default(),
            fmt(r.j_inner),
            fmt(r.j_outer),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `field` on a uniform time mesh.
pub fn write_snapshot<W: Write>(mut out: W, field: &SpaceTimeField, dx: f64) -> Result<()> {
    let dt = if field.steps() == 0 {
        0.0
    } else {
        field
            .uniform_dt()
            .ok_or_else(|| Error::Snapshot("time mesh is not uniform".into()))?
    };
    let n = field.nodes() as u64 - 1;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&(field.steps() as u64).to_le_bytes())?;
    out.write_all(&dt.to_le_bytes())?;
    out.write_all(&dx.to_le_bytes())?;
    for v in field.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// A snapshot read back from disk; times start at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dt: f64,
    pub dx: f64,
    pub field: SpaceTimeField,
}

pub fn read_snapshot<R: Read>(mut input: R) -> Result<Snapshot> {
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<[u8; 8]> {
        input
            .read_exact(&mut word)
            .map_err(|e| Error::Snapshot(format!("truncated: {e}")))?;
        Ok(word)
    };
    let n = u64::from_le_bytes(next(&mut input)?) as usize;
    let m = u64::from_le_bytes(next(&mut input)?) as usize;
    let dt = f64::from_le_bytes(next(&mut input)?);
    let dx = f64::from_le_bytes(next(&mut input)?);
    let count = (n + 1)
        .checked_mul(m + 1)
        .ok_or_else(|| Error::Snapshot("header sizes overflow".into()))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Snapshot(format!(
            "expected {} value bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let times = if m == 0 { vec![0.0] } else { uniform_times(0.0, dt, m) };
    Ok(Snapshot {
        dt,
        dx,
        field: SpaceTimeField::new(n + 1, times, values)?,
    })
}

/// Hex SHA-256 of a field's little-endian bytes.
pub fn content_hash(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasipotentialRecord {
    pub target_hash: String,
    pub value: f64,
    pub horizon: f64,
    pub action: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

impl QuasipotentialRecord {
    pub fn new(grid: &Grid, res: &QuasipotentialResult) -> Self {
        Self {
            target_hash: content_hash(&res.target),
            value: res.value,
            horizon: res.horizon,
            action: res.control.action(grid),
            gradient_norm: res.gradient_norm,
            converged: res.converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let g = Grid::new(8).unwrap();
        let f = SpaceTimeField::from_fn(&g, 0.25, 4, |x, t| x * x - t).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &f, g.dx()).unwrap();
        assert_eq!(buf.len(), 32 + 9 * 5 * 8);
        assert_eq!(&buf[..8], &8u64.to_le_bytes());
        let back = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back.field, f);
        assert_eq!((back.dt, back.dx), (0.25, 0.125));
        assert!(matches!(read_snapshot(&buf[..buf.len() - 3]), Err(Error::Snapshot(_))));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = content_hash(&[0.3, 0.3]);
        assert_eq!(a, content_hash(&[0.3, 0.3]));
        assert_ne!(a, content_hash(&[0.3, 0.30000000000000004]));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1e-300, -2.5e17, 1.0 / 3.0] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }
}
