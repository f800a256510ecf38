//! Policy tables: `state,mu,f,delta`, one row per state `1..=L`.

use std::path::Path;

use anyhow::{bail, Context, Result};

use ratectl_core::model::{Point, Policy};

/// Fixed 17-significant-digit rendering; parses back to the same `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `policy` with `deltas[i-1]` (the increment that selected the action
/// in state `i`) in the last column.
pub fn write_policy(path: &Path, policy: &Policy, deltas: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["state", "mu", "f", "delta"])?;
    for (i, p) in policy.points().iter().enumerate() {
        let delta = deltas.get(i).copied().unwrap_or(f64::NAN);
        w.write_record([(i + 1).to_string(), fmt17(p.mu), fmt17(p.f), fmt17(delta)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a policy table; `delta` is optional and ignored.
pub fn read_policy(path: &Path) -> Result<Policy> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .with_context(|| format!("{}: missing column {name:?}", path.display()))
    };
    let (cs, cm, cf) = (col("state")?, col("mu")?, col("f")?);
    let mut points = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |k: usize| rec.get(k).map(str::trim).unwrap_or("");
        let state: usize = field(cs)
            .parse()
            .with_context(|| format!("{}:{line}: bad state {:?}", path.display(), field(cs)))?;
        if state != points.len() + 1 {
            bail!(
                "{}:{line}: expected state {}, found {state}",
                path.display(),
                points.len() + 1
            );
        }
        let mu: f64 = field(cm)
            .parse()
            .with_context(|| format!("{}:{line}: bad mu {:?}", path.display(), field(cm)))?;
        let f: f64 = field(cf)
            .parse()
            .with_context(|| format!("{}:{line}: bad f {:?}", path.display(), field(cf)))?;
        points.push(Point::new(mu, f));
    }
    Ok(Policy::new(points))
}
