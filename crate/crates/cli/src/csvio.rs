//! CSV writers for metrics and synthesis tables. All floats carry 17
//! significant digits so files round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Result, Write};
use std::path::Path;

use muxnet::protocol::FormationTopology;
use muxnet::simulator::SimMetrics;
use muxnet::synthesis::AlphaResult;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-step, per-agent time series: `t, agent_id, circle_id, dev_m,
/// zeta1_norm, zeta2_norm`. Needs full recording mode.
pub fn write_metrics(path: &Path, m: &SimMetrics, topo: &FormationTopology) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,agent_id,circle_id,dev_m,zeta1_norm,zeta2_norm")?;
    let per_agent = m.per_agent_dev.as_ref().expect("metrics CSV needs full recording");
    let z1 = m.zeta1_norm.as_ref().expect("metrics CSV needs full recording");
    let z2 = m.zeta2_norm.as_ref().expect("metrics CSV needs full recording");
    for (row, t) in m.times.iter().enumerate() {
        for agent in 0..topo.agent_count() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt(*t),
                agent + 1,
                topo.circle_of(agent),
                fmt(per_agent[row][agent]),
                fmt(z1[row][agent]),
                fmt(z2[row][agent]),
            )?;
        }
    }
    w.flush()
}

/// `circle_id, max_dev_m` summary.
pub fn write_circle_summary(path: &Path, per_circle_max: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "circle_id,max_dev_m")?;
    for (c, v) in per_circle_max.iter().enumerate() {
        writeln!(w, "{},{}", c + 1, fmt(*v))?;
    }
    w.flush()
}

/// `n_circles, global_max_dev` sweep table.
pub fn write_sweep_summary(path: &Path, rows: &[(usize, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "n_circles,global_max_dev")?;
    for (n, v) in rows {
        writeln!(w, "{},{}", n, fmt(*v))?;
    }
    w.flush()
}

/// `alpha1, alpha2, feasible, cost` synthesis table.
pub fn write_per_alpha(path: &Path, rows: &[AlphaResult]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "alpha1,alpha2,feasible,cost")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            fmt(r.alpha1),
            fmt(r.alpha2),
            r.feasible,
            r.cost.map(fmt).unwrap_or_default(),
        )?;
    }
    w.flush()
}
