//! CSV export of trajectories. Numbers carry 17 significant digits; absent
//! values (`mu`, `nu` where `a = 0`) are empty fields.

use std::io::Write;

use crate::compact::CompactTrajectory;
use crate::error::Result;
use crate::flow::Trajectory;

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["s", "sigma", "varsigma"].map(String::from).to_vec();
    h.extend((1..=n).map(|i| format!("C_{i}")));
    h.extend((1..=n).map(|i| format!("T_{i}")));
    h.extend(["lambda", "mu", "nu", "curvature", "V", "delta_total", "delta_W", "z"].map(String::from));
    h
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj.dim()))?;
    for x in &traj.samples {
        let d = &x.diag;
        let mut row = vec![num(x.s), num(x.sigma), num(x.varsigma)];
        row.extend(x.state.c.iter().map(|v| num(*v)));
        row.extend(x.state.t.iter().map(|v| num(*v)));
        row.extend([
            num(d.lambda),
            opt(d.mu),
            opt(d.nu),
            num(d.curvature),
            num(d.v_value),
            num(d.delta_total),
            num(d.delta_w),
            num(d.z),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn compact_header(n: usize) -> Vec<String> {
    let mut h = vec!["varsigma".to_string(), "s".to_string()];
    h.extend((1..=n).map(|i| format!("P_{i}")));
    h.extend((1..=n).map(|i| format!("T_{i}")));
    h.push("V_ext".into());
    h
}

pub fn write_compact_csv<W: Write>(traj: &CompactTrajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = traj.params.dim();
    w.write_record(compact_header(n))?;
    for x in &traj.samples {
        let mut row = vec![num(x.varsigma), num(x.s)];
        row.extend(x.state.p.iter().map(|v| num(*v)));
        row.extend(x.state.t.iter().map(|v| num(*v)));
        row.push(opt(x.v_ext));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
