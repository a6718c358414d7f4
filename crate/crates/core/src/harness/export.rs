use std::io::Write;

use super::metrics::Histogram;
use crate::error::Result;
use crate::sim::EpisodeTrace;

/// One row per step: time, leader `x,v,a`, then per follower
/// `x,v,a,gap` and the reward terms.
pub fn write_trace_csv<W: Write>(out: W, trace: &EpisodeTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "x0".into(), "v0".into(), "a0".into()];
    for k in 1..=trace.followers.len() {
        for col in ["x", "v", "a", "gap", "r_speed", "r_safe", "r_gap", "r_jerk", "r_total"] {
            header.push(format!("{col}{k}"));
        }
    }
    w.write_record(&header)?;
    for t in 0..trace.len() {
        let l = &trace.leader[t];
        let mut row = vec![
            (t as f64 * trace.dt).to_string(),
            l.x.to_string(),
            l.v.to_string(),
            l.a.to_string(),
        ];
        for k in 0..trace.followers.len() {
            let s = &trace.followers[k][t];
            row.extend([s.x, s.v, s.a, trace.gaps[k][t]].map(|x| x.to_string()));
            match trace.rewards[k].get(t) {
                Some(r) => row.extend([r.r_speed, r.r_safe, r.r_gap, r.r_jerk, r.total].map(|x| x.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `lo,hi,count` rows plus underflow/overflow rows.
pub fn write_histogram_csv<W: Write>(out: W, h: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo", "hi", "count"])?;
    w.write_record(["-inf".to_string(), h.lo.to_string(), h.underflow.to_string()])?;
    for ((a, b), c) in h.bin_edges().into_iter().zip(&h.counts) {
        w.write_record([a.to_string(), b.to_string(), c.to_string()])?;
    }
    let hi = h.lo + h.width * h.counts.len() as f64;
    w.write_record([hi.to_string(), "inf".to_string(), h.overflow.to_string()])?;
    w.flush()?;
    Ok(())
}

/// `vehicle,variance` rows; vehicle 0 is the leader.
pub fn write_variance_csv<W: Write>(out: W, variances: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle", "accel_variance"])?;
    for (k, v) in variances.iter().enumerate() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
