//! Leader/platoon trajectory files: `t,v_leader,gap1[,v_follower1,gap2,...]`.
//!
//! Columns are matched by name. `gap1..gapN` must be contiguous; any
//! `v_followerK` may be omitted, in which case it is reconstructed from the
//! predecessor speed and the gap rate, `v_K = v_{K-1} − dg_K/dt`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idm::PairSeries;
use crate::sim::EpisodeTrace;

/// Grid step of ingested data.
pub const GRID_DT: f64 = 0.1;
const GRID_TOL: f64 = 1e-6;

/// A leader and a platoon of followers on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    pub leader_speed: Vec<f64>,
    /// `follower_speed[k][i]`
    pub follower_speed: Vec<Vec<f64>>,
    /// `gap[k][i]`, gap of follower `k` to its predecessor.
    pub gap: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.leader_speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leader_speed.is_empty()
    }

    pub fn followers(&self) -> usize {
        self.gap.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.t0 + i as f64 * self.dt).collect()
    }

    /// Leader/follower pair `k` (0-based); the leader of follower `k > 0` is
    /// follower `k − 1`.
    pub fn pair(&self, k: usize) -> Result<PairSeries> {
        if k >= self.followers() {
            return Err(Error::InvalidInput(format!(
                "trajectory has {} followers, asked for pair {k}",
                self.followers()
            )));
        }
        let leader_speed = if k == 0 {
            self.leader_speed.clone()
        } else {
            self.follower_speed[k - 1].clone()
        };
        Ok(PairSeries {
            dt: self.dt,
            leader_speed,
            follower_speed: self.follower_speed[k].clone(),
            gap: self.gap[k].clone(),
        })
    }

    /// Recorded leader and followers of a simulated trace.
    pub fn from_trace(trace: &EpisodeTrace) -> Self {
        Self {
            dt: trace.dt,
            t0: 0.0,
            leader_speed: trace.speeds(0),
            follower_speed: (1..=trace.followers.len()).map(|k| trace.speeds(k)).collect(),
            gap: trace.gaps.clone(),
        }
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::read(file)
    }

    /// Parses and validates a trajectory, resampling onto the 0.1 s grid if
    /// the file uses another step.
    pub fn read<R: Read>(input: R) -> Result<Self> {
        let raw = RawColumns::parse(input)?;
        raw.into_trajectory()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "v_leader".to_string()];
        for k in 1..=self.followers() {
            header.push(format!("gap{k}"));
            header.push(format!("v_follower{k}"));
        }
        w.write_record(&header)?;
        for (i, t) in self.times().into_iter().enumerate() {
            let mut row = vec![t.to_string(), self.leader_speed[i].to_string()];
            for k in 0..self.followers() {
                row.push(self.gap[k][i].to_string());
                row.push(self.follower_speed[k][i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }
}

struct RawColumns {
    t: Vec<f64>,
    v_leader: Vec<f64>,
    gaps: Vec<Vec<f64>>,
    speeds: Vec<Option<Vec<f64>>>,
}

fn data_err(line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        line,
        message: message.into(),
    }
}

impl RawColumns {
    fn parse<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| data_err(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let t_col = col("t").ok_or_else(|| data_err(1, "missing column `t`"))?;
        let vl_col = col("v_leader").ok_or_else(|| data_err(1, "missing column `v_leader`"))?;
        let mut gap_cols = Vec::new();
        while let Some(c) = col(&format!("gap{}", gap_cols.len() + 1)) {
            gap_cols.push(c);
        }
        if gap_cols.is_empty() {
            return Err(data_err(1, "missing column `gap1`"));
        }
        let n = gap_cols.len();
        for h in &header {
            let known = h == "t"
                || h == "v_leader"
                || parse_index(h, "gap").is_some_and(|k| k <= n)
                || parse_index(h, "v_follower").is_some_and(|k| k <= n);
            if !known {
                return Err(data_err(1, format!("unexpected column `{h}`")));
            }
        }
        let speed_cols: Vec<Option<usize>> = (1..=n).map(|k| col(&format!("v_follower{k}"))).collect();

        let mut out = RawColumns {
            t: Vec::new(),
            v_leader: Vec::new(),
            gaps: vec![Vec::new(); n],
            speeds: speed_cols.iter().map(|c| c.map(|_| Vec::new())).collect(),
        };
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| data_err(line, e.to_string()))?;
            let field = |c: usize, name: &str| -> Result<f64> {
                let s = rec
                    .get(c)
                    .ok_or_else(|| data_err(line, format!("missing field `{name}`")))?;
                let v: f64 = s
                    .parse()
                    .map_err(|_| data_err(line, format!("`{name}` is not a number: {s:?}")))?;
                if !v.is_finite() {
                    return Err(data_err(line, format!("`{name}` is not finite")));
                }
                Ok(v)
            };
            let t = field(t_col, "t")?;
            if let Some(&prev) = out.t.last() {
                if t <= prev {
                    return Err(data_err(line, format!("time {t} does not increase (previous {prev})")));
                }
            }
            out.t.push(t);
            let vl = field(vl_col, "v_leader")?;
            if vl < 0.0 {
                return Err(data_err(line, format!("negative leader speed {vl}")));
            }
            out.v_leader.push(vl);
            for k in 0..n {
                let name = format!("gap{}", k + 1);
                let g = field(gap_cols[k], &name)?;
                if g <= 0.0 {
                    return Err(data_err(line, format!("`{name}` must be > 0, got {g}")));
                }
                out.gaps[k].push(g);
                if let (Some(c), Some(col)) = (speed_cols[k], out.speeds[k].as_mut()) {
                    let name = format!("v_follower{}", k + 1);
                    let v = field(c, &name)?;
                    if v < 0.0 {
                        return Err(data_err(line, format!("negative `{name}` {v}")));
                    }
                    col.push(v);
                }
            }
        }
        if out.t.len() < 2 {
            return Err(data_err(0, "a trajectory needs at least two rows"));
        }
        Ok(out)
    }

    fn into_trajectory(self) -> Result<Trajectory> {
        let RawColumns {
            t,
            v_leader,
            gaps,
            speeds,
        } = self;
        let on_grid = t.windows(2).all(|w| ((w[1] - w[0]) - GRID_DT).abs() < GRID_TOL);
        let (leader_speed, gap, known) = if on_grid {
            (v_leader, gaps, speeds)
        } else {
            let grid = resample_grid(t[0], t[t.len() - 1]);
            (
                resample(&t, &v_leader, &grid),
                gaps.iter().map(|g| resample(&t, g, &grid)).collect(),
                speeds
                    .iter()
                    .map(|s| s.as_ref().map(|s| resample(&t, s, &grid)))
                    .collect(),
            )
        };
        let mut follower_speed: Vec<Vec<f64>> = Vec::with_capacity(gap.len());
        for (k, s) in known.into_iter().enumerate() {
            let v = match s {
                Some(v) => v,
                None => {
                    let ahead = if k == 0 { &leader_speed } else { &follower_speed[k - 1] };
                    reconstruct_speed(ahead, &gap[k], GRID_DT)
                }
            };
            follower_speed.push(v);
        }
        Ok(Trajectory {
            dt: GRID_DT,
            t0: t[0],
            leader_speed,
            follower_speed,
            gap,
        })
    }
}

fn parse_index(h: &str, prefix: &str) -> Option<usize> {
    h.strip_prefix(prefix)?.parse().ok().filter(|&k| k > 0)
}

/// Number of grid points for a record from `t0` to `t1`:
/// `ceil((t1 − t0)/0.1) + 1`.
pub fn resampled_len(t0: f64, t1: f64) -> usize {
    // the epsilon keeps exact multiples from rounding up
    ((t1 - t0) / GRID_DT - 1e-9).ceil() as usize + 1
}

fn resample_grid(t0: f64, t1: f64) -> Vec<f64> {
    (0..resampled_len(t0, t1))
        .map(|i| t0 + i as f64 * GRID_DT)
        .collect()
}

/// Linear interpolation of `(t, y)` at `grid`; points past the end hold
/// the last value.
pub fn resample(t: &[f64], y: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut j = 0;
    grid.iter()
        .map(|&x| {
            while j + 1 < t.len() && t[j + 1] <= x {
                j += 1;
            }
            if j + 1 >= t.len() {
                return y[t.len() - 1];
            }
            let w = (x - t[j]) / (t[j + 1] - t[j]);
            y[j] + w * (y[j + 1] - y[j])
        })
        .collect()
}

/// `v = v_ahead − dg/dt` with central differences, floored at 0.
pub fn reconstruct_speed(ahead: &[f64], gap: &[f64], dt: f64) -> Vec<f64> {
    let n = gap.len();
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let rate = (gap[b] - gap[a]) / ((b - a) as f64 * dt);
            (ahead[i] - rate).max(0.0)
        })
        .collect()
}
