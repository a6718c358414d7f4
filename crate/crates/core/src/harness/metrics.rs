use serde::{Deserialize, Serialize};

use crate::idm::sse_log_gap;
use crate::sim::EpisodeTrace;

/// Population variance `(1/n) Σ (x − x̄)²`; 0 for an empty slice.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Time-to-collision `g / (v − v_l)` while closing in, `None` otherwise.
pub fn ttc(g: f64, v: f64, v_l: f64) -> Option<f64> {
    (v > v_l).then(|| g / (v - v_l))
}

/// One recorded TTC value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtcSample {
    pub step: usize,
    pub follower: usize,
    pub ttc: f64,
}

/// Fixed-width histogram on `[lo, hi)`; values outside land in the
/// underflow/overflow counters so mass is conserved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, width: f64) -> Self {
        let bins = ((hi - lo) / width).round() as usize;
        Self {
            lo,
            width,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    /// 0.5 s bins on [0, 20] s.
    pub fn ttc_default() -> Self {
        Self::new(0.0, 20.0, 0.5)
    }

    pub fn add(&mut self, x: f64) {
        if x < self.lo {
            self.underflow += 1;
            return;
        }
        let i = ((x - self.lo) / self.width).floor() as usize;
        match self.counts.get_mut(i) {
            Some(c) => *c += 1,
            None => self.overflow += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }

    pub fn bin_edges(&self) -> Vec<(f64, f64)> {
        (0..self.counts.len())
            .map(|i| {
                let a = self.lo + i as f64 * self.width;
                (a, a + self.width)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtcReport {
    pub samples: Vec<TtcSample>,
    pub histogram: Histogram,
    pub min: Option<f64>,
}

/// TTC of every follower at every step where it is closing in on its
/// predecessor.
pub fn compute_ttc(trace: &EpisodeTrace) -> TtcReport {
    let mut samples = Vec::new();
    let mut histogram = Histogram::ttc_default();
    for (k, gaps) in trace.gaps.iter().enumerate() {
        let own = trace.vehicle(k + 1);
        let ahead = trace.vehicle(k);
        for (t, &g) in gaps.iter().enumerate() {
            if g <= 0.0 {
                continue;
            }
            if let Some(x) = ttc(g, own[t].v, ahead[t].v) {
                samples.push(TtcSample {
                    step: t,
                    follower: k,
                    ttc: x,
                });
                histogram.add(x);
            }
        }
    }
    let min = samples.iter().map(|s| s.ttc).reduce(f64::min);
    TtcReport {
        samples,
        histogram,
        min,
    }
}

/// Steps at which the leader (vehicle 0) is in an emergency deceleration.
///
/// The leader's deceleration is averaged over `window_s` seconds so that
/// step-level speed noise does not count as braking. A step is flagged
/// when that averaged deceleration exceeds `threshold`, and the flag is
/// held for `hold_s` seconds afterwards while the followers react.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergencyWindow {
    pub threshold: f64,
    pub window_s: f64,
    pub hold_s: f64,
}

impl Default for EmergencyWindow {
    fn default() -> Self {
        Self {
            threshold: 5.0,
            window_s: 1.0,
            hold_s: 3.0,
        }
    }
}

impl EmergencyWindow {
    pub fn flags(&self, leader_speeds: &[f64], dt: f64) -> Vec<bool> {
        let n = leader_speeds.len();
        let w = ((self.window_s / dt).round() as usize).max(1);
        let hold = (self.hold_s / dt).round() as usize;
        let mut flags = vec![false; n];
        for t in 0..n {
            let from = t.saturating_sub(w);
            let span = (t - from) as f64 * dt;
            if span == 0.0 {
                continue;
            }
            let decel = (leader_speeds[from] - leader_speeds[t]) / span;
            if decel > self.threshold {
                for f in &mut flags[from..(t + hold + 1).min(n)] {
                    *f = true;
                }
            }
        }
        flags
    }
}

/// Realized time gap `(g − g_min)/v` at steps of steady following:
/// `v > v_floor`, relative speed and own acceleration small.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyFollowing {
    pub v_floor: f64,
    pub max_rel_speed: f64,
    pub max_accel: f64,
}

impl Default for SteadyFollowing {
    fn default() -> Self {
        Self {
            v_floor: 2.0,
            max_rel_speed: 1.0,
            max_accel: 1.0,
        }
    }
}

impl SteadyFollowing {
    /// Time gaps of follower `k` (0-based) over its steady steps.
    pub fn time_gaps(&self, trace: &EpisodeTrace, k: usize, g_min: f64) -> Vec<f64> {
        let own = trace.vehicle(k + 1);
        let ahead = trace.vehicle(k);
        trace.gaps[k]
            .iter()
            .enumerate()
            .filter(|&(t, _)| {
                own[t].v > self.v_floor
                    && (ahead[t].v - own[t].v).abs() < self.max_rel_speed
                    && own[t].a.abs() < self.max_accel
            })
            .map(|(t, &g)| (g - g_min) / own[t].v)
            .collect()
    }
}

/// Number of steps where `|Δa/dt|` exceeds `limit`.
pub fn jerk_exceedances(accels: &[f64], dt: f64, limit: f64) -> usize {
    accels
        .windows(2)
        .filter(|w| ((w[1] - w[0]) / dt).abs() > limit)
        .count()
}

pub const COMFORT_JERK: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub steps: usize,
    /// Leader first, then every follower.
    pub accel_variance: Vec<f64>,
    pub crash_count: usize,
    pub min_gap: Vec<f64>,
    pub mean_gap: Vec<f64>,
    pub accumulated_reward: Vec<f64>,
    pub jerk_exceedances: Vec<usize>,
    pub ttc_min: Option<f64>,
    pub ttc_histogram: Histogram,
    /// `SSE(ln g)` of each follower against a reference, when one is given.
    pub sse_log_gap: Option<Vec<f64>>,
}

impl MetricsReport {
    pub fn from_trace(trace: &EpisodeTrace, reference_gaps: Option<&[Vec<f64>]>) -> Self {
        let n = trace.followers.len();
        let ttc = compute_ttc(trace);
        let sse = reference_gaps.map(|refs| {
            (0..n)
                .map(|k| {
                    let sim = &trace.gaps[k];
                    match refs.get(k) {
                        Some(r) if r.len() >= sim.len() && sim.iter().all(|g| *g > 0.0) => {
                            sse_log_gap(sim, &r[..sim.len()]).unwrap_or(f64::NAN)
                        }
                        _ => f64::NAN,
                    }
                })
                .collect()
        });
        Self {
            steps: trace.len(),
            accel_variance: (0..=n)
                .map(|k| population_variance(&trace.accelerations(k)))
                .collect(),
            crash_count: trace.crash_count,
            min_gap: trace
                .gaps
                .iter()
                .map(|g| g.iter().copied().fold(f64::INFINITY, f64::min))
                .collect(),
            mean_gap: trace.gaps.iter().map(|g| mean(g)).collect(),
            accumulated_reward: (0..n).map(|k| trace.accumulated_reward(k)).collect(),
            jerk_exceedances: (1..=n)
                .map(|k| jerk_exceedances(&trace.accelerations(k), trace.dt, COMFORT_JERK))
                .collect(),
            ttc_min: ttc.min,
            ttc_histogram: ttc.histogram,
            sse_log_gap: sse,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_is_population() {
        assert_eq!(population_variance(&[1.0, 3.0]), 1.0);
        assert_eq!(population_variance(&[]), 0.0);
        assert_eq!(population_variance(&[4.0; 7]), 0.0);
    }

    #[test]
    fn ttc_examples() {
        assert_eq!(ttc(20.0, 15.0, 5.0), Some(2.0));
        assert_eq!(ttc(20.0, 10.0, 10.0), None);
        assert_eq!(ttc(20.0, 5.0, 10.0), None);
    }

    #[test]
    fn histogram_conserves_mass() {
        let mut h = Histogram::ttc_default();
        assert_eq!(h.counts.len(), 40);
        for x in [0.0, 0.49, 0.5, 19.99, 20.0, 150.0, -1.0] {
            h.add(x);
        }
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[39], 1);
        assert_eq!(h.overflow, 2);
        assert_eq!(h.underflow, 1);
        assert_eq!(h.total(), 7);
    }

    #[test]
    fn emergency_flags_need_sustained_braking() {
        // single-step drop of 1 m/s averages to 1 m/s² over 1 s: not flagged
        let mut v = vec![10.0; 50];
        for x in &mut v[20..] {
            *x = 9.0;
        }
        assert!(EmergencyWindow::default().flags(&v, 0.1).iter().all(|f| !f));
        // −9 m/s² for one second
        let v: Vec<f64> = (0..100)
            .map(|t| if t < 30 { 12.0 } else { (12.0 - 0.9 * (t - 30) as f64).max(0.0) })
            .collect();
        let f = EmergencyWindow::default().flags(&v, 0.1);
        assert!(f[35] && f[45] && f[70]);
        assert!(!f[10] && !f[99]);
    }

    #[test]
    fn jerk_counting() {
        assert_eq!(jerk_exceedances(&[0.0, 0.1, 0.3, 0.3], 0.1, 1.5), 1);
    }
}
