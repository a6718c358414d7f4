//! Reward functions of the free-driving and car-following policies.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Driving-style parameters shared by the reward functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentParams {
    /// Minimum acceleration, m/s².
    pub a_min: f64,
    /// Maximum acceleration, m/s².
    pub a_max: f64,
    /// Comfortable deceleration, m/s².
    pub b_comf: f64,
    /// Comfortable jerk, m/s³.
    pub j_comf: f64,
    /// Desired speed, m/s.
    pub v_des: f64,
    /// Desired time gap, s.
    #[serde(rename = "T")]
    pub t_gap: f64,
    /// Desired minimum space gap, m.
    pub g_min: f64,
    /// Time gap at which the gap reward reaches zero, s.
    #[serde(rename = "T_lim")]
    pub t_lim: f64,
    pub w_gap: f64,
    pub w_jerk: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            a_min: -9.0,
            a_max: 2.0,
            b_comf: 2.0,
            j_comf: 2.0,
            v_des: 15.0,
            t_gap: 1.5,
            g_min: 2.0,
            t_lim: 15.0,
            w_gap: 0.5,
            w_jerk: 0.004,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.a_min, self.a_max, self.b_comf, self.j_comf, self.v_des, self.t_gap, self.g_min,
            self.t_lim, self.w_gap, self.w_jerk,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("agent parameters must be finite".into()));
        }
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.a_min < 0.0 && self.a_max > 0.0, "agent.a_min < 0 < agent.a_max violated")?;
        check(self.b_comf > 0.0, "agent.b_comf must be > 0")?;
        check(self.j_comf > 0.0, "agent.j_comf must be > 0")?;
        check(self.v_des > 0.0, "agent.v_des must be > 0")?;
        check(self.t_gap > 0.0, "agent.T must be > 0")?;
        check(self.g_min > 0.0, "agent.g_min must be > 0")?;
        // the slope-matched knot needs g_lim − g_opt ≥ 2·g_var
        check(self.t_lim >= 2.0 * self.t_gap, "agent.T_lim must be >= 2·agent.T")?;
        check(self.w_gap >= 0.0 && self.w_jerk >= 0.0, "agent weights must be >= 0")?;
        Ok(())
    }
}

/// Individual reward terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_speed: f64,
    pub r_safe: f64,
    pub r_gap: f64,
    pub r_jerk: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// Reward assigned to a step that ends in a collision.
    pub fn crashed() -> Self {
        Self {
            r_safe: -1.0,
            total: -1.0,
            ..Self::default()
        }
    }
}

fn jerk_term(jerk: f64, p: &AgentParams) -> f64 {
    let x = jerk / p.j_comf;
    -(x * x)
}

/// Free-driving reward: `r_speed + w_jerk·r_jerk`.
pub fn reward_free(v: f64, jerk: f64, p: &AgentParams) -> RewardBreakdown {
    let r_speed = if v <= p.v_des { v / p.v_des } else { 0.0 };
    let r_jerk = jerk_term(jerk, p);
    RewardBreakdown {
        r_speed,
        r_jerk,
        total: r_speed + p.w_jerk * r_jerk,
        ..RewardBreakdown::default()
    }
}

/// Kinematic deceleration `(v − v_l)²/g` when closing in, else 0.
pub fn kinematic_deceleration(v: f64, v_l: f64, g: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Err(Error::Domain(format!("gap must be > 0, got {g}")));
    }
    if v > v_l {
        let dv = v - v_l;
        Ok(dv * dv / g)
    } else {
        Ok(0.0)
    }
}

/// Normalized Gaussian `φ(z)/φ(0) = exp(−z²/2)` and its derivative in `g`.
fn gaussian(g: f64, g_opt: f64, g_var: f64) -> (f64, f64) {
    let z = (g - g_opt) / g_var;
    let value = (-0.5 * z * z).exp();
    (value, -z / g_var * value)
}

fn knot_residual(g: f64, g_opt: f64, g_var: f64, g_lim: f64) -> f64 {
    let (value, slope) = gaussian(g, g_opt, g_var);
    slope * (g_lim - g) + value
}

const KNOT_TOL: f64 = 1e-10;

/// Finds the point `g* ∈ (g_opt, g_lim)` where the straight line through
/// `(g_lim, 0)` touches the normalized Gaussian, i.e. the root of
/// `G′(g*)·(g_lim − g*) + G(g*) = 0` on the rising-slope side of the
/// inflection point.
///
/// At `g_lim − g_opt = 2·g_var` the two tangent points merge at the
/// inflection `g_opt + g_var`, which is returned directly.
pub fn solve_gap_knot(g_opt: f64, g_var: f64, g_lim: f64) -> Result<f64> {
    if !(g_var > 0.0 && g_lim > g_opt) {
        return Err(Error::Solver(format!(
            "invalid knot bracket: g_opt={g_opt}, g_var={g_var}, g_lim={g_lim}"
        )));
    }
    let mut lo = g_opt;
    let mut hi = g_opt + g_var;
    let f_hi = knot_residual(hi, g_opt, g_var, g_lim);
    if f_hi.abs() < KNOT_TOL {
        return Ok(hi);
    }
    if f_hi > 0.0 {
        return Err(Error::Solver(format!(
            "no sign change for g_opt={g_opt}, g_var={g_var}, g_lim={g_lim}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = knot_residual(mid, g_opt, g_var, g_lim);
        if f.abs() < KNOT_TOL || hi - lo < f64::EPSILON * hi {
            return Ok(mid);
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Speed-dependent shape of the gap reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapShape {
    pub g_opt: f64,
    pub g_var: f64,
    pub g_lim: f64,
    pub g_star: f64,
}

thread_local! {
    static KNOT_MEMO: Cell<Option<([u64; 4], GapShape)>> = const { Cell::new(None) };
}

impl GapShape {
    pub fn new(v: f64, p: &AgentParams) -> Result<Self> {
        let key = [
            v.to_bits(),
            p.t_gap.to_bits(),
            p.g_min.to_bits(),
            p.t_lim.to_bits(),
        ];
        if let Some((k, shape)) = KNOT_MEMO.with(Cell::get) {
            if k == key {
                return Ok(shape);
            }
        }
        let g_opt = v * p.t_gap + p.g_min;
        let g_var = 0.5 * g_opt;
        let g_lim = v * p.t_lim + 2.0 * p.g_min;
        let g_star = solve_gap_knot(g_opt, g_var, g_lim)?;
        let shape = Self {
            g_opt,
            g_var,
            g_lim,
            g_star,
        };
        KNOT_MEMO.with(|m| m.set(Some((key, shape))));
        Ok(shape)
    }

    pub fn value(&self, g: f64) -> f64 {
        if g < self.g_star {
            gaussian(g, self.g_opt, self.g_var).0
        } else {
            let at_knot = gaussian(self.g_star, self.g_opt, self.g_var).0;
            (at_knot * (1.0 - (g - self.g_star) / (self.g_lim - self.g_star))).max(0.0)
        }
    }

    /// Analytic one-sided derivatives `(left, right)` at `g`.
    pub fn derivatives(&self, g: f64) -> (f64, f64) {
        let gauss = gaussian(g, self.g_opt, self.g_var).1;
        let line = -gaussian(self.g_star, self.g_opt, self.g_var).0 / (self.g_lim - self.g_star);
        let left = if g <= self.g_star {
            gauss
        } else if g <= self.g_lim {
            line
        } else {
            0.0
        };
        let right = if g < self.g_star {
            gauss
        } else if g < self.g_lim {
            line
        } else {
            0.0
        };
        (left, right)
    }
}

/// Gap reward term `r_gap(g)` at follower speed `v`.
pub fn gap_reward(v: f64, g: f64, p: &AgentParams) -> Result<f64> {
    Ok(GapShape::new(v, p)?.value(g))
}

/// Car-following reward: `r_safe + w_gap·r_gap + w_jerk·r_jerk`.
pub fn reward_follow(
    v: f64,
    v_l: f64,
    g: f64,
    jerk: f64,
    p: &AgentParams,
) -> Result<RewardBreakdown> {
    let b_kin = kinematic_deceleration(v, v_l, g)?;
    let r_safe = if b_kin > p.b_comf {
        -((b_kin - p.b_comf) / (-p.a_min)).tanh()
    } else {
        0.0
    };
    let r_gap = gap_reward(v, g, p)?;
    let r_jerk = jerk_term(jerk, p);
    Ok(RewardBreakdown {
        r_speed: 0.0,
        r_safe,
        r_gap,
        r_jerk,
        total: r_safe + p.w_gap * r_gap + p.w_jerk * r_jerk,
    })
}
