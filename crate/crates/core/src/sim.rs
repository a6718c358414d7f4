//! Point-mass longitudinal kinematics and episode stepping.
//!
//! Vehicles follow the Euler/ballistic update
//! `v' = v + a·dt`, `x' = x + (v + v')/2 · dt`, with an exact stop inside the
//! step whenever the speed would turn negative.

use serde::{Deserialize, Serialize};

use crate::agent::{Controller, LeaderView, Scene};
use crate::error::{ensure_finite, Error, Result};
use crate::rewards::{reward_follow, AgentParams, RewardBreakdown};
use crate::stochastic::LeaderProcess;

/// Lower bound of the shared action range, m/s².
pub const ACCEL_MIN: f64 = -9.0;
/// Upper bound of the shared action range, m/s².
pub const ACCEL_MAX: f64 = 2.0;
/// Vehicle length used to turn positions into bumper-to-bumper gaps, m.
pub const VEHICLE_LENGTH: f64 = 5.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Front bumper position, m.
    pub x: f64,
    /// Speed, m/s.
    pub v: f64,
    /// Acceleration applied over the current step, m/s².
    pub a: f64,
    /// Acceleration applied over the previous step, m/s².
    pub a_prev: f64,
}

impl VehicleState {
    pub fn new(x: f64, v: f64) -> Self {
        Self {
            x,
            v,
            a: 0.0,
            a_prev: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashMode {
    /// Stop the episode at the first collision.
    #[default]
    Terminate,
    /// Put the follower back at the leader's rear bumper and keep going.
    ContinueClamped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub episode_steps: usize,
    pub g_max: f64,
    pub crash_mode: CrashMode,
    pub vehicle_length: f64,
    /// Speed process of synthetic leaders.
    pub leader: LeaderProcess,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            episode_steps: 500,
            g_max: 200.0,
            crash_mode: CrashMode::Terminate,
            vehicle_length: VEHICLE_LENGTH,
            leader: LeaderProcess::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("sim.dt must be > 0, got {}", self.dt)));
        }
        if self.episode_steps == 0 {
            return Err(Error::Config("sim.episode_steps must be > 0".into()));
        }
        if !(self.g_max > 0.0 && self.g_max.is_finite()) {
            return Err(Error::Config(format!(
                "sim.g_max must be > 0, got {}",
                self.g_max
            )));
        }
        if !(self.vehicle_length >= 0.0 && self.vehicle_length.is_finite()) {
            return Err(Error::Config("sim.vehicle_length must be >= 0".into()));
        }
        self.leader.validate()
    }
}

/// Advances one vehicle by `dt` under the commanded acceleration.
///
/// The action range is not enforced here; controllers clamp their own
/// output (the unclamped IDM mode relies on this).
pub fn step_vehicle(state: VehicleState, commanded_a: f64, dt: f64) -> Result<VehicleState> {
    ensure_finite("x", state.x)?;
    ensure_finite("v", state.v)?;
    ensure_finite("commanded acceleration", commanded_a)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let v = state.v.max(0.0);
    let v_next = v + commanded_a * dt;
    let (v_next, dx) = if v_next < 0.0 {
        // stops inside the step
        (0.0, v * v / (2.0 * commanded_a.abs()))
    } else {
        (v_next, 0.5 * (v + v_next) * dt)
    };
    Ok(VehicleState {
        x: state.x + dx,
        v: v_next,
        a: commanded_a,
        a_prev: state.a,
    })
}

/// Raw bumper-to-bumper gap `x_l − x_f − L`.
pub fn gap(leader: &VehicleState, follower: &VehicleState, vehicle_length: f64) -> f64 {
    leader.x - follower.x - vehicle_length
}

/// Gap as seen by an observer with sensor range `g_max`.
pub fn observed_gap(raw_gap: f64, g_max: f64) -> f64 {
    raw_gap.min(g_max)
}

/// Initial conditions of the followers, ordered front to back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInit {
    pub follower_speeds: Vec<f64>,
    /// `gaps[k]` separates follower `k` from the vehicle ahead of it.
    pub gaps: Vec<f64>,
}

impl EpisodeInit {
    pub fn single(speed: f64, gap: f64) -> Self {
        Self {
            follower_speeds: vec![speed],
            gaps: vec![gap],
        }
    }

    pub fn uniform(n: usize, speed: f64, gap: f64) -> Self {
        Self {
            follower_speeds: vec![speed; n],
            gaps: vec![gap; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrashEvent {
    /// Index of the first step whose state overlaps.
    pub step: usize,
    pub follower: usize,
}

/// Time series of one simulated episode.
///
/// Entry `t` of every per-step array describes the state at `t·dt`, the
/// acceleration commanded at that time, and the reward earned by the
/// transition to `t + 1`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub dt: f64,
    pub vehicle_length: f64,
    pub leader: Vec<VehicleState>,
    /// `followers[k][t]`
    pub followers: Vec<Vec<VehicleState>>,
    /// Raw gaps, `gaps[k][t]`.
    pub gaps: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<RewardBreakdown>>,
    pub crash: Option<CrashEvent>,
    pub crash_count: usize,
    pub controller_ids: Vec<String>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.leader.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leader.is_empty()
    }

    pub fn crashed(&self) -> bool {
        self.crash_count > 0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|t| t as f64 * self.dt).collect()
    }

    /// Speeds of vehicle `k` where 0 is the leader.
    pub fn speeds(&self, k: usize) -> Vec<f64> {
        self.vehicle(k).iter().map(|s| s.v).collect()
    }

    /// Accelerations of vehicle `k` where 0 is the leader.
    pub fn accelerations(&self, k: usize) -> Vec<f64> {
        self.vehicle(k).iter().map(|s| s.a).collect()
    }

    pub fn vehicle(&self, k: usize) -> &[VehicleState] {
        if k == 0 {
            &self.leader
        } else {
            &self.followers[k - 1]
        }
    }

    pub fn accumulated_reward(&self, follower: usize) -> f64 {
        self.rewards[follower].iter().map(|r| r.total).sum()
    }
}

/// Simulates a leader driven by an external speed series and a stack of
/// followers, each controlled by its own controller.
///
/// `reward_params` is used only for the reward bookkeeping stored in the
/// trace; controllers carry their own parameters.
pub fn run_episode(
    leader_speeds: &[f64],
    followers: &[&dyn Controller],
    init: &EpisodeInit,
    reward_params: &AgentParams,
    cfg: &SimConfig,
) -> Result<EpisodeTrace> {
    cfg.validate()?;
    let n = followers.len();
    if n == 0 {
        return Err(Error::InvalidInput("at least one follower is required".into()));
    }
    if init.follower_speeds.len() != n || init.gaps.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: init.follower_speeds.len().min(init.gaps.len()),
        });
    }
    if leader_speeds.len() < cfg.episode_steps {
        return Err(Error::InvalidInput(format!(
            "leader series has {} samples, episode needs {}",
            leader_speeds.len(),
            cfg.episode_steps
        )));
    }
    for (k, &g) in init.gaps.iter().enumerate() {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "initial gap of follower {k} must be > 0, got {g}"
            )));
        }
    }
    for &v in leader_speeds.iter().chain(&init.follower_speeds) {
        ensure_finite("speed", v)?;
        if v < 0.0 {
            return Err(Error::InvalidInput(format!("negative speed {v}")));
        }
    }

    let dt = cfg.dt;
    let len = cfg.vehicle_length;
    let speed_at = |t: usize| leader_speeds[t.min(leader_speeds.len() - 1)];
    let leader_accel = |t: usize| (speed_at(t + 1) - speed_at(t)) / dt;

    // Place the last follower at the origin and stack the others ahead.
    let mut states = vec![VehicleState::default(); n];
    let mut x = 0.0;
    for k in (0..n).rev() {
        states[k] = VehicleState::new(x, init.follower_speeds[k]);
        x += init.gaps[k] + len;
    }
    let mut leader = VehicleState {
        x,
        v: speed_at(0),
        a: leader_accel(0),
        a_prev: 0.0,
    };

    let steps = cfg.episode_steps;
    let mut trace = EpisodeTrace {
        dt,
        vehicle_length: len,
        leader: Vec::with_capacity(steps),
        followers: vec![Vec::with_capacity(steps); n],
        gaps: vec![Vec::with_capacity(steps); n],
        rewards: vec![Vec::with_capacity(steps); n],
        crash: None,
        crash_count: 0,
        controller_ids: followers.iter().flat_map(|c| c.ids()).collect(),
    };

    for t in 0..steps {
        // Each follower reacts to its predecessor's state at time t.
        let mut commands = Vec::with_capacity(n);
        for k in 0..n {
            let ahead = if k == 0 { &leader } else { &states[k - 1] };
            let raw = gap(ahead, &states[k], len);
            let scene = Scene {
                v: states[k].v,
                a: states[k].a,
                leader: Some(LeaderView {
                    v: ahead.v,
                    gap: raw,
                }),
            };
            let cmd = followers[k].accel(&scene);
            ensure_finite("controller output", cmd)?;
            commands.push(cmd);
        }

        // record time t
        leader.a = leader_accel(t);
        trace.leader.push(leader);
        for k in 0..n {
            let mut s = states[k];
            s.a_prev = s.a;
            s.a = commands[k];
            trace.followers[k].push(s);
            let ahead = if k == 0 { &leader } else { &states[k - 1] };
            trace.gaps[k].push(gap(ahead, &states[k], len));
        }

        // advance to t + 1
        let next_v = speed_at(t + 1);
        let next_leader = VehicleState {
            x: leader.x + 0.5 * (leader.v + next_v) * dt,
            v: next_v,
            a: leader_accel(t + 1),
            a_prev: leader.a,
        };
        let mut next = Vec::with_capacity(n);
        for k in 0..n {
            next.push(step_vehicle(states[k], commands[k], dt)?);
        }

        let mut crashed_now = false;
        for k in 0..n {
            let ahead = if k == 0 { next_leader } else { next[k - 1] };
            let raw = gap(&ahead, &next[k], len);
            let jerk = if t == 0 {
                0.0
            } else {
                (commands[k] - states[k].a) / dt
            };
            let reward = if raw > 0.0 {
                reward_follow(next[k].v, ahead.v, raw, jerk, reward_params)?
            } else {
                RewardBreakdown::crashed()
            };
            trace.rewards[k].push(reward);
            if raw <= 0.0 {
                let was_clear = trace.gaps[k].last().is_some_and(|&g| g > 0.0);
                if was_clear {
                    trace.crash_count += 1;
                    if trace.crash.is_none() {
                        trace.crash = Some(CrashEvent {
                            step: t + 1,
                            follower: k,
                        });
                    }
                }
                crashed_now = true;
                if cfg.crash_mode == CrashMode::ContinueClamped {
                    next[k].x = ahead.x - len;
                    next[k].v = next[k].v.min(ahead.v);
                }
            }
        }
        leader = next_leader;
        states = next;
        if crashed_now && cfg.crash_mode == CrashMode::Terminate {
            break;
        }
    }
    Ok(trace)
}
