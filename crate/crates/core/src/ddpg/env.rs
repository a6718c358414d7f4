use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{build_observation, LeaderView, PolicyKind, Scene};
use crate::error::Result;
use crate::rewards::{reward_follow, reward_free, AgentParams, RewardBreakdown};
use crate::sim::{gap, step_vehicle, SimConfig, VehicleState};
use crate::stochastic::{leader_profile_with, stream_rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: RewardBreakdown,
    /// Collision: the episode ends and the value does not bootstrap.
    pub terminal: bool,
}

/// A training world for one policy.
pub trait TrainingEnv {
    fn kind(&self) -> PolicyKind;

    fn reset(&mut self) -> Vec<f64>;

    /// Applies `accel` (m/s²) for one step.
    fn step(&mut self, accel: f64) -> Result<EnvStep>;

    fn speed(&self) -> f64;
}

/// Leaderless road: the free-driving policy learns to hold `v_des`.
#[derive(Clone, Debug)]
pub struct FreeEnv {
    pub params: AgentParams,
    pub sim: SimConfig,
    init_rng: ChaCha8Rng,
    state: VehicleState,
    t: usize,
}

impl FreeEnv {
    pub fn new(params: AgentParams, sim: SimConfig, seed: u64) -> Self {
        Self {
            params,
            sim,
            init_rng: stream_rng(seed, Stream::InitConditions),
            state: VehicleState::default(),
            t: 0,
        }
    }

    /// Starts the next episode from a given speed instead of a random one.
    pub fn reset_to(&mut self, v: f64, a: f64) -> Vec<f64> {
        self.state = VehicleState {
            x: 0.0,
            v,
            a,
            a_prev: a,
        };
        self.t = 0;
        self.observe()
    }

    fn observe(&self) -> Vec<f64> {
        let scene = Scene::leaderless(self.state.v, self.state.a);
        build_observation(&scene, &self.params, self.sim.g_max)
            .free
            .to_vec()
    }
}

impl TrainingEnv for FreeEnv {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Free
    }

    fn reset(&mut self) -> Vec<f64> {
        let v = self.init_rng.random_range(0.0..=self.params.v_des);
        self.reset_to(v, 0.0)
    }

    fn step(&mut self, accel: f64) -> Result<EnvStep> {
        let jerk = if self.t == 0 {
            0.0
        } else {
            (accel - self.state.a) / self.sim.dt
        };
        self.state = step_vehicle(self.state, accel, self.sim.dt)?;
        self.t += 1;
        Ok(EnvStep {
            obs: self.observe(),
            reward: reward_free(self.state.v, jerk, &self.params),
            terminal: false,
        })
    }

    fn speed(&self) -> f64 {
        self.state.v
    }
}

/// One follower behind an OU-driven leader.
#[derive(Clone, Debug)]
pub struct FollowEnv {
    pub params: AgentParams,
    pub sim: SimConfig,
    pub initial_gap: f64,
    init_rng: ChaCha8Rng,
    leader_rng: ChaCha8Rng,
    leader_speeds: Vec<f64>,
    leader: VehicleState,
    follower: VehicleState,
    t: usize,
}

impl FollowEnv {
    pub fn new(params: AgentParams, sim: SimConfig, seed: u64) -> Self {
        Self {
            params,
            sim,
            initial_gap: 120.0,
            init_rng: stream_rng(seed, Stream::InitConditions),
            leader_rng: stream_rng(seed, Stream::Leader),
            leader_speeds: Vec::new(),
            leader: VehicleState::default(),
            follower: VehicleState::default(),
            t: 0,
        }
    }

    pub fn gap(&self) -> f64 {
        gap(&self.leader, &self.follower, self.sim.vehicle_length)
    }

    pub fn leader_speed(&self) -> f64 {
        self.leader.v
    }

    fn observe(&self) -> Vec<f64> {
        let scene = Scene {
            v: self.follower.v,
            a: self.follower.a,
            leader: Some(LeaderView {
                v: self.leader.v,
                gap: self.gap(),
            }),
        };
        build_observation(&scene, &self.params, self.sim.g_max)
            .follow
            .to_vec()
    }
}

impl TrainingEnv for FollowEnv {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Follow
    }

    fn reset(&mut self) -> Vec<f64> {
        let v_des = self.params.v_des;
        let v_leader = self.init_rng.random_range(0.0..=v_des);
        let v_follower = self.init_rng.random_range(0.0..=v_des);
        let p = self.sim.leader.to_ou(self.sim.dt);
        self.leader_speeds =
            leader_profile_with(&p, self.sim.episode_steps + 1, v_leader, &mut self.leader_rng);
        self.follower = VehicleState::new(0.0, v_follower);
        self.leader = VehicleState::new(
            self.initial_gap + self.sim.vehicle_length,
            self.leader_speeds[0],
        );
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, accel: f64) -> Result<EnvStep> {
        let dt = self.sim.dt;
        let jerk = if self.t == 0 {
            0.0
        } else {
            (accel - self.follower.a) / dt
        };
        let next_v = self.leader_speeds[(self.t + 1).min(self.leader_speeds.len() - 1)];
        self.leader = VehicleState {
            x: self.leader.x + 0.5 * (self.leader.v + next_v) * dt,
            v: next_v,
            a: (next_v - self.leader.v) / dt,
            a_prev: self.leader.a,
        };
        self.follower = step_vehicle(self.follower, accel, dt)?;
        self.t += 1;
        let g = self.gap();
        if g <= 0.0 {
            return Ok(EnvStep {
                obs: self.observe(),
                reward: RewardBreakdown::crashed(),
                terminal: true,
            });
        }
        Ok(EnvStep {
            obs: self.observe(),
            reward: reward_follow(self.follower.v, self.leader.v, g, jerk, &self.params)?,
            terminal: false,
        })
    }

    fn speed(&self) -> f64 {
        self.follower.v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_env_first_step_has_no_jerk() {
        let mut env = FreeEnv::new(AgentParams::default(), SimConfig::default(), 1);
        env.reset_to(10.0, 0.0);
        let s = env.step(2.0).unwrap();
        assert_eq!(s.reward.r_jerk, 0.0);
        assert!((env.speed() - 10.2).abs() < 1e-12);
        let s = env.step(0.0).unwrap();
        // jerk = −2/0.1 = −20 ⇒ r_jerk = −100
        assert!((s.reward.r_jerk + 100.0).abs() < 1e-9);
    }

    #[test]
    fn follow_env_starts_at_initial_gap() {
        let mut env = FollowEnv::new(AgentParams::default(), SimConfig::default(), 3);
        let obs = env.reset();
        assert_eq!(obs.len(), 4);
        assert!((env.gap() - 120.0).abs() < 1e-12);
        assert!((obs[3] - 0.6).abs() < 1e-12);
        assert!(env.leader_speed() >= 0.0 && env.leader_speed() <= 15.0);
    }

    #[test]
    fn follow_env_crash_is_terminal() {
        let mut env = FollowEnv::new(AgentParams::default(), SimConfig::default(), 5);
        env.reset();
        let mut last = None;
        for _ in 0..500 {
            let s = env.step(2.0).unwrap();
            if s.terminal {
                last = Some(s);
                break;
            }
        }
        let s = last.expect("full throttle into an OU leader must collide");
        assert_eq!(s.reward.total, -1.0);
    }
}
