use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{sample_minibatch, ReplayBuffer, Transition};
use super::env::{FollowEnv, FreeEnv, TrainingEnv};
use super::learner::Ddpg;
use super::DdpgConfig;
use crate::agent::{action_to_acceleration, PolicyKind};
use crate::checkpoint::{Checkpoint, Normalization, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, Mlp};
use crate::rewards::AgentParams;
use crate::sim::SimConfig;
use crate::stochastic::{stream_rng, ExplorationNoise, OuParams, Stream};

/// Summary of one training episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based episode index.
    pub episode: usize,
    /// Undiscounted sum of rewards.
    pub ret: f64,
    /// Mean return of the trailing monitor window.
    pub trailing: f64,
    pub steps: usize,
    pub crashed: bool,
    pub mean_critic_loss: f64,
}

/// Everything needed to audit a run afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub kind: PolicyKind,
    pub seed: u64,
    pub config: DdpgConfig,
    pub agent: AgentParams,
    pub sim: SimConfig,
    pub episodes_run: usize,
    pub best_episode: Option<usize>,
    pub best_trailing: Option<f64>,
    pub divergence: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    /// Snapshot with the highest trailing mean.
    pub best: Checkpoint,
    /// Snapshot after the last completed episode.
    pub last: Checkpoint,
    /// Snapshots every `checkpoint_every` episodes.
    pub periodic: Vec<Checkpoint>,
    pub curve: Vec<EpisodeRecord>,
    pub log: TrainingLog,
}

impl TrainingOutcome {
    pub fn diverged(&self) -> bool {
        self.log.divergence.is_some()
    }
}

/// Stateful DDPG run: learner, replay memory, exploration noise and the
/// training environment. Drive it episode by episode with
/// [`Trainer::run_episode`], or all at once with [`train_policy`].
pub struct Trainer {
    kind: PolicyKind,
    agent: AgentParams,
    sim: SimConfig,
    cfg: DdpgConfig,
    ddpg: Ddpg,
    buffer: ReplayBuffer,
    noise: ExplorationNoise,
    noise_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    env: Box<dyn TrainingEnv + Send>,
    curve: Vec<EpisodeRecord>,
    best: Option<Checkpoint>,
    periodic: Vec<Checkpoint>,
}

impl Trainer {
    pub fn new(kind: PolicyKind, agent: AgentParams, sim: SimConfig, cfg: DdpgConfig) -> Result<Self> {
        agent.validate()?;
        sim.validate()?;
        cfg.validate()?;
        let sim = SimConfig {
            episode_steps: cfg.steps_per_episode,
            ..sim
        };
        let mut weight_rng = stream_rng(cfg.seed, Stream::Weights);
        let ddpg = Ddpg::new(kind.obs_dim(), cfg.hidden(kind), &cfg, &mut weight_rng);
        let env: Box<dyn TrainingEnv + Send> = match kind {
            PolicyKind::Free => Box::new(FreeEnv::new(agent, sim.clone(), cfg.seed)),
            PolicyKind::Follow => Box::new(FollowEnv::new(agent, sim.clone(), cfg.seed)),
        };
        let noise = ExplorationNoise::new(OuParams {
            theta: cfg.ou_theta,
            sigma: cfg.ou_sigma,
            dt: sim.dt,
            ..OuParams::exploration()
        });
        Ok(Self {
            kind,
            agent,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            noise,
            noise_rng: stream_rng(cfg.seed, Stream::Exploration),
            batch_rng: stream_rng(cfg.seed, Stream::Minibatch),
            env,
            curve: Vec::new(),
            best: None,
            periodic: Vec::new(),
            sim,
            cfg,
            ddpg,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn learner(&self) -> &Ddpg {
        &self.ddpg
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn curve(&self) -> &[EpisodeRecord] {
        &self.curve
    }

    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    /// Runs one exploratory episode with an update after every step.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let episode = self.curve.len() + 1;
        let mut obs = self.env.reset();
        self.noise.reset();
        let mut ret = 0.0;
        let mut crashed = false;
        let mut steps = 0;
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        for step in 0..self.cfg.steps_per_episode {
            let mu = self.ddpg.act(&obs)?;
            let a_norm = (mu + self.noise.sample(&mut self.noise_rng)).clamp(-1.0, 1.0);
            let accel = action_to_acceleration(a_norm, &self.agent);
            let out = self.env.step(accel)?;
            let r = out.reward.total;
            ret += r;
            steps += 1;
            self.buffer.push(Transition {
                s: std::mem::take(&mut obs),
                a: a_norm,
                r,
                s_next: out.obs.clone(),
                terminal: out.terminal,
            });
            obs = out.obs;
            if let Some(batch) = sample_minibatch(&self.buffer, self.cfg.batch_size, &mut self.batch_rng) {
                let stats = self.ddpg.train_step(&batch).map_err(|e| match e {
                    Error::Diverged { message, .. } => Error::Diverged {
                        episode,
                        step,
                        message,
                    },
                    other => other,
                })?;
                loss_sum += stats.critic_loss;
                updates += 1;
            }
            if out.terminal {
                crashed = true;
                break;
            }
        }
        let window = self.cfg.monitor_window;
        let from = self.curve.len().saturating_sub(window - 1);
        let tail = &self.curve[from..];
        let trailing = (tail.iter().map(|r| r.ret).sum::<f64>() + ret) / (tail.len() + 1) as f64;
        let record = EpisodeRecord {
            episode,
            ret,
            trailing,
            steps,
            crashed,
            mean_critic_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
        };
        self.curve.push(record.clone());
        let eligible = episode >= window.min(self.cfg.episodes.max(1));
        let improved = self.best.as_ref().is_none_or(|b| trailing > b.trailing_mean);
        if eligible && improved {
            self.best = Some(self.snapshot());
        }
        let every = self.cfg.checkpoint_every;
        if every > 0 && episode % every == 0 {
            self.periodic.push(self.snapshot());
        }
        Ok(record)
    }

    /// Checkpoint of the current networks.
    pub fn snapshot(&self) -> Checkpoint {
        let (episode, trailing_mean) = self
            .curve
            .last()
            .map_or((0, f64::NEG_INFINITY), |r| (r.episode, r.trailing));
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            agent: self.agent,
            g_max: self.sim.g_max,
            dt: self.sim.dt,
            normalization: Normalization {
                v_des: self.agent.v_des,
                a_min: self.agent.a_min,
                a_max: self.agent.a_max,
                g_max: self.sim.g_max,
            },
            actor: self.ddpg.actor.clone(),
            critic: self.ddpg.critic.clone(),
            actor_target: self.ddpg.actor_target.clone(),
            critic_target: self.ddpg.critic_target.clone(),
            actor_optimizer: self.ddpg.actor_opt.clone(),
            critic_optimizer: self.ddpg.critic_opt.clone(),
            episode,
            trailing_mean,
            seed: self.cfg.seed,
        }
    }

    /// Closes the run. A missing best snapshot (no eligible episode) falls
    /// back to the last one.
    pub fn finish(self, divergence: Option<String>) -> TrainingOutcome {
        let last = self.snapshot();
        let best = self.best.unwrap_or_else(|| last.clone());
        let log = TrainingLog {
            kind: self.kind,
            seed: self.cfg.seed,
            config: self.cfg,
            agent: self.agent,
            sim: self.sim,
            episodes_run: self.curve.len(),
            best_episode: Some(best.episode).filter(|&e| e > 0),
            best_trailing: Some(best.trailing_mean).filter(|t| t.is_finite()),
            divergence,
        };
        TrainingOutcome {
            best,
            last,
            periodic: self.periodic,
            curve: self.curve,
            log,
        }
    }
}

/// Trains one policy for `cfg.episodes` episodes.
///
/// Divergence does not return an error: the run stops, and the outcome
/// carries the best snapshot so far plus the divergence message.
pub fn train_policy(
    kind: PolicyKind,
    agent: &AgentParams,
    sim: &SimConfig,
    cfg: &DdpgConfig,
) -> Result<TrainingOutcome> {
    train_policy_with(kind, agent, sim, cfg, |_, _| {})
}

/// [`train_policy`] with a callback after every episode.
pub fn train_policy_with<F>(
    kind: PolicyKind,
    agent: &AgentParams,
    sim: &SimConfig,
    cfg: &DdpgConfig,
    mut on_episode: F,
) -> Result<TrainingOutcome>
where
    F: FnMut(&EpisodeRecord, &Trainer),
{
    let mut trainer = Trainer::new(kind, *agent, sim.clone(), cfg.clone())?;
    for _ in 0..cfg.episodes {
        match trainer.run_episode() {
            Ok(rec) => on_episode(&rec, &trainer),
            Err(e @ Error::Diverged { .. }) => return Ok(trainer.finish(Some(e.to_string()))),
            Err(e) => return Err(e),
        }
    }
    Ok(trainer.finish(None))
}

/// Writes `episode,return,trailing` rows.
pub fn write_reward_curve<W: Write>(writer: W, curve: &[EpisodeRecord], window: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["episode", "return", &format!("trailing{window}")])?;
    for r in curve {
        w.write_record([r.episode.to_string(), r.ret.to_string(), r.trailing.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Greedy (noise-free) evaluation in the policy's own training world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub episodes: usize,
    pub crashes: usize,
    pub mean_return: f64,
    pub returns: Vec<f64>,
}

/// Runs `episodes` deterministic episodes of `actor`; initial conditions
/// and leaders come from `seed`.
pub fn evaluate_policy(
    kind: PolicyKind,
    actor: &Mlp,
    agent: &AgentParams,
    sim: &SimConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvaluationSummary> {
    let mut env: Box<dyn TrainingEnv> = match kind {
        PolicyKind::Free => Box::new(FreeEnv::new(*agent, sim.clone(), seed)),
        PolicyKind::Follow => Box::new(FollowEnv::new(*agent, sim.clone(), seed)),
    };
    let mut cache = ForwardCache::default();
    let mut returns = Vec::with_capacity(episodes);
    let mut crashes = 0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut ret = 0.0;
        for _ in 0..sim.episode_steps {
            let a_norm = actor.forward_cached(&obs, &mut cache)?[0];
            let out = env.step(action_to_acceleration(a_norm, agent))?;
            ret += out.reward.total;
            obs = out.obs;
            if out.terminal {
                crashes += 1;
                break;
            }
        }
        returns.push(ret);
    }
    let mean_return = if episodes > 0 {
        returns.iter().sum::<f64>() / episodes as f64
    } else {
        0.0
    };
    Ok(EvaluationSummary {
        episodes,
        crashes,
        mean_return,
        returns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(kind: PolicyKind, sigma: f64, seed: u64) -> TrainingOutcome {
        let cfg = DdpgConfig {
            episodes: 3,
            steps_per_episode: 60,
            ou_sigma: sigma,
            monitor_window: 2,
            seed,
            ..DdpgConfig::default()
        };
        train_policy(kind, &AgentParams::default(), &SimConfig::default(), &cfg).unwrap()
    }

    #[test]
    fn curve_has_one_row_per_episode() {
        let out = quick(PolicyKind::Free, 0.2, 1);
        assert_eq!(out.curve.len(), 3);
        assert_eq!(out.log.episodes_run, 3);
        let r = &out.curve[2];
        assert!((r.trailing - (out.curve[1].ret + r.ret) / 2.0).abs() < 1e-12);
        assert!(out.best.trailing_mean >= out.curve[1].trailing);
    }

    #[test]
    fn noiseless_runs_are_bit_identical() {
        let a = quick(PolicyKind::Follow, 0.0, 9);
        let b = quick(PolicyKind::Follow, 0.0, 9);
        assert_eq!(a.last.actor, b.last.actor);
        assert_eq!(a.last.critic, b.last.critic);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn reward_curve_csv_header() {
        let out = quick(PolicyKind::Free, 0.2, 2);
        let mut buf = Vec::new();
        write_reward_curve(&mut buf, &out.curve, 30).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("episode,return,trailing30\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn periodic_snapshots_follow_the_cadence() {
        let cfg = DdpgConfig {
            episodes: 5,
            steps_per_episode: 20,
            checkpoint_every: 2,
            ..DdpgConfig::default()
        };
        let out = train_policy(PolicyKind::Free, &AgentParams::default(), &SimConfig::default(), &cfg).unwrap();
        let eps: Vec<usize> = out.periodic.iter().map(|c| c.episode).collect();
        assert_eq!(eps, vec![2, 4]);
    }
}
