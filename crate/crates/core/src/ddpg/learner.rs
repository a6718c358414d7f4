use rand::Rng;

use super::buffer::Transition;
use super::{DdpgConfig, OptimizerKind};
use crate::error::{Error, Result};
use crate::nn::{Adam, ForwardCache, GradientSet, Mlp, Optimizer};

/// Diagnostics of one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Mean squared TD error before the critic step.
    pub critic_loss: f64,
    /// `(1/N) Σ Q(s, μ(s))` before the actor step.
    pub actor_objective: f64,
}

/// Bootstrapped targets `y = r + γ·Q′(s′, μ′(s′))`, with `y = r` for
/// terminal transitions.
pub fn td_targets(
    batch: &[&Transition],
    critic_target: &Mlp,
    actor_target: &Mlp,
    gamma: f64,
) -> Result<Vec<f64>> {
    let mut actor_cache = ForwardCache::default();
    let mut critic_cache = ForwardCache::default();
    let mut input = Vec::new();
    batch
        .iter()
        .map(|t| {
            if t.terminal || gamma == 0.0 {
                return Ok(t.r);
            }
            let a_next = actor_target.forward_cached(&t.s_next, &mut actor_cache)?[0];
            input.clear();
            input.extend_from_slice(&t.s_next);
            input.push(a_next);
            let q_next = critic_target.forward_cached(&input, &mut critic_cache)?[0];
            Ok(t.r + gamma * q_next)
        })
        .collect()
}

/// Actor, critic, their target copies and optimizer state.
#[derive(Clone, Debug)]
pub struct Ddpg {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: Optimizer,
    pub critic_opt: Optimizer,
    pub gamma: f64,
    pub tau: f64,
    scratch: Scratch,
}

#[derive(Clone, Debug, Default)]
struct Scratch {
    actor_cache: ForwardCache,
    critic_cache: ForwardCache,
    input: Vec<f64>,
    input_grad: Vec<f64>,
}

impl Ddpg {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], cfg: &DdpgConfig, rng: &mut R) -> Self {
        let actor = Mlp::actor(obs_dim, hidden, rng);
        let critic = Mlp::critic(obs_dim, hidden, rng);
        Self::from_nets(actor, critic, cfg)
    }

    pub fn from_nets(actor: Mlp, critic: Mlp, cfg: &DdpgConfig) -> Self {
        let make_opt = |net: &Mlp| match cfg.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(net, cfg.lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr: cfg.lr },
        };
        Self {
            actor_opt: make_opt(&actor),
            critic_opt: make_opt(&critic),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            gamma: cfg.gamma,
            tau: cfg.tau,
            scratch: Scratch::default(),
        }
    }

    /// Deterministic actor output μ(s) in [−1, 1].
    pub fn act(&mut self, obs: &[f64]) -> Result<f64> {
        Ok(self.actor.forward_cached(obs, &mut self.scratch.actor_cache)?[0])
    }

    pub fn q_value(&mut self, obs: &[f64], action: f64) -> Result<f64> {
        let s = &mut self.scratch;
        s.input.clear();
        s.input.extend_from_slice(obs);
        s.input.push(action);
        Ok(self.critic.forward_cached(&s.input, &mut s.critic_cache)?[0])
    }

    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        td_targets(batch, &self.critic_target, &self.actor_target, self.gamma)
    }

    /// Gradient of the mean squared error `(1/N) Σ (y − Q(s, a))²` and the
    /// loss itself.
    pub fn critic_gradient(&mut self, batch: &[&Transition], targets: &[f64]) -> Result<(GradientSet, f64)> {
        let n = batch.len() as f64;
        let mut grads = GradientSet::zeros_like(&self.critic);
        let mut loss = 0.0;
        let s = &mut self.scratch;
        for (t, &y) in batch.iter().zip(targets) {
            s.input.clear();
            s.input.extend_from_slice(&t.s);
            s.input.push(t.a);
            let q = self.critic.forward_cached(&s.input, &mut s.critic_cache)?[0];
            let err = y - q;
            loss += err * err / n;
            self.critic
                .backward(&mut s.critic_cache, &[-2.0 * err / n], Some(&mut grads), &mut s.input_grad)?;
        }
        Ok((grads, loss))
    }

    /// Sampled policy gradient `∇θ (1/N) Σ Q(s, μθ(s))`, chaining `∇a Q`
    /// through `∇θ μ`, plus the objective value.
    pub fn actor_gradient(&mut self, batch: &[&Transition]) -> Result<(GradientSet, f64)> {
        let n = batch.len() as f64;
        let mut grads = GradientSet::zeros_like(&self.actor);
        let mut objective = 0.0;
        let obs_dim = self.actor.input_dim();
        let s = &mut self.scratch;
        for t in batch {
            let a = self.actor.forward_cached(&t.s, &mut s.actor_cache)?[0];
            s.input.clear();
            s.input.extend_from_slice(&t.s);
            s.input.push(a);
            let q = self.critic.forward_cached(&s.input, &mut s.critic_cache)?[0];
            objective += q / n;
            self.critic
                .backward(&mut s.critic_cache, &[1.0], None, &mut s.input_grad)?;
            let dq_da = s.input_grad[obs_dim];
            self.actor.backward(
                &mut s.actor_cache,
                &[dq_da / n],
                Some(&mut grads),
                &mut s.input_grad,
            )?;
        }
        Ok((grads, objective))
    }

    /// One critic step towards fixed targets.
    pub fn critic_step(&mut self, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
        let (grads, loss) = self.critic_gradient(batch, targets)?;
        self.critic_opt.step(&mut self.critic, &grads)?;
        Ok(loss)
    }

    /// Critic regression, policy ascent, then target tracking.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<StepStats> {
        let targets = self.td_targets(batch)?;
        let critic_loss = self.critic_step(batch, &targets)?;
        if !critic_loss.is_finite() {
            return Err(Error::Diverged {
                episode: 0,
                step: 0,
                message: format!("critic loss is {critic_loss}"),
            });
        }
        let (mut grads, actor_objective) = self.actor_gradient(batch)?;
        if !actor_objective.is_finite() {
            return Err(Error::Diverged {
                episode: 0,
                step: 0,
                message: format!("actor objective is {actor_objective}"),
            });
        }
        // optimizers minimize
        grads.scale(-1.0);
        self.actor_opt.step(&mut self.actor, &grads)?;
        self.critic_target.soft_update(&self.critic, self.tau)?;
        self.actor_target.soft_update(&self.actor, self.tau)?;
        Ok(StepStats {
            critic_loss,
            actor_objective,
        })
    }
}
