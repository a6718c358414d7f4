//! Observations, action mapping and controllers.
//!
//! Every controller (RL policy, min-arbitrated composite, IDM) implements
//! [`Controller`], so the harness drives them through the same code path.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, Mlp};
use crate::rewards::AgentParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Free,
    Follow,
}

impl PolicyKind {
    pub fn obs_dim(self) -> usize {
        match self {
            PolicyKind::Free => 2,
            PolicyKind::Follow => 4,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyKind::Free => "free",
            PolicyKind::Follow => "follow",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderView {
    pub v: f64,
    /// Raw bumper-to-bumper gap, m.
    pub gap: f64,
}

/// What a follower perceives at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scene {
    pub v: f64,
    /// Acceleration commanded at the previous step.
    pub a: f64,
    pub leader: Option<LeaderView>,
}

impl Scene {
    pub fn leaderless(v: f64, a: f64) -> Self {
        Self { v, a, leader: None }
    }
}

/// Normalized inputs of both policies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub free: [f64; 2],
    pub follow: [f64; 4],
}

impl Observation {
    pub fn for_kind(&self, kind: PolicyKind) -> &[f64] {
        match kind {
            PolicyKind::Free => &self.free,
            PolicyKind::Follow => &self.follow,
        }
    }

    /// Recovers `(v, a, v_l − v, g)` from the follow observation.
    pub fn decode(&self, p: &AgentParams, g_max: f64) -> (f64, f64, f64, f64) {
        let [v, a, dv, g] = self.follow;
        (
            v * p.v_des,
            a * (p.a_max - p.a_min) + p.a_min,
            dv * p.v_des,
            g * g_max,
        )
    }
}

/// Normalized observation of a scene.
///
/// Without a leader, or with the leader beyond `g_max`, the gap component
/// saturates at 1 and the relative-speed component is 0.
pub fn build_observation(scene: &Scene, p: &AgentParams, g_max: f64) -> Observation {
    let v_n = scene.v / p.v_des;
    let a_n = (scene.a - p.a_min) / (p.a_max - p.a_min);
    let (dv_n, g_n) = match scene.leader {
        Some(l) if l.gap <= g_max => ((l.v - scene.v) / p.v_des, l.gap / g_max),
        _ => (0.0, 1.0),
    };
    Observation {
        free: [v_n, a_n],
        follow: [v_n, a_n, dv_n, g_n],
    }
}

/// Maps a `tanh` output in [−1, 1] onto the acceleration range:
/// `min(|a_min|·a, a_max)`.
pub fn action_to_acceleration(a_norm: f64, p: &AgentParams) -> f64 {
    (p.a_min.abs() * a_norm.clamp(-1.0, 1.0)).min(p.a_max)
}

/// Anything that turns a scene into a commanded acceleration.
pub trait Controller: Send + Sync {
    fn accel(&self, scene: &Scene) -> f64;

    fn label(&self) -> String;

    /// Checkpoint identifiers backing this controller, for provenance.
    fn ids(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Fixed acceleration; handy in tests and as a trivial baseline.
#[derive(Clone, Copy, Debug)]
pub struct ConstantController(pub f64);

impl Controller for ConstantController {
    fn accel(&self, _scene: &Scene) -> f64 {
        self.0
    }

    fn label(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// A single trained actor.
#[derive(Clone, Debug)]
pub struct PolicyController {
    pub kind: PolicyKind,
    pub actor: Mlp,
    pub params: AgentParams,
    pub g_max: f64,
    pub id: String,
}

impl PolicyController {
    pub fn new(kind: PolicyKind, actor: Mlp, params: AgentParams, g_max: f64) -> Result<Self> {
        if actor.input_dim() != kind.obs_dim() || actor.output_dim() != 1 {
            return Err(Error::Config(format!(
                "{kind} actor must map {} inputs to 1 output, has {:?}",
                kind.obs_dim(),
                actor.dims()
            )));
        }
        Ok(Self {
            kind,
            actor,
            params,
            g_max,
            id: String::new(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut ctl = Self::new(ckpt.kind, ckpt.actor.clone(), ckpt.agent, ckpt.g_max)?;
        ctl.id = ckpt.id();
        Ok(ctl)
    }

    /// Raw actor output in [−1, 1].
    pub fn action(&self, obs: &Observation) -> f64 {
        let mut cache = ForwardCache::default();
        match self.actor.forward_cached(obs.for_kind(self.kind), &mut cache) {
            Ok(out) => out[0],
            // dimensions are checked in `new`
            Err(_) => 0.0,
        }
    }
}

impl Controller for PolicyController {
    fn accel(&self, scene: &Scene) -> f64 {
        let obs = build_observation(scene, &self.params, self.g_max);
        action_to_acceleration(self.action(&obs), &self.params)
    }

    fn label(&self) -> String {
        format!("rl-{}", self.kind)
    }

    fn ids(&self) -> Vec<String> {
        vec![self.id.clone()]
    }
}

/// Free-driving and car-following policies arbitrated by `min`.
#[derive(Clone, Debug)]
pub struct CompositeController {
    pub free: PolicyController,
    pub follow: PolicyController,
}

impl CompositeController {
    pub fn new(free: PolicyController, follow: PolicyController) -> Result<Self> {
        if free.kind != PolicyKind::Free || follow.kind != PolicyKind::Follow {
            return Err(Error::Config(
                "composite needs one free and one follow policy".into(),
            ));
        }
        Ok(Self { free, follow })
    }

    pub fn from_checkpoints(free: &Checkpoint, follow: &Checkpoint) -> Result<Self> {
        Self::new(
            PolicyController::from_checkpoint(free)?,
            PolicyController::from_checkpoint(follow)?,
        )
    }

    /// Both constituent accelerations, `(free, follow)`.
    pub fn parts(&self, scene: &Scene) -> (f64, f64) {
        (self.free.accel(scene), self.follow.accel(scene))
    }
}

/// `min` arbitration of two commanded accelerations.
pub fn composite_accel(free: &PolicyController, follow: &PolicyController, scene: &Scene) -> f64 {
    free.accel(scene).min(follow.accel(scene))
}

impl Controller for CompositeController {
    fn accel(&self, scene: &Scene) -> f64 {
        composite_accel(&self.free, &self.follow, scene)
    }

    fn label(&self) -> String {
        "rl-composite".into()
    }

    fn ids(&self) -> Vec<String> {
        vec![self.free.id.clone(), self.follow.id.clone()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn p() -> AgentParams {
        AgentParams::default()
    }

    fn constant_actor(kind: PolicyKind, out: f64) -> PolicyController {
        let mut net = Mlp::zeros(&[kind.obs_dim(), 1], Activation::Relu, Activation::Tanh);
        net.layers[0].biases[0] = out.atanh();
        PolicyController::new(kind, net, p(), 200.0).unwrap()
    }

    #[test]
    fn free_observation_examples() {
        let o = build_observation(&Scene::leaderless(15.0, 0.0), &p(), 200.0);
        assert_eq!(o.free[0], 1.0);
        assert!((o.free[1] - 9.0 / 11.0).abs() < 1e-15);
        let o = build_observation(&Scene::leaderless(0.0, -9.0), &p(), 200.0);
        assert_eq!(o.free, [0.0, 0.0]);
    }

    #[test]
    fn leaderless_follow_observation() {
        let o = build_observation(&Scene::leaderless(10.0, 1.0), &p(), 200.0);
        assert_eq!(o.follow[2], 0.0);
        assert_eq!(o.follow[3], 1.0);
        let far = Scene {
            v: 10.0,
            a: 0.0,
            leader: Some(LeaderView { v: 3.0, gap: 250.0 }),
        };
        let o = build_observation(&far, &p(), 200.0);
        assert_eq!(&o.follow[2..], &[0.0, 1.0]);
    }

    #[test]
    fn action_mapping_examples() {
        assert_eq!(action_to_acceleration(-1.0, &p()), -9.0);
        assert_eq!(action_to_acceleration(1.0, &p()), 2.0);
        assert_eq!(action_to_acceleration(0.0, &p()), 0.0);
        assert_eq!(action_to_acceleration(2.0 / 9.0, &p()), 2.0);
        assert_eq!(action_to_acceleration(0.1, &p()), 0.9);
    }

    #[test]
    fn composite_takes_the_minimum() {
        let free = constant_actor(PolicyKind::Free, 2.0 / 9.0);
        let follow = constant_actor(PolicyKind::Follow, -3.0 / 9.0);
        let c = CompositeController::new(free, follow).unwrap();
        let scene = Scene::leaderless(5.0, 0.0);
        let (f, g) = c.parts(&scene);
        assert!((f - 2.0).abs() < 1e-12);
        assert!((g + 3.0).abs() < 1e-12);
        assert!((c.accel(&scene) + 3.0).abs() < 1e-12);

        let same = CompositeController::new(
            constant_actor(PolicyKind::Free, 0.1),
            constant_actor(PolicyKind::Follow, 0.1),
        )
        .unwrap();
        assert!((same.accel(&scene) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn composite_rejects_swapped_kinds() {
        let free = constant_actor(PolicyKind::Free, 0.0);
        let follow = constant_actor(PolicyKind::Follow, 0.0);
        assert!(CompositeController::new(follow, free).is_err());
    }

    #[test]
    fn wrong_actor_shape_is_rejected() {
        let net = Mlp::zeros(&[3, 1], Activation::Relu, Activation::Tanh);
        assert!(PolicyController::new(PolicyKind::Follow, net, p(), 200.0).is_err());
    }
}
