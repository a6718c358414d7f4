//! Ornstein–Uhlenbeck processes and seeding.
//!
//! The same Euler–Maruyama recurrence
//! `x' = x + θ(μ − x)Δt + σ·ΔW`, `ΔW ~ N(0, Δt)`
//! drives both the synthetic leader speed and the exploration noise added
//! to the actor output during training.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuParams {
    /// Mean-reversion rate, 1/s.
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Optional `[lo, hi]` bounds applied to the output.
    #[serde(default)]
    pub clip: Option<(f64, f64)>,
}

impl OuParams {
    /// Leader speed process: θ = 0.132 1/s, μ = 7.5 m/s, σ = 3.847, clipped
    /// to [0, 16.6] m/s.
    pub fn leader() -> Self {
        Self {
            theta: 0.132,
            mu: 7.5,
            sigma: 3.847,
            dt: 0.1,
            clip: Some((0.0, 16.6)),
        }
    }

    /// Zero-reverting exploration noise: θ = 0.15, σ = 0.2.
    pub fn exploration() -> Self {
        Self {
            theta: 0.15,
            mu: 0.0,
            sigma: 0.2,
            dt: 0.1,
            clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.theta, self.mu, self.sigma, self.dt]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("OU parameters must be finite".into()));
        }
        if self.theta < 0.0 || self.sigma < 0.0 {
            return Err(Error::Config("OU theta and sigma must be >= 0".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::Config("OU dt must be > 0".into()));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::Config(format!("OU clip bounds [{lo}, {hi}] are empty")));
            }
        }
        Ok(())
    }

    /// Stationary standard deviation of the continuous process, `σ/√(2θ)`.
    pub fn stationary_std(&self) -> f64 {
        self.sigma / (2.0 * self.theta).sqrt()
    }

    fn apply_clip(&self, x: f64) -> f64 {
        match self.clip {
            Some((lo, hi)) => x.clamp(lo, hi),
            None => x,
        }
    }
}

/// Configurable leader speed process; its step follows the simulation `dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeaderProcess {
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for LeaderProcess {
    fn default() -> Self {
        let p = OuParams::leader();
        let (v_min, v_max) = p.clip.unwrap_or((0.0, f64::INFINITY));
        Self {
            theta: p.theta,
            mu: p.mu,
            sigma: p.sigma,
            v_min,
            v_max,
        }
    }
}

impl LeaderProcess {
    pub fn to_ou(&self, dt: f64) -> OuParams {
        OuParams {
            theta: self.theta,
            mu: self.mu,
            sigma: self.sigma,
            dt,
            clip: Some((self.v_min, self.v_max)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_ou(0.1)
            .validate()
            .map_err(|e| Error::Config(format!("sim.leader: {e}")))?;
        if self.v_min < 0.0 {
            return Err(Error::Config("sim.leader.v_min must be >= 0".into()));
        }
        Ok(())
    }
}

/// One Euler–Maruyama step driven by a standard normal draw `noise`.
pub fn ou_step(x: f64, p: &OuParams, noise: f64) -> f64 {
    let next = x + p.theta * (p.mu - x) * p.dt + p.sigma * p.dt.sqrt() * noise;
    p.apply_clip(next)
}

/// Leader speed series of length `steps` starting at `v0`.
///
/// The recurrence runs unclipped over the whole episode and the finished
/// series is clipped afterwards, so a leader pushed below zero stands still
/// until the latent process recovers.
pub fn generate_leader_profile(p: &OuParams, steps: usize, v0: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    leader_profile_with(p, steps, v0, &mut rng)
}

pub fn leader_profile_with<R: Rng + ?Sized>(
    p: &OuParams,
    steps: usize,
    v0: f64,
    rng: &mut R,
) -> Vec<f64> {
    let unclipped = OuParams { clip: None, ..*p };
    let mut out = Vec::with_capacity(steps);
    let mut x = v0;
    for i in 0..steps {
        if i > 0 {
            x = ou_step(x, &unclipped, rng.sample(StandardNormal));
        }
        out.push(p.apply_clip(x));
    }
    out
}

/// Stateful zero-mean OU noise living in the actor's normalized output
/// space.
#[derive(Clone, Debug)]
pub struct ExplorationNoise {
    params: OuParams,
    state: f64,
}

impl ExplorationNoise {
    pub fn new(params: OuParams) -> Self {
        Self { params, state: 0.0 }
    }

    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.state = exploration_noise_step(self.state, &self.params, rng.sample(StandardNormal));
        self.state
    }
}

/// Exploration-noise recurrence: an OU step forced to revert to zero.
pub fn exploration_noise_step(x: f64, p: &OuParams, noise: f64) -> f64 {
    let p = OuParams {
        mu: 0.0,
        clip: None,
        ..*p
    };
    ou_step(x, &p, noise)
}

/// Purpose-specific random streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Leader = 1,
    Exploration = 2,
    InitConditions = 3,
    Minibatch = 4,
    Weights = 5,
    Evaluation = 6,
}

pub fn stream_rng(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream as u64);
    rng
}

/// Writes a speed series as `t,v` CSV.
pub fn write_profile_csv<W: Write>(out: W, dt: f64, speeds: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "v"])?;
    for (i, v) in speeds.iter().enumerate() {
        w.write_record([format!("{}", i as f64 * dt), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_without_noise() {
        let p = OuParams {
            sigma: 0.0,
            ..OuParams::leader()
        };
        assert_eq!(ou_step(7.5, &p, 1.3), 7.5);
    }

    #[test]
    fn single_drift_step() {
        let p = OuParams {
            sigma: 0.0,
            clip: None,
            ..OuParams::leader()
        };
        assert!((ou_step(0.0, &p, 0.0) - 0.099).abs() < 1e-15);
    }

    #[test]
    fn clip_bounds_hold() {
        let p = OuParams::leader();
        for &z in &[-50.0, -3.0, 0.0, 3.0, 50.0] {
            for &x in &[0.0, 8.0, 16.6] {
                let y = ou_step(x, &p, z);
                assert!((0.0..=16.6).contains(&y));
            }
        }
    }

    #[test]
    fn deterministic_relaxation() {
        let p = OuParams {
            sigma: 0.0,
            ..OuParams::leader()
        };
        let s = generate_leader_profile(&p, 300, 16.6, 1);
        assert_eq!(s.len(), 300);
        for w in s.windows(2) {
            assert!(w[1] < w[0]);
            assert!(w[1] > 7.5);
        }
        // exact recurrence
        let mut x = 16.6;
        for v in &s[1..] {
            x = x + 0.132 * (7.5 - x) * 0.1;
            assert_eq!(*v, x);
        }
    }

    #[test]
    fn same_seed_same_series() {
        let p = OuParams::leader();
        assert_eq!(
            generate_leader_profile(&p, 1000, 5.0, 42),
            generate_leader_profile(&p, 1000, 5.0, 42)
        );
        assert_ne!(
            generate_leader_profile(&p, 1000, 5.0, 42),
            generate_leader_profile(&p, 1000, 5.0, 43)
        );
    }

    #[test]
    fn exploration_decays_geometrically() {
        let p = OuParams {
            sigma: 0.0,
            ..OuParams::exploration()
        };
        let mut x = 1.0;
        for k in 1..=20 {
            x = exploration_noise_step(x, &p, 0.7);
            let expected = (1.0f64 - 0.15 * 0.1).powi(k);
            assert!((x - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn noise_resets_and_replays() {
        let mut rng = stream_rng(9, Stream::Exploration);
        let mut n = ExplorationNoise::new(OuParams::exploration());
        let a: Vec<f64> = (0..50).map(|_| n.sample(&mut rng)).collect();
        n.reset();
        assert_eq!(n.state(), 0.0);
        let mut rng = stream_rng(9, Stream::Exploration);
        let b: Vec<f64> = (0..50).map(|_| n.sample(&mut rng)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_distinct() {
        let a: u64 = stream_rng(1, Stream::Leader).random();
        let b: u64 = stream_rng(1, Stream::Exploration).random();
        assert_ne!(a, b);
    }

    #[test]
    fn profile_csv_has_header() {
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, 0.1, &[1.0, 2.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,v\n0,1\n0.1,2"));
    }
}
