//! Checks shared by the integration tests and the acceptance runner.
//! Each returns a [`Check`] carrying the measured value next to its limit.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rlfollow::agent::PolicyKind;
use rlfollow::ddpg::{td_targets, DdpgConfig, ReplayBuffer, Trainer, Transition};
use rlfollow::idm::{equilibrium_gap, idm_accel, IdmParams};
use rlfollow::nn::{ForwardCache, Mlp};
use rlfollow::rewards::{reward_follow, reward_free, AgentParams, GapShape};
use rlfollow::sim::SimConfig;
use rlfollow::stochastic::{generate_leader_profile, ou_step, OuParams};

pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag}  {}  {}", self.name, self.detail)
    }

    pub fn assert(&self) {
        assert!(self.passed, "{}", self.line());
    }
}

// Reward oracle -----------------------------------------------------------

pub const REWARD_TOL: f64 = 1e-12;

/// Tangent point in closed form. With `g = g_opt + z·g_var` the defining
/// residual vanishes where `z·(L − z) = 1`, `L = (g_lim − g_opt)/g_var`;
/// the knot is the smaller root.
fn knot_closed_form(g_opt: f64, g_var: f64, g_lim: f64) -> f64 {
    let l = (g_lim - g_opt) / g_var;
    let z = 2.0 / (l + (l * l - 4.0).sqrt());
    g_opt + z * g_var
}

/// Gap reward written out independently of the library.
pub fn gap_reward_reference(v: f64, g: f64, p: &AgentParams) -> f64 {
    let g_opt = v * p.t_gap + p.g_min;
    let g_var = 0.5 * g_opt;
    let g_lim = v * p.t_lim + 2.0 * p.g_min;
    let g_star = knot_closed_form(g_opt, g_var, g_lim);
    let gauss = |g: f64| (-0.5 * ((g - g_opt) / g_var).powi(2)).exp();
    if g < g_star {
        gauss(g)
    } else {
        (gauss(g_star) * (g_lim - g) / (g_lim - g_star)).max(0.0)
    }
}

pub fn follow_reference(v: f64, v_l: f64, g: f64, jerk: f64, p: &AgentParams) -> f64 {
    let b_kin = if v > v_l { (v - v_l).powi(2) / g } else { 0.0 };
    let r_safe = if b_kin > p.b_comf {
        -((b_kin - p.b_comf) / -p.a_min).tanh()
    } else {
        0.0
    };
    r_safe + p.w_gap * gap_reward_reference(v, g, p) - p.w_jerk * (jerk / p.j_comf).powi(2)
}

pub fn free_reference(v: f64, jerk: f64, p: &AgentParams) -> f64 {
    let r_speed = if v <= p.v_des { v / p.v_des } else { 0.0 };
    r_speed - p.w_jerk * (jerk / p.j_comf).powi(2)
}

/// 10 free-driving and 40 car-following points covering every branch
/// boundary: `v = v_des`, `b_kin = b_comf`, `v = v_l`, `g = g_opt`,
/// `g = g*` and `g = g_lim`.
pub fn reward_grid() -> Check {
    let p = AgentParams::default();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut at = String::new();
    let mut record = |got: f64, want: f64, what: String| {
        let err = (got - want).abs();
        count += 1;
        if !(err <= worst) {
            worst = err;
            at = what;
        }
    };
    // hand-computed anchors
    record(reward_free(15.0, 0.0, &p).total, 1.0, "free(15,0)".into());
    record(reward_free(7.5, 2.0, &p).total, 0.496, "free(7.5,2)".into());
    record(reward_free(15.01, 0.0, &p).total, 0.0, "free(15.01,0)".into());
    record(reward_follow(10.0, 10.0, 17.0, 0.0, &p).unwrap().total, 0.5, "follow(10,10,17,0)".into());
    record(
        reward_follow(20.0, 0.0, 20.0, 0.0, &p).unwrap().total,
        -(2.0f64.tanh()) + 0.5 * gap_reward_reference(20.0, 20.0, &p),
        "follow(20,0,20,0)".into(),
    );
    for (v, jerk) in [(0.0, 0.0), (3.0, -1.0), (14.999, 0.5), (20.0, 4.0), (15.0, -2.0), (10.0, 10.0), (1e-9, 0.0)] {
        record(reward_free(v, jerk, &p).total, free_reference(v, jerk, &p), format!("free({v},{jerk})"));
    }
    for v in [0.0, 4.0, 10.0, 15.0] {
        let shape = GapShape::new(v, &p).unwrap();
        let gaps = [
            0.5 * shape.g_opt,
            shape.g_opt,
            shape.g_star - 1e-6,
            shape.g_star,
            shape.g_star + 1e-6,
            0.5 * (shape.g_star + shape.g_lim),
            shape.g_lim,
            2.0 * shape.g_lim,
        ];
        for g in gaps {
            record(
                reward_follow(v, v, g, 0.0, &p).unwrap().total,
                follow_reference(v, v, g, 0.0, &p),
                format!("follow({v},{v},{g},0)"),
            );
        }
        // b_kin exactly at, and just above, b_comf
        if v > 0.0 {
            let g = 10.0;
            let v_l = v - (p.b_comf * g).sqrt();
            for (vl, jerk) in [(v_l, 0.0), (v_l - 0.1, 1.0)] {
                record(
                    reward_follow(v, vl, g, jerk, &p).unwrap().total,
                    follow_reference(v, vl, g, jerk, &p),
                    format!("follow({v},{vl},{g},{jerk})"),
                );
            }
        }
    }
    for (v, vl, g, jerk) in [(5.0, 8.0, 3.0, -2.0), (12.0, 2.0, 6.0, 0.0), (0.0, 3.0, 1.0, 0.0), (30.0, 0.0, 1.0, 0.0)] {
        record(
            reward_follow(v, vl, g, jerk, &p).unwrap().total,
            follow_reference(v, vl, g, jerk, &p),
            format!("follow({v},{vl},{g},{jerk})"),
        );
    }
    Check::new(
        "reward grid",
        count >= 50 && worst <= REWARD_TOL,
        format!("{count} points, max |error| = {worst:.2e} at {at} (limit {REWARD_TOL:.0e})"),
    )
}

pub const KNOT_RESIDUAL_TOL: f64 = 1e-8;
pub const KNOT_DERIVATIVE_TOL: f64 = 1e-4;

/// Defining residual and the one-sided derivatives at `g*`, analytic and
/// by finite differences with `h = 1e-4` m.
pub fn gap_knot() -> Check {
    let p = AgentParams::default();
    let mut worst_res: f64 = 0.0;
    let mut worst_der: f64 = 0.0;
    let mut speeds: Vec<f64> = vec![0.1, 0.5];
    speeds.extend((1..=30).map(f64::from));
    for &v in &speeds {
        let s = GapShape::new(v, &p).unwrap();
        let z = (s.g_star - s.g_opt) / s.g_var;
        let gauss = (-0.5 * z * z).exp();
        let slope = -z / s.g_var * gauss;
        worst_res = worst_res.max((slope * (s.g_lim - s.g_star) + gauss).abs());
        let (left, right) = s.derivatives(s.g_star);
        worst_der = worst_der.max((left - right).abs());
        let h = 1e-4;
        let fd_left = (s.value(s.g_star) - s.value(s.g_star - h)) / h;
        let fd_right = (s.value(s.g_star + h) - s.value(s.g_star)) / h;
        worst_der = worst_der.max((fd_left - fd_right).abs());
    }
    Check::new(
        "gap knot",
        worst_res < KNOT_RESIDUAL_TOL && worst_der < KNOT_DERIVATIVE_TOL,
        format!(
            "v in 0.1..30: max residual {worst_res:.2e} (limit {KNOT_RESIDUAL_TOL:.0e}), \
             max derivative mismatch {worst_der:.2e} (limit {KNOT_DERIVATIVE_TOL:.0e})"
        ),
    )
}

// IDM -----------------------------------------------------------------------

pub const IDM_IDENTITY_TOL: f64 = 1e-9;
pub const IDM_ROOT_TOL: f64 = 1e-6;

/// Root of `g ↦ idm_accel(v, v, g)` by plain bisection.
pub fn brute_force_equilibrium(v: f64, p: &IdmParams) -> f64 {
    let (mut lo, mut hi) = (1e-6, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if idm_accel(v, v, mid, p).unwrap() < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn idm_equilibrium() -> Check {
    let p = IdmParams::default();
    let worst = (1..=30)
        .map(|v| {
            let v = f64::from(v);
            idm_accel(v, v, equilibrium_gap(v, &p).unwrap(), &p).unwrap().abs()
        })
        .fold(0.0, f64::max);
    let closed = equilibrium_gap(10.0, &p).unwrap();
    let brute = brute_force_equilibrium(10.0, &p);
    Check::new(
        "IDM equilibrium",
        worst < IDM_IDENTITY_TOL && (closed - brute).abs() < IDM_ROOT_TOL,
        format!(
            "max |a(v,v,g_e)| = {worst:.2e} (limit {IDM_IDENTITY_TOL:.0e}); g_e(10) = {closed:.9} vs \
             bisection {brute:.9}"
        ),
    )
}

// Networks ----------------------------------------------------------------

pub const GRAD_REL_TOL: f64 = 1e-4;
pub const NETS_PER_ARCH: usize = 100;
const FD_STEP: f64 = 1e-6;
/// Inputs that put a ReLU this close to its kink are redrawn.
const KINK_MARGIN: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn near_kink(net: &Mlp, input: &[f64]) -> bool {
    let mut x = input.to_vec();
    for layer in &net.layers[..net.layers.len() - 1] {
        let z: Vec<f64> = layer
            .weights
            .chunks_exact(layer.inputs)
            .zip(&layer.biases)
            .map(|(row, b)| row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect();
        if z.iter().any(|v| v.abs() < KINK_MARGIN) {
            return true;
        }
        x = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    false
}

/// Largest relative error of one net's parameter and input gradients.
pub fn gradient_error(net: &Mlp, input: &[f64], upstream: f64) -> f64 {
    let (grads, input_grad) = net.gradients(input, &[upstream]).unwrap();
    let eval = |n: &Mlp, x: &[f64]| upstream * n.forward(x).unwrap()[0];
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let mut analytic = grads.values();
    for l in 0..net.layers.len() {
        for bias in [false, true] {
            let n = if bias { net.layers[l].biases.len() } else { net.layers[l].weights.len() };
            for i in 0..n {
                let slot = |m: &mut Mlp, value: f64| {
                    let layer = &mut m.layers[l];
                    if bias {
                        layer.biases[i] = value;
                    } else {
                        layer.weights[i] = value;
                    }
                };
                let layer = &net.layers[l];
                let original = if bias { layer.biases[i] } else { layer.weights[i] };
                slot(&mut probe, original + FD_STEP);
                let up = eval(&probe, input);
                slot(&mut probe, original - FD_STEP);
                let down = eval(&probe, input);
                slot(&mut probe, original);
                let want = *analytic.next().unwrap();
                worst = worst.max(rel_err(want, (up - down) / (2.0 * FD_STEP)));
            }
        }
    }
    let mut x = input.to_vec();
    for (i, want) in input_grad.iter().enumerate() {
        let original = x[i];
        x[i] = original + FD_STEP;
        let up = eval(net, &x);
        x[i] = original - FD_STEP;
        let down = eval(net, &x);
        x[i] = original;
        worst = worst.max(rel_err(*want, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Actor (tanh head) and critic (linear head) shapes with one or two
/// hidden layers of width 4, 16 or 32, each checked on fresh random nets.
pub fn gradient_checks(nets_per_arch: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    let mut worst_arch = String::new();
    let mut archs = 0;
    let mut nets = 0;
    for depth in [1usize, 2] {
        for width in [4usize, 16, 32] {
            for head in ["actor", "critic"] {
                archs += 1;
                let hidden = vec![width; depth];
                for _ in 0..nets_per_arch {
                    let net = match head {
                        "actor" => {
                            // a wider head range than the 3e-3 default keeps tanh off its linear part
                            let mut n = Mlp::actor(4, &hidden, &mut rng);
                            for w in n.layers.last_mut().unwrap().weights.iter_mut() {
                                *w = rng.random_range(-1.0..1.0);
                            }
                            n
                        }
                        _ => Mlp::critic(4, &hidden, &mut rng),
                    };
                    let input = loop {
                        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                        if !near_kink(&net, &x) {
                            break x;
                        }
                    };
                    let upstream = rng.random_range(0.5..2.0);
                    let e = gradient_error(&net, &input, upstream);
                    nets += 1;
                    if e > worst {
                        worst = e;
                        worst_arch = format!("{head} {hidden:?}");
                    }
                }
            }
        }
    }
    Check::new(
        "network gradients",
        worst < GRAD_REL_TOL && nets_per_arch >= NETS_PER_ARCH,
        format!("{nets} nets over {archs} architectures, max relative error {worst:.2e} ({worst_arch}; limit {GRAD_REL_TOL:.0e})"),
    )
}

// OU process ----------------------------------------------------------------

pub const OU_STEPS: usize = 1_000_000;
pub const OU_REL_TOL: f64 = 0.05;

pub fn ou_statistics() -> Check {
    let p = OuParams {
        clip: None,
        ..OuParams::leader()
    };
    let series = generate_leader_profile(&p, OU_STEPS, p.mu, 2024);
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let std = (series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mean_err = (mean / p.mu - 1.0).abs();
    let std_err = (std / p.stationary_std() - 1.0).abs();
    Check::new(
        "OU stationary moments",
        mean_err < OU_REL_TOL && std_err < OU_REL_TOL,
        format!(
            "{OU_STEPS} steps: mean {mean:.3} vs {:.3} ({:.1}%), std {std:.3} vs {:.3} ({:.1}%), limit {:.0}%",
            p.mu,
            100.0 * mean_err,
            p.stationary_std(),
            100.0 * std_err,
            100.0 * OU_REL_TOL
        ),
    )
}

/// With `σ = 0` the process is the bare recurrence `x ← x + θ(μ − x)Δt`.
pub fn ou_deterministic() -> Check {
    let p = OuParams {
        sigma: 0.0,
        clip: None,
        ..OuParams::leader()
    };
    let series = generate_leader_profile(&p, 2000, 0.0, 5);
    let mut x = 0.0;
    let mut exact = true;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (i, &got) in series.iter().enumerate() {
        if i > 0 {
            x += p.theta * (p.mu - x) * p.dt;
        }
        exact &= got == x;
        let noise: f64 = rng.sample(StandardNormal);
        exact &= ou_step(got, &p, noise) == got + p.theta * (p.mu - got) * p.dt;
    }
    Check::new(
        "OU with zero noise",
        exact,
        format!("2000 steps {} the deterministic recurrence", if exact { "match" } else { "deviate from" }),
    )
}

// DDPG mechanics ------------------------------------------------------------

fn transition(rng: &mut ChaCha8Rng, terminal: bool) -> Transition {
    Transition {
        s: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        a: rng.random_range(-1.0..1.0),
        r: rng.random_range(-1.0..1.0),
        s_next: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        terminal,
    }
}

pub fn soft_update_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let main = Mlp::critic(4, &[32, 32], &mut rng);
    let start = Mlp::critic(4, &[32, 32], &mut rng);
    let mut keep = start.clone();
    keep.soft_update(&main, 0.0).unwrap();
    let mut copy = start.clone();
    copy.soft_update(&main, 1.0).unwrap();
    let ok = keep == start && copy == main;
    Check::new(
        "soft update tau 0 and 1",
        ok,
        format!("tau=0 keeps target: {}, tau=1 copies main: {}", keep == start, copy == main),
    )
}

pub fn td_target_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let actor = Mlp::actor(4, &[32, 32], &mut rng);
    let critic = Mlp::critic(4, &[32, 32], &mut rng);
    let batch: Vec<Transition> = (0..64).map(|i| transition(&mut rng, i % 3 == 0)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let zero = td_targets(&refs, &critic, &actor, 0.0).unwrap();
    let gamma_zero = zero.iter().zip(&batch).all(|(y, t)| *y == t.r);
    let full = td_targets(&refs, &critic, &actor, 0.95).unwrap();
    let mut cache = ForwardCache::default();
    let mut masked = true;
    for (y, t) in full.iter().zip(&batch) {
        if t.terminal {
            masked &= *y == t.r;
        } else {
            let a = actor.forward_cached(&t.s_next, &mut cache).unwrap()[0];
            let mut input = t.s_next.clone();
            input.push(a);
            let q = critic.forward(&input).unwrap()[0];
            masked &= (*y - (t.r + 0.95 * q)).abs() < 1e-12;
        }
    }
    Check::new(
        "TD targets",
        gamma_zero && masked,
        format!("gamma=0 gives rewards: {gamma_zero}; terminal transitions skip bootstrap: {masked}"),
    )
}

pub fn buffer_fifo() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut buf = ReplayBuffer::new(100);
    let all: Vec<Transition> = (0..250).map(|_| transition(&mut rng, false)).collect();
    for t in &all {
        buf.push(t.clone());
    }
    let kept: Vec<&Transition> = buf.iter().collect();
    let ok = buf.len() == 100 && kept.iter().zip(&all[150..]).all(|(a, b)| *a == b);
    Check::new(
        "replay buffer FIFO",
        ok,
        format!("capacity 100 after 250 pushes holds {} items, oldest-first = last 100 pushed: {ok}", buf.len()),
    )
}

/// Two runs with the same seed and no exploration noise.
pub fn bit_identical_training() -> Check {
    let cfg = DdpgConfig {
        episodes: 3,
        steps_per_episode: 120,
        ou_sigma: 0.0,
        seed: 42,
        ..DdpgConfig::default()
    };
    let run = || {
        let mut t = Trainer::new(PolicyKind::Follow, AgentParams::default(), SimConfig::default(), cfg.clone()).unwrap();
        for _ in 0..cfg.episodes {
            t.run_episode().unwrap();
        }
        (t.snapshot(), t.curve().to_vec())
    };
    let (a, curve_a) = run();
    let (b, curve_b) = run();
    let ok = a == b && curve_a == curve_b;
    Check::new(
        "bit-identical training",
        ok,
        format!("seed 42, sigma 0, 3 episodes: checkpoints and reward curves identical: {ok}"),
    )
}

// Calibration self-consistency ------------------------------------------

pub const CALIB_PARAM_REL_TOL: f64 = 0.05;
pub const CALIB_SSE_TOL: f64 = 1e-4;

/// Parameters of the synthetic reference driver.
pub fn reference_driver() -> IdmParams {
    IdmParams {
        v_des: 15.0,
        t_gap: 1.2,
        g_min: 2.5,
        a_max: 1.5,
        b_comf: 2.0,
    }
}

/// Refits an IDM driver with known parameters following an OU leader,
/// starting from the default guess. Returns the recovery check and the
/// fitted SSE next to the SSE of the starting guess.
pub fn calibration_recovery() -> (Check, f64, f64) {
    use rlfollow::harness::{idm_reference, ou_leader};
    use rlfollow::idm::{calibrate, calibration_objective, CalibrationOptions};
    use rlfollow::sim::EpisodeInit;

    let truth = reference_driver();
    let p = AgentParams::default();
    let sim = SimConfig::default();
    let leader = ou_leader(3000, None, 17, &p, &sim);
    let data = idm_reference(&truth, &leader, &EpisodeInit::single(leader[0], 40.0), &p, &sim)
        .expect("reference driver stays collision free")
        .pair(0)
        .unwrap();
    let init = IdmParams::default();
    let fit = calibrate(&data, &init, &CalibrationOptions::default()).unwrap();
    let uncal = calibration_objective(&init, &data, true);
    let rel: Vec<f64> = truth
        .to_vec()
        .iter()
        .zip(fit.params.to_vec())
        .map(|(t, f)| (f - t).abs() / t)
        .collect();
    let worst = rel.iter().cloned().fold(0.0, f64::max);
    let passed = worst <= CALIB_PARAM_REL_TOL && fit.sse < CALIB_SSE_TOL && fit.sse < uncal;
    let check = Check::new(
        "calibration recovers a known IDM driver",
        passed,
        format!(
            "max rel err {worst:.2e} (<= {CALIB_PARAM_REL_TOL}), SSE {:.2e} (< {CALIB_SSE_TOL:.0e}), uncalibrated SSE {uncal:.3e}",
            fit.sse
        ),
    );
    (check, fit.sse, uncal)
}
