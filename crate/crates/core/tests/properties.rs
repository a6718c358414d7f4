use proptest::prelude::*;
use rlfollow::agent::{
    action_to_acceleration, build_observation, ConstantController, Controller, LeaderView, Scene,
};
use rlfollow::harness::{compute_ttc, ou_leader, Histogram, MetricsReport, Trajectory};
use rlfollow::idm::{calibration_objective, idm_accel, IdmParams};
use rlfollow::rewards::{reward_follow, reward_free, AgentParams};
use rlfollow::sim::{run_episode, step_vehicle, EpisodeInit, SimConfig, VehicleState};
use rlfollow::stochastic::{generate_leader_profile, OuParams};

fn params() -> AgentParams {
    AgentParams::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reward_terms_stay_in_range(
        v in 0.0..30.0f64,
        v_l in 0.0..30.0f64,
        g in 0.01..400.0f64,
        jerk in -100.0..100.0f64,
    ) {
        let p = params();
        let f = reward_free(v, jerk, &p);
        prop_assert!((0.0..=1.0).contains(&f.r_speed));
        prop_assert!(f.r_jerk <= 0.0);
        prop_assert_eq!(f.total, f.r_speed + p.w_jerk * f.r_jerk);
        let r = reward_follow(v, v_l, g, jerk, &p).unwrap();
        prop_assert!((-1.0..=0.0).contains(&r.r_safe));
        prop_assert!((0.0..=1.0).contains(&r.r_gap));
        prop_assert!(r.r_jerk <= 0.0);
        prop_assert_eq!(r.total, r.r_safe + p.w_gap * r.r_gap + p.w_jerk * r.r_jerk);
    }

    #[test]
    fn gap_reward_falls_beyond_its_peak(v in 0.0..30.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let p = params();
        let g_opt = v * p.t_gap + p.g_min;
        let g_lim = v * p.t_lim + 2.0 * p.g_min;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        let g1 = g_opt + lo * (g_lim - g_opt);
        let g2 = g_opt + hi * (g_lim - g_opt);
        let r1 = reward_follow(v, v, g1, 0.0, &p).unwrap().r_gap;
        let r2 = reward_follow(v, v, g2, 0.0, &p).unwrap().r_gap;
        prop_assert!(r2 < r1 || (r1 == 0.0 && r2 == 0.0), "r({g1}) = {r1}, r({g2}) = {r2}");
    }

    #[test]
    fn vehicle_update_keeps_speed_and_order(
        x in -100.0..100.0f64,
        v in 0.0..40.0f64,
        a in -9.0..2.0f64,
    ) {
        let s = step_vehicle(VehicleState::new(x, v), a, 0.1).unwrap();
        prop_assert!(s.v >= 0.0);
        prop_assert!(s.x >= x);
        if a == 0.0 {
            prop_assert_eq!(s.x - x, v * 0.1);
        }
    }

    #[test]
    fn traces_never_reverse(seed in 0u64..10_000, accel in -9.0..2.0f64, gap in 5.0..150.0f64) {
        let p = params();
        let sim = SimConfig { episode_steps: 300, ..SimConfig::default() };
        let leader = ou_leader(300, None, seed, &p, &sim);
        let ctl = ConstantController(accel);
        let trace = run_episode(&leader, &[&ctl as &dyn Controller], &EpisodeInit::single(5.0, gap), &p, &sim).unwrap();
        for k in 0..2 {
            let states = trace.vehicle(k);
            prop_assert!(states.iter().all(|s| s.v >= 0.0));
            prop_assert!(states.windows(2).all(|w| w[1].x >= w[0].x));
        }
        // recorded states precede any overlap; a crash shows up as an early end
        prop_assert!(trace.gaps[0].iter().all(|&g| g > 0.0));
        prop_assert_eq!(trace.crashed(), trace.len() < 300);
        let report = MetricsReport::from_trace(&trace, None);
        prop_assert!(report.accel_variance.iter().all(|&v| v >= 0.0));
        let ttc = compute_ttc(&trace);
        prop_assert!(ttc.samples.iter().all(|s| s.ttc > 0.0));
        prop_assert_eq!(ttc.histogram.total(), ttc.samples.len());
    }

    #[test]
    fn clipped_leader_stays_in_range(seed in any::<u64>(), v0 in 0.0..16.6f64) {
        let p = OuParams::leader();
        let series = generate_leader_profile(&p, 2000, v0, seed);
        prop_assert!(series.iter().all(|v| (0.0..=16.6).contains(v)));
        prop_assert_eq!(series, generate_leader_profile(&p, 2000, v0, seed));
    }

    #[test]
    fn action_map_is_monotone(a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let p = params();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (x, y) = (action_to_acceleration(lo, &p), action_to_acceleration(hi, &p));
        prop_assert!(x <= y);
        prop_assert!((p.a_min..=p.a_max).contains(&x) && (p.a_min..=p.a_max).contains(&y));
    }

    #[test]
    fn observation_round_trips(v in 0.0..20.0f64, a in -9.0..2.0f64, v_l in 0.0..20.0f64, g in 0.1..200.0f64) {
        let p = params();
        let scene = Scene { v, a, leader: Some(LeaderView { v: v_l, gap: g }) };
        let obs = build_observation(&scene, &p, 200.0);
        let (v2, a2, dv2, g2) = obs.decode(&p, 200.0);
        prop_assert!((v2 - v).abs() < 1e-12);
        prop_assert!((a2 - a).abs() < 1e-12);
        prop_assert!((dv2 - (v_l - v)).abs() < 1e-12);
        prop_assert!((g2 - g).abs() < 1e-12);
    }

    #[test]
    fn idm_is_bounded_and_monotone_in_gap(v in 0.0..30.0f64, v_l in 0.0..30.0f64, g in 0.5..200.0f64) {
        let p = IdmParams::default();
        let a = idm_accel(v, v_l, g, &p).unwrap();
        prop_assert!(a <= p.a_max);
        prop_assert!(idm_accel(v, v_l, g + 0.5, &p).unwrap() >= a);
        if g < p.g_min {
            prop_assert!(idm_accel(v_l, v_l, g, &p).unwrap() < 0.0);
        }
    }

    #[test]
    fn histogram_conserves_mass(xs in proptest::collection::vec(-5.0..30.0f64, 0..200)) {
        let mut h = Histogram::ttc_default();
        for &x in &xs {
            h.add(x);
        }
        prop_assert_eq!(h.total(), xs.len());
    }
}

#[test]
fn constant_leader_advances_exactly() {
    let p = params();
    let sim = SimConfig {
        episode_steps: 50,
        ..SimConfig::default()
    };
    let leader = vec![7.25; 51];
    let ctl = ConstantController(0.0);
    let trace = run_episode(&leader, &[&ctl as &dyn Controller], &EpisodeInit::single(7.25, 30.0), &p, &sim).unwrap();
    let l = trace.vehicle(0);
    for (k, s) in l.iter().enumerate() {
        assert!((s.x - l[0].x - k as f64 * 7.25 * sim.dt).abs() < 1e-9);
    }
}

#[test]
fn calibration_objective_ignores_time_shift() {
    let n = 400;
    let leader: Vec<f64> = (0..n).map(|i| 10.0 + 3.0 * (i as f64 * 0.02).sin()).collect();
    let follower: Vec<f64> = leader.iter().map(|v| v * 0.98).collect();
    let gap: Vec<f64> = (0..n).map(|i| 20.0 + 2.0 * (i as f64 * 0.03).cos()).collect();
    let objective = |t0: f64| {
        let tr = Trajectory {
            dt: 0.1,
            t0,
            leader_speed: leader.clone(),
            follower_speed: vec![follower.clone()],
            gap: vec![gap.clone()],
        };
        let mut csv = Vec::new();
        tr.write(&mut csv).unwrap();
        let back = Trajectory::read(csv.as_slice()).unwrap();
        calibration_objective(&IdmParams::default(), &back.pair(0).unwrap(), true)
    };
    let base = objective(0.0);
    assert!(base.is_finite());
    for shift in [7.3, 1234.5] {
        assert!((objective(shift) - base).abs() <= 1e-9 * base.max(1.0), "shift {shift}");
    }
}

#[test]
fn composite_never_exceeds_either_part() {
    use rand::SeedableRng;
    use rlfollow::agent::{CompositeController, PolicyController, PolicyKind};
    use rlfollow::nn::Mlp;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let p = params();
    let free = PolicyController::new(PolicyKind::Free, Mlp::actor(2, &[16], &mut rng), p, 200.0).unwrap();
    let follow = PolicyController::new(PolicyKind::Follow, Mlp::actor(4, &[32, 32], &mut rng), p, 200.0).unwrap();
    let c = CompositeController::new(free, follow).unwrap();
    for v in [0.0, 5.0, 15.0] {
        for g in [1.0, 20.0, 300.0] {
            let scene = Scene {
                v,
                a: 0.0,
                leader: Some(LeaderView { v: 3.0, gap: g }),
            };
            let (f, h) = c.parts(&scene);
            assert!(c.accel(&scene) <= f && c.accel(&scene) <= h);
        }
    }
}
