use std::path::{Path, PathBuf};

use rlfollow::agent::{CompositeController, Controller, PolicyKind};
use rlfollow::checkpoint::Checkpoint;
use rlfollow::ddpg::{train_policy_with, write_reward_curve};
use rlfollow::harness::{
    cross_compare, par_map, run_scenario, scenario_external_profile, scenario_platoon_ou,
    ttc_protocol, write_histogram_csv, write_trace_csv, write_variance_csv, InitSpec,
    LeaderSource, ScenarioSpec, Trajectory, TtcProtocolReport,
};
use rlfollow::idm::{calibrate, CalibrationResult, IdmController, IdmParams};
use rlfollow::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::OutputDir;
use crate::{
    CalibrateArgs, Common, CompareArgs, InitKind, LeaderKind, PlatoonArgs, Policies,
    SimulateArgs, TrainArgs, TtcArgs,
};

fn resolve(common: &Common, extra: &[String]) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    RunConfig::resolve(common.config.as_deref(), &overrides, common.seed)
}

fn start(common: &Common) -> Result<OutputDir> {
    let mut out = OutputDir::create(&common.out)?;
    if let Some(cfg) = &common.config {
        out.input(cfg)?;
    }
    Ok(out)
}

pub fn train(kind: PolicyKind, args: TrainArgs) -> Result<()> {
    let extra: Vec<String> = args.episodes.map(|n| format!("ddpg.episodes={n}")).into_iter().collect();
    let cfg = resolve(&args.common, &extra)?;
    let mut out = start(&args.common)?;
    let every = args.log_every;
    let outcome = train_policy_with(kind, &cfg.agent, &cfg.sim, &cfg.ddpg, |r, _| {
        if every > 0 && r.episode % every == 0 {
            eprintln!(
                "{kind} episode {:>6}  return {:>9.2}  trailing {:>9.2}  steps {:>4}{}",
                r.episode,
                r.ret,
                r.trailing,
                r.steps,
                if r.crashed { "  crash" } else { "" }
            );
        }
    })?;
    outcome.best.save(&out.path(&format!("{kind}.json")))?;
    outcome.last.save(&out.path(&format!("{kind}_last.json")))?;
    for ck in &outcome.periodic {
        ck.save(&out.path(&format!("checkpoints/{kind}_e{}.json", ck.episode)))?;
    }
    write_reward_curve(
        out.file(&format!("reward_curve_{kind}.csv"))?,
        &outcome.curve,
        cfg.ddpg.monitor_window,
    )?;
    out.json(&format!("training_log_{kind}.json"), &outcome.log)?;
    out.checkpoint_ids([outcome.best.id()]);
    out.finish(&format!("train-{kind}"), &cfg, args.common.jobs)?;
    match &outcome.log.divergence {
        Some(msg) => Err(Error::Diverged {
            episode: outcome.curve.len() + 1,
            step: 0,
            message: msg.clone(),
        }),
        None => Ok(()),
    }
}

/// Loaded controller plus the checkpoint files it came from.
struct Loaded {
    controller: Box<dyn Controller>,
    label: &'static str,
}

fn load_checkpoint(path: &Path, kind: PolicyKind, out: &mut OutputDir) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::Config(format!("missing {kind} checkpoint {}", path.display())));
    }
    out.input(path)?;
    let ck = Checkpoint::load(path)?;
    if ck.kind != kind {
        return Err(Error::Config(format!(
            "{} holds a {} policy, expected {kind}",
            path.display(),
            ck.kind
        )));
    }
    Ok(ck)
}

fn load_composite(p: &Policies, cfg: &RunConfig, out: &mut OutputDir) -> Result<Option<CompositeController>> {
    let pick = |explicit: &Option<PathBuf>, name: &str| {
        explicit
            .clone()
            .or_else(|| p.rl.as_ref().map(|d| d.join(name)))
    };
    let (free, follow) = match (pick(&p.free, "free.json"), pick(&p.follow, "follow.json")) {
        (None, None) => return Ok(None),
        (Some(f), Some(g)) => (f, g),
        _ => {
            return Err(Error::Config(
                "both a free and a follow checkpoint are needed (--rl or --free/--follow)".into(),
            ))
        }
    };
    let free = load_checkpoint(&free, PolicyKind::Free, out)?;
    let follow = load_checkpoint(&follow, PolicyKind::Follow, out)?;
    if follow.agent != cfg.agent {
        eprintln!("warning: follow checkpoint was trained with different [agent] parameters than the config; rewards use the config");
    }
    let c = CompositeController::from_checkpoints(&free, &follow)?;
    out.checkpoint_ids(c.ids());
    Ok(Some(c))
}

fn load_idm(p: &Policies, out: &mut OutputDir) -> Result<Option<IdmController>> {
    let Some(path) = &p.idm else { return Ok(None) };
    out.input(path)?;
    let text = std::fs::read_to_string(path)?;
    let params = match serde_json::from_str::<CalibrationResult>(&text) {
        Ok(r) => r.params,
        Err(_) => serde_json::from_str::<IdmParams>(&text).map_err(|e| {
            Error::Config(format!("{}: not IDM parameters: {e}", path.display()))
        })?,
    };
    params.validate()?;
    Ok(Some(IdmController::new(params)))
}

/// Exactly one of the RL composite or the IDM.
fn load_single(p: &Policies, cfg: &RunConfig, out: &mut OutputDir) -> Result<Loaded> {
    let rl = load_composite(p, cfg, out)?;
    let idm = load_idm(p, out)?;
    match (rl, idm) {
        (Some(c), None) => Ok(Loaded {
            controller: Box::new(c),
            label: "rl",
        }),
        (None, Some(i)) => Ok(Loaded {
            controller: Box::new(i),
            label: "idm",
        }),
        (None, None) => Err(Error::Config(
            "no controller given: pass --rl (or --free/--follow) or --idm".into(),
        )),
        (Some(_), Some(_)) => Err(Error::Config(
            "pass either the RL checkpoints or --idm, not both".into(),
        )),
    }
}

fn crash_error(what: &str, crashes: usize) -> Result<()> {
    if crashes > 0 {
        Err(Error::Scenario(format!("{what}: {crashes} collision(s)")))
    } else {
        Ok(())
    }
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = resolve(&args.common, &[])?;
    let mut out = start(&args.common)?;
    let loaded = load_single(&args.policies, &cfg, &mut out)?;
    let ctl = loaded.controller.as_ref();
    let need_data = || {
        args.data
            .clone()
            .ok_or_else(|| Error::Config("this leader needs --data FILE".into()))
    };
    let builtin_external = args.leader == LeaderKind::External && args.followers == 1 && args.init.is_none();
    let (outcome, external) = if builtin_external {
        let (o, r) = scenario_external_profile(ctl, &cfg.agent, &cfg.sim)?;
        (o, Some(r))
    } else {
        let leader = match args.leader {
            LeaderKind::External => LeaderSource::External,
            LeaderKind::Ou => LeaderSource::Ou {
                steps: args.steps,
                v0: None,
            },
            LeaderKind::Profile => LeaderSource::ProfileFile { path: need_data()? },
            LeaderKind::Trajectory => LeaderSource::Trajectory { path: need_data()? },
        };
        if let LeaderSource::ProfileFile { path } | LeaderSource::Trajectory { path } = &leader {
            out.input(path)?;
        }
        let init = match args.init {
            Some(InitKind::Fixed) => InitSpec::Fixed {
                speed: args.speed,
                gap: args.gap,
            },
            Some(InitKind::FromData) => InitSpec::FromData,
            Some(InitKind::Equilibrium) => InitSpec::Equilibrium,
            None if args.leader == LeaderKind::Trajectory => InitSpec::FromData,
            None => InitSpec::Equilibrium,
        };
        let spec = ScenarioSpec {
            leader,
            followers: args.followers,
            init,
            seed: cfg.seed,
        };
        let mut prepared = spec.prepare(&cfg.agent, &cfg.sim)?;
        if args.leader == LeaderKind::Ou {
            prepared.steps = args.steps;
        }
        let stack = vec![ctl; args.followers];
        (run_scenario(&prepared, &stack, &cfg.agent, &cfg.sim)?, None)
    };
    write_trace_csv(out.file("trace.csv")?, &outcome.trace)?;
    write_histogram_csv(out.file("ttc_histogram.csv")?, &outcome.metrics.ttc_histogram)?;
    out.json(
        "metrics.json",
        &json!({
            "controller": loaded.label,
            "controller_ids": ctl.ids(),
            "metrics": outcome.metrics,
            "external_profile": external,
            "crash": outcome.trace.crash,
        }),
    )?;
    out.finish("simulate", &cfg, args.common.jobs)?;
    crash_error("simulate", outcome.trace.crash_count)
}

pub fn platoon(args: PlatoonArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(n) = args.followers {
        extra.push(format!("harness.platoon_followers={n}"));
    }
    if let Some(n) = args.episodes {
        extra.push(format!("harness.platoon_episodes={n}"));
    }
    if let Some(n) = args.steps {
        extra.push(format!("harness.platoon_steps={n}"));
    }
    let cfg = resolve(&args.common, &extra)?;
    let mut out = start(&args.common)?;
    let loaded = load_single(&args.policies, &cfg, &mut out)?;
    let h = &cfg.harness;
    let seeds: Vec<u64> = (0..h.platoon_episodes as u64).map(|i| cfg.seed + i).collect();
    let runs = par_map(&seeds, args.common.jobs, |&seed| {
        scenario_platoon_ou(
            loaded.controller.as_ref(),
            h.platoon_followers,
            h.platoon_steps,
            seed,
            h.variance_slack,
            &cfg.agent,
            &cfg.sim,
        )
    });
    let mut episodes = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        let (outcome, ep) = run?;
        if i == 0 {
            write_trace_csv(out.file("trace_first.csv")?, &outcome.trace)?;
        }
        write_variance_csv(out.file(&format!("variance/episode_{:03}.csv", i + 1))?, &ep.accel_variance)?;
        episodes.push(ep);
    }
    let crashes: usize = episodes.iter().map(|e| e.crashes).sum();
    let mean_variance: Vec<f64> = (0..=h.platoon_followers)
        .map(|k| episodes.iter().map(|e| e.accel_variance[k]).sum::<f64>() / episodes.len().max(1) as f64)
        .collect();
    write_variance_csv(out.file("variance_mean.csv")?, &mean_variance)?;
    out.json(
        "platoon.json",
        &json!({
            "controller": loaded.label,
            "controller_ids": loaded.controller.ids(),
            "episodes": episodes,
            "last_below_leader": episodes.iter().filter(|e| e.last_below_leader).count(),
            "string_stable": episodes.iter().filter(|e| e.string_stable).count(),
            "crashes": crashes,
            "mean_accel_variance": mean_variance,
        }),
    )?;
    out.finish("platoon", &cfg, args.common.jobs)?;
    crash_error("platoon", crashes)
}

fn read_pair(path: &Path, follower: usize, out: &mut OutputDir) -> Result<rlfollow::idm::PairSeries> {
    out.input(path)?;
    let tr = Trajectory::read_path(path)?;
    if follower == 0 || follower > tr.followers() {
        return Err(Error::Config(format!(
            "--follower {follower} is out of range (the file has {})",
            tr.followers()
        )));
    }
    tr.pair(follower - 1)
}

pub fn calibrate_idm(args: CalibrateArgs) -> Result<()> {
    let cfg = resolve(&args.common, &[])?;
    let mut out = start(&args.common)?;
    let pair = read_pair(&args.data, args.follower, &mut out)?;
    let result = calibrate(&pair, &IdmParams::default(), &cfg.calibration)?;
    eprintln!(
        "calibrated: SSE(ln g) = {:.6e} after {} evaluations",
        result.sse, result.evaluations
    );
    out.json("idm.json", &result)?;
    out.finish("calibrate-idm", &cfg, args.common.jobs)
}

pub fn ttc(args: TtcArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(n) = args.episodes {
        extra.push(format!("harness.ttc_episodes={n}"));
    }
    if let Some(n) = args.steps {
        extra.push(format!("harness.ttc_steps={n}"));
    }
    let cfg = resolve(&args.common, &extra)?;
    let mut out = start(&args.common)?;
    let loaded = load_single(&args.policies, &cfg, &mut out)?;
    let h = &cfg.harness;
    let seeds: Vec<u64> = (0..h.ttc_episodes as u64).map(|i| cfg.seed + i).collect();
    let parts = par_map(&seeds, args.common.jobs, |&seed| {
        ttc_protocol(
            loaded.controller.as_ref(),
            &[seed],
            h.ttc_steps,
            &h.emergency,
            &cfg.agent,
            &cfg.sim,
        )
    });
    let mut report: Option<TtcProtocolReport> = None;
    for part in parts {
        let part = part?;
        report = Some(match report {
            None => part,
            Some(r) => r.merge(&part),
        });
    }
    let report = report.ok_or_else(|| Error::Config("harness.ttc_episodes must be > 0".into()))?;
    write_histogram_csv(out.file("ttc_histogram.csv")?, &report.histogram)?;
    out.json(
        "ttc.json",
        &json!({
            "controller": loaded.label,
            "controller_ids": loaded.controller.ids(),
            "report": report,
            "min_ttc": args.min_ttc,
        }),
    )?;
    out.finish("ttc", &cfg, args.common.jobs)?;
    crash_error("ttc", report.crashes)?;
    match (args.min_ttc, report.floor) {
        (Some(limit), Some(floor)) if floor <= limit => Err(Error::Scenario(format!(
            "TTC floor {floor:.3} s is not above {limit} s"
        ))),
        _ => Ok(()),
    }
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let cfg = resolve(&args.common, &[])?;
    let mut out = start(&args.common)?;
    let rl = load_composite(&args.policies, &cfg, &mut out)?
        .ok_or_else(|| Error::Config("compare needs the RL checkpoints (--rl or --free/--follow)".into()))?;
    let idm = load_idm(&args.policies, &mut out)?
        .ok_or_else(|| Error::Config("compare needs --idm FILE".into()))?;
    let pair = read_pair(&args.data, args.follower, &mut out)?;
    let (table, traces) = cross_compare(&[("rl", &rl), ("idm", &idm)], &pair, &cfg.agent, &cfg.sim)?;
    write_trace_csv(out.file("trace_rl.csv")?, &traces[0])?;
    write_trace_csv(out.file("trace_idm.csv")?, &traces[1])?;
    out.json(
        "compare.json",
        &json!({
            "rl_ids": rl.ids(),
            "idm": idm.params,
            "comparison": table,
        }),
    )?;
    out.finish("compare", &cfg, args.common.jobs)?;
    let crashes = table.entries.iter().filter(|e| e.crashed).count();
    crash_error("compare", crashes)
}
