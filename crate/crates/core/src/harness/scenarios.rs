use std::io::Read;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::metrics::{
    mean, population_variance, EmergencyWindow, Histogram, MetricsReport, SteadyFollowing,
};
use super::trajectory::{resample, resampled_len, Trajectory, GRID_DT};
use crate::agent::Controller;
use crate::error::{Error, Result};
use crate::idm::{sse_log_gap, IdmController, IdmParams, PairSeries};
use crate::rewards::AgentParams;
use crate::sim::{run_episode, EpisodeInit, EpisodeTrace, SimConfig};
use crate::stochastic::{leader_profile_with, stream_rng, Stream};

const EXTERNAL_PROFILE_CSV: &str = include_str!("../../data/external_leader_v1.csv");

/// Version tag of the shipped external leader profile.
pub const EXTERNAL_PROFILE_VERSION: &str = "external_leader_v1 (reconstructed)";

/// Reads a `t,v` speed profile (lines starting with `#` are comments) onto
/// the 0.1 s grid.
pub fn read_speed_profile<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| Error::Data { line: 1, message: e.to_string() })?.clone();
    let (tc, vc) = match (
        header.iter().position(|h| h == "t"),
        header.iter().position(|h| h == "v"),
    ) {
        (Some(t), Some(v)) => (t, v),
        _ => {
            return Err(Error::Data {
                line: 1,
                message: "speed profile needs columns `t` and `v`".into(),
            })
        }
    };
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Data {
                    line,
                    message: "expected a finite number".into(),
                })
        };
        let (t, v) = (num(tc)?, num(vc)?);
        if ts.last().is_some_and(|&p| t <= p) {
            return Err(Error::Data {
                line,
                message: "time does not increase".into(),
            });
        }
        if v < 0.0 {
            return Err(Error::Data {
                line,
                message: format!("negative speed {v}"),
            });
        }
        ts.push(t);
        vs.push(v);
    }
    if ts.len() < 2 {
        return Err(Error::Data {
            line: 0,
            message: "speed profile needs at least two rows".into(),
        });
    }
    let on_grid = ts.windows(2).all(|w| ((w[1] - w[0]) - GRID_DT).abs() < 1e-6);
    if on_grid {
        return Ok(vs);
    }
    let grid: Vec<f64> = (0..resampled_len(ts[0], ts[ts.len() - 1]))
        .map(|i| ts[0] + i as f64 * GRID_DT)
        .collect();
    Ok(resample(&ts, &vs, &grid))
}

/// The shipped reconstructed leader profile (110 s at 0.1 s).
pub fn external_profile() -> Vec<f64> {
    read_speed_profile(EXTERNAL_PROFILE_CSV.as_bytes()).expect("shipped profile parses")
}

/// Where the leader's speed series comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LeaderSource {
    /// The shipped reconstructed external profile.
    External,
    /// A `t,v` profile file.
    ProfileFile { path: PathBuf },
    /// Clipped OU leader; `v0` defaults to a uniform draw in `[0, v_des]`.
    Ou { steps: usize, v0: Option<f64> },
    /// Leader and initial platoon state from a trajectory file.
    Trajectory { path: PathBuf },
}

/// Initial follower states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    /// Every follower at the leader's initial speed `v0`, gap `g_min + v0·T`.
    Equilibrium,
    Fixed { speed: f64, gap: f64 },
    /// Speeds and gaps of the trajectory's first row.
    FromData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub leader: LeaderSource,
    pub followers: usize,
    pub init: InitSpec,
    pub seed: u64,
}

/// A scenario with its leader series and initial state resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedScenario {
    pub leader_speeds: Vec<f64>,
    pub init: EpisodeInit,
    pub steps: usize,
    /// Recorded gaps, when the leader came from a trajectory file.
    pub reference: Option<Trajectory>,
}

/// Followers at the leader's speed with the gaps `g_min + v0·T`.
pub fn equilibrium_init(n: usize, v0: f64, p: &AgentParams) -> EpisodeInit {
    EpisodeInit::uniform(n, v0, p.g_min + v0 * p.t_gap)
}

/// Clipped OU leader series for scenario `seed`; `v0` defaults to a
/// uniform draw in `[0, v_des]`.
pub fn ou_leader(steps: usize, v0: Option<f64>, seed: u64, p: &AgentParams, sim: &SimConfig) -> Vec<f64> {
    use rand::Rng;
    let mut init_rng = stream_rng(seed, Stream::InitConditions);
    let v0 = v0.unwrap_or_else(|| init_rng.random_range(0.0..=p.v_des));
    let ou = sim.leader.to_ou(sim.dt);
    leader_profile_with(&ou, steps + 1, v0, &mut stream_rng(seed, Stream::Evaluation))
}

/// Smooth leader with bounded acceleration: cruise phases of 15–30 s at
/// speeds drawn from `[2, v_max]`, joined by ramps at 0.5–1.5 m/s².
/// Stands in for recorded leaders when measuring time gaps.
pub fn cruise_leader(steps: usize, seed: u64, v_max: f64, dt: f64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = stream_rng(seed, Stream::Evaluation);
    let mut v = rng.random_range(2.0..=v_max);
    let mut out = Vec::with_capacity(steps + 1);
    while out.len() <= steps {
        let hold = (rng.random_range(15.0..=30.0) / dt).round() as usize;
        out.extend(std::iter::repeat_n(v, hold));
        let target = rng.random_range(2.0..=v_max);
        let rate = rng.random_range(0.5..=1.5) * dt;
        while (target - v).abs() > rate {
            v += rate * (target - v).signum();
            out.push(v);
        }
        v = target;
    }
    out.truncate(steps + 1);
    out
}

/// Reference platoon of one IDM follower (clamped to the action range)
/// behind `leader`, as a trajectory ready for calibration.
pub fn idm_reference(
    params: &IdmParams,
    leader: &[f64],
    init: &EpisodeInit,
    p: &AgentParams,
    sim: &SimConfig,
) -> Result<Trajectory> {
    let ctl = IdmController::new(*params);
    let cfg = SimConfig {
        episode_steps: leader.len(),
        ..sim.clone()
    };
    let trace = run_episode(leader, &[&ctl], init, p, &cfg)?;
    if trace.crashed() {
        return Err(Error::Scenario("reference IDM follower collided".into()));
    }
    Ok(Trajectory::from_trace(&trace))
}

impl ScenarioSpec {
    pub fn prepare(&self, p: &AgentParams, sim: &SimConfig) -> Result<PreparedScenario> {
        if self.followers == 0 {
            return Err(Error::Config("scenario.followers must be >= 1".into()));
        }
        let (leader_speeds, reference) = match &self.leader {
            LeaderSource::External => (external_profile(), None),
            LeaderSource::ProfileFile { path } => {
                let f = std::fs::File::open(path).map_err(|e| Error::Data {
                    line: 0,
                    message: format!("{}: {e}", path.display()),
                })?;
                (read_speed_profile(f)?, None)
            }
            LeaderSource::Ou { steps, v0 } => (ou_leader(*steps, *v0, self.seed, p, sim), None),
            LeaderSource::Trajectory { path } => {
                let tr = Trajectory::read_path(path)?;
                (tr.leader_speed.clone(), Some(tr))
            }
        };
        let v0 = leader_speeds[0];
        let init = match &self.init {
            InitSpec::Equilibrium => equilibrium_init(self.followers, v0, p),
            InitSpec::Fixed { speed, gap } => EpisodeInit::uniform(self.followers, *speed, *gap),
            InitSpec::FromData => {
                let tr = reference.as_ref().ok_or_else(|| {
                    Error::Config("init `from-data` needs a trajectory leader".into())
                })?;
                if tr.followers() < self.followers {
                    return Err(Error::Data {
                        line: 0,
                        message: format!(
                            "trajectory has {} followers, scenario needs {}",
                            tr.followers(),
                            self.followers
                        ),
                    });
                }
                EpisodeInit {
                    follower_speeds: (0..self.followers).map(|k| tr.follower_speed[k][0]).collect(),
                    gaps: (0..self.followers).map(|k| tr.gap[k][0]).collect(),
                }
            }
        };
        Ok(PreparedScenario {
            steps: leader_speeds.len(),
            leader_speeds,
            init,
            reference,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioOutcome {
    pub trace: EpisodeTrace,
    pub metrics: MetricsReport,
}

/// Runs a prepared scenario with one controller per follower.
pub fn run_scenario(
    prepared: &PreparedScenario,
    controllers: &[&dyn Controller],
    p: &AgentParams,
    sim: &SimConfig,
) -> Result<ScenarioOutcome> {
    let cfg = SimConfig {
        episode_steps: prepared.steps,
        ..sim.clone()
    };
    let trace = run_episode(&prepared.leader_speeds, controllers, &prepared.init, p, &cfg)?;
    let reference = prepared.reference.as_ref().map(|r| r.gap.clone());
    let metrics = MetricsReport::from_trace(&trace, reference.as_deref());
    Ok(ScenarioOutcome { trace, metrics })
}

/// Checks of the external-profile scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalProfileReport {
    pub profile: String,
    pub crashed: bool,
    /// Gap and speed just before the leader starts at 30 s.
    pub standstill_gap: f64,
    pub standstill_speed: f64,
    /// Largest deceleration while approaching the standing leader.
    pub approach_peak_decel: f64,
    /// Largest deceleration in the 10 s after the emergency stop begins.
    pub emergency_peak_decel: f64,
    /// Highest speed once the leader is faster than `v_des`.
    pub max_speed_after_leader_exceeds: f64,
    pub jerk_exceedances: usize,
}

/// Start of the leader's motion in the shipped profile.
pub const EXTERNAL_LEADER_STARTS: f64 = 30.0;
/// Start of the emergency stop in the shipped profile.
pub const EXTERNAL_EMERGENCY_AT: f64 = 46.0;
/// From here on the shipped leader drives above 15 m/s.
pub const EXTERNAL_LEADER_EXCEEDS: f64 = 88.0;

/// Standing leader 200 m ahead of a follower starting from rest, then the
/// shipped leader profile.
pub fn scenario_external_profile(
    controller: &dyn Controller,
    p: &AgentParams,
    sim: &SimConfig,
) -> Result<(ScenarioOutcome, ExternalProfileReport)> {
    let prepared = PreparedScenario {
        leader_speeds: external_profile(),
        init: EpisodeInit::single(0.0, 200.0),
        steps: 0,
        reference: None,
    };
    let prepared = PreparedScenario {
        steps: prepared.leader_speeds.len(),
        ..prepared
    };
    let out = run_scenario(&prepared, &[controller], p, sim)?;
    let tr = &out.trace;
    let step = |t: f64| ((t / tr.dt).round() as usize).min(tr.len().saturating_sub(1));
    let f = tr.vehicle(1);
    let decel = |a: usize, b: usize| {
        f[a.min(f.len())..b.min(f.len())]
            .iter()
            .map(|s| -s.a)
            .fold(0.0, f64::max)
    };
    let s30 = step(EXTERNAL_LEADER_STARTS) - 1;
    let e0 = step(EXTERNAL_EMERGENCY_AT);
    let report = ExternalProfileReport {
        profile: EXTERNAL_PROFILE_VERSION.into(),
        crashed: tr.crashed(),
        standstill_gap: tr.gaps[0][s30.min(tr.len() - 1)],
        standstill_speed: f[s30.min(f.len() - 1)].v,
        approach_peak_decel: decel(0, s30),
        emergency_peak_decel: decel(e0, e0 + step(10.0)),
        max_speed_after_leader_exceeds: f[step(EXTERNAL_LEADER_EXCEEDS).min(f.len())..]
            .iter()
            .map(|s| s.v)
            .fold(0.0, f64::max),
        jerk_exceedances: out.metrics.jerk_exceedances[0],
    };
    Ok((out, report))
}

/// Per-episode results of an OU-leader platoon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatoonEpisode {
    pub seed: u64,
    /// Leader first, then followers 1..=n.
    pub accel_variance: Vec<f64>,
    pub crashes: usize,
    pub last_below_leader: bool,
    pub string_stable: bool,
}

/// Whether each vehicle's variance is at most `1 + slack` times its
/// predecessor's.
pub fn variance_non_increasing(variances: &[f64], slack: f64) -> bool {
    variances.windows(2).all(|w| w[1] <= (1.0 + slack) * w[0])
}

/// `n` identical followers behind an OU leader, starting in equilibrium.
pub fn scenario_platoon_ou(
    controller: &dyn Controller,
    n: usize,
    steps: usize,
    seed: u64,
    slack: f64,
    p: &AgentParams,
    sim: &SimConfig,
) -> Result<(ScenarioOutcome, PlatoonEpisode)> {
    let spec = ScenarioSpec {
        leader: LeaderSource::Ou { steps, v0: None },
        followers: n,
        init: InitSpec::Equilibrium,
        seed,
    };
    let mut prepared = spec.prepare(p, sim)?;
    prepared.steps = steps;
    let stack: Vec<&dyn Controller> = vec![controller; n];
    let out = run_scenario(&prepared, &stack, p, sim)?;
    let var = out.metrics.accel_variance.clone();
    let ep = PlatoonEpisode {
        seed,
        crashes: out.trace.crash_count,
        last_below_leader: var[n] < var[0],
        string_stable: variance_non_increasing(&var, slack),
        accel_variance: var,
    };
    Ok((out, ep))
}

/// Realized time gaps of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGapEntry {
    pub t_gap: f64,
    pub mean_time_gap: f64,
    pub samples: usize,
    pub crashes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverCharacteristicsReport {
    pub entries: Vec<TimeGapEntry>,
    /// Mean realized gaps strictly increase with `T`.
    pub ordered: bool,
}

/// Runs each `(T, controller)` agent behind every leader series and
/// collects its realized time gaps during steady following.
pub fn scenario_driver_characteristics(
    agents: &[(f64, &dyn Controller)],
    leaders: &[Vec<f64>],
    steady: &SteadyFollowing,
    p: &AgentParams,
    sim: &SimConfig,
) -> Result<DriverCharacteristicsReport> {
    let mut entries = Vec::with_capacity(agents.len());
    for &(t_gap, ctl) in agents {
        let params = AgentParams { t_gap, ..*p };
        let mut gaps = Vec::new();
        let mut crashes = 0;
        for leader in leaders {
            let prepared = PreparedScenario {
                steps: leader.len(),
                init: equilibrium_init(1, leader[0], &params),
                leader_speeds: leader.clone(),
                reference: None,
            };
            let out = run_scenario(&prepared, &[ctl], &params, sim)?;
            crashes += out.trace.crash_count;
            gaps.extend(steady.time_gaps(&out.trace, 0, params.g_min));
        }
        entries.push(TimeGapEntry {
            t_gap,
            mean_time_gap: mean(&gaps),
            samples: gaps.len(),
            crashes,
        });
    }
    let mut sorted = entries.clone();
    sorted.sort_by(|a, b| a.t_gap.total_cmp(&b.t_gap));
    let ordered = sorted
        .windows(2)
        .all(|w| w[0].mean_time_gap < w[1].mean_time_gap);
    Ok(DriverCharacteristicsReport { entries, ordered })
}

/// One row of the model comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub label: String,
    pub sse_log_gap: f64,
    pub accumulated_reward: f64,
    pub crashed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossComparison {
    pub steps: usize,
    pub entries: Vec<CompareEntry>,
}

/// Replays the reference leader for each controller from the reference
/// initial state and scores `SSE(ln g)` against the reference gaps and
/// the undiscounted car-following reward.
pub fn cross_compare(
    controllers: &[(&str, &dyn Controller)],
    reference: &PairSeries,
    p: &AgentParams,
    sim: &SimConfig,
) -> Result<(CrossComparison, Vec<EpisodeTrace>)> {
    reference.validate()?;
    if (reference.dt - sim.dt).abs() > 1e-9 {
        return Err(Error::Data {
            line: 0,
            message: format!("reference step {} differs from simulation step {}", reference.dt, sim.dt),
        });
    }
    let prepared = PreparedScenario {
        leader_speeds: reference.leader_speed.clone(),
        init: EpisodeInit::single(reference.follower_speed[0], reference.gap[0]),
        steps: reference.len(),
        reference: None,
    };
    let mut entries = Vec::new();
    let mut traces = Vec::new();
    for &(label, ctl) in controllers {
        let out = run_scenario(&prepared, &[ctl], p, sim)?;
        let gaps = &out.trace.gaps[0];
        let sse = if gaps.len() == reference.len() && gaps.iter().all(|g| *g > 0.0) {
            sse_log_gap(gaps, &reference.gap)?
        } else {
            f64::INFINITY
        };
        entries.push(CompareEntry {
            label: label.to_string(),
            sse_log_gap: sse,
            accumulated_reward: out.trace.accumulated_reward(0),
            crashed: out.trace.crashed(),
        });
        traces.push(out.trace);
    }
    Ok((
        CrossComparison {
            steps: reference.len(),
            entries,
        },
        traces,
    ))
}

/// Minimum TTC outside leader emergency decelerations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtcProtocolReport {
    pub episodes: usize,
    pub crashes: usize,
    pub samples: usize,
    pub excluded: usize,
    /// Smallest TTC outside the excluded windows.
    pub floor: Option<f64>,
    /// Smallest TTC overall.
    pub min_overall: Option<f64>,
    /// All recorded TTC values, excluded ones included.
    pub histogram: Histogram,
}

impl TtcProtocolReport {
    fn empty() -> Self {
        Self {
            episodes: 0,
            crashes: 0,
            samples: 0,
            excluded: 0,
            floor: None,
            min_overall: None,
            histogram: Histogram::ttc_default(),
        }
    }

    /// Combines reports of disjoint episode sets.
    pub fn merge(mut self, other: &Self) -> Self {
        let min = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        };
        self.episodes += other.episodes;
        self.crashes += other.crashes;
        self.samples += other.samples;
        self.excluded += other.excluded;
        self.floor = min(self.floor, other.floor);
        self.min_overall = min(self.min_overall, other.min_overall);
        for (c, o) in self.histogram.counts.iter_mut().zip(&other.histogram.counts) {
            *c += o;
        }
        self.histogram.underflow += other.histogram.underflow;
        self.histogram.overflow += other.histogram.overflow;
        self
    }
}

/// TTC of a single follower over OU-leader episodes, excluding steps in
/// or shortly after leader emergency decelerations.
pub fn ttc_protocol(
    controller: &dyn Controller,
    seeds: &[u64],
    steps: usize,
    window: &EmergencyWindow,
    p: &AgentParams,
    sim: &SimConfig,
) -> Result<TtcProtocolReport> {
    let mut report = TtcProtocolReport {
        episodes: seeds.len(),
        ..TtcProtocolReport::empty()
    };
    for &seed in seeds {
        let spec = ScenarioSpec {
            leader: LeaderSource::Ou { steps, v0: None },
            followers: 1,
            init: InitSpec::Equilibrium,
            seed,
        };
        let mut prepared = spec.prepare(p, sim)?;
        prepared.steps = steps;
        let out = run_scenario(&prepared, &[controller], p, sim)?;
        report.crashes += out.trace.crash_count;
        let flags = window.flags(&out.trace.speeds(0), sim.dt);
        for s in super::metrics::compute_ttc(&out.trace).samples {
            report.samples += 1;
            report.histogram.add(s.ttc);
            report.min_overall = Some(report.min_overall.map_or(s.ttc, |m: f64| m.min(s.ttc)));
            if flags[s.step] {
                report.excluded += 1;
            } else {
                report.floor = Some(report.floor.map_or(s.ttc, |m: f64| m.min(s.ttc)));
            }
        }
    }
    Ok(report)
}

/// Population variance of the leader's forward-difference acceleration.
pub fn leader_accel_variance(leader: &[f64], dt: f64) -> f64 {
    let a: Vec<f64> = leader.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    population_variance(&a)
}
