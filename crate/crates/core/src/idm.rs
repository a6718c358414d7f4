//! Intelligent Driver Model baseline and its calibration on `SSE(ln g)`.

use serde::{Deserialize, Serialize};

use crate::agent::{Controller, Scene};
use crate::error::{ensure_finite, Error, Result};
use crate::optim::{multistart, Bounds, NelderMeadOptions};
use crate::sim::{step_vehicle, VehicleState, ACCEL_MAX, ACCEL_MIN, VEHICLE_LENGTH};
use crate::stochastic::{stream_rng, Stream};

/// Penalty objective for a candidate whose simulated follower collides.
pub const CRASH_PENALTY: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    pub v_des: f64,
    #[serde(rename = "T")]
    pub t_gap: f64,
    pub g_min: f64,
    pub a_max: f64,
    pub b_comf: f64,
}

impl Default for IdmParams {
    /// Values calibrated on the Napoli platoon data.
    fn default() -> Self {
        Self {
            v_des: 33.73,
            t_gap: 0.83,
            g_min: 4.90,
            a_max: 4.32,
            b_comf: 2.34,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::Config(format!("idm.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("v_des", self.v_des),
            ("T", self.t_gap),
            ("g_min", self.g_min),
            ("a_max", self.a_max),
            ("b_comf", self.b_comf),
        ]
    }

    /// `[v_des, T, g_min, a_max, b_comf]`, the calibration vector.
    pub fn to_vec(&self) -> Vec<f64> {
        self.named().iter().map(|(_, v)| *v).collect()
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        match *x {
            [v_des, t_gap, g_min, a_max, b_comf] => Ok(Self {
                v_des,
                t_gap,
                g_min,
                a_max,
                b_comf,
            }),
            _ => Err(Error::DimensionMismatch {
                expected: 5,
                got: x.len(),
            }),
        }
    }

    /// Dynamic desired gap `s*(v, v_l)`.
    pub fn desired_gap(&self, v: f64, v_l: f64) -> f64 {
        let dyn_part = v * self.t_gap + v * (v - v_l) / (2.0 * (self.a_max * self.b_comf).sqrt());
        self.g_min + dyn_part.max(0.0)
    }

    /// Free-road acceleration `a_max·(1 − (v/v_des)⁴)`.
    pub fn free_accel(&self, v: f64) -> f64 {
        self.a_max * (1.0 - (v / self.v_des).powi(4))
    }
}

/// Unclamped IDM acceleration.
pub fn idm_accel(v: f64, v_l: f64, g: f64, p: &IdmParams) -> Result<f64> {
    if !(g > 0.0) {
        return Err(Error::Domain(format!("IDM needs a positive gap, got {g}")));
    }
    let s = p.desired_gap(v, v_l) / g;
    Ok(p.free_accel(v) - p.a_max * s * s)
}

/// Acceleration clamped to the shared action range.
pub fn idm_accel_clamped(v: f64, v_l: f64, g: f64, p: &IdmParams) -> Result<f64> {
    Ok(idm_accel(v, v_l, g, p)?.clamp(ACCEL_MIN, ACCEL_MAX))
}

/// Steady-state gap at speed `v` behind a leader at the same speed.
pub fn equilibrium_gap(v: f64, p: &IdmParams) -> Result<f64> {
    if !(v >= 0.0 && v < p.v_des) {
        return Err(Error::Domain(format!(
            "no finite equilibrium gap at v = {v} (v_des = {})",
            p.v_des
        )));
    }
    Ok(p.desired_gap(v, v) / (1.0 - (v / p.v_des).powi(4)).sqrt())
}

/// IDM as a [`Controller`]. A missing leader means free road.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmController {
    pub params: IdmParams,
    /// Clamp to the shared action range.
    pub clamp: bool,
}

impl IdmController {
    pub fn new(params: IdmParams) -> Self {
        Self { params, clamp: true }
    }

    pub fn unclamped(params: IdmParams) -> Self {
        Self { params, clamp: false }
    }

    fn raw(&self, scene: &Scene) -> f64 {
        match scene.leader {
            None => self.params.free_accel(scene.v),
            Some(l) => idm_accel(scene.v, l.v, l.gap, &self.params).unwrap_or(f64::NEG_INFINITY),
        }
    }
}

impl Controller for IdmController {
    fn accel(&self, scene: &Scene) -> f64 {
        let a = self.raw(scene);
        if self.clamp {
            a.clamp(ACCEL_MIN, ACCEL_MAX)
        } else if a.is_finite() {
            a
        } else {
            ACCEL_MIN
        }
    }

    fn label(&self) -> String {
        if self.clamp { "idm" } else { "idm-unclamped" }.into()
    }
}

/// One leader/follower pair on a uniform time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSeries {
    pub dt: f64,
    pub leader_speed: Vec<f64>,
    pub follower_speed: Vec<f64>,
    pub gap: Vec<f64>,
}

impl PairSeries {
    pub fn len(&self) -> usize {
        self.gap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gap.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gap.len();
        if n < 2 || self.leader_speed.len() != n || self.follower_speed.len() != n {
            return Err(Error::InvalidInput(
                "pair series needs at least two samples and equal lengths".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput("dt must be > 0".into()));
        }
        if let Some(i) = self.gap.iter().position(|&g| !(g > 0.0)) {
            return Err(Error::InvalidInput(format!("gap at sample {i} is not positive")));
        }
        Ok(())
    }
}

/// Replays the recorded leader and simulates an IDM follower from the
/// recorded initial state. Returns the simulated gaps, or `None` if the
/// follower collides.
pub fn simulate_follower(p: &IdmParams, data: &PairSeries, clamp: bool) -> Option<Vec<f64>> {
    let dt = data.dt;
    let mut gaps = Vec::with_capacity(data.len());
    // same position bookkeeping as `run_episode`, so replaying a simulated
    // record reproduces it bit for bit
    let len = VEHICLE_LENGTH;
    let mut f = VehicleState::new(0.0, data.follower_speed[0]);
    let mut x_l = data.gap[0] + len;
    gaps.push(x_l - f.x - len);
    for t in 0..data.len() - 1 {
        let g = x_l - f.x - len;
        let mut a = idm_accel(f.v, data.leader_speed[t], g, p).ok()?;
        if clamp {
            a = a.clamp(ACCEL_MIN, ACCEL_MAX);
        } else if !a.is_finite() {
            return None;
        }
        f = step_vehicle(f, a, dt).ok()?;
        x_l += 0.5 * (data.leader_speed[t] + data.leader_speed[t + 1]) * dt;
        let g = x_l - f.x - len;
        if !(g > 0.0) {
            return None;
        }
        gaps.push(g);
    }
    Some(gaps)
}

/// `Σ (ln g_sim − ln g_ref)²`.
pub fn sse_log_gap(sim: &[f64], reference: &[f64]) -> Result<f64> {
    if sim.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: sim.len(),
        });
    }
    Ok(sim
        .iter()
        .zip(reference)
        .map(|(s, r)| (s.ln() - r.ln()).powi(2))
        .sum())
}

/// Calibration objective for one parameter set; colliding candidates
/// score [`CRASH_PENALTY`].
pub fn calibration_objective(p: &IdmParams, data: &PairSeries, clamp: bool) -> f64 {
    if p.validate().is_err() {
        return CRASH_PENALTY;
    }
    match simulate_follower(p, data, clamp) {
        Some(g) => sse_log_gap(&g, &data.gap).unwrap_or(CRASH_PENALTY),
        None => CRASH_PENALTY,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationOptions {
    pub restarts: usize,
    pub seed: u64,
    pub clamp: bool,
    pub bounds: IdmBounds,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            clamp: true,
            bounds: IdmBounds::default(),
            nelder_mead: NelderMeadOptions {
                max_evals: 3000,
                f_tol: 1e-14,
                x_tol: 1e-10,
                initial_step: 0.1,
            },
        }
    }
}

/// Box constraints as `(lo, hi)` per parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmBounds {
    pub v_des: (f64, f64),
    #[serde(rename = "T")]
    pub t_gap: (f64, f64),
    pub g_min: (f64, f64),
    pub a_max: (f64, f64),
    pub b_comf: (f64, f64),
}

impl Default for IdmBounds {
    fn default() -> Self {
        Self {
            v_des: (10.0, 50.0),
            t_gap: (0.3, 3.0),
            g_min: (0.5, 10.0),
            a_max: (0.5, 6.0),
            b_comf: (0.5, 6.0),
        }
    }
}

impl IdmBounds {
    pub fn to_bounds(&self) -> Result<Bounds> {
        let b = [self.v_des, self.t_gap, self.g_min, self.a_max, self.b_comf];
        Bounds::new(b.iter().map(|p| p.0).collect(), b.iter().map(|p| p.1).collect())
            .map_err(|e| Error::Config(format!("idm bounds: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: IdmParams,
    pub sse: f64,
    pub evaluations: usize,
    /// Best objective of each start, the initial guess first.
    pub restart_objectives: Vec<f64>,
}

/// Fits IDM parameters to one leader/follower pair by minimizing
/// `SSE(ln g)` in simulation mode with multistart Nelder–Mead.
pub fn calibrate(data: &PairSeries, init: &IdmParams, opts: &CalibrationOptions) -> Result<CalibrationResult> {
    data.validate()?;
    let bounds = opts.bounds.to_bounds()?;
    let mut rng = stream_rng(opts.seed, Stream::InitConditions);
    let mut objective = |x: &[f64]| match IdmParams::from_slice(x) {
        Ok(p) => calibration_objective(&p, data, opts.clamp),
        Err(_) => CRASH_PENALTY,
    };
    let (best, runs) = multistart(
        &mut objective,
        &init.to_vec(),
        &bounds,
        opts.restarts,
        &opts.nelder_mead,
        &mut rng,
    )?;
    Ok(CalibrationResult {
        params: IdmParams::from_slice(&best.x)?,
        sse: best.f,
        evaluations: runs.iter().map(|r| r.evals).sum(),
        restart_objectives: runs.iter().map(|r| r.f).collect(),
    })
}
