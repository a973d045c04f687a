//! Experiment runner: configuration, truth and sensor simulation, the discrete
//! estimator loop, traces, summaries and parameter sweeps.

use crate::continuous::{lyapunov_value, pose_error, GainConfig, GainError, GainSet, Observation};
use crate::discrete::{DiscreteError, Lgvi, LgviState};
use crate::geometry::{adjoint_of_pose, exp_so3, principal_angle, Mat3, Pose, Twist, Vec3};
use crate::sensors::{
    measure_epoch, CameraRig, MeasurementSet, NoiseModel, PointVelocityMode, SensorError, World,
};
use crate::truth::{simulate_truth, step_count, write_truth_csv, TruthModel, TruthState, VehicleParams, WrenchFrame};
use crate::velocity::{Hold, TwistReconstructor, VelocitySource};
use crate::wahba::{epoch_attitude, Shaping, WeightSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("estimator failed at step {step}: {source}")]
    Estimator {
        step: usize,
        #[source]
        source: DiscreteError,
    },
    #[error("sensor error: {0}")]
    Sensor(#[from] SensorError),
    #[error("truth error: {0}")]
    Truth(#[from] crate::truth::TruthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    fn config(path: &str, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Estimator { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub mass_g: f64,
    /// Principal moments of inertia (g·m²).
    pub inertia_g_m2: [f64; 3],
    pub wrench_frame: WrenchFrame,
}

/// Attitude as a rotation axis (any length) and an angle in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttitudeConfig {
    pub axis: [f64; 3],
    pub angle_deg: f64,
}

impl AttitudeConfig {
    pub fn identity() -> Self {
        Self {
            axis: [1.0, 0.0, 0.0],
            angle_deg: 0.0,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        let axis = Vec3::from(self.axis);
        if self.angle_deg == 0.0 {
            return Mat3::identity();
        }
        exp_so3(&(axis.normalize() * self.angle_deg.to_radians()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub attitude: AttitudeConfig,
    pub position: [f64; 3],
    pub omega: [f64; 3],
    pub nu: [f64; 3],
}

/// Diagonal estimator gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub j: [f64; 3],
    pub m: [f64; 3],
    pub d_r: [f64; 3],
    pub d_t: [f64; 3],
    pub kappa: f64,
    pub varsigma: [f64; 3],
    pub tail_weight: f64,
}

impl GainsConfig {
    pub fn to_gain_config(&self) -> GainConfig {
        let d = |v: &[f64; 3]| Mat3::from_diagonal(&Vec3::from(*v));
        GainConfig {
            j: d(&self.j),
            m: d(&self.m),
            d_r: d(&self.d_r),
            d_t: d(&self.d_t),
            kappa: self.kappa,
            weights: WeightSpec {
                varsigma: self.varsigma,
                tail_weight: self.tail_weight,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    /// Camera cone half-angle (degrees).
    pub half_angle_deg: f64,
    /// Bump-noise half-width on beacon positions (m).
    pub noise_width: f64,
    /// Bump-noise half-width on inertial directions (dimensionless).
    pub direction_noise_width: f64,
    /// Bump-noise half-width on rate-sensor readings.
    pub rate_noise_width: f64,
    /// Side of the cubic room whose corners carry the beacons (m).
    pub room_side: f64,
    pub point_velocity: PointVelocityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub omega_n: f64,
    pub mu: f64,
    /// Feed raw velocity signals to the estimator.
    #[serde(default)]
    pub bypass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub truth_horizon: f64,
    pub estimator_horizon: f64,
    pub velocity_source: VelocitySource,
    /// Directory for the trace, summary and truth files; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub plot_script: bool,
    pub vehicle: VehicleConfig,
    pub initial_truth: StateConfig,
    pub initial_estimate: StateConfig,
    pub gains: GainsConfig,
    pub sensors: SensorConfig,
    pub filter: FilterConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Case1,
    Case2,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "case1" => Ok(Self::Case1),
            "case2" => Ok(Self::Case2),
            other => Err(format!("unknown preset '{other}' (case1|case2)")),
        }
    }
}

impl ExperimentConfig {
    /// Reference scenario; the two presets differ only in the camera cone.
    pub fn preset(p: Preset) -> Self {
        let (name, half_angle) = match p {
            Preset::Case1 => ("case1", 40.0),
            Preset::Case2 => ("case2", 25.0),
        };
        Self {
            name: name.to_string(),
            seed: 1,
            dt: 0.02,
            truth_horizon: 150.0,
            estimator_horizon: 20.0,
            velocity_source: VelocitySource::Optical,
            output: None,
            plot_script: false,
            vehicle: VehicleConfig {
                mass_g: 420.0,
                inertia_g_m2: [51.2, 60.2, 59.6],
                wrench_frame: WrenchFrame::Body,
            },
            initial_truth: StateConfig {
                attitude: AttitudeConfig {
                    axis: [3.0, -6.0, 2.0],
                    angle_deg: 45.0,
                },
                position: [2.5, 0.5, -3.0],
                omega: [0.2, -0.05, 0.1],
                nu: [-0.05, 0.15, 0.03],
            },
            initial_estimate: StateConfig {
                attitude: AttitudeConfig::identity(),
                position: [0.0, 0.0, 0.0],
                omega: [0.1, 0.45, 0.05],
                nu: [2.05, 0.64, 1.29],
            },
            gains: GainsConfig {
                j: [0.9, 0.6, 0.3],
                m: [0.0608, 0.0486, 0.0365],
                d_r: [2.7, 2.2, 1.5],
                d_t: [0.1, 0.12, 0.14],
                kappa: 1.0,
                varsigma: [3.0, 2.0, 1.0],
                tail_weight: 1.0,
            },
            sensors: SensorConfig {
                half_angle_deg: half_angle,
                noise_width: 0.001,
                direction_noise_width: 0.001,
                rate_noise_width: 0.001,
                room_side: 10.0,
                point_velocity: PointVelocityMode::FiniteDifference,
            },
            filter: FilterConfig {
                omega_n: 2.0,
                mu: 0.5,
                bypass: false,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serialisable")
    }

    /// Parses a complete configuration.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| HarnessError::config("<file>", e.to_string()))?;
        Self::from_value(value)
    }

    /// Parses `text` as a partial configuration layered over `base`.
    pub fn overlay(base: &Self, text: &str) -> Result<Self, HarnessError> {
        let over: toml::Value = toml::from_str(text).map_err(|e| HarnessError::config("<file>", e.to_string()))?;
        let mut merged = toml::Value::try_from(base).expect("config is always serialisable");
        merge(&mut merged, over);
        Self::from_value(merged)
    }

    /// Reads a partial configuration file layered over a preset. An unreadable file
    /// is a config error, not an I/O error, so the CLI exits with the config code.
    pub fn load(path: &Path, preset: Preset) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::config(&path.display().to_string(), e.to_string()))?;
        Self::overlay(&Self::preset(preset), &text)
    }

    fn from_value(value: toml::Value) -> Result<Self, HarnessError> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::config(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the field at a dotted path, e.g. `gains.kappa`, from a TOML literal.
    pub fn with_override(&self, path: &str, literal: &str) -> Result<Self, HarnessError> {
        let mut root = toml::Value::try_from(self).expect("config is always serialisable");
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {literal}"))
            .map(|mut t| t.remove("v").expect("key present"))
            .unwrap_or_else(|_| toml::Value::String(literal.to_string()));
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(key))
                .ok_or_else(|| HarnessError::config(path, "no such field"))?;
        }
        *slot = parsed;
        Self::from_value(root)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let pos = |path: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(HarnessError::config(path, format!("must be positive, got {x}")))
            }
        };
        let nonneg = |path: &str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(HarnessError::config(path, format!("must be non-negative, got {x}")))
            }
        };
        pos("dt", self.dt)?;
        pos("truth_horizon", self.truth_horizon)?;
        pos("estimator_horizon", self.estimator_horizon)?;
        if self.estimator_horizon > self.truth_horizon {
            return Err(HarnessError::config("estimator_horizon", "must not exceed truth_horizon"));
        }
        for (path, h) in [("truth_horizon", self.truth_horizon), ("estimator_horizon", self.estimator_horizon)] {
            step_count(self.dt, h).map_err(|e| HarnessError::config(path, e.to_string()))?;
        }
        pos("vehicle.mass_g", self.vehicle.mass_g)?;
        for (k, x) in self.vehicle.inertia_g_m2.iter().enumerate() {
            pos(&format!("vehicle.inertia_g_m2[{k}]"), *x)?;
        }
        for (name, v) in [("j", &self.gains.j), ("m", &self.gains.m), ("d_r", &self.gains.d_r), ("d_t", &self.gains.d_t)] {
            for (k, x) in v.iter().enumerate() {
                pos(&format!("gains.{name}[{k}]"), *x)?;
            }
        }
        pos("gains.kappa", self.gains.kappa)?;
        GainSet::new(self.gains.to_gain_config()).map_err(|e| match e {
            GainError::Weights(w) => HarnessError::config("gains.varsigma", w.to_string()),
            other => HarnessError::config("gains", other.to_string()),
        })?;
        let ha = self.sensors.half_angle_deg;
        if !(ha > 0.0 && ha < 90.0) {
            return Err(HarnessError::config("sensors.half_angle_deg", "must lie in (0, 90)"));
        }
        nonneg("sensors.noise_width", self.sensors.noise_width)?;
        nonneg("sensors.direction_noise_width", self.sensors.direction_noise_width)?;
        nonneg("sensors.rate_noise_width", self.sensors.rate_noise_width)?;
        pos("sensors.room_side", self.sensors.room_side)?;
        pos("filter.omega_n", self.filter.omega_n)?;
        pos("filter.mu", self.filter.mu)?;
        for (path, a) in [
            ("initial_truth.attitude.axis", &self.initial_truth.attitude),
            ("initial_estimate.attitude.axis", &self.initial_estimate.attitude),
        ] {
            if a.angle_deg != 0.0 && Vec3::from(a.axis).norm() == 0.0 {
                return Err(HarnessError::config(path, "axis must be non-zero"));
            }
        }
        Ok(())
    }

    pub fn initial_truth_state(&self) -> TruthState {
        let s = &self.initial_truth;
        TruthState {
            pose: Pose::new(s.attitude.rotation(), Vec3::from(s.position)),
            twist: Twist::new(Vec3::from(s.omega), Vec3::from(s.nu)),
            time: 0.0,
        }
    }

    pub fn initial_estimate(&self) -> (Pose, Twist) {
        let s = &self.initial_estimate;
        (
            Pose::new(s.attitude.rotation(), Vec3::from(s.position)),
            Twist::new(Vec3::from(s.omega), Vec3::from(s.nu)),
        )
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            bump_width: self.sensors.noise_width,
            direction_width: self.sensors.direction_noise_width,
            rate_width: self.sensors.rate_noise_width,
            seed: self.seed,
        }
    }

    pub fn camera_rig(&self) -> CameraRig {
        CameraRig::horizontal_triplet(self.sensors.half_angle_deg.to_radians(), [Vec3::zeros(); 3])
            .expect("half angle validated")
    }

    pub fn truth_model(&self) -> TruthModel {
        let v = &self.vehicle;
        let params = VehicleParams::from_grams(v.mass_g, Vec3::from(v.inertia_g_m2)).expect("validated");
        TruthModel::new(params, v.wrench_frame)
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Estimation errors at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    /// Principal angle of `Q = RR̂ᵀ` (rad).
    pub angle: f64,
    /// `‖b − Qb̂‖` (m).
    pub position: f64,
    /// Angular block of `Ad_ĝ(ξ − ξ̂)`.
    pub omega: Vec3,
    /// Translational block of `Ad_ĝ(ξ − ξ̂)`.
    pub nu: Vec3,
}

pub fn error_metrics(truth: &TruthState, g_hat: &Pose, xi_hat: &Twist) -> ErrorMetrics {
    let (q, x) = pose_error(&truth.pose, g_hat);
    let e = adjoint_of_pose(g_hat) * (truth.twist.to_vec6() - xi_hat.to_vec6());
    ErrorMetrics {
        angle: principal_angle(&q),
        position: x.norm(),
        omega: e.fixed_rows::<3>(0).into_owned(),
        nu: e.fixed_rows::<3>(3).into_owned(),
    }
}

/// One row of the trace CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub ang_err: f64,
    pub pos_err: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub n_beacons: usize,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub steps: usize,
    pub initial_ang_err: f64,
    pub initial_pos_err: f64,
    pub final_ang_err: f64,
    pub final_pos_err: f64,
    /// First time after which the error stays below the threshold (absent if never).
    pub settle_ang_1e_2: Option<f64>,
    pub settle_ang_1e_3: Option<f64>,
    pub settle_pos_1e_2: Option<f64>,
    pub settle_pos_1e_3: Option<f64>,
    /// Statistics over the final quarter of the run.
    pub tail_ang_err: WindowStats,
    pub tail_pos_err: WindowStats,
    pub tail_omega_err: WindowStats,
    pub tail_nu_err: WindowStats,
    pub min_beacons: usize,
    pub max_beacons: usize,
    pub mean_newton_iters: f64,
    /// Epochs where the velocity reconstruction failed and the previous twist was held.
    pub velocity_holds: usize,
    /// Epochs where only inertial directions fed the attitude gradient.
    pub inertial_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub trace: Vec<TraceRow>,
    pub summary: Summary,
}

/// Trace CSV column order.
pub const TRACE_COLUMNS: [&str; 12] = [
    "t", "ang_err", "pos_err", "wx", "wy", "wz", "vx", "vy", "vz", "V", "n_beacons", "newton_iters",
];

pub fn write_trace_csv<W: Write>(writer: W, trace: &[TraceRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: std::io::Read>(reader: R) -> Result<Vec<TraceRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<Result<Vec<TraceRow>, _>>()?)
}

fn settle_time(trace: &[TraceRow], value: impl Fn(&TraceRow) -> f64, threshold: f64) -> Option<f64> {
    match trace.iter().rposition(|r| value(r) >= threshold) {
        None => trace.first().map(|r| r.t),
        Some(i) if i + 1 < trace.len() => Some(trace[i + 1].t),
        Some(_) => None,
    }
}

fn window(rows: &[TraceRow], value: impl Fn(&TraceRow) -> f64) -> WindowStats {
    let n = rows.len().max(1) as f64;
    WindowStats {
        mean: rows.iter().map(&value).sum::<f64>() / n,
        max: rows.iter().map(&value).fold(0.0, f64::max),
    }
}

/// Summary statistics recomputable from the trace alone (plus the run counters).
pub fn summarize(name: &str, seed: u64, trace: &[TraceRow], velocity_holds: usize, inertial_fallbacks: usize) -> Summary {
    let tail = &trace[trace.len() - (trace.len() / 4).max(1)..];
    let first = trace[0];
    let last = trace[trace.len() - 1];
    let w_norm = |r: &TraceRow| Vec3::new(r.wx, r.wy, r.wz).norm();
    let v_norm = |r: &TraceRow| Vec3::new(r.vx, r.vy, r.vz).norm();
    let steps = trace.len() - 1;
    Summary {
        name: name.to_string(),
        seed,
        steps,
        initial_ang_err: first.ang_err,
        initial_pos_err: first.pos_err,
        final_ang_err: last.ang_err,
        final_pos_err: last.pos_err,
        settle_ang_1e_2: settle_time(trace, |r| r.ang_err, 1e-2),
        settle_ang_1e_3: settle_time(trace, |r| r.ang_err, 1e-3),
        settle_pos_1e_2: settle_time(trace, |r| r.pos_err, 1e-2),
        settle_pos_1e_3: settle_time(trace, |r| r.pos_err, 1e-3),
        tail_ang_err: window(tail, |r| r.ang_err),
        tail_pos_err: window(tail, |r| r.pos_err),
        tail_omega_err: window(tail, w_norm),
        tail_nu_err: window(tail, v_norm),
        min_beacons: trace.iter().map(|r| r.n_beacons).min().unwrap_or(0),
        max_beacons: trace.iter().map(|r| r.n_beacons).max().unwrap_or(0),
        mean_newton_iters: trace[1..].iter().map(|r| r.newton_iters as f64).sum::<f64>() / steps.max(1) as f64,
        velocity_holds,
        inertial_fallbacks,
    }
}

/// Per-run overrides that are awkward to express in the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the configured initial pose estimate.
    pub initial_pose: Option<Pose>,
}

/// Builds the estimator's view of one epoch. Returns `None` for the attitude data
/// when no usable column set exists, in which case the caller keeps the previous one.
fn observation(
    m: &MeasurementSet,
    weights: &WeightSpec,
    xi_m: Twist,
    previous: Option<&Observation>,
) -> Option<(Observation, bool)> {
    let (attitude, fallback) = match epoch_attitude(m, weights) {
        Ok(a) => {
            let f = a.inertial_fallback;
            (a, f)
        }
        Err(_) => (previous?.attitude.clone(), true),
    };
    Some((
        Observation {
            attitude,
            means: m.means,
            xi_m,
        },
        fallback,
    ))
}

/// Runs the configured experiment in memory.
pub fn simulate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(RunReport, Vec<TruthState>), HarnessError> {
    cfg.validate()?;
    let truth = simulate_truth(&cfg.truth_model(), &cfg.initial_truth_state(), cfg.dt, cfg.truth_horizon)?;
    let n = step_count(cfg.dt, cfg.estimator_horizon)?;
    let world = World::cube_room(cfg.sensors.room_side);
    let rig = cfg.camera_rig();
    let noise = cfg.noise_model();
    let gains = GainSet::new(cfg.gains.to_gain_config()).expect("validated");
    let weights = gains.config.weights;
    let shaping = Shaping::identity();
    let lgvi = Lgvi::new(gains.clone(), shaping, cfg.dt).expect("validated");
    let (pose0, xi0) = cfg.initial_estimate();
    let pose0 = opts.initial_pose.unwrap_or(pose0);
    let mut recon = TwistReconstructor::new(cfg.velocity_source, cfg.filter.omega_n, cfg.filter.mu, cfg.dt, xi0)
        .expect("validated");
    recon.bypass = cfg.filter.bypass;

    let mut trace = Vec::with_capacity(n + 1);
    let mut state: Option<LgviState> = None;
    let mut prev_obs: Option<Observation> = None;
    let (mut holds, mut fallbacks) = (0, 0);
    for (i, truth_i) in truth.iter().enumerate().take(n + 1) {
        let m = match measure_epoch(truth_i, &world, &rig, &noise, cfg.sensors.point_velocity, i as u64) {
            Ok(m) => m,
            Err(SensorError::PoseUnobservable { partial, .. }) => *partial,
            Err(e) => return Err(e.into()),
        };
        let (xi_m, hold) = recon.step(&m);
        if hold != Hold::None && i > 0 {
            holds += 1;
        }
        let Some((obs, fallback)) = observation(&m, &weights, xi_m, prev_obs.as_ref()) else {
            return Err(HarnessError::config(
                "sensors",
                format!("epoch {i}: attitude unobservable and no earlier epoch to fall back on"),
            ));
        };
        fallbacks += fallback as usize;
        let (next, iters) = match &state {
            None => (LgviState::new(pose0, xi0, &obs.xi_m), 0),
            Some(s) => lgvi
                .step(s, &obs)
                .map_err(|source| HarnessError::Estimator { step: i, source })?,
        };
        let e = error_metrics(truth_i, &next.g_hat, &next.xi_hat);
        let est = crate::continuous::EstimatorState {
            g_hat: next.g_hat,
            phi: next.phi(),
        };
        let v = lyapunov_value(
            &est,
            &truth_i.pose,
            &obs.attitude.ctx.k,
            obs.means.as_ref().map(|m| &m.p_bar),
            &gains,
            &shaping,
        );
        trace.push(TraceRow {
            t: i as f64 * cfg.dt,
            ang_err: e.angle,
            pos_err: e.position,
            wx: e.omega.x,
            wy: e.omega.y,
            wz: e.omega.z,
            vx: e.nu.x,
            vy: e.nu.y,
            vz: e.nu.z,
            v,
            n_beacons: m.beacon_count(),
            newton_iters: iters,
        });
        state = Some(next);
        prev_obs = Some(obs);
    }
    let summary = summarize(&cfg.name, cfg.seed, &trace, holds, fallbacks);
    Ok((RunReport { trace, summary }, truth))
}

/// Runs the experiment and writes its files when an output directory is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    let (report, truth) = simulate(cfg, &RunOptions::default())?;
    if let Some(dir) = &cfg.output {
        write_outputs(dir, cfg, &report, &truth)?;
    }
    Ok(report)
}

pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, report: &RunReport, truth: &[TruthState]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_trace_csv(fs::File::create(dir.join("trace.csv"))?, &report.trace)?;
    write_truth_csv(fs::File::create(dir.join("truth.csv"))?, truth)?;
    fs::write(
        dir.join("summary.toml"),
        toml::to_string_pretty(&report.summary).expect("summary is serialisable"),
    )?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    if cfg.plot_script {
        fs::write(dir.join("plot.gp"), GNUPLOT_SCRIPT)?;
    }
    Ok(())
}

const GNUPLOT_SCRIPT: &str = "\
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 1000,700
set output 'errors.png'
set multiplot layout 2,1
set ylabel 'principal angle (rad)'
set logscale y
plot 'trace.csv' using 1:2 with lines
set ylabel 'position error (m)'
set xlabel 't (s)'
plot 'trace.csv' using 1:3 with lines
unset multiplot
";

/// One `FIELD=v1,v2,...` axis of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub field: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (field, values) = s.split_once('=').ok_or_else(|| format!("expected FIELD=v1,v2,..., got '{s}'"))?;
        let values: Vec<String> = split_values(values);
        if field.is_empty() || values.is_empty() {
            return Err(format!("expected FIELD=v1,v2,..., got '{s}'"));
        }
        Ok(Self {
            field: field.to_string(),
            values,
        })
    }
}

/// Splits on commas that are not inside brackets, so array literals survive.
fn split_values(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out.into_iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub overrides: Vec<(String, String)>,
    pub outcome: Result<Summary, String>,
}

/// Cartesian product of the axes, every cell run independently and in parallel.
/// Failures are recorded per cell; the sweep itself only fails on a bad axis.
pub fn sweep(base: &ExperimentConfig, axes: &[SweepAxis]) -> Result<Vec<SweepCell>, HarnessError> {
    let mut combos: Vec<Vec<(String, String)>> = vec![vec![]];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.field.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    // Reject unknown fields up front rather than once per cell.
    for axis in axes {
        base.with_override(&axis.field, &axis.values[0])?;
    }
    Ok(combos
        .into_par_iter()
        .enumerate()
        .map(|(index, overrides)| {
            let outcome = (|| {
                let mut cfg = base.clone();
                for (f, v) in &overrides {
                    cfg = cfg.with_override(f, v)?;
                }
                cfg.output = base.output.as_ref().map(|d| d.join(format!("cell_{index:03}")));
                run_experiment(&cfg).map(|r| r.summary)
            })()
            .map_err(|e| e.to_string());
            SweepCell {
                index,
                overrides,
                outcome,
            }
        })
        .collect())
}

/// `cell, overrides, status, final/tail metrics` per cell.
pub fn write_sweep_csv<W: Write>(writer: W, cells: &[SweepCell]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cell",
        "overrides",
        "status",
        "final_ang_err",
        "final_pos_err",
        "tail_ang_mean",
        "tail_pos_mean",
        "min_beacons",
        "error",
    ])?;
    for c in cells {
        let ov = c
            .overrides
            .iter()
            .map(|(f, v)| format!("{f}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        let rec: Vec<String> = match &c.outcome {
            Ok(s) => vec![
                c.index.to_string(),
                ov,
                "ok".into(),
                s.final_ang_err.to_string(),
                s.final_pos_err.to_string(),
                s.tail_ang_err.mean.to_string(),
                s.tail_pos_err.mean.to_string(),
                s.min_beacons.to_string(),
                String::new(),
            ],
            Err(e) => vec![
                c.index.to_string(),
                ov,
                "failed".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ],
        };
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
