//! Continuous-time estimator: the filter ODE on SE(3) × ℝ⁶, its Lyapunov function,
//! and a fine-step integrator used as a reference for the discrete filter.

use crate::geometry::{ad_small, adjoint_of_pose, coad, exp_se3, hat3, Mat3, Mat6, Pose, Twist, Vec3, Vec6};
use crate::sensors::{measure_beacons, BeaconMeans, NoiseModel, PointVelocityMode, World};
use crate::truth::TruthState;
use crate::wahba::{epoch_attitude, measured_potential, s_gamma, wahba_value, EpochAttitude, Shaping, WahbaError, WeightSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("gain {0} must be symmetric positive definite")]
    NotSpd(&'static str),
    #[error("kappa must be positive, got {0}")]
    Kappa(f64),
    #[error(transparent)]
    Weights(#[from] WahbaError),
}

/// Estimator gains as configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainConfig {
    pub j: Mat3,
    pub m: Mat3,
    pub d_r: Mat3,
    pub d_t: Mat3,
    pub kappa: f64,
    pub weights: WeightSpec,
}

impl GainConfig {
    pub fn reference() -> Self {
        let diag = |a: f64, b: f64, c: f64| Mat3::from_diagonal(&Vec3::new(a, b, c));
        Self {
            j: diag(0.9, 0.6, 0.3),
            m: diag(0.0608, 0.0486, 0.0365),
            d_r: diag(2.7, 2.2, 1.5),
            d_t: diag(0.1, 0.12, 0.14),
            kappa: 1.0,
            weights: WeightSpec::default(),
        }
    }
}

/// Validated gains with the block matrices and inverses precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub config: GainConfig,
    /// `𝕁 = diag(J, M)`.
    pub big_j: Mat6,
    pub big_j_inv: Mat6,
    /// `𝔻 = diag(𝔻_r, 𝔻_t)`.
    pub big_d: Mat6,
}

fn check_spd(m: &Mat3, name: &'static str) -> Result<(), GainError> {
    if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) || m.cholesky().is_none() {
        return Err(GainError::NotSpd(name));
    }
    Ok(())
}

fn block_diag(a: &Mat3, b: &Mat3) -> Mat6 {
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(a);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(b);
    m
}

impl GainSet {
    pub fn new(config: GainConfig) -> Result<Self, GainError> {
        check_spd(&config.j, "J")?;
        check_spd(&config.m, "M")?;
        check_spd(&config.d_r, "D_r")?;
        check_spd(&config.d_t, "D_t")?;
        if !(config.kappa > 0.0) {
            return Err(GainError::Kappa(config.kappa));
        }
        config.weights.validate()?;
        let big_j = block_diag(&config.j, &config.m);
        let big_j_inv = block_diag(
            &config.j.try_inverse().expect("SPD"),
            &config.m.try_inverse().expect("SPD"),
        );
        Ok(Self {
            config,
            big_j,
            big_j_inv,
            big_d: block_diag(&config.d_r, &config.d_t),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.config.kappa
    }
}

/// Everything the filter needs from one epoch of measurements.
#[derive(Debug, Clone)]
pub struct Observation {
    pub attitude: EpochAttitude,
    /// Absent when no beacon is in view; the position feedback is then switched off.
    pub means: Option<BeaconMeans>,
    /// Velocity signal `ξ^m` (or its filtered substitute).
    pub xi_m: Twist,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    pub g_hat: Pose,
    /// Velocity estimation error `φ = [ω; υ]`.
    pub phi: Vec6,
}

impl EstimatorState {
    /// State whose velocity estimate is `xi_hat` given the measured `xi_m`.
    pub fn from_estimates(g_hat: Pose, xi_hat: &Twist, xi_m: &Twist) -> Self {
        let phi = adjoint_of_pose(&g_hat) * (xi_m.to_vec6() - xi_hat.to_vec6());
        Self { g_hat, phi }
    }

    /// `ξ̂ = ξ^m − Ad(ĝ⁻¹)φ`.
    pub fn xi_hat(&self, xi_m: &Twist) -> Twist {
        Twist::from_vec6(&(xi_m.to_vec6() - adjoint_of_pose(&self.g_hat.inverse()) * self.phi))
    }

    pub fn omega(&self) -> Vec3 {
        self.phi.fixed_rows::<3>(0).into_owned()
    }

    pub fn upsilon(&self) -> Vec3 {
        self.phi.fixed_rows::<3>(3).into_owned()
    }
}

/// `y = p̄ − R̂ā^m − b̂`.
pub fn position_residual(g_hat: &Pose, means: &BeaconMeans) -> Vec3 {
    means.p_bar - g_hat.rotation * means.a_bar_m - g_hat.translation
}

/// Gradient of the measured potential, `[Φ′ S_Γ + κ p̄^× y; κ y]`.
pub fn z_vector(g_hat: &Pose, obs: &Observation, gains: &GainSet, shaping: &Shaping) -> Vec6 {
    let att = &obs.attitude;
    let r_hat = &g_hat.rotation;
    let s = s_gamma(r_hat, &att.l_m, &att.d, &att.ctx.w).expect("shapes fixed by epoch_attitude");
    let u0 = measured_potential(r_hat, &att.l_m, &att.d, &att.ctx.w).expect("shapes fixed by epoch_attitude");
    let mut top = (shaping.derivative)(u0) * s;
    let mut bottom = Vec3::zeros();
    if let Some(means) = &obs.means {
        let y = position_residual(g_hat, means);
        top += gains.kappa() * hat3(&means.p_bar) * y;
        bottom = gains.kappa() * y;
    }
    let mut z = Vec6::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&top);
    z.fixed_rows_mut::<3>(3).copy_from(&bottom);
    z
}

/// `(φ̇, ξ̂)` with `𝕁φ̇ = ad*_φ 𝕁φ − Z − 𝔻φ`.
pub fn rhs(state: &EstimatorState, obs: &Observation, gains: &GainSet, shaping: &Shaping) -> (Vec6, Twist) {
    let phi = &state.phi;
    let z = z_vector(&state.g_hat, obs, gains, shaping);
    let dphi = gains.big_j_inv * (coad(phi) * (gains.big_j * phi) - z - gains.big_d * phi);
    (dphi, state.xi_hat(&obs.xi_m))
}

/// Noise-free observations as a function of time.
pub trait ObservationSource {
    fn observe(&self, t: f64) -> Observation;
    fn truth(&self, t: f64) -> TruthState;
}

/// Rigid body moving with a constant body twist, observed without noise through a
/// fixed set of beacons plus the world's inertial directions.
#[derive(Debug, Clone)]
pub struct ConstantTwistScene {
    pub start: Pose,
    pub twist: Twist,
    pub world: World,
    pub beacons: Vec<usize>,
    pub weights: WeightSpec,
}

impl ObservationSource for ConstantTwistScene {
    fn truth(&self, t: f64) -> TruthState {
        TruthState {
            pose: self.start * exp_se3(&self.twist, t),
            twist: self.twist,
            time: t,
        }
    }

    fn observe(&self, t: f64) -> Observation {
        let m = measure_beacons(
            &self.truth(t),
            &self.world,
            &self.beacons,
            &NoiseModel::noiseless(),
            PointVelocityMode::FiniteDifference,
            0,
        )
        .expect("scene has enough vectors");
        Observation {
            attitude: epoch_attitude(&m, &self.weights).expect("scene has full rank"),
            means: m.means,
            xi_m: m.twist_m,
        }
    }
}

/// State plus the dissipated energy `∫ φᵀ𝔻φ dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousRun {
    pub state: EstimatorState,
    pub t: f64,
    pub dissipated: f64,
}

/// One fourth-order Runge–Kutta–Munthe-Kaas step. `φ` and the dissipation integral
/// use the classical tableau; the pose is advanced in exponential coordinates
/// centred at the start of the step.
pub fn integrate_step<S: ObservationSource + ?Sized>(
    run: &ContinuousRun,
    source: &S,
    gains: &GainSet,
    shaping: &Shaping,
    dt: f64,
) -> ContinuousRun {
    let g0 = run.state.g_hat;
    let phi0 = run.state.phi;
    // Right-trivialised dexp⁻¹ truncated after the third-order term.
    let dexpinv = |u: &Vec6, xi: &Vec6| {
        let adu = ad_small(u);
        let b1 = adu * xi;
        xi + 0.5 * b1 + adu * b1 / 12.0
    };
    let stage = |u: &Vec6, phi: &Vec6, t: f64| {
        let g = g0 * exp_se3(&Twist::from_vec6(u), 1.0);
        let st = EstimatorState { g_hat: g, phi: *phi };
        let obs = source.observe(t);
        let (dphi, xi_hat) = rhs(&st, &obs, gains, shaping);
        let de = phi.dot(&(gains.big_d * phi));
        (dexpinv(u, &xi_hat.to_vec6()), dphi, de)
    };
    let t = run.t;
    let h = dt;
    let (ku1, kp1, ke1) = stage(&Vec6::zeros(), &phi0, t);
    let (ku2, kp2, ke2) = stage(&(ku1 * (h / 2.0)), &(phi0 + kp1 * (h / 2.0)), t + h / 2.0);
    let (ku3, kp3, ke3) = stage(&(ku2 * (h / 2.0)), &(phi0 + kp2 * (h / 2.0)), t + h / 2.0);
    let (ku4, kp4, ke4) = stage(&(ku3 * h), &(phi0 + kp3 * h), t + h);
    let u = (ku1 + 2.0 * ku2 + 2.0 * ku3 + ku4) * (h / 6.0);
    let phi = phi0 + (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4) * (h / 6.0);
    ContinuousRun {
        state: EstimatorState {
            g_hat: g0 * exp_se3(&Twist::from_vec6(&u), 1.0),
            phi,
        },
        t: t + h,
        dissipated: run.dissipated + (ke1 + 2.0 * ke2 + 2.0 * ke3 + ke4) * (h / 6.0),
    }
}

/// Pose estimation error `h = g ĝ⁻¹` as `(Q, x)`.
pub fn pose_error(truth: &Pose, g_hat: &Pose) -> (Mat3, Vec3) {
    let q = truth.rotation * g_hat.rotation.transpose();
    let x = truth.translation - q * g_hat.translation;
    (q, x)
}

/// `V = ½φᵀ𝕁φ + Φ(⟨I − Q, K⟩) + ½κ‖y‖²` with `y = Qᵀx + (I − Qᵀ)p̄`.
/// Without beacons the position term is dropped.
pub fn lyapunov_value(
    state: &EstimatorState,
    truth: &Pose,
    k: &Mat3,
    p_bar: Option<&Vec3>,
    gains: &GainSet,
    shaping: &Shaping,
) -> f64 {
    let (q, x) = pose_error(truth, &state.g_hat);
    let kinetic = 0.5 * state.phi.dot(&(gains.big_j * state.phi));
    let attitude = (shaping.value)(wahba_value(&q, k));
    let position = p_bar.map_or(0.0, |p| {
        let y = q.transpose() * x + (Mat3::identity() - q.transpose()) * p;
        0.5 * gains.kappa() * y.norm_squared()
    });
    kinetic + attitude + position
}
