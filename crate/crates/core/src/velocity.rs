//! Twist signals for the estimator when velocities are not measured directly:
//! second-order low-pass filtering, point-velocity kinematics and pseudo-inverse
//! reconstruction.

use crate::geometry::{hat3, Twist, Vec3};
use crate::sensors::MeasurementSet;
use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Largest accepted condition number of the normal matrix in [`reconstruct_twist`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VelocityError {
    #[error("no beacon velocities available this epoch")]
    NoBeacons,
    #[error("beacon geometry is ill conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("{a} positions but {v} velocities")]
    LengthMismatch { a: usize, v: usize },
    #[error("filter parameters must be positive (omega_n {omega_n}, mu {mu})")]
    BadFilter { omega_n: f64, mu: f64 },
}

/// State of `z̈ + 2μω_n ż + ω_n² z = ω_n² u`, advanced with the average-acceleration
/// Newmark scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ButterworthState<const N: usize> {
    pub z: SVector<f64, N>,
    pub z_dot: SVector<f64, N>,
    pub z_ddot: SVector<f64, N>,
    pub omega_n: f64,
    pub mu: f64,
}

impl<const N: usize> ButterworthState<N> {
    pub fn new(omega_n: f64, mu: f64, initial: SVector<f64, N>) -> Result<Self, VelocityError> {
        if !(omega_n > 0.0 && mu > 0.0) {
            return Err(VelocityError::BadFilter { omega_n, mu });
        }
        Ok(Self {
            z: initial,
            z_dot: SVector::zeros(),
            z_ddot: SVector::zeros(),
            omega_n,
            mu,
        })
    }

    /// `4 + 4μω_n dt + ω_n² dt²`.
    pub fn denominator(&self, dt: f64) -> f64 {
        let w = self.omega_n;
        4.0 + 4.0 * self.mu * w * dt + w * w * dt * dt
    }

    /// Advances one step given the inputs at the start and end of the step.
    pub fn step(&self, u_prev: &SVector<f64, N>, u_next: &SVector<f64, N>, dt: f64) -> Self {
        let w = self.omega_n;
        let w2 = w * w;
        let c = 4.0 * self.mu * w * dt;
        let den = self.denominator(dt);
        let u_sum = u_prev + u_next;
        let z = ((4.0 + c - w2 * dt * dt) * self.z + 4.0 * dt * self.z_dot + w2 * dt * dt * u_sum) / den;
        let z_dot = (-4.0 * w2 * dt * self.z + (4.0 - c - w2 * dt * dt) * self.z_dot + 2.0 * w2 * dt * u_sum) / den;
        let z_ddot = w2 * (u_next - z) - 2.0 * self.mu * w * z_dot;
        Self {
            z,
            z_dot,
            z_ddot,
            ..*self
        }
    }
}

/// Butterworth filter that remembers its previous input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lowpass<const N: usize> {
    pub state: ButterworthState<N>,
    last_input: SVector<f64, N>,
}

impl<const N: usize> Lowpass<N> {
    /// Starts at rest on the first measurement.
    pub fn new(omega_n: f64, mu: f64, first: SVector<f64, N>) -> Result<Self, VelocityError> {
        Ok(Self {
            state: ButterworthState::new(omega_n, mu, first)?,
            last_input: first,
        })
    }

    pub fn push(&mut self, input: SVector<f64, N>, dt: f64) -> SVector<f64, N> {
        self.state = self.state.step(&self.last_input, &input, dt);
        self.last_input = input;
        self.state.z
    }

    pub fn output(&self) -> SVector<f64, N> {
        self.state.z
    }
}

/// `G(a) = [a^× | −I]`, so that `G(a)ξ = a × Ω − ν` is the body-frame rate of `a`.
pub fn g_of(a: &Vec3) -> SMatrix<f64, 3, 6> {
    let mut g = SMatrix::<f64, 3, 6>::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(a));
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-nalgebra::Matrix3::identity()));
    g
}

fn stack(a: &[Vec3], v: &[Vec3]) -> (DMatrix<f64>, DVector<f64>) {
    let j = a.len();
    let mut g = DMatrix::zeros(3 * j, 6);
    let mut rhs = DVector::zeros(3 * j);
    for (k, (ak, vk)) in a.iter().zip(v).enumerate() {
        g.view_mut((3 * k, 0), (3, 6)).copy_from(&g_of(ak));
        rhs.rows_mut(3 * k, 3).copy_from(vk);
    }
    (g, rhs)
}

fn condition(sym: &DMatrix<f64>) -> f64 {
    let eig = sym.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least-squares twist from point positions and velocities.
///
/// With three or more beacons the stacked system is overdetermined and solved by
/// the left pseudo-inverse. With one beacon it is underdetermined and the right
/// pseudo-inverse gives the minimum-norm twist. Two beacons give a rank-5 system
/// (rotation about the line through them is invisible); the minimum-norm twist is
/// found by removing that null direction explicitly.
pub fn reconstruct_twist(a: &[Vec3], v: &[Vec3]) -> Result<Twist, VelocityError> {
    if a.len() != v.len() {
        return Err(VelocityError::LengthMismatch { a: a.len(), v: v.len() });
    }
    if a.is_empty() {
        return Err(VelocityError::NoBeacons);
    }
    let (g, rhs) = stack(a, v);
    let xi = match a.len() {
        1 => {
            let ggt = &g * g.transpose();
            let cond = condition(&ggt);
            if cond > MAX_CONDITION {
                return Err(VelocityError::IllConditioned(cond));
            }
            let y = ggt.cholesky().ok_or(VelocityError::IllConditioned(cond))?.solve(&rhs);
            g.transpose() * y
        }
        2 => {
            // The null space is spanned by rotation about the line through the two
            // beacons: Ω = e, ν = a₁ × e. Adding n nᵀ to the normal matrix makes it
            // invertible without moving the solution off the orthogonal complement of n.
            let baseline = a[1] - a[0];
            let len = baseline.norm();
            let scale = a[0].norm().max(a[1].norm()).max(1.0);
            if !(len > scale / MAX_CONDITION.sqrt()) {
                return Err(VelocityError::IllConditioned(f64::INFINITY));
            }
            let e = baseline / len;
            let nu = a[0].cross(&e);
            let n = DVector::from_iterator(6, e.iter().chain(nu.iter()).copied()) / (1.0 + nu.norm_squared()).sqrt();
            let gtg = g.transpose() * &g + &n * n.transpose();
            let cond = condition(&gtg);
            if cond > MAX_CONDITION {
                return Err(VelocityError::IllConditioned(cond));
            }
            let rhs6 = g.transpose() * rhs;
            gtg.cholesky().ok_or(VelocityError::IllConditioned(cond))?.solve(&rhs6)
        }
        _ => {
            let gtg = g.transpose() * &g;
            let cond = condition(&gtg);
            if cond > MAX_CONDITION {
                return Err(VelocityError::IllConditioned(cond));
            }
            let rhs6 = g.transpose() * rhs;
            gtg.cholesky().ok_or(VelocityError::IllConditioned(cond))?.solve(&rhs6)
        }
    };
    Ok(Twist::new(
        Vec3::new(xi[0], xi[1], xi[2]),
        Vec3::new(xi[3], xi[4], xi[5]),
    ))
}

/// Translational velocity from point velocities and a measured angular velocity,
/// averaged over the beacons.
pub fn nu_from_gyro(a: &[Vec3], v: &[Vec3], omega: &Vec3) -> Result<Vec3, VelocityError> {
    if a.len() != v.len() {
        return Err(VelocityError::LengthMismatch { a: a.len(), v: v.len() });
    }
    if a.is_empty() {
        return Err(VelocityError::NoBeacons);
    }
    let sum: Vec3 = a.iter().zip(v).map(|(a, v)| a.cross(omega) - v).sum();
    Ok(sum / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocitySource {
    /// Full twist measured by rate sensors.
    Direct,
    /// Angular rate measured; translational velocity from beacons.
    #[serde(alias = "gyroaided", alias = "gyro_aided")]
    Gyro,
    /// Both velocities from beacons.
    #[serde(alias = "opticalonly", alias = "optical_only")]
    Optical,
}

impl std::str::FromStr for VelocitySource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Self::Direct),
            "gyro" => Ok(Self::Gyro),
            "optical" => Ok(Self::Optical),
            other => Err(format!("unknown velocity source '{other}' (direct|gyro|optical)")),
        }
    }
}

#[derive(Debug, Clone)]
struct BeaconTrack {
    last_epoch: u64,
    last_raw: Vec3,
    position: Lowpass<3>,
    velocity: Option<Lowpass<3>>,
}

/// Why the previous twist was reused for an epoch.
#[derive(Debug, Clone, PartialEq)]
pub enum Hold {
    None,
    Failed(VelocityError),
}

/// Turns per-epoch measurements into the filtered twist `ξ^f`.
#[derive(Debug, Clone)]
pub struct TwistReconstructor {
    pub source: VelocitySource,
    pub omega_n: f64,
    pub mu: f64,
    pub dt: f64,
    /// Skip the low-pass stage and use raw signals.
    pub bypass: bool,
    tracks: BTreeMap<usize, BeaconTrack>,
    twist_filter: Option<Lowpass<6>>,
    gyro_filter: Option<Lowpass<3>>,
    held: Twist,
}

impl TwistReconstructor {
    /// `initial` is returned until the first reconstruction succeeds.
    pub fn new(source: VelocitySource, omega_n: f64, mu: f64, dt: f64, initial: Twist) -> Result<Self, VelocityError> {
        ButterworthState::<1>::new(omega_n, mu, SVector::zeros())?;
        Ok(Self {
            source,
            omega_n,
            mu,
            dt,
            bypass: false,
            tracks: BTreeMap::new(),
            twist_filter: None,
            gyro_filter: None,
            held: initial,
        })
    }

    fn filter3(&self, slot: Option<Lowpass<3>>, x: Vec3) -> Lowpass<3> {
        match slot.filter(|_| !self.bypass) {
            Some(mut f) => {
                f.push(x, self.dt);
                f
            }
            None => Lowpass::new(self.omega_n, self.mu, x).expect("validated in new"),
        }
    }

    /// Filtered positions and velocities of beacons whose velocity is available.
    fn update_tracks(&mut self, m: &MeasurementSet) -> (Vec<Vec3>, Vec<Vec3>) {
        let mut a_f = Vec::new();
        let mut v_f = Vec::new();
        let mut next = BTreeMap::new();
        for (k, &idx) in m.indices.iter().enumerate() {
            let a = m.a_m[k];
            let prior = self
                .tracks
                .remove(&idx)
                .filter(|t| t.last_epoch + 1 == m.epoch);
            let track = match prior {
                Some(t) => {
                    let raw_v = m.v_m[k].unwrap_or((a - t.last_raw) / self.dt);
                    BeaconTrack {
                        last_epoch: m.epoch,
                        last_raw: a,
                        position: self.filter3(Some(t.position), a),
                        velocity: Some(self.filter3(t.velocity, raw_v)),
                    }
                }
                None => BeaconTrack {
                    last_epoch: m.epoch,
                    last_raw: a,
                    position: self.filter3(None, a),
                    velocity: m.v_m[k].map(|v| self.filter3(None, v)),
                },
            };
            if let Some(vf) = &track.velocity {
                a_f.push(track.position.output());
                v_f.push(vf.output());
            }
            next.insert(idx, track);
        }
        self.tracks = next;
        (a_f, v_f)
    }

    /// Consumes one epoch and returns `ξ^f` together with whether it was held over.
    pub fn step(&mut self, m: &MeasurementSet) -> (Twist, Hold) {
        let result = match self.source {
            VelocitySource::Direct => {
                let x = m.twist_m.to_vec6();
                let f = match self.twist_filter.take().filter(|_| !self.bypass) {
                    Some(mut f) => {
                        f.push(x, self.dt);
                        f
                    }
                    None => Lowpass::new(self.omega_n, self.mu, x).expect("validated in new"),
                };
                let out = Twist::from_vec6(&f.output());
                self.twist_filter = Some(f);
                Ok(out)
            }
            VelocitySource::Gyro => {
                let slot = self.gyro_filter.take();
                let g = self.filter3(slot, m.twist_m.omega);
                let omega = g.output();
                self.gyro_filter = Some(g);
                let (a_f, v_f) = self.update_tracks(m);
                nu_from_gyro(&a_f, &v_f, &omega).map(|nu| Twist::new(omega, nu))
            }
            VelocitySource::Optical => {
                let (a_f, v_f) = self.update_tracks(m);
                reconstruct_twist(&a_f, &v_f)
            }
        };
        match result {
            Ok(t) => {
                self.held = t;
                (t, Hold::None)
            }
            Err(e) => (self.held, Hold::Failed(e)),
        }
    }
}
