//! Ground-truth rigid-body trajectories.
//!
//! Velocities follow body-frame Newton–Euler dynamics integrated with classical
//! RK4; the pose is advanced with the exact group exponential of the
//! start-of-step twist so rotations never leave SO(3).

use crate::geometry::{exp_se3, exp_so3, Mat3, Pose, Twist, Vec3};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TruthError {
    #[error("vehicle mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("vehicle inertia must be symmetric positive definite")]
    BadInertia,
    #[error("horizon {horizon} is not an integer multiple of dt {dt}")]
    HorizonNotMultiple { horizon: f64, dt: f64 },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mass properties in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass: f64,
    pub inertia: Mat3,
}

impl VehicleParams {
    pub fn new(mass: f64, inertia: Mat3) -> Result<Self, TruthError> {
        if !(mass > 0.0) {
            return Err(TruthError::NonPositiveMass(mass));
        }
        if (inertia - inertia.transpose()).abs().max() > 1e-12 || inertia.cholesky().is_none() {
            return Err(TruthError::BadInertia);
        }
        Ok(Self { mass, inertia })
    }

    /// Converts grams and g·m² (principal moments) to SI.
    pub fn from_grams(mass_g: f64, principal_g_m2: Vec3) -> Result<Self, TruthError> {
        Self::new(mass_g * 1e-3, Mat3::from_diagonal(&(principal_g_m2 * 1e-3)))
    }

    /// 420 g quadrotor-sized vehicle used in the reference scenario.
    pub fn reference_vehicle() -> Self {
        Self::from_grams(420.0, Vec3::new(51.2, 60.2, 59.6)).expect("valid constants")
    }
}

/// Frame in which the applied force and torque are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrenchFrame {
    #[default]
    Body,
    Inertial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    /// N
    pub force: Vec3,
    /// N·m
    pub torque: Vec3,
}

/// Slowly varying excitation: `φ(t) = 1e-3·[10cos(0.1t), 2sin(0.2t), −2sin(0.5t)]`
/// newtons, and torque `1e-6·φ(t)` newton-metres.
pub fn wrench_profile(t: f64) -> Wrench {
    let force = 1e-3
        * Vec3::new(
            10.0 * (0.1 * t).cos(),
            2.0 * (0.2 * t).sin(),
            -2.0 * (0.5 * t).sin(),
        );
    Wrench {
        force,
        torque: force * 1e-6,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub pose: Pose,
    pub twist: Twist,
    pub time: f64,
}

/// Everything that drives the truth integrator besides the state itself.
#[derive(Debug, Clone, Copy)]
pub struct TruthModel {
    pub params: VehicleParams,
    pub frame: WrenchFrame,
    /// Set to false for a force-free body.
    pub forced: bool,
}

impl TruthModel {
    pub fn new(params: VehicleParams, frame: WrenchFrame) -> Self {
        Self {
            params,
            frame,
            forced: true,
        }
    }

    pub fn force_free(params: VehicleParams) -> Self {
        Self {
            params,
            frame: WrenchFrame::Body,
            forced: false,
        }
    }

    fn body_wrench(&self, t: f64, rotation: &Mat3) -> (Vec3, Vec3) {
        if !self.forced {
            return (Vec3::zeros(), Vec3::zeros());
        }
        let w = wrench_profile(t);
        match self.frame {
            WrenchFrame::Body => (w.force, w.torque),
            WrenchFrame::Inertial => {
                let rt = rotation.transpose();
                (rt * w.force, rt * w.torque)
            }
        }
    }

    /// Body-frame accelerations `(Ω̇, ν̇)`.
    fn accel(&self, t: f64, rotation: &Mat3, twist: &Twist) -> Twist {
        let (force, torque) = self.body_wrench(t, rotation);
        let j = &self.params.inertia;
        let jw = j * twist.omega;
        let omega_dot = j
            .cholesky()
            .expect("inertia validated at construction")
            .solve(&(jw.cross(&twist.omega) + torque));
        let nu_dot = force / self.params.mass - twist.omega.cross(&twist.nu);
        Twist::new(omega_dot, nu_dot)
    }
}

/// One step of the truth integrator.
pub fn truth_step(s: &TruthState, model: &TruthModel, dt: f64) -> TruthState {
    let t = s.time;
    let r = s.pose.rotation;
    // Stage attitudes only matter for inertial-frame wrenches.
    let r_at = |c: f64| r * exp_so3(&(s.twist.omega * (c * dt)));
    let add = |a: &Twist, k: &Twist, h: f64| Twist::new(a.omega + k.omega * h, a.nu + k.nu * h);

    let k1 = model.accel(t, &r, &s.twist);
    let k2 = model.accel(t + 0.5 * dt, &r_at(0.5), &add(&s.twist, &k1, 0.5 * dt));
    let k3 = model.accel(t + 0.5 * dt, &r_at(0.5), &add(&s.twist, &k2, 0.5 * dt));
    let k4 = model.accel(t + dt, &r_at(1.0), &add(&s.twist, &k3, dt));
    let twist = Twist::new(
        s.twist.omega + (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega) * (dt / 6.0),
        s.twist.nu + (k1.nu + 2.0 * k2.nu + 2.0 * k3.nu + k4.nu) * (dt / 6.0),
    );
    TruthState {
        pose: s.pose * exp_se3(&s.twist, dt),
        twist,
        time: t + dt,
    }
}

/// Number of whole steps in `horizon`, rejecting horizons that are not multiples of `dt`.
pub fn step_count(dt: f64, horizon: f64) -> Result<usize, TruthError> {
    if !(dt > 0.0) {
        return Err(TruthError::NonPositiveStep(dt));
    }
    let n = (horizon / dt).round();
    if n < 0.0 || (n * dt - horizon).abs() > 1e-9 * horizon.abs().max(1.0) {
        return Err(TruthError::HorizonNotMultiple { horizon, dt });
    }
    Ok(n as usize)
}

/// `N + 1` samples starting at `initial`, where `horizon = N·dt`.
pub fn simulate_truth(
    model: &TruthModel,
    initial: &TruthState,
    dt: f64,
    horizon: f64,
) -> Result<Vec<TruthState>, TruthError> {
    let n = step_count(dt, horizon)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(*initial);
    for i in 0..n {
        let mut next = truth_step(&out[i], model, dt);
        // Avoid accumulating round-off in the clock.
        next.time = initial.time + (i + 1) as f64 * dt;
        out.push(next);
    }
    Ok(out)
}

/// Writes `t, R (row-major, 9), b (3), Ω (3), ν (3)` per sample.
pub fn write_truth_csv<W: Write>(writer: W, traj: &[TruthState]) -> Result<(), TruthError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "t", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "bx", "by", "bz",
        "wx", "wy", "wz", "vx", "vy", "vz",
    ])?;
    for s in traj {
        let r = &s.pose.rotation;
        let mut row = Vec::with_capacity(19);
        row.push(s.time);
        for i in 0..3 {
            for j in 0..3 {
                row.push(r[(i, j)]);
            }
        }
        row.extend(s.pose.translation.iter());
        row.extend(s.twist.omega.iter());
        row.extend(s.twist.nu.iter());
        w.write_record(row.iter().map(|x| format!("{x:.17e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::orthonormality_error;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    pub(crate) fn reference_initial() -> TruthState {
        TruthState {
            pose: Pose::new(
                exp_so3(&(Vec3::new(3.0, -6.0, 2.0) / 7.0 * (PI / 4.0))),
                Vec3::new(2.5, 0.5, -3.0),
            ),
            twist: Twist::new(Vec3::new(0.2, -0.05, 0.1), Vec3::new(-0.05, 0.15, 0.03)),
            time: 0.0,
        }
    }

    #[test]
    fn wrench_values() {
        let w = wrench_profile(0.0);
        assert_eq!(w.force, Vec3::new(0.01, 0.0, 0.0));
        assert_relative_eq!(w.torque, Vec3::new(1e-8, 0.0, 0.0));
        let w = wrench_profile(5.0 * PI);
        assert!(w.force.x.abs() < 1e-17);
        let w = wrench_profile(3.7);
        for i in 0..3 {
            assert_relative_eq!(w.torque[i], 1e-6 * w.force[i]);
        }
    }

    #[test]
    fn unit_conversion() {
        let p = VehicleParams::reference_vehicle();
        assert_relative_eq!(p.mass, 0.42);
        assert_relative_eq!(p.inertia[(1, 1)], 0.0602);
        assert!(VehicleParams::new(-1.0, Mat3::identity()).is_err());
        assert!(VehicleParams::new(1.0, -Mat3::identity()).is_err());
    }

    #[test]
    fn equilibrium_is_fixed() {
        let model = TruthModel::force_free(VehicleParams::reference_vehicle());
        let s = TruthState {
            pose: Pose::new(exp_so3(&Vec3::new(0.1, 0.2, 0.3)), Vec3::new(1.0, 2.0, 3.0)),
            twist: Twist::zero(),
            time: 1.0,
        };
        let n = truth_step(&s, &model, 0.02);
        assert_eq!(n.pose, s.pose);
        assert_eq!(n.twist, s.twist);
        assert_relative_eq!(n.time, 1.02);
    }

    #[test]
    fn force_free_conservation() {
        let params = VehicleParams::reference_vehicle();
        let model = TruthModel::force_free(params);
        let s0 = reference_initial();
        let traj = simulate_truth(&model, &s0, 0.001, 1.0).unwrap();
        let energy = |s: &TruthState| {
            0.5 * s.twist.omega.dot(&(params.inertia * s.twist.omega))
                + 0.5 * params.mass * s.twist.nu.norm_squared()
        };
        let e0 = energy(&s0);
        let n0 = s0.twist.nu.norm();
        let last = traj.last().unwrap();
        assert!((energy(last) - e0).abs() < 1e-9);
        assert!((last.twist.nu.norm() - n0).abs() < 1e-9);
        // dt = 0.02 stays close to the small-step oracle
        let coarse = simulate_truth(&model, &s0, 0.02, 1.0).unwrap();
        let c = coarse.last().unwrap();
        assert!((c.twist.to_vec6() - last.twist.to_vec6()).norm() < 1e-9);
    }

    #[test]
    fn sample_counts_and_horizon_checks() {
        let model = TruthModel::new(VehicleParams::reference_vehicle(), WrenchFrame::Body);
        let s0 = reference_initial();
        assert_eq!(simulate_truth(&model, &s0, 0.02, 0.0).unwrap().len(), 1);
        assert_eq!(step_count(0.02, 150.0).unwrap(), 7500);
        assert!(step_count(0.02, 0.03).is_err());
        assert!(step_count(0.0, 1.0).is_err());
    }

    #[test]
    fn richardson_two_half_steps() {
        let model = TruthModel::new(VehicleParams::reference_vehicle(), WrenchFrame::Inertial);
        let s0 = reference_initial();
        let err = |dt: f64| {
            let one = truth_step(&s0, &model, dt);
            let half = truth_step(&truth_step(&s0, &model, dt / 2.0), &model, dt / 2.0);
            (one.pose.translation - half.pose.translation).norm()
        };
        // pose uses the start-of-step twist: one-step discrepancy scales as dt²
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn reference_trajectory_room_exit_and_so3() {
        let model = TruthModel::new(VehicleParams::reference_vehicle(), WrenchFrame::Body);
        let traj = simulate_truth(&model, &reference_initial(), 0.02, 150.0).unwrap();
        assert_eq!(traj.len(), 7501);
        // Inside the 10 m room for the whole 20 s estimator window; the initial
        // drift along the spin axis carries it through a wall shortly before 30 s.
        let first_out = traj
            .iter()
            .find(|s| s.pose.translation.abs().max() >= 5.0)
            .map(|s| s.time)
            .unwrap();
        assert!(first_out > 20.0 && first_out < 30.0, "exit at {first_out}");
        assert!(orthonormality_error(&traj.last().unwrap().pose.rotation) < 1e-9);
        let again = simulate_truth(&model, &reference_initial(), 0.02, 150.0).unwrap();
        assert_eq!(traj, again);
    }

    #[test]
    fn csv_export_shape() {
        let model = TruthModel::new(VehicleParams::reference_vehicle(), WrenchFrame::Body);
        let traj = simulate_truth(&model, &reference_initial(), 0.02, 0.1).unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[1].split(',').count(), 19);
    }
}
