//! First-order Lie group variational integrator of the estimator, with the
//! implicit rotation solve.

use crate::continuous::{position_residual, GainSet, Observation};
use crate::geometry::{adjoint_of_pose, exp_se3, exp_so3, hat3, vex_antisym, Mat3, Pose, Twist, Vec3, Vec6};
use crate::wahba::{measured_potential, s_gamma, Shaping};
use thiserror::Error;

pub const NEWTON_MAX_ITERS: usize = 50;
/// Frobenius norm of the matrix residual accepted from [`solve_f`].
pub const NEWTON_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscreteError {
    #[error("rotation solve did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
}

/// `𝒥 = ½tr(J)I − J`, satisfying `(Jω)^× = ω^×𝒥 + 𝒥ω^×`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalJ(pub Mat3);

pub fn cal_j(j: &Mat3) -> CalJ {
    CalJ(0.5 * j.trace() * Mat3::identity() - j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FSolution {
    pub f: Mat3,
    pub iterations: usize,
    /// Frobenius norm of `(F𝒥 − 𝒥Fᵀ)/dt − (Jω)^×`.
    pub residual: f64,
}

/// Solves `(Jω)^× = (F𝒥 − 𝒥Fᵀ)/dt` for `F ∈ SO(3)` by Newton iteration with
/// right-multiplicative updates `F ← F·exp(ε^×)`, starting from `exp(dt·ω)`.
pub fn solve_f(j: &Mat3, omega: &Vec3, dt: f64) -> Result<FSolution, DiscreteError> {
    if !(dt > 0.0) {
        return Err(DiscreteError::BadStep(dt));
    }
    let cj = cal_j(j).0;
    let target = j * omega;
    // vex(F𝒥 − 𝒥Fᵀ)/dt − Jω; the matrix residual has Frobenius norm √2 times this.
    let residual = |f: &Mat3| vex_antisym(&(f * cj)) / dt - target;
    let frob = |r: &Vec3| std::f64::consts::SQRT_2 * r.norm();
    let mut f = exp_so3(&(omega * dt));
    let mut r = residual(&f);
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITERS {
        if frob(&r) < 0.01 * NEWTON_TOL {
            break;
        }
        // The residual is linear in ε to first order: columns vex_antisym(F e_k^× 𝒥)/dt.
        let jac = Mat3::from_columns(&[
            vex_antisym(&(f * hat3(&Vec3::x()) * cj)) / dt,
            vex_antisym(&(f * hat3(&Vec3::y()) * cj)) / dt,
            vex_antisym(&(f * hat3(&Vec3::z()) * cj)) / dt,
        ]);
        let Some(step) = jac.lu().solve(&(-r)) else {
            break;
        };
        f *= exp_so3(&step);
        iterations += 1;
        let next = residual(&f);
        let stalled = frob(&next) >= frob(&r) && frob(&next) < NEWTON_TOL;
        r = next;
        if stalled || step.norm() < 1e-16 {
            break;
        }
    }
    let res = frob(&r);
    if !(res < NEWTON_TOL) {
        return Err(DiscreteError::NoConvergence {
            residual: res,
            iterations,
        });
    }
    Ok(FSolution {
        f,
        iterations,
        residual: res,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgviState {
    pub g_hat: Pose,
    /// Attitude part `ω_i` of the velocity estimation error.
    pub omega: Vec3,
    /// Translational part `υ_i`.
    pub upsilon: Vec3,
    /// `ξ̂_i`, refreshed from the measured twist of the same epoch.
    pub xi_hat: Twist,
    pub step_index: u64,
}

impl LgviState {
    /// Starts from pose and velocity estimates and the first measured twist.
    pub fn new(g_hat: Pose, xi_hat: Twist, xi_m: &Twist) -> Self {
        let phi = adjoint_of_pose(&g_hat) * (xi_m.to_vec6() - xi_hat.to_vec6());
        Self {
            g_hat,
            omega: phi.fixed_rows::<3>(0).into_owned(),
            upsilon: phi.fixed_rows::<3>(3).into_owned(),
            xi_hat,
            step_index: 0,
        }
    }

    pub fn phi(&self) -> Vec6 {
        let mut p = Vec6::zeros();
        p.fixed_rows_mut::<3>(0).copy_from(&self.omega);
        p.fixed_rows_mut::<3>(3).copy_from(&self.upsilon);
        p
    }
}

/// Fixed-step integrator with the implicit velocity operators factorised once.
#[derive(Debug, Clone)]
pub struct Lgvi {
    pub gains: GainSet,
    pub shaping: Shaping,
    pub dt: f64,
    /// `(J + dt𝔻_r)⁻¹`.
    j_damped_inv: Mat3,
    /// `(M + dt𝔻_t)⁻¹`.
    m_damped_inv: Mat3,
}

impl Lgvi {
    pub fn new(gains: GainSet, shaping: Shaping, dt: f64) -> Result<Self, DiscreteError> {
        if !(dt > 0.0) {
            return Err(DiscreteError::BadStep(dt));
        }
        let c = &gains.config;
        let j_damped_inv = (c.j + dt * c.d_r).try_inverse().expect("sum of SPD matrices");
        let m_damped_inv = (c.m + dt * c.d_t).try_inverse().expect("sum of SPD matrices");
        Ok(Self {
            gains,
            shaping,
            dt,
            j_damped_inv,
            m_damped_inv,
        })
    }

    /// Advances from epoch `i` to `i + 1`; `next` holds the measurements of epoch `i + 1`.
    /// Returns the new state and the number of Newton iterations used.
    pub fn step(&self, s: &LgviState, next: &Observation) -> Result<(LgviState, usize), DiscreteError> {
        let dt = self.dt;
        let c = &self.gains.config;
        let sol = solve_f(&c.j, &s.omega, dt)?;
        let ft = sol.f.transpose();

        let g_next = s.g_hat * exp_se3(&s.xi_hat, dt);

        let kappa = c.kappa;
        let (y, p_bar) = match &next.means {
            Some(m) => (position_residual(&g_next, m), m.p_bar),
            None => (Vec3::zeros(), Vec3::zeros()),
        };
        let upsilon = self.m_damped_inv * (ft * c.m * s.upsilon - dt * kappa * y);

        let att = &next.attitude;
        let r_next = &g_next.rotation;
        let s_g = s_gamma(r_next, &att.l_m, &att.d, &att.ctx.w).expect("shapes fixed by epoch_attitude");
        let u0 = measured_potential(r_next, &att.l_m, &att.d, &att.ctx.w).expect("shapes fixed by epoch_attitude");
        let omega = self.j_damped_inv
            * (ft * c.j * s.omega + dt * (c.m * upsilon).cross(&upsilon)
                - dt * kappa * hat3(&p_bar) * y
                - dt * (self.shaping.derivative)(u0) * s_g);

        let mut out = LgviState {
            g_hat: g_next,
            omega,
            upsilon,
            xi_hat: s.xi_hat,
            step_index: s.step_index + 1,
        };
        out.xi_hat = Twist::from_vec6(
            &(next.xi_m.to_vec6() - adjoint_of_pose(&g_next.inverse()) * out.phi()),
        );
        Ok((out, sol.iterations))
    }
}
