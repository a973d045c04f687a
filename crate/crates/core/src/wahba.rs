//! Wahba-type attitude potential: weight selection, critical rotations, value
//! and gradient vectors.

use crate::geometry::{vex_antisym, Mat3, Vec3};
use crate::sensors::MeasurementSet;
use nalgebra::{DMatrix, Matrix3xX};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `σ₃ ≤ RANK_TOL·σ₁` counts as rank deficient.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WahbaError {
    #[error("weights must satisfy ς₁ > ς₂ > ς₃ > 0 and tail weight > 0, got {varsigma:?}, tail {tail}")]
    BadWeights { varsigma: [f64; 3], tail: f64 },
    #[error("vector matrix is rank deficient (σ = {singular_values:?})")]
    RankDeficient { singular_values: Vec<f64> },
    #[error("column counts differ: D has {d}, L has {l}, W is {w}×{w}")]
    Shape { d: usize, l: usize, w: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    /// Target eigenvalues of `K`, strictly decreasing.
    pub varsigma: [f64; 3],
    /// Diagonal entries of `W₀` beyond the first three.
    pub tail_weight: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            varsigma: [3.0, 2.0, 1.0],
            tail_weight: 1.0,
        }
    }
}

impl WeightSpec {
    pub fn validate(&self) -> Result<(), WahbaError> {
        let [a, b, c] = self.varsigma;
        if !(a > b && b > c && c > 0.0 && self.tail_weight > 0.0) {
            return Err(WahbaError::BadWeights {
                varsigma: self.varsigma,
                tail: self.tail_weight,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WahbaContext {
    /// Symmetric positive definite weight matrix, `n × n`.
    pub w: DMatrix<f64>,
    /// `K = D W Dᵀ`.
    pub k: Mat3,
    /// Left singular vectors of `D`, sign-normalised, `det = +1`.
    pub u_d: Mat3,
    /// Eigenvalues of `K`, equal to the configured `ς`.
    pub delta: Vec3,
}

fn canonical_basis(u: &Mat3) -> Mat3 {
    let mut cols = [u.column(0).into_owned(), u.column(1).into_owned()];
    for c in cols.iter_mut() {
        let imax = c.iamax();
        if c[imax] < 0.0 {
            *c = -*c;
        }
    }
    let third = cols[0].cross(&cols[1]);
    Mat3::from_columns(&[cols[0], cols[1], third])
}

/// Chooses `W` so that `K = D W Dᵀ` has eigenvalues exactly `ς`.
pub fn select_weights(d: &Matrix3xX<f64>, spec: &WeightSpec) -> Result<WahbaContext, WahbaError> {
    spec.validate()?;
    let n = d.ncols();
    let svd = d.clone().svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if n < 3 || sigma[2] <= RANK_TOL * sigma[0] {
        return Err(WahbaError::RankDeficient {
            singular_values: sigma,
        });
    }
    let u_sorted = Mat3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    // Thin right singular vectors as an n×3 block.
    let mut v = DMatrix::zeros(n, 3);
    for (k, &i) in order.iter().enumerate() {
        v.set_column(k, &v_t.row(i).transpose());
    }
    let w_diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        3,
        (0..3).map(|i| spec.varsigma[i] / (sigma[i] * sigma[i])),
    ));
    let vvt = &v * v.transpose();
    let mut w = &v * w_diag * v.transpose() + (DMatrix::identity(n, n) - vvt) * spec.tail_weight;
    // Symmetrise away round-off.
    w = (&w + w.transpose()) * 0.5;
    let dw = d * &w;
    let mut k: Mat3 = (dw * d.transpose()).fixed_view::<3, 3>(0, 0).into_owned();
    k = (k + k.transpose()) * 0.5;
    Ok(WahbaContext {
        w,
        k,
        u_d: canonical_basis(&u_sorted),
        delta: Vec3::from(spec.varsigma),
    })
}

/// `{I, Q₁, Q₂, Q₃}` with `Q_i = 2 u_i u_iᵀ − I`.
pub fn critical_rotations(ctx: &WahbaContext) -> [Mat3; 4] {
    let q = |i: usize| {
        let u = ctx.u_d.column(i);
        2.0 * u * u.transpose() - Mat3::identity()
    };
    [Mat3::identity(), q(0), q(1), q(2)]
}

/// `⟨I − Q, K⟩ = tr((I − Q)ᵀ K)`.
pub fn wahba_value(q: &Mat3, k: &Mat3) -> f64 {
    ((Mat3::identity() - q).transpose() * k).trace()
}

/// `vex(KQ − QᵀK)`.
pub fn s_k(q: &Mat3, k: &Mat3) -> Vec3 {
    // KQ − QᵀK = X − Xᵀ for X = KQ when K is symmetric.
    0.5 * (vex_antisym(&(k * q)) - vex_antisym(&(q.transpose() * k)))
}

fn check_shapes(l_m: &Matrix3xX<f64>, d: &Matrix3xX<f64>, w: &DMatrix<f64>) -> Result<(), WahbaError> {
    if l_m.ncols() != d.ncols() || w.nrows() != d.ncols() || w.ncols() != d.ncols() {
        return Err(WahbaError::Shape {
            d: d.ncols(),
            l: l_m.ncols(),
            w: w.nrows(),
        });
    }
    Ok(())
}

/// `vex(ΓR̂ᵀ − R̂Γᵀ)` with `Γ = D W L^mᵀ`.
pub fn s_gamma(
    r_hat: &Mat3,
    l_m: &Matrix3xX<f64>,
    d: &Matrix3xX<f64>,
    w: &DMatrix<f64>,
) -> Result<Vec3, WahbaError> {
    check_shapes(l_m, d, w)?;
    let gamma: Mat3 = (d * w * l_m.transpose()).fixed_view::<3, 3>(0, 0).into_owned();
    Ok(vex_antisym(&(gamma * r_hat.transpose())))
}

/// Measured attitude potential `½⟨D − R̂L^m, (D − R̂L^m)W⟩`.
pub fn measured_potential(
    r_hat: &Mat3,
    l_m: &Matrix3xX<f64>,
    d: &Matrix3xX<f64>,
    w: &DMatrix<f64>,
) -> Result<f64, WahbaError> {
    check_shapes(l_m, d, w)?;
    let e = d - r_hat * l_m;
    Ok(0.5 * (&e * w * e.transpose()).trace())
}

/// Scalar shaping function applied to the attitude potential.
#[derive(Debug, Clone, Copy)]
pub struct Shaping {
    pub value: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
}

impl Shaping {
    pub fn identity() -> Self {
        Self {
            value: |x| x,
            derivative: |_| 1.0,
        }
    }
}

impl Default for Shaping {
    fn default() -> Self {
        Self::identity()
    }
}

/// Vector data and weights actually fed to the attitude gradient for one epoch.
#[derive(Debug, Clone)]
pub struct EpochAttitude {
    pub d: Matrix3xX<f64>,
    pub l_m: Matrix3xX<f64>,
    pub ctx: WahbaContext,
    /// True when the full column set was rank deficient and only the inertial
    /// directions were used.
    pub inertial_fallback: bool,
}

/// Selects weights for the full column set, dropping to the inertial columns when
/// the beacon geometry leaves `D` rank deficient.
pub fn epoch_attitude(m: &MeasurementSet, spec: &WeightSpec) -> Result<EpochAttitude, WahbaError> {
    match select_weights(&m.d, spec) {
        Ok(ctx) => Ok(EpochAttitude {
            d: m.d.clone(),
            l_m: m.l_m.clone(),
            ctx,
            inertial_fallback: false,
        }),
        Err(WahbaError::RankDeficient { .. }) if m.beta_count >= 2 => {
            let (d, l_m) = m.inertial_columns();
            let ctx = select_weights(&d, spec)?;
            Ok(EpochAttitude {
                d,
                l_m,
                ctx,
                inertial_fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}
