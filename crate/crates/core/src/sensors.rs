//! Synthetic optical and inertial measurements.
//!
//! Beacons are inertially fixed points seen through conic camera fields of view;
//! inertial sensors report known reference directions in the body frame. Each
//! epoch produces the vector matrices `(D, L^m)` consumed by the attitude
//! potential, the beacon means used by the position potential, and (optionally)
//! point velocities.

use crate::geometry::{Mat3, Pose, Twist, Vec3};
use crate::truth::TruthState;
use nalgebra::Matrix3xX;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("duplicate beacon index {0}")]
    DuplicateBeacon(usize),
    #[error("inertial direction {index} is not unit length (norm {norm})")]
    NotUnit { index: usize, norm: f64 },
    #[error("camera {index}: {reason}")]
    BadCamera { index: usize, reason: &'static str },
    #[error("noise width must be non-negative")]
    NegativeWidth,
    #[error("epoch {epoch}: only {vectors} attitude vectors, at least two are required")]
    PoseUnobservable {
        epoch: u64,
        vectors: usize,
        partial: Box<MeasurementSet>,
    },
    #[error("measurement log: {0}")]
    Log(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beacon {
    pub index: usize,
    /// Position in the reference frame (m).
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub beacons: Vec<Beacon>,
    /// Known unit directions in the reference frame (e.g. nadir, magnetic field).
    pub inertial_directions: Vec<Vec3>,
}

impl World {
    pub fn new(beacons: Vec<Beacon>, inertial_directions: Vec<Vec3>) -> Result<Self, SensorError> {
        let mut seen = std::collections::BTreeSet::new();
        for b in &beacons {
            if !seen.insert(b.index) {
                return Err(SensorError::DuplicateBeacon(b.index));
            }
        }
        for (index, d) in inertial_directions.iter().enumerate() {
            let norm = d.norm();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(SensorError::NotUnit { index, norm });
            }
        }
        Ok(Self {
            beacons,
            inertial_directions,
        })
    }

    /// Eight beacons on the vertices of a cube of side `side` centred on the
    /// origin, labelled 1..=8, plus nadir and a magnetic-field direction.
    pub fn cube_room(side: f64) -> Self {
        let h = side / 2.0;
        let mut beacons = Vec::with_capacity(8);
        for (k, (sx, sy, sz)) in [
            (-1.0, -1.0, -1.0),
            (1.0, -1.0, -1.0),
            (1.0, 1.0, -1.0),
            (-1.0, 1.0, -1.0),
            (-1.0, -1.0, 1.0),
            (1.0, -1.0, 1.0),
            (1.0, 1.0, 1.0),
            (-1.0, 1.0, 1.0),
        ]
        .into_iter()
        .enumerate()
        {
            beacons.push(Beacon {
                index: k + 1,
                position: Vec3::new(sx * h, sy * h, sz * h),
            });
        }
        let nadir = Vec3::new(0.0, 0.0, -1.0);
        let field = Vec3::new(0.1, 0.975, -0.2).normalize();
        Self::new(beacons, vec![nadir, field]).expect("valid constants")
    }

    pub fn beacon(&self, index: usize) -> Option<&Beacon> {
        self.beacons.iter().find(|b| b.index == index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Mount point in the body frame (m).
    pub mount: Vec3,
    /// Unit optical axis in the body frame.
    pub boresight: Vec3,
    /// Half of the cone apex angle (rad).
    pub half_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self, SensorError> {
        for (index, c) in cameras.iter().enumerate() {
            if (c.boresight.norm() - 1.0).abs() > 1e-12 {
                return Err(SensorError::BadCamera {
                    index,
                    reason: "boresight must be unit length",
                });
            }
            if !(c.half_angle > 0.0 && c.half_angle < std::f64::consts::FRAC_PI_2) {
                return Err(SensorError::BadCamera {
                    index,
                    reason: "half angle must lie in (0, π/2)",
                });
            }
        }
        Ok(Self { cameras })
    }

    /// Three cameras in the body x–y plane, 120° apart, the first looking along +x.
    pub fn horizontal_triplet(half_angle: f64, mounts: [Vec3; 3]) -> Result<Self, SensorError> {
        let cameras = (0..3)
            .map(|k| {
                let az = k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                Camera {
                    mount: mounts[k],
                    boresight: Vec3::new(az.cos(), az.sin(), 0.0),
                    half_angle,
                }
            })
            .collect();
        Self::new(cameras)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Half-width of the bump density on each axis of a beacon position (m).
    pub bump_width: f64,
    /// Same, applied to inertial directions before renormalisation.
    pub direction_width: f64,
    /// Same, applied to directly measured angular / translational rates.
    pub rate_width: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            bump_width: 0.0,
            direction_width: 0.0,
            rate_width: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if self.bump_width < 0.0 || self.direction_width < 0.0 || self.rate_width < 0.0 {
            return Err(SensorError::NegativeWidth);
        }
        Ok(())
    }
}

/// Independent random stream for one epoch; epochs can be generated in any order.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// One draw from the density ∝ exp(−1/(1−(x/w)²)) on (−w, w), by rejection
/// against the uniform proposal.
pub fn sample_bump<R: Rng + ?Sized>(rng: &mut R, width: f64) -> f64 {
    if width == 0.0 {
        return 0.0;
    }
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let q = 1.0 - u * u;
        if q <= 0.0 {
            continue;
        }
        // Acceptance ratio relative to the peak value e^{-1}.
        let accept = (1.0 - 1.0 / q).exp();
        if rng.gen::<f64>() < accept {
            return u * width;
        }
    }
}

/// Three independent bump samples.
pub fn sample_bump_noise<R: Rng + ?Sized>(rng: &mut R, width: f64) -> Vec3 {
    Vec3::new(
        sample_bump(rng, width),
        sample_bump(rng, width),
        sample_bump(rng, width),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sighting {
    pub index: usize,
    pub camera: usize,
}

/// Beacons inside at least one camera cone, ordered by beacon index. A beacon seen
/// by several cameras is attributed to the lowest-numbered one.
pub fn visible_beacons(pose: &Pose, world: &World, rig: &CameraRig) -> Vec<Sighting> {
    let rt = pose.rotation.transpose();
    let mut out: Vec<Sighting> = world
        .beacons
        .iter()
        .filter_map(|b| {
            let a = rt * (b.position - pose.translation);
            rig.cameras.iter().enumerate().find_map(|(k, cam)| {
                let ray = a - cam.mount;
                let n = ray.norm();
                if n == 0.0 {
                    return None;
                }
                let cos = ray.dot(&cam.boresight) / n;
                (cos >= cam.half_angle.cos()).then_some(Sighting {
                    index: b.index,
                    camera: k,
                })
            })
        })
        .collect();
    out.sort_by_key(|s| s.index);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointVelocityMode {
    /// Left for the downstream tracker to difference consecutive positions.
    FiniteDifference,
    /// `v_j = G(a_j) ξ + noise`, for tests.
    ExactPlusNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Pair { first: usize, second: usize },
    Inertial(usize),
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconMeans {
    /// Mean reference-frame position p̄.
    pub p_bar: Vec3,
    /// Mean measured body-frame position ā^m.
    pub a_bar_m: Vec3,
}

/// All sensor data for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub epoch: u64,
    pub t: f64,
    /// Observed beacon indices, ascending.
    pub indices: Vec<usize>,
    /// Known reference positions of the observed beacons.
    pub p: Vec<Vec3>,
    /// Measured body-frame beacon positions a_j^m.
    pub a_m: Vec<Vec3>,
    pub means: Option<BeaconMeans>,
    /// Reference-frame vectors, one per column.
    pub d: Matrix3xX<f64>,
    /// Measured body-frame vectors, column-aligned with `d`.
    pub l_m: Matrix3xX<f64>,
    pub kinds: Vec<ColumnKind>,
    /// Point velocities when measured directly.
    pub v_m: Vec<Option<Vec3>>,
    pub beta_count: usize,
    /// Rate-sensor reading of the full twist; the gyro part is `twist_m.omega`.
    pub twist_m: Twist,
}

fn binom2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

impl MeasurementSet {
    pub fn beacon_count(&self) -> usize {
        self.indices.len()
    }

    pub fn column_count(&self) -> usize {
        self.d.ncols()
    }

    /// Number of attitude vectors before cross-product augmentation.
    pub fn vector_count(&self) -> usize {
        binom2(self.indices.len()) + self.beta_count
    }

    /// Reference/body columns restricted to the inertial directions, augmented with
    /// their cross product when exactly two are available.
    pub fn inertial_columns(&self) -> (Matrix3xX<f64>, Matrix3xX<f64>) {
        let cols: Vec<usize> = self
            .kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, ColumnKind::Inertial(_)))
            .map(|(i, _)| i)
            .collect();
        let mut d: Vec<Vec3> = cols.iter().map(|&i| self.d.column(i).into_owned()).collect();
        let mut l: Vec<Vec3> = cols.iter().map(|&i| self.l_m.column(i).into_owned()).collect();
        if d.len() == 2 {
            d.push(d[0].cross(&d[1]));
            l.push(l[0].cross(&l[1]));
        }
        (Matrix3xX::from_columns(&d), Matrix3xX::from_columns(&l))
    }

    fn assemble(
        epoch: u64,
        t: f64,
        indices: Vec<usize>,
        p: Vec<Vec3>,
        a_m: Vec<Vec3>,
        inertial_ref: &[Vec3],
        inertial_body: &[Vec3],
        v_m: Vec<Option<Vec3>>,
        twist_m: Twist,
    ) -> Self {
        let j = indices.len();
        let means = (j > 0).then(|| BeaconMeans {
            p_bar: p.iter().sum::<Vec3>() / j as f64,
            a_bar_m: a_m.iter().sum::<Vec3>() / j as f64,
        });
        let mut dcols = Vec::new();
        let mut lcols = Vec::new();
        let mut kinds = Vec::new();
        for lam in 0..j {
            for ell in lam + 1..j {
                dcols.push(p[lam] - p[ell]);
                lcols.push(a_m[lam] - a_m[ell]);
                kinds.push(ColumnKind::Pair {
                    first: indices[lam],
                    second: indices[ell],
                });
            }
        }
        for (k, (dr, lb)) in inertial_ref.iter().zip(inertial_body).enumerate() {
            dcols.push(*dr);
            lcols.push(*lb);
            kinds.push(ColumnKind::Inertial(k));
        }
        if dcols.len() == 2 {
            dcols.push(dcols[0].cross(&dcols[1]));
            lcols.push(lcols[0].cross(&lcols[1]));
            kinds.push(ColumnKind::Cross);
        }
        Self {
            epoch,
            t,
            indices,
            p,
            a_m,
            means,
            d: Matrix3xX::from_columns(&dcols),
            l_m: Matrix3xX::from_columns(&lcols),
            kinds,
            v_m,
            beta_count: inertial_ref.len(),
            twist_m,
        }
    }
}

/// Measures the given beacons (indices into `world`) from `truth`.
pub fn measure_beacons(
    truth: &TruthState,
    world: &World,
    indices: &[usize],
    noise: &NoiseModel,
    mode: PointVelocityMode,
    epoch: u64,
) -> Result<MeasurementSet, SensorError> {
    let mut rng = epoch_rng(noise.seed, epoch);
    let r = truth.pose.rotation;
    let rt: Mat3 = r.transpose();
    let b = truth.pose.translation;

    let mut sorted: Vec<usize> = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut p = Vec::with_capacity(sorted.len());
    let mut a_true = Vec::with_capacity(sorted.len());
    let mut a_m = Vec::with_capacity(sorted.len());
    for &idx in &sorted {
        let beacon = world
            .beacon(idx)
            .ok_or_else(|| SensorError::Log(format!("unknown beacon {idx}")))?;
        let a = rt * (beacon.position - b);
        p.push(beacon.position);
        a_true.push(a);
        a_m.push(a + sample_bump_noise(&mut rng, noise.bump_width));
    }
    let inertial_body: Vec<Vec3> = world
        .inertial_directions
        .iter()
        .map(|d| (rt * d + sample_bump_noise(&mut rng, noise.direction_width)).normalize())
        .collect();
    let xi = truth.twist;
    let twist_m = Twist::new(
        xi.omega + sample_bump_noise(&mut rng, noise.rate_width),
        xi.nu + sample_bump_noise(&mut rng, noise.rate_width),
    );
    let v_m = match mode {
        PointVelocityMode::FiniteDifference => vec![None; sorted.len()],
        PointVelocityMode::ExactPlusNoise => a_true
            .iter()
            .map(|a| Some(a.cross(&xi.omega) - xi.nu + sample_bump_noise(&mut rng, noise.bump_width)))
            .collect(),
    };
    let set = MeasurementSet::assemble(
        epoch,
        truth.time,
        sorted,
        p,
        a_m,
        &world.inertial_directions,
        &inertial_body,
        v_m,
        twist_m,
    );
    if set.vector_count() < 2 {
        return Err(SensorError::PoseUnobservable {
            epoch,
            vectors: set.vector_count(),
            partial: Box::new(set),
        });
    }
    Ok(set)
}

/// Visibility check followed by [`measure_beacons`].
pub fn measure_epoch(
    truth: &TruthState,
    world: &World,
    rig: &CameraRig,
    noise: &NoiseModel,
    mode: PointVelocityMode,
    epoch: u64,
) -> Result<MeasurementSet, SensorError> {
    let indices: Vec<usize> = visible_beacons(&truth.pose, world, rig)
        .into_iter()
        .map(|s| s.index)
        .collect();
    measure_beacons(truth, world, &indices, noise, mode, epoch)
}

#[derive(Debug, Serialize, Deserialize)]
struct LogRow {
    epoch: u64,
    t: f64,
    kind: String,
    i: i64,
    j: i64,
    bx: f64,
    by: f64,
    bz: f64,
    rx: f64,
    ry: f64,
    rz: f64,
}

fn row(epoch: u64, t: f64, kind: &str, i: i64, j: i64, body: &Vec3, reference: &Vec3) -> LogRow {
    LogRow {
        epoch,
        t,
        kind: kind.to_string(),
        i,
        j,
        bx: body.x,
        by: body.y,
        bz: body.z,
        rx: reference.x,
        ry: reference.y,
        rz: reference.z,
    }
}

/// Writes one row per measured vector:
/// `epoch,t,kind,i,j,bx,by,bz,rx,ry,rz`, with `kind` one of `beacon`, `pair`,
/// `inertial`, `cross`, `point_velocity` or `twist` (body = Ω^m, reference = ν^m).
/// Unused index fields are −1.
pub fn write_measurement_log<W: Write>(writer: W, sets: &[MeasurementSet]) -> Result<(), SensorError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in sets {
        for (k, &idx) in s.indices.iter().enumerate() {
            w.serialize(row(s.epoch, s.t, "beacon", idx as i64, -1, &s.a_m[k], &s.p[k]))?;
        }
        for (c, kind) in s.kinds.iter().enumerate() {
            let body = s.l_m.column(c).into_owned();
            let reference = s.d.column(c).into_owned();
            let r = match kind {
                ColumnKind::Pair { first, second } => {
                    row(s.epoch, s.t, "pair", *first as i64, *second as i64, &body, &reference)
                }
                ColumnKind::Inertial(k) => row(s.epoch, s.t, "inertial", *k as i64, -1, &body, &reference),
                ColumnKind::Cross => row(s.epoch, s.t, "cross", -1, -1, &body, &reference),
            };
            w.serialize(r)?;
        }
        for (k, v) in s.v_m.iter().enumerate() {
            if let Some(v) = v {
                w.serialize(row(s.epoch, s.t, "point_velocity", s.indices[k] as i64, -1, v, &Vec3::zeros()))?;
            }
        }
        w.serialize(row(s.epoch, s.t, "twist", -1, -1, &s.twist_m.omega, &s.twist_m.nu))?;
    }
    w.flush().map_err(|e| SensorError::Log(e.to_string()))?;
    Ok(())
}

/// Inverse of [`write_measurement_log`].
pub fn read_measurement_log<R: Read>(reader: R) -> Result<Vec<MeasurementSet>, SensorError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut grouped: BTreeMap<u64, Vec<LogRow>> = BTreeMap::new();
    for rec in rdr.deserialize() {
        let r: LogRow = rec?;
        grouped.entry(r.epoch).or_default().push(r);
    }
    let mut out = Vec::with_capacity(grouped.len());
    for (epoch, rows) in grouped {
        let t = rows[0].t;
        let mut indices = Vec::new();
        let mut p = Vec::new();
        let mut a_m = Vec::new();
        let mut dcols = Vec::new();
        let mut lcols = Vec::new();
        let mut kinds = Vec::new();
        let mut velocities: BTreeMap<usize, Vec3> = BTreeMap::new();
        let mut twist_m = Twist::zero();
        let mut beta = 0;
        for r in &rows {
            let body = Vec3::new(r.bx, r.by, r.bz);
            let reference = Vec3::new(r.rx, r.ry, r.rz);
            match r.kind.as_str() {
                "beacon" => {
                    indices.push(r.i as usize);
                    a_m.push(body);
                    p.push(reference);
                }
                "pair" | "inertial" | "cross" => {
                    dcols.push(reference);
                    lcols.push(body);
                    kinds.push(match r.kind.as_str() {
                        "pair" => ColumnKind::Pair {
                            first: r.i as usize,
                            second: r.j as usize,
                        },
                        "inertial" => {
                            beta += 1;
                            ColumnKind::Inertial(r.i as usize)
                        }
                        _ => ColumnKind::Cross,
                    });
                }
                "point_velocity" => {
                    velocities.insert(r.i as usize, body);
                }
                "twist" => twist_m = Twist::new(body, reference),
                other => return Err(SensorError::Log(format!("unknown row kind '{other}'"))),
            }
        }
        let j = indices.len();
        let means = (j > 0).then(|| BeaconMeans {
            p_bar: p.iter().sum::<Vec3>() / j as f64,
            a_bar_m: a_m.iter().sum::<Vec3>() / j as f64,
        });
        let v_m = indices.iter().map(|i| velocities.get(i).copied()).collect();
        out.push(MeasurementSet {
            epoch,
            t,
            indices,
            p,
            a_m,
            means,
            d: Matrix3xX::from_columns(&dcols),
            l_m: Matrix3xX::from_columns(&lcols),
            kinds,
            v_m,
            beta_count: beta,
            twist_m,
        });
    }
    Ok(out)
}
