//! Kinematic avatar simulation: a five-fingertip hand follows a trajectory
//! next to one object and logs contacts through the diaphragm model.
//!
//! The diaphragm is a copy of the object shape scaled about its center. A
//! fingertip inside the diaphragm produces a contact event measured against
//! the true object surface: zero depth while it is still outside the
//! object, the penetration depth once inside. There are no dynamics.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{rpy_to_rotation, RotationMatrix};
use crate::trajectory::{Trajectory, Vec6};

pub const N_FINGERS: usize = 5;
pub const DEFAULT_DIAPHRAGM_SCALE: f64 = 1.2;
/// Fingertips must stay within this distance of the wrist origin.
pub const HAND_REACH: f64 = 0.15;
/// Penetration beyond which a fingertip counts as a collision, meters.
pub const DEFAULT_MAX_PENETRATION: f64 = 0.005;
const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box {
        half_extents: [f64; 3],
    },
    /// Axis along the object's local z, centered on the pose.
    Cylinder {
        radius: f64,
        height: f64,
    },
}

impl Shape {
    pub fn scaled(&self, k: f64) -> Shape {
        match *self {
            Shape::Box { half_extents } => Shape::Box {
                half_extents: half_extents.map(|h| h * k),
            },
            Shape::Cylinder { radius, height } => Shape::Cylinder {
                radius: radius * k,
                height: height * k,
            },
        }
    }

    /// Signed distance and outward normal for a point in the object frame.
    pub fn local_distance(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        match *self {
            Shape::Box { half_extents } => {
                let q: [f64; 3] = std::array::from_fn(|i| p[i].abs() - half_extents[i]);
                let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
                let outside: [f64; 3] = std::array::from_fn(|i| q[i].max(0.0));
                let out_norm = norm(outside);
                if out_norm > 0.0 {
                    let n = std::array::from_fn(|i| sign(p[i]) * outside[i] / out_norm);
                    (out_norm, n)
                } else {
                    let axis = (0..3)
                        .reduce(|a, b| if q[b] > q[a] { b } else { a })
                        .expect("three axes");
                    let mut n = [0.0; 3];
                    n[axis] = sign(p[axis]);
                    (q[axis], n)
                }
            }
            Shape::Cylinder { radius, height } => {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                let radial = if r > 0.0 {
                    [p[0] / r, p[1] / r, 0.0]
                } else {
                    [1.0, 0.0, 0.0]
                };
                let axial = [0.0, 0.0, if p[2] < 0.0 { -1.0 } else { 1.0 }];
                let dr = r - radius;
                let dz = p[2].abs() - height / 2.0;
                if dr > 0.0 || dz > 0.0 {
                    let (a, b) = (dr.max(0.0), dz.max(0.0));
                    let len = (a * a + b * b).sqrt();
                    let n = std::array::from_fn(|i| (radial[i] * a + axial[i] * b) / len);
                    (len, n)
                } else if dr >= dz {
                    (dr, radial)
                } else {
                    (dz, axial)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Box { half_extents } => half_extents.iter().all(|h| h.is_finite() && *h > 0.0),
            Shape::Cylinder { radius, height } => {
                radius.is_finite() && height.is_finite() && radius > 0.0 && height > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invariant(
                "Scene",
                format!("shape dimensions must be positive: {self:?}"),
            ))
        }
    }

    /// Half the vertical extent of the shape under rotation `r`.
    fn vertical_extent(&self, r: &RotationMatrix) -> f64 {
        let m = r.matrix();
        match *self {
            Shape::Box { half_extents } => (0..3).map(|j| m[(2, j)].abs() * half_extents[j]).sum(),
            Shape::Cylinder { radius, height } => {
                m[(2, 2)].abs() * height / 2.0
                    + radius * (m[(2, 0)].powi(2) + m[(2, 1)].powi(2)).sqrt()
            }
        }
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn position(pose: &Vec6) -> [f64; 3] {
    [pose[0], pose[1], pose[2]]
}

fn rotation(pose: &Vec6) -> RotationMatrix {
    rpy_to_rotation(pose[3], pose[4], pose[5])
}

/// Signed distance from a world point to a shape placed at `pose`; the
/// normal is returned in world coordinates.
pub fn point_surface_distance(p: [f64; 3], shape: &Shape, pose: &Vec6) -> (f64, [f64; 3]) {
    let r = rotation(pose);
    let c = position(pose);
    let rel = nalgebra::Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
    let local = r.matrix().transpose() * rel;
    let (d, n) = shape.local_distance([local.x, local.y, local.z]);
    (d, r.rotate(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub true_pose: Vec6,
    pub believed_pose: Vec6,
    #[serde(default = "default_diaphragm_scale")]
    pub diaphragm_scale: f64,
    #[serde(default = "default_max_fingers")]
    pub max_fingers: usize,
}

fn default_diaphragm_scale() -> f64 {
    DEFAULT_DIAPHRAGM_SCALE
}

fn default_max_fingers() -> usize {
    N_FINGERS
}

impl SceneObject {
    pub fn diaphragm(&self) -> Shape {
        self.shape.scaled(self.diaphragm_scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndEffector {
    /// Thumb first, then the four opposing fingers; wrist frame, meters.
    pub fingertip_offsets: Vec<[f64; 3]>,
}

impl EndEffector {
    pub fn validate(&self) -> Result<()> {
        if self.fingertip_offsets.len() != N_FINGERS {
            return Err(Error::invariant(
                "EndEffector",
                format!(
                    "expected {N_FINGERS} fingertips, got {}",
                    self.fingertip_offsets.len()
                ),
            ));
        }
        for (i, o) in self.fingertip_offsets.iter().enumerate() {
            if o.iter().any(|v| !v.is_finite()) || norm(*o) > HAND_REACH {
                return Err(Error::invariant(
                    "EndEffector",
                    format!(
                        "fingertip {i} offset {o:?} is farther than {HAND_REACH} m from the wrist"
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn fingertips(&self, wrist: &Vec6) -> Vec<[f64; 3]> {
        let r = rotation(wrist);
        let p = position(wrist);
        self.fingertip_offsets
            .iter()
            .map(|o| {
                let w = r.rotate(*o);
                [p[0] + w[0], p[1] + w[1], p[2] + w[2]]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCriteria {
    /// Trailing fraction of the episode in which contacts count.
    pub window_fraction: f64,
    /// Minimum angle between contact normals of two fingers.
    pub opposition_deg: f64,
    /// Minimum number of fingers in contact.
    pub min_fingers: usize,
    /// A fingertip deeper than this inside the true object has collided
    /// with it rather than touched it, and does not count as contacting.
    #[serde(default = "default_max_penetration")]
    pub max_penetration: f64,
}

fn default_max_penetration() -> f64 {
    DEFAULT_MAX_PENETRATION
}

impl Default for GraspCriteria {
    fn default() -> Self {
        Self {
            window_fraction: 0.2,
            opposition_deg: 90.0,
            min_fingers: 2,
            max_penetration: DEFAULT_MAX_PENETRATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub object: SceneObject,
    pub hand: EndEffector,
    pub table_height: f64,
    pub workspace: Aabb,
    #[serde(default)]
    pub grasp: GraspCriteria,
}

impl Scene {
    /// Checks every scene invariant, naming the violated type.
    pub fn validate(&self) -> Result<()> {
        let o = &self.object;
        o.shape.validate()?;
        if !(o.diaphragm_scale.is_finite() && o.diaphragm_scale > 1.0) {
            return Err(Error::invariant(
                "Scene",
                format!(
                    "diaphragm_scale must exceed 1 (default {DEFAULT_DIAPHRAGM_SCALE}), got {}",
                    o.diaphragm_scale
                ),
            ));
        }
        if o.max_fingers == 0 || o.max_fingers > N_FINGERS {
            return Err(Error::invariant(
                "Scene",
                format!(
                    "max_fingers must be in 1..={N_FINGERS}, got {}",
                    o.max_fingers
                ),
            ));
        }
        if o.true_pose
            .iter()
            .chain(&o.believed_pose)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invariant("Scene", "object poses must be finite"));
        }
        if (2..6).any(|d| o.true_pose[d] != o.believed_pose[d]) {
            return Err(Error::invariant(
                "Scene",
                "true and believed poses may differ only in the table plane",
            ));
        }
        let lowest = o.true_pose[2] - o.shape.vertical_extent(&rotation(&o.true_pose));
        if lowest < self.table_height - 1e-9 {
            return Err(Error::invariant(
                "Scene",
                format!(
                    "object bottom {lowest} is below the table at {}",
                    self.table_height
                ),
            ));
        }
        let w = &self.workspace;
        if (0..3).any(|i| !(w.min[i] < w.max[i])) {
            return Err(Error::invariant(
                "Scene",
                "workspace bounds must satisfy min < max",
            ));
        }
        if !w.contains(position(&o.true_pose)) || !w.contains(position(&o.believed_pose)) {
            return Err(Error::invariant(
                "Scene",
                "object lies outside the workspace",
            ));
        }
        let g = &self.grasp;
        if !(g.window_fraction > 0.0 && g.window_fraction <= 1.0)
            || g.min_fingers == 0
            || !(g.max_penetration >= 0.0)
        {
            return Err(Error::invariant(
                "Scene",
                format!("invalid grasp criteria {g:?}"),
            ));
        }
        self.hand.validate()
    }

    /// Moves the object (true and believed) by `dxy` in the table plane.
    pub fn displaced(&self, dxy: [f64; 2]) -> Scene {
        let mut out = self.clone();
        for pose in [&mut out.object.true_pose, &mut out.object.believed_pose] {
            pose[0] += dxy[0];
            pose[1] += dxy[1];
        }
        out
    }
}

/// Places the true object `magnitude` meters from the believed pose in a
/// uniformly random table-plane direction. The believed pose is untouched.
pub fn inject_uncertainty<R: Rng + ?Sized>(
    scene: &Scene,
    magnitude: f64,
    rng: &mut R,
) -> Result<Scene> {
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(Error::invariant(
            "Scene",
            format!("uncertainty magnitude {magnitude}"),
        ));
    }
    let mut out = scene.clone();
    if magnitude == 0.0 {
        out.object.true_pose = out.object.believed_pose;
        return Ok(out);
    }
    for _ in 0..MAX_RESAMPLES {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let mut pose = scene.object.believed_pose;
        pose[0] += magnitude * angle.cos();
        pose[1] += magnitude * angle.sin();
        if scene.workspace.contains(position(&pose)) {
            out.object.true_pose = pose;
            return Ok(out);
        }
    }
    Err(Error::UncertaintyRejected(MAX_RESAMPLES))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub t: f64,
    pub finger: usize,
    pub depth: f64,
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactLog {
    pub events: Vec<ContactEvent>,
    /// Time at which the wrist left the workspace, if it did; execution
    /// stopped there.
    pub truncated_at: Option<f64>,
}

impl ContactLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,finger,depth,nx,ny,nz\n");
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.t, e.finger, e.depth, e.normal[0], e.normal[1], e.normal[2]
            );
        }
        out
    }
}

/// Plays `traj` in the scene and logs every fingertip inside the diaphragm
/// of the true object.
pub fn execute(traj: &Trajectory, scene: &Scene) -> ContactLog {
    let obj = &scene.object;
    let diaphragm = obj.diaphragm();
    let mut log = ContactLog::default();
    for sample in traj.samples() {
        if !scene.workspace.contains(position(&sample.pose)) {
            log.truncated_at = Some(sample.t);
            break;
        }
        for (finger, tip) in scene.hand.fingertips(&sample.pose).into_iter().enumerate() {
            let (shell, _) = point_surface_distance(tip, &diaphragm, &obj.true_pose);
            if shell > 0.0 {
                continue;
            }
            let (d, normal) = point_surface_distance(tip, &obj.shape, &obj.true_pose);
            log.events.push(ContactEvent {
                t: sample.t,
                finger,
                depth: (-d).max(0.0),
                normal,
            });
        }
    }
    log
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub success: bool,
    pub n_fingers: usize,
}

/// Counts fingers touching in the trailing window and checks that their
/// contact normals oppose each other.
pub fn grasp_success(log: &ContactLog, scene: &Scene, episode_duration: f64) -> GraspOutcome {
    let window_start = episode_duration * (1.0 - scene.grasp.window_fraction);
    let mut sums = [[0.0f64; 3]; N_FINGERS];
    let mut touched = [false; N_FINGERS];
    let mut collided = [false; N_FINGERS];
    for e in log.events.iter().filter(|e| e.t >= window_start - 1e-12) {
        if e.finger < N_FINGERS {
            touched[e.finger] = true;
            collided[e.finger] |= e.depth > scene.grasp.max_penetration;
            for i in 0..3 {
                sums[e.finger][i] += e.normal[i];
            }
        }
    }
    for f in 0..N_FINGERS {
        touched[f] &= !collided[f];
    }
    let n_fingers = touched
        .iter()
        .filter(|t| **t)
        .count()
        .min(scene.object.max_fingers);
    let normals: Vec<[f64; 3]> = (0..N_FINGERS)
        .filter(|&f| touched[f])
        .filter_map(|f| {
            let len = norm(sums[f]);
            (len > 0.0).then(|| sums[f].map(|v| v / len))
        })
        .collect();
    let cos_limit = scene.grasp.opposition_deg.to_radians().cos();
    let opposed = normals.iter().enumerate().any(|(i, a)| {
        normals[i + 1..]
            .iter()
            .any(|b| a[0] * b[0] + a[1] * b[1] + a[2] * b[2] < cos_limit)
    });
    GraspOutcome {
        success: n_fingers >= scene.grasp.min_fingers && opposed,
        n_fingers,
    }
}
