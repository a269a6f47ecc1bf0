//! Core domain types: box primitives, Manhattan poses, scenes, observations
//! and assembly plans.
//!
//! All lengths are meters, all values double precision. Boxes are axis
//! aligned, may only be yawed by a quarter turn about the vertical, and stand
//! on a table whose surface is the plane z = 0. Pose positions refer to box
//! centers.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strips::Operator;

/// Tolerance below which two ground-truth boxes are allowed to overlap.
pub const PENETRATION_TOL: f64 = 1e-6;

/// Identifier of a primitive within a catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrimId(pub u32);

impl fmt::Display for PrimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 3D vector, serialized as a plain `[x, y, z]` array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or `None` for (near-)zero input.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;

    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;

    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

/// Yaw rotation class: a box is either axis aligned (0) or turned 90° (1).
///
/// A quarter turn swaps the roles of the x and y extents in every footprint
/// computation; two quarter turns are the identity for a box, so exactly two
/// classes exist.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RotationClass {
    #[default]
    Deg0,
    Deg90,
}

impl RotationClass {
    pub fn quarter_turns(self) -> u8 {
        match self {
            RotationClass::Deg0 => 0,
            RotationClass::Deg90 => 1,
        }
    }

    pub fn toggled(self) -> Self {
        match self {
            RotationClass::Deg0 => RotationClass::Deg90,
            RotationClass::Deg90 => RotationClass::Deg0,
        }
    }
}

impl TryFrom<u8> for RotationClass {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(RotationClass::Deg0),
            1 => Ok(RotationClass::Deg90),
            other => Err(format!("rotation class must be 0 or 1, got {other}")),
        }
    }
}

impl From<RotationClass> for u8 {
    fn from(r: RotationClass) -> u8 {
        r.quarter_turns()
    }
}

/// Axis in the table plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Pose of a box: center position plus rotation class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub pos: Vec3,
    pub rot: RotationClass,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, rot: RotationClass) -> Self {
        Pose {
            pos: Vec3::new(x, y, z),
            rot,
        }
    }

    pub fn upright(x: f64, y: f64, z: f64) -> Self {
        Pose::new(x, y, z, RotationClass::Deg0)
    }
}

/// A catalog box shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub id: PrimId,
    pub label: String,
    /// Box extents (s_x, s_y, s_z), each strictly positive.
    pub dims: Vec3,
}

impl Primitive {
    pub fn new(id: u32, label: &str, sx: f64, sy: f64, sz: f64) -> Self {
        Primitive {
            id: PrimId(id),
            label: label.to_string(),
            dims: Vec3::new(sx, sy, sz),
        }
    }

    /// Horizontal extents with the quarter-turn swap applied.
    pub fn xy_extents(&self, rot: RotationClass) -> (f64, f64) {
        match rot {
            RotationClass::Deg0 => (self.dims.x, self.dims.y),
            RotationClass::Deg90 => (self.dims.y, self.dims.x),
        }
    }

    pub fn half_height(&self) -> f64 {
        self.dims.z / 2.0
    }
}

/// Axis-aligned rectangle in the table plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min: [min_x, min_y],
            max: [max_x, max_y],
        }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

/// Horizontal bounding rectangle of a posed box, centered at (x, y) with the
/// extents swapped when the pose carries a quarter turn.
pub fn footprint(prim: &Primitive, pose: &Pose) -> Rect {
    let (wx, wy) = prim.xy_extents(pose.rot);
    Rect::new(
        pose.pos.x - wx / 2.0,
        pose.pos.y - wy / 2.0,
        pose.pos.x + wx / 2.0,
        pose.pos.y + wy / 2.0,
    )
}

/// Per-axis `[lo, hi]` intervals of a posed box.
pub fn box_intervals(prim: &Primitive, pose: &Pose) -> [[f64; 2]; 3] {
    let (wx, wy) = prim.xy_extents(pose.rot);
    let h = prim.dims.z;
    [
        [pose.pos.x - wx / 2.0, pose.pos.x + wx / 2.0],
        [pose.pos.y - wy / 2.0, pose.pos.y + wy / 2.0],
        [pose.pos.z - h / 2.0, pose.pos.z + h / 2.0],
    ]
}

fn interval_overlap(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[1].min(b[1]) - a[0].max(b[0])
}

/// True iff the two boxes overlap by more than `tol` along all three axes
/// simultaneously. Touching faces (zero overlap) do not count.
pub fn boxes_interpenetrate(
    pa: &Primitive,
    qa: &Pose,
    pb: &Primitive,
    qb: &Pose,
    tol: f64,
) -> bool {
    let ia = box_intervals(pa, qa);
    let ib = box_intervals(pb, qb);
    (0..3).all(|k| interval_overlap(ia[k], ib[k]) > tol)
}

/// Validation failures for scenes, catalogs and observations.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("primitive {id} has non-positive dims ({x}, {y}, {z})")]
    NonPositiveDims { id: PrimId, x: f64, y: f64, z: f64 },
    #[error("duplicate primitive id {0} in catalog")]
    DuplicateId(PrimId),
    #[error("placement refers to unknown primitive id {0}")]
    UnknownPlacement(PrimId),
    #[error("placement of {id} sits below the table (z = {z}, half height {half})")]
    BelowTable { id: PrimId, z: f64, half: f64 },
    #[error("ground-truth boxes {a} and {b} interpenetrate")]
    Interpenetration { a: PrimId, b: PrimId },
    #[error("detection refers to unknown primitive id {0}")]
    UnknownDetection(PrimId),
    #[error("detection of {id} has confidence {confidence} below threshold {threshold}")]
    LowConfidence {
        id: PrimId,
        confidence: f64,
        threshold: f64,
    },
}

/// The set of known primitives (the shapes assemblies are built from).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Primitive>", into = "Vec<Primitive>")]
pub struct Catalog {
    prims: Vec<Primitive>,
    by_id: BTreeMap<PrimId, usize>,
}

impl Catalog {
    pub fn new(prims: Vec<Primitive>) -> Result<Self, SceneError> {
        let mut by_id = BTreeMap::new();
        for (ix, p) in prims.iter().enumerate() {
            if !(p.dims.x > 0.0 && p.dims.y > 0.0 && p.dims.z > 0.0) {
                return Err(SceneError::NonPositiveDims {
                    id: p.id,
                    x: p.dims.x,
                    y: p.dims.y,
                    z: p.dims.z,
                });
            }
            if by_id.insert(p.id, ix).is_some() {
                return Err(SceneError::DuplicateId(p.id));
            }
        }
        Ok(Catalog { prims, by_id })
    }

    pub fn len(&self) -> usize {
        self.prims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    pub fn get(&self, ix: usize) -> &Primitive {
        &self.prims[ix]
    }

    pub fn index_of(&self, id: PrimId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn by_id(&self, id: PrimId) -> Option<&Primitive> {
        self.index_of(id).map(|ix| &self.prims[ix])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Primitive> {
        self.prims.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = PrimId> + '_ {
        self.prims.iter().map(|p| p.id)
    }
}

impl TryFrom<Vec<Primitive>> for Catalog {
    type Error = SceneError;

    fn try_from(prims: Vec<Primitive>) -> Result<Self, SceneError> {
        Catalog::new(prims)
    }
}

impl From<Catalog> for Vec<Primitive> {
    fn from(c: Catalog) -> Vec<Primitive> {
        c.prims
    }
}

/// A ground-truth arrangement of the full catalog on a table.
///
/// Placements are used only by the vision simulator and by test oracles; the
/// planner itself never reads them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub catalog: Catalog,
    pub table: Rect,
    pub placements: BTreeMap<PrimId, Pose>,
}

impl Scene {
    pub fn new(
        catalog: Catalog,
        table: Rect,
        placements: BTreeMap<PrimId, Pose>,
    ) -> Result<Self, SceneError> {
        let scene = Scene {
            catalog,
            table,
            placements,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (&id, pose) in &self.placements {
            let prim = self
                .catalog
                .by_id(id)
                .ok_or(SceneError::UnknownPlacement(id))?;
            let half = prim.half_height();
            if pose.pos.z < half - PENETRATION_TOL {
                return Err(SceneError::BelowTable {
                    id,
                    z: pose.pos.z,
                    half,
                });
            }
        }
        let placed: Vec<(&PrimId, &Pose)> = self.placements.iter().collect();
        for i in 0..placed.len() {
            for j in (i + 1)..placed.len() {
                let (ia, pa) = placed[i];
                let (ib, pb) = placed[j];
                let prim_a = self.catalog.by_id(*ia).unwrap();
                let prim_b = self.catalog.by_id(*ib).unwrap();
                if boxes_interpenetrate(prim_a, pa, prim_b, pb, PENETRATION_TOL) {
                    return Err(SceneError::Interpenetration { a: *ia, b: *ib });
                }
            }
        }
        Ok(())
    }
}

/// A detection that does not correspond to any usable catalog identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsePositive {
    pub primitive: Primitive,
    pub pose: Pose,
}

/// What the vision stage reports about a target scene: per-object poses for
/// the visible set V, their confidences, and any hallucinated detections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub detections: BTreeMap<PrimId, Pose>,
    pub confidence: BTreeMap<PrimId, f64>,
    #[serde(default)]
    pub false_positives: Vec<FalsePositive>,
}

impl Observation {
    /// Ids of detected objects (the visible set V).
    pub fn visible_ids(&self) -> impl Iterator<Item = PrimId> + '_ {
        self.detections.keys().copied()
    }

    /// Catalog ids with no detection (the hidden set H = B \ V).
    pub fn hidden_ids(&self, catalog: &Catalog) -> Vec<PrimId> {
        catalog
            .ids()
            .filter(|id| !self.detections.contains_key(id))
            .collect()
    }

    /// Checks detection keys against the catalog and confidences against the
    /// configured threshold.
    pub fn validate(&self, catalog: &Catalog, threshold: f64) -> Result<(), SceneError> {
        for &id in self.detections.keys() {
            if catalog.index_of(id).is_none() {
                return Err(SceneError::UnknownDetection(id));
            }
            let conf = self.confidence.get(&id).copied().unwrap_or(1.0);
            if conf < threshold {
                return Err(SceneError::LowConfidence {
                    id,
                    confidence: conf,
                    threshold,
                });
            }
        }
        Ok(())
    }
}

/// One pick-and-place step of a finished plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub id: PrimId,
    pub pick: Pose,
    pub place: Pose,
    /// Reserved for downstream grasp planning; never set by the planner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_axis: Option<Axis>,
}

/// The outcome of a planning run: ordered pick/place steps, the solved pose
/// set for all N objects, the achieved reward and the search effort spent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub success: bool,
    pub reward: f64,
    pub rollouts_used: u64,
    pub steps: Vec<PlanStep>,
    pub solved_poses: BTreeMap<PrimId, Pose>,
    pub operator_sequence: Vec<Operator>,
}
