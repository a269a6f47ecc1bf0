//! Synthetic stand-in for the vision stage: turns a ground-truth scene into
//! an observation with occlusion-driven missed detections, Gaussian position
//! noise, optional false positives and confidence thresholding.
//!
//! Objects are projected orthographically along the camera direction onto
//! the image plane; each projected box is approximated by the bounding
//! rectangle of its projected corners and the visible fraction is the part
//! of that rectangle not covered by strictly nearer objects, computed with
//! exact rectangle-union arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::scene::{FalsePositive, Observation, Pose, PrimId, Scene, Vec3};

/// How detection confidence is derived.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceModel {
    /// Confidence equals the visible-area fraction.
    #[default]
    VisibleFraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    /// Unit view direction (from the camera toward the scene).
    pub camera_dir: Vec3,
    /// Objects with visible fraction below this are never detected.
    pub occlusion_threshold: f64,
    /// Standard deviation of the per-axis position noise, meters.
    pub pos_noise_sigma: f64,
    /// Expected number of hallucinated detections per scene.
    pub false_positive_rate: f64,
    pub confidence_model: ConfidenceModel,
    /// Detections with confidence below this are filtered out.
    pub confidence_threshold: f64,
    /// Ids that are always dropped, regardless of geometry.
    pub forced_hidden: Vec<PrimId>,
    pub seed: u64,
}

impl Default for VisionConfig {
    fn default() -> Self {
        VisionConfig {
            camera_dir: Vec3::new(0.0, 1.0, -0.35),
            occlusion_threshold: 0.7,
            pos_noise_sigma: 0.003,
            false_positive_rate: 0.0,
            confidence_model: ConfidenceModel::VisibleFraction,
            confidence_threshold: 0.95,
            forced_hidden: Vec::new(),
            seed: 0,
        }
    }
}

impl VisionConfig {
    /// Exact pass-through configuration: every placed object is detected at
    /// its true pose.
    pub fn identity(camera_dir: Vec3) -> Self {
        VisionConfig {
            camera_dir,
            occlusion_threshold: 0.0,
            pos_noise_sigma: 0.0,
            false_positive_rate: 0.0,
            confidence_threshold: 0.0,
            ..VisionConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.occlusion_threshold) || !unit(self.confidence_threshold) {
            return Err(VisionError::BadConfig(
                "occlusion and confidence thresholds must lie in [0, 1]".into(),
            ));
        }
        if self.pos_noise_sigma < 0.0 || self.false_positive_rate < 0.0 {
            return Err(VisionError::BadConfig(
                "noise and false-positive rates must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("camera direction must be a nonzero vector")]
    DegenerateCameraDir,
    #[error("invalid vision config: {0}")]
    BadConfig(String),
}

/// Projected rectangle of one box on the image plane, with its depth along
/// the view direction.
#[derive(Clone, Copy, Debug)]
struct ProjRect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    depth: f64,
}

impl ProjRect {
    fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    fn clip_to(&self, o: &ProjRect) -> Option<ProjRect> {
        let r = ProjRect {
            x0: self.x0.max(o.x0),
            x1: self.x1.min(o.x1),
            y0: self.y0.max(o.y0),
            y1: self.y1.min(o.y1),
            depth: self.depth,
        };
        if r.x1 > r.x0 && r.y1 > r.y0 {
            Some(r)
        } else {
            None
        }
    }
}

fn image_basis(dir: Vec3) -> Result<(Vec3, Vec3, Vec3), VisionError> {
    let d = dir.normalized().ok_or(VisionError::DegenerateCameraDir)?;
    let helper = if d.z.abs() < 0.9 {
        Vec3::new(0.0, 0.0, 1.0)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let u = d
        .cross(helper)
        .normalized()
        .expect("helper is never parallel to dir");
    let v = d.cross(u);
    Ok((d, u, v))
}

fn project_box(prim: &crate::scene::Primitive, pose: &Pose, d: Vec3, u: Vec3, v: Vec3) -> ProjRect {
    let (wx, wy) = prim.xy_extents(pose.rot);
    let h = prim.dims.z;
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for sx in [-0.5, 0.5] {
        for sy in [-0.5, 0.5] {
            for sz in [-0.5, 0.5] {
                let corner = pose.pos + Vec3::new(sx * wx, sy * wy, sz * h);
                let pu = u.dot(corner);
                let pv = v.dot(corner);
                x0 = x0.min(pu);
                x1 = x1.max(pu);
                y0 = y0.min(pv);
                y1 = y1.max(pv);
            }
        }
    }
    ProjRect {
        x0,
        x1,
        y0,
        y1,
        depth: d.dot(pose.pos),
    }
}

/// Area of `target` covered by the union of `occluders`, exact.
fn covered_area(target: &ProjRect, occluders: &[ProjRect]) -> f64 {
    let clipped: Vec<ProjRect> = occluders.iter().filter_map(|o| o.clip_to(target)).collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|r| [r.x0, r.x1]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        let mut intervals: Vec<(f64, f64)> = clipped
            .iter()
            .filter(|r| r.x0 <= x0 && r.x1 >= x1)
            .map(|r| (r.y0, r.y1))
            .collect();
        intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut len = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (lo, hi) in intervals.drain(..) {
            match cur {
                None => cur = Some((lo, hi)),
                Some((clo, chi)) => {
                    if lo <= chi {
                        cur = Some((clo, chi.max(hi)));
                    } else {
                        len += chi - clo;
                        cur = Some((lo, hi));
                    }
                }
            }
        }
        if let Some((clo, chi)) = cur {
            len += chi - clo;
        }
        area += (x1 - x0) * len;
    }
    area
}

/// Fraction of the target object's projection not covered by nearer objects.
pub fn visible_fraction(
    target: PrimId,
    scene: &Scene,
    camera_dir: Vec3,
) -> Result<f64, VisionError> {
    let (d, u, v) = image_basis(camera_dir)?;
    let pose = scene
        .placements
        .get(&target)
        .expect("target must be placed");
    let prim = scene
        .catalog
        .by_id(target)
        .expect("target must be cataloged");
    let rect = project_box(prim, pose, d, u, v);
    let area = rect.area();
    if area <= 0.0 {
        return Ok(0.0);
    }
    let occluders: Vec<ProjRect> = scene
        .placements
        .iter()
        .filter(|(&id, _)| id != target)
        .map(|(&id, p)| project_box(scene.catalog.by_id(id).unwrap(), p, d, u, v))
        .filter(|r| r.depth < rect.depth - 1e-12)
        .collect();
    Ok(((area - covered_area(&rect, &occluders)) / area).clamp(0.0, 1.0))
}

/// Standard normal draw via Box-Muller.
fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Poisson draw (Knuth), adequate for the small rates used here.
fn poisson(rng: &mut ChaCha12Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let limit = (-rate).exp();
    let mut k = 0usize;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit || k > 1000 {
            return k;
        }
        k += 1;
    }
}

/// Simulates the vision stage on a ground-truth scene.
pub fn observe(scene: &Scene, cfg: &VisionConfig) -> Result<Observation, VisionError> {
    cfg.validate()?;
    let (d, u, v) = image_basis(cfg.camera_dir)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut obs = Observation::default();

    let rects: Vec<(PrimId, ProjRect)> = scene
        .placements
        .iter()
        .map(|(&id, p)| {
            (
                id,
                project_box(scene.catalog.by_id(id).unwrap(), p, d, u, v),
            )
        })
        .collect();

    for (id, rect) in &rects {
        if cfg.forced_hidden.contains(id) {
            continue;
        }
        let area = rect.area();
        if area <= 0.0 {
            continue;
        }
        let occluders: Vec<ProjRect> = rects
            .iter()
            .filter(|(oid, o)| oid != id && o.depth < rect.depth - 1e-12)
            .map(|(_, o)| *o)
            .collect();
        let fraction = ((area - covered_area(rect, &occluders)) / area).clamp(0.0, 1.0);
        if fraction < cfg.occlusion_threshold {
            continue;
        }
        let confidence = match cfg.confidence_model {
            ConfidenceModel::VisibleFraction => fraction,
        };
        if confidence < cfg.confidence_threshold {
            continue;
        }
        let truth = scene.placements[id];
        let noise = Vec3::new(
            cfg.pos_noise_sigma * gaussian(&mut rng),
            cfg.pos_noise_sigma * gaussian(&mut rng),
            cfg.pos_noise_sigma * gaussian(&mut rng),
        );
        obs.detections.insert(
            *id,
            Pose {
                pos: truth.pos + noise,
                rot: truth.rot,
            },
        );
        obs.confidence.insert(*id, confidence);
    }

    let n_false = poisson(&mut rng, cfg.false_positive_rate);
    for _ in 0..n_false {
        let ix = rng.gen_range(0..scene.catalog.len());
        let prim = scene.catalog.get(ix).clone();
        let pose = Pose {
            pos: Vec3::new(
                rng.gen_range(scene.table.min[0]..=scene.table.max[0]),
                rng.gen_range(scene.table.min[1]..=scene.table.max[1]),
                prim.half_height(),
            ),
            rot: if rng.gen::<bool>() {
                crate::scene::RotationClass::Deg90
            } else {
                crate::scene::RotationClass::Deg0
            },
        };
        // A hallucination with a free catalog identity enters the visible
        // set like a real detection; otherwise it is reported separately.
        if !obs.detections.contains_key(&prim.id) && !cfg.forced_hidden.contains(&prim.id) {
            obs.detections.insert(prim.id, pose);
            obs.confidence.insert(prim.id, 1.0);
        } else {
            obs.false_positives.push(FalsePositive {
                primitive: prim,
                pose,
            });
        }
    }

    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Catalog, Primitive, Rect};
    use std::collections::BTreeMap;

    fn two_box_scene(front_dims: (f64, f64, f64)) -> Scene {
        // Box 1 sits behind box 0 with the camera looking along +y.
        let catalog = Catalog::new(vec![
            Primitive::new(0, "front", front_dims.0, front_dims.1, front_dims.2),
            Primitive::new(1, "back", 0.04, 0.04, 0.04),
        ])
        .unwrap();
        let mut placements = BTreeMap::new();
        placements.insert(PrimId(0), Pose::upright(0.0, -0.05, front_dims.2 / 2.0));
        placements.insert(PrimId(1), Pose::upright(0.0, 0.05, 0.02));
        Scene::new(catalog, Rect::new(-0.4, -0.3, 0.4, 0.3), placements).unwrap()
    }

    fn front_cam() -> Vec3 {
        Vec3::new(0.0, 1.0, 0.0)
    }

    #[test]
    fn unoccluded_object_is_fully_visible() {
        let scene = two_box_scene((0.08, 0.04, 0.08));
        assert_eq!(
            visible_fraction(PrimId(0), &scene, front_cam()).unwrap(),
            1.0
        );
    }

    #[test]
    fn fully_blocked_object_has_zero_fraction() {
        // The front box projection strictly contains the back one.
        let scene = two_box_scene((0.08, 0.04, 0.08));
        assert_eq!(
            visible_fraction(PrimId(1), &scene, front_cam()).unwrap(),
            0.0
        );
    }

    #[test]
    fn half_cover_gives_half_fraction() {
        // Front box of equal height but half the width, sharing the left
        // edge of the back box in projection.
        let catalog = Catalog::new(vec![
            Primitive::new(0, "front", 0.02, 0.04, 0.04),
            Primitive::new(1, "back", 0.04, 0.04, 0.04),
        ])
        .unwrap();
        let mut placements = BTreeMap::new();
        placements.insert(PrimId(0), Pose::upright(-0.01, -0.05, 0.02));
        placements.insert(PrimId(1), Pose::upright(0.0, 0.05, 0.02));
        let scene = Scene::new(catalog, Rect::new(-0.4, -0.3, 0.4, 0.3), placements).unwrap();
        let f = visible_fraction(PrimId(1), &scene, front_cam()).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_config_reproduces_placements_exactly() {
        let scene = two_box_scene((0.08, 0.04, 0.08));
        let obs = observe(&scene, &VisionConfig::identity(front_cam())).unwrap();
        assert_eq!(obs.detections.len(), 2);
        for (id, pose) in &scene.placements {
            assert_eq!(obs.detections[id], *pose);
        }
        assert!(obs.false_positives.is_empty());
    }

    #[test]
    fn occluded_object_is_dropped_at_default_thresholds() {
        let scene = two_box_scene((0.08, 0.04, 0.08));
        let cfg = VisionConfig {
            camera_dir: front_cam(),
            pos_noise_sigma: 0.0,
            ..VisionConfig::default()
        };
        let obs = observe(&scene, &cfg).unwrap();
        assert!(obs.detections.contains_key(&PrimId(0)));
        assert!(!obs.detections.contains_key(&PrimId(1)));
    }

    #[test]
    fn forced_hidden_never_appears() {
        let scene = two_box_scene((0.08, 0.04, 0.08));
        let mut cfg = VisionConfig::identity(front_cam());
        cfg.forced_hidden = vec![PrimId(0)];
        cfg.false_positive_rate = 5.0;
        for seed in 0..20 {
            cfg.seed = seed;
            let obs = observe(&scene, &cfg).unwrap();
            assert!(!obs.detections.contains_key(&PrimId(0)));
        }
    }

    #[test]
    fn raising_occlusion_threshold_never_adds_detections() {
        let scene = two_box_scene((0.08, 0.04, 0.06));
        let mut prev = usize::MAX;
        for tau in [0.0, 0.3, 0.6, 0.9, 1.0] {
            let cfg = VisionConfig {
                camera_dir: front_cam(),
                occlusion_threshold: tau,
                pos_noise_sigma: 0.0,
                confidence_threshold: 0.0,
                ..VisionConfig::default()
            };
            let n = observe(&scene, &cfg).unwrap().detections.len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn observation_is_seed_deterministic() {
        let scene = two_box_scene((0.08, 0.04, 0.08));
        let mut cfg = VisionConfig::identity(front_cam());
        cfg.pos_noise_sigma = 0.005;
        cfg.false_positive_rate = 1.0;
        cfg.seed = 42;
        let a = observe(&scene, &cfg).unwrap();
        let b = observe(&scene, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 43;
        let c = observe(&scene, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_perturbs_positions_but_not_rotations() {
        let scene = two_box_scene((0.08, 0.04, 0.08));
        let mut cfg = VisionConfig::identity(front_cam());
        cfg.pos_noise_sigma = 0.002;
        cfg.seed = 7;
        let obs = observe(&scene, &cfg).unwrap();
        let truth = scene.placements[&PrimId(0)];
        let seen = obs.detections[&PrimId(0)];
        assert_ne!(truth.pos, seen.pos);
        assert!(truth.pos.distance(seen.pos) < 0.02);
        assert_eq!(truth.rot, seen.rot);
    }

    #[test]
    fn rotated_placements_project_with_swapped_extents() {
        // A long slab turned 90 degrees becomes deep instead of wide; from a
        // top-down camera it then covers a box behind it only after the turn.
        let catalog = Catalog::new(vec![
            Primitive::new(0, "slab", 0.02, 0.12, 0.04),
            Primitive::new(1, "tile", 0.04, 0.02, 0.02),
        ])
        .unwrap();
        let mut placements = BTreeMap::new();
        placements.insert(
            PrimId(0),
            Pose::new(0.0, 0.0, 0.06, crate::scene::RotationClass::Deg90),
        );
        placements.insert(PrimId(1), Pose::upright(0.03, 0.0, 0.01));
        let scene = Scene::new(catalog, Rect::new(-0.4, -0.3, 0.4, 0.3), placements).unwrap();
        let down = Vec3::new(0.0, 0.0, -1.0);
        // Rotated footprint is 0.12 x 0.02: it fully shadows the cube at
        // x = 0.03 from above.
        assert_eq!(visible_fraction(PrimId(1), &scene, down).unwrap(), 0.0);
        let obs = observe(&scene, &VisionConfig::identity(down)).unwrap();
        assert_eq!(
            obs.detections[&PrimId(0)].rot,
            crate::scene::RotationClass::Deg90
        );
    }

    #[test]
    fn false_positive_with_taken_identity_lands_in_the_report_list() {
        let scene = two_box_scene((0.08, 0.04, 0.08));
        let mut cfg = VisionConfig::identity(front_cam());
        cfg.false_positive_rate = 8.0;
        cfg.seed = 3;
        let obs = observe(&scene, &cfg).unwrap();
        // Both identities are genuinely detected, so every hallucination
        // must end up in the false-positive list.
        assert_eq!(obs.detections.len(), 2);
        assert!(!obs.false_positives.is_empty());
    }
}
