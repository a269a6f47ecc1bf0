//! On-disk JSON representations and their validation.
//!
//! Files store id-keyed maps as arrays of records so ids stay plain
//! integers; see docs/FORMATS.md for the field-by-field schema. Loading
//! validates referenced data and reports the offending file (and, for parse
//! errors, line and column).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::planner::{Layout, SearchConfig};
use crate::scene::{
    Axis, Catalog, FalsePositive, Observation, PlanResult, PlanStep, Pose, PrimId, Primitive, Rect,
    Scene,
};
use crate::strips::{Operator, Support};
use crate::vision::VisionConfig;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl FormatError {
    fn invalid(path: &Path, message: impl ToString) -> Self {
        FormatError::Invalid {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| FormatError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text + "\n").map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    pub id: PrimId,
    pub pose: Pose,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: PrimId,
    pub pose: Pose,
    pub confidence: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFile {
    pub table: Rect,
    pub catalog: Vec<Primitive>,
    pub placements: Vec<PoseRecord>,
}

impl From<&Scene> for SceneFile {
    fn from(scene: &Scene) -> Self {
        SceneFile {
            table: scene.table,
            catalog: scene.catalog.iter().cloned().collect(),
            placements: scene
                .placements
                .iter()
                .map(|(&id, &pose)| PoseRecord { id, pose })
                .collect(),
        }
    }
}

pub fn load_scene(path: &Path) -> Result<Scene, FormatError> {
    let file: SceneFile = read_json(path)?;
    let catalog = Catalog::new(file.catalog).map_err(|e| FormatError::invalid(path, e))?;
    let placements: BTreeMap<PrimId, Pose> = file
        .placements
        .into_iter()
        .map(|r| (r.id, r.pose))
        .collect();
    Scene::new(catalog, file.table, placements).map_err(|e| FormatError::invalid(path, e))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ObservationFile {
    pub detections: Vec<DetectionRecord>,
    #[serde(default)]
    pub false_positives: Vec<FalsePositive>,
}

impl From<&Observation> for ObservationFile {
    fn from(obs: &Observation) -> Self {
        ObservationFile {
            detections: obs
                .detections
                .iter()
                .map(|(&id, &pose)| DetectionRecord {
                    id,
                    pose,
                    confidence: obs.confidence.get(&id).copied().unwrap_or(1.0),
                })
                .collect(),
            false_positives: obs.false_positives.clone(),
        }
    }
}

impl From<ObservationFile> for Observation {
    fn from(file: ObservationFile) -> Self {
        let mut obs = Observation::default();
        for rec in file.detections {
            obs.detections.insert(rec.id, rec.pose);
            obs.confidence.insert(rec.id, rec.confidence);
        }
        obs.false_positives = file.false_positives;
        obs
    }
}

pub fn load_observation(path: &Path) -> Result<Observation, FormatError> {
    let file: ObservationFile = read_json(path)?;
    Ok(file.into())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayoutFile {
    pub picks: Vec<PoseRecord>,
    #[serde(default)]
    pub place_offset: [f64; 2],
}

pub fn load_layout(path: &Path) -> Result<Layout, FormatError> {
    let file: LayoutFile = read_json(path)?;
    Ok(Layout {
        picks: file.picks.into_iter().map(|r| (r.id, r.pose)).collect(),
        place_offset: file.place_offset,
    })
}

/// `{op, args}` form of one operator, with catalog ids as arguments and the
/// table encoded as the string `"table"`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub op: String,
    pub args: Vec<Value>,
}

pub fn operator_to_record(op: &Operator, catalog: &Catalog) -> OperatorRecord {
    let id = |ix: usize| Value::from(catalog.get(ix).id.0);
    match *op {
        Operator::PutOn { actor, support } => OperatorRecord {
            op: "put_on".into(),
            args: vec![
                id(actor),
                match support {
                    Support::Table => Value::from("table"),
                    Support::Obj(b) => id(b),
                },
            ],
        },
        Operator::PutOnAlongX { actor, s1, s2 } => OperatorRecord {
            op: "put_on_along_x".into(),
            args: vec![id(actor), id(s1), id(s2)],
        },
        Operator::PutOnAlongY { actor, s1, s2 } => OperatorRecord {
            op: "put_on_along_y".into(),
            args: vec![id(actor), id(s1), id(s2)],
        },
        Operator::Rotate { actor } => OperatorRecord {
            op: "rotate".into(),
            args: vec![id(actor)],
        },
    }
}

pub fn operator_from_record(rec: &OperatorRecord, catalog: &Catalog) -> Result<Operator, String> {
    let ix = |v: &Value| -> Result<usize, String> {
        let raw = v
            .as_u64()
            .ok_or_else(|| format!("expected an id, got {v}"))?;
        catalog
            .index_of(PrimId(raw as u32))
            .ok_or_else(|| format!("unknown primitive id {raw}"))
    };
    let arity = |n: usize| -> Result<(), String> {
        if rec.args.len() == n {
            Ok(())
        } else {
            Err(format!(
                "operator {} expects {n} args, got {}",
                rec.op,
                rec.args.len()
            ))
        }
    };
    match rec.op.as_str() {
        "put_on" => {
            arity(2)?;
            let support = if rec.args[1] == "table" {
                Support::Table
            } else {
                Support::Obj(ix(&rec.args[1])?)
            };
            Ok(Operator::PutOn {
                actor: ix(&rec.args[0])?,
                support,
            })
        }
        "put_on_along_x" => {
            arity(3)?;
            Ok(Operator::PutOnAlongX {
                actor: ix(&rec.args[0])?,
                s1: ix(&rec.args[1])?,
                s2: ix(&rec.args[2])?,
            })
        }
        "put_on_along_y" => {
            arity(3)?;
            Ok(Operator::PutOnAlongY {
                actor: ix(&rec.args[0])?,
                s1: ix(&rec.args[1])?,
                s2: ix(&rec.args[2])?,
            })
        }
        "rotate" => {
            arity(1)?;
            Ok(Operator::Rotate {
                actor: ix(&rec.args[0])?,
            })
        }
        other => Err(format!("unknown operator kind {other}")),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub id: PrimId,
    pub pick: Pose,
    pub place: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_axis: Option<Axis>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanFile {
    pub success: bool,
    pub reward: f64,
    pub rollouts_used: u64,
    pub operator_sequence: Vec<OperatorRecord>,
    pub steps: Vec<StepRecord>,
    pub solved_poses: Vec<PoseRecord>,
}

pub fn plan_to_file(plan: &PlanResult, catalog: &Catalog) -> PlanFile {
    PlanFile {
        success: plan.success,
        reward: plan.reward,
        rollouts_used: plan.rollouts_used,
        operator_sequence: plan
            .operator_sequence
            .iter()
            .map(|op| operator_to_record(op, catalog))
            .collect(),
        steps: plan
            .steps
            .iter()
            .map(|s| StepRecord {
                id: s.id,
                pick: s.pick,
                place: s.place,
                grasp_axis: s.grasp_axis,
            })
            .collect(),
        solved_poses: plan
            .solved_poses
            .iter()
            .map(|(&id, &pose)| PoseRecord { id, pose })
            .collect(),
    }
}

pub fn plan_from_file(file: &PlanFile, catalog: &Catalog) -> Result<PlanResult, String> {
    Ok(PlanResult {
        success: file.success,
        reward: file.reward,
        rollouts_used: file.rollouts_used,
        operator_sequence: file
            .operator_sequence
            .iter()
            .map(|r| operator_from_record(r, catalog))
            .collect::<Result<_, _>>()?,
        steps: file
            .steps
            .iter()
            .map(|s| PlanStep {
                id: s.id,
                pick: s.pick,
                place: s.place,
                grasp_axis: s.grasp_axis,
            })
            .collect(),
        solved_poses: file.solved_poses.iter().map(|r| (r.id, r.pose)).collect(),
    })
}

pub fn load_plan(path: &Path, catalog: &Catalog) -> Result<PlanResult, FormatError> {
    let file: PlanFile = read_json(path)?;
    plan_from_file(&file, catalog).map_err(|e| FormatError::invalid(path, e))
}

/// A named experiment: scene, pick layout, vision configuration (or a pinned
/// observation file) and search configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub scene: String,
    pub layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    #[serde(default)]
    pub vision: VisionConfig,
    #[serde(default)]
    pub search: SearchConfig,
}

/// A fully loaded scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub scene: Scene,
    pub layout: Layout,
    /// When present, used verbatim for every seed instead of simulating
    /// vision on the scene.
    pub observation: Option<Observation>,
    pub vision: VisionConfig,
    pub search: SearchConfig,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, FormatError> {
    let file: ScenarioFile = read_json(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let scene = load_scene(&dir.join(&file.scene))?;
    let layout = load_layout(&dir.join(&file.layout))?;
    let observation = match &file.observation {
        Some(rel) => {
            let obs = load_observation(&dir.join(rel))?;
            obs.validate(&scene.catalog, file.vision.confidence_threshold)
                .map_err(|e| FormatError::invalid(&dir.join(rel), e))?;
            Some(obs)
        }
        None => None,
    };
    for id in layout.picks.keys() {
        if scene.catalog.index_of(*id).is_none() {
            return Err(FormatError::invalid(
                path,
                format!("layout pick for unknown id {id}"),
            ));
        }
    }
    for id in scene.catalog.ids() {
        if !layout.picks.contains_key(&id) {
            return Err(FormatError::invalid(
                path,
                format!("layout missing pick pose for id {id}"),
            ));
        }
    }
    Ok(Scenario {
        name: file.name,
        scene,
        layout,
        observation,
        vision: file.vision,
        search: file.search,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_scene() -> Scene {
        let catalog = Catalog::new(vec![
            Primitive::new(0, "cube", 0.06, 0.06, 0.06),
            Primitive::new(1, "slab", 0.1, 0.05, 0.02),
        ])
        .unwrap();
        let mut placements = BTreeMap::new();
        placements.insert(PrimId(0), Pose::upright(0.0, 0.0, 0.03));
        placements.insert(PrimId(1), Pose::upright(0.2, 0.0, 0.01));
        Scene::new(catalog, Rect::new(-0.4, -0.3, 0.4, 0.3), placements).unwrap()
    }

    #[test]
    fn scene_round_trips_through_json() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let scene = sample_scene();
        write_json(&path, &SceneFile::from(&scene)).unwrap();
        let loaded = load_scene(&path).unwrap();
        assert_eq!(loaded, scene);
    }

    #[test]
    fn parse_errors_carry_file_and_position() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{ \"table\": [1,").unwrap();
        let err = load_scene(&path).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("broken.json"));
        assert!(matches!(err, FormatError::Parse { line, .. } if line >= 1));
    }

    #[test]
    fn invalid_scene_is_rejected_with_path() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad_scene.json");
        std::fs::write(
            &path,
            r#"{"table": {"min": [-0.4, -0.3], "max": [0.4, 0.3]},
               "catalog": [{"id": 0, "label": "bad", "dims": [0.0, 0.1, 0.1]}],
               "placements": []}"#,
        )
        .unwrap();
        let err = load_scene(&path).unwrap_err();
        assert!(err.to_string().contains("bad_scene.json"));
        assert!(err.to_string().contains("non-positive"));
    }

    #[test]
    fn pinned_observation_below_threshold_is_rejected() {
        let dir = tempdir().unwrap();
        write_json(
            &dir.path().join("scene.json"),
            &SceneFile::from(&sample_scene()),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("layout.json"),
            r#"{"picks": [
                {"id": 0, "pose": {"pos": [-0.3, -0.25, 0.03], "rot": 0}},
                {"id": 1, "pose": {"pos": [-0.2, -0.25, 0.01], "rot": 0}}
            ]}"#,
        )
        .unwrap();
        std::fs::write(
            dir.path().join("obs.json"),
            r#"{"detections": [
                {"id": 0, "pose": {"pos": [0.0, 0.0, 0.03], "rot": 0}, "confidence": 0.3}
            ]}"#,
        )
        .unwrap();
        std::fs::write(
            dir.path().join("scenario.json"),
            r#"{"name": "t", "scene": "scene.json", "layout": "layout.json",
                "observation": "obs.json",
                "vision": {"confidence_threshold": 0.9}}"#,
        )
        .unwrap();
        let err = load_scenario(&dir.path().join("scenario.json")).unwrap_err();
        assert!(err.to_string().contains("confidence"));
    }

    #[test]
    fn operator_records_round_trip() {
        let scene = sample_scene();
        let ops = vec![
            Operator::PutOn {
                actor: 0,
                support: Support::Table,
            },
            Operator::Rotate { actor: 1 },
            Operator::PutOn {
                actor: 1,
                support: Support::Obj(0),
            },
        ];
        for op in ops {
            let rec = operator_to_record(&op, &scene.catalog);
            let back = operator_from_record(&rec, &scene.catalog).unwrap();
            assert_eq!(op, back);
        }
    }

    #[test]
    fn unknown_operator_kind_is_rejected() {
        let scene = sample_scene();
        let rec = OperatorRecord {
            op: "teleport".into(),
            args: vec![],
        };
        assert!(operator_from_record(&rec, &scene.catalog).is_err());
    }
}
