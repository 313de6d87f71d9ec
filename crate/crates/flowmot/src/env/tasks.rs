//! Reference task suite: single-arm reach (1 checkpoint), pick-and-place
//! (4 checkpoints) and dual-arm handover (6 checkpoints). Task specs can
//! also be written to and read from UTF-8 key=value files.

use std::fs;
use std::path::Path;

use crate::env::{Checkpoint, GoalSpec, Range2, TaskSpec};
use crate::error::{Error, Result};

pub fn reach() -> TaskSpec {
    TaskSpec {
        name: "reach".into(),
        checkpoints: vec![Checkpoint::ArmNearGoal { arm: 0, goal: 0, radius: 0.06 }],
        max_steps: 120,
        num_objects: 0,
        object_range: Range2 { x_min: 0.0, x_max: 0.0, y_min: 0.0, y_max: 0.0 },
        goals: vec![GoalSpec {
            range: Range2 { x_min: 0.15, x_max: 0.85, y_min: 0.45, y_max: 0.85 },
            radius: 0.06,
        }],
        arm_start: [
            Range2 { x_min: 0.15, x_max: 0.85, y_min: 0.1, y_max: 0.3 },
            Range2::fixed(0.7, 0.12),
        ],
        instruction: "reach the goal zone".into(),
    }
}

pub fn pick_place() -> TaskSpec {
    TaskSpec {
        name: "pick_place".into(),
        checkpoints: vec![
            Checkpoint::ArmNearObject { arm: 0, object: 0, radius: 0.05 },
            Checkpoint::Holding { arm: 0, object: 0 },
            Checkpoint::ObjectInGoal { object: 0, goal: 0 },
            Checkpoint::ReleasedInGoal { object: 0, goal: 0 },
        ],
        max_steps: 250,
        num_objects: 1,
        object_range: Range2 { x_min: 0.15, x_max: 0.85, y_min: 0.55, y_max: 0.85 },
        goals: vec![GoalSpec {
            range: Range2 { x_min: 0.15, x_max: 0.85, y_min: 0.1, y_max: 0.35 },
            radius: 0.08,
        }],
        arm_start: [
            Range2 { x_min: 0.2, x_max: 0.8, y_min: 0.42, y_max: 0.5 },
            Range2::fixed(0.9, 0.9),
        ],
        instruction: "pick up the object and place it in the goal zone".into(),
    }
}

pub fn handover() -> TaskSpec {
    TaskSpec {
        name: "handover".into(),
        checkpoints: vec![
            Checkpoint::ArmNearObject { arm: 0, object: 0, radius: 0.05 },
            Checkpoint::Holding { arm: 0, object: 0 },
            // goal 0 is the fixed transfer zone in the middle
            Checkpoint::ObjectInGoal { object: 0, goal: 0 },
            Checkpoint::Holding { arm: 1, object: 0 },
            Checkpoint::ObjectInGoal { object: 0, goal: 1 },
            Checkpoint::ReleasedInGoal { object: 0, goal: 1 },
        ],
        max_steps: 350,
        num_objects: 1,
        object_range: Range2 { x_min: 0.6, x_max: 0.85, y_min: 0.5, y_max: 0.85 },
        goals: vec![
            GoalSpec {
                range: Range2 { x_min: 0.5, x_max: 0.5, y_min: 0.5, y_max: 0.5 },
                radius: 0.07,
            },
            GoalSpec {
                range: Range2 { x_min: 0.1, x_max: 0.3, y_min: 0.1, y_max: 0.3 },
                radius: 0.08,
            },
        ],
        arm_start: [
            Range2 { x_min: 0.6, x_max: 0.9, y_min: 0.15, y_max: 0.3 },
            Range2 { x_min: 0.1, x_max: 0.4, y_min: 0.15, y_max: 0.3 },
        ],
        instruction: "pick up the object and hand it over to the other arm".into(),
    }
}

/// Look up a reference task by name.
pub fn by_name(name: &str) -> Result<TaskSpec> {
    match name {
        "reach" => Ok(reach()),
        "pick_place" => Ok(pick_place()),
        "handover" => Ok(handover()),
        other => Err(Error::Config(format!(
            "unknown task {other:?} (available: reach, pick_place, handover)"
        ))),
    }
}

pub const ALL_TASKS: &[&str] = &["reach", "pick_place", "handover"];

fn range_to_kv(r: &Range2) -> String {
    format!("{},{},{},{}", r.x_min, r.x_max, r.y_min, r.y_max)
}

fn range_from_kv(s: &str) -> Result<Range2> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Data(format!("bad range {s:?}"))))
        .collect::<Result<_>>()?;
    if parts.len() != 4 {
        return Err(Error::Data(format!("range {s:?} wants 4 comma-separated numbers")));
    }
    Ok(Range2 { x_min: parts[0], x_max: parts[1], y_min: parts[2], y_max: parts[3] })
}

impl TaskSpec {
    /// Serialize as UTF-8 key=value lines.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name={}\n", self.name));
        out.push_str(&format!("instruction={}\n", self.instruction));
        out.push_str(&format!("max_steps={}\n", self.max_steps));
        out.push_str(&format!("num_objects={}\n", self.num_objects));
        out.push_str(&format!("object_range={}\n", range_to_kv(&self.object_range)));
        out.push_str(&format!("arm0_start={}\n", range_to_kv(&self.arm_start[0])));
        out.push_str(&format!("arm1_start={}\n", range_to_kv(&self.arm_start[1])));
        for g in &self.goals {
            out.push_str(&format!("goal={};{}\n", range_to_kv(&g.range), g.radius));
        }
        for c in &self.checkpoints {
            out.push_str(&format!("checkpoint={}\n", c.encode()));
        }
        out
    }

    pub fn from_kv_string(text: &str) -> Result<TaskSpec> {
        let mut name = None;
        let mut instruction = None;
        let mut max_steps = None;
        let mut num_objects = None;
        let mut object_range = None;
        let mut arm0 = None;
        let mut arm1 = None;
        let mut goals = Vec::new();
        let mut checkpoints = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad task line {line:?}")))?;
            match k {
                "name" => name = Some(v.to_string()),
                "instruction" => instruction = Some(v.to_string()),
                "max_steps" => {
                    max_steps =
                        Some(v.parse().map_err(|_| Error::Data("bad max_steps".into()))?)
                }
                "num_objects" => {
                    num_objects =
                        Some(v.parse().map_err(|_| Error::Data("bad num_objects".into()))?)
                }
                "object_range" => object_range = Some(range_from_kv(v)?),
                "arm0_start" | "arm1_start" => {
                    let r = range_from_kv(v)?;
                    if k == "arm0_start" {
                        arm0 = Some(r);
                    } else {
                        arm1 = Some(r);
                    }
                }
                "goal" => {
                    let (range, radius) = v
                        .split_once(';')
                        .ok_or_else(|| Error::Data(format!("bad goal {v:?}")))?;
                    goals.push(GoalSpec {
                        range: range_from_kv(range)?,
                        radius: radius
                            .trim()
                            .parse()
                            .map_err(|_| Error::Data("bad goal radius".into()))?,
                    });
                }
                "checkpoint" => checkpoints.push(Checkpoint::decode(v)?),
                other => return Err(Error::Data(format!("unknown task key {other:?}"))),
            }
        }
        let spec = TaskSpec {
            name: name.ok_or_else(|| Error::Data("task file missing name".into()))?,
            instruction: instruction.ok_or_else(|| Error::Data("task file missing instruction".into()))?,
            max_steps: max_steps.ok_or_else(|| Error::Data("task file missing max_steps".into()))?,
            num_objects: num_objects.unwrap_or(0),
            object_range: object_range
                .unwrap_or(Range2 { x_min: 0.0, x_max: 0.0, y_min: 0.0, y_max: 0.0 }),
            goals,
            arm_start: [
                arm0.ok_or_else(|| Error::Data("task file missing arm0_start".into()))?,
                arm1.ok_or_else(|| Error::Data("task file missing arm1_start".into()))?,
            ],
            checkpoints,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_kv_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TaskSpec> {
        TaskSpec::from_kv_string(&fs::read_to_string(path)?)
    }
}
