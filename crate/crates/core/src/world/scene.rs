use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::geometry::{self, Aabb, Vec2};
use super::WorldError;

/// Object pose on the table plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// A uniform-height convex block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    /// Convex polygon in the object frame, counter-clockwise, meters.
    pub shape: Vec<Vec2>,
    pub pose: Pose,
    pub color_tag: u8,
    pub is_goal_candidate: bool,
}

impl ObjectSpec {
    pub fn world_polygon(&self) -> Vec<Vec2> {
        let p = self.pose.position();
        self.shape.iter().map(|v| v.rotate(self.pose.theta) + p).collect()
    }

    pub fn world_centroid(&self) -> Vec2 {
        geometry::centroid(&self.world_polygon())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Vec2,
    pub max: Vec2,
}

impl Workspace {
    pub fn square(side: f64) -> Self {
        Workspace { min: Vec2::ZERO, max: Vec2::new(side, side) }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }
}

/// Ground-truth world state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<ObjectSpec>,
    pub workspace: Workspace,
    /// Uniform block height in meters.
    pub object_height: f64,
}

const SCENE_HEADER: &str = "# pushgrasp scene v1";

impl Scene {
    pub fn empty(workspace: Workspace, object_height: f64) -> Self {
        Scene { objects: Vec::new(), workspace, object_height }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.objects.iter().map(|o| o.id).collect()
    }

    /// Ids of goal candidates still present, ascending.
    pub fn goal_candidates(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.objects.iter().filter(|o| o.is_goal_candidate).map(|o| o.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Checks ids, polygon shape, workspace containment, and pairwise overlap.
    pub fn validate(&self, overlap_tol: f64) -> Result<(), WorldError> {
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.id) {
                return Err(WorldError::DuplicateId(o.id));
            }
            if !geometry::is_convex_ccw(&o.shape) {
                return Err(WorldError::InvalidShape(o.id));
            }
            if !self.workspace.contains(o.pose.position()) {
                return Err(WorldError::OutOfBounds(o.id));
            }
        }
        let polys: Vec<Vec<Vec2>> = self.objects.iter().map(|o| o.world_polygon()).collect();
        for i in 0..polys.len() {
            for j in i + 1..polys.len() {
                let d = geometry::penetration_depth(&polys[i], &polys[j]);
                if d > overlap_tol {
                    return Err(WorldError::Interpenetration {
                        a: self.objects[i].id,
                        b: self.objects[j].id,
                        depth: d,
                    });
                }
            }
        }
        Ok(())
    }

    /// Largest pairwise penetration depth.
    pub fn max_penetration(&self) -> f64 {
        let polys: Vec<Vec<Vec2>> = self.objects.iter().map(|o| o.world_polygon()).collect();
        let boxes: Vec<Aabb> = polys.iter().map(|p| Aabb::of(p)).collect();
        let mut worst = 0.0f64;
        for i in 0..polys.len() {
            for j in i + 1..polys.len() {
                if boxes[i].intersects(&boxes[j]) {
                    worst = worst.max(geometry::penetration_depth(&polys[i], &polys[j]));
                }
            }
        }
        worst
    }

    /// Translates every object by `offset`.
    pub fn translated(&self, offset: Vec2) -> Scene {
        let mut s = self.clone();
        for o in &mut s.objects {
            o.pose.x += offset.x;
            o.pose.y += offset.y;
        }
        s
    }

    /// Line-oriented text form. Floats use shortest round-trip formatting so
    /// parsing the output reproduces the scene bit for bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{SCENE_HEADER}").unwrap();
        let w = &self.workspace;
        writeln!(out, "workspace {:?} {:?} {:?} {:?}", w.min.x, w.min.y, w.max.x, w.max.y).unwrap();
        writeln!(out, "height {:?}", self.object_height).unwrap();
        for o in &self.objects {
            write!(
                out,
                "object {} color {} goal {} pose {:?} {:?} {:?} verts {}",
                o.id,
                o.color_tag,
                u8::from(o.is_goal_candidate),
                o.pose.x,
                o.pose.y,
                o.pose.theta,
                o.shape.len()
            )
            .unwrap();
            for v in &o.shape {
                write!(out, " {:?} {:?}", v.x, v.y).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Scene, WorldError> {
        let mut workspace = None;
        let mut height = None;
        let mut objects = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| WorldError::Parse { line: lineno + 1, msg: msg.to_string() };
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64, WorldError> {
                toks.get(i).ok_or_else(|| bad("missing field"))?.parse::<f64>().map_err(|_| bad("bad number"))
            };
            match toks[0] {
                "workspace" => {
                    workspace = Some(Workspace {
                        min: Vec2::new(num(1)?, num(2)?),
                        max: Vec2::new(num(3)?, num(4)?),
                    })
                }
                "height" => height = Some(num(1)?),
                "object" => {
                    let expect = |i: usize, kw: &str| -> Result<(), WorldError> {
                        if toks.get(i) == Some(&kw) {
                            Ok(())
                        } else {
                            Err(bad(&format!("expected '{kw}'")))
                        }
                    };
                    let id: u32 = toks.get(1).and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad id"))?;
                    expect(2, "color")?;
                    let color_tag: u8 = toks.get(3).and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad color"))?;
                    expect(4, "goal")?;
                    let is_goal_candidate = match toks.get(5) {
                        Some(&"1") => true,
                        Some(&"0") => false,
                        _ => return Err(bad("bad goal flag")),
                    };
                    expect(6, "pose")?;
                    let pose = Pose { x: num(7)?, y: num(8)?, theta: num(9)? };
                    expect(10, "verts")?;
                    let n: usize = toks.get(11).and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad vertex count"))?;
                    if toks.len() != 12 + 2 * n {
                        return Err(bad("vertex count does not match coordinates"));
                    }
                    let shape = (0..n).map(|k| Ok(Vec2::new(num(12 + 2 * k)?, num(13 + 2 * k)?))).collect::<Result<Vec<_>, WorldError>>()?;
                    objects.push(ObjectSpec { id, shape, pose, color_tag, is_goal_candidate });
                }
                other => return Err(bad(&format!("unknown record '{other}'"))),
            }
        }
        Ok(Scene {
            objects,
            workspace: workspace.ok_or(WorldError::Parse { line: 0, msg: "missing workspace record".into() })?,
            object_height: height.ok_or(WorldError::Parse { line: 0, msg: "missing height record".into() })?,
        })
    }

    /// SHA-256 of the text form, hex encoded.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::shapes::ShapeKind;

    fn sample() -> Scene {
        let mut s = Scene::empty(Workspace::square(0.448), 0.03);
        s.objects.push(ObjectSpec {
            id: 1,
            shape: ShapeKind::Square.polygon(),
            pose: Pose { x: 0.1, y: 0.2, theta: 0.3 },
            color_tag: 2,
            is_goal_candidate: true,
        });
        s.objects.push(ObjectSpec {
            id: 7,
            shape: ShapeKind::Triangle.polygon(),
            pose: Pose { x: 1.0 / 3.0, y: 0.3, theta: -1.1 },
            color_tag: 5,
            is_goal_candidate: false,
        });
        s
    }

    #[test]
    fn text_round_trip_is_exact() {
        let s = sample();
        let t = s.to_text();
        let back = Scene::from_text(&t).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text(), t);
        assert_eq!(back.hash_hex(), s.hash_hex());
    }

    #[test]
    fn parse_rejects_short_vertex_list() {
        let t = sample().to_text().replace("verts 4", "verts 5");
        assert!(matches!(Scene::from_text(&t), Err(WorldError::Parse { .. })));
    }

    #[test]
    fn validate_catches_duplicates_and_overlap() {
        let mut s = sample();
        assert!(s.validate(1e-4).is_ok());
        s.objects[1].id = 1;
        assert!(matches!(s.validate(1e-4), Err(WorldError::DuplicateId(1))));
        let mut s = sample();
        s.objects[1].pose = s.objects[0].pose;
        assert!(matches!(s.validate(1e-4), Err(WorldError::Interpenetration { .. })));
    }
}
