use std::collections::BTreeSet;

use super::geometry::{self, Aabb, Vec2};
use super::{Primitive, Scene, StepOutcome, WorldConfig, WorldError};

/// Overlap depth below which two bodies are considered merely touching.
const CONTACT_EPS: f64 = 1e-9;
const PUSHER_SIDES: usize = 16;

struct Bodies {
    polys: Vec<Vec<Vec2>>,
    boxes: Vec<Aabb>,
}

impl Bodies {
    fn new(scene: &Scene) -> Self {
        let polys: Vec<Vec<Vec2>> = scene.objects.iter().map(|o| o.world_polygon()).collect();
        let boxes = polys.iter().map(|p| Aabb::of(p)).collect();
        Bodies { polys, boxes }
    }

    fn translate(&mut self, scene: &mut Scene, i: usize, offset: Vec2) {
        scene.objects[i].pose.x += offset.x;
        scene.objects[i].pose.y += offset.y;
        for v in &mut self.polys[i] {
            *v += offset;
        }
        self.boxes[i] = Aabb::of(&self.polys[i]);
    }

    /// Shifts object `i` back inside the workspace if any vertex left it.
    fn clamp(&mut self, scene: &mut Scene, i: usize) {
        let ws = scene.workspace;
        let b = self.boxes[i];
        let mut off = Vec2::ZERO;
        if b.min.x < ws.min.x {
            off.x = ws.min.x - b.min.x;
        } else if b.max.x > ws.max.x {
            off.x = ws.max.x - b.max.x;
        }
        if b.min.y < ws.min.y {
            off.y = ws.min.y - b.min.y;
        } else if b.max.y > ws.max.y {
            off.y = ws.max.y - b.max.y;
        }
        if off != Vec2::ZERO {
            self.translate(scene, i, off);
        }
    }

    fn depth(&self, i: usize, j: usize) -> f64 {
        if !self.boxes[i].intersects(&self.boxes[j]) {
            return 0.0;
        }
        geometry::penetration_depth(&self.polys[i], &self.polys[j])
    }
}

/// Sweeps a pusher disc from `start` along `theta` for `length` meters.
///
/// Contacted objects translate along the push direction just far enough to
/// clear the pusher, and object-object contacts propagate the same way for up
/// to `max_resolve_passes` passes per substep. A substep that would leave any
/// contact deeper than `overlap_tol` (an object pinned against the workspace
/// edge, or a chain longer than the pass budget) is rolled back and ends the
/// push.
pub fn apply_push(scene: &Scene, start: Vec2, theta: f64, length: f64, cfg: &WorldConfig) -> StepOutcome {
    let dir = Vec2::from_angle(theta);
    let mut work = scene.clone();
    let mut bodies = Bodies::new(&work);
    let n = work.objects.len();
    let substeps = cfg.push_substeps.max(1);

    for step in 1..=substeps {
        let center = start + dir * (length * step as f64 / substeps as f64);
        let pusher = geometry::regular_polygon(center, cfg.push_radius, PUSHER_SIDES);
        let pusher_box = Aabb::of(&pusher);
        let saved_scene = work.clone();
        let saved_polys = bodies.polys.clone();
        let saved_boxes = bodies.boxes.clone();

        let mut active = vec![false; n];
        for i in 0..n {
            if !pusher_box.intersects(&bodies.boxes[i]) {
                continue;
            }
            if geometry::penetration_depth(&pusher, &bodies.polys[i]) > CONTACT_EPS {
                let s = geometry::exit_distance(&pusher, &bodies.polys[i], dir);
                bodies.translate(&mut work, i, dir * s);
                bodies.clamp(&mut work, i);
                active[i] = true;
            }
        }

        for _ in 0..cfg.max_resolve_passes {
            let mut changed = false;
            for i in 0..n {
                if !active[i] {
                    continue;
                }
                for j in 0..n {
                    if i == j || bodies.depth(i, j) <= CONTACT_EPS {
                        continue;
                    }
                    let s = geometry::exit_distance(&bodies.polys[i], &bodies.polys[j], dir);
                    if s > 0.0 {
                        bodies.translate(&mut work, j, dir * s);
                        bodies.clamp(&mut work, j);
                        active[j] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let blocked = (0..n).any(|i| {
            active[i]
                && ((pusher_box.intersects(&bodies.boxes[i])
                    && geometry::penetration_depth(&pusher, &bodies.polys[i]) > cfg.overlap_tol)
                    || (0..n).any(|j| j != i && bodies.depth(i, j) > cfg.overlap_tol))
        });
        if blocked {
            work = saved_scene;
            bodies.polys = saved_polys;
            bodies.boxes = saved_boxes;
            break;
        }
    }

    let moved_ids = scene
        .objects
        .iter()
        .zip(&work.objects)
        .filter(|(a, b)| (a.pose.position() - b.pose.position()).norm() > cfg.move_tol)
        .map(|(a, _)| a.id)
        .collect();
    StepOutcome { primitive: Primitive::Push, success: true, grasped_id: None, moved_ids, scene_after: work }
}

/// Finger footprints for a grasp at `point` with jaw direction `theta`.
pub fn finger_footprints(point: Vec2, theta: f64, cfg: &WorldConfig) -> [Vec<Vec2>; 2] {
    let jaw = Vec2::from_angle(theta);
    let closing = jaw.perp();
    let (hl, hw) = (cfg.finger_length / 2.0, cfg.finger_width / 2.0);
    [
        geometry::oriented_rect(point + closing * cfg.gripper_half_width, jaw, hl, hw),
        geometry::oriented_rect(point - closing * cfg.gripper_half_width, jaw, hl, hw),
    ]
}

/// Top-down grasp: succeeds when `point` lies on an object and neither finger
/// footprint overlaps any object. The grasped object leaves the scene.
pub fn apply_grasp(scene: &Scene, point: Vec2, theta: f64, cfg: &WorldConfig) -> StepOutcome {
    let failed = || StepOutcome {
        primitive: Primitive::Grasp,
        success: false,
        grasped_id: None,
        moved_ids: BTreeSet::new(),
        scene_after: scene.clone(),
    };
    let polys: Vec<Vec<Vec2>> = scene.objects.iter().map(|o| o.world_polygon()).collect();
    let Some(target) = polys.iter().position(|p| geometry::contains(p, point)) else {
        return failed();
    };
    let fingers = finger_footprints(point, theta, cfg);
    let blocked = fingers.iter().any(|f| {
        let fb = Aabb::of(f);
        polys
            .iter()
            .any(|p| fb.intersects(&Aabb::of(p)) && geometry::penetration_depth(f, p) > CONTACT_EPS)
    });
    if blocked {
        return failed();
    }
    let mut after = scene.clone();
    let removed = after.objects.remove(target);
    StepOutcome {
        primitive: Primitive::Grasp,
        success: true,
        grasped_id: Some(removed.id),
        moved_ids: BTreeSet::new(),
        scene_after: after,
    }
}

/// Summed planar displacement of objects that moved more than `move_tol`.
pub fn scatter_metric(before: &Scene, after: &Scene, move_tol: f64) -> Result<f64, WorldError> {
    if before.ids() != after.ids() {
        return Err(WorldError::IdMismatch);
    }
    let mut total = 0.0;
    for o in &before.objects {
        let a = after.get(o.id).ok_or(WorldError::IdMismatch)?;
        let d = (a.pose.position() - o.pose.position()).norm();
        if d > move_tol {
            total += d;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::shapes::{rect, ShapeKind};
    use crate::world::{ObjectSpec, Pose, Workspace};

    fn block(id: u32, x: f64, y: f64) -> ObjectSpec {
        ObjectSpec {
            id,
            shape: rect(0.04, 0.04),
            pose: Pose { x, y, theta: 0.0 },
            color_tag: 1,
            is_goal_candidate: false,
        }
    }

    fn scene(objs: Vec<ObjectSpec>) -> Scene {
        Scene { objects: objs, workspace: Workspace::square(0.448), object_height: 0.03 }
    }

    #[test]
    fn push_lone_block_matches_sweep_geometry() {
        let cfg = WorldConfig::default();
        let s = scene(vec![block(1, 0.2, 0.2)]);
        // pusher starts 0.05 left of the block center; its leading point reaches
        // the block face (x = 0.18) once it has travelled 0.02 - r = 0.01 m, then
        // drags the face along for the remaining 0.09 m.
        let out = apply_push(&s, Vec2::new(0.15, 0.2), 0.0, 0.1, &cfg);
        let p = out.scene_after.objects[0].pose;
        let expected_face = 0.15 + 0.1 + cfg.push_radius;
        assert!((p.x - 0.02 - expected_face).abs() < 1e-9, "x = {}", p.x);
        assert!((p.y - 0.2).abs() < 1e-12);
        assert_eq!(out.moved_ids, BTreeSet::from([1]));
    }

    #[test]
    fn push_in_empty_region_is_noop() {
        let cfg = WorldConfig::default();
        let s = scene(vec![block(1, 0.05, 0.05)]);
        let out = apply_push(&s, Vec2::new(0.3, 0.3), 0.7, 0.1, &cfg);
        assert!(out.moved_ids.is_empty());
        assert_eq!(out.scene_after, s);
    }

    #[test]
    fn push_chain_moves_both_without_overlap() {
        let cfg = WorldConfig::default();
        let s = scene(vec![block(1, 0.2, 0.2), block(2, 0.245, 0.21)]);
        let out = apply_push(&s, Vec2::new(0.15, 0.2), 0.0, 0.1, &cfg);
        assert_eq!(out.moved_ids, BTreeSet::from([1, 2]));
        assert!(out.scene_after.max_penetration() <= cfg.overlap_tol);
    }

    #[test]
    fn push_against_wall_stops_and_keeps_bounds() {
        let cfg = WorldConfig::default();
        let s = scene(vec![block(1, 0.40, 0.2)]);
        let out = apply_push(&s, Vec2::new(0.36, 0.2), 0.0, 0.1, &cfg);
        let o = &out.scene_after.objects[0];
        let b = Aabb::of(&o.world_polygon());
        assert!(b.max.x <= 0.448 + 1e-12);
        assert!(o.pose.x > 0.40);
    }

    #[test]
    fn grasp_isolated_block_succeeds() {
        let cfg = WorldConfig::default();
        let mut o = block(3, 0.2, 0.2);
        o.shape = ShapeKind::Square.polygon();
        let s = scene(vec![o]);
        let out = apply_grasp(&s, Vec2::new(0.2, 0.2), 0.0, &cfg);
        assert!(out.success);
        assert_eq!(out.grasped_id, Some(3));
        assert!(out.scene_after.is_empty());
    }

    #[test]
    fn grasp_in_free_space_fails() {
        let cfg = WorldConfig::default();
        let s = scene(vec![block(3, 0.2, 0.2)]);
        let out = apply_grasp(&s, Vec2::new(0.1, 0.1), 0.0, &cfg);
        assert!(!out.success);
        assert_eq!(out.grasped_id, None);
        assert_eq!(out.scene_after, s);
    }

    #[test]
    fn grasp_flanked_block_fails_for_every_angle() {
        let cfg = WorldConfig::default();
        let mut objs = vec![block(1, 0.2, 0.2)];
        objs[0].shape = ShapeKind::Square.polygon();
        let mut id = 2;
        for (dx, dy) in [(0.035, 0.0), (-0.035, 0.0), (0.0, 0.035), (0.0, -0.035)] {
            let mut o = block(id, 0.2 + dx, 0.2 + dy);
            o.shape = rect(0.035, 0.035);
            objs.push(o);
            id += 1;
        }
        let s = scene(objs);
        for k in 0..16 {
            let theta = k as f64 * std::f64::consts::PI / 8.0;
            // exhaustive oracle: a finger overlaps some object iff the grasp fails
            let fingers = finger_footprints(Vec2::new(0.2, 0.2), theta, &cfg);
            let hit = fingers.iter().any(|f| {
                s.objects.iter().any(|o| geometry::penetration_depth(f, &o.world_polygon()) > 0.0)
            });
            assert!(hit);
            assert!(!apply_grasp(&s, Vec2::new(0.2, 0.2), theta, &cfg).success);
        }
    }

    #[test]
    fn rectangle_needs_short_axis_closing() {
        let cfg = WorldConfig::default();
        let o = ObjectSpec {
            id: 1,
            shape: ShapeKind::Rectangle.polygon(),
            pose: Pose { x: 0.2, y: 0.2, theta: 0.0 },
            color_tag: 1,
            is_goal_candidate: true,
        };
        let s = scene(vec![o]);
        // jaw along x closes along y (short side): clear
        assert!(apply_grasp(&s, Vec2::new(0.2, 0.2), 0.0, &cfg).success);
        // jaw along y closes along x (60 mm side): fingers hit the bar ends
        assert!(!apply_grasp(&s, Vec2::new(0.2, 0.2), std::f64::consts::FRAC_PI_2, &cfg).success);
    }

    #[test]
    fn scatter_metric_sums_displacements() {
        let a = scene(vec![block(1, 0.1, 0.1), block(2, 0.2, 0.2), block(3, 0.3, 0.3)]);
        assert_eq!(scatter_metric(&a, &a, 1e-3).unwrap(), 0.0);
        let mut b = a.clone();
        b.objects[0].pose.x += 0.05;
        assert!((scatter_metric(&a, &b, 1e-3).unwrap() - 0.05).abs() < 1e-12);
        let mut c = a.clone();
        for o in &mut c.objects {
            o.pose.y += 0.02;
        }
        assert!((scatter_metric(&a, &c, 1e-3).unwrap() - 0.06).abs() < 1e-12);
        let mut d = a.clone();
        d.objects.pop();
        assert_eq!(scatter_metric(&a, &d, 1e-3), Err(WorldError::IdMismatch));
    }
}
