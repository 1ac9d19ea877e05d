use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{self, Aabb, Vec2};
use super::shapes::ShapeKind;
use super::{ObjectSpec, Pose, Scene, WorldConfig, WorldError};

/// Where random objects are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnConfig {
    /// Margin kept free along the workspace edges (m).
    pub margin: f64,
    /// When set, each obstacle is dropped within this distance of a randomly
    /// chosen goal candidate, producing cluttered goals.
    pub cluster_radius: Option<f64>,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        SpawnConfig { margin: 0.03, cluster_radius: None }
    }
}

/// Drops `n_goal_candidates + n_obstacles` blocks with uniformly random pose
/// by rejection sampling. Goal candidates take ids `1..=n_goal_candidates`.
pub fn spawn_random(
    n_goal_candidates: usize,
    n_obstacles: usize,
    seed: u64,
    world: &WorldConfig,
    spawn: &SpawnConfig,
) -> Result<Scene, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spawn_random_with(&mut rng, n_goal_candidates, n_obstacles, world, spawn)
}

pub fn spawn_random_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_goal_candidates: usize,
    n_obstacles: usize,
    world: &WorldConfig,
    spawn: &SpawnConfig,
) -> Result<Scene, WorldError> {
    let mut scene = Scene::empty(world.workspace(), world.object_height);
    let ws = scene.workspace;
    let mut polys: Vec<Vec<Vec2>> = Vec::new();
    let total = n_goal_candidates + n_obstacles;

    for index in 0..total {
        let is_goal = index < n_goal_candidates;
        let kind = *ShapeKind::ALL.choose(rng).expect("non-empty catalogue");
        let shape = kind.polygon();
        let color_tag = rng.gen_range(1..=7u8);
        let anchor = match (spawn.cluster_radius, is_goal, n_goal_candidates) {
            (Some(r), false, n) if n > 0 => {
                let g = rng.gen_range(0..n);
                Some((scene.objects[g].pose.position(), r))
            }
            _ => None,
        };

        let fits = |pos: Vec2, theta: f64| -> Option<Vec<Vec2>> {
            let poly: Vec<Vec2> = shape.iter().map(|v| v.rotate(theta) + pos).collect();
            let b = Aabb::of(&poly);
            if b.min.x < ws.min.x || b.min.y < ws.min.y || b.max.x > ws.max.x || b.max.y > ws.max.y {
                return None;
            }
            let clear = polys
                .iter()
                .all(|q| !b.intersects(&Aabb::of(q)) || geometry::penetration_depth(&poly, q) <= 0.0);
            clear.then_some(poly)
        };

        let mut placed = None;
        for attempt in 0..world.max_spawn_attempts {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            // a crowded anchor falls back to uniform drops for the second half
            let near = anchor.filter(|_| attempt < world.max_spawn_attempts / 2);
            let pos = match near {
                Some((c, r)) => {
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    let d = r * rng.gen::<f64>().sqrt();
                    c + Vec2::from_angle(a) * d
                }
                None => Vec2::new(
                    rng.gen_range(ws.min.x + spawn.margin..ws.max.x - spawn.margin),
                    rng.gen_range(ws.min.y + spawn.margin..ws.max.y - spawn.margin),
                ),
            };
            let Some(poly) = fits(pos, theta) else { continue };
            placed = Some((Pose { x: pos.x, y: pos.y, theta }, poly));
            break;
        }
        let (pose, poly) = placed.ok_or(WorldError::PlacementFailure { index, attempts: world.max_spawn_attempts })?;
        polys.push(poly);
        scene.objects.push(ObjectSpec {
            id: index as u32 + 1,
            shape,
            pose,
            color_tag,
            is_goal_candidate: is_goal,
        });
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_scene_has_thirty_objects() {
        let cfg = WorldConfig::default();
        let s = spawn_random(7, 23, 42, &cfg, &SpawnConfig::default()).unwrap();
        assert_eq!(s.len(), 30);
        assert_eq!(s.goal_candidates().len(), 7);
        s.validate(cfg.overlap_tol).unwrap();
    }

    #[test]
    fn empty_request_gives_empty_scene() {
        let s = spawn_random(0, 0, 3, &WorldConfig::default(), &SpawnConfig::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = WorldConfig::default();
        let a = spawn_random(1, 0, 7, &cfg, &SpawnConfig::default()).unwrap();
        let b = spawn_random(1, 0, 7, &cfg, &SpawnConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = spawn_random(1, 0, 8, &cfg, &SpawnConfig::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn clustered_obstacles_stay_near_goals() {
        let cfg = WorldConfig::default();
        let sp = SpawnConfig { cluster_radius: Some(0.06), ..SpawnConfig::default() };
        let s = spawn_random(2, 6, 11, &cfg, &sp).unwrap();
        s.validate(cfg.overlap_tol).unwrap();
        let goals: Vec<Vec2> = s.objects[..2].iter().map(|o| o.pose.position()).collect();
        for o in &s.objects[2..] {
            let d = goals.iter().map(|g| (o.pose.position() - *g).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 0.06 + 1e-12);
        }
    }

    #[test]
    fn overcrowded_request_reports_failure() {
        let cfg = WorldConfig { max_spawn_attempts: 50, ..WorldConfig::default() };
        let err = spawn_random(0, 2000, 1, &cfg, &SpawnConfig::default()).unwrap_err();
        assert!(matches!(err, WorldError::PlacementFailure { .. }));
    }
}
