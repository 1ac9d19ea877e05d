use serde::{Deserialize, Serialize};

use super::geometry::{regular_polygon, Vec2};

/// Block catalogue used for random scenes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    /// 30 mm square.
    Square,
    /// 60 × 25 mm bar, long side along the object x axis.
    Rectangle,
    /// Equilateral triangle, 35 mm sides.
    Triangle,
    /// 30 mm disc as a 12-gon.
    Disc,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Square, ShapeKind::Rectangle, ShapeKind::Triangle, ShapeKind::Disc];

    /// Polygon in the object frame, centered on its centroid.
    pub fn polygon(self) -> Vec<Vec2> {
        match self {
            ShapeKind::Square => rect(0.03, 0.03),
            ShapeKind::Rectangle => rect(0.06, 0.025),
            ShapeKind::Triangle => {
                let side = 0.035;
                let r = side / 3f64.sqrt();
                regular_polygon(Vec2::ZERO, r, 3)
            }
            ShapeKind::Disc => regular_polygon(Vec2::ZERO, 0.015, 12),
        }
    }
}

/// Rectangle of the given full extents centered at the origin.
pub fn rect(length: f64, width: f64) -> Vec<Vec2> {
    let (a, b) = (length / 2.0, width / 2.0);
    vec![Vec2::new(-a, -b), Vec2::new(a, -b), Vec2::new(a, b), Vec2::new(-a, b)]
}
