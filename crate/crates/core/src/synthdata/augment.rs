use rand::seq::SliceRandom;
use rand::Rng;

use super::language::{mirror_tokens, tok};
use super::{CellRect, Color, Sample, Scene, SceneObject, Shape, NUM_COLORS, NUM_SHAPES};
use crate::geometry::Box;

/// Maximum cell shift per axis.
const MAX_SHIFT: i32 = 2;
const MAX_ATTEMPTS: usize = 16;

/// Horizontal flip (applied first) followed by an integer cell translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Transform {
    pub flip: bool,
    pub dx: i32,
    pub dy: i32,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { flip: false, dx: 0, dy: 0 };

    pub fn apply_cells(&self, c: &CellRect, grid: usize) -> Option<CellRect> {
        let g = grid as i32;
        let (mut c0, mut c1) = (c.col0 as i32, c.col1 as i32);
        if self.flip {
            (c0, c1) = (g - 1 - c1, g - 1 - c0);
        }
        let (c0, c1) = (c0 + self.dx, c1 + self.dx);
        let (r0, r1) = (c.row0 as i32 + self.dy, c.row1 as i32 + self.dy);
        if c0 < 0 || r0 < 0 || c1 >= g || r1 >= g {
            return None;
        }
        Some(CellRect { col0: c0 as u8, row0: r0 as u8, col1: c1 as u8, row1: r1 as u8 })
    }

    pub fn apply_box(&self, b: &Box, grid: usize) -> Box {
        let g = grid as f64;
        let cx = if self.flip { 1.0 - b.cx } else { b.cx };
        Box::new(cx + self.dx as f64 / g, b.cy + self.dy as f64 / g, b.w, b.h)
    }

    /// The transformed sample, or `None` when an object or the target's
    /// center would leave the image.
    pub fn apply(&self, s: &Sample) -> Option<Sample> {
        let grid = s.scene.grid;
        let objects = s
            .scene
            .objects
            .iter()
            .map(|o| self.apply_cells(&o.cells, grid).map(|cells| SceneObject { cells, ..*o }))
            .collect::<Option<alloc::vec::Vec<_>>>()?;
        let gold = match s.gold {
            Some(b) => {
                let t = self.apply_box(&b, grid);
                if !(0.0..=1.0).contains(&t.cx) || !(0.0..=1.0).contains(&t.cy) {
                    return None;
                }
                Some(t)
            }
            None => None,
        };
        let mut query = s.query.clone();
        if self.flip {
            mirror_tokens(&mut query.tokens);
        }
        Some(Sample { id: s.id, scene: Scene::new(grid, objects), query, gold })
    }
}

/// Consistent renaming of shapes and colors in the scene and the query.
/// Every predicate keeps its truth value, so the target and gold box are
/// unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Relabel {
    pub shapes: [u8; NUM_SHAPES],
    pub colors: [u8; NUM_COLORS],
}

impl Relabel {
    pub const IDENTITY: Relabel = Relabel { shapes: [0, 1, 2, 3], colors: [0, 1, 2, 3, 4] };

    pub fn random<R: Rng>(rng: &mut R) -> Relabel {
        let mut r = Relabel::IDENTITY;
        r.shapes.shuffle(rng);
        r.colors.shuffle(rng);
        r
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        let objects = s
            .scene
            .objects
            .iter()
            .map(|o| SceneObject {
                shape: Shape::ALL[self.shapes[o.shape as usize] as usize],
                color: Color::ALL[self.colors[o.color as usize] as usize],
                ..*o
            })
            .collect();
        let mut query = s.query.clone();
        for t in query.tokens.iter_mut() {
            let (s0, c0) = (tok::SHAPE0, tok::COLOR0);
            if (s0..s0 + NUM_SHAPES as u16).contains(t) {
                *t = s0 + self.shapes[(*t - s0) as usize] as u16;
            } else if (c0..c0 + NUM_COLORS as u16).contains(t) {
                *t = c0 + self.colors[(*t - c0) as usize] as u16;
            }
        }
        Sample { id: s.id, scene: Scene::new(s.scene.grid, objects), query, gold: s.gold }
    }
}

/// Random flip and/or translation followed by a random relabel.
/// Out-of-bounds geometric draws are resampled and the identity is used if
/// none fits.
pub fn augment<R: Rng>(s: &Sample, rng: &mut R) -> Sample {
    let mut moved = None;
    for _ in 0..MAX_ATTEMPTS {
        let t = Transform {
            flip: rng.random::<bool>(),
            dx: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            dy: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
        };
        if let Some(out) = t.apply(s) {
            moved = Some(out);
            break;
        }
    }
    let moved = moved.unwrap_or_else(|| s.clone());
    Relabel::random(rng).apply(&moved)
}
