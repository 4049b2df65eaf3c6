//! Procedural grounding scenes, referring expressions and labeled/unlabeled
//! splits.
//!
//! A scene is a `G x G` grid holding 1 to 6 axis-aligned rectangular objects,
//! each with a shape and a color. Objects never touch: there is at least one
//! empty cell between any two of them, so each object is a separate blob in
//! the feature grid. Every cell carries a feature vector of
//! [`FEATURE_DIM`] values: one-hot shape, one-hot color, and the cell's
//! normalized `(x, y)` center.

mod augment;
pub mod language;

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::evalreport::SealedGold;
use crate::geometry::{Box, CornerBox};
use crate::rng;

pub use augment::{augment, Transform};
use language::{Descriptor, Expression, Relation, Superlative, Template};

pub const NUM_SHAPES: usize = 4;
pub const NUM_COLORS: usize = 5;
pub const FEATURE_DIM: usize = NUM_SHAPES + NUM_COLORS + 2;
pub const MAX_OBJECTS: usize = 6;
pub const MAX_OBJECT_CELLS: u8 = 3;
pub const MAX_QUERY_TOKENS: usize = 12;
pub const SCENE_RETRIES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Star,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
}

impl Shape {
    pub const ALL: [Shape; NUM_SHAPES] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Star];

    pub fn from_index(i: usize) -> Option<Shape> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Star => "star",
        }
    }

    pub fn from_name(s: &str) -> Option<Shape> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl Color {
    pub const ALL: [Color; NUM_COLORS] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Purple];

    pub fn from_index(i: usize) -> Option<Color> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
        }
    }

    pub fn from_name(s: &str) -> Option<Color> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Inclusive cell rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellRect {
    pub col0: u8,
    pub row0: u8,
    pub col1: u8,
    pub row1: u8,
}

impl CellRect {
    pub fn width(&self) -> u32 {
        (self.col1 - self.col0) as u32 + 1
    }

    pub fn height(&self) -> u32 {
        (self.row1 - self.row0) as u32 + 1
    }

    pub fn area(&self) -> u32 {
        self.width() * self.height()
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        (self.col0 as usize..=self.col1 as usize).contains(&col) && (self.row0 as usize..=self.row1 as usize).contains(&row)
    }

    /// Chebyshev gap of at least one empty cell.
    fn separated_from(&self, other: &CellRect) -> bool {
        self.col1 as i32 + 1 < other.col0 as i32
            || other.col1 as i32 + 1 < self.col0 as i32
            || self.row1 as i32 + 1 < other.row0 as i32
            || other.row1 as i32 + 1 < self.row0 as i32
    }

    pub fn corner_box(&self, grid: usize) -> CornerBox {
        let g = grid as f64;
        CornerBox::new(
            self.col0 as f64 / g,
            self.row0 as f64 / g,
            (self.col1 as f64 + 1.0) / g,
            (self.row1 as f64 + 1.0) / g,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub cells: CellRect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub grid: usize,
    pub objects: Vec<SceneObject>,
    /// Row-major `grid * grid * FEATURE_DIM`; cell `(col, row)` is token `row * grid + col`.
    pub features: Vec<f64>,
}

impl Scene {
    pub fn new(grid: usize, objects: Vec<SceneObject>) -> Self {
        let features = render_features(grid, &objects);
        Self { grid, objects, features }
    }

    pub fn cell_features(&self, col: usize, row: usize) -> &[f64] {
        let i = (row * self.grid + col) * FEATURE_DIM;
        &self.features[i..i + FEATURE_DIM]
    }

    pub fn object_box(&self, index: usize) -> Box {
        self.objects[index].cells.corner_box(self.grid).to_center()
    }

    /// Occupying object of each cell, row-major.
    pub fn occupancy(&self) -> Vec<Option<usize>> {
        let g = self.grid;
        (0..g * g)
            .map(|i| self.objects.iter().position(|o| o.cells.contains(i % g, i / g)))
            .collect()
    }
}

fn render_features(grid: usize, objects: &[SceneObject]) -> Vec<f64> {
    let mut f = alloc::vec![0.0; grid * grid * FEATURE_DIM];
    for row in 0..grid {
        for col in 0..grid {
            let base = (row * grid + col) * FEATURE_DIM;
            f[base + NUM_SHAPES + NUM_COLORS] = (col as f64 + 0.5) / grid as f64;
            f[base + NUM_SHAPES + NUM_COLORS + 1] = (row as f64 + 0.5) / grid as f64;
        }
    }
    for o in objects {
        for row in o.cells.row0..=o.cells.row1 {
            for col in o.cells.col0..=o.cells.col1 {
                let base = (row as usize * grid + col as usize) * FEATURE_DIM;
                f[base + o.shape as usize] = 1.0;
                f[base + NUM_SHAPES + o.color as usize] = 1.0;
            }
        }
    }
    f
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub tokens: Vec<u16>,
    /// Index into `Scene::objects`; stripped from unlabeled copies.
    pub target_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub scene: Scene,
    pub query: Query,
    /// Gold box for labeled samples, or the adopted pseudo box for promoted
    /// pseudo labels; `None` on unlabeled samples.
    pub gold: Option<Box>,
}

impl Sample {
    /// The same sample with every trace of the gold answer removed.
    pub fn unlabeled(&self) -> Sample {
        Sample {
            id: self.id,
            scene: self.scene.clone(),
            query: Query { tokens: self.query.tokens.clone(), target_index: None },
            gold: None,
        }
    }

    /// An unlabeled sample promoted to a training target with `pseudo` as its box.
    pub fn with_pseudo_box(&self, pseudo: Box) -> Sample {
        let mut s = self.unlabeled();
        s.gold = Some(pseudo);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub grid: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self { n: 2000, grid: 8, seed: 0 }
    }
}

/// Template mix: attribute, relational, superlative.
const TEMPLATE_WEIGHTS: [(Template, f64); 3] =
    [(Template::Attribute, 0.4), (Template::Relational, 0.35), (Template::Superlative, 0.25)];

/// Deterministic dataset; sample `i` depends only on `(seed, i)`.
pub fn generate_dataset(spec: &GenSpec) -> Result<Vec<Sample>> {
    if spec.n < 10 {
        return Err(Error::InvalidGenSpec(format!("n must be at least 10, got {}", spec.n)));
    }
    (0..spec.n).map(|i| generate_sample(spec, i)).collect()
}

/// Sample `index` of the dataset described by `spec`.
pub fn generate_sample(spec: &GenSpec, index: usize) -> Result<Sample> {
    if spec.grid < 4 || spec.grid > 64 {
        return Err(Error::InvalidGenSpec(format!("grid must be in 4..=64, got {}", spec.grid)));
    }
    let mut rng = rng::stream_indexed(spec.seed, "sample", index as u64);
    for _ in 0..SCENE_RETRIES {
        let Some(objects) = place_objects(spec.grid, &mut rng) else {
            continue;
        };
        let scene = Scene::new(spec.grid, objects);
        let target = rng.random_range(0..scene.objects.len());
        if let Some(expr) = describe(&scene, target, &mut rng) {
            let tokens = expr.encode(rng.random());
            debug_assert!(tokens.len() <= MAX_QUERY_TOKENS);
            let gold = scene.object_box(target);
            return Ok(Sample {
                id: index as u64,
                scene,
                query: Query { tokens, target_index: Some(target) },
                gold: Some(gold),
            });
        }
    }
    Err(Error::GenerationExhausted {
        index,
        retries: SCENE_RETRIES,
        reason: format!("no discriminative expression found on a {}x{} grid", spec.grid, spec.grid),
    })
}

fn place_objects<R: Rng>(grid: usize, rng: &mut R) -> Option<Vec<SceneObject>> {
    let count = rng.random_range(1..=MAX_OBJECTS);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let max_side = (MAX_OBJECT_CELLS as usize).min(grid);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..100 {
            let w = rng.random_range(1..=max_side);
            let h = rng.random_range(1..=max_side);
            let col0 = rng.random_range(0..=grid - w);
            let row0 = rng.random_range(0..=grid - h);
            let cells = CellRect {
                col0: col0 as u8,
                row0: row0 as u8,
                col1: (col0 + w - 1) as u8,
                row1: (row0 + h - 1) as u8,
            };
            if objects.iter().all(|o| o.cells.separated_from(&cells)) {
                objects.push(SceneObject {
                    shape: Shape::ALL[rng.random_range(0..NUM_SHAPES)],
                    color: Color::ALL[rng.random_range(0..NUM_COLORS)],
                    cells,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(objects)
}

/// A uniquely-referring expression for `target`, trying templates in a
/// weighted random order.
fn describe<R: Rng>(scene: &Scene, target: usize, rng: &mut R) -> Option<Expression> {
    let mut order: Vec<(Template, f64)> = TEMPLATE_WEIGHTS.to_vec();
    // weighted shuffle: repeatedly draw one of the remaining templates
    let mut templates = Vec::with_capacity(3);
    while !order.is_empty() {
        let total: f64 = order.iter().map(|t| t.1).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut idx = order.len() - 1;
        for (i, t) in order.iter().enumerate() {
            if pick < t.1 {
                idx = i;
                break;
            }
            pick -= t.1;
        }
        templates.push(order.remove(idx).0);
    }
    for t in templates {
        let found = match t {
            Template::Attribute => describe_attribute(scene, target, rng),
            Template::Relational => describe_relational(scene, target, rng),
            Template::Superlative => describe_superlative(scene, target, rng),
        };
        if found.is_some() {
            return found;
        }
    }
    None
}

fn unique_referent(expr: &Expression, scene: &Scene, target: usize) -> bool {
    let r = expr.referents(scene);
    r.len() == 1 && r[0] == target
}

fn describe_attribute<R: Rng>(scene: &Scene, target: usize, rng: &mut R) -> Option<Expression> {
    let mut cands: Vec<Expression> = Descriptor::all_for(&scene.objects[target])
        .into_iter()
        .map(Expression::Attribute)
        .filter(|e| unique_referent(e, scene, target))
        .collect();
    cands.shuffle(rng);
    cands.pop()
}

fn describe_relational<R: Rng>(scene: &Scene, target: usize, rng: &mut R) -> Option<Expression> {
    let t = &scene.objects[target];
    let mut cands = Vec::new();
    for td in Descriptor::all_for(t) {
        // only when the attributes alone are ambiguous
        if unique_referent(&Expression::Attribute(td), scene, target) {
            continue;
        }
        for (ai, a) in scene.objects.iter().enumerate() {
            if ai == target {
                continue;
            }
            for ad in Descriptor::all_for(a) {
                if !unique_referent(&Expression::Attribute(ad), scene, ai) {
                    continue;
                }
                for relation in Relation::ALL {
                    let e = Expression::Relational { target: td, relation, anchor: ad };
                    if unique_referent(&e, scene, target) {
                        cands.push(e);
                    }
                }
            }
        }
    }
    if cands.is_empty() {
        return None;
    }
    Some(cands[rng.random_range(0..cands.len())])
}

fn describe_superlative<R: Rng>(scene: &Scene, target: usize, rng: &mut R) -> Option<Expression> {
    let t = &scene.objects[target];
    let mut descs: Vec<Descriptor> = Descriptor::all_for(t).to_vec();
    descs.push(Descriptor { shape: None, color: None });
    let mut cands = Vec::new();
    for d in descs {
        for kind in Superlative::ALL {
            let e = Expression::Superlative { kind, target: d };
            if unique_referent(&e, scene, target) {
                cands.push(e);
            }
        }
    }
    if cands.is_empty() {
        return None;
    }
    Some(cands[rng.random_range(0..cands.len())])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub label_fraction: f64,
    pub seed: u64,
}

/// Labeled samples keep their gold; unlabeled copies are stripped and their
/// gold boxes sealed away for evaluation only.
#[derive(Clone, Debug)]
pub struct Split {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub sealed: SealedGold,
}

pub fn labeled_count(total: usize, fraction: f64) -> usize {
    libm::round(fraction * total as f64) as usize
}

pub fn split(data: &[Sample], spec: &SplitSpec) -> Result<Split> {
    if !(spec.label_fraction > 0.0 && spec.label_fraction <= 1.0) {
        return Err(Error::InvalidFraction(spec.label_fraction));
    }
    let k = labeled_count(data.len(), spec.label_fraction);
    if k == 0 {
        return Err(Error::EmptyLabeledSplit { fraction: spec.label_fraction, total: data.len() });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::stream(spec.seed, "split"));
    let mut chosen = alloc::vec![false; data.len()];
    for &i in &order[..k] {
        chosen[i] = true;
    }
    let mut labeled = Vec::with_capacity(k);
    let mut unlabeled = Vec::with_capacity(data.len() - k);
    let mut gold = Vec::with_capacity(data.len() - k);
    for (i, s) in data.iter().enumerate() {
        if chosen[i] {
            if s.gold.is_none() {
                return Err(Error::MissingTarget(s.id));
            }
            labeled.push(s.clone());
        } else {
            if let Some(g) = s.gold {
                gold.push((s.id, g));
            }
            unlabeled.push(s.unlabeled());
        }
    }
    Ok(Split { labeled, unlabeled, sealed: SealedGold::seal(gold) })
}

/// Validates the query length and token range against the model's limits.
pub fn check_query(tokens: &[u16], vocab: usize, max_len: usize) -> Result<()> {
    if tokens.is_empty() || tokens.len() > max_len {
        return Err(Error::QueryTooLong { len: tokens.len(), max: max_len });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::TokenOutOfVocab { token: t, vocab });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, seed: u64) -> GenSpec {
        GenSpec { n, grid: 8, seed }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(generate_dataset(&spec(50, 3)).unwrap(), generate_dataset(&spec(50, 3)).unwrap());
        assert_ne!(generate_dataset(&spec(50, 3)).unwrap(), generate_dataset(&spec(50, 4)).unwrap());
    }

    #[test]
    fn gold_boxes_inside_unit_square() {
        let data = generate_dataset(&spec(100, 1)).unwrap();
        assert_eq!(data.len(), 100);
        for s in &data {
            let g = s.gold.unwrap();
            assert!(g.is_valid());
            let c = g.to_corners();
            assert!(c.x1 >= 0.0 && c.y1 >= 0.0 && c.x2 <= 1.0 && c.y2 <= 1.0);
            assert!(g.cx > 0.0 && g.cx < 1.0 && g.cy > 0.0 && g.cy < 1.0);
            assert!(s.query.tokens.len() <= MAX_QUERY_TOKENS);
            assert_eq!(g, s.scene.object_box(s.query.target_index.unwrap()));
        }
    }

    #[test]
    fn tiny_n_is_rejected() {
        assert!(matches!(generate_dataset(&spec(5, 1)), Err(Error::InvalidGenSpec(_))));
    }

    #[test]
    fn every_template_appears() {
        let data = generate_dataset(&spec(300, 9)).unwrap();
        let words = |s: &Sample| -> alloc::vec::Vec<&str> {
            s.query.tokens.iter().map(|&t| language::VOCAB[t as usize]).collect()
        };
        let rel = data.iter().filter(|s| words(s).iter().any(|w| ["of", "above", "over", "below", "under"].contains(w))).count();
        let sup = data.iter().filter(|s| words(s).iter().any(|w| w.ends_with("most") || w.ends_with("est"))).count();
        assert!(rel > 30, "relational {rel}");
        assert!(sup > 30, "superlative {sup}");
    }

    #[test]
    fn split_sizes_and_stripping() {
        let data = generate_dataset(&spec(200, 2)).unwrap();
        let s = split(&data, &SplitSpec { label_fraction: 0.10, seed: 5 }).unwrap();
        assert_eq!(s.labeled.len(), 20);
        assert_eq!(s.unlabeled.len(), 180);
        assert!(s.unlabeled.iter().all(|u| u.gold.is_none() && u.query.target_index.is_none()));
        assert_eq!(s.sealed.len(), 180);

        let all = split(&data, &SplitSpec { label_fraction: 1.0, seed: 5 }).unwrap();
        assert_eq!(all.labeled.len(), 200);
        assert!(all.unlabeled.is_empty());

        let again = split(&data, &SplitSpec { label_fraction: 0.10, seed: 5 }).unwrap();
        assert_eq!(s.labeled, again.labeled);
    }

    #[test]
    fn split_that_labels_nothing_fails() {
        let data = generate_dataset(&spec(20, 2)).unwrap();
        assert!(matches!(
            split(&data, &SplitSpec { label_fraction: 0.01, seed: 0 }),
            Err(Error::EmptyLabeledSplit { .. })
        ));
        assert!(split(&data, &SplitSpec { label_fraction: 0.0, seed: 0 }).is_err());
    }

    #[test]
    fn features_mark_object_cells() {
        let obj = SceneObject {
            shape: Shape::Star,
            color: Color::Blue,
            cells: CellRect { col0: 1, row0: 2, col1: 2, row1: 2 },
        };
        let scene = Scene::new(8, alloc::vec![obj]);
        let f = scene.cell_features(2, 2);
        assert_eq!(f[Shape::Star as usize], 1.0);
        assert_eq!(f[NUM_SHAPES + Color::Blue as usize], 1.0);
        assert_eq!(f[..NUM_SHAPES + NUM_COLORS].iter().sum::<f64>(), 2.0);
        assert_eq!(f[NUM_SHAPES + NUM_COLORS], 2.5 / 8.0);
        assert!(scene.cell_features(0, 0)[..NUM_SHAPES + NUM_COLORS].iter().all(|&v| v == 0.0));
        let b = scene.object_box(0);
        assert_eq!(b, Box::new(0.25, 0.3125, 0.25, 0.125));
    }

    #[test]
    fn check_query_limits() {
        assert!(check_query(&[1, 2], language::VOCAB_SIZE, 12).is_ok());
        assert!(matches!(check_query(&[1, 99], language::VOCAB_SIZE, 12), Err(Error::TokenOutOfVocab { .. })));
        assert!(check_query(&[1; 13], language::VOCAB_SIZE, 12).is_err());
    }
}
