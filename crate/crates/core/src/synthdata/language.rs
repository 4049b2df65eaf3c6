//! Fixed vocabulary and the three referring-expression templates.

use alloc::vec::Vec;

use super::{CellRect, Color, Scene, SceneObject, Shape};

/// Token strings; the id of a token is its index.
pub const VOCAB: [&str; 29] = [
    "<pad>", "the", "circle", "square", "triangle", "star", "red", "green", "blue", "yellow", "purple", "one",
    "object", "left", "right", "of", "to", "above", "over", "below", "under", "largest", "biggest", "smallest",
    "tiniest", "leftmost", "rightmost", "topmost", "bottommost",
];

pub const VOCAB_SIZE: usize = VOCAB.len();

pub(crate) mod tok {
    pub const THE: u16 = 1;
    pub const SHAPE0: u16 = 2;
    pub const COLOR0: u16 = 6;
    pub const ONE: u16 = 11;
    pub const OBJECT: u16 = 12;
    pub const LEFT: u16 = 13;
    pub const RIGHT: u16 = 14;
    pub const OF: u16 = 15;
    pub const TO: u16 = 16;
    pub const ABOVE: u16 = 17;
    pub const OVER: u16 = 18;
    pub const BELOW: u16 = 19;
    pub const UNDER: u16 = 20;
    pub const LARGEST: u16 = 21;
    pub const BIGGEST: u16 = 22;
    pub const SMALLEST: u16 = 23;
    pub const TINIEST: u16 = 24;
    pub const LEFTMOST: u16 = 25;
    pub const RIGHTMOST: u16 = 26;
    pub const TOPMOST: u16 = 27;
    pub const BOTTOMMOST: u16 = 28;
}

pub fn token_id(word: &str) -> Option<u16> {
    VOCAB.iter().position(|w| *w == word).map(|i| i as u16)
}

/// Attribute filter; at least one of the two is set in generated queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Descriptor {
    pub shape: Option<Shape>,
    pub color: Option<Color>,
}

impl Descriptor {
    pub fn matches(&self, o: &SceneObject) -> bool {
        self.shape.is_none_or(|s| s == o.shape) && self.color.is_none_or(|c| c == o.color)
    }

    /// The three non-empty descriptors that `o` satisfies.
    pub fn all_for(o: &SceneObject) -> [Descriptor; 3] {
        [
            Descriptor { shape: Some(o.shape), color: None },
            Descriptor { shape: None, color: Some(o.color) },
            Descriptor { shape: Some(o.shape), color: Some(o.color) },
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below];

    /// Strict separation along one axis.
    pub fn holds(self, target: &CellRect, anchor: &CellRect) -> bool {
        match self {
            Relation::LeftOf => target.col1 < anchor.col0,
            Relation::RightOf => target.col0 > anchor.col1,
            Relation::Above => target.row1 < anchor.row0,
            Relation::Below => target.row0 > anchor.row1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Superlative {
    Largest,
    Smallest,
    Leftmost,
    Rightmost,
    Topmost,
    Bottommost,
}

impl Superlative {
    pub const ALL: [Superlative; 6] = [
        Superlative::Largest,
        Superlative::Smallest,
        Superlative::Leftmost,
        Superlative::Rightmost,
        Superlative::Topmost,
        Superlative::Bottommost,
    ];

    /// Larger key wins. Keys are doubled cell coordinates so they stay integral.
    fn key(self, c: &CellRect) -> i32 {
        let cx2 = c.col0 as i32 + c.col1 as i32;
        let cy2 = c.row0 as i32 + c.row1 as i32;
        match self {
            Superlative::Largest => c.area() as i32,
            Superlative::Smallest => -(c.area() as i32),
            Superlative::Leftmost => -cx2,
            Superlative::Rightmost => cx2,
            Superlative::Topmost => -cy2,
            Superlative::Bottommost => cy2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expression {
    /// "the red circle", "the square", "the blue one"
    Attribute(Descriptor),
    /// "the circle left of the red square"
    Relational { target: Descriptor, relation: Relation, anchor: Descriptor },
    /// "the largest square"
    Superlative { kind: Superlative, target: Descriptor },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    Attribute,
    Relational,
    Superlative,
}

impl Expression {
    pub fn template(&self) -> Template {
        match self {
            Expression::Attribute(_) => Template::Attribute,
            Expression::Relational { .. } => Template::Relational,
            Expression::Superlative { .. } => Template::Superlative,
        }
    }

    /// Indices of every object in `scene` the expression refers to.
    pub fn referents(&self, scene: &Scene) -> Vec<usize> {
        let objs = &scene.objects;
        match *self {
            Expression::Attribute(d) => (0..objs.len()).filter(|&i| d.matches(&objs[i])).collect(),
            Expression::Relational { target, relation, anchor } => {
                let anchors: Vec<usize> = (0..objs.len()).filter(|&i| anchor.matches(&objs[i])).collect();
                if anchors.len() != 1 {
                    return Vec::new();
                }
                let a = anchors[0];
                (0..objs.len())
                    .filter(|&i| i != a && target.matches(&objs[i]) && relation.holds(&objs[i].cells, &objs[a].cells))
                    .collect()
            }
            Expression::Superlative { kind, target } => {
                let cands: Vec<usize> = (0..objs.len()).filter(|&i| target.matches(&objs[i])).collect();
                if cands.len() < 2 {
                    return Vec::new();
                }
                let best = cands.iter().map(|&i| kind.key(&objs[i].cells)).max().unwrap_or(i32::MIN);
                let winners: Vec<usize> = cands.into_iter().filter(|&i| kind.key(&objs[i].cells) == best).collect();
                if winners.len() == 1 {
                    winners
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Encode with a synonym choice per slot; `variant` bits pick the synonyms.
    pub fn encode(&self, variant: u32) -> Vec<u16> {
        let mut out = Vec::with_capacity(12);
        out.push(tok::THE);
        match *self {
            Expression::Attribute(d) => push_descriptor(&mut out, d, tok::ONE),
            Expression::Relational { target, relation, anchor } => {
                push_descriptor(&mut out, target, tok::ONE);
                let long = variant & 1 == 1;
                match relation {
                    Relation::LeftOf | Relation::RightOf => {
                        let side = if relation == Relation::LeftOf { tok::LEFT } else { tok::RIGHT };
                        if long {
                            out.extend_from_slice(&[tok::TO, tok::THE, side, tok::OF]);
                        } else {
                            out.extend_from_slice(&[side, tok::OF]);
                        }
                    }
                    Relation::Above => out.push(if long { tok::OVER } else { tok::ABOVE }),
                    Relation::Below => out.push(if long { tok::UNDER } else { tok::BELOW }),
                }
                out.push(tok::THE);
                push_descriptor(&mut out, anchor, tok::ONE);
            }
            Expression::Superlative { kind, target } => {
                let alt = variant & 2 == 2;
                out.push(match kind {
                    Superlative::Largest if alt => tok::BIGGEST,
                    Superlative::Largest => tok::LARGEST,
                    Superlative::Smallest if alt => tok::TINIEST,
                    Superlative::Smallest => tok::SMALLEST,
                    Superlative::Leftmost => tok::LEFTMOST,
                    Superlative::Rightmost => tok::RIGHTMOST,
                    Superlative::Topmost => tok::TOPMOST,
                    Superlative::Bottommost => tok::BOTTOMMOST,
                });
                push_descriptor(&mut out, target, tok::OBJECT);
            }
        }
        out
    }
}

fn push_descriptor(out: &mut Vec<u16>, d: Descriptor, filler: u16) {
    if let Some(c) = d.color {
        out.push(tok::COLOR0 + c as u16);
    }
    match d.shape {
        Some(s) => out.push(tok::SHAPE0 + s as u16),
        None if d.color.is_some() => out.push(tok::ONE),
        None => out.push(filler),
    }
}

/// Mirror the query's left/right vocabulary, used when the scene is flipped.
pub fn mirror_tokens(tokens: &mut [u16]) {
    for t in tokens.iter_mut() {
        *t = match *t {
            tok::LEFT => tok::RIGHT,
            tok::RIGHT => tok::LEFT,
            tok::LEFTMOST => tok::RIGHTMOST,
            tok::RIGHTMOST => tok::LEFTMOST,
            other => other,
        };
    }
}
