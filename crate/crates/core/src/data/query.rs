//! Templated referring expressions over a scene and their exhaustive resolver.
//!
//! Grammar (every expression starts with `the`):
//!
//! ```text
//! desc      := [small|large] [red|green|blue|yellow|purple] (circle|square|triangle|shape)
//! absolute  := the desc in the (top|middle|bottom) (left|center|right)
//! attribute := the desc
//! relation  := the desc (left of|right of|above|below) the desc
//! compare   := the (biggest|smallest|leftmost|rightmost|topmost|bottommost) desc
//! ```

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::scene::{Color, SceneObject, ShapeKind, SizeClass};
use crate::error::{PfosError, Result};

/// Centers closer than this to a region boundary make an absolute query ambiguous.
pub const REGION_MARGIN: f64 = 3.0;
/// Minimum center separation along the relation axis.
pub const RELATION_MARGIN: f64 = 4.0;
/// Minimum lead of a positional superlative over the runner-up, in pixels.
pub const POSITION_MARGIN: f64 = 4.0;
/// Minimum side-length lead of a size superlative.
pub const SIZE_MARGIN: f64 = 3.0;

pub const ROW_WORDS: [&str; 3] = ["top", "middle", "bottom"];
pub const COL_WORDS: [&str; 3] = ["left", "center", "right"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Absolute,
    Attribute,
    Relation,
    Compare,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Absolute, Category::Attribute, Category::Relation, Category::Compare];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Absolute => "absolute",
            Category::Attribute => "attribute",
            Category::Relation => "relation",
            Category::Compare => "compare",
        }
    }

    /// Absolute and attribute queries form the easy split.
    pub fn is_easy(self) -> bool {
        matches!(self, Category::Absolute | Category::Attribute)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = PfosError;
    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| PfosError::Validation(format!("unknown category `{s}`")))
    }
}

/// Conjunction of optional attributes; an empty descriptor reads "shape".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Descriptor {
    pub size: Option<SizeClass>,
    pub color: Option<Color>,
    pub kind: Option<ShapeKind>,
}

impl Descriptor {
    pub fn matches(&self, o: &SceneObject) -> bool {
        self.size.is_none_or(|s| s == o.size)
            && self.color.is_none_or(|c| c == o.color)
            && self.kind.is_none_or(|k| k == o.kind)
    }

    /// The descriptor using the attributes of `o` selected by `(size, color, kind)`.
    pub fn of(o: &SceneObject, size: bool, color: bool, kind: bool) -> Self {
        Descriptor {
            size: size.then_some(o.size),
            color: color.then_some(o.color),
            kind: kind.then_some(o.kind),
        }
    }

    fn words(&self) -> Vec<&'static str> {
        let mut w = Vec::with_capacity(3);
        w.extend(self.size.map(SizeClass::word));
        w.extend(self.color.map(Color::word));
        w.push(self.kind.map_or("shape", ShapeKind::word));
        w
    }

    /// Parses a descriptor from the front of `words`, returning the rest.
    fn parse<'a>(words: &'a [&'a str]) -> Option<(Descriptor, &'a [&'a str])> {
        let mut d = Descriptor::default();
        let mut i = 0;
        if let Some(s) = words.get(i).and_then(|w| SizeClass::ALL.into_iter().find(|s| s.word() == *w)) {
            d.size = Some(s);
            i += 1;
        }
        if let Some(c) = words.get(i).and_then(|w| Color::ALL.into_iter().find(|c| c.word() == *w)) {
            d.color = Some(c);
            i += 1;
        }
        let noun = *words.get(i)?;
        if noun != "shape" {
            d.kind = Some(ShapeKind::ALL.into_iter().find(|k| k.word() == noun)?);
        }
        Some((d, &words[i + 1..]))
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

    pub fn words(self) -> &'static [&'static str] {
        match self {
            Relation::LeftOf => &["left", "of"],
            Relation::RightOf => &["right", "of"],
            Relation::Above => &["above"],
            Relation::Below => &["below"],
        }
    }

    /// Signed separation; positive when `o` stands in the relation to `anchor`.
    pub fn separation(self, o: &SceneObject, anchor: &SceneObject) -> f64 {
        match self {
            Relation::LeftOf => anchor.bbox.cx - o.bbox.cx,
            Relation::RightOf => o.bbox.cx - anchor.bbox.cx,
            Relation::Above => anchor.bbox.cy - o.bbox.cy,
            Relation::Below => o.bbox.cy - anchor.bbox.cy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Superlative {
    Biggest,
    Smallest,
    Leftmost,
    Rightmost,
    Topmost,
    Bottommost,
}

impl Superlative {
    pub const ALL: [Superlative; 6] = [
        Superlative::Biggest,
        Superlative::Smallest,
        Superlative::Leftmost,
        Superlative::Rightmost,
        Superlative::Topmost,
        Superlative::Bottommost,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Superlative::Biggest => "biggest",
            Superlative::Smallest => "smallest",
            Superlative::Leftmost => "leftmost",
            Superlative::Rightmost => "rightmost",
            Superlative::Topmost => "topmost",
            Superlative::Bottommost => "bottommost",
        }
    }

    /// Score maximized by the winner.
    pub fn score(self, o: &SceneObject) -> f64 {
        match self {
            Superlative::Biggest => o.bbox.w,
            Superlative::Smallest => -o.bbox.w,
            Superlative::Leftmost => -o.bbox.cx,
            Superlative::Rightmost => o.bbox.cx,
            Superlative::Topmost => -o.bbox.cy,
            Superlative::Bottommost => o.bbox.cy,
        }
    }

    fn margin(self) -> f64 {
        match self {
            Superlative::Biggest | Superlative::Smallest => SIZE_MARGIN,
            _ => POSITION_MARGIN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Query {
    Absolute { desc: Descriptor, row: usize, col: usize },
    Attribute { desc: Descriptor },
    Relation { desc: Descriptor, relation: Relation, anchor: Descriptor },
    Compare { superlative: Superlative, desc: Descriptor },
}

/// Region index (0..3) of coordinate `v` on an axis of length `extent`.
pub fn region_index(v: f64, extent: f64) -> usize {
    ((v * 3.0 / extent).floor().max(0.0) as usize).min(2)
}

fn region_boundary_distance(v: f64, extent: f64) -> f64 {
    let (a, b) = (extent / 3.0, 2.0 * extent / 3.0);
    (v - a).abs().min((v - b).abs())
}

impl Query {
    pub fn category(&self) -> Category {
        match self {
            Query::Absolute { .. } => Category::Absolute,
            Query::Attribute { .. } => Category::Attribute,
            Query::Relation { .. } => Category::Relation,
            Query::Compare { .. } => Category::Compare,
        }
    }

    pub fn words(&self) -> Vec<&'static str> {
        let mut w = vec!["the"];
        match self {
            Query::Absolute { desc, row, col } => {
                w.extend(desc.words());
                w.extend(["in", "the", ROW_WORDS[*row], COL_WORDS[*col]]);
            }
            Query::Attribute { desc } => w.extend(desc.words()),
            Query::Relation { desc, relation, anchor } => {
                w.extend(desc.words());
                w.extend(relation.words());
                w.push("the");
                w.extend(anchor.words());
            }
            Query::Compare { superlative, desc } => {
                w.push(superlative.word());
                w.extend(desc.words());
            }
        }
        w
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = || PfosError::Validation(format!("not a grammar expression: `{text}`"));
        let words: Vec<&str> = text.split_whitespace().collect();
        let rest = match words.split_first() {
            Some((&"the", rest)) => rest,
            _ => return Err(bad()),
        };
        if let Some(sup) = rest.first().and_then(|w| Superlative::ALL.into_iter().find(|s| s.word() == *w)) {
            let (desc, tail) = Descriptor::parse(&rest[1..]).ok_or_else(bad)?;
            return if tail.is_empty() { Ok(Query::Compare { superlative: sup, desc }) } else { Err(bad()) };
        }
        let (desc, tail) = Descriptor::parse(rest).ok_or_else(bad)?;
        if tail.is_empty() {
            return Ok(Query::Attribute { desc });
        }
        if let ["in", "the", r, c] = tail {
            let row = ROW_WORDS.iter().position(|w| w == r).ok_or_else(bad)?;
            let col = COL_WORDS.iter().position(|w| w == c).ok_or_else(bad)?;
            return Ok(Query::Absolute { desc, row, col });
        }
        for relation in Relation::ALL {
            let rw = relation.words();
            if tail.len() > rw.len() && &tail[..rw.len()] == rw && tail[rw.len()] == "the" {
                let (anchor, end) = Descriptor::parse(&tail[rw.len() + 1..]).ok_or_else(bad)?;
                if end.is_empty() {
                    return Ok(Query::Relation { desc, relation, anchor });
                }
            }
        }
        Err(bad())
    }

    /// Every object satisfying the expression under crisp semantics. A
    /// relation whose anchor is not unique resolves to nothing; tied
    /// superlatives resolve to all tied objects.
    pub fn resolve(&self, objects: &[SceneObject], width: usize, height: usize) -> Vec<usize> {
        let (w, h) = (width as f64, height as f64);
        let matching = |d: &Descriptor| -> Vec<usize> { (0..objects.len()).filter(|&i| d.matches(&objects[i])).collect() };
        match self {
            Query::Attribute { desc } => matching(desc),
            Query::Absolute { desc, row, col } => matching(desc)
                .into_iter()
                .filter(|&i| {
                    let b = &objects[i].bbox;
                    region_index(b.cx, w) == *col && region_index(b.cy, h) == *row
                })
                .collect(),
            Query::Relation { desc, relation, anchor } => {
                let anchors = matching(anchor);
                let [a] = anchors[..] else { return Vec::new() };
                matching(desc)
                    .into_iter()
                    .filter(|&i| i != a && relation.separation(&objects[i], &objects[a]) > 0.0)
                    .collect()
            }
            Query::Compare { superlative, desc } => {
                let set = matching(desc);
                let best = set.iter().map(|&i| superlative.score(&objects[i])).fold(f64::NEG_INFINITY, f64::max);
                set.into_iter().filter(|&i| superlative.score(&objects[i]) == best).collect()
            }
        }
    }

    /// True if the scene is far enough from every decision boundary of the
    /// expression that small perception errors cannot flip the answer.
    fn robust(&self, objects: &[SceneObject], width: usize, height: usize) -> bool {
        let (w, h) = (width as f64, height as f64);
        match self {
            Query::Attribute { .. } => true,
            Query::Absolute { desc, .. } => objects.iter().filter(|o| desc.matches(o)).all(|o| {
                region_boundary_distance(o.bbox.cx, w) >= REGION_MARGIN
                    && region_boundary_distance(o.bbox.cy, h) >= REGION_MARGIN
            }),
            Query::Relation { desc, relation, anchor } => {
                let Some(a) = objects.iter().find(|o| anchor.matches(o)) else { return false };
                objects
                    .iter()
                    .filter(|o| desc.matches(o) && *o != a)
                    .all(|o| relation.separation(o, a).abs() >= RELATION_MARGIN)
            }
            Query::Compare { superlative, desc } => {
                let mut scores: Vec<f64> =
                    objects.iter().filter(|o| desc.matches(o)).map(|o| superlative.score(o)).collect();
                scores.sort_by(|a, b| b.total_cmp(a));
                scores.len() >= 2 && scores[0] - scores[1] >= superlative.margin()
            }
        }
    }
}

/// An accepted expression and the object it refers to.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundedQuery {
    pub query: Query,
    pub target: usize,
}

fn accept(q: Query, target: usize, objects: &[SceneObject], w: usize, h: usize) -> Option<GroundedQuery> {
    (q.resolve(objects, w, h) == [target] && q.robust(objects, w, h)).then_some(GroundedQuery { query: q, target })
}

/// All attribute subsets, in a random preference order.
fn descriptor_choices(rng: &mut impl Rng, o: &SceneObject, allow_empty: bool) -> Vec<Descriptor> {
    let mut masks: Vec<u8> = (if allow_empty { 0 } else { 1 }..8).collect();
    masks.shuffle(rng);
    masks.into_iter().map(|m| Descriptor::of(o, m & 4 != 0, m & 2 != 0, m & 1 != 0)).collect()
}

/// Fills a template of `category` for a random target, or `None` when no
/// unambiguous, robust expression was found.
pub fn generate_query(
    objects: &[SceneObject],
    width: usize,
    height: usize,
    category: Category,
    rng: &mut impl Rng,
) -> Option<GroundedQuery> {
    if objects.is_empty() {
        return None;
    }
    let mut targets: Vec<usize> = (0..objects.len()).collect();
    targets.shuffle(rng);
    for t in targets {
        let o = &objects[t];
        let found = match category {
            Category::Attribute => {
                descriptor_choices(rng, o, false).into_iter().find_map(|desc| accept(Query::Attribute { desc }, t, objects, width, height))
            }
            Category::Absolute => {
                let (row, col) = (region_index(o.bbox.cy, height as f64), region_index(o.bbox.cx, width as f64));
                let mut descs = vec![Descriptor::default(), Descriptor::of(o, false, false, true)];
                descs.shuffle(rng);
                descs.into_iter().find_map(|desc| accept(Query::Absolute { desc, row, col }, t, objects, width, height))
            }
            Category::Relation => generate_relation(objects, t, width, height, rng),
            Category::Compare => {
                let mut sups = Superlative::ALL.to_vec();
                sups.shuffle(rng);
                let descs = descriptor_choices(rng, o, true);
                sups.into_iter().find_map(|superlative| {
                    descs.iter().find_map(|&desc| {
                        // The superlative must do work: the descriptor alone is ambiguous.
                        let shared = objects.iter().filter(|x| desc.matches(x)).count();
                        (shared >= 2 && desc.size.is_none())
                            .then(|| accept(Query::Compare { superlative, desc }, t, objects, width, height))
                            .flatten()
                    })
                })
            }
        };
        if found.is_some() {
            return found;
        }
    }
    None
}

fn generate_relation(objects: &[SceneObject], t: usize, w: usize, h: usize, rng: &mut impl Rng) -> Option<GroundedQuery> {
    let o = &objects[t];
    let mut anchors: Vec<usize> = (0..objects.len()).filter(|&a| a != t).collect();
    anchors.shuffle(rng);
    let mut relations = Relation::ALL.to_vec();
    relations.shuffle(rng);
    // Target descriptors without size so the expression stays within the token budget.
    let mut target_descs: Vec<Descriptor> = descriptor_choices(rng, o, true).into_iter().filter(|d| d.size.is_none()).collect();
    target_descs.shuffle(rng);
    for a in anchors {
        let Some(anchor) = descriptor_choices(rng, &objects[a], false)
            .into_iter()
            .find(|d| objects.iter().filter(|x| d.matches(x)).count() == 1)
        else {
            continue;
        };
        for &relation in &relations {
            for &desc in &target_descs {
                // The relation must do work: the target descriptor alone is ambiguous.
                let shared = objects.iter().enumerate().filter(|&(i, x)| i != a && desc.matches(x)).count();
                if shared < 2 {
                    continue;
                }
                if let Some(g) = accept(Query::Relation { desc, relation, anchor }, t, objects, w, h) {
                    return Some(g);
                }
            }
        }
    }
    None
}

/// Words of the grammar in vocabulary order (after the special tokens).
pub fn grammar_words() -> Vec<&'static str> {
    let mut w = vec!["the", "shape"];
    w.extend(ShapeKind::ALL.map(ShapeKind::word));
    w.extend(Color::ALL.map(Color::word));
    w.extend(SizeClass::ALL.map(SizeClass::word));
    w.extend(["in", "of", "above", "below"]);
    w.extend(ROW_WORDS);
    w.extend(COL_WORDS);
    w.extend(Superlative::ALL.map(Superlative::word));
    w
}
