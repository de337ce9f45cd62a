//! Seeded scene synthesis under an explicitness-sensitive error model.
//!
//! Every parsed constraint gets its own violation draw, keyed by the session
//! seed and the constraint's canonical form, so flipping one constraint's
//! outcome never moves another's. A constraint stated through its corrective
//! clause is violated with probability `p_class × explicitness_discount`;
//! otherwise with `p_class`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::{BBox, SceneGraph, SceneObject};
use crate::constraints::{
    constraint_explicit_in, parse_constraints, Category, Color, Constraint, Location,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    /// Presence dropped, or negation ignored.
    pub p_drop: f64,
    pub p_miscount: f64,
    pub p_recolor: f64,
    pub p_flip_spatial: f64,
    /// Chance of one unrelated extra object per scene.
    pub p_spurious: f64,
    pub explicitness_discount: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("error model field `{field}` = {value} is outside [0, 1]")]
pub struct InvalidErrorModel {
    pub field: &'static str,
    pub value: f64,
}

impl ErrorModel {
    pub fn zero() -> Self {
        Self::uniform(0.0, 0.0)
    }

    /// Same probability for every failure class.
    pub fn uniform(p: f64, explicitness_discount: f64) -> Self {
        Self {
            p_drop: p,
            p_miscount: p,
            p_recolor: p,
            p_flip_spatial: p,
            p_spurious: p,
            explicitness_discount,
        }
    }

    pub fn validate(&self) -> Result<(), InvalidErrorModel> {
        let fields = [
            ("p_drop", self.p_drop),
            ("p_miscount", self.p_miscount),
            ("p_recolor", self.p_recolor),
            ("p_flip_spatial", self.p_flip_spatial),
            ("p_spurious", self.p_spurious),
            ("explicitness_discount", self.explicitness_discount),
        ];
        for (field, value) in fields {
            if !(0.0..=1.0).contains(&value) {
                return Err(InvalidErrorModel { field, value });
            }
        }
        Ok(())
    }

    fn class_probability(&self, c: &Constraint) -> f64 {
        match c {
            Constraint::Presence { .. } | Constraint::Absence { .. } => self.p_drop,
            Constraint::Count { .. } => self.p_miscount,
            Constraint::AttributeBinding { .. } => self.p_recolor,
            Constraint::SpatialRelation { .. } => self.p_flip_spatial,
        }
    }

    /// Violation probability of `c` given the prompt it appears in.
    pub fn violation_probability(&self, c: &Constraint, prompt: &str) -> f64 {
        let p = self.class_probability(c);
        if constraint_explicit_in(prompt, c) {
            p * self.explicitness_discount
        } else {
            p
        }
    }
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self::uniform(0.6, 0.2)
    }
}

/// Independent random stream for `(seed, key, purpose)`.
pub fn stream(seed: u64, key: &str, purpose: &str) -> ChaCha8Rng {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(key.as_bytes())
        .chain_update([0u8])
        .chain_update(purpose.as_bytes())
        .finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Uniform draw in `[0, 1)` deciding whether `constraint` is violated.
pub fn violation_draw(seed: u64, constraint: &Constraint) -> f64 {
    stream(seed, &constraint.canonical_form(), "violate").random::<f64>()
}

#[derive(Debug, Clone)]
struct Entity {
    key: String,
    category: Category,
    intended: Option<Color>,
    recolor: Option<Color>,
    region: Option<Location>,
}

impl Entity {
    fn matches(&self, category: Category, color: Option<Color>) -> bool {
        self.category == category && (color.is_none() || self.intended == color)
    }
}

#[derive(Default)]
struct Plan {
    entities: Vec<Entity>,
    minted: Vec<(Category, usize)>,
}

impl Plan {
    fn mint(&mut self, category: Category, intended: Option<Color>) -> usize {
        let ordinal = match self.minted.iter_mut().find(|(c, _)| *c == category) {
            Some((_, n)) => {
                *n += 1;
                *n
            }
            None => {
                self.minted.push((category, 0));
                0
            }
        };
        self.entities.push(Entity {
            key: format!("{category}#{ordinal}"),
            category,
            intended,
            recolor: None,
            region: None,
        });
        self.entities.len() - 1
    }

    fn find_or_mint(&mut self, category: Category, color: Option<Color>) -> usize {
        match self.entities.iter().position(|e| e.matches(category, color)) {
            Some(i) => i,
            None => self.mint(category, color),
        }
    }

    fn count(&self, category: Category) -> usize {
        self.entities.iter().filter(|e| e.category == category).count()
    }

    /// Removes one entity of `category`, preferring ones no other constraint
    /// pinned down.
    fn remove_one(&mut self, category: Category) {
        let free = self
            .entities
            .iter()
            .rposition(|e| e.category == category && e.intended.is_none() && e.region.is_none());
        let any = self.entities.iter().rposition(|e| e.category == category);
        if let Some(i) = free.or(any) {
            self.entities.remove(i);
        }
    }
}

/// Renders `prompt` into a scene. Deterministic in `(prompt, model, seed)`.
pub fn sim_generate(prompt: &str, model: &ErrorModel, seed: u64) -> SceneGraph {
    let set = parse_constraints(prompt);
    for warning in &set.warnings {
        tracing::warn!(%warning, "sim generator ignores unparsed prompt text");
    }

    let mut plan = Plan::default();
    for c in set.iter() {
        match c {
            Constraint::Presence { category } => {
                if plan.count(*category) == 0 {
                    plan.mint(*category, None);
                }
            }
            Constraint::Absence { .. } => {}
            Constraint::Count { category, n } => {
                while plan.count(*category) < *n as usize {
                    plan.mint(*category, None);
                }
            }
            Constraint::AttributeBinding { pairs } => {
                for (color, category) in pairs {
                    plan.find_or_mint(*category, Some(*color));
                }
            }
            Constraint::SpatialRelation {
                subject,
                location,
                object,
            } => {
                let s = plan.find_or_mint(subject.category, subject.color);
                plan.entities[s].region = Some(*location);
                let o = plan.find_or_mint(object.category, object.color);
                plan.entities[o].region = Some(location.opposite());
            }
        }
    }

    for c in set.iter() {
        let p = model.violation_probability(c, prompt);
        if violation_draw(seed, c) >= p {
            continue;
        }
        let mut rng = stream(seed, &c.canonical_form(), "realize");
        match c {
            Constraint::Presence { category } => {
                plan.entities.retain(|e| e.category != *category);
            }
            Constraint::Absence { category } => {
                if plan.count(*category) == 0 {
                    plan.mint(*category, None);
                }
            }
            Constraint::Count { category, n } => {
                let wrong = if *n == 1 || rng.random_bool(0.5) { n + 1 } else { n - 1 };
                while plan.count(*category) > wrong as usize {
                    plan.remove_one(*category);
                }
                while plan.count(*category) < wrong as usize {
                    plan.mint(*category, None);
                }
            }
            Constraint::AttributeBinding { pairs } => {
                let (color, category) = pairs[rng.random_range(0..pairs.len())];
                if let Some(e) = plan
                    .entities
                    .iter_mut()
                    .find(|e| e.category == category && e.intended == Some(color))
                {
                    let others: Vec<Color> = Color::ALL.iter().copied().filter(|x| *x != color).collect();
                    e.recolor = Some(others[rng.random_range(0..others.len())]);
                }
            }
            Constraint::SpatialRelation {
                subject,
                location,
                object,
            } => {
                if let Some(e) = plan.entities.iter_mut().find(|e| e.matches(subject.category, subject.color)) {
                    e.region = Some(location.opposite());
                }
                if let Some(e) = plan.entities.iter_mut().rev().find(|e| e.matches(object.category, object.color)) {
                    e.region = Some(*location);
                }
            }
        }
    }

    let mut objects: Vec<SceneObject> = plan
        .entities
        .iter()
        .map(|e| {
            let mut rng = stream(seed, &e.key, "layout");
            let color = e
                .recolor
                .or(e.intended)
                .unwrap_or_else(|| Color::ALL[rng.random_range(0..Color::ALL.len())]);
            SceneObject {
                category: e.category,
                color,
                bbox: place(&mut rng, e.region),
                confidence: confidence(rng.random_range(0.905..0.995)),
            }
        })
        .collect();

    let mut rng = stream(seed, "scene", "spurious");
    if rng.random::<f64>() < model.p_spurious {
        let mentioned = set.mentioned_categories();
        let pool: Vec<Category> = Category::ALL
            .iter()
            .copied()
            .filter(|c| !mentioned.contains(c))
            .collect();
        if !pool.is_empty() {
            let category = pool[rng.random_range(0..pool.len())];
            let color = Color::ALL[rng.random_range(0..Color::ALL.len())];
            objects.push(SceneObject {
                category,
                color,
                bbox: place(&mut rng, None),
                confidence: confidence(rng.random_range(0.5..1.0)),
            });
        }
    }

    SceneGraph {
        objects,
        provenance_seed: seed,
    }
}

fn confidence(raw: f64) -> f64 {
    (raw * 1000.0).round() / 1000.0
}

/// Integer-aligned box whose centroid lies in the band for `region`: the
/// outer 40% strip (centroid within 100..=300 of the edge), or anywhere in
/// 100..=900 when unconstrained.
fn place(rng: &mut ChaCha8Rng, region: Option<Location>) -> BBox {
    let w = 2.0 * f64::from(rng.random_range(40u32..=80));
    let h = 2.0 * f64::from(rng.random_range(40u32..=80));
    let mut pick = |lo: u32, hi: u32| f64::from(rng.random_range(lo..=hi));
    let (cx, cy) = match region {
        Some(Location::Left) => (pick(100, 300), pick(150, 850)),
        Some(Location::Right) => (pick(700, 900), pick(150, 850)),
        Some(Location::Top) => (pick(150, 850), pick(100, 300)),
        Some(Location::Bottom) => (pick(150, 850), pick(700, 900)),
        None => (pick(100, 900), pick(100, 900)),
    };
    BBox::centered(cx, cy, w, h)
}
