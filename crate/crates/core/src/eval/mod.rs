//! Scoring: detections against constraints, per-task aggregation, report
//! emission, inter-annotator agreement and external score files.
//!
//! These rules are the reference the simulated critic is checked against.

mod kappa;
mod report;
mod scores;

pub use kappa::{cohens_kappa, load_annotation_csv, AnnotationSet, KappaError};
pub use report::{
    aggregate, emit_report, overall_score, AggregateError, EvalReport, Percent, ReportFormat, TaskScore,
};
pub use scores::{aggregate_external_scores, ExternalScores, PromptScore, ScoresError};

use serde::{Deserialize, Serialize};

use crate::constraints::{Constraint, ConstraintSet, Location, ObjectRef};
use crate::sim::{BBox, SceneGraph, CANVAS};

pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub items: Vec<Detection>,
    pub canvas_width: f64,
    pub canvas_height: f64,
}

/// Keeps objects whose confidence is at least `threshold`.
pub fn detect_from_scene(scene: &SceneGraph, threshold: f64) -> Detections {
    Detections {
        items: scene
            .objects
            .iter()
            .filter(|o| o.confidence >= threshold)
            .map(|o| Detection {
                category: o.category.name().to_string(),
                color: Some(o.color.name().to_string()),
                bbox: o.bbox,
                confidence: o.confidence,
            })
            .collect(),
        canvas_width: CANVAS,
        canvas_height: CANVAS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

/// Centroid relations of `a` with respect to `b`. Differences of at most
/// `margin` give no relation on that axis; `y` grows downward.
pub fn relation_of(a: &BBox, b: &BBox, margin: f64) -> Vec<Relation> {
    let (ax, ay) = a.centroid();
    let (bx, by) = b.centroid();
    let mut out = Vec::new();
    if ax < bx - margin {
        out.push(Relation::LeftOf);
    }
    if ax > bx + margin {
        out.push(Relation::RightOf);
    }
    if ay < by - margin {
        out.push(Relation::Above);
    }
    if ay > by + margin {
        out.push(Relation::Below);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub satisfied: bool,
    /// A spatial side had several equally confident candidates and the
    /// tie-break decided.
    pub ambiguous: bool,
}

fn matches(d: &Detection, category: &str, color: Option<&str>) -> bool {
    d.category == category && color.is_none_or(|c| d.color.as_deref() == Some(c))
}

fn count(dets: &Detections, category: &str) -> usize {
    dets.items.iter().filter(|d| d.category == category).count()
}

/// Highest-confidence candidate for one side of a spatial relation. Ties go
/// to the smaller box, then to the lexicographically smaller
/// `(x, y, w, h, color)`.
fn pick<'a>(dets: &'a Detections, side: &ObjectRef) -> (Option<&'a Detection>, bool) {
    let category = side.category.name();
    let color = side.color.map(|c| c.name());
    let candidates: Vec<&Detection> = dets.items.iter().filter(|d| matches(d, category, color)).collect();
    let best = candidates.iter().copied().max_by(|a, b| a.confidence.total_cmp(&b.confidence));
    let Some(top) = best.map(|d| d.confidence) else {
        return (None, false);
    };
    let mut tied: Vec<&Detection> = candidates.into_iter().filter(|d| d.confidence == top).collect();
    let ambiguous = tied.len() > 1;
    tied.sort_by(|a, b| {
        let key = |d: &Detection| (d.bbox.area(), d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h);
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(ka.3.total_cmp(&kb.3))
            .then(ka.4.total_cmp(&kb.4))
            .then(a.color.cmp(&b.color))
    });
    (tied.first().copied(), ambiguous)
}

pub fn check_constraint(dets: &Detections, constraint: &Constraint) -> Verdict {
    let plain = |satisfied| Verdict {
        satisfied,
        ambiguous: false,
    };
    match constraint {
        Constraint::Presence { category } => plain(count(dets, category.name()) >= 1),
        Constraint::Absence { category } => plain(count(dets, category.name()) == 0),
        Constraint::Count { category, n } => plain(count(dets, category.name()) == *n as usize),
        Constraint::AttributeBinding { pairs } => {
            let mut used = vec![false; dets.items.len()];
            let all = pairs.iter().all(|(color, category)| {
                let slot = dets
                    .items
                    .iter()
                    .enumerate()
                    .position(|(i, d)| !used[i] && matches(d, category.name(), Some(color.name())));
                match slot {
                    Some(i) => {
                        used[i] = true;
                        true
                    }
                    None => false,
                }
            });
            plain(all)
        }
        Constraint::SpatialRelation {
            subject,
            location,
            object,
        } => {
            let (s, s_tie) = pick(dets, subject);
            let (o, o_tie) = pick(dets, object);
            let ambiguous = s_tie || o_tie;
            let (Some(s), Some(o)) = (s, o) else {
                return Verdict {
                    satisfied: false,
                    ambiguous,
                };
            };
            let center = BBox::new(dets.canvas_width / 2.0, dets.canvas_height / 2.0, 0.0, 0.0);
            let wanted = |loc: Location| match loc {
                Location::Left => Relation::LeftOf,
                Location::Right => Relation::RightOf,
                Location::Top => Relation::Above,
                Location::Bottom => Relation::Below,
            };
            let satisfied = relation_of(&s.bbox, &center, 0.0).contains(&wanted(*location))
                && relation_of(&o.bbox, &center, 0.0).contains(&wanted(location.opposite()));
            Verdict { satisfied, ambiguous }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub per_constraint: Vec<(String, bool)>,
    pub case_pass: bool,
}

impl CaseResult {
    pub fn new(case_id: impl Into<String>, per_constraint: Vec<(String, bool)>) -> Self {
        let case_pass = per_constraint.iter().all(|(_, ok)| *ok);
        Self {
            case_id: case_id.into(),
            per_constraint,
            case_pass,
        }
    }
}

/// Checks every constraint of `set` against `dets`.
pub fn check_case(case_id: &str, dets: &Detections, set: &ConstraintSet) -> CaseResult {
    CaseResult::new(
        case_id,
        set.iter()
            .map(|c| (c.canonical_form(), check_constraint(dets, c).satisfied))
            .collect(),
    )
}

/// Scores a simulated scene at the default threshold.
pub fn check_scene(case_id: &str, scene: &SceneGraph, set: &ConstraintSet) -> CaseResult {
    check_case(case_id, &detect_from_scene(scene, DEFAULT_THRESHOLD), set)
}
