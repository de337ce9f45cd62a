//! Rule-based critic for simulated scenes.
//!
//! This checker is deliberately separate from `eval`: the evaluation rules
//! are the ground truth, this is what the simulated MLLM believes. The two
//! are compared by an oracle test.

use super::scene::{SceneGraph, SceneObject, CANVAS};
use crate::backend::{render_critique_response, CritiqueResult, MalformedCritique};
use crate::constraints::{
    constraint_explicit_in, parse_constraints, Category, Color, Constraint, ConstraintSet,
    Location, ObjectRef, CLAUSE_SEPARATOR,
};
use crate::refine::Prompt;

/// Objects below this confidence are invisible to the critic.
pub const VISIBILITY_THRESHOLD: f64 = 0.9;

pub const ALIGNED_FEEDBACK: &str = "ALIGNED: all constraints satisfied";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("no constraint could be parsed from the original prompt; the sim world understands templated prompts such as \"A realistic photo of a scene with 3 apple\"")]
    UnparseablePrompt,
    #[error("image carries no scene metadata")]
    NoScene,
    #[error(transparent)]
    Malformed(#[from] MalformedCritique),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: Constraint,
    pub detail: String,
}

fn visible(scene: &SceneGraph) -> impl Iterator<Item = &SceneObject> {
    scene
        .objects
        .iter()
        .filter(|o| o.confidence >= VISIBILITY_THRESHOLD)
}

fn tally(scene: &SceneGraph, category: Category, color: Option<Color>) -> usize {
    visible(scene)
        .filter(|o| o.category == category && color.is_none_or(|c| o.color == c))
        .count()
}

/// Most salient visible object matching `r`: highest confidence, then the
/// smaller box, then the lexicographically smallest geometry and color.
fn salient<'a>(scene: &'a SceneGraph, r: &ObjectRef) -> Option<&'a SceneObject> {
    visible(scene)
        .filter(|o| o.category == r.category && r.color.is_none_or(|c| o.color == c))
        .min_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.bbox.area().total_cmp(&b.bbox.area()))
                .then(a.bbox.x.total_cmp(&b.bbox.x))
                .then(a.bbox.y.total_cmp(&b.bbox.y))
                .then(a.bbox.w.total_cmp(&b.bbox.w))
                .then(a.bbox.h.total_cmp(&b.bbox.h))
                .then(a.color.name().cmp(b.color.name()))
        })
}

fn in_half(o: &SceneObject, location: Location) -> bool {
    let (cx, cy) = o.bbox.centroid();
    let mid = CANVAS / 2.0;
    match location {
        Location::Left => cx < mid,
        Location::Right => cx > mid,
        Location::Top => cy < mid,
        Location::Bottom => cy > mid,
    }
}

fn check(scene: &SceneGraph, c: &Constraint) -> Option<String> {
    match c {
        Constraint::Presence { category } => (tally(scene, *category, None) == 0)
            .then(|| format!("no {category} is visible")),
        Constraint::Absence { category } => {
            let n = tally(scene, *category, None);
            (n > 0).then(|| format!("{n} {} visible although none were requested", category.noun(n as u32)))
        }
        Constraint::Count { category, n } => {
            let seen = tally(scene, *category, None);
            (seen != *n as usize).then(|| {
                format!("{seen} {} visible, expected {n}", category.noun(seen as u32))
            })
        }
        Constraint::AttributeBinding { pairs } => {
            let mut missing = Vec::new();
            for (i, (color, category)) in pairs.iter().enumerate() {
                let needed = pairs[..=i].iter().filter(|p| *p == &(*color, *category)).count();
                if tally(scene, *category, Some(*color)) < needed {
                    missing.push(format!("{color} {category}"));
                }
            }
            (!missing.is_empty()).then(|| format!("missing {}", missing.join(" and ")))
        }
        Constraint::SpatialRelation {
            subject,
            location,
            object,
        } => {
            let s = salient(scene, subject);
            let o = salient(scene, object);
            match (s, o) {
                (None, _) => Some(format!("{} not found", subject.phrase())),
                (_, None) => Some(format!("{} not found", object.phrase())),
                (Some(s), Some(o)) => {
                    let ok = in_half(s, *location) && in_half(o, location.opposite());
                    (!ok).then(|| {
                        format!(
                            "{} should be on the {location} and {} on the {}",
                            subject.phrase(),
                            object.phrase(),
                            location.opposite()
                        )
                    })
                }
            }
        }
    }
}

/// Constraints of `set` the critic sees as unmet in `scene`.
pub fn violations(scene: &SceneGraph, set: &ConstraintSet) -> Vec<Violation> {
    set.iter()
        .filter_map(|c| {
            check(scene, c).map(|detail| Violation {
                constraint: c.clone(),
                detail,
            })
        })
        .collect()
}

/// Critiques `scene` against the constraints of `original_prompt`.
///
/// The refined prompt is the latest prompt with the corrective clause of every
/// violated constraint appended, unless that clause is already present.
/// Clauses are never removed.
pub fn sim_critique(
    scene: &SceneGraph,
    original_prompt: &str,
    history: &[Prompt],
) -> Result<CritiqueResult, SimError> {
    let set = parse_constraints(original_prompt);
    if set.is_empty() {
        return Err(SimError::UnparseablePrompt);
    }
    let latest = history.last().map_or(original_prompt, Prompt::as_str);
    let found = violations(scene, &set);
    if found.is_empty() {
        let raw = render_critique_response(ALIGNED_FEEDBACK, latest);
        return Ok(CritiqueResult::from_raw(raw)?);
    }

    let feedback: Vec<String> = found
        .iter()
        .map(|v| format!("VIOLATION({}): {}", v.constraint.kind().name(), v.detail))
        .collect();
    let mut refined = latest.to_string();
    for v in &found {
        if !constraint_explicit_in(&refined, &v.constraint) {
            refined.push_str(CLAUSE_SEPARATOR);
            refined.push_str(&v.constraint.corrective_clause());
        }
    }
    let raw = render_critique_response(&feedback.join("\n"), &refined);
    Ok(CritiqueResult::from_raw(raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::BBox;

    fn obj(category: Category, color: Color, cx: f64, cy: f64, confidence: f64) -> SceneObject {
        SceneObject {
            category,
            color,
            bbox: BBox::centered(cx, cy, 100.0, 100.0),
            confidence,
        }
    }

    fn scene(objects: Vec<SceneObject>) -> SceneGraph {
        SceneGraph {
            objects,
            provenance_seed: 0,
        }
    }

    const NEG: &str = "A realistic photo of a scene without dog";

    #[test]
    fn aligned_keeps_latest_prompt() {
        let history = [Prompt::new(NEG).unwrap(), Prompt::new(format!("{NEG}; strictly no dog anywhere")).unwrap()];
        let r = sim_critique(&scene(vec![]), NEG, &history).unwrap();
        assert!(r.reports_aligned());
        assert_eq!(r.refined_prompt, history[1]);
    }

    #[test]
    fn violation_appends_clause_once() {
        let s = scene(vec![obj(Category::Dog, Color::Black, 500.0, 500.0, 0.95)]);
        let first = sim_critique(&s, NEG, &[Prompt::new(NEG).unwrap()]).unwrap();
        assert_eq!(first.refined_prompt.as_str(), format!("{NEG}; strictly no dog anywhere"));
        assert!(first.feedback.as_str().contains("VIOLATION(absence)"));
        assert!(first.feedback.as_str().contains("dog"));
        let second = sim_critique(&s, NEG, std::slice::from_ref(&first.refined_prompt)).unwrap();
        assert_eq!(second.refined_prompt, first.refined_prompt);
    }

    #[test]
    fn low_confidence_objects_are_invisible() {
        let s = scene(vec![obj(Category::Dog, Color::Black, 500.0, 500.0, 0.899)]);
        assert!(sim_critique(&s, NEG, &[]).unwrap().reports_aligned());
        let s = scene(vec![obj(Category::Dog, Color::Black, 500.0, 500.0, 0.9)]);
        assert!(!sim_critique(&s, NEG, &[]).unwrap().reports_aligned());
    }

    #[test]
    fn spatial_uses_salient_candidate() {
        let p = "A realistic photo of a scene with a red car on the left and a blue bench on the right";
        let good = scene(vec![
            obj(Category::Car, Color::Red, 200.0, 500.0, 0.95),
            obj(Category::Bench, Color::Blue, 800.0, 500.0, 0.95),
        ]);
        assert!(sim_critique(&good, p, &[]).unwrap().reports_aligned());
        let mut bad = good.clone();
        // a more confident red car on the wrong side wins
        bad.objects.push(obj(Category::Car, Color::Red, 800.0, 200.0, 0.97));
        let r = sim_critique(&bad, p, &[]).unwrap();
        assert!(r.feedback.as_str().contains("VIOLATION(spatial)"));
        assert!(r.refined_prompt.as_str().ends_with(
            "the red car entirely on the left, the blue bench entirely on the right"
        ));
    }

    #[test]
    fn unparseable_prompt() {
        assert_eq!(
            sim_critique(&scene(vec![]), "a cozy cabin at dusk", &[]).unwrap_err(),
            SimError::UnparseablePrompt
        );
    }
}
