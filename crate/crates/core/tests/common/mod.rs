#![allow(dead_code)]

use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tir::backend::{BackendDescriptor, BackendError, Critic, CritiqueRequest, RetryPolicy};
use tir::constraints::{Category, Color, ConstraintSet};
use tir::sim::{BBox, SceneGraph, SceneObject, SimCritic};

pub fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        base_delay_ms: 1,
        backoff_factor: 1.0,
        timeout_ms: 5_000,
    }
}

/// Sim critic that keeps a copy of every instruction it was sent.
pub struct RecordingCritic {
    inner: SimCritic,
    pub instructions: Mutex<Vec<String>>,
}

impl RecordingCritic {
    pub fn new() -> Self {
        Self {
            inner: SimCritic::new("sim"),
            instructions: Mutex::new(Vec::new()),
        }
    }

    pub fn taken(&self) -> Vec<String> {
        std::mem::take(&mut *self.instructions.lock().unwrap())
    }
}

impl Critic for RecordingCritic {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn critique(&self, request: &CritiqueRequest, image: &[u8]) -> Result<String, BackendError> {
        self.instructions.lock().unwrap().push(request.instruction.clone());
        self.inner.critique(request, image)
    }
}

/// A scene built to stress the scoring rules: objects drawn mostly from the
/// constraint set's vocabulary, boxes snapped to a few centers so ties and
/// exact half-canvas centroids are common, and confidences near 0.9.
pub fn adversarial_scene(rng: &mut ChaCha8Rng, set: &ConstraintSet) -> SceneGraph {
    let mentioned = set.mentioned_categories();
    let mut colors: Vec<Color> = Vec::new();
    for c in set.iter() {
        if let tir::constraints::Constraint::AttributeBinding { pairs } = c {
            colors.extend(pairs.iter().map(|(col, _)| *col));
        }
        if let tir::constraints::Constraint::SpatialRelation { subject, object, .. } = c {
            colors.extend(subject.color.iter().chain(object.color.iter()).copied());
        }
    }
    let centers = [150.0, 200.0, 250.0, 500.0, 750.0, 800.0, 850.0];
    let sizes = [80.0, 100.0, 120.0, 160.0];
    let confidences = [0.9, 0.8999, 0.95, 0.95, 0.905, 0.5];
    let n = rng.random_range(0..=7);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for _ in 0..n {
        let category = if !mentioned.is_empty() && rng.random_bool(0.75) {
            *mentioned.choose(rng).unwrap()
        } else {
            *Category::ALL.choose(rng).unwrap()
        };
        let color = if !colors.is_empty() && rng.random_bool(0.6) {
            *colors.choose(rng).unwrap()
        } else {
            *Color::ALL.choose(rng).unwrap()
        };
        let bbox = match objects.last() {
            Some(prev) if rng.random_bool(0.2) => prev.bbox,
            _ => {
                let cx = *centers.choose(rng).unwrap();
                let cy = *centers.choose(rng).unwrap();
                BBox::centered(cx, cy, *sizes.choose(rng).unwrap(), *sizes.choose(rng).unwrap())
            }
        };
        let confidence = if rng.random_bool(0.8) {
            *confidences.choose(rng).unwrap()
        } else {
            rng.random_range(0.5..1.0)
        };
        objects.push(SceneObject {
            category,
            color,
            bbox,
            confidence,
        });
    }
    SceneGraph {
        objects,
        provenance_seed: rng.random(),
    }
}
