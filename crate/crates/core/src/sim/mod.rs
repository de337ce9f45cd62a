//! Deterministic simulated generator and critic.
//!
//! The simulated generator turns a prompt into a [`SceneGraph`] and renders
//! it as SVG. Constraints are dropped at random, less often once the prompt
//! states them explicitly. The simulated critic reads the scene back, lists
//! what it sees as wrong and appends corrective clauses to the prompt.

mod critique;
mod generate;
mod render;
mod scene;

pub use critique::{sim_critique, violations, SimError, Violation, ALIGNED_FEEDBACK, VISIBILITY_THRESHOLD};
pub use generate::{sim_generate, stream, violation_draw, ErrorModel, InvalidErrorModel};
pub use render::{render_scene, scene_from_svg};
pub use scene::{BBox, SceneGraph, SceneObject, CANVAS};

use crate::backend::{
    BackendClass, BackendDescriptor, BackendError, Critic, CritiqueRequest, GeneratedImage,
    GenerationRequest, Generator, MediaType,
};

pub struct SimGenerator {
    descriptor: BackendDescriptor,
    model: ErrorModel,
}

impl SimGenerator {
    pub fn new(id: &str, model: ErrorModel) -> Self {
        Self {
            descriptor: BackendDescriptor::new(id, BackendClass::Sim, "scene-sim"),
            model,
        }
    }

    pub fn error_model(&self) -> &ErrorModel {
        &self.model
    }
}

impl Generator for SimGenerator {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GeneratedImage, BackendError> {
        let scene = sim_generate(request.prompt.as_str(), &self.model, request.seed);
        Ok(GeneratedImage {
            bytes: render_scene(&scene),
            media_type: MediaType::Svg,
        })
    }
}

/// Critic that reads the scene embedded in a simulated image. The prose
/// instruction is ignored; the structured prompt fields are used instead.
pub struct SimCritic {
    descriptor: BackendDescriptor,
}

impl SimCritic {
    pub fn new(id: &str) -> Self {
        Self {
            descriptor: BackendDescriptor::new(id, BackendClass::Sim, "rule-critic"),
        }
    }
}

impl Critic for SimCritic {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn critique(&self, request: &CritiqueRequest, image: &[u8]) -> Result<String, BackendError> {
        let scene = scene_from_svg(image).ok_or_else(|| BackendError::Failure(SimError::NoScene.to_string()))?;
        sim_critique(&scene, request.original_prompt.as_str(), &request.prompt_history)
            .map(|r| r.raw)
            .map_err(|e| BackendError::Failure(e.to_string()))
    }
}
