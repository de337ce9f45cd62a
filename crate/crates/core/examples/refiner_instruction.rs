//! Prints the instruction the critic receives at round two, human note
//! included.

use tir::backend::MediaType;
use tir::refine::{build_refiner_instruction, Feedback, HumanFeedback, ImageRef, Prompt, RefinementRound};

fn round(index: usize, prompt: &str, feedback: Option<&str>) -> RefinementRound {
    RefinementRound {
        index,
        prompt: Prompt::new(prompt).unwrap(),
        feedback: feedback.map(|f| Feedback(f.into())),
        image: ImageRef {
            blob_id: "0".repeat(64),
            media_type: MediaType::Svg,
            seed: 0,
        },
        critic_raw: None,
        score: None,
    }
}

fn main() {
    let original = Prompt::new("A realistic photo of a scene with 2 dog").unwrap();
    let rounds = [
        round(0, original.as_str(), None),
        round(
            1,
            "A realistic photo of a scene with 2 dog. Exactly 2 dog are visible.",
            Some("Only one dog is visible."),
        ),
    ];
    let notes = [HumanFeedback {
        after_round: 1,
        author: "reviewer".into(),
        text: "keep the park background".into(),
    }];
    println!("{}", build_refiner_instruction(&original, &rounds, &notes));
}
