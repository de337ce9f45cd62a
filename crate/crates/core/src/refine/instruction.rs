//! The refiner instruction sent to the critic each round, and the history
//! rendering embedded in it.

use super::types::{HumanFeedback, Prompt, RefinementRound};

/// Output marker the critic must place before its refined prompt.
pub const REFINED_PROMPT_MARKER: &str = "REFINED PROMPT:";

/// Stand-in for `{history_text}` before any refinement has happened.
pub const EMPTY_HISTORY: &str = "(no refinements yet)";

/// Sent as a follow-up turn when the critic's answer has no usable marker.
pub const REASK_NOTE: &str = "Respond again using exactly the REFINED PROMPT: format.";

const TEMPLATE: &str = "\
You are an Image Improvement Assistant. Your job is to help make the image more aligned with the ORIGINAL prompt.

Given Inputs:
1. Original User Prompt:
   - {original_prompt}

2. History of Prompt Refinements and Feedback:
   - {history_text}

3. Current Image Analysis:
   - Look at the image and identify what aspects DIFFER from what the ORIGINAL prompt requested.
   - Analyze what essential elements from the ORIGINAL prompt are missing or incorrectly represented.

Your Task:
1. Create a NEW PROMPT that will help generate an image that better matches the ORIGINAL prompt.
2. Focus on fixing what's missing or incorrectly represented in the current image
3. Incorporate suitable elements from prompt history into the NEW PROMPT.
4. The goal is to get progressively closer to fulfilling the ORIGINAL prompt.

Output:
Write your analysis of the current image first, then the refined prompt after the marker.
REFINED PROMPT:
\"<A detailed and enhanced version of the last prompt that improves alignment>\"
";

// Substituted text must not smuggle a second output marker into the
// instruction.
fn defuse(text: &str) -> String {
    text.replace(REFINED_PROMPT_MARKER, "REFINED PROMPT -")
}

/// Renders the prompt/feedback history, one block per round:
///
/// ```text
/// [0] ORIGINAL PROMPT: <c_0>
///
/// [1] PROMPT: <c_1>
///     FEEDBACK: <f_1>
/// ```
///
/// Human notes are listed under the round they follow.
pub fn format_history(rounds: &[RefinementRound], human: &[HumanFeedback]) -> String {
    let mut blocks = Vec::with_capacity(rounds.len());
    for round in rounds {
        let mut block = if round.index == 0 {
            format!("[0] ORIGINAL PROMPT: {}", round.prompt)
        } else {
            format!(
                "[{}] PROMPT: {}\n    FEEDBACK: {}",
                round.index,
                round.prompt,
                round.feedback.as_ref().map(|f| f.as_str()).unwrap_or("")
            )
        };
        for note in human.iter().filter(|n| n.after_round == round.index) {
            block.push_str(&format!("\n    HUMAN FEEDBACK ({}): {}", note.author, note.text));
        }
        blocks.push(block);
    }
    blocks.join("\n\n")
}

pub fn build_refiner_instruction(
    original_prompt: &Prompt,
    rounds: &[RefinementRound],
    human: &[HumanFeedback],
) -> String {
    let history = if rounds.len() <= 1 && human.is_empty() {
        EMPTY_HISTORY.to_string()
    } else {
        format_history(rounds, human)
    };
    // single pass, so placeholder-like text inside the values stays literal
    let (head, rest) = TEMPLATE.split_once("{original_prompt}").expect("template slot");
    let (mid, tail) = rest.split_once("{history_text}").expect("template slot");
    format!(
        "{head}{}{mid}{}{tail}",
        defuse(original_prompt.as_str()),
        defuse(&history)
    )
}
