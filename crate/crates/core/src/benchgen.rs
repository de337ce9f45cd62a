//! Benchmark suites: the seeded 320-prompt compositional suite, and loaders
//! for externally supplied prompt files.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{article, Category, Color, Constraint, ConstraintSet, Location, ObjectRef};
use crate::refine::Prompt;
use crate::sim::stream;

pub const SUITE_VERSION: u32 = 1;
pub const CASES_PER_TASK: usize = 80;
pub const PROMPT_PREFIX: &str = "A realistic photo of a scene";

/// Numbers used by numeracy prompts. One would be plain presence.
pub const NUMERACY_RANGE: std::ops::RangeInclusive<u32> = 2..=5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Negation,
    Numeracy,
    Attribute,
    Spatial,
    GenevalPosition,
    GenevalCounting,
    GenevalSingle,
    GenevalTwo,
    GenevalColorAttr,
    GenevalColors,
    OpenEnded,
}

impl Task {
    pub const LLM_GROUNDED: [Task; 4] = [Task::Negation, Task::Numeracy, Task::Attribute, Task::Spatial];

    /// In the column order of the published GENEVAL table.
    pub const GENEVAL: [Task; 6] = [
        Task::GenevalPosition,
        Task::GenevalCounting,
        Task::GenevalSingle,
        Task::GenevalTwo,
        Task::GenevalColorAttr,
        Task::GenevalColors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Negation => "negation",
            Task::Numeracy => "numeracy",
            Task::Attribute => "attribute",
            Task::Spatial => "spatial",
            Task::GenevalPosition => "geneval_position",
            Task::GenevalCounting => "geneval_counting",
            Task::GenevalSingle => "geneval_single",
            Task::GenevalTwo => "geneval_two",
            Task::GenevalColorAttr => "geneval_color_attr",
            Task::GenevalColors => "geneval_colors",
            Task::OpenEnded => "open_ended",
        }
    }

    /// Column header used in markdown tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Task::Negation => "Negation",
            Task::Numeracy => "Numeracy",
            Task::Attribute => "Attribute",
            Task::Spatial => "Spatial",
            Task::GenevalPosition => "Position",
            Task::GenevalCounting => "Counting",
            Task::GenevalSingle => "Single Obj.",
            Task::GenevalTwo => "Two Object",
            Task::GenevalColorAttr => "Color Attr",
            Task::GenevalColors => "Colors",
            Task::OpenEnded => "Open-ended",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCase {
    pub id: String,
    pub task: Task,
    pub prompt: Prompt,
    pub ground_truth: ConstraintSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suite {
    pub suite_version: u32,
    pub name: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_seed: Option<u64>,
    pub cases: Vec<PromptCase>,
}

impl Suite {
    pub fn case(&self, id: &str) -> Option<&PromptCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn tasks(&self) -> Vec<Task> {
        let mut tasks: Vec<Task> = self.cases.iter().map(|c| c.task).collect();
        tasks.sort();
        tasks.dedup();
        tasks
    }

    /// Pretty JSON with a trailing newline; identical suites give identical
    /// bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suites serialize") + "\n"
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

/// Draws without replacement, reshuffling once the pool is used up.
struct Cycler<T> {
    pool: Vec<T>,
    order: Vec<T>,
}

impl<T: Copy + PartialEq> Cycler<T> {
    fn new(pool: &[T]) -> Self {
        Self {
            pool: pool.to_vec(),
            order: Vec::new(),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> T {
        if self.order.is_empty() {
            self.order = self.pool.clone();
            self.order.shuffle(rng);
        }
        self.order.pop().expect("pool is non-empty")
    }

    /// Next draw different from `other`. A clash can only happen right at a
    /// reshuffle; the clashing item is put back for the following draw.
    fn next_except(&mut self, rng: &mut ChaCha8Rng, other: T) -> T {
        let first = self.next(rng);
        if first != other {
            return first;
        }
        let second = self.next(rng);
        self.order.push(first);
        second
    }
}

fn with_article(word: &str) -> String {
    format!("{} {word}", article(word))
}

fn case(task: Task, i: usize, prompt: String, truth: Vec<Constraint>) -> PromptCase {
    let mut ground_truth = ConstraintSet::new(prompt.clone());
    for c in truth {
        ground_truth.insert(c);
    }
    PromptCase {
        id: format!("{}-{i:03}", task.name()),
        task,
        prompt: Prompt::new(prompt).expect("template prompts are valid"),
        ground_truth,
    }
}

/// The four-task compositional suite: 80 negation, numeracy, attribute and
/// spatial prompts over the 20 COCO categories. Identical seeds give
/// identical suites.
pub fn generate_llm_grounded_suite(seed: u64) -> Suite {
    let mut cases = Vec::with_capacity(CASES_PER_TASK * 4);
    let numbers: Vec<u32> = NUMERACY_RANGE.collect();
    for task in Task::LLM_GROUNDED {
        let mut rng = stream(seed, task.name(), "suite");
        let mut objects = Cycler::new(Category::ALL);
        let mut colors = Cycler::new(Color::ALL);
        let mut counts = Cycler::new(&numbers);
        let mut locations = Cycler::new(&Location::ALL);
        for i in 0..CASES_PER_TASK {
            let c = match task {
                Task::Negation => {
                    let o = objects.next(&mut rng);
                    case(task, i, format!("{PROMPT_PREFIX} without {o}"), vec![Constraint::Absence { category: o }])
                }
                Task::Numeracy => {
                    let o = objects.next(&mut rng);
                    let n = counts.next(&mut rng);
                    case(
                        task,
                        i,
                        format!("{PROMPT_PREFIX} with {n} {}", o.noun(n)),
                        vec![Constraint::Count { category: o, n }],
                    )
                }
                Task::Attribute => {
                    let o1 = objects.next(&mut rng);
                    let o2 = objects.next_except(&mut rng, o1);
                    let c1 = colors.next(&mut rng);
                    let c2 = colors.next_except(&mut rng, c1);
                    case(
                        task,
                        i,
                        format!(
                            "{PROMPT_PREFIX} with {} {o1} and {} {o2}",
                            with_article(c1.name()),
                            with_article(c2.name())
                        ),
                        vec![Constraint::AttributeBinding {
                            pairs: vec![(c1, o1), (c2, o2)],
                        }],
                    )
                }
                Task::Spatial => {
                    let o1 = objects.next(&mut rng);
                    let o2 = objects.next_except(&mut rng, o1);
                    let c1 = colors.next(&mut rng);
                    let c2 = colors.next_except(&mut rng, c1);
                    let loc = locations.next(&mut rng);
                    case(
                        task,
                        i,
                        format!(
                            "{PROMPT_PREFIX} with {} {o1} on the {loc} and {} {o2} on the {}",
                            with_article(c1.name()),
                            with_article(c2.name()),
                            loc.opposite()
                        ),
                        vec![
                            Constraint::spatial(ObjectRef::new(Some(c1), o1), loc, ObjectRef::new(Some(c2), o2)),
                            Constraint::AttributeBinding {
                                pairs: vec![(c1, o1), (c2, o2)],
                            },
                        ],
                    )
                }
                _ => unreachable!("not a generated task"),
            };
            cases.push(c);
        }
    }
    Suite {
        suite_version: SUITE_VERSION,
        name: "llm-grounded".into(),
        version: "1".into(),
        generation_seed: Some(seed),
        cases,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteFormat {
    NativeJson,
    PromptLines,
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Format {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
}

/// Loads a suite. `prompt_lines` files hold one prompt per line; blank
/// lines and lines starting with `#` are skipped. Each prompt becomes an
/// `open_ended` case with empty ground truth.
pub fn load_suite(path: &Path, format: SuiteFormat) -> Result<Suite, SuiteError> {
    let shown = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| SuiteError::Io {
        path: shown.clone(),
        source,
    })?;
    let format_err = |line: usize, column: usize, message: String| SuiteError::Format {
        path: shown.clone(),
        line,
        column,
        message,
    };
    match format {
        SuiteFormat::NativeJson => {
            let suite: Suite =
                serde_json::from_slice(&bytes).map_err(|e| format_err(e.line(), e.column(), e.to_string()))?;
            if suite.suite_version != SUITE_VERSION {
                return Err(format_err(1, 1, format!("unsupported suite_version {}", suite.suite_version)));
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = suite.cases.iter().find(|c| !seen.insert(c.id.as_str())) {
                return Err(format_err(1, 1, format!("duplicate case id `{}`", dup.id)));
            }
            Ok(suite)
        }
        SuiteFormat::PromptLines => {
            let mut cases = Vec::new();
            for (n, raw) in bytes.split(|b| *b == b'\n').enumerate() {
                let line = std::str::from_utf8(raw)
                    .map_err(|e| format_err(n + 1, e.valid_up_to() + 1, "invalid UTF-8".into()))?;
                let text = line.trim();
                if text.is_empty() || text.starts_with('#') {
                    continue;
                }
                let prompt = Prompt::new(text).map_err(|e| format_err(n + 1, 1, e.to_string()))?;
                cases.push(PromptCase {
                    id: format!("prompt-{:03}", cases.len()),
                    task: Task::OpenEnded,
                    ground_truth: ConstraintSet::new(text),
                    prompt,
                });
            }
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("prompts")
                .to_string();
            Ok(Suite {
                suite_version: SUITE_VERSION,
                name,
                version: "1".into(),
                generation_seed: None,
                cases,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::parse_constraints;

    #[test]
    fn sizes_and_determinism() {
        let a = generate_llm_grounded_suite(7);
        assert_eq!(a.cases.len(), 320);
        for task in Task::LLM_GROUNDED {
            assert_eq!(a.cases.iter().filter(|c| c.task == task).count(), 80);
        }
        assert_eq!(a.to_json(), generate_llm_grounded_suite(7).to_json());
        assert_ne!(a.to_json(), generate_llm_grounded_suite(8).to_json());
    }

    #[test]
    fn ground_truth_matches_parser() {
        for seed in [0, 7, 99] {
            for c in generate_llm_grounded_suite(seed).cases {
                assert_eq!(parse_constraints(c.prompt.as_str()), c.ground_truth, "{}", c.prompt);
            }
        }
    }

    #[test]
    fn every_object_appears_in_every_task() {
        let suite = generate_llm_grounded_suite(3);
        for task in Task::LLM_GROUNDED {
            for cat in Category::ALL {
                assert!(suite
                    .cases
                    .iter()
                    .any(|c| c.task == task && c.ground_truth.mentioned_categories().contains(cat)));
            }
        }
    }

    #[test]
    fn sample_prompts() {
        let suite = generate_llm_grounded_suite(1);
        let spatial = suite.cases.iter().find(|c| c.task == Task::Spatial).unwrap();
        let text = spatial.prompt.as_str();
        assert!(text.starts_with("A realistic photo of a scene with a"), "{text}");
        for c in suite.cases.iter().filter(|c| c.task == Task::Numeracy) {
            match &c.ground_truth.constraints[..] {
                [Constraint::Count { category, n }] => {
                    assert!(NUMERACY_RANGE.contains(n));
                    assert!(c.prompt.as_str().ends_with(category.plural()));
                }
                other => panic!("unexpected ground truth {other:?}"),
            }
        }
    }

    #[test]
    fn loads_prompt_lines_and_reports_positions() {
        let dir = tempfile::tempdir().unwrap();
        let lines = dir.path().join("draw.txt");
        let mut text = String::from("# header\n\n");
        for i in 0..200 {
            text.push_str(&format!("prompt number {i}\n"));
        }
        std::fs::write(&lines, text).unwrap();
        let suite = load_suite(&lines, SuiteFormat::PromptLines).unwrap();
        assert_eq!(suite.cases.len(), 200);
        assert!(suite.cases.iter().all(|c| c.task == Task::OpenEnded && c.ground_truth.is_empty()));

        let json = dir.path().join("s.json");
        let generated = generate_llm_grounded_suite(7);
        generated.write(&json).unwrap();
        assert_eq!(load_suite(&json, SuiteFormat::NativeJson).unwrap(), generated);

        std::fs::write(&json, "{\n  \"suite_version\": 1,\n  \"name\": oops\n}").unwrap();
        match load_suite(&json, SuiteFormat::NativeJson) {
            Err(SuiteError::Format { line, column, .. }) => assert_eq!((line, column), (3, 11)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
