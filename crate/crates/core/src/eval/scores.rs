use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub prompt_id: String,
    pub runs: usize,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub per_prompt: Vec<PromptScore>,
    /// Mean of the per-prompt means.
    pub overall_mean: f64,
    pub std_kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoresError {
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: no rows")]
    Empty { path: String },
}

#[derive(Deserialize)]
struct Row {
    prompt_id: String,
    run_index: u32,
    score: f64,
}

/// Aggregates a `prompt_id,run_index,score` CSV of externally computed
/// scores: per-prompt mean and population std, plus the overall mean.
/// Prompts with differing run counts produce a warning, not an error.
pub fn aggregate_external_scores(path: &Path) -> Result<ExternalScores, ScoresError> {
    let shown = path.display().to_string();
    let fmt = |message: String| ScoresError::Format {
        path: shown.clone(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fmt(e.to_string()))?.clone();
    for needed in ["prompt_id", "run_index", "score"] {
        if !headers.iter().any(|h| h == needed) {
            return Err(fmt(format!("missing column `{needed}`")));
        }
    }
    let mut by_prompt: BTreeMap<String, Vec<(u32, f64)>> = BTreeMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| fmt(e.to_string()))?;
        if !row.score.is_finite() {
            return Err(fmt(format!("non-finite score for `{}`", row.prompt_id)));
        }
        by_prompt.entry(row.prompt_id).or_default().push((row.run_index, row.score));
    }
    if by_prompt.is_empty() {
        return Err(ScoresError::Empty { path: shown });
    }

    let mut warnings = Vec::new();
    let per_prompt: Vec<PromptScore> = by_prompt
        .into_iter()
        .map(|(prompt_id, runs)| {
            let n = runs.len() as f64;
            let mean = runs.iter().map(|(_, s)| s).sum::<f64>() / n;
            let var = runs.iter().map(|(_, s)| (s - mean).powi(2)).sum::<f64>() / n;
            let mut idx: Vec<u32> = runs.iter().map(|(i, _)| *i).collect();
            idx.sort_unstable();
            if idx.windows(2).any(|w| w[0] == w[1]) {
                warnings.push(format!("prompt `{prompt_id}` repeats a run index"));
            }
            PromptScore {
                prompt_id,
                runs: runs.len(),
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    let counts: std::collections::BTreeSet<usize> = per_prompt.iter().map(|p| p.runs).collect();
    if counts.len() > 1 {
        warnings.push(format!("UnevenRuns: run counts per prompt differ ({counts:?})"));
    }
    let overall_mean = per_prompt.iter().map(|p| p.mean).sum::<f64>() / per_prompt.len() as f64;
    Ok(ExternalScores {
        per_prompt,
        overall_mean,
        std_kind: "population".into(),
        warnings,
    })
}
