use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Binary judgments by one annotator, keyed by case id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub annotator_id: String,
    pub scores: BTreeMap<String, u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum KappaError {
    #[error("annotation sets share no case")]
    DisjointCases,
    #[error("score {score} for case `{case_id}` is not 0 or 1")]
    NonBinary { case_id: String, score: u8 },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// Cohen's kappa for two binary annotators over the cases both scored.
///
/// When chance agreement is certain (both annotators constant) the ratio is
/// undefined; identical annotations then count as perfect agreement, any
/// other pattern as none.
pub fn cohens_kappa(a: &AnnotationSet, b: &AnnotationSet) -> Result<f64, KappaError> {
    let mut n = 0u64;
    let mut agree = 0u64;
    let (mut a1, mut b1) = (0u64, 0u64);
    for (case_id, &sa) in &a.scores {
        let Some(&sb) = b.scores.get(case_id) else { continue };
        for s in [sa, sb] {
            if s > 1 {
                return Err(KappaError::NonBinary {
                    case_id: case_id.clone(),
                    score: s,
                });
            }
        }
        n += 1;
        agree += u64::from(sa == sb);
        a1 += u64::from(sa);
        b1 += u64::from(sb);
    }
    if n == 0 {
        return Err(KappaError::DisjointCases);
    }
    let n = n as f64;
    let p_o = agree as f64 / n;
    let (pa, pb) = (a1 as f64 / n, b1 as f64 / n);
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Deserialize)]
struct Row {
    annotator_id: String,
    case_id: String,
    score: u8,
}

/// Reads `annotator_id,case_id,score` rows, one set per annotator in file
/// order. A repeated (annotator, case) keeps the last score.
pub fn load_annotation_csv(path: &Path) -> Result<Vec<AnnotationSet>, KappaError> {
    let shown = path.display().to_string();
    let fmt = |message: String| KappaError::Format {
        path: shown.clone(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let mut sets: Vec<AnnotationSet> = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| fmt(e.to_string()))?;
        if row.score > 1 {
            return Err(KappaError::NonBinary {
                case_id: row.case_id,
                score: row.score,
            });
        }
        let set = match sets.iter_mut().position(|s| s.annotator_id == row.annotator_id) {
            Some(i) => &mut sets[i],
            None => {
                sets.push(AnnotationSet {
                    annotator_id: row.annotator_id.clone(),
                    ..AnnotationSet::default()
                });
                sets.last_mut().expect("just pushed")
            }
        };
        set.scores.insert(row.case_id, row.score);
    }
    Ok(sets)
}
