use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CaseResult;
use crate::benchgen::{Suite, Task};

/// An exact percentage. Arithmetic stays rational; rounding half-up to two
/// decimals happens only when displayed or serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(pub Ratio<i64>);

impl Percent {
    /// `100 × passes / cases`.
    pub fn of(passes: usize, cases: usize) -> Self {
        Percent(Ratio::new(100 * passes as i64, cases as i64))
    }

    /// Value in hundredths, rounded half-up.
    pub fn hundredths(self) -> i64 {
        let scaled = self.0 * Ratio::from_integer(100);
        let half = Ratio::new(1, 2);
        if scaled >= Ratio::from_integer(0) {
            (scaled + half).floor().to_integer()
        } else {
            -((-scaled + half).floor().to_integer())
        }
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn rounded(self) -> f64 {
        self.hundredths() as f64 / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.hundredths();
        let sign = if h < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{:02}", h.abs() / 100, h.abs() % 100)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a decimal percentage: `{0}`")]
pub struct BadPercent(String);

/// Parses decimal text such as `75.76` exactly.
impl FromStr for Percent {
    type Err = BadPercent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadPercent(s.to_string());
        let t = s.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 9 {
            return Err(bad());
        }
        let scale = 10i64.pow(frac.len() as u32);
        let whole: i64 = int.parse().map_err(|_| bad())?;
        let part: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let value = Ratio::new(whole * scale + part, scale);
        Ok(Percent(if neg { -value } else { value }))
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.rounded())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() {
            return Err(serde::de::Error::custom("percentage must be finite"));
        }
        Ok(Percent(Ratio::new((v * 100.0).round() as i64, 100)))
    }
}

/// Unweighted mean of category accuracies.
pub fn overall_score(categories: &[Percent]) -> Option<Percent> {
    if categories.is_empty() {
        return None;
    }
    let sum = categories.iter().fold(Ratio::from_integer(0), |acc, p| acc + p.0);
    Some(Percent(sum / Ratio::from_integer(categories.len() as i64)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: Task,
    pub cases: usize,
    pub passes: usize,
    pub accuracy: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite_name: String,
    pub suite_version: String,
    pub tasks: Vec<TaskScore>,
    pub average: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("task `{0}` has no results")]
    EmptyCategory(Task),
    #[error("result for unknown case `{0}`")]
    UnknownCase(String),
    #[error("duplicate result for case `{0}`")]
    DuplicateCase(String),
    #[error("report has no tasks")]
    NoTasks,
}

/// Per-task accuracy over `results`. Every scored task of `suite` must have
/// at least one result; open-ended cases carry no ground truth and are
/// skipped. Result order does not matter.
pub fn aggregate(results: &[CaseResult], suite: &Suite) -> Result<EvalReport, AggregateError> {
    let mut tally: BTreeMap<Task, (usize, usize)> = suite
        .tasks()
        .into_iter()
        .filter(|t| *t != Task::OpenEnded)
        .map(|t| (t, (0, 0)))
        .collect();
    let mut seen = std::collections::HashSet::new();
    for r in results {
        let case = suite
            .case(&r.case_id)
            .ok_or_else(|| AggregateError::UnknownCase(r.case_id.clone()))?;
        if !seen.insert(r.case_id.as_str()) {
            return Err(AggregateError::DuplicateCase(r.case_id.clone()));
        }
        if let Some(entry) = tally.get_mut(&case.task) {
            entry.0 += 1;
            entry.1 += usize::from(r.case_pass);
        }
    }
    if tally.is_empty() {
        return Err(AggregateError::NoTasks);
    }
    let mut tasks = Vec::new();
    for (task, (cases, passes)) in tally {
        if cases == 0 {
            return Err(AggregateError::EmptyCategory(task));
        }
        tasks.push(TaskScore {
            task,
            cases,
            passes,
            accuracy: Percent::of(passes, cases),
        });
    }
    let average = overall_score(&tasks.iter().map(|t| t.accuracy).collect::<Vec<_>>()).expect("non-empty");
    Ok(EvalReport {
        suite_name: suite.name.clone(),
        suite_version: suite.version.clone(),
        tasks,
        average,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    MarkdownTable,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown_table" | "markdown" | "md" => Ok(ReportFormat::MarkdownTable),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// Renders `report`. Markdown tables have one column per task, in task
/// order, followed by `Overall`.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<Vec<u8>, AggregateError> {
    if report.tasks.is_empty() {
        return Err(AggregateError::NoTasks);
    }
    if let Some(t) = report.tasks.iter().find(|t| t.cases == 0) {
        return Err(AggregateError::EmptyCategory(t.task));
    }
    Ok(match format {
        ReportFormat::Json => (serde_json::to_string_pretty(report).expect("reports serialize") + "\n").into_bytes(),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let row = |w: &mut csv::Writer<Vec<u8>>, cols: [String; 4]| w.write_record(&cols).expect("in-memory csv");
            row(&mut w, ["task".into(), "cases".into(), "passes".into(), "accuracy".into()]);
            for t in &report.tasks {
                row(&mut w, [t.task.name().into(), t.cases.to_string(), t.passes.to_string(), t.accuracy.to_string()]);
            }
            let cases: usize = report.tasks.iter().map(|t| t.cases).sum();
            let passes: usize = report.tasks.iter().map(|t| t.passes).sum();
            row(&mut w, ["overall".into(), cases.to_string(), passes.to_string(), report.average.to_string()]);
            w.into_inner().expect("in-memory csv")
        }
        ReportFormat::MarkdownTable => {
            let mut header: Vec<&str> = report.tasks.iter().map(|t| t.task.display_name()).collect();
            header.push("Overall");
            let mut values: Vec<String> = report.tasks.iter().map(|t| t.accuracy.to_string()).collect();
            values.push(report.average.to_string());
            let rule = vec!["---"; header.len()];
            format!(
                "| {} |\n|{}|\n| {} |\n",
                header.join(" | "),
                rule.join("|"),
                values.join(" | ")
            )
            .into_bytes()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::PromptCase;
    use crate::constraints::ConstraintSet;
    use crate::refine::Prompt;

    fn pct(s: &str) -> Percent {
        s.parse().unwrap()
    }

    #[test]
    fn exact_rounding() {
        assert_eq!(pct("60.375").to_string(), "60.38");
        assert_eq!(pct("64.86166").to_string(), "64.86");
        assert_eq!(Percent::of(1, 3).to_string(), "33.33");
        assert_eq!(Percent::of(2, 3).to_string(), "66.67");
        assert_eq!(pct("-0.005").to_string(), "-0.01");
        assert!("1e3".parse::<Percent>().is_err());
    }

    fn suite(tasks: &[(Task, usize)]) -> Suite {
        let mut cases = Vec::new();
        for (task, n) in tasks {
            for i in 0..*n {
                cases.push(PromptCase {
                    id: format!("{task}-{i}"),
                    task: *task,
                    prompt: Prompt::new("p").unwrap(),
                    ground_truth: ConstraintSet::new("p"),
                });
            }
        }
        Suite {
            suite_version: 1,
            name: "t".into(),
            version: "1".into(),
            generation_seed: None,
            cases,
        }
    }

    #[test]
    fn aggregates_and_emits() {
        let s = suite(&[(Task::GenevalCounting, 4), (Task::GenevalPosition, 2)]);
        let results: Vec<CaseResult> = s
            .cases
            .iter()
            .enumerate()
            .map(|(i, c)| CaseResult::new(c.id.clone(), vec![("x".into(), i % 2 == 0)]))
            .collect();
        let report = aggregate(&results, &s).unwrap();
        assert_eq!(report.tasks[0].task, Task::GenevalPosition);
        assert_eq!(report.average.to_string(), "50.00");

        let mut reversed = results.clone();
        reversed.reverse();
        assert_eq!(aggregate(&reversed, &s).unwrap(), report);

        let md = String::from_utf8(emit_report(&report, ReportFormat::MarkdownTable).unwrap()).unwrap();
        assert!(md.starts_with("| Position | Counting | Overall |"));

        let json = emit_report(&report, ReportFormat::Json).unwrap();
        let back: EvalReport = serde_json::from_slice(&json).unwrap();
        assert_eq!(emit_report(&back, ReportFormat::Json).unwrap(), json);

        let csv = String::from_utf8(emit_report(&report, ReportFormat::Csv).unwrap()).unwrap();
        assert!(csv.ends_with("overall,6,3,50.00\n"));
    }

    #[test]
    fn errors() {
        let s = suite(&[(Task::Negation, 1), (Task::Spatial, 1)]);
        let only = vec![CaseResult::new("negation-0", vec![])];
        assert_eq!(aggregate(&only, &s), Err(AggregateError::EmptyCategory(Task::Spatial)));
        let stray = vec![CaseResult::new("nope", vec![])];
        assert_eq!(aggregate(&stray, &s), Err(AggregateError::UnknownCase("nope".into())));
    }
}
