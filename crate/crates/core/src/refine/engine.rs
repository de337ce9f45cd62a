use super::instruction::{build_refiner_instruction, REASK_NOTE};
use super::types::{
    Feedback, FinalSelection, HumanFeedback, Prompt, PromptError, RefinementRound, SessionConfig, SessionStatus,
    Trajectory,
};
use crate::backend::{
    generate, parse_critique_response, with_retry, CallStats, Critic, CritiqueRequest, GenerateError,
    GenerationRequest, Generator, MalformedCritique, ReAsk, RetryExhausted, RetryPolicy,
};
use crate::constraints::parse_constraints;
use crate::eval::check_scene;
use crate::refine::ImageRef;
use crate::sim::scene_from_svg;
use crate::store::{Event, RoundTimings, Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Critique,
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("{stage:?} backend failed: {source}")]
    BackendFailure {
        stage: Stage,
        #[source]
        source: RetryExhausted,
    },
    #[error("critic output unusable after one re-ask: {0}")]
    MalformedCritique(MalformedCritique),
    #[error("refined prompt rejected: {0}")]
    PromptRejected(PromptError),
    #[error("session {0} already has all its rounds")]
    SessionComplete(String),
    #[error("session {0} was aborted")]
    SessionAborted(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Optional per-round score used by `best_scored` selection.
pub trait RoundScorer: Send + Sync {
    fn score(&self, original_prompt: &Prompt, image: &[u8]) -> Option<f64>;
}

/// Fraction of the original prompt's constraints a simulated image meets.
pub struct ConstraintScorer;

impl RoundScorer for ConstraintScorer {
    fn score(&self, original_prompt: &Prompt, image: &[u8]) -> Option<f64> {
        let set = parse_constraints(original_prompt.as_str());
        let scene = scene_from_svg(image)?;
        if set.is_empty() {
            return None;
        }
        let result = check_scene("", &scene, &set);
        let met = result.per_constraint.iter().filter(|(_, ok)| *ok).count();
        Some(met as f64 / set.len() as f64)
    }
}

/// Drives sessions over one generator/critic pair.
pub struct Refiner<'a> {
    pub generator: &'a dyn Generator,
    pub critic: &'a dyn Critic,
    pub store: &'a Store,
    pub retry: RetryPolicy,
    pub scorer: Option<&'a dyn RoundScorer>,
}

impl<'a> Refiner<'a> {
    pub fn new(generator: &'a dyn Generator, critic: &'a dyn Critic, store: &'a Store) -> Self {
        Self {
            generator,
            critic,
            store,
            retry: RetryPolicy::default(),
            scorer: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_scorer(mut self, scorer: &'a dyn RoundScorer) -> Self {
        self.scorer = Some(scorer);
        self
    }

    /// Runs a whole session: round 0 plus `max_iterations` refinements.
    pub fn run(&self, prompt: Prompt, config: SessionConfig) -> Result<Trajectory, RefineError> {
        let traj = self.start(prompt, config)?;
        self.finish(traj)
    }

    /// Creates the session and renders round 0.
    pub fn start(&self, prompt: Prompt, config: SessionConfig) -> Result<Trajectory, RefineError> {
        let id = self.store.create_session(&prompt, &config)?;
        let traj = Trajectory::new(id, prompt, config);
        self.step(&traj)
    }

    /// Reloads a session from the store and steps it to completion.
    pub fn resume(&self, session_id: &str) -> Result<Trajectory, RefineError> {
        let traj = self.store.load_trajectory(session_id)?;
        self.finish(traj)
    }

    fn finish(&self, mut traj: Trajectory) -> Result<Trajectory, RefineError> {
        while traj.status == SessionStatus::Running {
            traj = self.step(&traj)?;
        }
        if traj.status == SessionStatus::Aborted {
            return Err(RefineError::SessionAborted(traj.session_id));
        }
        Ok(traj)
    }

    /// Records a human note; the next critique sees it in the history.
    pub fn add_feedback(&self, traj: &Trajectory, author: &str, text: &str) -> Result<Trajectory, RefineError> {
        self.check_running(traj)?;
        let note = HumanFeedback {
            after_round: traj.rounds.len().saturating_sub(1),
            author: author.to_string(),
            text: text.to_string(),
        };
        self.store.append(&traj.session_id, Event::HumanFeedback(note.clone()))?;
        let mut next = traj.clone();
        next.human_feedback.push(note);
        Ok(next)
    }

    fn check_running(&self, traj: &Trajectory) -> Result<(), RefineError> {
        match traj.status {
            SessionStatus::Running if traj.rounds.len() < traj.planned_rounds() => Ok(()),
            SessionStatus::Aborted => Err(RefineError::SessionAborted(traj.session_id.clone())),
            _ => Err(RefineError::SessionComplete(traj.session_id.clone())),
        }
    }

    /// Appends exactly one round, or finishes the session on an early stop.
    pub fn step(&self, traj: &Trajectory) -> Result<Trajectory, RefineError> {
        self.check_running(traj)?;
        let mut next = traj.clone();
        let outcome = if traj.rounds.is_empty() {
            self.initial_round(traj)
        } else {
            self.refine_round(traj)
        };
        let (round, timings) = match outcome {
            Ok(Some(done)) => done,
            Ok(None) => {
                self.store.append(&traj.session_id, Event::SessionFinished)?;
                next.status = SessionStatus::Finished;
                return Ok(next);
            }
            Err(e) => {
                if !matches!(e, RefineError::Store(_)) {
                    self.store.append(
                        &traj.session_id,
                        Event::SessionAborted {
                            reason: e.to_string(),
                        },
                    )?;
                }
                return Err(e);
            }
        };
        self.store.append(
            &traj.session_id,
            Event::RoundCompleted {
                round: round.clone(),
                timings,
            },
        )?;
        next.rounds.push(round);
        if next.rounds.len() == next.planned_rounds() {
            self.store.append(&traj.session_id, Event::SessionFinished)?;
            next.status = SessionStatus::Finished;
        }
        Ok(next)
    }

    fn render(&self, traj: &Trajectory, index: usize, prompt: &Prompt) -> Result<(ImageRef, Vec<u8>, CallStats), RefineError> {
        let steps = traj.config.steps.unwrap_or(self.generator.descriptor().default_steps);
        let request = GenerationRequest::new(prompt.clone(), traj.config.seed_for_round(index), steps);
        match generate(self.generator, self.store, &request, &self.retry) {
            Ok(g) => Ok((g.image, g.bytes, g.stats)),
            Err(GenerateError::Backend(source)) => Err(RefineError::BackendFailure {
                stage: Stage::Generate,
                source,
            }),
            Err(GenerateError::Store(e)) => Err(e.into()),
        }
    }

    fn score(&self, traj: &Trajectory, bytes: &[u8]) -> Option<f64> {
        self.scorer.and_then(|s| s.score(&traj.original_prompt, bytes))
    }

    fn initial_round(&self, traj: &Trajectory) -> Result<Option<(RefinementRound, RoundTimings)>, RefineError> {
        let prompt = traj.original_prompt.clone();
        let (image, bytes, stats) = self.render(traj, 0, &prompt)?;
        let round = RefinementRound {
            index: 0,
            prompt,
            feedback: None,
            image,
            critic_raw: None,
            score: self.score(traj, &bytes),
        };
        Ok(Some((
            round,
            RoundTimings {
                generate: stats,
                critique: None,
            },
        )))
    }

    fn ask(&self, request: &CritiqueRequest, image: &[u8]) -> Result<(String, CallStats), RefineError> {
        with_retry(&self.retry, |_| self.critic.critique(request, image)).map_err(|source| {
            RefineError::BackendFailure {
                stage: Stage::Critique,
                source,
            }
        })
    }

    fn refine_round(&self, traj: &Trajectory) -> Result<Option<(RefinementRound, RoundTimings)>, RefineError> {
        let last = traj.latest().expect("round 0 exists");
        let (_, image_bytes) = self.store.get_blob(&last.image.blob_id)?;
        let mut request = CritiqueRequest {
            instruction: build_refiner_instruction(&traj.original_prompt, &traj.rounds, &traj.human_feedback),
            image: last.image.clone(),
            model_id: self.critic.descriptor().model.clone(),
            original_prompt: traj.original_prompt.clone(),
            prompt_history: traj.rounds.iter().map(|r| r.prompt.clone()).collect(),
            reask: None,
        };
        let (mut raw, mut stats) = self.ask(&request, &image_bytes)?;
        let parsed = match parse_critique_response(&raw) {
            Ok(p) => p,
            Err(first) => {
                tracing::warn!(session = %traj.session_id, error = %first, "re-asking critic");
                request.reask = Some(ReAsk {
                    previous_response: raw.clone(),
                    note: REASK_NOTE.to_string(),
                });
                let (again, more) = self.ask(&request, &image_bytes)?;
                stats.attempts += more.attempts;
                stats.latency_ms += more.latency_ms;
                raw = again;
                parse_critique_response(&raw).map_err(RefineError::MalformedCritique)?
            }
        };
        let (prompt_text, feedback) = parsed;
        let prompt = Prompt::new(prompt_text).map_err(RefineError::PromptRejected)?;

        if traj.config.early_stop && feedback.trim_start().starts_with("ALIGNED") && prompt == last.prompt {
            return Ok(None);
        }

        let index = traj.rounds.len();
        let (image, bytes, gen_stats) = self.render(traj, index, &prompt)?;
        let round = RefinementRound {
            index,
            prompt,
            feedback: Some(Feedback(feedback)),
            image,
            critic_raw: Some(raw),
            score: self.score(traj, &bytes),
        };
        Ok(Some((
            round,
            RoundTimings {
                generate: gen_stats,
                critique: Some(stats),
            },
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectError {
    #[error("trajectory is not finished")]
    Incomplete,
    #[error("best_scored selection needs a score on every round; round {0} has none")]
    MissingScores(usize),
}

/// Index of the round whose image is the session's answer. `last` is the
/// final round; `best_scored` is the highest score, ties going to the later
/// round.
pub fn select_final(traj: &Trajectory, policy: FinalSelection) -> Result<usize, SelectError> {
    if !traj.is_complete() || traj.rounds.is_empty() {
        return Err(SelectError::Incomplete);
    }
    match policy {
        FinalSelection::Last => Ok(traj.rounds.len() - 1),
        FinalSelection::BestScored => {
            let mut best: Option<(usize, f64)> = None;
            for r in &traj.rounds {
                let s = r.score.ok_or(SelectError::MissingScores(r.index))?;
                if best.is_none_or(|(_, b)| s >= b) {
                    best = Some((r.index, s));
                }
            }
            Ok(best.expect("non-empty").0)
        }
    }
}
