//! Online persona calibration over a rolling window of recorded choices.
//!
//! One step at period `t` scores the current persona on `[t - t_w + 1, t]`
//! with memories rebuilt from the recorded history, asks an analyst for a
//! critique of every mismatch, turns the critiques into `J` update
//! directions, edits one candidate per direction, and keeps the best
//! candidate only if it beats the current persona. An accepted candidate is
//! merged with a baseline persona summarized from the last `t_m` periods.

mod prompts;

pub use prompts::{clean_persona_reply, parse_directions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    AgentError, DecisionContext, DecisionInput, DecisionModel, MemoryStore, Persona, PersonaAgent, PromptError, RetrievalConfig,
};
use crate::dsl::RuleAst;
use crate::env::{RouteId, TravelerId};
use crate::gateway::{Gateway, GatewayError, Role};

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no recorded choice for period {0}")]
    InsufficientHistory(u32),
    #[error("every feedback is null; nothing to synthesize")]
    NoFeedback,
    #[error("integrator returned {got} directions, {want} requested")]
    TooFewDirections { got: usize, want: usize },
    #[error("invalid calibration config: {0}")]
    Config(String),
}

impl From<AgentError> for CalibrateError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Prompt(p) => CalibrateError::Prompt(p),
            AgentError::Gateway(g) => CalibrateError::Gateway(g),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub t_w: u32,
    pub t_m: u32,
    #[serde(rename = "J")]
    pub j: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Calibrate at periods that are multiples of this.
    pub stride: u32,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { t_w: 8, t_m: 80, j: 3, loss: LossKind::ZeroOne, seed: 0, stride: 1 }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrateError> {
        if self.t_w < 1 || self.t_m <= self.t_w {
            return Err(CalibrateError::Config(format!("need t_m > t_w >= 1, got t_w={} t_m={}", self.t_w, self.t_m)));
        }
        if self.j < 1 {
            return Err(CalibrateError::Config("J must be at least 1".into()));
        }
        if self.stride < 1 {
            return Err(CalibrateError::Config("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Periods at which a step runs when training ends at `last`.
    pub fn schedule(&self, last: u32) -> Vec<u32> {
        (self.t_w..=last).filter(|t| t % self.stride == 0).collect()
    }

    /// Worst-case gateway calls of one step without parse retries.
    pub fn call_budget(&self) -> u64 {
        let (tw, j) = (u64::from(self.t_w), self.j as u64);
        3 * tw + 3 + j * (1 + tw)
    }
}

/// One traveler's recorded history and what it needs to replay decisions.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationTask<'a> {
    pub traveler: TravelerId,
    pub history: &'a MemoryStore,
    pub choice_set: [RouteId; 2],
    pub free_flow: [f64; 2],
    pub retrieval: RetrievalConfig,
}

impl CalibrationTask<'_> {
    pub fn context(&self, day: u32) -> DecisionContext {
        DecisionContext { day, choice_set: self.choice_set, free_flow: self.free_flow }
    }

    fn routes_text(&self) -> String {
        self.context(0).routes_text()
    }

    fn truth(&self, period: u32) -> Result<RouteId, CalibrateError> {
        let entries = self.history.entries();
        let i = entries.partition_point(|e| e.period < period);
        match entries.get(i) {
            Some(e) if e.period == period => Ok(e.action),
            _ => Err(CalibrateError::InsufficientHistory(period)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodOutcome {
    pub period: u32,
    pub simulated: RouteId,
    pub truth: RouteId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate: Persona,
    pub window_loss: usize,
    pub per_period_outcomes: Vec<PeriodOutcome>,
    pub gateway_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextFeedback {
    pub period: u32,
    pub simulated: RouteId,
    pub truth: RouteId,
    /// Empty exactly when the simulation matched.
    pub critique: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateDirection {
    pub index: usize,
    pub directive: String,
}

/// Scores `persona` on `window` with memories taken from the recorded history.
pub fn window_loss(
    persona: &Persona,
    task: &CalibrationTask<'_>,
    window: (u32, u32),
    gateway: &Gateway,
) -> Result<CandidateResult, CalibrateError> {
    let agent = PersonaAgent::new(persona.clone(), task.retrieval);
    let mut outcomes = Vec::new();
    let mut calls = 0;
    for period in window.0..=window.1 {
        let truth = task.truth(period)?;
        let input = DecisionInput { traveler: task.traveler, period, history: task.history, context: task.context(period) };
        let d = agent.decide(&input, gateway)?;
        calls += d.replies.len() as u64;
        outcomes.push(PeriodOutcome { period, simulated: d.choice, truth });
    }
    Ok(CandidateResult {
        candidate: persona.clone(),
        window_loss: outcomes.iter().filter(|o| o.simulated != o.truth).count(),
        per_period_outcomes: outcomes,
        gateway_calls: calls,
    })
}

/// Analyst critique of one data point; null without a call when it matched.
pub fn pseudo_gradient(
    persona: &Persona,
    task: &CalibrationTask<'_>,
    outcome: &PeriodOutcome,
    gateway: &Gateway,
) -> Result<TextFeedback, CalibrateError> {
    let mut fb =
        TextFeedback { period: outcome.period, simulated: outcome.simulated, truth: outcome.truth, critique: String::new() };
    if outcome.simulated == outcome.truth {
        return Ok(fb);
    }
    let messages = prompts::gradient(persona, task, &fb)?;
    let reply = gateway.complete(&gateway.request(Role::Gradient, messages))?;
    let critique = reply.trim();
    if critique.is_empty() {
        return Err(GatewayError::InvalidReply { role: Role::Gradient, message: "empty critique for a mismatch".into() }.into());
    }
    fb.critique = critique.to_string();
    Ok(fb)
}

pub fn synthesize_directions(
    persona: &Persona,
    feedbacks: &[TextFeedback],
    j: usize,
    gateway: &Gateway,
) -> Result<Vec<UpdateDirection>, CalibrateError> {
    if feedbacks.iter().all(|f| f.critique.is_empty()) {
        return Err(CalibrateError::NoFeedback);
    }
    let messages = prompts::integrate(persona, feedbacks, j)?;
    let reply = gateway.complete(&gateway.request(Role::Integrate, messages))?;
    let lines = parse_directions(&reply);
    if lines.len() < j {
        return Err(CalibrateError::TooFewDirections { got: lines.len(), want: j });
    }
    Ok(lines.into_iter().take(j).enumerate().map(|(i, directive)| UpdateDirection { index: i + 1, directive }).collect())
}

/// Editor call. `Ok(Err(reason))` is a rejected candidate (empty or over the cap).
pub fn apply_edit(
    persona: &Persona,
    direction: &UpdateDirection,
    task: &CalibrationTask<'_>,
    gateway: &Gateway,
) -> Result<Result<Persona, String>, CalibrateError> {
    let messages = prompts::edit(persona, task, &direction.directive)?;
    let reply = gateway.complete(&gateway.request(Role::Edit, messages))?;
    Ok(persona.revise(clean_persona_reply(&reply)).map_err(|e| e.to_string()))
}

/// Lowest strictly improving candidate loss; ties go to the earliest index.
pub fn select_candidate(current_loss: usize, candidate_losses: &[Option<usize>]) -> Option<usize> {
    let (best, loss) = candidate_losses.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l))).min_by_key(|&(i, l)| (l, i))?;
    (loss < current_loss).then_some(best)
}

/// Summarizer call over `[lo, hi]` of the recorded history.
pub fn summarize_persona(task: &CalibrationTask<'_>, lo: u32, hi: u32, gateway: &Gateway) -> Result<String, CalibrateError> {
    let messages = prompts::summarize(task, lo, hi)?;
    Ok(clean_persona_reply(&gateway.complete(&gateway.request(Role::Summarize, messages))?))
}

pub fn merge_personas(
    candidate: &Persona,
    baseline: &str,
    task: &CalibrationTask<'_>,
    gateway: &Gateway,
) -> Result<String, CalibrateError> {
    let messages = prompts::merge(&candidate.text, baseline, task)?;
    Ok(clean_persona_reply(&gateway.complete(&gateway.request(Role::Merge, messages))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub index: usize,
    pub text: Option<String>,
    pub window_loss: Option<usize>,
    pub rejected: Option<String>,
}

/// One JSON line per (agent, step) in the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub agent: TravelerId,
    pub t: u32,
    pub window: (u32, u32),
    pub current_loss: usize,
    pub current_outcomes: Vec<PeriodOutcome>,
    pub feedbacks: Vec<TextFeedback>,
    pub directions: Vec<UpdateDirection>,
    pub candidates: Vec<CandidateSummary>,
    pub candidate_losses: Vec<Option<usize>>,
    pub selected: Option<usize>,
    pub accepted: bool,
    pub baseline: Option<String>,
    pub merged: Option<String>,
    pub post_merge_loss: Option<usize>,
    pub smoothing_error: Option<String>,
    pub persona_version_before: u32,
    pub persona_version_after: u32,
    pub persona_before: String,
    pub persona_after: String,
    pub gateway_calls: u64,
}

impl CalibrationRecord {
    fn new(task: &CalibrationTask<'_>, t: u32, window: (u32, u32), current: &CandidateResult) -> Self {
        Self {
            agent: task.traveler,
            t,
            window,
            current_loss: current.window_loss,
            current_outcomes: current.per_period_outcomes.clone(),
            feedbacks: Vec::new(),
            directions: Vec::new(),
            candidates: Vec::new(),
            candidate_losses: Vec::new(),
            selected: None,
            accepted: false,
            baseline: None,
            merged: None,
            post_merge_loss: None,
            smoothing_error: None,
            persona_version_before: current.candidate.version,
            persona_version_after: current.candidate.version,
            persona_before: current.candidate.text.clone(),
            persona_after: current.candidate.text.clone(),
            gateway_calls: current.gateway_calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub persona: Persona,
    pub record: CalibrationRecord,
}

/// Steps 1-5 at period `t`.
pub fn calibrate_step(
    task: &CalibrationTask<'_>,
    t: u32,
    current: &Persona,
    config: &CalibrationConfig,
    gateway: &Gateway,
) -> Result<StepOutcome, CalibrateError> {
    config.validate()?;
    if t < config.t_w {
        return Err(CalibrateError::InsufficientHistory(t));
    }
    let window = (t + 1 - config.t_w, t);
    let evaluated = window_loss(current, task, window, gateway)?;
    let mut record = CalibrationRecord::new(task, t, window, &evaluated);
    if evaluated.window_loss == 0 {
        return Ok(StepOutcome { persona: current.clone(), record });
    }

    for o in &evaluated.per_period_outcomes {
        let fb = pseudo_gradient(current, task, o, gateway)?;
        record.gateway_calls += u64::from(!fb.critique.is_empty());
        record.feedbacks.push(fb);
    }
    record.directions = synthesize_directions(current, &record.feedbacks, config.j, gateway)?;
    record.gateway_calls += 1;

    let mut results: Vec<Option<CandidateResult>> = Vec::new();
    for d in &record.directions {
        let edited = apply_edit(current, d, task, gateway)?;
        record.gateway_calls += 1;
        match edited {
            Ok(candidate) => {
                let r = window_loss(&candidate, task, window, gateway)?;
                record.gateway_calls += r.gateway_calls;
                record.candidates.push(CandidateSummary {
                    index: d.index,
                    text: Some(candidate.text.clone()),
                    window_loss: Some(r.window_loss),
                    rejected: None,
                });
                results.push(Some(r));
            }
            Err(reason) => {
                record.candidates.push(CandidateSummary {
                    index: d.index,
                    text: None,
                    window_loss: None,
                    rejected: Some(reason),
                });
                results.push(None);
            }
        }
    }
    record.candidate_losses = results.iter().map(|r| r.as_ref().map(|r| r.window_loss)).collect();
    record.selected = select_candidate(evaluated.window_loss, &record.candidate_losses);
    let Some(best) = record.selected else {
        return Ok(StepOutcome { persona: current.clone(), record });
    };
    let winner = results[best].as_ref().expect("selected candidate was evaluated").candidate.clone();

    match smooth(&winner, task, t, config, gateway, &mut record) {
        Ok(merged) => {
            let persona = current.revise(merged.text)?;
            record.accepted = true;
            record.persona_version_after = persona.version;
            record.persona_after = persona.text.clone();
            match window_loss(&persona, task, window, gateway) {
                Ok(r) => {
                    record.gateway_calls += r.gateway_calls;
                    record.post_merge_loss = Some(r.window_loss);
                }
                Err(e) => log::warn!("agent {} t={t}: post-merge evaluation failed: {e}", task.traveler),
            }
            Ok(StepOutcome { persona, record })
        }
        Err(e) => {
            log::warn!("agent {} t={t}: smoothing failed, keeping current persona: {e}", task.traveler);
            record.smoothing_error = Some(e.to_string());
            Ok(StepOutcome { persona: current.clone(), record })
        }
    }
}

fn smooth(
    winner: &Persona,
    task: &CalibrationTask<'_>,
    t: u32,
    config: &CalibrationConfig,
    gateway: &Gateway,
    record: &mut CalibrationRecord,
) -> Result<Persona, CalibrateError> {
    let lo = t.saturating_sub(config.t_m) + 1;
    let baseline = summarize_persona(task, lo, t, gateway)?;
    record.gateway_calls += 1;
    record.baseline = Some(baseline.clone());
    let merged = merge_personas(winner, &baseline, task, gateway)?;
    record.gateway_calls += 1;
    record.merged = Some(merged.clone());
    Ok(winner.revise(merged)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPersona {
    /// Neutral rule on the scripted backend, summarizer otherwise.
    #[default]
    Auto,
    Neutral,
    Summarize,
}

/// Starting persona before the first step.
pub fn initial_persona(
    mode: InitialPersona,
    task: &CalibrationTask<'_>,
    config: &CalibrationConfig,
    gateway: &Gateway,
) -> Result<Persona, CalibrateError> {
    let summarize = match mode {
        InitialPersona::Neutral => false,
        InitialPersona::Summarize => true,
        InitialPersona::Auto => gateway.config().backend != crate::gateway::BackendKind::Scripted,
    };
    let text = if summarize { summarize_persona(task, 1, config.t_w, gateway)? } else { RuleAst::neutral().to_string() };
    Ok(Persona::new(text)?)
}
