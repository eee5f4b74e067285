//! Traveler agents: memory, prompt construction and the decision loop.

pub mod decide;
pub mod memory;
pub mod prompt;

pub use decide::{decide, parse_choice, Decision};
pub use memory::{MemoryEntry, MemoryError, MemoryStore, RetrievalConfig};
pub use prompt::{build_prompt, summarize_window, DecisionContext, Persona, PromptBundle, PromptError, PromptTemplate};

use thiserror::Error;

use crate::env::{RouteId, TravelerId};
use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Everything a model sees when choosing a route for `period`. Only entries
/// of `history` before `period` are used.
#[derive(Debug, Clone, Copy)]
pub struct DecisionInput<'a> {
    pub traveler: TravelerId,
    pub period: u32,
    pub history: &'a MemoryStore,
    pub context: DecisionContext,
}

impl DecisionInput<'_> {
    pub fn prev_choice(&self) -> Option<RouteId> {
        self.history.previous_choice(self.period)
    }
}

/// Common interface of the calibrated agent and the baselines. Models keep
/// no state between calls; anything they learn is rebuilt from `history`.
pub trait DecisionModel: Send + Sync {
    fn name(&self) -> &str;
    fn decide(&self, input: &DecisionInput<'_>, gateway: &Gateway) -> Result<Decision, AgentError>;
}

/// Persona-conditioned traveler following the perceive/retrieve/prompt/decide loop.
#[derive(Debug, Clone)]
pub struct PersonaAgent {
    pub persona: Persona,
    pub retrieval: RetrievalConfig,
}

impl PersonaAgent {
    pub fn new(persona: Persona, retrieval: RetrievalConfig) -> Self {
        Self { persona, retrieval }
    }

    pub fn prompt(&self, input: &DecisionInput<'_>) -> Result<PromptBundle, PromptError> {
        persona_prompt(Some(&self.persona), &self.retrieval, input)
    }
}

pub(crate) fn persona_prompt(
    persona: Option<&Persona>,
    retrieval: &RetrievalConfig,
    input: &DecisionInput<'_>,
) -> Result<PromptBundle, PromptError> {
    let short = input.history.retrieve_short(input.period, retrieval);
    let long = input.history.retrieve_long(input.period, retrieval);
    build_prompt(persona, &summarize_window(short, false), &summarize_window(long, true), &input.context)
}

impl DecisionModel for PersonaAgent {
    fn name(&self) -> &str {
        "ours"
    }

    fn decide(&self, input: &DecisionInput<'_>, gateway: &Gateway) -> Result<Decision, AgentError> {
        let bundle = self.prompt(input)?;
        Ok(decide(&bundle, gateway, &input.context, input.prev_choice())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GroupCounts, Observation};

    #[test]
    fn scripted_agent_follows_rule_and_is_reproducible() {
        let persona = Persona::new("PREFER expressway UNLESS mean(short) > 20").unwrap();
        let agent = PersonaAgent::new(persona, RetrievalConfig::default());
        let mut history = MemoryStore::new();
        for p in 1..=4 {
            let obs =
                Observation { period: p, own_route: RouteId::Expressway, own_time: 25.0, group_counts: GroupCounts::default() };
            history.perceive(RouteId::Expressway, &obs).unwrap();
        }
        let context = DecisionContext { day: 5, choice_set: [RouteId::Expressway, RouteId::Local1], free_flow: [5.0, 15.0] };
        let input = DecisionInput { traveler: 1, period: 5, history: &history, context };
        let gw = Gateway::scripted(7);
        let a = agent.decide(&input, &gw).unwrap();
        assert_eq!(a.choice, RouteId::Local1);
        assert_eq!(a, agent.decide(&input, &gw).unwrap());
        let early = DecisionInput { period: 1, context: DecisionContext { day: 1, ..context }, ..input };
        assert_eq!(agent.decide(&early, &gw).unwrap().choice, RouteId::Expressway);
    }
}
