//! One decision through an OpenAI-compatible endpoint, with the response cache on.
//!
//! ```text
//! ROUTECAL_ENDPOINT=https://api.openai.com/v1/chat/completions \
//! ROUTECAL_MODEL=gpt-4o OPENAI_API_KEY=... cargo run --example http_provider
//! ```
//!
//! Running it twice answers the second time from the cache without a request.

use routecal::agent::{DecisionContext, DecisionInput, DecisionModel, MemoryStore, Persona, PersonaAgent, RetrievalConfig};
use routecal::env::Scenario;
use routecal::gateway::{Gateway, ProviderConfig};

fn main() -> anyhow::Result<()> {
    let Ok(endpoint) = std::env::var("ROUTECAL_ENDPOINT") else {
        eprintln!("set ROUTECAL_ENDPOINT, ROUTECAL_MODEL and OPENAI_API_KEY to run this example");
        return Ok(());
    };
    let model = std::env::var("ROUTECAL_MODEL").unwrap_or_else(|_| "gpt-4o".into());
    let mut config = ProviderConfig::http(endpoint, "OPENAI_API_KEY", model);
    config.cache_dir = Some(std::env::temp_dir().join("routecal_cache"));
    config.rate_limit = Some(60);
    let gateway = Gateway::from_config(config)?;

    let scenario = Scenario::default();
    let persona = Persona::new(
        "A commuter who sticks with the expressway and only tries the local road after a trip that felt much longer than usual.",
    )?;
    let agent = PersonaAgent::new(persona, RetrievalConfig::default());
    let history = MemoryStore::new();
    let input =
        DecisionInput { traveler: 1, period: 1, history: &history, context: DecisionContext::for_traveler(&scenario, 1, 1)? };
    let decision = agent.decide(&input, &gateway)?;
    println!("choice {} (fallback: {})", decision.choice, decision.fallback);
    println!("reply: {}", decision.replies.last().map(String::as_str).unwrap_or(""));
    println!("{:?}", gateway.stats());
    Ok(())
}
