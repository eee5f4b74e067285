//! Rule personas: parse, print and evaluate a few rules against the same
//! trip history, then let the scripted decider answer from the rendered prompt.

use routecal::agent::{DecisionContext, DecisionInput, DecisionModel, MemoryStore, Persona, PersonaAgent, RetrievalConfig};
use routecal::dsl::{eval_rule, mutate_rule, parse_rule, Directive};
use routecal::env::{RouteId, Scenario};
use routecal::gateway::Gateway;

const RULES: &[&str] = &[
    "PREFER expressway UNLESS last(short) > 20",
    "PREFER NONE UNLESS mean(long) > 25 STAY_BIAS weak",
    "PREFER local1 UNLESS max(short) > 18 STAY_BIAS strong",
];

fn main() -> anyhow::Result<()> {
    let scenario = Scenario::default();
    let traveler = 3;
    let retrieval = RetrievalConfig::default();

    // ten days alternating between a congested expressway and local1
    let mut history = MemoryStore::new();
    let mut prev = None;
    for day in 0..10u32 {
        let choices = scenario
            .travelers()
            .map(|a| {
                let set = scenario.choice_set(a).unwrap();
                (a, if (a + day) % 2 == 0 { set[0] } else { set[1] })
            })
            .collect();
        let state = scenario.update_state(&choices, prev.as_ref())?;
        history.perceive(choices[&traveler], &scenario.observe(&state, traveler, choices[&traveler])?)?;
        prev = Some(state);
    }

    let day = 11;
    let ctx = DecisionContext::for_traveler(&scenario, traveler, day)?;
    let short = history.retrieve_short(day, &retrieval);
    let long = history.retrieve_long(day, &retrieval);
    let gateway = Gateway::scripted(0);

    for src in RULES {
        let rule = parse_rule(src)?;
        let direct = eval_rule(&rule, short, long, history.previous_choice(day), &ctx.rule_context());
        let agent = PersonaAgent::new(Persona::new(rule.to_string())?, retrieval);
        let input = DecisionInput { traveler, period: day, history: &history, context: ctx };
        let decision = agent.decide(&input, &gateway)?;
        println!("{rule}\n  evaluator: {direct}  scripted decider: {}", decision.choice);
        assert_eq!(direct, decision.choice);
    }

    let base = parse_rule(RULES[0])?;
    for d in [Directive::Thresh(-5.0), Directive::FlipDefault, Directive::WindowSwap] {
        println!("{d}: {}", mutate_rule(&base, d, [RouteId::Expressway, RouteId::Local1]));
    }
    Ok(())
}
