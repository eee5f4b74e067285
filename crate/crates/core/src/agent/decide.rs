use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompt::{DecisionContext, PromptBundle};
use crate::env::RouteId;
use crate::gateway::{Gateway, GatewayError, Message, Role};

/// Parse retries before the fallback rule applies.
pub const PARSE_RETRIES: usize = 2;

fn route_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(expressway|local\s?1|local\s?2)\b").expect("valid regex"))
}

fn parse_route_name(s: &str) -> Option<RouteId> {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    compact.parse().ok()
}

/// Reads a route out of a model reply: a JSON `choice` field first, then a
/// unique admissible route name anywhere in the text.
pub fn parse_choice(reply: &str, choice_set: [RouteId; 2]) -> Option<RouteId> {
    if let (Some(start), Some(end)) = (reply.find('{'), reply.rfind('}')) {
        if start < end {
            if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&reply[start..=end]) {
                let choice = map
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("choice"))
                    .and_then(|(_, v)| v.as_str())
                    .and_then(parse_route_name);
                if let Some(r) = choice.filter(|r| choice_set.contains(r)) {
                    return Some(r);
                }
            }
        }
    }
    let mut found: Vec<RouteId> =
        route_regex().captures_iter(reply).filter_map(|c| parse_route_name(&c[1])).filter(|r| choice_set.contains(r)).collect();
    found.dedup();
    found.sort();
    found.dedup();
    match found.as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub choice: RouteId,
    pub template_id: String,
    pub prompt_digest: String,
    /// Every raw reply, one per gateway call.
    pub replies: Vec<String>,
    pub fallback: bool,
}

fn corrective(ctx: &DecisionContext) -> String {
    format!(
        "Your previous answer could not be read. Reply with only {{\"choice\": \"<route>\"}} where <route> is one of: {}.",
        ctx.choice_list()
    )
}

/// Asks the model for a route; after [`PARSE_RETRIES`] unreadable replies it
/// repeats `prev_choice`, or takes the lower free-flow route on day one.
pub fn decide(
    bundle: &PromptBundle,
    gateway: &Gateway,
    ctx: &DecisionContext,
    prev_choice: Option<RouteId>,
) -> Result<Decision, GatewayError> {
    let mut messages = bundle.messages();
    let mut replies = Vec::new();
    for attempt in 0..=PARSE_RETRIES {
        let reply = gateway.complete(&gateway.request(Role::Decide, messages.clone()))?;
        let parsed = parse_choice(&reply, ctx.choice_set);
        replies.push(reply.clone());
        if let Some(choice) = parsed {
            return Ok(Decision {
                choice,
                template_id: bundle.template_id.clone(),
                prompt_digest: bundle.digest(),
                replies,
                fallback: false,
            });
        }
        if attempt < PARSE_RETRIES {
            messages.push(Message { speaker: crate::gateway::Speaker::Assistant, text: reply });
            messages.push(Message::user(corrective(ctx)));
        }
    }
    let choice = prev_choice.filter(|r| ctx.choice_set.contains(r)).unwrap_or_else(|| ctx.free_flow_preferred());
    log::debug!("day {}: unreadable replies, falling back to {choice}", ctx.day);
    Ok(Decision { choice, template_id: bundle.template_id.clone(), prompt_digest: bundle.digest(), replies, fallback: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::prompt::build_prompt;
    use crate::gateway::{Backend, ProviderConfig, RoleRequest};
    use std::sync::Mutex;

    const G1: [RouteId; 2] = [RouteId::Expressway, RouteId::Local1];

    #[test]
    fn parses_replies() {
        assert_eq!(parse_choice(r#"{"choice":"expressway"}"#, G1), Some(RouteId::Expressway));
        assert_eq!(parse_choice(r#"Sure: {"Choice": "Local1", "reason": "less traffic"}"#, G1), Some(RouteId::Local1));
        assert_eq!(parse_choice("I will take local1 today", G1), Some(RouteId::Local1));
        assert_eq!(parse_choice("Local 1 again.", G1), Some(RouteId::Local1));
        assert_eq!(parse_choice("take the highway", G1), None);
        assert_eq!(parse_choice("expressway or local1?", G1), None);
        assert_eq!(parse_choice("local2", G1), None);
        assert_eq!(parse_choice(r#"{"choice":"local2"} fine, expressway"#, G1), Some(RouteId::Expressway));
    }

    struct Canned(Mutex<Vec<String>>);

    impl Backend for Canned {
        fn complete(&self, _r: &RoleRequest) -> Result<String, GatewayError> {
            let mut v = self.0.lock().unwrap();
            Ok(if v.len() > 1 { v.remove(0) } else { v[0].clone() })
        }
    }

    fn gateway(replies: &[&str]) -> Gateway {
        let backend = Canned(Mutex::new(replies.iter().map(|s| s.to_string()).collect()));
        Gateway::with_backend(ProviderConfig::scripted(0), Box::new(backend)).unwrap()
    }

    fn ctx() -> DecisionContext {
        DecisionContext { day: 5, choice_set: G1, free_flow: [5.0, 15.0] }
    }

    #[test]
    fn retries_then_falls_back() {
        let bundle = build_prompt(None, "x", "y", &ctx()).unwrap();
        let gw = gateway(&["take the highway"]);
        let d = decide(&bundle, &gw, &ctx(), Some(RouteId::Local1)).unwrap();
        assert_eq!(d.choice, RouteId::Local1);
        assert!(d.fallback);
        assert_eq!(d.replies.len(), PARSE_RETRIES + 1);
        assert_eq!(gw.stats().requests, 3);

        let d = decide(&bundle, &gateway(&["take the highway"]), &ctx(), None).unwrap();
        assert_eq!(d.choice, RouteId::Expressway);
    }

    #[test]
    fn recovers_on_retry() {
        let bundle = build_prompt(None, "x", "y", &ctx()).unwrap();
        let d = decide(&bundle, &gateway(&["hmm", r#"{"choice": "local1"}"#]), &ctx(), Some(RouteId::Expressway)).unwrap();
        assert_eq!(d.choice, RouteId::Local1);
        assert!(!d.fallback);
        assert_eq!(d.replies.len(), 2);
    }
}
