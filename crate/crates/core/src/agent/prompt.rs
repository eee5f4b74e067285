use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::memory::{round_tenth, MemoryEntry};
use crate::dsl::RuleContext;
use crate::env::{RouteId, Scenario, TravelerId};
use crate::gateway::Message;
use crate::protocol;

pub const MAX_PERSONA_CHARS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("persona is empty")]
    EmptyPersona,
    #[error("persona has {0} characters, over the {MAX_PERSONA_CHARS} cap")]
    PersonaTooLong(usize),
    #[error("template {template}: placeholder {{{name}}} is not bound")]
    Unbound { template: String, name: String },
    #[error("template {0} needs a [system] and a [user] section")]
    Malformed(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub text: String,
    pub version: u32,
    pub parent_version: Option<u32>,
}

impl Persona {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        check_persona_text(&text)?;
        Ok(Self { text, version: 0, parent_version: None })
    }

    /// Successor of `self` carrying `text`.
    pub fn revise(&self, text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        check_persona_text(&text)?;
        Ok(Self { text, version: self.version + 1, parent_version: Some(self.version) })
    }
}

pub fn check_persona_text(text: &str) -> Result<(), PromptError> {
    if text.trim().is_empty() {
        return Err(PromptError::EmptyPersona);
    }
    let n = text.chars().count();
    if n > MAX_PERSONA_CHARS {
        return Err(PromptError::PersonaTooLong(n));
    }
    Ok(())
}

/// Text template with `[system]` / `[user]` parts and `{name}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: String,
    system: String,
    user: String,
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"))
}

const BUILTIN: [(&str, &str); 9] = [
    ("decide", include_str!("../../templates/decide.txt")),
    ("decide_base", include_str!("../../templates/decide_base.txt")),
    ("decide_recursive", include_str!("../../templates/decide_recursive.txt")),
    ("decide_bounded", include_str!("../../templates/decide_bounded.txt")),
    ("gradient", include_str!("../../templates/gradient.txt")),
    ("integrate", include_str!("../../templates/integrate.txt")),
    ("edit", include_str!("../../templates/edit.txt")),
    ("summarize", include_str!("../../templates/summarize.txt")),
    ("merge", include_str!("../../templates/merge.txt")),
];

impl PromptTemplate {
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, PromptError> {
        let id = id.into();
        let rest = text.trim_start().strip_prefix("[system]").ok_or_else(|| PromptError::Malformed(id.clone()))?;
        let (system, user) = rest.split_once("\n[user]\n").ok_or_else(|| PromptError::Malformed(id.clone()))?;
        Ok(Self { id, system: system.trim().to_string(), user: user.trim_end().to_string() })
    }

    pub fn builtin(name: &str) -> Result<Self, PromptError> {
        let (_, text) = BUILTIN.iter().find(|(n, _)| *n == name).ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
        Self::parse(format!("{name}-v1"), text)
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        placeholder_regex()
            .captures_iter(&self.system)
            .chain(placeholder_regex().captures_iter(&self.user))
            .map(|c| c[1].to_string())
            .collect()
    }

    /// Substitutes in a single pass, so values are never re-expanded.
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<PromptBundle, PromptError> {
        let fill = |part: &str| -> Result<String, PromptError> {
            let mut missing = None;
            let out = placeholder_regex().replace_all(part, |c: &regex::Captures| match vars.get(&c[1]) {
                Some(v) => v.clone(),
                None => {
                    missing.get_or_insert_with(|| c[1].to_string());
                    String::new()
                }
            });
            match missing {
                Some(name) => Err(PromptError::Unbound { template: self.id.clone(), name }),
                None => Ok(out.into_owned()),
            }
        };
        Ok(PromptBundle {
            system_text: fill(&self.system)?,
            user_text: fill(&self.user)?,
            decision_schema: vec!["choice".into(), "reason".into()],
            template_id: self.id.clone(),
            variable_map: vars.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    /// Reply fields the model is asked for; only `choice` is parsed.
    pub decision_schema: Vec<String>,
    pub template_id: String,
    pub variable_map: BTreeMap<String, String>,
}

impl PromptBundle {
    pub fn messages(&self) -> Vec<Message> {
        vec![Message::system(&self.system_text), Message::user(&self.user_text)]
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_text.as_bytes());
        h.update([0u8]);
        h.update(self.user_text.as_bytes());
        hex::encode(h.finalize())
    }
}

/// What the decision prompt says about the day and the two admissible routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionContext {
    pub day: u32,
    pub choice_set: [RouteId; 2],
    pub free_flow: [f64; 2],
}

impl DecisionContext {
    pub fn for_traveler(scenario: &Scenario, traveler: TravelerId, day: u32) -> Result<Self, crate::env::EnvError> {
        let choice_set = scenario.choice_set(traveler)?;
        Ok(Self { day, choice_set, free_flow: choice_set.map(|r| scenario.route(r).t0) })
    }

    pub fn rule_context(&self) -> RuleContext {
        RuleContext { choice_set: self.choice_set, free_flow: self.free_flow }
    }

    pub fn routes_text(&self) -> String {
        routes_text(self.choice_set, self.free_flow)
    }

    pub fn choice_list(&self) -> String {
        format!("{}, {}", self.choice_set[0], self.choice_set[1])
    }

    /// Lower free-flow route; first listed on ties.
    pub fn free_flow_preferred(&self) -> RouteId {
        self.rule_context().free_flow_preferred()
    }
}

pub fn routes_text(choice_set: [RouteId; 2], free_flow: [f64; 2]) -> String {
    format!("{}\n{}", protocol::route_line(choice_set[0], free_flow[0]), protocol::route_line(choice_set[1], free_flow[1]))
}

/// Short windows list trips; long windows add per-route aggregates.
pub fn summarize_window(entries: &[MemoryEntry], with_aggregates: bool) -> String {
    if entries.is_empty() {
        return protocol::NO_TRIPS.to_string();
    }
    let mut out: Vec<String> = entries.iter().map(protocol::trip_line).collect();
    if with_aggregates {
        out.push("Summary:".into());
        for route in RouteId::ALL {
            let times: Vec<f64> = entries.iter().filter(|e| e.action == route).map(|e| round_tenth(e.own_time)).collect();
            if times.is_empty() {
                continue;
            }
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            let min = times.iter().copied().fold(f64::INFINITY, f64::min);
            let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out.push(format!(
                "- {route}: chosen {} times, mean {} min, min {} min, max {} min",
                times.len(),
                protocol::format_minutes(mean),
                protocol::format_minutes(min),
                protocol::format_minutes(max)
            ));
        }
    }
    out.join("\n")
}

/// Decision prompt. Without a persona the base template is used, which has
/// no persona section at all.
pub fn build_prompt(
    persona: Option<&Persona>,
    short_text: &str,
    long_text: &str,
    ctx: &DecisionContext,
) -> Result<PromptBundle, PromptError> {
    let mut vars = BTreeMap::new();
    let template = match persona {
        Some(p) => {
            check_persona_text(&p.text)?;
            vars.insert("persona".to_string(), p.text.clone());
            PromptTemplate::builtin("decide")?
        }
        None => PromptTemplate::builtin("decide_base")?,
    };
    vars.insert("short_memory".into(), short_text.to_string());
    vars.insert("long_memory".into(), long_text.to_string());
    vars.insert("choice_set".into(), ctx.choice_list());
    vars.insert("routes".into(), ctx.routes_text());
    vars.insert("day".into(), ctx.day.to_string());
    template.render(&vars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GroupCounts;

    fn entry(period: u32, action: RouteId, own_time: f64) -> MemoryEntry {
        MemoryEntry { period, action, own_time, group_counts: GroupCounts { expressway: 5, local: 4 } }
    }

    fn g2() -> DecisionContext {
        DecisionContext { day: 9, choice_set: [RouteId::Expressway, RouteId::Local2], free_flow: [5.0, 15.0] }
    }

    #[test]
    fn window_summaries() {
        assert_eq!(summarize_window(&[], false), "No prior trips.");
        let s = summarize_window(&[entry(1, RouteId::Expressway, 5.375)], false);
        assert!(s.contains("expressway") && s.contains("5.4"), "{s}");

        let entries: Vec<_> = (1..=24)
            .map(|p| {
                let r = if p % 3 == 0 { RouteId::Local1 } else { RouteId::Expressway };
                entry(p, r, 10.0 + f64::from(p) * 0.37)
            })
            .collect();
        let s = summarize_window(&entries, true);
        let listed: Vec<f64> =
            protocol::parse_trips(&s).iter().filter(|e| e.action == RouteId::Expressway).map(|e| e.own_time).collect();
        assert_eq!(listed.len(), 16);
        let mean = listed.iter().sum::<f64>() / listed.len() as f64;
        assert!(s.contains(&format!("- expressway: chosen 16 times, mean {:.1} min", round_tenth(mean))), "{s}");
    }

    #[test]
    fn prompt_contents() {
        let p = Persona::new("Prefers the local road; avoids the expressway after any trip over 20 minutes.").unwrap();
        let b = build_prompt(Some(&p), "No prior trips.", "No prior trips.", &g2()).unwrap();
        assert!(b.user_text.contains(&p.text));
        assert!(b.user_text.contains("Admissible answers: expressway, local2."));
        assert!(!b.user_text.contains("local1"));
        assert_eq!(b.template_id, "decide-v1");
        assert_eq!(b, build_prompt(Some(&p), "No prior trips.", "No prior trips.", &g2()).unwrap());

        let base = build_prompt(None, "x", "y", &g2()).unwrap();
        assert!(!base.user_text.contains("### Persona"));
        assert!(!base.system_text.to_lowercase().contains("persona"));
    }

    #[test]
    fn strict_binding() {
        let t = PromptTemplate::parse("t", "[system]\nsys {a}\n[user]\nhello {b} {\"x\": 1}").unwrap();
        assert_eq!(t.placeholders(), ["a", "b"].iter().map(|s| s.to_string()).collect());
        let mut vars = BTreeMap::new();
        vars.insert("a".to_string(), "{b}".to_string());
        assert_eq!(t.render(&vars), Err(PromptError::Unbound { template: "t".into(), name: "b".into() }));
        vars.insert("b".to_string(), "B".to_string());
        let b = t.render(&vars).unwrap();
        assert_eq!(b.system_text, "sys {b}");
        assert_eq!(b.user_text, "hello B {\"x\": 1}");
    }

    #[test]
    fn builtin_templates_parse() {
        for (name, _) in BUILTIN {
            let t = PromptTemplate::builtin(name).unwrap();
            assert!(!t.placeholders().is_empty(), "{name}");
        }
    }

    #[test]
    fn persona_cap() {
        assert!(Persona::new("x".repeat(4000)).is_ok());
        assert_eq!(Persona::new("x".repeat(4001)), Err(PromptError::PersonaTooLong(4001)));
        assert_eq!(Persona::new("  "), Err(PromptError::EmptyPersona));
        let p = Persona::new("a").unwrap().revise("b").unwrap();
        assert_eq!((p.version, p.parent_version), (1, Some(0)));
    }
}
