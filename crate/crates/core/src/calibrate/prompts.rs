use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{CalibrationTask, TextFeedback};
use crate::agent::{summarize_window, Persona, PromptError, PromptTemplate};
use crate::gateway::Message;
use crate::protocol;

fn render(name: &str, vars: &[(&str, String)]) -> Result<Vec<Message>, PromptError> {
    let vars: BTreeMap<String, String> = vars.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    Ok(PromptTemplate::builtin(name)?.render(&vars)?.messages())
}

pub(crate) fn gradient(persona: &Persona, task: &CalibrationTask<'_>, fb: &TextFeedback) -> Result<Vec<Message>, PromptError> {
    let short = task.history.retrieve_short(fb.period, &task.retrieval);
    let long = task.history.retrieve_long(fb.period, &task.retrieval);
    render(
        "gradient",
        &[
            ("persona", persona.text.clone()),
            ("routes", task.routes_text()),
            ("short_memory", summarize_window(short, false)),
            ("long_memory", summarize_window(long, true)),
            ("day", fb.period.to_string()),
            ("simulated", fb.simulated.to_string()),
            ("observed", fb.truth.to_string()),
        ],
    )
}

pub(crate) fn integrate(persona: &Persona, feedbacks: &[TextFeedback], count: usize) -> Result<Vec<Message>, PromptError> {
    let body: Vec<String> = feedbacks
        .iter()
        .filter(|f| !f.critique.is_empty())
        .map(|f| format!("- Day {} (simulated {}, observed {}): {}", f.period, f.simulated, f.truth, f.critique.trim()))
        .collect();
    render("integrate", &[("persona", persona.text.clone()), ("feedback", body.join("\n")), ("count", count.to_string())])
}

pub(crate) fn edit(persona: &Persona, task: &CalibrationTask<'_>, direction: &str) -> Result<Vec<Message>, PromptError> {
    render("edit", &[("persona", persona.text.clone()), ("routes", task.routes_text()), ("direction", direction.to_string())])
}

pub(crate) fn summarize(task: &CalibrationTask<'_>, lo: u32, hi: u32) -> Result<Vec<Message>, PromptError> {
    let entries: Vec<_> = task.history.entries().iter().filter(|e| (lo..=hi).contains(&e.period)).copied().collect();
    let lines: Vec<String> = entries.iter().map(protocol::trip_line).collect();
    let observations = if lines.is_empty() { protocol::NO_TRIPS.to_string() } else { lines.join("\n") };
    render(
        "summarize",
        &[
            ("routes", task.routes_text()),
            ("observations", observations),
            ("short_window", task.retrieval.t_s.to_string()),
            ("long_window", task.retrieval.t_l.to_string()),
        ],
    )
}

pub(crate) fn merge(candidate: &str, baseline: &str, task: &CalibrationTask<'_>) -> Result<Vec<Message>, PromptError> {
    render("merge", &[("candidate", candidate.to_string()), ("baseline", baseline.to_string()), ("routes", task.routes_text())])
}

fn numbered_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)[.)]\s*(.+?)\s*$").expect("valid regex"))
}

/// Numbered lines of an integrator reply, first occurrence of each text kept.
pub fn parse_directions(reply: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in reply.lines() {
        if let Some(c) = numbered_regex().captures(line) {
            let text = c[2].to_string();
            if !out.contains(&text) {
                out.push(text);
            }
        }
    }
    out
}

/// Drops surrounding whitespace and a Markdown code fence, if any.
pub fn clean_persona_reply(reply: &str) -> String {
    let t = reply.trim();
    let t = t.strip_prefix("```").map_or(t, |rest| {
        let rest = rest.split_once('\n').map_or("", |(_, body)| body);
        rest.strip_suffix("```").unwrap_or(rest)
    });
    t.trim().to_string()
}
