//! Text layout shared by the prompt builders and the scripted backend.
//!
//! Prompts are split into `### <Title>` sections. Trips, routes and beliefs
//! are rendered one per line so the scripted backend can read them back.

use std::sync::OnceLock;

use regex::Regex;

use crate::agent::memory::{round_tenth, MemoryEntry};
use crate::env::{GroupCounts, RouteId};

pub const ROUTES: &str = "Routes";
pub const PERSONA: &str = "Persona";
pub const SHORT_MEMORY: &str = "Recent trips";
pub const LONG_MEMORY: &str = "Trip history";
pub const ANSWER: &str = "Answer";
pub const PERCEPTIONS: &str = "Perceived travel times";
pub const LEARNING_STATE: &str = "Learning state";
pub const DECISION_POINT: &str = "Decision point";
pub const FEEDBACK: &str = "Feedback";
pub const DIRECTION: &str = "Update direction";
pub const OBSERVATIONS: &str = "Observations";
pub const CANDIDATE: &str = "Candidate persona";
pub const BASELINE: &str = "Baseline persona";
pub const TASK: &str = "Task";

pub const NO_TRIPS: &str = "No prior trips.";

/// Splits text into `(title, body)` pairs at `### ` headings.
pub fn sections(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(title) = line.strip_prefix("### ") {
            out.push((title.trim().to_string(), String::new()));
        } else if let Some((_, body)) = out.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    for (_, body) in &mut out {
        let trimmed = body.trim().to_string();
        *body = trimmed;
    }
    out
}

pub fn section<'a>(parsed: &'a [(String, String)], title: &str) -> Option<&'a str> {
    parsed.iter().find(|(t, _)| t == title).map(|(_, b)| b.as_str())
}

pub fn format_minutes(x: f64) -> String {
    format!("{:.1}", round_tenth(x))
}

pub fn trip_line(e: &MemoryEntry) -> String {
    format!(
        "- Day {}: took {}, travel time {} min (your group: {} on expressway, {} on local road)",
        e.period,
        e.action,
        format_minutes(e.own_time),
        e.group_counts.expressway,
        e.group_counts.local
    )
}

fn trip_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^- Day (\d+): took (\w+), travel time ([0-9]+(?:\.[0-9]+)?) min \(your group: (\d+) on expressway, (\d+) on local road\)$",
        )
        .expect("valid regex")
    })
}

/// Reads back every trip line in `body`, ignoring other lines.
pub fn parse_trips(body: &str) -> Vec<MemoryEntry> {
    body.lines()
        .filter_map(|l| {
            let c = trip_regex().captures(l.trim())?;
            Some(MemoryEntry {
                period: c[1].parse().ok()?,
                action: c[2].parse().ok()?,
                own_time: c[3].parse().ok()?,
                group_counts: GroupCounts { expressway: c[4].parse().ok()?, local: c[5].parse().ok()? },
            })
        })
        .collect()
}

pub fn route_line(route: RouteId, free_flow: f64) -> String {
    format!("- {route}: free-flow travel time {} min", format_minutes(free_flow))
}

fn route_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^- (\w+): free-flow travel time ([0-9]+(?:\.[0-9]+)?) min$").expect("valid regex"))
}

pub fn parse_routes(body: &str) -> Vec<(RouteId, f64)> {
    body.lines()
        .filter_map(|l| {
            let c = route_regex().captures(l.trim())?;
            Some((c[1].parse().ok()?, c[2].parse().ok()?))
        })
        .collect()
}

pub fn perception_line(route: RouteId, perceived: f64, explored: u32) -> String {
    format!("- {route}: perceived {} min, explored {explored} times", format_minutes(perceived))
}

fn perception_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^- (\w+): perceived ([0-9]+(?:\.[0-9]+)?) min, explored (\d+) times$").expect("valid regex"))
}

/// `(route, perceived minutes, exploration count)` lines.
pub fn parse_perceptions(body: &str) -> Vec<(RouteId, f64, u32)> {
    body.lines()
        .filter_map(|l| {
            let c = perception_regex().captures(l.trim())?;
            Some((c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?))
        })
        .collect()
}

/// `key: value` lines.
pub fn field<'a>(body: &'a str, key: &str) -> Option<&'a str> {
    body.lines().find_map(|l| {
        let (k, v) = l.trim().trim_start_matches("- ").split_once(':')?;
        (k.trim().eq_ignore_ascii_case(key)).then(|| v.trim())
    })
}
