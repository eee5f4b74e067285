//! Deterministic stand-in for a chat model.
//!
//! Every role reads the `### ` sections of the user message and answers with
//! rule-language semantics: the decider evaluates the persona rule, the
//! analyst names a catalog edit for each mismatch, the integrator ranks those
//! edits, the editor applies one, the summarizer fits the best rule to the
//! data window, and the merger averages thresholds.

use super::{Backend, GatewayError, Role, RoleRequest};
use crate::agent::memory::{MemoryEntry, RetrievalConfig};
use crate::dsl::{self, Directive, RuleAst, RuleContext, StayBias, WindowKind};
use crate::env::RouteId;
use crate::protocol::{self, section};

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    seed: u64,
}

type Sections = Vec<(String, String)>;

fn fail(msg: impl Into<String>) -> GatewayError {
    GatewayError::Scripted(msg.into())
}

fn need<'a>(s: &'a Sections, title: &str) -> Result<&'a str, GatewayError> {
    section(s, title).ok_or_else(|| fail(format!("prompt has no `{title}` section")))
}

fn rule_in(s: &Sections, title: &str) -> Result<RuleAst, GatewayError> {
    let text = need(s, title)?;
    dsl::parse_rule(text).map_err(|e| fail(format!("{title} is not a rule: {e}")))
}

fn rule_context(s: &Sections) -> Result<RuleContext, GatewayError> {
    match protocol::parse_routes(need(s, protocol::ROUTES)?).as_slice() {
        [(a, fa), (b, fb)] => Ok(RuleContext { choice_set: [*a, *b], free_flow: [*fa, *fb] }),
        other => Err(fail(format!("expected two routes, found {}", other.len()))),
    }
}

fn trips(s: &Sections, title: &str) -> Vec<MemoryEntry> {
    section(s, title).map(protocol::parse_trips).unwrap_or_default()
}

fn choice_reply(choice: RouteId, reason: &str) -> String {
    serde_json::json!({ "choice": choice, "reason": reason }).to_string()
}

fn leading_number(s: &str) -> Option<f64> {
    s.split_whitespace().next()?.parse().ok()
}

impl ScriptedBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn decide(&self, s: &Sections) -> Result<String, GatewayError> {
        let ctx = rule_context(s)?;
        if let Some(body) = section(s, protocol::PERCEPTIONS) {
            return decide_perceived(body, &ctx);
        }
        if let Some(body) = section(s, protocol::LEARNING_STATE) {
            return decide_bounded(body, &ctx);
        }
        let rule = match section(s, protocol::PERSONA) {
            Some(_) => rule_in(s, protocol::PERSONA)?,
            None => RuleAst::neutral(),
        };
        let short = trips(s, protocol::SHORT_MEMORY);
        let long = trips(s, protocol::LONG_MEMORY);
        let prev = long.iter().chain(&short).max_by_key(|e| e.period).map(|e| e.action);
        let choice = dsl::eval_rule(&rule, &short, &long, prev, &ctx);
        Ok(choice_reply(choice, &format!("Following: {rule}")))
    }

    fn gradient(&self, s: &Sections) -> Result<String, GatewayError> {
        let point = need(s, protocol::DECISION_POINT)?;
        let get = |k: &str| -> Result<RouteId, GatewayError> {
            protocol::field(point, k).and_then(|v| v.parse().ok()).ok_or_else(|| fail(format!("decision point lacks `{k}`")))
        };
        let (simulated, observed) = (get("Simulated choice")?, get("Observed choice")?);
        if simulated == observed {
            return Ok(String::new());
        }
        let day = protocol::field(point, "Day").unwrap_or("?");
        let persona_text = need(s, protocol::PERSONA)?;
        let rule = rule_in(s, protocol::PERSONA)?;
        let ctx = rule_context(s)?;
        let short = trips(s, protocol::SHORT_MEMORY);
        let long = trips(s, protocol::LONG_MEMORY);
        let prev = long.iter().chain(&short).max_by_key(|e| e.period).map(|e| e.action);
        Ok(critique(&rule, persona_text, &ctx, &short, &long, prev, simulated, observed, day))
    }

    fn integrate(&self, s: &Sections) -> Result<String, GatewayError> {
        let feedback = need(s, protocol::FEEDBACK)?;
        let count = section(s, protocol::TASK)
            .and_then(|t| protocol::field(t, "Directions requested"))
            .and_then(leading_number)
            .ok_or_else(|| fail("task does not say how many directions"))? as usize;
        let suggested: Vec<Directive> = feedback.split("Suggested edit:").skip(1).filter_map(Directive::find_in).collect();
        Ok(rank_directions(&suggested, count)
            .iter()
            .enumerate()
            .map(|(i, d)| format!("{}. {d}: {}", i + 1, describe(*d)))
            .collect::<Vec<_>>()
            .join("\n"))
    }

    fn edit(&self, s: &Sections) -> Result<String, GatewayError> {
        let rule = rule_in(s, protocol::PERSONA)?;
        let ctx = rule_context(s)?;
        let direction = need(s, protocol::DIRECTION)?;
        let d = Directive::find_in(direction).ok_or_else(|| fail(format!("no edit token in `{direction}`")))?;
        Ok(dsl::mutate_rule(&rule, d, ctx.choice_set).to_string())
    }

    fn summarize(&self, s: &Sections) -> Result<String, GatewayError> {
        let ctx = rule_context(s)?;
        let history = trips(s, protocol::OBSERVATIONS);
        if history.is_empty() {
            return Ok(RuleAst::neutral().to_string());
        }
        let task = section(s, protocol::TASK).unwrap_or("");
        let mut retrieval = RetrievalConfig::default();
        if let Some(n) = protocol::field(task, "Short memory window").and_then(leading_number) {
            retrieval.t_s = n as u32;
        }
        if let Some(n) = protocol::field(task, "Long memory window").and_then(leading_number) {
            retrieval.t_l = n as u32;
        }
        Ok(dsl::best_fit(&history, &retrieval, &ctx).rule.to_string())
    }

    fn merge(&self, s: &Sections) -> Result<String, GatewayError> {
        let candidate = rule_in(s, protocol::CANDIDATE)?;
        let baseline = rule_in(s, protocol::BASELINE)?;
        Ok(dsl::merge_rules(&candidate, &baseline).to_string())
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &RoleRequest) -> Result<String, GatewayError> {
        // the first user message carries the task; corrective follow-ups are ignored
        let user = request
            .messages
            .iter()
            .find(|m| m.speaker == super::Speaker::User)
            .ok_or_else(|| fail("request has no user message"))?;
        let s = protocol::sections(&user.text);
        match request.role {
            Role::Decide => self.decide(&s),
            Role::Gradient => self.gradient(&s),
            Role::Integrate => self.integrate(&s),
            Role::Edit => self.edit(&s),
            Role::Summarize => self.summarize(&s),
            Role::Merge => self.merge(&s),
        }
    }
}

fn decide_perceived(body: &str, ctx: &RuleContext) -> Result<String, GatewayError> {
    let rows = protocol::parse_perceptions(body);
    let find = |r: RouteId| rows.iter().find(|(id, _, _)| *id == r).copied();
    let [a, b] = ctx.choice_set;
    let (Some((_, ta, na)), Some((_, tb, nb))) = (find(a), find(b)) else {
        return Err(fail("perceptions do not cover both routes"));
    };
    let choice = if ta != tb {
        if ta < tb {
            a
        } else {
            b
        }
    } else if na != nb {
        if na > nb {
            a
        } else {
            b
        }
    } else {
        ctx.free_flow_preferred()
    };
    Ok(choice_reply(choice, "Lowest perceived travel time."))
}

fn decide_bounded(body: &str, ctx: &RuleContext) -> Result<String, GatewayError> {
    let mode = protocol::field(body, "Mode").ok_or_else(|| fail("learning state has no mode"))?;
    let prev = protocol::field(body, "Previous choice").and_then(|v| v.parse::<RouteId>().ok());
    if mode.eq_ignore_ascii_case("habit") {
        if let Some(p) = prev.filter(|p| ctx.choice_set.contains(p)) {
            return Ok(choice_reply(p, "Habit: same route as yesterday."));
        }
    }
    let draw = protocol::field(body, "Draw").and_then(leading_number).ok_or_else(|| fail("learning state has no draw"))?;
    let mut cumulative = 0.0;
    for r in ctx.choice_set {
        let p = protocol::field(body, &format!("Probability {r}"))
            .and_then(leading_number)
            .ok_or_else(|| fail(format!("learning state has no probability for {r}")))?;
        cumulative += p;
        if draw < cumulative {
            return Ok(choice_reply(r, "Deliberate choice."));
        }
    }
    Ok(choice_reply(ctx.choice_set[1], "Deliberate choice."))
}

#[allow(clippy::too_many_arguments)]
fn critique(
    rule: &RuleAst,
    persona_text: &str,
    ctx: &RuleContext,
    short: &[MemoryEntry],
    long: &[MemoryEntry],
    prev: Option<RouteId>,
    simulated: RouteId,
    observed: RouteId,
    day: &str,
) -> String {
    let quote = |clause: String| if persona_text.contains(&clause) { clause } else { persona_text.to_string() };
    let condition = quote(rule.condition.to_string());
    let prefer = quote(match rule.default_route {
        Some(r) => format!("PREFER {r}"),
        None => "PREFER NONE".to_string(),
    });
    let default = rule.default_route.map(|r| ctx.resolve(r));
    let reference = default.or(prev.filter(|p| ctx.choice_set.contains(p)));
    let (window, other) = match rule.condition.window {
        WindowKind::Short => (short, long),
        WindowKind::Long => (long, short),
    };
    let limit = rule.condition.threshold + if rule.stay_bias == StayBias::Strong { dsl::STRONG_BIAS_MARGIN } else { 0.0 };
    let stat = reference.and_then(|r| dsl::window_stat(rule.condition.stat, window, r));
    let head = format!("Mismatch on day {day}: the persona clause");
    let tail = format!("produced {simulated} but the traveler chose {observed}");

    let Some(reference) = reference else {
        return format!(
            "{head} \"{prefer}\" {tail} with no earlier trip to go on. REVISE the default route. Suggested edit: {}",
            Directive::FlipDefault
        );
    };
    let stat_note = |s: f64| {
        format!("{} on {reference} was {} min against a threshold of {limit}", rule.condition.stat, protocol::format_minutes(s))
    };

    if let Some(s) = stat.filter(|s| *s > limit) {
        // the condition fired and moved the traveler off a route they kept
        let d = (s - limit).ceil().max(1.0);
        return format!(
            "{head} \"{condition}\" {tail} ({}). DECREASE switch-threshold sensitivity. Suggested edit: {}",
            stat_note(s),
            Directive::Thresh(d)
        );
    }
    let rule_stayed = default.is_some() || rule.stay_bias != StayBias::None;
    if !rule_stayed && Some(observed) == prev {
        return format!(
            "{head} \"{prefer}\" {tail}, repeating yesterday's route instead of chasing the faster-looking one. STRENGTHEN the habit of staying. Suggested edit: {}",
            Directive::BiasUp
        );
    }
    if observed == ctx.alternative(reference) {
        return match stat {
            Some(s) => {
                let d = (limit - s).floor() + 1.0;
                format!(
                    "{head} \"{condition}\" {tail} ({}). INCREASE switch-threshold sensitivity. Suggested edit: {}",
                    stat_note(s),
                    Directive::Thresh(-d)
                )
            }
            None if dsl::window_stat(rule.condition.stat, other, reference).is_some() => format!(
                "{head} \"{condition}\" {tail}; the {} window holds no trips on {reference}. CHANGE the memory window. Suggested edit: {}",
                rule.condition.window,
                Directive::WindowSwap
            ),
            None => format!(
                "{head} \"{prefer}\" {tail}. REVISE the default route. Suggested edit: {}",
                Directive::FlipDefault
            ),
        };
    }
    format!("{head} \"{prefer}\" {tail}. REVISE the default route. Suggested edit: {}", Directive::FlipDefault)
}

fn describe(d: Directive) -> String {
    match d {
        Directive::Thresh(x) if x < 0.0 => {
            format!("lower the switching threshold by {} min so the traveler leaves a slow route sooner", -x)
        }
        Directive::Thresh(x) => format!("raise the switching threshold by {x} min so the traveler switches less readily"),
        Directive::FlipDefault => "make the other route the default".into(),
        Directive::WindowSwap => "judge travel times over the other memory window".into(),
        Directive::BiasUp => "strengthen the tendency to repeat yesterday's route".into(),
        Directive::BiasDown => "weaken the tendency to repeat yesterday's route".into(),
        Directive::NoOp => "keep the persona as it is".into(),
    }
}

fn lower_median(mut v: Vec<f64>) -> Option<f64> {
    v.sort_by(f64::total_cmp);
    v.get(v.len().saturating_sub(1) / 2).copied()
}

/// Orders suggested edits into `count` distinct directions: consensus
/// threshold move, most common structural edit, an alternative threshold
/// move, then catalog fillers.
pub fn rank_directions(suggested: &[Directive], count: usize) -> Vec<Directive> {
    let ups: Vec<f64> = suggested.iter().filter(|d| matches!(d, Directive::Thresh(x) if *x > 0.0)).map(thresh).collect();
    let downs: Vec<f64> =
        suggested.iter().filter(|d| matches!(d, Directive::Thresh(x) if *x < 0.0)).map(|d| -thresh(d)).collect();
    let last_sign = suggested.iter().rev().find_map(|d| match d {
        Directive::Thresh(x) if *x != 0.0 => Some(x.signum()),
        _ => None,
    });
    let up_majority = ups.len() > downs.len() || (ups.len() == downs.len() && last_sign == Some(1.0));
    let (major, minor, sign) = if up_majority { (&ups, &downs, 1.0) } else { (&downs, &ups, -1.0) };

    let mut out: Vec<Directive> = Vec::new();
    let push = |d: Directive, out: &mut Vec<Directive>| {
        if out.len() < count && !out.contains(&d) {
            out.push(d);
        }
    };

    let consensus = lower_median(major.clone());
    if let Some(m) = consensus {
        push(Directive::Thresh(sign * m), &mut out);
    }

    // first-appearance order, so max_by_key's last-wins tie rule is undone by rev()
    let mut tally: Vec<(Directive, usize)> = Vec::new();
    for d in suggested.iter().filter(|d| !matches!(d, Directive::Thresh(_) | Directive::NoOp)) {
        match tally.iter_mut().find(|(t, _)| t == d) {
            Some((_, n)) => *n += 1,
            None => tally.push((*d, 1)),
        }
    }
    let structural = tally.iter().rev().max_by_key(|(_, n)| *n).map_or(Directive::FlipDefault, |(d, _)| *d);
    push(structural, &mut out);

    let biggest = major.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    match (consensus, biggest) {
        (Some(c), Some(b)) if b != c => push(Directive::Thresh(sign * b), &mut out),
        _ => match lower_median(minor.clone()) {
            Some(m) => push(Directive::Thresh(-sign * m), &mut out),
            None => push(Directive::WindowSwap, &mut out),
        },
    }

    let catalog = [Directive::FlipDefault, Directive::WindowSwap, Directive::BiasUp, Directive::BiasDown];
    for d in catalog {
        push(d, &mut out);
    }
    let mut k = 1.0;
    while out.len() < count {
        push(Directive::Thresh(-k), &mut out);
        push(Directive::Thresh(k), &mut out);
        k += 1.0;
    }
    out
}

fn thresh(d: &Directive) -> f64 {
    match d {
        Directive::Thresh(x) => *x,
        _ => 0.0,
    }
}
