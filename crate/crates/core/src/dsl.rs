//! A one-line rule language for test personas.
//!
//! ```text
//! PREFER <route>|NONE UNLESS <stat>(<window>) > <number> [STAY_BIAS none|weak|strong]
//! ```
//!
//! The statistic is taken over the traveler's own times on the *reference*
//! route (the default route, or yesterday's route when the default is `NONE`)
//! inside the named retrieval window. When it exceeds the threshold the rule
//! picks the other route. Otherwise it returns the default; with no default it
//! repeats yesterday's route when a stay bias is set and falls back to the
//! route with the lower recent mean time when it is not.
//!
//! `STAY_BIAS strong` raises the switching threshold by [`STRONG_BIAS_MARGIN`].

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::memory::{round_tenth, MemoryEntry, MemoryStore, RetrievalConfig};
use crate::env::RouteId;

pub const MAX_THRESHOLD: f64 = 500.0;
pub const STRONG_BIAS_MARGIN: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stat {
    Last,
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WindowKind {
    Long,
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StayBias {
    None,
    Weak,
    Strong,
}

impl StayBias {
    fn margin(self) -> f64 {
        match self {
            StayBias::Strong => STRONG_BIAS_MARGIN,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub stat: Stat,
    pub window: WindowKind,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleAst {
    pub default_route: Option<RouteId>,
    pub condition: Condition,
    pub stay_bias: StayBias,
}

impl RuleAst {
    /// No default, never-firing condition: picks the lower recent mean.
    pub fn neutral() -> Self {
        RuleAst {
            default_route: None,
            condition: Condition { stat: Stat::Mean, window: WindowKind::Short, threshold: MAX_THRESHOLD },
            stay_bias: StayBias::None,
        }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stat::Last => "last",
            Stat::Max => "max",
            Stat::Mean => "mean",
        })
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::Long => "long",
            WindowKind::Short => "short",
        })
    }
}

impl fmt::Display for StayBias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StayBias::None => "none",
            StayBias::Weak => "weak",
            StayBias::Strong => "strong",
        })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UNLESS {}({}) > {}", self.stat, self.window, self.threshold)
    }
}

impl fmt::Display for RuleAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.default_route {
            Some(r) => write!(f, "PREFER {r} ")?,
            None => f.write_str("PREFER NONE ")?,
        }
        write!(f, "{}", self.condition)?;
        if self.stay_bias != StayBias::None {
            write!(f, " STAY_BIAS {}", self.stay_bias)?;
        }
        Ok(())
    }
}

impl FromStr for RuleAst {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, DslError> {
        parse_rule(s)
    }
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    line: usize,
    column: usize,
}

fn tokenize(src: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<Token> = None;
    for (line_idx, line) in src.lines().enumerate() {
        for (col_idx, ch) in line.chars().enumerate() {
            let (line, column) = (line_idx + 1, col_idx + 1);
            if ch.is_whitespace() || matches!(ch, '(' | ')' | '>') {
                if let Some(t) = current.take() {
                    tokens.push(t);
                }
                if !ch.is_whitespace() {
                    tokens.push(Token { text: ch.to_string(), line, column });
                }
            } else {
                current.get_or_insert_with(|| Token { text: String::new(), line, column }).text.push(ch);
            }
        }
        if let Some(t) = current.take() {
            tokens.push(t);
        }
    }
    tokens
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn error(&self, at: Option<&Token>, message: impl Into<String>) -> DslError {
        let (line, column) = at.map_or(self.end, |t| (t.line, t.column));
        DslError::Syntax { line, column, message: message.into() }
    }

    fn next(&mut self, what: &str) -> Result<Token, DslError> {
        let tok = self.tokens.get(self.pos).cloned();
        match tok {
            Some(t) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(self.error(None, format!("expected {what}, found end of input"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), DslError> {
        let t = self.next(kw)?;
        if t.text.eq_ignore_ascii_case(kw) {
            Ok(())
        } else {
            Err(self.error(Some(&t), format!("expected `{kw}`, found `{}`", t.text)))
        }
    }

    fn number(&mut self) -> Result<(f64, Token), DslError> {
        let t = self.next("a number")?;
        match t.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok((v, t)),
            _ => Err(self.error(Some(&t), format!("expected a number, found `{}`", t.text))),
        }
    }
}

/// Parses one rule; keywords and names are case-insensitive.
pub fn parse_rule(src: &str) -> Result<RuleAst, DslError> {
    let tokens = tokenize(src);
    let end = src.lines().enumerate().last().map_or((1, 1), |(i, l)| (i + 1, l.chars().count() + 1));
    let mut p = Parser { tokens, pos: 0, end };

    p.keyword("PREFER")?;
    let t = p.next("a route or NONE")?;
    let default_route = if t.text.eq_ignore_ascii_case("none") {
        None
    } else {
        Some(RouteId::from_str(&t.text).map_err(|_| p.error(Some(&t), format!("unknown route `{}`", t.text)))?)
    };

    p.keyword("UNLESS")?;
    let t = p.next("a statistic")?;
    let stat = match t.text.to_ascii_lowercase().as_str() {
        "mean" => Stat::Mean,
        "max" => Stat::Max,
        "last" => Stat::Last,
        _ => return Err(p.error(Some(&t), format!("unknown statistic `{}` (mean, max, last)", t.text))),
    };
    p.keyword("(")?;
    let t = p.next("a window")?;
    let window = match t.text.to_ascii_lowercase().as_str() {
        "short" => WindowKind::Short,
        "long" => WindowKind::Long,
        // `last 4` / `last 24` name the default window lengths
        "last" => {
            let (n, nt) = p.number()?;
            if n == f64::from(RetrievalConfig::default().t_s) {
                WindowKind::Short
            } else if n == f64::from(RetrievalConfig::default().t_l) {
                WindowKind::Long
            } else {
                return Err(p.error(Some(&nt), format!("no window of length {n}")));
            }
        }
        _ => return Err(p.error(Some(&t), format!("unknown window `{}` (short, long)", t.text))),
    };
    p.keyword(")")?;
    p.keyword(">")?;
    let (threshold, nt) = p.number()?;
    if !(0.0..=MAX_THRESHOLD).contains(&threshold) {
        return Err(p.error(Some(&nt), format!("threshold {threshold} outside [0, {MAX_THRESHOLD}]")));
    }

    let mut stay_bias = StayBias::None;
    if p.pos < p.tokens.len() {
        p.keyword("STAY_BIAS")?;
        let t = p.next("a bias level")?;
        stay_bias = match t.text.to_ascii_lowercase().as_str() {
            "none" => StayBias::None,
            "weak" => StayBias::Weak,
            "strong" => StayBias::Strong,
            _ => return Err(p.error(Some(&t), format!("unknown bias level `{}`", t.text))),
        };
    }
    if let Some(t) = p.tokens.get(p.pos) {
        return Err(p.error(Some(t), format!("unexpected `{}` after rule", t.text)));
    }

    Ok(RuleAst { default_route, condition: Condition { stat, window, threshold }, stay_bias })
}

/// What a rule needs to know about the traveler's choice set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleContext {
    pub choice_set: [RouteId; 2],
    /// Free-flow times aligned with `choice_set`.
    pub free_flow: [f64; 2],
}

impl RuleContext {
    /// Maps a route name onto the choice set; a foreign arterial means "the local road".
    pub fn resolve(&self, route: RouteId) -> RouteId {
        if self.choice_set.contains(&route) {
            route
        } else {
            *self.choice_set.iter().find(|r| r.is_local()).unwrap_or(&self.choice_set[0])
        }
    }

    pub fn alternative(&self, route: RouteId) -> RouteId {
        if route == self.choice_set[0] {
            self.choice_set[1]
        } else {
            self.choice_set[0]
        }
    }

    fn free_flow_of(&self, route: RouteId) -> f64 {
        if route == self.choice_set[0] {
            self.free_flow[0]
        } else {
            self.free_flow[1]
        }
    }

    /// Lower free-flow route, first listed on ties.
    pub fn free_flow_preferred(&self) -> RouteId {
        if self.free_flow[1] < self.free_flow[0] {
            self.choice_set[1]
        } else {
            self.choice_set[0]
        }
    }
}

/// Statistic over the (0.1-min rounded) times experienced on `route`.
pub fn window_stat(stat: Stat, entries: &[MemoryEntry], route: RouteId) -> Option<f64> {
    let mut times = entries.iter().filter(|e| e.action == route).map(|e| round_tenth(e.own_time));
    match stat {
        Stat::Last => times.next_back(),
        Stat::Max => times.reduce(f64::max),
        Stat::Mean => {
            let (sum, n) = times.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            (n > 0).then(|| sum / n as f64)
        }
    }
}

/// Route with the lower mean experienced time, looking at the short window,
/// then the long window, then free-flow time.
pub fn lower_recent_mean(short: &[MemoryEntry], long: &[MemoryEntry], ctx: &RuleContext) -> RouteId {
    let estimate = |r: RouteId| {
        window_stat(Stat::Mean, short, r).or_else(|| window_stat(Stat::Mean, long, r)).unwrap_or_else(|| ctx.free_flow_of(r))
    };
    let [a, b] = ctx.choice_set;
    let (ea, eb) = (estimate(a), estimate(b));
    if ea < eb {
        a
    } else if eb < ea {
        b
    } else {
        ctx.free_flow_preferred()
    }
}

pub fn eval_rule(
    ast: &RuleAst,
    short: &[MemoryEntry],
    long: &[MemoryEntry],
    prev_choice: Option<RouteId>,
    ctx: &RuleContext,
) -> RouteId {
    let prev = prev_choice.filter(|r| ctx.choice_set.contains(r));
    let default = ast.default_route.map(|r| ctx.resolve(r));
    let reference = default.or(prev);
    let window = match ast.condition.window {
        WindowKind::Short => short,
        WindowKind::Long => long,
    };
    if let Some(reference) = reference {
        let limit = ast.condition.threshold + ast.stay_bias.margin();
        if window_stat(ast.condition.stat, window, reference).is_some_and(|s| s > limit) {
            return ctx.alternative(reference);
        }
    }
    match (default, prev) {
        (Some(d), _) => d,
        (None, Some(p)) if ast.stay_bias != StayBias::None => p,
        _ => lower_recent_mean(short, long, ctx),
    }
}

/// Single-field edits understood by the scripted persona editor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Directive {
    /// Signed threshold change in minutes.
    Thresh(f64),
    FlipDefault,
    WindowSwap,
    BiasUp,
    BiasDown,
    NoOp,
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Thresh(d) if *d < 0.0 => write!(f, "THRESH-{}", -d),
            Directive::Thresh(d) => write!(f, "THRESH+{d}"),
            Directive::FlipDefault => f.write_str("FLIP_DEFAULT"),
            Directive::WindowSwap => f.write_str("WINDOW_SWAP"),
            Directive::BiasUp => f.write_str("BIAS_UP"),
            Directive::BiasDown => f.write_str("BIAS_DOWN"),
            Directive::NoOp => f.write_str("NO-OP"),
        }
    }
}

fn directive_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:THRESH\s*([+\-−])\s*(\d+(?:\.\d+)?)|(FLIP_DEFAULT)|(WINDOW_SWAP)|(BIAS_UP)|(BIAS_DOWN)|(NO-OP))")
            .expect("valid regex")
    })
}

impl Directive {
    /// First catalog token appearing anywhere in `text`.
    pub fn find_in(text: &str) -> Option<Directive> {
        let caps = directive_regex().captures(text)?;
        if let (Some(sign), Some(mag)) = (caps.get(1), caps.get(2)) {
            let mag: f64 = mag.as_str().parse().ok()?;
            let delta = if sign.as_str() == "+" { mag } else { -mag };
            return Some(Directive::Thresh(delta));
        }
        [
            (3, Directive::FlipDefault),
            (4, Directive::WindowSwap),
            (5, Directive::BiasUp),
            (6, Directive::BiasDown),
            (7, Directive::NoOp),
        ]
        .into_iter()
        .find_map(|(i, d)| caps.get(i).map(|_| d))
    }
}

impl FromStr for Directive {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, DslError> {
        let trimmed = s.trim();
        match directive_regex().find(trimmed) {
            Some(m) if m.start() == 0 && m.end() == trimmed.len() => Ok(Directive::find_in(trimmed).expect("regex matched")),
            _ => Err(DslError::UnknownDirective(s.to_string())),
        }
    }
}

/// Applies one directive; every other field is preserved.
pub fn mutate_rule(ast: &RuleAst, directive: Directive, choice_set: [RouteId; 2]) -> RuleAst {
    let mut out = *ast;
    match directive {
        Directive::Thresh(delta) => {
            out.condition.threshold = (ast.condition.threshold + delta).clamp(0.0, MAX_THRESHOLD);
        }
        Directive::FlipDefault => {
            let ctx = RuleContext { choice_set, free_flow: [0.0, 0.0] };
            out.default_route = Some(match ast.default_route {
                Some(r) => ctx.alternative(ctx.resolve(r)),
                None => choice_set[0],
            });
        }
        Directive::WindowSwap => {
            out.condition.window = match ast.condition.window {
                WindowKind::Short => WindowKind::Long,
                WindowKind::Long => WindowKind::Short,
            };
        }
        Directive::BiasUp => {
            out.stay_bias = match ast.stay_bias {
                StayBias::None => StayBias::Weak,
                _ => StayBias::Strong,
            };
        }
        Directive::BiasDown => {
            out.stay_bias = match ast.stay_bias {
                StayBias::Strong => StayBias::Weak,
                _ => StayBias::None,
            };
        }
        Directive::NoOp => {}
    }
    out
}

/// Merges a candidate rule with a baseline: candidate structure, averaged
/// threshold on the 1-minute grid (halves round toward the candidate).
pub fn merge_rules(candidate: &RuleAst, baseline: &RuleAst) -> RuleAst {
    let a = candidate.condition.threshold;
    let mid = (a + baseline.condition.threshold) / 2.0;
    let threshold = if (mid - mid.floor() - 0.5).abs() < 1e-9 {
        if a < mid {
            mid.floor()
        } else {
            mid.ceil()
        }
    } else {
        mid.round()
    };
    let mut out = *candidate;
    out.condition.threshold = threshold.clamp(0.0, MAX_THRESHOLD);
    out
}

/// Result of an exhaustive fit over the rule grammar.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleFit {
    pub rule: RuleAst,
    pub loss: usize,
    pub evaluated: usize,
}

/// Finds the rule with the fewest mismatches over `history`, replaying each
/// period with the memories recorded before it. Thresholds range over the
/// integer grid `0..=500`; ties go to the smaller threshold, then to the
/// lexically smaller canonical text.
pub fn best_fit(history: &[MemoryEntry], retrieval: &RetrievalConfig, ctx: &RuleContext) -> RuleFit {
    let store = MemoryStore::from_entries(history.to_vec()).unwrap_or_default();
    let defaults = [None, Some(ctx.choice_set[0]), Some(ctx.choice_set[1])];
    let stats = [Stat::Last, Stat::Max, Stat::Mean];
    let windows = [WindowKind::Long, WindowKind::Short];
    let biases = [StayBias::None, StayBias::Strong, StayBias::Weak];
    let grid_max = MAX_THRESHOLD as usize;

    struct Point {
        stat: Option<f64>,
        fired: RouteId,
        fallback: RouteId,
        truth: RouteId,
    }

    let mut best: Option<(usize, usize, String, RuleAst)> = None;
    let mut evaluated = 0;
    for default in defaults {
        for stat in stats {
            for window in windows {
                for bias in biases {
                    let template = RuleAst {
                        default_route: default,
                        condition: Condition { stat, window, threshold: 0.0 },
                        stay_bias: bias,
                    };
                    let points: Vec<Point> = history
                        .iter()
                        .map(|e| {
                            let short = store.retrieve_short(e.period, retrieval);
                            let long = store.retrieve_long(e.period, retrieval);
                            let prev = store.previous_choice(e.period);
                            let never = RuleAst {
                                condition: Condition { threshold: MAX_THRESHOLD, ..template.condition },
                                stay_bias: if bias == StayBias::Strong { StayBias::Weak } else { bias },
                                ..template
                            };
                            let reference = default.or(prev);
                            let w = if window == WindowKind::Short { short } else { long };
                            Point {
                                stat: reference.and_then(|r| window_stat(stat, w, r)).map(|s| s - bias.margin()),
                                fired: reference.map_or(e.action, |r| ctx.alternative(r)),
                                fallback: eval_rule(&never, short, long, prev, ctx),
                                truth: e.action,
                            }
                        })
                        .collect();
                    for theta in 0..=grid_max {
                        evaluated += 1;
                        let th = theta as f64;
                        let loss = points
                            .iter()
                            .filter(|p| {
                                let pred = if p.stat.is_some_and(|s| s > th) { p.fired } else { p.fallback };
                                pred != p.truth
                            })
                            .count();
                        let better = match &best {
                            None => true,
                            Some((bl, bt, btext, _)) => {
                                (loss, theta) < (*bl, *bt)
                                    || ((loss, theta) == (*bl, *bt) && {
                                        let text =
                                            RuleAst { condition: Condition { threshold: th, ..template.condition }, ..template }
                                                .to_string();
                                        text < *btext
                                    })
                            }
                        };
                        if better {
                            let rule = RuleAst { condition: Condition { threshold: th, ..template.condition }, ..template };
                            best = Some((loss, theta, rule.to_string(), rule));
                        }
                    }
                }
            }
        }
    }
    let (loss, _, _, rule) = best.expect("rule space is non-empty");
    RuleFit { rule, loss, evaluated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GroupCounts;
    use proptest::prelude::*;

    const G1: [RouteId; 2] = [RouteId::Expressway, RouteId::Local1];

    fn ctx() -> RuleContext {
        RuleContext { choice_set: G1, free_flow: [5.0, 15.0] }
    }

    fn entry(period: u32, action: RouteId, time: f64) -> MemoryEntry {
        MemoryEntry { period, action, own_time: time, group_counts: GroupCounts::default() }
    }

    #[test]
    fn parses_examples() {
        let r = parse_rule("PREFER expressway UNLESS mean(short) > 20").unwrap();
        assert_eq!(r.default_route, Some(RouteId::Expressway));
        assert_eq!(r.condition, Condition { stat: Stat::Mean, window: WindowKind::Short, threshold: 20.0 });
        assert_eq!(r.stay_bias, StayBias::None);

        let r = parse_rule("PREFER NONE UNLESS last(short) > 30 STAY_BIAS strong").unwrap();
        assert_eq!(r.default_route, None);
        assert_eq!(r.stay_bias, StayBias::Strong);

        let r = parse_rule("prefer LOCAL1 unless MAX( long )>12.5 stay_bias weak").unwrap();
        assert_eq!(r.to_string(), "PREFER local1 UNLESS max(long) > 12.5 STAY_BIAS weak");

        let r = parse_rule("PREFER expressway UNLESS mean(last 4) > 20").unwrap();
        assert_eq!(r.condition.window, WindowKind::Short);
    }

    #[test]
    fn parse_errors_have_positions() {
        let e = parse_rule("PREFER motorway UNLESS mean(short) > 20").unwrap_err();
        assert_eq!(e, DslError::Syntax { line: 1, column: 8, message: "unknown route `motorway`".into() });
        let e = parse_rule("PREFER expressway\nUNLESS median(short) > 20").unwrap_err();
        assert!(matches!(e, DslError::Syntax { line: 2, column: 8, .. }), "{e}");
        let e = parse_rule("PREFER expressway UNLESS mean(short) > 900").unwrap_err();
        assert!(e.to_string().contains("outside"));
        assert!(parse_rule("PREFER expressway UNLESS mean(short) >").is_err());
        assert!(parse_rule("PREFER expressway UNLESS mean(short) > 5 extra").is_err());
        assert!(parse_rule("").is_err());
    }

    #[test]
    fn eval_examples() {
        let r = parse_rule("PREFER expressway UNLESS mean(short) > 20").unwrap();
        let short = [
            entry(6, RouteId::Expressway, 25.0),
            entry(7, RouteId::Expressway, 25.0),
            entry(8, RouteId::Expressway, 25.0),
            entry(9, RouteId::Expressway, 25.0),
        ];
        assert_eq!(eval_rule(&r, &short, &short, Some(RouteId::Expressway), &ctx()), RouteId::Local1);
        assert_eq!(eval_rule(&r, &[], &[], None, &ctx()), RouteId::Expressway);

        let r = parse_rule("PREFER NONE UNLESS mean(short) > 20 STAY_BIAS strong").unwrap();
        let short = [entry(1, RouteId::Local1, 16.0)];
        assert_eq!(eval_rule(&r, &short, &short, Some(RouteId::Local1), &ctx()), RouteId::Local1);
    }

    #[test]
    fn neutral_rule_picks_lower_recent_mean() {
        let r = RuleAst::neutral();
        let short = [entry(1, RouteId::Expressway, 30.0), entry(2, RouteId::Local1, 16.0)];
        assert_eq!(eval_rule(&r, &short, &short, Some(RouteId::Local1), &ctx()), RouteId::Local1);
        // unseen local road is estimated at free flow
        let short = [entry(1, RouteId::Expressway, 14.0)];
        assert_eq!(eval_rule(&r, &short, &short, Some(RouteId::Expressway), &ctx()), RouteId::Expressway);
        assert_eq!(eval_rule(&r, &[], &[], None, &ctx()), RouteId::Expressway);
    }

    #[test]
    fn foreign_local_resolves_to_own_local() {
        let r = parse_rule("PREFER local1 UNLESS mean(short) > 20").unwrap();
        let g2 = RuleContext { choice_set: [RouteId::Expressway, RouteId::Local2], free_flow: [5.0, 15.0] };
        assert_eq!(eval_rule(&r, &[], &[], None, &g2), RouteId::Local2);
    }

    #[test]
    fn mutations() {
        let r = parse_rule("PREFER expressway UNLESS mean(short) > 20").unwrap();
        assert_eq!(mutate_rule(&r, "THRESH+2".parse().unwrap(), G1).condition.threshold, 22.0);
        assert_eq!(mutate_rule(&r, "THRESH−5".parse().unwrap(), G1).condition.threshold, 15.0);
        assert_eq!(mutate_rule(&r, Directive::NoOp, G1), r);
        assert_eq!(mutate_rule(&r, Directive::FlipDefault, G1).default_route, Some(RouteId::Local1));
        assert_eq!(mutate_rule(&r, Directive::WindowSwap, G1).condition.window, WindowKind::Long);
        assert_eq!(mutate_rule(&r, Directive::BiasUp, G1).stay_bias, StayBias::Weak);
        assert_eq!(mutate_rule(&r, Directive::Thresh(-100.0), G1).condition.threshold, 0.0);
        assert!("SHRINK".parse::<Directive>().is_err());
        assert_eq!(
            Directive::find_in("INCREASE switch-threshold sensitivity. Suggested edit: THRESH-3"),
            Some(Directive::Thresh(-3.0))
        );
    }

    #[test]
    fn merge_averages_threshold() {
        let a = parse_rule("PREFER expressway UNLESS mean(short) > 20").unwrap();
        let b = parse_rule("PREFER NONE UNLESS max(long) > 24 STAY_BIAS weak").unwrap();
        let m = merge_rules(&a, &b);
        assert_eq!(m.to_string(), "PREFER expressway UNLESS mean(short) > 22");
        let b = parse_rule("PREFER NONE UNLESS max(long) > 23").unwrap();
        assert_eq!(merge_rules(&a, &b).condition.threshold, 21.0);
    }

    #[test]
    fn best_fit_recovers_consistent_rule() {
        let truth = parse_rule("PREFER NONE UNLESS last(short) > 20 STAY_BIAS weak").unwrap();
        // alternate experienced times so the rule switches now and then
        let times = [17.0, 25.0, 18.0, 16.0, 40.0, 15.5, 19.0, 21.0, 16.0, 16.0];
        let mut store = MemoryStore::new();
        let cfg = RetrievalConfig::default();
        for (i, t) in times.iter().enumerate() {
            let p = i as u32 + 1;
            let a =
                eval_rule(&truth, store.retrieve_short(p, &cfg), store.retrieve_long(p, &cfg), store.previous_choice(p), &ctx());
            store
                .perceive(
                    a,
                    &crate::env::Observation { period: p, own_route: a, own_time: *t, group_counts: GroupCounts::default() },
                )
                .unwrap();
        }
        let fit = best_fit(store.entries(), &cfg, &ctx());
        assert_eq!(fit.loss, 0);
        assert_eq!(fit.evaluated, 54 * 501);
    }

    fn arb_rule() -> impl Strategy<Value = RuleAst> {
        (
            prop_oneof![Just(None), Just(Some(RouteId::Expressway)), Just(Some(RouteId::Local1)), Just(Some(RouteId::Local2))],
            prop_oneof![Just(Stat::Mean), Just(Stat::Max), Just(Stat::Last)],
            prop_oneof![Just(WindowKind::Short), Just(WindowKind::Long)],
            0u32..=5000,
            prop_oneof![Just(StayBias::None), Just(StayBias::Weak), Just(StayBias::Strong)],
        )
            .prop_map(|(default_route, stat, window, th, stay_bias)| RuleAst {
                default_route,
                condition: Condition { stat, window, threshold: th as f64 / 10.0 },
                stay_bias,
            })
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip(rule in arb_rule()) {
            prop_assert_eq!(parse_rule(&rule.to_string()).unwrap(), rule);
        }

        #[test]
        fn eval_stays_in_choice_set(
            rule in arb_rule(),
            trips in proptest::collection::vec((any::<bool>(), 5.0f64..250.0), 0..30),
            prev in prop_oneof![Just(None), Just(Some(RouteId::Expressway)), Just(Some(RouteId::Local1)), Just(Some(RouteId::Local2))],
        ) {
            let entries: Vec<_> = trips.iter().enumerate()
                .map(|(i, (e, t))| entry(i as u32 + 1, if *e { RouteId::Expressway } else { RouteId::Local1 }, *t))
                .collect();
            let short = &entries[entries.len().saturating_sub(4)..];
            let r = eval_rule(&rule, short, &entries, prev, &ctx());
            prop_assert!(G1.contains(&r));
        }
    }
}
