//! Synthetic human cohorts for tests without the recorded dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::{HumanTrace, TraceError};
use crate::agent::{DecisionContext, MemoryStore, RetrievalConfig};
use crate::dsl::{eval_rule, parse_rule, RuleAst};
use crate::env::{RouteId, Scenario, SystemState, TravelerId};
use crate::rng;

/// Corners of the (switch after loss, stay after win) plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Naive,
    Strategic,
    Exploratory,
    StatusQuo,
}

impl Archetype {
    /// `[P(switch | loss), P(stay | win)]`.
    pub fn corner(self) -> [f64; 2] {
        match self {
            Archetype::Naive => [1.0, 1.0],
            Archetype::Strategic => [0.0, 0.0],
            Archetype::Exploratory => [1.0, 0.0],
            Archetype::StatusQuo => [0.0, 1.0],
        }
    }

    fn switches(self, lost: bool) -> bool {
        let [switch_after_loss, stay_after_win] = self.corner();
        if lost {
            switch_after_loss == 1.0
        } else {
            stay_after_win == 0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Reacts to yesterday's outcome with full knowledge of both routes' times.
    Archetype(Archetype),
    /// Follows a rule over its own remembered trips.
    Rule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSwitch {
    /// First period governed by `behavior`.
    pub period: u32,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTraveler {
    pub id: TravelerId,
    pub behavior: Behavior,
    #[serde(default)]
    pub regime_switch: Option<RegimeSwitch>,
    /// Chance of flipping the intended choice each period.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub initial_route: Option<RouteId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortSpec {
    #[serde(default)]
    pub seed: u64,
    pub periods: u32,
    /// Travelers not listed below.
    #[serde(default = "default_filler")]
    pub filler: Behavior,
    pub travelers: Vec<SyntheticTraveler>,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
}

fn default_filler() -> Behavior {
    Behavior::Archetype(Archetype::StatusQuo)
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    Spec(String),
    #[error("cannot read cohort spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse cohort spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl SyntheticCohortSpec {
    pub fn from_json_file(path: &Path) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.periods == 0 {
            return bad("periods must be positive".into());
        }
        let mut seen = BTreeSet::new();
        check_behavior(&self.filler)?;
        for t in &self.travelers {
            if scenario.group_of(t.id).is_err() {
                return bad(format!("traveler {} is not in the scenario", t.id));
            }
            if !seen.insert(t.id) {
                return bad(format!("traveler {} listed twice", t.id));
            }
            if !(0.0..=1.0).contains(&t.noise) {
                return bad(format!("traveler {}: noise {} outside [0, 1]", t.id, t.noise));
            }
            if let Some(r) = t.initial_route {
                if !scenario.choice_set(t.id).expect("checked").contains(&r) {
                    return bad(format!("traveler {}: initial route {r} outside its choice set", t.id));
                }
            }
            check_behavior(&t.behavior)?;
            if let Some(s) = &t.regime_switch {
                if s.period < 2 || s.period > self.periods {
                    return bad(format!("traveler {}: regime switch at {} outside 2..={}", t.id, s.period, self.periods));
                }
                check_behavior(&s.behavior)?;
            }
        }
        Ok(())
    }
}

fn check_behavior(b: &Behavior) -> Result<(), SynthError> {
    if let Behavior::Rule(src) = b {
        parse_rule(src).map_err(|e| SynthError::Spec(format!("rule `{src}`: {e}")))?;
    }
    Ok(())
}

enum Policy {
    Archetype(Archetype),
    Rule(RuleAst),
}

impl Policy {
    fn new(b: &Behavior) -> Self {
        match b {
            Behavior::Archetype(a) => Policy::Archetype(*a),
            Behavior::Rule(src) => Policy::Rule(parse_rule(src).expect("validated")),
        }
    }
}

struct Human {
    id: TravelerId,
    first: Policy,
    second: Option<(u32, Policy)>,
    noise: f64,
    initial: Option<RouteId>,
    memory: MemoryStore,
}

impl Human {
    fn choose(&self, t: u32, scenario: &Scenario, prev_state: Option<&SystemState>, spec: &SyntheticCohortSpec) -> RouteId {
        let ctx = DecisionContext::for_traveler(scenario, self.id, t).expect("validated");
        let prev = self.memory.previous_choice(t);
        let policy = match &self.second {
            Some((p, policy)) if t >= *p => policy,
            _ => &self.first,
        };
        let intended = match (t, self.initial) {
            (1, Some(r)) => r,
            _ => match (policy, prev, prev_state) {
                (Policy::Rule(ast), _, _) => {
                    let short = self.memory.retrieve_short(t, &spec.retrieval);
                    let long = self.memory.retrieve_long(t, &spec.retrieval);
                    eval_rule(ast, short, long, prev, &ctx.rule_context())
                }
                (Policy::Archetype(a), Some(p), Some(s)) => {
                    let alt = scenario.alternative(self.id, p).expect("validated");
                    let lost = s.time_by_route[p] > s.time_by_route[alt];
                    if a.switches(lost) {
                        alt
                    } else {
                        p
                    }
                }
                (Policy::Archetype(_), _, _) => {
                    let coin: bool = rng::stream(spec.seed, "initial", self.id, t).gen();
                    ctx.choice_set[usize::from(coin)]
                }
            },
        };
        if self.noise > 0.0 && rng::stream(spec.seed, "noise", self.id, t).gen::<f64>() < self.noise {
            scenario.alternative(self.id, intended).expect("validated")
        } else {
            intended
        }
    }
}

/// Runs the cohort through the environment and records it as a trace.
pub fn generate_synthetic_cohort(spec: &SyntheticCohortSpec, scenario: &Scenario) -> Result<HumanTrace, SynthError> {
    spec.validate(scenario)?;
    let listed: BTreeMap<TravelerId, &SyntheticTraveler> = spec.travelers.iter().map(|t| (t.id, t)).collect();
    let mut humans: Vec<Human> = scenario
        .travelers()
        .map(|id| match listed.get(&id) {
            Some(t) => Human {
                id,
                first: Policy::new(&t.behavior),
                second: t.regime_switch.as_ref().map(|s| (s.period, Policy::new(&s.behavior))),
                noise: t.noise,
                initial: t.initial_route,
                memory: MemoryStore::new(),
            },
            None => Human {
                id,
                first: Policy::new(&spec.filler),
                second: None,
                noise: 0.0,
                initial: None,
                memory: MemoryStore::new(),
            },
        })
        .collect();

    let mut all_choices = Vec::with_capacity(spec.periods as usize);
    let mut state: Option<SystemState> = None;
    for t in 1..=spec.periods {
        let choices: BTreeMap<TravelerId, RouteId> =
            humans.iter().map(|h| (h.id, h.choose(t, scenario, state.as_ref(), spec))).collect();
        let next = scenario.update_state(&choices, state.as_ref()).expect("choices within choice sets");
        for h in &mut humans {
            let route = choices[&h.id];
            let obs = scenario.observe(&next, h.id, route).expect("validated");
            h.memory.perceive(route, &obs).expect("periods increase");
        }
        all_choices.push(choices);
        state = Some(next);
    }
    Ok(HumanTrace::from_choices(scenario.clone(), all_choices)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::behavior_vector;

    fn spec(travelers: Vec<SyntheticTraveler>, filler: Behavior, periods: u32) -> SyntheticCohortSpec {
        SyntheticCohortSpec { seed: 3, periods, filler, travelers, retrieval: RetrievalConfig::default() }
    }

    fn plain(id: TravelerId, behavior: Behavior) -> SyntheticTraveler {
        SyntheticTraveler { id, behavior, regime_switch: None, noise: 0.0, initial_route: None }
    }

    #[test]
    fn status_quo_cohort_is_frozen() {
        let trace = generate_synthetic_cohort(&spec(vec![], Behavior::Archetype(Archetype::StatusQuo), 30), &Scenario::default())
            .unwrap();
        let flows = trace.flows(1, 30);
        assert!(flows.windows(2).all(|w| w[0].volumes == w[1].volumes));
    }

    #[test]
    fn archetypes_land_on_their_corners() {
        let s = Scenario::default();
        let travelers = vec![
            plain(1, Behavior::Archetype(Archetype::Naive)),
            plain(2, Behavior::Archetype(Archetype::Exploratory)),
            plain(10, Behavior::Archetype(Archetype::Strategic)),
        ];
        let trace =
            generate_synthetic_cohort(&spec(travelers, Behavior::Rule("PREFER NONE UNLESS mean(short) > 25".into()), 160), &s)
                .unwrap();
        for (id, a) in [(1, Archetype::Naive), (2, Archetype::Exploratory), (10, Archetype::Strategic)] {
            let v = behavior_vector(&trace.day_outcomes(id, 1, 160));
            let corner = a.corner();
            for (got, want) in [v.c_minus, v.s_minus].into_iter().zip(corner) {
                if let Some(g) = got {
                    assert!((g - want).abs() <= 0.05, "traveler {id}: {g} vs {want}");
                }
            }
        }
    }

    #[test]
    fn regime_switch_changes_behavior() {
        let t = SyntheticTraveler {
            regime_switch: Some(RegimeSwitch { period: 80, behavior: Behavior::Archetype(Archetype::StatusQuo) }),
            ..plain(3, Behavior::Archetype(Archetype::Exploratory))
        };
        let trace =
            generate_synthetic_cohort(&spec(vec![t], Behavior::Archetype(Archetype::Naive), 160), &Scenario::default()).unwrap();
        let first = behavior_vector(&trace.day_outcomes(3, 1, 79));
        let second = behavior_vector(&trace.day_outcomes(3, 81, 160));
        assert_ne!(first, second);
    }

    #[test]
    fn noise_is_seeded() {
        let t = SyntheticTraveler { noise: 0.3, ..plain(5, Behavior::Rule("PREFER expressway UNLESS last(short) > 40".into())) };
        let a = generate_synthetic_cohort(&spec(vec![t.clone()], default_filler(), 50), &Scenario::default()).unwrap();
        let b = generate_synthetic_cohort(&spec(vec![t], default_filler(), 50), &Scenario::default()).unwrap();
        assert_eq!(a.rows(), b.rows());
    }

    #[test]
    fn bad_specs_are_rejected() {
        let s = Scenario::default();
        let dup = spec(vec![plain(1, default_filler()), plain(1, default_filler())], default_filler(), 10);
        assert!(dup.validate(&s).is_err());
        let late = SyntheticTraveler {
            regime_switch: Some(RegimeSwitch { period: 11, behavior: default_filler() }),
            ..plain(1, default_filler())
        };
        assert!(spec(vec![late], default_filler(), 10).validate(&s).is_err());
        assert!(spec(vec![plain(1, Behavior::Rule("GO FAST".into()))], default_filler(), 10).validate(&s).is_err());
    }
}
