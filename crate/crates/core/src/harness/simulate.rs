//! Test-period simulation: teacher-forced (controlled) and fully closed-loop.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PeriodRange};
use super::run::{LogRecord, PersonaStore, RunLog};
use super::trace::HumanTrace;
use super::HarnessError;
use crate::agent::{Decision, DecisionContext, DecisionInput, DecisionModel, MemoryStore, PersonaAgent};
use crate::baselines::{BaseLlm, BoundedLlm, RecursiveLlm};
use crate::env::{RouteId, Scenario, SystemState, TravelerId};
use crate::gateway::Gateway;
use crate::metrics::{ChoiceRow, FlowPoint, FlowSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Base,
    Recursive,
    Bounded,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ours, Method::Base, Method::Recursive, Method::Bounded];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Base => "base",
            Method::Recursive => "recursive",
            Method::Bounded => "bounded",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| HarnessError::Invalid(format!("unknown method `{s}` (ours, base, recursive, bounded)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    Controlled,
    Closed,
}

impl FromStr for SimulationMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s.trim() {
            "controlled" => Ok(SimulationMode::Controlled),
            "closed" => Ok(SimulationMode::Closed),
            _ => Err(HarnessError::Invalid(format!("unknown mode `{s}` (controlled, closed)"))),
        }
    }
}

/// One decision model per simulated traveler.
pub struct ModelSet {
    pub name: String,
    pub models: BTreeMap<TravelerId, Box<dyn DecisionModel>>,
}

impl ModelSet {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), models: BTreeMap::new() }
    }

    pub fn insert(&mut self, agent: TravelerId, model: impl DecisionModel + 'static) {
        self.models.insert(agent, Box::new(model));
    }

    /// Models of `method` for `agents`; the calibrated method reads the latest personas.
    pub fn build(
        method: Method,
        config: &ExperimentConfig,
        personas: Option<&PersonaStore>,
        agents: &[TravelerId],
    ) -> Result<Self, HarnessError> {
        let mut set = ModelSet::new(method.as_str());
        for &a in agents {
            match method {
                Method::Ours => {
                    let persona = personas
                        .and_then(|p| p.latest(a))
                        .ok_or_else(|| HarnessError::Invalid(format!("no calibrated persona for agent {a}")))?;
                    set.insert(a, PersonaAgent::new(persona, config.agent));
                }
                Method::Base => set.insert(a, BaseLlm { retrieval: config.agent }),
                Method::Recursive => set.insert(a, RecursiveLlm { params: config.baselines.recursive.clone() }),
                Method::Bounded => set.insert(a, BoundedLlm { params: config.baselines.bounded.clone(), seed: config.seed }),
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub method: String,
    pub mode: SimulationMode,
    pub range: PeriodRange,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub meta: RunMeta,
    /// Simulated choice of each modeled traveler per period.
    pub choices: Vec<(u32, TravelerId, RouteId)>,
    /// Compared with the recorded choices, when a trace covers the period.
    pub rows: Vec<ChoiceRow>,
    pub flows: FlowSeries,
    pub log: RunLog,
}

fn decide_all(
    set: &ModelSet,
    period: u32,
    scenario: &Scenario,
    memories: &BTreeMap<TravelerId, MemoryStore>,
    gateway: &Gateway,
) -> Result<Vec<(TravelerId, Decision)>, HarnessError> {
    let agents: Vec<(&TravelerId, &Box<dyn DecisionModel>)> = set.models.iter().collect();
    agents
        .par_iter()
        .map(|(&a, model)| {
            let input = DecisionInput {
                traveler: a,
                period,
                history: &memories[&a],
                context: DecisionContext::for_traveler(scenario, a, period)?,
            };
            Ok((a, model.decide(&input, gateway)?))
        })
        .collect()
}

fn row(
    scenario: &Scenario,
    agent: TravelerId,
    period: u32,
    predicted: RouteId,
    sim: &SystemState,
    truth: RouteId,
    real: &SystemState,
) -> ChoiceRow {
    let alt = |r: RouteId| scenario.alternative(agent, r).expect("route in choice set");
    ChoiceRow {
        period,
        traveler: agent,
        od_group: scenario.group_of(agent).expect("known traveler").id,
        predicted,
        truth,
        predicted_time: sim.time_by_route[predicted],
        predicted_alt_time: sim.time_by_route[alt(predicted)],
        truth_time: real.time_by_route[truth],
        truth_alt_time: real.time_by_route[alt(truth)],
    }
}

fn state_at(scenario: &Scenario, period: u32, choices: &BTreeMap<TravelerId, RouteId>) -> Result<SystemState, HarnessError> {
    let mut s = scenario.update_state(choices, None)?;
    s.period = period;
    Ok(s)
}

/// Each test period is simulated from the recorded history before it.
/// Travelers without a model keep their recorded choice in the flows.
pub fn simulate_controlled(
    set: &ModelSet,
    trace: &HumanTrace,
    range: PeriodRange,
    gateway: &Gateway,
) -> Result<SimulationResult, HarnessError> {
    trace.require_range(range.first, range.last)?;
    let scenario = trace.scenario();
    let memories: BTreeMap<TravelerId, MemoryStore> = set.models.keys().map(|&a| (a, trace.memory(a, range.last - 1))).collect();
    let mut out = SimulationResult {
        meta: RunMeta { method: set.name.clone(), mode: SimulationMode::Controlled, range },
        choices: Vec::new(),
        rows: Vec::new(),
        flows: Vec::new(),
        log: RunLog::default(),
    };
    for t in range.iter() {
        let decisions = decide_all(set, t, scenario, &memories, gateway)?;
        let mut choices = trace.choices(t).expect("range checked").clone();
        for (a, d) in &decisions {
            choices.insert(*a, d.choice);
        }
        let sim = state_at(scenario, t, &choices)?;
        let real = trace.state(t).expect("range checked");
        for (a, d) in decisions {
            let truth = trace.choice(t, a).expect("range checked");
            out.rows.push(row(scenario, a, t, d.choice, &sim, truth, real));
            out.choices.push((t, a, d.choice));
            out.log.push(LogRecord::decision(&set.name, a, t, d));
        }
        out.flows.push(FlowPoint { period: t, volumes: sim.volume_by_route.to_array() });
    }
    Ok(out)
}

/// Feeds simulated outcomes back into memory every period, starting from
/// `initial` histories. Every traveler of the scenario needs a model.
pub fn simulate_closed_loop(
    set: &ModelSet,
    scenario: &Scenario,
    range: PeriodRange,
    initial: BTreeMap<TravelerId, MemoryStore>,
    gateway: &Gateway,
    truth: Option<&HumanTrace>,
) -> Result<SimulationResult, HarnessError> {
    if let Some(missing) = scenario.travelers().find(|a| !set.models.contains_key(a)) {
        return Err(HarnessError::Invalid(format!("closed-loop simulation needs a model for traveler {missing}")));
    }
    let mut memories = initial;
    for a in scenario.travelers() {
        memories.entry(a).or_default();
    }
    let mut out = SimulationResult {
        meta: RunMeta { method: set.name.clone(), mode: SimulationMode::Closed, range },
        choices: Vec::new(),
        rows: Vec::new(),
        flows: Vec::new(),
        log: RunLog::default(),
    };
    for t in range.iter() {
        let decisions = decide_all(set, t, scenario, &memories, gateway)?;
        let choices: BTreeMap<TravelerId, RouteId> = decisions.iter().map(|(a, d)| (*a, d.choice)).collect();
        let sim = state_at(scenario, t, &choices)?;
        let real = truth.and_then(|tr| tr.state(t).map(|s| (tr, s)));
        for (a, d) in decisions {
            let obs = scenario.observe(&sim, a, d.choice)?;
            memories.get_mut(&a).expect("inserted above").perceive(d.choice, &obs)?;
            if let Some((tr, real)) = real {
                out.rows.push(row(scenario, a, t, d.choice, &sim, tr.choice(t, a).expect("complete trace"), real));
            }
            out.choices.push((t, a, d.choice));
            out.log.push(LogRecord::decision(&set.name, a, t, d));
        }
        out.flows.push(FlowPoint { period: t, volumes: sim.volume_by_route.to_array() });
    }
    Ok(out)
}

pub fn write_flows(flows: &[FlowPoint], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["period", "expressway", "local1", "local2"])?;
    for f in flows {
        w.write_record([f.period, f.volumes[0], f.volumes[1], f.volumes[2]].map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flows(path: &Path) -> Result<FlowSeries, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<(u32, u32, u32, u32)>()
        .map(|rec| {
            let (period, e, l1, l2) = rec?;
            Ok(FlowPoint { period, volumes: [e, l1, l2] })
        })
        .collect()
}

impl SimulationResult {
    /// `meta.json`, `choices.csv`, `flows.csv` and `decisions.jsonl` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        let mut w = csv::Writer::from_path(dir.join("choices.csv"))?;
        w.write_record(["period", "traveler_id", "choice"])?;
        for (t, a, r) in &self.choices {
            w.write_record([t.to_string(), a.to_string(), r.to_string()])?;
        }
        w.flush()?;
        write_flows(&self.flows, &dir.join("flows.csv"))?;
        self.log.save(&dir.join("decisions.jsonl"))
    }
}

/// A saved simulation run, as read back for evaluation.
#[derive(Debug, Clone)]
pub struct SavedRun {
    pub meta: RunMeta,
    pub choices: Vec<(u32, TravelerId, RouteId)>,
    pub flows: FlowSeries,
}

impl SavedRun {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let mut r = csv::Reader::from_path(dir.join("choices.csv"))?;
        let choices = r.deserialize::<(u32, TravelerId, RouteId)>().collect::<Result<_, _>>()?;
        Ok(SavedRun { meta, choices, flows: read_flows(&dir.join("flows.csv"))? })
    }

    /// Choice rows against `truth`, with simulated times rebuilt from the saved flows.
    pub fn rows(&self, truth: &HumanTrace) -> Result<Vec<ChoiceRow>, HarnessError> {
        let scenario = truth.scenario();
        let flows: BTreeMap<u32, &FlowPoint> = self.flows.iter().map(|f| (f.period, f)).collect();
        self.choices
            .iter()
            .map(|&(t, a, predicted)| {
                let f = flows.get(&t).ok_or_else(|| HarnessError::Invalid(format!("flows lack period {t}")))?;
                let volumes = crate::env::RouteVec::from_fn(|r| f.volumes[r as usize]);
                let sim = SystemState {
                    period: t,
                    time_by_route: scenario.times_for_volumes(&volumes),
                    volume_by_route: volumes,
                    group_counts: BTreeMap::new(),
                };
                let real = truth.state(t).ok_or(HarnessError::Trace(super::TraceError::MissingRange(t, t)))?;
                let truth_choice =
                    truth.choice(t, a).ok_or_else(|| HarnessError::Invalid(format!("truth lacks traveler {a}")))?;
                Ok(row(scenario, a, t, predicted, &sim, truth_choice, real))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Persona;
    use crate::harness::synth::{generate_synthetic_cohort, Archetype, Behavior, SyntheticCohortSpec};

    fn persona_set(name: &str, text: &str, scenario: &Scenario) -> ModelSet {
        let mut set = ModelSet::new(name);
        for a in scenario.travelers() {
            set.insert(a, PersonaAgent::new(Persona::new(text).unwrap(), Default::default()));
        }
        set
    }

    #[test]
    fn everyone_on_the_expressway() {
        let s = Scenario::default();
        let set = persona_set("x", "PREFER expressway UNLESS mean(short) > 500", &s);
        let out = simulate_closed_loop(&set, &s, PeriodRange::new(1, 12), BTreeMap::new(), &Gateway::scripted(0), None).unwrap();
        assert_eq!(out.flows.len(), 12);
        for f in &out.flows {
            assert_eq!(f.volumes, [15, 0, 0]);
            assert_eq!(
                s.times_for_volumes(&crate::env::RouteVec::from_fn(|r| f.volumes[r as usize]))[RouteId::Expressway],
                239.375
            );
        }
    }

    #[test]
    fn rule_cohort_reproduces_itself_under_teacher_forcing() {
        let rule = "PREFER NONE UNLESS mean(short) > 20 STAY_BIAS weak";
        let spec = SyntheticCohortSpec {
            seed: 4,
            periods: 30,
            filler: Behavior::Rule(rule.into()),
            travelers: vec![],
            retrieval: Default::default(),
        };
        let trace = generate_synthetic_cohort(&spec, &Scenario::default()).unwrap();
        let set = persona_set("ours", rule, trace.scenario());
        let out = simulate_controlled(&set, &trace, PeriodRange::new(11, 30), &Gateway::scripted(0)).unwrap();
        assert!(out.rows.iter().all(|r| r.predicted == r.truth));
        assert_eq!(out.flows, trace.flows(11, 30));
    }

    #[test]
    fn saved_runs_rebuild_the_same_rows() {
        let spec = SyntheticCohortSpec {
            seed: 4,
            periods: 20,
            filler: Behavior::Archetype(Archetype::Naive),
            travelers: vec![],
            retrieval: Default::default(),
        };
        let trace = generate_synthetic_cohort(&spec, &Scenario::default()).unwrap();
        let config = ExperimentConfig::default();
        let set = ModelSet::build(Method::Base, &config, None, &[1, 4, 12]).unwrap();
        let out = simulate_controlled(&set, &trace, PeriodRange::new(5, 20), &Gateway::scripted(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.save(dir.path()).unwrap();
        let saved = SavedRun::load(dir.path()).unwrap();
        assert_eq!(saved.rows(&trace).unwrap(), out.rows);
        assert!(ModelSet::build(Method::Ours, &config, None, &[1]).is_err());
    }
}
