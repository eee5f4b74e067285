//! Calibration over a training range, persona lineage and the run log.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::trace::HumanTrace;
use super::HarnessError;
use crate::agent::{Decision, Persona};
use crate::calibrate::{calibrate_step, initial_persona, CalibrationRecord, CalibrationTask};
use crate::env::{RouteId, TravelerId};
use crate::gateway::Gateway;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaVersion {
    pub version: u32,
    pub parent_version: Option<u32>,
    /// Calibration period that produced it; 0 for the starting persona.
    pub period: u32,
    pub text: String,
}

/// Every persona version of every agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaStore {
    pub agents: BTreeMap<TravelerId, Vec<PersonaVersion>>,
}

impl PersonaStore {
    pub fn latest(&self, agent: TravelerId) -> Option<Persona> {
        let v = self.agents.get(&agent)?.last()?;
        Some(Persona { text: v.text.clone(), version: v.version, parent_version: v.parent_version })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Config {
        seed: u64,
        config: Box<ExperimentConfig>,
    },
    Persona {
        agent: TravelerId,
        period: u32,
        version: u32,
        parent_version: Option<u32>,
        text: String,
    },
    Calibration(Box<CalibrationRecord>),
    AgentFailed {
        agent: TravelerId,
        period: u32,
        error: String,
    },
    Decision {
        method: String,
        agent: TravelerId,
        period: u32,
        template_id: String,
        prompt_digest: String,
        replies: Vec<String>,
        choice: RouteId,
        fallback: bool,
    },
}

impl LogRecord {
    pub fn decision(method: &str, agent: TravelerId, period: u32, d: Decision) -> Self {
        LogRecord::Decision {
            method: method.to_string(),
            agent,
            period,
            template_id: d.template_id,
            prompt_digest: d.prompt_digest,
            replies: d.replies,
            choice: d.choice,
            fallback: d.fallback,
        }
    }

    fn persona(agent: TravelerId, v: &PersonaVersion) -> Self {
        LogRecord::Persona { agent, period: v.period, version: v.version, parent_version: v.parent_version, text: v.text.clone() }
    }
}

/// Append-only record of a run, one JSON object per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), HarnessError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let records = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(RunLog { records })
    }

    pub fn calibration_records(&self) -> impl Iterator<Item = &CalibrationRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Calibration(c) => Some(c.as_ref()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct CalibrationRun {
    pub store: PersonaStore,
    pub log: RunLog,
    pub failures: BTreeMap<TravelerId, String>,
}

struct AgentRun {
    versions: Vec<PersonaVersion>,
    records: Vec<LogRecord>,
    failure: Option<String>,
}

fn calibrate_agent(trace: &HumanTrace, config: &ExperimentConfig, agent: TravelerId, gateway: &Gateway) -> AgentRun {
    let train = config.train_range;
    let history = trace.memory(agent, train.last);
    let ctx = trace.context(agent, train.first);
    let task = CalibrationTask {
        traveler: agent,
        history: &history,
        choice_set: ctx.choice_set,
        free_flow: ctx.free_flow,
        retrieval: config.agent,
    };
    let mut run = AgentRun { versions: Vec::new(), records: Vec::new(), failure: None };
    let fail = |run: &mut AgentRun, period: u32, e: &dyn std::fmt::Display| {
        log::error!("agent {agent}: calibration stopped at period {period}: {e}");
        run.records.push(LogRecord::AgentFailed { agent, period, error: e.to_string() });
        run.failure = Some(format!("period {period}: {e}"));
    };

    let mut persona = match initial_persona(config.initial_persona, &task, &config.calibration, gateway) {
        Ok(p) => p,
        Err(e) => {
            fail(&mut run, 0, &e);
            return run;
        }
    };
    let first = PersonaVersion { version: persona.version, parent_version: None, period: 0, text: persona.text.clone() };
    run.records.push(LogRecord::persona(agent, &first));
    run.versions.push(first);

    let earliest = train.first + config.calibration.t_w - 1;
    for t in config.calibration.schedule(train.last).into_iter().filter(|&t| t >= earliest) {
        match calibrate_step(&task, t, &persona, &config.calibration, gateway) {
            Ok(out) => {
                let changed = out.persona != persona;
                run.records.push(LogRecord::Calibration(Box::new(out.record)));
                if changed {
                    persona = out.persona;
                    let v = PersonaVersion {
                        version: persona.version,
                        parent_version: persona.parent_version,
                        period: t,
                        text: persona.text.clone(),
                    };
                    run.records.push(LogRecord::persona(agent, &v));
                    run.versions.push(v);
                }
            }
            Err(e) => {
                fail(&mut run, t, &e);
                break;
            }
        }
    }
    run
}

/// Calibrates every configured agent over the training range. Agents run in
/// parallel; the log is assembled in agent order so it does not depend on
/// scheduling. A failing agent keeps its last persona and is reported.
pub fn run_calibration(trace: &HumanTrace, config: &ExperimentConfig, gateway: &Gateway) -> Result<CalibrationRun, HarnessError> {
    config.validate()?;
    trace.require_range(config.train_range.first, config.train_range.last)?;
    let agents = config.agent_ids();
    let runs: Vec<AgentRun> = agents.par_iter().map(|&a| calibrate_agent(trace, config, a, gateway)).collect();

    let mut out = CalibrationRun::default();
    out.log.push(LogRecord::Config { seed: config.seed, config: Box::new(config.clone()) });
    for (agent, run) in agents.into_iter().zip(runs) {
        if !run.versions.is_empty() {
            out.store.agents.insert(agent, run.versions);
        }
        out.log.records.extend(run.records);
        if let Some(f) = run.failure {
            out.failures.insert(agent, f);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Scenario;
    use crate::harness::synth::{generate_synthetic_cohort, Behavior, SyntheticCohortSpec, SyntheticTraveler};
    use crate::harness::PeriodRange;

    #[test]
    fn stride_schedule_and_lineage() {
        let spec = SyntheticCohortSpec {
            seed: 1,
            periods: 24,
            filler: Behavior::Rule("PREFER NONE UNLESS mean(short) > 22".into()),
            travelers: vec![SyntheticTraveler {
                id: 2,
                behavior: Behavior::Rule("PREFER expressway UNLESS last(short) > 20".into()),
                regime_switch: None,
                noise: 0.0,
                initial_route: None,
            }],
            retrieval: Default::default(),
        };
        let trace = generate_synthetic_cohort(&spec, &Scenario::default()).unwrap();
        let mut config =
            ExperimentConfig { agents: Some(vec![2, 11]), train_range: PeriodRange::new(1, 24), ..Default::default() };
        config.calibration.stride = 8;
        config.calibration.t_m = 16;
        let gw = Gateway::scripted(1);
        let run = run_calibration(&trace, &config, &gw).unwrap();
        assert!(run.failures.is_empty());
        let periods: Vec<u32> = run.log.calibration_records().filter(|r| r.agent == 2).map(|r| r.t).collect();
        assert_eq!(periods, vec![8, 16, 24]);
        for versions in run.store.agents.values() {
            assert_eq!(versions[0].version, 0);
            for w in versions.windows(2) {
                assert_eq!(w[1].parent_version, Some(w[0].version));
                assert_eq!(w[1].version, w[0].version + 1);
            }
        }
        let again = run_calibration(&trace, &config, &Gateway::scripted(1)).unwrap();
        assert_eq!(again.store.to_json(), run.store.to_json());
        let (mut a, mut b) = (Vec::new(), Vec::new());
        run.log.write_jsonl(&mut a).unwrap();
        again.log.write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
        let first = String::from_utf8(a).unwrap();
        let line = first.lines().nth(1).unwrap();
        let parsed: LogRecord = serde_json::from_str(line).unwrap();
        assert!(matches!(parsed, LogRecord::Persona { agent: 2, version: 0, .. }));
    }
}
