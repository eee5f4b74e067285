//! Recorded route-choice traces: CSV loading, validation against the
//! environment and the per-period state reconstruction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{DecisionContext, MemoryStore};
use crate::env::{RouteId, Scenario, SystemState, TravelerId};
use crate::metrics::{DayOutcome, FlowPoint, FlowSeries};

/// Largest accepted gap between a recorded time and its reconstruction, in minutes.
pub const TIME_TOLERANCE: f64 = 0.05;

const HEADER: [&str; 5] = ["period", "traveler_id", "od_group", "choice", "travel_time"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub period: u32,
    pub traveler_id: TravelerId,
    pub od_group: u8,
    pub choice: RouteId,
    pub travel_time: f64,
}

/// A recorded time that disagrees with the environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeMismatch {
    pub period: u32,
    pub traveler: TravelerId,
    pub route: RouteId,
    pub volume: u32,
    pub recorded: f64,
    pub reconstructed: f64,
}

impl fmt::Display for TimeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "period {} traveler {} on {}: recorded {} min, expected {:.4} min for volume {}",
            self.period, self.traveler, self.route, self.recorded, self.reconstructed, self.volume
        )
    }
}

fn list<T: fmt::Display>(items: &[T]) -> String {
    const SHOWN: usize = 5;
    let mut s = items.iter().take(SHOWN).map(|x| format!("\n  {x}")).collect::<String>();
    if items.len() > SHOWN {
        s.push_str(&format!("\n  ... and {} more", items.len() - SHOWN));
    }
    s
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("header must be `{}`, found `{found}`", HEADER.join(","))]
    Header { found: String },
    #[error("trace is empty")]
    Empty,
    #[error("incomplete grid: {} traveler-periods missing (periods 1..={periods}){}", missing.len(), list(&missing.iter().map(|(p, t)| format!("period {p} traveler {t}")).collect::<Vec<_>>()))]
    IncompleteGrid { periods: u32, missing: Vec<(u32, TravelerId)> },
    #[error("period {period}: traveler {traveler} appears twice")]
    Duplicate { period: u32, traveler: TravelerId },
    #[error("period {period}: traveler {traveler} is not in the scenario")]
    UnknownTraveler { period: u32, traveler: TravelerId },
    #[error("period {period}: traveler {traveler} is listed in group {recorded} but belongs to group {expected}")]
    WrongGroup { period: u32, traveler: TravelerId, recorded: u8, expected: u8 },
    #[error("period {period}: traveler {traveler} chose {route}, outside its choice set {} / {}", choice_set[0], choice_set[1])]
    ChoiceOutsideSet { period: u32, traveler: TravelerId, route: RouteId, choice_set: [RouteId; 2] },
    #[error(
        "{} recorded travel times disagree with the BPR reconstruction by more than {TIME_TOLERANCE} min; check the choices and times of these rows:{}",
        mismatches.len(),
        list(mismatches)
    )]
    InconsistentTimes { mismatches: Vec<TimeMismatch> },
    #[error("periods {0}..={1} are not covered by the trace")]
    MissingRange(u32, u32),
}

/// Per-traveler route shares over one block of periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub traveler: TravelerId,
    pub first_period: u32,
    pub last_period: u32,
    pub expressway: u32,
    pub local: u32,
    pub expressway_share: f64,
    pub local_share: f64,
}

/// A validated trace with every period's system state rebuilt.
#[derive(Debug, Clone)]
pub struct HumanTrace {
    scenario: Scenario,
    periods: u32,
    /// `choices[t - 1]` holds period `t`.
    choices: Vec<BTreeMap<TravelerId, RouteId>>,
    states: Vec<SystemState>,
    rows: Vec<TraceRow>,
}

impl HumanTrace {
    /// Builds a trace from complete per-period choices, computing the times.
    pub fn from_choices(scenario: Scenario, choices: Vec<BTreeMap<TravelerId, RouteId>>) -> Result<Self, TraceError> {
        let mut rows = Vec::new();
        let mut prev: Option<SystemState> = None;
        for (i, c) in choices.iter().enumerate() {
            let state = reconstruct(&scenario, i as u32 + 1, c, prev.as_ref())?;
            for (&traveler, &route) in c {
                rows.push(TraceRow {
                    period: state.period,
                    traveler_id: traveler,
                    od_group: scenario.group_of(traveler).expect("checked").id,
                    choice: route,
                    travel_time: state.time_by_route[route],
                });
            }
            prev = Some(state);
        }
        validate(scenario, rows)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn periods(&self) -> u32 {
        self.periods
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn state(&self, period: u32) -> Option<&SystemState> {
        period.checked_sub(1).and_then(|i| self.states.get(i as usize))
    }

    pub fn choices(&self, period: u32) -> Option<&BTreeMap<TravelerId, RouteId>> {
        period.checked_sub(1).and_then(|i| self.choices.get(i as usize))
    }

    pub fn choice(&self, period: u32, traveler: TravelerId) -> Option<RouteId> {
        self.choices(period).and_then(|c| c.get(&traveler).copied())
    }

    pub fn require_range(&self, first: u32, last: u32) -> Result<(), TraceError> {
        if first < 1 || last > self.periods || first > last {
            return Err(TraceError::MissingRange(first, last));
        }
        Ok(())
    }

    /// Everything `traveler` perceived through period `last`.
    pub fn memory(&self, traveler: TravelerId, last: u32) -> MemoryStore {
        let mut m = MemoryStore::new();
        for t in 1..=last.min(self.periods) {
            let state = &self.states[t as usize - 1];
            let route = self.choices[t as usize - 1][&traveler];
            let obs = self.scenario.observe(state, traveler, route).expect("validated trace");
            m.perceive(route, &obs).expect("periods increase");
        }
        m
    }

    pub fn context(&self, traveler: TravelerId, day: u32) -> DecisionContext {
        DecisionContext::for_traveler(&self.scenario, traveler, day).expect("known traveler")
    }

    pub fn flows(&self, first: u32, last: u32) -> FlowSeries {
        (first..=last.min(self.periods))
            .filter_map(|t| self.state(t))
            .map(|s| FlowPoint { period: s.period, volumes: s.volume_by_route.to_array() })
            .collect()
    }

    /// Own and alternative route times per period, as a full-information observer sees them.
    pub fn day_outcomes(&self, traveler: TravelerId, first: u32, last: u32) -> Vec<DayOutcome> {
        (first..=last.min(self.periods))
            .map(|t| {
                let state = &self.states[t as usize - 1];
                let choice = self.choices[t as usize - 1][&traveler];
                let alt = self.scenario.alternative(traveler, choice).expect("validated trace");
                DayOutcome { period: t, choice, own_time: state.time_by_route[choice], alt_time: state.time_by_route[alt] }
            })
            .collect()
    }

    /// Route shares per traveler over consecutive blocks of `block` periods.
    pub fn shares(&self, block: u32) -> Vec<ShareRow> {
        let block = block.max(1);
        let mut out = Vec::new();
        for traveler in self.scenario.travelers() {
            let mut first = 1;
            while first <= self.periods {
                let last = (first + block - 1).min(self.periods);
                let local = (first..=last).filter(|&t| self.choice(t, traveler).is_some_and(RouteId::is_local)).count() as u32;
                let n = last - first + 1;
                out.push(ShareRow {
                    traveler,
                    first_period: first,
                    last_period: last,
                    expressway: n - local,
                    local,
                    expressway_share: f64::from(n - local) / f64::from(n),
                    local_share: f64::from(local) / f64::from(n),
                });
                first = last + 1;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        write_rows(&self.rows, out)
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn reconstruct(
    scenario: &Scenario,
    period: u32,
    choices: &BTreeMap<TravelerId, RouteId>,
    prev: Option<&SystemState>,
) -> Result<SystemState, TraceError> {
    for &traveler in choices.keys() {
        let group = scenario.group_of(traveler).map_err(|_| TraceError::UnknownTraveler { period, traveler })?;
        let route = choices[&traveler];
        if !group.choice_set.contains(&route) {
            return Err(TraceError::ChoiceOutsideSet { period, traveler, route, choice_set: group.choice_set });
        }
    }
    let mut state = scenario.update_state(choices, prev).map_err(|e| TraceError::Schema { line: 0, message: e.to_string() })?;
    state.period = period;
    Ok(state)
}

/// Rows in `(period, traveler)` order; times written with shortest round-trip formatting.
pub fn write_rows<W: Write>(rows: &[TraceRow], out: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.period.to_string(),
            r.traveler_id.to_string(),
            r.od_group.to_string(),
            r.choice.to_string(),
            r.travel_time.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> TraceError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TraceError::Io(io),
        other => TraceError::Schema { line, message: format!("{other:?}") },
    }
}

pub fn load_trace(path: &Path) -> Result<HumanTrace, TraceError> {
    read_trace(std::fs::File::open(path)?, Scenario::default())
}

pub fn read_trace<R: Read>(input: R, scenario: Scenario) -> Result<HumanTrace, TraceError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(TraceError::Header { found: headers.iter().collect::<Vec<_>>().join(",") });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |name: &str, v: &str| TraceError::Schema { line, message: format!("invalid {name} `{v}`") };
        let row = TraceRow {
            period: field(0).parse().map_err(|_| bad("period", field(0)))?,
            traveler_id: field(1).parse().map_err(|_| bad("traveler_id", field(1)))?,
            od_group: field(2).parse().map_err(|_| bad("od_group", field(2)))?,
            choice: field(3).parse().map_err(|_| bad("choice", field(3)))?,
            travel_time: field(4).parse().map_err(|_| bad("travel_time", field(4)))?,
        };
        if row.period == 0 {
            return Err(bad("period", "0"));
        }
        if !row.travel_time.is_finite() || row.travel_time < 0.0 {
            return Err(bad("travel_time", field(4)));
        }
        rows.push(row);
    }
    validate(scenario, rows)
}

fn validate(scenario: Scenario, mut rows: Vec<TraceRow>) -> Result<HumanTrace, TraceError> {
    if rows.is_empty() {
        return Err(TraceError::Empty);
    }
    rows.sort_by_key(|r| (r.period, r.traveler_id));
    let periods = rows.last().map_or(0, |r| r.period);
    let mut choices = vec![BTreeMap::new(); periods as usize];
    for r in &rows {
        let group = scenario
            .group_of(r.traveler_id)
            .map_err(|_| TraceError::UnknownTraveler { period: r.period, traveler: r.traveler_id })?;
        if group.id != r.od_group {
            return Err(TraceError::WrongGroup {
                period: r.period,
                traveler: r.traveler_id,
                recorded: r.od_group,
                expected: group.id,
            });
        }
        if !group.choice_set.contains(&r.choice) {
            return Err(TraceError::ChoiceOutsideSet {
                period: r.period,
                traveler: r.traveler_id,
                route: r.choice,
                choice_set: group.choice_set,
            });
        }
        if choices[r.period as usize - 1].insert(r.traveler_id, r.choice).is_some() {
            return Err(TraceError::Duplicate { period: r.period, traveler: r.traveler_id });
        }
    }
    let missing: Vec<(u32, TravelerId)> = (1..=periods)
        .flat_map(|t| scenario.travelers().map(move |i| (t, i)))
        .filter(|(t, i)| !choices[*t as usize - 1].contains_key(i))
        .collect();
    if !missing.is_empty() {
        return Err(TraceError::IncompleteGrid { periods, missing });
    }

    let mut states: Vec<SystemState> = Vec::with_capacity(periods as usize);
    for (i, c) in choices.iter().enumerate() {
        let state = reconstruct(&scenario, i as u32 + 1, c, states.last())?;
        states.push(state);
    }
    let mismatches: Vec<TimeMismatch> = rows
        .iter()
        .filter_map(|r| {
            let s = &states[r.period as usize - 1];
            let expected = s.time_by_route[r.choice];
            ((r.travel_time - expected).abs() > TIME_TOLERANCE).then(|| TimeMismatch {
                period: r.period,
                traveler: r.traveler_id,
                route: r.choice,
                volume: s.volume_by_route[r.choice],
                recorded: r.travel_time,
                reconstructed: expected,
            })
        })
        .collect();
    if !mismatches.is_empty() {
        return Err(TraceError::InconsistentTimes { mismatches });
    }
    Ok(HumanTrace { scenario, periods, choices, states, rows })
}
