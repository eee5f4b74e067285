//! Choice-level and flow-level comparison metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{RouteId, TravelerId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("group {0} has no predictions")]
    EmptyGroup(u8),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("every truth component is zero")]
    AllZeroTruth,
    #[error("series cover different periods")]
    Misaligned,
}

/// One traveler-period of a simulation compared with the recorded choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRow {
    pub period: u32,
    pub traveler: TravelerId,
    pub od_group: u8,
    pub predicted: RouteId,
    pub truth: RouteId,
    /// Time of the predicted route in the simulated state, and of the other route.
    pub predicted_time: f64,
    pub predicted_alt_time: f64,
    pub truth_time: f64,
    pub truth_alt_time: f64,
}

pub fn accuracy(rows: &[ChoiceRow]) -> Result<f64, MetricError> {
    if rows.is_empty() {
        return Err(MetricError::EmptyTrace);
    }
    Ok(rows.iter().filter(|r| r.predicted == r.truth).count() as f64 / rows.len() as f64)
}

/// Mean of per-route F1 over routes that occur in either column.
pub fn macro_f1(pairs: &[(RouteId, RouteId)]) -> Option<f64> {
    let labels: BTreeSet<RouteId> = pairs.iter().flat_map(|&(p, t)| [p, t]).collect();
    if labels.is_empty() {
        return None;
    }
    let total: f64 = labels
        .iter()
        .map(|&l| {
            let tp = pairs.iter().filter(|&&(p, t)| p == l && t == l).count() as f64;
            let fp = pairs.iter().filter(|&&(p, t)| p == l && t != l).count() as f64;
            let fn_ = pairs.iter().filter(|&&(p, t)| p != l && t == l).count() as f64;
            2.0 * tp / (2.0 * tp + fp + fn_)
        })
        .sum();
    Some(total / labels.len() as f64)
}

fn pairs<'a>(rows: impl Iterator<Item = &'a ChoiceRow>) -> Vec<(RouteId, RouteId)> {
    rows.map(|r| (r.predicted, r.truth)).collect()
}

pub fn group_f1(rows: &[ChoiceRow]) -> BTreeMap<u8, f64> {
    let groups: BTreeSet<u8> = rows.iter().map(|r| r.od_group).collect();
    groups.into_iter().filter_map(|g| macro_f1(&pairs(rows.iter().filter(|r| r.od_group == g))).map(|f| (g, f))).collect()
}

/// Population-weighted combination of per-group scores.
pub fn combine_weighted(parts: &[(f64, f64)]) -> f64 {
    let w: f64 = parts.iter().map(|(w, _)| w).sum();
    parts.iter().map(|(wi, f)| wi * f).sum::<f64>() / w
}

/// Per-group F1 weighted by each group's share of travelers.
pub fn weighted_f1(rows: &[ChoiceRow]) -> Result<f64, MetricError> {
    if rows.is_empty() {
        return Err(MetricError::EmptyTrace);
    }
    let mut members: BTreeMap<u8, BTreeSet<TravelerId>> = BTreeMap::new();
    for r in rows {
        members.entry(r.od_group).or_default().insert(r.traveler);
    }
    let f1 = group_f1(rows);
    let parts = members
        .iter()
        .map(|(g, m)| f1.get(g).map(|f| (m.len() as f64, *f)).ok_or(MetricError::EmptyGroup(*g)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(combine_weighted(&parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transition {
    /// Switch after a loss.
    #[serde(rename = "C-")]
    CMinus,
    /// Stay after a loss.
    #[serde(rename = "S+")]
    SPlus,
    /// Switch after a win.
    #[serde(rename = "C+")]
    CPlus,
    /// Stay after a win.
    #[serde(rename = "S-")]
    SMinus,
}

/// A day is a loss when the own route was strictly slower than the other route.
pub fn classify_transition(prev_choice: RouteId, prev_own_time: f64, prev_alt_time: f64, cur_choice: RouteId) -> Transition {
    let loss = prev_own_time > prev_alt_time;
    let switched = cur_choice != prev_choice;
    match (loss, switched) {
        (true, true) => Transition::CMinus,
        (true, false) => Transition::SPlus,
        (false, true) => Transition::CPlus,
        (false, false) => Transition::SMinus,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub period: u32,
    pub choice: RouteId,
    pub own_time: f64,
    pub alt_time: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub c_minus: u32,
    pub s_plus: u32,
    pub c_plus: u32,
    pub s_minus: u32,
}

impl TransitionCounts {
    pub fn add(&mut self, t: Transition) {
        match t {
            Transition::CMinus => self.c_minus += 1,
            Transition::SPlus => self.s_plus += 1,
            Transition::CPlus => self.c_plus += 1,
            Transition::SMinus => self.s_minus += 1,
        }
    }
}

/// Classifies each day whose previous period is also present; the first day
/// of a series and days after a gap are skipped.
pub fn transition_counts(days: &[DayOutcome]) -> TransitionCounts {
    let mut c = TransitionCounts::default();
    for w in days.windows(2) {
        if w[1].period == w[0].period + 1 {
            c.add(classify_transition(w[0].choice, w[0].own_time, w[0].alt_time, w[1].choice));
        }
    }
    c
}

/// `(P(switch | loss), P(stay | win))`; a component is `None` when no day of
/// that sign occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorVector {
    pub c_minus: Option<f64>,
    pub s_minus: Option<f64>,
}

impl BehaviorVector {
    pub fn from_counts(c: &TransitionCounts) -> Self {
        let ratio = |a: u32, b: u32| (a + b > 0).then(|| f64::from(a) / f64::from(a + b));
        Self { c_minus: ratio(c.c_minus, c.s_plus), s_minus: ratio(c.s_minus, c.c_plus) }
    }

    pub fn defined(&self) -> Option<[f64; 2]> {
        Some([self.c_minus?, self.s_minus?])
    }
}

pub fn behavior_vector(days: &[DayOutcome]) -> BehaviorVector {
    BehaviorVector::from_counts(&transition_counts(days))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Route volumes `[expressway, local1, local2]` for one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub period: u32,
    pub volumes: [u32; 3],
}

pub type FlowSeries = Vec<FlowPoint>;

fn aligned<'a>(
    sim: &'a [FlowPoint],
    truth: &'a [FlowPoint],
) -> Result<impl Iterator<Item = (&'a FlowPoint, &'a FlowPoint)>, MetricError> {
    if sim.is_empty() {
        return Err(MetricError::EmptyTrace);
    }
    if sim.len() != truth.len() || sim.iter().zip(truth).any(|(a, b)| a.period != b.period) {
        return Err(MetricError::Misaligned);
    }
    Ok(sim.iter().zip(truth))
}

/// Mean absolute percentage error in percent. Components with zero true
/// flow are skipped and leave the divisor.
pub fn mape(sim: &[FlowPoint], truth: &[FlowPoint]) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (s, t) in aligned(sim, truth)? {
        for k in 0..3 {
            if t.volumes[k] > 0 {
                let tv = f64::from(t.volumes[k]);
                sum += (f64::from(s.volumes[k]) - tv).abs() / tv;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricError::AllZeroTruth);
    }
    Ok(100.0 * sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseMode {
    /// Per-period Euclidean norm, not squared.
    AsWritten,
    Squared,
}

pub fn flow_mse(sim: &[FlowPoint], truth: &[FlowPoint], mode: MseMode) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    let mut periods = 0usize;
    for (s, t) in aligned(sim, truth)? {
        let sq: f64 = (0..3).map(|k| (f64::from(s.volumes[k]) - f64::from(t.volumes[k])).powi(2)).sum();
        sum += match mode {
            MseMode::AsWritten => sq.sqrt(),
            MseMode::Squared => sq,
        };
        periods += 1;
    }
    Ok(sum / (3 * periods) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub traveler: TravelerId,
    pub od_group: u8,
    pub accuracy: f64,
    pub f1: f64,
    pub truth_behavior: BehaviorVector,
    pub predicted_behavior: BehaviorVector,
    /// `None` when either vector has an undefined component or is zero.
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub first_period: u32,
    pub last_period: u32,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub group_f1: BTreeMap<u8, f64>,
    pub f1_averaging: String,
    pub mean_cosine: Option<f64>,
    pub per_agent: Vec<AgentMetrics>,
    pub mape_percent: Option<f64>,
    pub mse_as_written: Option<f64>,
    pub mse_squared: Option<f64>,
    pub mse_default_mode: MseMode,
}

pub fn agent_metrics(rows: &[ChoiceRow]) -> Vec<AgentMetrics> {
    let mut by_agent: BTreeMap<TravelerId, Vec<ChoiceRow>> = BTreeMap::new();
    for r in rows {
        by_agent.entry(r.traveler).or_default().push(*r);
    }
    by_agent
        .into_iter()
        .map(|(traveler, mut rs)| {
            rs.sort_by_key(|r| r.period);
            let truth_days: Vec<DayOutcome> = rs
                .iter()
                .map(|r| DayOutcome { period: r.period, choice: r.truth, own_time: r.truth_time, alt_time: r.truth_alt_time })
                .collect();
            let pred_days: Vec<DayOutcome> = rs
                .iter()
                .map(|r| DayOutcome {
                    period: r.period,
                    choice: r.predicted,
                    own_time: r.predicted_time,
                    alt_time: r.predicted_alt_time,
                })
                .collect();
            let truth_behavior = behavior_vector(&truth_days);
            let predicted_behavior = behavior_vector(&pred_days);
            let cosine = match (truth_behavior.defined(), predicted_behavior.defined()) {
                (Some(a), Some(b)) => cosine_similarity(&a, &b).ok(),
                _ => None,
            };
            AgentMetrics {
                traveler,
                od_group: rs[0].od_group,
                accuracy: accuracy(&rs).expect("non-empty"),
                f1: macro_f1(&pairs(rs.iter())).expect("non-empty"),
                truth_behavior,
                predicted_behavior,
                cosine,
            }
        })
        .collect()
}

/// Builds the full report for one method. Flow metrics are omitted when no
/// flow series is given.
pub fn evaluate(
    method: &str,
    rows: &[ChoiceRow],
    flows: Option<(&[FlowPoint], &[FlowPoint])>,
) -> Result<MetricReport, MetricError> {
    let per_agent = agent_metrics(rows);
    let cosines: Vec<f64> = per_agent.iter().filter_map(|a| a.cosine).collect();
    let (mape_percent, mse_as_written, mse_squared) = match flows {
        Some((sim, truth)) => (
            mape(sim, truth).ok(),
            Some(flow_mse(sim, truth, MseMode::AsWritten)?),
            Some(flow_mse(sim, truth, MseMode::Squared)?),
        ),
        None => (None, None, None),
    };
    Ok(MetricReport {
        method: method.to_string(),
        first_period: rows.iter().map(|r| r.period).min().ok_or(MetricError::EmptyTrace)?,
        last_period: rows.iter().map(|r| r.period).max().ok_or(MetricError::EmptyTrace)?,
        accuracy: accuracy(rows)?,
        weighted_f1: weighted_f1(rows)?,
        group_f1: group_f1(rows),
        f1_averaging: "macro".into(),
        mean_cosine: (!cosines.is_empty()).then(|| cosines.iter().sum::<f64>() / cosines.len() as f64),
        per_agent,
        mape_percent,
        mse_as_written,
        mse_squared,
        mse_default_mode: MseMode::AsWritten,
    })
}

/// Share of agents on which `a` scores strictly higher than `b`.
pub fn win_rate(a: &[f64], b: &[f64]) -> f64 {
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    wins as f64 / a.len().max(1) as f64
}

/// Standard competition ranks ("1224") of `scores`, higher is better.
pub fn competition_ranks(scores: &[f64]) -> Vec<u32> {
    scores.iter().map(|s| 1 + scores.iter().filter(|o| *o > s).count() as u32).collect()
}
