//! Cross-method comparison tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::TravelerId;
use crate::metrics::{competition_ranks, win_rate, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMetric {
    Accuracy,
    F1,
}

impl AgentMetric {
    pub const ALL: [AgentMetric; 2] = [AgentMetric::Accuracy, AgentMetric::F1];

    fn as_str(self) -> &'static str {
        match self {
            AgentMetric::Accuracy => "accuracy",
            AgentMetric::F1 => "f1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub method: String,
    pub versus: String,
    pub metric: AgentMetric,
    pub wins: usize,
    pub agents: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub metric: AgentMetric,
    pub methods: Vec<String>,
    /// Ranks aligned with `methods`, per agent.
    pub per_agent: BTreeMap<TravelerId, Vec<u32>>,
    pub average_rank: Vec<f64>,
    /// Mean shortfall from the best method on each agent.
    pub average_gap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub methods: Vec<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub win_rates: Option<Vec<WinRate>>,
    pub ranks: Vec<RankTable>,
}

/// Per-agent scores of every method on the agents all methods share.
fn score_matrix(reports: &[MetricReport], metric: AgentMetric) -> BTreeMap<TravelerId, Vec<f64>> {
    let mut shared: Option<BTreeSet<TravelerId>> = None;
    for r in reports {
        let ids: BTreeSet<TravelerId> = r.per_agent.iter().map(|a| a.traveler).collect();
        shared = Some(match shared {
            None => ids,
            Some(s) => s.intersection(&ids).copied().collect(),
        });
    }
    shared
        .unwrap_or_default()
        .into_iter()
        .map(|id| {
            let scores = reports
                .iter()
                .map(|r| {
                    let a = r.per_agent.iter().find(|a| a.traveler == id).expect("shared agent");
                    match metric {
                        AgentMetric::Accuracy => a.accuracy,
                        AgentMetric::F1 => a.f1,
                    }
                })
                .collect();
            (id, scores)
        })
        .collect()
}

/// Compares the first method against every other one and ranks all of them per agent.
pub fn report(methods: Vec<MetricReport>) -> ReportBundle {
    let mut win_rates = Vec::new();
    let mut ranks = Vec::new();
    for metric in AgentMetric::ALL {
        let matrix = score_matrix(&methods, metric);
        let column = |j: usize| matrix.values().map(|s| s[j]).collect::<Vec<f64>>();
        for j in 1..methods.len() {
            let (a, b) = (column(0), column(j));
            let wins = a.iter().zip(&b).filter(|(x, y)| x > y).count();
            win_rates.push(WinRate {
                method: methods[0].method.clone(),
                versus: methods[j].method.clone(),
                metric,
                wins,
                agents: a.len(),
                rate: win_rate(&a, &b),
            });
        }
        let per_agent: BTreeMap<TravelerId, Vec<u32>> = matrix.iter().map(|(id, s)| (*id, competition_ranks(s))).collect();
        let n = matrix.len().max(1) as f64;
        let average_rank = (0..methods.len()).map(|j| per_agent.values().map(|r| f64::from(r[j])).sum::<f64>() / n).collect();
        let average_gap = (0..methods.len())
            .map(|j| matrix.values().map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max) - s[j]).sum::<f64>() / n)
            .collect();
        ranks.push(RankTable {
            metric,
            methods: methods.iter().map(|m| m.method.clone()).collect(),
            per_agent,
            average_rank,
            average_gap,
        });
    }
    ReportBundle { win_rates: (methods.len() > 1).then_some(win_rates), methods, ranks }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

impl ReportBundle {
    /// `report.json` plus CSV tables under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)? + "\n")?;

        let mut w = csv::Writer::from_path(dir.join("methods.csv"))?;
        w.write_record([
            "method",
            "first_period",
            "last_period",
            "accuracy",
            "weighted_f1",
            "mean_cosine",
            "mape_percent",
            "mse_as_written",
            "mse_squared",
        ])?;
        for m in &self.methods {
            w.write_record([
                m.method.clone(),
                m.first_period.to_string(),
                m.last_period.to_string(),
                m.accuracy.to_string(),
                m.weighted_f1.to_string(),
                opt(m.mean_cosine),
                opt(m.mape_percent),
                opt(m.mse_as_written),
                opt(m.mse_squared),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("per_agent.csv"))?;
        w.write_record([
            "method",
            "traveler_id",
            "od_group",
            "accuracy",
            "f1",
            "cosine",
            "truth_switch_after_loss",
            "truth_stay_after_win",
            "sim_switch_after_loss",
            "sim_stay_after_win",
        ])?;
        for m in &self.methods {
            for a in &m.per_agent {
                w.write_record([
                    m.method.clone(),
                    a.traveler.to_string(),
                    a.od_group.to_string(),
                    a.accuracy.to_string(),
                    a.f1.to_string(),
                    opt(a.cosine),
                    opt(a.truth_behavior.c_minus),
                    opt(a.truth_behavior.s_minus),
                    opt(a.predicted_behavior.c_minus),
                    opt(a.predicted_behavior.s_minus),
                ])?;
            }
        }
        w.flush()?;

        if let Some(rates) = &self.win_rates {
            let mut w = csv::Writer::from_path(dir.join("win_rates.csv"))?;
            w.write_record(["method", "versus", "metric", "wins", "agents", "rate"])?;
            for r in rates {
                w.write_record([
                    r.method.clone(),
                    r.versus.clone(),
                    r.metric.as_str().to_string(),
                    r.wins.to_string(),
                    r.agents.to_string(),
                    r.rate.to_string(),
                ])?;
            }
            w.flush()?;
        }

        let mut w = csv::Writer::from_path(dir.join("ranks.csv"))?;
        w.write_record(["metric", "method", "average_rank", "average_gap"])?;
        for t in &self.ranks {
            for (j, m) in t.methods.iter().enumerate() {
                w.write_record([
                    t.metric.as_str().to_string(),
                    m.clone(),
                    t.average_rank[j].to_string(),
                    t.average_gap[j].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{AgentMetrics, BehaviorVector, MseMode};

    fn method(name: &str, f1: &[f64]) -> MetricReport {
        let none = BehaviorVector { c_minus: None, s_minus: None };
        MetricReport {
            method: name.into(),
            first_period: 81,
            last_period: 160,
            accuracy: 0.0,
            weighted_f1: 0.0,
            group_f1: BTreeMap::new(),
            f1_averaging: "macro".into(),
            mean_cosine: None,
            per_agent: f1
                .iter()
                .enumerate()
                .map(|(i, &f)| AgentMetrics {
                    traveler: i as u32 + 1,
                    od_group: 1,
                    accuracy: f,
                    f1: f,
                    truth_behavior: none,
                    predicted_behavior: none,
                    cosine: None,
                })
                .collect(),
            mape_percent: None,
            mse_as_written: None,
            mse_squared: None,
            mse_default_mode: MseMode::AsWritten,
        }
    }

    #[test]
    fn twelve_of_fifteen() {
        let a: Vec<f64> = (0..15).map(|i| if i < 12 { 0.9 } else { 0.1 }).collect();
        let b = vec![0.5; 15];
        let bundle = report(vec![method("ours", &a), method("base", &b)]);
        let rates = bundle.win_rates.unwrap();
        let f1 = rates.iter().find(|r| r.metric == AgentMetric::F1).unwrap();
        assert_eq!((f1.wins, f1.agents), (12, 15));
        assert_eq!(format!("{:.3}", f1.rate), "0.800");
    }

    #[test]
    fn ranks_and_gaps() {
        let bundle = report(vec![method("a", &[0.9, 0.5, 0.4]), method("b", &[0.1, 0.7, 0.6]), method("c", &[0.2, 0.3, 0.1])]);
        let t = &bundle.ranks[1];
        assert_eq!(t.metric, AgentMetric::F1);
        let first: Vec<u32> = t.per_agent.values().map(|r| r[0]).collect();
        assert_eq!(first, vec![1, 2, 2]);
        assert_eq!(format!("{:.2}", t.average_rank[0]), "1.67");
        assert!((t.average_gap[0] - 0.4 / 3.0).abs() < 1e-12);
        assert_eq!(t.per_agent[&1], vec![1, 3, 2]);
    }

    #[test]
    fn single_method_has_no_win_rates() {
        let bundle = report(vec![method("ours", &[0.5, 0.6])]);
        assert!(bundle.win_rates.is_none());
        let json = serde_json::to_string(&bundle).unwrap();
        assert!(!json.contains("win_rates"));
        assert_eq!(bundle.ranks[0].average_rank, vec![1.0]);
    }
}
