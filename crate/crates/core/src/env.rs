//! Two-OD-group route network with BPR link performance.
//!
//! Three routes exist: a shared `expressway` plus one local arterial per OD
//! group. Expressway volume is pooled across both groups; travelers only see
//! the counts of their own group and the time of the route they drove.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TravelerId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid BPR input: {0}")]
    InvalidBprInput(String),
    #[error("unknown route `{0}`")]
    UnknownRoute(String),
    #[error("unknown traveler {0}")]
    UnknownTraveler(TravelerId),
    #[error("traveler {0} has no choice for this period")]
    MissingChoice(TravelerId),
    #[error("traveler {traveler} chose {route}, which is outside its choice set")]
    ChoiceOutsideSet { traveler: TravelerId, route: RouteId },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("failed to read scenario: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteId {
    Expressway,
    Local1,
    Local2,
}

impl RouteId {
    pub const ALL: [RouteId; 3] = [RouteId::Expressway, RouteId::Local1, RouteId::Local2];

    pub fn as_str(self) -> &'static str {
        match self {
            RouteId::Expressway => "expressway",
            RouteId::Local1 => "local1",
            RouteId::Local2 => "local2",
        }
    }

    pub fn is_local(self) -> bool {
        !matches!(self, RouteId::Expressway)
    }
}

impl fmt::Display for RouteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RouteId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "expressway" => Ok(RouteId::Expressway),
            "local1" => Ok(RouteId::Local1),
            "local2" => Ok(RouteId::Local2),
            _ => Err(EnvError::UnknownRoute(s.to_string())),
        }
    }
}

/// One value per route.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RouteVec<T> {
    pub expressway: T,
    pub local1: T,
    pub local2: T,
}

impl<T: Copy> RouteVec<T> {
    pub fn splat(v: T) -> Self {
        Self { expressway: v, local1: v, local2: v }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.expressway, self.local1, self.local2]
    }

    pub fn from_fn(mut f: impl FnMut(RouteId) -> T) -> Self {
        Self { expressway: f(RouteId::Expressway), local1: f(RouteId::Local1), local2: f(RouteId::Local2) }
    }
}

impl<T> std::ops::Index<RouteId> for RouteVec<T> {
    type Output = T;

    fn index(&self, route: RouteId) -> &T {
        match route {
            RouteId::Expressway => &self.expressway,
            RouteId::Local1 => &self.local1,
            RouteId::Local2 => &self.local2,
        }
    }
}

impl<T> std::ops::IndexMut<RouteId> for RouteVec<T> {
    fn index_mut(&mut self, route: RouteId) -> &mut T {
        match route {
            RouteId::Expressway => &mut self.expressway,
            RouteId::Local1 => &mut self.local1,
            RouteId::Local2 => &mut self.local2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub id: RouteId,
    /// Free-flow time in minutes.
    pub t0: f64,
    pub beta: f64,
    pub capacity: f64,
}

impl RouteSpec {
    pub fn travel_time(&self, volume: u32) -> f64 {
        // Parameters are validated when the scenario is built.
        bpr_travel_time(self.t0, self.beta, f64::from(volume), self.capacity).expect("validated route parameters")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdGroup {
    pub id: u8,
    pub members: Vec<TravelerId>,
    pub choice_set: [RouteId; 2],
}

impl OdGroup {
    /// The arterial of this group's choice set.
    pub fn local_route(&self) -> RouteId {
        if self.choice_set[0].is_local() {
            self.choice_set[0]
        } else {
            self.choice_set[1]
        }
    }
}

/// `t0 * (1 + beta * (volume / capacity)^4)`.
pub fn bpr_travel_time(t0: f64, beta: f64, volume: f64, capacity: f64) -> Result<f64, EnvError> {
    let all_finite = [t0, beta, volume, capacity].iter().all(|x| x.is_finite());
    if !all_finite {
        return Err(EnvError::InvalidBprInput("non-finite input".into()));
    }
    if t0 <= 0.0 {
        return Err(EnvError::InvalidBprInput(format!("t0 must be positive, got {t0}")));
    }
    if capacity <= 0.0 {
        return Err(EnvError::InvalidBprInput(format!("capacity must be positive, got {capacity}")));
    }
    if beta < 0.0 {
        return Err(EnvError::InvalidBprInput(format!("beta must be nonnegative, got {beta}")));
    }
    if volume < 0.0 {
        return Err(EnvError::InvalidBprInput(format!("volume must be nonnegative, got {volume}")));
    }
    let ratio = volume / capacity;
    Ok(t0 * (1.0 + beta * ratio.powi(4)))
}

/// Expressway / local split inside one OD group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub expressway: u32,
    pub local: u32,
}

impl GroupCounts {
    pub fn total(&self) -> u32 {
        self.expressway + self.local
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub period: u32,
    pub volume_by_route: RouteVec<u32>,
    pub time_by_route: RouteVec<f64>,
    /// Per-group splits keyed by group id; what travelers are shown.
    pub group_counts: BTreeMap<u8, GroupCounts>,
}

impl SystemState {
    pub fn total_volume(&self) -> u32 {
        self.volume_by_route.to_array().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub period: u32,
    pub own_route: RouteId,
    pub own_time: f64,
    pub group_counts: GroupCounts,
}

/// Routes and OD groups of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    routes: RouteVec<RouteSpec>,
    groups: Vec<OdGroup>,
    #[serde(skip)]
    membership: BTreeMap<TravelerId, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    routes: Vec<RouteSpec>,
    groups: Vec<OdGroup>,
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = EnvError;

    fn try_from(file: ScenarioFile) -> Result<Self, EnvError> {
        Scenario::new(file.routes, file.groups)
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        ScenarioFile { routes: s.routes.to_array().to_vec(), groups: s.groups }
    }
}

impl Default for Scenario {
    /// Nine travelers on expressway/local1, six on expressway/local2.
    fn default() -> Self {
        let routes = vec![
            RouteSpec { id: RouteId::Expressway, t0: 5.0, beta: 0.075, capacity: 3.0 },
            RouteSpec { id: RouteId::Local1, t0: 15.0, beta: 0.15, capacity: 5.0 },
            RouteSpec { id: RouteId::Local2, t0: 15.0, beta: 0.15, capacity: 5.0 },
        ];
        let groups = vec![
            OdGroup { id: 1, members: (1..=9).collect(), choice_set: [RouteId::Expressway, RouteId::Local1] },
            OdGroup { id: 2, members: (10..=15).collect(), choice_set: [RouteId::Expressway, RouteId::Local2] },
        ];
        Scenario::new(routes, groups).expect("default scenario is valid")
    }
}

impl Scenario {
    pub fn new(routes: Vec<RouteSpec>, groups: Vec<OdGroup>) -> Result<Self, EnvError> {
        if routes.len() != 3 {
            return Err(EnvError::InvalidScenario(format!("expected 3 routes, got {}", routes.len())));
        }
        let mut slots: RouteVec<Option<RouteSpec>> = RouteVec::default();
        for r in routes {
            bpr_travel_time(r.t0, r.beta, 0.0, r.capacity)
                .map_err(|e| EnvError::InvalidScenario(format!("route {}: {e}", r.id)))?;
            if slots[r.id].replace(r).is_some() {
                return Err(EnvError::InvalidScenario(format!("route {} defined twice", r.id)));
            }
        }
        let routes =
            RouteVec { expressway: slots.expressway.unwrap(), local1: slots.local1.unwrap(), local2: slots.local2.unwrap() };

        if groups.len() != 2 {
            return Err(EnvError::InvalidScenario(format!("expected 2 OD groups, got {}", groups.len())));
        }
        let mut membership = BTreeMap::new();
        for (idx, g) in groups.iter().enumerate() {
            let expected_local = match g.id {
                1 => RouteId::Local1,
                2 => RouteId::Local2,
                other => return Err(EnvError::InvalidScenario(format!("unknown group id {other}"))),
            };
            let mut set = g.choice_set;
            set.sort();
            if set != [RouteId::Expressway, expected_local] {
                return Err(EnvError::InvalidScenario(format!(
                    "group {} must choose between expressway and {expected_local}",
                    g.id
                )));
            }
            if g.members.is_empty() {
                return Err(EnvError::InvalidScenario(format!("group {} has no members", g.id)));
            }
            for &m in &g.members {
                if membership.insert(m, idx).is_some() {
                    return Err(EnvError::InvalidScenario(format!("traveler {m} belongs to two groups")));
                }
            }
        }
        if groups[0].id == groups[1].id {
            return Err(EnvError::InvalidScenario("duplicate group id".into()));
        }
        Ok(Scenario { routes, groups, membership })
    }

    pub fn from_json_file(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| EnvError::InvalidScenario(e.to_string()))
    }

    pub fn route(&self, id: RouteId) -> &RouteSpec {
        &self.routes[id]
    }

    pub fn routes(&self) -> &RouteVec<RouteSpec> {
        &self.routes
    }

    pub fn groups(&self) -> &[OdGroup] {
        &self.groups
    }

    pub fn travelers(&self) -> impl Iterator<Item = TravelerId> + '_ {
        self.membership.keys().copied()
    }

    pub fn traveler_count(&self) -> usize {
        self.membership.len()
    }

    pub fn group_of(&self, traveler: TravelerId) -> Result<&OdGroup, EnvError> {
        self.membership.get(&traveler).map(|&i| &self.groups[i]).ok_or(EnvError::UnknownTraveler(traveler))
    }

    pub fn group_by_id(&self, id: u8) -> Option<&OdGroup> {
        self.groups.iter().find(|g| g.id == id)
    }

    pub fn choice_set(&self, traveler: TravelerId) -> Result<[RouteId; 2], EnvError> {
        Ok(self.group_of(traveler)?.choice_set)
    }

    /// The other route of the traveler's choice set.
    pub fn alternative(&self, traveler: TravelerId, route: RouteId) -> Result<RouteId, EnvError> {
        let set = self.choice_set(traveler)?;
        if route == set[0] {
            Ok(set[1])
        } else if route == set[1] {
            Ok(set[0])
        } else {
            Err(EnvError::ChoiceOutsideSet { traveler, route })
        }
    }

    /// Route of the choice set with the lower free-flow time (first listed on ties).
    pub fn free_flow_preferred(&self, choice_set: [RouteId; 2]) -> RouteId {
        let [a, b] = choice_set;
        if self.routes[b].t0 < self.routes[a].t0 {
            b
        } else {
            a
        }
    }

    pub fn times_for_volumes(&self, volumes: &RouteVec<u32>) -> RouteVec<f64> {
        RouteVec::from_fn(|r| self.routes[r].travel_time(volumes[r]))
    }

    /// Aggregates one period of choices into the next system state.
    /// `prev` only supplies the period number.
    pub fn update_state(
        &self,
        choices: &BTreeMap<TravelerId, RouteId>,
        prev: Option<&SystemState>,
    ) -> Result<SystemState, EnvError> {
        for &traveler in choices.keys() {
            self.group_of(traveler)?;
        }
        let mut volumes = RouteVec::<u32>::default();
        let mut group_counts = BTreeMap::new();
        for g in &self.groups {
            let mut counts = GroupCounts::default();
            for &m in &g.members {
                let route = *choices.get(&m).ok_or(EnvError::MissingChoice(m))?;
                if !g.choice_set.contains(&route) {
                    return Err(EnvError::ChoiceOutsideSet { traveler: m, route });
                }
                volumes[route] += 1;
                if route.is_local() {
                    counts.local += 1;
                } else {
                    counts.expressway += 1;
                }
            }
            group_counts.insert(g.id, counts);
        }
        Ok(SystemState {
            period: prev.map_or(1, |p| p.period + 1),
            time_by_route: self.times_for_volumes(&volumes),
            volume_by_route: volumes,
            group_counts,
        })
    }

    /// What one traveler learns about a period: own time and own-group counts only.
    pub fn observe(&self, state: &SystemState, traveler: TravelerId, choice: RouteId) -> Result<Observation, EnvError> {
        let group = self.group_of(traveler)?;
        if !group.choice_set.contains(&choice) {
            return Err(EnvError::ChoiceOutsideSet { traveler, route: choice });
        }
        Ok(Observation {
            period: state.period,
            own_route: choice,
            own_time: state.time_by_route[choice],
            group_counts: state.group_counts.get(&group.id).copied().unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn split(g1_express: u32, g2_express: u32) -> BTreeMap<TravelerId, RouteId> {
        let mut choices = BTreeMap::new();
        for (i, id) in (1..=9).enumerate() {
            let r = if (i as u32) < g1_express { RouteId::Expressway } else { RouteId::Local1 };
            choices.insert(id, r);
        }
        for (i, id) in (10..=15).enumerate() {
            let r = if (i as u32) < g2_express { RouteId::Expressway } else { RouteId::Local2 };
            choices.insert(id, r);
        }
        choices
    }

    #[test]
    fn bpr_examples() {
        assert_abs_diff_eq!(bpr_travel_time(5.0, 0.075, 0.0, 3.0).unwrap(), 5.0, epsilon = 1e-12);
        // 5 + (3/8) * 11^4 / 3^4 = 5 + 5490.375 / 81
        let t = bpr_travel_time(5.0, 0.075, 11.0, 3.0).unwrap();
        assert_abs_diff_eq!(t, 5.0 + 5490.375 / 81.0, epsilon = 1e-9);
        assert_eq!(format!("{t:.2}"), "72.78");
        assert_abs_diff_eq!(bpr_travel_time(15.0, 0.15, 5.0, 5.0).unwrap(), 17.25, epsilon = 1e-12);
        assert_abs_diff_eq!(bpr_travel_time(5.0, 0.075, 15.0, 3.0).unwrap(), 239.375, epsilon = 1e-12);
    }

    #[test]
    fn bpr_rejects_bad_input() {
        assert!(bpr_travel_time(f64::NAN, 0.1, 1.0, 1.0).is_err());
        assert!(bpr_travel_time(5.0, 0.1, -1.0, 1.0).is_err());
        assert!(bpr_travel_time(5.0, 0.1, 1.0, 0.0).is_err());
        assert!(bpr_travel_time(0.0, 0.1, 1.0, 1.0).is_err());
        assert!(bpr_travel_time(5.0, -0.1, 1.0, 1.0).is_err());
        assert!(bpr_travel_time(5.0, 0.1, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn all_on_expressway() {
        let sc = Scenario::default();
        let s = sc.update_state(&split(9, 6), None).unwrap();
        assert_eq!(s.volume_by_route.to_array(), [15, 0, 0]);
        assert_abs_diff_eq!(s.time_by_route.expressway, 239.375, epsilon = 1e-12);
        assert_abs_diff_eq!(s.time_by_route.local2, 15.0, epsilon = 1e-12);
        assert_eq!(s.period, 1);
    }

    #[test]
    fn pooled_expressway_volume() {
        let sc = Scenario::default();
        // group 1: 5 express / 4 local1; group 2: 2 express / 4 local2
        let s = sc.update_state(&split(5, 2), None).unwrap();
        assert_eq!(s.volume_by_route.to_array(), [7, 4, 4]);
        assert_abs_diff_eq!(s.time_by_route.expressway, 16.115_740_740_740_74, epsilon = 1e-9);
        assert_abs_diff_eq!(s.time_by_route.local1, 15.9216, epsilon = 1e-9);
        assert_abs_diff_eq!(s.time_by_route.local2, 15.9216, epsilon = 1e-9);
        assert_eq!(s.group_counts[&1], GroupCounts { expressway: 5, local: 4 });
        assert_eq!(s.group_counts[&2], GroupCounts { expressway: 2, local: 4 });
    }

    #[test]
    fn period_follows_previous_state() {
        let sc = Scenario::default();
        let s1 = sc.update_state(&split(5, 2), None).unwrap();
        let s2 = sc.update_state(&split(0, 0), Some(&s1)).unwrap();
        assert_eq!(s2.period, 2);
        // prev does not influence times
        let fresh = sc.update_state(&split(0, 0), None).unwrap();
        assert_eq!(s2.time_by_route, fresh.time_by_route);
    }

    #[test]
    fn update_state_errors() {
        let sc = Scenario::default();
        let mut c = split(5, 2);
        c.remove(&3);
        assert_eq!(sc.update_state(&c, None), Err(EnvError::MissingChoice(3)));
        let mut c = split(5, 2);
        c.insert(3, RouteId::Local2);
        assert!(matches!(sc.update_state(&c, None), Err(EnvError::ChoiceOutsideSet { traveler: 3, .. })));
        let mut c = split(5, 2);
        c.insert(99, RouteId::Expressway);
        assert_eq!(sc.update_state(&c, None), Err(EnvError::UnknownTraveler(99)));
    }

    #[test]
    fn observation_is_partial() {
        let sc = Scenario::default();
        let s = sc.update_state(&split(5, 2), None).unwrap();
        let o = sc.observe(&s, 1, RouteId::Expressway).unwrap();
        assert_eq!(o.own_time, s.time_by_route.expressway);
        assert_eq!(o.group_counts, GroupCounts { expressway: 5, local: 4 });

        let s = sc.update_state(&split(9, 0), None).unwrap();
        let o = sc.observe(&s, 12, RouteId::Local2).unwrap();
        assert_eq!(o.group_counts, GroupCounts { expressway: 0, local: 6 });
        // only the chosen route's time is carried
        let json = serde_json::to_value(&o).unwrap();
        assert_eq!(json.as_object().unwrap().len(), 4);
        assert!(sc.observe(&s, 42, RouteId::Local2).is_err());
    }

    #[test]
    fn scenario_json_roundtrip_and_validation() {
        let sc = Scenario::default();
        let text = serde_json::to_string(&sc).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back.group_of(12).unwrap().id, 2);
        assert_eq!(back.route(RouteId::Expressway).capacity, 3.0);

        let bad = text.replace("\"local2\"]", "\"local1\"]");
        assert!(serde_json::from_str::<Scenario>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn volumes_conserved(bits in proptest::collection::vec(any::<bool>(), 15)) {
            let sc = Scenario::default();
            let choices: BTreeMap<_, _> = (1..=15u32)
                .map(|id| {
                    let set = sc.choice_set(id).unwrap();
                    (id, set[bits[id as usize - 1] as usize])
                })
                .collect();
            let s = sc.update_state(&choices, None).unwrap();
            prop_assert_eq!(s.total_volume(), 15);
            let g1 = s.group_counts[&1];
            let g2 = s.group_counts[&2];
            prop_assert_eq!(s.volume_by_route.expressway, g1.expressway + g2.expressway);
            for id in 1..=15u32 {
                let o = sc.observe(&s, id, choices[&id]).unwrap();
                prop_assert_eq!(o.own_time, s.time_by_route[choices[&id]]);
                prop_assert_eq!(o.group_counts.total() as usize, sc.group_of(id).unwrap().members.len());
            }
        }

        #[test]
        fn bpr_monotone(v1 in 0.0f64..1000.0, dv in 0.0f64..1000.0, beta in 0.0f64..2.0) {
            let a = bpr_travel_time(5.0, beta, v1, 3.0).unwrap();
            let b = bpr_travel_time(5.0, beta, v1 + dv, 3.0).unwrap();
            prop_assert!(b >= a);
        }
    }
}
