//! Day-to-day loop on the two-OD network with fixed choices: what each
//! traveler observes, and how volume on the shared expressway sets its time.
//!
//! ```text
//! cargo run --example network_dynamics
//! ```

use std::collections::BTreeMap;

use routecal::env::{bpr_travel_time, RouteId, Scenario};

fn main() -> anyhow::Result<()> {
    let scenario = Scenario::default();

    println!("expressway time by volume");
    for v in [0, 3, 7, 11, 15] {
        println!("  {v:>2} vehicles  {:>8.3} min", bpr_travel_time(5.0, 0.075, f64::from(v), 3.0)?);
    }

    let mut prev = None;
    for day in 0..3u32 {
        let mut choices = BTreeMap::new();
        for a in scenario.travelers() {
            let set = scenario.choice_set(a)?;
            // more travelers drift onto the expressway each day
            let route = if a % 3 < day { set[0] } else { set[1] };
            choices.insert(a, route);
        }
        let state = scenario.update_state(&choices, prev.as_ref())?;
        println!(
            "\nperiod {}: volumes {:?}, times {:.2?}",
            state.period,
            state.volume_by_route.to_array(),
            state.time_by_route.to_array()
        );
        for a in [1, 10] {
            let obs = scenario.observe(&state, a, choices[&a])?;
            println!(
                "  traveler {a:>2} took {:<10} {:>7.2} min; group split {}/{}",
                obs.own_route.to_string(),
                obs.own_time,
                obs.group_counts.expressway,
                obs.group_counts.local
            );
        }
        prev = Some(state);
    }

    let all: BTreeMap<_, _> = scenario.travelers().map(|a| (a, RouteId::Expressway)).collect();
    let jam = scenario.update_state(&all, None)?;
    println!("\neveryone on the expressway: {} min", jam.time_by_route[RouteId::Expressway]);
    Ok(())
}
