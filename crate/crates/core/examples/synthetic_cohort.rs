//! Generates the regime-switch cohort used by the acceptance suite and shows
//! how the rule-following travelers change behavior at period 40.

use std::path::Path;

use routecal::env::Scenario;
use routecal::harness::{generate_synthetic_cohort, SyntheticCohortSpec};
use routecal::metrics::behavior_vector;

fn main() -> anyhow::Result<()> {
    let spec_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/regime_cohort.json");
    let spec = SyntheticCohortSpec::from_json_file(&spec_path)?;
    let trace = generate_synthetic_cohort(&spec, &Scenario::default())?;
    println!("{} periods, seed {}", trace.periods(), spec.seed);

    println!("\n{:>8} {:>10} {:>10}   (P(switch|loss), P(stay|win)) before / after", "traveler", "local 1-40", "local 41+");
    let shares = trace.shares(40);
    for t in &spec.travelers {
        let local: Vec<u32> = shares.iter().filter(|r| r.traveler == t.id).map(|r| r.local).collect();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let before = behavior_vector(&trace.day_outcomes(t.id, 1, 40));
        let after = behavior_vector(&trace.day_outcomes(t.id, 41, trace.periods()));
        println!(
            "{:>8} {:>10} {:>10}   ({}, {}) / ({}, {})",
            t.id,
            local[0],
            local[1..].iter().sum::<u32>(),
            fmt(before.c_minus),
            fmt(before.s_minus),
            fmt(after.c_minus),
            fmt(after.s_minus)
        );
    }

    let out = std::env::temp_dir().join("routecal_regime_trace.csv");
    trace.save(&out)?;
    println!("\ntrace written to {}", out.display());
    Ok(())
}
