//! Calibrates, then predicts held-out periods 81-120 with the calibrated
//! personas and the three baselines, and prints the comparison tables.

use std::path::Path;

use routecal::env::Scenario;
use routecal::gateway::Gateway;
use routecal::harness::{
    generate_synthetic_cohort, report, run_calibration, simulate_controlled, ExperimentConfig, Method, ModelSet,
    SyntheticCohortSpec,
};
use routecal::metrics::evaluate;

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let spec = SyntheticCohortSpec::from_json_file(&data.join("regime_cohort.json"))?;
    let config = ExperimentConfig::from_json_file(&data.join("scripted_config.json"))?;
    let trace = generate_synthetic_cohort(&spec, &Scenario::default())?;
    let gateway = Gateway::from_config(config.provider.clone())?;
    let agents = config.agent_ids();

    let calibration = run_calibration(&trace, &config, &gateway)?;
    let range = config.test_range;
    let real = trace.flows(range.first, range.last);

    let mut reports = Vec::new();
    for method in Method::ALL {
        let set = ModelSet::build(method, &config, Some(&calibration.store), &agents)?;
        let sim = simulate_controlled(&set, &trace, range, &gateway)?;
        reports.push(evaluate(method.as_str(), &sim.rows, Some((&sim.flows, &real)))?);
    }

    println!("{:<10} {:>8} {:>8} {:>8}", "method", "accuracy", "F1", "cosine");
    for r in &reports {
        let cos = r.mean_cosine.map_or("-".into(), |c| format!("{c:.3}"));
        println!("{:<10} {:>8.3} {:>8.3} {:>8}", r.method, r.accuracy, r.weighted_f1, cos);
    }

    let bundle = report(reports);
    for w in bundle.win_rates.iter().flatten() {
        println!("{} beats {} on {}/{} agents ({:?})", w.method, w.versus, w.wins, w.agents, w.metric);
    }
    for t in &bundle.ranks {
        let ranks: Vec<String> = t.methods.iter().zip(&t.average_rank).map(|(m, r)| format!("{m} {r:.2}")).collect();
        println!("average rank by {:?}: {}", t.metric, ranks.join(", "));
    }
    Ok(())
}
