//! Online calibration of the six rule-following travelers with the scripted
//! provider. Prints each agent's persona lineage and the losses that drove it.

use std::path::Path;

use routecal::env::Scenario;
use routecal::gateway::Gateway;
use routecal::harness::{generate_synthetic_cohort, run_calibration, ExperimentConfig, SyntheticCohortSpec};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let spec = SyntheticCohortSpec::from_json_file(&data.join("regime_cohort.json"))?;
    let config = ExperimentConfig::from_json_file(&data.join("scripted_config.json"))?;
    let trace = generate_synthetic_cohort(&spec, &Scenario::default())?;

    let gateway = Gateway::from_config(config.provider.clone())?;
    let run = run_calibration(&trace, &config, &gateway)?;

    for (agent, versions) in &run.store.agents {
        let truth = spec.travelers.iter().find(|t| t.id == *agent);
        println!("agent {agent}");
        if let Some(t) = truth {
            println!("  generating rule: {:?}, then {:?}", t.behavior, t.regime_switch.as_ref().map(|r| &r.behavior));
        }
        for v in versions {
            println!("  v{:<3} t={:<3} {}", v.version, v.period, v.text);
        }
        let steps: Vec<_> = run.log.calibration_records().filter(|r| r.agent == *agent).collect();
        let accepted = steps.iter().filter(|r| r.accepted).count();
        let mismatches: usize = steps.iter().map(|r| r.current_loss).sum();
        println!("  {} steps, {accepted} accepted, {mismatches} window mismatches in total", steps.len());
    }
    let stats = gateway.stats();
    println!("\n{} provider requests", stats.requests);
    Ok(())
}
