//! Closed-loop run: every traveler's choices feed back into everyone's
//! travel times. Mixes rule personas with the bounded-rationality baseline.

use std::collections::BTreeMap;

use routecal::agent::{Persona, PersonaAgent, RetrievalConfig};
use routecal::baselines::{BoundedLlm, BoundedParams};
use routecal::env::Scenario;
use routecal::gateway::Gateway;
use routecal::harness::{simulate_closed_loop, ModelSet, PeriodRange};

fn main() -> anyhow::Result<()> {
    let scenario = Scenario::default();
    let gateway = Gateway::scripted(3);

    let mut models = ModelSet::new("mixed");
    for a in scenario.travelers() {
        if a % 4 == 0 {
            models.insert(a, BoundedLlm { params: BoundedParams::default(), seed: 3 });
        } else {
            let rule = if a % 2 == 0 {
                "PREFER NONE UNLESS mean(short) > 20 STAY_BIAS weak"
            } else {
                "PREFER expressway UNLESS last(short) > 18"
            };
            models.insert(a, PersonaAgent::new(Persona::new(rule)?, RetrievalConfig::default()));
        }
    }

    let result = simulate_closed_loop(&models, &scenario, PeriodRange::new(1, 60), BTreeMap::new(), &gateway, None)?;
    println!("period  expressway  local1  local2");
    for f in result.flows.iter().take(15) {
        println!("{:>6}  {:>10}  {:>6}  {:>6}", f.period, f.volumes[0], f.volumes[1], f.volumes[2]);
    }
    let mean_express = result.flows.iter().map(|f| f64::from(f.volumes[0])).sum::<f64>() / result.flows.len() as f64;
    println!("mean expressway volume {mean_express:.2}, {} decisions logged", result.log.records.len());
    Ok(())
}
