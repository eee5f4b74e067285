use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use routecal::env::Scenario;
use routecal::gateway::{BackendKind, Gateway};
use routecal::harness::{
    evaluate_run, read_trace, report, run_calibration, simulate_closed_loop, simulate_controlled, ExperimentConfig, HumanTrace,
    Method, ModelSet, PeriodRange, PersonaStore, SimulationMode, SyntheticCohortSpec,
};
use routecal::metrics::MetricReport;

#[derive(Parser)]
#[command(name = "routecal", version, about = "Persona calibration for day-to-day route choice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Http,
    Scripted,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a choice trace and print per-traveler route shares.
    Ingest {
        csv: PathBuf,
        /// Periods per share block.
        #[arg(long, default_value_t = 80)]
        block: u32,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic cohort trace from a spec file.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Calibrate personas over the training range.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "calibration")]
        out: PathBuf,
    },
    /// Simulate the test range with one or more methods.
    Simulate {
        #[arg(long, default_value = "controlled")]
        mode: SimulationMode,
        #[arg(long)]
        range: Option<PeriodRange>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        #[arg(long)]
        trace: PathBuf,
        /// Persona store written by `calibrate`; required for `ours`.
        #[arg(long)]
        personas: Option<PathBuf>,
        #[arg(long = "method", default_values_t = [Method::Ours, Method::Base])]
        methods: Vec<Method>,
        /// Each method's run goes to `<out>/<method>`.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Score saved runs against the recorded trace; writes `metrics.json` into each run.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare evaluated runs; the first run is the reference method.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load_config(path: &Path, backend: Option<Backend>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_json_file(path).with_context(|| format!("reading config {}", path.display()))?;
    if let Some(b) = backend {
        config.provider.backend = match b {
            Backend::Http => BackendKind::Http,
            Backend::Scripted => BackendKind::Scripted,
        };
        config.seed_everything();
        config.validate()?;
    }
    Ok(config)
}

fn scenario_of(config: Option<&Path>) -> Result<Scenario> {
    Ok(match config {
        Some(p) => load_config(p, None)?.scenario,
        None => Scenario::default(),
    })
}

fn load_trace(path: &Path, scenario: Scenario) -> Result<HumanTrace> {
    let file = File::open(path).with_context(|| format!("opening trace {}", path.display()))?;
    read_trace(BufReader::new(file), scenario).with_context(|| format!("invalid trace {}", path.display()))
}

fn ingest(csv: &Path, block: u32, config: Option<&Path>) -> Result<()> {
    if block == 0 {
        bail!("--block must be positive");
    }
    let trace = load_trace(csv, scenario_of(config)?)?;
    eprintln!("{}: {} periods, {} travelers", csv.display(), trace.periods(), trace.scenario().traveler_count());
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["traveler_id", "first_period", "last_period", "expressway", "local", "expressway_pct", "local_pct"])?;
    for r in trace.shares(block) {
        w.write_record([
            r.traveler.to_string(),
            r.first_period.to_string(),
            r.last_period.to_string(),
            r.expressway.to_string(),
            r.local.to_string(),
            format!("{:.1}", 100.0 * r.expressway_share),
            format!("{:.1}", 100.0 * r.local_share),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn synth(spec: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = SyntheticCohortSpec::from_json_file(spec)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let trace = routecal::harness::generate_synthetic_cohort(&spec, &Scenario::default())?;
    trace.save(out)?;
    eprintln!("wrote {} periods to {}", trace.periods(), out.display());
    Ok(())
}

fn calibrate(config: &Path, backend: Option<Backend>, trace: &Path, out: &Path) -> Result<()> {
    let config = load_config(config, backend)?;
    let trace = load_trace(trace, config.scenario.clone())?;
    let gateway = Gateway::from_config(config.provider.clone())?;
    let run = run_calibration(&trace, &config, &gateway)?;
    std::fs::create_dir_all(out)?;
    run.store.save(&out.join("personas.json"))?;
    run.log.save(&out.join("run_log.jsonl"))?;
    let stats = gateway.stats();
    eprintln!(
        "calibrated {} agents: {} requests, {} cache hits, {} backend calls",
        run.store.agents.len(),
        stats.requests,
        stats.cache_hits,
        stats.backend_calls
    );
    for (agent, why) in &run.failures {
        eprintln!("agent {agent} failed: {why}");
    }
    if !run.failures.is_empty() {
        bail!("{} agents failed to calibrate", run.failures.len());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    mode: SimulationMode,
    range: Option<PeriodRange>,
    config: &Path,
    backend: Option<Backend>,
    trace: &Path,
    personas: Option<&Path>,
    methods: &[Method],
    out: &Path,
) -> Result<()> {
    let config = load_config(config, backend)?;
    let range = range.unwrap_or(config.test_range);
    let trace = load_trace(trace, config.scenario.clone())?;
    let store = personas.map(PersonaStore::load).transpose()?;
    let gateway = Gateway::from_config(config.provider.clone())?;
    for &method in methods {
        let result = match mode {
            SimulationMode::Controlled => {
                let set = ModelSet::build(method, &config, store.as_ref(), &config.agent_ids())?;
                simulate_controlled(&set, &trace, range, &gateway)?
            }
            SimulationMode::Closed => {
                let everyone: Vec<_> = config.scenario.travelers().collect();
                let set = ModelSet::build(method, &config, store.as_ref(), &everyone)?;
                let history: BTreeMap<_, _> =
                    everyone.iter().map(|&a| (a, trace.memory(a, range.first.saturating_sub(1)))).collect();
                let truth = trace.require_range(range.first, range.last).is_ok().then_some(&trace);
                simulate_closed_loop(&set, &config.scenario, range, history, &gateway, truth)?
            }
        };
        let dir = out.join(method.as_str());
        result.save(&dir)?;
        eprintln!("{method}: {} decisions over {range} -> {}", result.choices.len(), dir.display());
    }
    Ok(())
}

fn evaluate(truth: &Path, runs: &[PathBuf], config: Option<&Path>) -> Result<()> {
    let trace = load_trace(truth, scenario_of(config)?)?;
    for dir in runs {
        let m = evaluate_run(dir, &trace).with_context(|| format!("evaluating {}", dir.display()))?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&m)? + "\n")?;
        println!(
            "{}\taccuracy {:.3}\tweighted F1 {:.3}\tMAPE {}",
            m.method,
            m.accuracy,
            m.weighted_f1,
            m.mape_percent.map_or("-".into(), |x| format!("{x:.1}%"))
        );
    }
    Ok(())
}

fn report_runs(out: &Path, runs: &[PathBuf]) -> Result<()> {
    let reports = runs
        .iter()
        .map(|dir| {
            let path = dir.join("metrics.json");
            let text = std::fs::read_to_string(&path).with_context(|| format!("{} (run `evaluate` first)", path.display()))?;
            Ok(serde_json::from_str::<MetricReport>(&text)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let bundle = report(reports);
    bundle.save(out)?;
    if let Some(rates) = &bundle.win_rates {
        for r in rates {
            println!("{} vs {} ({:?}): {}/{} = {:.3}", r.method, r.versus, r.metric, r.wins, r.agents, r.rate);
        }
    }
    eprintln!("report written to {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Ingest { csv, block, config } => ingest(&csv, block, config.as_deref()),
        Command::Synth { spec, seed, out } => synth(&spec, seed, &out),
        Command::Calibrate { config, backend, trace, out } => calibrate(&config, backend, &trace, &out),
        Command::Simulate { mode, range, config, backend, trace, personas, methods, out } => {
            simulate(mode, range, &config, backend, &trace, personas.as_deref(), &methods, &out)
        }
        Command::Evaluate { truth, runs, config } => evaluate(&truth, &runs, config.as_deref()),
        Command::Report { out, runs } => report_runs(&out, &runs),
    }
}
