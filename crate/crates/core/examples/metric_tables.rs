//! Metrics on a small hand-made prediction table.

use routecal::env::RouteId::{self, Expressway as E, Local1 as L1, Local2 as L2};
use routecal::metrics::{evaluate, ChoiceRow, FlowPoint};

fn row(period: u32, traveler: u32, predicted: RouteId, truth: RouteId, times: [f64; 2]) -> ChoiceRow {
    ChoiceRow {
        period,
        traveler,
        od_group: if traveler <= 9 { 1 } else { 2 },
        predicted,
        truth,
        predicted_time: times[0],
        predicted_alt_time: times[1],
        truth_time: times[0],
        truth_alt_time: times[1],
    }
}

fn main() -> anyhow::Result<()> {
    let rows = vec![
        row(1, 1, E, E, [20.0, 16.0]),
        row(2, 1, L1, L1, [15.9, 16.1]),
        row(3, 1, L1, E, [15.9, 17.0]),
        row(1, 10, L2, L2, [16.0, 18.0]),
        row(2, 10, L2, L2, [16.0, 18.0]),
        row(3, 10, E, L2, [25.0, 16.0]),
    ];
    let sim: Vec<FlowPoint> = (1..=3).map(|t| FlowPoint { period: t, volumes: [7, 4, 4] }).collect();
    let real: Vec<FlowPoint> = (1..=3).map(|t| FlowPoint { period: t, volumes: [6, 5, 4] }).collect();

    let r = evaluate("demo", &rows, Some((&sim, &real)))?;
    println!("accuracy {:.3}, weighted F1 {:.3} ({} averaging)", r.accuracy, r.weighted_f1, r.f1_averaging);
    println!("group F1 {:?}", r.group_f1);
    println!(
        "MAPE {:.1}%, MSE {:.4} (norm) / {:.4} (squared)",
        r.mape_percent.unwrap_or(f64::NAN),
        r.mse_as_written.unwrap(),
        r.mse_squared.unwrap()
    );
    println!("{}", serde_json::to_string_pretty(&r.per_agent)?);
    Ok(())
}
