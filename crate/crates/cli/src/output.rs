use serde_json::{json, Value};

use cantestbed::ids::Strategy;
use cantestbed::monitor::{LatencySummary, MetricsReport};

/// Print one NDJSON record tagged with its kind.
pub fn record(kind: &str, body: Value) {
    let mut v = json!({ "record": kind });
    match body {
        Value::Object(m) => v.as_object_mut().expect("object").extend(m),
        other => v["value"] = other,
    }
    println!("{v}");
}

pub fn metrics_table(title: &str, m: &MetricsReport) {
    println!("== {title}");
    print!("{m}");
    println!("false positive rate {:.3}%", m.false_positive_rate * 100.0);
    println!();
}

/// Mean latency of the ECU-coupled deployment over the controller-coupled one.
pub fn latency_ratio(rows: &[LatencySummary]) -> Option<f64> {
    let mean = |s: Strategy| rows.iter().find(|l| l.strategy == s).map(|l| l.mean_us);
    match (mean(Strategy::EcuCoupled), mean(Strategy::ControllerCoupled)) {
        (Some(e), Some(c)) if c > 0.0 => Some(e / c),
        _ => None,
    }
}

pub fn latency_table(rows: &[LatencySummary]) {
    if rows.is_empty() {
        return;
    }
    println!("== latency (SOF to verdict, us)");
    print!("{:<10}", "");
    for r in rows {
        print!(" {:>20}", r.strategy.name());
    }
    println!();
    let line = |name: &str, f: &dyn Fn(&LatencySummary) -> String| {
        print!("{name:<10}");
        for r in rows {
            print!(" {:>20}", f(r));
        }
        println!();
    };
    line("count", &|r| r.count.to_string());
    line("min", &|r| format!("{:.1}", r.min_us));
    line("mean", &|r| format!("{:.1}", r.mean_us));
    line("p50", &|r| format!("{:.1}", r.p50_us));
    line("p99", &|r| format!("{:.1}", r.p99_us));
    line("max", &|r| format!("{:.1}", r.max_us));
    if let Some(x) = latency_ratio(rows) {
        println!("ecu/controller mean ratio {x:.2}x");
    }
    println!();
}
