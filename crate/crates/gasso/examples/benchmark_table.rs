//! Reproduce a small benchmark table: median (MAD) estimation losses over
//! replicated datasets drawn around one fixed truth.
//!
//! Run with more replicates for publication-grade numbers, e.g.
//! `cargo run --release --example benchmark_table -- 50`.

use gasso::fitter::FitConfig;
use gasso::simgen::{run_benchmark, SettingSpec, METRIC_NAMES};

fn main() -> gasso::Result<()> {
    let replicates: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);

    let spec = SettingSpec::setting3(0);
    let modes = vec![
        ("one-step".to_string(), FitConfig::one_step()),
        ("full".to_string(), FitConfig::full()),
    ];
    let report = run_benchmark(&spec, replicates, &modes, None)?;

    println!("{} — {replicates} replicates", spec.id);
    print!("{:>12}", "metric");
    for m in &report.modes {
        print!("  {:>22}", m.label);
    }
    println!();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        print!("{name:>12}");
        for m in &report.modes {
            print!(
                "  {:>12.4} ({:.4})",
                m.median.fields()[k],
                m.mad.fields()[k]
            );
        }
        println!();
    }
    for m in &report.modes {
        if m.failures > 0 {
            println!("note: {} failed replicates under {}", m.failures, m.label);
        }
    }
    Ok(())
}
