// Runs the self-verification suites at reduced size and prints the table.

use spatial_ar::verify::{run_all, VerifyOptions};

pub fn run_example() -> spatial_ar::Result<()> {
    let options = VerifyOptions {
        causality_cases: 18,
        oracle_models: 3,
        metric_instances: 20,
        fixpoint_steps: 100,
        ..VerifyOptions::default()
    };
    let report = run_all(&options, None);
    print!("{}", report.table());
    assert!(report.all_passed());
    Ok(())
}

#[allow(dead_code)]
fn main() -> spatial_ar::Result<()> {
    run_example()
}
