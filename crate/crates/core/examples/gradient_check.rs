//! Finite-difference check of every parameter of the tiny model.
//!
//! cargo run --release --example gradient_check -- [seed]

use vremd::gradcheck::GradCheckConfig;
use vremd::verify::check_model;
use vremd::config::ModelConfig;

fn main() -> vremd::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = std::time::Instant::now();
    let r = check_model(&ModelConfig::tiny(), seed, &GradCheckConfig::default())?;
    println!(
        "seed {seed}: {} parameters, {} coordinates, {} offset redraws, max rel err {:.2e} ({:.1?})",
        r.params,
        r.report.coords_checked(),
        r.redraws,
        r.report.max_rel_err(),
        start.elapsed()
    );
    let mut worst: Vec<_> = r.report.params.iter().collect();
    worst.sort_by(|a, b| b.max_rel_err.total_cmp(&a.max_rel_err));
    for p in worst.iter().take(5) {
        println!("  {:<40} {:.2e}", p.name, p.max_rel_err);
    }
    println!("{}", if r.passed() { "PASS" } else { "FAIL" });
    Ok(())
}
