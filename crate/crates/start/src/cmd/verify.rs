use std::time::Instant;

use crate::checks::{suite, Fault};
use crate::cli::VerifyArgs;
use crate::error::{CliError, Result};

pub fn run(args: &VerifyArgs) -> Result<()> {
    let fault = Fault {
        scan_scale: if args.break_scan { 1.0 + 1e-6 } else { 1.0 },
    };
    let checks: Vec<_> = suite()
        .into_iter()
        .filter(|c| match &args.filter {
            Some(f) => c.group.contains(f.as_str()) || c.name.contains(f.as_str()),
            None => true,
        })
        .collect();
    if checks.is_empty() {
        return Err(CliError::Usage("no check matches the filter".into()));
    }
    println!("{:<6} {:<13} {:<40} {:>10} {:>10} {:>8}", "status", "group", "check", "measured", "tolerance", "secs");
    let mut failed = 0;
    for c in &checks {
        let t0 = Instant::now();
        let out = (c.run)(&fault);
        let secs = t0.elapsed().as_secs_f64();
        if !out.passed {
            failed += 1;
        }
        println!(
            "{:<6} {:<13} {:<40} {:>10.2e} {:>10.1e} {:>8.2}  {}",
            if out.passed { "PASS" } else { "FAIL" },
            c.group,
            c.name,
            out.measured,
            out.tolerance,
            secs,
            out.detail
        );
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} check(s) failed")));
    }
    Ok(())
}
