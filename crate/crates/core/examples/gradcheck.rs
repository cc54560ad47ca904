//! Finite-difference gradient check of every variant on a (4, 16) batch.

use prkan::gradcheck::{default_cases, run_suite, Suite};

fn main() -> prkan::Result<()> {
    let suite = Suite::default();
    let mut failed = 0;
    for o in run_suite(&suite, &default_cases(suite.width))? {
        println!(
            "{:<20} max_rel_err={:.3e} worst={} {}",
            o.label,
            o.max_error,
            o.worst,
            if o.passed { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!o.passed);
    }
    println!("{failed} failures at tolerance {:e}", suite.tolerance);
    Ok(())
}
