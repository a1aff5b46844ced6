//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion. Set `TCSL_WORKERS` to use more threads.

use std::process::ExitCode;

use tcsl::checks::{criteria, run_criterion, Settings};
use tcsl::ensemble::worker_count;

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored; a bare
    // argument filters criteria by key.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let settings = Settings {
        workers: worker_count(None),
    };
    let mut failed = 0;
    for c in criteria() {
        if filter.as_deref().is_some_and(|f| !c.key.contains(f)) {
            continue;
        }
        let r = run_criterion(&c, &settings, None);
        let status = if r.pass() { "PASS" } else { "FAIL" };
        println!("{status} criterion {:>2} {:<18} {} ({:.1} s)", r.id, r.key, r.title, r.seconds);
        if let Some(e) = &r.error {
            println!("     error: {e}");
        }
        for row in r.rows.iter().filter(|row| !row.pass) {
            println!(
                "     {} measured {:.6e} expected {:.6e} [{}]",
                row.name, row.measured, row.expected, row.tolerance
            );
        }
        if !r.pass() {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
