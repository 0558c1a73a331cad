//! End-to-end acceptance gate: one line per criterion, red if any fails.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines
//! on success too; on failure the panic message carries them.

use cusplab::accept::run_suite;

#[test]
fn acceptance_criteria() {
    let report = run_suite();
    let mut all = String::new();
    for line in report.lines() {
        println!("{line}");
        all.push_str(&line);
        all.push('\n');
    }
    assert!(
        report.all_passed(),
        "acceptance criteria failed: {:?}\n{all}",
        report.failed_ids()
    );
}
