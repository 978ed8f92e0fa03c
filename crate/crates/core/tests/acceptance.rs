//! End-to-end acceptance run on the default configuration. Prints one
//! line per criterion and property; only the numbered criteria gate.

use std::io::Write;

use concept_slider::config::RunConfig;
use concept_slider::report::{emit_report, Inputs};

#[test]
fn acceptance() {
    let cfg = RunConfig::default();
    let inputs = Inputs::resolve(&cfg, None, None).unwrap();
    let out = tempfile::tempdir().unwrap();
    let report = emit_report(&cfg, &inputs, Some(out.path())).unwrap();
    // Straight to stderr so the lines show without --nocapture.
    let mut err = std::io::stderr().lock();
    for line in report.lines() {
        writeln!(err, "{line}").unwrap();
    }
    writeln!(err, "total {:.1}s", report.seconds).unwrap();
    drop(err);

    let ids: Vec<u32> = report.criteria.iter().map(|c| c.id).collect();
    assert_eq!(ids, (1..=11).collect::<Vec<_>>());
    let failed: Vec<String> = report.criteria.iter().filter(|c| !c.pass).map(|c| c.line()).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
    assert!(report.all_pass);
}
