//! The acceptance criteria, one line per criterion, followed by the negative controls.

use nlad_cli::acceptance;

#[test]
fn acceptance_criteria() {
    let work = tempfile::tempdir().unwrap();
    let results = acceptance::run_all(work.path(), acceptance::default_seed(), |c| println!("{}", c.line()));
    let controls = acceptance::negative_controls(acceptance::default_seed());
    for c in &controls {
        println!("[{}] control: {} ({})", if c.caught { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    assert_eq!(results.len(), 11);
    let failing: Vec<String> = results.iter().filter(|c| !c.passed).map(|c| c.line()).collect();
    assert!(failing.is_empty(), "failing criteria:\n{}", failing.join("\n"));
    assert!(controls.iter().all(|c| c.caught));
}
