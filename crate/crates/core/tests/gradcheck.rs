mod common;

use std::time::Instant;

#[test]
fn randomized_gradient_checks_across_all_ops() {
    let t0 = Instant::now();
    let suite = common::gradient_suite(17, 7).unwrap();
    assert!(suite.checks.len() >= 100, "only {} checks", suite.checks.len());
    for (name, g) in &suite.checks {
        assert!(g.max_rel_error < 1e-4, "{name}: {g:?}");
        assert!(g.coordinates > 0);
    }
    assert!(t0.elapsed().as_secs() < 60);
}

#[test]
fn network_check_covers_every_parameter() {
    let g = common::network_check(3).unwrap();
    assert!(g.max_rel_error < 1e-4, "{g:?}");
    assert_eq!(g.coordinates, 2 * 2 * 49 + 54 + 3 + 108 + 4 + 4 + 1 + 12 + 3);
}
