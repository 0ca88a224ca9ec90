mod common;

use common::*;

#[test]
fn monoid_laws_hold_on_random_triples() {
    monoid_laws(10_000).unwrap();
}

#[test]
fn derived_relations_match_naive_closures() {
    relations_match_oracle(2_000).unwrap();
}

#[test]
fn lowering_then_raising_is_the_identity() {
    low_high_round_trip(2_000).unwrap();
}

#[test]
fn replay_order_does_not_matter_on_arc_prefixes() {
    let n = replay_determinism(1, 3).unwrap();
    assert!(n > 0);
}

#[test]
fn every_explored_configuration_has_four_state_locations() {
    let n = four_state_lemma(&four_state_programs()[..2]).unwrap();
    assert!(n > 0);
}

#[test]
fn validated_plans_never_commit_undetermined_release_events() {
    let n = plans_not_release().unwrap();
    assert!(n > 0);
}

#[test]
fn random_graphs_are_mostly_nontrivial() {
    let sizes: Vec<usize> = (0..50).map(|s| random_well_formed(s, 12).len()).collect();
    assert!(sizes.iter().all(|&n| (3..=12).contains(&n)));
    assert!(sizes.iter().any(|&n| n >= 8));
}
