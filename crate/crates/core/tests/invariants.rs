mod common;

use common::invariants;

#[test]
fn fused_boxes_stay_in_cluster_envelope() {
    invariants::box_envelope(300).unwrap();
}

#[test]
fn fusion_ignores_input_order() {
    invariants::permutation(60).unwrap();
}

#[test]
fn reruns_are_byte_identical() {
    invariants::determinism().unwrap();
}

#[test]
fn metrics_ignore_monotone_rescaling() {
    invariants::monotone_rescaling().unwrap();
}

#[test]
fn vavg_converges_to_confident_box() {
    invariants::variance_limit().unwrap();
}
