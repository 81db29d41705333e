//! Property suites over the public API: fixed point, plant physics, solver,
//! baseline symmetry, dataset replay and model files.

mod support;

use support::Check;

fn pass(check: Check) {
    if let Err(e) = check {
        panic!("{e}");
    }
}

#[test]
fn quantize_is_idempotent() {
    pass(support::quantize_is_idempotent(256));
}

#[test]
fn quantize_is_monotone() {
    pass(support::quantize_is_monotone(256));
}

#[test]
fn quantize_error_is_at_most_half_an_lsb_inside_the_range() {
    pass(support::quantize_error_is_at_most_half_an_lsb(256));
}

#[test]
fn tanh_table_is_exact_on_every_q12_1_input() {
    pass(support::tanh_table_is_exact("Q12.1", "Q12.1"));
}

#[test]
fn tanh_table_is_exact_on_every_cartpole_intermediate() {
    pass(support::tanh_table_is_exact("Q18.8", "Q12.1"));
}

#[test]
fn frictionless_energy_drifts_under_one_percent() {
    pass(support::frictionless_energy_drift(24));
}

#[test]
fn rollout_gradient_matches_fourth_order_differences() {
    pass(support::rollout_gradient_matches_finite_differences(32));
}

#[test]
fn elite_cost_never_increases_within_a_solve() {
    pass(support::elite_cost_is_monotone(32));
}

#[test]
fn warm_start_is_no_worse_than_cold_on_average() {
    pass(support::warm_start_is_no_worse_than_cold());
}

#[test]
fn pure_pursuit_is_mirror_symmetric() {
    pass(support::pure_pursuit_is_mirror_symmetric(64));
}

#[test]
fn dataset_replay_reproduces_one_hundred_labels() {
    pass(support::dataset_replay_is_exact());
}

#[test]
fn model_file_round_trip_is_bit_exact() {
    pass(support::model_file_round_trip_is_bit_exact(6));
}
