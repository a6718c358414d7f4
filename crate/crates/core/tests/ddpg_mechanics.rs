mod support;

#[test]
fn soft_update_identities() {
    support::soft_update_identities().assert();
}

#[test]
fn td_targets_with_zero_discount_and_terminals() {
    support::td_target_identities().assert();
}

#[test]
fn replay_buffer_is_fifo_at_capacity() {
    support::buffer_fifo().assert();
}

#[test]
fn noiseless_training_is_reproducible() {
    support::bit_identical_training().assert();
}
