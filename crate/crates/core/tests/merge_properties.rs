use mpi_core::simulate::simulate;

#[test]
fn random_operation_sequences_keep_merge_properties() {
    let mut merges = 0;
    let mut unmerges = 0;
    for seed in 0..100u64 {
        let report = simulate(seed, 500);
        assert!(report.ok(), "seed {seed}: {:?}", report.violations);
        assert_eq!(report.attempted, 500);
        merges += report.merges;
        unmerges += report.unmerges;
    }
    // The workload must actually exercise merging and its reversal.
    assert!(merges > 1_000, "{merges}");
    assert!(unmerges > 100, "{unmerges}");
}

#[test]
fn same_seed_same_final_state() {
    assert_eq!(simulate(42, 500).final_snapshot, simulate(42, 500).final_snapshot);
}
