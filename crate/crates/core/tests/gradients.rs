mod common;

#[test]
fn full_objective_matches_central_differences() {
    for seed in [1, 2] {
        let r = common::grad_check(seed, 1e-5, 1e-6).unwrap();
        assert!(r.checked > 500);
        assert!(r.max_rel_err <= 1e-4, "seed {seed}: rel {} abs {}", r.max_rel_err, r.max_abs_err);
    }
}
