#[path = "common/grad_cases.rs"]
mod grad_cases;

use grad_cases::{run_case, CASES};

#[test]
fn every_primitive_matches_central_differences() {
    for name in CASES {
        for case in 0..20 {
            let err = run_case(name, case);
            assert!(err < 1e-4, "{name} case {case}: relative error {err:e}");
        }
    }
}
