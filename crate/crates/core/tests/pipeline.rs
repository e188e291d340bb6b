use fsdp_core::devtools::generate::{random_forest_qcqp, Shape};
use fsdp_core::devtools::oracle::brute_force_qcqp;
use fsdp_core::exactness::{certify_and_solve, CertifyOptions, RecoveryOptions, Verdict};
use fsdp_core::format::{instance_to_json, parse_instance};

#[test]
fn file_to_certified_solution() {
    let inst = random_forest_qcqp(4, 2, Shape::Arrow, true, 17).unwrap();
    let inst = parse_instance(&instance_to_json(&inst)).unwrap();
    let (cert, sol) = certify_and_solve(&inst, &CertifyOptions::default(), &RecoveryOptions::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::Exact);
    let sol = sol.unwrap();
    assert!(inst.max_violation(&sol.x) <= 1e-6);
    let oracle = brute_force_qcqp(&inst, 500).unwrap();
    assert!((sol.value - oracle.value).abs() <= 1e-5 * (1.0 + oracle.value.abs()));
}

#[test]
fn uncertified_instances_return_no_solution() {
    let text = r#"{"n": 3, "objective": {"Q": [[1, 2, 1.0], [2, 3, 1.0], [1, 3, 1.0]]}}"#;
    let inst = parse_instance(text).unwrap();
    let (cert, sol) = certify_and_solve(&inst, &CertifyOptions::default(), &RecoveryOptions::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::NotApplicable);
    assert!(sol.is_none());
}
