mod common;

use common::{stdout_json, vptk};

#[test]
fn default_dimensions_pass() {
    let o = vptk(&["kernel-check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["passed"], true);
    assert!(r["max_rel_err"].as_f64().unwrap() < 1e-4);
    assert!(r["softmax_max_dev"].as_f64().unwrap() <= 1e-12);
    assert_eq!(r["gradchecks"].as_array().unwrap().len(), 10);
}

#[test]
fn corrupted_gradients_fail() {
    let o = vptk(&["kernel-check", "--corrupt", "--cases", "5"]);
    assert_eq!(o.status.code(), Some(1));
    let r = stdout_json(&o);
    assert_eq!(r["passed"], false);
    assert!(r["max_rel_err"].as_f64().unwrap() > 1e-4);
}

#[test]
fn fixed_seed_gives_identical_reports() {
    let a = vptk(&["--seed", "3", "kernel-check", "--cases", "10", "--d-v", "4"]);
    let b = vptk(&["--seed", "3", "kernel-check", "--cases", "10", "--d-v", "4", "--threads", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn zero_dimension_is_rejected() {
    let o = vptk(&["kernel-check", "--d-v", "0"]);
    assert_eq!(o.status.code(), Some(1));
}
