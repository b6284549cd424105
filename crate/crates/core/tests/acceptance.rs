//! Acceptance battery: one test per criterion, each printing a PASS/FAIL line.
//!
//! The battery runs once and is shared; run with `--nocapture` to see the lines.

use std::sync::OnceLock;

use darkspace::acceptance::{run_all, CriterionResult, Fixture};

fn battery() -> &'static [CriterionResult] {
    static RESULTS: OnceLock<Vec<CriterionResult>> = OnceLock::new();
    RESULTS.get_or_init(|| run_all(&Fixture::default()).expect("reference fixture is valid"))
}

fn check(id: u8) {
    let r = battery().iter().find(|r| r.id == id).expect("criterion present");
    println!("{}", r.line());
    if let Some(report) = &r.report {
        println!("    {report}");
    }
    assert!(r.pass, "{}", r.line());
}

#[test]
fn criterion_1_spin32_purity_loss() {
    check(1);
}

#[test]
fn criterion_2_algebraic_scaling() {
    check(2);
}

#[test]
fn criterion_3_effective_equation_accuracy() {
    check(3);
}

#[test]
fn criterion_4_trivial_holonomy() {
    check(4);
}

#[test]
fn criterion_5_effective_jump_closed_form() {
    check(5);
}

#[test]
fn criterion_6_gauge_covariance() {
    check(6);
}

#[test]
fn criterion_7_kernel_and_asymptotic_channel() {
    check(7);
}

#[test]
fn criterion_8_structural_invariants() {
    check(8);
}

#[test]
fn criterion_9_purity_formula_cross_check() {
    check(9);
}
