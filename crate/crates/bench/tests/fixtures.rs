use superq_bench::fixture;
use superq_core::{alm_solve, AlmSettings, ObjectiveKind};

#[test]
fn fixtures_are_deterministic() {
    let a = fixture(256, 8, 0.1, ObjectiveKind::DiagQuadratic, 9);
    let b = fixture(256, 8, 0.1, ObjectiveKind::DiagQuadratic, 9);
    assert_eq!(a.values, b.values);
    assert_eq!(a.problem, b.problem);
}

#[test]
fn small_alm_fixture_solves() {
    let f = fixture(512, 16, 0.05, ObjectiveKind::Linear, 4);
    let res = alm_solve(&f.problem, &AlmSettings::default(), None).unwrap();
    assert!(res.converged, "{:?}", res.residuals);
}
