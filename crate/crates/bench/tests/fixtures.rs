//! The benchmark fixtures build and roll out.

use clrm_bench::Desk;

#[test]
fn desk_fixture_rolls_out() {
    let desk = Desk::new(2);
    assert_eq!(desk.assets.len(), 2);
    let env = desk.env();
    let policy = desk.global_policy(&env);
    let jobs = desk.jobs(4);
    assert_eq!(jobs.iter().filter(|j| j.asset == 1).count(), 2);
    let trajs = desk.trajectories(&env, &policy, 4);
    assert_eq!(trajs.len(), 4);
    for t in &trajs {
        assert_eq!(t.rewards().len(), 19);
        assert!(t.rewards().iter().all(|r| r.is_finite()));
    }
}
