use super::*;

fn small() -> ChaosSetup {
    ChaosSetup {
        sizes: vec![2, 4, 8],
        replicas: 4,
        dt: 1e-2,
        t_end: 0.1,
        checkpoints: vec![0.05, 0.1],
        dx: 0.05,
        ..ChaosSetup::default()
    }
}

#[test]
fn no_interaction_couples_exactly() {
    let setup = ChaosSetup { kernel: KernelMode::None, sizes: vec![2, 3, 5], ..small() };
    let res = strong_coupling_experiment(&setup).unwrap();
    for row in res.rows_for("chaos-strong") {
        assert!(row.error <= 1e-20, "{row:?}");
    }
}

#[test]
fn row_layout_and_determinism() {
    let setup = small();
    let a = coupled_sweep(&setup, Parts { weak: true, strong: true }).unwrap();
    let b = coupled_sweep(&setup, Parts { weak: true, strong: true }).unwrap();
    assert_eq!(a, b);
    // 3 sizes x 2 times x 3 observables, for the weak and the control block
    assert_eq!(a.rows_for("chaos-weak").count(), 18);
    assert_eq!(a.rows_for("chaos-weak-control").count(), 18);
    assert_eq!(a.rows_for("chaos-strong").count(), 6);
    assert!(a.rows.iter().all(|r| r.error >= 0.0 && r.replicas == 4));
    assert!(a.rate("chaos-strong", "sup_i").is_some());
    assert!(a.failures.is_empty());
}

#[test]
fn strong_error_grows_with_time() {
    let res = strong_coupling_experiment(&small()).unwrap();
    for n in [2usize, 4, 8] {
        let rows: Vec<&ChaosRow> = res.rows_for("chaos-strong").filter(|r| r.n == n).collect();
        assert!(rows[0].error <= rows[1].error, "{rows:?}");
    }
}

#[test]
fn fixed_environment_shares_one_path() {
    let setup = ChaosSetup { fix_w: true, ..small() };
    assert_eq!(setup.bundle(0, 2).unwrap().w, setup.bundle(3, 2).unwrap().w);
    assert_ne!(setup.bundle(0, 2).unwrap().b, setup.bundle(3, 2).unwrap().b);
    let res = weak_error_experiment(&setup).unwrap();
    assert!(res.rows.iter().all(|r| r.experiment.ends_with("-fixw")));
}

#[test]
fn density_distance_vanishes_for_identical_equations() {
    let setup = ChaosSetup { taus: vec![0.4, 0.2], ..small() };
    let (same, _) = density_distances(&setup, 0, 0.025, true).unwrap();
    assert!(same.iter().all(|d| *d == 0.0));
    let (diff, _) = density_distances(&setup, 0, 0.025, false).unwrap();
    assert!(diff[0] > diff[1] && diff[1] > 0.0, "{diff:?}");
}

#[test]
fn invalid_setups_are_rejected() {
    assert!(coupled_sweep(&ChaosSetup { sizes: vec![], ..small() }, Parts { weak: true, strong: false }).is_err());
    assert!(coupled_sweep(&ChaosSetup { replicas: 0, ..small() }, Parts { weak: true, strong: false }).is_err());
    assert!(coupled_sweep(&ChaosSetup { dt: 0.03, ..small() }, Parts { weak: true, strong: false }).is_err());
}
