use nalgebra::DMatrix;
use rwre_core::lattice::Site;
use rwre_core::percolation::build_cluster_map;
use rwre_core::stationary::{self, periodize, solve_phi, SolveMethod, TorusEnv};
use rwre_core::{EnvSpec, Environment, KernelField};

/// Dense transition matrix of the torus chain, built by wrapping each move.
fn dense_p(t: &TorusEnv) -> DMatrix<f64> {
    let bx = t.torus_box();
    let n = bx.len();
    let mut p = DMatrix::zeros(n, n);
    for (i, x) in bx.sites().enumerate() {
        let k = t.kernel(x).unwrap();
        p[(i, i)] += k.stay;
        for ax in 0..t.dim() {
            for s in [1, -1] {
                let j = bx.index(t.wrap(x.offset(ax, s))).unwrap();
                p[(i, j)] += k.axis[ax];
            }
        }
    }
    p
}

/// Left eigenvector of `P` for eigenvalue 1, scaled to mean one: the right
/// singular vector of `Pᵀ − I` with the smallest singular value.
fn eigen_oracle(t: &TorusEnv) -> Vec<f64> {
    let pt = dense_p(t).transpose();
    let n = pt.nrows();
    let a = pt - DMatrix::identity(n, n);
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let v: Vec<f64> = vt.row(k).iter().copied().collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter().map(|x| x / mean).collect()
}

#[test]
fn matches_dense_eigenvector() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let spec = EnvSpec::IidElliptic { shape: 0.5 + 0.1 * seed as f64, stay_shape: Some(1.0) };
        let env = Environment::generate(&spec, 2, seed, 2).unwrap();
        for n in 1..=2 {
            let t = periodize(&env, n).unwrap();
            let phi = solve_phi(&t, 1e-12).unwrap();
            let oracle = eigen_oracle(&t);
            for (a, b) in phi.values.iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
}

#[test]
fn uniform_walk_is_doubly_stochastic() {
    let env = Environment::generate(&EnvSpec::UniformSrw, 2, 7, 8).unwrap();
    for n in [2, 4, 8] {
        let phi = solve_phi(&periodize(&env, n).unwrap(), 1e-10).unwrap();
        assert_eq!(phi.method, SolveMethod::DoublyStochastic);
        assert!(phi.values.iter().all(|&v| (v - 1.0).abs() <= 1e-10));
    }
}

#[test]
fn density_is_stationary_and_positive() {
    let spec = EnvSpec::IidElliptic { shape: 1.5, stay_shape: None };
    let env = Environment::generate(&spec, 3, 3, 3).unwrap();
    let t = periodize(&env, 3).unwrap();
    let phi = solve_phi(&t, 1e-11).unwrap();
    assert!(t.stationarity_residual(&phi.values) < 1e-9);
    assert!(phi.values.iter().all(|&v| v > 0.0));
    let mean = phi.values.iter().sum::<f64>() / phi.values.len() as f64;
    assert!((mean - 1.0).abs() < 1e-12);
    assert_eq!(phi.at(Site::new(&[4, 0, 0])), phi.at(Site::new(&[-3, 0, 0])));
}

#[test]
fn diagnostics_exponents() {
    assert_eq!(stationary::beta(2), 2.0);
    assert_eq!(stationary::beta(3), 1.5);
    // α = (1 − 1/2 + 1/6)⁻¹ = 3/2
    assert!((stationary::alpha(2, 6.0) - 1.5).abs() < 1e-15);
    let env = Environment::generate(&EnvSpec::UniformSrw, 2, 0, 2).unwrap();
    let t = periodize(&env, 2).unwrap();
    let phi = solve_phi(&t, 1e-10).unwrap();
    let d = stationary::phi_bound_diagnostics(&t, &phi, 6.0).unwrap();
    assert!((d.phi_eps_beta - 0.25).abs() < 1e-12);
    assert!((d.inv_eps_p - 4.0).abs() < 1e-12);
}

#[test]
fn cluster_control_on_small_tori() {
    for seed in 0..5 {
        let spec = EnvSpec::IidMaxJump { xi0: 0.25, tail: 1.0 };
        let eps0 = spec.threshold_for_open_probability(2, 0.05).unwrap();
        let env = Environment::generate(&spec, 2, seed, 8).unwrap();
        let t = periodize(&env, 8).unwrap();
        let phi = solve_phi(&t, 1e-11).unwrap();
        let cmap = build_cluster_map(&env, eps0, 8).unwrap();
        let rep = stationary::cluster_control_check(&t, &phi, &cmap, 0.25).unwrap();
        assert!(rep.violations.is_empty(), "{rep:?}");
    }
}
