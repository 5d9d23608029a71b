use nalgebra::{DMatrix, DVector};
use rwre_core::lattice::{linf_offsets, unit_offsets, Site};
use rwre_core::percolation::{self, build_cluster_map, build_coarse_kernel, build_kappa, kappas, Cluster, ClusterMap};
use rwre_core::{EnvSpec, Environment, KernelField};
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

fn percolating(dim: usize, p: f64, seed: u64, radius: i64) -> (Environment, ClusterMap, f64) {
    let xi0 = 1.0 / (2 * dim) as f64;
    let spec = EnvSpec::IidMaxJump { xi0, tail: 1.0 };
    let eps0 = spec.threshold_for_open_probability(dim, p).unwrap();
    let env = Environment::generate(&spec, dim, seed, radius).unwrap();
    let cmap = build_cluster_map(&env, eps0, radius).unwrap();
    (env, cmap, xi0)
}

/// Second-pass labeling: breadth-first flood fill from each unlabeled open site.
fn bfs_clusters(env: &Environment, eps0: f64) -> Vec<BTreeSet<Site>> {
    let bx = env.lattice_box();
    let open: HashSet<Site> = bx.sites().filter(|&s| env.kernel(s).unwrap().min_axis() < eps0).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in bx.sites() {
        if !open.contains(&s) || seen.contains(&s) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut q = VecDeque::from([s]);
        seen.insert(s);
        while let Some(x) = q.pop_front() {
            comp.insert(x);
            for v in unit_offsets(bx.dim) {
                let y = x + v;
                if open.contains(&y) && seen.insert(y) {
                    q.push_back(y);
                }
            }
        }
        out.push(comp);
    }
    out
}

#[test]
fn labeling_matches_flood_fill() {
    for seed in 0..10 {
        let dim = 2 + (seed % 2) as usize;
        let (env, cmap, _) = percolating(dim, 0.3, seed, if dim == 2 { 20 } else { 7 });
        let oracle: BTreeSet<BTreeSet<Site>> = bfs_clusters(&env, cmap.eps0()).into_iter().collect();
        let ours: BTreeSet<BTreeSet<Site>> =
            cmap.clusters().iter().map(|c| c.sites.iter().copied().collect()).collect();
        assert_eq!(ours, oracle, "seed {seed}");
        for c in cmap.clusters() {
            for &x in &c.sites {
                assert_eq!(cmap.label(x), Some(c.id as u32));
            }
        }
    }
}

fn brute_diameter(c: &Cluster) -> i64 {
    c.sites.iter().flat_map(|x| c.boundary.iter().map(move |y| (*x - *y).l1())).max().unwrap()
}

#[test]
fn boundary_and_diameter_by_brute_force() {
    let (_, cmap, _) = percolating(2, 0.3, 4, 15);
    for c in cmap.clusters() {
        let set: HashSet<Site> = c.sites.iter().copied().collect();
        let b: BTreeSet<Site> = c
            .sites
            .iter()
            .flat_map(|&x| linf_offsets(2).into_iter().map(move |v| x + v))
            .filter(|y| !set.contains(y))
            .collect();
        assert_eq!(c.boundary, b.into_iter().collect::<Vec<_>>());
        assert_eq!(c.diameter, brute_diameter(c));
        // l¹ neighbours of a cluster are closed
        for &x in &c.sites {
            for v in unit_offsets(2) {
                let y = x + v;
                if !set.contains(&y) {
                    assert_ne!(cmap.is_open(y), Some(true));
                }
            }
        }
    }
}

/// Every endpoint of a κ-monotone path from `x` inside `Ā_x` using steps of
/// weight at least `xi0`, by depth-first enumeration of all such paths.
fn reachable_by_enumeration(env: &Environment, closure: &HashSet<Site>, x: Site, kappa: &[i32], xi0: f64) -> BTreeSet<Site> {
    fn go(env: &Environment, closure: &HashSet<Site>, s: Site, kappa: &[i32], xi0: f64, out: &mut BTreeSet<Site>) {
        out.insert(s);
        let k = env.kernel(s).unwrap();
        for (i, &sg) in kappa.iter().enumerate() {
            let t = s.offset(i, sg);
            if k.axis[i] >= xi0 && closure.contains(&t) {
                go(env, closure, t, kappa, xi0, out);
            }
        }
    }
    let mut out = BTreeSet::new();
    go(env, closure, x, kappa, xi0, &mut out);
    out
}

#[test]
fn kappa_endpoints_match_exhaustive_enumeration() {
    let mut checked = 0;
    for seed in 0..6 {
        let (env, cmap, xi0) = percolating(2, 0.35, seed, 14);
        for c in cmap.clusters().iter().filter(|c| !c.censored && c.sites.len() <= 20) {
            let closure: HashSet<Site> = c.sites.iter().chain(&c.boundary).copied().collect();
            for &x in &c.sites {
                let ks = build_kappa(&env, &cmap, x, xi0).unwrap();
                for (kp, kappa) in ks.paths.iter().zip(kappas(2)) {
                    assert_eq!(kp.kappa, kappa);
                    let reach = reachable_by_enumeration(&env, &closure, x, &kappa, xi0);
                    let far = reach.iter().map(|y| (*y - x).l1()).max().unwrap();
                    let expect = *reach.iter().find(|y| (**y - x).l1() == far).unwrap();
                    assert_eq!(kp.end(), expect, "x = {x}, κ = {kappa:?}");
                    // the path is a monotone certificate of its own length
                    let len = kp.path.len() as i64 - 1;
                    let disp = kp.end() - x;
                    assert_eq!((0..2).map(|i| kappa[i] as i64 * disp.0[i] as i64).sum::<i64>(), len);
                    assert!(len <= c.diameter + 1);
                    for w in kp.path.windows(2) {
                        assert_eq!((w[1] - w[0]).l1(), 1);
                        assert!(closure.contains(&w[1]));
                    }
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 20, "only {checked} sites exercised");
}

/// Exit law from `Λ` by dense linear algebra: `a = e_x (I − Q)^{-1} R`.
fn dense_exit_law(env: &Environment, lambda: &[Site], x: Site) -> BTreeMap<Site, f64> {
    let m = lambda.len();
    let idx: BTreeMap<Site, usize> = lambda.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut q = DMatrix::<f64>::zeros(m, m);
    let mut exits: Vec<Vec<(Site, f64)>> = vec![Vec::new(); m];
    for (i, &s) in lambda.iter().enumerate() {
        let k = env.kernel(s).unwrap();
        q[(i, i)] += k.stay;
        for ax in 0..env.dim() {
            for sg in [1, -1] {
                let y = s.offset(ax, sg);
                match idx.get(&y) {
                    Some(&j) => q[(i, j)] += k.axis[ax],
                    None => exits[i].push((y, k.axis[ax])),
                }
            }
        }
    }
    let g = (DMatrix::identity(m, m) - q).try_inverse().unwrap();
    let row: DVector<f64> = g.row(idx[&x]).transpose();
    let mut out = BTreeMap::new();
    for (i, ex) in exits.iter().enumerate() {
        for &(y, w) in ex {
            *out.entry(y).or_insert(0.0) += row[i] * w;
        }
    }
    out
}

#[test]
fn coarse_kernel_matches_dense_solve() {
    for seed in 0..4 {
        let (env, cmap, xi0) = percolating(2, 0.25, seed, 12);
        for c in cmap.clusters().iter().filter(|c| !c.censored).take(8) {
            let x = c.sites[0];
            let ks = build_kappa(&env, &cmap, x, xi0).unwrap();
            let ours: BTreeMap<Site, f64> = build_coarse_kernel(&env, &ks).unwrap().into_iter().collect();
            let oracle = dense_exit_law(&env, &ks.lambda, x);
            assert_eq!(ours.keys().collect::<Vec<_>>(), oracle.keys().collect::<Vec<_>>());
            for (y, a) in &ours {
                assert!((a - oracle[y]).abs() < 1e-12, "{y}: {a} vs {}", oracle[y]);
            }
        }
    }
}

#[test]
fn censored_clusters_are_refused() {
    let (env, cmap, xi0) = percolating(2, 0.4, 2, 6);
    let edge = cmap.clusters().iter().find(|c| c.censored).expect("some cluster reaches the edge");
    let e = build_kappa(&env, &cmap, edge.sites[0], xi0).unwrap_err();
    assert!(matches!(e, rwre_core::Error::Censored(_)));
}

#[test]
fn diameters_bounded_without_open_sites() {
    let env = Environment::generate(&EnvSpec::UniformSrw, 3, 0, 2).unwrap();
    let (ok, censored) = percolation::diameters_bounded(&env, 0.1, 4.0, 0).unwrap();
    assert!(ok);
    assert_eq!(censored, 0);
}
