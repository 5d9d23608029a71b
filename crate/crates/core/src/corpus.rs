//! Randomized instances for the exact checkers. Instance `i` of a corpus is
//! a pure function of `(master seed, i)`.

use crate::elliptic::{self, CutoffProfile, CutoffReport, JumpOperator, LatticeDomain, MpRecord, MviRecord};
use crate::env::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::lattice::{euclidean_ball, LatticeBox, Site};
use crate::percolation::{self, build_cluster_map, ClusterMap, Mp2Record, Mvi2Record};
use crate::rng::{self, Stream};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Extra radius around a domain when labeling clusters.
pub const CLUSTER_MARGIN: i64 = 12;
/// Environment seeds tried before an instance whose clusters keep
/// reaching the labeled box edge is given up.
pub const MAX_ATTEMPTS: u64 = 20;

fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

/// Max-jump spec with floor `1/(2d)`, a random tail and an `ε_0` giving the
/// requested open probability.
pub fn max_jump_setup(dim: usize, tail: f64, p_open: f64) -> Result<(EnvSpec, f64, f64)> {
    let xi0 = 1.0 / (2 * dim) as f64;
    let spec = EnvSpec::IidMaxJump { xi0, tail };
    let eps0 = if p_open <= 0.0 {
        // p = 0 exactly would force ε_0 = 0; this floor is met by a
        // sampled weight with probability of order 1e-6 per site
        1e-12
    } else {
        spec.threshold_for_open_probability(dim, p_open)
            .ok_or_else(|| Error::InvalidSpec(format!("no threshold for p = {p_open}")))?
    };
    Ok((spec, xi0, eps0))
}

/// Coarse operator for `sites` in the environment `(spec, seed)`, retrying
/// successive environment seeds while a needed cluster is censored.
/// Returns the environment seed used along with the structures.
pub fn coarse_setup(
    spec: &EnvSpec,
    dim: usize,
    eps0: f64,
    xi0: f64,
    sites: &[Site],
    base_seed: u64,
) -> Result<(u64, Environment, ClusterMap, JumpOperator)> {
    let reach = sites.iter().map(Site::linf).max().unwrap_or(0);
    let radius = reach + CLUSTER_MARGIN;
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = rng::derive_seed(base_seed, "coarse-env", attempt);
        let env = Environment::generate(spec, dim, seed, radius)?;
        let cmap = build_cluster_map(&env, eps0, radius)?;
        match percolation::coarse_operator(&env, &cmap, sites, xi0) {
            Ok((op, _)) => return Ok((seed, env, cmap, op)),
            Err(e @ Error::Censored(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mp2Instance {
    pub index: u64,
    pub dim: usize,
    pub box_radius: i64,
    pub tail: f64,
    pub p_open: f64,
    pub eps0: f64,
    pub env_seed: u64,
    pub open_sites_in_e: usize,
    pub record: Mp2Record,
}

/// One mp2 instance: `E` a cube, `u` a coarse Dirichlet solution with random
/// source and boundary data plus a random perturbation in `E`.
pub fn mp2_instance(master: u64, index: u64, max_radius_2d: i64, max_radius_3d: i64) -> Result<Mp2Instance> {
    let mut rng = rng::stream(master, "mp2-instance", index);
    let dim = if index.is_multiple_of(2) { 2 } else { 3 };
    let box_radius = rng.random_range(1..=if dim == 2 { max_radius_2d } else { max_radius_3d });
    let tail = rng.random_range(0.5..2.5);
    // every fourth instance has no open sites at all
    let p_open = if index % 4 == 3 { 0.0 } else { rng.random_range(0.02..0.2) };
    let (spec, xi0, eps0) = max_jump_setup(dim, tail, p_open)?;
    let sites: Vec<Site> = LatticeBox::new(dim, box_radius).sites().collect();
    let (env_seed, _env, cmap, op) = coarse_setup(&spec, dim, eps0, xi0, &sites, rng.random())?;
    let eb = op.exterior_boundary(&sites)?;
    let h_scale = rng.random_range(0.0..2.0);
    let shift = rng.random_range(-1.0..1.0);
    let mut h = GridFunction::new();
    for &x in &sites {
        h.set(x, h_scale * (normal(&mut rng) + shift));
    }
    let mut g = GridFunction::new();
    let tilt: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    for &y in &eb {
        g.set(y, rng.random_range(-1.0..1.0) + 0.1 * y.dot(&tilt));
    }
    let mut u = op.dirichlet_solve(&sites, &h, &g)?;
    let noise = rng.random_range(0.0..0.3);
    for &x in &sites {
        let v = u.get(x)?;
        u.set(x, v + noise * normal(&mut rng));
    }
    let record = percolation::mp2_check(&op, &cmap, &sites, &u, None)?;
    let open_sites_in_e = sites.iter().filter(|&&x| cmap.is_open(x) == Some(true)).count();
    Ok(Mp2Instance { index, dim, box_radius, tail, p_open, eps0, env_seed, open_sites_in_e, record })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    NearestNeighbour,
    Coarse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutoffInstance {
    pub index: u64,
    pub dim: usize,
    pub kind: KernelKind,
    pub radius: f64,
    pub beta: f64,
    pub env_seed: u64,
    pub report: CutoffReport,
}

/// Harmonic `u` on the ball `B_R(o)` for `op`, from random boundary data
/// with a linear trend.
fn harmonic_on_ball(op: &JumpOperator, ball: &[Site], rng: &mut Stream, nonneg: bool) -> Result<GridFunction> {
    let dim = op.dim;
    let eb = op.exterior_boundary(ball)?;
    let tilt: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let offset = rng.random_range(-0.5..1.0);
    let mut g = GridFunction::new();
    for &y in &eb {
        let v = offset + rng.random_range(-1.0..1.0) + 0.2 * y.dot(&tilt);
        g.set(y, if nonneg { v.abs() } else { v });
    }
    let h = GridFunction::constant(ball.iter().copied(), 0.0);
    op.dirichlet_solve(ball, &h, &g)
}

/// Even instances use the nearest-neighbour operator of an i.i.d. elliptic
/// environment, odd ones a coarse operator over a percolating environment.
pub fn cutoff_instance(master: u64, index: u64) -> Result<CutoffInstance> {
    let mut rng = rng::stream(master, "cutoff-instance", index);
    let dim = if (index / 2).is_multiple_of(2) { 2 } else { 3 };
    let radius = if dim == 2 { rng.random_range(3.0..9.0) } else { rng.random_range(2.5..5.0) };
    let beta = rng.random_range(2.0..4.0);
    let ball = euclidean_ball(dim, Site::ORIGIN, radius);
    let (kind, env_seed, op) = if index.is_multiple_of(2) {
        let spec = EnvSpec::IidElliptic { shape: rng.random_range(0.5..3.0), stay_shape: None };
        let env_seed: u64 = rng.random();
        let env = Environment::generate(&spec, dim, env_seed, radius.ceil() as i64 + 1)?;
        (KernelKind::NearestNeighbour, env_seed, JumpOperator::nearest_neighbour(&env, ball.iter().copied())?)
    } else {
        let (spec, xi0, eps0) = max_jump_setup(dim, rng.random_range(0.5..2.5), rng.random_range(0.02..0.15))?;
        let (env_seed, _, _, op) = coarse_setup(&spec, dim, eps0, xi0, &ball, rng.random())?;
        (KernelKind::Coarse, env_seed, op)
    };
    let u = harmonic_on_ball(&op, &ball, &mut rng, false)?;
    let report = elliptic::cutoff_lemma_check(&op, CutoffProfile::new(radius, beta)?, &u)?;
    Ok(CutoffInstance { index, dim, kind, radius, beta, env_seed, report })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mvi2Instance {
    pub index: u64,
    pub dim: usize,
    pub env_seed: u64,
    pub open_sites_in_ball: usize,
    pub record: Mvi2Record,
}

/// Mean value ratio for a nonnegative coarse-harmonic function on `B_R`.
pub fn mvi2_instance(master: u64, index: u64, dim: usize, radius: f64, sigma: f64, p: f64) -> Result<Mvi2Instance> {
    let mut rng = rng::stream(master, "mvi2-instance", index);
    let (spec, xi0, eps0) = max_jump_setup(dim, rng.random_range(0.5..2.5), rng.random_range(0.02..0.15))?;
    let ball = euclidean_ball(dim, Site::ORIGIN, radius);
    let (env_seed, _, cmap, op) = coarse_setup(&spec, dim, eps0, xi0, &ball, rng.random())?;
    let u = harmonic_on_ball(&op, &ball, &mut rng, true)?;
    let record = percolation::mvi2_ratio(&op, &cmap, &u, radius, sigma, p)?;
    let open_sites_in_ball = ball.iter().filter(|&&x| cmap.is_open(x) == Some(true)).count();
    Ok(Mvi2Instance { index, dim, env_seed, open_sites_in_ball, record })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpInstance {
    pub index: u64,
    pub dim: usize,
    pub box_radius: i64,
    pub env_seed: u64,
    pub record: MpRecord,
}

/// Maximum principle on a cube for a nearest-neighbour i.i.d. environment,
/// `u` solving `L u = −h` with random data, `g = max(−L u, 0)`.
pub fn mp_instance(master: u64, index: u64, dim: usize, max_radius: i64) -> Result<MpInstance> {
    let mut rng = rng::stream(master, "mp-instance", index);
    let box_radius = rng.random_range(1..=max_radius.max(1));
    let spec = EnvSpec::IidElliptic { shape: rng.random_range(0.5..3.0), stay_shape: Some(1.0) };
    let env_seed: u64 = rng.random();
    let env = Environment::generate(&spec, dim, env_seed, box_radius + 1)?;
    let dom = LatticeDomain::cube(dim, box_radius);
    let shift = rng.random_range(-1.0..1.0);
    let mut h = GridFunction::new();
    for &x in dom.sites() {
        h.set(x, normal(&mut rng) + shift);
    }
    let mut g = GridFunction::new();
    for &y in dom.boundary() {
        g.set(y, rng.random_range(-1.0..1.0));
    }
    let u = elliptic::dirichlet_solve(&env, &dom, &h, &g)?;
    let mut gg = GridFunction::new();
    for &x in dom.sites() {
        gg.set(x, (-elliptic::apply_l(&env, &u, x)?).max(0.0));
    }
    let record = elliptic::mp_check(&env, &dom, &u, &gg)?;
    Ok(MpInstance { index, dim, box_radius, env_seed, record })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MviInstance {
    pub index: u64,
    pub dim: usize,
    pub env_seed: u64,
    pub record: MviRecord,
}

/// Mean value ratio for a nonnegative harmonic function of a
/// nearest-neighbour i.i.d. environment on `B_R`.
pub fn mvi_instance(master: u64, index: u64, dim: usize, radius: f64, sigma: f64, p: f64) -> Result<MviInstance> {
    let mut rng = rng::stream(master, "mvi-instance", index);
    let spec = EnvSpec::IidElliptic { shape: rng.random_range(0.5..3.0), stay_shape: None };
    let env_seed: u64 = rng.random();
    let env = Environment::generate(&spec, dim, env_seed, radius.ceil() as i64 + 1)?;
    let dom = LatticeDomain::ball(dim, Site::ORIGIN, radius)?;
    let mut g = GridFunction::new();
    for &y in dom.boundary() {
        g.set(y, rng.random_range(0.0..1.0));
    }
    let (record, _) = elliptic::mvi_check(&env, Site::ORIGIN, radius, sigma, p, &g)?;
    Ok(MviInstance { index, dim, env_seed, record })
}

/// Environments used for the exit-time checks, all without holding mass.
pub fn exit_time_environments(dim: usize, seed: u64) -> Result<Vec<(String, Environment)>> {
    let specs = [
        ("uniform-srw", EnvSpec::UniformSrw),
        ("iid-elliptic", EnvSpec::IidElliptic { shape: 0.6, stay_shape: None }),
        ("iid-max-jump", EnvSpec::IidMaxJump { xi0: 1.0 / (2 * dim) as f64, tail: 0.7 }),
        (
            "layered",
            EnvSpec::Layered { law: crate::env::LayerLaw::Uniform { lo: 0.02, hi: 0.45 } },
        ),
    ];
    specs
        .into_iter()
        .map(|(name, spec)| Ok((name.to_string(), Environment::generate(&spec, dim, seed, 4)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible() {
        let a = mp2_instance(5, 1, 4, 2).unwrap();
        let b = mp2_instance(5, 1, 4, 2).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn small_corpora_pass() {
        for i in 0..6 {
            let r = mp2_instance(1, i, 5, 2).unwrap();
            assert!(r.record.pass, "{r:?}");
            let c = cutoff_instance(1, i).unwrap();
            assert!(c.report.violations.is_empty(), "{c:?}");
        }
    }
}
