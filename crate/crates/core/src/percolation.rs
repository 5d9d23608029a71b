//! Site percolation of small-ellipticity sites and the coarse jump kernel
//! built on top of it.
//!
//! A site is open when `min_i ω(x, e_i) < ε_0`. Open clusters use
//! nearest-neighbour adjacency; the boundary `∂A` of a cluster is its l∞
//! boundary, and `l(A) = max_{x ∈ A, y ∈ ∂A} |x − y|_1`.

use crate::contact::contact_set;
use crate::env::{EnvSpec, Environment, KernelField};
use crate::error::{Error, Result};
use crate::grid::{normalized_norm, GridFunction};
use crate::elliptic::JumpOperator;
use crate::lattice::{euclidean_ball, linf_offsets, sphere_size, unit_offsets, LatticeBox, Site};
use crate::linalg::{self, SparseMatrix};
use crate::rng;
use crate::walk;
use crate::stats::{self, weighted_linear_fit, wilson_interval};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub sites: Vec<Site>,
    /// l∞ boundary, sorted.
    pub boundary: Vec<Site>,
    /// `l(A)`, the l¹ diameter against the boundary.
    pub diameter: i64,
    /// Touches the edge of the labeled box, so its true extent is unknown.
    pub censored: bool,
}

#[derive(Clone, Debug)]
pub struct ClusterMap {
    dim: usize,
    eps0: f64,
    bx: LatticeBox,
    open: Vec<bool>,
    label: Vec<Option<u32>>,
    clusters: Vec<Cluster>,
}

/// `max_{x ∈ a, y ∈ b} |x − y|_1` via `|v|_1 = max_σ σ·v`.
pub fn l1_spread(dim: usize, a: &[Site], b: &[Site]) -> i64 {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut best = 0;
    for mask in 0..(1u32 << dim) {
        let dot = |s: &Site| -> i64 {
            (0..dim)
                .map(|k| if mask >> k & 1 == 1 { -(s.0[k] as i64) } else { s.0[k] as i64 })
                .sum()
        };
        let hi = a.iter().map(dot).max().unwrap();
        let lo = b.iter().map(dot).min().unwrap();
        best = best.max(hi - lo);
    }
    best
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

fn cluster_boundary(dim: usize, sites: &[Site]) -> Vec<Site> {
    let set: HashSet<Site> = sites.iter().copied().collect();
    let offs = linf_offsets(dim);
    let b: BTreeSet<Site> = sites
        .iter()
        .flat_map(|&x| offs.iter().map(move |&v| x + v))
        .filter(|y| !set.contains(y))
        .collect();
    b.into_iter().collect()
}

pub fn is_open(field: &impl KernelField, x: Site, eps0: f64) -> Result<bool> {
    Ok(field.kernel(x)?.min_axis() < eps0)
}

/// Labels the open clusters of `[-radius, radius]^d` by union-find.
pub fn build_cluster_map(field: &impl KernelField, eps0: f64, radius: i64) -> Result<ClusterMap> {
    let dim = field.dim();
    let bx = LatticeBox::new(dim, radius);
    let n = bx.len();
    let mut open = vec![false; n];
    for (i, o) in open.iter_mut().enumerate() {
        *o = is_open(field, bx.site(i), eps0)?;
    }
    let mut parent: Vec<u32> = (0..n as u32).collect();
    for i in 0..n {
        if !open[i] {
            continue;
        }
        let x = bx.site(i);
        for k in 0..dim {
            if let Some(j) = bx.index(x.offset(k, 1)) {
                if open[j] {
                    let (a, b) = (find(&mut parent, i as u32), find(&mut parent, j as u32));
                    if a != b {
                        parent[a.max(b) as usize] = a.min(b);
                    }
                }
            }
        }
    }
    let mut root_to_id: HashMap<u32, u32> = HashMap::new();
    let mut label = vec![None; n];
    let mut members: Vec<Vec<Site>> = Vec::new();
    for i in 0..n {
        if !open[i] {
            continue;
        }
        let r = find(&mut parent, i as u32);
        let id = *root_to_id.entry(r).or_insert_with(|| {
            members.push(Vec::new());
            (members.len() - 1) as u32
        });
        label[i] = Some(id);
        members[id as usize].push(bx.site(i));
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .map(|(id, sites)| {
            let boundary = cluster_boundary(dim, &sites);
            let censored = sites.iter().any(|s| s.linf() >= radius);
            let diameter = l1_spread(dim, &sites, &boundary);
            Cluster { id, sites, boundary, diameter, censored }
        })
        .collect();
    Ok(ClusterMap { dim, eps0, bx, open, label, clusters })
}

impl ClusterMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn lattice_box(&self) -> LatticeBox {
        self.bx
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn open_count(&self) -> usize {
        self.open.iter().filter(|o| **o).count()
    }

    /// Open flag; `None` outside the labeled box.
    pub fn is_open(&self, x: Site) -> Option<bool> {
        self.bx.index(x).map(|i| self.open[i])
    }

    pub fn label(&self, x: Site) -> Option<u32> {
        self.bx.index(x).and_then(|i| self.label[i])
    }

    pub fn cluster_of(&self, x: Site) -> Option<&Cluster> {
        self.label(x).map(|id| &self.clusters[id as usize])
    }

    /// `l_x`; zero for closed sites. Censored clusters report their diameter
    /// within the box, which is only a lower bound.
    pub fn l(&self, x: Site) -> i64 {
        self.cluster_of(x).map_or(0, |c| c.diameter)
    }

    /// Cluster map of the same labeling restricted to the sites listed, as
    /// `(site, label)` rows for export.
    pub fn label_rows(&self) -> Vec<(Site, Option<u32>)> {
        self.bx.sites().zip(self.label.iter().copied()).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaPath {
    pub kappa: Vec<i32>,
    /// Sites from `x` to `y_κ`, inclusive.
    pub path: Vec<Site>,
}

impl KappaPath {
    pub fn end(&self) -> Site {
        *self.path.last().unwrap()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaStructure {
    pub x: Site,
    pub paths: Vec<KappaPath>,
    /// `Λ_x`, sorted.
    pub lambda: Vec<Site>,
}

/// All sign vectors `κ ∈ {±1}^d`.
pub fn kappas(dim: usize) -> Vec<Vec<i32>> {
    (0..1u32 << dim)
        .map(|m| (0..dim).map(|k| if m >> k & 1 == 1 { -1 } else { 1 }).collect())
        .collect()
}

/// Builds the `2^d` κ-paths from `x` inside `Ā_x` and their union `Λ_x`.
/// Closed sites get `Λ_x = {x}`.
pub fn build_kappa(field: &impl KernelField, cmap: &ClusterMap, x: Site, xi0: f64) -> Result<KappaStructure> {
    let dim = field.dim();
    if cmap.bx.index(x).is_none() {
        return Err(Error::Unmaterialized(x));
    }
    let Some(cluster) = cmap.cluster_of(x) else {
        return Ok(KappaStructure { x, paths: Vec::new(), lambda: vec![x] });
    };
    if cluster.censored {
        return Err(Error::Censored(x));
    }
    let closure: HashSet<Site> = cluster.sites.iter().chain(&cluster.boundary).copied().collect();
    let mut paths = Vec::with_capacity(1 << dim);
    let mut lambda: BTreeSet<Site> = BTreeSet::new();
    for kappa in kappas(dim) {
        // every κ-monotone path from x to y has length |y − x|_1, so a
        // breadth-first sweep visits sites in order of distance
        let mut parent: HashMap<Site, Site> = HashMap::new();
        let mut queue = VecDeque::from([x]);
        let mut seen: HashSet<Site> = HashSet::from([x]);
        let mut best = x;
        while let Some(s) = queue.pop_front() {
            let k = field.kernel(s)?;
            let mut moved = false;
            for (i, &sign) in kappa.iter().enumerate() {
                if k.axis[i] < xi0 {
                    continue;
                }
                let t = s.offset(i, sign);
                if !closure.contains(&t) {
                    continue;
                }
                moved = true;
                if seen.insert(t) {
                    parent.insert(t, s);
                    queue.push_back(t);
                    let (dt, db) = ((t - x).l1(), (best - x).l1());
                    if dt > db || (dt == db && t < best) {
                        best = t;
                    }
                }
            }
            if s == x && !moved {
                return Err(Error::NoAdmissibleStep(x));
            }
        }
        let mut path = vec![best];
        let mut cur = best;
        while cur != x {
            cur = parent[&cur];
            path.push(cur);
        }
        path.reverse();
        lambda.extend(path.iter().copied());
        paths.push(KappaPath { kappa, path });
    }
    Ok(KappaStructure { x, paths, lambda: lambda.into_iter().collect() })
}

/// Exit law `a(x, y) = P^x{X_{τ_Λ} = y}` from `Λ_x`, by an absorbing solve
/// `(I − P_ΛΛ)ᵀ G = e_x`, `a = G P_{Λ, Λᶜ}`.
pub fn build_coarse_kernel(field: &impl KernelField, kappa: &KappaStructure) -> Result<Vec<(Site, f64)>> {
    let dim = field.dim();
    let lam = &kappa.lambda;
    let index: HashMap<Site, usize> = lam.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let m = lam.len();
    let kernels = lam.iter().map(|&s| field.kernel(s)).collect::<Result<Vec<_>>>()?;
    let steps = |k: &crate::env::SiteKernel, s: Site| -> Vec<(Site, f64)> {
        let mut v = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            if k.axis[i] > 0.0 {
                v.push((s.offset(i, 1), k.axis[i]));
                v.push((s.offset(i, -1), k.axis[i]));
            }
        }
        v
    };
    let green = if m <= 64 {
        // row-major (I − P_ΛΛ)ᵀ
        let mut a = vec![0.0; m * m];
        for (i, (&s, k)) in lam.iter().zip(&kernels).enumerate() {
            a[i * m + i] += 1.0 - k.stay;
            for (t, w) in steps(k, s) {
                if let Some(&j) = index.get(&t) {
                    a[j * m + i] -= w;
                }
            }
        }
        let mut b = vec![0.0; m];
        b[index[&kappa.x]] = 1.0;
        linalg::dense_solve(a, b)?
    } else {
        let mut a = SparseMatrix::new(m);
        for (i, (&s, k)) in lam.iter().zip(&kernels).enumerate() {
            a.add(i, i, 1.0 - k.stay);
            for (t, w) in steps(k, s) {
                if let Some(&j) = index.get(&t) {
                    a.add(j, i, -w);
                }
            }
        }
        let mut b = vec![0.0; m];
        b[index[&kappa.x]] = 1.0;
        linalg::solve(&a, &b, 1e-13)?
    };
    let mut exit: HashMap<Site, f64> = HashMap::new();
    for (i, (&s, k)) in lam.iter().zip(&kernels).enumerate() {
        for (t, w) in steps(k, s) {
            if !index.contains_key(&t) {
                *exit.entry(t).or_insert(0.0) += green[i] * w;
            }
        }
    }
    let mut row: Vec<(Site, f64)> = exit.into_iter().filter(|e| e.1 > 0.0).collect();
    row.sort_by_key(|a| a.0);
    Ok(row)
}

/// The coarse operator `L_a` on the given sites, with every row checked for
/// stochasticity and balance.
pub fn coarse_operator(
    field: &impl KernelField,
    cmap: &ClusterMap,
    sites: &[Site],
    xi0: f64,
) -> Result<(JumpOperator, HashMap<Site, KappaStructure>)> {
    type Row = (Site, KappaStructure, Vec<(Site, f64)>);
    let rows: Vec<Row> = sites
        .par_iter()
        .map(|&x| {
            let kappa = build_kappa(field, cmap, x, xi0)?;
            let row = build_coarse_kernel(field, &kappa)?;
            Ok((x, kappa, row))
        })
        .collect::<Result<_>>()?;
    let mut op = JumpOperator::new(field.dim());
    let mut structures = HashMap::new();
    for (x, kappa, row) in rows {
        op.insert_row(x, row);
        let (mass, drift) = op.balance_errors(x)?;
        if mass > crate::elliptic::BALANCE_TOL || drift > crate::elliptic::BALANCE_TOL {
            return Err(Error::Singular(format!(
                "coarse kernel at {x} off balance: mass error {mass:e}, drift {drift:e}"
            )));
        }
        structures.insert(x, kappa);
    }
    Ok((op, structures))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mp2Record {
    /// `max_E u`.
    pub max_e: f64,
    /// `max_{E^b} u`.
    pub max_eb: f64,
    /// `(d · diam Ẽ / ε_0) (Σ_{contact} |g (2d)^{l_x}|^d)^{1/d} + max_{E^b} u`.
    pub rhs: f64,
    pub diameter: i64,
    pub contact_size: usize,
    /// Contact points where `L_a u ≥ −g` fails (the instance is then excluded).
    pub hypothesis_violations: Vec<Site>,
    pub pass: bool,
}

/// Checks the explicit-constant maximum principle for `L_a` on `E`.
/// `g = max(−L_a u, 0)` unless given.
pub fn mp2_check(
    op: &JumpOperator,
    cmap: &ClusterMap,
    sites: &[Site],
    u: &GridFunction,
    g: Option<&GridFunction>,
) -> Result<Mp2Record> {
    let dim = op.dim;
    let eb = op.exterior_boundary(sites)?;
    if eb.is_empty() {
        return Err(Error::EmptySet);
    }
    let closure: Vec<Site> = sites.iter().chain(&eb).copied().collect();
    let contact = contact_set(dim, u, sites, &closure)?;
    let scale = closure.iter().map(|&z| u.get_or(z, 0.0).abs()).fold(1e-300, f64::max);
    let mut sum = 0.0;
    let mut hypothesis_violations = Vec::new();
    for m in &contact.members {
        let x = m.site;
        let lau = op.apply(u, x)?;
        let gx = match g {
            Some(g) => g.get(x)?,
            None => (-lau).max(0.0),
        };
        if lau < -gx - 1e-9 * scale {
            hypothesis_violations.push(x);
        }
        let w = gx * (2.0 * dim as f64).powi(cmap.l(x) as i32);
        sum += w.abs().powi(dim as i32);
    }
    let diameter = crate::lattice::linf_diameter(dim, closure.iter().copied());
    let max_e = u.max_over(sites.iter().copied())?;
    let max_eb = u.max_over(eb.iter().copied())?;
    let rhs = dim as f64 * diameter as f64 / cmap.eps0 * sum.powf(1.0 / dim as f64) + max_eb;
    // rounding slack in the same units as u
    let pass = hypothesis_violations.is_empty() && max_e <= rhs + 1e-9 * scale;
    Ok(Mp2Record {
        max_e,
        max_eb,
        rhs,
        diameter,
        contact_size: contact.len(),
        hypothesis_violations,
        pass,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mvi2Record {
    pub radius: f64,
    pub sigma: f64,
    pub p: f64,
    pub inner_max: f64,
    /// `(diam B̃_R/(ε_0 R))^{d/p} ‖[w_x]^{d/p} u⁺‖_{B_R, p}` with
    /// `w_x = max(l_x, 1)² (2d)^{l_x}`.
    pub denominator: f64,
    pub ratio: Option<f64>,
}

/// Mean value ratio for an `L_a`-harmonic `u` on `B_R` (centered at `o`).
pub fn mvi2_ratio(
    op: &JumpOperator,
    cmap: &ClusterMap,
    u: &GridFunction,
    radius: f64,
    sigma: f64,
    p: f64,
) -> Result<Mvi2Record> {
    let dim = op.dim;
    let d = dim as f64;
    let ball = euclidean_ball(dim, Site::ORIGIN, radius);
    let eb = op.exterior_boundary(&ball)?;
    let diam = crate::lattice::linf_diameter(dim, ball.iter().chain(&eb).copied()) as f64;
    let inner = euclidean_ball(dim, Site::ORIGIN, sigma * radius);
    let inner_max = u.max_over(inner)?;
    let mut vals = Vec::with_capacity(ball.len());
    for &x in &ball {
        let l = cmap.l(x);
        let w = (l.max(1) as f64).powi(2) * (2.0 * d).powi(l as i32);
        vals.push(w.powf(d / p) * u.get(x)?.max(0.0));
    }
    let norm = if p >= 1.0 {
        normalized_norm(&vals, p)?
    } else {
        let s = stats::compensated_sum(vals.iter().map(|v| v.powf(p)));
        (s / vals.len() as f64).powf(1.0 / p)
    };
    let denominator = (diam / (cmap.eps0 * radius)).powf(d / p) * norm;
    let ratio = (denominator > 0.0).then(|| inner_max / denominator);
    Ok(Mvi2Record { radius, sigma, p, inner_max, denominator, ratio })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConnectivityStats {
    pub dim: usize,
    pub eps0: f64,
    pub samples: u64,
    /// Rows `(n, hits, q̂_n, lo, hi)` with 95% Wilson intervals.
    pub q: Vec<QRow>,
    pub upper_pairs: Vec<PairCheck>,
    pub lower_pairs: Vec<PairCheck>,
    pub phi_hat: Option<f64>,
    pub phi_se: Option<f64>,
    /// `P̂{l_o ≥ n}` on the grid.
    pub diameter_tail: Vec<QRow>,
    /// `P̂{l_o ≥ n} / (n^{d−1} e^{−n φ̂/2d})`, for reference only.
    pub tail_prefactor: Vec<(u64, f64)>,
    /// Samples whose origin cluster exceeded the exploration cap.
    pub capped: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QRow {
    pub n: u64,
    pub hits: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PairCheck {
    pub m: u64,
    pub n: u64,
    /// Log-space excess of the inequality (negative or zero when it holds).
    pub excess: f64,
    pub se: f64,
    pub pass: bool,
}

/// Largest cluster explored per sample before giving up.
const EXPLORE_CAP: usize = 200_000;

/// Explores the origin's open cluster of the i.i.d. environment `(spec,
/// seed)`. Returns `(max_{A_o} |x|_∞ + 1, l_o)`, or `None` if the origin is
/// closed; the flag reports a capped exploration.
fn origin_cluster(spec: &EnvSpec, dim: usize, seed: u64, eps0: f64) -> (Option<(i64, i64)>, bool) {
    let open = |s: Site| spec.sample_site(dim, seed, s).expect("generative spec").min_axis() < eps0;
    if !open(Site::ORIGIN) {
        return (None, false);
    }
    let mut seen: HashSet<Site> = HashSet::from([Site::ORIGIN]);
    let mut sites = vec![Site::ORIGIN];
    let mut queue = VecDeque::from([Site::ORIGIN]);
    let offs = unit_offsets(dim);
    let mut capped = false;
    while let Some(s) = queue.pop_front() {
        for &v in &offs {
            let t = s + v;
            if !seen.contains(&t) {
                seen.insert(t);
                if open(t) {
                    sites.push(t);
                    queue.push_back(t);
                }
            }
        }
        if sites.len() >= EXPLORE_CAP {
            capped = true;
            break;
        }
    }
    let reach = sites.iter().map(Site::linf).max().unwrap() + 1;
    let boundary = cluster_boundary(dim, &sites);
    (Some((reach, l1_spread(dim, &sites, &boundary))), capped)
}

/// Monte Carlo estimates of `q_n = P{o → S_n}` over independent
/// environments, with the approximate sub/super-multiplicativity checks.
pub fn connectivity_stats(
    spec: &EnvSpec,
    dim: usize,
    eps0: f64,
    grid: &[u64],
    samples: u64,
    seed: u64,
) -> Result<ConnectivityStats> {
    spec.validate(dim)?;
    if !spec.is_generative() {
        return Err(Error::InvalidSpec("connectivity statistics need a generative spec".into()));
    }
    let draws: Vec<(Option<(i64, i64)>, bool)> = (0..samples)
        .into_par_iter()
        .map(|k| origin_cluster(spec, dim, rng::derive_seed(seed, "perc-env", k), eps0))
        .collect();
    let capped = draws.iter().filter(|d| d.1).count() as u64;
    let z = 1.959963984540054;
    let count = |pred: &dyn Fn(i64, i64) -> bool| -> u64 {
        draws.iter().filter(|d| d.0.is_some_and(|(r, l)| pred(r, l))).count() as u64
    };
    let row = |n: u64, hits: u64| {
        let (lo, hi) = wilson_interval(hits, samples, z);
        QRow { n, hits, estimate: hits as f64 / samples as f64, lo, hi }
    };
    let q: Vec<QRow> = grid.iter().map(|&n| row(n, count(&|r, _| r >= n as i64))).collect();
    let diameter_tail: Vec<QRow> = grid.iter().map(|&n| row(n, count(&|_, l| l >= n as i64))).collect();
    let qmap: HashMap<u64, QRow> = q.iter().map(|r| (r.n, *r)).collect();
    let log_var = |r: &QRow| (1.0 - r.estimate) / (samples as f64 * r.estimate);

    let mut upper_pairs = Vec::new();
    let mut lower_pairs = Vec::new();
    for &m in grid {
        for &n in grid {
            if m == 0 || n == 0 || m > n {
                continue;
            }
            let Some(qs) = qmap.get(&(m + n)) else { continue };
            let (qm, qn) = (qmap[&m], qmap[&n]);
            if qs.hits == 0 || qm.hits == 0 || qn.hits == 0 {
                // log q̂_{m+n} = −∞ satisfies the upper bound; the lower bound is untestable
                upper_pairs.push(PairCheck { m, n, excess: f64::NEG_INFINITY, se: 0.0, pass: true });
                continue;
            }
            let se = (log_var(qs) + log_var(&qm) + log_var(&qn)).sqrt();
            let up = qs.estimate.ln() - ((sphere_size(m, dim) as f64).ln() + qm.estimate.ln() + qn.estimate.ln());
            upper_pairs.push(PairCheck { m, n, excess: up, se, pass: up <= 3.0 * se });
            let low = qm.estimate.ln() + qn.estimate.ln()
                - (2.0 * dim as f64 * sphere_size(m.min(n), dim) as f64).ln()
                - qs.estimate.ln();
            lower_pairs.push(PairCheck { m, n, excess: low, se, pass: low <= 3.0 * se });
        }
    }

    let pts: Vec<&QRow> = q.iter().filter(|r| r.n > 0 && r.hits > 0).collect();
    let fit = weighted_linear_fit(
        &pts.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
        &pts.iter().map(|r| -r.estimate.ln()).collect::<Vec<_>>(),
        &pts.iter().map(|r| log_var(r)).collect::<Vec<_>>(),
    );
    let (phi_hat, phi_se) = match fit {
        Some(f) => (Some(f.slope), Some(f.slope_se)),
        None => (None, None),
    };
    let tail_prefactor = match phi_hat {
        Some(phi) => diameter_tail
            .iter()
            .filter(|r| r.n > 0)
            .map(|r| {
                let form = (r.n as f64).powi(dim as i32 - 1) * (-(r.n as f64) * phi / (2.0 * dim as f64)).exp();
                (r.n, r.estimate / form)
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(ConnectivityStats {
        dim,
        eps0,
        samples,
        q,
        upper_pairs,
        lower_pairs,
        phi_hat,
        phi_se,
        diameter_tail,
        tail_prefactor,
        capped,
    })
}

/// Whether `l_x ≤ bound` for all `x` in the open ball of radius `r`, using
/// a cluster map on a box large enough to contain every relevant cluster
/// unless it is censored. Returns `(indicator, censored clusters met)`.
pub fn diameters_bounded(field: &impl KernelField, eps0: f64, r: f64, bound: i64) -> Result<(bool, usize)> {
    let dim = field.dim();
    let radius = r.ceil() as i64 + bound + 2;
    let cmap = build_cluster_map(field, eps0, radius)?;
    let mut censored = HashSet::new();
    let mut ok = true;
    for x in euclidean_ball(dim, Site::ORIGIN, r) {
        if let Some(c) = cmap.cluster_of(x) {
            if c.censored {
                // a cluster reaching the box edge from inside B has l_x > bound
                censored.insert(c.id);
                ok = false;
            } else if c.diameter > bound {
                ok = false;
            }
        }
    }
    Ok((ok, censored.len()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OmegaRow {
    pub index: usize,
    /// Radius `K^{i+2}` of the ball the diameters are checked on.
    pub radius: f64,
    /// Diameter bound `K^{i−1}`.
    pub bound: i64,
    pub samples: usize,
    /// Fraction of environments in `Ω_i`; `None` when the ball exceeds the
    /// labeling cap.
    pub frequency: Option<f64>,
    /// Clusters cut by the labeling box, summed over environments.
    pub censored: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransienceReport {
    pub dim: usize,
    pub eps0: f64,
    /// Annealed visit counts: one fresh environment per walk.
    pub visits: walk::VisitReport,
    pub omega: Vec<OmegaRow>,
    /// `Σ_{j ≥ i} P̂{visit o in [τ_j, τ_{j+1})}`.
    pub tail_sums: Vec<f64>,
}

/// Annulus visit probabilities of the annealed walk from `o` plus the
/// frequency of `Ω_i = {l_x ≤ K^{i−1} on B_{K^{i+2}}}` over the first
/// `omega_samples` environments, for balls of radius at most `omega_cap`.
#[allow(clippy::too_many_arguments)]
pub fn transience_iid_experiment(
    spec: &EnvSpec,
    dim: usize,
    eps0: f64,
    k: u64,
    i_max: usize,
    m: usize,
    omega_samples: usize,
    omega_cap: f64,
    seed: u64,
    cap: u64,
) -> Result<TransienceReport> {
    spec.validate(dim)?;
    if !spec.is_generative() {
        return Err(Error::InvalidSpec("the transience experiment needs a generative spec".into()));
    }
    walk::StoppingSpec::AnnulusSequence { k, i_max }.validate()?;
    let env_of = |s: usize| -> Result<Environment> {
        Environment::generate(spec, dim, rng::derive_seed(seed, "transience-env", s as u64), 1)?.remove_laziness()
    };
    let draws: Vec<Option<Vec<u64>>> = (0..m)
        .into_par_iter()
        .map(|s| {
            let env = env_of(s)?;
            walk::annulus_visit_counts(&env, k, i_max, &mut rng::stream(seed, "transience-walk", s as u64), cap)
        })
        .collect::<Result<_>>()?;
    let visits = walk::visit_report(k, i_max, draws);
    let mut tail_sums: Vec<f64> = visits.rows.iter().map(|r| r.hit_probability).collect();
    for i in (0..tail_sums.len().saturating_sub(1)).rev() {
        tail_sums[i] += tail_sums[i + 1];
    }
    let mut omega = Vec::new();
    for i in 1..=i_max {
        let radius = (k as f64).powi(i as i32 + 2);
        let bound = (k as i64).pow(i as u32 - 1);
        if radius > omega_cap || omega_samples == 0 {
            omega.push(OmegaRow { index: i, radius, bound, samples: 0, frequency: None, censored: 0 });
            continue;
        }
        let flags: Vec<(bool, usize)> = (0..omega_samples)
            .into_par_iter()
            .map(|s| diameters_bounded(&env_of(s)?, eps0, radius, bound))
            .collect::<Result<_>>()?;
        let inside = flags.iter().filter(|f| f.0).count();
        omega.push(OmegaRow {
            index: i,
            radius,
            bound,
            samples: omega_samples,
            frequency: Some(inside as f64 / omega_samples as f64),
            censored: flags.iter().map(|f| f.1).sum(),
        });
    }
    Ok(TransienceReport { dim, eps0, visits, omega, tail_sums })
}
