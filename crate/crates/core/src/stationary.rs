//! Periodized environments and the stationary density of the walk on the
//! period torus.

use crate::env::{Environment, KernelField, SiteKernel};
use crate::error::{Error, Result};
use crate::grid::normalized_norm;
use crate::lattice::{LatticeBox, Site, MAX_DIM};
use crate::linalg::{self, SparseMatrix};
use crate::percolation::ClusterMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest period radius for which the direct fallback is attempted.
pub const DIRECT_FALLBACK_MAX_N: i64 = 16;

/// The environment `ω^N`: the restriction of `ω` to `Δ_N = [−N, N]^d`
/// repeated with period `2N + 1` in every coordinate.
#[derive(Clone, Debug)]
pub struct TorusEnv {
    dim: usize,
    n: i64,
    bx: LatticeBox,
    kernels: Vec<SiteKernel>,
}

pub fn periodize(env: &Environment, n: i64) -> Result<TorusEnv> {
    if n < 1 {
        return Err(Error::InvalidArgument(format!("period radius {n} must be at least 1")));
    }
    if n > env.radius() {
        return Err(Error::InvalidArgument(format!(
            "period radius {n} exceeds the materialized radius {}",
            env.radius()
        )));
    }
    let dim = env.lattice_box().dim;
    let bx = LatticeBox::new(dim, n);
    let kernels = bx
        .sites()
        .map(|s| env.materialized_kernel(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(TorusEnv { dim, n, bx, kernels })
}

impl TorusEnv {
    pub fn period_radius(&self) -> i64 {
        self.n
    }

    pub fn side(&self) -> usize {
        self.bx.side()
    }

    /// Representative box `Δ_N`, row-major.
    pub fn torus_box(&self) -> LatticeBox {
        self.bx
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &[SiteKernel] {
        &self.kernels
    }

    /// `x̂`: the representative of `x` in `Δ_N`.
    pub fn wrap(&self, x: Site) -> Site {
        let side = self.side() as i64;
        let mut c = [0; MAX_DIM];
        for k in 0..self.dim {
            c[k] = ((x.0[k] as i64 + self.n).rem_euclid(side) - self.n) as i32;
        }
        Site(c)
    }

    pub fn index(&self, x: Site) -> usize {
        self.bx.index(self.wrap(x)).expect("wrapped site lies in the box")
    }

    /// Torus index of each of the `2d` neighbours, ordered `+e_1, −e_1, +e_2, …`.
    fn neighbours(&self) -> Vec<[usize; 2 * MAX_DIM]> {
        (0..self.len())
            .map(|i| {
                let s = self.bx.site(i);
                let mut nb = [0; 2 * MAX_DIM];
                for k in 0..self.dim {
                    nb[2 * k] = self.index(s.offset(k, 1));
                    nb[2 * k + 1] = self.index(s.offset(k, -1));
                }
                nb
            })
            .collect()
    }

    /// `(ΦP)(x) = Σ_y Φ(y) P(ŷ, x̂)`.
    fn push_forward(&self, nbs: &[[usize; 2 * MAX_DIM]], phi: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(phi.len());
        (0..phi.len())
            .into_par_iter()
            .map(|i| {
                let mut s = self.kernels[i].stay * phi[i];
                for k in 0..self.dim {
                    let (up, down) = (nbs[i][2 * k], nbs[i][2 * k + 1]);
                    // mass arriving from x + e_k moves by −e_k, which has weight axis[k]
                    s += self.kernels[up].axis[k] * phi[up] + self.kernels[down].axis[k] * phi[down];
                }
                s
            })
            .collect_into_vec(&mut out);
        out
    }

    fn column_sums(&self, nbs: &[[usize; 2 * MAX_DIM]]) -> Vec<f64> {
        self.push_forward(nbs, &vec![1.0; self.len()])
    }

    /// `max_x |(ΦP)(x) − Φ(x)|`.
    pub fn stationarity_residual(&self, phi: &[f64]) -> f64 {
        let nbs = self.neighbours();
        sup_diff(&self.push_forward(&nbs, phi), phi)
    }
}

impl KernelField for TorusEnv {
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn kernel(&self, x: Site) -> Result<SiteKernel> {
        Ok(self.kernels[self.index(x)])
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn normalize_mean(phi: &mut [f64]) {
    let mean = crate::stats::compensated_sum(phi.iter().copied()) / phi.len() as f64;
    for v in phi.iter_mut() {
        *v /= mean;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    DoublyStochastic,
    PowerIteration,
    Direct,
}

/// `Φ_N` on `Δ_N` in row-major order, normalized to mean one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryDensity {
    pub dim: usize,
    pub n: i64,
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

impl StationaryDensity {
    pub fn torus_box(&self) -> LatticeBox {
        LatticeBox::new(self.dim, self.n)
    }

    /// `Φ_N(x̂)`.
    pub fn at(&self, x: Site) -> f64 {
        let side = 2 * self.n + 1;
        let mut c = [0; MAX_DIM];
        for k in 0..self.dim {
            c[k] = ((x.0[k] as i64 + self.n).rem_euclid(side) - self.n) as i32;
        }
        self.values[self.torus_box().index(Site(c)).unwrap()]
    }
}

/// Default sweep cap for the power iteration.
pub fn default_max_sweeps(tenv: &TorusEnv) -> usize {
    let side = tenv.side();
    2_000 + 40 * side * side
}

pub fn solve_phi(tenv: &TorusEnv, tol: f64) -> Result<StationaryDensity> {
    solve_phi_with(tenv, tol, default_max_sweeps(tenv))
}

/// Damped power iteration `Φ ← (Φ + ΦP)/2`, falling back to a direct sparse
/// solve for `N ≤ 16` when the sweep cap is reached.
pub fn solve_phi_with(tenv: &TorusEnv, tol: f64, max_sweeps: usize) -> Result<StationaryDensity> {
    let len = tenv.len();
    let nbs = tenv.neighbours();
    let done = |values: Vec<f64>, residual, iterations, method| StationaryDensity {
        dim: tenv.dim,
        n: tenv.n,
        values,
        residual,
        iterations,
        method,
    };

    let cols = tenv.column_sums(&nbs);
    if cols.iter().all(|c| (c - 1.0).abs() <= 1e-14) {
        let phi = vec![1.0; len];
        let res = sup_diff(&tenv.push_forward(&nbs, &phi), &phi);
        return Ok(done(phi, res, 0, SolveMethod::DoublyStochastic));
    }

    let mut phi = vec![1.0; len];
    let mut best = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let next = tenv.push_forward(&nbs, &phi);
        for (p, q) in phi.iter_mut().zip(&next) {
            *p = 0.5 * (*p + q);
        }
        sweeps += 1;
        if sweeps % 20 == 0 {
            normalize_mean(&mut phi);
            let res = sup_diff(&tenv.push_forward(&nbs, &phi), &phi);
            best = best.min(res);
            if res <= tol {
                return Ok(done(phi, res, sweeps, SolveMethod::PowerIteration));
            }
        }
    }

    if tenv.n > DIRECT_FALLBACK_MAX_N {
        return Err(Error::NotConverged { residual: best, iterations: sweeps });
    }
    let mut phi = solve_phi_direct(tenv, &nbs)?;
    normalize_mean(&mut phi);
    let res = sup_diff(&tenv.push_forward(&nbs, &phi), &phi);
    if res > tol {
        return Err(Error::NotConverged { residual: res.min(best), iterations: sweeps });
    }
    Ok(done(phi, res, sweeps, SolveMethod::Direct))
}

/// `(Pᵀ − I) Φ = 0` with the first equation replaced by `Φ(first) = 1`.
fn solve_phi_direct(tenv: &TorusEnv, nbs: &[[usize; 2 * MAX_DIM]]) -> Result<Vec<f64>> {
    let len = tenv.len();
    let mut a = SparseMatrix::new(len);
    for i in 0..len {
        a.add(i, i, tenv.kernels[i].stay - 1.0);
        for k in 0..tenv.dim {
            let (up, down) = (nbs[i][2 * k], nbs[i][2 * k + 1]);
            a.add(i, up, tenv.kernels[up].axis[k]);
            a.add(i, down, tenv.kernels[down].axis[k]);
        }
    }
    a.replace_row(0, vec![(0, 1.0)]);
    let mut b = vec![0.0; len];
    b[0] = 1.0;
    // the overall scale is fixed afterwards, so only a loose residual is needed here
    linalg::solve_direct(&a, &b, 1e-9)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiDiagnostics {
    pub n: i64,
    pub dim: usize,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `‖Φ_N ε‖_{Δ_N, β}`.
    pub phi_eps_beta: f64,
    /// `‖Φ_N‖_{Δ_N, α}`.
    pub phi_alpha: f64,
    /// `‖ε⁻¹‖_{Δ_N, p}`; infinite when some `ε(x) = 0`.
    pub inv_eps_p: f64,
    pub residual: f64,
}

/// `β = d/(d − 1)`.
pub fn beta(dim: usize) -> f64 {
    dim as f64 / (dim as f64 - 1.0)
}

/// `α = (1 − 1/d + 1/p)⁻¹`.
pub fn alpha(dim: usize, p: f64) -> f64 {
    1.0 / (1.0 - 1.0 / dim as f64 + 1.0 / p)
}

pub fn phi_bound_diagnostics(tenv: &TorusEnv, phi: &StationaryDensity, p: f64) -> Result<PhiDiagnostics> {
    if phi.values.len() != tenv.len() {
        return Err(Error::InvalidArgument("density and torus sizes differ".into()));
    }
    let eps: Vec<f64> = tenv.kernels.iter().map(SiteKernel::epsilon).collect();
    let b = beta(tenv.dim);
    let a = alpha(tenv.dim, p);
    let weighted: Vec<f64> = phi.values.iter().zip(&eps).map(|(f, e)| f * e).collect();
    let inv_eps_p = if eps.contains(&0.0) {
        f64::INFINITY
    } else {
        let inv: Vec<f64> = eps.iter().map(|e| 1.0 / e).collect();
        normalized_norm(&inv, p)?
    };
    Ok(PhiDiagnostics {
        n: tenv.n,
        dim: tenv.dim,
        p,
        alpha: a,
        beta: b,
        phi_eps_beta: normalized_norm(&weighted, b)?,
        phi_alpha: normalized_norm(&phi.values, a)?,
        inv_eps_p,
        residual: phi.residual,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterControlViolation {
    pub site: Site,
    pub phi: f64,
    pub bound: f64,
    pub l: i64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ClusterControlReport {
    /// Open sites of `Δ_N` at which the inequality was evaluated.
    pub checked: usize,
    /// Open sites skipped because `l_x > N`.
    pub skipped_diameter: usize,
    /// Open sites skipped because their cluster touches the labeled box edge.
    pub skipped_censored: usize,
    pub violations: Vec<ClusterControlViolation>,
}

/// Checks `Φ_N(x) ≤ ξ_0^{−l_x} Σ_{y ∈ ∂A_x ∩ Δ_N} Φ_N(y)` at every open
/// `x ∈ Δ_N` with `l_x ≤ N`. The cluster map must label the same environment
/// the torus was cut from, on a box at least as large as `Δ_N`.
pub fn cluster_control_check(
    tenv: &TorusEnv,
    phi: &StationaryDensity,
    cmap: &ClusterMap,
    xi0: f64,
) -> Result<ClusterControlReport> {
    if cmap.lattice_box().radius < tenv.n {
        return Err(Error::InvalidArgument("cluster map does not cover the torus box".into()));
    }
    let mut report = ClusterControlReport::default();
    for (i, x) in tenv.bx.sites().enumerate() {
        let Some(cluster) = cmap.cluster_of(x) else {
            continue;
        };
        if cluster.censored {
            report.skipped_censored += 1;
            continue;
        }
        if cluster.diameter > tenv.n {
            report.skipped_diameter += 1;
            continue;
        }
        report.checked += 1;
        let mass: f64 = cluster
            .boundary
            .iter()
            .filter(|y| tenv.bx.contains(**y))
            .map(|&y| phi.values[tenv.bx.index(y).unwrap()])
            .sum();
        let bound = xi0.powi(-(cluster.diameter as i32)) * mass;
        // relative slack for the solver tolerance
        if phi.values[i] > bound * (1.0 + 1e-9) + 1e-12 {
            report.violations.push(ClusterControlViolation {
                site: x,
                phi: phi.values[i],
                bound,
                l: cluster.diameter,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSpec;

    #[test]
    fn wrapping() {
        let env = Environment::generate(&EnvSpec::UniformSrw, 2, 0, 3).unwrap();
        let t = periodize(&env, 1).unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t.wrap(Site::new(&[2, -2])), Site::new(&[-1, 1]));
        assert_eq!(t.wrap(Site::new(&[-4, 3])), Site::new(&[-1, 0]));
        assert!(periodize(&env, 4).is_err());
    }

    #[test]
    fn uniform_density_is_one() {
        let env = Environment::generate(&EnvSpec::UniformSrw, 3, 0, 3).unwrap();
        let t = periodize(&env, 3).unwrap();
        let phi = solve_phi(&t, DEFAULT_TOL).unwrap();
        assert_eq!(phi.method, SolveMethod::DoublyStochastic);
        assert!(phi.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn power_iteration_and_direct_agree() {
        let spec = EnvSpec::IidElliptic { shape: 1.0, stay_shape: Some(1.0) };
        let env = Environment::generate(&spec, 2, 5, 4).unwrap();
        let t = periodize(&env, 4).unwrap();
        let pw = solve_phi_with(&t, 1e-11, 1_000_000).unwrap();
        assert_eq!(pw.method, SolveMethod::PowerIteration);
        let dr = solve_phi_with(&t, 1e-11, 0).unwrap();
        assert_eq!(dr.method, SolveMethod::Direct);
        assert!(sup_diff(&pw.values, &dr.values) < 1e-8);
    }

    #[test]
    fn alpha_beta() {
        assert_eq!(beta(2), 2.0);
        assert_eq!(beta(3), 1.5);
        assert_eq!(alpha(2, f64::INFINITY), 2.0);
        assert!((alpha(3, 6.0) - 1.0 / (1.0 - 1.0 / 3.0 + 1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn uniform_diagnostics() {
        let env = Environment::generate(&EnvSpec::UniformSrw, 2, 0, 4).unwrap();
        let t = periodize(&env, 4).unwrap();
        let phi = solve_phi(&t, DEFAULT_TOL).unwrap();
        let d = phi_bound_diagnostics(&t, &phi, 6.0).unwrap();
        assert!((d.phi_eps_beta - 0.25).abs() < 1e-14);
        assert!((d.phi_alpha - 1.0).abs() < 1e-14);
        assert!((d.inv_eps_p - 4.0).abs() < 1e-14);
    }

    #[test]
    fn zero_epsilon_gives_infinite_norm() {
        let env = Environment::from_fn(2, 1, |s| {
            if s == Site::ORIGIN {
                SiteKernel::new(0.0, &[0.5, 0.0])
            } else {
                SiteKernel::uniform(2)
            }
        })
        .unwrap();
        let t = periodize(&env, 1).unwrap();
        let phi = solve_phi(&t, DEFAULT_TOL).unwrap();
        let d = phi_bound_diagnostics(&t, &phi, 4.0).unwrap();
        assert!(d.inv_eps_p.is_infinite());
    }
}
