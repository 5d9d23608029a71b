//! Quenched walk simulation: paths, exit times, visit counts at the origin
//! and diffusive-scaling statistics.
//!
//! Sample `k` of an experiment draws from `rng::stream(seed, label, k)`, so
//! results do not depend on how samples are spread over workers.

use crate::elliptic::SOLVE_TOL;
use crate::env::{KernelField, SiteKernel};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::lattice::Site;
use crate::linalg::{self, SparseMatrix};
use crate::rng::{self, Stream};
use crate::stationary::TorusEnv;
use crate::stats::{self, compensated_sum, wilson_interval, MeanEstimate};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

/// Step codes: 0 holds, `2i + 1` moves by `+e_i`, `2i + 2` by `−e_i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkPath {
    pub start: Site,
    pub steps: Vec<u8>,
}

pub fn step_offset(code: u8) -> Site {
    if code == 0 {
        return Site::ORIGIN;
    }
    let axis = ((code - 1) / 2) as usize;
    Site::unit(axis, if code % 2 == 1 { 1 } else { -1 })
}

impl WalkPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `X_0, …, X_n`.
    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut x = self.start;
        out.push(x);
        for &c in &self.steps {
            x = x + step_offset(c);
            out.push(x);
        }
        out
    }

    pub fn end(&self) -> Site {
        self.steps.iter().fold(self.start, |x, &c| x + step_offset(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StoppingSpec {
    /// `τ(r) = inf{n : |X_n|_2 > r}`.
    L2Exit { r: f64 },
    /// `inf{n ≥ 1 : |X_n − X_0|_∞ > n}`.
    LinfExit { n: i64 },
    /// `τ_i = inf{n : |X_n|_2 > K^i}` for `i = 1, …, i_max + 1`.
    AnnulusSequence { k: u64, i_max: usize },
}

impl StoppingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StoppingSpec::L2Exit { r } if !(r >= 0.0 && r.is_finite()) => {
                Err(Error::InvalidArgument(format!("exit radius {r} must be finite and ≥ 0")))
            }
            StoppingSpec::LinfExit { n } if n < 0 => Err(Error::InvalidArgument(format!("exit distance {n} < 0"))),
            StoppingSpec::AnnulusSequence { k, i_max } => {
                if k < 3 {
                    return Err(Error::InvalidArgument(format!("annulus ratio K = {k} < 3")));
                }
                if (k as f64).powi(i_max as i32 + 1) > 1e9 {
                    return Err(Error::InvalidArgument("outermost annulus radius exceeds 1e9".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Kernel lookups with a per-walk cache for kernels generated on demand.
struct Walker<'a, F: KernelField> {
    field: &'a F,
    constant: Option<SiteKernel>,
    cache: HashMap<Site, SiteKernel>,
}

impl<'a, F: KernelField> Walker<'a, F> {
    fn new(field: &'a F) -> Self {
        Walker { field, constant: field.homogeneous(), cache: HashMap::new() }
    }

    #[inline]
    fn kernel(&mut self, x: Site) -> Result<SiteKernel> {
        if let Some(k) = self.constant {
            return Ok(k);
        }
        if self.field.stored(x) {
            return self.field.kernel(x);
        }
        if let Some(k) = self.cache.get(&x) {
            return Ok(*k);
        }
        let k = self.field.kernel(x)?;
        self.cache.insert(x, k);
        Ok(k)
    }
}

/// Move code drawn from the non-holding part of `k`.
#[inline]
fn draw_move(k: &SiteKernel, rng: &mut Stream) -> u8 {
    let moving = 1.0 - k.stay;
    let mut u = rng.random::<f64>() * moving;
    let mut last = 0;
    for i in 0..k.dim {
        let w = k.axis[i];
        if w <= 0.0 {
            continue;
        }
        if u < w {
            return 2 * i as u8 + 1;
        }
        u -= w;
        if u < w {
            return 2 * i as u8 + 2;
        }
        u -= w;
        last = 2 * i as u8 + 2;
    }
    // rounding left u just past the total
    last
}

/// Number of holds before the next move: geometric with `P{H ≥ h} = stay^h`.
#[inline]
fn draw_holds(stay: f64, rng: &mut Stream) -> u64 {
    if stay <= 0.0 {
        return 0;
    }
    let u = 1.0 - rng.random::<f64>();
    let h = (u.ln() / stay.ln()).floor();
    if h >= u64::MAX as f64 { u64::MAX } else { h as u64 }
}

fn check_moving(k: &SiteKernel, x: Site) -> Result<()> {
    if k.stay >= 1.0 || k.axis[..k.dim].iter().all(|w| *w <= 0.0) {
        return Err(Error::Absorbing(x));
    }
    Ok(())
}

fn check_non_lazy(k: &SiteKernel, x: Site) -> Result<()> {
    check_moving(k, x)?;
    if k.stay > 0.0 {
        return Err(Error::LazySite(x, k.stay));
    }
    Ok(())
}

/// `n` steps of the quenched walk from `x0`.
pub fn sample_path(field: &impl KernelField, x0: Site, n: usize, rng: &mut Stream) -> Result<WalkPath> {
    let mut w = Walker::new(field);
    let mut steps = Vec::with_capacity(n);
    let mut x = x0;
    while steps.len() < n {
        let k = w.kernel(x)?;
        check_moving(&k, x)?;
        let holds = draw_holds(k.stay, rng).min((n - steps.len()) as u64) as usize;
        steps.extend(std::iter::repeat_n(0u8, holds));
        if steps.len() == n {
            break;
        }
        let c = draw_move(&k, rng);
        steps.push(c);
        x = x + step_offset(c);
    }
    Ok(WalkPath { start: x0, steps })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitTimeReport {
    pub radius: f64,
    /// Completed samples of `τ(r)`.
    pub samples: Vec<u64>,
    pub mean: MeanEstimate,
    /// Samples stopped at the step cap (excluded from the mean).
    pub truncated: usize,
    /// `(r + 1)²`.
    pub bound: f64,
}

impl ExitTimeReport {
    pub fn within_bound(&self) -> bool {
        self.mean.mean <= self.bound + 3.0 * self.mean.se
    }
}

/// Samples of `τ(r) = inf{n : |X_n|_2 > r}` from `x0`. Every visited site
/// must have zero holding mass.
pub fn exit_time_samples(
    field: &impl KernelField,
    x0: Site,
    r: f64,
    m: usize,
    seed: u64,
    cap: u64,
) -> Result<ExitTimeReport> {
    StoppingSpec::L2Exit { r }.validate()?;
    let r2 = r * r;
    let draws: Vec<Option<u64>> = (0..m)
        .into_par_iter()
        .map(|s| -> Result<Option<u64>> {
            let mut rng = rng::stream(seed, "exit-time", s as u64);
            let mut w = Walker::new(field);
            let mut x = x0;
            let mut t = 0u64;
            while (x.norm_sq() as f64) <= r2 {
                if t >= cap {
                    return Ok(None);
                }
                let k = w.kernel(x)?;
                check_non_lazy(&k, x)?;
                x = x + step_offset(draw_move(&k, &mut rng));
                t += 1;
            }
            Ok(Some(t))
        })
        .collect::<Result<_>>()?;
    let truncated = draws.iter().filter(|d| d.is_none()).count();
    let samples: Vec<u64> = draws.into_iter().flatten().collect();
    let mean = MeanEstimate::from_samples(&samples.iter().map(|&t| t as f64).collect::<Vec<_>>());
    Ok(ExitTimeReport { radius: r, samples, mean, truncated, bound: (r + 1.0) * (r + 1.0) })
}

/// `E^x[exit time from E]` for `x ∈ E` by an absorbing solve
/// `(I − P_EE) t = 1`; holding mass is allowed.
pub fn exact_expected_exit_time(field: &impl KernelField, sites: &[Site]) -> Result<GridFunction> {
    if sites.is_empty() {
        return Err(Error::EmptySet);
    }
    let index: HashMap<Site, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let n = sites.len();
    let mut a = SparseMatrix::new(n);
    for (i, &x) in sites.iter().enumerate() {
        let k = field.kernel(x)?;
        a.add(i, i, 1.0 - k.stay);
        for ax in 0..k.dim {
            for sign in [1, -1] {
                if let Some(&j) = index.get(&x.offset(ax, sign)) {
                    a.add(i, j, -k.axis[ax]);
                }
            }
        }
    }
    let t = linalg::solve(&a, &vec![1.0; n], SOLVE_TOL)?;
    Ok(sites.iter().copied().zip(t).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusExitReport {
    pub n: i64,
    pub dim: usize,
    /// `c = 16 d²`.
    pub c: f64,
    /// `max(1 − c/N², 0)`.
    pub factor: f64,
    pub estimate: MeanEstimate,
    /// `e^{−1} + 1/2`.
    pub bound: f64,
    /// `c > N²`: the bound is about large `N`, so no verdict.
    pub excluded: bool,
    pub truncated: usize,
    pub pass: bool,
}

/// Estimates `E (1 − c/N²)^τ` for the walk on the torus from a uniformly
/// chosen start, `τ` the first time the walk is more than `N` away (l∞)
/// from where it started.
pub fn torus_exit_check(tenv: &TorusEnv, m: usize, seed: u64, cap: u64) -> Result<TorusExitReport> {
    let n = tenv.period_radius();
    let dim = tenv.dim();
    let c = 16.0 * (dim * dim) as f64;
    let factor = (1.0 - c / (n * n) as f64).max(0.0);
    let bx = tenv.torus_box();
    let draws: Vec<Option<f64>> = (0..m)
        .into_par_iter()
        .map(|s| -> Result<Option<f64>> {
            let mut rng = rng::stream(seed, "torus-exit", s as u64);
            let x0 = bx.site(rng.random_range(0..bx.len()));
            let mut x = x0;
            let mut t = 0u64;
            loop {
                if t >= cap {
                    return Ok(None);
                }
                let k = tenv.kernel(x)?;
                check_moving(&k, x)?;
                t = t.saturating_add(draw_holds(k.stay, &mut rng)).saturating_add(1);
                x = x + step_offset(draw_move(&k, &mut rng));
                if (x - x0).linf() > n {
                    break;
                }
                if factor.powf(t as f64) == 0.0 {
                    // the contribution has already underflowed to zero
                    return Ok(Some(0.0));
                }
            }
            Ok(Some(factor.powf(t as f64)))
        })
        .collect::<Result<_>>()?;
    let truncated = draws.iter().filter(|d| d.is_none()).count();
    let vals: Vec<f64> = draws.into_iter().flatten().collect();
    let estimate = MeanEstimate::from_samples(&vals);
    let bound = (-1.0f64).exp() + 0.5;
    let excluded = c > (n * n) as f64;
    let pass = excluded || estimate.mean <= bound + 3.0 * estimate.se;
    Ok(TorusExitReport { n, dim, c, factor, estimate, bound, excluded, truncated, pass })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnulusRow {
    /// 0 for `[0, τ_1)`, `i` for `[τ_i, τ_{i+1})`.
    pub index: usize,
    pub mean_visits: MeanEstimate,
    /// `P{visit o during the interval}` with a 95% Wilson interval.
    pub hit_probability: f64,
    pub hit_lo: f64,
    pub hit_hi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VisitReport {
    pub k: u64,
    pub i_max: usize,
    pub samples: usize,
    pub truncated: usize,
    pub rows: Vec<AnnulusRow>,
    /// Visits to `o` before `τ_{i_max + 1}`, counting time 0.
    pub cumulative: MeanEstimate,
}

/// Per-sample visit counts to the origin in the intervals
/// `[0, τ_1), [τ_1, τ_2), …, [τ_{i_max}, τ_{i_max+1})`; `None` on truncation.
pub fn annulus_visit_counts(
    field: &impl KernelField,
    k: u64,
    i_max: usize,
    rng: &mut Stream,
    cap: u64,
) -> Result<Option<Vec<u64>>> {
    let radii: Vec<f64> = (1..=i_max + 1).map(|i| (k as f64).powi(i as i32)).collect();
    let mut w = Walker::new(field);
    let mut visits = vec![0u64; i_max + 1];
    visits[0] = 1;
    let mut cur = 0;
    let mut x = Site::ORIGIN;
    let mut t = 0u64;
    loop {
        if t >= cap {
            return Ok(None);
        }
        let kern = w.kernel(x)?;
        check_non_lazy(&kern, x)?;
        x = x + step_offset(draw_move(&kern, rng));
        t += 1;
        let r2 = x.norm_sq() as f64;
        while cur <= i_max && r2 > radii[cur] * radii[cur] {
            cur += 1;
        }
        if cur > i_max {
            return Ok(Some(visits));
        }
        if x == Site::ORIGIN {
            visits[cur] += 1;
        }
    }
}

pub(crate) fn visit_report(k: u64, i_max: usize, draws: Vec<Option<Vec<u64>>>) -> VisitReport {
    let truncated = draws.iter().filter(|d| d.is_none()).count();
    let done: Vec<Vec<u64>> = draws.into_iter().flatten().collect();
    let n = done.len() as u64;
    let rows = (0..=i_max)
        .map(|i| {
            let col: Vec<f64> = done.iter().map(|v| v[i] as f64).collect();
            let hits = done.iter().filter(|v| v[i] > 0).count() as u64;
            let (lo, hi) = wilson_interval(hits, n, 1.959963984540054);
            AnnulusRow {
                index: i,
                mean_visits: MeanEstimate::from_samples(&col),
                hit_probability: if n > 0 { hits as f64 / n as f64 } else { f64::NAN },
                hit_lo: lo,
                hit_hi: hi,
            }
        })
        .collect();
    let cum: Vec<f64> = done.iter().map(|v| v.iter().sum::<u64>() as f64).collect();
    VisitReport { k, i_max, samples: done.len(), truncated, rows, cumulative: MeanEstimate::from_samples(&cum) }
}

/// Visit counts to `o` by annulus, from `o`. Every visited site must have
/// zero holding mass.
pub fn annulus_visits(
    field: &impl KernelField,
    k: u64,
    i_max: usize,
    m: usize,
    seed: u64,
    cap: u64,
) -> Result<VisitReport> {
    StoppingSpec::AnnulusSequence { k, i_max }.validate()?;
    let draws: Vec<Option<Vec<u64>>> = (0..m)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(seed, "annulus", s as u64);
            annulus_visit_counts(field, k, i_max, &mut rng, cap)
        })
        .collect::<Result<_>>()?;
    Ok(visit_report(k, i_max, draws))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizons: Vec<u64>,
    pub samples: usize,
    /// Visits to `o` at times `0..=n`, per horizon.
    pub visits: Vec<MeanEstimate>,
    /// Paired increments between consecutive horizons.
    pub increments: Vec<MeanEstimate>,
}

/// Visits to the origin up to fixed time horizons (holding counts as time).
pub fn visits_by_horizon(field: &impl KernelField, horizons: &[u64], m: usize, seed: u64) -> Result<HorizonReport> {
    let mut hs = horizons.to_vec();
    hs.sort_unstable();
    hs.dedup();
    let Some(&last) = hs.last() else {
        return Err(Error::EmptySet);
    };
    let draws: Vec<Vec<u64>> = (0..m)
        .into_par_iter()
        .map(|s| -> Result<Vec<u64>> {
            let mut rng = rng::stream(seed, "horizon-visits", s as u64);
            let mut w = Walker::new(field);
            let mut counts = vec![0u64; hs.len()];
            let mut x = Site::ORIGIN;
            let mut t = 0u64;
            let mut total = 0u64;
            let mut next = 0;
            loop {
                let k = w.kernel(x)?;
                check_moving(&k, x)?;
                // x is occupied at times t..=end
                let end = t.saturating_add(draw_holds(k.stay, &mut rng));
                let home = x == Site::ORIGIN;
                while next < hs.len() && hs[next] <= end {
                    counts[next] = total + if home { hs[next] - t + 1 } else { 0 };
                    next += 1;
                }
                if end >= last {
                    break;
                }
                if home {
                    total += end - t + 1;
                }
                t = end + 1;
                x = x + step_offset(draw_move(&k, &mut rng));
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let visits = (0..hs.len())
        .map(|i| MeanEstimate::from_samples(&draws.iter().map(|d| d[i] as f64).collect::<Vec<_>>()))
        .collect();
    let increments = (1..hs.len())
        .map(|i| MeanEstimate::from_samples(&draws.iter().map(|d| (d[i] - d[i - 1]) as f64).collect::<Vec<_>>()))
        .collect();
    Ok(HorizonReport { horizons: hs, samples: m, visits, increments })
}

/// `Σ_{t ≤ n} P^o{X_t = o}` for the simple walk on `Z²`, from
/// `P^o{X_{2k} = o} = (C(2k, k) / 4^k)²`.
pub fn srw2_expected_visits(n: u64) -> f64 {
    let mut a = 1.0f64;
    let mut s = stats::CompensatedSum::default();
    s.add(1.0);
    for k in 1..=n / 2 {
        a *= (2 * k - 1) as f64 / (2 * k) as f64;
        s.add(a * a);
    }
    s.value()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltReport {
    pub samples: usize,
    pub horizon: u64,
    pub dim: usize,
    /// Mean of `X_n / √n`.
    pub mean: Vec<f64>,
    /// Covariance of `X_n / √n`.
    pub covariance: Vec<Vec<f64>>,
    /// Standard errors of the covariance entries.
    pub covariance_se: Vec<Vec<f64>>,
    /// 95% half-widths of the diagonal.
    pub half_widths: Vec<f64>,
    /// Kolmogorov distance of each coordinate of `X_n` to the
    /// variance-matched centered normal.
    pub ks: Vec<f64>,
    pub ks_critical: f64,
}

/// Endpoint `X_n` of the quenched walk from `x0`.
pub fn endpoint(field: &impl KernelField, x0: Site, n: u64, rng: &mut Stream) -> Result<Site> {
    let mut w = Walker::new(field);
    let mut x = x0;
    let mut t = 0u64;
    while t < n {
        let k = w.kernel(x)?;
        check_moving(&k, x)?;
        t = t.saturating_add(draw_holds(k.stay, rng));
        if t >= n {
            break;
        }
        x = x + step_offset(draw_move(&k, rng));
        t += 1;
    }
    Ok(x)
}

pub fn clt_covariance(field: &impl KernelField, x0: Site, n: u64, m: usize, seed: u64) -> Result<CltReport> {
    if n == 0 || m < 2 {
        return Err(Error::InvalidArgument("need n ≥ 1 and at least two samples".into()));
    }
    let dim = field.dim();
    let ends: Vec<Site> = (0..m)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(seed, "clt", s as u64);
            endpoint(field, x0, n, &mut rng).map(|x| x - x0)
        })
        .collect::<Result<_>>()?;
    let sq = (n as f64).sqrt();
    let z: Vec<Vec<f64>> = (0..dim)
        .map(|k| ends.iter().map(|e| e.0[k] as f64 / sq).collect())
        .collect();
    let mf = m as f64;
    let mean: Vec<f64> = z.iter().map(|c| compensated_sum(c.iter().copied()) / mf).collect();
    let mut covariance = vec![vec![0.0; dim]; dim];
    let mut covariance_se = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            let prod: Vec<f64> = (0..m).map(|s| (z[i][s] - mean[i]) * (z[j][s] - mean[j])).collect();
            let est = MeanEstimate::from_samples(&prod);
            covariance[i][j] = est.mean * mf / (mf - 1.0);
            covariance_se[i][j] = est.se;
        }
    }
    let half_widths = (0..dim).map(|i| 1.959963984540054 * covariance_se[i][i]).collect();
    let ks = (0..dim)
        .map(|k| {
            let raw: Vec<f64> = ends.iter().map(|e| e.0[k] as f64).collect();
            stats::ks_lattice_normal(&raw, (covariance[k][k] * n as f64).sqrt())
        })
        .collect();
    Ok(CltReport {
        samples: m,
        horizon: n,
        dim,
        mean,
        covariance,
        covariance_se,
        half_widths,
        ks,
        ks_critical: stats::ks_critical_95(m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvSpec, Environment};
    use crate::lattice::euclidean_ball;

    fn srw(dim: usize) -> Environment {
        Environment::generate(&EnvSpec::UniformSrw, dim, 0, 2).unwrap()
    }

    #[test]
    fn zero_length_path() {
        let mut r = rng::stream(1, "t", 0);
        let p = sample_path(&srw(2), Site::new(&[3, -1]), 0, &mut r).unwrap();
        assert_eq!(p.sites(), vec![Site::new(&[3, -1])]);
    }

    #[test]
    fn one_axis_environment_stays_on_its_line() {
        let env = Environment::from_fn(2, 3, |_| SiteKernel::new(0.0, &[0.5, 0.0])).unwrap();
        let mut r = rng::stream(2, "t", 0);
        // the walk leaves the box of an explicit env, so keep it short
        let p = sample_path(&env, Site::ORIGIN, 3, &mut r).unwrap();
        assert!(p.sites().iter().all(|s| s.0[1] == 0));
    }

    #[test]
    fn radius_zero_exits_in_one_step() {
        let rep = exit_time_samples(&srw(2), Site::ORIGIN, 0.0, 100, 3, DEFAULT_STEP_CAP).unwrap();
        assert!(rep.samples.iter().all(|&t| t == 1));
    }

    #[test]
    fn exact_exit_time_on_the_unit_ball() {
        let ball = euclidean_ball(2, Site::ORIGIN, 1.0 + 1e-9);
        assert_eq!(ball.len(), 5);
        let t = exact_expected_exit_time(&srw(2), &ball).unwrap();
        assert!((t.get(Site::ORIGIN).unwrap() - 8.0 / 3.0).abs() < 1e-12);
        let one = exact_expected_exit_time(&srw(2), &[Site::ORIGIN]).unwrap();
        assert!((one.get(Site::ORIGIN).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lazy_sites_are_rejected_for_exit_times() {
        let env = Environment::from_fn(2, 3, |_| SiteKernel::new(0.2, &[0.2, 0.2])).unwrap();
        let e = exit_time_samples(&env, Site::ORIGIN, 2.0, 5, 0, 1000).unwrap_err();
        assert!(matches!(e, Error::LazySite(..)));
    }

    #[test]
    fn holding_geometric_mean() {
        let mut r = rng::stream(5, "t", 0);
        let n = 200_000;
        let s: u64 = (0..n).map(|_| draw_holds(0.75, &mut r)).sum();
        // E H = stay / (1 − stay) = 3
        assert!((s as f64 / n as f64 - 3.0).abs() < 0.05);
    }

    #[test]
    fn i_max_zero_reports_one_row() {
        let rep = annulus_visits(&srw(3), 3, 0, 50, 1, DEFAULT_STEP_CAP).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.rows[0].mean_visits.mean >= 1.0);
    }

    #[test]
    fn srw2_visit_sums() {
        assert_eq!(srw2_expected_visits(0), 1.0);
        assert!((srw2_expected_visits(2) - 1.25).abs() < 1e-15);
        assert!((srw2_expected_visits(4) - (1.25 + 9.0 / 64.0)).abs() < 1e-15);
    }

    #[test]
    fn horizon_counts_match_path_counts() {
        let env = Environment::generate(&EnvSpec::Trap { tail: 0.7, lazy: true }, 2, 4, 6).unwrap();
        let hs = [0u64, 5, 17, 40];
        let rep = visits_by_horizon(&env, &hs, 1, 9).unwrap();
        // replay the same stream step by step
        let mut r = rng::stream(9, "horizon-visits", 0);
        let p = sample_path(&env, Site::ORIGIN, 40, &mut r).unwrap();
        let sites = p.sites();
        for (i, &h) in hs.iter().enumerate() {
            let c = sites[..=h as usize].iter().filter(|s| **s == Site::ORIGIN).count();
            assert_eq!(rep.visits[i].mean, c as f64, "horizon {h}");
        }
    }
}
