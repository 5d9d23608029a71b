//! Balanced difference operators, the Dirichlet problem, and checkers for
//! the maximum principle, the mean value inequality and the cutoff lemma.
//!
//! Sign convention: the Dirichlet solver returns `f` with `L f = −h` in `E`,
//! so that `f(x) = E^x[Σ_{j<T} h(X_j)] + E^x[g(X_T)]` with `T` the exit time.

use crate::contact::{contact_set, ContactSet};
use crate::env::KernelField;
use crate::error::{Error, Result};
use crate::grid::{normalized_norm, GridFunction};
use crate::lattice::{euclidean_ball, linf_diameter, linf_offsets, LatticeBox, Site};
use crate::linalg::{self, SparseMatrix};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Residual tolerance of the Dirichlet solves, relative to the data scale.
pub const SOLVE_TOL: f64 = 1e-10;

/// A finite set `E` with its l∞ boundary `∂E` and closure `Ē`.
#[derive(Clone, Debug)]
pub struct LatticeDomain {
    dim: usize,
    sites: Vec<Site>,
    boundary: Vec<Site>,
    index: HashMap<Site, usize>,
}

impl LatticeDomain {
    pub fn new(dim: usize, sites: impl IntoIterator<Item = Site>) -> Result<Self> {
        let set: BTreeSet<Site> = sites.into_iter().collect();
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        let offsets = linf_offsets(dim);
        let boundary: BTreeSet<Site> = set
            .iter()
            .flat_map(|&x| offsets.iter().map(move |&v| x + v))
            .filter(|y| !set.contains(y))
            .collect();
        let sites: Vec<Site> = set.into_iter().collect();
        let index = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Ok(LatticeDomain { dim, sites, boundary: boundary.into_iter().collect(), index })
    }

    pub fn cube(dim: usize, radius: i64) -> Self {
        Self::new(dim, LatticeBox::new(dim, radius).sites()).expect("nonempty box")
    }

    /// `B_r(center) = {x : |x − center| < r}`.
    pub fn ball(dim: usize, center: Site, r: f64) -> Result<Self> {
        Self::new(dim, euclidean_ball(dim, center, r))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn boundary(&self) -> &[Site] {
        &self.boundary
    }

    pub fn closure(&self) -> Vec<Site> {
        let mut c: Vec<Site> = self.sites.iter().chain(&self.boundary).copied().collect();
        c.sort();
        c
    }

    pub fn contains(&self, x: Site) -> bool {
        self.index.contains_key(&x)
    }

    pub fn index_of(&self, x: Site) -> Option<usize> {
        self.index.get(&x).copied()
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// `diam Ē`, the l∞ diameter of the closure.
    pub fn closure_diameter(&self) -> i64 {
        linf_diameter(self.dim, self.sites.iter().chain(&self.boundary).copied())
    }
}

/// `(L_ω f)(x) = Σ_i ω(x, e_i)[f(x + e_i) + f(x − e_i) − 2 f(x)]`.
pub fn apply_l(field: &impl KernelField, f: &GridFunction, x: Site) -> Result<f64> {
    let k = field.kernel(x)?;
    let fx = f.get(x)?;
    let mut s = 0.0;
    for i in 0..field.dim() {
        s += k.axis[i] * (f.get(x.offset(i, 1))? + f.get(x.offset(i, -1))? - 2.0 * fx);
    }
    Ok(s)
}

fn data_scale(h: &GridFunction, g: &GridFunction) -> f64 {
    h.iter().chain(g.iter()).map(|(_, v)| v.abs()).fold(1.0, f64::max)
}

/// Solve `L_ω f = −h` in `E`, `f = g` on `∂E`.
pub fn dirichlet_solve(
    field: &impl KernelField,
    dom: &LatticeDomain,
    h: &GridFunction,
    g: &GridFunction,
) -> Result<GridFunction> {
    let n = dom.len();
    let mut a = SparseMatrix::new(n);
    let mut b = vec![0.0; n];
    for (i, &x) in dom.sites.iter().enumerate() {
        let k = field.kernel(x)?;
        if !k.is_elliptic() {
            return Err(Error::NotElliptic(x));
        }
        a.add(i, i, 1.0 - k.stay);
        b[i] = h.get(x)?;
        for ax in 0..dom.dim {
            for sign in [1, -1] {
                let y = x.offset(ax, sign);
                match dom.index_of(y) {
                    Some(j) => a.add(i, j, -k.axis[ax]),
                    None => b[i] += k.axis[ax] * g.get(y)?,
                }
            }
        }
    }
    let sol = linalg::solve(&a, &b, SOLVE_TOL)?;
    let mut f: GridFunction = dom.sites.iter().copied().zip(sol).collect();
    for &y in &dom.boundary {
        f.set(y, g.get(y)?);
    }
    let scale = data_scale(h, g);
    for &x in &dom.sites {
        let r = (apply_l(field, &f, x)? + h.get(x)?).abs();
        if r > SOLVE_TOL * scale {
            return Err(Error::NotConverged { residual: r, iterations: 0 });
        }
    }
    Ok(f)
}

/// Balanced jump operator `L_a f(x) = Σ_y a(x, y)(f(y) − f(x))`, stored
/// row by row for the sites where it is needed.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct JumpOperator {
    pub dim: usize,
    rows: BTreeMap<Site, Vec<(Site, f64)>>,
}

/// Tolerance on `Σ_y a(x, y) = 1` and `Σ_y a(x, y)(y − x) = 0`.
pub const BALANCE_TOL: f64 = 1e-10;

impl JumpOperator {
    pub fn new(dim: usize) -> Self {
        JumpOperator { dim, rows: BTreeMap::new() }
    }

    /// Nearest-neighbour operator `a(x, x ± e_i) = ω(x, e_i)` on the given sites.
    pub fn nearest_neighbour(field: &impl KernelField, sites: impl IntoIterator<Item = Site>) -> Result<Self> {
        let dim = field.dim();
        let mut op = JumpOperator::new(dim);
        for x in sites {
            let k = field.kernel(x)?;
            let mut row = Vec::with_capacity(2 * dim + 1);
            if k.stay > 0.0 {
                row.push((x, k.stay));
            }
            for i in 0..dim {
                if k.axis[i] > 0.0 {
                    row.push((x.offset(i, 1), k.axis[i]));
                    row.push((x.offset(i, -1), k.axis[i]));
                }
            }
            op.insert_row(x, row);
        }
        Ok(op)
    }

    pub fn insert_row(&mut self, x: Site, mut row: Vec<(Site, f64)>) {
        row.retain(|e| e.1 > 0.0);
        row.sort_by_key(|a| a.0);
        self.rows.insert(x, row);
    }

    pub fn row(&self, x: Site) -> Result<&[(Site, f64)]> {
        self.rows.get(&x).map(Vec::as_slice).ok_or(Error::MissingValue(x))
    }

    pub fn has_row(&self, x: Site) -> bool {
        self.rows.contains_key(&x)
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.rows.keys().copied()
    }

    /// `h_x = max_{a(x,y) > 0} |x − y|` (Euclidean).
    pub fn reach(&self, x: Site) -> Result<f64> {
        Ok(self.row(x)?.iter().map(|(y, _)| (*y - x).norm()).fold(0.0, f64::max))
    }

    /// `(|Σ_y a − 1|, max_k |Σ_y a (y − x)_k|)`.
    pub fn balance_errors(&self, x: Site) -> Result<(f64, f64)> {
        let row = self.row(x)?;
        let mass: f64 = row.iter().map(|e| e.1).sum();
        let mut drift = 0.0f64;
        for k in 0..self.dim {
            let m: f64 = row.iter().map(|(y, a)| a * (y.0[k] - x.0[k]) as f64).sum();
            drift = drift.max(m.abs());
        }
        Ok(((mass - 1.0).abs(), drift))
    }

    pub fn is_balanced(&self, x: Site) -> Result<bool> {
        let (m, d) = self.balance_errors(x)?;
        Ok(m <= BALANCE_TOL && d <= BALANCE_TOL)
    }

    pub fn apply(&self, f: &GridFunction, x: Site) -> Result<f64> {
        let fx = f.get(x)?;
        let mut s = 0.0;
        for &(y, a) in self.row(x)? {
            if y != x {
                s += a * (f.get(y)? - fx);
            }
        }
        Ok(s)
    }

    /// `E^b = {y ∉ E : a(x, y) > 0 for some x ∈ E}`.
    pub fn exterior_boundary(&self, sites: &[Site]) -> Result<Vec<Site>> {
        let set: BTreeSet<Site> = sites.iter().copied().collect();
        let mut out = BTreeSet::new();
        for &x in sites {
            for &(y, _) in self.row(x)? {
                if !set.contains(&y) {
                    out.insert(y);
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Solve `L_a f = −h` in `E`, `f = g` on `E^b`; returns `f` on `Ẽ`.
    pub fn dirichlet_solve(&self, sites: &[Site], h: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
        let index: HashMap<Site, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let n = sites.len();
        let mut a = SparseMatrix::new(n);
        let mut b = vec![0.0; n];
        for (i, &x) in sites.iter().enumerate() {
            b[i] = h.get(x)?;
            let row = self.row(x)?;
            let stay: f64 = row.iter().filter(|e| e.0 == x).map(|e| e.1).sum();
            a.add(i, i, 1.0 - stay);
            for &(y, w) in row {
                if y == x {
                    continue;
                }
                match index.get(&y) {
                    Some(&j) => a.add(i, j, -w),
                    None => b[i] += w * g.get(y)?,
                }
            }
        }
        let scale = data_scale(h, g);
        let sol = linalg::solve(&a, &b, SOLVE_TOL)?;
        let mut f: GridFunction = sites.iter().copied().zip(sol).collect();
        for y in self.exterior_boundary(sites)? {
            f.set(y, g.get(y)?);
        }
        for &x in sites {
            let r = (self.apply(&f, x)? + h.get(x)?).abs();
            if r > SOLVE_TOL * scale {
                return Err(Error::NotConverged { residual: r, iterations: 0 });
            }
        }
        Ok(f)
    }
}

/// Outcome of one maximum-principle evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpRecord {
    /// `max_E u − max_{∂E} u`.
    pub lhs: f64,
    /// `diam Ē · (Σ_{contact} |g/ε|^d)^{1/d}`.
    pub rhs_core: f64,
    /// `lhs / rhs_core`; withheld when the hypothesis fails at a contact point.
    pub ratio: Option<f64>,
    pub diameter: i64,
    pub contact_size: usize,
    /// Contact points where `L_ω u ≥ −g` fails.
    pub violations: Vec<Site>,
}

/// Relative tolerance when checking `L u ≥ −g` at contact points.
const HYPOTHESIS_TOL: f64 = 1e-9;

/// Evaluates both sides of the maximum principle for `u` on `Ē`.
pub fn mp_check(field: &impl KernelField, dom: &LatticeDomain, u: &GridFunction, g: &GridFunction) -> Result<MpRecord> {
    let closure = dom.closure();
    let contact = contact_set(dom.dim, u, dom.sites(), &closure)?;
    let scale = closure.iter().map(|&z| u.get_or(z, 0.0).abs()).fold(1e-300, f64::max);
    let mut violations = Vec::new();
    let mut sum = 0.0;
    for m in &contact.members {
        let x = m.site;
        let k = field.kernel(x)?;
        let eps = k.epsilon();
        if eps <= 0.0 {
            return Err(Error::NotElliptic(x));
        }
        let gx = g.get(x)?;
        if apply_l(field, u, x)? < -gx - HYPOTHESIS_TOL * scale {
            violations.push(x);
        }
        sum += (gx / eps).abs().powi(dom.dim as i32);
    }
    let diameter = dom.closure_diameter();
    let lhs = u.max_over(dom.sites().iter().copied())? - u.max_over(dom.boundary().iter().copied())?;
    let rhs_core = diameter as f64 * sum.powf(1.0 / dom.dim as f64);
    let ratio = if !violations.is_empty() {
        None
    } else if rhs_core > 0.0 {
        Some(lhs / rhs_core)
    } else if lhs <= 0.0 {
        Some(0.0)
    } else {
        Some(f64::INFINITY)
    };
    Ok(MpRecord { lhs, rhs_core, ratio, diameter, contact_size: contact.len(), violations })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MviRecord {
    pub center: Site,
    pub radius: f64,
    pub sigma: f64,
    pub p: f64,
    /// `max_{B_{σR}} u`.
    pub inner_max: f64,
    /// `‖u⁺/ε^{d/p}‖_{B_R, p}`.
    pub denominator: f64,
    /// `None` when the denominator vanishes (then `u ≤ 0` on the ball).
    pub ratio: Option<f64>,
}

/// Solves for the `ω`-harmonic `u` in `B_R(center)` with boundary data `g`
/// on `∂B_R` and evaluates the mean value ratio.
pub fn mvi_check(
    field: &impl KernelField,
    center: Site,
    radius: f64,
    sigma: f64,
    p: f64,
    g: &GridFunction,
) -> Result<(MviRecord, GridFunction)> {
    let dim = field.dim();
    if !(sigma > 0.0 && sigma < 1.0) || !(p > 0.0 && p <= dim as f64) {
        return Err(Error::InvalidArgument(format!("need σ ∈ (0,1) and p ∈ (0,d], got σ={sigma}, p={p}")));
    }
    let dom = LatticeDomain::ball(dim, center, radius)?;
    let zero = GridFunction::constant(dom.sites().iter().copied(), 0.0);
    let u = dirichlet_solve(field, &dom, &zero, g)?;
    let rec = mvi_ratio(field, &u, center, radius, sigma, p)?;
    Ok((rec, u))
}

pub fn mvi_ratio(field: &impl KernelField, u: &GridFunction, center: Site, radius: f64, sigma: f64, p: f64) -> Result<MviRecord> {
    let dim = field.dim();
    let ball = euclidean_ball(dim, center, radius);
    let inner = euclidean_ball(dim, center, sigma * radius);
    let inner_max = if inner.is_empty() { f64::NEG_INFINITY } else { u.max_over(inner)? };
    let mut vals = Vec::with_capacity(ball.len());
    for &x in &ball {
        let eps = field.kernel(x)?.epsilon();
        let up = u.get(x)?.max(0.0);
        vals.push(if up == 0.0 { 0.0 } else { up / eps.powf(dim as f64 / p) });
    }
    let denominator = if p >= 1.0 {
        normalized_norm(&vals, p)?
    } else {
        // quasi-norm below p = 1
        let s = crate::stats::compensated_sum(vals.iter().map(|v| v.powf(p)));
        (s / vals.len() as f64).powf(1.0 / p)
    };
    let ratio = (denominator > 0.0).then(|| inner_max / denominator);
    Ok(MviRecord { center, radius, sigma, p, inner_max, denominator, ratio })
}

/// `η_R(x) = (1 − |x|²/R²)^β` inside the open ball, zero outside.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub radius: f64,
    pub beta: f64,
}

impl CutoffProfile {
    pub fn new(radius: f64, beta: f64) -> Result<Self> {
        if !(beta >= 2.0) || !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("need β ≥ 2 and R > 0, got β={beta}, R={radius}")));
        }
        Ok(CutoffProfile { radius, beta })
    }

    pub fn eta(&self, x: Site) -> f64 {
        let t = x.norm_sq() as f64 / (self.radius * self.radius);
        if t < 1.0 {
            (1.0 - t).powf(self.beta)
        } else {
            0.0
        }
    }

    /// `β² 2^{4β+2} + 32`.
    pub fn constant(&self) -> f64 {
        self.beta * self.beta * 2f64.powf(4.0 * self.beta + 2.0) + 32.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutoffViolation {
    pub site: Site,
    pub lav: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutoffReport {
    pub contact_size: usize,
    /// Smallest `(L_a v − bound)/scale` over the contact set; nonnegative when
    /// every point passes.
    pub min_margin: f64,
    pub violations: Vec<CutoffViolation>,
}

/// Checks `L_a v ≥ −(β² 2^{4β+2} + 32) η^{1−2/β} R^{−2} h_x² u⁺` at every
/// contact point of `v = η u⁺` on `(B_R, a)`, where `u` is `L_a`-harmonic.
pub fn cutoff_lemma_check(op: &JumpOperator, profile: CutoffProfile, u: &GridFunction) -> Result<CutoffReport> {
    let dim = op.dim;
    let ball = euclidean_ball(dim, Site::ORIGIN, profile.radius);
    let ext = op.exterior_boundary(&ball)?;
    let uscale = ball.iter().chain(&ext).map(|&z| u.get_or(z, 0.0).abs()).fold(1e-300, f64::max);
    let mut worst = 0.0f64;
    for &x in &ball {
        worst = worst.max(op.apply(u, x)?.abs());
    }
    if worst > 1e-9 * uscale {
        return Err(Error::NotHarmonic(worst));
    }
    let closure: Vec<Site> = ball.iter().chain(&ext).copied().collect();
    let v = GridFunction::from_fn(closure.iter().copied(), |z| profile.eta(z) * u.get_or(z, 0.0).max(0.0));
    let contact: ContactSet = contact_set(dim, &v, &ball, &closure)?;
    let vscale = v.iter().map(|(_, x)| x).fold(1e-300, f64::max);
    let c = profile.constant();
    let r2 = profile.radius * profile.radius;
    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    for m in &contact.members {
        let x = m.site;
        let eta = profile.eta(x);
        let h = op.reach(x)?;
        let up = u.get(x)?.max(0.0);
        let bound = if up == 0.0 { 0.0 } else { -c * eta.powf(1.0 - 2.0 / profile.beta) / r2 * h * h * up };
        let lav = op.apply(&v, x)?;
        let margin = (lav - bound) / vscale;
        min_margin = min_margin.min(margin);
        if margin < -1e-8 {
            violations.push(CutoffViolation { site: x, lav, bound });
        }
    }
    Ok(CutoffReport { contact_size: contact.len(), min_margin, violations })
}
