//! Balanced nearest-neighbour environments.
//!
//! A [`SiteKernel`] stores one weight per axis, so `ω(x, e_i) = ω(x, −e_i)`
//! holds by construction. Generated environments materialize an l∞ box and
//! extend lazily outside it: the kernel at any site is a pure function of
//! `(spec, seed, site)`, so a walk leaving the box sees the same i.i.d.
//! field it would have seen in a larger box.

use crate::error::{Error, Result};
use crate::lattice::{LatticeBox, Site, MAX_DIM};
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

/// Tolerance on `stay + 2 Σ axis = 1`.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteKernel {
    pub dim: usize,
    pub stay: f64,
    pub axis: [f64; MAX_DIM],
}

impl SiteKernel {
    pub fn new(stay: f64, axis: &[f64]) -> Self {
        assert!((1..=MAX_DIM).contains(&axis.len()));
        let mut a = [0.0; MAX_DIM];
        a[..axis.len()].copy_from_slice(axis);
        SiteKernel { dim: axis.len(), stay, axis: a }
    }

    /// Simple symmetric walk: mass `1/(2d)` on each neighbour.
    pub fn uniform(dim: usize) -> Self {
        let mut axis = [0.0; MAX_DIM];
        axis[..dim].fill(1.0 / (2 * dim) as f64);
        SiteKernel { dim, stay: 0.0, axis }
    }

    pub fn axes(&self) -> &[f64] {
        &self.axis[..self.dim]
    }

    pub fn total(&self) -> f64 {
        self.stay + 2.0 * self.axes().iter().sum::<f64>()
    }

    pub fn is_elliptic(&self) -> bool {
        self.axes().iter().all(|&w| w > 0.0)
    }

    /// Geometric mean of the axis weights.
    pub fn epsilon(&self) -> f64 {
        let d = self.dim as f64;
        if self.axes().iter().any(|&w| w <= 0.0) {
            return 0.0;
        }
        (self.axes().iter().map(|w| w.ln()).sum::<f64>() / d).exp()
    }

    pub fn min_axis(&self) -> f64 {
        self.axes().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_axis(&self) -> f64 {
        self.axes().iter().copied().fold(0.0, f64::max)
    }

    /// `ω(x, v)` for `v ∈ {o, ±e_i}`; zero for any other displacement.
    pub fn prob(&self, v: Site) -> f64 {
        if v == Site::ORIGIN {
            return self.stay;
        }
        if v.l1() != 1 {
            return 0.0;
        }
        let i = v.0.iter().position(|&c| c != 0).unwrap();
        if i < self.dim {
            self.axis[i]
        } else {
            0.0
        }
    }

    fn normalized(mut self) -> Self {
        let t = self.total();
        self.stay /= t;
        for w in &mut self.axis[..self.dim] {
            *w /= t;
        }
        self
    }

    /// The jump chain kernel `ω(x, e)/(1 − ω(x, o))`.
    pub fn without_laziness(&self) -> Option<SiteKernel> {
        if self.stay >= 1.0 {
            return None;
        }
        if self.stay == 0.0 {
            return Some(*self);
        }
        let keep = 1.0 - self.stay;
        let mut k = *self;
        k.stay = 0.0;
        for w in &mut k.axis[..k.dim] {
            *w /= keep;
        }
        Some(k)
    }

    pub fn violations(&self) -> Vec<ViolationKind> {
        let mut v = Vec::new();
        let finite = self.stay.is_finite() && self.axes().iter().all(|w| w.is_finite());
        if !finite {
            v.push(ViolationKind::NonFinite);
            return v;
        }
        if self.stay < 0.0 || self.axes().iter().any(|&w| w < 0.0) {
            v.push(ViolationKind::NegativeMass);
        }
        let t = self.total();
        if (t - 1.0).abs() > STOCHASTIC_TOL {
            v.push(ViolationKind::Stochasticity { total: t });
        }
        if !self.is_elliptic() {
            v.push(ViolationKind::NotElliptic);
        }
        v
    }
}

/// Law of the per-layer weight `ε_z` in the layered environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum LayerLaw {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// `ε = scale · U^{1/tail}`, heavy near zero when `tail` is small.
    Power { scale: f64, tail: f64 },
}

impl LayerLaw {
    fn validate(&self) -> Result<()> {
        let inside = |v: f64| v > 0.0 && v < 0.5;
        let ok = match *self {
            LayerLaw::Constant { value } => inside(value),
            LayerLaw::Uniform { lo, hi } => inside(lo) && inside(hi) && lo <= hi,
            LayerLaw::Power { scale, tail } => inside(scale) && tail > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "layer law {self:?} must have support inside (0, 1/2)"
            )))
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            LayerLaw::Constant { value } => value,
            LayerLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            LayerLaw::Power { scale, tail } => scale * open_unit(rng).powf(1.0 / tail),
        }
    }
}

/// Generator of a balanced environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    /// Every site carries the simple symmetric kernel.
    UniformSrw,
    /// i.i.d. sites; axis weights (and optionally the holding mass) are
    /// normalized Gamma(shape) variates. `E ε(o)^{-p} < ∞` iff `shape > p/d`.
    IidElliptic {
        shape: f64,
        #[serde(default)]
        stay_shape: Option<f64>,
    },
    /// i.i.d. sites with one uniformly chosen dominant axis carrying at least
    /// `xi0`; the other axes are `b·U^{1/tail}` with `b = (1 − 2 xi0)/(2(d − 1))`.
    IidMaxJump { xi0: f64, tail: f64 },
    /// Kernel depends only on `z(x) = (x_2, …, x_d)`: weight `ε_z` on `±e_1`
    /// and `(1 − 2ε_z)/(2(d − 1))` on the other axes.
    Layered { law: LayerLaw },
    /// Holding mass `1 − δ_x`, `δ_x = U^{1/tail}`, axis weights `δ_x/(2d)`.
    /// With `lazy = false` the holding is dropped (the jump chain).
    Trap {
        tail: f64,
        #[serde(default = "default_true")]
        lazy: bool,
    },
    /// Hand-built kernel table with no rule outside the stored box.
    Explicit,
}

fn default_true() -> bool {
    true
}

/// Uniform on `(0, 1]`.
fn open_unit(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

impl EnvSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidSpec(format!("dimension {dim} not in 2..={MAX_DIM}")));
        }
        match self {
            EnvSpec::UniformSrw | EnvSpec::Explicit => Ok(()),
            EnvSpec::IidElliptic { shape, stay_shape } => {
                if !(*shape > 0.0 && shape.is_finite()) {
                    return Err(Error::InvalidSpec(format!("gamma shape {shape} must be positive")));
                }
                if let Some(s) = stay_shape {
                    if !(*s > 0.0 && s.is_finite()) {
                        return Err(Error::InvalidSpec(format!("stay shape {s} must be positive")));
                    }
                }
                Ok(())
            }
            EnvSpec::IidMaxJump { xi0, tail } => {
                if !(*xi0 > 0.0 && *xi0 < 0.5) {
                    return Err(Error::InvalidSpec(format!("xi0 = {xi0} must lie in (0, 1/2)")));
                }
                if !(*tail > 0.0 && tail.is_finite()) {
                    return Err(Error::InvalidSpec(format!("tail exponent {tail} must be positive")));
                }
                Ok(())
            }
            EnvSpec::Layered { law } => law.validate(),
            EnvSpec::Trap { tail, .. } => {
                if !(*tail > 0.0 && tail.is_finite()) {
                    Err(Error::InvalidSpec(format!("trap tail exponent {tail} must be positive")))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_generative(&self) -> bool {
        !matches!(self, EnvSpec::Explicit)
    }

    /// Kernel at `site` of the environment `(self, seed)`. Pure in its inputs.
    pub fn sample_site(&self, dim: usize, seed: u64, site: Site) -> Option<SiteKernel> {
        let k = match self {
            EnvSpec::Explicit => return None,
            EnvSpec::UniformSrw => return Some(SiteKernel::uniform(dim)),
            EnvSpec::IidElliptic { shape, stay_shape } => {
                let mut r = rng::site_stream(seed, site);
                let g = Gamma::new(*shape, 1.0).expect("validated shape");
                let stay = match stay_shape {
                    Some(s) => Gamma::new(*s, 1.0).expect("validated shape").sample(&mut r),
                    None => 0.0,
                };
                let mut axis = [0.0; MAX_DIM];
                for w in &mut axis[..dim] {
                    // a zero variate would break ellipticity
                    *w = g.sample(&mut r).max(f64::MIN_POSITIVE);
                }
                SiteKernel { dim, stay, axis }
            }
            EnvSpec::IidMaxJump { xi0, tail } => {
                let mut r = rng::site_stream(seed, site);
                let b = (1.0 - 2.0 * xi0) / (2.0 * (dim - 1) as f64);
                let dominant = r.random_range(0..dim);
                let mut axis = [0.0; MAX_DIM];
                let mut rest = 0.0;
                for (i, w) in axis[..dim].iter_mut().enumerate() {
                    if i != dominant {
                        *w = b * open_unit(&mut r).powf(1.0 / tail);
                        rest += *w;
                    }
                }
                axis[dominant] = 0.5 - rest;
                SiteKernel { dim, stay: 0.0, axis }
            }
            EnvSpec::Layered { law } => {
                let mut layer = site;
                layer.0[0] = 0;
                let mut r = rng::site_stream(seed, layer);
                let eps = law.sample(&mut r);
                let mut axis = [0.0; MAX_DIM];
                axis[0] = eps;
                for w in &mut axis[1..dim] {
                    *w = (1.0 - 2.0 * eps) / (2.0 * (dim - 1) as f64);
                }
                SiteKernel { dim, stay: 0.0, axis }
            }
            EnvSpec::Trap { tail, lazy } => {
                if !lazy {
                    return Some(SiteKernel::uniform(dim));
                }
                let mut r = rng::site_stream(seed, site);
                let delta = open_unit(&mut r).powf(1.0 / tail);
                let mut axis = [0.0; MAX_DIM];
                for w in &mut axis[..dim] {
                    *w = delta / (2 * dim) as f64;
                }
                SiteKernel { dim, stay: 1.0 - delta, axis }
            }
        };
        Some(k.normalized())
    }

    /// `p(ε_0) = P{min_i ω(o, e_i) < ε_0}` when it has a closed form.
    pub fn open_probability(&self, dim: usize, eps0: f64) -> Option<f64> {
        match *self {
            EnvSpec::UniformSrw => Some(if eps0 > 1.0 / (2 * dim) as f64 { 1.0 } else { 0.0 }),
            EnvSpec::IidMaxJump { xi0, tail } => {
                if eps0 > xi0 {
                    return None;
                }
                let b = (1.0 - 2.0 * xi0) / (2.0 * (dim - 1) as f64);
                let f = (eps0 / b).powf(tail).min(1.0);
                Some(1.0 - (1.0 - f).powi(dim as i32 - 1))
            }
            _ => None,
        }
    }

    /// Inverse of [`EnvSpec::open_probability`].
    pub fn threshold_for_open_probability(&self, dim: usize, p: f64) -> Option<f64> {
        match *self {
            EnvSpec::IidMaxJump { xi0, tail } => {
                if !(0.0..1.0).contains(&p) {
                    return None;
                }
                let b = (1.0 - 2.0 * xi0) / (2.0 * (dim - 1) as f64);
                let f = 1.0 - (1.0 - p).powf(1.0 / (dim - 1) as f64);
                let eps0 = b * f.powf(1.0 / tail);
                (eps0 <= xi0).then_some(eps0)
            }
            _ => None,
        }
    }
}

/// Read access to a nearest-neighbour kernel field on `Z^d`.
pub trait KernelField: Sync {
    fn dim(&self) -> usize;
    fn kernel(&self, x: Site) -> Result<SiteKernel>;

    /// Whether `kernel(x)` is a plain lookup. Walkers cache the rest.
    fn stored(&self, _x: Site) -> bool {
        true
    }

    /// The common kernel when every site carries the same one.
    fn homogeneous(&self) -> Option<SiteKernel> {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    dim: usize,
    spec: EnvSpec,
    seed: u64,
    laziness_removed: bool,
    bx: LatticeBox,
    kernels: Vec<SiteKernel>,
}

impl Environment {
    /// Materialize the l∞ box of the given radius.
    pub fn generate(spec: &EnvSpec, dim: usize, seed: u64, radius: i64) -> Result<Self> {
        spec.validate(dim)?;
        if !spec.is_generative() {
            return Err(Error::InvalidSpec("explicit environments are built from tables".into()));
        }
        if radius < 1 {
            return Err(Error::InvalidArgument(format!("radius {radius} must be at least 1")));
        }
        let bx = LatticeBox::new(dim, radius);
        let kernels = bx
            .sites()
            .map(|s| spec.sample_site(dim, seed, s).expect("generative spec"))
            .collect();
        Ok(Environment { dim, spec: spec.clone(), seed, laziness_removed: false, bx, kernels })
    }

    /// Hand-built table in row-major order over `[-radius, radius]^dim`.
    pub fn from_kernels(dim: usize, radius: i64, kernels: Vec<SiteKernel>) -> Result<Self> {
        let bx = LatticeBox::new(dim, radius);
        if kernels.len() != bx.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} kernels, got {}",
                bx.len(),
                kernels.len()
            )));
        }
        if let Some(k) = kernels.iter().find(|k| k.dim != dim) {
            return Err(Error::InvalidArgument(format!("kernel of dimension {} in a {dim}-d table", k.dim)));
        }
        Ok(Environment { dim, spec: EnvSpec::Explicit, seed: 0, laziness_removed: false, bx, kernels })
    }

    pub fn from_fn(dim: usize, radius: i64, f: impl Fn(Site) -> SiteKernel) -> Result<Self> {
        let bx = LatticeBox::new(dim, radius);
        Self::from_kernels(dim, radius, bx.sites().map(f).collect())
    }

    /// Rebuild from the parts of a serialized environment.
    pub(crate) fn from_parts(
        dim: usize,
        spec: EnvSpec,
        seed: u64,
        laziness_removed: bool,
        radius: i64,
        kernels: Vec<SiteKernel>,
    ) -> Result<Self> {
        let mut env = Self::from_kernels(dim, radius, kernels)?;
        env.spec = spec;
        env.seed = seed;
        env.laziness_removed = laziness_removed;
        Ok(env)
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn radius(&self) -> i64 {
        self.bx.radius
    }

    pub fn lattice_box(&self) -> LatticeBox {
        self.bx
    }

    pub fn laziness_removed(&self) -> bool {
        self.laziness_removed
    }

    /// Kernels of the materialized box in row-major order.
    pub fn kernels(&self) -> &[SiteKernel] {
        &self.kernels
    }

    pub fn is_materialized(&self, x: Site) -> bool {
        self.bx.contains(x)
    }

    /// Replace the kernel at a materialized site.
    pub fn set_kernel(&mut self, x: Site, k: SiteKernel) -> Result<()> {
        let i = self.bx.index(x).ok_or(Error::Unmaterialized(x))?;
        self.kernels[i] = k;
        Ok(())
    }

    pub fn materialized_kernel(&self, x: Site) -> Result<SiteKernel> {
        self.bx
            .index(x)
            .map(|i| self.kernels[i])
            .ok_or(Error::Unmaterialized(x))
    }

    /// `ε(x) = (∏_i ω(x, e_i))^{1/d}` at a materialized site.
    pub fn epsilon(&self, x: Site) -> Result<f64> {
        Ok(self.materialized_kernel(x)?.epsilon())
    }

    /// The environment of the jump chain, `ω̃(x, e) = ω(x, e)/(1 − ω(x, o))`.
    pub fn remove_laziness(&self) -> Result<Environment> {
        let mut kernels = Vec::with_capacity(self.kernels.len());
        for (i, k) in self.kernels.iter().enumerate() {
            kernels.push(k.without_laziness().ok_or_else(|| Error::Absorbing(self.bx.site(i)))?);
        }
        Ok(Environment {
            dim: self.dim,
            spec: self.spec.clone(),
            seed: self.seed,
            laziness_removed: true,
            bx: self.bx,
            kernels,
        })
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut min_epsilon = f64::INFINITY;
        let mut xi_hat = f64::INFINITY;
        for (i, k) in self.kernels.iter().enumerate() {
            for kind in k.violations() {
                violations.push(SiteViolation { site: self.bx.site(i), kind });
            }
            min_epsilon = min_epsilon.min(k.epsilon());
            xi_hat = xi_hat.min(k.max_axis());
        }
        ValidationReport { sites: self.kernels.len(), violations, min_epsilon, xi_hat }
    }
}

impl KernelField for Environment {
    fn dim(&self) -> usize {
        self.dim
    }

    fn stored(&self, x: Site) -> bool {
        self.bx.contains(x) || self.homogeneous().is_some()
    }

    fn homogeneous(&self) -> Option<SiteKernel> {
        match self.spec {
            EnvSpec::UniformSrw | EnvSpec::Trap { lazy: false, .. } => Some(SiteKernel::uniform(self.dim)),
            _ => None,
        }
    }

    #[inline]
    fn kernel(&self, x: Site) -> Result<SiteKernel> {
        if let Some(i) = self.bx.index(x) {
            return Ok(self.kernels[i]);
        }
        let k = self
            .spec
            .sample_site(self.dim, self.seed, x)
            .ok_or(Error::Unmaterialized(x))?;
        if self.laziness_removed {
            k.without_laziness().ok_or(Error::Absorbing(x))
        } else {
            Ok(k)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ViolationKind {
    Stochasticity { total: f64 },
    NegativeMass,
    NotElliptic,
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteViolation {
    pub site: Site,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sites: usize,
    pub violations: Vec<SiteViolation>,
    pub min_epsilon: f64,
    /// `min_x max_i ω(x, e_i)`.
    pub xi_hat: f64,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_srw_kernels() {
        let env = Environment::generate(&EnvSpec::UniformSrw, 2, 11, 3).unwrap();
        for k in env.kernels() {
            assert_eq!(k.stay, 0.0);
            assert_eq!(k.axes(), &[0.25, 0.25]);
        }
        let r = env.validate();
        assert!(r.is_clean());
        assert_eq!(r.min_epsilon, 0.25);
        assert_eq!(r.xi_hat, 0.25);
    }

    #[test]
    fn layered_constant_law() {
        let spec = EnvSpec::Layered { law: LayerLaw::Constant { value: 0.25 } };
        let env = Environment::generate(&spec, 2, 1, 2).unwrap();
        for k in env.kernels() {
            assert_eq!(k.axes(), &[0.25, 0.25]);
            assert_eq!(k.stay, 0.0);
        }
        let spec3 = EnvSpec::Layered { law: LayerLaw::Constant { value: 0.1 } };
        let env3 = Environment::generate(&spec3, 3, 1, 1).unwrap();
        let k = env3.materialized_kernel(Site::ORIGIN).unwrap();
        assert_abs_diff_eq!(k.axis[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(k.axis[1], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(k.axis[2], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn layered_law_outside_half_interval_is_rejected() {
        for law in [
            LayerLaw::Constant { value: 0.5 },
            LayerLaw::Uniform { lo: 0.0, hi: 0.3 },
            LayerLaw::Power { scale: 0.7, tail: 1.0 },
        ] {
            let spec = EnvSpec::Layered { law };
            assert!(matches!(Environment::generate(&spec, 2, 0, 2), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn layered_kernels_constant_along_first_axis() {
        let spec = EnvSpec::Layered { law: LayerLaw::Uniform { lo: 0.05, hi: 0.45 } };
        let env = Environment::generate(&spec, 3, 5, 4).unwrap();
        for s in env.lattice_box().sites() {
            let n = s.offset(0, 1);
            if env.is_materialized(n) {
                assert_eq!(env.kernel(s).unwrap(), env.kernel(n).unwrap());
            }
        }
    }

    #[test]
    fn epsilon_values() {
        let k = SiteKernel::new(0.2, &[0.3, 0.1]);
        assert_abs_diff_eq!(k.epsilon(), 0.03f64.sqrt(), epsilon = 1e-15);
        assert_eq!(SiteKernel::new(0.6, &[0.2, 0.0]).epsilon(), 0.0);
        assert_eq!(SiteKernel::uniform(2).epsilon(), 0.25);
    }

    #[test]
    fn epsilon_requires_materialized_site() {
        let env = Environment::generate(&EnvSpec::UniformSrw, 2, 0, 1).unwrap();
        assert!(matches!(env.epsilon(Site::new(&[5, 0])), Err(Error::Unmaterialized(_))));
    }

    #[test]
    fn laziness_removal_examples() {
        let lazy = Environment::from_fn(2, 1, |s| {
            if s == Site::ORIGIN {
                SiteKernel::new(0.8, &[0.05, 0.05])
            } else {
                SiteKernel::new(0.5, &[0.125, 0.125])
            }
        })
        .unwrap();
        let jump = lazy.remove_laziness().unwrap();
        for k in jump.kernels() {
            assert_eq!(k.stay, 0.0);
            assert_abs_diff_eq!(k.axis[0], 0.25, epsilon = 1e-15);
            assert_abs_diff_eq!(k.axis[1], 0.25, epsilon = 1e-15);
        }
        let srw = Environment::generate(&EnvSpec::UniformSrw, 2, 0, 2).unwrap();
        assert_eq!(srw.remove_laziness().unwrap().kernels(), srw.kernels());
    }

    #[test]
    fn absorbing_site_is_named() {
        let mut env = Environment::generate(&EnvSpec::UniformSrw, 2, 0, 1).unwrap();
        let bad = Site::new(&[1, -1]);
        env.set_kernel(bad, SiteKernel::new(1.0, &[0.0, 0.0])).unwrap();
        match env.remove_laziness() {
            Err(Error::Absorbing(s)) => assert_eq!(s, bad),
            other => panic!("expected absorbing error, got {other:?}"),
        }
    }

    #[test]
    fn validation_flags_defects() {
        let env = Environment::from_fn(2, 1, |_| SiteKernel::new(0.0, &[0.3, 0.3])).unwrap();
        let r = env.validate();
        assert_eq!(r.violations.len(), 9);
        assert!(matches!(r.violations[0].kind, ViolationKind::Stochasticity { .. }));
    }

    #[test]
    fn max_jump_floor() {
        for dim in 2..=4 {
            let xi0 = 1.0 / (2 * dim) as f64;
            let spec = EnvSpec::IidMaxJump { xi0, tail: 0.5 };
            let radius = if dim == 2 { 50 } else if dim == 3 { 11 } else { 5 };
            let env = Environment::generate(&spec, dim, 3, radius).unwrap();
            let r = env.validate();
            assert!(r.sites >= 10_000 || dim == 4);
            assert!(r.is_clean(), "{:?}", &r.violations[..r.violations.len().min(3)]);
            assert!(r.xi_hat >= xi0 - 1e-15, "xi_hat {} < {}", r.xi_hat, xi0);
        }
    }

    #[test]
    fn open_probability_roundtrip() {
        let spec = EnvSpec::IidMaxJump { xi0: 0.25, tail: 1.0 };
        let eps0 = spec.threshold_for_open_probability(2, 0.05).unwrap();
        assert_abs_diff_eq!(spec.open_probability(2, eps0).unwrap(), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn every_spec_samples_valid_kernels() {
        let specs = [
            EnvSpec::UniformSrw,
            EnvSpec::IidElliptic { shape: 2.0, stay_shape: Some(1.0) },
            EnvSpec::IidElliptic { shape: 0.3, stay_shape: None },
            EnvSpec::IidMaxJump { xi0: 0.25, tail: 0.3 },
            EnvSpec::Layered { law: LayerLaw::Power { scale: 0.4, tail: 0.5 } },
            EnvSpec::Trap { tail: 0.5, lazy: true },
            EnvSpec::Trap { tail: 0.5, lazy: false },
        ];
        for spec in specs {
            for i in 0..10_000i32 {
                let k = spec.sample_site(2, 99, Site::new(&[i, -i / 3])).unwrap();
                assert!(k.violations().is_empty(), "{spec:?}: {k:?}");
            }
        }
    }

    #[test]
    fn lazy_extension_matches_larger_box() {
        let spec = EnvSpec::IidElliptic { shape: 1.5, stay_shape: Some(2.0) };
        let small = Environment::generate(&spec, 2, 42, 2).unwrap().remove_laziness().unwrap();
        let big = Environment::generate(&spec, 2, 42, 6).unwrap().remove_laziness().unwrap();
        for s in big.lattice_box().sites() {
            assert_eq!(small.kernel(s).unwrap(), big.kernel(s).unwrap());
        }
    }
}
