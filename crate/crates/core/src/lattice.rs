//! Lattice sites, l∞ boxes and the small amount of geometry shared by every
//! other module.
//!
//! Sites carry a fixed array of [`MAX_DIM`] coordinates; coordinates beyond
//! the working dimension are always zero, so norms and arithmetic never need
//! the dimension passed in.

use serde::{Deserialize, Serialize};
use std::fmt;

pub const MAX_DIM: usize = 4;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Site(pub [i32; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn new(coords: &[i32]) -> Self {
        assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    /// `sign · e_axis`.
    pub fn unit(axis: usize, sign: i32) -> Self {
        let mut c = [0; MAX_DIM];
        c[axis] = sign;
        Site(c)
    }

    pub fn coords(&self, dim: usize) -> &[i32] {
        &self.0[..dim]
    }

    #[inline]
    pub fn offset(self, axis: usize, delta: i32) -> Self {
        let mut s = self;
        s.0[axis] += delta;
        s
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64).abs()).sum()
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64).abs()).max().unwrap_or(0)
    }

    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    pub fn dot(&self, s: &[f64]) -> f64 {
        s.iter().zip(self.0.iter()).map(|(a, &c)| a * c as f64).sum()
    }

    pub fn as_f64(&self, dim: usize) -> Vec<f64> {
        self.0[..dim].iter().map(|&c| c as f64).collect()
    }
}

impl std::ops::Add for Site {
    type Output = Site;
    fn add(self, o: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(o.0) {
            *a += b;
        }
        Site(c)
    }
}

impl std::ops::Sub for Site {
    type Output = Site;
    fn sub(self, o: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(o.0) {
            *a -= b;
        }
        Site(c)
    }
}

impl std::ops::Neg for Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site(self.0.map(|c| -c))
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // trailing zero coordinates are elided so a 2-d site prints as (x, y)
        let last = self.0.iter().rposition(|&c| c != 0).map_or(1, |i| i + 1).max(1);
        write!(f, "(")?;
        for (i, c) in self.0[..last].iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// The l∞ box `[-radius, radius]^dim`, indexed in row-major order (first
/// coordinate slowest).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub dim: usize,
    pub radius: i64,
}

impl LatticeBox {
    pub fn new(dim: usize, radius: i64) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        assert!(radius >= 0);
        LatticeBox { dim, radius }
    }

    pub fn side(&self) -> usize {
        (2 * self.radius + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: Site) -> bool {
        x.0[..self.dim].iter().all(|&c| (c as i64).abs() <= self.radius)
    }

    #[inline]
    pub fn index(&self, x: Site) -> Option<usize> {
        let side = self.side() as i64;
        let mut idx: i64 = 0;
        for &c in &x.0[..self.dim] {
            let c = c as i64 + self.radius;
            if c < 0 || c >= side {
                return None;
            }
            idx = idx * side + c;
        }
        Some(idx as usize)
    }

    pub fn site(&self, mut idx: usize) -> Site {
        let side = self.side();
        let mut c = [0; MAX_DIM];
        for k in (0..self.dim).rev() {
            c[k] = (idx % side) as i32 - self.radius as i32;
            idx /= side;
        }
        Site(c)
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).map(move |i| self.site(i))
    }
}

/// All `3^dim − 1` offsets with l∞ norm one.
pub fn linf_offsets(dim: usize) -> Vec<Site> {
    let unit = LatticeBox::new(dim, 1);
    unit.sites().filter(|s| *s != Site::ORIGIN).collect()
}

/// The `2·dim` nearest-neighbour offsets `±e_i`.
pub fn unit_offsets(dim: usize) -> Vec<Site> {
    (0..dim)
        .flat_map(|i| [Site::unit(i, 1), Site::unit(i, -1)])
        .collect()
}

/// `|S_n| = |{x : |x|_∞ = n}|`.
pub fn sphere_size(n: u64, dim: usize) -> u64 {
    if n == 0 {
        return 1;
    }
    (2 * n + 1).pow(dim as u32) - (2 * n - 1).pow(dim as u32)
}

/// Lattice points of the open Euclidean ball `{x : |x − center| < r}`.
pub fn euclidean_ball(dim: usize, center: Site, r: f64) -> Vec<Site> {
    let rad = r.ceil() as i64;
    let bx = LatticeBox::new(dim, rad);
    let r2 = r * r;
    bx.sites()
        .filter(|s| (s.norm_sq() as f64) < r2)
        .map(|s| s + center)
        .collect()
}

/// l∞ diameter `max |x − y|_∞` of a finite set.
pub fn linf_diameter(dim: usize, sites: impl IntoIterator<Item = Site>) -> i64 {
    let mut lo = [i32::MAX; MAX_DIM];
    let mut hi = [i32::MIN; MAX_DIM];
    let mut any = false;
    for s in sites {
        any = true;
        for k in 0..dim {
            lo[k] = lo[k].min(s.0[k]);
            hi[k] = hi[k].max(s.0[k]);
        }
    }
    if !any {
        return 0;
    }
    (0..dim).map(|k| (hi[k] - lo[k]) as i64).max().unwrap_or(0)
}
