use crate::error::{Error, Result};
use crate::lattice::Site;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Real function on a finite set of lattice sites.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    values: BTreeMap<Site, f64>,
}

impl GridFunction {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fn(sites: impl IntoIterator<Item = Site>, f: impl Fn(Site) -> f64) -> Self {
        GridFunction { values: sites.into_iter().map(|s| (s, f(s))).collect() }
    }

    pub fn constant(sites: impl IntoIterator<Item = Site>, c: f64) -> Self {
        Self::from_fn(sites, |_| c)
    }

    pub fn get(&self, x: Site) -> Result<f64> {
        self.values.get(&x).copied().ok_or(Error::MissingValue(x))
    }

    pub fn get_or(&self, x: Site, default: f64) -> f64 {
        self.values.get(&x).copied().unwrap_or(default)
    }

    pub fn set(&mut self, x: Site, v: f64) {
        self.values.insert(x, v);
    }

    pub fn contains(&self, x: Site) -> bool {
        self.values.contains_key(&x)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.values.iter().map(|(s, v)| (*s, *v))
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.values.keys().copied()
    }

    pub fn map(&self, f: impl Fn(Site, f64) -> f64) -> GridFunction {
        GridFunction { values: self.values.iter().map(|(s, v)| (*s, f(*s, *v))).collect() }
    }

    /// `max_{x ∈ set} f(x)`.
    pub fn max_over(&self, set: impl IntoIterator<Item = Site>) -> Result<f64> {
        let mut m = f64::NEG_INFINITY;
        let mut any = false;
        for x in set {
            m = m.max(self.get(x)?);
            any = true;
        }
        if any {
            Ok(m)
        } else {
            Err(Error::EmptySet)
        }
    }
}

impl FromIterator<(Site, f64)> for GridFunction {
    fn from_iter<I: IntoIterator<Item = (Site, f64)>>(iter: I) -> Self {
        GridFunction { values: iter.into_iter().collect() }
    }
}

/// `(|E|⁻¹ Σ |v|^j)^{1/j}` over a slice of values; `j = ∞` gives the max.
pub fn normalized_norm(values: &[f64], j: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(j >= 1.0) {
        return Err(Error::InvalidArgument(format!("norm exponent {j} must be at least 1")));
    }
    let m = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if j.is_infinite() || m.is_infinite() {
        return Ok(m);
    }
    if m == 0.0 {
        return Ok(0.0);
    }
    // factor out the max so large exponents do not overflow
    let s = crate::stats::compensated_sum(values.iter().map(|v| (v.abs() / m).powf(j)));
    Ok(m * (s / values.len() as f64).powf(1.0 / j))
}

/// `‖f‖_{E,j}`.
pub fn norm(f: &GridFunction, set: &[Site], j: f64) -> Result<f64> {
    let vals = set.iter().map(|&x| f.get(x)).collect::<Result<Vec<_>>>()?;
    normalized_norm(&vals, j)
}
