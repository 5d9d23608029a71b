//! Upper contact sets.
//!
//! `x` touches the upper concave envelope of `u` over a closure `F` iff
//!
//! ```text
//!   max Σ_z λ_z (u(z) − u(x))   s.t.  Σ_z λ_z (z − x) = 0,  Σ_z λ_z = 1,  λ ≥ 0
//! ```
//!
//! is zero. The optimum is the height of the envelope above `u(x)`; the dual
//! prices of the first `d` rows give a supporting slope `s` with
//! `u(z) − u(x) ≤ s·(z − x) + gap` for every `z ∈ F`. The LP has `d + 1`
//! rows, so a dense revised simplex is plenty.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::lattice::{LatticeBox, Site};
use crate::linalg::dense_inverse;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Relative feasibility slack for membership.
pub const CONTACT_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContactPoint {
    pub site: Site,
    /// Height of the envelope above `u(x)`; at most the slack for members.
    pub gap: f64,
    /// Supporting slope `s ∈ I_u(x)` (up to the slack).
    pub slope: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContactSet {
    pub members: Vec<ContactPoint>,
    /// Absolute slack used, `CONTACT_SLACK · max |u|`.
    pub slack: f64,
    /// Interior sites examined.
    pub tested: usize,
}

impl ContactSet {
    pub fn contains(&self, x: Site) -> bool {
        self.members.iter().any(|m| m.site == x)
    }

    pub fn sites(&self) -> Vec<Site> {
        self.members.iter().map(|m| m.site).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members whose gap is zero up to rounding, i.e. without the slack.
    pub fn strict_members(&self) -> Vec<Site> {
        let tiny = self.slack * 1e-4;
        self.members.iter().filter(|m| m.gap <= tiny).map(|m| m.site).collect()
    }
}

/// Contact set of `u` at the sites of `interior`, with the envelope taken
/// over `closure` (which must contain `interior`).
pub fn contact_set(dim: usize, u: &GridFunction, interior: &[Site], closure: &[Site]) -> Result<ContactSet> {
    let vals: Vec<f64> = closure.iter().map(|&z| u.get(z)).collect::<Result<_>>()?;
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let slack = CONTACT_SLACK * scale;
    let in_closure: HashSet<Site> = closure.iter().copied().collect();
    for x in interior {
        if !in_closure.contains(x) {
            return Err(Error::InvalidArgument(format!("interior site {x} missing from the closure")));
        }
    }

    // A site lying strictly below the midpoint of two closure points is not a
    // vertex of the upper hull: it can neither touch the envelope nor shape it.
    let half_offsets: Vec<Site> = LatticeBox::new(dim, 1)
        .sites()
        .filter(|v| *v > Site::ORIGIN)
        .collect();
    let excess = |z: Site, uz: f64| -> f64 {
        let mut best = f64::NEG_INFINITY;
        for &v in &half_offsets {
            if let (Some(a), Some(b)) = (u.get(z + v).ok(), u.get(z - v).ok()) {
                if in_closure.contains(&(z + v)) && in_closure.contains(&(z - v)) {
                    best = best.max(0.5 * (a + b) - uz);
                }
            }
        }
        best
    };
    let candidates: Vec<(Site, f64)> = closure
        .iter()
        .zip(&vals)
        .filter(|(z, uz)| excess(**z, **uz) <= slack)
        .map(|(z, uz)| (*z, *uz))
        .collect();
    let cand_set: HashSet<Site> = candidates.iter().map(|c| c.0).collect();

    let results: Vec<Option<ContactPoint>> = interior
        .par_iter()
        .map(|&x| -> Result<Option<ContactPoint>> {
            if !cand_set.contains(&x) {
                return Ok(None);
            }
            let ux = u.get(x)?;
            let (gap, slope) = envelope_gap(dim, x, ux, &candidates)?;
            Ok((gap <= slack).then_some(ContactPoint { site: x, gap, slope }))
        })
        .collect::<Result<_>>()?;
    Ok(ContactSet { members: results.into_iter().flatten().collect(), slack, tested: interior.len() })
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Var {
    Col(usize),
    Art(usize),
}

/// Height of the upper concave envelope of `points` above `(x, ux)`, with
/// a supporting slope. `x` itself need not be among the points.
pub fn envelope_gap(dim: usize, x: Site, ux: f64, points: &[(Site, f64)]) -> Result<(f64, Vec<f64>)> {
    let m = dim + 1;
    // columns: the points, then x itself
    let ncols = points.len() + 1;
    let col = |j: usize| -> (Vec<f64>, f64) {
        let mut a = vec![0.0; m];
        a[dim] = 1.0;
        if j < points.len() {
            let (z, uz) = points[j];
            for k in 0..dim {
                a[k] = (z.0[k] - x.0[k]) as f64;
            }
            (a, uz - ux)
        } else {
            (a, 0.0)
        }
    };
    let cols: Vec<(Vec<f64>, f64)> = (0..ncols).map(col).collect();
    let cmax = cols.iter().map(|c| c.1.abs()).fold(0.0, f64::max);
    if cmax == 0.0 {
        return Ok((0.0, vec![0.0; dim]));
    }
    let tol = 1e-12 * cmax;

    let column = |v: Var| -> Vec<f64> {
        match v {
            Var::Col(j) => cols[j].0.clone(),
            Var::Art(r) => {
                let mut e = vec![0.0; m];
                e[r] = 1.0;
                e
            }
        }
    };
    let cost = |v: Var| -> f64 {
        match v {
            Var::Col(j) => cols[j].1,
            Var::Art(_) => 0.0,
        }
    };
    let mut basis: Vec<Var> = (0..dim).map(Var::Art).collect();
    basis.push(Var::Col(ncols - 1));
    let binv_of = |basis: &[Var]| -> Result<Vec<f64>> {
        let mut b = vec![0.0; m * m];
        for (k, &v) in basis.iter().enumerate() {
            let c = column(v);
            for r in 0..m {
                b[r * m + k] = c[r];
            }
        }
        dense_inverse(&b, m)
    };
    let apply = |binv: &[f64], a: &[f64]| -> Vec<f64> {
        (0..m).map(|r| (0..m).map(|k| binv[r * m + k] * a[k]).sum()).collect()
    };
    let mut binv = binv_of(&basis)?;
    let mut in_basis = vec![false; ncols];
    in_basis[ncols - 1] = true;

    // drive the artificials out where the points span that direction
    for r in 0..dim {
        if !matches!(basis[r], Var::Art(_)) {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..ncols {
            if in_basis[j] {
                continue;
            }
            let alpha: f64 = (0..m).map(|k| binv[r * m + k] * cols[j].0[k]).sum();
            if alpha.abs() > 1e-9 && best.is_none_or(|(_, b)| alpha.abs() > b) {
                best = Some((j, alpha.abs()));
            }
        }
        if let Some((j, _)) = best {
            basis[r] = Var::Col(j);
            in_basis[j] = true;
            binv = binv_of(&basis)?;
        }
    }

    let mut rhs = vec![0.0; m];
    rhs[dim] = 1.0;
    let mut xb = apply(&binv, &rhs);
    let mut degenerate_run = 0;
    let mut bland = false;
    for _ in 0..20_000 {
        let cb: Vec<f64> = basis.iter().map(|&v| cost(v)).collect();
        let y: Vec<f64> = (0..m).map(|k| (0..m).map(|r| cb[r] * binv[r * m + k]).sum()).collect();
        // once stalling shows up, Bland's rule stays on so rounding cannot cycle
        bland |= degenerate_run > 50;
        let mut enter: Option<(usize, f64)> = None;
        for j in 0..ncols {
            if in_basis[j] {
                continue;
            }
            let rc = cols[j].1 - (0..m).map(|k| y[k] * cols[j].0[k]).sum::<f64>();
            if rc > tol {
                if bland {
                    enter = Some((j, rc));
                    break;
                }
                if enter.is_none_or(|(_, b)| rc > b) {
                    enter = Some((j, rc));
                }
            }
        }
        let Some((j, _)) = enter else {
            return Ok((y[dim].max(0.0), y[..dim].to_vec()));
        };
        let dir = apply(&binv, &cols[j].0);
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            let art = matches!(basis[r], Var::Art(_));
            if art && dir[r].abs() > 1e-9 {
                // a stuck artificial sits at zero; swap it out without moving
                leave = Some((r, 0.0));
                break;
            }
            if !art && dir[r] > 1e-12 {
                let t = xb[r].max(0.0) / dir[r];
                let better = match leave {
                    None => true,
                    Some((lr, lt)) => t < lt - 1e-15 || (t <= lt + 1e-15 && var_key(basis[r]) < var_key(basis[lr])),
                };
                if better {
                    leave = Some((r, t));
                }
            }
        }
        let Some((r, theta)) = leave else {
            return Err(Error::Singular("unbounded envelope LP".into()));
        };
        degenerate_run = if theta <= 1e-12 { degenerate_run + 1 } else { 0 };
        if let Var::Col(old) = basis[r] {
            in_basis[old] = false;
        }
        basis[r] = Var::Col(j);
        in_basis[j] = true;
        binv = binv_of(&basis)?;
        xb = apply(&binv, &rhs);
    }
    Err(Error::NotConverged { residual: f64::NAN, iterations: 20_000 })
}

fn var_key(v: Var) -> usize {
    match v {
        Var::Art(r) => r,
        Var::Col(j) => 1_000_000 + j,
    }
}
