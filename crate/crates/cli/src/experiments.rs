//! One function per experiment kind. Each returns its files and checks;
//! nothing here depends on timing or thread count.

use crate::config::{Calibration, ExperimentConfig, Kind};
use crate::output::{num, opt, Csv, Outcome, Stages};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use rwre_core::io::{read_env, write_env, Encoding};
use rwre_core::lattice::{euclidean_ball, Site};
use rwre_core::percolation::{self, build_cluster_map};
use rwre_core::rng::derive_seed;
use rwre_core::stationary::{self, periodize, solve_phi};
use rwre_core::stats::spearman_trend;
use rwre_core::{corpus, walk, EnvSpec, Environment, KernelField};
use serde::Serialize;
use serde_json::json;

pub fn run(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    match cfg.experiment {
        Kind::GenEnv => gen_env(cfg, stages),
        Kind::Stationary => stationary(cfg, stages),
        Kind::Phi => phi(cfg, stages),
        Kind::Mp => mp(cfg, stages),
        Kind::Mvi => mvi(cfg, stages),
        Kind::Cutoff => cutoff(cfg, stages),
        Kind::Perc => perc(cfg, stages),
        Kind::Mp2 => mp2(cfg, stages),
        Kind::Mvi2 => mvi2(cfg, stages),
        Kind::Clt => clt(cfg, stages),
        Kind::Transience => transience(cfg, stages),
    }
}

fn coords(x: Site, dim: usize) -> Vec<String> {
    x.0[..dim].iter().map(|c| c.to_string()).collect()
}

fn axis_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

fn gen_env(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.gen_env.as_ref().unwrap();
    let mut env = stages.time("generate", || Environment::generate(&cfg.env_spec(), cfg.dim, cfg.seed, p.radius))?;
    if p.remove_laziness {
        env = env.remove_laziness()?;
    }
    let mut bytes = Vec::new();
    write_env(&env, p.encoding, &mut bytes)?;
    let report = stages.time("validate", || env.validate());
    let mut out = Outcome::default();
    let name = match p.encoding {
        Encoding::Csv => "env.csv",
        Encoding::Binary => "env.bin",
    };
    out.file(name, "env", bytes);
    out.check("kernels-valid", report.is_clean(), format!("{} site violations", report.violations.len()));
    out.summary("gen-env", &report);
    Ok(out)
}

fn stationary(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.stationary.as_ref().unwrap();
    let mut out = Outcome::default();
    let env = match &p.env_file {
        Some(f) => {
            out.inputs.push(f.clone());
            let file = std::fs::File::open(f).with_context(|| format!("opening {}", f.display()))?;
            read_env(std::io::BufReader::new(file))?
        }
        None => {
            let r = *p.n.iter().max().unwrap();
            Environment::generate(&cfg.env_spec(), cfg.dim, cfg.seed, r)?
        }
    };
    let dim = env.dim();
    let mut rows = Vec::new();
    for &n in &p.n {
        let t = periodize(&env, n)?;
        let phi = stages.time(&format!("solve N={n}"), || solve_phi(&t, p.tol))?;
        let mut head = axis_header(dim);
        head.push("phi".into());
        let mut csv = Csv::new(&head.iter().map(String::as_str).collect::<Vec<_>>());
        for (x, v) in t.torus_box().sites().zip(&phi.values) {
            let mut r = coords(x, dim);
            r.push(num(*v));
            csv.row(&r);
        }
        out.csv(&format!("phi_N{n}.csv"), "stationary-density", csv);
        let (lo, hi) = phi.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        out.check(&format!("residual N={n}"), phi.residual <= p.tol, format!("‖ΦP − Φ‖∞ = {:e}", phi.residual));
        rows.push(json!({"n": n, "method": phi.method, "residual": phi.residual, "iterations": phi.iterations, "min": lo, "max": hi}));
    }
    out.summary("stationary", json!({"dim": dim, "env_seed": env.seed(), "densities": rows}));
    Ok(out)
}

fn phi(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.phi.as_ref().unwrap();
    let spec = cfg.env_spec();
    let dim = cfg.dim;
    let max_n = *p.n.iter().max().unwrap();
    let eps0 = match p.control_p_open {
        Some(q) => Some(
            spec.threshold_for_open_probability(dim, q)
                .ok_or_else(|| anyhow!("phi.control-p-open needs an env law with a known open probability (iid-max-jump)"))?,
        ),
        None => None,
    };
    let mut out = Outcome::default();
    let mut diag = Csv::new(&["env_index", "env_seed", "n", "method", "residual", "phi_eps_beta", "phi_alpha", "inv_eps_p"]);
    let mut control = Csv::new(&["env_index", "env_seed", "n", "xi0", "checked", "skipped_diameter", "skipped_censored", "violations"]);
    let mut exits = Csv::new(&["env_index", "env_seed", "n", "factor", "estimate", "se", "bound", "excluded", "truncated", "pass"]);
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut violations = 0usize;
    let mut exit_fail = 0usize;
    let mut exit_rows = 0usize;
    for s in 0..p.env_seeds {
        let env_seed = derive_seed(cfg.seed, "phi-env", s);
        let env = Environment::generate(&spec, dim, env_seed, max_n)?;
        for &n in &p.n {
            let t = periodize(&env, n)?;
            if p.diagnostics {
                let phi = stages.time(&format!("solve env {s} N={n}"), || solve_phi(&t, p.tol))?;
                let d = stationary::phi_bound_diagnostics(&t, &phi, p.p)?;
                points.push((n as f64, d.phi_eps_beta));
                diag.row(&[
                    s.to_string(),
                    env_seed.to_string(),
                    n.to_string(),
                    serde_json::to_value(phi.method)?.as_str().unwrap_or_default().to_string(),
                    num(phi.residual),
                    num(d.phi_eps_beta),
                    num(d.phi_alpha),
                    num(d.inv_eps_p),
                ]);
                if let Some(eps0) = eps0 {
                    // the labeling box is Δ_N itself: clusters cut by its edge are skipped
                    let cmap = build_cluster_map(&env, eps0, n)?;
                    let xi0 = t.kernels().iter().map(|k| k.max_axis()).fold(f64::INFINITY, f64::min);
                    let rep = stationary::cluster_control_check(&t, &phi, &cmap, xi0)?;
                    violations += rep.violations.len();
                    control.row(&[
                        s.to_string(),
                        env_seed.to_string(),
                        n.to_string(),
                        num(xi0),
                        rep.checked.to_string(),
                        rep.skipped_diameter.to_string(),
                        rep.skipped_censored.to_string(),
                        rep.violations.len().to_string(),
                    ]);
                }
            }
            if p.torus_exit_samples > 0 {
                let seed = derive_seed(cfg.seed, "torus-exit", s);
                let rep = stages.time(&format!("torus-exit env {s} N={n}"), || walk::torus_exit_check(&t, p.torus_exit_samples, seed, p.step_cap))?;
                exit_rows += 1;
                exit_fail += usize::from(!rep.pass);
                exits.row(&[
                    s.to_string(),
                    env_seed.to_string(),
                    n.to_string(),
                    num(rep.factor),
                    num(rep.estimate.mean),
                    num(rep.estimate.se),
                    num(rep.bound),
                    rep.excluded.to_string(),
                    rep.truncated.to_string(),
                    rep.pass.to_string(),
                ]);
            }
        }
    }
    let mut result = serde_json::Map::new();
    if p.diagnostics {
        out.csv("phi_diagnostics.csv", "phi-diagnostics", diag);
        let mut ns: Vec<f64> = points.iter().map(|q| q.0).collect();
        ns.dedup();
        if ns.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
            let trend = spearman_trend(&xs, &ys);
            let n_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let base = points.iter().filter(|q| q.0 == n_min).map(|q| q.1).fold(0.0, f64::max);
            let top = ys.iter().copied().fold(0.0, f64::max);
            out.check(
                "no-increasing-trend",
                trend.p_increasing >= p.trend_level,
                format!("Spearman ρ = {:.4}, one-sided p = {:.4}", trend.rho, trend.p_increasing),
            );
            out.check(
                "bounded-growth",
                top <= p.max_growth * base,
                format!("max {top:.6} vs {} × smallest-N max {base:.6}", p.max_growth),
            );
            result.insert("trend".into(), serde_json::to_value(trend)?);
            result.insert("max_phi_eps_beta".into(), json!(top));
            result.insert("smallest_n_max".into(), json!(base));
        }
        if eps0.is_some() {
            out.csv("cluster_control.csv", "cluster-control", control);
            out.check("cluster-control", violations == 0, format!("{violations} violations"));
            result.insert("eps0".into(), json!(eps0));
            result.insert("cluster_control_violations".into(), json!(violations));
        }
    }
    if p.torus_exit_samples > 0 {
        out.csv("torus_exit.csv", "torus-exit", exits);
        out.check("torus-exit", exit_fail == 0, format!("{exit_fail} of {exit_rows} tori above the bound"));
    }
    out.summary("phi", result);
    Ok(out)
}

fn mp(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.mp.as_ref().unwrap();
    let recs = stages.time("corpus", || {
        (0..p.instances).into_par_iter().map(|i| corpus::mp_instance(cfg.seed, i, cfg.dim, p.max_radius)).collect::<rwre_core::Result<Vec<_>>>()
    })?;
    let mut csv = Csv::new(&["index", "dim", "box_radius", "env_seed", "lhs", "rhs_core", "ratio", "diameter", "contact_size", "violations"]);
    for r in &recs {
        let m = &r.record;
        csv.row(&[
            r.index.to_string(),
            r.dim.to_string(),
            r.box_radius.to_string(),
            r.env_seed.to_string(),
            num(m.lhs),
            num(m.rhs_core),
            opt(m.ratio),
            m.diameter.to_string(),
            m.contact_size.to_string(),
            m.violations.len().to_string(),
        ]);
    }
    let bad = recs.iter().filter(|r| !r.record.violations.is_empty()).count();
    let max_ratio = recs.iter().filter_map(|r| r.record.ratio).fold(0.0, f64::max);
    let mut out = Outcome::default();
    out.csv("mp.csv", "mp", csv);
    out.check("hypothesis-holds", bad == 0, format!("{bad} instances with L u < −g on the contact set"));
    out.check("ratios-finite", max_ratio.is_finite(), format!("max ratio {max_ratio:.4e}"));
    let cal = calibrate(&mut out, stages, &p.calibration, p.instances, max_ratio, |seed, i| {
        Ok(corpus::mp_instance(seed, i, cfg.dim, p.max_radius)?.record.ratio)
    })?;
    out.summary("mp", json!({"instances": recs.len(), "max_ratio": max_ratio, "calibration": cal}));
    Ok(out)
}

/// Closed ball `{|x| ≤ r}` as an open ball.
fn closed_ball(dim: usize, r: f64) -> Vec<Site> {
    euclidean_ball(dim, Site::ORIGIN, ((r * r).floor() + 0.5).sqrt())
}

fn mvi(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.mvi.as_ref().unwrap();
    let dim = cfg.dim;
    let pexp = p.p.unwrap();
    let recs = stages.time("corpus", || {
        (0..p.instances)
            .into_par_iter()
            .map(|i| corpus::mvi_instance(cfg.seed, i, dim, p.radius, p.sigma, pexp))
            .collect::<rwre_core::Result<Vec<_>>>()
    })?;
    let mut out = Outcome::default();
    let mut csv = Csv::new(&["index", "dim", "env_seed", "radius", "sigma", "p", "inner_max", "denominator", "ratio"]);
    for r in &recs {
        let m = &r.record;
        csv.row(&[
            r.index.to_string(),
            r.dim.to_string(),
            r.env_seed.to_string(),
            num(m.radius),
            num(m.sigma),
            num(m.p),
            num(m.inner_max),
            num(m.denominator),
            opt(m.ratio),
        ]);
    }
    out.csv("mvi.csv", "mvi", csv);
    let max_ratio = recs.iter().filter_map(|r| r.record.ratio).fold(0.0, f64::max);
    out.check("ratios-finite", max_ratio.is_finite(), format!("max ratio {max_ratio:.4e}"));
    let mut result = json!({"instances": recs.len(), "max_ratio": max_ratio});
    if p.instances > 0 {
        result["calibration"] = calibrate(&mut out, stages, &p.calibration, p.instances, max_ratio, |seed, i| {
            Ok(corpus::mvi_instance(seed, i, dim, p.radius, p.sigma, pexp)?.record.ratio)
        })?;
    }

    if !p.exit_radii.is_empty() {
        let envs = corpus::exit_time_environments(dim, derive_seed(cfg.seed, "exit-env", 0))?;
        let mut tau = Csv::new(&["env", "radius", "exact", "mean", "se", "samples", "truncated", "bound", "pass"]);
        let mut fails = 0;
        for (e, (name, env)) in envs.iter().enumerate() {
            for (j, &r) in p.exit_radii.iter().enumerate() {
                let exact = walk::exact_expected_exit_time(env, &closed_ball(dim, r))?.get(Site::ORIGIN)?;
                let seed = derive_seed(cfg.seed, "exit-walk", (e * p.exit_radii.len() + j) as u64);
                let rep = stages.time(&format!("exit {name} r={r}"), || walk::exit_time_samples(env, Site::ORIGIN, r, p.exit_samples, seed, p.step_cap))?;
                let pass = rep.within_bound() && exact <= rep.bound;
                fails += usize::from(!pass);
                tau.row(&[
                    name.clone(),
                    num(r),
                    num(exact),
                    num(rep.mean.mean),
                    num(rep.mean.se),
                    rep.samples.len().to_string(),
                    rep.truncated.to_string(),
                    num(rep.bound),
                    pass.to_string(),
                ]);
            }
        }
        out.csv("exit_times.csv", "exit-times", tau);
        out.check("exit-time-bound", fails == 0, format!("{fails} (env, r) pairs above (r + 1)² + 3 SE"));
        let srw = Environment::generate(&EnvSpec::UniformSrw, dim, 0, 1)?;
        let unit = walk::exact_expected_exit_time(&srw, &closed_ball(dim, 1.0))?.get(Site::ORIGIN)?;
        // one step out with probability 1, back with probability 1/2d
        let closed_form = 4.0 * dim as f64 / (2.0 * dim as f64 - 1.0);
        out.check(
            "unit-ball-exit-time",
            (unit - closed_form).abs() <= 1e-10 && unit <= 4.0,
            format!("E τ(1) = {unit} for the simple walk, closed form {closed_form}"),
        );
        result["unit_ball_exit_time"] = json!(unit);
    }
    out.summary("mvi", result);
    Ok(out)
}

fn cutoff(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.cutoff.as_ref().unwrap();
    let recs = stages.time("corpus", || {
        (0..p.instances).into_par_iter().map(|i| corpus::cutoff_instance(cfg.seed, i)).collect::<rwre_core::Result<Vec<_>>>()
    })?;
    let mut csv = Csv::new(&["index", "dim", "kind", "radius", "beta", "env_seed", "contact_size", "min_margin", "violations"]);
    for r in &recs {
        csv.row(&[
            r.index.to_string(),
            r.dim.to_string(),
            serde_json::to_value(&r.kind)?.as_str().unwrap_or_default().to_string(),
            num(r.radius),
            num(r.beta),
            r.env_seed.to_string(),
            r.report.contact_size.to_string(),
            num(r.report.min_margin),
            r.report.violations.len().to_string(),
        ]);
    }
    let bad: usize = recs.iter().map(|r| r.report.violations.len()).sum();
    let margin = recs.iter().map(|r| r.report.min_margin).fold(f64::INFINITY, f64::min);
    let mut out = Outcome::default();
    out.csv("cutoff.csv", "cutoff", csv);
    out.check("cutoff-inequality", bad == 0, format!("{bad} violations over {} instances, smallest margin {margin:.4}", recs.len()));
    out.summary("cutoff", json!({"instances": recs.len(), "violations": bad, "min_margin": margin}));
    Ok(out)
}

fn perc(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.perc.as_ref().unwrap();
    let spec = cfg.env_spec();
    let dim = cfg.dim;
    let eps0 = match (p.eps0, p.p_open) {
        (Some(e), _) => e,
        (None, Some(q)) => spec
            .threshold_for_open_probability(dim, q)
            .ok_or_else(|| anyhow!("perc.p-open needs an env law with a known open probability (iid-max-jump)"))?,
        (None, None) => bail!("invalid config at `perc`: set `eps0` or `p-open`"),
    };
    let stats = stages.time("connectivity", || percolation::connectivity_stats(&spec, dim, eps0, &p.grid, p.samples, cfg.seed))?;
    let mut out = Outcome::default();
    let table = |rows: &[percolation::QRow]| {
        let mut csv = Csv::new(&["n", "hits", "estimate", "lo", "hi", "samples"]);
        for r in rows {
            csv.row(&[r.n.to_string(), r.hits.to_string(), num(r.estimate), num(r.lo), num(r.hi), stats.samples.to_string()]);
        }
        csv
    };
    out.csv("q.csv", "connectivity", table(&stats.q));
    out.csv("diameter_tail.csv", "diameter-tail", table(&stats.diameter_tail));
    let mut pairs = Csv::new(&["inequality", "m", "n", "excess", "se", "pass"]);
    for (name, rows) in [("upper", &stats.upper_pairs), ("lower", &stats.lower_pairs)] {
        for r in rows {
            pairs.row(&[name.into(), r.m.to_string(), r.n.to_string(), num(r.excess), num(r.se), r.pass.to_string()]);
        }
    }
    out.csv("pairs.csv", "connectivity-pairs", pairs);
    let ci = stats.phi_hat.zip(stats.phi_se).map(|(f, s)| (f - 1.959963984540054 * s, f + 1.959963984540054 * s));
    out.check(
        "decay-rate-positive",
        ci.is_some_and(|c| c.0 > 0.0),
        match (stats.phi_hat, ci) {
            (Some(f), Some(c)) => format!("φ̂ = {f:.4}, 95% CI [{:.4}, {:.4}]", c.0, c.1),
            _ => "too few nonzero q̂_n to fit a rate".into(),
        },
    );
    let upper_fail = stats.upper_pairs.iter().filter(|r| !r.pass).count();
    out.check("pair-upper-bound", upper_fail == 0, format!("{upper_fail} of {} pairs beyond 3σ", stats.upper_pairs.len()));
    if let Some(radius) = p.export_labels {
        let env = Environment::generate(&spec, dim, derive_seed(cfg.seed, "perc-env", 0), radius)?;
        let cmap = build_cluster_map(&env, eps0, radius)?;
        let mut head = axis_header(dim);
        head.extend(["open".into(), "cluster".into(), "l".into()]);
        let mut csv = Csv::new(&head.iter().map(String::as_str).collect::<Vec<_>>());
        for (x, label) in cmap.label_rows() {
            let mut r = coords(x, dim);
            r.push(cmap.is_open(x).unwrap_or(false).to_string());
            r.push(label.map(|l| l.to_string()).unwrap_or_default());
            r.push(cmap.l(x).to_string());
            csv.row(&r);
        }
        out.csv("cluster_labels.csv", "cluster-labels", csv);
    }
    out.summary("perc", &stats);
    Ok(out)
}

/// Runs the reference corpus and checks `run_max ≤ margin · Ĉ`, where `Ĉ`
/// is the largest reference ratio. The constants involved have no known
/// value, so this is the only available test of their existence.
fn calibrate<F>(out: &mut Outcome, stages: &mut Stages, cal: &Calibration, instances: u64, run_max: f64, reference: F) -> Result<serde_json::Value>
where
    F: Fn(u64, u64) -> rwre_core::Result<Option<f64>> + Sync,
{
    let n = cal.reference_instances.unwrap_or(instances);
    let ratios = stages.time("reference corpus", || {
        (0..n).into_par_iter().map(|i| reference(cal.reference_seed, i)).collect::<rwre_core::Result<Vec<_>>>()
    })?;
    let c_hat = ratios.iter().flatten().copied().fold(0.0, f64::max);
    let limit = cal.margin * c_hat;
    out.check(
        "calibrated-constant",
        run_max <= limit,
        format!("max ratio {run_max:.4e} vs {} × {c_hat:.4e} from {n} reference instances (seed {})", cal.margin, cal.reference_seed),
    );
    Ok(json!({"reference_seed": cal.reference_seed, "reference_instances": n, "c_hat": c_hat, "margin": cal.margin, "limit": limit}))
}

fn instances_json<T: Serialize>(recs: &[T]) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(recs)?;
    b.push(b'\n');
    Ok(b)
}

fn mp2(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.mp2.as_ref().unwrap();
    let recs = stages.time("corpus", || {
        (0..p.instances)
            .into_par_iter()
            .map(|i| corpus::mp2_instance(cfg.seed, i, p.max_radius_2d, p.max_radius_3d))
            .collect::<rwre_core::Result<Vec<_>>>()
    })?;
    let excluded = recs.iter().filter(|r| !r.record.hypothesis_violations.is_empty()).count();
    let failures: Vec<u64> = recs.iter().filter(|r| !r.record.pass && r.record.hypothesis_violations.is_empty()).map(|r| r.index).collect();
    let mut out = Outcome::default();
    out.file("mp2.json", "mp2-instances", instances_json(&recs)?);
    out.check("mp2-inequality", failures.is_empty(), format!("{} failures, {excluded} excluded, {} instances", failures.len(), recs.len()));
    let slack = recs.iter().map(|r| r.record.rhs - r.record.max_e).fold(f64::INFINITY, f64::min);
    out.summary("mp2", json!({"instances": recs.len(), "failures": failures, "excluded": excluded, "min_slack": slack}));
    Ok(out)
}

fn mvi2(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.mvi2.as_ref().unwrap();
    let recs = stages.time("corpus", || {
        (0..p.instances)
            .into_par_iter()
            .map(|i| corpus::mvi2_instance(cfg.seed, i, cfg.dim, p.radius, p.sigma, p.p))
            .collect::<rwre_core::Result<Vec<_>>>()
    })?;
    let max_ratio = recs.iter().filter_map(|r| r.record.ratio).fold(0.0, f64::max);
    let mut out = Outcome::default();
    out.file("mvi2.json", "mvi2-instances", instances_json(&recs)?);
    out.check("ratios-finite", max_ratio.is_finite(), format!("max ratio {max_ratio:.4e}"));
    let cal = calibrate(&mut out, stages, &p.calibration, p.instances, max_ratio, |seed, i| {
        Ok(corpus::mvi2_instance(seed, i, cfg.dim, p.radius, p.sigma, p.p)?.record.ratio)
    })?;
    out.summary("mvi2", json!({"instances": recs.len(), "max_ratio": max_ratio, "calibration": cal}));
    Ok(out)
}

fn clt(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.clt.as_ref().unwrap();
    let spec = cfg.env_spec();
    let dim = cfg.dim;
    let mut out = Outcome::default();
    let mut csv = Csv::new(&["env_index", "env_seed", "n", "i", "j", "covariance", "se"]);
    let mut ks = Csv::new(&["env_index", "env_seed", "n", "axis", "ks", "ks_critical"]);
    // reports[s][h]
    let mut reports = Vec::new();
    for s in 0..p.env_seeds {
        let env_seed = derive_seed(cfg.seed, "clt-env", s);
        let env = Environment::generate(&spec, dim, env_seed, 1)?;
        let mut per = Vec::new();
        for (h, &n) in p.n.iter().enumerate() {
            let seed = derive_seed(cfg.seed, "clt-walk", s * p.n.len() as u64 + h as u64);
            let rep = stages.time(&format!("env {s} n={n}"), || walk::clt_covariance(&env, Site::ORIGIN, n, p.samples, seed))?;
            for i in 0..dim {
                for j in 0..dim {
                    csv.row(&[s.to_string(), env_seed.to_string(), n.to_string(), i.to_string(), j.to_string(), num(rep.covariance[i][j]), num(rep.covariance_se[i][j])]);
                }
                ks.row(&[s.to_string(), env_seed.to_string(), n.to_string(), i.to_string(), num(rep.ks[i]), num(rep.ks_critical)]);
            }
            per.push(rep);
        }
        reports.push(per);
    }
    out.csv("covariance.csv", "clt-covariance", csv);
    out.csv("ks.csv", "clt-ks", ks);

    if let Some(target) = p.expected_diagonal {
        let mut worst = 0.0f64;
        let mut off_bad = 0;
        for rep in reports.iter().flatten() {
            for i in 0..dim {
                worst = worst.max((rep.covariance[i][i] - target).abs() / target);
                for j in 0..dim {
                    if i != j && rep.covariance[i][j].abs() > 3.0 * rep.covariance_se[i][j] {
                        off_bad += 1;
                    }
                }
            }
        }
        out.check("diagonal", worst <= p.diagonal_tol, format!("largest relative deviation from {target} is {worst:.4}"));
        out.check("off-diagonal", off_bad == 0, format!("{off_bad} off-diagonal entries beyond 3σ of 0"));
    }
    if reports.len() >= 2 {
        let mut worst = 0.0f64;
        for h in 0..p.n.len() {
            for a in 0..reports.len() {
                for b in a + 1..reports.len() {
                    let (x, y) = (&reports[a][h], &reports[b][h]);
                    for i in 0..dim {
                        let se = x.covariance_se[i][i].hypot(y.covariance_se[i][i]);
                        worst = worst.max((x.covariance[i][i] - y.covariance[i][i]).abs() / se);
                    }
                }
            }
        }
        out.check("environments-agree", worst <= 3.0, format!("largest diagonal gap {worst:.3} joint σ"));
    }
    if let (Some(min), true) = (p.min_relative_change, p.n.len() >= 2) {
        let mean_diag = |r: &walk::CltReport| (0..dim).map(|i| r.covariance[i][i]).sum::<f64>() / dim as f64;
        let changes: Vec<f64> = reports
            .iter()
            .map(|per| {
                let (a, b) = (mean_diag(&per[0]), mean_diag(per.last().unwrap()));
                (a - b).abs() / a.max(b)
            })
            .collect();
        let least = changes.iter().copied().fold(f64::INFINITY, f64::min);
        out.check("scaling-contrast", least > min, format!("smallest relative change of the diagonal {least:.4} (need > {min})"));
    }
    out.summary("clt", json!({"reports": reports}));
    Ok(out)
}

fn transience(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<Outcome> {
    let p = cfg.transience.as_ref().unwrap();
    let spec = cfg.env_spec();
    let dim = cfg.dim;
    let mut out = Outcome::default();
    let mut result = serde_json::Map::new();
    if p.samples > 0 {
        let eps0 = match (p.eps0, p.p_open) {
            (Some(e), _) => Some(e),
            (None, Some(q)) => Some(
                spec.threshold_for_open_probability(dim, q)
                    .ok_or_else(|| anyhow!("transience.p-open needs an env law with a known open probability"))?,
            ),
            (None, None) => None,
        };
        let omega_samples = if eps0.is_some() { p.omega_samples } else { 0 };
        let rep = stages.time("annulus", || {
            percolation::transience_iid_experiment(&spec, dim, eps0.unwrap_or(0.0), p.k, p.i_max, p.samples, omega_samples, p.omega_cap, cfg.seed, p.step_cap)
        })?;
        let mut csv = Csv::new(&["index", "mean_visits", "se", "hit_probability", "hit_lo", "hit_hi", "tail_sum"]);
        for (r, tail) in rep.visits.rows.iter().zip(&rep.tail_sums) {
            csv.row(&[r.index.to_string(), num(r.mean_visits.mean), num(r.mean_visits.se), num(r.hit_probability), num(r.hit_lo), num(r.hit_hi), num(*tail)]);
        }
        out.csv("annulus.csv", "annulus-visits", csv);
        if omega_samples > 0 {
            let mut om = Csv::new(&["index", "radius", "bound", "samples", "frequency", "censored"]);
            for r in &rep.omega {
                om.row(&[r.index.to_string(), num(r.radius), r.bound.to_string(), r.samples.to_string(), opt(r.frequency), r.censored.to_string()]);
            }
            out.csv("omega.csv", "omega-frequency", om);
        }
        if dim >= 3 {
            let probs: Vec<f64> = rep.visits.rows.iter().skip(1).map(|r| r.hit_probability).collect();
            let ratios: Vec<f64> = probs.windows(2).map(|w| w[1] / w[0]).collect();
            out.check(
                "annulus-decay",
                ratios.iter().all(|&q| q < 1.0),
                format!("successive ratios {:?}", ratios.iter().map(|q| (q * 1e4).round() / 1e4).collect::<Vec<_>>()),
            );
        }
        if let Some(expect) = p.expected_cumulative {
            let got = rep.visits.cumulative.mean;
            let rel = (got - expect).abs() / expect;
            out.check(
                "cumulative-visits",
                rel <= p.cumulative_tol,
                format!("{got:.4} ± {:.4} vs {expect:.4} (relative {rel:.4})", rep.visits.cumulative.se),
            );
        }
        out.check("no-truncation", rep.visits.truncated == 0, format!("{} walks hit the step cap", rep.visits.truncated));
        result.insert("annulus".into(), serde_json::to_value(&rep)?);
    }
    if p.horizons.len() >= 2 {
        let env = Environment::generate(&spec, dim, derive_seed(cfg.seed, "horizon-env", 0), 1)?;
        let rep = stages.time("horizons", || walk::visits_by_horizon(&env, &p.horizons, p.horizon_samples, cfg.seed))?;
        let mut csv = Csv::new(&["horizon", "mean_visits", "se"]);
        for (h, v) in rep.horizons.iter().zip(&rep.visits) {
            csv.row(&[h.to_string(), num(v.mean), num(v.se)]);
        }
        out.csv("horizons.csv", "horizon-visits", csv);
        // paired increment between the first and last horizon
        let total: f64 = rep.increments.iter().map(|m| m.mean).sum();
        let (first, last) = (rep.visits[0], *rep.visits.last().unwrap());
        out.check("visits-grow", total >= p.min_increment, format!("visits grew by {total:.4} from n = {} to n = {}", rep.horizons[0], rep.horizons.last().unwrap()));
        if let Some(expect) = p.expected_increment {
            let rel = (total - expect).abs() / expect;
            out.check("growth-rate", rel <= p.increment_tol, format!("increment {total:.4} vs {expect:.4} (relative {rel:.4})"));
        }
        result.insert("horizons".into(), json!({"report": rep, "first": first, "last": last, "increment": total}));
    }
    if out.checks.is_empty() && p.samples == 0 && p.horizons.len() < 2 {
        bail!("invalid config at `transience`: nothing to run (samples = 0 and fewer than two horizons)");
    }
    out.summary("transience", result);
    Ok(out)
}
