//! One function per subcommand. Each returns its files and check records;
//! nothing is written here.

use heatflow::density::FamilyVariant;
use heatflow::diagnostics::{log_sobolev_cap, marginal_law_check, QuantileOracle1D, TestFunction};
use heatflow::flow::{gaussian_start, integrate_flow, inverse_map, pushforward_flows, pushforward_samples};
use heatflow::regularity::{
    fit_scaling_exponent, gradient_norm_sweep, holder_scan, lambda_max_sweep, log_space, score_eigmax_sweep,
    sobol_points, Region, ScalingFit,
};
use heatflow::velocity::{score, score_jacobian_eigmax};
use heatflow::{Error, FlowConfig, Quadrature, Result, TargetDensity, TiltedMeasure};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig, GridConfig, SweepQuantity};
use crate::report::{indexed, Cell, Check, Table};

pub struct Context {
    pub cfg: ExperimentConfig,
    pub density: TargetDensity,
    pub quad: Quadrature,
    pub flow: FlowConfig,
}

#[derive(Default)]
pub struct Run {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

pub fn run(kind: Experiment, ctx: &Context) -> Result<Run> {
    match kind {
        Experiment::Transport => transport(ctx),
        Experiment::MapGrid => map_grid(ctx),
        Experiment::Regularity => regularity(ctx),
        Experiment::Verify => verify(ctx),
        Experiment::ScoreTable => score_table(ctx),
        Experiment::MarginalCheck => marginal_check(ctx),
        Experiment::ExponentSweep => exponent_sweep(ctx),
    }
}

fn grid_points(g: &GridConfig, d: usize) -> Result<Vec<Vec<f64>>> {
    if g.points == 0 || !(g.lo <= g.hi) {
        return Err(Error::InvalidInput("grid needs points >= 1 and lo <= hi".into()));
    }
    let total = (g.points as f64).powi(d as i32);
    if total > 1e6 {
        return Err(Error::InvalidInput(format!("grid of {total} points exceeds 10^6")));
    }
    let axis: Vec<f64> = if g.points == 1 {
        vec![g.lo]
    } else {
        (0..g.points)
            .map(|i| g.lo + (g.hi - g.lo) * i as f64 / (g.points - 1) as f64)
            .collect()
    };
    let mut out = Vec::with_capacity(total as usize);
    for idx in 0..total as usize {
        let mut rem = idx;
        let mut p = vec![0.0; d];
        for v in p.iter_mut().rev() {
            *v = axis[rem % g.points];
            rem /= g.points;
        }
        out.push(p);
    }
    Ok(out)
}

/// `(scale, mean)` when the density is the conjugate Gaussian `N(m, σ²)`.
fn affine_law(density: &TargetDensity) -> Option<(f64, Vec<f64>)> {
    if density.is_ball_supported() {
        return None;
    }
    match &density.family()?.variant {
        FamilyVariant::ConjugateGaussian { mean, variance } => Some((variance.sqrt(), mean.clone())),
        FamilyVariant::Zero => Some((1.0, vec![0.0; density.dim()])),
        _ => None,
    }
}

/// Checks shared by `transport` and `map-grid`.
fn map_checks(density: &TargetDensity, rows: &[(DVector<f64>, DVector<f64>, f64)], full_map: bool) -> Vec<Check> {
    let bad = rows.iter().filter(|r| r.1.iter().any(|v| !v.is_finite())).count();
    let mut checks = vec![Check::at_most("non_finite_images", bad as f64, 0.0)];
    if !full_map {
        return checks;
    }
    if let Some((scale, mean)) = affine_law(density) {
        let excess = rows
            .iter()
            .map(|(x0, xf, tail)| {
                let exact = x0 * scale + DVector::from_column_slice(&mean);
                (xf - exact).amax() - tail
            })
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most("affine_exactness", excess, 1e-6));
    }
    if density.is_ball_supported() {
        let max_norm = rows.iter().map(|r| r.1.norm()).fold(0.0, f64::max);
        checks.push(Check::below("ball_confinement", max_norm, 1.0));
    }
    checks
}

fn map_table(d: usize, with_index: bool) -> Table {
    let mut header: Vec<String> = Vec::new();
    if with_index {
        header.push("index".into());
    }
    header.extend(indexed("x0_", d));
    header.extend(indexed("xf_", d));
    header.push("tail_bound".into());
    header.push("steps".into());
    Table::new(&header)
}

fn map_row(index: Option<usize>, x0: &DVector<f64>, xf: &DVector<f64>, tail: f64, steps: usize) -> Vec<Cell> {
    index
        .map(Cell::U)
        .into_iter()
        .chain(x0.iter().map(|v| Cell::F(*v)))
        .chain(xf.iter().map(|v| Cell::F(*v)))
        .chain([Cell::F(tail), Cell::U(steps)])
        .collect()
}

fn transport(ctx: &Context) -> Result<Run> {
    let tc = &ctx.cfg.transport;
    let flow = FlowConfig {
        record_trajectory: false,
        ..ctx.flow.clone()
    };
    let results = pushforward_flows(&ctx.density, tc.n, tc.t_stop, ctx.cfg.seed, &flow, &ctx.quad)?;
    let mut table = map_table(ctx.density.dim(), true);
    for (i, r) in results.iter().enumerate() {
        table.row(&map_row(Some(i), &r.x0, &r.x_final, r.tail_bound, r.steps_accepted));
    }
    let rows: Vec<_> = results.into_iter().map(|r| (r.x0, r.x_final, r.tail_bound)).collect();
    Ok(Run {
        files: vec![("transport.csv".into(), table.into_string())],
        checks: map_checks(&ctx.density, &rows, tc.t_stop >= 1.0),
    })
}

fn map_grid(ctx: &Context) -> Result<Run> {
    let d = ctx.density.dim();
    let flow = FlowConfig {
        record_trajectory: false,
        ..ctx.flow.clone()
    };
    let points = grid_points(&ctx.cfg.map_grid, d)?;
    let results: Vec<Result<_>> = points
        .par_iter()
        .map(|x| integrate_flow(&ctx.density, x, &flow, &ctx.quad))
        .collect();
    let results: Vec<_> = results.into_iter().collect::<Result<_>>()?;
    let mut table = map_table(d, false);
    for r in &results {
        table.row(&map_row(None, &r.x0, &r.x_final, r.tail_bound, r.steps_accepted));
    }
    let rows: Vec<_> = results.into_iter().map(|r| (r.x0, r.x_final, r.tail_bound)).collect();
    Ok(Run {
        files: vec![("map_grid.csv".into(), table.into_string())],
        checks: map_checks(&ctx.density, &rows, true),
    })
}

fn fit_table(fit: Option<&ScalingFit>) -> String {
    let mut t = Table::new(&["slope", "half_width", "n_scales"]);
    if let Some(f) = fit {
        t.row(&[Cell::F(f.slope), Cell::F(f.half_width), Cell::U(f.n)]);
    }
    t.into_string()
}

fn regularity(ctx: &Context) -> Result<Run> {
    let rc = &ctx.cfg.regularity;
    let region = Region::new(rc.center.clone(), rc.radius, rc.probe_half_width.unwrap_or(rc.radius))?;
    let report = holder_scan(&ctx.density, rc.order, rc.pairs, &rc.scales, &region, ctx.cfg.seed, &ctx.flow, &ctx.quad)?;
    let mut q = Table::new(&["scale", "k", "quotient"]);
    for h in &report.holder_quotients {
        q.row(&[Cell::F(h.scale), Cell::U(h.order), Cell::F(h.quotient)]);
    }
    let mut checks = Vec::new();
    if let Some(f) = &report.fitted_exponent {
        checks.push(Check::at_least("holder_exponent", f.slope, report.probe_spec.alpha - 0.2));
    }
    Ok(Run {
        files: vec![
            ("quotients.csv".into(), q.into_string()),
            ("fit.csv".into(), fit_table(report.fitted_exponent.as_ref())),
        ],
        checks,
    })
}

fn score_table(ctx: &Context) -> Result<Run> {
    let sc = &ctx.cfg.score_table;
    let d = ctx.density.dim();
    let points = grid_points(&sc.grid, d)?;
    let jobs: Vec<(f64, &Vec<f64>)> = sc.taus.iter().flat_map(|t| points.iter().map(move |p| (*t, p))).collect();
    let rows: Vec<Result<(DVector<f64>, f64)>> = jobs
        .par_iter()
        .map(|(tau, x)| {
            Ok((
                score(&ctx.density, *tau, x, &ctx.quad)?,
                score_jacobian_eigmax(&ctx.density, *tau, x, &ctx.quad)?,
            ))
        })
        .collect();
    let mut header = vec!["tau".to_string()];
    header.extend(indexed("x_", d));
    header.extend(indexed("s_", d));
    header.push("eigmax".into());
    let mut table = Table::new(&header);
    let mut bad = 0;
    for ((tau, x), r) in jobs.iter().zip(rows) {
        let (s, e) = r?;
        bad += usize::from(s.iter().any(|v| !v.is_finite()) || !e.is_finite());
        let cells: Vec<Cell> = std::iter::once(Cell::F(*tau))
            .chain(x.iter().map(|v| Cell::F(*v)))
            .chain(s.iter().map(|v| Cell::F(*v)))
            .chain(std::iter::once(Cell::F(e)))
            .collect();
        table.row(&cells);
    }
    Ok(Run {
        files: vec![("score_table.csv".into(), table.into_string())],
        checks: vec![Check::at_most("non_finite_scores", bad as f64, 0.0)],
    })
}

fn marginal_check(ctx: &Context) -> Result<Run> {
    let mc = &ctx.cfg.marginal_check;
    let mut table = Table::new(&["t", "projection", "statistic", "critical", "pass"]);
    let mut checks = Vec::new();
    for (i, &t) in mc.times.iter().enumerate() {
        let r = marginal_law_check(&ctx.density, t, mc.n, ctx.cfg.seed.wrapping_add(i as u64), &ctx.flow, &ctx.quad)?;
        for (j, ks) in r.ks.iter().enumerate() {
            table.row(&[
                Cell::F(t),
                Cell::U(j),
                Cell::F(ks.statistic),
                Cell::F(ks.critical_1pct),
                Cell::U(usize::from(ks.passes())),
            ]);
        }
        let worst = r.ks.iter().max_by(|a, b| (a.statistic / a.critical_1pct).total_cmp(&(b.statistic / b.critical_1pct)));
        if let Some(w) = worst {
            checks.push(Check::below(format!("marginal_ks_t{t}"), w.statistic, w.critical_1pct));
        }
    }
    Ok(Run {
        files: vec![("marginal.csv".into(), table.into_string())],
        checks,
    })
}

fn exponent_sweep(ctx: &Context) -> Result<Run> {
    let sc = &ctx.cfg.exponent_sweep;
    let d = ctx.density.dim();
    let missing = || Error::InvalidConfig("exponent_sweep defaults were not resolved".into());
    let points = sobol_points(&vec![0.0; d], sc.half_width.ok_or_else(missing)?, sc.sup_points);
    let score_sweep = sc.quantity == SweepQuantity::ScoreEigmax;
    let grid = log_space(sc.lo.ok_or_else(missing)?, sc.hi.ok_or_else(missing)?, sc.count);
    let sweep = match sc.quantity {
        SweepQuantity::GradientNorm => gradient_norm_sweep(&ctx.density, &grid, &points, &ctx.quad)?,
        SweepQuantity::LambdaMax => lambda_max_sweep(&ctx.density, &grid, &points, &ctx.quad)?,
        SweepQuantity::ScoreEigmax => score_eigmax_sweep(&ctx.density, &grid, &points, &ctx.quad)?,
    };
    let fit = fit_scaling_exponent(&sweep)?;
    let low = sc.band_low.ok_or_else(missing)?;
    let check = match sc.band_high {
        Some(high) => Check::within("scaling_exponent", fit.slope, low, high),
        None => Check::at_least("scaling_exponent", fit.slope, low),
    };
    let mut table = Table::new(&[if score_sweep { "tau" } else { "gap" }, "sup"]);
    for (x, s) in &sweep {
        table.row(&[Cell::F(*x), Cell::F(*s)]);
    }
    Ok(Run {
        files: vec![
            ("sweep.csv".into(), table.into_string()),
            ("fit.csv".into(), fit_table(Some(&fit))),
        ],
        checks: vec![check],
    })
}

/// Jacobian against finite differences, Gronwall ratio, round trip, score
/// against the differentiated log-density, and the 1D oracles when they apply.
fn verify(ctx: &Context) -> Result<Run> {
    let vc = &ctx.cfg.verify;
    let (p, q) = (&ctx.density, &ctx.quad);
    let d = p.dim();
    let tight = FlowConfig {
        rel_tol: ctx.flow.rel_tol.min(1e-10),
        abs_tol: ctx.flow.abs_tol.min(1e-12),
        record_trajectory: false,
        ..ctx.flow.clone()
    };
    let with_jac = FlowConfig {
        with_jacobian: true,
        ..tight.clone()
    };
    let anchors: Vec<Vec<f64>> = (0..vc.anchors)
        .map(|i| {
            let x = gaussian_start(d, ctx.cfg.seed, i);
            if p.is_ball_supported() {
                x.into_iter().map(|v| v.clamp(-2.0, 2.0)).collect()
            } else {
                x
            }
        })
        .collect();
    let h = 1e-5;
    let per_anchor: Vec<Result<(f64, f64, f64)>> = anchors
        .par_iter()
        .map(|x| {
            let r = integrate_flow(p, x, &with_jac, q)?;
            let j = r.jacobian.clone().expect("jacobian requested");
            let mut fd = DMatrix::zeros(d, d);
            for k in 0..d {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                let col = (integrate_flow(p, &xp, &tight, q)?.x_final - integrate_flow(p, &xm, &tight, q)?.x_final) / (2.0 * h);
                fd.set_column(k, &col);
            }
            let gronwall = r.gronwall.as_ref().map_or(0.0, |g| g.worst_ratio());
            let back = inverse_map(p, r.x_final.as_slice(), &tight, q)?;
            Ok(((&j - &fd).norm() / j.norm(), gronwall, (back - DVector::from_column_slice(x)).norm()))
        })
        .collect();
    let per_anchor: Vec<(f64, f64, f64)> = per_anchor.into_iter().collect::<Result<_>>()?;
    let max_of = |f: fn(&(f64, f64, f64)) -> f64| per_anchor.iter().map(f).fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most("jacobian_fd_rel_error", max_of(|r| r.0), 1e-3),
        Check::at_most("gronwall_ratio", max_of(|r| r.1), 1.05),
        Check::at_most("round_trip", max_of(|r| r.2), 1e-5),
    ];

    let hs = 1e-6;
    let log_density = |tau: f64, x: &[f64]| -> Result<f64> {
        let m = TiltedMeasure::new(p, (-tau).exp(), x, q)?;
        Ok(-0.5 * x.iter().map(|v| v * v).sum::<f64>() + m.log_normalizer())
    };
    let mut score_err: f64 = 0.0;
    for tau in [0.1, 1.0] {
        for x in &anchors {
            let s = score(p, tau, x, q)?;
            for k in 0..d {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += hs;
                xm[k] -= hs;
                let fd = (log_density(tau, &xp)? - log_density(tau, &xm)?) / (2.0 * hs);
                score_err = score_err.max((s[k] - fd).abs() / s[k].abs().max(1.0));
            }
        }
    }
    checks.push(Check::at_most("score_fd_rel_error", score_err, 1e-4));

    match marginal_law_check(p, vc.marginal_t, vc.samples, ctx.cfg.seed, &ctx.flow, q) {
        Ok(r) => {
            let w = r.ks.iter().map(|k| k.statistic - k.critical_1pct).fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::below("marginal_ks_excess", w, 0.0));
        }
        // the rejection sampler cannot envelope targets with log r unbounded above
        Err(Error::EnvelopeFailure(_)) => {}
        Err(e) => return Err(e),
    }

    if p.is_ball_supported() {
        let samples = pushforward_samples(p, vc.samples, 1.0, ctx.cfg.seed, &ctx.flow, q)?;
        let max_norm = samples.iter().map(|v| v.norm()).fold(0.0, f64::max);
        checks.push(Check::below("ball_confinement", max_norm, 1.0));
    } else if d == 1 {
        let oracle = QuantileOracle1D::new(p, 1e-12)?;
        let grid: Vec<f64> = (0..21).map(|i| -3.0 + 0.3 * i as f64).collect();
        let maps: Vec<Result<f64>> = grid
            .par_iter()
            .map(|x| Ok((integrate_flow(p, &[*x], &tight, q)?.x_final[0] - oracle.quantile_map(*x)?).abs()))
            .collect();
        let worst = maps.into_iter().try_fold(0.0, |m, v| Ok::<f64, Error>(f64::max(m, v?)))?;
        checks.push(Check::at_most("quantile_oracle", worst, 1e-3));
        for k in [1, 2] {
            let cap = log_sobolev_cap(&oracle, k, &TestFunction::family(20, ctx.cfg.seed))?;
            let doubled = log_sobolev_cap(&oracle, k, &TestFunction::family(40, ctx.cfg.seed))?;
            let drift = if cap > 0.0 { (doubled - cap).abs() / cap } else { 0.0 };
            checks.push(Check::at_most(format!("log_sobolev_cap_drift_k{k}"), drift, 0.1));
        }
    }
    Ok(Run { files: Vec::new(), checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_order_is_row_major() {
        let g = GridConfig {
            lo: 0.0,
            hi: 1.0,
            points: 2,
        };
        assert_eq!(
            grid_points(&g, 2).unwrap(),
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]
        );
        assert!(grid_points(&GridConfig { points: 1001, ..g.clone() }, 2).is_err());
    }
}
