//! Finite-difference probes of the transport map, Hölder quotient scans and
//! log-log exponent fits.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::density::TargetDensity;
use crate::error::{ensure_finite, Error, Result};
use crate::flow::{integrate_flow, FlowConfig};
use crate::quadrature::Quadrature;
use crate::rng;
use crate::velocity::{max_eigenvalue, score_jacobian_eigmax, velocity_jacobian};

/// Size of the fixed low-discrepancy set used for sup norms.
pub const SUP_POINTS: usize = 256;
/// Half-width of the box `[-3, 3]^d` holding the sup-norm set.
pub const SUP_HALF_WIDTH: f64 = 3.0;

/// `n` scrambled Sobol points in `center + half_width · [-1, 1]^d`.
pub fn sobol_points(center: &[f64], half_width: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n as u32)
        .map(|i| {
            center
                .iter()
                .enumerate()
                .map(|(k, c)| c + half_width * (2.0 * sobol_burley::sample(i, k as u32, 0) as f64 - 1.0))
                .collect()
        })
        .collect()
}

/// The 256-point sup-norm set in `[-3, 3]^d`.
pub fn sup_points(dim: usize) -> Vec<Vec<f64>> {
    sobol_points(&vec![0.0; dim], SUP_HALF_WIDTH, SUP_POINTS)
}

/// Central finite-difference derivative of order `k` of the map at one point,
/// stored as `values[out + d·(i_1 + d·(i_2 + …))]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeProbe {
    pub order: usize,
    pub dim: usize,
    pub step: f64,
    pub values: Vec<f64>,
    /// `max |FD - J| / max(1, max |J|)` against the propagated Jacobian (k = 1).
    pub jacobian_gap: Option<f64>,
    /// Estimated finite-difference noise, `rel_tol · max(1, ‖T(x)‖) / h^k`.
    pub noise_floor: f64,
}

impl DerivativeProbe {
    pub fn get(&self, out: usize, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for &i in idx.iter().rev() {
            flat = flat * self.dim + i;
        }
        self.values[out + self.dim * flat]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_order(k: usize) -> Result<()> {
    if (1..=3).contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("derivative order must be 1, 2 or 3, got {k}")))
    }
}

/// Evaluates `T` at every `x + h·n` for the integer offsets `n`, in parallel.
fn map_on_offsets(
    density: &TargetDensity,
    x: &[f64],
    h: f64,
    offsets: &[Vec<i32>],
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<HashMap<Vec<i32>, DVector<f64>>> {
    let plain = FlowConfig {
        with_jacobian: false,
        record_trajectory: false,
        ..cfg.clone()
    };
    let images: Vec<Result<DVector<f64>>> = offsets
        .par_iter()
        .map(|n| {
            let p: Vec<f64> = x.iter().zip(n).map(|(x, n)| x + h * *n as f64).collect();
            integrate_flow(density, &p, &plain, quad).map(|r| r.x_final)
        })
        .collect();
    offsets
        .iter()
        .cloned()
        .zip(images)
        .map(|(n, r)| r.map(|v| (n, v)))
        .collect()
}

/// All multi-indices in `{0..d}^k`, first index fastest.
fn multi_indices(d: usize, k: usize) -> Vec<Vec<usize>> {
    (0..d.pow(k as u32))
        .map(|mut flat| {
            (0..k)
                .map(|_| {
                    let i = flat % d;
                    flat /= d;
                    i
                })
                .collect()
        })
        .collect()
}

fn sign_patterns(k: usize) -> impl Iterator<Item = Vec<i32>> {
    (0..1usize << k).map(move |bits| (0..k).map(|m| if bits >> m & 1 == 1 { -1 } else { 1 }).collect())
}

/// Order-`k` central finite-difference derivative of `T` at `x` with step `h`.
pub fn derivative_probe(
    density: &TargetDensity,
    k: usize,
    x: &[f64],
    h: f64,
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<DerivativeProbe> {
    check_order(k)?;
    if !(1e-5..=1e-1).contains(&h) {
        return Err(Error::InvalidInput(format!("probe step must lie in [1e-5, 1e-1], got {h}")));
    }
    ensure_finite(x)?;
    let d = density.dim();
    if x.len() != d {
        return Err(Error::InvalidInput("probe point dimension mismatch".into()));
    }
    let indices = multi_indices(d, k);
    let offset_of = |idx: &[usize], signs: &[i32]| {
        let mut n = vec![0i32; d];
        for (i, s) in idx.iter().zip(signs) {
            n[*i] += s;
        }
        n
    };
    let mut offsets: Vec<Vec<i32>> = vec![vec![0; d]];
    for idx in &indices {
        for signs in sign_patterns(k) {
            offsets.push(offset_of(idx, &signs));
        }
    }
    offsets.sort();
    offsets.dedup();
    let images = map_on_offsets(density, x, h, &offsets, cfg, quad)?;
    let denom = (2.0 * h).powi(k as i32);
    let mut values = vec![0.0; d * indices.len()];
    for (flat, idx) in indices.iter().enumerate() {
        let mut acc = DVector::zeros(d);
        for signs in sign_patterns(k) {
            let sign: i32 = signs.iter().product();
            acc += &images[&offset_of(idx, &signs)] * sign as f64;
        }
        for out in 0..d {
            values[out + d * flat] = acc[out] / denom;
        }
    }
    let center = &images[&vec![0; d]];
    let jacobian_gap = if k == 1 {
        let j = integrate_flow(
            density,
            x,
            &FlowConfig {
                with_jacobian: true,
                record_trajectory: false,
                ..cfg.clone()
            },
            quad,
        )?
        .jacobian
        .expect("jacobian requested");
        let fd = DMatrix::from_column_slice(d, d, &values);
        Some((fd - &j).abs().max() / j.abs().max().max(1.0))
    } else {
        None
    };
    Ok(DerivativeProbe {
        order: k,
        dim: d,
        step: h,
        values,
        jacobian_gap,
        noise_floor: cfg.rel_tol * center.norm().max(1.0) / h.powi(k as i32),
    })
}

/// Probe region: a ball inside a fixed candidate box. Candidates are the same
/// Sobol points for every radius, so larger radii see a superset of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
    pub probe_half_width: f64,
}

impl Region {
    pub fn new(center: Vec<f64>, radius: f64, probe_half_width: f64) -> Result<Self> {
        if !(radius > 0.0 && probe_half_width > 0.0) {
            return Err(Error::InvalidInput("region radius and probe box must be positive".into()));
        }
        Ok(Self {
            center,
            radius,
            probe_half_width,
        })
    }

    /// Ball of `radius` probed from its own bounding box.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(center, radius, radius)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderQuotient {
    pub order: usize,
    pub scale: f64,
    /// `max ‖∇^k T(x) - ∇^k T(y)‖ / h^α` over the pairs at this scale.
    pub quotient: f64,
    pub max_difference: f64,
    /// Quotient-level noise, `noise_tolerance / h^α`.
    pub noise_floor: f64,
}

impl HolderQuotient {
    pub fn significant(&self) -> bool {
        self.quotient > 10.0 * self.noise_floor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Twice the standard error of the slope.
    pub half_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    pub region: Region,
    pub scales: Vec<f64>,
    pub candidate_count: usize,
    pub pair_count: usize,
    pub seed: u64,
    /// Finite-difference step applied to the Jacobian for orders above one.
    pub fd_step: Option<f64>,
    /// Absolute noise of one `∇^k T` evaluation.
    pub noise_tolerance: f64,
    /// Exponent `α` dividing the differences.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub order: usize,
    pub lipschitz_est: f64,
    pub holder_quotients: Vec<HolderQuotient>,
    /// Slope of `log max_difference` against `log h` over significant scales;
    /// `None` when fewer than three scales rise above the noise floor.
    pub fitted_exponent: Option<ScalingFit>,
    pub probe_spec: ProbeSpec,
}

/// `∇^k T(x)` flattened: the propagated Jacobian for `k = 1`, and
/// `k - 1` nested central differences of it otherwise.
fn jacobian_derivative(
    density: &TargetDensity,
    k: usize,
    x: &[f64],
    fd_step: f64,
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = x.len();
    let jac_at = |p: &[f64]| -> Result<(DVector<f64>, DVector<f64>)> {
        let r = integrate_flow(density, p, cfg, quad)?;
        let j = r.jacobian.expect("jacobian requested");
        Ok((r.x_final, DVector::from_column_slice(j.as_slice())))
    };
    if k == 1 {
        return jac_at(x);
    }
    let (image, _) = jac_at(x)?;
    let indices = multi_indices(d, k - 1);
    let mut out = Vec::with_capacity(d * d * indices.len());
    let mut cache: HashMap<Vec<i32>, DVector<f64>> = HashMap::new();
    for idx in &indices {
        let mut acc = DVector::zeros(d * d);
        for signs in sign_patterns(k - 1) {
            let mut n = vec![0i32; d];
            for (i, s) in idx.iter().zip(&signs) {
                n[*i] += s;
            }
            let sign: i32 = signs.iter().product();
            if !cache.contains_key(&n) {
                let p: Vec<f64> = x.iter().zip(&n).map(|(x, n)| x + fd_step * *n as f64).collect();
                cache.insert(n.clone(), jac_at(&p)?.1);
            }
            acc += &cache[&n] * sign as f64;
        }
        out.extend((acc / (2.0 * fd_step).powi(k as i32 - 1)).iter());
    }
    Ok((image, DVector::from_vec(out)))
}

/// Hölder quotients of `∇^k T` on pairs `(x, x + h w)` at each scale `h`.
///
/// Base points are the candidate Sobol points of `region` that fall in its
/// ball; directions `w` are uniform on the sphere and shared across scales.
#[allow(clippy::too_many_arguments)]
pub fn holder_scan(
    density: &TargetDensity,
    k: usize,
    pair_count: usize,
    scales: &[f64],
    region: &Region,
    seed: u64,
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<RegularityReport> {
    check_order(k)?;
    let d = density.dim();
    if region.center.len() != d {
        return Err(Error::InvalidInput("region center dimension mismatch".into()));
    }
    if scales.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidInput("scales must be strictly descending".into()));
    }
    if scales.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
        return Err(Error::InvalidInput("scales must lie in (0, 1]".into()));
    }
    let smallest = scales.last().copied().unwrap_or(0.0);
    let fd_step = (k > 1).then(|| (smallest / 10.0).clamp(1e-5, 1e-2));
    let jac_tol = 10.0 * (cfg.rel_tol + cfg.abs_tol);
    let noise_tolerance = match fd_step {
        Some(s) => jac_tol / s.powi(k as i32 - 1),
        None => jac_tol,
    };
    let min_scale = 10.0 * fd_step.unwrap_or(cfg.rel_tol);
    let usable: Vec<f64> = scales.iter().copied().filter(|h| *h >= min_scale).collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable scales (need 3; scales below {min_scale:.1e} are under the finite-difference floor)",
            usable.len()
        )));
    }

    let bases: Vec<(usize, Vec<f64>)> = sobol_points(&region.center, region.probe_half_width, pair_count)
        .into_iter()
        .enumerate()
        .filter(|(_, p)| {
            p.iter()
                .zip(&region.center)
                .map(|(a, c)| (a - c).powi(2))
                .sum::<f64>()
                .sqrt()
                <= region.radius
        })
        .collect();
    if bases.is_empty() {
        return Err(Error::InsufficientData("no candidate point falls inside the region".into()));
    }
    let directions: Vec<Vec<f64>> = bases
        .iter()
        .map(|(i, _)| {
            let mut r = rng::stream(seed, rng::task::PROBE_DIRECTIONS, *i as u64);
            let w: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            w.into_iter().map(|v| v / n).collect()
        })
        .collect();

    let jcfg = FlowConfig {
        with_jacobian: true,
        record_trajectory: false,
        ..cfg.clone()
    };
    let step = fd_step.unwrap_or(0.0);
    // (pair, scale) jobs; scale index usize::MAX marks the base point itself
    let jobs: Vec<(usize, usize)> = (0..bases.len())
        .flat_map(|p| std::iter::once((p, usize::MAX)).chain((0..usable.len()).map(move |s| (p, s))))
        .collect();
    let evals: Vec<Result<(DVector<f64>, DVector<f64>)>> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let x: Vec<f64> = if s == usize::MAX {
                bases[p].1.clone()
            } else {
                bases[p]
                    .1
                    .iter()
                    .zip(&directions[p])
                    .map(|(x, w)| x + usable[s] * w)
                    .collect()
            };
            jacobian_derivative(density, k, &x, step, &jcfg, quad)
        })
        .collect();
    let evals: Vec<(DVector<f64>, DVector<f64>)> = evals.into_iter().collect::<Result<_>>()?;
    let stride = usable.len() + 1;

    let beta = density.beta();
    let alpha = if beta.fract() > 0.0 { beta.fract() } else { 1.0 };
    let mut lipschitz_est: f64 = 0.0;
    let mut quotients = Vec::with_capacity(usable.len());
    for (s, &h) in usable.iter().enumerate() {
        let mut max_diff: f64 = 0.0;
        for p in 0..bases.len() {
            let (tx, dx) = &evals[p * stride];
            let (ty, dy) = &evals[p * stride + 1 + s];
            max_diff = max_diff.max((dy - dx).norm());
            lipschitz_est = lipschitz_est.max((ty - tx).norm() / h);
        }
        quotients.push(HolderQuotient {
            order: k,
            scale: h,
            quotient: max_diff / h.powf(alpha),
            max_difference: max_diff,
            noise_floor: noise_tolerance / h.powf(alpha),
        });
    }
    let significant: Vec<&HolderQuotient> = quotients.iter().filter(|q| q.significant()).collect();
    let fitted_exponent = if significant.len() >= 3 {
        let xs: Vec<f64> = significant.iter().map(|q| q.scale.ln()).collect();
        let ys: Vec<f64> = significant.iter().map(|q| q.max_difference.ln()).collect();
        Some(ols(&xs, &ys))
    } else {
        None
    };
    Ok(RegularityReport {
        order: k,
        lipschitz_est,
        holder_quotients: quotients,
        fitted_exponent,
        probe_spec: ProbeSpec {
            region: region.clone(),
            scales: usable,
            candidate_count: pair_count,
            pair_count: bases.len(),
            seed,
            fd_step,
            noise_tolerance,
            alpha,
        },
    })
}

fn ols(xs: &[f64], ys: &[f64]) -> ScalingFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = if xs.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    ScalingFit {
        slope,
        intercept,
        half_width: 2.0 * se,
        n: xs.len(),
    }
}

/// Least-squares line through `(log scale, log value)`.
pub fn fit_scaling_exponent(samples: &[(f64, f64)]) -> Result<ScalingFit> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "exponent fit needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    if let Some((s, v)) = samples.iter().find(|(s, v)| !(*s > 0.0 && *v > 0.0)) {
        return Err(Error::Domain(format!("log-log fit needs positive data, got ({s}, {v})")));
    }
    let xs: Vec<f64> = samples.iter().map(|(s, _)| s.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, v)| v.ln()).collect();
    if xs.iter().all(|x| *x == xs[0]) {
        return Err(Error::InsufficientData("all scales coincide".into()));
    }
    Ok(ols(&xs, &ys))
}

fn sup_over<F>(points: &[Vec<f64>], f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let vals: Vec<Result<f64>> = points.par_iter().map(|p| f(p)).collect();
    vals.into_iter().try_fold(f64::NEG_INFINITY, |m, v| Ok(m.max(v?)))
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    a.clone().symmetric_eigenvalues().amax()
}

fn t_from_gap(gap: f64) -> Result<f64> {
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::Domain(format!("1 - t² must lie in (0, 1], got {gap}")));
    }
    Ok((1.0 - gap).sqrt())
}

/// `(1 - t², sup_x ‖∇V(t, x)‖)` for each gap `1 - t²`.
pub fn gradient_norm_sweep(
    density: &TargetDensity,
    gaps: &[f64],
    points: &[Vec<f64>],
    quad: &Quadrature,
) -> Result<Vec<(f64, f64)>> {
    gaps.iter()
        .map(|&g| {
            let t = t_from_gap(g)?;
            let sup = sup_over(points, |x| Ok(spectral_norm(&velocity_jacobian(density, t, x, quad)?)))?;
            Ok((g, sup))
        })
        .collect()
}

/// `(1 - t², sup_x λ_max(∇V(t, x)))` for each gap `1 - t²`.
pub fn lambda_max_sweep(
    density: &TargetDensity,
    gaps: &[f64],
    points: &[Vec<f64>],
    quad: &Quadrature,
) -> Result<Vec<(f64, f64)>> {
    gaps.iter()
        .map(|&g| {
            let t = t_from_gap(g)?;
            let sup = sup_over(points, |x| Ok(max_eigenvalue(&velocity_jacobian(density, t, x, quad)?)))?;
            Ok((g, sup))
        })
        .collect()
}

/// `(τ, sup_x λ_max(∇s(τ, x) + I))` for each `τ`.
pub fn score_eigmax_sweep(
    density: &TargetDensity,
    taus: &[f64],
    points: &[Vec<f64>],
    quad: &Quadrature,
) -> Result<Vec<(f64, f64)>> {
    taus.iter()
        .map(|&tau| Ok((tau, sup_over(points, |x| score_jacobian_eigmax(density, tau, x, quad))?)))
        .collect()
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{PerturbationFamily, WeierstrassSpec};
    use proptest::prelude::*;

    fn gh(d: usize, n: usize) -> Quadrature {
        Quadrature::gauss_hermite(d, n).unwrap()
    }

    fn zero(d: usize) -> TargetDensity {
        TargetDensity::gaussian_perturbation(PerturbationFamily::zero(), 1.0, 1.0, d).unwrap()
    }

    fn conj(sd: f64) -> TargetDensity {
        TargetDensity::gaussian_perturbation(PerturbationFamily::conjugate_gaussian(vec![1.0], sd * sd), 1.0, 0.5, 1)
            .unwrap()
    }

    #[test]
    fn sobol_points_fill_the_box() {
        let p = sup_points(2);
        assert_eq!(p.len(), 256);
        assert!(p.iter().flatten().all(|v| v.abs() <= 3.0));
        // every quarter of the box is hit equally often by a (0,m,2)-net
        let q = p.iter().filter(|v| v[0] < 0.0 && v[1] < 0.0).count();
        assert_eq!(q, 64);
    }

    #[test]
    fn zero_target_probes() {
        let d = zero(2);
        let q = gh(2, 8);
        let cfg = FlowConfig::default();
        let p = derivative_probe(&d, 1, &[0.3, -0.1], 1e-3, &cfg, &q).unwrap();
        assert!((p.get(0, &[0]) - 1.0).abs() < 1e-9 && p.get(1, &[0]).abs() < 1e-9);
        assert!(p.jacobian_gap.unwrap() < 1e-9);
        let region = Region::ball(vec![0.0, 0.0], 1.0).unwrap();
        let r = holder_scan(&d, 1, 16, &[1e-1, 1e-2, 1e-3], &region, 1, &cfg, &q).unwrap();
        assert!(r.holder_quotients.iter().all(|q| q.quotient < 1e-9));
        assert!(r.fitted_exponent.is_none());
        assert!((r.lipschitz_est - 1.0).abs() < 1e-6);
    }

    #[test]
    fn conjugate_probes() {
        let d = conj(2.0);
        let q = gh(1, 128);
        let cfg = FlowConfig::default();
        let p1 = derivative_probe(&d, 1, &[0.4], 1e-2, &cfg, &q).unwrap();
        assert!((p1.get(0, &[0]) - 2.0).abs() < 1e-5);
        assert!(p1.jacobian_gap.unwrap() < 1e-5);
        let p2 = derivative_probe(&d, 2, &[0.4], 1e-2, &cfg, &q).unwrap();
        assert!(p2.max_abs() < 1e-3);
        assert!(p2.max_abs() < 10.0 * p2.noise_floor.max(1e-4));
        let p3 = derivative_probe(&d, 3, &[0.4], 1e-1, &cfg, &q).unwrap();
        assert!(p3.max_abs() < 10.0 * p3.noise_floor.max(1e-4));
        let region = Region::ball(vec![0.0], 2.0).unwrap();
        let r = holder_scan(&d, 1, 8, &[1e-1, 1e-2, 1e-3], &region, 2, &cfg, &q).unwrap();
        assert!(r.holder_quotients.iter().all(|q| !q.significant()), "{:?}", r.holder_quotients);
    }

    #[test]
    fn weierstrass_holder_exponent() {
        // Three terms (top frequency 8) keep the flow quadrature-resolved, so
        // the Hölder regime is only visible at scales above about 1/8.
        let spec = WeierstrassSpec { terms: 3, ..WeierstrassSpec::new(0.5, 0.5, 4) };
        let d = TargetDensity::gaussian_perturbation(PerturbationFamily::weierstrass(spec), 2.0, 0.5, 1).unwrap();
        let q = gh(1, 128);
        let region = Region::ball(vec![0.0], 2.0).unwrap();
        let r = holder_scan(&d, 1, 32, &log_space(0.4, 0.04, 5), &region, 3, &FlowConfig::default(), &q).unwrap();
        let fit = r.fitted_exponent.unwrap();
        assert!((0.3..=0.8).contains(&fit.slope), "{fit:?}");
        assert!(r.holder_quotients.iter().all(|q| q.significant()));
    }

    #[test]
    fn lipschitz_estimate_grows_with_radius() {
        let d = TargetDensity::gaussian_perturbation(crate::density::symmetric_bimodal(1.5, 0.5), 3.0, 2.0, 1).unwrap();
        let q = gh(1, 32);
        let cfg = FlowConfig { rel_tol: 1e-7, abs_tol: 1e-9, ..Default::default() };
        let scales = [1e-1, 3e-2, 1e-2];
        let mut last = 0.0;
        for radius in [0.5, 1.5, 3.0] {
            let region = Region::new(vec![0.0], radius, 3.0).unwrap();
            let r = holder_scan(&d, 1, 16, &scales, &region, 4, &cfg, &q).unwrap();
            assert!(r.lipschitz_est >= last);
            last = r.lipschitz_est;
        }
    }

    #[test]
    fn holder_scan_needs_three_scales() {
        let d = zero(1);
        let region = Region::ball(vec![0.0], 1.0).unwrap();
        let r = holder_scan(&d, 1, 4, &[1e-1, 1e-2], &region, 0, &FlowConfig::default(), &gh(1, 8));
        assert!(matches!(r, Err(Error::InsufficientData(_))));
        let r = holder_scan(&d, 1, 4, &[1e-2, 1e-1, 1e-3], &region, 0, &FlowConfig::default(), &gh(1, 8));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn exact_power_laws() {
        let hs = log_space(1e-1, 1e-4, 4);
        let f = fit_scaling_exponent(&hs.iter().map(|h| (*h, h * h)).collect::<Vec<_>>()).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-10 && f.half_width < 1e-8);
        let f = fit_scaling_exponent(&hs.iter().map(|h| (*h, 3.0 * h.sqrt())).collect::<Vec<_>>()).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-10 && (f.intercept - 3f64.ln()).abs() < 1e-10);
        assert!(matches!(fit_scaling_exponent(&[(0.1, 1.0), (0.2, 0.0), (0.3, 1.0), (0.4, 1.0)]), Err(Error::Domain(_))));
        assert!(matches!(fit_scaling_exponent(&[(0.1, 1.0)]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn probe_step_bounds() {
        let d = zero(1);
        let q = gh(1, 8);
        assert!(derivative_probe(&d, 1, &[0.0], 1e-6, &FlowConfig::default(), &q).is_err());
        assert!(derivative_probe(&d, 4, &[0.0], 1e-3, &FlowConfig::default(), &q).is_err());
    }

    proptest! {
        #[test]
        fn power_law_recovery(slope in -3.0f64..3.0, c in 0.01f64..100.0) {
            let hs = log_space(1e-4, 1.0, 6);
            let f = fit_scaling_exponent(&hs.iter().map(|h| (*h, c * h.powf(slope))).collect::<Vec<_>>()).unwrap();
            prop_assert!((f.slope - slope).abs() < 1e-8);
        }
    }
}
