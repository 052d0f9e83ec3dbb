//! Reference computations that do not go through the flow: the 1D monotone
//! rearrangement `F_p⁻¹ ∘ Φ`, two-sample statistics, the intermediate marginal
//! law check and a 1D log-Sobolev ratio.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::density::{DensityKind, TargetDensity};
use crate::error::{Error, Result};
use crate::flow::{pushforward_samples, FlowConfig};
use crate::quadrature::Quadrature;
use crate::rng;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Gauss–Kronrod 7/15 on `[a, b]`: `(kronrod, |kronrod - gauss|)`.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let fs = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        k += WGK[i] * fs;
        if i % 2 == 1 {
            g += WG[i / 2] * fs;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive bisection until each panel's error is below its share of `tol`.
/// Returns the panels `(a, b, integral)` in order.
fn adaptive_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Vec<(f64, f64, f64)> {
    let width = b - a;
    let mut out = Vec::new();
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, err) = gk15(f, lo, hi);
        if err <= tol * (hi - lo) / width || depth >= 60 {
            out.push((lo, hi, v));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    out
}

/// Exact-up-to-quadrature monotone map `F_p⁻¹ ∘ Φ` for a 1D target.
#[derive(Debug, Clone)]
pub struct QuantileOracle1D {
    density: TargetDensity,
    log_shift: f64,
    total: f64,
    /// `(y_i, F_p(y_i))` at panel boundaries.
    pub cdf_grid: Vec<(f64, f64)>,
    pub tol: f64,
}

impl QuantileOracle1D {
    /// Tabulates the CDF on adaptive panels to absolute mass error `tol`.
    /// The integration range starts at `[-10, 10]` and is widened until the
    /// density at the ends is negligible.
    pub fn new(density: &TargetDensity, tol: f64) -> Result<Self> {
        if density.dim() != 1 {
            return Err(Error::InvalidInput("the quantile oracle is one-dimensional".into()));
        }
        if !(tol > 0.0 && tol <= 1e-8) {
            return Err(Error::InvalidInput(format!("oracle tolerance must lie in (0, 1e-8], got {tol}")));
        }
        let log_p = |y: f64| density.eval_log_r(&[y]).map(|l| l - 0.5 * y * y).unwrap_or(f64::NEG_INFINITY);
        let (mut lo, mut hi) = match density.kind() {
            DensityKind::BallSupported(_) => (-1.0, 1.0),
            DensityKind::GaussianPerturbation => (-10.0, 10.0),
        };
        let grid_max = |lo: f64, hi: f64| {
            (0..=4000)
                .map(|i| log_p(lo + (hi - lo) * i as f64 / 4000.0))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut log_shift = grid_max(lo, hi);
        if !log_shift.is_finite() {
            return Err(Error::Domain("density vanishes on the tabulation range".into()));
        }
        if !density.is_ball_supported() {
            while log_p(lo) - log_shift > -45.0 && lo > -1e3 {
                lo *= 2.0;
            }
            while log_p(hi) - log_shift > -45.0 && hi < 1e3 {
                hi *= 2.0;
            }
            log_shift = grid_max(lo, hi);
        }
        let pdf = |y: f64| (log_p(y) - log_shift).exp();
        // a coarse pass fixes the scale of the total mass
        let rough: f64 = adaptive_panels(&pdf, lo, hi, 1e-6).iter().map(|p| p.2).sum();
        let panels = adaptive_panels(&pdf, lo, hi, tol * rough);
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let mut cdf_grid = Vec::with_capacity(panels.len() + 1);
        let mut acc = 0.0;
        cdf_grid.push((lo, 0.0));
        for (_, b, v) in &panels {
            acc += v;
            cdf_grid.push((*b, acc / total));
        }
        if let Some(last) = cdf_grid.last_mut() {
            last.1 = 1.0;
        }
        Ok(Self {
            density: density.clone(),
            log_shift,
            total,
            cdf_grid,
            tol,
        })
    }

    fn pdf_unnormalized(&self, y: f64) -> f64 {
        match self.density.eval_log_r(&[y]) {
            Ok(l) if l.is_finite() => (l - 0.5 * y * y - self.log_shift).exp(),
            _ => 0.0,
        }
    }

    /// Normalized density of the target.
    pub fn pdf(&self, y: f64) -> f64 {
        self.pdf_unnormalized(y) / self.total
    }

    /// `F_p(y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        let g = &self.cdf_grid;
        if y <= g[0].0 {
            return 0.0;
        }
        if y >= g[g.len() - 1].0 {
            return 1.0;
        }
        let i = g.partition_point(|p| p.0 <= y) - 1;
        let f = |s: f64| self.pdf_unnormalized(s);
        g[i].1 + gk15(&f, g[i].0, y).0 / self.total
    }

    /// `F_p⁻¹(u)` by safeguarded Newton inside the bracketing panel.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(1e-9..=1.0 - 1e-9).contains(&u) {
            return Err(Error::Extrapolation(format!("probability {u} outside [1e-9, 1 - 1e-9]")));
        }
        let g = &self.cdf_grid;
        let i = (g.partition_point(|p| p.1 <= u) - 1).min(g.len() - 2);
        let (mut a, mut b) = (g[i].0, g[i + 1].0);
        let f = |s: f64| self.pdf_unnormalized(s);
        let base = g[i].1;
        let mut y = a + (b - a) * ((u - base) / (g[i + 1].1 - base)).clamp(0.0, 1.0);
        for _ in 0..100 {
            let r = base + gk15(&f, g[i].0, y).0 / self.total - u;
            if r > 0.0 {
                b = y;
            } else {
                a = y;
            }
            let p = self.pdf(y);
            let mut next = if p > 0.0 { y - r / p } else { f64::NAN };
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - y).abs() <= 1e-15 * y.abs().max(1.0) || b - a <= 1e-15 * y.abs().max(1.0) {
                return Ok(next);
            }
            y = next;
        }
        Ok(y)
    }

    /// `F_p⁻¹(Φ(x))`.
    pub fn quantile_map(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::InvalidInput("non-finite argument".into()));
        }
        self.quantile(normal_cdf(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub critical_1pct: f64,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical_1pct
    }
}

/// Two-sample Kolmogorov–Smirnov statistic with the asymptotic 1% critical value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("two-sample KS needs non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in KS input".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(KsResult {
        statistic: d,
        critical_1pct: 1.628 * ((n + m) / (n * m)).sqrt(),
    })
}

/// `W₁` between two 1D empirical measures, `∫ |F_a - F_b|`.
fn wasserstein_1d(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut last = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        total += (v - last) * (i as f64 / n - j as f64 / m).abs();
        last = v;
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
    }
    total
}

/// Mean 1D `W₁` over `n_proj` random directions.
pub fn sliced_wasserstein(a: &[DVector<f64>], b: &[DVector<f64>], n_proj: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() || n_proj == 0 {
        return Err(Error::Domain("sliced Wasserstein needs samples and at least one projection".into()));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != d) {
        return Err(Error::Domain("sample dimensions differ".into()));
    }
    let per_projection: Vec<f64> = (0..n_proj)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(seed, rng::task::PROJECTIONS, j as u64);
            let w = random_direction(&mut r, d);
            let pa = a.iter().map(|v| v.dot(&w)).collect();
            let pb = b.iter().map(|v| v.dot(&w)).collect();
            wasserstein_1d(pa, pb)
        })
        .collect();
    Ok(per_projection.iter().sum::<f64>() / n_proj as f64)
}

fn random_direction<R: Rng>(r: &mut R, d: usize) -> DVector<f64> {
    let w = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
    let n = w.norm();
    w / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCheck {
    pub t: f64,
    /// One entry per coordinate, then one random projection when `d > 1`.
    pub ks: Vec<KsResult>,
    pub pass: bool,
}

/// Compares the flow cloud at time `t` with `t X + sqrt(1 - t²) Y`, `X ~ p`,
/// `Y ~ γ_d` (the law `(1-s)X + sqrt(s(2-s))Y` at `s = 1 - t`).
pub fn marginal_law_check(
    density: &TargetDensity,
    t: f64,
    n: usize,
    seed: u64,
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<MarginalCheck> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("t must lie in (0, 1), got {t}")));
    }
    let d = density.dim();
    let flowed = pushforward_samples(density, n, t, seed, cfg, quad)?;
    let xs = density.sample_target(n, seed)?.samples;
    let s = 1.0 - t;
    let (ca, cb) = (1.0 - s, (s * (2.0 - s)).sqrt());
    let reference: Vec<DVector<f64>> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = rng::stream(seed, rng::task::GAUSSIAN_REFERENCE, i as u64);
            x * ca + DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal)) * cb
        })
        .collect();
    let mut ks = Vec::with_capacity(d + 1);
    for k in 0..d {
        let a: Vec<f64> = flowed.iter().map(|v| v[k]).collect();
        let b: Vec<f64> = reference.iter().map(|v| v[k]).collect();
        ks.push(ks_two_sample(&a, &b)?);
    }
    if d > 1 {
        let mut r = rng::stream(seed, rng::task::PROJECTIONS, u64::MAX);
        let w = random_direction(&mut r, d);
        let a: Vec<f64> = flowed.iter().map(|v| v.dot(&w)).collect();
        let b: Vec<f64> = reference.iter().map(|v| v.dot(&w)).collect();
        ks.push(ks_two_sample(&a, &b)?);
    }
    let pass = ks.iter().all(KsResult::passes);
    Ok(MarginalCheck { t, ks, pass })
}

/// `He_n` and its first two derivatives at `x` (probabilists' Hermite).
fn hermite_with_derivatives(n: usize, x: f64) -> (f64, f64, f64) {
    let mut h = vec![1.0, x];
    for k in 1..n.max(1) {
        h.push(x * h[k] - k as f64 * h[k - 1]);
    }
    let at = |k: isize| if k < 0 { 0.0 } else { h[k as usize] };
    let n_i = n as isize;
    let nf = n as f64;
    (at(n_i), nf * at(n_i - 1), nf * (nf - 1.0) * at(n_i - 2))
}

/// Smooth 1D test function
/// `c + Σ_n a_n He_n(x) e^{-δx²} + Σ_m b_m tanh((x - c_m)/w_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub constant: f64,
    pub hermite: Vec<f64>,
    pub damping: f64,
    /// `(amplitude, center, width)`.
    pub bumps: Vec<(f64, f64, f64)>,
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            hermite: Vec::new(),
            damping: 0.0,
            bumps: Vec::new(),
        }
    }

    /// `He_n(x) e^{-δ x²}`.
    pub fn hermite(n: usize, damping: f64) -> Self {
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        Self {
            constant: 0.0,
            hermite: c,
            damping,
            bumps: Vec::new(),
        }
    }

    pub fn tanh_bump(center: f64, width: f64) -> Self {
        Self {
            constant: 0.0,
            hermite: Vec::new(),
            damping: 0.0,
            bumps: vec![(1.0, center, width)],
        }
    }

    /// `(f, f', f'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
        for (n, a) in self.hermite.iter().enumerate() {
            if *a != 0.0 {
                let (h, dh, ddh) = hermite_with_derivatives(n, x);
                p += a * h;
                dp += a * dh;
                ddp += a * ddh;
            }
        }
        let dl = self.damping;
        let e = (-dl * x * x).exp();
        let mut f = self.constant + p * e;
        let mut df = (dp - 2.0 * dl * x * p) * e;
        let mut ddf = (ddp - 4.0 * dl * x * dp + (4.0 * dl * dl * x * x - 2.0 * dl) * p) * e;
        for &(b, c, w) in &self.bumps {
            let th = ((x - c) / w).tanh();
            let sech2 = 1.0 - th * th;
            f += b * th;
            df += b * sech2 / w;
            ddf += -2.0 * b * th * sech2 / (w * w);
        }
        (f, df, ddf)
    }

    fn is_constant(&self) -> bool {
        self.hermite.iter().all(|a| *a == 0.0) && self.bumps.iter().all(|b| b.0 == 0.0)
    }

    /// The shipped family: the six Hermite functions `He_n e^{-x²/4}`, four
    /// tanh bumps, then random combinations of those ten elements.
    pub fn family(size: usize, seed: u64) -> Vec<Self> {
        let mut out: Vec<Self> = (0..6).map(|n| Self::hermite(n, 0.25)).collect();
        out.extend([(-1.0, 0.5), (0.0, 0.3), (1.0, 0.5), (0.5, 1.0)].iter().map(|(c, w)| Self::tanh_bump(*c, *w)));
        out.truncate(size);
        let bump_params = [(-1.0, 0.5), (0.0, 0.3), (1.0, 0.5), (0.5, 1.0)];
        let mut i = 0u64;
        while out.len() < size {
            let mut r = rng::stream(seed, rng::task::TEST_FUNCTIONS, i);
            i += 1;
            let hermite: Vec<f64> = (0..6).map(|_| r.sample(StandardNormal)).collect();
            let bumps = bump_params
                .iter()
                .map(|(c, w)| (r.sample::<f64, _>(StandardNormal), *c, *w))
                .collect();
            out.push(Self {
                constant: 0.0,
                hermite,
                damping: 0.25,
                bumps,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSobolevResult {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Set for constant test functions, where both sides are trivial.
    pub constant: bool,
}

/// `∫ f² |log|f||^k dμ` against `Σ_{j≤k} ‖f^{(j)}‖²` with `‖f‖_{L²(μ)} = 1`,
/// both by adaptive quadrature against the normalized target `μ`.
pub fn log_sobolev_check(oracle: &QuantileOracle1D, k: usize, f: &TestFunction) -> Result<LogSobolevResult> {
    if !(1..=2).contains(&k) {
        return Err(Error::InvalidInput(format!("log-Sobolev order must be 1 or 2, got {k}")));
    }
    if oracle.density.is_ball_supported() {
        return Err(Error::Capability("log-Sobolev check expects a Gaussian perturbation".into()));
    }
    let (lo, hi) = (oracle.cdf_grid[0].0, oracle.cdf_grid[oracle.cdf_grid.len() - 1].0);
    let integrate = |g: &dyn Fn(f64) -> f64| -> f64 {
        let h = |y: f64| oracle.pdf(y) * g(y);
        adaptive_panels(&h, lo, hi, 1e-12).iter().map(|p| p.2).sum()
    };
    let norm2 = integrate(&|y| f.eval(y).0.powi(2));
    if !(norm2 > 0.0) {
        return Err(Error::Domain("test function vanishes in L²(μ)".into()));
    }
    if f.is_constant() {
        return Ok(LogSobolevResult {
            lhs: 0.0,
            rhs: 1.0,
            ratio: 0.0,
            constant: true,
        });
    }
    let c = norm2.sqrt();
    let lhs = integrate(&|y| {
        let v = (f.eval(y).0 / c).abs();
        if v == 0.0 {
            0.0
        } else {
            v * v * v.ln().abs().powi(k as i32)
        }
    });
    let d1 = integrate(&|y| (f.eval(y).1 / c).powi(2));
    let d2 = if k == 2 {
        integrate(&|y| (f.eval(y).2 / c).powi(2))
    } else {
        0.0
    };
    let rhs = 1.0 + d1 + d2;
    Ok(LogSobolevResult {
        lhs,
        rhs,
        ratio: lhs / rhs,
        constant: false,
    })
}

/// Largest ratio over a family, i.e. the empirical constant of the inequality.
pub fn log_sobolev_cap(oracle: &QuantileOracle1D, k: usize, family: &[TestFunction]) -> Result<f64> {
    let ratios: Vec<Result<LogSobolevResult>> = family.par_iter().map(|f| log_sobolev_check(oracle, k, f)).collect();
    ratios.into_iter().try_fold(0.0, |m, r| Ok(f64::max(m, r?.ratio)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{symmetric_bimodal, PerturbationFamily};

    fn zero() -> TargetDensity {
        TargetDensity::gaussian_perturbation(PerturbationFamily::zero(), 1.0, 1.0, 1).unwrap()
    }

    fn mixture() -> TargetDensity {
        TargetDensity::gaussian_perturbation(symmetric_bimodal(1.5, 0.5), 3.0, 2.0, 1).unwrap()
    }

    fn gaussian_samples(n: usize, seed: u64, shift: f64) -> Vec<f64> {
        let mut r = rng::stream(seed, 99, 0);
        (0..n).map(|_| shift + r.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn oracle_identity_and_affine() {
        let o = QuantileOracle1D::new(&zero(), 1e-12).unwrap();
        for x in [-3.0, -0.7, 0.0, 1.3, 3.0] {
            assert!((o.quantile_map(x).unwrap() - x).abs() < 1e-9, "{x}");
        }
        let c = TargetDensity::gaussian_perturbation(PerturbationFamily::conjugate_gaussian(vec![1.0], 4.0), 1.0, 2.0, 1)
            .unwrap();
        let o = QuantileOracle1D::new(&c, 1e-12).unwrap();
        assert!((o.quantile_map(0.5).unwrap() - 2.0).abs() < 1e-9);
        assert!((o.quantile_map(-2.5).unwrap() - (1.0 - 5.0)).abs() < 1e-8);
        assert!(matches!(o.quantile_map(7.0), Err(Error::Extrapolation(_))));
    }

    #[test]
    fn oracle_symmetric_mixture_median() {
        let o = QuantileOracle1D::new(&mixture(), 1e-12).unwrap();
        assert!(o.quantile_map(0.0).unwrap().abs() < 1e-10);
        let ys: Vec<f64> = (0..61).map(|i| o.quantile_map(-3.0 + 0.1 * i as f64).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] < w[1]));
        assert!(o.cdf_grid.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        // cdf and quantile are inverse to each other
        for u in [0.01, 0.3, 0.77] {
            assert!((o.cdf(o.quantile(u).unwrap()) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_ball_target() {
        let d = TargetDensity::ball_supported(PerturbationFamily::zero(), 2.0, 1.0, 1).unwrap();
        let o = QuantileOracle1D::new(&d, 1e-12).unwrap();
        assert!(o.quantile_map(0.0).unwrap().abs() < 1e-10);
        assert!(o.quantile_map(3.0).unwrap() < 1.0);
    }

    #[test]
    fn ks_basics() {
        let a = gaussian_samples(10_000, 1, 0.0);
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        let b = gaussian_samples(10_000, 2, 0.2);
        assert!(!ks_two_sample(&a, &b).unwrap().passes());
        assert!(matches!(ks_two_sample(&[], &a), Err(Error::Domain(_))));
        // null distribution: at most a handful of rejections in 100 trials
        let rejections = (0..100)
            .filter(|i| {
                let x = gaussian_samples(10_000, 1000 + 2 * i, 0.0);
                let y = gaussian_samples(10_000, 1001 + 2 * i, 0.0);
                !ks_two_sample(&x, &y).unwrap().passes()
            })
            .count();
        assert!(rejections <= 5, "{rejections}");
    }

    #[test]
    fn sliced_wasserstein_basics() {
        let to_vec = |v: Vec<f64>| v.into_iter().map(|x| DVector::from_vec(vec![x])).collect::<Vec<_>>();
        let a = to_vec(gaussian_samples(50_000, 3, 0.0));
        let b = to_vec(gaussian_samples(50_000, 4, 0.7));
        assert_eq!(sliced_wasserstein(&a, &a, 4, 0).unwrap(), 0.0);
        let w = sliced_wasserstein(&a, &b, 4, 0).unwrap();
        assert!((w - 0.7).abs() < 0.03, "{w}");
        let ab = sliced_wasserstein(&a, &b, 8, 5).unwrap();
        let ba = sliced_wasserstein(&b, &a, 8, 5).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let c: Vec<DVector<f64>> = vec![DVector::zeros(2)];
        assert!(sliced_wasserstein(&a, &c, 2, 0).is_err());
    }

    #[test]
    fn sliced_wasserstein_triangle_inequality() {
        let cloud = |seed: u64, shift: f64| -> Vec<DVector<f64>> {
            let mut r = rng::stream(seed, 98, 0);
            (0..5000)
                .map(|_| DVector::from_fn(2, |i, _| if i == 0 { shift } else { 0.0 } + r.sample::<f64, _>(StandardNormal)))
                .collect()
        };
        let (a, b, c) = (cloud(1, 0.0), cloud(2, 0.4), cloud(3, 0.9));
        let ab = sliced_wasserstein(&a, &b, 16, 1).unwrap();
        let bc = sliced_wasserstein(&b, &c, 16, 1).unwrap();
        let ac = sliced_wasserstein(&a, &c, 16, 1).unwrap();
        assert!(ac <= ab + bc + 0.05);
    }

    #[test]
    fn marginal_check_zero_and_conjugate() {
        let q = Quadrature::gauss_hermite(1, 16).unwrap();
        let cfg = FlowConfig { rel_tol: 1e-6, abs_tol: 1e-8, ..Default::default() };
        let r = marginal_law_check(&zero(), 0.5, 2000, 3, &cfg, &q).unwrap();
        assert!(r.pass, "{r:?}");
        let c = TargetDensity::gaussian_perturbation(PerturbationFamily::conjugate_gaussian(vec![1.0], 0.5), 1.0, 2.0, 1)
            .unwrap();
        let r = marginal_law_check(&c, 0.6, 5000, 4, &cfg, &Quadrature::gauss_hermite(1, 48).unwrap()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(marginal_law_check(&c, 1.0, 10, 4, &cfg, &q).is_err());
    }

    #[test]
    fn log_sobolev_constant_and_gaussian() {
        let o = QuantileOracle1D::new(&zero(), 1e-12).unwrap();
        let r = log_sobolev_check(&o, 1, &TestFunction::constant(3.0)).unwrap();
        assert_eq!((r.lhs, r.rhs, r.ratio, r.constant), (0.0, 1.0, 0.0, true));
        let h1 = TestFunction::hermite(1, 0.0);
        let r = log_sobolev_check(&o, 1, &h1).unwrap();
        // f = x: ∫ x² |log|x|| dγ against 1 + 1
        assert!(r.ratio > 0.0 && r.ratio <= 2.0, "{r:?}");
        assert!((r.rhs - 2.0).abs() < 1e-9);
    }

    #[test]
    fn test_function_derivatives() {
        let f = &TestFunction::family(12, 7)[11];
        for x in [-2.0, -0.3, 0.8, 2.5] {
            let h = 1e-5;
            let (_, d1, d2) = f.eval(x);
            let fd1 = (f.eval(x + h).0 - f.eval(x - h).0) / (2.0 * h);
            let fd2 = (f.eval(x + h).1 - f.eval(x - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-6 * d1.abs().max(1.0));
            assert!((d2 - fd2).abs() < 1e-6 * d2.abs().max(1.0));
        }
    }

    #[test]
    fn log_sobolev_cap_is_stable_for_mixture() {
        let o = QuantileOracle1D::new(&mixture(), 1e-12).unwrap();
        for k in [1, 2] {
            let small = log_sobolev_cap(&o, k, &TestFunction::family(20, 1)).unwrap();
            let large = log_sobolev_cap(&o, k, &TestFunction::family(40, 1)).unwrap();
            assert!(small.is_finite() && small > 0.0);
            assert!((large - small).abs() <= 0.1 * small, "k={k}: {small} vs {large}");
        }
    }
}
