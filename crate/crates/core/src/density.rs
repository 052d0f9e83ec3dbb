//! Target densities `p`, stored through their log-ratio to the standard Gaussian.
//!
//! Two shapes are supported: Gaussian perturbations `p(x) ∝ exp(-|x|²/2 + a(x))`
//! and ball-supported densities `p(x) ∝ exp(-u(|x|²) + a(x))` on the open unit
//! ball. Every downstream quantity only needs `log r = log(p/γ_d)` up to an
//! additive constant.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::rng;

/// The perturbation `a` of a target density.
///
/// This is the programmatic extension point: anything implementing it can be
/// wrapped into a [`TargetDensity`] with [`TargetDensity::custom`].
pub trait Perturbation: Send + Sync + fmt::Debug {
    fn value(&self, y: &[f64]) -> f64;

    /// Writes `∇a(y)` into `out`. Only called when `smoothness_order() >= 1`.
    fn gradient(&self, y: &[f64], out: &mut [f64]);

    fn smoothness_order(&self) -> u32;

    /// `sup a` over `R^d`: `None` if unknown, `+∞` if unbounded above.
    fn upper_bound(&self) -> Option<f64> {
        None
    }

    /// `sup |a|` over `R^d` when known and finite.
    fn abs_bound(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Lacunary Fourier series `ε Σ_j λ^{-βj} cos(λ^j <ω_j, x> + φ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeierstrassSpec {
    pub amplitude: f64,
    pub base: f64,
    pub beta: f64,
    pub terms: usize,
    pub seed: u64,
}

impl WeierstrassSpec {
    pub fn new(amplitude: f64, beta: f64, seed: u64) -> Self {
        Self {
            amplitude,
            base: 2.0,
            beta,
            terms: 12,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyVariant {
    Zero,
    ConjugateGaussian { mean: Vec<f64>, variance: f64 },
    LogMixtureRatio { components: Vec<MixtureComponent> },
    WeierstrassFourier(WeierstrassSpec),
}

/// Closed family of shipped perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationFamily {
    pub variant: FamilyVariant,
    /// Number of derivatives exposed (the shipped families all expose the gradient).
    pub smoothness_order: u32,
}

impl PerturbationFamily {
    pub fn zero() -> Self {
        Self {
            variant: FamilyVariant::Zero,
            smoothness_order: 1,
        }
    }

    /// `a(x) = |x|²/2 - |x - m|²/(2σ²)`, so that `p = N(m, σ² I)`.
    pub fn conjugate_gaussian(mean: Vec<f64>, variance: f64) -> Self {
        Self {
            variant: FamilyVariant::ConjugateGaussian { mean, variance },
            smoothness_order: 1,
        }
    }

    /// `a = log(Σ w_i N(m_i, v_i I) / γ_d)`, so that `p` is the mixture itself.
    pub fn log_mixture_ratio(components: Vec<MixtureComponent>) -> Self {
        Self {
            variant: FamilyVariant::LogMixtureRatio { components },
            smoothness_order: 1,
        }
    }

    pub fn weierstrass(spec: WeierstrassSpec) -> Self {
        Self {
            variant: FamilyVariant::WeierstrassFourier(spec),
            smoothness_order: 1,
        }
    }

    pub fn with_smoothness_order(mut self, order: u32) -> Self {
        self.smoothness_order = order;
        self
    }

    fn realize(&self, dim: usize) -> Result<Arc<dyn Perturbation>> {
        let order = self.smoothness_order.min(1);
        Ok(match &self.variant {
            FamilyVariant::Zero => Arc::new(ZeroPerturbation { order }),
            FamilyVariant::ConjugateGaussian { mean, variance } => {
                if mean.len() != dim {
                    return Err(Error::InvalidConfig(format!(
                        "conjugate mean has length {} but dim is {dim}",
                        mean.len()
                    )));
                }
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "variance must be positive, got {variance}"
                    )));
                }
                ensure_finite(mean)?;
                Arc::new(ConjugateGaussian {
                    mean: mean.clone(),
                    variance: *variance,
                    order,
                })
            }
            FamilyVariant::LogMixtureRatio { components } => {
                Arc::new(LogMixtureRatio::new(components, dim, order)?)
            }
            FamilyVariant::WeierstrassFourier(spec) => Arc::new(Weierstrass::new(spec, dim, order)?),
        })
    }
}

#[derive(Debug)]
struct ZeroPerturbation {
    order: u32,
}

impl Perturbation for ZeroPerturbation {
    fn value(&self, _y: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn smoothness_order(&self) -> u32 {
        self.order
    }
    fn upper_bound(&self) -> Option<f64> {
        Some(0.0)
    }
    fn abs_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

#[derive(Debug)]
struct ConjugateGaussian {
    mean: Vec<f64>,
    variance: f64,
    order: u32,
}

impl Perturbation for ConjugateGaussian {
    fn value(&self, y: &[f64]) -> f64 {
        let mut sq = 0.0;
        let mut sq_c = 0.0;
        for (yi, mi) in y.iter().zip(&self.mean) {
            sq += yi * yi;
            sq_c += (yi - mi) * (yi - mi);
        }
        0.5 * sq - 0.5 * sq_c / self.variance
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        for ((o, yi), mi) in out.iter_mut().zip(y).zip(&self.mean) {
            *o = yi - (yi - mi) / self.variance;
        }
    }

    fn smoothness_order(&self) -> u32 {
        self.order
    }

    fn upper_bound(&self) -> Option<f64> {
        let m2: f64 = self.mean.iter().map(|m| m * m).sum();
        Some(gaussian_ratio_sup(m2, self.variance))
    }
}

/// `sup_x [ |x|²/2 - |x-m|²/(2v) ]` for `|m|² = m2`.
fn gaussian_ratio_sup(m2: f64, v: f64) -> f64 {
    if v < 1.0 {
        m2 / (2.0 * (1.0 - v))
    } else if v == 1.0 && m2 == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug)]
struct LogMixtureRatio {
    // log(w_i) - d/2 log(v_i), pre-folded
    log_coef: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    order: u32,
    dim: usize,
}

impl LogMixtureRatio {
    fn new(components: &[MixtureComponent], dim: usize, order: u32) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let mut log_coef = Vec::with_capacity(components.len());
        for c in components {
            if c.mean.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "mixture mean has length {} but dim is {dim}",
                    c.mean.len()
                )));
            }
            if !(c.weight > 0.0 && c.variance > 0.0 && c.variance.is_finite()) {
                return Err(Error::InvalidConfig(
                    "mixture weights and variances must be positive".into(),
                ));
            }
            ensure_finite(&c.mean)?;
            log_coef.push((c.weight / total).ln() - 0.5 * dim as f64 * c.variance.ln());
        }
        Ok(Self {
            log_coef,
            means: components.iter().map(|c| c.mean.clone()).collect(),
            variances: components.iter().map(|c| c.variance).collect(),
            order,
            dim,
        })
    }

    fn component_logs(&self, y: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let d2: f64 = y.iter().zip(&self.means[i]).map(|(a, b)| (a - b) * (a - b)).sum();
            *o = self.log_coef[i] - 0.5 * d2 / self.variances[i];
        }
    }
}

impl Perturbation for LogMixtureRatio {
    fn value(&self, y: &[f64]) -> f64 {
        let mut logs = [0.0; 8];
        let mut heap;
        let logs: &mut [f64] = if self.means.len() <= 8 {
            &mut logs[..self.means.len()]
        } else {
            heap = vec![0.0; self.means.len()];
            &mut heap
        };
        self.component_logs(y, logs);
        let sq: f64 = y.iter().map(|v| v * v).sum();
        log_sum_exp(logs) + 0.5 * sq
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        let mut logs = vec![0.0; self.means.len()];
        self.component_logs(y, &mut logs);
        let lse = log_sum_exp(&logs);
        out.copy_from_slice(y);
        for (i, l) in logs.iter().enumerate() {
            let w = (l - lse).exp();
            for (k, o) in out.iter_mut().enumerate() {
                *o -= w * (y[k] - self.means[i][k]) / self.variances[i];
            }
        }
    }

    fn smoothness_order(&self) -> u32 {
        self.order
    }

    fn upper_bound(&self) -> Option<f64> {
        // sup of a sum is at most the sum of the per-component sups.
        let terms: Vec<f64> = (0..self.means.len())
            .map(|i| {
                let m2: f64 = self.means[i].iter().map(|m| m * m).sum();
                self.log_coef[i] + gaussian_ratio_sup(m2, self.variances[i])
            })
            .collect();
        if terms.iter().any(|t| t.is_infinite()) {
            return Some(f64::INFINITY);
        }
        let _ = self.dim;
        Some(log_sum_exp(&terms))
    }
}

#[derive(Debug)]
struct Weierstrass {
    // amplitude * base^{-beta j}
    coef: Vec<f64>,
    // base^j * omega_j, flattened terms x dim
    freq: Vec<f64>,
    phase: Vec<f64>,
    dim: usize,
    order: u32,
}

impl Weierstrass {
    fn new(spec: &WeierstrassSpec, dim: usize, order: u32) -> Result<Self> {
        if !(spec.base > 1.0) || !(spec.beta > 0.0 && spec.beta < 2.0) || spec.terms == 0 {
            return Err(Error::InvalidConfig(format!(
                "Weierstrass series needs base > 1, beta in (0,2) and terms >= 1, got {spec:?}"
            )));
        }
        if !spec.amplitude.is_finite() {
            return Err(Error::InvalidConfig("non-finite amplitude".into()));
        }
        let mut coef = Vec::with_capacity(spec.terms);
        let mut freq = Vec::with_capacity(spec.terms * dim);
        let mut phase = Vec::with_capacity(spec.terms);
        for j in 1..=spec.terms {
            let mut r = rng::stream(spec.seed, rng::task::WEIERSTRASS, j as u64);
            let mut omega: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
            let norm = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
            omega.iter_mut().for_each(|v| *v /= norm);
            let scale = spec.base.powi(j as i32);
            freq.extend(omega.iter().map(|w| w * scale));
            phase.push(r.gen::<f64>() * 2.0 * PI);
            coef.push(spec.amplitude * spec.base.powf(-spec.beta * j as f64));
        }
        Ok(Self {
            coef,
            freq,
            phase,
            dim,
            order,
        })
    }

    #[inline]
    fn argument(&self, j: usize, y: &[f64]) -> f64 {
        let f = &self.freq[j * self.dim..(j + 1) * self.dim];
        f.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + self.phase[j]
    }
}

impl Perturbation for Weierstrass {
    fn value(&self, y: &[f64]) -> f64 {
        (0..self.coef.len())
            .map(|j| self.coef[j] * self.argument(j, y).cos())
            .sum()
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for j in 0..self.coef.len() {
            let s = -self.coef[j] * self.argument(j, y).sin();
            let f = &self.freq[j * self.dim..(j + 1) * self.dim];
            for (o, fk) in out.iter_mut().zip(f) {
                *o += s * fk;
            }
        }
    }

    fn smoothness_order(&self) -> u32 {
        self.order
    }

    fn upper_bound(&self) -> Option<f64> {
        self.abs_bound()
    }

    fn abs_bound(&self) -> Option<f64> {
        Some(self.coef.iter().map(|c| c.abs()).sum())
    }
}

/// Boundary profile `u(s) = (1 - s)^{-1/K}` of a ball-supported density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryProfile {
    k: f64,
}

impl BoundaryProfile {
    pub fn power(k: f64) -> Result<Self> {
        if !(k >= 1.0 && k.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "boundary profile needs K >= 1, got {k}"
            )));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        (1.0 - s).powf(-1.0 / self.k)
    }

    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        (1.0 - s).powf(-1.0 / self.k - 1.0) / self.k
    }

    /// Checks `u(s) >= (1-s)^{-1/K}` and `0 <= u'(s) <= (1-s)^{-(K+1)}`.
    pub fn satisfies_growth_conditions(&self, s: f64) -> bool {
        let lower = (1.0 - s).powf(-1.0 / self.k);
        let upper = (1.0 - s).powf(-(self.k + 1.0));
        let du = self.derivative(s);
        self.value(s) >= lower * (1.0 - 1e-14) && du >= 0.0 && du <= upper * (1.0 + 1e-14)
    }

    /// `sup_{s in [0,1)} (s/2 - u(s))`; the function is concave so a golden
    /// section search on `[0, 1)` finds it.
    fn radial_sup(&self) -> f64 {
        let f = |s: f64| 0.5 * s - self.value(s);
        let (mut lo, mut hi) = (0.0f64, 1.0 - 1e-12);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if f(a) < f(b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        f(0.5 * (lo + hi)).max(f(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityKind {
    GaussianPerturbation,
    BallSupported(BoundaryProfile),
}

/// An unnormalized target density `p`, accessed through `log r = log(p/γ_d)`.
#[derive(Debug, Clone)]
pub struct TargetDensity {
    kind: DensityKind,
    family: Option<PerturbationFamily>,
    perturbation: Arc<dyn Perturbation>,
    k: f64,
    beta: f64,
    dim: usize,
    shift: f64,
}

impl TargetDensity {
    /// `p(x) ∝ exp(-|x|²/2 + a(x))`.
    pub fn gaussian_perturbation(family: PerturbationFamily, k: f64, beta: f64, dim: usize) -> Result<Self> {
        let pert = family.realize(dim)?;
        let mut d = Self::custom(DensityKind::GaussianPerturbation, pert, k, beta, dim)?;
        d.family = Some(family);
        Ok(d)
    }

    /// `p(x) ∝ exp(-u(|x|²) + a(x))` on the unit ball, with `u(s) = (1-s)^{-1/K}`.
    pub fn ball_supported(family: PerturbationFamily, k: f64, beta: f64, dim: usize) -> Result<Self> {
        let profile = BoundaryProfile::power(k)?;
        let pert = family.realize(dim)?;
        let mut d = Self::custom(DensityKind::BallSupported(profile), pert, k, beta, dim)?;
        d.family = Some(family);
        Ok(d)
    }

    pub fn custom(
        kind: DensityKind,
        perturbation: Arc<dyn Perturbation>,
        k: f64,
        beta: f64,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidConfig(format!("K must be positive, got {k}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be >= 0, got {beta}")));
        }
        if let Some(b) = perturbation.abs_bound() {
            if b > k * (1.0 + 1e-12) {
                return Err(Error::InvalidConfig(format!(
                    "sup |a| = {b} exceeds the Hölder-ball radius K = {k}"
                )));
            }
        }
        if let DensityKind::BallSupported(profile) = kind {
            if profile.k() < 1.0 {
                return Err(Error::InvalidConfig("ball profile needs K >= 1".into()));
            }
        }
        Ok(Self {
            kind,
            family: None,
            perturbation,
            k,
            beta,
            dim,
            shift: 0.0,
        })
    }

    /// Adds a constant to `a`. Downstream velocities are unaffected.
    pub fn with_shift(mut self, c: f64) -> Self {
        self.shift = c;
        self
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    pub fn family(&self) -> Option<&PerturbationFamily> {
        self.family.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn smoothness_order(&self) -> u32 {
        self.perturbation.smoothness_order()
    }

    pub fn is_ball_supported(&self) -> bool {
        matches!(self.kind, DensityKind::BallSupported(_))
    }

    /// `a(y)`, including the additive shift.
    pub fn perturbation_value(&self, y: &[f64]) -> f64 {
        self.perturbation.value(y) + self.shift
    }

    /// Unchecked `log r(y)`; `-∞` outside the ball.
    #[inline]
    pub(crate) fn log_r(&self, y: &[f64]) -> f64 {
        match self.kind {
            DensityKind::GaussianPerturbation => self.perturbation.value(y) + self.shift,
            DensityKind::BallSupported(profile) => {
                let s: f64 = y.iter().map(|v| v * v).sum();
                if s >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    -profile.value(s) + 0.5 * s + self.perturbation.value(y) + self.shift
                }
            }
        }
    }

    /// Unchecked `∇ log r(y)` into `out`; returns false outside the ball.
    #[inline]
    pub(crate) fn grad_log_r_into(&self, y: &[f64], out: &mut [f64]) -> bool {
        match self.kind {
            DensityKind::GaussianPerturbation => {
                self.perturbation.gradient(y, out);
                true
            }
            DensityKind::BallSupported(profile) => {
                let s: f64 = y.iter().map(|v| v * v).sum();
                if s >= 1.0 {
                    return false;
                }
                self.perturbation.gradient(y, out);
                let c = 1.0 - 2.0 * profile.derivative(s);
                for (o, yi) in out.iter_mut().zip(y) {
                    *o += c * yi;
                }
                true
            }
        }
    }

    fn check_point(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "point has dimension {} but the density has dimension {}",
                y.len(),
                self.dim
            )));
        }
        ensure_finite(y)
    }

    /// `log r(y)` up to the density's additive constant; `-∞` outside the ball.
    pub fn eval_log_r(&self, y: &[f64]) -> Result<f64> {
        self.check_point(y)?;
        Ok(self.log_r(y))
    }

    pub fn eval_grad_log_r(&self, y: &[f64]) -> Result<DVector<f64>> {
        self.check_point(y)?;
        if self.smoothness_order() == 0 {
            return Err(Error::Capability(
                "the perturbation exposes no gradient (smoothness order 0)".into(),
            ));
        }
        let mut out = DVector::zeros(self.dim);
        if !self.grad_log_r_into(y, out.as_mut_slice()) {
            return Err(Error::OutsideSupport(y.to_vec()));
        }
        Ok(out)
    }

    /// Upper bound on `log r` used as the rejection envelope.
    pub fn log_r_upper_bound(&self) -> f64 {
        let a_sup = self
            .perturbation
            .upper_bound()
            .unwrap_or_else(|| self.grid_sup_perturbation());
        let radial = match self.kind {
            DensityKind::GaussianPerturbation => 0.0,
            DensityKind::BallSupported(profile) => profile.radial_sup(),
        };
        a_sup + radial + self.shift
    }

    /// Coarse grid maximum of `a` plus a safety margin, for perturbations
    /// without a known bound.
    fn grid_sup_perturbation(&self) -> f64 {
        let (half, per_axis) = match self.kind {
            DensityKind::GaussianPerturbation => (6.0, [241usize, 81, 31, 19][self.dim.min(4) - 1]),
            DensityKind::BallSupported(_) => (1.0, [201usize, 61, 25, 15][self.dim.min(4) - 1]),
        };
        let step = 2.0 * half / (per_axis - 1) as f64;
        let total = per_axis.pow(self.dim.min(4) as u32);
        let mut y = vec![0.0; self.dim];
        let mut best = f64::NEG_INFINITY;
        for idx in 0..total {
            let mut rem = idx;
            for v in y.iter_mut() {
                *v = -half + step * (rem % per_axis) as f64;
                rem /= per_axis;
            }
            best = best.max(self.perturbation.value(&y));
        }
        best + 0.25 + 0.05 * best.abs()
    }

    /// Exact samples from the normalized target by rejection from `γ_d`.
    pub fn sample_target(&self, n: usize, seed: u64) -> Result<TargetSamples> {
        const CHUNK: usize = 1024;
        const WARMUP: u64 = 100_000;
        let envelope = self.log_r_upper_bound();
        if !envelope.is_finite() {
            return Err(Error::EnvelopeFailure(
                "log r is unbounded above, the Gaussian proposal cannot envelope p".into(),
            ));
        }
        let chunks = n.div_ceil(CHUNK);
        let results: Vec<Result<(Vec<DVector<f64>>, u64)>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let want = CHUNK.min(n - c * CHUNK);
                let mut r = rng::stream(seed, rng::task::TARGET_SAMPLES, c as u64);
                let mut out = Vec::with_capacity(want);
                let mut proposals = 0u64;
                let mut y = vec![0.0; self.dim];
                while out.len() < want {
                    y.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
                    proposals += 1;
                    let accept = (self.log_r(&y) - envelope).exp();
                    if r.gen::<f64>() < accept {
                        out.push(DVector::from_column_slice(&y));
                    }
                    if proposals >= WARMUP && (out.len() as f64) < 1e-4 * proposals as f64 {
                        return Err(Error::EnvelopeFailure(format!(
                            "acceptance rate {:.2e} after {proposals} proposals",
                            out.len() as f64 / proposals as f64
                        )));
                    }
                }
                Ok((out, proposals))
            })
            .collect();
        let mut samples = Vec::with_capacity(n);
        let mut proposals = 0;
        for r in results {
            let (s, p) = r?;
            samples.extend(s);
            proposals += p;
        }
        Ok(TargetSamples {
            acceptance_rate: n as f64 / proposals.max(1) as f64,
            samples,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TargetSamples {
    pub samples: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Symmetric two-component mixture `½N(-m, v) + ½N(m, v)` in one dimension.
pub fn symmetric_bimodal(separation: f64, variance: f64) -> PerturbationFamily {
    PerturbationFamily::log_mixture_ratio(vec![
        MixtureComponent {
            weight: 0.5,
            mean: vec![-separation],
            variance,
        },
        MixtureComponent {
            weight: 0.5,
            mean: vec![separation],
            variance,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn zero(dim: usize) -> TargetDensity {
        TargetDensity::gaussian_perturbation(PerturbationFamily::zero(), 1.0, 1.0, dim).unwrap()
    }

    fn conj(m: f64, v: f64) -> TargetDensity {
        TargetDensity::gaussian_perturbation(PerturbationFamily::conjugate_gaussian(vec![m], v), 1.0, 2.0, 1)
            .unwrap()
    }

    fn weierstrass(dim: usize, beta: f64) -> TargetDensity {
        TargetDensity::gaussian_perturbation(
            PerturbationFamily::weierstrass(WeierstrassSpec::new(0.5, beta, 3)),
            2.5,
            beta,
            dim,
        )
        .unwrap()
    }

    fn central_grad(d: &TargetDensity, y: &[f64], h: f64) -> Vec<f64> {
        (0..y.len())
            .map(|i| {
                let mut p = y.to_vec();
                let mut m = y.to_vec();
                p[i] += h;
                m[i] -= h;
                (d.eval_log_r(&p).unwrap() - d.eval_log_r(&m).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_log_r_vanishes() {
        assert_eq!(zero(2).eval_log_r(&[0.3, -1.2]).unwrap(), 0.0);
        assert_eq!(zero(2).eval_grad_log_r(&[0.3, -1.2]).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn conjugate_log_r_value() {
        let d = conj(0.0, 4.0);
        assert!((d.eval_log_r(&[2.0]).unwrap() - 1.5).abs() < 1e-15);
        // Cross-check against log(N(0,4)/γ) with normalizers: the difference
        // must be the constant log(1/2) everywhere.
        let norm_ratio = |y: f64| {
            let p = (-y * y / 8.0).exp() / (8.0 * PI).sqrt();
            let g = (-y * y / 2.0).exp() / (2.0 * PI).sqrt();
            (p / g).ln()
        };
        for y in [-1.0, 0.0, 0.7, 2.0] {
            let c = norm_ratio(y) - d.eval_log_r(&[y]).unwrap();
            assert!((c - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugate_gradient_value() {
        let d = conj(1.0, 4.0);
        let g = d.eval_grad_log_r(&[0.0]).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-15);
        let fd = central_grad(&d, &[0.0], 1e-5);
        assert!((fd[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn ball_log_r_value() {
        let d = TargetDensity::ball_supported(PerturbationFamily::zero(), 1.0, 1.0, 2).unwrap();
        let y = [0.5f64.sqrt() * 0.6, 0.5f64.sqrt() * 0.8];
        assert!((d.eval_log_r(&y).unwrap() + 1.75).abs() < 1e-12);
        assert_eq!(d.eval_log_r(&[1.0, 0.0]).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(d.eval_grad_log_r(&[0.8, 0.8]), Err(Error::OutsideSupport(_))));
    }

    #[test]
    fn invalid_inputs_rejected() {
        let d = zero(1);
        assert!(matches!(d.eval_log_r(&[f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(d.eval_log_r(&[1.0, 2.0]), Err(Error::InvalidInput(_))));
        assert!(TargetDensity::ball_supported(PerturbationFamily::zero(), 0.5, 1.0, 1).is_err());
        let smooth0 = TargetDensity::gaussian_perturbation(
            PerturbationFamily::zero().with_smoothness_order(0),
            1.0,
            1.0,
            1,
        )
        .unwrap();
        assert!(matches!(smooth0.eval_grad_log_r(&[0.0]), Err(Error::Capability(_))));
        // sup |a| larger than K
        assert!(TargetDensity::gaussian_perturbation(
            PerturbationFamily::weierstrass(WeierstrassSpec::new(5.0, 0.5, 1)),
            1.0,
            0.5,
            1
        )
        .is_err());
    }

    #[test]
    fn weierstrass_gradient_matches_finite_differences() {
        let d = weierstrass(2, 0.8);
        let mut r = rng::stream(11, 0, 0);
        for _ in 0..20 {
            let y = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
            let g = d.eval_grad_log_r(&y).unwrap();
            // Highest frequency is 4096, so a smaller step keeps truncation error low.
            let fd = central_grad(&d, &y, 1e-7);
            let scale = g.norm().max(1.0);
            for i in 0..2 {
                assert!((g[i] - fd[i]).abs() <= 1e-6 * scale * 10.0, "{g} vs {fd:?}");
            }
        }
    }

    #[test]
    fn weierstrass_holder_quotient_stabilizes() {
        // For beta < 1 the sampled Hölder quotient sup |a(x)-a(y)|/|x-y|^beta
        // stays bounded as more pairs are added.
        let beta = 0.5;
        let d = weierstrass(1, beta);
        let quotient = |pairs: usize| {
            let mut r = rng::stream(5, 0, 0);
            let mut best: f64 = 0.0;
            for _ in 0..pairs {
                let x: f64 = r.gen_range(-2.0..2.0);
                let h: f64 = 10f64.powf(r.gen_range(-3.5..0.0));
                let q = (d.perturbation_value(&[x + h]) - d.perturbation_value(&[x])).abs() / h.powf(beta);
                best = best.max(q);
            }
            best
        };
        let (q1, q2, q3) = (quotient(2_000), quotient(8_000), quotient(32_000));
        assert!(q1.is_finite() && q3 < 2.0 * q1, "{q1} {q2} {q3}");
        assert!(q3 >= q2 && q2 >= q1);
    }

    #[test]
    fn mixture_log_r_is_log_density_ratio() {
        let d = TargetDensity::gaussian_perturbation(symmetric_bimodal(1.5, 0.5), 3.0, 2.0, 1).unwrap();
        for y in [-2.0, -0.3, 0.0, 1.1, 2.5] {
            let p = 0.5 * ((-(y + 1.5f64).powi(2) / 1.0).exp() + (-(y - 1.5f64).powi(2) / 1.0).exp())
                / (2.0 * PI * 0.5).sqrt();
            let g = (-y * y / 2.0).exp() / (2.0 * PI).sqrt();
            assert!(((p / g).ln() - d.eval_log_r(&[y]).unwrap()).abs() < 1e-12);
        }
        // the analytic envelope dominates a fine grid maximum
        let env = d.log_r_upper_bound();
        let grid_max = (0..4001)
            .map(|i| d.eval_log_r(&[-5.0 + i as f64 * 0.0025]).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(env >= grid_max && env - grid_max < 1.0);
    }

    #[test]
    fn shift_changes_log_r_by_constant() {
        let d = weierstrass(1, 0.5);
        let s = d.clone().with_shift(0.75);
        for y in [-1.0, 0.2, 2.0] {
            assert!((s.eval_log_r(&[y]).unwrap() - d.eval_log_r(&[y]).unwrap() - 0.75).abs() < 1e-14);
        }
    }

    #[test]
    fn sampler_zero_mean() {
        let n = 100_000;
        let s = zero(2).sample_target(n, 1).unwrap();
        assert_eq!(s.samples.len(), n);
        for k in 0..2 {
            let mean = s.samples.iter().map(|v| v[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        }
        assert!((s.acceptance_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampler_conjugate_moments() {
        let n = 100_000;
        let s = conj(1.0, 0.25).sample_target(n, 2).unwrap();
        let mean = s.samples.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let var = s.samples.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!((var - 0.25).abs() < 0.0025, "{var}");
    }

    #[test]
    fn sampler_ball_support() {
        let d = TargetDensity::ball_supported(
            PerturbationFamily::weierstrass(WeierstrassSpec::new(0.5, 0.5, 4)),
            2.0,
            0.5,
            2,
        )
        .unwrap();
        let s = d.sample_target(10_000, 3).unwrap();
        assert!(s.samples.iter().all(|v| v.norm() < 1.0));
    }

    #[test]
    fn sampler_rejects_unbounded_ratio() {
        assert!(matches!(conj(1.0, 4.0).sample_target(10, 0), Err(Error::EnvelopeFailure(_))));
    }

    #[test]
    fn sampler_is_reproducible() {
        let d = conj(0.5, 0.5);
        let a = d.sample_target(3000, 9).unwrap().samples;
        let b = d.sample_target(3000, 9).unwrap().samples;
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn boundary_profile_growth_conditions(s in 0.0f64..(1.0 - 1e-6), k in 1.0f64..6.0) {
            let u = BoundaryProfile::power(k).unwrap();
            prop_assert!(u.satisfies_growth_conditions(s));
        }

        #[test]
        fn gradient_consistency(x in -2.5f64..2.5, y in -2.5f64..2.5, family in 0usize..3) {
            let d = match family {
                0 => TargetDensity::gaussian_perturbation(
                    PerturbationFamily::conjugate_gaussian(vec![0.4, -1.0], 0.7), 1.0, 2.0, 2).unwrap(),
                1 => TargetDensity::gaussian_perturbation(PerturbationFamily::log_mixture_ratio(vec![
                    MixtureComponent { weight: 0.3, mean: vec![-1.0, 0.5], variance: 0.4 },
                    MixtureComponent { weight: 0.7, mean: vec![1.2, 0.0], variance: 0.6 },
                ]), 3.0, 2.0, 2).unwrap(),
                _ => TargetDensity::ball_supported(PerturbationFamily::zero(), 2.0, 1.0, 2).unwrap(),
            };
            let p = if d.is_ball_supported() { [0.25 * x, 0.25 * y] } else { [x, y] };
            let g = d.eval_grad_log_r(&p).unwrap();
            let fd = central_grad(&d, &p, 1e-5);
            for i in 0..2 {
                prop_assert!((g[i] - fd[i]).abs() <= 1e-5 * g[i].abs().max(1.0));
            }
        }
    }
}
