//! Moments of the tilted measure `p^{t,x}(y) ∝ φ^{t,x}(y) r(y)`.
//!
//! `φ^{t,x}` is the Gaussian with mean `t x` and covariance `(1 - t²) I`.
//! All integrals are taken in whitened coordinates `y = t x + σ z` with
//! `σ = sqrt(1 - t²)`, so the node weights are `w_i r(y_i)` normalized by a
//! log-sum-exp. Centered quantities are accumulated in `z` and rescaled by
//! `σ`, which keeps `Cov/σ² - I` accurate as `t → 1`.

use nalgebra::{DMatrix, DVector};

use crate::density::TargetDensity;
use crate::error::{ensure_finite, Error, Result};
use crate::quadrature::{NodeSet, Quadrature};

/// In-support Gaussian mass below which a ball-supported measure escalates the quadrature order.
const MIN_SUPPORT_MASS: f64 = 1e-3;
/// After escalation, fewer in-support nodes than this is degenerate.
const MIN_SUPPORT_NODES: usize = 16;
const LOW_ESS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Accuracy {
    QuadratureOrder(usize),
    EffectiveSampleSize(f64),
}

/// Weighted node representation of `p^{t,x}`.
#[derive(Debug, Clone)]
pub struct TiltedMeasure {
    t: f64,
    sigma: f64,
    x: Vec<f64>,
    dim: usize,
    z: Vec<f64>,
    w: Vec<f64>,
    log_z: f64,
    ess: f64,
    accuracy: Accuracy,
}

pub(crate) fn sigma_of(t: f64) -> f64 {
    ((1.0 - t) * (1.0 + t)).sqrt()
}

fn check_anchor(density: &TargetDensity, t: f64, x: &[f64]) -> Result<()> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1), got {t}")));
    }
    if x.len() != density.dim() {
        return Err(Error::InvalidInput(format!(
            "anchor has dimension {} but the density has dimension {}",
            x.len(),
            density.dim()
        )));
    }
    ensure_finite(x)
}

impl TiltedMeasure {
    pub fn new(density: &TargetDensity, t: f64, x: &[f64], quad: &Quadrature) -> Result<Self> {
        check_anchor(density, t, x)?;
        if quad.spec().dim != density.dim() {
            return Err(Error::InvalidConfig(format!(
                "quadrature dimension {} does not match density dimension {}",
                quad.spec().dim,
                density.dim()
            )));
        }
        let accuracy_of = |nodes: &NodeSet| match quad.spec().method {
            crate::quadrature::QuadratureMethod::GaussHermite { .. } => {
                Accuracy::QuadratureOrder((nodes.len() as f64).powf(1.0 / nodes.dim as f64).round() as usize)
            }
            crate::quadrature::QuadratureMethod::SelfNormalizedIs { .. } => Accuracy::EffectiveSampleSize(0.0),
        };
        let nodes = quad.nodes();
        let (measure, mass) = Self::build(density, t, x, nodes, accuracy_of(nodes))?;
        if !density.is_ball_supported() || mass >= MIN_SUPPORT_MASS {
            return measure.ok_or_else(|| degenerate(t, "no node carries positive weight"));
        }
        let nodes = quad.escalated_nodes();
        let (measure, mass) = Self::build(density, t, x, nodes, accuracy_of(nodes))?;
        match measure {
            Some(m) if mass >= MIN_SUPPORT_MASS || m.len() >= MIN_SUPPORT_NODES => Ok(m),
            _ => Err(degenerate(
                t,
                &format!(
                    "in-support Gaussian mass {mass:.2e} below {MIN_SUPPORT_MASS:e} with fewer than \
                     {MIN_SUPPORT_NODES} in-support nodes after escalation"
                ),
            )),
        }
    }

    fn build(
        density: &TargetDensity,
        t: f64,
        x: &[f64],
        nodes: &NodeSet,
        accuracy: Accuracy,
    ) -> Result<(Option<Self>, f64)> {
        let dim = density.dim();
        let sigma = sigma_of(t);
        let n = nodes.len();
        let mut z = Vec::with_capacity(n * dim);
        let mut lw = Vec::with_capacity(n);
        let mut y = vec![0.0; dim];
        let mut mass = 0.0;
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            let zi = nodes.point(i);
            for k in 0..dim {
                y[k] = t * x[k] + sigma * zi[k];
            }
            let lr = density.log_r(&y);
            if lr == f64::NEG_INFINITY {
                continue;
            }
            if !lr.is_finite() {
                return Err(Error::Domain(format!("log r is not finite at {y:?}")));
            }
            let l = nodes.log_weights[i] + lr;
            mass += nodes.log_weights[i].exp();
            max = max.max(l);
            z.extend_from_slice(zi);
            lw.push(l);
        }
        if lw.is_empty() {
            return Ok((None, 0.0));
        }
        let mut w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Ok((None, mass));
        }
        w.iter_mut().for_each(|v| *v /= total);
        let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
        let accuracy = match accuracy {
            Accuracy::EffectiveSampleSize(_) => Accuracy::EffectiveSampleSize(ess),
            a => a,
        };
        Ok((
            Some(Self {
                t,
                sigma,
                x: x.to_vec(),
                dim,
                z,
                w,
                log_z: max + total.ln(),
                ess,
                accuracy,
            }),
            mass,
        ))
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// `sqrt(1 - t²)`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn anchor(&self) -> &[f64] {
        &self.x
    }

    /// `log Q_t r(x)`, up to the density's additive constant.
    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }

    pub fn ess(&self) -> f64 {
        self.ess
    }

    pub fn accuracy(&self) -> Accuracy {
        self.accuracy
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    #[inline]
    fn z_at(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    fn y_into(&self, i: usize, y: &mut [f64]) {
        let zi = self.z_at(i);
        for k in 0..self.dim {
            y[k] = self.t * self.x[k] + self.sigma * zi[k];
        }
    }

    /// Weighted mean of the whitened nodes.
    pub fn whitened_mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for (i, w) in self.w.iter().enumerate() {
            for (k, zk) in self.z_at(i).iter().enumerate() {
                m[k] += w * zk;
            }
        }
        m
    }

    /// Weighted covariance of the whitened nodes; `Cov_p^{t,x} = σ² ·` this.
    pub fn whitened_cov(&self, zbar: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim;
        let mut c = DMatrix::zeros(d, d);
        let mut dz = vec![0.0; d];
        for (i, w) in self.w.iter().enumerate() {
            for (k, zk) in self.z_at(i).iter().enumerate() {
                dz[k] = zk - zbar[k];
            }
            for a in 0..d {
                let wa = w * dz[a];
                for b in 0..d {
                    c[(a, b)] += wa * dz[b];
                }
            }
        }
        c
    }

    /// Mean of `p^{t,x}`.
    pub fn mean(&self) -> DVector<f64> {
        let zbar = self.whitened_mean();
        DVector::from_iterator(self.dim, (0..self.dim).map(|k| self.t * self.x[k] + self.sigma * zbar[k]))
    }

    /// `∫ f dp^{t,x}` for `f: R^d → R^m` written into an output slice.
    pub fn expectation<F>(&self, m: usize, mut f: F) -> DVector<f64>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut acc = DVector::zeros(m);
        let mut y = vec![0.0; self.dim];
        let mut out = vec![0.0; m];
        for (i, w) in self.w.iter().enumerate() {
            self.y_into(i, &mut y);
            f(&y, &mut out);
            for j in 0..m {
                acc[j] += w * out[j];
            }
        }
        acc
    }

    /// `∫ ∇ log r dp^{t,x}`; `None` if a node falls outside the support.
    pub(crate) fn mean_score(&self, density: &TargetDensity) -> Option<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim);
        let mut y = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for (i, w) in self.w.iter().enumerate() {
            self.y_into(i, &mut y);
            if !density.grad_log_r_into(&y, &mut g) {
                return None;
            }
            for k in 0..self.dim {
                acc[k] += w * g[k];
            }
        }
        Some(acc)
    }

    /// `∫ f(y) ∇_x p^{t,x}(y) dy = t/(1-t²) ∫ f H^T dp^{t,x}` as an `m × d` matrix.
    pub fn grad_pairing<F>(&self, m: usize, mut f: F) -> DMatrix<f64>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let d = self.dim;
        let mut acc = DMatrix::zeros(m, d);
        if self.t == 0.0 {
            return acc;
        }
        let zbar = self.whitened_mean();
        let mut y = vec![0.0; d];
        let mut out = vec![0.0; m];
        for (i, w) in self.w.iter().enumerate() {
            self.y_into(i, &mut y);
            f(&y, &mut out);
            let zi = self.z_at(i);
            for j in 0..m {
                for k in 0..d {
                    acc[(j, k)] += w * out[j] * (zi[k] - zbar[k]);
                }
            }
        }
        // H = σ (z - z̄), so t/σ² · σ = t/σ.
        acc * (self.t / self.sigma)
    }

    /// `∫ f(y) ∇²_x p^{t,x}(y) dy = t²/(1-t²)² ∫ f (H⊗H - Cov) dp^{t,x}`,
    /// one `d × d` matrix per output component of `f`.
    pub fn hess_pairing<F>(&self, m: usize, mut f: F) -> Vec<DMatrix<f64>>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let d = self.dim;
        let mut acc = vec![DMatrix::zeros(d, d); m];
        if self.t == 0.0 {
            return acc;
        }
        let zbar = self.whitened_mean();
        let czz = self.whitened_cov(&zbar);
        let mut y = vec![0.0; d];
        let mut out = vec![0.0; m];
        let mut dz = vec![0.0; d];
        for (i, w) in self.w.iter().enumerate() {
            self.y_into(i, &mut y);
            f(&y, &mut out);
            for (k, zk) in self.z_at(i).iter().enumerate() {
                dz[k] = zk - zbar[k];
            }
            for (j, a) in acc.iter_mut().enumerate() {
                let wf = w * out[j];
                for p in 0..d {
                    for q in 0..d {
                        a[(p, q)] += wf * (dz[p] * dz[q] - czz[(p, q)]);
                    }
                }
            }
        }
        // σ⁴ cancels against the σ² of each H factor, leaving t²/σ².
        let scale = self.t * self.t / (self.sigma * self.sigma);
        acc.into_iter().map(|a| a * scale).collect()
    }
}

fn degenerate(t: f64, reason: &str) -> Error {
    Error::DegenerateMeasure {
        t,
        reason: reason.to_string(),
    }
}

/// Log-normalizer, mean and covariance of `p^{t,x}`.
#[derive(Debug, Clone)]
pub struct TiltedMoments {
    /// `log Q_t r(x)` up to the density's additive constant.
    pub log_z: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `cov / (1 - t²)`, computed without cancellation.
    pub whitened_cov: DMatrix<f64>,
    pub accuracy: Accuracy,
    /// Set when the importance-sampling effective sample size falls below 50.
    pub low_ess: bool,
    pub t: f64,
    pub x: DVector<f64>,
}

impl TiltedMoments {
    pub fn from_measure(m: &TiltedMeasure) -> Self {
        let zbar = m.whitened_mean();
        let czz = m.whitened_cov(&zbar);
        let s2 = m.sigma * m.sigma;
        Self {
            log_z: m.log_z,
            mean: DVector::from_iterator(m.dim, (0..m.dim).map(|k| m.t * m.x[k] + m.sigma * zbar[k])),
            cov: &czz * s2,
            whitened_cov: czz,
            accuracy: m.accuracy,
            low_ess: matches!(m.accuracy, Accuracy::EffectiveSampleSize(e) if e < LOW_ESS),
            t: m.t,
            x: DVector::from_column_slice(&m.x),
        }
    }
}

pub fn tilted_moments(density: &TargetDensity, t: f64, x: &[f64], quad: &Quadrature) -> Result<TiltedMoments> {
    Ok(TiltedMoments::from_measure(&TiltedMeasure::new(density, t, x, quad)?))
}

/// `∫ f dp^{t,x}` for `f: R^d → R^m`.
pub fn tilted_expectation<F>(
    density: &TargetDensity,
    t: f64,
    x: &[f64],
    quad: &Quadrature,
    m: usize,
    f: F,
) -> Result<DVector<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    Ok(TiltedMeasure::new(density, t, x, quad)?.expectation(m, f))
}

pub fn grad_pairing<F>(
    density: &TargetDensity,
    t: f64,
    x: &[f64],
    quad: &Quadrature,
    m: usize,
    f: F,
) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    Ok(TiltedMeasure::new(density, t, x, quad)?.grad_pairing(m, f))
}

pub fn hess_pairing<F>(
    density: &TargetDensity,
    t: f64,
    x: &[f64],
    quad: &Quadrature,
    m: usize,
    f: F,
) -> Result<Vec<DMatrix<f64>>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    Ok(TiltedMeasure::new(density, t, x, quad)?.hess_pairing(m, f))
}
