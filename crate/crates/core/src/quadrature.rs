//! Node sets for expectations against the standard Gaussian in `z`.
//!
//! Every tilted integral is evaluated in the coordinates `y = t x + sqrt(1-t²) z`
//! with `z ~ γ_d`, so one node set serves all `(t, x)`.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadratureMethod {
    /// Tensor Gauss–Hermite rule with `order` nodes per axis.
    GaussHermite { order: usize },
    /// Self-normalized importance sampling with the Gaussian as proposal.
    SelfNormalizedIs { samples: usize, antithetic: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub method: QuadratureMethod,
    pub dim: usize,
    /// Ignored by Gauss–Hermite.
    pub seed: u64,
}

impl QuadratureSpec {
    pub fn gauss_hermite(dim: usize, order: usize) -> Self {
        Self {
            method: QuadratureMethod::GaussHermite { order },
            dim,
            seed: 0,
        }
    }

    pub fn importance(dim: usize, samples: usize, seed: u64) -> Self {
        Self {
            method: QuadratureMethod::SelfNormalizedIs {
                samples,
                antithetic: true,
            },
            dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("quadrature dimension must be positive".into()));
        }
        match self.method {
            QuadratureMethod::GaussHermite { order } => {
                if self.dim > 4 {
                    return Err(Error::InvalidConfig(format!(
                        "tensor Gauss–Hermite is limited to dim <= 4, got {}",
                        self.dim
                    )));
                }
                if !(8..=128).contains(&order) {
                    return Err(Error::InvalidConfig(format!(
                        "Gauss–Hermite order must lie in [8, 128], got {order}"
                    )));
                }
            }
            QuadratureMethod::SelfNormalizedIs { samples, .. } => {
                if !(1_000..=10_000_000).contains(&samples) {
                    return Err(Error::InvalidConfig(format!(
                        "importance sample count must lie in [1e3, 1e7], got {samples}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn escalated(&self) -> Self {
        let method = match self.method {
            QuadratureMethod::GaussHermite { order } => QuadratureMethod::GaussHermite { order: order * 2 },
            QuadratureMethod::SelfNormalizedIs { samples, antithetic } => QuadratureMethod::SelfNormalizedIs {
                samples: samples * 2,
                antithetic,
            },
        };
        Self { method, ..*self }
    }
}

/// Points `z_i` (row-major, `len = n * dim`) with log-weights summing to one.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub dim: usize,
    pub points: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(spec: &QuadratureSpec) -> Self {
        match spec.method {
            QuadratureMethod::GaussHermite { order } => tensor_gauss_hermite(spec.dim, order),
            QuadratureMethod::SelfNormalizedIs { samples, antithetic } => {
                importance_nodes(spec.dim, samples, antithetic, spec.seed)
            }
        }
    }
}

/// A validated quadrature configuration together with its immutable node cache.
#[derive(Debug, Clone)]
pub struct Quadrature {
    spec: QuadratureSpec,
    nodes: Arc<NodeSet>,
    escalated: Arc<OnceLock<NodeSet>>,
}

impl Quadrature {
    pub fn new(spec: QuadratureSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            nodes: Arc::new(NodeSet::build(&spec)),
            spec,
            escalated: Arc::new(OnceLock::new()),
        })
    }

    pub fn gauss_hermite(dim: usize, order: usize) -> Result<Self> {
        Self::new(QuadratureSpec::gauss_hermite(dim, order))
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn is_importance(&self) -> bool {
        matches!(self.spec.method, QuadratureMethod::SelfNormalizedIs { .. })
    }

    /// Node set with doubled resolution, built on first use.
    pub(crate) fn escalated_nodes(&self) -> &NodeSet {
        self.escalated.get_or_init(|| NodeSet::build(&self.spec.escalated()))
    }
}

/// Gauss–Hermite nodes and weights for the weight `exp(-x²)` (physicists').
/// Roots of the Jacobi matrix seed a Newton polish on the orthonormal
/// Hermite recurrence, which also yields the weights.
pub fn gauss_hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut roots: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = roots[i];
        let mut pp = 0.0;
        for _ in 0..20 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == n / 2 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Probabilists' rule: nodes for `N(0,1)` with weights summing to one.
pub fn gauss_hermite_probabilists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite_physicists(n);
    let s2 = std::f64::consts::SQRT_2;
    let z: Vec<f64> = x.iter().rev().map(|v| v * s2).collect();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().rev().map(|v| v / total).collect();
    (z, w)
}

fn tensor_gauss_hermite(dim: usize, order: usize) -> NodeSet {
    let (z1, w1) = gauss_hermite_probabilists(order);
    let lw1: Vec<f64> = w1.iter().map(|w| w.ln()).collect();
    let n = order.pow(dim as u32);
    let mut points = Vec::with_capacity(n * dim);
    let mut log_weights = Vec::with_capacity(n);
    for idx in 0..n {
        let mut rem = idx;
        let mut lw = 0.0;
        for _ in 0..dim {
            let k = rem % order;
            rem /= order;
            points.push(z1[k]);
            lw += lw1[k];
        }
        log_weights.push(lw);
    }
    NodeSet {
        dim,
        points,
        log_weights,
    }
}

fn importance_nodes(dim: usize, samples: usize, antithetic: bool, seed: u64) -> NodeSet {
    let mut r = rng::stream(seed, rng::task::IMPORTANCE_NODES, 0);
    let mut points = Vec::with_capacity(samples * dim);
    let draws = if antithetic { samples.div_ceil(2) } else { samples };
    for _ in 0..draws {
        let z: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        points.extend_from_slice(&z);
        if antithetic && points.len() < samples * dim {
            points.extend(z.iter().map(|v| -v));
        }
    }
    let n = points.len() / dim;
    NodeSet {
        dim,
        points,
        log_weights: vec![-(n as f64).ln(); n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_moment(k: u32) -> f64 {
        // E[z^k] for z ~ N(0,1): (k-1)!! for even k
        if k % 2 == 1 {
            0.0
        } else {
            (1..k).step_by(2).map(|v| v as f64).product()
        }
    }

    #[test]
    fn probabilists_rule_integrates_polynomials_exactly() {
        for n in [8usize, 16, 48, 128, 256] {
            let (z, w) = gauss_hermite_probabilists(n);
            for k in 0..(2 * n as u32).min(24) {
                let q: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(k as i32)).sum();
                let exact = gaussian_moment(k);
                let scale = gaussian_moment(k + k % 2);
                assert!((q - exact).abs() <= 1e-10 * scale, "n={n} k={k}: {q} vs {exact}");
            }
            assert!(z.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn gauss_hermite_smooth_integrand() {
        // E[cos z] = e^{-1/2}
        let (z, w) = gauss_hermite_probabilists(32);
        let q: f64 = z.iter().zip(&w).map(|(z, w)| w * z.cos()).sum();
        assert!((q - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec::gauss_hermite(5, 16).validate().is_err());
        assert!(QuadratureSpec::gauss_hermite(2, 4).validate().is_err());
        assert!(QuadratureSpec::gauss_hermite(2, 200).validate().is_err());
        assert!(QuadratureSpec::importance(8, 500, 0).validate().is_err());
        assert!(QuadratureSpec::importance(8, 5_000, 0).validate().is_ok());
    }

    #[test]
    fn tensor_weights_normalized() {
        let q = Quadrature::gauss_hermite(3, 10).unwrap();
        let total: f64 = q.nodes().log_weights.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-13);
        assert_eq!(q.nodes().len(), 1000);
    }

    #[test]
    fn antithetic_nodes_pair_up() {
        let q = Quadrature::new(QuadratureSpec::importance(2, 1001, 4)).unwrap();
        let n = q.nodes();
        assert_eq!(n.len(), 1001);
        assert_eq!(n.point(0)[0], -n.point(1)[0]);
        assert_eq!(n.point(0)[1], -n.point(1)[1]);
    }
}
