//! The transport ODE `∂_t X_t = V(t, X_t)` on `[0, t_end]`, its variational
//! Jacobian, the Langevin reformulation and the backward (inverse) map.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::density::TargetDensity;
use crate::error::{ensure_finite, Error, Result};
use crate::moments::TiltedMeasure;
use crate::ode::{self, OdeOptions};
use crate::quadrature::Quadrature;
use crate::rng;
use crate::velocity::{default_mode, max_eigenvalue, raw_jacobian, symmetrize, velocity_from_measure, VelocityMode};

/// Log-time start of the `LogSwitch` phase, `t = e^{-14} ≈ 8.3e-7`.
pub const LOG_TIME_MAX: f64 = 14.0;
/// Direct integration takes over at this `t`.
pub const LOG_SWITCH_T: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeParametrization {
    Direct,
    /// Integrates in `τ = -log t` for `t < 0.1`, then directly in `t`.
    LogSwitch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub t_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Step ceiling as a fraction of `1 - t`.
    pub max_step_fraction: f64,
    pub with_jacobian: bool,
    pub time_parametrization: TimeParametrization,
    /// `None` picks [`default_mode`] for the density.
    pub velocity_mode: Option<VelocityMode>,
    /// Trajectories leaving the ball of this radius are reported as divergent.
    pub bounding_radius: f64,
    /// Keep every accepted step; otherwise only the endpoints are stored.
    pub record_trajectory: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0 - 1e-8,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step_fraction: 0.1,
            with_jacobian: false,
            time_parametrization: TimeParametrization::Direct,
            velocity_mode: None,
            bounding_radius: 50.0,
            record_trajectory: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end < 1.0) {
            return Err(Error::InvalidConfig(format!("t_end must lie in (0, 1), got {}", self.t_end)));
        }
        if !(self.max_step_fraction > 0.0 && self.max_step_fraction <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "max_step_fraction must lie in (0, 0.5], got {}",
                self.max_step_fraction
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.bounding_radius > 0.0) {
            return Err(Error::InvalidConfig("bounding_radius must be positive".into()));
        }
        Ok(())
    }

    fn ode_options(&self) -> OdeOptions {
        OdeOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            ..OdeOptions::default()
        }
    }
}

/// Running comparison of `σ_max(J_t)` with `exp(∫_0^t λ_max(∇V) ds)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GronwallTrace {
    pub times: Vec<f64>,
    pub sigma_max: Vec<f64>,
    /// Trapezoidal `∫_0^t λ_max(∇V(s, X_s)) ds` at each recorded time.
    pub log_bound: Vec<f64>,
}

impl GronwallTrace {
    /// Largest `σ_max(J_t) / exp(Λ_t)` along the trajectory.
    pub fn worst_ratio(&self) -> f64 {
        self.sigma_max
            .iter()
            .zip(&self.log_bound)
            .map(|(s, l)| s / l.exp())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub x0: DVector<f64>,
    pub x_final: DVector<f64>,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub jacobian: Option<DMatrix<f64>>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    /// Estimate of `‖X_1 - X_{t_end}‖`; zero when the run stops before `t_end`.
    pub tail_bound: f64,
    pub gronwall: Option<GronwallTrace>,
}

struct Field<'a> {
    density: &'a TargetDensity,
    quad: &'a Quadrature,
    mode: VelocityMode,
    dim: usize,
    with_jacobian: bool,
}

impl<'a> Field<'a> {
    fn new(density: &'a TargetDensity, cfg: &FlowConfig, quad: &'a Quadrature) -> Self {
        Self {
            density,
            quad,
            mode: cfg.velocity_mode.unwrap_or_else(|| default_mode(density)),
            dim: density.dim(),
            with_jacobian: cfg.with_jacobian,
        }
    }

    /// Writes `scale · (V, ∇V·J)` at time `t` into `out`.
    fn eval(&self, t: f64, y: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        let x = &y[..d];
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                t,
                reason: "non-finite state".into(),
            });
        }
        let m = TiltedMeasure::new(self.density, t, x, self.quad)?;
        let v = velocity_from_measure(self.density, &m, self.mode)?;
        for k in 0..d {
            out[k] = scale * v[k];
        }
        if self.with_jacobian {
            let a = symmetrize(&raw_jacobian(&m));
            let j = DMatrix::from_column_slice(d, d, &y[d..]);
            let dj = a * j * scale;
            out[d..].copy_from_slice(dj.as_slice());
        }
        Ok(())
    }

    fn lambda_max(&self, t: f64, x: &[f64]) -> Result<f64> {
        let m = TiltedMeasure::new(self.density, t, x, self.quad)?;
        Ok(max_eigenvalue(&symmetrize(&raw_jacobian(&m))))
    }

    fn velocity(&self, t: f64, x: &[f64]) -> Result<DVector<f64>> {
        let m = TiltedMeasure::new(self.density, t, x, self.quad)?;
        velocity_from_measure(self.density, &m, self.mode)
    }
}

struct Recorder {
    dim: usize,
    radius: f64,
    keep: bool,
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    gronwall: Option<(GronwallTrace, f64)>,
}

impl Recorder {
    fn push(&mut self, field: &Field, t: f64, y: &[f64]) -> Result<()> {
        let x = &y[..self.dim];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.radius {
            return Err(Error::Divergence {
                t,
                reason: format!("trajectory left the ball of radius {} (|x| = {norm:.3})", self.radius),
            });
        }
        if let Some((trace, last_lambda)) = &mut self.gronwall {
            let lambda = field.lambda_max(t, x)?;
            let j = DMatrix::from_column_slice(self.dim, self.dim, &y[self.dim..]);
            let smax = j.singular_values().max();
            let prev_t = *trace.times.last().unwrap_or(&t);
            let prev_l = *trace.log_bound.last().unwrap_or(&0.0);
            trace.times.push(t);
            trace.sigma_max.push(smax);
            trace.log_bound.push(prev_l + 0.5 * (t - prev_t) * (lambda + *last_lambda));
            *last_lambda = lambda;
        }
        if self.keep {
            self.times.push(t);
            self.states.push(DVector::from_column_slice(x));
        }
        Ok(())
    }
}

fn initial_state(dim: usize, x0: &[f64], with_jacobian: bool) -> Vec<f64> {
    let mut y = x0.to_vec();
    if with_jacobian {
        y.extend(DMatrix::<f64>::identity(dim, dim).as_slice());
    }
    y
}

fn check_start(density: &TargetDensity, x0: &[f64], cfg: &FlowConfig, quad: &Quadrature) -> Result<()> {
    cfg.validate()?;
    if x0.len() != density.dim() {
        return Err(Error::InvalidInput(format!(
            "start point has dimension {} but the density has dimension {}",
            x0.len(),
            density.dim()
        )));
    }
    if quad.spec().dim != density.dim() {
        return Err(Error::InvalidConfig("quadrature and density dimensions differ".into()));
    }
    ensure_finite(x0)
}

/// Integrates the transport ODE from `t = 0` to `t_end`.
pub fn integrate_flow(density: &TargetDensity, x0: &[f64], cfg: &FlowConfig, quad: &Quadrature) -> Result<FlowResult> {
    integrate_flow_to(density, x0, 1.0, cfg, quad)
}

/// Integrates the transport ODE to `min(t_stop, t_end)`.
pub fn integrate_flow_to(
    density: &TargetDensity,
    x0: &[f64],
    t_stop: f64,
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<FlowResult> {
    check_start(density, x0, cfg, quad)?;
    if !(t_stop > 0.0 && t_stop <= 1.0) {
        return Err(Error::Domain(format!("t_stop must lie in (0, 1], got {t_stop}")));
    }
    let t1 = t_stop.min(cfg.t_end);
    let field = Field::new(density, cfg, quad);
    let d = field.dim;
    let opts = cfg.ode_options();
    let mut rec = Recorder {
        dim: d,
        radius: cfg.bounding_radius,
        keep: cfg.record_trajectory,
        times: Vec::new(),
        states: Vec::new(),
        gronwall: cfg.with_jacobian.then(|| (GronwallTrace::default(), 0.0)),
    };
    let mut y = initial_state(d, x0, cfg.with_jacobian);
    rec.push(&field, 0.0, &y)?;
    let mut accepted = 0;
    let mut rejected = 0;
    let mut t0 = 0.0;

    if cfg.time_parametrization == TimeParametrization::LogSwitch && t1 > LOG_SWITCH_T {
        // Start at t = e^{-τ_max} from the first-order expansion X_t ≈ x0 + t V(0, x0).
        let t_start = (-LOG_TIME_MAX).exp();
        let v0 = field.velocity(0.0, x0)?;
        for k in 0..d {
            y[k] += t_start * v0[k];
        }
        rec.push(&field, t_start, &y)?;
        let tau_end = -LOG_SWITCH_T.ln();
        let out = ode::integrate(
            |tau, y, dy| field.eval((-tau).exp(), y, -(-tau).exp(), dy),
            LOG_TIME_MAX,
            tau_end,
            &y,
            &opts,
            |_| f64::INFINITY,
            |tau, y| {
                let t = if tau == tau_end { LOG_SWITCH_T } else { (-tau).exp() };
                rec.push(&field, t, y)
            },
        )?;
        y = out.y;
        accepted += out.accepted;
        rejected += out.rejected;
        t0 = LOG_SWITCH_T;
    }

    let frac = cfg.max_step_fraction;
    let out = ode::integrate(
        |t, y, dy| field.eval(t, y, 1.0, dy),
        t0,
        t1,
        &y,
        &opts,
        |t| frac * (1.0 - t),
        |t, y| rec.push(&field, t, y),
    )?;
    accepted += out.accepted;
    rejected += out.rejected;
    let y = out.y;
    let x_final = DVector::from_column_slice(&y[..d]);
    let tail_bound = if t1 >= cfg.t_end {
        2.0 * (1.0 - t1) * field.velocity(t1, &y[..d])?.norm()
    } else {
        0.0
    };
    let (times, states) = if cfg.record_trajectory {
        (rec.times, rec.states)
    } else {
        (vec![0.0, t1], vec![DVector::from_column_slice(x0), x_final.clone()])
    };
    Ok(FlowResult {
        x0: DVector::from_column_slice(x0),
        x_final,
        times,
        states,
        jacobian: cfg
            .with_jacobian
            .then(|| DMatrix::from_column_slice(d, d, &y[d..])),
        steps_accepted: accepted,
        steps_rejected: rejected,
        tail_bound,
        gronwall: rec.gronwall.map(|(g, _)| g),
    })
}

/// The Langevin map `L_{s,s}(x0)`: integrates `∂_t L = ∇ log Q_u r(L)` with
/// `u = e^{-(s-t)}` from `t = 0` until `u` reaches `t_end`.
pub fn langevin_flow(
    density: &TargetDensity,
    x0: &[f64],
    s_horizon: f64,
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<FlowResult> {
    check_start(density, x0, cfg, quad)?;
    if !(1.0..=40.0).contains(&s_horizon) {
        return Err(Error::Domain(format!("s_horizon must lie in [1, 40], got {s_horizon}")));
    }
    let s = s_horizon;
    let field = Field::new(density, cfg, quad);
    let d = field.dim;
    let u_of = |t: f64| (-(s - t)).exp();
    let t1 = s + cfg.t_end.ln();
    let frac = cfg.max_step_fraction;
    let mut rec = Recorder {
        dim: d,
        radius: cfg.bounding_radius,
        keep: cfg.record_trajectory,
        times: Vec::new(),
        states: Vec::new(),
        gronwall: None,
    };
    let y = initial_state(d, x0, cfg.with_jacobian);
    rec.push(&field, 0.0, &y)?;
    let out = ode::integrate(
        |t, y, dy| {
            let u = u_of(t).min(cfg.t_end);
            field.eval(u, y, u, dy)
        },
        0.0,
        t1,
        &y,
        &cfg.ode_options(),
        // a step of length h moves u by about u·h
        |t| {
            let u = u_of(t);
            (frac * (1.0 - u) / u).max(1e-12)
        },
        |t, y| rec.push(&field, t, y),
    )?;
    let x_final = DVector::from_column_slice(&out.y[..d]);
    let tail_bound = 2.0 * (1.0 - cfg.t_end) * field.velocity(cfg.t_end, &out.y[..d])?.norm();
    let (times, states) = if cfg.record_trajectory {
        (rec.times, rec.states)
    } else {
        (vec![0.0, t1], vec![DVector::from_column_slice(x0), x_final.clone()])
    };
    Ok(FlowResult {
        x0: DVector::from_column_slice(x0),
        x_final,
        times,
        states,
        jacobian: cfg
            .with_jacobian
            .then(|| DMatrix::from_column_slice(d, d, &out.y[d..])),
        steps_accepted: out.accepted,
        steps_rejected: out.rejected,
        tail_bound,
        gronwall: None,
    })
}

/// `T⁻¹(y)`: integrates the transport ODE backward from `Z_{t_end} = y` to `t = 0`.
pub fn inverse_map(density: &TargetDensity, y: &[f64], cfg: &FlowConfig, quad: &Quadrature) -> Result<DVector<f64>> {
    check_start(density, y, cfg, quad)?;
    if density.is_ball_supported() && y.iter().map(|v| v * v).sum::<f64>() >= 1.0 {
        return Err(Error::OutsideSupport(y.to_vec()));
    }
    let cfg = FlowConfig {
        with_jacobian: false,
        ..cfg.clone()
    };
    let field = Field::new(density, &cfg, quad);
    let radius = cfg.bounding_radius;
    let frac = cfg.max_step_fraction;
    let out = ode::integrate(
        |t, y, dy| field.eval(t, y, 1.0, dy),
        cfg.t_end,
        0.0,
        y,
        &cfg.ode_options(),
        |t| frac * (1.0 - t),
        |t, z| {
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                Err(Error::Divergence {
                    t,
                    reason: format!("backward trajectory left the ball of radius {radius} (|z| = {norm:.3})"),
                })
            } else {
                Ok(())
            }
        },
    )?;
    Ok(DVector::from_column_slice(&out.y))
}

/// The standard Gaussian start point of particle `index`.
pub fn gaussian_start(dim: usize, seed: u64, index: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, rng::task::PUSHFORWARD, index as u64);
    (0..dim).map(|_| r.sample(StandardNormal)).collect()
}

/// Flows `n` standard Gaussian particles to `min(t_stop, t_end)`, in index order.
pub fn pushforward_flows(
    density: &TargetDensity,
    n: usize,
    t_stop: f64,
    seed: u64,
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<Vec<FlowResult>> {
    if n == 0 {
        return Err(Error::InvalidInput("particle count must be at least 1".into()));
    }
    cfg.validate()?;
    let d = density.dim();
    let results: Vec<Result<FlowResult>> = (0..n)
        .into_par_iter()
        .map(|i| integrate_flow_to(density, &gaussian_start(d, seed, i), t_stop, cfg, quad))
        .collect();
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.is_err().then_some(i))
        .collect();
    if let Some(&first) = failed.first() {
        let msg = match &results[first] {
            Err(e) => e.to_string(),
            Ok(_) => unreachable!(),
        };
        return Err(Error::ParticleFailures {
            total: n,
            failed,
            first: msg,
        });
    }
    Ok(results.into_iter().map(|r| r.unwrap()).collect())
}

/// Transported cloud of `n` Gaussian particles; trajectories are not kept.
pub fn pushforward_samples(
    density: &TargetDensity,
    n: usize,
    t_stop: f64,
    seed: u64,
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<Vec<DVector<f64>>> {
    let cfg = FlowConfig {
        record_trajectory: false,
        with_jacobian: false,
        ..cfg.clone()
    };
    Ok(pushforward_flows(density, n, t_stop, seed, &cfg, quad)?
        .into_iter()
        .map(|r| r.x_final)
        .collect())
}

/// Coordinatewise map `x ↦ scale ⊙ x + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl DiagonalAffine {
    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        if scale.len() != shift.len() || scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput("diagonal affine map needs positive scales matching the shift".into()));
        }
        Ok(Self { scale, shift })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(x, (a, b))| a * x + b)
            .collect()
    }

    pub fn inverse(&self) -> Self {
        Self {
            scale: self.scale.iter().map(|a| 1.0 / a).collect(),
            shift: self.shift.iter().zip(&self.scale).map(|(b, a)| -b / a).collect(),
        }
    }
}

/// `post ∘ T ∘ pre` for anisotropic source and target scalings; the inner map
/// `T` transports the isotropic reference onto `density`. Returns the image and
/// the chain-rule Jacobian when `cfg.with_jacobian` is set.
pub fn composed_map(
    pre: &DiagonalAffine,
    density: &TargetDensity,
    post: &DiagonalAffine,
    x: &[f64],
    cfg: &FlowConfig,
    quad: &Quadrature,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let d = density.dim();
    if pre.scale.len() != d || post.scale.len() != d {
        return Err(Error::InvalidInput("affine layers must match the density dimension".into()));
    }
    let inner = integrate_flow(density, &pre.apply(x), cfg, quad)?;
    let y = DVector::from_vec(post.apply(inner.x_final.as_slice()));
    let jac = inner.jacobian.map(|j| {
        DMatrix::from_diagonal(&DVector::from_column_slice(&post.scale))
            * j
            * DMatrix::from_diagonal(&DVector::from_column_slice(&pre.scale))
    });
    Ok((y, jac))
}
