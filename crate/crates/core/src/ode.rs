//! Dormand–Prince 5(4) with an embedded error estimate and a caller-supplied
//! step ceiling. Integrates in either direction.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            h_min: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeOutcome {
    pub t: f64,
    pub y: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &OdeOptions) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = opts.abs_tol + opts.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrates `y' = f(t, y)` from `t0` to `t1`.
///
/// `ceiling(t)` bounds `|h|` at the start of each step. `on_step` sees every
/// accepted `(t, y)`; returning an error aborts the integration.
pub fn integrate<F, G, S>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[f64],
    opts: &OdeOptions,
    ceiling: G,
    mut on_step: S,
) -> Result<OdeOutcome>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    G: Fn(f64) -> f64,
    S: FnMut(f64, &[f64]) -> Result<()>,
{
    let n = y0.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut recent: Vec<(f64, Vec<f64>)> = Vec::new();
    if t0 == t1 {
        return Ok(OdeOutcome { t, y, accepted: 0, rejected: 0 });
    }

    f(t, &y, &mut k[0])?;
    check_finite(t, &k[0], "derivative")?;

    // Initial step from the derivative scale (Hairer–Wanner heuristic).
    let d0 = error_norm(&y, &y, &y, opts);
    let d1 = error_norm(&k[0], &y, &y, opts);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(ceiling(t)).min((t1 - t0).abs());
    {
        for i in 0..n {
            stage[i] = y[i] + dir * h * k[0][i];
        }
        f(t + dir * h, &stage, &mut k[1])?;
        let diff: Vec<f64> = (0..n).map(|i| (k[1][i] - k[0][i]) / h).collect();
        let d2 = error_norm(&diff, &y, &y, opts);
        let h1 = if d1.max(d2) <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        h = (100.0 * h).min(h1).min(ceiling(t)).min((t1 - t0).abs());
    }

    let mut accepted = 0;
    let mut rejected = 0;
    let mut last_rejected = false;
    loop {
        if accepted + rejected >= opts.max_steps {
            return Err(Error::Stiffness {
                t,
                h,
                trace: format!("step budget of {} exhausted", opts.max_steps),
            });
        }
        let remaining = (t1 - t).abs();
        h = h.min(ceiling(t));
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < opts.h_min && !last {
            return Err(Error::Stiffness {
                t,
                h,
                trace: format_trace(&recent),
            });
        }
        let hs = dir * h;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                stage[i] = y[i] + hs * acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            f(t + C[s] * hs, &stage, &mut tail[0])?;
        }
        // the seventh stage point is the fifth-order solution
        y_new.copy_from_slice(&stage);
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            err[i] = hs * e;
        }
        let en = error_norm(&err, &y, &y_new, opts);
        if !en.is_finite() {
            if y_new.iter().any(|v| !v.is_finite()) && h <= opts.h_min {
                return Err(Error::Divergence {
                    t,
                    reason: "non-finite state".into(),
                });
            }
            h *= 0.2;
            rejected += 1;
            last_rejected = true;
            continue;
        }
        if en <= 1.0 {
            t = if last { t1 } else { t + hs };
            std::mem::swap(&mut y, &mut y_new);
            check_finite(t, &y, "state")?;
            // FSAL: the last stage derivative is the first of the next step
            k.swap(0, 6);
            accepted += 1;
            if recent.len() == 4 {
                recent.remove(0);
            }
            recent.push((t, y.clone()));
            on_step(t, &y)?;
            if last {
                return Ok(OdeOutcome { t, y, accepted, rejected });
            }
            let mut fac = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-0.2) };
            fac = fac.clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h *= fac;
            last_rejected = false;
        } else {
            rejected += 1;
            last_rejected = true;
            h *= (0.9 * en.powf(-0.2)).max(0.2);
        }
    }
}

fn check_finite(t: f64, v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            t,
            reason: format!("non-finite {what}"),
        })
    }
}

fn format_trace(recent: &[(f64, Vec<f64>)]) -> String {
    recent
        .iter()
        .map(|(t, y)| format!("t={t:.12} y={y:?}"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let opts = OdeOptions::default();
        let out = integrate(
            |_t, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            2.0,
            &[1.0],
            &opts,
            |_| f64::INFINITY,
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((out.y[0] - (-2.0f64).exp()).abs() < 1e-9);
        assert_eq!(out.t, 2.0);
    }

    #[test]
    fn backward_integration() {
        let opts = OdeOptions::default();
        // y' = cos t, y(2) = sin 2, integrate back to 0
        let out = integrate(
            |t, _y, dy| {
                dy[0] = t.cos();
                Ok(())
            },
            2.0,
            0.0,
            &[2f64.sin()],
            &opts,
            |_| 0.1,
            |_, _| Ok(()),
        )
        .unwrap();
        assert!(out.y[0].abs() < 1e-9);
        assert!(out.accepted >= 20);
    }

    #[test]
    fn step_ceiling_respected_near_singular_end() {
        // y' = -y / (2(1-t)) has solution sqrt(1-t): derivative blows up at t=1.
        let opts = OdeOptions::default();
        let mut last_t = 0.0;
        let mut max_ratio: f64 = 0.0;
        let t_end = 1.0 - 1e-8;
        let out = integrate(
            |t, y, dy| {
                dy[0] = -y[0] / (2.0 * (1.0 - t));
                Ok(())
            },
            0.0,
            t_end,
            &[1.0],
            &opts,
            |t| 0.1 * (1.0 - t),
            |t, _| {
                max_ratio = max_ratio.max((t - last_t) / (1.0 - last_t));
                last_t = t;
                Ok(())
            },
        )
        .unwrap();
        // differences of t near 1 lose about eight digits
        assert!(max_ratio <= 0.1 + 1e-6, "{max_ratio}");
        assert!((out.y[0] - 1e-4).abs() < 1e-10);
    }

    #[test]
    fn stiffness_is_reported() {
        let opts = OdeOptions::default();
        let res = integrate(
            |t, _y, dy| {
                dy[0] = 1.0 / (0.5 - t).powi(3);
                Ok(())
            },
            0.0,
            1.0,
            &[0.0],
            &opts,
            |_| f64::INFINITY,
            |_, _| Ok(()),
        );
        assert!(matches!(res, Err(Error::Stiffness { .. }) | Err(Error::Divergence { .. })));
    }
}
