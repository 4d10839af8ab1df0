//! Dormand–Prince 5(4) with adaptive step control.
//!
//! Periodic coordinates are reduced once after each accepted step; the
//! integer number of wraps is accumulated separately so callers can recover
//! the lifted (unwrapped) trajectory.

use super::chart::WrapRule;
use super::FlowError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub atol: f64,
    pub rtol: f64,
    /// Initial step; chosen automatically when absent.
    pub h_init: Option<f64>,
    /// Smallest admissible step relative to `max(1, |t|)`.
    pub h_min_rel: f64,
    pub max_steps: usize,
    /// Disables error control and uses this constant step instead.
    pub fixed_step: Option<f64>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-10,
            h_init: None,
            h_min_rel: 1e-14,
            max_steps: 5_000_000,
            fixed_step: None,
        }
    }
}

impl IntegratorSettings {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            atol: tol,
            rtol: tol,
            ..Self::default()
        }
    }

    pub fn fixed(step: f64) -> Self {
        Self {
            fixed_step: Some(step),
            ..Self::default()
        }
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Difference between the 5th-order weights (row 7 of A) and the embedded 4th-order ones.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub(crate) struct Lifted {
    y: Vec<f64>,
    offset: Vec<f64>,
}

impl Lifted {
    fn new(x0: &[f64], rules: &[WrapRule]) -> Self {
        let y: Vec<f64> = rules.iter().zip(x0).map(|(w, &v)| w.reduce(v)).collect();
        let offset = x0.iter().zip(&y).map(|(a, b)| a - b).collect();
        Self { y, offset }
    }

    fn renormalize(&mut self, rules: &[WrapRule]) {
        for ((y, off), w) in self.y.iter_mut().zip(self.offset.iter_mut()).zip(rules) {
            if let WrapRule::Periodic { period } = *w {
                let k = (*y / period).floor();
                if k != 0.0 {
                    *y -= k * period;
                    *off += k * period;
                }
            }
        }
    }

    fn value(&self) -> Vec<f64> {
        self.y.iter().zip(&self.offset).map(|(a, b)| a + b).collect()
    }
}

/// Integrate from `x0` (possibly lifted) at time 0 and return the lifted
/// state at each of `targets`, which must be monotone in one direction.
pub(crate) fn integrate_to<F>(
    field: &F,
    rules: &[WrapRule],
    x0: &[f64],
    targets: &[f64],
    settings: &IntegratorSettings,
) -> Result<Vec<Vec<f64>>, FlowError>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let n = x0.len();
    let mut state = Lifted::new(x0, rules);
    let mut out = Vec::with_capacity(targets.len());
    let Some(&last) = targets.last() else {
        return Ok(out);
    };
    let dir = if last < 0.0 { -1.0 } else { 1.0 };
    let mut t = 0.0f64;
    let mut f = field(&state.y);
    check_finite(&f, t)?;
    let mut h = match (settings.fixed_step, settings.h_init) {
        (Some(h), _) | (None, Some(h)) => h.abs(),
        _ => initial_step(&state.y, &f, settings),
    };
    let mut steps = 0usize;
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];

    for &target in targets {
        if (target - t) * dir < 0.0 {
            return Err(FlowError::InvalidGrid(format!(
                "integration targets must be monotone (got {target} after {t})"
            )));
        }
        while t != target {
            steps += 1;
            if steps > settings.max_steps {
                return Err(FlowError::IntegrationFailure(format!(
                    "exceeded {} steps at t = {t}",
                    settings.max_steps
                )));
            }
            let remaining = (target - t).abs();
            let last_step = h >= remaining;
            let step = if last_step { remaining } else { h } * dir;

            k[0].clone_from(&f);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = state.y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += step * A[s][j] * kj[i];
                    }
                    stage[i] = acc;
                }
                k[s] = field(&stage);
            }
            // stage now holds the 5th-order solution (row 7 equals the weights), k[6] its slope.
            let y_new = stage.clone();
            check_finite(&y_new, t + step)?;

            let accept_and_factor = match settings.fixed_step {
                Some(_) => (true, 1.0),
                None => {
                    let mut err = 0.0;
                    for i in 0..n {
                        let e: f64 = (0..7).map(|s| E[s] * k[s][i]).sum::<f64>() * step;
                        let sc = settings.atol + settings.rtol * state.y[i].abs().max(y_new[i].abs());
                        err += (e / sc).powi(2);
                    }
                    let err = (err / n as f64).sqrt();
                    let factor = if err == 0.0 {
                        5.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    (err <= 1.0, factor)
                }
            };
            let (accepted, factor) = accept_and_factor;
            if accepted {
                t = if last_step { target } else { t + step };
                state.y = y_new;
                state.renormalize(rules);
                f = k[6].clone();
                if settings.fixed_step.is_none() && !last_step {
                    h *= factor;
                } else if settings.fixed_step.is_none() {
                    h = h.max(remaining * factor.min(1.0));
                }
            } else {
                h *= factor;
            }
            if settings.fixed_step.is_none() && h < settings.h_min_rel * t.abs().max(1.0) {
                return Err(FlowError::IntegrationFailure(format!(
                    "step size underflow (h = {h:e}) at t = {t}"
                )));
            }
        }
        out.push(state.value());
    }
    Ok(out)
}

fn initial_step(y: &[f64], f: &[f64], s: &IntegratorSettings) -> f64 {
    let n = y.len().max(1) as f64;
    let sc = |v: f64| s.atol + s.rtol * v.abs();
    let d0 = (y.iter().map(|&v| (v / sc(v)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f.iter().zip(y).map(|(&fv, &v)| (fv / sc(v)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0.clamp(1e-8, 0.1)
}

fn check_finite(v: &[f64], t: f64) -> Result<(), FlowError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FlowError::IntegrationFailure(format!(
            "non-finite state or slope at t = {t}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_to_tolerance() {
        let field = |x: &[f64]| vec![-x[0]];
        let out = integrate_to(
            &field,
            &[WrapRule::Unbounded],
            &[1.0],
            &[1.0, 5.0],
            &IntegratorSettings::default(),
        )
        .unwrap();
        assert!((out[0][0] - (-1f64).exp()).abs() < 1e-9);
        assert!((out[1][0] - (-5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn backward_integration() {
        let field = |x: &[f64]| vec![-x[0]];
        let out = integrate_to(
            &field,
            &[WrapRule::Unbounded],
            &[1.0],
            &[-2.0],
            &IntegratorSettings::default(),
        )
        .unwrap();
        assert!((out[0][0] - 2f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn wrapped_angle_is_lifted() {
        let field = |_: &[f64]| vec![1.0];
        let rules = [WrapRule::Periodic { period: 1.0 }];
        let out = integrate_to(&field, &rules, &[0.25], &[3.5], &IntegratorSettings::default()).unwrap();
        assert!((out[0][0] - 3.75).abs() < 1e-12);
    }

    #[test]
    fn blowup_is_reported() {
        let field = |x: &[f64]| vec![x[0] * x[0]];
        let r = integrate_to(
            &field,
            &[WrapRule::Unbounded],
            &[1.0],
            &[2.0],
            &IntegratorSettings::default(),
        );
        assert!(matches!(r, Err(FlowError::IntegrationFailure(_))));
    }
}
