//! Fixed-step classical Runge-Kutta integration of one location's flows.

use crate::expr::EvalError;
use crate::model::{Flow, VarId};

use super::SimConfig;

/// Integration of one dwell.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// `(time since entry, valuation)`, strictly increasing in time, first
    /// sample at 0 and last one at the dwell time.
    pub samples: Vec<(f64, Vec<f64>)>,
    /// Accumulated step-doubling estimate of the global error.
    pub error_estimate: f64,
    /// Time at which the estimate first exceeded the tube radius.
    pub tube_exit: Option<f64>,
}

impl Segment {
    pub fn first(&self) -> &[f64] {
        &self.samples[0].1
    }

    pub fn last(&self) -> &[f64] {
        &self.samples[self.samples.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("negative or non-finite duration {0}")]
    BadDuration(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("error estimate {estimate:e} exceeds tube radius {eps_sim:e} at t = {time}; reduce the step")]
    TubeViolation { time: f64, estimate: f64, eps_sim: f64 },
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("step budget of {0} exhausted")]
    StepBudget(usize),
}

/// Right-hand side of `flows` at `x`. Rate-interval flows contribute their
/// midpoint.
pub fn derivative(flows: &[(VarId, Flow)], x: &[f64]) -> Result<Vec<f64>, EvalError> {
    let mut out = vec![0.0; x.len()];
    for (v, f) in flows {
        out[v.0] = match f {
            Flow::Expr(e) => e.eval(x)?,
            Flow::Interval(i) => i.mid(),
        };
    }
    Ok(out)
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

pub(super) fn rk4_step(flows: &[(VarId, Flow)], x: &[f64], h: f64) -> Result<Vec<f64>, EvalError> {
    let k1 = derivative(flows, x)?;
    let k2 = derivative(flows, &axpy(x, h / 2.0, &k1))?;
    let k3 = derivative(flows, &axpy(x, h / 2.0, &k2))?;
    let k4 = derivative(flows, &axpy(x, h, &k3))?;
    Ok((0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// Plain RK4 from `x0` over `[0, duration]` with step `h`, the last step
/// shortened to land on `duration`. Returns the endpoint only.
pub fn rk4(flows: &[(VarId, Flow)], x0: &[f64], duration: f64, h: f64) -> Result<Vec<f64>, EvalError> {
    let mut x = x0.to_vec();
    let mut t = 0.0;
    while t < duration {
        let step = h.min(duration - t);
        x = rk4_step(flows, &x, step)?;
        t = if duration - t <= h { duration } else { t + h };
    }
    Ok(x)
}

/// Integrates `flows` from `x0` for `duration`. Each step of size `h` is
/// taken once whole and once as two halves; the halved result is kept and
/// `|fine - coarse| / 15` (max norm) is added to the error estimate. The run
/// fails once the estimate exceeds `eps_sim`.
pub fn integrate_location(
    flows: &[(VarId, Flow)],
    x0: &[f64],
    duration: f64,
    cfg: &SimConfig,
    budget: &mut usize,
) -> Result<Segment, OdeError> {
    integrate(flows, x0, duration, cfg, budget, true)
}

/// As [`integrate_location`]; with `enforce_tube` unset the run continues past
/// the tube and only records where it left it.
pub(super) fn integrate(
    flows: &[(VarId, Flow)],
    x0: &[f64],
    duration: f64,
    cfg: &SimConfig,
    budget: &mut usize,
    enforce_tube: bool,
) -> Result<Segment, OdeError> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(OdeError::BadDuration(duration));
    }
    let h = cfg.step;
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut samples = vec![(0.0, x.clone())];
    let mut estimate = 0.0;
    let mut tube_exit = None;
    while t < duration {
        if *budget == 0 {
            return Err(OdeError::StepBudget(cfg.max_steps));
        }
        *budget -= 1;
        let last = duration - t <= h;
        let step = if last { duration - t } else { h };
        let coarse = rk4_step(flows, &x, step)?;
        let half = rk4_step(flows, &x, step / 2.0)?;
        let fine = rk4_step(flows, &half, step / 2.0)?;
        let err = fine.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / 15.0;
        estimate += err;
        t = if last { duration } else { t + h };
        if fine.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite(t));
        }
        x = fine;
        if estimate > cfg.eps_sim && tube_exit.is_none() {
            if enforce_tube {
                return Err(OdeError::TubeViolation { time: t, estimate, eps_sim: cfg.eps_sim });
            }
            tube_exit = Some(t);
        }
        samples.push((t, x.clone()));
    }
    Ok(Segment { samples, error_estimate: estimate, tube_exit })
}
