//! Deterministic minimizers over flat parameter vectors: L-BFGS with an
//! Armijo backtracking line search, and Adam.

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub const ARMIJO_C1: f64 = 1e-4;
pub const MAX_BACKTRACKS: usize = 25;
/// Curvature pairs with `s.y` at or below this are dropped.
pub const MIN_CURVATURE: f64 = 1e-10;

/// A scalar objective. `value_and_gradient` is called at accepted points;
/// `value` at trial points of a line search started from the most recent
/// `value_and_gradient` point. For a plain function both agree.
pub trait Objective {
    fn value(&mut self, params: &[f64]) -> Result<f64>;
    fn value_and_gradient(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Objective from a plain closure returning value and gradient.
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    fn value(&mut self, params: &[f64]) -> Result<f64> {
        Ok((self.0)(params).0)
    }

    fn value_and_gradient(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.0)(params))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct LbfgsState {
    /// `(s, y)` pairs, oldest first.
    pub history: VecDeque<(Vec<f64>, Vec<f64>)>,
    pub step_scale: f64,
    pub m: usize,
    /// Value and gradient at the current iterate, once known.
    current: Option<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub accepted: bool,
    /// Objective at the iterate before the step.
    pub loss_before: f64,
    /// Line-search objective at the accepted trial (equals `loss_before`
    /// when rejected).
    pub loss_trial: f64,
    /// Objective at the iterate after the step (re-evaluated there).
    pub loss_after: f64,
    pub step_length: f64,
    pub backtracks: usize,
    pub pair_stored: bool,
    pub steepest_descent: bool,
    /// Why the step was rejected, if it was.
    pub note: Option<String>,
}

impl LbfgsState {
    pub fn new(step_scale: f64, m: usize) -> Result<Self> {
        if !(step_scale.is_finite() && step_scale > 0.0) {
            return Err(Error::Config(format!("step_scale must be > 0, got {step_scale}")));
        }
        Ok(LbfgsState {
            history: VecDeque::new(),
            step_scale,
            m,
            current: None,
        })
    }

    /// Forgets the cached value/gradient (after the objective changed).
    pub fn invalidate(&mut self) {
        self.current = None;
    }

    /// Supplies the value and gradient at the current iterate, so the next
    /// step does not re-evaluate them.
    pub fn prime(&mut self, value: f64, gradient: Vec<f64>) {
        self.current = Some((value, gradient));
    }

    pub fn is_primed(&self) -> bool {
        self.current.is_some()
    }

    /// `-H g` by the two-loop recursion with `H0 = (s.y / y.y) I`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y) in self.history.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((rho, a));
        }
        if let Some((s, y)) = self.history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), (rho, a)) in self.history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// One L-BFGS iteration. On success `params` moves to the accepted point;
/// on failure it is left unchanged and the history cleared.
pub fn lbfgs_step(state: &mut LbfgsState, params: &mut [f64], obj: &mut dyn Objective) -> Result<StepReport> {
    let (f0, g0) = match state.current.take() {
        Some(c) => c,
        None => obj.value_and_gradient(params)?,
    };
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "objective", index: 0 });
    }
    let mut d = state.direction(&g0);
    let mut slope = dot(&g0, &d);
    let mut steepest = state.history.is_empty();
    if !(slope < 0.0) {
        state.history.clear();
        d = g0.iter().map(|v| -v).collect();
        slope = dot(&g0, &d);
        steepest = true;
    }
    let reject = |state: &mut LbfgsState, f0: f64, g0: Vec<f64>, backtracks: usize, note: String| {
        state.history.clear();
        state.current = Some((f0, g0));
        StepReport {
            accepted: false,
            loss_before: f0,
            loss_trial: f0,
            loss_after: f0,
            step_length: 0.0,
            backtracks,
            pair_stored: false,
            steepest_descent: steepest,
            note: Some(note),
        }
    };
    if slope == 0.0 {
        return Ok(reject(state, f0, g0, 0, "zero gradient".into()));
    }

    let mut alpha = state.step_scale;
    let mut trial = vec![0.0; params.len()];
    let mut accepted = None;
    for k in 0..=MAX_BACKTRACKS {
        for ((t, p), di) in trial.iter_mut().zip(params.iter()).zip(&d) {
            *t = p + alpha * di;
        }
        let f = match obj.value(&trial) {
            Ok(f) if f.is_finite() => f,
            Ok(_) | Err(Error::NonFinite { .. }) => {
                return Ok(reject(state, f0, g0, k, format!("non-finite loss at step length {alpha:e}")));
            }
            Err(e) => return Err(e),
        };
        if f <= f0 + ARMIJO_C1 * alpha * slope {
            accepted = Some((k, f));
            break;
        }
        alpha *= 0.5;
    }
    let Some((backtracks, f_trial)) = accepted else {
        return Ok(reject(state, f0, g0, MAX_BACKTRACKS, "line search failed".into()));
    };

    let (f1, g1) = match obj.value_and_gradient(&trial) {
        Ok(v) if v.0.is_finite() && v.1.iter().all(|x| x.is_finite()) => v,
        Ok(_) | Err(Error::NonFinite { .. }) => {
            return Ok(reject(state, f0, g0, backtracks, "non-finite gradient at accepted point".into()));
        }
        Err(e) => return Err(e),
    };
    let s: Vec<f64> = trial.iter().zip(params.iter()).map(|(a, b)| a - b).collect();
    let y: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
    let sy = dot(&s, &y);
    let pair_stored = state.m > 0 && sy > MIN_CURVATURE;
    if pair_stored {
        if state.history.len() == state.m {
            state.history.pop_front();
        }
        state.history.push_back((s, y));
    } else {
        // Without fresh curvature the stale pairs keep prescribing steps of
        // the wrong scale; restart from steepest descent instead.
        state.history.clear();
    }
    params.copy_from_slice(&trial);
    state.current = Some((f1, g1));
    Ok(StepReport {
        accepted: true,
        loss_before: f0,
        loss_trial: f_trial,
        loss_after: f1,
        step_length: alpha,
        backtracks,
        pair_stored,
        steepest_descent: steepest,
        note: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ParamCount {
            expected: params.len(),
            actual: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "adam gradient", index: i });
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= state.lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(p: &[f64]) -> (f64, Vec<f64>) {
        let (x, y) = (p[0], p[1]);
        let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let g = vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
        (f, g)
    }

    fn run(obj: &mut dyn Objective, p: &mut [f64], scale: f64, m: usize, steps: usize, stop: f64) -> (usize, f64) {
        let mut st = LbfgsState::new(scale, m).unwrap();
        let mut f = obj.value(p).unwrap();
        for k in 1..=steps {
            let r = lbfgs_step(&mut st, p, obj).unwrap();
            assert!(r.loss_trial <= r.loss_before);
            f = r.loss_after;
            if f < stop {
                return (k, f);
            }
        }
        (steps + 1, f)
    }

    #[test]
    fn quadratic_converges_within_30_steps() {
        let target: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let t2 = target.clone();
        let mut obj = FnObjective(move |p: &[f64]| {
            let d: Vec<f64> = p.iter().zip(&t2).map(|(a, b)| a - b).collect();
            (0.5 * dot(&d, &d), d)
        });
        let mut p = vec![3.0; 10];
        let mut st = LbfgsState::new(1.0, 50).unwrap();
        for _ in 0..30 {
            lbfgs_step(&mut st, &mut p, &mut obj).unwrap();
        }
        let err: f64 = p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rosenbrock_below_tolerance() {
        let mut p = vec![-1.2, 1.0];
        let (k, f) = run(&mut FnObjective(rosenbrock), &mut p, 1.0, 50, 200, 1e-8);
        assert!(k <= 200 && f < 1e-8, "steps {k} f {f}");
    }

    #[test]
    fn first_step_is_scaled_steepest_descent() {
        let mut obj = FnObjective(|p: &[f64]| (0.5 * dot(p, p), p.to_vec()));
        let mut p = vec![1.0, -2.0];
        let mut st = LbfgsState::new(0.1, 5).unwrap();
        let r = lbfgs_step(&mut st, &mut p, &mut obj).unwrap();
        assert!(r.steepest_descent && r.backtracks == 0);
        assert_eq!(p, vec![1.0 - 0.1, -2.0 + 0.2]);
    }

    #[test]
    fn zero_memory_is_gradient_descent() {
        let mut obj = FnObjective(|p: &[f64]| (0.5 * (p[0] * p[0] + 4.0 * p[1] * p[1]), vec![p[0], 4.0 * p[1]]));
        let mut p = vec![1.0, 1.0];
        let mut st = LbfgsState::new(1.0, 0).unwrap();
        for _ in 0..5 {
            let r = lbfgs_step(&mut st, &mut p, &mut obj).unwrap();
            assert!(r.steepest_descent && !r.pair_stored);
            assert!(st.history.is_empty());
        }
    }

    #[test]
    fn convex_quadratic_needs_at_most_d_plus_one_steps() {
        let d = 8;
        let diag: Vec<f64> = (0..d).map(|i| 1.0 + i as f64).collect();
        let dg = diag.clone();
        let mut obj = FnObjective(move |p: &[f64]| {
            let g: Vec<f64> = p.iter().zip(&dg).map(|(a, b)| a * b).collect();
            (0.5 * dot(p, &g), g)
        });
        let mut p = vec![1.0; d];
        let mut st = LbfgsState::new(1.0, 50).unwrap();
        let mut steps = 0;
        while steps < 3 * d {
            let r = lbfgs_step(&mut st, &mut p, &mut obj).unwrap();
            steps += usize::from(r.accepted);
            if p.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8 {
                break;
            }
        }
        // Armijo backtracking can shorten steps, so finite termination is
        // not exact; the iterate still gets there quickly.
        assert!(p.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn failed_search_leaves_params_and_clears_history() {
        // ascent-only objective: any move increases the value
        let mut calls = 0;
        let mut obj = FnObjective(move |p: &[f64]| {
            calls += 1;
            if calls == 1 {
                (0.0, vec![1.0; p.len()])
            } else {
                (1.0, vec![1.0; p.len()])
            }
        });
        let mut p = vec![0.5, 0.5];
        let mut st = LbfgsState::new(1.0, 5).unwrap();
        st.history.push_back((vec![1.0, 0.0], vec![1.0, 0.0]));
        let r = lbfgs_step(&mut st, &mut p, &mut obj).unwrap();
        assert!(!r.accepted);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(st.history.is_empty());
    }

    #[test]
    fn non_finite_trial_rejects_step() {
        let mut obj = FnObjective(|p: &[f64]| {
            if p[0] < 0.0 {
                (f64::NAN, vec![f64::NAN])
            } else {
                (p[0], vec![1.0])
            }
        });
        let mut p = vec![0.5];
        let mut st = LbfgsState::new(1.0, 5).unwrap();
        let r = lbfgs_step(&mut st, &mut p, &mut obj).unwrap();
        assert!(!r.accepted && r.note.unwrap().contains("non-finite"));
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn adam_zero_gradient() {
        let mut st = AdamState::new(3, 1e-3);
        let mut p = vec![1.0, 2.0, 3.0];
        adam_step(&mut st, &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut st = AdamState::new(2, 1e-3);
        let mut p = vec![0.0, 0.0];
        adam_step(&mut st, &mut p, &[0.5, -3.0]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10 && (p[1] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn adam_deterministic() {
        let g = [0.3, -0.1, 2.0];
        let run = || {
            let mut st = AdamState::new(3, 1e-2);
            let mut p = vec![1.0; 3];
            for _ in 0..10 {
                adam_step(&mut st, &mut p, &g).unwrap();
            }
            (st, p)
        };
        assert_eq!(run(), run());
    }
}
