//! Differentiation kernel.
//!
//! Input derivatives come from truncated Taylor jets propagated along one
//! input axis at a time (x up to fourth order, t up to second order). A
//! single jet buffer can carry both axes at once: they share the value block,
//! so the x- and t-derivatives of a point always agree on the value exactly.
//!
//! Parameter gradients come from reverse accumulation over a [`Tape`] that
//! records the jet arithmetic itself, so losses built from derivative terms
//! differentiate exactly.

mod kernels;
mod tape;

pub use tape::{Gradients, JetBuf, JetTerm, JetVar, Tape, Var};

use crate::error::{Error, Result};
use crate::net::{self, NetArch, ParamVector};

pub const MAX_X_ORDER: usize = 4;
pub const MAX_T_ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    T,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::T => "t",
        }
    }

    pub fn max_order(self) -> usize {
        match self {
            Axis::X => MAX_X_ORDER,
            Axis::T => MAX_T_ORDER,
        }
    }
}

/// Which Taylor coefficients a jet buffer carries: the shared value block,
/// then `x_order` x-coefficients, then `t_order` t-coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JetLayout {
    pub x_order: usize,
    pub t_order: usize,
}

impl JetLayout {
    pub const VALUE: JetLayout = JetLayout {
        x_order: 0,
        t_order: 0,
    };

    pub fn new(x_order: usize, t_order: usize) -> Result<Self> {
        for (axis, order) in [(Axis::X, x_order), (Axis::T, t_order)] {
            if order > axis.max_order() {
                return Err(Error::OrderOutOfRange {
                    axis: axis.name(),
                    order,
                    max: axis.max_order(),
                });
            }
        }
        Ok(JetLayout { x_order, t_order })
    }

    pub fn single(axis: Axis, order: usize) -> Result<Self> {
        match axis {
            Axis::X => Self::new(order, 0),
            Axis::T => Self::new(0, order),
        }
    }

    pub fn blocks(&self) -> usize {
        1 + self.x_order + self.t_order
    }

    pub fn order(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.x_order,
            Axis::T => self.t_order,
        }
    }

    /// Block holding coefficient `k` along `axis`; `None` if not carried.
    pub fn block(&self, axis: Axis, k: usize) -> Option<usize> {
        match (k, axis) {
            (0, _) => Some(0),
            (k, Axis::X) if k <= self.x_order => Some(k),
            (k, Axis::T) if k <= self.t_order => Some(self.x_order + k),
            _ => None,
        }
    }

    pub(crate) fn axes(&self) -> Vec<Vec<usize>> {
        vec![
            kernels::axis_blocks(1, self.x_order),
            kernels::axis_blocks(1 + self.x_order, self.t_order),
        ]
    }
}

/// Truncated Taylor coefficients `c_0..c_K` of a scalar function along one
/// axis; the k-th derivative is `k! * c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub coeffs: Vec<f64>,
}

impl Jet {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn derivative(&self, k: usize) -> f64 {
        factorial(k) * self.coeffs[k]
    }

    pub fn derivatives(&self) -> Vec<f64> {
        (0..self.coeffs.len()).map(|k| self.derivative(k)).collect()
    }

    /// Same jet with only the first `order + 1` coefficients kept.
    pub fn truncate(&self, order: usize) -> Jet {
        Jet {
            coeffs: self.coeffs[..=order].to_vec(),
        }
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Derivatives (not coefficients) of one output channel at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDerivs {
    /// `x[k]` = k-th derivative along x; `x[0]` is the value.
    pub x: Vec<f64>,
    /// `t[k]` = k-th derivative along t; `t[0]` is the value.
    pub t: Vec<f64>,
}

/// Per-channel derivative bundle at one point. Slots beyond the requested
/// orders are absent, not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivBundle {
    pub channels: Vec<ChannelDerivs>,
}

impl DerivBundle {
    pub fn get(&self, channel: usize, axis: Axis, order: usize) -> Result<f64> {
        let missing = || Error::MissingDerivative {
            channel,
            axis: axis.name(),
            order,
        };
        let ch = self.channels.get(channel).ok_or_else(missing)?;
        let slots = match axis {
            Axis::X => &ch.x,
            Axis::T => &ch.t,
        };
        slots.get(order).copied().ok_or_else(missing)
    }

    pub fn value(&self, channel: usize) -> f64 {
        self.channels[channel].x[0]
    }

    /// Multiplies every slot by `c`.
    pub fn scaled(&self, c: f64) -> DerivBundle {
        DerivBundle {
            channels: self
                .channels
                .iter()
                .map(|ch| ChannelDerivs {
                    x: ch.x.iter().map(|v| c * v).collect(),
                    t: ch.t.iter().map(|v| c * v).collect(),
                })
                .collect(),
        }
    }
}

fn check_point(x: f64, t: f64) -> Result<()> {
    if !x.is_finite() || !t.is_finite() {
        return Err(Error::NonFiniteInput(format!("point ({x}, {t})")));
    }
    Ok(())
}

/// Taylor coefficients of every network output along `axis` at `point`, the
/// other coordinate held fixed.
pub fn propagate_jet(
    params: &ParamVector,
    arch: &NetArch,
    point: (f64, f64),
    axis: Axis,
    order: usize,
) -> Result<Vec<Jet>> {
    let layout = JetLayout::single(axis, order)?;
    let buf = evaluate_jets(params, arch, &[point], layout)?;
    Ok((0..buf.width)
        .map(|c| Jet {
            coeffs: (0..=order)
                .map(|k| buf.coeff(layout.block(axis, k).unwrap(), 0, c))
                .collect(),
        })
        .collect())
}

/// Runs the network over a batch of points without recording gradients and
/// returns the output jet buffer.
pub fn evaluate_jets(
    params: &ParamVector,
    arch: &NetArch,
    points: &[(f64, f64)],
    layout: JetLayout,
) -> Result<JetBuf> {
    arch.check_params(params)?;
    for &(x, t) in points {
        check_point(x, t)?;
    }
    let mut tape = Tape::new();
    let p = tape.constant(params.as_slice().to_vec());
    let input = tape.jet_constant(net::input_jet(arch, points, layout));
    let out = net::forward_jet(&mut tape, p, arch, input);
    tape.check()?;
    Ok(tape.jet(out).clone())
}

/// Derivative bundles for a batch of points from one combined jet pass.
pub fn deriv_bundles(
    params: &ParamVector,
    arch: &NetArch,
    points: &[(f64, f64)],
    layout: JetLayout,
) -> Result<Vec<DerivBundle>> {
    let buf = evaluate_jets(params, arch, points, layout)?;
    Ok((0..points.len())
        .map(|n| DerivBundle {
            channels: (0..buf.width)
                .map(|c| ChannelDerivs {
                    x: (0..=layout.x_order)
                        .map(|k| factorial(k) * buf.coeff(layout.block(Axis::X, k).unwrap(), n, c))
                        .collect(),
                    t: (0..=layout.t_order)
                        .map(|k| factorial(k) * buf.coeff(layout.block(Axis::T, k).unwrap(), n, c))
                        .collect(),
                })
                .collect(),
        })
        .collect())
}

/// Value and exact reverse-accumulated gradient of a scalar loss built on a
/// tape from the parameter leaf.
pub fn loss_gradient<F>(params: &[f64], loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(params.to_vec());
    let out = loss(&mut tape, leaf)?;
    tape.check()?;
    let value = tape.scalar(out);
    let grads = tape.backward(out);
    Ok((value, grads.into_flat(&tape, leaf)))
}

/// Records `v` as a constant for reverse accumulation; the forward value is
/// unchanged.
pub fn stop_gradient(tape: &mut Tape, v: Var) -> Var {
    tape.stop_gradient(v)
}
