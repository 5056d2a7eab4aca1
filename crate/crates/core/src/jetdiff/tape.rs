//! Reverse-accumulation tape over flat vectors and batched Taylor jets.

use super::kernels::{gemm, tanh_jet_backward, tanh_jet_forward};
use super::JetLayout;
use crate::error::{Error, Result};

/// Handle to a flat (vector or scalar) node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Handle to a batched jet node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JetVar(pub(crate) usize);

/// Batched jet storage, block-major (see `kernels`).
#[derive(Debug, Clone)]
pub struct JetBuf {
    pub layout: JetLayout,
    pub batch: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl JetBuf {
    pub fn zeros(layout: JetLayout, batch: usize, width: usize) -> Self {
        JetBuf {
            layout,
            batch,
            width,
            data: vec![0.0; layout.blocks() * batch * width],
        }
    }

    /// Raw Taylor coefficient stored in `block` for point `n`, unit `j`.
    pub fn coeff(&self, block: usize, n: usize, j: usize) -> f64 {
        self.data[(block * self.batch + n) * self.width + j]
    }

    pub fn set(&mut self, block: usize, n: usize, j: usize, v: f64) {
        self.data[(block * self.batch + n) * self.width + j] = v;
    }
}

/// One term of a linear read-out from a jet: `weight * coeff(block, channel)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetTerm {
    pub block: usize,
    pub channel: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
enum Value {
    Flat(Vec<f64>),
    Jet(JetBuf),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Affine {
        input: usize,
        params: usize,
        w_off: usize,
        b_off: usize,
    },
    TanhJet {
        input: usize,
        s: Vec<f64>,
    },
    JetLinear {
        input: usize,
        terms: Vec<JetTerm>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulScalar(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Square(usize),
    Exp(usize),
    Tanh(usize),
    Sum(usize),
    Mean(usize),
    Dot(usize, usize),
    SegmentMean(usize, Vec<usize>),
    ExclusiveCumsum(usize),
    Slice(usize, usize),
    StopGradient,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Affine { .. } => "affine",
            Op::TanhJet { .. } => "tanh_jet",
            Op::JetLinear { .. } => "jet_linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulScalar(..) => "mul_scalar",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Square(..) => "square",
            Op::Exp(..) => "exp",
            Op::Tanh(..) => "tanh",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Dot(..) => "dot",
            Op::SegmentMean(..) => "segment_mean",
            Op::ExclusiveCumsum(..) => "exclusive_cumsum",
            Op::Slice(..) => "slice",
            Op::StopGradient => "stop_gradient",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
    requires_grad: bool,
}

/// Records operations in evaluation order; `backward` replays them in reverse.
///
/// Every recorded value is checked for finiteness; the first offending
/// operation is remembered and surfaced by [`Tape::check`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(usize, &'static str)>,
}

/// Adjoints produced by a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Value>>,
}

impl Gradients {
    /// Adjoint of a flat node; zeros if nothing flowed into it.
    pub fn flat(&self, tape: &Tape, v: Var) -> Vec<f64> {
        match &self.adj[v.0] {
            Some(Value::Flat(g)) => g.clone(),
            _ => vec![0.0; tape.len_of(v)],
        }
    }

    pub fn into_flat(mut self, tape: &Tape, v: Var) -> Vec<f64> {
        match self.adj[v.0].take() {
            Some(Value::Flat(g)) => g,
            _ => vec![0.0; tape.len_of(v)],
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fails with the first operation that produced a non-finite value.
    pub fn check(&self) -> Result<()> {
        match self.fault {
            Some((index, op)) => Err(Error::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Value, requires_grad: bool) -> usize {
        let index = self.nodes.len();
        if self.fault.is_none() {
            let data = match &value {
                Value::Flat(v) => v.as_slice(),
                Value::Jet(j) => j.data.as_slice(),
            };
            // x * 0 is NaN exactly when x is not finite; the sum vectorizes.
            let finite = !data.iter().map(|x| x * 0.0).sum::<f64>().is_nan();
            if !finite {
                self.fault = Some((index, op.name()));
            }
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        index
    }

    fn flat(&self, i: usize) -> &[f64] {
        match &self.nodes[i].value {
            Value::Flat(v) => v,
            Value::Jet(_) => unreachable!("jet node used as flat"),
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.flat(v.0)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.flat(v.0)[0]
    }

    pub fn jet(&self, v: JetVar) -> &JetBuf {
        match &self.nodes[v.0].value {
            Value::Jet(j) => j,
            Value::Flat(_) => unreachable!("flat node used as jet"),
        }
    }

    fn len_of(&self, v: Var) -> usize {
        self.flat(v.0).len()
    }

    /// Differentiable input (e.g. the flat parameter vector).
    pub fn leaf(&mut self, values: Vec<f64>) -> Var {
        Var(self.push(Op::Leaf, Value::Flat(values), true))
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        Var(self.push(Op::Constant, Value::Flat(values), false))
    }

    /// Constant (non-differentiable) jet, e.g. seeded input coordinates.
    pub fn jet_constant(&mut self, buf: JetBuf) -> JetVar {
        JetVar(self.push(Op::Constant, Value::Jet(buf), false))
    }

    /// `out = input * W^T + b`, with `W` (`fan_out x fan_in`, row-major) and
    /// `b` read from `params` at the given offsets. The bias shifts only the
    /// value block; derivative coefficients are purely linear.
    pub fn affine(&mut self, input: JetVar, params: Var, w_off: usize, b_off: usize, fan_out: usize) -> JetVar {
        let inp = self.jet(input);
        let (layout, batch, fan_in) = (inp.layout, inp.batch, inp.width);
        let rows = layout.blocks() * batch;
        let mut out = JetBuf::zeros(layout, batch, fan_out);
        let p = self.flat(params.0);
        let w = &p[w_off..w_off + fan_out * fan_in];
        let b = &p[b_off..b_off + fan_out];
        gemm(rows, fan_in, fan_out, 1.0, &inp.data, fan_in, 1, w, 1, fan_in, 0.0, &mut out.data, fan_out);
        for n in 0..batch {
            let r = &mut out.data[n * fan_out..(n + 1) * fan_out];
            r.iter_mut().zip(b).for_each(|(o, bj)| *o += bj);
        }
        let rg = self.rg(input.0) || self.rg(params.0);
        JetVar(self.push(
            Op::Affine {
                input: input.0,
                params: params.0,
                w_off,
                b_off,
            },
            Value::Jet(out),
            rg,
        ))
    }

    pub fn tanh_jet(&mut self, input: JetVar) -> JetVar {
        let inp = self.jet(input);
        let (layout, batch, width) = (inp.layout, inp.batch, inp.width);
        let mut y = JetBuf::zeros(layout, batch, width);
        let mut s = vec![0.0; y.data.len()];
        tanh_jet_forward(&inp.data, &mut y.data, &mut s, &layout.axes(), batch, width);
        let rg = self.rg(input.0);
        JetVar(self.push(Op::TanhJet { input: input.0, s }, Value::Jet(y), rg))
    }

    /// Per point `n`: `sum_terms weight * coeff(block, n, channel)`.
    pub fn jet_linear(&mut self, input: JetVar, terms: Vec<JetTerm>) -> Var {
        let inp = self.jet(input);
        let out: Vec<f64> = (0..inp.batch)
            .map(|n| terms.iter().map(|t| t.weight * inp.coeff(t.block, n, t.channel)).sum())
            .collect();
        let rg = self.rg(input.0);
        Var(self.push(Op::JetLinear { input: input.0, terms }, Value::Flat(out), rg))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.flat(a.0), self.flat(b.0));
        assert_eq!(x.len(), y.len(), "{}: length mismatch", op.name());
        let out = x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect();
        let rg = self.rg(a.0) || self.rg(b.0);
        Var(self.push(op, Value::Flat(out), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.flat(a.0).iter().map(|x| f(*x)).collect();
        let rg = self.rg(a.0);
        Var(self.push(op, Value::Flat(out), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p + q, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p - q, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p * q, Op::Mul(a.0, b.0))
    }

    /// Vector `a` times scalar node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.len_of(s), 1, "mul_scalar: rhs must be a scalar");
        let k = self.scalar(s);
        let out = self.flat(a.0).iter().map(|x| x * k).collect();
        let rg = self.rg(a.0) || self.rg(s.0);
        Var(self.push(Op::MulScalar(a.0, s.0), Value::Flat(out), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    /// `a + c` elementwise with a constant vector.
    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Var {
        let x = self.flat(a.0);
        assert_eq!(x.len(), c.len(), "add_const: length mismatch");
        let out = x.iter().zip(c).map(|(p, q)| p + q).collect();
        let rg = self.rg(a.0);
        Var(self.push(Op::AddConst(a.0), Value::Flat(out), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.flat(a.0).iter().sum();
        let rg = self.rg(a.0);
        Var(self.push(Op::Sum(a.0), Value::Flat(vec![s]), rg))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.flat(a.0);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let rg = self.rg(a.0);
        Var(self.push(Op::Mean(a.0), Value::Flat(vec![m]), rg))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.flat(a.0), self.flat(b.0));
        assert_eq!(x.len(), y.len(), "dot: length mismatch");
        let d = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let rg = self.rg(a.0) || self.rg(b.0);
        Var(self.push(Op::Dot(a.0, b.0), Value::Flat(vec![d]), rg))
    }

    /// Means over contiguous segments; `bounds` are the segment start
    /// offsets followed by the total length.
    pub fn segment_mean(&mut self, a: Var, bounds: Vec<usize>) -> Var {
        let x = self.flat(a.0);
        assert_eq!(*bounds.last().expect("segment bounds"), x.len());
        let out = bounds
            .windows(2)
            .map(|w| x[w[0]..w[1]].iter().sum::<f64>() / (w[1] - w[0]) as f64)
            .collect();
        let rg = self.rg(a.0);
        Var(self.push(Op::SegmentMean(a.0, bounds), Value::Flat(out), rg))
    }

    /// `out[i] = sum_{k<i} a[k]` (so `out[0] = 0`).
    pub fn exclusive_cumsum(&mut self, a: Var) -> Var {
        let mut acc = 0.0;
        let out = self
            .flat(a.0)
            .iter()
            .map(|x| {
                let prev = acc;
                acc += x;
                prev
            })
            .collect();
        let rg = self.rg(a.0);
        Var(self.push(Op::ExclusiveCumsum(a.0), Value::Flat(out), rg))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.flat(a.0)[start..start + len].to_vec();
        let rg = self.rg(a.0);
        Var(self.push(Op::Slice(a.0, start), Value::Flat(out), rg))
    }

    /// Same value; reverse accumulation treats it as a constant.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.flat(a.0).to_vec();
        Var(self.push(Op::StopGradient, Value::Flat(out), false))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.len_of(output), 1, "backward: output must be scalar");
        self.backward_seeded(&[(output, vec![1.0])])
    }

    /// Reverse sweep from several outputs with explicit output adjoints.
    pub fn backward_seeded(&self, seeds: &[(Var, Vec<f64>)]) -> Gradients {
        let mut adj: Vec<Option<Value>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, s) in seeds {
            assert_eq!(s.len(), self.len_of(*v), "seed length mismatch");
            accumulate_flat(&mut adj[v.0], s.len(), |g| {
                g.iter_mut().zip(s).for_each(|(a, b)| *a += b)
            });
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Gradients { adj }
    }

    fn propagate(&self, i: usize, g: &Value, adj: &mut [Option<Value>]) {
        let node = &self.nodes[i];
        match (&node.op, g) {
            (Op::Leaf | Op::Constant | Op::StopGradient, _) => {}
            (Op::Affine { input, params, w_off, b_off }, Value::Jet(dz)) => {
                let inp = self.jet(JetVar(*input));
                let (fan_in, fan_out) = (inp.width, dz.width);
                let rows = inp.layout.blocks() * inp.batch;
                if self.rg(*params) {
                    let plen = self.flat(*params).len();
                    accumulate_flat(&mut adj[*params], plen, |gp| {
                        let dw = &mut gp[*w_off..*w_off + fan_out * fan_in];
                        // dW += dZ^T A
                        gemm(fan_out, rows, fan_in, 1.0, &dz.data, 1, fan_out, &inp.data, fan_in, 1, 1.0, dw, fan_in);
                        let db = &mut gp[*b_off..*b_off + fan_out];
                        for n in 0..inp.batch {
                            let r = &dz.data[n * fan_out..(n + 1) * fan_out];
                            db.iter_mut().zip(r).for_each(|(d, x)| *d += x);
                        }
                    });
                }
                if self.rg(*input) {
                    let p = self.flat(*params);
                    let w = &p[*w_off..*w_off + fan_out * fan_in];
                    accumulate_jet(&mut adj[*input], inp, |da| {
                        // dA += dZ W
                        gemm(rows, fan_out, fan_in, 1.0, &dz.data, fan_out, 1, w, fan_in, 1, 1.0, da, fan_in);
                    });
                }
            }
            (Op::TanhJet { input, s }, Value::Jet(dy)) => {
                let inp = self.jet(JetVar(*input));
                let y = match &node.value {
                    Value::Jet(y) => y,
                    Value::Flat(_) => unreachable!(),
                };
                accumulate_jet(&mut adj[*input], inp, |dz| {
                    tanh_jet_backward(&inp.data, &y.data, s, &dy.data, dz, &inp.layout.axes(), inp.batch, inp.width);
                });
            }
            (Op::JetLinear { input, terms }, Value::Flat(g)) => {
                let inp = self.jet(JetVar(*input));
                accumulate_jet(&mut adj[*input], inp, |da| {
                    for (n, gn) in g.iter().enumerate() {
                        for t in terms {
                            da[(t.block * inp.batch + n) * inp.width + t.channel] += t.weight * gn;
                        }
                    }
                });
            }
            (op, Value::Flat(g)) => self.propagate_flat(op, g, adj),
            (op, Value::Jet(_)) => unreachable!("jet adjoint reached flat op {}", op.name()),
        }
    }

    fn propagate_flat(&self, op: &Op, g: &[f64], adj: &mut [Option<Value>]) {
        let give = |adj: &mut [Option<Value>], target: usize, f: &dyn Fn(usize) -> f64| {
            if self.rg(target) {
                let len = self.flat(target).len();
                accumulate_flat(&mut adj[target], len, |d| {
                    d.iter_mut().enumerate().for_each(|(k, dk)| *dk += f(k))
                });
            }
        };
        match op {
            Op::Add(a, b) => {
                give(adj, *a, &|k| g[k]);
                give(adj, *b, &|k| g[k]);
            }
            Op::Sub(a, b) => {
                give(adj, *a, &|k| g[k]);
                give(adj, *b, &|k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.flat(*a), self.flat(*b));
                give(adj, *a, &|k| g[k] * y[k]);
                give(adj, *b, &|k| g[k] * x[k]);
            }
            Op::MulScalar(a, s) => {
                let x = self.flat(*a);
                let c = self.flat(*s)[0];
                give(adj, *a, &|k| g[k] * c);
                let total: f64 = g.iter().zip(x).map(|(p, q)| p * q).sum();
                give(adj, *s, &|_| total);
            }
            Op::Scale(a, c) => give(adj, *a, &|k| g[k] * c),
            Op::AddConst(a) => give(adj, *a, &|k| g[k]),
            Op::Square(a) => {
                let x = self.flat(*a);
                give(adj, *a, &|k| 2.0 * x[k] * g[k]);
            }
            Op::Exp(a) => {
                let x = self.flat(*a);
                give(adj, *a, &|k| x[k].exp() * g[k]);
            }
            Op::Tanh(a) => {
                let x = self.flat(*a);
                give(adj, *a, &|k| {
                    let t = x[k].tanh();
                    (1.0 - t * t) * g[k]
                });
            }
            Op::Sum(a) => give(adj, *a, &|_| g[0]),
            Op::Mean(a) => {
                let n = self.flat(*a).len() as f64;
                give(adj, *a, &|_| g[0] / n);
            }
            Op::Dot(a, b) => {
                let (x, y) = (self.flat(*a), self.flat(*b));
                give(adj, *a, &|k| g[0] * y[k]);
                give(adj, *b, &|k| g[0] * x[k]);
            }
            Op::SegmentMean(a, bounds) => {
                let mut per = vec![0.0; *bounds.last().unwrap()];
                for (s, w) in bounds.windows(2).enumerate() {
                    let v = g[s] / (w[1] - w[0]) as f64;
                    per[w[0]..w[1]].iter_mut().for_each(|p| *p = v);
                }
                give(adj, *a, &|k| per[k]);
            }
            Op::ExclusiveCumsum(a) => {
                // d out[i] / d a[k] = 1 for k < i
                let mut suffix = vec![0.0; g.len()];
                let mut acc = 0.0;
                for k in (0..g.len()).rev() {
                    suffix[k] = acc;
                    acc += g[k];
                }
                give(adj, *a, &|k| suffix[k]);
            }
            Op::Slice(a, start) => {
                let (s, len) = (*start, g.len());
                give(adj, *a, &|k| if k >= s && k < s + len { g[k - s] } else { 0.0 });
            }
            other => unreachable!("flat adjoint reached {}", other.name()),
        }
    }
}

fn accumulate_flat(slot: &mut Option<Value>, len: usize, f: impl FnOnce(&mut [f64])) {
    if slot.is_none() {
        *slot = Some(Value::Flat(vec![0.0; len]));
    }
    match slot {
        Some(Value::Flat(v)) => f(v),
        _ => unreachable!(),
    }
}

fn accumulate_jet(slot: &mut Option<Value>, like: &JetBuf, f: impl FnOnce(&mut [f64])) {
    if slot.is_none() {
        *slot = Some(Value::Jet(JetBuf::zeros(like.layout, like.batch, like.width)));
    }
    match slot {
        Some(Value::Jet(j)) => f(&mut j.data),
        _ => unreachable!(),
    }
}
