//! Finite-difference oracle for input derivatives and loss gradients.
//!
//! The network is re-evaluated here by a plain scalar forward pass in
//! double-double arithmetic, sharing no code with [`crate::jetdiff`], so
//! central differences keep many more correct digits than the quantities
//! they are compared against.

mod dd;

pub use dd::Dd;

use rayon::prelude::*;

use crate::beams::BeamProblem;
use crate::error::{Error, Result};
use crate::jetdiff::{self, factorial, Axis, JetLayout};
use crate::loss::{self, LossData, LossMode, LossSpec};
use crate::net::{NetArch, ParamVector};

/// Truncated series along x and along t sharing the value:
/// `[v, x1, x2, x3, x4, t1, t2]`, as Taylor coefficients.
type Series = [Dd; 7];

const ZERO_SERIES: Series = [Dd::ZERO; 7];

fn slot(axis: Axis, order: usize) -> usize {
    match (axis, order) {
        (_, 0) => 0,
        (Axis::X, k) => k,
        (Axis::T, k) => 4 + k,
    }
}

/// Gradient finite-difference step.
const GRAD_STEP: f64 = 1e-10;
/// Input finite-difference base step; halved once for the extrapolation.
const DERIV_STEP: f64 = 1e-3;
/// Reference magnitudes below this are compared absolutely.
const REL_FLOOR: f64 = 1e-8;

fn tanh_series(z: &Series) -> Series {
    series_from(z, z[0].tanh())
}

/// `tanh_series(z)` for `z` near a base point whose value and tanh are known.
fn tanh_series_near(z: &Series, base_z: Dd, base_y: Dd) -> Series {
    series_from(z, Dd::tanh_shifted(base_z, base_y, z[0] - base_z))
}

/// Series of `tanh(z)` given its value `y0`.
fn series_from(z: &Series, y0: Dd) -> Series {
    let s0 = Dd::ONE - y0.sqr();
    let mut out = ZERO_SERIES;
    out[0] = y0;
    // y' = s z' with s = 1 - y^2, coefficient by coefficient:
    // k y_k = sum_j j z_j s_{k-j},  s_k = -sum_j y_j y_{k-j}
    for idx in [&[0usize, 1, 2, 3, 4][..], &[0, 5, 6]] {
        let n = idx.len();
        let mut jz = [Dd::ZERO; 5];
        for j in 1..n {
            jz[j] = match j {
                3 => z[idx[j]].mul_f64(3.0),
                _ => z[idx[j]].pow2(j as i32 / 2),
            };
        }
        let mut y = [Dd::ZERO; 5];
        let mut s = [Dd::ZERO; 5];
        y[0] = y0;
        s[0] = s0;
        for k in 1..n {
            let mut acc = Dd::ZERO;
            for j in 1..=k {
                acc = acc.mul_acc(jz[j], s[k - j]);
            }
            y[k] = match k {
                3 => acc.div_f64(3.0),
                _ => acc.pow2(-(k as i32 / 2)),
            };
            let mut half = Dd::ZERO;
            for j in 0..(k + 1) / 2 {
                half = half.mul_acc(y[j], y[k - j]);
            }
            let mut sk = -half.pow2(1);
            if k % 2 == 0 {
                sk = sk.mul_acc(-y[k / 2], y[k / 2]);
            }
            s[k] = sk;
            out[idx[k]] = y[k];
        }
    }
    out
}

fn axpy(y: &mut Series, a: Dd, x: &Series) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = yi.mul_acc(a, *xi);
    }
}

struct DdLayer {
    fan_in: usize,
    fan_out: usize,
    w: Vec<Dd>,
    b: Vec<Dd>,
}

impl DdLayer {
    fn affine(&self, h: &[Series]) -> Vec<Series> {
        (0..self.fan_out)
            .map(|r| {
                let mut z = ZERO_SERIES;
                z[0] = self.b[r];
                for (j, hj) in h.iter().enumerate() {
                    axpy(&mut z, self.w[r * self.fan_in + j], hj);
                }
                z
            })
            .collect()
    }
}

/// Position of one parameter: layer, output row, and input column (`None`
/// for the bias).
#[derive(Debug, Clone, Copy)]
struct ParamLoc {
    layer: usize,
    row: usize,
    col: Option<usize>,
}

/// Every pre-activation (`z`) and activation (`h`, with `h[0]` the input)
/// of one point.
struct Trace {
    h: Vec<Vec<Series>>,
    z: Vec<Vec<Series>>,
}

/// A tanh network evaluated in double-double arithmetic.
pub struct DdNet {
    arch: NetArch,
    layers: Vec<DdLayer>,
}

impl DdNet {
    pub fn new(arch: &NetArch, params: &ParamVector) -> Result<Self> {
        arch.check_params(params)?;
        let p = params.as_slice();
        let layers = arch
            .layers()
            .iter()
            .map(|l| DdLayer {
                fan_in: l.fan_in,
                fan_out: l.fan_out,
                w: p[l.w_off..l.b_off].iter().map(|&v| Dd::new(v)).collect(),
                b: p[l.b_off..l.b_off + l.fan_out].iter().map(|&v| Dd::new(v)).collect(),
            })
            .collect();
        Ok(DdNet {
            arch: arch.clone(),
            layers,
        })
    }

    /// Outputs at a physical point; the input map is applied in double-double.
    pub fn value(&self, x: Dd, t: Dd) -> Vec<Dd> {
        let m = self.arch.input_map;
        let mut h = vec![
            (x - Dd::new(m.x_shift)).mul_f64(m.x_scale),
            (t - Dd::new(m.t_shift)).mul_f64(m.t_scale),
        ];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = (0..l.fan_out)
                .map(|r| {
                    let mut z = l.b[r];
                    for (j, hj) in h.iter().enumerate() {
                        z += l.w[r * l.fan_in + j] * *hj;
                    }
                    if i < last {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        h
    }

    /// Output series at `(x, t)`; the mapped input is rounded to f64 exactly
    /// as the training network rounds it.
    fn trace(&self, x: f64, t: f64) -> Trace {
        let m = self.arch.input_map;
        let mut hx = ZERO_SERIES;
        hx[0] = Dd::new((x - m.x_shift) * m.x_scale);
        hx[slot(Axis::X, 1)] = Dd::new(m.x_scale);
        let mut ht = ZERO_SERIES;
        ht[0] = Dd::new((t - m.t_shift) * m.t_scale);
        ht[slot(Axis::T, 1)] = Dd::new(m.t_scale);
        let mut h = vec![vec![hx, ht]];
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let zi = l.affine(h.last().unwrap());
            if i < last {
                h.push(zi.iter().map(tanh_series).collect());
            }
            z.push(zi);
        }
        Trace { h, z }
    }

    fn locate(&self, mut p: usize) -> ParamLoc {
        for (layer, l) in self.layers.iter().enumerate() {
            let nw = l.fan_in * l.fan_out;
            if p < nw {
                return ParamLoc {
                    layer,
                    row: p / l.fan_in,
                    col: Some(p % l.fan_in),
                };
            }
            p -= nw;
            if p < l.fan_out {
                return ParamLoc { layer, row: p, col: None };
            }
            p -= l.fan_out;
        }
        unreachable!("parameter index checked by the caller")
    }

    /// Output series with one parameter shifted by `delta`, reusing the
    /// unaffected parts of `tr`.
    fn perturbed(&self, tr: &Trace, loc: ParamLoc, delta: Dd) -> Vec<Series> {
        let last = self.layers.len() - 1;
        let mut dz = ZERO_SERIES;
        match loc.col {
            Some(j) => axpy(&mut dz, delta, &tr.h[loc.layer][j]),
            None => dz[0] = delta,
        }
        let mut zi = tr.z[loc.layer][loc.row];
        for (a, b) in zi.iter_mut().zip(&dz) {
            *a += *b;
        }
        if loc.layer == last {
            let mut out = tr.z[last].clone();
            out[loc.row] = zi;
            return out;
        }
        let old = &tr.h[loc.layer + 1][loc.row];
        let hi = tanh_series_near(&zi, tr.z[loc.layer][loc.row][0], old[0]);
        let mut dh = ZERO_SERIES;
        for k in 0..7 {
            dh[k] = hi[k] - old[k];
        }
        let next = &self.layers[loc.layer + 1];
        let mut z = tr.z[loc.layer + 1].clone();
        for (r, zr) in z.iter_mut().enumerate() {
            axpy(zr, next.w[r * next.fan_in + loc.row], &dh);
        }
        for l in loc.layer + 2..=last {
            let (bz, bh) = (&tr.z[l - 1], &tr.h[l]);
            let h: Vec<Series> = z
                .iter()
                .enumerate()
                .map(|(r, zr)| tanh_series_near(zr, bz[r][0], bh[r][0]))
                .collect();
            z = self.layers[l].affine(&h);
        }
        z
    }
}

/// Richardson-extrapolated central difference of output `channel`, order
/// 1 to 4 along `axis`, at a physical point.
pub fn fd_derivative(net: &DdNet, point: (f64, f64), channel: usize, axis: Axis, order: usize) -> Result<f64> {
    if !(1..=4).contains(&order) {
        return Err(Error::OrderOutOfRange {
            axis: axis.name(),
            order,
            max: 4,
        });
    }
    let f = |h: f64, k: f64| {
        let d = Dd::new(h).mul_f64(k);
        let (x, t) = match axis {
            Axis::X => (Dd::new(point.0) + d, Dd::new(point.1)),
            Axis::T => (Dd::new(point.0), Dd::new(point.1) + d),
        };
        net.value(x, t)[channel]
    };
    let central = |h: f64| {
        let num = match order {
            1 => f(h, 1.0) - f(h, -1.0),
            2 => f(h, 1.0) - f(h, 0.0).mul_f64(2.0) + f(h, -1.0),
            3 => f(h, 2.0) - f(h, 1.0).mul_f64(2.0) + f(h, -1.0).mul_f64(2.0) - f(h, -2.0),
            _ => f(h, 2.0) - f(h, 1.0).mul_f64(4.0) + f(h, 0.0).mul_f64(6.0) - f(h, -1.0).mul_f64(4.0) + f(h, -2.0),
        };
        let den = if order % 2 == 1 { 2.0 } else { 1.0 };
        num / Dd::new(h).powi(order).mul_f64(den)
    };
    let (coarse, fine) = (central(DERIV_STEP), central(0.5 * DERIV_STEP));
    Ok(((fine.mul_f64(4.0) - coarse).div_f64(3.0)).to_f64())
}

fn rel_err(got: f64, reference: f64) -> f64 {
    (got - reference).abs() / reference.abs().max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivCheck {
    /// Worst relative error per x-order 1..=4.
    pub x: [f64; 4],
    /// Worst relative error per t-order 1..=2.
    pub t: [f64; 2],
    pub points: usize,
}

impl DerivCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.x.iter().chain(&self.t).copied().fold(0.0, f64::max)
    }
}

/// Compares jet derivatives of every output with the extrapolated finite
/// differences at `points`.
pub fn derivative_check(arch: &NetArch, params: &ParamVector, points: &[(f64, f64)]) -> Result<DerivCheck> {
    let net = DdNet::new(arch, params)?;
    let bundles = jetdiff::deriv_bundles(params, arch, points, JetLayout::new(4, 2)?)?;
    let mut out = DerivCheck {
        x: [0.0; 4],
        t: [0.0; 2],
        points: points.len(),
    };
    for (&p, b) in points.iter().zip(&bundles) {
        for c in 0..arch.outputs() {
            for k in 1..=4 {
                let e = rel_err(b.get(c, Axis::X, k)?, fd_derivative(&net, p, c, Axis::X, k)?);
                out.x[k - 1] = out.x[k - 1].max(e);
            }
            for k in 1..=2 {
                let e = rel_err(b.get(c, Axis::T, k)?, fd_derivative(&net, p, c, Axis::T, k)?);
                out.t[k - 1] = out.t[k - 1].max(e);
            }
        }
    }
    Ok(out)
}

/// One loss site: a point, its weight in the total, and the linear readouts
/// whose squares it sums.
struct Site {
    x: f64,
    t: f64,
    coef: Dd,
    readouts: Vec<(Vec<(usize, usize, Dd)>, f64)>,
}

impl Site {
    fn error(&self, out: &[Series]) -> Dd {
        let mut e = Dd::ZERO;
        for (terms, offset) in &self.readouts {
            let mut r = -Dd::new(*offset);
            for &(c, s, w) in terms {
                r += w * out[c][s];
            }
            e += r.sqr();
        }
        e
    }
}

fn ratio(num: f64, den: f64) -> Dd {
    Dd::new(num) / Dd::new(den)
}

/// Loss sites of `data`, causal slice weights fixed at `weights`.
fn sites(data: &LossData, spec: &LossSpec, weights: &[f64]) -> Result<Vec<Site>> {
    let p: &BeamProblem = &data.problem;
    let colloc = &data.colloc;
    if weights.len() != colloc.n_t() {
        return Err(Error::Validation(format!(
            "{} slice weights for {} slices",
            weights.len(),
            colloc.n_t()
        )));
    }
    let lam = spec.lambdas;
    let n_t = colloc.n_t() as f64;
    let n_int = colloc.n_int() as f64;
    let term = |c: usize, axis: Axis, k: usize, coef: f64| (c, slot(axis, k), Dd::new(coef).mul_f64(factorial(k)));
    let eqs = p.equations();
    let mut out = Vec::new();
    for (i, s) in colloc.slices.iter().enumerate() {
        let coef = match spec.mode {
            LossMode::Causal => Dd::new(lam.pde) * Dd::new(weights[i]) / Dd::new(n_t * s.xs.len() as f64),
            // fresh self-adaptive multipliers are all one
            LossMode::Vanilla | LossMode::Sa => ratio(lam.pde, n_int),
        };
        for &x in &s.xs {
            let readouts = eqs
                .iter()
                .map(|e| {
                    let terms = e.terms.iter().map(|r| term(r.channel, r.axis, r.order, r.coef)).collect();
                    (terms, e.forcing.map_or(0.0, |f| f.eval(x, s.t)))
                })
                .collect();
            out.push(Site { x, t: s.t, coef, readouts });
        }
    }
    let coef = ratio(lam.ic, colloc.ic_xs.len() as f64);
    for (n, &x) in colloc.ic_xs.iter().enumerate() {
        let mut readouts = Vec::new();
        for c in 0..p.channels() {
            readouts.push((vec![term(c, Axis::T, 0, 1.0)], data.ic_targets.disp[c][n]));
            readouts.push((vec![term(c, Axis::T, 1, 1.0)], data.ic_targets.vel[c][n]));
        }
        out.push(Site {
            x,
            t: colloc.domain.t_min,
            coef,
            readouts,
        });
    }
    let coef = ratio(lam.bc, colloc.bc_points.len() as f64);
    for b in &colloc.bc_points {
        let readouts = p
            .boundary_targets(b.end, b.t)?
            .into_iter()
            .map(|(c, v)| (vec![term(c.channel, Axis::X, c.order, 1.0)], v))
            .collect();
        out.push(Site {
            x: b.x,
            t: b.t,
            coef,
            readouts,
        });
    }
    Ok(out)
}

/// Total loss in double-double with the slice weights fixed at `weights`.
pub fn reference_loss(params: &ParamVector, arch: &NetArch, data: &LossData, spec: &LossSpec, weights: &[f64]) -> Result<Dd> {
    let net = DdNet::new(arch, params)?;
    let mut total = Dd::ZERO;
    for s in sites(data, spec, weights)? {
        let tr = net.trace(s.x, s.t);
        total += s.coef * s.error(tr.z.last().unwrap());
    }
    Ok(total)
}

/// Central-difference gradient of the total loss, slice weights fixed at
/// `weights`.
pub fn fd_gradient(params: &ParamVector, arch: &NetArch, data: &LossData, spec: &LossSpec, weights: &[f64]) -> Result<Vec<f64>> {
    let net = DdNet::new(arch, params)?;
    let sites = sites(data, spec, weights)?;
    let traces: Vec<Trace> = sites.par_iter().map(|s| net.trace(s.x, s.t)).collect();
    let (up, down) = (Dd::new(GRAD_STEP), Dd::new(-GRAD_STEP));
    Ok((0..params.len())
        .into_par_iter()
        .map(|p| {
            let loc = net.locate(p);
            let mut diff = Dd::ZERO;
            for (s, tr) in sites.iter().zip(&traces) {
                let d = s.error(&net.perturbed(tr, loc, up)) - s.error(&net.perturbed(tr, loc, down));
                diff += s.coef * d;
            }
            diff.div_f64(2.0 * GRAD_STEP).to_f64()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub params: usize,
    /// Components with a reference magnitude above the relative floor.
    pub compared: usize,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub loss: f64,
    pub reference_loss: f64,
}

/// Compares the reverse-accumulated gradient of the total loss with the
/// finite-difference gradient, causal weights frozen at `params`.
pub fn grad_check(params: &ParamVector, arch: &NetArch, data: &LossData, spec: &LossSpec) -> Result<GradCheck> {
    let (b, g) = loss::total_loss_gradient(params, arch, data, spec)?;
    let fd = fd_gradient(params, arch, data, spec, &b.weights)?;
    let reference = reference_loss(params, arch, data, spec, &b.weights)?;
    let mut out = GradCheck {
        params: g.len(),
        compared: 0,
        max_rel_err: 0.0,
        worst_index: None,
        loss: b.total,
        reference_loss: reference.to_f64(),
    };
    for (i, (a, r)) in g.iter().zip(&fd).enumerate() {
        if r.abs() <= REL_FLOOR {
            continue;
        }
        out.compared += 1;
        let e = rel_err(*a, *r);
        if e > out.max_rel_err || out.worst_index.is_none() {
            out.max_rel_err = e;
            out.worst_index = Some(i);
        }
    }
    Ok(out)
}
