//! Composite PINN objective: initial, boundary and PDE terms with vanilla,
//! causal or (simplified) self-adaptive PDE weighting.
//!
//! Evaluation is chunked. Interior points are grouped by whole time slices
//! and processed in slice order, so by the time a chunk is reached every
//! earlier slice loss, and therefore its causal weight, is already known.
//! Each chunk's tape is seeded with `dTotal/de = 2 c e` for its readouts `e`
//! and swept backward immediately; chunk gradients are summed in a fixed
//! order, making results independent of anything but the inputs.

use std::fmt;

use crate::beams::{BeamProblem, IcValues};
use crate::colloc::CollocationSet;
use crate::error::{Error, Result};
use crate::jetdiff::{factorial, Axis, JetLayout, JetTerm, Tape, Var};
use crate::net::{self, NetArch, ParamVector};

/// Target number of points per evaluation chunk; small enough that one
/// chunk's jets stay cache resident.
const CHUNK_POINTS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Vanilla,
    Causal,
    /// Simplified self-adaptive baseline: per-point PDE multipliers.
    Sa,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(LossMode::Vanilla),
            "causal" => Ok(LossMode::Causal),
            "sa" => Ok(LossMode::Sa),
            other => Err(Error::Config(format!(
                "unknown mode `{other}`, expected one of vanilla, causal, sa"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Vanilla => "vanilla",
            LossMode::Causal => "causal",
            LossMode::Sa => "sa (simplified)",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(pde, ic, bc)` term weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            pde: 1.0,
            ic: 1.0,
            bc: 1.0,
        }
    }
}

impl Lambdas {
    pub fn validate(&self) -> Result<()> {
        if [self.pde, self.ic, self.bc].iter().all(|l| l.is_finite() && *l > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("lambda components must be positive, got {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CausalConfig {
    pub epsilon: f64,
    pub n_t: usize,
}

impl CausalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.n_t == 0 {
            return Err(Error::Config("N_t must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaConfig {
    pub step: f64,
    pub max: f64,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig { step: 0.1, max: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_pde: f64,
    pub l_ic: f64,
    pub l_bc: f64,
    pub slice_losses: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LossBreakdown {
    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the first slice whose weight is below one half.
    pub fn first_unresolved(&self) -> Option<usize> {
        self.weights.iter().position(|w| *w < 0.5)
    }
}

/// Per-slice losses and the causal weights derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalState {
    pub slice_losses: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `w_i = exp(-epsilon * sum_{k<i} L_k)`; the running sum is accumulated in
/// slice order.
pub fn causal_weights(slice_losses: &[f64], epsilon: f64) -> Vec<f64> {
    let mut acc = 0.0;
    slice_losses
        .iter()
        .map(|l| {
            let w = (-epsilon * acc).exp();
            acc += l;
            w
        })
        .collect()
}

/// One step of the self-adaptive multipliers: `m <- clip(m + step r^2)`.
pub fn sa_update(weights: &[f64], residuals: &[f64], step: f64, max: f64) -> Result<Vec<f64>> {
    if weights.len() != residuals.len() {
        return Err(Error::Validation(format!(
            "sa_update: {} multipliers for {} residuals",
            weights.len(),
            residuals.len()
        )));
    }
    Ok(weights
        .iter()
        .zip(residuals)
        .map(|(m, r)| (m + step * r * r).clamp(0.0, max))
        .collect())
}

/// Linear readout `sum weight * coeff - offset[n]` of a chunk's output jet.
#[derive(Debug, Clone)]
struct Readout {
    terms: Vec<JetTerm>,
    offset: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Role {
    /// Slices `first..first + sizes.len()`, with the given point counts.
    Interior { first: usize, sizes: Vec<usize> },
    /// Initial points, global offset `start`.
    Ic,
    Bc,
}

#[derive(Debug, Clone)]
struct Chunk {
    points: Vec<(f64, f64)>,
    layout: JetLayout,
    readouts: Vec<Readout>,
    role: Role,
    /// Global index of the chunk's first interior point (interior only).
    start: usize,
}

fn readout_terms(layout: JetLayout, items: impl IntoIterator<Item = (usize, Axis, usize, f64)>) -> Vec<JetTerm> {
    items
        .into_iter()
        .map(|(channel, axis, order, coef)| JetTerm {
            block: layout.block(axis, order).expect("layout carries the term"),
            channel,
            weight: coef * factorial(order),
        })
        .collect()
}

/// Everything fixed for a run: problem, collocation set, targets, chunking.
#[derive(Debug, Clone)]
pub struct LossData {
    pub problem: BeamProblem,
    pub colloc: CollocationSet,
    pub ic_targets: IcValues,
    chunks: Vec<Chunk>,
}

impl LossData {
    pub fn new(problem: &BeamProblem, colloc: &CollocationSet) -> Result<Self> {
        if colloc.domain != problem.domain {
            return Err(Error::Validation(format!(
                "collocation domain {} differs from problem domain {}",
                colloc.domain, problem.domain
            )));
        }
        let ic_targets = problem.ic_targets(&colloc.ic_xs);
        let mut chunks = Vec::new();

        let layout = problem.residual_layout();
        let eqs = problem.equations();
        let eq_terms: Vec<Vec<JetTerm>> = eqs
            .iter()
            .map(|e| readout_terms(layout, e.terms.iter().map(|t| (t.channel, t.axis, t.order, t.coef))))
            .collect();
        let mut i = 0;
        let mut start = 0;
        while i < colloc.slices.len() {
            let first = i;
            let mut points = Vec::new();
            let mut sizes = Vec::new();
            while i < colloc.slices.len() && (points.is_empty() || points.len() + colloc.slices[i].xs.len() <= CHUNK_POINTS) {
                let s = &colloc.slices[i];
                points.extend(s.xs.iter().map(|&x| (x, s.t)));
                sizes.push(s.xs.len());
                i += 1;
            }
            let readouts = eqs
                .iter()
                .zip(&eq_terms)
                .map(|(e, terms)| Readout {
                    terms: terms.clone(),
                    offset: points
                        .iter()
                        .map(|&(x, t)| e.forcing.map_or(0.0, |f| f.eval(x, t)))
                        .collect(),
                })
                .collect();
            let n = points.len();
            chunks.push(Chunk {
                points,
                layout,
                readouts,
                role: Role::Interior { first, sizes },
                start,
            });
            start += n;
        }

        // initial data: displacement and velocity mismatch per channel
        let ic_layout = JetLayout::new(0, 1)?;
        let ic_points = colloc.ic_points();
        for (c0, pts) in ic_points.chunks(CHUNK_POINTS).enumerate() {
            let range = c0 * CHUNK_POINTS..c0 * CHUNK_POINTS + pts.len();
            let mut readouts = Vec::new();
            for c in 0..problem.channels() {
                readouts.push(Readout {
                    terms: readout_terms(ic_layout, [(c, Axis::T, 0, 1.0)]),
                    offset: ic_targets.disp[c][range.clone()].to_vec(),
                });
                readouts.push(Readout {
                    terms: readout_terms(ic_layout, [(c, Axis::T, 1, 1.0)]),
                    offset: ic_targets.vel[c][range.clone()].to_vec(),
                });
            }
            chunks.push(Chunk {
                points: pts.to_vec(),
                layout: ic_layout,
                readouts,
                role: Role::Ic,
                start: 0,
            });
        }

        let bc_layout = problem.bc_layout();
        let constraints = problem.bc_constraints();
        for pts in colloc.bc_points.chunks(CHUNK_POINTS) {
            let targets: Vec<Vec<f64>> = pts
                .iter()
                .map(|p| {
                    problem
                        .boundary_targets(p.end, p.t)
                        .map(|v| v.into_iter().map(|(_, t)| t).collect())
                })
                .collect::<Result<_>>()?;
            let readouts = constraints
                .iter()
                .enumerate()
                .map(|(j, c)| Readout {
                    terms: readout_terms(bc_layout, [(c.channel, Axis::X, c.order, 1.0)]),
                    offset: targets.iter().map(|t| t[j]).collect(),
                })
                .collect();
            chunks.push(Chunk {
                points: pts.iter().map(|p| (p.x, p.t)).collect(),
                layout: bc_layout,
                readouts,
                role: Role::Bc,
                start: 0,
            });
        }
        Ok(LossData {
            problem: problem.clone(),
            colloc: colloc.clone(),
            ic_targets,
            chunks,
        })
    }

    pub fn n_t(&self) -> usize {
        self.colloc.n_t()
    }

    pub fn n_int(&self) -> usize {
        self.colloc.n_int()
    }

    pub fn n_i(&self) -> usize {
        self.colloc.ic_xs.len()
    }

    pub fn n_b(&self) -> usize {
        self.colloc.bc_points.len()
    }
}

/// How the PDE slice weights are obtained during an evaluation.
#[derive(Debug, Clone, Copy)]
enum WeightSource<'w> {
    /// Computed from the slice losses at the evaluation point.
    Live,
    /// Fixed values (the surrogate used inside a line search).
    Fixed(&'w [f64]),
}

/// Loss configuration shared by every evaluation of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub mode: LossMode,
    pub lambdas: Lambdas,
    pub epsilon: f64,
    pub sa: SaConfig,
}

struct ChunkOut {
    tape: Tape,
    leaf: Var,
    outs: Vec<Var>,
}

fn forward_chunk(params: &[f64], arch: &NetArch, chunk: &Chunk, grad: bool) -> Result<ChunkOut> {
    let mut tape = Tape::new();
    let leaf = if grad {
        tape.leaf(params.to_vec())
    } else {
        tape.constant(params.to_vec())
    };
    let input = tape.jet_constant(net::input_jet(arch, &chunk.points, chunk.layout));
    let y = net::forward_jet(&mut tape, leaf, arch, input);
    let outs = chunk
        .readouts
        .iter()
        .map(|r| {
            let v = tape.jet_linear(y, r.terms.clone());
            let neg: Vec<f64> = r.offset.iter().map(|o| -o).collect();
            tape.add_const(v, &neg)
        })
        .collect();
    tape.check()?;
    Ok(ChunkOut { tape, leaf, outs })
}

/// Result of one full evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub gradient: Option<Vec<f64>>,
    /// `sum_eq r^2` per interior point, in slice order.
    pub point_residuals: Vec<f64>,
}

/// Runs every chunk once. `sa` holds the per-point multipliers in SA mode;
/// when `sa_step` is set they are first advanced with the residuals at this
/// point (chunk by chunk, before the chunk's loss is formed).
fn evaluate(
    params: &[f64],
    arch: &NetArch,
    data: &LossData,
    spec: &LossSpec,
    weights: WeightSource<'_>,
    mut sa: Option<&mut Vec<f64>>,
    sa_step: bool,
    grad: bool,
) -> Result<Evaluation> {
    arch.check_params(&ParamVector::new(params.to_vec()))?;
    if arch.outputs() != data.problem.channels() {
        return Err(Error::ArchMismatch {
            checkpoint: arch.to_string(),
            config: format!("{} output channel(s) for {}", data.problem.channels(), data.problem.id.name()),
        });
    }
    let n_t = data.n_t();
    let (n_int, n_i, n_b) = (data.n_int() as f64, data.n_i() as f64, data.n_b() as f64);
    let lam = spec.lambdas;
    let mut slice_losses = vec![0.0; n_t];
    let mut slice_weights = vec![1.0; n_t];
    let mut point_residuals = vec![0.0; data.n_int()];
    let mut prefix = 0.0;
    let (mut pde_acc, mut ic_acc, mut bc_acc) = (0.0, 0.0, 0.0);
    let mut gradient = grad.then(|| vec![0.0; params.len()]);

    for chunk in &data.chunks {
        let out = forward_chunk(params, arch, chunk, grad)?;
        let vals: Vec<&[f64]> = out.outs.iter().map(|v| out.tape.value(*v)).collect();
        let n = chunk.points.len();
        // dTotal/de = coef[n] * 2 e, one coefficient per point
        let coef: Vec<f64> = match &chunk.role {
            Role::Interior { first, sizes } => {
                let e: Vec<f64> = (0..n).map(|p| vals.iter().map(|v| v[p] * v[p]).sum()).collect();
                point_residuals[chunk.start..chunk.start + n].copy_from_slice(&e);
                if let (Some(m), true) = (sa.as_deref_mut(), sa_step) {
                    let range = chunk.start..chunk.start + n;
                    let r: Vec<f64> = e.iter().map(|v| v.sqrt()).collect();
                    let updated = sa_update(&m[range.clone()], &r, spec.sa.step, spec.sa.max)?;
                    m[range].copy_from_slice(&updated);
                }
                let mut coef = Vec::with_capacity(n);
                let mut off = 0;
                for (j, &size) in sizes.iter().enumerate() {
                    let i = first + j;
                    let seg = &e[off..off + size];
                    let l = seg.iter().sum::<f64>() / size as f64;
                    slice_losses[i] = l;
                    match spec.mode {
                        LossMode::Causal => {
                            let w = match weights {
                                WeightSource::Live => (-spec.epsilon * prefix).exp(),
                                WeightSource::Fixed(ws) => ws[i],
                            };
                            prefix += l;
                            slice_weights[i] = w;
                            pde_acc += w * l;
                            coef.extend(std::iter::repeat_n(lam.pde * w / (n_t as f64 * size as f64), size));
                        }
                        LossMode::Vanilla => {
                            pde_acc += seg.iter().sum::<f64>();
                            coef.extend(std::iter::repeat_n(lam.pde / n_int, size));
                        }
                        LossMode::Sa => {
                            let m = sa.as_deref().expect("SA mode carries multipliers");
                            let ms = &m[chunk.start + off..chunk.start + off + size];
                            pde_acc += ms.iter().zip(seg).map(|(a, b)| a * b).sum::<f64>();
                            coef.extend(ms.iter().map(|mv| lam.pde * mv / n_int));
                        }
                    }
                    off += size;
                }
                coef
            }
            Role::Ic => {
                ic_acc += vals.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
                vec![lam.ic / n_i; n]
            }
            Role::Bc => {
                bc_acc += vals.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
                vec![lam.bc / n_b; n]
            }
        };
        if let Some(g) = gradient.as_mut() {
            let seeds: Vec<(Var, Vec<f64>)> = out
                .outs
                .iter()
                .zip(&vals)
                .map(|(v, e)| (*v, e.iter().zip(&coef).map(|(x, c)| 2.0 * c * x).collect()))
                .collect();
            let gc = out.tape.backward_seeded(&seeds).into_flat(&out.tape, out.leaf);
            g.iter_mut().zip(gc).for_each(|(a, b)| *a += b);
        }
    }

    let l_pde = match spec.mode {
        LossMode::Causal => pde_acc / n_t as f64,
        LossMode::Vanilla | LossMode::Sa => pde_acc / n_int,
    };
    let (l_ic, l_bc) = (ic_acc / n_i, bc_acc / n_b);
    let total = lam.pde * l_pde + lam.ic * l_ic + lam.bc * l_bc;
    if !total.is_finite() {
        return Err(Error::NonFinite { op: "loss total", index: 0 });
    }
    if let Some(g) = &gradient {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "gradient", index: i });
        }
    }
    Ok(Evaluation {
        breakdown: LossBreakdown {
            total,
            l_pde,
            l_ic,
            l_bc,
            slice_losses,
            weights: slice_weights,
        },
        gradient,
        point_residuals,
    })
}

/// Full breakdown at `params`, weights computed at `params` (no gradient).
pub fn total_loss(params: &ParamVector, arch: &NetArch, data: &LossData, spec: &LossSpec) -> Result<LossBreakdown> {
    let mut sa = (spec.mode == LossMode::Sa).then(|| vec![1.0; data.n_int()]);
    Ok(evaluate(params.as_slice(), arch, data, spec, WeightSource::Live, sa.as_mut(), false, false)?.breakdown)
}

/// Value and gradient of the total loss, causal weights frozen at `params`.
pub fn total_loss_gradient(
    params: &ParamVector,
    arch: &NetArch,
    data: &LossData,
    spec: &LossSpec,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut sa = (spec.mode == LossMode::Sa).then(|| vec![1.0; data.n_int()]);
    let ev = evaluate(params.as_slice(), arch, data, spec, WeightSource::Live, sa.as_mut(), false, true)?;
    Ok((ev.breakdown, ev.gradient.expect("gradient requested")))
}

fn vanilla_spec() -> LossSpec {
    LossSpec {
        mode: LossMode::Vanilla,
        lambdas: Lambdas::default(),
        epsilon: 0.0,
        sa: SaConfig::default(),
    }
}

pub fn ic_loss(params: &ParamVector, arch: &NetArch, data: &LossData) -> Result<f64> {
    Ok(total_loss(params, arch, data, &vanilla_spec())?.l_ic)
}

pub fn bc_loss(params: &ParamVector, arch: &NetArch, data: &LossData) -> Result<f64> {
    Ok(total_loss(params, arch, data, &vanilla_spec())?.l_bc)
}

/// Mean squared residual (summed over equations) per slice.
pub fn slice_pde_losses(params: &ParamVector, arch: &NetArch, data: &LossData) -> Result<Vec<f64>> {
    Ok(total_loss(params, arch, data, &vanilla_spec())?.slice_losses)
}

/// Point-weighted mean squared residual over all interior points.
pub fn pde_loss_vanilla(params: &ParamVector, arch: &NetArch, data: &LossData) -> Result<f64> {
    Ok(total_loss(params, arch, data, &vanilla_spec())?.l_pde)
}

/// `(1/N_t) sum_i w_i L_i` with the weights of [`causal_weights`].
pub fn pde_loss_causal(
    params: &ParamVector,
    arch: &NetArch,
    data: &LossData,
    cfg: &CausalConfig,
) -> Result<(f64, CausalState)> {
    if cfg.n_t != data.n_t() {
        return Err(Error::Validation(format!(
            "causal config has N_t = {}, collocation set has {} slices",
            cfg.n_t,
            data.n_t()
        )));
    }
    let spec = LossSpec {
        mode: LossMode::Causal,
        epsilon: cfg.epsilon,
        ..vanilla_spec()
    };
    let b = total_loss(params, arch, data, &spec)?;
    Ok((
        b.l_pde,
        CausalState {
            slice_losses: b.slice_losses,
            weights: b.weights,
        },
    ))
}

/// `(1/N_t) sum_i w_i L_i` from precomputed slice losses.
pub fn causal_pde_from_slices(slice_losses: &[f64], epsilon: f64) -> f64 {
    let w = causal_weights(slice_losses, epsilon);
    w.iter().zip(slice_losses).map(|(w, l)| w * l).sum::<f64>() / slice_losses.len() as f64
}

/// The training objective. `value_and_gradient` evaluates the true loss at a
/// point and anchors the causal weights (and, in SA mode, advances the
/// multipliers) there; `value` evaluates the surrogate with those anchored
/// quantities held fixed, which is what a line search from the anchor needs.
#[derive(Debug, Clone)]
pub struct PinnObjective {
    pub arch: NetArch,
    pub data: LossData,
    pub spec: LossSpec,
    anchor: Vec<f64>,
    sa: Option<Vec<f64>>,
    last: Option<Evaluation>,
}

impl PinnObjective {
    pub fn new(arch: NetArch, data: LossData, spec: LossSpec) -> Result<Self> {
        spec.lambdas.validate()?;
        if spec.mode == LossMode::Causal && !(spec.epsilon.is_finite() && spec.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", spec.epsilon)));
        }
        let sa = (spec.mode == LossMode::Sa).then(|| vec![1.0; data.n_int()]);
        let anchor = vec![1.0; data.n_t()];
        Ok(PinnObjective {
            arch,
            data,
            spec,
            anchor,
            sa,
            last: None,
        })
    }

    /// Breakdown of the most recent `value_and_gradient` call.
    pub fn last_breakdown(&self) -> Option<&LossBreakdown> {
        self.last.as_ref().map(|e| &e.breakdown)
    }

    pub fn last_evaluation(&self) -> Option<&Evaluation> {
        self.last.as_ref()
    }

    pub fn sa_multipliers(&self) -> Option<&[f64]> {
        self.sa.as_deref()
    }

    /// True breakdown at `params` without touching any state.
    pub fn breakdown(&self, params: &[f64]) -> Result<LossBreakdown> {
        let mut sa = self.sa.clone();
        Ok(evaluate(params, &self.arch, &self.data, &self.spec, WeightSource::Live, sa.as_mut(), false, false)?
            .breakdown)
    }
}

impl crate::optim::Objective for PinnObjective {
    fn value(&mut self, params: &[f64]) -> Result<f64> {
        let ev = evaluate(
            params,
            &self.arch,
            &self.data,
            &self.spec,
            WeightSource::Fixed(&self.anchor),
            self.sa.as_mut(),
            false,
            false,
        )?;
        Ok(ev.breakdown.total)
    }

    fn value_and_gradient(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let step = self.spec.mode == LossMode::Sa;
        let mut ev = evaluate(
            params,
            &self.arch,
            &self.data,
            &self.spec,
            WeightSource::Live,
            self.sa.as_mut(),
            step,
            true,
        )?;
        self.anchor.clone_from(&ev.breakdown.weights);
        let g = ev.gradient.take().expect("gradient requested");
        let total = ev.breakdown.total;
        self.last = Some(ev);
        Ok((total, g))
    }
}

#[cfg(test)]
mod tests;
