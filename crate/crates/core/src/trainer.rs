//! Training runs, transfer warm starts, evaluation and experiment sweeps.

mod config;
mod eval;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::{
    ArchConfig, CausalSection, CountsConfig, DomainConfig, EvalConfig, InitConfig, LambdaConfig, OptimizerConfig,
    Profile, ProblemConfig, RunConfig, SaSection,
};
pub use eval::{evaluate, grid_points, EvalGrid, EvalReport, FieldRow, FieldTable};

use crate::beams::{BeamProblem, Domain};
use crate::colloc::{self, CollocationSet};
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossData, PinnObjective};
use crate::net::{self, Checkpoint, NetArch, ParamVector};
use crate::optim::{adam_step, lbfgs_step, AdamState, LbfgsState, Objective};

/// Environment variable naming the directory that holds run directories.
pub const RUN_ROOT_ENV: &str = "BEAMPINN_RUN_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Adam,
    Lbfgs,
}

/// One epoch: the loss breakdown at the iterate the step started from, and
/// what the step did.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub l_pde: f64,
    pub l_ic: f64,
    pub l_bc: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    pub first_unresolved: Option<usize>,
    pub step: StepKind,
    pub accepted: bool,
    /// Line-search objective at the accepted point (causal weights held at
    /// their start-of-step values); the start value when rejected or Adam.
    pub search_value: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub problem: String,
    pub mode: String,
    pub epochs: Vec<EpochLog>,
    /// Breakdown at the final parameters.
    pub final_breakdown: LossBreakdown,
    pub wall_time_s: f64,
    pub t_star: f64,
    /// Relative L² error (percent) per channel at `t_star`.
    pub final_r: Option<Vec<f64>>,
    pub colloc_hash: String,
    /// Id of the parent checkpoint for warm-started runs.
    pub parent: Option<String>,
    /// Per slice, the first epoch whose start-of-step weight exceeded 1/2.
    pub resolved_at: Vec<Option<usize>>,
}

impl RunRecord {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,total,l_pde,l_ic,l_bc,min_weight,max_weight,first_unresolved\n");
        for e in &self.epochs {
            let first = e.first_unresolved.map(|i| i.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{first}",
                e.epoch, e.total, e.l_pde, e.l_ic, e.l_bc, e.min_weight, e.max_weight
            );
        }
        s
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.total)
    }
}

/// The resolved config a checkpoint was trained with, if it records one.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Option<Result<RunConfig>> {
    ckpt.meta.get("config").map(|c| RunConfig::from_json_str(c, &[]))
}

/// First 16 hex digits of SHA-256 over the serialized checkpoint.
pub fn checkpoint_id(ckpt: &Checkpoint) -> Result<String> {
    Ok(hex::encode(Sha256::digest(ckpt.to_bytes()?))[..16].to_string())
}

/// Trains from the initialization named in `cfg.init`.
pub fn train(cfg: &RunConfig) -> Result<(Checkpoint, RunRecord)> {
    cfg.validate()?;
    match &cfg.init {
        InitConfig::Xavier => {
            let problem = cfg.build_problem()?;
            let arch = cfg.build_arch(&problem)?;
            let params = net::init_xavier(&arch, cfg.seed);
            run(cfg, &problem, arch, params, None)
        }
        InitConfig::Checkpoint(path) => {
            let parent = net::load_checkpoint(path)?;
            transfer_train(&parent, cfg)
        }
    }
}

fn check_shape(parent: &NetArch, cfg: &RunConfig, problem: &BeamProblem) -> Result<()> {
    let wanted = cfg.build_arch(problem)?;
    if !parent.same_shape(&wanted) {
        return Err(Error::ArchMismatch {
            checkpoint: parent.to_string(),
            config: wanted.to_string(),
        });
    }
    Ok(())
}

/// Trains starting from the parent's parameters. The child keeps the
/// parent's architecture, input map included.
pub fn transfer_train(parent: &Checkpoint, cfg: &RunConfig) -> Result<(Checkpoint, RunRecord)> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    check_shape(&parent.arch, cfg, &problem)?;
    let id = checkpoint_id(parent)?;
    run(cfg, &problem, parent.arch.clone(), parent.params.clone(), Some(id))
}

/// The "without transfer" control of a warm-started run: identical except
/// that the parameters are a fresh Xavier draw.
pub fn control_train(parent: &Checkpoint, cfg: &RunConfig) -> Result<(Checkpoint, RunRecord)> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    check_shape(&parent.arch, cfg, &problem)?;
    let params = net::init_xavier(&parent.arch, cfg.seed);
    run(cfg, &problem, parent.arch.clone(), params, None)
}

pub fn collocation(cfg: &RunConfig, problem: &BeamProblem) -> Result<CollocationSet> {
    colloc::sample(&problem.domain, cfg.counts(), cfg.colloc_seed(), false)
}

fn t_star(cfg: &RunConfig, problem: &BeamProblem) -> f64 {
    cfg.eval.t_star.unwrap_or(problem.domain.t_max)
}

fn log_row(epoch: usize, b: &LossBreakdown, step: StepKind) -> EpochLog {
    EpochLog {
        epoch,
        total: b.total,
        l_pde: b.l_pde,
        l_ic: b.l_ic,
        l_bc: b.l_bc,
        min_weight: b.min_weight(),
        max_weight: b.max_weight(),
        first_unresolved: b.first_unresolved(),
        step,
        accepted: true,
        search_value: b.total,
        step_length: 0.0,
    }
}

fn run(
    cfg: &RunConfig,
    problem: &BeamProblem,
    arch: NetArch,
    init: ParamVector,
    parent: Option<String>,
) -> Result<(Checkpoint, RunRecord)> {
    let started = Instant::now();
    let colloc = collocation(cfg, problem)?;
    let data = LossData::new(problem, &colloc)?;
    let mut obj = PinnObjective::new(arch.clone(), data, cfg.loss_spec()?)?;
    let mut params = init.into_inner();
    let opt = &cfg.optimizer;
    let mut lbfgs = LbfgsState::new(opt.step_scale, opt.history)?;
    let mut adam = AdamState::new(params.len(), opt.adam_lr);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut resolved_at = vec![None; cfg.causal.n_t];

    let first_eval = |obj: &mut PinnObjective, params: &[f64]| -> Result<(f64, Vec<f64>)> {
        obj.value_and_gradient(params).map_err(|e| match e {
            Error::NonFinite { .. } | Error::NonFiniteInput(_) => {
                Error::Training(format!("non-finite loss at epoch 1 ({e}); check inputs, domain and initialization"))
            }
            e => e,
        })
    };

    let mut note_weights = |b: &LossBreakdown, epoch: usize| {
        for (slot, &w) in resolved_at.iter_mut().zip(&b.weights) {
            if slot.is_none() && w > 0.5 {
                *slot = Some(epoch);
            }
        }
    };
    for epoch in 1..=cfg.epochs {
        let eval_here = |obj: &mut PinnObjective, params: &[f64]| {
            if epoch == 1 {
                first_eval(obj, params)
            } else {
                obj.value_and_gradient(params)
            }
        };
        let row = if epoch <= opt.adam_warmup_epochs {
            let (_, g) = eval_here(&mut obj, &params)?;
            let b = obj.last_breakdown().expect("evaluated");
            note_weights(b, epoch);
            let row = log_row(epoch, b, StepKind::Adam);
            adam_step(&mut adam, &mut params, &g).map_err(|e| Error::Training(format!("adam epoch {epoch}: {e}")))?;
            lbfgs.invalidate();
            row
        } else {
            if !lbfgs.is_primed() {
                let (f, g) = eval_here(&mut obj, &params)?;
                lbfgs.prime(f, g);
            }
            let b = obj.last_breakdown().expect("evaluated");
            note_weights(b, epoch);
            let mut row = log_row(epoch, b, StepKind::Lbfgs);
            let rep = lbfgs_step(&mut lbfgs, &mut params, &mut obj)?;
            row.accepted = rep.accepted;
            row.search_value = rep.loss_trial;
            row.step_length = rep.step_length;
            row
        };
        epochs.push(row);
    }
    // Breakdown at the final parameters.
    if !lbfgs.is_primed() {
        let (f, g) = obj.value_and_gradient(&params)?;
        lbfgs.prime(f, g);
    }
    let final_breakdown = obj.last_breakdown().expect("evaluated").clone();
    if !final_breakdown.total.is_finite() {
        return Err(Error::Training("final loss is not finite".into()));
    }

    let mut ckpt = Checkpoint::new(arch, ParamVector::new(params))?;
    let colloc_hash = colloc.content_hash();
    let meta = &mut ckpt.meta;
    meta.insert("problem".into(), problem.id.name().into());
    meta.insert("domain".into(), problem.domain.to_string());
    meta.insert("mode".into(), cfg.mode.clone());
    meta.insert("epochs".into(), cfg.epochs.to_string());
    meta.insert("final_loss".into(), format!("{:e}", final_breakdown.total));
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("colloc_seed".into(), cfg.colloc_seed().to_string());
    meta.insert("colloc_hash".into(), colloc_hash.clone());
    meta.insert("config_hash".into(), cfg.hash());
    meta.insert("config".into(), cfg.to_json_compact());
    if let Some(p) = &parent {
        meta.insert("parent".into(), p.clone());
    }

    let t_star = t_star(cfg, problem);
    let final_r = if problem.has_exact {
        evaluate(&ckpt, problem, EvalGrid::Slice { t: t_star, n_x: cfg.eval.n_x })?.r
    } else {
        None
    };
    let record = RunRecord {
        problem: problem.id.name().into(),
        mode: cfg.mode.clone(),
        epochs,
        final_breakdown,
        wall_time_s: started.elapsed().as_secs_f64(),
        t_star,
        final_r,
        colloc_hash,
        parent,
        resolved_at,
    };
    Ok((ckpt, record))
}

/// One row of a noise sweep: R of the first channel at the evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub percent: f64,
    pub r_with_tl: f64,
    pub r_without_tl: f64,
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("percent,r_with_tl,r_without_tl\n");
    for r in rows {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e}", r.percent, r.r_with_tl, r.r_without_tl);
    }
    s
}

fn first_r(record: &RunRecord) -> Result<Vec<f64>> {
    record
        .final_r
        .clone()
        .ok_or_else(|| Error::NoExactSolution(format!("{} (needed for the comparison table)", record.problem)))
}

/// For each percent, a warm-started run and an Xavier control at the same
/// budget on the noisy-initial-data problem. Runs are independent and may
/// execute concurrently.
pub fn noise_sweep(parent: &Checkpoint, percents: &[f64], cfg: &RunConfig) -> Result<Vec<NoiseRow>> {
    if let Some(p) = percents.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(Error::Config(format!("noise percent {p} outside [0, 100]")));
    }
    let jobs: Vec<(usize, bool)> = (0..percents.len()).flat_map(|i| [(i, true), (i, false)]).collect();
    let results: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(i, tl)| {
            let mut child = cfg.clone();
            child.problem.noise_percent = percents[i];
            let (_, rec) = if tl {
                transfer_train(parent, &child)?
            } else {
                control_train(parent, &child)?
            };
            first_r(&rec)
        })
        .collect();
    let mut it = results.into_iter();
    percents
        .iter()
        .map(|&percent| {
            let with = it.next().expect("paired")?;
            let without = it.next().expect("paired")?;
            Ok(NoiseRow {
                percent,
                r_with_tl: with[0],
                r_without_tl: without[0],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainRow {
    pub domain: Domain,
    pub t_star: f64,
    /// Per channel.
    pub r_with_tl: Vec<f64>,
    pub r_without_tl: Vec<f64>,
}

pub fn domain_csv(rows: &[DomainRow], channels: &[&str]) -> String {
    let mut s = String::from("x_min,x_max,t_min,t_max,t_star");
    for tag in ["with_tl", "without_tl"] {
        for c in channels {
            let _ = write!(s, ",r_{c}_{tag}");
        }
    }
    s.push('\n');
    for r in rows {
        let d = r.domain;
        let _ = write!(s, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", d.x_min, d.x_max, d.t_min, d.t_max, r.t_star);
        for v in r.r_with_tl.iter().chain(&r.r_without_tl) {
            let _ = write!(s, ",{v:.16e}");
        }
        s.push('\n');
    }
    s
}

/// Per extended domain, a warm-started run and an Xavier control at equal
/// budget; R is taken at `cfg.eval.t_star`, defaulting to each domain's
/// final time.
pub fn domain_extension_suite(parent: &Checkpoint, domains: &[Domain], cfg: &RunConfig) -> Result<Vec<DomainRow>> {
    let jobs: Vec<(usize, bool)> = (0..domains.len()).flat_map(|i| [(i, true), (i, false)]).collect();
    let results: Vec<Result<(f64, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&(i, tl)| {
            let mut child = cfg.clone();
            child.problem.domain = Some(domains[i].into());
            let (_, rec) = if tl {
                transfer_train(parent, &child)?
            } else {
                control_train(parent, &child)?
            };
            Ok((rec.t_star, first_r(&rec)?))
        })
        .collect();
    let mut it = results.into_iter();
    domains
        .iter()
        .map(|&domain| {
            let (t_star, with) = it.next().expect("paired")?;
            let (_, without) = it.next().expect("paired")?;
            Ok(DomainRow {
                domain,
                t_star,
                r_with_tl: with,
                r_without_tl: without,
            })
        })
        .collect()
}

/// `$BEAMPINN_RUN_ROOT`, or `runs` under the working directory.
pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Files of one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn for_config(root: &Path, cfg: &RunConfig) -> Self {
        RunDir { dir: root.join(cfg.hash()) }
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.bin")
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("log.csv")
    }
    pub fn field(&self) -> PathBuf {
        self.dir.join("field.csv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `channel,t_star,r_t_star,r_grid`; empty R cells without a closed form.
pub fn metrics_csv(channels: &[&str], t_star: f64, at_t: Option<&[f64]>, grid: Option<&[f64]>) -> String {
    let mut s = String::from("channel,t_star,r_t_star,r_grid\n");
    let cell = |v: Option<&[f64]>, c: usize| v.map(|v| format!("{:.16e}", v[c])).unwrap_or_default();
    for (c, name) in channels.iter().enumerate() {
        let _ = writeln!(s, "{name},{t_star:.16e},{},{}", cell(at_t, c), cell(grid, c));
    }
    s
}

/// Writes config, checkpoint, log, grid field table and metrics under
/// `root/<config hash>` and returns the directory.
pub fn write_run(root: &Path, cfg: &RunConfig, ckpt: &Checkpoint, record: &RunRecord) -> Result<RunDir> {
    let rd = RunDir::for_config(root, cfg);
    std::fs::create_dir_all(&rd.dir).map_err(|e| Error::io(&rd.dir, e))?;
    write(&rd.config(), &(cfg.to_json_pretty() + "\n"))?;
    net::save_checkpoint(ckpt, rd.checkpoint())?;
    write(&rd.log(), &record.log_csv())?;
    let problem = cfg.build_problem()?;
    let grid = evaluate(ckpt, &problem, EvalGrid::Grid { n_x: cfg.eval.grid_nx, n_t: cfg.eval.grid_nt })?;
    write(&rd.field(), &grid.field.to_csv())?;
    write(
        &rd.metrics(),
        &metrics_csv(&grid.field.channels, record.t_star, record.final_r.as_deref(), grid.r.as_deref()),
    )?;
    Ok(rd)
}
