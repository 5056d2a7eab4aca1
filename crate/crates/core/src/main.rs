use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beampinn::beams::{BeamProblem, Domain, ProblemId};
use beampinn::colloc::{self, Counts};
use beampinn::error::{Error, Result};
use beampinn::fdcheck;
use beampinn::loss::{LossData, LossMode, LossSpec, SaConfig};
use beampinn::net::{self, Checkpoint, NetArch};
use beampinn::trainer::{self, EvalGrid, InitConfig, RunConfig};

/// Residual tolerance of `residual-check`.
const RESIDUAL_TOL: f64 = 1e-8;
/// Relative tolerance of `grad-check`.
const GRAD_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "beampinn", version, about = "Causal PINN solver for beams on Winkler foundations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; the desk profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override applied after the file, e.g. `--set epochs=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p, &self.overrides),
            None => RunConfig::from_json_str("{}", &self.overrides),
        }
    }

    /// The explicit config if one was given, else the one stored in `ckpt`.
    fn resolve_for(&self, ckpt: &Checkpoint) -> Result<RunConfig> {
        if self.config.is_some() {
            return self.resolve();
        }
        let stored = ckpt
            .meta
            .get("config")
            .ok_or_else(|| Error::Config("checkpoint records no config; pass --config".into()))?;
        RunConfig::from_json_str(stored, &self.overrides)
    }
}

#[derive(Args)]
struct RootArg {
    /// Directory for run directories (default: $BEAMPINN_RUN_ROOT or ./runs).
    #[arg(long)]
    run_root: Option<PathBuf>,
}

impl RootArg {
    fn get(&self) -> PathBuf {
        self.run_root.clone().unwrap_or_else(trainer::run_root)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train from the configured initialization and write a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        root: RootArg,
    },
    /// Train warm-started from a parent checkpoint.
    Transfer {
        #[arg(long)]
        parent: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        root: RootArg,
    },
    /// Relative L2 error of a checkpoint at one time level.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Evaluation time (default: the config's t_star or final time).
        #[arg(long)]
        t: Option<f64>,
    },
    /// Warm-started and Xavier runs per noise level.
    SweepNoise {
        #[arg(long)]
        parent: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated percents.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,20")]
        percents: Vec<f64>,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Warm-started and Xavier runs per extended domain.
    SuiteDomains {
        #[arg(long)]
        parent: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `x_min,x_max,t_min,t_max`; values may carry a `pi` factor (`5pi`). Repeatable.
        #[arg(long = "domain", required = true)]
        domains: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residuals of the closed-form solution at quasi-random points.
    ResidualCheck {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
    },
    /// Reverse-accumulated loss gradient against extended-precision finite differences.
    GradCheck {
        /// Layer widths, input to output.
        #[arg(long, value_delimiter = ',', default_value = "2,8,8,1")]
        arch: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Problem id (default: by output count, eb_base or timoshenko).
        #[arg(long)]
        problem: Option<String>,
        #[arg(long, default_value = "causal")]
        mode: String,
        #[arg(long, default_value_t = 5.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 4)]
        n_t: usize,
        #[arg(long, default_value_t = 20)]
        n_int: usize,
        #[arg(long, default_value_t = 8)]
        n_i: usize,
        #[arg(long, default_value_t = 8)]
        n_b: usize,
    },
    /// Field table of a checkpoint on a space-time grid (or one time level).
    ExportField {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        nt: Option<usize>,
        /// Export the single time level `t` instead of the grid.
        #[arg(long)]
        t: Option<f64>,
    },
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_r(channels: &[&str], t: f64, r: Option<&[f64]>) {
    match r {
        Some(r) => {
            for (c, v) in channels.iter().zip(r) {
                println!("R_{c}(t={t}) = {v:.6e} %");
            }
        }
        None => println!("no closed-form solution; R not available"),
    }
}

fn finish_run(cfg: &RunConfig, root: &Path, ckpt: &Checkpoint, rec: &trainer::RunRecord) -> Result<()> {
    let rd = trainer::write_run(root, cfg, ckpt, rec)?;
    println!("run_dir: {}", rd.dir.display());
    println!("epochs: {}  final_loss: {:.6e}  wall_time_s: {:.1}", rec.epochs.len(), rec.final_breakdown.total, rec.wall_time_s);
    let problem = cfg.build_problem()?;
    print_r(problem.kind.channel_names(), rec.t_star, rec.final_r.as_deref());
    Ok(())
}

/// Parses `3.5`, `pi`, `5pi` or `0.5*pi`.
fn parse_coord(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Config(format!("bad domain coordinate {s:?}"));
    match s.strip_suffix("pi") {
        Some(head) => {
            let head = head.trim().trim_end_matches('*').trim();
            let f = if head.is_empty() { 1.0 } else { head.parse::<f64>().map_err(|_| bad())? };
            Ok(f * std::f64::consts::PI)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

fn parse_domain(s: &str) -> Result<Domain> {
    let v = s.split(',').map(parse_coord).collect::<Result<Vec<f64>>>()?;
    match v[..] {
        [x0, x1, t0, t1] => Domain::new(x0, x1, t0, t1),
        _ => Err(Error::Config(format!("domain {s:?} needs x_min,x_max,t_min,t_max"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, root } => {
            let cfg = cfg.resolve()?;
            let (ckpt, rec) = trainer::train(&cfg)?;
            finish_run(&cfg, &root.get(), &ckpt, &rec)
        }
        Command::Transfer { parent, cfg, root } => {
            let mut cfg = cfg.resolve()?;
            let ckpt_parent = net::load_checkpoint(&parent)?;
            cfg.init = InitConfig::Checkpoint(parent);
            let (ckpt, rec) = trainer::transfer_train(&ckpt_parent, &cfg)?;
            println!("parent: {}", trainer::checkpoint_id(&ckpt_parent)?);
            finish_run(&cfg, &root.get(), &ckpt, &rec)
        }
        Command::Evaluate { checkpoint, cfg, t } => {
            let ckpt = net::load_checkpoint(&checkpoint)?;
            let cfg = cfg.resolve_for(&ckpt)?;
            let problem = cfg.build_problem()?;
            let t = t.or(cfg.eval.t_star).unwrap_or(problem.domain.t_max);
            let ev = trainer::evaluate(&ckpt, &problem, EvalGrid::Slice { t, n_x: cfg.eval.n_x })?;
            print_r(&ev.field.channels, t, ev.r.as_deref());
            Ok(())
        }
        Command::SweepNoise { parent, cfg, percents, out } => {
            let cfg = cfg.resolve()?;
            let parent = net::load_checkpoint(&parent)?;
            let rows = trainer::noise_sweep(&parent, &percents, &cfg)?;
            write_out(out.as_deref(), &trainer::noise_csv(&rows))
        }
        Command::SuiteDomains { parent, cfg, domains, out } => {
            let cfg = cfg.resolve()?;
            let parent = net::load_checkpoint(&parent)?;
            let domains = domains.iter().map(|d| parse_domain(d)).collect::<Result<Vec<_>>>()?;
            let rows = trainer::domain_extension_suite(&parent, &domains, &cfg)?;
            let channels = cfg.build_problem()?.kind.channel_names();
            write_out(out.as_deref(), &trainer::domain_csv(&rows, channels))
        }
        Command::ResidualCheck { problem, points, k, a } => {
            let id = ProblemId::parse(&problem)?;
            let p = BeamProblem::new(id, id.base_domain(), k, a, None)?;
            let pts = colloc::halton_points(&p.domain, points);
            let worst = p.max_exact_residuals(&pts)?;
            for (e, w) in p.equations().iter().zip(&worst) {
                println!("max |residual {}| = {w:.3e} over {points} points", e.name);
            }
            match worst.iter().copied().fold(0.0, f64::max) {
                w if w <= RESIDUAL_TOL => Ok(()),
                w => Err(Error::Validation(format!("max residual {w:.3e} exceeds {RESIDUAL_TOL:e}"))),
            }
        }
        Command::GradCheck {
            arch,
            seed,
            problem,
            mode,
            epsilon,
            n_t,
            n_int,
            n_i,
            n_b,
        } => {
            let arch = NetArch::new(arch)?;
            let id = match problem {
                Some(p) => ProblemId::parse(&p)?,
                None if arch.outputs() == 2 => ProblemId::Timoshenko,
                None => ProblemId::EbBase,
            };
            let p = BeamProblem::standard(id);
            let c = colloc::sample(&p.domain, Counts { n_t, n_int, n_i, n_b }, seed, false)?;
            let data = LossData::new(&p, &c)?;
            let spec = LossSpec {
                mode: LossMode::parse(&mode)?,
                lambdas: Default::default(),
                epsilon,
                sa: SaConfig::default(),
            };
            let params = net::init_xavier(&arch, seed);
            let r = fdcheck::grad_check(&params, &arch, &data, &spec)?;
            println!(
                "{} {} {arch}: {} params, {} compared, max relative gradient error {:.3e}",
                id.name(),
                spec.mode,
                r.params,
                r.compared,
                r.max_rel_err
            );
            if r.max_rel_err < GRAD_TOL {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "gradient error {:.3e} at parameter {:?} exceeds {GRAD_TOL:e}",
                    r.max_rel_err, r.worst_index
                )))
            }
        }
        Command::ExportField {
            checkpoint,
            cfg,
            out,
            nx,
            nt,
            t,
        } => {
            let ckpt = net::load_checkpoint(&checkpoint)?;
            let cfg = cfg.resolve_for(&ckpt)?;
            let problem = cfg.build_problem()?;
            let grid = match t {
                Some(t) => EvalGrid::Slice {
                    t,
                    n_x: nx.unwrap_or(cfg.eval.n_x),
                },
                None => EvalGrid::Grid {
                    n_x: nx.unwrap_or(cfg.eval.grid_nx),
                    n_t: nt.unwrap_or(cfg.eval.grid_nt),
                },
            };
            let ev = trainer::evaluate(&ckpt, &problem, grid)?;
            write_out(Some(&out), &ev.field.to_csv())?;
            println!("{} rows -> {}", ev.field.rows.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let cat = e.category();
            if msg.starts_with(cat) {
                eprintln!("{msg}");
            } else {
                eprintln!("{cat}: {msg}");
            }
            ExitCode::FAILURE
        }
    }
}
