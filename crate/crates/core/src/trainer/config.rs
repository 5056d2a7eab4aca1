//! Run configuration: named profiles, JSON documents, dotted overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::beams::{BeamProblem, Domain, NoiseSpec, ProblemId};
use crate::colloc::Counts;
use crate::error::{Error, Result};
use crate::loss::{Lambdas, LossMode, LossSpec, SaConfig};
use crate::net::{InputMap, NetArch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl From<Domain> for DomainConfig {
    fn from(d: Domain) -> Self {
        DomainConfig {
            x_min: d.x_min,
            x_max: d.x_max,
            t_min: d.t_min,
            t_max: d.t_max,
        }
    }
}

impl DomainConfig {
    pub fn to_domain(self) -> Result<Domain> {
        Domain::new(self.x_min, self.x_max, self.t_min, self.t_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// `eb_base`, `eb_variant` or `timoshenko`.
    pub id: String,
    /// Foundation stiffness.
    pub k: f64,
    /// Amplitude of the `eb_variant` initial data.
    pub a: f64,
    /// Defaults to the problem's base domain.
    pub domain: Option<DomainConfig>,
    /// Gaussian noise on the displacement initial data, percent of RMS.
    pub noise_percent: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    /// Centre the inputs on the training domain and rescale them.
    pub normalize_inputs: bool,
    /// Factors `[x, t]` applied after centring. The default `[1/π, 2]` gives
    /// one unit per π of span in x and maps t ∈ [0, 1] onto [−1, 1].
    pub input_scale: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Initial trial step of the L-BFGS line search.
    pub step_scale: f64,
    /// L-BFGS history length.
    pub history: usize,
    /// Adam epochs run before switching to L-BFGS (counted in `epochs`).
    pub adam_warmup_epochs: usize,
    pub adam_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalSection {
    pub epsilon: f64,
    pub n_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsConfig {
    pub n_int: usize,
    pub n_i: usize,
    pub n_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaSection {
    pub step: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Time of the fixed-time metric; defaults to the end of the domain.
    pub t_star: Option<f64>,
    /// x points of the fixed-time evaluation.
    pub n_x: usize,
    pub grid_nx: usize,
    pub grid_nt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InitConfig {
    Xavier,
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub arch: ArchConfig,
    pub optimizer: OptimizerConfig,
    pub causal: CausalSection,
    pub counts: CountsConfig,
    pub lambdas: LambdaConfig,
    /// `vanilla`, `causal` or `sa`.
    pub mode: String,
    pub epochs: usize,
    /// Seed of the Xavier draw.
    pub seed: u64,
    /// Seed of the collocation draw; defaults to `seed`.
    pub colloc_seed: Option<u64>,
    pub init: InitConfig,
    pub sa: SaSection,
    pub eval: EvalConfig,
    /// Runs are always single-threaded and order-pinned; `false` is rejected.
    pub deterministic: bool,
}

impl RunConfig {
    pub fn profile(profile: Profile, problem: ProblemId) -> Self {
        let (hidden, n_t, n_int, n_i, n_b, epochs, step_scale) = match profile {
            Profile::Desk => (vec![64, 64, 64], 50, 2000, 200, 400, 3000, 1.0),
            Profile::Paper => (vec![200, 200, 200, 200], 100, 10_000, 500, 1000, 10_000, 0.1),
        };
        RunConfig {
            problem: ProblemConfig {
                id: problem.name().to_string(),
                k: 1.0,
                a: 1.0,
                domain: None,
                noise_percent: 0.0,
                noise_seed: 0,
            },
            arch: ArchConfig {
                hidden,
                normalize_inputs: true,
                input_scale: [1.0 / std::f64::consts::PI, 2.0],
            },
            optimizer: OptimizerConfig {
                step_scale,
                history: 50,
                adam_warmup_epochs: 0,
                adam_lr: 1e-3,
            },
            causal: CausalSection { epsilon: 5.0, n_t },
            counts: CountsConfig { n_int, n_i, n_b },
            lambdas: LambdaConfig {
                pde: 1.0,
                ic: 1.0,
                bc: 1.0,
            },
            mode: "causal".into(),
            epochs,
            seed: 0,
            colloc_seed: None,
            init: InitConfig::Xavier,
            sa: SaSection {
                step: SaConfig::default().step,
                max: SaConfig::default().max,
            },
            eval: EvalConfig {
                t_star: None,
                n_x: 1000,
                grid_nx: 256,
                grid_nt: 101,
            },
            deterministic: true,
        }
    }

    pub fn desk(problem: ProblemId) -> Self {
        Self::profile(Profile::Desk, problem)
    }

    /// Resolves a JSON document: the optional `profile` key (default `desk`)
    /// selects the base, the document's keys are merged over it, then each
    /// `key.path=value` override is applied. Unknown keys are errors.
    pub fn resolve(doc: &Value, overrides: &[String]) -> Result<Self> {
        let mut doc = doc.clone();
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| Error::Config("config document must be a JSON object".into()))?;
        let profile = match obj.remove("profile") {
            None => Profile::Desk,
            Some(Value::String(s)) => Profile::parse(&s)?,
            Some(v) => return Err(Error::Config(format!("profile must be a string, got {v}"))),
        };
        let mut pending: Vec<(Vec<String>, Value)> = Vec::new();
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            pending.push((key.split('.').map(str::to_string).collect(), value));
        }
        // The problem id picks no defaults today, but resolve it first so a
        // bad id is reported as such rather than as a later failure.
        let problem_id = pending
            .iter()
            .rev()
            .find(|(k, _)| k == &["problem", "id"])
            .map(|(_, v)| v.clone())
            .or_else(|| obj.get("problem").and_then(|p| p.get("id")).cloned())
            .map(|v| match v {
                Value::String(s) => ProblemId::parse(&s),
                v => Err(Error::Config(format!("problem.id must be a string, got {v}"))),
            })
            .transpose()?
            .unwrap_or(ProblemId::EbBase);

        let mut merged = serde_json::to_value(Self::profile(profile, problem_id)).expect("config serializes");
        merge(&mut merged, doc);
        for (path, value) in pending {
            set_path(&mut merged, &path, value)?;
        }
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        Self::resolve(&doc, overrides)
    }

    pub fn load(path: impl AsRef<std::path::Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Single-line JSON.
    pub fn to_json_compact(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the compact resolved config.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_json_compact().as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !self.deterministic {
            return bad("only deterministic mode is implemented; set deterministic = true".into());
        }
        self.problem_id()?;
        self.loss_mode()?;
        let c = &self.counts;
        if c.n_int == 0 || c.n_i == 0 || c.n_b == 0 || self.causal.n_t == 0 {
            return bad(format!("all counts must be >= 1 (n_int {}, n_i {}, n_b {}, n_t {})", c.n_int, c.n_i, c.n_b, self.causal.n_t));
        }
        if self.causal.n_t > c.n_int {
            return bad(format!("n_t = {} exceeds n_int = {}", self.causal.n_t, c.n_int));
        }
        if !(self.causal.epsilon.is_finite() && self.causal.epsilon >= 0.0) {
            return bad(format!("causal.epsilon must be >= 0, got {}", self.causal.epsilon));
        }
        self.lambdas().validate()?;
        let o = &self.optimizer;
        if !(o.step_scale.is_finite() && o.step_scale > 0.0) {
            return bad(format!("optimizer.step_scale must be > 0, got {}", o.step_scale));
        }
        if o.adam_warmup_epochs > 0 && !(o.adam_lr.is_finite() && o.adam_lr > 0.0) {
            return bad(format!("optimizer.adam_lr must be > 0, got {}", o.adam_lr));
        }
        if !self.arch.input_scale.iter().all(|h| h.is_finite() && *h > 0.0) {
            return bad(format!("arch.input_scale must be positive, got {:?}", self.arch.input_scale));
        }
        if self.arch.hidden.is_empty() || self.arch.hidden.contains(&0) {
            return bad(format!("arch.hidden must be non-empty widths >= 1, got {:?}", self.arch.hidden));
        }
        if !(0.0..=100.0).contains(&self.problem.noise_percent) {
            return bad(format!("problem.noise_percent must lie in [0, 100], got {}", self.problem.noise_percent));
        }
        let e = &self.eval;
        if e.n_x < 2 || e.grid_nx < 2 || e.grid_nt < 2 {
            return bad("eval point counts must be >= 2".into());
        }
        Ok(())
    }

    pub fn problem_id(&self) -> Result<ProblemId> {
        ProblemId::parse(&self.problem.id).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn loss_mode(&self) -> Result<LossMode> {
        LossMode::parse(&self.mode).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn lambdas(&self) -> Lambdas {
        Lambdas {
            pde: self.lambdas.pde,
            ic: self.lambdas.ic,
            bc: self.lambdas.bc,
        }
    }

    pub fn build_problem(&self) -> Result<BeamProblem> {
        let id = self.problem_id()?;
        let domain = match self.problem.domain {
            Some(d) => d.to_domain()?,
            None => id.base_domain(),
        };
        let noise = (self.problem.noise_percent > 0.0).then_some(NoiseSpec {
            percent: self.problem.noise_percent,
            seed: self.problem.noise_seed,
        });
        BeamProblem::new(id, domain, self.problem.k, self.problem.a, noise)
    }

    pub fn counts(&self) -> Counts {
        Counts {
            n_t: self.causal.n_t,
            n_int: self.counts.n_int,
            n_i: self.counts.n_i,
            n_b: self.counts.n_b,
        }
    }

    pub fn colloc_seed(&self) -> u64 {
        self.colloc_seed.unwrap_or(self.seed)
    }

    /// Architecture for `problem`, with the input map of its domain if
    /// normalization is on.
    pub fn build_arch(&self, problem: &BeamProblem) -> Result<NetArch> {
        let arch = NetArch::mlp(&self.arch.hidden, problem.channels())?;
        Ok(if self.arch.normalize_inputs {
            let d = problem.domain;
            let [x_scale, t_scale] = self.arch.input_scale;
            arch.with_input_map(InputMap {
                x_shift: 0.5 * (d.x_min + d.x_max),
                x_scale,
                t_shift: 0.5 * (d.t_min + d.t_max),
                t_scale,
            })
        } else {
            arch
        })
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        Ok(LossSpec {
            mode: self.loss_mode()?,
            lambdas: self.lambdas(),
            epsilon: self.causal.epsilon,
            sa: SaConfig {
                step: self.sa.step,
                max: self.sa.max,
            },
        })
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path
        .split_last()
        .ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut cur = root;
    for (i, seg) in parents.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override key {:?} descends into a non-object", path[..i].join("."))))?;
        let slot = obj.entry(seg.clone()).or_insert(Value::Null);
        if slot.is_null() {
            *slot = Value::Object(Map::new());
        }
        cur = slot;
    }
    cur.as_object_mut()
        .ok_or_else(|| Error::Config(format!("override key {:?} descends into a non-object", path.join("."))))?
        .insert(last.clone(), value);
    Ok(())
}
