//! Beam problem definitions: residual forms, domains, initial and boundary
//! data, forcing terms, closed-form solutions and initial-condition noise.

use std::f64::consts::PI;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::jetdiff::{Axis, ChannelDerivs, DerivBundle, JetLayout};

/// Amplitude of the Timoshenko closed form.
const TIMO_C: f64 = 1.5 * PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Domain {
    pub fn new(x_min: f64, x_max: f64, t_min: f64, t_max: f64) -> Result<Self> {
        let d = Domain {
            x_min,
            x_max,
            t_min,
            t_max,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x_min, self.x_max, self.t_min, self.t_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDomain(format!("{self} has non-finite bounds")));
        }
        if self.x_min >= self.x_max {
            return Err(Error::InvalidDomain(format!("{self}: need x_min < x_max")));
        }
        if self.t_min != 0.0 || self.t_max < self.t_min {
            return Err(Error::InvalidDomain(format!("{self}: need t_min = 0 <= t_max")));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.t_min..=self.t_max).contains(&t)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x[{}, {}] t[{}, {}]", self.x_min, self.x_max, self.t_min, self.t_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamKind {
    EulerBernoulli,
    Timoshenko,
}

impl BeamKind {
    /// Network output channels: `u`, or `(u, theta)`.
    pub fn channels(self) -> usize {
        match self {
            BeamKind::EulerBernoulli => 1,
            BeamKind::Timoshenko => 2,
        }
    }

    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            BeamKind::EulerBernoulli => &["u"],
            BeamKind::Timoshenko => &["u", "theta"],
        }
    }
}

/// Named problem families selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemId {
    EbBase,
    EbVariant,
    Timoshenko,
}

impl ProblemId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eb_base" => Ok(ProblemId::EbBase),
            "eb_variant" => Ok(ProblemId::EbVariant),
            "timoshenko" => Ok(ProblemId::Timoshenko),
            other => Err(Error::Config(format!(
                "unknown problem `{other}`, expected one of eb_base, eb_variant, timoshenko"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::EbBase => "eb_base",
            ProblemId::EbVariant => "eb_variant",
            ProblemId::Timoshenko => "timoshenko",
        }
    }

    pub fn kind(self) -> BeamKind {
        match self {
            ProblemId::EbBase | ProblemId::EbVariant => BeamKind::EulerBernoulli,
            ProblemId::Timoshenko => BeamKind::Timoshenko,
        }
    }

    /// Domain the closed form's homogeneous boundary data belongs to.
    pub fn base_domain(self) -> Domain {
        match self {
            ProblemId::EbBase | ProblemId::EbVariant => Domain {
                x_min: 0.0,
                x_max: 8.0 * PI,
                t_min: 0.0,
                t_max: 1.0,
            },
            ProblemId::Timoshenko => Domain {
                x_min: 0.0,
                x_max: 3.0 * PI,
                t_min: 0.0,
                t_max: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub percent: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.percent) {
            return Err(Error::Config(format!("noise percent {} outside [0, 100]", self.percent)));
        }
        Ok(())
    }
}

/// One term `coef * d^order/d axis^order` of output `channel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTerm {
    pub channel: usize,
    pub axis: Axis,
    pub order: usize,
    pub coef: f64,
}

impl ResidualTerm {
    const fn new(channel: usize, axis: Axis, order: usize, coef: f64) -> Self {
        ResidualTerm {
            channel,
            axis,
            order,
            coef,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Forcing {
    /// `(2 - pi^2) sin x cos(pi t)`
    Eb,
    /// `3 a sin x e^t`
    EbVariant { a: f64 },
    /// `cos t`
    Timo,
}

impl Forcing {
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match *self {
            Forcing::Eb => forcing_eb(x, t),
            Forcing::EbVariant { a } => forcing_eb_variant(a, x, t),
            Forcing::Timo => forcing_timo(x, t),
        }
    }
}

pub fn forcing_eb(x: f64, t: f64) -> f64 {
    (2.0 - PI * PI) * x.sin() * (PI * t).cos()
}

pub fn forcing_eb_variant(a: f64, x: f64, t: f64) -> f64 {
    3.0 * a * x.sin() * t.exp()
}

pub fn forcing_timo(_x: f64, t: f64) -> f64 {
    t.cos()
}

/// A residual equation: `sum(terms) - forcing(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub name: &'static str,
    pub terms: Vec<ResidualTerm>,
    pub forcing: Option<Forcing>,
}

impl Equation {
    pub fn eval(&self, bundle: &DerivBundle, x: f64, t: f64) -> Result<f64> {
        let mut r = 0.0;
        for term in &self.terms {
            r += term.coef * bundle.get(term.channel, term.axis, term.order)?;
        }
        Ok(r - self.forcing.map_or(0.0, |f| f.eval(x, t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Left,
    Right,
}

/// A boundary constraint on the `order`-th x-derivative of `channel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BcConstraint {
    pub channel: usize,
    pub order: usize,
}

impl BcConstraint {
    pub fn label(&self, kind: BeamKind) -> String {
        let ch = kind.channel_names()[self.channel];
        match self.order {
            0 => format!("{ch} value"),
            2 => format!("{ch} second_derivative"),
            k => format!("{ch} derivative {k}"),
        }
    }
}

/// Initial data at a set of points: `disp[c][n]` and `vel[c][n]` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct IcValues {
    pub disp: Vec<Vec<f64>>,
    pub vel: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamProblem {
    pub id: ProblemId,
    pub kind: BeamKind,
    pub domain: Domain,
    /// Winkler stiffness.
    pub k: f64,
    /// Variant initial-condition amplitude.
    pub a: f64,
    pub noise: Option<NoiseSpec>,
    /// Whether the closed form solves this instance (checked at construction).
    pub has_exact: bool,
}

impl BeamProblem {
    pub fn new(id: ProblemId, domain: Domain, k: f64, a: f64, noise: Option<NoiseSpec>) -> Result<Self> {
        domain.validate()?;
        if !k.is_finite() || !a.is_finite() {
            return Err(Error::Config("k and a must be finite".into()));
        }
        if let Some(n) = &noise {
            n.validate()?;
        }
        let mut p = BeamProblem {
            id,
            kind: id.kind(),
            domain,
            k,
            a,
            noise,
            has_exact: true,
        };
        p.has_exact = p.exact_consistent();
        Ok(p)
    }

    /// Problem on its default domain with `k = 1`, `a = 1`, no noise.
    pub fn standard(id: ProblemId) -> Self {
        Self::new(id, id.base_domain(), 1.0, 1.0, None).expect("built-in problem is valid")
    }

    pub fn with_domain(&self, domain: Domain) -> Result<Self> {
        Self::new(self.id, domain, self.k, self.a, self.noise)
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    /// Residual equations; order of the returned list is the order of the
    /// residuals everywhere else.
    pub fn equations(&self) -> Vec<Equation> {
        use Axis::{T, X};
        let k = self.k;
        match self.id {
            ProblemId::EbBase | ProblemId::EbVariant => vec![Equation {
                name: "eb",
                terms: vec![
                    ResidualTerm::new(0, T, 2, 1.0),
                    ResidualTerm::new(0, X, 4, 1.0),
                    ResidualTerm::new(0, X, 0, k),
                ],
                forcing: Some(match self.id {
                    ProblemId::EbBase => Forcing::Eb,
                    _ => Forcing::EbVariant { a: self.a },
                }),
            }],
            ProblemId::Timoshenko => vec![
                Equation {
                    name: "rot",
                    terms: vec![
                        ResidualTerm::new(1, T, 2, 1.0),
                        ResidualTerm::new(1, X, 2, -1.0),
                        ResidualTerm::new(1, X, 0, 1.0),
                        ResidualTerm::new(0, X, 1, -1.0),
                    ],
                    forcing: None,
                },
                Equation {
                    name: "disp",
                    terms: vec![
                        ResidualTerm::new(0, T, 2, 1.0),
                        ResidualTerm::new(1, X, 1, 1.0),
                        ResidualTerm::new(0, X, 2, -1.0),
                        ResidualTerm::new(0, X, 0, k),
                    ],
                    forcing: Some(Forcing::Timo),
                },
            ],
        }
    }

    /// Jet layout needed by the residuals.
    pub fn residual_layout(&self) -> JetLayout {
        let eqs = self.equations();
        let order = |axis| {
            eqs.iter()
                .flat_map(|e| e.terms.iter())
                .filter(|t| t.axis == axis)
                .map(|t| t.order)
                .max()
                .unwrap_or(0)
        };
        JetLayout::new(order(Axis::X), order(Axis::T)).expect("residual orders are supported")
    }

    pub fn bc_constraints(&self) -> Vec<BcConstraint> {
        match self.kind {
            BeamKind::EulerBernoulli => vec![
                BcConstraint { channel: 0, order: 0 },
                BcConstraint { channel: 0, order: 2 },
            ],
            BeamKind::Timoshenko => vec![
                BcConstraint { channel: 0, order: 0 },
                BcConstraint { channel: 1, order: 0 },
            ],
        }
    }

    pub fn bc_layout(&self) -> JetLayout {
        let x = self.bc_constraints().iter().map(|c| c.order).max().unwrap_or(0);
        JetLayout::new(x, 0).expect("boundary orders are supported")
    }

    /// Targets per end, in `bc_constraints()` order. Homogeneous on the
    /// problem's native spatial interval; on any other interval they are read
    /// off the closed form at the new end.
    pub fn boundary_targets(&self, end: End, t: f64) -> Result<Vec<(BcConstraint, f64)>> {
        let base = self.id.base_domain();
        let native = self.domain.x_min == base.x_min && self.domain.x_max == base.x_max;
        let x = match end {
            End::Left => self.domain.x_min,
            End::Right => self.domain.x_max,
        };
        self.bc_constraints()
            .into_iter()
            .map(|c| {
                let v = if native {
                    0.0
                } else {
                    self.exact_bundle(x, t)?.get(c.channel, Axis::X, c.order)?
                };
                Ok((c, v))
            })
            .collect()
    }

    pub fn exact_solution(&self, x: f64, t: f64) -> Result<Vec<f64>> {
        let b = self.exact_bundle(x, t)?;
        Ok((0..self.channels()).map(|c| b.value(c)).collect())
    }

    /// Closed-form derivatives (x up to 4, t up to 2), evaluated analytically.
    pub fn exact_bundle(&self, x: f64, t: f64) -> Result<DerivBundle> {
        if !self.has_exact {
            return Err(Error::NoExactSolution(format!("{} with k = {}", self.id.name(), self.k)));
        }
        Ok(self.closed_form(x, t))
    }

    fn closed_form(&self, x: f64, t: f64) -> DerivBundle {
        let h = 0.5 * PI;
        // d^k/dx^k sin x = sin(x + k pi/2), likewise for cos
        let dsin = |v: f64, k: usize| (v + k as f64 * h).sin();
        let dcos = |v: f64, k: usize| (v + k as f64 * h).cos();
        let xs = 0..=4;
        let ts = 0..=2;
        match self.id {
            ProblemId::EbBase => {
                let (sx, ct) = (x.sin(), (PI * t).cos());
                DerivBundle {
                    channels: vec![ChannelDerivs {
                        x: xs.map(|k| dsin(x, k) * ct).collect(),
                        t: ts.map(|k| sx * PI.powi(k as i32) * dcos(PI * t, k)).collect(),
                    }],
                }
            }
            ProblemId::EbVariant => {
                let (sx, et) = (x.sin(), t.exp());
                DerivBundle {
                    channels: vec![ChannelDerivs {
                        x: xs.map(|k| self.a * dsin(x, k) * et).collect(),
                        t: ts.map(|_| self.a * sx * et).collect(),
                    }],
                }
            }
            ProblemId::Timoshenko => {
                let ct = t.cos();
                let theta0 = TIMO_C * x.cos() + x - TIMO_C;
                let u = ChannelDerivs {
                    x: xs.clone().map(|k| TIMO_C * dsin(x, k) * ct).collect(),
                    t: ts.clone().map(|k| TIMO_C * x.sin() * dcos(t, k)).collect(),
                };
                let theta = ChannelDerivs {
                    x: xs
                        .map(|k| match k {
                            0 => theta0 * ct,
                            1 => (TIMO_C * dcos(x, 1) + 1.0) * ct,
                            k => TIMO_C * dcos(x, k) * ct,
                        })
                        .collect(),
                    t: ts.map(|k| theta0 * dcos(t, k)).collect(),
                };
                DerivBundle {
                    channels: vec![u, theta],
                }
            }
        }
    }

    /// Residuals of the closed form at `(x, t)`, one per equation.
    pub fn residual_of_exact(&self, x: f64, t: f64) -> Result<Vec<f64>> {
        let b = self.exact_bundle(x, t)?;
        self.equations().iter().map(|e| e.eval(&b, x, t)).collect()
    }

    /// Largest |residual| of the closed form over `points`, per equation.
    pub fn max_exact_residuals(&self, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        let mut worst = vec![0.0f64; self.equations().len()];
        for &(x, t) in points {
            for (w, r) in worst.iter_mut().zip(self.residual_of_exact(x, t)?) {
                *w = w.max(r.abs());
            }
        }
        Ok(worst)
    }

    fn exact_consistent(&self) -> bool {
        let d = &self.domain;
        (0..16).all(|i| {
            let f = (i as f64 + 0.5) / 16.0;
            let x = d.x_min + f * (d.x_max - d.x_min);
            let t = d.t_min + (1.0 - f) * (d.t_max - d.t_min);
            let b = self.closed_form(x, t);
            self.equations()
                .iter()
                .all(|e| e.eval(&b, x, t).map(|r| r.abs() <= 1e-8).unwrap_or(false))
        })
    }

    /// Clean initial data at `xs`.
    pub fn ic_values(&self, xs: &[f64]) -> IcValues {
        let a = self.a;
        let per = |f: &dyn Fn(f64) -> f64| xs.iter().map(|&x| f(x)).collect::<Vec<f64>>();
        match self.id {
            ProblemId::EbBase => IcValues {
                disp: vec![per(&|x| x.sin())],
                vel: vec![per(&|_| 0.0)],
            },
            ProblemId::EbVariant => IcValues {
                disp: vec![per(&|x| a * x.sin())],
                vel: vec![per(&|x| a * x.sin())],
            },
            ProblemId::Timoshenko => IcValues {
                disp: vec![per(&|x| TIMO_C * x.sin()), per(&|x| TIMO_C * x.cos() + x - TIMO_C)],
                vel: vec![per(&|_| 0.0), per(&|_| 0.0)],
            },
        }
    }

    /// Initial data used as training targets: clean values, with noise added
    /// to each displacement channel when a noise spec is active.
    pub fn ic_targets(&self, xs: &[f64]) -> IcValues {
        let mut v = self.ic_values(xs);
        if let Some(spec) = &self.noise {
            for (c, disp) in v.disp.iter_mut().enumerate() {
                let channel_spec = NoiseSpec {
                    percent: spec.percent,
                    seed: spec.seed.wrapping_add(c as u64),
                };
                *disp = add_ic_noise(disp, &channel_spec);
            }
        }
        v
    }
}

/// `values + (percent/100) * RMS(values) * z` with standard normal `z`
/// drawn from a generator seeded by `spec.seed`.
pub fn add_ic_noise(values: &[f64], spec: &NoiseSpec) -> Vec<f64> {
    if spec.percent == 0.0 || values.is_empty() {
        return values.to_vec();
    }
    let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
    let sigma = spec.percent / 100.0 * rms;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    values
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sigma * z
        })
        .collect()
}

/// `u_tt + u_xxxx + k u - f` from a derivative bundle.
pub fn eb_residual(bundle: &DerivBundle, x: f64, t: f64, problem: &BeamProblem) -> Result<f64> {
    if problem.kind != BeamKind::EulerBernoulli {
        return Err(Error::Config(format!("{} is not an Euler-Bernoulli problem", problem.id.name())));
    }
    problem.equations()[0].eval(bundle, x, t)
}

/// `(r_rot, r_disp)` from a two-channel bundle (`u`, `theta`).
pub fn timo_residuals(bundle: &DerivBundle, x: f64, t: f64, problem: &BeamProblem) -> Result<(f64, f64)> {
    if problem.kind != BeamKind::Timoshenko {
        return Err(Error::Config(format!("{} is not a Timoshenko problem", problem.id.name())));
    }
    let eqs = problem.equations();
    Ok((eqs[0].eval(bundle, x, t)?, eqs[1].eval(bundle, x, t)?))
}

#[cfg(test)]
mod tests;
