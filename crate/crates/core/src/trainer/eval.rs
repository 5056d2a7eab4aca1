//! Field tables and error metrics of a trained network.

use std::fmt::Write as _;

use crate::beams::BeamProblem;
use crate::error::Result;
use crate::metrics::relative_l2_percent;
use crate::net::{self, Checkpoint};

/// Where to evaluate: one time level, or a full space-time grid. Points are
/// uniform and include both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalGrid {
    Slice { t: f64, n_x: usize },
    Grid { n_x: usize, n_t: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRow {
    pub x: f64,
    pub t: f64,
    pub pred: Vec<f64>,
    pub exact: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    pub channels: Vec<&'static str>,
    pub rows: Vec<FieldRow>,
}

impl FieldTable {
    pub fn has_exact(&self) -> bool {
        self.rows.first().is_some_and(|r| r.exact.is_some())
    }

    /// Columns `x,t,u_pred,u_exact,abs_err` (then `theta_pred,theta_exact,
    /// theta_abs_err` for two channels); without a closed form only the
    /// prediction columns are written.
    pub fn to_csv(&self) -> String {
        let exact = self.has_exact();
        let mut header = vec!["x".to_string(), "t".to_string()];
        for (c, name) in self.channels.iter().enumerate() {
            header.push(format!("{name}_pred"));
            if exact {
                header.push(format!("{name}_exact"));
                header.push(if c == 0 { "abs_err".into() } else { format!("{name}_abs_err") });
            }
        }
        let mut s = header.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:.16e},{:.16e}", r.x, r.t);
            for (c, p) in r.pred.iter().enumerate() {
                let _ = write!(s, ",{p:.16e}");
                if let Some(e) = &r.exact {
                    let _ = write!(s, ",{:.16e},{:.16e}", e[c], (p - e[c]).abs());
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub grid: EvalGrid,
    pub field: FieldTable,
    /// Relative L² error in percent per channel; `None` without a closed form.
    pub r: Option<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |j| if j + 1 == n { hi } else { lo + j as f64 * h })
}

pub fn grid_points(problem: &BeamProblem, grid: EvalGrid) -> Vec<(f64, f64)> {
    let d = problem.domain;
    match grid {
        EvalGrid::Slice { t, n_x } => linspace(d.x_min, d.x_max, n_x.max(2)).map(|x| (x, t)).collect(),
        EvalGrid::Grid { n_x, n_t } => linspace(d.t_min, d.t_max, n_t.max(2))
            .flat_map(|t| linspace(d.x_min, d.x_max, n_x.max(2)).map(move |x| (x, t)))
            .collect(),
    }
}

pub fn evaluate(ckpt: &Checkpoint, problem: &BeamProblem, grid: EvalGrid) -> Result<EvalReport> {
    let points = grid_points(problem, grid);
    let pred = net::forward_batch(&ckpt.params, &ckpt.arch, &points)?;
    let exact: Option<Vec<Vec<f64>>> = if problem.has_exact {
        Some(points.iter().map(|&(x, t)| problem.exact_solution(x, t)).collect::<Result<_>>()?)
    } else {
        None
    };
    let channels = problem.kind.channel_names().to_vec();
    let r = match &exact {
        Some(ex) => Some(
            (0..channels.len())
                .map(|c| {
                    let p: Vec<f64> = pred.iter().map(|v| v[c]).collect();
                    let e: Vec<f64> = ex.iter().map(|v| v[c]).collect();
                    relative_l2_percent(&p, &e)
                })
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let rows = points
        .iter()
        .enumerate()
        .map(|(n, &(x, t))| FieldRow {
            x,
            t,
            pred: pred[n].clone(),
            exact: exact.as_ref().map(|e| e[n].clone()),
        })
        .collect();
    Ok(EvalReport {
        grid,
        field: FieldTable { channels, rows },
        r,
    })
}
