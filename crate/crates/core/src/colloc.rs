//! Fixed, seeded, time-sliced collocation sets.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::beams::{Domain, End};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub t: f64,
    pub xs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcPoint {
    pub end: End,
    pub x: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub n_t: usize,
    pub n_int: usize,
    pub n_i: usize,
    pub n_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub domain: Domain,
    pub slices: Vec<Slice>,
    /// x-coordinates of the initial-condition points (all at `t_min`).
    pub ic_xs: Vec<f64>,
    pub bc_points: Vec<BcPoint>,
    pub seed: u64,
    pub grid: bool,
}

/// Uniform draw from the open interval `(lo, hi)`.
fn open_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

/// `n` cell-centred points across `[lo, hi]`.
fn cell_centres(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let h = (hi - lo) / n as f64;
    (0..n).map(move |j| lo + (j as f64 + 0.5) * h)
}

/// Radical inverse of `index` in `base`: the `index`-th Halton coordinate.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// `n` quasi-random points of the (2, 3) Halton sequence mapped onto the
/// domain, starting at index 1 so no point sits on a corner.
pub fn halton_points(domain: &Domain, n: usize) -> Vec<(f64, f64)> {
    (1..=n as u64)
        .map(|i| {
            (
                domain.x_min + halton(i, 2) * (domain.x_max - domain.x_min),
                domain.t_min + halton(i, 3) * (domain.t_max - domain.t_min),
            )
        })
        .collect()
}

/// Draws the set. Slice `i` sits at `t_min + (i + 1/2) dt`; each slice gets
/// `n_int / n_t` interior points and the first `n_int % n_t` slices one more,
/// so the interior total is exactly `n_int`. The first `ceil(n_b / 2)`
/// boundary points are on the left end, the rest on the right. With `grid`,
/// x-coordinates (and boundary times) are cell-centred instead of random.
pub fn sample(domain: &Domain, counts: Counts, seed: u64, grid: bool) -> Result<CollocationSet> {
    domain.validate()?;
    let Counts { n_t, n_int, n_i, n_b } = counts;
    if n_t == 0 || n_int == 0 || n_i == 0 || n_b == 0 {
        return Err(Error::InvalidCollocation(format!("all counts must be >= 1, got {counts:?}")));
    }
    if n_t > n_int {
        return Err(Error::InvalidCollocation(format!("N_t = {n_t} exceeds N_int = {n_int}")));
    }
    let d = *domain;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = (d.t_max - d.t_min) / n_t as f64;
    let (base, extra) = (n_int / n_t, n_int % n_t);
    let slices = (0..n_t)
        .map(|i| {
            let n = base + usize::from(i < extra);
            let xs = if grid {
                cell_centres(d.x_min, d.x_max, n).collect()
            } else {
                (0..n).map(|_| open_uniform(&mut rng, d.x_min, d.x_max)).collect()
            };
            Slice {
                t: d.t_min + (i as f64 + 0.5) * dt,
                xs,
            }
        })
        .collect();
    let ic_xs = if grid {
        cell_centres(d.x_min, d.x_max, n_i).collect()
    } else {
        (0..n_i).map(|_| rng.random_range(d.x_min..=d.x_max)).collect()
    };
    let n_left = n_b.div_ceil(2);
    let bc_times: Vec<f64> = if grid {
        cell_centres(d.t_min, d.t_max, n_left)
            .chain(cell_centres(d.t_min, d.t_max, n_b - n_left))
            .collect()
    } else {
        (0..n_b).map(|_| rng.random_range(d.t_min..=d.t_max)).collect()
    };
    let bc_points = bc_times
        .into_iter()
        .enumerate()
        .map(|(j, t)| {
            let end = if j < n_left { End::Left } else { End::Right };
            let x = match end {
                End::Left => d.x_min,
                End::Right => d.x_max,
            };
            BcPoint { end, x, t }
        })
        .collect();
    Ok(CollocationSet {
        domain: d,
        slices,
        ic_xs,
        bc_points,
        seed,
        grid,
    })
}

impl CollocationSet {
    pub fn n_t(&self) -> usize {
        self.slices.len()
    }

    pub fn n_int(&self) -> usize {
        self.slices.iter().map(|s| s.xs.len()).sum()
    }

    /// All interior points in slice order.
    pub fn interior_points(&self) -> Vec<(f64, f64)> {
        self.slices
            .iter()
            .flat_map(|s| s.xs.iter().map(move |&x| (x, s.t)))
            .collect()
    }

    pub fn ic_points(&self) -> Vec<(f64, f64)> {
        self.ic_xs.iter().map(|&x| (x, self.domain.t_min)).collect()
    }

    /// Rows `(role, x, t)` in a fixed order: interior, ic, bc.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        let mut rows: Vec<_> = self.interior_points().into_iter().map(|(x, t)| ("interior", x, t)).collect();
        rows.extend(self.ic_points().into_iter().map(|(x, t)| ("ic", x, t)));
        rows.extend(self.bc_points.iter().map(|p| ("bc", p.x, p.t)));
        rows
    }

    /// SHA-256 over the roles and the exact bit patterns of every point.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (role, x, t) in self.rows() {
            h.update(role.as_bytes());
            h.update(x.to_le_bytes());
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("role,x,t\n");
        for (role, x, t) in self.rows() {
            let _ = writeln!(s, "{role},{x:.16e},{t:.16e}");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
