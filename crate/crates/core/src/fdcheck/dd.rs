//! Double-double numbers: an unevaluated sum `hi + lo` with |lo| <= ulp(hi)/2,
//! about 32 significant digits (transcendentals to roughly 1e-31 relative).

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[cfg(target_feature = "fma")]
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

// Without hardware FMA, `mul_add` is a slow library call; Dekker's
// splitting gives the same exact error term.
#[cfg(not(target_feature = "fma"))]
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    #[inline]
    fn split(a: f64) -> (f64, f64) {
        let t = 134_217_729.0 * a;
        let hi = t - (t - a);
        (hi, a - hi)
    }
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn sqr(self) -> Self {
        self * self
    }

    /// `self * 2^k` for small `|k|`, exact.
    #[inline]
    pub fn pow2(self, k: i32) -> Self {
        let f = match k {
            0 => return self,
            1 => 2.0,
            -1 => 0.5,
            -2 => 0.25,
            _ => 2f64.powi(k),
        };
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    /// `self * 2^k`, exact.
    fn ldexp(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn powi(self, n: usize) -> Self {
        (0..n).fold(Dd::ONE, |acc, _| acc * self)
    }

    pub fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    pub fn div_f64(self, b: f64) -> Self {
        let q1 = self.hi / b;
        let (p, e) = two_prod(q1, b);
        let r = (self.hi - p - e + self.lo) / b;
        let (hi, lo) = quick_two_sum(q1, r);
        Dd { hi, lo }
    }

    /// `self + a * b` with a cheaper final addition: the absolute error stays
    /// within a few units of 1e-32 times the operand magnitudes, but the
    /// relative error of a cancelling sum is not bounded.
    #[inline]
    pub fn mul_acc(self, a: Dd, b: Dd) -> Self {
        let p = a * b;
        let (s, e) = two_sum(self.hi, p.hi);
        let (hi, lo) = quick_two_sum(s, e + (self.lo + p.lo));
        Dd { hi, lo }
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Dd::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        // x = k ln2 + m/64 + s with |s| <= 1/128
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2.mul_f64(k);
        let m = (r.hi * TABLE_DENSITY).round();
        let s = r - Dd::new(m / TABLE_DENSITY);
        let t = tables().exp[(m as i64 + TABLE_HALF as i64) as usize];
        (t + t * expm1_reduced(s)).ldexp(k as i32)
    }

    /// `exp(x) - 1` without cancellation near 0.
    pub fn expm1(self) -> Self {
        let a = self.hi.abs();
        if a <= 0.5 / TABLE_DENSITY {
            expm1_reduced(self)
        } else if a < TABLE_HALF as f64 / TABLE_DENSITY {
            let m = (self.hi * TABLE_DENSITY).round();
            let s = self - Dd::new(m / TABLE_DENSITY);
            let j = (m as i64 + TABLE_HALF as i64) as usize;
            let tb = tables();
            tb.expm1[j] + tb.exp[j] * expm1_reduced(s)
        } else {
            self.exp() - Dd::ONE
        }
    }

    /// `tanh(z + d)` given `y = tanh(z)`, by the addition formula; cheap
    /// when `|d|` is small.
    pub fn tanh_shifted(z: Dd, y: Dd, d: Dd) -> Self {
        if d.hi.abs() > SHIFT_LIMIT {
            return (z + d).tanh();
        }
        let d2 = d.sqr();
        let c = &tables().tanh_odd;
        let mut p = c[4];
        for ck in c[..4].iter().rev() {
            p = ck.mul_acc(p, d2);
        }
        let t = d.mul_acc(d * d2, p);
        (y + t) / Dd::ONE.mul_acc(y, t)
    }

    pub fn tanh(self) -> Self {
        if self.hi.abs() > 40.0 {
            return Dd::new(self.hi.signum());
        }
        // tanh x = e / (e + 2) with e = expm1(2x).
        let e = (self + self).expm1();
        e / (e + Dd::new(2.0))
    }
}

/// Table entries `exp(j / 64)` for `|j| <= 24`, which covers `|r| <= ln2/2`.
const TABLE_DENSITY: f64 = 64.0;
const TABLE_HALF: usize = 24;
const INV_FACT_LEN: usize = 40;
/// Largest shift for the short odd series in `tanh_shifted`; the first
/// omitted term is below 1e-36 relative.
const SHIFT_LIMIT: f64 = 1e-3;
/// Horner terms used for `|s| <= 1/128`.
const REDUCED_TERMS: usize = 13;

struct Tables {
    inv_fact: [Dd; INV_FACT_LEN],
    /// Odd tanh series coefficients after the leading 1.
    tanh_odd: [Dd; 5],
    exp: Vec<Dd>,
    expm1: Vec<Dd>,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut inv_fact = [Dd::ONE; INV_FACT_LEN];
        for k in 1..INV_FACT_LEN {
            inv_fact[k] = inv_fact[k - 1].div_f64(k as f64);
        }
        // full series at |x| <= 3/8; 39 terms reach far below 1e-32
        let expm1: Vec<Dd> = (0..=2 * TABLE_HALF)
            .map(|j| {
                let x = Dd::new((j as f64 - TABLE_HALF as f64) / TABLE_DENSITY);
                let mut p = inv_fact[INV_FACT_LEN - 1];
                for c in inv_fact[1..INV_FACT_LEN - 1].iter().rev() {
                    p = p * x + *c;
                }
                p * x
            })
            .collect();
        let exp = expm1.iter().map(|e| *e + Dd::ONE).collect();
        let q = |a: f64, b: f64| Dd::new(a) / Dd::new(b);
        let tanh_odd = [q(-1.0, 3.0), q(2.0, 15.0), q(-17.0, 315.0), q(62.0, 2835.0), q(-1382.0, 155_925.0)];
        Tables {
            inv_fact,
            tanh_odd,
            exp,
            expm1,
        }
    })
}

/// `exp(s) - 1` for `|s| <= 1/128`.
fn expm1_reduced(s: Dd) -> Dd {
    let c = &tables().inv_fact;
    let mut p = c[REDUCED_TERMS];
    for ck in c[1..REDUCED_TERMS].iter().rev() {
        p = ck.mul_acc(p, s);
    }
    p * s
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd::new(v)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl AddAssign for Dd {
    #[inline]
    fn add_assign(&mut self, b: Dd) {
        *self = *self + b;
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}
