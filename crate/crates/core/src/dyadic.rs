//! Dyadic intervals `[j 2^-n, (j+1) 2^-n)` and exact dyadic rationals.
//!
//! Intervals are half-open, so every real lies in exactly one interval per
//! level and ties at endpoints go to the right-hand interval.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::DepthCap;

pub const DEFAULT_MAX_DEPTH: u32 = 48;

/// Global depth cap; `OSC_MAX_DEPTH` overrides the default of 48.
pub fn max_depth() -> u32 {
    std::env::var("OSC_MAX_DEPTH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_DEPTH)
}

/// `numerator * 2^-exponent`, kept in lowest terms.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicRational {
    num: BigInt,
    exp: u32,
}

impl DyadicRational {
    pub fn new(num: impl Into<BigInt>, exp: u32) -> Self {
        let mut num = num.into();
        let mut exp = exp;
        if num.is_zero() {
            return Self { num, exp: 0 };
        }
        let tz = num.trailing_zeros().unwrap_or(0).min(exp as u64) as u32;
        if tz > 0 {
            num >>= tz;
            exp -= tz;
        }
        Self { num, exp }
    }

    pub fn zero() -> Self {
        Self::new(0, 0)
    }

    pub fn one() -> Self {
        Self::new(1, 0)
    }

    pub fn from_int(n: impl Into<BigInt>) -> Self {
        Self::new(n, 0)
    }

    /// `2^-k`.
    pub fn pow2_neg(k: u32) -> Self {
        Self::new(1, k)
    }

    /// Exact conversion of a finite double. Returns `None` for NaN/inf.
    pub fn from_f64(x: f64) -> Option<Self> {
        if !x.is_finite() {
            return None;
        }
        if x == 0.0 {
            return Some(Self::zero());
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let raw_exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e) = if raw_exp == 0 {
            (frac, -1074i64)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        let m = BigInt::from(mant) * sign;
        Some(if e >= 0 {
            Self::new(m << (e as usize), 0)
        } else {
            Self::new(m, (-e) as u32)
        })
    }

    pub fn numerator(&self) -> &BigInt {
        &self.num
    }

    pub fn exponent(&self) -> u32 {
        self.exp
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.num.is_negative()
    }

    /// Nearest double (rounding through the top 64 bits).
    pub fn to_f64(&self) -> f64 {
        if self.num.is_zero() {
            return 0.0;
        }
        let bits = self.num.bits();
        let shift = bits.saturating_sub(64);
        let top = (&self.num >> shift).to_f64().unwrap_or(0.0);
        let e = shift as i64 - self.exp as i64;
        scale_pow2(top, e)
    }

    /// The numerator at a (finer) exponent `k >= self.exponent()`.
    fn numerator_at(&self, k: u32) -> BigInt {
        debug_assert!(k >= self.exp);
        &self.num << (k - self.exp) as usize
    }

    /// `floor(self * 2^n)`.
    pub fn floor_scaled(&self, n: u32) -> BigInt {
        if n >= self.exp {
            &self.num << (n - self.exp) as usize
        } else {
            self.num.div_floor(&(BigInt::one() << (self.exp - n) as usize))
        }
    }

    /// `ceil(self * 2^n)`.
    pub fn ceil_scaled(&self, n: u32) -> BigInt {
        if n >= self.exp {
            &self.num << (n - self.exp) as usize
        } else {
            self.num.div_ceil(&(BigInt::one() << (self.exp - n) as usize))
        }
    }

    pub fn floor(&self) -> BigInt {
        self.floor_scaled(0)
    }

    /// Fractional part in `[0, 1)`.
    pub fn fract(&self) -> Self {
        self - &Self::from_int(self.floor())
    }

    /// Multiply by `2^k` (k may be negative).
    pub fn shl(&self, k: i64) -> Self {
        if k >= 0 {
            let k = k as u32;
            if k <= self.exp {
                Self::new(self.num.clone(), self.exp - k)
            } else {
                Self::new(&self.num << (k - self.exp) as usize, 0)
            }
        } else {
            Self::new(self.num.clone(), self.exp + (-k) as u32)
        }
    }

    /// Binary digit `k >= 1` after the point of the fractional part.
    pub fn digit(&self, k: u32) -> bool {
        // floor(num * 2^(k - exp)) is odd iff bit exp - k of num is set
        // (two's complement for negative numerators)
        k <= self.exp && self.num.bit((self.exp - k) as u64)
    }
}

fn scale_pow2(x: f64, e: i64) -> f64 {
    // powi on 2.0 is exact while the result is representable; split to avoid
    // intermediate overflow/underflow.
    let mut v = x;
    let mut e = e;
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v * 2f64.powi(e as i32)
}

impl Ord for DyadicRational {
    fn cmp(&self, other: &Self) -> Ordering {
        let k = self.exp.max(other.exp);
        self.numerator_at(k).cmp(&other.numerator_at(k))
    }
}

impl PartialOrd for DyadicRational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for &DyadicRational {
    type Output = DyadicRational;
    fn add(self, rhs: &DyadicRational) -> DyadicRational {
        let k = self.exp.max(rhs.exp);
        DyadicRational::new(self.numerator_at(k) + rhs.numerator_at(k), k)
    }
}

impl Sub for &DyadicRational {
    type Output = DyadicRational;
    fn sub(self, rhs: &DyadicRational) -> DyadicRational {
        let k = self.exp.max(rhs.exp);
        DyadicRational::new(self.numerator_at(k) - rhs.numerator_at(k), k)
    }
}

impl Mul for &DyadicRational {
    type Output = DyadicRational;
    fn mul(self, rhs: &DyadicRational) -> DyadicRational {
        DyadicRational::new(&self.num * &rhs.num, self.exp + rhs.exp)
    }
}

impl Neg for &DyadicRational {
    type Output = DyadicRational;
    fn neg(self) -> DyadicRational {
        DyadicRational { num: -&self.num, exp: self.exp }
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for DyadicRational {
            type Output = DyadicRational;
            fn $m(self, rhs: DyadicRational) -> DyadicRational {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for DyadicRational {
    type Output = DyadicRational;
    fn neg(self) -> DyadicRational {
        -&self
    }
}

impl fmt::Display for DyadicRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/2^{}", self.num, self.exp)
        }
    }
}

/// `[index * 2^-level, (index + 1) * 2^-level)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    level: u32,
    index: BigInt,
}

impl DyadicInterval {
    pub fn new(level: u32, index: impl Into<BigInt>) -> Self {
        Self { level, index: index.into() }
    }

    pub fn unit() -> Self {
        Self::new(0, 0)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn index(&self) -> &BigInt {
        &self.index
    }

    /// Index as `u64` when it fits (levels up to 64 on the unit interval).
    pub fn index_u64(&self) -> Option<u64> {
        self.index.to_u64()
    }

    pub fn left(&self) -> DyadicRational {
        DyadicRational::new(self.index.clone(), self.level)
    }

    pub fn right(&self) -> DyadicRational {
        DyadicRational::new(&self.index + 1, self.level)
    }

    pub fn midpoint(&self) -> DyadicRational {
        DyadicRational::new((&self.index << 1) + 1, self.level + 1)
    }

    pub fn length(&self) -> DyadicRational {
        DyadicRational::pow2_neg(self.level)
    }

    pub fn length_f64(&self) -> f64 {
        scale_pow2(1.0, -(self.level as i64))
    }

    /// Left half `I^-` without a depth check.
    pub fn lower(&self) -> Self {
        Self::new(self.level + 1, &self.index << 1)
    }

    /// Right half `I^+` without a depth check.
    pub fn upper(&self) -> Self {
        Self::new(self.level + 1, (&self.index << 1) + 1)
    }

    /// `(I^-, I^+)`, refusing to go beyond `max_depth`.
    pub fn children(&self, max_depth: u32) -> Result<(Self, Self), DepthCap> {
        if self.level >= max_depth {
            return Err(DepthCap { requested: self.level + 1, cap: max_depth });
        }
        Ok((self.lower(), self.upper()))
    }

    pub fn parent(&self) -> Option<Self> {
        if self.level == 0 {
            None
        } else {
            Some(Self::new(self.level - 1, self.index.div_floor(&BigInt::from(2))))
        }
    }

    /// Ancestor at a coarser level (itself when `level == self.level`).
    pub fn ancestor(&self, level: u32) -> Self {
        assert!(level <= self.level, "ancestor level above interval level");
        Self::new(level, self.index.div_floor(&(BigInt::one() << (self.level - level) as usize)))
    }

    pub fn is_lower_child(&self) -> bool {
        self.level > 0 && self.index.is_even()
    }

    /// Same-length interval immediately to the left; `None` when the left
    /// endpoint is 0 (or negative) since those fall out of `[0,1)`.
    pub fn left_neighbor(&self) -> Option<Self> {
        if self.index.is_positive() {
            Some(Self::new(self.level, &self.index - 1))
        } else {
            None
        }
    }

    pub fn contains(&self, x: &DyadicRational) -> bool {
        &self.left() <= x && x < &self.right()
    }

    pub fn contains_interval(&self, other: &Self) -> bool {
        other.level >= self.level && other.ancestor(self.level) == *self
    }

    /// Digit `k` (1-based, counted from the top) of the address of this
    /// interval inside its unit-length ancestor.
    pub fn digit(&self, k: u32) -> bool {
        debug_assert!(k >= 1 && k <= self.level);
        self.index.bit((self.level - k) as u64)
    }

    /// Number of ones in the address, for intervals inside `[0,1)`.
    pub fn ones(&self) -> u64 {
        let modulus = BigInt::one() << self.level as usize;
        let j = self.index.mod_floor(&modulus);
        j.magnitude().count_ones()
    }

    /// All intervals of `level` inside `[0,1)`; only for small levels.
    pub fn level_iter(level: u32) -> impl Iterator<Item = DyadicInterval> {
        assert!(level < 40, "refusing to enumerate 2^{level} intervals");
        (0u64..(1u64 << level)).map(move |j| DyadicInterval::new(level, j))
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.left(), self.right())
    }
}

/// Interval of level `n` containing the double `x`.
pub fn locate(x: f64, n: u32) -> DyadicInterval {
    let d = DyadicRational::from_f64(x).expect("locate needs a finite real");
    locate_dyadic(&d, n)
}

pub fn locate_dyadic(x: &DyadicRational, n: u32) -> DyadicInterval {
    DyadicInterval::new(n, x.floor_scaled(n))
}

#[derive(Debug, Error, PartialEq)]
pub enum WhitneyError {
    #[error("whitney needs 0 < h <= 1, got h = {0}")]
    BadLength(String),
}

/// Tiling of `[start, start + h)` by dyadic intervals, in left-to-right order.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitneyDecomposition {
    pub start: DyadicRational,
    pub end: DyadicRational,
    pub pieces: Vec<DyadicInterval>,
    /// Length left uncovered because the tiling reached the depth cap.
    pub truncated: Option<DyadicRational>,
}

impl WhitneyDecomposition {
    pub fn endpoints(&self) -> Vec<DyadicRational> {
        let mut out = Vec::with_capacity(self.pieces.len() + 1);
        if let Some(first) = self.pieces.first() {
            out.push(first.left());
        }
        out.extend(self.pieces.iter().map(|p| p.right()));
        out
    }

    pub fn per_rank_counts(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for p in &self.pieces {
            *m.entry(p.level()).or_insert(0) += 1;
        }
        m
    }

    pub fn max_rank_multiplicity(&self) -> usize {
        self.per_rank_counts().values().copied().max().unwrap_or(0)
    }

    pub fn total_length(&self) -> DyadicRational {
        self.pieces
            .iter()
            .fold(DyadicRational::zero(), |acc, p| &acc + &p.length())
    }
}

/// Whitney decomposition of `[x, x + h)`.
///
/// Picks the coarsest dyadic point `m` in `[x, x+h]`, then tiles `[x, m)` and
/// `[m, x+h)` by the binary digits of the two gaps, largest pieces next to
/// `m`. Each rank appears at most twice. Pieces finer than `max_depth` are
/// not produced; the uncovered length is reported in `truncated`.
pub fn whitney(
    x: &DyadicRational,
    h: &DyadicRational,
    max_depth: u32,
) -> Result<WhitneyDecomposition, WhitneyError> {
    if h.is_negative() || h.is_zero() || h > &DyadicRational::one() {
        return Err(WhitneyError::BadLength(h.to_string()));
    }
    let end = x + h;
    let mut level = 0u32;
    let m = loop {
        let c = x.ceil_scaled(level);
        let cand = DyadicRational::new(c, level);
        if cand <= end {
            break cand;
        }
        level += 1;
    };

    let mut lost = DyadicRational::zero();
    // [x, m): walk leftwards from m.
    let mut left_pieces = Vec::new();
    let mut gap = &m - x;
    let mut cursor = m.clone();
    while !gap.is_zero() {
        let k = top_digit_level(&gap);
        if k > max_depth {
            lost = &lost + &gap;
            break;
        }
        let len = DyadicRational::pow2_neg(k);
        cursor = &cursor - &len;
        left_pieces.push(DyadicInterval::new(k, cursor.floor_scaled(k)));
        gap = &gap - &len;
    }
    left_pieces.reverse();

    // [m, end): walk rightwards from m.
    let mut pieces = left_pieces;
    let mut gap = &end - &m;
    let mut cursor = m;
    while !gap.is_zero() {
        let k = top_digit_level(&gap);
        if k > max_depth {
            lost = &lost + &gap;
            break;
        }
        pieces.push(DyadicInterval::new(k, cursor.floor_scaled(k)));
        cursor = &cursor + &DyadicRational::pow2_neg(k);
        gap = &gap - &DyadicRational::pow2_neg(k);
    }

    Ok(WhitneyDecomposition {
        start: x.clone(),
        end,
        pieces,
        truncated: if lost.is_zero() { None } else { Some(lost) },
    })
}

/// Level `k` of the leading binary digit of `0 < g <= 1`, i.e. `2^-k <= g < 2^-k+1`.
fn top_digit_level(g: &DyadicRational) -> u32 {
    debug_assert!(!g.is_negative() && !g.is_zero());
    let bits = g.numerator().bits() as i64;
    let k = g.exponent() as i64 - (bits - 1);
    debug_assert!(k >= 0, "gap exceeds 1");
    k as u32
}
