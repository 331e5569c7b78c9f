//! Dyadic martingales: lazily evaluated maps from dyadic intervals to reals
//! satisfying `S(I) = (S(I^-) + S(I^+)) / 2`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::RwLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::dyadic::{locate_dyadic, DyadicInterval, DyadicRational};
use crate::error::{check_exponent, DomainError};
use crate::holder_functions::HolderFunction;

/// Exact value of the form `sum_k q_k 2^(k*beta)` with rational `q_k`.
///
/// Equality of two such sums as formal expressions implies equality of the
/// reals, which is what the exact checks rely on. Rational values use only
/// the key 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BetaSum {
    terms: BTreeMap<i64, BigRational>,
}

impl BetaSum {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn rational(q: BigRational) -> Self {
        Self::term(0, q)
    }

    pub fn integer(n: i64) -> Self {
        Self::rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn dyadic(d: &DyadicRational) -> Self {
        Self::rational(dyadic_to_rational(d))
    }

    /// `q * 2^(k*beta)`.
    pub fn term(k: i64, q: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !q.is_zero() {
            terms.insert(k, q);
        }
        Self { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The rational value when no `2^(k*beta)` factor with `k != 0` remains.
    pub fn as_rational(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&0).cloned(),
            _ => None,
        }
    }

    pub fn eval(&self, beta: f64) -> f64 {
        self.terms
            .iter()
            .map(|(k, q)| q.to_f64().unwrap_or(f64::NAN) * (*k as f64 * beta).exp2())
            .sum()
    }

    /// Multiply by `2^(k*beta)`.
    pub fn shift(&self, k: i64) -> Self {
        Self { terms: self.terms.iter().map(|(j, q)| (j + k, q.clone())).collect() }
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        Self { terms: self.terms.iter().map(|(j, q)| (*j, q * c)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        for (k, q) in &other.terms {
            let e = terms.entry(*k).or_insert_with(BigRational::zero);
            *e += q;
            if e.is_zero() {
                terms.remove(k);
            }
        }
        Self { terms }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-BigRational::one()))
    }
}

pub fn dyadic_to_rational(d: &DyadicRational) -> BigRational {
    BigRational::new(d.numerator().clone(), BigInt::one() << d.exponent() as usize)
}

/// Interval-keyed martingale. `value` is the double-precision path; `exact`
/// is available for constructions with exact arithmetic.
pub trait Martingale: Sync {
    fn value(&self, i: &DyadicInterval) -> f64;

    fn exact(&self, _i: &DyadicInterval) -> Option<BetaSum> {
        None
    }

    /// Exponent used to evaluate `exact` values that carry `2^(k*beta)` factors.
    fn exact_beta(&self) -> f64 {
        0.0
    }

    /// For `l = 1..=levels`, `[S(I^-), S(I^+)]` where `I` is the level
    /// `l - 1` interval containing `x`. Constructions with cheap path
    /// updates override this.
    fn ladder(&self, x: &DyadicRational, levels: u32) -> Vec<[f64; 2]> {
        (1..=levels)
            .map(|l| {
                let p = locate_dyadic(x, l - 1);
                [self.value(&p.lower()), self.value(&p.upper())]
            })
            .collect()
    }

    /// Increment `S(I) - S(parent(I))`.
    fn increment(&self, i: &DyadicInterval) -> f64 {
        match i.parent() {
            Some(p) => self.value(i) - self.value(&p),
            None => 0.0,
        }
    }
}

impl<M: Martingale + ?Sized> Martingale for &M {
    fn value(&self, i: &DyadicInterval) -> f64 {
        (**self).value(i)
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        (**self).exact(i)
    }
    fn exact_beta(&self) -> f64 {
        (**self).exact_beta()
    }
    fn ladder(&self, x: &DyadicRational, levels: u32) -> Vec<[f64; 2]> {
        (**self).ladder(x, levels)
    }
}

impl<M: Martingale + ?Sized> Martingale for Box<M> {
    fn value(&self, i: &DyadicInterval) -> f64 {
        (**self).value(i)
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        (**self).exact(i)
    }
    fn exact_beta(&self) -> f64 {
        (**self).exact_beta()
    }
    fn ladder(&self, x: &DyadicRational, levels: u32) -> Vec<[f64; 2]> {
        (**self).ladder(x, levels)
    }
}

/// A martingale with a growth exponent `beta in (0,1)`.
pub trait GrowthMartingale: Martingale {
    fn beta(&self) -> f64;
}

/// `S_n(x) = 2 k_n(x) - n`, `k_n` the number of ones among the first `n`
/// binary digits of `x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct BinaryDigit;

pub fn binary_digit_martingale() -> BinaryDigit {
    BinaryDigit
}

impl Martingale for BinaryDigit {
    fn value(&self, i: &DyadicInterval) -> f64 {
        2.0 * i.ones() as f64 - i.level() as f64
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        Some(BetaSum::integer(2 * i.ones() as i64 - i.level() as i64))
    }
}

/// Martingale given by a closure, for experiments and negative controls.
pub struct FnMartingale<F> {
    f: F,
}

impl<F: Fn(&DyadicInterval) -> f64 + Sync> FnMartingale<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(&DyadicInterval) -> f64 + Sync> Martingale for FnMartingale<F> {
    fn value(&self, i: &DyadicInterval) -> f64 {
        (self.f)(i)
    }
}

/// Deterministic 64-bit hash of `(seed, level, index)` (splitmix finalizer).
pub(crate) fn mix(seed: u64, level: u32, index: &BigInt) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(level as u64 + 1);
    for limb in index.iter_u64_digits() {
        h = splitmix(h ^ limb);
    }
    if index.is_negative() {
        h = splitmix(h ^ 0xdead_beef);
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit_uniform(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Martingale with random `+-1` increments; the sign splitting each parent
/// is a hash of the seed and the parent.
#[derive(Clone, Copy, Debug)]
pub struct RandomSigns {
    pub seed: u64,
}

impl RandomSigns {
    fn integer_value(&self, i: &DyadicInterval) -> i64 {
        let mut v = 0i64;
        let mut cur = i.clone();
        while let Some(p) = cur.parent() {
            let up = mix(self.seed, p.level(), p.index()) & 1 == 1;
            let lower = cur.is_lower_child();
            v += if up == lower { 1 } else { -1 };
            cur = p;
        }
        v
    }
}

impl Martingale for RandomSigns {
    fn value(&self, i: &DyadicInterval) -> f64 {
        self.integer_value(i) as f64
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        Some(BetaSum::integer(self.integer_value(i)))
    }
}

/// Random growth martingale: `T(I^-) - T(I) = -(T(I^+) - T(I)) = scale * 2^(n beta) u`
/// with `u` uniform in `[-1, 1]` and `n` the child level. `T_0` is uniform in
/// `[-scale, scale]`.
#[derive(Clone, Copy, Debug)]
pub struct RandomGrowth {
    pub seed: u64,
    pub beta: f64,
    pub scale: f64,
}

impl Martingale for RandomGrowth {
    fn value(&self, i: &DyadicInterval) -> f64 {
        let root = DyadicInterval::unit();
        let mut v = self.scale * (2.0 * unit_uniform(mix(self.seed ^ 1, 0, root.index())) - 1.0);
        let mut cur = i.clone();
        while let Some(p) = cur.parent() {
            let u = 2.0 * unit_uniform(mix(self.seed, p.level(), p.index())) - 1.0;
            let d = self.scale * (cur.level() as f64 * self.beta).exp2() * u;
            v += if cur.is_lower_child() { d } else { -d };
            cur = p;
        }
        v
    }
}

impl GrowthMartingale for RandomGrowth {
    fn beta(&self) -> f64 {
        self.beta
    }
}

/// `S_n([a,b)) = 2^n (f(b) - f(a))`.
pub struct FromFunction<F> {
    pub f: F,
    pub depth: u32,
}

pub fn from_function<F: HolderFunction>(f: F, depth: u32) -> FromFunction<F> {
    FromFunction { f, depth }
}

impl<F: HolderFunction> Martingale for FromFunction<F> {
    fn value(&self, i: &DyadicInterval) -> f64 {
        let a = self.f.eval_dyadic(&i.left());
        let b = self.f.eval_dyadic(&i.right());
        (i.level() as f64).exp2() * (b - a)
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        let a = self.f.eval_exact(&i.left())?;
        let b = self.f.eval_exact(&i.right())?;
        Some(BetaSum::dyadic(&(&b - &a).shl(i.level() as i64)))
    }
}

/// `S_n = sum_{k=1}^n 2^(-k beta) (T_k - T_{k-1})`, so `S_0 = 0`.
pub struct Discount<T> {
    pub t: T,
    pub beta: f64,
}

pub fn discount_transform<T: GrowthMartingale>(t: T) -> Discount<T> {
    let beta = t.beta();
    Discount { t, beta }
}

impl<T: Martingale> Martingale for Discount<T> {
    fn value(&self, i: &DyadicInterval) -> f64 {
        let mut s = 0.0;
        let mut cur = i.clone();
        let mut v = self.t.value(&cur);
        while let Some(p) = cur.parent() {
            let pv = self.t.value(&p);
            s += (-(cur.level() as f64) * self.beta).exp2() * (v - pv);
            cur = p;
            v = pv;
        }
        s
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        let mut s = BetaSum::zero();
        let mut cur = i.clone();
        let mut v = self.t.exact(&cur)?;
        while let Some(p) = cur.parent() {
            let pv = self.t.exact(&p)?;
            s = s.add(&v.sub(&pv).shift(-(cur.level() as i64)));
            cur = p;
            v = pv;
        }
        Some(s)
    }
    fn exact_beta(&self) -> f64 {
        self.beta
    }
}

impl<T: Martingale> Discount<T> {
    /// Largest increment `|S_n - S_{n-1}|` seen to `depth` and whether it
    /// respects the unit bound that `||T||_{beta,*} <= 1` promises.
    pub fn check_declared(&self, depth: u32) -> (f64, bool) {
        let m = star_norm(self, depth);
        (m, m <= 1.0 + 1e-12)
    }
}

/// `T_n = sum_{k=1}^n 2^(k beta) (S_k - S_{k-1})` over the binary digit
/// martingale.
#[derive(Clone, Copy, Debug)]
pub struct Sharpness {
    pub beta: f64,
}

pub fn sharpness_martingale(beta: f64) -> Result<Sharpness, DomainError> {
    check_exponent("beta", beta)?;
    Ok(Sharpness { beta })
}

impl Martingale for Sharpness {
    fn value(&self, i: &DyadicInterval) -> f64 {
        self.exact(i).map(|e| e.eval(self.beta)).unwrap_or(f64::NAN)
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        let mut s = BetaSum::zero();
        for k in 1..=i.level() {
            let sign = if i.digit(k) { 1 } else { -1 };
            s = s.add(&BetaSum::term(k as i64, BigRational::from_integer(BigInt::from(sign))));
        }
        Some(s)
    }
    fn exact_beta(&self) -> f64 {
        self.beta
    }
}

impl GrowthMartingale for Sharpness {
    fn beta(&self) -> f64 {
        self.beta
    }
}

/// Attach an exponent to any martingale.
pub struct WithBeta<M> {
    pub inner: M,
    pub beta: f64,
}

impl<M: Martingale> Martingale for WithBeta<M> {
    fn value(&self, i: &DyadicInterval) -> f64 {
        self.inner.value(i)
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        self.inner.exact(i)
    }
    fn exact_beta(&self) -> f64 {
        self.inner.exact_beta()
    }
    fn ladder(&self, x: &DyadicRational, levels: u32) -> Vec<[f64; 2]> {
        self.inner.ladder(x, levels)
    }
}

impl<M: Martingale> GrowthMartingale for WithBeta<M> {
    fn beta(&self) -> f64 {
        self.beta
    }
}

/// Memoizing wrapper; each interval is evaluated at most once.
pub struct Memo<M> {
    inner: M,
    cache: RwLock<HashMap<DyadicInterval, f64>>,
}

impl<M: Martingale> Memo<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, cache: RwLock::new(HashMap::new()) }
    }

    pub fn cached(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }
}

impl<M: Martingale> Martingale for Memo<M> {
    fn value(&self, i: &DyadicInterval) -> f64 {
        if let Some(v) = self.cache.read().ok().and_then(|c| c.get(i).copied()) {
            return v;
        }
        let mut cache = self.cache.write().expect("memo cache poisoned");
        *cache.entry(i.clone()).or_insert_with(|| self.inner.value(i))
    }
    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        self.inner.exact(i)
    }
    fn exact_beta(&self) -> f64 {
        self.inner.exact_beta()
    }
}

/// `T_n = S_{N n + k} / (N + C)`, a `2^N`-adic martingale read off every
/// `N`-th level of `S` starting at offset `k`.
pub struct Subsample<M> {
    pub s: M,
    pub n: u32,
    pub k: u32,
    pub c: f64,
}

impl<M: Martingale> Subsample<M> {
    pub fn new(s: M, n: u32, k: u32, c: f64) -> Result<Self, DomainError> {
        if n == 0 || k >= n {
            return Err(DomainError::new("subsample needs N >= 1 and 0 <= k < N"));
        }
        Ok(Self { s, n, k, c })
    }

    /// Dyadic level carrying `T_m`.
    pub fn level_of(&self, m: u32) -> u32 {
        self.n * m + self.k
    }

    /// `T_m` on an interval of level `level_of(m)`.
    pub fn value(&self, m: u32, i: &DyadicInterval) -> f64 {
        assert_eq!(i.level(), self.level_of(m));
        self.s.value(i) / (self.n as f64 + self.c)
    }

    /// `max |T_{m+1} - T_m|` over `m < steps`, by enumeration.
    pub fn max_increment(&self, steps: u32) -> f64 {
        let mut worst = 0.0f64;
        for m in 0..steps {
            let fine = self.level_of(m + 1);
            for i in DyadicInterval::level_iter(fine) {
                let p = i.ancestor(self.level_of(m));
                worst = worst.max((self.value(m + 1, &i) - self.value(m, &p)).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CancellationReport {
    pub max_violation: f64,
    pub worst: Option<DyadicInterval>,
    /// Whether every check was done in exact arithmetic.
    pub exact: bool,
    pub checked: u64,
}

/// Exhaustive check of `S(I) = (S(I^-)+S(I^+))/2` for all `I` of level `< depth`.
/// Violations are measured relative to `max(1, |S(I)|)`.
pub fn check_cancellation<M: Martingale + ?Sized>(s: &M, depth: u32) -> CancellationReport {
    let mut rep = CancellationReport { max_violation: 0.0, worst: None, exact: true, checked: 0 };
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    for level in 0..depth {
        for i in DyadicInterval::level_iter(level) {
            let (a, b) = (i.lower(), i.upper());
            rep.checked += 1;
            let exact = match (s.exact(&i), s.exact(&a), s.exact(&b)) {
                (Some(v), Some(x), Some(y)) => Some(v.sub(&x.add(&y).scale(&half))),
                _ => None,
            };
            let viol = match exact {
                Some(diff) if diff.is_zero() => 0.0,
                Some(diff) => diff.eval(s.exact_beta()).abs().max(f64::MIN_POSITIVE),
                None => {
                    rep.exact = false;
                    let v = s.value(&i);
                    let m = 0.5 * (s.value(&a) + s.value(&b));
                    (v - m).abs() / v.abs().max(1.0)
                }
            };
            if viol > rep.max_violation {
                rep.max_violation = viol;
                rep.worst = Some(i);
            }
        }
    }
    rep
}

/// Visit every interval of level `1..=depth` with its value and its parent's.
fn for_each_edge<M: Martingale + ?Sized>(s: &M, depth: u32, mut f: impl FnMut(&DyadicInterval, f64, f64)) {
    fn rec<M: Martingale + ?Sized>(
        s: &M,
        i: &DyadicInterval,
        v: f64,
        depth: u32,
        f: &mut dyn FnMut(&DyadicInterval, f64, f64),
    ) {
        if i.level() >= depth {
            return;
        }
        for c in [i.lower(), i.upper()] {
            let cv = s.value(&c);
            f(&c, cv, v);
            rec(s, &c, cv, depth, f);
        }
    }
    let root = DyadicInterval::unit();
    let v = s.value(&root);
    rec(s, &root, v, depth, &mut f);
}

/// `sup_{n <= depth} ||S_n - S_{n-1}||_inf` over `[0,1)`.
pub fn star_norm<M: Martingale + ?Sized>(s: &M, depth: u32) -> f64 {
    let mut m = 0.0f64;
    for_each_edge(s, depth, |_, v, pv| m = m.max((v - pv).abs()));
    m
}

/// `sup_{n <= depth} 2^(-n beta) ||T_n - T_{n-1}||_inf`.
pub fn beta_star_norm<M: Martingale + ?Sized>(t: &M, beta: f64, depth: u32) -> f64 {
    let mut m = 0.0f64;
    for_each_edge(t, depth, |c, v, pv| {
        m = m.max((-(c.level() as f64) * beta).exp2() * (v - pv).abs())
    });
    m
}

/// `sup_{n <= depth} 2^(-n beta) ||T_n||_inf`.
pub fn beta_norm<M: Martingale + ?Sized>(t: &M, beta: f64, depth: u32) -> f64 {
    let mut m = t.value(&DyadicInterval::unit()).abs();
    for_each_edge(t, depth, |c, v, _| m = m.max((-(c.level() as f64) * beta).exp2() * v.abs()));
    m
}

/// Same as [`beta_norm`] for `T_n - T_0`.
pub fn beta_norm_centered<M: Martingale + ?Sized>(t: &M, beta: f64, depth: u32) -> f64 {
    let t0 = t.value(&DyadicInterval::unit());
    let mut m = 0.0f64;
    for_each_edge(t, depth, |c, v, _| {
        m = m.max((-(c.level() as f64) * beta).exp2() * (v - t0).abs())
    });
    m
}

/// Max residual of
/// `S_n = (1 - 2^-beta) sum_{k=1}^{n-1} 2^(-k beta) T_k + 2^(-n beta) T_n - 2^-beta T_0`
/// with `S = discount_transform(T)` summed directly, over all intervals to `depth`.
pub fn summation_by_parts_check<M: Martingale + ?Sized>(t: &M, beta: f64, depth: u32) -> f64 {
    fn rec<M: Martingale + ?Sized>(
        t: &M,
        beta: f64,
        i: &DyadicInterval,
        prev_t: f64,
        direct: f64,
        weighted: f64,
        t0: f64,
        depth: u32,
        worst: &mut f64,
    ) {
        // direct: sum_{k<=n} 2^(-k b)(T_k - T_{k-1}); weighted: sum_{k=1}^{n-1} 2^(-k b) T_k
        let n = i.level();
        let tn = t.value(i);
        let w = (-(n as f64) * beta).exp2();
        let direct = if n == 0 { 0.0 } else { direct + w * (tn - prev_t) };
        if n >= 1 {
            let rhs = (1.0 - (-beta).exp2()) * weighted + w * tn - (-beta).exp2() * t0;
            let scale = 1.0f64.max(direct.abs());
            *worst = worst.max((direct - rhs).abs() / scale);
        }
        if n >= depth {
            return;
        }
        let weighted = if n >= 1 { weighted + w * tn } else { 0.0 };
        for c in [i.lower(), i.upper()] {
            rec(t, beta, &c, tn, direct, weighted, t0, depth, worst);
        }
    }
    let root = DyadicInterval::unit();
    let t0 = t.value(&root);
    let mut worst = 0.0;
    rec(t, beta, &root, t0, 0.0, 0.0, t0, depth, &mut worst);
    worst
}

/// CSV rows `(level, index, value)` for every interval to `depth`.
pub fn dump_csv<M: Martingale + ?Sized, W: Write>(s: &M, depth: u32, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "level,index,value")?;
    for level in 0..=depth {
        for i in DyadicInterval::level_iter(level) {
            writeln!(out, "{},{},{:.17e}", level, i.index(), s.value(&i))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn addr(bits: &str) -> DyadicInterval {
        DyadicInterval::new(bits.len() as u32, u64::from_str_radix(bits, 2).unwrap())
    }

    #[test]
    fn binary_examples() {
        let s = binary_digit_martingale();
        assert_eq!(s.value(&addr("00000")), -5.0);
        assert_eq!(s.value(&addr("10101")), 1.0);
        assert_eq!(s.value(&addr("11111")), 5.0);
        assert_eq!(s.value(&DyadicInterval::unit()), 0.0);
    }

    #[test]
    fn binary_norm_and_cancellation() {
        let s = binary_digit_martingale();
        for d in 1..=10 {
            assert_eq!(star_norm(&s, d), 1.0);
        }
        let rep = check_cancellation(&s, 10);
        assert_eq!(rep.max_violation, 0.0);
        assert!(rep.exact);
    }

    #[test]
    fn broken_evaluator_is_named() {
        let bad = FnMartingale::new(|i: &DyadicInterval| {
            if *i == DyadicInterval::new(3, 5) {
                7.0
            } else {
                0.0
            }
        });
        let rep = check_cancellation(&bad, 6);
        assert_eq!(rep.worst, Some(DyadicInterval::new(2, 2)));
        assert!(rep.max_violation > 0.0);
    }

    #[test]
    fn zero_martingale_norms() {
        let z = FnMartingale::new(|_: &DyadicInterval| 0.0);
        assert_eq!(star_norm(&z, 8), 0.0);
        assert_eq!(summation_by_parts_check(&z, 0.5, 8), 0.0);
        let d = Discount { t: &z, beta: 0.5 };
        assert_eq!(star_norm(&d, 6), 0.0);
    }

    #[test]
    fn sharpness_examples() {
        let t = sharpness_martingale(0.5).unwrap();
        assert_abs_diff_eq!(t.value(&DyadicInterval::new(1, 1)), 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(t.value(&DyadicInterval::unit()), 0.0);
        assert_abs_diff_eq!(beta_star_norm(&t, 0.5, 12), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sharpness_round_trip_is_exact() {
        let back = discount_transform(sharpness_martingale(0.5).unwrap());
        let s = binary_digit_martingale();
        for level in 0..=9 {
            for i in DyadicInterval::level_iter(level) {
                assert_eq!(back.exact(&i), s.exact(&i), "{i}");
            }
        }
    }

    #[test]
    fn single_jump_discount() {
        let beta: f64 = 0.3;
        let t = FnMartingale::new(move |i: &DyadicInterval| match i.level() {
            0 => 0.0,
            _ if i.ancestor(1).index_u64() == Some(0) => beta.exp2(),
            _ => -beta.exp2(),
        });
        let s = Discount { t, beta };
        assert_abs_diff_eq!(s.value(&DyadicInterval::new(1, 0)), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.value(&DyadicInterval::new(3, 1)), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn summation_by_parts_level_one() {
        // At n = 1 the identity is the definition of S_1.
        let t = RandomGrowth { seed: 3, beta: 0.4, scale: 1.0 };
        assert!(summation_by_parts_check(&t, 0.4, 1) < 1e-15);
    }

    #[test]
    fn random_growth_bound() {
        let t = RandomGrowth { seed: 11, beta: 0.6, scale: 0.5 };
        assert!(beta_star_norm(&t, 0.6, 10) <= 0.5);
        assert!(check_cancellation(&t, 10).max_violation < 1e-12);
    }

    #[test]
    fn memo_matches_inner() {
        let m = Memo::new(RandomSigns { seed: 5 });
        for i in DyadicInterval::level_iter(6) {
            assert_eq!(m.value(&i), RandomSigns { seed: 5 }.value(&i));
            assert_eq!(m.value(&i), m.value(&i));
        }
        assert_eq!(m.cached(), 64);
    }

    #[test]
    fn subsample_increments_bounded() {
        let t = Subsample::new(binary_digit_martingale(), 3, 1, 0.0).unwrap();
        assert!(t.max_increment(4) <= 1.0 + 1e-12);
        assert!(Subsample::new(binary_digit_martingale(), 3, 3, 0.0).is_err());
    }
}
