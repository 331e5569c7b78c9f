//! The entropy function, the product bound behind the dimension estimate,
//! the mass-distribution measure and exact level-set counts.

use std::collections::HashSet;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, DyadicRational};
use crate::error::DomainError;
use crate::martingale::{dyadic_to_rational, Martingale};

/// `(1+e)/2 log2(2/(1+e)) + (1-e)/2 log2(2/(1-e))`, with the limits at 0 and 1.
pub fn entropy_phi(eta: f64) -> Result<f64, DomainError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(DomainError::new(format!("eta must lie in [0,1], got {eta}")));
    }
    let a = (1.0 + eta) * eta.ln_1p();
    let b = if eta == 1.0 { 0.0 } else { (1.0 - eta) * (-eta).ln_1p() };
    Ok(1.0 - (a + b) / (2.0 * std::f64::consts::LN_2))
}

/// `2^(-N Phi(eta))` as an exact rational, when `N(1 +- eta)/2` are integers:
/// it equals `((1+eta)/2)^p ((1-eta)/2)^q` with `p = N(1+eta)/2`, `q = N - p`.
pub fn entropy_bound_exact(n: u64, eta: &BigRational) -> Option<BigRational> {
    let two = BigRational::from_integer(2.into());
    let p = BigRational::from_integer(n.into()) * (BigRational::one() + eta) / &two;
    if !p.is_integer() {
        return None;
    }
    let p = p.to_integer().to_u64()?;
    let up = (BigRational::one() + eta) / &two;
    let down = (BigRational::one() - eta) / &two;
    Some(pow_rational(&up, p) * pow_rational(&down, n - p))
}

fn pow_rational(x: &BigRational, n: u64) -> BigRational {
    num_traits::pow::pow(x.clone(), n as usize)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProductBound {
    pub n: usize,
    /// `log2 prod (1 + eta x_k)/2`.
    pub product_log2: f64,
    /// `-N Phi(eta)`.
    pub bound_log2: f64,
    /// Whether `sum x_k >= eta N`.
    pub hypothesis: bool,
    /// `Some(product >= bound)` under the hypothesis, `None` otherwise.
    pub holds: Option<bool>,
}

impl ProductBound {
    pub fn product(&self) -> f64 {
        self.product_log2.exp2()
    }

    pub fn bound(&self) -> f64 {
        self.bound_log2.exp2()
    }

    pub fn margin_log2(&self) -> f64 {
        self.product_log2 - self.bound_log2
    }
}

/// Both sides of `prod (1 + eta x_k)/2 >= 2^(-N Phi(eta))`, in log2 so long
/// inputs do not underflow.
pub fn lemma32_bound(xs: &[f64], eta: f64) -> Result<ProductBound, DomainError> {
    let phi = entropy_phi(eta)?;
    if let Some(x) = xs.iter().find(|x| !(x.abs() <= 1.0)) {
        return Err(DomainError::new(format!("entries must lie in [-1,1], got {x}")));
    }
    let n = xs.len();
    let product_log2: f64 = xs.iter().map(|x| ((1.0 + eta * x) / 2.0).log2()).sum();
    let bound_log2 = -(n as f64) * phi;
    let sum: f64 = xs.iter().sum();
    let hypothesis = sum >= eta * n as f64;
    // slack for the rounding of N logarithms
    let slack = 1e-12 * (n as f64 + 1.0);
    let holds = hypothesis.then(|| product_log2 >= bound_log2 - slack);
    Ok(ProductBound { n, product_log2, bound_log2, hypothesis, holds })
}

/// The left-hand product in exact arithmetic.
pub fn lemma32_product_exact(xs: &[BigRational], eta: &BigRational) -> BigRational {
    let two = BigRational::from_integer(2.into());
    xs.iter().fold(BigRational::one(), |acc, x| acc * (BigRational::one() + eta * x) / &two)
}

/// The measure `mu([0,1)) = 1`, `mu(I^-) = (1 + eta (S(I^-) - S(I)))/2 mu(I)`.
///
/// The lower-child ratio is rounded to a double once and the upper one is
/// its exact complement, so `mu(I^-) + mu(I^+) = mu(I)` holds exactly.
pub struct MassMeasure<M> {
    pub s: M,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioViolation {
    pub level: u32,
    pub index: String,
    pub increment: f64,
}

pub fn mass_measure<M: Martingale>(s: M, eta: f64) -> Result<MassMeasure<M>, DomainError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(DomainError::new(format!("eta must lie in (0,1), got {eta}")));
    }
    Ok(MassMeasure { s, eta })
}

impl<M: Martingale> MassMeasure<M> {
    /// Ratio for the lower child given `[S(I^-), S(I^+)]`.
    fn lower_ratio(&self, pair: [f64; 2]) -> f64 {
        let d = 0.5 * (pair[0] - pair[1]);
        0.5 * (1.0 + self.eta * d)
    }

    fn ratios(&self, i: &DyadicInterval) -> Result<Vec<(DyadicRational, bool)>, RatioViolation> {
        let n = i.level();
        if n == 0 {
            return Ok(Vec::new());
        }
        let x = i.left();
        let ladder = self.s.ladder(&x, n);
        let mut out = Vec::with_capacity(n as usize);
        for l in 1..=n {
            let pair = ladder[l as usize - 1];
            let r = self.lower_ratio(pair);
            if !(0.0..=1.0).contains(&r) {
                let a = i.ancestor(l);
                return Err(RatioViolation {
                    level: l,
                    index: a.index().to_string(),
                    increment: 0.5 * (pair[0] - pair[1]),
                });
            }
            out.push((DyadicRational::from_f64(r).expect("finite ratio"), i.digit(l)));
        }
        Ok(out)
    }

    /// Exact dyadic mass.
    pub fn mass(&self, i: &DyadicInterval) -> Result<DyadicRational, RatioViolation> {
        let one = DyadicRational::one();
        let mut acc = one.clone();
        for (r, upper) in self.ratios(i)? {
            let f = if upper { &one - &r } else { r };
            acc = &acc * &f;
        }
        Ok(acc)
    }

    /// `log2 mu(I)`, usable at any depth.
    pub fn mass_log2(&self, i: &DyadicInterval) -> Result<f64, RatioViolation> {
        let one = DyadicRational::one();
        let mut acc = 0.0;
        for (r, upper) in self.ratios(i)? {
            let f = if upper { (&one - &r).to_f64() } else { r.to_f64() };
            acc += f.log2();
        }
        Ok(acc)
    }

    pub fn mass_f64(&self, i: &DyadicInterval) -> Result<f64, RatioViolation> {
        Ok(self.mass_log2(i)?.exp2())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassReport {
    pub eta: f64,
    pub depth: u32,
    pub phi: f64,
    /// Number of intervals with `S(I) >= eta log2(1/|I|)`.
    pub members: usize,
    /// `min over members of log2 mu(I) + level * Phi(eta)`.
    pub worst_margin: f64,
    pub worst_level: u32,
    pub failures: usize,
    /// Total mass at the deepest level, exact.
    pub total_mass_is_one: bool,
    pub violation: Option<RatioViolation>,
}

/// Walks every interval to `depth`, collects those with
/// `S(I) >= eta * level` and checks `mu(I) >= |I|^Phi(eta)` on each.
pub fn verify_mass_lower_bound<M: Martingale>(s: M, eta: f64, depth: u32) -> Result<MassReport, DomainError> {
    let mu = mass_measure(s, eta)?;
    let phi = entropy_phi(eta)?;
    let mut report = MassReport {
        eta,
        depth,
        phi,
        members: 0,
        worst_margin: f64::INFINITY,
        worst_level: 0,
        failures: 0,
        total_mass_is_one: false,
        violation: None,
    };
    let mut total = DyadicRational::zero();
    let root = DyadicInterval::unit();
    let mut stack = vec![(root, 0.0f64, DyadicRational::one())];
    let one = DyadicRational::one();
    while let Some((i, log_mass, mass)) = stack.pop() {
        let v = mu.s.value(&i);
        let n = i.level();
        if v >= eta * n as f64 {
            report.members += 1;
            let margin = log_mass + n as f64 * phi;
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.worst_level = n;
            }
            if margin < -1e-9 {
                report.failures += 1;
            }
        }
        if n == depth {
            total = &total + &mass;
            continue;
        }
        let (lo, hi) = (i.lower(), i.upper());
        let pair = [mu.s.value(&lo), mu.s.value(&hi)];
        let r = mu.lower_ratio(pair);
        if !(0.0..=1.0).contains(&r) {
            report.violation = Some(RatioViolation {
                level: n + 1,
                index: lo.index().to_string(),
                increment: 0.5 * (pair[0] - pair[1]),
            });
            return Ok(report);
        }
        let rd = DyadicRational::from_f64(r).expect("finite ratio");
        let rc = &one - &rd;
        let (l0, l1) = (rd.to_f64().log2(), rc.to_f64().log2());
        stack.push((hi, log_mass + l1, &mass * &rc));
        stack.push((lo, log_mass + l0, &mass * &rd));
    }
    report.total_mass_is_one = total == one;
    Ok(report)
}

/// `sum |I|^s` over the maximal members of `a` with `|I| < delta`.
pub fn covering_content(a: &[DyadicInterval], s: f64, delta: f64) -> f64 {
    maximal_members(a, delta).iter().map(|i| i.length_f64().powf(s)).fold(0.0, |acc, v| acc + v)
}

/// Members of `a` shorter than `delta` that are not contained in another
/// such member; they are pairwise disjoint.
pub fn maximal_members(a: &[DyadicInterval], delta: f64) -> Vec<DyadicInterval> {
    let small: Vec<&DyadicInterval> = a.iter().filter(|i| i.length_f64() < delta).collect();
    let set: HashSet<&DyadicInterval> = small.iter().copied().collect();
    let mut out: Vec<DyadicInterval> = small
        .iter()
        .filter(|i| {
            let mut cur = (**i).parent();
            while let Some(p) = cur {
                if set.contains(&p) {
                    return false;
                }
                cur = p.parent();
            }
            true
        })
        .map(|i| (*i).clone())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Number of level-`n` intervals where the binary-digit martingale satisfies
/// `S(I) = 2k - n >= eta n`, with exact threshold comparison.
pub fn besicovitch_count(n: u64, eta: f64) -> Result<BigUint, DomainError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(DomainError::new(format!("eta must lie in [0,1], got {eta}")));
    }
    let e = dyadic_to_rational(&DyadicRational::from_f64(eta).expect("finite"));
    // 2k - n >= eta n  <=>  k >= n (1 + eta) / 2
    let t = BigRational::from_integer(n.into()) * (BigRational::one() + e) / BigRational::from_integer(2.into());
    let kmin = t.ceil().to_integer();
    let kmin = if kmin.is_negative() { 0 } else { kmin.to_u64().unwrap_or(u64::MAX) };
    if kmin > n {
        return Ok(BigUint::zero());
    }
    let mut c = binomial(n, kmin);
    let mut total = c.clone();
    for k in kmin..n {
        c = c * BigUint::from(n - k) / BigUint::from(k + 1);
        total += &c;
    }
    Ok(total)
}

fn binomial(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k);
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

/// `log2 x` for a big integer, accurate to double precision.
pub fn log2_big(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 64 {
        return (x.to_u64().unwrap() as f64).log2();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().unwrap() as f64;
    top.log2() + shift as f64
}

/// `log2(count) / N` for each `(N, count)`.
pub fn dim_estimate(counts: &[(u64, BigUint)]) -> Vec<f64> {
    counts
        .iter()
        .map(|(n, c)| log2_big(c) / *n as f64)
        .collect()
}
