
use crate::dyadic::{locate_dyadic, DyadicRational};
use crate::error::{check_exponent, DomainError};
use crate::martingale::Martingale;

use super::{HolderFunction, Provenance};

/// The 1-periodic function with `f(0) = 0` and `f(b) - f(a) = 2^-n S([a,b))`
/// for every dyadic `[a,b)` of level `n`.
///
/// Points with more than `depth` binary digits are truncated to `depth`
/// digits; `growth` (a bound for `2^(-n(1-alpha)) |S_n|`) turns that into a
/// reported error bound.
pub struct InducedFunction<M> {
    pub s: M,
    pub alpha: f64,
    pub depth: u32,
    pub growth: f64,
}

pub fn martingale_function<M: Martingale>(s: M, alpha: f64) -> Result<InducedFunction<M>, DomainError> {
    check_exponent("alpha", alpha)?;
    Ok(InducedFunction { s, alpha, depth: crate::dyadic::max_depth(), growth: f64::INFINITY })
}

impl<M: Martingale> InducedFunction<M> {
    pub fn with_depth(mut self, depth: u32) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_growth(mut self, growth: f64) -> Self {
        self.growth = growth;
        self
    }

    /// Error bound for points truncated at `depth`:
    /// `sum_{n > depth} 2^-n * growth * 2^(n(1-alpha))`.
    pub fn truncation_bound(&self) -> f64 {
        let r = (-self.alpha).exp2();
        self.growth * r.powi(self.depth as i32) * r / (1.0 - r)
    }

    fn truncate(&self, x: &DyadicRational) -> (DyadicRational, bool) {
        let y = x.fract();
        if y.exponent() <= self.depth {
            (y, false)
        } else {
            (DyadicRational::new(y.floor_scaled(self.depth), self.depth), true)
        }
    }

    /// `f(y)` for `y` in `[0,1)` with at most `depth` digits.
    fn eval_unit(&self, y: &DyadicRational) -> f64 {
        let e = y.exponent();
        if e == 0 {
            return 0.0;
        }
        let ladder = self.s.ladder(y, e);
        let mut acc = 0.0;
        for l in 1..=e {
            if y.digit(l) {
                acc += (-(l as f64)).exp2() * ladder[l as usize - 1][0];
            }
        }
        acc
    }

    /// Whether the last `diff`/`eval` input needed truncation.
    pub fn needs_truncation(&self, x: &DyadicRational) -> bool {
        x.fract().exponent() > self.depth
    }
}

impl<M: Martingale> HolderFunction for InducedFunction<M> {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn eval_dyadic(&self, x: &DyadicRational) -> f64 {
        let (y, _) = self.truncate(x);
        self.eval_unit(&y)
    }

    fn eval_exact(&self, x: &DyadicRational) -> Option<DyadicRational> {
        let y = x.fract();
        if y.exponent() > self.depth {
            return None;
        }
        let mut acc = DyadicRational::zero();
        for l in 1..=y.exponent() {
            if y.digit(l) {
                let lower = locate_dyadic(&y, l - 1).lower();
                let q = self.s.exact(&lower)?.as_rational()?;
                let d = rational_to_dyadic(&q)?;
                acc = &acc + &d.shl(-(l as i64));
            }
        }
        Some(acc)
    }

    /// Sums `2^-n S` over a Whitney-type split of `[x, x+h)` at its
    /// coarsest dyadic point, so no large values cancel.
    fn diff(&self, x: &DyadicRational, h: &DyadicRational) -> f64 {
        if h.is_zero() {
            return 0.0;
        }
        if h.is_negative() {
            let y = x + h;
            return -self.diff(&y, &-h);
        }
        let h = h.fract();
        if h.is_zero() {
            return 0.0;
        }
        let (x0, _) = self.truncate(x);
        let (h0, _) = self.truncate(&h);
        let end = &x0 + &h0;
        if end == x0 {
            return 0.0;
        }
        let mut level = 0u32;
        let m = loop {
            let cand = DyadicRational::new(x0.ceil_scaled(level), level);
            if cand <= end {
                break cand;
            }
            level += 1;
        };
        let mut total = 0.0;
        // f(end) - f(m): digits of `end` below `level` that are 1.
        let y = end.fract();
        let ey = y.exponent();
        if ey > level {
            let ladder = self.s.ladder(&y, ey);
            for l in level + 1..=ey {
                if y.digit(l) {
                    total += (-(l as f64)).exp2() * ladder[l as usize - 1][0];
                }
            }
        }
        // f(m) - f(x0): upper siblings where x0 has a 0 digit, closed by the
        // finest interval starting at x0.
        if x0 != m {
            let ex = x0.exponent();
            let ladder = self.s.ladder(&x0, ex);
            for l in level + 1..=ex {
                if !x0.digit(l) {
                    total += (-(l as f64)).exp2() * ladder[l as usize - 1][1];
                }
            }
            let last = ladder[ex as usize - 1][if x0.digit(ex) { 1 } else { 0 }];
            total += (-(ex as f64)).exp2() * last;
        }
        total
    }

    fn tolerance(&self) -> f64 {
        self.truncation_bound()
    }

    fn provenance(&self) -> Provenance {
        Provenance::MartingaleInduced { alpha: self.alpha }
    }
}

pub(crate) fn rational_to_dyadic(q: &num_rational::BigRational) -> Option<DyadicRational> {
    let den = q.denom().magnitude();
    if den.count_ones() != 1 {
        return None;
    }
    Some(DyadicRational::new(q.numer().clone(), (den.bits() - 1) as u32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::DyadicInterval;
    use crate::martingale::{binary_digit_martingale, from_function, FnMartingale};
    use crate::holder_functions::{Affine, DyadicPolynomial};

    fn grid(depth: u32) -> impl Iterator<Item = DyadicRational> {
        (0u64..=(1u64 << depth)).map(move |j| DyadicRational::new(j, depth))
    }

    #[test]
    fn zero_martingale_gives_zero() {
        let f = martingale_function(FnMartingale::new(|_: &DyadicInterval| 0.0), 0.5).unwrap();
        for x in grid(6) {
            assert_eq!(f.eval_dyadic(&x), 0.0);
        }
    }

    #[test]
    fn first_refinement_step() {
        let s = binary_digit_martingale();
        let f = martingale_function(s, 0.5).unwrap();
        let half = DyadicRational::new(1, 1);
        assert_eq!(f.eval_dyadic(&half), 0.5 * s.value(&DyadicInterval::new(1, 0)));
        assert_eq!(f.eval_dyadic(&DyadicRational::one()), 0.0);
    }

    #[test]
    fn round_trip_through_from_function() {
        // g(x) = x^2 - 3x/4, dyadic coefficients so every step is exact.
        let g = DyadicPolynomial {
            coeffs: vec![DyadicRational::zero(), DyadicRational::new(-3, 2), DyadicRational::one()],
            alpha: 0.5,
        };
        let s = from_function(g.clone(), 12);
        let f = martingale_function(&s, 0.5).unwrap().with_depth(12);
        let g0 = g.eval_exact(&DyadicRational::zero()).unwrap();
        for x in grid(8) {
            if x == DyadicRational::one() {
                continue;
            }
            let want = &g.eval_exact(&x).unwrap() - &g0;
            assert_eq!(f.eval_exact(&x), Some(want.clone()));
            assert_eq!(f.eval_dyadic(&x), want.to_f64());
        }
    }

    #[test]
    fn diff_matches_eval() {
        let f = martingale_function(binary_digit_martingale(), 0.5).unwrap().with_depth(20);
        for (a, b) in [(1u64, 3u64), (5, 17), (100, 3), (0, 64), (77, 1000)] {
            let x = DyadicRational::new(a, 10);
            let h = DyadicRational::new(b, 12);
            let want = f.eval_exact(&(&x + &h)).unwrap() - f.eval_exact(&x).unwrap();
            assert_eq!(f.diff(&x, &h), want.to_f64(), "x={x} h={h}");
            assert_eq!(f.diff(&(&x + &h), &-&h), -want.to_f64());
        }
    }

    #[test]
    fn affine_slope_round_trip() {
        let s = from_function(Affine::new(0.25, 1.0, 0.5), 10);
        for i in DyadicInterval::level_iter(5) {
            assert_eq!(s.value(&i), 1.0);
        }
    }
}
