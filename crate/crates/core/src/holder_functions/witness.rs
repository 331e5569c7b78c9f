use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dyadic::DyadicRational;
use crate::error::{DomainError, Error, Result};

use super::wavelet::WaveletOscillator;
use super::HolderFunction;

/// Which branch of the trichotomy a point falls into at a given stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WitnessCase {
    /// One of the quotients at `r^+`, `r^-` is at most 1 in modulus.
    Flat,
    /// The two quotients exceed 1 with opposite signs.
    Opposite,
    /// Both exceed 1 with the same sign; the witnesses move left of `x`.
    SameSign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug)]
pub struct WitnessScales {
    pub stage: usize,
    pub level: u32,
    pub r_plus: DyadicRational,
    pub r_minus: DyadicRational,
    pub rho_plus: DyadicRational,
    pub rho_minus: DyadicRational,
    pub case: WitnessCase,
    /// Signed step with a large Hölder quotient.
    pub h: DyadicRational,
    /// Signed step with a small difference quotient.
    pub h_prime: DyadicRational,
    /// `|f(x+h) - f(x)| / |h|`.
    pub slope_h: f64,
    /// `|f(x+h) - f(x)| / |h|^alpha`.
    pub holder_h: f64,
    /// `|f(x+h') - f(x)| / |h'|`.
    pub slope_h_prime: f64,
    /// `2^(k_m (1-alpha))`.
    pub scale: f64,
}

impl WitnessScales {
    pub fn side_h(&self) -> Side {
        if self.h.is_negative() {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn side_h_prime(&self) -> Side {
        if self.h_prime.is_negative() {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "stage": self.stage,
            "level": self.level,
            "r_plus": self.r_plus.to_f64(),
            "r_minus": self.r_minus.to_f64(),
            "rho_plus": self.rho_plus.to_f64(),
            "rho_minus": self.rho_minus.to_f64(),
            "case": self.case,
            "h": self.h.to_f64(),
            "h_prime": self.h_prime.to_f64(),
            "side_h": self.side_h(),
            "side_h_prime": self.side_h_prime(),
            "slope_h": self.slope_h,
            "holder_h": self.holder_h,
            "slope_h_prime": self.slope_h_prime,
            "scale": self.scale,
        })
    }
}

/// Offset within a period of stage `m` where every stage from `m` on sits
/// on its `-1` plateau: `3/8 * sum_n 2^-k_n`.
fn minimum_offset(f: &WaveletOscillator, m: usize) -> DyadicRational {
    let mut o = DyadicRational::zero();
    for n in m..=f.stages() {
        o = &o + &DyadicRational::new(3, f.level(n) + 3);
    }
    o
}

/// Smallest `y > lo` with `y = offset (mod 2^-k)`.
fn next_congruent(lo: &DyadicRational, offset: &DyadicRational, k: u32) -> DyadicRational {
    let shifted = lo - offset;
    let j = shifted.floor_scaled(k) + 1;
    &DyadicRational::new(j, k) + offset
}

/// Largest `y < hi` with `y = offset (mod 2^-k)`.
fn prev_congruent(hi: &DyadicRational, offset: &DyadicRational, k: u32) -> DyadicRational {
    let shifted = hi - offset;
    let j = shifted.ceil_scaled(k) - 1;
    &DyadicRational::new(j, k) + offset
}

/// Bisection for a sign change of `g` between `a` and `b`.
fn bisect(g: impl Fn(&DyadicRational) -> f64, a: &DyadicRational, b: &DyadicRational, depth: u32) -> Option<DyadicRational> {
    let (mut lo, mut hi) = (a.clone(), b.clone());
    let (mut glo, ghi) = (g(&lo), g(&hi));
    if glo == 0.0 {
        return Some(lo);
    }
    if ghi == 0.0 {
        return Some(hi);
    }
    if glo.signum() == ghi.signum() {
        return None;
    }
    for _ in 0..depth {
        let mid = (&lo + &hi).shl(-1);
        let gm = g(&mid);
        if gm == 0.0 {
            return Some(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    // the endpoint with the smaller residual
    if glo.abs() <= g(&hi).abs() {
        Some(lo)
    } else {
        Some(hi)
    }
}

/// The tail extremizers on both sides of `x` at stage `m` and the pair of
/// witness steps selected by the case analysis.
pub fn witness_scales(f: &WaveletOscillator, x: &DyadicRational, m: usize) -> Result<WitnessScales> {
    if m == 0 || m > f.stages() {
        return Err(DomainError::new(format!("stage {m} outside 1..={}", f.stages())).into());
    }
    let k = f.level(m);
    let p = DyadicRational::pow2_neg(k);
    let zero = DyadicRational::zero();
    let off_min = minimum_offset(f, m);

    // right annulus (x + p, x + 2p], left annulus [x - 2p, x - p)
    let right_lo = x + &p;
    let left_hi = x - &p;
    let r_plus = &next_congruent(&right_lo, &zero, k) - x;
    let r_minus = &next_congruent(&right_lo, &off_min, k) - x;
    let rho_plus = x - &prev_congruent(&left_hi, &zero, k);
    let rho_minus = x - &prev_congruent(&left_hi, &off_min, k);

    let top = f.tail_extreme(m);
    let tol = 1e-12 * top.max(1.0);
    for (t, sign) in [(x + &r_plus, 1.0), (x + &r_minus, -1.0), (x - &rho_plus, 1.0), (x - &rho_minus, -1.0)] {
        let got = f.tail(m, &t);
        if (got - sign * top).abs() > tol {
            return Err(Error::Verification(format!(
                "tail extremizer at stage {m}: got {got}, want {}",
                sign * top
            )));
        }
    }

    let quotient = |h: &DyadicRational| f.diff(x, h) / h.to_f64();
    let (qp, qm) = (quotient(&r_plus), quotient(&r_minus));
    let depth = 120;

    let (case, h, h_prime) = if qp.abs() <= 1.0 || qm.abs() <= 1.0 {
        if qp.abs() <= 1.0 {
            (WitnessCase::Flat, r_minus.clone(), r_plus.clone())
        } else {
            (WitnessCase::Flat, r_plus.clone(), r_minus.clone())
        }
    } else if qp.signum() != qm.signum() {
        let (a, b) = if r_plus < r_minus { (&r_plus, &r_minus) } else { (&r_minus, &r_plus) };
        let rt = bisect(|t| f.diff(x, t), a, b, depth)
            .ok_or_else(|| Error::Verification("no zero crossing between the right extremizers".into()))?;
        let at = x + &rt;
        let dp = (f.tail(m, &at) - f.tail(m, &(x + &r_plus))).abs();
        let dm = (f.tail(m, &at) - f.tail(m, &(x + &r_minus))).abs();
        let h = if dp >= dm { r_plus.clone() } else { r_minus.clone() };
        (WitnessCase::Opposite, h, rt)
    } else {
        // both quotients share a sign; the matching left extremizer carries
        // the large increment and a zero of f(x) - f(x - t) sits between
        let rho_big = if qp > 0.0 { &rho_plus } else { &rho_minus };
        let (a, b) = if rho_plus < rho_minus { (&rho_plus, &rho_minus) } else { (&rho_minus, &rho_plus) };
        let rt = bisect(|t| f.diff(x, &-t), a, b, depth)
            .ok_or_else(|| Error::Verification("no zero crossing between the left extremizers".into()))?;
        (WitnessCase::SameSign, -rho_big, -rt)
    };

    let alpha = f.alpha();
    let dh = f.diff(x, &h).abs();
    let hf = h.to_f64().abs();
    let slope_h_prime = f.diff(x, &h_prime).abs() / h_prime.to_f64().abs();
    Ok(WitnessScales {
        stage: m,
        level: k,
        r_plus,
        r_minus,
        rho_plus,
        rho_minus,
        case,
        slope_h: dh / hf,
        holder_h: dh / hf.powf(alpha),
        slope_h_prime,
        scale: (k as f64 * (1.0 - alpha)).exp2(),
        h,
        h_prime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holder_functions::{random_dyadic, wavelet_oscillator, wavelet_schedule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn osc() -> WaveletOscillator {
        wavelet_oscillator(wavelet_schedule(0.5, 1.0 / 200.0, 4).unwrap())
    }

    #[test]
    fn extremizers_in_annulus() {
        let f = osc();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = random_dyadic(&mut rng, 300);
            for m in 1..=3 {
                let w = witness_scales(&f, &x, m).unwrap();
                let p = DyadicRational::pow2_neg(f.level(m));
                let p2 = p.shl(1);
                for r in [&w.r_plus, &w.r_minus, &w.rho_plus, &w.rho_minus] {
                    assert!(*r > p && *r <= p2);
                }
            }
        }
    }

    #[test]
    fn witnesses_at_later_stages() {
        let f = osc();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = random_dyadic(&mut rng, 300);
            for m in 2..=3 {
                let w = witness_scales(&f, &x, m).unwrap();
                assert!(w.slope_h_prime <= 1.0 + 1e-3, "{:?}", w.to_json());
                assert!(w.slope_h >= 0.5 * w.scale, "{:?}", w.to_json());
            }
        }
    }

    #[test]
    fn stage_out_of_range() {
        let f = osc();
        assert!(witness_scales(&f, &DyadicRational::zero(), 5).is_err());
        assert!(witness_scales(&f, &DyadicRational::zero(), 0).is_err());
    }
}
