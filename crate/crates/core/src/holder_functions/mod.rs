//! Hölder-continuous test functions: the Weierstrass series, functions
//! induced by dyadic martingales, and the lacunary wavelet oscillator.

mod induced;
mod wavelet;
mod weierstrass;
mod witness;

pub use induced::{martingale_function, InducedFunction};
pub use wavelet::{
    base_wavelet, base_wavelet_derivative, wavelet_oscillator, wavelet_schedule, BaseWavelet,
    StageRecord, WaveletOscillator, WaveletSchedule, ZeroRecord,
};
pub use weierstrass::{weierstrass, Weierstrass};
pub use witness::{witness_scales, WitnessCase, WitnessScales};

use num_bigint::BigInt;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicRational;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Weierstrass { b: f64, alpha: f64 },
    MartingaleInduced { alpha: f64 },
    Wavelet { alpha: f64, epsilon: f64, stages: usize },
    User(String),
}

/// A real function with a declared Hölder exponent.
pub trait HolderFunction: Sync {
    fn alpha(&self) -> f64;

    fn eval_dyadic(&self, x: &DyadicRational) -> f64;

    fn eval(&self, x: f64) -> f64 {
        self.eval_dyadic(&DyadicRational::from_f64(x).expect("finite argument"))
    }

    /// Exact value at a dyadic point, when the construction allows it.
    fn eval_exact(&self, _x: &DyadicRational) -> Option<DyadicRational> {
        None
    }

    /// `f(x + h) - f(x)`. Implementations override this to avoid
    /// cancellation at small `h`.
    fn diff(&self, x: &DyadicRational, h: &DyadicRational) -> f64 {
        self.eval_dyadic(&(x + h)) - self.eval_dyadic(x)
    }

    /// Bound on the evaluation error of `eval`/`diff`.
    fn tolerance(&self) -> f64 {
        0.0
    }

    fn provenance(&self) -> Provenance;
}

impl<F: HolderFunction + ?Sized> HolderFunction for &F {
    fn alpha(&self) -> f64 {
        (**self).alpha()
    }
    fn eval_dyadic(&self, x: &DyadicRational) -> f64 {
        (**self).eval_dyadic(x)
    }
    fn eval(&self, x: f64) -> f64 {
        (**self).eval(x)
    }
    fn eval_exact(&self, x: &DyadicRational) -> Option<DyadicRational> {
        (**self).eval_exact(x)
    }
    fn diff(&self, x: &DyadicRational, h: &DyadicRational) -> f64 {
        (**self).diff(x, h)
    }
    fn tolerance(&self) -> f64 {
        (**self).tolerance()
    }
    fn provenance(&self) -> Provenance {
        (**self).provenance()
    }
}

/// `f(x) = c + slope * x` with dyadic coefficients, so exact at dyadic points.
#[derive(Clone, Debug)]
pub struct Affine {
    pub c: DyadicRational,
    pub slope: DyadicRational,
    pub alpha: f64,
}

impl Affine {
    pub fn new(c: f64, slope: f64, alpha: f64) -> Self {
        Self {
            c: DyadicRational::from_f64(c).expect("finite"),
            slope: DyadicRational::from_f64(slope).expect("finite"),
            alpha,
        }
    }
}

impl HolderFunction for Affine {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn eval_dyadic(&self, x: &DyadicRational) -> f64 {
        self.eval_exact(x).map(|v| v.to_f64()).unwrap_or(f64::NAN)
    }
    fn eval_exact(&self, x: &DyadicRational) -> Option<DyadicRational> {
        Some(&self.c + &(&self.slope * x))
    }
    fn diff(&self, _x: &DyadicRational, h: &DyadicRational) -> f64 {
        (&self.slope * h).to_f64()
    }
    fn provenance(&self) -> Provenance {
        Provenance::User("affine".into())
    }
}

/// Polynomial with dyadic coefficients `c_0 + c_1 x + ...`.
#[derive(Clone, Debug)]
pub struct DyadicPolynomial {
    pub coeffs: Vec<DyadicRational>,
    pub alpha: f64,
}

impl HolderFunction for DyadicPolynomial {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn eval_dyadic(&self, x: &DyadicRational) -> f64 {
        self.eval_exact(x).map(|v| v.to_f64()).unwrap_or(f64::NAN)
    }
    fn eval_exact(&self, x: &DyadicRational) -> Option<DyadicRational> {
        let mut acc = DyadicRational::zero();
        for c in self.coeffs.iter().rev() {
            acc = &(&acc * x) + c;
        }
        Some(acc)
    }
    fn provenance(&self) -> Provenance {
        Provenance::User("polynomial".into())
    }
}

/// Pair sampler for seminorm estimates: `x` uniform in `[0,1)` with
/// `point_bits` random binary digits, `|x - y|` log-uniform in
/// `[min_scale, max_scale]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSampler {
    pub pairs: usize,
    pub min_scale: f64,
    pub max_scale: f64,
    pub point_bits: u32,
    pub seed: u64,
}

impl PairSampler {
    pub fn new(pairs: usize, min_scale: f64, max_scale: f64, seed: u64) -> Self {
        Self { pairs, min_scale, max_scale, point_bits: 53, seed }
    }

    pub fn with_point_bits(mut self, bits: u32) -> Self {
        self.point_bits = bits;
        self
    }

    /// The sampled `(x, h)` pairs, `h > 0`.
    pub fn sample(&self) -> Vec<(DyadicRational, DyadicRational)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lo = -self.max_scale.log2();
        let hi = -self.min_scale.log2();
        (0..self.pairs)
            .map(|_| {
                let x = random_dyadic(&mut rng, self.point_bits);
                let u = rng.gen_range(lo..=hi);
                (x, pow2_neg_real(u))
            })
            .collect()
    }
}

/// Uniform random dyadic in `[0,1)` with `bits` binary digits.
pub fn random_dyadic(rng: &mut impl RngCore, bits: u32) -> DyadicRational {
    let words = (bits as usize).div_ceil(64);
    let mut n = BigInt::from(0u8);
    for _ in 0..words {
        n = (n << 64usize) + BigInt::from(rng.next_u64());
    }
    let excess = words as u32 * 64 - bits;
    DyadicRational::new(n >> excess as usize, bits)
}

/// A dyadic approximation of `2^-u` valid far below the double range.
pub fn pow2_neg_real(u: f64) -> DyadicRational {
    let whole = u.floor();
    let frac = u - whole;
    let m = DyadicRational::from_f64((-frac).exp2()).expect("finite");
    m.shl(-(whole as i64))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeminormEstimate {
    pub value: f64,
    pub worst_x: f64,
    pub worst_h: f64,
    pub pairs: usize,
}

/// Empirical `sup |f(x+h) - f(x)| / h^alpha` over the sampled pairs; a lower
/// bound for the Hölder seminorm.
pub fn holder_seminorm_estimate<F: HolderFunction + ?Sized>(f: &F, sampler: &PairSampler) -> SeminormEstimate {
    let alpha = f.alpha();
    let mut best = SeminormEstimate { value: 0.0, worst_x: 0.0, worst_h: 0.0, pairs: sampler.pairs };
    for (x, h) in sampler.sample() {
        let hf = h.to_f64();
        let q = f.diff(&x, &h).abs() / hf.powf(alpha);
        if q > best.value {
            best.value = q;
            best.worst_x = x.to_f64();
            best.worst_h = hf;
        }
    }
    best
}
