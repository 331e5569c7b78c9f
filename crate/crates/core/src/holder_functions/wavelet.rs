use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicRational;
use crate::error::{check_exponent, DomainError, Error, Result};

use super::{HolderFunction, Provenance};

/// Knots of the profile on `[0, 1/2]`, in units of `1/128`.
const KNOTS: [i64; 11] = [0, 8, 12, 26, 34, 44, 48, 56, 58, 61, 64];

/// Value pattern at the knots; `U` and `W` are fixed by the moment conditions.
#[derive(Clone, Copy)]
enum Knot {
    Fixed(i64),
    NegU,
    U,
    W,
}

const PATTERN: [Knot; 11] = [
    Knot::Fixed(1),
    Knot::Fixed(1),
    Knot::NegU,
    Knot::NegU,
    Knot::U,
    Knot::U,
    Knot::Fixed(-1),
    Knot::Fixed(-1),
    Knot::W,
    Knot::W,
    Knot::Fixed(0),
];

/// `6t^5 - 15t^4 + 10t^3` and its derivatives.
fn smoothstep(t: f64) -> [f64; 6] {
    let t2 = t * t;
    [
        t2 * t * (10.0 + t * (-15.0 + 6.0 * t)),
        30.0 * t2 * (1.0 - t) * (1.0 - t),
        60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
        360.0 * t2 - 360.0 * t + 60.0,
        720.0 * t - 360.0,
        720.0,
    ]
}

#[derive(Clone, Copy, Debug)]
struct Piece {
    a: f64,
    w: f64,
    from: f64,
    jump: f64,
}

/// An even, compactly supported C² profile: `1` on `[-1/16, 1/16]`, `-1` on
/// `±[3/8, 7/16]`, zero outside `[-1/2, 1/2]`, with vanishing moments of
/// order 0, 1, 2. Between knots it is a quintic smoothstep.
#[derive(Clone, Debug)]
pub struct BaseWavelet {
    pub u: BigRational,
    pub w: BigRational,
    pieces: Vec<Piece>,
    pub max_d1: f64,
    pub max_d2: f64,
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// `int_0^1 t^j S(t) dt`.
fn smoothstep_moment(j: i64) -> BigRational {
    ratio(6, j + 6) - ratio(15, j + 5) + ratio(10, j + 4)
}

/// `int_a^b x^q p(x) dx` for `p` rising from `from` to `to` on `[a, b]`.
fn piece_moment(a: &BigRational, b: &BigRational, from: &BigRational, to: &BigRational, q: u32) -> BigRational {
    let w = b - a;
    // (a + w t)^q = sum_j C(q,j) a^(q-j) w^j t^j
    let mut total = BigRational::zero();
    let mut binom = BigRational::one();
    for j in 0..=q {
        let coef = &binom * pow(a, q - j) * pow(&w, j);
        let plain = ratio(1, j as i64 + 1);
        total += &coef * (from * &plain + (to - from) * smoothstep_moment(j as i64));
        binom = binom * ratio((q - j) as i64, j as i64 + 1);
    }
    total * w
}

fn pow(x: &BigRational, n: u32) -> BigRational {
    (0..n).fold(BigRational::one(), |acc, _| acc * x)
}

impl BaseWavelet {
    pub fn new() -> Self {
        let knots: Vec<BigRational> = KNOTS.iter().map(|&k| ratio(k, 128)).collect();
        // Values as affine functions c + u*cu + w*cw of the two unknowns.
        let coords = |k: Knot| -> [i64; 3] {
            match k {
                Knot::Fixed(v) => [v, 0, 0],
                Knot::NegU => [0, -1, 0],
                Knot::U => [0, 1, 0],
                Knot::W => [0, 0, 1],
            }
        };
        // Half-line moments of orders 0 and 2; order 1 vanishes by symmetry.
        let mut sys = [[BigRational::zero(), BigRational::zero(), BigRational::zero()], [
            BigRational::zero(),
            BigRational::zero(),
            BigRational::zero(),
        ]];
        for (row, q) in [(0usize, 0u32), (1, 2)] {
            for i in 0..KNOTS.len() - 1 {
                let (c0, c1) = (coords(PATTERN[i]), coords(PATTERN[i + 1]));
                for col in 0..3 {
                    let m = piece_moment(
                        &knots[i],
                        &knots[i + 1],
                        &BigRational::from_integer(c0[col].into()),
                        &BigRational::from_integer(c1[col].into()),
                        q,
                    );
                    sys[row][col] += m;
                }
            }
        }
        // sys[r][0] + u sys[r][1] + w sys[r][2] = 0
        let [[c0, a0, b0], [c1, a1, b1]] = sys;
        let det = &a0 * &b1 - &a1 * &b0;
        assert!(!det.is_zero(), "singular moment system");
        let u = (-&c0 * &b1 + &c1 * &b0) / &det;
        let w = (-&a0 * &c1 + &a1 * &c0) / &det;

        let value = |k: Knot| -> f64 {
            match k {
                Knot::Fixed(v) => v as f64,
                Knot::NegU => -u.to_f64().unwrap(),
                Knot::U => u.to_f64().unwrap(),
                Knot::W => w.to_f64().unwrap(),
            }
        };
        let mut pieces = Vec::new();
        let (mut max_d1, mut max_d2) = (0.0f64, 0.0f64);
        for i in 0..KNOTS.len() - 1 {
            let a = KNOTS[i] as f64 / 128.0;
            let wd = (KNOTS[i + 1] - KNOTS[i]) as f64 / 128.0;
            let from = value(PATTERN[i]);
            let jump = value(PATTERN[i + 1]) - from;
            // max S' = 15/8, max |S''| = 10/sqrt(3)
            max_d1 = max_d1.max(1.875 * jump.abs() / wd);
            max_d2 = max_d2.max(10.0 / 3f64.sqrt() * jump.abs() / (wd * wd));
            pieces.push(Piece { a, w: wd, from, jump });
        }
        Self { u, w, pieces, max_d1, max_d2 }
    }

    /// The shared instance.
    pub fn standard() -> &'static BaseWavelet {
        static CELL: OnceLock<BaseWavelet> = OnceLock::new();
        CELL.get_or_init(BaseWavelet::new)
    }

    fn piece(&self, r: f64) -> Option<&Piece> {
        if r >= 0.5 {
            return None;
        }
        let i = self.pieces.partition_point(|p| p.a + p.w <= r);
        self.pieces.get(i)
    }

    /// `d`-th derivative, `d <= 2`.
    fn derivative(&self, x: f64, d: usize) -> f64 {
        let r = x.abs();
        let Some(p) = self.piece(r) else { return 0.0 };
        let s = smoothstep((r - p.a) / p.w);
        match d {
            0 => p.from + p.jump * s[0],
            1 => x.signum() * p.jump * s[1] / p.w,
            _ => p.jump * s[2] / (p.w * p.w),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(x, 0)
    }

    /// `int x^q phi(x) dx` by Gauss quadrature, independent of the exact
    /// solve that fixed `u` and `w`.
    pub fn moment_by_quadrature(&self, q: i32) -> f64 {
        crate::quad::Composite::new(6).integrate(&mut |x: f64| x.powi(q) * self.value(x), -0.5, 0.5, 128)
    }

    pub fn d1(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        self.derivative(x, 1)
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.derivative(x, 2)
    }

    /// `phi(x + d) - phi(x)`; by Taylor expansion when both points share a
    /// polynomial piece, so small steps keep full relative accuracy.
    pub fn diff(&self, x: f64, d: f64) -> f64 {
        let y = x + d;
        if x.abs() >= 0.5 || y.abs() >= 0.5 || (x < 0.0) != (y < 0.0) || x == 0.0 {
            return self.value(y) - self.value(x);
        }
        let (r, dr) = if x < 0.0 { (-x, -d) } else { (x, d) };
        let (Some(p), Some(q)) = (self.piece(r), self.piece(r + dr)) else {
            return self.value(y) - self.value(x);
        };
        if p.a != q.a {
            return self.value(y) - self.value(x);
        }
        let t = (r - p.a) / p.w;
        let delta = dr / p.w;
        let s = smoothstep(t);
        let mut acc = 0.0;
        let mut pw = 1.0;
        let mut fact = 1.0;
        for (j, sj) in s.iter().enumerate().skip(1) {
            pw *= delta;
            fact *= j as f64;
            acc += pw / fact * sj;
        }
        p.jump * acc
    }
}

impl Default for BaseWavelet {
    fn default() -> Self {
        Self::new()
    }
}

pub fn base_wavelet(x: f64) -> f64 {
    BaseWavelet::standard().value(x)
}

pub fn base_wavelet_derivative(x: f64) -> f64 {
    BaseWavelet::standard().d1(x)
}

/// `y mod 1`, centred into `[-1/2, 1/2)`.
fn centered(y: &DyadicRational) -> f64 {
    let v = y.fract().to_f64();
    if v >= 0.5 {
        v - 1.0
    } else {
        v
    }
}

/// A zero of `S'_m` found on a local grid, with the largest `|S'_m|` seen
/// within `10 * 2^-k_m` of it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZeroRecord {
    pub t0: f64,
    pub derivative_at_t0: f64,
    pub sampled_sup: f64,
    pub certified_sup: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub k: u32,
    /// Upper bound for `||S'_m||_inf` from the derivative bound of `phi`.
    pub derivative_bound: f64,
    /// Largest `|S'_m|` seen on the grid.
    pub derivative_sampled: f64,
    /// Upper bound for `||S''_m||_inf`.
    pub second_bound: f64,
    /// `2^-k (1) ||S'_m|| / 2^(-k alpha)`, must be at most epsilon.
    pub clause_one: f64,
    /// `10 * 2^-k ||S''_m||`, bounds the zero-neighbourhood sup.
    pub clause_two: f64,
    pub zeros: Vec<ZeroRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveletSchedule {
    pub alpha: f64,
    pub epsilon: f64,
    pub k: Vec<u32>,
    pub stages: Vec<StageRecord>,
}

const MAX_LEVEL: u32 = 4096;

/// Smallest `k >= prev + 4` with `2^-k B1 <= eps 2^(-k alpha)` and
/// `10 * 2^-k B2 <= eps`. An empty main part (`B1 = B2 = 0`) gives `prev + 4`.
pub fn next_level(prev: u32, alpha: f64, eps: f64, b1: f64, b2: f64) -> Option<u32> {
    let mut k = prev + 4;
    loop {
        let kf = k as f64;
        let one = (-kf * (1.0 - alpha)).exp2() * b1 <= eps;
        let two = 10.0 * (-kf).exp2() * b2 <= eps;
        if one && two {
            return Some(k);
        }
        k += 1;
        if k > MAX_LEVEL {
            return None;
        }
    }
}

/// Builds `k_1 = 1 < k_2 < ...`, each level the smallest admissible one for the
/// superlacunary condition, certified with global bounds on `phi'` and `phi''`
/// and spot-checked on local grids around zeros of `S'_m`.
pub fn wavelet_schedule(alpha: f64, eps: f64, stages: usize) -> Result<WaveletSchedule> {
    check_exponent("alpha", alpha)?;
    if !(eps > 0.0 && eps <= 1.0 / 200.0) {
        return Err(DomainError::new(format!("epsilon must lie in (0, 1/200], got {eps}")).into());
    }
    if stages == 0 {
        return Err(DomainError::new("at least one stage is needed").into());
    }
    let phi = BaseWavelet::standard();
    let mut sched = WaveletSchedule { alpha, epsilon: eps, k: vec![1], stages: Vec::new() };
    for m in 2..=stages {
        let b1: f64 = sched.k.iter().map(|&k| (k as f64 * (1.0 - alpha)).exp2()).sum::<f64>() * phi.max_d1;
        let b2: f64 = sched.k.iter().map(|&k| (k as f64 * (2.0 - alpha)).exp2()).sum::<f64>() * phi.max_d2;
        let prev = *sched.k.last().unwrap();
        let k = next_level(prev, alpha, eps, b1, b2)
            .ok_or_else(|| Error::Verification(format!("no admissible level below {MAX_LEVEL} at stage {m}")))?;
        let osc = WaveletOscillator { schedule: sched.clone() };
        let (sampled, zeros) = scan_main_part(&osc, m, k, b2);
        let record = StageRecord {
            stage: m,
            k,
            derivative_bound: b1,
            derivative_sampled: sampled,
            second_bound: b2,
            clause_one: (-(k as f64) * (1.0 - alpha)).exp2() * b1,
            clause_two: 10.0 * (-(k as f64)).exp2() * b2,
            zeros,
        };
        if record.clause_one > eps || record.clause_two > eps || sampled > b1 * (1.0 + 1e-12) {
            return Err(Error::Verification(format!("stage {m} failed certification at level {k}")));
        }
        for z in &record.zeros {
            if z.sampled_sup > eps || z.certified_sup > eps {
                return Err(Error::Verification(format!("zero at {} of stage {m} not flat enough", z.t0)));
            }
        }
        sched.k.push(k);
        sched.stages.push(record);
    }
    Ok(sched)
}

/// Grid scan of `S'_m` over one period of its finest stage near a few anchors
/// (step `2^-(k_{m-1}+6)`), followed by bisection on each sign change.
fn scan_main_part(osc: &WaveletOscillator, m: usize, k_m: u32, b2: f64) -> (f64, Vec<ZeroRecord>) {
    let top = osc.schedule.k[m - 2];
    let step_level = top + 6;
    let anchors = [0u64, 3, 11, 29];
    let mut sup = 0.0f64;
    let mut zeros = Vec::new();
    for &a in &anchors {
        // anchor a/64 of the unit period, scanned over one period of the top stage
        let base = DyadicRational::new(a, 6);
        let point = |i: u64| &base + &DyadicRational::new(i, step_level);
        let mut prev = osc.main_derivative(m, &point(0));
        sup = sup.max(prev.abs());
        for i in 1..=64u64 {
            let cur = osc.main_derivative(m, &point(i));
            sup = sup.max(cur.abs());
            // a zero followed by a nonzero value (edge of a flat stretch), or a
            // strict sign change
            let edge = prev == 0.0 && cur != 0.0;
            let change = prev != 0.0 && cur != 0.0 && (prev < 0.0) != (cur < 0.0);
            if edge || change {
                let (mut lo, mut hi) = (point(i - 1), point(i));
                if change {
                    for _ in 0..(k_m + 8 - step_level).min(200) {
                        let mid = (&lo + &hi).shl(-1);
                        let fm = osc.main_derivative(m, &mid);
                        if fm == 0.0 || (fm < 0.0) == (prev < 0.0) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                }
                let t0 = lo.clone();
                let d0 = osc.main_derivative(m, &t0);
                let radius = 10.0 * (-(k_m as f64)).exp2();
                let mut local = 0.0f64;
                for j in -32i64..=32 {
                    let theta = DyadicRational::new(j * 10, k_m + 5);
                    local = local.max(osc.main_derivative(m, &(&t0 + &theta)).abs());
                }
                zeros.push(ZeroRecord {
                    t0: t0.to_f64(),
                    derivative_at_t0: d0,
                    sampled_sup: local,
                    certified_sup: d0.abs() + radius * b2,
                });
            }
            prev = cur;
        }
    }
    (sup, zeros)
}

/// `f = sum_n 2^(-k_n alpha) sum_j phi(2^k_n t - j)` over the configured stages.
#[derive(Clone, Debug)]
pub struct WaveletOscillator {
    pub schedule: WaveletSchedule,
}

pub fn wavelet_oscillator(schedule: WaveletSchedule) -> WaveletOscillator {
    WaveletOscillator { schedule }
}

impl WaveletOscillator {
    pub fn stages(&self) -> usize {
        self.schedule.k.len()
    }

    pub fn level(&self, m: usize) -> u32 {
        self.schedule.k[m - 1]
    }

    fn weight(&self, n: usize) -> f64 {
        (-(self.level(n) as f64) * self.schedule.alpha).exp2()
    }

    /// Stage `n` term at `t` (stages counted from 1).
    pub fn term(&self, n: usize, t: &DyadicRational) -> f64 {
        let v = centered(&t.shl(self.level(n) as i64));
        self.weight(n) * BaseWavelet::standard().value(v)
    }

    /// Sum of stages `lo..=hi`.
    pub fn partial(&self, lo: usize, hi: usize, t: &DyadicRational) -> f64 {
        (lo..=hi.min(self.stages())).map(|n| self.term(n, t)).sum()
    }

    /// The main part `S_m`, stages `1..m`.
    pub fn main_part(&self, m: usize, t: &DyadicRational) -> f64 {
        self.partial(1, m - 1, t)
    }

    /// The tail `R_m`, stages `m..`.
    pub fn tail(&self, m: usize, t: &DyadicRational) -> f64 {
        self.partial(m, self.stages(), t)
    }

    pub fn main_derivative(&self, m: usize, t: &DyadicRational) -> f64 {
        let phi = BaseWavelet::standard();
        (1..m)
            .map(|n| {
                let k = self.level(n);
                let v = centered(&t.shl(k as i64));
                (k as f64 * (1.0 - self.schedule.alpha)).exp2() * phi.d1(v)
            })
            .sum()
    }

    /// `sum_{n=m}^{stages} 2^(-k_n alpha)`, the extreme values of `R_m`.
    pub fn tail_extreme(&self, m: usize) -> f64 {
        (m..=self.stages()).map(|n| self.weight(n)).sum()
    }

    /// Bound on the omitted stages, assuming only `k_n >= k_(n-1) + 4`.
    pub fn omitted_bound(&self) -> f64 {
        let a = self.schedule.alpha;
        let last = *self.schedule.k.last().unwrap() as f64;
        (-(last + 4.0) * a).exp2() / (1.0 - (-4.0 * a).exp2())
    }

    /// Increment of stages `lo..=hi` between `x` and `x + h`.
    pub fn partial_diff(&self, lo: usize, hi: usize, x: &DyadicRational, h: &DyadicRational) -> f64 {
        let phi = BaseWavelet::standard();
        let y = x + h;
        (lo..=hi.min(self.stages()))
            .map(|n| {
                let k = self.level(n) as i64;
                let v = centered(&x.shl(k));
                let d = h.shl(k).to_f64();
                let inc = if d.abs() < 0.25 && (v + d).abs() < 0.5 {
                    phi.diff(v, d)
                } else {
                    phi.value(centered(&y.shl(k))) - phi.value(v)
                };
                self.weight(n) * inc
            })
            .sum()
    }
}

impl HolderFunction for WaveletOscillator {
    fn alpha(&self) -> f64 {
        self.schedule.alpha
    }

    fn eval_dyadic(&self, x: &DyadicRational) -> f64 {
        self.partial(1, self.stages(), x)
    }

    fn diff(&self, x: &DyadicRational, h: &DyadicRational) -> f64 {
        self.partial_diff(1, self.stages(), x, h)
    }

    fn tolerance(&self) -> f64 {
        self.omitted_bound()
    }

    fn provenance(&self) -> Provenance {
        Provenance::Wavelet {
            alpha: self.schedule.alpha,
            epsilon: self.schedule.epsilon,
            stages: self.stages(),
        }
    }
}
