//! Sparse block martingales: a martingale with `2^(-n beta) S_n` bounded,
//! eventually almost nonnegative everywhere, yet large infinitely often on
//! most of `[0,1)`.
//!
//! A block `W(delta, J)` is the sum of renormalized Haar functions on the
//! left-most chain `J = J_0 ⊃ J_1 ⊃ ...`; the martingale places one layer of
//! blocks on every interval of a level `k`, waits until the layer is small
//! compared to the next one, and repeats.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, DyadicRational};
use crate::error::{check_exponent, DepthCap, DomainError, Error, Result};
use crate::holder_functions::{martingale_function, random_dyadic, HolderFunction, InducedFunction, PairSampler};
use crate::martingale::{BetaSum, GrowthMartingale, Martingale};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Amplitude of stage `j`: `2^(-j-2)`.
pub fn delta_j(j: usize) -> f64 {
    (-(j as f64) - 2.0).exp2()
}

/// Whether `1/2 <= 2^(M(1-beta)) delta <= 2^-beta`.
pub fn sandwich(delta: f64, beta: f64, m: u32) -> bool {
    let v = (m as f64 * (1.0 - beta)).exp2() * delta;
    let tol = 1e-12;
    v >= 0.5 * (1.0 - tol) && v <= (-beta).exp2() * (1.0 + tol)
}

/// `floor(log2(1/(2 delta)) / (1 - beta)) + 1`, the number of levels in a block.
pub fn m_of_delta(delta: f64, beta: f64) -> Result<u32> {
    check_exponent("beta", beta)?;
    if !(delta > 0.0 && delta < 0.5) {
        return Err(DomainError::new(format!("delta must lie in (0, 1/2), got {delta}")).into());
    }
    let x = (1.0 / (2.0 * delta)).log2() / (1.0 - beta);
    let mut m = x.floor() as i64 + 1;
    // a quotient that should be an integer can land just below it
    if !sandwich(delta, beta, m as u32) && sandwich(delta, beta, (m + 1) as u32) {
        m += 1;
    } else if m > 1 && !sandwich(delta, beta, m as u32) && sandwich(delta, beta, (m - 1) as u32) {
        m -= 1;
    }
    let m = m.max(1) as u32;
    if !sandwich(delta, beta, m) {
        return Err(Error::Verification(format!("no block length for delta={delta}, beta={beta}")));
    }
    Ok(m)
}

/// Blocks per stage: the least `n` with `(1 - 2^-M)^n < delta`, i.e.
/// `floor(log delta / log(1 - 2^-M)) + 1`.
pub fn n_of_j(j: usize, beta: f64) -> Result<u64> {
    let delta = delta_j(j);
    let m = m_of_delta(delta, beta)?;
    let q = delta.ln() / (-(-(m as f64)).exp2()).ln_1p();
    let n = q.floor() + 1.0;
    if !(n >= 1.0 && n < 1e15) {
        return Err(Error::Verification(format!("block count degenerates at stage {j}: {q}")));
    }
    Ok(n as u64)
}

/// `+1` on the lower half of `i`, `-1` on the upper half, `0` outside.
pub fn haar(i: &DyadicInterval, x: &DyadicRational) -> i32 {
    if !i.contains(x) {
        0
    } else if i.lower().contains(x) {
        1
    } else {
        -1
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockChecks {
    /// `max_t 2^(-(K+t) beta) sup |sum_{k<t} s_k|`, at most `2^(1-beta)`.
    pub partial_max: f64,
    /// `min_t 2^(-(K+t) beta) inf sum_{k<t} s_k`, at least `-delta`.
    pub partial_min: f64,
    /// `2^(-(M+K) beta) ||W||`, at most `2^(1-beta)`.
    pub block_max: f64,
    /// `2^(-(M+K) beta) W` on `J_M`, at least `(1 - 2^-M)/2`.
    pub peak: f64,
    pub ok: bool,
}

/// `W(delta, J) = sum_{k<M} delta 2^(K beta) 2^k h_{J_k}`: equal to
/// `-delta 2^(K beta)` on `J \ J_M` and `delta 2^(K beta) (2^M - 1)` on `J_M`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BuildingBlock {
    pub delta: f64,
    pub j: DyadicInterval,
    pub beta: f64,
    pub m: u32,
    pub checks: BlockChecks,
}

pub fn building_block(delta: f64, j: DyadicInterval, beta: f64) -> Result<BuildingBlock> {
    let m = m_of_delta(delta, beta)?;
    let cap = crate::dyadic::max_depth().max(j.level() + m);
    if j.level() + m > cap {
        return Err(DepthCap { requested: j.level() + m, cap }.into());
    }
    let mut partial_max = 0.0f64;
    let mut partial_min = 0.0f64;
    for t in 1..=m {
        // sum_{k<t} s_k = delta 2^(K beta) (2^t chi_{J_t} - chi_J)
        let scale = (-(t as f64) * beta).exp2() * delta;
        partial_max = partial_max.max(scale * ((t as f64).exp2() - 1.0));
        partial_min = partial_min.min(-scale);
    }
    let top = (-(m as f64) * beta).exp2() * delta;
    let block_max = top * ((m as f64).exp2() - 1.0);
    let peak = block_max;
    let bound = (1.0 - beta).exp2();
    let ok = partial_max <= bound
        && partial_min >= -delta
        && block_max <= bound
        && peak >= 0.5 * (1.0 - (-(m as f64)).exp2()) * (1.0 - 1e-12);
    Ok(BuildingBlock { delta, j, beta, m, checks: BlockChecks { partial_max, partial_min, block_max, peak, ok } })
}

impl BuildingBlock {
    pub fn level(&self) -> u32 {
        self.j.level()
    }

    /// `delta 2^(K beta)`.
    pub fn amplitude(&self) -> f64 {
        self.delta * (self.level() as f64 * self.beta).exp2()
    }

    /// `J_k`, the left-most descendant `k` levels down.
    pub fn chain(&self, k: u32) -> DyadicInterval {
        DyadicInterval::new(self.level() + k, self.j.index() << k as usize)
    }

    /// The Haar term `s_k(x) = delta 2^(K beta) 2^k h_{J_k}(x)`, `k < M`.
    pub fn difference(&self, k: u32, x: &DyadicRational) -> f64 {
        self.amplitude() * (k as f64).exp2() * haar(&self.chain(k), x) as f64
    }

    pub fn difference_exact(&self, k: u32, x: &DyadicRational) -> BetaSum {
        let c = rational_of(self.delta) * BigRational::from_integer(BigInt::from(haar(&self.chain(k), x)) << k as usize);
        BetaSum::term(self.level() as i64, c)
    }

    /// `sum_{k<t} s_k(x)` in closed form.
    pub fn partial(&self, t: u32, x: &DyadicRational) -> f64 {
        if !self.j.contains(x) {
            return 0.0;
        }
        let a = self.amplitude();
        if self.chain(t).contains(x) {
            a * ((t as f64).exp2() - 1.0)
        } else {
            -a
        }
    }

    pub fn partial_exact(&self, t: u32, x: &DyadicRational) -> BetaSum {
        if !self.j.contains(x) {
            return BetaSum::zero();
        }
        let d = rational_of(self.delta);
        let c = if self.chain(t).contains(x) {
            d * BigRational::from_integer((BigInt::one() << t as usize) - 1)
        } else {
            -d
        };
        BetaSum::term(self.level() as i64, c)
    }

    pub fn value(&self, x: &DyadicRational) -> f64 {
        self.partial(self.m, x)
    }

    pub fn value_exact(&self, x: &DyadicRational) -> BetaSum {
        self.partial_exact(self.m, x)
    }

    /// `int_J W / 2^(K beta)`, exactly; zero for every block.
    pub fn integral_coefficient(&self) -> BigRational {
        let d = rational_of(self.delta);
        let len = BigRational::new(BigInt::one(), BigInt::one() << self.level() as usize);
        let small = &len / BigRational::from_integer(BigInt::one() << self.m as usize);
        let peak = &d * BigRational::from_integer((BigInt::one() << self.m as usize) - 1);
        &peak * &small - &d * (&len - &small)
    }
}

fn rational_of(x: f64) -> BigRational {
    crate::martingale::dyadic_to_rational(&DyadicRational::from_f64(x).expect("finite"))
}

/// One layer of blocks: `W(delta_j, J)` on every `J` of level `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub stage: usize,
    pub n: u64,
    pub k: u32,
    pub m: u32,
    pub delta: f64,
    /// `log2 ||S_{k+M}||_inf` once this layer is in.
    pub norm_log2: f64,
    /// `2^(-k beta) ||S_before||_inf`, at most `delta/2`.
    pub gap: f64,
}

impl Placement {
    pub fn end(&self) -> u32 {
        self.k + self.m
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageInfo {
    pub j: usize,
    pub delta: f64,
    pub m: u32,
    pub n_j: u64,
    pub complete: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub beta: f64,
    pub depth_cap: u32,
    pub stages: Vec<StageInfo>,
    pub placements: Vec<Placement>,
    /// Set when the depth cap stopped construction early.
    pub truncated: bool,
}

/// `log2(2^a + 2^b)`.
fn log2_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp2().ln_1p() / std::f64::consts::LN_2
}

/// Largest level at which `2^(k beta)` still fits comfortably in a double.
fn float_cap(beta: f64) -> u32 {
    (900.0 / beta).floor() as u32
}

/// Lays out stages `0..stages`, each layer at the least admissible level.
/// Stops at `depth_cap` with the completed prefix; fails only if stage 0
/// cannot be completed.
pub fn build_schedule(beta: f64, stages: usize, depth_cap: u32) -> Result<BlockSchedule> {
    check_exponent("beta", beta)?;
    if stages == 0 {
        return Err(DomainError::new("at least one stage is needed").into());
    }
    let cap = depth_cap.min(float_cap(beta));
    let mut sched = BlockSchedule { beta, depth_cap: cap, stages: Vec::new(), placements: Vec::new(), truncated: false };
    let mut norm_log2 = f64::NEG_INFINITY;
    let mut end = 0u32;
    'outer: for j in 0..stages {
        let delta = delta_j(j);
        let m = m_of_delta(delta, beta)?;
        let n_j = n_of_j(j, beta)?;
        sched.stages.push(StageInfo { j, delta, m, n_j, complete: false });
        for n in 0..=n_j {
            // least k >= end with 2^(-k beta) ||S|| <= delta / 2
            let need = ((norm_log2 - (delta / 2.0).log2()) / beta).ceil();
            let mut k = if need.is_finite() { end.max(need.max(0.0) as u32) } else { end };
            while (norm_log2 - k as f64 * beta).exp2() > delta / 2.0 {
                k += 1;
            }
            if k + m > cap {
                sched.truncated = true;
                break 'outer;
            }
            let gap = (norm_log2 - k as f64 * beta).exp2();
            // the maximum is at x = 0, inside every peak
            let add = delta.log2() + k as f64 * beta + ((m as f64).exp2() - 1.0).log2();
            norm_log2 = log2_add(norm_log2, add);
            sched.placements.push(Placement { stage: j, n, k, m, delta, norm_log2, gap });
            end = k + m;
        }
        sched.stages[j].complete = true;
    }
    if !sched.stages[0].complete {
        return Err(DepthCap { requested: end + sched.stages[0].m, cap }.into());
    }
    Ok(sched)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleCheck {
    pub interleaving: bool,
    pub gaps: bool,
    pub norms: bool,
    pub first_level_zero: bool,
}

impl ScheduleCheck {
    pub fn ok(&self) -> bool {
        self.interleaving && self.gaps && self.norms && self.first_level_zero
    }
}

impl BlockSchedule {
    pub fn levels(&self, j: usize) -> Vec<u32> {
        self.placements.iter().filter(|p| p.stage == j).map(|p| p.k).collect()
    }

    /// Level after the last layer; the martingale is constant from here on.
    pub fn final_level(&self) -> u32 {
        self.placements.last().map(|p| p.end()).unwrap_or(0)
    }

    pub fn completed_stages(&self) -> usize {
        self.stages.iter().filter(|s| s.complete).count()
    }

    /// Recomputes norms from scratch and checks the chain
    /// `k + M <= k_next` and every gap inequality.
    pub fn verify(&self) -> ScheduleCheck {
        let mut interleaving = true;
        let mut gaps = true;
        let mut norms = true;
        let mut norm = f64::NEG_INFINITY;
        for (i, p) in self.placements.iter().enumerate() {
            if i > 0 && self.placements[i - 1].end() > p.k {
                interleaving = false;
            }
            let g = (norm - p.k as f64 * self.beta).exp2();
            if g > p.delta / 2.0 * (1.0 + 1e-12) || (g - p.gap).abs() > 1e-12 * p.delta {
                gaps = false;
            }
            let mut sum = 0.0f64;
            for q in &self.placements[..=i] {
                // relative to the newest term to stay in range
                sum += (q.delta.log2() + q.k as f64 * self.beta - p.k as f64 * self.beta).exp2()
                    * ((q.m as f64).exp2() - 1.0);
            }
            norm = sum.log2() + p.k as f64 * self.beta;
            if (norm - p.norm_log2).abs() > 1e-9 {
                norms = false;
            }
        }
        let first_level_zero = self.placements.first().map(|p| p.k == 0).unwrap_or(false);
        ScheduleCheck { interleaving, gaps, norms, first_level_zero }
    }
}

/// The martingale defined by a [`BlockSchedule`]: at level `L`,
/// `S_L = sum` over layers with `k < L` of `a (2^t - 1)` where the address
/// digits `k+1..k+t` are zero and `-a` elsewhere, `t = min(L - k, M)`,
/// `a = delta 2^(k beta)`.
#[derive(Clone, Debug)]
pub struct BlockMartingale {
    pub schedule: BlockSchedule,
}

pub fn assemble_martingale(schedule: &BlockSchedule) -> BlockMartingale {
    BlockMartingale { schedule: schedule.clone() }
}

impl BlockMartingale {
    fn amplitude(&self, p: &Placement) -> f64 {
        p.delta * (p.k as f64 * self.schedule.beta).exp2()
    }

    /// Whether the address digits `k+1..k+t` of `i` are all zero.
    fn in_peak(i: &DyadicInterval, k: u32, t: u32) -> bool {
        (k + 1..=k + t).all(|l| !i.digit(l))
    }

    /// `(2^(-i beta) max S_i, 2^(-i beta) min S_i)` over `[0,1)`, exact up to
    /// rounding since every extreme combination is attained.
    pub fn level_extremes(&self, i: u32) -> (f64, f64) {
        let beta = self.schedule.beta;
        let (mut hi, mut lo) = (0.0f64, 0.0f64);
        for p in self.schedule.placements.iter().filter(|p| p.k < i) {
            let a = (p.delta.log2() + (p.k as f64 - i as f64) * beta).exp2();
            let t = (i - p.k).min(p.m);
            hi += a * ((t as f64).exp2() - 1.0);
            lo -= a;
        }
        (hi, lo)
    }

    pub fn growth_report(&self) -> GrowthReport {
        let beta = self.schedule.beta;
        let last = self.schedule.final_level() + 8;
        let mut worst_growth = 0.0f64;
        let mut floors = Vec::new();
        let extremes: Vec<(f64, f64)> = (0..=last).map(|i| self.level_extremes(i)).collect();
        for (hi, lo) in &extremes {
            worst_growth = worst_growth.max(hi.abs()).max(lo.abs());
        }
        for st in self.schedule.stages.iter().filter(|s| s.complete) {
            let first = self.schedule.placements.iter().find(|p| p.stage == st.j).unwrap();
            let from = first.end();
            let min = extremes[from as usize..].iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
            floors.push(StageFloor { j: st.j, from_level: from, min_normalized: min, floor: -3.0 * st.delta });
        }
        let bound = (1.0 - beta).exp2();
        let ok = worst_growth <= bound && floors.iter().all(|f| f.min_normalized >= f.floor);
        GrowthReport { levels: last, worst_growth, bound, floors, ok }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageFloor {
    pub j: usize,
    pub from_level: u32,
    pub min_normalized: f64,
    pub floor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthReport {
    pub levels: u32,
    pub worst_growth: f64,
    pub bound: f64,
    pub floors: Vec<StageFloor>,
    pub ok: bool,
}

impl Martingale for BlockMartingale {
    fn value(&self, i: &DyadicInterval) -> f64 {
        let l = i.level();
        let mut s = 0.0;
        for p in self.schedule.placements.iter().take_while(|p| p.k < l) {
            let t = (l - p.k).min(p.m);
            let a = self.amplitude(p);
            s += if Self::in_peak(i, p.k, t) { a * ((t as f64).exp2() - 1.0) } else { -a };
        }
        s
    }

    fn exact(&self, i: &DyadicInterval) -> Option<BetaSum> {
        let l = i.level();
        let mut s = BetaSum::zero();
        for p in self.schedule.placements.iter().take_while(|p| p.k < l) {
            let t = (l - p.k).min(p.m);
            let d = rational_of(p.delta);
            let c = if Self::in_peak(i, p.k, t) {
                d * BigRational::from_integer((BigInt::one() << t as usize) - 1)
            } else {
                -d
            };
            s = s.add(&BetaSum::term(p.k as i64, c));
        }
        Some(s)
    }

    fn exact_beta(&self) -> f64 {
        self.schedule.beta
    }

    /// One pass over the levels: at most one layer is open at any level, so
    /// each step only updates that layer's contribution.
    fn ladder(&self, x: &DyadicRational, levels: u32) -> Vec<[f64; 2]> {
        let x = x.fract();
        let ps = &self.schedule.placements;
        let mut out = Vec::with_capacity(levels as usize);
        let mut done = 0.0;
        let mut next = 0usize;
        let mut zero_run = true;
        for l in 1..=levels {
            // close layers whose window ended above level l
            while next < ps.len() && ps[next].end() < l {
                let p = &ps[next];
                let a = self.amplitude(p);
                done += if zero_run { a * ((p.m as f64).exp2() - 1.0) } else { -a };
                next += 1;
                zero_run = true;
            }
            let pair = if next < ps.len() && ps[next].k < l {
                let p = &ps[next];
                let a = self.amplitude(p);
                let t = l - p.k;
                let lower = if zero_run { a * ((t as f64).exp2() - 1.0) } else { -a };
                [done + lower, done - a]
            } else {
                [done, done]
            };
            out.push(pair);
            if next < ps.len() && ps[next].k < l && x.digit(l) {
                zero_run = false;
            }
        }
        out
    }
}

impl GrowthMartingale for BlockMartingale {
    fn beta(&self) -> f64 {
        self.schedule.beta
    }
}

/// `|J_M ∪ F(J)|` and `|F(J) \ J_M|` for a block on `J = [0,1)` followed by
/// a layer `gap` levels after its end, computed by enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementMeasures {
    pub outside_peak: BigRational,
    pub with_peak: BigRational,
}

pub fn refinement_measures(m: u32, gap: u32) -> RefinementMeasures {
    let k = m + gap;
    let unit = BigRational::new(BigInt::one(), BigInt::one() << (k + m) as usize);
    let peak = DyadicInterval::new(m, 0u32);
    let mut outside = BigRational::zero();
    let mut inside = BigRational::zero();
    // peaks inside J_M are already counted by J_M itself
    for idx in 0u64..(1u64 << k) {
        // left-most child of rank k + m inside the level-k interval idx
        let child = DyadicInterval::new(k + m, BigInt::from(idx) << m as usize);
        if peak.contains_interval(&child) {
            inside += &unit;
        } else {
            outside += &unit;
        }
    }
    let peak_len = BigRational::new(BigInt::one(), BigInt::one() << m as usize);
    let _ = inside;
    RefinementMeasures { with_peak: &peak_len + &outside, outside_peak: outside }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecialEntry {
    pub level: u32,
    pub index: u64,
    pub left: bool,
    /// `|I|^beta S(I)`.
    pub normalized: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecialRegistry {
    pub stage: usize,
    pub m: u32,
    pub n_j: u64,
    pub levels: Vec<u32>,
    /// `|[0,1) \ ∪ F_j|`, exact.
    pub missed_special: BigRational,
    /// `|[0,1) \ ∪ F~_j|`, exact.
    pub missed_left: BigRational,
    /// `2 (1 - 2^-M)^n_j`.
    pub left_bound: f64,
    /// Per layer, the least `|I'|^beta S(I')` over its special intervals.
    pub min_normalized: Vec<f64>,
    pub enumerated: Vec<SpecialEntry>,
    pub ok: bool,
}

/// Levels up to which special intervals are listed one by one.
const ENUMERATION_LEVEL: u32 = 18;

/// Special intervals of stage `j` (the peaks `J_M` of its layers) and their
/// left neighbours. Measures come from the digit structure: a point is in a
/// peak of the layer at level `k` iff its digits `k+1..k+M` vanish, and in a
/// left neighbour iff they are all ones and digits `1..k` are not.
pub fn special_registry(s: &BlockSchedule, j: usize) -> Result<SpecialRegistry> {
    let st = s
        .stages
        .get(j)
        .filter(|st| st.complete)
        .ok_or_else(|| DomainError::new(format!("stage {j} was not built")))?;
    let layers: Vec<&Placement> = s.placements.iter().filter(|p| p.stage == j).collect();
    let m = st.m;
    let q = BigRational::one() - BigRational::new(BigInt::one(), BigInt::one() << m as usize);
    let missed_special = num_traits::pow::pow(q.clone(), layers.len());

    // two states: digits so far all ones, or not
    let half = |e: u32| BigRational::new(BigInt::one(), BigInt::one() << e as usize);
    let mut all_ones = BigRational::one();
    let mut other = BigRational::zero();
    let mut level = 0u32;
    for p in &layers {
        let free = p.k - level;
        let stay = half(free);
        other = &other + &all_ones * (BigRational::one() - &stay);
        all_ones = &all_ones * &stay;
        let window = half(m);
        other = &other * &q + &all_ones * &q;
        all_ones = &all_ones * &window;
        level = p.k + m;
    }
    let missed_left = &other + &all_ones;
    let left_bound = 2.0 * (1.0 - (-(m as f64)).exp2()).powf(st.n_j as f64);

    let mart = assemble_martingale(s);
    let beta = s.beta;
    let mut min_normalized = Vec::new();
    let mut enumerated = Vec::new();
    for (idx, p) in layers.iter().enumerate() {
        let pos = s.placements.iter().position(|q| q == *p).unwrap();
        let before: f64 = s.placements[..pos]
            .iter()
            .map(|q| (q.delta.log2() + (q.k as f64 - p.end() as f64) * beta).exp2())
            .sum();
        let own = (p.delta.log2() - m as f64 * beta).exp2() * ((m as f64).exp2() - 1.0);
        min_normalized.push(own - before);
        if p.end() <= ENUMERATION_LEVEL {
            let lvl = p.end();
            for jdx in 0u64..(1u64 << p.k) {
                let peak = DyadicInterval::new(lvl, jdx << m);
                let norm = (-(lvl as f64) * beta).exp2();
                enumerated.push(SpecialEntry { level: lvl, index: jdx << m, left: false, normalized: norm * mart.value(&peak) });
                if let Some(left) = peak.left_neighbor() {
                    enumerated.push(SpecialEntry {
                        level: lvl,
                        index: left.index_u64().unwrap(),
                        left: true,
                        normalized: norm * mart.value(&left),
                    });
                }
            }
        }
        let _ = idx;
    }
    let fifth = 0.2 * (1.0 - 1e-12);
    let ok = min_normalized.iter().all(|v| *v >= fifth)
        && enumerated.iter().filter(|e| !e.left).all(|e| e.normalized >= fifth)
        && to_f64(&missed_left) <= left_bound;
    Ok(SpecialRegistry {
        stage: j,
        m,
        n_j: st.n_j,
        levels: layers.iter().map(|p| p.k).collect(),
        missed_special,
        missed_left,
        left_bound,
        min_normalized,
        enumerated,
        ok,
    })
}

pub(crate) fn to_f64(q: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    let (n, d) = (q.numer(), q.denom());
    let shift = n.bits() as i64 - d.bits() as i64;
    // scale both to ~64 significant bits before dividing
    let sn = n.bits().saturating_sub(64);
    let sd = d.bits().saturating_sub(64);
    let nf = (n >> sn as usize).to_f64().unwrap_or(f64::NAN);
    let df = (d >> sd as usize).to_f64().unwrap_or(f64::NAN);
    let _ = shift;
    nf / df * (sn as f64 - sd as f64).exp2()
}

/// Constant in `|f(x+h) - f(x)| <= C h^alpha` for functions induced by a
/// martingale with `2^(-n beta) |S_n| <= 2^(1-beta)`, `beta = 1 - alpha`,
/// summed over at most four Whitney pieces per rank.
pub fn holder_constant(alpha: f64) -> f64 {
    4.0 * alpha.exp2() / (1.0 - (-alpha).exp2())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WitnessKind {
    /// `x` lies in the left neighbour of a special interval.
    LeftNeighbour,
    /// `x` lies in the special interval itself.
    Inside,
}

#[derive(Clone, Debug)]
pub struct SpecialWitness {
    pub stage: usize,
    pub n: u64,
    pub level: u32,
    pub kind: WitnessKind,
    /// `x + h` is the right end of the special interval.
    pub h: DyadicRational,
}

/// Steps `h` ending at the right end of a special interval of the given
/// stages that contains `x` or whose left neighbour contains `x`.
pub fn special_witnesses(s: &BlockSchedule, x: &DyadicRational, stages: &[usize], inside: bool) -> Vec<SpecialWitness> {
    let x = x.fract();
    let mut out = Vec::new();
    for p in s.placements.iter().filter(|p| stages.contains(&p.stage)) {
        let lvl = p.end();
        let here = crate::dyadic::locate_dyadic(&x, lvl);
        let peak_mask_zero = |i: &DyadicInterval| (1..=p.m).all(|d| !i.digit(p.k + d));
        let right = DyadicInterval::new(lvl, here.index() + 1);
        if right.index() < &(BigInt::one() << lvl as usize) && peak_mask_zero(&right) {
            out.push(SpecialWitness {
                stage: p.stage,
                n: p.n,
                level: lvl,
                kind: WitnessKind::LeftNeighbour,
                h: &right.right() - &x,
            });
        }
        if inside && peak_mask_zero(&here) {
            out.push(SpecialWitness { stage: p.stage, n: p.n, level: lvl, kind: WitnessKind::Inside, h: &here.right() - &x });
        }
    }
    out
}

/// The function induced by the block martingale with `alpha = 1 - beta`,
/// exact for points with up to `final level + extra` digits.
pub fn counterexample_function(s: &BlockSchedule, extra: u32) -> Result<InducedFunction<BlockMartingale>> {
    let alpha = 1.0 - s.beta;
    Ok(martingale_function(assemble_martingale(s), alpha)?
        .with_depth(s.final_level() + extra)
        .with_growth((1.0 - s.beta).exp2()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderCheck {
    pub pairs: usize,
    pub constant: f64,
    /// `max |f(x+h) - f(x)| / h^alpha` over the sample.
    pub worst_quotient: f64,
    pub worst_x: f64,
    pub worst_h: f64,
    pub ok: bool,
}

/// `|f(x+h) - f(x)| <= C(alpha) h^alpha` on random pairs, with `log2(1/h)`
/// uniform over the materialized levels.
pub fn holder_check(s: &BlockSchedule, pairs: usize, seed: u64) -> Result<HolderCheck> {
    let f = counterexample_function(s, 40)?;
    let alpha = 1.0 - s.beta;
    let top = (s.final_level() + 8) as f64;
    let sampler = PairSampler::new(pairs, (-top).exp2(), 1.0, seed).with_point_bits(s.final_level() + 40);
    let sample = sampler.sample();
    let est = parallel_max(&sample, |(x, h)| f.diff(x, h).abs() / dyadic_pow(h, alpha));
    let constant = holder_constant(alpha);
    let (q, at) = est;
    let (worst_x, worst_h) = at.map(|i| (sample[i].0.to_f64(), sample[i].1.to_f64())).unwrap_or((0.0, 0.0));
    Ok(HolderCheck { pairs, constant, worst_quotient: q, worst_x, worst_h, ok: q <= constant })
}

/// `h^alpha` for dyadic `h` far below the double range.
fn dyadic_pow(h: &DyadicRational, alpha: f64) -> f64 {
    let shift = h.numerator().bits() as i64 - h.exponent() as i64;
    let mant = h.shl(-shift).to_f64();
    (alpha * (mant.log2() + shift as f64)).exp2()
}

/// `|f(x+h) - f(x)| / |h|^alpha`, with `|h|` possibly below the double range.
fn quotient(f: &InducedFunction<BlockMartingale>, x: &DyadicRational, h: &DyadicRational, alpha: f64) -> f64 {
    let a = if h.is_negative() { -h } else { h.clone() };
    f.diff(x, h) / dyadic_pow(&a, alpha)
}

fn parallel_max<T: Sync>(items: &[T], g: impl Fn(&T) -> f64 + Sync) -> (f64, Option<usize>) {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let g = &g;
                scope.spawn(move || {
                    let mut best = (f64::NEG_INFINITY, None);
                    for (i, it) in part.iter().enumerate() {
                        let v = g(it);
                        if v > best.0 {
                            best = (v, Some(c * chunk + i));
                        }
                    }
                    best
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .fold((f64::NEG_INFINITY, None), |a, b| if b.0 > a.0 { b } else { a })
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointWitness {
    pub x: f64,
    /// Best `Delta_alpha` over left-neighbour witnesses.
    pub best_left: Option<f64>,
    /// Best over all witnesses, including those from inside the special
    /// interval.
    pub best_any: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WitnessCoverage {
    pub points: usize,
    pub stages: Vec<usize>,
    pub threshold: f64,
    pub left_fraction: f64,
    pub any_fraction: f64,
    pub per_point: Vec<PointWitness>,
}

/// For random `x`, the largest `Delta_alpha(f)(x, h)` over special-interval
/// witnesses of the given stages; coverage is the fraction of points where
/// it reaches `threshold`.
pub fn witness_coverage(s: &BlockSchedule, points: usize, seed: u64, stages: &[usize], threshold: f64) -> Result<WitnessCoverage> {
    for j in stages {
        if !s.stages.get(*j).map(|st| st.complete).unwrap_or(false) {
            return Err(DomainError::new(format!("stage {j} was not built")).into());
        }
    }
    let f = counterexample_function(s, 40)?;
    let alpha = 1.0 - s.beta;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<DyadicRational> = (0..points).map(|_| random_dyadic(&mut rng, s.final_level() + 40)).collect();
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let chunk = xs.len().div_ceil(threads).max(1);
    let per_point: Vec<PointWitness> = std::thread::scope(|scope| {
        let handles: Vec<_> = xs
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || {
                    part.iter()
                        .map(|x| {
                            let mut best_left: Option<f64> = None;
                            let mut best_any: Option<f64> = None;
                            for w in special_witnesses(s, x, stages, true) {
                                let q = quotient(f, x, &w.h, alpha);
                                best_any = Some(best_any.map_or(q, |b| b.max(q)));
                                if w.kind == WitnessKind::LeftNeighbour {
                                    best_left = Some(best_left.map_or(q, |b| b.max(q)));
                                }
                            }
                            PointWitness { x: x.to_f64(), best_left, best_any }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    let hit = |v: Option<f64>| v.map(|q| q >= threshold).unwrap_or(false);
    let n = points.max(1) as f64;
    let left_fraction = per_point.iter().filter(|p| hit(p.best_left)).count() as f64 / n;
    let any_fraction = per_point.iter().filter(|p| hit(p.best_any)).count() as f64 / n;
    Ok(WitnessCoverage { points, stages: stages.to_vec(), threshold, left_fraction, any_fraction, per_point })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::martingale::check_cancellation;

    #[test]
    fn block_lengths() {
        assert_eq!(m_of_delta(0.125, 0.5).unwrap(), 5);
        assert_eq!(m_of_delta(0.25, 0.5).unwrap(), 3);
        assert!(sandwich(0.125, 0.5, 5));
        for beta in [0.25, 0.5, 0.75] {
            for j in 0..=20 {
                let m = m_of_delta(delta_j(j), beta).unwrap();
                assert!(sandwich(delta_j(j), beta, m), "j={j} beta={beta}");
            }
        }
        assert!(m_of_delta(0.5, 0.5).is_err());
        assert!(m_of_delta(0.1, 1.0).is_err());
    }

    #[test]
    fn haar_values() {
        let u = DyadicInterval::unit();
        assert_eq!(haar(&u, &DyadicRational::new(1, 2)), 1);
        assert_eq!(haar(&u, &DyadicRational::new(3, 2)), -1);
        assert_eq!(haar(&DyadicInterval::new(1, 0), &DyadicRational::new(3, 2)), 0);
    }

    #[test]
    fn closed_form_block() {
        let b = building_block(0.125, DyadicInterval::unit(), 0.5).unwrap();
        assert_eq!(b.m, 5);
        assert!(b.checks.ok);
        assert_eq!(b.value(&DyadicRational::new(1, 6)), 31.0 / 8.0);
        assert_eq!(b.value(&DyadicRational::new(1, 5)), -1.0 / 8.0);
        assert_eq!(b.value(&DyadicRational::new(7, 3)), -1.0 / 8.0);
        assert!(b.integral_coefficient().is_zero());
        assert!(31.0 / (8.0 * 2f64.powf(2.5)) <= 2f64.sqrt());
    }

    #[test]
    fn haar_sum_equals_closed_form() {
        let b = building_block(delta_j(1), DyadicInterval::new(3, 5u32), 0.5).unwrap();
        for i in 0..1024u64 {
            let x = DyadicRational::new(i, 10);
            let mut sum = BetaSum::zero();
            for k in 0..b.m {
                sum = sum.add(&b.difference_exact(k, &x));
            }
            assert_eq!(sum, b.value_exact(&x));
        }
    }

    #[test]
    fn block_counts() {
        assert_eq!(n_of_j(0, 0.5).unwrap(), 11);
        assert_eq!(n_of_j(1, 0.5).unwrap(), 66);
        for j in 0..=12 {
            let m = m_of_delta(delta_j(j), 0.5).unwrap();
            let n = n_of_j(j, 0.5).unwrap() as f64;
            assert!(n * (-(m as f64)).exp2().neg_ln_1p() <= delta_j(j).ln());
        }
    }

    trait NegLn {
        fn neg_ln_1p(self) -> f64;
    }
    impl NegLn for f64 {
        fn neg_ln_1p(self) -> f64 {
            (-self).ln_1p()
        }
    }

    #[test]
    fn schedule_starts_at_zero_and_verifies() {
        let s = build_schedule(0.5, 2, 2000).unwrap();
        assert_eq!(s.placements[0].k, 0);
        assert!(s.verify().ok());
        assert_eq!(s.completed_stages(), 2);
        assert_eq!(s.levels(0).len(), 12);
    }

    #[test]
    fn depth_cap_reports_prefix() {
        assert!(matches!(build_schedule(0.5, 1, 40), Err(Error::Depth(_))));
        let s = build_schedule(0.5, 3, 400).unwrap();
        assert!(s.truncated);
        assert_eq!(s.completed_stages(), 1);
        assert!(s.final_level() <= 400);
    }

    #[test]
    fn first_block_prefix() {
        let s = build_schedule(0.5, 1, 2000).unwrap();
        let mart = assemble_martingale(&s);
        let b = building_block(delta_j(0), DyadicInterval::unit(), 0.5).unwrap();
        for i in 1..=b.m {
            for idx in 0..(1u64 << i) {
                let iv = DyadicInterval::new(i, idx);
                assert_eq!(mart.value(&iv), b.partial(i, &iv.left()));
            }
        }
    }

    #[test]
    fn constant_between_layers() {
        let s = build_schedule(0.5, 1, 2000).unwrap();
        let mart = assemble_martingale(&s);
        let (a, b) = (s.placements[0].end(), s.placements[1].k);
        assert!(b > a);
        for idx in 0..(1u64 << a) {
            let iv = DyadicInterval::new(a, idx);
            let v = mart.value(&iv);
            let deeper = DyadicInterval::new(b, BigInt::from(idx) << (b - a) as usize);
            assert_eq!(mart.value(&deeper), v);
        }
    }

    #[test]
    fn cancellation_holds() {
        let s = build_schedule(0.5, 2, 2000).unwrap();
        let mart = assemble_martingale(&s);
        let r = check_cancellation(&mart, 14);
        assert!(r.exact && r.max_violation == 0.0, "{r:?}");
    }

    #[test]
    fn ladder_matches_values() {
        let s = build_schedule(0.5, 2, 2000).unwrap();
        let mart = assemble_martingale(&s);
        for x in [DyadicRational::new(1, 60), DyadicRational::new(12345, 14), DyadicRational::new(3, 2)] {
            let fast = mart.ladder(&x, 60);
            for l in 1..=60u32 {
                let p = crate::dyadic::locate_dyadic(&x, l - 1);
                assert_eq!(fast[l as usize - 1], [mart.value(&p.lower()), mart.value(&p.upper())], "l={l}");
            }
        }
    }

    #[test]
    fn growth_and_floors() {
        let s = build_schedule(0.5, 2, 2000).unwrap();
        let r = assemble_martingale(&s).growth_report();
        assert!(r.ok, "{r:?}");
    }

    #[test]
    fn refinement_identity() {
        for (m, gap) in [(3u32, 1u32), (3, 4), (5, 2)] {
            let r = refinement_measures(m, gap);
            let pm = BigRational::new(BigInt::one(), BigInt::one() << m as usize);
            let rest = BigRational::one() - &pm;
            assert_eq!(r.outside_peak, &pm * &rest);
            let two = BigRational::from_integer(2.into());
            assert_eq!(r.with_peak, (&two - &pm) * &pm);
        }
    }

    #[test]
    fn registry_stage_zero() {
        let s = build_schedule(0.5, 2, 2000).unwrap();
        let r = special_registry(&s, 0).unwrap();
        assert!(r.ok, "{:?}", r.min_normalized);
        assert!(!r.enumerated.is_empty());
        // left neighbours never start before 0
        assert!(r.enumerated.iter().filter(|e| e.left).all(|e| e.index + 1 < 1 << e.level));
        let want = num_traits::pow::pow(BigRational::new(7.into(), 8.into()), 12);
        assert_eq!(r.missed_special, want);
        assert!(special_registry(&s, 5).is_err());
    }

    #[test]
    fn left_measure_by_enumeration() {
        // a toy schedule shallow enough to enumerate every point
        let s = BlockSchedule {
            beta: 0.5,
            depth_cap: 40,
            stages: vec![StageInfo { j: 0, delta: 0.25, m: 3, n_j: 1, complete: true }],
            placements: vec![
                Placement { stage: 0, n: 0, k: 0, m: 3, delta: 0.25, norm_log2: 0.0, gap: 0.0 },
                Placement { stage: 0, n: 1, k: 5, m: 3, delta: 0.25, norm_log2: 0.0, gap: 0.0 },
            ],
            truncated: false,
        };
        let r = special_registry(&s, 0).unwrap();
        let depth = 8u32;
        let mut hit = 0u64;
        for idx in 0u64..(1 << depth) {
            let x = DyadicRational::new(idx, depth);
            if !special_witnesses(&s, &x, &[0], false).is_empty() {
                hit += 1;
            }
        }
        let missed = BigRational::new(BigInt::from((1u64 << depth) - hit), BigInt::from(1u64 << depth));
        assert_eq!(r.missed_left, missed);
    }

    #[test]
    fn holder_bound_on_a_sample() {
        let s = build_schedule(0.5, 1, 2000).unwrap();
        let c = holder_check(&s, 300, 2).unwrap();
        assert!(c.ok, "{c:?}");
        assert!(c.worst_quotient > 0.1);
    }

    #[test]
    fn witnesses_reach_threshold() {
        let s = build_schedule(0.5, 2, 2000).unwrap();
        let w = witness_coverage(&s, 40, 5, &[0, 1], 0.05 - 1e-3).unwrap();
        assert!(w.any_fraction >= w.left_fraction);
        assert!(w.any_fraction >= 0.9, "{}", w.any_fraction);
        assert!(witness_coverage(&s, 1, 5, &[4], 0.05).is_err());
    }

    #[test]
    fn rational_to_float() {
        let q = BigRational::new(BigInt::from(3), BigInt::one() << 2000usize);
        let v = to_f64(&(q * BigRational::from_integer(BigInt::one() << 1999usize)));
        assert_eq!(v, 1.5);
    }
}
