//! Divided differences, the accumulated difference `Theta_eps` and
//! statistics over scales measured with `dh/h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{locate_dyadic, DyadicRational};
use crate::error::{check_exponent, DomainError};
use crate::holder_functions::HolderFunction;
use crate::holder_functions::{Affine, Weierstrass};
use crate::martingale::Martingale;
use crate::quad::Composite;

/// `(f(x+h) - f(x)) / |h|^alpha`.
pub fn divided_difference<F: HolderFunction + ?Sized>(
    f: &F,
    alpha: f64,
    x: &DyadicRational,
    h: &DyadicRational,
) -> Result<f64, DomainError> {
    if h.is_zero() {
        return Err(DomainError::new("divided difference needs h != 0"));
    }
    check_exponent("alpha", alpha)?;
    Ok(f.diff(x, h) / h.to_f64().abs().powf(alpha))
}

fn dyadic(v: f64) -> DyadicRational {
    DyadicRational::from_f64(v).expect("finite")
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadConfig {
    pub panels_per_octave: usize,
    /// Gauss points per panel; the rule has order `2 * points`.
    pub points: usize,
    /// Target for the summed refinement differences.
    pub tol: f64,
    /// Panel budget per octave for the adaptive doubling.
    pub max_panels_per_octave: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { panels_per_octave: 32, points: 2, tol: 1e-6, max_panels_per_octave: 1024 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ThetaValue {
    /// Value on the finest grid used.
    pub value: f64,
    /// Sum over octaves of the last refinement difference.
    pub error: f64,
    pub converged: bool,
}

/// `int_eps^1 (f(x+h) - f(x)) / h^alpha dh/h`, computed in `u = log2(1/h)`
/// with panels aligned to whole octaves.
pub fn theta<F: HolderFunction + ?Sized>(
    f: &F,
    alpha: f64,
    x: &DyadicRational,
    eps: f64,
    quad: &QuadConfig,
) -> Result<ThetaValue, DomainError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(DomainError::new(format!("eps must lie in (0,1), got {eps}")));
    }
    Ok(theta_profile(f, alpha, x, &[eps], quad)?[0])
}

/// `Theta_eps` for several `eps` in one pass; the integral is accumulated
/// from `h = 1` down, so each value costs only its own panels.
pub fn theta_profile<F: HolderFunction + ?Sized>(
    f: &F,
    alpha: f64,
    x: &DyadicRational,
    eps: &[f64],
    quad: &QuadConfig,
) -> Result<Vec<ThetaValue>, DomainError> {
    check_exponent("alpha", alpha)?;
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(DomainError::new(format!("eps must lie in (0,1), got {e}")));
    }
    if quad.panels_per_octave == 0 || quad.points == 0 {
        return Err(DomainError::new("quadrature needs at least one panel and one point"));
    }
    let ln2 = std::f64::consts::LN_2;
    let mut g = |u: f64| {
        let h = (-u).exp2();
        f.diff(x, &dyadic(h)) * (alpha * u).exp2() * ln2
    };
    Ok(cumulative(&mut g, eps, quad))
}

/// `int_0^{log2(1/e)} g` for each `e`. Each octave (or partial octave) is
/// refined by doubling its panels until the change is below its share of
/// `tol` or the budget is spent.
fn cumulative(g: &mut impl FnMut(f64) -> f64, eps: &[f64], quad: &QuadConfig) -> Vec<ThetaValue> {
    let rule = Composite::new(quad.points);
    let tops: Vec<f64> = eps.iter().map(|e| (1.0 / e).log2()).collect();
    let span = tops.iter().cloned().fold(1.0, f64::max);
    let mut order: Vec<usize> = (0..eps.len()).collect();
    order.sort_by(|a, b| tops[*a].total_cmp(&tops[*b]));
    let mut out = vec![ThetaValue { value: 0.0, error: 0.0, converged: true }; eps.len()];
    let (mut a, mut acc, mut err) = (0.0f64, 0.0, 0.0);
    for i in order {
        let top = tops[i];
        while a < top {
            let b = (a.floor() + 1.0).min(top);
            let share = quad.tol * (b - a) / span;
            let budget = ((b - a) * quad.max_panels_per_octave as f64).ceil().max(1.0) as usize;
            let mut panels = ((b - a) * quad.panels_per_octave as f64).ceil().max(1.0) as usize;
            let mut prev = rule.integrate(g, a, b, panels);
            let mut diff;
            loop {
                panels *= 2;
                let next = rule.integrate(g, a, b, panels);
                diff = (next - prev).abs();
                prev = next;
                if diff <= share || panels >= budget {
                    break;
                }
            }
            acc += prev;
            err += diff;
            a = b;
        }
        out[i] = ThetaValue { value: acc, error: err, converged: err <= quad.tol };
    }
    out
}

/// `Theta_eps` of a Weierstrass function term by term: with `v = b^n h`,
/// term `n` is `int_{b^n eps}^{b^n} (cos(phi + v) - cos phi) v^(-alpha-1) dv`.
pub fn theta_weierstrass(w: &Weierstrass, x: f64, eps: f64) -> Result<f64, DomainError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(DomainError::new(format!("eps must lie in (0,1), got {eps}")));
    }
    let s = w.alpha + 1.0;
    let mut total = 0.0;
    let mut bn = 1.0f64;
    for _ in 0..=w.terms {
        let phi = bn * x;
        let (c_lo, s_lo) = oscillatory_tail(bn * eps, s);
        let (c_hi, s_hi) = oscillatory_tail(bn, s);
        // int_A^B cos(phi+v) v^-s - cos(phi) v^-s
        let power = ((bn * eps).powf(1.0 - s) - bn.powf(1.0 - s)) / (s - 1.0);
        let cos_part = c_lo - c_hi;
        let sin_part = s_lo - s_hi;
        total += phi.cos() * (cos_part - power) - phi.sin() * sin_part;
        bn *= w.b;
    }
    Ok(total)
}

/// `(int_A^inf cos v v^-s dv, int_A^inf sin v v^-s dv)` for `s > 1`.
fn oscillatory_tail(a: f64, s: f64) -> (f64, f64) {
    const FAR: f64 = 64.0;
    let far = a.max(FAR);
    // int_V^inf e^(iv) v^-s = i e^(iV) V^-s - i s int_V^inf e^(iv) v^(-s-1)
    let (mut re, mut im) = (0.0, 0.0);
    let (mut coef_re, mut coef_im) = (0.0, 1.0);
    let mut p = s;
    let (cv, sv) = (far.cos(), far.sin());
    for _ in 0..12 {
        let mag = far.powf(-p);
        // coef * e^(iV) * V^-p
        re += mag * (coef_re * cv - coef_im * sv);
        im += mag * (coef_re * sv + coef_im * cv);
        // coef *= -i p
        let (r, i) = (coef_im * p, -coef_re * p);
        coef_re = r;
        coef_im = i;
        p += 1.0;
    }
    if a >= FAR {
        return (re, im);
    }
    // [a, FAR] with log-spaced Gauss panels near 0 and unit panels beyond
    let rule = Composite::new(8);
    let mut c = |v: f64| v.cos() * v.powf(-s);
    let mut sn = |v: f64| v.sin() * v.powf(-s);
    let mut edges = vec![a];
    let mut e = a;
    while e < 1.0 {
        e = (2.0 * e).min(1.0);
        edges.push(e);
    }
    let (mut cs, mut ss) = (re, im);
    for w in edges.windows(2) {
        cs += rule.integrate(&mut c, w[0], w[1], 4);
        ss += rule.integrate(&mut sn, w[0], w[1], 4);
    }
    let lo = e.max(a);
    let panels = ((FAR - lo) * 2.0).ceil() as usize;
    cs += rule.integrate(&mut c, lo, FAR, panels);
    ss += rule.integrate(&mut sn, lo, FAR, panels);
    (cs, ss)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdEvent {
    pub delta: f64,
    pub c: f64,
    /// `sigma{t : Delta > delta}`.
    pub above: f64,
    /// `sigma{t : -c <= Delta <= delta}`.
    pub middle: f64,
    /// `sigma{t : Delta < -c}`.
    pub below: f64,
    pub stderr_above: f64,
    pub stderr_middle: f64,
    pub stderr_below: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleStatistics {
    pub x: f64,
    pub eps: f64,
    pub seed: u64,
    pub samples: usize,
    /// `log(1/eps)`, the measure of `[eps, 1]`.
    pub total: f64,
    pub events: Vec<ThresholdEvent>,
}

/// Haar measures of `{t in [eps,1] : Delta_alpha(f)(x,t) > delta}` and
/// `{... < -c}` for each `(delta, c)`, by sampling `t = eps^U`.
pub fn sigma_stats<F: HolderFunction + ?Sized>(
    f: &F,
    alpha: f64,
    x: &DyadicRational,
    eps: f64,
    thresholds: &[(f64, f64)],
    samples: usize,
    seed: u64,
) -> Result<ScaleStatistics, DomainError> {
    check_exponent("alpha", alpha)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(DomainError::new(format!("eps must lie in (0,1), got {eps}")));
    }
    if let Some(t) = thresholds.iter().find(|(d, c)| !d.is_finite() || !c.is_finite()) {
        return Err(DomainError::new(format!("thresholds must be finite, got {t:?}")));
    }
    if let Some(t) = thresholds.iter().find(|(d, c)| *d < -*c) {
        return Err(DomainError::new(format!("need -c <= delta so the three events partition, got {t:?}")));
    }
    if samples == 0 {
        return Err(DomainError::new("at least one sample is needed"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log2_inv = (1.0 / eps).log2();
    let quotients: Vec<f64> = (0..samples)
        .map(|_| {
            let u: f64 = rng.gen();
            let t = dyadic((-u * log2_inv).exp2());
            f.diff(x, &t) / t.to_f64().powf(alpha)
        })
        .collect();
    let total = (1.0 / eps).ln();
    let n = samples as f64;
    let measure = |k: usize| {
        let p = k as f64 / n;
        (total * p, total * (p * (1.0 - p) / n).sqrt())
    };
    let events = thresholds
        .iter()
        .map(|&(delta, c)| {
            let above = quotients.iter().filter(|q| **q > delta).count();
            let below = quotients.iter().filter(|q| **q < -c).count();
            let (a, sa) = measure(above);
            let (b, sb) = measure(below);
            let (m, sm) = measure(samples - above - below);
            ThresholdEvent { delta, c, above: a, middle: m, below: b, stderr_above: sa, stderr_middle: sm, stderr_below: sb }
        })
        .collect();
    Ok(ScaleStatistics { x: x.to_f64(), eps, seed, samples, total, events })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrendTest {
    pub slope: f64,
    pub stderr: f64,
    pub t: f64,
    /// Two-sided 95% critical value of Student's t.
    pub critical: f64,
    pub flat: bool,
}

/// Least-squares slope of `ys` against `xs` and a two-sided t-test of
/// slope zero at 95%.
pub fn trend_test(xs: &[f64], ys: &[f64]) -> TrendTest {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let df = xs.len().saturating_sub(2).max(1);
    let stderr = (rss / df as f64 / sxx).sqrt();
    let t = if stderr > 0.0 { slope / stderr } else if slope == 0.0 { 0.0 } else { f64::INFINITY };
    let critical = t_critical_95(df);
    TrendTest { slope, stderr, t, critical, flat: t.abs() < critical }
}

/// Two-sided 95% quantile of Student's t.
fn t_critical_95(df: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    StudentsT::new(0.0, 1.0, df as f64).map(|t| t.inverse_cdf(0.975)).unwrap_or(f64::INFINITY)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapProfile {
    /// `(n, max over x and eps in [2^(-n-1), 2^-n] of |Theta_eps - S_n|)`.
    pub levels: Vec<(u32, f64)>,
    /// `(n, mean over x of max over eps of |Theta_eps - S_n|)`.
    pub mean: Vec<(u32, f64)>,
    pub sup: f64,
    /// Largest quadrature error estimate met.
    pub quad_error: f64,
}

impl GapProfile {
    /// Trend of the per-level sup.
    pub fn trend(&self, from: u32, to: u32) -> TrendTest {
        Self::trend_of(&self.levels, from, to)
    }

    /// Trend of the per-level mean, far less noisy than the sup.
    pub fn mean_trend(&self, from: u32, to: u32) -> TrendTest {
        Self::trend_of(&self.mean, from, to)
    }

    fn trend_of(profile: &[(u32, f64)], from: u32, to: u32) -> TrendTest {
        let (xs, ys): (Vec<f64>, Vec<f64>) = profile
            .iter()
            .filter(|(n, _)| (from..=to).contains(n))
            .map(|(n, g)| (*n as f64, *g))
            .unzip();
        trend_test(&xs, &ys)
    }
}

/// Functions with a closed-form `int_x^{x+h} f`.
pub trait Antiderivative: HolderFunction {
    fn integral(&self, x: f64, h: f64) -> f64;
}

impl Antiderivative for Affine {
    fn integral(&self, x: f64, h: f64) -> f64 {
        let (c, s) = (self.c.to_f64(), self.slope.to_f64());
        c * h + s * h * (x + 0.5 * h)
    }
}

impl Antiderivative for Weierstrass {
    fn integral(&self, x: f64, h: f64) -> f64 {
        let mut s = 0.0;
        let mut bn = 1.0f64;
        for _ in 0..=self.terms {
            s += 2.0 * bn.powf(-self.alpha - 1.0) * (bn * (x + 0.5 * h)).cos() * (0.5 * bn * h).sin();
            bn *= self.b;
        }
        s
    }
}

impl<F: Antiderivative + ?Sized> Antiderivative for &F {
    fn integral(&self, x: f64, h: f64) -> f64 {
        (**self).integral(x, h)
    }
}

/// `S_n(I) = 1/|I| int_I int_0^1 (f(y+h) - f(y)) / h^alpha dh/h dy`.
///
/// The inner integral is additive in `I`, so this is a martingale, and
/// `Theta_eps(f)(x) - S_n(x)` stays bounded for `eps ~ 2^-n`.
pub struct ThetaMartingale<F> {
    pub f: F,
    pub alpha: f64,
    /// Scales `h >= 2^-top` are integrated numerically, the rest uses
    /// `int_I (f(y+h) - f(y)) dy ~ h (f(r) - f(l))`. The cut does not
    /// depend on the level, which keeps the cancellation exact up to
    /// rounding.
    pub top: u32,
    pub panels_per_octave: usize,
}

pub fn theta_martingale<F: Antiderivative>(f: F, alpha: f64) -> Result<ThetaMartingale<F>, DomainError> {
    check_exponent("alpha", alpha)?;
    Ok(ThetaMartingale { f, alpha, top: 40, panels_per_octave: 8 })
}

impl<F: Antiderivative> Martingale for ThetaMartingale<F> {
    fn value(&self, i: &crate::dyadic::DyadicInterval) -> f64 {
        let (l, r) = (i.left().to_f64(), i.right().to_f64());
        let n = i.level();
        let alpha = self.alpha;
        let ln2 = std::f64::consts::LN_2;
        let mut g = |u: f64| {
            let h = (-u).exp2();
            (self.f.integral(r, h) - self.f.integral(l, h)) * (alpha * u).exp2() * ln2
        };
        let top = self.top.max(n + 20) as f64;
        let body = Composite::new(4).integrate(&mut g, 0.0, top, self.panels_per_octave * top as usize);
        let h = (-top).exp2();
        let jump = self.f.eval(r) - self.f.eval(l);
        let tail = jump * h.powf(1.0 - alpha) / (1.0 - alpha);
        (n as f64).exp2() * (body + tail)
    }
}

/// Points of the `eps` grid inside `[2^(-n-1), 2^-n]`.
const EPS_GRID: usize = 5;

/// `|Theta_eps(f)(x) - S_n(x)|` over the sample, `n = 1..=depth`.
pub fn theta_martingale_gap<F: Antiderivative + Sync>(
    f: &F,
    alpha: f64,
    depth: u32,
    sample: &[DyadicRational],
    quad: &QuadConfig,
) -> Result<GapProfile, DomainError> {
    let s = theta_martingale(f, alpha)?;
    let mut eps = Vec::new();
    for n in 1..=depth {
        for e in 0..EPS_GRID {
            eps.push((-(n as f64) - e as f64 / (EPS_GRID - 1) as f64).exp2());
        }
    }
    // one row of per-level gaps per point, points spread over threads
    let rows: Vec<Result<(Vec<f64>, f64), DomainError>> = std::thread::scope(|scope| {
        let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let chunk = sample.len().div_ceil(threads).max(1);
        let handles: Vec<_> = sample
            .chunks(chunk)
            .map(|part| {
                let (s, eps) = (&s, &eps);
                scope.spawn(move || {
                    part.iter()
                        .map(|x| {
                            let x = x.fract();
                            let th = theta_profile(f, alpha, &x, eps, quad)?;
                            let err = th.iter().map(|t| t.error).fold(0.0, f64::max);
                            let gaps = (1..=depth)
                                .map(|n| {
                                    let sn = s.value(&locate_dyadic(&x, n));
                                    th[(n as usize - 1) * EPS_GRID..n as usize * EPS_GRID]
                                        .iter()
                                        .map(|t| (t.value - sn).abs())
                                        .fold(0.0, f64::max)
                                })
                                .collect();
                            Ok((gaps, err))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("gap worker panicked")).collect()
    });
    let mut worst = vec![0.0f64; depth as usize];
    let mut sum = vec![0.0f64; depth as usize];
    let mut quad_error = 0.0f64;
    for row in rows {
        let (gaps, err) = row?;
        quad_error = quad_error.max(err);
        for (i, g) in gaps.iter().enumerate() {
            worst[i] = worst[i].max(*g);
            sum[i] += g;
        }
    }
    let count = sample.len().max(1) as f64;
    let mean = (1..=depth).zip(sum.iter().map(|s| s / count)).collect();
    let levels: Vec<(u32, f64)> = (1..=depth).zip(worst).collect();
    let sup = levels.iter().map(|l| l.1).fold(0.0, f64::max);
    Ok(GapProfile { levels, mean, sup, quad_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::DyadicInterval;
    use approx::assert_abs_diff_eq;

    fn d(v: f64) -> DyadicRational {
        dyadic(v)
    }

    #[test]
    fn constant_and_linear_quotients() {
        let c = Affine::new(2.0, 0.0, 0.5);
        let id = Affine::new(0.0, 1.0, 0.5);
        for (x, h) in [(0.25, 0.125), (0.7, -0.3), (0.0, 1e-3)] {
            assert_eq!(divided_difference(&c, 0.5, &d(x), &d(h)).unwrap(), 0.0);
            let want = h / h.abs().powf(0.5);
            assert_abs_diff_eq!(divided_difference(&id, 0.5, &d(x), &d(h)).unwrap(), want, epsilon = 1e-15);
        }
        assert!(divided_difference(&id, 0.5, &d(0.1), &DyadicRational::zero()).is_err());
    }

    #[test]
    fn weierstrass_quotient_against_series() {
        let w = Weierstrass::new(2.0, 0.5, 1e-12).unwrap();
        let h = (-10.0f64).exp2();
        let mut series = 0.0;
        for n in 0..=w.terms {
            let bn = 2f64.powi(n as i32);
            series += bn.powf(-0.5) * ((bn * h).cos() - 1.0);
        }
        let got = divided_difference(&w, 0.5, &d(0.0), &d(h)).unwrap();
        assert_abs_diff_eq!(got, series / h.sqrt(), epsilon = 1e-7);
    }

    #[test]
    fn theta_of_constant_is_zero() {
        let c = Affine::new(-1.5, 0.0, 0.5);
        let t = theta(&c, 0.5, &d(0.3), 1e-3, &QuadConfig::default()).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.converged);
    }

    #[test]
    fn theta_of_identity() {
        let id = Affine::new(0.0, 1.0, 0.5);
        for (alpha, eps) in [(0.5, 1e-3), (0.25, 0.3), (0.8, 1e-6)] {
            let t = theta(&id, alpha, &d(0.0), eps, &QuadConfig::default()).unwrap();
            let want = (1.0 - f64::powf(eps, 1.0 - alpha)) / (1.0 - alpha);
            assert_abs_diff_eq!(t.value, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn theta_domain() {
        let id = Affine::new(0.0, 1.0, 0.5);
        assert!(theta(&id, 0.5, &d(0.0), 1.0, &QuadConfig::default()).is_err());
        assert!(theta(&id, 0.5, &d(0.0), 0.0, &QuadConfig::default()).is_err());
    }

    #[test]
    fn theta_refinement_within_estimate() {
        let w = Weierstrass::new(2.0, 0.5, 1e-10).unwrap();
        let q = QuadConfig::default();
        let finer = QuadConfig { panels_per_octave: 2 * q.panels_per_octave, ..q };
        for x in [0.0, 0.37, 1.9] {
            let a = theta(&w, 0.5, &d(x), 1e-4, &q).unwrap();
            let b = theta(&w, 0.5, &d(x), 1e-4, &finer).unwrap();
            assert!((a.value - b.value).abs() <= a.error, "x={x} {a:?} {b:?}");
            let exact = theta_weierstrass(&w, x, 1e-4).unwrap();
            assert!((a.value - exact).abs() <= a.error, "x={x} {a:?} {exact}");
        }
    }

    #[test]
    fn weierstrass_theta_against_quadrature() {
        // three terms: the quadrature resolves every frequency
        let w = Weierstrass { terms: 2, ..Weierstrass::new(2.0, 0.5, 1e-3).unwrap() };
        let q = QuadConfig { tol: 1e-11, max_panels_per_octave: 1 << 14, ..QuadConfig::default() };
        for (x, eps) in [(0.0, 1e-3), (0.4, 0.05), (2.5, 1e-5)] {
            let t = theta(&w, 0.5, &d(x), eps, &q).unwrap();
            assert!(t.converged, "{t:?}");
            assert_abs_diff_eq!(t.value, theta_weierstrass(&w, x, eps).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn full_event_has_full_measure() {
        // Delta = h^(1/2) * 40 > 0 on all of [eps, 1]
        let f = Affine::new(0.0, 40.0, 0.5);
        let s = sigma_stats(&f, 0.5, &d(0.1), 1e-4, &[(0.0, 1.0)], 500, 3).unwrap();
        assert_eq!(s.events[0].above, s.total);
        assert_eq!(s.events[0].stderr_above, 0.0);
        let c = Affine::new(1.0, 0.0, 0.5);
        let s = sigma_stats(&c, 0.5, &d(0.1), 1e-4, &[(0.1, 0.1)], 500, 3).unwrap();
        assert_eq!((s.events[0].above, s.events[0].below), (0.0, 0.0));
    }

    #[test]
    fn weierstrass_takes_both_signs() {
        let w = Weierstrass::new(2.0, 0.5, 1e-10).unwrap();
        let s = sigma_stats(&w, 0.5, &d(1.0), 1e-6, &[(0.1, 0.1)], 2000, 11).unwrap();
        let e = &s.events[0];
        assert!(e.above > 3.0 * e.stderr_above && e.below > 3.0 * e.stderr_below, "{e:?}");
        assert_abs_diff_eq!(e.above + e.middle + e.below, s.total, epsilon = 1e-12);
    }

    #[test]
    fn weierstrass_maximum_at_zero() {
        // f(h) - f(0) = sum b^(-n alpha) (cos(b^n h) - 1) <= 0
        let w = Weierstrass::new(2.0, 0.5, 1e-10).unwrap();
        let s = sigma_stats(&w, 0.5, &d(0.0), 1e-6, &[(0.0, 0.1)], 2000, 11).unwrap();
        assert_eq!(s.events[0].above, 0.0);
        assert!(s.events[0].below > 0.0);
    }

    #[test]
    fn sigma_is_seeded() {
        let w = Weierstrass::new(2.0, 0.5, 1e-8).unwrap();
        let a = sigma_stats(&w, 0.5, &d(0.2), 1e-3, &[(0.2, 0.3)], 300, 5).unwrap();
        let b = sigma_stats(&w, 0.5, &d(0.2), 1e-3, &[(0.2, 0.3)], 300, 5).unwrap();
        assert_eq!(a.events[0].above, b.events[0].above);
    }

    #[test]
    fn zero_function_has_zero_gap() {
        let z = Affine::new(0.0, 0.0, 0.5);
        let g = theta_martingale_gap(&z, 0.5, 6, &[d(0.3), d(0.55)], &QuadConfig::default()).unwrap();
        assert_eq!(g.sup, 0.0);
    }

    #[test]
    fn linear_gap_closed_form() {
        // S_n = slope / (1 - alpha), Theta_eps = slope (1 - eps^(1-alpha)) / (1 - alpha)
        let alpha = 0.5;
        let id = Affine::new(0.0, 1.0, alpha);
        let s = theta_martingale(&id, alpha).unwrap();
        for i in DyadicInterval::level_iter(4) {
            assert_abs_diff_eq!(s.value(&i), 2.0, epsilon = 1e-8);
        }
        let g = theta_martingale_gap(&id, alpha, 8, &[d(0.25)], &QuadConfig::default()).unwrap();
        for (n, gap) in &g.levels {
            let want = (-(*n as f64) * (1.0 - alpha)).exp2() / (1.0 - alpha);
            assert_abs_diff_eq!(*gap, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn theta_martingale_cancels() {
        let w = Weierstrass::new(2.0, 0.5, 1e-8).unwrap();
        let s = theta_martingale(&w, 0.5).unwrap();
        for i in DyadicInterval::level_iter(3) {
            let mid = 0.5 * (s.value(&i.lower()) + s.value(&i.upper()));
            assert_abs_diff_eq!(s.value(&i), mid, epsilon = 1e-9);
        }
    }

    #[test]
    fn profile_matches_single_values() {
        let w = Weierstrass::new(2.0, 0.5, 1e-8).unwrap();
        let q = QuadConfig::default();
        let x = d(0.3);
        let eps = [0.01, 0.2, 1e-3];
        let p = theta_profile(&w, 0.5, &x, &eps, &q).unwrap();
        for (e, v) in eps.iter().zip(&p) {
            // panels differ only inside the last partial octave
            let one = theta(&w, 0.5, &x, *e, &q).unwrap();
            assert!((one.value - v.value).abs() <= one.error + v.error, "{one:?} {v:?}");
        }
    }

    #[test]
    fn trend_of_a_line() {
        let xs: Vec<f64> = (0..9).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + if (*x as i32) % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let t = trend_test(&xs, &ys);
        assert!(!t.flat && (t.slope - 2.0).abs() < 0.05);
        let flat: Vec<f64> = xs.iter().map(|x| if (*x as i32) % 2 == 0 { 1.0 } else { 1.2 }).collect();
        assert!(trend_test(&xs, &flat).flat);
    }
}
