//! The eight acceptance criteria, one line each. Runs without the test
//! harness so the lines always show: `cargo test --release --test acceptance`.

use std::time::Instant;

use dyadic_osc::cli::{feasible_instance, normalized_block};
use dyadic_osc::construction_blocks::{
    assemble_martingale, build_schedule, holder_check, special_registry, witness_coverage,
};
use dyadic_osc::divdiff::{theta_martingale_gap, theta_profile, QuadConfig};
use dyadic_osc::dyadic::{DyadicInterval, DyadicRational};
use dyadic_osc::entropy_dim::{
    besicovitch_count, dim_estimate, entropy_bound_exact, entropy_phi, lemma32_bound, lemma32_product_exact,
    verify_mass_lower_bound, MassReport,
};
use dyadic_osc::holder_functions::{
    martingale_function, random_dyadic, wavelet_oscillator, wavelet_schedule, witness_scales, Affine, BaseWavelet,
    Weierstrass,
};
use dyadic_osc::martingale::{
    binary_digit_martingale, discount_transform, from_function, sharpness_martingale, summation_by_parts_check,
    FnMartingale, Martingale, RandomGrowth, RandomSigns,
};
use num_bigint::BigUint;
use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

/// 2 - (3/4) log2 3 to 30 digits.
const PHI_HALF: f64 = 0.811_278_124_459_132_863_907_704_870_5;

fn criterion_1() -> Outcome {
    let near0 = entropy_phi(1e-12).unwrap();
    let near1 = entropy_phi(1.0 - 1e-12).unwrap();
    let half = entropy_phi(0.5).unwrap();
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let eta = (k as f64 + 0.5) / 1000.0;
        let (p, q) = ((1.0 + eta) / 2.0, (1.0 - eta) / 2.0);
        // -sum p log2 p and 1 - sum p log2(2p), with p = (1 +- eta)/2
        let shannon = -(p * p.log2() + q * q.log2());
        let shifted = 1.0 - (p * (1.0 + eta).log2() + q * (1.0 - eta).log2());
        let v = entropy_phi(eta).unwrap();
        worst = worst.max((v - shannon).abs()).max((v - shifted).abs());
    }
    let ok = (near0 - 1.0).abs() < 1e-9 && near1.abs() < 1e-9 && (half - PHI_HALF).abs() < 1e-12 && worst < 1e-12;
    (ok, format!("phi(0+)={near0:.12} phi(1-)={near1:.3e} |phi(1/2)-ref|={:.1e} grid={worst:.1e}", (half - PHI_HALF).abs()))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0usize;
    let mut min_margin = f64::INFINITY;
    for k in 0..100_000 {
        let eta = [0.1, 0.25, 0.5, 0.75, 0.9][k % 5];
        let xs = feasible_instance(&mut rng, eta, 50);
        let r = lemma32_bound(&xs, eta).unwrap();
        if r.holds != Some(true) {
            bad += 1;
        }
        min_margin = min_margin.min(r.margin_log2());
    }
    let half = BigRational::new(1.into(), 2.into());
    let one = BigRational::from_integer(1.into());
    let xs = [one.clone(), one.clone(), one.clone(), -one];
    let product = lemma32_product_exact(&xs, &half);
    let bound = entropy_bound_exact(4, &half).unwrap();
    let want = BigRational::new(27.into(), 256.into());
    let ok = bad == 0 && product == want && bound == want;
    (ok, format!("{bad} violations in 1e5, min margin {min_margin:.2e}, extremal product {product} = bound {bound}"))
}

fn mass_ok(r: &MassReport) -> bool {
    r.failures == 0 && r.total_mass_is_one && r.violation.is_none() && r.worst_margin >= -1e-9
}

fn criterion_3() -> Outcome {
    let depth = 16;
    let mut ok = true;
    let mut notes = Vec::new();
    let block = normalized_block(0.5, depth).unwrap();
    for eta in [0.1, 0.25, 0.5] {
        let b = verify_mass_lower_bound(binary_digit_martingale(), eta, depth).unwrap();
        let k = verify_mass_lower_bound(&block, eta, depth).unwrap();
        ok &= mass_ok(&b) && mass_ok(&k);
        notes.push(format!("eta={eta}: binary {} block {}", b.members, k.members));
    }
    // the normalized block martingale must contribute more than the root
    let block_members = verify_mass_lower_bound(&block, 0.1, depth).unwrap().members;
    ok &= block_members > 1;
    let mut random_members = 0;
    for seed in 0..100 {
        let r = verify_mass_lower_bound(RandomSigns { seed }, 0.5, depth).unwrap();
        ok &= mass_ok(&r);
        random_members += r.members;
    }
    notes.push(format!("100 random: {random_members} members"));
    (ok, notes.join("; "))
}

fn criterion_4() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for eta in [0.25, 0.5, 0.75] {
        let levels = [20u64, 100, 500, 2000];
        let counts: Vec<(u64, BigUint)> = levels.iter().map(|&n| (n, besicovitch_count(n, eta).unwrap())).collect();
        let est = dim_estimate(&counts);
        let phi = entropy_phi(eta).unwrap();
        let increasing = est.windows(2).all(|w| w[0] < w[1]);
        let gap = phi - est[3];
        // gap * N / log2 N stays bounded: compare N = 2000 against N = 100
        let r100 = (phi - est[1]) * 100.0 / 100f64.log2();
        let r2000 = gap * 2000.0 / 2000f64.log2();
        let brute = (0u64..1 << 20).filter(|i| 2.0 * i.count_ones() as f64 - 20.0 >= eta * 20.0).count();
        let enum_ok = counts[0].1 == BigUint::from(brute);
        ok &= increasing && gap.abs() < 0.02 && gap > 0.0 && r2000 <= 2.0 * r100 && enum_ok;
        notes.push(format!("eta={eta}: gap@2000={gap:.4} ratio {r100:.2}->{r2000:.2}"));
    }
    (ok, notes.join("; "))
}

fn criterion_5() -> Outcome {
    let s = build_schedule(0.5, 2, 4000).unwrap();
    let check = s.verify();
    let growth = assemble_martingale(&s).growth_report();
    let reg: Vec<_> = (0..2).map(|j| special_registry(&s, j).unwrap()).collect();
    let holder = holder_check(&s, 100_000, 5).unwrap();
    let cov = witness_coverage(&s, 1000, 6, &[0, 1], 0.05 - 1e-3).unwrap();
    let ok = check.ok()
        && growth.ok
        && reg.iter().all(|r| r.ok)
        && holder.ok
        && cov.any_fraction >= 0.99;
    (
        ok,
        format!(
            "levels {} growth {:.3}<={:.3}, holder worst {:.3}<=C={:.2}, witnesses {:.1}% (left neighbour only {:.1}%)",
            growth.levels,
            growth.worst_growth,
            growth.bound,
            holder.worst_quotient,
            holder.constant,
            100.0 * cov.any_fraction,
            100.0 * cov.left_fraction
        ),
    )
}

fn criterion_6() -> Outcome {
    let phi = BaseWavelet::standard();
    let moment = (0..=2).map(|q| phi.moment_by_quadrature(q).abs()).fold(0.0, f64::max);
    let sched = wavelet_schedule(0.5, 1.0 / 200.0, 4).unwrap();
    let clauses = sched.stages.iter().all(|st| st.clause_one <= sched.epsilon && st.clause_two <= sched.epsilon);
    let k = sched.k.clone();
    let f = wavelet_oscillator(sched);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_flat = 0.0f64;
    let mut worst_ratio = f64::INFINITY;
    for _ in 0..100 {
        let x = random_dyadic(&mut rng, 300);
        for m in 1..=3 {
            let w = witness_scales(&f, &x, m).unwrap();
            worst_flat = worst_flat.max(w.slope_h_prime);
            worst_ratio = worst_ratio.min(w.slope_h / w.scale);
        }
    }
    let ok = moment < 1e-10 && clauses && worst_flat <= 1.0 + 1e-3 && worst_ratio >= 0.4;
    (ok, format!("k={k:?} moments {moment:.1e}, max |slope h'| {worst_flat:.4}, min slope(h)/scale {worst_ratio:.3}"))
}

fn criterion_7() -> Outcome {
    // from_function(martingale_function(S)) = S on the depth-12 grid, exactly
    let signs = FnMartingale::new(|i: &DyadicInterval| {
        let r = RandomSigns { seed: 17 };
        r.value(i) - r.value(&DyadicInterval::unit())
    });
    let f = martingale_function(binary_digit_martingale(), 0.5).unwrap().with_depth(12);
    let g = martingale_function(&signs, 0.3).unwrap().with_depth(12);
    let (bf, bg) = (from_function(&f, 12), from_function(&g, 12));
    let mut identity = true;
    for level in 0..=12 {
        for i in DyadicInterval::level_iter(level) {
            identity &= bf.exact(&i) == binary_digit_martingale().exact(&i);
            identity &= bg.value(&i) == signs.value(&i);
        }
    }
    let mut sbp = 0.0f64;
    for seed in 0..100 {
        let beta = 0.05 + 0.9 * (seed as f64 / 99.0);
        sbp = sbp.max(summation_by_parts_check(&RandomGrowth { seed, beta, scale: 1.0 }, beta, 12));
    }
    let back = discount_transform(sharpness_martingale(0.5).unwrap());
    let round = (0..=12).all(|l| DyadicInterval::level_iter(l).all(|i| back.exact(&i) == binary_digit_martingale().exact(&i)));
    (identity && sbp <= 1e-10 && round, format!("grid identity {identity}, summation-by-parts {sbp:.1e}, sharpness round trip {round}"))
}

/// Upper bound for the Hölder constant of the Weierstrass series on `(0,1]`
/// from `|cos(u+v) - cos u| <= min(2, |v|)`, bracketing `h` on a fine grid.
fn weierstrass_norm(b: f64, alpha: f64) -> f64 {
    let u = |h: f64| (0..400).map(|n| b.powf(-(n as f64) * alpha) * (2.0f64).min(b.powi(n) * h)).sum::<f64>();
    let steps = 64 * 60;
    (0..steps)
        .map(|j| {
            let hi = (-(j as f64) / 64.0).exp2();
            let lo = (-(j as f64 + 1.0) / 64.0).exp2();
            u(hi) / lo.powf(alpha)
        })
        .fold(0.0, f64::max)
}

fn criterion_8() -> Outcome {
    let quad = QuadConfig::default();
    let zero = DyadicRational::zero();
    let mut linear = 0.0f64;
    for alpha in [0.3, 0.5, 0.7] {
        let id = Affine::new(0.0, 1.0, alpha);
        let eps = [1e-2, 1e-4, 1e-6];
        for (e, t) in eps.iter().zip(theta_profile(&id, alpha, &zero, &eps, &quad).unwrap()) {
            let want = (1.0 - e.powf(1.0 - alpha)) / (1.0 - alpha);
            linear = linear.max((t.value - want).abs());
        }
    }
    let mut bound_ok = true;
    let mut worst = 0.0f64;
    for alpha in [0.3, 0.5, 0.7] {
        let w = Weierstrass::new(2.0, alpha, 1e-10).unwrap();
        let norm = weierstrass_norm(2.0, alpha);
        let id = Affine::new(0.0, 1.0, alpha);
        for x in [0.0, 0.3, 1.0, 2.5] {
            let xd = DyadicRational::from_f64(x).unwrap();
            let eps = [1e-2, 1e-4, 1e-6];
            let tw = theta_profile(&w, alpha, &xd, &eps, &quad).unwrap();
            let ti = theta_profile(&id, alpha, &xd, &eps, &quad).unwrap();
            for ((e, a), c) in eps.iter().zip(tw).zip(ti) {
                let l = (1.0 / e).ln();
                worst = worst.max(a.value.abs() / (norm * l)).max(c.value.abs() / l);
                bound_ok &= a.value.abs() <= norm * l + a.error && c.value.abs() <= l + c.error;
            }
        }
    }
    let w = Weierstrass::new(2.0, 0.5, 1e-10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs: Vec<DyadicRational> = (0..64).map(|_| random_dyadic(&mut rng, 60)).collect();
    let gq = QuadConfig { max_panels_per_octave: 128, ..QuadConfig::default() };
    let g = theta_martingale_gap(&w, 0.5, 14, &xs, &gq).unwrap();
    let trend = g.mean_trend(6, 14);
    let ok = linear < 1e-8 && bound_ok && trend.flat;
    (
        ok,
        format!(
            "linear err {linear:.1e}, max |theta|/(norm log) {worst:.3}, gap sup {:.2}, mean-gap slope {:.3} t={:.2} (crit {:.2})",
            g.sup, trend.slope, trend.t, trend.critical
        ),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = Vec::new();
    for (n, run) in criteria {
        let t = Instant::now();
        let (ok, detail) = run();
        let secs = t.elapsed().as_secs_f64();
        println!("criterion {n}: {} ({secs:.1}s) {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
